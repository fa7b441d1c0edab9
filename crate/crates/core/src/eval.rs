//! Batched evaluation trials and the summary metrics reported for them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

use crate::character::StepConfig;
use crate::control::Controller;
use crate::error::ConfigError;
use crate::tasks::{EnvResources, TaskConfig, TaskEnv, TaskKind, Termination};
use crate::trainer::seed_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub success: bool,
    /// Seconds from episode start to the end of the trial.
    pub time_s: f64,
    /// Distance to the completion target when the trial ended, meters.
    pub error_m: f64,
    pub termination: Termination,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub trials: usize,
    /// Percent.
    pub success_rate: f64,
    /// Mean over successful trials, seconds.
    pub execution_time: f64,
    /// Mean over successful trials, millimeters.
    pub error_mm: f64,
}

/// Aggregates trial rows. Time and error are averaged over successes only
/// and are zero when there are none.
pub fn summarize(results: &[TrialResult]) -> MetricsSummary {
    let ok: Vec<&TrialResult> = results.iter().filter(|r| r.success).collect();
    let n = ok.len() as f64;
    let mean = |f: fn(&TrialResult) -> f64| {
        if ok.is_empty() {
            0.0
        } else {
            ok.iter().map(|r| f(r)).sum::<f64>() / n
        }
    };
    MetricsSummary {
        trials: results.len(),
        success_rate: if results.is_empty() {
            0.0
        } else {
            100.0 * n / results.len() as f64
        },
        execution_time: mean(|r| r.time_s),
        error_mm: mean(|r| r.error_m * 1000.0),
    }
}

/// Runs `trials` independent episodes of `kind` with `controller`. A trial
/// ends at the first termination (IET trigger, timeout, fall or deviation).
pub fn run_trials(
    kind: TaskKind,
    controller: &dyn Controller,
    task_cfg: &TaskConfig,
    resources: &EnvResources,
    trials: usize,
    seed: u64,
) -> Result<Vec<TrialResult>, ConfigError> {
    let step_cfg = StepConfig::default();
    // fail fast on a bad configuration before spawning work
    TaskEnv::new(kind, *task_cfg, step_cfg, resources.clone(), seed, true)?;
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut env = TaskEnv::new(
                kind,
                *task_cfg,
                step_cfg,
                resources.clone(),
                seed_for(seed, i, 7),
                true,
            )?;
            loop {
                let f = env.features();
                let a = controller.act(&env.control_input(&f));
                let o = env.step(&a);
                if o.termination.is_done() {
                    return Ok(TrialResult {
                        trial: i,
                        success: o.success,
                        time_s: env.time(),
                        error_m: o.error,
                        termination: o.termination,
                    });
                }
            }
        })
        .collect()
}

pub fn write_trials_csv<W: Write>(results: &[TrialResult], w: W) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    for r in results {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_trials_csv<R: Read>(r: R) -> Result<Vec<TrialResult>, csv::Error> {
    csv::Reader::from_reader(r).deserialize().collect()
}
