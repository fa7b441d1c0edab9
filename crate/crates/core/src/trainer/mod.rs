//! PPO training with a mixed task and style reward. Each iteration collects a
//! `num_envs × horizon` rollout, computes advantages, updates policy and
//! value networks, then updates the motion discriminator.

pub mod amp;
pub mod gae;
pub mod ppo;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use crate::character::{Action, StepConfig, ACTION_DIM};
use crate::control::{ControlInput, Controller};
use crate::error::{ConfigError, NetError, TrainError};
use crate::net::{clip_grad_norm, Adam, GaussianPolicy, Mlp, ObsNormalizer};
use crate::scheduler::StyleScorer;
use crate::tasks::{EnvResources, TaskConfig, TaskEnv, TaskKind};

pub use amp::{discriminator_loss_grad, style_reward, DiscLoss, ReferenceMotionSource};
pub use gae::compute_gae;
pub use ppo::{ppo_update, PpoBatch, PpoLosses, PpoParams};

/// Per-transition training reward `w_g · r_g + w_s · r_s`.
pub fn mixed_reward(task: f64, style: f64, task_weight: f64, style_weight: f64) -> f64 {
    task_weight * task + style_weight * style
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub num_envs: usize,
    pub horizon: usize,
    pub ppo_batch: usize,
    pub amp_batch: usize,
    pub lr: f64,
    pub disc_lr: f64,
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub task_weight: f64,
    pub style_weight: f64,
    pub epochs: usize,
    pub action_std: f64,
    pub policy_hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub max_grad_norm: f64,
    pub gp_weight: f64,
    /// Scripted episodes recorded for the reference-motion library.
    pub reference_episodes: usize,
    pub reference_noise: f64,
    pub iterations: usize,
    /// Checkpoint period in iterations; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    /// Stop early once the success rate over the last `success_window`
    /// finished episodes reaches this value.
    pub target_success: Option<f64>,
    pub success_window: usize,
}

impl Default for TrainerConfig {
    /// 256 environments with the full-size networks and conservative
    /// optimizer settings.
    fn default() -> Self {
        Self {
            num_envs: 256,
            horizon: 32,
            ppo_batch: 4096,
            amp_batch: 1024,
            lr: 5e-5,
            disc_lr: 5e-5,
            clip: 0.2,
            gamma: 0.99,
            lambda: 0.95,
            task_weight: 0.5,
            style_weight: 0.5,
            epochs: 2,
            action_std: 0.055,
            policy_hidden: vec![1024, 512],
            value_hidden: vec![1024, 512],
            disc_hidden: vec![1024, 512],
            max_grad_norm: 1.0,
            gp_weight: 5.0,
            reference_episodes: 200,
            reference_noise: 0.05,
            iterations: 2000,
            checkpoint_every: 100,
            target_success: None,
            success_window: 256,
        }
    }
}

impl TrainerConfig {
    /// Full-scale settings (6144 environments).
    pub fn full() -> Self {
        Self {
            num_envs: 6144,
            ppo_batch: 16384,
            amp_batch: 4096,
            ..Self::default()
        }
    }

    /// Small networks and a faster optimizer for single-core machines.
    pub fn desk() -> Self {
        Self {
            lr: 1e-3,
            disc_lr: 5e-4,
            ppo_batch: 1024,
            amp_batch: 512,
            action_std: 0.1,
            policy_hidden: vec![64, 64],
            value_hidden: vec![64, 64],
            disc_hidden: vec![64, 64],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if self.num_envs == 0
            || self.horizon == 0
            || self.ppo_batch == 0
            || self.amp_batch == 0
            || self.epochs == 0
        {
            return bad("env count, horizon, batch sizes and epochs must be positive");
        }
        if !(self.lr > 0.0 && self.disc_lr > 0.0 && self.action_std > 0.0) {
            return bad("learning rates and action std must be positive");
        }
        if self.task_weight < 0.0 || self.style_weight < 0.0 {
            return bad("reward weights must be non-negative");
        }
        Ok(())
    }

    fn ppo_params(&self) -> PpoParams {
        PpoParams {
            clip: self.clip,
            epochs: self.epochs,
            minibatch: self.ppo_batch,
            max_grad_norm: self.max_grad_norm,
        }
    }
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut v = vec![input];
    v.extend_from_slice(hidden);
    v.push(output);
    v
}

/// Everything needed to run a trained skill.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPolicy {
    pub kind: TaskKind,
    pub obs_norm: ObsNormalizer,
    pub policy: GaussianPolicy,
    pub value: Mlp,
    pub disc: Mlp,
    pub disc_norm: ObsNormalizer,
}

impl TrainedPolicy {
    /// Deterministic action means for raw feature rows.
    pub fn mean_actions(&self, raw: ArrayView2<'_, f64>) -> Array2<f64> {
        self.policy
            .mean
            .forward(self.obs_norm.normalize(raw).view())
    }

    pub fn disc_outputs(&self, raw: ArrayView2<'_, f64>) -> Array1<f64> {
        self.disc
            .forward(self.disc_norm.normalize(raw).view())
            .index_axis_move(Axis(1), 0)
    }
}

impl Controller for TrainedPolicy {
    fn act_batch(&self, inputs: &[ControlInput<'_>]) -> Vec<Action> {
        if inputs.is_empty() {
            return Vec::new();
        }
        let dim = self.obs_norm.dim();
        let mut x = Array2::zeros((inputs.len(), dim));
        for (mut row, inp) in x.rows_mut().into_iter().zip(inputs) {
            self.obs_norm
                .normalize_into(inp.features, row.as_slice_mut().expect("standard layout"));
        }
        let mu = self.policy.mean.forward(x.view());
        mu.rows()
            .into_iter()
            .map(|r| Action::from_slice(r.as_slice().expect("row")))
            .collect()
    }
}

impl StyleScorer for TrainedPolicy {
    fn style_reward(&self, disc_obs: &[f64]) -> f64 {
        let mut x = vec![0.0; disc_obs.len()];
        self.disc_norm.normalize_into(disc_obs, &mut x);
        style_reward(self.disc.forward_one(&x)[0])
    }
}

pub const CHECKPOINT_FORMAT: &str = "hsi-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub iteration: usize,
    /// Seed the run was started with.
    pub seed: u64,
    pub policy: TrainedPolicy,
    pub optimizers: OptimizerState,
}

/// Adam moments for the three networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub policy: Adam,
    pub value: Adam,
    pub disc: Adam,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NetError> {
        let s = serde_json::to_string(self)?;
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NetError> {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if value.get("format").and_then(|v| v.as_str()) != Some(CHECKPOINT_FORMAT)
            || version != CHECKPOINT_VERSION
        {
            return Err(NetError::Version(version));
        }
        Ok(serde_json::from_value(value)?)
    }
}

/// One metrics row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iter: usize,
    pub mean_task_reward: f64,
    pub mean_style_reward: f64,
    pub success_rate: f64,
    pub mean_ep_len: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub disc_loss: f64,
}

pub fn write_metrics_csv<W: Write>(rows: &[IterationMetrics], w: W) -> Result<(), TrainError> {
    let mut wr = csv::WriterBuilder::new().from_writer(w);
    for r in rows {
        wr.serialize(r)
            .map_err(|e| TrainError::Io(std::io::Error::other(e)))?;
    }
    wr.flush()?;
    Ok(())
}

/// Rollout buffers, row `t · num_envs + e`.
struct Rollout {
    obs: Array2<f64>,
    raw: Array2<f64>,
    actions: Array2<f64>,
    log_probs: Vec<f64>,
    values: Vec<f64>,
    task_rewards: Vec<f64>,
    disc_obs: Array2<f64>,
    dones: Vec<bool>,
    /// (row, raw terminal features) for truncated episodes.
    truncated: Vec<(usize, Vec<f64>)>,
    bootstrap_raw: Array2<f64>,
}

pub struct Trainer {
    kind: TaskKind,
    cfg: TrainerConfig,
    envs: Vec<TaskEnv>,
    env_rngs: Vec<ChaCha8Rng>,
    rng: ChaCha8Rng,
    skill: TrainedPolicy,
    policy_opt: Adam,
    value_opt: Adam,
    disc_opt: Adam,
    reference: ReferenceMotionSource,
    iteration: usize,
    seed: u64,
    recent: VecDeque<bool>,
    recent_len: VecDeque<u32>,
    last_success: f64,
    last_len: f64,
}

impl std::fmt::Debug for Trainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer")
            .field("kind", &self.kind)
            .field("iteration", &self.iteration)
            .finish()
    }
}

impl Trainer {
    pub fn new(
        kind: TaskKind,
        cfg: TrainerConfig,
        task_cfg: TaskConfig,
        resources: EnvResources,
        seed: u64,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        task_cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let step_cfg = StepConfig::default();
        let envs = (0..cfg.num_envs)
            .map(|i| {
                TaskEnv::new(
                    kind,
                    task_cfg,
                    step_cfg,
                    resources.clone(),
                    seed_for(seed, i, 1),
                    true,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let env_rngs = (0..cfg.num_envs)
            .map(|i| ChaCha8Rng::seed_from_u64(seed_for(seed, i, 2)))
            .collect();
        let reference = ReferenceMotionSource::generate(
            kind,
            &task_cfg,
            &resources,
            cfg.reference_episodes,
            cfg.reference_noise,
            seed_for(seed, 0, 3),
        )?;
        let feat = kind.feature_dim();
        let ddim = kind.disc_dim();
        let policy = GaussianPolicy::new(
            &layer_sizes(feat, &cfg.policy_hidden, ACTION_DIM),
            cfg.action_std,
            &mut rng,
        );
        let value = Mlp::new(&layer_sizes(feat, &cfg.value_hidden, 1), 1.0, &mut rng);
        let disc = Mlp::new(&layer_sizes(ddim, &cfg.disc_hidden, 1), 1.0, &mut rng);
        let mut disc_norm = ObsNormalizer::new(ddim);
        disc_norm.update(reference.transitions());
        let mut obs_norm = ObsNormalizer::new(feat);
        let initial: Vec<f64> = envs.iter().flat_map(|e| e.features()).collect();
        obs_norm.update(ArrayView2::from_shape((envs.len(), feat), &initial).expect("rectangular"));
        Ok(Self {
            kind,
            policy_opt: Adam::new(policy.mean.num_params(), cfg.lr),
            value_opt: Adam::new(value.num_params(), cfg.lr),
            disc_opt: Adam::new(disc.num_params(), cfg.disc_lr),
            skill: TrainedPolicy {
                kind,
                obs_norm,
                policy,
                value,
                disc,
                disc_norm,
            },
            cfg,
            envs,
            env_rngs,
            rng,
            reference,
            iteration: 0,
            seed,
            recent: VecDeque::new(),
            recent_len: VecDeque::new(),
            last_success: 0.0,
            last_len: 0.0,
        })
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn skill(&self) -> &TrainedPolicy {
        &self.skill
    }

    pub fn into_skill(self) -> TrainedPolicy {
        self.skill
    }

    /// Success rate over the most recent finished episodes.
    pub fn recent_success(&self) -> f64 {
        if self.recent.is_empty() {
            0.0
        } else {
            self.recent.iter().filter(|&&s| s).count() as f64 / self.recent.len() as f64
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            iteration: self.iteration,
            seed: self.seed,
            policy: self.skill.clone(),
            optimizers: OptimizerState {
                policy: self.policy_opt.clone(),
                value: self.value_opt.clone(),
                disc: self.disc_opt.clone(),
            },
        }
    }

    fn values_of(&self, normalized: ArrayView2<'_, f64>) -> Vec<f64> {
        let scale = 1.0 / (1.0 - self.cfg.gamma).max(1e-6);
        self.skill
            .value
            .forward(normalized)
            .iter()
            .map(|v| v * scale)
            .collect()
    }

    fn collect(&mut self) -> (Rollout, Vec<(bool, u32)>) {
        let n = self.envs.len();
        let t_max = self.cfg.horizon;
        let feat = self.kind.feature_dim();
        let ddim = self.kind.disc_dim();
        let rows = n * t_max;
        let mut ro = Rollout {
            obs: Array2::zeros((rows, feat)),
            raw: Array2::zeros((rows, feat)),
            actions: Array2::zeros((rows, ACTION_DIM)),
            log_probs: vec![0.0; rows],
            values: vec![0.0; rows],
            task_rewards: vec![0.0; rows],
            disc_obs: Array2::zeros((rows, ddim)),
            dones: vec![false; rows],
            truncated: Vec::new(),
            bootstrap_raw: Array2::zeros((n, feat)),
        };
        let mut finished = Vec::new();
        for t in 0..t_max {
            let base = t * n;
            let raw: Vec<Vec<f64>> = self.envs.par_iter().map(|e| e.features()).collect();
            for (e, f) in raw.iter().enumerate() {
                ro.raw
                    .row_mut(base + e)
                    .assign(&ArrayView2::from_shape((1, feat), f).expect("row").row(0));
            }
            let block = ro.raw.slice(ndarray::s![base..base + n, ..]).to_owned();
            let norm = self.skill.obs_norm.normalize(block.view());
            ro.obs
                .slice_mut(ndarray::s![base..base + n, ..])
                .assign(&norm);
            let mean = self.skill.policy.mean.forward(norm.view());
            let values = self.values_of(norm.view());
            let policy = &self.skill.policy;
            let sampled: Vec<(Vec<f64>, f64)> = self
                .env_rngs
                .iter_mut()
                .enumerate()
                .map(|(e, rng)| {
                    let mu = mean.row(e);
                    let mu = mu.as_slice().expect("row");
                    let a = policy.sample(mu, rng);
                    let lp = policy.log_prob(mu, &a);
                    (a, lp)
                })
                .collect();
            let outcomes: Vec<_> = self
                .envs
                .par_iter_mut()
                .zip(sampled.par_iter())
                .map(|(env, (a, _))| {
                    let o = env.step(&Action::from_slice(a));
                    let terminal = if o.termination.is_truncation() {
                        Some(env.features())
                    } else {
                        None
                    };
                    if o.termination.is_done() {
                        env.reset();
                    }
                    (o, terminal)
                })
                .collect();
            for (e, ((o, terminal), (a, lp))) in outcomes.into_iter().zip(sampled).enumerate() {
                let row = base + e;
                ro.actions.row_mut(row).assign(&Array1::from(a));
                ro.log_probs[row] = lp;
                ro.values[row] = values[e];
                ro.task_rewards[row] = o.task_reward;
                ro.disc_obs.row_mut(row).assign(&Array1::from(o.disc_obs));
                ro.dones[row] = o.termination.is_done();
                if let Some(f) = terminal {
                    ro.truncated.push((row, f));
                }
                if o.termination.is_done() {
                    finished.push((o.success, o.episode_steps));
                }
            }
        }
        for (e, env) in self.envs.iter().enumerate() {
            ro.bootstrap_raw
                .row_mut(e)
                .assign(&Array1::from(env.features()));
        }
        (ro, finished)
    }

    /// Runs one collect / advantage / update cycle.
    pub fn iterate(&mut self) -> IterationMetrics {
        let n = self.envs.len();
        let t_max = self.cfg.horizon;
        let gamma = self.cfg.gamma;
        let (ro, finished) = self.collect();

        let style: Vec<f64> = self
            .skill
            .disc_outputs(ro.disc_obs.view())
            .iter()
            .map(|&d| style_reward(d))
            .collect();
        let mut rewards: Vec<f64> = ro
            .task_rewards
            .iter()
            .zip(&style)
            .map(|(&g, &s)| mixed_reward(g, s, self.cfg.task_weight, self.cfg.style_weight))
            .collect();
        if !ro.truncated.is_empty() {
            let feat = self.kind.feature_dim();
            let flat: Vec<f64> = ro
                .truncated
                .iter()
                .flat_map(|(_, f)| f.iter().copied())
                .collect();
            let raw =
                Array2::from_shape_vec((ro.truncated.len(), feat), flat).expect("rectangular");
            let v = self.values_of(self.skill.obs_norm.normalize(raw.view()).view());
            for ((row, _), v) in ro.truncated.iter().zip(v) {
                rewards[*row] += gamma * v;
            }
        }
        let boot = self.values_of(
            self.skill
                .obs_norm
                .normalize(ro.bootstrap_raw.view())
                .view(),
        );
        let shape = (t_max, n);
        let (adv, ret) = compute_gae(
            ArrayView2::from_shape(shape, &rewards).expect("shape"),
            ArrayView2::from_shape(shape, &ro.values).expect("shape"),
            ArrayView2::from_shape(shape, &ro.dones).expect("shape"),
            ndarray::ArrayView1::from(&boot),
            gamma,
            self.cfg.lambda,
        );
        let mut adv = adv.into_raw_vec_and_offset().0;
        ppo::normalize_advantages(&mut adv);
        let scale = 1.0 - gamma;
        let targets: Vec<f64> = ret.iter().map(|r| r * scale).collect();
        let batch = PpoBatch {
            obs: ro.obs.view(),
            actions: ro.actions.view(),
            log_probs: &ro.log_probs,
            advantages: &adv,
            returns: &targets,
        };
        let losses = ppo_update(
            &mut self.skill.policy,
            &mut self.skill.value,
            &mut self.policy_opt,
            &mut self.value_opt,
            &batch,
            &self.cfg.ppo_params(),
            &mut self.rng,
        );
        let disc_loss = self.update_discriminator(&ro.disc_obs);
        self.skill.obs_norm.update(ro.raw.view());

        for (s, len) in finished.iter().copied() {
            self.recent.push_back(s);
            self.recent_len.push_back(len);
            if self.recent.len() > self.cfg.success_window {
                self.recent.pop_front();
                self.recent_len.pop_front();
            }
        }
        if !finished.is_empty() {
            self.last_success =
                finished.iter().filter(|f| f.0).count() as f64 / finished.len() as f64;
            self.last_len =
                finished.iter().map(|f| f.1 as f64).sum::<f64>() / finished.len() as f64;
        }
        let rows = ro.task_rewards.len() as f64;
        let m = IterationMetrics {
            iter: self.iteration,
            mean_task_reward: ro.task_rewards.iter().sum::<f64>() / rows,
            mean_style_reward: style.iter().sum::<f64>() / rows,
            success_rate: self.last_success,
            mean_ep_len: self.last_len,
            policy_loss: losses.policy_loss,
            value_loss: losses.value_loss,
            disc_loss,
        };
        self.iteration += 1;
        m
    }

    fn update_discriminator(&mut self, agent_raw: &Array2<f64>) -> f64 {
        let agent = self.skill.disc_norm.normalize(agent_raw.view());
        let n = agent.nrows();
        let mb = self.cfg.amp_batch.clamp(1, n.max(1));
        let mut order: Vec<usize> = (0..n).collect();
        let mut grad = vec![0.0; self.skill.disc.num_params()];
        let mut total = 0.0;
        let mut count = 0.0;
        for _ in 0..self.cfg.epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(mb) {
                let a = agent.select(Axis(0), chunk);
                let r_raw = self.reference.sample(&mut self.rng, chunk.len());
                let r = self.skill.disc_norm.normalize(r_raw.view());
                grad.iter_mut().for_each(|g| *g = 0.0);
                let l = discriminator_loss_grad(
                    &self.skill.disc,
                    r.view(),
                    a.view(),
                    self.cfg.gp_weight,
                    &mut grad,
                );
                if !l.total().is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    log::warn!("non-finite discriminator loss; step skipped");
                    continue;
                }
                clip_grad_norm(&mut grad, self.cfg.max_grad_norm);
                self.disc_opt.step(self.skill.disc.params_mut(), &grad);
                total += l.total();
                count += 1.0;
            }
        }
        if count > 0.0 {
            total / count
        } else {
            f64::NAN
        }
    }

    /// Runs up to `iterations` iterations (or until the early-stop target is
    /// met), writing `metrics.csv` and checkpoints under `out` when given.
    pub fn train(
        &mut self,
        iterations: usize,
        out: Option<&Path>,
    ) -> Result<Vec<IterationMetrics>, TrainError> {
        if let Some(dir) = out {
            std::fs::create_dir_all(dir)?;
        }
        let mut rows = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            let m = self.iterate();
            log::info!(
                "{} iter {} task {:.3} style {:.3} success {:.3}",
                self.kind,
                m.iter,
                m.mean_task_reward,
                m.mean_style_reward,
                m.success_rate
            );
            rows.push(m);
            if let Some(dir) = out {
                let every = self.cfg.checkpoint_every;
                if every > 0 && self.iteration.is_multiple_of(every) {
                    self.checkpoint()
                        .save(dir.join(format!("ckpt_{:05}.json", self.iteration)))?;
                }
            }
            if let Some(target) = self.cfg.target_success {
                if self.recent.len() >= self.cfg.success_window && self.recent_success() >= target {
                    break;
                }
            }
        }
        if let Some(dir) = out {
            let f = std::fs::File::create(dir.join("metrics.csv"))?;
            write_metrics_csv(&rows, std::io::BufWriter::new(f))?;
            self.checkpoint().save(dir.join("final.json"))?;
        }
        Ok(rows)
    }
}

/// Independent stream per (seed, index, purpose).
pub fn seed_for(seed: u64, index: usize, purpose: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0xA076_1D64_78BD_642F));
    rng.set_stream(index as u64);
    rng.random()
}
