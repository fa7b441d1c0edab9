//! Experiment configuration: one TOML (or JSON) file, a trainer preset and
//! `--set key=value` overrides, merged in that order.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hsi_core::scheduler::SchedulerConfig;
use hsi_core::tasks::TaskConfig;
use hsi_core::trainer::TrainerConfig;

use crate::CliError;

/// Base values for the `[trainer]` section.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Full-size networks and conservative learning rates, 256 environments.
    #[default]
    Default,
    /// Full-size networks with 6144 environments.
    Full,
    /// Small networks and larger learning rates for a single CPU.
    Desk,
}

impl Preset {
    pub fn trainer(self) -> TrainerConfig {
        match self {
            Self::Default => TrainerConfig::default(),
            Self::Full => TrainerConfig::full(),
            Self::Desk => TrainerConfig::desk(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub scene: Option<PathBuf>,
    pub plan: Option<PathBuf>,
    pub pose_db: Option<PathBuf>,
    /// Policy per task name, e.g. `sit = "runs/sit/final.json"`. The value
    /// `"oracle"` selects the scripted controller.
    pub checkpoints: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub preset: Preset,
    /// Seed of the procedural object catalog. Kept apart from `seed` so the
    /// train/test split is the same across training seeds.
    pub catalog_seed: u64,
    pub eval_trials: usize,
    pub plan_trials: usize,
    /// Start position jitter for scene trials, meters.
    pub start_jitter: f64,
    pub task: TaskConfig,
    pub trainer: TrainerConfig,
    pub scheduler: SchedulerConfig,
    pub paths: PathsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out: None,
            preset: Preset::Default,
            catalog_seed: 0,
            eval_trials: 4096,
            plan_trials: 128,
            start_jitter: 0.3,
            task: TaskConfig::default(),
            trainer: TrainerConfig::default(),
            scheduler: SchedulerConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

/// Reads a config file into a generic table. `.json` files are parsed as
/// JSON, everything else as TOML.
pub fn read_table(path: &Path) -> Result<toml::Table, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
    {
        let json: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::Table::try_from(json)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    } else {
        text.parse::<toml::Table>()
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Parses the right-hand side of `--set`. Anything that is not a TOML
/// literal is taken as a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Applies one `a.b.c=value` override.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects key=value, got `{assignment}`")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{p}` in `{key}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Recursively overlays `top` onto `base`.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl ExperimentConfig {
    /// Builds the effective configuration. Relative paths inside the file
    /// resolve against the file's directory; `seed` must come from the file
    /// or `seed_flag`.
    pub fn load(
        file: Option<&Path>,
        sets: &[String],
        seed_flag: Option<u64>,
    ) -> Result<Self, CliError> {
        let mut user = match file {
            Some(p) => read_table(p)?,
            None => toml::Table::new(),
        };
        for s in sets {
            apply_override(&mut user, s)?;
        }
        let preset: Preset = match user.get("preset") {
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e| CliError::Config(format!("preset: {e}")))?,
            None => Preset::Default,
        };
        let base = ExperimentConfig {
            preset,
            trainer: preset.trainer(),
            ..Default::default()
        };
        let mut table =
            toml::Table::try_from(&base).map_err(|e| CliError::Config(e.to_string()))?;
        merge(&mut table, user);
        let mut cfg: ExperimentConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        if seed_flag.is_some() {
            cfg.seed = seed_flag;
        }
        if cfg.seed.is_none() {
            return Err(CliError::Config(
                "a seed is required (--seed or `seed` in the config)".into(),
            ));
        }
        if let Some(dir) = file.and_then(Path::parent) {
            cfg.resolve_paths(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && p.as_os_str() != "oracle" {
                *p = dir.join(&*p);
            }
        };
        for p in [
            &mut self.paths.scene,
            &mut self.paths.plan,
            &mut self.paths.pose_db,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        for p in self.paths.checkpoints.values_mut() {
            fix(p);
        }
    }

    /// Checks numeric sections and that every referenced file exists.
    pub fn validate(&self) -> Result<(), CliError> {
        self.task
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.trainer
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.start_jitter >= 0.0 && self.start_jitter.is_finite()) {
            return Err(CliError::Config(
                "start_jitter must be a non-negative number".into(),
            ));
        }
        let referenced = [&self.paths.scene, &self.paths.plan, &self.paths.pose_db]
            .into_iter()
            .flatten()
            .chain(
                self.paths
                    .checkpoints
                    .values()
                    .filter(|p| p.as_os_str() != "oracle"),
            );
        for p in referenced {
            if !p.exists() {
                return Err(CliError::Config(format!(
                    "referenced file {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("checked at load")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
