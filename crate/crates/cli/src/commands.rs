//! Implementations of the `hsi` subcommands.

use serde::Serialize;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use hsi_core::control::{IdleController, RandomController};
use hsi_core::error::{ConfigError, PlanError, SceneError, TrainError};
use hsi_core::eval::{self, MetricsSummary, TrialResult};
use hsi_core::oracle::OracleController;
use hsi_core::scheduler::{self, parse_plan, PlanStats, PoseDatabase, SkillSet, StyleScorer};
use hsi_core::trainer::{Checkpoint, TrainedPolicy, Trainer};
use hsi_core::{Controller, ObjectCatalog, ObjectInstance, Scene, SurrogateState, TaskKind, Vec2};

use crate::config::ExperimentConfig;
use crate::{plot, CliError, Command, CommonArgs};

/// Loads the config, resolves the output directory and runs `cmd`.
pub fn dispatch(common: &CommonArgs, cmd: Command) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(common.config.as_deref(), &common.sets, common.seed)?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| {
            CliError::Config("an output directory is required (--out or `out`)".into())
        })?;
    std::fs::create_dir_all(&out)?;
    match cmd {
        Command::Train {
            task,
            iterations,
            pose_db,
        } => cmd_train(&cfg, &out, parse_task(&task)?, iterations, pose_db).map(|_| ()),
        Command::Eval {
            task,
            policy,
            trials,
            repeats,
            pose_db,
        } => cmd_eval(
            &cfg,
            &out,
            parse_task(&task)?,
            &policy,
            trials,
            repeats,
            pose_db,
        )
        .map(|_| ()),
        Command::RunScene {
            scene,
            plan,
            policies,
            trials,
            start,
            plot,
        } => cmd_run_scene(&cfg, &out, scene, plan, &policies, trials, start, plot).map(|_| ()),
        Command::SamplePoses {
            task,
            policy,
            count,
            objects,
        } => cmd_sample_poses(&cfg, &out, parse_task(&task)?, &policy, count, &objects).map(|_| ()),
        Command::Plan {
            scene,
            from,
            to,
            plot,
        } => cmd_plan(&cfg, &out, scene, from, &to, plot),
    }
}

pub fn parse_task(name: &str) -> Result<TaskKind, CliError> {
    TaskKind::parse(name).ok_or_else(|| {
        let known: Vec<&str> = TaskKind::ALL.iter().map(|k| k.name()).collect();
        CliError::Config(format!(
            "unknown task `{name}` (expected one of {})",
            known.join(", ")
        ))
    })
}

fn config_err(e: ConfigError) -> CliError {
    CliError::Config(e.to_string())
}

fn train_err(e: TrainError) -> CliError {
    match e {
        TrainError::Config(c) => config_err(c),
        other => CliError::Runtime(other.to_string()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Loaded controller plus its discriminator when it has one.
#[derive(Clone)]
pub struct LoadedPolicy {
    pub controller: Arc<dyn Controller>,
    pub style: Option<Arc<dyn StyleScorer>>,
}

/// Resolves a policy spec: a checkpoint path or one of `oracle`, `random`,
/// `idle`. Checkpoints must belong to `kind`.
pub fn load_policy(spec: &str, kind: TaskKind, seed: u64) -> Result<LoadedPolicy, CliError> {
    let scripted = |c: Arc<dyn Controller>| LoadedPolicy {
        controller: c,
        style: None,
    };
    match spec {
        "oracle" => return Ok(scripted(Arc::new(OracleController::default()))),
        "random" => return Ok(scripted(Arc::new(RandomController { seed }))),
        "idle" => return Ok(scripted(Arc::new(IdleController))),
        _ => {}
    }
    let ck = Checkpoint::load(spec).map_err(|e| CliError::Config(format!("{spec}: {e}")))?;
    if ck.policy.kind != kind {
        return Err(CliError::Config(format!(
            "{spec} holds a {} policy, expected {kind}",
            ck.policy.kind
        )));
    }
    let p: Arc<TrainedPolicy> = Arc::new(ck.policy);
    Ok(LoadedPolicy {
        controller: p.clone(),
        style: Some(p),
    })
}

/// Loads the pose database a get-up task starts from and checks it was
/// sampled with the matching interaction.
pub fn load_pose_db(
    kind: TaskKind,
    flag: Option<PathBuf>,
    cfg: &ExperimentConfig,
) -> Result<Option<PoseDatabase>, CliError> {
    if !kind.needs_pose_database() {
        return Ok(None);
    }
    let source = match kind {
        TaskKind::LieGetUp => TaskKind::LieDown,
        _ => TaskKind::Sit,
    };
    let path = flag.or_else(|| cfg.paths.pose_db.clone()).ok_or_else(|| {
        CliError::Config(format!(
            "task {kind} starts from a pose database; run `hsi sample-poses --task {source}` first and pass --pose-db"
        ))
    })?;
    let db = PoseDatabase::load(&path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if db.kind.is_some_and(|k| k != source) {
        return Err(CliError::Config(format!(
            "{} was sampled with {}, task {kind} needs {source} poses",
            path.display(),
            db.kind.map_or("?", |k| k.name())
        )));
    }
    if db.total() == 0 {
        return Err(config_err(ConfigError::MissingPoseDatabase(kind.name())));
    }
    Ok(Some(db))
}

/// The database restricted to `objects`.
fn restrict(db: &PoseDatabase, objects: &[ObjectInstance]) -> PoseDatabase {
    let mut out = PoseDatabase {
        kind: db.kind,
        sets: Default::default(),
    };
    for o in objects {
        if let Some(set) = db.sets.get(&o.id) {
            out.sets.insert(o.id.clone(), set.clone());
        }
    }
    out
}

fn resources(
    objects: &[ObjectInstance],
    db: Option<&PoseDatabase>,
    kind: TaskKind,
) -> Result<hsi_core::tasks::EnvResources, CliError> {
    let pose_db = match db {
        Some(db) => {
            let r = restrict(db, objects);
            if r.total() == 0 {
                return Err(CliError::Config(format!(
                    "pose database has no poses for the {kind} objects of this split"
                )));
            }
            Some(Arc::new(r))
        }
        None => None,
    };
    Ok(hsi_core::tasks::EnvResources {
        objects: objects.to_vec().into(),
        pose_db,
    })
}

/// Trains `kind` on the training split and returns the final checkpoint.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    out: &Path,
    kind: TaskKind,
    iterations: Option<usize>,
    pose_db: Option<PathBuf>,
) -> Result<Checkpoint, CliError> {
    let db = load_pose_db(kind, pose_db, cfg)?;
    let catalog = ObjectCatalog::for_task(kind, cfg.catalog_seed);
    let res = resources(&catalog.train, db.as_ref(), kind)?;
    let iterations = iterations.unwrap_or(cfg.trainer.iterations);
    std::fs::write(out.join("config.toml"), cfg.to_toml())?;
    let mut trainer =
        Trainer::new(kind, cfg.trainer.clone(), cfg.task, res, cfg.seed()).map_err(train_err)?;
    let rows = trainer.train(iterations, Some(out)).map_err(train_err)?;
    let last = rows.last().map_or(0.0, |m| m.success_rate);
    println!(
        "trained {kind} for {} iterations; last rollout success {:.3}; outputs in {}",
        rows.len(),
        last,
        out.display()
    );
    Ok(trainer.checkpoint())
}

/// Pooled trials over `repeats` seeds on the test split. Writes
/// `trials.csv` and `summary.json`.
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    out: &Path,
    kind: TaskKind,
    policy: &str,
    trials: Option<usize>,
    repeats: u64,
    pose_db: Option<PathBuf>,
) -> Result<MetricsSummary, CliError> {
    if repeats == 0 {
        return Err(CliError::Config("--repeats must be at least 1".into()));
    }
    let trials = trials.unwrap_or(cfg.eval_trials);
    if trials == 0 {
        return Err(CliError::Config("at least one trial is required".into()));
    }
    let seed = cfg.seed();
    let p = load_policy(policy, kind, seed)?;
    let db = load_pose_db(kind, pose_db, cfg)?;
    let catalog = ObjectCatalog::for_task(kind, cfg.catalog_seed);
    let res = resources(&catalog.test, db.as_ref(), kind)?;
    let mut all: Vec<TrialResult> = Vec::with_capacity(trials * repeats as usize);
    for r in 0..repeats {
        let batch = eval::run_trials(
            kind,
            p.controller.as_ref(),
            &cfg.task,
            &res,
            trials,
            seed.wrapping_add(r),
        )
        .map_err(config_err)?;
        let offset = all.len();
        all.extend(batch.into_iter().map(|mut t| {
            t.trial += offset;
            t
        }));
    }
    let summary = eval::summarize(&all);
    let f = BufWriter::new(File::create(out.join("trials.csv"))?);
    eval::write_trials_csv(&all, f).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "{kind}: {} trials, success {:.2}%, time {:.3} s, error {:.1} mm",
        summary.trials, summary.success_rate, summary.execution_time, summary.error_mm
    );
    Ok(summary)
}

fn load_scene(flag: Option<PathBuf>, cfg: &ExperimentConfig) -> Result<Scene, CliError> {
    let path = flag.or_else(|| cfg.paths.scene.clone()).ok_or_else(|| {
        CliError::Config("a scene file is required (--scene or paths.scene)".into())
    })?;
    if !path.exists() {
        return Err(CliError::Config(format!(
            "scene file {} does not exist",
            path.display()
        )));
    }
    Scene::load(&path).map_err(|e| match e {
        SceneError::Io(io) => CliError::Config(format!("{}: {io}", path.display())),
        other => CliError::Validation(format!("{}: {other}", path.display())),
    })
}

#[derive(Debug, Serialize)]
struct TrialRow {
    trial: usize,
    success: bool,
    failed_action: Option<usize>,
    reason: Option<String>,
    actions_completed: usize,
}

#[derive(Debug, Serialize)]
struct SceneStats {
    trials: usize,
    successes: usize,
    success_rate: f64,
    per_trial: Vec<TrialRow>,
}

impl From<&PlanStats> for SceneStats {
    fn from(s: &PlanStats) -> Self {
        let per_trial = s
            .summaries
            .iter()
            .enumerate()
            .map(|(i, sum)| {
                let (failed_action, reason) = match sum.status {
                    scheduler::Status::Failed { action, reason } => {
                        (Some(action), Some(format!("{reason:?}").to_lowercase()))
                    }
                    _ => (None, None),
                };
                TrialRow {
                    trial: i,
                    success: sum.success,
                    failed_action,
                    reason,
                    actions_completed: if sum.success {
                        sum.per_action.len()
                    } else {
                        sum.per_action.len().saturating_sub(1)
                    },
                }
            })
            .collect();
        Self {
            trials: s.trials,
            successes: s.successes,
            success_rate: s.success_rate,
            per_trial,
        }
    }
}

/// Runs a plan over many trials. Writes `trace.csv`, `summary.json` (both
/// for trial 0), `stats.json` and optionally `plot.svg`.
#[allow(clippy::too_many_arguments)]
pub fn cmd_run_scene(
    cfg: &ExperimentConfig,
    out: &Path,
    scene: Option<PathBuf>,
    plan: Option<PathBuf>,
    policies: &[String],
    trials: Option<usize>,
    start: Option<(f64, f64)>,
    with_plot: bool,
) -> Result<PlanStats, CliError> {
    let scene = load_scene(scene, cfg)?;
    let plan_path = plan
        .or_else(|| cfg.paths.plan.clone())
        .ok_or_else(|| CliError::Config("a plan file is required (--plan or paths.plan)".into()))?;
    let text = std::fs::read_to_string(&plan_path)
        .map_err(|e| CliError::Config(format!("{}: {e}", plan_path.display())))?;
    let specs = parse_plan(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", plan_path.display())))?;
    let base_dir = plan_path.parent().unwrap_or(Path::new("."));
    let plan = scheduler::validate(&specs, &scene, base_dir).map_err(|errs| {
        let msgs: Vec<String> = errs.iter().map(PlanError::to_string).collect();
        CliError::Validation(msgs.join("; "))
    })?;

    let mut sources = cfg.paths.checkpoints.clone();
    for p in policies {
        let (task, path) = p
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--policy expects task=path, got `{p}`")))?;
        sources.insert(task.trim().to_string(), PathBuf::from(path.trim()));
    }
    let seed = cfg.seed();
    let mut skills = SkillSet::new();
    for inst in &plan {
        if skills.get(inst.kind).is_some() {
            continue;
        }
        let src = sources.get(inst.kind.name()).ok_or_else(|| {
            CliError::Config(format!(
                "no policy given for {} (use --policy {}=PATH)",
                inst.kind, inst.kind
            ))
        })?;
        let lp = load_policy(&src.to_string_lossy(), inst.kind, seed)?;
        skills.insert(inst.kind, lp.controller, lp.style);
    }

    let base = match start {
        Some((x, y)) => SurrogateState::standing(Vec2::new(x, y), 0.0),
        None => {
            let first = plan[0]
                .object
                .as_deref()
                .and_then(|id| scene.object(id))
                .ok_or_else(|| {
                    CliError::Config("plan does not start at an object; pass --start x,y".into())
                })?;
            let p = first.approach_point(1.5);
            let to_obj = first.center_xy() - p;
            SurrogateState::standing(p, to_obj.y.atan2(to_obj.x))
        }
    };
    let trials = trials.unwrap_or(cfg.plan_trials);
    if trials == 0 {
        return Err(CliError::Config("at least one trial is required".into()));
    }
    let runtime = |e: PlanError| CliError::Runtime(e.to_string());
    let stats = scheduler::run_trials(
        &scene,
        &plan,
        &skills,
        base,
        cfg.start_jitter,
        trials,
        seed,
        &cfg.task,
        &cfg.scheduler,
    )
    .map_err(runtime)?;
    let first_start = scheduler::trial_start(&base, cfg.start_jitter, seed, 0);
    let trace = scheduler::run_plan(
        &scene,
        &plan,
        &skills,
        first_start,
        &cfg.task,
        &cfg.scheduler,
    )
    .map_err(runtime)?;
    let f = BufWriter::new(File::create(out.join("trace.csv"))?);
    trace.write_csv(f).map_err(runtime)?;
    std::fs::write(out.join("summary.json"), trace.summary_json() + "\n")?;
    write_json(&out.join("stats.json"), &SceneStats::from(&stats))?;
    if with_plot {
        std::fs::write(
            out.join("plot.svg"),
            plot::trace_svg(&scene, &trace.rows, &trace.transitions),
        )?;
    }
    println!(
        "plan of {} actions: {}/{} trials succeeded ({:.1}%)",
        plan.len(),
        stats.successes,
        stats.trials,
        100.0 * stats.success_rate
    );
    Ok(stats)
}

/// Samples settled poses on every object of the chosen split. Writes
/// `pose_db.json`.
pub fn cmd_sample_poses(
    cfg: &ExperimentConfig,
    out: &Path,
    kind: TaskKind,
    policy: &str,
    count: usize,
    split: &str,
) -> Result<PoseDatabase, CliError> {
    if !matches!(kind, TaskKind::Sit | TaskKind::LieDown) {
        return Err(CliError::Config(format!(
            "poses are sampled with sit or liedown, not {kind}"
        )));
    }
    if count == 0 {
        return Err(CliError::Config("--count must be positive".into()));
    }
    let catalog = ObjectCatalog::for_task(kind, cfg.catalog_seed);
    let objects: Vec<ObjectInstance> = match split {
        "train" => catalog.train,
        "test" => catalog.test,
        "all" => catalog.train.into_iter().chain(catalog.test).collect(),
        other => {
            return Err(CliError::Config(format!(
                "--objects must be train, test or all, got `{other}`"
            )))
        }
    };
    let p = load_policy(policy, kind, cfg.seed())?;
    let db = scheduler::build_pose_database(
        p.controller.as_ref(),
        kind,
        &objects,
        count,
        &cfg.task,
        cfg.seed(),
    )
    .map_err(config_err)?;
    let short = db.sets.values().filter(|s| s.states.len() < count).count();
    db.save(out.join("pose_db.json"))?;
    println!(
        "{} poses on {} objects ({} short of {count}); valid fraction {:.4}",
        db.total(),
        db.sets.len(),
        short,
        db.valid_fraction()
    );
    Ok(db)
}

/// Plans from `from` to the standing point of `to`. Writes
/// `trajectory.csv` and optionally `plot.svg`.
pub fn cmd_plan(
    cfg: &ExperimentConfig,
    out: &Path,
    scene: Option<PathBuf>,
    from: (f64, f64),
    to: &str,
    with_plot: bool,
) -> Result<(), CliError> {
    let scene = load_scene(scene, cfg)?;
    let traj = scheduler::auto_plan(&scene, Vec2::new(from.0, from.1), to, &[], &cfg.scheduler)
        .map_err(|e| match e {
            PlanError::UnknownObject(_) => CliError::Validation(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        })?;
    let f = BufWriter::new(File::create(out.join("trajectory.csv"))?);
    traj.write_csv(f)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    if with_plot {
        std::fs::write(out.join("plot.svg"), plot::trajectory_svg(&scene, &traj))?;
    }
    println!(
        "{} points, {:.1} s to the standing point of {to}",
        traj.points().len(),
        traj.duration()
    );
    Ok(())
}
