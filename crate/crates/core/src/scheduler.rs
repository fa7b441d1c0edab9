//! Rule-based action scheduler: validates an instruction list, runs the
//! matching skill for each action, and switches to the next action once the
//! root has overlapped the current target long enough. Also hosts the seated
//! and lying pose database used to start get-up training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::character::{self, observe, PostureMode, StepConfig, SurrogateState};
use crate::control::{ControlInput, Controller};
use crate::error::{ConfigError, PlanError};
use crate::geom::{Vec2, Vec3};
use crate::planner::{astar, polyline_to_trajectory, Trajectory};
use crate::scene::{rasterize, ObjectInstance, Scene};
use crate::tasks::{
    build_goal, disc_features, getup_target, lie_getup_target, task_reward, EnvResources,
    GoalSource, TaskConfig, TaskEnv, TaskKind,
};

// ---------------------------------------------------------------------------
// Pose database

/// Settled seated (or lying) states, stored per object in the object's own
/// frame: the object sits at the origin with zero yaw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSet {
    pub object: ObjectInstance,
    pub states: Vec<SurrogateState>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseDatabase {
    pub kind: Option<TaskKind>,
    pub sets: BTreeMap<String, PoseSet>,
}

/// Limits every stored pose must satisfy.
pub const POSE_RADIUS: f64 = 0.20;
pub const POSE_MAX_SPEED: f64 = 0.1;

impl PoseDatabase {
    pub fn total(&self) -> usize {
        self.sets.values().map(|s| s.states.len()).sum()
    }

    /// Checks the radius and speed invariants for one pose.
    pub fn pose_is_valid(object: &ObjectInstance, state: &SurrogateState) -> bool {
        (state.root3() - object.sit_target).norm() < POSE_RADIUS && state.speed() < POSE_MAX_SPEED
    }

    /// Fraction of stored poses that satisfy the invariants.
    pub fn valid_fraction(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let ok: usize = self
            .sets
            .values()
            .map(|s| {
                s.states
                    .iter()
                    .filter(|p| Self::pose_is_valid(&s.object, p))
                    .count()
            })
            .sum();
        ok as f64 / total as f64
    }

    /// Uniform draw over all stored poses.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (ObjectInstance, SurrogateState) {
        let mut k = rng.random_range(0..self.total());
        for set in self.sets.values() {
            if k < set.states.len() {
                return (set.object.clone(), set.states[k]);
            }
            k -= set.states.len();
        }
        unreachable!("index drawn below total")
    }

    pub fn insert(&mut self, object: ObjectInstance, states: Vec<SurrogateState>) {
        self.sets
            .insert(object.id.clone(), PoseSet { object, states });
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let s = serde_json::to_string(self).map_err(std::io::Error::other)?;
        std::fs::write(path, s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.as_ref().display())))?;
        serde_json::from_str(&text).map_err(|e| ConfigError::Invalid(format!("pose database: {e}")))
    }
}

/// Maps a state near a placed object into the object's canonical frame.
fn to_object_frame(state: &SurrogateState, object: &ObjectInstance) -> SurrogateState {
    state.translated(-object.center_xy()).rotated(-object.yaw())
}

/// Runs sit (or lie-down) episodes against `object` with `controller` and
/// keeps the final state of every episode that ends settled on the target.
/// Gives up after `10 × count` episodes and returns what it has.
pub fn sample_poses(
    controller: &dyn Controller,
    kind: TaskKind,
    object: &ObjectInstance,
    count: usize,
    cfg: &TaskConfig,
    seed: u64,
) -> Result<Vec<SurrogateState>, ConfigError> {
    if !matches!(kind, TaskKind::Sit | TaskKind::LieDown) {
        return Err(ConfigError::Invalid(format!(
            "cannot sample poses with task {kind}"
        )));
    }
    let canonical = object.placed(Vec2::zeros(), 0.0);
    let mut tcfg = *cfg;
    if tcfg.iet_steps == 0 {
        tcfg.iet_steps = 30;
    }
    let resources = EnvResources {
        objects: vec![canonical.clone()].into(),
        pose_db: None,
    };
    let mut env = TaskEnv::new(kind, tcfg, StepConfig::default(), resources, seed, true)?;
    let mut out = Vec::with_capacity(count);
    let budget = count * 10;
    let mut episodes = 0;
    while out.len() < count && episodes < budget {
        let f = env.features();
        let a = controller.act(&env.control_input(&f));
        let o = env.step(&a);
        if o.termination.is_done() {
            episodes += 1;
            let placed = env.object().expect("interaction episode").clone();
            let s = to_object_frame(env.state(), &placed);
            if o.success && PoseDatabase::pose_is_valid(&canonical, &s) {
                out.push(s);
            }
            env.reset();
        }
    }
    if out.len() < count {
        log::warn!(
            "pose sampling for `{}` filled {}/{} after {} episodes",
            object.id,
            out.len(),
            count,
            episodes
        );
    }
    Ok(out)
}

/// Builds a database over several objects (each mapped to its canonical pose).
pub fn build_pose_database(
    controller: &dyn Controller,
    kind: TaskKind,
    objects: &[ObjectInstance],
    count: usize,
    cfg: &TaskConfig,
    seed: u64,
) -> Result<PoseDatabase, ConfigError> {
    let sets = objects
        .par_iter()
        .enumerate()
        .map(|(i, o)| {
            let states = sample_poses(
                controller,
                kind,
                o,
                count,
                cfg,
                seed.wrapping_add(i as u64 * 7919),
            )?;
            Ok((o.placed(Vec2::zeros(), 0.0), states))
        })
        .collect::<Result<Vec<_>, ConfigError>>()?;
    let mut db = PoseDatabase {
        kind: Some(kind),
        sets: BTreeMap::new(),
    };
    for (o, s) in sets {
        db.insert(o, s);
    }
    Ok(db)
}

// ---------------------------------------------------------------------------
// Instructions

/// Trajectory reference in a plan file: a CSV path or `"auto"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum TrajectoryRef {
    Auto,
    File(PathBuf),
}

impl From<String> for TrajectoryRef {
    fn from(s: String) -> Self {
        if s == "auto" {
            Self::Auto
        } else {
            Self::File(PathBuf::from(s))
        }
    }
}

impl From<TrajectoryRef> for String {
    fn from(t: TrajectoryRef) -> Self {
        match t {
            TrajectoryRef::Auto => "auto".into(),
            TrajectoryRef::File(p) => p.display().to_string(),
        }
    }
}

/// One plan-file entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionSpec {
    pub action: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<TrajectoryRef>,
}

impl ActionSpec {
    pub fn interact(action: TaskKind, object: &str) -> Self {
        Self {
            action,
            object: Some(object.to_string()),
            trajectory: None,
        }
    }

    pub fn follow_auto() -> Self {
        Self {
            action: TaskKind::Follow,
            object: None,
            trajectory: Some(TrajectoryRef::Auto),
        }
    }
}

pub fn parse_plan(json: &str) -> Result<Vec<ActionSpec>, PlanError> {
    Ok(serde_json::from_str(json)?)
}

/// How a follow action gets its path.
#[derive(Debug, Clone, PartialEq)]
pub enum PathSource {
    /// Planned when the action starts, toward the standing point of `object`.
    Auto {
        object: String,
    },
    Fixed(Trajectory),
}

/// A validated action.
#[derive(Debug, Clone, PartialEq)]
pub struct Instruction {
    pub kind: TaskKind,
    /// Object the action refers to; for follow, the object an automatic
    /// path leads to.
    pub object: Option<String>,
    pub path: Option<PathSource>,
}

/// Checks object references, trajectory handles and the
/// interact-before-get-up ordering, and resolves trajectory files relative
/// to `base_dir`. All problems are collected.
pub fn validate(
    specs: &[ActionSpec],
    scene: &Scene,
    base_dir: &Path,
) -> Result<Vec<Instruction>, Vec<PlanError>> {
    let mut errors = Vec::new();
    if specs.is_empty() {
        return Err(vec![PlanError::InvalidPlan("instruction is empty".into())]);
    }
    let mut out = Vec::with_capacity(specs.len());
    // object currently occupied by the character, and how
    let mut occupied: Option<(String, TaskKind)> = None;
    for (i, spec) in specs.iter().enumerate() {
        let known = |id: &String| scene.object(id).is_some();
        if let Some(id) = &spec.object {
            if !known(id) {
                errors.push(PlanError::UnknownObject(id.clone()));
            }
        }
        if spec.action != TaskKind::Follow && spec.trajectory.is_some() {
            errors.push(PlanError::InvalidPlan(format!(
                "step {i}: only follow takes a trajectory"
            )));
        }
        let mut inst = Instruction {
            kind: spec.action,
            object: spec.object.clone(),
            path: None,
        };
        match spec.action {
            TaskKind::Sit | TaskKind::LieDown => {
                if spec.object.is_none() {
                    errors.push(PlanError::InvalidPlan(format!(
                        "step {i}: {} needs an object",
                        spec.action
                    )));
                }
                occupied = spec.object.clone().map(|o| (o, spec.action));
            }
            TaskKind::GetUp | TaskKind::LieGetUp => {
                let needed = if spec.action == TaskKind::GetUp {
                    TaskKind::Sit
                } else {
                    TaskKind::LieDown
                };
                match &occupied {
                    Some((id, how))
                        if *how == needed && spec.object.as_ref().is_none_or(|o| o == id) =>
                    {
                        inst.object = Some(id.clone());
                    }
                    _ => errors.push(PlanError::InvalidPlan(format!(
                        "step {i}: {} must follow a {} on the same object",
                        spec.action, needed
                    ))),
                }
                occupied = None;
            }
            TaskKind::Follow => {
                match &spec.trajectory {
                    None => errors.push(PlanError::InvalidPlan(format!(
                        "step {i}: follow needs a trajectory"
                    ))),
                    Some(TrajectoryRef::Auto) => {
                        let target = spec.object.clone().or_else(|| {
                            specs[i + 1..]
                                .iter()
                                .find(|s| matches!(s.action, TaskKind::Sit | TaskKind::LieDown))
                                .and_then(|s| s.object.clone())
                        });
                        match target {
                            Some(object) => {
                                inst.object = Some(object.clone());
                                inst.path = Some(PathSource::Auto { object });
                            }
                            None => errors.push(PlanError::InvalidPlan(format!(
                                "step {i}: automatic path has no target object"
                            ))),
                        }
                    }
                    Some(TrajectoryRef::File(p)) => {
                        let full = if p.is_absolute() {
                            p.clone()
                        } else {
                            base_dir.join(p)
                        };
                        match std::fs::File::open(&full)
                            .map_err(PlanError::from)
                            .and_then(Trajectory::read_csv)
                        {
                            Ok(t) => inst.path = Some(PathSource::Fixed(t)),
                            Err(e) => errors.push(e),
                        }
                    }
                }
                occupied = None;
            }
        }
        out.push(inst);
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(errors)
    }
}

// ---------------------------------------------------------------------------
// Planning

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    pub transition_seconds: f64,
    pub transition_radius: f64,
    pub follow_end_radius: f64,
    pub action_timeout: f64,
    /// Standing distance in front of an object for automatic paths.
    pub approach_distance: f64,
    pub path_speed: f64,
    pub cell_size: f64,
    /// Clearance added around footprints when rasterizing.
    pub inflation: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            transition_seconds: 1.0,
            transition_radius: 0.20,
            follow_end_radius: 0.5,
            action_timeout: 20.0,
            approach_distance: 0.8,
            path_speed: 1.25,
            cell_size: 0.1,
            inflation: 0.3,
        }
    }
}

/// Collision-free path from `from` to the standing point in front of
/// `to_object`. The target object and any object in `also_exclude` do not
/// block; endpoints inside inflated footprints snap to the nearest free cell.
pub fn auto_plan(
    scene: &Scene,
    from: Vec2,
    to_object: &str,
    also_exclude: &[&str],
    cfg: &SchedulerConfig,
) -> Result<Trajectory, PlanError> {
    let object = scene
        .object(to_object)
        .ok_or_else(|| PlanError::UnknownObject(to_object.to_string()))?;
    let goal = object.approach_point(cfg.approach_distance);
    let mut exclude = vec![to_object];
    exclude.extend_from_slice(also_exclude);
    let grid = rasterize(scene, cfg.cell_size, cfg.inflation, &exclude)?;
    let snap = |p: Vec2| -> Result<(usize, usize), PlanError> {
        let (x, y) = grid.cell_coords(p);
        let cx = x.clamp(0, grid.width as i64 - 1) as usize;
        let cy = y.clamp(0, grid.height as i64 - 1) as usize;
        grid.nearest_free((cx, cy))
            .ok_or(PlanError::InvalidEndpoint((x, y)))
    };
    let (s, g) = (snap(from)?, snap(goal)?);
    let path = astar(&grid, s, g)?;
    let mut pts: Vec<Vec2> = path.cells.iter().map(|&c| grid.cell_center(c)).collect();
    if !grid.is_blocked_at(from) {
        pts[0] = from;
    }
    if !grid.is_blocked_at(goal) {
        *pts.last_mut().expect("non-empty path") = goal;
    }
    polyline_to_trajectory(&pts, cfg.path_speed, &grid)
}

// ---------------------------------------------------------------------------
// Execution

/// Scores a discriminator input with a style reward in `(0, 1]`.
pub trait StyleScorer: Send + Sync {
    fn style_reward(&self, disc_obs: &[f64]) -> f64;
}

#[derive(Clone)]
pub struct Skill {
    pub controller: Arc<dyn Controller>,
    pub style: Option<Arc<dyn StyleScorer>>,
}

impl std::fmt::Debug for Skill {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Skill")
            .field("style", &self.style.is_some())
            .finish()
    }
}

/// Skills available to the scheduler, keyed by task.
#[derive(Debug, Clone, Default)]
pub struct SkillSet {
    skills: HashMap<TaskKind, Skill>,
}

impl SkillSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, kind: TaskKind, controller: Arc<dyn Controller>) -> Self {
        self.insert(kind, controller, None);
        self
    }

    pub fn insert(
        &mut self,
        kind: TaskKind,
        controller: Arc<dyn Controller>,
        style: Option<Arc<dyn StyleScorer>>,
    ) {
        self.skills.insert(kind, Skill { controller, style });
    }

    pub fn get(&self, kind: TaskKind) -> Option<&Skill> {
        self.skills.get(&kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailReason {
    Fall,
    Timeout,
    Planning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "status")]
pub enum Status {
    Running,
    Done,
    Failed { action: usize, reason: FailReason },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TickEvent {
    Continue,
    /// The action with this index completed and the next one started.
    Advanced(usize),
    Done,
    Failed(FailReason),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionResult {
    pub kind: TaskKind,
    pub time_s: f64,
    pub error_m: f64,
}

/// Finite-state scheduler over a validated instruction list.
#[derive(Debug, Clone)]
pub struct Scheduler<'a> {
    scene: &'a Scene,
    plan: &'a [Instruction],
    task_cfg: TaskConfig,
    cfg: SchedulerConfig,
    index: usize,
    overlap: f64,
    action_time: f64,
    elapsed: f64,
    status: Status,
    target: Vec3,
    object: Option<ObjectInstance>,
    trajectory: Option<Trajectory>,
    /// Object the character is currently using (excluded from path planning).
    occupied: Option<String>,
    results: Vec<ActionResult>,
}

impl<'a> Scheduler<'a> {
    /// Starts the first action from `state` (whose posture mode is adjusted).
    pub fn new(
        scene: &'a Scene,
        plan: &'a [Instruction],
        task_cfg: TaskConfig,
        cfg: SchedulerConfig,
        state: &mut SurrogateState,
    ) -> Self {
        let mut s = Self {
            scene,
            plan,
            task_cfg,
            cfg,
            index: 0,
            overlap: 0.0,
            action_time: 0.0,
            elapsed: 0.0,
            status: Status::Running,
            target: Vec3::zeros(),
            object: None,
            trajectory: None,
            occupied: None,
            results: Vec::new(),
        };
        s.begin(state);
        s
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn overlap(&self) -> f64 {
        self.overlap
    }

    pub fn action_time(&self) -> f64 {
        self.action_time
    }

    pub fn elapsed(&self) -> f64 {
        self.elapsed
    }

    pub fn target(&self) -> Vec3 {
        self.target
    }

    pub fn object(&self) -> Option<&ObjectInstance> {
        self.object.as_ref()
    }

    pub fn trajectory(&self) -> Option<&Trajectory> {
        self.trajectory.as_ref()
    }

    pub fn results(&self) -> &[ActionResult] {
        &self.results
    }

    pub fn current(&self) -> Option<&Instruction> {
        match self.status {
            Status::Running => self.plan.get(self.index),
            _ => None,
        }
    }

    fn begin(&mut self, state: &mut SurrogateState) {
        let inst = &self.plan[self.index];
        self.overlap = 0.0;
        self.action_time = 0.0;
        self.trajectory = None;
        *state = state.with_mode(inst.kind.posture_mode());
        self.object = inst
            .object
            .as_ref()
            .and_then(|id| self.scene.object(id))
            .cloned();
        match inst.kind {
            TaskKind::Sit | TaskKind::LieDown => {
                let o = self.object.as_ref().expect("validated object");
                self.target = o.sit_target;
            }
            TaskKind::GetUp => self.target = getup_target(state, &self.task_cfg),
            TaskKind::LieGetUp => {
                let o = self.object.as_ref().expect("validated object");
                self.target = lie_getup_target(state, o, &self.task_cfg);
            }
            TaskKind::Follow => {
                // the path, not the object, is the goal of a follow action
                self.object = None;
                let traj = match inst.path.as_ref().expect("validated follow") {
                    PathSource::Fixed(t) => Ok(t.clone()),
                    PathSource::Auto { object } => {
                        let excl: Vec<&str> = self.occupied.iter().map(String::as_str).collect();
                        auto_plan(self.scene, state.root_pos, object, &excl, &self.cfg)
                    }
                };
                match traj {
                    Ok(t) => {
                        let end = t.end();
                        self.target = Vec3::new(end.x, end.y, state.root_height);
                        self.trajectory = Some(t);
                    }
                    Err(e) => {
                        log::warn!("planning failed at step {}: {e}", self.index);
                        self.status = Status::Failed {
                            action: self.index,
                            reason: FailReason::Planning,
                        };
                    }
                }
            }
        }
    }

    /// Goal features for the active action.
    pub fn goal(&self, state: &SurrogateState) -> Vec<f64> {
        match (&self.trajectory, &self.object) {
            (Some(t), _) => build_goal(
                state,
                GoalSource::Path {
                    trajectory: t,
                    time: self.action_time,
                },
            ),
            (None, Some(o)) => build_goal(
                state,
                GoalSource::Interaction {
                    object: o,
                    target: self.target,
                },
            ),
            (None, None) => unreachable!("running action has a goal"),
        }
    }

    fn error(&self, state: &SurrogateState) -> f64 {
        match &self.trajectory {
            Some(t) => (state.root_pos - t.end()).norm(),
            None => (state.root3() - self.target).norm(),
        }
    }

    fn completed(&self, state: &SurrogateState) -> bool {
        match &self.trajectory {
            Some(t) => {
                self.action_time >= t.duration() - 1.0
                    && (state.root_pos - t.end()).norm() < self.cfg.follow_end_radius
            }
            None => self.overlap >= self.cfg.transition_seconds - 1e-9,
        }
    }

    /// Advances timers by `dt` after the character reached `state`, and
    /// transitions or fails as needed. `state` may have its posture mode
    /// switched when a new action begins.
    pub fn tick(&mut self, state: &mut SurrogateState, dt: f64) -> TickEvent {
        if let Status::Failed { reason, .. } = self.status {
            return TickEvent::Failed(reason);
        }
        if self.status == Status::Done {
            return TickEvent::Done;
        }
        self.action_time += dt;
        self.elapsed += dt;
        if character::detect_fall(state) {
            return self.fail(state, FailReason::Fall);
        }
        if self.trajectory.is_none()
            && (state.root3() - self.target).norm() < self.cfg.transition_radius
        {
            self.overlap += dt;
        }
        if self.completed(state) {
            let inst = &self.plan[self.index];
            self.results.push(ActionResult {
                kind: inst.kind,
                time_s: self.action_time,
                error_m: self.error(state),
            });
            self.occupied = match inst.kind {
                TaskKind::Sit | TaskKind::LieDown | TaskKind::GetUp | TaskKind::LieGetUp => {
                    inst.object.clone()
                }
                TaskKind::Follow => None,
            };
            let finished = self.index;
            self.index += 1;
            if self.index == self.plan.len() {
                self.status = Status::Done;
                return TickEvent::Done;
            }
            self.begin(state);
            if let Status::Failed { reason, .. } = self.status {
                return TickEvent::Failed(reason);
            }
            return TickEvent::Advanced(finished);
        }
        if self.action_time >= self.cfg.action_timeout - 1e-9 {
            return self.fail(state, FailReason::Timeout);
        }
        TickEvent::Continue
    }

    fn fail(&mut self, state: &SurrogateState, reason: FailReason) -> TickEvent {
        self.results.push(ActionResult {
            kind: self.plan[self.index].kind,
            time_s: self.action_time,
            error_m: self.error(state),
        });
        self.status = Status::Failed {
            action: self.index,
            reason,
        };
        TickEvent::Failed(reason)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub h: f64,
    pub heading: f64,
    pub posture: f64,
    pub action_idx: usize,
    pub action_kind: TaskKind,
    #[serde(rename = "rG")]
    pub r_g: f64,
    #[serde(rename = "rS")]
    pub r_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub success: bool,
    pub per_action: Vec<ActionResult>,
    #[serde(flatten)]
    pub status: Status,
}

#[derive(Debug, Clone)]
pub struct ExecutionTrace {
    pub rows: Vec<TraceRow>,
    /// Indices into `rows` where an action completed.
    pub transitions: Vec<usize>,
    pub summary: PlanSummary,
}

impl ExecutionTrace {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), PlanError> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }
}

/// Executes a validated plan from `start` with deterministic skills.
pub fn run_plan(
    scene: &Scene,
    plan: &[Instruction],
    skills: &SkillSet,
    start: SurrogateState,
    task_cfg: &TaskConfig,
    cfg: &SchedulerConfig,
) -> Result<ExecutionTrace, PlanError> {
    for inst in plan {
        if skills.get(inst.kind).is_none() {
            return Err(PlanError::InvalidPlan(format!(
                "no skill loaded for {}",
                inst.kind
            )));
        }
    }
    let step_cfg = StepConfig::default();
    let dt = step_cfg.control_dt();
    let mut state = start;
    let mut sched = Scheduler::new(scene, plan, *task_cfg, *cfg, &mut state);
    let mut rows = Vec::new();
    let mut transitions = Vec::new();
    while sched.status() == Status::Running {
        let idx = sched.index();
        let kind = plan[idx].kind;
        let skill = skills.get(kind).expect("checked above");
        let mut features = observe(&state).to_vec();
        features.extend(sched.goal(&state));
        let input = ControlInput {
            kind,
            state: &state,
            features: &features,
            target: sched.target(),
            object: sched.object(),
            trajectory: sched.trajectory(),
            time: sched.action_time(),
        };
        let action = skill.controller.act(&input);
        let prev = state;
        let next = match character::step(&prev, &action, &step_cfg, scene) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("{e}");
                let mut s = prev;
                s.root_height = f64::NAN;
                s
            }
        };
        state = next;
        let r_s = skill.style.as_ref().map_or(0.0, |sc| {
            sc.style_reward(&disc_features(&prev, &state, sched.object()))
        });
        let r_g = task_reward(
            kind,
            &state,
            sched.target(),
            sched.object(),
            sched.trajectory(),
            sched.action_time() + dt,
            task_cfg,
        );
        let ev = sched.tick(&mut state, dt);
        rows.push(TraceRow {
            t: sched.elapsed(),
            x: state.root_pos.x,
            y: state.root_pos.y,
            h: state.root_height,
            heading: state.heading,
            posture: state.posture,
            action_idx: idx,
            action_kind: kind,
            r_g,
            r_s,
        });
        if matches!(ev, TickEvent::Advanced(_) | TickEvent::Done) {
            transitions.push(rows.len() - 1);
        }
    }
    let status = sched.status();
    Ok(ExecutionTrace {
        rows,
        transitions,
        summary: PlanSummary {
            success: status == Status::Done,
            per_action: sched.results().to_vec(),
            status,
        },
    })
}

/// Start pose for trial `i`: `base` jittered by up to `jitter` m in
/// position and a uniformly random heading.
pub fn trial_start(base: &SurrogateState, jitter: f64, seed: u64, i: usize) -> SurrogateState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let dx = rng.random_range(-jitter..=jitter);
    let dy = rng.random_range(-jitter..=jitter);
    let heading = rng.random_range(-PI..PI);
    let mut s = SurrogateState::standing(base.root_pos + Vec2::new(dx, dy), heading);
    s.mode = base.mode;
    s.refresh_derived();
    s
}

/// Seated start on an object, for plans that begin with a get-up.
pub fn seated_on(object: &ObjectInstance) -> SurrogateState {
    crate::tasks::settled_pose(object, PostureMode::Sit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStats {
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub summaries: Vec<PlanSummary>,
}

/// Runs `trials` independent executions in parallel.
#[allow(clippy::too_many_arguments)]
pub fn run_trials(
    scene: &Scene,
    plan: &[Instruction],
    skills: &SkillSet,
    base: SurrogateState,
    jitter: f64,
    trials: usize,
    seed: u64,
    task_cfg: &TaskConfig,
    cfg: &SchedulerConfig,
) -> Result<PlanStats, PlanError> {
    let summaries = (0..trials)
        .into_par_iter()
        .map(|i| {
            let start = trial_start(&base, jitter, seed, i);
            run_plan(scene, plan, skills, start, task_cfg, cfg).map(|t| t.summary)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let successes = summaries.iter().filter(|s| s.success).count();
    Ok(PlanStats {
        trials,
        successes,
        success_rate: successes as f64 / trials.max(1) as f64,
        summaries,
    })
}
