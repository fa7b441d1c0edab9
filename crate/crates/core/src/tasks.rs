//! Location-task environments: sitting, getting up, lying down, getting up
//! from lying, and trajectory following. Each task reduces to moving the root
//! to a target location; this module holds the goal encodings, task rewards,
//! early termination rules and the per-environment episode state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

use crate::character::{
    self, observe, Action, PostureMode, StepConfig, SurrogateState, OBS_DIM, STAND_HEAD_HEIGHT,
};
use crate::control::ControlInput;
use crate::error::ConfigError;
use crate::geom::{heading_dir, rotate2, Pose2D, Rotation6D, Vec2, Vec3};
use crate::planner::{generate_training_trajectory, Trajectory, TrajectoryGenConfig, WINDOW_LEN};
use crate::scene::{randomize_object, Bounds, ObjectInstance, Scene};
use crate::scheduler::PoseDatabase;

pub const OBJECT_FEATURES: usize = 35;
pub const INTERACTION_GOAL_DIM: usize = OBJECT_FEATURES + 3;
pub const PATH_GOAL_DIM: usize = WINDOW_LEN * 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Sit,
    #[serde(rename = "getup")]
    GetUp,
    #[serde(rename = "liedown")]
    LieDown,
    LieGetUp,
    Follow,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        Self::Sit,
        Self::GetUp,
        Self::LieDown,
        Self::LieGetUp,
        Self::Follow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sit => "sit",
            Self::GetUp => "getup",
            Self::LieDown => "liedown",
            Self::LieGetUp => "lie_getup",
            Self::Follow => "follow",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Object-conditioned tasks (everything but trajectory following).
    pub fn is_interaction(self) -> bool {
        self != Self::Follow
    }

    /// Tasks whose episodes start from a recorded seated or lying pose.
    pub fn needs_pose_database(self) -> bool {
        matches!(self, Self::GetUp | Self::LieGetUp)
    }

    pub fn posture_mode(self) -> PostureMode {
        match self {
            Self::LieDown | Self::LieGetUp => PostureMode::Lie,
            _ => PostureMode::Sit,
        }
    }

    pub fn goal_dim(self) -> usize {
        if self.is_interaction() {
            INTERACTION_GOAL_DIM
        } else {
            PATH_GOAL_DIM
        }
    }

    pub fn feature_dim(self) -> usize {
        OBS_DIM + self.goal_dim()
    }

    /// Discriminator input: two consecutive observations, plus object
    /// features for object-conditioned tasks.
    pub fn disc_dim(self) -> usize {
        2 * OBS_DIM
            + if self.is_interaction() {
                OBJECT_FEATURES
            } else {
                0
            }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    /// Desired approach speed toward the object, m/s.
    pub target_speed: f64,
    pub near_weight: f64,
    pub far_weight: f64,
    /// Horizontal distance (m) at which the far term saturates.
    pub switch_distance: f64,
    pub episode_seconds: f64,
    /// Accumulated in-radius control steps that end an interaction episode; 0 disables.
    pub iet_steps: u32,
    pub success_radius: f64,
    pub deviation_limit: f64,
    /// Forward offset of the get-up target from the seated root, m.
    pub getup_offset: f64,
    pub getup_height: f64,
    pub lie_getup_height: f64,
    pub object_distance: (f64, f64),
    /// Time allowed past the end of a training trajectory.
    pub follow_slack_seconds: f64,
    pub rsi_max_speed: f64,
    pub trajectory: TrajectoryGenConfig,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            target_speed: 1.5,
            near_weight: 0.7,
            far_weight: 0.3,
            switch_distance: 0.5,
            episode_seconds: 10.0,
            iet_steps: 30,
            success_radius: 0.20,
            deviation_limit: 2.0,
            getup_offset: 0.3,
            getup_height: character::STAND_ROOT_HEIGHT,
            lie_getup_height: 0.89,
            object_distance: (1.0, 5.0),
            follow_slack_seconds: 1.0,
            rsi_max_speed: 1.5,
            trajectory: TrajectoryGenConfig::default(),
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if (self.near_weight + self.far_weight - 1.0).abs() > 1e-9 {
            return bad("near_weight + far_weight must equal 1");
        }
        if !(self.success_radius > 0.0 && self.episode_seconds > 0.0 && self.deviation_limit > 0.0)
        {
            return bad("radius, episode length and deviation limit must be positive");
        }
        let (lo, hi) = self.object_distance;
        if !(lo > 0.0 && hi >= lo) {
            return bad("object_distance must satisfy 0 < lo <= hi");
        }
        Ok(())
    }
}

/// `exp(-10 ‖g_tar − x_root‖²)`.
pub fn reward_near(g_tar: Vec3, x_root: Vec3) -> f64 {
    (-10.0 * (g_tar - x_root).norm_squared()).exp()
}

/// `exp(-2 (g_vel − d*·ẋ_root)²)`; a missing `d*` counts as zero projected speed.
pub fn reward_far(g_vel: f64, d_star: Option<Vec2>, root_vel: Vec2) -> f64 {
    let projected = d_star.map_or(0.0, |d| d.dot(&root_vel));
    (-2.0 * (g_vel - projected).powi(2)).exp()
}

/// Horizontal unit vector from `from` toward `to`, `None` when they coincide.
pub fn horizontal_unit(from: Vec2, to: Vec2) -> Option<Vec2> {
    let d = to - from;
    let n = d.norm();
    (n > 1e-12).then(|| d / n)
}

fn blend(near: f64, x_star: Vec2, x_root: Vec3, root_vel: Vec2, cfg: &TaskConfig) -> f64 {
    let root_xy = Vec2::new(x_root.x, x_root.y);
    if (x_star - root_xy).norm() > cfg.switch_distance {
        let far = reward_far(cfg.target_speed, horizontal_unit(root_xy, x_star), root_vel);
        cfg.near_weight * near + cfg.far_weight * far
    } else {
        cfg.near_weight * near + cfg.far_weight
    }
}

/// Sit task reward: the far (approach speed) term is used while the root is
/// more than `switch_distance` from the object horizontally; inside that radius
/// it saturates at its maximum.
pub fn reward_sit(
    g_tar: Vec3,
    x_star: Vec2,
    x_root: Vec3,
    root_vel: Vec2,
    cfg: &TaskConfig,
) -> f64 {
    blend(reward_near(g_tar, x_root), x_star, x_root, root_vel, cfg)
}

pub fn reward_getup(g_tar: Vec3, x_root: Vec3) -> f64 {
    reward_near(g_tar, x_root)
}

/// Standing point in front of a seated character: `getup_offset` along the
/// heading, at standing root height.
pub fn getup_target(state: &SurrogateState, cfg: &TaskConfig) -> Vec3 {
    let xy = state.root_pos + heading_dir(state.heading) * cfg.getup_offset;
    Vec3::new(xy.x, xy.y, cfg.getup_height)
}

/// Standing point beside a lying character: `getup_offset` along the
/// object's facing, at the lie get-up root height.
pub fn lie_getup_target(state: &SurrogateState, object: &ObjectInstance, cfg: &TaskConfig) -> Vec3 {
    let xy = state.root_pos + object.facing * cfg.getup_offset;
    Vec3::new(xy.x, xy.y, cfg.lie_getup_height)
}

/// Near term for lying down: root position and head height together.
pub fn reward_liedown_near(g_tar: Vec3, x_root: Vec3, head_target: f64, head: f64) -> f64 {
    (-10.0 * ((g_tar - x_root).norm_squared() + (head_target - head).powi(2))).exp()
}

pub fn reward_liedown(g_tar: Vec3, x_star: Vec2, state: &SurrogateState, cfg: &TaskConfig) -> f64 {
    let near = reward_liedown_near(g_tar, state.root3(), g_tar.z, state.head_height);
    blend(near, x_star, state.root3(), state.root_vel, cfg)
}

/// Weighted root, foot-height and head-height terms (0.5 / 0.3 / 0.2).
pub fn reward_lie_getup(
    g_tar: Vec3,
    x_root: Vec3,
    foot_target: f64,
    foot: f64,
    head_target: f64,
    head: f64,
) -> f64 {
    0.5 * (-10.0 * (g_tar - x_root).norm_squared()).exp()
        + 0.3 * (-10.0 * (foot_target - foot).powi(2)).exp()
        + 0.2 * (-10.0 * (head_target - head).powi(2)).exp()
}

/// `exp(-2 ‖x_root − p‖²)` on the horizontal plane.
pub fn reward_traj(x_root: Vec2, p: Vec2) -> f64 {
    (-2.0 * (x_root - p).norm_squared()).exp()
}

/// Object position (3), relative rotation (6), facing direction (2) and the
/// eight box corners (24), all in the character's local frame.
pub fn object_goal_features(object: &ObjectInstance, frame: &Pose2D) -> [f64; OBJECT_FEATURES] {
    let mut out = [0.0; OBJECT_FEATURES];
    let p = frame.to_local(object.bbox.center);
    out[..3].copy_from_slice(p.as_slice());
    out[3..9].copy_from_slice(&Rotation6D::from_yaw(object.yaw() - frame.heading()).0);
    let f = frame.dir_to_local(object.facing);
    out[9] = f.x;
    out[10] = f.y;
    for (i, v) in object.bbox.vertices().iter().enumerate() {
        let l = frame.to_local(*v);
        out[11 + 3 * i..14 + 3 * i].copy_from_slice(l.as_slice());
    }
    out
}

/// What a goal vector is built from.
#[derive(Debug, Clone, Copy)]
pub enum GoalSource<'a> {
    Interaction {
        object: &'a ObjectInstance,
        target: Vec3,
    },
    Path {
        trajectory: &'a Trajectory,
        time: f64,
    },
}

/// Goal features in the character's current frame: object features plus the
/// local target (38 values) or the local path window (20 values).
pub fn build_goal(state: &SurrogateState, source: GoalSource<'_>) -> Vec<f64> {
    let frame = state.frame();
    match source {
        GoalSource::Interaction { object, target } => {
            let mut g = Vec::with_capacity(INTERACTION_GOAL_DIM);
            g.extend_from_slice(&object_goal_features(object, &frame));
            g.extend_from_slice(frame.to_local(target).as_slice());
            g
        }
        GoalSource::Path { trajectory, time } => trajectory
            .query_window(time)
            .iter()
            .flat_map(|p| {
                let l = frame.point_to_local(*p);
                [l.x, l.y]
            })
            .collect(),
    }
}

/// Accumulates in-radius control steps (never decremented within an episode)
/// and reports whether the threshold has been reached.
pub fn check_iet(accum: u32, x_root: Vec3, g_tar: Vec3, cfg: &TaskConfig) -> (u32, bool) {
    let accum = if (x_root - g_tar).norm() < cfg.success_radius {
        accum + 1
    } else {
        accum
    };
    (accum, cfg.iet_steps > 0 && accum >= cfg.iet_steps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Termination {
    None,
    Fall,
    Deviation,
    Iet,
    Timeout,
}

impl Termination {
    pub fn is_done(self) -> bool {
        self != Self::None
    }

    /// Episode cut short for bookkeeping reasons; the value of the final state
    /// is still bootstrapped.
    pub fn is_truncation(self) -> bool {
        matches!(self, Self::Iet | Self::Timeout)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Fall => "fall",
            Self::Deviation => "deviation",
            Self::Iet => "iet",
            Self::Timeout => "timeout",
        }
    }
}

/// Priority: fall, then path deviation, then IET, then timeout.
pub fn terminate(
    state: &SurrogateState,
    path_point: Option<Vec2>,
    iet_triggered: bool,
    episode_step: u32,
    max_steps: u32,
    cfg: &TaskConfig,
) -> Termination {
    if character::detect_fall(state) {
        Termination::Fall
    } else if path_point.is_some_and(|p| (state.root_pos - p).norm() > cfg.deviation_limit) {
        Termination::Deviation
    } else if iet_triggered {
        Termination::Iet
    } else if episode_step >= max_steps {
        Termination::Timeout
    } else {
        Termination::None
    }
}

/// Task reward of `state` for `kind`; `time` indexes the trajectory.
pub fn task_reward(
    kind: TaskKind,
    state: &SurrogateState,
    target: Vec3,
    object: Option<&ObjectInstance>,
    trajectory: Option<&Trajectory>,
    time: f64,
    cfg: &TaskConfig,
) -> f64 {
    let s = state;
    match kind {
        TaskKind::Sit => {
            let obj = object.expect("sit has an object");
            reward_sit(target, obj.center_xy(), s.root3(), s.root_vel, cfg)
        }
        TaskKind::GetUp => reward_getup(target, s.root3()),
        TaskKind::LieDown => {
            let obj = object.expect("lie-down has an object");
            reward_liedown(target, obj.center_xy(), s, cfg)
        }
        TaskKind::LieGetUp => reward_lie_getup(
            target,
            s.root3(),
            0.0,
            s.foot_height,
            STAND_HEAD_HEIGHT,
            s.head_height,
        ),
        TaskKind::Follow => {
            let t = trajectory.expect("follow has a trajectory");
            reward_traj(s.root_pos, t.position_at(time))
        }
    }
}

/// Seated (or lying) pose at an object's target, at rest, facing out.
pub fn settled_pose(object: &ObjectInstance, mode: PostureMode) -> SurrogateState {
    let mut s = SurrogateState::standing(object.sit_target.xy(), object.yaw()).with_mode(mode);
    s.root_height = object.sit_target.z;
    s.posture = 1.0;
    s.refresh_derived();
    s
}

/// Shared, read-only inputs for environment resets.
#[derive(Debug, Clone)]
pub struct EnvResources {
    /// Objects drawn for interaction episodes.
    pub objects: Arc<[ObjectInstance]>,
    pub pose_db: Option<Arc<PoseDatabase>>,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub task_reward: f64,
    pub termination: Termination,
    /// Meaningful only when `termination.is_done()`.
    pub success: bool,
    /// Distance to the task's completion target after the step.
    pub error: f64,
    /// Discriminator input for this transition.
    pub disc_obs: Vec<f64>,
    /// Episode length (control steps) when done.
    pub episode_steps: u32,
}

/// One environment instance and its episode bookkeeping.
#[derive(Debug, Clone)]
pub struct TaskEnv {
    kind: TaskKind,
    cfg: TaskConfig,
    step_cfg: StepConfig,
    scene: Scene,
    resources: EnvResources,
    /// Reference state initialization for approach/follow tasks.
    rsi: bool,
    rng: ChaCha8Rng,
    state: SurrogateState,
    object: Option<ObjectInstance>,
    trajectory: Option<Trajectory>,
    target: Vec3,
    step_count: u32,
    max_steps: u32,
    iet_accum: u32,
}

impl TaskEnv {
    pub fn new(
        kind: TaskKind,
        cfg: TaskConfig,
        step_cfg: StepConfig,
        resources: EnvResources,
        seed: u64,
        rsi: bool,
    ) -> Result<Self, ConfigError> {
        cfg.validate()?;
        if kind.needs_pose_database() && resources.pose_db.as_ref().is_none_or(|db| db.total() == 0)
        {
            return Err(ConfigError::MissingPoseDatabase(kind.name()));
        }
        if kind.is_interaction() && !kind.needs_pose_database() && resources.objects.is_empty() {
            return Err(ConfigError::Invalid(format!(
                "task {kind} needs at least one object"
            )));
        }
        let mut env = Self {
            kind,
            cfg,
            step_cfg,
            scene: Scene::empty(Bounds::square(100.0)),
            resources,
            rsi,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: SurrogateState::standing(Vec2::zeros(), 0.0),
            object: None,
            trajectory: None,
            target: Vec3::zeros(),
            step_count: 0,
            max_steps: 1,
            iet_accum: 0,
        };
        env.reset();
        Ok(env)
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn state(&self) -> &SurrogateState {
        &self.state
    }

    pub fn object(&self) -> Option<&ObjectInstance> {
        self.object.as_ref()
    }

    pub fn trajectory(&self) -> Option<&Trajectory> {
        self.trajectory.as_ref()
    }

    pub fn target(&self) -> Vec3 {
        self.target
    }

    pub fn iet_accum(&self) -> u32 {
        self.iet_accum
    }

    pub fn step_count(&self) -> u32 {
        self.step_count
    }

    pub fn max_steps(&self) -> u32 {
        self.max_steps
    }

    pub fn time(&self) -> f64 {
        self.step_count as f64 * self.step_cfg.control_dt()
    }

    pub fn config(&self) -> &TaskConfig {
        &self.cfg
    }

    fn walking_start(&mut self) -> SurrogateState {
        let heading = self.rng.random_range(-PI..PI);
        let mut s = SurrogateState::standing(Vec2::zeros(), heading);
        if self.rsi {
            let speed = self.rng.random_range(0.0..=self.cfg.rsi_max_speed);
            s.root_vel = heading_dir(heading) * speed;
        }
        s.with_mode(self.kind.posture_mode())
    }

    /// Starts a new episode.
    pub fn reset(&mut self) {
        self.step_count = 0;
        self.iet_accum = 0;
        self.trajectory = None;
        self.object = None;
        let dt = self.step_cfg.control_dt();
        self.max_steps = (self.cfg.episode_seconds / dt).round() as u32;
        match self.kind {
            TaskKind::Sit | TaskKind::LieDown => {
                self.state = self.walking_start();
                let idx = self.rng.random_range(0..self.resources.objects.len());
                let base = self.resources.objects[idx].clone();
                let obj = randomize_object(
                    &base,
                    Vec2::zeros(),
                    &mut self.rng,
                    self.cfg.object_distance,
                    true,
                    None,
                )
                .expect("distance range validated");
                self.target = obj.sit_target;
                self.object = Some(obj);
            }
            TaskKind::GetUp | TaskKind::LieGetUp => {
                let db = self
                    .resources
                    .pose_db
                    .clone()
                    .expect("checked at construction");
                let (object, state) = db.sample(&mut self.rng);
                let angle = self.rng.random_range(-PI..PI);
                let rel = state.root_pos - object.center_xy();
                let obj = object.placed(Vec2::zeros(), object.yaw() + angle);
                let mut s = state.rotated(angle);
                s.root_pos = rotate2(rel, angle);
                s = s.with_mode(self.kind.posture_mode());
                self.target = if self.kind == TaskKind::GetUp {
                    getup_target(&s, &self.cfg)
                } else {
                    lie_getup_target(&s, &obj, &self.cfg)
                };
                self.state = s;
                self.object = Some(obj);
            }
            TaskKind::Follow => {
                self.state = self.walking_start();
                let start = self.state.frame();
                let traj = generate_training_trajectory(
                    &mut self.rng,
                    start,
                    &Bounds::square(40.0),
                    &self.cfg.trajectory,
                )
                .expect("open bounds always admit a trajectory");
                let end = traj.end();
                self.target = Vec3::new(end.x, end.y, self.state.root_height);
                self.max_steps =
                    ((traj.duration() + self.cfg.follow_slack_seconds) / dt).round() as u32;
                self.trajectory = Some(traj);
            }
        }
    }

    fn goal_source(&self) -> GoalSource<'_> {
        match (&self.object, &self.trajectory) {
            (Some(o), _) => GoalSource::Interaction {
                object: o,
                target: self.target,
            },
            (None, Some(t)) => GoalSource::Path {
                trajectory: t,
                time: self.time(),
            },
            _ => unreachable!("every episode has an object or a trajectory"),
        }
    }

    pub fn goal(&self) -> Vec<f64> {
        build_goal(&self.state, self.goal_source())
    }

    /// Observation followed by goal.
    pub fn features(&self) -> Vec<f64> {
        let mut f = observe(&self.state).to_vec();
        f.extend(self.goal());
        f
    }

    pub fn control_input<'a>(&'a self, features: &'a [f64]) -> ControlInput<'a> {
        ControlInput {
            kind: self.kind,
            state: &self.state,
            features,
            target: self.target,
            object: self.object.as_ref(),
            trajectory: self.trajectory.as_ref(),
            time: self.time(),
        }
    }

    /// Distance used for success: 3D root-to-target for interaction tasks,
    /// horizontal root-to-final-point for following.
    pub fn goal_error(&self) -> f64 {
        match &self.trajectory {
            Some(t) => (self.state.root_pos - t.end()).norm(),
            None => (self.state.root3() - self.target).norm(),
        }
    }

    fn task_reward(&self) -> f64 {
        task_reward(
            self.kind,
            &self.state,
            self.target,
            self.object.as_ref(),
            self.trajectory.as_ref(),
            self.time(),
            &self.cfg,
        )
    }

    /// Discriminator features of `(prev, next)`, conditioned on the object as
    /// seen from `prev`.
    pub fn disc_features(&self, prev: &SurrogateState, next: &SurrogateState) -> Vec<f64> {
        disc_features(prev, next, self.object.as_ref())
    }

    /// Applies one control action. The caller resets the environment after a
    /// terminal outcome.
    pub fn step(&mut self, action: &Action) -> StepOutcome {
        let prev = self.state;
        let result = character::step(&prev, action, &self.step_cfg, &self.scene);
        self.step_count += 1;
        let (next, faulted) = match result {
            Ok(s) => (s, false),
            Err(_) => (prev, true),
        };
        self.state = next;
        let disc_obs = self.disc_features(&prev, &next);
        let task_reward = self.task_reward();
        let mut iet = false;
        if self.kind.is_interaction() {
            let (acc, trig) = check_iet(self.iet_accum, next.root3(), self.target, &self.cfg);
            self.iet_accum = acc;
            iet = trig;
        }
        let path_point = self.trajectory.as_ref().map(|t| t.position_at(self.time()));
        let termination = if faulted {
            Termination::Fall
        } else {
            terminate(
                &next,
                path_point,
                iet,
                self.step_count,
                self.max_steps,
                &self.cfg,
            )
        };
        let error = self.goal_error();
        let success = termination.is_truncation() && error < self.cfg.success_radius;
        StepOutcome {
            task_reward,
            termination,
            success,
            error,
            disc_obs,
            episode_steps: self.step_count,
        }
    }
}

pub fn disc_features(
    prev: &SurrogateState,
    next: &SurrogateState,
    object: Option<&ObjectInstance>,
) -> Vec<f64> {
    let mut v = Vec::with_capacity(2 * OBS_DIM + OBJECT_FEATURES);
    v.extend_from_slice(&observe(prev));
    v.extend_from_slice(&observe(next));
    if let Some(o) = object {
        v.extend_from_slice(&object_goal_features(o, &prev.frame()));
    }
    v
}
