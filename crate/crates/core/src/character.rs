//! Surrogate character: a planar root body with a vertical height channel and
//! a posture scalar, integrated at 60 Hz and controlled at 30 Hz.

use serde::{Deserialize, Serialize};

use crate::error::SimFault;
use crate::geom::{heading_dir, normalize_angle, rotate2, Pose2D, Rotation6D, Vec2, Vec3};
use crate::scene::Scene;

pub const STAND_ROOT_HEIGHT: f64 = 0.9;
pub const STAND_HEAD_HEIGHT: f64 = 1.65;
const TORSO: f64 = STAND_HEAD_HEIGHT - STAND_ROOT_HEIGHT;
/// Extra forward lean of the head at full seated posture.
const SEATED_SLOUCH: f64 = 0.10;
pub const FALL_HEIGHT: f64 = 0.15;

pub const OBS_DIM: usize = 13;
pub const ACTION_DIM: usize = 5;

/// How the posture scalar maps onto head and foot heights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PostureMode {
    /// Torso stays upright as posture rises; feet stay on the floor.
    #[default]
    Sit,
    /// Torso tips to horizontal as posture rises; feet lift with the body.
    Lie,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateState {
    pub root_pos: Vec2,
    pub root_height: f64,
    pub heading: f64,
    pub root_vel: Vec2,
    pub yaw_rate: f64,
    /// 0 = standing, 1 = fully seated or lying.
    pub posture: f64,
    pub mode: PostureMode,
    pub head_height: f64,
    pub foot_height: f64,
}

impl SurrogateState {
    /// At rest, upright, nominal standing height.
    pub fn standing(root_pos: Vec2, heading: f64) -> Self {
        let mut s = Self {
            root_pos,
            root_height: STAND_ROOT_HEIGHT,
            heading: normalize_angle(heading),
            root_vel: Vec2::zeros(),
            yaw_rate: 0.0,
            posture: 0.0,
            mode: PostureMode::Sit,
            head_height: 0.0,
            foot_height: 0.0,
        };
        s.refresh_derived();
        s
    }

    /// Recomputes head and foot heights from root height, posture and mode.
    pub fn refresh_derived(&mut self) {
        self.posture = self.posture.clamp(0.0, 1.0);
        match self.mode {
            PostureMode::Sit => {
                self.head_height = self.root_height + TORSO - SEATED_SLOUCH * self.posture;
                self.foot_height = 0.0;
            }
            PostureMode::Lie => {
                self.head_height = self.root_height + TORSO * (1.0 - self.posture);
                self.foot_height = (self.posture * (self.root_height - 0.1)).max(0.0);
            }
        }
    }

    pub fn with_mode(mut self, mode: PostureMode) -> Self {
        self.mode = mode;
        self.refresh_derived();
        self
    }

    pub fn frame(&self) -> Pose2D {
        Pose2D::new(self.root_pos, self.heading)
    }

    /// Root position including height.
    pub fn root3(&self) -> Vec3 {
        Vec3::new(self.root_pos.x, self.root_pos.y, self.root_height)
    }

    pub fn speed(&self) -> f64 {
        self.root_vel.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.root_pos.iter().all(|v| v.is_finite())
            && self.root_vel.iter().all(|v| v.is_finite())
            && [
                self.root_height,
                self.heading,
                self.yaw_rate,
                self.posture,
                self.head_height,
                self.foot_height,
            ]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn translated(&self, delta: Vec2) -> Self {
        Self {
            root_pos: self.root_pos + delta,
            ..*self
        }
    }

    /// Rigid rotation of the whole state about the world origin.
    pub fn rotated(&self, angle: f64) -> Self {
        Self {
            root_pos: rotate2(self.root_pos, angle),
            root_vel: rotate2(self.root_vel, angle),
            heading: normalize_angle(self.heading + angle),
            ..*self
        }
    }
}

/// Normalized control command. Each channel is clamped to `[-1, 1]` and then
/// scaled by its gain in [`ActionGains`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub forward_accel: f64,
    pub lateral_accel: f64,
    pub turn_rate: f64,
    pub posture_rate: f64,
    pub height_rate: f64,
}

impl Action {
    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            forward_accel: v[0],
            lateral_accel: v[1],
            turn_rate: v[2],
            posture_rate: v[3],
            height_rate: v[4],
        }
    }

    pub fn to_array(self) -> [f64; ACTION_DIM] {
        [
            self.forward_accel,
            self.lateral_accel,
            self.turn_rate,
            self.posture_rate,
            self.height_rate,
        ]
    }

    pub fn clamped(self) -> Self {
        let a = self.to_array().map(|v| v.clamp(-1.0, 1.0));
        Self::from_slice(&a)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActionGains {
    /// m/s²
    pub forward: f64,
    /// m/s²
    pub lateral: f64,
    /// rad/s
    pub turn: f64,
    /// 1/s
    pub posture: f64,
    /// m/s
    pub height: f64,
}

impl Default for ActionGains {
    fn default() -> Self {
        Self {
            forward: 4.0,
            lateral: 2.0,
            turn: 3.0,
            posture: 1.5,
            height: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepConfig {
    pub sim_dt: f64,
    pub control_every: u32,
    pub max_speed: f64,
    /// Collision radius of the root body.
    pub radius: f64,
    pub max_root_height: f64,
    pub gains: ActionGains,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            sim_dt: 1.0 / 60.0,
            control_every: 2,
            max_speed: 2.0,
            radius: 0.25,
            max_root_height: 0.95,
            gains: ActionGains::default(),
        }
    }
}

impl StepConfig {
    pub fn control_dt(&self) -> f64 {
        self.sim_dt * self.control_every as f64
    }

    pub fn control_hz(&self) -> f64 {
        1.0 / self.control_dt()
    }
}

/// Advances one control step (`control_every` semi-implicit Euler substeps).
pub fn step(
    state: &SurrogateState,
    action: &Action,
    cfg: &StepConfig,
    scene: &Scene,
) -> Result<SurrogateState, SimFault> {
    if !state.is_finite() {
        return Err(SimFault("non-finite state"));
    }
    if !action.is_finite() {
        return Err(SimFault("non-finite action"));
    }
    let a = action.clamped();
    let g = &cfg.gains;
    let dt = cfg.sim_dt;
    let mut s = *state;
    for _ in 0..cfg.control_every {
        let accel = rotate2(
            Vec2::new(a.forward_accel * g.forward, a.lateral_accel * g.lateral),
            s.heading,
        );
        s.yaw_rate = a.turn_rate * g.turn;
        s.root_vel += accel * dt;
        let speed = s.root_vel.norm();
        if speed > cfg.max_speed {
            s.root_vel *= cfg.max_speed / speed;
        }
        s.heading = normalize_angle(s.heading + s.yaw_rate * dt);
        s.root_pos += s.root_vel * dt;
        resolve_collisions(&mut s, scene, cfg.radius);
        s.posture = (s.posture + a.posture_rate * g.posture * dt).clamp(0.0, 1.0);
        s.root_height =
            (s.root_height + a.height_rate * g.height * dt).clamp(0.0, cfg.max_root_height);
    }
    s.refresh_derived();
    if !s.is_finite() {
        return Err(SimFault("integration diverged"));
    }
    Ok(s)
}

/// Pushes the root disc out of obstacle footprints and removes the inward
/// velocity component so the body slides along the surface.
fn resolve_collisions(s: &mut SurrogateState, scene: &Scene, radius: f64) {
    for _ in 0..3 {
        let mut moved = false;
        for ob in scene.obstacles() {
            let (closest, dist) = ob.closest_xy(s.root_pos);
            let normal = if dist == 0.0 {
                let (n, depth) = ob.exit_xy(s.root_pos);
                s.root_pos += n * (depth + radius);
                n
            } else if dist < radius {
                let n = (s.root_pos - closest) / dist;
                s.root_pos = closest + n * radius;
                n
            } else {
                continue;
            };
            let vn = s.root_vel.dot(&normal);
            if vn < 0.0 {
                s.root_vel -= normal * vn;
            }
            moved = true;
        }
        if !moved {
            break;
        }
    }
}

/// Fixed-layout proprioceptive observation:
///
/// | index | content                          |
/// |-------|----------------------------------|
/// | 0     | root height (world)              |
/// | 1..7  | heading as 6D rotation           |
/// | 7..9  | root velocity in the local frame |
/// | 9     | yaw rate                         |
/// | 10    | posture                          |
/// | 11    | head height                      |
/// | 12    | foot height                      |
pub fn observe(state: &SurrogateState) -> [f64; OBS_DIM] {
    let r = Rotation6D::from_yaw(state.heading).0;
    let v = state.frame().dir_to_local(state.root_vel);
    [
        state.root_height,
        r[0],
        r[1],
        r[2],
        r[3],
        r[4],
        r[5],
        v.x,
        v.y,
        state.yaw_rate,
        state.posture,
        state.head_height,
        state.foot_height,
    ]
}

/// Collapsed to the floor without sitting, or numerically broken.
pub fn detect_fall(state: &SurrogateState) -> bool {
    !state.is_finite() || (state.root_height < FALL_HEIGHT && state.posture < 0.5)
}

/// Unit vector along the character's heading.
pub fn facing(state: &SurrogateState) -> Vec2 {
    heading_dir(state.heading)
}
