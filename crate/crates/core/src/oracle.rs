//! Scripted reference controllers. They read privileged task information
//! (target, object, trajectory) and track it with simple velocity and posture
//! feedback. They serve as motion-data generators for the style
//! discriminator and as upper baselines in evaluation.

use crate::character::{Action, ActionGains, SurrogateState};
use crate::control::{ControlInput, Controller};
use crate::geom::{normalize_angle, rotate2, Vec2};
use crate::planner::TRAJ_DT;
use crate::tasks::TaskKind;

/// Feedback gains shared by all scripted behaviours.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleGains {
    pub cruise_speed: f64,
    /// Proportional gain from distance to desired approach speed, 1/s.
    pub approach_gain: f64,
    /// Velocity error time constant, s.
    pub velocity_tau: f64,
    pub heading_gain: f64,
    pub height_gain: f64,
    pub posture_gain: f64,
    /// Horizontal distance under which the character starts to settle.
    pub settle_radius: f64,
    /// Path-position feedback gain while following, 1/s.
    pub path_gain: f64,
}

impl Default for OracleGains {
    fn default() -> Self {
        Self {
            cruise_speed: 1.5,
            approach_gain: 2.0,
            velocity_tau: 0.15,
            heading_gain: 4.0,
            height_gain: 4.0,
            posture_gain: 4.0,
            settle_radius: 0.35,
            path_gain: 1.5,
        }
    }
}

/// Desired motion for one control step.
#[derive(Debug, Clone, Copy)]
struct Intent {
    velocity: Vec2,
    heading: f64,
    height: f64,
    posture: f64,
}

/// Scripted controller for every task kind.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleController {
    pub gains: OracleGains,
    pub action_gains: ActionGains,
}

impl OracleController {
    fn track(&self, s: &SurrogateState, intent: Intent) -> Action {
        let g = &self.action_gains;
        let accel = (intent.velocity - s.root_vel) / self.gains.velocity_tau;
        let local = rotate2(accel, -s.heading);
        let turn = normalize_angle(intent.heading - s.heading) * self.gains.heading_gain;
        Action {
            forward_accel: local.x / g.forward,
            lateral_accel: local.y / g.lateral,
            turn_rate: turn / g.turn,
            posture_rate: (intent.posture - s.posture) * self.gains.posture_gain / g.posture,
            height_rate: (intent.height - s.root_height) * self.gains.height_gain / g.height,
        }
        .clamped()
    }

    fn approach(&self, s: &SurrogateState, goal: Vec2, final_heading: f64) -> (Vec2, f64, f64) {
        let d = goal - s.root_pos;
        let dist = d.norm();
        let speed = (dist * self.gains.approach_gain).min(self.gains.cruise_speed);
        let vel = if dist > 1e-9 {
            d / dist * speed
        } else {
            Vec2::zeros()
        };
        let heading = if dist > self.gains.settle_radius {
            d.y.atan2(d.x)
        } else {
            final_heading
        };
        (vel, heading, dist)
    }

    fn intent(&self, inp: &ControlInput<'_>) -> Intent {
        let s = inp.state;
        let target = inp.target;
        let goal = target.xy();
        match inp.kind {
            TaskKind::Sit | TaskKind::LieDown => {
                let facing = inp.object.map_or(s.heading, |o| o.yaw());
                let (velocity, heading, dist) = self.approach(s, goal, facing);
                let settling = dist < self.gains.settle_radius;
                Intent {
                    velocity,
                    heading,
                    height: if settling {
                        target.z
                    } else {
                        crate::character::STAND_ROOT_HEIGHT
                    },
                    posture: if settling { 1.0 } else { 0.0 },
                }
            }
            TaskKind::GetUp | TaskKind::LieGetUp => {
                // rise first, then step to the standing point
                let risen = s.posture < 0.3;
                let (velocity, heading, _) = self.approach(s, goal, s.heading);
                Intent {
                    velocity: if risen { velocity } else { Vec2::zeros() },
                    heading: if risen { heading } else { s.heading },
                    height: target.z,
                    posture: 0.0,
                }
            }
            TaskKind::Follow => {
                let traj = inp.trajectory.expect("follow input carries a trajectory");
                let p_now = traj.position_at(inp.time);
                let p_next = traj.position_at(inp.time + TRAJ_DT);
                let feed = (p_next - p_now) / TRAJ_DT;
                let velocity = feed + (p_now - s.root_pos) * self.gains.path_gain;
                let heading = if velocity.norm() > 0.2 {
                    velocity.y.atan2(velocity.x)
                } else {
                    s.heading
                };
                Intent {
                    velocity,
                    heading,
                    height: crate::character::STAND_ROOT_HEIGHT,
                    posture: 0.0,
                }
            }
        }
    }
}

impl Controller for OracleController {
    fn act_batch(&self, inputs: &[ControlInput<'_>]) -> Vec<Action> {
        inputs
            .iter()
            .map(|inp| self.track(inp.state, self.intent(inp)))
            .collect()
    }
}
