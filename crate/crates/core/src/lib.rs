//! Location-task character control: a surrogate character, task rewards,
//! PPO with adversarial style rewards, grid path planning, and a rule-based
//! scheduler that chains trained skills into long-horizon plans.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod character;
pub mod control;
pub mod error;
pub mod eval;
pub mod geom;
pub mod net;
pub mod oracle;
pub mod planner;
pub mod scene;
pub mod scheduler;
pub mod tasks;
pub mod trainer;

pub use character::{Action, PostureMode, StepConfig, SurrogateState};
pub use control::{ControlInput, Controller};
pub use error::{ConfigError, GeomError, NetError, PlanError, SceneError, SimFault, TrainError};
pub use geom::{OrientedBox, Pose2D, Rotation6D, Vec2, Vec3};
pub use planner::{GridPath, Trajectory};
pub use scene::{ObjectCatalog, ObjectCategory, ObjectInstance, OccupancyGrid, Scene};
pub use scheduler::{ActionSpec, Instruction, PoseDatabase, SkillSet};
pub use tasks::{TaskConfig, TaskEnv, TaskKind, Termination};
