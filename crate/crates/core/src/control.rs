//! Common interface for anything that maps a task observation to an action:
//! learned policies and scripted reference controllers alike.

use crate::character::{Action, SurrogateState};
use crate::geom::Vec3;
use crate::planner::Trajectory;
use crate::scene::ObjectInstance;
use crate::tasks::TaskKind;

/// Everything a controller may look at for one decision. Learned policies
/// read only `features`; scripted controllers use the privileged fields.
#[derive(Debug, Clone, Copy)]
pub struct ControlInput<'a> {
    pub kind: TaskKind,
    pub state: &'a SurrogateState,
    /// Proprioceptive observation followed by the goal vector.
    pub features: &'a [f64],
    pub target: Vec3,
    pub object: Option<&'a ObjectInstance>,
    pub trajectory: Option<&'a Trajectory>,
    /// Seconds since the episode (or scheduled action) started.
    pub time: f64,
}

pub trait Controller: Send + Sync {
    fn act_batch(&self, inputs: &[ControlInput<'_>]) -> Vec<Action>;

    fn act(&self, input: &ControlInput<'_>) -> Action {
        self.act_batch(std::slice::from_ref(input))[0]
    }
}

/// Always outputs the zero action.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdleController;

impl Controller for IdleController {
    fn act_batch(&self, inputs: &[ControlInput<'_>]) -> Vec<Action> {
        vec![Action::default(); inputs.len()]
    }
}

/// Uniform random actions, a null baseline. Deterministic per input through a
/// hash of the state so batches stay reproducible.
#[derive(Debug, Clone, Copy)]
pub struct RandomController {
    pub seed: u64,
}

impl Controller for RandomController {
    fn act_batch(&self, inputs: &[ControlInput<'_>]) -> Vec<Action> {
        use rand::{Rng, SeedableRng};
        inputs
            .iter()
            .map(|inp| {
                let mut h = self.seed;
                for v in inp.features {
                    h = h.rotate_left(5) ^ v.to_bits();
                    h = h.wrapping_mul(0x9E37_79B9_7F4A_7C15);
                }
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(h);
                let a: [f64; 5] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                Action::from_slice(&a)
            })
            .collect()
    }
}
