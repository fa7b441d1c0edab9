//! Least-squares motion discriminator: style reward, loss with gradient
//! penalty on reference samples, and the scripted reference-motion library.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::character::{Action, StepConfig, ACTION_DIM};
use crate::control::Controller;
use crate::error::ConfigError;
use crate::net::Mlp;
use crate::oracle::OracleController;
use crate::tasks::{EnvResources, TaskConfig, TaskEnv, TaskKind};

/// Lower bound that keeps style rewards strictly positive.
pub const STYLE_REWARD_FLOOR: f64 = 1e-4;

/// `max(ε, 1 − ¼ (D − 1)²)` for a raw discriminator output `D`.
pub fn style_reward(d: f64) -> f64 {
    (1.0 - 0.25 * (d - 1.0).powi(2)).max(STYLE_REWARD_FLOOR)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DiscLoss {
    pub reference: f64,
    pub agent: f64,
    pub penalty: f64,
}

impl DiscLoss {
    pub fn total(&self) -> f64 {
        self.reference + self.agent + self.penalty
    }
}

/// `E_ref (D − 1)² + E_agent (D + 1)² + (w/2) E_ref ‖∇ₓD‖²`, accumulating the
/// parameter gradient into `grad`.
pub fn discriminator_loss_grad(
    disc: &Mlp,
    reference: ArrayView2<'_, f64>,
    agent: ArrayView2<'_, f64>,
    gp_weight: f64,
    grad: &mut [f64],
) -> DiscLoss {
    let (dr, cr) = disc.forward_cached(reference);
    let nr = dr.nrows() as f64;
    let ref_loss = dr.iter().map(|d| (d - 1.0).powi(2)).sum::<f64>() / nr;
    let gr = dr.mapv(|d| 2.0 * (d - 1.0) / nr);
    disc.backward(&cr, gr.view(), grad);
    let penalty = disc.gradient_penalty(&cr, 0.5 * gp_weight, grad);

    let (da, ca) = disc.forward_cached(agent);
    let na = da.nrows() as f64;
    let agent_loss = da.iter().map(|d| (d + 1.0).powi(2)).sum::<f64>() / na;
    let ga = da.mapv(|d| 2.0 * (d + 1.0) / na);
    disc.backward(&ca, ga.view(), grad);
    DiscLoss {
        reference: ref_loss,
        agent: agent_loss,
        penalty,
    }
}

/// Settled steps recorded at the end of each scripted interaction clip.
pub const REFERENCE_CLIP_SETTLE_STEPS: u32 = 30;

/// Oracle actions with Gaussian jitter, so the reference set covers a band
/// around the scripted motion rather than a single curve.
struct NoisyOracle {
    inner: OracleController,
    noise: f64,
    seed: u64,
}

impl Controller for NoisyOracle {
    fn act_batch(&self, inputs: &[crate::control::ControlInput<'_>]) -> Vec<Action> {
        let clean = self.inner.act_batch(inputs);
        clean
            .into_iter()
            .zip(inputs)
            .map(|(a, inp)| {
                let mut h = self.seed ^ inp.time.to_bits();
                h ^= inp.state.root_pos.x.to_bits().rotate_left(17)
                    ^ inp.state.root_pos.y.to_bits().rotate_left(31);
                let mut rng = ChaCha8Rng::seed_from_u64(h);
                let mut v = a.to_array();
                for x in v.iter_mut().take(ACTION_DIM) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *x += self.noise * z;
                }
                Action::from_slice(&v).clamped()
            })
            .collect()
    }
}

/// Library of discriminator inputs recorded from scripted episodes.
#[derive(Debug, Clone)]
pub struct ReferenceMotionSource {
    transitions: Array2<f64>,
}

impl ReferenceMotionSource {
    /// Runs `episodes` scripted episodes of `kind` and keeps every transition.
    /// Interaction clips always end 30 in-radius steps after arrival,
    /// whatever early-termination setting the policy is trained with, so
    /// the library stays a fixed set of approach-and-settle clips.
    pub fn generate(
        kind: TaskKind,
        task_cfg: &TaskConfig,
        resources: &EnvResources,
        episodes: usize,
        noise: f64,
        seed: u64,
    ) -> Result<Self, ConfigError> {
        let clip_cfg = TaskConfig {
            iet_steps: REFERENCE_CLIP_SETTLE_STEPS,
            ..*task_cfg
        };
        let mut env = TaskEnv::new(
            kind,
            clip_cfg,
            StepConfig::default(),
            resources.clone(),
            seed,
            true,
        )?;
        let ctrl = NoisyOracle {
            inner: OracleController::default(),
            noise,
            seed,
        };
        let mut rows: Vec<f64> = Vec::new();
        let mut done = 0;
        while done < episodes {
            let f = env.features();
            let a = ctrl.act(&env.control_input(&f));
            let o = env.step(&a);
            debug_assert!(env.state().is_finite());
            rows.extend_from_slice(&o.disc_obs);
            if o.termination.is_done() {
                done += 1;
                env.reset();
            }
        }
        let dim = kind.disc_dim();
        let n = rows.len() / dim;
        Ok(Self {
            transitions: Array2::from_shape_vec((n, dim), rows).expect("rectangular"),
        })
    }

    pub fn len(&self) -> usize {
        self.transitions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn transitions(&self) -> ArrayView2<'_, f64> {
        self.transitions.view()
    }

    /// Uniform draw with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Array2<f64> {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..self.len())).collect();
        self.transitions.select(Axis(0), &idx)
    }
}
