//! Generalized advantage estimation over a `horizon × envs` rollout.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Backward GAE recursion. Row `t` of each input holds step `t` for every
/// environment; `dones[t][e]` marks that the transition ended an episode, in
/// which case nothing is propagated across it. `bootstrap` is the value of the
/// state following the last row. Returns `(advantages, returns)` with
/// `returns = advantages + values`.
pub fn compute_gae(
    rewards: ArrayView2<'_, f64>,
    values: ArrayView2<'_, f64>,
    dones: ArrayView2<'_, bool>,
    bootstrap: ArrayView1<'_, f64>,
    gamma: f64,
    lambda: f64,
) -> (Array2<f64>, Array2<f64>) {
    let (horizon, envs) = rewards.dim();
    assert_eq!(values.dim(), (horizon, envs));
    assert_eq!(dones.dim(), (horizon, envs));
    assert_eq!(bootstrap.len(), envs);
    let mut adv = Array2::zeros((horizon, envs));
    let mut running = Array1::<f64>::zeros(envs);
    for t in (0..horizon).rev() {
        for e in 0..envs {
            let next_v = if t + 1 == horizon {
                bootstrap[e]
            } else {
                values[(t + 1, e)]
            };
            let live = if dones[(t, e)] { 0.0 } else { 1.0 };
            let delta = rewards[(t, e)] + gamma * next_v * live - values[(t, e)];
            running[e] = delta + gamma * lambda * live * running[e];
            adv[(t, e)] = running[e];
        }
    }
    let returns = &adv + &values;
    (adv, returns)
}
