//! Clipped-surrogate policy update and value regression.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::net::{clip_grad_norm, Adam, GaussianPolicy, Mlp};

/// Per-sample clipped surrogate `−min(r·A, clip(r, 1−ε, 1+ε)·A)` and its
/// derivative with respect to the ratio `r`.
pub fn surrogate(ratio: f64, advantage: f64, eps: f64) -> (f64, f64) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    if unclipped <= clipped {
        (-unclipped, -advantage)
    } else {
        // the clipped branch is the minimum: flat in the ratio
        (-clipped, 0.0)
    }
}

/// Normalizes to zero mean and unit variance in place.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len().max(1) as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var.sqrt() + 1e-8);
    adv.iter_mut().for_each(|a| *a = (*a - mean) * inv);
}

/// Flattened rollout data consumed by one update.
#[derive(Debug, Clone, Copy)]
pub struct PpoBatch<'a> {
    /// Normalized features, one row per transition.
    pub obs: ArrayView2<'a, f64>,
    pub actions: ArrayView2<'a, f64>,
    pub log_probs: &'a [f64],
    /// Already normalized.
    pub advantages: &'a [f64],
    /// Value targets in the value network's output units.
    pub returns: &'a [f64],
}

#[derive(Debug, Clone, Copy)]
pub struct PpoParams {
    pub clip: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub max_grad_norm: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoLosses {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    /// Set when a non-finite loss aborted the update.
    pub aborted: bool,
}

fn gather(x: &ArrayView2<'_, f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}

/// Policy-gradient loss and its gradient for one minibatch; returns
/// `(loss, clip_fraction)` and accumulates parameter gradients into `grad`.
pub fn policy_loss_grad(
    policy: &GaussianPolicy,
    obs: ArrayView2<'_, f64>,
    actions: ArrayView2<'_, f64>,
    old_log_probs: &[f64],
    advantages: &[f64],
    clip: f64,
    grad: &mut [f64],
) -> (f64, f64) {
    let m = obs.nrows();
    let (mean, cache) = policy.mean.forward_cached(obs);
    let mut dout = Array2::zeros(mean.dim());
    let mut loss = 0.0;
    let mut clipped = 0usize;
    let mut dmu = vec![0.0; policy.action_dim()];
    for i in 0..m {
        let mu = mean.row(i);
        let mu = mu.as_slice().expect("row");
        let a = actions.row(i);
        let a = a.as_slice().expect("row");
        let ratio = (policy.log_prob(mu, a) - old_log_probs[i]).exp();
        let (l, dl_dr) = surrogate(ratio, advantages[i], clip);
        loss += l;
        if dl_dr == 0.0 {
            clipped += 1;
            continue;
        }
        policy.log_prob_grad_mean(mu, a, &mut dmu);
        let scale = dl_dr * ratio / m as f64;
        for j in 0..dmu.len() {
            dout[(i, j)] = scale * dmu[j];
        }
    }
    policy.mean.backward(&cache, dout.view(), grad);
    (loss / m as f64, clipped as f64 / m as f64)
}

/// `mean ½ (V − R)²` and its gradient.
pub fn value_loss_grad(
    value: &Mlp,
    obs: ArrayView2<'_, f64>,
    returns: &[f64],
    grad: &mut [f64],
) -> f64 {
    let m = obs.nrows() as f64;
    let (v, cache) = value.forward_cached(obs);
    let mut dout = Array2::zeros(v.dim());
    let mut loss = 0.0;
    for i in 0..v.nrows() {
        let e = v[(i, 0)] - returns[i];
        loss += 0.5 * e * e;
        dout[(i, 0)] = e / m;
    }
    value.backward(&cache, dout.view(), grad);
    loss / m
}

/// Several epochs of shuffled minibatch updates. A non-finite loss restores
/// the parameters and optimizer state from before the call.
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut GaussianPolicy,
    value: &mut Mlp,
    policy_opt: &mut Adam,
    value_opt: &mut Adam,
    batch: &PpoBatch<'_>,
    params: &PpoParams,
    rng: &mut R,
) -> PpoLosses {
    let saved = (
        policy.clone(),
        value.clone(),
        policy_opt.clone(),
        value_opt.clone(),
    );
    let n = batch.obs.nrows();
    let mb = params.minibatch.clamp(1, n.max(1));
    let mut order: Vec<usize> = (0..n).collect();
    let mut out = PpoLosses::default();
    let mut count = 0.0;
    let mut pgrad = vec![0.0; policy.mean.num_params()];
    let mut vgrad = vec![0.0; value.num_params()];
    for _ in 0..params.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(mb) {
            let obs = gather(&batch.obs, chunk);
            let act = gather(&batch.actions, chunk);
            let lp: Vec<f64> = chunk.iter().map(|&i| batch.log_probs[i]).collect();
            let adv: Vec<f64> = chunk.iter().map(|&i| batch.advantages[i]).collect();
            let ret: Vec<f64> = chunk.iter().map(|&i| batch.returns[i]).collect();
            pgrad.iter_mut().for_each(|g| *g = 0.0);
            vgrad.iter_mut().for_each(|g| *g = 0.0);
            let (pl, cf) = policy_loss_grad(
                policy,
                obs.view(),
                act.view(),
                &lp,
                &adv,
                params.clip,
                &mut pgrad,
            );
            let vl = value_loss_grad(value, obs.view(), &ret, &mut vgrad);
            let finite = pl.is_finite()
                && vl.is_finite()
                && pgrad.iter().chain(&vgrad).all(|g| g.is_finite());
            if !finite {
                log::warn!("non-finite PPO loss; update skipped and parameters restored");
                (*policy, *value, *policy_opt, *value_opt) = saved;
                return PpoLosses {
                    policy_loss: f64::NAN,
                    value_loss: f64::NAN,
                    clip_fraction: 0.0,
                    aborted: true,
                };
            }
            clip_grad_norm(&mut pgrad, params.max_grad_norm);
            clip_grad_norm(&mut vgrad, params.max_grad_norm);
            policy_opt.step(policy.mean.params_mut(), &pgrad);
            value_opt.step(value.params_mut(), &vgrad);
            out.policy_loss += pl;
            out.value_loss += vl;
            out.clip_fraction += cf;
            count += 1.0;
        }
    }
    if count > 0.0 {
        out.policy_loss /= count;
        out.value_loss /= count;
        out.clip_fraction /= count;
    }
    out
}
