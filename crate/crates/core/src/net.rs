//! Small dense networks with hand-written backpropagation: ReLU MLPs over a
//! flat parameter vector, a fixed-variance Gaussian policy head, input-gradient
//! penalties for the discriminator, Adam, and running observation statistics.

use nalgebra::DMatrix;
use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::NetError;

/// ReLU MLP with a linear output layer. Parameters are stored layer by
/// layer as `W (out × in)` row-major followed by `b (out)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations kept from a forward pass: `acts[0]` is the input, `acts[l]`
/// the output of hidden layer `l − 1`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    acts: Vec<Array2<f64>>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Random orthogonal `rows × cols` matrix scaled by `gain`.
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let (n, m) = (rows.max(cols), rows.min(cols));
    let a = DMatrix::<f64>::from_fn(n, m, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..m {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let q = if rows >= cols { q } else { q.transpose() };
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(gain * q[(i, j)]);
        }
    }
    out
}

impl Mlp {
    /// Orthogonal weights (gain √2 on hidden layers, `output_gain` on the
    /// last), zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output_gain: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let mut params = Vec::with_capacity(param_count(sizes));
        let layers = sizes.len() - 1;
        for (l, w) in sizes.windows(2).enumerate() {
            let gain = if l + 1 == layers {
                output_gain
            } else {
                std::f64::consts::SQRT_2
            };
            params.extend(orthogonal(w[1], w[0], gain, rng));
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Self {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self, NetError> {
        if sizes.len() < 2 || param_count(sizes) != params.len() {
            return Err(NetError::Shape(format!(
                "sizes {sizes:?} need {} parameters, got {}",
                param_count(sizes),
                params.len()
            )));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self, l: usize) -> (usize, usize, usize, usize) {
        let w_off: usize = param_count(&self.sizes[..=l]);
        let (inp, out) = (self.sizes[l], self.sizes[l + 1]);
        (w_off, w_off + inp * out, inp, out)
    }

    fn weight(&self, l: usize) -> ArrayView2<'_, f64> {
        let (w, b, inp, out) = self.offsets(l);
        ArrayView2::from_shape((out, inp), &self.params[w..b]).expect("layer shape")
    }

    fn bias(&self, l: usize) -> ArrayView1<'_, f64> {
        let (_, b, _, out) = self.offsets(l);
        ArrayView1::from(&self.params[b..b + out])
    }

    fn grad_views<'g>(
        &self,
        l: usize,
        grad: &'g mut [f64],
    ) -> (ArrayViewMut2<'g, f64>, ArrayViewMut1<'g, f64>) {
        let (w, b, inp, out) = self.offsets(l);
        let (gw, gb) = grad[w..b + out].split_at_mut(b - w);
        (
            ArrayViewMut2::from_shape((out, inp), gw).expect("layer shape"),
            ArrayViewMut1::from(gb),
        )
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) {
        assert_eq!(x.ncols(), self.input_dim(), "input width");
    }

    fn layer_forward(&self, l: usize, x: &ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weight(l).t());
        z += &self.bias(l);
        if l + 1 < self.num_layers() {
            z.mapv_inplace(|v| v.max(0.0));
        }
        z
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.check_input(&x);
        let mut a = self.layer_forward(0, &x);
        for l in 1..self.num_layers() {
            a = self.layer_forward(l, &a.view());
        }
        a
    }

    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        let v = ArrayView2::from_shape((1, x.len()), x).expect("row");
        self.forward(v).into_raw_vec_and_offset().0
    }

    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, ForwardCache) {
        self.check_input(&x);
        let mut acts = vec![x.to_owned()];
        for l in 0..self.num_layers() - 1 {
            let a = self.layer_forward(l, &acts[l].view());
            acts.push(a);
        }
        let out = self.layer_forward(self.num_layers() - 1, &acts.last().unwrap().view());
        (out, ForwardCache { acts })
    }

    /// Accumulates `∂L/∂θ` into `grad` given `dout = ∂L/∂output`, returns `∂L/∂x`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        dout: ArrayView2<'_, f64>,
        grad: &mut [f64],
    ) -> Array2<f64> {
        assert_eq!(grad.len(), self.num_params());
        let mut g = dout.to_owned();
        for l in (0..self.num_layers()).rev() {
            let a_in = &cache.acts[l];
            {
                let (mut gw, mut gb) = self.grad_views(l, grad);
                general_mat_mul(1.0, &g.t(), a_in, 1.0, &mut gw);
                gb += &g.sum_axis(Axis(0));
            }
            let mut da = g.dot(&self.weight(l));
            if l > 0 {
                da.zip_mut_with(a_in, |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
            }
            g = da;
        }
        g
    }

    /// Per-sample input gradient of a scalar-output network, plus the
    /// intermediate back-signals `h_l` of the backward chain.
    fn input_gradient_chain(&self, cache: &ForwardCache) -> (Array2<f64>, Vec<Array2<f64>>) {
        assert_eq!(self.output_dim(), 1, "input gradients need a scalar output");
        let n = cache.acts[0].nrows();
        let layers = self.num_layers();
        let mut hs = vec![Array2::zeros((0, 0)); layers];
        hs[layers - 1] = Array2::ones((n, 1));
        for l in (1..layers).rev() {
            let mut q = hs[l].dot(&self.weight(l));
            q.zip_mut_with(&cache.acts[l], |d, &a| {
                if a <= 0.0 {
                    *d = 0.0
                }
            });
            hs[l - 1] = q;
        }
        let gx = hs[0].dot(&self.weight(0));
        (gx, hs)
    }

    /// `∂D/∂x` per row for a scalar-output network.
    pub fn input_gradient(&self, cache: &ForwardCache) -> Array2<f64> {
        self.input_gradient_chain(cache).0
    }

    /// Adds `weight · mean_i ‖∂D/∂x_i‖²` to the objective: accumulates its
    /// parameter gradient into `grad` and returns its value. ReLU masks are
    /// piecewise constant, so biases do not contribute.
    #[allow(clippy::needless_range_loop)]
    pub fn gradient_penalty(&self, cache: &ForwardCache, weight: f64, grad: &mut [f64]) -> f64 {
        let (gx, hs) = self.input_gradient_chain(cache);
        let n = gx.nrows().max(1) as f64;
        let penalty = gx.iter().map(|v| v * v).sum::<f64>() / n;
        let v = gx * (2.0 * weight / n);
        {
            let (mut gw, _) = self.grad_views(0, grad);
            general_mat_mul(1.0, &hs[0].t(), &v, 1.0, &mut gw);
        }
        let mut dh = v.dot(&self.weight(0).t());
        for l in 1..self.num_layers() {
            dh.zip_mut_with(&cache.acts[l], |d, &a| {
                if a <= 0.0 {
                    *d = 0.0
                }
            });
            {
                let (mut gw, _) = self.grad_views(l, grad);
                general_mat_mul(1.0, &hs[l].t(), &dh, 1.0, &mut gw);
            }
            dh = dh.dot(&self.weight(l).t());
        }
        weight * penalty
    }
}

pub const LOG_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Diagonal Gaussian with a state-dependent mean and a fixed standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub mean: Mlp,
    pub std: f64,
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], std: f64, rng: &mut R) -> Self {
        Self {
            mean: Mlp::new(sizes, 0.01, rng),
            std,
        }
    }

    pub fn action_dim(&self) -> usize {
        self.mean.output_dim()
    }

    pub fn log_prob(&self, mean: &[f64], action: &[f64]) -> f64 {
        let inv = 1.0 / self.std;
        mean.iter()
            .zip(action)
            .map(|(m, a)| -0.5 * ((a - m) * inv).powi(2) - self.std.ln() - LOG_SQRT_2PI)
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, mean: &[f64], rng: &mut R) -> Vec<f64> {
        mean.iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(rng);
                m + self.std * z
            })
            .collect()
    }

    /// `∂ log π(a) / ∂μ`.
    pub fn log_prob_grad_mean(&self, mean: &[f64], action: &[f64], out: &mut [f64]) {
        let inv2 = 1.0 / (self.std * self.std);
        for ((o, m), a) in out.iter_mut().zip(mean).zip(action) {
            *o = (a - m) * inv2;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Rescales `grad` in place so its L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Running mean and variance, merged batch-wise (Chan et al. parallel update).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalizer {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: f64,
    pub clip: f64,
}

impl ObsNormalizer {
    pub fn new(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            count: 1e-4,
            clip: 5.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, batch: ArrayView2<'_, f64>) {
        let n = batch.nrows() as f64;
        if n == 0.0 {
            return;
        }
        let bm = batch.mean_axis(Axis(0)).expect("non-empty");
        let bv = batch.var_axis(Axis(0), 0.0);
        let total = self.count + n;
        for i in 0..self.dim() {
            let delta = bm[i] - self.mean[i];
            let m2 = self.var[i] * self.count + bv[i] * n + delta * delta * self.count * n / total;
            self.mean[i] += delta * n / total;
            self.var[i] = m2 / total;
        }
        self.count = total;
    }

    pub fn normalize_into(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            let z = (x[i] - self.mean[i]) / (self.var[i] + 1e-8).sqrt();
            out[i] = z.clamp(-self.clip, self.clip);
        }
    }

    pub fn normalize(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            let r = row.as_slice_mut().expect("standard layout");
            let copy = r.to_vec();
            self.normalize_into(&copy, r);
        }
        out
    }
}

/// Mean of each column; helper for tests and metrics.
pub fn column_means(x: &Array2<f64>) -> Array1<f64> {
    x.mean_axis(Axis(0))
        .unwrap_or_else(|| Array1::zeros(x.ncols()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    fn random_input(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn orthogonal_init_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = orthogonal(8, 5, 1.0, &mut rng);
        let m = Array2::from_shape_vec((8, 5), w).unwrap();
        let g = m.t().dot(&m);
        for i in 0..5 {
            for j in 0..5 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[6, 9, 7, 3], 1.0, &mut rng);
        let x = random_input(&mut rng, 4, 6);
        let w = random_input(&mut rng, 4, 3);
        let loss = |n: &Mlp| (&n.forward(x.view()) * &w).sum();
        let (_, cache) = net.forward_cached(x.view());
        let mut grad = vec![0.0; net.num_params()];
        net.backward(&cache, w.view(), &mut grad);
        for _ in 0..50 {
            let i = rng.random_range(0..net.num_params());
            let h = 1e-6;
            let mut p = net.clone();
            p.params_mut()[i] += h;
            let mut m = net.clone();
            m.params_mut()[i] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            assert!(
                rel_err(fd, grad[i]) < 1e-5,
                "param {i}: fd {fd} vs {}",
                grad[i]
            );
        }
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(&[5, 8, 6, 1], 1.0, &mut rng);
        let x = random_input(&mut rng, 7, 5);
        let pen = |n: &Mlp| {
            let (_, c) = n.forward_cached(x.view());
            let mut g = vec![0.0; n.num_params()];
            n.gradient_penalty(&c, 2.5, &mut g)
        };
        let (_, cache) = net.forward_cached(x.view());
        let mut grad = vec![0.0; net.num_params()];
        net.gradient_penalty(&cache, 2.5, &mut grad);
        for _ in 0..50 {
            let i = rng.random_range(0..net.num_params());
            let h = 1e-6;
            let mut p = net.clone();
            p.params_mut()[i] += h;
            let mut m = net.clone();
            m.params_mut()[i] -= h;
            let fd = (pen(&p) - pen(&m)) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() < 1e-6 || rel_err(fd, grad[i]) < 1e-5,
                "param {i}: fd {fd} vs {}",
                grad[i]
            );
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(&[4, 10, 1], 1.0, &mut rng);
        let x = random_input(&mut rng, 3, 4);
        let (_, cache) = net.forward_cached(x.view());
        let gx = net.input_gradient(&cache);
        for r in 0..3 {
            for c in 0..4 {
                let h = 1e-6;
                let mut p = x.clone();
                p[(r, c)] += h;
                let mut m = x.clone();
                m[(r, c)] -= h;
                let fd =
                    (net.forward(p.view())[(r, 0)] - net.forward(m.view())[(r, 0)]) / (2.0 * h);
                assert!((fd - gx[(r, c)]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn constant_network_has_zero_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = Mlp::new(&[3, 4, 1], 1.0, &mut rng);
        net.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let n = net.num_params();
        net.params_mut()[n - 1] = 0.7;
        let x = random_input(&mut rng, 5, 3);
        let (out, cache) = net.forward_cached(x.view());
        assert!(out.iter().all(|&v| v == 0.7));
        let mut grad = vec![0.0; n];
        assert_eq!(net.gradient_penalty(&cache, 5.0, &mut grad), 0.0);
    }

    #[test]
    fn gaussian_log_prob() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pol = GaussianPolicy::new(&[2, 3, 1], 0.5, &mut rng);
        let lp = pol.log_prob(&[0.0], &[0.5]);
        let expect = -0.5 - 0.5f64.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((lp - expect).abs() < 1e-12);
        let mut g = [0.0];
        pol.log_prob_grad_mean(&[0.0], &[0.5], &mut g);
        assert!((g[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.05);
        for _ in 0..2000 {
            let g = vec![2.0 * p[0], 2.0 * (p[1] - 1.0)];
            opt.step(&mut p, &g);
        }
        assert!(p[0].abs() < 1e-3 && (p[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn normalizer_matches_batch_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data = Array2::from_shape_fn((300, 3), |(_, j)| {
            rng.random_range(-1.0..1.0) * (j + 1) as f64 + j as f64
        });
        let mut norm = ObsNormalizer::new(3);
        norm.count = 0.0;
        for chunk in data.axis_chunks_iter(Axis(0), 37) {
            norm.update(chunk);
        }
        let m = column_means(&data);
        let v = data.var_axis(Axis(0), 0.0);
        for j in 0..3 {
            assert!((norm.mean[j] - m[j]).abs() < 1e-12);
            assert!((norm.var[j] - v[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn shape_errors() {
        assert!(Mlp::from_params(&[2, 3], vec![0.0; 8]).is_err());
        assert!(Mlp::from_params(&[2, 3], vec![0.0; 9]).is_ok());
    }
}
