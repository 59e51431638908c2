//! Fully connected Q-network with ReLU hidden layers, optional dueling head,
//! hand-written backpropagation and Adam.

use rand::Rng;

use crate::error::AgentError;

pub const N_ACTIONS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layer {
    inp: usize,
    out: usize,
    w: usize,
    b: usize,
}

impl Layer {
    fn end(&self) -> usize {
        self.b + self.out
    }
}

/// Parameters live in one flat vector: each layer stores its weights
/// row-major (`out x in`) followed by its biases. Hidden layers come first,
/// then either the value and advantage heads or the plain Q head.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    input: usize,
    hidden: Vec<usize>,
    dueling: bool,
    layers: Vec<Layer>,
    params: Vec<f64>,
}

struct Cache {
    /// Input followed by each hidden activation.
    acts: Vec<Vec<f64>>,
    q: [f64; N_ACTIONS],
}

fn layout(input: usize, hidden: &[usize], dueling: bool) -> (Vec<Layer>, usize) {
    let mut layers = Vec::new();
    let mut off = 0;
    let mut push = |inp: usize, out: usize| {
        let l = Layer {
            inp,
            out,
            w: off,
            b: off + inp * out,
        };
        off = l.end();
        layers.push(l);
    };
    let mut prev = input;
    for &h in hidden {
        push(prev, h);
        prev = h;
    }
    if dueling {
        push(prev, 1);
        push(prev, N_ACTIONS);
    } else {
        push(prev, N_ACTIONS);
    }
    (layers, off)
}

#[inline]
fn affine(params: &[f64], l: &Layer, x: &[f64], out: &mut Vec<f64>) {
    out.clear();
    for o in 0..l.out {
        let row = &params[l.w + o * l.inp..l.w + (o + 1) * l.inp];
        let mut acc = params[l.b + o];
        for (w, xi) in row.iter().zip(x) {
            acc += w * xi;
        }
        out.push(acc);
    }
}

impl QNetwork {
    pub fn zeros(input: usize, hidden: &[usize], dueling: bool) -> Self {
        let (layers, n) = layout(input, hidden, dueling);
        QNetwork {
            input,
            hidden: hidden.to_vec(),
            dueling,
            layers,
            params: vec![0.0; n],
        }
    }

    /// He-uniform hidden weights, small uniform head weights, zero biases.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: &[usize], dueling: bool, rng: &mut R) -> Self {
        let mut net = QNetwork::zeros(input, hidden, dueling);
        let n_hidden = hidden.len();
        for (i, l) in net.layers.clone().iter().enumerate() {
            let limit = if i < n_hidden {
                (6.0 / l.inp as f64).sqrt()
            } else {
                (1.0 / l.inp as f64).sqrt()
            };
            for w in &mut net.params[l.w..l.b] {
                *w = rng.gen_range(-limit..limit);
            }
        }
        net
    }

    pub fn from_params(input: usize, hidden: &[usize], dueling: bool, params: Vec<f64>) -> Result<Self, AgentError> {
        let mut net = QNetwork::zeros(input, hidden, dueling);
        if params.len() != net.params.len() {
            return Err(AgentError::Dimension {
                expected: net.params.len(),
                got: params.len(),
            });
        }
        net.params = params;
        Ok(net)
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn dueling(&self) -> bool {
        self.dueling
    }

    /// `[input, hidden.., N_ACTIONS]`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input];
        s.extend_from_slice(&self.hidden);
        s.push(N_ACTIONS);
        s
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Weight `(out, inp)` of layer `layer`, counting hidden layers then heads.
    pub fn weight(&self, layer: usize, out: usize, inp: usize) -> f64 {
        let l = &self.layers[layer];
        self.params[l.w + out * l.inp + inp]
    }

    pub fn bias(&self, layer: usize, out: usize) -> f64 {
        self.params[self.layers[layer].b + out]
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    fn check(&self, x: &[f64]) -> Result<(), AgentError> {
        if x.len() != self.input {
            return Err(AgentError::Dimension {
                expected: self.input,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<[f64; N_ACTIONS], AgentError> {
        self.check(x)?;
        Ok(self.run(x).q)
    }

    fn run(&self, x: &[f64]) -> Cache {
        let n_hidden = self.hidden.len();
        let mut acts = Vec::with_capacity(n_hidden + 1);
        acts.push(x.to_vec());
        for l in &self.layers[..n_hidden] {
            let mut z = Vec::with_capacity(l.out);
            affine(&self.params, l, acts.last().unwrap(), &mut z);
            for v in &mut z {
                *v = v.max(0.0);
            }
            acts.push(z);
        }
        let h = acts.last().unwrap();
        let mut q = [0.0; N_ACTIONS];
        let mut buf = Vec::with_capacity(N_ACTIONS);
        if self.dueling {
            affine(&self.params, &self.layers[n_hidden], h, &mut buf);
            let v = buf[0];
            affine(&self.params, &self.layers[n_hidden + 1], h, &mut buf);
            let mean = buf.iter().sum::<f64>() / N_ACTIONS as f64;
            for (k, qk) in q.iter_mut().enumerate() {
                *qk = v + buf[k] - mean;
            }
        } else {
            affine(&self.params, &self.layers[n_hidden], h, &mut buf);
            q.copy_from_slice(&buf);
        }
        Cache { acts, q }
    }

    /// Adds the gradient of `sum_k dq[k] * q_k(x)` into `grad`.
    fn backward(&self, cache: &Cache, dq: [f64; N_ACTIONS], grad: &mut [f64]) {
        let n_hidden = self.hidden.len();
        let h = cache.acts.last().unwrap();
        let mut dh = vec![0.0; h.len()];
        let mut head = |l: &Layer, d: &[f64], dh: &mut [f64]| {
            for (o, &g) in d.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad[l.b + o] += g;
                let row = l.w + o * l.inp;
                for i in 0..l.inp {
                    grad[row + i] += g * h[i];
                    dh[i] += g * self.params[row + i];
                }
            }
        };
        if self.dueling {
            let total: f64 = dq.iter().sum();
            let da: Vec<f64> = dq.iter().map(|&d| d - total / N_ACTIONS as f64).collect();
            head(&self.layers[n_hidden], &[total], &mut dh);
            head(&self.layers[n_hidden + 1], &da, &mut dh);
        } else {
            head(&self.layers[n_hidden], &dq, &mut dh);
        }
        let mut delta = dh;
        for li in (0..n_hidden).rev() {
            let l = &self.layers[li];
            let a = &cache.acts[li + 1];
            let prev = &cache.acts[li];
            for (d, &ai) in delta.iter_mut().zip(a) {
                if ai <= 0.0 {
                    *d = 0.0;
                }
            }
            let mut dprev = vec![0.0; l.inp];
            for (o, &g) in delta.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad[l.b + o] += g;
                let row = l.w + o * l.inp;
                for i in 0..l.inp {
                    grad[row + i] += g * prev[i];
                    dprev[i] += g * self.params[row + i];
                }
            }
            delta = dprev;
        }
    }

    /// On/off state of every hidden ReLU for input `x`.
    pub fn active_units(&self, x: &[f64]) -> Result<Vec<bool>, AgentError> {
        self.check(x)?;
        let cache = self.run(x);
        Ok(cache.acts[1..].iter().flatten().map(|&a| a > 0.0).collect())
    }

    /// Mean squared TD error `1/B sum (q(x_i, a_i) - y_i)^2` and its gradient.
    pub fn gradients(
        &self,
        inputs: &[Vec<f64>],
        actions: &[usize],
        targets: &[f64],
    ) -> Result<(f64, Vec<f64>), AgentError> {
        let b = inputs.len();
        if b == 0 || actions.len() != b || targets.len() != b {
            return Err(AgentError::Config(format!(
                "batch of {b} inputs, {} actions, {} targets",
                actions.len(),
                targets.len()
            )));
        }
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for ((x, &a), &y) in inputs.iter().zip(actions).zip(targets) {
            self.check(x)?;
            let cache = self.run(x);
            let err = cache.q[a] - y;
            loss += err * err;
            let mut dq = [0.0; N_ACTIONS];
            dq[a] = 2.0 * err / b as f64;
            self.backward(&cache, dq, &mut grad);
        }
        Ok((loss / b as f64, grad))
    }

    pub fn loss(&self, inputs: &[Vec<f64>], actions: &[usize], targets: &[f64]) -> Result<f64, AgentError> {
        let mut total = 0.0;
        for ((x, &a), &y) in inputs.iter().zip(actions).zip(targets) {
            let e = self.forward(x)?[a] - y;
            total += e * e;
        }
        Ok(total / inputs.len() as f64)
    }
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameters whose perturbation flipped a ReLU, where the loss has a kink.
    pub skipped: usize,
}

/// Central-difference check of the single-sample loss gradient.
pub fn finite_difference_check(
    net: &QNetwork,
    x: &[f64],
    action: usize,
    target: f64,
    h: f64,
) -> Result<FdReport, AgentError> {
    let xs = vec![x.to_vec()];
    let (_, g) = net.gradients(&xs, &[action], &[target])?;
    let pattern = net.active_units(x)?;
    let mut probe = net.clone();
    let mut report = FdReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for i in 0..net.param_count() {
        let p0 = probe.params[i];
        probe.params[i] = p0 + h;
        let lp = probe.loss(&xs, &[action], &[target])?;
        let kink_p = probe.active_units(x)? != pattern;
        probe.params[i] = p0 - h;
        let lm = probe.loss(&xs, &[action], &[target])?;
        let kink_m = probe.active_units(x)? != pattern;
        probe.params[i] = p0;
        if kink_p || kink_m {
            report.skipped += 1;
            continue;
        }
        report.checked += 1;
        let fd = (lp - lm) / (2.0 * h);
        let denom = fd.abs().max(g[i].abs()).max(1e-6);
        report.max_rel_error = report.max_rel_error.max((fd - g[i]).abs() / denom);
    }
    Ok(report)
}

/// Index of the larger Q value; ties go to the higher index (Go).
pub fn argmax(q: &[f64; N_ACTIONS]) -> usize {
    if q[0] > q[1] {
        0
    } else {
        1
    }
}

#[derive(Debug, Clone, PartialEq)]
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
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Rescales `grad` in place so its Euclidean norm is at most `max_norm`.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= s;
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent matrix-arithmetic evaluation used as a second implementation.
    fn reference_forward(net: &QNetwork, x: &[f64]) -> [f64; 2] {
        let n_hidden = net.hidden().len();
        let mut h: Vec<f64> = x.to_vec();
        for li in 0..n_hidden {
            let out = net.hidden()[li];
            let w: Vec<Vec<f64>> = (0..out)
                .map(|o| (0..h.len()).map(|i| net.weight(li, o, i)).collect())
                .collect();
            h = w
                .iter()
                .enumerate()
                .map(|(o, row)| {
                    let z: f64 = row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>() + net.bias(li, o);
                    if z > 0.0 {
                        z
                    } else {
                        0.0
                    }
                })
                .collect();
        }
        let lin = |layer: usize, o: usize| -> f64 {
            (0..h.len()).map(|i| net.weight(layer, o, i) * h[i]).sum::<f64>() + net.bias(layer, o)
        };
        if net.dueling() {
            let v = lin(n_hidden, 0);
            let a = [lin(n_hidden + 1, 0), lin(n_hidden + 1, 1)];
            let m = (a[0] + a[1]) / 2.0;
            [v + a[0] - m, v + a[1] - m]
        } else {
            [lin(n_hidden, 0), lin(n_hidden, 1)]
        }
    }

    fn random_input(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = QNetwork::zeros(25, &[64, 64], true);
        assert_eq!(net.forward(&[3.0; 25]).unwrap(), [0.0, 0.0]);
        let net = QNetwork::zeros(5, &[8], false);
        assert_eq!(net.forward(&[-1.0; 5]).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn equal_advantages_give_value() {
        let mut net = QNetwork::zeros(3, &[4], true);
        let n = net.n_layers();
        let vb = net.layers[n - 2].b;
        let ab = net.layers[n - 1].b;
        net.params[vb] = 1.5;
        net.params[ab] = 0.5;
        net.params[ab + 1] = 0.5;
        assert_eq!(net.forward(&[0.3, -0.2, 1.0]).unwrap(), [1.5, 1.5]);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let net = QNetwork::zeros(4, &[3], true);
        assert!(matches!(
            net.forward(&[0.0; 5]),
            Err(AgentError::Dimension { expected: 4, got: 5 })
        ));
    }

    #[test]
    fn matches_reference_implementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (hidden, dueling) in [(vec![64, 64], true), (vec![16, 8, 4], false), (vec![], true)] {
            let net = QNetwork::new(25, &hidden, dueling, &mut rng);
            for _ in 0..20 {
                let x = random_input(&mut rng, 25);
                let a = net.forward(&x).unwrap();
                let b = reference_forward(&net, &x);
                for k in 0..2 {
                    assert!((a[k] - b[k]).abs() <= 1e-10, "{a:?} vs {b:?}");
                }
            }
        }
    }

    #[test]
    fn zero_td_error_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = QNetwork::new(6, &[8, 8], true, &mut rng);
        let xs: Vec<Vec<f64>> = (0..4).map(|_| random_input(&mut rng, 6)).collect();
        let acts = vec![0, 1, 1, 0];
        let ys: Vec<f64> = xs.iter().zip(&acts).map(|(x, &a)| net.forward(x).unwrap()[a]).collect();
        let (loss, g) = net.gradients(&xs, &acts, &ys).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn finite_difference_small_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (hidden, dueling) in [(vec![7, 5], true), (vec![6], false), (vec![4, 4, 4], true)] {
            let net = QNetwork::new(9, &hidden, dueling, &mut rng);
            for _ in 0..5 {
                let x = random_input(&mut rng, 9);
                let a = rng.gen_range(0..2);
                let y = rng.gen_range(-3.0..3.0);
                let r = finite_difference_check(&net, &x, a, y, 1e-5).unwrap();
                assert!(r.max_rel_error < 1e-4, "{hidden:?} {dueling}: {r:?}");
                assert!(r.checked > r.skipped);
            }
        }
    }

    #[test]
    fn batch_gradient_is_mean_of_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = QNetwork::new(5, &[6, 6], true, &mut rng);
        let xs: Vec<Vec<f64>> = (0..5).map(|_| random_input(&mut rng, 5)).collect();
        let acts: Vec<usize> = (0..5).map(|i| i % 2).collect();
        let ys: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, g) = net.gradients(&xs, &acts, &ys).unwrap();
        let mut mean = vec![0.0; g.len()];
        for i in 0..5 {
            let (_, gi) = net.gradients(&xs[i..=i], &acts[i..=i], &ys[i..=i]).unwrap();
            for (m, v) in mean.iter_mut().zip(gi) {
                *m += v / 5.0;
            }
        }
        for (a, b) in g.iter().zip(&mean) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn small_steps_do_not_increase_fixed_batch_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut net = QNetwork::new(8, &[16, 16], true, &mut rng);
        let xs: Vec<Vec<f64>> = (0..16).map(|_| random_input(&mut rng, 8)).collect();
        let acts: Vec<usize> = (0..16).map(|i| i % 2).collect();
        let ys: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut opt = Adam::new(net.param_count(), 1e-4);
        let mut prev = net.loss(&xs, &acts, &ys).unwrap();
        for _ in 0..50 {
            let (_, g) = net.gradients(&xs, &acts, &ys).unwrap();
            opt.step(&mut net.params, &g);
            let l = net.loss(&xs, &acts, &ys).unwrap();
            assert!(l <= prev + 1e-12, "{l} > {prev}");
            prev = l;
        }
    }

    #[test]
    fn argmax_tie_goes() {
        assert_eq!(argmax(&[0.3, 0.3]), 1);
        assert_eq!(argmax(&[0.2, 0.7]), 1);
        assert_eq!(argmax(&[0.9, 0.7]), 0);
    }

    #[test]
    fn clip_bounds_norm() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]
        #[test]
        fn updates_keep_parameters_finite(seed in any::<u64>(), scale in 0.1f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut net = QNetwork::new(7, &[8, 8], true, &mut rng);
            let mut opt = Adam::new(net.param_count(), 5e-4);
            for _ in 0..20 {
                let xs: Vec<Vec<f64>> = (0..8).map(|_| random_input(&mut rng, 7).iter().map(|v| v * scale).collect()).collect();
                let acts: Vec<usize> = (0..8).map(|_| rng.gen_range(0..2)).collect();
                let ys: Vec<f64> = (0..8).map(|_| rng.gen_range(-10.0..10.0) * scale).collect();
                let (_, mut g) = net.gradients(&xs, &acts, &ys).unwrap();
                clip_grad_norm(&mut g, 10.0);
                opt.step(net.params_mut(), &g);
                prop_assert!(net.is_finite());
            }
        }
    }
}
