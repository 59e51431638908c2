//! Experience storage, n-step folding, bootstrap targets and exploration.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::network::{argmax, QNetwork};
use crate::dynamics::Action;
use crate::error::AgentError;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    /// Discounted sum of up to n rewards.
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
    /// Number of rewards folded into `reward`; the bootstrap is discounted by gamma^steps.
    pub steps: u32,
}

/// Fixed-capacity FIFO of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Uniform sample with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<&Transition> {
        (0..batch)
            .map(|_| &self.items[rng.gen_range(0..self.items.len())])
            .collect()
    }
}

/// Folds one agent's one-step experience into n-step transitions.
#[derive(Debug, Clone)]
pub struct NStepBuffer {
    n: usize,
    gamma: f64,
    pending: VecDeque<(Vec<f64>, usize, f64)>,
}

impl NStepBuffer {
    pub fn new(n: usize, gamma: f64) -> Self {
        NStepBuffer {
            n: n.max(1),
            gamma,
            pending: VecDeque::new(),
        }
    }

    fn fold(&self, from: usize) -> (f64, u32) {
        let mut r = 0.0;
        let mut g = 1.0;
        for (_, _, ri) in self.pending.iter().skip(from) {
            r += g * ri;
            g *= self.gamma;
        }
        (r, (self.pending.len() - from) as u32)
    }

    /// Adds `(obs, action, reward)` whose successor is `next_obs`. Returns the
    /// transitions that became complete: one once n steps are queued, or every
    /// queued step when `done`.
    pub fn push(&mut self, obs: Vec<f64>, action: usize, reward: f64, next_obs: &[f64], done: bool) -> Vec<Transition> {
        self.pending.push_back((obs, action, reward));
        let mut out = Vec::new();
        if done {
            while !self.pending.is_empty() {
                let (reward, steps) = self.fold(0);
                let (obs, action, _) = self.pending.pop_front().unwrap();
                out.push(Transition {
                    obs,
                    action,
                    reward,
                    next_obs: next_obs.to_vec(),
                    done: true,
                    steps,
                });
            }
        } else if self.pending.len() >= self.n {
            let (reward, steps) = self.fold(0);
            let (obs, action, _) = self.pending.pop_front().unwrap();
            out.push(Transition {
                obs,
                action,
                reward,
                next_obs: next_obs.to_vec(),
                done: false,
                steps,
            });
        }
        out
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }
}

/// `y = R + gamma^steps * Q_target(s', a*)` with `a*` chosen by the online
/// network when `double`, else by the target network; terminal rows keep `R`.
pub fn td_targets(
    batch: &[&Transition],
    online: &QNetwork,
    target: &QNetwork,
    gamma: f64,
    double: bool,
    normalize: impl Fn(&[f64]) -> Vec<f64>,
) -> Result<Vec<f64>, AgentError> {
    batch
        .iter()
        .map(|t| {
            if t.done {
                return Ok(t.reward);
            }
            let next = normalize(&t.next_obs);
            let qt = target.forward(&next)?;
            let a = if double {
                argmax(&online.forward(&next)?)
            } else {
                argmax(&qt)
            };
            Ok(t.reward + gamma.powi(t.steps as i32) * qt[a])
        })
        .collect()
}

/// Epsilon-greedy over two actions; the greedy branch breaks ties toward Go.
pub fn select_action<R: Rng + ?Sized>(q: &[f64; 2], epsilon: f64, rng: &mut R) -> Action {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        Action::from_index(rng.gen_range(0..2))
    } else {
        Action::from_index(argmax(q))
    }
}

/// Per-component running mean and variance (Welford).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

/// Normalized inputs are clipped to this magnitude.
pub const NORM_CLIP: f64 = 10.0;

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        RunningNorm {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    pub fn std(&self, i: usize) -> f64 {
        if self.count < 2 {
            return 1.0;
        }
        let var = self.m2[i] / (self.count - 1) as f64;
        if var > 1e-12 {
            var.sqrt()
        } else {
            1.0
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| ((v - self.mean[i]) / self.std(i)).clamp(-NORM_CLIP, NORM_CLIP))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(reward: f64, done: bool) -> Transition {
        Transition {
            obs: vec![0.0],
            action: 1,
            reward,
            next_obs: vec![1.0],
            done,
            steps: 1,
        }
    }

    #[test]
    fn replay_evicts_oldest() {
        let mut r = ReplayBuffer::new(3);
        for i in 0..5 {
            r.push(t(i as f64, false));
            assert!(r.len() <= 3);
        }
        let rewards: Vec<f64> = r.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn nstep_folds_and_flushes() {
        let mut b = NStepBuffer::new(3, 0.5);
        assert!(b.push(vec![0.0], 1, 1.0, &[1.0], false).is_empty());
        assert!(b.push(vec![1.0], 0, 2.0, &[2.0], false).is_empty());
        let out = b.push(vec![2.0], 1, 4.0, &[3.0], false);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].reward, 1.0 + 0.5 * 2.0 + 0.25 * 4.0);
        assert_eq!(out[0].steps, 3);
        assert_eq!(out[0].next_obs, vec![3.0]);
        let out = b.push(vec![3.0], 1, 8.0, &[4.0], true);
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].reward, 2.0 + 0.5 * 4.0 + 0.25 * 8.0);
        assert_eq!(out[2].reward, 8.0);
        assert_eq!(out[2].steps, 1);
        assert!(out.iter().all(|t| t.done));
        assert!(b.is_empty());
    }

    fn two_layer(seed: u64) -> QNetwork {
        QNetwork::new(2, &[4], false, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn terminal_target_is_reward() {
        let net = two_layer(1);
        let mut tr = t(-1.0, true);
        tr.obs = vec![0.0, 0.0];
        tr.next_obs = vec![0.0, 0.0];
        let y = td_targets(&[&tr], &net, &net, 0.99, true, |x| x.to_vec()).unwrap();
        assert_eq!(y, vec![-1.0]);
    }

    #[test]
    fn zero_gamma_keeps_reward_head() {
        let net = two_layer(2);
        let mut tr = t(0.37, false);
        tr.next_obs = vec![0.5, -0.5];
        let y = td_targets(&[&tr], &net, &net, 0.0, false, |x| x.to_vec()).unwrap();
        assert_eq!(y, vec![0.37]);
    }

    #[test]
    fn double_differs_only_when_argmax_disagrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut disagreed = 0;
        for k in 0..200 {
            let online = two_layer(100 + k);
            let target = two_layer(500 + k);
            let x = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let mut tr = t(0.1, false);
            tr.next_obs = x.clone();
            let d = td_targets(&[&tr], &online, &target, 0.9, true, |x| x.to_vec()).unwrap()[0];
            let v = td_targets(&[&tr], &online, &target, 0.9, false, |x| x.to_vec()).unwrap()[0];
            let ao = argmax(&online.forward(&x).unwrap());
            let at = argmax(&target.forward(&x).unwrap());
            let qt = target.forward(&x).unwrap();
            if ao != at && qt[0] != qt[1] {
                disagreed += 1;
                assert_ne!(d, v);
            } else {
                assert_eq!(d, v);
            }
        }
        assert!(disagreed > 0);
    }

    #[test]
    fn epsilon_one_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let go = (0..n)
            .filter(|_| select_action(&[5.0, 0.0], 1.0, &mut rng) == Action::Go)
            .count();
        let frac = go as f64 / n as f64;
        assert!((frac - 0.5).abs() <= 0.01, "{frac}");
    }

    #[test]
    fn greedy_choices() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_action(&[0.2, 0.7], 0.0, &mut rng), Action::Go);
        assert_eq!(select_action(&[0.4, 0.4], 0.0, &mut rng), Action::Go);
        assert_eq!(select_action(&[0.9, 0.4], 0.0, &mut rng), Action::Stop);
    }

    #[test]
    fn running_norm_matches_batch_statistics() {
        let xs = [[1.0, 10.0], [3.0, 10.0], [5.0, 10.0], [7.0, 10.0]];
        let mut n = RunningNorm::new(2);
        for x in &xs {
            n.update(x);
        }
        assert!((n.mean[0] - 4.0).abs() < 1e-12);
        // Sample std of {1,3,5,7} is sqrt(20/3).
        assert!((n.std(0) - (20.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(n.std(1), 1.0);
        let z = n.normalize(&[4.0, 10.0]);
        assert_eq!(z, vec![0.0, 0.0]);
        assert_eq!(n.normalize(&[1e9, 10.0])[0], NORM_CLIP);
    }
}
