//! Shared-policy DQN for robot vehicles: dueling network, double and n-step
//! targets, uniform replay, training loop, greedy evaluation and checkpoints.

mod checkpoint;
mod network;
mod replay;

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use network::{argmax, clip_grad_norm, finite_difference_check, Adam, FdReport, QNetwork, N_ACTIONS};
pub use replay::{select_action, td_targets, NStepBuffer, ReplayBuffer, RunningNorm, Transition, NORM_CLIP};

use crate::derive_seed;
use crate::dynamics::{Action, VehicleId};
use crate::env::{Env, EpisodeConfig, RewardParams};
use crate::error::AgentError;
use crate::metrics::{avg_waiting_time, RunMetrics, SCOPE_RL};
use crate::parallel::try_map_runs;
use crate::topology::Network;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub gamma: f64,
    /// Training episodes.
    pub iterations: usize,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Transitions collected before the first update.
    pub warmup: usize,
    /// Environment steps between gradient updates.
    pub train_every: usize,
    /// Gradient updates between target-network copies.
    pub target_sync_interval: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Environment steps over which epsilon decays linearly.
    pub epsilon_decay_steps: usize,
    pub n_step: usize,
    pub double: bool,
    pub dueling: bool,
    pub grad_clip: f64,
    /// Iterations between intermediate checkpoints; 0 disables them.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![512, 512, 512],
            learning_rate: 5e-4,
            gamma: 0.99,
            iterations: 1000,
            batch_size: 64,
            replay_capacity: 100_000,
            warmup: 1000,
            train_every: 1,
            target_sync_interval: 1000,
            epsilon_start: 1.0,
            epsilon_end: 0.02,
            epsilon_decay_steps: 200_000,
            n_step: 3,
            double: true,
            dueling: true,
            grad_clip: 10.0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Settings small enough to train in minutes on one core.
    pub fn desk() -> Self {
        TrainConfig {
            hidden: vec![64, 64],
            // A robot decides for roughly 5 to 10 steps in the zone; a long
            // horizon lets it trade an early Stop for later Go rewards.
            gamma: 0.8,
            iterations: 200,
            batch_size: 32,
            replay_capacity: 50_000,
            warmup: 500,
            train_every: 2,
            target_sync_interval: 500,
            epsilon_decay_steps: 40_000,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.replay_capacity == 0 || self.n_step == 0 {
            return bad("batch_size, replay_capacity and n_step must be positive");
        }
        if self.train_every == 0 || self.target_sync_interval == 0 {
            return bad("train_every and target_sync_interval must be positive");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("epsilon values must lie in [0, 1]");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be positive");
        }
        Ok(())
    }

    /// Short hex digest of the serialized config.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }

    pub fn epsilon_at(&self, step: usize) -> f64 {
        if self.epsilon_decay_steps == 0 {
            return self.epsilon_end;
        }
        let f = (step as f64 / self.epsilon_decay_steps as f64).min(1.0);
        self.epsilon_start + f * (self.epsilon_end - self.epsilon_start)
    }
}

/// Network plus the frozen input normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub net: QNetwork,
    pub norm: RunningNorm,
    pub fingerprint: String,
}

impl Policy {
    pub fn new(net: QNetwork, fingerprint: impl Into<String>) -> Self {
        let dim = net.input_size();
        Policy {
            net,
            norm: RunningNorm::new(dim),
            fingerprint: fingerprint.into(),
        }
    }

    pub fn q_values(&self, obs: &[f64]) -> Result<[f64; N_ACTIONS], AgentError> {
        if obs.len() != self.net.input_size() {
            return Err(AgentError::Dimension {
                expected: self.net.input_size(),
                got: obs.len(),
            });
        }
        self.net.forward(&self.norm.normalize(obs))
    }

    pub fn greedy(&self, obs: &[f64]) -> Result<Action, AgentError> {
        Ok(Action::from_index(argmax(&self.q_values(obs)?)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub iteration: usize,
    pub mean_reward: f64,
    pub mean_wait: f64,
    pub epsilon: f64,
}

pub const CURVE_HEADER: &str = "iteration,mean_reward,mean_wait,epsilon";

pub fn write_curve<W: Write>(curve: &[CurvePoint], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CURVE_HEADER}")?;
    for p in curve {
        writeln!(w, "{},{},{},{}", p.iteration, p.mean_reward, p.mean_wait, p.epsilon)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub curve: Vec<CurvePoint>,
}

struct Learner<'a> {
    cfg: &'a TrainConfig,
    online: QNetwork,
    target: QNetwork,
    opt: Adam,
    replay: ReplayBuffer,
    norm: RunningNorm,
    rng: ChaCha8Rng,
    updates: usize,
}

impl Learner<'_> {
    fn update(&mut self, iteration: usize) -> Result<(), AgentError> {
        let batch = self.replay.sample(self.cfg.batch_size, &mut self.rng);
        let norm = &self.norm;
        let inputs: Vec<Vec<f64>> = batch.iter().map(|t| norm.normalize(&t.obs)).collect();
        let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
        let targets = td_targets(
            &batch,
            &self.online,
            &self.target,
            self.cfg.gamma,
            self.cfg.double,
            |x| norm.normalize(x),
        )?;
        let (_, mut grad) = self.online.gradients(&inputs, &actions, &targets)?;
        clip_grad_norm(&mut grad, self.cfg.grad_clip);
        self.opt.step(self.online.params_mut(), &grad);
        if !self.online.is_finite() {
            return Err(AgentError::NonFinite { iteration });
        }
        self.updates += 1;
        if self.updates.is_multiple_of(self.cfg.target_sync_interval) {
            self.target = self.online.clone();
        }
        Ok(())
    }

    fn policy(&self) -> Policy {
        Policy {
            net: self.online.clone(),
            norm: self.norm.clone(),
            fingerprint: self.cfg.fingerprint(),
        }
    }
}

/// Trains one network shared by every robot. Iteration `i` is one episode of
/// `episode` reseeded from `(seed, i)`. `on_checkpoint` receives intermediate
/// policies every `checkpoint_every` iterations.
pub fn train(
    network: Arc<Network>,
    episode: &EpisodeConfig,
    reward: RewardParams,
    cfg: &TrainConfig,
    seed: u64,
    mut on_checkpoint: impl FnMut(usize, &Policy) -> Result<(), AgentError>,
) -> Result<TrainOutcome, AgentError> {
    cfg.validate()?;
    let mut env = Env::new(network.clone(), episode.clone(), reward)?;
    let dim = env.obs_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
    let online = QNetwork::new(dim, &cfg.hidden, cfg.dueling, &mut rng);
    let mut learner = Learner {
        cfg,
        target: online.clone(),
        opt: Adam::new(online.param_count(), cfg.learning_rate),
        online,
        replay: ReplayBuffer::new(cfg.replay_capacity),
        norm: RunningNorm::new(dim),
        rng,
        updates: 0,
    };
    let mut curve = Vec::with_capacity(cfg.iterations);
    let mut env_steps = 0usize;

    for it in 0..cfg.iterations {
        let ep = EpisodeConfig {
            seed: derive_seed(seed, it as u64),
            ..episode.clone()
        };
        env.reset(ep)?;
        let mut pending: BTreeMap<VehicleId, (Vec<f64>, usize, f64)> = BTreeMap::new();
        let mut folds: BTreeMap<VehicleId, NStepBuffer> = BTreeMap::new();
        let mut reward_sum = 0.0;
        let mut reward_n = 0usize;
        let mut epsilon = cfg.epsilon_at(env_steps);
        let mut done = env.is_done();
        while !done {
            epsilon = cfg.epsilon_at(env_steps);
            let mut actions = BTreeMap::new();
            for (&id, obs) in env.awaiting() {
                let raw = obs.to_vec();
                learner.norm.update(&raw);
                if let Some((o, a, r)) = pending.remove(&id) {
                    let fold = folds
                        .entry(id)
                        .or_insert_with(|| NStepBuffer::new(cfg.n_step, cfg.gamma));
                    for t in fold.push(o, a, r, &raw, false) {
                        learner.replay.push(t);
                    }
                }
                let q = learner.online.forward(&learner.norm.normalize(&raw))?;
                let action = select_action(&q, epsilon, &mut learner.rng);
                actions.insert(id, action);
                pending.insert(id, (raw, action.index(), 0.0));
            }
            let out = env.step(&actions)?;
            for (id, r) in &out.rewards {
                if let Some(p) = pending.get_mut(id) {
                    p.2 += r;
                }
                reward_sum += r;
                reward_n += 1;
            }
            for id in &out.exited {
                if let Some((o, a, r)) = pending.remove(id) {
                    let mut fold = folds
                        .remove(id)
                        .unwrap_or_else(|| NStepBuffer::new(cfg.n_step, cfg.gamma));
                    let next = o.clone();
                    for t in fold.push(o, a, r, &next, true) {
                        learner.replay.push(t);
                    }
                }
            }
            env_steps += 1;
            if learner.replay.len() >= cfg.warmup.max(cfg.batch_size) && env_steps.is_multiple_of(cfg.train_every) {
                learner.update(it)?;
            }
            done = out.done;
        }
        // The horizon ends every open trajectory.
        for (id, (o, a, r)) in std::mem::take(&mut pending) {
            let mut fold = folds
                .remove(&id)
                .unwrap_or_else(|| NStepBuffer::new(cfg.n_step, cfg.gamma));
            let next = o.clone();
            for t in fold.push(o, a, r, &next, true) {
                learner.replay.push(t);
            }
        }
        curve.push(CurvePoint {
            iteration: it,
            mean_reward: if reward_n == 0 {
                0.0
            } else {
                reward_sum / reward_n as f64
            },
            mean_wait: avg_waiting_time(&env.sim().records(), None).0,
            epsilon,
        });
        if cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 {
            on_checkpoint(it + 1, &learner.policy())?;
        }
    }
    Ok(TrainOutcome {
        policy: learner.policy(),
        curve,
    })
}

/// Runs one greedy episode and returns its environment for inspection.
pub fn rollout(
    policy: &Policy,
    network: Arc<Network>,
    episode: &EpisodeConfig,
    reward: RewardParams,
) -> Result<Env, AgentError> {
    let mut env = Env::new(network, episode.clone(), reward)?;
    if policy.net.input_size() != env.obs_dim() {
        return Err(AgentError::Dimension {
            expected: env.obs_dim(),
            got: policy.net.input_size(),
        });
    }
    while !env.is_done() {
        let mut actions = BTreeMap::new();
        for (&id, obs) in env.awaiting() {
            actions.insert(id, policy.greedy(&obs.to_vec())?);
        }
        env.step(&actions)?;
    }
    Ok(env)
}

/// Greedy evaluation over `runs` episodes seeded from `(episode.seed, run)`.
pub fn evaluate(
    policy: &Policy,
    network: Arc<Network>,
    episode: &EpisodeConfig,
    reward: RewardParams,
    runs: usize,
    parallel: bool,
) -> Result<Vec<RunMetrics>, AgentError> {
    let ids: Vec<usize> = (0..runs).collect();
    try_map_runs(parallel, &ids, |&run| {
        let ep = EpisodeConfig {
            seed: derive_seed(episode.seed, run as u64),
            ..episode.clone()
        };
        let env = rollout(policy, network.clone(), &ep, reward)?;
        let sim = env.sim();
        Ok(RunMetrics::from_records(
            run.to_string(),
            episode.demand.rv_rate,
            SCOPE_RL,
            &sim.records(),
            sim.headway_samples(),
        ))
    })
}
