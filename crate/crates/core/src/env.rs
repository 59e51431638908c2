//! Multi-agent Stop/Go environment over the simulator.
//!
//! Observation layout, flattened: `[l_0..l_{K-1}, w_0..w_{K-1}, o_0..o_{K-1}, d_int]`.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::dynamics::{
    Action, EntryControl, LinkPhase, Role, SimConfig, SimState, StepEvents, VehicleId, VehicleState, DEFAULT_DT,
    WAIT_SPEED_EPS,
};
use crate::error::EnvError;
use crate::topology::{DemandSpec, MovementId, Network};

/// Weight of queue length against mean wait when ranking Go requests.
pub const ARBITRATION_BETA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub queue_lengths: Vec<usize>,
    pub wait_times: Vec<f64>,
    pub occupancy: Vec<u8>,
    pub d_int: f64,
}

impl Observation {
    pub fn dim(groups: usize) -> usize {
        3 * groups + 1
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Observation::dim(self.queue_lengths.len()));
        out.extend(self.queue_lengths.iter().map(|&l| l as f64));
        out.extend_from_slice(&self.wait_times);
        out.extend(self.occupancy.iter().map(|&o| o as f64));
        out.push(self.d_int);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardParams {
    pub alpha: f64,
    pub conflict_penalty: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            alpha: 0.2,
            conflict_penalty: -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConfig {
    pub horizon: f64,
    pub dt: f64,
    pub demand: DemandSpec,
    pub seed: u64,
}

impl EpisodeConfig {
    pub fn new(demand: DemandSpec, seed: u64) -> Self {
        EpisodeConfig {
            horizon: 1000.0,
            dt: DEFAULT_DT,
            demand,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(EnvError::Config(format!("horizon {} must be positive", self.horizon)));
        }
        if !(self.dt > 0.0) {
            return Err(EnvError::Config(format!("dt {} must be positive", self.dt)));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt - 1e-9).ceil() as usize
    }
}

/// Per-group queue length, mean wait and box occupancy.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub queue: Vec<usize>,
    pub wait: Vec<f64>,
    pub occupied: Vec<u8>,
}

impl GroupStats {
    pub fn compute(sim: &SimState) -> Self {
        GroupStats::from_vehicles(sim.network(), sim.vehicles())
    }

    pub fn from_vehicles<'a>(net: &Network, vehicles: impl IntoIterator<Item = &'a VehicleState>) -> Self {
        let k = net.direction_groups;
        let mut queue = vec![0usize; k];
        let mut wait_sum = vec![0.0; k];
        let mut count = vec![0usize; k];
        let mut occupied = vec![0u8; k];
        for v in vehicles {
            let g = net.movements[v.movement].direction_group;
            match v.phase {
                LinkPhase::Approach => {
                    if v.speed < WAIT_SPEED_EPS {
                        queue[g] += 1;
                    }
                    wait_sum[g] += v.waiting_time;
                    count[g] += 1;
                }
                LinkPhase::Inside => occupied[g] = 1,
                LinkPhase::Exit => {}
            }
        }
        let wait = wait_sum
            .iter()
            .zip(&count)
            .map(|(&s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
            .collect();
        GroupStats { queue, wait, occupied }
    }

    pub fn observe(&self, d_int: f64) -> Observation {
        Observation {
            queue_lengths: self.queue.clone(),
            wait_times: self.wait.clone(),
            occupancy: self.occupied.clone(),
            d_int,
        }
    }
}

/// Observation of robot `rv`; `None` unless it is approaching within the control zone.
pub fn build_observation(sim: &SimState, rv: VehicleId) -> Option<Observation> {
    let v = sim.vehicle(rv)?;
    let d_int = sim.d_int(rv)?;
    if v.role != Role::Robot || d_int > sim.network().control_zone {
        return None;
    }
    Some(GroupStats::compute(sim).observe(d_int.max(0.0)))
}

/// `alpha * (±w_k) + conflict_penalty` when a conflict occurred.
pub fn compute_reward(action: Action, w_k: f64, conflict: bool, p: &RewardParams) -> f64 {
    let h = match action {
        Action::Stop => -w_k,
        Action::Go => w_k,
    };
    p.alpha * h + if conflict { p.conflict_penalty } else { 0.0 }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub vehicle: VehicleId,
    pub movement: MovementId,
    pub wait: f64,
    pub queue: usize,
}

impl Candidate {
    pub fn score(&self) -> f64 {
        self.wait + ARBITRATION_BETA * self.queue as f64
    }
}

/// Greedy entry grants in descending score order (ties by vehicle id), skipping
/// any candidate that conflicts with a reserved movement or an earlier winner.
pub fn arbitrate(network: &Network, reserved: &[MovementId], candidates: &[Candidate]) -> Vec<VehicleId> {
    let mut order: Vec<&Candidate> = candidates.iter().collect();
    order.sort_by(|a, b| b.score().total_cmp(&a.score()).then(a.vehicle.cmp(&b.vehicle)));
    let mut taken = reserved.to_vec();
    let mut granted = Vec::new();
    for c in order {
        if taken.iter().all(|&r| !network.conflicting(r, c.movement)) {
            taken.push(c.movement);
            granted.push(c.vehicle);
        }
    }
    granted
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnvStep {
    /// Robots awaiting a decision for the next step.
    pub observations: BTreeMap<VehicleId, Observation>,
    /// Rewards for robots that acted this step, plus conflict penalties for
    /// robots already inside the box.
    pub rewards: BTreeMap<VehicleId, f64>,
    /// Robots that left the network this step.
    pub exited: Vec<VehicleId>,
    pub events: StepEvents,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct Env {
    network: Arc<Network>,
    params: RewardParams,
    cfg: EpisodeConfig,
    sim: SimState,
    awaiting: BTreeMap<VehicleId, Observation>,
}

impl Env {
    pub fn new(network: Arc<Network>, cfg: EpisodeConfig, params: RewardParams) -> Result<Self, EnvError> {
        let sim = Env::fresh_sim(&network, &cfg)?;
        let mut env = Env {
            network,
            params,
            cfg,
            sim,
            awaiting: BTreeMap::new(),
        };
        env.refresh_observations();
        Ok(env)
    }

    fn fresh_sim(network: &Arc<Network>, cfg: &EpisodeConfig) -> Result<SimState, EnvError> {
        cfg.validate()?;
        let config = SimConfig {
            dt: cfg.dt,
            ..SimConfig::default()
        };
        let mut sim = SimState::new(
            network.clone(),
            cfg.demand.clone(),
            EntryControl::Unsignalized,
            config,
            cfg.seed,
        )
        .map_err(|e| EnvError::Config(e.to_string()))?;
        sim.set_robot_control(true);
        Ok(sim)
    }

    /// Starts a new episode and returns the robots awaiting a decision.
    pub fn reset(&mut self, cfg: EpisodeConfig) -> Result<&BTreeMap<VehicleId, Observation>, EnvError> {
        self.sim = Env::fresh_sim(&self.network, &cfg)?;
        self.cfg = cfg;
        self.refresh_observations();
        Ok(&self.awaiting)
    }

    pub fn network(&self) -> &Arc<Network> {
        &self.network
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.cfg
    }

    pub fn reward_params(&self) -> &RewardParams {
        &self.params
    }

    pub fn obs_dim(&self) -> usize {
        Observation::dim(self.network.direction_groups)
    }

    pub fn sim(&self) -> &SimState {
        &self.sim
    }

    /// Direct simulator access; call [`Env::refresh_observations`] after edits.
    pub fn sim_mut(&mut self) -> &mut SimState {
        &mut self.sim
    }

    pub fn awaiting(&self) -> &BTreeMap<VehicleId, Observation> {
        &self.awaiting
    }

    pub fn refresh_observations(&mut self) -> &BTreeMap<VehicleId, Observation> {
        let stats = GroupStats::compute(&self.sim);
        self.awaiting = self
            .sim
            .robots_in_zone()
            .into_iter()
            .map(|id| (id, stats.observe(self.sim.d_int(id).unwrap().max(0.0))))
            .collect();
        &self.awaiting
    }

    pub fn is_done(&self) -> bool {
        self.sim.time() + 1e-9 >= self.cfg.horizon
    }

    pub fn step(&mut self, actions: &BTreeMap<VehicleId, Action>) -> Result<EnvStep, EnvError> {
        if let Some(&id) = actions.keys().find(|id| !self.awaiting.contains_key(id)) {
            return Err(EnvError::IneligibleAction(id));
        }
        if let Some(&id) = self.awaiting.keys().find(|id| !actions.contains_key(id)) {
            return Err(EnvError::MissingAction(id));
        }

        self.sim.apply_commands(actions);
        self.sim.update_grants();
        let candidates: Vec<Candidate> = actions
            .iter()
            .filter(|(_, &a)| a == Action::Go)
            .filter_map(|(&id, _)| {
                let v = self.sim.vehicle(id)?;
                if v.entry_granted || !self.sim.is_lane_head(id) {
                    return None;
                }
                let g = self.network.movements[v.movement].direction_group;
                let obs = &self.awaiting[&id];
                Some(Candidate {
                    vehicle: id,
                    movement: v.movement,
                    wait: obs.wait_times[g],
                    queue: obs.queue_lengths[g],
                })
            })
            .collect();
        let reserved = self.sim.reserved_movements();
        for id in arbitrate(&self.network, &reserved, &candidates) {
            self.sim.grant(id);
        }

        let before = self.sim.completed().len();
        let events = self.sim.step(actions);
        let in_conflict: BTreeSet<VehicleId> = events.conflicts.iter().flat_map(|&(a, b)| [a, b]).collect();

        let mut rewards = BTreeMap::new();
        for (&id, &action) in actions {
            let obs = &self.awaiting[&id];
            let movement = self.sim.vehicle(id).map(|v| v.movement);
            let w = movement.map_or(0.0, |m| obs.wait_times[self.network.movements[m].direction_group]);
            rewards.insert(id, compute_reward(action, w, in_conflict.contains(&id), &self.params));
        }
        for &id in &in_conflict {
            if rewards.contains_key(&id) {
                continue;
            }
            if self.sim.vehicle(id).is_some_and(|v| v.role == Role::Robot) {
                rewards.insert(id, self.params.conflict_penalty);
            }
        }
        let exited = self.sim.completed()[before..]
            .iter()
            .filter(|r| r.role == Role::Robot)
            .map(|r| r.id)
            .collect();

        self.refresh_observations();
        Ok(EnvStep {
            observations: self.awaiting.clone(),
            rewards,
            exited,
            events,
            done: self.is_done(),
        })
    }
}
