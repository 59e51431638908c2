//! Fixed-step simulator for a single intersection.
//!
//! Every vehicle lives on a 1-D axis. On its entry approach the position runs
//! from 0 to the approach length (the stop line). Past the stop line the vehicle
//! follows its movement path: the `Inside` phase covers the intersection box
//! until the rear bumper clears it, then `Exit` runs along the exit approach
//! until the front bumper reaches its end.

use std::collections::{BTreeMap, VecDeque};
use std::io::{self, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::idm::{idm_accel, rv_stop_accel, AccelCommand};
use super::signal::{fixed_time_signal, SignalPlan, SignalState};
use super::vehicle::{Action, LinkPhase, Role, VehicleClass, VehicleId, VehicleSampler, VehicleState};
use super::WAIT_SPEED_EPS;
use crate::error::{MetricsError, TopologyError};
use crate::metrics::{emission_rate, fuel_rate, EmissionClassCoeffs, EmissionTable};
use crate::topology::{ApproachId, DemandSpec, MovementId, Network};

/// Overruns of the stop line shorter than this are treated as numerical creep.
const OVERRUN_TOLERANCE: f64 = 0.5;

pub const EVENT_LOG_HEADER: &str = "# mixflow-events v1";

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub time_headway: f64,
    /// A lane head stopped this close to the stop line has arrived for first-come-first-serve entry.
    pub arrival_distance: f64,
    /// Headway snapshot cadence, seconds.
    pub headway_interval: f64,
    /// Delay before a stopped human driver moves off after receiving right of way.
    pub hv_reaction_time: f64,
    pub record_events: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: super::DEFAULT_DT,
            time_headway: super::IDM_TIME_HEADWAY,
            arrival_distance: 3.0,
            headway_interval: 10.0,
            hv_reaction_time: 2.0,
            record_events: false,
        }
    }
}

/// How human-driven vehicles obtain permission to cross the stop line.
#[derive(Debug, Clone, PartialEq)]
pub enum EntryControl {
    /// First-come-first-serve right of way.
    Unsignalized,
    Signalized(SignalPlan),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletedRecord {
    pub id: VehicleId,
    pub class: VehicleClass,
    pub role: Role,
    pub waiting_time: f64,
    pub travel_time: f64,
    /// Time-mean CO2 rate over the vehicle's lifetime, mg/s.
    pub co2_mg_s: f64,
    /// Time-mean fuel rate, ml/s.
    pub fuel_ml_s: f64,
    /// False for vehicles still in the network when the record was taken.
    pub finished: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadwaySample {
    pub time: f64,
    /// Class of the follower.
    pub class: VehicleClass,
    /// Front bumper to front bumper, meters.
    pub headway: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SafetyKind {
    EmergencyBrake,
    StopLineOverrun,
    NegativeGap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SafetyEvent {
    pub vehicle: VehicleId,
    pub kind: SafetyKind,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepEvents {
    pub spawned: Vec<VehicleId>,
    pub entries: Vec<VehicleId>,
    pub exits: Vec<VehicleId>,
    pub conflicts: Vec<(VehicleId, VehicleId)>,
    pub safety: Vec<SafetyEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Spawn,
    Enter,
    Clear,
    Leave,
    Conflict,
    Safety(SafetyKind),
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Spawn => "spawn",
            EventKind::Enter => "enter",
            EventKind::Clear => "clear",
            EventKind::Leave => "leave",
            EventKind::Conflict => "conflict",
            EventKind::Safety(SafetyKind::EmergencyBrake) => "emergency_brake",
            EventKind::Safety(SafetyKind::StopLineOverrun) => "stop_line_overrun",
            EventKind::Safety(SafetyKind::NegativeGap) => "negative_gap",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    pub vehicle: VehicleId,
    pub kind: EventKind,
    pub position: f64,
    pub speed: f64,
}

/// Writes the event log: a version line, a column header, then one CSV row per event.
pub fn write_event_log<W: Write>(events: &[EventRecord], mut w: W) -> io::Result<()> {
    writeln!(w, "{EVENT_LOG_HEADER}")?;
    writeln!(w, "time,vehicle,kind,position,speed")?;
    for e in events {
        writeln!(
            w,
            "{},{},{},{},{}",
            e.time,
            e.vehicle,
            e.kind.as_str(),
            e.position,
            e.speed
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    class: VehicleClass,
    role: Role,
    movement: MovementId,
}

#[derive(Debug, Clone)]
pub struct SimState {
    network: Arc<Network>,
    demand: DemandSpec,
    control: EntryControl,
    config: SimConfig,
    sampler: VehicleSampler,
    coeffs: Vec<EmissionClassCoeffs>,
    rng: ChaCha8Rng,
    time: f64,
    next_id: VehicleId,
    robot_control: bool,
    vehicles: BTreeMap<VehicleId, VehicleState>,
    lane_approach: Vec<ApproachId>,
    lane_offsets: Vec<usize>,
    /// Approach lanes, head (closest to the stop line) first.
    lanes: Vec<VecDeque<VehicleId>>,
    /// Most recent vehicle to leave each lane into the box.
    last_entered: Vec<Option<VehicleId>>,
    /// Vehicles past the stop line per movement, most advanced first.
    paths: Vec<VecDeque<VehicleId>>,
    backlog: Vec<VecDeque<Pending>>,
    movement_cdf: Vec<Vec<(f64, MovementId)>>,
    demanded: usize,
    spawned: usize,
    completed: Vec<CompletedRecord>,
    headways: Vec<HeadwaySample>,
    next_snapshot: f64,
    events: Vec<EventRecord>,
}

impl SimState {
    pub fn new(
        network: Arc<Network>,
        demand: DemandSpec,
        control: EntryControl,
        config: SimConfig,
        seed: u64,
    ) -> Result<Self, TopologyError> {
        network.validate()?;
        demand.validate(&network)?;
        if !(config.dt > 0.0) || !(config.headway_interval > 0.0) || !(config.time_headway > 0.0) {
            return Err(TopologyError::Invalid(
                "dt, time headway and headway interval must be positive".into(),
            ));
        }
        if let EntryControl::Signalized(plan) = &control {
            plan.validate(&network).map_err(TopologyError::Invalid)?;
        }
        let (lane_offsets, n_lanes) = network.lane_offsets();
        let mut lane_approach = Vec::with_capacity(n_lanes);
        for (a, app) in network.approaches.iter().enumerate() {
            lane_approach.extend(std::iter::repeat_n(a, app.lane_count));
        }
        let movement_cdf = (0..network.approaches.len())
            .map(|a| {
                let mut acc = 0.0;
                network
                    .movements_from(a)
                    .filter(|m| demand.turning_fractions[m.id] > 0.0)
                    .map(|m| {
                        acc += demand.turning_fractions[m.id];
                        (acc, m.id)
                    })
                    .collect()
            })
            .collect();
        let table = EmissionTable::default();
        let coeffs = resolve_coeffs(&table).expect("bundled table covers all classes");
        Ok(SimState {
            sampler: VehicleSampler::new(demand.rv_rate),
            coeffs,
            rng: ChaCha8Rng::seed_from_u64(seed),
            time: 0.0,
            next_id: 0,
            robot_control: false,
            vehicles: BTreeMap::new(),
            lane_approach,
            lane_offsets,
            lanes: vec![VecDeque::new(); n_lanes],
            last_entered: vec![None; n_lanes],
            paths: vec![VecDeque::new(); network.movements.len()],
            backlog: vec![VecDeque::new(); n_lanes],
            movement_cdf,
            demanded: 0,
            spawned: 0,
            completed: Vec::new(),
            headways: Vec::new(),
            next_snapshot: config.headway_interval,
            events: Vec::new(),
            network,
            demand,
            control,
            config,
        })
    }

    /// Replaces the emission coefficients used for per-vehicle accounting.
    pub fn set_emission_table(&mut self, table: &EmissionTable) -> Result<(), MetricsError> {
        self.coeffs = resolve_coeffs(table)?;
        Ok(())
    }

    /// When enabled, robot vehicles inside the control zone take Stop/Go commands
    /// and receive entry grants only through [`SimState::grant`]. Otherwise they
    /// drive exactly like human vehicles.
    pub fn set_robot_control(&mut self, enabled: bool) {
        self.robot_control = enabled;
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn control(&self) -> &EntryControl {
        &self.control
    }

    pub fn demand(&self) -> &DemandSpec {
        &self.demand
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &VehicleState> {
        self.vehicles.values()
    }

    pub fn vehicle(&self, id: VehicleId) -> Option<&VehicleState> {
        self.vehicles.get(&id)
    }

    pub fn completed(&self) -> &[CompletedRecord] {
        &self.completed
    }

    pub fn headway_samples(&self) -> &[HeadwaySample] {
        &self.headways
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn spawned_count(&self) -> usize {
        self.spawned
    }

    pub fn in_network_count(&self) -> usize {
        self.vehicles.len()
    }

    /// Generated vehicles still waiting for entry space.
    pub fn backlog_len(&self) -> usize {
        self.demanded - self.spawned
    }

    pub fn lane_vehicles(&self, lane: usize) -> impl Iterator<Item = &VehicleState> {
        self.lanes[lane].iter().map(move |id| &self.vehicles[id])
    }

    pub fn lane_of(&self, approach: ApproachId, lane: usize) -> usize {
        self.lane_offsets[approach] + lane
    }

    /// Distance from the front bumper to the stop line, for vehicles still approaching.
    pub fn d_int(&self, id: VehicleId) -> Option<f64> {
        let v = self.vehicles.get(&id)?;
        (v.phase == LinkPhase::Approach).then(|| self.approach_length(v) - v.position)
    }

    pub fn is_lane_head(&self, id: VehicleId) -> bool {
        self.vehicles
            .get(&id)
            .is_some_and(|v| v.phase == LinkPhase::Approach && self.lanes[v.lane].front() == Some(&id))
    }

    /// Robot vehicles on an approach within the control zone, in id order.
    pub fn robots_in_zone(&self) -> Vec<VehicleId> {
        self.vehicles
            .values()
            .filter(|v| {
                v.role == Role::Robot
                    && v.phase == LinkPhase::Approach
                    && self.approach_length(v) - v.position <= self.network.control_zone
            })
            .map(|v| v.id)
            .collect()
    }

    /// Movements that currently block a conflicting entry: vehicles inside the
    /// box and vehicles holding an unused entry grant.
    pub fn reserved_movements(&self) -> Vec<MovementId> {
        self.vehicles
            .values()
            .filter(|v| v.phase == LinkPhase::Inside || (v.phase == LinkPhase::Approach && v.entry_granted))
            .map(|v| v.movement)
            .collect()
    }

    pub fn blocks(&self, reserved: &[MovementId], movement: MovementId) -> bool {
        reserved.iter().any(|&r| self.network.conflicting(r, movement))
    }

    /// Grants stop-line entry to an approaching vehicle. Returns false if it is not approaching.
    pub fn grant(&mut self, id: VehicleId) -> bool {
        let t = self.time;
        match self.vehicles.get_mut(&id) {
            Some(v) if v.phase == LinkPhase::Approach => {
                set_grant(v, true, t);
                true
            }
            _ => false,
        }
    }

    /// Places a vehicle on its entry lane at `position` (meters from the approach start).
    /// Counts as a spawn. Fails if the slot overlaps another vehicle.
    pub fn insert_vehicle(
        &mut self,
        class: VehicleClass,
        role: Role,
        movement: MovementId,
        position: f64,
        speed: f64,
    ) -> Result<VehicleId, TopologyError> {
        let mv = self.network.movement(movement)?.clone();
        let lane = self.lane_offsets[mv.entry_approach] + mv.entry_lane;
        let p = class.params();
        let len = self.network.approaches[mv.entry_approach].length;
        if !(0.0..=len).contains(&position) || !(0.0..=p.max_speed).contains(&speed) {
            return Err(TopologyError::Invalid(format!(
                "cannot place vehicle at {position} m, {speed} m/s"
            )));
        }
        let idx = self.lanes[lane]
            .iter()
            .position(|id| self.vehicles[id].position < position)
            .unwrap_or(self.lanes[lane].len());
        let clear_ahead = idx == 0 || {
            let l = &self.vehicles[&self.lanes[lane][idx - 1]];
            l.position - l.params().length >= position
        };
        let clear_behind = idx == self.lanes[lane].len() || {
            let f = &self.vehicles[&self.lanes[lane][idx]];
            position - p.length >= f.position
        };
        if !clear_ahead || !clear_behind {
            return Err(TopologyError::Invalid(format!(
                "slot at {position} m overlaps a vehicle"
            )));
        }
        let id = self.new_vehicle(class, role, movement, lane, position, speed);
        self.lanes[lane].insert(idx, id);
        Ok(id)
    }

    pub fn set_desired_speed(&mut self, id: VehicleId, v_desired: f64) {
        if let Some(v) = self.vehicles.get_mut(&id) {
            v.v_desired = v_desired;
        }
    }

    fn new_vehicle(
        &mut self,
        class: VehicleClass,
        role: Role,
        movement: MovementId,
        lane: usize,
        position: f64,
        speed: f64,
    ) -> VehicleId {
        let id = self.next_id;
        self.next_id += 1;
        let approach = self.lane_approach[lane];
        let v_desired = class
            .params()
            .max_speed
            .min(self.network.approaches[approach].speed_limit);
        self.vehicles.insert(
            id,
            VehicleState::new(id, class, role, movement, lane, position, speed, v_desired, self.time),
        );
        self.spawned += 1;
        self.log(id, EventKind::Spawn);
        id
    }

    fn log(&mut self, id: VehicleId, kind: EventKind) {
        if self.config.record_events {
            if let Some(v) = self.vehicles.get(&id) {
                self.events.push(EventRecord {
                    time: self.time,
                    vehicle: id,
                    kind,
                    position: v.position,
                    speed: v.speed,
                });
            }
        }
    }

    fn approach_length(&self, v: &VehicleState) -> f64 {
        self.network.approaches[self.lane_approach[v.lane]].length
    }

    fn path_coord(&self, v: &VehicleState) -> f64 {
        match v.phase {
            LinkPhase::Inside | LinkPhase::Approach => v.position,
            LinkPhase::Exit => self.network.movements[v.movement].internal_length + v.position,
        }
    }

    fn human_rules(&self, v: &VehicleState) -> bool {
        v.role == Role::Human || !self.robot_control
    }

    /// Records stop-line arrival times of lane heads under first-come-first-serve.
    /// Human drivers come to a full stop before claiming the box.
    fn record_arrivals(&mut self) {
        let t = self.time;
        let reach = self.config.arrival_distance;
        for lane in 0..self.lanes.len() {
            let Some(&head) = self.lanes[lane].front() else {
                continue;
            };
            let v = &self.vehicles[&head];
            if !self.human_rules(v) || v.arrival_time.is_some() {
                continue;
            }
            if self.approach_length(v) - v.position <= reach && v.speed < WAIT_SPEED_EPS {
                self.vehicles.get_mut(&head).unwrap().arrival_time = Some(t);
            }
        }
    }

    /// First-come-first-serve grants for arrived human-driven lane heads:
    /// earliest arrival first, ties by approach, lane and id; a vehicle is
    /// granted unless its movement conflicts with one inside the box or one
    /// already holding a grant.
    pub fn unsignalized_right_of_way(&self) -> Vec<VehicleId> {
        let mut waiting: Vec<&VehicleState> = self
            .lanes
            .iter()
            .filter_map(|q| q.front())
            .map(|id| &self.vehicles[id])
            .filter(|v| self.human_rules(v) && !v.entry_granted && v.arrival_time.is_some())
            .collect();
        waiting.sort_by(|a, b| {
            a.arrival_time
                .unwrap()
                .total_cmp(&b.arrival_time.unwrap())
                .then(self.lane_approach[a.lane].cmp(&self.lane_approach[b.lane]))
                .then(a.lane.cmp(&b.lane))
                .then(a.id.cmp(&b.id))
        });
        let mut reserved = self.reserved_movements();
        let mut granted = Vec::new();
        for v in waiting {
            if !self.blocks(&reserved, v.movement) {
                reserved.push(v.movement);
                granted.push(v.id);
            }
        }
        granted
    }

    /// Refreshes entry permissions of human-driven vehicles for the current time.
    pub fn update_grants(&mut self) {
        let states = match &self.control {
            EntryControl::Unsignalized => None,
            EntryControl::Signalized(plan) => Some(fixed_time_signal(plan, self.time, self.network.movements.len())),
        };
        match states {
            None => {
                self.record_arrivals();
                let t = self.time;
                for id in self.unsignalized_right_of_way() {
                    set_grant(self.vehicles.get_mut(&id).unwrap(), true, t);
                }
            }
            Some(states) => {
                let ids: Vec<VehicleId> = self.lanes.iter().flatten().copied().collect();
                for id in ids {
                    let v = &self.vehicles[&id];
                    if !self.human_rules(v) {
                        continue;
                    }
                    let d_int = self.approach_length(v) - v.position;
                    let committed = d_int < v.speed * v.speed / (2.0 * v.params().max_decel);
                    let t = self.time;
                    let v = self.vehicles.get_mut(&id).unwrap();
                    match states[v.movement] {
                        SignalState::Green => set_grant(v, true, t),
                        SignalState::Yellow | SignalState::Red => {
                            if !committed {
                                set_grant(v, false, t);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Advances the world by one step. `commands` carries Stop/Go actions for
    /// robot vehicles.
    pub fn step(&mut self, commands: &BTreeMap<VehicleId, Action>) -> StepEvents {
        let dt = self.config.dt;
        let mut ev = StepEvents::default();
        self.apply_commands(commands);
        self.update_grants();

        let plans = self.plan_accelerations();
        for (id, cmd) in plans {
            let v = self.vehicles.get_mut(&id).unwrap();
            let p = v.class.params();
            let v0 = v.speed;
            let v1 = (v0 + cmd.accel * dt).clamp(0.0, p.max_speed);
            let a_eff = (v1 - v0) / dt;
            v.commanded_accel = cmd.accel;
            v.speed = v1;
            v.position += v1 * dt;
            let c = &self.coeffs[v.class.index()];
            v.co2_mg += emission_rate(c, v1, a_eff) * dt;
            v.fuel_ml += fuel_rate(c, v1, a_eff) * dt;
            v.lifetime += dt;
            if v1 < WAIT_SPEED_EPS {
                v.waiting_time += dt;
            }
            if cmd.flagged {
                ev.safety.push(SafetyEvent {
                    vehicle: id,
                    kind: SafetyKind::EmergencyBrake,
                });
            }
        }

        self.advance_lanes(&mut ev);
        self.advance_paths(&mut ev);
        self.spawn(&mut ev);
        self.time += dt;

        if self.time + 1e-9 >= self.next_snapshot {
            self.snapshot_headways();
            self.next_snapshot += self.config.headway_interval;
        }

        ev.conflicts = detect_conflicts(self);
        if self.config.record_events {
            for s in ev.safety.clone() {
                self.log(s.vehicle, EventKind::Safety(s.kind));
            }
            for (a, b) in ev.conflicts.clone() {
                self.log(a, EventKind::Conflict);
                self.log(b, EventKind::Conflict);
            }
        }
        ev
    }

    /// Records robot Stop/Go commands. A Stop revokes a pending grant unless
    /// the vehicle can no longer stop before the line.
    pub fn apply_commands(&mut self, commands: &BTreeMap<VehicleId, Action>) {
        for (&id, &action) in commands {
            let Some(v) = self.vehicles.get(&id) else {
                continue;
            };
            if v.role != Role::Robot || v.phase != LinkPhase::Approach {
                continue;
            }
            let d_int = self.approach_length(v) - v.position;
            let can_stop = d_int >= v.speed * v.speed / (2.0 * v.params().emergency_decel());
            let v = self.vehicles.get_mut(&id).unwrap();
            v.current_action = Some(action);
            if action == Action::Stop && can_stop {
                set_grant(v, false, 0.0);
            }
        }
    }

    fn plan_accelerations(&self) -> Vec<(VehicleId, AccelCommand)> {
        let mut out = Vec::with_capacity(self.vehicles.len());
        for (lane, queue) in self.lanes.iter().enumerate() {
            for (idx, &id) in queue.iter().enumerate() {
                let leader = (idx > 0).then(|| queue[idx - 1]);
                out.push((id, self.approach_accel(lane, id, leader)));
            }
        }
        for path in &self.paths {
            for (idx, &id) in path.iter().enumerate() {
                let leader = (idx > 0).then(|| path[idx - 1]);
                out.push((id, self.path_accel(id, leader)));
            }
        }
        out
    }

    fn toward_desired(&self, v: &VehicleState) -> AccelCommand {
        let a = ((v.v_desired - v.speed) / self.config.dt).min(v.params().max_accel);
        AccelCommand {
            accel: a,
            flagged: false,
        }
    }

    fn approach_accel(&self, lane: usize, id: VehicleId, leader: Option<VehicleId>) -> AccelCommand {
        let v = &self.vehicles[&id];
        let p = v.params();
        let th = self.config.time_headway;
        let d_int = self.network.approaches[self.lane_approach[lane]].length - v.position;
        let controlled = !self.human_rules(v) && d_int <= self.network.control_zone;
        let go = controlled && v.current_action == Some(Action::Go) && v.entry_granted;
        // Robots that were told to go race at full acceleration; the leader
        // terms then only apply their interaction part.
        let v0 = if go { f64::INFINITY } else { v.v_desired };
        let mut cmd = if go {
            self.toward_desired(v)
        } else {
            idm_accel(v.speed, v.v_desired, f64::INFINITY, 0.0, p, th)
        };
        match leader {
            Some(l) => {
                let l = &self.vehicles[&l];
                let gap = l.position - l.params().length - v.position;
                cmd = cmd.min(idm_accel(v.speed, v0, gap, v.speed - l.speed, p, th));
            }
            None => {
                if let Some(le) = self.last_entered[lane].and_then(|le| self.vehicles.get(&le)) {
                    if le.phase == LinkPhase::Inside {
                        let gap = d_int + le.position - le.params().length;
                        cmd = cmd.min(idm_accel(v.speed, v0, gap, v.speed - le.speed, p, th));
                    }
                }
                if v.entry_granted {
                    if let Some(t) = self.paths[v.movement].back().map(|t| &self.vehicles[t]) {
                        let gap = d_int + self.path_coord(t) - t.params().length;
                        cmd = cmd.min(idm_accel(v.speed, v0, gap, v.speed - t.speed, p, th));
                    }
                }
            }
        }
        let reacting = self.human_rules(v)
            && v.speed < WAIT_SPEED_EPS
            && v.granted_at
                .is_some_and(|g| self.time < g + self.config.hv_reaction_time);
        if !v.entry_granted || reacting {
            cmd = cmd.min(idm_accel(v.speed, v.v_desired, d_int + p.min_gap, v.speed, p, th));
        }
        if controlled && v.current_action == Some(Action::Stop) {
            cmd = cmd.min(rv_stop_accel(v.speed, d_int, p));
        }
        cmd
    }

    fn path_accel(&self, id: VehicleId, leader: Option<VehicleId>) -> AccelCommand {
        let v = &self.vehicles[&id];
        let p = v.params();
        let th = self.config.time_headway;
        let race = v.phase == LinkPhase::Inside && !self.human_rules(v);
        let (mut cmd, v0) = if race {
            (self.toward_desired(v), f64::INFINITY)
        } else {
            (idm_accel(v.speed, v.v_desired, f64::INFINITY, 0.0, p, th), v.v_desired)
        };
        if let Some(l) = leader {
            let l = &self.vehicles[&l];
            let gap = self.path_coord(l) - l.params().length - self.path_coord(v);
            cmd = cmd.min(idm_accel(v.speed, v0, gap, v.speed - l.speed, p, th));
        }
        cmd
    }

    fn advance_lanes(&mut self, ev: &mut StepEvents) {
        for lane in 0..self.lanes.len() {
            let length = self.network.approaches[self.lane_approach[lane]].length;
            while let Some(&head) = self.lanes[lane].front() {
                let v = self.vehicles.get_mut(&head).unwrap();
                if v.position < length {
                    break;
                }
                if v.entry_granted {
                    self.lanes[lane].pop_front();
                    let exit = self.network.movements[v.movement].exit_approach;
                    v.phase = LinkPhase::Inside;
                    v.position -= length;
                    set_grant(v, false, 0.0);
                    v.v_desired = v.params().max_speed.min(self.network.approaches[exit].speed_limit);
                    self.paths[v.movement].push_back(head);
                    self.last_entered[lane] = Some(head);
                    ev.entries.push(head);
                    self.log(head, EventKind::Enter);
                } else {
                    let overrun = v.position - length;
                    v.position = length;
                    v.speed = 0.0;
                    if overrun > OVERRUN_TOLERANCE {
                        ev.safety.push(SafetyEvent {
                            vehicle: head,
                            kind: SafetyKind::StopLineOverrun,
                        });
                    }
                    break;
                }
            }
            // Rear bumper of whatever is ahead, in approach coordinates.
            let mut ahead: Option<(f64, f64)> = self.last_entered[lane]
                .and_then(|le| self.vehicles.get(&le))
                .filter(|le| le.phase == LinkPhase::Inside)
                .map(|le| (length + le.position - le.params().length, le.speed));
            for idx in 0..self.lanes[lane].len() {
                let id = self.lanes[lane][idx];
                let v = self.vehicles.get_mut(&id).unwrap();
                if let Some((rear, speed)) = ahead {
                    if v.position > rear + 1e-9 {
                        v.position = rear;
                        v.speed = v.speed.min(speed);
                        ev.safety.push(SafetyEvent {
                            vehicle: id,
                            kind: SafetyKind::NegativeGap,
                        });
                    }
                }
                ahead = Some((v.position - v.params().length, v.speed));
            }
        }
    }

    fn advance_paths(&mut self, ev: &mut StepEvents) {
        let t_end = self.time + self.config.dt;
        for m in 0..self.paths.len() {
            let internal = self.network.movements[m].internal_length;
            let exit_len = self.network.exit_length(m);
            for idx in 0..self.paths[m].len() {
                let id = self.paths[m][idx];
                let v = self.vehicles.get_mut(&id).unwrap();
                if v.phase == LinkPhase::Inside && v.position >= internal + v.params().length {
                    v.phase = LinkPhase::Exit;
                    v.position -= internal;
                    self.log(id, EventKind::Clear);
                }
            }
            while let Some(&front) = self.paths[m].front() {
                let v = &self.vehicles[&front];
                if v.phase != LinkPhase::Exit || v.position < exit_len {
                    break;
                }
                self.paths[m].pop_front();
                self.log(front, EventKind::Leave);
                let v = self.vehicles.remove(&front).unwrap();
                self.completed.push(CompletedRecord {
                    id: v.id,
                    class: v.class,
                    role: v.role,
                    waiting_time: v.waiting_time,
                    travel_time: t_end - v.spawn_time,
                    co2_mg_s: v.co2_mg / v.lifetime,
                    fuel_ml_s: v.fuel_ml / v.lifetime,
                    finished: true,
                });
                ev.exits.push(front);
            }
            let mut ahead: Option<(f64, f64)> = None;
            for idx in 0..self.paths[m].len() {
                let id = self.paths[m][idx];
                let coord = self.path_coord(&self.vehicles[&id]);
                let v = self.vehicles.get_mut(&id).unwrap();
                if let Some((rear, speed)) = ahead {
                    if coord > rear + 1e-9 {
                        v.position -= coord - rear;
                        v.speed = v.speed.min(speed);
                        ev.safety.push(SafetyEvent {
                            vehicle: id,
                            kind: SafetyKind::NegativeGap,
                        });
                    }
                }
                let coord = coord.min(ahead.map_or(f64::INFINITY, |a| a.0));
                ahead = Some((coord - v.params().length, v.speed));
            }
        }
    }

    fn spawn(&mut self, ev: &mut StepEvents) {
        let dt = self.config.dt;
        for a in 0..self.network.approaches.len() {
            let p = (self.demand.inflow[a] * dt / 3600.0).min(1.0);
            if p <= 0.0 || self.movement_cdf[a].is_empty() {
                continue;
            }
            if self.rng.gen::<f64>() >= p {
                continue;
            }
            let cdf = &self.movement_cdf[a];
            let u = self.rng.gen::<f64>() * cdf.last().unwrap().0;
            let movement = cdf.iter().find(|(c, _)| u < *c).unwrap_or(cdf.last().unwrap()).1;
            let (class, role) = self.sampler.sample(&mut self.rng);
            let mv = &self.network.movements[movement];
            let lane = self.lane_offsets[mv.entry_approach] + mv.entry_lane;
            self.backlog[lane].push_back(Pending { class, role, movement });
            self.demanded += 1;
        }
        for lane in 0..self.lanes.len() {
            while let Some(&pending) = self.backlog[lane].front() {
                let p = pending.class.params();
                let v_des = p
                    .max_speed
                    .min(self.network.approaches[self.lane_approach[lane]].speed_limit);
                let speed = match self.lanes[lane].back().map(|t| &self.vehicles[t]) {
                    None => v_des,
                    Some(t) => {
                        let gap = t.position - t.params().length;
                        if gap < p.length + p.min_gap {
                            break;
                        }
                        let a = idm_accel(v_des, v_des, gap, v_des - t.speed, p, self.config.time_headway);
                        if a.accel < -p.max_decel {
                            t.speed.min(v_des)
                        } else {
                            v_des
                        }
                    }
                };
                self.backlog[lane].pop_front();
                let id = self.new_vehicle(pending.class, pending.role, pending.movement, lane, 0.0, speed);
                self.lanes[lane].push_back(id);
                ev.spawned.push(id);
            }
        }
    }

    fn snapshot_headways(&mut self) {
        for queue in &self.lanes {
            for pair in queue.iter().collect::<Vec<_>>().windows(2) {
                let l = &self.vehicles[pair[0]];
                let f = &self.vehicles[pair[1]];
                self.headways.push(HeadwaySample {
                    time: self.time,
                    class: f.class,
                    headway: l.position - f.position,
                });
            }
        }
    }

    /// Completed vehicles plus partial records for vehicles still in the network.
    pub fn records(&self) -> Vec<CompletedRecord> {
        let mut out = self.completed.clone();
        out.extend(
            self.vehicles
                .values()
                .filter(|v| v.lifetime > 0.0)
                .map(|v| CompletedRecord {
                    id: v.id,
                    class: v.class,
                    role: v.role,
                    waiting_time: v.waiting_time,
                    travel_time: self.time - v.spawn_time,
                    co2_mg_s: v.co2_mg / v.lifetime,
                    fuel_ml_s: v.fuel_ml / v.lifetime,
                    finished: false,
                }),
        );
        out
    }
}

fn set_grant(v: &mut VehicleState, granted: bool, t: f64) {
    if granted && !v.entry_granted {
        v.granted_at = Some(t);
    } else if !granted {
        v.granted_at = None;
    }
    v.entry_granted = granted;
}

fn resolve_coeffs(table: &EmissionTable) -> Result<Vec<EmissionClassCoeffs>, MetricsError> {
    VehicleClass::ALL
        .iter()
        .map(|c| table.get(c.params().emission_class).cloned())
        .collect()
}

/// All pairs of vehicles simultaneously inside the box on conflicting movements,
/// each unordered pair once with the smaller id first.
pub fn detect_conflicts(sim: &SimState) -> Vec<(VehicleId, VehicleId)> {
    let inside: Vec<&VehicleState> = sim.vehicles.values().filter(|v| v.phase == LinkPhase::Inside).collect();
    let mut pairs = Vec::new();
    for (i, a) in inside.iter().enumerate() {
        for b in &inside[i + 1..] {
            if sim.network.conflicting(a.movement, b.movement) {
                pairs.push((a.id, b.id));
            }
        }
    }
    pairs
}
