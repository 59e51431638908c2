//! Intersection networks: approaches, movements, conflict relations and demand.
//!
//! Geometry is one-dimensional. A vehicle travels along an approach lane up to
//! the stop line, then along its movement's internal path through the box, then
//! along an exit link whose length is the exit approach's length.

mod config;
mod fourway;

pub use config::{parse_config, serialize_config, ScenarioConfig};
pub use fourway::{builtin_fourway, fourway_center_paths, fourway_demand, CenterPath, Point};

use crate::error::TopologyError;

pub type ApproachId = usize;
pub type MovementId = usize;

/// Default distance before the stop line in which robot vehicles follow the learned policy.
pub const DEFAULT_CONTROL_ZONE: f64 = 30.0;
pub const DEFAULT_SPEED_LIMIT: f64 = 15.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Approach {
    pub name: String,
    pub length: f64,
    pub lane_count: usize,
    pub speed_limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MovementKind {
    Through,
    Left,
    Right,
    Other,
}

impl MovementKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MovementKind::Through => "through",
            MovementKind::Left => "left",
            MovementKind::Right => "right",
            MovementKind::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "through" => MovementKind::Through,
            "left" => MovementKind::Left,
            "right" => MovementKind::Right,
            "other" => MovementKind::Other,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Movement {
    pub id: MovementId,
    pub entry_approach: ApproachId,
    pub entry_lane: usize,
    pub exit_approach: ApproachId,
    pub direction_group: usize,
    /// Path length across the intersection box, in meters.
    pub internal_length: f64,
    pub kind: MovementKind,
}

/// Symmetric boolean relation over movements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConflictMatrix {
    n: usize,
    cells: Vec<bool>,
}

impl ConflictMatrix {
    pub fn new(n: usize) -> Self {
        ConflictMatrix {
            n,
            cells: vec![false; n * n],
        }
    }

    pub fn from_rows(rows: Vec<Vec<bool>>) -> Result<Self, TopologyError> {
        let n = rows.len();
        let mut m = ConflictMatrix::new(n);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(TopologyError::ConflictShape {
                    expected: n,
                    got: row.len(),
                });
            }
            for (j, v) in row.into_iter().enumerate() {
                m.cells[i * n + j] = v;
            }
        }
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, a: usize, b: usize) -> bool {
        self.cells[a * self.n + b]
    }

    /// Sets both (a, b) and (b, a).
    pub fn set_pair(&mut self, a: usize, b: usize, value: bool) {
        self.cells[a * self.n + b] = value;
        self.cells[b * self.n + a] = value;
    }

    /// Number of conflicting unordered pairs.
    pub fn pair_count(&self) -> usize {
        (0..self.n)
            .map(|i| (i + 1..self.n).filter(|&j| self.get(i, j)).count())
            .sum()
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        for i in 0..self.n {
            if self.get(i, i) {
                return Err(TopologyError::SelfConflict(i));
            }
            for j in i + 1..self.n {
                if self.get(i, j) != self.get(j, i) {
                    return Err(TopologyError::AsymmetricConflicts(i, j));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub approaches: Vec<Approach>,
    pub movements: Vec<Movement>,
    pub conflicts: ConflictMatrix,
    pub control_zone: f64,
    /// Number of direction groups K; observation vectors are indexed by group.
    pub direction_groups: usize,
}

impl Network {
    pub fn validate(&self) -> Result<(), TopologyError> {
        if !(self.control_zone > 0.0) {
            return Err(TopologyError::Invalid("control_zone must be positive".into()));
        }
        if self.direction_groups == 0 {
            return Err(TopologyError::Invalid("direction_groups must be at least 1".into()));
        }
        for a in &self.approaches {
            if a.lane_count == 0 {
                return Err(TopologyError::Invalid(format!("approach `{}` has no lanes", a.name)));
            }
            if !(a.speed_limit > 0.0) {
                return Err(TopologyError::Invalid(format!(
                    "approach `{}` speed limit must be positive",
                    a.name
                )));
            }
            if !(a.length > self.control_zone) {
                return Err(TopologyError::ControlZoneTooLong {
                    name: a.name.clone(),
                    length: a.length,
                    control_zone: self.control_zone,
                });
            }
        }
        for (i, a) in self.approaches.iter().enumerate() {
            if self.approaches[..i].iter().any(|b| b.name == a.name) {
                return Err(TopologyError::Invalid(format!("duplicate approach `{}`", a.name)));
            }
        }
        for (i, m) in self.movements.iter().enumerate() {
            if m.id != i {
                return Err(TopologyError::Invalid(format!(
                    "movement ids must be 0..n in order; found {} at position {i}",
                    m.id
                )));
            }
            let entry = self
                .approaches
                .get(m.entry_approach)
                .ok_or_else(|| TopologyError::UnknownApproach(m.entry_approach.to_string()))?;
            if self.approaches.get(m.exit_approach).is_none() {
                return Err(TopologyError::UnknownApproach(m.exit_approach.to_string()));
            }
            if m.entry_approach == m.exit_approach {
                return Err(TopologyError::Invalid(format!(
                    "movement {i} enters and exits through the same approach"
                )));
            }
            if m.entry_lane >= entry.lane_count {
                return Err(TopologyError::Invalid(format!(
                    "movement {i} uses lane {} but approach `{}` has {} lanes",
                    m.entry_lane, entry.name, entry.lane_count
                )));
            }
            if m.direction_group >= self.direction_groups {
                return Err(TopologyError::Invalid(format!(
                    "movement {i} direction group {} outside 0..{}",
                    m.direction_group, self.direction_groups
                )));
            }
            if !(m.internal_length > 0.0) {
                return Err(TopologyError::Invalid(format!(
                    "movement {i} internal length must be positive"
                )));
            }
        }
        if self.conflicts.len() != self.movements.len() {
            return Err(TopologyError::ConflictShape {
                expected: self.movements.len(),
                got: self.conflicts.len(),
            });
        }
        self.conflicts.validate()
    }

    pub fn approach_index(&self, name: &str) -> Option<ApproachId> {
        self.approaches.iter().position(|a| a.name == name)
    }

    pub fn movement(&self, id: MovementId) -> Result<&Movement, TopologyError> {
        self.movements.get(id).ok_or(TopologyError::UnknownMovement(id))
    }

    pub fn conflicts(&self, a: MovementId, b: MovementId) -> Result<bool, TopologyError> {
        self.movement(a)?;
        self.movement(b)?;
        Ok(self.conflicts.get(a, b))
    }

    /// Unchecked conflict lookup for hot loops; ids must be valid.
    #[inline]
    pub fn conflicting(&self, a: MovementId, b: MovementId) -> bool {
        self.conflicts.get(a, b)
    }

    pub fn exit_length(&self, movement: MovementId) -> f64 {
        self.approaches[self.movements[movement].exit_approach].length
    }

    /// Index of the first lane of each approach in a flat lane array, plus the total.
    pub fn lane_offsets(&self) -> (Vec<usize>, usize) {
        let mut offsets = Vec::with_capacity(self.approaches.len());
        let mut total = 0;
        for a in &self.approaches {
            offsets.push(total);
            total += a.lane_count;
        }
        (offsets, total)
    }

    pub fn movements_from(&self, approach: ApproachId) -> impl Iterator<Item = &Movement> {
        self.movements.iter().filter(move |m| m.entry_approach == approach)
    }

    pub fn observation_dim(&self) -> usize {
        3 * self.direction_groups + 1
    }
}

/// Traffic demand for one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandSpec {
    /// Vehicles per hour entering each approach.
    pub inflow: Vec<f64>,
    /// Fraction of an approach's inflow taking each movement, indexed by movement id.
    pub turning_fractions: Vec<f64>,
    pub rv_rate: f64,
}

impl DemandSpec {
    pub fn validate(&self, net: &Network) -> Result<(), TopologyError> {
        if self.inflow.len() != net.approaches.len() {
            return Err(TopologyError::Demand(format!(
                "{} inflow values for {} approaches",
                self.inflow.len(),
                net.approaches.len()
            )));
        }
        if self.turning_fractions.len() != net.movements.len() {
            return Err(TopologyError::Demand(format!(
                "{} turning fractions for {} movements",
                self.turning_fractions.len(),
                net.movements.len()
            )));
        }
        if !(0.0..=1.0).contains(&self.rv_rate) {
            return Err(TopologyError::Demand(format!(
                "rv_rate {} outside [0, 1]",
                self.rv_rate
            )));
        }
        for (a, &q) in self.inflow.iter().enumerate() {
            if !(q >= 0.0) || !q.is_finite() {
                return Err(TopologyError::Demand(format!(
                    "inflow {q} on approach `{}`",
                    net.approaches[a].name
                )));
            }
            let fractions: Vec<f64> = net.movements_from(a).map(|m| self.turning_fractions[m.id]).collect();
            if fractions.iter().any(|&f| !(f >= 0.0)) {
                return Err(TopologyError::Demand(format!(
                    "negative turning fraction on approach `{}`",
                    net.approaches[a].name
                )));
            }
            if fractions.is_empty() {
                if q > 0.0 {
                    return Err(TopologyError::Demand(format!(
                        "approach `{}` has inflow but no movements",
                        net.approaches[a].name
                    )));
                }
                continue;
            }
            let sum: f64 = fractions.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(TopologyError::Demand(format!(
                    "turning fractions on approach `{}` sum to {sum}",
                    net.approaches[a].name
                )));
            }
        }
        Ok(())
    }

    pub fn total_inflow(&self) -> f64 {
        self.inflow.iter().sum()
    }
}

/// Parses network config text and returns the validated network.
pub fn load_network(text: &str) -> Result<Network, TopologyError> {
    parse_config(text).map(|c| c.network)
}
