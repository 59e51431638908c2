use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::topology::MovementId;

pub type VehicleId = u64;

/// Kinematic, dynamic and emission parameters of one vehicle class.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleType {
    pub name: &'static str,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub mass: f64,
    pub min_gap: f64,
    pub max_accel: f64,
    /// Comfortable deceleration, positive magnitude.
    pub max_decel: f64,
    pub max_speed: f64,
    pub emission_class: &'static str,
}

impl VehicleType {
    /// Hard braking limit used for emergencies.
    pub fn emergency_decel(&self) -> f64 {
        2.0 * self.max_decel
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VehicleClass {
    PassengerCar,
    Pickup,
    Van,
    SemiTrailer,
    Truck,
}

impl VehicleClass {
    pub const ALL: [VehicleClass; 5] = [
        VehicleClass::PassengerCar,
        VehicleClass::Pickup,
        VehicleClass::Van,
        VehicleClass::SemiTrailer,
        VehicleClass::Truck,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn params(self) -> &'static VehicleType {
        &VEHICLE_TYPES[self.index()]
    }

    pub fn name(self) -> &'static str {
        self.params().name
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

pub static VEHICLE_TYPES: [VehicleType; 5] = [
    VehicleType {
        name: "passenger_car",
        length: 5.0,
        width: 1.8,
        height: 1.5,
        mass: 1500.0,
        min_gap: 2.5,
        max_accel: 2.6,
        max_decel: 4.5,
        max_speed: 55.56,
        emission_class: "PC_G_EU4",
    },
    VehicleType {
        name: "pickup",
        length: 5.8,
        width: 2.0,
        height: 1.9,
        mass: 2500.0,
        min_gap: 2.5,
        max_accel: 2.6,
        max_decel: 4.5,
        max_speed: 33.33,
        emission_class: "LDV_G_PICKUP",
    },
    VehicleType {
        name: "van",
        length: 5.5,
        width: 2.0,
        height: 2.1,
        mass: 3000.0,
        min_gap: 2.5,
        max_accel: 2.6,
        max_decel: 4.5,
        max_speed: 27.78,
        emission_class: "LDV_G_VAN",
    },
    VehicleType {
        name: "semi_trailer",
        length: 16.5,
        width: 2.55,
        height: 4.0,
        mass: 15000.0,
        min_gap: 2.5,
        max_accel: 1.0,
        max_decel: 4.0,
        max_speed: 36.11,
        emission_class: "HDV_D_EU4",
    },
    VehicleType {
        name: "truck",
        length: 7.1,
        width: 2.4,
        height: 2.4,
        mass: 12000.0,
        min_gap: 2.5,
        max_accel: 1.3,
        max_decel: 4.0,
        max_speed: 36.11,
        emission_class: "HDV_D_TRUCK",
    },
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Human,
    Robot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Stop,
    Go,
}

impl Action {
    pub fn index(self) -> usize {
        match self {
            Action::Stop => 0,
            Action::Go => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Action::Stop
        } else {
            Action::Go
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkPhase {
    Approach,
    Inside,
    Exit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub id: VehicleId,
    pub class: VehicleClass,
    pub role: Role,
    /// Single-movement route.
    pub movement: MovementId,
    /// Flat index of the entry lane.
    pub lane: usize,
    pub phase: LinkPhase,
    /// Front-bumper position along the current phase, meters.
    ///
    /// Approach: distance from the approach start (stop line at the approach length).
    /// Inside: distance past the stop line; the phase lasts until the rear clears the box.
    /// Exit: distance past the far edge of the box.
    pub position: f64,
    pub speed: f64,
    pub commanded_accel: f64,
    pub v_desired: f64,
    pub spawn_time: f64,
    pub waiting_time: f64,
    pub current_action: Option<Action>,
    /// Permission to cross the stop line (green, right-of-way or arbitration grant).
    pub entry_granted: bool,
    /// First time the vehicle was at the head of its lane close to the stop line.
    pub arrival_time: Option<f64>,
    /// When the current entry grant was issued.
    pub(crate) granted_at: Option<f64>,
    pub(crate) co2_mg: f64,
    pub(crate) fuel_ml: f64,
    pub(crate) lifetime: f64,
}

impl VehicleState {
    /// A fresh vehicle on its entry lane with no waiting or emission history.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: VehicleId,
        class: VehicleClass,
        role: Role,
        movement: MovementId,
        lane: usize,
        position: f64,
        speed: f64,
        v_desired: f64,
        spawn_time: f64,
    ) -> Self {
        VehicleState {
            id,
            class,
            role,
            movement,
            lane,
            phase: LinkPhase::Approach,
            position,
            speed,
            commanded_accel: 0.0,
            v_desired,
            spawn_time,
            waiting_time: 0.0,
            current_action: None,
            entry_granted: false,
            arrival_time: None,
            granted_at: None,
            co2_mg: 0.0,
            fuel_ml: 0.0,
            lifetime: 0.0,
        }
    }

    pub fn params(&self) -> &'static VehicleType {
        self.class.params()
    }

    pub fn is_robot(&self) -> bool {
        self.role == Role::Robot
    }
}

/// Vehicle mix row: percentages for RV-car, HV-car, pickup, van, semi-trailer, truck.
pub type MixRow = [f64; 6];

const MIX_TABLE: [(f64, MixRow); 9] = [
    (0.1, [10.0, 60.0, 3.0, 15.0, 11.0, 1.0]),
    (0.2, [20.0, 50.0, 3.0, 15.0, 11.0, 1.0]),
    (0.3, [30.0, 40.0, 3.0, 15.0, 11.0, 1.0]),
    (0.4, [40.0, 30.0, 3.0, 15.0, 11.0, 1.0]),
    (0.5, [50.0, 20.0, 3.0, 15.0, 11.0, 1.0]),
    (0.6, [60.0, 10.0, 3.0, 15.0, 11.0, 1.0]),
    (0.7, [70.0, 0.0, 3.0, 15.0, 11.0, 1.0]),
    (0.8, [80.0, 0.0, 2.0, 10.0, 7.3, 0.7]),
    (0.9, [90.0, 0.0, 1.0, 5.0, 3.7, 0.3]),
];

/// Base composition without robot vehicles.
const BASE_MIX: [f64; 4] = [3.0, 15.0, 11.0, 1.0];

/// Vehicle-type percentages for a robot-vehicle rate.
///
/// Tabulated rates use the table row exactly. Other rates shrink the human
/// passenger-car share first; once it reaches zero (rate 0.7) the remaining
/// classes are scaled down proportionally.
pub fn mix_row(rv_rate: f64) -> MixRow {
    if let Some((_, row)) = MIX_TABLE.iter().find(|(r, _)| (r - rv_rate).abs() < 1e-9) {
        return *row;
    }
    let rv = 100.0 * rv_rate.clamp(0.0, 1.0);
    let others: f64 = BASE_MIX.iter().sum();
    let hv_car = (100.0 - others - rv).max(0.0);
    let scale = if hv_car > 0.0 { 1.0 } else { (100.0 - rv) / others };
    [
        rv,
        hv_car,
        BASE_MIX[0] * scale,
        BASE_MIX[1] * scale,
        BASE_MIX[2] * scale,
        BASE_MIX[3] * scale,
    ]
}

const MIX_OUTCOMES: [(VehicleClass, Role); 6] = [
    (VehicleClass::PassengerCar, Role::Robot),
    (VehicleClass::PassengerCar, Role::Human),
    (VehicleClass::Pickup, Role::Human),
    (VehicleClass::Van, Role::Human),
    (VehicleClass::SemiTrailer, Role::Human),
    (VehicleClass::Truck, Role::Human),
];

/// Categorical sampler over (class, role) for a fixed robot-vehicle rate.
#[derive(Debug, Clone)]
pub struct VehicleSampler {
    dist: WeightedIndex<f64>,
}

impl VehicleSampler {
    pub fn new(rv_rate: f64) -> Self {
        let row = mix_row(rv_rate);
        VehicleSampler {
            dist: WeightedIndex::new(row).expect("mix row has positive mass"),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (VehicleClass, Role) {
        MIX_OUTCOMES[self.dist.sample(rng)]
    }
}

/// Draws one vehicle type and role for the given robot-vehicle rate.
pub fn sample_vehicle<R: Rng + ?Sized>(rv_rate: f64, rng: &mut R) -> (VehicleClass, Role) {
    VehicleSampler::new(rv_rate).sample(rng)
}
