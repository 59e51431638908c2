//! Vehicle types, car-following, signal plans and the fixed-step simulator.

mod idm;
mod signal;
mod sim;
mod vehicle;

pub use idm::{idm_accel, idm_equilibrium_gap, rv_stop_accel, AccelCommand, IDM_DELTA, IDM_TIME_HEADWAY};
pub use signal::{fixed_time_signal, SignalPhase, SignalPlan, SignalState, DEFAULT_GREEN, DEFAULT_YELLOW};
pub use sim::{
    detect_conflicts, write_event_log, CompletedRecord, EntryControl, EventKind, EventRecord, HeadwaySample,
    SafetyEvent, SafetyKind, SimConfig, SimState, StepEvents, EVENT_LOG_HEADER,
};
pub use vehicle::{
    mix_row, sample_vehicle, Action, LinkPhase, MixRow, Role, VehicleClass, VehicleId, VehicleSampler, VehicleState,
    VehicleType, VEHICLE_TYPES,
};

/// A vehicle slower than this (m/s) accumulates waiting time.
pub const WAIT_SPEED_EPS: f64 = 0.1;
/// Default integration step, seconds.
pub const DEFAULT_DT: f64 = 0.5;
