//! Car-following and stop-line braking laws.

use super::vehicle::VehicleType;

/// Desired time headway, seconds.
pub const IDM_TIME_HEADWAY: f64 = 1.0;
/// Free-road acceleration exponent.
pub const IDM_DELTA: f64 = 4.0;

/// An acceleration command plus whether it hit a safety limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccelCommand {
    pub accel: f64,
    pub flagged: bool,
}

impl AccelCommand {
    fn ok(accel: f64) -> Self {
        AccelCommand { accel, flagged: false }
    }

    fn emergency(p: &VehicleType) -> Self {
        AccelCommand {
            accel: -p.emergency_decel(),
            flagged: true,
        }
    }

    /// The more restrictive of two commands; flags accumulate.
    pub fn min(self, other: AccelCommand) -> AccelCommand {
        AccelCommand {
            accel: self.accel.min(other.accel),
            flagged: self.flagged || other.flagged,
        }
    }
}

/// Intelligent Driver Model acceleration.
///
/// `gap` is the bumper-to-bumper distance to the leader (`f64::INFINITY` when
/// there is none) and `dv` the closing speed `v - v_leader`. The interaction
/// term uses `s* = s0 + max(0, v*T + v*dv / (2*sqrt(a*b)))`. The result is
/// clamped to `[-2b, a_max]`; a non-positive gap returns the emergency value.
pub fn idm_accel(v: f64, v_desired: f64, gap: f64, dv: f64, p: &VehicleType, time_headway: f64) -> AccelCommand {
    if gap <= 0.0 {
        return AccelCommand::emergency(p);
    }
    let a = p.max_accel;
    let b = p.max_decel;
    let free = 1.0 - (v / v_desired).powf(IDM_DELTA);
    let interaction = if gap.is_finite() {
        let dynamic = v * time_headway + v * dv / (2.0 * (a * b).sqrt());
        let s_star = p.min_gap + dynamic.max(0.0);
        (s_star / gap).powi(2)
    } else {
        0.0
    };
    let raw = a * (free - interaction);
    let floor = -p.emergency_decel();
    if raw < floor {
        AccelCommand {
            accel: floor,
            flagged: true,
        }
    } else {
        AccelCommand::ok(raw.min(a))
    }
}

/// Constant deceleration that stops a vehicle at speed `u` exactly at distance `d_int`.
pub fn rv_stop_accel(u: f64, d_int: f64, p: &VehicleType) -> AccelCommand {
    if u <= 0.0 {
        return AccelCommand::ok(0.0);
    }
    if d_int <= 0.0 {
        return AccelCommand::emergency(p);
    }
    let raw = -u * u / (2.0 * d_int);
    if raw < -p.emergency_decel() {
        AccelCommand::emergency(p)
    } else {
        AccelCommand::ok(raw)
    }
}

/// Equilibrium bumper gap behind a leader at constant speed `v`.
pub fn idm_equilibrium_gap(v: f64, v_desired: f64, p: &VehicleType, time_headway: f64) -> f64 {
    let s_star = p.min_gap + v * time_headway;
    s_star / (1.0 - (v / v_desired).powf(IDM_DELTA)).sqrt()
}
