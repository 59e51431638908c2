//! Fixed-time signal plans for the signalized baseline.

use serde::{Deserialize, Serialize};

use crate::topology::{MovementId, Network};

pub const DEFAULT_GREEN: f64 = 30.0;
pub const DEFAULT_YELLOW: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalPhase {
    pub green: Vec<MovementId>,
    pub green_duration: f64,
    pub yellow_duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalPlan {
    pub phases: Vec<SignalPhase>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalState {
    Green,
    Yellow,
    Red,
}

impl SignalPlan {
    pub fn cycle_length(&self) -> f64 {
        self.phases.iter().map(|p| p.green_duration + p.yellow_duration).sum()
    }

    pub fn validate(&self, net: &Network) -> Result<(), String> {
        if self.phases.is_empty() {
            return Err("signal plan has no phases".into());
        }
        let mut covered = vec![false; net.movements.len()];
        for (k, p) in self.phases.iter().enumerate() {
            if !(p.green_duration > 0.0 && p.yellow_duration > 0.0) {
                return Err(format!("phase {k}: durations must be positive"));
            }
            for (i, &a) in p.green.iter().enumerate() {
                if a >= net.movements.len() {
                    return Err(format!("phase {k}: unknown movement {a}"));
                }
                covered[a] = true;
                for &b in &p.green[i + 1..] {
                    if b < net.movements.len() && net.conflicting(a, b) {
                        return Err(format!("phase {k}: movements {a} and {b} conflict"));
                    }
                }
            }
        }
        if let Some(m) = covered.iter().position(|c| !c) {
            return Err(format!("movement {m} is never green"));
        }
        Ok(())
    }

    /// Phases grouping movements that share an entry lane, packed greedily into
    /// mutually non-conflicting sets.
    pub fn default_for(net: &Network) -> SignalPlan {
        let mut bundles: Vec<Vec<MovementId>> = Vec::new();
        for m in &net.movements {
            match bundles.iter_mut().find(|b| {
                let first = &net.movements[b[0]];
                first.entry_approach == m.entry_approach && first.entry_lane == m.entry_lane
            }) {
                Some(b) => b.push(m.id),
                None => bundles.push(vec![m.id]),
            }
        }
        let mut phases: Vec<Vec<MovementId>> = Vec::new();
        for bundle in bundles {
            let fits = |phase: &Vec<MovementId>| bundle.iter().all(|&a| phase.iter().all(|&b| !net.conflicting(a, b)));
            match phases.iter_mut().find(|p| fits(p)) {
                Some(p) => p.extend(bundle),
                None => phases.push(bundle),
            }
        }
        SignalPlan {
            phases: phases
                .into_iter()
                .map(|green| SignalPhase {
                    green,
                    green_duration: DEFAULT_GREEN,
                    yellow_duration: DEFAULT_YELLOW,
                })
                .collect(),
        }
    }
}

/// Per-movement signal state at time `t` for a cyclic plan.
pub fn fixed_time_signal(plan: &SignalPlan, t: f64, movement_count: usize) -> Vec<SignalState> {
    let mut states = vec![SignalState::Red; movement_count];
    let cycle = plan.cycle_length();
    let mut pos = t.rem_euclid(cycle);
    for p in &plan.phases {
        let span = p.green_duration + p.yellow_duration;
        if pos < span {
            let s = if pos < p.green_duration {
                SignalState::Green
            } else {
                SignalState::Yellow
            };
            for &m in &p.green {
                states[m] = s;
            }
            break;
        }
        pos -= span;
    }
    states
}
