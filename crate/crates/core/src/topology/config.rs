//! Line-oriented network config format.
//!
//! ```text
//! # comments start with '#'
//! [network]
//! control_zone = 30
//! direction_groups = 8
//!
//! [approaches]
//! # name  length_m  lanes  speed_limit_m_s
//! N 200 1 15
//!
//! [movements]
//! # id  entry  lane  exit  group  internal_length_m  kind
//! 0 N 0 W 0 9.03 right
//!
//! [conflicts]
//! # one row of 0/1 per movement, in id order
//! 0 1 ...
//!
//! [demand]            # optional
//! rv_rate = 0.1
//! inflow N 250        # vehicles/hour
//! turn 0 0.2          # movement id, fraction of its approach's inflow
//! ```
//!
//! Numbers are written with the shortest representation that round-trips, so
//! `serialize_config` followed by `parse_config` reproduces the network exactly.

use std::fmt::Write as _;
use std::str::FromStr;

use super::{Approach, ConflictMatrix, DemandSpec, Movement, MovementKind, Network, DEFAULT_CONTROL_ZONE};
use crate::error::TopologyError;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub network: Network,
    pub demand: Option<DemandSpec>,
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Network,
    Approaches,
    Movements,
    Conflicts,
    Demand,
}

fn perr(line: usize, msg: impl Into<String>) -> TopologyError {
    TopologyError::Parse { line, msg: msg.into() }
}

fn num<T: FromStr>(line: usize, field: &str, s: &str) -> Result<T, TopologyError> {
    s.parse::<T>()
        .map_err(|_| perr(line, format!("field `{field}`: cannot parse `{s}`")))
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, TopologyError> {
    let mut section = Section::None;
    let mut control_zone = DEFAULT_CONTROL_ZONE;
    let mut groups: Option<usize> = None;
    let mut approaches: Vec<Approach> = Vec::new();
    let mut movements: Vec<Movement> = Vec::new();
    let mut rows: Vec<Vec<bool>> = Vec::new();
    let mut saw_demand = false;
    let mut rv_rate = 0.0;
    let mut inflows: Vec<(usize, String, f64)> = Vec::new();
    let mut turns: Vec<(usize, usize, f64)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            section = match line {
                "[network]" => Section::Network,
                "[approaches]" => Section::Approaches,
                "[movements]" => Section::Movements,
                "[conflicts]" => Section::Conflicts,
                "[demand]" => {
                    saw_demand = true;
                    Section::Demand
                }
                other => return Err(perr(line_no, format!("unknown section {other}"))),
            };
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match section {
            Section::None => return Err(perr(line_no, "content before the first section")),
            Section::Network => {
                let (key, value) = key_value(line_no, line)?;
                match key {
                    "control_zone" => control_zone = num(line_no, key, value)?,
                    "direction_groups" => groups = Some(num(line_no, key, value)?),
                    other => return Err(perr(line_no, format!("unknown key `{other}`"))),
                }
            }
            Section::Approaches => {
                if fields.len() != 4 {
                    return Err(perr(line_no, "approach needs: name length lanes speed_limit"));
                }
                approaches.push(Approach {
                    name: fields[0].to_string(),
                    length: num(line_no, "length", fields[1])?,
                    lane_count: num(line_no, "lanes", fields[2])?,
                    speed_limit: num(line_no, "speed_limit", fields[3])?,
                });
            }
            Section::Movements => {
                if fields.len() != 6 && fields.len() != 7 {
                    return Err(perr(
                        line_no,
                        "movement needs: id entry lane exit group internal_length [kind]",
                    ));
                }
                let lookup = |name: &str| {
                    approaches
                        .iter()
                        .position(|a| a.name == name)
                        .ok_or_else(|| perr(line_no, format!("unknown approach `{name}`")))
                };
                let kind = match fields.get(6) {
                    Some(k) => {
                        MovementKind::parse(k).ok_or_else(|| perr(line_no, format!("unknown movement kind `{k}`")))?
                    }
                    None => MovementKind::Other,
                };
                movements.push(Movement {
                    id: num(line_no, "id", fields[0])?,
                    entry_approach: lookup(fields[1])?,
                    entry_lane: num(line_no, "lane", fields[2])?,
                    exit_approach: lookup(fields[3])?,
                    direction_group: num(line_no, "group", fields[4])?,
                    internal_length: num(line_no, "internal_length", fields[5])?,
                    kind,
                });
            }
            Section::Conflicts => {
                let row = fields
                    .iter()
                    .map(|f| match *f {
                        "0" => Ok(false),
                        "1" => Ok(true),
                        other => Err(perr(line_no, format!("conflict entry `{other}` is not 0/1"))),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                rows.push(row);
            }
            Section::Demand => {
                if line.contains('=') {
                    let (key, value) = key_value(line_no, line)?;
                    match key {
                        "rv_rate" => rv_rate = num(line_no, key, value)?,
                        other => return Err(perr(line_no, format!("unknown key `{other}`"))),
                    }
                } else {
                    match fields.as_slice() {
                        ["inflow", name, q] => inflows.push((line_no, name.to_string(), num(line_no, "inflow", q)?)),
                        ["turn", id, f] => {
                            turns.push((line_no, num(line_no, "movement", id)?, num(line_no, "fraction", f)?))
                        }
                        _ => {
                            return Err(perr(
                                line_no,
                                "expected `inflow <approach> <v/h>` or `turn <movement> <fraction>`",
                            ))
                        }
                    }
                }
            }
        }
    }

    let direction_groups = match groups {
        Some(k) => k,
        None => movements.iter().map(|m| m.direction_group + 1).max().unwrap_or(1),
    };
    let conflicts = if rows.is_empty() {
        ConflictMatrix::new(movements.len())
    } else {
        ConflictMatrix::from_rows(rows)?
    };
    let network = Network {
        approaches,
        movements,
        conflicts,
        control_zone,
        direction_groups,
    };
    network.validate()?;

    let demand = if saw_demand {
        let mut inflow = vec![0.0; network.approaches.len()];
        for (line_no, name, q) in inflows {
            let a = network
                .approach_index(&name)
                .ok_or_else(|| perr(line_no, format!("unknown approach `{name}`")))?;
            inflow[a] = q;
        }
        let mut turning_fractions = vec![0.0; network.movements.len()];
        for (line_no, id, f) in turns {
            if id >= turning_fractions.len() {
                return Err(perr(line_no, format!("unknown movement id {id}")));
            }
            turning_fractions[id] = f;
        }
        let d = DemandSpec {
            inflow,
            turning_fractions,
            rv_rate,
        };
        d.validate(&network)?;
        Some(d)
    } else {
        None
    };

    Ok(ScenarioConfig { network, demand })
}

fn key_value(line_no: usize, line: &str) -> Result<(&str, &str), TopologyError> {
    let (k, v) = line
        .split_once('=')
        .ok_or_else(|| perr(line_no, "expected `key = value`"))?;
    Ok((k.trim(), v.trim()))
}

pub fn serialize_config(net: &Network, demand: Option<&DemandSpec>) -> String {
    let mut out = String::new();
    out.push_str("# mixflow network config v1\n[network]\n");
    let _ = writeln!(out, "control_zone = {}", net.control_zone);
    let _ = writeln!(out, "direction_groups = {}", net.direction_groups);
    out.push_str("\n[approaches]\n# name length_m lanes speed_limit_m_s\n");
    for a in &net.approaches {
        let _ = writeln!(out, "{} {} {} {}", a.name, a.length, a.lane_count, a.speed_limit);
    }
    out.push_str("\n[movements]\n# id entry lane exit group internal_length_m kind\n");
    for m in &net.movements {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {}",
            m.id,
            net.approaches[m.entry_approach].name,
            m.entry_lane,
            net.approaches[m.exit_approach].name,
            m.direction_group,
            m.internal_length,
            m.kind.as_str()
        );
    }
    out.push_str("\n[conflicts]\n");
    for i in 0..net.movements.len() {
        let row: Vec<&str> = (0..net.movements.len())
            .map(|j| if net.conflicts.get(i, j) { "1" } else { "0" })
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    if let Some(d) = demand {
        out.push_str("\n[demand]\n");
        let _ = writeln!(out, "rv_rate = {}", d.rv_rate);
        for (a, q) in d.inflow.iter().enumerate() {
            let _ = writeln!(out, "inflow {} {}", net.approaches[a].name, q);
        }
        for (m, f) in d.turning_fractions.iter().enumerate() {
            let _ = writeln!(out, "turn {m} {f}");
        }
    }
    out
}
