//! Synthetic four-way intersection with right-hand traffic.
//!
//! Each approach is the "from south" template rotated into place. Movement
//! center paths are straight segments (through) or quarter circles (turns);
//! two movements conflict when their center paths cross or touch, except
//! movements that share an entry lane, which diverge from a common point.

use std::f64::consts::{FRAC_PI_2, PI};

use super::{
    Approach, ConflictMatrix, DemandSpec, Movement, MovementKind, Network, DEFAULT_CONTROL_ZONE, DEFAULT_SPEED_LIMIT,
};

pub const LANE_WIDTH: f64 = 3.5;
/// Distance between the stop line and the first crossing lane edge.
pub const STOP_LINE_SETBACK: f64 = 4.0;
pub const FOURWAY_APPROACH_LENGTH: f64 = 200.0;

const NAMES: [&str; 4] = ["N", "E", "S", "W"];
const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }

    fn scale(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }

    fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    fn rotate(self, angle: f64) -> Point {
        let (s, c) = angle.sin_cos();
        Point::new(self.x * c - self.y * s, self.x * s + self.y * c)
    }
}

/// Center line of a movement through the intersection box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CenterPath {
    Line {
        from: Point,
        to: Point,
    },
    Arc {
        center: Point,
        radius: f64,
        start: f64,
        sweep: f64,
    },
}

impl CenterPath {
    pub fn length(&self) -> f64 {
        match *self {
            CenterPath::Line { from, to } => to.sub(from).norm(),
            CenterPath::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    /// Point at fraction `t` in [0, 1] along the path.
    pub fn point_at(&self, t: f64) -> Point {
        match *self {
            CenterPath::Line { from, to } => from.add(to.sub(from).scale(t)),
            CenterPath::Arc {
                center,
                radius,
                start,
                sweep,
            } => {
                let a = start + sweep * t;
                Point::new(center.x + radius * a.cos(), center.y + radius * a.sin())
            }
        }
    }

    fn rotate(self, angle: f64) -> CenterPath {
        match self {
            CenterPath::Line { from, to } => CenterPath::Line {
                from: from.rotate(angle),
                to: to.rotate(angle),
            },
            CenterPath::Arc {
                center,
                radius,
                start,
                sweep,
            } => CenterPath::Arc {
                center: center.rotate(angle),
                radius,
                start: start + angle,
                sweep,
            },
        }
    }

    pub fn intersects(&self, other: &CenterPath) -> bool {
        use CenterPath::*;
        match (*self, *other) {
            (Line { from: p0, to: p1 }, Line { from: q0, to: q1 }) => segments_meet(p0, p1, q0, q1),
            (Line { from, to }, arc @ Arc { .. }) | (arc @ Arc { .. }, Line { from, to }) => {
                segment_meets_arc(from, to, &arc)
            }
            (a @ Arc { .. }, b @ Arc { .. }) => arcs_meet(&a, &b),
        }
    }
}

fn segments_meet(p0: Point, p1: Point, q0: Point, q1: Point) -> bool {
    let r = p1.sub(p0);
    let s = q1.sub(q0);
    let qp = q0.sub(p0);
    let denom = r.cross(s);
    if denom.abs() < EPS {
        if qp.cross(r).abs() > EPS {
            return false;
        }
        // Collinear: compare projections onto r.
        let rr = r.dot(r);
        let t0 = qp.dot(r) / rr;
        let t1 = q1.sub(p0).dot(r) / rr;
        let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
        return hi >= -EPS && lo <= 1.0 + EPS;
    }
    let t = qp.cross(s) / denom;
    let u = qp.cross(r) / denom;
    (-EPS..=1.0 + EPS).contains(&t) && (-EPS..=1.0 + EPS).contains(&u)
}

fn angle_on_arc(path: &CenterPath, p: Point) -> bool {
    let CenterPath::Arc {
        center, start, sweep, ..
    } = *path
    else {
        unreachable!()
    };
    let phi = (p.y - center.y).atan2(p.x - center.x);
    let mut delta = phi - start;
    while delta > PI {
        delta -= 2.0 * PI;
    }
    while delta <= -PI {
        delta += 2.0 * PI;
    }
    if sweep >= 0.0 {
        delta >= -EPS && delta <= sweep + EPS
    } else {
        delta <= EPS && delta >= sweep - EPS
    }
}

fn segment_meets_arc(p0: Point, p1: Point, arc: &CenterPath) -> bool {
    let CenterPath::Arc { center, radius, .. } = *arc else {
        unreachable!()
    };
    let r = p1.sub(p0);
    let f = p0.sub(center);
    let a = r.dot(r);
    let b = 2.0 * r.dot(f);
    let c = f.dot(f) - radius * radius;
    let disc = b * b - 4.0 * a * c;
    if disc < -EPS {
        return false;
    }
    let sq = disc.max(0.0).sqrt();
    [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)]
        .into_iter()
        .filter(|t| (-EPS..=1.0 + EPS).contains(t))
        .any(|t| angle_on_arc(arc, p0.add(r.scale(t))))
}

fn arcs_meet(a: &CenterPath, b: &CenterPath) -> bool {
    let (
        CenterPath::Arc {
            center: c1, radius: r1, ..
        },
        CenterPath::Arc {
            center: c2, radius: r2, ..
        },
    ) = (*a, *b)
    else {
        unreachable!()
    };
    let d_vec = c2.sub(c1);
    let d = d_vec.norm();
    if d < EPS {
        if (r1 - r2).abs() > EPS {
            return false;
        }
        // Same circle: overlap if an endpoint of one lies on the other.
        return [a.point_at(0.0), a.point_at(1.0)]
            .into_iter()
            .any(|p| angle_on_arc(b, p))
            || [b.point_at(0.0), b.point_at(1.0)]
                .into_iter()
                .any(|p| angle_on_arc(a, p));
    }
    if d > r1 + r2 + EPS || d < (r1 - r2).abs() - EPS {
        return false;
    }
    let along = (r1 * r1 - r2 * r2 + d * d) / (2.0 * d);
    let h = (r1 * r1 - along * along).max(0.0).sqrt();
    let unit = d_vec.scale(1.0 / d);
    let base = c1.add(unit.scale(along));
    let perp = Point::new(-unit.y, unit.x);
    [base.add(perp.scale(h)), base.sub(perp.scale(h))]
        .into_iter()
        .any(|p| angle_on_arc(a, p) && angle_on_arc(b, p))
}

/// Center paths and movement descriptors of the built-in four-way, in movement id order.
pub fn fourway_center_paths(lanes: usize) -> Vec<(Movement, CenterPath)> {
    assert!(lanes >= 1, "lanes_per_approach must be at least 1");
    let w = LANE_WIDTH;
    let n = lanes as f64;
    let half = n * w + STOP_LINE_SETBACK;
    let lane_x = |i: usize| (n - i as f64 - 0.5) * w;

    // Template: entering from the south, heading north.
    let right_radius = 0.5 * w + STOP_LINE_SETBACK;
    let left_radius = half + 0.5 * w;
    let mut template: Vec<(usize, MovementKind, CenterPath)> = Vec::new();
    template.push((
        0,
        MovementKind::Right,
        CenterPath::Arc {
            center: Point::new(half, -half),
            radius: right_radius,
            start: PI,
            sweep: -FRAC_PI_2,
        },
    ));
    let through_lanes: Vec<usize> = match lanes {
        1 | 2 => vec![0],
        _ => (1..lanes - 1).collect(),
    };
    for lane in through_lanes {
        let x = lane_x(lane);
        template.push((
            lane,
            MovementKind::Through,
            CenterPath::Line {
                from: Point::new(x, -half),
                to: Point::new(x, half),
            },
        ));
    }
    template.push((
        lanes - 1,
        MovementKind::Left,
        CenterPath::Arc {
            center: Point::new(-half, -half),
            radius: left_radius,
            start: 0.0,
            sweep: FRAC_PI_2,
        },
    ));

    let mut out = Vec::new();
    for a in 0..4usize {
        // N=0 rotates by 180 degrees, E=1 by 90, S=2 by 0, W=3 by -90.
        let rotation = (2.0 - a as f64) * FRAC_PI_2;
        for &(lane, kind, path) in &template {
            let exit = match kind {
                MovementKind::Right => (a + 3) % 4,
                MovementKind::Through => (a + 2) % 4,
                _ => (a + 1) % 4,
            };
            let group = if kind == MovementKind::Left { 2 * a + 1 } else { 2 * a };
            let path = path.rotate(rotation);
            out.push((
                Movement {
                    id: out.len(),
                    entry_approach: a,
                    entry_lane: lane,
                    exit_approach: exit,
                    direction_group: group,
                    internal_length: path.length(),
                    kind,
                },
                path,
            ));
        }
    }
    out
}

/// Standard four-way with through/left/right movements and geometrically derived conflicts.
pub fn builtin_fourway(lanes_per_approach: usize) -> Network {
    let paths = fourway_center_paths(lanes_per_approach);
    let mut conflicts = ConflictMatrix::new(paths.len());
    for (i, (mi, pi)) in paths.iter().enumerate() {
        for (mj, pj) in paths.iter().skip(i + 1) {
            let same_lane = mi.entry_approach == mj.entry_approach && mi.entry_lane == mj.entry_lane;
            if !same_lane && pi.intersects(pj) {
                conflicts.set_pair(mi.id, mj.id, true);
            }
        }
    }
    let approaches = NAMES
        .iter()
        .map(|name| Approach {
            name: name.to_string(),
            length: FOURWAY_APPROACH_LENGTH,
            lane_count: lanes_per_approach,
            speed_limit: DEFAULT_SPEED_LIMIT,
        })
        .collect();
    Network {
        approaches,
        movements: paths.into_iter().map(|(m, _)| m).collect(),
        conflicts,
        control_zone: DEFAULT_CONTROL_ZONE,
        direction_groups: 8,
    }
}

/// Uniform demand over the four approaches with the given turning split;
/// the right-turn share is whatever remains.
pub fn fourway_demand(net: &Network, total_inflow: f64, through: f64, left: f64, rv_rate: f64) -> DemandSpec {
    let right = 1.0 - through - left;
    let n_app = net.approaches.len() as f64;
    let mut turning = vec![0.0; net.movements.len()];
    for a in 0..net.approaches.len() {
        let n_through = net
            .movements_from(a)
            .filter(|m| m.kind == MovementKind::Through)
            .count()
            .max(1) as f64;
        for m in net.movements_from(a) {
            turning[m.id] = match m.kind {
                MovementKind::Through => through / n_through,
                MovementKind::Left => left,
                MovementKind::Right => right,
                MovementKind::Other => 0.0,
            };
        }
    }
    DemandSpec {
        inflow: vec![total_inflow / n_app; net.approaches.len()],
        turning_fractions: turning,
        rv_rate,
    }
}
