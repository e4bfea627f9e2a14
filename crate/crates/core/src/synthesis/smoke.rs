//! Micro-maps for the smoke stage: per defect category, one map the
//! candidate rule must accept and one it must reject. They are kept apart
//! from the generated corpus on purpose.

use crate::map_model::{Lanelet, LaneletNetwork, Point3, Polyline3};
use crate::scenario_gen::DefectKind;

#[derive(Debug, Clone)]
pub struct SmokePair {
    pub category: DefectKind,
    pub clean: LaneletNetwork,
    pub defect: LaneletNetwork,
}

const HALF_WIDTH: f64 = 1.75;

fn line(a: (f64, f64, f64), b: (f64, f64, f64)) -> Polyline3 {
    Polyline3::new(vec![Point3::new(a.0, a.1, a.2), Point3::new(b.0, b.1, b.2)]).expect("distinct endpoints")
}

/// Lanelet along x from `x0` to `x1` at lateral offset `y`.
fn along_x(id: u64, x0: f64, x1: f64, y: f64, z0: f64, z1: f64, successors: Vec<u64>) -> Lanelet {
    let left = line((x0, y + HALF_WIDTH, z0), (x1, y + HALF_WIDTH, z1));
    let right = line((x0, y - HALF_WIDTH, z0), (x1, y - HALF_WIDTH, z1));
    Lanelet::new(id, left, right, successors, vec![]).expect("valid micro lanelet")
}

/// Flat lanelet along y from `y0` to `y1` at `x`.
fn along_y(id: u64, x: f64, y0: f64, y1: f64, z: f64) -> Lanelet {
    let left = line((x - HALF_WIDTH, y0, z), (x - HALF_WIDTH, y1, z));
    let right = line((x + HALF_WIDTH, y0, z), (x + HALF_WIDTH, y1, z));
    Lanelet::new(id, left, right, vec![], vec![]).expect("valid micro lanelet")
}

fn net(lanelets: Vec<Lanelet>) -> LaneletNetwork {
    LaneletNetwork::from_successors(lanelets).expect("consistent micro links")
}

/// Two linked 30 m lanelets with the given grades.
fn two_grades(g1: f64, g2: f64) -> LaneletNetwork {
    let z1 = 30.0 * g1;
    net(vec![
        along_x(1, 0.0, 30.0, 0.0, 0.0, z1, vec![2]),
        along_x(2, 30.0, 60.0, 0.0, z1, z1 + 30.0 * g2, vec![]),
    ])
}

/// Three linked flat lanelets, the last two raised by `step`.
fn stepped(step: f64) -> LaneletNetwork {
    net(vec![
        along_x(1, 0.0, 30.0, 0.0, 0.0, 0.0, vec![2]),
        along_x(2, 30.0, 60.0, 0.0, step, step, vec![3]),
        along_x(3, 60.0, 90.0, 0.0, step, step, vec![]),
    ])
}

/// A road, a deck crossing it at `gap`, and an at-grade crossing.
fn crossing(gap: f64) -> LaneletNetwork {
    net(vec![
        along_x(1, -30.0, 30.0, 0.0, 0.0, 0.0, vec![]),
        along_y(2, 0.0, -20.0, 20.0, gap),
        along_y(3, 15.0, -20.0, 20.0, 0.3),
    ])
}

pub fn smoke_pair(category: DefectKind) -> SmokePair {
    let (clean, defect) = match category {
        DefectKind::ExcessiveSlope => (two_grades(0.05, 0.08), two_grades(0.25, 0.30)),
        DefectKind::AbruptStep => (stepped(0.0), stepped(0.4)),
        DefectKind::LowClearance => (crossing(6.0), crossing(3.0)),
    };
    SmokePair {
        category,
        clean,
        defect,
    }
}

const KEYWORDS: [(DefectKind, &[&str]); 3] = [
    (DefectKind::LowClearance, &["clearance", "bridge", "overpass", "underpass", "headroom", "stacked"]),
    (DefectKind::AbruptStep, &["step", "discontinu", "jump", "continuity", "offset", "mismatch"]),
    (DefectKind::ExcessiveSlope, &["slope", "grade", "steep", "incline", "gradient"]),
];

/// Guesses the category of a free-text defect description. Returns `None`
/// when no keyword or more than one category matches.
pub fn infer_category(description: &str) -> Option<DefectKind> {
    let text = description.to_lowercase();
    let hits: Vec<DefectKind> = KEYWORDS
        .iter()
        .filter(|(_, words)| words.iter().any(|w| text.contains(w)))
        .map(|(d, _)| *d)
        .collect();
    match hits.as_slice() {
        [one] => Some(*one),
        _ => None,
    }
}
