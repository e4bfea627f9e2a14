//! Lanelet network with 3D geometry and the elevation measures the
//! builtin predicates are defined over.
//!
//! All lengths are meters. "xy" quantities ignore elevation; grades are
//! rise over horizontal run.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

/// Minimum horizontal distance between consecutive polyline vertices.
pub const MIN_SEGMENT_XY: f64 = 1e-6;

/// Default number of samples per centerline used by verification.
pub const DEFAULT_SAMPLES: usize = 64;

/// Default pairing radius for overlap detection.
pub const DEFAULT_OVERLAP_RADIUS: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("polyline needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("point {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("segment {index} has horizontal length below {MIN_SEGMENT_XY} m")]
    ZeroRun { index: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetworkError {
    #[error("lanelet id must be positive")]
    ZeroId,
    #[error("lanelet {id}: {bound} bound: {source}")]
    Bound {
        id: u64,
        bound: &'static str,
        source: GeometryError,
    },
    #[error("lanelet {id}: duplicate lanelet id")]
    DuplicateId { id: u64 },
    #[error("lanelet {id}: {list} list contains {other} more than once")]
    DuplicateLink {
        id: u64,
        list: &'static str,
        other: u64,
    },
    #[error("lanelet {id}: {list} list references itself")]
    SelfLink { id: u64, list: &'static str },
    #[error("lanelet {id}: {list} references missing lanelet {missing}")]
    DanglingReference {
        id: u64,
        list: &'static str,
        missing: u64,
    },
    #[error("lanelet {id}: link to {other} is not mirrored ({detail})")]
    AsymmetricLink { id: u64, other: u64, detail: String },
}

impl NetworkError {
    /// The lanelet the violation was detected on.
    pub fn lanelet_id(&self) -> Option<u64> {
        match self {
            NetworkError::ZeroId => None,
            NetworkError::Bound { id, .. }
            | NetworkError::DuplicateId { id }
            | NetworkError::DuplicateLink { id, .. }
            | NetworkError::SelfLink { id, .. }
            | NetworkError::DanglingReference { id, .. }
            | NetworkError::AsymmetricLink { id, .. } => Some(*id),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn xy_distance(&self, other: &Point3) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn midpoint(&self, other: &Point3) -> Point3 {
        Point3::new(
            0.5 * (self.x + other.x),
            0.5 * (self.y + other.y),
            0.5 * (self.z + other.z),
        )
    }

    fn lerp(&self, other: &Point3, t: f64) -> Point3 {
        Point3::new(
            self.x + (other.x - self.x) * t,
            self.y + (other.y - self.y) * t,
            self.z + (other.z - self.z) * t,
        )
    }
}

/// An ordered polyline with at least two vertices and no zero-length
/// horizontal segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline3 {
    points: Vec<Point3>,
}

impl Polyline3 {
    pub fn new(points: Vec<Point3>) -> Result<Self, GeometryError> {
        if points.len() < 2 {
            return Err(GeometryError::TooFewPoints(points.len()));
        }
        if let Some(index) = points.iter().position(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite { index });
        }
        if let Some(index) = points
            .windows(2)
            .position(|w| w[0].xy_distance(&w[1]) <= MIN_SEGMENT_XY)
        {
            return Err(GeometryError::ZeroRun { index });
        }
        Ok(Polyline3 { points })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn first(&self) -> Point3 {
        self.points[0]
    }

    pub fn last(&self) -> Point3 {
        self.points[self.points.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn xy_length(&self) -> f64 {
        self.points.windows(2).map(|w| w[0].xy_distance(&w[1])).sum()
    }

    /// Uniform resampling by horizontal arc length. Elevation is
    /// interpolated along the same parameter.
    ///
    /// Panics if `n < 2`.
    pub fn resample(&self, n: usize) -> Polyline3 {
        assert!(n >= 2, "resample needs n >= 2");
        let cumulative: Vec<f64> = std::iter::once(0.0)
            .chain(self.points.windows(2).scan(0.0, |acc, w| {
                *acc += w[0].xy_distance(&w[1]);
                Some(*acc)
            }))
            .collect();
        let total = cumulative[cumulative.len() - 1];
        let mut out = Vec::with_capacity(n);
        out.push(self.first());
        let mut seg = 0;
        for i in 1..n - 1 {
            let target = total * i as f64 / (n - 1) as f64;
            while seg + 2 < cumulative.len() && cumulative[seg + 1] < target {
                seg += 1;
            }
            let span = cumulative[seg + 1] - cumulative[seg];
            let t = ((target - cumulative[seg]) / span).clamp(0.0, 1.0);
            out.push(self.points[seg].lerp(&self.points[seg + 1], t));
        }
        out.push(self.last());
        // spacing is total/(n-1); stays above MIN_SEGMENT_XY for any n used here
        Polyline3 { points: out }
    }

    /// Largest per-segment |dz| / xy-run.
    pub fn max_abs_grade(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].z - w[0].z).abs() / w[0].xy_distance(&w[1]))
            .fold(0.0, f64::max)
    }
}

/// Free-function form of [`Polyline3::resample`].
pub fn resample(p: &Polyline3, n: usize) -> Polyline3 {
    p.resample(n)
}

/// Free-function form of [`Polyline3::max_abs_grade`].
pub fn max_abs_grade(p: &Polyline3) -> f64 {
    p.max_abs_grade()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lanelet {
    pub id: u64,
    pub left_bound: Polyline3,
    pub right_bound: Polyline3,
    pub successors: Vec<u64>,
    pub predecessors: Vec<u64>,
}

impl Lanelet {
    /// Checks the per-lanelet invariants (positive id, link lists free of
    /// duplicates and self references). Bounds are valid by construction.
    pub fn new(
        id: u64,
        left_bound: Polyline3,
        right_bound: Polyline3,
        successors: Vec<u64>,
        predecessors: Vec<u64>,
    ) -> Result<Self, NetworkError> {
        let lanelet = Lanelet {
            id,
            left_bound,
            right_bound,
            successors,
            predecessors,
        };
        lanelet.check()?;
        Ok(lanelet)
    }

    fn check(&self) -> Result<(), NetworkError> {
        let id = self.id;
        if id == 0 {
            return Err(NetworkError::ZeroId);
        }
        for (list, links) in [("successor", &self.successors), ("predecessor", &self.predecessors)] {
            let mut seen = BTreeSet::new();
            for &other in links {
                if other == id {
                    return Err(NetworkError::SelfLink { id, list });
                }
                if !seen.insert(other) {
                    return Err(NetworkError::DuplicateLink { id, list, other });
                }
            }
        }
        Ok(())
    }

    pub fn centerline(&self, n: usize) -> Polyline3 {
        centerline(self, n)
    }
}

/// Midpoints of both bounds after resampling each to `n` points.
pub fn centerline(l: &Lanelet, n: usize) -> Polyline3 {
    let left = l.left_bound.resample(n);
    let right = l.right_bound.resample(n);
    let points = left
        .points()
        .iter()
        .zip(right.points())
        .map(|(a, b)| a.midpoint(b))
        .collect();
    Polyline3 { points }
}

/// Elevation jump between the end of `a` and the start of `b`, measured on
/// the centerlines.
pub fn boundary_step(a: &Lanelet, b: &Lanelet, n: usize) -> f64 {
    centerline_step(&centerline(a, n), &centerline(b, n))
}

pub(crate) fn centerline_step(a: &Polyline3, b: &Polyline3) -> f64 {
    (a.last().z - b.first().z).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverlapResult {
    pub overlaps: bool,
    /// Smallest vertical gap among overlapping sample pairs, `+inf` when
    /// nothing overlaps.
    pub min_gap: f64,
}

impl OverlapResult {
    pub const NONE: OverlapResult = OverlapResult {
        overlaps: false,
        min_gap: f64::INFINITY,
    };
}

/// Sample-pair overlap between two lanelets' centerlines.
pub fn xy_overlap_clearance(a: &Lanelet, b: &Lanelet, radius: f64, n: usize) -> OverlapResult {
    centerline_overlap(&centerline(a, n), &centerline(b, n), radius)
}

pub(crate) fn centerline_overlap(a: &Polyline3, b: &Polyline3, radius: f64) -> OverlapResult {
    let mut min_gap = f64::INFINITY;
    for p in a.points() {
        for q in b.points() {
            if p.xy_distance(q) <= radius {
                min_gap = min_gap.min((p.z - q.z).abs());
            }
        }
    }
    OverlapResult {
        overlaps: min_gap.is_finite(),
        min_gap,
    }
}

/// A validated lanelet network; ids iterate in ascending order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LaneletNetwork {
    lanelets: BTreeMap<u64, Lanelet>,
}

impl LaneletNetwork {
    pub fn empty() -> Self {
        LaneletNetwork::default()
    }

    /// Builds a network and checks uniqueness, referential integrity and
    /// link symmetry.
    pub fn new(lanelets: Vec<Lanelet>) -> Result<Self, NetworkError> {
        let mut map = BTreeMap::new();
        for l in lanelets {
            l.check()?;
            let id = l.id;
            if map.insert(id, l).is_some() {
                return Err(NetworkError::DuplicateId { id });
            }
        }
        let net = LaneletNetwork { lanelets: map };
        net.check_links()?;
        Ok(net)
    }

    /// Builds a network from lanelets whose predecessor lists are derived
    /// from the successor lists. Any predecessors already present are
    /// replaced.
    pub fn from_successors(mut lanelets: Vec<Lanelet>) -> Result<Self, NetworkError> {
        let ids: BTreeSet<u64> = lanelets.iter().map(|l| l.id).collect();
        let mut preds: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
        for l in &lanelets {
            for &s in &l.successors {
                if !ids.contains(&s) {
                    return Err(NetworkError::DanglingReference {
                        id: l.id,
                        list: "successor",
                        missing: s,
                    });
                }
                preds.entry(s).or_default().push(l.id);
            }
        }
        for l in &mut lanelets {
            l.predecessors = preds.remove(&l.id).unwrap_or_default();
        }
        LaneletNetwork::new(lanelets)
    }

    fn check_links(&self) -> Result<(), NetworkError> {
        for l in self.lanelets.values() {
            for (list, links) in [("successor", &l.successors), ("predecessor", &l.predecessors)] {
                for &other in links {
                    if !self.lanelets.contains_key(&other) {
                        return Err(NetworkError::DanglingReference {
                            id: l.id,
                            list,
                            missing: other,
                        });
                    }
                }
            }
        }
        for l in self.lanelets.values() {
            for &s in &l.successors {
                if !self.lanelets[&s].predecessors.contains(&l.id) {
                    return Err(NetworkError::AsymmetricLink {
                        id: l.id,
                        other: s,
                        detail: format!("{s} does not list {} as predecessor", l.id),
                    });
                }
            }
            for &p in &l.predecessors {
                if !self.lanelets[&p].successors.contains(&l.id) {
                    return Err(NetworkError::AsymmetricLink {
                        id: l.id,
                        other: p,
                        detail: format!("{p} does not list {} as successor", l.id),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, id: u64) -> Option<&Lanelet> {
        self.lanelets.get(&id)
    }

    pub fn len(&self) -> usize {
        self.lanelets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lanelets.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.lanelets.keys().copied()
    }

    pub fn lanelets(&self) -> impl Iterator<Item = &Lanelet> {
        self.lanelets.values()
    }

    pub fn into_lanelets(self) -> Vec<Lanelet> {
        self.lanelets.into_values().collect()
    }
}
