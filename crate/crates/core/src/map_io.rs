//! Map serialization and the OpenDRIVE-subset converter.
//!
//! The map format is a small strict XML dialect:
//!
//! ```text
//! <laneletNetwork>
//!   <lanelet id="1">
//!     <leftBound><point><x>0</x><y>2</y><z>0</z></point> ...</leftBound>
//!     <rightBound> ... </rightBound>
//!     <successor ref="2"/>
//!     <predecessor ref="7"/>
//!   </lanelet>
//! </laneletNetwork>
//! ```
//!
//! Coordinates are printed with the shortest decimal that round-trips, so
//! `read_map(write_map(net)) == net` bit for bit.

use std::fmt::Write as _;

use roxmltree::{Document, Node};
use thiserror::Error;

use crate::map_model::{Lanelet, LaneletNetwork, NetworkError, Point3, Polyline3};

/// Default station spacing for OpenDRIVE conversion, meters.
pub const DEFAULT_STEP: f64 = 1.0;

/// Stations closer than this to the road end are merged into the end station.
const END_STATION_MERGE: f64 = 1e-5;

/// Slack when deciding whether a station lies on a plan-view geometry.
const COVERAGE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MapIoError {
    #[error("input is not valid UTF-8")]
    Utf8,
    #[error("malformed XML: {0}")]
    Xml(String),
    #[error("line {line}: {path}: {message}")]
    Format {
        path: String,
        line: u32,
        message: String,
    },
    #[error("invalid network: {0}")]
    Network(#[from] NetworkError),
    #[error("road {road}: {message}")]
    Road { road: u64, message: String },
    #[error("road {road}: station s={s} is not covered by any plan-view geometry")]
    Coverage { road: u64, s: f64 },
}

impl MapIoError {
    /// Lanelet (or road) id the error refers to, when there is one.
    pub fn lanelet_id(&self) -> Option<u64> {
        match self {
            MapIoError::Network(e) => e.lanelet_id(),
            MapIoError::Road { road, .. } | MapIoError::Coverage { road, .. } => Some(*road),
            _ => None,
        }
    }
}

/// Walks a roxmltree document while tracking an element path for errors.
struct Cursor<'a, 'input> {
    doc: &'a Document<'input>,
}

impl<'a, 'input> Cursor<'a, 'input> {
    fn line(&self, node: Node) -> u32 {
        self.doc.text_pos_at(node.range().start).row
    }

    fn err(&self, node: Node, path: &str, message: impl Into<String>) -> MapIoError {
        MapIoError::Format {
            path: path.to_string(),
            line: self.line(node),
            message: message.into(),
        }
    }

    /// Element children; rejects stray non-whitespace text.
    fn children(&self, node: Node<'a, 'input>, path: &str) -> Result<Vec<Node<'a, 'input>>, MapIoError> {
        let mut out = Vec::new();
        for child in node.children() {
            if child.is_element() {
                out.push(child);
            } else if child.is_text() && !child.text().unwrap_or("").trim().is_empty() {
                return Err(self.err(child, path, "unexpected text content"));
            }
        }
        Ok(out)
    }

    fn only_attrs(&self, node: Node, path: &str, allowed: &[&str]) -> Result<(), MapIoError> {
        match node.attributes().find(|a| !allowed.contains(&a.name())) {
            Some(a) => Err(self.err(node, path, format!("unknown attribute `{}`", a.name()))),
            None => Ok(()),
        }
    }

    fn attr<T: std::str::FromStr>(&self, node: Node, path: &str, name: &str) -> Result<T, MapIoError> {
        let raw = node
            .attribute(name)
            .ok_or_else(|| self.err(node, path, format!("missing attribute `{name}`")))?;
        raw.trim()
            .parse()
            .map_err(|_| self.err(node, path, format!("attribute `{name}` has invalid value `{raw}`")))
    }

    fn opt_attr<T: std::str::FromStr>(&self, node: Node, path: &str, name: &str) -> Result<Option<T>, MapIoError> {
        match node.attribute(name) {
            None => Ok(None),
            Some(_) => self.attr(node, path, name).map(Some),
        }
    }

    fn finite_attr(&self, node: Node, path: &str, name: &str) -> Result<f64, MapIoError> {
        let v: f64 = self.attr(node, path, name)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.err(node, path, format!("attribute `{name}` must be finite")))
        }
    }

    fn number_text(&self, node: Node, path: &str) -> Result<f64, MapIoError> {
        if let Some(c) = node.children().find(|c| c.is_element()) {
            return Err(self.err(c, path, "unexpected child element"));
        }
        let text = node.text().unwrap_or("").trim();
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.err(node, path, format!("expected a finite number, found `{text}`"))),
        }
    }
}

fn parse_document(text: &str) -> Result<Document<'_>, MapIoError> {
    Document::parse(text).map_err(|e| MapIoError::Xml(e.to_string()))
}

fn utf8(bytes: &[u8]) -> Result<&str, MapIoError> {
    std::str::from_utf8(bytes).map_err(|_| MapIoError::Utf8)
}

/// Parses a map document.
pub fn read_map(bytes: &[u8]) -> Result<LaneletNetwork, MapIoError> {
    read_map_str(utf8(bytes)?)
}

pub fn read_map_str(text: &str) -> Result<LaneletNetwork, MapIoError> {
    let doc = parse_document(text)?;
    let cur = Cursor { doc: &doc };
    let root = doc.root_element();
    let root_path = root.tag_name().name().to_string();
    if root.tag_name().name() != "laneletNetwork" {
        return Err(cur.err(root, &root_path, "expected root element `laneletNetwork`"));
    }
    cur.only_attrs(root, &root_path, &[])?;
    let mut lanelets = Vec::new();
    for (i, el) in cur.children(root, &root_path)?.into_iter().enumerate() {
        let path = format!("{root_path}/{}[{}]", el.tag_name().name(), i + 1);
        if el.tag_name().name() != "lanelet" {
            return Err(cur.err(el, &path, "unknown element"));
        }
        lanelets.push(read_lanelet(&cur, el, &path)?);
    }
    Ok(LaneletNetwork::new(lanelets)?)
}

fn read_lanelet(cur: &Cursor, el: Node, path: &str) -> Result<Lanelet, MapIoError> {
    cur.only_attrs(el, path, &["id"])?;
    let id: u64 = cur.attr(el, path, "id")?;
    let path = format!("{path}[id={id}]");
    let mut left = None;
    let mut right = None;
    let mut successors = Vec::new();
    let mut predecessors = Vec::new();
    for child in cur.children(el, &path)? {
        let name = child.tag_name().name();
        let child_path = format!("{path}/{name}");
        match name {
            "leftBound" | "rightBound" => {
                let slot = if name == "leftBound" { &mut left } else { &mut right };
                if slot.is_some() {
                    return Err(cur.err(child, &child_path, "duplicate bound"));
                }
                let side = if name == "leftBound" { "left" } else { "right" };
                let points = read_points(cur, child, &child_path)?;
                let line = Polyline3::new(points).map_err(|source| NetworkError::Bound {
                    id,
                    bound: side,
                    source,
                })?;
                *slot = Some(line);
            }
            "successor" | "predecessor" => {
                cur.only_attrs(child, &child_path, &["ref"])?;
                if let Some(c) = cur.children(child, &child_path)?.first() {
                    return Err(cur.err(*c, &child_path, "unexpected child element"));
                }
                let target: u64 = cur.attr(child, &child_path, "ref")?;
                if name == "successor" {
                    successors.push(target);
                } else {
                    predecessors.push(target);
                }
            }
            _ => return Err(cur.err(child, &child_path, "unknown element")),
        }
    }
    let left = left.ok_or_else(|| cur.err(el, &path, "missing `leftBound`"))?;
    let right = right.ok_or_else(|| cur.err(el, &path, "missing `rightBound`"))?;
    Ok(Lanelet::new(id, left, right, successors, predecessors)?)
}

fn read_points(cur: &Cursor, bound: Node, path: &str) -> Result<Vec<Point3>, MapIoError> {
    cur.only_attrs(bound, path, &[])?;
    let mut points = Vec::new();
    for (i, p) in cur.children(bound, path)?.into_iter().enumerate() {
        let ppath = format!("{path}/point[{}]", i + 1);
        if p.tag_name().name() != "point" {
            return Err(cur.err(p, &ppath, "unknown element"));
        }
        cur.only_attrs(p, &ppath, &[])?;
        let mut coords: [Option<f64>; 3] = [None; 3];
        for c in cur.children(p, &ppath)? {
            let name = c.tag_name().name();
            let cpath = format!("{ppath}/{name}");
            let slot = match name {
                "x" => 0,
                "y" => 1,
                "z" => 2,
                _ => return Err(cur.err(c, &cpath, "unknown element")),
            };
            if coords[slot].is_some() {
                return Err(cur.err(c, &cpath, "duplicate coordinate"));
            }
            cur.only_attrs(c, &cpath, &[])?;
            coords[slot] = Some(cur.number_text(c, &cpath)?);
        }
        match coords {
            [Some(x), Some(y), Some(z)] => points.push(Point3::new(x, y, z)),
            _ => return Err(cur.err(p, &ppath, "point needs x, y and z")),
        }
    }
    Ok(points)
}

/// Serializes a network. Lanelets are written in ascending id order and
/// link lists in stored order.
pub fn write_map(net: &LaneletNetwork) -> String {
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<laneletNetwork>\n");
    for l in net.lanelets() {
        let _ = writeln!(out, "  <lanelet id=\"{}\">", l.id);
        for (tag, bound) in [("leftBound", &l.left_bound), ("rightBound", &l.right_bound)] {
            let _ = writeln!(out, "    <{tag}>");
            for p in bound.points() {
                let _ = writeln!(
                    out,
                    "      <point><x>{}</x><y>{}</y><z>{}</z></point>",
                    p.x, p.y, p.z
                );
            }
            let _ = writeln!(out, "    </{tag}>");
        }
        for s in &l.successors {
            let _ = writeln!(out, "    <successor ref=\"{s}\"/>");
        }
        for p in &l.predecessors {
            let _ = writeln!(out, "    <predecessor ref=\"{p}\"/>");
        }
        out.push_str("  </lanelet>\n");
    }
    out.push_str("</laneletNetwork>\n");
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeometryKind {
    Line,
    Arc { curvature: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub s0: f64,
    pub x0: f64,
    pub y0: f64,
    pub hdg: f64,
    pub seg_length: f64,
    pub kind: GeometryKind,
}

impl Geometry {
    /// Position and heading at arc length `u` from the geometry start.
    fn pose_at(&self, u: f64) -> (f64, f64, f64) {
        match self.kind {
            GeometryKind::Line => (
                self.x0 + u * self.hdg.cos(),
                self.y0 + u * self.hdg.sin(),
                self.hdg,
            ),
            GeometryKind::Arc { curvature: k } => {
                let h = self.hdg + k * u;
                (
                    self.x0 + (h.sin() - self.hdg.sin()) / k,
                    self.y0 + (self.hdg.cos() - h.cos()) / k,
                    h,
                )
            }
        }
    }
}

/// Cubic elevation polynomial in `s - s0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElevationPoly {
    pub s0: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl ElevationPoly {
    pub fn eval(&self, s: f64) -> f64 {
        let u = s - self.s0;
        self.a + u * (self.b + u * (self.c + u * self.d))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpenDriveRoad {
    pub id: u64,
    pub length: f64,
    pub plan_geometries: Vec<Geometry>,
    pub elevations: Vec<ElevationPoly>,
    pub lane_width: f64,
    pub successor_road_id: Option<u64>,
}

impl OpenDriveRoad {
    pub fn validate(&self) -> Result<(), MapIoError> {
        let fail = |message: String| MapIoError::Road {
            road: self.id,
            message,
        };
        if self.id == 0 {
            return Err(fail("road id must be positive".into()));
        }
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(fail(format!("length must be positive, got {}", self.length)));
        }
        if !(self.lane_width > 0.0 && self.lane_width.is_finite()) {
            return Err(fail(format!("lane width must be positive, got {}", self.lane_width)));
        }
        if self.plan_geometries.is_empty() {
            return Err(fail("planView has no geometry".into()));
        }
        if self.elevations.is_empty() {
            return Err(fail("elevationProfile has no elevation record".into()));
        }
        check_offsets(self.plan_geometries.iter().map(|g| g.s0), "geometry").map_err(fail)?;
        check_offsets(self.elevations.iter().map(|e| e.s0), "elevation").map_err(fail)?;
        for g in &self.plan_geometries {
            if !(g.seg_length > 0.0 && g.seg_length.is_finite()) {
                return Err(fail(format!("geometry at s={} has non-positive length", g.s0)));
            }
            if let GeometryKind::Arc { curvature } = g.kind {
                if curvature == 0.0 || !curvature.is_finite() {
                    return Err(fail(format!("arc at s={} needs nonzero finite curvature", g.s0)));
                }
            }
        }
        Ok(())
    }

    fn pose_at(&self, s: f64) -> Result<(f64, f64, f64), MapIoError> {
        let g = self
            .plan_geometries
            .iter()
            .rev()
            .find(|g| g.s0 <= s + COVERAGE_TOLERANCE)
            .filter(|g| s <= g.s0 + g.seg_length + COVERAGE_TOLERANCE)
            .ok_or(MapIoError::Coverage { road: self.id, s })?;
        Ok(g.pose_at(s - g.s0))
    }

    pub fn elevation_at(&self, s: f64) -> f64 {
        self.elevations
            .iter()
            .rev()
            .find(|e| e.s0 <= s)
            .unwrap_or(&self.elevations[0])
            .eval(s)
    }

    /// Stations `0, ds, 2ds, ...` followed by exactly `length`.
    pub fn stations(&self, ds: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let mut k = 0u64;
        loop {
            let s = k as f64 * ds;
            if s >= self.length - END_STATION_MERGE {
                break;
            }
            out.push(s);
            k += 1;
        }
        out.push(self.length);
        out
    }
}

fn check_offsets(offsets: impl Iterator<Item = f64>, what: &str) -> Result<(), String> {
    let offsets: Vec<f64> = offsets.collect();
    if offsets.first() != Some(&0.0) {
        return Err(format!("first {what} must start at s=0"));
    }
    if offsets.windows(2).any(|w| w[1] <= w[0]) || offsets.iter().any(|s| !s.is_finite()) {
        return Err(format!("{what} s-offsets must be strictly increasing"));
    }
    Ok(())
}

/// Samples the reference line of `road` every `ds` meters.
pub fn sample_reference_line(road: &OpenDriveRoad, ds: f64) -> Result<Polyline3, MapIoError> {
    Ok(sample_with_heading(road, ds)?.0)
}

fn sample_with_heading(road: &OpenDriveRoad, ds: f64) -> Result<(Polyline3, Vec<f64>), MapIoError> {
    road.validate()?;
    if !(ds > 0.0 && ds.is_finite()) {
        return Err(MapIoError::Road {
            road: road.id,
            message: format!("step must be positive, got {ds}"),
        });
    }
    let mut points = Vec::new();
    let mut headings = Vec::new();
    for s in road.stations(ds) {
        let (x, y, h) = road.pose_at(s)?;
        points.push(Point3::new(x, y, road.elevation_at(s)));
        headings.push(h);
    }
    let line = Polyline3::new(points).map_err(|e| MapIoError::Road {
        road: road.id,
        message: format!("reference line: {e}"),
    })?;
    Ok((line, headings))
}

/// Converts one road into a lanelet whose bounds are the reference line
/// shifted by half the lane width to either side.
pub fn convert(road: &OpenDriveRoad, ds: f64) -> Result<Lanelet, MapIoError> {
    let (reference, headings) = sample_with_heading(road, ds)?;
    let half = 0.5 * road.lane_width;
    let offset = |sign: f64| -> Vec<Point3> {
        reference
            .points()
            .iter()
            .zip(&headings)
            .map(|(p, h)| Point3::new(p.x - sign * half * h.sin(), p.y + sign * half * h.cos(), p.z))
            .collect()
    };
    let bound = |side: &'static str, pts| {
        Polyline3::new(pts).map_err(|source| NetworkError::Bound {
            id: road.id,
            bound: side,
            source,
        })
    };
    let left = bound("left", offset(1.0))?;
    let right = bound("right", offset(-1.0))?;
    let successors = road.successor_road_id.into_iter().collect();
    Ok(Lanelet::new(road.id, left, right, successors, Vec::new())?)
}

/// Converts every road of a parsed OpenDRIVE document into one network.
pub fn convert_roads(roads: &[OpenDriveRoad], ds: f64) -> Result<LaneletNetwork, MapIoError> {
    let lanelets = roads
        .iter()
        .map(|r| convert(r, ds))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LaneletNetwork::from_successors(lanelets)?)
}

pub fn read_opendrive(bytes: &[u8]) -> Result<Vec<OpenDriveRoad>, MapIoError> {
    read_opendrive_str(utf8(bytes)?)
}

pub fn read_opendrive_str(text: &str) -> Result<Vec<OpenDriveRoad>, MapIoError> {
    let doc = parse_document(text)?;
    let cur = Cursor { doc: &doc };
    let root = doc.root_element();
    if root.tag_name().name() != "OpenDRIVE" {
        return Err(cur.err(root, root.tag_name().name(), "expected root element `OpenDRIVE`"));
    }
    let mut roads = Vec::new();
    for (i, el) in cur.children(root, "OpenDRIVE")?.into_iter().enumerate() {
        let path = format!("OpenDRIVE/{}[{}]", el.tag_name().name(), i + 1);
        match el.tag_name().name() {
            "header" => {}
            "road" => {
                let road = read_road(&cur, el, &path)?;
                if roads.iter().any(|r: &OpenDriveRoad| r.id == road.id) {
                    return Err(cur.err(el, &path, format!("duplicate road id {}", road.id)));
                }
                roads.push(road);
            }
            _ => return Err(cur.err(el, &path, "unknown element")),
        }
    }
    Ok(roads)
}

fn read_road(cur: &Cursor, el: Node, path: &str) -> Result<OpenDriveRoad, MapIoError> {
    let id: u64 = cur.attr(el, path, "id")?;
    let length = cur.finite_attr(el, path, "length")?;
    let path = format!("{path}[id={id}]");
    let mut plan_geometries = Vec::new();
    let mut elevations = Vec::new();
    let mut lane_width = None;
    let mut successor_road_id = None;
    for child in cur.children(el, &path)? {
        let name = child.tag_name().name();
        let cpath = format!("{path}/{name}");
        match name {
            "planView" => {
                for g in cur.children(child, &cpath)? {
                    let gpath = format!("{cpath}/{}", g.tag_name().name());
                    if g.tag_name().name() != "geometry" {
                        return Err(cur.err(g, &gpath, "unknown element"));
                    }
                    plan_geometries.push(read_geometry(cur, g, &gpath)?);
                }
            }
            "elevationProfile" => {
                for e in cur.children(child, &cpath)? {
                    let epath = format!("{cpath}/{}", e.tag_name().name());
                    if e.tag_name().name() != "elevation" {
                        return Err(cur.err(e, &epath, "unknown element"));
                    }
                    elevations.push(ElevationPoly {
                        s0: cur.finite_attr(e, &epath, "s")?,
                        a: cur.finite_attr(e, &epath, "a")?,
                        b: cur.finite_attr(e, &epath, "b")?,
                        c: cur.finite_attr(e, &epath, "c")?,
                        d: cur.finite_attr(e, &epath, "d")?,
                    });
                }
            }
            "link" => {
                for l in cur.children(child, &cpath)? {
                    let lpath = format!("{cpath}/{}", l.tag_name().name());
                    match l.tag_name().name() {
                        "successor" => successor_road_id = cur.opt_attr(l, &lpath, "elementId")?,
                        // predecessors are derived from successor links
                        "predecessor" => {}
                        _ => return Err(cur.err(l, &lpath, "unknown element")),
                    }
                }
            }
            "laneWidth" => lane_width = Some(cur.finite_attr(child, &cpath, "value")?),
            _ => return Err(cur.err(child, &cpath, "unknown element")),
        }
    }
    let lane_width = lane_width.ok_or_else(|| cur.err(el, &path, "missing `laneWidth`"))?;
    let road = OpenDriveRoad {
        id,
        length,
        plan_geometries,
        elevations,
        lane_width,
        successor_road_id,
    };
    road.validate()?;
    Ok(road)
}

fn read_geometry(cur: &Cursor, g: Node, path: &str) -> Result<Geometry, MapIoError> {
    let kinds = cur.children(g, path)?;
    let [kind_el] = kinds.as_slice() else {
        return Err(cur.err(g, path, "geometry needs exactly one of `line` or `arc`"));
    };
    let kpath = format!("{path}/{}", kind_el.tag_name().name());
    let kind = match kind_el.tag_name().name() {
        "line" => GeometryKind::Line,
        "arc" => GeometryKind::Arc {
            curvature: cur.finite_attr(*kind_el, &kpath, "curvature")?,
        },
        _ => return Err(cur.err(*kind_el, &kpath, "unsupported geometry kind")),
    };
    Ok(Geometry {
        s0: cur.finite_attr(g, path, "s")?,
        x0: cur.finite_attr(g, path, "x")?,
        y0: cur.finite_attr(g, path, "y")?,
        hdg: cur.finite_attr(g, path, "hdg")?,
        seg_length: cur.finite_attr(g, path, "length")?,
        kind,
    })
}
