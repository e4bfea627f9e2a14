//! Seeded synthetic networks with injectable elevation defects.
//!
//! Every template is built from straight lanelets laid end to end, so grades
//! and steps are exact functions of the sampled parameters. Defect magnitudes
//! are drawn well beyond the default thresholds, which makes detection a
//! property of the construction rather than of sampling resolution.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map_io::write_map;
use crate::map_model::{Lanelet, LaneletNetwork, Point3, Polyline3};

pub const LANE_WIDTH: f64 = 3.5;
/// Injected slope magnitude range.
pub const SLOPE_RANGE: (f64, f64) = (0.20, 0.35);
/// Injected boundary step range, meters.
pub const STEP_RANGE: (f64, f64) = (0.20, 1.00);
/// Injected bridge gap range, meters.
pub const LOW_GAP_RANGE: (f64, f64) = (2.0, 3.5);
/// Gap of a clean bridge, meters.
pub const CLEAN_GAP_RANGE: (f64, f64) = (5.5, 7.0);
/// Bound on the grade of any clean chain segment.
pub const CLEAN_CHAIN_GRADE: f64 = 0.06;
/// Grade range of a clean ramp.
pub const CLEAN_RAMP_GRADE: (f64, f64) = (0.05, 0.10);
/// Largest accepted chain length.
pub const MAX_CHAIN_SEGMENTS: usize = 64;

const SEGMENT_LENGTH: (f64, f64) = (25.0, 40.0);
const RAMP_LENGTH: (f64, f64) = (40.0, 60.0);
const TURN: f64 = 0.3;
// cumulative heading stays within this of the start so chains never fold back
const HEADING_SPAN: f64 = 0.8;
const BRIDGE_RAMP: f64 = 80.0;
const BRIDGE_DECK: f64 = 40.0;
const ROAD_SEGMENT: f64 = 40.0;
const ROAD_SEGMENTS: usize = 4;
const POINTS_PER_BOUND: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DefectKind {
    ExcessiveSlope,
    AbruptStep,
    LowClearance,
}

impl DefectKind {
    pub const ALL: [DefectKind; 3] = [DefectKind::ExcessiveSlope, DefectKind::AbruptStep, DefectKind::LowClearance];

    pub fn name(self) -> &'static str {
        match self {
            DefectKind::ExcessiveSlope => "ExcessiveSlope",
            DefectKind::AbruptStep => "AbruptStep",
            DefectKind::LowClearance => "LowClearance",
        }
    }

    pub fn applies_to(self, t: Template) -> bool {
        match self {
            DefectKind::ExcessiveSlope => matches!(t, Template::Chain { .. } | Template::Ramp),
            DefectKind::AbruptStep => match t {
                Template::Chain { segments } => segments >= 2,
                Template::Ramp => true,
                Template::BridgeOverRoad => false,
            },
            DefectKind::LowClearance => t == Template::BridgeOverRoad,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Template {
    Chain { segments: usize },
    Ramp,
    BridgeOverRoad,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub template: Template,
    pub defects: Vec<DefectKind>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("chain needs 1..={MAX_CHAIN_SEGMENTS} segments, got {0}")]
    ChainLength(usize),
    #[error("at most two defects per scenario, got {0}")]
    TooManyDefects(usize),
    #[error("defect {0} listed twice")]
    Repeated(&'static str),
    #[error("defect {defect} does not apply to template {template:?}")]
    Inapplicable { defect: &'static str, template: Template },
}

impl ScenarioSpec {
    pub fn new(seed: u64, template: Template, defects: Vec<DefectKind>) -> Result<Self, SpecError> {
        let s = ScenarioSpec {
            seed,
            template,
            defects,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if let Template::Chain { segments } = self.template {
            if segments == 0 || segments > MAX_CHAIN_SEGMENTS {
                return Err(SpecError::ChainLength(segments));
            }
        }
        if self.defects.len() > 2 {
            return Err(SpecError::TooManyDefects(self.defects.len()));
        }
        if self.defects.len() == 2 && self.defects[0] == self.defects[1] {
            return Err(SpecError::Repeated(self.defects[0].name()));
        }
        for d in &self.defects {
            if !d.applies_to(self.template) {
                return Err(SpecError::Inapplicable {
                    defect: d.name(),
                    template: self.template,
                });
            }
        }
        Ok(())
    }

    fn has(&self, d: DefectKind) -> bool {
        self.defects.contains(&d)
    }
}

/// Injected magnitudes; a field is set iff the matching defect is present.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Magnitudes {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub grade: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub clearance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub id: String,
    pub seed: u64,
    pub template: Template,
    pub labels: Vec<DefectKind>,
    pub magnitudes: Magnitudes,
}

impl GroundTruth {
    pub fn is_clean(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn has(&self, d: DefectKind) -> bool {
        self.labels.contains(&d)
    }
}

/// A straight piece of road: centerline from `start` along `heading`.
#[derive(Debug, Clone, Copy)]
struct Segment {
    start: (f64, f64, f64),
    heading: f64,
    length: f64,
    grade: f64,
}

impl Segment {
    fn end(&self) -> (f64, f64, f64) {
        let (x, y, z) = self.start;
        (
            x + self.length * self.heading.cos(),
            y + self.length * self.heading.sin(),
            z + self.length * self.grade,
        )
    }

    fn bound(&self, offset: f64) -> Vec<(f64, f64, f64)> {
        let (x0, y0, z0) = self.start;
        let (dx, dy) = (self.heading.cos(), self.heading.sin());
        let (nx, ny) = (-dy * offset, dx * offset);
        (0..POINTS_PER_BOUND)
            .map(|i| {
                let s = self.length * i as f64 / (POINTS_PER_BOUND - 1) as f64;
                (x0 + dx * s + nx, y0 + dy * s + ny, z0 + self.grade * s)
            })
            .collect()
    }
}

/// Rigid placement applied to a whole scenario.
struct Placement {
    cos: f64,
    sin: f64,
    tx: f64,
    ty: f64,
    tz: f64,
}

impl Placement {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let theta = rng.gen_range(0.0..2.0 * PI);
        Placement {
            cos: theta.cos(),
            sin: theta.sin(),
            tx: rng.gen_range(-500.0..500.0),
            ty: rng.gen_range(-500.0..500.0),
            tz: rng.gen_range(0.0..30.0),
        }
    }

    fn apply(&self, (x, y, z): (f64, f64, f64)) -> Point3 {
        Point3::new(
            self.cos * x - self.sin * y + self.tx,
            self.sin * x + self.cos * y + self.ty,
            z + self.tz,
        )
    }
}

/// Lays segments end to end, each starting where the previous one ended.
fn lay(start: (f64, f64, f64), pieces: &[(f64, f64, f64)]) -> Vec<Segment> {
    let mut out = Vec::with_capacity(pieces.len());
    let mut at = start;
    for &(heading, length, grade) in pieces {
        let s = Segment {
            start: at,
            heading,
            length,
            grade,
        };
        at = s.end();
        out.push(s);
    }
    out
}

fn shift_from(segments: &mut [Segment], from: usize, dz: f64) {
    for s in &mut segments[from..] {
        s.start.2 += dz;
    }
}

fn signed(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    let v = rng.gen_range(lo..hi);
    if rng.gen_bool(0.5) {
        v
    } else {
        -v
    }
}

/// Ids run from 1 in road order; each road is a linked chain.
fn build_network(roads: &[Vec<Segment>], place: &Placement) -> LaneletNetwork {
    let mut lanelets = Vec::new();
    let mut id = 1u64;
    for road in roads {
        for (i, s) in road.iter().enumerate() {
            let bound = |offset: f64| {
                Polyline3::new(s.bound(offset).into_iter().map(|p| place.apply(p)).collect())
                    .expect("segments are longer than the minimum run")
            };
            let successors = if i + 1 < road.len() { vec![id + 1] } else { vec![] };
            lanelets.push(
                Lanelet::new(id, bound(LANE_WIDTH / 2.0), bound(-LANE_WIDTH / 2.0), successors, vec![])
                    .expect("generated lanelets are valid"),
            );
            id += 1;
        }
    }
    LaneletNetwork::from_successors(lanelets).expect("generated links are consistent")
}

fn chain(spec: &ScenarioSpec, k: usize, rng: &mut ChaCha8Rng, mag: &mut Magnitudes) -> Vec<Vec<Segment>> {
    let mut heading: f64 = 0.0;
    let mut pieces = Vec::with_capacity(k);
    for _ in 0..k {
        let length = rng.gen_range(SEGMENT_LENGTH.0..SEGMENT_LENGTH.1);
        let grade = rng.gen_range(-CLEAN_CHAIN_GRADE..CLEAN_CHAIN_GRADE);
        pieces.push((heading, length, grade));
        heading = (heading + rng.gen_range(-TURN..TURN)).clamp(-HEADING_SPAN, HEADING_SPAN);
    }
    if spec.has(DefectKind::ExcessiveSlope) {
        let i = rng.gen_range(0..k);
        let g = signed(rng, SLOPE_RANGE);
        pieces[i].2 = g;
        mag.grade = Some(g.abs());
    }
    let mut segs = lay((0.0, 0.0, 0.0), &pieces);
    if spec.has(DefectKind::AbruptStep) {
        let j = rng.gen_range(1..k);
        let dz = signed(rng, STEP_RANGE);
        shift_from(&mut segs, j, dz);
        mag.step = Some(dz.abs());
    }
    vec![segs]
}

fn ramp(spec: &ScenarioSpec, rng: &mut ChaCha8Rng, mag: &mut Magnitudes) -> Vec<Vec<Segment>> {
    let approach = rng.gen_range(SEGMENT_LENGTH.0..SEGMENT_LENGTH.1);
    let incline = rng.gen_range(RAMP_LENGTH.0..RAMP_LENGTH.1);
    let exit = rng.gen_range(SEGMENT_LENGTH.0..SEGMENT_LENGTH.1);
    let grade = if spec.has(DefectKind::ExcessiveSlope) {
        let g = signed(rng, SLOPE_RANGE);
        mag.grade = Some(g.abs());
        g
    } else {
        signed(rng, CLEAN_RAMP_GRADE)
    };
    let mut segs = lay((0.0, 0.0, 0.0), &[(0.0, approach, 0.0), (0.0, incline, grade), (0.0, exit, 0.0)]);
    if spec.has(DefectKind::AbruptStep) {
        let j = rng.gen_range(1..3);
        let dz = signed(rng, STEP_RANGE);
        shift_from(&mut segs, j, dz);
        mag.step = Some(dz.abs());
    }
    vec![segs]
}

fn bridge(spec: &ScenarioSpec, rng: &mut ChaCha8Rng, mag: &mut Magnitudes) -> Vec<Vec<Segment>> {
    let half = ROAD_SEGMENT * ROAD_SEGMENTS as f64 / 2.0;
    let road = lay((-half, 0.0, 0.0), &[(0.0, ROAD_SEGMENT, 0.0); ROAD_SEGMENTS]);
    let gap = if spec.has(DefectKind::LowClearance) {
        let g = rng.gen_range(LOW_GAP_RANGE.0..LOW_GAP_RANGE.1);
        mag.clearance = Some(g);
        g
    } else {
        rng.gen_range(CLEAN_GAP_RANGE.0..CLEAN_GAP_RANGE.1)
    };
    let crossing = rng.gen_range(-30.0..30.0);
    let heading = FRAC_PI_2 + rng.gen_range(-TURN..TURN);
    let back = BRIDGE_RAMP + BRIDGE_DECK / 2.0;
    let start = (crossing - back * heading.cos(), -back * heading.sin(), 0.0);
    let slope = gap / BRIDGE_RAMP;
    let span = lay(
        start,
        &[(heading, BRIDGE_RAMP, slope), (heading, BRIDGE_DECK, 0.0), (heading, BRIDGE_RAMP, -slope)],
    );
    vec![road, span]
}

/// Builds the network described by `spec`; `id` names it in the ground truth.
pub fn generate(spec: &ScenarioSpec, id: &str) -> Result<(LaneletNetwork, GroundTruth), SpecError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut mag = Magnitudes::default();
    let roads = match spec.template {
        Template::Chain { segments } => chain(spec, segments, &mut rng, &mut mag),
        Template::Ramp => ramp(spec, &mut rng, &mut mag),
        Template::BridgeOverRoad => bridge(spec, &mut rng, &mut mag),
    };
    let place = Placement::random(&mut rng);
    let net = build_network(&roads, &place);
    let mut labels = spec.defects.clone();
    labels.sort();
    Ok((
        net,
        GroundTruth {
            id: id.to_string(),
            seed: spec.seed,
            template: spec.template,
            labels,
            magnitudes: mag,
        },
    ))
}

/// Every applicable (template, defect subset) combination with a nonempty
/// subset. Chains in the list stand for any chain length.
pub fn defect_combinations() -> Vec<(TemplateKind, Vec<DefectKind>)> {
    use DefectKind::*;
    let mut out = Vec::new();
    for t in [TemplateKind::Chain, TemplateKind::Ramp] {
        out.push((t, vec![ExcessiveSlope]));
        out.push((t, vec![AbruptStep]));
        out.push((t, vec![ExcessiveSlope, AbruptStep]));
    }
    out.push((TemplateKind::BridgeOverRoad, vec![LowClearance]));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateKind {
    Chain,
    Ramp,
    BridgeOverRoad,
}

impl TemplateKind {
    fn instantiate(self, rng: &mut ChaCha8Rng) -> Template {
        match self {
            TemplateKind::Chain => Template::Chain {
                segments: rng.gen_range(3..=6),
            },
            TemplateKind::Ramp => Template::Ramp,
            TemplateKind::BridgeOverRoad => Template::BridgeOverRoad,
        }
    }
}

/// Minimum number of defective maps carrying each category.
pub fn category_floor(n_defective: usize) -> usize {
    5.min(n_defective / 3)
}

/// The specs of a corpus, in map order. Clean maps pick a template
/// uniformly. Defective maps first fill the per-category floor, drawing
/// uniformly among the combinations that carry the category, and the rest
/// draw uniformly over all combinations.
pub fn plan_corpus(seed: u64, n_clean: usize, n_defective: usize) -> Vec<ScenarioSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let combos = defect_combinations();
    let mut picks: Vec<(TemplateKind, Vec<DefectKind>)> = Vec::with_capacity(n_clean + n_defective);
    for _ in 0..n_clean {
        let kind = *[TemplateKind::Chain, TemplateKind::Ramp, TemplateKind::BridgeOverRoad]
            .choose(&mut rng)
            .expect("nonempty");
        picks.push((kind, vec![]));
    }
    let floor = category_floor(n_defective);
    let mut defective = 0;
    for cat in DefectKind::ALL {
        let carrying: Vec<_> = combos.iter().filter(|(_, d)| d.contains(&cat)).collect();
        for _ in 0..floor {
            picks.push((*carrying.choose(&mut rng).expect("every category is applicable")).clone());
            defective += 1;
        }
    }
    while defective < n_defective {
        picks.push(combos.choose(&mut rng).expect("nonempty").clone());
        defective += 1;
    }
    picks.shuffle(&mut rng);
    picks
        .into_iter()
        .map(|(kind, defects)| {
            let template = kind.instantiate(&mut rng);
            ScenarioSpec {
                seed: rng.gen(),
                template,
                defects,
            }
        })
        .collect()
}

pub const MANIFEST_FORMAT: &str = "mapverify.corpus/1";
pub const MANIFEST_FILE: &str = "manifest";
pub const MAPS_DIR: &str = "maps";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub seed: u64,
    pub n_clean: usize,
    pub n_defective: usize,
    pub maps: Vec<GroundTruth>,
}

impl Manifest {
    pub fn map_path(dir: &Path, id: &str) -> PathBuf {
        dir.join(MAPS_DIR).join(format!("{id}.xml"))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn category_count(&self, d: DefectKind) -> usize {
        self.maps.iter().filter(|m| m.has(d)).count()
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{0}: output directory exists and is not empty")]
    Exists(PathBuf),
    #[error("{path}: bad manifest: {message}")]
    Manifest { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Generates a corpus in memory: the manifest plus `(id, map xml)` pairs.
pub fn generate_corpus(seed: u64, n_clean: usize, n_defective: usize) -> (Manifest, Vec<(String, String)>) {
    let specs = plan_corpus(seed, n_clean, n_defective);
    let mut truths = Vec::with_capacity(specs.len());
    let mut files = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let id = format!("map_{i:03}");
        let (net, truth) = generate(spec, &id).expect("planned specs are valid");
        files.push((id, write_map(&net)));
        truths.push(truth);
    }
    (
        Manifest {
            format: MANIFEST_FORMAT.to_string(),
            seed,
            n_clean,
            n_defective,
            maps: truths,
        },
        files,
    )
}

/// Writes a corpus to `dir`. Everything is staged in a sibling directory
/// and renamed into place, so `dir` is either absent or complete.
pub fn build_corpus(seed: u64, n_clean: usize, n_defective: usize, dir: &Path) -> Result<Manifest, CorpusError> {
    if dir.exists() {
        let empty = fs::read_dir(dir).map_err(io_err(dir))?.next().is_none();
        if !empty {
            return Err(CorpusError::Exists(dir.to_path_buf()));
        }
        fs::remove_dir(dir).map_err(io_err(dir))?;
    }
    let parent = match dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(io_err(&parent))?;
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "corpus".into());
    let staging = parent.join(format!(".{name}.staging-{}", std::process::id()));
    let result = (|| {
        let (manifest, files) = generate_corpus(seed, n_clean, n_defective);
        let maps = staging.join(MAPS_DIR);
        fs::create_dir_all(&maps).map_err(io_err(&maps))?;
        for (id, xml) in &files {
            let p = Manifest::map_path(&staging, id);
            fs::write(&p, xml).map_err(io_err(&p))?;
        }
        let mp = staging.join(MANIFEST_FILE);
        fs::write(&mp, manifest.to_json()).map_err(io_err(&mp))?;
        fs::rename(&staging, dir).map_err(io_err(dir))?;
        Ok(manifest)
    })();
    if result.is_err() {
        let _ = fs::remove_dir_all(&staging);
    }
    result
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, CorpusError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| CorpusError::Manifest {
        path: path.clone(),
        message: e.to_string(),
    })?;
    if m.format != MANIFEST_FORMAT {
        return Err(CorpusError::Manifest {
            path,
            message: format!("unsupported format `{}`", m.format),
        });
    }
    Ok(m)
}
