//! Corpus scoring: per-category recall on defective maps and false
//! positives on clean ones, both at map granularity.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::engine::{evaluate, EvalConfig, LinkedRuleset, VerificationReport};
use crate::map_io::{read_map, MapIoError};
use crate::predicate_lang::EvalError;
use crate::scenario_gen::{read_manifest, CorpusError, DefectKind, Manifest};

/// Rule expected to catch each defect category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryMapping {
    rules: BTreeMap<DefectKind, String>,
}

impl Default for CategoryMapping {
    fn default() -> Self {
        CategoryMapping {
            rules: BTreeMap::from([
                (DefectKind::ExcessiveSlope, "slope_limit".to_string()),
                (DefectKind::AbruptStep, "elevation_continuity".to_string()),
                (DefectKind::LowClearance, "vertical_clearance".to_string()),
            ]),
        }
    }
}

impl CategoryMapping {
    pub fn rule(&self, d: DefectKind) -> &str {
        &self.rules[&d]
    }

    /// Every mapped rule must exist in `linked`.
    pub fn check(&self, linked: &LinkedRuleset) -> Result<(), HarnessError> {
        for (d, r) in &self.rules {
            if linked.rule(r).is_none() {
                return Err(HarnessError::MissingRule {
                    category: d.name(),
                    rule: r.clone(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}: {source}")]
    Map {
        path: PathBuf,
        #[source]
        source: MapIoError,
    },
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: evaluation failed: {source}")]
    Eval {
        path: PathBuf,
        #[source]
        source: EvalError,
    },
    #[error("category {category} maps to rule `{rule}`, which is not in the ruleset")]
    MissingRule { category: &'static str, rule: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryMetrics {
    pub category: DefectKind,
    pub rule: String,
    pub maps: usize,
    pub detected: usize,
    /// `None` when no map carries the category.
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub format: &'static str,
    pub corpus_seed: u64,
    pub categories: Vec<CategoryMetrics>,
    pub clean_maps: usize,
    pub false_positives: usize,
    pub false_positive_maps: Vec<String>,
    /// Wall time of the run. Kept out of the JSON document so reruns compare
    /// byte for byte.
    #[serde(skip)]
    pub runtime: Duration,
}

pub const METRICS_FORMAT: &str = "mapverify.metrics/1";

impl MetricsReport {
    pub fn category(&self, d: DefectKind) -> &CategoryMetrics {
        self.categories.iter().find(|c| c.category == d).expect("all categories present")
    }

    /// Full recall in every populated category and no false positives.
    pub fn meets_target(&self) -> bool {
        self.false_positives == 0 && self.categories.iter().all(|c| c.detected == c.maps)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<16} {:<22} {:>5} {:>9} {:>7}", "category", "rule", "maps", "detected", "recall");
        for c in &self.categories {
            let recall = c.recall.map(|r| format!("{r:.3}")).unwrap_or_else(|| "n/a".into());
            let _ = writeln!(
                out,
                "{:<16} {:<22} {:>5} {:>9} {:>7}",
                c.category.name(),
                c.rule,
                c.maps,
                c.detected,
                recall
            );
        }
        let _ = writeln!(out, "clean maps: {}, false positives: {}", self.clean_maps, self.false_positives);
        for m in &self.false_positive_maps {
            let _ = writeln!(out, "  false positive: {m}");
        }
        let _ = writeln!(out, "runtime: {:.3} s", self.runtime.as_secs_f64());
        out
    }
}

/// Verification outcome of one corpus map.
#[derive(Debug, Clone)]
pub struct MapOutcome {
    pub id: String,
    pub report: VerificationReport,
}

/// Scores already-evaluated maps against their manifest.
pub fn score(manifest: &Manifest, outcomes: &[MapOutcome], mapping: &CategoryMapping, runtime: Duration) -> MetricsReport {
    let by_id: BTreeMap<&str, &VerificationReport> = outcomes.iter().map(|o| (o.id.as_str(), &o.report)).collect();
    let mut categories = Vec::new();
    for d in DefectKind::ALL {
        let rule = mapping.rule(d);
        let carrying: Vec<_> = manifest.maps.iter().filter(|m| m.has(d)).collect();
        let detected = carrying
            .iter()
            .filter(|m| by_id.get(m.id.as_str()).is_some_and(|r| r.violated_rules().any(|v| v == rule)))
            .count();
        categories.push(CategoryMetrics {
            category: d,
            rule: rule.to_string(),
            maps: carrying.len(),
            detected,
            recall: (!carrying.is_empty()).then(|| detected as f64 / carrying.len() as f64),
        });
    }
    let clean: Vec<_> = manifest.maps.iter().filter(|m| m.is_clean()).collect();
    let false_positive_maps: Vec<String> = clean
        .iter()
        .filter(|m| by_id.get(m.id.as_str()).is_some_and(|r| !r.is_satisfied()))
        .map(|m| m.id.clone())
        .collect();
    MetricsReport {
        format: METRICS_FORMAT,
        corpus_seed: manifest.seed,
        categories,
        clean_maps: clean.len(),
        false_positives: false_positive_maps.len(),
        false_positive_maps,
        runtime,
    }
}

/// Verifies every map of the corpus at `dir` and scores the results.
pub fn run(dir: &Path, linked: &LinkedRuleset, cfg: &EvalConfig, mapping: &CategoryMapping) -> Result<MetricsReport, HarnessError> {
    let start = Instant::now();
    mapping.check(linked)?;
    let manifest = read_manifest(dir)?;
    let eval_one = |id: &str| -> Result<MapOutcome, HarnessError> {
        let path = Manifest::map_path(dir, id);
        let bytes = fs::read(&path).map_err(|source| HarnessError::Read {
            path: path.clone(),
            source,
        })?;
        let net = read_map(&bytes).map_err(|source| HarnessError::Map {
            path: path.clone(),
            source,
        })?;
        let report = evaluate(linked, &net, cfg).map_err(|source| HarnessError::Eval { path, source })?;
        Ok(MapOutcome {
            id: id.to_string(),
            report,
        })
    };
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(manifest.maps.len().max(1));
    let ids: Vec<&str> = manifest.maps.iter().map(|m| m.id.as_str()).collect();
    let outcomes = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let ids = &ids;
                let eval_one = &eval_one;
                s.spawn(move || ids.iter().skip(w).step_by(workers).map(|id| eval_one(id)).collect::<Vec<_>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("map evaluation does not panic"))
            .collect::<Result<Vec<_>, HarnessError>>()
    })?;
    Ok(score(&manifest, &outcomes, mapping, start.elapsed()))
}
