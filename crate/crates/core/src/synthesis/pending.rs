//! Candidates awaiting a reviewer's decision.
//!
//! Each candidate lives in `<pending>/<id>/` as `candidate.json` (request,
//! category, registry location and the raw response), `response.txt` (the
//! response alone, convenient for editing and resubmitting) and
//! `verdict.json` (the verdict at synthesis time). A decision is recorded in
//! a `decision` file and is final.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::contract::CandidateArtifact;
use super::registry::{Approval, Registry, RegistryError};
use super::smoke::smoke_pair;
use super::validate::{validate_response, ValidationVerdict};
use crate::scenario_gen::DefectKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingCandidate {
    pub request_id: String,
    pub description: String,
    pub category: DefectKind,
    pub registry: PathBuf,
    pub response: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Approve,
    Reject,
}

impl Decision {
    fn word(self) -> &'static str {
        match self {
            Decision::Approve => "approved",
            Decision::Reject => "rejected",
        }
    }
}

#[derive(Debug, Error)]
pub enum PendingError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("pending candidate `{0}` already exists")]
    Exists(String),
    #[error("no pending candidate `{0}`")]
    Unknown(String),
    #[error("candidate `{0}` was already {1}")]
    Decided(String, String),
    #[error("candidate id `{0}` must be a plain name")]
    BadId(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PendingError + '_ {
    move |source| PendingError::Io {
        path: path.to_path_buf(),
        source,
    }
}

const CANDIDATE_FILE: &str = "candidate.json";
const RESPONSE_FILE: &str = "response.txt";
const VERDICT_FILE: &str = "verdict.json";
const DECISION_FILE: &str = "decision";

pub struct PendingStore {
    dir: PathBuf,
}

fn check_id(id: &str) -> Result<(), PendingError> {
    let plain = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if plain {
        Ok(())
    } else {
        Err(PendingError::BadId(id.to_string()))
    }
}

impl PendingStore {
    pub fn open(dir: &Path) -> Result<Self, PendingError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(PendingStore { dir: dir.to_path_buf() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes a new entry. The directory appears complete or not at all.
    pub fn save(&self, c: &PendingCandidate, verdict: &ValidationVerdict) -> Result<PathBuf, PendingError> {
        check_id(&c.request_id)?;
        let target = self.dir.join(&c.request_id);
        if target.exists() {
            return Err(PendingError::Exists(c.request_id.clone()));
        }
        let staging = self.dir.join(format!(".{}.staging-{}", c.request_id, std::process::id()));
        let result = (|| {
            fs::create_dir_all(&staging).map_err(io_err(&staging))?;
            let mut json = serde_json::to_string_pretty(c).expect("candidate serializes");
            json.push('\n');
            for (name, text) in [
                (CANDIDATE_FILE, json.as_str()),
                (RESPONSE_FILE, c.response.as_str()),
                (VERDICT_FILE, verdict.to_json().as_str()),
            ] {
                let p = staging.join(name);
                fs::write(&p, text).map_err(io_err(&p))?;
            }
            fs::rename(&staging, &target).map_err(io_err(&target))
        })();
        if result.is_err() {
            let _ = fs::remove_dir_all(&staging);
        }
        result.map(|()| target)
    }

    pub fn load(&self, id: &str) -> Result<PendingCandidate, PendingError> {
        check_id(id)?;
        let p = self.dir.join(id).join(CANDIDATE_FILE);
        let text = match fs::read_to_string(&p) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(PendingError::Unknown(id.to_string())),
            Err(e) => return Err(io_err(&p)(e)),
        };
        serde_json::from_str(&text).map_err(|e| PendingError::Format {
            path: p,
            message: e.to_string(),
        })
    }

    pub fn decision(&self, id: &str) -> Result<Option<String>, PendingError> {
        let p = self.dir.join(id).join(DECISION_FILE);
        match fs::read_to_string(&p) {
            Ok(t) => Ok(Some(t.trim().to_string())),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&p)(e)),
        }
    }

    fn record(&self, id: &str, d: Decision) -> Result<(), PendingError> {
        let p = self.dir.join(id).join(DECISION_FILE);
        fs::write(&p, format!("{}\n", d.word())).map_err(io_err(&p))
    }

    /// Ids of undecided candidates, sorted.
    pub fn undecided(&self) -> Result<Vec<String>, PendingError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.dir).map_err(io_err(&self.dir))? {
            let entry = entry.map_err(io_err(&self.dir))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if check_id(&name).is_ok() && entry.path().join(CANDIDATE_FILE).exists() && self.decision(&name)?.is_none() {
                ids.push(name);
            }
        }
        ids.sort();
        Ok(ids)
    }
}

/// A pending candidate re-validated against the registry as it is now.
pub struct Review {
    pub pending: PendingCandidate,
    pub candidate: Option<CandidateArtifact>,
    pub verdict: ValidationVerdict,
}

impl Review {
    pub fn prepare(store: &PendingStore, id: &str) -> Result<Self, PendingError> {
        let pending = store.load(id)?;
        if let Some(d) = store.decision(id)? {
            return Err(PendingError::Decided(id.to_string(), d));
        }
        let state = Registry::open(&pending.registry)?.state()?;
        let (candidate, verdict) = validate_response(&pending.response, &state, &smoke_pair(pending.category));
        Ok(Review {
            pending,
            candidate,
            verdict,
        })
    }

    /// Everything a reviewer needs to decide: the artifact, each stage and
    /// the builtin values the smoke maps produced.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let p = &self.pending;
        let _ = writeln!(out, "candidate {} ({})", p.request_id, p.category.name());
        let _ = writeln!(out, "request: {}", p.description.trim());
        match &self.candidate {
            Some(c) => {
                let _ = writeln!(out, "\n-- rule --\n{}", c.rule_text);
                let _ = writeln!(out, "\n-- predicates --\n{}", c.pdl_text);
                let _ = writeln!(out, "\n-- explanation --\n{}", c.explanation);
            }
            None => {
                let _ = writeln!(out, "\n-- raw response --\n{}", p.response.trim_end());
            }
        }
        let _ = writeln!(out, "\n-- validation --\n{}", self.verdict.summary().trim_end());
        if let Some(s) = &self.verdict.smoke {
            for (label, vs) in [("clean map", &s.clean_violations), ("defect map", &s.defect_violations)] {
                let _ = writeln!(out, "\n-- smoke test, {label}: {} violation(s) --", vs.len());
                for v in vs {
                    let binding: Vec<String> = v.binding.iter().map(|b| format!("{}={}", b.var, b.lanelet)).collect();
                    let witness: Vec<String> = v.witness.iter().map(|w| format!("{} = {}", w.call, w.value)).collect();
                    let _ = writeln!(out, "  {} [{}] {}", v.rule, binding.join(", "), witness.join(", "));
                }
            }
        }
        out
    }

    /// Applies the reviewer's decision and records it.
    pub fn decide(self, store: &PendingStore, decision: Decision) -> Result<Option<Approval>, PendingError> {
        let registry = Registry::open(&self.pending.registry)?;
        let id = &self.pending.request_id;
        let approval = match decision {
            Decision::Approve => {
                let Some(candidate) = &self.candidate else {
                    return Err(RegistryError::RejectedVerdict(super::validate::Stage::ContractParse).into());
                };
                Some(registry.approve(id, candidate, &self.verdict)?)
            }
            Decision::Reject => {
                registry.reject(id)?;
                None
            }
        };
        store.record(id, decision)?;
        Ok(approval)
    }
}
