//! On-disk registry: the active ruleset and predicate files plus an
//! append-only journal.
//!
//! An approval runs as a small transaction:
//!
//! 1. take `journal.lock` (exclusive create; a held lock refuses the attempt)
//! 2. copy both files to `*.prev`
//! 3. journal `begin`
//! 4. replace the rules file, then the predicate file (write temp, rename)
//! 5. journal `commit`, drop the backups, release the lock
//!
//! [`Registry::recover`] restores the backups when a `begin` has no matching
//! `commit`, so after recovery the two files always load and link together.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;

use super::contract::CandidateArtifact;
use super::prompt::{GRAMMAR_FILE, GRAMMAR_TEXT, MAP_SCHEMA_TEXT, SCHEMA_FILE};
use super::validate::{parse_candidate, RegistryState, Stage, ValidationVerdict};
use crate::engine::{default_ruleset_text, LoadError, Thresholds};
use crate::predicate_lang::DEFAULT_PREDICATES;

pub const RULES_FILE: &str = "rules.fol";
pub const PREDICATES_FILE: &str = "predicates.pdl";
pub const JOURNAL_FILE: &str = "journal.log";
pub const LOCK_FILE: &str = "journal.lock";
const BACKUP_SUFFIX: &str = ".prev";

/// Places where a fault-injection hook may interrupt an approval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPoint {
    AfterLock,
    AfterBackup,
    AfterBegin,
    RulesTempWritten,
    AfterRulesWrite,
    PdlTempWritten,
    AfterPdlWrite,
    AfterCommit,
}

impl CrashPoint {
    pub const ALL: [CrashPoint; 8] = [
        CrashPoint::AfterLock,
        CrashPoint::AfterBackup,
        CrashPoint::AfterBegin,
        CrashPoint::RulesTempWritten,
        CrashPoint::AfterRulesWrite,
        CrashPoint::PdlTempWritten,
        CrashPoint::AfterPdlWrite,
        CrashPoint::AfterCommit,
    ];
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("registry is locked by another writer ({0} exists)")]
    Locked(PathBuf),
    #[error("registry has an unfinished transaction; run recovery first")]
    NeedsRecovery,
    #[error("cannot approve a candidate rejected at {0}")]
    RejectedVerdict(Stage),
    #[error("candidate no longer fits the registry: {0}")]
    Stale(String),
    #[error("registry files do not load: {0}")]
    Load(#[from] LoadError),
    #[error("{0} already exists")]
    AlreadyInitialized(PathBuf),
    #[error("request id `{0}` must be nonempty and free of whitespace")]
    BadRequestId(String),
    #[error("simulated crash at {0:?}")]
    Crashed(CrashPoint),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RegistryError + '_ {
    move |source| RegistryError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JournalRecord {
    Begin,
    Commit,
    Rollback,
    Reject,
}

impl JournalRecord {
    fn word(self) -> &'static str {
        match self {
            JournalRecord::Begin => "begin",
            JournalRecord::Commit => "commit",
            JournalRecord::Rollback => "rollback",
            JournalRecord::Reject => "reject",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [
            JournalRecord::Begin,
            JournalRecord::Commit,
            JournalRecord::Rollback,
            JournalRecord::Reject,
        ]
        .into_iter()
        .find(|r| r.word() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JournalEntry {
    pub timestamp: u64,
    pub request_id: String,
    pub record: JournalRecord,
}

/// Outcome of [`Registry::recover`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Recovery {
    /// Nothing to do.
    Clean,
    /// Leftovers of an interrupted attempt removed; files were untouched.
    Cleaned,
    /// An unfinished approval was undone from the backups.
    RolledBack(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Approval {
    pub rule: String,
    pub predicates: Vec<String>,
}

pub struct Registry {
    dir: PathBuf,
    clock: fn() -> u64,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn hit(crash: &mut dyn FnMut(CrashPoint) -> bool, p: CrashPoint) -> Result<(), RegistryError> {
    if crash(p) {
        Err(RegistryError::Crashed(p))
    } else {
        Ok(())
    }
}

fn check_id(id: &str) -> Result<(), RegistryError> {
    if id.is_empty() || id.chars().any(char::is_whitespace) {
        return Err(RegistryError::BadRequestId(id.to_string()));
    }
    Ok(())
}

/// Appends `body` under a comment naming the request.
fn append_block(existing: &str, id: &str, body: &str) -> String {
    let mut s = existing.to_string();
    if !s.is_empty() && !s.ends_with('\n') {
        s.push('\n');
    }
    s.push_str(&format!("\n# {id}\n{}\n", body.trim()));
    s
}

impl Registry {
    pub fn open(dir: &Path) -> Result<Self, RegistryError> {
        for f in [RULES_FILE, PREDICATES_FILE] {
            let p = dir.join(f);
            fs::metadata(&p).map_err(io_err(&p))?;
        }
        Ok(Registry {
            dir: dir.to_path_buf(),
            clock: unix_now,
        })
    }

    /// Creates a registry holding the shipped rules and predicates, plus the
    /// grammar and schema used as prompt context.
    pub fn init(dir: &Path, t: &Thresholds) -> Result<Self, RegistryError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for f in [RULES_FILE, PREDICATES_FILE] {
            let p = dir.join(f);
            if p.exists() {
                return Err(RegistryError::AlreadyInitialized(p));
            }
        }
        let reg = Registry {
            dir: dir.to_path_buf(),
            clock: unix_now,
        };
        reg.atomic_write(GRAMMAR_FILE, GRAMMAR_TEXT, None)?;
        reg.atomic_write(SCHEMA_FILE, MAP_SCHEMA_TEXT, None)?;
        reg.atomic_write(PREDICATES_FILE, DEFAULT_PREDICATES, None)?;
        reg.atomic_write(RULES_FILE, &default_ruleset_text(t), None)?;
        Ok(reg)
    }

    /// Replaces the journal timestamp source.
    pub fn with_clock(mut self, clock: fn() -> u64) -> Self {
        self.clock = clock;
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn rules_path(&self) -> PathBuf {
        self.path(RULES_FILE)
    }

    pub fn predicates_path(&self) -> PathBuf {
        self.path(PREDICATES_FILE)
    }

    fn read(&self, name: &str) -> Result<String, RegistryError> {
        let p = self.path(name);
        fs::read_to_string(&p).map_err(io_err(&p))
    }

    /// Loads and links the current files.
    pub fn state(&self) -> Result<RegistryState, RegistryError> {
        Ok(RegistryState::from_texts(&self.read(RULES_FILE)?, &self.read(PREDICATES_FILE)?)?)
    }

    fn atomic_write(
        &self,
        name: &str,
        text: &str,
        crash: Option<(&mut dyn FnMut(CrashPoint) -> bool, CrashPoint)>,
    ) -> Result<(), RegistryError> {
        let target = self.path(name);
        let tmp = self.path(&format!(".{name}.tmp"));
        {
            let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
            f.write_all(text.as_bytes()).map_err(io_err(&tmp))?;
            f.sync_all().map_err(io_err(&tmp))?;
        }
        if let Some((crash, point)) = crash {
            hit(crash, point)?;
        }
        fs::rename(&tmp, &target).map_err(io_err(&target))?;
        if let Ok(d) = File::open(&self.dir) {
            let _ = d.sync_all();
        }
        Ok(())
    }

    pub fn journal(&self) -> Result<Vec<JournalEntry>, RegistryError> {
        let p = self.path(JOURNAL_FILE);
        let text = match fs::read_to_string(&p) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(vec![]),
            Err(e) => return Err(io_err(&p)(e)),
        };
        Ok(text
            .lines()
            .filter_map(|line| {
                let mut parts = line.split('\t');
                let timestamp = parts.next()?.parse().ok()?;
                let request_id = parts.next()?.to_string();
                let record = JournalRecord::parse(parts.next()?)?;
                Some(JournalEntry {
                    timestamp,
                    request_id,
                    record,
                })
            })
            .collect())
    }

    fn append_journal(&self, id: &str, record: JournalRecord) -> Result<(), RegistryError> {
        let p = self.path(JOURNAL_FILE);
        let mut f = OpenOptions::new().create(true).append(true).open(&p).map_err(io_err(&p))?;
        writeln!(f, "{}\t{id}\t{}", (self.clock)(), record.word()).map_err(io_err(&p))?;
        f.sync_all().map_err(io_err(&p))
    }

    /// Request id of an approval that began but neither committed nor
    /// rolled back.
    pub fn unfinished(&self) -> Result<Option<String>, RegistryError> {
        let mut open = None;
        for e in self.journal()? {
            match e.record {
                JournalRecord::Begin => open = Some(e.request_id),
                JournalRecord::Commit | JournalRecord::Rollback => open = None,
                JournalRecord::Reject => {}
            }
        }
        Ok(open)
    }

    fn leftovers(&self) -> Vec<PathBuf> {
        [
            format!("{RULES_FILE}{BACKUP_SUFFIX}"),
            format!("{PREDICATES_FILE}{BACKUP_SUFFIX}"),
            format!(".{RULES_FILE}.tmp"),
            format!(".{PREDICATES_FILE}.tmp"),
        ]
        .into_iter()
        .map(|n| self.path(&n))
        .filter(|p| p.exists())
        .collect()
    }

    /// True when an interrupted attempt left state for [`Self::recover`].
    pub fn needs_recovery(&self) -> Result<bool, RegistryError> {
        Ok(self.unfinished()?.is_some() || !self.leftovers().is_empty())
    }

    fn lock(&self) -> Result<(), RegistryError> {
        let p = self.path(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&p) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(())
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(RegistryError::Locked(p)),
            Err(e) => Err(io_err(&p)(e)),
        }
    }

    fn unlock(&self) -> Result<(), RegistryError> {
        let p = self.path(LOCK_FILE);
        fs::remove_file(&p).map_err(io_err(&p))
    }

    /// Runs `f` under the lock. A simulated crash leaves the lock in place,
    /// as a real one would.
    fn locked<T>(&self, f: impl FnOnce() -> Result<T, RegistryError>) -> Result<T, RegistryError> {
        self.lock()?;
        let r = f();
        if !matches!(r, Err(RegistryError::Crashed(_))) {
            self.unlock()?;
        }
        r
    }

    pub fn approve(
        &self,
        request_id: &str,
        candidate: &CandidateArtifact,
        verdict: &ValidationVerdict,
    ) -> Result<Approval, RegistryError> {
        self.approve_with_hook(request_id, candidate, verdict, &mut |_| false)
    }

    /// Like [`Self::approve`]; `crash` is consulted at every [`CrashPoint`]
    /// and aborts the attempt on the spot when it returns true.
    pub fn approve_with_hook(
        &self,
        request_id: &str,
        candidate: &CandidateArtifact,
        verdict: &ValidationVerdict,
        crash: &mut dyn FnMut(CrashPoint) -> bool,
    ) -> Result<Approval, RegistryError> {
        check_id(request_id)?;
        if let Some(stage) = verdict.rejected_at() {
            return Err(RegistryError::RejectedVerdict(stage));
        }
        self.locked(|| {
            hit(crash, CrashPoint::AfterLock)?;
            if self.needs_recovery()? {
                return Err(RegistryError::NeedsRecovery);
            }
            let parsed = parse_candidate(candidate).map_err(|(stage, d)| RegistryError::Stale(format!("{stage}: {}", d.join("; "))))?;
            let old_rules = self.read(RULES_FILE)?;
            let old_pdl = self.read(PREDICATES_FILE)?;
            let new_rules = append_block(&old_rules, request_id, &candidate.rule_text);
            let new_pdl = append_block(&old_pdl, request_id, &candidate.pdl_text);
            RegistryState::from_texts(&new_rules, &new_pdl).map_err(|e| RegistryError::Stale(e.to_string()))?;

            self.atomic_write(&format!("{RULES_FILE}{BACKUP_SUFFIX}"), &old_rules, None)?;
            self.atomic_write(&format!("{PREDICATES_FILE}{BACKUP_SUFFIX}"), &old_pdl, None)?;
            hit(crash, CrashPoint::AfterBackup)?;
            self.append_journal(request_id, JournalRecord::Begin)?;
            hit(crash, CrashPoint::AfterBegin)?;
            self.atomic_write(RULES_FILE, &new_rules, Some((crash, CrashPoint::RulesTempWritten)))?;
            hit(crash, CrashPoint::AfterRulesWrite)?;
            self.atomic_write(PREDICATES_FILE, &new_pdl, Some((crash, CrashPoint::PdlTempWritten)))?;
            hit(crash, CrashPoint::AfterPdlWrite)?;
            self.append_journal(request_id, JournalRecord::Commit)?;
            hit(crash, CrashPoint::AfterCommit)?;
            self.remove_leftovers()?;
            Ok(Approval {
                rule: parsed.rule.name,
                predicates: parsed.defs.into_iter().map(|d| d.name).collect(),
            })
        })
    }

    /// Records a rejection. The rule and predicate files are not touched.
    pub fn reject(&self, request_id: &str) -> Result<(), RegistryError> {
        check_id(request_id)?;
        self.locked(|| self.append_journal(request_id, JournalRecord::Reject))
    }

    fn remove_leftovers(&self) -> Result<(), RegistryError> {
        for p in self.leftovers() {
            fs::remove_file(&p).map_err(io_err(&p))?;
        }
        Ok(())
    }

    /// Finishes or undoes an interrupted approval and releases a stale lock.
    /// Only run this when no other writer can be active.
    pub fn recover(&self) -> Result<Recovery, RegistryError> {
        let lock = self.path(LOCK_FILE);
        let had_lock = lock.exists();
        let outcome = match self.unfinished()? {
            Some(id) => {
                for name in [RULES_FILE, PREDICATES_FILE] {
                    let backup = self.read(&format!("{name}{BACKUP_SUFFIX}"))?;
                    self.atomic_write(name, &backup, None)?;
                }
                self.append_journal(&id, JournalRecord::Rollback)?;
                self.remove_leftovers()?;
                Recovery::RolledBack(id)
            }
            None if had_lock || !self.leftovers().is_empty() => {
                self.remove_leftovers()?;
                Recovery::Cleaned
            }
            None => Recovery::Clean,
        };
        if had_lock {
            self.unlock()?;
        }
        Ok(outcome)
    }
}
