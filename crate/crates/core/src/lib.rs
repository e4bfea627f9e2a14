//! Rule-based verification of lanelet maps with elevation.
//!
//! Rules are finite-domain first-order formulas over the lanelets of a map
//! ([`rule_lang`]); their atoms are predicates written in a small
//! interpreted language ([`predicate_lang`]) over fixed geometric builtins.
//! [`engine`] evaluates rules against a [`map_model::LaneletNetwork`] and
//! reports every falsifying binding. [`synthesis`] drafts new rule and
//! predicate pairs with a completion model and registers them after review.

pub mod engine;
pub mod eval_harness;
pub mod map_io;
pub mod map_model;
pub mod predicate_lang;
pub mod rule_lang;
pub mod scenario_gen;
pub mod synthesis;
pub mod syntax;

use std::fs::{self, File};
use std::io::{self, Write};
use std::path::Path;

/// Replaces `path` with `contents` via a temporary sibling and a rename, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}
