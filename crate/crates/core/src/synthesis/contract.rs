//! The three-section response contract.
//!
//! ```text
//! ---BEGIN RULE---
//! rule ...;
//! ---END RULE---
//! ```
//!
//! Text outside the fences is ignored.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Section {
    Rule,
    Predicate,
    Explanation,
}

impl Section {
    pub const ALL: [Section; 3] = [Section::Rule, Section::Predicate, Section::Explanation];

    pub fn tag(self) -> &'static str {
        match self {
            Section::Rule => "RULE",
            Section::Predicate => "PREDICATE",
            Section::Explanation => "EXPLANATION",
        }
    }

    fn from_tag(tag: &str) -> Option<Section> {
        Section::ALL.into_iter().find(|s| s.tag() == tag)
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContractError {
    #[error("{0} missing")]
    Missing(Section),
    #[error("{0} duplicated")]
    Duplicated(Section),
    #[error("{0} not terminated")]
    Unterminated(Section),
}

/// A parsed model response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateArtifact {
    pub rule_text: String,
    pub pdl_text: String,
    pub explanation: String,
    pub raw_response: String,
}

fn fence<'a>(line: &'a str, kind: &str) -> Option<&'a str> {
    line.trim()
        .strip_prefix("---")?
        .strip_suffix("---")?
        .strip_prefix(kind)?
        .strip_prefix(' ')
}

pub fn parse_contract(response: &str) -> Result<CandidateArtifact, ContractError> {
    let mut found: [Option<String>; 3] = [None, None, None];
    let mut open: Option<(Section, Vec<&str>)> = None;
    for line in response.lines() {
        match &mut open {
            Some((section, body)) => {
                if fence(line, "END").and_then(Section::from_tag) == Some(*section) {
                    let slot = &mut found[*section as usize];
                    if slot.is_some() {
                        return Err(ContractError::Duplicated(*section));
                    }
                    *slot = Some(body.join("\n").trim().to_string());
                    open = None;
                } else {
                    body.push(line);
                }
            }
            None => {
                if let Some(section) = fence(line, "BEGIN").and_then(Section::from_tag) {
                    if found[section as usize].is_some() {
                        return Err(ContractError::Duplicated(section));
                    }
                    open = Some((section, Vec::new()));
                }
            }
        }
    }
    if let Some((section, _)) = open {
        return Err(ContractError::Unterminated(section));
    }
    let [rule, pdl, explanation] = found;
    Ok(CandidateArtifact {
        rule_text: rule.ok_or(ContractError::Missing(Section::Rule))?,
        pdl_text: pdl.ok_or(ContractError::Missing(Section::Predicate))?,
        explanation: explanation.ok_or(ContractError::Missing(Section::Explanation))?,
        raw_response: response.to_string(),
    })
}
