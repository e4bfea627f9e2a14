//! Staged validation of candidate artifacts.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use super::contract::{parse_contract, CandidateArtifact};
use super::smoke::SmokePair;
use crate::engine::{evaluate, link, EvalConfig, LinkedRuleset, LoadError, RuleStatus, Violation};
use crate::predicate_lang::{parse_pdl, typecheck, BuiltinCatalog, PredicateDef, PredicateSet};
use crate::rule_lang::{free_functions, parse_ruleset, RuleDecl};
use crate::scenario_gen::DefectKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    ContractParse,
    RuleSyntax,
    PdlSyntax,
    Typecheck,
    ReferenceClosure,
    SmokeTest,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::ContractParse,
        Stage::RuleSyntax,
        Stage::PdlSyntax,
        Stage::Typecheck,
        Stage::ReferenceClosure,
        Stage::SmokeTest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::ContractParse => "contract-parse",
            Stage::RuleSyntax => "rule-syntax",
            Stage::PdlSyntax => "pdl-syntax",
            Stage::Typecheck => "typecheck",
            Stage::ReferenceClosure => "reference-closure",
            Stage::SmokeTest => "smoke-test",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Passed,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageResult {
    pub stage: Stage,
    pub status: StageStatus,
    pub diagnostics: Vec<String>,
}

/// What the smoke stage saw on its two micro-maps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmokeEvidence {
    pub category: DefectKind,
    pub clean_violations: Vec<Violation>,
    pub defect_violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationVerdict {
    pub stages: Vec<StageResult>,
    pub smoke: Option<SmokeEvidence>,
}

impl ValidationVerdict {
    pub fn rejected_at(&self) -> Option<Stage> {
        self.stages.iter().find(|s| s.status == StageStatus::Failed).map(|s| s.stage)
    }

    pub fn is_accepted(&self) -> bool {
        self.rejected_at().is_none()
    }

    pub fn diagnostics(&self) -> &[String] {
        self.stages
            .iter()
            .find(|s| s.status == StageStatus::Failed)
            .map(|s| s.diagnostics.as_slice())
            .unwrap_or(&[])
    }

    /// One line per stage, for terminals.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for s in &self.stages {
            let mark = match s.status {
                StageStatus::Passed => "ok",
                StageStatus::Failed => "FAILED",
                StageStatus::Skipped => "skipped",
            };
            out.push_str(&format!("{:<18} {mark}\n", s.stage.name()));
            for d in &s.diagnostics {
                out.push_str(&format!("    {d}\n"));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("verdict serializes");
        s.push('\n');
        s
    }
}

/// The active rules and predicates a candidate is validated against.
#[derive(Debug, Clone)]
pub struct RegistryState {
    pub rules_text: String,
    pub pdl_text: String,
    linked: LinkedRuleset,
}

impl RegistryState {
    pub fn from_texts(rules_text: &str, pdl_text: &str) -> Result<Self, LoadError> {
        let linked = crate::engine::load_linked(rules_text, pdl_text)?;
        Ok(RegistryState {
            rules_text: rules_text.to_string(),
            pdl_text: pdl_text.to_string(),
            linked,
        })
    }

    pub fn rules(&self) -> &[RuleDecl] {
        self.linked.rules()
    }

    pub fn predicates(&self) -> &PredicateSet {
        self.linked.predicates()
    }

    pub fn linked(&self) -> &LinkedRuleset {
        &self.linked
    }
}

/// The parsed parts of a candidate that passed the syntax stages.
#[derive(Debug, Clone)]
pub struct ParsedCandidate {
    pub rule: RuleDecl,
    pub defs: Vec<PredicateDef>,
}

/// Parses rule and predicate text; `Err` carries the failing stage.
pub fn parse_candidate(c: &CandidateArtifact) -> Result<ParsedCandidate, (Stage, Vec<String>)> {
    let rules = parse_ruleset(&c.rule_text).map_err(|e| (Stage::RuleSyntax, vec![e.to_string()]))?;
    let rule = match <[RuleDecl; 1]>::try_from(rules) {
        Ok([r]) => r,
        Err(v) => {
            return Err((Stage::RuleSyntax, vec![format!("expected exactly one rule, found {}", v.len())]));
        }
    };
    let defs = parse_pdl(&c.pdl_text).map_err(|e| (Stage::PdlSyntax, vec![e.to_string()]))?;
    if defs.is_empty() {
        return Err((Stage::PdlSyntax, vec!["no predicate definitions".into()]));
    }
    Ok(ParsedCandidate { rule, defs })
}

struct Run {
    stages: Vec<StageResult>,
}

impl Run {
    fn pass(&mut self, stage: Stage) {
        self.stages.push(StageResult {
            stage,
            status: StageStatus::Passed,
            diagnostics: vec![],
        });
    }

    fn fail(mut self, stage: Stage, diagnostics: Vec<String>, smoke: Option<SmokeEvidence>) -> ValidationVerdict {
        self.stages.push(StageResult {
            stage,
            status: StageStatus::Failed,
            diagnostics,
        });
        self.finish(smoke)
    }

    fn finish(mut self, smoke: Option<SmokeEvidence>) -> ValidationVerdict {
        for stage in Stage::ALL.into_iter().skip(self.stages.len()) {
            self.stages.push(StageResult {
                stage,
                status: StageStatus::Skipped,
                diagnostics: vec![],
            });
        }
        ValidationVerdict {
            stages: self.stages,
            smoke,
        }
    }
}

/// Registered predicates plus the candidate's, assuming they type-check.
fn merged_predicates(state: &RegistryState, defs: &[PredicateDef]) -> Result<PredicateSet, Vec<String>> {
    let mut preds = state.predicates().clone();
    preds
        .register(defs.to_vec())
        .map_err(|ds| ds.iter().map(|d| d.to_string()).collect::<Vec<_>>())?;
    Ok(preds)
}

/// Runs the stages after contract parsing, in order, stopping at the first
/// failure.
pub fn validate(c: &CandidateArtifact, state: &RegistryState, smoke: &SmokePair) -> ValidationVerdict {
    let mut run = Run { stages: Vec::new() };
    run.pass(Stage::ContractParse);
    let catalog = BuiltinCatalog::standard();

    let parsed = match parse_candidate(c) {
        Ok(p) => p,
        Err((stage, diags)) => {
            if stage == Stage::PdlSyntax {
                run.pass(Stage::RuleSyntax);
            }
            return run.fail(stage, diags, None);
        }
    };
    run.pass(Stage::RuleSyntax);
    run.pass(Stage::PdlSyntax);

    let mut diags: Vec<String> = match typecheck(&parsed.defs, &catalog, state.predicates().defs()) {
        Ok(()) => vec![],
        Err(ds) => ds.iter().map(|d| d.to_string()).collect(),
    };
    if state.rules().iter().any(|r| r.name == parsed.rule.name) {
        diags.push(format!("rule `{}` already exists in the registry", parsed.rule.name));
    }
    if !diags.is_empty() {
        return run.fail(Stage::Typecheck, diags, None);
    }
    run.pass(Stage::Typecheck);

    let preds = match merged_predicates(state, &parsed.defs) {
        Ok(p) => p,
        Err(d) => return run.fail(Stage::Typecheck, d, None),
    };
    let known: BTreeSet<&str> = catalog
        .builtins()
        .map(|b| b.name())
        .chain(preds.defs().iter().map(|d| d.name.as_str()))
        .collect();
    let unresolved: Vec<String> = free_functions(&parsed.rule.body)
        .into_iter()
        .filter(|(name, _)| !known.contains(name.as_str()))
        .map(|(name, _)| format!("unresolved name `{name}`"))
        .collect();
    if !unresolved.is_empty() {
        return run.fail(Stage::ReferenceClosure, unresolved, None);
    }
    let mut all_rules = state.rules().to_vec();
    all_rules.push(parsed.rule.clone());
    if let Err(errs) = link(all_rules, preds.clone(), &catalog) {
        return run.fail(Stage::ReferenceClosure, errs.iter().map(|e| e.to_string()).collect(), None);
    }
    run.pass(Stage::ReferenceClosure);

    let candidate = link(vec![parsed.rule.clone()], preds, &catalog).expect("linked above as part of the full set");
    let cfg = EvalConfig::default();
    let outcome = |net| {
        evaluate(&candidate, net, &cfg).map(|r| {
            let rule = &r.rules[0];
            (rule.status, rule.violations.clone())
        })
    };
    let (clean, defect) = match (outcome(&smoke.clean), outcome(&smoke.defect)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return run.fail(Stage::SmokeTest, vec![format!("evaluation failed: {e}")], None),
    };
    let evidence = SmokeEvidence {
        category: smoke.category,
        clean_violations: clean.1,
        defect_violations: defect.1,
    };
    let mut diags = Vec::new();
    if clean.0 != RuleStatus::Satisfied {
        diags.push(format!("rule `{}` is violated on the clean {} micro-map", parsed.rule.name, smoke.category.name()));
    }
    if defect.0 != RuleStatus::Violated {
        diags.push(format!("rule `{}` is satisfied on the defective {} micro-map", parsed.rule.name, smoke.category.name()));
    }
    if !diags.is_empty() {
        return run.fail(Stage::SmokeTest, diags, Some(evidence));
    }
    run.pass(Stage::SmokeTest);
    run.finish(Some(evidence))
}

/// Contract parsing followed by [`validate`].
pub fn validate_response(
    response: &str,
    state: &RegistryState,
    smoke: &SmokePair,
) -> (Option<CandidateArtifact>, ValidationVerdict) {
    match parse_contract(response) {
        Ok(c) => {
            let v = validate(&c, state, smoke);
            (Some(c), v)
        }
        Err(e) => {
            let run = Run { stages: Vec::new() };
            (None, run.fail(Stage::ContractParse, vec![e.to_string()], None))
        }
    }
}
