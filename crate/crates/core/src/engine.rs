//! Linking rules against predicates and evaluating them on a network.
//!
//! A rule's leading run of `forall` quantifiers is its *prefix*. The engine
//! enumerates the full cartesian product of the prefix domains and records
//! every binding under which the remaining body is false, together with the
//! builtin values computed on that evaluation path.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::map_model::{LaneletNetwork, DEFAULT_OVERLAP_RADIUS, DEFAULT_SAMPLES};
use crate::predicate_lang::{
    default_predicates, BuiltinCatalog, Callee, EvalError, GeomContext, Interpreter, PredicateSet,
    Value, ValueType, Witness, WitnessLog,
};
use crate::rule_lang::{parse_ruleset, Binding, Domain, Formula, QuantKind, RuleDecl, RuleError, Term};

/// Thresholds the shipped ruleset is rendered with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub max_grade: f64,
    pub max_step: f64,
    pub stack_eps: f64,
    pub min_clearance: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            max_grade: 0.15,
            max_step: 0.05,
            stack_eps: 1.0,
            min_clearance: 4.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub samples_per_centerline: usize,
    pub overlap_radius: f64,
    pub thresholds: Thresholds,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            samples_per_centerline: DEFAULT_SAMPLES,
            overlap_radius: DEFAULT_OVERLAP_RADIUS,
            thresholds: Thresholds::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.thresholds;
        if self.samples_per_centerline < 2 {
            return Err(ConfigError::Invalid("samples_per_centerline must be at least 2".into()));
        }
        for (name, v) in [
            ("overlap_radius", self.overlap_radius),
            ("max_grade", t.max_grade),
            ("max_step", t.max_step),
            ("stack_eps", t.stack_eps),
            ("min_clearance", t.min_clearance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if t.stack_eps >= t.min_clearance {
            return Err(ConfigError::Invalid(format!(
                "stack_eps ({}) must be below min_clearance ({})",
                t.stack_eps, t.min_clearance
            )));
        }
        Ok(())
    }

    /// Reads a TOML config; absent keys take their defaults.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: EvalConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The shipped three-rule set, with thresholds filled in.
pub fn default_ruleset_text(t: &Thresholds) -> String {
    format!(
        "# Elevation rules for converted lanelet networks.\n\
         rule slope_limit: forall l in L . is_grade_within_limit(l, {});\n\
         rule elevation_continuity: forall (a, b) in succ_pairs(L) . elevation_step_ok(a, b, {});\n\
         rule vertical_clearance: forall (a, b) in pairs(L) . clearance_ok(a, b, {}, {});\n",
        t.max_grade, t.max_step, t.stack_eps, t.min_clearance
    )
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinkError {
    #[error("rule `{rule}`: unresolved name `{name}`{}", suggestion.as_ref().map(|s| format!(" (did you mean `{s}`?)")).unwrap_or_default())]
    Unresolved {
        rule: String,
        name: String,
        suggestion: Option<String>,
    },
    #[error("rule `{rule}`: `{name}` takes {expected} argument(s), got {found}")]
    Arity {
        rule: String,
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("rule `{rule}`: {detail}")]
    Type { rule: String, detail: String },
}

/// A ruleset whose every application resolves, with argument types checked.
#[derive(Debug, Clone)]
pub struct LinkedRuleset {
    rules: Vec<RuleDecl>,
    preds: PredicateSet,
    resolution: BTreeMap<String, Callee>,
}

impl LinkedRuleset {
    pub fn rules(&self) -> &[RuleDecl] {
        &self.rules
    }

    pub fn predicates(&self) -> &PredicateSet {
        &self.preds
    }

    pub fn resolution(&self) -> &BTreeMap<String, Callee> {
        &self.resolution
    }

    pub fn rule(&self, name: &str) -> Option<&RuleDecl> {
        self.rules.iter().find(|r| r.name == name)
    }
}

struct Linker<'a> {
    preds: &'a PredicateSet,
    catalog: &'a BuiltinCatalog,
    rule: &'a str,
    errors: Vec<LinkError>,
    resolution: BTreeMap<String, Callee>,
}

impl<'a> Linker<'a> {
    fn candidates(&self) -> impl Iterator<Item = String> + '_ {
        self.catalog
            .builtins()
            .map(|b| b.name().to_string())
            .chain(self.preds.defs().iter().map(|d| d.name.clone()))
    }

    fn suggest(&self, name: &str) -> Option<String> {
        self.candidates()
            .map(|c| (strsim::levenshtein(name, &c), c))
            .filter(|(d, c)| *d <= 3.max(c.len() / 3))
            .min()
            .map(|(_, c)| c)
    }

    /// Resolves `name` and checks arguments; returns the result type.
    fn apply(&mut self, name: &str, args: &[Term]) -> Option<ValueType> {
        let arg_types: Vec<Option<ValueType>> = args.iter().map(|a| self.term(a)).collect();
        let Some(callee) = self.preds.resolve(name).filter(|c| match c {
            Callee::Builtin(b) => self.catalog.lookup(b.name()).is_some(),
            Callee::Predicate(_) => true,
        }) else {
            let suggestion = self.suggest(name);
            self.errors.push(LinkError::Unresolved {
                rule: self.rule.to_string(),
                name: name.to_string(),
                suggestion,
            });
            return None;
        };
        self.resolution.insert(name.to_string(), callee);
        let (params, ret) = match callee {
            Callee::Builtin(b) => (b.params().to_vec(), b.returns()),
            Callee::Predicate(i) => (self.preds.by_index(i).signature(), ValueType::Bool),
        };
        if params.len() != args.len() {
            self.errors.push(LinkError::Arity {
                rule: self.rule.to_string(),
                name: name.to_string(),
                expected: params.len(),
                found: args.len(),
            });
            return Some(ret);
        }
        for (i, (got, want)) in arg_types.iter().zip(&params).enumerate() {
            if let Some(got) = got {
                if got != want {
                    self.errors.push(LinkError::Type {
                        rule: self.rule.to_string(),
                        detail: format!("argument {} of `{name}` must be {want}, found {got}", i + 1),
                    });
                }
            }
        }
        Some(ret)
    }

    fn term(&mut self, t: &Term) -> Option<ValueType> {
        match t {
            Term::Num(_) => Some(ValueType::Number),
            Term::Var(_) => Some(ValueType::Lanelet),
            Term::Call(name, args) => self.apply(name, args),
        }
    }

    fn formula(&mut self, f: &Formula) {
        match f {
            Formula::Quant { body, .. } => self.formula(body),
            Formula::Not(inner) => self.formula(inner),
            Formula::Bin { lhs, rhs, .. } => {
                self.formula(lhs);
                self.formula(rhs);
            }
            Formula::Pred { name, args } => {
                if let Some(ty) = self.apply(name, args) {
                    if ty != ValueType::Bool {
                        self.errors.push(LinkError::Type {
                            rule: self.rule.to_string(),
                            detail: format!("`{name}` returns {ty} and cannot be used as a predicate"),
                        });
                    }
                }
            }
            Formula::Cmp { op, lhs, rhs } => {
                for t in [lhs, rhs] {
                    if let Some(ty) = self.term(t) {
                        if ty != ValueType::Number {
                            self.errors.push(LinkError::Type {
                                rule: self.rule.to_string(),
                                detail: format!("operand `{t}` of `{}` must be number, found {ty}", op.symbol()),
                            });
                        }
                    }
                }
            }
        }
    }
}

/// Resolves every predicate and function application in `rules`.
pub fn link(
    rules: Vec<RuleDecl>,
    preds: PredicateSet,
    catalog: &BuiltinCatalog,
) -> Result<LinkedRuleset, Vec<LinkError>> {
    let mut errors = Vec::new();
    let mut resolution = BTreeMap::new();
    for r in &rules {
        let mut linker = Linker {
            preds: &preds,
            catalog,
            rule: &r.name,
            errors: Vec::new(),
            resolution: BTreeMap::new(),
        };
        linker.formula(&r.body);
        errors.extend(linker.errors);
        resolution.extend(linker.resolution);
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    Ok(LinkedRuleset {
        rules,
        preds,
        resolution,
    })
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("rules: {0}")]
    Rules(#[from] RuleError),
    #[error("predicates: {0}")]
    Predicates(#[from] crate::predicate_lang::PredicateLoadError),
    #[error("link: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    Link(Vec<LinkError>),
}

/// Parses, type-checks and links rule and predicate sources in one go.
pub fn load_linked(rules_text: &str, pdl_text: &str) -> Result<LinkedRuleset, LoadError> {
    let rules = parse_ruleset(rules_text)?;
    let preds = PredicateSet::from_pdl(pdl_text)?;
    link(rules, preds, &BuiltinCatalog::standard()).map_err(LoadError::Link)
}

/// Default ruleset rendered with `t`, linked against the shipped predicates.
pub fn default_linked(t: &Thresholds) -> LinkedRuleset {
    let rules = parse_ruleset(&default_ruleset_text(t)).expect("default ruleset parses");
    link(rules, default_predicates(), &BuiltinCatalog::standard()).expect("default ruleset links")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleStatus {
    Satisfied,
    Violated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundVar {
    pub var: String,
    pub lanelet: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub rule: String,
    pub binding: Vec<BoundVar>,
    #[serde(serialize_with = "serialize_witnesses")]
    pub witness: Vec<Witness>,
}

impl Violation {
    pub fn binding_ids(&self) -> Vec<u64> {
        self.binding.iter().map(|b| b.lanelet).collect()
    }

    pub fn witness_value(&self, call: &str) -> Option<f64> {
        self.witness.iter().find(|w| w.call == call).map(|w| w.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleReport {
    pub name: String,
    pub status: RuleStatus,
    /// Size of each enumerated prefix domain, outermost first.
    pub domain_sizes: Vec<usize>,
    pub bindings_checked: usize,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub rules: Vec<RuleReport>,
}

impl VerificationReport {
    pub fn rule(&self, name: &str) -> Option<&RuleReport> {
        self.rules.iter().find(|r| r.name == name)
    }

    pub fn is_satisfied(&self) -> bool {
        self.rules.iter().all(|r| r.status == RuleStatus::Satisfied)
    }

    pub fn violated_rules(&self) -> impl Iterator<Item = &str> {
        self.rules
            .iter()
            .filter(|r| r.status == RuleStatus::Violated)
            .map(|r| r.name.as_str())
    }

    pub fn violation_count(&self) -> usize {
        self.rules.iter().map(|r| r.violations.len()).sum()
    }
}

/// Finite values as JSON numbers; infinities and NaN as strings.
pub fn serialize_f64<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

fn serialize_witnesses<S: Serializer>(ws: &[Witness], s: S) -> Result<S::Ok, S::Error> {
    #[derive(Serialize)]
    struct W<'a> {
        call: &'a str,
        #[serde(serialize_with = "serialize_f64")]
        value: f64,
    }
    s.collect_seq(ws.iter().map(|w| W {
        call: &w.call,
        value: w.value,
    }))
}

pub(crate) fn domain_tuples(net: &LaneletNetwork, d: Domain) -> Vec<Vec<u64>> {
    let ids: Vec<u64> = net.ids().collect();
    match d {
        Domain::AllLanelets => ids.into_iter().map(|i| vec![i]).collect(),
        Domain::UnorderedPairs => {
            let mut out = Vec::with_capacity(ids.len() * ids.len().saturating_sub(1) / 2);
            for (i, &a) in ids.iter().enumerate() {
                for &b in &ids[i + 1..] {
                    out.push(vec![a, b]);
                }
            }
            out
        }
        Domain::SuccessorPairs => {
            let mut out = Vec::new();
            for l in net.lanelets() {
                let mut succ = l.successors.clone();
                succ.sort_unstable();
                out.extend(succ.into_iter().map(|s| vec![l.id, s]));
            }
            out
        }
    }
}

struct Evaluator<'a, 'n> {
    interp: Interpreter<'a, 'n>,
    resolution: &'a BTreeMap<String, Callee>,
    domains: BTreeMap<DomainKey, Vec<Vec<u64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum DomainKey {
    All,
    Pairs,
    Succ,
}

fn key(d: Domain) -> DomainKey {
    match d {
        Domain::AllLanelets => DomainKey::All,
        Domain::UnorderedPairs => DomainKey::Pairs,
        Domain::SuccessorPairs => DomainKey::Succ,
    }
}

type Env = Vec<(String, u64)>;

impl<'a, 'n> Evaluator<'a, 'n> {
    fn tuples(&self, d: Domain) -> &[Vec<u64>] {
        &self.domains[&key(d)]
    }

    fn lookup(env: &Env, var: &str) -> Result<u64, EvalError> {
        env.iter()
            .rev()
            .find(|(v, _)| v == var)
            .map(|(_, id)| *id)
            .ok_or_else(|| EvalError::Type(format!("unbound variable `{var}`")))
    }

    fn call(&self, name: &str, args: &[Term], env: &Env, log: &mut WitnessLog) -> Result<Value, EvalError> {
        let values = args
            .iter()
            .map(|a| self.term(a, env, log))
            .collect::<Result<Vec<_>, _>>()?;
        match self.resolution.get(name) {
            Some(Callee::Predicate(i)) => self.interp.call_predicate(*i, &values, log).map(Value::Bool),
            Some(Callee::Builtin(_)) => self.interp.call_named(name, &values, log),
            None => Err(EvalError::Unresolved(name.to_string())),
        }
    }

    fn term(&self, t: &Term, env: &Env, log: &mut WitnessLog) -> Result<Value, EvalError> {
        match t {
            Term::Num(n) => Ok(Value::Number(*n)),
            Term::Var(v) => Self::lookup(env, v).map(Value::Lanelet),
            Term::Call(name, args) => self.call(name, args, env, log),
        }
    }

    fn number(&self, t: &Term, env: &Env, log: &mut WitnessLog) -> Result<f64, EvalError> {
        match self.term(t, env, log)? {
            Value::Number(n) => Ok(n),
            other => Err(EvalError::Type(format!("`{t}` evaluated to {other}, expected a number"))),
        }
    }

    fn formula(&self, f: &Formula, env: &mut Env, log: &mut WitnessLog) -> Result<bool, EvalError> {
        match f {
            Formula::Quant { kind, binding, body } => {
                let want = *kind == QuantKind::Exists;
                for tuple in self.tuples(binding.domain) {
                    push(env, binding, tuple);
                    let r = self.formula(body, env, log);
                    env.truncate(env.len() - binding.vars.len());
                    if r? == want {
                        return Ok(want);
                    }
                }
                Ok(!want)
            }
            Formula::Not(inner) => Ok(!self.formula(inner, env, log)?),
            Formula::Bin { op, lhs, rhs } => {
                use crate::rule_lang::BinOp::*;
                let l = self.formula(lhs, env, log)?;
                Ok(match op {
                    And => l && self.formula(rhs, env, log)?,
                    Or => l || self.formula(rhs, env, log)?,
                    Implies => !l || self.formula(rhs, env, log)?,
                    Iff => l == self.formula(rhs, env, log)?,
                })
            }
            Formula::Pred { name, args } => match self.call(name, args, env, log)? {
                Value::Bool(b) => Ok(b),
                other => Err(EvalError::Type(format!("`{name}` returned {other}, expected bool"))),
            },
            Formula::Cmp { op, lhs, rhs } => {
                let a = self.number(lhs, env, log)?;
                let b = self.number(rhs, env, log)?;
                Ok(op.apply(a, b))
            }
        }
    }

    fn rule(&self, rule: &RuleDecl) -> Result<RuleReport, EvalError> {
        let mut prefix: Vec<&Binding> = Vec::new();
        let mut body = &rule.body;
        while let Formula::Quant {
            kind: QuantKind::Forall,
            binding,
            body: inner,
        } = body
        {
            prefix.push(binding);
            body = inner;
        }
        let domain_sizes: Vec<usize> = prefix.iter().map(|b| self.tuples(b.domain).len()).collect();
        let mut violations = Vec::new();
        let mut checked = 0usize;
        let mut env = Env::new();
        self.enumerate(rule, &prefix, body, &mut env, &mut checked, &mut violations)?;
        violations.sort_by_key(|v: &Violation| v.binding_ids());
        Ok(RuleReport {
            name: rule.name.clone(),
            status: if violations.is_empty() {
                RuleStatus::Satisfied
            } else {
                RuleStatus::Violated
            },
            domain_sizes,
            bindings_checked: checked,
            violations,
        })
    }

    fn enumerate(
        &self,
        rule: &RuleDecl,
        prefix: &[&Binding],
        body: &Formula,
        env: &mut Env,
        checked: &mut usize,
        out: &mut Vec<Violation>,
    ) -> Result<(), EvalError> {
        let Some((first, rest)) = prefix.split_first() else {
            *checked += 1;
            let mut log = WitnessLog::default();
            if !self.formula(body, env, &mut log)? {
                out.push(Violation {
                    rule: rule.name.clone(),
                    binding: env
                        .iter()
                        .map(|(var, id)| BoundVar {
                            var: var.clone(),
                            lanelet: *id,
                        })
                        .collect(),
                    witness: log.into_vec(),
                });
            }
            return Ok(());
        };
        for tuple in self.tuples(first.domain) {
            push(env, first, tuple);
            let r = self.enumerate(rule, rest, body, env, checked, out);
            env.truncate(env.len() - first.vars.len());
            r?;
        }
        Ok(())
    }
}

fn push(env: &mut Env, binding: &Binding, tuple: &[u64]) {
    for (v, id) in binding.vars.iter().zip(tuple) {
        env.push((v.clone(), *id));
    }
}

/// Evaluates every rule of `linked` on `net`. Rules appear in the report
/// sorted by name; violations within a rule by binding ids.
pub fn evaluate(
    linked: &LinkedRuleset,
    net: &LaneletNetwork,
    cfg: &EvalConfig,
) -> Result<VerificationReport, EvalError> {
    let geom = GeomContext::new(net, cfg.samples_per_centerline, cfg.overlap_radius);
    let domains = [
        (DomainKey::All, Domain::AllLanelets),
        (DomainKey::Pairs, Domain::UnorderedPairs),
        (DomainKey::Succ, Domain::SuccessorPairs),
    ]
    .into_iter()
    .map(|(k, d)| (k, domain_tuples(net, d)))
    .collect();
    let ev = Evaluator {
        interp: Interpreter::new(&linked.preds, &geom),
        resolution: &linked.resolution,
        domains,
    };
    let mut rules = linked
        .rules
        .iter()
        .map(|r| ev.rule(r))
        .collect::<Result<Vec<_>, _>>()?;
    rules.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(VerificationReport { rules })
}

/// Stable identifier of the report document layout.
pub const REPORT_FORMAT: &str = "mapverify.report/1";

#[derive(Debug, Clone, Serialize)]
pub struct ReportMeta {
    pub tool: &'static str,
    pub version: &'static str,
    pub map: String,
    pub rules_source: String,
    pub predicates_source: String,
}

impl ReportMeta {
    pub fn new(map: impl Into<String>, rules_source: impl Into<String>, predicates_source: impl Into<String>) -> Self {
        ReportMeta {
            tool: "mapverify",
            version: env!("CARGO_PKG_VERSION"),
            map: map.into(),
            rules_source: rules_source.into(),
            predicates_source: predicates_source.into(),
        }
    }
}

#[derive(Serialize)]
struct ReportSummary {
    rules: usize,
    satisfied: usize,
    violated: usize,
    violations: usize,
}

#[derive(Serialize)]
struct ReportDocument<'a> {
    format: &'static str,
    run: &'a ReportMeta,
    config: &'a EvalConfig,
    summary: ReportSummary,
    rules: &'a [RuleReport],
}

/// Renders the report document (pretty JSON, trailing newline).
pub fn report_to_json(report: &VerificationReport, meta: &ReportMeta, cfg: &EvalConfig) -> String {
    let violated = report.violated_rules().count();
    let doc = ReportDocument {
        format: REPORT_FORMAT,
        run: meta,
        config: cfg,
        summary: ReportSummary {
            rules: report.rules.len(),
            satisfied: report.rules.len() - violated,
            violated,
            violations: report.violation_count(),
        },
        rules: &report.rules,
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("report serializes");
    text.push('\n');
    text
}
