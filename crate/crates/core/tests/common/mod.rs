//! Generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use mapverify::map_model::{centerline, Lanelet, LaneletNetwork, Point3, Polyline3};
use mapverify::rule_lang::{BinOp, Binding, CmpOp, Domain, Formula, QuantKind, RuleDecl, Term};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn asset(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("assets").join(rel)
}

pub fn assets_matching(dir: &str, prefix: &str) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(asset(dir))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_str().unwrap().starts_with(prefix))
        .collect();
    out.sort();
    out
}

// ---------------------------------------------------------------------------
// Random rule ASTs

const PRED_NAMES: &[&str] = &["p", "is_ok", "steep", "near_x", "q2"];
const FUN_NAMES: &[&str] = &["f", "grade_max", "gap", "h_3"];
const DOMAINS: [Domain; 3] = [Domain::AllLanelets, Domain::UnorderedPairs, Domain::SuccessorPairs];

fn random_number<R: Rng>(rng: &mut R) -> f64 {
    match rng.gen_range(0..4) {
        0 => rng.gen_range(0..100) as f64,
        1 => rng.gen_range(0..1000) as f64 / 100.0,
        2 => rng.gen::<f64>() * 50.0,
        _ => [0.0, 0.15, 4.5, 1e-7, 123456.789][rng.gen_range(0..5)],
    }
}

fn random_term<R: Rng>(rng: &mut R, scope: &[String], depth: usize) -> Term {
    match rng.gen_range(0..3) {
        0 if !scope.is_empty() => Term::Var(scope.choose(rng).unwrap().clone()),
        1 if depth > 1 => {
            let n = rng.gen_range(0..3);
            let name = FUN_NAMES.choose(rng).unwrap().to_string();
            Term::Call(name, (0..n).map(|_| random_term(rng, scope, depth - 1)).collect())
        }
        _ => Term::Num(random_number(rng)),
    }
}

fn fresh(counter: &mut usize) -> String {
    *counter += 1;
    format!("v{counter}")
}

fn random_binding<R: Rng>(rng: &mut R, counter: &mut usize) -> Binding {
    let domain = *DOMAINS.choose(rng).unwrap();
    if domain == Domain::AllLanelets {
        Binding::single(fresh(counter))
    } else {
        Binding::pair(fresh(counter), fresh(counter), domain)
    }
}

/// Syntactically arbitrary formula of at most `depth` levels with every
/// variable bound. Names need not resolve; this feeds the printer and parser.
pub fn random_formula<R: Rng>(rng: &mut R, depth: usize, scope: &mut Vec<String>, counter: &mut usize) -> Formula {
    let leaf = depth <= 1 || rng.gen_bool(0.2);
    if leaf {
        return if rng.gen_bool(0.5) {
            let n = rng.gen_range(0..4);
            Formula::Pred {
                name: PRED_NAMES.choose(rng).unwrap().to_string(),
                args: (0..n).map(|_| random_term(rng, scope, 3)).collect(),
            }
        } else {
            Formula::Cmp {
                op: *CmpOp::ALL.choose(rng).unwrap(),
                lhs: random_term(rng, scope, 3),
                rhs: random_term(rng, scope, 3),
            }
        };
    }
    match rng.gen_range(0..6) {
        0 => Formula::not(random_formula(rng, depth - 1, scope, counter)),
        1 => {
            let kind = if rng.gen_bool(0.5) { QuantKind::Forall } else { QuantKind::Exists };
            let b = random_binding(rng, counter);
            let before = scope.len();
            scope.extend(b.vars.iter().cloned());
            let body = random_formula(rng, depth - 1, scope, counter);
            scope.truncate(before);
            Formula::quant(kind, b, body)
        }
        _ => {
            let op = [BinOp::And, BinOp::Or, BinOp::Implies, BinOp::Iff][rng.gen_range(0..4)];
            let l = random_formula(rng, depth - 1, scope, counter);
            let r = random_formula(rng, depth - 1, scope, counter);
            Formula::bin(op, l, r)
        }
    }
}

pub fn formula_depth(f: &Formula) -> usize {
    match f {
        Formula::Quant { body, .. } => 1 + formula_depth(body),
        Formula::Not(inner) => 1 + formula_depth(inner),
        Formula::Bin { lhs, rhs, .. } => 1 + formula_depth(lhs).max(formula_depth(rhs)),
        Formula::Pred { .. } | Formula::Cmp { .. } => 1,
    }
}

// ---------------------------------------------------------------------------
// Random well-typed rules over the builtins and the shipped predicates

fn random_atom<R: Rng>(rng: &mut R, scope: &[String]) -> Formula {
    let v = |rng: &mut R| Term::Var(scope.choose(rng).unwrap().clone());
    let call1 = |rng: &mut R, name: &str| Term::Call(name.into(), vec![v(rng)]);
    let call2 = |rng: &mut R, name: &str| Term::Call(name.into(), vec![v(rng), v(rng)]);
    let cmp = |rng: &mut R, lhs: Term, rhs: Term| Formula::Cmp {
        op: *CmpOp::ALL.choose(rng).unwrap(),
        lhs,
        rhs,
    };
    match rng.gen_range(0..10) {
        0 => {
            let t = Term::Num(rng.gen_range(0..30) as f64 / 100.0);
            let l = call1(rng, "grade_max");
            cmp(rng, l, t)
        }
        1 => {
            let t = Term::Num(rng.gen_range(0..20) as f64 / 10.0);
            let l = call2(rng, "elev_step");
            cmp(rng, l, t)
        }
        2 => {
            let t = Term::Num(rng.gen_range(0..80) as f64 / 10.0);
            let l = call2(rng, "min_clearance");
            cmp(rng, l, t)
        }
        3 => {
            let l = call1(rng, "start_z");
            let r = call1(rng, "end_z");
            cmp(rng, l, r)
        }
        4 => {
            let t = Term::Num(rng.gen_range(5..40) as f64);
            let l = call1(rng, "length");
            cmp(rng, l, t)
        }
        5 => Formula::Pred {
            name: "overlaps_xy".into(),
            args: vec![v(rng), v(rng)],
        },
        6 => Formula::Pred {
            name: "is_successor".into(),
            args: vec![v(rng), v(rng)],
        },
        7 => Formula::Pred {
            name: "is_grade_within_limit".into(),
            args: vec![v(rng), Term::Num(rng.gen_range(0..30) as f64 / 100.0)],
        },
        8 => Formula::Pred {
            name: "elevation_step_ok".into(),
            args: vec![v(rng), v(rng), Term::Num(rng.gen_range(0..20) as f64 / 10.0)],
        },
        _ => Formula::Pred {
            name: "clearance_ok".into(),
            args: vec![v(rng), v(rng), Term::Num(1.0), Term::Num(rng.gen_range(0..80) as f64 / 10.0)],
        },
    }
}

fn random_body<R: Rng>(rng: &mut R, depth: usize, scope: &mut Vec<String>, counter: &mut usize) -> Formula {
    if depth <= 1 || rng.gen_bool(0.25) {
        return random_atom(rng, scope);
    }
    match rng.gen_range(0..5) {
        0 => Formula::not(random_body(rng, depth - 1, scope, counter)),
        1 => {
            let kind = if rng.gen_bool(0.5) { QuantKind::Forall } else { QuantKind::Exists };
            let b = random_binding(rng, counter);
            let before = scope.len();
            scope.extend(b.vars.iter().cloned());
            let body = random_body(rng, depth - 1, scope, counter);
            scope.truncate(before);
            Formula::quant(kind, b, body)
        }
        _ => {
            let op = [BinOp::And, BinOp::Or, BinOp::Implies, BinOp::Iff][rng.gen_range(0..4)];
            let l = random_body(rng, depth - 1, scope, counter);
            let r = random_body(rng, depth - 1, scope, counter);
            Formula::bin(op, l, r)
        }
    }
}

/// A linkable rule of at most `depth` levels. The top is one or two
/// quantifiers (at least one, so atoms have variables to use).
pub fn random_rule<R: Rng>(rng: &mut R, name: &str, depth: usize) -> RuleDecl {
    assert!(depth >= 2);
    let mut counter = 0;
    let mut scope = Vec::new();
    let n_top = if depth >= 3 && rng.gen_bool(0.4) { 2 } else { 1 };
    let mut binders = Vec::new();
    for _ in 0..n_top {
        let kind = if rng.gen_bool(0.75) { QuantKind::Forall } else { QuantKind::Exists };
        let b = random_binding(rng, &mut counter);
        scope.extend(b.vars.iter().cloned());
        binders.push((kind, b));
    }
    let mut body = random_body(rng, depth - n_top, &mut scope, &mut counter);
    for (kind, b) in binders.into_iter().rev() {
        body = Formula::quant(kind, b, body);
    }
    RuleDecl {
        name: name.to_string(),
        body,
    }
}

// ---------------------------------------------------------------------------
// Random networks

fn straight(x0: f64, y0: f64, hdg: f64, len: f64, z0: f64, z1: f64, offset: f64, vertices: usize) -> Polyline3 {
    let (nx, ny) = (-hdg.sin() * offset, hdg.cos() * offset);
    let pts = (0..vertices)
        .map(|i| {
            let t = i as f64 / (vertices - 1) as f64;
            Point3::new(x0 + nx + hdg.cos() * len * t, y0 + ny + hdg.sin() * len * t, z0 + (z1 - z0) * t)
        })
        .collect();
    Polyline3::new(pts).unwrap()
}

/// 1..=`max` straight lanelets scattered over a small area so that some
/// cross in plan view, with random grades, heights and successor links.
pub fn random_network<R: Rng>(rng: &mut R, max: usize) -> LaneletNetwork {
    let n = rng.gen_range(1..=max);
    let mut ids: Vec<u64> = (1..=20).collect();
    ids.shuffle(rng);
    ids.truncate(n);
    let lanelets = ids
        .iter()
        .map(|&id| {
            let (x0, y0) = (rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0));
            let hdg = rng.gen_range(0.0..std::f64::consts::TAU);
            let len = rng.gen_range(10.0..40.0);
            let z0 = rng.gen_range(0.0..8.0);
            let z1 = z0 + len * rng.gen_range(-0.3..0.3);
            let tilt = rng.gen_range(-0.2..0.2);
            let left = straight(x0, y0, hdg, len, z0 + tilt, z1 + tilt, 1.75, rng.gen_range(2..6));
            let right = straight(x0, y0, hdg, len, z0 - tilt, z1 - tilt, -1.75, rng.gen_range(2..6));
            let succ = ids.iter().copied().filter(|&o| o != id && rng.gen_bool(0.3)).collect();
            Lanelet::new(id, left, right, succ, Vec::new()).unwrap()
        })
        .collect();
    LaneletNetwork::from_successors(lanelets).unwrap()
}

// ---------------------------------------------------------------------------
// Naive substitute-and-reduce evaluator

#[derive(Debug, Clone)]
enum G {
    Num(f64),
    Id(u64),
    Var(String),
    Call(String, Vec<G>),
}

#[derive(Debug, Clone)]
enum GF {
    Quant(QuantKind, Binding, Box<GF>),
    Not(Box<GF>),
    Bin(BinOp, Box<GF>, Box<GF>),
    Pred(String, Vec<G>),
    Cmp(CmpOp, G, G),
}

fn lift_term(t: &Term) -> G {
    match t {
        Term::Num(n) => G::Num(*n),
        Term::Var(v) => G::Var(v.clone()),
        Term::Call(f, a) => G::Call(f.clone(), a.iter().map(lift_term).collect()),
    }
}

fn lift(f: &Formula) -> GF {
    match f {
        Formula::Quant { kind, binding, body } => GF::Quant(*kind, binding.clone(), Box::new(lift(body))),
        Formula::Not(i) => GF::Not(Box::new(lift(i))),
        Formula::Bin { op, lhs, rhs } => GF::Bin(*op, Box::new(lift(lhs)), Box::new(lift(rhs))),
        Formula::Pred { name, args } => GF::Pred(name.clone(), args.iter().map(lift_term).collect()),
        Formula::Cmp { op, lhs, rhs } => GF::Cmp(*op, lift_term(lhs), lift_term(rhs)),
    }
}

fn subst_term(t: &G, var: &str, id: u64) -> G {
    match t {
        G::Var(v) if v == var => G::Id(id),
        G::Call(f, a) => G::Call(f.clone(), a.iter().map(|x| subst_term(x, var, id)).collect()),
        other => other.clone(),
    }
}

/// Replaces free occurrences of `var` by the lanelet constant `id`.
fn subst(f: &GF, var: &str, id: u64) -> GF {
    match f {
        GF::Quant(k, b, body) => {
            if b.vars.iter().any(|v| v == var) {
                f.clone()
            } else {
                GF::Quant(*k, b.clone(), Box::new(subst(body, var, id)))
            }
        }
        GF::Not(i) => GF::Not(Box::new(subst(i, var, id))),
        GF::Bin(op, l, r) => GF::Bin(*op, Box::new(subst(l, var, id)), Box::new(subst(r, var, id))),
        GF::Pred(n, a) => GF::Pred(n.clone(), a.iter().map(|x| subst_term(x, var, id)).collect()),
        GF::Cmp(op, l, r) => GF::Cmp(*op, subst_term(l, var, id), subst_term(r, var, id)),
    }
}

fn subst_all(f: &GF, vars: &[String], ids: &[u64]) -> GF {
    vars.iter().zip(ids).fold(f.clone(), |acc, (v, id)| subst(&acc, v, *id))
}

/// Geometry settings used by the oracle.
pub struct Naive<'a> {
    pub net: &'a LaneletNetwork,
    pub samples: usize,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy)]
enum Val {
    Num(f64),
    Bool(bool),
}

impl Naive<'_> {
    fn domain(&self, d: Domain) -> Vec<Vec<u64>> {
        let mut ids: Vec<u64> = self.net.lanelets().map(|l| l.id).collect();
        ids.sort_unstable();
        let mut out = Vec::new();
        for &a in &ids {
            for &b in &ids {
                let keep = match d {
                    Domain::AllLanelets => a == b,
                    Domain::UnorderedPairs => a < b,
                    Domain::SuccessorPairs => self.net.get(a).unwrap().successors.contains(&b),
                };
                if keep {
                    out.push(if d == Domain::AllLanelets { vec![a] } else { vec![a, b] });
                }
            }
        }
        out
    }

    fn id(t: &G) -> u64 {
        match t {
            G::Id(i) => *i,
            other => panic!("expected a lanelet constant, got {other:?}"),
        }
    }

    fn num(&self, t: &G) -> f64 {
        match self.term(t) {
            Val::Num(n) => n,
            Val::Bool(_) => panic!("expected a number from {t:?}"),
        }
    }

    fn line(&self, id: u64) -> Polyline3 {
        centerline(self.net.get(id).unwrap(), self.samples)
    }

    /// Smallest vertical gap over sample pairs within the radius, by
    /// direct scan; `None` when nothing is within reach or `a == b`.
    fn gap(&self, a: u64, b: u64) -> Option<f64> {
        if a == b {
            return None;
        }
        brute_force_gap(&self.line(a), &self.line(b), self.radius)
    }

    fn term(&self, t: &G) -> Val {
        let G::Call(name, args) = t else {
            return match t {
                G::Num(n) => Val::Num(*n),
                other => panic!("not a value: {other:?}"),
            };
        };
        let a = |i: usize| Self::id(&args[i]);
        match name.as_str() {
            "grade_max" => {
                let pts = self.line(a(0)).points().to_vec();
                let g = pts
                    .windows(2)
                    .map(|w| (w[1].z - w[0].z).abs() / (w[1].x - w[0].x).hypot(w[1].y - w[0].y))
                    .fold(0.0, f64::max);
                Val::Num(g)
            }
            "elev_step" => Val::Num((self.line(a(0)).last().z - self.line(a(1)).first().z).abs()),
            "min_clearance" => Val::Num(self.gap(a(0), a(1)).unwrap_or(f64::INFINITY)),
            "length" => {
                let pts = self.line(a(0)).points().to_vec();
                Val::Num(pts.windows(2).map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y)).sum())
            }
            "start_z" => Val::Num(self.line(a(0)).first().z),
            "end_z" => Val::Num(self.line(a(0)).last().z),
            "overlaps_xy" => Val::Bool(self.gap(a(0), a(1)).is_some()),
            "is_successor" => Val::Bool(self.net.get(a(0)).unwrap().successors.contains(&a(1))),
            "is_grade_within_limit" => {
                let g = self.num(&G::Call("grade_max".into(), vec![args[0].clone()]));
                Val::Bool(g <= self.num(&args[1]))
            }
            "elevation_step_ok" => {
                let s = self.num(&G::Call("elev_step".into(), args[..2].to_vec()));
                Val::Bool(s <= self.num(&args[2]))
            }
            "clearance_ok" => {
                let pair = args[..2].to_vec();
                let overlaps = matches!(self.term(&G::Call("overlaps_xy".into(), pair.clone())), Val::Bool(true));
                let gap = self.num(&G::Call("min_clearance".into(), pair));
                Val::Bool(!overlaps || gap <= self.num(&args[2]) || gap >= self.num(&args[3]))
            }
            other => panic!("oracle does not know `{other}`"),
        }
    }

    /// Evaluates a closed formula. Quantifiers expand into every
    /// substituted instance before combining.
    fn reduce(&self, f: &GF) -> bool {
        match f {
            GF::Quant(kind, b, body) => {
                let values: Vec<bool> = self
                    .domain(b.domain)
                    .iter()
                    .map(|t| self.reduce(&subst_all(body, &b.vars, t)))
                    .collect();
                match kind {
                    QuantKind::Forall => values.iter().all(|v| *v),
                    QuantKind::Exists => values.iter().any(|v| *v),
                }
            }
            GF::Not(i) => !self.reduce(i),
            GF::Bin(op, l, r) => {
                let (l, r) = (self.reduce(l), self.reduce(r));
                match op {
                    BinOp::And => l && r,
                    BinOp::Or => l || r,
                    BinOp::Implies => !l || r,
                    BinOp::Iff => l == r,
                }
            }
            GF::Pred(name, args) => match self.term(&G::Call(name.clone(), args.clone())) {
                Val::Bool(b) => b,
                Val::Num(_) => panic!("`{name}` is not a predicate"),
            },
            GF::Cmp(op, l, r) => {
                let (l, r) = (self.num(l), self.num(r));
                match op {
                    CmpOp::Lt => l < r,
                    CmpOp::Le => l <= r,
                    CmpOp::Gt => l > r,
                    CmpOp::Ge => l >= r,
                    CmpOp::Eq => l == r,
                    CmpOp::Ne => l != r,
                }
            }
        }
    }

    /// Falsifying tuples of the leading universal prefix, or one empty
    /// tuple when a rule without such a prefix is false.
    pub fn violations(&self, rule: &RuleDecl) -> BTreeSet<Vec<u64>> {
        let mut prefix = Vec::new();
        let mut body = lift(&rule.body);
        while let GF::Quant(QuantKind::Forall, b, inner) = body {
            prefix.push(b);
            body = *inner;
        }
        let mut assignments: Vec<(Vec<String>, Vec<u64>)> = vec![(Vec::new(), Vec::new())];
        for b in &prefix {
            let tuples = self.domain(b.domain);
            assignments = assignments
                .into_iter()
                .flat_map(|(vars, ids)| {
                    tuples.iter().map(move |t| {
                        let mut v = vars.clone();
                        v.extend(b.vars.iter().cloned());
                        let mut i = ids.clone();
                        i.extend(t.iter().copied());
                        (v, i)
                    })
                })
                .collect();
        }
        assignments
            .into_iter()
            .filter(|(vars, ids)| !self.reduce(&subst_all(&body, vars, ids)))
            .map(|(_, ids)| ids)
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Clearance oracle

/// Minimum |dz| over all sample pairs of `a` and `b` within `radius` in
/// plan view, scanning every pair.
pub fn brute_force_gap(a: &Polyline3, b: &Polyline3, radius: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    for p in a.points() {
        for q in b.points() {
            if (p.x - q.x).hypot(p.y - q.y) <= radius {
                let g = (p.z - q.z).abs();
                best = Some(best.map_or(g, |b: f64| b.min(g)));
            }
        }
    }
    best
}
