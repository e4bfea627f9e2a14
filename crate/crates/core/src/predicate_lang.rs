//! Predicate definition language.
//!
//! Predicates compose and threshold the fixed builtin geometric functions:
//!
//! ```text
//! pred is_grade_within_limit(l: lanelet, g: number) := grade_max(l) <= g;
//! ```
//!
//! The language has no loops and no recursion. A definition may call
//! builtins and predicates registered before it, nothing else, so every
//! accepted predicate terminates.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::sync::Mutex;

use serde::Serialize;
use thiserror::Error;

use crate::map_model::{centerline_overlap, centerline_step, LaneletNetwork, OverlapResult, Polyline3};
use crate::rule_lang::CmpOp;
use crate::syntax::{Cursor, Pos, SyntaxError, Tok};

const RESERVED: &[&str] = &["pred", "lanelet", "number"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    Lanelet,
    Number,
    Bool,
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueType::Lanelet => "lanelet",
            ValueType::Number => "number",
            ValueType::Bool => "bool",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub ty: ValueType,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PdlExpr {
    And(Box<PdlExpr>, Box<PdlExpr>),
    Or(Box<PdlExpr>, Box<PdlExpr>),
    Not(Box<PdlExpr>),
    Cmp(CmpOp, Box<PdlExpr>, Box<PdlExpr>),
    Call(String, Vec<PdlExpr>),
    Param(String),
    Num(f64),
}

impl PdlExpr {
    fn precedence(&self) -> u8 {
        match self {
            PdlExpr::Or(..) => 1,
            PdlExpr::And(..) => 2,
            PdlExpr::Not(_) => 3,
            PdlExpr::Cmp(..) => 4,
            _ => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredicateDef {
    pub name: String,
    pub params: Vec<Param>,
    pub body: PdlExpr,
}

impl PredicateDef {
    pub fn signature(&self) -> Vec<ValueType> {
        self.params.iter().map(|p| p.ty).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Builtin {
    GradeMax,
    ElevStep,
    MinClearance,
    Length,
    StartZ,
    EndZ,
    OverlapsXy,
    IsSuccessor,
}

impl Builtin {
    pub const ALL: [Builtin; 8] = [
        Builtin::GradeMax,
        Builtin::ElevStep,
        Builtin::MinClearance,
        Builtin::Length,
        Builtin::StartZ,
        Builtin::EndZ,
        Builtin::OverlapsXy,
        Builtin::IsSuccessor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::GradeMax => "grade_max",
            Builtin::ElevStep => "elev_step",
            Builtin::MinClearance => "min_clearance",
            Builtin::Length => "length",
            Builtin::StartZ => "start_z",
            Builtin::EndZ => "end_z",
            Builtin::OverlapsXy => "overlaps_xy",
            Builtin::IsSuccessor => "is_successor",
        }
    }

    pub fn params(self) -> &'static [ValueType] {
        use ValueType::Lanelet;
        match self {
            Builtin::GradeMax | Builtin::Length | Builtin::StartZ | Builtin::EndZ => &[Lanelet],
            _ => &[Lanelet, Lanelet],
        }
    }

    pub fn returns(self) -> ValueType {
        match self {
            Builtin::OverlapsXy | Builtin::IsSuccessor => ValueType::Bool,
            _ => ValueType::Number,
        }
    }

    pub fn doc(self) -> &'static str {
        match self {
            Builtin::GradeMax => "largest |dz|/dxy over the centerline segments of l",
            Builtin::ElevStep => "|end z of a's centerline - start z of b's centerline| in meters",
            Builtin::MinClearance => "smallest vertical gap where the centerlines of a and b overlap in xy; +inf when they do not overlap",
            Builtin::Length => "horizontal length of l's centerline in meters",
            Builtin::StartZ => "elevation of the first centerline point of l",
            Builtin::EndZ => "elevation of the last centerline point of l",
            Builtin::OverlapsXy => "true when some centerline samples of a and b lie within the overlap radius in xy",
            Builtin::IsSuccessor => "true when b is listed as a successor of a",
        }
    }

    pub fn from_name(name: &str) -> Option<Builtin> {
        Builtin::ALL.into_iter().find(|b| b.name() == name)
    }
}

/// The fixed table of builtin functions predicates may call.
#[derive(Debug, Clone, Copy, Default)]
pub struct BuiltinCatalog;

impl BuiltinCatalog {
    pub fn standard() -> Self {
        BuiltinCatalog
    }

    pub fn lookup(&self, name: &str) -> Option<Builtin> {
        Builtin::from_name(name)
    }

    pub fn builtins(&self) -> impl Iterator<Item = Builtin> {
        Builtin::ALL.into_iter()
    }

    /// Signature listing with one-line docs, in PDL comment-free form.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        for b in self.builtins() {
            let params: Vec<String> = b.params().iter().map(|t| t.to_string()).collect();
            let _ = writeln!(out, "builtin {}({}) -> {}: {}", b.name(), params.join(", "), b.returns(), b.doc());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PdlError {
    #[error("syntax error: {0}")]
    Syntax(#[from] SyntaxError),
    #[error("{pos}: predicate `{pred}` declares parameter `{param}` twice")]
    DuplicateParam { pred: String, param: String, pos: Pos },
}

struct Parser {
    cur: Cursor,
}

/// Parses a PDL file into definitions, in source order.
pub fn parse_pdl(text: &str) -> Result<Vec<PredicateDef>, PdlError> {
    let mut p = Parser { cur: Cursor::new(text)? };
    let mut defs = Vec::new();
    while !p.cur.at_eof() {
        defs.push(p.def()?);
    }
    Ok(defs)
}

impl Parser {
    fn def(&mut self) -> Result<PredicateDef, PdlError> {
        if !self.cur.is_word("pred") {
            return Err(self.cur.error(&["`pred`", "end of input"]).into());
        }
        self.cur.bump();
        let (name, _) = self.cur.expect_ident("predicate name", RESERVED)?;
        self.cur.expect_sym("(")?;
        let mut params: Vec<Param> = Vec::new();
        if !self.cur.eat_sym(")") {
            loop {
                let (pname, pos) = self.cur.expect_ident("parameter name", RESERVED)?;
                self.cur.expect_sym(":")?;
                let ty = if self.cur.is_word("lanelet") {
                    ValueType::Lanelet
                } else if self.cur.is_word("number") {
                    ValueType::Number
                } else {
                    return Err(self.cur.error(&["`lanelet`", "`number`"]).into());
                };
                self.cur.bump();
                if params.iter().any(|p| p.name == pname) {
                    return Err(PdlError::DuplicateParam { pred: name, param: pname, pos });
                }
                params.push(Param { name: pname, ty });
                if self.cur.eat_sym(")") {
                    break;
                }
                if !self.cur.eat_sym(",") {
                    return Err(self.cur.error(&["`,`", "`)`"]).into());
                }
            }
        }
        self.cur.expect_sym(":=")?;
        let body = self.or()?;
        self.cur.expect_sym(";")?;
        Ok(PredicateDef { name, params, body })
    }

    fn or(&mut self) -> Result<PdlExpr, PdlError> {
        let mut lhs = self.and()?;
        while self.cur.eat_sym("||") {
            lhs = PdlExpr::Or(Box::new(lhs), Box::new(self.and()?));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<PdlExpr, PdlError> {
        let mut lhs = self.unary()?;
        while self.cur.eat_sym("&&") {
            lhs = PdlExpr::And(Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<PdlExpr, PdlError> {
        self.cur.enter()?;
        let e = if self.cur.eat_sym("!") {
            self.unary().map(|e| PdlExpr::Not(Box::new(e)))
        } else {
            self.cmp()
        };
        self.cur.leave();
        e
    }

    fn cmp(&mut self) -> Result<PdlExpr, PdlError> {
        let lhs = self.primary()?;
        let op = match self.cur.peek().tok {
            Tok::Sym(s) => CmpOp::from_symbol(s),
            _ => None,
        };
        match op {
            Some(op) => {
                self.cur.bump();
                let rhs = self.primary()?;
                Ok(PdlExpr::Cmp(op, Box::new(lhs), Box::new(rhs)))
            }
            None => Ok(lhs),
        }
    }

    fn primary(&mut self) -> Result<PdlExpr, PdlError> {
        self.cur.enter()?;
        let e = self.primary_inner();
        self.cur.leave();
        e
    }

    fn primary_inner(&mut self) -> Result<PdlExpr, PdlError> {
        if self.cur.eat_sym("(") {
            let e = self.or()?;
            self.cur.expect_sym(")")?;
            return Ok(e);
        }
        match self.cur.peek().tok.clone() {
            Tok::Number(n) => {
                self.cur.bump();
                Ok(PdlExpr::Num(n))
            }
            Tok::Ident(_) => {
                let (name, _) = self.cur.expect_ident("name", RESERVED)?;
                if !self.cur.eat_sym("(") {
                    return Ok(PdlExpr::Param(name));
                }
                let mut args = Vec::new();
                if self.cur.eat_sym(")") {
                    return Ok(PdlExpr::Call(name, args));
                }
                loop {
                    args.push(self.or()?);
                    if self.cur.eat_sym(")") {
                        return Ok(PdlExpr::Call(name, args));
                    }
                    if !self.cur.eat_sym(",") {
                        return Err(self.cur.error(&["`,`", "`)`"]).into());
                    }
                }
            }
            _ => Err(self
                .cur
                .error(&["number", "parameter", "function call", "`(`", "`!`"])
                .into()),
        }
    }
}

fn write_expr(out: &mut String, e: &PdlExpr) {
    let wrap = |out: &mut String, inner: &PdlExpr, parens: bool| {
        if parens {
            out.push('(');
            write_expr(out, inner);
            out.push(')');
        } else {
            write_expr(out, inner);
        }
    };
    match e {
        PdlExpr::Or(a, b) | PdlExpr::And(a, b) => {
            let p = e.precedence();
            wrap(out, a, a.precedence() < p);
            out.push_str(if p == 1 { " || " } else { " && " });
            wrap(out, b, b.precedence() <= p);
        }
        PdlExpr::Not(inner) => {
            out.push('!');
            wrap(out, inner, inner.precedence() < 3);
        }
        PdlExpr::Cmp(op, a, b) => {
            wrap(out, a, a.precedence() < 5);
            let _ = write!(out, " {} ", op.symbol());
            wrap(out, b, b.precedence() < 5);
        }
        PdlExpr::Call(name, args) => {
            out.push_str(name);
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_expr(out, a);
            }
            out.push(')');
        }
        PdlExpr::Param(p) => out.push_str(p),
        PdlExpr::Num(n) => {
            let _ = write!(out, "{n}");
        }
    }
}

pub fn print_expr(e: &PdlExpr) -> String {
    let mut out = String::new();
    write_expr(&mut out, e);
    out
}

pub fn print_def(d: &PredicateDef) -> String {
    let params: Vec<String> = d.params.iter().map(|p| format!("{}: {}", p.name, p.ty)).collect();
    format!("pred {}({}) := {};", d.name, params.join(", "), print_expr(&d.body))
}

/// One type-checking complaint about one predicate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub predicate: String,
    pub reason: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "predicate `{}`: {}", self.predicate, self.reason)
    }
}

/// What a call site may resolve to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Callee {
    Builtin(Builtin),
    /// Index into the owning [`PredicateSet`].
    Predicate(usize),
}

/// Registered predicates in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredicateSet {
    defs: Vec<PredicateDef>,
    index: BTreeMap<String, usize>,
}

impl PredicateSet {
    pub fn new() -> Self {
        PredicateSet::default()
    }

    /// Type-checks `defs` against what is already registered and appends
    /// them on success.
    pub fn register(&mut self, defs: Vec<PredicateDef>) -> Result<(), Vec<Diagnostic>> {
        typecheck(&defs, &BuiltinCatalog::standard(), &self.defs)?;
        for d in defs {
            self.index.insert(d.name.clone(), self.defs.len());
            self.defs.push(d);
        }
        Ok(())
    }

    /// Parses and registers a PDL file.
    pub fn from_pdl(text: &str) -> Result<Self, PredicateLoadError> {
        let defs = parse_pdl(text)?;
        let mut set = PredicateSet::new();
        set.register(defs).map_err(PredicateLoadError::Typecheck)?;
        Ok(set)
    }

    pub fn get(&self, name: &str) -> Option<(usize, &PredicateDef)> {
        self.index.get(name).map(|&i| (i, &self.defs[i]))
    }

    pub fn by_index(&self, i: usize) -> &PredicateDef {
        &self.defs[i]
    }

    pub fn defs(&self) -> &[PredicateDef] {
        &self.defs
    }

    pub fn len(&self) -> usize {
        self.defs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defs.is_empty()
    }

    pub fn resolve(&self, name: &str) -> Option<Callee> {
        Builtin::from_name(name)
            .map(Callee::Builtin)
            .or_else(|| self.index.get(name).map(|&i| Callee::Predicate(i)))
    }

    pub fn to_pdl(&self) -> String {
        self.defs.iter().map(|d| print_def(d) + "\n").collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PredicateLoadError {
    #[error(transparent)]
    Parse(#[from] PdlError),
    #[error("{}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Typecheck(Vec<Diagnostic>),
}

struct Checker<'a> {
    catalog: &'a BuiltinCatalog,
    /// Callable predicate signatures, keyed by name.
    visible: HashMap<&'a str, Vec<ValueType>>,
    /// Names defined later in the same batch, for clearer messages.
    later: Vec<&'a str>,
    current: &'a PredicateDef,
    diags: Vec<Diagnostic>,
}

impl<'a> Checker<'a> {
    fn complain(&mut self, reason: String) {
        self.diags.push(Diagnostic {
            predicate: self.current.name.clone(),
            reason,
        });
    }

    /// Infers the type of `e`; `None` after a reported error.
    fn infer(&mut self, e: &PdlExpr) -> Option<ValueType> {
        match e {
            PdlExpr::Num(_) => Some(ValueType::Number),
            PdlExpr::Param(name) => match self.current.params.iter().find(|p| &p.name == name) {
                Some(p) => Some(p.ty),
                None => {
                    self.complain(format!("unknown parameter `{name}`"));
                    None
                }
            },
            PdlExpr::Not(inner) => {
                self.expect(inner, ValueType::Bool, "operand of `!`");
                Some(ValueType::Bool)
            }
            PdlExpr::And(a, b) | PdlExpr::Or(a, b) => {
                let op = if matches!(e, PdlExpr::And(..)) { "&&" } else { "||" };
                self.expect(a, ValueType::Bool, &format!("left operand of `{op}`"));
                self.expect(b, ValueType::Bool, &format!("right operand of `{op}`"));
                Some(ValueType::Bool)
            }
            PdlExpr::Cmp(op, a, b) => {
                let what = format!("operand of `{}`", op.symbol());
                self.expect(a, ValueType::Number, &what);
                self.expect(b, ValueType::Number, &what);
                Some(ValueType::Bool)
            }
            PdlExpr::Call(name, args) => self.call(name, args),
        }
    }

    fn expect(&mut self, e: &PdlExpr, want: ValueType, what: &str) {
        if let Some(got) = self.infer(e) {
            if got != want {
                self.complain(format!("{what} must be {want}, found {got} `{}`", print_expr(e)));
            }
        }
    }

    fn call(&mut self, name: &str, args: &[PdlExpr]) -> Option<ValueType> {
        let (params, ret): (Vec<ValueType>, ValueType) = if let Some(b) = self.catalog.lookup(name) {
            (b.params().to_vec(), b.returns())
        } else if let Some(sig) = self.visible.get(name) {
            (sig.clone(), ValueType::Bool)
        } else {
            let reason = if name == self.current.name {
                format!("recursive call to `{name}` is not allowed")
            } else if self.later.contains(&name) {
                format!("`{name}` is defined later; predicates may only call earlier definitions")
            } else {
                format!("unknown function `{name}`")
            };
            self.complain(reason);
            for a in args {
                self.infer(a);
            }
            return None;
        };
        if params.len() != args.len() {
            self.complain(format!(
                "arity mismatch: `{name}` takes {} argument(s), got {}",
                params.len(),
                args.len()
            ));
            for a in args {
                self.infer(a);
            }
            return Some(ret);
        }
        for (i, (a, want)) in args.iter().zip(params).enumerate() {
            self.expect(a, want, &format!("argument {} of `{name}`", i + 1));
        }
        Some(ret)
    }
}

/// Checks arity, argument and body types, name collisions and call order.
/// Every violation is reported, not just the first.
pub fn typecheck(
    defs: &[PredicateDef],
    catalog: &BuiltinCatalog,
    registered: &[PredicateDef],
) -> Result<(), Vec<Diagnostic>> {
    let mut visible: HashMap<&str, Vec<ValueType>> =
        registered.iter().map(|d| (d.name.as_str(), d.signature())).collect();
    let mut diags = Vec::new();
    for (i, def) in defs.iter().enumerate() {
        let mut checker = Checker {
            catalog,
            visible: visible.clone(),
            later: defs[i + 1..].iter().map(|d| d.name.as_str()).collect(),
            current: def,
            diags: Vec::new(),
        };
        if catalog.lookup(&def.name).is_some() {
            checker.complain(format!("name collides with builtin `{}`", def.name));
        } else if registered.iter().any(|r| r.name == def.name) {
            checker.complain(format!("name collides with registered predicate `{}`", def.name));
        } else if defs[..i].iter().any(|d| d.name == def.name) {
            checker.complain(format!("`{}` is defined twice", def.name));
        }
        for (j, p) in def.params.iter().enumerate() {
            if def.params[..j].iter().any(|q| q.name == p.name) {
                checker.complain(format!("duplicate parameter `{}`", p.name));
            }
        }
        checker.expect(&def.body, ValueType::Bool, "predicate body");
        diags.extend(checker.diags);
        visible.entry(def.name.as_str()).or_insert_with(|| def.signature());
    }
    if diags.is_empty() {
        Ok(())
    } else {
        Err(diags)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Value {
    Lanelet(u64),
    Number(f64),
    Bool(bool),
}

impl Value {
    pub fn ty(&self) -> ValueType {
        match self {
            Value::Lanelet(_) => ValueType::Lanelet,
            Value::Number(_) => ValueType::Number,
            Value::Bool(_) => ValueType::Bool,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Lanelet(id) => write!(f, "{id}"),
            Value::Number(n) => write!(f, "{n}"),
            Value::Bool(b) => write!(f, "{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unknown lanelet id {0}")]
    UnknownLanelet(u64),
    #[error("type error: {0}")]
    Type(String),
    #[error("unresolved function `{0}`")]
    Unresolved(String),
}

/// A builtin numeric value computed while evaluating, e.g.
/// `grade_max(2) = 0.3`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub call: String,
    pub value: f64,
}

/// Collects witnesses in first-computed order, one per distinct call.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WitnessLog {
    entries: Vec<Witness>,
}

impl WitnessLog {
    pub fn record(&mut self, call: String, value: f64) {
        if !self.entries.iter().any(|w| w.call == call) {
            self.entries.push(Witness { call, value });
        }
    }

    pub fn into_vec(self) -> Vec<Witness> {
        self.entries
    }

    pub fn entries(&self) -> &[Witness] {
        &self.entries
    }
}

/// Geometry access for builtins: a network plus sampling settings, with
/// centerlines precomputed and pairwise overlaps memoized.
pub struct GeomContext<'n> {
    net: &'n LaneletNetwork,
    radius: f64,
    centerlines: BTreeMap<u64, Polyline3>,
    overlaps: Mutex<HashMap<(u64, u64), OverlapResult>>,
}

impl<'n> GeomContext<'n> {
    pub fn new(net: &'n LaneletNetwork, samples: usize, radius: f64) -> Self {
        let centerlines = net.lanelets().map(|l| (l.id, l.centerline(samples))).collect();
        GeomContext {
            net,
            radius,
            centerlines,
            overlaps: Mutex::new(HashMap::new()),
        }
    }

    pub fn network(&self) -> &LaneletNetwork {
        self.net
    }

    fn centerline(&self, id: u64) -> Result<&Polyline3, EvalError> {
        self.centerlines.get(&id).ok_or(EvalError::UnknownLanelet(id))
    }

    fn overlap(&self, a: u64, b: u64) -> Result<OverlapResult, EvalError> {
        let ca = self.centerline(a)?;
        let cb = self.centerline(b)?;
        if a == b {
            return Ok(OverlapResult::NONE);
        }
        let key = (a.min(b), a.max(b));
        if let Some(hit) = self.overlaps.lock().unwrap().get(&key) {
            return Ok(*hit);
        }
        let r = centerline_overlap(ca, cb, self.radius);
        self.overlaps.lock().unwrap().insert(key, r);
        Ok(r)
    }

    /// Evaluates a builtin on lanelet arguments.
    pub fn call(&self, b: Builtin, args: &[u64]) -> Result<Value, EvalError> {
        if args.len() != b.params().len() {
            return Err(EvalError::Type(format!("{} takes {} arguments", b.name(), b.params().len())));
        }
        Ok(match b {
            Builtin::GradeMax => Value::Number(self.centerline(args[0])?.max_abs_grade()),
            Builtin::Length => Value::Number(self.centerline(args[0])?.xy_length()),
            Builtin::StartZ => Value::Number(self.centerline(args[0])?.first().z),
            Builtin::EndZ => Value::Number(self.centerline(args[0])?.last().z),
            Builtin::ElevStep => {
                Value::Number(centerline_step(self.centerline(args[0])?, self.centerline(args[1])?))
            }
            Builtin::MinClearance => Value::Number(self.overlap(args[0], args[1])?.min_gap),
            Builtin::OverlapsXy => Value::Bool(self.overlap(args[0], args[1])?.overlaps),
            Builtin::IsSuccessor => {
                self.centerline(args[1])?;
                let a = self.net.get(args[0]).ok_or(EvalError::UnknownLanelet(args[0]))?;
                Value::Bool(a.successors.contains(&args[1]))
            }
        })
    }

    /// Evaluates a builtin and records numeric results in `log`.
    pub fn call_logged(&self, b: Builtin, args: &[u64], log: &mut WitnessLog) -> Result<Value, EvalError> {
        let v = self.call(b, args)?;
        if let Value::Number(n) = v {
            let rendered: Vec<String> = args.iter().map(|a| a.to_string()).collect();
            log.record(format!("{}({})", b.name(), rendered.join(", ")), n);
        }
        Ok(v)
    }
}

/// Evaluation environment: registered predicates over one geometry context.
pub struct Interpreter<'a, 'n> {
    pub preds: &'a PredicateSet,
    pub geom: &'a GeomContext<'n>,
}

impl<'a, 'n> Interpreter<'a, 'n> {
    pub fn new(preds: &'a PredicateSet, geom: &'a GeomContext<'n>) -> Self {
        Interpreter { preds, geom }
    }

    /// Calls a registered predicate by index.
    pub fn call_predicate(&self, index: usize, args: &[Value], log: &mut WitnessLog) -> Result<bool, EvalError> {
        eval_def(self, self.preds.by_index(index), args, log)
    }

    /// Calls a builtin or predicate by name.
    pub fn call_named(&self, name: &str, args: &[Value], log: &mut WitnessLog) -> Result<Value, EvalError> {
        match self.preds.resolve(name) {
            Some(Callee::Builtin(b)) => {
                let ids = lanelet_args(b, args)?;
                self.geom.call_logged(b, &ids, log)
            }
            Some(Callee::Predicate(i)) => self.call_predicate(i, args, log).map(Value::Bool),
            None => Err(EvalError::Unresolved(name.to_string())),
        }
    }
}

fn lanelet_args(b: Builtin, args: &[Value]) -> Result<Vec<u64>, EvalError> {
    if args.len() != b.params().len() {
        return Err(EvalError::Type(format!(
            "{} takes {} arguments, got {}",
            b.name(),
            b.params().len(),
            args.len()
        )));
    }
    args.iter()
        .map(|v| match v {
            Value::Lanelet(id) => Ok(*id),
            other => Err(EvalError::Type(format!("{} expects lanelets, got {other}", b.name()))),
        })
        .collect()
}

/// Evaluates `def` on `args`. Connectives short-circuit.
pub fn eval_predicate(
    def: &PredicateDef,
    args: &[Value],
    interp: &Interpreter,
    log: &mut WitnessLog,
) -> Result<bool, EvalError> {
    eval_def(interp, def, args, log)
}

fn eval_def(interp: &Interpreter, def: &PredicateDef, args: &[Value], log: &mut WitnessLog) -> Result<bool, EvalError> {
    if args.len() != def.params.len() {
        return Err(EvalError::Type(format!(
            "`{}` takes {} arguments, got {}",
            def.name,
            def.params.len(),
            args.len()
        )));
    }
    for (p, a) in def.params.iter().zip(args) {
        if p.ty != a.ty() {
            return Err(EvalError::Type(format!("`{}` parameter `{}` expects {}", def.name, p.name, p.ty)));
        }
        if let Value::Lanelet(id) = a {
            if interp.geom.network().get(*id).is_none() {
                return Err(EvalError::UnknownLanelet(*id));
            }
        }
    }
    let env: Vec<(&str, Value)> = def.params.iter().map(|p| p.name.as_str()).zip(args.iter().copied()).collect();
    match eval_expr(interp, &env, &def.body, log)? {
        Value::Bool(b) => Ok(b),
        other => Err(EvalError::Type(format!("`{}` body produced {other}", def.name))),
    }
}

fn eval_bool(interp: &Interpreter, env: &[(&str, Value)], e: &PdlExpr, log: &mut WitnessLog) -> Result<bool, EvalError> {
    match eval_expr(interp, env, e, log)? {
        Value::Bool(b) => Ok(b),
        other => Err(EvalError::Type(format!("expected bool, got {other}"))),
    }
}

fn eval_number(interp: &Interpreter, env: &[(&str, Value)], e: &PdlExpr, log: &mut WitnessLog) -> Result<f64, EvalError> {
    match eval_expr(interp, env, e, log)? {
        Value::Number(n) => Ok(n),
        other => Err(EvalError::Type(format!("expected number, got {other}"))),
    }
}

fn eval_expr(interp: &Interpreter, env: &[(&str, Value)], e: &PdlExpr, log: &mut WitnessLog) -> Result<Value, EvalError> {
    Ok(match e {
        PdlExpr::Num(n) => Value::Number(*n),
        PdlExpr::Param(name) => env
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| EvalError::Type(format!("unknown parameter `{name}`")))?,
        PdlExpr::Not(inner) => Value::Bool(!eval_bool(interp, env, inner, log)?),
        PdlExpr::And(a, b) => Value::Bool(eval_bool(interp, env, a, log)? && eval_bool(interp, env, b, log)?),
        PdlExpr::Or(a, b) => Value::Bool(eval_bool(interp, env, a, log)? || eval_bool(interp, env, b, log)?),
        PdlExpr::Cmp(op, a, b) => {
            let x = eval_number(interp, env, a, log)?;
            let y = eval_number(interp, env, b, log)?;
            Value::Bool(op.apply(x, y))
        }
        PdlExpr::Call(name, args) => {
            let values = args
                .iter()
                .map(|a| eval_expr(interp, env, a, log))
                .collect::<Result<Vec<_>, _>>()?;
            interp.call_named(name, &values, log)?
        }
    })
}

/// The predicates the default ruleset is written against.
pub const DEFAULT_PREDICATES: &str = "\
# Shipped elevation predicates. Thresholds are parameters supplied by rules.
pred is_grade_within_limit(l: lanelet, g: number) := grade_max(l) <= g;
pred elevation_step_ok(a: lanelet, b: lanelet, m: number) := elev_step(a, b) <= m;
# Gaps at or below eps are at-grade crossings, which are legal.
pred clearance_ok(a: lanelet, b: lanelet, eps: number, c: number) := !overlaps_xy(a, b) || min_clearance(a, b) <= eps || min_clearance(a, b) >= c;
";

pub fn default_predicates() -> PredicateSet {
    PredicateSet::from_pdl(DEFAULT_PREDICATES).expect("shipped predicates are valid")
}
