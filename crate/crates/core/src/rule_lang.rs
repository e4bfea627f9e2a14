//! Finite-domain first-order rules over lanelets.
//!
//! ```text
//! rule slope_limit: forall l in L . is_grade_within_limit(l, 0.15);
//! rule vertical_clearance: forall (a, b) in pairs(L) . clearance_ok(a, b, 1.0, 4.5);
//! ```
//!
//! Operator precedence, tightest first: `!`, `&&`, `||`, `=>` (right
//! associative), `<=>`. A quantifier body extends as far right as possible.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::syntax::{Cursor, Pos, SyntaxError, Tok};

const RESERVED: &[&str] = &["rule", "forall", "exists", "in"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QuantKind {
    Forall,
    Exists,
}

impl QuantKind {
    fn keyword(self) -> &'static str {
        match self {
            QuantKind::Forall => "forall",
            QuantKind::Exists => "exists",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    /// `L`
    AllLanelets,
    /// `pairs(L)`: unordered pairs, smaller id first.
    UnorderedPairs,
    /// `succ_pairs(L)`: `(a, b)` with `b` a successor of `a`.
    SuccessorPairs,
}

impl Domain {
    pub fn arity(self) -> usize {
        match self {
            Domain::AllLanelets => 1,
            Domain::UnorderedPairs | Domain::SuccessorPairs => 2,
        }
    }

    fn text(self) -> &'static str {
        match self {
            Domain::AllLanelets => "L",
            Domain::UnorderedPairs => "pairs(L)",
            Domain::SuccessorPairs => "succ_pairs(L)",
        }
    }
}

/// Variables bound by one quantifier; `vars.len() == domain.arity()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Binding {
    pub vars: Vec<String>,
    pub domain: Domain,
}

impl Binding {
    pub fn single(var: impl Into<String>) -> Self {
        Binding {
            vars: vec![var.into()],
            domain: Domain::AllLanelets,
        }
    }

    pub fn pair(a: impl Into<String>, b: impl Into<String>, domain: Domain) -> Self {
        Binding {
            vars: vec![a.into(), b.into()],
            domain,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    And,
    Or,
    Implies,
    Iff,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::And => "&&",
            BinOp::Or => "||",
            BinOp::Implies => "=>",
            BinOp::Iff => "<=>",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Iff => 1,
            BinOp::Implies => 2,
            BinOp::Or => 3,
            BinOp::And => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge, CmpOp::Eq, CmpOp::Ne];

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }

    pub fn from_symbol(s: &str) -> Option<CmpOp> {
        CmpOp::ALL.into_iter().find(|op| op.symbol() == s)
    }

    /// IEEE comparison; every operator except `!=` is false on NaN.
    pub fn apply(self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    Num(f64),
    Var(String),
    Call(String, Vec<Term>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    Quant {
        kind: QuantKind,
        binding: Binding,
        body: Box<Formula>,
    },
    Not(Box<Formula>),
    Bin {
        op: BinOp,
        lhs: Box<Formula>,
        rhs: Box<Formula>,
    },
    Pred {
        name: String,
        args: Vec<Term>,
    },
    Cmp {
        op: CmpOp,
        lhs: Term,
        rhs: Term,
    },
}

impl Formula {
    pub fn quant(kind: QuantKind, binding: Binding, body: Formula) -> Self {
        Formula::Quant {
            kind,
            binding,
            body: Box::new(body),
        }
    }

    pub fn bin(op: BinOp, lhs: Formula, rhs: Formula) -> Self {
        Formula::Bin {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    fn precedence(&self) -> u8 {
        match self {
            Formula::Quant { .. } => 0,
            Formula::Bin { op, .. } => op.precedence(),
            Formula::Not(_) => 5,
            Formula::Pred { .. } | Formula::Cmp { .. } => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleDecl {
    pub name: String,
    pub body: Formula,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuleError {
    #[error("syntax error: {0}")]
    Syntax(#[from] SyntaxError),
    #[error("{pos}: rule `{rule}`: variable `{var}` is not bound by an enclosing quantifier")]
    Unbound { rule: String, var: String, pos: Pos },
    #[error("{pos}: rule `{rule}`: variable `{var}` shadows an enclosing binding")]
    Shadowed { rule: String, var: String, pos: Pos },
    #[error("{pos}: duplicate rule name `{name}`")]
    DuplicateRule { name: String, pos: Pos },
}

impl RuleError {
    pub fn pos(&self) -> Pos {
        match self {
            RuleError::Syntax(e) => e.pos,
            RuleError::Unbound { pos, .. }
            | RuleError::Shadowed { pos, .. }
            | RuleError::DuplicateRule { pos, .. } => *pos,
        }
    }
}

struct Parser {
    cur: Cursor,
    rule: String,
    scope: Vec<String>,
}

/// Parses a ruleset, checking variable binding, shadowing and rule-name
/// uniqueness.
pub fn parse_ruleset(text: &str) -> Result<Vec<RuleDecl>, RuleError> {
    let mut p = Parser {
        cur: Cursor::new(text)?,
        rule: String::new(),
        scope: Vec::new(),
    };
    let mut rules: Vec<RuleDecl> = Vec::new();
    while !p.cur.at_eof() {
        if !p.cur.is_word("rule") {
            return Err(p.cur.error(&["`rule`", "end of input"]).into());
        }
        p.cur.bump();
        let (name, pos) = p.cur.expect_ident("rule name", RESERVED)?;
        if rules.iter().any(|r| r.name == name) {
            return Err(RuleError::DuplicateRule { name, pos });
        }
        p.rule = name.clone();
        p.cur.expect_sym(":")?;
        let body = p.formula()?;
        p.cur.expect_sym(";")?;
        rules.push(RuleDecl { name, body });
    }
    Ok(rules)
}

/// Parses a single formula with no enclosing bindings.
pub fn parse_formula(text: &str) -> Result<Formula, RuleError> {
    let mut p = Parser {
        cur: Cursor::new(text)?,
        rule: "<formula>".into(),
        scope: Vec::new(),
    };
    let f = p.formula()?;
    if !p.cur.at_eof() {
        return Err(p.cur.error(&["end of input"]).into());
    }
    Ok(f)
}

impl Parser {
    fn formula(&mut self) -> Result<Formula, RuleError> {
        self.cur.enter()?;
        let f = if self.cur.is_word("forall") || self.cur.is_word("exists") {
            self.quant()
        } else {
            self.iff()
        };
        self.cur.leave();
        f
    }

    fn bind(&mut self, var: String, pos: Pos) -> Result<(), RuleError> {
        if self.scope.contains(&var) {
            return Err(RuleError::Shadowed {
                rule: self.rule.clone(),
                var,
                pos,
            });
        }
        self.scope.push(var);
        Ok(())
    }

    fn quant(&mut self) -> Result<Formula, RuleError> {
        let kind = if self.cur.is_word("forall") {
            QuantKind::Forall
        } else {
            QuantKind::Exists
        };
        self.cur.bump();
        let binding = if self.cur.eat_sym("(") {
            let (a, apos) = self.cur.expect_ident("variable", RESERVED)?;
            self.cur.expect_sym(",")?;
            let (b, bpos) = self.cur.expect_ident("variable", RESERVED)?;
            self.cur.expect_sym(")")?;
            self.cur.expect_word("in")?;
            let domain = if self.cur.is_word("pairs") {
                Domain::UnorderedPairs
            } else if self.cur.is_word("succ_pairs") {
                Domain::SuccessorPairs
            } else {
                return Err(self.cur.error(&["`pairs(L)`", "`succ_pairs(L)`"]).into());
            };
            self.cur.bump();
            self.cur.expect_sym("(")?;
            self.cur.expect_word("L")?;
            self.cur.expect_sym(")")?;
            self.bind(a.clone(), apos)?;
            self.bind(b.clone(), bpos)?;
            Binding::pair(a, b, domain)
        } else {
            let (v, pos) = self.cur.expect_ident("variable or `(`", RESERVED)?;
            self.cur.expect_word("in")?;
            self.cur.expect_word("L")?;
            self.bind(v.clone(), pos)?;
            Binding::single(v)
        };
        self.cur.expect_sym(".")?;
        let body = self.formula();
        for _ in &binding.vars {
            self.scope.pop();
        }
        Ok(Formula::quant(kind, binding, body?))
    }

    fn iff(&mut self) -> Result<Formula, RuleError> {
        let mut lhs = self.implication()?;
        while self.cur.eat_sym("<=>") {
            let rhs = self.implication()?;
            lhs = Formula::bin(BinOp::Iff, lhs, rhs);
        }
        Ok(lhs)
    }

    fn implication(&mut self) -> Result<Formula, RuleError> {
        let lhs = self.or()?;
        if self.cur.eat_sym("=>") {
            self.cur.enter()?;
            let rhs = self.implication();
            self.cur.leave();
            return Ok(Formula::bin(BinOp::Implies, lhs, rhs?));
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Formula, RuleError> {
        let mut lhs = self.and()?;
        while self.cur.eat_sym("||") {
            let rhs = self.and()?;
            lhs = Formula::bin(BinOp::Or, lhs, rhs);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Formula, RuleError> {
        let mut lhs = self.unary()?;
        while self.cur.eat_sym("&&") {
            let rhs = self.unary()?;
            lhs = Formula::bin(BinOp::And, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula, RuleError> {
        self.cur.enter()?;
        let f = if self.cur.eat_sym("!") {
            self.unary().map(Formula::not)
        } else {
            self.atom()
        };
        self.cur.leave();
        f
    }

    fn atom(&mut self) -> Result<Formula, RuleError> {
        if self.cur.eat_sym("(") {
            let f = self.formula()?;
            self.cur.expect_sym(")")?;
            return Ok(f);
        }
        let starts_call = matches!(self.cur.peek().tok, Tok::Ident(_)) && *self.cur.peek_at(1) == Tok::Sym("(");
        if starts_call {
            let (name, _) = self.cur.expect_ident("predicate name", RESERVED)?;
            let args = self.args()?;
            if self.cmp_op().is_none() {
                return Ok(Formula::Pred { name, args });
            }
            return self.cmp_rest(Term::Call(name, args));
        }
        if !matches!(self.cur.peek().tok, Tok::Ident(_) | Tok::Number(_)) {
            return Err(self
                .cur
                .error(&["`(`", "`!`", "predicate", "term", "`forall`", "`exists`"])
                .into());
        }
        let lhs = self.term()?;
        self.cmp_rest(lhs)
    }

    fn cmp_op(&self) -> Option<CmpOp> {
        match self.cur.peek().tok {
            Tok::Sym(s) => CmpOp::from_symbol(s),
            _ => None,
        }
    }

    fn cmp_rest(&mut self, lhs: Term) -> Result<Formula, RuleError> {
        let op = self
            .cmp_op()
            .ok_or_else(|| self.cur.error(&["comparison operator"]))?;
        self.cur.bump();
        let rhs = self.term()?;
        Ok(Formula::Cmp { op, lhs, rhs })
    }

    fn args(&mut self) -> Result<Vec<Term>, RuleError> {
        self.cur.expect_sym("(")?;
        let mut args = Vec::new();
        if self.cur.eat_sym(")") {
            return Ok(args);
        }
        loop {
            args.push(self.term()?);
            if self.cur.eat_sym(")") {
                return Ok(args);
            }
            if !self.cur.eat_sym(",") {
                return Err(self.cur.error(&["`,`", "`)`"]).into());
            }
        }
    }

    fn term(&mut self) -> Result<Term, RuleError> {
        self.cur.enter()?;
        let t = self.term_inner();
        self.cur.leave();
        t
    }

    fn term_inner(&mut self) -> Result<Term, RuleError> {
        match self.cur.peek().tok.clone() {
            Tok::Number(n) => {
                self.cur.bump();
                Ok(Term::Num(n))
            }
            Tok::Ident(_) => {
                let pos = self.cur.pos();
                let (name, _) = self.cur.expect_ident("term", RESERVED)?;
                if self.cur.is_sym("(") {
                    let args = self.args()?;
                    return Ok(Term::Call(name, args));
                }
                if !self.scope.contains(&name) {
                    return Err(RuleError::Unbound {
                        rule: self.rule.clone(),
                        var: name,
                        pos,
                    });
                }
                Ok(Term::Var(name))
            }
            _ => Err(self.cur.error(&["number", "variable", "function call"]).into()),
        }
    }
}

fn write_term(out: &mut String, t: &Term) {
    match t {
        Term::Num(n) => {
            let _ = write!(out, "{n}");
        }
        Term::Var(v) => out.push_str(v),
        Term::Call(name, args) => write_call(out, name, args),
    }
}

fn write_call(out: &mut String, name: &str, args: &[Term]) {
    out.push_str(name);
    out.push('(');
    for (i, a) in args.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write_term(out, a);
    }
    out.push(')');
}

fn write_formula(out: &mut String, f: &Formula) {
    match f {
        Formula::Quant { kind, binding, body } => {
            out.push_str(kind.keyword());
            out.push(' ');
            if binding.vars.len() == 1 {
                out.push_str(&binding.vars[0]);
            } else {
                let _ = write!(out, "({})", binding.vars.join(", "));
            }
            let _ = write!(out, " in {} . ", binding.domain.text());
            write_formula(out, body);
        }
        Formula::Not(inner) => {
            out.push('!');
            write_wrapped(out, inner, inner.precedence() < 5);
        }
        Formula::Bin { op, lhs, rhs } => {
            let p = op.precedence();
            let (lparen, rparen) = if *op == BinOp::Implies {
                (lhs.precedence() <= p, rhs.precedence() < p)
            } else {
                (lhs.precedence() < p, rhs.precedence() <= p)
            };
            write_wrapped(out, lhs, lparen);
            let _ = write!(out, " {} ", op.symbol());
            write_wrapped(out, rhs, rparen);
        }
        Formula::Pred { name, args } => write_call(out, name, args),
        Formula::Cmp { op, lhs, rhs } => {
            write_term(out, lhs);
            let _ = write!(out, " {} ", op.symbol());
            write_term(out, rhs);
        }
    }
}

fn write_wrapped(out: &mut String, f: &Formula, parens: bool) {
    if parens {
        out.push('(');
        write_formula(out, f);
        out.push(')');
    } else {
        write_formula(out, f);
    }
}

/// Canonical text of a formula with the minimal parentheses the
/// precedence table allows.
pub fn print_formula(f: &Formula) -> String {
    let mut out = String::new();
    write_formula(&mut out, f);
    out
}

pub fn print_term(t: &Term) -> String {
    let mut out = String::new();
    write_term(&mut out, t);
    out
}

pub fn print_rule(r: &RuleDecl) -> String {
    format!("rule {}: {};", r.name, print_formula(&r.body))
}

pub fn print_ruleset(rules: &[RuleDecl]) -> String {
    rules.iter().map(|r| print_rule(r) + "\n").collect()
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_formula(self))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_term(self))
    }
}

/// Every predicate and function application in `f`, as `(name, arity)`.
pub fn free_functions(f: &Formula) -> BTreeSet<(String, usize)> {
    fn term(t: &Term, out: &mut BTreeSet<(String, usize)>) {
        if let Term::Call(name, args) = t {
            out.insert((name.clone(), args.len()));
            args.iter().for_each(|a| term(a, out));
        }
    }
    fn formula(f: &Formula, out: &mut BTreeSet<(String, usize)>) {
        match f {
            Formula::Quant { body, .. } => formula(body, out),
            Formula::Not(inner) => formula(inner, out),
            Formula::Bin { lhs, rhs, .. } => {
                formula(lhs, out);
                formula(rhs, out);
            }
            Formula::Pred { name, args } => {
                out.insert((name.clone(), args.len()));
                args.iter().for_each(|a| term(a, out));
            }
            Formula::Cmp { lhs, rhs, .. } => {
                term(lhs, out);
                term(rhs, out);
            }
        }
    }
    let mut out = BTreeSet::new();
    formula(f, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(v: &str) -> Term {
        Term::Var(v.into())
    }

    fn pred(name: &str, args: Vec<Term>) -> Formula {
        Formula::Pred {
            name: name.into(),
            args,
        }
    }

    #[test]
    fn slope_rule() {
        let rules = parse_ruleset("rule slope_limit: forall l in L . is_grade_within_limit(l, 0.15);").unwrap();
        assert_eq!(
            rules,
            vec![RuleDecl {
                name: "slope_limit".into(),
                body: Formula::quant(
                    QuantKind::Forall,
                    Binding::single("l"),
                    pred("is_grade_within_limit", vec![var("l"), Term::Num(0.15)])
                )
            }]
        );
    }

    #[test]
    fn missing_dot_is_positioned() {
        match parse_ruleset("rule bad: forall l in L is_ok(l);").unwrap_err() {
            RuleError::Syntax(e) => {
                assert_eq!(e.pos.col, 25);
                assert_eq!(e.found, "`is_ok`");
                assert_eq!(e.expected, vec!["`.`"]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unbound_variable() {
        assert!(matches!(
            parse_ruleset("rule free: is_ok(l);"),
            Err(RuleError::Unbound { var, .. }) if var == "l"
        ));
    }

    #[test]
    fn shadowing_and_duplicates() {
        assert!(matches!(
            parse_ruleset("rule s: forall l in L . forall l in L . p(l);"),
            Err(RuleError::Shadowed { .. })
        ));
        assert!(matches!(
            parse_ruleset("rule s: forall (a, a) in pairs(L) . p(a);"),
            Err(RuleError::Shadowed { .. })
        ));
        assert!(matches!(
            parse_ruleset("rule a: forall l in L . p(l);\nrule a: forall l in L . p(l);"),
            Err(RuleError::DuplicateRule { name, pos }) if name == "a" && pos.line == 2
        ));
        // sibling scopes may reuse a name
        parse_ruleset("rule ok: (forall l in L . p(l)) && (exists l in L . q(l));").unwrap();
    }

    #[test]
    fn pair_domains() {
        let r = parse_ruleset("rule c: forall (a, b) in succ_pairs(L) . step(a, b) <= 0.05;").unwrap();
        match &r[0].body {
            Formula::Quant { binding, .. } => {
                assert_eq!(binding.domain, Domain::SuccessorPairs);
                assert_eq!(binding.vars, vec!["a", "b"]);
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_ruleset("rule c: forall (a, b) in L . p(a);").is_err());
    }

    #[test]
    fn printing_examples() {
        assert_eq!(print_formula(&pred("p", vec![var("l")])), "p(l)");
        let a = pred("A", vec![]);
        let b = pred("B", vec![]);
        assert_eq!(
            print_formula(&Formula::bin(BinOp::Or, Formula::not(a.clone()), b.clone())),
            "!A() || B()"
        );
        let imp = Formula::bin(
            BinOp::Implies,
            a.clone(),
            Formula::bin(BinOp::Implies, b.clone(), a.clone()),
        );
        assert_eq!(print_formula(&imp), "A() => B() => A()");
        let left = Formula::bin(
            BinOp::Implies,
            Formula::bin(BinOp::Implies, a.clone(), b.clone()),
            a.clone(),
        );
        assert_eq!(print_formula(&left), "(A() => B()) => A()");
        let and_or = Formula::bin(BinOp::And, Formula::bin(BinOp::Or, a.clone(), b.clone()), a.clone());
        assert_eq!(print_formula(&and_or), "(A() || B()) && A()");
    }

    #[test]
    fn quantifier_inside_connective_needs_parens() {
        let q = Formula::quant(QuantKind::Exists, Binding::single("x"), pred("p", vec![var("x")]));
        let f = Formula::bin(BinOp::And, pred("A", vec![]), q.clone());
        let text = print_formula(&f);
        assert_eq!(text, "A() && (exists x in L . p(x))");
        assert_eq!(parse_formula(&text).unwrap(), f);
        assert_eq!(print_formula(&Formula::not(q)), "!(exists x in L . p(x))");
    }

    #[test]
    fn numbers_round_trip() {
        for n in [1.0 / 3.0, -0.5, 1e-7, 123456789.125, 0.15] {
            let f = Formula::Cmp {
                op: CmpOp::Le,
                lhs: Term::Num(n),
                rhs: Term::Call("f".into(), vec![Term::Num(-n)]),
            };
            assert_eq!(parse_formula(&print_formula(&f)).unwrap(), f);
        }
    }

    #[test]
    fn free_functions_examples() {
        let r = parse_ruleset("rule s: forall l in L . is_grade_within_limit(l, 0.15);").unwrap();
        assert_eq!(
            free_functions(&r[0].body),
            BTreeSet::from([("is_grade_within_limit".to_string(), 2)])
        );
        let f = parse_formula("forall (a, b) in pairs(L) . p(a) || max(f(a), 1) < g(b)").unwrap();
        let names: Vec<_> = free_functions(&f).into_iter().collect();
        assert_eq!(
            names,
            vec![
                ("f".to_string(), 1),
                ("g".to_string(), 1),
                ("max".to_string(), 2),
                ("p".to_string(), 1)
            ]
        );
    }

    #[test]
    fn depth_limit() {
        let deep = format!("rule d: {}p(){};", "(".repeat(200), ")".repeat(200));
        assert!(matches!(parse_ruleset(&deep), Err(RuleError::Syntax(_))));
        let bangs = format!("rule d: {}p();", "!".repeat(10_000));
        assert!(matches!(parse_ruleset(&bangs), Err(RuleError::Syntax(_))));
        let ok = format!("rule d: {}p(){};", "(".repeat(20), ")".repeat(20));
        parse_ruleset(&ok).unwrap();
    }

    #[test]
    fn keywords_are_reserved() {
        assert!(parse_ruleset("rule in: forall l in L . p(l);").is_err());
        assert!(parse_ruleset("rule r: forall forall in L . p(forall);").is_err());
    }
}
