//! Formula syntax: AST, parser, fragment classification.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! formula := or ( "U[" a "," b "]" or )?
//! or      := and ( "|" and )*
//! and     := unary ( "&" unary )*
//! unary   := "!" unary | ("F" | "G") interval unary | atom
//! atom    := "true" | "false" | ident ( cmp number )? | "(" formula ")"
//! interval:= "[" a "," b "]" | "[" a "]"
//! ```
//!
//! `ident >= c` denotes a deterministic leaf `h(x, μ̃) − c ≥ 0`.

use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LogicError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown predicate `{id}` at byte {pos}")]
    UnknownPredicate { id: String, pos: usize },
    #[error("invalid interval [{a}, {b}]: need 0 <= a <= b < inf")]
    Interval { a: f64, b: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub a: f64,
    pub b: f64,
}

impl Interval {
    pub fn new(a: f64, b: f64) -> Result<Self, LogicError> {
        if a.is_finite() && b.is_finite() && 0.0 <= a && a <= b {
            Ok(Self { a, b })
        } else {
            Err(LogicError::Interval { a, b })
        }
    }

    pub fn point(t: f64) -> Result<Self, LogicError> {
        Self::new(t, t)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.a, self.b)
    }
}

/// How a predicate leaf is read.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Interpretation {
    Chance,
    Risk,
    /// `h(x, μ̃) − threshold ≥ 0`.
    Deterministic { threshold: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub id: String,
    pub interp: Interpretation,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    True,
    Pred(Atom),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Until(Box<Formula>, Box<Formula>, Interval),
    Eventually(Box<Formula>, Interval),
    Always(Box<Formula>, Interval),
}

impl Formula {
    pub fn pred(id: &str, interp: Interpretation) -> Self {
        Formula::Pred(Atom { id: id.into(), interp })
    }

    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn and(l: Formula, r: Formula) -> Self {
        Formula::And(Box::new(l), Box::new(r))
    }

    pub fn or(l: Formula, r: Formula) -> Self {
        Formula::Or(Box::new(l), Box::new(r))
    }

    pub fn until(l: Formula, r: Formula, i: Interval) -> Self {
        Formula::Until(Box::new(l), Box::new(r), i)
    }

    pub fn eventually(f: Formula, i: Interval) -> Self {
        Formula::Eventually(Box::new(f), i)
    }

    pub fn always(f: Formula, i: Interval) -> Self {
        Formula::Always(Box::new(f), i)
    }

    /// Conjunction of a nonempty list, left-associated.
    pub fn conj(items: Vec<Formula>) -> Option<Formula> {
        items.into_iter().reduce(Formula::and)
    }

    /// Rewrites `F`, `G` and `∨` into `⊤`, `U`, `¬`, `∧`.
    pub fn desugar(&self) -> Formula {
        match self {
            Formula::True | Formula::Pred(_) => self.clone(),
            Formula::Not(f) => Formula::not(f.desugar()),
            Formula::And(l, r) => Formula::and(l.desugar(), r.desugar()),
            Formula::Or(l, r) => {
                Formula::not(Formula::and(Formula::not(l.desugar()), Formula::not(r.desugar())))
            }
            Formula::Until(l, r, i) => Formula::until(l.desugar(), r.desugar(), *i),
            Formula::Eventually(f, i) => Formula::until(Formula::True, f.desugar(), *i),
            Formula::Always(f, i) => Formula::not(Formula::until(
                Formula::True,
                Formula::not(f.desugar()),
                *i,
            )),
        }
    }

    /// Length of trace needed after the evaluation time.
    pub fn horizon(&self) -> f64 {
        match self {
            Formula::True | Formula::Pred(_) => 0.0,
            Formula::Not(f) => f.horizon(),
            Formula::And(l, r) | Formula::Or(l, r) => l.horizon().max(r.horizon()),
            Formula::Until(l, r, i) => i.b + l.horizon().max(r.horizon()),
            Formula::Eventually(f, i) | Formula::Always(f, i) => i.b + f.horizon(),
        }
    }

    /// Applies `map` to every predicate leaf, keeping the operator tree.
    pub fn map_atoms<E>(&self, map: &mut impl FnMut(&Atom) -> Result<Atom, E>) -> Result<Formula, E> {
        Ok(match self {
            Formula::True => Formula::True,
            Formula::Pred(a) => Formula::Pred(map(a)?),
            Formula::Not(f) => Formula::not(f.map_atoms(map)?),
            Formula::And(l, r) => Formula::and(l.map_atoms(map)?, r.map_atoms(map)?),
            Formula::Or(l, r) => Formula::or(l.map_atoms(map)?, r.map_atoms(map)?),
            Formula::Until(l, r, i) => Formula::until(l.map_atoms(map)?, r.map_atoms(map)?, *i),
            Formula::Eventually(f, i) => Formula::eventually(f.map_atoms(map)?, *i),
            Formula::Always(f, i) => Formula::always(f.map_atoms(map)?, *i),
        })
    }

    fn children(&self) -> Vec<&Formula> {
        match self {
            Formula::True | Formula::Pred(_) => vec![],
            Formula::Not(f) | Formula::Eventually(f, _) | Formula::Always(f, _) => vec![f],
            Formula::And(l, r) | Formula::Or(l, r) | Formula::Until(l, r, _) => vec![l, r],
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Formula::Until(..) => 0,
            Formula::Or(..) => 1,
            Formula::And(..) => 2,
            _ => 3,
        }
    }

    pub fn is_temporal(&self) -> bool {
        matches!(self, Formula::Until(..) | Formula::Eventually(..) | Formula::Always(..))
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let wrap = |f: &mut fmt::Formatter<'_>, child: &Formula, min: u8| {
            if child.precedence() < min {
                write!(f, "({child})")
            } else {
                write!(f, "{child}")
            }
        };
        match self {
            Formula::True => write!(f, "true"),
            Formula::Pred(a) => match a.interp {
                Interpretation::Deterministic { threshold } => write!(f, "{}>={}", a.id, threshold),
                _ => write!(f, "{}", a.id),
            },
            Formula::Not(c) => {
                write!(f, "!")?;
                wrap(f, c, 3)
            }
            Formula::And(l, r) => {
                wrap(f, l, 2)?;
                write!(f, " & ")?;
                wrap(f, r, 3)
            }
            Formula::Or(l, r) => {
                wrap(f, l, 1)?;
                write!(f, " | ")?;
                wrap(f, r, 2)
            }
            Formula::Until(l, r, i) => {
                wrap(f, l, 1)?;
                write!(f, " U{i} ")?;
                wrap(f, r, 1)
            }
            Formula::Eventually(c, i) => {
                write!(f, "F{i}")?;
                write!(f, "({c})")
            }
            Formula::Always(c, i) => {
                write!(f, "G{i}")?;
                write!(f, "({c})")
            }
        }
    }
}

/// Parses `text`, resolving every identifier through `lookup`.
pub fn parse_formula(
    text: &str,
    lookup: impl Fn(&str) -> Option<Interpretation>,
) -> Result<Formula, LogicError> {
    let mut p = Parser { src: text.as_bytes(), pos: 0, lookup: &lookup };
    let f = p.formula()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(f)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    lookup: &'a dyn Fn(&str) -> Option<Interpretation>,
}

impl Parser<'_> {
    fn error(&self, msg: &str) -> LogicError {
        LogicError::Syntax { pos: self.pos, msg: msg.into() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), LogicError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(&format!("expected `{}`", c as char)))
        }
    }

    /// Operator letter `F`, `G` or `U` directly followed by `[`.
    fn temporal_keyword(&mut self, letter: u8) -> bool {
        if self.peek() == Some(letter) && self.src.get(self.pos + 1) == Some(&b'[') {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn formula(&mut self) -> Result<Formula, LogicError> {
        let left = self.or()?;
        if self.temporal_keyword(b'U') {
            let i = self.interval(false)?;
            let right = self.or()?;
            if self.temporal_keyword(b'U') {
                return Err(self.error("until is not associative; add parentheses"));
            }
            return Ok(Formula::until(left, right, i));
        }
        Ok(left)
    }

    fn or(&mut self) -> Result<Formula, LogicError> {
        let mut f = self.and()?;
        while self.eat(b'|') {
            f = Formula::or(f, self.and()?);
        }
        Ok(f)
    }

    fn and(&mut self) -> Result<Formula, LogicError> {
        let mut f = self.unary()?;
        while self.eat(b'&') {
            f = Formula::and(f, self.unary()?);
        }
        Ok(f)
    }

    fn unary(&mut self) -> Result<Formula, LogicError> {
        if self.eat(b'!') {
            return Ok(Formula::not(self.unary()?));
        }
        if self.temporal_keyword(b'F') {
            let i = self.interval(true)?;
            return Ok(Formula::eventually(self.unary()?, i));
        }
        if self.temporal_keyword(b'G') {
            let i = self.interval(true)?;
            return Ok(Formula::always(self.unary()?, i));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Formula, LogicError> {
        if self.eat(b'(') {
            let f = self.formula()?;
            self.expect(b')')?;
            return Ok(f);
        }
        self.skip_ws();
        let start = self.pos;
        let id = self.ident().ok_or_else(|| self.error("expected predicate, `true`, `(` or operator"))?;
        match id.as_str() {
            "true" => return Ok(Formula::True),
            "false" => return Ok(Formula::not(Formula::True)),
            _ => {}
        }
        if (self.lookup)(&id).is_none() {
            return Err(LogicError::UnknownPredicate { id, pos: start });
        }
        self.skip_ws();
        if self.src[self.pos..].starts_with(b">=") {
            self.pos += 2;
            let threshold = self.number()?;
            return Ok(Formula::pred(&id, Interpretation::Deterministic { threshold }));
        }
        let interp = (self.lookup)(&id).expect("checked above");
        Ok(Formula::pred(&id, interp))
    }

    fn ident(&mut self) -> Option<String> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            if self.pos == start && self.src[self.pos].is_ascii_digit() {
                return None;
            }
            self.pos += 1;
        }
        (self.pos > start).then(|| String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
    }

    fn number(&mut self) -> Result<f64, LogicError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_digit() || b"+-.eE".contains(&self.src[self.pos]))
        {
            self.pos += 1;
        }
        let s = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        s.parse::<f64>().map_err(|_| LogicError::Syntax { pos: start, msg: "expected number".into() })
    }

    fn interval(&mut self, allow_point: bool) -> Result<Interval, LogicError> {
        self.expect(b'[')?;
        let a = self.number()?;
        if allow_point && self.eat(b']') {
            return Interval::point(a);
        }
        self.expect(b',')?;
        let b = self.number()?;
        self.expect(b']')?;
        Interval::new(a, b)
    }
}

/// Outcome of checking a formula against the controllable fragment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FragmentReport {
    pub is_psi_class: bool,
    pub is_phi_class: bool,
    pub violations: Vec<(String, String)>,
}

/// `ψ ::= ⊤ | μ | ψ ∧ ψ`, `φ ::= G ψ | F ψ | ψ U ψ | φ ∧ φ`.
pub fn validate_fragment(f: &Formula) -> FragmentReport {
    let mut report = FragmentReport::default();
    walk_phi(f, "root", &mut report.violations);
    report.is_phi_class = report.violations.is_empty();
    let mut psi = Vec::new();
    walk_psi(f, "root", &mut psi);
    report.is_psi_class = psi.is_empty();
    report
}

fn child_path(path: &str, k: usize) -> String {
    format!("{path}.{k}")
}

fn walk_phi(f: &Formula, path: &str, out: &mut Vec<(String, String)>) {
    match f {
        Formula::And(l, r) => {
            walk_phi(l, &child_path(path, 0), out);
            walk_phi(r, &child_path(path, 1), out);
        }
        Formula::Eventually(c, _) | Formula::Always(c, _) => walk_psi(c, &child_path(path, 0), out),
        Formula::Until(l, r, _) => {
            walk_psi(l, &child_path(path, 0), out);
            walk_psi(r, &child_path(path, 1), out);
        }
        Formula::Not(_) => out.push((path.into(), "negation excluded".into())),
        Formula::Or(..) => out.push((path.into(), "disjunction excluded".into())),
        Formula::True | Formula::Pred(_) => {
            out.push((path.into(), "state formula outside a temporal operator".into()))
        }
    }
}

fn walk_psi(f: &Formula, path: &str, out: &mut Vec<(String, String)>) {
    match f {
        Formula::True | Formula::Pred(_) => {}
        Formula::And(l, r) => {
            walk_psi(l, &child_path(path, 0), out);
            walk_psi(r, &child_path(path, 1), out);
        }
        Formula::Not(_) => out.push((path.into(), "negation excluded".into())),
        Formula::Or(..) => out.push((path.into(), "disjunction excluded".into())),
        _ => out.push((path.into(), "temporal operator nested in a state formula".into())),
    }
}

/// Distinct predicate ids in order of first appearance.
pub fn predicates_of(f: &Formula) -> Vec<String> {
    fn go(f: &Formula, out: &mut Vec<String>) {
        if let Formula::Pred(a) = f {
            if !out.contains(&a.id) {
                out.push(a.id.clone());
            }
        }
        for c in f.children() {
            go(c, out);
        }
    }
    let mut out = Vec::new();
    go(f, &mut out);
    out
}

/// Whether any node of `f` satisfies `pred`.
pub fn any_node(f: &Formula, pred: &impl Fn(&Formula) -> bool) -> bool {
    pred(f) || f.children().into_iter().any(|c| any_node(c, pred))
}
