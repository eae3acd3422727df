//! MTL syntax: AST, parser, negation normal form, horizon bound and
//! predicate-occurrence classification.
//!
//! Concrete syntax (ASCII, whitespace-insensitive):
//!
//! ```text
//! formula := implies
//! implies := or ("->" implies)?
//! or      := and ("|" and)*
//! and     := unary ("&" unary)*
//! unary   := "!" unary | "G" interval? unary | "F" interval? unary
//!          | "(" formula ("U" interval formula)? ")" | ident
//! interval:= "[" number "," number "]"
//! ```

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance absorbing the binary representation of decimal interval bounds
/// (e.g. `8.5 / 0.5`) when converting seconds to sample indices.
pub const INDEX_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MtlError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax {
        line: usize,
        col: usize,
        msg: String,
    },
    #[error("invalid interval at {line}:{col}: {msg}")]
    Interval {
        line: usize,
        col: usize,
        msg: String,
    },
    #[error("unsupported fragment: {0}")]
    Unsupported(String),
    #[error("bounded horizon undefined: {0}")]
    UnboundedHorizon(String),
    #[error("sample time must be positive, got {0}")]
    SampleTime(f64),
    #[error("formula is not in negation normal form")]
    NotNnf,
}

/// Closed time interval in seconds; `hi == None` means unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: Option<f64>,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi: Some(hi) }
    }

    pub fn unbounded() -> Self {
        Interval { lo: 0.0, hi: None }
    }

    pub fn is_bounded(&self) -> bool {
        self.hi.is_some()
    }

    /// Offsets `[ceil(lo/dt), floor(hi/dt)]` in sample indices. The upper
    /// offset is `None` for unbounded intervals.
    pub fn index_offsets(&self, dt: f64) -> (usize, Option<usize>) {
        let lo = (self.lo / dt - INDEX_EPS).ceil().max(0.0) as usize;
        let hi = self
            .hi
            .map(|h| (h / dt + INDEX_EPS).floor().max(0.0) as usize);
        (lo, hi)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.hi {
            Some(hi) => write!(f, "[{},{}]", self.lo, hi),
            None => Ok(()),
        }
    }
}

/// MTL abstract syntax tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    Pred(String),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Globally(Interval, Box<Formula>),
    Eventually(Interval, Box<Formula>),
    Until(Interval, Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn pred(name: &str) -> Self {
        Formula::Pred(name.to_string())
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn globally(i: Interval, f: Formula) -> Self {
        Formula::Globally(i, Box::new(f))
    }

    pub fn eventually(i: Interval, f: Formula) -> Self {
        Formula::Eventually(i, Box::new(f))
    }

    pub fn until(i: Interval, lhs: Formula, rhs: Formula) -> Self {
        Formula::Until(i, Box::new(lhs), Box::new(rhs))
    }

    /// Operator nesting depth; a bare predicate has depth 0.
    pub fn depth(&self) -> usize {
        match self {
            Formula::Pred(_) => 0,
            Formula::Not(c) | Formula::Globally(_, c) | Formula::Eventually(_, c) => 1 + c.depth(),
            Formula::And(cs) | Formula::Or(cs) => {
                1 + cs.iter().map(Formula::depth).max().unwrap_or(0)
            }
            Formula::Implies(a, b) | Formula::Until(_, a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    /// Names of all predicates, in first-appearance order.
    pub fn predicate_names(&self) -> Vec<String> {
        fn walk(f: &Formula, out: &mut Vec<String>) {
            match f {
                Formula::Pred(p) => {
                    if !out.contains(p) {
                        out.push(p.clone())
                    }
                }
                Formula::Not(c) | Formula::Globally(_, c) | Formula::Eventually(_, c) => {
                    walk(c, out)
                }
                Formula::And(cs) | Formula::Or(cs) => cs.iter().for_each(|c| walk(c, out)),
                Formula::Implies(a, b) | Formula::Until(_, a, b) => {
                    walk(a, out);
                    walk(b, out)
                }
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn join(f: &mut fmt::Formatter<'_>, cs: &[Formula], op: &str) -> fmt::Result {
            write!(f, "(")?;
            for (i, c) in cs.iter().enumerate() {
                if i > 0 {
                    write!(f, " {op} ")?;
                }
                write!(f, "{c}")?;
            }
            write!(f, ")")
        }
        match self {
            Formula::Pred(p) => write!(f, "{p}"),
            Formula::Not(c) => write!(f, "!{c}"),
            Formula::And(cs) => join(f, cs, "&"),
            Formula::Or(cs) => join(f, cs, "|"),
            Formula::Implies(a, b) => write!(f, "({a} -> {b})"),
            Formula::Globally(i, c) => write!(f, "G{i} {c}"),
            Formula::Eventually(i, c) => write!(f, "F{i} {c}"),
            Formula::Until(i, a, b) => write!(f, "({a} U{i} {b})"),
        }
    }
}

/// Source location (1-based line and column).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Not,
    And,
    Or,
    Arrow,
    G,
    F,
    U,
    LParen,
    RParen,
    LBrack,
    RBrack,
    Comma,
    Minus,
    Eof,
}

struct Lexer<'a> {
    src: &'a str,
    toks: Vec<(Tok, usize)>,
}

fn span_at(src: &str, offset: usize) -> Span {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    Span { line, col }
}

impl<'a> Lexer<'a> {
    fn run(src: &'a str) -> Result<Vec<(Tok, usize)>, MtlError> {
        let mut lx = Lexer {
            src,
            toks: Vec::new(),
        };
        let bytes = src.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i] as char;
            let start = i;
            match c {
                c if c.is_whitespace() => {
                    i += 1;
                    continue;
                }
                '!' => lx.push(Tok::Not, start),
                '&' => lx.push(Tok::And, start),
                '|' => lx.push(Tok::Or, start),
                '(' => lx.push(Tok::LParen, start),
                ')' => lx.push(Tok::RParen, start),
                '[' => lx.push(Tok::LBrack, start),
                ']' => lx.push(Tok::RBrack, start),
                ',' => lx.push(Tok::Comma, start),
                '-' if bytes.get(i + 1) == Some(&b'>') => {
                    lx.push(Tok::Arrow, start);
                    i += 2;
                    continue;
                }
                '-' => lx.push(Tok::Minus, start),
                c if c.is_ascii_digit() || c == '.' => {
                    while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                        i += 1;
                    }
                    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                        i += 1;
                        if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
                            i += 1;
                        }
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                    let text = &src[start..i];
                    let v: f64 = text
                        .parse()
                        .map_err(|_| lx.err(start, format!("bad number `{text}`")))?;
                    lx.toks.push((Tok::Num(v), start));
                    continue;
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                    {
                        i += 1;
                    }
                    let word = &src[start..i];
                    let tok = match word {
                        "G" => Tok::G,
                        "F" => Tok::F,
                        "U" => Tok::U,
                        _ => Tok::Ident(word.to_string()),
                    };
                    lx.toks.push((tok, start));
                    continue;
                }
                other => return Err(lx.err(start, format!("unexpected character `{other}`"))),
            }
            i += 1;
        }
        lx.toks.push((Tok::Eof, src.len()));
        Ok(lx.toks)
    }

    fn push(&mut self, t: Tok, at: usize) {
        self.toks.push((t, at));
    }

    fn err(&self, at: usize, msg: String) -> MtlError {
        let s = span_at(self.src, at);
        MtlError::Syntax {
            line: s.line,
            col: s.col,
            msg,
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    toks: Vec<(Tok, usize)>,
    pos: usize,
    spans: Vec<(String, Span)>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, msg: impl Into<String>) -> MtlError {
        let s = span_at(self.src, self.offset());
        MtlError::Syntax {
            line: s.line,
            col: s.col,
            msg: msg.into(),
        }
    }

    fn expect(&mut self, t: Tok, what: &str) -> Result<(), MtlError> {
        if *self.peek() == t {
            self.bump();
            Ok(())
        } else {
            Err(self.error(format!("expected {what}, found {}", describe(self.peek()))))
        }
    }

    fn formula(&mut self) -> Result<Formula, MtlError> {
        let lhs = self.or()?;
        if *self.peek() == Tok::Arrow {
            self.bump();
            let rhs = self.formula()?;
            return Ok(Formula::Implies(Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Formula, MtlError> {
        let mut items = vec![self.and()?];
        while *self.peek() == Tok::Or {
            self.bump();
            items.push(self.and()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            Formula::Or(items)
        })
    }

    fn and(&mut self) -> Result<Formula, MtlError> {
        let mut items = vec![self.unary()?];
        while *self.peek() == Tok::And {
            self.bump();
            items.push(self.unary()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            Formula::And(items)
        })
    }

    fn unary(&mut self) -> Result<Formula, MtlError> {
        match self.peek().clone() {
            Tok::Not => {
                self.bump();
                Ok(Formula::Not(Box::new(self.unary()?)))
            }
            Tok::G | Tok::F => {
                let op = self.bump();
                let interval = if *self.peek() == Tok::LBrack {
                    self.interval()?
                } else {
                    Interval::unbounded()
                };
                let child = Box::new(self.unary()?);
                Ok(if op == Tok::G {
                    Formula::Globally(interval, child)
                } else {
                    Formula::Eventually(interval, child)
                })
            }
            Tok::LParen => {
                self.bump();
                let inner = self.formula()?;
                if *self.peek() == Tok::U {
                    self.bump();
                    if *self.peek() != Tok::LBrack {
                        return Err(self.error("until requires a bounded interval `[a,b]`"));
                    }
                    let interval = self.interval()?;
                    let rhs = self.formula()?;
                    self.expect(Tok::RParen, "`)`")?;
                    return Ok(Formula::Until(interval, Box::new(inner), Box::new(rhs)));
                }
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                let span = span_at(self.src, self.offset());
                self.bump();
                self.spans.push((name.clone(), span));
                Ok(Formula::Pred(name))
            }
            other => Err(self.error(format!("expected a formula, found {}", describe(&other)))),
        }
    }

    fn number(&mut self) -> Result<f64, MtlError> {
        let neg = if *self.peek() == Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        match self.bump() {
            Tok::Num(v) => Ok(if neg { -v } else { v }),
            other => {
                self.pos -= 1;
                Err(self.error(format!("expected a number, found {}", describe(&other))))
            }
        }
    }

    fn interval(&mut self) -> Result<Interval, MtlError> {
        let at = self.offset();
        self.expect(Tok::LBrack, "`[`")?;
        let lo = self.number()?;
        self.expect(Tok::Comma, "`,`")?;
        let hi = self.number()?;
        self.expect(Tok::RBrack, "`]`")?;
        let s = span_at(self.src, at);
        if lo < 0.0 || hi < 0.0 {
            return Err(MtlError::Interval {
                line: s.line,
                col: s.col,
                msg: format!("negative bound in [{lo},{hi}]"),
            });
        }
        if lo > hi {
            return Err(MtlError::Interval {
                line: s.line,
                col: s.col,
                msg: format!("inverted interval [{lo},{hi}]"),
            });
        }
        Ok(Interval::new(lo, hi))
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("identifier `{s}`"),
        Tok::Num(v) => format!("number `{v}`"),
        Tok::Eof => "end of input".into(),
        other => format!("{other:?}"),
    }
}

/// Parses the concrete syntax into an AST.
pub fn parse(text: &str) -> Result<Formula, MtlError> {
    parse_spanned(text).map(|(f, _)| f)
}

/// Like [`parse`], also returning the source location of every predicate
/// reference (used to report unknown predicate names).
pub fn parse_spanned(text: &str) -> Result<(Formula, Vec<(String, Span)>), MtlError> {
    let toks = Lexer::run(text)?;
    let mut p = Parser {
        src: text,
        toks,
        pos: 0,
        spans: Vec::new(),
    };
    let f = p.formula()?;
    if *p.peek() != Tok::Eof {
        return Err(p.error(format!("unexpected {}", describe(p.peek()))));
    }
    Ok((f, p.spans))
}

/// Pushes negations down to the predicates.
pub fn to_nnf(f: &Formula) -> Result<Formula, MtlError> {
    nnf(f, false)
}

fn nnf(f: &Formula, neg: bool) -> Result<Formula, MtlError> {
    let all = |cs: &[Formula], neg: bool| {
        cs.iter()
            .map(|c| nnf(c, neg))
            .collect::<Result<Vec<_>, _>>()
    };
    Ok(match f {
        Formula::Pred(_) if neg => Formula::Not(Box::new(f.clone())),
        Formula::Pred(_) => f.clone(),
        Formula::Not(c) => nnf(c, !neg)?,
        Formula::And(cs) if neg => Formula::Or(all(cs, true)?),
        Formula::And(cs) => Formula::And(all(cs, false)?),
        Formula::Or(cs) if neg => Formula::And(all(cs, true)?),
        Formula::Or(cs) => Formula::Or(all(cs, false)?),
        Formula::Implies(a, b) if neg => Formula::And(vec![nnf(a, false)?, nnf(b, true)?]),
        Formula::Implies(a, b) => Formula::Or(vec![nnf(a, true)?, nnf(b, false)?]),
        Formula::Globally(i, c) if neg => Formula::Eventually(*i, Box::new(nnf(c, true)?)),
        Formula::Globally(i, c) => Formula::Globally(*i, Box::new(nnf(c, false)?)),
        Formula::Eventually(i, c) if neg => Formula::Globally(*i, Box::new(nnf(c, true)?)),
        Formula::Eventually(i, c) => Formula::Eventually(*i, Box::new(nnf(c, false)?)),
        Formula::Until(..) if neg => {
            return Err(MtlError::Unsupported(
                "negated until (no release operator)".into(),
            ));
        }
        Formula::Until(i, a, b) => {
            Formula::Until(*i, Box::new(nnf(a, false)?), Box::new(nnf(b, false)?))
        }
    })
}

pub fn is_nnf(f: &Formula) -> bool {
    match f {
        Formula::Pred(_) => true,
        Formula::Not(c) => matches!(**c, Formula::Pred(_)),
        Formula::Implies(..) => false,
        Formula::And(cs) | Formula::Or(cs) => cs.iter().all(is_nnf),
        Formula::Globally(_, c) | Formula::Eventually(_, c) => is_nnf(c),
        Formula::Until(_, a, b) => is_nnf(a) && is_nnf(b),
    }
}

/// Horizon bound in seconds: maximum over root-to-leaf paths of the sum of
/// interval upper bounds. Unbounded `G` contributes zero.
pub fn horizon_seconds(f: &Formula) -> Result<f64, MtlError> {
    fn h(f: &Formula) -> Result<f64, MtlError> {
        Ok(match f {
            Formula::Pred(_) => 0.0,
            Formula::Not(c) => h(c)?,
            Formula::And(cs) | Formula::Or(cs) => cs
                .iter()
                .map(h)
                .try_fold(0.0f64, |m, x| x.map(|x| m.max(x)))?,
            Formula::Implies(a, b) => h(a)?.max(h(b)?),
            Formula::Globally(i, c) => i.hi.unwrap_or(0.0) + h(c)?,
            Formula::Eventually(i, c) => match i.hi {
                Some(hi) => hi + h(c)?,
                None => {
                    return Err(MtlError::UnboundedHorizon(format!(
                        "unbounded eventually in `{f}`"
                    )))
                }
            },
            Formula::Until(i, a, b) => match i.hi {
                Some(hi) => hi + h(a)?.max(h(b)?),
                None => {
                    return Err(MtlError::UnboundedHorizon(format!(
                        "unbounded until in `{f}`"
                    )))
                }
            },
        })
    }
    h(&to_nnf(f)?)
}

/// Number of sample steps `N = ceil(H / dt)` the formula needs.
pub fn horizon(f: &Formula, dt: f64) -> Result<usize, MtlError> {
    if !(dt > 0.0) {
        return Err(MtlError::SampleTime(dt));
    }
    let h = horizon_seconds(f)?;
    Ok((h / dt - INDEX_EPS).ceil().max(0.0) as usize)
}

/// Occurrence identifier: position of a predicate leaf in left-to-right
/// order of the NNF tree.
pub type OccId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Safe,
    Unsafe,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredicateOccurrence {
    pub id: OccId,
    pub name: String,
    pub polarity: Polarity,
}

/// Lists the predicate leaves of an NNF formula; a leaf is unsafe iff negated.
pub fn classify_occurrences(f: &Formula) -> Result<Vec<PredicateOccurrence>, MtlError> {
    if !is_nnf(f) {
        return Err(MtlError::NotNnf);
    }
    Ok(NnfFormula::from_nnf(f).occurrences)
}

/// NNF formula tree with occurrence ids on its leaves; the form consumed by
/// the monitor and the encoder.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Lit(OccId),
    And(Vec<Node>),
    Or(Vec<Node>),
    Globally(Interval, Box<Node>),
    Eventually(Interval, Box<Node>),
    Until(Interval, Box<Node>, Box<Node>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnfFormula {
    pub formula: Formula,
    pub root: Node,
    pub occurrences: Vec<PredicateOccurrence>,
}

impl NnfFormula {
    /// Normalizes `f` and numbers its predicate leaves.
    pub fn new(f: &Formula) -> Result<Self, MtlError> {
        Ok(Self::from_nnf(&to_nnf(f)?))
    }

    pub fn parse(text: &str) -> Result<Self, MtlError> {
        Self::new(&parse(text)?)
    }

    fn from_nnf(f: &Formula) -> Self {
        fn build(f: &Formula, occ: &mut Vec<PredicateOccurrence>) -> Node {
            let mut lit = |name: &str, polarity| {
                let id = occ.len();
                occ.push(PredicateOccurrence {
                    id,
                    name: name.to_string(),
                    polarity,
                });
                Node::Lit(id)
            };
            match f {
                Formula::Pred(p) => lit(p, Polarity::Safe),
                Formula::Not(c) => match &**c {
                    Formula::Pred(p) => lit(p, Polarity::Unsafe),
                    _ => unreachable!("input is in NNF"),
                },
                Formula::And(cs) => Node::And(cs.iter().map(|c| build(c, occ)).collect()),
                Formula::Or(cs) => Node::Or(cs.iter().map(|c| build(c, occ)).collect()),
                Formula::Implies(..) => unreachable!("input is in NNF"),
                Formula::Globally(i, c) => Node::Globally(*i, Box::new(build(c, occ))),
                Formula::Eventually(i, c) => Node::Eventually(*i, Box::new(build(c, occ))),
                Formula::Until(i, a, b) => {
                    let a = build(a, occ);
                    let b = build(b, occ);
                    Node::Until(*i, Box::new(a), Box::new(b))
                }
            }
        }
        let mut occurrences = Vec::new();
        let root = build(f, &mut occurrences);
        NnfFormula {
            formula: f.clone(),
            root,
            occurrences,
        }
    }

    pub fn horizon(&self, dt: f64) -> Result<usize, MtlError> {
        horizon(&self.formula, dt)
    }

    /// True for formulas built only from conjunction, globally and literals:
    /// the fragment on which lazy synthesis is exact.
    pub fn is_conjunctive_globally(&self) -> bool {
        fn ok(n: &Node) -> bool {
            match n {
                Node::Lit(_) => true,
                Node::And(cs) => cs.iter().all(ok),
                Node::Globally(_, c) => ok(c),
                _ => false,
            }
        }
        ok(&self.root)
    }

    /// Sample indices at which each occurrence is consulted when the
    /// formula is evaluated at index 0 over a trajectory with last index `n`.
    pub fn occurrence_windows(&self, dt: f64, n: usize) -> Vec<BTreeSet<usize>> {
        fn shift(starts: &BTreeSet<usize>, i: &Interval, dt: f64, n: usize) -> BTreeSet<usize> {
            let (lo, hi) = i.index_offsets(dt);
            let mut out = BTreeSet::new();
            for &k in starts {
                let end = hi.map_or(n, |h| (k + h).min(n));
                for j in (k + lo)..=end {
                    out.insert(j);
                }
            }
            out
        }
        fn walk(
            node: &Node,
            starts: &BTreeSet<usize>,
            dt: f64,
            n: usize,
            out: &mut [BTreeSet<usize>],
        ) {
            match node {
                Node::Lit(o) => out[*o].extend(starts.iter().copied()),
                Node::And(cs) | Node::Or(cs) => cs.iter().for_each(|c| walk(c, starts, dt, n, out)),
                Node::Globally(i, c) | Node::Eventually(i, c) => {
                    walk(c, &shift(starts, i, dt, n), dt, n, out)
                }
                Node::Until(i, a, b) => {
                    let rhs = shift(starts, i, dt, n);
                    // lhs is consulted on [start, k') for every candidate k'
                    let mut lhs = BTreeSet::new();
                    for &k in starts {
                        let (_, hi) = i.index_offsets(dt);
                        let end = hi.map_or(n, |h| (k + h).min(n));
                        lhs.extend(k..end);
                    }
                    walk(a, &lhs, dt, n, out);
                    walk(b, &rhs, dt, n, out);
                }
            }
        }
        let mut out = vec![BTreeSet::new(); self.occurrences.len()];
        walk(&self.root, &BTreeSet::from([0]), dt, n, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(n: &str) -> Formula {
        Formula::pred(n)
    }

    #[test]
    fn parses_reach_avoid() {
        let f = parse("(G !unsafe) & (G[8.5,10] goal)").unwrap();
        assert_eq!(
            f,
            Formula::And(vec![
                Formula::globally(Interval::unbounded(), Formula::not(p("unsafe"))),
                Formula::globally(Interval::new(8.5, 10.0), p("goal")),
            ])
        );
    }

    #[test]
    fn parses_nested_eventually() {
        let f = parse("(G !unsafe) & F[5.5,7.5] (G[0,1.5] goal)").unwrap();
        assert_eq!(
            f,
            Formula::And(vec![
                Formula::globally(Interval::unbounded(), Formula::not(p("unsafe"))),
                Formula::eventually(
                    Interval::new(5.5, 7.5),
                    Formula::globally(Interval::new(0.0, 1.5), p("goal"))
                ),
            ])
        );
    }

    #[test]
    fn parses_single_predicate_and_keyword_prefixed_names() {
        assert_eq!(parse("p").unwrap(), p("p"));
        assert_eq!(parse("Goal").unwrap(), p("Goal"));
        assert_eq!(
            parse("G Goal").unwrap(),
            Formula::globally(Interval::unbounded(), p("Goal"))
        );
    }

    #[test]
    fn precedence_and_associativity() {
        // & binds tighter than |, -> is weakest and right-associative
        let f = parse("a | b & c -> d -> e").unwrap();
        let expected = Formula::Implies(
            Box::new(Formula::Or(vec![
                p("a"),
                Formula::And(vec![p("b"), p("c")]),
            ])),
            Box::new(Formula::Implies(Box::new(p("d")), Box::new(p("e")))),
        );
        assert_eq!(f, expected);
    }

    #[test]
    fn parses_until() {
        let f = parse("(a U[0,2] b)").unwrap();
        assert_eq!(f, Formula::until(Interval::new(0.0, 2.0), p("a"), p("b")));
        assert!(matches!(parse("(a U b)"), Err(MtlError::Syntax { .. })));
    }

    #[test]
    fn reports_positions() {
        match parse("G[1,2]\n  & goal") {
            Err(MtlError::Syntax { line, col, .. }) => assert_eq!((line, col), (2, 3)),
            other => panic!("{other:?}"),
        }
        match parse("F[3,1] p") {
            Err(MtlError::Interval { line, col, .. }) => assert_eq!((line, col), (1, 2)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("F[-1,1] p"), Err(MtlError::Interval { .. })));
        assert!(matches!(parse("p q"), Err(MtlError::Syntax { .. })));
        assert!(matches!(parse("p $"), Err(MtlError::Syntax { .. })));
    }

    #[test]
    fn spans_of_predicates() {
        let (_, spans) = parse_spanned("G a &\n b").unwrap();
        assert_eq!(
            spans,
            vec![
                ("a".to_string(), Span { line: 1, col: 3 }),
                ("b".to_string(), Span { line: 2, col: 2 })
            ]
        );
    }

    #[test]
    fn nnf_rewrites() {
        let i = Interval::new(0.0, 1.0);
        assert_eq!(
            to_nnf(&Formula::not(Formula::globally(i, p("p")))).unwrap(),
            Formula::eventually(i, Formula::not(p("p")))
        );
        assert_eq!(
            to_nnf(&Formula::not(Formula::And(vec![p("p"), p("q")]))).unwrap(),
            Formula::Or(vec![Formula::not(p("p")), Formula::not(p("q"))])
        );
        assert_eq!(
            to_nnf(&Formula::Implies(Box::new(p("p")), Box::new(p("q")))).unwrap(),
            Formula::Or(vec![Formula::not(p("p")), p("q")])
        );
        assert_eq!(to_nnf(&Formula::not(Formula::not(p("p")))).unwrap(), p("p"));
        assert!(matches!(
            to_nnf(&Formula::not(Formula::until(i, p("a"), p("b")))),
            Err(MtlError::Unsupported(_))
        ));
    }

    #[test]
    fn horizon_examples() {
        let phi1 = parse("(G !unsafe) & (G[8.5,10] goal)").unwrap();
        assert_eq!(horizon(&phi1, 0.5).unwrap(), 20);
        let phi2 = parse("(G !unsafe) & F[5.5,7.5] (G[0,1.5] goal)").unwrap();
        assert_eq!(horizon(&phi2, 0.5).unwrap(), 18);
        assert_eq!(horizon(&p("p"), 0.5).unwrap(), 0);
        assert!(matches!(
            horizon(&parse("F p").unwrap(), 0.5),
            Err(MtlError::UnboundedHorizon(_))
        ));
        assert!(matches!(
            horizon(&parse("!G p").unwrap(), 0.5),
            Err(MtlError::UnboundedHorizon(_))
        ));
        assert!(matches!(
            horizon(&p("p"), 0.0),
            Err(MtlError::SampleTime(_))
        ));
        // until: interval bound plus the deeper operand
        assert_eq!(
            horizon(&parse("(G[0,1] a U[0,2] b)").unwrap(), 1.0).unwrap(),
            3
        );
    }

    #[test]
    fn occurrences_of_phi1_and_contradiction() {
        let f = to_nnf(&parse("(G !unsafe) & (G[8.5,10] goal)").unwrap()).unwrap();
        let occ = classify_occurrences(&f).unwrap();
        assert_eq!(occ.len(), 2);
        assert_eq!(
            (occ[0].name.as_str(), occ[0].polarity),
            ("unsafe", Polarity::Unsafe)
        );
        assert_eq!(
            (occ[1].name.as_str(), occ[1].polarity),
            ("goal", Polarity::Safe)
        );

        let g = to_nnf(&parse("p & !p").unwrap()).unwrap();
        let occ = classify_occurrences(&g).unwrap();
        assert_eq!(
            occ.iter().map(|o| o.polarity).collect::<Vec<_>>(),
            vec![Polarity::Safe, Polarity::Unsafe]
        );
        assert_eq!(occ[0].name, occ[1].name);
        assert_ne!(occ[0].id, occ[1].id);

        assert_eq!(
            classify_occurrences(&parse("!!p").unwrap()),
            Err(MtlError::NotNnf)
        );
    }

    #[test]
    fn fragment_detection() {
        assert!(NnfFormula::parse("(G !unsafe) & (G[8.5,10] goal)")
            .unwrap()
            .is_conjunctive_globally());
        assert!(
            !NnfFormula::parse("(G !unsafe) & F[5.5,7.5] (G[0,1.5] goal)")
                .unwrap()
                .is_conjunctive_globally()
        );
        assert!(!NnfFormula::parse("a | b")
            .unwrap()
            .is_conjunctive_globally());
    }

    #[test]
    fn windows_follow_interval_offsets() {
        let f = NnfFormula::parse("(G !unsafe) & (G[8.5,10] goal)").unwrap();
        let w = f.occurrence_windows(0.5, 20);
        assert_eq!(w[0], (0..=20).collect());
        assert_eq!(w[1], (17..=20).collect());
        let f2 = NnfFormula::parse("F[5.5,7.5] (G[0,1.5] goal)").unwrap();
        assert_eq!(f2.occurrence_windows(0.5, 18)[0], (11..=18).collect());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn interval() -> impl Strategy<Value = Interval> {
            (0u32..4, 0u32..4)
                .prop_map(|(a, w)| Interval::new(a as f64 * 0.5, (a + w) as f64 * 0.5))
        }

        pub(crate) fn formula() -> impl Strategy<Value = Formula> {
            let leaf = prop_oneof![
                Just(Formula::pred("a")),
                Just(Formula::pred("b")),
                Just(Formula::pred("c"))
            ];
            leaf.prop_recursive(4, 24, 3, |inner| {
                prop_oneof![
                    inner.clone().prop_map(Formula::not),
                    prop::collection::vec(inner.clone(), 2..3).prop_map(Formula::And),
                    prop::collection::vec(inner.clone(), 2..3).prop_map(Formula::Or),
                    (inner.clone(), inner.clone())
                        .prop_map(|(a, b)| Formula::Implies(Box::new(a), Box::new(b))),
                    (interval(), inner.clone()).prop_map(|(i, c)| Formula::globally(i, c)),
                    (interval(), inner.clone()).prop_map(|(i, c)| Formula::eventually(i, c)),
                ]
            })
        }

        proptest! {
            #[test]
            fn nnf_is_idempotent(f in formula()) {
                let once = to_nnf(&f).unwrap();
                prop_assert!(is_nnf(&once));
                prop_assert_eq!(to_nnf(&once).unwrap(), once);
            }

            #[test]
            fn display_round_trips(f in formula()) {
                prop_assert_eq!(parse(&f.to_string()).unwrap(), f);
            }

            #[test]
            fn horizon_is_monotone(f in formula(), widen in 0u32..4) {
                fn widen_first(f: &Formula, by: f64, done: &mut bool) -> Formula {
                    let rec = |c: &Formula, done: &mut bool| Box::new(widen_first(c, by, done));
                    match f {
                        Formula::Globally(i, c) | Formula::Eventually(i, c) if !*done => {
                            *done = true;
                            let j = Interval::new(i.lo, i.hi.unwrap() + by);
                            if matches!(f, Formula::Globally(..)) { Formula::Globally(j, c.clone()) } else { Formula::Eventually(j, c.clone()) }
                        }
                        Formula::Pred(_) => f.clone(),
                        Formula::Not(c) => Formula::Not(rec(c, done)),
                        Formula::Globally(i, c) => Formula::Globally(*i, rec(c, done)),
                        Formula::Eventually(i, c) => Formula::Eventually(*i, rec(c, done)),
                        Formula::And(cs) => Formula::And(cs.iter().map(|c| widen_first(c, by, done)).collect()),
                        Formula::Or(cs) => Formula::Or(cs.iter().map(|c| widen_first(c, by, done)).collect()),
                        Formula::Implies(a, b) => { let a = rec(a, done); Formula::Implies(a, rec(b, done)) }
                        Formula::Until(i, a, b) => { let a = rec(a, done); Formula::Until(*i, a, rec(b, done)) }
                    }
                }
                let g = widen_first(&f, widen as f64 * 0.5, &mut false);
                prop_assert!(horizon(&g, 0.5).unwrap() >= horizon(&f, 0.5).unwrap());
            }
        }
    }
}
