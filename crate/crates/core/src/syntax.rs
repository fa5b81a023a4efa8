//! First-order formulas over a relational signature, their concrete text
//! syntax, finite transformations of variable indices and capture-avoiding
//! simultaneous substitution.
//!
//! Variables are plain indices `v0, v1, ...`. The text grammar is
//!
//! ```text
//! or      := and ('|' and)*
//! and     := unary ('&' unary)*
//! unary   := '~' unary | 'E' var unary | primary
//! primary := 'true' | 'false' | '(' or ')' | var '=' var | ident '(' var (',' var)* ')'
//! var     := 'v' digits
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A variable index.
pub type Var = usize;

/// A finite set of variable indices.
pub type VarSet = BTreeSet<Var>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SyntaxError {
    #[error("syntax error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("unknown relation symbol `{0}`")]
    UnknownRelation(String),
    #[error("relation `{symbol}` has arity {expected}, got {found} arguments")]
    ArityMismatch {
        symbol: String,
        expected: usize,
        found: usize,
    },
    #[error("equality atom used but the signature is without equality")]
    EqualityNotInSignature,
    #[error("invalid signature: {0}")]
    InvalidSignature(String),
}

/// Whether the language has equality (cylindric algebras) or not
/// (quasi-polyadic algebras).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "with-equality")]
    WithEquality,
    #[serde(rename = "without-equality")]
    WithoutEquality,
}

impl Mode {
    pub fn has_equality(self) -> bool {
        matches!(self, Mode::WithEquality)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::WithEquality => f.write_str("with-equality"),
            Mode::WithoutEquality => f.write_str("without-equality"),
        }
    }
}

/// A relational signature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Signature {
    pub name: String,
    pub relations: Vec<(String, usize)>,
    pub mode: Mode,
}

fn is_var_token(s: &str) -> bool {
    s.len() > 1 && s.starts_with('v') && s[1..].bytes().all(|b| b.is_ascii_digit())
}

impl Signature {
    pub fn new(name: impl Into<String>, relations: Vec<(String, usize)>, mode: Mode) -> Result<Self, SyntaxError> {
        let mut seen = BTreeSet::new();
        for (sym, arity) in &relations {
            if *arity == 0 {
                return Err(SyntaxError::InvalidSignature(format!(
                    "relation `{sym}` must have positive arity"
                )));
            }
            let valid_ident = sym.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
                && sym.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
            if !valid_ident || is_var_token(sym) || ["E", "true", "false"].contains(&sym.as_str()) {
                return Err(SyntaxError::InvalidSignature(format!(
                    "`{sym}` is not a usable relation symbol"
                )));
            }
            if !seen.insert(sym.clone()) {
                return Err(SyntaxError::InvalidSignature(format!(
                    "relation `{sym}` declared twice"
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            relations,
            mode,
        })
    }

    pub fn arity(&self, symbol: &str) -> Option<usize> {
        self.relations.iter().find(|(s, _)| s == symbol).map(|(_, a)| *a)
    }

    /// Checks that `f` respects this signature.
    pub fn check(&self, f: &Formula) -> Result<(), SyntaxError> {
        match f {
            Formula::True | Formula::False => Ok(()),
            Formula::Rel(sym, args) => match self.arity(sym) {
                None => Err(SyntaxError::UnknownRelation(sym.to_string())),
                Some(a) if a != args.len() => Err(SyntaxError::ArityMismatch {
                    symbol: sym.to_string(),
                    expected: a,
                    found: args.len(),
                }),
                Some(_) => Ok(()),
            },
            Formula::Eq(..) => {
                if self.mode.has_equality() {
                    Ok(())
                } else {
                    Err(SyntaxError::EqualityNotInSignature)
                }
            }
            Formula::Not(g) | Formula::Exists(_, g) => self.check(g),
            Formula::And(a, b) | Formula::Or(a, b) => {
                self.check(a)?;
                self.check(b)
            }
        }
    }
}

/// A first-order formula. Relation symbols are shared strings, so cloning is
/// cheap relative to the tree size.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Formula {
    True,
    False,
    Rel(Arc<str>, Vec<Var>),
    Eq(Var, Var),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Exists(Var, Box<Formula>),
}

impl Formula {
    pub fn rel(symbol: &str, args: Vec<Var>) -> Self {
        Formula::Rel(Arc::from(symbol), args)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Self {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Self {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn exists(v: Var, f: Formula) -> Self {
        Formula::Exists(v, Box::new(f))
    }

    /// Left-nested conjunction; `true` for an empty list.
    pub fn conj<I: IntoIterator<Item = Formula>>(items: I) -> Self {
        items.into_iter().reduce(Formula::and).unwrap_or(Formula::True)
    }

    /// Left-nested disjunction; `false` for an empty list.
    pub fn disj<I: IntoIterator<Item = Formula>>(items: I) -> Self {
        items.into_iter().reduce(Formula::or).unwrap_or(Formula::False)
    }

    pub fn is_atomic(&self) -> bool {
        matches!(
            self,
            Formula::True | Formula::False | Formula::Rel(..) | Formula::Eq(..)
        )
    }

    pub fn depth(&self) -> usize {
        match self {
            Formula::True | Formula::False | Formula::Rel(..) | Formula::Eq(..) => 0,
            Formula::Not(g) | Formula::Exists(_, g) => 1 + g.depth(),
            Formula::And(a, b) | Formula::Or(a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    pub fn has_quantifier(&self) -> bool {
        match self {
            Formula::Exists(..) => true,
            Formula::Not(g) => g.has_quantifier(),
            Formula::And(a, b) | Formula::Or(a, b) => a.has_quantifier() || b.has_quantifier(),
            _ => false,
        }
    }

    /// Every variable index occurring in the formula, free or bound.
    pub fn vars(&self) -> VarSet {
        let mut out = VarSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut VarSet) {
        match self {
            Formula::True | Formula::False => {}
            Formula::Rel(_, args) => out.extend(args.iter().copied()),
            Formula::Eq(i, j) => {
                out.insert(*i);
                out.insert(*j);
            }
            Formula::Not(g) => g.collect_vars(out),
            Formula::Exists(v, g) => {
                out.insert(*v);
                g.collect_vars(out);
            }
            Formula::And(a, b) | Formula::Or(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Pushes top-level conjuncts onto `out`.
    pub fn flatten_and<'a>(&'a self, out: &mut Vec<&'a Formula>) {
        match self {
            Formula::And(a, b) => {
                a.flatten_and(out);
                b.flatten_and(out);
            }
            Formula::True => {}
            f => out.push(f),
        }
    }
}

/// The exact set of variables occurring free in `f`.
pub fn free_vars(f: &Formula) -> VarSet {
    match f {
        Formula::True | Formula::False => VarSet::new(),
        Formula::Rel(_, args) => args.iter().copied().collect(),
        Formula::Eq(i, j) => [*i, *j].into_iter().collect(),
        Formula::Not(g) => free_vars(g),
        Formula::And(a, b) | Formula::Or(a, b) => {
            let mut s = free_vars(a);
            s.extend(free_vars(b));
            s
        }
        Formula::Exists(v, g) => {
            let mut s = free_vars(g);
            s.remove(v);
            s
        }
    }
}

// ---------------------------------------------------------------------------
// Printing

fn fmt_binary_operand(f: &mut fmt::Formatter<'_>, operand: &Formula, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({operand})")
    } else {
        write!(f, "{operand}")
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::True => f.write_str("true"),
            Formula::False => f.write_str("false"),
            Formula::Rel(sym, args) => {
                write!(f, "{sym}(")?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "v{a}")?;
                }
                f.write_str(")")
            }
            Formula::Eq(i, j) => write!(f, "v{i} = v{j}"),
            Formula::Not(g) => {
                f.write_str("~")?;
                let parens = matches!(**g, Formula::And(..) | Formula::Or(..));
                fmt_binary_operand(f, g, parens)
            }
            Formula::Exists(v, g) => write!(f, "E v{v} ({g})"),
            Formula::And(a, b) => {
                fmt_binary_operand(f, a, matches!(**a, Formula::Or(..)))?;
                f.write_str(" & ")?;
                fmt_binary_operand(f, b, matches!(**b, Formula::And(..) | Formula::Or(..)))
            }
            Formula::Or(a, b) => {
                fmt_binary_operand(f, a, false)?;
                f.write_str(" | ")?;
                fmt_binary_operand(f, b, matches!(**b, Formula::Or(..)))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Var(Var),
    LParen,
    RParen,
    Comma,
    Tilde,
    Amp,
    Bar,
    Equals,
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, SyntaxError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let tok = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b',' => Tok::Comma,
            b'~' => Tok::Tilde,
            b'&' => Tok::Amp,
            b'|' => Tok::Bar,
            b'=' => Tok::Equals,
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                let word = &text[start..i];
                let tok = if is_var_token(word) {
                    let v = word[1..].parse().map_err(|_| SyntaxError::Parse {
                        pos: start,
                        msg: format!("variable index out of range in `{word}`"),
                    })?;
                    Tok::Var(v)
                } else {
                    Tok::Ident(word.to_string())
                };
                out.push((start, tok));
                continue;
            }
            _ => {
                return Err(SyntaxError::Parse {
                    pos: i,
                    msg: format!("unexpected character `{}`", text[i..].chars().next().unwrap()),
                })
            }
        };
        out.push((i, tok));
        i += 1;
    }
    Ok(out)
}

struct Parser<'s> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
    sig: &'s Signature,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(p, _)| *p)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, SyntaxError> {
        Err(SyntaxError::Parse {
            pos: self.offset(),
            msg: msg.into(),
        })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), SyntaxError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected {what}"))
        }
    }

    fn var(&mut self) -> Result<Var, SyntaxError> {
        match self.peek() {
            Some(Tok::Var(v)) => {
                let v = *v;
                self.pos += 1;
                Ok(v)
            }
            _ => self.err("expected a variable `vN`"),
        }
    }

    fn or(&mut self) -> Result<Formula, SyntaxError> {
        let mut lhs = self.and()?;
        while self.peek() == Some(&Tok::Bar) {
            self.pos += 1;
            let rhs = self.and()?;
            lhs = Formula::or(lhs, rhs);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Formula, SyntaxError> {
        let mut lhs = self.unary()?;
        while self.peek() == Some(&Tok::Amp) {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Formula::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula, SyntaxError> {
        match self.peek() {
            Some(Tok::Tilde) => {
                self.pos += 1;
                Ok(Formula::not(self.unary()?))
            }
            Some(Tok::Ident(w)) if w == "E" => {
                self.pos += 1;
                let v = self.var()?;
                Ok(Formula::exists(v, self.unary()?))
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Formula, SyntaxError> {
        match self.peek().cloned() {
            Some(Tok::LParen) => {
                self.pos += 1;
                let f = self.or()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(f)
            }
            Some(Tok::Var(i)) => {
                self.pos += 1;
                self.expect(Tok::Equals, "`=` after a variable")?;
                let j = self.var()?;
                if !self.sig.mode.has_equality() {
                    return Err(SyntaxError::EqualityNotInSignature);
                }
                Ok(Formula::Eq(i, j))
            }
            Some(Tok::Ident(w)) if w == "true" => {
                self.pos += 1;
                Ok(Formula::True)
            }
            Some(Tok::Ident(w)) if w == "false" => {
                self.pos += 1;
                Ok(Formula::False)
            }
            Some(Tok::Ident(sym)) => {
                self.pos += 1;
                self.expect(Tok::LParen, "`(` after relation symbol")?;
                let mut args = vec![self.var()?];
                while self.peek() == Some(&Tok::Comma) {
                    self.pos += 1;
                    args.push(self.var()?);
                }
                self.expect(Tok::RParen, "`)` closing the argument list")?;
                let Some(arity) = self.sig.arity(&sym) else {
                    return Err(SyntaxError::UnknownRelation(sym));
                };
                if arity != args.len() {
                    return Err(SyntaxError::ArityMismatch {
                        symbol: sym,
                        expected: arity,
                        found: args.len(),
                    });
                }
                Ok(Formula::rel(&sym, args))
            }
            Some(_) => self.err("expected a formula"),
            None => self.err("unexpected end of input"),
        }
    }
}

/// Parses `text` as a formula over `sig`.
pub fn parse_formula(text: &str, sig: &Signature) -> Result<Formula, SyntaxError> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: text.len(),
        sig,
    };
    let f = p.or()?;
    if p.pos != p.toks.len() {
        return p.err("trailing input");
    }
    Ok(f)
}

// ---------------------------------------------------------------------------
// Finite transformations

/// A map ω → ω that is the identity outside a finite support.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct FiniteTransformation {
    pairs: BTreeMap<Var, Var>,
}

impl FiniteTransformation {
    pub fn identity() -> Self {
        Self::default()
    }

    /// `[i|j]`: sends `i` to `j`, fixes everything else.
    pub fn replacement(i: Var, j: Var) -> Self {
        Self::from_pairs([(i, j)])
    }

    /// `[i,j]`: swaps `i` and `j`.
    pub fn transposition(i: Var, j: Var) -> Self {
        Self::from_pairs([(i, j), (j, i)])
    }

    /// Builds a transformation from `(index, image)` pairs. Later pairs for
    /// the same index win; fixed points are dropped.
    pub fn from_pairs<I: IntoIterator<Item = (Var, Var)>>(pairs: I) -> Self {
        let mut map = BTreeMap::new();
        for (i, j) in pairs {
            map.insert(i, j);
        }
        map.retain(|i, j| i != j);
        Self { pairs: map }
    }

    /// The transformation sending `k ↦ values[k]` for `k < values.len()`.
    pub fn from_prefix(values: &[Var]) -> Self {
        Self::from_pairs(values.iter().copied().enumerate())
    }

    pub fn apply(&self, i: Var) -> Var {
        self.pairs.get(&i).copied().unwrap_or(i)
    }

    pub fn is_identity(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn support(&self) -> VarSet {
        self.pairs.keys().copied().collect()
    }

    pub fn image_of_support(&self) -> VarSet {
        self.pairs.values().copied().collect()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (Var, Var)> + '_ {
        self.pairs.iter().map(|(i, j)| (*i, *j))
    }

    /// `self ∘ other`, i.e. `i ↦ self(other(i))`.
    pub fn compose(&self, other: &FiniteTransformation) -> FiniteTransformation {
        let mut keys: VarSet = self.support();
        keys.extend(other.support());
        Self::from_pairs(keys.into_iter().map(|i| (i, self.apply(other.apply(i)))))
    }

    /// The transformation agreeing with `self` except that `i ↦ j`.
    pub fn with(&self, i: Var, j: Var) -> FiniteTransformation {
        let mut pairs = self.pairs.clone();
        pairs.insert(i, j);
        Self::from_pairs(pairs)
    }

    pub fn is_bijection(&self) -> bool {
        let img = self.image_of_support();
        img.len() == self.pairs.len() && img == self.support()
    }

    pub fn inverse(&self) -> Option<FiniteTransformation> {
        self.is_bijection()
            .then(|| Self::from_pairs(self.pairs.iter().map(|(i, j)| (*j, *i))))
    }

    /// Parses a product of literals such as `[0,1][2|0]`. The written product
    /// `[a][b]` denotes `a ∘ b`.
    pub fn parse(text: &str) -> Result<Self, SyntaxError> {
        let mut acc = Self::identity();
        let mut rest = text.trim();
        let base = text.len() - text.trim_start().len();
        let err = |rest: &str, msg: &str| SyntaxError::Parse {
            pos: base + (text.trim().len() - rest.len()),
            msg: msg.to_string(),
        };
        if rest.is_empty() {
            return Ok(acc);
        }
        while !rest.is_empty() {
            if !rest.starts_with('[') {
                return Err(err(rest, "expected `[`"));
            }
            let close = rest.find(']').ok_or_else(|| err(rest, "unclosed `[`"))?;
            let body = &rest[1..close];
            let (sep, lit) = if let Some((a, b)) = body.split_once('|') {
                ('|', (a, b))
            } else if let Some((a, b)) = body.split_once(',') {
                (',', (a, b))
            } else {
                return Err(err(rest, "expected `[i|j]` or `[i,j]`"));
            };
            let parse_idx = |s: &str| -> Result<Var, SyntaxError> {
                let s = s.trim();
                let s = s.strip_prefix('v').unwrap_or(s);
                s.parse().map_err(|_| err(rest, "expected a variable index"))
            };
            let (i, j) = (parse_idx(lit.0)?, parse_idx(lit.1)?);
            let step = if sep == '|' {
                Self::replacement(i, j)
            } else {
                Self::transposition(i, j)
            };
            acc = acc.compose(&step);
            rest = rest[close + 1..].trim_start();
        }
        Ok(acc)
    }
}

impl fmt::Display for FiniteTransformation {
    /// Prints the transformation as a list of `i->j` pairs, `id` when empty.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.pairs.is_empty() {
            return f.write_str("id");
        }
        f.write_str("{")?;
        for (k, (i, j)) in self.pairs.iter().enumerate() {
            if k > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{i}->{j}")?;
        }
        f.write_str("}")
    }
}

impl Serialize for Formula {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl Serialize for FiniteTransformation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

/// Simultaneous substitution of `v_{τ(i)}` for every free `v_i`. A bound
/// variable that would capture a substituted index is renamed to the least
/// index occurring neither in the quantified subformula nor in the support or
/// image of `τ`.
pub fn apply_transformation(tau: &FiniteTransformation, f: &Formula) -> Formula {
    if tau.is_identity() {
        return f.clone();
    }
    match f {
        Formula::True | Formula::False => f.clone(),
        Formula::Rel(sym, args) => Formula::Rel(sym.clone(), args.iter().map(|&a| tau.apply(a)).collect()),
        Formula::Eq(i, j) => Formula::Eq(tau.apply(*i), tau.apply(*j)),
        Formula::Not(g) => Formula::not(apply_transformation(tau, g)),
        Formula::And(a, b) => Formula::and(apply_transformation(tau, a), apply_transformation(tau, b)),
        Formula::Or(a, b) => Formula::or(apply_transformation(tau, a), apply_transformation(tau, b)),
        Formula::Exists(v, body) => {
            let fv = free_vars(f);
            let restricted = FiniteTransformation::from_pairs(fv.iter().map(|&u| (u, tau.apply(u))));
            let captures = fv.iter().any(|&u| tau.apply(u) == *v);
            if !captures {
                return Formula::exists(*v, apply_transformation(&restricted, body));
            }
            let mut avoid = f.vars();
            avoid.extend(tau.support());
            avoid.extend(tau.image_of_support());
            let fresh = (0..).find(|k| !avoid.contains(k)).unwrap();
            let inner = restricted.with(*v, fresh);
            Formula::exists(fresh, apply_transformation(&inner, body))
        }
    }
}

// ---------------------------------------------------------------------------
// Enumeration

/// Enumerates formulas over a signature and the variables `v0..v{n-1}` in a
/// fixed order: by depth, then by printed text. Equality atoms `vi = vj` are
/// produced for `i < j` only.
#[derive(Debug, Clone)]
pub struct FormulaEnumerator {
    sig: Signature,
    nvars: usize,
    levels: Vec<Vec<Formula>>,
}

fn sort_by_text(mut v: Vec<Formula>) -> Vec<Formula> {
    let mut keyed: Vec<(String, Formula)> = v.drain(..).map(|f| (f.to_string(), f)).collect();
    keyed.sort();
    keyed.dedup_by(|a, b| a.0 == b.0);
    keyed.into_iter().map(|(_, f)| f).collect()
}

fn tuples(nvars: usize, arity: usize) -> Vec<Vec<Var>> {
    let mut out = vec![Vec::new()];
    for _ in 0..arity {
        out = out
            .into_iter()
            .flat_map(|t| {
                (0..nvars).map(move |v| {
                    let mut t = t.clone();
                    t.push(v);
                    t
                })
            })
            .collect();
    }
    out
}

impl FormulaEnumerator {
    pub fn new(sig: &Signature, nvars: usize) -> Self {
        Self {
            sig: sig.clone(),
            nvars,
            levels: Vec::new(),
        }
    }

    fn level_zero(&self) -> Vec<Formula> {
        let mut out = vec![Formula::True, Formula::False];
        for (sym, arity) in &self.sig.relations {
            for t in tuples(self.nvars, *arity) {
                out.push(Formula::rel(sym, t));
            }
        }
        if self.sig.mode.has_equality() {
            for i in 0..self.nvars {
                for j in i + 1..self.nvars {
                    out.push(Formula::Eq(i, j));
                }
            }
        }
        sort_by_text(out)
    }

    fn build_level(&mut self, d: usize) {
        while self.levels.len() <= d {
            let k = self.levels.len();
            let next = if k == 0 {
                self.level_zero()
            } else {
                let prev = &self.levels[k - 1];
                let lower: Vec<&Formula> = self.levels.iter().flatten().collect();
                let mut out = Vec::new();
                for f in prev {
                    out.push(Formula::not(f.clone()));
                    for v in 0..self.nvars {
                        out.push(Formula::exists(v, f.clone()));
                    }
                }
                for a in &lower {
                    for b in &lower {
                        if a.depth() == k - 1 || b.depth() == k - 1 {
                            out.push(Formula::and((*a).clone(), (*b).clone()));
                            out.push(Formula::or((*a).clone(), (*b).clone()));
                        }
                    }
                }
                sort_by_text(out)
            };
            self.levels.push(next);
        }
    }

    /// All formulas of exactly depth `d`, in enumeration order.
    pub fn level(&mut self, d: usize) -> &[Formula] {
        self.build_level(d);
        &self.levels[d]
    }

    /// The first `n` formulas of the enumeration.
    pub fn take(&mut self, n: usize) -> Vec<Formula> {
        let mut out = Vec::with_capacity(n);
        let mut d = 0;
        while out.len() < n {
            let level = self.level(d).to_vec();
            if level.is_empty() {
                break;
            }
            out.extend(level.into_iter().take(n - out.len()));
            d += 1;
        }
        out
    }

    /// All formulas of depth at most `d`.
    pub fn up_to_depth(&mut self, d: usize) -> Vec<Formula> {
        (0..=d).flat_map(|k| self.level(k).to_vec()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lt_sig(mode: Mode) -> Signature {
        Signature::new("lt", vec![("lt".into(), 2)], mode).unwrap()
    }

    #[test]
    fn parses_atoms_and_quantifiers() {
        let sig = lt_sig(Mode::WithEquality);
        assert_eq!(
            parse_formula("lt(v0,v1)", &sig).unwrap(),
            Formula::rel("lt", vec![0, 1])
        );
        assert_eq!(
            parse_formula("E v1 (lt(v0,v1))", &sig).unwrap(),
            Formula::exists(1, Formula::rel("lt", vec![0, 1]))
        );
        assert_eq!(
            parse_formula("E v1 lt(v0,v1)", &sig).unwrap(),
            Formula::exists(1, Formula::rel("lt", vec![0, 1]))
        );
    }

    #[test]
    fn equality_is_gated_by_mode() {
        let sig = lt_sig(Mode::WithoutEquality);
        assert_eq!(parse_formula("v0 = v1", &sig), Err(SyntaxError::EqualityNotInSignature));
    }

    #[test]
    fn reports_signature_errors() {
        let sig = lt_sig(Mode::WithEquality);
        assert_eq!(
            parse_formula("gt(v0,v1)", &sig),
            Err(SyntaxError::UnknownRelation("gt".into()))
        );
        assert!(matches!(
            parse_formula("lt(v0)", &sig),
            Err(SyntaxError::ArityMismatch {
                expected: 2,
                found: 1,
                ..
            })
        ));
        assert!(matches!(
            parse_formula("lt(v0,v1) &", &sig),
            Err(SyntaxError::Parse { pos: 11, .. })
        ));
        assert!(matches!(
            parse_formula("lt(v0,v1) $", &sig),
            Err(SyntaxError::Parse { pos: 10, .. })
        ));
    }

    #[test]
    fn and_binds_tighter_than_or() {
        let sig = lt_sig(Mode::WithEquality);
        let f = parse_formula("lt(v0,v1) | lt(v1,v0) & v0 = v1", &sig).unwrap();
        assert_eq!(
            f,
            Formula::or(
                Formula::rel("lt", vec![0, 1]),
                Formula::and(Formula::rel("lt", vec![1, 0]), Formula::Eq(0, 1))
            )
        );
        assert_eq!(f.to_string(), "lt(v0,v1) | lt(v1,v0) & v0 = v1");
    }

    #[test]
    fn free_vars_examples() {
        let sig = lt_sig(Mode::WithEquality);
        let fv = |s: &str| free_vars(&parse_formula(s, &sig).unwrap());
        assert_eq!(fv("lt(v0,v1)"), [0, 1].into());
        assert_eq!(fv("E v1 (lt(v0,v1))"), [0].into());
        assert_eq!(fv("true"), VarSet::new());
    }

    #[test]
    fn substitution_examples() {
        let sig = lt_sig(Mode::WithEquality);
        let p = |s: &str| parse_formula(s, &sig).unwrap();
        let rep = FiniteTransformation::replacement(0, 1);
        let swap = FiniteTransformation::transposition(0, 1);
        assert_eq!(apply_transformation(&rep, &p("lt(v0,v1)")), p("lt(v1,v1)"));
        assert_eq!(apply_transformation(&swap, &p("lt(v0,v1)")), p("lt(v1,v0)"));
        assert_eq!(
            apply_transformation(&rep, &p("E v1 (lt(v0,v1))")),
            p("E v2 (lt(v1,v2))")
        );
        // no capture: the bound variable is kept
        assert_eq!(
            apply_transformation(&FiniteTransformation::replacement(0, 3), &p("E v1 (lt(v0,v1))")),
            p("E v1 (lt(v3,v1))")
        );
        // bound occurrences are untouched
        assert_eq!(
            apply_transformation(&FiniteTransformation::replacement(1, 0), &p("E v1 (lt(v0,v1))")),
            p("E v1 (lt(v0,v1))")
        );
    }

    #[test]
    fn compose_examples() {
        let swap = FiniteTransformation::transposition(0, 1);
        let rep = FiniteTransformation::replacement(0, 1);
        assert!(swap.compose(&swap).is_identity());
        assert_eq!(swap.compose(&FiniteTransformation::identity()), swap);
        let c = rep.compose(&swap);
        // pointwise oracle: c(i) = rep(swap(i))
        let oracle = |i: Var| match i {
            0 => 1, // swap: 0 -> 1, rep fixes 1
            1 => 1, // swap: 1 -> 0, rep: 0 -> 1
            k => k,
        };
        for i in 0..10 {
            assert_eq!(c.apply(i), oracle(i), "index {i}");
        }
    }

    #[test]
    fn transformation_literals() {
        assert_eq!(
            FiniteTransformation::parse("[0,1]").unwrap(),
            FiniteTransformation::transposition(0, 1)
        );
        assert_eq!(
            FiniteTransformation::parse("[0|1]").unwrap(),
            FiniteTransformation::replacement(0, 1)
        );
        let prod = FiniteTransformation::parse("[0|1][0,1]").unwrap();
        assert_eq!(
            prod,
            FiniteTransformation::replacement(0, 1).compose(&FiniteTransformation::transposition(0, 1))
        );
        assert!(FiniteTransformation::parse("[0;1]").is_err());
        assert!(FiniteTransformation::parse("").unwrap().is_identity());
        assert!(FiniteTransformation::transposition(2, 5).is_bijection());
        assert!(!FiniteTransformation::replacement(2, 5).is_bijection());
    }

    #[test]
    fn enumeration_starts_with_atoms() {
        let sig = lt_sig(Mode::WithEquality);
        let mut e = FormulaEnumerator::new(&sig, 2);
        let first: Vec<String> = e.take(7).iter().map(|f| f.to_string()).collect();
        assert_eq!(
            first,
            [
                "false",
                "lt(v0,v0)",
                "lt(v0,v1)",
                "lt(v1,v0)",
                "lt(v1,v1)",
                "true",
                "v0 = v1"
            ]
        );
        assert!(e.level(1).iter().all(|f| f.depth() == 1));
    }
}
