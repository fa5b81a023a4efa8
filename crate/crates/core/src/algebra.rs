//! The two algebra species and their concrete instances.
//!
//! Extensional elements are finite-base set-algebra elements stored as a
//! table over their dimension set; every coordinate outside the dimension set
//! ranges freely (cylinder semantics). Intensional elements are formulas
//! compared modulo a theory oracle.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use fixedbitset::FixedBitSet;
use serde::Serialize;
use thiserror::Error;

use crate::oracle::{OracleError, TheoryOracle};
use crate::syntax::{
    apply_transformation, free_vars, FiniteTransformation, Formula, Mode, Signature, SyntaxError, Var, VarSet,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlgebraError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("diagonal elements do not exist in quasi-polyadic (without-equality) algebras")]
    DiagonalInQpa,
    #[error("elements belong to different algebra species")]
    MixedAlgebras,
    #[error("mode mismatch: algebra requested in {requested} mode, oracle decides a {oracle} theory")]
    ModeMismatch { requested: Mode, oracle: Mode },
    #[error("index {index} is outside the neat reduct of dimension {dim}")]
    OutsideReduct { index: Var, dim: usize },
    #[error("algebra too large to enumerate: {0}")]
    TooLarge(String),
}

/// Boolean algebra with cylindrifications, substitutions and (in CA mode)
/// diagonals.
pub trait CylindricAlgebra {
    type Elem: Clone + fmt::Debug;

    fn mode(&self) -> Mode;
    fn zero(&self) -> Self::Elem;
    fn one(&self) -> Self::Elem;
    fn meet(&self, a: &Self::Elem, b: &Self::Elem) -> Result<Self::Elem, AlgebraError>;
    fn join(&self, a: &Self::Elem, b: &Self::Elem) -> Result<Self::Elem, AlgebraError>;
    fn complement(&self, a: &Self::Elem) -> Result<Self::Elem, AlgebraError>;
    fn cylindrify(&self, i: Var, a: &Self::Elem) -> Result<Self::Elem, AlgebraError>;
    fn diagonal(&self, i: Var, j: Var) -> Result<Self::Elem, AlgebraError>;
    fn substitute(&self, tau: &FiniteTransformation, a: &Self::Elem) -> Result<Self::Elem, AlgebraError>;
    fn equal(&self, a: &Self::Elem, b: &Self::Elem) -> Result<bool, AlgebraError>;
    fn leq(&self, a: &Self::Elem, b: &Self::Elem) -> Result<bool, AlgebraError>;
    /// `Δa = { i : c_i a ≠ a }`.
    fn dimension_set(&self, a: &Self::Elem) -> Result<VarSet, AlgebraError>;

    fn is_zero(&self, a: &Self::Elem) -> Result<bool, AlgebraError> {
        self.equal(a, &self.zero())
    }
}

// ---------------------------------------------------------------------------
// Extensional elements

/// A set-algebra element: the assignments whose restriction to `dims` lies in
/// the table. The table is a bitset indexed by tuples over `dims` read in
/// base `base`, first dimension least significant. Tables are kept reduced:
/// no coordinate of `dims` is dummy.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ExtElement {
    dims: Vec<Var>,
    base: usize,
    bits: FixedBitSet,
}

impl ExtElement {
    pub fn dims(&self) -> &[Var] {
        &self.dims
    }

    pub fn base(&self) -> usize {
        self.base
    }

    /// Number of tuples in the table.
    pub fn len(&self) -> usize {
        self.bits.count_ones(..)
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_clear()
    }

    fn decode(&self, mut idx: usize) -> Vec<usize> {
        let mut t = vec![0; self.dims.len()];
        for slot in t.iter_mut() {
            *slot = idx % self.base;
            idx /= self.base;
        }
        t
    }

    fn encode(&self, t: &[usize]) -> usize {
        t.iter().rev().fold(0, |acc, &x| acc * self.base + x)
    }

    /// The table tuples, aligned with `dims`, in index order.
    pub fn tuples(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        self.bits.ones().map(|i| self.decode(i))
    }

    pub fn table(&self) -> BTreeSet<Vec<usize>> {
        self.tuples().collect()
    }

    pub fn contains_tuple(&self, t: &[usize]) -> bool {
        t.iter().all(|&x| x < self.base) && self.bits.contains(self.encode(t))
    }

    /// Does the assignment `s` (a total function, given by a lookup) belong?
    pub fn contains_with(&self, s: impl Fn(Var) -> usize) -> bool {
        let t: Vec<usize> = self.dims.iter().map(|&d| s(d)).collect();
        self.contains_tuple(&t)
    }

    /// Membership of the assignment `i ↦ values[i]`; every dimension must be
    /// below `values.len()`.
    pub fn contains_prefix(&self, values: &[usize]) -> bool {
        self.contains_with(|d| values[d])
    }
}

impl Serialize for ExtElement {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut s = serializer.serialize_struct("ExtElement", 2)?;
        s.serialize_field("dims", &self.dims)?;
        s.serialize_field("tuples", &self.tuples().collect::<Vec<_>>())?;
        s.end()
    }
}

/// All tuples over `0..base` of length `k`, lexicographically.
pub fn all_tuples(base: usize, k: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = base.pow(k as u32);
    (0..total).map(move |mut n| {
        let mut t = vec![0; k];
        for slot in t.iter_mut().rev() {
            *slot = n % base;
            n /= base;
        }
        t
    })
}

/// The bitset over `base^k` target indices whose bit `s` is bit
/// `Σ s[pos]·weights[pos]` of `src`.
fn pull(src: &FixedBitSet, base: usize, weights: &[usize]) -> FixedBitSet {
    let k = weights.len();
    let total = base.pow(k as u32);
    let mut out = FixedBitSet::with_capacity(total);
    let mut digits = vec![0usize; k];
    let mut from = 0usize;
    for idx in 0..total {
        if src.contains(from) {
            out.insert(idx);
        }
        for pos in 0..k {
            digits[pos] += 1;
            from += weights[pos];
            if digits[pos] < base {
                break;
            }
            digits[pos] = 0;
            from -= base * weights[pos];
        }
    }
    out
}

/// Finite-base set algebras: all cylinders over a base `{0..base-1}`. When
/// `dim_bound` is set the instance is the finite algebra of elements with
/// dimension set inside `{0..dim_bound-1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetAlgebra {
    base: usize,
    mode: Mode,
    dim_bound: Option<usize>,
}

impl SetAlgebra {
    pub fn new(base: usize, mode: Mode) -> Self {
        assert!(base > 0, "set algebras need a nonempty base");
        Self {
            base,
            mode,
            dim_bound: None,
        }
    }

    /// The finite algebra of elements with dimension set inside `{0..n-1}`.
    pub fn finite(base: usize, n: usize, mode: Mode) -> Self {
        Self {
            dim_bound: Some(n),
            ..Self::new(base, mode)
        }
    }

    pub fn base(&self) -> usize {
        self.base
    }

    pub fn dim_bound(&self) -> Option<usize> {
        self.dim_bound
    }

    /// Builds a reduced element from tuples over `dims` (any order, no
    /// repeated dimension).
    pub fn element(&self, dims: &[Var], tuples: impl IntoIterator<Item = Vec<usize>>) -> ExtElement {
        let mut order: Vec<usize> = (0..dims.len()).collect();
        order.sort_by_key(|&k| dims[k]);
        let sorted: Vec<Var> = order.iter().map(|&k| dims[k]).collect();
        let mut e = ExtElement {
            dims: sorted,
            base: self.base,
            bits: FixedBitSet::with_capacity(self.base.pow(dims.len() as u32)),
        };
        for t in tuples {
            let aligned: Vec<usize> = order.iter().map(|&k| t[k]).collect();
            assert!(aligned.iter().all(|&x| x < self.base), "tuple outside the base");
            let idx = e.encode(&aligned);
            e.bits.insert(idx);
        }
        self.reduce(e)
    }

    /// The element defined by a membership predicate on tuples over `dims`.
    pub fn from_fn(&self, dims: &[Var], pred: impl Fn(&[usize]) -> bool) -> ExtElement {
        let tuples: Vec<Vec<usize>> = all_tuples(self.base, dims.len()).filter(|t| pred(t)).collect();
        self.element(dims, tuples)
    }

    /// Drops dummy coordinates until none is left.
    fn reduce(&self, mut e: ExtElement) -> ExtElement {
        let base = self.base;
        let mut p = 0;
        while p < e.dims.len() {
            let stride = base.pow(p as u32);
            let total = base.pow(e.dims.len() as u32);
            let dummy = (0..total)
                .filter(|idx| (idx / stride).is_multiple_of(base))
                .all(|idx| (1..base).all(|v| e.bits.contains(idx + v * stride) == e.bits.contains(idx)));
            if !dummy {
                p += 1;
                continue;
            }
            let mut bits = FixedBitSet::with_capacity(total / base);
            for j in 0..total / base {
                let (lo, hi) = (j % stride, j / stride);
                if e.bits.contains(lo + hi * stride * base) {
                    bits.insert(j);
                }
            }
            e.dims.remove(p);
            e.bits = bits;
        }
        e
    }

    /// The table of `a` re-expressed over `dims ⊇ a.dims` (sorted).
    fn expand(&self, a: &ExtElement, dims: &[Var]) -> FixedBitSet {
        let weights: Vec<usize> = dims
            .iter()
            .map(|d| match a.dims.binary_search(d) {
                Ok(k) => self.base.pow(k as u32),
                Err(_) => 0,
            })
            .collect();
        pull(&a.bits, self.base, &weights)
    }

    fn combine(&self, a: &ExtElement, b: &ExtElement, op: impl Fn(&mut FixedBitSet, &FixedBitSet)) -> ExtElement {
        if a.dims == b.dims {
            let mut bits = a.bits.clone();
            op(&mut bits, &b.bits);
            return self.reduce(ExtElement { bits, ..a.clone() });
        }
        let mut dims: Vec<Var> = a.dims.iter().chain(&b.dims).copied().collect();
        dims.sort();
        dims.dedup();
        let mut bits = self.expand(a, &dims);
        op(&mut bits, &self.expand(b, &dims));
        self.reduce(ExtElement {
            dims,
            base: self.base,
            bits,
        })
    }

    pub fn ext_meet(&self, a: &ExtElement, b: &ExtElement) -> ExtElement {
        self.combine(a, b, |x, y| x.intersect_with(y))
    }

    pub fn ext_join(&self, a: &ExtElement, b: &ExtElement) -> ExtElement {
        self.combine(a, b, |x, y| x.union_with(y))
    }

    pub fn ext_complement(&self, a: &ExtElement) -> ExtElement {
        let mut e = a.clone();
        e.bits.toggle_range(..);
        e
    }

    pub fn ext_cylindrify(&self, i: Var, a: &ExtElement) -> ExtElement {
        let Ok(p) = a.dims.binary_search(&i) else {
            return a.clone();
        };
        let base = self.base;
        let stride = base.pow(p as u32);
        let total = base.pow(a.dims.len() as u32) / base;
        let mut bits = FixedBitSet::with_capacity(total);
        for j in 0..total {
            let start = j % stride + j / stride * stride * base;
            if (0..base).any(|v| a.bits.contains(start + v * stride)) {
                bits.insert(j);
            }
        }
        let mut dims = a.dims.clone();
        dims.remove(p);
        self.reduce(ExtElement { dims, base, bits })
    }

    pub fn ext_diagonal(&self, i: Var, j: Var) -> ExtElement {
        if i == j {
            return self.ext_one();
        }
        self.element(&[i, j], (0..self.base).map(|x| vec![x, x]))
    }

    /// `s_τ a = { s : s ∘ τ ∈ a }`.
    pub fn ext_substitute(&self, tau: &FiniteTransformation, a: &ExtElement) -> ExtElement {
        let mut dims: Vec<Var> = a.dims.iter().map(|&d| tau.apply(d)).collect();
        dims.sort();
        dims.dedup();
        let mut weights = vec![0; dims.len()];
        for (k, &d) in a.dims.iter().enumerate() {
            let pos = dims.binary_search(&tau.apply(d)).unwrap();
            weights[pos] += self.base.pow(k as u32);
        }
        let bits = pull(&a.bits, self.base, &weights);
        self.reduce(ExtElement {
            dims,
            base: self.base,
            bits,
        })
    }

    pub fn ext_zero(&self) -> ExtElement {
        ExtElement {
            dims: Vec::new(),
            base: self.base,
            bits: FixedBitSet::with_capacity(1),
        }
    }

    pub fn ext_one(&self) -> ExtElement {
        let mut e = self.ext_zero();
        e.bits.insert(0);
        e
    }

    fn bound(&self) -> Result<usize, AlgebraError> {
        self.dim_bound
            .ok_or_else(|| AlgebraError::TooLarge("no dimension bound set".into()))
    }

    /// The atoms of the finite instance: one singleton per assignment
    /// `{0..n-1} → base`, in lexicographic order.
    pub fn atoms(&self) -> Result<Vec<ExtElement>, AlgebraError> {
        let n = self.bound()?;
        let dims: Vec<Var> = (0..n).collect();
        Ok(all_tuples(self.base, n).map(|t| self.element(&dims, [t])).collect())
    }

    /// The element of the finite instance whose atoms are the bits of `mask`
    /// (atom order as in [`SetAlgebra::atoms`]).
    pub fn element_from_mask(&self, mask: u64) -> Result<ExtElement, AlgebraError> {
        let n = self.bound()?;
        let dims: Vec<Var> = (0..n).collect();
        let chosen = all_tuples(self.base, n)
            .enumerate()
            .filter(|(k, _)| mask >> k & 1 == 1)
            .map(|(_, t)| t);
        Ok(self.element(&dims, chosen))
    }

    /// Every element of the finite instance; refuses more than 2^16.
    pub fn elements(&self) -> Result<Vec<ExtElement>, AlgebraError> {
        let n = self.bound()?;
        let points = self.base.pow(n as u32);
        if points > 16 {
            return Err(AlgebraError::TooLarge(format!(
                "2^{points} elements (base {}, dimension {n})",
                self.base
            )));
        }
        (0u64..1 << points).map(|m| self.element_from_mask(m)).collect()
    }

    /// The subalgebra generated by `gens` under the Boolean operations and
    /// every cylindrification, diagonal (CA mode) and transposition or
    /// replacement with indices below the dimension bound.
    pub fn generate(&self, gens: &[ExtElement]) -> Result<BTreeSet<ExtElement>, AlgebraError> {
        let n = self.bound()?;
        let mut seen: BTreeSet<ExtElement> = BTreeSet::new();
        let mut queue: VecDeque<ExtElement> = VecDeque::new();
        let mut seeds = vec![self.ext_zero(), self.ext_one()];
        seeds.extend(gens.iter().cloned());
        if self.mode.has_equality() {
            for i in 0..n {
                for j in i + 1..n {
                    seeds.push(self.ext_diagonal(i, j));
                }
            }
        }
        for s in seeds {
            if seen.insert(s.clone()) {
                queue.push_back(s);
            }
        }
        let mut taus = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    taus.push(FiniteTransformation::replacement(i, j));
                    if i < j {
                        taus.push(FiniteTransformation::transposition(i, j));
                    }
                }
            }
        }
        while let Some(x) = queue.pop_front() {
            let mut new = vec![self.ext_complement(&x)];
            new.extend((0..n).map(|i| self.ext_cylindrify(i, &x)));
            new.extend(taus.iter().map(|t| self.ext_substitute(t, &x)));
            for y in &seen {
                new.push(self.ext_meet(&x, y));
                new.push(self.ext_join(&x, y));
            }
            for e in new {
                if seen.insert(e.clone()) {
                    queue.push_back(e);
                }
            }
            if seen.len() > 1 << 16 {
                return Err(AlgebraError::TooLarge(
                    "generated subalgebra exceeds 2^16 elements".into(),
                ));
            }
        }
        Ok(seen)
    }
}

impl CylindricAlgebra for SetAlgebra {
    type Elem = ExtElement;

    fn mode(&self) -> Mode {
        self.mode
    }

    fn zero(&self) -> ExtElement {
        self.ext_zero()
    }

    fn one(&self) -> ExtElement {
        self.ext_one()
    }

    fn meet(&self, a: &ExtElement, b: &ExtElement) -> Result<ExtElement, AlgebraError> {
        Ok(self.ext_meet(a, b))
    }

    fn join(&self, a: &ExtElement, b: &ExtElement) -> Result<ExtElement, AlgebraError> {
        Ok(self.ext_join(a, b))
    }

    fn complement(&self, a: &ExtElement) -> Result<ExtElement, AlgebraError> {
        Ok(self.ext_complement(a))
    }

    fn cylindrify(&self, i: Var, a: &ExtElement) -> Result<ExtElement, AlgebraError> {
        Ok(self.ext_cylindrify(i, a))
    }

    fn diagonal(&self, i: Var, j: Var) -> Result<ExtElement, AlgebraError> {
        if !self.mode.has_equality() {
            return Err(AlgebraError::DiagonalInQpa);
        }
        Ok(self.ext_diagonal(i, j))
    }

    fn substitute(&self, tau: &FiniteTransformation, a: &ExtElement) -> Result<ExtElement, AlgebraError> {
        Ok(self.ext_substitute(tau, a))
    }

    fn equal(&self, a: &ExtElement, b: &ExtElement) -> Result<bool, AlgebraError> {
        Ok(a == b)
    }

    fn leq(&self, a: &ExtElement, b: &ExtElement) -> Result<bool, AlgebraError> {
        Ok(&self.ext_meet(a, b) == a)
    }

    fn dimension_set(&self, a: &ExtElement) -> Result<VarSet, AlgebraError> {
        Ok(a.dims.iter().copied().collect())
    }
}

// ---------------------------------------------------------------------------
// Formula algebras

/// `CA(T)` or `QPA(T)`: formulas modulo provable equivalence in the theory
/// decided by an oracle.
#[derive(Debug, Clone)]
pub struct FormulaAlgebra {
    oracle: Arc<dyn TheoryOracle>,
}

/// Builds the formula algebra of `oracle`'s theory in the requested mode.
pub fn formula_algebra(
    sig: &Signature,
    oracle: Arc<dyn TheoryOracle>,
    mode: Mode,
) -> Result<FormulaAlgebra, AlgebraError> {
    if oracle.mode() != mode || sig.mode != mode {
        return Err(AlgebraError::ModeMismatch {
            requested: mode,
            oracle: oracle.mode(),
        });
    }
    if oracle.signature().relations != sig.relations {
        return Err(AlgebraError::Syntax(SyntaxError::InvalidSignature(
            "signature differs from the oracle's".into(),
        )));
    }
    Ok(FormulaAlgebra { oracle })
}

impl FormulaAlgebra {
    pub fn new(oracle: Arc<dyn TheoryOracle>) -> Self {
        Self { oracle }
    }

    pub fn oracle(&self) -> &Arc<dyn TheoryOracle> {
        &self.oracle
    }

    pub fn signature(&self) -> &Signature {
        self.oracle.signature()
    }

    /// The class of `f`, after checking it against the signature.
    pub fn element(&self, f: Formula) -> Result<Formula, AlgebraError> {
        self.signature().check(&f)?;
        Ok(f)
    }

    pub fn is_consistent(&self, f: &Formula) -> Result<bool, AlgebraError> {
        Ok(self.oracle.is_consistent(f)?)
    }
}

impl CylindricAlgebra for FormulaAlgebra {
    type Elem = Formula;

    fn mode(&self) -> Mode {
        self.oracle.mode()
    }

    fn zero(&self) -> Formula {
        Formula::False
    }

    fn one(&self) -> Formula {
        Formula::True
    }

    fn meet(&self, a: &Formula, b: &Formula) -> Result<Formula, AlgebraError> {
        Ok(Formula::and(a.clone(), b.clone()))
    }

    fn join(&self, a: &Formula, b: &Formula) -> Result<Formula, AlgebraError> {
        Ok(Formula::or(a.clone(), b.clone()))
    }

    fn complement(&self, a: &Formula) -> Result<Formula, AlgebraError> {
        Ok(match a {
            Formula::Not(g) => (**g).clone(),
            Formula::True => Formula::False,
            Formula::False => Formula::True,
            _ => Formula::not(a.clone()),
        })
    }

    fn cylindrify(&self, i: Var, a: &Formula) -> Result<Formula, AlgebraError> {
        Ok(Formula::exists(i, a.clone()))
    }

    fn diagonal(&self, i: Var, j: Var) -> Result<Formula, AlgebraError> {
        if !self.mode().has_equality() {
            return Err(AlgebraError::DiagonalInQpa);
        }
        Ok(if i == j { Formula::True } else { Formula::Eq(i, j) })
    }

    fn substitute(&self, tau: &FiniteTransformation, a: &Formula) -> Result<Formula, AlgebraError> {
        Ok(apply_transformation(tau, a))
    }

    fn equal(&self, a: &Formula, b: &Formula) -> Result<bool, AlgebraError> {
        Ok(self.oracle.entails_equal(a, b)?)
    }

    fn leq(&self, a: &Formula, b: &Formula) -> Result<bool, AlgebraError> {
        Ok(self.oracle.entails(a, b)?)
    }

    fn is_zero(&self, a: &Formula) -> Result<bool, AlgebraError> {
        Ok(!self.oracle.is_consistent(a)?)
    }

    fn dimension_set(&self, a: &Formula) -> Result<VarSet, AlgebraError> {
        let mut out = VarSet::new();
        for i in free_vars(a) {
            if !self.oracle.entails_equal(&Formula::exists(i, a.clone()), a)? {
                out.insert(i);
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Dynamic instances

/// An element of either species.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AlgebraElement {
    Intensional(Formula),
    Extensional(ExtElement),
}

/// An algebra of either species.
#[derive(Debug, Clone)]
pub enum AlgebraInstance {
    Formula(FormulaAlgebra),
    Set(SetAlgebra),
}

impl AlgebraInstance {
    fn lift1(
        &self,
        a: &AlgebraElement,
        f: impl FnOnce(&FormulaAlgebra, &Formula) -> Result<Formula, AlgebraError>,
        g: impl FnOnce(&SetAlgebra, &ExtElement) -> Result<ExtElement, AlgebraError>,
    ) -> Result<AlgebraElement, AlgebraError> {
        match (self, a) {
            (AlgebraInstance::Formula(alg), AlgebraElement::Intensional(x)) => {
                f(alg, x).map(AlgebraElement::Intensional)
            }
            (AlgebraInstance::Set(alg), AlgebraElement::Extensional(x)) => g(alg, x).map(AlgebraElement::Extensional),
            _ => Err(AlgebraError::MixedAlgebras),
        }
    }

    fn pair<'a>(&self, a: &'a AlgebraElement, b: &'a AlgebraElement) -> Result<Pair<'a>, AlgebraError> {
        match (self, a, b) {
            (AlgebraInstance::Formula(_), AlgebraElement::Intensional(x), AlgebraElement::Intensional(y)) => {
                Ok(Pair::Int(x, y))
            }
            (AlgebraInstance::Set(_), AlgebraElement::Extensional(x), AlgebraElement::Extensional(y)) => {
                Ok(Pair::Ext(x, y))
            }
            _ => Err(AlgebraError::MixedAlgebras),
        }
    }
}

enum Pair<'a> {
    Int(&'a Formula, &'a Formula),
    Ext(&'a ExtElement, &'a ExtElement),
}

macro_rules! dispatch_binary {
    ($self:ident, $a:ident, $b:ident, $method:ident) => {
        match ($self, $self.pair($a, $b)?) {
            (AlgebraInstance::Formula(alg), Pair::Int(x, y)) => alg.$method(x, y).map(AlgebraElement::Intensional),
            (AlgebraInstance::Set(alg), Pair::Ext(x, y)) => alg.$method(x, y).map(AlgebraElement::Extensional),
            _ => Err(AlgebraError::MixedAlgebras),
        }
    };
}

macro_rules! dispatch_test {
    ($self:ident, $a:ident, $b:ident, $method:ident) => {
        match ($self, $self.pair($a, $b)?) {
            (AlgebraInstance::Formula(alg), Pair::Int(x, y)) => alg.$method(x, y),
            (AlgebraInstance::Set(alg), Pair::Ext(x, y)) => alg.$method(x, y),
            _ => Err(AlgebraError::MixedAlgebras),
        }
    };
}

impl CylindricAlgebra for AlgebraInstance {
    type Elem = AlgebraElement;

    fn mode(&self) -> Mode {
        match self {
            AlgebraInstance::Formula(a) => a.mode(),
            AlgebraInstance::Set(a) => a.mode(),
        }
    }

    fn zero(&self) -> AlgebraElement {
        match self {
            AlgebraInstance::Formula(a) => AlgebraElement::Intensional(a.zero()),
            AlgebraInstance::Set(a) => AlgebraElement::Extensional(a.zero()),
        }
    }

    fn one(&self) -> AlgebraElement {
        match self {
            AlgebraInstance::Formula(a) => AlgebraElement::Intensional(a.one()),
            AlgebraInstance::Set(a) => AlgebraElement::Extensional(a.one()),
        }
    }

    fn meet(&self, a: &AlgebraElement, b: &AlgebraElement) -> Result<AlgebraElement, AlgebraError> {
        dispatch_binary!(self, a, b, meet)
    }

    fn join(&self, a: &AlgebraElement, b: &AlgebraElement) -> Result<AlgebraElement, AlgebraError> {
        dispatch_binary!(self, a, b, join)
    }

    fn complement(&self, a: &AlgebraElement) -> Result<AlgebraElement, AlgebraError> {
        self.lift1(a, |alg, x| alg.complement(x), |alg, x| alg.complement(x))
    }

    fn cylindrify(&self, i: Var, a: &AlgebraElement) -> Result<AlgebraElement, AlgebraError> {
        self.lift1(a, |alg, x| alg.cylindrify(i, x), |alg, x| alg.cylindrify(i, x))
    }

    fn diagonal(&self, i: Var, j: Var) -> Result<AlgebraElement, AlgebraError> {
        match self {
            AlgebraInstance::Formula(a) => a.diagonal(i, j).map(AlgebraElement::Intensional),
            AlgebraInstance::Set(a) => a.diagonal(i, j).map(AlgebraElement::Extensional),
        }
    }

    fn substitute(&self, tau: &FiniteTransformation, a: &AlgebraElement) -> Result<AlgebraElement, AlgebraError> {
        self.lift1(a, |alg, x| alg.substitute(tau, x), |alg, x| alg.substitute(tau, x))
    }

    fn equal(&self, a: &AlgebraElement, b: &AlgebraElement) -> Result<bool, AlgebraError> {
        dispatch_test!(self, a, b, equal)
    }

    fn leq(&self, a: &AlgebraElement, b: &AlgebraElement) -> Result<bool, AlgebraError> {
        dispatch_test!(self, a, b, leq)
    }

    fn dimension_set(&self, a: &AlgebraElement) -> Result<VarSet, AlgebraError> {
        match (self, a) {
            (AlgebraInstance::Formula(alg), AlgebraElement::Intensional(x)) => alg.dimension_set(x),
            (AlgebraInstance::Set(alg), AlgebraElement::Extensional(x)) => alg.dimension_set(x),
            _ => Err(AlgebraError::MixedAlgebras),
        }
    }
}

// ---------------------------------------------------------------------------
// Neat reducts

/// `Nr_n A`: the elements of `A` with dimension set inside `{0..n-1}`, with
/// operations restricted to indices below `n`.
#[derive(Debug, Clone, Copy)]
pub struct NeatReduct<'a, A> {
    algebra: &'a A,
    n: usize,
}

/// The `n`-dimensional neat reduct of `algebra`.
pub fn neat_reduct<A: CylindricAlgebra>(algebra: &A, n: usize) -> NeatReduct<'_, A> {
    NeatReduct { algebra, n }
}

impl<A: CylindricAlgebra> NeatReduct<'_, A> {
    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn contains(&self, a: &A::Elem) -> Result<bool, AlgebraError> {
        Ok(self.algebra.dimension_set(a)?.iter().all(|&i| i < self.n))
    }

    fn check_index(&self, i: Var) -> Result<(), AlgebraError> {
        if i < self.n {
            Ok(())
        } else {
            Err(AlgebraError::OutsideReduct { index: i, dim: self.n })
        }
    }
}

impl<A: CylindricAlgebra> CylindricAlgebra for NeatReduct<'_, A> {
    type Elem = A::Elem;

    fn mode(&self) -> Mode {
        self.algebra.mode()
    }

    fn zero(&self) -> A::Elem {
        self.algebra.zero()
    }

    fn one(&self) -> A::Elem {
        self.algebra.one()
    }

    fn meet(&self, a: &A::Elem, b: &A::Elem) -> Result<A::Elem, AlgebraError> {
        self.algebra.meet(a, b)
    }

    fn join(&self, a: &A::Elem, b: &A::Elem) -> Result<A::Elem, AlgebraError> {
        self.algebra.join(a, b)
    }

    fn complement(&self, a: &A::Elem) -> Result<A::Elem, AlgebraError> {
        self.algebra.complement(a)
    }

    fn cylindrify(&self, i: Var, a: &A::Elem) -> Result<A::Elem, AlgebraError> {
        self.check_index(i)?;
        self.algebra.cylindrify(i, a)
    }

    fn diagonal(&self, i: Var, j: Var) -> Result<A::Elem, AlgebraError> {
        self.check_index(i)?;
        self.check_index(j)?;
        self.algebra.diagonal(i, j)
    }

    fn substitute(&self, tau: &FiniteTransformation, a: &A::Elem) -> Result<A::Elem, AlgebraError> {
        for (i, j) in tau.pairs() {
            self.check_index(i)?;
            self.check_index(j)?;
        }
        self.algebra.substitute(tau, a)
    }

    fn equal(&self, a: &A::Elem, b: &A::Elem) -> Result<bool, AlgebraError> {
        self.algebra.equal(a, b)
    }

    fn leq(&self, a: &A::Elem, b: &A::Elem) -> Result<bool, AlgebraError> {
        self.algebra.leq(a, b)
    }

    fn dimension_set(&self, a: &A::Elem) -> Result<VarSet, AlgebraError> {
        self.algebra.dimension_set(a)
    }
}

impl SetAlgebra {
    /// The carrier of `Nr_n` of this finite instance.
    pub fn neat_reduct_carrier(&self, n: usize) -> Result<Vec<ExtElement>, AlgebraError> {
        let reduct = neat_reduct(self, n);
        let mut out = Vec::new();
        for e in self.elements()? {
            if reduct.contains(&e)? {
                out.push(e);
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Weak elements

/// An element of a weak set algebra over base ω: membership of a finite-
/// support assignment depends only on its restriction to `dims`, and is
/// materialized for values below `horizon`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WeakElement {
    pub dims: Vec<Var>,
    pub horizon: usize,
    pub table: BTreeSet<Vec<usize>>,
}

impl WeakElement {
    /// Materializes `pred` on every tuple over `dims` with entries below
    /// `horizon`.
    pub fn materialize(dims: &[Var], horizon: usize, pred: impl FnMut(&[usize]) -> bool) -> Self {
        let mut pred = pred;
        let mut dims = dims.to_vec();
        dims.sort();
        dims.dedup();
        let table = all_tuples(horizon, dims.len()).filter(|t| pred(t)).collect();
        Self { dims, horizon, table }
    }

    /// Membership of the finite-support assignment `tau`; `None` when a
    /// relevant value lies beyond the horizon.
    pub fn contains(&self, tau: &FiniteTransformation) -> Option<bool> {
        let t: Vec<usize> = self.dims.iter().map(|&d| tau.apply(d)).collect();
        if t.iter().any(|&x| x >= self.horizon) {
            return None;
        }
        Some(self.table.contains(&t))
    }
}
