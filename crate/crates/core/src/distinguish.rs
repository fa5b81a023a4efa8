//! Realization counting and the comparison of models by it, together with
//! the coding of finite partial functions by naturals.

use std::collections::BTreeSet;
use std::fmt;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::algebra::all_tuples;
use crate::oracle::FiniteModel;
use crate::repr::{rep, sat_element, ReprError};
use crate::stone::GenericFilter;
use crate::syntax::{free_vars, FiniteTransformation, Formula, FormulaEnumerator, Signature, SyntaxError, Var};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DistinguishError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error(transparent)]
    Repr(#[from] ReprError),
}

// ---------------------------------------------------------------------------
// K and the coding μ

/// A function from a finite subset of ω to ω, as `(key, value)` pairs sorted
/// by key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct KCode {
    pairs: Vec<(u64, u64)>,
}

impl KCode {
    /// `None` if two pairs share a key.
    pub fn new(mut pairs: Vec<(u64, u64)>) -> Option<Self> {
        pairs.sort();
        pairs.dedup();
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return None;
        }
        Some(Self { pairs })
    }

    pub fn empty() -> Self {
        Self { pairs: Vec::new() }
    }

    pub fn pairs(&self) -> &[(u64, u64)] {
        &self.pairs
    }

    pub fn domain(&self) -> impl Iterator<Item = u64> + '_ {
        self.pairs.iter().map(|p| p.0)
    }

    /// The bitset code `Σ 2^p(k,v)`.
    pub fn code(&self) -> u128 {
        self.pairs.iter().map(|&(k, v)| 1u128 << cantor(k, v)).sum()
    }

    /// A tuple `t` over `dims`, read as the map `dims[i] ↦ t[i]`.
    pub fn from_tuple(dims: &[Var], t: &[usize]) -> Self {
        Self::new(dims.iter().zip(t).map(|(&d, &x)| (d as u64, x as u64)).collect()).expect("distinct dims")
    }
}

impl fmt::Display for KCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (k, v)) in self.pairs.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{k}->{v}")?;
        }
        f.write_str("}")
    }
}

/// Cantor pairing `p(k,v) = (k+v)(k+v+1)/2 + v`.
pub fn cantor(k: u64, v: u64) -> u64 {
    (k + v) * (k + v + 1) / 2 + v
}

/// Inverse of [`cantor`].
pub fn uncantor(c: u64) -> (u64, u64) {
    let mut w = ((((8 * c + 1) as f64).sqrt() - 1.0) / 2.0) as u64;
    while w * (w + 1) / 2 > c {
        w -= 1;
    }
    while (w + 1) * (w + 2) / 2 <= c {
        w += 1;
    }
    let v = c - w * (w + 1) / 2;
    (w - v, v)
}

const CODE_BITS: u32 = 127;

fn decode(n: u128) -> Option<KCode> {
    let pairs = (0..CODE_BITS as u64)
        .filter(|&b| n >> b & 1 == 1)
        .map(|b| {
            let (k, v) = uncantor(b);
            (k, v)
        })
        .collect();
    KCode::new(pairs)
}

/// Number of kept naturals below `n` (naturals whose decoded pairs have
/// distinct keys).
fn kept_below(n: u128) -> u128 {
    let mut total = 0u128;
    let mut used: BTreeSet<u64> = BTreeSet::new();
    for b in (0..CODE_BITS).rev() {
        if n >> b & 1 == 0 {
            continue;
        }
        // numbers agreeing with n above b, with bit b clear: free below b
        let mut per_key: std::collections::BTreeMap<u64, u128> = std::collections::BTreeMap::new();
        for c in 0..b as u64 {
            *per_key.entry(uncantor(c).0).or_default() += 1;
        }
        let ways: u128 = per_key
            .iter()
            .map(|(k, &cnt)| if used.contains(k) { 1 } else { 1 + cnt })
            .product();
        total += ways;
        let key = uncantor(b as u64).0;
        if !used.insert(key) {
            // every number with this prefix is discarded
            return total;
        }
    }
    total
}

/// `μ(m)`: the `m`-th natural (from 0) whose bitset decodes to pairs with
/// distinct keys, decoded.
pub fn mu(m: u64) -> KCode {
    let target = m as u128;
    let mut hi = 1u128;
    while kept_below(hi) <= target {
        hi <<= 1;
    }
    // least n with kept_below(n + 1) > target
    let mut lo = 0u128;
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if kept_below(mid + 1) > target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    decode(lo).expect("kept code")
}

/// `μ⁻¹`.
pub fn mu_inverse(k: &KCode) -> u64 {
    kept_below(k.code()) as u64
}

// ---------------------------------------------------------------------------
// Infinitude and equinumerosity

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum InfiniteVerdict {
    /// Members appear in the final window `(H-window, H]`, the window being
    /// the largest gap between members seen in the first half of the scan.
    SaturatedUpTo {
        horizon: u64,
        window: u64,
    },
    /// No member in `(last_member, H]`.
    StabilizedAt {
        last_member: u64,
        horizon: u64,
    },
    NoMembersUpTo(u64),
}

/// Bounded replay of "X is infinite iff every tail of μ meets X": scans
/// `μ(0..=H)`.
pub fn infinite_criterion(member: impl Fn(&KCode) -> bool, horizon: u64) -> InfiniteVerdict {
    let hits: Vec<u64> = (0..=horizon).filter(|&m| member(&mu(m))).collect();
    let Some(&last) = hits.last() else {
        return InfiniteVerdict::NoMembersUpTo(horizon);
    };
    let mut window = 0;
    let mut prev: Option<u64> = None;
    for &h in hits.iter().take_while(|&&h| h <= horizon / 2) {
        window = window.max(prev.map_or(h + 1, |p| h - p));
        prev = Some(h);
    }
    if window == 0 {
        window = horizon / 2 + 1;
    }
    if horizon - last < window {
        InfiniteVerdict::SaturatedUpTo { horizon, window }
    } else {
        InfiniteVerdict::StabilizedAt {
            last_member: last,
            horizon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum EquinumerousVerdict {
    Witness { n: usize, f: Vec<KCode>, g: Vec<KCode> },
    NoWitnessUpTo(usize),
}

/// Searches `n ≤ n_max` and injections `f, g: n → K` with
/// `f*(g⁻¹(Y)) = X` and `g*(f⁻¹(X)) = Y`. Ranges are drawn from `X ∪ Y`
/// padded with the first codes under μ outside it; `f` is taken increasing.
pub fn equinumerous_witness(x: &BTreeSet<KCode>, y: &BTreeSet<KCode>, n_max: usize) -> EquinumerousVerdict {
    let mut pool: Vec<KCode> = x.union(y).cloned().collect();
    let mut m = 0;
    while pool.len() < x.len().max(y.len()) + n_max {
        let c = mu(m);
        if !pool.contains(&c) {
            pool.push(c);
        }
        m += 1;
    }
    for n in 0..=n_max {
        let mut f = Vec::new();
        if let Some((f, g)) = search_f(&pool, x, y, n, 0, &mut f) {
            return EquinumerousVerdict::Witness { n, f, g };
        }
    }
    EquinumerousVerdict::NoWitnessUpTo(n_max)
}

fn search_f(
    pool: &[KCode],
    x: &BTreeSet<KCode>,
    y: &BTreeSet<KCode>,
    n: usize,
    from: usize,
    f: &mut Vec<KCode>,
) -> Option<(Vec<KCode>, Vec<KCode>)> {
    if f.len() == n {
        if !x.iter().all(|t| f.contains(t)) {
            return None;
        }
        let mut g = Vec::new();
        return search_g(pool, x, y, f, &mut g).then(|| (f.clone(), g));
    }
    for k in from..pool.len() {
        f.push(pool[k].clone());
        if let Some(w) = search_f(pool, x, y, n, k + 1, f) {
            return Some(w);
        }
        f.pop();
    }
    None
}

/// `g(i) ∈ Y` exactly when `f(i) ∈ X`, and `g` covers `Y`.
fn search_g(pool: &[KCode], x: &BTreeSet<KCode>, y: &BTreeSet<KCode>, f: &[KCode], g: &mut Vec<KCode>) -> bool {
    let i = g.len();
    if i == f.len() {
        return y.iter().all(|t| g.contains(t)) && check_witness(x, y, f, g);
    }
    let want = x.contains(&f[i]);
    for c in pool {
        if y.contains(c) == want && !g.contains(c) {
            g.push(c.clone());
            if search_g(pool, x, y, f, g) {
                return true;
            }
            g.pop();
        }
    }
    false
}

/// `f*(g⁻¹(Y)) = X` and `g*(f⁻¹(X)) = Y`.
pub fn check_witness(x: &BTreeSet<KCode>, y: &BTreeSet<KCode>, f: &[KCode], g: &[KCode]) -> bool {
    let fx: BTreeSet<KCode> = f
        .iter()
        .zip(g)
        .filter(|(_, gi)| y.contains(*gi))
        .map(|(fi, _)| fi.clone())
        .collect();
    let gy: BTreeSet<KCode> = g
        .iter()
        .zip(f)
        .filter(|(_, fi)| x.contains(*fi))
        .map(|(gi, _)| gi.clone())
        .collect();
    &fx == x && &gy == y
}

// ---------------------------------------------------------------------------
// Realization counts

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CountResult {
    Exact(usize),
    AtLeast { m: usize, horizon: usize },
}

impl fmt::Display for CountResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CountResult::Exact(n) => write!(f, "{n}"),
            CountResult::AtLeast { m, horizon } => write!(f, ">={m} (horizon {horizon})"),
        }
    }
}

/// `Sat(a)`: restrictions to `Δa` of the satisfying assignments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SatTable {
    pub dims: Vec<Var>,
    pub tuples: Vec<Vec<usize>>,
    pub count: CountResult,
}

impl SatTable {
    /// The table as a subset of K.
    pub fn codes(&self) -> BTreeSet<KCode> {
        self.tuples.iter().map(|t| KCode::from_tuple(&self.dims, t)).collect()
    }
}

/// Exact table on a finite model, over the semantic dimension set.
pub fn sat_table_model(m: &FiniteModel, sig: &Signature, a: &Formula) -> Result<SatTable, DistinguishError> {
    sig.check(a)?;
    let e = sat_element(m, a);
    let mut tuples: Vec<Vec<usize>> = e.tuples().collect();
    tuples.sort();
    Ok(SatTable {
        dims: e.dims().to_vec(),
        count: CountResult::Exact(tuples.len()),
        tuples,
    })
}

/// Table of the model represented by a Henkin filter, on entries below `b`.
/// Counts are lower bounds unless `a` has no free variables.
pub fn sat_table_filter(f: &GenericFilter, a: &Formula, b: usize) -> Result<SatTable, DistinguishError> {
    f.signature().check(a)?;
    let dims: Vec<Var> = free_vars(a).into_iter().collect();
    let r = rep(f, a)?;
    let mut tuples = Vec::new();
    for t in all_tuples(b, dims.len()) {
        let tau = FiniteTransformation::from_pairs(dims.iter().copied().zip(t.iter().copied()));
        if r.contains(&tau)? {
            tuples.push(t);
        }
    }
    let count = if dims.is_empty() {
        CountResult::Exact(tuples.len())
    } else {
        CountResult::AtLeast {
            m: tuples.len(),
            horizon: b,
        }
    };
    Ok(SatTable { dims, tuples, count })
}

/// A model to compare: a finite structure or the model of a Henkin filter.
#[derive(Debug, Clone, Copy)]
pub enum ModelRef<'a> {
    Finite(&'a FiniteModel),
    Filter(&'a GenericFilter),
}

impl ModelRef<'_> {
    pub fn sat_table(&self, sig: &Signature, a: &Formula, b: usize) -> Result<SatTable, DistinguishError> {
        match self {
            ModelRef::Finite(m) => sat_table_model(m, sig, a),
            ModelRef::Filter(f) => sat_table_filter(f, a, b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict")]
pub enum DistinguishVerdict {
    Distinguished {
        formula: Formula,
        counts: (CountResult, CountResult),
    },
    IndistinguishableUpTo {
        budget: usize,
        horizon: usize,
        /// Formulas whose comparison was inconclusive (both counts bounded).
        inconclusive: usize,
    },
}

/// Variables spanned by the enumerated formulas.
pub const DISTINGUISH_VARS: usize = 2;

/// Compares realization counts of the first `budget` formulas over
/// `v0, v1` (depth, then text order).
pub fn distinguishable(
    m0: ModelRef<'_>,
    m1: ModelRef<'_>,
    sig: &Signature,
    budget: usize,
    horizon: usize,
) -> Result<DistinguishVerdict, DistinguishError> {
    distinguishable_on(m0, m1, sig, &distinguishing_formulas(sig, budget), horizon)
}

/// The first `budget` formulas tried by [`distinguishable`].
pub fn distinguishing_formulas(sig: &Signature, budget: usize) -> Vec<Formula> {
    FormulaEnumerator::new(sig, DISTINGUISH_VARS).take(budget)
}

/// [`distinguishable`] over a given formula list.
pub fn distinguishable_on(
    m0: ModelRef<'_>,
    m1: ModelRef<'_>,
    sig: &Signature,
    formulas: &[Formula],
    horizon: usize,
) -> Result<DistinguishVerdict, DistinguishError> {
    let budget = formulas.len();
    let mut inconclusive = 0;
    for a in formulas {
        let t0 = m0.sat_table(sig, a, horizon)?;
        let t1 = m1.sat_table(sig, a, horizon)?;
        let differ = match (t0.count, t1.count) {
            (CountResult::Exact(c0), CountResult::Exact(c1)) => c0 != c1,
            (CountResult::Exact(c), CountResult::AtLeast { m, .. })
            | (CountResult::AtLeast { m, .. }, CountResult::Exact(c)) => {
                if m > c {
                    true
                } else {
                    inconclusive += 1;
                    false
                }
            }
            (CountResult::AtLeast { .. }, CountResult::AtLeast { .. }) => {
                inconclusive += 1;
                false
            }
        };
        if differ {
            return Ok(DistinguishVerdict::Distinguished {
                formula: a.clone(),
                counts: (t0.count, t1.count),
            });
        }
    }
    Ok(DistinguishVerdict::IndistinguishableUpTo {
        budget,
        horizon,
        inconclusive,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PairVerdict {
    pub i: usize,
    pub j: usize,
    #[serde(flatten)]
    pub verdict: DistinguishVerdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FamilyReport {
    pub pairs: Vec<PairVerdict>,
    pub budget: usize,
    pub horizon: usize,
}

/// All pairs `i < j` of a family. Finite models are compared in parallel;
/// families with filters run sequentially so lazy decisions stay
/// deterministic.
pub fn classify(
    models: &[ModelRef<'_>],
    sig: &Signature,
    budget: usize,
    horizon: usize,
) -> Result<FamilyReport, DistinguishError> {
    let pairs: Vec<(usize, usize)> = (0..models.len())
        .flat_map(|i| (i + 1..models.len()).map(move |j| (i, j)))
        .collect();
    let formulas = distinguishing_formulas(sig, budget);
    let run = |&(i, j): &(usize, usize)| {
        distinguishable_on(models[i], models[j], sig, &formulas, horizon).map(|verdict| PairVerdict { i, j, verdict })
    };
    let all_finite = models.iter().all(|m| matches!(m, ModelRef::Finite(_)));
    let pairs: Result<Vec<PairVerdict>, DistinguishError> = if all_finite {
        pairs.par_iter().map(run).collect()
    } else {
        pairs.iter().map(run).collect()
    };
    Ok(FamilyReport {
        pairs: pairs?,
        budget,
        horizon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::{parse_formula, Mode};

    fn sig() -> Signature {
        Signature::new("lt", vec![("lt".into(), 2)], Mode::WithoutEquality).unwrap()
    }

    fn chain(n: usize) -> FiniteModel {
        let lt = (0..n).flat_map(|i| (i + 1..n).map(move |j| vec![i, j])).collect();
        FiniteModel::new(format!("C{n}"), n, &sig(), [("lt".to_string(), lt)].into()).unwrap()
    }

    /// The kept naturals by direct enumeration.
    fn kept_naive(limit: usize) -> Vec<u128> {
        (0u128..).filter(|&n| decode(n).is_some()).take(limit).collect()
    }

    #[test]
    fn cantor_roundtrip() {
        for k in 0..40 {
            for v in 0..40 {
                assert_eq!(uncantor(cantor(k, v)), (k, v));
            }
        }
        assert_eq!(
            (0..6).map(uncantor).collect::<Vec<_>>(),
            vec![(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
        );
    }

    #[test]
    fn mu_matches_direct_enumeration() {
        let naive = kept_naive(2000);
        for (m, &n) in naive.iter().enumerate() {
            assert_eq!(mu(m as u64).code(), n, "mu({m})");
            assert_eq!(mu_inverse(&decode(n).unwrap()), m as u64);
        }
    }

    #[test]
    fn mu_pins() {
        assert_eq!(mu(0), KCode::empty());
        assert_eq!(mu(1).to_string(), "{0->0}");
        assert_eq!(mu(2).to_string(), "{1->0}");
        assert_eq!(mu(3).to_string(), "{0->0, 1->0}");
        // bits 0 and 2 both have key 0
        assert_eq!(mu(4).to_string(), "{0->1}");
    }

    #[test]
    fn infinite_criterion_examples() {
        assert!(matches!(
            infinite_criterion(|_| true, 50),
            InfiniteVerdict::SaturatedUpTo { .. }
        ));
        let finite = [mu(0), mu(5)];
        for h in 6..40 {
            assert_eq!(
                infinite_criterion(|k| finite.contains(k), h),
                InfiniteVerdict::StabilizedAt {
                    last_member: 5,
                    horizon: h
                }
            );
        }
        assert_eq!(
            infinite_criterion(|k| k.pairs().is_empty(), 100),
            InfiniteVerdict::StabilizedAt {
                last_member: 0,
                horizon: 100
            }
        );
        assert_eq!(infinite_criterion(|_| false, 10), InfiniteVerdict::NoMembersUpTo(10));
    }

    #[test]
    fn equinumerous_examples() {
        let codes: Vec<KCode> = (0..8).map(mu).collect();
        let set = |ix: &[usize]| ix.iter().map(|&i| codes[i].clone()).collect::<BTreeSet<_>>();
        let x = set(&[1, 2]);
        match equinumerous_witness(&x, &x, 4) {
            EquinumerousVerdict::Witness { n, f, g } => {
                assert_eq!(n, 2);
                assert!(check_witness(&x, &x, &f, &g));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(
            equinumerous_witness(&x, &set(&[3, 4, 5]), 4),
            EquinumerousVerdict::NoWitnessUpTo(4)
        );
        assert!(matches!(
            equinumerous_witness(&x, &set(&[6, 7]), 4),
            EquinumerousVerdict::Witness { n: 2, .. }
        ));
    }

    #[test]
    fn sat_table_examples() {
        let s = sig();
        let c3 = chain(3);
        let t = sat_table_model(&c3, &s, &parse_formula("lt(v0,v1)", &s).unwrap()).unwrap();
        assert_eq!(t.tuples, vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
        assert_eq!(t.count, CountResult::Exact(3));
        let f = sat_table_model(&c3, &s, &Formula::False).unwrap();
        assert_eq!(f.count, CountResult::Exact(0));
        let t = sat_table_model(&c3, &s, &parse_formula("lt(v0,v1) | ~lt(v0,v1)", &s).unwrap()).unwrap();
        assert!(t.dims.is_empty());
        assert_eq!(t.tuples, vec![Vec::<usize>::new()]);
        assert_eq!(t.count, CountResult::Exact(1));
    }

    #[test]
    fn distinguish_examples() {
        let s = sig();
        let (c2, c3) = (chain(2), chain(3));
        let v = distinguishable(ModelRef::Finite(&c2), ModelRef::Finite(&c3), &s, 50, 4).unwrap();
        assert_eq!(
            v,
            DistinguishVerdict::Distinguished {
                formula: parse_formula("lt(v0,v1)", &s).unwrap(),
                counts: (CountResult::Exact(1), CountResult::Exact(3)),
            }
        );
        assert!(matches!(
            distinguishable(ModelRef::Finite(&c3), ModelRef::Finite(&c3), &s, 100, 4).unwrap(),
            DistinguishVerdict::IndistinguishableUpTo { .. }
        ));
    }

    #[test]
    fn family_report_is_symmetric_in_content() {
        let s = sig();
        let ms = [chain(1), chain(2), chain(3), chain(2)];
        let refs: Vec<ModelRef> = ms.iter().map(ModelRef::Finite).collect();
        let r = classify(&refs, &s, 30, 3).unwrap();
        assert_eq!(r.pairs.len(), 6);
        let indist: Vec<(usize, usize)> = r
            .pairs
            .iter()
            .filter(|p| matches!(p.verdict, DistinguishVerdict::IndistinguishableUpTo { .. }))
            .map(|p| (p.i, p.j))
            .collect();
        assert_eq!(indist, vec![(1, 3)]);
        let back = distinguishable(refs[3], refs[1], &s, 30, 3).unwrap();
        assert!(matches!(back, DistinguishVerdict::IndistinguishableUpTo { .. }));
    }
}
