//! The representation `rep_F`: models extracted from Henkin ultrafilters,
//! homomorphism checks, and the ultrafilter/isomorphism correspondence on
//! finite models.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::algebra::{all_tuples, ExtElement, SetAlgebra};
use crate::oracle::{FiniteModel, OracleError};
use crate::stone::{GenericFilter, HenkinMode, StoneError};
use crate::syntax::{apply_transformation, free_vars, FiniteTransformation, Formula, Mode, Signature, Var, VarSet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReprError {
    #[error(transparent)]
    Stone(#[from] StoneError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("the filter is still under construction")]
    Unfrozen,
    #[error("horizon {requested} exceeds the construction horizon {available}")]
    HorizonExceeded { requested: usize, available: usize },
    #[error("models have different sizes ({0} and {1})")]
    SizeMismatch(usize, usize),
    #[error("{0:?} is not a bijection of the base")]
    NotBijection(Vec<usize>),
    #[error("equality quotient needs a with-equality theory")]
    QuotientNeedsEquality,
}

fn frozen(f: &GenericFilter) -> Result<(), ReprError> {
    if f.is_frozen() {
        Ok(())
    } else {
        Err(ReprError::Unfrozen)
    }
}

/// `rep_F(x) = { τ : s_τ x ∈ F }`, evaluated lazily.
#[derive(Debug, Clone)]
pub struct RepElement {
    pub formula: Formula,
    pub dims: VarSet,
    filter: GenericFilter,
}

impl RepElement {
    /// Membership of the finite-support assignment `tau`; only `tau` on the
    /// free variables matters.
    pub fn contains(&self, tau: &FiniteTransformation) -> Result<bool, ReprError> {
        let restricted = FiniteTransformation::from_pairs(self.dims.iter().map(|&d| (d, tau.apply(d))));
        Ok(self
            .filter
            .membership(&apply_transformation(&restricted, &self.formula))?)
    }
}

pub fn rep(f: &GenericFilter, x: &Formula) -> Result<RepElement, ReprError> {
    frozen(f)?;
    Ok(RepElement {
        formula: x.clone(),
        dims: free_vars(x),
        filter: f.clone(),
    })
}

/// A model on the segment `{0..B-1}` of ω read off a Henkin ultrafilter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExtractedModel {
    pub base_size: usize,
    pub horizon: usize,
    pub relations: BTreeMap<String, Vec<Vec<usize>>>,
    pub provenance: String,
}

fn provenance(f: &GenericFilter) -> String {
    format!(
        "henkin filter: mode {}, budget {}, horizon {}, {} trace steps",
        f.mode(),
        f.budget(),
        f.horizon(),
        f.steps()
    )
}

/// Interprets each relation symbol by the tuples `t` over `{0..b-1}` with
/// `R(v_t) ∈ F`.
pub fn extract_model(f: &GenericFilter, b: usize) -> Result<ExtractedModel, ReprError> {
    frozen(f)?;
    if b > f.horizon() {
        return Err(ReprError::HorizonExceeded {
            requested: b,
            available: f.horizon(),
        });
    }
    let sig = f.signature();
    let mut relations = BTreeMap::new();
    for (sym, arity) in &sig.relations {
        let mut tuples = Vec::new();
        for t in all_tuples(b, *arity) {
            if f.membership(&Formula::rel(sym, t.clone()))? {
                tuples.push(t);
            }
        }
        relations.insert(sym.clone(), tuples);
    }
    Ok(ExtractedModel {
        base_size: b,
        horizon: f.horizon(),
        relations,
        provenance: provenance(f),
    })
}

impl ExtractedModel {
    /// The prefix as a finite structure (for brute-force checks).
    pub fn to_finite_model(&self, sig: &Signature) -> Result<FiniteModel, OracleError> {
        let rels = self
            .relations
            .iter()
            .map(|(s, ts)| (s.clone(), ts.iter().cloned().collect::<BTreeSet<_>>()))
            .collect();
        FiniteModel::new("extracted", self.base_size, sig, rels)
    }
}

/// Extension beyond the H′ route, for theories whose models are finite: the
/// base is `{0..B-1}` modulo `i ~ j iff d_ij ∈ F`, each class named by its
/// least index.
pub fn extract_quotient_model(f: &GenericFilter, b: usize) -> Result<ExtractedModel, ReprError> {
    frozen(f)?;
    if !f.signature().mode.has_equality() {
        return Err(ReprError::QuotientNeedsEquality);
    }
    let prefix = extract_model(f, b)?;
    let mut class = vec![0; b];
    for i in 0..b {
        class[i] = i;
        for j in 0..i {
            if class[j] == j && f.membership(&Formula::Eq(j, i))? {
                class[i] = j;
                break;
            }
        }
    }
    let reps: Vec<usize> = (0..b).filter(|&i| class[i] == i).collect();
    let rename = |i: usize| reps.binary_search(&class[i]).unwrap();
    let relations = prefix
        .relations
        .into_iter()
        .map(|(s, ts)| {
            let set: BTreeSet<Vec<usize>> = ts.into_iter().map(|t| t.into_iter().map(rename).collect()).collect();
            (s, set.into_iter().collect())
        })
        .collect();
    Ok(ExtractedModel {
        base_size: reps.len(),
        horizon: f.horizon(),
        relations,
        provenance: format!("{} (quotient by decided diagonals, extension)", provenance(f)),
    })
}

// ---------------------------------------------------------------------------
// Homomorphism check

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct HomomorphismReport {
    pub horizon: usize,
    pub agreements: usize,
    pub violations: Vec<String>,
    /// Existential checks whose witness lies at or beyond the horizon and was
    /// confirmed by replaying the recorded Henkin witness.
    pub witness_replays: usize,
}

impl HomomorphismReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    fn record(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if ok {
            self.agreements += 1;
        } else {
            self.violations.push(what());
        }
    }
}

/// Assignments of `vars` into `{0..b-1}`, other indices fixed.
fn assignments(vars: &VarSet, b: usize) -> Vec<FiniteTransformation> {
    let vs: Vec<Var> = vars.iter().copied().collect();
    all_tuples(b, vs.len())
        .map(|t| FiniteTransformation::from_pairs(vs.iter().copied().zip(t)))
        .collect()
}

/// Checks that `rep_F` commutes with ∧, ∨, ¬, `c_i`, `d_ij` (H′ only) and
/// `s_σ` on every assignment of the involved variables into `{0..b-1}`.
/// `sample` supplies the elements; binary operations run over all pairs.
pub fn check_homomorphism(f: &GenericFilter, sample: &[Formula], b: usize) -> Result<HomomorphismReport, ReprError> {
    frozen(f)?;
    let mut report = HomomorphismReport {
        horizon: b,
        ..Default::default()
    };
    let member = |x: &Formula, tau: &FiniteTransformation| -> Result<bool, ReprError> { rep(f, x)?.contains(tau) };
    let mut taus = Vec::new();
    for i in 0..b.min(3) {
        for j in 0..b.min(3) {
            if i != j {
                taus.push(FiniteTransformation::replacement(i, j));
                if i < j {
                    taus.push(FiniteTransformation::transposition(i, j));
                }
            }
        }
    }
    for x in sample {
        let fx = free_vars(x);
        let nx = Formula::not(x.clone());
        for tau in assignments(&fx, b) {
            let a = member(x, &tau)?;
            report.record(member(&nx, &tau)? != a, || format!("rep(~{x}) at {tau}"));
        }
        for &i in &fx {
            let cx = Formula::exists(i, x.clone());
            for tau in assignments(&fx, b) {
                let lhs = member(&cx, &tau)?;
                let in_horizon = (0..b).any(|u| member(x, &tau.with(i, u)).unwrap_or(false));
                if in_horizon {
                    report.record(lhs, || format!("rep(E v{i} {x}) misses a projected point at {tau}"));
                } else if lhs {
                    let ok = replay_witness(f, &cx, x, i, &tau)?;
                    if ok {
                        report.witness_replays += 1;
                    }
                    report.record(ok, || format!("rep(E v{i} {x}) at {tau} has no witness"));
                } else {
                    report.agreements += 1;
                }
            }
        }
        for sigma in &taus {
            let sx = apply_transformation(sigma, x);
            let mut vars = fx.clone();
            vars.extend(free_vars(&sx));
            for tau in assignments(&vars, b) {
                let lhs = member(&sx, &tau)?;
                let rhs = member(x, &tau.compose(sigma))?;
                report.record(lhs == rhs, || format!("rep(s_{sigma} {x}) at {tau}"));
            }
        }
        for y in sample {
            let mut vars = fx.clone();
            vars.extend(free_vars(y));
            let meet = Formula::and(x.clone(), y.clone());
            let join = Formula::or(x.clone(), y.clone());
            for tau in assignments(&vars, b) {
                let (a, c) = (member(x, &tau)?, member(y, &tau)?);
                report.record(member(&meet, &tau)? == (a && c), || format!("rep({x} & {y}) at {tau}"));
                report.record(member(&join, &tau)? == (a || c), || format!("rep({x} | {y}) at {tau}"));
            }
        }
    }
    if f.mode() == HenkinMode::HPrime {
        for i in 0..b {
            for j in 0..b {
                let d = Formula::Eq(i, j);
                let vars: VarSet = [i, j].into();
                for tau in assignments(&vars, b) {
                    let want = tau.apply(i) == tau.apply(j);
                    report.record(member(&d, &tau)? == want, || format!("rep(d_{i}{j}) at {tau}"));
                }
            }
        }
    }
    Ok(report)
}

/// `s_τ c_i x ∈ F` without a witness below the horizon: the witness `j`
/// recorded for the queried formula must put `s_{τ[i↦j]} x` in `F`.
fn replay_witness(
    f: &GenericFilter,
    cx: &Formula,
    x: &Formula,
    i: Var,
    tau: &FiniteTransformation,
) -> Result<bool, ReprError> {
    let fv = free_vars(cx);
    let restricted = FiniteTransformation::from_pairs(fv.iter().map(|&d| (d, tau.apply(d))));
    let query = apply_transformation(&restricted, cx);
    let Some(j) = f.witness(&query) else {
        return Ok(false);
    };
    rep(f, x)?.contains(&tau.with(i, j))
}

// ---------------------------------------------------------------------------
// Ultrafilters and isomorphisms of finite models

/// The atoms `R(v_t)` over variables `v0..v{n-1}`, plus `vi = vj` (`i < j`)
/// in with-equality mode.
pub fn atoms_over(sig: &Signature, n: usize) -> Vec<Formula> {
    let mut out = Vec::new();
    for (sym, arity) in &sig.relations {
        for t in all_tuples(n, *arity) {
            out.push(Formula::rel(sym, t));
        }
    }
    if sig.mode == Mode::WithEquality {
        for i in 0..n {
            for j in i + 1..n {
                out.push(Formula::Eq(i, j));
            }
        }
    }
    out
}

/// `Sat_M(φ)` as an element of the full set algebra over M's base.
pub fn sat_element(m: &FiniteModel, phi: &Formula) -> ExtElement {
    let alg = SetAlgebra::new(m.size.max(1), Mode::WithEquality);
    let dims: Vec<Var> = free_vars(phi).into_iter().collect();
    alg.from_fn(&dims, |t| m.satisfies(phi, &dims, t))
}

/// For each atom `φ` over `v0..v{n-1}`: is the identity assignment in
/// `s_ρ Sat_M(φ)`? This is membership of `φ` in `s⁺_ρ` applied to the
/// principal ultrafilter of M at the identity.
pub fn translated_profile(m: &FiniteModel, sig: &Signature, rho: &[usize]) -> Vec<bool> {
    SatProfile::new(m, sig).translated(rho)
}

/// The satisfaction sets of the atoms over a model's base, computed once so
/// that translated profiles for many `ρ` are cheap.
#[derive(Debug, Clone)]
pub struct SatProfile<'a> {
    model: &'a FiniteModel,
    alg: SetAlgebra,
    sats: Vec<ExtElement>,
}

impl<'a> SatProfile<'a> {
    pub fn new(m: &'a FiniteModel, sig: &Signature) -> Self {
        Self {
            model: m,
            alg: SetAlgebra::new(m.size.max(1), Mode::WithEquality),
            sats: atoms_over(sig, m.size).iter().map(|phi| sat_element(m, phi)).collect(),
        }
    }

    pub fn model(&self) -> &FiniteModel {
        self.model
    }

    pub fn translated(&self, rho: &[usize]) -> Vec<bool> {
        let tau = FiniteTransformation::from_prefix(rho);
        self.sats
            .iter()
            .map(|sat| self.alg.ext_substitute(&tau, sat).contains_with(|d| d))
            .collect()
    }
}

fn is_bijection(rho: &[usize]) -> bool {
    let mut seen = vec![false; rho.len()];
    rho.iter()
        .all(|&x| x < rho.len() && !std::mem::replace(&mut seen[x], true))
}

/// `(left, right)`: left is "ρ is an isomorphism M0 → M1", checked
/// directly; right is "F₁ = s⁺_ρ F₀" for the identity-principal ultrafilters
/// of the full set algebras over the two models, checked on the atoms over
/// `v0..v{n-1}` through their satisfaction sets.
pub fn iso_correspondence_check(
    m0: &FiniteModel,
    m1: &FiniteModel,
    sig: &Signature,
    rho: &[usize],
) -> Result<(bool, bool), ReprError> {
    iso_correspondence_cached(&SatProfile::new(m0, sig), &SatProfile::new(m1, sig), sig, rho)
}

/// [`iso_correspondence_check`] on precomputed profiles.
pub fn iso_correspondence_cached(
    p0: &SatProfile<'_>,
    p1: &SatProfile<'_>,
    sig: &Signature,
    rho: &[usize],
) -> Result<(bool, bool), ReprError> {
    let (m0, m1) = (p0.model, p1.model);
    if m0.size != m1.size || rho.len() != m0.size {
        return Err(ReprError::SizeMismatch(m0.size, m1.size));
    }
    if !is_bijection(rho) {
        return Err(ReprError::NotBijection(rho.to_vec()));
    }
    let left = sig.relations.iter().all(|(sym, arity)| {
        all_tuples(m0.size, *arity).all(|t| {
            let image: Vec<usize> = t.iter().map(|&x| rho[x]).collect();
            m0.holds(sym, &t) == m1.holds(sym, &image)
        })
    });
    let identity: Vec<usize> = (0..m0.size).collect();
    let right = p0.translated(&identity) == p1.translated(rho);
    Ok((left, right))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use crate::algebra::FormulaAlgebra;
    use crate::oracle::{DloOracle, FiniteModelOracle};
    use crate::stone::{henkin_build, BuildConfig};
    use crate::syntax::{parse_formula, FormulaEnumerator};

    fn dlo_filter(mode: HenkinMode, budget: usize, horizon: usize) -> GenericFilter {
        let alg = FormulaAlgebra::new(Arc::new(DloOracle::new()));
        henkin_build(&alg, &Formula::True, &BuildConfig::new(mode, budget, horizon)).unwrap()
    }

    fn lt_sig(mode: Mode) -> Signature {
        Signature::new("lt", vec![("lt".into(), 2)], mode).unwrap()
    }

    fn model(sig: &Signature, n: usize, pairs: &[(usize, usize)]) -> FiniteModel {
        let rel = pairs.iter().map(|&(a, b)| vec![a, b]).collect();
        FiniteModel::new("M", n, sig, [("lt".to_string(), rel)].into()).unwrap()
    }

    #[test]
    fn rep_examples() {
        let f = dlo_filter(HenkinMode::HPrime, 64, 6);
        let sig = DloOracle::signature_lt();
        let one = rep(&f, &Formula::True).unwrap();
        assert!(one.contains(&FiniteTransformation::from_prefix(&[3, 1])).unwrap());
        assert!(!rep(&f, &Formula::False)
            .unwrap()
            .contains(&FiniteTransformation::identity())
            .unwrap());
        let lt = parse_formula("lt(v0,v1)", &sig).unwrap();
        assert_eq!(
            rep(&f, &lt)
                .unwrap()
                .contains(&FiniteTransformation::identity())
                .unwrap(),
            f.membership(&lt).unwrap()
        );
    }

    #[test]
    fn dlo_extracted_model_is_a_dense_strict_order_prefix() {
        let f = dlo_filter(HenkinMode::HPrime, 64, 8);
        let m = extract_model(&f, 8).unwrap();
        let lt: BTreeSet<Vec<usize>> = m.relations["lt"].iter().cloned().collect();
        for a in 0..8 {
            assert!(!lt.contains(&vec![a, a]));
            for b in 0..8 {
                if a != b {
                    assert!(lt.contains(&vec![a, b]) ^ lt.contains(&vec![b, a]), "{a} {b}");
                }
                for c in 0..8 {
                    if lt.contains(&vec![a, b]) && lt.contains(&vec![b, c]) {
                        assert!(lt.contains(&vec![a, c]));
                    }
                }
            }
        }
        assert_eq!(extract_model(&f, 0).unwrap().relations["lt"].len(), 0);
        assert!(matches!(extract_model(&f, 9), Err(ReprError::HorizonExceeded { .. })));
    }

    #[test]
    fn symmetric_edge_theory_extracts_symmetric_irreflexive_models() {
        let sig = Signature::new("edge", vec![("e".into(), 2)], Mode::WithoutEquality).unwrap();
        let tri = FiniteModel::new(
            "K3",
            3,
            &sig,
            [(
                "e".to_string(),
                [[0, 1], [1, 0], [1, 2], [2, 1], [0, 2], [2, 0]]
                    .iter()
                    .map(|t| t.to_vec())
                    .collect(),
            )]
            .into(),
        )
        .unwrap();
        let path = FiniteModel::new(
            "P3",
            3,
            &sig,
            [(
                "e".to_string(),
                [[0, 1], [1, 0], [1, 2], [2, 1]].iter().map(|t| t.to_vec()).collect(),
            )]
            .into(),
        )
        .unwrap();
        let alg = FormulaAlgebra::new(Arc::new(FiniteModelOracle::new(sig, vec![tri, path]).unwrap()));
        let f = henkin_build(&alg, &Formula::True, &BuildConfig::new(HenkinMode::H, 40, 5)).unwrap();
        for b in 0..=5 {
            let m = extract_model(&f, b).unwrap();
            let e: BTreeSet<Vec<usize>> = m.relations["e"].iter().cloned().collect();
            for t in &e {
                assert_ne!(t[0], t[1]);
                assert!(e.contains(&vec![t[1], t[0]]));
            }
        }
    }

    #[test]
    fn homomorphism_on_dlo_generators() {
        let f = dlo_filter(HenkinMode::HPrime, 64, 4);
        let sig = DloOracle::signature_lt();
        let mut gens = FormulaEnumerator::new(&sig, 2).level(0).to_vec();
        gens.push(parse_formula("E v1 (lt(v0,v1))", &sig).unwrap());
        let r = check_homomorphism(&f, &gens, 4).unwrap();
        assert!(r.passed(), "{:?}", &r.violations[..r.violations.len().min(5)]);
        assert!(r.agreements > 0);
    }

    #[test]
    fn quotient_fallback_for_finite_theories() {
        let sig = lt_sig(Mode::WithEquality);
        let c2 = model(&sig, 2, &[(0, 1)]);
        let alg = FormulaAlgebra::new(Arc::new(FiniteModelOracle::new(sig, vec![c2]).unwrap()));
        let f = henkin_build(&alg, &Formula::True, &BuildConfig::new(HenkinMode::H, 30, 4)).unwrap();
        let q = extract_quotient_model(&f, 4).unwrap();
        assert!(q.base_size <= 2);
        assert!(q.provenance.contains("extension"));
    }

    #[test]
    fn iso_correspondence_examples() {
        let sig = lt_sig(Mode::WithoutEquality);
        let c2 = model(&sig, 2, &[(0, 1)]);
        assert_eq!(iso_correspondence_check(&c2, &c2, &sig, &[0, 1]).unwrap(), (true, true));
        assert_eq!(
            iso_correspondence_check(&c2, &c2, &sig, &[1, 0]).unwrap(),
            (false, false)
        );
        let relabeled = model(&sig, 2, &[(1, 0)]);
        assert_eq!(
            iso_correspondence_check(&c2, &relabeled, &sig, &[1, 0]).unwrap(),
            (true, true)
        );
        assert!(matches!(
            iso_correspondence_check(&c2, &model(&sig, 3, &[]), &sig, &[0, 1]),
            Err(ReprError::SizeMismatch(2, 3))
        ));
        assert!(iso_correspondence_check(&c2, &c2, &sig, &[0, 0]).is_err());
    }

    #[test]
    fn unfrozen_filters_are_rejected() {
        // every built filter is frozen; rep is available
        let f = dlo_filter(HenkinMode::H, 4, 2);
        assert!(rep(&f, &Formula::True).is_ok());
    }
}
