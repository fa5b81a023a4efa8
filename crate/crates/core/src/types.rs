//! Types (sets of formulas): principality, local omission and omission checks.

use std::fmt;

use serde::Serialize;

use crate::oracle::{FiniteModel, OracleError, TheoryOracle};
use crate::stone::{transformations_within, GenericFilter, Requirement, StoneError};
use crate::syntax::{
    apply_transformation, free_vars, parse_formula, FiniteTransformation, Formula, FormulaEnumerator, Signature,
    SyntaxError, Var, VarSet,
};

/// A set of formulas: an explicit finite list or a built-in generated family.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TypeSet {
    Finite {
        name: String,
        formulas: Vec<Formula>,
    },
    /// `{ v1 < v0, v2 < v1, … }`: member `k` is `lt(v{k+1},vk)`.
    DescendingChain,
}

impl TypeSet {
    pub fn finite(name: &str, formulas: Vec<Formula>) -> Self {
        TypeSet::Finite {
            name: name.to_string(),
            formulas,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            TypeSet::Finite { name, .. } => name,
            TypeSet::DescendingChain => "descending-chain",
        }
    }

    /// Member `k`, if the type has one.
    pub fn member(&self, k: usize) -> Option<Formula> {
        match self {
            TypeSet::Finite { formulas, .. } => formulas.get(k).cloned(),
            TypeSet::DescendingChain => Some(Formula::rel("lt", vec![k + 1, k])),
        }
    }

    /// Members with index at most `k_max`.
    pub fn members_upto(&self, k_max: usize) -> Vec<Formula> {
        match self {
            TypeSet::Finite { formulas, .. } => formulas.iter().take(k_max.saturating_add(1)).cloned().collect(),
            TypeSet::DescendingChain => (0..=k_max).filter_map(|k| self.member(k)).collect(),
        }
    }

    /// The members tracked at a construction horizon: all of a finite type,
    /// indices `0..=horizon` of a generated one.
    pub fn tracked_members(&self, horizon: usize) -> Vec<Formula> {
        match self {
            TypeSet::Finite { formulas, .. } => formulas.clone(),
            TypeSet::DescendingChain => self.members_upto(horizon),
        }
    }

    /// Whether the free variables of all members fit in a finite set.
    pub fn is_bounded(&self) -> bool {
        matches!(self, TypeSet::Finite { .. })
    }

    /// Free variables of a bounded type.
    pub fn span(&self) -> Option<VarSet> {
        match self {
            TypeSet::Finite { formulas, .. } => Some(formulas.iter().flat_map(free_vars).collect()),
            TypeSet::DescendingChain => None,
        }
    }

    /// Reads a type file: one formula per line, `#` comments, or a
    /// `generator: descending-chain` header.
    pub fn parse(name: &str, text: &str, sig: &Signature) -> Result<Self, SyntaxError> {
        let mut formulas = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(gen) = line.strip_prefix("generator:") {
                let gen = gen.trim();
                if gen != "descending-chain" {
                    return Err(SyntaxError::Parse {
                        pos: lineno,
                        msg: format!("unknown generator `{gen}`"),
                    });
                }
                if sig.arity("lt") != Some(2) {
                    return Err(SyntaxError::UnknownRelation("lt".into()));
                }
                return Ok(TypeSet::DescendingChain);
            }
            formulas.push(parse_formula(line, sig)?);
        }
        Ok(TypeSet::finite(name, formulas))
    }
}

impl fmt::Display for TypeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeSet::Finite { name, formulas } => {
                write!(f, "{name} = {{")?;
                for (k, g) in formulas.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{g}")?;
                }
                f.write_str("}")
            }
            TypeSet::DescendingChain => f.write_str("descending-chain"),
        }
    }
}

impl Serialize for TypeSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

/// Largest free variable plus one (0 for sentences).
pub fn var_span(f: &Formula) -> Var {
    free_vars(f).iter().next_back().map_or(0, |v| v + 1)
}

// ---------------------------------------------------------------------------
// Principality

/// Whether a type is principal over the theory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict")]
pub enum PrincipalityVerdict {
    Principal {
        witness: Formula,
    },
    /// No witness among candidates of depth at most `depth` implies the
    /// first `members` members.
    NonPrincipalUpTo {
        members: usize,
        depth: usize,
    },
    /// Non-principal by a built-in argument.
    NonPrincipalCertified {
        argument: String,
    },
}

/// The certified arguments: the descending chain over dense linear orders,
/// where `φ ∧ ¬(v{n+2} < v{n+1})` stays consistent for every consistent `φ`
/// in `v0..v{n-1}`.
fn certified(oracle: &dyn TheoryOracle, x: &TypeSet) -> Option<String> {
    (x == &TypeSet::DescendingChain && oracle.kind() == "dlo-qe").then(|| {
        "dense linear order without endpoints: any consistent formula in v0..v(n-1) stays consistent with not lt(v(n+2),v(n+1))".to_string()
    })
}

/// Searches for a consistent `ψ` implying the first `candidate_bound`
/// members of `x`, among formulas of depth at most `depth_bound` over the
/// members' variables.
pub fn principality(
    oracle: &dyn TheoryOracle,
    x: &TypeSet,
    candidate_bound: usize,
    depth_bound: usize,
) -> Result<PrincipalityVerdict, OracleError> {
    if let Some(argument) = certified(oracle, x) {
        return Ok(PrincipalityVerdict::NonPrincipalCertified { argument });
    }
    let members = x.members_upto(candidate_bound.saturating_sub(1));
    let conj = Formula::conj(members.iter().cloned());
    if oracle.is_consistent(&conj)? {
        return Ok(PrincipalityVerdict::Principal { witness: conj });
    }
    let nvars = members.iter().map(var_span).max().unwrap_or(0);
    let mut en = FormulaEnumerator::new(oracle.signature(), nvars);
    for psi in en.up_to_depth(depth_bound) {
        if !oracle.is_consistent(&psi)? {
            continue;
        }
        let mut all = true;
        for m in &members {
            if !oracle.entails(&psi, m)? {
                all = false;
                break;
            }
        }
        if all {
            return Ok(PrincipalityVerdict::Principal { witness: psi });
        }
    }
    Ok(PrincipalityVerdict::NonPrincipalUpTo {
        members: members.len(),
        depth: depth_bound,
    })
}

// ---------------------------------------------------------------------------
// Local omission

/// One checked formula of a local omission run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LocalOmissionCase {
    pub formula: Formula,
    /// Index of the member `ξ` with `φ ∧ ¬ξ` consistent.
    pub member: Option<usize>,
    pub negated_member: Option<Formula>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LocalOmissionReport {
    pub type_name: String,
    pub member_bound: usize,
    pub checked: usize,
    pub inconsistent_skipped: usize,
    pub cases: Vec<LocalOmissionCase>,
    pub failures: Vec<Formula>,
}

impl LocalOmissionReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// The member index tried first for `φ`: for the descending chain, the step
/// `¬(v{n+2} < v{n+1})` with `n` the variable span of `φ`.
pub fn preferred_member(x: &TypeSet, phi: &Formula) -> Option<usize> {
    match x {
        TypeSet::DescendingChain => Some(var_span(phi) + 1),
        TypeSet::Finite { .. } => None,
    }
}

/// For each consistent `φ` of `sample`, finds a member `ξ` (index at most
/// `member_bound`, preferred index first) with `φ ∧ ¬ξ` consistent.
pub fn locally_omits(
    oracle: &dyn TheoryOracle,
    x: &TypeSet,
    sample: &[Formula],
    member_bound: usize,
) -> Result<LocalOmissionReport, OracleError> {
    let mut report = LocalOmissionReport {
        type_name: x.name().to_string(),
        member_bound,
        checked: 0,
        inconsistent_skipped: 0,
        cases: Vec::new(),
        failures: Vec::new(),
    };
    for phi in sample {
        if !oracle.is_consistent(phi)? {
            report.inconsistent_skipped += 1;
            continue;
        }
        report.checked += 1;
        let mut order: Vec<usize> = preferred_member(x, phi).into_iter().collect();
        order.extend((0..=member_bound).filter(|k| Some(*k) != preferred_member(x, phi)));
        let mut found = None;
        for k in order {
            let Some(xi) = x.member(k) else { continue };
            let neg = Formula::not(xi);
            if oracle.is_consistent_all(&[phi, &neg])? {
                found = Some((k, neg));
                break;
            }
        }
        match found {
            Some((k, neg)) => report.cases.push(LocalOmissionCase {
                formula: phi.clone(),
                member: Some(k),
                negated_member: Some(neg),
            }),
            None => {
                report.failures.push(phi.clone());
                report.cases.push(LocalOmissionCase {
                    formula: phi.clone(),
                    member: None,
                    negated_member: None,
                })
            }
        }
    }
    Ok(report)
}

/// Representatives of every class, modulo `T`-equivalence, of formulas of
/// depth at most `depth` over `v0..v{nvars-1}`, each paired with the least
/// depth at which it appears. Built by closing level-0 formulas under `¬`,
/// `∃`, `∧`, `∨` one depth at a time; exact because equivalence is a
/// congruence for these operations.
pub fn classes_up_to_depth(
    oracle: &dyn TheoryOracle,
    nvars: usize,
    depth: usize,
) -> Result<Vec<(Formula, usize)>, OracleError> {
    let mut reps: Vec<(Formula, usize)> = Vec::new();
    let add = |reps: &mut Vec<(Formula, usize)>, f: Formula, d: usize| -> Result<bool, OracleError> {
        for (r, _) in reps.iter() {
            if oracle.entails_equal(r, &f)? {
                return Ok(false);
            }
        }
        reps.push((f, d));
        Ok(true)
    };
    let mut en = FormulaEnumerator::new(oracle.signature(), nvars);
    for f in en.level(0).to_vec() {
        add(&mut reps, f, 0)?;
    }
    for d in 1..=depth {
        let prev: Vec<Formula> = reps.iter().map(|(f, _)| f.clone()).collect();
        let mut grew = false;
        for a in &prev {
            grew |= add(&mut reps, Formula::not(a.clone()), d)?;
            for v in 0..nvars {
                grew |= add(&mut reps, Formula::exists(v, a.clone()), d)?;
            }
            for b in &prev {
                grew |= add(&mut reps, Formula::and(a.clone(), b.clone()), d)?;
                grew |= add(&mut reps, Formula::or(a.clone(), b.clone()), d)?;
            }
        }
        if !grew {
            break;
        }
    }
    Ok(reps)
}

// ---------------------------------------------------------------------------
// Omission

/// One `OmitType(X, τ)` requirement per map `τ: {0..h-1} → {0..h-1}`.
pub fn omission_requirements(x: &TypeSet, horizon: usize) -> Vec<Requirement> {
    transformations_within(horizon)
        .into_iter()
        .map(|tau| Requirement::OmitType(x.name().to_string(), tau))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum OmissionVerdict {
    OmittedUpTo(usize),
    /// Values of `v0, v1, …` (the type's variables, in order) under a
    /// realizing assignment.
    RealizedBy(Vec<usize>),
}

/// Backtracking search for an assignment of `vars` (values below `base`,
/// variables not listed are fixed to themselves) under which every member
/// holds, checking each member once its variables are assigned.
fn search_realization<E>(
    members: &[Formula],
    vars: &[Var],
    base: usize,
    holds: &mut impl FnMut(&Formula, &FiniteTransformation) -> Result<bool, E>,
) -> Result<Option<Vec<usize>>, E> {
    // a member is checked as soon as its last listed variable is assigned
    let ready: Vec<usize> = members
        .iter()
        .map(|m| {
            free_vars(m)
                .iter()
                .filter_map(|v| vars.iter().position(|w| w == v))
                .map(|p| p + 1)
                .max()
                .unwrap_or(0)
        })
        .collect();
    fn go<E>(
        members: &[Formula],
        ready: &[usize],
        vars: &[Var],
        base: usize,
        values: &mut Vec<usize>,
        holds: &mut impl FnMut(&Formula, &FiniteTransformation) -> Result<bool, E>,
    ) -> Result<bool, E> {
        let k = values.len();
        let tau = FiniteTransformation::from_pairs(vars.iter().copied().zip(values.iter().copied()));
        for (m, &r) in members.iter().zip(ready) {
            if r == k && !holds(m, &tau)? {
                return Ok(false);
            }
        }
        if k == vars.len() {
            return Ok(true);
        }
        for x in 0..base {
            values.push(x);
            if go(members, ready, vars, base, values, holds)? {
                return Ok(true);
            }
            values.pop();
        }
        Ok(false)
    }
    let mut values = Vec::new();
    Ok(go(members, &ready, vars, base, &mut values, holds)?.then_some(values))
}

/// Ordinary semantics on a finite model: does some tuple realize every
/// tracked member (indices up to `b` for generated types)?
pub fn verify_omission_model(m: &FiniteModel, x: &TypeSet, b: usize) -> OmissionVerdict {
    let members = x.tracked_members(b);
    let vars: Vec<Var> = members
        .iter()
        .flat_map(free_vars)
        .collect::<VarSet>()
        .into_iter()
        .collect();
    let mut holds = |f: &Formula, tau: &FiniteTransformation| -> Result<bool, ()> {
        let values: Vec<usize> = vars.iter().map(|&v| tau.apply(v)).collect();
        Ok(m.satisfies(f, &vars, &values))
    };
    match search_realization(&members, &vars, m.size, &mut holds) {
        Ok(Some(values)) => OmissionVerdict::RealizedBy(values),
        _ => OmissionVerdict::OmittedUpTo(b),
    }
}

/// Weak semantics over a filter: does some finite-support assignment `τ`
/// (support and image below `b`) put `s_τ φ` in the filter for every
/// tracked member `φ` with index at most `b`?
pub fn verify_omission_weak(f: &GenericFilter, x: &TypeSet, b: usize) -> Result<OmissionVerdict, StoneError> {
    let members = x.tracked_members(b);
    let vars: Vec<Var> = members
        .iter()
        .flat_map(free_vars)
        .filter(|&v| v < b)
        .collect::<VarSet>()
        .into_iter()
        .collect();
    let mut holds = |m: &Formula, tau: &FiniteTransformation| f.membership(&apply_transformation(tau, m));
    Ok(match search_realization(&members, &vars, b, &mut holds)? {
        Some(values) => OmissionVerdict::RealizedBy(values),
        None => OmissionVerdict::OmittedUpTo(b),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use crate::algebra::FormulaAlgebra;
    use crate::oracle::{DloOracle, FiniteModelOracle};
    use crate::stone::{henkin_build, BuildConfig, HenkinMode};
    use crate::syntax::Mode;

    fn chain_model(n: usize, sig: &Signature) -> FiniteModel {
        let lt = (0..n).flat_map(|i| (i + 1..n).map(move |j| vec![i, j])).collect();
        FiniteModel::new(format!("C{n}"), n, sig, [("lt".to_string(), lt)].into()).unwrap()
    }

    #[test]
    fn type_file_parsing() {
        let sig = DloOracle::signature_lt();
        let t = TypeSet::parse("x", "# comment\nlt(v0,v1)\n\nlt(v1,v2)\n", &sig).unwrap();
        assert_eq!(t.members_upto(10).len(), 2);
        assert_eq!(
            TypeSet::parse("c", "generator: descending-chain\n", &sig).unwrap(),
            TypeSet::DescendingChain
        );
        assert!(TypeSet::parse("c", "generator: ascending\n", &sig).is_err());
        assert_eq!(TypeSet::DescendingChain.member(2).unwrap().to_string(), "lt(v3,v2)");
    }

    #[test]
    fn principality_examples() {
        let dlo = DloOracle::new();
        let sig = DloOracle::signature_lt();
        assert_eq!(
            principality(&dlo, &TypeSet::finite("t", vec![Formula::True]), 10, 1).unwrap(),
            PrincipalityVerdict::Principal { witness: Formula::True }
        );
        assert!(matches!(
            principality(&dlo, &TypeSet::DescendingChain, 10, 1).unwrap(),
            PrincipalityVerdict::NonPrincipalCertified { .. }
        ));
        let fm = FiniteModelOracle::new(sig.clone(), vec![chain_model(3, &sig)]).unwrap();
        let phi = parse_formula("lt(v0,v1)", &sig).unwrap();
        assert_eq!(
            principality(&fm, &TypeSet::finite("t", vec![phi.clone()]), 10, 1).unwrap(),
            PrincipalityVerdict::Principal { witness: phi }
        );
        // the chain over a finite model is not certified: bounded verdict
        assert!(matches!(
            principality(&fm, &TypeSet::DescendingChain, 4, 0).unwrap(),
            PrincipalityVerdict::NonPrincipalUpTo { members: 4, depth: 0 }
        ));
    }

    #[test]
    fn local_omission_examples() {
        let dlo = DloOracle::new();
        let sig = DloOracle::signature_lt();
        let phi = parse_formula("lt(v0,v1)", &sig).unwrap();
        let r = locally_omits(&dlo, &TypeSet::DescendingChain, &[phi, Formula::True], 5).unwrap();
        assert!(r.passed());
        assert_eq!(r.cases[0].member, Some(3));
        assert_eq!(r.cases[0].negated_member.as_ref().unwrap().to_string(), "~lt(v4,v3)");
        assert_eq!(r.cases[1].member, Some(1));
        let r = locally_omits(&dlo, &TypeSet::finite("t", vec![Formula::True]), &[Formula::True], 5).unwrap();
        assert!(!r.passed());
        let single = TypeSet::finite("t", vec![parse_formula("lt(v0,v1)", &sig).unwrap()]);
        assert!(locally_omits(&dlo, &single, &[Formula::True], 0).unwrap().passed());
    }

    #[test]
    fn dlo_classes_over_two_variables() {
        // Boolean combinations of the three order types of (v0, v1)
        let reps = classes_up_to_depth(&DloOracle::new(), 2, 3).unwrap();
        assert_eq!(reps.len(), 8);
    }

    #[test]
    fn omission_requirement_count() {
        assert_eq!(omission_requirements(&TypeSet::DescendingChain, 2).len(), 4);
    }

    #[test]
    fn ordinary_omission_examples() {
        let sig = DloOracle::signature_lt();
        let c3 = chain_model(3, &sig);
        let x = TypeSet::finite("t", vec![parse_formula("lt(v0,v1)", &sig).unwrap()]);
        assert_eq!(
            verify_omission_model(&c3, &x, 3),
            OmissionVerdict::RealizedBy(vec![0, 1])
        );
        let f = TypeSet::finite("f", vec![Formula::False]);
        assert_eq!(verify_omission_model(&c3, &f, 3), OmissionVerdict::OmittedUpTo(3));
        // a finite chain has no descending sequence of length 4
        assert_eq!(
            verify_omission_model(&c3, &TypeSet::DescendingChain, 3),
            OmissionVerdict::OmittedUpTo(3)
        );
    }

    #[test]
    fn dlo_omits_descending_chain_in_weak_semantics() {
        let alg = FormulaAlgebra::new(Arc::new(DloOracle::new()));
        let cfg = BuildConfig::new(HenkinMode::H, 64, 6).omitting(TypeSet::DescendingChain);
        let f = henkin_build(&alg, &Formula::True, &cfg).unwrap();
        assert_eq!(
            verify_omission_weak(&f, &TypeSet::DescendingChain, 6).unwrap(),
            OmissionVerdict::OmittedUpTo(6)
        );
    }

    #[test]
    fn principal_type_blocks_omission() {
        let sig = Signature::new("lt", vec![("lt".into(), 2)], Mode::WithoutEquality).unwrap();
        let fm = FiniteModelOracle::new(sig.clone(), vec![chain_model(2, &sig)]).unwrap();
        let phi = parse_formula("lt(v0,v1)", &sig).unwrap();
        let x = TypeSet::finite("t", vec![phi.clone()]);
        let PrincipalityVerdict::Principal { witness } = principality(&fm, &x, 5, 1).unwrap() else {
            panic!("expected a principal type");
        };
        let alg = FormulaAlgebra::new(Arc::new(fm));
        let err = henkin_build(&alg, &witness, &BuildConfig::new(HenkinMode::H, 8, 2).omitting(x)).unwrap_err();
        assert!(matches!(err, StoneError::OmittingBlocked { .. }), "{err}");
    }
}
