//! Ultrafilters: exact Stone duality for finite algebras, substitution
//! actions and orbits, and the step-by-step construction of Henkin
//! ultrafilters of formula algebras.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{all_tuples, AlgebraError, ExtElement, FormulaAlgebra, SetAlgebra};
use crate::oracle::{OracleError, TheoryOracle};
use crate::syntax::{
    apply_transformation, free_vars, FiniteTransformation, Formula, FormulaEnumerator, Signature, Var,
};
use crate::types::TypeSet;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoneError {
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("ZeroElement: the seed is the zero element (inconsistent with the theory)")]
    ZeroElement,
    #[error("DiagonalRequirementUnsatisfiable at step {step}: -d_{i}{j} is inconsistent with the chain; the theory bounds the size of its models")]
    DiagonalRequirementUnsatisfiable { i: Var, j: Var, step: usize },
    #[error("OmittingBlocked at step {step}: every tracked member of {type_name} is forced under {tau}; the type is principal over the chain")]
    OmittingBlocked {
        type_name: String,
        tau: String,
        step: usize,
    },
    #[error("H' filters need a with-equality theory")]
    HPrimeNeedsEquality,
    #[error("{0} is not a bijection")]
    NotBijection(String),
    #[error("{tau} moves indices outside the dimension bound {n}")]
    OutsideDimension { tau: String, n: usize },
    #[error("infinite algebra: {0}")]
    Infinite(String),
}

// ---------------------------------------------------------------------------
// Finite algebras

/// An ultrafilter of a finite Boolean algebra, named by its atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct FiniteUltrafilter {
    pub atom: usize,
}

impl FiniteUltrafilter {
    /// The assignment `{0..n-1} → base` whose singleton is the atom.
    pub fn assignment(&self, alg: &SetAlgebra) -> Vec<usize> {
        let n = alg.dim_bound().unwrap_or(0);
        let mut idx = self.atom;
        let mut t = vec![0; n];
        for slot in t.iter_mut().rev() {
            *slot = idx % alg.base();
            idx /= alg.base();
        }
        t
    }

    fn from_assignment(alg: &SetAlgebra, t: &[usize]) -> Self {
        Self {
            atom: t.iter().fold(0, |acc, &x| acc * alg.base() + x),
        }
    }

    /// `x ∈ F`, i.e. the atom lies below `x`.
    pub fn contains(&self, alg: &SetAlgebra, x: &ExtElement) -> bool {
        x.contains_prefix(&self.assignment(alg))
    }
}

/// One ultrafilter per atom of a finite set algebra.
pub fn enumerate_ultrafilters(alg: &SetAlgebra) -> Result<Vec<FiniteUltrafilter>, StoneError> {
    let n = alg
        .dim_bound()
        .ok_or_else(|| StoneError::Infinite("set algebra without a dimension bound".into()))?;
    Ok((0..alg.base().pow(n as u32))
        .map(|atom| FiniteUltrafilter { atom })
        .collect())
}

/// The Boolean algebra of subsets of `{0..points-1}` generated by a family of
/// sets.
#[derive(Debug, Clone)]
pub struct GeneratedBooleanAlgebra {
    points: usize,
    generators: Vec<BTreeSet<usize>>,
}

impl GeneratedBooleanAlgebra {
    pub fn new(points: usize, generators: Vec<BTreeSet<usize>>) -> Self {
        Self { points, generators }
    }

    /// The atoms: nonempty minterms, ordered by least point.
    pub fn atoms(&self) -> Vec<BTreeSet<usize>> {
        let mut by_sig: BTreeMap<Vec<bool>, BTreeSet<usize>> = BTreeMap::new();
        for p in 0..self.points {
            let sig = self.generators.iter().map(|g| g.contains(&p)).collect();
            by_sig.entry(sig).or_default().insert(p);
        }
        let mut atoms: Vec<BTreeSet<usize>> = by_sig.into_values().collect();
        atoms.sort_by_key(|a| a.iter().next().copied());
        atoms
    }

    pub fn ultrafilters(&self) -> Vec<FiniteUltrafilter> {
        (0..self.atoms().len()).map(|atom| FiniteUltrafilter { atom }).collect()
    }

    /// Membership of an element given as a point set.
    pub fn contains(&self, f: &FiniteUltrafilter, x: &BTreeSet<usize>) -> bool {
        self.atoms()[f.atom].is_subset(x)
    }
}

fn check_permutation(tau: &FiniteTransformation, n: usize) -> Result<(), StoneError> {
    if !tau.is_bijection() {
        return Err(StoneError::NotBijection(tau.to_string()));
    }
    if tau.support().iter().any(|&i| i >= n) {
        return Err(StoneError::OutsideDimension {
            tau: tau.to_string(),
            n,
        });
    }
    Ok(())
}

/// `s⁺_σ F`: the ultrafilter with `x ∈ s⁺_σ F` iff `s_{σ⁻¹} x ∈ F`. For the
/// principal ultrafilter at `s` this is the principal one at `s ∘ σ⁻¹`.
pub fn act_finite(
    alg: &SetAlgebra,
    sigma: &FiniteTransformation,
    f: &FiniteUltrafilter,
) -> Result<FiniteUltrafilter, StoneError> {
    let n = alg.dim_bound().unwrap_or(0);
    check_permutation(sigma, n)?;
    let inv = sigma.inverse().expect("checked bijection");
    let s = f.assignment(alg);
    let t: Vec<usize> = (0..n).map(|k| s[inv.apply(k)]).collect();
    Ok(FiniteUltrafilter::from_assignment(alg, &t))
}

/// A finitely generated group of finite permutations acting on ultrafilters.
#[derive(Debug, Clone, Default)]
pub struct SubstitutionAction {
    pub generators: Vec<FiniteTransformation>,
}

impl SubstitutionAction {
    pub fn new(generators: Vec<FiniteTransformation>) -> Result<Self, StoneError> {
        for g in &generators {
            if !g.is_bijection() {
                return Err(StoneError::NotBijection(g.to_string()));
            }
        }
        Ok(Self { generators })
    }

    /// Every group element, by breadth-first closure from the identity.
    pub fn group_elements(&self) -> Vec<FiniteTransformation> {
        let mut seen = BTreeSet::new();
        let mut order = Vec::new();
        let mut queue = VecDeque::from([FiniteTransformation::identity()]);
        while let Some(g) = queue.pop_front() {
            if !seen.insert(g.clone()) {
                continue;
            }
            order.push(g.clone());
            for h in &self.generators {
                let next = h.compose(&g);
                if !seen.contains(&next) {
                    queue.push_back(next);
                }
            }
        }
        order
    }
}

/// Partitions `ultras` into orbits of the group generated by the action's
/// generators. Orbits are listed by least atom, members in atom order.
pub fn orbit_decomposition(
    alg: &SetAlgebra,
    ultras: &[FiniteUltrafilter],
    action: &SubstitutionAction,
) -> Result<Vec<Vec<FiniteUltrafilter>>, StoneError> {
    let mut assigned: BTreeSet<FiniteUltrafilter> = BTreeSet::new();
    let mut orbits = Vec::new();
    let mut sorted = ultras.to_vec();
    sorted.sort();
    for start in sorted {
        if assigned.contains(&start) {
            continue;
        }
        let mut orbit = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(f) = queue.pop_front() {
            for g in &action.generators {
                let h = act_finite(alg, g, &f)?;
                if orbit.insert(h) {
                    queue.push_back(h);
                }
            }
        }
        assigned.extend(orbit.iter().copied());
        orbits.push(orbit.into_iter().collect());
    }
    Ok(orbits)
}

/// Both sides of the π-openness identity for the element `a`: the ultrafilters
/// moved into `N_a` by some group element, and `⋃_ρ N_{s_ρ a}`.
pub fn pi_open_sides(
    alg: &SetAlgebra,
    action: &SubstitutionAction,
    a: &ExtElement,
) -> Result<(BTreeSet<FiniteUltrafilter>, BTreeSet<FiniteUltrafilter>), StoneError> {
    let group = action.group_elements();
    let ultras = enumerate_ultrafilters(alg)?;
    let mut left = BTreeSet::new();
    for f in &ultras {
        for rho in &group {
            if act_finite(alg, rho, f)?.contains(alg, a) {
                left.insert(*f);
                break;
            }
        }
    }
    let mut right = BTreeSet::new();
    for rho in &group {
        let sa = alg.ext_substitute(rho, a);
        right.extend(ultras.iter().filter(|f| f.contains(alg, &sa)).copied());
    }
    Ok((left, right))
}

// ---------------------------------------------------------------------------
// Henkin ultrafilters

/// Which Henkin class the constructed ultrafilter must belong to: `H`
/// (respect the joins `c_i x = Σ_j s^i_j x`) or `H′` (additionally contain
/// every `-d_ij`, `i ≠ j`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HenkinMode {
    #[serde(rename = "H")]
    H,
    #[serde(rename = "Hprime")]
    HPrime,
}

impl FromStr for HenkinMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "H" | "h" => Ok(HenkinMode::H),
            "Hprime" | "hprime" | "H'" => Ok(HenkinMode::HPrime),
            other => Err(format!("unknown Henkin mode `{other}` (expected H or Hprime)")),
        }
    }
}

impl fmt::Display for HenkinMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HenkinMode::H => "H",
            HenkinMode::HPrime => "Hprime",
        })
    }
}

/// A scheduled requirement; each names a dense open set of the Stone space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Requirement {
    Seed(Formula),
    Decide(Formula),
    Henkin(Var, Formula),
    DiagonalFree(Var, Var),
    OmitType(String, FiniteTransformation),
    Query(Formula),
}

impl fmt::Display for Requirement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Requirement::Seed(x) => write!(f, "Seed({x})"),
            Requirement::Decide(x) => write!(f, "Decide({x})"),
            Requirement::Henkin(i, x) => write!(f, "Henkin({i}, {x})"),
            Requirement::DiagonalFree(i, j) => write!(f, "DiagonalFree({i}, {j})"),
            Requirement::OmitType(t, tau) => write!(f, "OmitType({t}, {tau})"),
            Requirement::Query(x) => write!(f, "Query({x})"),
        }
    }
}

/// One entry of the construction trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceStep {
    pub step: usize,
    pub requirement: String,
    pub chosen_element: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Var>,
}

/// Construction parameters.
#[derive(Debug, Clone)]
pub struct BuildConfig {
    pub mode: HenkinMode,
    /// Number of enumerated formulas decided up front.
    pub budget: usize,
    /// Variables `v0..v{horizon-1}` span the enumeration, the diagonal
    /// requirements and the omission transformations.
    pub horizon: usize,
    pub omit: Vec<TypeSet>,
}

impl BuildConfig {
    pub fn new(mode: HenkinMode, budget: usize, horizon: usize) -> Self {
        Self {
            mode,
            budget,
            horizon,
            omit: Vec::new(),
        }
    }

    pub fn omitting(mut self, t: TypeSet) -> Self {
        self.omit.push(t);
        self
    }
}

#[derive(Debug)]
struct FilterState {
    oracle: Arc<dyn TheoryOracle>,
    mode: HenkinMode,
    budget: usize,
    horizon: usize,
    chain: Vec<Formula>,
    decided: HashMap<Formula, bool>,
    witnesses: BTreeMap<Formula, Var>,
    registered: BTreeSet<Var>,
    trace: Vec<TraceStep>,
    omitted: Vec<TypeSet>,
    frozen: bool,
}

/// A Henkin ultrafilter approximated by a finite chain of decisions. Cheap to
/// clone; clones share the decision state. `act` yields translated views of
/// the same state.
#[derive(Debug, Clone)]
pub struct GenericFilter {
    state: Arc<Mutex<FilterState>>,
    translation: FiniteTransformation,
}

impl FilterState {
    fn consistent_with(&self, extra: &[Formula]) -> Result<bool, StoneError> {
        let refs: Vec<&Formula> = self.chain.iter().chain(extra).collect();
        Ok(self.oracle.is_consistent_all(&refs)?)
    }

    fn value(&self, x: &Formula) -> Option<bool> {
        if let Some(&b) = self.decided.get(x) {
            return Some(b);
        }
        match x {
            Formula::True => Some(true),
            Formula::False => Some(false),
            Formula::Not(g) => self.value(g).map(|b| !b),
            Formula::And(a, b) => match (self.value(a), self.value(b)) {
                (Some(false), _) | (_, Some(false)) => Some(false),
                (Some(true), Some(true)) => Some(true),
                _ => None,
            },
            Formula::Or(a, b) => match (self.value(a), self.value(b)) {
                (Some(true), _) | (_, Some(true)) => Some(true),
                (Some(false), Some(false)) => Some(false),
                _ => None,
            },
            _ => None,
        }
    }

    fn push_trace(&mut self, req: &Requirement, chosen: &Formula, witness: Option<Var>) {
        let step = self.trace.len() + 1;
        self.trace.push(TraceStep {
            step,
            requirement: req.to_string(),
            chosen_element: chosen.to_string(),
            witness,
        });
    }

    fn next_step(&self) -> usize {
        self.trace.len() + 1
    }

    /// Adds `x` (if `value`) or `¬x` to the chain, then any Henkin witness.
    fn commit(&mut self, x: &Formula, value: bool, req: &Requirement) -> Result<(), StoneError> {
        let chosen = if value { x.clone() } else { Formula::not(x.clone()) };
        self.chain.push(chosen.clone());
        self.decided.insert(x.clone(), value);
        self.push_trace(req, &chosen, None);
        if value {
            if let Formula::Exists(i, body) = x {
                self.henkin_witness(*i, body, x)?;
            }
        }
        Ok(())
    }

    fn fresh_index(&self, extra: &Formula) -> Var {
        let mut used: BTreeSet<Var> = self.registered.clone();
        for f in &self.chain {
            used.extend(f.vars());
        }
        used.extend(extra.vars());
        (0..).find(|k| !used.contains(k)).unwrap()
    }

    fn distinctness(&self, v: Var) -> Vec<Formula> {
        self.registered
            .iter()
            .filter(|&&m| m != v)
            .map(|&m| Formula::not(Formula::Eq(m.min(v), m.max(v))))
            .collect()
    }

    /// Meets `c_i body ≤ Σ_j s^i_j body`: picks `j` with `s^i_j body` in the
    /// filter, preferring the least fresh index.
    fn henkin_witness(&mut self, i: Var, body: &Formula, x: &Formula) -> Result<(), StoneError> {
        let fresh = self.fresh_index(x);
        let candidates = std::iter::once(fresh).chain(0..fresh);
        for j in candidates {
            let w = apply_transformation(&FiniteTransformation::replacement(i, j), body);
            let mut extra = Vec::new();
            if self.mode == HenkinMode::HPrime && !self.registered.contains(&j) {
                extra = self.distinctness(j);
            }
            extra.push(w.clone());
            if !self.consistent_with(&extra)? {
                continue;
            }
            self.register(j)?;
            self.witnesses.insert(x.clone(), j);
            if self.value(&w) != Some(true) {
                let req = Requirement::Henkin(i, x.clone());
                self.chain.push(w.clone());
                self.decided.insert(w.clone(), true);
                self.push_trace(&req, &w, Some(j));
                if let Formula::Exists(k, inner) = &w {
                    self.henkin_witness(*k, inner, &w)?;
                }
            }
            return Ok(());
        }
        // unreachable for a consistent chain: the fresh witness always works
        // in H mode, and in H' mode some witness exists in every model
        Err(StoneError::DiagonalRequirementUnsatisfiable {
            i: fresh,
            j: fresh,
            step: self.next_step(),
        })
    }

    /// In H′ mode, adds `-d_mv` for every registered `m`.
    fn register(&mut self, v: Var) -> Result<(), StoneError> {
        if self.mode != HenkinMode::HPrime || self.registered.contains(&v) {
            return Ok(());
        }
        let partners: Vec<Var> = self.registered.iter().copied().collect();
        for m in partners {
            let (i, j) = (m.min(v), m.max(v));
            let d = Formula::Eq(i, j);
            match self.value(&d) {
                Some(false) => continue,
                Some(true) => {
                    return Err(StoneError::DiagonalRequirementUnsatisfiable {
                        i,
                        j,
                        step: self.next_step(),
                    })
                }
                None => {}
            }
            if !self.consistent_with(&[Formula::not(d.clone())])? {
                return Err(StoneError::DiagonalRequirementUnsatisfiable {
                    i,
                    j,
                    step: self.next_step(),
                });
            }
            self.commit(&d, false, &Requirement::DiagonalFree(i, j))?;
        }
        self.registered.insert(v);
        Ok(())
    }

    fn decide(&mut self, x: &Formula, req: &Requirement) -> Result<bool, StoneError> {
        if let Some(b) = self.value(x) {
            return Ok(b);
        }
        // Boolean combinations are decided through their parts.
        match x {
            Formula::Not(g) => return Ok(!self.decide(g, req)?),
            Formula::And(a, b) => return Ok(self.decide(a, req)? && self.decide(b, req)?),
            Formula::Or(a, b) => return Ok(self.decide(a, req)? || self.decide(b, req)?),
            _ => {}
        }
        if self.mode == HenkinMode::HPrime {
            for v in x.vars() {
                self.register(v)?;
            }
            if let Some(b) = self.value(x) {
                return Ok(b);
            }
        }
        let yes = self.consistent_with(std::slice::from_ref(x))?;
        self.commit(x, yes, req)?;
        Ok(yes)
    }

    /// One round of `OmitType(X, τ)` processing: finds the least `τ` (indices
    /// below the horizon mapped below it) under which no tracked member is
    /// decided false, and adds the negation of the first member whose
    /// negation is consistent. Returns whether a round was needed.
    fn omit_round(&mut self, ty: &TypeSet) -> Result<bool, StoneError> {
        let members = ty.tracked_members(self.horizon);
        let mut span: BTreeSet<Var> = BTreeSet::new();
        for m in &members {
            span.extend(free_vars(m));
        }
        let movable: Vec<Var> = span.iter().copied().filter(|&v| v < self.horizon).collect();
        let mut assignment: Vec<usize> = Vec::new();
        let Some(tau) = self.search_realizer(&members, &movable, &mut assignment) else {
            return Ok(false);
        };
        let req = Requirement::OmitType(ty.name().to_string(), tau.clone());
        for m in &members {
            let g = apply_transformation(&tau, m);
            if self.value(&g) == Some(true) {
                continue;
            }
            if self.mode == HenkinMode::HPrime {
                for v in g.vars() {
                    self.register(v)?;
                }
            }
            if self.consistent_with(&[Formula::not(g.clone())])? {
                self.commit(&g, false, &req)?;
                return Ok(true);
            }
        }
        Err(StoneError::OmittingBlocked {
            type_name: ty.name().to_string(),
            tau: tau.to_string(),
            step: self.next_step(),
        })
    }

    fn search_realizer(
        &self,
        members: &[Formula],
        movable: &[Var],
        assignment: &mut Vec<usize>,
    ) -> Option<FiniteTransformation> {
        let tau = FiniteTransformation::from_pairs(movable.iter().copied().zip(assignment.iter().copied()));
        let assigned: BTreeSet<Var> = movable[..assignment.len()].iter().copied().collect();
        for m in members {
            let ready = free_vars(m)
                .iter()
                .all(|v| assigned.contains(v) || !movable.contains(v));
            if ready && self.value(&apply_transformation(&tau, m)) == Some(false) {
                return None;
            }
        }
        if assignment.len() == movable.len() {
            return Some(tau);
        }
        for x in 0..self.horizon {
            assignment.push(x);
            let found = self.search_realizer(members, movable, assignment);
            assignment.pop();
            if found.is_some() {
                return found;
            }
        }
        None
    }
}

/// Builds a Henkin ultrafilter containing `a`. Schedule: the seed, then (H′)
/// the diagonal requirements below the horizon, then the first `budget`
/// formulas of the enumeration over `v0..v{horizon-1}`, then omission
/// requirements round-robin across types; the filter is then frozen.
pub fn henkin_build(alg: &FormulaAlgebra, a: &Formula, cfg: &BuildConfig) -> Result<GenericFilter, StoneError> {
    let oracle = alg.oracle().clone();
    if cfg.mode == HenkinMode::HPrime && !oracle.mode().has_equality() {
        return Err(StoneError::HPrimeNeedsEquality);
    }
    alg.signature().check(a).map_err(AlgebraError::from)?;
    if !oracle.is_consistent(a)? {
        return Err(StoneError::ZeroElement);
    }
    let mut st = FilterState {
        oracle,
        mode: cfg.mode,
        budget: cfg.budget,
        horizon: cfg.horizon,
        chain: Vec::new(),
        decided: HashMap::new(),
        witnesses: BTreeMap::new(),
        registered: BTreeSet::new(),
        trace: Vec::new(),
        omitted: cfg.omit.clone(),
        frozen: false,
    };
    if st.value(a) != Some(true) {
        st.commit(a, true, &Requirement::Seed(a.clone()))?;
    }
    if cfg.mode == HenkinMode::HPrime {
        let mut vars: BTreeSet<Var> = (0..cfg.horizon).collect();
        vars.extend(a.vars());
        for v in vars {
            st.register(v)?;
        }
    }
    let mut en = FormulaEnumerator::new(alg.signature(), cfg.horizon);
    for x in en.take(cfg.budget) {
        st.decide(&x, &Requirement::Decide(x.clone()))?;
    }
    let mut pending: Vec<bool> = vec![true; cfg.omit.len()];
    while pending.iter().any(|&p| p) {
        for (k, ty) in cfg.omit.iter().enumerate() {
            if pending[k] {
                pending[k] = st.omit_round(ty)?;
            }
        }
    }
    st.frozen = true;
    Ok(GenericFilter {
        state: Arc::new(Mutex::new(st)),
        translation: FiniteTransformation::identity(),
    })
}

impl GenericFilter {
    fn lock(&self) -> MutexGuard<'_, FilterState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn untranslate(&self, x: &Formula) -> Formula {
        match self.translation.inverse() {
            Some(inv) => apply_transformation(&inv, x),
            None => x.clone(),
        }
    }

    /// `x ∈ F`, extending the chain when `x` is still undecided. Stable
    /// across calls.
    pub fn membership(&self, x: &Formula) -> Result<bool, StoneError> {
        let x = self.untranslate(x);
        let mut st = self.lock();
        st.decide(&x, &Requirement::Query(x.clone()))
    }

    /// The decided value of `x`, without extending the chain.
    pub fn decided_value(&self, x: &Formula) -> Option<bool> {
        self.lock().value(&self.untranslate(x))
    }

    /// `s⁺_σ F`: membership of `x` is that of `s_{σ⁻¹} x` in `F`.
    pub fn act(&self, sigma: &FiniteTransformation) -> Result<GenericFilter, StoneError> {
        if !sigma.is_bijection() {
            return Err(StoneError::NotBijection(sigma.to_string()));
        }
        Ok(GenericFilter {
            state: Arc::clone(&self.state),
            translation: sigma.compose(&self.translation),
        })
    }

    pub fn translation(&self) -> &FiniteTransformation {
        &self.translation
    }

    pub fn is_frozen(&self) -> bool {
        self.lock().frozen
    }

    pub fn mode(&self) -> HenkinMode {
        self.lock().mode
    }

    pub fn horizon(&self) -> usize {
        self.lock().horizon
    }

    pub fn budget(&self) -> usize {
        self.lock().budget
    }

    pub fn oracle(&self) -> Arc<dyn TheoryOracle> {
        self.lock().oracle.clone()
    }

    pub fn signature(&self) -> Signature {
        self.lock().oracle.signature().clone()
    }

    pub fn omitted_types(&self) -> Vec<TypeSet> {
        self.lock().omitted.clone()
    }

    /// The recorded Henkin witness `j` for a decided `c_i body` (untranslated
    /// filters only).
    pub fn witness(&self, x: &Formula) -> Option<Var> {
        self.lock().witnesses.get(x).copied()
    }

    /// All recorded Henkin witnesses.
    pub fn witnesses(&self) -> Vec<(Formula, Var)> {
        self.lock().witnesses.iter().map(|(f, &j)| (f.clone(), j)).collect()
    }

    pub fn chain(&self) -> Vec<Formula> {
        self.lock().chain.clone()
    }

    pub fn decided(&self) -> Vec<(Formula, bool)> {
        let st = self.lock();
        let mut out: Vec<(Formula, bool)> = st.decided.iter().map(|(f, &b)| (f.clone(), b)).collect();
        out.sort();
        out
    }

    pub fn trace(&self) -> Vec<TraceStep> {
        self.lock().trace.clone()
    }

    /// Number of construction steps taken so far.
    pub fn steps(&self) -> usize {
        self.lock().trace.len()
    }

    /// Does the finite-support assignment `tau` fail some tracked member of
    /// `ty`? `None` means every tracked member is realized under `tau`.
    pub fn failed_member(&self, ty: &TypeSet, tau: &FiniteTransformation) -> Result<Option<usize>, StoneError> {
        let horizon = self.horizon();
        for (k, m) in ty.tracked_members(horizon).iter().enumerate() {
            if !self.membership(&apply_transformation(tau, m))? {
                return Ok(Some(k));
            }
        }
        Ok(None)
    }
}

/// All maps `{0..h-1} → {0..h-1}` as finite transformations, in
/// lexicographic order of their value tuples.
pub fn transformations_within(h: usize) -> Vec<FiniteTransformation> {
    all_tuples(h, h)
        .map(|t| FiniteTransformation::from_prefix(&t))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{CylindricAlgebra, SetAlgebra};
    use crate::oracle::{DloOracle, FiniteModel, FiniteModelOracle};
    use crate::syntax::{parse_formula, Mode};

    fn full2() -> SetAlgebra {
        SetAlgebra::finite(2, 2, Mode::WithEquality)
    }

    fn dlo() -> (Signature, FormulaAlgebra) {
        let sig = DloOracle::signature_lt();
        (sig, FormulaAlgebra::new(Arc::new(DloOracle::new())))
    }

    #[test]
    fn ultrafilter_counts() {
        assert_eq!(enumerate_ultrafilters(&full2()).unwrap().len(), 4);
        assert_eq!(
            enumerate_ultrafilters(&SetAlgebra::finite(1, 0, Mode::WithEquality))
                .unwrap()
                .len(),
            1
        );
        let free = GeneratedBooleanAlgebra::new(4, vec![[0, 1].into(), [0, 2].into()]);
        assert_eq!(free.ultrafilters().len(), 4);
        assert!(matches!(
            enumerate_ultrafilters(&SetAlgebra::new(2, Mode::WithEquality)),
            Err(StoneError::Infinite(_))
        ));
    }

    #[test]
    fn ultrafilters_are_prime() {
        let alg = full2();
        for f in enumerate_ultrafilters(&alg).unwrap() {
            for x in alg.elements().unwrap() {
                assert!(f.contains(&alg, &x) ^ f.contains(&alg, &alg.ext_complement(&x)));
            }
        }
    }

    #[test]
    fn act_examples() {
        let alg = full2();
        let f = FiniteUltrafilter::from_assignment(&alg, &[0, 1]);
        let swap = FiniteTransformation::transposition(0, 1);
        assert_eq!(act_finite(&alg, &FiniteTransformation::identity(), &f).unwrap(), f);
        assert_eq!(act_finite(&alg, &swap, &f).unwrap().assignment(&alg), vec![1, 0]);
        assert!(matches!(
            act_finite(&alg, &FiniteTransformation::replacement(0, 1), &f),
            Err(StoneError::NotBijection(_))
        ));
    }

    #[test]
    fn act_matches_its_definition() {
        // x ∈ s⁺_σ F iff s_{σ⁻¹} x ∈ F, over every element
        let alg = SetAlgebra::finite(2, 3, Mode::WithEquality);
        let sigma = FiniteTransformation::from_prefix(&[1, 2, 0]);
        let inv = sigma.inverse().unwrap();
        let elems = alg.elements().unwrap();
        for f in enumerate_ultrafilters(&alg).unwrap() {
            let g = act_finite(&alg, &sigma, &f).unwrap();
            for x in &elems {
                assert_eq!(g.contains(&alg, x), f.contains(&alg, &alg.ext_substitute(&inv, x)));
            }
        }
    }

    #[test]
    fn orbit_examples() {
        let alg = full2();
        let ultras = enumerate_ultrafilters(&alg).unwrap();
        let swap = SubstitutionAction::new(vec![FiniteTransformation::transposition(0, 1)]).unwrap();
        assert_eq!(orbit_decomposition(&alg, &ultras, &swap).unwrap().len(), 3);
        let none = SubstitutionAction::default();
        assert_eq!(orbit_decomposition(&alg, &ultras, &none).unwrap().len(), 4);
        let alg3 = SetAlgebra::finite(2, 3, Mode::WithEquality);
        let s3 = SubstitutionAction::new(vec![
            FiniteTransformation::transposition(0, 1),
            FiniteTransformation::transposition(1, 2),
            FiniteTransformation::transposition(0, 2),
        ])
        .unwrap();
        assert_eq!(s3.group_elements().len(), 6);
        let ultras3 = enumerate_ultrafilters(&alg3).unwrap();
        assert_eq!(orbit_decomposition(&alg3, &ultras3, &s3).unwrap().len(), 4);
    }

    #[test]
    fn pi_open_sides_agree_on_full2() {
        let alg = full2();
        let swap = SubstitutionAction::new(vec![FiniteTransformation::transposition(0, 1)]).unwrap();
        for a in alg.elements().unwrap() {
            let (l, r) = pi_open_sides(&alg, &swap, &a).unwrap();
            assert_eq!(l, r);
        }
    }

    #[test]
    fn dlo_filter_basics() {
        let (sig, alg) = dlo();
        let f = henkin_build(&alg, &Formula::True, &BuildConfig::new(HenkinMode::HPrime, 64, 6)).unwrap();
        assert!(f.is_frozen());
        assert!(f.membership(&Formula::True).unwrap());
        for text in ["lt(v0,v1)", "E v2 (lt(v2,v0) & lt(v1,v2))", "v0 = v3", "lt(v7,v9)"] {
            let x = parse_formula(text, &sig).unwrap();
            let a = f.membership(&x).unwrap();
            let b = f.membership(&Formula::not(x.clone())).unwrap();
            assert!(a ^ b, "{text}");
            assert_eq!(f.membership(&x).unwrap(), a);
        }
        for i in 0..6 {
            for j in i + 1..6 {
                assert!(!f.membership(&Formula::Eq(i, j)).unwrap());
            }
        }
        let chain = f.chain();
        let refs: Vec<&Formula> = chain.iter().collect();
        assert!(f.oracle().is_consistent_all(&refs).unwrap());
    }

    #[test]
    fn henkin_witnesses_are_recorded() {
        let (sig, alg) = dlo();
        let f = henkin_build(&alg, &Formula::True, &BuildConfig::new(HenkinMode::H, 8, 2)).unwrap();
        let x = parse_formula("E v1 (lt(v0,v1))", &sig).unwrap();
        assert!(f.membership(&x).unwrap());
        let j = f.witness(&x).expect("witness");
        let w = apply_transformation(
            &FiniteTransformation::replacement(1, j),
            &parse_formula("lt(v0,v1)", &sig).unwrap(),
        );
        assert_eq!(f.decided_value(&w), Some(true));
        assert!(f.trace().iter().any(|s| s.witness == Some(j)));
    }

    #[test]
    fn seed_is_a_member_and_zero_is_rejected() {
        let (sig, alg) = dlo();
        let a = parse_formula("lt(v1,v0)", &sig).unwrap();
        let f = henkin_build(&alg, &a, &BuildConfig::new(HenkinMode::H, 16, 3)).unwrap();
        assert!(f.membership(&a).unwrap());
        assert_eq!(
            henkin_build(&alg, &alg.zero(), &BuildConfig::new(HenkinMode::H, 16, 3)).unwrap_err(),
            StoneError::ZeroElement
        );
    }

    fn one_point_theory() -> FormulaAlgebra {
        let sig = Signature::new("one", vec![("p".into(), 1)], Mode::WithEquality).unwrap();
        let m = FiniteModel::new("M", 1, &sig, [("p".to_string(), [vec![0]].into())].into()).unwrap();
        FormulaAlgebra::new(Arc::new(FiniteModelOracle::new(sig, vec![m]).unwrap()))
    }

    #[test]
    fn one_point_theory_blocks_hprime() {
        let alg = one_point_theory();
        let err = henkin_build(&alg, &Formula::True, &BuildConfig::new(HenkinMode::HPrime, 16, 4)).unwrap_err();
        match err {
            StoneError::DiagonalRequirementUnsatisfiable { step, .. } => assert!(step <= 3),
            other => panic!("unexpected {other}"),
        }
        assert!(henkin_build(&alg, &Formula::True, &BuildConfig::new(HenkinMode::H, 16, 4)).is_ok());
    }

    #[test]
    fn translated_views() {
        let (sig, alg) = dlo();
        let f = henkin_build(&alg, &Formula::True, &BuildConfig::new(HenkinMode::H, 16, 3)).unwrap();
        let sigma = FiniteTransformation::transposition(0, 1);
        let g = f.act(&sigma).unwrap();
        let x = parse_formula("lt(v0,v1)", &sig).unwrap();
        let sx = parse_formula("lt(v1,v0)", &sig).unwrap();
        assert_eq!(g.membership(&x).unwrap(), f.membership(&sx).unwrap());
        let back = g.act(&sigma.inverse().unwrap()).unwrap();
        assert!(back.translation().is_identity());
        assert!(f.act(&FiniteTransformation::replacement(0, 1)).is_err());
    }

    #[test]
    fn transformations_within_horizon_two() {
        assert_eq!(transformations_within(2).len(), 4);
    }
}
