//! Theory presentations that decide consistency and provable equivalence of
//! formulas: the engine behind the Lindenbaum-Tarski algebras.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex};

use serde::Serialize;
use thiserror::Error;

use crate::syntax::{free_vars, parse_formula, Formula, Mode, Signature, SyntaxError, Var};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("formula does not fit the oracle's signature: {0}")]
    Signature(#[from] SyntaxError),
    #[error("invalid model `{model}`: {msg}")]
    InvalidModel { model: String, msg: String },
    #[error("external oracle: {0}")]
    External(String),
}

/// A decision procedure for a theory `T`: consistency with `T` and
/// `T`-provable equivalence.
pub trait TheoryOracle: Send + Sync + fmt::Debug {
    fn signature(&self) -> &Signature;

    /// A short tag naming the presentation, e.g. `dlo-qe`.
    fn kind(&self) -> &str;

    /// Whether the presented theory is known to be complete.
    fn is_complete(&self) -> bool;

    /// Is the conjunction of `fs` consistent with `T`?
    fn is_consistent_all(&self, fs: &[&Formula]) -> Result<bool, OracleError>;

    fn mode(&self) -> Mode {
        self.signature().mode
    }

    fn is_consistent(&self, f: &Formula) -> Result<bool, OracleError> {
        self.is_consistent_all(&[f])
    }

    /// `T ⊨ f → g`.
    fn entails(&self, f: &Formula, g: &Formula) -> Result<bool, OracleError> {
        let ng = Formula::not(g.clone());
        Ok(!self.is_consistent_all(&[f, &ng])?)
    }

    /// `T ⊨ f ↔ g`.
    fn entails_equal(&self, f: &Formula, g: &Formula) -> Result<bool, OracleError> {
        if f == g {
            return Ok(true);
        }
        Ok(self.entails(f, g)? && self.entails(g, f)?)
    }
}

// ---------------------------------------------------------------------------
// Finite models

/// A finite structure with base `{0..size-1}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FiniteModel {
    pub name: String,
    pub size: usize,
    pub relations: BTreeMap<String, BTreeSet<Vec<usize>>>,
    #[serde(skip)]
    dense: HashMap<String, Vec<bool>>,
}

fn tuple_index(t: &[usize], size: usize) -> usize {
    t.iter().fold(0, |acc, &x| acc * size + x)
}

impl FiniteModel {
    /// Builds a model; relations of `sig` missing from `relations` are empty.
    pub fn new(
        name: impl Into<String>,
        size: usize,
        sig: &Signature,
        mut relations: BTreeMap<String, BTreeSet<Vec<usize>>>,
    ) -> Result<Self, OracleError> {
        let name = name.into();
        let bad = |msg: String| OracleError::InvalidModel {
            model: name.clone(),
            msg,
        };
        for sym in relations.keys() {
            if sig.arity(sym).is_none() {
                return Err(bad(format!("relation `{sym}` is not in the signature")));
            }
        }
        let mut dense = HashMap::new();
        for (sym, arity) in &sig.relations {
            let tuples = relations.entry(sym.clone()).or_default();
            let mut table = vec![false; size.pow(*arity as u32)];
            for t in tuples.iter() {
                if t.len() != *arity {
                    return Err(bad(format!("tuple {t:?} has the wrong arity for `{sym}`")));
                }
                if t.iter().any(|&x| x >= size) {
                    return Err(bad(format!("tuple {t:?} leaves the base {{0..{}}}", size)));
                }
                table[tuple_index(t, size)] = true;
            }
            dense.insert(sym.clone(), table);
        }
        Ok(Self {
            name: name.clone(),
            size,
            relations,
            dense,
        })
    }

    pub fn holds(&self, sym: &str, t: &[usize]) -> bool {
        self.dense
            .get(sym)
            .is_some_and(|table| table[tuple_index(t, self.size)])
    }

    /// Evaluates `f` under `env` (indexed by variable; must cover every free
    /// variable). Quantifiers range over the base.
    pub fn eval(&self, f: &Formula, env: &mut Vec<usize>) -> bool {
        match f {
            Formula::True => true,
            Formula::False => false,
            Formula::Rel(sym, args) => {
                let t: Vec<usize> = args.iter().map(|&a| env[a]).collect();
                self.holds(sym, &t)
            }
            Formula::Eq(i, j) => env[*i] == env[*j],
            Formula::Not(g) => !self.eval(g, env),
            Formula::And(a, b) => self.eval(a, env) && self.eval(b, env),
            Formula::Or(a, b) => self.eval(a, env) || self.eval(b, env),
            Formula::Exists(v, g) => {
                if env.len() <= *v {
                    env.resize(*v + 1, 0);
                }
                let saved = env[*v];
                let mut found = false;
                for x in 0..self.size {
                    env[*v] = x;
                    if self.eval(g, env) {
                        found = true;
                        break;
                    }
                }
                env[*v] = saved;
                found
            }
        }
    }

    /// Evaluates `f` under the assignment `vars[k] ↦ values[k]`.
    pub fn satisfies(&self, f: &Formula, vars: &[Var], values: &[usize]) -> bool {
        let top = f.vars().into_iter().chain(vars.iter().copied()).max().unwrap_or(0);
        let mut env = vec![0; top + 1];
        for (v, x) in vars.iter().zip(values) {
            env[*v] = *x;
        }
        self.eval(f, &mut env)
    }

    /// Is the conjunction of `fs` satisfied by some assignment? Backtracks
    /// over the free variables, checking each conjunct once its variables
    /// are assigned.
    pub fn satisfiable(&self, fs: &[&Formula]) -> bool {
        let mut order: Vec<Var> = Vec::new();
        let mut position = HashMap::new();
        let fvs: Vec<_> = fs.iter().map(|f| free_vars(f)).collect();
        for fv in &fvs {
            for &v in fv {
                position.entry(v).or_insert_with(|| {
                    order.push(v);
                    order.len() - 1
                });
            }
        }
        // checks[k] = conjuncts whose last variable is order[k - 1]; checks[0] are closed
        let mut checks: Vec<Vec<&Formula>> = vec![Vec::new(); order.len() + 1];
        for (f, fv) in fs.iter().zip(&fvs) {
            let at = fv.iter().map(|v| position[v] + 1).max().unwrap_or(0);
            checks[at].push(f);
        }
        if self.size == 0 && !order.is_empty() {
            return false;
        }
        let top = fs.iter().flat_map(|f| f.vars()).max().unwrap_or(0);
        let mut env = vec![0; top + 1];
        if !checks[0].iter().all(|f| self.eval(f, &mut env)) {
            return false;
        }
        self.search(&order, &checks, 0, &mut env)
    }

    fn search(&self, order: &[Var], checks: &[Vec<&Formula>], k: usize, env: &mut Vec<usize>) -> bool {
        if k == order.len() {
            return true;
        }
        for x in 0..self.size {
            env[order[k]] = x;
            if checks[k + 1].iter().all(|f| self.eval(f, env)) && self.search(order, checks, k + 1, env) {
                return true;
            }
        }
        false
    }
}

/// Presents the common theory of a nonempty list of finite models.
#[derive(Debug, Clone)]
pub struct FiniteModelOracle {
    sig: Signature,
    models: Vec<FiniteModel>,
}

impl FiniteModelOracle {
    pub fn new(sig: Signature, models: Vec<FiniteModel>) -> Result<Self, OracleError> {
        if models.is_empty() {
            return Err(OracleError::InvalidModel {
                model: "<none>".into(),
                msg: "a finite-model presentation needs at least one model".into(),
            });
        }
        Ok(Self { sig, models })
    }

    pub fn models(&self) -> &[FiniteModel] {
        &self.models
    }
}

impl TheoryOracle for FiniteModelOracle {
    fn signature(&self) -> &Signature {
        &self.sig
    }

    fn kind(&self) -> &str {
        "finite-models"
    }

    fn is_complete(&self) -> bool {
        self.models.len() == 1
    }

    fn is_consistent_all(&self, fs: &[&Formula]) -> Result<bool, OracleError> {
        let mut flat = Vec::new();
        for f in fs {
            self.sig.check(f)?;
            f.flatten_and(&mut flat);
        }
        if flat.contains(&&Formula::False) {
            return Ok(false);
        }
        Ok(self.models.iter().any(|m| m.satisfiable(&flat)))
    }
}

/// `fm_entails_equal`: agreement of `f` and `g` in every listed model under
/// every assignment of their free variables.
pub fn fm_entails_equal(o: &FiniteModelOracle, f: &Formula, g: &Formula) -> Result<bool, OracleError> {
    o.entails_equal(f, g)
}

// ---------------------------------------------------------------------------
// Dense linear orders without endpoints

/// An order literal over variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Lit {
    Lt(Var, Var),
    Le(Var, Var),
    Eq(Var, Var),
    Ne(Var, Var),
}

/// Negation normal form of a quantifier-free order formula.
#[derive(Debug, Clone)]
enum Qf {
    True,
    False,
    Lit(Lit),
    And(Vec<Qf>),
    Or(Vec<Qf>),
}

fn to_qf(f: &Formula, positive: bool) -> Qf {
    match (f, positive) {
        (Formula::True, true) | (Formula::False, false) => Qf::True,
        (Formula::True, false) | (Formula::False, true) => Qf::False,
        (Formula::Rel(_, a), true) => Qf::Lit(Lit::Lt(a[0], a[1])),
        (Formula::Rel(_, a), false) => Qf::Lit(Lit::Le(a[1], a[0])),
        (Formula::Eq(i, j), true) => Qf::Lit(Lit::Eq(*i, *j)),
        (Formula::Eq(i, j), false) => Qf::Lit(Lit::Ne(*i, *j)),
        (Formula::Not(g), p) => to_qf(g, !p),
        (Formula::And(a, b), true) | (Formula::Or(a, b), false) => {
            Qf::And(vec![to_qf(a, positive), to_qf(b, positive)])
        }
        (Formula::Or(a, b), true) | (Formula::And(a, b), false) => Qf::Or(vec![to_qf(a, positive), to_qf(b, positive)]),
        (Formula::Exists(..), _) => unreachable!("quantifiers are eliminated first"),
    }
}

/// Decides satisfiability of a conjunction of order literals over a dense
/// order without endpoints: contract the `≤`-strongly-connected components;
/// the conjunction is satisfiable iff no strict edge and no `≠` pair lies
/// inside a component.
fn literals_consistent(lits: &[Lit]) -> bool {
    let mut index: HashMap<Var, usize> = HashMap::new();
    let id = |v: Var, index: &mut HashMap<Var, usize>| {
        let n = index.len();
        *index.entry(v).or_insert(n)
    };
    let mut edges: Vec<(usize, usize, bool)> = Vec::new();
    let mut ne: Vec<(usize, usize)> = Vec::new();
    for lit in lits {
        match *lit {
            Lit::Lt(a, b) => {
                let (a, b) = (id(a, &mut index), id(b, &mut index));
                edges.push((a, b, true));
            }
            Lit::Le(a, b) => {
                let (a, b) = (id(a, &mut index), id(b, &mut index));
                edges.push((a, b, false));
            }
            Lit::Eq(a, b) => {
                let (a, b) = (id(a, &mut index), id(b, &mut index));
                edges.push((a, b, false));
                edges.push((b, a, false));
            }
            Lit::Ne(a, b) => {
                let (a, b) = (id(a, &mut index), id(b, &mut index));
                ne.push((a, b));
            }
        }
    }
    let n = index.len();
    let mut adj = vec![Vec::new(); n];
    for &(a, b, _) in &edges {
        adj[a].push(b);
    }
    let comp = strongly_connected(&adj);
    edges.iter().all(|&(a, b, strict)| !strict || comp[a] != comp[b]) && ne.iter().all(|&(a, b)| comp[a] != comp[b])
}

/// Tarjan's algorithm, iterative. Returns a component id per node.
fn strongly_connected(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comp = vec![usize::MAX; n];
    let mut next_index = 0;
    let mut next_comp = 0;
    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = next_index;
        low[root] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut child)) = call.last_mut() {
            if *child < adj[v].len() {
                let w = adj[v][*child];
                *child += 1;
                if index[w] == usize::MAX {
                    index[w] = next_index;
                    low[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    loop {
                        let w = stack.pop().unwrap();
                        on_stack[w] = false;
                        comp[w] = next_comp;
                        if w == v {
                            break;
                        }
                    }
                    next_comp += 1;
                }
            }
        }
    }
    comp
}

fn qf_satisfiable(lits: &mut Vec<Lit>, todo: Vec<&Qf>) -> bool {
    let mark = lits.len();
    let ok = qf_search(lits, todo);
    lits.truncate(mark);
    ok
}

fn qf_search<'q>(lits: &mut Vec<Lit>, todo: Vec<&'q Qf>) -> bool {
    let mut ors: Vec<&'q [Qf]> = Vec::new();
    let mut stack = todo;
    while let Some(q) = stack.pop() {
        match q {
            Qf::True => {}
            Qf::False => return false,
            Qf::Lit(l) => lits.push(*l),
            Qf::And(items) => stack.extend(items.iter()),
            Qf::Or(items) => ors.push(items),
        }
    }
    if !literals_consistent(lits) {
        return false;
    }
    let Some((first, rest)) = ors.split_first() else {
        return true;
    };
    first.iter().any(|branch| {
        let mark = lits.len();
        // remaining disjunctions are carried as their own nodes
        let wrapped: Vec<Qf> = rest.iter().map(|items| Qf::Or(items.to_vec())).collect();
        let mut todo: Vec<&Qf> = wrapped.iter().collect();
        todo.push(branch);
        let ok = qf_search(lits, todo);
        lits.truncate(mark);
        ok
    })
}

/// One literal of a DNF term: `a < b` or `a = b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Atom {
    Lt(Var, Var),
    Eq(Var, Var),
}

type Term = Vec<Atom>;

fn dnf(q: &Qf) -> Vec<Term> {
    match q {
        Qf::True => vec![Vec::new()],
        Qf::False => Vec::new(),
        Qf::Lit(Lit::Lt(a, b)) => vec![vec![Atom::Lt(*a, *b)]],
        Qf::Lit(Lit::Eq(a, b)) => vec![vec![Atom::Eq(*a, *b)]],
        Qf::Lit(Lit::Le(a, b)) => vec![vec![Atom::Lt(*a, *b)], vec![Atom::Eq(*a, *b)]],
        Qf::Lit(Lit::Ne(a, b)) => vec![vec![Atom::Lt(*a, *b)], vec![Atom::Lt(*b, *a)]],
        Qf::Or(items) => items.iter().flat_map(dnf).collect(),
        Qf::And(items) => items.iter().fold(vec![Vec::new()], |acc, item| {
            let d = dnf(item);
            let mut out = Vec::new();
            for t in &acc {
                for u in &d {
                    let mut v = t.clone();
                    v.extend(u.iter().copied());
                    out.push(v);
                }
            }
            out
        }),
    }
}

/// Eliminates `∃v` from one DNF term. `None` means the term is unsatisfiable.
fn eliminate_from_term(v: Var, term: &Term) -> Option<Term> {
    let mut atoms: Vec<Atom> = Vec::new();
    for &a in term {
        match a {
            Atom::Lt(x, y) if x == y => return None,
            Atom::Eq(x, y) if x == y => {}
            a => atoms.push(a),
        }
    }
    let witness = atoms.iter().find_map(|a| match *a {
        Atom::Eq(x, y) if x == v => Some(y),
        Atom::Eq(x, y) if y == v => Some(x),
        _ => None,
    });
    let sub = |x: Var, e: Var| if x == v { e } else { x };
    let mut out = Vec::new();
    if let Some(e) = witness {
        for a in atoms {
            match a {
                Atom::Lt(x, y) => {
                    let (x, y) = (sub(x, e), sub(y, e));
                    if x == y {
                        return None;
                    }
                    out.push(Atom::Lt(x, y));
                }
                Atom::Eq(x, y) => {
                    let (x, y) = (sub(x, e), sub(y, e));
                    if x != y {
                        out.push(Atom::Eq(x, y));
                    }
                }
            }
        }
    } else {
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for a in atoms {
            match a {
                Atom::Lt(x, y) if y == v => lower.push(x),
                Atom::Lt(x, y) if x == v => upper.push(y),
                a => out.push(a),
            }
        }
        for &l in &lower {
            for &u in &upper {
                if l == u {
                    return None;
                }
                out.push(Atom::Lt(l, u));
            }
        }
    }
    out.sort();
    out.dedup();
    Some(out)
}

fn term_to_formula(term: &Term, lt: &str) -> Formula {
    Formula::conj(term.iter().map(|a| match *a {
        Atom::Lt(x, y) => Formula::rel(lt, vec![x, y]),
        Atom::Eq(x, y) => Formula::Eq(x, y),
    }))
}

fn qe_rec(f: &Formula, lt: &str) -> Formula {
    match f {
        Formula::True | Formula::False | Formula::Rel(..) | Formula::Eq(..) => f.clone(),
        Formula::Not(g) => Formula::not(qe_rec(g, lt)),
        Formula::And(a, b) => Formula::and(qe_rec(a, lt), qe_rec(b, lt)),
        Formula::Or(a, b) => Formula::or(qe_rec(a, lt), qe_rec(b, lt)),
        Formula::Exists(v, g) => {
            let body = qe_rec(g, lt);
            let mut terms: Vec<Term> = dnf(&to_qf(&body, true))
                .iter()
                .filter_map(|t| eliminate_from_term(*v, t))
                .collect();
            terms.sort();
            terms.dedup();
            if terms.iter().any(|t| t.is_empty()) {
                return Formula::True;
            }
            Formula::disj(terms.iter().map(|t| term_to_formula(t, lt)))
        }
    }
}

/// Enumerates every weak ordering of `vars` as a rank vector aligned with
/// `vars`.
pub fn weak_orderings(vars: &[Var]) -> Vec<Vec<usize>> {
    fn go(k: usize, n: usize, blocks: &mut Vec<Vec<usize>>, out: &mut Vec<Vec<usize>>) {
        if k == n {
            let mut ranks = vec![0; n];
            for (r, block) in blocks.iter().enumerate() {
                for &i in block {
                    ranks[i] = r;
                }
            }
            out.push(ranks);
            return;
        }
        for b in 0..blocks.len() {
            blocks[b].push(k);
            go(k + 1, n, blocks, out);
            blocks[b].pop();
        }
        for p in 0..=blocks.len() {
            blocks.insert(p, vec![k]);
            go(k + 1, n, blocks, out);
            blocks.remove(p);
        }
    }
    let mut out = Vec::new();
    go(0, vars.len(), &mut Vec::new(), &mut out);
    out
}

fn eval_ranked(f: &Formula, rank: &HashMap<Var, usize>) -> bool {
    match f {
        Formula::True => true,
        Formula::False => false,
        Formula::Rel(_, a) => rank[&a[0]] < rank[&a[1]],
        Formula::Eq(i, j) => rank[i] == rank[j],
        Formula::Not(g) => !eval_ranked(g, rank),
        Formula::And(a, b) => eval_ranked(a, rank) && eval_ranked(b, rank),
        Formula::Or(a, b) => eval_ranked(a, rank) || eval_ranked(b, rank),
        Formula::Exists(..) => unreachable!("quantifier-free input expected"),
    }
}

/// Decides equivalence of two quantifier-free order formulas by evaluating
/// both on every order type of their free variables.
pub fn qf_equivalent_by_order_types(f: &Formula, g: &Formula) -> bool {
    let mut vars: Vec<Var> = free_vars(f).into_iter().collect();
    vars.extend(free_vars(g));
    vars.sort();
    vars.dedup();
    weak_orderings(&vars).iter().all(|ranks| {
        let rank: HashMap<Var, usize> = vars.iter().copied().zip(ranks.iter().copied()).collect();
        eval_ranked(f, &rank) == eval_ranked(g, &rank)
    })
}

/// Order-type exhaustion is used for equivalence up to this many free
/// variables; beyond it the literal solver decides.
pub const ORDER_TYPE_LIMIT: usize = 6;

/// The complete theory of dense linear orders without endpoints over the
/// signature `{lt/2}` with equality.
#[derive(Debug)]
pub struct DloOracle {
    sig: Signature,
    cache: Mutex<HashMap<Formula, Arc<Formula>>>,
}

impl Default for DloOracle {
    fn default() -> Self {
        Self::new()
    }
}

impl DloOracle {
    pub fn new() -> Self {
        Self {
            sig: Self::signature_lt(),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn signature_lt() -> Signature {
        Signature::new("dlo", vec![("lt".into(), 2)], Mode::WithEquality).expect("static signature")
    }

    fn qe_cached(&self, f: &Formula) -> Result<Arc<Formula>, OracleError> {
        if let Some(hit) = self.cache.lock().unwrap().get(f) {
            return Ok(hit.clone());
        }
        let out = Arc::new(dlo_qe(f)?);
        self.cache.lock().unwrap().insert(f.clone(), out.clone());
        Ok(out)
    }
}

/// Quantifier elimination for dense linear orders without endpoints.
/// Quantifier-free input is returned unchanged.
pub fn dlo_qe(f: &Formula) -> Result<Formula, OracleError> {
    DloOracle::signature_lt().check(f)?;
    Ok(qe_rec(f, "lt"))
}

impl TheoryOracle for DloOracle {
    fn signature(&self) -> &Signature {
        &self.sig
    }

    fn kind(&self) -> &str {
        "dlo-qe"
    }

    fn is_complete(&self) -> bool {
        true
    }

    fn is_consistent_all(&self, fs: &[&Formula]) -> Result<bool, OracleError> {
        let mut flat = Vec::new();
        for f in fs {
            f.flatten_and(&mut flat);
        }
        let mut qfs = Vec::with_capacity(flat.len());
        for f in flat {
            qfs.push(to_qf(&*self.qe_cached(f)?, true));
        }
        Ok(qf_satisfiable(&mut Vec::new(), qfs.iter().collect()))
    }

    fn entails_equal(&self, f: &Formula, g: &Formula) -> Result<bool, OracleError> {
        if f == g {
            return Ok(true);
        }
        let (qf, qg) = (self.qe_cached(f)?, self.qe_cached(g)?);
        let mut vars = free_vars(&qf);
        vars.extend(free_vars(&qg));
        if vars.len() <= ORDER_TYPE_LIMIT {
            return Ok(qf_equivalent_by_order_types(&qf, &qg));
        }
        Ok(self.entails(f, g)? && self.entails(g, f)?)
    }
}

// ---------------------------------------------------------------------------
// External process oracle

struct ExternalProcess {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Talks to a subprocess over the line protocol
/// `EQ <f> ;; <g>` / `SAT <f>` answered by `YES`, `NO` or `ERR <msg>`.
pub struct ExternalOracle {
    sig: Signature,
    command: String,
    proc: Mutex<ExternalProcess>,
}

impl fmt::Debug for ExternalOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExternalOracle")
            .field("command", &self.command)
            .finish()
    }
}

impl ExternalOracle {
    pub fn spawn(sig: Signature, command: &str) -> Result<Self, OracleError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| OracleError::External(format!("cannot start `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            sig,
            command: command.to_string(),
            proc: Mutex::new(ExternalProcess { child, stdin, stdout }),
        })
    }

    fn ask(&self, request: &str) -> Result<bool, OracleError> {
        let mut p = self.proc.lock().unwrap();
        let io = |e: std::io::Error| OracleError::External(e.to_string());
        writeln!(p.stdin, "{request}").map_err(io)?;
        p.stdin.flush().map_err(io)?;
        let mut line = String::new();
        if p.stdout.read_line(&mut line).map_err(io)? == 0 {
            return Err(OracleError::External("oracle process closed its output".into()));
        }
        match line.trim_end() {
            "YES" => Ok(true),
            "NO" => Ok(false),
            other => Err(OracleError::External(
                other.strip_prefix("ERR ").unwrap_or(other).to_string(),
            )),
        }
    }
}

impl Drop for ExternalOracle {
    fn drop(&mut self) {
        if let Ok(p) = self.proc.get_mut() {
            let _ = p.child.kill();
            let _ = p.child.wait();
        }
    }
}

impl TheoryOracle for ExternalOracle {
    fn signature(&self) -> &Signature {
        &self.sig
    }

    fn kind(&self) -> &str {
        "external"
    }

    fn is_complete(&self) -> bool {
        false
    }

    fn is_consistent_all(&self, fs: &[&Formula]) -> Result<bool, OracleError> {
        let f = Formula::conj(fs.iter().map(|f| (*f).clone()));
        self.sig.check(&f)?;
        self.ask(&format!("SAT {f}"))
    }

    fn entails_equal(&self, f: &Formula, g: &Formula) -> Result<bool, OracleError> {
        self.sig.check(f)?;
        self.sig.check(g)?;
        self.ask(&format!("EQ {f} ;; {g}"))
    }
}

/// Answers protocol requests on `input` with `oracle`, one response line per
/// request line, until end of input.
pub fn serve<R: BufRead, W: Write>(oracle: &dyn TheoryOracle, input: R, mut output: W) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let answer = answer_request(oracle, line);
        let text = match answer {
            Ok(true) => "YES".to_string(),
            Ok(false) => "NO".to_string(),
            Err(msg) => format!("ERR {msg}"),
        };
        writeln!(output, "{text}")?;
        output.flush()?;
    }
    Ok(())
}

fn answer_request(oracle: &dyn TheoryOracle, line: &str) -> Result<bool, String> {
    let sig = oracle.signature();
    if let Some(rest) = line.strip_prefix("SAT ") {
        let f = parse_formula(rest, sig).map_err(|e| e.to_string())?;
        oracle.is_consistent(&f).map_err(|e| e.to_string())
    } else if let Some(rest) = line.strip_prefix("EQ ") {
        let (a, b) = rest
            .split_once(";;")
            .ok_or_else(|| "EQ needs two formulas separated by `;;`".to_string())?;
        let f = parse_formula(a.trim(), sig).map_err(|e| e.to_string())?;
        let g = parse_formula(b.trim(), sig).map_err(|e| e.to_string())?;
        oracle.entails_equal(&f, &g).map_err(|e| e.to_string())
    } else {
        Err(format!("unknown request `{line}`"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chain(n: usize, sig: &Signature) -> FiniteModel {
        let lt = (0..n).flat_map(|a| (a + 1..n).map(move |b| vec![a, b])).collect();
        FiniteModel::new(format!("chain{n}"), n, sig, [("lt".to_string(), lt)].into()).unwrap()
    }

    fn p(s: &str) -> Formula {
        parse_formula(s, &DloOracle::signature_lt()).unwrap()
    }

    #[test]
    fn finite_model_equivalence() {
        let sig = DloOracle::signature_lt();
        let o = FiniteModelOracle::new(sig.clone(), vec![chain(2, &sig)]).unwrap();
        assert!(fm_entails_equal(&o, &p("lt(v0,v1)"), &p("lt(v0,v1)")).unwrap());
        // brute force over the two values of v0
        let f = p("E v1 (lt(v0,v1))");
        let g = p("~E v1 (lt(v1,v0))");
        let m = &o.models()[0];
        let agree = (0..2).all(|x| m.satisfies(&f, &[0], &[x]) == m.satisfies(&g, &[0], &[x]));
        assert!(agree);
        assert_eq!(fm_entails_equal(&o, &f, &g).unwrap(), agree);
        assert!(!fm_entails_equal(&o, &f, &p("lt(v0,v1)")).unwrap());
        assert!(fm_entails_equal(&o, &p("lt(v0,v0)"), &Formula::False).unwrap());
        assert!(!o.is_consistent(&p("lt(v0,v0)")).unwrap());
        assert!(o.is_complete());
    }

    #[test]
    fn finite_model_rejects_foreign_formulas() {
        let sig = DloOracle::signature_lt();
        let o = FiniteModelOracle::new(sig.clone(), vec![chain(2, &sig)]).unwrap();
        let bad = Formula::rel("gt", vec![0, 1]);
        assert!(matches!(o.is_consistent(&bad), Err(OracleError::Signature(_))));
        assert!(FiniteModel::new("m", 2, &sig, [("lt".to_string(), [vec![0, 2]].into())].into()).is_err());
    }

    #[test]
    fn dlo_qe_examples() {
        assert_eq!(dlo_qe(&p("E v1 (lt(v0,v1))")).unwrap(), Formula::True);
        assert_eq!(dlo_qe(&p("E v0 (lt(v0,v0))")).unwrap(), Formula::False);
        // cross-check on the order 0 < 1 < ... < 5
        let m = chain(6, &DloOracle::signature_lt());
        assert!(!m.satisfies(&p("E v0 (lt(v0,v0))"), &[], &[]));
        let qf = p("lt(v0,v1) & ~(v1 = v2)");
        assert_eq!(dlo_qe(&qf).unwrap(), qf);
        assert!(dlo_qe(&Formula::rel("gt", vec![0, 1])).is_err());
    }

    #[test]
    fn dlo_decides_order_facts() {
        let o = DloOracle::new();
        assert!(o.entails_equal(&p("lt(v0,v1)"), &p("lt(v0,v1)")).unwrap());
        assert!(!o.entails_equal(&p("lt(v0,v1)"), &p("lt(v1,v0)")).unwrap());
        assert!(!o.is_consistent(&p("lt(v0,v1) & lt(v1,v0)")).unwrap());
        assert!(o.is_consistent(&p("lt(v0,v1) & lt(v1,v2)")).unwrap());
    }

    #[test]
    fn dlo_axioms_are_theorems() {
        let o = DloOracle::new();
        let theorem = |s: &str| o.entails_equal(&p(s), &Formula::True).unwrap();
        assert!(theorem("~(lt(v0,v1) & lt(v1,v2) & ~lt(v0,v2))"), "transitivity");
        assert!(theorem("~lt(v0,v0)"), "irreflexivity");
        assert!(theorem("lt(v0,v1) | lt(v1,v0) | v0 = v1"), "trichotomy");
        assert!(theorem("~lt(v0,v1) | E v2 (lt(v0,v2) & lt(v2,v1))"), "density");
        assert!(theorem("E v1 (lt(v0,v1))"), "no maximum");
        assert!(theorem("E v1 (lt(v1,v0))"), "no minimum");
        assert!(!o.is_consistent(&p("E v0 (~E v1 (lt(v0,v1)))")).unwrap());
    }

    #[test]
    fn weak_ordering_counts() {
        let counts: Vec<usize> = (0..6)
            .map(|n| weak_orderings(&(0..n).collect::<Vec<_>>()).len())
            .collect();
        assert_eq!(counts, [1, 1, 3, 13, 75, 541]);
    }

    #[test]
    fn serves_the_line_protocol() {
        let o = DloOracle::new();
        let input =
            "SAT lt(v0,v1)\nEQ lt(v0,v1) ;; lt(v1,v0)\nSAT lt(v0,v0)\nEQ ~~lt(v0,v1) ;; lt(v0,v1)\nBOGUS\nSAT gt(v0)\n";
        let mut out = Vec::new();
        serve(&o, input.as_bytes(), &mut out).unwrap();
        let lines: Vec<&str> = std::str::from_utf8(&out).unwrap().lines().collect();
        assert_eq!(lines[..4], ["YES", "NO", "NO", "YES"]);
        assert!(lines[4].starts_with("ERR "));
        assert!(lines[5].starts_with("ERR "));
    }

    /// Evaluates over the rationals: an existential witness can always be
    /// taken among the assigned values, their midpoints, or one step beyond
    /// the extremes.
    fn eval_rationals(f: &Formula, env: &mut HashMap<Var, f64>) -> bool {
        match f {
            Formula::True => true,
            Formula::False => false,
            Formula::Rel(_, a) => env[&a[0]] < env[&a[1]],
            Formula::Eq(i, j) => env[i] == env[j],
            Formula::Not(g) => !eval_rationals(g, env),
            Formula::And(a, b) => eval_rationals(a, env) && eval_rationals(b, env),
            Formula::Or(a, b) => eval_rationals(a, env) || eval_rationals(b, env),
            Formula::Exists(v, g) => {
                let mut pts: Vec<f64> = env.iter().filter(|(k, _)| *k != v).map(|(_, x)| *x).collect();
                pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let mut cands = pts.clone();
                cands.extend(pts.windows(2).map(|w| (w[0] + w[1]) / 2.0));
                cands.push(pts.first().map_or(0.0, |x| x - 1.0));
                cands.push(pts.last().map_or(0.0, |x| x + 1.0));
                let saved = env.get(v).copied();
                let found = cands.into_iter().any(|c| {
                    env.insert(*v, c);
                    eval_rationals(g, env)
                });
                match saved {
                    Some(x) => env.insert(*v, x),
                    None => env.remove(v),
                };
                found
            }
        }
    }

    fn arb_qf(nvars: usize) -> impl Strategy<Value = Formula> {
        let leaf = prop_oneof![
            (0..nvars, 0..nvars).prop_map(|(a, b)| Formula::rel("lt", vec![a, b])),
            (0..nvars, 0..nvars).prop_map(|(a, b)| Formula::Eq(a, b)),
        ];
        leaf.prop_recursive(4, 24, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(Formula::not),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::and(a, b)),
                (inner.clone(), inner).prop_map(|(a, b)| Formula::or(a, b)),
            ]
        })
    }

    fn arb_formula(nvars: usize) -> impl Strategy<Value = Formula> {
        let leaf = prop_oneof![
            (0..nvars, 0..nvars).prop_map(|(a, b)| Formula::rel("lt", vec![a, b])),
            (0..nvars, 0..nvars).prop_map(|(a, b)| Formula::Eq(a, b)),
        ];
        leaf.prop_recursive(4, 16, 2, move |inner| {
            prop_oneof![
                inner.clone().prop_map(Formula::not),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::and(a, b)),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::or(a, b)),
                (0..nvars, inner).prop_map(|(v, f)| Formula::exists(v, f)),
            ]
        })
    }

    proptest! {
        #[test]
        fn solver_agrees_with_order_types(f in arb_qf(4)) {
            let vars: Vec<Var> = free_vars(&f).into_iter().collect();
            let by_types = weak_orderings(&vars).iter().any(|ranks| {
                let rank: HashMap<Var, usize> = vars.iter().copied().zip(ranks.iter().copied()).collect();
                eval_ranked(&f, &rank)
            });
            prop_assert_eq!(DloOracle::new().is_consistent(&f).unwrap(), by_types);
        }

        #[test]
        fn qe_output_is_quantifier_free_and_equivalent(f in arb_formula(3)) {
            let q = dlo_qe(&f).unwrap();
            prop_assert!(!q.has_quantifier());
            prop_assert!(free_vars(&q).is_subset(&free_vars(&f)));
            let vars: Vec<Var> = free_vars(&f).into_iter().collect();
            for ranks in weak_orderings(&vars) {
                let rank: HashMap<Var, usize> = vars.iter().copied().zip(ranks.iter().copied()).collect();
                let mut env: HashMap<Var, f64> = rank.iter().map(|(v, r)| (*v, *r as f64)).collect();
                prop_assert_eq!(eval_rationals(&f, &mut env), eval_ranked(&q, &rank));
            }
        }

        #[test]
        fn equivalence_is_a_congruence(f in arb_formula(3), g in arb_formula(3), h in arb_qf(3), v in 0usize..3) {
            let o = DloOracle::new();
            if o.entails_equal(&f, &g).unwrap() {
                prop_assert!(o.entails_equal(&Formula::not(f.clone()), &Formula::not(g.clone())).unwrap());
                prop_assert!(o.entails_equal(&Formula::and(f.clone(), h.clone()), &Formula::and(g.clone(), h)).unwrap());
                prop_assert!(o.entails_equal(&Formula::exists(v, f), &Formula::exists(v, g)).unwrap());
            }
        }

        #[test]
        fn consistency_matches_equivalence_with_false(f in arb_formula(3)) {
            let o = DloOracle::new();
            prop_assert_eq!(o.is_consistent(&f).unwrap(), !o.entails_equal(&f, &Formula::False).unwrap());
        }
    }
}
