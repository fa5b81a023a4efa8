//! Theory files.
//!
//! ```text
//! theory chains
//! mode: without-equality
//! signature: lt/2
//! oracle: finite-models
//! model C2 = {0..1}; lt = {(0,1)}
//! model C3 = {0..2}; lt = {(0,1),(0,2),(1,2)}
//! ```
//!
//! A model block may continue over following lines until the next `model`
//! line. `#` starts a comment.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;
use workbench_core::oracle::{DloOracle, ExternalOracle, FiniteModel, FiniteModelOracle, OracleError, TheoryOracle};
use workbench_core::syntax::{Mode, Signature, SyntaxError};

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing `{0}` header")]
    Missing(&'static str),
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleSpec {
    DloQe,
    FiniteModels,
    External(String),
}

impl OracleSpec {
    pub fn tag(&self) -> String {
        match self {
            OracleSpec::DloQe => "dlo-qe".into(),
            OracleSpec::FiniteModels => "finite-models".into(),
            OracleSpec::External(cmd) => format!("external:{cmd}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Theory {
    pub name: String,
    pub signature: Signature,
    pub oracle: OracleSpec,
    pub models: Vec<FiniteModel>,
}

fn perr(line: usize, msg: impl Into<String>) -> TheoryError {
    TheoryError::Parse { line, msg: msg.into() }
}

impl Theory {
    pub fn parse(text: &str) -> Result<Self, TheoryError> {
        let mut name = None;
        let mut mode = None;
        let mut relations: Option<Vec<(String, usize)>> = None;
        let mut oracle = None;
        let mut blocks: Vec<(usize, String)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("model ") {
                blocks.push((line_no, rest.to_string()));
            } else if let Some(rest) = line.strip_prefix("theory ") {
                name = Some(rest.trim().to_string());
            } else if let Some(rest) = line.strip_prefix("mode:") {
                mode = Some(match rest.trim() {
                    "with-equality" => Mode::WithEquality,
                    "without-equality" => Mode::WithoutEquality,
                    other => return Err(perr(line_no, format!("unknown mode `{other}`"))),
                });
            } else if let Some(rest) = line.strip_prefix("signature:") {
                relations = Some(parse_signature(rest, line_no)?);
            } else if let Some(rest) = line.strip_prefix("oracle:") {
                let rest = rest.trim();
                oracle = Some(match rest {
                    "dlo-qe" => OracleSpec::DloQe,
                    "finite-models" => OracleSpec::FiniteModels,
                    _ => match rest.strip_prefix("external:") {
                        Some(cmd) if !cmd.trim().is_empty() => OracleSpec::External(cmd.trim().to_string()),
                        _ => return Err(perr(line_no, format!("unknown oracle `{rest}`"))),
                    },
                });
            } else if let Some(last) = blocks.last_mut() {
                let starts_assignment = line.split_once('=').is_some_and(|(l, _)| !l.contains(['(', '{']));
                last.1
                    .push_str(if last.1.trim_end().ends_with('}') && starts_assignment {
                        "; "
                    } else {
                        " "
                    });
                last.1.push_str(line);
            } else {
                return Err(perr(line_no, format!("unexpected line `{line}`")));
            }
        }
        let name = name.ok_or(TheoryError::Missing("theory"))?;
        let mode = mode.ok_or(TheoryError::Missing("mode:"))?;
        let relations = relations.ok_or(TheoryError::Missing("signature:"))?;
        let oracle = oracle.ok_or(TheoryError::Missing("oracle:"))?;
        let signature = Signature::new(name.clone(), relations, mode)?;
        let models = blocks
            .iter()
            .map(|(line, body)| parse_model(body, *line, &signature))
            .collect::<Result<Vec<_>, _>>()?;
        match oracle {
            OracleSpec::DloQe => {
                if mode != Mode::WithEquality || signature.relations != DloOracle::signature_lt().relations {
                    return Err(perr(
                        0,
                        "oracle dlo-qe needs `mode: with-equality` and `signature: lt/2`",
                    ));
                }
            }
            OracleSpec::FiniteModels if models.is_empty() => {
                return Err(perr(0, "oracle finite-models needs at least one model block"));
            }
            _ => {}
        }
        Ok(Self {
            name,
            signature,
            oracle,
            models,
        })
    }

    pub fn mode(&self) -> Mode {
        self.signature.mode
    }

    pub fn build_oracle(&self) -> Result<Arc<dyn TheoryOracle>, TheoryError> {
        Ok(match &self.oracle {
            OracleSpec::DloQe => Arc::new(DloOracle::new()),
            OracleSpec::FiniteModels => Arc::new(FiniteModelOracle::new(self.signature.clone(), self.models.clone())?),
            OracleSpec::External(cmd) => Arc::new(ExternalOracle::spawn(self.signature.clone(), cmd)?),
        })
    }

    pub fn model(&self, name: &str) -> Option<&FiniteModel> {
        self.models.iter().find(|m| m.name == name)
    }
}

fn parse_signature(text: &str, line: usize) -> Result<Vec<(String, usize)>, TheoryError> {
    let mut out = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (sym, arity) = item
            .split_once('/')
            .ok_or_else(|| perr(line, format!("expected `symbol/arity`, found `{item}`")))?;
        let arity = arity
            .trim()
            .parse()
            .map_err(|_| perr(line, format!("bad arity in `{item}`")))?;
        out.push((sym.trim().to_string(), arity));
    }
    Ok(out)
}

/// `<name> = {0..k-1}; sym = {(…),…}; …`
fn parse_model(body: &str, line: usize, sig: &Signature) -> Result<FiniteModel, TheoryError> {
    let mut parts = body.split(';').map(str::trim).filter(|s| !s.is_empty());
    let head = parts.next().ok_or_else(|| perr(line, "empty model block"))?;
    let (name, universe) = head
        .split_once('=')
        .ok_or_else(|| perr(line, "expected `model <name> = {0..k-1}`"))?;
    let name = name.trim().to_string();
    let size =
        parse_universe(universe.trim()).ok_or_else(|| perr(line, format!("bad universe `{}`", universe.trim())))?;
    let mut relations: BTreeMap<String, BTreeSet<Vec<usize>>> = BTreeMap::new();
    for part in parts {
        let (sym, tuples) = part
            .split_once('=')
            .ok_or_else(|| perr(line, format!("expected `sym = {{…}}`, found `{part}`")))?;
        let tuples =
            parse_tuples(tuples.trim()).ok_or_else(|| perr(line, format!("bad tuple set for `{}`", sym.trim())))?;
        if relations.insert(sym.trim().to_string(), tuples).is_some() {
            return Err(perr(line, format!("relation `{}` given twice", sym.trim())));
        }
    }
    for (sym, _) in &sig.relations {
        relations.entry(sym.clone()).or_default();
    }
    Ok(FiniteModel::new(name, size, sig, relations)?)
}

/// `{0..k-1}` (or `{}`).
fn parse_universe(text: &str) -> Option<usize> {
    let inner = text.strip_prefix('{')?.strip_suffix('}')?.trim();
    if inner.is_empty() {
        return Some(0);
    }
    let (lo, hi) = inner.split_once("..")?;
    if lo.trim() != "0" {
        return None;
    }
    let hi: usize = hi.trim().parse().ok()?;
    Some(hi + 1)
}

fn parse_tuples(text: &str) -> Option<BTreeSet<Vec<usize>>> {
    let inner = text.strip_prefix('{')?.strip_suffix('}')?.trim();
    let mut out = BTreeSet::new();
    let mut rest = inner;
    while !rest.is_empty() {
        let open = rest.strip_prefix('(')?;
        let close = open.find(')')?;
        let t = open[..close]
            .split(',')
            .map(|x| x.trim().parse::<usize>().ok())
            .collect::<Option<Vec<_>>>()?;
        out.insert(t);
        rest = open[close + 1..].trim_start();
        rest = rest.strip_prefix(',').unwrap_or(rest).trim_start();
    }
    Some(out)
}
