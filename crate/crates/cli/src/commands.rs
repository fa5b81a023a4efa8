//! Command implementations. Each returns the complete JSON report.

use std::hash::{DefaultHasher, Hash, Hasher};
use std::io::{stdin, stdout};
use std::path::Path;

use serde_json::{json, Value};
use thiserror::Error;
use workbench_core::algebra::{formula_algebra, CylindricAlgebra, SetAlgebra};
use workbench_core::distinguish::{classify, ModelRef};
use workbench_core::oracle::serve;
use workbench_core::repr::{extract_model, extract_quotient_model};
use workbench_core::stone::{
    enumerate_ultrafilters, henkin_build, orbit_decomposition, BuildConfig, HenkinMode, StoneError, SubstitutionAction,
};
use workbench_core::syntax::{parse_formula, FiniteTransformation, FormulaEnumerator};
use workbench_core::types::{principality, verify_omission_weak, TypeSet};

use crate::theory::Theory;
use crate::{BuildArgs, TheoryArg};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Construction(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Construction(_) => 3,
        }
    }
}

fn config(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn construction(e: impl std::fmt::Display) -> CliError {
    CliError::Construction(e.to_string())
}

fn stone_error(e: StoneError) -> CliError {
    match e {
        StoneError::HPrimeNeedsEquality | StoneError::Algebra(_) => config(e),
        _ => construction(e),
    }
}

fn load(arg: &TheoryArg) -> Result<Theory, CliError> {
    let text = std::fs::read_to_string(&arg.theory)
        .map_err(|e| config(format!("cannot read {}: {e}", arg.theory.display())))?;
    Theory::parse(&text).map_err(|e| config(format!("{}: {e}", arg.theory.display())))
}

fn report(command: &str, inputs: Value, horizons: Value, result: Value) -> Value {
    let mut out = json!({
        "command": command,
        "inputs": inputs,
        "horizons": horizons,
        "result": result,
    });
    if let Ok(seed) = std::env::var("WORKBENCH_SEED") {
        let mut h = DefaultHasher::new();
        seed.hash(&mut h);
        out.to_string().hash(&mut h);
        out["report_id"] = json!(format!("{command}-{:016x}", h.finish()));
    }
    out
}

fn theory_inputs(arg: &TheoryArg, t: &Theory) -> Value {
    json!({
        "theory": arg.theory.display().to_string(),
        "theory_name": t.name,
        "mode": t.mode().to_string(),
        "oracle": t.oracle.tag(),
    })
}

pub fn parse(arg: &TheoryArg, formulas: &[String]) -> Result<Value, CliError> {
    let t = load(arg)?;
    let parsed = formulas
        .iter()
        .map(|f| parse_formula(f, &t.signature).map(|f| f.to_string()).map_err(config))
        .collect::<Result<Vec<_>, _>>()?;
    let models: Vec<Value> = t
        .models
        .iter()
        .map(|m| json!({"name": m.name, "size": m.size}))
        .collect();
    Ok(report(
        "parse",
        theory_inputs(arg, &t),
        json!({}),
        json!({
            "signature": t.signature.relations,
            "models": models,
            "formulas": parsed,
        }),
    ))
}

pub fn algebra_info(arg: &TheoryArg, formulas: &[String], formula_budget: usize) -> Result<Value, CliError> {
    let t = load(arg)?;
    let oracle = t.build_oracle().map_err(config)?;
    let alg = formula_algebra(&t.signature, oracle.clone(), t.mode()).map_err(config)?;
    let list = if formulas.is_empty() {
        FormulaEnumerator::new(&t.signature, 2).take(formula_budget)
    } else {
        formulas
            .iter()
            .map(|f| parse_formula(f, &t.signature).map_err(config))
            .collect::<Result<Vec<_>, _>>()?
    };
    let mut rows = Vec::new();
    for f in &list {
        let consistent = oracle.is_consistent(f).map_err(construction)?;
        let dims = alg.dimension_set(f).map_err(construction)?;
        rows.push(json!({
            "formula": f.to_string(),
            "depth": f.depth(),
            "consistent": consistent,
            "dimension_set": dims,
        }));
    }
    Ok(report(
        "algebra-info",
        theory_inputs(arg, &t),
        json!({"formula_budget": formula_budget, "enumeration_vars": 2}),
        json!({
            "algebra": if t.mode().has_equality() { "CA" } else { "QPA" },
            "oracle_complete": oracle.is_complete(),
            "elements": rows,
        }),
    ))
}

/// `build-model`, and `omit` when `types` is non-empty.
pub fn build_model(arg: &TheoryArg, build: &BuildArgs, types: &[impl AsRef<Path>]) -> Result<Value, CliError> {
    let t = load(arg)?;
    let mode: HenkinMode = build.mode.parse().map_err(config)?;
    if build.budget == 0 || build.horizon == 0 {
        return Err(config("budget and horizon must be positive"));
    }
    let oracle = t.build_oracle().map_err(config)?;
    let alg = formula_algebra(&t.signature, oracle.clone(), t.mode()).map_err(config)?;
    let seed = parse_formula(&build.seed_formula, &t.signature).map_err(config)?;
    let mut cfg = BuildConfig::new(mode, build.budget, build.horizon);
    let mut type_names = Vec::new();
    for path in types {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| config(format!("cannot read {}: {e}", path.display())))?;
        let name = path
            .file_stem()
            .map_or("type".into(), |s| s.to_string_lossy().into_owned());
        let ty = TypeSet::parse(&name, &text, &t.signature).map_err(|e| config(format!("{}: {e}", path.display())))?;
        type_names.push(path.display().to_string());
        cfg = cfg.omitting(ty);
    }
    let filter = henkin_build(&alg, &seed, &cfg).map_err(stone_error)?;
    let model = extract_model(&filter, build.horizon).map_err(construction)?;
    let mut result = json!({
        "model": model,
        "witnesses": filter
            .witnesses()
            .into_iter()
            .map(|(f, v)| json!({"formula": f.to_string(), "witness": v}))
            .collect::<Vec<_>>(),
        "trace": filter.trace(),
    });
    if mode == HenkinMode::H && t.mode().has_equality() {
        result["quotient_model"] = json!(extract_quotient_model(&filter, build.horizon).map_err(construction)?);
    }
    let command = if types.is_empty() { "build-model" } else { "omit" };
    if !types.is_empty() {
        let mut verdicts = Vec::new();
        for ty in &cfg.omit {
            let omission = verify_omission_weak(&filter, ty, build.horizon).map_err(construction)?;
            let principal = principality(oracle.as_ref(), ty, 4, 2).map_err(construction)?;
            verdicts.push(json!({
                "type": ty,
                "omission": omission,
                "principality": principal,
            }));
        }
        result["omission"] = json!(verdicts);
    }
    let mut inputs = theory_inputs(arg, &t);
    inputs["henkin_mode"] = json!(mode);
    inputs["seed_formula"] = json!(seed.to_string());
    if !types.is_empty() {
        inputs["types"] = json!(type_names);
    }
    Ok(report(
        command,
        inputs,
        json!({"budget": build.budget, "horizon": build.horizon, "model_horizon": build.horizon}),
        result,
    ))
}

pub fn distinguish(
    arg: &TheoryArg,
    names: &[String],
    formula_budget: usize,
    horizon: usize,
) -> Result<Value, CliError> {
    let t = load(arg)?;
    if formula_budget == 0 || horizon == 0 {
        return Err(config("formula budget and horizon must be positive"));
    }
    let chosen: Vec<&_> = if names.is_empty() {
        t.models.iter().collect()
    } else {
        names
            .iter()
            .map(|n| {
                t.model(n)
                    .ok_or_else(|| config(format!("no model named `{n}` in {}", t.name)))
            })
            .collect::<Result<_, _>>()?
    };
    if chosen.len() < 2 {
        return Err(config("distinguish needs at least two models"));
    }
    let refs: Vec<ModelRef> = chosen.iter().map(|m| ModelRef::Finite(m)).collect();
    let family = classify(&refs, &t.signature, formula_budget, horizon).map_err(construction)?;
    let mut inputs = theory_inputs(arg, &t);
    inputs["models"] = json!(chosen.iter().map(|m| m.name.clone()).collect::<Vec<_>>());
    Ok(report(
        "distinguish",
        inputs,
        json!({"formula_budget": formula_budget, "horizon": horizon}),
        json!(family),
    ))
}

/// `[0,1]` or `[0,1,2];[0,1]`: one cycle per bracket group.
pub fn parse_generators(text: &str) -> Result<Vec<FiniteTransformation>, CliError> {
    let mut out = Vec::new();
    let mut rest = text.trim();
    while !rest.is_empty() {
        let open = rest
            .strip_prefix('[')
            .ok_or_else(|| config(format!("expected `[` in generators `{text}`")))?;
        let close = open
            .find(']')
            .ok_or_else(|| config(format!("unclosed `[` in `{text}`")))?;
        let cycle = open[..close]
            .split(',')
            .map(|x| x.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| config(format!("bad cycle `[{}]`", &open[..close])))?;
        let distinct: std::collections::BTreeSet<_> = cycle.iter().collect();
        if distinct.len() != cycle.len() {
            return Err(config(format!("cycle `[{}]` repeats an index", &open[..close])));
        }
        out.push(FiniteTransformation::from_pairs(
            (0..cycle.len()).map(|k| (cycle[k], cycle[(k + 1) % cycle.len()])),
        ));
        rest = open[close + 1..].trim_start();
        rest = rest.strip_prefix([';', ',']).unwrap_or(rest).trim_start();
    }
    Ok(out)
}

pub fn orbits(arg: &TheoryArg, generators: &str, dims: Option<usize>, base: Option<usize>) -> Result<Value, CliError> {
    let t = load(arg)?;
    let gens = parse_generators(generators)?;
    let base = match base.or_else(|| t.models.first().map(|m| m.size)) {
        Some(b) if b > 0 => b,
        _ => return Err(config("orbits needs --base or a theory with a non-empty model")),
    };
    let moved = gens.iter().flat_map(|g| g.support()).max().map_or(0, |m| m + 1);
    let n = dims.unwrap_or(moved.max(1));
    let alg = SetAlgebra::finite(base, n, t.mode());
    let ultras = enumerate_ultrafilters(&alg).map_err(config)?;
    let action = SubstitutionAction::new(gens.clone()).map_err(config)?;
    let orbits = orbit_decomposition(&alg, &ultras, &action).map_err(config)?;
    let listed: Vec<Vec<Vec<usize>>> = orbits
        .iter()
        .map(|o| o.iter().map(|f| f.assignment(&alg)).collect())
        .collect();
    let mut inputs = theory_inputs(arg, &t);
    inputs["generators"] = json!(gens.iter().map(|g| g.to_string()).collect::<Vec<_>>());
    Ok(report(
        "orbits",
        inputs,
        json!({"base": base, "dims": n}),
        json!({
            "group_order": action.group_elements().len(),
            "ultrafilters": ultras.len(),
            "orbit_count": orbits.len(),
            "orbits": listed,
        }),
    ))
}

pub fn serve_oracle(arg: &TheoryArg) -> Result<(), CliError> {
    let t = load(arg)?;
    let oracle = t.build_oracle().map_err(config)?;
    serve(oracle.as_ref(), stdin().lock(), stdout().lock()).map_err(construction)
}
