//! `workbench`: theory ingestion, constructions and JSON reports.

mod commands;
mod theory;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;

#[derive(Parser, Debug)]
#[command(name = "workbench", version, about = "Algebraic model theory workbench")]
struct Cli {
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct TheoryArg {
    #[arg(long)]
    pub theory: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct BuildArgs {
    /// `H` or `Hprime`.
    #[arg(long, default_value = "H")]
    pub mode: String,
    /// Enumerated formulas decided by the construction.
    #[arg(long, default_value_t = 64)]
    pub budget: usize,
    /// Variables spanned by the construction; also the model horizon B.
    #[arg(long, default_value_t = 8)]
    pub horizon: usize,
    /// Formula the filter must contain.
    #[arg(long, default_value = "true")]
    pub seed_formula: String,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a theory file and optional formulas.
    Parse {
        #[command(flatten)]
        theory: TheoryArg,
        #[arg(long = "formula")]
        formulas: Vec<String>,
    },
    /// Consistency and dimension sets in the formula algebra.
    AlgebraInfo {
        #[command(flatten)]
        theory: TheoryArg,
        #[arg(long = "formula")]
        formulas: Vec<String>,
        /// Enumerated formulas over v0, v1 used when no formula is given.
        #[arg(long, default_value_t = 20)]
        formula_budget: usize,
    },
    /// Build a Henkin filter and dump the model it represents.
    BuildModel {
        #[command(flatten)]
        theory: TheoryArg,
        #[command(flatten)]
        build: BuildArgs,
    },
    /// Compare the theory's finite models by realization counts.
    Distinguish {
        #[command(flatten)]
        theory: TheoryArg,
        /// Comma-separated model names (default: all).
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
        #[arg(long, default_value_t = 50)]
        formula_budget: usize,
        #[arg(long, default_value_t = 4)]
        horizon: usize,
    },
    /// Build a model omitting the given types.
    Omit {
        #[command(flatten)]
        theory: TheoryArg,
        #[command(flatten)]
        build: BuildArgs,
        #[arg(long = "types", required = true)]
        types: Vec<PathBuf>,
    },
    /// Orbits of a permutation group on the ultrafilters of a full set algebra.
    Orbits {
        #[command(flatten)]
        theory: TheoryArg,
        /// Cycles such as "[0,1]" or "[0,1,2];[0,1]".
        #[arg(long)]
        generators: String,
        /// Dimension bound n (default: one past the largest moved index).
        #[arg(long)]
        dims: Option<usize>,
        /// Base size (default: size of the first model).
        #[arg(long)]
        base: Option<usize>,
    },
    /// Answer the oracle line protocol on stdin/stdout.
    ServeOracle {
        #[command(flatten)]
        theory: TheoryArg,
    },
}

fn run(cli: Cli) -> Result<Option<serde_json::Value>, CliError> {
    Ok(Some(match cli.command {
        Command::Parse { theory, formulas } => commands::parse(&theory, &formulas)?,
        Command::AlgebraInfo {
            theory,
            formulas,
            formula_budget,
        } => commands::algebra_info(&theory, &formulas, formula_budget)?,
        Command::BuildModel { theory, build } => commands::build_model(&theory, &build, &[] as &[PathBuf])?,
        Command::Distinguish {
            theory,
            models,
            formula_budget,
            horizon,
        } => commands::distinguish(&theory, &models, formula_budget, horizon)?,
        Command::Omit { theory, build, types } => commands::build_model(&theory, &build, &types)?,
        Command::Orbits {
            theory,
            generators,
            dims,
            base,
        } => commands::orbits(&theory, &generators, dims, base)?,
        Command::ServeOracle { theory } => {
            commands::serve_oracle(&theory)?;
            return Ok(None);
        }
    }))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let output = cli.output.clone();
    match run(cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(report)) => {
            let mut text = serde_json::to_string_pretty(&report).expect("serializable report");
            text.push('\n');
            let written = match &output {
                Some(path) => std::fs::write(path, text),
                None => {
                    print!("{text}");
                    Ok(())
                }
            };
            match written {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: cannot write report: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
