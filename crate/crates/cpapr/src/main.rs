//! Command-line front end: generate planted problems, fit models, score
//! recoveries, and inspect tensors and models.
//!
//! Exit codes: 0 success (factorize: converged), 2 input error, 3
//! iteration cap reached without convergence, 4 numerical singularity.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use cpapr::datagen;
use cpapr::io;
use cpapr::metrics::{self, CONGRUENCE_THRESHOLD};
use cpapr::objective::{check_assumption, compute_phi, kkt_residual, kl_objective};
use cpapr::solver::{cp_apr, sparse_phi_kernel, PhiWorkspace, SolverConfig};
use cpapr::{CpAprError, KruskalModel, SparseCountTensor};

#[derive(Parser)]
#[command(
    name = "cpapr",
    about = "Poisson factorization of sparse count tensors",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted model and sampled observations.
    Generate(GenerateArgs),
    /// Fit a model to a coordinate tensor.
    Factorize(FactorizeArgs),
    /// Score a recovered model against a planted truth.
    Score(ScoreArgs),
    /// Diagnostics for a model against a tensor (objective, KKT residual,
    /// full-row-rank check).
    Check(CheckArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Tensor extents, comma-separated, e.g. 50,40,30
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    shape: Vec<usize>,
    #[arg(long)]
    rank: usize,
    /// Number of balls to toss (total observation count)
    #[arg(long = "nnz-balls")]
    nnz_balls: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "out-tensor")]
    out_tensor: PathBuf,
    #[arg(long = "out-truth")]
    out_truth: PathBuf,
}

#[derive(Args)]
struct FactorizeArgs {
    #[arg(long)]
    tensor: PathBuf,
    #[arg(long)]
    rank: usize,
    #[arg(long = "max-outer", default_value_t = 200)]
    max_outer: usize,
    #[arg(long = "max-inner", default_value_t = 10)]
    max_inner: usize,
    /// KKT tolerance tau (also the inner stopping tolerance)
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Inadmissible-zero avoidance amount
    #[arg(long, default_value_t = 1e-2)]
    kappa: f64,
    #[arg(long = "kappa-tol", default_value_t = 1e-10)]
    kappa_tol: f64,
    /// Minimum divisor guarding the elementwise division
    #[arg(long, default_value_t = 1e-10)]
    epsilon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Initial model file (default: seeded random initialization)
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long = "out-model")]
    out_model: PathBuf,
    /// Write one JSON record per outer iteration to this file
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Cross-validate the sparse Phi kernel against the dense path
    /// (refused for tensors with more than 10^6 cells)
    #[arg(long = "dense-check", default_value_t = false)]
    dense_check: bool,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    estimate: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    tensor: PathBuf,
    #[arg(long)]
    model: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Factorize(args) => cmd_factorize(args),
        Command::Score(args) => cmd_score(args),
        Command::Check(args) => cmd_check(args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                CpAprError::Singularity { .. } => ExitCode::from(4),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<ExitCode, CpAprError> {
    let problem = datagen::planted_problem(&args.shape, args.rank, args.nnz_balls, args.seed)?;
    io::write_tensor(&args.out_tensor, &problem.observed)?;
    io::write_model(&args.out_truth, &problem.truth)?;
    let cells: usize = args.shape.iter().product();
    println!(
        "nu {} nnz {} density {:.6}",
        problem.nu,
        problem.observed.nnz(),
        problem.observed.nnz() as f64 / cells as f64
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_factorize(args: FactorizeArgs) -> Result<ExitCode, CpAprError> {
    let data = io::read_tensor(&args.tensor)?;
    let init = match &args.init {
        Some(path) => Some(io::read_model(path)?),
        None => None,
    };
    let config = SolverConfig {
        rank: args.rank,
        k_max: args.max_outer,
        l_max: args.max_inner,
        tau: args.tol,
        kappa: args.kappa,
        kappa_tol: args.kappa_tol,
        epsilon: args.epsilon,
        seed: args.seed,
    };
    if args.dense_check {
        let cells: usize = data.shape().iter().product();
        if cells > 1_000_000 {
            return Err(CpAprError::Domain(format!(
                "--dense-check refused: tensor has {cells} cells (> 10^6)"
            )));
        }
    }

    let (model, trace) = cp_apr(&data, &config, init.as_ref())?;

    if args.dense_check {
        dense_check(&data, &model, config.epsilon)?;
        eprintln!("dense-check: sparse and dense Phi paths agree to 1e-12");
    }

    io::write_model(&args.out_model, &model)?;

    if let Some(path) = &args.trace {
        let mut out = String::new();
        for rec in &trace.records {
            let row = serde_json::json!({
                "iter": rec.iter,
                "f": rec.objective,
                "kkt_residual": rec.kkt_residual,
                "updates": rec.updates,
                "scooches": rec.scooches,
            });
            out.push_str(&row.to_string());
            out.push('\n');
        }
        std::fs::write(path, out)?;
    }

    eprintln!(
        "{} after {} outer iterations; final KKT residual {:.3e}",
        if trace.converged { "converged" } else { "iteration cap reached" },
        trace.records.len(),
        trace.final_report.max_residual
    );
    Ok(if trace.converged { ExitCode::SUCCESS } else { ExitCode::from(3) })
}

/// Compares the two Phi evaluation routes at the given model.
fn dense_check(
    data: &SparseCountTensor,
    model: &KruskalModel,
    epsilon: f64,
) -> Result<(), CpAprError> {
    for mode in 1..=model.order() {
        let mut ws = PhiWorkspace::new(data, model.rank(), mode);
        let sparse = sparse_phi_kernel(data, model, mode, epsilon, &mut ws)?;
        let dense = compute_phi(model, data, mode, epsilon)?;
        for (s, d) in sparse.iter().zip(dense.iter()) {
            if (s - d).abs() > 1e-12 * d.abs().max(1.0) {
                return Err(CpAprError::Domain(format!(
                    "dense-check failed in mode {mode}: sparse {s} vs dense {d}"
                )));
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ScoreOutput {
    fms: f64,
    congruent_columns_per_mode: Vec<usize>,
    /// 1-based estimate component matched to each truth component;
    /// 0 marks an unmatched component under a rank mismatch.
    permutation: Vec<usize>,
    rank_mismatch: bool,
    congruence_threshold: f64,
    matching: &'static str,
}

fn cmd_score(args: ScoreArgs) -> Result<ExitCode, CpAprError> {
    let truth = io::read_model(&args.truth)?;
    let estimate = io::read_model(&args.estimate)?;
    let report = metrics::factor_match_score(&truth, &estimate)?;
    let out = ScoreOutput {
        fms: report.fms,
        congruent_columns_per_mode: report.congruent_columns_per_mode,
        permutation: report
            .permutation
            .iter()
            .map(|&s| if s == usize::MAX { 0 } else { s + 1 })
            .collect(),
        rank_mismatch: report.rank_mismatch,
        congruence_threshold: CONGRUENCE_THRESHOLD,
        matching: "score-maximizing permutation",
    };
    println!("{}", serde_json::to_string_pretty(&out).expect("serializable"));
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct CheckOutput {
    objective: f64,
    kkt_per_mode: Vec<f64>,
    kkt_max: f64,
    /// 1-based components with zero weight, excluded from the residual.
    dead_components: Vec<usize>,
    /// Per mode: 1-based unfolding rows violating the full-row-rank
    /// condition, and rows with fewer nonzeros than the rank.
    assumption_violations: Vec<ModeViolations>,
    assumption_satisfied: bool,
}

#[derive(Serialize)]
struct ModeViolations {
    mode: usize,
    dependent_rows: Vec<usize>,
    undersparse_rows: Vec<usize>,
}

fn cmd_check(args: CheckArgs) -> Result<ExitCode, CpAprError> {
    let data = io::read_tensor(&args.tensor)?;
    let model = io::read_model(&args.model)?;
    let objective = kl_objective(&model, &data)?;
    let kkt = kkt_residual(&model, &data)?;
    let assumption = check_assumption(&model, &data, None)?;
    let violations = assumption
        .per_mode
        .iter()
        .enumerate()
        .map(|(n, m)| ModeViolations {
            mode: n + 1,
            dependent_rows: m
                .independent
                .iter()
                .enumerate()
                .filter(|&(_, &ok)| !ok)
                .map(|(i, _)| i + 1)
                .collect(),
            undersparse_rows: m
                .enough_nonzeros
                .iter()
                .enumerate()
                .filter(|&(_, &ok)| !ok)
                .map(|(i, _)| i + 1)
                .collect(),
        })
        .collect();
    let out = CheckOutput {
        objective,
        kkt_per_mode: kkt.per_mode_residual,
        kkt_max: kkt.max_residual,
        dead_components: kkt.dead_components.iter().map(|&r| r + 1).collect(),
        assumption_violations: violations,
        assumption_satisfied: assumption.all_satisfied,
    };
    println!("{}", serde_json::to_string_pretty(&out).expect("serializable"));
    Ok(ExitCode::SUCCESS)
}
