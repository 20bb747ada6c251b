//! Command-line front end for the random conductance model toolkit:
//! environment generation, single-shot statistics, and seeded Monte Carlo
//! sweeps with CSV/JSON/SVG outputs.
//!
//! Exit codes: 0 success, 2 configuration or parameter error, 3 solver
//! failure, 4 sweep-quality failure.

mod config;
mod plot;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use rcm_core::conductance::solve_mixed_potential;
use rcm_core::corrector::{corrector_diagnostics, diffusion_matrix, solve_corrector};
use rcm_core::experiments::{
    rows_to_csv, run_sweep, summarize, summary_to_json, BoundSpec, SweepConfig, SweepQuantity,
};
use rcm_core::lattice_env::{Closure, DistributionSpec, Environment, LatticeSpec};
use rcm_core::potential_walk::{point_geometry, point_statistic, PotentialField};
use rcm_core::spectral::{dirichlet_spectral_statistic, eigenfunction_sup_diagnostic};
use rcm_core::Error;

use config::{parse_dist, SweepFile};

#[derive(Parser)]
#[command(name = "rcm", version, about = "Finite-volume homogenization statistics for random conductance models on Z^d")]
struct Cli {
    /// Worker threads for sweeps (outputs are identical for any value)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample an i.i.d. conductance environment and write it to a file
    GenEnv(GenEnvArgs),
    /// Compute a single statistic and print a JSON result
    #[command(subcommand)]
    Compute(ComputeCommand),
    /// Run a seeded Monte Carlo sweep described by a config file
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenEnvArgs {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    n: usize,
    /// Distribution, e.g. constant:1, uniform-elliptic:2, two-point:0.5,0.5,2,
    /// power-low-tail:0.8,1
    #[arg(long)]
    dist: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Lattice closure
    #[arg(long, default_value = "torus")]
    closure: String,
    /// Output path
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct EnvArgs {
    /// Load an environment file instead of sampling
    #[arg(long)]
    env: Option<PathBuf>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// Distribution in kind:args syntax
    #[arg(long)]
    dist: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Explicit weights in canonical edge order (overrides dist/seed)
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    /// Solver tolerance
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
}

impl EnvArgs {
    fn build(&self, closure: Closure) -> Result<Environment, Error> {
        if let Some(path) = &self.env {
            let env = Environment::load(path)?;
            if env.lattice.closure != closure {
                return Err(Error::usage(format!(
                    "environment closure {:?} does not match the requested computation",
                    env.lattice.closure
                )));
            }
            return Ok(env);
        }
        let d = self.d.ok_or_else(|| Error::usage("--d required without --env"))?;
        let n = self.n.ok_or_else(|| Error::usage("--n required without --env"))?;
        let lattice = LatticeSpec { d, n, closure };
        if let Some(weights) = &self.weights {
            return Environment::from_weights(lattice, weights.clone());
        }
        let dist = parse_dist(
            self.dist.as_deref().ok_or_else(|| Error::usage("--dist or --weights required"))?,
        )?;
        Environment::sample(lattice, dist, self.seed)
    }
}

#[derive(Subcommand)]
enum ComputeCommand {
    /// Periodic corrector and diffusion matrix on the torus
    Diffusion(EnvArgs),
    /// Effective conductance between opposite faces of the closed box
    Conductance(EnvArgs),
    /// Bottom Dirichlet eigenvalue and N^2 lambda_N
    Spectral(EnvArgs),
    /// Killed-walk Green function statistic f_N = -log G(0, N e_1) / N
    Green(GreenArgs),
}

#[derive(Args)]
struct GreenArgs {
    #[arg(long)]
    d: usize,
    /// Number of steps N in the statistic
    #[arg(long)]
    n_steps: usize,
    /// Direction vector, e.g. 1,0
    #[arg(long, value_delimiter = ',')]
    direction: Option<Vec<i64>>,
    /// Killing potential law
    #[arg(long)]
    pot_dist: String,
    /// Conductance law (defaults to constant:1)
    #[arg(long, default_value = "constant:1")]
    cond_dist: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep config file (TOML)
    config: PathBuf,
    /// Override the sample count
    #[arg(long)]
    samples: Option<usize>,
    /// Override the master seed
    #[arg(long)]
    master_seed: Option<u64>,
    /// Override the solver tolerance
    #[arg(long)]
    tol: Option<f64>,
    /// Output directory (overrides the config file)
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    /// Also write SVG charts (log Var vs log N, tail profile)
    #[arg(long)]
    plot: bool,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Parameter(_) | Error::Usage(_) | Error::Format(_) | Error::Io(_) => 2,
        Error::Convergence { .. } | Error::Domain(_) => 3,
        Error::SweepQuality(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // ignore failure when a pool already exists (e.g. repeated calls in tests)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let result = match cli.command {
        Command::GenEnv(args) => cmd_gen_env(args),
        Command::Compute(cmd) => cmd_compute(cmd),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn cmd_gen_env(args: GenEnvArgs) -> Result<(), Error> {
    let closure = match args.closure.as_str() {
        "torus" => Closure::Torus,
        "closed-box" | "closed_box" => Closure::ClosedBox,
        other => return Err(Error::usage(format!("unknown closure '{other}'"))),
    };
    let dist = parse_dist(&args.dist)?;
    let env = Environment::sample(LatticeSpec { d: args.d, n: args.n, closure }, dist, args.seed)?;
    env.save(&args.output)?;
    let weights = env.weights();
    let min = weights.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = weights.iter().sum::<f64>() / weights.len() as f64;
    println!(
        "{}",
        json!({
            "path": args.output.display().to_string(),
            "edges": weights.len(),
            "weights": { "min": min, "max": max, "mean": mean },
        })
    );
    Ok(())
}

fn cmd_compute(cmd: ComputeCommand) -> Result<(), Error> {
    let out = match cmd {
        ComputeCommand::Diffusion(args) => {
            let env = args.build(Closure::Torus)?;
            let corr = solve_corrector(&env, args.tol)?;
            let diff = diffusion_matrix(&env, &corr)?;
            let diag = corrector_diagnostics(&env, &corr)?;
            let d = env.lattice.d;
            let matrix: Vec<Vec<f64>> =
                (0..d).map(|i| (0..d).map(|j| diff.entry(i, j)).collect()).collect();
            json!({
                "quantity": "diffusion_matrix",
                "d": d,
                "n": env.lattice.n,
                "value": diff.entry(0, 0),
                "matrix": matrix,
                "trace": diff.trace(),
                "residual": corr.residual,
                "iterations": corr.iterations,
                "corrector_sup_norm": diag.sup_norm,
                "corrector_energy_trace": diag.energy_trace,
            })
        }
        ComputeCommand::Conductance(args) => {
            let env = args.build(Closure::ClosedBox)?;
            let sol = solve_mixed_potential(&env, args.tol)?;
            json!({
                "quantity": "effective_conductance",
                "d": env.lattice.d,
                "n": env.lattice.n,
                "value": sol.f,
                "flux": sol.flux,
                "energy": sol.energy,
                "energy_edges": sol.energy_edges,
                "residual": sol.residual,
                "iterations": sol.iterations,
            })
        }
        ComputeCommand::Spectral(args) => {
            let env = args.build(Closure::ClosedBox)?;
            let sol = dirichlet_spectral_statistic(&env, args.tol)?;
            let ratio = eigenfunction_sup_diagnostic(env.lattice.d, &sol);
            json!({
                "quantity": "spectral_statistic",
                "d": env.lattice.d,
                "n": env.lattice.n,
                "value": sol.lambda,
                "f": sol.f,
                "sup_ratio": ratio,
                "residual": sol.residual,
                "iterations": sol.iterations,
            })
        }
        ComputeCommand::Green(args) => {
            let direction = args
                .direction
                .unwrap_or_else(|| (0..args.d).map(|k| if k == 0 { 1 } else { 0 }).collect());
            let geo = point_geometry(args.d, &direction, args.n_steps)?;
            let env = Environment::sample(geo.env_lattice, parse_dist(&args.cond_dist)?, args.seed)?;
            let pot = PotentialField::sample(
                geo.env_lattice,
                geo.origin.clone(),
                parse_dist(&args.pot_dist)?,
                args.seed,
            )?;
            let stat = point_statistic(&env, &pot, &geo.source, &direction, args.n_steps, args.tol)?;
            json!({
                "quantity": "potential_statistic",
                "d": args.d,
                "n_steps": args.n_steps,
                "direction": direction,
                "value": stat.f,
                "green_value": stat.green.value,
                "green_diagonal": stat.green.diagonal,
                "box_side": stat.green.box_side,
                "truncation_gap": stat.green.truncation_gap,
                "truncated": stat.green.truncated,
            })
        }
    };
    println!("{out}");
    Ok(())
}

/// Bound spec matching the sweep's quantity and law, when one applies.
fn infer_bound(config: &SweepConfig) -> Option<BoundSpec> {
    if config.quantity != SweepQuantity::EffectiveConductance {
        return None;
    }
    match config.dist {
        DistributionSpec::UniformElliptic { kappa } if config.d >= 3 => {
            Some(BoundSpec::EffectiveConductanceElliptic { d: config.d, kappa })
        }
        DistributionSpec::TwoPoint { lo, hi, .. } if config.d >= 3 && lo > 0.0 => {
            let kappa = hi.max(1.0 / lo);
            Some(BoundSpec::EffectiveConductanceElliptic { d: config.d, kappa })
        }
        DistributionSpec::PowerLowTail { gamma, kappa } => {
            let d0 = config.dist.tail_d0().unwrap_or(1.0);
            let heavy =
                BoundSpec::EffectiveConductanceHeavyTail { d: config.d, kappa, gamma, d0 };
            if heavy.variance_bound(config.n_list[0]).is_some() {
                Some(heavy)
            } else if config.d >= 5 {
                Some(BoundSpec::EffectiveConductanceBounded { d: config.d, kappa })
            } else {
                None
            }
        }
        _ => None,
    }
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Error> {
    let body = std::fs::read_to_string(&args.config)?;
    let mut file = SweepFile::parse(&body)?;
    if let Some(samples) = args.samples {
        file.samples = samples;
    }
    if let Some(seed) = args.master_seed {
        file.master_seed = seed;
    }
    if let Some(tol) = args.tol {
        file.tol = tol;
    }
    let out_dir: PathBuf = args
        .output_dir
        .or_else(|| file.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;

    let config = file.to_sweep_config()?;
    let result = run_sweep(&config)?;
    // echo the effective configuration (after flag overrides) for provenance
    std::fs::write(out_dir.join(format!("sweep_{}.toml", result.run_id)), file.serialize()?)?;
    let bound = infer_bound(&config);
    let thresholds = [1.0, 2.0, 4.0, 8.0];
    let summary = summarize(&result, &config, bound.as_ref(), &thresholds);

    let csv_path = out_dir.join(format!("sweep_{}.csv", result.run_id));
    std::fs::write(&csv_path, rows_to_csv(&result.rows))?;
    let json_path = out_dir.join(format!("sweep_{}.json", result.run_id));
    std::fs::write(&json_path, summary_to_json(&summary)?)?;

    if args.plot {
        write_plots(&out_dir, &result.run_id, &summary)?;
    }

    println!(
        "{}",
        json!({
            "run_id": result.run_id,
            "csv": csv_path.display().to_string(),
            "summary": json_path.display().to_string(),
            "per_n": summary.per_n.iter().map(|g| json!({
                "n": g.n, "mean": g.mean, "var": g.var,
            })).collect::<Vec<_>>(),
            "slope": summary.fit.as_ref().map(|f| f.slope),
            "bounds_pass": summary.bound_verdicts.iter().all(|v| v.pass),
        })
    );
    Ok(())
}

fn write_plots(
    dir: &Path,
    run_id: &str,
    summary: &rcm_core::experiments::SweepSummary,
) -> Result<(), Error> {
    let var_points: Vec<(f64, f64)> = summary
        .per_n
        .iter()
        .filter(|g| g.var > 0.0)
        .map(|g| ((g.n as f64).ln(), g.var.ln()))
        .collect();
    if var_points.len() >= 2 {
        let mut series = vec![plot::Series { label: "log Var".into(), points: var_points.clone() }];
        if let Some(fit) = &summary.fit {
            let fitted: Vec<(f64, f64)> = var_points
                .iter()
                .map(|&(x, _)| (x, fit.slope * x + fit.intercept))
                .collect();
            series.push(plot::Series {
                label: format!("fit slope {:.2}", fit.slope),
                points: fitted,
            });
        }
        let svg = plot::line_chart("variance scaling", "log N", "log Var", &series);
        std::fs::write(dir.join(format!("variance_{run_id}.svg")), svg)?;
    }
    if !summary.tail.is_empty() {
        let emp: Vec<(f64, f64)> = summary.tail.iter().map(|r| (r.t, r.empirical)).collect();
        let mut series = vec![plot::Series { label: "empirical".into(), points: emp }];
        if summary.tail.iter().any(|r| r.bound.is_some()) {
            series.push(plot::Series {
                label: "bound".into(),
                points: summary
                    .tail
                    .iter()
                    .filter_map(|r| r.bound.map(|b| (r.t, b)))
                    .collect(),
            });
        }
        let svg = plot::line_chart("tail exceedance", "t", "P(|f - mean| >= t N^{-rho})", &series);
        std::fs::write(dir.join(format!("tail_{run_id}.svg")), svg)?;
    }
    Ok(())
}
