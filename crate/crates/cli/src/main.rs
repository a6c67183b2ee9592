//! `deephedge`: simulate markets, train hedging strategies, evaluate them and
//! trace cost/risk frontiers from TOML experiment files or built-in presets.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use deephedge::config::{preset, ExperimentConfig, PRESETS};
use deephedge::error::{Error, Result};
use deephedge::experiment::{
    check_compatible, evaluation_paths, load_strategy, train_global_experiment, train_local_experiment,
    unhedged_premium,
};
use deephedge::hedge::{BlackScholesDelta, HedgingStrategy, Unhedged};
use deephedge::report::{
    alpha_grid, delta_rows, dominance_filter, evaluate, frontier_sweep, pnl_density, score_sample, write_csv,
    write_deltas_csv, write_frontier_csv, FrontierPoint, RunManifest, ScoreTable,
};
use deephedge::rng::Domain;
use deephedge::simulator::Simulator;
use serde::Serialize;

const OUTPUT_ROOT_ENV: &str = "DEEPHEDGE_OUTPUT_ROOT";
const THREADS_ENV: &str = "DEEPHEDGE_THREADS";

#[derive(Parser)]
#[command(
    name = "deephedge",
    version,
    about = "Deep hedging under liquidity limits, volume risk and transaction costs"
)]
struct Cli {
    /// Worker threads for simulation and evaluation (default: all cores,
    /// or DEEPHEDGE_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate paths of the configured market.
    Simulate {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Number of paths (default: evaluation.n_sims).
        #[arg(long)]
        n: Option<usize>,
        /// Also write the paths as CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Train the configured strategy.
    Train {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Score a trained strategy or a baseline on the common simulations.
    Evaluate {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Checkpoint file (global policy) or directory (local strategy).
        #[arg(long, required_unless_present = "baseline")]
        checkpoint: Option<PathBuf>,
        /// Evaluate a baseline instead of a trained strategy.
        #[arg(long, value_enum, conflicts_with = "checkpoint")]
        baseline: Option<Baseline>,
        /// Risk weight fed to an α-conditioned policy.
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
    },
    /// Sweep an α-conditioned policy over a grid of risk weights.
    Pareto {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Grid size (default: evaluation.alpha_points).
        #[arg(long)]
        alpha_points: Option<usize>,
    },
    /// List the presets, or print one expanded.
    Presets { name: Option<String> },
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Unhedged,
    BsDelta,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment file (TOML).
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset name.
    #[arg(long)]
    preset: Option<String>,
    /// Override a configuration value, e.g. `training.global.n_iter=2000`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
    /// Reduced budgets for smoke runs.
    #[arg(long)]
    quick: bool,
    /// Output directory (default: output_dir from the config, else the
    /// experiment name under DEEPHEDGE_OUTPUT_ROOT or the current directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ExperimentArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        match (&self.config, &self.preset) {
            (Some(path), _) => {
                if !path.exists() {
                    return Err(Error::MissingArtifact(path.clone()));
                }
                ExperimentConfig::load_toml(&fs::read_to_string(path)?, &self.overrides, self.quick)
            }
            (None, Some(name)) => ExperimentConfig::load_preset(name, &self.overrides, self.quick),
            (None, None) => Err(Error::Config("either --config or --preset is required".into())),
        }
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> Result<PathBuf> {
        let dir = self
            .out
            .clone()
            .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(&cfg.name));
        let dir = match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
            _ => dir,
        };
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }
}

fn manifest(command: &str, cfg: &ExperimentConfig) -> Result<RunManifest> {
    let mut m = RunManifest::new(command, &cfg.to_toml()?);
    m.seeds = cfg.seeds_map();
    Ok(m)
}

fn finish(dir: &Path, mut m: RunManifest, files: &[&str]) -> Result<()> {
    m.files = files.iter().map(|f| f.to_string()).collect();
    m.write(&dir.join("manifest.json"))?;
    println!("wrote {}", dir.display());
    Ok(())
}

fn simulate(exp: &ExperimentArgs, n: Option<usize>, csv: bool) -> Result<()> {
    let cfg = exp.load()?;
    let market = cfg.build_market()?;
    let dir = exp.out_dir(&cfg)?;
    let n = n.unwrap_or(cfg.evaluation.n_sims);
    let paths = market.simulate(n, cfg.seeds.simulation, Domain::Export, 0);
    fs::write(dir.join("paths.bin"), paths.to_bytes())?;
    let mut files = vec!["paths.bin"];
    if csv {
        paths.write_csv(std::io::BufWriter::new(fs::File::create(dir.join("paths.csv"))?))?;
        files.push("paths.csv");
    }
    let mut m = manifest("simulate", &cfg)?;
    m.pathset_id = Some(paths.id());
    m.notes.insert("n_paths".into(), n.into());
    finish(&dir, m, &files)
}

#[derive(Serialize)]
struct RunRow {
    run: usize,
    mse: f64,
}

fn train(exp: &ExperimentArgs) -> Result<()> {
    let cfg = exp.load()?;
    let dir = exp.out_dir(&cfg)?;
    let mut m = manifest("train", &cfg)?;
    if cfg.training.algorithm.local().is_none() {
        let (policy, log) = train_global_experiment(&cfg, |r| {
            eprintln!(
                "iter {:>7}  train {:.6e}  test {:.6e}{}  ({:.0}s)",
                r.iter,
                r.train_loss,
                r.test_loss,
                if r.best { "  *" } else { "" },
                r.seconds
            );
        })?;
        policy.to_checkpoint().write(&dir.join("policy.ckpt"))?;
        log.write_csv(fs::File::create(dir.join("train_log.csv"))?)?;
        if let Some(best) = log.best_test_loss() {
            println!("best test loss {best:.6e}");
            m.notes.insert("best_test_loss".into(), best.into());
        }
        finish(&dir, m, &["policy.ckpt", "train_log.csv"])
    } else {
        let market = cfg.build_market()?;
        let eval = evaluation_paths(&cfg, &market);
        let runs = train_local_experiment(&cfg, &eval, |run, mse| eprintln!("run {run}: mse {mse:.6e}"))?;
        runs.best.save(&dir.join("local"))?;
        let rows: Vec<RunRow> = runs.scores.iter().enumerate().map(|(run, &mse)| RunRow { run, mse }).collect();
        write_csv(&dir.join("runs.csv"), &rows)?;
        println!(
            "best run {}: mse min {:.6e}  median {:.6e}  max {:.6e}",
            runs.best_run,
            runs.min(),
            runs.median(),
            runs.max()
        );
        m.pathset_id = Some(eval.id());
        m.notes.insert("best_run".into(), runs.best_run.into());
        m.notes.insert("min_mse".into(), runs.min().into());
        finish(&dir, m, &["local", "runs.csv"])
    }
}

#[derive(Serialize)]
struct DensityRow {
    y: f64,
    density: f64,
}

fn run_evaluate(exp: &ExperimentArgs, checkpoint: Option<&Path>, baseline: Option<Baseline>, alpha: f64) -> Result<()> {
    let cfg = exp.load()?;
    let strategy: Box<dyn HedgingStrategy> = match (checkpoint, baseline) {
        (Some(path), _) => load_strategy(path)?,
        (None, Some(b)) => baseline_strategy(&cfg, b)?,
        (None, None) => return Err(Error::Config("--checkpoint or --baseline is required".into())),
    };
    let market = cfg.build_market()?;
    let paths = evaluation_paths(&cfg, &market);
    check_compatible(strategy.as_ref(), &paths)?;
    let dir = exp.out_dir(&cfg)?;
    let costs = cfg.cost_model();
    let alpha = cfg.policy.alpha_conditioned.then_some(alpha);
    let (positions, sample) = evaluate(strategy.as_ref(), &paths, &cfg.payoff, &costs, alpha)?;
    let mut rows = score_sample(&strategy.name(), &cfg.name, &sample, &cfg.evaluation.specs)?;
    if baseline.is_none() {
        let unhedged = Unhedged { n_assets: market.n_tradable(), premium: unhedged_premium(&cfg, &paths)? };
        let (_, base) = evaluate(&unhedged, &paths, &cfg.payoff, &costs, None)?;
        rows.extend(score_sample(&unhedged.name(), &cfg.name, &base, &cfg.evaluation.specs)?);
    }
    let table = ScoreTable { pathset_id: paths.id(), rows };
    for r in &table.rows {
        println!("{:<24} {:<28} {:.6e} ± {:.1e}", r.policy, r.spec, r.value, r.stderr);
    }
    table.write_csv(&dir.join("scores.csv"))?;
    sample.write_csv(&dir.join("pnl.csv"))?;
    let sims: Vec<usize> = cfg.evaluation.delta_sims.iter().copied().filter(|&s| s < paths.n_paths()).collect();
    write_deltas_csv(&dir.join("deltas.csv"), &delta_rows(&positions, &sims)?)?;
    let density = pnl_density(&sample.y, cfg.evaluation.bandwidth, cfg.evaluation.kde_points)?;
    let density_rows: Vec<DensityRow> =
        density.grid.iter().zip(&density.density).map(|(&y, &density)| DensityRow { y, density }).collect();
    write_csv(&dir.join("density.csv"), &density_rows)?;
    let mut m = manifest("evaluate", &cfg)?;
    m.pathset_id = Some(paths.id());
    m.notes.insert("strategy".into(), strategy.name().into());
    if let Some(path) = checkpoint {
        m.notes.insert("checkpoint".into(), path.display().to_string().into());
    }
    if let Some(a) = alpha {
        m.notes.insert("alpha".into(), a.into());
    }
    m.notes.insert("kde_bandwidth".into(), density.bandwidth.into());
    m.notes.insert("kde_degenerate".into(), density.degenerate.into());
    if let Some(l) = &cfg.policy.liquidity {
        m.notes.insert("max_trade_over_liquidity".into(), positions.max_liquidity_ratio(l).into());
    }
    finish(&dir, m, &["scores.csv", "pnl.csv", "deltas.csv", "density.csv"])
}

fn baseline_strategy(cfg: &ExperimentConfig, baseline: Baseline) -> Result<Box<dyn HedgingStrategy>> {
    let market = cfg.build_market()?;
    match baseline {
        Baseline::Unhedged => {
            let paths = evaluation_paths(cfg, &market);
            Ok(Box::new(Unhedged { n_assets: market.n_tradable(), premium: unhedged_premium(cfg, &paths)? }))
        }
        Baseline::BsDelta => match (&cfg.market, &cfg.payoff) {
            (
                deephedge::config::MarketConfig::Gbm { assets, maturity, .. },
                deephedge::payoff::Payoff::Call { strike },
            ) if assets.len() == 1 => Ok(Box::new(BlackScholesDelta {
                strike: *strike,
                volatility: assets[0].volatility,
                maturity: *maturity,
            })),
            _ => Err(Error::Config("bs-delta needs a one-asset gbm market and a call payoff".into())),
        },
    }
}

fn pareto(exp: &ExperimentArgs, checkpoint: &Path, points: Option<usize>) -> Result<()> {
    let cfg = exp.load()?;
    if !cfg.policy.alpha_conditioned {
        return Err(Error::Config("pareto needs policy.alpha_conditioned = true".into()));
    }
    let strategy = load_strategy(checkpoint)?;
    let market = cfg.build_market()?;
    let paths = evaluation_paths(&cfg, &market);
    check_compatible(strategy.as_ref(), &paths)?;
    let dir = exp.out_dir(&cfg)?;
    let alphas = alpha_grid(points.unwrap_or(cfg.evaluation.alpha_points));
    let evals = frontier_sweep(strategy.as_ref(), &paths, &cfg.payoff, &cfg.cost_model(), &alphas)?;
    for e in &evals {
        println!(
            "alpha {:.3}  mean_cost {:.6e} ± {:.1e}  risk {:.6e} ± {:.1e}",
            e.point.alpha, e.point.mean_cost, e.cost_stderr, e.point.risk, e.risk_stderr
        );
    }
    let kept = dominance_filter(&evals);
    println!("{} of {} points survive the dominance filter", kept.len(), evals.len());
    let points: Vec<FrontierPoint> = evals.iter().map(|e| e.point.clone()).collect();
    write_frontier_csv(&dir.join("frontier.csv"), &points)?;
    let mut m = manifest("pareto", &cfg)?;
    m.pathset_id = Some(paths.id());
    m.notes.insert("checkpoint".into(), checkpoint.display().to_string().into());
    m.notes.insert("non_dominated".into(), kept.len().into());
    finish(&dir, m, &["frontier.csv"])
}

fn presets(name: Option<&str>) -> Result<()> {
    match name {
        Some(n) => print!("{}", preset(n)?.to_toml()?),
        None => {
            for n in PRESETS {
                println!("{n}");
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads.or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok()));
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Simulate { exp, n, csv } => simulate(exp, *n, *csv),
        Command::Train { exp } => train(exp),
        Command::Evaluate { exp, checkpoint, baseline, alpha } => {
            run_evaluate(exp, checkpoint.as_deref(), *baseline, *alpha)
        }
        Command::Pareto { exp, checkpoint, alpha_points } => pareto(exp, checkpoint, *alpha_points),
        Command::Presets { name } => presets(name.as_deref()),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::NotPsd { .. } => 2,
        Error::MissingArtifact(_) => 3,
        Error::Numerical(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
