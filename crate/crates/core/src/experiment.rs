//! Configuration-driven workflows shared by the command line and the
//! acceptance suite.

use std::path::Path;

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::hedge::{payoff_mean, HedgingStrategy};
use crate::local::{train_local_runs, LocalRuns, LocalStrategy};
use crate::market::Market;
use crate::paths::PathSet;
use crate::policy::Policy;
use crate::rng::Domain;
use crate::simulator::Simulator;
use crate::train::{init_policy, train_global_with, TrainLog, TrainRecord};

/// The common evaluation simulations of an experiment.
pub fn evaluation_paths(cfg: &ExperimentConfig, market: &Market) -> PathSet {
    market.simulate(cfg.evaluation.n_sims, cfg.seeds.evaluation, Domain::Evaluation, 0)
}

/// Trains the global policy described by `cfg`.
pub fn train_global_experiment(
    cfg: &ExperimentConfig,
    on_eval: impl FnMut(&TrainRecord),
) -> Result<(Policy, TrainLog)> {
    let market = cfg.build_market()?;
    let train = cfg.train_config();
    let policy = init_policy(cfg.policy.clone(), &market, &cfg.payoff, train.norm_size, train.seed)?;
    train_global_with(policy, &market, &cfg.payoff, &cfg.cost_model(), &train, on_eval)
}

/// Runs the local algorithm of `cfg`, scoring each run on `eval`.
pub fn train_local_experiment(
    cfg: &ExperimentConfig,
    eval: &PathSet,
    on_run: impl FnMut(usize, f64),
) -> Result<LocalRuns> {
    if cfg.training.algorithm.local().is_none() {
        return Err(Error::config("training.algorithm is not a local algorithm"));
    }
    let market = cfg.build_market()?;
    let liquidity =
        cfg.policy.liquidity.as_ref().ok_or_else(|| Error::config("local algorithms need policy.liquidity"))?;
    train_local_runs(&market, &cfg.payoff, liquidity, &cfg.local_config(), eval, on_run)
}

/// Loads a trained strategy: a checkpoint file holds a global policy, a
/// directory holds a local strategy.
pub fn load_strategy(path: &Path) -> Result<Box<dyn HedgingStrategy>> {
    if path.is_dir() {
        Ok(Box::new(LocalStrategy::load(path)?))
    } else {
        Ok(Box::new(Policy::from_checkpoint(&Checkpoint::read(path)?)?))
    }
}

/// Checks that a loaded strategy was trained on the dates of `paths`.
pub fn check_compatible(strategy: &dyn HedgingStrategy, paths: &PathSet) -> Result<()> {
    if strategy.n_assets() != paths.n_tradable() {
        return Err(Error::config(format!(
            "strategy hedges {} assets, market has {}",
            strategy.n_assets(),
            paths.n_tradable()
        )));
    }
    Ok(())
}

/// Premium of the unhedged baseline: the Monte-Carlo mean of the payoff on
/// the evaluation paths.
pub fn unhedged_premium(cfg: &ExperimentConfig, paths: &PathSet) -> Result<f64> {
    payoff_mean(paths, &cfg.payoff)
}
