use deephedge::checkpoint::Checkpoint;
use deephedge::error::Error;
use deephedge::hedge::{terminal_pnl, CostModel, HedgingStrategy};
use deephedge::local::{train_local, train_local_runs, LocalAlgorithm, LocalConfig, LocalStrategy};
use deephedge::payoff::Payoff;
use deephedge::rng::Domain;
use deephedge::simulator::{Simulator, TrinomialMarket};

fn toy() -> TrinomialMarket {
    TrinomialMarket::new(1.0, 0.1, [0.25, 0.5, 0.25], vec![0.0, 1.0, 2.0]).unwrap()
}

fn quick(algorithm: LocalAlgorithm) -> LocalConfig {
    LocalConfig { iterations: Some(3000), runs: 1, seed: 11, norm_size: 20_000, ..LocalConfig::new(algorithm) }
}

/// Optimal value at date 1 for the toy market: the call is replicated
/// exactly above and below the strike, and hedged with ratio 1/2 at it.
fn toy_value(f1: f64) -> f64 {
    if f1 > 1.05 {
        0.1
    } else if f1 > 0.95 {
        0.025
    } else {
        0.0
    }
}

fn check_toy(algorithm: LocalAlgorithm) {
    let sim = toy();
    let payoff = Payoff::Call { strike: 1.0 };
    let strategy = train_local(&sim, &payoff, &[1.0], &quick(algorithm), 0).unwrap();
    let delta0 = strategy.initial_position()[0];
    assert!((delta0 - 0.5).abs() <= 0.02, "{algorithm:?}: delta0 = {delta0}");
    assert!((strategy.premium() - 0.0375).abs() < 2e-3, "{algorithm:?}: p = {}", strategy.premium());

    let values = strategy.value(1, &[1.1, 1.0, 0.9], &[0.5, 0.5, 0.5]).unwrap();
    for (v, f) in values.iter().zip([1.1, 1.0, 0.9]) {
        assert!((v - toy_value(f)).abs() < 5e-3, "{algorithm:?}: V1({f}) = {v}");
    }

    let paths = sim.simulate(4000, 5, Domain::Evaluation, 0);
    let pos = strategy.positions(&paths, None).unwrap();
    for p in 0..paths.n_paths() {
        let f1 = paths.prices(p, 1)[0];
        let target = if f1 > 1.05 {
            1.0
        } else if f1 > 0.95 {
            0.5
        } else {
            0.0
        };
        assert!((pos.delta(p, 1)[0] - target).abs() < 0.1, "{algorithm:?}: delta1 at {f1} = {}", pos.delta(p, 1)[0]);
    }
    assert!(pos.max_liquidity_ratio(&[1.0]) <= 1.0 + 1e-12);
}

#[test]
fn first_algorithm_recovers_toy_optimum() {
    check_toy(LocalAlgorithm::Algo1);
}

#[test]
fn second_algorithm_recovers_toy_optimum() {
    check_toy(LocalAlgorithm::Algo2);
}

#[test]
fn tie_breaks_to_zero_initial_position() {
    let sim = TrinomialMarket::new(1.0, 0.1, [0.0, 1.0, 0.0], vec![0.0, 1.0, 2.0]).unwrap();
    let payoff = Payoff::Call { strike: 0.9 };
    let cfg = LocalConfig { iterations: Some(300), ..quick(LocalAlgorithm::Algo2) };
    let strategy = train_local(&sim, &payoff, &[1.0], &cfg, 0).unwrap();
    assert_eq!(strategy.initial_position(), &[0.0]);
    assert!((strategy.premium() - 0.1).abs() < 1e-12);
}

#[test]
fn first_algorithm_requires_martingale_prices() {
    let sim = TrinomialMarket::new(1.0, 0.1, [0.2, 0.5, 0.3], vec![0.0, 1.0, 2.0]).unwrap();
    let err = train_local(&sim, &Payoff::Call { strike: 1.0 }, &[1.0], &quick(LocalAlgorithm::Algo1), 0);
    assert!(matches!(err, Err(Error::Config(_))));
}

#[test]
fn save_and_load_preserve_positions() {
    let sim = TrinomialMarket::new(1.0, 0.1, [0.25, 0.5, 0.25], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let payoff = Payoff::Call { strike: 1.0 };
    let cfg = LocalConfig { iterations: Some(200), ..quick(LocalAlgorithm::Algo1) };
    let strategy = train_local(&sim, &payoff, &[0.5], &cfg, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    strategy.save(dir.path()).unwrap();

    let ckpt = Checkpoint::read(&dir.path().join("date002.ckpt")).unwrap();
    assert!(ckpt.entries.iter().all(|e| !e.trainable));

    let back = LocalStrategy::load(dir.path()).unwrap();
    assert_eq!(back.checksums(), strategy.checksums());
    let paths = sim.simulate(500, 3, Domain::Evaluation, 0);
    let a = strategy.positions(&paths, None).unwrap();
    let b = back.positions(&paths, None).unwrap();
    assert_eq!(a.deltas, b.deltas);
    assert_eq!(a.premium, b.premium);

    let missing = LocalStrategy::load(&dir.path().join("nope"));
    assert!(matches!(missing, Err(Error::MissingArtifact(_))));
}

#[test]
fn training_is_deterministic_and_best_run_is_kept() {
    let sim = toy();
    let payoff = Payoff::Call { strike: 1.0 };
    let cfg = LocalConfig { iterations: Some(150), runs: 3, ..quick(LocalAlgorithm::Algo1) };
    let eval = sim.simulate(2000, 9, Domain::Evaluation, 0);
    let mut seen = Vec::new();
    let runs = train_local_runs(&sim, &payoff, &[1.0], &cfg, &eval, |r, s| seen.push((r, s))).unwrap();
    assert_eq!(seen.len(), 3);
    assert!(runs.min() <= runs.median() && runs.median() <= runs.max());
    assert_eq!(runs.scores[runs.best_run], runs.min());

    let again = train_local(&sim, &payoff, &[1.0], &cfg, runs.best_run).unwrap();
    assert_eq!(again.checksums(), runs.best.checksums());
    let pos = runs.best.positions(&eval, None).unwrap();
    let pnl = terminal_pnl(&eval, &pos, &payoff, &CostModel::free(1)).unwrap();
    let mse = pnl.y.iter().map(|y| y * y).sum::<f64>() / pnl.y.len() as f64;
    assert!((mse - runs.min()).abs() < 1e-15);
}
