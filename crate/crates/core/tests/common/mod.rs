//! Small fixtures shared by the policy tests and the acceptance suite.

#![allow(dead_code)]

use deephedge::hedge::{CostModel, HedgingStrategy};
use deephedge::loss::LossSpec;
use deephedge::market::{uniform_dates, CorrelationSpec, ForwardParams, Market, TimeUnit, VolumeParams};
use deephedge::paths::PathSet;
use deephedge::payoff::Payoff;
use deephedge::policy::{Architecture, Policy, PolicyConfig};
use deephedge::rng::Domain;
use deephedge::simulator::Simulator;
use deephedge_autodiff::{finite_difference_check, flatten_trainable_grads, ParamStore, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ARCHS: [Architecture; 4] =
    [Architecture::FfControl, Architecture::FfMerged, Architecture::Lstm, Architecture::AugmentedLstm];

pub const LOSSES: [LossSpec; 4] = [
    LossSpec::Mse,
    LossSpec::Asym { alpha: 1.0 },
    LossSpec::M2m4 { alpha: 1.0 },
    LossSpec::MeanCostVariance { alpha: 0.6 },
];

pub fn small_market(steps: usize) -> Market {
    let assets = vec![
        ForwardParams { initial: 40.0, volatility: 0.02, mean_reversion: 0.01 },
        ForwardParams { initial: 30.0, volatility: 0.015, mean_reversion: 0.005 },
    ];
    let volume = VolumeParams { initial: 1.0, volatility: 0.02, mean_reversion: 0.02, seasonal: None };
    let corr = CorrelationSpec::from_pairs(3, &[(0, 1, 0.7), (0, 2, 0.2), (1, 2, 0.2)]).unwrap();
    Market::forward(assets, volume, corr, uniform_dates(400.0, steps), TimeUnit::Hours).unwrap()
}

pub fn config(arch: Architecture, liquidity: Option<f64>, alpha: bool) -> PolicyConfig {
    PolicyConfig {
        architecture: arch,
        hidden: vec![6, 5],
        lstm_units: 5,
        liquidity: liquidity.map(|l| vec![l, l]),
        alpha_conditioned: alpha,
        train_premium: true,
    }
}

pub fn build(market: &Market, cfg: PolicyConfig, seed: u64) -> Policy {
    let norm = market.norm_stats(2000, 1, Domain::Normalization).unwrap();
    let mut policy = Policy::new(cfg, 2, market.dates().to_vec(), norm, 1.5, seed).unwrap();
    // Random biases keep relu units away from their kink on the test batch.
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let ids: Vec<_> = policy.store().ids().collect();
    for id in ids {
        if policy.store().name(id).ends_with("bias") || policy.store().name(id) == "initial_position" {
            for v in policy.store_mut().get_mut(id).data_mut() {
                *v = rng.random_range(-0.4..0.4);
            }
        }
    }
    policy
}

pub fn objective_value(
    policy: &Policy,
    paths: &PathSet,
    loss: &LossSpec,
    costs: &CostModel,
    alpha: Option<f64>,
) -> f64 {
    let payoff = Payoff::VolumeSpread { strike: 10.0 };
    let batch = policy.batch(paths, &payoff, alpha).unwrap();
    let mut tape = Tape::new();
    let bound = policy.store().bind(&mut tape);
    let (v, _) = policy.objective(&mut tape, &bound, &batch, loss, costs).unwrap();
    tape.value(v).data()[0]
}

/// A policy of the same shape carrying the parameters of `store`.
pub fn policy_clone_with(
    market: &Market,
    arch: Architecture,
    liquidity: Option<f64>,
    alpha: bool,
    store: &ParamStore,
) -> Policy {
    let mut p = build(market, config(arch, liquidity, alpha), 0);
    for id in store.ids() {
        p.store_mut().set(id, store.get(id).clone()).unwrap();
    }
    p
}

/// Largest relative error between reverse-mode and central-difference
/// gradients of the full training objective over 100 random coordinates.
pub fn gradient_error(arch_index: usize, loss_index: usize) -> f64 {
    let market = small_market(4);
    let paths = market.simulate(16, 3, Domain::Test, 0);
    let payoff = Payoff::VolumeSpread { strike: 10.0 };
    let costs = CostModel::uniform(2, 0.02);
    let arch = ARCHS[arch_index];
    let loss = LOSSES[loss_index];
    let conditioned = loss.needs_costs();
    let alpha = conditioned.then_some(0.6);
    let liquidity = if loss_index % 2 == 0 { Some(0.2) } else { None };
    let mut policy = build(&market, config(arch, liquidity, conditioned), (arch_index * 10 + loss_index) as u64);
    let batch = policy.batch(&paths, &payoff, alpha).unwrap();
    let mut tape = Tape::new();
    let bound = policy.store().bind(&mut tape);
    let (root, _) = policy.objective(&mut tape, &bound, &batch, &loss, &costs).unwrap();
    let grads = tape.backward(root).unwrap();
    let analytic = flatten_trainable_grads(policy.store(), &policy.store().grads(&bound, &grads));
    let n = analytic.len();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let coords: Vec<usize> = (0..100).map(|_| rng.random_range(0..n)).collect();
    let report = finite_difference_check(policy.store_mut(), &analytic, &coords, 1e-5, |store| {
        let mut probe = policy_clone_with(&market, arch, liquidity, conditioned, store);
        probe.set_premium(store.get(store.find("premium").unwrap()).data()[0]);
        Ok(objective_value(&probe, &paths, &loss, &costs, alpha))
    })
    .unwrap();
    report.max_error(1e-4, 1e-8)
}

/// Number of `(path, date)` positions that change when states strictly after
/// their date are altered.
pub fn look_ahead_count(strategy: &dyn HedgingStrategy, paths: &PathSet) -> usize {
    let base = strategy.positions(paths, None).unwrap();
    let mut count = 0;
    for j in 0..paths.steps() {
        let mut altered = paths.clone();
        for p in 0..altered.n_paths() {
            for k in j + 1..altered.n_dates() {
                for v in altered.state_mut(p, k) {
                    *v *= 1.37;
                }
            }
        }
        let moved = strategy.positions(&altered, None).unwrap();
        for p in 0..paths.n_paths() {
            for k in 0..=j {
                let (a, b) = (base.delta(p, k), moved.delta(p, k));
                if a.iter().zip(b).any(|(x, y)| x.to_bits() != y.to_bits()) {
                    count += 1;
                }
            }
        }
    }
    count
}
