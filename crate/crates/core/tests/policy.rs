use deephedge::checkpoint::Checkpoint;
use deephedge::hedge::{terminal_pnl, CostModel, HedgingStrategy};
use deephedge::paths::{NormStats, PathSet};
use deephedge::payoff::Payoff;
use deephedge::policy::{Architecture, Policy, PolicyConfig};
use deephedge::rng::Domain;
use deephedge::simulator::Simulator;
use deephedge_autodiff::Tape;

mod common;

use common::{build, config, gradient_error, look_ahead_count, small_market, ARCHS, LOSSES};

#[test]
fn full_objective_gradients_match_finite_differences() {
    for (a, arch) in ARCHS.iter().enumerate() {
        for (k, loss) in LOSSES.iter().enumerate() {
            let err = gradient_error(a, k);
            assert!(err < 1e-4, "{arch:?} {loss:?}: relative error {err:e}");
        }
    }
}

#[test]
fn positions_never_look_ahead() {
    let market = small_market(6);
    let paths = market.simulate(40, 5, Domain::Test, 0);
    for arch in ARCHS {
        for liquidity in [Some(0.2), None] {
            let policy = build(&market, config(arch, liquidity, false), 11);
            assert_eq!(look_ahead_count(&policy, &paths), 0, "{arch:?}");
        }
    }
}

#[test]
fn bounded_policies_respect_liquidity() {
    let market = small_market(6);
    let paths = market.simulate(500, 9, Domain::Test, 0);
    for arch in ARCHS {
        let mut policy = build(&market, config(arch, Some(0.15), false), 2);
        // Large weights saturate tanh, the hardest case for the bound.
        let ids: Vec<_> = policy.store().ids().collect();
        for id in ids {
            for v in policy.store_mut().get_mut(id).data_mut() {
                *v *= 50.0;
            }
        }
        let pos = policy.positions(&paths, None).unwrap();
        assert_eq!(pos.liquidity_violations(&[0.15, 0.15]), 0, "{arch:?}");
        assert!(pos.max_liquidity_ratio(&[0.15, 0.15]) <= 1.0);
        for p in 0..paths.n_paths() {
            for j in 1..paths.steps() {
                for i in 0..2 {
                    let diff = pos.delta(p, j)[i] - pos.delta(p, j - 1)[i];
                    assert!((diff - pos.increment(p, j)[i]).abs() <= 1e-15 * (1.0 + pos.delta(p, j)[i].abs()));
                }
            }
        }
    }
}

#[test]
fn tape_wealth_matches_independent_resummation() {
    let market = small_market(3);
    let paths = market.simulate(64, 13, Domain::Test, 0);
    let payoff = Payoff::VolumeSpread { strike: 10.0 };
    let costs = CostModel::uniform(2, 0.03);
    for arch in ARCHS {
        let policy = build(&market, config(arch, Some(0.2), false), 4);
        let batch = policy.batch(&paths, &payoff, None).unwrap();
        let mut tape = Tape::new();
        let bound = policy.store().bind(&mut tape);
        let fwd = policy.forward(&mut tape, &bound, &batch, Some(&costs)).unwrap();
        let pos = policy.positions(&paths, None).unwrap();
        let pnl = terminal_pnl(&paths, &pos, &payoff, &costs).unwrap();
        let y = tape.value(fwd.error).data();
        let c = tape.value(fwd.cost.unwrap()).data();
        for p in 0..paths.n_paths() {
            // Loop-free oracle: X_T - p = sum over dates of delta . dF.
            let mut gains = 0.0;
            for j in 0..paths.steps() {
                for i in 0..2 {
                    gains += pos.delta(p, j)[i] * (paths.prices(p, j + 1)[i] - paths.prices(p, j)[i]);
                }
            }
            let g = payoff.value(paths.state(p, paths.steps()), 2).unwrap();
            let oracle = pos.premium + gains - g;
            assert!((y[p] - oracle).abs() < 1e-12 * (1.0 + oracle.abs()));
            assert!((pnl.y[p] - oracle).abs() < 1e-12 * (1.0 + oracle.abs()));
            assert!((pnl.cost[p] - c[p]).abs() < 1e-14);
        }
    }
}

#[test]
fn zero_weights_give_constant_positions() {
    let market = small_market(5);
    let paths = market.simulate(20, 2, Domain::Test, 0);
    for arch in ARCHS {
        let mut policy = build(&market, config(arch, Some(0.2), false), 1);
        policy.zero_weights();
        if !arch.is_recurrent() {
            let id = policy.store().find("initial_position").unwrap();
            policy.store_mut().get_mut(id).data_mut().copy_from_slice(&[0.5, -1.0]);
        }
        let pos = policy.positions(&paths, None).unwrap();
        let first = if arch.is_recurrent() { vec![0.0, 0.0] } else { vec![0.2 * 0.5f64.tanh(), -0.2 * 1.0f64.tanh()] };
        for p in 0..paths.n_paths() {
            for j in 0..paths.steps() {
                assert_eq!(pos.delta(p, j), first.as_slice(), "{arch:?}");
            }
        }
    }
}

#[test]
fn merged_network_sees_time() {
    let dates = vec![0.0, 1.0, 2.0, 3.0];
    let data: Vec<f64> = (0..4).flat_map(|_| [1.0, 1.0]).collect();
    let paths = PathSet::new(dates.clone(), 1, 2, data, 0).unwrap();
    let norm = NormStats::from_parts(4, 2, vec![0.0; 8], vec![1.0; 8]).unwrap();
    let mut cfg = PolicyConfig::new(Architecture::FfMerged);
    cfg.hidden = vec![8];
    let policy = Policy::new(cfg, 1, dates, norm, 0.0, 3).unwrap();
    let pos = policy.positions(&paths, None).unwrap();
    assert_ne!(pos.delta(0, 1), pos.delta(0, 2));
}

#[test]
fn alpha_slot_is_live_only_when_conditioned() {
    let market = small_market(4);
    let paths = market.simulate(10, 2, Domain::Test, 0);
    for arch in ARCHS {
        let conditioned = build(&market, config(arch, Some(0.2), true), 8);
        let a = conditioned.positions(&paths, Some(0.1)).unwrap();
        let b = conditioned.positions(&paths, Some(0.9)).unwrap();
        assert_ne!(a.deltas, b.deltas, "{arch:?}");
        let plain = build(&market, config(arch, Some(0.2), false), 8);
        assert_eq!(plain.positions(&paths, Some(0.1)).unwrap(), plain.positions(&paths, Some(0.9)).unwrap());
    }
}

#[test]
fn checkpoints_round_trip() {
    let market = small_market(4);
    let paths = market.simulate(30, 2, Domain::Test, 0);
    let dir = tempfile::tempdir().unwrap();
    for arch in ARCHS {
        let policy = build(&market, config(arch, Some(0.2), false), 21);
        let file = dir.path().join(format!("{}.ckpt", arch.label()));
        policy.to_checkpoint().write(&file).unwrap();
        let back = Policy::from_checkpoint(&Checkpoint::read(&file).unwrap()).unwrap();
        assert_eq!(back.positions(&paths, None).unwrap(), policy.positions(&paths, None).unwrap());
        assert_eq!(back.premium(), policy.premium());
    }
    let missing = Checkpoint::read(&dir.path().join("absent.ckpt"));
    assert!(matches!(missing, Err(deephedge::Error::MissingArtifact(_))));
}
