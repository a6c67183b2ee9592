//! The global algorithm: mini-batch Adam on the terminal risk criterion over
//! every policy parameter at once, optionally with randomized α for Pareto
//! training.

use std::io::Write;
use std::time::Instant;

use deephedge_autodiff::{Adam, AdamConfig, ParamStore, Tape};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hedge::{payoff_mean, CostModel};
use crate::loss::{loss_value, LossSpec};
use crate::paths::PathSet;
use crate::payoff::Payoff;
use crate::policy::{Batch, Policy, PolicyConfig};
use crate::rng::Domain;
use crate::simulator::Simulator;

/// Paths per tape when scoring the test set.
const TEST_CHUNK: usize = 500;

/// α values averaged into the Pareto test loss.
pub const PARETO_TEST_ALPHAS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParetoMode {
    Off,
    SobolAlpha,
}

fn d_batch() -> usize {
    50
}
fn d_iter() -> usize {
    20_000
}
fn d_eval() -> usize {
    1_000
}
fn d_lr() -> f64 {
    1e-3
}
fn d_test() -> usize {
    10_000
}
fn d_norm() -> usize {
    100_000
}
fn d_pareto() -> ParetoMode {
    ParetoMode::Off
}
fn d_loss() -> LossSpec {
    LossSpec::Mse
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_iter")]
    pub n_iter: usize,
    #[serde(default = "d_eval")]
    pub eval_every: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    /// Set from the experiment's `seeds.train`.
    #[serde(skip)]
    pub seed: u64,
    #[serde(default = "d_loss")]
    pub loss: LossSpec,
    #[serde(default = "d_pareto")]
    pub pareto: ParetoMode,
    #[serde(default = "d_test")]
    pub test_set_size: usize,
    /// Paths used for the normalization statistics and the initial premium.
    #[serde(default = "d_norm")]
    pub norm_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: d_batch(),
            n_iter: d_iter(),
            eval_every: d_eval(),
            lr: d_lr(),
            seed: 0,
            loss: d_loss(),
            pareto: d_pareto(),
            test_set_size: d_test(),
            norm_size: d_norm(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.n_iter == 0 || self.eval_every == 0 {
            return Err(Error::config("batch_size, n_iter and eval_every must be positive"));
        }
        if self.test_set_size == 0 || self.norm_size == 0 {
            return Err(Error::config("test_set_size and norm_size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr must be positive"));
        }
        self.loss.validate()?;
        if self.pareto == ParetoMode::SobolAlpha && !self.loss.needs_costs() {
            return Err(Error::config("Pareto training needs the mean_cost_variance loss"));
        }
        Ok(())
    }
}

/// One evaluation of the test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iter: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub best: bool,
    pub best_test_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub fn best_test_loss(&self) -> Option<f64> {
        self.records.iter().map(|r| r.test_loss).reduce(f64::min)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iter,train_loss,test_loss,best_flag,seconds")?;
        for r in &self.records {
            writeln!(w, "{},{:e},{:e},{},{:.3}", r.iter, r.train_loss, r.test_loss, u8::from(r.best), r.seconds)?;
        }
        Ok(())
    }
}

/// Base-2 radical inverse of `i`, the one-dimensional Sobol sequence.
pub fn sobol_1d(i: u64) -> f64 {
    i.reverse_bits() as f64 / 2f64.powi(64)
}

/// A policy whose normalization statistics and initial premium come from the
/// `Normalization` stream of `seed`.
pub fn init_policy<S: Simulator + ?Sized>(
    config: PolicyConfig,
    sim: &S,
    payoff: &Payoff,
    norm_size: usize,
    seed: u64,
) -> Result<Policy> {
    payoff.validate(sim.n_tradable(), sim.state_dim())?;
    let norm = sim.norm_stats(norm_size, seed, Domain::Normalization)?;
    let mut total = 0.0;
    sim.for_each_block(norm_size, 10_000, seed, Domain::Normalization, &mut |p| {
        total += payoff_mean(p, payoff).unwrap() * p.n_paths() as f64;
    });
    let premium = total / norm_size as f64;
    Policy::new(config, sim.n_tradable(), sim.dates().to_vec(), norm, premium, seed)
}

/// Fixed test set, split into batches once.
struct TestSet {
    batches: Vec<(Option<f64>, Vec<Batch>)>,
}

impl TestSet {
    fn new(policy: &Policy, paths: PathSet, payoff: &Payoff, alphas: &[Option<f64>]) -> Result<Self> {
        let n = paths.n_paths();
        let chunks: Vec<PathSet> = (0..n).step_by(TEST_CHUNK).map(|s| paths.slice(s, TEST_CHUNK.min(n - s))).collect();
        let batches = alphas
            .iter()
            .map(|&a| {
                let b = chunks.iter().map(|c| policy.batch(c, payoff, a)).collect::<Result<Vec<_>>>()?;
                Ok((a, b))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TestSet { batches })
    }

    fn loss(&self, policy: &Policy, loss: &LossSpec, costs: &CostModel, pareto: bool) -> Result<f64> {
        let mut total = 0.0;
        for (alpha, batches) in &self.batches {
            let mut y = Vec::new();
            let mut c = Vec::new();
            let mut tape = Tape::new();
            for batch in batches {
                tape.clear();
                let bound = policy.store().bind(&mut tape);
                let out = policy.forward(&mut tape, &bound, batch, loss.needs_costs().then_some(costs))?;
                y.extend_from_slice(tape.value(out.error).data());
                if let Some(cv) = out.cost {
                    c.extend_from_slice(tape.value(cv).data());
                }
            }
            let spec = match (pareto, alpha) {
                (true, Some(a)) => loss.with_alpha(*a),
                _ => *loss,
            };
            total += loss_value(&spec, &y, loss.needs_costs().then_some(c.as_slice()))?;
        }
        Ok(total / self.batches.len() as f64)
    }
}

fn alpha_of(loss: &LossSpec) -> Option<f64> {
    match *loss {
        LossSpec::Mse => None,
        LossSpec::Asym { alpha } | LossSpec::M2m4 { alpha } | LossSpec::MeanCostVariance { alpha } => Some(alpha),
    }
}

/// Trains `policy` and returns it at its best test-set checkpoint.
pub fn train_global<S: Simulator + ?Sized>(
    policy: Policy,
    sim: &S,
    payoff: &Payoff,
    costs: &CostModel,
    cfg: &TrainConfig,
) -> Result<(Policy, TrainLog)> {
    train_global_with(policy, sim, payoff, costs, cfg, |_| {})
}

/// As [`train_global`], calling `on_eval` after every test-set evaluation.
pub fn train_global_with<S: Simulator + ?Sized>(
    mut policy: Policy,
    sim: &S,
    payoff: &Payoff,
    costs: &CostModel,
    cfg: &TrainConfig,
    mut on_eval: impl FnMut(&TrainRecord),
) -> Result<(Policy, TrainLog)> {
    cfg.validate()?;
    costs.validate(policy.n_assets())?;
    payoff.validate(sim.n_tradable(), sim.state_dim())?;
    let pareto = cfg.pareto == ParetoMode::SobolAlpha;
    let conditioned = policy.config().alpha_conditioned;
    if pareto && !conditioned {
        return Err(Error::config("Pareto training needs an α-conditioned policy"));
    }
    let fixed_alpha = if conditioned && !pareto {
        Some(alpha_of(&cfg.loss).ok_or_else(|| Error::config("α-conditioned policy with a loss that has no α"))?)
    } else {
        None
    };
    let test_alphas: Vec<Option<f64>> =
        if pareto { PARETO_TEST_ALPHAS.iter().map(|&a| Some(a)).collect() } else { vec![fixed_alpha] };
    let test_paths = sim.simulate(cfg.test_set_size, cfg.seed, Domain::Test, 0);
    let test = TestSet::new(&policy, test_paths, payoff, &test_alphas)?;

    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), policy.store());
    let mut best: Option<(f64, ParamStore)> = None;
    let mut log = TrainLog::default();
    let mut tape = Tape::new();
    let start = Instant::now();
    for iter in 0..cfg.n_iter {
        let paths = sim.simulate(cfg.batch_size, cfg.seed, Domain::Train, (iter * cfg.batch_size) as u64);
        let (alpha, loss) = if pareto {
            let a = sobol_1d(iter as u64);
            (Some(a), cfg.loss.with_alpha(a))
        } else {
            (fixed_alpha, cfg.loss)
        };
        let batch = policy.batch(&paths, payoff, alpha)?;
        tape.clear();
        let bound = policy.store().bind(&mut tape);
        let (root, _) = policy.objective(&mut tape, &bound, &batch, &loss, costs)?;
        let train_loss = tape.value(root).data()[0];
        if !train_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite training loss at iteration {iter}; parameter norm {:e}",
                policy.store().norm()
            )));
        }
        let grads = tape.backward(root)?;
        let grads = policy.store().grads(&bound, &grads);
        adam.step(policy.store_mut(), &grads)?;

        let done = iter + 1;
        if done % cfg.eval_every == 0 || done == cfg.n_iter {
            let test_loss = test.loss(&policy, &cfg.loss, costs, pareto)?;
            if !test_loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite test loss at iteration {done}; parameter norm {:e}",
                    policy.store().norm()
                )));
            }
            let improved = best.as_ref().map_or(true, |(b, _)| test_loss < *b);
            if improved {
                best = Some((test_loss, policy.store().clone()));
            }
            let record = TrainRecord {
                iter: done,
                train_loss,
                test_loss,
                best: improved,
                best_test_loss: best.as_ref().unwrap().0,
                seconds: start.elapsed().as_secs_f64(),
            };
            on_eval(&record);
            log.records.push(record);
        }
    }
    if let Some((_, store)) = best {
        *policy.store_mut() = store;
    }
    Ok((policy, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radical_inverse_fills_the_unit_interval() {
        let first: Vec<f64> = (0..8).map(sobol_1d).collect();
        assert_eq!(first, vec![0.0, 0.5, 0.25, 0.75, 0.125, 0.625, 0.375, 0.875]);
    }

    #[test]
    fn pareto_requires_the_cost_loss() {
        let cfg = TrainConfig { pareto: ParetoMode::SobolAlpha, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            pareto: ParetoMode::SobolAlpha,
            loss: LossSpec::MeanCostVariance { alpha: 0.5 },
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_ok());
    }
}
