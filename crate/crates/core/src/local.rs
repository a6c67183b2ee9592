//! Local (dynamic-programming) hedging algorithms: one small network per
//! date, trained backward from maturity on one-step quadratic problems.
//!
//! The network at date `t_j` reads the normalized state and the normalized
//! position held on entry, `x = ψ_j(Δ_{j-1})`, and emits a value `V̂_j` and a
//! command `Ĉ_j`; the new position is `ψ_j^{-1}(x) + l ⊙ tanh(Ĉ_j)`.

use std::fs;
use std::path::Path;

use deephedge_autodiff::{Activation, Adam, AdamConfig, Bound, DenseStack, ParamStore, Tape, Tensor, Var};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::hedge::{terminal_pnl, CostModel, HedgingStrategy, Positions};
use crate::loss::{loss_value, LossSpec};
use crate::paths::{NormStats, PathSet};
use crate::payoff::Payoff;
use crate::rng::{domain_key, substream, Domain};
use crate::simulator::Simulator;

/// Stream offset reserved for the final-step sample of each run.
const FINAL_STREAM: u64 = 1 << 60;
const EVAL_CHUNK: usize = 1024;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalAlgorithm {
    /// Martingale case: the next-date value network replaces the tail.
    #[default]
    Algo1,
    /// The tail of the strategy is resimulated through the frozen networks.
    Algo2,
}

impl LocalAlgorithm {
    pub fn label(self) -> &'static str {
        match self {
            LocalAlgorithm::Algo1 => "local_algo1",
            LocalAlgorithm::Algo2 => "local_algo2",
        }
    }
}

fn d_hidden() -> Vec<usize> {
    vec![12, 12, 12]
}
fn d_batch() -> usize {
    2000
}
fn d_lr() -> f64 {
    1e-3
}
fn d_grid() -> usize {
    21
}
fn d_final() -> usize {
    20_000
}
fn d_restarts() -> usize {
    3
}
fn d_runs() -> usize {
    10
}
fn d_norm() -> usize {
    100_000
}
fn d_low() -> usize {
    5_000
}
fn d_high() -> usize {
    25_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalConfig {
    /// Chosen by the experiment's `training.algorithm`.
    #[serde(skip)]
    pub algorithm: LocalAlgorithm,
    #[serde(default = "d_hidden")]
    pub hidden: Vec<usize>,
    /// Adam iterations per date; derived from the problem dimension when absent.
    #[serde(default)]
    pub iterations: Option<usize>,
    /// Budget for problems of dimension at most 4.
    #[serde(default = "d_low")]
    pub iterations_low_dim: usize,
    /// Budget for problems of dimension 5 and above.
    #[serde(default = "d_high")]
    pub iterations_high_dim: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    /// Grid points per asset for the initial position.
    #[serde(default = "d_grid")]
    pub grid_points: usize,
    /// Paths used by the final `(p, Δ_0)` solve.
    #[serde(default = "d_final")]
    pub final_paths: usize,
    /// Fresh initializations allowed per date after a non-finite loss.
    #[serde(default = "d_restarts")]
    pub restarts: usize,
    /// Independent runs; the best one on the evaluation set is kept.
    #[serde(default = "d_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_norm")]
    pub norm_size: usize,
}

impl LocalConfig {
    pub fn new(algorithm: LocalAlgorithm) -> Self {
        LocalConfig {
            algorithm,
            hidden: d_hidden(),
            iterations: None,
            iterations_low_dim: d_low(),
            iterations_high_dim: d_high(),
            batch_size: d_batch(),
            lr: d_lr(),
            grid_points: d_grid(),
            final_paths: d_final(),
            restarts: d_restarts(),
            runs: d_runs(),
            seed: 0,
            norm_size: d_norm(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("local networks need positive hidden widths"));
        }
        if self.batch_size == 0 || self.final_paths == 0 || self.runs == 0 || self.norm_size == 0 {
            return Err(Error::config("batch_size, final_paths, runs and norm_size must be positive"));
        }
        if self.grid_points < 2 {
            return Err(Error::config("grid_points must be at least 2"));
        }
        if self.iterations == Some(0) || self.iterations_low_dim == 0 || self.iterations_high_dim == 0 {
            return Err(Error::config("iteration budgets must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr must be positive"));
        }
        Ok(())
    }

    /// Adam iterations per date for a problem with `dimension` random inputs
    /// (stochastic state components plus positions).
    pub fn iterations_for(&self, dimension: usize) -> usize {
        if let Some(n) = self.iterations {
            return n;
        }
        if dimension <= 4 {
            self.iterations_low_dim
        } else {
            self.iterations_high_dim
        }
    }
}

/// Normalizer `ψ_j` of the position held on entry to date `j`, with bounds
/// `±j·l` (the reachable envelope).
#[derive(Clone, Debug, PartialEq)]
pub struct PositionNormalizer {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl PositionNormalizer {
    pub fn for_date(j: usize, liquidity: &[f64]) -> Self {
        let reach = j.max(1) as f64;
        PositionNormalizer {
            lower: liquidity.iter().map(|l| -reach * l).collect(),
            upper: liquidity.iter().map(|l| reach * l).collect(),
        }
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn normalize(&self, i: usize, delta: f64) -> f64 {
        (delta - self.lower[i]) / (self.upper[i] - self.lower[i])
    }

    pub fn denormalize(&self, i: usize, x: f64) -> f64 {
        self.lower[i] + x * (self.upper[i] - self.lower[i])
    }
}

/// Affine map from the raw value output to payoff units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueScale {
    pub offset: f64,
    pub scale: f64,
}

impl ValueScale {
    /// Mean and standard deviation of the payoff over the normalization
    /// sample; a constant payoff gets unit scale.
    fn of_payoff<S: Simulator + ?Sized>(sim: &S, payoff: &Payoff, n: usize, seed: u64) -> Self {
        let (mut sum, mut sq) = (0.0, 0.0);
        let d = sim.n_tradable();
        sim.for_each_block(n, 10_000, seed, Domain::Normalization, &mut |p| {
            for k in 0..p.n_paths() {
                let g = payoff.value_unchecked(p.state(k, p.steps()), d);
                sum += g;
                sq += g * g;
            }
        });
        let mean = sum / n as f64;
        let std = (sq / n as f64 - mean * mean).max(0.0).sqrt();
        ValueScale { offset: mean, scale: if std > 0.0 { std } else { 1.0 } }
    }
}

/// Network of one date with its own parameters.
#[derive(Clone, Debug)]
struct DateNet {
    store: ParamStore,
    net: DenseStack,
    value: ValueScale,
}

impl DateNet {
    fn new(inputs: usize, hidden: &[usize], outputs: usize, value: ValueScale, seed: u64, index: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut widths = vec![inputs];
        widths.extend_from_slice(hidden);
        widths.push(outputs);
        let mut rng = substream(seed, Domain::Init, index);
        let net = DenseStack::new(&mut store, "net", &widths, Activation::Elu, Activation::Identity, &mut rng)?;
        Ok(DateNet { store, net, value })
    }

    fn freeze(&mut self) {
        for id in self.store.ids().collect::<Vec<_>>() {
            self.store.set_trainable(id, false);
        }
    }

    fn checksum(&self) -> u64 {
        self.store
            .iter()
            .flat_map(|(_, t, _)| t.data().iter())
            .fold(0xcbf2_9ce4_8422_2325u64, |h, v| (h ^ v.to_bits()).wrapping_mul(0x100_0000_01b3))
    }

    /// `(V̂, Ĉ)` for normalized states `s` and normalized positions `x`.
    fn outputs(&self, tape: &mut Tape, bound: &Bound, s: Var, x: Var, d: usize) -> Result<(Var, Var)> {
        let input = tape.concat_cols(&[s, x])?;
        let out = self.net.forward(tape, bound, input)?;
        let v = tape.slice_cols(out, 0, 1)?;
        let v = tape.scale(v, self.value.scale)?;
        let v = tape.add_const(v, self.value.offset)?;
        let c = tape.slice_cols(out, 1, d)?;
        Ok((v, c))
    }
}

/// Everything both algorithms share for one training run.
struct Problem<'a, S: Simulator + ?Sized> {
    sim: &'a S,
    payoff: &'a Payoff,
    liquidity: Vec<f64>,
    norm: NormStats,
    value: ValueScale,
    cfg: &'a LocalConfig,
    d: usize,
    dim: usize,
    steps: usize,
}

impl<'a, S: Simulator + ?Sized> Problem<'a, S> {
    fn normalized(&self, j: usize, states: &[f64]) -> Result<Tensor> {
        let n = states.len() / self.dim;
        let mut out = vec![0.0; states.len()];
        for (src, dst) in states.chunks_exact(self.dim).zip(out.chunks_exact_mut(self.dim)) {
            self.norm.normalize(j, src, dst);
        }
        Ok(Tensor::matrix(n, self.dim, out)?)
    }

    fn path_states(&self, paths: &PathSet, j: usize) -> Vec<f64> {
        (0..paths.n_paths()).flat_map(|p| paths.state(p, j).to_vec()).collect()
    }

    fn price_moves(&self, paths: &PathSet, j: usize) -> Tensor {
        let data = (0..paths.n_paths())
            .flat_map(|p| {
                let (a, b) = (paths.prices(p, j), paths.prices(p, j + 1));
                b.iter().zip(a).map(|(x, y)| x - y).collect::<Vec<_>>()
            })
            .collect();
        Tensor::matrix(paths.n_paths(), self.d, data).unwrap()
    }

    fn payoffs(&self, paths: &PathSet) -> Tensor {
        let data =
            (0..paths.n_paths()).map(|p| self.payoff.value_unchecked(paths.state(p, self.steps), self.d)).collect();
        Tensor::matrix(paths.n_paths(), 1, data).unwrap()
    }

    /// `ψ_k(Δ)` on the tape for a `[n, d]` position.
    fn psi(&self, tape: &mut Tape, k: usize, delta: Var) -> Result<Var> {
        let norm = PositionNormalizer::for_date(k, &self.liquidity);
        let factors: Vec<f64> = (0..self.d).map(|i| 1.0 / (norm.upper[i] - norm.lower[i])).collect();
        let scaled = tape.scale_cols(delta, &factors)?;
        Ok(tape.add_const(scaled, 0.5)?)
    }

    /// `Δ_{k-1} + l ⊙ tanh(Ĉ_k)` through a frozen net.
    fn roll(&self, tape: &mut Tape, k: usize, net: &DateNet, bound: &Bound, s: Var, prev: Var) -> Result<Var> {
        let x = self.psi(tape, k, prev)?;
        let (_, c) = net.outputs(tape, bound, s, x, self.d)?;
        let t = tape.tanh(c)?;
        let inc = tape.scale_cols(t, &self.liquidity)?;
        Ok(tape.add(prev, inc)?)
    }

    /// Uniform positions `x` and their preimages `ψ_j^{-1}(x)`, both `[n, d]`.
    fn sample_positions(&self, j: usize, n: usize, rng: &mut impl Rng) -> (Tensor, Tensor) {
        let norm = PositionNormalizer::for_date(j, &self.liquidity);
        let mut x = Vec::with_capacity(n * self.d);
        let mut base = Vec::with_capacity(n * self.d);
        for _ in 0..n {
            for i in 0..self.d {
                let u: f64 = rng.random();
                x.push(u);
                base.push(norm.denormalize(i, u));
            }
        }
        (Tensor::matrix(n, self.d, x).unwrap(), Tensor::matrix(n, self.d, base).unwrap())
    }

    /// One Adam solve at date `j`; `nets[k]` for `k > j` are frozen.
    fn train_date(&self, j: usize, nets: &[Option<DateNet>], run_seed: u64, attempt: u64) -> Result<Option<DateNet>> {
        let iters = self.cfg.iterations_for(self.problem_dimension());
        let index = (j as u64) * 1000 + attempt;
        let mut net = DateNet::new(self.dim + self.d, &self.cfg.hidden, self.d + 1, self.value, run_seed, index)?;
        let mut adam = Adam::new(AdamConfig::with_lr(self.cfg.lr), &net.store);
        let mut tape = Tape::new();
        for it in 0..iters {
            let stream = ((j as u64) << 40) | ((attempt) << 32) | it as u64;
            let mut rng = substream(run_seed, Domain::Local, stream);
            tape.clear();
            let bound = net.store.bind(&mut tape);
            let residual = match self.cfg.algorithm {
                LocalAlgorithm::Algo1 => self.algo1_residual(&mut tape, &bound, &net, j, nets, &mut rng)?,
                LocalAlgorithm::Algo2 => self.algo2_residual(&mut tape, &bound, &net, j, nets, &mut rng)?,
            };
            let sq = tape.square(residual)?;
            let loss = tape.mean(sq)?;
            if !tape.value(loss).data()[0].is_finite() {
                return Ok(None);
            }
            let grads = tape.backward(loss)?;
            let grads = net.store.grads(&bound, &grads);
            adam.step(&mut net.store, &grads)?;
        }
        net.freeze();
        Ok(Some(net))
    }

    fn problem_dimension(&self) -> usize {
        let stochastic = (0..self.dim).filter(|&k| (1..=self.steps).any(|j| !self.norm.is_constant(j, k))).count();
        stochastic + self.d
    }

    /// `U_{j+1}(S_{j+1}, ψ_{j+1}(φ_j)) - φ_j·ΔF - V̂_j` on fresh pairs.
    fn algo1_residual(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        net: &DateNet,
        j: usize,
        nets: &[Option<DateNet>],
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<Var> {
        let n = self.cfg.batch_size;
        let mut now = vec![0.0; n * self.dim];
        let mut next = vec![0.0; n * self.dim];
        for k in 0..n {
            self.sim.fill_pair(
                j,
                rng,
                &mut now[k * self.dim..(k + 1) * self.dim],
                &mut next[k * self.dim..(k + 1) * self.dim],
            );
        }
        let (x, base) = self.sample_positions(j, n, rng);
        let s = tape.constant(self.normalized(j, &now)?);
        let xv = tape.constant(x);
        let (v, c) = net.outputs(tape, bound, s, xv, self.d)?;
        let t = tape.tanh(c)?;
        let inc = tape.scale_cols(t, &self.liquidity)?;
        let basev = tape.constant(base);
        let phi = tape.add(basev, inc)?;
        let moves: Vec<f64> = now
            .chunks_exact(self.dim)
            .zip(next.chunks_exact(self.dim))
            .flat_map(|(a, b)| (0..self.d).map(move |i| b[i] - a[i]))
            .collect();
        let moves = tape.constant(Tensor::matrix(n, self.d, moves)?);
        let hedge = tape.mul(phi, moves)?;
        let hedge = tape.sum_cols(hedge)?;
        let target = if j + 1 == self.steps {
            let g: Vec<f64> = next.chunks_exact(self.dim).map(|s| self.payoff.value_unchecked(s, self.d)).collect();
            tape.constant(Tensor::matrix(n, 1, g)?)
        } else {
            let later = nets[j + 1].as_ref().expect("later dates are trained first");
            let lb = later.store.bind(tape);
            let s1 = tape.constant(self.normalized(j + 1, &next)?);
            let x1 = self.psi(tape, j + 1, phi)?;
            later.outputs(tape, &lb, s1, x1, self.d)?.0
        };
        let r = tape.sub(target, hedge)?;
        Ok(tape.sub(r, v)?)
    }

    /// `g(S_T) - Σ_{k≥j} Δ_k·ΔF_k - V̂_j` with the tail rolled through frozen nets.
    fn algo2_residual(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        net: &DateNet,
        j: usize,
        nets: &[Option<DateNet>],
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<Var> {
        let n = self.cfg.batch_size;
        let stride = (self.steps + 1) * self.dim;
        let mut data = vec![0.0; n * stride];
        for row in data.chunks_exact_mut(stride) {
            self.sim.fill_path(rng, row);
        }
        let paths = PathSet::new(self.sim.dates().to_vec(), self.d, self.dim, data, 0)?;
        let (x, base) = self.sample_positions(j, n, rng);
        let s = tape.constant(self.normalized(j, &self.path_states(&paths, j))?);
        let xv = tape.constant(x);
        let (v, c) = net.outputs(tape, bound, s, xv, self.d)?;
        let t = tape.tanh(c)?;
        let inc = tape.scale_cols(t, &self.liquidity)?;
        let basev = tape.constant(base);
        let mut delta = tape.add(basev, inc)?;
        let moves = tape.constant(self.price_moves(&paths, j));
        let gain = tape.mul(delta, moves)?;
        let mut gains = tape.sum_cols(gain)?;
        for k in j + 1..self.steps {
            let later = nets[k].as_ref().expect("later dates are trained first");
            let lb = later.store.bind(tape);
            let sk = tape.constant(self.normalized(k, &self.path_states(&paths, k))?);
            delta = self.roll(tape, k, later, &lb, sk, delta)?;
            let moves = tape.constant(self.price_moves(&paths, k));
            let gain = tape.mul(delta, moves)?;
            let gain = tape.sum_cols(gain)?;
            gains = tape.add(gains, gain)?;
        }
        let g = tape.constant(self.payoffs(&paths));
        let r = tape.sub(g, gains)?;
        Ok(tape.sub(r, v)?)
    }

    /// Grid search over `Δ_0 ∈ [-l, l]^d` with the premium in closed form.
    fn final_step(&self, nets: &[Option<DateNet>], run_seed: u64) -> Result<(f64, Vec<f64>)> {
        let paths = self.sim.simulate(self.cfg.final_paths, run_seed, Domain::Local, FINAL_STREAM);
        let grid = initial_grid(&self.liquidity, self.cfg.grid_points);
        let d = self.d;
        let algorithm = self.cfg.algorithm;
        let scores = grid
            .par_iter()
            .map(|delta0| -> Result<(f64, f64)> {
                let residual = match algorithm {
                    LocalAlgorithm::Algo1 => self.algo1_final_residual(&paths, nets, delta0)?,
                    LocalAlgorithm::Algo2 => {
                        let strategy = self.assemble(nets, delta0.clone(), 0.0);
                        let pos = strategy.positions(&paths, None)?;
                        let pnl = terminal_pnl(&paths, &pos, self.payoff, &CostModel::free(d))?;
                        pnl.y.iter().map(|y| -y).collect()
                    }
                };
                Ok(mean_and_variance(&residual))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut best = 0;
        for (k, s) in scores.iter().enumerate() {
            if s.1 < scores[best].1 {
                best = k;
            }
        }
        Ok((scores[best].0, grid[best].clone()))
    }

    /// `U_1(S_1, ψ_1(Δ_0)) - Δ_0·(F_1 - F_0)`.
    fn algo1_final_residual(&self, paths: &PathSet, nets: &[Option<DateNet>], delta0: &[f64]) -> Result<Vec<f64>> {
        let n = paths.n_paths();
        let mut out = Vec::with_capacity(n);
        for start in (0..n).step_by(EVAL_CHUNK) {
            let chunk = paths.slice(start, EVAL_CHUNK.min(n - start));
            let m = chunk.n_paths();
            let u: Vec<f64> = if self.steps == 1 {
                (0..m).map(|p| self.payoff.value_unchecked(chunk.state(p, 1), self.d)).collect()
            } else {
                let net = nets[1].as_ref().expect("date 1 is trained");
                let mut tape = Tape::new();
                let bound = net.store.bind(&mut tape);
                let s = tape.constant(self.normalized(1, &self.path_states(&chunk, 1))?);
                let norm = PositionNormalizer::for_date(1, &self.liquidity);
                let x: Vec<f64> = (0..m).flat_map(|_| (0..self.d).map(|i| norm.normalize(i, delta0[i]))).collect();
                let x = tape.constant(Tensor::matrix(m, self.d, x)?);
                let (v, _) = net.outputs(&mut tape, &bound, s, x, self.d)?;
                tape.value(v).data().to_vec()
            };
            for p in 0..m {
                let (a, b) = (chunk.prices(p, 0), chunk.prices(p, 1));
                let hedge: f64 = (0..self.d).map(|i| delta0[i] * (b[i] - a[i])).sum();
                out.push(u[p] - hedge);
            }
        }
        Ok(out)
    }

    fn assemble(&self, nets: &[Option<DateNet>], delta0: Vec<f64>, premium: f64) -> LocalStrategy {
        LocalStrategy {
            algorithm: self.cfg.algorithm,
            liquidity: self.liquidity.clone(),
            dates: self.sim.dates().to_vec(),
            norm: self.norm.clone(),
            hidden: self.cfg.hidden.clone(),
            nets: nets.to_vec(),
            delta0,
            premium,
        }
    }
}

fn mean_and_variance(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Points of `[-l, l]^d`, `points` per axis, ordered by distance to 0 so that
/// ties resolve to the smallest initial position.
pub fn initial_grid(liquidity: &[f64], points: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = (0..points).map(|k| -1.0 + 2.0 * k as f64 / (points - 1) as f64).collect();
    let mut grid: Vec<Vec<f64>> = vec![vec![]];
    for l in liquidity {
        grid = grid
            .into_iter()
            .flat_map(|g| {
                axis.iter().map(move |a| {
                    let mut next = g.clone();
                    next.push(l * a);
                    next
                })
            })
            .collect();
    }
    grid.sort_by(|a, b| {
        let na: f64 = a.iter().map(|v| v * v).sum();
        let nb: f64 = b.iter().map(|v| v * v).sum();
        na.total_cmp(&nb)
    });
    grid
}

/// A trained local strategy: frozen per-date networks plus `(p, Δ_0)`.
#[derive(Clone, Debug)]
pub struct LocalStrategy {
    algorithm: LocalAlgorithm,
    liquidity: Vec<f64>,
    dates: Vec<f64>,
    norm: NormStats,
    hidden: Vec<usize>,
    nets: Vec<Option<DateNet>>,
    delta0: Vec<f64>,
    premium: f64,
}

impl LocalStrategy {
    pub fn algorithm(&self) -> LocalAlgorithm {
        self.algorithm
    }

    pub fn premium(&self) -> f64 {
        self.premium
    }

    pub fn initial_position(&self) -> &[f64] {
        &self.delta0
    }

    pub fn liquidity(&self) -> &[f64] {
        &self.liquidity
    }

    /// Value estimate `V̂_j` at date `j ≥ 1` for raw states and entry positions.
    pub fn value(&self, j: usize, states: &[f64], entry: &[f64]) -> Result<Vec<f64>> {
        let dim = self.norm.dim();
        let d = self.liquidity.len();
        let net = self
            .nets
            .get(j)
            .and_then(|n| n.as_ref())
            .ok_or_else(|| Error::config(format!("no network at date {j}")))?;
        let n = states.len() / dim;
        let mut s = vec![0.0; states.len()];
        for (src, dst) in states.chunks_exact(dim).zip(s.chunks_exact_mut(dim)) {
            self.norm.normalize(j, src, dst);
        }
        let norm = PositionNormalizer::for_date(j, &self.liquidity);
        let x: Vec<f64> =
            entry.chunks_exact(d).flat_map(|e| (0..d).map(|i| norm.normalize(i, e[i])).collect::<Vec<_>>()).collect();
        let mut tape = Tape::new();
        let bound = net.store.bind(&mut tape);
        let sv = tape.constant(Tensor::matrix(n, dim, s)?);
        let xv = tape.constant(Tensor::matrix(n, d, x)?);
        let (v, _) = net.outputs(&mut tape, &bound, sv, xv, d)?;
        Ok(tape.value(v).data().to_vec())
    }

    /// Fingerprint of every frozen network, for immutability checks.
    pub fn checksums(&self) -> Vec<Option<u64>> {
        self.nets.iter().map(|n| n.as_ref().map(DateNet::checksum)).collect()
    }

    fn chunk_positions(&self, paths: &PathSet) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = paths.n_paths();
        let d = self.liquidity.len();
        let dim = self.norm.dim();
        let steps = self.dates.len() - 1;
        let mut deltas = vec![0.0; n * steps * d];
        let mut increments = vec![0.0; n * steps * d];
        let mut current: Vec<f64> = (0..n).flat_map(|_| self.delta0.clone()).collect();
        for p in 0..n {
            let at = p * steps * d;
            deltas[at..at + d].copy_from_slice(&self.delta0);
            increments[at..at + d].copy_from_slice(&self.delta0);
        }
        let mut tape = Tape::new();
        for j in 1..steps {
            let net = self.nets[j].as_ref().expect("every intermediate date has a network");
            tape.clear();
            let bound = net.store.bind(&mut tape);
            let mut s = vec![0.0; n * dim];
            for p in 0..n {
                self.norm.normalize(j, paths.state(p, j), &mut s[p * dim..(p + 1) * dim]);
            }
            let norm = PositionNormalizer::for_date(j, &self.liquidity);
            let x: Vec<f64> = current
                .chunks_exact(d)
                .flat_map(|e| (0..d).map(|i| norm.normalize(i, e[i])).collect::<Vec<_>>())
                .collect();
            let sv = tape.constant(Tensor::matrix(n, dim, s)?);
            let xv = tape.constant(Tensor::matrix(n, d, x)?);
            let (_, c) = net.outputs(&mut tape, &bound, sv, xv, d)?;
            let t = tape.tanh(c)?;
            let inc = tape.scale_cols(t, &self.liquidity)?;
            let inc = tape.value(inc).data();
            for p in 0..n {
                for i in 0..d {
                    let k = (p * steps + j) * d + i;
                    increments[k] = inc[p * d + i];
                    current[p * d + i] += inc[p * d + i];
                    deltas[k] = current[p * d + i];
                }
            }
        }
        Ok((deltas, increments))
    }

    /// Writes one checkpoint per date plus `final.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (j, net) in self.nets.iter().enumerate() {
            if let Some(net) = net {
                let meta = serde_json::json!({"kind": "local_date", "date_index": j});
                Checkpoint::from_store(&net.store, meta).write(&dir.join(format!("date{j:03}.ckpt")))?;
            }
        }
        let summary = serde_json::json!({
            "kind": "local_strategy",
            "algorithm": self.algorithm,
            "liquidity": self.liquidity,
            "dates": self.dates,
            "norm_mean": self.norm.means(),
            "norm_std": self.norm.stds(),
            "hidden": self.hidden,
            "value_scale": self.nets.iter().flatten().next().map(|n| n.value),
            "initial_position": self.delta0,
            "premium": self.premium,
        });
        fs::write(dir.join("final.json"), serde_json::to_vec_pretty(&summary)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Summary {
            kind: String,
            algorithm: LocalAlgorithm,
            liquidity: Vec<f64>,
            dates: Vec<f64>,
            norm_mean: Vec<f64>,
            norm_std: Vec<f64>,
            hidden: Vec<usize>,
            value_scale: Option<ValueScale>,
            initial_position: Vec<f64>,
            premium: f64,
        }
        let file = dir.join("final.json");
        if !file.exists() {
            return Err(Error::MissingArtifact(file));
        }
        let s: Summary = serde_json::from_slice(&fs::read(&file)?)?;
        if s.kind != "local_strategy" {
            return Err(Error::format("local strategy", format!("unexpected kind {:?}", s.kind)));
        }
        let n_dates = s.dates.len();
        let dim = s.norm_mean.len() / n_dates.max(1);
        let norm = NormStats::from_parts(n_dates, dim, s.norm_mean, s.norm_std)?;
        let d = s.liquidity.len();
        let mut nets = vec![None; n_dates - 1];
        let value = s.value_scale.unwrap_or(ValueScale { offset: 0.0, scale: 1.0 });
        for (j, slot) in nets.iter_mut().enumerate().skip(1) {
            let mut net = DateNet::new(dim + d, &s.hidden, d + 1, value, 0, 0)?;
            Checkpoint::read(&dir.join(format!("date{j:03}.ckpt")))?.restore_into(&mut net.store)?;
            *slot = Some(net);
        }
        Ok(LocalStrategy {
            algorithm: s.algorithm,
            liquidity: s.liquidity,
            dates: s.dates,
            norm,
            hidden: s.hidden,
            nets,
            delta0: s.initial_position,
            premium: s.premium,
        })
    }
}

impl HedgingStrategy for LocalStrategy {
    fn name(&self) -> String {
        self.algorithm.label().to_string()
    }

    fn n_assets(&self) -> usize {
        self.liquidity.len()
    }

    fn positions(&self, paths: &PathSet, _alpha: Option<f64>) -> Result<Positions> {
        if paths.dates() != self.dates.as_slice() || paths.dim() != self.norm.dim() {
            return Err(Error::config("paths do not match the strategy's dates or state dimension"));
        }
        let n = paths.n_paths();
        let parts = (0..n)
            .step_by(EVAL_CHUNK)
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&s| self.chunk_positions(&paths.slice(s, EVAL_CHUNK.min(n - s))))
            .collect::<Result<Vec<_>>>()?;
        let mut deltas = Vec::new();
        let mut increments = Vec::new();
        for (a, b) in parts {
            deltas.extend(a);
            increments.extend(b);
        }
        Ok(Positions {
            n_paths: n,
            steps: self.dates.len() - 1,
            n_assets: self.liquidity.len(),
            deltas,
            increments,
            premium: self.premium,
        })
    }
}

/// Seed of run `run` derived from the configured seed.
pub fn run_seed(seed: u64, run: usize) -> u64 {
    domain_key(seed, Domain::Local) ^ (run as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// One backward sweep followed by the final `(p, Δ_0)` solve.
pub fn train_local<S: Simulator + ?Sized>(
    sim: &S,
    payoff: &Payoff,
    liquidity: &[f64],
    cfg: &LocalConfig,
    run: usize,
) -> Result<LocalStrategy> {
    cfg.validate()?;
    let d = sim.n_tradable();
    let dim = sim.state_dim();
    payoff.validate(d, dim)?;
    if liquidity.len() != d || liquidity.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(Error::config("local algorithms need a finite positive liquidity per asset"));
    }
    if cfg.algorithm == LocalAlgorithm::Algo1 && !sim.is_martingale() {
        return Err(Error::config("the first local algorithm assumes martingale prices"));
    }
    let seed = run_seed(cfg.seed, run);
    let problem = Problem {
        sim,
        payoff,
        liquidity: liquidity.to_vec(),
        norm: sim.norm_stats(cfg.norm_size, cfg.seed, Domain::Normalization)?,
        value: ValueScale::of_payoff(sim, payoff, cfg.norm_size, cfg.seed),
        cfg,
        d,
        dim,
        steps: sim.steps(),
    };
    let mut nets: Vec<Option<DateNet>> = vec![None; problem.steps];
    for j in (1..problem.steps).rev() {
        let mut trained = None;
        for attempt in 0..=cfg.restarts {
            if let Some(net) = problem.train_date(j, &nets, seed, attempt as u64)? {
                trained = Some(net);
                break;
            }
        }
        nets[j] = Some(trained.ok_or_else(|| {
            Error::Numerical(format!("local step at date {j} diverged after {} restarts", cfg.restarts))
        })?);
    }
    let (premium, delta0) = problem.final_step(&nets, seed)?;
    Ok(problem.assemble(&nets, delta0, premium))
}

/// Scores of independent runs on a common evaluation set.
#[derive(Clone, Debug)]
pub struct LocalRuns {
    pub scores: Vec<f64>,
    pub best: LocalStrategy,
    pub best_run: usize,
}

impl LocalRuns {
    pub fn min(&self) -> f64 {
        self.scores.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn median(&self) -> f64 {
        let mut s = self.scores.clone();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        if n % 2 == 1 {
            s[n / 2]
        } else {
            0.5 * (s[n / 2 - 1] + s[n / 2])
        }
    }
}

/// Runs `cfg.runs` independent trainings and keeps the one with the lowest
/// MSE on `eval`. `on_run` sees each run index and score as it finishes.
pub fn train_local_runs<S: Simulator + ?Sized>(
    sim: &S,
    payoff: &Payoff,
    liquidity: &[f64],
    cfg: &LocalConfig,
    eval: &PathSet,
    mut on_run: impl FnMut(usize, f64),
) -> Result<LocalRuns> {
    let mut scores = Vec::with_capacity(cfg.runs);
    let mut best: Option<(usize, LocalStrategy)> = None;
    for run in 0..cfg.runs {
        let strategy = train_local(sim, payoff, liquidity, cfg, run)?;
        let pos = strategy.positions(eval, None)?;
        let pnl = terminal_pnl(eval, &pos, payoff, &CostModel::free(sim.n_tradable()))?;
        let mse = loss_value(&LossSpec::Mse, &pnl.y, None)?;
        on_run(run, mse);
        if best.as_ref().map_or(true, |_| scores.iter().all(|&s: &f64| mse < s)) {
            best = Some((run, strategy));
        }
        scores.push(mse);
    }
    let (best_run, best) = best.expect("at least one run");
    Ok(LocalRuns { scores, best, best_run })
}
