//! Global hedging policies: feedforward control, feedforward merged,
//! classical LSTM and augmented LSTM.

use deephedge_autodiff::{Activation, Bound, DenseStack, LstmCell, ParamId, ParamStore, Tape, Tensor, Var};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::hedge::{CostModel, HedgingStrategy, Positions};
use crate::loss::{loss_on_tape, LossSpec};
use crate::paths::{NormStats, PathSet};
use crate::payoff::Payoff;
use crate::rng::{substream, Domain};

/// Paths per tape when producing positions for evaluation.
const EVAL_CHUNK: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    FfControl,
    FfMerged,
    Lstm,
    AugmentedLstm,
}

impl Architecture {
    pub fn is_recurrent(self) -> bool {
        matches!(self, Architecture::Lstm | Architecture::AugmentedLstm)
    }

    pub fn label(self) -> &'static str {
        match self {
            Architecture::FfControl => "ff_control",
            Architecture::FfMerged => "ff_merged",
            Architecture::Lstm => "lstm",
            Architecture::AugmentedLstm => "augmented_lstm",
        }
    }
}

fn default_hidden() -> Vec<usize> {
    vec![10, 10, 10]
}

fn default_units() -> usize {
    50
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub architecture: Architecture,
    /// Hidden widths of the feedforward nets, or of the augmented LSTM head.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_units")]
    pub lstm_units: usize,
    /// Per-date trade caps `l`; absent means unbounded trading.
    #[serde(default)]
    pub liquidity: Option<Vec<f64>>,
    /// Feed the risk weight α as an extra input.
    #[serde(default)]
    pub alpha_conditioned: bool,
    #[serde(default = "default_true")]
    pub train_premium: bool,
}

impl PolicyConfig {
    pub fn new(architecture: Architecture) -> Self {
        PolicyConfig {
            architecture,
            hidden: default_hidden(),
            lstm_units: default_units(),
            liquidity: None,
            alpha_conditioned: false,
            train_premium: true,
        }
    }

    pub fn validate(&self, n_assets: usize) -> Result<()> {
        let ff = !self.architecture.is_recurrent();
        if ff && self.hidden.is_empty() {
            return Err(Error::config("feedforward policies need at least one hidden layer"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        if self.architecture.is_recurrent() && self.lstm_units == 0 {
            return Err(Error::config("lstm_units must be positive"));
        }
        if let Some(l) = &self.liquidity {
            if l.len() != n_assets {
                return Err(Error::config(format!("liquidity has {} entries for {n_assets} tradable assets", l.len())));
            }
            if l.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                return Err(Error::config("liquidity caps must be finite and positive"));
            }
        }
        Ok(())
    }
}

/// Network inputs and market data for one batch of paths.
#[derive(Clone, Debug)]
pub struct Batch {
    pub n: usize,
    /// Per decision date `t_0..t_{N-1}`: `[n, inputs]`.
    pub features: Vec<Tensor>,
    /// Price increments `F_{t_{j+1}} - F_{t_j}` laid out as `[n, N*d]`.
    pub price_moves: Tensor,
    /// `g(S_T)` as `[n, 1]`.
    pub payoff: Tensor,
}

/// Tape handles of a forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// `[n, N*d]`, date-major within each row.
    pub deltas: Var,
    pub increments: Var,
    pub premium: Var,
    pub wealth: Var,
    pub error: Var,
    pub cost: Option<Var>,
}

#[derive(Clone, Debug)]
enum Body {
    FfControl { initial: ParamId, nets: Vec<DenseStack> },
    FfMerged { initial: ParamId, net: DenseStack },
    Recurrent { cell: LstmCell, head: DenseStack },
}

#[derive(Clone, Debug)]
pub struct Policy {
    config: PolicyConfig,
    n_assets: usize,
    dates: Vec<f64>,
    norm: NormStats,
    store: ParamStore,
    premium: ParamId,
    body: Body,
}

impl Policy {
    /// Fresh policy for states of `norm.dim()` components on `dates`, with
    /// weights drawn from the `Init` substream of `seed`.
    pub fn new(
        config: PolicyConfig,
        n_assets: usize,
        dates: Vec<f64>,
        norm: NormStats,
        premium: f64,
        seed: u64,
    ) -> Result<Self> {
        config.validate(n_assets)?;
        if norm.n_dates() != dates.len() || dates.len() < 2 {
            return Err(Error::Dimension {
                context: "policy dates vs normalization",
                expected: dates.len(),
                found: norm.n_dates(),
            });
        }
        if n_assets == 0 || n_assets > norm.dim() {
            return Err(Error::config("policy needs 1..=dim tradable assets"));
        }
        let mut rng = substream(seed, Domain::Init, 0);
        let mut store = ParamStore::new();
        let steps = dates.len() - 1;
        let alpha = usize::from(config.alpha_conditioned);
        let state_inputs = norm.dim() + alpha;
        let widths = |inputs: usize, hidden: &[usize]| {
            let mut w = vec![inputs];
            w.extend_from_slice(hidden);
            w.push(n_assets);
            w
        };
        let body = match config.architecture {
            Architecture::FfControl => {
                let initial = store.add("initial_position", Tensor::zeros(&[1, n_assets]), true);
                let nets = (1..steps)
                    .map(|j| {
                        DenseStack::new(
                            &mut store,
                            &format!("date{j}"),
                            &widths(state_inputs, &config.hidden),
                            Activation::Relu,
                            Activation::Identity,
                            &mut rng,
                        )
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                Body::FfControl { initial, nets }
            }
            Architecture::FfMerged => {
                let initial = store.add("initial_position", Tensor::zeros(&[1, n_assets]), true);
                let net = DenseStack::new(
                    &mut store,
                    "merged",
                    &widths(state_inputs + 1, &config.hidden),
                    Activation::Relu,
                    Activation::Identity,
                    &mut rng,
                )?;
                Body::FfMerged { initial, net }
            }
            Architecture::Lstm | Architecture::AugmentedLstm => {
                let h = config.lstm_units;
                let cell = LstmCell::new(&mut store, "lstm", state_inputs, h, &mut rng);
                let hidden: &[usize] = if config.architecture == Architecture::Lstm { &[] } else { &config.hidden };
                let head = DenseStack::new(
                    &mut store,
                    "head",
                    &widths(h, hidden),
                    Activation::Relu,
                    Activation::Identity,
                    &mut rng,
                )?;
                Body::Recurrent { cell, head }
            }
        };
        let premium = store.add("premium", Tensor::vector(vec![premium]), config.train_premium);
        Ok(Policy { config, n_assets, dates, norm, store, premium, body })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    pub fn steps(&self) -> usize {
        self.dates.len() - 1
    }

    pub fn dates(&self) -> &[f64] {
        &self.dates
    }

    pub fn norm(&self) -> &NormStats {
        &self.norm
    }

    pub fn liquidity(&self) -> Option<&[f64]> {
        self.config.liquidity.as_deref()
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn premium(&self) -> f64 {
        self.store.get(self.premium).data()[0]
    }

    pub fn set_premium(&mut self, value: f64) {
        self.store.get_mut(self.premium).data_mut()[0] = value;
    }

    /// Sets every network weight and bias (but not the premium) to zero.
    pub fn zero_weights(&mut self) {
        let premium = self.premium;
        for id in self.store.ids().collect::<Vec<_>>() {
            if id != premium {
                self.store.get_mut(id).data_mut().fill(0.0);
            }
        }
    }

    fn inputs(&self) -> usize {
        let base = self.norm.dim() + usize::from(self.config.alpha_conditioned);
        match self.config.architecture {
            Architecture::FfMerged => base + 1,
            _ => base,
        }
    }

    /// Builds network inputs from raw states. `alpha` is required exactly
    /// when the policy is α-conditioned.
    pub fn batch(&self, paths: &PathSet, payoff: &Payoff, alpha: Option<f64>) -> Result<Batch> {
        if paths.dates() != self.dates.as_slice() {
            return Err(Error::config("path dates differ from the policy's hedging dates"));
        }
        if paths.dim() != self.norm.dim() || paths.n_tradable() != self.n_assets {
            return Err(Error::Dimension {
                context: "path state dimension",
                expected: self.norm.dim(),
                found: paths.dim(),
            });
        }
        let alpha = match (self.config.alpha_conditioned, alpha) {
            (true, Some(a)) => Some(a),
            (true, None) => return Err(Error::config("α-conditioned policy needs an α value")),
            (false, _) => None,
        };
        payoff.validate(self.n_assets, paths.dim())?;
        let n = paths.n_paths();
        let steps = self.steps();
        let dim = self.norm.dim();
        let d = self.n_assets;
        let inputs = self.inputs();
        let merged = self.config.architecture == Architecture::FfMerged;
        let maturity = self.dates[steps];
        let mut features = Vec::with_capacity(steps);
        let mut state = vec![0.0; dim];
        for j in 0..steps {
            let mut data = Vec::with_capacity(n * inputs);
            for p in 0..n {
                if merged {
                    data.push((maturity - self.dates[j]) / (maturity - self.dates[0]));
                }
                self.norm.normalize(j, paths.state(p, j), &mut state);
                data.extend_from_slice(&state);
                if let Some(a) = alpha {
                    data.push(a);
                }
            }
            features.push(Tensor::matrix(n, inputs, data)?);
        }
        let mut moves = Vec::with_capacity(n * steps * d);
        let mut g = Vec::with_capacity(n);
        for p in 0..n {
            for j in 0..steps {
                let (now, next) = (paths.prices(p, j), paths.prices(p, j + 1));
                moves.extend(next.iter().zip(now).map(|(b, a)| b - a));
            }
            g.push(payoff.value_unchecked(paths.state(p, steps), d));
        }
        Ok(Batch { n, features, price_moves: Tensor::matrix(n, steps * d, moves)?, payoff: Tensor::matrix(n, 1, g)? })
    }

    /// Positions, wealth and (when `costs` is given) transaction costs on the tape.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, batch: &Batch, costs: Option<&CostModel>) -> Result<Forward> {
        let steps = self.steps();
        if batch.features.len() != steps {
            return Err(Error::Dimension { context: "batch dates", expected: steps, found: batch.features.len() });
        }
        let n = batch.n;
        let liquidity = self.config.liquidity.as_deref();
        let bounded = |tape: &mut Tape, raw: Var| -> Result<Var> {
            let squashed = tape.tanh(raw)?;
            Ok(tape.scale_cols(squashed, liquidity.unwrap())?)
        };
        let features: Vec<Var> = batch.features.iter().map(|f| tape.constant(f.clone())).collect();
        let mut deltas = Vec::with_capacity(steps);
        let mut increments = Vec::with_capacity(steps);
        match &self.body {
            Body::FfControl { initial, .. } | Body::FfMerged { initial, .. } => {
                let pre = tape.broadcast_rows(bound.var(*initial), n)?;
                let first = if liquidity.is_some() { bounded(tape, pre)? } else { pre };
                deltas.push(first);
                increments.push(first);
                for (j, &x) in features.iter().enumerate().skip(1) {
                    let raw = match &self.body {
                        Body::FfControl { nets, .. } => nets[j - 1].forward(tape, bound, x)?,
                        Body::FfMerged { net, .. } => net.forward(tape, bound, x)?,
                        Body::Recurrent { .. } => unreachable!(),
                    };
                    let prev = deltas[j - 1];
                    if liquidity.is_some() {
                        let inc = bounded(tape, raw)?;
                        deltas.push(tape.add(prev, inc)?);
                        increments.push(inc);
                    } else {
                        increments.push(tape.sub(raw, prev)?);
                        deltas.push(raw);
                    }
                }
            }
            Body::Recurrent { cell, head } => {
                let outputs = cell.forward(tape, bound, &features)?;
                for (j, c) in outputs.into_iter().enumerate() {
                    let raw = head.forward(tape, bound, c)?;
                    let inc = if liquidity.is_some() { bounded(tape, raw)? } else { raw };
                    let delta = if j == 0 { inc } else { tape.add(deltas[j - 1], inc)? };
                    increments.push(inc);
                    deltas.push(delta);
                }
            }
        }
        let deltas = tape.concat_cols(&deltas)?;
        let increments = tape.concat_cols(&increments)?;
        let moves = tape.constant(batch.price_moves.clone());
        let pnl = tape.mul(deltas, moves)?;
        let gains = tape.sum_cols(pnl)?;
        let premium = tape.broadcast_rows(bound.var(self.premium), n)?;
        let wealth = tape.add(premium, gains)?;
        let payoff = tape.constant(batch.payoff.clone());
        let error = tape.sub(wealth, payoff)?;
        let cost = match costs {
            Some(model) => {
                model.validate(self.n_assets)?;
                let mut factors = Vec::with_capacity(steps * self.n_assets);
                for j in 0..steps {
                    for &c in &model.rates {
                        factors.push(if j == 0 && !model.charge_initial_trade { 0.0 } else { c });
                    }
                }
                let traded = tape.abs(increments)?;
                let charged = tape.scale_cols(traded, &factors)?;
                Some(tape.sum_cols(charged)?)
            }
            None => None,
        };
        Ok(Forward { deltas, increments, premium, wealth, error, cost })
    }

    /// Scalar training objective on the tape.
    pub fn objective(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &Batch,
        loss: &LossSpec,
        costs: &CostModel,
    ) -> Result<(Var, Forward)> {
        let forward = self.forward(tape, bound, batch, loss.needs_costs().then_some(costs))?;
        let value = loss_on_tape(tape, loss, forward.error, forward.cost)?;
        Ok((value, forward))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "kind": "global_policy",
            "config": self.config,
            "n_assets": self.n_assets,
            "dates": self.dates,
            "norm_mean": self.norm.means(),
            "norm_std": self.norm.stds(),
        });
        Checkpoint::from_store(&self.store, meta)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        #[derive(Deserialize)]
        struct Meta {
            kind: String,
            config: PolicyConfig,
            n_assets: usize,
            dates: Vec<f64>,
            norm_mean: Vec<f64>,
            norm_std: Vec<f64>,
        }
        let meta: Meta = serde_json::from_value(ck.meta.clone())?;
        if meta.kind != "global_policy" {
            return Err(Error::format("checkpoint", format!("expected a global policy, found {:?}", meta.kind)));
        }
        let n_dates = meta.dates.len();
        let dim = meta.norm_mean.len() / n_dates.max(1);
        let norm = NormStats::from_parts(n_dates, dim, meta.norm_mean, meta.norm_std)?;
        let mut policy = Policy::new(meta.config, meta.n_assets, meta.dates, norm, 0.0, 0)?;
        ck.restore_into(&mut policy.store)?;
        Ok(policy)
    }

    fn chunk_positions(&self, paths: &PathSet, alpha: Option<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        // The payoff is irrelevant for positions; a call on the first asset is always valid.
        let batch = self.batch(paths, &Payoff::Call { strike: 0.0 }, alpha)?;
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let out = self.forward(&mut tape, &bound, &batch, None)?;
        Ok((tape.value(out.deltas).data().to_vec(), tape.value(out.increments).data().to_vec()))
    }
}

impl HedgingStrategy for Policy {
    fn name(&self) -> String {
        self.config.architecture.label().to_string()
    }

    fn n_assets(&self) -> usize {
        self.n_assets
    }

    fn positions(&self, paths: &PathSet, alpha: Option<f64>) -> Result<Positions> {
        let n = paths.n_paths();
        let chunks: Vec<(usize, usize)> = (0..n).step_by(EVAL_CHUNK).map(|s| (s, EVAL_CHUNK.min(n - s))).collect();
        let parts = chunks
            .par_iter()
            .map(|&(start, len)| self.chunk_positions(&paths.slice(start, len), alpha))
            .collect::<Result<Vec<_>>>()?;
        let mut deltas = Vec::with_capacity(n * self.steps() * self.n_assets);
        let mut increments = Vec::with_capacity(deltas.capacity());
        for (d, i) in parts {
            deltas.extend(d);
            increments.extend(i);
        }
        Ok(Positions {
            n_paths: n,
            steps: self.steps(),
            n_assets: self.n_assets,
            deltas,
            increments,
            premium: self.premium(),
        })
    }
}
