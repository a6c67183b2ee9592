//! Position paths, terminal wealth and transaction costs, independent of how
//! the positions were produced.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::PathSet;
use crate::payoff::{bs_call_price, bs_delta, Payoff};

/// Proportional transaction costs per unit traded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub rates: Vec<f64>,
    /// Charge the purchase of the initial position `Δ_{t_0}`.
    #[serde(default = "default_true")]
    pub charge_initial_trade: bool,
}

fn default_true() -> bool {
    true
}

impl CostModel {
    pub fn free(n_assets: usize) -> Self {
        CostModel { rates: vec![0.0; n_assets], charge_initial_trade: true }
    }

    pub fn uniform(n_assets: usize, rate: f64) -> Self {
        CostModel { rates: vec![rate; n_assets], charge_initial_trade: true }
    }

    pub fn validate(&self, n_assets: usize) -> Result<()> {
        if self.rates.len() != n_assets {
            return Err(Error::config(format!(
                "cost model has {} rates for {n_assets} tradable assets",
                self.rates.len()
            )));
        }
        if self.rates.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::config("transaction cost rates must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn is_free(&self) -> bool {
        self.rates.iter().all(|&c| c == 0.0)
    }
}

/// Hedge positions on every path, held over `[t_j, t_{j+1})` for `j < N`.
///
/// `increments[j] = deltas[j] - deltas[j-1]` with `deltas[-1] = 0`. The
/// increments are the quantities the policy actually emits, so liquidity
/// checks use them directly.
#[derive(Clone, Debug, PartialEq)]
pub struct Positions {
    pub n_paths: usize,
    pub steps: usize,
    pub n_assets: usize,
    pub deltas: Vec<f64>,
    pub increments: Vec<f64>,
    pub premium: f64,
}

impl Positions {
    pub fn zeros(n_paths: usize, steps: usize, n_assets: usize, premium: f64) -> Self {
        let len = n_paths * steps * n_assets;
        Positions { n_paths, steps, n_assets, deltas: vec![0.0; len], increments: vec![0.0; len], premium }
    }

    /// Builds increments by differencing the given positions.
    pub fn from_deltas(n_paths: usize, steps: usize, n_assets: usize, deltas: Vec<f64>, premium: f64) -> Result<Self> {
        let len = n_paths * steps * n_assets;
        if deltas.len() != len {
            return Err(Error::Dimension { context: "positions", expected: len, found: deltas.len() });
        }
        let mut increments = deltas.clone();
        let row = steps * n_assets;
        for p in 0..n_paths {
            for j in (1..steps).rev() {
                for i in 0..n_assets {
                    let k = p * row + j * n_assets + i;
                    increments[k] = deltas[k] - deltas[k - n_assets];
                }
            }
        }
        Ok(Positions { n_paths, steps, n_assets, deltas, increments, premium })
    }

    pub fn delta(&self, p: usize, j: usize) -> &[f64] {
        let start = (p * self.steps + j) * self.n_assets;
        &self.deltas[start..start + self.n_assets]
    }

    pub fn increment(&self, p: usize, j: usize) -> &[f64] {
        let start = (p * self.steps + j) * self.n_assets;
        &self.increments[start..start + self.n_assets]
    }

    /// Largest ratio `|increment| / l` over all paths, dates and assets.
    pub fn max_liquidity_ratio(&self, liquidity: &[f64]) -> f64 {
        self.increments
            .chunks(self.n_assets)
            .flat_map(|c| c.iter().zip(liquidity).map(|(x, l)| x.abs() / l))
            .fold(0.0, f64::max)
    }

    /// Number of emitted increments exceeding the per-date cap.
    pub fn liquidity_violations(&self, liquidity: &[f64]) -> usize {
        self.increments
            .chunks(self.n_assets)
            .flat_map(|c| c.iter().zip(liquidity).filter(|(x, l)| x.abs() > **l))
            .count()
    }
}

/// Per-path terminal hedging error `Y = X_T - g(S_T)` and transaction cost.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Pnl {
    pub y: Vec<f64>,
    pub cost: Vec<f64>,
}

impl Pnl {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// A rule producing positions on simulated paths.
pub trait HedgingStrategy: Sync {
    fn name(&self) -> String;

    fn n_assets(&self) -> usize;

    /// Positions on every path of `paths`. `alpha` feeds α-conditioned policies.
    fn positions(&self, paths: &PathSet, alpha: Option<f64>) -> Result<Positions>;
}

/// Terminal wealth and costs for the given positions.
pub fn terminal_pnl(paths: &PathSet, positions: &Positions, payoff: &Payoff, costs: &CostModel) -> Result<Pnl> {
    let d = paths.n_tradable();
    if positions.n_paths != paths.n_paths() || positions.steps != paths.steps() || positions.n_assets != d {
        return Err(Error::Dimension {
            context: "positions vs paths",
            expected: paths.n_paths() * paths.steps() * d,
            found: positions.n_paths * positions.steps * positions.n_assets,
        });
    }
    payoff.validate(d, paths.dim())?;
    costs.validate(d)?;
    let steps = paths.steps();
    let (y, cost): (Vec<f64>, Vec<f64>) = (0..paths.n_paths())
        .into_par_iter()
        .map(|p| {
            let mut gains = 0.0;
            let mut cost = 0.0;
            for j in 0..steps {
                let now = paths.prices(p, j);
                let next = paths.prices(p, j + 1);
                let delta = positions.delta(p, j);
                let inc = positions.increment(p, j);
                for i in 0..d {
                    gains += delta[i] * (next[i] - now[i]);
                    if j > 0 || costs.charge_initial_trade {
                        cost += costs.rates[i] * inc[i].abs();
                    }
                }
            }
            let terminal = paths.state(p, steps);
            let g = payoff.value_unchecked(terminal, d);
            (positions.premium + gains - g, cost)
        })
        .unzip();
    Ok(Pnl { y, cost })
}

/// No hedge: the seller keeps the premium.
#[derive(Clone, Debug)]
pub struct Unhedged {
    pub n_assets: usize,
    pub premium: f64,
}

impl HedgingStrategy for Unhedged {
    fn name(&self) -> String {
        "unhedged".into()
    }

    fn n_assets(&self) -> usize {
        self.n_assets
    }

    fn positions(&self, paths: &PathSet, _alpha: Option<f64>) -> Result<Positions> {
        Ok(Positions::zeros(paths.n_paths(), paths.steps(), self.n_assets, self.premium))
    }
}

/// Black-Scholes delta hedge of a call on the first asset, premium at the
/// Black-Scholes price. Times are in the units of the path dates.
#[derive(Clone, Debug)]
pub struct BlackScholesDelta {
    pub strike: f64,
    pub volatility: f64,
    pub maturity: f64,
}

impl HedgingStrategy for BlackScholesDelta {
    fn name(&self) -> String {
        "black_scholes_delta".into()
    }

    fn n_assets(&self) -> usize {
        1
    }

    fn positions(&self, paths: &PathSet, _alpha: Option<f64>) -> Result<Positions> {
        if paths.n_tradable() != 1 {
            return Err(Error::config("the Black-Scholes delta hedges a single asset"));
        }
        let steps = paths.steps();
        let dates = paths.dates();
        let mut deltas = vec![0.0; paths.n_paths() * steps];
        deltas.par_chunks_mut(steps).enumerate().for_each(|(p, row)| {
            for (j, slot) in row.iter_mut().enumerate() {
                let tau = self.maturity - dates[j];
                *slot = bs_delta(paths.prices(p, j)[0], self.strike, self.volatility, tau);
            }
        });
        let spot = paths.prices(0, 0)[0];
        let premium = bs_call_price(spot, self.strike, self.volatility, self.maturity - dates[0]);
        Positions::from_deltas(paths.n_paths(), steps, 1, deltas, premium)
    }
}

/// Monte-Carlo mean of the payoff, the premium that is optimal when prices
/// are martingales.
pub fn payoff_mean(paths: &PathSet, payoff: &Payoff) -> Result<f64> {
    let d = paths.n_tradable();
    payoff.validate(d, paths.dim())?;
    let n = paths.n_paths();
    if n == 0 {
        return Err(Error::config("payoff mean of an empty path set"));
    }
    let steps = paths.steps();
    let sum: f64 = (0..n).into_par_iter().map(|p| payoff.value_unchecked(paths.state(p, steps), d)).sum();
    Ok(sum / n as f64)
}
