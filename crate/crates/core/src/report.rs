//! Scoring on common simulations, P&L and position exports, density
//! estimates and cost/risk frontiers.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hedge::{terminal_pnl, CostModel, HedgingStrategy, Pnl, Positions};
use crate::loss::{loss_value, LossSpec};
use crate::paths::PathSet;
use crate::payoff::Payoff;

const STDERR_BATCHES: usize = 20;

/// Writes serializable rows as CSV with a header line.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows written by [`write_csv`].
pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?)
}

/// Terminal hedging errors `Y = X_T - g(S_T)` of one strategy, with the
/// transaction costs kept as a separate column.
#[derive(Clone, Debug, PartialEq)]
pub struct PnlSample {
    pub y: Vec<f64>,
    pub cost: Option<Vec<f64>>,
    pub alpha: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct PnlRow {
    sim: usize,
    y: f64,
    cost: Option<f64>,
}

impl PnlSample {
    pub fn from_pnl(pnl: Pnl, with_cost: bool, alpha: Option<f64>) -> Self {
        PnlSample { y: pnl.y, cost: with_cost.then_some(pnl.cost), alpha }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Criterion value on this sample.
    pub fn score(&self, spec: &LossSpec) -> Result<f64> {
        loss_value(spec, &self.y, self.cost.as_deref())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows: Vec<PnlRow> = self
            .y
            .iter()
            .enumerate()
            .map(|(sim, &y)| PnlRow { sim, y, cost: self.cost.as_ref().map(|c| c[sim]) })
            .collect();
        write_csv(path, &rows)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let rows: Vec<PnlRow> = read_csv(path)?;
        if rows.iter().enumerate().any(|(k, r)| r.sim != k) {
            return Err(Error::format("pnl file", "simulation indices are not 0..n"));
        }
        let with_cost = rows.first().is_some_and(|r| r.cost.is_some());
        if rows.iter().any(|r| r.cost.is_some() != with_cost) {
            return Err(Error::format("pnl file", "cost column is partially filled"));
        }
        Ok(PnlSample {
            y: rows.iter().map(|r| r.y).collect(),
            cost: with_cost.then(|| rows.iter().map(|r| r.cost.unwrap()).collect()),
            alpha: None,
        })
    }
}

/// Standard error of a criterion estimate: exact for per-sample means,
/// batch means otherwise.
pub fn loss_stderr(spec: &LossSpec, y: &[f64], cost: Option<&[f64]>) -> Result<f64> {
    let n = y.len();
    if n < 2 {
        return Ok(f64::NAN);
    }
    if spec.pointwise(0.0).is_some() {
        let terms: Vec<f64> = y.iter().map(|&v| spec.pointwise(v).unwrap()).collect();
        return Ok(sample_std(&terms) / (n as f64).sqrt());
    }
    let batches = STDERR_BATCHES.min(n);
    let size = n / batches;
    let values = (0..batches)
        .map(|b| {
            let r = b * size..(b + 1) * size;
            loss_value(spec, &y[r.clone()], cost.map(|c| &c[r]))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(sample_std(&values) / (batches as f64).sqrt())
}

fn sample_std(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// One cell of a comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub policy: String,
    pub case: String,
    pub spec: String,
    pub value: f64,
    pub n_sims: usize,
    pub stderr: f64,
}

/// Scores of several strategies on one common path set.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    pub pathset_id: String,
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    pub fn get(&self, policy: &str, spec: &str) -> Option<&ScoreRow> {
        self.rows.iter().find(|r| r.policy == policy && r.spec == spec)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv(path, &self.rows)
    }

    pub fn read_csv(path: &Path, pathset_id: impl Into<String>) -> Result<Self> {
        Ok(ScoreTable { pathset_id: pathset_id.into(), rows: read_csv(path)? })
    }
}

/// Rows for one strategy's sample under each criterion.
pub fn score_sample(policy: &str, case: &str, sample: &PnlSample, specs: &[LossSpec]) -> Result<Vec<ScoreRow>> {
    specs
        .iter()
        .map(|spec| {
            Ok(ScoreRow {
                policy: policy.to_string(),
                case: case.to_string(),
                spec: spec.label(),
                value: sample.score(spec)?,
                n_sims: sample.len(),
                stderr: loss_stderr(spec, &sample.y, sample.cost.as_deref())?,
            })
        })
        .collect()
}

/// Runs a strategy on `paths` and collects its terminal P&L.
pub fn evaluate(
    strategy: &dyn HedgingStrategy,
    paths: &PathSet,
    payoff: &Payoff,
    costs: &CostModel,
    alpha: Option<f64>,
) -> Result<(Positions, PnlSample)> {
    let positions = strategy.positions(paths, alpha)?;
    let pnl = terminal_pnl(paths, &positions, payoff, costs)?;
    Ok((positions, PnlSample::from_pnl(pnl, !costs.is_free(), alpha)))
}

/// Scores every strategy on the same simulations.
pub fn score_table(
    strategies: &[&dyn HedgingStrategy],
    case: &str,
    paths: &PathSet,
    payoff: &Payoff,
    costs: &CostModel,
    specs: &[LossSpec],
) -> Result<ScoreTable> {
    let mut rows = Vec::new();
    for s in strategies {
        let (_, sample) = evaluate(*s, paths, payoff, costs, None)?;
        rows.extend(score_sample(&s.name(), case, &sample, specs)?);
    }
    Ok(ScoreTable { pathset_id: paths.id(), rows })
}

/// Gaussian kernel density estimate of a P&L sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Density {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
    /// All samples coincide; `grid` holds the single value with unit mass.
    pub degenerate: bool,
}

impl Density {
    /// Trapezoid integral of the density over its grid.
    pub fn mass(&self) -> f64 {
        if self.degenerate {
            return 1.0;
        }
        self.grid.windows(2).zip(self.density.windows(2)).map(|(x, f)| 0.5 * (x[1] - x[0]) * (f[0] + f[1])).sum()
    }
}

/// Silverman's rule `0.9 · min(σ, IQR/1.34) · n^{-1/5}`, falling back to
/// `σ` when the interquartile range vanishes.
pub fn silverman_bandwidth(x: &[f64]) -> f64 {
    let sigma = sample_std(x);
    let iqr = (empirical_quantile(x, 0.75) - empirical_quantile(x, 0.25)) / 1.34;
    let spread = if iqr > 0.0 { sigma.min(iqr) } else { sigma };
    0.9 * spread * (x.len() as f64).powf(-0.2)
}

/// KDE on `points` equally spaced values over `[min - 3h, max + 3h]`,
/// renormalized so the trapezoid mass on the grid is one.
pub fn pnl_density(x: &[f64], bandwidth: Option<f64>, points: usize) -> Result<Density> {
    if x.len() < 2 {
        return Err(Error::config("a density estimate needs at least two samples"));
    }
    if points < 2 {
        return Err(Error::config("a density grid needs at least two points"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite value in P&L sample".into()));
    }
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Ok(Density { grid: vec![lo], density: vec![1.0], bandwidth: 0.0, degenerate: true });
    }
    let h = bandwidth.unwrap_or_else(|| silverman_bandwidth(x));
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::config(format!("bandwidth must be positive, got {h}")));
    }
    let (a, b) = (lo - 3.0 * h, hi + 3.0 * h);
    let step = (b - a) / (points - 1) as f64;
    let grid: Vec<f64> = (0..points).map(|k| a + step * k as f64).collect();
    let norm = 1.0 / (x.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let density: Vec<f64> = grid
        .par_iter()
        .map(|g| {
            x.iter()
                .map(|v| {
                    let z = (g - v) / h;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect();
    let mut out = Density { grid, density, bandwidth: h, degenerate: false };
    let mass = out.mass();
    out.density.iter_mut().for_each(|f| *f /= mass);
    Ok(out)
}

/// Linearly interpolated empirical quantile.
pub fn empirical_quantile(x: &[f64], q: f64) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let k = pos.floor() as usize;
    let frac = pos - k as f64;
    if k + 1 < s.len() {
        s[k] + frac * (s[k + 1] - s[k])
    } else {
        s[k]
    }
}

/// Fraction of the sample strictly below `threshold`.
pub fn mass_below(x: &[f64], threshold: f64) -> f64 {
    x.iter().filter(|&&v| v < threshold).count() as f64 / x.len() as f64
}

/// Position of one asset on one simulation at one date.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub sim: usize,
    pub date: usize,
    pub asset: usize,
    pub delta: f64,
}

/// Per-date positions of the requested simulations.
pub fn delta_rows(positions: &Positions, sims: &[usize]) -> Result<Vec<DeltaRow>> {
    let mut rows = Vec::with_capacity(sims.len() * positions.steps * positions.n_assets);
    for &sim in sims {
        if sim >= positions.n_paths {
            return Err(Error::config(format!("simulation {sim} out of range for {} paths", positions.n_paths)));
        }
        for date in 0..positions.steps {
            for (asset, &delta) in positions.delta(sim, date).iter().enumerate() {
                rows.push(DeltaRow { sim, date, asset, delta });
            }
        }
    }
    Ok(rows)
}

/// Largest `|Δ_{t_0}|` or `|Δ_{t_j} - Δ_{t_{j-1}}|` over `l` in exported rows.
pub fn max_trade_ratio(rows: &[DeltaRow], liquidity: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    let mut prev: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for r in rows {
        let before = if r.date == 0 { 0.0 } else { prev.get(&(r.sim, r.asset)).copied().unwrap_or(0.0) };
        worst = worst.max((r.delta - before).abs() / liquidity[r.asset]);
        prev.insert((r.sim, r.asset), r.delta);
    }
    worst
}

/// One point of the cost/risk frontier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub alpha: f64,
    pub mean_cost: f64,
    /// `√E[Y²]` of the hedging error, costs excluded.
    pub risk: f64,
    pub n_sims: usize,
}

/// A frontier point with the standard errors of both coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct FrontierEval {
    pub point: FrontierPoint,
    pub cost_stderr: f64,
    pub risk_stderr: f64,
}

/// `points` equally spaced weights in `[0, 1]`.
pub fn alpha_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => (0..points).map(|k| k as f64 / (points - 1) as f64).collect(),
    }
}

/// Evaluates an α-conditioned strategy at each weight of `alphas`.
pub fn frontier_sweep(
    strategy: &dyn HedgingStrategy,
    paths: &PathSet,
    payoff: &Payoff,
    costs: &CostModel,
    alphas: &[f64],
) -> Result<Vec<FrontierEval>> {
    alphas
        .iter()
        .map(|&alpha| {
            let positions = strategy.positions(paths, Some(alpha))?;
            let pnl = terminal_pnl(paths, &positions, payoff, costs)?;
            Ok(frontier_point(alpha, &pnl.y, &pnl.cost))
        })
        .collect()
}

/// Frontier coordinates of one sample; the risk error uses the delta method.
pub fn frontier_point(alpha: f64, y: &[f64], cost: &[f64]) -> FrontierEval {
    let n = y.len() as f64;
    let mean_cost = cost.iter().sum::<f64>() / n;
    let squares: Vec<f64> = y.iter().map(|v| v * v).collect();
    let mse = squares.iter().sum::<f64>() / n;
    let risk = mse.sqrt();
    let cost_stderr = sample_std(cost) / n.sqrt();
    let mse_stderr = sample_std(&squares) / n.sqrt();
    let risk_stderr = if risk > 0.0 { mse_stderr / (2.0 * risk) } else { 0.0 };
    FrontierEval { point: FrontierPoint { alpha, mean_cost, risk, n_sims: y.len() }, cost_stderr, risk_stderr }
}

/// Indices of points not dominated by another point that is better in both
/// coordinates by more than the sum of their standard errors.
pub fn dominance_filter(points: &[FrontierEval]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| {
            let a = &points[i];
            !points.iter().any(|b| {
                b.point.mean_cost + b.cost_stderr < a.point.mean_cost - a.cost_stderr
                    && b.point.risk + b.risk_stderr < a.point.risk - a.risk_stderr
            })
        })
        .collect()
}

pub fn write_frontier_csv(path: &Path, points: &[FrontierPoint]) -> Result<()> {
    write_csv(path, points)
}

pub fn read_frontier_csv(path: &Path) -> Result<Vec<FrontierPoint>> {
    read_csv(path)
}

pub fn write_deltas_csv(path: &Path, rows: &[DeltaRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn read_deltas_csv(path: &Path) -> Result<Vec<DeltaRow>> {
    read_csv(path)
}

/// Hex SHA-256 digest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// What produced an output directory, enough to rerun it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    /// The fully expanded configuration.
    pub config: String,
    pub seeds: BTreeMap<String, u64>,
    #[serde(default)]
    pub pathset_id: Option<String>,
    #[serde(default)]
    pub files: Vec<String>,
    #[serde(default)]
    pub notes: BTreeMap<String, serde_json::Value>,
}

impl RunManifest {
    pub fn new(command: &str, config: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: sha256_hex(config.as_bytes()),
            config: config.to_string(),
            seeds: BTreeMap::new(),
            pathset_id: None,
            files: Vec::new(),
            notes: BTreeMap::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_interpolates() {
        let x = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(empirical_quantile(&x, 0.0), 1.0);
        assert_eq!(empirical_quantile(&x, 1.0), 4.0);
        assert_eq!(empirical_quantile(&x, 0.5), 2.5);
        assert_eq!(mass_below(&x, 2.5), 0.5);
    }

    #[test]
    fn grid_has_exact_endpoints() {
        let g = alpha_grid(21);
        assert_eq!(g.len(), 21);
        assert_eq!((g[0], g[10], g[20]), (0.0, 0.5, 1.0));
        assert_eq!(alpha_grid(1), vec![1.0]);
    }

    #[test]
    fn dominated_points_are_removed() {
        let p = |c: f64, r: f64| FrontierEval {
            point: FrontierPoint { alpha: 0.0, mean_cost: c, risk: r, n_sims: 1 },
            cost_stderr: 0.01,
            risk_stderr: 0.01,
        };
        let pts = [p(0.0, 1.0), p(0.5, 0.5), p(1.0, 0.0), p(0.6, 0.6), p(0.51, 0.51)];
        assert_eq!(dominance_filter(&pts), vec![0, 1, 2, 4]);
    }

    #[test]
    fn trade_ratio_reads_increments() {
        let rows = vec![
            DeltaRow { sim: 0, date: 0, asset: 0, delta: 0.1 },
            DeltaRow { sim: 0, date: 1, asset: 0, delta: 0.4 },
            DeltaRow { sim: 1, date: 0, asset: 0, delta: -0.2 },
        ];
        assert!((max_trade_ratio(&rows, &[0.2]) - 1.5).abs() < 1e-12);
    }
}
