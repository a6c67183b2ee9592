//! Monte-Carlo market models: mean-reverting forward curves with a volume
//! factor, and correlated geometric Brownian motions.
//!
//! Both models are sampled exactly on the hedging grid. Internally each model
//! evolves a Gaussian latent vector `X` by affine-Gaussian steps
//! `X' = decay ⊙ X + shift + L z`, and observable states are a closed-form
//! function of `X` at each date.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unit in which dates, volatilities and mean-reversion rates are expressed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnit {
    Hours,
    Days,
    Years,
}

/// Forward curve of one tradable asset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardParams {
    pub initial: f64,
    pub volatility: f64,
    pub mean_reversion: f64,
}

/// Non-tradable mean-reverting volume factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeParams {
    pub initial: f64,
    pub volatility: f64,
    pub mean_reversion: f64,
    /// Seasonal mean on every grid date; constant `initial` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seasonal: Option<Vec<f64>>,
}

/// One geometric Brownian motion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbmParams {
    pub initial: f64,
    pub drift: f64,
    pub volatility: f64,
}

fn finite(name: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be finite, got {x}")))
    }
}

impl ForwardParams {
    pub fn validate(&self) -> Result<()> {
        finite("forward initial", self.initial)?;
        finite("forward volatility", self.volatility)?;
        finite("forward mean_reversion", self.mean_reversion)?;
        if self.initial <= 0.0 {
            return Err(Error::config("forward initial price must be > 0"));
        }
        if self.volatility < 0.0 {
            return Err(Error::config("forward volatility must be >= 0"));
        }
        if self.mean_reversion <= 0.0 {
            return Err(Error::config("forward mean_reversion must be > 0"));
        }
        Ok(())
    }
}

impl VolumeParams {
    pub fn constant(initial: f64) -> Self {
        Self { initial, volatility: 0.0, mean_reversion: 1.0, seasonal: None }
    }

    pub fn validate(&self, n_dates: usize) -> Result<()> {
        finite("volume initial", self.initial)?;
        finite("volume volatility", self.volatility)?;
        finite("volume mean_reversion", self.mean_reversion)?;
        if self.volatility < 0.0 {
            return Err(Error::config("volume volatility must be >= 0"));
        }
        if self.mean_reversion <= 0.0 {
            return Err(Error::config("volume mean_reversion must be > 0"));
        }
        if let Some(s) = &self.seasonal {
            if s.len() != n_dates {
                return Err(Error::config(format!(
                    "volume seasonal table has {} entries, grid has {n_dates} dates",
                    s.len()
                )));
            }
            for &v in s {
                finite("volume seasonal", v)?;
            }
        }
        Ok(())
    }

    fn seasonal_at(&self, j: usize) -> f64 {
        self.seasonal.as_ref().map_or(self.initial, |s| s[j])
    }
}

impl GbmParams {
    pub fn validate(&self) -> Result<()> {
        finite("gbm initial", self.initial)?;
        finite("gbm drift", self.drift)?;
        finite("gbm volatility", self.volatility)?;
        if self.initial <= 0.0 {
            return Err(Error::config("gbm initial price must be > 0"));
        }
        if self.volatility < 0.0 {
            return Err(Error::config("gbm volatility must be >= 0"));
        }
        Ok(())
    }
}

/// Lower-triangular Cholesky factor of a positive semi-definite matrix,
/// stored row-major.
///
/// Zero pivots (rank deficiency) produce zero columns; a negative pivot or a
/// nonzero residual in a zero-pivot column means the matrix is not PSD.
#[derive(Clone, Debug, PartialEq)]
pub struct Cholesky {
    n: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    pub fn factor(matrix: &[f64], n: usize) -> Result<Self> {
        if matrix.len() != n * n {
            return Err(Error::Dimension { context: "cholesky", expected: n * n, found: matrix.len() });
        }
        let scale = (0..n).map(|i| matrix[i * n + i].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let tol = 1e-12 * scale;
        let mut lower = vec![0.0; n * n];
        for j in 0..n {
            let mut pivot = matrix[j * n + j];
            for k in 0..j {
                pivot -= lower[j * n + k] * lower[j * n + k];
            }
            if pivot < -tol {
                return Err(Error::NotPsd { index: j, pivot });
            }
            if pivot <= tol {
                for i in j + 1..n {
                    let mut r = matrix[i * n + j];
                    for k in 0..j {
                        r -= lower[i * n + k] * lower[j * n + k];
                    }
                    if r.abs() > 1e-9 * scale {
                        return Err(Error::NotPsd { index: j, pivot });
                    }
                }
                continue;
            }
            let d = pivot.sqrt();
            lower[j * n + j] = d;
            for i in j + 1..n {
                let mut r = matrix[i * n + j];
                for k in 0..j {
                    r -= lower[i * n + k] * lower[j * n + k];
                }
                lower[i * n + j] = r / d;
            }
        }
        Ok(Self { n, lower })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    /// `out = L z`.
    pub fn apply(&self, z: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            let row = &self.lower[i * self.n..i * self.n + i + 1];
            out[i] = row.iter().zip(z).map(|(l, z)| l * z).sum();
        }
    }
}

/// Correlation matrix of the driving Brownian motions.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationSpec {
    n: usize,
    matrix: Vec<f64>,
    cholesky: Cholesky,
}

impl CorrelationSpec {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::config("correlation matrix is empty"));
        }
        let mut matrix = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::config("correlation matrix must be square"));
            }
            matrix.extend_from_slice(row);
        }
        for i in 0..n {
            if (matrix[i * n + i] - 1.0).abs() > 1e-12 {
                return Err(Error::config(format!(
                    "correlation diagonal entry {i} is {}, expected 1",
                    matrix[i * n + i]
                )));
            }
            for j in 0..n {
                let v = matrix[i * n + j];
                if !v.is_finite() || v.abs() > 1.0 {
                    return Err(Error::config(format!("correlation entry ({i}, {j}) = {v} is outside [-1, 1]")));
                }
                if (v - matrix[j * n + i]).abs() > 1e-12 {
                    return Err(Error::config(format!("correlation matrix is not symmetric at ({i}, {j})")));
                }
            }
        }
        let cholesky = Cholesky::factor(&matrix, n)?;
        Ok(Self { n, matrix, cholesky })
    }

    pub fn identity(n: usize) -> Self {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        Self::new(&rows).expect("identity is a valid correlation")
    }

    /// Identity with the listed off-diagonal entries `(i, j, rho)` set symmetrically.
    pub fn from_pairs(n: usize, pairs: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> =
            (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        for &(i, j, rho) in pairs {
            if i >= n || j >= n || i == j {
                return Err(Error::config(format!("correlation pair ({i}, {j}) invalid for dimension {n}")));
            }
            rows[i][j] = rho;
            rows[j][i] = rho;
        }
        Self::new(&rows)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.n + j]
    }

    pub fn cholesky(&self) -> &Cholesky {
        &self.cholesky
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.matrix.chunks(self.n).map(|r| r.to_vec()).collect()
    }

    /// `count` rows of standard normals with correlation `ρ`, row-major.
    pub fn correlated_normals<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; count * self.n];
        let mut z = vec![0.0; self.n];
        for row in out.chunks_exact_mut(self.n) {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            self.cholesky.apply(&z, row);
        }
        out
    }
}

/// Affine-Gaussian map `x -> decay ⊙ x + shift + L z`.
#[derive(Clone, Debug)]
struct GaussianStep {
    decay: Vec<f64>,
    shift: Vec<f64>,
    factor: Cholesky,
}

impl GaussianStep {
    fn apply<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R, z: &mut [f64], out: &mut [f64]) {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        self.factor.apply(z, out);
        for i in 0..out.len() {
            out[i] += self.decay[i] * x[i] + self.shift[i];
        }
    }
}

#[derive(Clone, Debug)]
enum Dynamics {
    Forward { assets: Vec<ForwardParams>, volume: VolumeParams, maturity: f64 },
    Gbm { assets: Vec<GbmParams> },
}

/// A fully specified market on a fixed date grid.
#[derive(Clone, Debug)]
pub struct Market {
    dynamics: Dynamics,
    correlation: CorrelationSpec,
    dates: Vec<f64>,
    time_unit: TimeUnit,
    initial_latent: Vec<f64>,
    transitions: Vec<GaussianStep>,
    marginals: Vec<GaussianStep>,
}

/// Equally spaced grid `0, T/n, …, T`.
pub fn uniform_dates(maturity: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|j| maturity * j as f64 / steps as f64).collect()
}

fn validate_dates(dates: &[f64]) -> Result<()> {
    if dates.len() < 2 {
        return Err(Error::config("the date grid needs at least two dates"));
    }
    if dates[0] != 0.0 {
        return Err(Error::config("the date grid must start at 0"));
    }
    if dates.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
        return Err(Error::config("dates must be finite and strictly increasing"));
    }
    Ok(())
}

/// `∫_0^h e^{-(a+b)s} ds`, accurate for small `(a+b)h`.
fn exp_integral(sum_rates: f64, h: f64) -> f64 {
    -(-sum_rates * h).exp_m1() / sum_rates
}

impl Market {
    /// Forward curves `F^1..F^d` plus volume `V`; `correlation` is over
    /// `(W^1, …, W^d, W^V)`.
    pub fn forward(
        assets: Vec<ForwardParams>,
        volume: VolumeParams,
        correlation: CorrelationSpec,
        dates: Vec<f64>,
        time_unit: TimeUnit,
    ) -> Result<Self> {
        validate_dates(&dates)?;
        if assets.is_empty() {
            return Err(Error::config("at least one forward asset is required"));
        }
        for a in &assets {
            a.validate()?;
        }
        volume.validate(dates.len())?;
        let d = assets.len();
        if correlation.dim() != d + 1 {
            return Err(Error::config(format!(
                "forward market with {d} assets needs a {}x{} correlation (assets then volume), got {}",
                d + 1,
                d + 1,
                correlation.dim()
            )));
        }
        let maturity = *dates.last().unwrap();
        let vols: Vec<f64> = assets.iter().map(|a| a.volatility).chain(std::iter::once(volume.volatility)).collect();
        let rates: Vec<f64> =
            assets.iter().map(|a| a.mean_reversion).chain(std::iter::once(volume.mean_reversion)).collect();
        let n = d + 1;
        let ou_step = |h: f64| -> Result<GaussianStep> {
            let mut cov = vec![0.0; n * n];
            for k in 0..n {
                for l in 0..n {
                    cov[k * n + l] = vols[k] * vols[l] * correlation.get(k, l) * exp_integral(rates[k] + rates[l], h);
                }
            }
            Ok(GaussianStep {
                decay: rates.iter().map(|a| (-a * h).exp()).collect(),
                shift: vec![0.0; n],
                factor: Cholesky::factor(&cov, n)?,
            })
        };
        let transitions = dates.windows(2).map(|w| ou_step(w[1] - w[0])).collect::<Result<Vec<_>>>()?;
        let marginals = dates.iter().map(|&t| ou_step(t)).collect::<Result<Vec<_>>>()?;
        let mut initial_latent = vec![0.0; n];
        initial_latent[d] = volume.initial - volume.seasonal_at(0);
        Ok(Self {
            dynamics: Dynamics::Forward { assets, volume, maturity },
            correlation,
            dates,
            time_unit,
            initial_latent,
            transitions,
            marginals,
        })
    }

    /// Correlated geometric Brownian motions; `correlation` is over the assets.
    pub fn gbm(
        assets: Vec<GbmParams>,
        correlation: CorrelationSpec,
        dates: Vec<f64>,
        time_unit: TimeUnit,
    ) -> Result<Self> {
        validate_dates(&dates)?;
        if assets.is_empty() {
            return Err(Error::config("at least one asset is required"));
        }
        for a in &assets {
            a.validate()?;
        }
        let d = assets.len();
        if correlation.dim() != d {
            return Err(Error::config(format!(
                "gbm market with {d} assets needs a {d}x{d} correlation, got {}",
                correlation.dim()
            )));
        }
        let step = |h: f64| -> Result<GaussianStep> {
            let mut cov = vec![0.0; d * d];
            for k in 0..d {
                for l in 0..d {
                    cov[k * d + l] = assets[k].volatility * assets[l].volatility * correlation.get(k, l) * h;
                }
            }
            Ok(GaussianStep {
                decay: vec![1.0; d],
                shift: assets.iter().map(|a| (a.drift - 0.5 * a.volatility * a.volatility) * h).collect(),
                factor: Cholesky::factor(&cov, d)?,
            })
        };
        let transitions = dates.windows(2).map(|w| step(w[1] - w[0])).collect::<Result<Vec<_>>>()?;
        let marginals = dates.iter().map(|&t| step(t)).collect::<Result<Vec<_>>>()?;
        let initial_latent = assets.iter().map(|a| a.initial.ln()).collect();
        Ok(Self {
            dynamics: Dynamics::Gbm { assets },
            correlation,
            dates,
            time_unit,
            initial_latent,
            transitions,
            marginals,
        })
    }

    pub fn dates(&self) -> &[f64] {
        &self.dates
    }

    /// Number of hedging intervals `N` (dates are `t_0..t_N`).
    pub fn steps(&self) -> usize {
        self.dates.len() - 1
    }

    pub fn maturity(&self) -> f64 {
        *self.dates.last().unwrap()
    }

    pub fn time_unit(&self) -> TimeUnit {
        self.time_unit
    }

    pub fn correlation(&self) -> &CorrelationSpec {
        &self.correlation
    }

    /// Number of tradable assets `d`.
    pub fn n_tradable(&self) -> usize {
        match &self.dynamics {
            Dynamics::Forward { assets, .. } => assets.len(),
            Dynamics::Gbm { assets } => assets.len(),
        }
    }

    /// Length of the observed state vector.
    pub fn state_dim(&self) -> usize {
        match &self.dynamics {
            Dynamics::Forward { assets, .. } => assets.len() + 1,
            Dynamics::Gbm { assets } => assets.len(),
        }
    }

    pub fn has_volume(&self) -> bool {
        matches!(self.dynamics, Dynamics::Forward { .. })
    }

    pub fn latent_dim(&self) -> usize {
        self.initial_latent.len()
    }

    /// Initial state `S_{t_0}`.
    pub fn initial_state(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.state_dim()];
        self.observe(0, &self.initial_latent, &mut s);
        s
    }

    /// Maps the latent vector at date `j` to the observed state.
    pub fn observe(&self, j: usize, latent: &[f64], out: &mut [f64]) {
        match &self.dynamics {
            Dynamics::Forward { assets, volume, maturity } => {
                let tau = maturity - self.dates[j];
                for (i, a) in assets.iter().enumerate() {
                    let (s, k) = (a.volatility, a.mean_reversion);
                    let convexity = s * s * ((-2.0 * k * tau).exp() - (-2.0 * k * maturity).exp()) / (4.0 * k);
                    out[i] = a.initial * (-convexity + (-k * tau).exp() * latent[i]).exp();
                }
                out[assets.len()] = volume.seasonal_at(j) + latent[assets.len()];
            }
            Dynamics::Gbm { .. } => {
                for (o, x) in out.iter_mut().zip(latent) {
                    *o = x.exp();
                }
            }
        }
    }

    /// Draws the latent vector at date `j+1` given its value at date `j`.
    pub fn step_latent<R: Rng + ?Sized>(&self, j: usize, latent: &[f64], rng: &mut R) -> Vec<f64> {
        let n = self.latent_dim();
        let mut z = vec![0.0; n];
        let mut out = vec![0.0; n];
        self.transitions[j].apply(latent, rng, &mut z, &mut out);
        out
    }

    /// Draws the latent vector at date `j` from its unconditional law.
    pub fn sample_latent<R: Rng + ?Sized>(&self, j: usize, rng: &mut R) -> Vec<f64> {
        let n = self.latent_dim();
        let mut z = vec![0.0; n];
        let mut out = vec![0.0; n];
        self.marginals[j].apply(&self.initial_latent, rng, &mut z, &mut out);
        out
    }

    /// Fills one path (all dates, row-major `[date][component]`).
    pub fn fill_path<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let dim = self.state_dim();
        let n = self.latent_dim();
        let mut latent = self.initial_latent.clone();
        let mut next = vec![0.0; n];
        let mut z = vec![0.0; n];
        self.observe(0, &latent, &mut out[..dim]);
        for j in 0..self.steps() {
            self.transitions[j].apply(&latent, rng, &mut z, &mut next);
            std::mem::swap(&mut latent, &mut next);
            self.observe(j + 1, &latent, &mut out[(j + 1) * dim..(j + 2) * dim]);
        }
    }

    /// Forward curves are martingales by construction; GBM only without drift.
    pub fn is_martingale(&self) -> bool {
        match &self.dynamics {
            Dynamics::Forward { .. } => true,
            Dynamics::Gbm { assets } => assets.iter().all(|a| a.drift == 0.0),
        }
    }

    /// Variance of `log F^i_T` (forward model) or `log S^i_T` (GBM).
    pub fn terminal_log_variance(&self, i: usize) -> f64 {
        let t = self.maturity();
        match &self.dynamics {
            Dynamics::Forward { assets, .. } => {
                let (s, a) = (assets[i].volatility, assets[i].mean_reversion);
                s * s * exp_integral(2.0 * a, t)
            }
            Dynamics::Gbm { assets } => assets[i].volatility.powi(2) * t,
        }
    }

    /// Analytic variance of the volume factor at date `j`.
    pub fn volume_variance(&self, j: usize) -> Option<f64> {
        match &self.dynamics {
            Dynamics::Forward { volume, .. } => {
                Some(volume.volatility.powi(2) * exp_integral(2.0 * volume.mean_reversion, self.dates[j]))
            }
            Dynamics::Gbm { .. } => None,
        }
    }

    /// Initial tradable prices `F_{t_0}`.
    pub fn initial_prices(&self) -> Vec<f64> {
        self.initial_state()[..self.n_tradable()].to_vec()
    }

    /// Copy of the market with every volatility set to zero.
    pub fn deterministic(&self) -> Result<Self> {
        match &self.dynamics {
            Dynamics::Forward { assets, volume, .. } => {
                let assets = assets.iter().map(|a| ForwardParams { volatility: 0.0, ..a.clone() }).collect();
                let volume = VolumeParams { volatility: 0.0, ..volume.clone() };
                Self::forward(assets, volume, self.correlation.clone(), self.dates.clone(), self.time_unit)
            }
            Dynamics::Gbm { assets } => {
                let assets = assets.iter().map(|a| GbmParams { volatility: 0.0, ..a.clone() }).collect();
                Self::gbm(assets, self.correlation.clone(), self.dates.clone(), self.time_unit)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Domain;
    use crate::simulator::Simulator;

    fn case1_market(steps: usize) -> Market {
        let rho = CorrelationSpec::from_pairs(3, &[(0, 1, 0.7)]).unwrap();
        Market::forward(
            vec![
                ForwardParams { initial: 40.0, volatility: 0.004136, mean_reversion: 0.0002 },
                ForwardParams { initial: 30.0, volatility: 0.003137, mean_reversion: 0.0001 },
            ],
            VolumeParams::constant(1.0),
            rho,
            uniform_dates(2160.0, steps),
            TimeUnit::Hours,
        )
        .unwrap()
    }

    #[test]
    fn cholesky_reconstructs_matrix() {
        let m = [4.0, 2.0, 0.4, 2.0, 5.0, 1.0, 0.4, 1.0, 3.0];
        let l = Cholesky::factor(&m, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| l.lower()[i * 3 + k] * l.lower()[j * 3 + k]).sum();
                assert!((v - m[i * 3 + j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn cholesky_accepts_rank_deficient_psd() {
        // Perfectly correlated pair plus an independent third factor.
        let m = [1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let l = Cholesky::factor(&m, 3).unwrap();
        let mut out = [0.0; 3];
        l.apply(&[0.3, 9.0, -1.0], &mut out);
        assert_eq!(out, [0.3, 0.3, -1.0]);
    }

    #[test]
    fn non_psd_correlation_is_rejected() {
        let err = CorrelationSpec::from_pairs(3, &[(0, 1, 0.9), (0, 2, 0.9), (1, 2, -0.9)]);
        assert!(matches!(err, Err(Error::NotPsd { .. })));
    }

    #[test]
    fn invalid_correlations_are_config_errors() {
        assert!(CorrelationSpec::new(&[vec![1.0, 0.5], vec![0.4, 1.0]]).is_err());
        assert!(CorrelationSpec::new(&[vec![1.0, 1.5], vec![1.5, 1.0]]).is_err());
        assert!(CorrelationSpec::new(&[vec![0.9, 0.0], vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn zero_volatility_forward_is_constant() {
        let m = case1_market(14).deterministic().unwrap();
        let p = m.simulate(3, 1, Domain::Test, 0);
        for path in 0..3 {
            for j in 0..=14 {
                assert_eq!(p.state(path, j), &[40.0, 30.0, 1.0]);
            }
        }
    }

    #[test]
    fn deterministic_volume_decays_to_seasonal_mean() {
        let rho = CorrelationSpec::identity(2);
        let volume = VolumeParams { initial: 2.0, volatility: 0.0, mean_reversion: 0.3, seasonal: Some(vec![1.0; 5]) };
        let fwd = ForwardParams { initial: 10.0, volatility: 0.0, mean_reversion: 0.1 };
        let m = Market::forward(vec![fwd], volume, rho, uniform_dates(4.0, 4), TimeUnit::Days).unwrap();
        let p = m.simulate(1, 0, Domain::Test, 0);
        for j in [1usize, 3] {
            let expected = 1.0 + (-0.3 * j as f64).exp();
            assert!((p.state(0, j)[1] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn simulation_is_reproducible_and_order_independent() {
        let m = case1_market(14);
        let all = m.simulate(10, 42, Domain::Train, 0);
        let again = m.simulate(10, 42, Domain::Train, 0);
        assert_eq!(all, again);
        let tail = m.simulate(4, 42, Domain::Train, 6);
        assert_eq!(all.path(7), tail.path(1));
    }
}
