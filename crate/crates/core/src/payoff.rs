//! Claims written on the terminal state, and the Black-Scholes benchmark.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Terminal payoff `g(S_T)`. States are laid out as `(F^1, …, F^d, V)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Payoff {
    /// `(F^1 - K)^+`
    Call { strike: f64 },
    /// `(F^1 - F^2 - K)^+`
    Spread2 { strike: f64 },
    /// `V (F^1 - mean(F^2..F^d) - K)^+`
    VolumeSpread { strike: f64 },
}

impl Payoff {
    pub fn strike(&self) -> f64 {
        match *self {
            Payoff::Call { strike } | Payoff::Spread2 { strike } | Payoff::VolumeSpread { strike } => strike,
        }
    }

    /// Checks that the payoff can be evaluated on states with `n_tradable`
    /// prices and `dim` components in total.
    pub fn validate(&self, n_tradable: usize, dim: usize) -> Result<()> {
        if !self.strike().is_finite() {
            return Err(Error::config("payoff strike must be finite"));
        }
        let ok = match self {
            Payoff::Call { .. } => n_tradable >= 1,
            Payoff::Spread2 { .. } => n_tradable >= 2,
            Payoff::VolumeSpread { .. } => n_tradable >= 2 && dim > n_tradable,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!(
                "payoff {self:?} cannot be evaluated on {n_tradable} tradable assets and {dim} state components"
            )))
        }
    }

    /// `g(S_T)` for a state with `n_tradable` leading prices.
    pub fn value(&self, state: &[f64], n_tradable: usize) -> Result<f64> {
        self.validate(n_tradable, state.len())?;
        Ok(self.value_unchecked(state, n_tradable))
    }

    pub(crate) fn value_unchecked(&self, s: &[f64], n_tradable: usize) -> f64 {
        match *self {
            Payoff::Call { strike } => (s[0] - strike).max(0.0),
            Payoff::Spread2 { strike } => (s[0] - s[1] - strike).max(0.0),
            Payoff::VolumeSpread { strike } => {
                let others = s[1..n_tradable].iter().sum::<f64>() / (n_tradable - 1) as f64;
                s[n_tradable] * (s[0] - others - strike).max(0.0)
            }
        }
    }
}

/// Standard normal cumulative distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Black-Scholes call delta `N(d1)` at zero rates.
///
/// At `tau = 0` the delta is the exercise indicator, 0.5 at the money.
pub fn bs_delta(spot: f64, strike: f64, vol: f64, tau: f64) -> f64 {
    if tau <= 0.0 || vol <= 0.0 {
        return if spot > strike {
            1.0
        } else if spot < strike {
            0.0
        } else {
            0.5
        };
    }
    let sd = vol * tau.sqrt();
    let d1 = ((spot / strike).ln() + 0.5 * sd * sd) / sd;
    normal_cdf(d1)
}

/// Black-Scholes call price at zero rates.
pub fn bs_call_price(spot: f64, strike: f64, vol: f64, tau: f64) -> f64 {
    if tau <= 0.0 || vol <= 0.0 {
        return (spot - strike).max(0.0);
    }
    let sd = vol * tau.sqrt();
    let d1 = ((spot / strike).ln() + 0.5 * sd * sd) / sd;
    spot * normal_cdf(d1) - strike * normal_cdf(d1 - sd)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payoff_examples() {
        let spread = Payoff::VolumeSpread { strike: 10.0 };
        assert_eq!(spread.value(&[40.0, 30.0, 1.0], 2).unwrap(), 0.0);
        assert_eq!(spread.value(&[45.0, 30.0, 2.0], 2).unwrap(), 10.0);
        let call = Payoff::Call { strike: 1.0 };
        assert!((call.value(&[1.3], 1).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(Payoff::Spread2 { strike: 0.5 }.value(&[1.2, 0.5], 2).unwrap(), 0.19999999999999996);
    }

    #[test]
    fn three_asset_spread_uses_mean_of_others() {
        let spread = Payoff::VolumeSpread { strike: 10.0 };
        let v = spread.value(&[50.0, 35.0, 25.0, 1.5], 3).unwrap();
        assert_eq!(v, 1.5 * (50.0 - 30.0 - 10.0));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        assert!(Payoff::VolumeSpread { strike: 10.0 }.value(&[40.0, 30.0], 2).is_err());
        assert!(Payoff::Spread2 { strike: 0.0 }.value(&[1.0], 1).is_err());
    }

    #[test]
    fn normal_cdf_reference_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        // Values from the closed form 0.5 * erfc(-x / sqrt 2) tabulated to 16 digits.
        assert!((normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((normal_cdf(-2.5) - 0.006_209_665_325_776_132).abs() < 1e-17);
    }

    #[test]
    fn bs_delta_limits() {
        assert!(bs_delta(100.0, 1.0, 0.2, 1.0 / 12.0) > 1.0 - 1e-12);
        assert_eq!(bs_delta(0.9, 1.0, 0.2, 0.0), 0.0);
        assert_eq!(bs_delta(1.0, 1.0, 0.2, 0.0), 0.5);
        assert_eq!(bs_delta(1.1, 1.0, 0.2, 0.0), 1.0);
    }
}
