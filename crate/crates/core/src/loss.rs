//! Risk criteria on the terminal hedging error `Y = X_T - g(S_T)`.
//!
//! Every criterion exists twice: on plain samples for scoring, and on the
//! autodiff tape for training. Both follow the same formulas.

use deephedge_autodiff::{Tape, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Guard under the square root of the mean-cost/variance criterion.
pub const SQRT_GUARD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossSpec {
    /// `E[Y²]`
    Mse,
    /// `E[(1+α) Y² 1{Y≤0} + Y² 1{Y≥0}]`
    Asym { alpha: f64 },
    /// `E[Y² 1{Y≥0}] + α E[Y⁴ 1{Y≤0}]`
    M2m4 { alpha: f64 },
    /// `(1-α) E[cost] + α sqrt(E[Y²])`
    MeanCostVariance { alpha: f64 },
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::Mse => Ok(()),
            LossSpec::Asym { alpha } if alpha.is_finite() && alpha > -1.0 => Ok(()),
            LossSpec::M2m4 { alpha } if alpha.is_finite() && alpha >= 1.0 => Ok(()),
            LossSpec::MeanCostVariance { alpha } if (0.0..=1.0).contains(&alpha) => Ok(()),
            other => Err(Error::config(format!("loss parameter out of range: {other:?}"))),
        }
    }

    pub fn needs_costs(&self) -> bool {
        matches!(self, LossSpec::MeanCostVariance { .. })
    }

    /// The same criterion with a different weight (no-op for `Mse`).
    pub fn with_alpha(self, alpha: f64) -> Self {
        match self {
            LossSpec::Mse => LossSpec::Mse,
            LossSpec::Asym { .. } => LossSpec::Asym { alpha },
            LossSpec::M2m4 { .. } => LossSpec::M2m4 { alpha },
            LossSpec::MeanCostVariance { .. } => LossSpec::MeanCostVariance { alpha },
        }
    }

    /// Short label used in reports, e.g. `asym(1)`.
    pub fn label(&self) -> String {
        match self {
            LossSpec::Mse => "mse".into(),
            LossSpec::Asym { alpha } => format!("asym({alpha})"),
            LossSpec::M2m4 { alpha } => format!("m2m4({alpha})"),
            LossSpec::MeanCostVariance { alpha } => format!("mean_cost_variance({alpha})"),
        }
    }

    /// Per-sample contribution for the criteria that are plain sample means.
    pub fn pointwise(&self, y: f64) -> Option<f64> {
        match *self {
            LossSpec::Mse => Some(y * y),
            LossSpec::Asym { alpha } => {
                let loss_part = y.min(0.0);
                Some(y * y + alpha * loss_part * loss_part)
            }
            LossSpec::M2m4 { alpha } => {
                let gain = y.max(0.0);
                let loss = y.min(0.0);
                Some(gain * gain + alpha * loss.powi(4))
            }
            LossSpec::MeanCostVariance { .. } => None,
        }
    }
}

/// Empirical value of the criterion on a sample.
pub fn loss_value(spec: &LossSpec, y: &[f64], costs: Option<&[f64]>) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::config("loss of an empty sample"));
    }
    let n = y.len() as f64;
    match *spec {
        LossSpec::MeanCostVariance { alpha } => {
            let costs = costs.ok_or_else(|| Error::config("mean_cost_variance needs per-path transaction costs"))?;
            if costs.len() != y.len() {
                return Err(Error::Dimension { context: "loss costs", expected: y.len(), found: costs.len() });
            }
            let mean_cost = costs.iter().sum::<f64>() / n;
            let mse = y.iter().map(|v| v * v).sum::<f64>() / n;
            Ok((1.0 - alpha) * mean_cost + alpha * (mse + SQRT_GUARD).sqrt())
        }
        _ => Ok(y.iter().map(|&v| spec.pointwise(v).unwrap()).sum::<f64>() / n),
    }
}

/// Criterion on the tape; `y` and `costs` are `[batch, 1]` columns.
pub fn loss_on_tape(tape: &mut Tape, spec: &LossSpec, y: Var, costs: Option<Var>) -> Result<Var> {
    let out = match *spec {
        LossSpec::Mse => {
            let sq = tape.square(y)?;
            tape.mean(sq)?
        }
        LossSpec::Asym { alpha } => {
            // min(Y, 0)² = relu(-Y)²; relu'(0) = 0 takes the Y < 0 branch value at 0.
            let sq = tape.square(y)?;
            let neg = tape.neg(y)?;
            let losses = tape.relu(neg)?;
            let lsq = tape.square(losses)?;
            let weighted = tape.scale(lsq, alpha)?;
            let total = tape.add(sq, weighted)?;
            tape.mean(total)?
        }
        LossSpec::M2m4 { alpha } => {
            let gains = tape.relu(y)?;
            let gsq = tape.square(gains)?;
            let neg = tape.neg(y)?;
            let losses = tape.relu(neg)?;
            let l2 = tape.square(losses)?;
            let l4 = tape.square(l2)?;
            let weighted = tape.scale(l4, alpha)?;
            let total = tape.add(gsq, weighted)?;
            tape.mean(total)?
        }
        LossSpec::MeanCostVariance { alpha } => {
            let costs = costs.ok_or_else(|| Error::config("mean_cost_variance needs per-path transaction costs"))?;
            let sq = tape.square(y)?;
            let mse = tape.mean(sq)?;
            let guarded = tape.add_const(mse, SQRT_GUARD)?;
            let risk = tape.sqrt(guarded)?;
            let risk = tape.scale(risk, alpha)?;
            let mean_cost = tape.mean(costs)?;
            let cost_term = tape.scale(mean_cost, 1.0 - alpha)?;
            tape.add(cost_term, risk)?
        }
    };
    Ok(out)
}
