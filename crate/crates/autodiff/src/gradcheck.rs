//! Central finite-difference checks of reverse-mode gradients.

use crate::error::Result;
use crate::params::ParamStore;

/// One checked coordinate of the flattened trainable vector.
#[derive(Clone, Copy, Debug)]
pub struct Probe {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheck {
    pub probes: Vec<Probe>,
}

impl GradCheck {
    /// Largest error over all probes, measured as
    /// `|a - n| / max(|a|, |n|, abs_floor / rel)`.
    ///
    /// The result is below `rel` exactly when every probe satisfies
    /// `|a - n| < rel * max(|a|, |n|)` or `|a - n| < abs_floor`.
    pub fn max_error(&self, rel: f64, abs_floor: f64) -> f64 {
        self.probes
            .iter()
            .map(|p| {
                let scale = p.analytic.abs().max(p.numeric.abs()).max(abs_floor / rel);
                (p.analytic - p.numeric).abs() / scale
            })
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, rel: f64, abs_floor: f64) -> bool {
        self.max_error(rel, abs_floor) < rel
    }
}

/// Compares `analytic` (flattened trainable gradient, see
/// [`ParamStore::flatten_trainable`]) with central differences of `objective`
/// at the listed coordinates. The store is restored before returning.
pub fn finite_difference_check(
    store: &mut ParamStore,
    analytic: &[f64],
    coords: &[usize],
    step: f64,
    mut objective: impl FnMut(&ParamStore) -> Result<f64>,
) -> Result<GradCheck> {
    let base = store.flatten_trainable();
    let mut probes = Vec::with_capacity(coords.len());
    let mut work = base.clone();
    for &i in coords {
        work[i] = base[i] + step;
        store.assign_trainable(&work)?;
        let up = objective(store)?;
        work[i] = base[i] - step;
        store.assign_trainable(&work)?;
        let down = objective(store)?;
        work[i] = base[i];
        probes.push(Probe { index: i, analytic: analytic[i], numeric: (up - down) / (2.0 * step) });
    }
    store.assign_trainable(&base)?;
    Ok(GradCheck { probes })
}
