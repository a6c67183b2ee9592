//! Path sources shared by the trainers: the Gaussian market models and a
//! small trinomial market used for exact oracles.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::market::Market;
use crate::paths::{NormAccumulator, NormStats, PathSet};
use crate::rng::{substream, Domain};

/// Anything that can draw state trajectories on a fixed date grid.
pub trait Simulator: Sync {
    fn dates(&self) -> &[f64];

    fn n_tradable(&self) -> usize;

    fn state_dim(&self) -> usize;

    /// Whether every tradable price is a martingale.
    fn is_martingale(&self) -> bool;

    /// Fills one path, row-major `[date][component]`.
    fn fill_path(&self, rng: &mut ChaCha8Rng, out: &mut [f64]);

    /// Draws the state at date `j` from its law seen from `t_0`, then the
    /// state at `j+1` conditionally on it.
    fn fill_pair(&self, j: usize, rng: &mut ChaCha8Rng, now: &mut [f64], next: &mut [f64]);

    fn steps(&self) -> usize {
        self.dates().len() - 1
    }

    /// Simulates `n_paths` paths; path `i` uses substream `first_index + i`
    /// of `(seed, domain)`, so any sub-range can be regenerated on its own.
    fn simulate(&self, n_paths: usize, seed: u64, domain: Domain, first_index: u64) -> PathSet {
        let dates = self.dates().to_vec();
        let stride = dates.len() * self.state_dim();
        let mut data = vec![0.0; n_paths * stride];
        data.par_chunks_mut(stride).enumerate().for_each(|(i, chunk)| {
            let mut rng = substream(seed, domain, first_index + i as u64);
            self.fill_path(&mut rng, chunk);
        });
        PathSet::from_parts(dates, self.n_tradable(), self.state_dim(), n_paths, data, seed)
    }

    /// `n` independent `(S_{t_j}, S_{t_{j+1}})` pairs as two `[n, dim]` arrays.
    fn simulate_pairs(&self, j: usize, n: usize, seed: u64, domain: Domain, first_index: u64) -> (Vec<f64>, Vec<f64>) {
        let dim = self.state_dim();
        let mut now = vec![0.0; n * dim];
        let mut next = vec![0.0; n * dim];
        now.par_chunks_mut(dim).zip(next.par_chunks_mut(dim)).enumerate().for_each(|(i, (a, b))| {
            let mut rng = substream(seed, domain, first_index + i as u64);
            self.fill_pair(j, &mut rng, a, b);
        });
        (now, next)
    }

    /// Runs `f` over consecutive simulated blocks of at most `block` paths.
    fn for_each_block(&self, n_paths: usize, block: usize, seed: u64, domain: Domain, f: &mut dyn FnMut(&PathSet)) {
        let mut start = 0;
        while start < n_paths {
            let len = block.min(n_paths - start);
            f(&self.simulate(len, seed, domain, start as u64));
            start += len;
        }
    }

    /// Normalization statistics over `n_paths` paths of the given stream,
    /// simulated in blocks so memory stays bounded.
    fn norm_stats(&self, n_paths: usize, seed: u64, domain: Domain) -> Result<NormStats> {
        if n_paths == 0 {
            return Err(Error::config("normalization needs at least one path"));
        }
        const BLOCK: usize = 10_000;
        let mut acc = NormAccumulator::new(self.dates().len(), self.state_dim());
        self.for_each_block(n_paths, BLOCK, seed, domain, &mut |p| acc.add_mean(p));
        acc.finish_mean();
        self.for_each_block(n_paths, BLOCK, seed, domain, &mut |p| acc.add_var(p));
        Ok(acc.finish())
    }
}

impl Simulator for Market {
    fn dates(&self) -> &[f64] {
        Market::dates(self)
    }

    fn n_tradable(&self) -> usize {
        Market::n_tradable(self)
    }

    fn state_dim(&self) -> usize {
        Market::state_dim(self)
    }

    fn is_martingale(&self) -> bool {
        Market::is_martingale(self)
    }

    fn fill_path(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        Market::fill_path(self, rng, out)
    }

    fn fill_pair(&self, j: usize, rng: &mut ChaCha8Rng, now: &mut [f64], next: &mut [f64]) {
        let latent = self.sample_latent(j, rng);
        self.observe(j, &latent, now);
        let stepped = self.step_latent(j, &latent, rng);
        self.observe(j + 1, &stepped, next);
    }
}

/// One asset moving by `-step`, `0` or `+step` between dates with the
/// given probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct TrinomialMarket {
    initial: f64,
    step: f64,
    probs: [f64; 3],
    dates: Vec<f64>,
}

impl TrinomialMarket {
    pub fn new(initial: f64, step: f64, probs: [f64; 3], dates: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::config("trinomial probabilities must be a distribution"));
        }
        if dates.len() < 2 || dates.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::config("dates must be strictly increasing"));
        }
        if !(step >= 0.0) || !initial.is_finite() {
            return Err(Error::config("trinomial step must be nonnegative"));
        }
        Ok(TrinomialMarket { initial, step, probs, dates })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.random();
        if u < self.probs[0] {
            -self.step
        } else if u < self.probs[0] + self.probs[1] {
            0.0
        } else {
            self.step
        }
    }

    /// Support of the one-date move with probabilities.
    pub fn moves(&self) -> [(f64, f64); 3] {
        [(-self.step, self.probs[0]), (0.0, self.probs[1]), (self.step, self.probs[2])]
    }

    pub fn initial(&self) -> f64 {
        self.initial
    }
}

impl Simulator for TrinomialMarket {
    fn dates(&self) -> &[f64] {
        &self.dates
    }

    fn n_tradable(&self) -> usize {
        1
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn is_martingale(&self) -> bool {
        self.probs[0] == self.probs[2]
    }

    fn fill_path(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        out[0] = self.initial;
        for j in 1..self.dates.len() {
            out[j] = out[j - 1] + self.draw(rng);
        }
    }

    fn fill_pair(&self, j: usize, rng: &mut ChaCha8Rng, now: &mut [f64], next: &mut [f64]) {
        let mut x = self.initial;
        for _ in 0..j {
            x += self.draw(rng);
        }
        now[0] = x;
        next[0] = x + self.draw(rng);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trinomial_paths_stay_on_the_lattice() {
        let m = TrinomialMarket::new(1.0, 0.1, [0.25, 0.5, 0.25], vec![0.0, 1.0, 2.0]).unwrap();
        let p = m.simulate(1000, 3, Domain::Test, 0);
        let mut ups = 0;
        for i in 0..p.n_paths() {
            for j in 0..2 {
                let mv = p.state(i, j + 1)[0] - p.state(i, j)[0];
                let k = (mv / 0.1).round();
                assert!((mv - 0.1 * k).abs() < 1e-12 && k.abs() <= 1.0);
                ups += usize::from(k > 0.0);
            }
        }
        assert!((ups as f64 / 2000.0 - 0.25).abs() < 0.04);
        assert!(m.is_martingale());
    }

    #[test]
    fn pairs_follow_the_transition() {
        let m = TrinomialMarket::new(1.0, 0.1, [0.25, 0.5, 0.25], vec![0.0, 1.0, 2.0]).unwrap();
        let (now, next) = m.simulate_pairs(1, 200, 1, Domain::Local, 0);
        for (a, b) in now.iter().zip(&next) {
            assert!(((b - a) / 0.1).round().abs() <= 1.0);
            assert!(((a - 1.0) / 0.1).round().abs() <= 1.0);
        }
    }
}
