//! Simulated trajectories on the hedging grid and their normalization.

use std::io::{BufRead, Write};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DHPATHS1";

/// A batch of state trajectories, stored row-major as `[path][date][component]`.
///
/// Components are the tradable prices `F^1..F^d` followed by any
/// non-tradable factors.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSet {
    dates: Vec<f64>,
    n_tradable: usize,
    dim: usize,
    n_paths: usize,
    data: Vec<f64>,
    seed: u64,
}

impl PathSet {
    pub fn new(dates: Vec<f64>, n_tradable: usize, dim: usize, data: Vec<f64>, seed: u64) -> Result<Self> {
        if dates.len() < 2 || dim == 0 || n_tradable == 0 || n_tradable > dim {
            return Err(Error::format(
                "path set",
                format!("{} dates, {dim} components, {n_tradable} tradable", dates.len()),
            ));
        }
        let stride = dates.len() * dim;
        if data.is_empty() || data.len() % stride != 0 {
            return Err(Error::Dimension { context: "path set data", expected: stride, found: data.len() });
        }
        let n_paths = data.len() / stride;
        Ok(Self::from_parts(dates, n_tradable, dim, n_paths, data, seed))
    }

    pub(crate) fn from_parts(
        dates: Vec<f64>,
        n_tradable: usize,
        dim: usize,
        n_paths: usize,
        data: Vec<f64>,
        seed: u64,
    ) -> Self {
        debug_assert_eq!(data.len(), n_paths * dates.len() * dim);
        Self { dates, n_tradable, dim, n_paths, data, seed }
    }

    pub fn dates(&self) -> &[f64] {
        &self.dates
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    /// Number of hedging intervals.
    pub fn steps(&self) -> usize {
        self.dates.len() - 1
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_tradable(&self) -> usize {
        self.n_tradable
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access for path surgery in tests and what-if studies.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// All dates of one path.
    pub fn path(&self, p: usize) -> &[f64] {
        let stride = self.dates.len() * self.dim;
        &self.data[p * stride..(p + 1) * stride]
    }

    pub fn state(&self, p: usize, j: usize) -> &[f64] {
        let start = (p * self.dates.len() + j) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn state_mut(&mut self, p: usize, j: usize) -> &mut [f64] {
        let start = (p * self.dates.len() + j) * self.dim;
        &mut self.data[start..start + self.dim]
    }

    /// Tradable prices of one path at one date.
    pub fn prices(&self, p: usize, j: usize) -> &[f64] {
        &self.state(p, j)[..self.n_tradable]
    }

    /// Contiguous sub-range of paths.
    pub fn slice(&self, start: usize, len: usize) -> PathSet {
        let stride = self.dates.len() * self.dim;
        let data = self.data[start * stride..(start + len) * stride].to_vec();
        Self::from_parts(self.dates.clone(), self.n_tradable, self.dim, len, data, self.seed)
    }

    /// Paths at the given indices, in that order.
    pub fn select(&self, indices: &[usize]) -> PathSet {
        let mut data = Vec::with_capacity(indices.len() * self.dates.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.path(i));
        }
        Self::from_parts(self.dates.clone(), self.n_tradable, self.dim, indices.len(), data, self.seed)
    }

    fn component_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (1..=self.n_tradable).map(|i| format!("F{i}")).collect();
        match self.dim - self.n_tradable {
            0 => {}
            1 => names.push("V".into()),
            extra => names.extend((1..=extra).map(|k| format!("X{k}"))),
        }
        names
    }

    /// Little-endian binary image: magic, counts, seed, dates, data.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(48 + 8 * (self.dates.len() + self.data.len()));
        out.extend_from_slice(MAGIC);
        for v in [self.n_paths as u64, self.dates.len() as u64, self.dim as u64, self.n_tradable as u64, self.seed] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.dates.iter().chain(&self.data) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 48 || &bytes[..8] != MAGIC {
            return Err(Error::format("path set binary", "bad magic or truncated header"));
        }
        let word = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap());
        let (n_paths, n_dates, dim, n_tradable, seed) =
            (word(0) as usize, word(1) as usize, word(2) as usize, word(3) as usize, word(4));
        let expected = 48 + 8 * (n_dates + n_paths * n_dates * dim);
        if bytes.len() != expected {
            return Err(Error::format("path set binary", format!("expected {expected} bytes, found {}", bytes.len())));
        }
        let floats: Vec<f64> = bytes[48..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let (dates, data) = floats.split_at(n_dates);
        Self::new(dates.to_vec(), n_tradable, dim, data.to_vec(), seed)
    }

    /// Content hash (first 16 hex digits of SHA-256 over the binary image).
    pub fn id(&self) -> String {
        let digest = Sha256::digest(self.to_bytes());
        hex::encode(digest)[..16].to_string()
    }

    /// CSV with a metadata line, a dates line and one row per `(sim, date)`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# pathset n_tradable={} seed={}", self.n_tradable, self.seed)?;
        let dates: Vec<String> = self.dates.iter().map(|d| d.to_string()).collect();
        writeln!(w, "dates,{}", dates.join(","))?;
        writeln!(w, "sim,date,{}", self.component_names().join(","))?;
        for p in 0..self.n_paths {
            for j in 0..self.dates.len() {
                write!(w, "{p},{j}")?;
                for v in self.state(p, j) {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let bad = |detail: String| Error::format("path set csv", detail);
        let mut lines = r.lines();
        let mut next = || -> Result<String> {
            lines.next().ok_or_else(|| bad("unexpected end of file".into()))?.map_err(Error::from)
        };
        let meta = next()?;
        let mut n_tradable = None;
        let mut seed = None;
        for field in meta.trim_start_matches('#').split_whitespace() {
            if let Some(v) = field.strip_prefix("n_tradable=") {
                n_tradable = v.parse::<usize>().ok();
            } else if let Some(v) = field.strip_prefix("seed=") {
                seed = v.parse::<u64>().ok();
            }
        }
        let n_tradable = n_tradable.ok_or_else(|| bad(format!("metadata line {meta:?}")))?;
        let seed = seed.ok_or_else(|| bad(format!("metadata line {meta:?}")))?;
        let dates_line = next()?;
        let dates = dates_line
            .strip_prefix("dates,")
            .ok_or_else(|| bad("missing dates line".into()))?
            .split(',')
            .map(|v| v.parse::<f64>().map_err(|e| bad(format!("date {v:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let header = next()?;
        let dim = header.split(',').count().saturating_sub(2);
        let mut data = Vec::new();
        let mut row = 0usize;
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let sim: usize = parse_field(fields.next(), &line)?;
            let date: usize = parse_field(fields.next(), &line)?;
            if sim != row / dates.len() || date != row % dates.len() {
                return Err(bad(format!("row out of order: {line:?}")));
            }
            for _ in 0..dim {
                data.push(parse_field::<f64>(fields.next(), &line)?);
            }
            row += 1;
        }
        Self::new(dates, n_tradable, dim, data, seed)
    }
}

fn parse_field<T: std::str::FromStr>(field: Option<&str>, line: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let field = field.ok_or_else(|| Error::format("csv", format!("short row {line:?}")))?;
    field.trim().parse().map_err(|e| Error::format("csv", format!("field {field:?}: {e}")))
}

/// Per-date, per-component mean and standard deviation used to normalize
/// network inputs. Components with (numerically) zero spread are flagged
/// constant and normalize to 0.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    n_dates: usize,
    dim: usize,
    mean: Vec<f64>,
    std: Vec<f64>,
    constant: Vec<bool>,
}

impl NormStats {
    /// Statistics over the first `n_norm` paths.
    pub fn compute(paths: &PathSet, n_norm: usize) -> Result<Self> {
        if n_norm == 0 || n_norm > paths.n_paths() {
            return Err(Error::config(format!(
                "normalization needs 1..={} paths, asked for {n_norm}",
                paths.n_paths()
            )));
        }
        let mut acc = NormAccumulator::new(paths.n_dates(), paths.dim());
        acc.add_mean(&paths.slice(0, n_norm));
        acc.finish_mean();
        acc.add_var(&paths.slice(0, n_norm));
        Ok(acc.finish())
    }

    pub fn from_parts(n_dates: usize, dim: usize, mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != n_dates * dim || std.len() != n_dates * dim {
            return Err(Error::Dimension {
                context: "normalization statistics",
                expected: n_dates * dim,
                found: mean.len().min(std.len()),
            });
        }
        let constant = mean.iter().zip(&std).map(|(m, s)| is_constant(*m, *s)).collect();
        Ok(Self { n_dates, dim, mean, std, constant })
    }

    pub fn n_dates(&self) -> usize {
        self.n_dates
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self, j: usize, k: usize) -> f64 {
        self.mean[j * self.dim + k]
    }

    pub fn std(&self, j: usize, k: usize) -> f64 {
        self.std[j * self.dim + k]
    }

    pub fn is_constant(&self, j: usize, k: usize) -> bool {
        self.constant[j * self.dim + k]
    }

    pub fn means(&self) -> &[f64] {
        &self.mean
    }

    pub fn stds(&self) -> &[f64] {
        &self.std
    }

    pub fn normalize_value(&self, j: usize, k: usize, x: f64) -> f64 {
        let i = j * self.dim + k;
        if self.constant[i] {
            0.0
        } else {
            (x - self.mean[i]) / self.std[i]
        }
    }

    pub fn normalize(&self, j: usize, state: &[f64], out: &mut [f64]) {
        for k in 0..self.dim {
            out[k] = self.normalize_value(j, k, state[k]);
        }
    }
}

fn is_constant(mean: f64, std: f64) -> bool {
    std <= 1e-12 * mean.abs().max(1.0)
}

/// Two-pass accumulation of normalization statistics over streamed blocks.
#[derive(Clone, Debug)]
pub struct NormAccumulator {
    n_dates: usize,
    dim: usize,
    count: usize,
    sum: Vec<f64>,
    mean: Vec<f64>,
    sq: Vec<f64>,
    var_count: usize,
}

impl NormAccumulator {
    pub fn new(n_dates: usize, dim: usize) -> Self {
        Self {
            n_dates,
            dim,
            count: 0,
            sum: vec![0.0; n_dates * dim],
            mean: vec![0.0; n_dates * dim],
            sq: vec![0.0; n_dates * dim],
            var_count: 0,
        }
    }

    pub fn add_mean(&mut self, paths: &PathSet) {
        let stride = self.n_dates * self.dim;
        for p in 0..paths.n_paths() {
            for (s, v) in self.sum.iter_mut().zip(&paths.path(p)[..stride]) {
                *s += v;
            }
        }
        self.count += paths.n_paths();
    }

    pub fn finish_mean(&mut self) {
        let n = self.count as f64;
        for (m, s) in self.mean.iter_mut().zip(&self.sum) {
            *m = s / n;
        }
    }

    pub fn add_var(&mut self, paths: &PathSet) {
        for p in 0..paths.n_paths() {
            for ((q, v), m) in self.sq.iter_mut().zip(paths.path(p)).zip(&self.mean) {
                *q += (v - m) * (v - m);
            }
        }
        self.var_count += paths.n_paths();
    }

    pub fn finish(self) -> NormStats {
        let n = self.var_count.max(1) as f64;
        let std = self.sq.iter().map(|q| (q / n).sqrt()).collect();
        NormStats::from_parts(self.n_dates, self.dim, self.mean, std).expect("accumulator shapes are consistent")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PathSet {
        let data = vec![
            1.0, 0.5, 1.1, 0.25, 0.9, 0.125, // path 0: 3 dates x 2
            1.0, 0.5, 0.7, 1e-300, 1.3, -2.5,
        ];
        PathSet::new(vec![0.0, 0.5, 1.0], 1, 2, data, 9).unwrap()
    }

    #[test]
    fn accessors_follow_layout() {
        let p = sample();
        assert_eq!(p.n_paths(), 2);
        assert_eq!(p.state(1, 2), &[1.3, -2.5]);
        assert_eq!(p.prices(0, 1), &[1.1]);
        assert_eq!(p.select(&[1]).path(0), p.path(1));
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let p = sample();
        let back = PathSet::from_bytes(&p.to_bytes()).unwrap();
        assert_eq!(p, back);
        assert_eq!(p.id(), back.id());
        assert!(PathSet::from_bytes(&p.to_bytes()[..40]).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let p = sample();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let back = PathSet::read_csv(buf.as_slice()).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn constant_component_is_flagged() {
        let p = sample();
        let stats = NormStats::compute(&p, 2).unwrap();
        assert!(stats.is_constant(0, 0) && stats.is_constant(0, 1));
        assert_eq!(stats.mean(0, 0), 1.0);
        assert_eq!(stats.normalize_value(0, 0, 123.0), 0.0);
        assert!(!stats.is_constant(1, 0));
        assert!((stats.normalize_value(1, 0, 1.1) - 1.0).abs() < 1e-12);
    }
}
