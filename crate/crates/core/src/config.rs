//! Experiment files: one TOML document describing the market, the claim, the
//! strategy, its training and its evaluation, plus the built-in presets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hedge::CostModel;
use crate::local::{LocalAlgorithm, LocalConfig};
use crate::loss::LossSpec;
use crate::market::{uniform_dates, CorrelationSpec, ForwardParams, GbmParams, Market, TimeUnit, VolumeParams};
use crate::payoff::Payoff;
use crate::policy::{Architecture, PolicyConfig};
use crate::train::{ParetoMode, TrainConfig};

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 8] =
    ["bs_call_table1", "spread2_table2", "case1", "case2", "case3", "case1_fine", "pareto_case2", "pareto_case3"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MarketConfig {
    /// Mean-reverting forwards with a volume factor; the correlation matrix
    /// is over the assets followed by the volume.
    Forward {
        time_unit: TimeUnit,
        maturity: f64,
        steps: usize,
        assets: Vec<ForwardParams>,
        volume: VolumeParams,
        correlation: Vec<Vec<f64>>,
    },
    Gbm {
        time_unit: TimeUnit,
        maturity: f64,
        steps: usize,
        assets: Vec<GbmParams>,
        correlation: Vec<Vec<f64>>,
    },
}

impl MarketConfig {
    pub fn build(&self) -> Result<Market> {
        match self {
            MarketConfig::Forward { time_unit, maturity, steps, assets, volume, correlation } => Market::forward(
                assets.clone(),
                volume.clone(),
                CorrelationSpec::new(correlation)?,
                dates(*maturity, *steps)?,
                *time_unit,
            ),
            MarketConfig::Gbm { time_unit, maturity, steps, assets, correlation } => {
                Market::gbm(assets.clone(), CorrelationSpec::new(correlation)?, dates(*maturity, *steps)?, *time_unit)
            }
        }
    }

    pub fn n_assets(&self) -> usize {
        match self {
            MarketConfig::Forward { assets, .. } => assets.len(),
            MarketConfig::Gbm { assets, .. } => assets.len(),
        }
    }
}

fn dates(maturity: f64, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 || !(maturity > 0.0 && maturity.is_finite()) {
        return Err(Error::config("maturity must be positive and steps at least 1"));
    }
    Ok(uniform_dates(maturity, steps))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Global,
    Local1,
    Local2,
}

impl Algorithm {
    pub fn local(self) -> Option<LocalAlgorithm> {
        match self {
            Algorithm::Global => None,
            Algorithm::Local1 => Some(LocalAlgorithm::Algo1),
            Algorithm::Local2 => Some(LocalAlgorithm::Algo2),
        }
    }
}

fn d_local() -> LocalConfig {
    LocalConfig::new(LocalAlgorithm::Algo1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub algorithm: Algorithm,
    #[serde(default)]
    pub global: TrainConfig,
    /// Settings of the local algorithms; their variant comes from `algorithm`.
    #[serde(default = "d_local")]
    pub local: LocalConfig,
}

fn d_sims() -> usize {
    100_000
}
fn d_alpha_points() -> usize {
    21
}
fn d_specs() -> Vec<LossSpec> {
    vec![LossSpec::Mse]
}
fn d_delta_sims() -> Vec<usize> {
    (0..10).collect()
}
fn d_kde() -> usize {
    512
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    #[serde(default = "d_sims")]
    pub n_sims: usize,
    /// Points of the α grid used by the frontier sweep.
    #[serde(default = "d_alpha_points")]
    pub alpha_points: usize,
    /// Criteria reported in `scores.csv`.
    #[serde(default = "d_specs")]
    pub specs: Vec<LossSpec>,
    /// Simulations whose positions are exported to `deltas.csv`.
    #[serde(default = "d_delta_sims")]
    pub delta_sims: Vec<usize>,
    #[serde(default = "d_kde")]
    pub kde_points: usize,
    /// KDE bandwidth; Silverman's rule when absent.
    #[serde(default)]
    pub bandwidth: Option<f64>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            n_sims: d_sims(),
            alpha_points: d_alpha_points(),
            specs: d_specs(),
            delta_sims: d_delta_sims(),
            kde_points: d_kde(),
            bandwidth: None,
        }
    }
}

fn d_eval_seed() -> u64 {
    1
}
fn d_sim_seed() -> u64 {
    7
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedsConfig {
    /// Seed of the network initializations and training batches.
    #[serde(default)]
    pub train: u64,
    /// Seed of the common evaluation simulations.
    #[serde(default = "d_eval_seed")]
    pub evaluation: u64,
    /// Seed of the `simulate` command.
    #[serde(default = "d_sim_seed")]
    pub simulation: u64,
}

impl Default for SeedsConfig {
    fn default() -> Self {
        SeedsConfig { train: 0, evaluation: d_eval_seed(), simulation: d_sim_seed() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub market: MarketConfig,
    pub payoff: Payoff,
    pub policy: PolicyConfig,
    pub training: TrainingConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub seeds: SeedsConfig,
    /// Proportional transaction costs; none when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub costs: Option<CostModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

impl ExperimentConfig {
    /// Checks every block and that the market can be built.
    pub fn validate(&self) -> Result<()> {
        let market = self.market.build()?;
        let d = market.n_tradable();
        self.payoff.validate(d, market.state_dim())?;
        self.policy.validate(d)?;
        self.training.global.validate()?;
        self.local_config().validate()?;
        if let Some(c) = &self.costs {
            c.validate(d)?;
        }
        if self.training.global.pareto != ParetoMode::Off {
            if !self.policy.alpha_conditioned {
                return Err(Error::config("pareto training needs policy.alpha_conditioned = true"));
            }
            if self.costs.as_ref().is_none_or(CostModel::is_free) {
                return Err(Error::config("pareto training needs non-zero transaction costs"));
            }
        }
        if self.training.global.loss.needs_costs() && self.costs.is_none() {
            return Err(Error::config("mean_cost_variance needs a [costs] block"));
        }
        if self.training.algorithm.local().is_some() {
            if self.policy.liquidity.is_none() {
                return Err(Error::config("local algorithms need policy.liquidity"));
            }
            if self.costs.as_ref().is_some_and(|c| !c.is_free()) {
                return Err(Error::config("local algorithms do not handle transaction costs"));
            }
        }
        let e = &self.evaluation;
        if e.n_sims == 0 || e.kde_points < 2 || e.alpha_points == 0 {
            return Err(Error::config("evaluation needs n_sims >= 1, kde_points >= 2, alpha_points >= 1"));
        }
        if e.bandwidth.is_some_and(|h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::config("evaluation.bandwidth must be positive"));
        }
        for s in &e.specs {
            s.validate()?;
            if s.needs_costs() && self.costs.is_none() {
                return Err(Error::config("mean_cost_variance scores need a [costs] block"));
            }
        }
        Ok(())
    }

    pub fn build_market(&self) -> Result<Market> {
        self.market.build()
    }

    pub fn cost_model(&self) -> CostModel {
        self.costs.clone().unwrap_or_else(|| CostModel::free(self.market.n_assets()))
    }

    /// Global trainer settings with the configured training seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seeds.train, ..self.training.global.clone() }
    }

    /// Local trainer settings with the configured variant and seed.
    pub fn local_config(&self) -> LocalConfig {
        LocalConfig {
            algorithm: self.training.algorithm.local().unwrap_or(LocalAlgorithm::Algo1),
            seed: self.seeds.train,
            ..self.training.local.clone()
        }
    }

    pub fn seeds_map(&self) -> BTreeMap<String, u64> {
        BTreeMap::from([
            ("train".to_string(), self.seeds.train),
            ("evaluation".to_string(), self.seeds.evaluation),
            ("simulation".to_string(), self.seeds.simulation),
        ])
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Parses a document; a top-level `preset = "name"` key supplies
    /// defaults that the rest of the document overrides table by table.
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with(text, &[])
    }

    /// As [`from_toml`](Self::from_toml), then applies `path=value`
    /// overrides, and validates.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self> {
        Self::load_toml(text, overrides, false)
    }

    /// Parses a document, optionally reduces it to quick budgets, then
    /// applies overrides (which win over the quick budgets) and validates.
    pub fn load_toml(text: &str, overrides: &[String], quick: bool) -> Result<Self> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        let base = match doc.remove("preset") {
            Some(toml::Value::String(name)) => Some(preset_table(&name)?),
            Some(other) => return Err(Error::config(format!("preset must be a string, got {other}"))),
            None => None,
        };
        let mut value = toml::Value::Table(doc);
        if let Some(mut b) = base {
            merge(&mut b, value);
            value = b;
        }
        finish(value, overrides, quick)
    }

    /// A preset with `path=value` overrides applied, validated.
    pub fn preset_with(name: &str, overrides: &[String]) -> Result<Self> {
        Self::load_preset(name, overrides, false)
    }

    /// As [`load_toml`](Self::load_toml) for a preset.
    pub fn load_preset(name: &str, overrides: &[String], quick: bool) -> Result<Self> {
        finish(preset_table(name)?, overrides, quick)
    }

    /// Reduced budgets for smoke runs: fewer iterations and simulations.
    pub fn quick(&mut self) {
        let g = &mut self.training.global;
        g.n_iter = if g.pareto == ParetoMode::Off { 2000 } else { 30_000 };
        g.eval_every = g.eval_every.min(g.n_iter);
        g.test_set_size = g.test_set_size.min(2000);
        g.norm_size = g.norm_size.min(20_000);
        self.training.local.runs = self.training.local.runs.min(2);
        self.training.local.iterations = Some(500);
        self.training.local.norm_size = self.training.local.norm_size.min(20_000);
        self.evaluation.n_sims = self.evaluation.n_sims.min(20_000);
    }
}

fn finish(mut value: toml::Value, overrides: &[String], quick: bool) -> Result<ExperimentConfig> {
    if quick {
        let mut cfg = parse(value)?;
        cfg.quick();
        value = toml::Value::try_from(&cfg).map_err(|e| Error::config(e.to_string()))?;
    }
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let cfg = parse(value)?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse(value: toml::Value) -> Result<ExperimentConfig> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        Error::config(format!("{path}: {}", e.into_inner().to_string().trim()))
    })
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_table() && v.is_table() && !is_tagged_switch(slot, &v) => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// A table that changes its `kind` replaces the old one instead of merging.
fn is_tagged_switch(base: &toml::Value, over: &toml::Value) -> bool {
    match (base.get("kind"), over.get("kind")) {
        (Some(a), Some(b)) => a != b,
        _ => false,
    }
}

/// Applies one `a.b.0.c=value` override; the value is parsed as TOML and
/// taken as a bare string when that fails.
pub fn apply_override(doc: &mut toml::Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override {assignment:?} is not of the form path=value")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::config(format!("override path {path:?} has an empty segment")));
    }
    let mut node = doc;
    for (i, key) in keys.iter().enumerate() {
        let last = i + 1 == keys.len();
        node = match node {
            toml::Value::Table(t) => {
                if last {
                    t.insert(key.to_string(), value);
                    return Ok(());
                }
                t.entry(key.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()))
            }
            toml::Value::Array(a) => {
                let k: usize = key
                    .parse()
                    .map_err(|_| Error::config(format!("override path {path:?}: {key:?} is not an index")))?;
                let len = a.len();
                let slot = a
                    .get_mut(k)
                    .ok_or_else(|| Error::config(format!("override path {path:?}: index {k} out of range ({len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(Error::config(format!("override path {path:?}: {key:?} is not inside a table"))),
        };
    }
    unreachable!("the loop returns on the last key")
}

fn preset_table(name: &str) -> Result<toml::Value> {
    let cfg = preset(name)?;
    toml::Value::try_from(&cfg).map_err(|e| Error::config(e.to_string()))
}

fn fwd(initial: f64, volatility: f64, mean_reversion: f64) -> ForwardParams {
    ForwardParams { initial, volatility, mean_reversion }
}

fn correlation(n: usize, pairs: &[(usize, usize, f64)]) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; n]; n];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for &(i, j, r) in pairs {
        m[i][j] = r;
        m[j][i] = r;
    }
    m
}

fn spread_case(name: &str, steps: usize, liquidity: f64, case3: bool, volume_risk: bool) -> ExperimentConfig {
    let mut assets = vec![fwd(40.0, 0.004136, 0.0002)];
    let pairs = if case3 {
        assets.push(fwd(35.0, 0.003137, 0.0001));
        assets.push(fwd(25.0, 0.005136, 0.0001));
        vec![(0, 1, 0.7), (0, 2, 0.3), (1, 2, 0.5)]
    } else {
        assets.push(fwd(30.0, 0.003137, 0.0001));
        if volume_risk {
            vec![(0, 1, 0.7), (0, 2, 0.2), (1, 2, 0.2)]
        } else {
            vec![(0, 1, 0.7)]
        }
    };
    let d = assets.len();
    let volume = if volume_risk {
        VolumeParams { initial: 1.0, volatility: 0.02, mean_reversion: 0.02, seasonal: None }
    } else {
        VolumeParams::constant(1.0)
    };
    ExperimentConfig {
        name: name.to_string(),
        market: MarketConfig::Forward {
            time_unit: TimeUnit::Hours,
            maturity: 2160.0,
            steps,
            assets,
            volume,
            correlation: correlation(d + 1, &pairs),
        },
        payoff: Payoff::VolumeSpread { strike: 10.0 },
        policy: PolicyConfig { liquidity: Some(vec![liquidity; d]), ..PolicyConfig::new(Architecture::AugmentedLstm) },
        training: TrainingConfig { algorithm: Algorithm::Global, global: TrainConfig::default(), local: d_local() },
        evaluation: EvaluationConfig::default(),
        seeds: SeedsConfig::default(),
        costs: None,
        output_dir: None,
    }
}

fn pareto_case(name: &str, base: &str) -> ExperimentConfig {
    let mut cfg = preset(base).expect("base preset exists");
    cfg.name = name.to_string();
    let d = cfg.market.n_assets();
    cfg.policy.hidden = vec![50, 50, 50];
    cfg.policy.alpha_conditioned = true;
    cfg.policy.train_premium = false;
    cfg.training.global.n_iter = 100_000;
    cfg.training.global.loss = LossSpec::MeanCostVariance { alpha: 1.0 };
    cfg.training.global.pareto = ParetoMode::SobolAlpha;
    cfg.costs = Some(CostModel::uniform(d, 0.02));
    cfg
}

/// Fully expanded preset configuration.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let cfg = match name {
        "bs_call_table1" => ExperimentConfig {
            name: name.into(),
            market: MarketConfig::Gbm {
                time_unit: TimeUnit::Years,
                maturity: 1.0 / 12.0,
                steps: 30,
                assets: vec![GbmParams { initial: 1.0, drift: 0.0, volatility: 0.2 }],
                correlation: vec![vec![1.0]],
            },
            payoff: Payoff::Call { strike: 1.0 },
            policy: PolicyConfig::new(Architecture::AugmentedLstm),
            training: TrainingConfig { algorithm: Algorithm::Global, global: TrainConfig::default(), local: d_local() },
            evaluation: EvaluationConfig::default(),
            seeds: SeedsConfig::default(),
            costs: None,
            output_dir: None,
        },
        "spread2_table2" => ExperimentConfig {
            name: name.into(),
            market: MarketConfig::Gbm {
                time_unit: TimeUnit::Years,
                maturity: 0.25,
                steps: 90,
                assets: vec![
                    GbmParams { initial: 1.0, drift: 0.02, volatility: 0.3 },
                    GbmParams { initial: 0.5, drift: 0.02, volatility: 0.3 },
                ],
                correlation: correlation(2, &[(0, 1, 0.2)]),
            },
            payoff: Payoff::Spread2 { strike: 0.5 },
            policy: PolicyConfig::new(Architecture::AugmentedLstm),
            training: TrainingConfig { algorithm: Algorithm::Global, global: TrainConfig::default(), local: d_local() },
            evaluation: EvaluationConfig::default(),
            seeds: SeedsConfig::default(),
            costs: None,
            output_dir: None,
        },
        "case1" => spread_case(name, 14, 0.2, false, false),
        "case2" => spread_case(name, 14, 0.2, false, true),
        "case3" => spread_case(name, 14, 0.2, true, false),
        "case1_fine" => spread_case(name, 28, 0.15, false, false),
        "pareto_case2" => pareto_case(name, "case2"),
        "pareto_case3" => pareto_case(name, "case3"),
        other => return Err(Error::config(format!("unknown preset {other:?}; available: {}", PRESETS.join(", ")))),
    };
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_expand_validate_and_round_trip() {
        for name in PRESETS {
            let cfg = preset(name).unwrap();
            cfg.validate().unwrap();
            let text = cfg.to_toml().unwrap();
            let back = ExperimentConfig::from_toml(&text).unwrap();
            assert_eq!(back, cfg, "{name}");
            assert_eq!(back.to_toml().unwrap(), text, "{name}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_path() {
        let err = ExperimentConfig::from_toml("preset = \"case1\"\n[policy]\nhiden = [3]\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("policy") && msg.contains("hiden"), "{msg}");
        assert!(ExperimentConfig::from_toml("preset = \"case9\"").is_err());
    }

    #[test]
    fn overrides_reach_nested_arrays() {
        let cfg = ExperimentConfig::preset_with(
            "case1",
            &["market.assets.0.volatility=0".into(), "training.global.n_iter=5".into(), "name=x".into()],
        )
        .unwrap();
        match &cfg.market {
            MarketConfig::Forward { assets, .. } => assert_eq!(assets[0].volatility, 0.0),
            _ => panic!("forward market expected"),
        }
        assert_eq!(cfg.training.global.n_iter, 5);
        assert_eq!(cfg.name, "x");
        assert!(ExperimentConfig::preset_with("case1", &["market.assets.7.volatility=0".into()]).is_err());
    }

    #[test]
    fn document_overrides_preset_tables() {
        let text = "preset = \"case2\"\nname = \"mine\"\n[training.global]\nn_iter = 3\n";
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.training.global.n_iter, 3);
        assert_eq!(cfg.training.global.batch_size, 50);
        assert_eq!(cfg.policy.liquidity, Some(vec![0.2, 0.2]));
    }

    #[test]
    fn pareto_needs_costs() {
        let err = ExperimentConfig::preset_with("pareto_case2", &["costs.rates=[0.0, 0.0]".into()]);
        assert!(err.is_err());
    }
}
