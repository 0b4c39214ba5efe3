//! Seeded synthetic benchmark: aggregate-consistent truth panels, base
//! forecasts of uneven quality, and easy/hard relative-error tables.
//!
//! Leaves follow `level + level·g·t + AR(1)` with one growth rate `g` per
//! dataset. Every node's base forecast (and each holdout forecast used for
//! its accuracy) gets additive Gaussian noise with standard deviation
//! `multiplier × e × mean|history|`, where `e` is drawn log-uniformly per
//! dataset so that the batch spans easy and hard reconciliation problems.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::baselines::{bottom_up, ols_reconcile, top_down, wls_reconcile, Proportions};
use crate::covariance::{build_q_block, build_q_diagonal, CovarianceQ, Parity, QStructure};
use crate::error::{Error, Result};
use crate::hierarchy::{HierarchySpec, SummingMatrix};
use crate::linalg::Matrix;
use crate::metrics::{
    classify_dataset, evaluate_with, relative_error_table, score_dataset, DatasetClass, ErrorMetric,
    EvaluationWeights, TableRow, DEFAULT_Q_HIGH, DEFAULT_Q_LOW,
};
use crate::panel::{holdout_size, AccuracyVector, BaseForecasts, Forecaster, SeriesPanel, DEFAULT_HOLDOUT_FRACTION};
use crate::posterior::fit_posterior;
use crate::scalar::Real;
use crate::seed::{derive_seed, rng_for};

/// The eight-node two-country, three-business-line tree used by the canonical runs.
pub fn reference_hierarchy() -> HierarchySpec {
    HierarchySpec::from_edges([
        ("Total", None),
        ("US", Some("Total")),
        ("Canada", Some("Total")),
        ("US/Cloud", Some("US")),
        ("US/Consulting", Some("US")),
        ("US/Security", Some("US")),
        ("Canada/Cloud", Some("Canada")),
        ("Canada/Consulting", Some("Canada")),
    ])
    .expect("reference hierarchy is valid")
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub hierarchy: HierarchySpec,
    pub n_datasets: usize,
    /// Inclusive range of history lengths.
    pub t_range: (usize, usize),
    pub clean_multiplier: f64,
    pub accurate_multiplier: f64,
    pub noisy_multiplier: f64,
    pub noisy_nodes: BTreeSet<String>,
    pub accurate_nodes: BTreeSet<String>,
    /// Explicit per-node multipliers, overriding the three classes above.
    pub noise_profile: BTreeMap<String, f64>,
    /// Per-dataset error scale `e`, drawn log-uniformly from this range.
    pub error_scale: (f64, f64),
    pub level_range: (f64, f64),
    pub max_growth: f64,
    pub phi: f64,
    /// Innovation sd as a fraction of the leaf level.
    pub innovation_sd: f64,
    /// Correlation of leaf innovations through one shock shared by all leaves.
    pub shock_correlation: f64,
    pub forecaster: Forecaster,
    pub holdout_fraction: f64,
    /// Internal node whose metrics drive the easy/hard split.
    pub focus_node: String,
    pub q_low: f64,
    pub q_high: f64,
    pub metric: ErrorMetric,
    pub proportions: Proportions,
    /// Parity kept by block `Q`; `None` keeps the deepest subtrees.
    pub keep_parity: Option<Parity>,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let set = |ids: &[&str]| ids.iter().map(|s| s.to_string()).collect();
        Self {
            hierarchy: reference_hierarchy(),
            n_datasets: 200,
            t_range: (24, 60),
            clean_multiplier: 0.05,
            accurate_multiplier: 0.01,
            noisy_multiplier: 1.0,
            noisy_nodes: set(&["Canada/Cloud", "Canada/Consulting"]),
            accurate_nodes: set(&["Canada", "US/Cloud", "US/Security"]),
            noise_profile: BTreeMap::new(),
            error_scale: (1e-3, 10.0),
            level_range: (50.0, 150.0),
            max_growth: 0.01,
            phi: 0.3,
            innovation_sd: 0.01,
            shock_correlation: 0.8,
            forecaster: Forecaster::AutoAr { max_order: 3 },
            holdout_fraction: DEFAULT_HOLDOUT_FRACTION,
            focus_node: "Canada".into(),
            q_low: DEFAULT_Q_LOW,
            q_high: DEFAULT_Q_HIGH,
            metric: ErrorMetric::Mare,
            proportions: Proportions::AverageOfShares,
            keep_parity: None,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_datasets == 0 {
            return Err(Error::Invalid("n_datasets must be >= 1".into()));
        }
        let (lo, hi) = self.t_range;
        if lo < 10 || lo > hi {
            return Err(Error::Invalid(format!("series length range ({lo}, {hi}) needs 10 <= min <= max")));
        }
        let (elo, ehi) = self.error_scale;
        if !(elo >= 0.0 && elo <= ehi && ehi.is_finite()) {
            return Err(Error::Invalid(format!("error scale range ({elo}, {ehi}) is invalid")));
        }
        let (llo, lhi) = self.level_range;
        if !(llo > 0.0 && llo <= lhi) {
            return Err(Error::Invalid(format!("level range ({llo}, {lhi}) must be positive")));
        }
        if !(self.phi.abs() < 1.0) || !(self.innovation_sd >= 0.0) || !(self.max_growth >= 0.0) {
            return Err(Error::Invalid("need |phi| < 1, innovation_sd >= 0 and max_growth >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.shock_correlation) {
            return Err(Error::Invalid("shock correlation must be in [0, 1]".into()));
        }
        let focus = self
            .hierarchy
            .index_of(&self.focus_node)
            .ok_or_else(|| Error::Invalid(format!("unknown focus node '{}'", self.focus_node)))?;
        if self.hierarchy.node(focus).is_leaf() {
            return Err(Error::Invalid(format!("focus node '{}' must be internal", self.focus_node)));
        }
        self.forecaster.validate()?;
        holdout_size(lo, self.holdout_fraction)?;
        self.multipliers().map(|_| ())
    }

    /// Noise multiplier for every node in hierarchy order.
    pub fn multipliers(&self) -> Result<Vec<f64>> {
        let h = &self.hierarchy;
        for id in self.noisy_nodes.iter().chain(&self.accurate_nodes).chain(self.noise_profile.keys()) {
            if h.index_of(id).is_none() {
                return Err(Error::Invalid(format!("noise profile names unknown node '{id}'")));
            }
        }
        h.ids()
            .map(|id| {
                let m = if let Some(&v) = self.noise_profile.get(id) {
                    v
                } else if self.noisy_nodes.contains(id) {
                    self.noisy_multiplier
                } else if self.accurate_nodes.contains(id) {
                    self.accurate_multiplier
                } else {
                    self.clean_multiplier
                };
                if m >= 0.0 && m.is_finite() {
                    Ok(m)
                } else {
                    Err(Error::Invalid(format!("noise multiplier for '{id}' must be finite and >= 0")))
                }
            })
            .collect()
    }

    pub fn parity(&self) -> Parity {
        self.keep_parity.unwrap_or_else(|| Parity::deepest(&self.hierarchy))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    pub index: usize,
    pub seed: u64,
    /// Aggregate-consistent truths for periods `0..T`.
    pub panel: SeriesPanel<f64>,
    /// Truth at period `T`.
    pub truth_next: Vec<f64>,
    pub base: BaseForecasts<f64>,
    /// Holdout MSEs of the same (noisy) forecasting procedure.
    pub gamma: AccuracyVector<f64>,
    pub error_scale: f64,
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Dataset `index` of the batch; a pure function of `(cfg.seed, index)`.
/// Random numbers are consumed in a fixed order that does not depend on the
/// noise multipliers, so changing one multiplier only rescales its noise.
pub fn generate_dataset(cfg: &SimConfig, index: usize) -> Result<SimDataset> {
    if index >= cfg.n_datasets {
        return Err(Error::Invalid(format!("dataset index {index} >= n_datasets {}", cfg.n_datasets)));
    }
    let mult = cfg.multipliers()?;
    let h = &cfg.hierarchy;
    let s: SummingMatrix<f64> = h.summing_matrix();
    let (m, k) = (h.m(), h.m_bottom());
    let seed = derive_seed(cfg.seed, index as u64);
    let mut rng = rng_for(cfg.seed, index as u64);

    let t_len = rng.random_range(cfg.t_range.0..=cfg.t_range.1);
    let (elo, ehi) = cfg.error_scale;
    let u = rng.random::<f64>();
    let e = if elo > 0.0 { (elo.ln() + (ehi.ln() - elo.ln()) * u).exp() } else { elo + (ehi - elo) * u };
    let growth = uniform(&mut rng, 0.0, cfg.max_growth);
    let levels: Vec<f64> = (0..k).map(|_| uniform(&mut rng, cfg.level_range.0, cfg.level_range.1)).collect();

    let common: Vec<f64> = (0..=t_len).map(|_| f64::standard_normal(&mut rng)).collect();
    let (rho, idio) = (cfg.shock_correlation.sqrt(), (1.0 - cfg.shock_correlation).sqrt());
    let mut bottom = Matrix::zeros(k, t_len + 1);
    for (j, &level) in levels.iter().enumerate() {
        let sd = cfg.innovation_sd * level;
        let mut ar = 0.0;
        for (t, &c) in common.iter().enumerate() {
            ar = cfg.phi * ar + sd * (rho * c + idio * f64::standard_normal(&mut rng));
            bottom[(j, t)] = level + level * growth * t as f64 + ar;
        }
    }
    let all = s.matrix().matmul(&bottom)?;
    let hist: Vec<Vec<f64>> = (0..m).map(|i| all.row(i)[..t_len].to_vec()).collect();
    let truth_next = all.column(t_len);

    let holdout = holdout_size(t_len, cfg.holdout_fraction)?;
    let mut gamma = vec![0.0; m];
    let mut base = vec![0.0; m];
    for i in 0..m {
        let series = &hist[i];
        let scale = series.iter().map(|v| v.abs()).sum::<f64>() / t_len as f64;
        let sd = mult[i] * e * scale;
        let mut sq = 0.0;
        for r in 1..=holdout {
            let f = cfg.forecaster.forecast(&series[..t_len - r])? + sd * f64::standard_normal(&mut rng);
            sq += (f - series[t_len - r]).powi(2);
        }
        gamma[i] = sq / holdout as f64;
        base[i] = cfg.forecaster.forecast(series)? + sd * f64::standard_normal(&mut rng);
    }

    Ok(SimDataset {
        index,
        seed,
        panel: SeriesPanel::from_rows(h, &hist)?,
        truth_next,
        base: BaseForecasts::new(base, t_len as i64)?,
        gamma: AccuracyVector::new(gamma, holdout)?,
        error_scale: e,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Setting {
    /// Equal weight on every node except the noisy ones.
    One,
    /// All weight on the focus node.
    Two,
}

impl Setting {
    pub fn weights(self, cfg: &SimConfig) -> Result<EvaluationWeights<f64>> {
        let h = &cfg.hierarchy;
        match self {
            Setting::One => {
                let kept: Vec<&str> = h.ids().filter(|id| !cfg.noisy_nodes.contains(*id)).collect();
                if kept.is_empty() {
                    return Err(Error::Invalid("setting 1 leaves no weighted nodes".into()));
                }
                let w = 1.0 / kept.len() as f64;
                EvaluationWeights::from_ids(h, kept.into_iter().map(|id| (id, w)))
            }
            Setting::Two => EvaluationWeights::from_ids(h, [(cfg.focus_node.as_str(), 1.0)]),
        }
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(Setting::One),
            "2" => Ok(Setting::Two),
            other => Err(Error::Parse(format!("setting must be 1 or 2, got '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Br,
    Wls,
    Bu,
    Td,
    Ols,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Br, Method::Wls, Method::Bu, Method::Td, Method::Ols];

    pub fn label(self) -> &'static str {
        match self {
            Method::Br => "BR",
            Method::Wls => "WLS",
            Method::Bu => "BU",
            Method::Td => "TD",
            Method::Ols => "OLS",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

pub fn q_label(q: QStructure) -> &'static str {
    match q {
        QStructure::Diagonal => "Q1",
        QStructure::BlockDiagonal => "Q2",
    }
}

/// `Q` for a dataset under the configured structure.
pub fn build_q(cfg: &SimConfig, gamma: &AccuracyVector<f64>, q_mode: QStructure) -> Result<CovarianceQ<f64>> {
    match q_mode {
        QStructure::Diagonal => Ok(build_q_diagonal(gamma)),
        QStructure::BlockDiagonal => build_q_block(gamma, &cfg.hierarchy, cfg.parity()),
    }
}

/// One dataset's outcome within a setting run.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub index: usize,
    pub seed: u64,
    pub periods: usize,
    pub error_scale: f64,
    pub forecastability: f64,
    pub agg_consistency: f64,
    pub class: DatasetClass,
    pub q_shrink: f64,
    /// Error per requested method, in request order.
    pub errors: Vec<(Method, f64)>,
    /// Largest `|full − S·bottom|` over all methods.
    pub consistency_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SettingReport {
    pub setting: Setting,
    pub q_mode: QStructure,
    pub methods: Vec<Method>,
    pub datasets: Vec<DatasetRecord>,
    /// Easy row then hard row; an empty class has no row.
    pub rows: Vec<TableRow>,
    pub notices: Vec<String>,
}

impl SettingReport {
    pub fn row(&self, class: DatasetClass) -> Option<&TableRow> {
        let label = class.to_string();
        self.rows.iter().find(|r| r.reconciliation == label)
    }

    pub fn max_consistency_gap(&self) -> f64 {
        self.datasets.iter().fold(0.0, |a, d| a.max(d.consistency_gap))
    }

    /// Per-dataset scores: index, seed, length, error scale, focus metrics,
    /// class, Q shrink factor and one error column per method.
    pub fn write_scores_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = [
            "dataset",
            "seed",
            "periods",
            "error_scale",
            "forecastability",
            "agg_consistency",
            "class",
            "q_shrink",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend(self.methods.iter().map(|m| m.label().to_string()));
        w.write_record(&header)?;
        for d in &self.datasets {
            let mut rec = vec![
                d.index.to_string(),
                d.seed.to_string(),
                d.periods.to_string(),
                d.error_scale.to_string(),
                d.forecastability.to_string(),
                d.agg_consistency.to_string(),
                d.class.to_string(),
                d.q_shrink.to_string(),
            ];
            rec.extend(d.errors.iter().map(|(_, e)| e.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn run_dataset(
    cfg: &SimConfig,
    index: usize,
    s: &SummingMatrix<f64>,
    weights: &EvaluationWeights<f64>,
    methods: &[Method],
    q_mode: QStructure,
    focus: usize,
) -> Result<(DatasetRecord, crate::metrics::DatasetScore<f64>)> {
    let ds = generate_dataset(cfg, index)?;
    let h = &cfg.hierarchy;
    let q = build_q(cfg, &ds.gamma, q_mode)?;
    let mut errors = Vec::with_capacity(methods.len());
    let mut gap = 0.0f64;
    for &method in methods {
        let (full, bottom) = match method {
            Method::Br => {
                let post = fit_posterior(s, &q, &ds.base)?;
                (s.aggregate(&post.beta_hat)?, post.beta_hat)
            }
            Method::Wls => {
                let r = wls_reconcile(s, &ds.gamma, &ds.base)?;
                (r.full, r.bottom)
            }
            Method::Bu => {
                let r = bottom_up(s, &ds.base)?;
                (r.full, r.bottom)
            }
            Method::Td => {
                let r = top_down(s, h, &ds.panel, &ds.base, cfg.proportions)?;
                (r.full, r.bottom)
            }
            Method::Ols => {
                let r = ols_reconcile(s, &ds.base)?;
                (r.full, r.bottom)
            }
        };
        let rebuilt = s.aggregate(&bottom)?;
        gap = full.iter().zip(&rebuilt).fold(gap, |a, (x, y)| a.max((x - y).abs()));
        errors.push((method, evaluate_with(&full, &ds.truth_next, weights, cfg.metric)?));
    }
    let score = score_dataset(&ds.base, &ds.truth_next, h)?;
    let record = DatasetRecord {
        index,
        seed: ds.seed,
        periods: ds.panel.len(),
        error_scale: ds.error_scale,
        forecastability: score.forecastability[focus],
        agg_consistency: score.agg_consistency[focus].expect("focus node is internal"),
        class: DatasetClass::Neither,
        q_shrink: q.shrink_factor(),
        errors,
        consistency_gap: gap,
    };
    Ok((record, score))
}

/// Runs every dataset through BR and the requested baselines, classifies the
/// datasets on the focus node and tabulates mean errors relative to BR.
/// Datasets are processed in parallel and reduced in index order, so the
/// result does not depend on the worker count.
pub fn run_setting(cfg: &SimConfig, setting: Setting, methods: &[Method], q_mode: QStructure) -> Result<SettingReport> {
    cfg.validate()?;
    if !methods.contains(&Method::Br) {
        return Err(Error::Invalid("method list must include BR".into()));
    }
    let h = &cfg.hierarchy;
    let s: SummingMatrix<f64> = h.summing_matrix();
    let weights = setting.weights(cfg)?;
    let focus = h.index_of(&cfg.focus_node).expect("validated");

    let results = (0..cfg.n_datasets)
        .into_par_iter()
        .map(|i| run_dataset(cfg, i, &s, &weights, methods, q_mode, focus))
        .collect::<Result<Vec<_>>>()?;
    let (mut datasets, scores): (Vec<DatasetRecord>, Vec<_>) = results.into_iter().unzip();

    let mut notices = Vec::new();
    let classes = classify_dataset(&scores, focus, cfg.q_low, cfg.q_high)?;
    notices.extend(classes.notice);
    for (d, c) in datasets.iter_mut().zip(classes.classes) {
        d.class = c;
    }
    let shrunk = datasets.iter().filter(|d| d.q_shrink < 1.0).count();
    if shrunk > 0 {
        notices.push(format!("{shrunk} of {} datasets needed off-diagonal shrinkage in Q", datasets.len()));
    }

    let mut rows = Vec::new();
    for class in [DatasetClass::Easy, DatasetClass::Hard] {
        let members: Vec<&DatasetRecord> = datasets.iter().filter(|d| d.class == class).collect();
        if members.is_empty() {
            let n = format!("no {class} datasets; {class} row omitted");
            log::warn!("{n}");
            notices.push(n);
            continue;
        }
        let mut means = BTreeMap::new();
        for (j, &method) in methods.iter().enumerate() {
            let total: f64 = members.iter().map(|d| d.errors[j].1).sum();
            means.insert(method.label().to_string(), total / members.len() as f64);
        }
        let errors = relative_error_table(&means)?;
        notices.extend(errors.notice.clone());
        rows.push(TableRow { reconciliation: class.to_string(), q: q_label(q_mode).into(), errors });
    }
    Ok(SettingReport { setting, q_mode, methods: methods.to_vec(), datasets, rows, notices })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> SimConfig {
        SimConfig { n_datasets: n, ..SimConfig::default() }
    }

    #[test]
    fn datasets_are_deterministic_and_consistent() {
        let cfg = small(3);
        let a = generate_dataset(&cfg, 2).unwrap();
        let b = generate_dataset(&cfg, 2).unwrap();
        assert_eq!(a, b);
        let h = &cfg.hierarchy;
        for t in 0..a.panel.len() {
            let col = a.panel.at(t);
            for (i, node) in h.nodes().iter().enumerate() {
                if !node.is_leaf() {
                    let sum: f64 = node.children.iter().map(|&c| col[c]).sum();
                    assert!((sum - col[i]).abs() <= 1e-9);
                }
            }
        }
        assert!(generate_dataset(&cfg, 3).is_err());
    }

    #[test]
    fn setting_weights_on_reference_tree() {
        let cfg = small(1);
        let w1 = Setting::One.weights(&cfg).unwrap();
        let sixth = 1.0 / 6.0;
        assert_eq!(w1.as_slice(), &[sixth, sixth, sixth, sixth, sixth, sixth, 0.0, 0.0]);
        let w2 = Setting::Two.weights(&cfg).unwrap();
        assert_eq!(w2.as_slice(), &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn unknown_profile_node_rejected() {
        let mut cfg = small(1);
        cfg.noise_profile.insert("Mexico".into(), 3.0);
        assert!(generate_dataset(&cfg, 0).is_err());
    }

    #[test]
    fn noiseless_constant_truths_are_consistent_and_easy() {
        // a noiseless dataset among noisy ones lands in the easy class
        let mut cfg = small(40);
        cfg.forecaster = Forecaster::Mean;
        cfg.max_growth = 0.0;
        cfg.innovation_sd = 0.0;
        cfg.error_scale = (0.0, 0.0);
        let clean = generate_dataset(&cfg, 0).unwrap();
        let fitted = cfg.hierarchy.summing_matrix::<f64>().aggregate(&clean.base.point[3..]).unwrap();
        for (a, b) in fitted.iter().zip(&clean.base.point) {
            assert!((a - b).abs() < 1e-9);
        }

        let h = &cfg.hierarchy;
        let focus = h.index_of("Canada").unwrap();
        let noisy = SimConfig { error_scale: (0.01, 1.0), innovation_sd: 0.01, ..cfg.clone() };
        let mut scores = vec![score_dataset(&clean.base, &clean.truth_next, h).unwrap()];
        for i in 1..40 {
            let d = generate_dataset(&noisy, i).unwrap();
            scores.push(score_dataset(&d.base, &d.truth_next, h).unwrap());
        }
        let c = classify_dataset(&scores, focus, 0.25, 0.75).unwrap();
        assert_eq!(c.classes[0], DatasetClass::Easy);
    }
}
