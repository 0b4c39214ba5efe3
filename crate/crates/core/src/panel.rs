//! Historical observations, simple one-step forecasters, and the rolling
//! holdout that measures each node's forecast accuracy.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::hierarchy::HierarchySpec;
use crate::linalg::{Cholesky, Matrix};
use crate::scalar::Real;

pub const DEFAULT_HOLDOUT_FRACTION: f64 = 0.2;
pub const MIN_PANEL_LENGTH: usize = 10;

/// Aligned history for every node: `values[(node, t)]`, periods
/// `first_period..first_period + len`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPanel<T> {
    ids: Vec<String>,
    values: Matrix<T>,
    first_period: i64,
}

impl<T: Real> SeriesPanel<T> {
    pub fn new(ids: Vec<String>, values: Matrix<T>, first_period: i64) -> Result<Self> {
        if ids.len() != values.nrows() {
            return Err(Error::dim(ids.len(), values.nrows()));
        }
        if let Some(k) = values.as_slice().iter().position(|v| !v.is_finite()) {
            let (i, t) = (k / values.ncols(), k % values.ncols());
            return Err(Error::Invalid(format!(
                "non-finite value for node '{}' at period {}",
                ids[i],
                first_period + t as i64
            )));
        }
        Ok(Self { ids, values, first_period })
    }

    /// Builds a panel whose node order follows `h` from per-node rows.
    pub fn from_rows(h: &HierarchySpec, rows: &[Vec<T>]) -> Result<Self> {
        let ids = h.ids().map(str::to_owned).collect();
        Self::new(ids, Matrix::from_rows(rows)?, 1)
    }

    /// Reads the long CSV layout `node_id,t,value`.
    pub fn from_csv<R: Read>(reader: R, h: &HierarchySpec) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            node_id: String,
            t: i64,
            value: f64,
        }
        let mut per_node: Vec<BTreeMap<i64, f64>> = vec![BTreeMap::new(); h.m()];
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        for (line, rec) in rdr.deserialize::<Row>().enumerate() {
            let row = rec.map_err(|e| Error::Parse(format!("panel line {}: {e}", line + 2)))?;
            let i = h.index_of(&row.node_id).ok_or_else(|| {
                Error::Invalid(format!("panel line {}: unknown node '{}'", line + 2, row.node_id))
            })?;
            if per_node[i].insert(row.t, row.value).is_some() {
                return Err(Error::Invalid(format!(
                    "panel line {}: duplicate period {} for node '{}'",
                    line + 2,
                    row.t,
                    row.node_id
                )));
            }
        }
        let mut span: Option<(i64, i64)> = None;
        for (i, series) in per_node.iter().enumerate() {
            let id = &h.node(i).id;
            let (Some((&lo, _)), Some((&hi, _))) = (series.first_key_value(), series.last_key_value()) else {
                return Err(Error::Invalid(format!("panel has no observations for node '{id}'")));
            };
            if (hi - lo + 1) as usize != series.len() {
                return Err(Error::Invalid(format!("node '{id}': periods {lo}..={hi} are not contiguous")));
            }
            match span {
                None => span = Some((lo, hi)),
                Some(s) if s != (lo, hi) => {
                    return Err(Error::Invalid(format!(
                        "node '{id}' covers periods {lo}..={hi}, expected {}..={}",
                        s.0, s.1
                    )))
                }
                _ => {}
            }
        }
        let (lo, _) = span.expect("at least one node");
        let rows: Vec<Vec<T>> = per_node
            .into_iter()
            .map(|s| s.into_values().map(T::lit).collect())
            .collect();
        Self::new(h.ids().map(str::to_owned).collect(), Matrix::from_rows(&rows)?, lo)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn n_nodes(&self) -> usize {
        self.values.nrows()
    }

    /// Number of periods `T`.
    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }

    pub fn first_period(&self) -> i64 {
        self.first_period
    }

    pub fn series(&self, node: usize) -> &[T] {
        self.values.row(node)
    }

    pub fn values(&self) -> &Matrix<T> {
        &self.values
    }

    /// Values of every node at period offset `t` (0-based).
    pub fn at(&self, t: usize) -> Vec<T> {
        self.values.column(t)
    }
}

/// Independently produced forecasts for one future period.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseForecasts<T> {
    pub point: Vec<T>,
    pub horizon: i64,
}

impl<T: Real> BaseForecasts<T> {
    pub fn new(point: Vec<T>, horizon: i64) -> Result<Self> {
        if let Some(i) = point.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("base forecast {i} is not finite")));
        }
        Ok(Self { point, horizon })
    }

    /// Reads `node_id,value`; every node of `h` must appear exactly once.
    pub fn from_csv<R: Read>(reader: R, h: &HierarchySpec, horizon: i64) -> Result<Self> {
        let values = read_node_values(reader, h, "value")?;
        Self::new(values.into_iter().map(T::lit).collect(), horizon)
    }
}

/// Reads a two-column `node_id,<column>` CSV into hierarchy order.
pub fn read_node_values<R: Read>(reader: R, h: &HierarchySpec, column: &str) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let id_col = headers.iter().position(|c| c == "node_id");
    let val_col = headers.iter().position(|c| c == column);
    let (Some(id_col), Some(val_col)) = (id_col, val_col) else {
        return Err(Error::Parse(format!("expected columns 'node_id' and '{column}'")));
    };
    let mut out: Vec<Option<f64>> = vec![None; h.m()];
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id = rec.get(id_col).unwrap_or_default();
        let raw = rec.get(val_col).unwrap_or_default();
        let i = h
            .index_of(id)
            .ok_or_else(|| Error::Invalid(format!("line {}: unknown node '{id}'", line + 2)))?;
        let v: f64 = raw
            .parse()
            .map_err(|_| Error::Parse(format!("line {}: '{raw}' is not a number", line + 2)))?;
        if out[i].replace(v).is_some() {
            return Err(Error::Invalid(format!("line {}: node '{id}' listed twice", line + 2)));
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| Error::Invalid(format!("missing value for node '{}'", h.node(i).id))))
        .collect()
}

/// Per-node holdout mean squared errors.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyVector<T> {
    pub gamma: Vec<T>,
    /// Holdout window `R` the errors were averaged over.
    pub holdout: usize,
}

impl<T: Real> AccuracyVector<T> {
    pub fn new(gamma: Vec<T>, holdout: usize) -> Result<Self> {
        if let Some(i) = gamma.iter().position(|g| !(*g >= T::zero()) || !g.is_finite()) {
            return Err(Error::Invalid(format!("accuracy entry {i} must be finite and >= 0")));
        }
        Ok(Self { gamma, holdout })
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    /// Floor keeping zero-error nodes from making covariances singular:
    /// `1e-8 ×` the median nonzero entry, or `1e-8` if all entries are zero.
    pub fn floor(&self) -> T {
        let mut nz: Vec<T> = self.gamma.iter().copied().filter(|g| *g > T::zero()).collect();
        let base = if nz.is_empty() {
            T::one()
        } else {
            nz.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            let n = nz.len();
            if n % 2 == 1 {
                nz[n / 2]
            } else {
                (nz[n / 2 - 1] + nz[n / 2]) / T::lit(2.0)
            }
        };
        base * T::lit(1e-8)
    }

    /// Entries with the floor applied.
    pub fn floored(&self) -> Vec<T> {
        let eps = self.floor();
        self.gamma.iter().map(|&g| g.max(eps)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Forecaster {
    Mean,
    RandomWalkDrift,
    SeasonalNaive { period: usize },
    /// Autoregression with intercept, order `0..=max_order` picked by AICc.
    AutoAr { max_order: usize },
}

impl Default for Forecaster {
    fn default() -> Self {
        Forecaster::AutoAr { max_order: 3 }
    }
}

impl fmt::Display for Forecaster {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Forecaster::Mean => write!(f, "mean"),
            Forecaster::RandomWalkDrift => write!(f, "rw-drift"),
            Forecaster::SeasonalNaive { period } => write!(f, "seasonal-naive:{period}"),
            Forecaster::AutoAr { max_order } => write!(f, "auto-ar:{max_order}"),
        }
    }
}

impl FromStr for Forecaster {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let num = |a: Option<&str>| -> Result<Option<usize>> {
            a.map(|a| a.parse().map_err(|_| Error::Parse(format!("bad forecaster argument '{a}'"))))
                .transpose()
        };
        let f = match name {
            "mean" => Forecaster::Mean,
            "rw-drift" | "random-walk-drift" => Forecaster::RandomWalkDrift,
            "seasonal-naive" => Forecaster::SeasonalNaive {
                period: num(arg)?.ok_or_else(|| Error::Parse("seasonal-naive needs ':<period>'".into()))?,
            },
            "auto-ar" => Forecaster::AutoAr { max_order: num(arg)?.unwrap_or(3) },
            other => return Err(Error::Parse(format!("unknown forecaster '{other}'"))),
        };
        f.validate()?;
        Ok(f)
    }
}

impl Forecaster {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Forecaster::SeasonalNaive { period } if period < 2 => {
                Err(Error::Invalid(format!("seasonal period must be >= 2, got {period}")))
            }
            Forecaster::AutoAr { max_order } if max_order > 3 => {
                Err(Error::Invalid(format!("auto-ar order must be <= 3, got {max_order}")))
            }
            _ => Ok(()),
        }
    }

    /// Shortest history the method accepts.
    pub fn min_len(&self) -> usize {
        match *self {
            Forecaster::Mean | Forecaster::RandomWalkDrift => 1,
            Forecaster::SeasonalNaive { period } => period,
            Forecaster::AutoAr { .. } => 3,
        }
    }

    /// One-step-ahead point forecast of `series`.
    pub fn forecast<T: Real>(&self, series: &[T]) -> Result<T> {
        let n = series.len();
        if n < self.min_len() {
            return Err(Error::SeriesTooShort(format!("{self} needs {} values, got {n}", self.min_len())));
        }
        Ok(match *self {
            Forecaster::Mean => series.iter().copied().sum::<T>() / T::from_usize_lossy(n),
            Forecaster::RandomWalkDrift => {
                let last = series[n - 1];
                if n == 1 {
                    last
                } else {
                    last + (last - series[0]) / T::from_usize_lossy(n - 1)
                }
            }
            Forecaster::SeasonalNaive { period } => series[n - period],
            Forecaster::AutoAr { max_order } => auto_ar_forecast(series, max_order),
        })
    }
}

/// Fits AR(p) with intercept for every admissible `p <= max_order` on a
/// common estimation sample and forecasts with the lowest-AICc fit.
fn auto_ar_forecast<T: Real>(y: &[T], max_order: usize) -> T {
    let n = y.len();
    // k = p + 2 parameters (intercept, lags, variance); AICc needs ne > k + 1
    let admissible = |p: usize| n > p && (n - p) > p + 3;
    let Some(p_max) = (0..=max_order).rev().find(|&p| admissible(p)) else {
        return y.iter().copied().sum::<T>() / T::from_usize_lossy(n);
    };
    let sample = &y[p_max..];
    let ne = sample.len();
    let ne_t = T::from_usize_lossy(ne);
    let scale2 = sample.iter().map(|&v| v * v).sum::<T>() / ne_t;
    let var_floor = (T::epsilon() * scale2).max(T::min_positive_value());

    let mut best: Option<(T, T)> = None;
    for p in 0..=p_max {
        let cols = p + 1;
        let mut x = Matrix::zeros(ne, cols);
        for (r, t) in (p_max..n).enumerate() {
            x[(r, 0)] = T::one();
            for lag in 1..=p {
                x[(r, lag)] = y[t - lag];
            }
        }
        let Ok(gram) = Cholesky::new(&x.tr_matmul(&x).expect("shape")) else {
            continue;
        };
        // collinear lags (e.g. an exact linear trend) leave a near-zero pivot
        if gram.pivot_ratio() < T::epsilon() * T::lit(1e4) {
            continue;
        }
        let coef = gram.solve(&x.tr_matvec(sample).expect("shape")).expect("shape");
        let fitted = x.matvec(&coef).expect("shape");
        let rss: T = sample.iter().zip(&fitted).map(|(&a, &b)| (a - b) * (a - b)).sum();
        let k = T::from_usize_lossy(p + 2);
        let aicc = ne_t * (rss / ne_t).max(var_floor).ln()
            + T::lit(2.0) * k
            + T::lit(2.0) * k * (k + T::one()) / (ne_t - k - T::one());
        let next = coef[0] + (1..=p).map(|lag| coef[lag] * y[n - lag]).sum::<T>();
        if best.is_none_or(|(b, _)| aicc < b) {
            best = Some((aicc, next));
        }
    }
    best.expect("intercept-only fit always succeeds").1
}

/// Forecasting method for every node, with optional per-node overrides.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForecasterSpec {
    pub method: Forecaster,
    pub overrides: HashMap<String, Forecaster>,
}

impl ForecasterSpec {
    pub fn uniform(method: Forecaster) -> Self {
        Self { method, overrides: HashMap::new() }
    }

    pub fn for_node(&self, id: &str) -> Forecaster {
        self.overrides.get(id).copied().unwrap_or(self.method)
    }

    pub fn validate(&self) -> Result<()> {
        self.method.validate()?;
        self.overrides.values().try_for_each(Forecaster::validate)
    }
}

pub fn forecast_one_step<T: Real>(series: &[T], method: Forecaster) -> Result<T> {
    method.forecast(series)
}

/// Holdout window size for a series of length `len`.
pub fn holdout_size(len: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 0.5) {
        return Err(Error::Invalid(format!("holdout fraction must be in (0, 0.5], got {fraction}")));
    }
    Ok(((fraction * len as f64).floor() as usize).max(1))
}

/// Rolling one-step holdout: for `r = 1..=holdout`, forecast from the first
/// `len - r` values and score against the value that follows. `forecast`
/// receives the prefix and `r`.
pub fn holdout_mse<T, F>(series: &[T], holdout: usize, mut forecast: F) -> Result<T>
where
    T: Real,
    F: FnMut(&[T], usize) -> Result<T>,
{
    let n = series.len();
    if holdout == 0 || holdout >= n {
        return Err(Error::SeriesTooShort(format!("holdout {holdout} leaves no history in {n} values")));
    }
    let mut total = T::zero();
    for r in 1..=holdout {
        let err = forecast(&series[..n - r], r)? - series[n - r];
        total += err * err;
    }
    Ok(total / T::from_usize_lossy(holdout))
}

/// Per-node holdout MSEs using each node's configured forecaster.
pub fn historical_accuracy<T: Real>(
    panel: &SeriesPanel<T>,
    spec: &ForecasterSpec,
    holdout_fraction: f64,
) -> Result<AccuracyVector<T>> {
    let len = panel.len();
    if len < MIN_PANEL_LENGTH {
        return Err(Error::SeriesTooShort(format!(
            "panel has {len} periods, at least {MIN_PANEL_LENGTH} required"
        )));
    }
    let holdout = holdout_size(len, holdout_fraction)?;
    let gamma = (0..panel.n_nodes())
        .into_par_iter()
        .map(|i| {
            let id = &panel.ids()[i];
            let method = spec.for_node(id);
            if len - holdout < method.min_len() {
                return Err(Error::SeriesTooShort(format!(
                    "node '{id}': {method} needs {} values but the deepest holdout prefix has {}",
                    method.min_len(),
                    len - holdout
                )));
            }
            holdout_mse(panel.series(i), holdout, |prefix, _| method.forecast(prefix))
        })
        .collect::<Result<Vec<T>>>()?;
    AccuracyVector::new(gamma, holdout)
}

/// Forecasts every node one period past the end of the panel.
pub fn base_forecast_all<T: Real>(panel: &SeriesPanel<T>, spec: &ForecasterSpec) -> Result<BaseForecasts<T>> {
    if panel.is_empty() || panel.n_nodes() == 0 {
        return Err(Error::Invalid("panel is empty".into()));
    }
    let point = (0..panel.n_nodes())
        .map(|i| {
            let id = &panel.ids()[i];
            spec.for_node(id)
                .forecast(panel.series(i))
                .map_err(|e| Error::SeriesTooShort(format!("node '{id}': {e}")))
        })
        .collect::<Result<Vec<T>>>()?;
    BaseForecasts::new(point, panel.first_period() + panel.len() as i64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_constant_series() {
        assert_eq!(Forecaster::Mean.forecast(&[5.0, 5.0, 5.0, 5.0]).unwrap(), 5.0);
    }

    #[test]
    fn drift_extrapolates_average_increment() {
        assert_eq!(Forecaster::RandomWalkDrift.forecast(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(Forecaster::RandomWalkDrift.forecast(&[3.0]).unwrap(), 3.0);
    }

    #[test]
    fn seasonal_naive_looks_back_one_season() {
        let f = Forecaster::SeasonalNaive { period: 2 };
        assert_eq!(f.forecast(&[3.0, 1.0, 3.0, 1.0, 3.0, 1.0]).unwrap(), 3.0);
        assert!(matches!(
            Forecaster::SeasonalNaive { period: 4 }.forecast(&[1.0, 2.0]),
            Err(Error::SeriesTooShort(_))
        ));
    }

    #[test]
    fn auto_ar_rejects_short_series() {
        assert!(Forecaster::default().forecast(&[1.0, 2.0]).is_err());
        // three values: no order has a defined AICc, falls back to the mean
        assert_eq!(Forecaster::default().forecast(&[1.0, 2.0, 3.0]).unwrap(), 2.0);
    }

    #[test]
    fn auto_ar_constant_series() {
        let y = [4.0f64; 12];
        assert!((Forecaster::default().forecast(&y).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn auto_ar_tracks_linear_trend() {
        let y: Vec<f64> = (0..20).map(|t| 3.0 + 0.5 * t as f64).collect();
        let f = Forecaster::default().forecast(&y).unwrap();
        assert!((f - 13.0).abs() < 1e-8, "{f}");
    }

    #[test]
    fn auto_ar_recovers_ar1_order() {
        // noiseless AR(1) around 10: y_t = 10 + 0.6 (y_{t-1} - 10)
        let mut y = vec![20.0f64];
        for _ in 0..30 {
            let last = *y.last().unwrap();
            y.push(10.0 + 0.6 * (last - 10.0));
        }
        let expect = 10.0 + 0.6 * (y[30] - 10.0);
        assert!((Forecaster::default().forecast(&y).unwrap() - expect).abs() < 1e-8);
    }

    #[test]
    fn parse_forecaster_names() {
        assert_eq!("mean".parse::<Forecaster>().unwrap(), Forecaster::Mean);
        assert_eq!("rw-drift".parse::<Forecaster>().unwrap(), Forecaster::RandomWalkDrift);
        assert_eq!(
            "seasonal-naive:12".parse::<Forecaster>().unwrap(),
            Forecaster::SeasonalNaive { period: 12 }
        );
        assert_eq!("auto-ar".parse::<Forecaster>().unwrap(), Forecaster::AutoAr { max_order: 3 });
        assert!("seasonal-naive:1".parse::<Forecaster>().is_err());
        assert!("auto-ar:5".parse::<Forecaster>().is_err());
        assert!("arima".parse::<Forecaster>().is_err());
    }

    #[test]
    fn holdout_size_rule() {
        assert_eq!(holdout_size(10, 0.2).unwrap(), 2);
        assert_eq!(holdout_size(12, 0.05).unwrap(), 1);
        assert!(holdout_size(10, 0.0).is_err());
        assert!(holdout_size(10, 0.6).is_err());
    }

    #[test]
    fn accuracy_floor_uses_median_nonzero() {
        let acc = AccuracyVector::new(vec![0.0f64, 1.0, 3.0, 100.0], 2).unwrap();
        assert!((acc.floor() - 3e-8).abs() < 1e-20);
        let zeros = AccuracyVector::new(vec![0.0; 3], 2).unwrap();
        assert_eq!(zeros.floored(), vec![1e-8; 3]);
        assert!(AccuracyVector::new(vec![-1.0], 1).is_err());
    }
}
