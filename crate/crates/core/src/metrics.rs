//! Forecastability, aggregate consistency, easy/hard dataset classes and
//! weighted error evaluation.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::hierarchy::HierarchySpec;
use crate::panel::BaseForecasts;
use crate::scalar::Real;
use crate::stats;

pub const DEFAULT_Q_LOW: f64 = 0.25;
pub const DEFAULT_Q_HIGH: f64 = 0.75;

/// Column order of the relative-error tables.
pub const TABLE_METHODS: [&str; 5] = ["BR", "WLS", "BU", "TD", "OLS"];

/// Absolute relative error of a base forecast. Larger means harder to forecast.
pub fn forecastability<T: Real>(yhat: T, y: T) -> Result<T> {
    if y == T::zero() {
        return Err(Error::Invalid("forecastability is undefined for a zero true value".into()));
    }
    Ok(((yhat - y) / y).abs())
}

/// `|Σ children − parent|` over base forecasts at an internal node.
pub fn aggregate_consistency<T: Real>(yhat: &BaseForecasts<T>, h: &HierarchySpec, node: usize) -> Result<T> {
    if yhat.point.len() != h.m() {
        return Err(Error::dim(h.m(), yhat.point.len()));
    }
    let rec = h.node(node);
    if rec.is_leaf() {
        return Err(Error::Invalid(format!("aggregate consistency needs an internal node, '{}' is a leaf", rec.id)));
    }
    let sum: T = rec.children.iter().map(|&c| yhat.point[c]).sum();
    Ok((sum - yhat.point[node]).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DatasetClass {
    Easy,
    Hard,
    Neither,
}

impl fmt::Display for DatasetClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetClass::Easy => "easy",
            DatasetClass::Hard => "hard",
            DatasetClass::Neither => "neither",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetScore<T> {
    /// Per node.
    pub forecastability: Vec<T>,
    /// Per node; `None` at leaves.
    pub agg_consistency: Vec<Option<T>>,
    pub class: DatasetClass,
}

pub fn score_dataset<T: Real>(yhat: &BaseForecasts<T>, truth: &[T], h: &HierarchySpec) -> Result<DatasetScore<T>> {
    if truth.len() != h.m() {
        return Err(Error::dim(h.m(), truth.len()));
    }
    let forecastability = yhat
        .point
        .iter()
        .zip(truth)
        .map(|(&f, &y)| forecastability(f, y))
        .collect::<Result<Vec<T>>>()?;
    let agg_consistency = (0..h.m())
        .map(|i| if h.node(i).is_leaf() { Ok(None) } else { aggregate_consistency(yhat, h, i).map(Some) })
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetScore { forecastability, agg_consistency, class: DatasetClass::Neither })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub classes: Vec<DatasetClass>,
    pub notice: Option<String>,
}

/// Easy: both focus-node metrics strictly below their `q_low` quantile.
/// Hard: both strictly above their `q_high` quantile.
pub fn classify_dataset<T: Real>(
    scores: &[DatasetScore<T>],
    focus_node: usize,
    q_low: f64,
    q_high: f64,
) -> Result<Classification> {
    if !(0.0..=1.0).contains(&q_low) || !(0.0..=1.0).contains(&q_high) || q_low >= q_high {
        return Err(Error::Invalid(format!("need 0 <= q_low < q_high <= 1, got {q_low} and {q_high}")));
    }
    if scores.is_empty() {
        return Ok(Classification { classes: Vec::new(), notice: Some("no datasets to classify".into()) });
    }
    let mut fc = Vec::with_capacity(scores.len());
    let mut ac = Vec::with_capacity(scores.len());
    for s in scores {
        let f = *s
            .forecastability
            .get(focus_node)
            .ok_or_else(|| Error::Invalid(format!("focus node {focus_node} out of range")))?;
        let a = s
            .agg_consistency
            .get(focus_node)
            .copied()
            .flatten()
            .ok_or_else(|| Error::Invalid("focus node must be an internal node".into()))?;
        fc.push(f);
        ac.push(a);
    }
    let degenerate = |v: &[T]| v.iter().all(|x| *x == v[0]);
    if degenerate(&fc) || degenerate(&ac) {
        let notice = "classification metrics are identical across datasets; every dataset is 'neither'".to_string();
        log::warn!("{notice}");
        return Ok(Classification { classes: vec![DatasetClass::Neither; scores.len()], notice: Some(notice) });
    }
    let (fs, as_) = (stats::sorted(&fc), stats::sorted(&ac));
    let (f_lo, f_hi) = (stats::quantile_sorted(&fs, q_low), stats::quantile_sorted(&fs, q_high));
    let (a_lo, a_hi) = (stats::quantile_sorted(&as_, q_low), stats::quantile_sorted(&as_, q_high));
    let classes = fc
        .iter()
        .zip(&ac)
        .map(|(&f, &a)| {
            if f < f_lo && a < a_lo {
                DatasetClass::Easy
            } else if f > f_hi && a > a_hi {
                DatasetClass::Hard
            } else {
                DatasetClass::Neither
            }
        })
        .collect();
    let notice = (scores.len() < 20).then(|| {
        let n = format!("only {} datasets; class quantiles are unstable below 20", scores.len());
        log::warn!("{n}");
        n
    });
    Ok(Classification { classes, notice })
}

/// Nonnegative per-node weights summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationWeights<T> {
    weights: Vec<T>,
}

impl<T: Real> EvaluationWeights<T> {
    pub fn new(weights: Vec<T>) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= T::zero()) || !w.is_finite()) {
            return Err(Error::Invalid("evaluation weights must be finite and >= 0".into()));
        }
        let total: T = weights.iter().copied().sum();
        if (total - T::one()).abs() > T::lit(1e-9) {
            return Err(Error::Invalid(format!("evaluation weights sum to {total}, expected 1")));
        }
        Ok(Self { weights })
    }

    /// Weights by node id; unlisted nodes get 0.
    pub fn from_ids<'a, I>(h: &HierarchySpec, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, T)>,
    {
        let mut w = vec![T::zero(); h.m()];
        for (id, v) in entries {
            let i = h.index_of(id).ok_or_else(|| Error::Invalid(format!("unknown node '{id}' in weights")))?;
            w[i] = v;
        }
        Self::new(w)
    }

    pub fn uniform(m: usize) -> Self {
        Self { weights: vec![T::one() / T::from_usize_lossy(m); m] }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.weights
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorMetric {
    /// Weighted mean absolute relative error.
    #[default]
    Mare,
    /// Weighted root mean squared error.
    Rmse,
}

impl FromStr for ErrorMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mare" => Ok(ErrorMetric::Mare),
            "rmse" => Ok(ErrorMetric::Rmse),
            other => Err(Error::Parse(format!("unknown error metric '{other}'"))),
        }
    }
}

/// Per-node terms whose weighted sum is the error (before the square root for RMSE).
pub fn node_errors<T: Real>(revised: &[T], truth: &[T], metric: ErrorMetric) -> Result<Vec<T>> {
    if revised.len() != truth.len() {
        return Err(Error::dim(truth.len(), revised.len()));
    }
    let top = truth.iter().fold(T::zero(), |acc, t| acc.max(t.abs()));
    let guard = T::lit(1e-12) * if top > T::zero() { top } else { T::one() };
    Ok(revised
        .iter()
        .zip(truth)
        .map(|(&r, &t)| match metric {
            ErrorMetric::Mare => (r - t).abs() / t.abs().max(guard),
            ErrorMetric::Rmse => (r - t) * (r - t),
        })
        .collect())
}

pub fn evaluate<T: Real>(revised: &[T], truth: &[T], w: &EvaluationWeights<T>) -> Result<T> {
    evaluate_with(revised, truth, w, ErrorMetric::Mare)
}

pub fn evaluate_with<T: Real>(revised: &[T], truth: &[T], w: &EvaluationWeights<T>, metric: ErrorMetric) -> Result<T> {
    if w.weights.len() != truth.len() {
        return Err(Error::dim(truth.len(), w.weights.len()));
    }
    let terms = node_errors(revised, truth, metric)?;
    let total: T = terms.iter().zip(&w.weights).map(|(&e, &w)| e * w).sum();
    Ok(match metric {
        ErrorMetric::Mare => total,
        ErrorMetric::Rmse => total.sqrt(),
    })
}

/// Mean errors divided by BR's, in [`TABLE_METHODS`] order where present.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeErrors {
    pub values: Vec<(String, f64)>,
    /// False when BR's error is zero and the values are absolute.
    pub normalized: bool,
    pub notice: Option<String>,
}

pub fn relative_error_table(per_method: &BTreeMap<String, f64>) -> Result<RelativeErrors> {
    let br = *per_method.get("BR").ok_or_else(|| Error::Invalid("relative error table needs a BR entry".into()))?;
    let mut order: Vec<&String> = TABLE_METHODS.iter().filter_map(|m| per_method.get_key_value(*m).map(|(k, _)| k)).collect();
    order.extend(per_method.keys().filter(|k| !TABLE_METHODS.contains(&k.as_str())));
    if br == 0.0 {
        let notice = "BR mean error is zero; reporting absolute errors".to_string();
        log::warn!("{notice}");
        let values = order.into_iter().map(|k| (k.clone(), per_method[k])).collect();
        return Ok(RelativeErrors { values, normalized: false, notice: Some(notice) });
    }
    let values = order.into_iter().map(|k| (k.clone(), per_method[k] / br)).collect();
    Ok(RelativeErrors { values, normalized: true, notice: None })
}

/// One line of a results table: class label, Q structure, relative errors.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub reconciliation: String,
    pub q: String,
    pub errors: RelativeErrors,
}

impl TableRow {
    pub fn get(&self, method: &str) -> Option<f64> {
        self.errors.values.iter().find(|(k, _)| k == method).map(|(_, v)| *v)
    }
}

/// Writes `reconciliation,Q,BR,WLS,BU,TD,OLS`; missing methods are blank.
pub fn write_results_csv<W: Write>(rows: &[TableRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["reconciliation", "Q"];
    header.extend(TABLE_METHODS);
    w.write_record(&header)?;
    for row in rows {
        let mut rec = vec![row.reconciliation.clone(), row.q.clone()];
        rec.extend(TABLE_METHODS.iter().map(|m| row.get(m).map_or(String::new(), |v| format!("{v:.2}"))));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forecastability_hand_values() {
        assert_eq!(forecastability(100.0, 100.0).unwrap(), 0.0);
        assert!((forecastability(110.0f64, 100.0).unwrap() - 0.1).abs() < 1e-15);
        assert!((forecastability(90.0f64, 100.0).unwrap() - 0.1).abs() < 1e-15);
        assert!(forecastability(1.0, 0.0).is_err());
    }

    #[test]
    fn aggregate_consistency_hand_values() {
        let h = HierarchySpec::from_edges([("p", None), ("a", Some("p")), ("b", Some("p"))]).unwrap();
        let f = |v: Vec<f64>| BaseForecasts::new(v, 0).unwrap();
        assert_eq!(aggregate_consistency(&f(vec![10.0, 3.0, 4.0]), &h, 0).unwrap(), 3.0);
        assert_eq!(aggregate_consistency(&f(vec![7.0, 3.0, 4.0]), &h, 0).unwrap(), 0.0);
        assert_eq!(aggregate_consistency(&f(vec![0.0, 0.0, 0.0]), &h, 0).unwrap(), 0.0);
        assert!(aggregate_consistency(&f(vec![0.0, 0.0, 0.0]), &h, 1).is_err());
    }

    fn score(f: f64, a: f64) -> DatasetScore<f64> {
        DatasetScore { forecastability: vec![f, 0.0], agg_consistency: vec![Some(a), None], class: DatasetClass::Neither }
    }

    #[test]
    fn identical_metrics_are_neither() {
        let scores = vec![score(1.0, 1.0); 30];
        let c = classify_dataset(&scores, 0, 0.25, 0.75).unwrap();
        assert!(c.classes.iter().all(|c| *c == DatasetClass::Neither));
        assert!(c.notice.is_some());
    }

    #[test]
    fn rank_construction_labels_bottom_quarter() {
        // both metrics equal the index: bottom 25 are easy, top 25 hard
        let scores: Vec<_> = (0..100).map(|i| score(i as f64, i as f64)).collect();
        let c = classify_dataset(&scores, 0, 0.25, 0.75).unwrap();
        let easy: Vec<usize> = (0..100).filter(|&i| c.classes[i] == DatasetClass::Easy).collect();
        let hard: Vec<usize> = (0..100).filter(|&i| c.classes[i] == DatasetClass::Hard).collect();
        assert_eq!(easy, (0..25).collect::<Vec<_>>());
        assert_eq!(hard, (75..100).collect::<Vec<_>>());
    }

    #[test]
    fn anti_correlated_metrics_have_no_hard_set() {
        let scores: Vec<_> = (0..100).map(|i| score(i as f64, (99 - i) as f64)).collect();
        let c = classify_dataset(&scores, 0, 0.25, 0.75).unwrap();
        assert!(!c.classes.contains(&DatasetClass::Hard));
        assert!(!c.classes.contains(&DatasetClass::Easy));
    }

    #[test]
    fn quantile_arguments_checked() {
        assert!(classify_dataset(&[score(1.0, 1.0)], 0, 0.75, 0.25).is_err());
        assert!(classify_dataset(&[score(1.0, 1.0)], 1, 0.25, 0.75).is_err());
    }

    #[test]
    fn evaluate_hand_values() {
        let truth = [100.0f64, 50.0];
        let w = EvaluationWeights::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(evaluate(&truth, &truth, &w).unwrap(), 0.0);
        assert!((evaluate(&[110.0, 0.0], &truth, &w).unwrap() - 0.1).abs() < 1e-15);
        let rmse = evaluate_with(&[103.0, 50.0], &truth, &w, ErrorMetric::Rmse).unwrap();
        assert!((rmse - 3.0).abs() < 1e-12);
        assert!(EvaluationWeights::new(vec![0.5, 0.4]).is_err());
        assert!(evaluate(&[1.0], &truth, &w).is_err());
    }

    #[test]
    fn zero_truth_is_guarded() {
        let w = EvaluationWeights::new(vec![1.0f64]).unwrap();
        let e = evaluate(&[1e-13], &[0.0], &w).unwrap();
        assert!((e - 0.1).abs() < 1e-12);
    }

    #[test]
    fn relative_table_normalizes_by_br() {
        let mut errs = BTreeMap::new();
        errs.insert("BR".to_string(), 2.0);
        errs.insert("BU".to_string(), 4.0);
        let t = relative_error_table(&errs).unwrap();
        assert_eq!(t.values, vec![("BR".to_string(), 1.0), ("BU".to_string(), 2.0)]);
        errs.insert("BR".to_string(), 0.0);
        let t = relative_error_table(&errs).unwrap();
        assert!(!t.normalized && t.notice.is_some());
        errs.remove("BR");
        assert!(relative_error_table(&errs).is_err());
    }

    #[test]
    fn results_csv_layout() {
        let mut errs = BTreeMap::new();
        for (k, v) in [("BR", 1.0), ("WLS", 1.2), ("BU", 18689.04), ("TD", 3.48), ("OLS", 1090.43)] {
            errs.insert(k.to_string(), v);
        }
        let row = TableRow { reconciliation: "hard".into(), q: "Q1".into(), errors: relative_error_table(&errs).unwrap() };
        let mut buf = Vec::new();
        write_results_csv(&[row], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "reconciliation,Q,BR,WLS,BU,TD,OLS\nhard,Q1,1.00,1.20,18689.04,3.48,1090.43\n"
        );
    }
}
