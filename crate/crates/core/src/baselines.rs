//! Competitor reconcilers: bottom-up, top-down by historical proportions,
//! identity least squares and accuracy-weighted least squares.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::hierarchy::{HierarchySpec, SummingMatrix};
use crate::linalg::{Cholesky, Matrix};
use crate::panel::{AccuracyVector, BaseForecasts, SeriesPanel};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BaselineMethod {
    BottomUp,
    TopDown,
    Ols,
    Wls,
}

impl BaselineMethod {
    pub const ALL: [BaselineMethod; 4] =
        [BaselineMethod::Wls, BaselineMethod::BottomUp, BaselineMethod::TopDown, BaselineMethod::Ols];

    pub fn label(self) -> &'static str {
        match self {
            BaselineMethod::BottomUp => "BU",
            BaselineMethod::TopDown => "TD",
            BaselineMethod::Ols => "OLS",
            BaselineMethod::Wls => "WLS",
        }
    }
}

impl fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult<T> {
    pub method: BaselineMethod,
    pub full: Vec<T>,
    pub bottom: Vec<T>,
}

impl<T: Real> BaselineResult<T> {
    fn from_bottom(method: BaselineMethod, s: &SummingMatrix<T>, bottom: Vec<T>) -> Result<Self> {
        let full = s.aggregate(&bottom)?;
        Ok(Self { method, full, bottom })
    }
}

/// How historical proportions are formed for top-down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Proportions {
    /// Mean over periods of `leaf / root`.
    #[default]
    AverageOfShares,
    /// Mean leaf over mean root.
    ShareOfAverages,
}

impl FromStr for Proportions {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average-of-shares" => Ok(Proportions::AverageOfShares),
            "share-of-averages" => Ok(Proportions::ShareOfAverages),
            other => Err(Error::Parse(format!("unknown top-down proportions '{other}'"))),
        }
    }
}

fn check_len<T>(s: &SummingMatrix<T>, yhat: &BaseForecasts<T>) -> Result<()>
where
    T: Real,
{
    if yhat.point.len() != s.m() {
        return Err(Error::dim(s.m(), yhat.point.len()));
    }
    Ok(())
}

pub fn bottom_up<T: Real>(s: &SummingMatrix<T>, yhat: &BaseForecasts<T>) -> Result<BaselineResult<T>> {
    check_len(s, yhat)?;
    let bottom = yhat.point[s.m() - s.m_bottom()..].to_vec();
    BaselineResult::from_bottom(BaselineMethod::BottomUp, s, bottom)
}

pub fn top_down<T: Real>(
    s: &SummingMatrix<T>,
    h: &HierarchySpec,
    panel: &SeriesPanel<T>,
    yhat: &BaseForecasts<T>,
    proportions: Proportions,
) -> Result<BaselineResult<T>> {
    check_len(s, yhat)?;
    if panel.n_nodes() != h.m() {
        return Err(Error::dim(h.m(), panel.n_nodes()));
    }
    if panel.is_empty() {
        return Err(Error::SeriesTooShort("top-down needs at least one historical period".into()));
    }
    let root = panel.series(h.root());
    if let Some(t) = root.iter().position(|v| !(*v > T::zero())) {
        return Err(Error::Invalid(format!(
            "top-down: root value {} at period {} is not positive",
            root[t],
            panel.first_period() + t as i64
        )));
    }
    let n_t = T::from_usize_lossy(root.len());
    let offset = h.bottom_offset();
    let mut p: Vec<T> = (offset..h.m())
        .map(|j| {
            let leaf = panel.series(j);
            match proportions {
                Proportions::AverageOfShares => leaf.iter().zip(root).map(|(&l, &r)| l / r).sum::<T>() / n_t,
                Proportions::ShareOfAverages => leaf.iter().copied().sum::<T>() / root.iter().copied().sum::<T>(),
            }
        })
        .collect();
    let total: T = p.iter().copied().sum();
    if !(total.abs() > T::zero()) {
        return Err(Error::Invalid("top-down: historical shares sum to zero".into()));
    }
    for v in &mut p {
        *v /= total;
    }
    let top = yhat.point[h.root()];
    let bottom = p.into_iter().map(|v| v * top).collect();
    BaselineResult::from_bottom(BaselineMethod::TopDown, s, bottom)
}

/// Solves `(Sᵀ W S) b = Sᵀ W ŷ` with `W = diag(weights)`.
fn weighted_normal_equations<T: Real>(s: &SummingMatrix<T>, weights: &[T], y: &[T]) -> Result<Vec<T>> {
    let sm = s.matrix();
    let (m, k) = (sm.nrows(), sm.ncols());
    if m <= k {
        return Err(Error::Undefined(format!("least-squares reconciliation needs m > m_K, got m = {m}, m_K = {k}")));
    }
    let mut gram = Matrix::zeros(k, k);
    let mut rhs = vec![T::zero(); k];
    for i in 0..m {
        let row = sm.row(i);
        let w = weights[i];
        for a in 0..k {
            if row[a] == T::zero() {
                continue;
            }
            rhs[a] += w * row[a] * y[i];
            for b in 0..k {
                gram[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    Cholesky::new(&gram)
        .map_err(|e| match e {
            Error::NotPositiveDefinite(d) => Error::NotPositiveDefinite(format!(" in least-squares normal equations{d}")),
            other => other,
        })?
        .solve(&rhs)
}

pub fn ols_reconcile<T: Real>(s: &SummingMatrix<T>, yhat: &BaseForecasts<T>) -> Result<BaselineResult<T>> {
    check_len(s, yhat)?;
    let bottom = weighted_normal_equations(s, &vec![T::one(); s.m()], &yhat.point)?;
    BaselineResult::from_bottom(BaselineMethod::Ols, s, bottom)
}

/// Weighted least squares with `Λ = diag(γ)` after flooring.
pub fn wls_reconcile<T: Real>(
    s: &SummingMatrix<T>,
    gamma: &AccuracyVector<T>,
    yhat: &BaseForecasts<T>,
) -> Result<BaselineResult<T>> {
    check_len(s, yhat)?;
    if gamma.len() != s.m() {
        return Err(Error::dim(s.m(), gamma.len()));
    }
    let w: Vec<T> = gamma.floored().into_iter().map(|g| T::one() / g).collect();
    let bottom = weighted_normal_equations(s, &w, &yhat.point)?;
    BaselineResult::from_bottom(BaselineMethod::Wls, s, bottom)
}
