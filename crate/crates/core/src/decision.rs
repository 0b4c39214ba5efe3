//! Choosing one aggregate-consistent point forecast from the posterior by
//! minimizing expected loss over the posterior draws.

use std::collections::HashMap;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::hierarchy::{HierarchySpec, SummingMatrix};
use crate::linalg::Matrix;
use crate::posterior::PosteriorDraws;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    WeightedSquared,
    AsymmetricLinear,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted-squared" => Ok(LossKind::WeightedSquared),
            "asymmetric-linear" => Ok(LossKind::AsymmetricLinear),
            other => Err(Error::Parse(format!("unknown loss kind '{other}'"))),
        }
    }
}

/// Per-node penalty for under- and over-forecasting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Asymmetry<T> {
    pub under: T,
    pub over: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec<T> {
    pub kind: LossKind,
    pub weights: Vec<T>,
    /// Only read for the asymmetric kind; `None` means unit costs.
    pub asymmetry: Option<Vec<Asymmetry<T>>>,
}

impl<T: Real> LossSpec<T> {
    pub fn weighted_squared(weights: Vec<T>) -> Result<Self> {
        let spec = Self { kind: LossKind::WeightedSquared, weights, asymmetry: None };
        spec.validate()?;
        Ok(spec)
    }

    pub fn asymmetric(weights: Vec<T>, asymmetry: Vec<Asymmetry<T>>) -> Result<Self> {
        let spec = Self { kind: LossKind::AsymmetricLinear, weights, asymmetry: Some(asymmetry) };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| !(*w >= T::zero()) || !w.is_finite()) {
            return Err(Error::Invalid("loss weights must be finite and >= 0".into()));
        }
        if self.weights.iter().all(|w| *w == T::zero()) {
            return Err(Error::Invalid("loss weights are all zero".into()));
        }
        if let Some(a) = &self.asymmetry {
            if a.len() != self.weights.len() {
                return Err(Error::dim(self.weights.len(), a.len()));
            }
            if a.iter().any(|c| !(c.under > T::zero() && c.over > T::zero())) {
                return Err(Error::Invalid("asymmetric costs must be > 0".into()));
            }
        }
        Ok(())
    }

    fn costs(&self, i: usize) -> Asymmetry<T> {
        self.asymmetry
            .as_ref()
            .map_or(Asymmetry { under: T::one(), over: T::one() }, |a| a[i])
    }

    /// Reads `{"kind": .., "weights": {id: w}, "asymmetry": {id: {"under": .., "over": ..}}}`.
    /// With any weight given, unlisted nodes weigh 0; with none, weights are uniform.
    pub fn from_json(text: &str, h: &HierarchySpec) -> Result<Self> {
        #[derive(Deserialize)]
        struct Costs {
            under: f64,
            over: f64,
        }
        #[derive(Deserialize)]
        struct Doc {
            kind: String,
            #[serde(default)]
            weights: Option<HashMap<String, f64>>,
            #[serde(default)]
            asymmetry: Option<HashMap<String, Costs>>,
        }
        let doc: Doc = serde_json::from_str(text)?;
        let kind: LossKind = doc.kind.parse()?;
        let lookup = |id: &str| {
            h.index_of(id).ok_or_else(|| Error::Invalid(format!("loss file names unknown node '{id}'")))
        };
        let weights = match doc.weights {
            Some(map) if !map.is_empty() => {
                let mut w = vec![T::zero(); h.m()];
                for (id, v) in map {
                    w[lookup(&id)?] = T::lit(v);
                }
                w
            }
            _ => default_loss::<T>(h).weights,
        };
        let asymmetry = match doc.asymmetry {
            Some(map) => {
                let mut a = vec![Asymmetry { under: T::one(), over: T::one() }; h.m()];
                for (id, c) in map {
                    a[lookup(&id)?] = Asymmetry { under: T::lit(c.under), over: T::lit(c.over) };
                }
                Some(a)
            }
            None => None,
        };
        let spec = Self { kind, weights, asymmetry };
        spec.validate()?;
        Ok(spec)
    }
}

/// Equal-weight squared error over all nodes.
pub fn default_loss<T: Real>(h: &HierarchySpec) -> LossSpec<T> {
    let w = T::one() / T::from_usize_lossy(h.m());
    LossSpec { kind: LossKind::WeightedSquared, weights: vec![w; h.m()], asymmetry: None }
}

pub fn loss<T: Real>(candidate: &[T], target: &[T], spec: &LossSpec<T>) -> Result<T> {
    if candidate.len() != target.len() {
        return Err(Error::dim(target.len(), candidate.len()));
    }
    if spec.weights.len() != target.len() {
        return Err(Error::dim(target.len(), spec.weights.len()));
    }
    Ok(loss_unchecked(candidate, target, spec))
}

fn loss_unchecked<T: Real>(candidate: &[T], target: &[T], spec: &LossSpec<T>) -> T {
    let mut total = T::zero();
    for (i, ((&c, &t), &w)) in candidate.iter().zip(target).zip(&spec.weights).enumerate() {
        if w == T::zero() {
            continue;
        }
        total += match spec.kind {
            LossKind::WeightedSquared => w * (c - t) * (c - t),
            LossKind::AsymmetricLinear => {
                let a = spec.costs(i);
                w * (a.under * (t - c).max(T::zero()) + a.over * (c - t).max(T::zero()))
            }
        };
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecisionMode {
    /// Best posterior draw under the expected loss.
    DrawArgmin,
    /// Image of the posterior mean of β; squared loss only.
    PosteriorMean,
}

impl DecisionMode {
    pub fn default_for(kind: LossKind) -> Self {
        match kind {
            LossKind::WeightedSquared => DecisionMode::PosteriorMean,
            LossKind::AsymmetricLinear => DecisionMode::DrawArgmin,
        }
    }
}

impl FromStr for DecisionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "draw-argmin" => Ok(DecisionMode::DrawArgmin),
            "posterior-mean" => Ok(DecisionMode::PosteriorMean),
            other => Err(Error::Parse(format!("unknown decision mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RevisedForecast<T> {
    pub full: Vec<T>,
    pub bottom: Vec<T>,
    pub expected_loss: T,
    pub mode: DecisionMode,
    /// Selected draw in draw-argmin mode.
    pub draw_index: Option<usize>,
}

/// Average loss of every draw's node image against all draws (itself
/// included). Squared loss reduces to the weighted distance to the draw mean
/// plus a constant; asymmetric loss is evaluated per node on sorted draws.
pub fn expected_losses<T: Real>(nodes: &Matrix<T>, spec: &LossSpec<T>) -> Vec<T> {
    let (n, m) = (nodes.nrows(), nodes.ncols());
    let n_t = T::from_usize_lossy(n);
    let mut out = vec![T::zero(); n];
    for i in 0..m {
        let w = spec.weights[i];
        if w == T::zero() {
            continue;
        }
        let col = nodes.column(i);
        match spec.kind {
            LossKind::WeightedSquared => {
                let mu = col.iter().copied().sum::<T>() / n_t;
                let var = col.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / n_t;
                for (o, &v) in out.iter_mut().zip(&col) {
                    *o += w * ((v - mu) * (v - mu) + var);
                }
            }
            LossKind::AsymmetricLinear => {
                let a = spec.costs(i);
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&x, &y| col[x].partial_cmp(&col[y]).expect("finite draws"));
                let sorted: Vec<T> = order.iter().map(|&k| col[k]).collect();
                let total: T = sorted.iter().copied().sum();
                let mut below = T::zero();
                for (rank, &k) in order.iter().enumerate() {
                    let c = col[k];
                    // targets above c are under-forecast by c, below are over
                    let above_sum = total - below - c;
                    let above_n = T::from_usize_lossy(n - rank - 1);
                    let below_n = T::from_usize_lossy(rank);
                    let under = above_sum - above_n * c;
                    let over = below_n * c - below;
                    out[k] += w * (a.under * under + a.over * over) / n_t;
                    below += c;
                }
            }
        }
    }
    out
}

pub fn select_point<T: Real>(
    draws: &PosteriorDraws<T>,
    s: &SummingMatrix<T>,
    spec: &LossSpec<T>,
    mode: DecisionMode,
) -> Result<RevisedForecast<T>> {
    spec.validate()?;
    if spec.weights.len() != s.m() {
        return Err(Error::dim(s.m(), spec.weights.len()));
    }
    if draws.beta.ncols() != s.m_bottom() {
        return Err(Error::dim(s.m_bottom(), draws.beta.ncols()));
    }
    let nodes = draws.node_draws(s)?;
    match mode {
        DecisionMode::PosteriorMean => {
            if spec.kind != LossKind::WeightedSquared {
                return Err(Error::Invalid(
                    "posterior-mean mode has no closed form for asymmetric loss; use draw-argmin".into(),
                ));
            }
            let bottom = if draws.is_point_mass() { draws.beta.row(0).to_vec() } else { draws.beta_mean() };
            let full = s.aggregate(&bottom)?;
            let n_t = T::from_usize_lossy(draws.n_draws);
            let expected_loss = (0..nodes.nrows())
                .into_par_iter()
                .map(|r| loss_unchecked(&full, nodes.row(r), spec))
                .collect::<Vec<T>>()
                .into_iter()
                .sum::<T>()
                / n_t;
            Ok(RevisedForecast { full, bottom, expected_loss, mode, draw_index: None })
        }
        DecisionMode::DrawArgmin => {
            if draws.n_draws < 2 {
                return Err(Error::Invalid("draw-argmin needs at least two draws".into()));
            }
            let losses = expected_losses(&nodes, spec);
            let (best, &expected_loss) = losses
                .iter()
                .enumerate()
                .fold(None::<(usize, &T)>, |acc, (k, v)| match acc {
                    Some((_, b)) if !(*v < *b) => acc,
                    _ => Some((k, v)),
                })
                .expect("at least two draws");
            let bottom = draws.beta.row(best).to_vec();
            let full = s.aggregate(&bottom)?;
            Ok(RevisedForecast { full, bottom, expected_loss, mode, draw_index: Some(best) })
        }
    }
}
