//! Conjugate posterior over the bottom-level means and the scalar variance
//! under the flat prior `p(β, σ²) ∝ σ⁻²`.
//!
//! Given `Ŷ ~ N(Sβ, Qσ²)` the posterior factorizes as
//!
//! ```text
//! σ² | Ŷ     ~ Inv-χ²(ν, s²)          ν = m − m_K
//! β | σ², Ŷ  ~ N(β̂, V_β σ²)
//! β̂  = (SᵀQ⁻¹S)⁻¹ SᵀQ⁻¹Ŷ
//! V_β = (SᵀQ⁻¹S)⁻¹
//! s² = (Ŷ − Sβ̂)ᵀ Q⁻¹ (Ŷ − Sβ̂) / ν
//! ```
//!
//! so draws are produced by composition: σ² from its marginal, then β from
//! its conditional. Every draw is exact and independent; burn-in and
//! thinning are accepted for parity with MCMC-style configurations but are
//! not needed.

use rayon::prelude::*;

use crate::covariance::{solve_q, CovarianceQ};
use crate::error::{Error, Result};
use crate::hierarchy::SummingMatrix;
use crate::linalg::{Cholesky, Matrix};
use crate::panel::BaseForecasts;
use crate::scalar::Real;
use crate::seed::rng_for;
use crate::stats;

/// Draws generated per independently seeded chunk.
const CHUNK: usize = 256;

#[derive(Debug, Clone)]
pub struct PosteriorParams<T> {
    pub beta_hat: Vec<T>,
    pub v_beta: Matrix<T>,
    pub s2: T,
    pub nu: usize,
    v_factor: Cholesky<T>,
}

impl<T: Real> PosteriorParams<T> {
    pub fn new(beta_hat: Vec<T>, v_beta: Matrix<T>, s2: T, nu: usize) -> Result<Self> {
        if v_beta.nrows() != beta_hat.len() {
            return Err(Error::dim(beta_hat.len(), v_beta.nrows()));
        }
        if nu == 0 {
            return Err(Error::Undefined("posterior needs at least one degree of freedom".into()));
        }
        if !(s2 >= T::zero()) {
            return Err(Error::Invalid(format!("scale s² must be >= 0, got {s2}")));
        }
        let v_factor = Cholesky::new(&v_beta)?;
        Ok(Self { beta_hat, v_beta, s2, nu, v_factor })
    }

    pub fn m_bottom(&self) -> usize {
        self.beta_hat.len()
    }

    /// Mean and variance of the σ² marginal exist only for ν > 2.
    pub fn moments_exist(&self) -> bool {
        self.nu > 2
    }
}

/// Closed-form posterior parameters for base forecasts `yhat`.
pub fn fit_posterior<T: Real>(
    s: &SummingMatrix<T>,
    q: &CovarianceQ<T>,
    yhat: &BaseForecasts<T>,
) -> Result<PosteriorParams<T>> {
    let (m, m_bottom) = (s.m(), s.m_bottom());
    if m <= m_bottom {
        return Err(Error::Undefined(format!(
            "no aggregation constraints (m = {m}, m_K = {m_bottom}, ν = 0)"
        )));
    }
    if yhat.point.len() != m {
        return Err(Error::dim(m, yhat.point.len()));
    }
    if q.dim() != m {
        return Err(Error::dim(m, q.dim()));
    }
    let qinv_s = solve_q(q, s.matrix())?;
    let mut gram = s.matrix().tr_matmul(&qinv_s)?;
    for i in 0..m_bottom {
        for j in 0..i {
            let v = (gram[(i, j)] + gram[(j, i)]) / T::lit(2.0);
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    let gram_chol = Cholesky::new(&gram)
        .map_err(|_| Error::NotPositiveDefinite(": SᵀQ⁻¹S is singular".into()))?;
    let beta_hat = gram_chol.solve(&qinv_s.tr_matvec(&yhat.point)?)?;
    let v_beta = gram_chol.inverse();

    let fitted = s.aggregate(&beta_hat)?;
    let resid: Vec<T> = yhat.point.iter().zip(&fitted).map(|(&y, &f)| y - f).collect();
    let nu = m - m_bottom;
    // exactly consistent input leaves only round-off in the residual
    let y_scale = yhat.point.iter().fold(T::zero(), |a, &v| a.max(v.abs()));
    let r_scale = resid.iter().fold(T::zero(), |a, &v| a.max(v.abs()));
    let s2 = if r_scale <= y_scale * T::epsilon() * T::lit(64.0) {
        T::zero()
    } else {
        let quad: T = resid.iter().zip(q.solve_vec(&resid)?).map(|(&r, w)| r * w).sum();
        (quad / T::from_usize_lossy(nu)).max(T::zero())
    };
    PosteriorParams::new(beta_hat, v_beta, s2, nu)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws<T> {
    /// One row per draw, `m_K` columns.
    pub beta: Matrix<T>,
    pub sigma2: Vec<T>,
    pub seed: u64,
    pub n_draws: usize,
    pub nu: usize,
}

impl<T: Real> PosteriorDraws<T> {
    pub fn is_point_mass(&self) -> bool {
        self.sigma2.iter().all(|&s| s == T::zero())
    }

    /// Componentwise mean of the β draws.
    pub fn beta_mean(&self) -> Vec<T> {
        (0..self.beta.ncols()).map(|j| stats::mean(&self.beta.column(j))).collect()
    }

    /// Every draw mapped to all nodes: `n_draws × m`.
    pub fn node_draws(&self, s: &SummingMatrix<T>) -> Result<Matrix<T>> {
        self.beta.matmul(&s.matrix().transpose())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerOptions {
    pub burn_in: usize,
    pub thin: usize,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self { burn_in: 0, thin: 1 }
    }
}

pub fn sample_posterior<T: Real>(params: &PosteriorParams<T>, n_draws: usize, seed: u64) -> Result<PosteriorDraws<T>> {
    sample_posterior_with(params, n_draws, seed, SamplerOptions::default())
}

/// Composition sampler. Chunk `c` of the raw draw sequence uses a generator
/// seeded from `(seed, c)`, so output is independent of the thread count.
pub fn sample_posterior_with<T: Real>(
    params: &PosteriorParams<T>,
    n_draws: usize,
    seed: u64,
    opts: SamplerOptions,
) -> Result<PosteriorDraws<T>> {
    if n_draws == 0 {
        return Err(Error::Invalid("n_draws must be >= 1".into()));
    }
    if opts.thin == 0 {
        return Err(Error::Invalid("thinning interval must be >= 1".into()));
    }
    let k = params.m_bottom();
    if params.s2 == T::zero() {
        log::info!("s² = 0: inputs are already aggregate consistent, posterior is a point mass");
        let mut beta = Matrix::zeros(n_draws, k);
        for d in 0..n_draws {
            beta.row_mut(d).copy_from_slice(&params.beta_hat);
        }
        return Ok(PosteriorDraws { beta, sigma2: vec![T::zero(); n_draws], seed, n_draws, nu: params.nu });
    }

    let raw = opts.burn_in + n_draws * opts.thin;
    let nu_t = T::from_usize_lossy(params.nu);
    let scale = nu_t * params.s2;
    let chunks: Vec<(Vec<T>, Vec<T>)> = (0..raw.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(seed, c as u64);
            let len = CHUNK.min(raw - c * CHUNK);
            let mut sig = Vec::with_capacity(len);
            let mut betas = Vec::with_capacity(len * k);
            let mut z = vec![T::zero(); k];
            for _ in 0..len {
                let s2 = scale / T::chi_squared(&mut rng, nu_t);
                let sd = s2.sqrt();
                for zi in z.iter_mut() {
                    *zi = T::standard_normal(&mut rng);
                }
                let dev = params.v_factor.lower_mul(&z);
                betas.extend(params.beta_hat.iter().zip(dev).map(|(&b, d)| b + sd * d));
                sig.push(s2);
            }
            (sig, betas)
        })
        .collect();

    let mut sigma2 = Vec::with_capacity(n_draws);
    let mut flat = Vec::with_capacity(n_draws * k);
    let mut idx = 0usize;
    for (sig, betas) in chunks {
        for (j, s2) in sig.into_iter().enumerate() {
            if idx >= opts.burn_in && (idx - opts.burn_in) % opts.thin == 0 {
                sigma2.push(s2);
                flat.extend_from_slice(&betas[j * k..(j + 1) * k]);
            }
            idx += 1;
        }
    }
    debug_assert_eq!(sigma2.len(), n_draws);
    Ok(PosteriorDraws { beta: Matrix::from_vec(n_draws, k, flat)?, sigma2, seed, n_draws, nu: params.nu })
}

/// Location and quantiles of one marginal.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary<T> {
    pub mean: T,
    pub median: T,
    /// `(level, value)` in the requested order.
    pub quantiles: Vec<(f64, T)>,
}

impl<T: Real> Summary<T> {
    fn of(values: &[T], levels: &[f64]) -> Self {
        let sorted = stats::sorted(values);
        Self {
            mean: stats::mean(values),
            median: stats::quantile_sorted(&sorted, 0.5),
            quantiles: levels.iter().map(|&p| (p, stats::quantile_sorted(&sorted, p))).collect(),
        }
    }

    pub fn quantile(&self, level: f64) -> Option<T> {
        self.quantiles.iter().find(|(p, _)| *p == level).map(|&(_, v)| v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary<T> {
    pub nodes: Vec<Summary<T>>,
    pub sigma2: Summary<T>,
    /// False when ν ≤ 2; locations should then be read from the median.
    pub moments_exist: bool,
}

impl<T: Real> PosteriorSummary<T> {
    /// Mean when it exists, otherwise the median.
    pub fn center(&self, node: usize) -> T {
        let s = &self.nodes[node];
        if self.moments_exist {
            s.mean
        } else {
            s.median
        }
    }

    pub fn sigma2_center(&self) -> T {
        if self.moments_exist {
            self.sigma2.mean
        } else {
            self.sigma2.median
        }
    }
}

/// Per-node posterior means and empirical quantiles at `levels`.
pub fn posterior_summary<T: Real>(
    draws: &PosteriorDraws<T>,
    s: &SummingMatrix<T>,
    levels: &[f64],
) -> Result<PosteriorSummary<T>> {
    if levels.is_empty() {
        return Err(Error::Invalid("no quantile levels requested".into()));
    }
    if let Some(p) = levels.iter().find(|p| !(**p >= 0.0 && **p <= 1.0)) {
        return Err(Error::Invalid(format!("quantile level {p} outside [0, 1]")));
    }
    if draws.n_draws < 100 && !draws.is_point_mass() {
        log::warn!("only {} posterior draws; quantiles will be coarse", draws.n_draws);
    }
    let nodes = draws.node_draws(s)?;
    let node_summaries = (0..s.m()).map(|i| Summary::of(&nodes.column(i), levels)).collect();
    Ok(PosteriorSummary {
        nodes: node_summaries,
        sigma2: Summary::of(&draws.sigma2, levels),
        moments_exist: draws.nu > 2,
    })
}
