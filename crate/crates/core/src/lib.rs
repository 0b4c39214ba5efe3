//! Probabilistic reconciliation of hierarchical forecasts.
//!
//! Base forecasts for every node of a hierarchy are treated as noisy
//! observations of `S·β`, where `S` is the summing matrix and `β` the
//! bottom-level values. With a known covariance shape `Q` built from each
//! node's holdout accuracy and a noninformative prior, the posterior of
//! `(β, σ²)` is available in closed form and is sampled exactly. A single
//! aggregate-consistent point forecast is then chosen by minimizing a
//! per-node weighted loss over the posterior draws.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the
//! `*F64` / `*F32` aliases below name the common concrete types.

pub mod baselines;
pub mod covariance;
pub mod decision;
pub mod error;
pub mod hierarchy;
pub mod linalg;
pub mod metrics;
pub mod panel;
pub mod posterior;
pub mod scalar;
pub mod seed;
pub mod simlab;
pub mod stats;

pub use baselines::{
    bottom_up, ols_reconcile, top_down, wls_reconcile, BaselineMethod, BaselineResult, Proportions,
};
pub use covariance::{build_q_block, build_q_diagonal, solve_q, CovarianceQ, Parity, QStructure};
pub use decision::{default_loss, loss, select_point, DecisionMode, LossKind, LossSpec, RevisedForecast};
pub use error::{Error, Result};
pub use hierarchy::{
    build_summing_matrix, enumerate_subtrees, parse_hierarchy, HierarchySpec, NodeRecord, Subtree, SummingMatrix,
};
pub use linalg::{Cholesky, Matrix};
pub use metrics::{
    aggregate_consistency, classify_dataset, evaluate, evaluate_with, forecastability, relative_error_table,
    DatasetClass, DatasetScore, ErrorMetric, EvaluationWeights,
};
pub use panel::{
    base_forecast_all, forecast_one_step, historical_accuracy, AccuracyVector, BaseForecasts, Forecaster,
    ForecasterSpec, SeriesPanel,
};
pub use posterior::{
    fit_posterior, posterior_summary, sample_posterior, sample_posterior_with, PosteriorDraws, PosteriorParams,
    PosteriorSummary, SamplerOptions,
};
pub use scalar::Real;
pub use simlab::{generate_dataset, run_setting, Method, Setting, SimConfig, SimDataset};

pub type MatrixF64 = Matrix<f64>;
pub type MatrixF32 = Matrix<f32>;
pub type SummingMatrixF64 = SummingMatrix<f64>;
pub type SummingMatrixF32 = SummingMatrix<f32>;
pub type SeriesPanelF64 = SeriesPanel<f64>;
pub type SeriesPanelF32 = SeriesPanel<f32>;
pub type BaseForecastsF64 = BaseForecasts<f64>;
pub type BaseForecastsF32 = BaseForecasts<f32>;
pub type AccuracyVectorF64 = AccuracyVector<f64>;
pub type AccuracyVectorF32 = AccuracyVector<f32>;
pub type CovarianceQF64 = CovarianceQ<f64>;
pub type CovarianceQF32 = CovarianceQ<f32>;
pub type PosteriorParamsF64 = PosteriorParams<f64>;
pub type PosteriorParamsF32 = PosteriorParams<f32>;
pub type PosteriorDrawsF64 = PosteriorDraws<f64>;
pub type PosteriorDrawsF32 = PosteriorDraws<f32>;
pub type PosteriorSummaryF64 = PosteriorSummary<f64>;
pub type PosteriorSummaryF32 = PosteriorSummary<f32>;
pub type LossSpecF64 = LossSpec<f64>;
pub type LossSpecF32 = LossSpec<f32>;
pub type RevisedForecastF64 = RevisedForecast<f64>;
pub type RevisedForecastF32 = RevisedForecast<f32>;
pub type BaselineResultF64 = BaselineResult<f64>;
pub type BaselineResultF32 = BaselineResult<f32>;
pub type EvaluationWeightsF64 = EvaluationWeights<f64>;
pub type EvaluationWeightsF32 = EvaluationWeights<f32>;
