//! Distributional checks of the posterior sampler.

mod common;

use common::*;
use hiercast_core::*;
use statrs::distribution::{ContinuousCDF, InverseGamma};

fn params(nu: usize, s2: f64) -> PosteriorParams<f64> {
    let k = 2;
    PosteriorParams::new(vec![1.0, -2.0], Matrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap(), s2, nu)
        .map(|p| {
            assert_eq!(p.m_bottom(), k);
            p
        })
        .unwrap()
}

/// Two-sided Kolmogorov–Smirnov statistic of a sample against a CDF.
fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs())
    })
}

#[test]
fn sigma2_follows_scaled_inverse_chi_squared() {
    let (nu, s2) = (5usize, 2.0);
    let draws = sample_posterior(&params(nu, s2), 100_000, 17).unwrap();
    // scaled inverse chi-squared(ν, s²) is inverse gamma(ν/2, ν s²/2)
    let ig = InverseGamma::new(nu as f64 / 2.0, nu as f64 * s2 / 2.0).unwrap();
    let d = ks_statistic(&draws.sigma2, |x| ig.cdf(x));
    let critical = 1.628 / (100_000f64).sqrt();
    assert!(d < critical, "KS statistic {d} >= {critical}");
}

#[test]
fn beta_given_sigma2_has_the_right_moments() {
    let draws = sample_posterior(&params(8, 1.5), 200_000, 3).unwrap();
    let mean = draws.beta_mean();
    // marginal covariance of β is V_β · ν s² / (ν − 2)
    let factor = 8.0 * 1.5 / 6.0;
    assert!((mean[0] - 1.0).abs() < 0.02 && (mean[1] + 2.0).abs() < 0.02, "{mean:?}");
    let col0 = draws.beta.column(0);
    let col1 = draws.beta.column(1);
    let n = col0.len() as f64;
    let var0 = col0.iter().map(|v| (v - mean[0]).powi(2)).sum::<f64>() / n;
    let cov = col0.iter().zip(&col1).map(|(a, b)| (a - mean[0]) * (b - mean[1])).sum::<f64>() / n;
    assert!((var0 / (2.0 * factor) - 1.0).abs() < 0.03, "{var0}");
    assert!((cov / (0.5 * factor) - 1.0).abs() < 0.05, "{cov}");
}

#[test]
fn draws_do_not_depend_on_thread_count() {
    let p = params(5, 2.0);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let many = rayon::ThreadPoolBuilder::new().num_threads(6).build().unwrap();
    let a = one.install(|| sample_posterior(&p, 5_000, 99).unwrap());
    let b = many.install(|| sample_posterior(&p, 5_000, 99).unwrap());
    assert_eq!(a, b);
}

#[test]
fn single_precision_pipeline_runs() {
    let h = figure_one();
    let s = h.summing_matrix::<f32>();
    let g = AccuracyVector::new(vec![1.0f32; 8], 1).unwrap();
    let y = BaseForecasts::new(vec![16.0f32, 6.0, 9.0, 1.0, 2.0, 3.0, 4.0, 5.0], 0).unwrap();
    let post = fit_posterior(&s, &build_q_diagonal(&g), &y).unwrap();
    let draws = sample_posterior(&post, 500, 1).unwrap();
    let pick = select_point(&draws, &s, &default_loss(&h), DecisionMode::PosteriorMean).unwrap();
    let s64 = h.summing_matrix::<f64>();
    let y64 = BaseForecasts::new(y.point.iter().map(|&v| v as f64).collect(), 0).unwrap();
    let ols = ols_reconcile(&s64, &y64).unwrap();
    for (a, b) in pick.full.iter().zip(&ols.full) {
        assert!((*a as f64 - b).abs() < 0.1, "{a} vs {b}");
    }
}
