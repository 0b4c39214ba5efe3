//! Library results against independent dense computations.

mod common;

use common::*;
use hiercast_core::decision::{expected_losses, Asymmetry};
use hiercast_core::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn dense_gls(s: &DMatrix<f64>, q: &DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, f64) {
    let qinv = q.clone().try_inverse().unwrap();
    let gram = s.transpose() * &qinv * s;
    let beta = gram.clone().try_inverse().unwrap() * s.transpose() * &qinv * y;
    let r = y - s * &beta;
    let nu = (s.nrows() - s.ncols()) as f64;
    let s2 = (r.transpose() * &qinv * &r)[(0, 0)] / nu;
    (beta, s2)
}

#[test]
fn gls_matches_dense_normal_equations_on_random_trees() {
    let mut rng = rng(11);
    for case in 0..100 {
        let h = random_tree(&mut rng);
        let s = h.summing_matrix::<f64>();
        let gamma = AccuracyVector::new(uniform_vec(&mut rng, h.m(), 0.5, 1.5), 3).unwrap();
        let q = if case % 2 == 0 {
            build_q_diagonal(&gamma)
        } else {
            build_q_block(&gamma, &h, Parity::deepest(&h)).unwrap()
        };
        let y = uniform_vec(&mut rng, h.m(), -10.0, 50.0);
        let post = fit_posterior(&s, &q, &BaseForecasts::new(y.clone(), 0).unwrap()).unwrap();
        let (beta, s2) = dense_gls(&to_dense(s.matrix()), &to_dense(&q.to_dense()), &DVector::from_vec(y));
        assert!(rel_err(&post.beta_hat, beta.as_slice()) < 1e-10, "case {case}");
        assert!((post.s2 - s2).abs() / s2 < 1e-10, "case {case}: {} vs {s2}", post.s2);
        let vb = (to_dense(s.matrix()).transpose() * to_dense(&q.to_dense()).try_inverse().unwrap()
            * to_dense(s.matrix()))
        .try_inverse()
        .unwrap();
        assert!(rel_err(post.v_beta.as_slice(), vb.as_slice()) < 1e-10);
    }
}

#[test]
fn figure_one_ols_matches_dense_least_squares() {
    let h = figure_one();
    let s = h.summing_matrix::<f64>();
    let y = vec![16.0, 6.0, 9.0, 1.0, 2.0, 3.0, 4.0, 5.0];
    let r = ols_reconcile(&s, &BaseForecasts::new(y.clone(), 0).unwrap()).unwrap();
    let sd = to_dense(s.matrix());
    let oracle = sd.clone().svd(true, true).solve(&DVector::from_vec(y), 1e-14).unwrap();
    assert!(rel_err(&r.bottom, oracle.as_slice()) < 1e-10);
    let zero = ols_reconcile(&s, &BaseForecasts::new(vec![0.0; 8], 0).unwrap()).unwrap();
    assert!(zero.full.iter().all(|v| *v == 0.0));
}

#[test]
fn huge_gamma_node_drops_out_of_wls() {
    let h = figure_one();
    let s = h.summing_matrix::<f64>();
    let mut rng = rng(5);
    for node in [0usize, 2, 4] {
        let y = uniform_vec(&mut rng, 8, 1.0, 20.0);
        let mut g = vec![1.0; 8];
        g[node] = 1e6;
        let r = wls_reconcile(&s, &AccuracyVector::new(g, 2).unwrap(), &BaseForecasts::new(y.clone(), 0).unwrap())
            .unwrap();
        // oracle: ordinary least squares with that row removed
        let sd = to_dense(s.matrix()).remove_row(node);
        let yd = DVector::from_vec(y).remove_row(node);
        let oracle = (sd.transpose() * &sd).try_inverse().unwrap() * sd.transpose() * yd;
        assert!(rel_err(&r.bottom, oracle.as_slice()) < 1e-3, "node {node}");
    }
}

#[test]
fn br_with_identity_is_ols_and_with_q1_is_wls() {
    let mut rng = rng(3);
    for _ in 0..50 {
        let h = random_tree(&mut rng);
        let s = h.summing_matrix::<f64>();
        let y = BaseForecasts::new(uniform_vec(&mut rng, h.m(), 0.0, 100.0), 0).unwrap();
        let ones = AccuracyVector::new(vec![1.0; h.m()], 1).unwrap();
        let br = fit_posterior(&s, &build_q_diagonal(&ones), &y).unwrap();
        let sd = to_dense(s.matrix());
        let oracle = (sd.transpose() * &sd).try_inverse().unwrap() * sd.transpose() * DVector::from_vec(y.point.clone());
        assert!(rel_err(&br.beta_hat, oracle.as_slice()) < 1e-12);

        let g = AccuracyVector::new(uniform_vec(&mut rng, h.m(), 0.01, 10.0), 1).unwrap();
        let br = fit_posterior(&s, &build_q_diagonal(&g), &y).unwrap();
        let wls = wls_reconcile(&s, &g, &y).unwrap();
        assert!(rel_err(&wls.bottom, &br.beta_hat) < 1e-10);
    }
}

#[test]
fn block_q_solve_matches_dense_inverse() {
    let mut rng = rng(8);
    for _ in 0..50 {
        let h = random_tree(&mut rng);
        let gamma = AccuracyVector::new(uniform_vec(&mut rng, h.m(), 0.1, 5.0), 2).unwrap();
        for parity in [Parity::Even, Parity::Odd] {
            let q = build_q_block(&gamma, &h, parity).unwrap();
            let b = uniform_vec(&mut rng, h.m(), -1.0, 1.0);
            let x = q.solve_vec(&b).unwrap();
            let oracle = to_dense(&q.to_dense()).try_inverse().unwrap() * DVector::from_vec(b.clone());
            assert!(rel_err(&x, oracle.as_slice()) < 1e-9);
            assert!(rel_err(&q.multiply(&x).unwrap(), &b) < 1e-9);
        }
    }
}

#[test]
fn draw_argmin_matches_brute_force() {
    let h = figure_one();
    let s = h.summing_matrix::<f64>();
    let mut rng = rng(21);
    let g = AccuracyVector::new(uniform_vec(&mut rng, 8, 0.5, 2.0), 2).unwrap();
    let y = BaseForecasts::new(uniform_vec(&mut rng, 8, 5.0, 30.0), 0).unwrap();
    let post = fit_posterior(&s, &build_q_diagonal(&g), &y).unwrap();
    let draws = sample_posterior(&post, 300, 4).unwrap();
    let nodes = draws.node_draws(&s).unwrap();
    let weights = uniform_vec(&mut rng, 8, 0.0, 1.0);
    let costs: Vec<Asymmetry<f64>> =
        (0..8).map(|_| Asymmetry { under: rng.random_range(0.5..3.0), over: rng.random_range(0.5..3.0) }).collect();
    for spec in [
        LossSpec::weighted_squared(weights.clone()).unwrap(),
        LossSpec::asymmetric(weights.clone(), costs).unwrap(),
    ] {
        let brute: Vec<f64> = (0..300)
            .map(|c| (0..300).map(|r| loss(nodes.row(c), nodes.row(r), &spec).unwrap()).sum::<f64>() / 300.0)
            .collect();
        let fast = expected_losses(&nodes, &spec);
        assert!(rel_err(&fast, &brute) < 1e-10);
        let best = (0..300).min_by(|&a, &b| brute[a].partial_cmp(&brute[b]).unwrap()).unwrap();
        let pick = select_point(&draws, &s, &spec, DecisionMode::DrawArgmin).unwrap();
        assert_eq!(pick.draw_index, Some(best));
        assert_eq!(pick.bottom, draws.beta.row(best));
    }
}

#[test]
fn holdout_accuracy_matches_hand_rolled_loop() {
    let h = figure_one();
    let mut rng = rng(2);
    let rows: Vec<Vec<f64>> = (0..8).map(|_| uniform_vec(&mut rng, 20, 10.0, 20.0)).collect();
    // make the panel consistent so it is a valid hierarchy history
    let s = h.summing_matrix::<f64>();
    let bottom = hiercast_core::Matrix::from_rows(&rows[3..]).unwrap();
    let full = s.matrix().matmul(&bottom).unwrap();
    let rows: Vec<Vec<f64>> = (0..8).map(|i| full.row(i).to_vec()).collect();
    let panel = SeriesPanel::from_rows(&h, &rows).unwrap();
    let acc = historical_accuracy(&panel, &ForecasterSpec::uniform(Forecaster::Mean), 0.2).unwrap();
    assert_eq!(acc.holdout, 4);
    for (i, row) in rows.iter().enumerate() {
        let mut total = 0.0;
        for r in 1..=4 {
            let prefix = &row[..20 - r];
            let f = prefix.iter().sum::<f64>() / prefix.len() as f64;
            total += (f - row[20 - r]).powi(2);
        }
        assert!((acc.gamma[i] - total / 4.0).abs() < 1e-9 * total.max(1.0));
    }
}
