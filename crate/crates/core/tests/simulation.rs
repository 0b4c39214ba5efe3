//! Behaviour of the synthetic benchmark generator and runner.

use hiercast_core::covariance::QStructure;
use hiercast_core::metrics::aggregate_consistency;
use hiercast_core::simlab::*;

#[test]
fn huge_noise_on_canada_children_breaks_canada_consistency() {
    let cfg = SimConfig { noisy_multiplier: 5.0, error_scale: (1.0, 1.0), ..SimConfig::default() };
    let h = &cfg.hierarchy;
    let (us, canada) = (h.index_of("US").unwrap(), h.index_of("Canada").unwrap());
    let wins = (0..200)
        .filter(|&i| {
            let d = generate_dataset(&cfg, i).unwrap();
            aggregate_consistency(&d.base, h, canada).unwrap() > aggregate_consistency(&d.base, h, us).unwrap()
        })
        .count();
    assert!(wins >= 190, "{wins}/200");
}

#[test]
fn raising_a_multiplier_does_not_lower_its_gamma() {
    let base = SimConfig { n_datasets: 100, ..SimConfig::default() };
    let node = base.hierarchy.index_of("US/Consulting").unwrap();
    let mut louder = base.clone();
    louder.noise_profile.insert("US/Consulting".into(), base.clean_multiplier * 4.0);
    let held = (0..100)
        .filter(|&i| {
            let a = generate_dataset(&base, i).unwrap();
            let b = generate_dataset(&louder, i).unwrap();
            assert_eq!(a.panel, b.panel);
            b.gamma.gamma[node] >= a.gamma.gamma[node]
        })
        .count();
    assert!(held >= 90, "{held}/100");
}

#[test]
fn runs_are_worker_count_independent() {
    let cfg = SimConfig { n_datasets: 40, ..SimConfig::default() };
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let many = rayon::ThreadPoolBuilder::new().num_threads(5).build().unwrap();
    for q in [QStructure::Diagonal, QStructure::BlockDiagonal] {
        let a = one.install(|| run_setting(&cfg, Setting::Two, &Method::ALL, q).unwrap());
        let b = many.install(|| run_setting(&cfg, Setting::Two, &Method::ALL, q).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.max_consistency_gap(), 0.0);
        let mut csv_a = Vec::new();
        a.write_scores_csv(&mut csv_a).unwrap();
        let mut csv_b = Vec::new();
        b.write_scores_csv(&mut csv_b).unwrap();
        assert_eq!(csv_a, csv_b);
    }
}

#[test]
fn single_dataset_gives_no_class_rows() {
    let cfg = SimConfig { n_datasets: 1, ..SimConfig::default() };
    let r = run_setting(&cfg, Setting::One, &Method::ALL, QStructure::Diagonal).unwrap();
    assert!(r.rows.is_empty());
    assert!(!r.notices.is_empty());
}

#[test]
fn run_requires_br() {
    let cfg = SimConfig { n_datasets: 5, ..SimConfig::default() };
    assert!(run_setting(&cfg, Setting::One, &[Method::Bu], QStructure::Diagonal).is_err());
}
