mod support;

use engage_core::diagnostics::{interaction_scan, positivity_report, OVERLAP_THRESHOLD};
use engage_core::glm::{Family, ModelSpec};
use engage_core::scm::{self, presets};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn positivity_counts_add_up(seed in any::<u64>()) {
        let d = support::random_dataset(&mut ChaCha8Rng::seed_from_u64(seed));
        let rep = positivity_report(&d, &ModelSpec::saturated(Family::Logistic), OVERLAP_THRESHOLD).unwrap();
        prop_assert_eq!(rep.total, d.len());
        prop_assert_eq!(rep.strata.iter().map(|s| s.total).sum::<usize>(), d.len());
        prop_assert_eq!(rep.strata.iter().map(|s| s.trial).sum::<usize>(), d.n_trial());
        prop_assert_eq!(rep.strata.iter().map(|s| s.target).sum::<usize>(), d.n_target());
        for s in &rep.strata {
            prop_assert_eq!(s.arms[0] + s.arms[1], s.trial);
            prop_assert!((s.p_hat_s - s.trial as f64 / s.total as f64).abs() < 1e-12);
        }
    }
}

/// Population-weighted additive contrast of contrasts from a scan.
fn pooled_additive(scan: &engage_core::diagnostics::InteractionScan) -> (f64, f64) {
    let n: f64 = scan.strata.iter().map(|s| s.n as f64).sum();
    let est = scan.strata.iter().map(|s| s.n as f64 / n * s.additive).sum();
    let se = scan.strata.iter().map(|s| (s.n as f64 / n * s.additive_se).powi(2)).sum::<f64>().sqrt();
    (est, se)
}

#[test]
fn interaction_scan_on_o2_converges_to_the_table_interaction() {
    let spec = presets::o2();
    let exact = support::interaction_offset(&spec);
    assert!((exact - 0.2).abs() < 1e-12);
    let mut errors = Vec::new();
    for n in [10_000, 100_000] {
        let scan = interaction_scan(&scm::generate(&spec, n, 41).unwrap()).unwrap();
        let (est, se) = pooled_additive(&scan);
        assert!((est - exact).abs() <= 4.0 * se, "n={n}: {est} vs {exact} (se {se})");
        for s in &scan.strata {
            assert!((s.additive - 0.2).abs() <= 4.0 * s.additive_se, "n={n} x={:?}: {}", s.x, s.additive);
        }
        errors.push(se);
    }
    assert!(errors[1] < errors[0] / 2.0, "standard error did not shrink: {errors:?}");
}
