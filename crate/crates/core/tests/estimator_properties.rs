mod support;

use engage_core::data::{CompositeDataset, CompositeRow, DesignTag};
use engage_core::estimators::EstimatorKind;
use engage_core::EstimatorConfig;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ABSOLUTE: [EstimatorKind; 6] = [
    EstimatorKind::OmAll,
    EstimatorKind::IpwAll { normalized: false },
    EstimatorKind::IpwAll { normalized: true },
    EstimatorKind::OmNonparticipants,
    EstimatorKind::IpwNonparticipants,
    EstimatorKind::TrialctxAll,
];

fn point(kind: EstimatorKind, data: &CompositeDataset) -> f64 {
    EstimatorConfig::new(kind).estimate(data).unwrap().point
}

fn dataset(seed: u64) -> CompositeDataset {
    support::random_dataset(&mut ChaCha8Rng::seed_from_u64(seed))
}

/// Cells whose trial share is the same everywhere: `m_x` copies of a block
/// with `t` rows per arm and `c` non-participant rows.
fn constant_share(seed: u64, t: usize, c: usize) -> CompositeDataset {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for x in 0..3 {
        let copies = r.gen_range(1..=3);
        for _ in 0..copies {
            for a in [0u8, 1] {
                for _ in 0..t {
                    rows.push(CompositeRow::trial(rows.len() as u64, vec![x as f64], a, r.gen_range(0..=1)));
                }
            }
            for _ in 0..c {
                rows.push(CompositeRow::target(rows.len() as u64, vec![x as f64]));
            }
        }
    }
    CompositeDataset::new(rows, DesignTag::Nested).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn saturated_outcome_model_equals_weighting(seed in any::<u64>()) {
        let d = dataset(seed);
        let om = point(EstimatorKind::OmAll, &d);
        for normalized in [false, true] {
            let ipw = point(EstimatorKind::IpwAll { normalized }, &d);
            prop_assert!((om - ipw).abs() <= 1e-12, "om {om} ipw {ipw}");
        }
        let om0 = point(EstimatorKind::OmNonparticipants, &d);
        let ipw0 = point(EstimatorKind::IpwNonparticipants, &d);
        prop_assert!((om0 - ipw0).abs() <= 1e-12, "om {om0} ipw {ipw0}");
    }

    #[test]
    fn trial_context_is_a_relabelling(seed in any::<u64>()) {
        let d = dataset(seed);
        let om = EstimatorConfig::new(EstimatorKind::OmAll).estimate(&d).unwrap();
        let tc = EstimatorConfig::new(EstimatorKind::TrialctxAll).estimate(&d).unwrap();
        prop_assert_eq!(om.point.to_bits(), tc.point.to_bits());
        prop_assert_ne!(om.estimand, tc.estimand);
    }

    #[test]
    fn flipping_outcomes_flips_the_sign(seed in any::<u64>()) {
        let d = dataset(seed);
        let flipped = d.flip_outcomes();
        for kind in ABSOLUTE {
            let (p, q) = (point(kind, &d), point(kind, &flipped));
            // Cell means of 1-y and of y round independently, so only up to an ulp or two.
            prop_assert!((p + q).abs() <= 1e-12, "{kind:?}: {p} vs {q}");
        }
    }

    #[test]
    fn row_order_does_not_matter(seed in any::<u64>(), shuffle in any::<u64>()) {
        let d = dataset(seed);
        let mut rows = d.rows().to_vec();
        rows.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle));
        let shuffled = CompositeDataset::new(rows, DesignTag::Nested).unwrap();
        for kind in ABSOLUTE {
            let (p, q) = (point(kind, &d), point(kind, &shuffled));
            prop_assert!((p - q).abs() <= 1e-12, "{kind:?}: {p} vs {q}");
        }
    }

    #[test]
    fn constant_participation_makes_subgroups_agree(seed in any::<u64>(), t in 1usize..5, c in 1usize..5) {
        let d = constant_share(seed, t, c);
        let all = point(EstimatorKind::OmAll, &d);
        let sub = point(EstimatorKind::OmNonparticipants, &d);
        prop_assert!((all - sub).abs() <= 1e-12, "all {all} nonparticipants {sub}");
    }

    #[test]
    fn estimates_stay_in_range(seed in any::<u64>()) {
        let d = dataset(seed);
        for kind in ABSOLUTE {
            let p = point(kind, &d);
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&p), "{kind:?}: {p}");
        }
    }
}
