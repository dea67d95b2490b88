mod common;

use common::*;
use percept_age::evaluation::{error_by_age_window, AgeLabel, PredictionRow, PredictionSet, DEFAULT_WINDOW};

const EXACT: f64 = 1e-12;
const SEEDS: u64 = 10;

#[test]
fn mae_matches_resummation() {
    for seed in 0..20 {
        assert!(mae_oracle_err(seed) <= EXACT, "seed {seed}");
    }
}

#[test]
fn stratify_matches_per_subset_brute_force() {
    for seed in 0..SEEDS {
        let e = stratify_oracle_err(seed);
        assert!(e <= EXACT, "seed {seed}: {e:e}");
    }
}

#[test]
fn weighted_category_maes_recover_the_overall_mae() {
    for seed in 0..SEEDS {
        let e = weighted_identity_err(seed);
        assert!(e <= 1e-9, "seed {seed}: {e:e}");
    }
}

#[test]
fn age_window_matches_double_loop() {
    for seed in 0..SEEDS {
        let e = window_oracle_err(seed);
        assert!(e <= EXACT, "seed {seed}: {e:e}");
    }
}

#[test]
fn histogram_matches_brute_force_counting() {
    for seed in 0..SEEDS {
        assert!(histogram_oracle_ok(seed), "seed {seed}");
    }
}

#[test]
fn observer_eval_matches_brute_force() {
    for seed in 0..SEEDS {
        let e = observer_oracle_err(seed);
        assert!(e <= EXACT, "seed {seed}: {e:e}");
    }
}

#[test]
fn constant_error_gives_flat_curve() {
    let (_, records) = random_prediction_set(3, 150);
    let rows = records
        .iter()
        .map(|r| PredictionRow {
            image_id: r.image_id.clone(),
            apparent_pred: r.apparent_mean + 2.5,
            real_pred: Some(r.real_age - 2.5),
        })
        .collect();
    let preds = PredictionSet::new(rows).unwrap();
    for label in [AgeLabel::Real, AgeLabel::Apparent] {
        for p in error_by_age_window(&preds, &records, label, DEFAULT_WINDOW).unwrap() {
            assert!((p.mae - 2.5).abs() < 1e-12);
        }
    }
}
