use agehazard::flowdata::{AggregatedPanel, GridSpec, ObservationWindow};
use agehazard::posterior::{lor_vs_under40, rho_posterior, summarize_draws};
use agehazard::tps::{SmoothnessPrior, DEFAULT_RHO_GRID, DEFAULT_RHO_PROBS};
use chrono::{Days, NaiveDate};
use proptest::prelude::*;

/// 4 weekly bins x 5 ten-year age bins from 20; the first two age bins are
/// the under-40 reference.
fn panel(n: Vec<u32>) -> AggregatedPanel {
    let start = NaiveDate::from_ymd_opt(2001, 1, 1).unwrap();
    let window = ObservationWindow::new(start, start + Days::new(28)).unwrap();
    let grid = GridSpec {
        time_bin_days: 7,
        age_bin_years: 10,
        age_min_years: 20,
        age_max_years: 70,
    };
    let x = vec![0; n.len()];
    AggregatedPanel::from_counts(window, grid, n, x).unwrap()
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[test]
fn reference_is_the_risk_weighted_pooled_rate() {
    let mut n = vec![1; 20];
    n[0] = 10;
    n[1] = 30;
    let mut beta = vec![0.0; 20];
    beta[0] = logit(0.1);
    beta[1] = logit(0.3);
    beta[4] = 1.5;
    let lor = lor_vs_under40(&beta, &panel(n));
    // (10 * 0.1 + 30 * 0.3) / 40 = 0.25
    assert!((lor[4] - (1.5 - logit(0.25))).abs() < 1e-12);
    assert!((lor[0] - (logit(0.1) - logit(0.25))).abs() < 1e-12);
}

#[test]
fn empty_reference_gives_missing_lor() {
    let mut n = vec![3; 20];
    n[5] = 0;
    n[6] = 0;
    let lor = lor_vs_under40(&[0.2; 20], &panel(n));
    assert!((5..10).all(|c| lor[c].is_nan()));
    assert!(lor[..5].iter().chain(&lor[10..]).all(|v| v.abs() < 1e-12));
}

proptest! {
    #[test]
    fn constant_within_time_bin_means_zero_lor(
        levels in prop::collection::vec(-8.0f64..8.0, 4),
        n in prop::collection::vec(1u32..50, 20),
    ) {
        let beta: Vec<f64> = (0..20).map(|c| levels[c / 5]).collect();
        for v in lor_vs_under40(&beta, &panel(n)) {
            prop_assert!(v.abs() < 1e-9, "{}", v);
        }
    }

    #[test]
    fn positive_draws_never_lower_the_probability(
        draws in prop::collection::vec(prop::collection::vec(-4.0f64..4.0, 20), 1..30),
        extra in 1usize..10,
        cell in 2usize..5,
    ) {
        let pnl = panel(vec![5; 20]);
        let base: Vec<&[f64]> = draws.iter().map(|d| d.as_slice()).collect();
        let before = summarize_draws(&base, &pnl, 40).unwrap();
        let mut bump = vec![-3.0; 20];
        for i in 0..4 {
            bump[i * 5 + cell] = 1.0;
        }
        let mut all = base.clone();
        all.extend(std::iter::repeat_n(bump.as_slice(), extra));
        let after = summarize_draws(&all, &pnl, 40).unwrap();
        for i in 0..4 {
            let c = i * 5 + cell;
            prop_assert!(after.prob_or_gt_1[c] >= before.prob_or_gt_1[c]);
        }
    }

    #[test]
    fn rho_frequencies_sum_to_one(counts in prop::collection::vec(0u64..100_000, 6)) {
        prop_assume!(counts.iter().sum::<u64>() > 0);
        let prior = SmoothnessPrior::new(DEFAULT_RHO_GRID.to_vec(), DEFAULT_RHO_PROBS.to_vec(), 0.5, vec![1.0; 6]).unwrap();
        let post = rho_posterior(&counts, &prior).unwrap();
        let total: f64 = post.rows.iter().map(|r| r.frequency).sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        for (row, &c) in post.rows.iter().zip(&counts) {
            prop_assert_eq!(row.frequency, c as f64 / post.total as f64);
            prop_assert!(row.lower <= row.frequency && row.frequency <= row.upper);
        }
    }
}
