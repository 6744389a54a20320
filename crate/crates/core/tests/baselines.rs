use agehazard::baselines::{
    day_subgroup_table, fisher_exact_one_sided, hinge_fit_xy, hypergeometric_pmf, TwoByTwo,
};
use agehazard::flowdata::{FlowRecord, Reason};
use chrono::NaiveDate;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn table(x1: u64, n1: u64, x2: u64, n2: u64) -> TwoByTwo {
    TwoByTwo::new(x1, n1, x2, n2).unwrap()
}

#[test]
fn fisher_trivial_cases() {
    assert_eq!(fisher_exact_one_sided(&table(0, 8, 15, 136)), 1.0);
    // two items, one success: the focal item carries it half the time
    assert!((fisher_exact_one_sided(&table(1, 1, 0, 1)) - 0.5).abs() < 1e-15);
}

#[test]
fn fisher_matches_enumerated_tail() {
    // 3 of 8 vs 15 of 136: P(X >= 3), X ~ Hypergeometric(144, 18, 8), by exact
    // binomial-coefficient arithmetic in u128
    fn choose(n: u128, k: u128) -> u128 {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }
    let total = choose(144, 8);
    let tail: u128 = (3..=8).map(|k| choose(18, k) * choose(126, 8 - k)).sum();
    let p = tail as f64 / total as f64;
    assert!((fisher_exact_one_sided(&table(3, 8, 15, 136)) - p).abs() < 1e-12);
}

#[test]
fn rejects_impossible_counts() {
    assert!(TwoByTwo::new(5, 4, 0, 10).is_err());
}

#[test]
fn subgroup_table_counts_roster_on_the_day() {
    let d = |y, m, day| NaiveDate::from_ymd_opt(y, m, day).unwrap();
    let day = d(2002, 1, 2);
    let records = vec![
        FlowRecord::new(d(1940, 1, 1), d(1990, 1, 1), Some(day), Reason::Involuntary).unwrap(),
        FlowRecord::new(d(1941, 1, 1), d(1990, 1, 1), None, Reason::Censored).unwrap(),
        FlowRecord::new(d(1970, 1, 1), d(1995, 1, 1), Some(day), Reason::Involuntary).unwrap(),
        FlowRecord::new(d(1971, 1, 1), d(1995, 1, 1), Some(day), Reason::Voluntary).unwrap(),
        FlowRecord::new(d(1972, 1, 1), d(1995, 1, 1), Some(d(2001, 1, 1)), Reason::Involuntary).unwrap(),
        FlowRecord::new(d(1973, 1, 1), d(2003, 1, 1), None, Reason::Censored).unwrap(),
    ];
    let t = day_subgroup_table(&records, day, 60.0);
    assert_eq!((t.x1, t.n1, t.x2, t.n2), (1, 2, 1, 2));
}

fn simulate(seed: u64, prob: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..4000)
        .map(|_| {
            let age: f64 = rng.random_range(20.0..70.0);
            let y = (rng.random::<f64>() < prob(age)) as u8 as f64;
            ((age - 40.0).max(0.0), y)
        })
        .collect()
}

#[test]
fn hinge_null_rarely_significant() {
    let seeds = 40;
    let calm = (0..seeds)
        .filter(|&s| {
            let fit = hinge_fit_xy(&simulate(s, |_| 0.1)).unwrap();
            assert!(!fit.separated);
            fit.z.abs() < 3.0
        })
        .count();
    assert!(calm as f64 >= 0.95 * seeds as f64, "{calm} of {seeds}");
}

#[test]
fn hinge_detects_rising_hazard() {
    // 0.05 up to 40, rising linearly to 0.20 at 60
    let fit = hinge_fit_xy(&simulate(7, |a| if a < 40.0 { 0.05 } else { 0.05 + 0.0075 * (a - 40.0) })).unwrap();
    assert!(fit.coefficient > 0.0 && fit.p_one_sided < 0.01, "{fit:?}");
}

#[test]
fn hinge_recovers_its_own_coefficient() {
    let (b0, b1) = (-2.5, 0.05);
    let covered = (0..30)
        .filter(|&s| {
            let data = simulate(100 + s, |a| 1.0 / (1.0 + (-(b0 + b1 * (a - 40.0).max(0.0))).exp()));
            let fit = hinge_fit_xy(&data).unwrap();
            (fit.coefficient - b1).abs() <= 2.0 * fit.std_error
        })
        .count();
    assert!(covered >= 27, "{covered} of 30");
}

#[test]
fn hinge_flags_separation_and_refuses_degenerate_input() {
    let data: Vec<(f64, f64)> = (0..50).map(|i| (i as f64, (i >= 25) as u8 as f64)).collect();
    assert!(hinge_fit_xy(&data).unwrap().separated);
    let none: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 0.0)).collect();
    assert!(hinge_fit_xy(&none).is_err());
}

proptest! {
    #[test]
    fn pmf_sums_to_one(pop in 1u64..300, succ_frac in 0.0f64..1.0, draw_frac in 0.0f64..1.0) {
        let succ = (succ_frac * pop as f64) as u64;
        let draws = (draw_frac * pop as f64) as u64;
        let total: f64 = (0..=draws.min(succ)).map(|k| hypergeometric_pmf(pop, succ, draws, k)).sum();
        prop_assert!((total - 1.0).abs() < 1e-12, "{}", total);
    }

    #[test]
    fn fisher_decreases_in_x1(n1 in 1u64..40, n2 in 1u64..200, events in 1u64..60) {
        let events = events.min(n1 + n2);
        let lo = events.saturating_sub(n2);
        let hi = events.min(n1);
        let mut last = f64::INFINITY;
        for x1 in lo..=hi {
            let p = fisher_exact_one_sided(&table(x1, n1, events - x1, n2));
            prop_assert!(p <= last + 1e-12 && (0.0..=1.0 + 1e-12).contains(&p));
            last = p;
        }
    }
}
