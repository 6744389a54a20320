//! Classical comparators: one-sided Fisher exact test, the hinge-at-40
//! logistic fit, and quarterly termination rates.

use std::io::Write;

use chrono::{Datelike, NaiveDate};
use nalgebra::{Matrix2, Vector2};
use statrs::function::erf::erfc;
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};
use crate::flowdata::{exposures, format_date, FlowRecord, ObservationWindow, PersonPeriod, Reason};
use crate::format::sig6;
use crate::sampler::logistic;

/// Events and group sizes for a focal and a comparison group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TwoByTwo {
    pub x1: u64,
    pub n1: u64,
    pub x2: u64,
    pub n2: u64,
}

impl TwoByTwo {
    pub fn new(x1: u64, n1: u64, x2: u64, n2: u64) -> Result<Self> {
        if x1 > n1 || x2 > n2 {
            return Err(Error::Domain(format!(
                "events exceed group size in ({x1}/{n1}, {x2}/{n2})"
            )));
        }
        Ok(TwoByTwo { x1, n1, x2, n2 })
    }
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// `P(X = k)` for `X ~ Hypergeometric(population, successes, draws)`.
pub fn hypergeometric_pmf(population: u64, successes: u64, draws: u64, k: u64) -> f64 {
    if k > successes || k > draws || draws - k > population - successes {
        return 0.0;
    }
    (ln_choose(successes, k) + ln_choose(population - successes, draws - k)
        - ln_choose(population, draws))
    .exp()
}

/// `P(X >= x1)` with `X` the focal-group event count under fixed margins.
pub fn fisher_exact_one_sided(t: &TwoByTwo) -> f64 {
    let population = t.n1 + t.n2;
    let successes = t.x1 + t.x2;
    let hi = t.n1.min(successes);
    if t.x1 <= (t.n1 + successes).saturating_sub(population) {
        return 1.0;
    }
    let p: f64 = (t.x1..=hi)
        .map(|k| hypergeometric_pmf(population, successes, t.n1, k))
        .sum();
    p.min(1.0)
}

/// Cross-section on one day: employees on the roster that day, split at
/// `age_cutoff`, with involuntary terminations dated that day as events.
pub fn day_subgroup_table(records: &[FlowRecord], date: NaiveDate, age_cutoff: f64) -> TwoByTwo {
    let mut t = TwoByTwo { x1: 0, n1: 0, x2: 0, n2: 0 };
    for rec in records {
        let on_roster = rec.entry_date <= date && rec.separation_date.is_none_or(|s| date <= s);
        if !on_roster {
            continue;
        }
        let fired = rec.reason == Reason::Involuntary && rec.separation_date == Some(date);
        if rec.age_on(date) >= age_cutoff {
            t.n1 += 1;
            t.x1 += fired as u64;
        } else {
            t.n2 += 1;
            t.x2 += fired as u64;
        }
    }
    t
}

/// Logistic fit of the event indicator on `1` and `(age - knot)^+`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HingeFit {
    pub intercept: f64,
    pub coefficient: f64,
    pub std_error: f64,
    pub z: f64,
    /// Wald p-value for a positive coefficient.
    pub p_one_sided: f64,
    pub iterations: usize,
    /// Set when the estimate diverges (complete or quasi-complete separation).
    pub separated: bool,
}

pub fn hinge_age_fit(periods: &[PersonPeriod], knot: f64) -> Result<HingeFit> {
    let data: Vec<(f64, f64)> = periods
        .iter()
        .map(|p| ((p.age_years - knot).max(0.0), p.event as u8 as f64))
        .collect();
    hinge_fit_xy(&data)
}

/// IRLS on `(covariate, outcome)` pairs until the score norm drops below 1e-8
/// or the Newton decrement reaches rounding level.
pub fn hinge_fit_xy(data: &[(f64, f64)]) -> Result<HingeFit> {
    let events: f64 = data.iter().map(|d| d.1).sum();
    if events == 0.0 {
        return Err(Error::Domain("hinge fit needs at least one event".into()));
    }
    let first = data[0].0;
    if data.iter().all(|d| d.0 == first) {
        return Err(Error::Domain("hinge covariate is constant".into()));
    }
    let m = data.len() as f64;
    let rate = events / m;
    let mut theta = Vector2::new((rate / (1.0 - rate)).ln(), 0.0);
    if events == m {
        theta[0] = 0.0;
    }
    let mut separated = false;
    let mut iterations = 0;
    let info = loop {
        let mut score = Vector2::zeros();
        let mut info = Matrix2::zeros();
        for &(h, y) in data {
            let p = logistic(theta[0] + theta[1] * h);
            let w = p * (1.0 - p);
            let v = Vector2::new(1.0, h);
            score += v * (y - p);
            info += v * v.transpose() * w;
        }
        if score.norm() < 1e-8 {
            break info;
        }
        if iterations >= 200 || theta.amax() > 50.0 {
            separated = true;
            break info;
        }
        let Some(step) = info.try_inverse().map(|inv| inv * score) else {
            separated = true;
            break info;
        };
        // with many rows the score cannot reach 1e-8 in floating point; a
        // Newton decrement at rounding level means the optimum is reached
        if step.dot(&score) < 1e-24 * m {
            break info;
        }
        // halve steps that lower the likelihood
        let ll = |t: &Vector2<f64>| -> f64 {
            data.iter()
                .map(|&(h, y)| {
                    let eta = t[0] + t[1] * h;
                    y * eta - crate::sampler::softplus(eta)
                })
                .sum()
        };
        let base = ll(&theta);
        let mut scale = 1.0;
        let mut next = theta + step;
        while ll(&next) < base - 1e-12 * base.abs().max(1.0) && scale > 1e-6 {
            scale *= 0.5;
            next = theta + step * scale;
        }
        theta = next;
        iterations += 1;
    };
    // the score also vanishes as a separated fit runs off to infinity
    if theta.amax() > 25.0 {
        separated = true;
    }
    let cov = info.try_inverse();
    let se = cov.map_or(f64::INFINITY, |c| c[(1, 1)].max(0.0).sqrt());
    let z = theta[1] / se;
    let p = if z.is_finite() { 0.5 * erfc(z / std::f64::consts::SQRT_2) } else { f64::NAN };
    Ok(HingeFit {
        intercept: theta[0],
        coefficient: theta[1],
        std_error: se,
        z,
        p_one_sided: p,
        iterations,
        separated,
    })
}

/// One row of the quarterly table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuarterRate {
    pub quarter_start: NaiveDate,
    pub decade: u32,
    pub at_risk: u64,
    pub terminations: u64,
}

impl QuarterRate {
    pub fn rate(&self) -> f64 {
        self.terminations as f64 / self.at_risk as f64
    }
}

/// Calendar-quarter starts inside the window, the first clipped to the window start.
pub fn quarter_starts(window: &ObservationWindow) -> Vec<NaiveDate> {
    let mut out = vec![window.start()];
    let s = window.start();
    let mut year = s.year();
    let mut month = (s.month0() / 3) * 3 + 1;
    loop {
        month += 3;
        if month > 12 {
            month -= 12;
            year += 1;
        }
        let d = NaiveDate::from_ymd_opt(year, month, 1).expect("valid quarter start");
        if d >= window.end() {
            break;
        }
        out.push(d);
    }
    out
}

/// Involuntary terminations per person-quarter at risk, by calendar quarter
/// and age decade 20-29 through 60-69. Ages are taken at the quarter start;
/// cells with nobody at risk are omitted.
pub fn quarterly_rates(records: &[FlowRecord], window: &ObservationWindow) -> Vec<QuarterRate> {
    const DECADES: [u32; 5] = [20, 30, 40, 50, 60];
    let starts = quarter_starts(window);
    let mut at_risk = vec![[0u64; 5]; starts.len()];
    let mut events = vec![[0u64; 5]; starts.len()];
    for rec in records {
        for e in exposures(rec, &starts, window.end()) {
            let age = rec.age_on(starts[e.period]);
            let Some(d) = DECADES.iter().position(|&lo| age >= lo as f64 && age < (lo + 10) as f64) else {
                continue;
            };
            at_risk[e.period][d] += 1;
            events[e.period][d] += e.event as u64;
        }
    }
    let mut out = Vec::new();
    for (k, &q) in starts.iter().enumerate() {
        for (d, &lo) in DECADES.iter().enumerate() {
            if at_risk[k][d] > 0 {
                out.push(QuarterRate {
                    quarter_start: q,
                    decade: lo,
                    at_risk: at_risk[k][d],
                    terminations: events[k][d],
                });
            }
        }
    }
    out
}

pub fn write_quarterly_csv<W: Write>(mut out: W, rows: &[QuarterRate]) -> std::io::Result<()> {
    writeln!(out, "quarter_start,age_decade,at_risk,terminations,rate")?;
    for r in rows {
        writeln!(
            out,
            "{},{}-{},{},{},{}",
            format_date(r.quarter_start),
            r.decade,
            r.decade + 9,
            r.at_risk,
            r.terminations,
            sig6(r.rate())
        )?;
    }
    Ok(())
}

/// One line of the baseline report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub test: String,
    pub statistic: f64,
    pub p_value: f64,
    pub groups: String,
}

pub fn write_report<W: Write>(mut out: W, rows: &[ReportRow]) -> std::io::Result<()> {
    writeln!(out, "test,statistic,p_value,groups")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},\"{}\"",
            r.test,
            sig6(r.statistic),
            sig6(r.p_value),
            r.groups.replace('"', "'")
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fisher_small_cases() {
        let t = TwoByTwo::new(1, 1, 0, 1).unwrap();
        assert!((fisher_exact_one_sided(&t) - 0.5).abs() < 1e-15);
        let t = TwoByTwo::new(0, 8, 18, 136).unwrap();
        assert_eq!(fisher_exact_one_sided(&t), 1.0);
        assert!(TwoByTwo::new(3, 2, 0, 1).is_err());
    }

    #[test]
    fn fisher_by_enumeration() {
        // P(X >= 3), N = 144, K = 18, n = 8 via exact rational products
        let choose = |n: u64, k: u64| -> f64 {
            (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
        };
        let total = choose(144, 8);
        let tail: f64 = (3..=8).map(|k| choose(18, k) * choose(126, 8 - k)).sum::<f64>() / total;
        let t = TwoByTwo::new(3, 8, 15, 136).unwrap();
        assert!((fisher_exact_one_sided(&t) - tail).abs() < 1e-12);
    }

    #[test]
    fn pmf_sums_to_one() {
        let s: f64 = (0..=8).map(|k| hypergeometric_pmf(144, 18, 8, k)).sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(hypergeometric_pmf(10, 2, 3, 3), 0.0);
    }

    #[test]
    fn fisher_monotone_in_focal_events() {
        let ps: Vec<f64> = (0..=8)
            .map(|x1| fisher_exact_one_sided(&TwoByTwo::new(x1, 8, 18 - x1, 136).unwrap()))
            .collect();
        assert!(ps.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn hinge_zero_events_errors() {
        let data = vec![(0.0, 0.0), (5.0, 0.0)];
        assert!(hinge_fit_xy(&data).is_err());
        assert!(hinge_fit_xy(&[(1.0, 1.0), (1.0, 0.0)]).is_err());
    }

    #[test]
    fn hinge_grouped_closed_form() {
        // two covariate values: the MLE reproduces each group's rate
        let mut data = vec![];
        data.extend(std::iter::repeat_n((0.0, 1.0), 5));
        data.extend(std::iter::repeat_n((0.0, 0.0), 95));
        data.extend(std::iter::repeat_n((20.0, 1.0), 20));
        data.extend(std::iter::repeat_n((20.0, 0.0), 80));
        let fit = hinge_fit_xy(&data).unwrap();
        let logit = |p: f64| (p / (1.0 - p)).ln();
        assert!((fit.intercept - logit(0.05)).abs() < 1e-8);
        assert!((fit.coefficient * 20.0 - (logit(0.2) - logit(0.05))).abs() < 1e-8);
        // se from the grouped information: 1/(n p q) per group
        let v: f64 = (1.0 / (100.0 * 0.05 * 0.95) + 1.0 / (100.0 * 0.2 * 0.8)) / 400.0;
        assert!((fit.std_error - v.sqrt()).abs() < 1e-8);
        assert!(fit.p_one_sided < 0.01 && !fit.separated);
    }

    #[test]
    fn hinge_flags_separation() {
        let data = vec![(0.0, 0.0), (0.0, 0.0), (1.0, 1.0), (2.0, 1.0)];
        let fit = hinge_fit_xy(&data).unwrap();
        assert!(fit.separated);
    }

    #[test]
    fn quarter_starts_clip() {
        let w = ObservationWindow::new(
            NaiveDate::from_ymd_opt(2000, 2, 15).unwrap(),
            NaiveDate::from_ymd_opt(2000, 10, 1).unwrap(),
        )
        .unwrap();
        let s: Vec<String> = quarter_starts(&w).into_iter().map(format_date).collect();
        assert_eq!(s, ["2/15/2000", "4/1/2000", "7/1/2000"]);
    }

    #[test]
    fn quarterly_single_firing() {
        let w = ObservationWindow::new(
            NaiveDate::from_ymd_opt(2000, 1, 1).unwrap(),
            NaiveDate::from_ymd_opt(2000, 4, 1).unwrap(),
        )
        .unwrap();
        assert!(quarterly_rates(&[], &w).is_empty());
        let rec = FlowRecord::new(
            NaiveDate::from_ymd_opt(1955, 6, 1).unwrap(),
            NaiveDate::from_ymd_opt(1990, 1, 1).unwrap(),
            Some(NaiveDate::from_ymd_opt(2000, 2, 1).unwrap()),
            Reason::Involuntary,
        )
        .unwrap();
        let rows = quarterly_rates(&[rec], &w);
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].decade, rows[0].rate()), (40, 1.0));
    }

    #[test]
    fn report_header() {
        let mut buf = Vec::new();
        write_report(
            &mut buf,
            &[ReportRow {
                test: "fisher".into(),
                statistic: 3.0,
                p_value: 0.05,
                groups: "a".into(),
            }],
        )
        .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "test,statistic,p_value,groups\nfisher,3,0.05,\"a\"\n");
    }
}
