//! Posterior summaries: log-odds ratios against the under-40 reference,
//! discrimination probabilities and the anisotropy visit table.

use std::io::Write;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::flowdata::AggregatedPanel;
use crate::format::sig6;
use crate::sampler::{logistic, ChainOutput};
use crate::tps::SmoothnessPrior;

pub const DEFAULT_REFERENCE_AGE: u32 = 40;

/// Age bins whose upper edge is at most `cutoff_years`.
pub fn reference_bins(panel: &AggregatedPanel, cutoff_years: u32) -> Vec<usize> {
    let g = panel.grid();
    (0..panel.r())
        .filter(|&j| g.age_min_years + (j as u32 + 1) * g.age_bin_years <= cutoff_years)
        .collect()
}

/// `beta_ij - logit(sum_ref n p / sum_ref n)` per cell, NaN where the time
/// bin has nobody at risk in the reference class.
pub fn lor_vs_reference(beta: &[f64], panel: &AggregatedPanel, cutoff_years: u32) -> Vec<f64> {
    let refs = reference_bins(panel, cutoff_years);
    let (p, r) = (panel.p(), panel.r());
    let mut out = vec![f64::NAN; p * r];
    for i in 0..p {
        let (mut num, mut den) = (0.0, 0.0);
        for &u in &refs {
            let c = panel.index(i, u);
            let n = panel.n()[c] as f64;
            num += n * logistic(beta[c]);
            den += n;
        }
        if den == 0.0 {
            continue;
        }
        let pr = num / den;
        let ref_logit = pr.ln() - (1.0 - pr).ln();
        for j in 0..r {
            let c = panel.index(i, j);
            out[c] = beta[c] - ref_logit;
        }
    }
    out
}

pub fn lor_vs_under40(beta: &[f64], panel: &AggregatedPanel) -> Vec<f64> {
    lor_vs_reference(beta, panel, DEFAULT_REFERENCE_AGE)
}

/// Midpoint median of the finite values; NaN if none.
pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

/// Per-cell posterior median log-odds ratio and `P(LOR > 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSummary {
    pub p: usize,
    pub r: usize,
    pub t: Vec<f64>,
    pub a: Vec<f64>,
    pub age_years: Vec<f64>,
    pub bin_days: u32,
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
    pub median_lor: Vec<f64>,
    pub prob_or_gt_1: Vec<f64>,
}

/// Summarizes every draw of every chain, in chain order.
pub fn summarize(chains: &[ChainOutput], panel: &AggregatedPanel, cutoff_years: u32) -> Result<SurfaceSummary> {
    let betas: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| c.draws.iter().map(|d| d.beta.as_slice()))
        .collect();
    summarize_draws(&betas, panel, cutoff_years)
}

pub fn summarize_draws(betas: &[&[f64]], panel: &AggregatedPanel, cutoff_years: u32) -> Result<SurfaceSummary> {
    if betas.is_empty() {
        return Err(Error::Usage("no posterior draws to summarize".into()));
    }
    let cells = panel.cells();
    let m = betas.len();
    let mut by_cell = vec![0.0; cells * m];
    for (d, beta) in betas.iter().enumerate() {
        if beta.len() != cells {
            return Err(Error::Usage(format!(
                "draw has {} logits but the panel has {cells} cells",
                beta.len()
            )));
        }
        for (c, v) in lor_vs_reference(beta, panel, cutoff_years).into_iter().enumerate() {
            by_cell[c * m + d] = v;
        }
    }
    let mut median_lor = Vec::with_capacity(cells);
    let mut prob = Vec::with_capacity(cells);
    for col in by_cell.chunks_mut(m) {
        if col.iter().all(|v| v.is_nan()) {
            median_lor.push(f64::NAN);
            prob.push(f64::NAN);
            continue;
        }
        prob.push(col.iter().filter(|&&v| v > 0.0).count() as f64 / m as f64);
        median_lor.push(median(col));
    }
    let g = panel.grid();
    Ok(SurfaceSummary {
        p: panel.p(),
        r: panel.r(),
        t: panel.t().to_vec(),
        a: panel.a().to_vec(),
        age_years: panel.age_years().to_vec(),
        bin_days: g.time_bin_days,
        window_start: panel.window().start(),
        window_end: panel.window().end(),
        median_lor,
        prob_or_gt_1: prob,
    })
}

impl SurfaceSummary {
    /// Cell containing `date` and `age_years`, half-open on both axes.
    pub fn cell_at(&self, date: NaiveDate, age_years: f64) -> Result<(usize, usize)> {
        let width = self.age_years.get(1).map_or(f64::INFINITY, |a1| a1 - self.age_years[0]);
        let age_lo = self.age_years[0];
        let age_hi = age_lo + width * self.r as f64;
        if date < self.window_start || date >= self.window_end || !(age_years >= age_lo && age_years < age_hi) {
            return Err(Error::Usage(format!(
                "query ({}, age {age_years}) is outside the grid: dates {} to {} (exclusive), ages {age_lo} to {age_hi} (exclusive)",
                crate::flowdata::format_date(date),
                crate::flowdata::format_date(self.window_start),
                crate::flowdata::format_date(self.window_end),
            )));
        }
        let day = (date - self.window_start).num_days() as usize;
        let i = (day / self.bin_days as usize).min(self.p - 1);
        let j = (((age_years - age_lo) / width).floor() as usize).min(self.r - 1);
        Ok((i, j))
    }

    /// `(median LOR, P(OR > 1))` of the containing cell; no interpolation.
    pub fn point_query(&self, date: NaiveDate, age_years: f64) -> Result<(f64, f64)> {
        let (i, j) = self.cell_at(date, age_years)?;
        let c = i * self.r + j;
        Ok((self.median_lor[c], self.prob_or_gt_1[c]))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "time_bin,age_bin,t,a,age_years,median_lor,prob_or_gt_1")?;
        for i in 0..self.p {
            for j in 0..self.r {
                let c = i * self.r + j;
                writeln!(
                    out,
                    "{i},{j},{},{},{},{},{}",
                    sig6(self.t[i]),
                    sig6(self.a[j]),
                    sig6(self.age_years[j]),
                    sig6(self.median_lor[c]),
                    sig6(self.prob_or_gt_1[c])
                )?;
            }
        }
        Ok(())
    }
}

pub fn point_query(summary: &SurfaceSummary, date: NaiveDate, age_years: f64) -> Result<(f64, f64)> {
    summary.point_query(date, age_years)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhoRow {
    pub rho: f64,
    pub prior: f64,
    pub frequency: f64,
    pub lower: f64,
    pub upper: f64,
    pub marginal: f64,
    pub marginal_lower: f64,
    pub marginal_upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhoPosterior {
    pub total: u64,
    pub rows: Vec<RhoRow>,
}

/// Visit frequencies with Wald 95% bounds `p +- 1.96 sqrt(p(1-p)/N)`
/// clipped to [0, 1], and marginal-likelihood ratios `p / prior`.
pub fn rho_posterior(counts: &[u64], prior: &SmoothnessPrior) -> Result<RhoPosterior> {
    if counts.len() != prior.len() {
        return Err(Error::Config(format!(
            "{} visit counts for {} anisotropy values",
            counts.len(),
            prior.len()
        )));
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Usage("no posterior draws to summarize".into()));
    }
    let n = total as f64;
    let rows = counts
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let pr = prior.rho_probs[k];
            if c > 0 && pr == 0.0 {
                return Err(Error::Config(format!(
                    "anisotropy {} was visited but has zero prior probability",
                    prior.rho_grid[k]
                )));
            }
            let f = c as f64 / n;
            let half = 1.96 * (f * (1.0 - f) / n).sqrt();
            let (lo, hi) = ((f - half).max(0.0), (f + half).min(1.0));
            let ratio = |v: f64| if pr == 0.0 { f64::NAN } else { v / pr };
            Ok(RhoRow {
                rho: prior.rho_grid[k],
                prior: pr,
                frequency: f,
                lower: lo,
                upper: hi,
                marginal: ratio(f),
                marginal_lower: ratio(lo),
                marginal_upper: ratio(hi),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RhoPosterior { total, rows })
}

/// Pools visit counts across chains.
pub fn pooled_visits(chains: &[ChainOutput], m: usize) -> Vec<u64> {
    let mut counts = vec![0u64; m];
    for c in chains {
        for (k, v) in c.rho_visit_counts.iter().enumerate() {
            counts[k] += v;
        }
    }
    counts
}

impl RhoPosterior {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "rho,prior,posterior,p_0.025,p_0.975,marginal_likelihood,ml_0.025,ml_0.975"
        )?;
        for row in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                sig6(row.rho),
                sig6(row.prior),
                sig6(row.frequency),
                sig6(row.lower),
                sig6(row.upper),
                sig6(row.marginal),
                sig6(row.marginal_lower),
                sig6(row.marginal_upper)
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowdata::{GridSpec, ObservationWindow};

    fn panel(p: usize, n: Vec<u32>) -> AggregatedPanel {
        // 10-year bins 20-29, 30-39, 40-49, 50-59
        let start = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
        let window = ObservationWindow::new(start, start + chrono::Days::new(7 * p as u64)).unwrap();
        let grid = GridSpec {
            time_bin_days: 7,
            age_bin_years: 10,
            age_min_years: 20,
            age_max_years: 60,
        };
        let x = vec![0; n.len()];
        AggregatedPanel::from_counts(window, grid, n, x).unwrap()
    }

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    #[test]
    fn reference_is_under_forty() {
        assert_eq!(reference_bins(&panel(1, vec![1; 4]), 40), vec![0, 1]);
    }

    #[test]
    fn constant_surface_has_zero_lor() {
        let pn = panel(2, vec![3; 8]);
        let lor = lor_vs_under40(&[-1.3; 8], &pn);
        assert!(lor.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn weighted_reference_oracle() {
        let pn = panel(1, vec![7, 2, 5, 5]);
        let beta = [logit(0.1), logit(0.1), logit(0.2), 0.0];
        let lor = lor_vs_under40(&beta, &pn);
        assert!((lor[2] - 0.810_930_216_216_329).abs() < 1e-12);
        // unequal reference rates: (7*0.1 + 2*0.4) / 9
        let beta = [logit(0.1), logit(0.4), logit(0.2), 0.0];
        let pr: f64 = (0.7 + 0.8) / 9.0;
        let lor = lor_vs_under40(&beta, &pn);
        assert!((lor[2] - (logit(0.2) - logit(pr))).abs() < 1e-12);
    }

    #[test]
    fn empty_reference_is_missing() {
        let pn = panel(2, vec![0, 0, 4, 4, 1, 1, 1, 1]);
        let lor = lor_vs_under40(&[0.0; 8], &pn);
        assert!(lor[..4].iter().all(|v| v.is_nan()));
        assert!(lor[4..].iter().all(|v| *v == 0.0));
        let s = summarize_draws(&[&[0.0; 8]], &pn, 40).unwrap();
        let mut csv = Vec::new();
        s.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.lines().nth(1).unwrap().ends_with(",NA,NA"));
    }

    #[test]
    fn two_draw_symmetry() {
        let pn = panel(1, vec![1, 1, 1, 1]);
        let up = [0.0, 0.0, 1.0, 0.0];
        let down = [0.0, 0.0, -1.0, 0.0];
        let s = summarize_draws(&[&up, &down], &pn, 40).unwrap();
        assert!(s.median_lor[2].abs() < 1e-12);
        assert_eq!(s.prob_or_gt_1[2], 0.5);
        // ties at zero do not count
        assert_eq!(s.prob_or_gt_1[3], 0.0);
        assert!(summarize_draws(&[], &pn, 40).is_err());
    }

    #[test]
    fn point_query_boundaries() {
        let pn = panel(3, vec![1; 12]);
        let beta: Vec<f64> = (0..12).map(|k| k as f64 / 10.0).collect();
        let s = summarize_draws(&[&beta], &pn, 40).unwrap();
        let start = pn.window().start();
        let (lor, _) = s.point_query(start + chrono::Days::new(7), 40.0).unwrap();
        assert_eq!(lor, s.median_lor[4 + 2]);
        let (lor, _) = s.point_query(start + chrono::Days::new(6), 39.99).unwrap();
        assert_eq!(lor, s.median_lor[1]);
        assert!(s.point_query(start + chrono::Days::new(21), 30.0).is_err());
        assert!(s.point_query(start, 60.0).is_err());
        assert!(s.point_query(start, 19.9).is_err());
    }

    #[test]
    fn single_rho_chain() {
        let prior = SmoothnessPrior::new(vec![2.0, 1.0], vec![0.25, 0.75], 0.5, vec![1.0, 1.0]).unwrap();
        let post = rho_posterior(&[0, 40], &prior).unwrap();
        assert_eq!(post.rows[1].frequency, 1.0);
        assert!((post.rows[1].marginal - 1.0 / 0.75).abs() < 1e-15);
        assert_eq!((post.rows[1].lower, post.rows[1].upper), (1.0, 1.0));
        let zero = SmoothnessPrior {
            rho_probs: vec![0.0, 1.0],
            ..prior
        };
        assert!(matches!(rho_posterior(&[1, 40], &zero), Err(Error::Config(_))));
    }

    #[test]
    fn median_midpoint() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0, 10.0]), 2.5);
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert!(median(&mut []).is_nan());
    }
}
