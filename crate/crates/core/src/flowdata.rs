//! Employee flow records and their aggregation into a time x age panel.
//!
//! Time bins are half-open `[start, end)` intervals of `time_bin_days` days
//! starting at the window start. An employee is at risk in a bin when they
//! are on the roster at the bin start; their age bin is fixed by their age on
//! that date. Involuntary terminations are counted in the bin whose interval
//! contains the separation date.

use std::fmt;
use std::io::Write;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::sig6;

pub const DAYS_PER_YEAR: f64 = 365.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Reason {
    Involuntary,
    /// Includes death and retirement.
    Voluntary,
    Censored,
}

impl Reason {
    fn parse(token: &str) -> Option<Reason> {
        match token.to_ascii_lowercase().as_str() {
            "invol" | "involuntary" => Some(Reason::Involuntary),
            "vol" | "voluntary" => Some(Reason::Voluntary),
            "n/a" | "na" | "censored" => Some(Reason::Censored),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowRecord {
    pub birth_date: NaiveDate,
    pub entry_date: NaiveDate,
    pub separation_date: Option<NaiveDate>,
    pub reason: Reason,
}

impl FlowRecord {
    pub fn new(
        birth_date: NaiveDate,
        entry_date: NaiveDate,
        separation_date: Option<NaiveDate>,
        reason: Reason,
    ) -> Result<Self> {
        if birth_date >= entry_date {
            return Err(Error::Validation(format!(
                "birth date {} is not before entry date {}",
                format_date(birth_date),
                format_date(entry_date)
            )));
        }
        if let Some(sep) = separation_date {
            if sep < entry_date {
                return Err(Error::Validation(format!(
                    "separation date {} precedes entry date {}",
                    format_date(sep),
                    format_date(entry_date)
                )));
            }
        }
        if (reason == Reason::Censored) != separation_date.is_none() {
            return Err(Error::Validation(
                "a separation date must be given exactly when a separation reason is".into(),
            ));
        }
        Ok(FlowRecord {
            birth_date,
            entry_date,
            separation_date,
            reason,
        })
    }

    /// Age in fractional years on `date`.
    pub fn age_on(&self, date: NaiveDate) -> f64 {
        (date - self.birth_date).num_days() as f64 / DAYS_PER_YEAR
    }
}

/// Parses `M/D/YYYY`; ISO `YYYY-MM-DD` is accepted as well.
pub fn parse_date(s: &str) -> std::result::Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s, "%m/%d/%Y")
        .or_else(|_| NaiveDate::parse_from_str(s, "%Y-%m-%d"))
        .map_err(|_| format!("malformed date {s:?}, expected M/D/YYYY"))
}

pub fn format_date(d: NaiveDate) -> String {
    format!("{}/{}/{}", d.month(), d.day(), d.year())
}

/// Parses flow data: one record per non-empty line holding birth date, entry
/// date, separation date (or `n/a`) and reason (`Invol`, `Vol` or `n/a`),
/// separated by whitespace or commas. Lines starting with `#` are skipped, as
/// is a leading header line whose first field is not a date.
pub fn parse_flow_file(text: &str) -> Result<Vec<FlowRecord>> {
    let mut records = Vec::new();
    let mut seen_content = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|f| !f.is_empty())
            .collect();
        let first_content = !seen_content;
        seen_content = true;
        if first_content && !fields[0].starts_with(|c: char| c.is_ascii_digit()) {
            continue;
        }
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let date = |s: &str| parse_date(s).map_err(|message| Error::Parse { line: line_no, message });
        let birth = date(fields[0])?;
        let entry = date(fields[1])?;
        let separation = if fields[2].eq_ignore_ascii_case("n/a") {
            None
        } else {
            Some(date(fields[2])?)
        };
        let reason = Reason::parse(fields[3]).ok_or_else(|| Error::Parse {
            line: line_no,
            message: format!("unknown separation reason {:?}", fields[3]),
        })?;
        let record = FlowRecord::new(birth, entry, separation, reason)
            .map_err(|e| Error::Validation(format!("line {line_no}: {e}")))?;
        records.push(record);
    }
    Ok(records)
}

/// Half-open observation window `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObservationWindow {
    start: NaiveDate,
    end: NaiveDate,
}

impl ObservationWindow {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if start >= end {
            return Err(Error::Validation(format!(
                "window start {} must precede end {}",
                format_date(start),
                format_date(end)
            )));
        }
        Ok(ObservationWindow { start, end })
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn end(&self) -> NaiveDate {
        self.end
    }

    pub fn span_days(&self) -> u32 {
        (self.end - self.start).num_days() as u32
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date < self.end
    }

    pub fn date_at(&self, day: u32) -> NaiveDate {
        self.start + Duration::days(day as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub time_bin_days: u32,
    pub age_bin_years: u32,
    pub age_min_years: u32,
    /// Exclusive upper edge of the last age bin.
    pub age_max_years: u32,
}

impl Default for GridSpec {
    fn default() -> Self {
        // 2-year bins 20-21, 22-23, ..., 64-65
        GridSpec {
            time_bin_days: 7,
            age_bin_years: 2,
            age_min_years: 20,
            age_max_years: 66,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.time_bin_days == 0 || self.age_bin_years == 0 {
            return Err(Error::Validation("bin widths must be positive".into()));
        }
        if self.age_max_years <= self.age_min_years {
            return Err(Error::Validation("age_max_years must exceed age_min_years".into()));
        }
        if !(self.age_max_years - self.age_min_years).is_multiple_of(self.age_bin_years) {
            return Err(Error::Validation(format!(
                "age span {}..{} is not a whole number of {}-year bins",
                self.age_min_years, self.age_max_years, self.age_bin_years
            )));
        }
        Ok(())
    }

    pub fn time_bins(&self, window: &ObservationWindow) -> usize {
        window.span_days().div_ceil(self.time_bin_days) as usize
    }

    pub fn age_bins(&self) -> usize {
        ((self.age_max_years - self.age_min_years) / self.age_bin_years) as usize
    }

    pub fn age_span_years(&self) -> f64 {
        (self.age_max_years - self.age_min_years) as f64
    }

    /// Index of the age bin containing `age`, if inside the grid.
    pub fn age_bin(&self, age: f64) -> Option<usize> {
        let offset = age - self.age_min_years as f64;
        if offset < 0.0 || age >= self.age_max_years as f64 {
            return None;
        }
        Some(((offset / self.age_bin_years as f64).floor() as usize).min(self.age_bins() - 1))
    }
}

/// Time x age counts, stored row-major with cell `(i, j)` at `i * r + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedPanel {
    window: ObservationWindow,
    grid: GridSpec,
    p: usize,
    r: usize,
    n: Vec<u32>,
    x: Vec<u32>,
    t: Vec<f64>,
    a: Vec<f64>,
    age_years: Vec<f64>,
}

impl AggregatedPanel {
    /// Builds a panel from explicit counts laid out row-major over the grid
    /// implied by `window` and `grid`.
    pub fn from_counts(
        window: ObservationWindow,
        grid: GridSpec,
        n: Vec<u32>,
        x: Vec<u32>,
    ) -> Result<Self> {
        grid.validate()?;
        let p = grid.time_bins(&window);
        let r = grid.age_bins();
        if n.len() != p * r || x.len() != p * r {
            return Err(Error::Validation(format!(
                "counts have length {}/{} but the grid is {p}x{r}",
                n.len(),
                x.len()
            )));
        }
        if let Some(k) = (0..n.len()).find(|&k| x[k] > n[k]) {
            return Err(Error::Validation(format!(
                "cell ({}, {}) has {} events but only {} at risk",
                k / r,
                k % r,
                x[k],
                n[k]
            )));
        }
        let span = window.span_days() as f64;
        let t = (0..p)
            .map(|i| (i as f64 * grid.time_bin_days as f64) / span)
            .collect();
        let a = (0..r)
            .map(|j| (j as f64 * grid.age_bin_years as f64) / grid.age_span_years())
            .collect();
        let age_years = (0..r)
            .map(|j| grid.age_min_years as f64 + (j as u32 * grid.age_bin_years) as f64)
            .collect();
        Ok(AggregatedPanel {
            window,
            grid,
            p,
            r,
            n,
            x,
            t,
            a,
            age_years,
        })
    }

    pub fn window(&self) -> &ObservationWindow {
        &self.window
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Number of time bins.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of age bins.
    pub fn r(&self) -> usize {
        self.r
    }

    pub fn cells(&self) -> usize {
        self.p * self.r
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.r + j
    }

    pub fn n(&self) -> &[u32] {
        &self.n
    }

    pub fn x(&self) -> &[u32] {
        &self.x
    }

    /// Scaled time coordinate of each time bin start, in `[0, 1)`.
    pub fn t(&self) -> &[f64] {
        &self.t
    }

    /// Scaled age coordinate of each age bin's lower edge, in `[0, 1)`.
    pub fn a(&self) -> &[f64] {
        &self.a
    }

    /// Lower edge of each age bin in years.
    pub fn age_years(&self) -> &[f64] {
        &self.age_years
    }

    pub fn bin_start(&self, i: usize) -> NaiveDate {
        self.window.date_at(i as u32 * self.grid.time_bin_days)
    }

    pub fn total_at_risk(&self) -> u64 {
        self.n.iter().map(|&v| v as u64).sum()
    }

    pub fn total_events(&self) -> u64 {
        self.x.iter().map(|&v| v as u64).sum()
    }

    /// Writes `time_bin,age_bin,t,a,age_years,n,x`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "time_bin,age_bin,t,a,age_years,n,x")?;
        for i in 0..self.p {
            for j in 0..self.r {
                let k = self.index(i, j);
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    i,
                    j,
                    sig6(self.t[i]),
                    sig6(self.a[j]),
                    sig6(self.age_years[j]),
                    self.n[k],
                    self.x[k]
                )?;
            }
        }
        Ok(())
    }
}

/// One period during which an employee was at risk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Exposure {
    pub period: usize,
    pub event: bool,
}

/// Periods `[starts[k], starts[k+1])`, the last closing at `end`, during
/// which `rec` is at risk.
///
/// At risk means on the roster at the period start: hired on or before it and
/// not separated before it. An in-window hire who is fired before reaching
/// their first period start is counted once, in the period of the firing, so
/// that every in-window involuntary termination produces an event.
pub(crate) fn exposures(rec: &FlowRecord, starts: &[NaiveDate], end: NaiveDate) -> Vec<Exposure> {
    let mut out = Vec::new();
    let Some(&first) = starts.first() else {
        return out;
    };
    if rec.entry_date >= end {
        return out;
    }
    if let Some(sep) = rec.separation_date {
        if sep < first {
            return out;
        }
    }
    let event_period = match (rec.reason, rec.separation_date) {
        (Reason::Involuntary, Some(sep)) if sep < end => {
            Some(starts.partition_point(|&s| s <= sep) - 1)
        }
        _ => None,
    };
    for (k, &s) in starts.iter().enumerate() {
        let on_roster = rec.entry_date <= s && rec.separation_date.is_none_or(|sep| s <= sep);
        if on_roster {
            out.push(Exposure {
                period: k,
                event: event_period == Some(k),
            });
        }
    }
    if let Some(k) = event_period {
        if !out.iter().any(|e| e.period == k) {
            out.push(Exposure {
                period: k,
                event: true,
            });
        }
    }
    out
}

pub(crate) fn time_bin_starts(window: &ObservationWindow, grid: &GridSpec) -> Vec<NaiveDate> {
    (0..grid.time_bins(window))
        .map(|i| window.date_at(i as u32 * grid.time_bin_days))
        .collect()
}

/// One worker x time-bin observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PersonPeriod {
    pub record: usize,
    pub time_bin: usize,
    pub age_years: f64,
    pub event: bool,
}

/// Worker-level at-risk periods on the time grid, without the age binning.
pub fn person_periods(
    records: &[FlowRecord],
    window: &ObservationWindow,
    grid: &GridSpec,
) -> Vec<PersonPeriod> {
    let starts = time_bin_starts(window, grid);
    let mut out = Vec::new();
    for (w, rec) in records.iter().enumerate() {
        for e in exposures(rec, &starts, window.end()) {
            out.push(PersonPeriod {
                record: w,
                time_bin: e.period,
                age_years: rec.age_on(starts[e.period]),
                event: e.event,
            });
        }
    }
    out
}

/// Aggregates records into at-risk and involuntary-termination counts.
pub fn discretize(
    records: &[FlowRecord],
    window: &ObservationWindow,
    grid: &GridSpec,
) -> Result<AggregatedPanel> {
    grid.validate()?;
    let starts = time_bin_starts(window, grid);
    let r = grid.age_bins();
    let mut n = vec![0u32; starts.len() * r];
    let mut x = vec![0u32; starts.len() * r];
    for (w, rec) in records.iter().enumerate() {
        for e in exposures(rec, &starts, window.end()) {
            let age = rec.age_on(starts[e.period]);
            let j = grid.age_bin(age).ok_or_else(|| {
                Error::Validation(format!(
                    "record {} (born {}) is aged {:.2} on {}, outside the age grid [{}, {})",
                    w + 1,
                    format_date(rec.birth_date),
                    age,
                    format_date(starts[e.period]),
                    grid.age_min_years,
                    grid.age_max_years
                ))
            })?;
            let k = e.period * r + j;
            n[k] += 1;
            if e.event {
                x[k] += 1;
            }
        }
    }
    AggregatedPanel::from_counts(*window, *grid, n, x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FlowSummary {
    pub employees: usize,
    pub involuntary: usize,
    pub voluntary: usize,
    pub censored: usize,
    pub involuntary_in_window: usize,
}

impl FlowSummary {
    pub fn from_records(records: &[FlowRecord], window: &ObservationWindow) -> Self {
        let mut s = FlowSummary {
            employees: records.len(),
            ..Default::default()
        };
        for rec in records {
            match rec.reason {
                Reason::Involuntary => {
                    s.involuntary += 1;
                    if rec.separation_date.is_some_and(|d| window.contains(d)) {
                        s.involuntary_in_window += 1;
                    }
                }
                Reason::Voluntary => s.voluntary += 1,
                Reason::Censored => s.censored += 1,
            }
        }
        s
    }
}

impl fmt::Display for FlowSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "employees: {}\ninvoluntary terminations: {} ({} inside window)\nvoluntary separations: {}\ncensored: {}",
            self.employees, self.involuntary, self.involuntary_in_window, self.voluntary, self.censored
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        parse_date(s).unwrap()
    }

    #[test]
    fn parses_table_rows() {
        let text = "10/17/1934 4/5/1962 6/3/1992 Invol\n5/31/1941  1/12/1963  n/a  n/a\n";
        let recs = parse_flow_file(text).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].birth_date, NaiveDate::from_ymd_opt(1934, 10, 17).unwrap());
        assert_eq!(recs[0].entry_date, NaiveDate::from_ymd_opt(1962, 4, 5).unwrap());
        assert_eq!(recs[0].separation_date, NaiveDate::from_ymd_opt(1992, 6, 3));
        assert_eq!(recs[0].reason, Reason::Involuntary);
        assert_eq!(recs[1].separation_date, None);
        assert_eq!(recs[1].reason, Reason::Censored);
    }

    #[test]
    fn comma_delimited_header_and_case() {
        let text = "Birth date,Entry date,Separation date,Reason\n3/1/1925,3/1/1961,6/1/1990,VOL\n";
        let recs = parse_flow_file(text).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].reason, Reason::Voluntary);
    }

    #[test]
    fn empty_input() {
        assert!(parse_flow_file("").unwrap().is_empty());
        assert!(parse_flow_file("\n  \n").unwrap().is_empty());
    }

    #[test]
    fn malformed_date_reports_line() {
        let err = parse_flow_file("3/1/1925 3/1/1961 6/1/1990 Vol\n3/1/1925 13/45/1961 n/a n/a\n")
            .unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ordering_violations_are_validation_errors() {
        let e = parse_flow_file("3/1/1925 3/1/1961 6/1/1960 Vol").unwrap_err();
        assert!(matches!(e, Error::Validation(_)), "{e}");
        let e = parse_flow_file("3/1/1965 3/1/1961 n/a n/a").unwrap_err();
        assert!(matches!(e, Error::Validation(_)), "{e}");
        let e = parse_flow_file("3/1/1925 3/1/1961 n/a Invol").unwrap_err();
        assert!(matches!(e, Error::Validation(_)), "{e}");
    }

    #[test]
    fn unknown_reason_errors() {
        assert!(parse_flow_file("3/1/1925 3/1/1961 6/1/1990 Fired").is_err());
    }

    #[test]
    fn grid_dimensions() {
        let w = ObservationWindow::new(d("1/1/2000"), d("1/1/2000") + Duration::days(1600)).unwrap();
        let g = GridSpec::default();
        assert_eq!(g.time_bins(&w), 229);
        assert_eq!(g.age_bins(), 23);
        assert_eq!(g.age_bin(20.0), Some(0));
        assert_eq!(g.age_bin(57.9), Some(18));
        assert_eq!(g.age_bin(66.0), None);
        assert_eq!(g.age_bin(19.99), None);
        let bad = GridSpec {
            age_max_years: 65,
            ..g
        };
        assert!(bad.validate().is_err());
    }

    fn small_setup() -> (ObservationWindow, GridSpec) {
        let w = ObservationWindow::new(d("1/1/2000"), d("1/29/2000")).unwrap();
        let g = GridSpec {
            time_bin_days: 7,
            age_bin_years: 10,
            age_min_years: 20,
            age_max_years: 70,
        };
        (w, g)
    }

    #[test]
    fn single_employee_fired_in_final_bin() {
        let (w, g) = small_setup();
        let rec = FlowRecord::new(d("6/1/1955"), d("1/1/1990"), Some(d("1/25/2000")), Reason::Involuntary)
            .unwrap();
        let panel = discretize(&[rec], &w, &g).unwrap();
        assert_eq!(panel.p(), 4);
        // aged 44.6, bin 40-49 throughout
        for i in 0..4 {
            for j in 0..panel.r() {
                let expect = u32::from(j == 2);
                assert_eq!(panel.n()[panel.index(i, j)], expect);
                assert_eq!(panel.x()[panel.index(i, j)], u32::from(i == 3 && j == 2));
            }
        }
    }

    #[test]
    fn separated_before_window_contributes_nothing() {
        let (w, g) = small_setup();
        let rec = FlowRecord::new(d("6/1/1955"), d("1/1/1990"), Some(d("12/31/1999")), Reason::Involuntary)
            .unwrap();
        let panel = discretize(&[rec], &w, &g).unwrap();
        assert_eq!(panel.total_at_risk(), 0);
        assert_eq!(panel.total_events(), 0);
        let late = FlowRecord::new(d("6/1/1955"), d("2/1/2000"), None, Reason::Censored).unwrap();
        assert_eq!(discretize(&[late], &w, &g).unwrap().total_at_risk(), 0);
    }

    #[test]
    fn boundary_termination_belongs_to_starting_bin() {
        let (w, g) = small_setup();
        // 1/8/2000 is the start of bin 1
        let rec = FlowRecord::new(d("6/1/1955"), d("1/1/1990"), Some(d("1/8/2000")), Reason::Involuntary)
            .unwrap();
        let panel = discretize(&[rec], &w, &g).unwrap();
        assert_eq!(panel.x()[panel.index(1, 2)], 1);
        assert_eq!(panel.n()[panel.index(1, 2)], 1);
        assert_eq!(panel.total_at_risk(), 2);
    }

    #[test]
    fn in_window_hire_joins_at_next_bin_start() {
        let (w, g) = small_setup();
        let rec = FlowRecord::new(d("6/1/1955"), d("1/10/2000"), None, Reason::Censored).unwrap();
        let panel = discretize(&[rec], &w, &g).unwrap();
        let at_risk: Vec<u32> = (0..4).map(|i| panel.n()[panel.index(i, 2)]).collect();
        assert_eq!(at_risk, vec![0, 0, 1, 1]);
    }

    #[test]
    fn quick_fire_after_hire_still_counts() {
        let (w, g) = small_setup();
        let rec = FlowRecord::new(d("6/1/1955"), d("1/10/2000"), Some(d("1/12/2000")), Reason::Involuntary)
            .unwrap();
        let panel = discretize(&[rec], &w, &g).unwrap();
        assert_eq!(panel.total_events(), 1);
        assert_eq!(panel.x()[panel.index(1, 2)], 1);
        assert_eq!(panel.n()[panel.index(1, 2)], 1);
    }

    #[test]
    fn age_out_of_grid_is_named() {
        let (w, g) = small_setup();
        let rec = FlowRecord::new(d("6/1/1985"), d("1/1/1999"), None, Reason::Censored).unwrap();
        let err = discretize(&[rec], &w, &g).unwrap_err().to_string();
        assert!(err.contains("record 1"), "{err}");
    }

    #[test]
    fn panel_csv_header() {
        let (w, g) = small_setup();
        let panel = discretize(&[], &w, &g).unwrap();
        let mut buf = Vec::new();
        panel.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("time_bin,age_bin,t,a,age_years,n,x\n0,0,0,0,20,0,0\n"));
        assert_eq!(text.lines().count(), 1 + 4 * 5);
    }
}
