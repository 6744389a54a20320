//! Configuration and the `ingest`, `analyze` and `baseline` commands.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::baselines::{
    day_subgroup_table, fisher_exact_one_sided, hinge_age_fit, quarterly_rates, write_quarterly_csv,
    write_report, ReportRow,
};
use crate::error::{Error, Result};
use crate::flowdata::{
    discretize, format_date, parse_date, parse_flow_file, person_periods, AggregatedPanel, FlowRecord,
    FlowSummary, GridSpec, ObservationWindow,
};
use crate::format::sig6;
use crate::posterior::{pooled_visits, rho_posterior, summarize, RhoPosterior, SurfaceSummary};
use crate::sampler::{run_chain, write_beta_draws, write_trace, ChainOutput, Model, SamplerConfig};
use crate::tps::{
    cached_basis, elicit_scale_monte_carlo, elicit_scale_printed, roughness_variance, Elicitation,
    SmoothnessPrior, SplineBasis, DEFAULT_RHO_GRID, DEFAULT_RHO_PROBS, DEFAULT_SHAPE,
};

pub const VERSION: &str = concat!("agehazard ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    /// First day observed, M/D/YYYY or YYYY-MM-DD.
    pub start: String,
    /// First day not observed.
    pub end: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElicitationConfig {
    pub bound: Option<f64>,
    pub alpha: Option<f64>,
    pub d_t: Option<f64>,
    pub d_a: Option<f64>,
}

fn default_rho_grid() -> Vec<f64> {
    DEFAULT_RHO_GRID.to_vec()
}
fn default_rho_probs() -> Vec<f64> {
    DEFAULT_RHO_PROBS.to_vec()
}
fn default_shape() -> f64 {
    DEFAULT_SHAPE
}
fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    #[serde(default = "default_rho_grid")]
    pub rho_grid: Vec<f64>,
    #[serde(default = "default_rho_probs")]
    pub rho_probs: Vec<f64>,
    #[serde(default = "default_shape")]
    pub shape: f64,
    /// Explicit gamma rates per grid value; elicited when absent.
    #[serde(default)]
    pub scales: Option<Vec<f64>>,
    #[serde(default)]
    pub elicitation: ElicitationConfig,
    /// Multiplies every rate, elicited or explicit.
    #[serde(default = "one")]
    pub scale_multiplier: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            rho_grid: default_rho_grid(),
            rho_probs: default_rho_probs(),
            shape: default_shape(),
            scales: None,
            elicitation: ElicitationConfig::default(),
            scale_multiplier: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubgroupQuery {
    /// Days after the window start.
    pub day: u32,
    pub age_cutoff: f64,
}

fn default_knot() -> f64 {
    40.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    #[serde(default = "default_knot")]
    pub hinge_knot: f64,
    #[serde(default)]
    pub subgroups: Vec<SubgroupQuery>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            hinge_knot: default_knot(),
            subgroups: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointQuery {
    pub day: u32,
    pub age: f64,
}

fn default_chains() -> usize {
    1
}
fn default_reference_age() -> u32 {
    40
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Relative paths resolve against the configuration file's directory.
    pub flow_file: PathBuf,
    pub output_dir: PathBuf,
    pub window: WindowConfig,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default = "default_chains")]
    pub chains: usize,
    /// Chains run at once; all of them when absent.
    #[serde(default)]
    pub max_concurrent_chains: Option<usize>,
    #[serde(default = "default_reference_age")]
    pub reference_age: u32,
    /// Basis cache; `<output_dir>/basis-cache` when absent.
    #[serde(default)]
    pub basis_cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub write_beta_draws: bool,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub queries: Vec<PointQuery>,
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub chains: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text)?;
        cfg.flow_file = base.join(&cfg.flow_file);
        cfg.output_dir = base.join(&cfg.output_dir);
        cfg.basis_cache_dir = cfg.basis_cache_dir.map(|p| base.join(p));
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut cfg = Self::from_json(&text, base)?;
        if let Some(seed) = overrides.seed {
            cfg.sampler.seed = seed;
        }
        if let Some(chains) = overrides.chains {
            cfg.chains = chains;
        }
        if let Some(out) = &overrides.out {
            cfg.output_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.flow_file.is_file() {
            return Err(Error::Config(format!(
                "flow file {} does not exist",
                self.flow_file.display()
            )));
        }
        self.observation_window()?;
        self.grid.validate()?;
        if self.chains == 0 {
            return Err(Error::Config("chains must be positive".into()));
        }
        if self.max_concurrent_chains == Some(0) {
            return Err(Error::Config("max_concurrent_chains must be positive".into()));
        }
        let p = &self.prior;
        if !(p.scale_multiplier > 0.0 && p.scale_multiplier.is_finite()) {
            return Err(Error::Config("scale_multiplier must be positive".into()));
        }
        // checks grid, probabilities and shape before any elicitation
        SmoothnessPrior::new(p.rho_grid.clone(), p.rho_probs.clone(), p.shape, vec![1.0; p.rho_grid.len()])?;
        if let Some(s) = &p.scales {
            if s.len() != p.rho_grid.len() {
                return Err(Error::Config(format!(
                    "{} explicit scales for {} anisotropy values",
                    s.len(),
                    p.rho_grid.len()
                )));
            }
        }
        self.sampler.validate(p.rho_grid.len())
    }

    pub fn observation_window(&self) -> Result<ObservationWindow> {
        let date = |s: &str| parse_date(s).map_err(|e| Error::Config(format!("window: {e}")));
        ObservationWindow::new(date(&self.window.start)?, date(&self.window.end)?)
    }

    pub fn elicitation(&self, window: &ObservationWindow) -> Elicitation {
        let d = Elicitation::for_spans(window.span_days() as f64, self.grid.age_span_years());
        let e = &self.prior.elicitation;
        Elicitation {
            bound: e.bound.unwrap_or(d.bound),
            alpha: e.alpha.unwrap_or(d.alpha),
            d_t: e.d_t.unwrap_or(d.d_t),
            d_a: e.d_a.unwrap_or(d.d_a),
        }
    }

    pub fn smoothness_prior(&self, window: &ObservationWindow) -> Result<SmoothnessPrior> {
        let p = &self.prior;
        let base = match &p.scales {
            Some(s) => SmoothnessPrior::new(p.rho_grid.clone(), p.rho_probs.clone(), p.shape, s.clone())?,
            None => SmoothnessPrior::elicited(
                p.rho_grid.clone(),
                p.rho_probs.clone(),
                p.shape,
                &self.elicitation(window),
            )?,
        };
        let scales = base.scales.iter().map(|s| s * p.scale_multiplier).collect();
        SmoothnessPrior::new(base.rho_grid, base.rho_probs, base.shape, scales)
    }

    fn cache_dir(&self) -> PathBuf {
        self.basis_cache_dir
            .clone()
            .unwrap_or_else(|| self.output_dir.join("basis-cache"))
    }
}

fn read_records(cfg: &RunConfig) -> Result<Vec<FlowRecord>> {
    let text = fs::read_to_string(&cfg.flow_file).map_err(|e| Error::io(&cfg.flow_file, e))?;
    parse_flow_file(&text).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", cfg.flow_file.display()),
        },
        other => other,
    })
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_artifact(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = create_file(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub struct IngestOutcome {
    pub summary: FlowSummary,
    pub panel: AggregatedPanel,
    pub panel_path: PathBuf,
}

pub fn cmd_ingest(cfg: &RunConfig) -> Result<IngestOutcome> {
    let records = read_records(cfg)?;
    let window = cfg.observation_window()?;
    let panel = discretize(&records, &window, &cfg.grid)?;
    ensure_dir(&cfg.output_dir)?;
    let panel_path = cfg.output_dir.join("panel.csv");
    write_artifact(&panel_path, |w| panel.write_csv(w))?;
    Ok(IngestOutcome {
        summary: FlowSummary::from_records(&records, &window),
        panel,
        panel_path,
    })
}

pub fn ingest_report(o: &IngestOutcome) -> String {
    let p = &o.panel;
    format!(
        "{}\nevents in panel: {}\nperson-periods at risk: {}\nwindow: {} to {} ({} days)\ngrid: {} time bins x {} age bins\npanel: {}",
        o.summary,
        p.total_events(),
        p.total_at_risk(),
        format_date(p.window().start()),
        format_date(p.window().end()),
        p.window().span_days(),
        p.p(),
        p.r(),
        o.panel_path.display()
    )
}

pub struct AnalysisOutcome {
    pub panel: AggregatedPanel,
    pub prior: SmoothnessPrior,
    pub bases: Vec<SplineBasis>,
    pub chains: Vec<ChainOutput>,
    pub surface: SurfaceSummary,
    pub rho: RhoPosterior,
    pub metadata: serde_json::Value,
}

/// Bases for every grid value, built on one thread each.
pub fn build_bases(
    panel: &AggregatedPanel,
    rho_grid: &[f64],
    trace_fraction: f64,
    cache: Option<&Path>,
) -> Result<Vec<SplineBasis>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = rho_grid
            .iter()
            .map(|&rho| s.spawn(move || cached_basis(cache, panel.t(), panel.a(), rho, trace_fraction)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("basis thread panicked"))
            .collect()
    })
}

/// Runs chains `0..chains`, at most `limit` at a time; output is in chain order.
pub fn run_chains(model: &Model, config: &SamplerConfig, chains: usize, limit: usize) -> Result<Vec<ChainOutput>> {
    let mut out = Vec::with_capacity(chains);
    let ids: Vec<u64> = (0..chains as u64).collect();
    for batch in ids.chunks(limit.max(1)) {
        let results: Vec<Result<ChainOutput>> = std::thread::scope(|s| {
            let handles: Vec<_> = batch
                .iter()
                .map(|&c| s.spawn(move || run_chain(model, config, c)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("chain thread panicked"))
                .collect()
        });
        for r in results {
            out.push(r?);
        }
    }
    Ok(out)
}

pub fn cmd_analyze(cfg: &RunConfig) -> Result<AnalysisOutcome> {
    let records = read_records(cfg)?;
    let window = cfg.observation_window()?;
    let panel = discretize(&records, &window, &cfg.grid)?;
    let prior = cfg.smoothness_prior(&window)?;
    ensure_dir(&cfg.output_dir)?;
    let cache = cfg.cache_dir();
    let bases = build_bases(&panel, &prior.rho_grid, cfg.sampler.trace_fraction, Some(&cache))?;
    let model = Model::new(&panel, &bases, &prior, cfg.sampler.phi_prior_precision)?;
    let limit = cfg.max_concurrent_chains.unwrap_or(cfg.chains);
    let chains = run_chains(&model, &cfg.sampler, cfg.chains, limit)?;

    for c in &chains {
        let path = cfg.output_dir.join(format!("trace_chain{}.csv", c.chain));
        write_artifact(&path, |w| write_trace(w, c, &prior))?;
        if cfg.write_beta_draws {
            let path = cfg.output_dir.join(format!("beta_chain{}.bin", c.chain));
            write_artifact(&path, |w| write_beta_draws(w, c))?;
        }
    }
    let surface = summarize(&chains, &panel, cfg.reference_age)?;
    write_artifact(&cfg.output_dir.join("surface.csv"), |w| surface.write_csv(w))?;
    let rho = rho_posterior(&pooled_visits(&chains, prior.len()), &prior)?;
    write_artifact(&cfg.output_dir.join("rho_table.csv"), |w| rho.write_csv(w))?;

    if !cfg.queries.is_empty() {
        let mut rows = Vec::new();
        for q in &cfg.queries {
            let date = window.date_at(q.day);
            let (lor, prob) = surface.point_query(date, q.age)?;
            rows.push(format!("{},{},{},{},{}", q.day, format_date(date), sig6(q.age), sig6(lor), sig6(prob)));
        }
        write_artifact(&cfg.output_dir.join("queries.csv"), |w| {
            writeln!(w, "day,date,age,median_lor,prob_or_gt_1")?;
            rows.iter().try_for_each(|r| writeln!(w, "{r}"))
        })?;
    }

    let metadata = metadata(cfg, &window, &panel, &prior, &bases, &chains)?;
    let text = serde_json::to_string_pretty(&metadata)?;
    write_artifact(&cfg.output_dir.join("metadata.json"), |w| writeln!(w, "{text}"))?;
    Ok(AnalysisOutcome {
        panel,
        prior,
        bases,
        chains,
        surface,
        rho,
        metadata,
    })
}

fn metadata(
    cfg: &RunConfig,
    window: &ObservationWindow,
    panel: &AggregatedPanel,
    prior: &SmoothnessPrior,
    bases: &[SplineBasis],
    chains: &[ChainOutput],
) -> Result<serde_json::Value> {
    let e = cfg.elicitation(window);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sampler.seed);
    let per_rho = prior
        .rho_grid
        .iter()
        .enumerate()
        .map(|(k, &rho)| {
            let v = roughness_variance(rho, e.d_t, e.d_a)?;
            Ok(json!({
                "rho": rho,
                "prior_probability": prior.rho_probs[k],
                "roughness_variance": v,
                "scale_used": prior.scales[k],
                "scale_printed_formula": elicit_scale_printed(v, e.bound, e.alpha, prior.shape)?,
                "scale_monte_carlo": elicit_scale_monte_carlo(v, e.bound, e.alpha, prior.shape, 200_000, &mut rng)?,
                "basis_rank": bases[k].q(),
                "positive_eigenvalues": bases[k].positive_eigenvalues.len(),
                "captured_trace_fraction": bases[k].captured_fraction(),
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let chain_meta: Vec<_> = chains
        .iter()
        .map(|c| {
            json!({
                "chain": c.chain,
                "draws": c.draws.len(),
                "acceptance": {
                    "delta": c.acceptance.delta.rate(),
                    "phi": c.acceptance.phi.rate(),
                    "rho_between": c.acceptance.rho_between.rate(),
                    "rho_within": c.acceptance.rho_within.rate(),
                },
                "acceptance_counts": c.acceptance,
                "rho_visit_counts": c.rho_visit_counts,
                "diagnostics": c.diagnostics,
            })
        })
        .collect();
    Ok(json!({
        "software": VERSION,
        "seed": cfg.sampler.seed,
        "rng": "ChaCha8, seed_from_u64(seed), stream = chain index",
        "config": cfg,
        "panel": {
            "time_bins": panel.p(),
            "age_bins": panel.r(),
            "at_risk": panel.total_at_risk(),
            "events": panel.total_events(),
        },
        "parametrization": {
            "lambda_prior": "Gamma(shape, rate scale): mean shape / scale",
            "delta_prior": "N(0, I / lambda)",
            "rho_jump_lambda_map": "lambda_new = lambda * scale[rho] / scale[rho_new]",
            "elicitation": "scale_used = bound^2 q / (2 V (1 - q)) times scale_multiplier unless scales are given; q = alpha quantile of Beta(shape, 1/2)",
            "working_response": "own + (x - n p) / (n p q) on aggregated counts",
            "sweep": "delta, phi, lambda, rho",
        },
        "elicitation": e,
        "per_rho": per_rho,
        "chains": chain_meta,
    }))
}

pub struct BaselineOutcome {
    pub rows: Vec<ReportRow>,
    pub report_path: PathBuf,
}

pub fn cmd_baseline(cfg: &RunConfig) -> Result<BaselineOutcome> {
    let records = read_records(cfg)?;
    let window = cfg.observation_window()?;
    ensure_dir(&cfg.output_dir)?;
    let mut rows = Vec::new();
    if !records.is_empty() {
        for q in &cfg.baseline.subgroups {
            let date = window.date_at(q.day);
            let t = day_subgroup_table(&records, date, q.age_cutoff);
            rows.push(ReportRow {
                test: format!("fisher_one_sided_day{}", q.day),
                statistic: t.x1 as f64,
                p_value: fisher_exact_one_sided(&t),
                groups: format!(
                    "{} of {} aged >= {} vs {} of {} younger, on {}",
                    t.x1,
                    t.n1,
                    sig6(q.age_cutoff),
                    t.x2,
                    t.n2,
                    format_date(date)
                ),
            });
        }
        let periods = person_periods(&records, &window, &cfg.grid);
        if periods.iter().any(|p| p.event) {
            let knot = cfg.baseline.hinge_knot;
            match hinge_age_fit(&periods, knot) {
                Ok(fit) => rows.push(ReportRow {
                    test: "hinge_logistic_wald".into(),
                    statistic: fit.z,
                    p_value: fit.p_one_sided,
                    groups: format!(
                        "coefficient {} (se {}) on (age - {})+ over {} person-periods{}",
                        sig6(fit.coefficient),
                        sig6(fit.std_error),
                        sig6(knot),
                        periods.len(),
                        if fit.separated { "; separation detected" } else { "" }
                    ),
                }),
                // a constant covariate leaves nothing to test
                Err(Error::Domain(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    let report_path = cfg.output_dir.join("baseline_report.csv");
    write_artifact(&report_path, |w| write_report(w, &rows))?;
    let quarters = quarterly_rates(&records, &window);
    write_artifact(&cfg.output_dir.join("quarterly_rates.csv"), |w| write_quarterly_csv(w, &quarters))?;
    Ok(BaselineOutcome { rows, report_path })
}
