//! Reversible-jump Metropolis-Hastings-within-IRLS sampler.
//!
//! One sweep updates `delta`, then `phi`, then `lambda` (Gibbs), then
//! attempts a jump in `rho`. Coefficient blocks are proposed from the
//! Gaussian approximation produced by one IRLS step around the current
//! logits; the reverse move is evaluated with the same construction
//! around the proposed logits.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowdata::AggregatedPanel;
use crate::format::sig6;
use crate::tps::{LinearDesign, SmoothnessPrior, SplineBasis};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `ln(1 + e^b)` without overflow.
pub fn softplus(b: f64) -> f64 {
    if b > 0.0 {
        b + (-b).exp().ln_1p()
    } else {
        b.exp().ln_1p()
    }
}

pub fn logistic(b: f64) -> f64 {
    if b >= 0.0 {
        1.0 / (1.0 + (-b).exp())
    } else {
        let e = b.exp();
        e / (1.0 + e)
    }
}

/// `sum x b - n ln(1 + e^b)` over cells; empty cells contribute nothing.
pub fn log_likelihood(beta: &[f64], panel: &AggregatedPanel) -> f64 {
    assert_eq!(beta.len(), panel.cells(), "logit vector does not match panel");
    beta.iter()
        .zip(panel.n().iter().zip(panel.x()))
        .filter(|(_, (&n, _))| n > 0)
        .map(|(&b, (&n, &x))| x as f64 * b - n as f64 * softplus(b))
        .sum()
}

/// Current sampler position with cached logits and log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub rho_index: usize,
    pub lambda: f64,
    pub delta: DVector<f64>,
    pub phi: DVector<f64>,
    pub beta: DVector<f64>,
    pub loglik: f64,
}

impl ModelState {
    pub fn new(
        rho_index: usize,
        lambda: f64,
        delta: DVector<f64>,
        phi: DVector<f64>,
        model: &Model,
    ) -> Result<Self> {
        let basis = model.basis(rho_index)?;
        if delta.len() != basis.q() || phi.len() != 3 {
            return Err(Error::Domain(format!(
                "state has {} basis and {} drift coefficients, expected {} and 3",
                delta.len(),
                phi.len(),
                basis.q()
            )));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Domain(format!("smoothness must be positive, got {lambda}")));
        }
        let beta = &basis.b * &delta + &model.design.rows * &phi;
        let loglik = log_likelihood(beta.as_slice(), model.panel);
        Ok(ModelState {
            rho_index,
            lambda,
            delta,
            phi,
            beta,
            loglik,
        })
    }

    /// Default start: most probable `rho` (first on ties), prior-mean
    /// `lambda`, `delta = 0` and a flat surface at the pooled rate.
    pub fn initial(model: &Model) -> Result<Self> {
        let prior = model.prior;
        let mut rho_index = 0;
        for (k, &p) in prior.rho_probs.iter().enumerate() {
            if p > prior.rho_probs[rho_index] {
                rho_index = k;
            }
        }
        let q = model.basis(rho_index)?.q();
        let n = model.panel.total_at_risk() as f64;
        let x = model.panel.total_events() as f64;
        let rate = (x + 0.5) / (n + 1.0);
        let phi = DVector::from_vec(vec![(rate / (1.0 - rate)).ln(), 0.0, 0.0]);
        Self::new(
            rho_index,
            prior.prior_mean_lambda(rho_index),
            DVector::zeros(q),
            phi,
            model,
        )
    }
}

/// Immutable inputs shared by every chain.
#[derive(Debug, Clone)]
pub struct Model<'a> {
    pub panel: &'a AggregatedPanel,
    pub design: LinearDesign,
    pub bases: &'a [SplineBasis],
    pub prior: &'a SmoothnessPrior,
    pub phi_prior_precision: f64,
}

impl<'a> Model<'a> {
    pub fn new(
        panel: &'a AggregatedPanel,
        bases: &'a [SplineBasis],
        prior: &'a SmoothnessPrior,
        phi_prior_precision: f64,
    ) -> Result<Self> {
        prior.validate()?;
        if bases.len() != prior.len() {
            return Err(Error::Config(format!(
                "{} bases for {} anisotropy values",
                bases.len(),
                prior.len()
            )));
        }
        if let Some(b) = bases.iter().find(|b| b.cells() != panel.cells()) {
            return Err(Error::Config(format!(
                "basis has {} cells but the panel has {}",
                b.cells(),
                panel.cells()
            )));
        }
        if !(phi_prior_precision >= 0.0 && phi_prior_precision.is_finite()) {
            return Err(Error::Config("drift prior precision must be non-negative".into()));
        }
        Ok(Model {
            panel,
            design: LinearDesign::new(panel.t(), panel.a()),
            bases,
            prior,
            phi_prior_precision,
        })
    }

    fn basis(&self, idx: usize) -> Result<&SplineBasis> {
        self.bases
            .get(idx)
            .ok_or_else(|| Error::Domain(format!("no basis for anisotropy index {idx}")))
    }
}

/// Gaussian proposal `N(mean, precision^{-1})` held through its Cholesky factor.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub mean: DVector<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
}

impl Proposal {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn precision(&self) -> DMatrix<f64> {
        match &self.chol {
            Some(c) => {
                let l = c.l();
                &l * l.transpose()
            }
            None => DMatrix::zeros(0, 0),
        }
    }

    /// `mean + L^{-T} z` with `z` standard normal.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let Some(c) = &self.chol else {
            return DVector::zeros(0);
        };
        let z = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        let l = c.l_dirty();
        let x = l
            .tr_solve_lower_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        &self.mean + x
    }

    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let Some(c) = &self.chol else {
            return 0.0;
        };
        let l = c.l_dirty();
        let d = x - &self.mean;
        // ||L' d||^2 restricted to the lower triangle
        let lt_d = l.lower_triangle().transpose() * d;
        let log_det: f64 = (0..self.dim()).map(|k| l[(k, k)].ln()).sum();
        log_det - 0.5 * self.dim() as f64 * LN_2PI - 0.5 * lt_d.norm_squared()
    }
}

/// One IRLS step for the block with design `x` (cells by k), where `own`
/// is that block's part of the linear predictor and `beta` the full logits:
/// precision `prior_precision I + X' W X`, mean
/// `precision^{-1} X' (W own + x - n p)` with `W = diag(n p q)`, which equals
/// `precision^{-1} X' W y_hat` for the working response
/// `y_hat = own + (x - n p) / (n p q)` without dividing by `n p q`.
pub fn irls_proposal(
    design: &DMatrix<f64>,
    own: &DVector<f64>,
    beta: &DVector<f64>,
    panel: &AggregatedPanel,
    prior_precision: f64,
) -> Result<Proposal> {
    let k = design.ncols();
    if k == 0 {
        return Ok(Proposal {
            mean: DVector::zeros(0),
            chol: None,
        });
    }
    let cells = panel.cells();
    let mut weighted = design.clone();
    let mut rhs_cells = DVector::zeros(cells);
    for c in 0..cells {
        let n = panel.n()[c] as f64;
        let x = panel.x()[c] as f64;
        let p = logistic(beta[c]);
        let w = n * p * (1.0 - p);
        weighted.row_mut(c).scale_mut(w);
        rhs_cells[c] = w * own[c] + x - n * p;
    }
    let mut precision = design.transpose() * &weighted;
    for d in 0..k {
        precision[(d, d)] += prior_precision;
    }
    let rhs = design.transpose() * rhs_cells;
    let chol = Cholesky::new(precision).ok_or_else(|| {
        Error::Numerical("proposal precision is not positive definite".into())
    })?;
    let mean = chol.solve(&rhs);
    if mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("proposal mean is not finite".into()));
    }
    Ok(Proposal {
        mean,
        chol: Some(chol),
    })
}

/// Proposed/accepted counts for one update type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MoveStats {
    pub proposed: u64,
    pub accepted: u64,
}

impl MoveStats {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub delta: MoveStats,
    pub phi: MoveStats,
    /// Jumps to a different grid value.
    pub rho_between: MoveStats,
    /// Self-jumps, which refresh `delta` at the same `rho`.
    pub rho_within: MoveStats,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Jumps rejected because the mapped smoothness was not finite and positive.
    pub lambda_map_rejections: u64,
    /// Proposals rejected because the acceptance ratio was not a number.
    pub nonfinite_ratio_rejections: u64,
}

fn accept<R: Rng + ?Sized>(log_alpha: f64, rng: &mut R, diag: &mut Diagnostics) -> bool {
    let u: f64 = rng.random();
    if log_alpha.is_nan() {
        diag.nonfinite_ratio_rejections += 1;
        return false;
    }
    u.ln() < log_alpha
}

fn log_normal_prior(x: &DVector<f64>, precision: f64) -> f64 {
    let k = x.len() as f64;
    0.5 * k * (precision.ln() - LN_2PI) - 0.5 * precision * x.norm_squared()
}

/// Log Metropolis-Hastings ratio for moving `delta` to `delta_new` at the
/// current `rho` and `lambda`, given the forward proposal used to draw it.
/// Returns the ratio together with the proposed logits and log-likelihood.
pub fn delta_log_alpha(
    state: &ModelState,
    model: &Model,
    forward: &Proposal,
    delta_new: &DVector<f64>,
) -> Result<(f64, DVector<f64>, f64)> {
    let b = &model.bases[state.rho_index].b;
    let fixed = &model.design.rows * &state.phi;
    let own_new = b * delta_new;
    let beta_new = &own_new + &fixed;
    let ll_new = log_likelihood(beta_new.as_slice(), model.panel);
    let reverse = irls_proposal(b, &own_new, &beta_new, model.panel, state.lambda)?;
    let log_alpha = ll_new - state.loglik
        - 0.5 * state.lambda * (delta_new.norm_squared() - state.delta.norm_squared())
        + reverse.log_density(&state.delta)
        - forward.log_density(delta_new);
    Ok((log_alpha, beta_new, ll_new))
}

pub fn mh_update_delta<R: Rng + ?Sized>(
    state: &mut ModelState,
    model: &Model,
    rng: &mut R,
    stats: &mut AcceptanceStats,
    diag: &mut Diagnostics,
) -> Result<()> {
    let b = &model.bases[state.rho_index].b;
    if b.ncols() == 0 {
        return Ok(());
    }
    let own = b * &state.delta;
    let forward = irls_proposal(b, &own, &state.beta, model.panel, state.lambda)?;
    let delta_new = forward.sample(rng);
    let (log_alpha, beta_new, ll_new) = delta_log_alpha(state, model, &forward, &delta_new)?;
    let ok = accept(log_alpha, rng, diag);
    stats.delta.record(ok);
    if ok {
        state.delta = delta_new;
        state.beta = beta_new;
        state.loglik = ll_new;
    }
    Ok(())
}

/// Log ratio for moving `phi` to `phi_new` with `B delta` held fixed.
pub fn phi_log_alpha(
    state: &ModelState,
    model: &Model,
    forward: &Proposal,
    phi_new: &DVector<f64>,
) -> Result<(f64, DVector<f64>, f64)> {
    let l = &model.design.rows;
    let fixed = &model.bases[state.rho_index].b * &state.delta;
    let own_new = l * phi_new;
    let beta_new = &own_new + &fixed;
    let ll_new = log_likelihood(beta_new.as_slice(), model.panel);
    let tau = model.phi_prior_precision;
    let reverse = irls_proposal(l, &own_new, &beta_new, model.panel, tau)?;
    let log_alpha = ll_new - state.loglik
        - 0.5 * tau * (phi_new.norm_squared() - state.phi.norm_squared())
        + reverse.log_density(&state.phi)
        - forward.log_density(phi_new);
    Ok((log_alpha, beta_new, ll_new))
}

pub fn mh_update_phi<R: Rng + ?Sized>(
    state: &mut ModelState,
    model: &Model,
    rng: &mut R,
    stats: &mut AcceptanceStats,
    diag: &mut Diagnostics,
) -> Result<()> {
    let l = &model.design.rows;
    let own = l * &state.phi;
    let forward = irls_proposal(l, &own, &state.beta, model.panel, model.phi_prior_precision)?;
    let phi_new = forward.sample(rng);
    let (log_alpha, beta_new, ll_new) = phi_log_alpha(state, model, &forward, &phi_new)?;
    let ok = accept(log_alpha, rng, diag);
    stats.phi.record(ok);
    if ok {
        state.phi = phi_new;
        state.beta = beta_new;
        state.loglik = ll_new;
    }
    Ok(())
}

/// Draws `lambda ~ Gamma(sh + q/2, rate sc_rho + delta'delta / 2)`.
pub fn gibbs_lambda<R: Rng + ?Sized>(state: &mut ModelState, prior: &SmoothnessPrior, rng: &mut R) {
    state.lambda = draw_lambda(
        prior.shape,
        prior.scales[state.rho_index],
        state.delta.len(),
        state.delta.norm_squared(),
        rng,
    );
}

pub fn draw_lambda<R: Rng + ?Sized>(shape: f64, rate: f64, q: usize, ss: f64, rng: &mut R) -> f64 {
    let post_shape = shape + 0.5 * q as f64;
    let post_rate = rate + 0.5 * ss;
    let g = Gamma::new(post_shape, 1.0 / post_rate).expect("positive gamma parameters");
    g.sample(rng).max(f64::MIN_POSITIVE)
}

/// A between-model move in full: target index, mapped smoothness and
/// proposed coefficients, with its log acceptance ratio.
#[derive(Debug, Clone)]
pub struct JumpProposal {
    pub rho_index: usize,
    pub lambda: f64,
    pub delta: DVector<f64>,
    pub beta: DVector<f64>,
    pub loglik: f64,
    pub log_alpha: f64,
}

/// Log acceptance ratio for jumping to `target` with coefficients
/// `delta_new`, drawn from `forward`.
pub fn jump_log_alpha(
    state: &ModelState,
    model: &Model,
    jump: &[Vec<f64>],
    target: usize,
    forward: &Proposal,
    delta_new: DVector<f64>,
) -> Result<JumpProposal> {
    let prior = model.prior;
    let (from, to) = (state.rho_index, target);
    let (sc, sc_new) = (prior.scales[from], prior.scales[to]);
    let lambda_new = state.lambda * sc / sc_new;
    let fixed = &model.design.rows * &state.phi;
    let own_new = &model.bases[to].b * &delta_new;
    let beta_new = &own_new + &fixed;
    let ll_new = log_likelihood(beta_new.as_slice(), model.panel);
    let reverse = irls_proposal(&model.bases[from].b, &own_new, &beta_new, model.panel, state.lambda)?;
    let log_alpha = (prior.log_prior_rho(to) - prior.log_prior_rho(from))
        + (prior.log_prior_lambda(to, lambda_new) - prior.log_prior_lambda(from, state.lambda))
        + (log_normal_prior(&delta_new, lambda_new) - log_normal_prior(&state.delta, state.lambda))
        + (ll_new - state.loglik)
        + (jump[to][from].ln() - jump[from][to].ln())
        + (reverse.log_density(&state.delta) - forward.log_density(&delta_new))
        + (sc / sc_new).ln();
    Ok(JumpProposal {
        rho_index: to,
        lambda: lambda_new,
        delta: delta_new,
        beta: beta_new,
        loglik: ll_new,
        log_alpha,
    })
}

pub fn rho_jump<R: Rng + ?Sized>(
    state: &mut ModelState,
    model: &Model,
    jump: &[Vec<f64>],
    rng: &mut R,
    stats: &mut AcceptanceStats,
    diag: &mut Diagnostics,
) -> Result<()> {
    let from = state.rho_index;
    let u: f64 = rng.random();
    let mut to = jump[from].len() - 1;
    let mut acc = 0.0;
    for (k, &p) in jump[from].iter().enumerate() {
        acc += p;
        if u < acc {
            to = k;
            break;
        }
    }
    let slot = if to == from {
        &mut stats.rho_within
    } else {
        &mut stats.rho_between
    };
    let lambda_new = state.lambda * model.prior.scales[from] / model.prior.scales[to];
    if !(lambda_new > 0.0 && lambda_new.is_finite()) {
        diag.lambda_map_rejections += 1;
        slot.record(false);
        return Ok(());
    }
    let own = &state.beta - &model.design.rows * &state.phi;
    let b_new = &model.bases[to].b;
    let forward = irls_proposal(b_new, &own, &state.beta, model.panel, lambda_new)?;
    let delta_new = forward.sample(rng);
    let proposal = jump_log_alpha(state, model, jump, to, &forward, delta_new)?;
    let ok = accept(proposal.log_alpha, rng, diag);
    slot.record(ok);
    if ok {
        state.rho_index = proposal.rho_index;
        state.lambda = proposal.lambda;
        state.delta = proposal.delta;
        state.beta = proposal.beta;
        state.loglik = proposal.loglik;
    }
    Ok(())
}

/// Default jump matrix: stay with probability 0.8 (0.9 at the ends) and
/// move to each neighbour with probability 0.1.
pub fn default_jump_matrix(m: usize) -> Vec<Vec<f64>> {
    (0..m)
        .map(|i| {
            (0..m)
                .map(|j| {
                    if m == 1 {
                        1.0
                    } else if i == j {
                        if i == 0 || i == m - 1 {
                            0.9
                        } else {
                            0.8
                        }
                    } else if i.abs_diff(j) == 1 {
                        0.1
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

fn default_iterations() -> usize {
    20_000
}
fn default_burn_in() -> usize {
    1_000
}
fn default_thin() -> usize {
    1
}
fn default_seed() -> u64 {
    20_100_601
}
fn default_phi_precision() -> f64 {
    1e-6
}
fn default_trace_fraction() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Square tridiagonal doubly-stochastic matrix; `None` means the default
    /// for the grid size.
    #[serde(default)]
    pub jump_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_phi_precision")]
    pub phi_prior_precision: f64,
    #[serde(default = "default_trace_fraction")]
    pub trace_fraction: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            iterations: default_iterations(),
            burn_in: default_burn_in(),
            thin: default_thin(),
            seed: default_seed(),
            jump_matrix: None,
            phi_prior_precision: default_phi_precision(),
            trace_fraction: default_trace_fraction(),
        }
    }
}

impl SamplerConfig {
    pub fn jump_matrix_for(&self, m: usize) -> Vec<Vec<f64>> {
        self.jump_matrix
            .clone()
            .unwrap_or_else(|| default_jump_matrix(m))
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn-in {} must be below the iteration count {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thinning interval must be positive".into()));
        }
        if !(self.phi_prior_precision >= 0.0 && self.phi_prior_precision.is_finite()) {
            return Err(Error::Config("drift prior precision must be non-negative".into()));
        }
        if !(self.trace_fraction > 0.0 && self.trace_fraction <= 1.0) {
            return Err(Error::Config("trace fraction must lie in (0, 1]".into()));
        }
        validate_jump_matrix(&self.jump_matrix_for(m), m)
    }

    pub fn draw_count(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

pub fn validate_jump_matrix(j: &[Vec<f64>], m: usize) -> Result<()> {
    if j.len() != m || j.iter().any(|row| row.len() != m) {
        return Err(Error::Config(format!("jump matrix must be {m} x {m}")));
    }
    for (a, row) in j.iter().enumerate() {
        for (b, &v) in row.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("jump probability [{a}][{b}] = {v} is not in [0, 1]")));
            }
            if a.abs_diff(b) > 1 && v != 0.0 {
                return Err(Error::Config(format!(
                    "jump matrix must be tridiagonal, entry [{a}][{b}] = {v}"
                )));
            }
            if v > 0.0 && j[b][a] == 0.0 {
                return Err(Error::Config(format!(
                    "jump [{a}][{b}] has no reverse move"
                )));
            }
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("jump matrix row {a} sums to {s}")));
        }
    }
    for b in 0..m {
        let s: f64 = j.iter().map(|row| row[b]).sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("jump matrix column {b} sums to {s}")));
        }
    }
    Ok(())
}

/// One recorded draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub iteration: usize,
    pub rho_index: usize,
    pub lambda: f64,
    pub loglik: f64,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub chain: u64,
    pub draws: Vec<Draw>,
    pub acceptance: AcceptanceStats,
    /// Recorded draws per grid value.
    pub rho_visit_counts: Vec<u64>,
    pub diagnostics: Diagnostics,
}

/// Stepwise sampler; `run_chain` drives it, tests inspect it between sweeps.
pub struct Sampler<'m, 'a> {
    pub model: &'m Model<'a>,
    pub state: ModelState,
    pub jump: Vec<Vec<f64>>,
    pub rng: ChaCha8Rng,
    pub acceptance: AcceptanceStats,
    pub diagnostics: Diagnostics,
}

impl<'m, 'a> Sampler<'m, 'a> {
    /// Stream `chain` of ChaCha8 seeded with `seed`.
    pub fn new(model: &'m Model<'a>, config: &SamplerConfig, chain: u64) -> Result<Self> {
        config.validate(model.prior.len())?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(chain);
        Ok(Sampler {
            model,
            state: ModelState::initial(model)?,
            jump: config.jump_matrix_for(model.prior.len()),
            rng,
            acceptance: AcceptanceStats::default(),
            diagnostics: Diagnostics::default(),
        })
    }

    pub fn sweep(&mut self) -> Result<()> {
        let (m, s, r) = (self.model, &mut self.state, &mut self.rng);
        mh_update_delta(s, m, r, &mut self.acceptance, &mut self.diagnostics)?;
        mh_update_phi(s, m, r, &mut self.acceptance, &mut self.diagnostics)?;
        gibbs_lambda(s, m.prior, r);
        rho_jump(s, m, &self.jump, r, &mut self.acceptance, &mut self.diagnostics)
    }
}

pub fn run_chain(model: &Model, config: &SamplerConfig, chain: u64) -> Result<ChainOutput> {
    let mut sampler = Sampler::new(model, config, chain)?;
    let mut draws = Vec::with_capacity(config.draw_count());
    let mut visits = vec![0u64; model.prior.len()];
    for it in 1..=config.iterations {
        sampler.sweep().map_err(|e| Error::AtIteration {
            iteration: it,
            source: Box::new(e),
        })?;
        if it > config.burn_in && (it - config.burn_in).is_multiple_of(config.thin) {
            let s = &sampler.state;
            visits[s.rho_index] += 1;
            draws.push(Draw {
                iteration: it,
                rho_index: s.rho_index,
                lambda: s.lambda,
                loglik: s.loglik,
                beta: s.beta.as_slice().to_vec(),
            });
        }
    }
    Ok(ChainOutput {
        chain,
        draws,
        acceptance: sampler.acceptance,
        rho_visit_counts: visits,
        diagnostics: sampler.diagnostics,
    })
}

/// Trace CSV with header `iter,rho,lambda,loglik`.
pub fn write_trace<W: Write>(mut out: W, chain: &ChainOutput, prior: &SmoothnessPrior) -> std::io::Result<()> {
    writeln!(out, "iter,rho,lambda,loglik")?;
    for d in &chain.draws {
        writeln!(
            out,
            "{},{},{},{}",
            d.iteration,
            sig6(prior.rho_grid[d.rho_index]),
            sig6(d.lambda),
            sig6(d.loglik)
        )?;
    }
    Ok(())
}

const BETA_MAGIC: &[u8; 8] = b"AHBETA01";

/// Binary logit draws: magic, draw count and cell count as little-endian
/// u64, then each draw's logits as little-endian f64.
pub fn write_beta_draws<W: Write>(mut out: W, chain: &ChainOutput) -> std::io::Result<()> {
    let cells = chain.draws.first().map_or(0, |d| d.beta.len());
    out.write_all(BETA_MAGIC)?;
    out.write_all(&(chain.draws.len() as u64).to_le_bytes())?;
    out.write_all(&(cells as u64).to_le_bytes())?;
    for d in &chain.draws {
        for v in &d.beta {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_beta_draws(bytes: &[u8]) -> Result<Vec<Vec<f64>>> {
    let bad = || Error::Numerical("not a logit draw file".into());
    if bytes.len() < 24 || &bytes[..8] != BETA_MAGIC {
        return Err(bad());
    }
    let word = |k: usize| u64::from_le_bytes(bytes[8 * k..8 * k + 8].try_into().unwrap()) as usize;
    let (draws, cells) = (word(1), word(2));
    if bytes.len() != 24 + 8 * draws * cells {
        return Err(bad());
    }
    Ok((0..draws)
        .map(|d| (0..cells).map(|c| f64::from_le_bytes(bytes[24 + 8 * (d * cells + c)..][..8].try_into().unwrap())).collect())
        .collect())
}
