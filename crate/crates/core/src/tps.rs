//! Anisotropic thin-plate-spline prior over the scaled time x age plane.
//!
//! For a fixed anisotropy `rho` the kernel matrix `K` holds the thin-plate
//! Green's function between every pair of grid cells after the coordinate
//! rescaling `T = t / sqrt(1 + rho^2)`, `A = rho * a / sqrt(1 + rho^2)`.
//! Projecting out the linear drift `(1, t, a)` and taking the spectral
//! decomposition `P K P = U diag(ev) U'` gives basis columns
//! `B = U diag(sqrt(ev))`; logits are `B * delta + L * phi` with
//! `delta ~ N(0, I / lambda)`.

use std::f64::consts::PI;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{Beta, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Eigenvalues at or below this fraction of the largest are treated as zero.
pub const EIGEN_CUTOFF: f64 = 1e-10;

/// Thin-plate Green's function `|v|^2 ln|v| / (8 pi)` at `v = (dt, da)`.
pub fn tps_kernel(dt: f64, da: f64) -> f64 {
    let r2 = dt * dt + da * da;
    if r2 == 0.0 {
        0.0
    } else {
        // |v|^2 ln|v| = r2 * ln(r2) / 2
        r2 * r2.ln() / (16.0 * PI)
    }
}

fn anisotropy_scales(rho: f64) -> (f64, f64) {
    let norm = (1.0 + rho * rho).sqrt();
    (1.0 / norm, rho / norm)
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::Domain(format!("anisotropy must be positive, got {rho}")));
    }
    Ok(())
}

/// Symmetric kernel over grid cells ordered `i * r + j` (time-major).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub entries: DMatrix<f64>,
    pub rho: f64,
}

pub fn kernel_matrix(t: &[f64], a: &[f64], rho: f64) -> Result<KernelMatrix> {
    check_rho(rho)?;
    let (ts, as_) = anisotropy_scales(rho);
    let pts = cell_points(t, a);
    let n = pts.len();
    let mut k = DMatrix::zeros(n, n);
    for u in 0..n {
        for v in (u + 1)..n {
            let h = tps_kernel(ts * (pts[u].0 - pts[v].0), as_ * (pts[u].1 - pts[v].1));
            k[(u, v)] = h;
            k[(v, u)] = h;
        }
    }
    Ok(KernelMatrix { entries: k, rho })
}

fn cell_points(t: &[f64], a: &[f64]) -> Vec<(f64, f64)> {
    t.iter()
        .flat_map(|&ti| a.iter().map(move |&aj| (ti, aj)))
        .collect()
}

/// Linear-drift design with row `(1, t_i, a_j)` per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDesign {
    pub rows: DMatrix<f64>,
}

impl LinearDesign {
    pub fn new(t: &[f64], a: &[f64]) -> Self {
        let pts = cell_points(t, a);
        let rows = DMatrix::from_fn(pts.len(), 3, |k, c| match c {
            0 => 1.0,
            1 => pts[k].0,
            _ => pts[k].1,
        });
        LinearDesign { rows }
    }

    pub fn cells(&self) -> usize {
        self.rows.nrows()
    }
}

/// Orthogonal projector onto the complement of the column space of `L`,
/// held as `I - Q Q'` with `Q` an orthonormal basis of that column space.
#[derive(Debug, Clone)]
pub struct Projector {
    q: DMatrix<f64>,
}

impl Projector {
    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::identity(self.dim(), self.dim()) - &self.q * self.q.transpose()
    }

    /// `P M P` for symmetric `M` in O(n^2 k) rather than two dense products.
    pub fn sandwich(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mq = m * &self.q;
        let qmq = self.q.transpose() * &mq;
        let mut out = m - &mq * self.q.transpose() - &self.q * mq.transpose();
        out += &self.q * qmq * self.q.transpose();
        out
    }
}

/// Projector `I - L (L'L)^{-1} L'`; fails when `L` is rank deficient.
pub fn projection(design: &LinearDesign) -> Result<Projector> {
    let l = &design.rows;
    if l.nrows() < l.ncols() {
        return Err(Error::Numerical(format!(
            "linear design has {} rows for {} columns",
            l.nrows(),
            l.ncols()
        )));
    }
    let gram = l.transpose() * l;
    let ev = SymmetricEigen::new(gram.clone()).eigenvalues;
    let max = ev.max();
    let min = ev.min();
    if min.is_nan() || min <= 1e-12 * max {
        return Err(Error::Numerical(format!(
            "linear design is rank deficient (Gram eigenvalues {min:.3e}..{max:.3e}); \
             the grid needs at least two distinct times and two distinct ages"
        )));
    }
    let qr = l.clone().qr();
    let q = qr.q();
    Ok(Projector { q })
}

/// Truncated eigenbasis of `P K P` for one anisotropy value.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    /// Cells x q basis columns `u_k sqrt(ev_k)`.
    pub b: DMatrix<f64>,
    /// Retained eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Every eigenvalue above the numerical cutoff, descending.
    pub positive_eigenvalues: Vec<f64>,
    pub trace_fraction: f64,
    pub rho: f64,
}

impl SplineBasis {
    pub fn q(&self) -> usize {
        self.b.ncols()
    }

    pub fn cells(&self) -> usize {
        self.b.nrows()
    }

    /// Share of the positive spectrum captured by the retained columns.
    pub fn captured_fraction(&self) -> f64 {
        let total: f64 = self.positive_eigenvalues.iter().sum();
        if total == 0.0 {
            1.0
        } else {
            self.eigenvalues.iter().sum::<f64>() / total
        }
    }

    /// Kernel, projection and truncation for a grid in one call.
    pub fn for_grid(t: &[f64], a: &[f64], rho: f64, trace_fraction: f64) -> Result<Self> {
        let k = kernel_matrix(t, a, rho)?;
        let p = projection(&LinearDesign::new(t, a))?;
        build_basis(&k, &p, trace_fraction)
    }
}

/// Spectral truncation of `P K P`: the smallest prefix of descending
/// eigenvalues whose sum reaches `trace_fraction` of the positive spectrum.
pub fn build_basis(k: &KernelMatrix, p: &Projector, trace_fraction: f64) -> Result<SplineBasis> {
    let pkp = p.sandwich(&k.entries);
    basis_from_matrix(pkp, k.rho, trace_fraction, k.entries.amax())
}

pub(crate) fn basis_from_matrix(
    m: DMatrix<f64>,
    rho: f64,
    trace_fraction: f64,
    scale: f64,
) -> Result<SplineBasis> {
    if !(trace_fraction > 0.0 && trace_fraction <= 1.0) {
        return Err(Error::Domain(format!(
            "trace fraction must lie in (0, 1], got {trace_fraction}"
        )));
    }
    let n = m.nrows();
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 100_000)
        .ok_or_else(|| Error::Numerical("symmetric eigendecomposition did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    // stable: ties keep the lower original index first
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
    let max = order.first().map_or(0.0, |&i| eig.eigenvalues[i]);
    // floor at rounding noise relative to the kernel, so a zero matrix has no columns
    let cutoff = (EIGEN_CUTOFF * max).max(1e-12 * n as f64 * scale).max(0.0);
    let positive: Vec<usize> = order
        .into_iter()
        .filter(|&i| eig.eigenvalues[i] > cutoff)
        .collect();
    let positive_eigenvalues: Vec<f64> = positive.iter().map(|&i| eig.eigenvalues[i]).collect();

    let mut cumulative = Vec::with_capacity(positive.len());
    let mut acc = 0.0;
    for &v in &positive_eigenvalues {
        acc += v;
        cumulative.push(acc);
    }
    let q = cumulative
        .iter()
        .position(|&c| c >= trace_fraction * acc)
        .map_or(0, |pos| pos + 1);

    let mut b = DMatrix::zeros(n, q);
    for (col, &idx) in positive.iter().take(q).enumerate() {
        let mut u: DVector<f64> = eig.eigenvectors.column(idx).into_owned();
        // sign convention: largest-magnitude entry positive
        let pivot = u.iamax();
        if u[pivot] < 0.0 {
            u.neg_mut();
        }
        b.set_column(col, &(u * eig.eigenvalues[idx].sqrt()));
    }
    Ok(SplineBasis {
        b,
        eigenvalues: positive_eigenvalues[..q].to_vec(),
        positive_eigenvalues,
        trace_fraction,
        rho,
    })
}

/// Prior variance (times lambda) of the mixed difference
/// `b(2,1) - 2 b(1,1) + b(0,1) - b(2,0) + 2 b(1,0) - b(0,0)` on the stencil
/// `(t0 + i d_t, a0 + j d_a)`, anchored at the origin.
pub fn roughness_variance(rho: f64, d_t: f64, d_a: f64) -> Result<f64> {
    roughness_variance_at(rho, d_t, d_a, 0.0, 0.0)
}

pub fn roughness_variance_at(rho: f64, d_t: f64, d_a: f64, t0: f64, a0: f64) -> Result<f64> {
    check_rho(rho)?;
    if !(d_t > 0.0 && d_a > 0.0) {
        return Err(Error::Domain("stencil spacings must be positive".into()));
    }
    let stencil: [(f64, f64, f64); 6] = [
        (2.0, 1.0, 1.0),
        (1.0, 1.0, -2.0),
        (0.0, 1.0, 1.0),
        (2.0, 0.0, -1.0),
        (1.0, 0.0, 2.0),
        (0.0, 0.0, -1.0),
    ];
    let (ts, as_) = anisotropy_scales(rho);
    let mut v = 0.0;
    for &(iu, ju, wu) in &stencil {
        for &(iv, jv, wv) in &stencil {
            let dt = ts * ((t0 + iu * d_t) - (t0 + iv * d_t));
            let da = as_ * ((a0 + ju * d_a) - (a0 + jv * d_a));
            v += wu * wv * tps_kernel(dt, da);
        }
    }
    Ok(v)
}

fn check_elicitation(v: f64, bound: f64, alpha: f64, shape: f64) -> Result<()> {
    if !(v > 0.0 && bound > 0.0) {
        return Err(Error::Domain("variance and bound must be positive".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(shape > 0.0 && shape.is_finite()) {
        return Err(Error::Domain(format!("gamma shape must be positive, got {shape}")));
    }
    Ok(())
}

/// `alpha` quantile of Beta(shape, 1/2).
pub fn beta_half_quantile(shape: f64, alpha: f64) -> Result<f64> {
    let dist = Beta::new(shape, 0.5).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(dist.inverse_cdf(alpha))
}

/// Gamma rate `sc` such that `P(|D| <= bound) = 1 - alpha` when
/// `lambda ~ Gamma(shape, rate sc)` and `D | lambda ~ N(0, v / lambda)`:
/// `sc = bound^2 q / (2 v (1 - q))` with `q` the `alpha` quantile of
/// Beta(shape, 1/2).
pub fn elicit_scale(v: f64, bound: f64, alpha: f64, shape: f64) -> Result<f64> {
    Ok(0.5 * elicit_scale_printed(v, bound, alpha, shape)?)
}

/// `bound^2 q / (v (1 - q))`, the same construction without the factor 2 that
/// comes from writing a chi-square(1) variable as twice a Gamma(1/2). It is
/// the exact answer when `D | lambda` has variance `v / (2 lambda)`.
pub fn elicit_scale_printed(v: f64, bound: f64, alpha: f64, shape: f64) -> Result<f64> {
    check_elicitation(v, bound, alpha, shape)?;
    let q = beta_half_quantile(shape, alpha)?;
    Ok(bound * bound * q / (v * (1.0 - q)))
}

/// Solves `P(|D| <= bound) = 1 - alpha` for the gamma rate by bisection,
/// simulating `lambda ~ Gamma(shape, rate sc)` and `D ~ N(0, v / lambda)`
/// with common random numbers across candidate rates.
pub fn elicit_scale_monte_carlo<R: Rng + ?Sized>(
    v: f64,
    bound: f64,
    alpha: f64,
    shape: f64,
    draws: usize,
    rng: &mut R,
) -> Result<f64> {
    check_elicitation(v, bound, alpha, shape)?;
    if draws == 0 {
        return Err(Error::Domain("need at least one draw".into()));
    }
    let gamma = Gamma::new(shape, 1.0).map_err(|e| Error::Domain(e.to_string()))?;
    // lambda = g / sc, D^2 = z^2 v sc / g
    let ratio: Vec<f64> = (0..draws)
        .map(|_| {
            let g: f64 = gamma.sample(rng);
            let z: f64 = StandardNormal.sample(rng);
            z * z * v / g
        })
        .collect();
    let coverage = |sc: f64| {
        let b2 = bound * bound;
        ratio.iter().filter(|&&r| r * sc <= b2).count() as f64 / draws as f64
    };
    let target = 1.0 - alpha;
    let (mut lo, mut hi) = (-60.0f64, 60.0f64); // natural log of sc
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if coverage(mid.exp()) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Inputs to the smoothness elicitation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Elicitation {
    pub bound: f64,
    pub alpha: f64,
    /// Scaled half business quarter.
    pub d_t: f64,
    /// Scaled decade of age.
    pub d_a: f64,
}

impl Elicitation {
    /// Defaults for a window of `span_days` and an age span of `age_span_years`.
    pub fn for_spans(span_days: f64, age_span_years: f64) -> Self {
        Elicitation {
            bound: 0.15,
            alpha: 0.05,
            d_t: 45.0 / span_days,
            d_a: 10.0 / age_span_years,
        }
    }
}

pub const DEFAULT_RHO_GRID: [f64; 6] = [8.0, 4.0, 2.0, 1.0, 0.5, 0.25];
pub const DEFAULT_RHO_PROBS: [f64; 6] = [0.08, 0.16, 0.26, 0.26, 0.16, 0.08];
pub const DEFAULT_SHAPE: f64 = 0.5;

/// Joint prior over anisotropy and smoothness:
/// `rho ~ Categorical(rho_probs)` on `rho_grid`,
/// `lambda | rho ~ Gamma(shape, rate scales[rho])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessPrior {
    pub rho_grid: Vec<f64>,
    pub rho_probs: Vec<f64>,
    pub shape: f64,
    pub scales: Vec<f64>,
}

impl SmoothnessPrior {
    pub fn new(rho_grid: Vec<f64>, rho_probs: Vec<f64>, shape: f64, scales: Vec<f64>) -> Result<Self> {
        let prior = SmoothnessPrior {
            rho_grid,
            rho_probs,
            shape,
            scales,
        };
        prior.validate()?;
        Ok(prior)
    }

    /// Scales elicited per grid value with [`elicit_scale`].
    pub fn elicited(
        rho_grid: Vec<f64>,
        rho_probs: Vec<f64>,
        shape: f64,
        elicitation: &Elicitation,
    ) -> Result<Self> {
        let scales = rho_grid
            .iter()
            .map(|&rho| {
                let v = roughness_variance(rho, elicitation.d_t, elicitation.d_a)?;
                elicit_scale(v, elicitation.bound, elicitation.alpha, shape)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(rho_grid, rho_probs, shape, scales)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.rho_grid.len();
        if m == 0 {
            return Err(Error::Config("anisotropy grid is empty".into()));
        }
        if self.rho_probs.len() != m || self.scales.len() != m {
            return Err(Error::Config(format!(
                "anisotropy grid has {m} values but {} probabilities and {} scales",
                self.rho_probs.len(),
                self.scales.len()
            )));
        }
        if let Some(rho) = self.rho_grid.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return Err(Error::Config(format!("anisotropy values must be positive, got {rho}")));
        }
        if self.rho_probs.iter().any(|p| p.is_nan() || *p < 0.0) {
            return Err(Error::Config("anisotropy probabilities must be non-negative".into()));
        }
        let total: f64 = self.rho_probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "anisotropy probabilities sum to {total}, not 1"
            )));
        }
        if self.scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config("smoothness scales must be positive".into()));
        }
        if !(self.shape > 0.0 && self.shape.is_finite()) {
            return Err(Error::Config("smoothness shape must be positive".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rho_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho_grid.is_empty()
    }

    pub fn log_prior_rho(&self, idx: usize) -> f64 {
        self.rho_probs[idx].ln()
    }

    /// Log Gamma(shape, rate sc) density of `lambda` given anisotropy `idx`.
    pub fn log_prior_lambda(&self, idx: usize, lambda: f64) -> f64 {
        let sc = self.scales[idx];
        let sh = self.shape;
        sh * sc.ln() - ln_gamma(sh) + (sh - 1.0) * lambda.ln() - sc * lambda
    }

    pub fn prior_mean_lambda(&self, idx: usize) -> f64 {
        self.shape / self.scales[idx]
    }
}

/// Loads a basis from `dir` keyed by the grid, `rho` and `trace_fraction`, or
/// builds and stores it. Without a directory this is [`SplineBasis::for_grid`].
pub fn cached_basis(
    dir: Option<&Path>,
    t: &[f64],
    a: &[f64],
    rho: f64,
    trace_fraction: f64,
) -> Result<SplineBasis> {
    let Some(dir) = dir else {
        return SplineBasis::for_grid(t, a, rho, trace_fraction);
    };
    let path = cache_path(dir, t, a, rho, trace_fraction);
    if let Ok(basis) = read_basis(&path) {
        if basis.cells() == t.len() * a.len() && basis.rho == rho && basis.trace_fraction == trace_fraction {
            return Ok(basis);
        }
    }
    let basis = SplineBasis::for_grid(t, a, rho, trace_fraction)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_basis(&path, &basis)?;
    Ok(basis)
}

pub fn cache_path(dir: &Path, t: &[f64], a: &[f64], rho: f64, trace_fraction: f64) -> PathBuf {
    let mut h = Sha256::new();
    h.update(b"agehazard-basis-v1");
    for block in [t, a] {
        h.update((block.len() as u64).to_le_bytes());
        for v in block {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    h.update(rho.to_bits().to_le_bytes());
    h.update(trace_fraction.to_bits().to_le_bytes());
    let digest = h.finalize();
    let hex: String = digest[..12].iter().map(|b| format!("{b:02x}")).collect();
    dir.join(format!("basis-{hex}.bin"))
}

const CACHE_MAGIC: &[u8; 8] = b"AHBASIS1";

pub fn write_basis(path: &Path, basis: &SplineBasis) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CACHE_MAGIC);
    for v in [basis.cells() as u64, basis.q() as u64, basis.positive_eigenvalues.len() as u64] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let floats = [basis.rho, basis.trace_fraction]
        .into_iter()
        .chain(basis.positive_eigenvalues.iter().copied())
        .chain(basis.b.iter().copied());
    for v in floats {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_basis(path: &Path) -> Result<SplineBasis> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let bad = || Error::Numerical(format!("{} is not a basis cache file", path.display()));
    if buf.len() < 8 + 24 + 16 || &buf[..8] != CACHE_MAGIC {
        return Err(bad());
    }
    let word = |k: usize| {
        let mut b = [0u8; 8];
        b.copy_from_slice(&buf[8 + 8 * k..16 + 8 * k]);
        b
    };
    let cells = u64::from_le_bytes(word(0)) as usize;
    let q = u64::from_le_bytes(word(1)) as usize;
    let npos = u64::from_le_bytes(word(2)) as usize;
    let nfloats = 2 + npos + cells * q;
    if buf.len() != 8 + 24 + 8 * nfloats || q > npos {
        return Err(bad());
    }
    let floats: Vec<f64> = (0..nfloats).map(|k| f64::from_le_bytes(word(3 + k))).collect();
    let positive_eigenvalues = floats[2..2 + npos].to_vec();
    Ok(SplineBasis {
        b: DMatrix::from_column_slice(cells, q, &floats[2 + npos..]),
        eigenvalues: positive_eigenvalues[..q].to_vec(),
        positive_eigenvalues,
        rho: floats[0],
        trace_fraction: floats[1],
    })
}
