//! Matrix-valued bounds for vector parameters and the Loewner-order check.
//!
//! The catalog model is linear-Gaussian, so every conditional law is Gaussian
//! and expectations are taken with tensor Gauss-Hermite rules in whitened
//! coordinates: `y = L_S z` with `θ | y = K y + L_post w` for observation-first
//! nesting, and `θ = L_P z` with `y | θ = H θ + L_R w` for parameter-first.
//! The outer axes of [`MatrixFlavor::AvgTheta`] and
//! [`MatrixFlavor::AvgConditional`] average a ratio of exponential sums, which
//! Hermite rules resolve poorly; they use a normal-weighted Gauss-Legendre
//! grid on the `tail_sigmas` box instead.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::format::fmt_sig;
use crate::integrate::IntegrationConfig;
use crate::quadrature::{gauss_hermite, gauss_legendre, pairwise_sum, CompensatedSum};
use crate::testfn::PsiFamily;

/// Gauss-Hermite nodes per axis (capped by `nodes_per_axis`).
pub const MATRIX_NODES: usize = 40;
/// Legendre nodes per axis of a two-dimensional outer ratio grid.
pub const RATIO_GRID_NODES_2D: usize = 96;
/// Largest admissible condition number of a psi covariance.
pub const MAX_CONDITION: f64 = 1e12;
/// Asymmetry tolerated by [`check_loewner`].
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Largest parameter or observation dimension of the catalog.
pub const MAX_DIM: usize = 2;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `y = H θ + n`, `θ ~ N(0, P)`, `n ~ N(0, R)`, target `g(θ) = G θ`.
#[derive(Debug, Clone)]
pub struct VectorModel {
    h: DMatrix<f64>,
    prior_cov: DMatrix<f64>,
    noise_cov: DMatrix<f64>,
    g: DMatrix<f64>,
    ln_prior_norm: f64,
    ln_noise_norm: f64,
    post_cov: DMatrix<f64>,
    gain: DMatrix<f64>,
    fast: Fast,
}

/// Vector of at most `MAX_DIM` entries; unused trailing entries are zero.
type V = [f64; MAX_DIM];

/// Dense matrix of at most `MAX_DIM x MAX_DIM`, kept on the stack for the
/// quadrature loops.
#[derive(Debug, Clone, Copy)]
struct Small {
    rows: usize,
    cols: usize,
    a: [[f64; MAX_DIM]; MAX_DIM],
}

impl Small {
    fn from(m: &DMatrix<f64>) -> Self {
        let mut a = [[0.0; MAX_DIM]; MAX_DIM];
        for (i, row) in a.iter_mut().enumerate().take(m.nrows()) {
            for (j, v) in row.iter_mut().enumerate().take(m.ncols()) {
                *v = m[(i, j)];
            }
        }
        Small {
            rows: m.nrows(),
            cols: m.ncols(),
            a,
        }
    }

    fn mul(&self, x: &V) -> V {
        let mut out = [0.0; MAX_DIM];
        for (o, row) in out.iter_mut().zip(&self.a).take(self.rows) {
            for (r, xv) in row.iter().zip(x).take(self.cols) {
                *o += r * xv;
            }
        }
        out
    }

    fn quad(&self, x: &V) -> f64 {
        let y = self.mul(x);
        y.iter().zip(x).take(self.rows).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, Copy)]
struct Fast {
    h: Small,
    g: Small,
    gain: Small,
    prior_prec: Small,
    noise_prec: Small,
    prior_chol: Small,
    noise_chol: Small,
    marginal_chol: Small,
    post_chol: Small,
}

fn vec_of(x: &[f64]) -> V {
    let mut v = [0.0; MAX_DIM];
    v[..x.len()].copy_from_slice(x);
    v
}

fn add(a: &V, b: &V) -> V {
    [a[0] + b[0], a[1] + b[1]]
}

fn cholesky(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::InvalidInput(format!("{what} must be square")));
    }
    if max_asymmetry(a) > SYMMETRY_TOL * a.amax().max(1.0) {
        return Err(Error::NotSpd(format!("{what} is not symmetric")));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotSpd(format!("{what} has non-finite entries")));
    }
    a.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::NotSpd(format!("{what} is not positive definite")))
}

fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    (a - a.transpose()).amax()
}

fn spd_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let linv = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .expect("nonsingular factor");
    linv.transpose() * linv
}

fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Builds the linear-Gaussian catalog model with identity target.
pub fn make_linear_gaussian_vector_model(
    h: DMatrix<f64>,
    prior_cov: DMatrix<f64>,
    noise_cov: DMatrix<f64>,
) -> Result<VectorModel> {
    let (m, p) = h.shape();
    if !(1..=MAX_DIM).contains(&p) || !(1..=MAX_DIM).contains(&m) {
        return Err(Error::InvalidInput(format!(
            "parameter and observation dimensions must lie in 1..={MAX_DIM}, got p = {p}, m = {m}"
        )));
    }
    if prior_cov.shape() != (p, p) {
        return Err(Error::InvalidInput(format!("prior_cov must be {p}x{p}")));
    }
    if noise_cov.shape() != (m, m) {
        return Err(Error::InvalidInput(format!("noise_cov must be {m}x{m}")));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("observation matrix has non-finite entries".into()));
    }
    let prior_chol = cholesky(&prior_cov, "prior_cov")?;
    let noise_chol = cholesky(&noise_cov, "noise_cov")?;
    let prior_prec = spd_inverse(&prior_chol);
    let noise_prec = spd_inverse(&noise_chol);
    let marginal = symmetrize(&(&h * &prior_cov * h.transpose() + &noise_cov));
    let marginal_chol = cholesky(&marginal, "marginal covariance")?;
    let post_prec = symmetrize(&(&prior_prec + h.transpose() * &noise_prec * &h));
    let post_cov = symmetrize(&spd_inverse(&cholesky(&post_prec, "posterior precision")?));
    let post_chol = cholesky(&post_cov, "posterior covariance")?;
    let gain = &post_cov * h.transpose() * &noise_prec;
    let log_det = |l: &DMatrix<f64>| 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let g = DMatrix::identity(p, p);
    let fast = Fast {
        h: Small::from(&h),
        g: Small::from(&g),
        gain: Small::from(&gain),
        prior_prec: Small::from(&prior_prec),
        noise_prec: Small::from(&noise_prec),
        prior_chol: Small::from(&prior_chol),
        noise_chol: Small::from(&noise_chol),
        marginal_chol: Small::from(&marginal_chol),
        post_chol: Small::from(&post_chol),
    };
    Ok(VectorModel {
        fast,
        ln_prior_norm: -0.5 * (p as f64 * LN_2PI + log_det(&prior_chol)),
        ln_noise_norm: -0.5 * (m as f64 * LN_2PI + log_det(&noise_chol)),
        g,
        h,
        prior_cov,
        noise_cov,
        post_cov,
        gain,
    })
}

impl VectorModel {
    /// Replaces the target by `g(θ) = G θ`; `G` must be `q x p` with `q <= 2`.
    pub fn with_target(mut self, g: DMatrix<f64>) -> Result<Self> {
        if g.ncols() != self.parameter_dim() || !(1..=MAX_DIM).contains(&g.nrows()) {
            return Err(Error::InvalidInput(format!(
                "target matrix must have {} columns and 1..={MAX_DIM} rows",
                self.parameter_dim()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("target matrix has non-finite entries".into()));
        }
        self.fast.g = Small::from(&g);
        self.g = g;
        Ok(self)
    }

    pub fn parameter_dim(&self) -> usize {
        self.h.ncols()
    }

    pub fn observation_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn target_dim(&self) -> usize {
        self.g.nrows()
    }

    pub fn observation_matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn prior_cov(&self) -> &DMatrix<f64> {
        &self.prior_cov
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    pub fn target_matrix(&self) -> &DMatrix<f64> {
        &self.g
    }

    /// Cov(θ | y), which does not depend on y.
    pub fn posterior_cov(&self) -> &DMatrix<f64> {
        &self.post_cov
    }

    /// Cov(g | y) = G Cov(θ | y) Gᵀ.
    pub fn posterior_cov_g(&self) -> DMatrix<f64> {
        symmetrize(&(&self.g * &self.post_cov * self.g.transpose()))
    }

    pub fn posterior_mean(&self, y: &[f64]) -> Vec<f64> {
        self.fast.gain.mul(&vec_of(y))[..self.parameter_dim()].to_vec()
    }

    pub fn posterior_mean_g(&self, y: &[f64]) -> Vec<f64> {
        let f = &self.fast;
        f.g.mul(&f.gain.mul(&vec_of(y)))[..self.target_dim()].to_vec()
    }

    pub fn target(&self, theta: &[f64]) -> Vec<f64> {
        self.fast.g.mul(&vec_of(theta))[..self.target_dim()].to_vec()
    }

    pub fn ln_prior(&self, theta: &[f64]) -> f64 {
        self.ln_prior_v(&vec_of(theta))
    }

    pub fn ln_likelihood(&self, y: &[f64], theta: &[f64]) -> f64 {
        self.ln_likelihood_v(&vec_of(y), &vec_of(theta))
    }

    pub fn ln_joint(&self, y: &[f64], theta: &[f64]) -> f64 {
        self.ln_prior(theta) + self.ln_likelihood(y, theta)
    }

    fn ln_prior_v(&self, theta: &V) -> f64 {
        self.ln_prior_norm - 0.5 * self.fast.prior_prec.quad(theta)
    }

    fn ln_likelihood_v(&self, y: &V, theta: &V) -> f64 {
        let hx = self.fast.h.mul(theta);
        let r = [y[0] - hx[0], y[1] - hx[1]];
        self.ln_noise_norm - 0.5 * self.fast.noise_prec.quad(&r)
    }
}

/// One scalar entry of a stacked vector test function.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiComponent {
    pub family: PsiFamily,
    pub shift: Vec<f64>,
    pub s: f64,
}

/// Vector test function.
#[derive(Debug, Clone, PartialEq)]
pub enum VectorPsi {
    /// One density-ratio entry per component, each with its own shift.
    Stacked(Vec<PsiComponent>),
    /// `g - E(g | y)`.
    Optimal,
    /// A fixed vector, whatever the arguments.
    Constant(Vec<f64>),
}

impl VectorPsi {
    pub fn stacked(components: Vec<PsiComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidInput("a stacked psi needs at least one component".into()));
        }
        for c in &components {
            if !matches!(c.family, PsiFamily::Ww | PsiFamily::Cond) {
                return Err(Error::InvalidInput(format!(
                    "stacked components must be ww or cond, got {}",
                    c.family.as_str()
                )));
            }
            if !(c.s > 0.0 && c.s <= 1.0) {
                return Err(Error::InvalidInput(format!("component s must lie in (0, 1], got {}", c.s)));
            }
            if c.shift.iter().any(|v| !v.is_finite()) || c.shift.iter().all(|&v| v == 0.0) {
                return Err(Error::InvalidInput("component shift must be finite and nonzero".into()));
            }
        }
        Ok(VectorPsi::Stacked(components))
    }

    pub fn dim(&self, model: &VectorModel) -> usize {
        match self {
            VectorPsi::Stacked(c) => c.len(),
            VectorPsi::Optimal => model.target_dim(),
            VectorPsi::Constant(v) => v.len(),
        }
    }

    fn validate(&self, model: &VectorModel) -> Result<()> {
        match self {
            VectorPsi::Stacked(c) => {
                VectorPsi::stacked(c.clone())?;
                if let Some(bad) = c.iter().find(|c| c.shift.len() != model.parameter_dim()) {
                    return Err(Error::InvalidInput(format!(
                        "component shift has length {}, parameter dimension is {}",
                        bad.shift.len(),
                        model.parameter_dim()
                    )));
                }
            }
            VectorPsi::Constant(v) if v.is_empty() => {
                return Err(Error::InvalidInput("constant psi must be nonempty".into()))
            }
            _ => {}
        }
        Ok(())
    }

    /// Writes psi at (y, θ) into `out`; `mean_g` is E(g | y).
    fn eval(&self, model: &VectorModel, y: &V, theta: &V, mean_g: &V, out: &mut [f64]) {
        match self {
            VectorPsi::Stacked(components) => {
                let base_prior = model.ln_prior_v(theta);
                let base_lik = model.ln_likelihood_v(y, theta);
                for (o, c) in out.iter_mut().zip(components) {
                    let d = vec_of(&c.shift);
                    let ln = |sign: f64| {
                        let t = [theta[0] + sign * d[0], theta[1] + sign * d[1]];
                        let lik = model.ln_likelihood_v(y, &t) - base_lik;
                        match c.family {
                            PsiFamily::Ww => lik + model.ln_prior_v(&t) - base_prior,
                            _ => lik,
                        }
                    };
                    let up = (c.s * ln(1.0)).exp();
                    let down = if c.s == 1.0 { 1.0 } else { ((1.0 - c.s) * ln(-1.0)).exp() };
                    *o = up - down;
                }
            }
            VectorPsi::Optimal => {
                let g = model.fast.g.mul(theta);
                for (k, o) in out.iter_mut().enumerate() {
                    *o = g[k] - mean_g[k];
                }
            }
            VectorPsi::Constant(v) => out.copy_from_slice(v),
        }
    }
}

/// Which matrix inequality to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub enum MatrixFlavor {
    Global,
    Conditional(Vec<f64>),
    AvgConditional,
    AvgTheta,
}

impl MatrixFlavor {
    pub fn as_str(&self) -> &'static str {
        match self {
            MatrixFlavor::Global => "global",
            MatrixFlavor::Conditional(_) => "conditional",
            MatrixFlavor::AvgConditional => "avg_conditional",
            MatrixFlavor::AvgTheta => "avg_theta",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixStatus {
    Ok,
    SingularPsiCov,
    NonPsdInput,
}

impl MatrixStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            MatrixStatus::Ok => "ok",
            MatrixStatus::SingularPsiCov => "singular_psi_cov",
            MatrixStatus::NonPsdInput => "non_psd_input",
        }
    }
}

/// A matrix bound. `bound_matrix` is zero unless `status` is ok. For averaged
/// flavors `cross_matrix` and `psi_cov` are the averages of the inner ones.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixBoundResult {
    pub bound_matrix: DMatrix<f64>,
    pub cross_matrix: DMatrix<f64>,
    pub psi_cov: DMatrix<f64>,
    pub flavor: MatrixFlavor,
    pub status: MatrixStatus,
}

impl MatrixBoundResult {
    pub fn is_ok(&self) -> bool {
        self.status == MatrixStatus::Ok
    }
}

/// Tensor Gauss-Hermite grid for a standard normal vector of dimension `d`.
fn hermite_grid(n: usize, d: usize) -> Vec<(V, f64)> {
    let rule = gauss_hermite(n);
    let mut grid = vec![([0.0; MAX_DIM], 1.0)];
    for k in 0..d {
        grid = grid
            .into_iter()
            .flat_map(|(z, w)| {
                rule.nodes.iter().zip(&rule.weights).map(move |(x, v)| {
                    let mut z = z;
                    z[k] = *x;
                    (z, w * v)
                })
            })
            .collect();
    }
    grid
}

/// Tensor Gauss-Legendre grid on `[-half, half]^d`, weighted by the standard
/// normal density.
fn normal_legendre_grid(n: usize, d: usize, half: f64) -> Vec<(V, f64)> {
    let rule = gauss_legendre(n);
    let axis: Vec<(f64, f64)> = rule
        .nodes
        .iter()
        .zip(&rule.weights)
        .map(|(x, w)| {
            let z = half * x;
            (z, half * w * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt())
        })
        .collect();
    let mut grid = vec![([0.0; MAX_DIM], 1.0)];
    for k in 0..d {
        grid = grid
            .into_iter()
            .flat_map(|(z, w)| {
                axis.iter().map(move |&(x, v)| {
                    let mut z = z;
                    z[k] = x;
                    (z, w * v)
                })
            })
            .collect();
    }
    grid
}

/// Outer grid for averages of per-node ratios.
fn ratio_grid(cfg: &IntegrationConfig, d: usize) -> Vec<(V, f64)> {
    let n = if d == 1 {
        cfg.nodes_per_axis
    } else {
        cfg.nodes_per_axis.min(RATIO_GRID_NODES_2D)
    };
    normal_legendre_grid(n, d, cfg.tail_sigmas)
}

fn nodes_for(cfg: &IntegrationConfig) -> Result<usize> {
    cfg.validate()?;
    Ok(cfg.nodes_per_axis.min(MATRIX_NODES))
}

/// Second-order accumulator: `E ψ`, `E ψψᵀ`, `E εψᵀ`, with ε = g - E(g|y).
struct Moments {
    q: usize,
    r: usize,
    mean: Vec<CompensatedSum>,
    outer: Vec<CompensatedSum>,
    cross: Vec<CompensatedSum>,
    mass: CompensatedSum,
}

impl Moments {
    fn new(q: usize, r: usize) -> Self {
        Moments {
            q,
            r,
            mean: vec![CompensatedSum::default(); r],
            outer: vec![CompensatedSum::default(); r * r],
            cross: vec![CompensatedSum::default(); q * r],
            mass: CompensatedSum::default(),
        }
    }

    fn add(&mut self, w: f64, psi: &[f64], err: &[f64]) -> Result<()> {
        if psi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vector psi".into()));
        }
        for i in 0..self.r {
            self.mean[i].add(w * psi[i]);
            for j in 0..self.r {
                self.outer[i * self.r + j].add(w * psi[i] * psi[j]);
            }
        }
        for a in 0..self.q {
            for j in 0..self.r {
                self.cross[a * self.r + j].add(w * err[a] * psi[j]);
            }
        }
        self.mass.add(w);
        Ok(())
    }

    fn finish(&self) -> Stats {
        let m = self.mass.value();
        let v = |s: &[CompensatedSum]| s.iter().map(|c| c.value() / m).collect::<Vec<_>>();
        Stats {
            mean: DVector::from_vec(v(&self.mean)),
            outer: DMatrix::from_row_slice(self.r, self.r, &v(&self.outer)),
            cross: DMatrix::from_row_slice(self.q, self.r, &v(&self.cross)),
        }
    }
}

struct Stats {
    mean: DVector<f64>,
    outer: DMatrix<f64>,
    cross: DMatrix<f64>,
}

impl Stats {
    fn cov(&self) -> DMatrix<f64> {
        symmetrize(&(&self.outer - &self.mean * self.mean.transpose()))
    }
}

/// `C V⁻¹ Cᵀ` through a Cholesky factor of `V`, guarded by its condition number.
fn quadratic_bound(cross: &DMatrix<f64>, v: &DMatrix<f64>, scale: f64) -> std::result::Result<DMatrix<f64>, MatrixStatus> {
    let v = symmetrize(v);
    let eig = SymmetricEigen::new(v.clone()).eigenvalues;
    let max = eig.max();
    let min = eig.min();
    if !(max > 1e-14 * scale.max(1.0)) {
        return Err(MatrixStatus::SingularPsiCov);
    }
    if min < -SYMMETRY_TOL * max {
        return Err(MatrixStatus::NonPsdInput);
    }
    if !(min * MAX_CONDITION > max) {
        return Err(MatrixStatus::SingularPsiCov);
    }
    let l = v.cholesky().ok_or(MatrixStatus::SingularPsiCov)?.l();
    let x = l
        .solve_lower_triangular(&cross.transpose())
        .ok_or(MatrixStatus::SingularPsiCov)?;
    Ok(symmetrize(&(x.transpose() * x)))
}

/// Moments given the observation, integrating θ | y.
fn outer_inner_moments(model: &VectorModel, psi: &VectorPsi, y: &V, inner: &[(V, f64)]) -> Result<Stats> {
    let (q, r) = (model.target_dim(), psi.dim(model));
    let f = &model.fast;
    let mean_theta = f.gain.mul(y);
    let mean_g = f.g.mul(&mean_theta);
    let mut acc = Moments::new(q, r);
    let mut out = vec![0.0; r];
    for (z, w) in inner {
        let theta = add(&f.post_chol.mul(z), &mean_theta);
        psi.eval(model, y, &theta, &mean_g, &mut out);
        let g = f.g.mul(&theta);
        acc.add(*w, &out, &[g[0] - mean_g[0], g[1] - mean_g[1]])?;
    }
    Ok(acc.finish())
}

/// Moments given the parameter, integrating y | θ.
fn theta_moments(model: &VectorModel, psi: &VectorPsi, theta: &V, inner: &[(V, f64)]) -> Result<Stats> {
    let (q, r) = (model.target_dim(), psi.dim(model));
    let f = &model.fast;
    let hx = f.h.mul(theta);
    let g = f.g.mul(theta);
    let mut acc = Moments::new(q, r);
    let mut out = vec![0.0; r];
    for (z, w) in inner {
        let y = add(&f.noise_chol.mul(z), &hx);
        let mean_g = f.g.mul(&f.gain.mul(&y));
        psi.eval(model, &y, theta, &mean_g, &mut out);
        acc.add(*w, &out, &[g[0] - mean_g[0], g[1] - mean_g[1]])?;
    }
    Ok(acc.finish())
}

/// Weighted average of per-node matrices, summed pairwise entry by entry.
fn average(mats: &[(f64, &DMatrix<f64>)]) -> DMatrix<f64> {
    let (rows, cols) = mats[0].1.shape();
    let total = pairwise_sum(&mats.iter().map(|(w, _)| *w).collect::<Vec<_>>());
    DMatrix::from_fn(rows, cols, |i, j| {
        pairwise_sum(&mats.iter().map(|(w, m)| w * m[(i, j)]).collect::<Vec<_>>()) / total
    })
}

/// Evaluates the matrix bound of the requested flavor.
pub fn mat_bound(
    model: &VectorModel,
    psi: &VectorPsi,
    flavor: &MatrixFlavor,
    cfg: &IntegrationConfig,
) -> Result<MatrixBoundResult> {
    psi.validate(model)?;
    let n = nodes_for(cfg)?;
    let (p, m, q, r) = (
        model.parameter_dim(),
        model.observation_dim(),
        model.target_dim(),
        psi.dim(model),
    );
    let finish = |cross: DMatrix<f64>, cov: DMatrix<f64>, bound: std::result::Result<DMatrix<f64>, MatrixStatus>| {
        let (bound_matrix, status) = match bound {
            Ok(b) => (b, MatrixStatus::Ok),
            Err(s) => (DMatrix::zeros(q, q), s),
        };
        MatrixBoundResult {
            bound_matrix,
            cross_matrix: cross,
            psi_cov: cov,
            flavor: flavor.clone(),
            status,
        }
    };
    match flavor {
        MatrixFlavor::Conditional(y) => {
            if y.len() != m || y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("conditioning y must be a finite vector of length {m}")));
            }
            let st = outer_inner_moments(model, psi, &vec_of(y), &hermite_grid(n, p))?;
            let cov = st.cov();
            let bound = quadratic_bound(&st.cross, &cov, st.outer.trace());
            Ok(finish(st.cross, cov, bound))
        }
        MatrixFlavor::Global | MatrixFlavor::AvgConditional => {
            let outer = if matches!(flavor, MatrixFlavor::Global) {
                hermite_grid(n, m)
            } else {
                ratio_grid(cfg, m)
            };
            let inner = hermite_grid(n, p);
            let per_y: Vec<(f64, Stats)> = outer
                .par_iter()
                .map(|(z, w)| {
                    let y = model.fast.marginal_chol.mul(z);
                    Ok((*w, outer_inner_moments(model, psi, &y, &inner)?))
                })
                .collect::<Result<_>>()?;
            if matches!(flavor, MatrixFlavor::Global) {
                let pick = |f: &dyn Fn(&Stats) -> DMatrix<f64>| {
                    let mats: Vec<(f64, DMatrix<f64>)> = per_y.iter().map(|(w, s)| (*w, f(s))).collect();
                    average(&mats.iter().map(|(w, m)| (*w, m)).collect::<Vec<_>>())
                };
                let mean = pick(&|s| DMatrix::from_column_slice(r, 1, s.mean.as_slice()));
                let outer_m = pick(&|s| s.outer.clone());
                let cross = pick(&|s| s.cross.clone());
                let cov = symmetrize(&(&outer_m - &mean * mean.transpose()));
                let bound = quadratic_bound(&cross, &cov, outer_m.trace());
                Ok(finish(cross, cov, bound))
            } else {
                averaged(per_y, q, finish, |s| (s.cov(), s.outer.trace()))
            }
        }
        MatrixFlavor::AvgTheta => {
            let outer = ratio_grid(cfg, p);
            let inner = hermite_grid(n, m);
            let per_theta: Vec<(f64, Stats)> = outer
                .par_iter()
                .map(|(z, w)| {
                    let theta = model.fast.prior_chol.mul(z);
                    Ok((*w, theta_moments(model, psi, &theta, &inner)?))
                })
                .collect::<Result<_>>()?;
            // parameter-conditioned flavor: second moment, not covariance
            averaged(per_theta, q, finish, |s| (symmetrize(&s.outer), s.outer.trace()))
        }
    }
}

fn averaged(
    nodes: Vec<(f64, Stats)>,
    q: usize,
    finish: impl Fn(DMatrix<f64>, DMatrix<f64>, std::result::Result<DMatrix<f64>, MatrixStatus>) -> MatrixBoundResult,
    denominator: impl Fn(&Stats) -> (DMatrix<f64>, f64),
) -> Result<MatrixBoundResult> {
    let total = pairwise_sum(&nodes.iter().map(|(w, _)| *w).collect::<Vec<_>>());
    let mut bounds = Vec::with_capacity(nodes.len());
    let mut dens = Vec::with_capacity(nodes.len());
    let mut failure = None;
    for (w, st) in &nodes {
        let (den, scale) = denominator(st);
        match quadratic_bound(&st.cross, &den, scale) {
            Ok(b) => bounds.push((*w, b)),
            Err(s) if *w / total > 1e-12 => {
                failure.get_or_insert(s);
            }
            Err(_) => bounds.push((*w, DMatrix::zeros(q, q))),
        }
        dens.push((*w, den));
    }
    let cross = average(&nodes.iter().map(|(w, s)| (*w, &s.cross)).collect::<Vec<_>>());
    let den = average(&dens.iter().map(|(w, d)| (*w, d)).collect::<Vec<_>>());
    let bound = match failure {
        Some(s) => Err(s),
        None => Ok(symmetrize(&average(&bounds.iter().map(|(w, b)| (*w, b)).collect::<Vec<_>>()))),
    };
    Ok(finish(cross, den, bound))
}

/// Vector estimator `δ(y)`.
#[derive(Clone)]
pub struct VectorEstimator {
    pub label: String,
    rule: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
}

impl std::fmt::Debug for VectorEstimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "VectorEstimator({})", self.label)
    }
}

impl VectorEstimator {
    pub fn new(label: impl Into<String>, rule: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        VectorEstimator {
            label: label.into(),
            rule: Arc::new(rule),
        }
    }

    /// E(g | y) of `model`.
    pub fn posterior_mean(model: &VectorModel) -> Self {
        let gk = Small::from(&(&model.g * &model.gain));
        VectorEstimator::new("posterior_mean", move |y| gk.mul(&vec_of(y))[..gk.rows].to_vec())
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        (self.rule)(y)
    }
}

/// `E[(g - δ)(g - δ)ᵀ]`.
pub fn mse_matrix_exact(model: &VectorModel, delta: &VectorEstimator, cfg: &IntegrationConfig) -> Result<DMatrix<f64>> {
    let n = nodes_for(cfg)?;
    let (p, m, q) = (model.parameter_dim(), model.observation_dim(), model.target_dim());
    let outer = hermite_grid(n, m);
    let inner = hermite_grid(n, p);
    let per_y: Vec<(f64, DMatrix<f64>)> = outer
        .par_iter()
        .map(|(z, w)| {
            let y = model.fast.marginal_chol.mul(z);
            let d = delta.apply(&y[..m]);
            if d.len() != q || d.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "estimator {} must return {q} finite values",
                    delta.label
                )));
            }
            let f = &model.fast;
            let mean_theta = f.gain.mul(&y);
            let mut acc = vec![CompensatedSum::default(); q * q];
            for (wz, v) in &inner {
                let g = f.g.mul(&add(&f.post_chol.mul(wz), &mean_theta));
                let e: Vec<f64> = g.iter().zip(&d).map(|(a, b)| a - b).collect();
                for i in 0..q {
                    for j in 0..q {
                        acc[i * q + j].add(v * e[i] * e[j]);
                    }
                }
            }
            let vals: Vec<f64> = acc.iter().map(|c| c.value()).collect();
            Ok((*w, DMatrix::from_row_slice(q, q, &vals)))
        })
        .collect::<Result<_>>()?;
    Ok(symmetrize(&average(&per_y.iter().map(|(w, m)| (*w, m)).collect::<Vec<_>>())))
}

/// Outcome of a Loewner comparison `A ≥ B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoewnerCheck {
    pub holds: bool,
    pub min_eigenvalue: f64,
}

/// `A ≥ B` iff the smallest eigenvalue of `A - B` is at least `-tol`.
pub fn check_loewner(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> Result<LoewnerCheck> {
    if a.shape() != b.shape() || !a.is_square() || a.is_empty() {
        return Err(Error::InvalidInput(format!(
            "check_loewner needs square matrices of equal size, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    for m in [a, b] {
        let asym = max_asymmetry(m);
        if !(asym <= SYMMETRY_TOL) {
            return Err(Error::NotSymmetric(asym));
        }
    }
    let min_eigenvalue = SymmetricEigen::new(symmetrize(&(a - b))).eigenvalues.min();
    Ok(LoewnerCheck {
        holds: min_eigenvalue >= -tol,
        min_eigenvalue,
    })
}

/// `q,r` header, a dimension row, then the entries row by row.
pub fn matrix_to_csv(m: &DMatrix<f64>, digits: usize) -> String {
    let mut out = format!("q,r\n{},{}\n", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| fmt_sig(m[(i, j)], digits)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn matrix_from_csv(text: &str) -> Result<DMatrix<f64>> {
    let bad = |why: &str| Error::InvalidInput(format!("matrix csv: {why}"));
    let mut lines = text.lines();
    if lines.next() != Some("q,r") {
        return Err(bad("missing q,r header"));
    }
    let dims: Vec<usize> = lines
        .next()
        .ok_or_else(|| bad("missing dimensions"))?
        .split(',')
        .map(|s| s.parse().map_err(|_| bad("bad dimension")))
        .collect::<Result<_>>()?;
    let [rows, cols] = dims[..] else {
        return Err(bad("expected two dimensions"));
    };
    let mut vals = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let line = lines.next().ok_or_else(|| bad("too few rows"))?;
        let row: Vec<f64> = line
            .split(',')
            .map(|s| s.parse().map_err(|_| bad("bad entry")))
            .collect::<Result<_>>()?;
        if row.len() != cols {
            return Err(bad("ragged row"));
        }
        vals.extend(row);
    }
    Ok(DMatrix::from_row_slice(rows, cols, &vals))
}
