//! Expectations over a [`ScalarModel`]: iterated Gauss-Legendre on truncated
//! boxes for continuous axes, exact summation for finite ones, and a seeded
//! Monte Carlo estimator used as an independent cross-check.
//!
//! Outer loops may run on several rayon workers. Per-node results are
//! collected in node order and reduced with pairwise summation, so every
//! result is bit-identical for any worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Domain, ScalarModel};
use crate::quadrature::{gauss_legendre, pairwise_sum, CompensatedSum};

/// Quadrature and sampling settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegrationConfig {
    pub nodes_per_axis: usize,
    pub tail_sigmas: f64,
    /// 0 disables Monte Carlo cross-checks.
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        IntegrationConfig {
            nodes_per_axis: 257,
            tail_sigmas: 8.0,
            mc_samples: 0,
            seed: 0,
        }
    }
}

impl IntegrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes_per_axis < 33 {
            return Err(Error::InvalidInput(format!(
                "nodes_per_axis must be at least 33, got {}",
                self.nodes_per_axis
            )));
        }
        if !(self.tail_sigmas >= 4.0 && self.tail_sigmas.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "tail_sigmas must be at least 4, got {}",
                self.tail_sigmas
            )));
        }
        Ok(())
    }

    pub fn with_nodes(mut self, nodes: usize) -> Self {
        self.nodes_per_axis = nodes;
        self
    }
}

/// Structural hints about an integrand.
///
/// `shifts` are the parameter offsets at which shifted densities appear
/// (`p(y, theta + h)` contributes `h`). Truncated boxes are widened by twice
/// the largest offset and bounded supports are split at the shifted edges.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Hints {
    pub shifts: Vec<f64>,
}

impl Hints {
    pub fn none() -> Self {
        Hints::default()
    }

    pub fn shifts(shifts: Vec<f64>) -> Self {
        Hints { shifts }
    }

    fn widen(&self) -> f64 {
        2.0 * self.shifts.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }
}

/// A weighted quadrature node.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Node {
    pub x: f64,
    pub w: f64,
}

fn domain_nodes(domain: &Domain, n: usize) -> Vec<Node> {
    match domain {
        Domain::Points(xs) => xs.iter().map(|&x| Node { x, w: 1.0 }).collect(),
        Domain::Pieces(pieces) => {
            let rule = gauss_legendre(n);
            let mut out = Vec::with_capacity(n * pieces.len());
            for &(a, b) in pieces {
                out.extend(rule.mapped(a, b).map(|(x, w)| Node { x, w }));
            }
            out
        }
    }
}

/// Parameter nodes weighted by quadrature weight times prior.
pub(crate) fn prior_nodes(model: &ScalarModel, cfg: &IntegrationConfig, hints: &Hints) -> Vec<Node> {
    let dom = model.prior_domain(cfg.tail_sigmas, hints.widen());
    let mut nodes = domain_nodes(&dom, cfg.nodes_per_axis);
    for n in &mut nodes {
        n.w *= model.prior(n.x);
    }
    nodes
}

/// Observation nodes weighted by quadrature weight times p(t | theta).
pub(crate) fn likelihood_nodes(
    model: &ScalarModel,
    theta: f64,
    cfg: &IntegrationConfig,
    hints: &Hints,
) -> Vec<Node> {
    let dom = model.likelihood_domain(theta, cfg.tail_sigmas, hints.widen(), &hints.shifts);
    let mut nodes = domain_nodes(&dom, cfg.nodes_per_axis);
    for n in &mut nodes {
        n.w *= model.likelihood(n.x, theta);
    }
    nodes
}

/// Observation nodes of the marginal box, quadrature weights only.
pub(crate) fn marginal_nodes(model: &ScalarModel, cfg: &IntegrationConfig, hints: &Hints) -> Vec<Node> {
    let dom = model.marginal_domain(cfg.tail_sigmas, hints.widen());
    domain_nodes(&dom, cfg.nodes_per_axis)
}

/// Parameter nodes at fixed t weighted by quadrature weight times p(t, theta)
/// (unnormalized posterior; the weights sum to the evidence).
pub(crate) fn posterior_nodes(
    model: &ScalarModel,
    y: f64,
    cfg: &IntegrationConfig,
    hints: &Hints,
) -> Vec<Node> {
    let dom = model.posterior_domain(y, cfg.tail_sigmas, hints.widen(), &hints.shifts);
    let mut nodes = domain_nodes(&dom, cfg.nodes_per_axis);
    for n in &mut nodes {
        n.w *= model.joint(y, n.x);
    }
    nodes
}

/// Below this evidence a posterior is considered undefined.
pub const EVIDENCE_FLOOR: f64 = 1e-300;

/// Weighted sums `(sum w f_k, sum w)` over nodes.
pub(crate) fn moments<const K: usize>(
    nodes: &[Node],
    mut f: impl FnMut(f64) -> [f64; K],
    what: &str,
) -> Result<([f64; K], f64)> {
    let mut acc = [CompensatedSum::default(); K];
    let mut total = CompensatedSum::default();
    for n in nodes {
        let v = f(n.x);
        for (a, &vk) in acc.iter_mut().zip(&v) {
            if !vk.is_finite() {
                return Err(Error::NonFinite(format!("{what} at x = {}", n.x)));
            }
            a.add(n.w * vk);
        }
        total.add(n.w);
    }
    Ok((acc.map(|a| a.value()), total.value()))
}

pub(crate) fn evidence_of(nodes: &[Node]) -> f64 {
    let mut s = CompensatedSum::default();
    for n in nodes {
        s.add(n.w);
    }
    s.value()
}

/// Ordered parallel map.
pub(crate) fn par_map<X: Sync, T: Send>(
    items: &[X],
    f: impl Fn(&X) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    items.par_iter().map(f).collect()
}

/// Runs `inner(y, posterior_nodes)` for every marginal node; returns the outer
/// quadrature weight with each result.
pub(crate) fn over_marginal<T: Send>(
    model: &ScalarModel,
    cfg: &IntegrationConfig,
    hints: &Hints,
    inner: impl Fn(f64, &[Node]) -> Result<T> + Sync + Send,
) -> Result<Vec<(f64, T)>> {
    cfg.validate()?;
    let ys = marginal_nodes(model, cfg, hints);
    par_map(&ys, |yn| {
        let post = posterior_nodes(model, yn.x, cfg, hints);
        Ok((yn.w, inner(yn.x, &post)?))
    })
}

/// Runs `inner(theta, likelihood_nodes)` for every prior node; returns the
/// prior-weighted quadrature weight with each result.
pub(crate) fn over_prior<T: Send>(
    model: &ScalarModel,
    cfg: &IntegrationConfig,
    hints: &Hints,
    inner: impl Fn(f64, &[Node]) -> Result<T> + Sync + Send,
) -> Result<Vec<(f64, T)>> {
    cfg.validate()?;
    let thetas = prior_nodes(model, cfg, hints);
    par_map(&thetas, |tn| {
        if tn.w == 0.0 {
            // prior mass zero: nothing to integrate
            return Ok((0.0, inner(tn.x, &[])?));
        }
        let lik = likelihood_nodes(model, tn.x, cfg, hints);
        Ok((tn.w, inner(tn.x, &lik)?))
    })
}

/// E[(f_1..f_K)(t, theta)] over the joint, with f also receiving the
/// posterior mean at t.
pub(crate) fn joint_moments_with_mean<const K: usize>(
    model: &ScalarModel,
    cfg: &IntegrationConfig,
    hints: &Hints,
    f: impl Fn(f64, f64, f64) -> [f64; K] + Sync + Send,
) -> Result<[f64; K]> {
    let rows = over_marginal(model, cfg, hints, |y, post| {
        if evidence_of(post) < EVIDENCE_FLOOR {
            // negligible marginal weight; the posterior mean is undefined here
            return Ok(([0.0; K], 0.0));
        }
        let mean = posterior_mean_from_nodes(model, y, post)?;
        moments(post, |theta| f(y, theta, mean), "joint integrand")
    })?;
    reduce_joint(&rows)
}

fn reduce_joint<const K: usize>(rows: &[(f64, ([f64; K], f64))]) -> Result<[f64; K]> {
    let mass = pairwise_sum(&rows.iter().map(|(w, (_, m))| w * m).collect::<Vec<_>>());
    if !(mass > 0.0) {
        return Err(Error::NonFinite("joint mass is zero".into()));
    }
    let mut out = [0.0; K];
    for (k, o) in out.iter_mut().enumerate() {
        let terms: Vec<f64> = rows.iter().map(|(w, (s, _))| w * s[k]).collect();
        *o = pairwise_sum(&terms) / mass;
    }
    Ok(out)
}

/// E[f(y, theta)] over the joint distribution.
pub fn expect_joint(
    model: &ScalarModel,
    f: impl Fn(f64, f64) -> f64 + Sync + Send,
    cfg: &IntegrationConfig,
) -> Result<f64> {
    expect_joint_with(model, f, cfg, &Hints::none())
}

/// [`expect_joint`] with structural hints about the integrand.
pub fn expect_joint_with(
    model: &ScalarModel,
    f: impl Fn(f64, f64) -> f64 + Sync + Send,
    cfg: &IntegrationConfig,
    hints: &Hints,
) -> Result<f64> {
    let rows = over_marginal(model, cfg, hints, |y, post| {
        moments(post, |theta| [f(y, theta)], "joint integrand")
    })?;
    Ok(reduce_joint(&rows)?[0])
}

fn check_parameter(model: &ScalarModel, theta: f64) -> Result<()> {
    if !theta.is_finite() || !model.parameter_space().contains(theta) {
        return Err(Error::Domain(format!("theta = {theta} outside the parameter space")));
    }
    Ok(())
}

fn check_observation(model: &ScalarModel, y: f64) -> Result<()> {
    if !y.is_finite() || !model.observation_space().contains(y) {
        return Err(Error::Domain(format!("y = {y} outside the observation space")));
    }
    Ok(())
}

/// E[f(y) | theta].
pub fn expect_given_theta(
    model: &ScalarModel,
    f: impl Fn(f64) -> f64,
    theta: f64,
    cfg: &IntegrationConfig,
) -> Result<f64> {
    expect_given_theta_with(model, f, theta, cfg, &Hints::none())
}

pub fn expect_given_theta_with(
    model: &ScalarModel,
    f: impl Fn(f64) -> f64,
    theta: f64,
    cfg: &IntegrationConfig,
    hints: &Hints,
) -> Result<f64> {
    cfg.validate()?;
    check_parameter(model, theta)?;
    let nodes = likelihood_nodes(model, theta, cfg, hints);
    let ([s], mass) = moments(&nodes, |y| [f(y)], "conditional integrand")?;
    Ok(s / mass)
}

/// E[f(theta) | y] under the posterior.
pub fn expect_given_y(
    model: &ScalarModel,
    f: impl Fn(f64) -> f64,
    y: f64,
    cfg: &IntegrationConfig,
) -> Result<f64> {
    expect_given_y_with(model, f, y, cfg, &Hints::none())
}

pub fn expect_given_y_with(
    model: &ScalarModel,
    f: impl Fn(f64) -> f64,
    y: f64,
    cfg: &IntegrationConfig,
    hints: &Hints,
) -> Result<f64> {
    cfg.validate()?;
    check_observation(model, y)?;
    let nodes = posterior_nodes(model, y, cfg, hints);
    let ([s], evidence) = moments(&nodes, |theta| [f(theta)], "posterior integrand")?;
    if !(evidence >= EVIDENCE_FLOOR) {
        return Err(Error::ZeroEvidence { y });
    }
    Ok(s / evidence)
}

/// E(theta | y): the closed form when the model has one, else quadrature.
pub fn posterior_mean(model: &ScalarModel, y: f64, cfg: &IntegrationConfig) -> Result<f64> {
    if let Some(m) = model.analytic_posterior_mean(y) {
        check_observation(model, y)?;
        return Ok(m);
    }
    expect_given_y(model, |theta| theta, y, cfg)
}

/// Posterior mean using already computed posterior nodes.
pub(crate) fn posterior_mean_from_nodes(model: &ScalarModel, y: f64, post: &[Node]) -> Result<f64> {
    if let Some(m) = model.analytic_posterior_mean(y) {
        return Ok(m);
    }
    let ([s], evidence) = moments(post, |theta| [theta], "posterior mean")?;
    if !(evidence >= EVIDENCE_FLOOR) {
        return Err(Error::ZeroEvidence { y });
    }
    Ok(s / evidence)
}

/// Posterior variance at y, computed by quadrature.
pub fn posterior_variance(model: &ScalarModel, y: f64, cfg: &IntegrationConfig) -> Result<f64> {
    let mean = posterior_mean(model, y, cfg)?;
    expect_given_y(model, |theta| (theta - mean) * (theta - mean), y, cfg)
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
}

const MC_CHUNK: usize = 1 << 16;
const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Sub-seed for parallel task `index`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    seed ^ index.wrapping_mul(GOLDEN_GAMMA)
}

/// Sample-mean estimate of E[f(y, theta)] by ancestral sampling.
///
/// Samples are drawn in fixed-size chunks with derived seeds, so the output
/// depends only on `(samples, seed)`.
pub fn mc_expect_joint(
    model: &ScalarModel,
    f: impl Fn(f64, f64) -> f64 + Sync + Send,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if samples < 1000 {
        return Err(Error::InvalidInput(format!(
            "Monte Carlo needs at least 1000 samples, got {samples}"
        )));
    }
    let chunks: Vec<(u64, usize)> = (0..samples.div_ceil(MC_CHUNK))
        .map(|i| (i as u64, MC_CHUNK.min(samples - i * MC_CHUNK)))
        .collect();
    // (count, mean, m2) per chunk, Welford within the chunk
    let parts = par_map(&chunks, |&(index, count)| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, index));
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for k in 0..count {
            let (y, theta) = model.sample(&mut rng);
            let v = f(y, theta);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "Monte Carlo integrand at y = {y}, theta = {theta}"
                )));
            }
            let d = v - mean;
            mean += d / (k + 1) as f64;
            m2 += d * (v - mean);
        }
        Ok((count as f64, mean, m2))
    })?;
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for (nb, mb, m2b) in parts {
        let tot = n + nb;
        let d = mb - mean;
        mean += d * nb / tot;
        m2 += m2b + d * d * n * nb / tot;
        n = tot;
    }
    let var = m2 / (n - 1.0);
    Ok(McEstimate {
        estimate: mean,
        std_error: (var / n).sqrt(),
        samples,
    })
}

/// Deviations of the prior and likelihood masses from one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationReport {
    pub prior_error: f64,
    pub max_likelihood_error: f64,
}

impl NormalizationReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.prior_error <= tol && self.max_likelihood_error <= tol
    }
}

/// Checks that the prior and the likelihood at 11 parameter probes integrate
/// (or sum) to one.
pub fn normalization_report(model: &ScalarModel, cfg: &IntegrationConfig) -> Result<NormalizationReport> {
    cfg.validate()?;
    let prior = prior_nodes(model, cfg, &Hints::none());
    let prior_mass: f64 = pairwise_sum(&prior.iter().map(|n| n.w).collect::<Vec<_>>());
    let probes: Vec<f64> = match model.parameter_space() {
        crate::model::Space::Finite(v) => v,
        crate::model::Space::Interval { .. } => {
            let half = 4.0 * model.marginal_sd();
            (0..11).map(|i| -half + i as f64 * half / 5.0).collect()
        }
    };
    let mut worst = 0.0f64;
    for theta in probes {
        let nodes = likelihood_nodes(model, theta, cfg, &Hints::none());
        let mass = pairwise_sum(&nodes.iter().map(|n| n.w).collect::<Vec<_>>());
        worst = worst.max((mass - 1.0).abs());
    }
    Ok(NormalizationReport {
        prior_error: (prior_mass - 1.0).abs(),
        max_likelihood_error: worst,
    })
}
