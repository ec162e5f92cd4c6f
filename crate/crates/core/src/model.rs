//! Scalar Bayesian models and the catalog used as ground truth.
//!
//! Every model works on a scalar *reduced* observation `t`. For the i.i.d.
//! Gaussian family `t` is the sample mean, which is sufficient: likelihood
//! ratios, posteriors and every expectation used by the bounds are unchanged
//! by the reduction. The full-vector densities remain available through
//! [`ScalarModel::conditional_density`] and [`ScalarModel::joint_density`].

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{self, IntegrationConfig};

/// Catalog entry describing a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// theta ~ Normal(0, var_prior); y_1..y_n i.i.d. Normal(theta, var_noise).
    GaussianGaussian {
        var_prior: f64,
        var_noise: f64,
        n_obs: usize,
    },
    /// theta uniform on {-1, +1}; y in {-1, +1} with P(y = theta | theta) = 1 - flip_prob.
    DiscreteChannel { flip_prob: f64 },
    /// theta ~ Normal(0, prior_var); y ~ Uniform(theta - width/2, theta + width/2).
    UniformLocation { prior_var: f64, width: f64 },
}

/// A subset of the real line.
#[derive(Debug, Clone, PartialEq)]
pub enum Space {
    Interval { lo: f64, hi: f64 },
    Finite(Vec<f64>),
}

impl Space {
    pub fn is_finite(&self) -> bool {
        matches!(self, Space::Finite(_))
    }

    pub fn contains(&self, x: f64) -> bool {
        match self {
            Space::Interval { lo, hi } => x >= *lo && x <= *hi,
            Space::Finite(v) => v.contains(&x),
        }
    }
}

/// Integration geometry of one axis: either a finite support or a union of
/// closed pieces on which the integrand is smooth.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Domain {
    Points(Vec<f64>),
    Pieces(Vec<(f64, f64)>),
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Gaussian {
        var_prior: f64,
        var_noise: f64,
        n: usize,
        /// variance of the sample mean given theta
        stat_var: f64,
        /// posterior mean = gain * t
        gain: f64,
        post_var: f64,
    },
    Discrete {
        flip: f64,
    },
    Uniform {
        prior_var: f64,
        width: f64,
    },
}

/// A Bayesian model with scalar parameter. Immutable after construction.
#[derive(Debug, Clone)]
pub struct ScalarModel {
    spec: ModelSpec,
    kind: Kind,
}

fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * d * d / var - 0.5 * (2.0 * PI * var).ln()
}

/// Builds a catalog model and verifies its normalization.
pub fn make_model(spec: ModelSpec) -> Result<ScalarModel> {
    let kind = match spec {
        ModelSpec::GaussianGaussian {
            var_prior,
            var_noise,
            n_obs,
        } => {
            if !(var_prior > 0.0 && var_prior.is_finite()) {
                return Err(Error::InvalidSpec(format!(
                    "var_prior must be positive, got {var_prior}"
                )));
            }
            if !(var_noise > 0.0 && var_noise.is_finite()) {
                return Err(Error::InvalidSpec(format!(
                    "var_noise must be positive, got {var_noise}"
                )));
            }
            if n_obs == 0 {
                return Err(Error::InvalidSpec("n_obs must be at least 1".into()));
            }
            let stat_var = var_noise / n_obs as f64;
            Kind::Gaussian {
                var_prior,
                var_noise,
                n: n_obs,
                stat_var,
                gain: var_prior / (var_prior + stat_var),
                post_var: var_prior * stat_var / (var_prior + stat_var),
            }
        }
        ModelSpec::DiscreteChannel { flip_prob } => {
            if !(flip_prob > 0.0 && flip_prob < 0.5) {
                return Err(Error::InvalidSpec(format!(
                    "flip_prob must lie in (0, 1/2), got {flip_prob}"
                )));
            }
            Kind::Discrete { flip: flip_prob }
        }
        ModelSpec::UniformLocation { prior_var, width } => {
            if !(prior_var > 0.0 && prior_var.is_finite()) {
                return Err(Error::InvalidSpec(format!(
                    "prior_var must be positive, got {prior_var}"
                )));
            }
            if !(width > 0.0 && width.is_finite()) {
                return Err(Error::InvalidSpec(format!(
                    "width must be positive, got {width}"
                )));
            }
            Kind::Uniform { prior_var, width }
        }
    };
    let model = ScalarModel { spec, kind };
    let report = integrate::normalization_report(&model, &IntegrationConfig::default())?;
    if !report.passes(NORMALIZATION_TOL) {
        return Err(Error::InvalidSpec(format!(
            "model fails normalization: prior error {:e}, likelihood error {:e}",
            report.prior_error, report.max_likelihood_error
        )));
    }
    Ok(model)
}

/// Tolerance on prior and likelihood normalization.
pub const NORMALIZATION_TOL: f64 = 1e-8;

impl ScalarModel {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn parameter_space(&self) -> Space {
        match self.kind {
            Kind::Discrete { .. } => Space::Finite(vec![-1.0, 1.0]),
            _ => Space::Interval {
                lo: f64::NEG_INFINITY,
                hi: f64::INFINITY,
            },
        }
    }

    /// Space of the reduced observation.
    pub fn observation_space(&self) -> Space {
        self.parameter_space()
    }

    /// Dimension of a full observation vector.
    pub fn obs_dim(&self) -> usize {
        match self.kind {
            Kind::Gaussian { n, .. } => n,
            _ => 1,
        }
    }

    pub fn theta_is_discrete(&self) -> bool {
        matches!(self.kind, Kind::Discrete { .. })
    }

    pub fn y_is_discrete(&self) -> bool {
        matches!(self.kind, Kind::Discrete { .. })
    }

    pub fn ln_prior(&self, theta: f64) -> f64 {
        match self.kind {
            Kind::Gaussian { var_prior, .. } => ln_normal(theta, 0.0, var_prior),
            Kind::Discrete { .. } => {
                if theta == 1.0 || theta == -1.0 {
                    0.5f64.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Kind::Uniform { prior_var, .. } => ln_normal(theta, 0.0, prior_var),
        }
    }

    /// Prior density (or mass) at theta.
    pub fn prior(&self, theta: f64) -> f64 {
        self.ln_prior(theta).exp()
    }

    /// Log density (or mass) of the reduced observation `t` given theta.
    pub fn ln_likelihood(&self, t: f64, theta: f64) -> f64 {
        match self.kind {
            Kind::Gaussian { stat_var, .. } => ln_normal(t, theta, stat_var),
            Kind::Discrete { flip } => {
                if !(theta == 1.0 || theta == -1.0) {
                    f64::NEG_INFINITY
                } else if t == theta {
                    (1.0 - flip).ln()
                } else if t == -theta {
                    flip.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Kind::Uniform { width, .. } => {
                if (t - theta).abs() <= 0.5 * width {
                    -width.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// Density (or mass) of the reduced observation `t` given theta.
    pub fn likelihood(&self, t: f64, theta: f64) -> f64 {
        match self.kind {
            Kind::Discrete { flip } => {
                if !(theta == 1.0 || theta == -1.0) {
                    0.0
                } else if t == theta {
                    1.0 - flip
                } else if t == -theta {
                    flip
                } else {
                    0.0
                }
            }
            Kind::Uniform { width, .. } => {
                if (t - theta).abs() <= 0.5 * width {
                    1.0 / width
                } else {
                    0.0
                }
            }
            Kind::Gaussian { .. } => self.ln_likelihood(t, theta).exp(),
        }
    }

    pub fn ln_joint(&self, t: f64, theta: f64) -> f64 {
        let lp = self.ln_prior(theta);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        lp + self.ln_likelihood(t, theta)
    }

    pub fn joint(&self, t: f64, theta: f64) -> f64 {
        match self.kind {
            Kind::Gaussian { .. } => self.ln_joint(t, theta).exp(),
            _ => self.prior(theta) * self.likelihood(t, theta),
        }
    }

    /// Reduces a full observation vector to the scalar statistic.
    pub fn statistic(&self, y: &[f64]) -> Result<f64> {
        let dim = self.obs_dim();
        if y.len() != dim {
            return Err(Error::Domain(format!(
                "observation has dimension {}, model expects {dim}",
                y.len()
            )));
        }
        if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite observation {bad}")));
        }
        Ok(y.iter().sum::<f64>() / dim as f64)
    }

    /// p(y | theta) for a full observation vector.
    pub fn conditional_density(&self, y: &[f64], theta: f64) -> Result<f64> {
        self.statistic(y)?;
        Ok(match self.kind {
            Kind::Gaussian { var_noise, .. } => y
                .iter()
                .map(|&yi| ln_normal(yi, theta, var_noise))
                .sum::<f64>()
                .exp(),
            _ => self.likelihood(y[0], theta),
        })
    }

    /// p(y, theta) = prior(theta) * p(y | theta) for a full observation vector.
    pub fn joint_density(&self, y: &[f64], theta: f64) -> Result<f64> {
        Ok(self.prior(theta) * self.conditional_density(y, theta)?)
    }

    pub fn has_analytic_posterior_mean(&self) -> bool {
        matches!(self.kind, Kind::Gaussian { .. })
    }

    /// Closed-form E(theta | t) when the model carries one.
    pub fn analytic_posterior_mean(&self, t: f64) -> Option<f64> {
        match self.kind {
            Kind::Gaussian { gain, .. } => Some(gain * t),
            _ => None,
        }
    }

    pub fn has_analytic_score(&self) -> bool {
        matches!(self.kind, Kind::Gaussian { .. })
    }

    /// Closed-form d/dtheta log p(t | theta) when the model carries one.
    pub fn analytic_score(&self, t: f64, theta: f64) -> Option<f64> {
        match self.kind {
            Kind::Gaussian { stat_var, .. } => Some((t - theta) / stat_var),
            _ => None,
        }
    }

    /// Draws (t, theta) by ancestral sampling.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        match self.kind {
            Kind::Gaussian {
                var_prior,
                stat_var,
                ..
            } => {
                let theta = Normal::new(0.0, var_prior.sqrt()).unwrap().sample(rng);
                let t = Normal::new(theta, stat_var.sqrt()).unwrap().sample(rng);
                (t, theta)
            }
            Kind::Discrete { flip } => {
                let theta = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let t = if rng.gen::<f64>() < flip { -theta } else { theta };
                (t, theta)
            }
            Kind::Uniform { prior_var, width } => {
                let theta = Normal::new(0.0, prior_var.sqrt()).unwrap().sample(rng);
                let t = theta + width * (rng.gen::<f64>() - 0.5);
                (t, theta)
            }
        }
    }

    /// Standard deviation of the marginal of t, used for probe grids.
    pub(crate) fn marginal_sd(&self) -> f64 {
        match self.kind {
            Kind::Gaussian {
                var_prior,
                stat_var,
                ..
            } => (var_prior + stat_var).sqrt(),
            Kind::Discrete { .. } => 1.0,
            Kind::Uniform { prior_var, width } => (prior_var + width * width / 12.0).sqrt(),
        }
    }

    // ---- integration geometry -------------------------------------------

    /// Truncated prior support, widened by `widen` on each side.
    pub(crate) fn prior_domain(&self, tail: f64, widen: f64) -> Domain {
        match self.kind {
            Kind::Gaussian { var_prior, .. } | Kind::Uniform { prior_var: var_prior, .. } => {
                let r = tail * var_prior.sqrt() + widen;
                Domain::Pieces(vec![(-r, r)])
            }
            Kind::Discrete { .. } => Domain::Points(vec![-1.0, 1.0]),
        }
    }

    /// Support of t given theta. `shifts` lists parameter offsets whose
    /// shifted densities appear in the integrand; their support edges become
    /// piece boundaries.
    pub(crate) fn likelihood_domain(
        &self,
        theta: f64,
        tail: f64,
        widen: f64,
        shifts: &[f64],
    ) -> Domain {
        match self.kind {
            Kind::Gaussian { stat_var, .. } => {
                let r = tail * stat_var.sqrt() + widen;
                Domain::Pieces(vec![(theta - r, theta + r)])
            }
            Kind::Discrete { .. } => Domain::Points(vec![-1.0, 1.0]),
            Kind::Uniform { width, .. } => {
                let half = 0.5 * width;
                let breaks = shifts
                    .iter()
                    .flat_map(|&sh| [theta + sh - half, theta + sh + half]);
                Domain::Pieces(split(theta - half, theta + half, breaks))
            }
        }
    }

    /// Truncated support of the marginal of t.
    pub(crate) fn marginal_domain(&self, tail: f64, widen: f64) -> Domain {
        match self.kind {
            Kind::Gaussian {
                var_prior,
                stat_var,
                ..
            } => {
                let r = tail * (var_prior + stat_var).sqrt() + widen;
                Domain::Pieces(vec![(-r, r)])
            }
            Kind::Discrete { .. } => Domain::Points(vec![-1.0, 1.0]),
            Kind::Uniform { prior_var, width } => {
                let r = tail * prior_var.sqrt() + 0.5 * width + widen;
                Domain::Pieces(vec![(-r, r)])
            }
        }
    }

    /// Support of theta given t (where p(t, theta) > 0, truncated for
    /// unbounded posteriors).
    pub(crate) fn posterior_domain(&self, t: f64, tail: f64, widen: f64, shifts: &[f64]) -> Domain {
        match self.kind {
            Kind::Gaussian { gain, post_var, .. } => {
                let c = gain * t;
                let r = tail * post_var.sqrt() + widen;
                Domain::Pieces(vec![(c - r, c + r)])
            }
            Kind::Discrete { .. } => Domain::Points(vec![-1.0, 1.0]),
            Kind::Uniform { width, .. } => {
                let half = 0.5 * width;
                let breaks = shifts
                    .iter()
                    .flat_map(|&sh| [t - sh - half, t - sh + half]);
                Domain::Pieces(split(t - half, t + half, breaks))
            }
        }
    }
}

/// Splits [a, b] at the given break points lying strictly inside.
fn split(a: f64, b: f64, breaks: impl Iterator<Item = f64>) -> Vec<(f64, f64)> {
    let mut cuts: Vec<f64> = breaks.filter(|&x| x > a && x < b).collect();
    cuts.sort_by(|x, y| x.total_cmp(y));
    cuts.dedup();
    let mut pieces = Vec::with_capacity(cuts.len() + 1);
    let mut lo = a;
    for c in cuts {
        if c - lo > 1e-12 * (b - a) {
            pieces.push((lo, c));
            lo = c;
        }
    }
    pieces.push((lo, b));
    pieces
}

/// An estimator delta(t) of theta acting on the reduced observation.
#[derive(Clone)]
pub struct Estimator {
    pub label: String,
    rule: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl Estimator {
    pub fn new(label: impl Into<String>, rule: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Estimator {
            label: label.into(),
            rule: Arc::new(rule),
        }
    }

    pub fn apply(&self, t: f64) -> f64 {
        (self.rule)(t)
    }
}

impl std::fmt::Debug for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Estimator").field("label", &self.label).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gg(vp: f64, vn: f64, n: usize) -> ScalarModel {
        make_model(ModelSpec::GaussianGaussian {
            var_prior: vp,
            var_noise: vn,
            n_obs: n,
        })
        .unwrap()
    }

    fn bsc(p: f64) -> ScalarModel {
        make_model(ModelSpec::DiscreteChannel { flip_prob: p }).unwrap()
    }

    fn unif(v: f64, w: f64) -> ScalarModel {
        make_model(ModelSpec::UniformLocation {
            prior_var: v,
            width: w,
        })
        .unwrap()
    }

    #[test]
    fn catalog_examples() {
        let m = gg(1.0, 1.0, 1);
        assert_eq!(m.analytic_posterior_mean(3.0), Some(1.5));
        let d = bsc(0.2);
        assert!((d.joint_density(&[1.0], 1.0).unwrap() - 0.4).abs() < 1e-15);
        let u = unif(1.0, 1.0);
        assert!(!u.has_analytic_score());
        assert!(!u.has_analytic_posterior_mean());
    }

    #[test]
    fn joint_density_examples() {
        let d = bsc(0.2);
        assert!((d.joint_density(&[1.0], -1.0).unwrap() - 0.1).abs() < 1e-15);
        let m = gg(1.0, 1.0, 1);
        let v = m.joint_density(&[0.0], 0.0).unwrap();
        assert!((v - 1.0 / (2.0 * PI)).abs() < 1e-15);
        let u = unif(1.0, 1.0);
        assert_eq!(u.joint_density(&[3.0], 0.0).unwrap(), 0.0);
    }

    #[test]
    fn conditional_density_examples() {
        assert_eq!(bsc(0.2).conditional_density(&[1.0], 1.0).unwrap(), 0.8);
        let m = gg(1.0, 1.0, 2);
        let v = m.conditional_density(&[0.0, 0.0], 0.0).unwrap();
        assert!((v - 1.0 / (2.0 * PI)).abs() < 1e-15);
        assert_eq!(unif(1.0, 1.0).conditional_density(&[0.4], 0.0).unwrap(), 1.0);
    }

    #[test]
    fn wrong_dimension_is_domain_error() {
        let m = gg(1.0, 1.0, 2);
        assert!(matches!(
            m.conditional_density(&[0.0], 0.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(m.joint_density(&[0.0; 3], 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = [
            ModelSpec::GaussianGaussian {
                var_prior: 0.0,
                var_noise: 1.0,
                n_obs: 1,
            },
            ModelSpec::GaussianGaussian {
                var_prior: 1.0,
                var_noise: -1.0,
                n_obs: 1,
            },
            ModelSpec::GaussianGaussian {
                var_prior: 1.0,
                var_noise: 1.0,
                n_obs: 0,
            },
            ModelSpec::DiscreteChannel { flip_prob: 0.5 },
            ModelSpec::DiscreteChannel { flip_prob: 0.0 },
            ModelSpec::UniformLocation {
                prior_var: 1.0,
                width: 0.0,
            },
        ];
        for spec in bad {
            assert!(matches!(make_model(spec), Err(Error::InvalidSpec(_))), "{spec:?}");
        }
    }

    #[test]
    fn outside_support_is_exact_zero() {
        let d = bsc(0.2);
        assert_eq!(d.prior(0.0), 0.0);
        assert_eq!(d.likelihood(0.5, 1.0), 0.0);
        assert_eq!(d.joint(1.0, 3.0), 0.0);
        let u = unif(1.0, 2.0);
        assert_eq!(u.likelihood(1.0 + 1e-12, 0.0), 0.0);
        assert_eq!(u.likelihood(1.0, 0.0), 0.5);
    }

    #[test]
    fn joint_is_prior_times_conditional() {
        let models = [gg(1.0, 1.0, 3), bsc(0.3), unif(2.0, 0.7)];
        for m in &models {
            for &theta in &[-1.0, -0.3, 0.0, 1.0, 2.2] {
                for &y in &[-1.0, -0.1, 0.0, 0.25, 1.0] {
                    let obs = vec![y; m.obs_dim()];
                    let j = m.joint_density(&obs, theta).unwrap();
                    let c = m.conditional_density(&obs, theta).unwrap();
                    assert_eq!(j, m.prior(theta) * c);
                }
            }
        }
    }

    #[test]
    fn split_pieces() {
        let p = split(0.0, 1.0, [0.5, -1.0, 0.25, 0.5, 2.0].into_iter());
        assert_eq!(p, vec![(0.0, 0.25), (0.25, 0.5), (0.5, 1.0)]);
    }
}
