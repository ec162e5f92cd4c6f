//! Test functions psi(y, theta) fed into the Cauchy-Schwarz bounds.
//!
//! * `Ww`: joint-density ratios, `(p(y,θ+h)/p(y,θ))^s - (p(y,θ-h)/p(y,θ))^(1-s)`.
//! * `Cond`: the same with the conditional density `p(y|·)` in place of the joint.
//! * `Optimal`: `θ - E(θ|y)`, which turns every bound into an equality.
//! * `Custom`: any user closure.
//!
//! Ratios are taken in log space. A shifted density that vanishes contributes
//! a zero term (`0^e = 0` for `e > 0`), and a term raised to the power zero is
//! one, so `s = 1` gives `p(y|θ+h)/p(y|θ) - 1`. Where the unshifted density
//! vanishes psi is zero.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::integrate::{self, moments, posterior_nodes, Hints, IntegrationConfig, EVIDENCE_FLOOR};
use crate::model::{ScalarModel, Space};

/// Family tag of a [`PsiSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PsiFamily {
    Ww,
    Cond,
    Optimal,
    Custom,
}

impl PsiFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            PsiFamily::Ww => "ww",
            PsiFamily::Cond => "cond",
            PsiFamily::Optimal => "optimal",
            PsiFamily::Custom => "custom",
        }
    }
}

impl std::str::FromStr for PsiFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ww" => Ok(PsiFamily::Ww),
            "cond" => Ok(PsiFamily::Cond),
            "optimal" => Ok(PsiFamily::Optimal),
            "custom" => Ok(PsiFamily::Custom),
            other => Err(Error::InvalidInput(format!("unknown psi family `{other}`"))),
        }
    }
}

pub type PsiFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A test function.
#[derive(Clone)]
pub enum PsiSpec {
    Ww { h: f64, s: f64 },
    Cond { h: f64, s: f64 },
    Optimal,
    Custom { label: String, f: PsiFn },
}

impl std::fmt::Debug for PsiSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PsiSpec::Ww { h, s } => write!(f, "Ww {{ h: {h}, s: {s} }}"),
            PsiSpec::Cond { h, s } => write!(f, "Cond {{ h: {h}, s: {s} }}"),
            PsiSpec::Optimal => write!(f, "Optimal"),
            PsiSpec::Custom { label, .. } => write!(f, "Custom({label})"),
        }
    }
}

fn check_h_s(h: f64, s: f64) -> Result<()> {
    if !(h.is_finite() && h != 0.0) {
        return Err(Error::InvalidInput(format!("h must be finite and nonzero, got {h}")));
    }
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::InvalidInput(format!("s must lie in (0, 1], got {s}")));
    }
    Ok(())
}

impl PsiSpec {
    pub fn ww(h: f64, s: f64) -> Result<Self> {
        check_h_s(h, s)?;
        Ok(PsiSpec::Ww { h, s })
    }

    pub fn cond(h: f64, s: f64) -> Result<Self> {
        check_h_s(h, s)?;
        Ok(PsiSpec::Cond { h, s })
    }

    pub fn optimal() -> Self {
        PsiSpec::Optimal
    }

    pub fn custom(label: impl Into<String>, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        PsiSpec::Custom {
            label: label.into(),
            f: Arc::new(f),
        }
    }

    pub fn family(&self) -> PsiFamily {
        match self {
            PsiSpec::Ww { .. } => PsiFamily::Ww,
            PsiSpec::Cond { .. } => PsiFamily::Cond,
            PsiSpec::Optimal => PsiFamily::Optimal,
            PsiSpec::Custom { .. } => PsiFamily::Custom,
        }
    }

    pub fn h(&self) -> Option<f64> {
        match self {
            PsiSpec::Ww { h, .. } | PsiSpec::Cond { h, .. } => Some(*h),
            _ => None,
        }
    }

    pub fn s(&self) -> Option<f64> {
        match self {
            PsiSpec::Ww { s, .. } | PsiSpec::Cond { s, .. } => Some(*s),
            _ => None,
        }
    }

    /// Integration hints: the parameter offsets psi evaluates densities at.
    pub fn hints(&self) -> Hints {
        match self.h() {
            Some(h) => Hints::shifts(vec![h, -h]),
            None => Hints::none(),
        }
    }

    pub fn needs_posterior_mean(&self) -> bool {
        matches!(self, PsiSpec::Optimal)
    }

    /// psi at (t, theta) given the posterior mean at t (used only by `Optimal`).
    pub(crate) fn eval_with_mean(&self, model: &ScalarModel, t: f64, theta: f64, mean: f64) -> f64 {
        match self {
            PsiSpec::Ww { h, s } => {
                let base = model.ln_joint(t, theta);
                if base == f64::NEG_INFINITY {
                    return 0.0;
                }
                ratio_term(model.ln_joint(t, theta + h), base, *s)
                    - ratio_term(model.ln_joint(t, theta - h), base, 1.0 - s)
            }
            PsiSpec::Cond { h, s } => {
                let base = model.ln_likelihood(t, theta);
                if base == f64::NEG_INFINITY {
                    return 0.0;
                }
                ratio_term(model.ln_likelihood(t, theta + h), base, *s)
                    - ratio_term(model.ln_likelihood(t, theta - h), base, 1.0 - s)
            }
            PsiSpec::Optimal => theta - mean,
            PsiSpec::Custom { f, .. } => f(t, theta),
        }
    }
}

/// `(num/den)^e` from log densities with the zero conventions of this module.
fn ratio_term(ln_num: f64, ln_den: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else if ln_num == f64::NEG_INFINITY {
        0.0
    } else {
        (e * (ln_num - ln_den)).exp()
    }
}

/// Evaluates psi at a reduced observation `y` and parameter `theta`.
pub fn eval_psi(
    spec: &PsiSpec,
    model: &ScalarModel,
    y: f64,
    theta: f64,
    cfg: &IntegrationConfig,
) -> Result<f64> {
    if !model.observation_space().contains(y) || !y.is_finite() {
        return Err(Error::Domain(format!("y = {y} outside the observation space")));
    }
    if !theta.is_finite() {
        return Err(Error::Domain(format!("theta = {theta} is not finite")));
    }
    let mean = if spec.needs_posterior_mean() {
        integrate::posterior_mean(model, y, cfg)?
    } else {
        0.0
    };
    Ok(spec.eval_with_mean(model, y, theta, mean))
}

/// Outcome of a zero-condition check `E[psi | y] = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub max_deviation: f64,
    pub worst_y: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// |E[psi | y]| per probe, in probe order.
    pub deviations: Vec<f64>,
}

/// Default tolerance of [`check_zero_condition`].
pub const ZERO_CONDITION_TOL: f64 = 1e-8;

/// Evaluates `max |E[psi(y, θ) | y]|` over the probes.
pub fn check_zero_condition(
    model: &ScalarModel,
    spec: &PsiSpec,
    y_probes: &[f64],
    cfg: &IntegrationConfig,
) -> Result<ConditionReport> {
    check_zero_condition_at(model, spec, y_probes, cfg, ZERO_CONDITION_TOL)
}

pub fn check_zero_condition_at(
    model: &ScalarModel,
    spec: &PsiSpec,
    y_probes: &[f64],
    cfg: &IntegrationConfig,
    tolerance: f64,
) -> Result<ConditionReport> {
    if y_probes.is_empty() {
        return Err(Error::InvalidInput("y_probes must be nonempty".into()));
    }
    cfg.validate()?;
    let hints = spec.hints();
    let mut deviations = Vec::with_capacity(y_probes.len());
    for &y in y_probes {
        if !model.observation_space().contains(y) {
            return Err(Error::Domain(format!("probe y = {y} outside the observation space")));
        }
        let post = posterior_nodes(model, y, cfg, &hints);
        let mean = integrate::posterior_mean_from_nodes(model, y, &post)?;
        let ([s], evidence) = moments(&post, |theta| [spec.eval_with_mean(model, y, theta, mean)], "psi")?;
        if !(evidence >= EVIDENCE_FLOOR) {
            return Err(Error::ZeroEvidence { y });
        }
        deviations.push((s / evidence).abs());
    }
    let (worst_i, &max_deviation) = deviations
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty");
    Ok(ConditionReport {
        max_deviation,
        worst_y: y_probes[worst_i],
        tolerance,
        passed: max_deviation <= tolerance,
        deviations,
    })
}

/// Probe observations: every point of a finite observation space, else 21
/// equally spaced points over three marginal standard deviations.
pub fn default_y_probes(model: &ScalarModel) -> Vec<f64> {
    match model.observation_space() {
        Space::Finite(v) => v,
        Space::Interval { .. } => {
            let half = 3.0 * model.marginal_sd();
            (0..21).map(|i| -half + i as f64 * half / 10.0).collect()
        }
    }
}
