//! Exact Bayes risk and the scalar lower bounds built from a test function.
//!
//! Every bound is a Cauchy-Schwarz quotient `E²[(θ - E(θ|y)) ψ] / D`, where
//! the conditioning and the denominator `D` depend on the flavor:
//!
//! | flavor            | conditioning        | denominator        |
//! |-------------------|---------------------|--------------------|
//! | `Global`          | none                | `var[ψ]`           |
//! | `Conditional`     | fixed `y`           | `var[ψ | y]`       |
//! | `AvgConditional`  | `y`, then averaged  | `var[ψ | y]`       |
//! | `AvgTheta`        | `θ`, then averaged  | `E[ψ² | θ]`        |
//! | `Ww`              | none, `E[ψ|y] = 0`  | `E[ψ²]`, numerator `E²[θψ]` |
//! | `WwConditional`   | fixed `y`           | `E[ψ² | y]`        |
//!
//! `Asymptotic` is the prior-averaged inverse Fisher information, and
//! [`small_shift_limit_check`] tracks how the `AvgTheta` bound with the
//! conditional-ratio family approaches it as the shift shrinks.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::format::{fmt_opt, fmt_sig};
use crate::integrate::{
    self, evidence_of, joint_moments_with_mean, likelihood_nodes, moments, over_marginal,
    over_prior, posterior_mean_from_nodes, posterior_nodes, Hints, IntegrationConfig, Node,
    EVIDENCE_FLOOR,
};
use crate::model::{Estimator, ScalarModel};
use crate::quadrature::pairwise_sum;
use crate::testfn::{check_zero_condition_at, default_y_probes, PsiSpec};

/// Which inequality a [`BoundResult`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Flavor {
    Global,
    Conditional,
    AvgConditional,
    AvgTheta,
    Ww,
    WwConditional,
    Asymptotic,
    ExactRisk,
}

impl Flavor {
    pub fn as_str(&self) -> &'static str {
        match self {
            Flavor::Global => "global",
            Flavor::Conditional => "conditional",
            Flavor::AvgConditional => "avg_conditional",
            Flavor::AvgTheta => "avg_theta",
            Flavor::Ww => "ww",
            Flavor::WwConditional => "ww_conditional",
            Flavor::Asymptotic => "asymptotic",
            Flavor::ExactRisk => "exact_risk",
        }
    }
}

impl std::str::FromStr for Flavor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "global" => Flavor::Global,
            "conditional" => Flavor::Conditional,
            "avg_conditional" => Flavor::AvgConditional,
            "avg_theta" => Flavor::AvgTheta,
            "ww" => Flavor::Ww,
            "ww_conditional" => Flavor::WwConditional,
            "asymptotic" => Flavor::Asymptotic,
            "exact_risk" => Flavor::ExactRisk,
            other => return Err(Error::InvalidInput(format!("unknown flavor `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Ok,
    DegenerateDenominator,
    NonRegular,
    Unsupported,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::DegenerateDenominator => "degenerate_denominator",
            Status::NonRegular => "non_regular",
            Status::Unsupported => "unsupported",
        }
    }
}

impl std::str::FromStr for Status {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ok" => Status::Ok,
            "degenerate_denominator" => Status::DegenerateDenominator,
            "non_regular" => Status::NonRegular,
            "unsupported" => Status::Unsupported,
            other => return Err(Error::InvalidInput(format!("unknown status `{other}`"))),
        })
    }
}

/// A computed bound with its diagnostics. `value` is present iff `status` is ok.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundResult {
    pub value: Option<f64>,
    pub numerator: f64,
    pub denominator: f64,
    pub flavor: Flavor,
    pub status: Status,
    pub meta: BTreeMap<String, f64>,
    pub note: Option<String>,
}

impl BoundResult {
    fn new(flavor: Flavor, numerator: f64, denominator: f64, status: Status, value: f64) -> Self {
        BoundResult {
            value: (status == Status::Ok).then_some(value),
            numerator,
            denominator,
            flavor,
            status,
            meta: BTreeMap::new(),
            note: None,
        }
    }

    fn with_meta(mut self, key: &str, v: Option<f64>) -> Self {
        if let Some(v) = v {
            self.meta.insert(key.to_string(), v);
        }
        self
    }

    fn with_psi(self, spec: &PsiSpec) -> Self {
        self.with_meta("h", spec.h()).with_meta("s", spec.s())
    }

    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    pub const CSV_HEADER: &'static str = "flavor,h,s,y,value,numerator,denominator,status";

    /// `flavor,h,s,y,value,numerator,denominator,status`
    pub fn csv_row(&self, digits: usize) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.flavor.as_str(),
            fmt_opt(self.meta.get("h").copied(), digits),
            fmt_opt(self.meta.get("s").copied(), digits),
            fmt_opt(self.meta.get("y").copied(), digits),
            fmt_opt(self.value, digits),
            fmt_sig(self.numerator, digits),
            fmt_sig(self.denominator, digits),
            self.status.as_str()
        )
    }
}

/// Relative floor below which a denominator counts as zero.
pub const DEGENERATE_REL: f64 = 1e-14;
/// Nodes whose normalized weight is at most this do not trigger degeneracy.
pub const NEGLIGIBLE_WEIGHT: f64 = 1e-12;
/// Tolerance of the zero-condition precheck in the `Ww` flavors.
pub const WW_CONDITION_TOL: f64 = 1e-6;
/// Note attached to every asymptotic result.
pub const ASYMPTOTIC_NOTE: &str = "asymptotic regime value: E{1/I(theta)} is attained only \
as information grows and may exceed the Bayes risk at finite sample size";

fn degenerate(denominator: f64, second_moment: f64) -> bool {
    !(denominator >= DEGENERATE_REL * second_moment.max(1.0))
}

/// E[(θ - E(θ|y))²], the risk of the posterior mean.
pub fn bayes_risk_exact(model: &ScalarModel, cfg: &IntegrationConfig) -> Result<BoundResult> {
    let [risk] = joint_moments_with_mean(model, cfg, &Hints::none(), |_, theta, mean| {
        let e = theta - mean;
        [e * e]
    })?;
    Ok(BoundResult::new(Flavor::ExactRisk, risk, 1.0, Status::Ok, risk))
}

/// E[(θ - δ(y))²].
pub fn mse_of_estimator(model: &ScalarModel, delta: &Estimator, cfg: &IntegrationConfig) -> Result<f64> {
    integrate::expect_joint(
        model,
        |y, theta| {
            let e = theta - delta.apply(y);
            e * e
        },
        cfg,
    )
}

/// `E²[(θ - E(θ|y)) ψ] / var[ψ]`.
pub fn bound_global(model: &ScalarModel, spec: &PsiSpec, cfg: &IntegrationConfig) -> Result<BoundResult> {
    let [m1, m2, cross, _] = psi_joint_moments(model, spec, cfg)?;
    let var = m2 - m1 * m1;
    let numerator = cross * cross;
    let status = if degenerate(var, m2) {
        Status::DegenerateDenominator
    } else {
        Status::Ok
    };
    Ok(BoundResult::new(Flavor::Global, numerator, var, status, numerator / var)
        .with_psi(spec)
        .with_meta("mean_psi", Some(m1)))
}

/// Joint moments `[E ψ, E ψ², E (θ - E(θ|y)) ψ, E θψ]`.
fn psi_joint_moments(model: &ScalarModel, spec: &PsiSpec, cfg: &IntegrationConfig) -> Result<[f64; 4]> {
    joint_moments_with_mean(model, cfg, &spec.hints(), |y, theta, mean| {
        let p = spec.eval_with_mean(model, y, theta, mean);
        [p, p * p, (theta - mean) * p, theta * p]
    })
}

/// Posterior moments of psi at one observation.
#[derive(Debug, Clone, Copy)]
struct PosteriorStats {
    mean_psi: f64,
    second: f64,
    cross: f64,
    theta_psi: f64,
    post_var: f64,
    evidence: f64,
}

impl PosteriorStats {
    fn var(&self) -> f64 {
        self.second - self.mean_psi * self.mean_psi
    }
}

fn posterior_stats(model: &ScalarModel, spec: &PsiSpec, y: f64, post: &[Node]) -> Result<Option<PosteriorStats>> {
    let evidence = evidence_of(post);
    if !(evidence >= EVIDENCE_FLOOR) {
        return Ok(None);
    }
    let mean = posterior_mean_from_nodes(model, y, post)?;
    let ([m1, m2, cross, tpsi, pv], _) = moments(
        post,
        |theta| {
            let p = spec.eval_with_mean(model, y, theta, mean);
            let e = theta - mean;
            [p, p * p, e * p, theta * p, e * e]
        },
        "posterior psi moments",
    )?;
    Ok(Some(PosteriorStats {
        mean_psi: m1 / evidence,
        second: m2 / evidence,
        cross: cross / evidence,
        theta_psi: tpsi / evidence,
        post_var: pv / evidence,
        evidence,
    }))
}

fn stats_at(model: &ScalarModel, spec: &PsiSpec, y: f64, cfg: &IntegrationConfig) -> Result<PosteriorStats> {
    cfg.validate()?;
    if !y.is_finite() || !model.observation_space().contains(y) {
        return Err(Error::Domain(format!("y = {y} outside the observation space")));
    }
    let post = posterior_nodes(model, y, cfg, &spec.hints());
    posterior_stats(model, spec, y, &post)?.ok_or(Error::ZeroEvidence { y })
}

/// `E²[(θ - E(θ|y)) ψ | y] / var[ψ | y]` at a fixed observation.
pub fn bound_conditional(
    model: &ScalarModel,
    spec: &PsiSpec,
    y: f64,
    cfg: &IntegrationConfig,
) -> Result<BoundResult> {
    let st = stats_at(model, spec, y, cfg)?;
    let var = st.var();
    let numerator = st.cross * st.cross;
    let status = if degenerate(var, st.second) {
        Status::DegenerateDenominator
    } else {
        Status::Ok
    };
    Ok(BoundResult::new(Flavor::Conditional, numerator, var, status, numerator / var)
        .with_psi(spec)
        .with_meta("y", Some(y))
        .with_meta("posterior_variance", Some(st.post_var)))
}

/// Marginal average over y of the conditional bound.
pub fn bound_avg_conditional(
    model: &ScalarModel,
    spec: &PsiSpec,
    cfg: &IntegrationConfig,
) -> Result<BoundResult> {
    let rows = over_marginal(model, cfg, &spec.hints(), |y, post| posterior_stats(model, spec, y, post))?;
    let weights: Vec<f64> = rows
        .iter()
        .map(|(w, st)| st.map_or(0.0, |st| w * st.evidence))
        .collect();
    let total = pairwise_sum(&weights);
    let mut ratio = Vec::with_capacity(rows.len());
    let mut num = Vec::with_capacity(rows.len());
    let mut den = Vec::with_capacity(rows.len());
    let mut is_degenerate = false;
    for ((_, st), &w) in rows.iter().zip(&weights) {
        let Some(st) = st else {
            continue;
        };
        let var = st.var();
        let n = st.cross * st.cross;
        if degenerate(var, st.second) {
            if w / total > NEGLIGIBLE_WEIGHT {
                is_degenerate = true;
            }
            continue;
        }
        ratio.push(w * n / var);
        num.push(w * n);
        den.push(w * var);
    }
    let value = pairwise_sum(&ratio) / total;
    let status = if is_degenerate {
        Status::DegenerateDenominator
    } else {
        Status::Ok
    };
    Ok(BoundResult::new(
        Flavor::AvgConditional,
        pairwise_sum(&num) / total,
        pairwise_sum(&den) / total,
        status,
        value,
    )
    .with_psi(spec))
}

/// Prior average over θ of `E²[(θ - E(θ|y)) ψ | θ] / E[ψ² | θ]`.
pub fn bound_avg_theta(model: &ScalarModel, spec: &PsiSpec, cfg: &IntegrationConfig) -> Result<BoundResult> {
    let rows = over_prior(model, cfg, &spec.hints(), |theta, lik| theta_stats(model, spec, theta, lik, cfg))?;
    let total = pairwise_sum(&rows.iter().map(|(w, _)| *w).collect::<Vec<_>>());
    let mut ratio = Vec::with_capacity(rows.len());
    let mut num = Vec::with_capacity(rows.len());
    let mut den = Vec::with_capacity(rows.len());
    let mut is_degenerate = false;
    for (w, st) in &rows {
        let Some((cross, second)) = *st else {
            continue;
        };
        if degenerate(second, second) {
            if w / total > NEGLIGIBLE_WEIGHT {
                is_degenerate = true;
            }
            continue;
        }
        ratio.push(w * cross * cross / second);
        num.push(w * cross * cross);
        den.push(w * second);
    }
    let status = if is_degenerate {
        Status::DegenerateDenominator
    } else {
        Status::Ok
    };
    Ok(BoundResult::new(
        Flavor::AvgTheta,
        pairwise_sum(&num) / total,
        pairwise_sum(&den) / total,
        status,
        pairwise_sum(&ratio) / total,
    )
    .with_psi(spec))
}

/// `(E[(θ - δ0) ψ | θ], E[ψ² | θ])`, or `None` where the likelihood has no mass.
fn theta_stats(
    model: &ScalarModel,
    spec: &PsiSpec,
    theta: f64,
    lik: &[Node],
    cfg: &IntegrationConfig,
) -> Result<Option<(f64, f64)>> {
    let mass = evidence_of(lik);
    if !(mass > 0.0) {
        return Ok(None);
    }
    let means = lik
        .iter()
        .map(|n| {
            if n.w == 0.0 {
                Ok(0.0)
            } else {
                integrate::posterior_mean(model, n.x, cfg)
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut k = 0usize;
    let ([cross, second], _) = moments(
        lik,
        |y| {
            let mean = means[k];
            k += 1;
            let p = spec.eval_with_mean(model, y, theta, mean);
            [(theta - mean) * p, p * p]
        },
        "theta-conditional psi moments",
    )?;
    Ok(Some((cross / mass, second / mass)))
}

fn ww_spec(h: f64, s: f64) -> Result<PsiSpec> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::InvalidInput(format!("s must lie in (0, 1) for the ww bound, got {s}")));
    }
    PsiSpec::ww(h, s)
}

/// `E²[θψ] / E[ψ²]` with the joint-ratio psi, after checking `E[ψ|y] = 0`.
///
/// The general form `E²[(θ - E(θ|y)) ψ] / var[ψ]` is recorded in
/// `meta["general_form"]`; the two coincide when the zero condition holds.
pub fn bound_ww(model: &ScalarModel, h: f64, s: f64, cfg: &IntegrationConfig) -> Result<BoundResult> {
    let spec = ww_spec(h, s)?;
    let report = check_zero_condition_at(model, &spec, &default_y_probes(model), cfg, WW_CONDITION_TOL)?;
    if !report.passed {
        return Err(Error::ConditionViolated {
            deviation: report.max_deviation,
            tolerance: WW_CONDITION_TOL,
        });
    }
    let [m1, m2, cross, tpsi] = psi_joint_moments(model, &spec, cfg)?;
    let numerator = tpsi * tpsi;
    let status = if degenerate(m2, m2) {
        Status::DegenerateDenominator
    } else {
        Status::Ok
    };
    let var = m2 - m1 * m1;
    let general = (!degenerate(var, m2)).then(|| cross * cross / var);
    Ok(BoundResult::new(Flavor::Ww, numerator, m2, status, numerator / m2)
        .with_psi(&spec)
        .with_meta("zero_condition_deviation", Some(report.max_deviation))
        .with_meta("general_form", general))
}

/// `E²[θψ | y] / E[ψ² | y]` with the joint-ratio psi at a fixed observation.
pub fn bound_ww_conditional(
    model: &ScalarModel,
    h: f64,
    s: f64,
    y: f64,
    cfg: &IntegrationConfig,
) -> Result<BoundResult> {
    let spec = ww_spec(h, s)?;
    let st = stats_at(model, &spec, y, cfg)?;
    let deviation = st.mean_psi.abs();
    if deviation > WW_CONDITION_TOL {
        return Err(Error::ConditionViolated {
            deviation,
            tolerance: WW_CONDITION_TOL,
        });
    }
    let numerator = st.theta_psi * st.theta_psi;
    let status = if degenerate(st.second, st.second) {
        Status::DegenerateDenominator
    } else {
        Status::Ok
    };
    Ok(BoundResult::new(Flavor::WwConditional, numerator, st.second, status, numerator / st.second)
        .with_psi(&spec)
        .with_meta("y", Some(y))
        .with_meta("posterior_variance", Some(st.post_var))
        .with_meta("zero_condition_deviation", Some(deviation)))
}

/// Central finite-difference step for the score.
pub const SCORE_STEP: f64 = 1e-5;
/// Relative change allowed when the step is halved.
pub const RICHARDSON_REL: f64 = 1e-4;
/// Fisher information below this is treated as absent.
pub const FISHER_FLOOR: f64 = 1e-12;

/// Fisher information at θ, or a reason why it does not exist.
fn fisher_information(model: &ScalarModel, theta: f64, lik: &[Node]) -> std::result::Result<f64, String> {
    let mass = evidence_of(lik);
    if !(mass > 0.0) {
        return Err(format!("no likelihood mass at theta = {theta}"));
    }
    let info = |score: &dyn Fn(f64) -> std::result::Result<f64, String>| {
        let mut acc = crate::quadrature::CompensatedSum::default();
        for n in lik {
            if n.w == 0.0 {
                continue;
            }
            let sc = score(n.x)?;
            if !sc.is_finite() {
                return Err(format!("score diverges at y = {}, theta = {theta}", n.x));
            }
            acc.add(n.w * sc * sc);
        }
        Ok(acc.value() / mass)
    };
    let value = if model.has_analytic_score() {
        info(&|y| Ok(model.analytic_score(y, theta).expect("analytic score")))?
    } else {
        let fd = |eps: f64| {
            move |y: f64| {
                let up = model.ln_likelihood(y, theta + eps);
                let down = model.ln_likelihood(y, theta - eps);
                if up == f64::NEG_INFINITY || down == f64::NEG_INFINITY {
                    return Err(format!(
                        "likelihood support moves with theta (y = {y}, theta = {theta})"
                    ));
                }
                Ok((up - down) / (2.0 * eps))
            }
        };
        let coarse = info(&fd(SCORE_STEP))?;
        let fine = info(&fd(0.5 * SCORE_STEP))?;
        if !((coarse - fine).abs() < RICHARDSON_REL * fine.abs()) {
            return Err(format!(
                "finite-difference Fisher information unstable at theta = {theta} ({coarse:e} vs {fine:e})"
            ));
        }
        coarse
    };
    if !(value >= FISHER_FLOOR) {
        return Err(format!("Fisher information {value:e} vanishes at theta = {theta}"));
    }
    Ok(value)
}

/// `E{1 / E[(d log p(y|θ)/dθ)² | θ]}` over the prior.
///
/// Reports status `non_regular` (with the reason in `note`) when the score
/// does not exist. The value is not asserted to lie below the Bayes risk.
pub fn bound_asymptotic(model: &ScalarModel, cfg: &IntegrationConfig) -> Result<BoundResult> {
    if model.theta_is_discrete() {
        let mut r = BoundResult::new(Flavor::Asymptotic, f64::NAN, f64::NAN, Status::NonRegular, 0.0);
        r.note = Some("the parameter space is discrete, so no score exists".into());
        return Ok(r);
    }
    let rows = over_prior(model, cfg, &Hints::none(), |theta, lik| Ok(fisher_information(model, theta, lik)))?;
    let total = pairwise_sum(&rows.iter().map(|(w, _)| *w).collect::<Vec<_>>());
    let mut inv = Vec::with_capacity(rows.len());
    let mut info = Vec::with_capacity(rows.len());
    for (w, fi) in &rows {
        if *w == 0.0 {
            continue;
        }
        match fi {
            Ok(i) => {
                inv.push(w / i);
                info.push(w * i);
            }
            Err(reason) => {
                let mut r = BoundResult::new(Flavor::Asymptotic, f64::NAN, f64::NAN, Status::NonRegular, 0.0);
                r.note = Some(reason.clone());
                return Ok(r);
            }
        }
    }
    let value = pairwise_sum(&inv) / total;
    let mut r = BoundResult::new(Flavor::Asymptotic, 1.0, 1.0 / value, Status::Ok, value)
        .with_meta("mean_fisher_information", Some(pairwise_sum(&info) / total));
    r.note = Some(ASYMPTOTIC_NOTE.to_string());
    Ok(r)
}

/// One shift of the small-h limit procedure. All quantities are prior averages.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitRow {
    pub h: f64,
    pub bound: f64,
    /// `E_θ{E[(θ - δ0) ψ | θ]} / h`
    pub numerator_over_h: f64,
    /// `E_θ{E[ψ² | θ]} / h²`
    pub denominator_over_h2: f64,
    pub bound_deviation: f64,
    pub numerator_deviation: f64,
    pub denominator_deviation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitReport {
    pub rows: Vec<LimitRow>,
    /// `E_θ{c(θ)² / I(θ)}` with `c(θ) = d/dθ E[δ0(y) | θ]`.
    pub bound_limit: f64,
    /// `-E_θ{c(θ)}`
    pub numerator_limit: f64,
    /// `E_θ{I(θ)}`
    pub denominator_limit: f64,
    /// Least-squares slope of log bound deviation against log h.
    pub fitted_order: Option<f64>,
    /// Bound and denominator deviations never increase along the sequence.
    pub monotone: bool,
}

impl LimitReport {
    pub fn final_bound_deviation(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.bound_deviation)
    }
}

/// Step used to differentiate θ -> E[δ0(y) | θ].
const SLOPE_STEP: f64 = 1e-4;

/// Follows the `AvgTheta` bound with the conditional-ratio psi at `s = 1`
/// along a decreasing sequence of shifts, alongside its limiting numerator
/// slope, Fisher-information denominator and limiting bound.
pub fn small_shift_limit_check(
    model: &ScalarModel,
    h_sequence: &[f64],
    cfg: &IntegrationConfig,
) -> Result<LimitReport> {
    if !model.has_analytic_score() {
        return Err(Error::NonRegular("the limit check needs a model with a closed-form score".into()));
    }
    if h_sequence.is_empty() {
        return Err(Error::InvalidInput("h_sequence must be nonempty".into()));
    }
    for w in h_sequence.windows(2) {
        if !(w[1] < w[0]) {
            return Err(Error::InvalidInput("h_sequence must be strictly decreasing".into()));
        }
    }
    if !(h_sequence[h_sequence.len() - 1] >= 1e-3) || !h_sequence.iter().all(|h| h.is_finite()) {
        return Err(Error::InvalidInput("h_sequence values must be finite and at least 1e-3".into()));
    }

    // limits, per prior node
    let limits = over_prior(model, cfg, &Hints::none(), |theta, lik| {
        let info = fisher_information(model, theta, lik).map_err(Error::NonRegular)?;
        let slope = (mean_estimate_given_theta(model, theta + SLOPE_STEP, cfg)?
            - mean_estimate_given_theta(model, theta - SLOPE_STEP, cfg)?)
            / (2.0 * SLOPE_STEP);
        Ok((info, slope))
    })?;
    let total = pairwise_sum(&limits.iter().map(|(w, _)| *w).collect::<Vec<_>>());
    let avg = |f: &dyn Fn(f64, f64) -> f64| {
        pairwise_sum(&limits.iter().map(|(w, (i, c))| w * f(*i, *c)).collect::<Vec<_>>()) / total
    };
    let bound_limit = avg(&|i, c| c * c / i);
    let numerator_limit = -avg(&|_, c| c);
    let denominator_limit = avg(&|i, _| i);

    let mut rows = Vec::with_capacity(h_sequence.len());
    for &h in h_sequence {
        let spec = PsiSpec::cond(h, 1.0)?;
        let per_theta = over_prior(model, cfg, &spec.hints(), |theta, lik| theta_stats(model, &spec, theta, lik, cfg))?;
        let total = pairwise_sum(&per_theta.iter().map(|(w, _)| *w).collect::<Vec<_>>());
        let mut ratio = Vec::new();
        let mut num = Vec::new();
        let mut den = Vec::new();
        for (w, st) in &per_theta {
            let Some((cross, second)) = *st else { continue };
            if degenerate(second, second) {
                return Err(Error::NonRegular(format!("E[psi^2 | theta] vanishes at h = {h}")));
            }
            ratio.push(w * cross * cross / second);
            num.push(w * cross);
            den.push(w * second);
        }
        let bound = pairwise_sum(&ratio) / total;
        let numerator_over_h = pairwise_sum(&num) / total / h;
        let denominator_over_h2 = pairwise_sum(&den) / total / (h * h);
        rows.push(LimitRow {
            h,
            bound,
            numerator_over_h,
            denominator_over_h2,
            bound_deviation: (bound - bound_limit).abs(),
            numerator_deviation: (numerator_over_h - numerator_limit).abs(),
            denominator_deviation: (denominator_over_h2 - denominator_limit).abs(),
        });
    }

    let monotone = rows.windows(2).all(|w| {
        let slack = 1e-12;
        w[1].bound_deviation <= w[0].bound_deviation + slack
            && w[1].denominator_deviation <= w[0].denominator_deviation + slack * w[0].denominator_over_h2.abs().max(1.0)
    });
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.bound_deviation > 0.0)
        .map(|r| (r.h.ln(), r.bound_deviation.ln()))
        .collect();
    let fitted_order = (rows.len() >= 2 && pts.len() >= 2).then(|| least_squares_slope(&pts));
    Ok(LimitReport {
        rows,
        bound_limit,
        numerator_limit,
        denominator_limit,
        fitted_order,
        monotone,
    })
}

fn mean_estimate_given_theta(model: &ScalarModel, theta: f64, cfg: &IntegrationConfig) -> Result<f64> {
    let lik = likelihood_nodes(model, theta, cfg, &Hints::none());
    let means = lik
        .iter()
        .map(|n| integrate::posterior_mean(model, n.x, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut k = 0;
    let ([s], mass) = moments(
        &lik,
        |_| {
            k += 1;
            [means[k - 1]]
        },
        "posterior mean given theta",
    )?;
    Ok(s / mass)
}

fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}
