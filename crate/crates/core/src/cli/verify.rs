//! The invariant battery behind `riskbound verify`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::bounds::{
    bayes_risk_exact, bound_asymptotic, bound_avg_conditional, bound_avg_theta, bound_conditional,
    bound_global, bound_ww, bound_ww_conditional, small_shift_limit_check, mse_of_estimator,
    BoundResult, Flavor, Status,
};
use crate::error::Result;
use crate::format::fmt_sig;
use crate::integrate::{mc_expect_joint, posterior_variance, IntegrationConfig};
use crate::matrix_bounds::{
    check_loewner, mat_bound, mse_matrix_exact, MatrixFlavor, PsiComponent, VectorEstimator, VectorModel,
    VectorPsi,
};
use crate::model::{Estimator, ScalarModel};
use crate::testfn::{check_zero_condition, default_y_probes, PsiFamily, PsiSpec};

pub const BATTERY_H: [f64; 5] = [0.1, 0.25, 0.5, 1.0, 2.0];
pub const BATTERY_S: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
pub const LIMIT_H: [f64; 5] = [0.5, 0.25, 0.1, 0.05, 0.01];

/// Slack of every inequality check.
pub const SLACK: f64 = 1e-7;
const DIGITS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn g(v: f64) -> String {
    fmt_sig(v, DIGITS)
}

/// ww and cond over the battery grid, then the optimal psi.
pub fn psi_battery() -> Vec<PsiSpec> {
    let mut out = Vec::new();
    for family in [PsiFamily::Ww, PsiFamily::Cond] {
        for h in BATTERY_H {
            for s in BATTERY_S {
                out.push(match family {
                    PsiFamily::Ww => PsiSpec::ww(h, s).expect("valid battery point"),
                    _ => PsiSpec::cond(h, s).expect("valid battery point"),
                });
            }
        }
    }
    out.push(PsiSpec::optimal());
    out
}

fn label(spec: &PsiSpec) -> String {
    match (spec.h(), spec.s()) {
        (Some(h), Some(s)) => format!("{}(h={h},s={s})", spec.family().as_str()),
        _ => spec.family().as_str().to_string(),
    }
}

/// Runs a family of inequality evaluations, failing on any error.
fn upper_check(name: &str, results: Vec<(String, f64, Result<BoundResult>)>) -> Check {
    let mut worst: Option<(f64, String)> = None;
    let mut ok = 0usize;
    for (lbl, limit, r) in results {
        match r {
            Err(e) => return Check::new(name, false, format!("{lbl} failed: {e}")),
            Ok(r) => {
                if let (Status::Ok, Some(v)) = (r.status, r.value) {
                    ok += 1;
                    if worst.as_ref().map_or(true, |(w, _)| v - limit > *w) {
                        worst = Some((v - limit, lbl));
                    }
                }
            }
        }
    }
    match worst {
        None => Check::new(name, true, "no evaluable points"),
        Some((excess, lbl)) => Check::new(
            name,
            excess <= SLACK,
            format!("{ok} points, max excess {} at {lbl}", g(excess)),
        ),
    }
}

pub fn scalar_battery(model: &ScalarModel, cfg: &IntegrationConfig) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let risk = bayes_risk_exact(model, cfg)?.value.expect("exact risk is always ok");
    checks.push(Check::new("exact_risk", risk.is_finite() && risk >= 0.0, format!("value {}", g(risk))));
    if cfg.mc_samples > 0 {
        let mean = |y: f64| crate::integrate::posterior_mean(model, y, cfg);
        let est = mc_expect_joint(
            model,
            |y, theta| {
                let e = theta - mean(y).unwrap_or(f64::NAN);
                e * e
            },
            cfg.mc_samples,
            cfg.seed,
        )?;
        let dev = (est.estimate - risk).abs();
        checks.push(Check::new(
            "exact_risk_monte_carlo",
            dev <= 4.0 * est.std_error,
            format!("estimate {} with std error {}", g(est.estimate), g(est.std_error)),
        ));
    }

    let battery = psi_battery();
    // master inequalities over the averaged flavors
    let per_psi: Vec<[Result<BoundResult>; 3]> = battery
        .par_iter()
        .map(|spec| {
            [
                bound_global(model, spec, cfg),
                bound_avg_conditional(model, spec, cfg),
                bound_avg_theta(model, spec, cfg),
            ]
        })
        .collect();
    for (k, flavor) in [Flavor::Global, Flavor::AvgConditional, Flavor::AvgTheta].iter().enumerate() {
        for family in [PsiFamily::Ww, PsiFamily::Cond] {
            let results = battery
                .iter()
                .zip(&per_psi)
                .filter(|(s, _)| s.family() == family)
                .map(|(s, r)| (label(s), risk, r[k].clone()))
                .collect();
            checks.push(upper_check(
                &format!("master_inequality {} {}", flavor.as_str(), family.as_str()),
                results,
            ));
        }
    }
    let ww_specs: Vec<&PsiSpec> = battery.iter().filter(|s| s.family() == PsiFamily::Ww).collect();
    let ww_results: Vec<Result<BoundResult>> = ww_specs
        .par_iter()
        .map(|s| bound_ww(model, s.h().unwrap(), s.s().unwrap(), cfg))
        .collect();
    checks.push(upper_check(
        "master_inequality ww ww",
        ww_specs
            .iter()
            .zip(&ww_results)
            .map(|(s, r)| (label(s), risk, r.clone()))
            .collect(),
    ));

    // equality at the optimal psi
    let opt = &per_psi[battery.len() - 1];
    for (k, flavor) in [Flavor::Global, Flavor::AvgConditional, Flavor::AvgTheta].iter().enumerate() {
        let name = format!("optimal_equality {}", flavor.as_str());
        checks.push(match &opt[k] {
            Ok(BoundResult { value: Some(v), .. }) => Check::new(
                name,
                (v - risk).abs() <= SLACK,
                format!("bound {} vs risk {}", g(*v), g(risk)),
            ),
            Ok(r) => Check::new(name, false, format!("status {}", r.status.as_str())),
            Err(e) => Check::new(name, false, e.to_string()),
        });
    }

    // conditional flavors at each probe
    let probes = default_y_probes(model);
    let cond_rows: Vec<Result<(Vec<(String, f64, Result<BoundResult>)>, f64)>> = probes
        .par_iter()
        .map(|&y| {
            let pv = posterior_variance(model, y, cfg)?;
            let mut rows: Vec<(String, f64, Result<BoundResult>)> = battery
                .iter()
                .map(|s| (format!("{} y={y}", label(s)), pv, bound_conditional(model, s, y, cfg)))
                .collect();
            for s in &ww_specs {
                rows.push((
                    format!("ww_conditional {} y={y}", label(s)),
                    pv,
                    bound_ww_conditional(model, s.h().unwrap(), s.s().unwrap(), y, cfg),
                ));
            }
            let opt = bound_conditional(model, &PsiSpec::optimal(), y, cfg)?
                .value
                .unwrap_or(f64::NAN);
            Ok((rows, (opt - pv).abs()))
        })
        .collect();
    let mut all_rows = Vec::new();
    let mut opt_dev: f64 = 0.0;
    for row in cond_rows {
        let (rows, dev) = row?;
        all_rows.extend(rows);
        opt_dev = if dev.is_nan() || opt_dev.is_nan() { f64::NAN } else { opt_dev.max(dev) };
    }
    checks.push(upper_check("conditional_inequality", all_rows));
    checks.push(Check::new(
        "optimal_equality conditional",
        opt_dev <= SLACK,
        format!("max |bound - posterior variance| {} over {} probes", g(opt_dev), probes.len()),
    ));

    // zero condition for the joint-ratio family
    let zero: Vec<Result<f64>> = ww_specs
        .par_iter()
        .map(|s| check_zero_condition(model, s, &probes, cfg).map(|r| r.max_deviation))
        .collect();
    let mut worst: f64 = 0.0;
    let mut zero_err = None;
    for z in zero {
        match z {
            Ok(d) => worst = worst.max(d),
            Err(e) => zero_err = zero_err.or(Some(e)),
        }
    }
    checks.push(match zero_err {
        Some(e) => Check::new("zero_condition ww", false, e.to_string()),
        None => Check::new(
            "zero_condition ww",
            worst <= crate::testfn::ZERO_CONDITION_TOL,
            format!("max deviation {} over {} psi", g(worst), ww_specs.len()),
        ),
    });

    // the ww shortcut against the general form
    let mut gap: f64 = 0.0;
    for (shortcut, general) in ww_results.iter().zip(&per_psi) {
        if let (Ok(a), Ok(b)) = (shortcut, &general[0]) {
            if let (Some(a), Some(b)) = (a.value, b.value) {
                gap = gap.max((a - b).abs());
            }
        }
    }
    checks.push(Check::new(
        "ww_special_case",
        gap <= 1e-8,
        format!("max |ww - global| {}", g(gap)),
    ));

    // averaging the conditional ratio dominates the global ratio
    let mut shortfall = f64::NEG_INFINITY;
    for r in &per_psi {
        if let (Ok(gl), Ok(ac)) = (&r[0], &r[1]) {
            if let (Some(gv), Some(av)) = (gl.value, ac.value) {
                shortfall = shortfall.max(gv - av);
            }
        }
    }
    checks.push(Check::new(
        "avg_conditional_dominance",
        shortfall <= 1e-9,
        format!("max (global - avg_conditional) {}", g(shortfall.max(0.0))),
    ));

    // estimator dominance
    let estimators = [
        Estimator::new("0", |_| 0.0),
        Estimator::new("y", |y| y),
        Estimator::new("y/2", |y| 0.5 * y),
        Estimator::new("sign(y)", |y: f64| if y == 0.0 { 0.0 } else { y.signum() }),
    ];
    let mut min_gap = f64::INFINITY;
    for d in &estimators {
        min_gap = min_gap.min(mse_of_estimator(model, d, cfg)? - risk);
    }
    checks.push(Check::new(
        "estimator_dominance",
        min_gap >= -1e-8,
        format!("min (mse - risk) {} over {} estimators", g(min_gap), estimators.len()),
    ));

    // asymptotic value and the small-shift limit
    let asym = bound_asymptotic(model, cfg)?;
    let asym_ok = match asym.status {
        Status::Ok => asym.note.is_some(),
        Status::NonRegular => asym.value.is_none(),
        _ => false,
    };
    checks.push(Check::new(
        "asymptotic",
        asym_ok,
        match asym.value {
            Some(v) => format!("status ok, value {} (risk {}), regime note attached", g(v), g(risk)),
            None => format!("status {}", asym.status.as_str()),
        },
    ));
    if model.has_analytic_score() {
        let rep = small_shift_limit_check(model, &LIMIT_H, cfg)?;
        let last = rep.rows.last().expect("nonempty sequence");
        let passed = rep.monotone && last.bound_deviation <= 0.01 && last.denominator_deviation <= 0.01;
        checks.push(Check::new(
            "small_shift_limit",
            passed,
            format!(
                "bound {} -> {}, denominator/h^2 {} -> {}, monotone {}",
                g(last.bound),
                g(rep.bound_limit),
                g(last.denominator_over_h2),
                g(rep.denominator_limit),
                rep.monotone
            ),
        ));
    }
    Ok(checks)
}

/// Stacked vector test functions: one component per coordinate with
/// distinct shifts, plus a diagonal single component.
pub fn vector_psi_battery(model: &VectorModel) -> Vec<VectorPsi> {
    let p = model.parameter_dim();
    let mut out = vec![VectorPsi::Optimal];
    for family in [PsiFamily::Ww, PsiFamily::Cond] {
        for (hs, s) in [([0.5, 1.0], 0.5), ([1.0, 2.0], 0.3)] {
            let per_coord = (0..p)
                .map(|i| {
                    let mut shift = vec![0.0; p];
                    shift[i] = hs[i % 2];
                    PsiComponent { family, shift, s }
                })
                .collect();
            out.push(VectorPsi::stacked(per_coord).expect("valid battery"));
        }
        let diag = PsiComponent {
            family,
            shift: vec![0.75; p],
            s: 0.5,
        };
        out.push(VectorPsi::stacked(vec![diag]).expect("valid battery"));
    }
    out
}

fn psi_label(psi: &VectorPsi) -> String {
    match psi {
        VectorPsi::Optimal => "optimal".into(),
        VectorPsi::Constant(_) => "constant".into(),
        VectorPsi::Stacked(c) => {
            let parts: Vec<String> = c
                .iter()
                .map(|c| format!("{}{:?}^{}", c.family.as_str(), c.shift, c.s))
                .collect();
            format!("[{}]", parts.join(" "))
        }
    }
}

pub fn vector_battery(model: &VectorModel, cfg: &IntegrationConfig) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let sigma = mse_matrix_exact(model, &VectorEstimator::posterior_mean(model), cfg)?;
    let post = model.posterior_cov_g();
    let dev = (&sigma - &post).amax();
    checks.push(Check::new(
        "error_matrix",
        dev <= 1e-8,
        format!("max |Sigma - posterior covariance| {}", g(dev)),
    ));
    let m = model.observation_dim();
    let flavors = [
        MatrixFlavor::Global,
        MatrixFlavor::AvgConditional,
        MatrixFlavor::AvgTheta,
        MatrixFlavor::Conditional(vec![0.0; m]),
        MatrixFlavor::Conditional((0..m).map(|i| 0.5 + i as f64).collect()),
    ];
    let battery = vector_psi_battery(model);
    for flavor in &flavors {
        let reference: &DMatrix<f64> = match flavor {
            MatrixFlavor::Conditional(_) => &post,
            _ => &sigma,
        };
        let name = match flavor {
            MatrixFlavor::Conditional(y) => format!("loewner conditional y={y:?}"),
            f => format!("loewner {}", f.as_str()),
        };
        let mut min_eig = f64::INFINITY;
        let mut at = String::new();
        let mut failure = None;
        let mut opt_gap = f64::NAN;
        for psi in &battery {
            let r = mat_bound(model, psi, flavor, cfg)?;
            if !r.is_ok() {
                if matches!(psi, VectorPsi::Optimal) {
                    failure = Some(format!("optimal psi gave status {}", r.status.as_str()));
                }
                continue;
            }
            let c = check_loewner(reference, &r.bound_matrix, SLACK)?;
            if c.min_eigenvalue < min_eig {
                min_eig = c.min_eigenvalue;
                at = psi_label(psi);
            }
            if matches!(psi, VectorPsi::Optimal) {
                opt_gap = c.min_eigenvalue;
            }
        }
        let passed = failure.is_none() && min_eig >= -SLACK;
        checks.push(Check::new(
            &name,
            passed,
            failure.unwrap_or_else(|| format!("min eigenvalue {} at {at}", g(min_eig))),
        ));
        checks.push(Check::new(
            format!("optimal_{name}"),
            opt_gap.abs() <= SLACK,
            format!("lambda_min(reference - bound) {}", g(opt_gap)),
        ));
    }
    Ok(checks)
}
