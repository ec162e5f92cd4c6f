//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use common::channel::{Channel, Kind};
use common::gauss::Gauss;
use nalgebra::DMatrix;
use riskbound::bounds::{self, BoundResult, Status};
use riskbound::cli::run_with;
use riskbound::cli::verify::{psi_battery, vector_psi_battery, BATTERY_H, BATTERY_S, LIMIT_H, SLACK};
use riskbound::integrate::{self, mc_expect_joint, IntegrationConfig};
use riskbound::matrix_bounds::{
    check_loewner, make_linear_gaussian_vector_model, mat_bound, MatrixFlavor, VectorModel, VectorPsi,
};
use riskbound::model::{make_model, Estimator, ModelSpec, ScalarModel};
use riskbound::testfn::{check_zero_condition, default_y_probes, PsiSpec};
use riskbound::Result;

type Outcome = (bool, String);

fn cfg() -> IntegrationConfig {
    IntegrationConfig::default()
}

fn gg(vp: f64, vn: f64, n: usize) -> ScalarModel {
    make_model(ModelSpec::GaussianGaussian {
        var_prior: vp,
        var_noise: vn,
        n_obs: n,
    })
    .unwrap()
}

fn bsc() -> ScalarModel {
    make_model(ModelSpec::DiscreteChannel { flip_prob: 0.2 }).unwrap()
}

fn uniform() -> ScalarModel {
    make_model(ModelSpec::UniformLocation {
        prior_var: 1.0,
        width: 1.0,
    })
    .unwrap()
}

fn catalog() -> Vec<(&'static str, ScalarModel)> {
    vec![("gaussian", gg(1.0, 1.0, 1)), ("channel", bsc()), ("uniform", uniform())]
}

fn risk(model: &ScalarModel) -> f64 {
    bounds::bayes_risk_exact(model, &cfg()).unwrap().value.unwrap()
}

/// A few probes spread over the observation range.
fn probes(model: &ScalarModel) -> Vec<f64> {
    let all = default_y_probes(model);
    if all.len() <= 5 {
        all
    } else {
        all.iter().step_by(5).copied().collect()
    }
}

/// Largest `value - limit` over the ok results; errors fail the criterion.
struct Excess {
    worst: f64,
    ok: usize,
    errors: Vec<String>,
}

impl Excess {
    fn new() -> Self {
        Excess {
            worst: f64::NEG_INFINITY,
            ok: 0,
            errors: Vec::new(),
        }
    }

    fn add(&mut self, label: &str, limit: f64, r: Result<BoundResult>) {
        match r {
            Ok(r) => {
                if let (Status::Ok, Some(v)) = (r.status, r.value) {
                    self.ok += 1;
                    self.worst = self.worst.max(v - limit);
                }
            }
            Err(e) => self.errors.push(format!("{label}: {e}")),
        }
    }
}

fn criterion_1() -> Outcome {
    let c = cfg();
    let mut detail = Vec::new();
    let mut pass = true;
    for (vp, vn, n) in [(1.0, 1.0, 1), (2.0, 0.5, 3), (0.3, 4.0, 7)] {
        let want = Gauss::new(vp, vn, n).risk();
        let got = risk(&gg(vp, vn, n));
        pass &= (got - want).abs() <= 1e-8;
        detail.push(format!("gaussian({vp},{vn},{n}) err {:.1e}", (got - want).abs()));
    }
    let b = risk(&bsc());
    pass &= (b - 0.64).abs() <= 1e-12;
    detail.push(format!("channel {b:.15}"));

    let samples = 1_000_000;
    let m = gg(1.0, 1.0, 1);
    let mc = mc_expect_joint(&m, |t, th| (th - 0.5 * t).powi(2), samples, 7).unwrap();
    let z = (mc.estimate - 0.5).abs() / mc.std_error;
    pass &= z <= 4.0;
    detail.push(format!("gaussian MC z={z:.2}"));

    let u = uniform();
    let est = Estimator::new("half", |t| 0.5 * t);
    let quad = bounds::mse_of_estimator(&u, &est, &c).unwrap();
    let mc = mc_expect_joint(&u, |t, th| (th - 0.5 * t).powi(2), samples, 11).unwrap();
    let z = (mc.estimate - quad).abs() / mc.std_error;
    pass &= z <= 4.0;
    detail.push(format!("uniform MC z={z:.2}"));
    (pass, detail.join(", "))
}

fn criterion_2() -> Outcome {
    let c = cfg();
    let mut detail = Vec::new();
    let mut pass = true;
    for (name, model) in catalog() {
        let r = risk(&model);
        let ys = probes(&model);
        let post_var: Vec<f64> = ys
            .iter()
            .map(|&y| integrate::posterior_variance(&model, y, &c).unwrap())
            .collect();
        let mut ex = Excess::new();
        for spec in psi_battery() {
            let label = format!("{spec:?}");
            ex.add(&label, r, bounds::bound_global(&model, &spec, &c));
            ex.add(&label, r, bounds::bound_avg_conditional(&model, &spec, &c));
            ex.add(&label, r, bounds::bound_avg_theta(&model, &spec, &c));
            for (&y, &pv) in ys.iter().zip(&post_var) {
                ex.add(&label, pv, bounds::bound_conditional(&model, &spec, y, &c));
            }
        }
        for h in BATTERY_H {
            for s in BATTERY_S {
                ex.add("ww", r, bounds::bound_ww(&model, h, s, &c));
            }
        }
        pass &= ex.errors.is_empty() && ex.ok > 0 && ex.worst <= SLACK;
        detail.push(format!("{name}: {} ok, max excess {:.1e}", ex.ok, ex.worst));
        detail.extend(ex.errors.into_iter().take(3));
    }
    (pass, detail.join("; "))
}

fn criterion_3() -> Outcome {
    let c = cfg();
    let spec = PsiSpec::optimal();
    let mut worst: f64 = 0.0;
    for (_, model) in catalog() {
        let r = risk(&model);
        for v in [
            bounds::bound_global(&model, &spec, &c),
            bounds::bound_avg_conditional(&model, &spec, &c),
            bounds::bound_avg_theta(&model, &spec, &c),
        ] {
            worst = worst.max((v.unwrap().value.unwrap() - r).abs());
        }
        for y in probes(&model) {
            let v = bounds::bound_conditional(&model, &spec, y, &c).unwrap().value.unwrap();
            worst = worst.max((v - integrate::posterior_variance(&model, y, &c).unwrap()).abs());
        }
    }
    (worst <= 1e-7, format!("max |bound - attained| {worst:.1e}"))
}

fn criterion_4() -> Outcome {
    let c = cfg();
    let mut worst_ww: f64 = 0.0;
    for (_, model) in catalog() {
        let ys = default_y_probes(&model);
        for h in BATTERY_H {
            for s in BATTERY_S {
                let rep = check_zero_condition(&model, &PsiSpec::ww(h, s).unwrap(), &ys, &c).unwrap();
                worst_ww = worst_ww.max(rep.max_deviation);
            }
        }
    }
    let m = gg(1.0, 1.0, 1);
    let ys = default_y_probes(&m);
    let rep = check_zero_condition(&m, &PsiSpec::cond(1.0, 0.5).unwrap(), &ys, &c).unwrap();
    (
        worst_ww <= 1e-8 && !rep.passed && rep.max_deviation > 1e-3,
        format!(
            "ww max |E[psi|y]| {worst_ww:.1e}; gaussian cond max |E[psi|y]| {:.3} at y={}",
            rep.max_deviation, rep.worst_y
        ),
    )
}

fn criterion_5() -> Outcome {
    let v = bounds::bound_ww(&bsc(), 2.0, 0.5, &cfg()).unwrap().value.unwrap();
    let ch = Channel { eps: 0.2 };
    let oracle = ch.ww(&|y, t| ch.psi(Kind::Joint, 2.0, 0.5, y, t)).unwrap();
    (
        (v - 0.64).abs() <= 1e-12 && (oracle - 0.64).abs() <= 1e-12,
        format!("bound {v:.15}, enumeration {oracle:.15}"),
    )
}

fn criterion_6() -> Outcome {
    let rep = bounds::small_shift_limit_check(&gg(1.0, 1.0, 1), &LIMIT_H, &cfg()).unwrap();
    let last = rep.rows.last().unwrap();
    let dev = rep.final_bound_deviation();
    let pass = rep.monotone
        && dev <= 0.01
        && (last.denominator_over_h2 - 1.0).abs() <= 0.01
        && (rep.bound_limit - 0.25).abs() <= 1e-9;
    (
        pass,
        format!(
            "monotone={}, deviation at h={} is {dev:.2e}, denominator/h² {:.6}, limit {:.10}, order {:?}",
            rep.monotone, last.h, last.denominator_over_h2, rep.bound_limit, rep.fitted_order
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for n in [1usize, 10, 100, 1000] {
        let m = gg(1.0, 1.0, n);
        let r = bounds::bound_asymptotic(&m, &cfg()).unwrap();
        let ratio = r.value.unwrap() / risk(&m);
        let want = 1.0 + 1.0 / n as f64;
        let ok = (ratio - want).abs() <= 1e-6 && r.note.as_deref() == Some(bounds::ASYMPTOTIC_NOTE);
        pass &= ok;
        detail.push(format!("n={n} ratio err {:.1e}", (ratio - want).abs()));
    }
    (pass, detail.join(", "))
}

fn criterion_8() -> Outcome {
    let m = uniform();
    let asym = bounds::bound_asymptotic(&m, &cfg()).unwrap();
    let r = risk(&m);
    let mut ex = Excess::new();
    for h in BATTERY_H {
        for s in BATTERY_S {
            ex.add("ww", r, bounds::bound_ww(&m, h, s, &cfg()));
        }
    }
    (
        asym.status == Status::NonRegular && ex.errors.is_empty() && ex.ok > 0 && ex.worst <= SLACK,
        format!(
            "asymptotic status {}, ww {} ok points, max excess over risk {:.1e}",
            asym.status.as_str(),
            ex.ok,
            ex.worst
        ),
    )
}

fn vector_models() -> Vec<(&'static str, VectorModel)> {
    let eye = DMatrix::<f64>::identity(2, 2);
    vec![
        (
            "identity",
            make_linear_gaussian_vector_model(eye.clone(), eye.clone(), eye).unwrap(),
        ),
        (
            "correlated",
            make_linear_gaussian_vector_model(
                DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.3, 2.0]),
                DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]),
                DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 1.5]),
            )
            .unwrap(),
        ),
    ]
}

fn criterion_9() -> Outcome {
    let c = cfg();
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, model) in vector_models() {
        let sigma = model.posterior_cov_g();
        let flavors = [
            MatrixFlavor::Global,
            MatrixFlavor::AvgConditional,
            MatrixFlavor::AvgTheta,
            MatrixFlavor::Conditional(vec![0.0, 0.0]),
            MatrixFlavor::Conditional(vec![0.5, 1.5]),
        ];
        let (mut min_eig, mut opt_dev, mut evaluated) = (f64::INFINITY, 0.0f64, 0usize);
        for psi in vector_psi_battery(&model) {
            for flavor in &flavors {
                let r = match mat_bound(&model, &psi, flavor, &c) {
                    Ok(r) => r,
                    Err(e) => {
                        pass = false;
                        detail.push(format!("{name} {}: {e}", flavor.as_str()));
                        continue;
                    }
                };
                if !r.is_ok() {
                    continue;
                }
                evaluated += 1;
                let lo = check_loewner(&sigma, &r.bound_matrix, 1e-7).unwrap();
                pass &= lo.holds;
                min_eig = min_eig.min(lo.min_eigenvalue);
                if matches!(psi, VectorPsi::Optimal) {
                    let up = check_loewner(&r.bound_matrix, &sigma, 1e-7).unwrap();
                    pass &= up.holds;
                    opt_dev = opt_dev.max(lo.min_eigenvalue.abs()).max(up.min_eigenvalue.abs());
                }
            }
        }
        pass &= evaluated > 0;
        detail.push(format!(
            "{name}: {evaluated} bounds, min eig(Σ - B) {min_eig:.1e}, optimal deviation {opt_dev:.1e}"
        ));
    }
    (pass, detail.join("; "))
}

fn cli(args: &[&str]) -> (i32, Vec<u8>) {
    let argv: Vec<String> = std::iter::once("riskbound").chain(args.iter().copied()).map(String::from).collect();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_with(&argv, &mut out, &mut err);
    (code, out)
}

fn criterion_10() -> Outcome {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let path = |f: &str| configs.join(f).display().to_string();
    let runs: Vec<Vec<String>> = vec![
        vec!["verify".into(), "--config".into(), path("gg.json")],
        vec!["verify".into(), "--config".into(), path("bsc.json")],
        vec!["sweep".into(), "--config".into(), path("gg.json")],
        vec!["optimize".into(), "--config".into(), path("gg.json")],
    ];
    let all = || -> Vec<(i32, Vec<u8>)> {
        runs.iter()
            .map(|a| cli(&a.iter().map(String::as_str).collect::<Vec<_>>()))
            .collect()
    };
    let in_pool = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(all)
    };
    let reference = all();
    let variants = [all(), in_pool(1), in_pool(4)];
    let codes_ok = reference.iter().all(|(c, _)| *c == 0);
    let identical = variants.iter().all(|v| *v == reference);
    let bytes: usize = reference.iter().map(|(_, o)| o.len()).sum();
    (
        codes_ok && identical,
        format!(
            "{} commands, {bytes} bytes, exit codes {:?}, identical across repeat / 1 thread / 4 threads: {identical}",
            runs.len(),
            reference.iter().map(|(c, _)| *c).collect::<Vec<_>>()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("exact risk by quadrature and Monte Carlo", criterion_1),
        ("bounds never exceed the risk", criterion_2),
        ("optimal test function attains the risk", criterion_3),
        ("zero condition for the joint-ratio family", criterion_4),
        ("binary channel ww bound", criterion_5),
        ("small-shift limit", criterion_6),
        ("asymptotic bound against the risk", criterion_7),
        ("non-regular uniform model", criterion_8),
        ("matrix Loewner order", criterion_9),
        ("deterministic CLI output", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let (pass, detail) = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(o) => o,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        if !pass {
            failed += 1;
        }
        println!("{} criterion {:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" }, i + 1);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
