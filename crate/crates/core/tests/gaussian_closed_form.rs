mod common;

use common::gauss::Gauss;
use proptest::prelude::*;
use riskbound::bounds;
use riskbound::integrate::IntegrationConfig;
use riskbound::model::{make_model, ModelSpec, ScalarModel};
use riskbound::testfn::PsiSpec;

fn model(vp: f64, vn: f64, n: usize) -> ScalarModel {
    make_model(ModelSpec::GaussianGaussian {
        var_prior: vp,
        var_noise: vn,
        n_obs: n,
    })
    .unwrap()
}

fn close(got: f64, want: f64, rel: f64) -> bool {
    (got - want).abs() <= rel * want.abs().max(1e-12)
}

#[test]
fn unit_model_values() {
    let cfg = IntegrationConfig::default();
    let m = model(1.0, 1.0, 1);
    let g = Gauss::new(1.0, 1.0, 1);
    assert!((bounds::bayes_risk_exact(&m, &cfg).unwrap().value.unwrap() - 0.5).abs() < 1e-12);
    for (h, s) in [(0.25, 0.5), (1.0, 0.5), (2.0, 0.3), (0.5, 0.9)] {
        let ww = bounds::bound_ww(&m, h, s, &cfg).unwrap().value.unwrap();
        assert!(close(ww, g.ww(h, s), 1e-9), "ww h={h} s={s}: {ww} vs {}", g.ww(h, s));
        let spec = PsiSpec::ww(h, s).unwrap();
        let gl = bounds::bound_global(&m, &spec, &cfg).unwrap().value.unwrap();
        assert!(close(gl, g.global(true, h, s), 1e-9));
        // the zero condition makes both forms agree
        assert!(close(gl, ww, 1e-9));
    }
}

#[test]
fn avg_theta_matches_quadrature_free_reference() {
    let cfg = IntegrationConfig::default();
    let m = model(1.0, 1.0, 1);
    let g = Gauss::new(1.0, 1.0, 1);
    for (h, s) in [(0.5, 0.5), (1.0, 0.3), (2.0, 0.9)] {
        assert!(close(g.avg_theta(false, h, s), g.avg_theta_cond(h, s), 1e-12));
        for (joint, spec) in [(true, PsiSpec::ww(h, s).unwrap()), (false, PsiSpec::cond(h, s).unwrap())] {
            let v = bounds::bound_avg_theta(&m, &spec, &cfg).unwrap().value.unwrap();
            let want = g.avg_theta(joint, h, s);
            assert!(close(v, want, 1e-10), "{spec:?}: {v} vs {want}");
            let v = bounds::bound_avg_conditional(&m, &spec, &cfg).unwrap().value.unwrap();
            let want = g.avg_conditional(joint, h, s);
            assert!(close(v, want, 1e-10), "{spec:?}: {v} vs {want}");
        }
    }
}

#[test]
fn cond_avg_theta_reaches_limit() {
    let g = Gauss::new(1.0, 1.0, 1);
    // s = 1 ratio tends to g² σ² = 0.25 as h -> 0
    assert!((g.avg_theta_cond(1e-3, 1.0) - 0.25).abs() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ww_and_global_match_closed_form(
        vp in 0.25f64..4.0,
        vn in 0.25f64..4.0,
        n in 1usize..12,
        scaled_h in 0.1f64..2.0,
        s in 0.05f64..0.95,
        negative in any::<bool>(),
    ) {
        let cfg = IntegrationConfig::default();
        let m = model(vp, vn, n);
        let g = Gauss::new(vp, vn, n);
        let h = scaled_h * g.sv.sqrt() * if negative { -1.0 } else { 1.0 };

        let ww = bounds::bound_ww(&m, h, s, &cfg).unwrap().value.unwrap();
        prop_assert!(close(ww, g.ww(h, s), 1e-8), "ww {} vs {}", ww, g.ww(h, s));

        let spec = PsiSpec::ww(h, s).unwrap();
        let gw = bounds::bound_global(&m, &spec, &cfg).unwrap().value.unwrap();
        prop_assert!(close(gw, g.global(true, h, s), 1e-8));

        let spec = PsiSpec::cond(h, s).unwrap();
        let gc = bounds::bound_global(&m, &spec, &cfg).unwrap().value.unwrap();
        prop_assert!(close(gc, g.global(false, h, s), 1e-8), "cond {} vs {}", gc, g.global(false, h, s));

        prop_assert!(ww <= g.risk() * (1.0 + 1e-9));
        prop_assert!(gc <= g.risk() * (1.0 + 1e-9));
    }

    #[test]
    fn avg_theta_cond_matches_closed_form(
        vp in 0.25f64..4.0,
        vn in 0.25f64..4.0,
        n in 1usize..12,
        scaled_h in 0.1f64..2.0,
        s in 0.05f64..=1.0,
    ) {
        let cfg = IntegrationConfig::default();
        let m = model(vp, vn, n);
        let g = Gauss::new(vp, vn, n);
        let h = scaled_h * g.sv.sqrt();
        let spec = PsiSpec::cond(h, s).unwrap();
        let v = bounds::bound_avg_theta(&m, &spec, &cfg).unwrap().value.unwrap();
        prop_assert!(close(v, g.avg_theta_cond(h, s), 1e-8), "{} vs {}", v, g.avg_theta_cond(h, s));
        prop_assert!(v <= g.risk() * (1.0 + 1e-9));
    }
}
