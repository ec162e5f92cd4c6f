use nalgebra::DMatrix;
use proptest::prelude::*;
use riskbound::bounds;
use riskbound::integrate::IntegrationConfig;
use riskbound::matrix_bounds::{
    check_loewner, make_linear_gaussian_vector_model, mat_bound, matrix_from_csv, matrix_to_csv, mse_matrix_exact,
    MatrixFlavor, MatrixStatus, PsiComponent, VectorEstimator, VectorModel, VectorPsi,
};
use riskbound::model::{make_model, ModelSpec, ScalarModel};
use riskbound::testfn::{PsiFamily, PsiSpec};
use riskbound::Error;

fn eye(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n)
}

fn unit_scalar() -> ScalarModel {
    make_model(ModelSpec::GaussianGaussian {
        var_prior: 1.0,
        var_noise: 1.0,
        n_obs: 1,
    })
    .unwrap()
}

fn single(family: PsiFamily, shift: Vec<f64>, s: f64) -> VectorPsi {
    VectorPsi::stacked(vec![PsiComponent { family, shift, s }]).unwrap()
}

fn scalar_spec(family: PsiFamily, h: f64, s: f64) -> PsiSpec {
    match family {
        PsiFamily::Ww => PsiSpec::ww(h, s).unwrap(),
        _ => PsiSpec::cond(h, s).unwrap(),
    }
}

fn entry(r: &riskbound::matrix_bounds::MatrixBoundResult) -> f64 {
    assert_eq!(r.status, MatrixStatus::Ok);
    r.bound_matrix[(0, 0)]
}

#[test]
fn one_dimensional_model_reduces_to_scalar_bounds() {
    let cfg = IntegrationConfig::default();
    let vm = make_linear_gaussian_vector_model(eye(1), eye(1), eye(1)).unwrap();
    let sm = unit_scalar();
    for family in [PsiFamily::Ww, PsiFamily::Cond] {
        for (h, s) in [(0.5, 0.5), (1.0, 0.3), (2.0, 0.9)] {
            let psi = single(family, vec![h], s);
            let spec = scalar_spec(family, h, s);
            let pairs = [
                (MatrixFlavor::Global, bounds::bound_global(&sm, &spec, &cfg).unwrap()),
                (MatrixFlavor::AvgConditional, bounds::bound_avg_conditional(&sm, &spec, &cfg).unwrap()),
                (MatrixFlavor::AvgTheta, bounds::bound_avg_theta(&sm, &spec, &cfg).unwrap()),
                (
                    MatrixFlavor::Conditional(vec![0.7]),
                    bounds::bound_conditional(&sm, &spec, 0.7, &cfg).unwrap(),
                ),
            ];
            for (flavor, scalar) in pairs {
                let m = entry(&mat_bound(&vm, &psi, &flavor, &cfg).unwrap());
                let v = scalar.value.unwrap();
                assert!((m - v).abs() <= 1e-10, "{family:?} h={h} s={s} {flavor:?}: {m} vs {v}");
            }
        }
    }
}

#[test]
fn selecting_one_coordinate_reduces_to_scalar_bound() {
    let cfg = IntegrationConfig::default();
    let vm = make_linear_gaussian_vector_model(eye(2), eye(2), eye(2))
        .unwrap()
        .with_target(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]))
        .unwrap();
    let sm = unit_scalar();
    for h in [0.25, 1.0, 2.0] {
        let psi = single(PsiFamily::Ww, vec![h, 0.0], 0.5);
        let m = entry(&mat_bound(&vm, &psi, &MatrixFlavor::Global, &cfg).unwrap());
        let v = bounds::bound_global(&sm, &PsiSpec::ww(h, 0.5).unwrap(), &cfg)
            .unwrap()
            .value
            .unwrap();
        assert!((m - v).abs() <= 1e-8, "h={h}: {m} vs {v}");
    }
}

fn correlated() -> VectorModel {
    make_linear_gaussian_vector_model(
        DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.3, 2.0]),
        DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]),
        DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 1.5]),
    )
    .unwrap()
}

#[test]
fn optimal_psi_attains_error_matrix() {
    let cfg = IntegrationConfig::default();
    let vm = correlated();
    let post = vm.posterior_cov().clone();
    for flavor in [
        MatrixFlavor::Global,
        MatrixFlavor::AvgConditional,
        MatrixFlavor::AvgTheta,
        MatrixFlavor::Conditional(vec![0.3, -1.0]),
    ] {
        let r = mat_bound(&vm, &VectorPsi::Optimal, &flavor, &cfg).unwrap();
        let diff = (&r.bound_matrix - &post).abs().max();
        assert!(diff <= 1e-8, "{flavor:?}: {diff}");
    }
}

#[test]
fn stacked_bounds_sit_below_error_matrix() {
    let cfg = IntegrationConfig::default();
    let vm = correlated();
    let post = vm.posterior_cov().clone();
    let psi = VectorPsi::stacked(vec![
        PsiComponent {
            family: PsiFamily::Ww,
            shift: vec![0.5, 0.0],
            s: 0.5,
        },
        PsiComponent {
            family: PsiFamily::Cond,
            shift: vec![0.0, 1.0],
            s: 0.3,
        },
    ])
    .unwrap();
    for flavor in [MatrixFlavor::Global, MatrixFlavor::AvgConditional, MatrixFlavor::AvgTheta] {
        let r = mat_bound(&vm, &psi, &flavor, &cfg).unwrap();
        assert!(check_loewner(&post, &r.bound_matrix, 1e-7).unwrap().holds, "{flavor:?}");
    }
}

#[test]
fn mse_of_posterior_mean_is_posterior_covariance() {
    let cfg = IntegrationConfig::default();
    let vm = correlated();
    let mse = mse_matrix_exact(&vm, &VectorEstimator::posterior_mean(&vm), &cfg).unwrap();
    assert!((&mse - vm.posterior_cov()).abs().max() <= 1e-9);
    // a shrunken posterior mean cannot beat it
    let pm = VectorEstimator::posterior_mean(&vm);
    let shrunk = VectorEstimator::new("shrunk", move |y| pm.apply(y).iter().map(|v| 0.8 * v).collect());
    let worse = mse_matrix_exact(&vm, &shrunk, &cfg).unwrap();
    assert!(check_loewner(&worse, vm.posterior_cov(), 1e-9).unwrap().holds);
}

#[test]
fn constant_psi_is_singular() {
    let cfg = IntegrationConfig::default();
    let vm = correlated();
    let r = mat_bound(&vm, &VectorPsi::Constant(vec![1.0, 2.0]), &MatrixFlavor::Global, &cfg).unwrap();
    assert_eq!(r.status, MatrixStatus::SingularPsiCov);
    assert!(r.bound_matrix.iter().all(|&v| v == 0.0));
}

#[test]
fn invalid_models_and_inputs() {
    let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    assert!(matches!(
        make_linear_gaussian_vector_model(eye(2), bad, eye(2)),
        Err(Error::NotSpd(_))
    ));
    let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
    assert!(matches!(check_loewner(&asym, &eye(2), 1e-9), Err(Error::NotSymmetric(_))));
    assert!(VectorPsi::stacked(vec![]).is_err());
}

fn spd(entries: [f64; 4]) -> DMatrix<f64> {
    let l = DMatrix::from_row_slice(2, 2, &[entries[0].abs() + 0.1, 0.0, entries[1], entries[2].abs() + 0.1]);
    &l * l.transpose()
}

proptest! {
    #[test]
    fn loewner_order_properties(a in prop::array::uniform4(-3.0f64..3.0), b in prop::array::uniform4(-3.0f64..3.0)) {
        let a = spd(a);
        let b = spd(b);
        prop_assert!(check_loewner(&a, &a, 1e-12).unwrap().holds);
        let sum = &a + &b;
        prop_assert!(check_loewner(&sum, &a, 1e-9).unwrap().holds);
        prop_assert!(!check_loewner(&a, &sum, 1e-9).unwrap().holds);
    }

    #[test]
    fn matrix_csv_round_trip(v in prop::array::uniform4(-1e6f64..1e6)) {
        let m = DMatrix::from_row_slice(2, 2, &v);
        let back = matrix_from_csv(&matrix_to_csv(&m, 17)).unwrap();
        prop_assert_eq!(m, back);
    }
}
