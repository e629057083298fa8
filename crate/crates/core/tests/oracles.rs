//! Library results checked against dense linear algebra (nalgebra).

mod common;

use std::sync::Arc;

use common::*;
use monofbf::autodiff::{AdjointComposite, ConvMap, DenseLinear, ResidualConvNet};
use monofbf::fbf::{fbf_solve, ArmijoConfig, BoxConstraint, MonotoneInclusion, StopConfig};
use monofbf::forward::{generate_motion_kernel, SaturatedBlurModel, SaturationParams};
use monofbf::spectral::{
    lambda_min_sym_jacobian, monotonicity_certificate, ProbeConfig, Reflected,
};
use monofbf::tensor::{conv2d_adjoint, conv2d_circular};
use monofbf::tv::{TvConfig, TvGradient};
use monofbf::Tensor;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn vec_of(t: &Tensor) -> DVector<f64> {
    DVector::from_column_slice(t.as_slice())
}

#[test]
fn convolution_matches_dense_matrix() {
    let k = generate_motion_kernel(5, 7, 3).unwrap();
    let m = conv_matrix(&k, 6, 7);
    let x = uniform_image(1, 6, 7, 0.0, 1.0);
    let y = conv2d_circular(&x, &k).unwrap();
    let dense = &m * vec_of(x.as_tensor());
    assert!((dense - vec_of(y.as_tensor())).amax() < 1e-14);
    let a = conv2d_adjoint(&x, &k).unwrap();
    let dense = m.transpose() * vec_of(x.as_tensor());
    assert!((dense - vec_of(a.as_tensor())).amax() < 1e-14);
}

#[test]
fn jvp_and_vjp_assemble_the_same_jacobian() {
    let net = ResidualConvNet::standard(11);
    let x = uniform_image(2, 6, 6, 0.0, 1.0).into_tensor();
    let a = dense_jacobian(&net, &x);
    let b = dense_jacobian_from_vjp(&net, &x);
    assert!((a - b).amax() < 1e-12);

    let k = generate_motion_kernel(5, 6, 1).unwrap();
    let model = SaturatedBlurModel::new(vec![k], SaturationParams::new(0.6).unwrap()).unwrap();
    let a = dense_jacobian(&model, &x);
    let b = dense_jacobian_from_vjp(&model, &x);
    assert!((a - b).amax() < 1e-14);
}

#[test]
fn saturated_blur_jacobian_is_diag_times_conv() {
    let k = generate_motion_kernel(5, 8, 4).unwrap();
    let delta = 0.6;
    let sat = SaturationParams::new(delta).unwrap();
    let model = SaturatedBlurModel::new(vec![k.clone()], sat).unwrap();
    let x = uniform_image(3, 7, 7, 0.0, 1.0);
    let lx = conv2d_circular(&x, &k).unwrap();
    let d = DMatrix::from_diagonal(&DVector::from_iterator(
        49,
        lx.as_slice().iter().map(|&t| sat.deriv(t)),
    ));
    let expected = d * conv_matrix(&k, 7, 7);
    let j = dense_jacobian(&model, x.as_tensor());
    assert!((j - expected).amax() < 1e-14);
}

#[test]
fn probe_matches_dense_min_eigenvalue_of_random_linear_maps() {
    let mut r = rng(5);
    let mut checked = 0;
    for seed in 0..40u64 {
        let n = 24;
        let m: Vec<f64> = (0..n * n).map(|_| r.random_range(-1.0..1.0)).collect();
        let map = DenseLinear::new(n, n, m).unwrap();
        let x = Tensor::zeros(&[n]);
        let ev = sym_eigenvalues(&dense_jacobian(&map, &x));
        let radius = spectral_radius(&ev);
        if ev[1] - ev[0] < 0.05 * radius {
            continue;
        }
        let cfg = ProbeConfig {
            n_iter: 300,
            seed,
            ..ProbeConfig::default()
        };
        let est = lambda_min_sym_jacobian(&map, &x, &cfg, None).unwrap();
        assert!(
            (est.lambda_min - ev[0]).abs() <= 1e-6 * radius,
            "seed {seed}: {} vs {}",
            est.lambda_min,
            ev[0]
        );
        assert_eq!(est.rho_hat - est.chi_hat, est.lambda_min);
        checked += 1;
    }
    assert!(checked >= 5, "only {checked} maps had a usable eigengap");
}

#[test]
fn reflected_identity_holds_for_dense_spectra() {
    for seed in 0..5 {
        let net = ResidualConvNet::standard(seed);
        let x = uniform_image(seed + 100, 5, 5, 0.0, 1.0).into_tensor();
        let t = sym_lambda_min(&dense_jacobian(&net, &x));
        let r = sym_lambda_min(&dense_jacobian(&Reflected::new(&net), &x));
        assert!((r - (2.0 * t - 1.0)).abs() < 1e-10);
    }
}

#[test]
fn certificate_agrees_with_dense_oracle_on_sat_blur() {
    let k = generate_motion_kernel(5, 9, 2).unwrap();
    let model = SaturatedBlurModel::new(vec![k], SaturationParams::new(0.6).unwrap()).unwrap();
    let probes: Vec<Tensor> = (0..3)
        .map(|i| uniform_image(20 + i, 6, 6, 0.1, 0.9).into_tensor())
        .collect();
    let cfg = ProbeConfig {
        n_iter: 2000,
        ..ProbeConfig::default()
    };
    let report = monotonicity_certificate(&model, &probes, 0.0, &cfg).unwrap();
    for (s, x) in report.samples.iter().zip(&probes) {
        let ev = sym_eigenvalues(&dense_jacobian(&model, x));
        assert!(
            // no eigengap control here, so only a loose agreement
            (s.lambda_min_t - ev[0]).abs() <= 1e-2 * spectral_radius(&ev),
            "{} vs {}",
            s.lambda_min_t,
            ev[0]
        );
    }
    assert!(report.min_lambda_t < 0.0);
    assert!(!report.passed);
}

#[test]
fn adjoint_composite_is_positive_semidefinite() {
    let k = generate_motion_kernel(5, 9, 6).unwrap();
    let model =
        SaturatedBlurModel::new(vec![k.clone()], SaturationParams::new(0.6).unwrap()).unwrap();
    let composite = AdjointComposite::new(k, 1.0, &model);
    for seed in 0..3 {
        let x = uniform_image(seed, 6, 6, 0.0, 1.0).into_tensor();
        assert!(sym_lambda_min(&dense_jacobian(&composite, &x)) >= -1e-12);
    }
}

#[test]
fn tv_hessian_is_symmetric_positive_semidefinite() {
    let map = TvGradient::new(TvConfig::default());
    let x = uniform_image(8, 6, 6, 0.0, 1.0).into_tensor();
    let h = dense_jacobian(&map, &x);
    assert!((&h - h.transpose()).amax() < 1e-10);
    assert!(sym_lambda_min(&h) >= -1e-10);
}

#[test]
fn fbf_matches_dense_solve_of_unconstrained_linear_system() {
    let n = 16;
    let mut r = rng(9);
    let mut a = DMatrix::<f64>::from_fn(n, n, |_, _| r.random_range(-0.3..0.3));
    a += DMatrix::identity(n, n) * 1.5;
    let b = DVector::<f64>::from_fn(n, |_, _| r.random_range(-1.0..1.0));
    let x_star = a.clone().lu().solve(&b).unwrap();

    let row_major: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| a[(i, j)])
        .collect();
    let map = Arc::new(DenseLinear::new(n, n, row_major).unwrap());
    let grad_h = Tensor::from_vec(b.iter().map(|v| -v).collect());
    let wide = BoxConstraint::new(-1e6, 1e6).unwrap();
    let problem = MonotoneInclusion::new(map, grad_h, wide).unwrap();
    let stop = StopConfig {
        max_iter: 5000,
        residual_tol: 1e-14,
    };
    let (x, _) = fbf_solve(
        &problem,
        &Tensor::zeros(&[n]),
        &ArmijoConfig::default(),
        &stop,
    )
    .unwrap();
    assert!((vec_of(&x) - x_star).amax() < 1e-10);
}

#[test]
fn conv_map_jacobian_is_the_convolution_matrix() {
    let k = generate_motion_kernel(3, 4, 8).unwrap();
    let map = ConvMap::new(k.clone(), 0.7);
    let x = Tensor::zeros(&[5, 5]);
    let j = dense_jacobian(&map, &x);
    assert!((j - conv_matrix(&k, 5, 5) * 0.7).amax() < 1e-15);
}
