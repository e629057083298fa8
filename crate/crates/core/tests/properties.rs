use std::sync::Arc;

use monofbf::autodiff::{DenseLinear, DifferentiableMap};
use monofbf::fbf::{armijo_step, project_box, ArmijoConfig, BoxConstraint, MonotoneInclusion};
use monofbf::forward::{generate_motion_kernel, SaturationParams};
use monofbf::io::{decode_f32t, encode_f32t};
use monofbf::restore::{mae, psnr, ssim};
use monofbf::spectral::Reflected;
use monofbf::tensor::{conv2d_adjoint, conv2d_circular};
use monofbf::tv::{tv_gradient, tv_value, TvConfig};
use monofbf::{Image, Kernel, Tensor};
use proptest::prelude::*;

fn image(h: usize, w: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(0.0f64..1.0, h * w).prop_map(move |d| Image::new(h, w, d).unwrap())
}

fn sized_image() -> impl Strategy<Value = Image> {
    (3usize..12, 3usize..12).prop_flat_map(|(h, w)| image(h, w))
}

fn kernel(d: usize) -> impl Strategy<Value = Kernel> {
    prop::collection::vec(-1.0f64..1.0, d * d).prop_map(move |v| Kernel::new(d, v).unwrap())
}

fn dot(a: &Image, b: &Image) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x * y)
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_adjoint_identity(x in image(7, 9), y in image(7, 9), k in kernel(5)) {
        let lhs = dot(&conv2d_circular(&x, &k).unwrap(), &y);
        let rhs = dot(&x, &conv2d_adjoint(&y, &k).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn normalized_conv_preserves_mean(x in sized_image(), seed in 0u64..1000) {
        let k = generate_motion_kernel(3, 5, seed).unwrap();
        let y = conv2d_circular(&x, &k).unwrap();
        prop_assert!((y.as_tensor().mean() - x.as_tensor().mean()).abs() < 1e-12);
    }

    #[test]
    fn projection_is_idempotent_and_feasible(v in prop::collection::vec(-3.0f64..3.0, 1..50),
                                             lo in -1.0f64..0.5, width in 0.0f64..2.0) {
        let c = BoxConstraint::new(lo, lo + width).unwrap();
        let p = project_box(&Tensor::from_vec(v), &c);
        prop_assert!(c.contains(&p));
        prop_assert_eq!(project_box(&p, &c), p);
    }

    #[test]
    fn projection_is_nonexpansive(a in prop::collection::vec(-3.0f64..3.0, 20),
                                  b in prop::collection::vec(-3.0f64..3.0, 20)) {
        let c = BoxConstraint::default();
        let (a, b) = (Tensor::from_vec(a), Tensor::from_vec(b));
        let d = project_box(&a, &c).sub(&project_box(&b, &c)).unwrap().norm();
        prop_assert!(d <= a.sub(&b).unwrap().norm() + 1e-15);
    }

    #[test]
    fn saturation_is_increasing_and_fixes_half(delta in 0.01f64..5.0, s in 0.0f64..1.0, t in 0.0f64..1.0) {
        let p = SaturationParams::new(delta).unwrap();
        prop_assert!((p.value(0.5) - 0.5).abs() < 1e-15);
        if s < t {
            prop_assert!(p.value(s) <= p.value(t));
        }
        prop_assert!(p.deriv(s) > 0.0 && p.deriv(s) <= delta);
        prop_assert!((p.value(s) + p.value(1.0 - s) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn metrics_are_symmetric(x in image(12, 13), y in image(12, 13)) {
        prop_assert_eq!(psnr(&x, &y).unwrap(), psnr(&y, &x).unwrap());
        prop_assert_eq!(ssim(&x, &y).unwrap(), ssim(&y, &x).unwrap());
        prop_assert_eq!(mae(&x, &y).unwrap(), mae(&y, &x).unwrap());
        prop_assert!(ssim(&x, &y).unwrap() <= 1.0 + 1e-12);
    }

    #[test]
    fn tv_is_convex_along_segments(x in image(6, 6), y in image(6, 6), t in 0.0f64..1.0) {
        let cfg = TvConfig::default();
        let mid = Image::from_tensor(x.as_tensor().scale(t).axpy(1.0 - t, y.as_tensor()).unwrap()).unwrap();
        let bound = t * tv_value(&x, &cfg) + (1.0 - t) * tv_value(&y, &cfg);
        prop_assert!(tv_value(&mid, &cfg) <= bound + 1e-10);
    }

    #[test]
    fn tv_gradient_is_monotone(x in image(6, 6), y in image(6, 6)) {
        let cfg = TvConfig::default();
        let gx = tv_gradient(&x, &cfg);
        let gy = tv_gradient(&y, &cfg);
        let d = gx.as_tensor().sub(gy.as_tensor()).unwrap();
        let e = x.as_tensor().sub(y.as_tensor()).unwrap();
        prop_assert!(d.dot(&e).unwrap() >= -1e-12);
    }

    #[test]
    fn f32t_round_trip_is_exact_for_f32_values(v in prop::collection::vec(-1e6f32..1e6, 1..64)) {
        let t = Tensor::from_vec(v.iter().map(|&x| x as f64).collect());
        prop_assert_eq!(decode_f32t(&encode_f32t(&t)).unwrap(), t);
    }

    #[test]
    fn reflected_forward(v in prop::collection::vec(-2.0f64..2.0, 9), x in prop::collection::vec(-2.0f64..2.0, 3)) {
        let a = DenseLinear::new(3, 3, v).unwrap();
        let x = Tensor::from_vec(x);
        let r = Reflected::new(&a).forward(&x).unwrap();
        let expected = a.forward(&x).unwrap().scale(2.0).sub(&x).unwrap();
        prop_assert!(r.sub(&expected).unwrap().norm() < 1e-14);
    }

    #[test]
    fn accepted_armijo_steps_satisfy_the_rule(v in prop::collection::vec(-3.0f64..3.0, 16),
                                              x in prop::collection::vec(0.0f64..1.0, 4)) {
        let a = Arc::new(DenseLinear::new(4, 4, v).unwrap());
        let problem = MonotoneInclusion::new(a, Tensor::filled(&[4], -0.5), BoxConstraint::default()).unwrap();
        let cfg = ArmijoConfig::default();
        let x = Tensor::from_vec(x);
        let out = armijo_step(|t| problem.eval(t), &x, &problem.constraint, &cfg).unwrap();
        let bx = problem.eval(&x).unwrap();
        let lhs = out.gamma * out.bz.sub(&bx).unwrap().norm();
        prop_assert!(lhs <= cfg.theta * out.z.sub(&x).unwrap().norm() + 1e-15);
        prop_assert!(problem.constraint.contains(&out.z));
    }
}
