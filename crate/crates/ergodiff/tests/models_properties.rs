use ergodiff::models::{alpha, degenerate_example_model, model_by_label, system_by_label, MODEL_LABELS, SYSTEM_LABELS};
use nalgebra::Matrix2;
use proptest::prelude::*;

#[test]
fn every_label_resolves() {
    for l in MODEL_LABELS {
        assert_eq!(model_by_label(l).unwrap().label, l);
    }
    for l in SYSTEM_LABELS {
        assert_eq!(system_by_label(l).unwrap().label, l);
    }
}

#[test]
fn noise_vanishes_only_at_origin() {
    let d = degenerate_example_model(0.1);
    assert_eq!(d.model.diffusion_at(&[0.0, 0.0]).unwrap(), vec![0.0; 4]);
    assert!(d.model.diffusion_at(&[1e-8, 0.0]).unwrap()[0] > 0.0);
}

#[test]
fn flow_from_origin_leaves_low_noise_ball_in_closed_form_time() {
    let d = degenerate_example_model(0.1);
    // Along e₁ the flow is x(t) = 1 - e^{-t}; it reaches r = 1/3 at t = ln 1.5.
    let t = d.flow_exit_time([0.0, 0.0], 1e-5, 10.0).unwrap();
    assert!((t - 1.5f64.ln()).abs() < 2e-5);
    assert!(t <= d.flow_exit_bound);
}

proptest! {
    #[test]
    fn degenerate_covariance_is_isotropic_alpha_squared(x in -5.0f64..5.0, y in -5.0f64..5.0, delta in 0.01f64..0.49) {
        let d = degenerate_example_model(delta);
        let s = d.model.diffusion_at(&[x, y]).unwrap();
        let m = Matrix2::new(s[0], s[1], s[2], s[3]);
        let eig = (m * m.transpose()).symmetric_eigen().eigenvalues;
        let a2 = alpha(&[x, y]).powi(2);
        prop_assert!(eig.iter().all(|v| (v - a2).abs() <= 1e-14));
        prop_assert!(d.low_noise_radius.powi(2) / (1.0 + d.low_noise_radius.powi(2)) - delta < 1e-12);
    }

    #[test]
    fn flow_exit_never_exceeds_bound(theta in 0.0f64..std::f64::consts::TAU, frac in 0.0f64..0.999, delta in 0.02f64..0.45) {
        let d = degenerate_example_model(delta);
        let r = frac * d.low_noise_radius;
        let t = d.flow_exit_time([r * theta.cos(), r * theta.sin()], 1e-3, 20.0).unwrap();
        prop_assert!(t <= d.flow_exit_bound + 1e-3);
    }
}
