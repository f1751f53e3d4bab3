use ergodiff::models::ou_model;
use ergodiff::sde::{simulate_ensemble, simulate_path, IntegratorConfig, SdeModel};
use ergodiff::stats::sample_variance;
use proptest::prelude::*;

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn ensemble_is_independent_of_thread_count() {
    let (m, _) = ou_model();
    let cfg = IntegratorConfig::new(0.01, 2.0, 17, 300).with_thinning(10);
    let one = in_pool(1, || simulate_ensemble(&m, &[1.0], &cfg, "ou").unwrap());
    let four = in_pool(4, || simulate_ensemble(&m, &[1.0], &cfg, "ou").unwrap());
    let (mut a, mut b) = (Vec::new(), Vec::new());
    one.write_csv(&mut a).unwrap();
    four.write_csv(&mut b).unwrap();
    assert_eq!(a, b);
}

#[test]
fn path_i_of_an_ensemble_replays_alone() {
    let (m, _) = ou_model();
    let cfg = IntegratorConfig::new(0.05, 1.0, 5, 40);
    let e = simulate_ensemble(&m, &[0.3], &cfg, "ou").unwrap();
    for i in [0usize, 7, 39] {
        assert_eq!(e.paths[i], simulate_path(&m, &[0.3], &cfg, i as u64).unwrap());
    }
}

/// Exact variance of the Euler chain `X ← (1 - h) X + √(2h) ξ` after `n` steps from 0.
fn euler_ou_variance(h: f64, n: usize) -> f64 {
    (0..n).fold(0.0, |v, _| (1.0 - h).powi(2) * v + 2.0 * h)
}

#[test]
fn terminal_variance_bias_shrinks_with_dt() {
    let (m, _) = ou_model();
    let t: f64 = 1.0;
    let exact = 1.0 - (-2.0 * t).exp();
    let mut biases = Vec::new();
    for (k, dt) in [0.02, 0.01, 0.005].into_iter().enumerate() {
        let cfg = IntegratorConfig::new(dt, t, 40 + k as u64, 100_000).with_thinning(1_000_000);
        let e = simulate_ensemble(&m, &[0.0], &cfg, "ou").unwrap();
        let v = sample_variance(&e.terminal_coordinate(0));
        let se = v * (2.0 / 100_000f64).sqrt();
        // The estimate tracks the discrete chain, whose bias is first order in dt.
        let chain = euler_ou_variance(dt, (t / dt).round() as usize);
        assert!((v - chain).abs() <= 4.0 * se, "dt {dt}: {v} vs chain {chain}");
        biases.push(((v - exact).abs(), se));
    }
    for w in biases.windows(2) {
        assert!(w[1].0 <= w[0].0 + 2.0 * (w[0].1 + w[1].1), "{biases:?}");
    }
}

#[test]
fn horizon_shorter_than_dt_is_rejected() {
    let (m, _) = ou_model();
    assert!(simulate_ensemble(&m, &[0.0], &IntegratorConfig::new(0.5, 0.1, 0, 1), "ou").is_err());
    assert!(simulate_ensemble(&m, &[0.0], &IntegratorConfig::new(0.1, 1.0, 0, 1).with_thinning(0), "ou").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ensembles_share_an_increasing_finite_grid(seed in any::<u64>(), n in 1usize..12, thin in 1usize..7, x0 in -3.0f64..3.0) {
        let (m, _) = ou_model();
        let cfg = IntegratorConfig::new(0.02, 0.5, seed, n).with_thinning(thin);
        let e = simulate_ensemble(&m, &[x0], &cfg, "ou").unwrap();
        prop_assert_eq!(e.paths.len(), n);
        for p in &e.paths {
            prop_assert_eq!(&p.times, &e.paths[0].times);
            prop_assert!(p.times.windows(2).all(|w| w[1] > w[0]));
            prop_assert!(p.states.iter().all(|v| v.is_finite()));
        }
        prop_assert!((e.times().last().unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn noiseless_integrator_is_first_order_euler(rate in 0.1f64..3.0, x0 in -5.0f64..5.0, steps in 10usize..400) {
        let m = SdeModel::new("decay", 1, 1, move |x, b| b[0] = -rate * x[0], |_, s| s[0] = 0.0);
        let t = 1.0;
        let dt = t / steps as f64;
        let cfg = IntegratorConfig::new(dt, t, 0, 1).with_thinning(steps);
        let p = simulate_path(&m, &[x0], &cfg, 0).unwrap();
        let got = p.terminal()[0];
        prop_assert!((got - x0 * (1.0 - rate * dt).powi(steps as i32)).abs() <= 1e-12 * (1.0 + x0.abs()));
        // Global error of explicit Euler on x' = -r x is at most r² t dt |x0| / 2 · e^{r t}.
        let bound = 0.5 * rate * rate * t * dt * x0.abs() * (rate * t).exp();
        prop_assert!((got - x0 * (-rate * t).exp()).abs() <= bound + 1e-12);
    }
}
