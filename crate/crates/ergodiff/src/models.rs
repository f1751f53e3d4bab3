//! Shipped models with closed-form or quadrature oracles.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::averaging::FastSlowSystem;
use crate::sde::SdeModel;

/// Composite Simpson rule with `n` (rounded up to even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = (n.max(2) + 1) & !1;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn normal(mean: f64, sd: f64) -> Normal {
    Normal::new(mean, sd).expect("finite mean and positive sd")
}

/// `dX = -X dt + √2 dB`, stationary law `N(0, 1)`.
pub fn ou_model() -> (SdeModel, OuOracle) {
    let s = 2f64.sqrt();
    (SdeModel::new("ou", 1, 1, |x, b| b[0] = -x[0], move |_, o| o[0] = s), OuOracle)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OuOracle;

impl OuOracle {
    pub fn invariant_density(&self, x: f64) -> f64 {
        normal(0.0, 1.0).pdf(x)
    }

    pub fn invariant_variance(&self) -> f64 {
        1.0
    }

    pub fn transition_mean(&self, x: f64, t: f64) -> f64 {
        x * (-t).exp()
    }

    pub fn transition_variance(&self, t: f64) -> f64 {
        1.0 - (-2.0 * t).exp()
    }

    /// `E_x (X_t² - 1) = (x² - 1) e^{-2t}`
    pub fn transition_centered_square(&self, x: f64, t: f64) -> f64 {
        (x * x - 1.0) * (-2.0 * t).exp()
    }

    /// Poisson solution for `f(x) = x`.
    pub fn poisson_linear(&self, x: f64) -> f64 {
        x
    }

    /// Poisson solution for `f(x) = x² - 1`.
    pub fn poisson_quadratic(&self, x: f64) -> f64 {
        0.5 * (x * x - 1.0)
    }

    /// Total variation between the law at `t` from `x0` and `N(0, 1)`.
    pub fn tv_to_invariant(&self, x0: f64, t: f64) -> f64 {
        let m = self.transition_mean(x0, t);
        let v = self.transition_variance(t);
        if v == 0.0 {
            return 1.0;
        }
        let (p, q) = (normal(m, v.sqrt()), normal(0.0, 1.0));
        let lo = m.min(0.0) - 12.0;
        let hi = m.max(0.0) + 12.0;
        0.5 * simpson(|z| (p.pdf(z) - q.pdf(z)).abs(), lo, hi, 20_000)
    }

    /// `P_x(|X_t| ≥ level)`
    pub fn exit_probability(&self, x: f64, t: f64, level: f64) -> f64 {
        let n = normal(self.transition_mean(x, t), self.transition_variance(t).sqrt());
        n.sf(level) + n.cdf(-level)
    }

    /// Minimum of `P_x(|X_{t0}| ≥ R + 1)` over a fine grid of `[-R, R]`.
    pub fn exit_p_min(&self, radius: f64, t0: f64) -> f64 {
        (0..=400)
            .map(|i| -radius + 2.0 * radius * i as f64 / 400.0)
            .map(|x| self.exit_probability(x, t0, radius + 1.0))
            .fold(f64::INFINITY, f64::min)
    }

    /// `min_{x, x'} ∫_{-R}^{R} min(p_x, p_x')` for the one-step transition
    /// sub-densities restricted to the ball; a lower bound on the overlap of
    /// the chain observed on returns to the ball.
    pub fn doeblin_overlap_lower_bound(&self, radius: f64, t_b: f64, grid: &[f64]) -> f64 {
        let sd = self.transition_variance(t_b).sqrt();
        let mut q = 1.0_f64;
        for (i, &x) in grid.iter().enumerate() {
            for &x2 in &grid[i + 1..] {
                let (p1, p2) = (normal(self.transition_mean(x, t_b), sd), normal(self.transition_mean(x2, t_b), sd));
                q = q.min(simpson(|z| p1.pdf(z).min(p2.pdf(z)), -radius, radius, 8_000));
            }
        }
        q
    }
}

/// `dX = -X³ dt + √2 dB`, stationary density `∝ exp(-x⁴/4)`.
pub fn cubic_model() -> (SdeModel, CubicOracle) {
    let s = 2f64.sqrt();
    (SdeModel::new("cubic", 1, 1, |x, b| b[0] = -x[0] * x[0] * x[0], move |_, o| o[0] = s), CubicOracle)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CubicOracle;

impl CubicOracle {
    /// `E_μ |X|^m` by quadrature of the Gibbs density.
    pub fn moment(&self, m: f64) -> f64 {
        let w = |x: f64| (-x.powi(4) / 4.0).exp();
        simpson(|x| x.abs().powf(m) * w(x), -8.0, 8.0, 20_000) / simpson(w, -8.0, 8.0, 20_000)
    }
}

/// Degenerate planar diffusion with `b(x) = e₁ - x` and `σ(x) = α(x) I`,
/// `α(x) = |x|² / (1 + |x|²)`, vanishing only at the origin.
#[derive(Debug, Clone)]
pub struct DegenerateExample {
    pub model: SdeModel,
    pub delta: f64,
    /// `{α ≤ δ}` is the closed ball of this radius.
    pub low_noise_radius: f64,
    /// Uniform bound on the time the flow `ẋ = b(x)` needs to leave `{α ≤ δ}`.
    pub flow_exit_bound: f64,
}

pub fn alpha(x: &[f64]) -> f64 {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    r2 / (1.0 + r2)
}

/// Panics unless `delta ∈ (0, 1/2)`.
pub fn degenerate_example_model(delta: f64) -> DegenerateExample {
    assert!(delta > 0.0 && delta < 0.5, "delta must lie in (0, 1/2)");
    let model = SdeModel::new(
        "degenerate",
        2,
        2,
        |x, b| {
            b[0] = 1.0 - x[0];
            b[1] = -x[1];
        },
        |x, s| {
            let a = alpha(x);
            s[0] = a;
            s[1] = 0.0;
            s[2] = 0.0;
            s[3] = a;
        },
    );
    let r = (delta / (1.0 - delta)).sqrt();
    // The flow is x(t) = e₁ + (x₀ - e₁)e^{-t}, so |x(t)| ≥ 1 - (1 + r)e^{-t} from |x₀| ≤ r.
    let bound = ((1.0 + r) / (1.0 - r)).ln();
    DegenerateExample {
        model,
        delta,
        low_noise_radius: r,
        flow_exit_bound: bound,
    }
}

impl DegenerateExample {
    /// Time for `ẋ = e₁ - x` from `x0` to reach `{α > δ}`, by RK4 with step `h`;
    /// `None` if it stays inside up to `t_max`.
    pub fn flow_exit_time(&self, x0: [f64; 2], h: f64, t_max: f64) -> Option<f64> {
        let f = |x: [f64; 2]| [1.0 - x[0], -x[1]];
        let mut x = x0;
        let mut t = 0.0;
        while t <= t_max {
            if alpha(&x) > self.delta {
                return Some(t);
            }
            let k1 = f(x);
            let k2 = f([x[0] + 0.5 * h * k1[0], x[1] + 0.5 * h * k1[1]]);
            let k3 = f([x[0] + 0.5 * h * k2[0], x[1] + 0.5 * h * k2[1]]);
            let k4 = f([x[0] + h * k3[0], x[1] + h * k3[1]]);
            for i in 0..2 {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            t += h;
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchmarkVariant {
    /// `F = -y`, `G = x`
    A,
    /// `F = -y`, `G = x √(1 + y²)`
    B,
}

#[derive(Debug, Clone, Copy)]
pub struct BenchmarkOracle {
    pub variant: BenchmarkVariant,
}

impl BenchmarkOracle {
    pub fn b_bar(&self, y: f64) -> f64 {
        match self.variant {
            BenchmarkVariant::A => -y,
            BenchmarkVariant::B => 0.0,
        }
    }

    pub fn a_bar(&self, y: f64) -> f64 {
        match self.variant {
            BenchmarkVariant::A => 2.0,
            BenchmarkVariant::B => 2.0 * (1.0 + y * y),
        }
    }

    /// Limit law `N(y0 e^{-T}, 1 - e^{-2T})` of variant A.
    pub fn limit_mean_var(&self, y0: f64, t: f64) -> Option<(f64, f64)> {
        (self.variant == BenchmarkVariant::A).then(|| (y0 * (-t).exp(), 1.0 - (-2.0 * t).exp()))
    }
}

/// OU fast process with `ℓ = 1`.
pub fn benchmark_fast_slow(variant: BenchmarkVariant) -> (FastSlowSystem, BenchmarkOracle) {
    let (fast, _) = ou_model();
    let system = match variant {
        BenchmarkVariant::A => FastSlowSystem::new("benchmark-a", fast, 1, |_, y, o| o[0] = -y[0], |x, _, o| o[0] = x[0], |_, _, o| o[0] = 0.0, [0.0, 1.0, 0.0]),
        BenchmarkVariant::B => FastSlowSystem::new(
            "benchmark-b",
            fast,
            1,
            |_, y, o| o[0] = -y[0],
            |x, y, o| o[0] = x[0] * (1.0 + y[0] * y[0]).sqrt(),
            |x, y, o| o[0] = x[0] * y[0] / (1.0 + y[0] * y[0]).sqrt(),
            [0.0, 1.0, 1.0],
        ),
    };
    (system, BenchmarkOracle { variant })
}

pub const MODEL_LABELS: [&str; 3] = ["ou", "cubic", "degenerate"];
pub const SYSTEM_LABELS: [&str; 2] = ["benchmark-a", "benchmark-b"];
pub const DEFAULT_DELTA: f64 = 0.1;

pub fn model_by_label(label: &str) -> Option<SdeModel> {
    match label {
        "ou" => Some(ou_model().0),
        "cubic" => Some(cubic_model().0),
        "degenerate" => Some(degenerate_example_model(DEFAULT_DELTA).model),
        _ => None,
    }
}

pub fn system_by_label(label: &str) -> Option<FastSlowSystem> {
    match label {
        "benchmark-a" => Some(benchmark_fast_slow(BenchmarkVariant::A).0),
        "benchmark-b" => Some(benchmark_fast_slow(BenchmarkVariant::B).0),
        _ => None,
    }
}
