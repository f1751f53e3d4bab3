use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::sde::SdeModel;

/// `(x, y, out)`
pub type SlowField = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;

/// Fast diffusion `X` driving a slow variable `Y` through
/// `dY/dt = F(X, Y) + ε⁻¹ G(X, Y)`.
#[derive(Clone)]
pub struct FastSlowSystem {
    pub fast: SdeModel,
    pub dim_y: usize,
    f: SlowField,
    g: SlowField,
    /// Row-major `ℓ×ℓ`: entry `(i, j)` is `∂_{y_j} G_i`.
    grad_y_g: SlowField,
    /// Declared polynomial growth orders of `F`, `G` and `∇_y G` in `x`.
    pub growth_orders: [f64; 3],
    pub label: String,
}

impl fmt::Debug for FastSlowSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FastSlowSystem")
            .field("label", &self.label)
            .field("fast", &self.fast)
            .field("dim_y", &self.dim_y)
            .field("growth_orders", &self.growth_orders)
            .finish()
    }
}

impl FastSlowSystem {
    pub fn new<F, G, DG>(label: impl Into<String>, fast: SdeModel, dim_y: usize, f: F, g: G, grad_y_g: DG, growth_orders: [f64; 3]) -> Self
    where
        F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        G: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        DG: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        FastSlowSystem {
            fast,
            dim_y,
            f: Arc::new(f),
            g: Arc::new(g),
            grad_y_g: Arc::new(grad_y_g),
            growth_orders,
            label: label.into(),
        }
    }

    pub fn dim_x(&self) -> usize {
        self.fast.dim_x
    }

    #[inline]
    pub(crate) fn eval_f(&self, x: &[f64], y: &[f64], out: &mut [f64]) -> Result<()> {
        (self.f)(x, y, out);
        check("F", x, y, out)
    }

    #[inline]
    pub(crate) fn eval_g(&self, x: &[f64], y: &[f64], out: &mut [f64]) -> Result<()> {
        (self.g)(x, y, out);
        check("G", x, y, out)
    }

    #[inline]
    pub(crate) fn raw_f(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.f)(x, y, out)
    }

    #[inline]
    pub(crate) fn raw_g(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.g)(x, y, out)
    }

    #[inline]
    pub(crate) fn raw_grad(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.grad_y_g)(x, y, out)
    }

    pub fn f_at(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim_y];
        self.eval_f(x, y, &mut out)?;
        Ok(out)
    }

    pub fn g_at(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim_y];
        self.eval_g(x, y, &mut out)?;
        Ok(out)
    }

    pub fn grad_y_g_at(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim_y * self.dim_y];
        (self.grad_y_g)(x, y, &mut out);
        check("grad_y G", x, y, &out)?;
        Ok(out)
    }

    /// Largest relative discrepancy between `∇_y G` and central differences
    /// of `G` with step `h` over the probe pairs.
    pub fn gradient_consistency(&self, probes: &[(Vec<f64>, Vec<f64>)], h: f64) -> Result<f64> {
        let l = self.dim_y;
        let mut worst = 0.0_f64;
        for (x, y) in probes {
            let analytic = self.grad_y_g_at(x, y)?;
            for j in 0..l {
                let mut yp = y.clone();
                let mut ym = y.clone();
                yp[j] += h;
                ym[j] -= h;
                let gp = self.g_at(x, &yp)?;
                let gm = self.g_at(x, &ym)?;
                for i in 0..l {
                    let fd = (gp[i] - gm[i]) / (2.0 * h);
                    let a = analytic[i * l + j];
                    worst = worst.max((fd - a).abs() / a.abs().max(1.0));
                }
            }
        }
        Ok(worst)
    }

    /// Fraction of probes where some field exceeds `c (1 + |x|^q)` for its
    /// declared order `q`.
    pub fn growth_violations(&self, c: f64, probes: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
        if probes.is_empty() {
            return Ok(0.0);
        }
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let mut bad = 0;
        for (x, y) in probes {
            let r = norm(x);
            let fields = [self.f_at(x, y)?, self.g_at(x, y)?, self.grad_y_g_at(x, y)?];
            if fields.iter().zip(self.growth_orders).any(|(v, q)| norm(v) > c * (1.0 + r.powf(q))) {
                bad += 1;
            }
        }
        Ok(bad as f64 / probes.len() as f64)
    }
}

fn check(field: &'static str, x: &[f64], y: &[f64], out: &[f64]) -> Result<()> {
    if out.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteEvaluation {
            field,
            state: x.iter().chain(y).copied().collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn system() -> FastSlowSystem {
        let ou = SdeModel::new("ou", 1, 1, |x, b| b[0] = -x[0], |_, s| s[0] = 2f64.sqrt());
        FastSlowSystem::new(
            "t",
            ou,
            1,
            |_, y, o| o[0] = -y[0],
            |x, y, o| o[0] = x[0] * (1.0 + y[0] * y[0]).sqrt(),
            |x, y, o| o[0] = x[0] * y[0] / (1.0 + y[0] * y[0]).sqrt(),
            [0.0, 1.0, 1.0],
        )
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let probes: Vec<_> = [(-1.3, 0.4), (0.7, -2.0), (2.0, 1.1)].iter().map(|&(x, y)| (vec![x], vec![y])).collect();
        assert!(system().gradient_consistency(&probes, 1e-5).unwrap() <= 1e-4);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let s = system();
        let bad = FastSlowSystem::new("bad", s.fast.clone(), 1, |_, y, o| o[0] = -y[0], |x, _, o| o[0] = x[0], |_, _, o| o[0] = 1.0, [0.0, 1.0, 0.0]);
        assert!(bad.gradient_consistency(&[(vec![1.0], vec![0.0])], 1e-5).unwrap() > 0.5);
    }

    #[test]
    fn growth_spot_check_passes_with_generous_constant() {
        let probes: Vec<_> = (0..20).map(|i| (vec![i as f64 - 10.0], vec![0.5])).collect();
        let s = system();
        assert_eq!(s.growth_violations(2.0, &probes).unwrap(), 0.0);
    }

    #[test]
    fn nonfinite_field_is_an_error() {
        let s = FastSlowSystem::new("nan", system().fast, 1, |_, _, o| o[0] = f64::NAN, |_, _, o| o[0] = 0.0, |_, _, o| o[0] = 0.0, [0.0; 3]);
        assert!(matches!(s.f_at(&[0.0], &[0.0]), Err(Error::NonFiniteEvaluation { field: "F", .. })));
    }
}
