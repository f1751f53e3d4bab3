use std::fmt;
use std::sync::Arc;

use crate::ergodicity::EmpiricalMeasure;
use crate::error::{Error, Result};
use crate::stats::MeanEstimate;

type Evaluator = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A scalar observable `f - offset` together with what is known about its
/// mean under the invariant law.
#[derive(Clone)]
pub struct CenterableFunction {
    pub dim: usize,
    evaluator: Evaluator,
    /// Declared polynomial growth order.
    pub growth_beta: f64,
    /// Constant subtracted from the raw evaluator.
    pub offset: f64,
    /// Estimated invariant mean of the raw evaluator.
    pub mu_mean: Option<MeanEstimate>,
    pub label: String,
}

impl fmt::Debug for CenterableFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CenterableFunction")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("growth_beta", &self.growth_beta)
            .field("offset", &self.offset)
            .field("mu_mean", &self.mu_mean)
            .finish()
    }
}

impl CenterableFunction {
    pub fn new<F>(label: impl Into<String>, dim: usize, growth_beta: f64, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        CenterableFunction {
            dim,
            evaluator: Arc::new(f),
            growth_beta,
            offset: 0.0,
            mu_mean: None,
            label: label.into(),
        }
    }

    /// `x ↦ f(x, y)` for a fixed parameter `y`.
    pub fn parametric<F>(label: impl Into<String>, dim: usize, growth_beta: f64, y: Vec<f64>, f: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self::new(label, dim, growth_beta, move |x| f(x, &y))
    }

    pub fn zero(dim: usize) -> Self {
        Self::new("zero", dim, 0.0, |_| 0.0).declare_centered()
    }

    /// Record an exactly known zero invariant mean.
    pub fn declare_centered(mut self) -> Self {
        self.mu_mean = Some(MeanEstimate::exact(self.offset));
        self
    }

    /// Record an externally estimated invariant mean without subtracting it.
    pub fn with_mu_mean(mut self, mean: MeanEstimate) -> Self {
        self.mu_mean = Some(mean);
        self
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.evaluator)(x) - self.offset
    }

    #[inline]
    pub fn eval_raw(&self, x: &[f64]) -> f64 {
        (self.evaluator)(x)
    }

    /// Residual invariant mean after the offset, with its stderr.
    pub fn residual_mean(&self) -> Option<MeanEstimate> {
        self.mu_mean.map(|m| MeanEstimate {
            value: m.value - self.offset,
            stderr: m.stderr,
        })
    }

    /// `UncenteredInput` when the recorded mean is more than three standard
    /// errors away from the subtracted constant.
    pub fn check_centered(&self) -> Result<()> {
        let m = self
            .residual_mean()
            .ok_or_else(|| Error::invalid(format!("function '{}' has no recorded invariant mean; center it first", self.label)))?;
        let slack = 1e-12 * (1.0 + self.offset.abs());
        if m.value.abs() > 3.0 * m.stderr + slack {
            return Err(Error::UncenteredInput {
                mean: m.value,
                stderr: m.stderr,
            });
        }
        Ok(())
    }

    /// Fraction of `probes` violating `|f(x)| ≤ c (1 + |x|^β)`.
    pub fn growth_violations(&self, c: f64, probes: &[Vec<f64>]) -> f64 {
        if probes.is_empty() {
            return 0.0;
        }
        let bad = probes
            .iter()
            .filter(|x| {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                self.eval(x).abs() > c * (1.0 + r.powf(self.growth_beta))
            })
            .count();
        bad as f64 / probes.len() as f64
    }
}

/// Subtract the estimated invariant mean; the estimate is kept in `mu_mean`.
pub fn center_function(f: &CenterableFunction, mu_hat: &EmpiricalMeasure) -> Result<CenterableFunction> {
    if mu_hat.dim != f.dim {
        return Err(Error::invalid("measure and function dimensions differ"));
    }
    let est = mu_hat.expectation(|x| f.eval_raw(x)).estimate;
    let mut g = f.clone();
    g.offset = est.value;
    g.mu_mean = Some(est);
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ergodicity::Provenance;

    fn measure(samples: Vec<f64>) -> EmpiricalMeasure {
        let p = Provenance {
            model_label: "t".into(),
            burn_in: 0.0,
            thinning_time: 1.0,
            dt: 0.1,
            seed: 0,
        };
        EmpiricalMeasure::from_samples(1, samples, None, p).unwrap()
    }

    #[test]
    fn constant_centers_to_zero() {
        let mu = measure((0..100).map(|i| (i as f64).sin()).collect());
        let f = CenterableFunction::new("five", 1, 0.0, |_| 5.0);
        let g = center_function(&f, &mu).unwrap();
        assert!((g.offset - 5.0).abs() < 1e-12);
        assert!(g.eval(&[0.3]).abs() < 1e-12);
        g.check_centered().unwrap();
    }

    #[test]
    fn uncentered_mean_is_rejected() {
        let f = CenterableFunction::new("x", 1, 1.0, |x| x[0]).with_mu_mean(MeanEstimate { value: 1.0, stderr: 0.1 });
        assert!(matches!(f.check_centered(), Err(Error::UncenteredInput { .. })));
        let f = CenterableFunction::new("x", 1, 1.0, |x| x[0]);
        assert!(f.check_centered().is_err());
        CenterableFunction::zero(2).check_centered().unwrap();
    }

    #[test]
    fn parametric_captures_parameter() {
        let f = CenterableFunction::parametric("xy", 1, 1.0, vec![2.0], |x, y| x[0] * y[0]);
        assert_eq!(f.eval(&[1.5]), 3.0);
    }

    #[test]
    fn growth_spot_check() {
        let f = CenterableFunction::new("sq", 1, 2.0, |x| x[0] * x[0] - 1.0);
        let probes: Vec<Vec<f64>> = (-10..=10).map(|i| vec![i as f64 * 0.7]).collect();
        assert_eq!(f.growth_violations(1.0, &probes), 0.0);
        assert!(f.growth_violations(0.1, &probes) > 0.0);
    }
}
