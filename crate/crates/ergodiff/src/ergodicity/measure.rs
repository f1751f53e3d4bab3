use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::sde::{steps_for, SdeModel, Stepper, DEFAULT_GUARD_RADIUS};
use crate::stats::{batch_means, BatchMeans, BinSpec, Histogram, MeanEstimate, DEFAULT_BATCHES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_label: String,
    pub burn_in: f64,
    pub thinning_time: f64,
    pub dt: f64,
    pub seed: u64,
}

/// Weighted sample cloud standing in for an invariant law, with a
/// Freedman–Diaconis histogram view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub dim: usize,
    /// Row-major samples.
    pub samples: Vec<f64>,
    pub weights: Vec<f64>,
    pub histogram: Histogram,
    pub provenance: Provenance,
}

impl EmpiricalMeasure {
    /// Build from samples; weights default to uniform and are normalized.
    pub fn from_samples(dim: usize, samples: Vec<f64>, weights: Option<Vec<f64>>, provenance: Provenance) -> Result<Self> {
        if dim == 0 || samples.is_empty() || samples.len() % dim != 0 {
            return Err(Error::invalid("samples must be a non-empty multiple of the dimension"));
        }
        let n = samples.len() / dim;
        let mut weights = weights.unwrap_or_else(|| vec![1.0; n]);
        if weights.len() != n || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("weights must be nonnegative, one per sample"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("weights must have positive mass"));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        let spec = if n >= 2 {
            BinSpec::freedman_diaconis(&samples, dim)?
        } else {
            BinSpec {
                origin: vec![0.0; dim],
                widths: vec![1.0; dim],
            }
        };
        let histogram = Histogram::from_samples(spec, &samples, Some(&weights));
        Ok(EmpiricalMeasure {
            dim,
            samples,
            weights,
            histogram,
            provenance,
        })
    }

    pub fn point_mass(x: &[f64]) -> Self {
        let provenance = Provenance {
            model_label: "point-mass".into(),
            burn_in: 0.0,
            thinning_time: 0.0,
            dt: 0.0,
            seed: 0,
        };
        Self::from_samples(x.len(), x.to_vec(), None, provenance).expect("a single finite point is a valid measure")
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.samples.chunks_exact(self.dim).zip(self.weights.iter().copied())
    }

    /// Weighted average of `f` with a batch-means standard error.
    pub fn expectation(&self, f: impl Fn(&[f64]) -> f64) -> BatchMeans {
        let values: Vec<f64> = self.samples.chunks_exact(self.dim).map(f).collect();
        batch_means(&values, &self.weights, DEFAULT_BATCHES)
    }

    /// Histogram of this measure on another grid.
    pub fn rebin(&self, spec: BinSpec) -> Histogram {
        Histogram::from_samples(spec, &self.samples, Some(&self.weights))
    }

    /// `k` evenly strided samples and their renormalized weights.
    pub fn subsample(&self, k: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let n = self.len();
        let k = k.clamp(1, n);
        let idx: Vec<usize> = (0..k).map(|j| j * n / k).collect();
        let total: f64 = idx.iter().map(|&i| self.weights[i]).sum();
        let points = idx.iter().map(|&i| self.sample(i).to_vec()).collect();
        let weights = idx.iter().map(|&i| self.weights[i] / total).collect();
        (points, weights)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvariantOptions {
    pub burn_in: f64,
    pub n_samples: usize,
    pub thinning_time: f64,
    pub dt: f64,
    /// Start of the long trajectory; the origin when absent.
    pub x0: Option<Vec<f64>>,
    pub seed: u64,
}

/// Long-run sampling of one trajectory after a burn-in.
///
/// `dt` is shrunk so that `thinning_time` is a whole number of steps.
pub fn estimate_invariant_measure(model: &SdeModel, opts: &InvariantOptions) -> Result<EmpiricalMeasure> {
    if !(opts.burn_in >= 0.0 && opts.thinning_time > 0.0 && opts.dt > 0.0) || opts.n_samples == 0 {
        return Err(Error::invalid("invariant sampling needs burn_in >= 0, thinning_time > 0, dt > 0, n_samples >= 1"));
    }
    let per_sample = steps_for(opts.thinning_time, opts.dt);
    let dt = opts.thinning_time / per_sample as f64;
    let x0 = opts.x0.clone().unwrap_or_else(|| vec![0.0; model.dim_x]);
    let mut stepper = Stepper::new(model, &x0, dt, DEFAULT_GUARD_RADIUS, rng::stream(opts.seed, 0))?;
    let burn = if opts.burn_in > 0.0 { steps_for(opts.burn_in, dt) } else { 0 };
    for _ in 0..burn {
        stepper.step()?;
    }
    let mut samples = Vec::with_capacity(opts.n_samples * model.dim_x);
    for _ in 0..opts.n_samples {
        for _ in 0..per_sample {
            stepper.step()?;
        }
        samples.extend_from_slice(stepper.state());
    }
    let provenance = Provenance {
        model_label: model.label.clone(),
        burn_in: opts.burn_in,
        thinning_time: opts.thinning_time,
        dt,
        seed: opts.seed,
    };
    EmpiricalMeasure::from_samples(model.dim_x, samples, None, provenance)
}

/// `E_μ̂ |X|^m` with batch-means standard error; `reliable` is false with
/// fewer than ten batches.
pub fn moment_estimate(measure: &EmpiricalMeasure, m: f64) -> Result<BatchMeans> {
    if !(m > 0.0) {
        return Err(Error::invalid("moment order must be positive"));
    }
    Ok(measure.expectation(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt().powf(m)))
}

/// First and second coordinate moments, used for cross-seed consistency checks.
pub fn coordinate_moments(measure: &EmpiricalMeasure, c: usize) -> (MeanEstimate, MeanEstimate) {
    let first = measure.expectation(|x| x[c]).estimate;
    let second = measure.expectation(|x| x[c] * x[c]).estimate;
    (first, second)
}
