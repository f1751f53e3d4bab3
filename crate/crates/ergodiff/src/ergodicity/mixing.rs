//! Convergence of the transition law to the invariant law, measured as
//! shared-grid histogram total variation.

use serde::{Deserialize, Serialize};

use super::measure::EmpiricalMeasure;
use crate::error::{Error, Result};
use crate::rng;
use crate::sde::{par_map_indexed, SdeModel, Stepper, DEFAULT_GUARD_RADIUS};
use crate::stats::{linear_fit, tv_distance, tv_noise_band, BinSpec, Histogram};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixingOptions {
    pub n_paths: usize,
    pub dt: f64,
    /// Shared grid; the measure's own Freedman–Diaconis grid when absent.
    pub binning: Option<BinSpec>,
    pub seed: u64,
}

/// Fit `TV ≈ c (1 + t)^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedRate {
    pub c: f64,
    pub exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingReport {
    /// Requested times snapped to the integration grid.
    pub times: Vec<f64>,
    pub tv_estimates: Vec<f64>,
    /// Expected same-law histogram TV at the given sample sizes.
    pub noise_bands: Vec<f64>,
    pub fitted_rate: FittedRate,
    pub start_point: Vec<f64>,
    pub n_paths: usize,
}

impl MixingReport {
    /// Nonincreasing up to `bands` noise bands between consecutive times.
    pub fn is_nonincreasing_within(&self, bands: f64) -> bool {
        self.tv_estimates
            .windows(2)
            .zip(self.noise_bands.windows(2))
            .all(|(tv, nb)| tv[1] <= tv[0] + bands * (nb[0] + nb[1]))
    }

    /// The fitted tail decays at least as fast as `(1 + t)^{-(k+1)}`.
    pub fn dominates_polynomial(&self, k_plus_one: f64) -> bool {
        self.fitted_rate.exponent <= -k_plus_one
    }

    pub fn tv_at(&self, t: f64) -> Option<f64> {
        self.times
            .iter()
            .position(|s| (s - t).abs() < 1e-9 * (1.0 + t))
            .map(|i| self.tv_estimates[i])
    }
}

pub fn tv_decay_curve(model: &SdeModel, x0: &[f64], times: &[f64], mu_hat: &EmpiricalMeasure, opts: &MixingOptions) -> Result<MixingReport> {
    if times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) || times[0] < 0.0 {
        return Err(Error::invalid("times must be a nonempty increasing grid in [0, inf)"));
    }
    if opts.n_paths == 0 || !(opts.dt > 0.0) {
        return Err(Error::invalid("n_paths and dt must be positive"));
    }
    if mu_hat.dim != model.dim_x || x0.len() != model.dim_x {
        return Err(Error::invalid("measure, start point and model dimensions differ"));
    }
    let steps: Vec<usize> = times.iter().map(|t| (t / opts.dt).round() as usize).collect();
    if steps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("dt is too coarse to resolve the requested times"));
    }
    let snapped: Vec<f64> = steps.iter().map(|&n| n as f64 * opts.dt).collect();
    let d = model.dim_x;

    let recorded = par_map_indexed(opts.n_paths, |i| {
        let mut stepper = Stepper::new(model, x0, opts.dt, DEFAULT_GUARD_RADIUS, rng::stream(opts.seed, i as u64))?;
        let mut out = Vec::with_capacity(steps.len() * d);
        for &target in &steps {
            while stepper.steps_taken() < target {
                stepper.step()?;
            }
            out.extend_from_slice(stepper.state());
        }
        Ok(out)
    })?;

    let spec = opts.binning.clone().unwrap_or_else(|| mu_hat.histogram.spec.clone());
    let reference = if spec == mu_hat.histogram.spec {
        mu_hat.histogram.clone()
    } else {
        mu_hat.rebin(spec.clone())
    };
    let mut tv = Vec::with_capacity(steps.len());
    let mut bands = Vec::with_capacity(steps.len());
    for j in 0..steps.len() {
        let states: Vec<f64> = recorded.iter().flat_map(|r| r[j * d..(j + 1) * d].iter().copied()).collect();
        let h = Histogram::from_samples(spec.clone(), &states, None);
        tv.push(tv_distance(&h, &reference)?);
        bands.push(tv_noise_band(&reference, opts.n_paths, mu_hat.len()));
    }

    Ok(MixingReport {
        fitted_rate: fit_tail(&snapped, &tv),
        times: snapped,
        tv_estimates: tv,
        noise_bands: bands,
        start_point: x0.to_vec(),
        n_paths: opts.n_paths,
    })
}

/// Least squares of `log TV` on `log(1 + t)` over the second half of the grid.
fn fit_tail(times: &[f64], tv: &[f64]) -> FittedRate {
    let start = times.len() / 2;
    let (xs, ys): (Vec<f64>, Vec<f64>) = times[start..]
        .iter()
        .zip(&tv[start..])
        .filter(|(_, v)| **v > 0.0)
        .map(|(t, v)| ((1.0 + t).ln(), v.ln()))
        .unzip();
    if xs.len() < 2 {
        return FittedRate {
            c: tv.last().copied().unwrap_or(0.0),
            exponent: f64::NEG_INFINITY,
        };
    }
    let (intercept, slope) = linear_fit(&xs, &ys);
    FittedRate {
        c: intercept.exp(),
        exponent: slope,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BurnInPilot {
    pub burn_in: f64,
    pub reached: bool,
    pub report: MixingReport,
}

/// Pilot burn-in: the first grid time at which the TV curve from `x0` falls
/// below `threshold`, or `max_time` when it never does.
pub fn pilot_burn_in(model: &SdeModel, x0: &[f64], max_time: f64, threshold: f64, dt: f64, seed: u64) -> Result<BurnInPilot> {
    let pilot_opts = super::measure::InvariantOptions {
        burn_in: max_time,
        n_samples: 20_000,
        thinning_time: 0.5,
        dt,
        x0: Some(x0.to_vec()),
        seed: rng::derive_seed(seed, "pilot-measure", 0),
    };
    let mu = super::measure::estimate_invariant_measure(model, &pilot_opts)?;
    let times: Vec<f64> = (0..=20).map(|i| max_time * i as f64 / 20.0).collect();
    let opts = MixingOptions {
        n_paths: 4_000,
        dt,
        binning: None,
        seed: rng::derive_seed(seed, "pilot-mixing", 0),
    };
    let report = tv_decay_curve(model, x0, &times, &mu, &opts)?;
    let hit = report.tv_estimates.iter().position(|&v| v < threshold);
    Ok(BurnInPilot {
        burn_in: hit.map(|i| report.times[i]).unwrap_or(max_time),
        reached: hit.is_some(),
        report,
    })
}
