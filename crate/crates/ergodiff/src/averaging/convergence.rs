use std::io::Write;

use serde::{Deserialize, Serialize};

use super::effective::{simulate_limit, EffectiveModel};
use super::simulate::{simulate_fast_slow, FastSlowOptions};
use super::system::FastSlowSystem;
use crate::error::{Error, Result};
use crate::rng;
use crate::sde::{Ensemble, IntegratorConfig};
use crate::stats::{ks_noise_floor, ks_two_sample, spearman, wasserstein1_two_sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceKind {
    /// Two-sample Kolmogorov–Smirnov, max over coordinates.
    KsMax,
    /// Two-sample Wasserstein-1, max over coordinates.
    Wasserstein1Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceBudget {
    pub n_paths: usize,
    pub n_limit_paths: usize,
    pub fast_dt: f64,
    pub limit_dt: f64,
    /// Slow-time spacing of the record grid; requested times must lie on it.
    pub record_dt: f64,
    pub distance: DistanceKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub eps_list: Vec<f64>,
    pub times: Vec<f64>,
    /// `distances[e][t]`
    pub distances: Vec<Vec<f64>>,
    pub distance_kind: DistanceKind,
    /// Spearman correlation of distance against ε at each time.
    pub trend: Vec<f64>,
    /// Two-sample KS 95% noise floor at the ensemble sizes.
    pub noise_floor: f64,
    pub stiffness_warnings: Vec<bool>,
}

impl ConvergenceReport {
    /// Columns exactly `eps, t, distance, trend_stat`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["eps", "t", "distance", "trend_stat"])?;
        for (e, eps) in self.eps_list.iter().enumerate() {
            for (j, t) in self.times.iter().enumerate() {
                w.write_record([eps.to_string(), t.to_string(), self.distances[e][j].to_string(), self.trend[j].to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn distance(a: &Ensemble, ia: usize, b: &Ensemble, ib: usize, kind: DistanceKind) -> f64 {
    (0..a.dim())
        .map(|c| {
            let (x, y) = (a.coordinate_at(ia, c), b.coordinate_at(ib, c));
            match kind {
                DistanceKind::KsMax => ks_two_sample(&x, &y),
                DistanceKind::Wasserstein1Max => wasserstein1_two_sample(&x, &y),
            }
        })
        .fold(0.0, f64::max)
}

fn record_indices(times: &[f64], record_dt: f64) -> Result<Vec<usize>> {
    times
        .iter()
        .map(|&t| {
            let k = (t / record_dt).round();
            if (k * record_dt - t).abs() > 1e-9 * (1.0 + t) || k < 0.0 {
                Err(Error::invalid(format!("time {t} is not on the record grid of spacing {record_dt}")))
            } else {
                Ok(k as usize)
            }
        })
        .collect()
}

/// Marginal distances between `Y^ε_t` and the limit diffusion at each
/// `(ε, t)`. Run `e` uses key `derive_seed(seed, "eps", e)`; the limit uses
/// `derive_seed(seed, "limit", 0)`.
#[allow(clippy::too_many_arguments)]
pub fn weak_convergence_report(
    system: &FastSlowSystem,
    effective: &EffectiveModel,
    y0: &[f64],
    x0: &[f64],
    eps_list: &[f64],
    times: &[f64],
    budget: &ConvergenceBudget,
    seed: u64,
) -> Result<ConvergenceReport> {
    if eps_list.is_empty() || eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("eps_list must be strictly decreasing"));
    }
    if times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) || times[0] < 0.0 {
        return Err(Error::invalid("times must be increasing and nonnegative"));
    }
    if !(budget.record_dt > 0.0 && budget.limit_dt > 0.0) || budget.n_limit_paths == 0 {
        return Err(Error::invalid("record_dt, limit_dt and n_limit_paths must be positive"));
    }
    let horizon = *times.last().unwrap();
    let idx = record_indices(times, budget.record_dt)?;
    let n_records = (horizon / budget.record_dt).round() as usize;
    let record_horizon = n_records as f64 * budget.record_dt;

    let per_record = ((budget.record_dt / budget.limit_dt) - 1e-9).ceil().max(1.0) as usize;
    let limit_cfg = IntegratorConfig {
        dt: budget.record_dt / per_record as f64,
        horizon: record_horizon,
        seed: rng::derive_seed(seed, "limit", 0),
        n_paths: budget.n_limit_paths,
        thinning: per_record,
        guard_radius: crate::sde::DEFAULT_GUARD_RADIUS,
    };
    let limit = simulate_limit(effective, y0, &limit_cfg)?;

    let mut distances = Vec::with_capacity(eps_list.len());
    let mut stiffness_warnings = Vec::with_capacity(eps_list.len());
    for (e, &eps) in eps_list.iter().enumerate() {
        let opts = FastSlowOptions {
            eps,
            horizon: record_horizon,
            fast_dt: budget.fast_dt,
            n_paths: budget.n_paths,
            seed: rng::derive_seed(seed, "eps", e as u64),
            record_dt: Some(budget.record_dt),
        };
        let run = simulate_fast_slow(system, x0, y0, &opts)?;
        stiffness_warnings.push(run.stiffness_warning);
        distances.push(idx.iter().map(|&k| distance(&run.y, k, &limit, k, budget.distance)).collect::<Vec<f64>>());
    }
    let trend = (0..times.len())
        .map(|j| {
            let d: Vec<f64> = distances.iter().map(|row| row[j]).collect();
            spearman(&d, eps_list)
        })
        .collect();
    Ok(ConvergenceReport {
        eps_list: eps_list.to_vec(),
        times: times.to_vec(),
        distances,
        distance_kind: budget.distance,
        trend,
        noise_floor: ks_noise_floor(budget.n_paths, budget.n_limit_paths),
        stiffness_warnings,
    })
}
