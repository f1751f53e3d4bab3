//! Empirical probes of the recurrence, regularity and growth conditions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::sde::{par_map_indexed, steps_for, SdeModel, Stepper, DEFAULT_GUARD_RADIUS};
use crate::stats::{mean_stderr, MeanEstimate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceRow {
    pub radius: f64,
    /// Max of `(b(x), x)` over the sampled sphere points.
    pub max_inner: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceScan {
    pub rows: Vec<RecurrenceRow>,
    /// Maxima strictly decrease over the radii and end negative.
    pub trends_to_minus_infinity: bool,
}

/// Sphere directions: `±1` in one dimension, equally spaced angles in two,
/// normalized Gaussian draws beyond.
pub fn sphere_directions(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    match dim {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count.max(1))
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / count.max(1) as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            let mut r = rng::stream(seed, 0);
            (0..count.max(1))
                .map(|_| {
                    let mut v = vec![0.0; dim];
                    loop {
                        rng::fill_normal(&mut r, &mut v);
                        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                        if n > 1e-12 {
                            v.iter_mut().for_each(|x| *x /= n);
                            break v;
                        }
                    }
                })
                .collect()
        }
    }
}

pub fn recurrence_scan(model: &SdeModel, radii: &[f64], directions_per_radius: usize, seed: u64) -> Result<RecurrenceScan> {
    if radii.is_empty() || radii.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::invalid("radii must be positive"));
    }
    let dirs = sphere_directions(model.dim_x, directions_per_radius, seed);
    let mut rows = Vec::with_capacity(radii.len());
    for &r in radii {
        let mut best = f64::NEG_INFINITY;
        for u in &dirs {
            let x: Vec<f64> = u.iter().map(|v| v * r).collect();
            let b = model.drift_at(&x)?;
            best = best.max(b.iter().zip(&x).map(|(p, q)| p * q).sum());
        }
        rows.push(RecurrenceRow { radius: r, max_inner: best });
    }
    let trends = rows.windows(2).all(|w| w[1].max_inner < w[0].max_inner) && rows.last().is_some_and(|r| r.max_inner < 0.0);
    Ok(RecurrenceScan {
        rows,
        trends_to_minus_infinity: trends,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitRow {
    pub point: Vec<f64>,
    pub probability: MeanEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitProbe {
    pub radius: f64,
    pub t0: f64,
    pub p_min: f64,
    pub argmin: usize,
    pub rows: Vec<ExitRow>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProbeBudget {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
}

/// Minimum over `grid` of the Monte Carlo estimate of `P_x(|X_{t0}| ≥ R + 1)`.
pub fn exit_time_probe(model: &SdeModel, radius: f64, t0: f64, grid: &[Vec<f64>], budget: &ProbeBudget) -> Result<ExitProbe> {
    if grid.is_empty() {
        return Err(Error::invalid("exit probe needs a nonempty grid"));
    }
    if grid.iter().any(|x| norm(x) > radius + 1e-12 || x.len() != model.dim_x) {
        return Err(Error::invalid("exit probe grid points must lie in the ball of radius R"));
    }
    if !(t0 > 0.0 && radius > 0.0 && budget.dt > 0.0) || budget.n_paths == 0 {
        return Err(Error::invalid("exit probe needs positive R, t0, dt and n_paths"));
    }
    let n_steps = steps_for(t0, budget.dt);
    let dt = t0 / n_steps as f64;
    let threshold = radius + 1.0;
    let mut rows = Vec::with_capacity(grid.len());
    for (g, x0) in grid.iter().enumerate() {
        let key = rng::derive_seed(budget.seed, "exit-probe", g as u64);
        let hits = par_map_indexed(budget.n_paths, |i| {
            let mut s = Stepper::new(model, x0, dt, DEFAULT_GUARD_RADIUS, rng::stream(key, i as u64))?;
            for _ in 0..n_steps {
                s.step()?;
            }
            Ok(if norm(s.state()) >= threshold { 1.0 } else { 0.0 })
        })?;
        rows.push(ExitRow {
            point: x0.clone(),
            probability: mean_stderr(&hits),
        });
    }
    let (argmin, p_min) = rows
        .iter()
        .enumerate()
        .map(|(i, r)| (i, r.probability.value))
        .fold((0, f64::INFINITY), |acc, v| if v.1 < acc.1 { v } else { acc });
    Ok(ExitProbe {
        radius,
        t0,
        p_min,
        argmin,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupGrowthRow {
    pub eps: f64,
    /// `ε E sup_{s ≤ T/ε²} |X_s|^p`
    pub scaled: MeanEstimate,
}

/// Scaled sup-moments over the fast horizon `T / ε²` for each ε.
pub fn sup_growth_diagnostic(
    model: &SdeModel,
    x0: &[f64],
    p: f64,
    horizon: f64,
    eps_list: &[f64],
    budget: &ProbeBudget,
) -> Result<Vec<SupGrowthRow>> {
    if !(p > 0.0 && horizon > 0.0) || eps_list.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
        return Err(Error::invalid("sup-growth needs p > 0, T > 0 and eps in (0, 1]"));
    }
    let mut rows = Vec::with_capacity(eps_list.len());
    for (e, &eps) in eps_list.iter().enumerate() {
        let fast_horizon = horizon / (eps * eps);
        let n_steps = steps_for(fast_horizon, budget.dt);
        let dt = fast_horizon / n_steps as f64;
        let key = rng::derive_seed(budget.seed, "sup-growth", e as u64);
        let sups = par_map_indexed(budget.n_paths, |i| {
            let mut s = Stepper::new(model, x0, dt, DEFAULT_GUARD_RADIUS, rng::stream(key, i as u64))?;
            let mut sup = norm(x0);
            for _ in 0..n_steps {
                s.step()?;
                sup = sup.max(norm(s.state()));
            }
            Ok(eps * sup.powf(p))
        })?;
        rows.push(SupGrowthRow {
            eps,
            scaled: mean_stderr(&sups),
        });
    }
    Ok(rows)
}

#[inline]
pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frozen() -> SdeModel {
        SdeModel::new("frozen", 1, 1, |_, b| b[0] = 0.0, |_, s| s[0] = 0.0)
    }

    #[test]
    fn recurrence_of_linear_restoring_drift() {
        let m = SdeModel::new("ou", 1, 1, |x, b| b[0] = -x[0], |_, s| s[0] = 1.0);
        let scan = recurrence_scan(&m, &[1.0, 2.0, 4.0], 4, 0).unwrap();
        for row in &scan.rows {
            assert_eq!(row.max_inner, -row.radius * row.radius);
        }
        assert!(scan.trends_to_minus_infinity);
    }

    #[test]
    fn recurrence_shifted_drift_bounded_by_cauchy_schwarz() {
        let m = SdeModel::new("shift", 2, 2, |x, b| {
            b[0] = 1.0 - x[0];
            b[1] = -x[1];
        }, |_, s| s.fill(0.0));
        let scan = recurrence_scan(&m, &[1.0, 2.0, 4.0, 8.0], 16, 0).unwrap();
        for row in &scan.rows {
            let exact = row.radius - row.radius * row.radius;
            assert!(row.max_inner <= exact + 1e-12);
            // Angle 0 is sampled, so the bound is attained.
            assert!((row.max_inner - exact).abs() < 1e-12);
        }
        assert!(scan.trends_to_minus_infinity);
    }

    #[test]
    fn repelling_drift_is_flagged() {
        let m = SdeModel::new("repel", 1, 1, |x, b| b[0] = x[0], |_, s| s[0] = 1.0);
        let scan = recurrence_scan(&m, &[1.0, 2.0, 4.0], 4, 0).unwrap();
        assert!(scan.rows.windows(2).all(|w| w[1].max_inner > w[0].max_inner && w[0].max_inner > 0.0));
        assert!(!scan.trends_to_minus_infinity);
    }

    #[test]
    fn frozen_process_never_exits() {
        let grid = vec![vec![-1.0], vec![0.0], vec![1.0]];
        let budget = ProbeBudget { n_paths: 50, dt: 0.1, seed: 3 };
        let probe = exit_time_probe(&frozen(), 1.0, 2.0, &grid, &budget).unwrap();
        assert_eq!(probe.p_min, 0.0);
        assert!(probe.rows.iter().all(|r| (0.0..=1.0).contains(&r.probability.value)));
    }

    #[test]
    fn exit_probe_rejects_points_outside_ball() {
        let budget = ProbeBudget { n_paths: 5, dt: 0.1, seed: 3 };
        assert!(exit_time_probe(&frozen(), 1.0, 1.0, &[vec![1.5]], &budget).is_err());
    }

    #[test]
    fn frozen_sup_growth_is_zero() {
        let budget = ProbeBudget { n_paths: 10, dt: 0.1, seed: 1 };
        let rows = sup_growth_diagnostic(&frozen(), &[0.0], 2.0, 1.0, &[0.5, 0.25], &budget).unwrap();
        assert!(rows.iter().all(|r| r.scaled.value == 0.0));
    }

    #[test]
    fn sup_growth_entries_nonnegative() {
        let m = SdeModel::new("ou", 1, 1, |x, b| b[0] = -x[0], |_, s| s[0] = 2f64.sqrt());
        let budget = ProbeBudget { n_paths: 50, dt: 0.05, seed: 1 };
        let rows = sup_growth_diagnostic(&m, &[0.0], 1.5, 1.0, &[1.0, 0.5], &budget).unwrap();
        assert!(rows.iter().all(|r| r.scaled.value >= 0.0));
    }
}
