use serde::{Deserialize, Serialize};

use super::system::FastSlowSystem;
use crate::error::{Error, Result};
use crate::rng;
use crate::sde::{steps_for, Path, Stepper, DEFAULT_GUARD_RADIUS};
use crate::sde::{Dynamics, SdeModel};
use crate::stats::DEFAULT_BATCHES;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreenKuboOptions {
    pub lag_max: f64,
    /// Lag span over which the running integral must stay put.
    pub window: f64,
    /// Allowed drift over the window relative to the running value.
    pub rel_tol: f64,
}

impl Default for GreenKuboOptions {
    fn default() -> Self {
        GreenKuboOptions {
            lag_max: 15.0,
            window: 1.0,
            rel_tol: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreenKuboEstimate {
    pub y: Vec<f64>,
    /// Row-major `ℓ×ℓ`.
    pub a_gk: Vec<f64>,
    /// Batch-means standard errors at the same cutoff.
    pub a_stderr: Vec<f64>,
    /// Cutoff lag used for `a_gk`.
    pub lag: f64,
    pub plateau_found: bool,
    /// Running integral traces `(lag, ā_11, ā_12, …)` up to `lag_max`.
    pub running: Vec<(f64, Vec<f64>)>,
}

impl GreenKuboEstimate {
    /// `NoPlateau` unless a plateau was detected.
    pub fn require_plateau(&self) -> Result<&Self> {
        if self.plateau_found {
            Ok(self)
        } else {
            Err(Error::NoPlateau {
                lag_max: self.lag,
                partial: self.a_gk.first().copied().unwrap_or(0.0),
            })
        }
    }
}

/// Stationary record of the fast model: burn in, then store every
/// `record_dt` for `horizon` time units. `dt` is shrunk to divide `record_dt`.
pub fn stationary_run(model: &SdeModel, x0: &[f64], burn_in: f64, horizon: f64, dt: f64, record_dt: f64, seed: u64) -> Result<Path> {
    if !(burn_in >= 0.0 && horizon > 0.0 && dt > 0.0 && record_dt > 0.0 && record_dt <= horizon) {
        return Err(Error::invalid("stationary run needs burn_in >= 0 and 0 < record_dt <= horizon, dt > 0"));
    }
    let per_record = steps_for(record_dt, dt);
    let h = record_dt / per_record as f64;
    let mut s = Stepper::new(model, x0, h, DEFAULT_GUARD_RADIUS, rng::stream(seed, 0))?;
    for _ in 0..(if burn_in > 0.0 { steps_for(burn_in, h) } else { 0 }) {
        s.step()?;
    }
    let records = (horizon / record_dt).round().max(1.0) as usize;
    let d = model.dim_x();
    let mut times = Vec::with_capacity(records + 1);
    let mut states = Vec::with_capacity((records + 1) * d);
    times.push(0.0);
    states.extend_from_slice(s.state());
    for r in 1..=records {
        for _ in 0..per_record {
            s.step()?;
        }
        times.push(r as f64 * record_dt);
        states.extend_from_slice(s.state());
    }
    Ok(Path { times, dim: d, states })
}

/// `ā_kl(y) = ∫_0^∞ E_μ[G_k(X_0, y) G_l(X_t, y) + G_l(X_0, y) G_k(X_t, y)] dt`
/// from one stationary record, truncated at the first plateau of the running
/// trapezoid integral.
pub fn green_kubo_diffusion(system: &FastSlowSystem, y: &[f64], long_run: &Path, opts: &GreenKuboOptions) -> Result<GreenKuboEstimate> {
    let l = system.dim_y;
    let n = long_run.len();
    if y.len() != l || long_run.dim != system.dim_x() {
        return Err(Error::invalid("run or y dimension differs from the system"));
    }
    if n < 4 {
        return Err(Error::invalid("long run is too short"));
    }
    if !(opts.lag_max > 0.0 && opts.window > 0.0 && opts.rel_tol > 0.0) {
        return Err(Error::invalid("Green-Kubo options must be positive"));
    }
    let h = long_run.times[1] - long_run.times[0];
    if long_run.times.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(1.0)) {
        return Err(Error::invalid("Green-Kubo needs a uniformly spaced record"));
    }
    let max_lag = ((opts.lag_max / h).round() as usize).min(n - 2);
    let window = ((opts.window / h).round() as usize).max(1);

    let mut g = vec![0.0; n * l];
    for i in 0..n {
        system.eval_g(long_run.state(i), y, &mut g[i * l..(i + 1) * l])?;
    }
    for k in 0..l {
        let m = (0..n).map(|i| g[i * l + k]).sum::<f64>() / n as f64;
        for i in 0..n {
            g[i * l + k] -= m;
        }
    }

    // Per-batch lagged products: sums[b][j][k*l + m] over origins i in batch b.
    let n_batches = DEFAULT_BATCHES.min(n / 2).max(1);
    let mut sums = vec![vec![vec![0.0; l * l]; max_lag + 1]; n_batches];
    let mut counts = vec![vec![0usize; max_lag + 1]; n_batches];
    for (b, (bs, bc)) in sums.iter_mut().zip(counts.iter_mut()).enumerate() {
        let (lo, hi) = (b * n / n_batches, (b + 1) * n / n_batches);
        for j in 0..=max_lag {
            let end = hi.min(n - j);
            if end <= lo {
                continue;
            }
            bc[j] = end - lo;
            let acc = &mut bs[j];
            for i in lo..end {
                let (a, c) = (&g[i * l..(i + 1) * l], &g[(i + j) * l..(i + j + 1) * l]);
                for k in 0..l {
                    for m in 0..l {
                        acc[k * l + m] += a[k] * c[m];
                    }
                }
            }
        }
    }

    let running_of = |pick: &dyn Fn(usize) -> (Vec<f64>, usize)| -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(max_lag + 1);
        let mut acc = vec![0.0; l * l];
        let mut prev: Option<Vec<f64>> = None;
        out.push(acc.clone());
        for j in 0..=max_lag {
            let (s, c) = pick(j);
            let cov: Vec<f64> = s.iter().map(|v| if c > 0 { v / c as f64 } else { 0.0 }).collect();
            let sym: Vec<f64> = (0..l * l).map(|e| cov[e] + cov[(e % l) * l + e / l]).collect();
            if let Some(p) = prev {
                for e in 0..l * l {
                    acc[e] += 0.5 * h * (p[e] + sym[e]);
                }
                out.push(acc.clone());
            }
            prev = Some(sym);
        }
        out
    };
    let total = running_of(&|j| {
        let mut s = vec![0.0; l * l];
        let mut c = 0;
        for b in 0..n_batches {
            for e in 0..l * l {
                s[e] += sums[b][j][e];
            }
            c += counts[b][j];
        }
        (s, c)
    });

    let frob = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let plateau = (0..total.len().saturating_sub(window)).find(|&j| {
        let base = &total[j];
        let scale = opts.rel_tol * frob(base);
        (j + 1..=j + window).all(|k| frob(&total[k].iter().zip(base).map(|(a, b)| a - b).collect::<Vec<_>>()) <= scale)
    });
    let cut = plateau.unwrap_or(total.len() - 1);

    let per_batch: Vec<Vec<f64>> = (0..n_batches).map(|b| running_of(&|j| (sums[b][j].clone(), counts[b][j]))[cut].clone()).collect();
    let nb = n_batches as f64;
    let a_stderr = (0..l * l)
        .map(|e| {
            let m = per_batch.iter().map(|v| v[e]).sum::<f64>() / nb;
            if n_batches < 2 {
                return 0.0;
            }
            (per_batch.iter().map(|v| (v[e] - m).powi(2)).sum::<f64>() / (nb - 1.0) / nb).sqrt()
        })
        .collect();

    Ok(GreenKuboEstimate {
        y: y.to_vec(),
        a_gk: total[cut].clone(),
        a_stderr,
        lag: cut as f64 * h,
        plateau_found: plateau.is_some(),
        running: total.into_iter().enumerate().map(|(j, v)| (j as f64 * h, v)).collect(),
    })
}
