//! Kernel-density overlap of the chain observed on returns to a ball.
//!
//! A chain started at `x ∈ B_R` records `X` at the first grid time at least
//! `t_B` after the previous record with the state back inside `B_R`. After
//! `n0` records the endpoint densities from each grid point are smoothed with
//! a Gaussian kernel and compared pairwise through `∫_B min(p̂_x, p̂_x')`.
//! Singular parts of the transition law are invisible to this estimator.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::probes::norm;
use crate::error::{Error, Result};
use crate::rng;
use crate::sde::{par_map_indexed, steps_for, SdeModel, Stepper, DEFAULT_GUARD_RADIUS};
use crate::stats::silverman_bandwidth;

const JACKKNIFE_GROUPS: usize = 8;
const KERNEL_CUTOFF: f64 = 6.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DoeblinOptions {
    pub n_chains: usize,
    /// Silverman's rule on the pooled endpoints when absent.
    pub bandwidth: Option<f64>,
    pub dt: f64,
    /// Time allowed for each return; chains exceeding it are dropped.
    pub return_cap: f64,
    /// Evaluation cells per axis over `[-R, R]`.
    pub cells_per_axis: Option<usize>,
    pub seed: u64,
}

impl DoeblinOptions {
    pub fn new(n_chains: usize, dt: f64, seed: u64) -> Self {
        DoeblinOptions {
            n_chains,
            bandwidth: None,
            dt,
            return_cap: 100.0,
            cells_per_axis: None,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOverlap {
    pub i: usize,
    pub j: usize,
    pub overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoeblinEstimate {
    pub radius: f64,
    pub t_b: f64,
    pub n0: usize,
    pub grid_points: Vec<Vec<f64>>,
    pub q_hat: f64,
    /// Delete-a-group jackknife over chain groups.
    pub q_stderr: f64,
    pub bandwidth: f64,
    pub pairs: Vec<PairOverlap>,
    /// Fraction of chains dropped per grid point for missing the return cap.
    pub drop_fraction: Vec<f64>,
    pub n_chains: usize,
}

impl DoeblinEstimate {
    pub fn overlap(&self, i: usize, j: usize) -> Option<f64> {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        self.pairs.iter().find(|p| p.i == a && p.j == b).map(|p| p.overlap)
    }

    /// One row per grid pair.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["i", "j", "overlap"])?;
        for p in &self.pairs {
            w.write_record([p.i.to_string(), p.j.to_string(), p.overlap.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn metadata_json(&self) -> serde_json::Value {
        serde_json::json!({
            "R": self.radius,
            "t_B": self.t_b,
            "n0": self.n0,
            "grid_points": self.grid_points,
            "q_hat": self.q_hat,
            "q_stderr": self.q_stderr,
            "bandwidth": self.bandwidth,
            "drop_fraction": self.drop_fraction,
            "n_chains": self.n_chains,
            "caveat": "kernel densities cannot detect singular parts of the transition law",
        })
    }
}

/// Endpoint `X_{n0}` of one embedded chain, or `None` on timeout.
fn run_chain(model: &SdeModel, x0: &[f64], radius: f64, n0: usize, gap_steps: usize, cap_steps: usize, dt: f64, rng: rng::StreamRng) -> Result<Option<Vec<f64>>> {
    let mut s = Stepper::new(model, x0, dt, DEFAULT_GUARD_RADIUS, rng)?;
    for _ in 0..n0 {
        for _ in 0..gap_steps {
            s.step()?;
        }
        let mut waited = 0;
        while norm(s.state()) > radius {
            if waited == cap_steps {
                return Ok(None);
            }
            s.step()?;
            waited += 1;
        }
    }
    Ok(Some(s.state().to_vec()))
}

/// Streams are keyed by the start point, so repeated grid points share chains.
fn point_key(seed: u64, x: &[f64]) -> u64 {
    x.iter().fold(seed, |k, v| rng::derive_seed(k, "doeblin", v.to_bits()))
}

/// Tensor grid of cell centers inside the ball, with the cell volume.
fn ball_cells(dim: usize, radius: f64, per_axis: usize) -> (Vec<Vec<f64>>, f64) {
    let h = 2.0 * radius / per_axis as f64;
    let total = per_axis.pow(dim as u32);
    let mut cells = Vec::new();
    for flat in 0..total {
        let mut rem = flat;
        let z: Vec<f64> = (0..dim)
            .map(|_| {
                let k = rem % per_axis;
                rem /= per_axis;
                -radius + (k as f64 + 0.5) * h
            })
            .collect();
        if norm(&z) <= radius {
            cells.push(z);
        }
    }
    (cells, h.powi(dim as i32))
}

/// Per-group kernel sums `Σ_i K_h(z - X_i)` at every cell.
fn group_kernel_sums(endpoints: &[(usize, Vec<f64>)], cells: &[Vec<f64>], h: f64, groups: usize) -> Vec<Vec<f64>> {
    let dim = cells.first().map_or(1, Vec::len);
    let norm_const = (std::f64::consts::TAU.sqrt() * h).powi(dim as i32);
    let cutoff2 = (KERNEL_CUTOFF * h).powi(2);
    let mut sums = vec![vec![0.0; cells.len()]; groups];
    for (g, x) in endpoints {
        let row = &mut sums[*g];
        for (c, z) in cells.iter().enumerate() {
            let d2: f64 = z.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < cutoff2 {
                row[c] += (-0.5 * d2 / (h * h)).exp() / norm_const;
            }
        }
    }
    sums
}

fn overlap(p: &[f64], q: &[f64], volume: f64) -> f64 {
    (p.iter().zip(q).map(|(a, b)| a.min(*b)).sum::<f64>() * volume).clamp(0.0, 1.0)
}

fn min_pairwise(densities: &[Vec<f64>], volume: f64) -> (f64, Vec<PairOverlap>) {
    let mut pairs = Vec::new();
    let mut q = 1.0_f64;
    for i in 0..densities.len() {
        for j in i..densities.len() {
            let o = overlap(&densities[i], &densities[j], volume);
            q = q.min(o);
            pairs.push(PairOverlap { i, j, overlap: o });
        }
    }
    (q, pairs)
}

pub fn doeblin_overlap_estimate(model: &SdeModel, radius: f64, t_b: f64, n0: usize, grid: &[Vec<f64>], opts: &DoeblinOptions) -> Result<DoeblinEstimate> {
    if grid.is_empty() || grid.iter().any(|x| x.len() != model.dim_x || norm(x) > radius + 1e-12) {
        return Err(Error::invalid("Doeblin grid must be nonempty and inside the ball"));
    }
    if n0 == 0 || !(radius > 0.0 && t_b > 0.0 && opts.dt > 0.0 && opts.return_cap > 0.0) {
        return Err(Error::invalid("Doeblin estimate needs positive R, t_B, dt, return cap and n0 >= 1"));
    }
    if opts.n_chains < JACKKNIFE_GROUPS {
        return Err(Error::invalid(format!("need at least {JACKKNIFE_GROUPS} chains per grid point")));
    }
    if opts.bandwidth.is_some_and(|h| !(h > 0.0)) {
        return Err(Error::invalid("bandwidth must be positive"));
    }
    let dim = model.dim_x;
    let per_axis = opts.cells_per_axis.unwrap_or(match dim {
        1 => 400,
        2 => 120,
        3 => 40,
        _ => 16,
    });
    let gap_steps = steps_for(t_b, opts.dt);
    let dt = t_b / gap_steps as f64;
    let cap_steps = (opts.return_cap / dt).ceil() as usize;

    let mut endpoints = Vec::with_capacity(grid.len());
    let mut drop_fraction = Vec::with_capacity(grid.len());
    for x0 in grid {
        let key = point_key(opts.seed, x0);
        let ends = par_map_indexed(opts.n_chains, |i| run_chain(model, x0, radius, n0, gap_steps, cap_steps, dt, rng::stream(key, i as u64)))?;
        let kept: Vec<(usize, Vec<f64>)> = ends
            .into_iter()
            .enumerate()
            .filter_map(|(i, e)| e.map(|x| (i * JACKKNIFE_GROUPS / opts.n_chains, x)))
            .collect();
        drop_fraction.push(1.0 - kept.len() as f64 / opts.n_chains as f64);
        if kept.len() < JACKKNIFE_GROUPS {
            return Err(Error::ReturnTimeout { total: opts.n_chains });
        }
        endpoints.push(kept);
    }

    let bandwidth = match opts.bandwidth {
        Some(h) => h,
        None => {
            let pooled: Vec<f64> = endpoints.iter().flatten().flat_map(|(_, x)| x.iter().copied()).collect();
            let per_density = endpoints.iter().map(Vec::len).min().unwrap_or(1);
            let h = silverman_bandwidth(&pooled, dim, per_density);
            if h > 0.0 {
                h
            } else {
                2.0 * radius / per_axis as f64
            }
        }
    };

    let (cells, volume) = ball_cells(dim, radius, per_axis);
    let sums = par_map_indexed(grid.len(), |g| Ok(group_kernel_sums(&endpoints[g], &cells, bandwidth, JACKKNIFE_GROUPS)))?;

    // Endpoints live in B, so each density is renormalized to unit mass on B.
    let density = |g: usize, leave_out: Option<usize>| -> Vec<f64> {
        let mut p: Vec<f64> = (0..cells.len())
            .map(|c| (0..JACKKNIFE_GROUPS).filter(|k| Some(*k) != leave_out).map(|k| sums[g][k][c]).sum::<f64>())
            .collect();
        let mass = p.iter().sum::<f64>() * volume;
        if mass > 0.0 {
            p.iter_mut().for_each(|v| *v /= mass);
        }
        p
    };

    let full: Vec<Vec<f64>> = (0..grid.len()).map(|g| density(g, None)).collect();
    let (q_hat, pairs) = min_pairwise(&full, volume);
    let leave_outs: Vec<f64> = (0..JACKKNIFE_GROUPS)
        .map(|k| {
            let d: Vec<Vec<f64>> = (0..grid.len()).map(|g| density(g, Some(k))).collect();
            min_pairwise(&d, volume).0
        })
        .collect();
    let m = leave_outs.iter().sum::<f64>() / JACKKNIFE_GROUPS as f64;
    let g = JACKKNIFE_GROUPS as f64;
    let q_stderr = ((g - 1.0) / g * leave_outs.iter().map(|q| (q - m) * (q - m)).sum::<f64>()).sqrt();

    Ok(DoeblinEstimate {
        radius,
        t_b,
        n0,
        grid_points: grid.to_vec(),
        q_hat,
        q_stderr,
        bandwidth,
        pairs,
        drop_fraction,
        n_chains: opts.n_chains,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ou() -> SdeModel {
        SdeModel::new("ou", 1, 1, |x, b| b[0] = -x[0], |_, s| s[0] = 2f64.sqrt())
    }

    #[test]
    fn identical_grid_points_overlap_fully() {
        let opts = DoeblinOptions::new(400, 0.05, 5);
        let est = doeblin_overlap_estimate(&ou(), 2.0, 1.0, 1, &[vec![0.5], vec![0.5]], &opts).unwrap();
        assert!((est.overlap(0, 1).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn overlap_is_symmetric_and_bounded() {
        let opts = DoeblinOptions::new(300, 0.05, 9);
        let grid = vec![vec![-1.5], vec![0.0], vec![1.5]];
        let est = doeblin_overlap_estimate(&ou(), 2.0, 1.0, 1, &grid, &opts).unwrap();
        assert_eq!(est.overlap(0, 2), est.overlap(2, 0));
        assert!((0.0..=1.0).contains(&est.q_hat));
        assert!(est.pairs.iter().all(|p| (0.0..=1.0).contains(&p.overlap)));
    }

    #[test]
    fn endpoints_stay_in_ball() {
        let m = ou();
        let e = run_chain(&m, &[1.0], 1.0, 3, 20, 100_000, 0.05, rng::stream(1, 0)).unwrap().unwrap();
        assert!(e[0].abs() <= 1.0);
    }

    #[test]
    fn frozen_outside_chain_times_out() {
        let m = SdeModel::new("escape", 1, 1, |_, b| b[0] = 1.0, |_, s| s[0] = 0.0);
        let opts = DoeblinOptions {
            return_cap: 1.0,
            ..DoeblinOptions::new(16, 0.1, 1)
        };
        let err = doeblin_overlap_estimate(&m, 1.0, 2.0, 1, &[vec![0.0]], &opts).unwrap_err();
        assert!(matches!(err, Error::ReturnTimeout { total: 16 }));
    }

    #[test]
    fn ball_cells_volume_approximates_disc() {
        let (cells, v) = ball_cells(2, 1.0, 200);
        assert!((cells.len() as f64 * v - std::f64::consts::PI).abs() < 0.01);
    }
}
