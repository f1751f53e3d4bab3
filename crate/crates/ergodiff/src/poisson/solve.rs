use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::function::CenterableFunction;
use crate::ergodicity::{pilot_burn_in, EmpiricalMeasure};
use crate::error::{Error, Result};
use crate::rng;
use crate::sde::{par_map_indexed, steps_for, Dynamics, SdeModel, Stepper, DEFAULT_GUARD_RADIUS};
use crate::stats::MeanEstimate;

const TAIL_RATIO_CAP: f64 = 0.9;
/// Below this many query points the work is split per path instead.
const POINT_PARALLEL_MIN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonOptions {
    pub horizon: f64,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
}

impl PoissonOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.dt > 0.0 && self.dt <= self.horizon) || self.n_paths == 0 {
            return Err(Error::invalid("Poisson solve needs 0 < dt <= horizon and n_paths >= 1"));
        }
        Ok(())
    }
}

/// Estimates of the truncated representation `u_N(x) = ∫_0^N E_x f(X_s) ds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonSolution {
    pub query_points: Vec<Vec<f64>>,
    pub u_values: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub horizon: f64,
    /// Step actually used, after fitting the horizon.
    pub dt: f64,
    /// Geometric extrapolation of the last-decile increment, max over points.
    pub tail_bound_estimate: f64,
    pub n_paths: usize,
    pub function_label: String,
    pub seed: u64,
}

impl PoissonSolution {
    pub fn len(&self) -> usize {
        self.u_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_values.is_empty()
    }

    pub fn estimate(&self, i: usize) -> MeanEstimate {
        MeanEstimate {
            value: self.u_values[i],
            stderr: self.stderrs[i],
        }
    }

    /// Columns `x_1..x_d, u, stderr`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let d = self.query_points.first().map_or(0, Vec::len);
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=d).map(|c| format!("x_{c}")).collect();
        header.push("u".into());
        header.push("stderr".into());
        w.write_record(&header)?;
        for ((x, u), s) in self.query_points.iter().zip(&self.u_values).zip(&self.stderrs) {
            let mut row: Vec<String> = x.iter().map(f64::to_string).collect();
            row.push(u.to_string());
            row.push(s.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn metadata_json(&self) -> serde_json::Value {
        serde_json::json!({
            "function": self.function_label,
            "N": self.horizon,
            "dt": self.dt,
            "tail_bound_estimate": self.tail_bound_estimate,
            "n_paths": self.n_paths,
            "n_query_points": self.len(),
            "seed": self.seed,
        })
    }
}

/// Per-point path-integral statistics for several outputs at once.
#[derive(Debug, Clone)]
pub(crate) struct PointIntegrals {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub tail: Vec<f64>,
}

struct PathIntegral {
    total: Vec<f64>,
    ninth: Vec<f64>,
    tenth: Vec<f64>,
}

fn integrate_one<D, E>(model: &D, x0: &[f64], n_steps: usize, dt: f64, n_out: usize, eval: &E, rng: rng::StreamRng) -> Result<PathIntegral>
where
    D: Dynamics + ?Sized,
    E: Fn(&[f64], &mut [f64]) + Sync,
{
    let mut s = Stepper::new(model, x0, dt, DEFAULT_GUARD_RADIUS, rng)?;
    let mut prev = vec![0.0; n_out];
    let mut cur = vec![0.0; n_out];
    eval(x0, &mut prev);
    let mut out = PathIntegral {
        total: vec![0.0; n_out],
        ninth: vec![0.0; n_out],
        tenth: vec![0.0; n_out],
    };
    let half = 0.5 * dt;
    for k in 0..n_steps {
        s.step()?;
        eval(s.state(), &mut cur);
        let decile = k * 10 / n_steps;
        for o in 0..n_out {
            let inc = half * (prev[o] + cur[o]);
            out.total[o] += inc;
            match decile {
                8 => out.ninth[o] += inc,
                9 => out.tenth[o] += inc,
                _ => {}
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(out)
}

fn reduce_point(paths: &[PathIntegral], n_out: usize) -> PointIntegrals {
    let n = paths.len() as f64;
    let mut mean = vec![0.0; n_out];
    let mut stderr = vec![0.0; n_out];
    let mut tail = vec![0.0; n_out];
    for o in 0..n_out {
        let m = paths.iter().map(|p| p.total[o]).sum::<f64>() / n;
        let var = if paths.len() > 1 {
            paths.iter().map(|p| (p.total[o] - m).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let r10 = (paths.iter().map(|p| p.tenth[o]).sum::<f64>() / n).abs();
        let r9 = (paths.iter().map(|p| p.ninth[o]).sum::<f64>() / n).abs();
        let ratio = if r9 > 0.0 { (r10 / r9).min(TAIL_RATIO_CAP) } else { TAIL_RATIO_CAP };
        mean[o] = m;
        stderr[o] = (var / n).sqrt();
        tail[o] = if r10 > 0.0 { r10 * ratio / (1.0 - ratio) } else { 0.0 };
    }
    PointIntegrals { mean, stderr, tail }
}

/// Trapezoidal integrals `∫_0^N g(X_s) ds` of the `n_out` outputs of `eval`
/// along `n_paths` paths from each point. Point `p` uses the key
/// `key(p)` with path index as stream id, so results do not depend on how the
/// work is split.
pub(crate) fn path_integrals<D, E>(
    model: &D,
    points: &[Vec<f64>],
    n_paths: usize,
    n_steps: usize,
    dt: f64,
    n_out: usize,
    key: impl Fn(usize) -> u64 + Sync,
    eval: E,
) -> Result<Vec<PointIntegrals>>
where
    D: Dynamics + ?Sized,
    E: Fn(&[f64], &mut [f64]) + Sync,
{
    if points.len() >= POINT_PARALLEL_MIN || n_paths == 1 {
        par_map_indexed(points.len(), |p| {
            let k = key(p);
            let paths = (0..n_paths)
                .map(|i| integrate_one(model, &points[p], n_steps, dt, n_out, &eval, rng::stream(k, i as u64)))
                .collect::<Result<Vec<_>>>()?;
            Ok(reduce_point(&paths, n_out))
        })
    } else {
        let flat = par_map_indexed(points.len() * n_paths, |j| {
            let (p, i) = (j / n_paths, j % n_paths);
            integrate_one(model, &points[p], n_steps, dt, n_out, &eval, rng::stream(key(p), i as u64))
        })?;
        Ok(flat.chunks(n_paths).map(|c| reduce_point(c, n_out)).collect())
    }
}

pub(crate) fn point_key(seed: u64, p: usize) -> u64 {
    rng::derive_seed(seed, "poisson", p as u64)
}

/// Solve for several centered functions along shared paths.
pub fn solve_poisson_mc_multi(model: &SdeModel, fs: &[CenterableFunction], query_points: &[Vec<f64>], opts: &PoissonOptions) -> Result<Vec<PoissonSolution>> {
    opts.validate()?;
    if fs.is_empty() {
        return Ok(Vec::new());
    }
    for f in fs {
        if f.dim != model.dim_x {
            return Err(Error::invalid(format!("function '{}' has dimension {}, model has {}", f.label, f.dim, model.dim_x)));
        }
        f.check_centered()?;
    }
    if query_points.iter().any(|x| x.len() != model.dim_x) {
        return Err(Error::invalid("query point dimension differs from the model"));
    }
    let n_steps = steps_for(opts.horizon, opts.dt);
    let dt = opts.horizon / n_steps as f64;
    let stats = path_integrals(model, query_points, opts.n_paths, n_steps, dt, fs.len(), |p| point_key(opts.seed, p), |x: &[f64], out: &mut [f64]| {
        for (o, f) in out.iter_mut().zip(fs) {
            *o = f.eval(x);
        }
    })?;
    Ok(fs
        .iter()
        .enumerate()
        .map(|(j, f)| PoissonSolution {
            query_points: query_points.to_vec(),
            u_values: stats.iter().map(|s| s.mean[j]).collect(),
            stderrs: stats.iter().map(|s| s.stderr[j]).collect(),
            horizon: opts.horizon,
            dt,
            tail_bound_estimate: stats.iter().map(|s| s.tail[j]).fold(0.0, f64::max),
            n_paths: opts.n_paths,
            function_label: f.label.clone(),
            seed: opts.seed,
        })
        .collect())
}

pub fn solve_poisson_mc(model: &SdeModel, f: &CenterableFunction, query_points: &[Vec<f64>], opts: &PoissonOptions) -> Result<PoissonSolution> {
    Ok(solve_poisson_mc_multi(model, std::slice::from_ref(f), query_points, opts)?.remove(0))
}

/// Horizon at which a pilot total-variation curve from `x_probe` drops below
/// 0.01, or `max_horizon` when it never does.
pub fn default_horizon(model: &SdeModel, x_probe: &[f64], max_horizon: f64, dt: f64, seed: u64) -> Result<f64> {
    let pilot = pilot_burn_in(model, x_probe, max_horizon, 0.01, dt, seed)?;
    Ok(pilot.burn_in.max(dt))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub x: Vec<f64>,
    pub residual: f64,
    pub stderr: f64,
    pub u_hat: f64,
    /// `Ê_x[û(X_t) + ∫_0^t f(X_s) ds]`
    pub propagated: f64,
}

/// `û(x) - Ê_x[û(X_t)] - Ê_x ∫_0^t f(X_s) ds` at every query point of
/// `solution`, with `û(X_t)` re-estimated by an inner solve of `⌈√n⌉` paths at
/// each outer endpoint.
pub fn poisson_residual(model: &SdeModel, solution: &PoissonSolution, f: &CenterableFunction, t: f64, n_paths: usize, seed: u64) -> Result<Vec<ResidualRow>> {
    f.check_centered()?;
    if !(t > 0.0) || n_paths == 0 {
        return Err(Error::invalid("residual needs t > 0 and n_paths >= 1"));
    }
    let n_inner = (n_paths as f64).sqrt().ceil() as usize;
    let inner_steps = steps_for(solution.horizon, solution.dt);
    let inner_dt = solution.horizon / inner_steps as f64;
    let outer_steps = steps_for(t, solution.dt);
    let outer_dt = t / outer_steps as f64;
    let eval = |x: &[f64], out: &mut [f64]| out[0] = f.eval(x);
    let n_q = solution.query_points.len();

    let values = par_map_indexed(n_q * n_paths, |j| {
        let (q, i) = (j / n_paths, j % n_paths);
        let key_q = rng::derive_seed(seed, "residual", q as u64);
        let x0 = &solution.query_points[q];
        let mut s = Stepper::new(model, x0, outer_dt, DEFAULT_GUARD_RADIUS, rng::stream(key_q, i as u64))?;
        let mut prev = f.eval(x0);
        let mut integral = 0.0;
        for _ in 0..outer_steps {
            s.step()?;
            let cur = f.eval(s.state());
            integral += 0.5 * outer_dt * (prev + cur);
            prev = cur;
        }
        let inner_key = rng::derive_seed(key_q, "inner", i as u64);
        let end = s.state();
        let mut u_end = 0.0;
        for r in 0..n_inner {
            u_end += integrate_one(model, end, inner_steps, inner_dt, 1, &eval, rng::stream(inner_key, r as u64))?.total[0];
        }
        Ok(u_end / n_inner as f64 + integral)
    })?;

    Ok(values
        .chunks(n_paths)
        .enumerate()
        .map(|(q, v)| {
            let n = v.len() as f64;
            let m = v.iter().sum::<f64>() / n;
            let var = if v.len() > 1 { v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            let se_u = solution.stderrs[q];
            ResidualRow {
                x: solution.query_points[q].clone(),
                residual: solution.u_values[q] - m,
                stderr: (se_u * se_u + var / n).sqrt(),
                u_hat: solution.u_values[q],
                propagated: m,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthCheck {
    /// `μ̂`-weighted average of `û` over query points that are samples of `μ̂`.
    pub mu_u: MeanEstimate,
    /// `max |û(x)| / (1 + |x|^m)` over the probe points.
    pub growth_sup_m: f64,
    /// `max |û(x)| / (1 + |x|^β)` over the probe points.
    pub growth_sup_beta: f64,
    pub n_mu_points: usize,
    pub n_probes: usize,
    /// False when `m ≤ β + 4`, outside the regime of the polynomial bound.
    pub m_exceeds_beta_plus_4: bool,
}

/// Query points that coincide with `μ̂` samples carry its (renormalized)
/// weights; all remaining query points are growth probes. With no separate
/// probes every query point is probed.
pub fn centering_and_growth_check(solution: &PoissonSolution, mu_hat: &EmpiricalMeasure, beta: f64, m: f64) -> Result<GrowthCheck> {
    let key = |x: &[f64]| x.iter().map(|v| v.to_bits()).collect::<Vec<u64>>();
    let mut weight_of: HashMap<Vec<u64>, f64> = HashMap::new();
    for (x, w) in mu_hat.iter() {
        *weight_of.entry(key(x)).or_default() += w;
    }
    let mut mu_idx = Vec::new();
    let mut probe_idx = Vec::new();
    for (i, x) in solution.query_points.iter().enumerate() {
        match weight_of.get(&key(x)) {
            Some(w) => mu_idx.push((i, *w)),
            None => probe_idx.push(i),
        }
    }
    if mu_idx.is_empty() {
        return Err(Error::invalid("no query point is a sample of the supplied measure"));
    }
    let total: f64 = mu_idx.iter().map(|(_, w)| w).sum();
    let mu_u = mu_idx.iter().map(|(i, w)| w / total * solution.u_values[*i]).sum::<f64>();
    let var = mu_idx
        .iter()
        .map(|(i, w)| {
            let w = w / total;
            w * w * (solution.stderrs[*i].powi(2) + (solution.u_values[*i] - mu_u).powi(2))
        })
        .sum::<f64>();
    let probes: Vec<usize> = if probe_idx.is_empty() {
        (0..solution.len()).collect()
    } else {
        probe_idx.clone()
    };
    let sup = |order: f64| {
        probes
            .iter()
            .map(|&i| {
                let r = solution.query_points[i].iter().map(|v| v * v).sum::<f64>().sqrt();
                solution.u_values[i].abs() / (1.0 + r.powf(order))
            })
            .fold(0.0, f64::max)
    };
    Ok(GrowthCheck {
        mu_u: MeanEstimate {
            value: mu_u,
            stderr: var.sqrt(),
        },
        growth_sup_m: sup(m),
        growth_sup_beta: sup(beta),
        n_mu_points: mu_idx.len(),
        n_probes: probe_idx.len(),
        m_exceeds_beta_plus_4: m > beta + 4.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ergodicity::Provenance;

    fn ou() -> SdeModel {
        SdeModel::new("ou", 1, 1, |x, b| b[0] = -x[0], |_, s| s[0] = 2f64.sqrt())
    }

    fn frozen_decay() -> SdeModel {
        SdeModel::new("decay", 1, 1, |x, b| b[0] = -x[0], |_, s| s[0] = 0.0)
    }

    #[test]
    fn zero_function_gives_exact_zero() {
        let opts = PoissonOptions { horizon: 2.0, n_paths: 20, dt: 0.05, seed: 1 };
        let sol = solve_poisson_mc(&ou(), &CenterableFunction::zero(1), &[vec![-1.0], vec![2.0]], &opts).unwrap();
        assert!(sol.u_values.iter().all(|u| *u == 0.0));
        assert!(sol.stderrs.iter().all(|s| *s == 0.0));
        assert_eq!(sol.tail_bound_estimate, 0.0);
        let res = poisson_residual(&ou(), &sol, &CenterableFunction::zero(1), 0.5, 16, 2).unwrap();
        assert!(res.iter().all(|r| r.residual == 0.0 && r.stderr == 0.0));
    }

    #[test]
    fn deterministic_decay_matches_truncated_integral() {
        // u_N(x) = x (1 - e^{-N}) for the noiseless flow.
        let f = CenterableFunction::new("x", 1, 1.0, |x| x[0]).declare_centered();
        let opts = PoissonOptions { horizon: 3.0, n_paths: 1, dt: 1e-3, seed: 0 };
        let sol = solve_poisson_mc(&frozen_decay(), &f, &[vec![2.0]], &opts).unwrap();
        let exact = 2.0 * (1.0 - (-3.0f64).exp());
        assert!((sol.u_values[0] - exact).abs() < 2e-3, "{}", sol.u_values[0]);
    }

    #[test]
    fn split_strategy_does_not_change_results() {
        let f = CenterableFunction::new("x", 1, 1.0, |x| x[0]).declare_centered();
        let opts = PoissonOptions { horizon: 1.0, n_paths: 3, dt: 0.05, seed: 7 };
        let many: Vec<Vec<f64>> = (0..70).map(|i| vec![i as f64 * 0.01]).collect();
        let all = solve_poisson_mc(&ou(), &f, &many, &opts).unwrap();
        let few = solve_poisson_mc(&ou(), &f, &many[..2], &opts).unwrap();
        assert_eq!(&all.u_values[..2], &few.u_values[..]);
    }

    #[test]
    fn multi_solve_matches_single_solves() {
        let f1 = CenterableFunction::new("x", 1, 1.0, |x| x[0]).declare_centered();
        let f2 = CenterableFunction::new("x3", 1, 3.0, |x| x[0].powi(3)).declare_centered();
        let opts = PoissonOptions { horizon: 1.0, n_paths: 10, dt: 0.05, seed: 3 };
        let pts = vec![vec![0.5], vec![-1.0]];
        let both = solve_poisson_mc_multi(&ou(), &[f1.clone(), f2.clone()], &pts, &opts).unwrap();
        assert_eq!(both[0], solve_poisson_mc(&ou(), &f1, &pts, &opts).unwrap());
        assert_eq!(both[1].u_values, solve_poisson_mc(&ou(), &f2, &pts, &opts).unwrap().u_values);
    }

    #[test]
    fn uncentered_function_is_refused() {
        let f = CenterableFunction::new("x", 1, 1.0, |x| x[0]).with_mu_mean(MeanEstimate { value: 0.5, stderr: 0.01 });
        let opts = PoissonOptions { horizon: 1.0, n_paths: 2, dt: 0.1, seed: 0 };
        assert!(matches!(solve_poisson_mc(&ou(), &f, &[vec![0.0]], &opts), Err(Error::UncenteredInput { .. })));
    }

    #[test]
    fn growth_check_of_zero_solution() {
        let p = Provenance {
            model_label: "t".into(),
            burn_in: 0.0,
            thinning_time: 1.0,
            dt: 0.1,
            seed: 0,
        };
        let mu = EmpiricalMeasure::from_samples(1, vec![-0.5, 0.0, 0.7], None, p).unwrap();
        let sol = PoissonSolution {
            query_points: vec![vec![-0.5], vec![0.7], vec![4.0]],
            u_values: vec![0.0; 3],
            stderrs: vec![0.0; 3],
            horizon: 1.0,
            dt: 0.1,
            tail_bound_estimate: 0.0,
            n_paths: 1,
            function_label: "zero".into(),
            seed: 0,
        };
        let g = centering_and_growth_check(&sol, &mu, 1.0, 6.0).unwrap();
        assert_eq!((g.mu_u.value, g.growth_sup_m, g.growth_sup_beta), (0.0, 0.0, 0.0));
        assert_eq!((g.n_mu_points, g.n_probes), (2, 1));
        assert!(g.m_exceeds_beta_plus_4);
    }

    #[test]
    fn csv_has_component_columns() {
        let sol = PoissonSolution {
            query_points: vec![vec![1.0, 2.0]],
            u_values: vec![0.5],
            stderrs: vec![0.1],
            horizon: 1.0,
            dt: 0.1,
            tail_bound_estimate: 0.0,
            n_paths: 1,
            function_label: "f".into(),
            seed: 0,
        };
        let mut buf = Vec::new();
        sol.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x_1,x_2,u,stderr\n1,2,0.5,0.1\n");
    }
}
