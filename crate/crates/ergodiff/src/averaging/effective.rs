use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::system::FastSlowSystem;
use crate::ergodicity::EmpiricalMeasure;
use crate::error::{Error, Result};
use crate::poisson::{center_function, path_integrals, point_key, solve_poisson_mc_multi, CenterableFunction, PoissonOptions, PoissonSolution};
use crate::sde::{check_finite, simulate_ensemble, steps_for, Dynamics, Ensemble, IntegratorConfig};
use crate::stats::MeanEstimate;

/// Clipped eigenvalue mass above this share of the trace is flagged.
const PSD_WARNING_SHARE: f64 = 0.05;

/// Corrector solves `Ḡ_i(·, y)` and `∂_{y_j}Ḡ_i(·, y)` for each component of `G`.
pub fn estimate_g_bar(system: &FastSlowSystem, y: &[f64], mu_hat: &EmpiricalMeasure, query_x: &[Vec<f64>], opts: &PoissonOptions) -> Result<Vec<PoissonSolution>> {
    let fs = (0..system.dim_y)
        .map(|i| {
            let s = system.clone();
            let f = CenterableFunction::parametric(format!("G_{}", i + 1), system.dim_x(), system.growth_orders[1], y.to_vec(), move |x, y| {
                s.g_at(x, y).map_or(f64::NAN, |g| g[i])
            });
            center_function(&f, mu_hat)
        })
        .collect::<Result<Vec<_>>>()?;
    solve_poisson_mc_multi(&system.fast, &fs, query_x, opts)
}

/// Poisson solves of every entry of `∇_y G(·, y)`, row-major `(i, j) ↦ ∂_{y_j} G_i`.
pub fn estimate_grad_g_bar(system: &FastSlowSystem, y: &[f64], mu_hat: &EmpiricalMeasure, query_x: &[Vec<f64>], opts: &PoissonOptions) -> Result<Vec<PoissonSolution>> {
    let l = system.dim_y;
    let fs = (0..l * l)
        .map(|e| {
            let s = system.clone();
            let f = CenterableFunction::parametric(format!("dG_{}_{}", e / l + 1, e % l + 1), system.dim_x(), system.growth_orders[2], y.to_vec(), move |x, y| {
                s.grad_y_g_at(x, y).map_or(f64::NAN, |g| g[e])
            });
            center_function(&f, mu_hat)
        })
        .collect::<Result<Vec<_>>>()?;
    solve_poisson_mc_multi(&system.fast, &fs, query_x, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectorBudget {
    /// Strided subsample of `μ̂` where correctors are solved.
    pub n_points: usize,
    pub n_paths: usize,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
}

impl CorrectorBudget {
    pub const DEFAULT_POINTS: usize = 256;

    pub fn validate(&self) -> Result<()> {
        PoissonOptions {
            horizon: self.horizon,
            n_paths: self.n_paths,
            dt: self.dt,
            seed: self.seed,
        }
        .validate()?;
        if self.n_points == 0 {
            return Err(Error::invalid("corrector budget needs at least one point"));
        }
        Ok(())
    }
}

/// Centered `G`, `Ḡ` and `∇_yḠ` at weighted invariant samples for one `y`.
#[derive(Debug, Clone)]
pub struct CorrectorSet {
    pub y: Vec<f64>,
    pub points: Arc<Vec<Vec<f64>>>,
    pub weights: Arc<Vec<f64>>,
    /// `[point][i]`, centered.
    pub g: Vec<f64>,
    /// `[point][i]`
    pub g_bar: Vec<f64>,
    /// `[point][i·ℓ + j]`
    pub grad_g_bar: Vec<f64>,
    /// Invariant means subtracted from `G` and `∇_y G`.
    pub g_centering: Vec<MeanEstimate>,
    pub grad_centering: Vec<MeanEstimate>,
    /// `F̄(y)` over the full measure.
    pub f_bar: Vec<MeanEstimate>,
}

fn means_over<F: Fn(&[f64], &mut [f64])>(mu_hat: &EmpiricalMeasure, n: usize, f: F) -> Vec<MeanEstimate> {
    let mut buf = vec![0.0; n];
    let mut cols = vec![Vec::with_capacity(mu_hat.len()); n];
    for x in mu_hat.samples.chunks_exact(mu_hat.dim) {
        f(x, &mut buf);
        for (c, v) in cols.iter_mut().zip(&buf) {
            c.push(*v);
        }
    }
    cols.iter()
        .map(|c| crate::stats::batch_means(c, &mu_hat.weights, crate::stats::DEFAULT_BATCHES).estimate)
        .collect()
}

/// Correctors at every node of `ys`, all solved along one shared set of fast
/// paths per subsample point.
pub fn corrector_family(system: &FastSlowSystem, ys: &[Vec<f64>], mu_hat: &EmpiricalMeasure, budget: &CorrectorBudget) -> Result<Vec<CorrectorSet>> {
    budget.validate()?;
    let l = system.dim_y;
    if mu_hat.dim != system.dim_x() || ys.iter().any(|y| y.len() != l) {
        return Err(Error::invalid("measure or node dimensions differ from the system"));
    }
    let mut g_centering = Vec::with_capacity(ys.len());
    let mut grad_centering = Vec::with_capacity(ys.len());
    let mut f_bar = Vec::with_capacity(ys.len());
    for y in ys {
        // Validate once so the infallible hot loop below only sees finite fields.
        system.g_at(mu_hat.sample(0), y)?;
        system.grad_y_g_at(mu_hat.sample(0), y)?;
        system.f_at(mu_hat.sample(0), y)?;
        g_centering.push(means_over(mu_hat, l, |x, o| system.raw_g(x, y, o)));
        grad_centering.push(means_over(mu_hat, l * l, |x, o| system.raw_grad(x, y, o)));
        f_bar.push(means_over(mu_hat, l, |x, o| system.raw_f(x, y, o)));
    }
    let (points, weights) = mu_hat.subsample(budget.n_points);
    let per_node = l + l * l;
    let n_steps = steps_for(budget.horizon, budget.dt);
    let dt = budget.horizon / n_steps as f64;
    let eval = |x: &[f64], out: &mut [f64]| {
        for (n, y) in ys.iter().enumerate() {
            let block = &mut out[n * per_node..(n + 1) * per_node];
            let (g, dg) = block.split_at_mut(l);
            system.raw_g(x, y, g);
            system.raw_grad(x, y, dg);
            for (v, c) in g.iter_mut().zip(&g_centering[n]) {
                *v -= c.value;
            }
            for (v, c) in dg.iter_mut().zip(&grad_centering[n]) {
                *v -= c.value;
            }
        }
    };
    let stats = path_integrals(&system.fast, &points, budget.n_paths, n_steps, dt, ys.len() * per_node, |p| point_key(budget.seed, p), eval)?;
    let mut at_points = vec![0.0; ys.len() * per_node];
    let points = Arc::new(points);
    let weights = Arc::new(weights);
    let mut sets: Vec<CorrectorSet> = ys
        .iter()
        .enumerate()
        .map(|(n, y)| CorrectorSet {
            y: y.clone(),
            points: Arc::clone(&points),
            weights: Arc::clone(&weights),
            g: Vec::with_capacity(points.len() * l),
            g_bar: Vec::with_capacity(points.len() * l),
            grad_g_bar: Vec::with_capacity(points.len() * l * l),
            g_centering: g_centering[n].clone(),
            grad_centering: grad_centering[n].clone(),
            f_bar: f_bar[n].clone(),
        })
        .collect();
    for (x, s) in points.iter().zip(&stats) {
        if s.mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEvaluation { field: "corrector", state: x.clone() });
        }
        eval(x, &mut at_points);
        for (n, set) in sets.iter_mut().enumerate() {
            let base = n * per_node;
            set.g.extend_from_slice(&at_points[base..base + l]);
            set.g_bar.extend_from_slice(&s.mean[base..base + l]);
            set.grad_g_bar.extend_from_slice(&s.mean[base + l..base + per_node]);
        }
    }
    Ok(sets)
}

impl CorrectorSet {
    /// Assemble from per-component solutions whose query points are samples
    /// of `mu_hat`; the sample weights are taken from `mu_hat`.
    pub fn from_solutions(system: &FastSlowSystem, y: &[f64], mu_hat: &EmpiricalMeasure, g_bar: &[PoissonSolution], grad_g_bar: &[PoissonSolution]) -> Result<Self> {
        let l = system.dim_y;
        if g_bar.len() != l || grad_g_bar.len() != l * l {
            return Err(Error::invalid("expected one solution per component of G and of grad_y G"));
        }
        let points = g_bar[0].query_points.clone();
        if g_bar.iter().chain(grad_g_bar).any(|s| s.query_points != points) {
            return Err(Error::invalid("corrector solutions must share query points"));
        }
        let key = |x: &[f64]| x.iter().map(|v| v.to_bits()).collect::<Vec<u64>>();
        let mut weight_of: HashMap<Vec<u64>, f64> = HashMap::new();
        for (x, w) in mu_hat.iter() {
            *weight_of.entry(key(x)).or_default() += w;
        }
        let mut weights = Vec::with_capacity(points.len());
        for x in &points {
            weights.push(*weight_of.get(&key(x)).ok_or_else(|| Error::invalid("corrector query points must be samples of the measure"))?);
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let g_centering = means_over(mu_hat, l, |x, o| system.raw_g(x, y, o));
        let grad_centering = means_over(mu_hat, l * l, |x, o| system.raw_grad(x, y, o));
        let f_bar = means_over(mu_hat, l, |x, o| system.raw_f(x, y, o));
        let mut g = Vec::with_capacity(points.len() * l);
        let mut buf = vec![0.0; l];
        for x in &points {
            system.eval_g(x, y, &mut buf)?;
            g.extend(buf.iter().zip(&g_centering).map(|(v, c)| v - c.value));
        }
        let interleave = |sols: &[PoissonSolution]| (0..points.len()).flat_map(|p| sols.iter().map(move |s| s.u_values[p])).collect::<Vec<f64>>();
        Ok(CorrectorSet {
            y: y.to_vec(),
            g_bar: interleave(g_bar),
            grad_g_bar: interleave(grad_g_bar),
            points: Arc::new(points),
            weights: Arc::new(weights),
            g,
            g_centering,
            grad_centering,
            f_bar,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveCoefficients {
    pub y: Vec<f64>,
    pub b_bar: Vec<f64>,
    pub b_stderr: Vec<f64>,
    /// Row-major, symmetric and positive semidefinite after repair.
    pub a_bar: Vec<f64>,
    pub a_stderr: Vec<f64>,
    /// Symmetrized estimate before eigenvalue clipping.
    pub a_raw: Vec<f64>,
    pub sqrt_a: Vec<f64>,
    /// Sum of the magnitudes of clipped negative eigenvalues.
    pub clip_magnitude: f64,
    pub psd_warning: bool,
    pub f_bar: Vec<f64>,
}

fn weighted_mean_se(values: &[f64], w: &[f64]) -> MeanEstimate {
    let m: f64 = values.iter().zip(w).map(|(v, w)| v * w).sum();
    let var: f64 = values.iter().zip(w).map(|(v, w)| w * w * (v - m) * (v - m)).sum();
    MeanEstimate { value: m, stderr: var.sqrt() }
}

/// Symmetric PSD repair by eigenvalue clipping; returns `(repaired, sqrt, clipped mass, trace share flag)`.
pub fn repair_psd(a: &[f64], l: usize) -> (Vec<f64>, Vec<f64>, f64, bool) {
    let m = DMatrix::from_row_slice(l, l, a);
    let sym = (&m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let clipped: f64 = eig.eigenvalues.iter().filter(|v| **v < 0.0).map(|v| -v).sum();
    let positive: f64 = eig.eigenvalues.iter().filter(|v| **v > 0.0).sum();
    let lam = eig.eigenvalues.map(|v| v.max(0.0));
    let v = &eig.eigenvectors;
    let repaired = v * DMatrix::from_diagonal(&lam) * v.transpose();
    let root = v * DMatrix::from_diagonal(&lam.map(f64::sqrt)) * v.transpose();
    let sym_rows = |x: &DMatrix<f64>| {
        let s = (x + x.transpose()) * 0.5;
        (0..l).flat_map(|i| (0..l).map(move |j| (i, j))).map(|(i, j)| s[(i, j)]).collect::<Vec<f64>>()
    };
    let warn = clipped > PSD_WARNING_SHARE * positive.max(f64::MIN_POSITIVE) && clipped > 0.0;
    (sym_rows(&repaired), sym_rows(&root), clipped, warn)
}

/// `b̄ = F̄ + Σ_i ∫ G_i ∂_{y_i}Ḡ dμ` and `ā = ∫ (G Ḡᵀ + Ḡ Gᵀ) dμ` from a corrector set.
pub fn effective_coefficients(system: &FastSlowSystem, set: &CorrectorSet) -> EffectiveCoefficients {
    let l = system.dim_y;
    let n = set.points.len();
    let w = &set.weights[..];
    let mut b_bar = vec![0.0; l];
    let mut b_stderr = vec![0.0; l];
    let mut vals = vec![0.0; n];
    for k in 0..l {
        for p in 0..n {
            vals[p] = (0..l).map(|i| set.g[p * l + i] * set.grad_g_bar[p * l * l + k * l + i]).sum();
        }
        let e = weighted_mean_se(&vals, w);
        b_bar[k] = set.f_bar[k].value + e.value;
        b_stderr[k] = (e.stderr.powi(2) + set.f_bar[k].stderr.powi(2)).sqrt();
    }
    let mut a_raw = vec![0.0; l * l];
    let mut a_stderr = vec![0.0; l * l];
    for k in 0..l {
        for j in 0..l {
            for p in 0..n {
                vals[p] = set.g[p * l + k] * set.g_bar[p * l + j] + set.g_bar[p * l + k] * set.g[p * l + j];
            }
            let e = weighted_mean_se(&vals, w);
            a_raw[k * l + j] = e.value;
            a_stderr[k * l + j] = e.stderr;
        }
    }
    for k in 0..l {
        for j in 0..k {
            let s = 0.5 * (a_raw[k * l + j] + a_raw[j * l + k]);
            a_raw[k * l + j] = s;
            a_raw[j * l + k] = s;
        }
    }
    let (a_bar, sqrt_a, clip_magnitude, psd_warning) = repair_psd(&a_raw, l);
    EffectiveCoefficients {
        y: set.y.clone(),
        b_bar,
        b_stderr,
        a_bar,
        a_stderr,
        a_raw,
        sqrt_a,
        clip_magnitude,
        psd_warning,
        f_bar: set.f_bar.iter().map(|m| m.value).collect(),
    }
}

/// Tabulated limit coefficients on a tensor grid with multilinear interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveModel {
    pub label: String,
    pub dim_y: usize,
    /// Increasing node coordinates per axis.
    pub axes: Vec<Vec<f64>>,
    /// Nodes in row-major order, last axis fastest.
    pub nodes: Vec<EffectiveCoefficients>,
    pub budget: Option<CorrectorBudget>,
}

/// Row-major cartesian product of the axes.
pub fn grid_nodes(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(*v);
                    p
                })
            })
            .collect()
    })
}

fn validate_axes(axes: &[Vec<f64>]) -> Result<()> {
    if axes.is_empty() || axes.iter().any(|a| a.len() < 2 || a.windows(2).any(|w| !(w[1] > w[0]))) {
        return Err(Error::invalid("each grid axis needs at least two increasing nodes"));
    }
    Ok(())
}

pub fn build_effective_model(system: &FastSlowSystem, axes: &[Vec<f64>], mu_hat: &EmpiricalMeasure, budget: &CorrectorBudget) -> Result<EffectiveModel> {
    validate_axes(axes)?;
    if axes.len() != system.dim_y {
        return Err(Error::invalid("one grid axis per slow coordinate is required"));
    }
    let ys = grid_nodes(axes);
    let sets = corrector_family(system, &ys, mu_hat, budget)?;
    Ok(EffectiveModel {
        label: system.label.clone(),
        dim_y: system.dim_y,
        axes: axes.to_vec(),
        nodes: sets.iter().map(|s| effective_coefficients(system, s)).collect(),
        budget: Some(*budget),
    })
}

impl EffectiveModel {
    /// Tabulate known coefficients `y ↦ (b̄(y), ā(y))`.
    pub fn tabulate(label: impl Into<String>, axes: &[Vec<f64>], coeffs: impl Fn(&[f64]) -> (Vec<f64>, Vec<f64>)) -> Result<Self> {
        validate_axes(axes)?;
        let l = axes.len();
        let nodes = grid_nodes(axes)
            .into_iter()
            .map(|y| {
                let (b, a) = coeffs(&y);
                let (a_bar, sqrt_a, clip, warn) = repair_psd(&a, l);
                EffectiveCoefficients {
                    b_stderr: vec![0.0; l],
                    a_stderr: vec![0.0; l * l],
                    a_raw: a,
                    f_bar: b.clone(),
                    y,
                    b_bar: b,
                    a_bar,
                    sqrt_a,
                    clip_magnitude: clip,
                    psd_warning: warn,
                }
            })
            .collect();
        Ok(EffectiveModel {
            label: label.into(),
            dim_y: l,
            axes: axes.to_vec(),
            nodes,
            budget: None,
        })
    }

    /// Corner node indices and multilinear weights around `y`.
    fn stencil(&self, y: &[f64]) -> Result<Vec<(usize, f64)>> {
        let mut per_axis = Vec::with_capacity(self.dim_y);
        for (axis, &v) in self.axes.iter().zip(y) {
            let (lo, hi) = (axis[0], axis[axis.len() - 1]);
            let tol = 1e-12 * (hi - lo);
            if !(v >= lo - tol && v <= hi + tol) {
                return Err(Error::InterpolationRange { point: y.to_vec() });
            }
            let k = axis.partition_point(|a| *a <= v).clamp(1, axis.len() - 1) - 1;
            let t = ((v - axis[k]) / (axis[k + 1] - axis[k])).clamp(0.0, 1.0);
            per_axis.push((k, t));
        }
        let mut out = Vec::with_capacity(1 << self.dim_y);
        for corner in 0..(1usize << self.dim_y) {
            let mut idx = 0;
            let mut w = 1.0;
            for (a, &(k, t)) in per_axis.iter().enumerate() {
                let up = (corner >> a) & 1;
                idx = idx * self.axes[a].len() + k + up;
                w *= if up == 1 { t } else { 1.0 - t };
            }
            if w > 0.0 {
                out.push((idx, w));
            }
        }
        Ok(out)
    }

    fn interp(&self, y: &[f64], out: &mut [f64], pick: impl Fn(&EffectiveCoefficients) -> &[f64]) -> Result<()> {
        out.fill(0.0);
        for (idx, w) in self.stencil(y)? {
            for (o, v) in out.iter_mut().zip(pick(&self.nodes[idx])) {
                *o += w * v;
            }
        }
        Ok(())
    }

    pub fn b_bar_at(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim_y];
        self.interp(y, &mut out, |n| &n.b_bar)?;
        Ok(out)
    }

    pub fn a_bar_at(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim_y * self.dim_y];
        self.interp(y, &mut out, |n| &n.a_bar)?;
        Ok(out)
    }

    pub fn any_psd_warning(&self) -> bool {
        self.nodes.iter().any(|n| n.psd_warning)
    }

    /// Columns `y_*, b_*, b_se_*, a_ij, a_se_ij, clip`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let l = self.dim_y;
        let pairs: Vec<String> = (1..=l).flat_map(|i| (1..=l).map(move |j| format!("{i}{j}"))).collect();
        let mut header: Vec<String> = (1..=l).map(|i| format!("y_{i}")).collect();
        header.extend((1..=l).map(|i| format!("b_{i}")));
        header.extend((1..=l).map(|i| format!("b_se_{i}")));
        header.extend(pairs.iter().map(|p| format!("a_{p}")));
        header.extend(pairs.iter().map(|p| format!("a_se_{p}")));
        header.push("clip".into());
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&header)?;
        for n in &self.nodes {
            let row: Vec<String> = n
                .y
                .iter()
                .chain(&n.b_bar)
                .chain(&n.b_stderr)
                .chain(&n.a_bar)
                .chain(&n.a_stderr)
                .chain(std::iter::once(&n.clip_magnitude))
                .map(f64::to_string)
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn metadata_json(&self) -> serde_json::Value {
        serde_json::json!({
            "label": self.label,
            "dim_y": self.dim_y,
            "axes": self.axes,
            "budget": self.budget,
            "psd_warning": self.any_psd_warning(),
            "max_clip": self.nodes.iter().map(|n| n.clip_magnitude).fold(0.0, f64::max),
        })
    }
}

impl Dynamics for EffectiveModel {
    fn dim_x(&self) -> usize {
        self.dim_y
    }

    fn dim_noise(&self) -> usize {
        self.dim_y
    }

    fn eval_drift(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        self.interp(y, out, |n| &n.b_bar)?;
        check_finite("effective drift", y, out)
    }

    fn eval_diffusion(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        self.interp(y, out, |n| &n.sqrt_a)?;
        check_finite("effective diffusion", y, out)
    }
}

/// Euler–Maruyama for `dY = b̄ dt + √ā dW` under the sde_core stream contract.
pub fn simulate_limit(effective: &EffectiveModel, y0: &[f64], cfg: &IntegratorConfig) -> Result<Ensemble> {
    effective.stencil(y0)?;
    simulate_ensemble(effective, y0, cfg, &format!("limit:{}", effective.label))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ergodicity::{estimate_invariant_measure, InvariantOptions};
    use crate::sde::SdeModel;

    fn ou() -> SdeModel {
        SdeModel::new("ou", 1, 1, |x, b| b[0] = -x[0], |_, s| s[0] = 2f64.sqrt())
    }

    fn mu() -> EmpiricalMeasure {
        let opts = InvariantOptions {
            burn_in: 5.0,
            n_samples: 4000,
            thinning_time: 0.5,
            dt: 0.01,
            x0: None,
            seed: 1,
        };
        estimate_invariant_measure(&ou(), &opts).unwrap()
    }

    fn zero_g() -> FastSlowSystem {
        FastSlowSystem::new("zero-g", ou(), 1, |_, y, o| o[0] = -y[0], |_, _, o| o[0] = 0.0, |_, _, o| o[0] = 0.0, [0.0; 3])
    }

    #[test]
    fn zero_coupling_collapses_to_mean_drift() {
        let budget = CorrectorBudget { n_points: 32, n_paths: 2, horizon: 2.0, dt: 0.05, seed: 1 };
        let axes = vec![vec![-1.0, 0.0, 1.0]];
        let em = build_effective_model(&zero_g(), &axes, &mu(), &budget).unwrap();
        for n in &em.nodes {
            assert!((n.b_bar[0] + n.y[0]).abs() < 1e-12);
            assert_eq!(n.a_bar, vec![0.0]);
            assert_eq!(n.sqrt_a, vec![0.0]);
        }
    }

    #[test]
    fn psd_repair_clips_negative_eigenvalues() {
        let (a, root, clip, warn) = repair_psd(&[1.0, 2.0, 2.0, 1.0], 2);
        assert!((clip - 1.0).abs() < 1e-12);
        assert!(warn);
        let m = DMatrix::from_row_slice(2, 2, &root);
        let back = &m * m.transpose();
        for i in 0..2 {
            for j in 0..2 {
                assert!((back[(i, j)] - a[i * 2 + j]).abs() < 1e-10);
            }
        }
        assert!((a[0] - 1.5).abs() < 1e-12 && (a[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn multilinear_interpolation_is_exact_for_linear_data() {
        let axes = vec![vec![-1.0, 0.0, 2.0], vec![0.0, 1.0]];
        let em = EffectiveModel::tabulate("lin", &axes, |y| (vec![y[0] + 2.0 * y[1], 3.0 * y[0] - y[1]], vec![1.0, 0.0, 0.0, 1.0])).unwrap();
        let b = em.b_bar_at(&[0.7, 0.25]).unwrap();
        assert!((b[0] - 1.2).abs() < 1e-12 && (b[1] - 1.85).abs() < 1e-12);
        assert!(matches!(em.b_bar_at(&[2.5, 0.0]), Err(Error::InterpolationRange { .. })));
    }

    #[test]
    fn decay_limit_is_deterministic_with_zero_diffusion() {
        let axes = vec![vec![-3.0, 3.0]];
        let em = EffectiveModel::tabulate("decay", &axes, |y| (vec![-y[0]], vec![0.0])).unwrap();
        let cfg = IntegratorConfig::new(1e-4, 1.0, 3, 2);
        let ens = simulate_limit(&em, &[2.0], &cfg).unwrap();
        for y in ens.terminal_coordinate(0) {
            assert!((y - 2.0 * (-1.0f64).exp()).abs() < 1e-3);
        }
    }

    #[test]
    fn limit_outside_grid_is_rejected() {
        let em = EffectiveModel::tabulate("decay", &[vec![-1.0, 1.0]], |y| (vec![-y[0]], vec![0.0])).unwrap();
        let cfg = IntegratorConfig::new(0.1, 1.0, 3, 2);
        assert!(matches!(simulate_limit(&em, &[2.0], &cfg), Err(Error::InterpolationRange { .. })));
    }

    #[test]
    fn family_equals_single_node_solve() {
        let s = FastSlowSystem::new("xy", ou(), 1, |_, y, o| o[0] = -y[0], |x, y, o| o[0] = x[0] * y[0], |x, _, o| o[0] = x[0], [0.0, 1.0, 1.0]);
        let budget = CorrectorBudget { n_points: 16, n_paths: 3, horizon: 2.0, dt: 0.05, seed: 4 };
        let m = mu();
        let fam = corrector_family(&s, &[vec![1.0], vec![2.0]], &m, &budget).unwrap();
        let one = corrector_family(&s, &[vec![2.0]], &m, &budget).unwrap();
        assert_eq!(fam[1].g_bar, one[0].g_bar);
        assert_eq!(fam[1].grad_g_bar, one[0].grad_g_bar);
    }

    #[test]
    fn solution_route_matches_family_route() {
        let s = FastSlowSystem::new("xy", ou(), 1, |_, y, o| o[0] = -y[0], |x, y, o| o[0] = x[0] * y[0], |x, _, o| o[0] = x[0], [0.0, 1.0, 1.0]);
        let budget = CorrectorBudget { n_points: 16, n_paths: 3, horizon: 2.0, dt: 0.05, seed: 4 };
        let m = mu();
        let fam = corrector_family(&s, &[vec![2.0]], &m, &budget).unwrap().remove(0);
        let opts = PoissonOptions { horizon: 2.0, n_paths: 3, dt: 0.05, seed: 4 };
        let gb = estimate_g_bar(&s, &[2.0], &m, &fam.points, &opts).unwrap();
        let db = estimate_grad_g_bar(&s, &[2.0], &m, &fam.points, &opts).unwrap();
        let set = CorrectorSet::from_solutions(&s, &[2.0], &m, &gb, &db).unwrap();
        for (a, b) in set.g_bar.iter().zip(&fam.g_bar) {
            assert!((a - b).abs() < 1e-12);
        }
        let e1 = effective_coefficients(&s, &set);
        let e2 = effective_coefficients(&s, &fam);
        assert!((e1.a_bar[0] - e2.a_bar[0]).abs() < 1e-9);
    }
}
