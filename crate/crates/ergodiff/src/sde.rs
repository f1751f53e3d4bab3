//! Diffusion models and the Euler–Maruyama integrator.
//!
//! A model is the pair of coefficient fields of `dX = b(X) dt + σ(X) dB` with
//! `X ∈ R^d` and `B` a `k`-dimensional Brownian motion. The diffusion field
//! writes σ(x) as a row-major `d × k` matrix.
//!
//! Every path draws from its own stream keyed by `(seed, stream_index)`, and
//! ensemble results are gathered in path-index order, so output never depends
//! on how rayon schedules the work.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

pub type Field = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

pub const DEFAULT_GUARD_RADIUS: f64 = 1e6;

/// Anything that can be stepped by Euler–Maruyama.
pub trait Dynamics: Sync {
    fn dim_x(&self) -> usize;
    fn dim_noise(&self) -> usize;
    fn eval_drift(&self, x: &[f64], out: &mut [f64]) -> Result<()>;
    /// Row-major `dim_x × dim_noise` matrix.
    fn eval_diffusion(&self, x: &[f64], out: &mut [f64]) -> Result<()>;
}

#[derive(Clone)]
pub struct SdeModel {
    pub dim_x: usize,
    pub dim_noise: usize,
    pub drift: Field,
    pub diffusion: Field,
    pub label: String,
}

impl std::fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SdeModel")
            .field("label", &self.label)
            .field("dim_x", &self.dim_x)
            .field("dim_noise", &self.dim_noise)
            .finish_non_exhaustive()
    }
}

impl SdeModel {
    pub fn new<B, S>(label: impl Into<String>, dim_x: usize, dim_noise: usize, drift: B, diffusion: S) -> Self
    where
        B: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        S: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        assert!(dim_x > 0 && dim_noise > 0, "model dimensions must be positive");
        SdeModel {
            dim_x,
            dim_noise,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            label: label.into(),
        }
    }

    pub fn drift_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim_x];
        self.eval_drift(x, &mut out)?;
        Ok(out)
    }

    pub fn diffusion_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim_x * self.dim_noise];
        self.eval_diffusion(x, &mut out)?;
        Ok(out)
    }
}

impl Dynamics for SdeModel {
    fn dim_x(&self) -> usize {
        self.dim_x
    }

    fn dim_noise(&self) -> usize {
        self.dim_noise
    }

    #[inline]
    fn eval_drift(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        (self.drift)(x, out);
        check_finite("drift", x, out)
    }

    #[inline]
    fn eval_diffusion(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        (self.diffusion)(x, out);
        check_finite("diffusion", x, out)
    }
}

#[inline]
pub(crate) fn check_finite(field: &'static str, x: &[f64], out: &[f64]) -> Result<()> {
    if out.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteEvaluation {
            field,
            state: x.to_vec(),
        })
    }
}

/// One explicit Euler–Maruyama step `x + b(x) dt + σ(x) dW`.
pub fn euler_step<D: Dynamics + ?Sized>(x: &[f64], model: &D, dt: f64, dw: &[f64]) -> Result<Vec<f64>> {
    let (d, k) = (model.dim_x(), model.dim_noise());
    if x.len() != d || dw.len() != k {
        return Err(Error::invalid(format!(
            "euler_step expects |x| = {d} and |dW| = {k}, got {} and {}",
            x.len(),
            dw.len()
        )));
    }
    let mut drift = vec![0.0; d];
    let mut sigma = vec![0.0; d * k];
    model.eval_drift(x, &mut drift)?;
    model.eval_diffusion(x, &mut sigma)?;
    let mut next = x.to_vec();
    apply_increment(&mut next, &drift, &sigma, dt, dw);
    Ok(next)
}

#[inline]
fn apply_increment(x: &mut [f64], drift: &[f64], sigma: &[f64], dt: f64, dw: &[f64]) {
    let k = dw.len();
    for (i, xi) in x.iter_mut().enumerate() {
        let row = &sigma[i * k..(i + 1) * k];
        let noise: f64 = row.iter().zip(dw).map(|(s, w)| s * w).sum();
        *xi += drift[i] * dt + noise;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub n_paths: usize,
    /// Store every `thinning`-th state (the terminal state is always stored).
    pub thinning: usize,
    pub guard_radius: f64,
}

impl IntegratorConfig {
    pub fn new(dt: f64, horizon: f64, seed: u64, n_paths: usize) -> Self {
        IntegratorConfig {
            dt,
            horizon,
            seed,
            n_paths,
            thinning: 1,
            guard_radius: DEFAULT_GUARD_RADIUS,
        }
    }

    pub fn with_thinning(mut self, thinning: usize) -> Self {
        self.thinning = thinning;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt must be positive and finite"));
        }
        if !(self.horizon.is_finite() && self.horizon >= self.dt) {
            return Err(Error::invalid("horizon must be finite and at least dt"));
        }
        if self.n_paths == 0 || self.thinning == 0 {
            return Err(Error::invalid("n_paths and thinning must be at least 1"));
        }
        if !(self.guard_radius > 0.0) {
            return Err(Error::invalid("guard radius must be positive"));
        }
        Ok(())
    }

    /// Number of steps; `dt` is shrunk to `horizon / steps` so the grid ends
    /// exactly at the horizon.
    pub fn n_steps(&self) -> usize {
        steps_for(self.horizon, self.dt)
    }

    pub fn effective_dt(&self) -> f64 {
        self.horizon / self.n_steps() as f64
    }
}

pub(crate) fn steps_for(horizon: f64, dt: f64) -> usize {
    ((horizon / dt) - 1e-9).ceil().max(1.0) as usize
}

/// Online Euler–Maruyama integrator over one random stream.
///
/// Statistics that need every step (time integrals, running maxima) read the
/// state after each call to [`Stepper::step`] instead of storing a [`Path`].
pub struct Stepper<'m, D: Dynamics + ?Sized> {
    model: &'m D,
    state: Vec<f64>,
    drift: Vec<f64>,
    sigma: Vec<f64>,
    dw: Vec<f64>,
    dt: f64,
    sqrt_dt: f64,
    guard_sq: f64,
    rng: StreamRng,
    steps: usize,
}

impl<'m, D: Dynamics + ?Sized> Stepper<'m, D> {
    pub fn new(model: &'m D, x0: &[f64], dt: f64, guard_radius: f64, rng: StreamRng) -> Result<Self> {
        let (d, k) = (model.dim_x(), model.dim_noise());
        if x0.len() != d {
            return Err(Error::invalid(format!("initial state has length {}, model dimension is {d}", x0.len())));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("initial state must be finite"));
        }
        Ok(Stepper {
            model,
            state: x0.to_vec(),
            drift: vec![0.0; d],
            sigma: vec![0.0; d * k],
            dw: vec![0.0; k],
            dt,
            sqrt_dt: dt.sqrt(),
            guard_sq: guard_radius * guard_radius,
            rng,
            steps: 0,
        })
    }

    #[inline]
    pub fn step(&mut self) -> Result<()> {
        self.model.eval_drift(&self.state, &mut self.drift)?;
        self.model.eval_diffusion(&self.state, &mut self.sigma)?;
        rng::fill_normal(&mut self.rng, &mut self.dw);
        for w in self.dw.iter_mut() {
            *w *= self.sqrt_dt;
        }
        apply_increment(&mut self.state, &self.drift, &self.sigma, self.dt, &self.dw);
        self.steps += 1;
        let norm_sq: f64 = self.state.iter().map(|v| v * v).sum();
        if !(norm_sq <= self.guard_sq) {
            return Err(Error::Blowup {
                time: self.time(),
                norm: norm_sq.sqrt(),
                guard: self.guard_sq.sqrt(),
            });
        }
        Ok(())
    }

    #[inline]
    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub times: Vec<f64>,
    pub dim: usize,
    /// Row-major: state `i` occupies `states[i * dim..(i + 1) * dim]`.
    pub states: Vec<f64>,
}

impl Path {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn terminal(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &[f64])> + '_ {
        self.times.iter().copied().zip(self.states.chunks_exact(self.dim))
    }
}

/// Integrate `n_steps` steps of size `dt`, storing every `thinning`-th state
/// and the terminal one.
pub(crate) fn integrate_stored<D: Dynamics + ?Sized>(
    model: &D,
    x0: &[f64],
    dt: f64,
    n_steps: usize,
    thinning: usize,
    guard_radius: f64,
    rng: StreamRng,
) -> Result<Path> {
    let mut stepper = Stepper::new(model, x0, dt, guard_radius, rng)?;
    let dim = model.dim_x();
    let stored = n_steps / thinning + 2;
    let mut times = Vec::with_capacity(stored);
    let mut states = Vec::with_capacity(stored * dim);
    times.push(0.0);
    states.extend_from_slice(x0);
    for n in 1..=n_steps {
        stepper.step()?;
        if n % thinning == 0 || n == n_steps {
            times.push(n as f64 * dt);
            states.extend_from_slice(stepper.state());
        }
    }
    Ok(Path { times, dim, states })
}

pub fn simulate_path<D: Dynamics + ?Sized>(model: &D, x0: &[f64], cfg: &IntegratorConfig, stream_index: u64) -> Result<Path> {
    cfg.validate()?;
    integrate_stored(
        model,
        x0,
        cfg.effective_dt(),
        cfg.n_steps(),
        cfg.thinning,
        cfg.guard_radius,
        rng::stream(cfg.seed, stream_index),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub paths: Vec<Path>,
    pub config: IntegratorConfig,
    pub model_label: String,
}

pub fn simulate_ensemble<D: Dynamics + ?Sized>(model: &D, x0: &[f64], cfg: &IntegratorConfig, label: &str) -> Result<Ensemble> {
    cfg.validate()?;
    let paths = par_map_indexed(cfg.n_paths, |i| simulate_path(model, x0, cfg, i as u64))?;
    Ok(Ensemble {
        paths,
        config: *cfg,
        model_label: label.to_string(),
    })
}

impl Ensemble {
    pub fn times(&self) -> &[f64] {
        &self.paths[0].times
    }

    pub fn dim(&self) -> usize {
        self.paths[0].dim
    }

    /// All path states at stored time index `i`, flattened row-major.
    pub fn states_at(&self, i: usize) -> Vec<f64> {
        self.paths.iter().flat_map(|p| p.state(i).iter().copied()).collect()
    }

    /// Coordinate `c` of every path at stored time index `i`.
    pub fn coordinate_at(&self, i: usize, c: usize) -> Vec<f64> {
        self.paths.iter().map(|p| p.state(i)[c]).collect()
    }

    pub fn terminal_coordinate(&self, c: usize) -> Vec<f64> {
        let last = self.times().len() - 1;
        self.coordinate_at(last, c)
    }

    /// Header metadata written next to the CSV body.
    pub fn header_json(&self) -> serde_json::Value {
        serde_json::json!({
            "model_label": self.model_label,
            "config": self.config,
            "dim": self.dim(),
            "n_stored_times": self.times().len(),
        })
    }

    /// CSV body with columns `path_id, t, x_1 .. x_d`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let d = self.dim();
        let mut header = vec!["path_id".to_string(), "t".to_string()];
        header.extend((1..=d).map(|i| format!("x_{i}")));
        w.write_record(&header)?;
        for (id, path) in self.paths.iter().enumerate() {
            for (t, x) in path.iter() {
                let mut row = vec![id.to_string(), t.to_string()];
                row.extend(x.iter().map(|v| v.to_string()));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Parallel map over `0..n` whose output (and first reported error) is in
/// index order regardless of scheduling.
pub(crate) fn par_map_indexed<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let results: Vec<Result<T>> = (0..n).into_par_iter().map(|i| f(i).map_err(|e| e.in_path(i))).collect();
    results.into_iter().collect()
}
