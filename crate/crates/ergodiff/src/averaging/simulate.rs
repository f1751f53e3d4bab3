use serde::{Deserialize, Serialize};

use super::system::FastSlowSystem;
use crate::error::{Error, Result};
use crate::rng;
use crate::sde::{par_map_indexed, Ensemble, IntegratorConfig, Path, Stepper, DEFAULT_GUARD_RADIUS};

/// Share of steps allowed to take a large explicit `G` increment.
const STIFF_STEP_SHARE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FastSlowOptions {
    pub eps: f64,
    /// Slow-time horizon `T`.
    pub horizon: f64,
    /// Step in fast time; shrunk so records fall on whole step counts.
    pub fast_dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Slow-time spacing of stored states; only `0` and `T` when absent.
    pub record_dt: Option<f64>,
}

impl FastSlowOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(Error::invalid("eps must lie in (0, 1]"));
        }
        if !(self.horizon > 0.0 && self.fast_dt > 0.0 && self.fast_dt <= 0.1) {
            return Err(Error::invalid("fast-slow run needs T > 0 and 0 < fast_dt <= 0.1"));
        }
        if self.n_paths == 0 {
            return Err(Error::invalid("n_paths must be at least 1"));
        }
        if self.record_dt.is_some_and(|r| !(r > 0.0 && r <= self.horizon)) {
            return Err(Error::invalid("record_dt must lie in (0, T]"));
        }
        Ok(())
    }

    /// `(records, fast steps per record, fast dt)` after fitting the grid.
    fn grid(&self) -> (usize, usize, f64) {
        let records = self.record_dt.map_or(1, |r| ((self.horizon / r).round() as usize).max(1));
        let fast_span = self.horizon / (self.eps * self.eps) / records as f64;
        let per_record = ((fast_span / self.fast_dt) - 1e-9).ceil().max(1.0) as usize;
        (records, per_record, fast_span / per_record as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FastSlowRun {
    /// `Y^ε` paths on the slow time grid.
    pub y: Ensemble,
    /// `X^ε` at the final time, one row per path.
    pub x_terminal: Vec<Vec<f64>>,
    pub eps: f64,
    pub fast_dt: f64,
    /// Share of steps whose `ε⁻¹ G` increment exceeded `0.1 (1 + |Y|)`.
    pub stiff_share: f64,
    /// Set when `stiff_share` exceeds one percent.
    pub stiffness_warning: bool,
}

struct OnePath {
    path: Path,
    x_end: Vec<f64>,
    stiff_steps: usize,
}

/// Shared driver: `Y ← Y + a F(X, Y) + c G(X, Y)` then one step of `X`.
#[allow(clippy::too_many_arguments)]
fn run_path(system: &FastSlowSystem, x0: &[f64], y0: &[f64], dt_fast: f64, a: f64, c: f64, records: usize, per_record: usize, slow_dt: f64, rng: rng::StreamRng) -> Result<OnePath> {
    let l = system.dim_y;
    let mut s = Stepper::new(&system.fast, x0, dt_fast, DEFAULT_GUARD_RADIUS, rng)?;
    let mut y = y0.to_vec();
    let mut fv = vec![0.0; l];
    let mut gv = vec![0.0; l];
    let mut times = Vec::with_capacity(records + 1);
    let mut states = Vec::with_capacity((records + 1) * l);
    times.push(0.0);
    states.extend_from_slice(y0);
    let guard_sq = DEFAULT_GUARD_RADIUS * DEFAULT_GUARD_RADIUS;
    let mut stiff_steps = 0;
    for r in 1..=records {
        for _ in 0..per_record {
            system.eval_f(s.state(), &y, &mut fv)?;
            system.eval_g(s.state(), &y, &mut gv)?;
            let y_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            let g_norm = gv.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (c * g_norm).abs() > 0.1 * (1.0 + y_norm) {
                stiff_steps += 1;
            }
            for i in 0..l {
                y[i] = y[i] + a * fv[i] + c * gv[i];
            }
            let y_sq: f64 = y.iter().map(|v| v * v).sum();
            if !(y_sq <= guard_sq) {
                return Err(Error::Blowup {
                    time: s.time() * slow_dt / dt_fast,
                    norm: y_sq.sqrt(),
                    guard: DEFAULT_GUARD_RADIUS,
                });
            }
            s.step()?;
        }
        times.push(r as f64 * per_record as f64 * slow_dt);
        states.extend_from_slice(&y);
    }
    Ok(OnePath {
        path: Path { times, dim: l, states },
        x_end: s.state().to_vec(),
        stiff_steps,
    })
}

fn collect(system: &FastSlowSystem, results: Vec<OnePath>, config: IntegratorConfig, eps: f64, fast_dt: f64, total_steps: usize) -> FastSlowRun {
    let stiff: usize = results.iter().map(|p| p.stiff_steps).sum();
    let stiff_share = stiff as f64 / (total_steps * results.len()) as f64;
    let (paths, x_terminal) = results.into_iter().map(|p| (p.path, p.x_end)).unzip();
    FastSlowRun {
        y: Ensemble {
            paths,
            config,
            model_label: system.label.clone(),
        },
        x_terminal,
        eps,
        fast_dt,
        stiff_share,
        stiffness_warning: stiff_share > STIFF_STEP_SHARE,
    }
}

/// Integrate in fast time `s = t / ε²`: `X` takes Euler–Maruyama steps of the
/// unscaled fast model, and `Y ← Y + ε² h F + ε h G` at the pre-step state.
pub fn simulate_fast_slow(system: &FastSlowSystem, x0: &[f64], y0: &[f64], opts: &FastSlowOptions) -> Result<FastSlowRun> {
    opts.validate()?;
    if y0.len() != system.dim_y {
        return Err(Error::invalid("y0 dimension differs from the system"));
    }
    let (records, per_record, h) = opts.grid();
    let slow_dt = opts.eps * opts.eps * h;
    let config = IntegratorConfig {
        dt: slow_dt,
        horizon: opts.horizon,
        seed: opts.seed,
        n_paths: opts.n_paths,
        thinning: per_record,
        guard_radius: DEFAULT_GUARD_RADIUS,
    };
    let results = par_map_indexed(opts.n_paths, |i| {
        run_path(system, x0, y0, h, slow_dt, opts.eps * h, records, per_record, slow_dt, rng::stream(opts.seed, i as u64))
    })?;
    Ok(collect(system, results, config, opts.eps, h, records * per_record))
}

/// Unscaled coupled system `dX = b dt + σ dB`, `dY/dt = F + G` on one grid
/// of step `dt`, with the same stream layout as [`simulate_fast_slow`].
pub fn simulate_coupled(system: &FastSlowSystem, x0: &[f64], y0: &[f64], horizon: f64, dt: f64, n_paths: usize, seed: u64, record_dt: Option<f64>) -> Result<FastSlowRun> {
    let opts = FastSlowOptions {
        eps: 1.0,
        horizon,
        fast_dt: dt,
        n_paths,
        seed,
        record_dt,
    };
    opts.validate()?;
    if y0.len() != system.dim_y {
        return Err(Error::invalid("y0 dimension differs from the system"));
    }
    let (records, per_record, h) = opts.grid();
    let config = IntegratorConfig {
        dt: h,
        horizon,
        seed,
        n_paths,
        thinning: per_record,
        guard_radius: DEFAULT_GUARD_RADIUS,
    };
    let results = par_map_indexed(n_paths, |i| run_path(system, x0, y0, h, h, h, records, per_record, h, rng::stream(seed, i as u64)))?;
    Ok(collect(system, results, config, 1.0, h, records * per_record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::SdeModel;

    fn ou() -> SdeModel {
        SdeModel::new("ou", 1, 1, |x, b| b[0] = -x[0], |_, s| s[0] = 2f64.sqrt())
    }

    fn benchmark() -> FastSlowSystem {
        FastSlowSystem::new("a", ou(), 1, |_, y, o| o[0] = -y[0], |x, _, o| o[0] = x[0], |_, _, o| o[0] = 0.0, [0.0, 1.0, 0.0])
    }

    #[test]
    fn decoupled_ode_decays() {
        let s = FastSlowSystem::new("ode", ou(), 1, |_, y, o| o[0] = -y[0], |_, _, o| o[0] = 0.0, |_, _, o| o[0] = 0.0, [0.0; 3]);
        let opts = FastSlowOptions { eps: 0.5, horizon: 1.0, fast_dt: 0.01, n_paths: 4, seed: 1, record_dt: None };
        let run = simulate_fast_slow(&s, &[0.0], &[1.0], &opts).unwrap();
        for y in run.y.terminal_coordinate(0) {
            assert!((y - (-1.0f64).exp()).abs() < 5e-3);
        }
        assert!(!run.stiffness_warning);
    }

    #[test]
    fn unit_eps_matches_coupled_simulation() {
        let opts = FastSlowOptions { eps: 1.0, horizon: 2.0, fast_dt: 0.01, n_paths: 5, seed: 11, record_dt: Some(0.5) };
        let a = simulate_fast_slow(&benchmark(), &[0.3], &[0.1], &opts).unwrap();
        let b = simulate_coupled(&benchmark(), &[0.3], &[0.1], 2.0, 0.01, 5, 11, Some(0.5)).unwrap();
        assert_eq!(a.y.paths, b.y.paths);
        assert_eq!(a.x_terminal, b.x_terminal);
    }

    #[test]
    fn record_grid_is_exact() {
        let opts = FastSlowOptions { eps: 0.3, horizon: 1.0, fast_dt: 0.07, n_paths: 1, seed: 1, record_dt: Some(0.25) };
        let run = simulate_fast_slow(&benchmark(), &[0.0], &[0.0], &opts).unwrap();
        let t = run.y.times();
        assert_eq!(t.len(), 5);
        assert!((t[4] - 1.0).abs() < 1e-12 && (t[2] - 0.5).abs() < 1e-12);
        assert!(run.fast_dt <= 0.07);
    }

    #[test]
    fn rejects_bad_eps_and_step() {
        let mut opts = FastSlowOptions { eps: 0.0, horizon: 1.0, fast_dt: 0.01, n_paths: 1, seed: 1, record_dt: None };
        assert!(simulate_fast_slow(&benchmark(), &[0.0], &[0.0], &opts).is_err());
        opts.eps = 0.5;
        opts.fast_dt = 0.5;
        assert!(simulate_fast_slow(&benchmark(), &[0.0], &[0.0], &opts).is_err());
    }

    #[test]
    fn large_coupling_raises_stiffness_warning() {
        let s = FastSlowSystem::new("stiff", ou(), 1, |_, _, o| o[0] = 0.0, |x, _, o| o[0] = 1e3 * (1.0 + x[0].abs()), |_, _, o| o[0] = 0.0, [0.0, 1.0, 0.0]);
        let opts = FastSlowOptions { eps: 1.0, horizon: 0.1, fast_dt: 0.05, n_paths: 2, seed: 1, record_dt: None };
        let run = simulate_fast_slow(&s, &[0.0], &[0.0], &opts).unwrap();
        assert!(run.stiffness_warning);
    }
}
