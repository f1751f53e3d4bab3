use std::collections::BTreeMap;
use std::time::Instant;

use serde_json::json;

use super::config::*;
use super::report::{Check, Metadata, Report, Table};
use crate::averaging::{
    build_effective_model, corrector_family, effective_coefficients, green_kubo_diffusion, stationary_run, weak_convergence_report, ConvergenceBudget, CorrectorBudget,
    EffectiveModel, FastSlowSystem, GreenKuboOptions,
};
use crate::ergodicity::{
    coordinate_moments, doeblin_overlap_estimate, estimate_invariant_measure, exit_time_probe, sup_growth_diagnostic, tv_decay_curve, DoeblinOptions, EmpiricalMeasure,
    InvariantOptions, MixingOptions, ProbeBudget,
};
use crate::error::{Error, Result};
use crate::models::{self, BenchmarkOracle, BenchmarkVariant, OuOracle};
use crate::poisson::{center_function, centering_and_growth_check, poisson_residual, solve_poisson_mc, CenterableFunction, PoissonOptions, PoissonSolution};
use crate::rng::derive_seed;
use crate::sde::SdeModel;

type Outcome = (Vec<Table>, serde_json::Value, Vec<Check>);

fn names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}_{i}")).collect()
}

fn pair_names(prefix: &str, l: usize) -> Vec<String> {
    (1..=l).flat_map(|i| (1..=l).map(move |j| format!("{prefix}_{i}{j}"))).collect()
}

fn cols(fixed: &[&str]) -> Vec<String> {
    fixed.iter().map(|s| s.to_string()).collect()
}

fn model(label: &str) -> Result<SdeModel> {
    models::model_by_label(label).ok_or_else(|| Error::Config(format!("unknown model label {label:?}")))
}

fn system(label: &str) -> Result<FastSlowSystem> {
    models::system_by_label(label).ok_or_else(|| Error::Config(format!("unknown system label {label:?}")))
}

fn system_oracle(label: &str) -> Option<BenchmarkOracle> {
    match label {
        "benchmark-a" => Some(models::benchmark_fast_slow(BenchmarkVariant::A).1),
        "benchmark-b" => Some(models::benchmark_fast_slow(BenchmarkVariant::B).1),
        _ => None,
    }
}

fn poisson_oracle(model: &str, kind: FunctionKind) -> Option<fn(f64) -> f64> {
    match (model, kind) {
        ("ou", FunctionKind::Linear) => Some(|x| OuOracle.poisson_linear(x)),
        ("ou", FunctionKind::Quadratic) => Some(|x| OuOracle.poisson_quadratic(x)),
        _ => None,
    }
}

fn observable(kind: FunctionKind, dim: usize) -> CenterableFunction {
    match kind {
        FunctionKind::Linear => CenterableFunction::new("x_1", dim, 1.0, |x| x[0]),
        FunctionKind::Quadratic => CenterableFunction::new("x_1^2 - 1", dim, 2.0, |x| x[0] * x[0] - 1.0),
    }
}

const INVARIANT_STREAMS: &str = "stream 0 of derive_seed(seed, \"invariant\", 0)";

fn sample_measure(model: &SdeModel, spec: &SamplingSpec, seed: u64) -> Result<EmpiricalMeasure> {
    estimate_invariant_measure(
        model,
        &InvariantOptions {
            burn_in: spec.burn_in,
            n_samples: spec.n_samples,
            thinning_time: spec.thinning_time,
            dt: spec.dt.unwrap_or(DEFAULT_DT),
            x0: spec.x0.clone(),
            seed: derive_seed(seed, "invariant", 0),
        },
    )
}

fn corrector_budget(spec: &CorrectorSpec, seed: u64) -> CorrectorBudget {
    CorrectorBudget {
        n_points: spec.n_points,
        n_paths: spec.n_paths,
        horizon: spec.horizon,
        dt: spec.dt.unwrap_or(DEFAULT_DT),
        seed: derive_seed(seed, "correctors", 0),
    }
}

/// Validate, dispatch and collect tables, summary and tolerance checks.
/// Nothing is written; see [`super::emit_report`].
pub fn run_experiment(config: &ExperimentConfig) -> Result<Report> {
    config.validate()?;
    let start = Instant::now();
    let seed = config.seed;
    let (tables, summary, checks) = match &config.experiment {
        Experiment::Invariant(e) => invariant(e, seed)?,
        Experiment::Mixing(e) => mixing(e, seed)?,
        Experiment::Doeblin(e) => doeblin(e, seed)?,
        Experiment::ExitProbe(e) => exit_probe(e, seed)?,
        Experiment::SupGrowth(e) => sup_growth(e, seed)?,
        Experiment::Poisson(e) => poisson(e, seed)?,
        Experiment::Residual(e) => residual(e, seed)?,
        Experiment::Effective(e) => effective(e, seed)?,
        Experiment::GreenKubo(e) => green_kubo(e, seed)?,
        Experiment::Converge(e) => converge(e, seed)?,
    };
    Ok(Report {
        config: config.clone(),
        tables,
        summary,
        checks,
        metadata: Metadata {
            seed,
            crate_version: env!("CARGO_PKG_VERSION").into(),
            wall_time_s: start.elapsed().as_secs_f64(),
            threads: rayon::current_num_threads(),
        },
    })
}

fn invariant(e: &InvariantExperiment, seed: u64) -> Result<Outcome> {
    let m = model(&e.model)?;
    let mu = sample_measure(&m, &e.sampling, seed)?;
    let d = mu.dim;
    let mut moments = Table::new("moments", cols(&["coordinate", "mean", "mean_stderr", "variance", "variance_stderr"]), INVARIANT_STREAMS);
    let mut checks = Vec::new();
    for c in 0..d {
        let (m1, _) = coordinate_moments(&mu, c);
        let var = mu.expectation(|x| (x[c] - m1.value).powi(2)).estimate;
        moments.push(vec![(c + 1) as f64, m1.value, m1.stderr, var.value, var.stderr]);
        if let Some(t) = &e.tolerance {
            checks.push(Check::at_most(format!("mean_{}", c + 1), (m1.value - t.mean[c]).abs(), t.mean_sigmas * m1.stderr));
            checks.push(Check::at_most(format!("variance_rel_{}", c + 1), (var.value - t.variance[c]).abs() / t.variance[c].abs(), t.variance_rel));
        }
    }

    let mut marginal: BTreeMap<(usize, i64), f64> = BTreeMap::new();
    for (bin, mass) in &mu.histogram.mass {
        for (c, &i) in bin.iter().enumerate() {
            *marginal.entry((c, i)).or_default() += mass;
        }
    }
    let spec = &mu.histogram.spec;
    let mut hist = Table::new("histogram", cols(&["coordinate", "center", "density"]), INVARIANT_STREAMS).with_figure("center", &["density"], Some("coordinate"));
    for ((c, i), mass) in marginal {
        hist.push(vec![(c + 1) as f64, spec.origin[c] + (i as f64 + 0.5) * spec.widths[c], mass / spec.widths[c]]);
    }
    let summary = json!({ "n_samples": mu.len(), "provenance": mu.provenance });
    Ok((vec![moments, hist], summary, checks))
}

fn mixing(e: &MixingExperiment, seed: u64) -> Result<Outcome> {
    let m = model(&e.model)?;
    let mu = sample_measure(&m, &e.sampling, seed)?;
    let opts = MixingOptions {
        n_paths: e.n_paths,
        dt: e.dt.unwrap_or(DEFAULT_DT),
        binning: None,
        seed: derive_seed(seed, "mixing", 0),
    };
    let rep = tv_decay_curve(&m, &e.x0, &e.times, &mu, &opts)?;
    let mut t = Table::new("tv_curve", cols(&["t", "tv", "noise_band", "fitted"]), "path i is stream i of derive_seed(seed, \"mixing\", 0)").with_figure(
        "t",
        &["tv", "noise_band", "fitted"],
        None,
    );
    let fit = rep.fitted_rate;
    for i in 0..rep.times.len() {
        let s = rep.times[i];
        t.push(vec![s, rep.tv_estimates[i], rep.noise_bands[i], fit.c * (1.0 + s).powf(fit.exponent)]);
    }
    let mut checks = Vec::new();
    if let Some(tol) = &e.tolerance {
        let at = rep.tv_at(tol.t_check).ok_or_else(|| Error::invalid(format!("time {} missing from the curve", tol.t_check)))?;
        checks.push(Check::at_most(format!("tv_at_{}", tol.t_check), at, tol.tv_max));
        let excess = rep
            .tv_estimates
            .windows(2)
            .zip(rep.noise_bands.windows(2))
            .map(|(tv, nb)| tv[1] - tv[0] - tol.noise_bands * (nb[0] + nb[1]))
            .fold(f64::NEG_INFINITY, f64::max);
        checks.push(Check::at_most("tv_increase_beyond_noise", excess.max(-f64::MAX), 0.0));
        if let Some(k) = tol.poly_order {
            checks.push(Check::at_most("fitted_exponent", fit.exponent, -k));
        }
    }
    let summary = json!({ "fitted_rate": fit, "start_point": rep.start_point, "n_paths": rep.n_paths, "invariant_samples": mu.len() });
    Ok((vec![t], summary, checks))
}

fn doeblin(e: &DoeblinExperiment, seed: u64) -> Result<Outcome> {
    let m = model(&e.model)?;
    let mut opts = DoeblinOptions::new(e.n_chains, e.dt.unwrap_or(DEFAULT_DT), seed);
    opts.bandwidth = e.bandwidth;
    if let Some(cap) = e.return_cap {
        opts.return_cap = cap;
    }
    opts.cells_per_axis = e.cells_per_axis;
    let est = doeblin_overlap_estimate(&m, e.radius, e.t_b, e.n0, &e.grid, &opts)?;
    let streams = "chain c from grid point g is stream c of a key derived from seed and the coordinates of g";
    let mut pairs = Table::new("overlaps", cols(&["i", "j", "overlap"]), streams);
    for p in &est.pairs {
        pairs.push(vec![p.i as f64, p.j as f64, p.overlap]);
    }
    let d = m.dim_x;
    let mut head = vec!["index".to_string()];
    head.extend(names("x", d));
    head.push("drop_fraction".into());
    let mut grid = Table::new("grid", head, streams);
    for (g, x) in est.grid_points.iter().enumerate() {
        let mut row = vec![g as f64];
        row.extend(x);
        row.push(est.drop_fraction[g]);
        grid.push(row);
    }
    let mut checks = vec![Check::above("q_hat_positive", est.q_hat, 0.0)];
    if let Some(t) = &e.tolerance {
        checks.push(Check::at_least("q_hat", est.q_hat, t.q_min));
    }
    Ok((vec![pairs, grid], est.metadata_json(), checks))
}

fn exit_probe(e: &ExitProbeExperiment, seed: u64) -> Result<Outcome> {
    let m = model(&e.model)?;
    let budget = ProbeBudget {
        n_paths: e.n_paths,
        dt: e.dt.unwrap_or(DEFAULT_DT),
        seed,
    };
    let probe = exit_time_probe(&m, e.radius, e.t0, &e.grid, &budget)?;
    let oracle = (e.model == "ou").then_some(OuOracle);
    let mut head = names("x", m.dim_x);
    head.extend(cols(&["probability", "stderr"]));
    if oracle.is_some() {
        head.push("oracle".into());
    }
    let mut t = Table::new("exit", head, "grid point g uses key derive_seed(seed, \"exit-probe\", g), path i is stream i");
    if m.dim_x == 1 {
        t = t.with_figure("x_1", if oracle.is_some() { &["probability", "oracle"] } else { &["probability"] }, None);
    }
    let mut checks = Vec::new();
    for (g, row) in probe.rows.iter().enumerate() {
        let mut r = row.point.clone();
        r.extend([row.probability.value, row.probability.stderr]);
        if let Some(o) = oracle {
            let p = o.exit_probability(row.point[0], e.t0, e.radius + 1.0);
            r.push(p);
            if let Some(s) = e.tolerance.as_ref().and_then(|t| t.oracle_sigmas) {
                checks.push(Check::at_most(format!("oracle_point_{g}"), (row.probability.value - p).abs(), s * row.probability.stderr));
            }
        }
        t.push(r);
    }
    if let Some(tol) = &e.tolerance {
        checks.push(Check::above("p_min", probe.p_min, tol.p_min_above));
    }
    let summary = json!({
        "R": probe.radius,
        "t0": probe.t0,
        "p_min": probe.p_min,
        "argmin": probe.rows[probe.argmin].point,
        "oracle_p_min": oracle.map(|o| o.exit_p_min(e.radius, e.t0)),
    });
    Ok((vec![t], summary, checks))
}

fn sup_growth(e: &SupGrowthExperiment, seed: u64) -> Result<Outcome> {
    let m = model(&e.model)?;
    let budget = ProbeBudget {
        n_paths: e.n_paths,
        dt: e.dt.unwrap_or(DEFAULT_DT),
        seed,
    };
    let rows = sup_growth_diagnostic(&m, &e.x0, e.p, e.horizon, &e.eps_list, &budget)?;
    let mut t = Table::new("sup_growth", cols(&["eps", "scaled_sup_moment", "stderr"]), "eps index e uses key derive_seed(seed, \"sup-growth\", e), path i is stream i")
        .with_figure("eps", &["scaled_sup_moment"], None);
    for r in &rows {
        t.push(vec![r.eps, r.scaled.value, r.scaled.stderr]);
    }
    let mut checks = Vec::new();
    if let Some(tol) = &e.tolerance {
        for w in rows.windows(2) {
            let drop = w[0].scaled.value - w[1].scaled.value;
            let noise = (w[0].scaled.stderr.powi(2) + w[1].scaled.stderr.powi(2)).sqrt();
            checks.push(Check::above(format!("decrease_{}_to_{}", w[0].eps, w[1].eps), drop, tol.sigmas * noise));
        }
    }
    Ok((vec![t], json!({ "p": e.p, "T": e.horizon }), checks))
}

struct Solved {
    function: CenterableFunction,
    mu: Option<EmpiricalMeasure>,
    solution: PoissonSolution,
    model: SdeModel,
}

#[allow(clippy::too_many_arguments)]
fn solve(label: &str, kind: FunctionKind, centering: Centering, query: &[Vec<f64>], horizon: f64, n_paths: usize, dt: Option<f64>, sampling: &Option<SamplingSpec>, seed: u64) -> Result<Solved> {
    let m = model(label)?;
    let mu = sampling.as_ref().map(|s| sample_measure(&m, s, seed)).transpose()?;
    let raw = observable(kind, m.dim_x);
    let function = match (centering, &mu) {
        (Centering::InvariantMean, Some(mu)) => center_function(&raw, mu)?,
        (Centering::InvariantMean, None) => return Err(Error::Config("invariant-mean centering needs sampling".into())),
        (Centering::Declared, _) => raw.declare_centered(),
    };
    let opts = PoissonOptions {
        horizon,
        n_paths,
        dt: dt.unwrap_or(DEFAULT_DT),
        seed: derive_seed(seed, "poisson", 0),
    };
    let solution = solve_poisson_mc(&m, &function, query, &opts)?;
    Ok(Solved { function, mu, solution, model: m })
}

const POISSON_STREAMS: &str = "query point q uses key derive_seed(derive_seed(seed, \"poisson\", 0), \"poisson\", q), path i is stream i";

fn within(name: String, err: f64, se: f64, tol: &PoissonTolerance) -> Check {
    Check::at_most(name, err.abs(), (tol.sigmas * se).max(tol.abs_floor))
}

fn poisson(e: &PoissonExperiment, seed: u64) -> Result<Outcome> {
    let s = solve(&e.model, e.function, e.centering, &e.query, e.horizon, e.n_paths, e.dt, &e.sampling, seed)?;
    let oracle = poisson_oracle(&e.model, e.function);
    let d = s.model.dim_x;
    let mut head = names("x", d);
    head.extend(cols(&["u", "stderr"]));
    if oracle.is_some() {
        head.push("oracle".into());
    }
    let mut t = Table::new("solution", head, POISSON_STREAMS);
    if d == 1 {
        t = t.with_figure("x_1", if oracle.is_some() { &["u", "oracle"] } else { &["u"] }, None);
    }
    let mut checks = Vec::new();
    for (q, x) in s.solution.query_points.iter().enumerate() {
        let (u, se) = (s.solution.u_values[q], s.solution.stderrs[q]);
        let mut row = x.clone();
        row.extend([u, se]);
        if let Some(o) = oracle {
            row.push(o(x[0]));
            if let Some(tol) = &e.tolerance {
                checks.push(within(format!("oracle_point_{q}"), u - o(x[0]), se, tol));
            }
        }
        t.push(row);
    }
    let mut summary = json!({
        "solution": s.solution.metadata_json(),
        "function": s.function.label,
        "offset": s.function.offset,
        "mu_mean": s.function.mu_mean,
    });
    if let (Some(k), Some(mu)) = (e.centering_points, &s.mu) {
        let (pts, _) = mu.subsample(k);
        let opts = PoissonOptions {
            horizon: e.horizon,
            n_paths: e.n_paths,
            dt: e.dt.unwrap_or(DEFAULT_DT),
            seed: derive_seed(seed, "centering", 0),
        };
        let sol = solve_poisson_mc(&s.model, &s.function, &pts, &opts)?;
        let beta = s.function.growth_beta;
        let gc = centering_and_growth_check(&sol, mu, beta, beta + 5.0)?;
        if let Some(max) = e.tolerance.as_ref().and_then(|t| t.centering_max) {
            checks.push(Check::at_most("centering_mu_u", gc.mu_u.value.abs(), max));
        }
        summary["centering"] = json!(gc);
    }
    Ok((vec![t], summary, checks))
}

fn residual(e: &ResidualExperiment, seed: u64) -> Result<Outcome> {
    let s = solve(&e.model, e.function, e.centering, &e.query, e.horizon, e.n_paths, e.dt, &e.sampling, seed)?;
    let rows = poisson_residual(&s.model, &s.solution, &s.function, e.t, e.residual_paths, derive_seed(seed, "residual", 0))?;
    let mut head = names("x", s.model.dim_x);
    head.extend(cols(&["residual", "stderr", "u_hat", "propagated"]));
    let mut t = Table::new(
        "residual",
        head,
        "outer path i from point q is stream i of derive_seed(derive_seed(seed, \"residual\", 0), \"residual\", q); its inner solve uses derive_seed(that key, \"inner\", i)",
    );
    let mut checks = Vec::new();
    for (q, r) in rows.iter().enumerate() {
        let mut row = r.x.clone();
        row.extend([r.residual, r.stderr, r.u_hat, r.propagated]);
        t.push(row);
        if let Some(tol) = &e.tolerance {
            checks.push(within(format!("residual_point_{q}"), r.residual, r.stderr, tol));
        }
    }
    let summary = json!({ "t": e.t, "solution": s.solution.metadata_json(), "offset": s.function.offset });
    Ok((vec![t], summary, checks))
}

fn coefficient_table(em: &EffectiveModel) -> Table {
    let l = em.dim_y;
    let mut head = names("y", l);
    head.extend(names("b", l));
    head.extend(names("b_se", l));
    head.extend(pair_names("a", l));
    head.extend(pair_names("a_se", l));
    head.extend(cols(&["clip", "psd_warning"]));
    let mut t = Table::new(
        "coefficients",
        head,
        "invariant samples: stream 0 of derive_seed(seed, \"invariant\", 0); correctors: key derive_seed(seed, \"correctors\", 0)",
    );
    if l == 1 {
        t = t.with_figure("y_1", &["b_1", "a_11"], None);
    }
    for n in &em.nodes {
        let mut row: Vec<f64> = n.y.iter().chain(&n.b_bar).chain(&n.b_stderr).chain(&n.a_bar).chain(&n.a_stderr).copied().collect();
        row.extend([n.clip_magnitude, f64::from(u8::from(n.psd_warning))]);
        t.push(row);
    }
    t
}

fn effective(e: &EffectiveExperiment, seed: u64) -> Result<Outcome> {
    let sys = system(&e.system)?;
    let mu = sample_measure(&sys.fast, &e.sampling, seed)?;
    let em = build_effective_model(&sys, &e.axes, &mu, &corrector_budget(&e.correctors, seed))?;
    let mut checks = Vec::new();
    if let (Some(tol), Some(o)) = (&e.tolerance, system_oracle(&e.system)) {
        for n in &em.nodes {
            let y = n.y[0];
            checks.push(Check::at_most(format!("b_at_{y}"), (n.b_bar[0] - o.b_bar(y)).abs(), tol.b_abs * (1.0 + y.abs())));
            checks.push(Check::at_most(format!("a_at_{y}"), (n.a_bar[0] - o.a_bar(y)).abs(), tol.a_rel * o.a_bar(y)));
        }
    }
    Ok((vec![coefficient_table(&em)], em.metadata_json(), checks))
}

fn green_kubo(e: &GreenKuboExperiment, seed: u64) -> Result<Outcome> {
    let sys = system(&e.system)?;
    let l = sys.dim_y;
    let x0 = e.x0.clone().unwrap_or_else(|| vec![0.0; sys.dim_x()]);
    let run = stationary_run(&sys.fast, &x0, e.burn_in, e.horizon, e.dt.unwrap_or(DEFAULT_DT), e.record_dt, derive_seed(seed, "green-kubo", 0))?;
    let d = GreenKuboOptions::default();
    let opts = GreenKuboOptions {
        lag_max: e.lag_max.unwrap_or(d.lag_max),
        window: e.window.unwrap_or(d.window),
        rel_tol: e.rel_tol.unwrap_or(d.rel_tol),
    };
    let ests = e.ys.iter().map(|y| green_kubo_diffusion(&sys, y, &run, &opts)).collect::<Result<Vec<_>>>()?;
    let direct = match &e.direct {
        Some(spec) => {
            let mu = sample_measure(&sys.fast, &spec.sampling, seed)?;
            let sets = corrector_family(&sys, &e.ys, &mu, &corrector_budget(&spec.correctors, seed))?;
            Some(sets.iter().map(|s| effective_coefficients(&sys, s)).collect::<Vec<_>>())
        }
        None => None,
    };

    let mut head = names("y", l);
    head.extend(pair_names("a_gk", l));
    head.extend(pair_names("a_gk_se", l));
    head.extend(cols(&["lag", "plateau"]));
    if direct.is_some() {
        head.extend(pair_names("a_direct", l));
        head.extend(pair_names("a_direct_se", l));
    }
    let streams = "stationary run: stream 0 of derive_seed(seed, \"green-kubo\", 0); direct: derive_seed(seed, \"invariant\" | \"correctors\", 0)";
    let mut t = Table::new("green_kubo", head, streams);
    let mut running = Table::new("running", [cols(&["y_index", "lag"]), pair_names("a", l)].concat(), streams).with_figure("lag", &["a_11"], Some("y_index"));
    let mut checks = Vec::new();
    for (k, est) in ests.iter().enumerate() {
        let mut row = est.y.clone();
        row.extend(&est.a_gk);
        row.extend(&est.a_stderr);
        row.extend([est.lag, f64::from(u8::from(est.plateau_found))]);
        checks.push(Check::at_least(format!("plateau_y{k}"), f64::from(u8::from(est.plateau_found)), 1.0));
        if let Some(dc) = &direct {
            let c = &dc[k];
            row.extend(&c.a_bar);
            row.extend(&c.a_stderr);
            if let Some(tol) = &e.tolerance {
                for i in 0..l * l {
                    let se = (est.a_stderr[i].powi(2) + c.a_stderr[i].powi(2)).sqrt();
                    checks.push(Check::at_most(format!("agreement_y{k}_{i}"), (est.a_gk[i] - c.a_bar[i]).abs(), tol.sigmas * se));
                }
            }
        }
        t.push(row);
        for (lag, v) in &est.running {
            let mut r = vec![k as f64, *lag];
            r.extend(v);
            running.push(r);
        }
    }
    let summary = json!({ "options": opts, "records": run.len(), "record_dt": e.record_dt });
    Ok((vec![t, running], summary, checks))
}

fn converge(e: &ConvergeExperiment, seed: u64) -> Result<Outcome> {
    let sys = system(&e.system)?;
    let em = match &e.limit {
        LimitSource::Oracle => {
            let o = system_oracle(&e.system).ok_or_else(|| Error::Config(format!("system {:?} has no oracle", e.system)))?;
            EffectiveModel::tabulate(&sys.label, &e.axes, |y| (vec![o.b_bar(y[0])], vec![o.a_bar(y[0])]))?
        }
        LimitSource::Estimated(spec) => {
            let mu = sample_measure(&sys.fast, &spec.sampling, seed)?;
            build_effective_model(&sys, &e.axes, &mu, &corrector_budget(&spec.correctors, seed))?
        }
    };
    let budget = ConvergenceBudget {
        n_paths: e.n_paths,
        n_limit_paths: e.n_limit_paths,
        fast_dt: e.fast_dt,
        limit_dt: e.limit_dt,
        record_dt: e.record_dt,
        distance: e.distance,
    };
    let rep = weak_convergence_report(&sys, &em, &e.y0, &e.x0, &e.eps_list, &e.times, &budget, seed)?;
    let mut t = Table::new(
        "convergence",
        cols(&["eps", "t", "distance", "trend_stat"]),
        "eps index e uses key derive_seed(seed, \"eps\", e); the limit uses derive_seed(seed, \"limit\", 0); path i is stream i",
    )
    .with_figure("eps", &["distance"], Some("t"));
    for (k, eps) in rep.eps_list.iter().enumerate() {
        for (j, s) in rep.times.iter().enumerate() {
            t.push(vec![*eps, *s, rep.distances[k][j], rep.trend[j]]);
        }
    }
    let mut checks = Vec::new();
    if let Some(tol) = &e.tolerance {
        let last = *rep.distances.last().and_then(|r| r.last()).expect("validated non-empty");
        checks.push(Check::at_most("final_distance", last, tol.final_max));
        if tol.require_positive_trend {
            for (j, s) in rep.times.iter().enumerate() {
                checks.push(Check::above(format!("trend_t{s}"), rep.trend[j], 0.0));
            }
        }
    }
    let summary = json!({
        "distance": rep.distance_kind,
        "noise_floor": rep.noise_floor,
        "stiffness_warnings": rep.stiffness_warnings,
        "limit": em.metadata_json(),
    });
    Ok((vec![t], summary, checks))
}
