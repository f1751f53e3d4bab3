//! Acceptance suite. Runs the shipped configs under `configs/acceptance` and
//! prints one PASS/FAIL line per criterion.
//!
//! Arguments that parse as integers select criteria: `cargo test --test acceptance -- 7 12`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use ergodiff::averaging::{simulate_fast_slow, FastSlowOptions};
use ergodiff::models::{benchmark_fast_slow, BenchmarkVariant};
use ergodiff::runner::{emit_report, run_experiment, ExperimentConfig, Report};
use ergodiff::stats::{ks_one_sample, spearman};
use ergodiff::Result;
use statrs::distribution::{ContinuousCDF, Normal};

type Verdict = (bool, String);

fn config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/acceptance")
}

fn load(name: &str, out: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&config_dir().join(format!("{name}.toml")))?;
    cfg.output_dir = out.join(name);
    Ok(cfg)
}

fn run(name: &str, out: &Path) -> Result<Report> {
    let cfg = load(name, out)?;
    let report = run_experiment(&cfg)?;
    emit_report(&report, &cfg.output_dir)?;
    Ok(report)
}

fn failures(r: &Report) -> String {
    let bad: Vec<String> = r.checks.iter().filter(|c| !c.passed).map(|c| format!("{}={:.4} vs {:.4}", c.name, c.value, c.bound)).collect();
    if bad.is_empty() {
        format!("{} checks ok", r.checks.len())
    } else {
        format!("failed: {}", bad.join(", "))
    }
}

fn all_pass(names: &[&str], out: &Path, max_secs: Option<f64>) -> Result<Verdict> {
    let mut ok = true;
    let mut notes = Vec::new();
    for name in names {
        let r = run(name, out)?;
        let wall = r.metadata.wall_time_s;
        let fast = max_secs.is_none_or(|m| wall < m);
        ok &= r.passed() && fast;
        notes.push(format!("{name}: {} in {wall:.1}s{}", failures(&r), if fast { "" } else { " (over budget)" }));
    }
    Ok((ok, notes.join("; ")))
}

fn c1(out: &Path) -> Result<Verdict> {
    all_pass(&["c01_invariant_ou"], out, Some(60.0))
}

fn c2(out: &Path) -> Result<Verdict> {
    all_pass(&["c02_poisson_ou_linear", "c02_poisson_ou_quadratic"], out, Some(120.0))
}

fn c3(out: &Path) -> Result<Verdict> {
    all_pass(&["c03_residual_ou"], out, None)
}

fn c4(out: &Path) -> Result<Verdict> {
    all_pass(&["c04_centering_ou"], out, None)
}

fn c5(out: &Path) -> Result<Verdict> {
    all_pass(&["c05_effective_a", "c05_effective_b"], out, Some(600.0))
}

fn c6(out: &Path) -> Result<Verdict> {
    all_pass(&["c06_green_kubo_a", "c06_green_kubo_b"], out, None)
}

/// Runner check plus an independent one-sample KS against the exact limit law.
fn c7(out: &Path) -> Result<Verdict> {
    let (ok, note) = all_pass(&["c07_converge_a"], out, Some(600.0))?;
    let (sys, _) = benchmark_fast_slow(BenchmarkVariant::A);
    let limit = Normal::new(0.0, (1.0 - (-2.0f64).exp()).sqrt()).expect("positive variance");
    let eps = [0.4, 0.2, 0.1];
    let mut ks = Vec::new();
    for (k, e) in eps.iter().enumerate() {
        let opts = FastSlowOptions { eps: *e, horizon: 1.0, fast_dt: 0.01, n_paths: 10_000, seed: 7_700 + k as u64, record_dt: None };
        let terminal = simulate_fast_slow(&sys, &[0.0], &[0.0], &opts)?.y.terminal_coordinate(0);
        ks.push(ks_one_sample(&terminal, |v| limit.cdf(v)));
    }
    let trend = spearman(&eps, &ks);
    let exact_ok = trend > 0.0 && ks[2] <= 0.05;
    Ok((ok && exact_ok, format!("{note}; exact-law KS {ks:.4?}, spearman {trend:.2}")))
}

fn c8(out: &Path) -> Result<Verdict> {
    all_pass(&["c08_mixing_ou"], out, None)
}

/// The degenerate estimate is repeated with a second seed; the two 95% intervals must overlap.
fn c9(out: &Path) -> Result<Verdict> {
    let (ok, note) = all_pass(&["c09_doeblin_ou", "c09_doeblin_degenerate"], out, None)?;
    let first = load("c09_doeblin_degenerate", out)?;
    let mut second = first.clone();
    second.seed += 1;
    let (a, b) = (run_experiment(&first)?, run_experiment(&second)?);
    let ci = |r: &Report| {
        let (q, se) = (r.summary["q_hat"].as_f64().unwrap_or(f64::NAN), r.summary["q_stderr"].as_f64().unwrap_or(f64::NAN));
        (q - 1.96 * se, q + 1.96 * se)
    };
    let ((lo_a, hi_a), (lo_b, hi_b)) = (ci(&a), ci(&b));
    let overlap = lo_a <= hi_b && lo_b <= hi_a;
    Ok((ok && overlap, format!("{note}; seed intervals [{lo_a:.4}, {hi_a:.4}] and [{lo_b:.4}, {hi_b:.4}]")))
}

fn c10(out: &Path) -> Result<Verdict> {
    all_pass(&["c10_exit_ou", "c10_exit_degenerate"], out, None)
}

fn c11(out: &Path) -> Result<Verdict> {
    all_pass(&["c11_sup_growth_ou"], out, None)
}

const COUNT_KEYS: [&str; 7] = ["n_paths", "n_samples", "n_points", "residual_paths", "n_limit_paths", "n_chains", "centering_points"];

/// Scales every sample count down by 100 and caps the Green–Kubo horizon so
/// the whole suite can be replayed twice.
fn shrink(v: &mut toml::Value) {
    if let toml::Value::Table(t) = v {
        for (k, val) in t.iter_mut() {
            match val {
                toml::Value::Integer(n) if COUNT_KEYS.contains(&k.as_str()) => *n = (*n / 100).max(2),
                _ => shrink(val),
            }
        }
        if let Some(toml::Value::Table(gk)) = t.get_mut("green-kubo") {
            gk.insert("horizon".into(), toml::Value::Float(2000.0));
        }
    }
}

fn csv_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut files: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    files.into_iter().map(|p| Ok((p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p)?))).collect()
}

/// Every shipped config, at reduced sample counts, replayed in a 1-thread and a 4-thread pool.
fn c12(out: &Path) -> Result<Verdict> {
    let mut names: Vec<String> = fs::read_dir(config_dir())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .map(|p| p.file_stem().unwrap().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let mut differing = Vec::new();
    for name in &names {
        let mut value: toml::Value = toml::from_str(&fs::read_to_string(config_dir().join(format!("{name}.toml")))?).map_err(|e| ergodiff::Error::Config(e.to_string()))?;
        shrink(&mut value);
        let text = toml::to_string(&value).map_err(|e| ergodiff::Error::Config(e.to_string()))?;
        let mut dirs = Vec::new();
        for threads in [1, 4] {
            let mut cfg = ExperimentConfig::from_toml_str(&text)?;
            cfg.output_dir = out.join(format!("det{threads}")).join(name);
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool");
            let report = pool.install(|| run_experiment(&cfg))?;
            emit_report(&report, &cfg.output_dir)?;
            dirs.push(cfg.output_dir);
        }
        if csv_bytes(&dirs[0])? != csv_bytes(&dirs[1])? {
            differing.push(name.clone());
        }
    }
    Ok((differing.is_empty(), format!("{} configs replayed, differing: {differing:?}", names.len())))
}

type Criterion = fn(&Path) -> Result<Verdict>;

const CRITERIA: [(u32, &str, Criterion); 12] = [
    (1, "OU invariant measure", c1),
    (2, "Poisson solver vs closed form", c2),
    (3, "integral-equation residual", c3),
    (4, "centering", c4),
    (5, "effective coefficients", c5),
    (6, "Green-Kubo vs direct", c6),
    (7, "weak convergence", c7),
    (8, "mixing curve", c8),
    (9, "Doeblin diagnostic", c9),
    (10, "exit probe", c10),
    (11, "sup-growth diagnostic", c11),
    (12, "determinism", c12),
];

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let out = tempfile::tempdir().expect("temporary output directory");
    let mut failed = 0;
    for (id, title, criterion) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let (ok, note) = criterion(out.path()).unwrap_or_else(|e| (false, format!("error: {e}")));
        println!("{} criterion {id:>2} ({title}) [{:.0}s]: {note}", if ok { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64());
        failed += usize::from(!ok);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
