use std::fs;
use std::path::Path;
use std::process::Command;

use ergodiff::runner::{emit_report, exit_code, run_experiment, ExperimentConfig};
use ergodiff::Error;

const SMALL: &str = r#"
seed = 9
output_dir = "OUT"

[experiment.converge]
system = "benchmark-a"
x0 = [0.0]
y0 = [0.0]
eps_list = [0.5, 0.25]
times = [0.5]
n_paths = 200
n_limit_paths = 400
fast_dt = 0.05
limit_dt = 0.01
record_dt = 0.5
distance = "ks-max"
axes = [[-8.0, 8.0]]
limit = "oracle"
"#;

fn config(dir: &Path) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(&SMALL.replace("OUT", &dir.display().to_string())).unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ergodiff"))
}

#[test]
fn converge_csv_has_the_contract_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&dir.path().join("run"));
    let report = run_experiment(&cfg).unwrap();
    let files = emit_report(&report, &cfg.output_dir).unwrap();
    assert!(files.iter().all(|f| f.exists()));
    let csv = fs::read_to_string(cfg.output_dir.join("convergence.csv")).unwrap();
    assert!(csv.starts_with("eps,t,distance,trend_stat\n"));
    assert!(csv.ends_with('\n'));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(cfg.output_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["seed"], 9);
    assert_eq!(json["experiment"], "converge");
    assert!(cfg.output_dir.join("convergence.plot.csv").exists());
}

#[test]
fn identical_config_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (config(&dir.path().join("a")), config(&dir.path().join("b")));
    emit_report(&run_experiment(&a).unwrap(), &a.output_dir).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    emit_report(&pool.install(|| run_experiment(&b)).unwrap(), &b.output_dir).unwrap();
    for f in ["convergence.csv", "convergence.plot.csv"] {
        assert_eq!(fs::read(a.output_dir.join(f)).unwrap(), fs::read(b.output_dir.join(f)).unwrap());
    }
}

#[test]
fn outputs_are_write_once() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&dir.path().join("run"));
    let report = run_experiment(&cfg).unwrap();
    emit_report(&report, &cfg.output_dir).unwrap();
    let before = fs::read(cfg.output_dir.join("report.json")).unwrap();
    assert!(matches!(emit_report(&report, &cfg.output_dir), Err(Error::Io(_))));
    assert_eq!(fs::read(cfg.output_dir.join("report.json")).unwrap(), before);
}

#[test]
fn tolerance_failure_is_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("OUT", &dir.path().display().to_string()) + "tolerance = { final_max = 1e-9, require_positive_trend = false }\n";
    let result = run_experiment(&ExperimentConfig::from_toml_str(&text).unwrap());
    assert_eq!(exit_code(&result), 2);
}

#[test]
fn cli_unknown_model_exits_one_without_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg_path = dir.path().join("bad.toml");
    fs::write(&cfg_path, SMALL.replace("OUT", &out.display().to_string()).replace("benchmark-a", "no-such-system")).unwrap();
    let status = bin().args(["run", "--config"]).arg(&cfg_path).status().unwrap();
    assert_eq!(status.code(), Some(1));
    assert!(!out.exists());
    let status = bin().args(["validate", "--config"]).arg(&cfg_path).status().unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn cli_runs_with_overrides_and_lists_models() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("ok.toml");
    fs::write(&cfg_path, SMALL.replace("OUT", "ignored")).unwrap();
    let out = dir.path().join("elsewhere");
    let status = bin()
        .env("ERGODIFF_THREADS", "2")
        .args(["run", "--seed", "4", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["seed"], 4);
    let listing = bin().arg("list-models").output().unwrap();
    let text = String::from_utf8(listing.stdout).unwrap();
    for l in ["ou", "cubic", "degenerate", "benchmark-a", "benchmark-b"] {
        assert!(text.contains(l));
    }
}

#[test]
fn shipped_configs_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for sub in ["acceptance", "examples"] {
        let Ok(entries) = fs::read_dir(root.join(sub)) else { continue };
        for e in entries {
            let p = e.unwrap().path();
            if p.extension().is_some_and(|x| x == "toml") {
                ExperimentConfig::load(&p).unwrap_or_else(|err| panic!("{}: {err}", p.display()));
                n += 1;
            }
        }
    }
    assert!(n >= 12);
}
