use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::averaging::DistanceKind;
use crate::error::{Error, Result};
use crate::models;

/// Step used wherever a config omits `dt`.
pub const DEFAULT_DT: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub experiment: Experiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Invariant(InvariantExperiment),
    Mixing(MixingExperiment),
    Doeblin(DoeblinExperiment),
    ExitProbe(ExitProbeExperiment),
    SupGrowth(SupGrowthExperiment),
    Poisson(PoissonExperiment),
    Residual(ResidualExperiment),
    Effective(EffectiveExperiment),
    GreenKubo(GreenKuboExperiment),
    Converge(ConvergeExperiment),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Invariant(_) => "invariant",
            Experiment::Mixing(_) => "mixing",
            Experiment::Doeblin(_) => "doeblin",
            Experiment::ExitProbe(_) => "exit-probe",
            Experiment::SupGrowth(_) => "sup-growth",
            Experiment::Poisson(_) => "poisson",
            Experiment::Residual(_) => "residual",
            Experiment::Effective(_) => "effective",
            Experiment::GreenKubo(_) => "green-kubo",
            Experiment::Converge(_) => "converge",
        }
    }
}

/// Long-run sampling budget for `μ̂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSpec {
    pub burn_in: f64,
    pub n_samples: usize,
    pub thinning_time: f64,
    pub dt: Option<f64>,
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvariantExperiment {
    pub model: String,
    pub sampling: SamplingSpec,
    pub tolerance: Option<MomentTolerance>,
}

/// Per-coordinate targets for the mean and variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentTolerance {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub mean_sigmas: f64,
    pub variance_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixingExperiment {
    pub model: String,
    pub x0: Vec<f64>,
    pub times: Vec<f64>,
    pub n_paths: usize,
    pub dt: Option<f64>,
    pub sampling: SamplingSpec,
    pub tolerance: Option<MixingTolerance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixingTolerance {
    /// Must be one of `times`.
    pub t_check: f64,
    pub tv_max: f64,
    pub noise_bands: f64,
    /// Required decay order `k + 1` of the fitted rate.
    pub poly_order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoeblinExperiment {
    pub model: String,
    pub radius: f64,
    pub t_b: f64,
    pub n0: usize,
    pub grid: Vec<Vec<f64>>,
    pub n_chains: usize,
    pub dt: Option<f64>,
    pub bandwidth: Option<f64>,
    /// Defaults to 100 time units.
    pub return_cap: Option<f64>,
    pub cells_per_axis: Option<usize>,
    pub tolerance: Option<DoeblinTolerance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoeblinTolerance {
    pub q_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExitProbeExperiment {
    pub model: String,
    pub radius: f64,
    pub t0: f64,
    pub grid: Vec<Vec<f64>>,
    pub n_paths: usize,
    pub dt: Option<f64>,
    pub tolerance: Option<ExitTolerance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExitTolerance {
    /// `p_min` must exceed this.
    pub p_min_above: f64,
    /// Per-point agreement with a closed-form oracle, when the model has one.
    pub oracle_sigmas: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupGrowthExperiment {
    pub model: String,
    pub x0: Vec<f64>,
    pub p: f64,
    pub horizon: f64,
    pub eps_list: Vec<f64>,
    pub n_paths: usize,
    pub dt: Option<f64>,
    pub tolerance: Option<SigmaTolerance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaTolerance {
    pub sigmas: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FunctionKind {
    /// `f(x) = x₁`
    Linear,
    /// `f(x) = x₁² - 1`
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Centering {
    /// Subtract the `μ̂` mean; needs `sampling`.
    InvariantMean,
    /// Trust the function to be centered as given.
    Declared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoissonExperiment {
    pub model: String,
    pub function: FunctionKind,
    pub centering: Centering,
    pub query: Vec<Vec<f64>>,
    pub horizon: f64,
    pub n_paths: usize,
    pub dt: Option<f64>,
    pub sampling: Option<SamplingSpec>,
    /// Solve at this many strided `μ̂` samples and report `μ̂(û)`; needs `sampling`.
    pub centering_points: Option<usize>,
    pub tolerance: Option<PoissonTolerance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoissonTolerance {
    /// Pass when `|error| ≤ max(sigmas · stderr, abs_floor)`.
    pub sigmas: f64,
    pub abs_floor: f64,
    pub centering_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualExperiment {
    pub model: String,
    pub function: FunctionKind,
    pub centering: Centering,
    pub query: Vec<Vec<f64>>,
    pub horizon: f64,
    pub n_paths: usize,
    pub dt: Option<f64>,
    pub sampling: Option<SamplingSpec>,
    pub t: f64,
    pub residual_paths: usize,
    pub tolerance: Option<PoissonTolerance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectorSpec {
    pub n_points: usize,
    pub n_paths: usize,
    pub horizon: f64,
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectiveExperiment {
    pub system: String,
    pub axes: Vec<Vec<f64>>,
    pub sampling: SamplingSpec,
    pub correctors: CorrectorSpec,
    pub tolerance: Option<EffectiveTolerance>,
}

/// Against the system oracle: `|b̂ - b̄| ≤ b_abs (1 + |y|)` and
/// `|â - ā| ≤ a_rel ā` entrywise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectiveTolerance {
    pub b_abs: f64,
    pub a_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectSpec {
    pub sampling: SamplingSpec,
    pub correctors: CorrectorSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreenKuboExperiment {
    pub system: String,
    pub ys: Vec<Vec<f64>>,
    pub x0: Option<Vec<f64>>,
    pub burn_in: f64,
    pub horizon: f64,
    pub record_dt: f64,
    pub dt: Option<f64>,
    pub lag_max: Option<f64>,
    pub window: Option<f64>,
    pub rel_tol: Option<f64>,
    /// Corrector-based `ā` to compare against.
    pub direct: Option<DirectSpec>,
    pub tolerance: Option<SigmaTolerance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum LimitSource {
    /// Tabulate the system oracle's `(b̄, ā)`.
    Oracle,
    Estimated(DirectSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergeExperiment {
    pub system: String,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub eps_list: Vec<f64>,
    pub times: Vec<f64>,
    pub n_paths: usize,
    pub n_limit_paths: usize,
    pub fast_dt: f64,
    pub limit_dt: f64,
    pub record_dt: f64,
    pub distance: DistanceKind,
    pub axes: Vec<Vec<f64>>,
    pub limit: LimitSource,
    pub tolerance: Option<ConvergeTolerance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergeTolerance {
    /// Bound on the distance at the smallest ε and last time.
    pub final_max: f64,
    pub require_positive_trend: bool,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(format!("{name} must be positive and finite, got {v}")))
    }
}

fn nonnegative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(format!("{name} must be nonnegative and finite, got {v}")))
    }
}

fn count(name: &str, n: usize) -> Result<()> {
    if n > 0 {
        Ok(())
    } else {
        Err(bad(format!("{name} must be at least 1")))
    }
}

fn opt_positive(name: &str, v: Option<f64>) -> Result<()> {
    v.map_or(Ok(()), |v| positive(name, v))
}

fn points(name: &str, pts: &[Vec<f64>], dim: usize) -> Result<()> {
    if pts.is_empty() {
        return Err(bad(format!("{name} must not be empty")));
    }
    if let Some(p) = pts.iter().find(|p| p.len() != dim || p.iter().any(|v| !v.is_finite())) {
        return Err(bad(format!("{name} entry {p:?} is not a finite point of dimension {dim}")));
    }
    Ok(())
}

fn eps_list(list: &[f64]) -> Result<()> {
    if list.is_empty() || list.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
        return Err(bad("eps_list entries must lie in (0, 1]"));
    }
    if list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(bad("eps_list must be strictly decreasing"));
    }
    Ok(())
}

fn model_dim(label: &str) -> Result<usize> {
    models::model_by_label(label)
        .map(|m| m.dim_x)
        .ok_or_else(|| bad(format!("unknown model label {label:?}; known: {:?}", models::MODEL_LABELS)))
}

fn system_dims(label: &str) -> Result<(usize, usize)> {
    models::system_by_label(label)
        .map(|s| (s.dim_x(), s.dim_y))
        .ok_or_else(|| bad(format!("unknown system label {label:?}; known: {:?}", models::SYSTEM_LABELS)))
}

impl SamplingSpec {
    fn validate(&self, dim: usize) -> Result<()> {
        nonnegative("sampling.burn_in", self.burn_in)?;
        count("sampling.n_samples", self.n_samples)?;
        positive("sampling.thinning_time", self.thinning_time)?;
        opt_positive("sampling.dt", self.dt)?;
        if let Some(x0) = &self.x0 {
            points("sampling.x0", std::slice::from_ref(x0), dim)?;
        }
        Ok(())
    }
}

impl CorrectorSpec {
    fn validate(&self) -> Result<()> {
        count("correctors.n_points", self.n_points)?;
        count("correctors.n_paths", self.n_paths)?;
        positive("correctors.horizon", self.horizon)?;
        opt_positive("correctors.dt", self.dt)
    }
}

impl DirectSpec {
    fn validate(&self, dim_x: usize) -> Result<()> {
        self.sampling.validate(dim_x)?;
        self.correctors.validate()
    }
}

fn axes(list: &[Vec<f64>], dim_y: usize) -> Result<()> {
    if list.len() != dim_y {
        return Err(bad(format!("need one axis per slow coordinate ({dim_y})")));
    }
    if list.iter().any(|a| a.len() < 2 || a.windows(2).any(|w| !(w[1] > w[0]))) {
        return Err(bad("each axis needs at least two strictly increasing nodes"));
    }
    Ok(())
}

fn poisson_common(model: &str, centering: Centering, query: &[Vec<f64>], horizon: f64, n_paths: usize, dt: Option<f64>, sampling: &Option<SamplingSpec>) -> Result<()> {
    let d = model_dim(model)?;
    points("query", query, d)?;
    positive("horizon", horizon)?;
    count("n_paths", n_paths)?;
    opt_positive("dt", dt)?;
    match (centering, sampling) {
        (_, Some(s)) => s.validate(d),
        (Centering::InvariantMean, None) => Err(bad("centering = \"invariant-mean\" needs a sampling table")),
        (Centering::Declared, None) => Ok(()),
    }
}

fn poisson_tolerance(t: &Option<PoissonTolerance>) -> Result<()> {
    if let Some(t) = t {
        positive("tolerance.sigmas", t.sigmas)?;
        nonnegative("tolerance.abs_floor", t.abs_floor)?;
        opt_positive("tolerance.centering_max", t.centering_max)?;
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| bad(e.to_string()))
    }

    /// Full schema check; no compute happens before this passes.
    pub fn validate(&self) -> Result<()> {
        if self.output_dir.as_os_str().is_empty() {
            return Err(bad("output_dir must not be empty"));
        }
        match &self.experiment {
            Experiment::Invariant(e) => {
                let d = model_dim(&e.model)?;
                e.sampling.validate(d)?;
                if let Some(t) = &e.tolerance {
                    if t.mean.len() != d || t.variance.len() != d {
                        return Err(bad("tolerance.mean and tolerance.variance need one entry per coordinate"));
                    }
                    positive("tolerance.mean_sigmas", t.mean_sigmas)?;
                    positive("tolerance.variance_rel", t.variance_rel)?;
                }
            }
            Experiment::Mixing(e) => {
                let d = model_dim(&e.model)?;
                points("x0", std::slice::from_ref(&e.x0), d)?;
                if e.times.is_empty() || e.times.iter().any(|t| !(*t >= 0.0)) || e.times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(bad("times must be nonnegative and strictly increasing"));
                }
                count("n_paths", e.n_paths)?;
                opt_positive("dt", e.dt)?;
                e.sampling.validate(d)?;
                if let Some(t) = &e.tolerance {
                    if !e.times.iter().any(|s| (s - t.t_check).abs() < 1e-12) {
                        return Err(bad("tolerance.t_check must be one of times"));
                    }
                    positive("tolerance.tv_max", t.tv_max)?;
                    nonnegative("tolerance.noise_bands", t.noise_bands)?;
                    opt_positive("tolerance.poly_order", t.poly_order)?;
                }
            }
            Experiment::Doeblin(e) => {
                let d = model_dim(&e.model)?;
                positive("radius", e.radius)?;
                positive("t_b", e.t_b)?;
                count("n0", e.n0)?;
                points("grid", &e.grid, d)?;
                if e.grid.len() < 2 {
                    return Err(bad("grid needs at least two points"));
                }
                count("n_chains", e.n_chains)?;
                opt_positive("dt", e.dt)?;
                opt_positive("bandwidth", e.bandwidth)?;
                opt_positive("return_cap", e.return_cap)?;
                if e.cells_per_axis == Some(0) {
                    return Err(bad("cells_per_axis must be at least 1"));
                }
                if let Some(t) = &e.tolerance {
                    nonnegative("tolerance.q_min", t.q_min)?;
                }
            }
            Experiment::ExitProbe(e) => {
                let d = model_dim(&e.model)?;
                positive("radius", e.radius)?;
                positive("t0", e.t0)?;
                points("grid", &e.grid, d)?;
                count("n_paths", e.n_paths)?;
                opt_positive("dt", e.dt)?;
                if let Some(t) = &e.tolerance {
                    nonnegative("tolerance.p_min_above", t.p_min_above)?;
                    opt_positive("tolerance.oracle_sigmas", t.oracle_sigmas)?;
                }
            }
            Experiment::SupGrowth(e) => {
                let d = model_dim(&e.model)?;
                points("x0", std::slice::from_ref(&e.x0), d)?;
                positive("p", e.p)?;
                positive("horizon", e.horizon)?;
                eps_list(&e.eps_list)?;
                count("n_paths", e.n_paths)?;
                opt_positive("dt", e.dt)?;
                if let Some(t) = &e.tolerance {
                    nonnegative("tolerance.sigmas", t.sigmas)?;
                }
            }
            Experiment::Poisson(e) => {
                poisson_common(&e.model, e.centering, &e.query, e.horizon, e.n_paths, e.dt, &e.sampling)?;
                if let Some(k) = e.centering_points {
                    count("centering_points", k)?;
                    if e.sampling.is_none() {
                        return Err(bad("centering_points needs a sampling table"));
                    }
                }
                poisson_tolerance(&e.tolerance)?;
            }
            Experiment::Residual(e) => {
                poisson_common(&e.model, e.centering, &e.query, e.horizon, e.n_paths, e.dt, &e.sampling)?;
                positive("t", e.t)?;
                count("residual_paths", e.residual_paths)?;
                poisson_tolerance(&e.tolerance)?;
            }
            Experiment::Effective(e) => {
                let (dx, dy) = system_dims(&e.system)?;
                axes(&e.axes, dy)?;
                e.sampling.validate(dx)?;
                e.correctors.validate()?;
                if let Some(t) = &e.tolerance {
                    positive("tolerance.b_abs", t.b_abs)?;
                    positive("tolerance.a_rel", t.a_rel)?;
                }
            }
            Experiment::GreenKubo(e) => {
                let (dx, dy) = system_dims(&e.system)?;
                points("ys", &e.ys, dy)?;
                if let Some(x0) = &e.x0 {
                    points("x0", std::slice::from_ref(x0), dx)?;
                }
                nonnegative("burn_in", e.burn_in)?;
                positive("horizon", e.horizon)?;
                positive("record_dt", e.record_dt)?;
                if e.record_dt > e.horizon {
                    return Err(bad("record_dt must not exceed horizon"));
                }
                opt_positive("dt", e.dt)?;
                opt_positive("lag_max", e.lag_max)?;
                opt_positive("window", e.window)?;
                opt_positive("rel_tol", e.rel_tol)?;
                if let Some(d) = &e.direct {
                    d.validate(dx)?;
                }
                if let Some(t) = &e.tolerance {
                    positive("tolerance.sigmas", t.sigmas)?;
                }
            }
            Experiment::Converge(e) => {
                let (dx, dy) = system_dims(&e.system)?;
                points("x0", std::slice::from_ref(&e.x0), dx)?;
                points("y0", std::slice::from_ref(&e.y0), dy)?;
                eps_list(&e.eps_list)?;
                if e.times.is_empty() || e.times.iter().any(|t| !(*t > 0.0)) || e.times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(bad("times must be positive and strictly increasing"));
                }
                count("n_paths", e.n_paths)?;
                count("n_limit_paths", e.n_limit_paths)?;
                positive("fast_dt", e.fast_dt)?;
                if e.fast_dt > 0.1 {
                    return Err(bad("fast_dt must not exceed 0.1"));
                }
                positive("limit_dt", e.limit_dt)?;
                positive("record_dt", e.record_dt)?;
                axes(&e.axes, dy)?;
                if let LimitSource::Estimated(d) = &e.limit {
                    d.validate(dx)?;
                }
                if let Some(t) = &e.tolerance {
                    positive("tolerance.final_max", t.final_max)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const INVARIANT: &str = r#"
seed = 3
output_dir = "out"

[experiment.invariant]
model = "ou"
sampling = { burn_in = 5.0, n_samples = 100, thinning_time = 0.1 }
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml_str(INVARIANT).unwrap();
        assert_eq!(cfg.experiment.kind(), "invariant");
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn unknown_label_is_config_error() {
        let text = INVARIANT.replace("\"ou\"", "\"nope\"");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_field_is_rejected() {
        let text = INVARIANT.replace("model = \"ou\"", "model = \"ou\"\nextra = 1");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::Config(_))));
    }

    #[test]
    fn budgets_have_no_defaults() {
        let text = INVARIANT.replace("n_samples = 100, ", "");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::Config(_))));
        let text = INVARIANT.replace("n_samples = 100", "n_samples = 0");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::Config(_))));
    }

    #[test]
    fn eps_outside_unit_interval_is_rejected() {
        assert!(eps_list(&[0.4, 0.2]).is_ok());
        assert!(eps_list(&[1.5, 0.2]).is_err());
        assert!(eps_list(&[0.2, 0.4]).is_err());
        assert!(eps_list(&[0.2, 0.0]).is_err());
    }
}
