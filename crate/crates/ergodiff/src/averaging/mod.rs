//! Slow-fast systems and their effective diffusion limit.

mod convergence;
mod effective;
mod green_kubo;
mod simulate;
mod system;

pub use convergence::{distance, weak_convergence_report, ConvergenceBudget, ConvergenceReport, DistanceKind};
pub use effective::{
    build_effective_model, corrector_family, effective_coefficients, estimate_g_bar, estimate_grad_g_bar, grid_nodes, repair_psd, simulate_limit,
    CorrectorBudget, CorrectorSet, EffectiveCoefficients, EffectiveModel,
};
pub use green_kubo::{green_kubo_diffusion, stationary_run, GreenKuboEstimate, GreenKuboOptions};
pub use simulate::{simulate_coupled, simulate_fast_slow, FastSlowOptions, FastSlowRun};
pub use system::{FastSlowSystem, SlowField};
