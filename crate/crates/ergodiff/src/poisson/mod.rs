//! Probabilistic solution of `Lu = -f` for centered `f`:
//! `u(x) = ∫_0^∞ E_x f(X_s) ds`, truncated at a finite horizon.

mod function;
mod solve;

pub use function::{center_function, CenterableFunction};
pub use solve::{
    centering_and_growth_check, default_horizon, poisson_residual, solve_poisson_mc, solve_poisson_mc_multi, GrowthCheck, PoissonOptions,
    PoissonSolution, ResidualRow,
};
pub(crate) use solve::{path_integrals, point_key};
