//! Monte Carlo tools for ergodic diffusions and their slow-fast averages.
//!
//! - [`sde`]: models, Euler–Maruyama ensembles, seeded per-path streams.
//! - [`ergodicity`]: invariant measures, TV mixing curves, Doeblin overlaps, exit and growth probes.
//! - [`poisson`]: `L u = -f` by the truncated time integral, with residual and centering checks.
//! - [`averaging`]: correctors, effective coefficients, Green–Kubo, weak convergence of the slow paths.
//! - [`models`]: OU, cubic, the degenerate example and the benchmark systems, with closed-form oracles.
//! - [`runner`]: TOML experiments, CSV and JSON reports.
//!
//! The guide in `book/` walks through each module; its code blocks run as doctests.

pub mod averaging;
pub mod ergodicity;
pub mod error;
pub mod models;
pub mod poisson;
pub mod rng;
pub mod runner;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/sde.md")]
    mod sde {}
    #[doc = include_str!("../../../book/src/ergodicity.md")]
    mod ergodicity {}
    #[doc = include_str!("../../../book/src/poisson.md")]
    mod poisson {}
    #[doc = include_str!("../../../book/src/averaging.md")]
    mod averaging {}
    #[doc = include_str!("../../../book/src/runner.md")]
    mod runner {}
}
