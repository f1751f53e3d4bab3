//! Invariant measures and empirical checks of recurrence, mixing and
//! irreducibility.

mod doeblin;
mod measure;
mod mixing;
mod probes;

pub use doeblin::{doeblin_overlap_estimate, DoeblinEstimate, DoeblinOptions, PairOverlap};
pub use measure::{coordinate_moments, estimate_invariant_measure, moment_estimate, EmpiricalMeasure, InvariantOptions, Provenance};
pub use mixing::{pilot_burn_in, tv_decay_curve, BurnInPilot, FittedRate, MixingOptions, MixingReport};
pub use probes::{exit_time_probe, recurrence_scan, sphere_directions, sup_growth_diagnostic, ExitProbe, ExitRow, ProbeBudget, RecurrenceRow, RecurrenceScan, SupGrowthRow};
