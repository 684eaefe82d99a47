//! Numerics for the periodic heat equation: FTCS discretisation, classical
//! deterministic and random-walk solvers, spectral analysis of the space-time
//! system, simulated amplitude-estimation estimators and cost models, plus the
//! experiment harness that ties them together.
//!
//! Grid vectors are stored row-major over dimensions: index
//! `((j_0 * n + j_1) * n + ...) * n + j_{d-1}`, so the first dimension varies
//! slowest. Every solver, the FFT path and the block system share this layout.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod caps;
pub mod cost;
pub mod deterministic;
pub mod error;
pub mod harness;
pub mod montecarlo;
pub mod operators;
pub mod problem;
pub mod quadrature;
pub mod quantum;
pub mod spectral;

pub use caps::SizeCaps;
pub use cost::{cost_model, leading_slope, table_exponent, trajectory_norm_ratio, CostMethod, CostReport};
pub use harness::{
    fit_scaling, read_rows, run_experiment, write_rows, ExperimentConfig, FitMetric, InitialConfig, ProblemConfig,
    ProblemFile, ResultRow, ScalingFit,
};
pub use deterministic::{eigenpower, solve_cg, solve_fft, solve_timestepping, CgOptions, CgSolution};
pub use error::{Error, Result};
pub use montecarlo::{
    estimate_heat_mc, fast_walk_endpoint, sample_binomial, sample_initial, walk_steps, McEstimate,
    McMode, McOptions, RngStream, WalkerState,
};
pub use operators::{apply_walk, assemble_block_system, walk_eigenvalue, SolutionField, SparseBlockSystem, SpectralData};
pub use problem::{
    discretization_error_bound, exact_integral, exact_solution, plan_discretization,
    plan_discretization_midpoint, Alignment, DiscretizationPlan, InitialCondition, ProblemSpec,
    Region, SmoothnessConstants,
};
pub use quadrature::{integrate, quadrature_error_bound, weights, QuadratureRule, RuleKind};
pub use quantum::{
    estimate_heat_ae, quantum_integrate, simulate_amplitude_estimation, simulate_postselection,
    AeConfig, AeEstimate, QIntegrateOptions, QIntegrateResult, QuantumState,
};
pub use spectral::{
    check_positive_conditioning, condition_number, l2_bounds, return_probability,
    singular_values_block, singular_values_t, spacetime_l2_norm, ConditionReport, SingularSpectrum,
    SpacetimeNorm,
};
