//! Spectral simulator and analysis toolkit for the 1D stochastic damped
//! wave equation with Dirichlet boundary conditions: linear stability,
//! uniform attraction certificates, exact controllability, quasipotential
//! minimization, and rare-event exit-time/exit-place Monte Carlo.

pub mod control;
pub mod domain;
pub mod drift;
pub mod dynamics;
pub mod error;
pub mod exit;
pub mod grid;
pub mod io;
pub mod quasipotential;
pub mod semigroup;
pub mod stability;
pub mod state;

pub use control::{
    assemble_control_operator, discretize_control_operator, exact_nonlinear_control,
    min_norm_linear_control, rate_functional, t0_from_decay_rule, ControlOperator, ControlPath,
    DiscreteControlOperator, NonlinearControlReport,
};
pub use domain::{DomainSpec, OrbitUnionSpec, ReverseOutcome};
pub use drift::{NoiseCoefficient, PolynomialDrift};
pub use dynamics::{
    energy_functional, path_rng, sample_noise_increment, simulate_path, step_deterministic,
    step_skeleton, step_stochastic, stochastic_convolution_sup_moment, ExactAdditiveStepper,
    PathOutcome, Scheme, SimConfig, Stepper, Termination, Trajectory,
};
pub use error::{Error, Result};
pub use exit::{
    classify_boundary_point, construct_escape_control, donut_chain_stats, exit_place_histogram,
    exit_rate_functions, run_exit_mc, BoundaryClassification, BoundaryVerdict, DonutStats,
    ExitEnsemble, ExitEstimator, ExitRateTable, ExitRecord,
};
pub use quasipotential::{
    boundary_candidates, inner_regularity_probe, minimize_quasipotential, reversed_path_oracle,
    ConstraintMode, InnerRegularityCell, OptimizerOptions, QuasipotentialResult, RestartOutcome,
    TargetSpec,
};
pub use grid::{odd_periodic_extend, subdifferential_sup_norm, SpectralGrid, SubdifferentialSet};
pub use semigroup::{
    apply_linearized_semigroup, apply_semigroup, assemble_linearized_operator, dalembert_evolve,
    measure_decay_rate, mode_propagator, propagator_for, DecayEstimate, LinearizedOperator,
    ModePropagator,
};
pub use stability::{
    attraction_radius, orbit_domain_membership, solve_equilibrium, verify_uniform_attraction,
    AttractionCertificate, AttractionReport, EquilibriumResult,
};
pub use state::StateE;
