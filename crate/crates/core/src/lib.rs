//! Conservative multipeakon dynamics for the dispersionless shallow-water
//! equation on the line.
//!
//! The crate covers the full pipeline:
//!
//! - [`field`]: multipeakon evaluation, energies, the nonlocal convolution
//!   source, and weighted decay diagnostics;
//! - [`dynamics`]: the Hamiltonian peakon ODE system with adaptive embedded
//!   Runge–Kutta stepping and binary-collision detection;
//! - [`continuation`]: energy-conserving continuation through
//!   peakon–antipeakon collisions in rescaled variables;
//! - [`approx`]: multipeakon approximation of decaying H¹ data;
//! - [`metric`]: a transport-based distance functional with certified upper
//!   bounds;
//! - [`scenario`]: declarative experiment configs, CSV/JSON emission, and the
//!   stability and bound-verification runners.

pub mod approx;
pub mod continuation;
pub mod dynamics;
pub mod error;
pub mod field;
pub mod metric;
pub mod ode;
pub mod quad;
pub mod scenario;

pub use error::{Error, Result};
pub use field::{
    kernel_weight_integral, DecayParameters, FieldDiagnostics, FieldEvaluator, MultipeakonState,
    Peakon,
};

pub use continuation::{
    continue_through_collision, continue_through_collision_traced, continue_symmetric,
    enter_rescaled, exit_rescaled, pair_from_symmetric, rhs_general, rhs_symmetric,
    ContinuationSample, RescaledCollisionState, RescaledDerivative, StableKernels,
    SymmetricRescaledState,
};
pub use dynamics::{
    reverse, rhs_hsys, simulate, step, CollisionEvent, IntegratorSettings, Outcome, SamplingConfig,
    Simulation, TrajectorySample,
};
pub use approx::{
    approximate_to_tolerance, choose_radius, h1_error, mollify, mollify_error, peakonize,
    PeakonizationReport, SampledFunction,
};
pub use metric::{
    d_diamond, difference_state, h1_distance, j_functional, l1_distance, minimize_j,
    minimize_j_warm, phi_weights, GraphPoint, PlanEvaluation, TransportPlan,
};
