//! Adaptive-complexity model predictive control.
//!
//! An MPC loop that mixes a complex (anchor) model and a simple (template)
//! model within one prediction horizon. Per-index model fidelity is chosen
//! adaptively: an index may use the simple model only while a set of
//! admissibility conditions holds (index range, lifted feasibility, exact
//! anchoring, manifold entry), which preserves the feasibility and stability
//! guarantees of the all-complex formulation.
//!
//! The crate is organized around the spine of that loop:
//!
//! * [`model`] — the model-pair abstraction: complex/simple dynamics,
//!   reduction and lift maps, constraint evaluators, costs.
//! * [`simplicity`] — simplicity sets over the horizon and the admissibility
//!   checker that gates membership.
//! * [`ocp`] — transcription of the mixed-fidelity optimal control problem
//!   into a sparse NLP, plus lift/reduce of solutions and warm-start shifting.
//! * [`sqp`] — an SQP solver with an active-set QP subproblem built on a
//!   block-tridiagonal KKT factorization.
//! * [`testbed`] — an exactly-anchored linear model pair with brute-force
//!   oracles for the feasibility/stability properties.
//! * [`legged`] — a quadruped model pair: single-rigid-body-plus-feet complex
//!   model with joint slack variables, body-only simple model.
//! * [`harness`] — closed-loop simulation, environments, reference
//!   generation, trial aggregation, and CSV logging.
//! * [`verify`] — named property suites shared by the CLI and the test
//!   suites.

pub mod error;
pub mod harness;
pub mod legged;
pub mod model;
pub mod ocp;
pub mod simplicity;
pub mod space;
pub mod sqp;
pub mod testbed;
pub mod verify;

pub use error::{Error, Result};
pub use model::{
    check_feasible, lift, reduce, step, FeasibilityReport, LiftedTrajectory, ModelPair,
    ReferenceTrajectory,
};
pub use simplicity::{
    check_admissible, effective_set, grow_candidates, update_adaptive_set, AdmissibilityReport,
    SimplicitySet,
};
pub use space::{Dims, Space, StagePair};
