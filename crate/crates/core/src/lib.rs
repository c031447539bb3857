//! Transient-stability analysis of staged differential-algebraic models:
//! critical clearing time by bisection, classification of the instability
//! mechanism, and closed-form CCT sensitivities checked against finite
//! differences.
//!
//! The pipeline is split into
//! - [`model`]: the DAE abstraction and the singularity fields `Δ`, `κ`;
//! - [`integrator`]: fixed-step RK4 with Newton on the algebraic states;
//! - [`trajsens`]: variational equations along stored trajectories;
//! - [`critical`]: equilibria, pseudo equilibria and semi-singular points;
//! - [`cct`]: bisection, mechanism ladder and the sensitivity formulas;
//! - [`systems`]: the built-in test systems;
//! - [`transform`]: result-preserving reformulations of a stage.

pub mod cct;
pub mod critical;
pub mod error;
pub mod integrator;
pub mod linalg;
pub mod model;
pub mod systems;
pub mod trajsens;
pub mod transform;

pub use error::{Error, Result};
pub use model::{ParamSet, Point, ScenarioModel, StageModel};
