//! Physically-consistent inertial parameter identification for fully-actuated
//! robots with closed kinematic chains.
//!
//! The pipeline: a rigid-body regressor on the kinematic tree is projected
//! onto the actuated coordinates through the loop-closure Jacobian, reduced to
//! base parameters, and fitted by an LMI-constrained weighted least-squares
//! solver. A constrained forward simulator provides reproducible data.

pub mod cli;
pub mod constraint;
pub mod dynamics;
pub mod error;
pub mod fixtures;
pub mod model;
pub mod regroup;
pub mod signal;
pub mod simulate;
pub mod sysid;

pub use error::{Error, Result};
pub use model::{load_model, ConstraintSpec, Link, ParameterMask, RobotModel, StandardParams};
