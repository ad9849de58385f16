//! One-dimensional quasi-static fracture solver.
//!
//! A bar under imposed elongation is modelled with either a phase-field or a
//! lip-field damage regularization. Each load increment minimizes a discrete
//! incremental potential over the nodal damage values and, optionally, over
//! the mesh element sizes ("X-Mesh" mode). Zero-size elements then act as
//! displacement jumps, so the bar can actually break.
//!
//! The crate is organized as:
//!
//! - [`model`] — material parameters, degradation/dissipation functions,
//!   derived scaling constants and validity bounds,
//! - [`analytic`] — closed-form and semi-analytical reference solutions,
//! - [`mesh`] — the symmetric half-model mesh and its constraint sets,
//! - [`potential`] — the discrete incremental potential and its gradients,
//! - [`optimizer`] — an augmented-Lagrangian projected quasi-Newton solver,
//! - [`quasistatic`] — the loading loop and all run diagnostics,
//! - [`five_elem`] — the reduced five-element non-convexity study,
//! - [`config`] / [`output`] — run configuration and CSV/SVG artifacts.
//!
//! ```
//! use xmesh1d::model::{MaterialParams, ModelKind};
//!
//! let params = MaterialParams::table1();
//! let derived = params.derive().unwrap();
//! assert!((derived.gamma - 0.1).abs() < 1e-14);
//! assert!(derived.validity(ModelKind::PhaseField, &params).simulation_ok());
//! ```

pub mod analytic;
pub mod config;
pub mod five_elem;
pub mod mesh;
pub mod model;
pub mod optimizer;
pub mod output;
pub mod potential;
pub mod quad;
pub mod quasistatic;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("domain violation: {0}")]
    Domain(String),
    #[error("quadrature failed: requested tolerance {requested:e}, achieved {achieved:e}")]
    Quadrature { requested: f64, achieved: f64 },
    #[error("mesh error: {0}")]
    Mesh(String),
    #[error("infeasible configuration: {0}")]
    Infeasible(String),
    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("schedule mismatch: {0}")]
    ScheduleMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
