//! Desk-scale laboratory for exact one-dimensional density functional theory.
//!
//! The crate discretizes `N` spinless fermions on the unit interval with
//! Neumann, periodic or anti-periodic boundary conditions, under potentials
//! that may carry point masses and under symmetric pair interactions:
//!
//! - [`grid`]: P1 mesh, nodal functions, quadrature and the pairings `v(ρ)`, `w(ρ⁽²⁾)`.
//! - [`single_particle`]: weak-form assembly of `−Δ + v` and its generalized eigenproblem.
//! - [`many_body`]: Slater-determinant Galerkin model of `H_N(v, w)`, ground
//!   states, reduced densities, the `K` operator and the `G±` rearrangement.
//! - [`representability`]: density classes and the density-to-determinant construction.
//! - [`inversion`]: density-to-potential inversion by maximizing the concave dual.
//! - [`kohn_sham`]: exact functionals, their potentials and the exact-xc Kohn-Sham loop.

pub mod grid;
pub mod inversion;
pub mod kohn_sham;
pub mod many_body;
pub mod representability;
pub mod single_particle;

pub use nalgebra;

pub use grid::{
    integrate, h1_norm_sq, l2_norm, pair_external, pair_interaction, BoundaryCondition, Delta,
    Density, ExternalPotential, Grid, GridFunction, Interaction, TwoPointFunction,
};

/// Minimum density, relative to `N`, that counts as strictly positive.
pub const POSITIVITY_THRESHOLD: f64 = 1e-8;

/// Gap below which a ground state is treated as degenerate.
pub const GAP_TOL: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("grid mismatch: {left} cells vs {right} cells")]
    GridMismatch { left: usize, right: usize },
    #[error("negative density value {value} at node {node}")]
    NegativeDensity { node: usize, value: f64 },
    #[error("kernel is not symmetric (defect {defect:e})")]
    AsymmetricKernel { defect: f64 },
    #[error("eigensolver failed: {0}")]
    Eigensolver(String),
    #[error("density vanishes (min {min:e} at node {node}); K undefined")]
    VanishingDensity { node: usize, min: f64 },
    #[error("pair density undefined for a single particle")]
    PairDensityUndefined,
    #[error("density is not representable: {0}")]
    NotRepresentable(String),
    #[error("inversion failed: {0}")]
    InversionFailed(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
