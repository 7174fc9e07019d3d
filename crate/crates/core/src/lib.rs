//! Finite-difference laboratory for the obstacle problem
//! `a^{ij} D_{ij} w = chi_{w > 0}`, `w >= 0` on square grids.

pub mod analysis;
pub mod blowup;
pub mod coefficients;
pub mod dirichlet;
pub mod complementarity;
pub mod config;
pub mod error;
pub mod experiments;
pub mod grid;
mod linalg;
pub mod operator;
pub mod penalized;
pub mod vmo;
pub mod report;

pub use error::{Error, Result};
