//! Isogeometric Galerkin pricing of European options under jump-diffusion
//! and stochastic-volatility jump-diffusion models.
//!
//! The crate is organised bottom-up: spline bases and quadrature, L² fitting,
//! model parameters, the one- and two-dimensional finite element solvers,
//! and independent reference pricers used to measure their error.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fem1d;
pub mod fem2d;
pub mod fitting;
pub mod metrics;
pub mod models;
pub mod quadrature;
pub mod reference;
pub mod splines;

pub use error::{Error, Result};
