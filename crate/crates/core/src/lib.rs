//! Randomly applied stochastic perturbations of piecewise contracting maps:
//! random orbits, stationary densities and extreme value statistics.

#![allow(clippy::too_many_arguments)]

pub mod config;
pub mod density;
pub mod diagnostics;
pub mod error;
pub mod evt;
pub mod geometry;
pub mod maps;
pub mod process;
pub mod validation;

pub use error::{Error, Result};
pub use geometry::{AxisBox, Interval, Point, Region, MAX_DIM};
pub use maps::{LambdaChain, MapKind, PiecewiseMapSpec};
