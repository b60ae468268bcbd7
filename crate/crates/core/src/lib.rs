//! Sticky reflected diffusions on bounded domains, Girsanov reweighting and
//! mean-field control of boundary-sticky crowds.

// `!(x > 0.0)` deliberately rejects NaN alongside non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod control;
pub mod ensemble;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod girsanov;
pub mod io;
pub mod stats;
pub mod sticky_sde;

pub use control::{Congestion, ControlLaw, CostSpec, Penalty};
pub use error::{Error, Result};
pub use geometry::{Domain, Point};
pub use girsanov::{EstimationMode, FixedPointConfig, MeanFieldCurve, PicardResult};
pub use sticky_sde::{InitialLaw, Particle, Phase, SchemeParams};
