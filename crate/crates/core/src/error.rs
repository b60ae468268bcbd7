use thiserror::Error;

use crate::geometry::Point;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("nearest boundary point of ({}, {}) is not unique", .point[0], .point[1])]
    DegenerateProjection { point: Point },

    #[error("point ({}, {}) is {distance:e} away from the boundary", .point[0], .point[1])]
    NotOnBoundary { point: Point, distance: f64 },

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid scheme parameters: {0}")]
    InvalidParams(String),

    #[error("invalid control law: {0}")]
    InvalidControl(String),

    #[error("control law needs a mean-field value but none was supplied")]
    MissingMeanField,

    #[error("operation is not defined for control kind {0}")]
    UnsupportedControl(&'static str),

    #[error("ensemble is empty")]
    EmptyEnsemble,

    #[error("fixed-point iteration did not converge after {iterations} iterations (last distance {:e})", .distances.last().copied().unwrap_or(f64::NAN))]
    NoConvergence {
        iterations: usize,
        distances: Vec<f64>,
    },

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    /// Numerical failures map to a distinct process exit code in the CLI.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateProjection { .. }
                | Error::NotOnBoundary { .. }
                | Error::NoConvergence { .. }
                | Error::EmptyEnsemble
        )
    }
}
