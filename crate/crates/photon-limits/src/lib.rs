//! Simulation and theory engine for the resolution-noise trade-off in
//! single-photon LiDAR arrays.
//!
//! A pulsed laser illuminates a scene whose time-of-arrival profile is
//! `tau(x)` (or `tau(x, y)` in 2D). An array of `N` pixels observes the
//! returned flux; each pixel records photon time stamps drawn from an
//! inhomogeneous Poisson process and estimates its own time of arrival by
//! maximum likelihood. Packing more pixels into the unit space improves
//! spatial resolution but starves each pixel of photons, so the
//! reconstruction MSE traces a bias-variance U-curve in `N`.
//!
//! The crate provides:
//!
//! * [`pulse`] — pulse shapes and return-flux models `lambda(t)`, including
//!   pile-up and dark-count extensions.
//! * [`scene`] — ground-truth profiles, gradients, `N`-pixel binning, and
//!   effective per-pixel return pulses (exact and Gaussian closed form).
//! * [`sampler`] — photon time-stamp generation (two-step Gaussian,
//!   inverse-CDF for arbitrary shapes, pile-up mixture) with deterministic
//!   seeded streams.
//! * [`estimator`] — per-pixel ML time-of-arrival solvers (gradient ascent,
//!   derivative-free search, zero-crossing), score diagnostics, bootstrap.
//! * [`theory`] — closed-form and numerical MSE predictors versus `N`.
//! * [`experiment`] — Monte Carlo sweep harness, empirical MSE
//!   decomposition, unit conversion, CSV/SVG output.
//! * [`spaddata`] — SPAD-style timestamp-cube ingestion, outlier rejection,
//!   pseudo ground truth, and binned-bootstrap MSE.
//!
//! With the default `parallel` feature, Monte Carlo trials run on a rayon
//! pool; per-trial RNG streams are derived from `(seed, pixel, trial)` so
//! results are byte-identical across schedules and worker counts. Disabling
//! the feature compiles a dependency-free sequential fallback with the same
//! outputs.

// negated comparisons like `!(x > 0.0)` deliberately reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod estimator;
pub mod experiment;
pub mod grid;
pub(crate) mod parallel;
pub mod pulse;
pub mod sampler;
pub mod scene;
pub mod spaddata;
pub mod theory;

use thiserror::Error;

/// Errors produced by this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument is outside its valid domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent or invalid configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// The requested operation does not support this model variant.
    #[error("unsupported model: {0}")]
    Unsupported(String),

    /// Malformed input file.
    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub use estimator::{BootstrapResult, LikelihoodContext, MlEstimate, Solver, SolverOptions};
pub use grid::TimeGrid;
pub use pulse::{Background, FluxModel, ObservationWindow, PixelFlux, PulseShape};
pub use sampler::{SeededRng, TimeStamps};
pub use scene::{BinnedScene, GradientField, ToaProfile};
pub use theory::{MsePrediction, SweepCurve};
