//! Monte Carlo simulation of superbunching pseudothermal light.
//!
//! An intensity-modulated laser beam is scattered by a rotating groundglass,
//! split onto two photon counters and correlated. The pipeline runs
//! [`signal`] → [`speckle`] → [`detection`] → [`correlator`], and
//! [`analytic`] supplies closed-form curves and fitting.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the aliases
//! below pin the common `f64` case.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod config;
pub mod correlator;
pub mod detection;
pub mod error;
pub mod photon_io;
pub mod plot;
pub mod run;
pub mod scalar;
pub mod seed;
pub mod signal;
pub mod speckle;
mod spectral;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Trace = signal::IntensityTrace<f64>;
pub type Field = speckle::ComplexFieldTrace<f64>;
pub type Curve = correlator::G2Curve<f64>;
pub type Model = analytic::TheoryModel<f64>;
pub type Modulation = signal::ModulationModel<f64>;
pub type Fit = analytic::FitResult<f64>;
