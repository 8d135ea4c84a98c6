//! Quasi-static time-series simulation of low-voltage feeders with rooftop
//! PV under legacy, autonomous droop and coordinated inverter control.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the aliases
//! at the crate root fix the scalar to `f64`.

pub mod cicopt;
pub mod controllers;
pub mod linalg;
pub mod linmodel;
pub mod netmodel;
pub mod pfsolve;
pub mod scalar;
pub mod simeng;

pub use scalar::{Complex, Real};

pub type Network = netmodel::Network<f64>;
pub type LineSegment = netmodel::LineSegment<f64>;
pub type PhaseImpedance = netmodel::PhaseImpedance<f64>;
pub type PowerInjection = pfsolve::PowerInjection<f64>;
pub type VoltageSolution = pfsolve::VoltageSolution<f64>;
pub type SensitivityMatrices = linmodel::SensitivityMatrices<f64>;
pub type LinearizationPoint = linmodel::LinearizationPoint<f64>;
pub type InverterState = controllers::InverterState<f64>;
