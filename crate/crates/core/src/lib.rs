//! Becker-Döring cluster kinetics on a finite truncation `1..=N`.
//!
//! Numerical types are generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases below fix the precision for the common cases. Analysis routines
//! that fit, integrate weights or compare against thresholds work in `f64`.

pub mod analysis;
pub mod dynamics;
pub mod error;
pub mod interp;
pub mod linops;
pub mod model;
pub mod ode;
pub mod scalar;
pub mod verify;

pub use error::{Error, Result};

pub type Model = model::CoefficientModel<f64>;
pub type Model32 = model::CoefficientModel<f32>;
pub type Equilibrium = model::Equilibrium<f64>;
pub type Equilibrium32 = model::Equilibrium<f32>;
pub type Operators = linops::OperatorBundle<f64>;
pub type Operators32 = linops::OperatorBundle<f32>;
pub type Trajectory = dynamics::Trajectory<f64>;
pub type Trajectory32 = dynamics::Trajectory<f32>;
pub type Perturbation = analysis::perturbation::Perturbation<f64>;
