//! Norms, perturbation bookkeeping, rate fitting and the decay experiments.

pub mod experiments;
pub mod fit;
pub mod norms;
pub mod perturbation;
pub mod samples;

pub use fit::{fit_rate, RateFit};
pub use norms::{exp_norm, h_inner, h_norm, mass_moment, moment_norm, weighted_norm};
pub use perturbation::{make_polynomial_tail, project_zero_mass, Compensation, Perturbation, SignPattern, TailWeight};
pub use experiments::{duhamel_residual, linear_decay_experiment, nonlinear_decay_experiment, DecayReport, DuhamelReport};
