//! Ensemble Kalman calibration of simulators through Gaussian-process
//! emulators, with an MCMC reference sampler and desk-scale cardiac
//! electrophysiology forward models.

pub mod calibration;
pub mod design;
pub mod enkf;
pub mod error;
pub mod experiments;
pub mod forward;
pub mod gp;
pub mod linalg;
pub mod mcmc;
pub mod operator;
pub mod rng;

pub use calibration::{Ensemble, GaussianSummary, ObservationSet, ParameterSpace, ParameterVector};
pub use error::{Error, Result};
pub use gp::{EmulatorBank, EmulatorModel};
pub use operator::ObservationOperator;
