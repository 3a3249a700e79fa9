//! Estimation of qubit dephasing noise from Ramsey measurements.
//!
//! Noise models and their attenuation factors live in [`noise`], synthetic
//! data in [`sim`], maximum-likelihood fitting and Fisher-optimal designs in
//! [`frequentist`], adaptive particle-filter estimation in [`bayes`], and the
//! Monte-Carlo comparison between the two in [`harness`].

pub mod bayes;
pub mod error;
pub mod filter;
pub mod frequentist;
pub mod harness;
pub mod noise;
pub mod nonmarkov;
pub mod quadrature;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
pub use noise::{Family, NoiseModel, ParamVector};
pub use sim::{DataSet, Record, Schedule};
