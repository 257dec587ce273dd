//! Core building blocks for ensemble history matching of channelized
//! log-permeability fields: field types and formats, a channel generator,
//! a Darcy pressure simulator, regression proxies, covariance localization
//! and the ESMDA smoother.

pub mod channel;
pub mod error;
pub mod esmda;
pub mod field;
pub mod flow;
pub mod io;
pub mod linalg;
pub mod localization;
pub mod proxy;
pub mod rng;

pub use error::{Error, Result};
pub use field::{ensemble_mean_and_deviations, Ensemble, EnsembleTag, GridSpec, LogPermField};
pub use linalg::Matrix;
pub use rng::RngStream;
