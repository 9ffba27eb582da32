//! Active-sensing beam tracking for RIS-assisted multiuser MISO downlink.
//!
//! The crate simulates mobile users and time-varying channels, runs the
//! uplink pilot protocol, implements model-based max-min beamforming
//! baselines and trains a recurrent graph controller that designs the RIS
//! sensing and reflection coefficients frame by frame.

pub mod baselines;
pub mod beamforming;
pub mod channel;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod episode;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod linalg;
pub mod net;
pub mod npy;
pub mod pilot;
pub mod rng;
pub mod tape;
#[cfg(test)]
pub(crate) mod testing;

pub use error::{Error, Result};
