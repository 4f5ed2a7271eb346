//! Max-min finite-blocklength rate optimization for a STAR-RIS assisted
//! multiuser MISO downlink with 1-layer rate splitting.

pub mod ao;
pub mod channel;
pub mod cli;
pub mod error;
pub mod experiment;
pub mod fbl;
pub mod ris;
pub mod solver;
pub mod rng;
pub mod surrogate;

pub use error::{Error, Result};
