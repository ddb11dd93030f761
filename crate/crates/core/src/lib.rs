pub mod certify;
pub mod error;
pub mod io;
pub mod krank;
pub mod multilinear;
pub mod network;
pub mod neurovariety;
pub mod polyspace;
pub mod recover;
pub mod rng;

pub use error::{Error, RecoveryFailure, Result};
