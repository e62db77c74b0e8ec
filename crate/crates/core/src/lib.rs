//! Randomized-measurement estimation of partial-transpose moments.

pub mod amendment;
pub mod device;
pub mod ensembles;
pub mod error;
pub mod estimators;
pub mod io;
pub mod noisestudy;
pub mod qcore;

pub use error::{Error, Result};
