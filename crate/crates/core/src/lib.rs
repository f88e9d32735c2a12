//! Simulator for electromagnetically induced transparency and stopped light
//! in an inhomogeneously broadened three-level (lambda) ensemble.
//!
//! Internal frequencies and rates are angular (rad/s); configuration, event
//! files and reports use Hz and seconds.

pub mod analysis;
pub mod decoherence;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod io;
pub mod propagation;
pub mod scenarios;
pub mod sequence;

pub use error::{Error, Result};
