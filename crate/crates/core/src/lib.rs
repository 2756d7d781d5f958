//! Attributed graph clustering with multi-scale graph coarsening and
//! one-to-many contrastive learning.

pub mod cli;
pub mod coarsen;
pub mod datasets;
pub mod error;
pub mod gradcheck;
pub mod graphdata;
pub mod losses;
pub mod metrics;
pub mod netfwd;
pub mod sparse;
pub mod spectral;
pub mod synth;
pub mod trainer;

pub use error::{MpcclError, Result};
