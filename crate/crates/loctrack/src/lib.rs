//! File formats, Monte Carlo campaigns and figure data for `loctrack-core`.

pub mod error;
pub mod figures;
pub mod harness;
pub mod io;

pub use error::{Error, Result};
