//! Bayesian CRB analysis for multi-RIS localization and tracking.
//!
//! The crate computes the equivalent Fisher information of a jointly
//! estimated set of user positions over a time horizon, splits it into
//! direct and propagated parts, and evaluates how efficiently spatial and
//! temporal correlation is exploited. Everything here is `no_std` and only
//! needs an allocator; file formats and the experiment harness live in the
//! `loctrack` crate.

#![no_std]

extern crate alloc;

pub mod asymptotics;
pub mod block;
pub mod channel;
pub mod coupling;
pub mod error;
pub mod fim;
pub mod linalg;
pub mod recursive;
pub mod scenario;

pub use block::BlockMatrix;
pub use error::{Error, Result};
pub use linalg::{Mat2, Vec2};
