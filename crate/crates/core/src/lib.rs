//! Mean-square stabilizability analysis of PD-controlled second-order
//! stochastic systems with bounded uncertain dynamics.
//!
//! The crate is `no_std` (with `alloc`). File formats, the command line and
//! parallel drivers live in the companion `pdstab-cli` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod certificates;
pub mod error;
pub mod linalg;
mod math;
pub mod model;
pub mod moments;
pub mod montecarlo;
pub mod poly;
pub mod regions;

pub use error::Error;
pub use linalg::Matrix;
pub use model::{Bounds, Gains, LinearPlant, NonlinearPlant};
