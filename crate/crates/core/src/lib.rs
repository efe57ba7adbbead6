//! Closed-loop Bayesian calibration of the two-ion Mølmer-Sørensen gate.
//!
//! - [`physics`]: gate simulation, shaped pulses, sequences and the closed
//!   form used as an oracle
//! - [`grid`]: precomputed likelihood tables and their spline interpolation
//! - [`filter`]: particle filter with Liu-West resampling
//! - [`strategy`]: measurement selection and stopping
//! - [`calibrator`]: the feedback loop and confirmation
//! - [`lab`]: simulated experiment with hidden offsets
//! - [`evaluation`]: infidelity proxies, studies and the scan baseline
//!
//! The guide in `book/` walks through each piece with runnable examples.

pub mod calibrator;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod filter;
pub mod grid;
pub mod lab;
pub mod physics;
pub mod strategy;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/grids.md")]
    mod grids {}
    #[doc = include_str!("../../../book/src/filter.md")]
    mod filter {}
    #[doc = include_str!("../../../book/src/strategies.md")]
    mod strategies {}
    #[doc = include_str!("../../../book/src/calibration.md")]
    mod calibration {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
