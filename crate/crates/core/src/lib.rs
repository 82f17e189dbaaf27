//! Core algorithms for fleet-trained point-goal navigation: procedural layouts,
//! the differential-drive simulator, the residual policy, off-policy learning,
//! the fleet coordination state machine, and evaluation metrics.
//!
//! The crate is `no_std` (with `alloc`); file IO, networking, and the CLI live in
//! the `fleetnav` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod env;
pub mod episode;
pub mod eval;
pub mod expert;
pub mod geometry;
pub mod learner;
pub mod policy;
pub mod protocol;
pub mod rng;
pub mod rollout;
pub mod sim;
pub mod train;
