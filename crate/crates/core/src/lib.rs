//! General rate splitting for general multicast.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] builds the message-unit partition, the layer structure and the
//!   decode subsets from arbitrary per-user requests.
//! * [`channel`] holds i.i.d. and one-ring channel statistics and seeded
//!   realization sampling.
//! * [`convex`] is a small dense log-barrier interior-point solver for the
//!   smooth convex programs produced by the optimizers.
//! * [`slow`] maximizes the weighted sum rate per channel realization
//!   (concave-convex procedure) and carries the OFDMA baseline.
//! * [`fast`] maximizes the weighted sum ergodic rate with stochastic
//!   successive convex approximation and the two statistics-based CCCP
//!   variants.
//!
//! The crate is `no_std` + `alloc` when built without the default `std`
//! feature; all transcendental functions go through `libm` so results are
//! identical in both configurations.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` is deliberate throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod beamformer;
pub mod channel;
pub mod convex;
pub mod error;
pub mod fast;
pub mod linalg;
pub mod model;
pub mod slow;

mod math;

pub use error::{Error, Result};
pub use num_complex::Complex64;
