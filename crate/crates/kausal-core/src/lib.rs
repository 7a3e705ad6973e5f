//! Causal transport plans on finite filtered path spaces, causal
//! Monge–Kantorovich solvers, and Monte Carlo checks of entropy/transport
//! identities on discretized Wiener space.
//!
//! The crate is `no_std` with `alloc` when the default `std` feature is off;
//! `std` only adds rayon-parallel Monte Carlo.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod bridge;
pub mod causality;
pub mod error;
pub mod gaussian_lab;
pub mod par;
pub mod path_space;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod transport_solver;

pub use error::{Error, Result};
