//! Certification and synthesis of dissipative implicit neural network
//! controllers for uncertain LTI plants.
//!
//! The crate is `no_std` with `alloc`. It contains the linear-algebra
//! helpers, a small conic solver, the plant/controller models, IQC
//! multipliers, closed-loop assembly, certificate verification, the convex
//! synthesis and projection steps, a projected training loop and a
//! fixed-step simulator.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod certify;
pub mod error;
pub mod linalg;
pub mod interconnect;
pub mod iqc;
pub mod models;
pub mod sdp;
pub mod simulate;
pub mod iqc_transform;
pub mod synthesize;
pub mod trainer;

pub use error::{Error, Result};
