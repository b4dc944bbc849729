//! Rare-event failure-probability estimation for black-box perceptual-control
//! systems.
//!
//! A perception error model (PEM) stands in for a real obstacle detector inside
//! a deterministic braking simulator. Failure probabilities of an STL safety
//! specification are then estimated with a state-dependent cross-entropy
//! importance sampler, and checked against exhaustive enumeration on short
//! horizons.

pub mod ais;
pub mod error;
pub mod nn;
pub mod numerics;
pub mod oracle;
pub mod pem;
pub mod sim;
pub mod stl;

pub use error::{Error, Result};
