//! Closed-loop station-keeping simulation for a Near-Rectilinear Halo Orbit.

pub mod baseline;
pub mod dynamics;
pub mod error;
pub mod frames;
pub mod navigation;
pub mod propagation;
pub mod simulation;
pub mod skmpc;

pub use error::{Error, Result};
