//! Rectified-flow generative modelling at desk scale.
//!
//! The crate covers the whole pipeline: flow-matching training of an initial
//! velocity field, reflow on ODE-coupled pairs, timestep distillation,
//! fixed-step and adaptive ODE sampling with inversion, a LiDAR range/reflectance
//! image codec, and the diagnostics used to compare trained flows.

pub mod binio;
pub mod data;
pub mod error;
pub mod eval;
pub mod flow;
pub mod lidar;
pub mod nn;
pub mod ode;
pub mod random;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
