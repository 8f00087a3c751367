//! Learning components for LiDAR visual grounding: a small reverse-mode
//! autodiff engine, the detect-then-match baseline, and the one-stage BEV
//! grounding model.

pub mod baseline;
pub mod bev;
pub mod graph;
pub mod hungarian;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod params;
mod real;
pub mod tensor;

pub use real::Real;

/// Single-precision grounding model, the one checkpoints store.
pub type Model = bev::BevGrounding<f32>;
pub type Model64 = bev::BevGrounding<f64>;
