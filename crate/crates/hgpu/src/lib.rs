//! Hierarchical graph pattern understanding for zero-shot video object
//! segmentation, built at desk scale: a from-scratch f64 autodiff engine, a
//! three-node graph encoder over (frame, flow, frame) triplets, a
//! motion-appearance decoder, synthetic training data with analytic optical
//! flow, and DAVIS-style evaluation.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod synthdata;
pub mod tensor;
pub mod train;
pub mod verify;

pub use tensor::{Tape, Tensor, TensorError};
