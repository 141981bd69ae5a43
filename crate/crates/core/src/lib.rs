//! Two-person 2-D interaction motion generation: data model, cleaning,
//! text conditioning, the dual-tower denoiser, diffusion, losses, evaluation
//! metrics and the two-stage trainer.
#![no_std]

extern crate alloc;

pub mod autodiff;
pub mod batch;
pub mod cleaning;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod evaluator;
pub mod losses;
pub mod metrics;
pub mod motion;
pub mod nn;
pub mod optim;
pub mod seed;
pub mod synthetic;
pub mod tensor;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
