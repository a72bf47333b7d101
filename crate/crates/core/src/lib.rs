//! Fourier-layer autoencoders whose latent space is a coarse grid field,
//! with differentiable finite-difference PDE solvers running in that latent
//! space.

pub mod data;
pub mod error;
pub mod fdm;
pub mod io;
pub mod layers;
pub mod models;
pub mod pde;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Gradients, OpKind, Tape, Tensor};
