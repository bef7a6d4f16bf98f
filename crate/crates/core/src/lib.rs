//! Skeleton-motion inpainting with a graph-convolutional autoencoder and a
//! conditional latent diffusion model.

pub mod autoencoder;
pub mod config;
pub mod data_io;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod graph;
pub mod masking;
pub mod nn;
pub mod optim;
pub mod pose;
pub mod rng;
pub mod signgcn;
pub mod tensor;

pub use error::{Error, Result};
