//! Single-image human texture estimation with a UV-space diffusion prior.
//!
//! The pipeline renders or receives an image with per-pixel surface
//! correspondences, projects the visible pixels into a partial UV texture,
//! and completes it by inpainting with a class-conditional denoising
//! diffusion model trained from scratch on a procedural texture family.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod image;
pub mod mesh_uv;
pub mod metrics;
pub mod projection;
pub mod renderer;
pub mod tensor_io;
pub mod texture;

pub use error::{Error, Result};
