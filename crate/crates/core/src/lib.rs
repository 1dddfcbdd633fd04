//! Tiled, detail-consistent video super-resolution sampling on top of a
//! latent diffusion denoiser.
//!
//! The latent video is cut into overlapping spatio-temporal tiles that are
//! denoised independently and blended back with Gaussian weights. Two
//! attention-propagation schemes, alternating step by step, keep the tiles
//! consistent: spatial propagation injects subsampled keys/values from every
//! tile of a frame, temporal propagation carries the most varied frames of a
//! neighbouring tile forward or backward in time. Guidance runs per tile in
//! noise space.
//!
//! Desk-scale fixtures in [`toy`] stand in for a pretrained video model.

pub mod attention;
pub mod degrade;
pub mod denoiser;
pub mod error;
pub mod filter;
pub mod grid;
pub mod guidance;
pub mod io;
pub mod metrics;
pub mod sampler;
pub mod tensor;
pub mod toy;

pub use error::{Error, Result};
pub use tensor::{Dims, VideoTensor};
