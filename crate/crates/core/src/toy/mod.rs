//! Desk-scale stand-ins for the pretrained video diffusion stack: an exact
//! Gaussian posterior-mean denoiser, a seeded attention network with hookable
//! spatial self-attention layers, and a linear latent codec.

mod analytic;
mod codec;
mod network;

pub use analytic::AnalyticGaussianDenoiser;
pub use codec::ToyCodec;
pub use network::{DenoiserSpec, ToyAttentionDenoiser};
