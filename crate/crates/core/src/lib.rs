//! Shadow segmentation and removal pipeline built around three stages:
//! a wavelet-conditioned mask predictor, a masked-autoencoder contextual
//! prior, and a removal network whose bottleneck mixes mask-guided gating
//! with Fourier-domain convolution blocks. Ships with a synthetic paired
//! dataset generator, a seeded training harness, and region-wise
//! PSNR/SSIM/RMSE evaluation.

pub mod datakit;
pub mod error;
pub mod evalkit;
pub mod ffc;
pub mod harness;
pub mod imagecore;
pub mod nn;
pub mod prior;
pub mod removal;
pub mod segmenter;
pub mod wavelet;

pub use error::{Error, Result};
pub use imagecore::{ImageTensor, ShadowMask};
