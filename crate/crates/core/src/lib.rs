//! Deep-image-prior denoising with early stopping driven by the JPEG size of
//! the current reconstruction.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the command
//! line and dataset handling live in the companion `cifs` crate.
//!
//! * [`autograd`], [`adam`]: a small reverse-mode engine and its optimizer
//! * [`dip`]: the encoder–decoder network and its latent input
//! * [`jpeg`]: the baseline encoder whose output length is the size measure
//! * [`es`]: criterion, stopping-epoch detection and the optimization loop
//! * [`calibration`]: λ grid search and the σ→λ table

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod adam;
pub mod autograd;
pub mod calibration;
pub mod dip;
pub mod error;
pub mod es;
pub mod image;
pub mod jpeg;
pub mod metrics;
pub mod noise;
pub mod seed;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use image::Image;
pub use tensor::{Real, Tensor};
