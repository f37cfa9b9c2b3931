//! Frequency-guided HDR fusion from exposure brackets.
//!
//! The crate bundles everything needed to train and evaluate the fusion
//! network on synthetic brackets without external ML frameworks:
//!
//! - [`tensor`]: dense `(batch, channel, height, width)` tensors with a
//!   reverse-mode autodiff tape and an Adam optimizer;
//! - [`wavelet`]: orthonormal single-level 2-D DWT/IDWT (haar, db2, db3,
//!   sym2) with exact reconstruction;
//! - [`hdr`]: radiometric preprocessing, mu-law tone mapping and the
//!   training losses;
//! - [`model`]: the wavelet-domain fusion network itself;
//! - [`data`]: synthetic bracket generation, dataset I/O, augmentation;
//! - [`metrics`]: PSNR/SSIM in linear and tone-mapped domains plus report
//!   assembly;
//! - [`train`]: the optimization loop with checkpoints and loss logs.

pub mod data;
pub mod error;
pub mod hdr;
pub mod model;
pub mod tensor;
pub mod wavelet;

pub use error::{Error, Result};
