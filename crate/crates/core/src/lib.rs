//! Backprojected-filtering (BPF) tomographic reconstruction with automatic
//! bandwidth selection by generalized cross-validation (GCV).
//!
//! The crate is organized bottom-up:
//!
//! * [`circulant`]: real spectral algebra of symmetric circulant and BCCB matrices.
//! * [`projector`]: pixel-driven Radon transform, its exact adjoint, and the
//!   circulant model of `K'K`.
//! * [`kernels`]: radial and elliptical Gaussian smoothing kernels.
//! * [`gcv`]: the invariant PRESS/GCV objective and its minimizers.
//! * [`recon`]: end-to-end BPF, BPFe and the negativity-reducing "+" variants.
//! * [`harness`]: phantoms, Poisson simulation, RMSE, oracle bandwidths and
//!   the Monte-Carlo experiment runner.
//! * [`io`]: image/sinogram file formats.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod circulant;
pub mod error;
pub mod fft;
pub mod gcv;
pub mod harness;
pub mod io;
pub mod kernels;
pub mod projector;
pub mod recon;

pub use error::{Error, Result};
pub use rustfft::num_complex::Complex64;
