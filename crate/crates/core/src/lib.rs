//! Blind hyperspectral unmixing under the linear mixing model `X = M·A`.
//!
//! Building blocks: synthetic data and raw I/O ([`data`]), VCA + FCLS
//! initialization ([`init`]), abundance denoisers ([`denoise`]), the
//! plug-and-play ADMM solver ([`admm`]), and the evaluation metrics.

pub mod admm;
pub mod data;
pub mod denoise;
pub mod error;
pub mod init;
pub mod metrics;
pub mod net;
pub mod simplex;

pub use data::{AbundanceField, EndmemberMatrix, HyperCube};
pub use error::{Result, UnmixError};
