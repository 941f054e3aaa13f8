//! Reverse-mode differentiation over the fixed set of tensor primitives an
//! unrolled unmixing network needs: convolution with symmetric padding,
//! matrix products, channel and positional softmax, squeeze-excitation
//! pieces and a squared-error readout.
//!
//! ```
//! use unmix_autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::new(vec![2], vec![1.0, -2.0]).unwrap());
//! let zero = g.constant(Tensor::zeros(&[2]));
//! let loss = g.squared_error(x, zero, 0.5).unwrap();
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap().data(), &[1.0, -2.0]);
//! ```

mod conv;
mod error;
mod gemm;
mod gradcheck;
mod graph;
mod tensor;

pub use conv::fold_symmetric;
pub use error::{AutodiffError, Result};
pub use gradcheck::{grad_check, GradCheckEntry, GradCheckOptions, GradCheckReport};
pub use graph::{is_live, Graph, NodeId};
pub use tensor::Tensor;
