//! Unrolled PnP-ADMM network with dynamic convolution layers.
//!
//! Each block mirrors one ADMM sweep with learnable operators:
//! `A = softmax(γ·[dcl(X; W1) + dcl(V1 − G1; Q1)])`,
//! `V1 = θ1·C(V1_prev) + θ2·(A + G1)`, `G1 += θ3(A − V1)`,
//! `M = X·W2 + (G2 − V2)·Q2`, `V2 = relu(M + G2)`, `G2 += θ4(M − V2)`.

mod checkpoint;
mod forward;
mod params;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use forward::{
    build_graph, dcl_attention, dcl_node, denoised_constant, forward, layer_a, layer_dual, layer_m,
    layer_v1, layer_v2, loss_value, matrix_from_tensor, tensor_from_matrix, BlockNodes,
    BlockOutput, ForwardGraph, NetInput, NetState,
};
pub use params::{hidden_width, init_params, BlockParams, DclParams, NetParams};
pub use train::{history_csv, train, train_with, Adam, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::denoise::DenoiserSpec;
use crate::error::{Result, UnmixError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Number of unrolled blocks `K`.
    pub blocks: usize,
    /// Branch sizes of the `X`-side dynamic convolution.
    pub kernel_sizes: Vec<usize>,
    /// Branch sizes of the `(V1 − G1)`-side dynamic convolution.
    pub q1_kernel_sizes: Vec<usize>,
    pub lr: f64,
    /// Divide the `W2` step size by the pixel count. `X·W2` sums over all
    /// pixels, so an unscaled per-entry step moves `M` by roughly `lr·ΣX`.
    pub w2_fan_in_lr: bool,
    /// Divide each convolution kernel's step size by its fan-in `C_in·k²`.
    pub kernel_fan_in_lr: bool,
    /// Initial value of the learnable logit gain applied before the channel
    /// softmax. The closed-form `A` estimate lies in `[0, 1]`, where a unit
    /// gain gives a nearly uniform softmax.
    pub softmax_gain: f64,
    /// Loss weight per block; length must equal `blocks`.
    pub beta_k: Vec<f64>,
    pub epochs: usize,
    pub seed: u64,
    /// Penalties used by the closed-form initialization.
    pub alpha: f64,
    pub beta: f64,
    pub denoiser: DenoiserSpec,
    pub early_stop_window: usize,
    pub early_stop_tol: f64,
    /// Abort when the loss exceeds this multiple of the first epoch's loss.
    pub divergence_factor: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            blocks: 5,
            kernel_sizes: vec![1, 3, 5],
            q1_kernel_sizes: vec![1, 3, 5],
            lr: 5e-4,
            w2_fan_in_lr: true,
            kernel_fan_in_lr: true,
            softmax_gain: 6.0,
            beta_k: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            epochs: 1000,
            seed: 0,
            alpha: 0.1,
            beta: 0.1,
            denoiser: DenoiserSpec::default(),
            early_stop_window: 100,
            early_stop_tol: 1e-8,
            divergence_factor: 10.0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(UnmixError::InvalidParameter(
                "blocks must be at least 1".into(),
            ));
        }
        if self.beta_k.len() != self.blocks {
            return Err(UnmixError::InvalidParameter(format!(
                "beta_k has {} entries for {} blocks",
                self.beta_k.len(),
                self.blocks
            )));
        }
        if self.beta_k.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(UnmixError::InvalidParameter(
                "beta_k must be finite and nonnegative".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(UnmixError::InvalidParameter(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(self.softmax_gain.is_finite() && self.softmax_gain > 0.0) {
            return Err(UnmixError::InvalidParameter(
                "softmax_gain must be positive".into(),
            ));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(UnmixError::InvalidParameter(
                "alpha and beta must be nonnegative".into(),
            ));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(UnmixError::InvalidParameter(
                "divergence_factor must exceed 1".into(),
            ));
        }
        params::validate_sizes(&self.kernel_sizes)?;
        params::validate_sizes(&self.q1_kernel_sizes)?;
        self.denoiser.validate()
    }

    /// Geometric loss weights `10^(k−K+1)` for `k = 0..K`, ending at 1.
    pub fn default_beta_k(blocks: usize) -> Vec<f64> {
        (0..blocks)
            .map(|k| 10f64.powi(k as i32 + 1 - blocks as i32))
            .collect()
    }
}

/// How the attention canvases `T_l` are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttentionMode {
    /// Squeeze-excitation heads followed by the positional softmax.
    #[default]
    Learned,
    /// `T_l` fixed to ones on each branch's live region.
    Bypass,
}

/// Switches used by tests to compare a block with the plain ADMM sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetHooks {
    /// Apply the logit gain and channel softmax to `A`.
    pub softmax: bool,
    pub attention: AttentionMode,
}

impl Default for NetHooks {
    fn default() -> Self {
        Self {
            softmax: true,
            attention: AttentionMode::Learned,
        }
    }
}
