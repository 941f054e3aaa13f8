use nalgebra::DMatrix;
use unmix_autodiff::{is_live, Graph, NodeId, Tensor};

use super::{AttentionMode, NetConfig, NetHooks, NetParams};
use crate::data::{AbundanceField, HyperCube};
use crate::denoise::{denoise, DenoiserSpec};
use crate::error::{Result, UnmixError};
use crate::init::InitResult;

/// Observed cube as a `[B, h, w]` tensor.
#[derive(Debug, Clone)]
pub struct NetInput {
    pub x: Tensor,
    pub height: usize,
    pub width: usize,
}

impl NetInput {
    pub fn from_cube(cube: &HyperCube) -> Self {
        let x = Tensor::new(
            vec![cube.bands(), cube.height(), cube.width()],
            cube.data().to_vec(),
        )
        .expect("cube dimensions match its data");
        Self {
            x,
            height: cube.height(),
            width: cube.width(),
        }
    }

    pub fn bands(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Iterates entering the first block.
#[derive(Debug, Clone, PartialEq)]
pub struct NetState {
    /// `R×N`.
    pub v1: DMatrix<f64>,
    pub g1: DMatrix<f64>,
    /// `B×R`.
    pub v2: DMatrix<f64>,
    pub g2: DMatrix<f64>,
}

impl NetState {
    /// `V1 = A⁽⁰⁾`, `V2 = M⁽⁰⁾`, zero duals.
    pub fn from_init(init: &InitResult) -> Self {
        let a = init.abundances.matrix();
        let m = init.endmembers.matrix();
        Self {
            v1: a.clone(),
            g1: DMatrix::zeros(a.nrows(), a.ncols()),
            v2: m.clone(),
            g2: DMatrix::zeros(m.nrows(), m.ncols()),
        }
    }
}

pub fn tensor_from_matrix(m: &DMatrix<f64>, shape: &[usize]) -> Tensor {
    Tensor::new(shape.to_vec(), m.transpose().as_slice().to_vec())
        .expect("shape matches matrix size")
}

/// Interprets a tensor as a row-major `rows×(len/rows)` matrix.
pub fn matrix_from_tensor(t: &Tensor, rows: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, t.len() / rows, t.data())
}

/// Node handles of one block.
#[derive(Debug, Clone, Copy)]
pub struct BlockNodes {
    /// `[R, h, w]`.
    pub a: NodeId,
    pub v1: NodeId,
    pub g1: NodeId,
    /// `[B, R]`.
    pub m: NodeId,
    pub v2: NodeId,
    pub g2: NodeId,
    /// `[B, N]`.
    pub x_hat: NodeId,
}

#[derive(Debug, Clone)]
pub struct ForwardGraph {
    pub blocks: Vec<BlockNodes>,
    pub loss: NodeId,
}

fn take(ids: &mut std::slice::Iter<'_, NodeId>, n: usize) -> Result<Vec<NodeId>> {
    let out: Vec<NodeId> = ids.by_ref().take(n).copied().collect();
    if out.len() != n {
        return Err(UnmixError::Shape(
            "too few parameter nodes for the network layout".into(),
        ));
    }
    Ok(out)
}

struct DclIds {
    kernels: Vec<NodeId>,
    fc1_w: NodeId,
    fc1_b: NodeId,
    fc2_w: NodeId,
    fc2_b: NodeId,
    head_w: Vec<NodeId>,
    head_b: Vec<NodeId>,
}

impl DclIds {
    fn take(ids: &mut std::slice::Iter<'_, NodeId>, branches: usize) -> Result<Self> {
        let kernels = take(ids, branches)?;
        let fc = take(ids, 4)?;
        Ok(Self {
            kernels,
            fc1_w: fc[0],
            fc1_b: fc[1],
            fc2_w: fc[2],
            fc2_b: fc[3],
            head_w: take(ids, branches)?,
            head_b: take(ids, branches)?,
        })
    }
}

/// Dynamic convolution `Σ_l conv(x, pad(K_l) ⊙ T_l)` where the canvases
/// `T_l` come from squeeze-excitation on `x` and the positional softmax.
///
/// `ids` lists the branch kernels, `fc1_w, fc1_b, fc2_w, fc2_b`, then the
/// head weights and head biases, as in [`super::DclParams`].
pub fn dcl_node(
    g: &mut Graph,
    input: NodeId,
    ids: &[NodeId],
    sizes: &[usize],
    attention: AttentionMode,
) -> Result<NodeId> {
    if ids.len() != dcl_len(sizes.len()) {
        return Err(UnmixError::Shape(format!(
            "{} nodes for a {}-branch dynamic convolution",
            ids.len(),
            sizes.len()
        )));
    }
    let d = DclIds::take(&mut ids.iter(), sizes.len())?;
    dcl(g, input, &d, sizes, attention)
}

/// The `[L, S, S]` attention canvases a dynamic convolution with learned
/// attention would apply to `input`; `ids` as in [`dcl_node`].
pub fn dcl_attention(
    g: &mut Graph,
    input: NodeId,
    ids: &[NodeId],
    sizes: &[usize],
) -> Result<NodeId> {
    if ids.len() != dcl_len(sizes.len()) {
        return Err(UnmixError::Shape(format!(
            "{} nodes for a {}-branch dynamic convolution",
            ids.len(),
            sizes.len()
        )));
    }
    let d = DclIds::take(&mut ids.iter(), sizes.len())?;
    attention_canvases(g, input, &d, sizes)
}

fn attention_canvases(g: &mut Graph, input: NodeId, d: &DclIds, sizes: &[usize]) -> Result<NodeId> {
    let size = *sizes.last().expect("validated non-empty");
    let pooled = g.global_avg_pool(input)?;
    let h1 = g.linear(pooled, d.fc1_w, d.fc1_b)?;
    let h1 = g.relu(h1);
    let h2 = g.linear(h1, d.fc2_w, d.fc2_b)?;
    let mut canvases = Vec::with_capacity(sizes.len());
    for (l, &k) in sizes.iter().enumerate() {
        let logits = g.linear(h2, d.head_w[l], d.head_b[l])?;
        let square = g.reshape(logits, &[k, k])?;
        canvases.push(g.pad_center(square, size)?);
    }
    Ok(g.softmaxpro(&canvases, sizes)?)
}

fn dcl(
    g: &mut Graph,
    input: NodeId,
    d: &DclIds,
    sizes: &[usize],
    attention: AttentionMode,
) -> Result<NodeId> {
    let size = *sizes.last().expect("validated non-empty");
    let weights: Vec<NodeId> = match attention {
        AttentionMode::Learned => {
            let t = attention_canvases(g, input, d, sizes)?;
            (0..sizes.len())
                .map(|l| g.select(t, l))
                .collect::<std::result::Result<_, _>>()?
        }
        AttentionMode::Bypass => sizes
            .iter()
            .map(|&k| {
                let mask = (0..size * size)
                    .map(|p| f64::from(u8::from(is_live(p / size, p % size, k, size))))
                    .collect();
                g.constant(Tensor::new(vec![size, size], mask).expect("square canvas"))
            })
            .collect(),
    };
    let mut effective: Option<NodeId> = None;
    for (l, &kernel) in d.kernels.iter().enumerate() {
        let padded = g.pad_center(kernel, size)?;
        let masked = g.mul(padded, weights[l])?;
        effective = Some(match effective {
            None => masked,
            Some(acc) => g.add(acc, masked)?,
        });
    }
    Ok(g.conv2d(input, effective.expect("at least one branch"))?)
}

/// `C(V1)` evaluated on the current value of `v1` and recorded as a constant,
/// so no gradient flows through the denoiser.
pub fn denoised_constant(
    g: &mut Graph,
    v1: NodeId,
    height: usize,
    width: usize,
    denoiser: &DenoiserSpec,
) -> Result<NodeId> {
    let r = g.value(v1).shape()[0];
    let value = matrix_from_tensor(g.value(v1), r);
    let field = AbundanceField::new(height, width, value)?;
    let cleaned = denoise(&field, denoiser)?;
    let t = tensor_from_matrix(cleaned.matrix(), &[r, height, width]);
    Ok(g.constant(t))
}

/// `softmax_R(γ·[dcl(X; W1) + dcl(V1 − G1; Q1)])`, all fields `[C, h, w]`.
#[allow(clippy::too_many_arguments)]
pub fn layer_a(
    g: &mut Graph,
    x: NodeId,
    v1: NodeId,
    g1: NodeId,
    w1: &[NodeId],
    q1: &[NodeId],
    gain: NodeId,
    config: &NetConfig,
    hooks: &NetHooks,
) -> Result<NodeId> {
    let from_x = dcl_node(g, x, w1, &config.kernel_sizes, hooks.attention)?;
    let diff = g.sub(v1, g1)?;
    let from_v = dcl_node(g, diff, q1, &config.q1_kernel_sizes, hooks.attention)?;
    let pre = g.add(from_x, from_v)?;
    if !hooks.softmax {
        return Ok(pre);
    }
    let scaled = g.mul(pre, gain)?;
    Ok(g.softmax_channels(scaled)?)
}

/// `θ1·C + θ2·(A + G1)` where `c` already holds `C(V1_prev)`.
pub fn layer_v1(
    g: &mut Graph,
    a: NodeId,
    g1: NodeId,
    c: NodeId,
    theta1: NodeId,
    theta2: NodeId,
) -> Result<NodeId> {
    let t1 = g.mul(c, theta1)?;
    let ag = g.add(a, g1)?;
    let t2 = g.mul(ag, theta2)?;
    Ok(g.add(t1, t2)?)
}

/// Dual step `G + θ(P − V)`.
pub fn layer_dual(
    g: &mut Graph,
    primal: NodeId,
    split: NodeId,
    dual: NodeId,
    theta: NodeId,
) -> Result<NodeId> {
    let res = g.sub(primal, split)?;
    let step = g.mul(res, theta)?;
    Ok(g.add(dual, step)?)
}

/// `X·W2 + (G2 − V2)·Q2` with `X` as `[B, N]`.
pub fn layer_m(
    g: &mut Graph,
    x: NodeId,
    v2: NodeId,
    g2: NodeId,
    w2: NodeId,
    q2: NodeId,
) -> Result<NodeId> {
    let xw = g.matmul(x, w2)?;
    let gv = g.sub(g2, v2)?;
    let gvq = g.matmul(gv, q2)?;
    Ok(g.add(xw, gvq)?)
}

/// `relu(M + G2)`.
pub fn layer_v2(g: &mut Graph, m: NodeId, g2: NodeId) -> Result<NodeId> {
    let mg = g.add(m, g2)?;
    Ok(g.relu(mg))
}

fn dcl_len(branches: usize) -> usize {
    3 * branches + 4
}

/// Records the full unrolled network and its weighted loss on `g`.
///
/// `ids` holds one node per parameter tensor in [`NetParams::named`] order,
/// so the caller decides which are trainable.
pub fn build_graph(
    g: &mut Graph,
    ids: &[NodeId],
    input: &NetInput,
    state: &NetState,
    config: &NetConfig,
    hooks: &NetHooks,
) -> Result<ForwardGraph> {
    let (b, h, w, n) = (input.bands(), input.height, input.width, input.pixels());
    let r = state.v1.nrows();
    if state.v1.shape() != (r, n)
        || state.g1.shape() != (r, n)
        || state.v2.shape() != (b, r)
        || state.g2.shape() != (b, r)
    {
        return Err(UnmixError::Shape(
            "network state does not match the input".into(),
        ));
    }
    if config.beta_k.len() != config.blocks {
        return Err(UnmixError::InvalidParameter(
            "beta_k length differs from block count".into(),
        ));
    }
    let x3 = g.constant(input.x.clone());
    let x2 = g.reshape(x3, &[b, n])?;
    let mut v1 = g.constant(tensor_from_matrix(&state.v1, &[r, h, w]));
    let mut g1 = g.constant(tensor_from_matrix(&state.g1, &[r, h, w]));
    let mut v2 = g.constant(tensor_from_matrix(&state.v2, &[b, r]));
    let mut g2 = g.constant(tensor_from_matrix(&state.g2, &[b, r]));

    let per_block = dcl_len(config.kernel_sizes.len()) + dcl_len(config.q1_kernel_sizes.len()) + 7;
    if ids.len() != per_block * config.blocks {
        return Err(UnmixError::Shape(format!(
            "{} parameter nodes for a layout needing {}",
            ids.len(),
            per_block * config.blocks
        )));
    }
    let mut blocks = Vec::with_capacity(config.blocks);
    let mut loss: Option<NodeId> = None;
    for (k, chunk) in ids.chunks(per_block).enumerate() {
        let (w1, rest) = chunk.split_at(dcl_len(config.kernel_sizes.len()));
        let (q1, rest) = rest.split_at(dcl_len(config.q1_kernel_sizes.len()));
        let (theta1, theta2, w2, q2, theta3, theta4, gain) = (
            rest[0], rest[1], rest[2], rest[3], rest[4], rest[5], rest[6],
        );

        let a = layer_a(g, x3, v1, g1, w1, q1, gain, config, hooks)?;
        let c = denoised_constant(g, v1, h, w, &config.denoiser)?;
        let v1_new = layer_v1(g, a, g1, c, theta1, theta2)?;
        let g1_new = layer_dual(g, a, v1_new, g1, theta3)?;

        let m = layer_m(g, x2, v2, g2, w2, q2)?;
        let v2_new = layer_v2(g, m, g2)?;
        let g2_new = layer_dual(g, m, v2_new, g2, theta4)?;

        let a_flat = g.reshape(a, &[r, n])?;
        let x_hat = g.matmul(m, a_flat)?;
        let term = g.squared_error(x2, x_hat, config.beta_k[k] / (2.0 * n as f64))?;
        loss = Some(match loss {
            None => term,
            Some(l) => g.add(l, term)?,
        });

        blocks.push(BlockNodes {
            a,
            v1: v1_new,
            g1: g1_new,
            m,
            v2: v2_new,
            g2: g2_new,
            x_hat,
        });
        v1 = v1_new;
        g1 = g1_new;
        v2 = v2_new;
        g2 = g2_new;
    }
    Ok(ForwardGraph {
        blocks,
        loss: loss.expect("blocks ≥ 1"),
    })
}

/// Values produced by one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOutput {
    pub a: DMatrix<f64>,
    pub v1: DMatrix<f64>,
    pub g1: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub v2: DMatrix<f64>,
    pub g2: DMatrix<f64>,
    pub x_hat: DMatrix<f64>,
}

/// Inference pass; returns every block's iterates and the loss.
pub fn forward(
    params: &NetParams,
    input: &NetInput,
    state: &NetState,
    config: &NetConfig,
    hooks: &NetHooks,
) -> Result<(Vec<BlockOutput>, f64)> {
    if params.blocks.len() != config.blocks {
        return Err(UnmixError::InvalidParameter(format!(
            "{} parameter blocks for a {}-block configuration",
            params.blocks.len(),
            config.blocks
        )));
    }
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params
        .named()
        .into_iter()
        .map(|(_, t)| g.constant(t.clone()))
        .collect();
    let fg = build_graph(&mut g, &ids, input, state, config, hooks)?;
    let r = state.v1.nrows();
    let b = input.bands();
    let outputs = fg
        .blocks
        .iter()
        .map(|nodes| BlockOutput {
            a: matrix_from_tensor(g.value(nodes.a), r),
            v1: matrix_from_tensor(g.value(nodes.v1), r),
            g1: matrix_from_tensor(g.value(nodes.g1), r),
            m: matrix_from_tensor(g.value(nodes.m), b),
            v2: matrix_from_tensor(g.value(nodes.v2), b),
            g2: matrix_from_tensor(g.value(nodes.g2), b),
            x_hat: matrix_from_tensor(g.value(nodes.x_hat), b),
        })
        .collect();
    let loss = g.value(fg.loss).item().expect("scalar loss");
    Ok((outputs, loss))
}

/// `(1/2N) Σ_k β_k ‖X − X̂_k‖²` for `B×N` matrices.
pub fn loss_value(x: &DMatrix<f64>, x_hats: &[DMatrix<f64>], beta_k: &[f64]) -> Result<f64> {
    if x_hats.len() != beta_k.len() {
        return Err(UnmixError::InvalidParameter(
            "one weight per block output required".into(),
        ));
    }
    let n = x.ncols() as f64;
    let mut total = 0.0;
    for (xh, bk) in x_hats.iter().zip(beta_k) {
        if xh.shape() != x.shape() {
            return Err(UnmixError::Shape(
                "reconstruction shape differs from X".into(),
            ));
        }
        total += bk * (x - xh).norm_squared() / (2.0 * n);
    }
    Ok(total)
}
