use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unmix_autodiff::Tensor;

use super::NetConfig;
use crate::error::{Result, UnmixError};
use crate::init::InitResult;

/// Parallel multiscale kernels plus the squeeze-excitation attention that
/// weighs them.
#[derive(Debug, Clone, PartialEq)]
pub struct DclParams {
    pub sizes: Vec<usize>,
    /// One `[cout, cin, k, k]` kernel per branch.
    pub kernels: Vec<Tensor>,
    pub fc1_w: Tensor,
    pub fc1_b: Tensor,
    pub fc2_w: Tensor,
    pub fc2_b: Tensor,
    /// Per-branch heads `[k², hidden]` and `[k²]`.
    pub head_w: Vec<Tensor>,
    pub head_b: Vec<Tensor>,
}

/// Head bias of the 1×1 branch after [`DclParams::set_pointwise`]; gives it
/// a centre weight of about `1 − (L−1)·e⁻¹⁰`.
pub const POINTWISE_BIAS: f64 = 10.0;

pub fn hidden_width(cin: usize) -> usize {
    (cin / 4).max(4)
}

fn uniform(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and length agree")
}

impl DclParams {
    /// Zero kernels; attention weights drawn from `uniform(±0.01)`, zero biases.
    pub fn new(cin: usize, cout: usize, sizes: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        validate_sizes(sizes)?;
        let hidden = hidden_width(cin);
        let kernels = sizes
            .iter()
            .map(|&k| Tensor::zeros(&[cout, cin, k, k]))
            .collect();
        let fc1_w = uniform(&[hidden, cin], 0.01, rng);
        let fc2_w = uniform(&[hidden, hidden], 0.01, rng);
        let head_w = sizes
            .iter()
            .map(|&k| uniform(&[k * k, hidden], 0.01, rng))
            .collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            kernels,
            fc1_w,
            fc1_b: Tensor::zeros(&[hidden]),
            fc2_w,
            fc2_b: Tensor::zeros(&[hidden]),
            head_w,
            head_b: sizes.iter().map(|&k| Tensor::zeros(&[k * k])).collect(),
        })
    }

    pub fn max_size(&self) -> usize {
        *self.sizes.last().expect("at least one branch")
    }

    pub fn cin(&self) -> usize {
        self.kernels[0].shape()[1]
    }

    pub fn cout(&self) -> usize {
        self.kernels[0].shape()[0]
    }

    /// Writes `matrix` (cout×cin) into the 1×1 branch.
    pub fn set_pointwise(&mut self, matrix: &DMatrix<f64>) -> Result<()> {
        let idx =
            self.sizes.iter().position(|&k| k == 1).ok_or_else(|| {
                UnmixError::InvalidParameter("no 1×1 branch to initialize".into())
            })?;
        let (co, ci) = (self.cout(), self.cin());
        if matrix.shape() != (co, ci) {
            return Err(UnmixError::Shape(format!(
                "pointwise kernel {:?} for a {co}×{ci} layer",
                matrix.shape()
            )));
        }
        // Hand the kernel centre to the pointwise branch so the block starts
        // from the closed-form update rather than a 1/L share of it.
        if self.sizes.len() > 1 {
            let b = self.head_b[idx].data_mut();
            b.iter_mut().for_each(|v| *v = POINTWISE_BIAS);
        }
        let data = self.kernels[idx].data_mut();
        for o in 0..co {
            for i in 0..ci {
                data[o * ci + i] = matrix[(o, i)];
            }
        }
        Ok(())
    }

    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (k, t) in self.sizes.iter().zip(&self.kernels) {
            out.push((format!("{prefix}.kernel{k}"), t));
        }
        out.push((format!("{prefix}.fc1_w"), &self.fc1_w));
        out.push((format!("{prefix}.fc1_b"), &self.fc1_b));
        out.push((format!("{prefix}.fc2_w"), &self.fc2_w));
        out.push((format!("{prefix}.fc2_b"), &self.fc2_b));
        for (k, t) in self.sizes.iter().zip(&self.head_w) {
            out.push((format!("{prefix}.head{k}_w"), t));
        }
        for (k, t) in self.sizes.iter().zip(&self.head_b) {
            out.push((format!("{prefix}.head{k}_b"), t));
        }
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.extend(self.kernels.iter_mut());
        out.push(&mut self.fc1_w);
        out.push(&mut self.fc1_b);
        out.push(&mut self.fc2_w);
        out.push(&mut self.fc2_b);
        out.extend(self.head_w.iter_mut());
        out.extend(self.head_b.iter_mut());
    }
}

pub(crate) fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.is_empty() {
        return Err(UnmixError::InvalidParameter(
            "kernel size list is empty".into(),
        ));
    }
    if sizes.iter().any(|k| k % 2 == 0) || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(UnmixError::InvalidParameter(format!(
            "kernel sizes must be odd and strictly ascending, got {sizes:?}"
        )));
    }
    Ok(())
}

/// Learnable parameters of one unrolled block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub w1: DclParams,
    pub q1: DclParams,
    pub theta1: Tensor,
    pub theta2: Tensor,
    /// `[N, R]`.
    pub w2: Tensor,
    /// `[R, R]`.
    pub q2: Tensor,
    pub theta3: Tensor,
    pub theta4: Tensor,
    /// Scalar gain on the logits entering the channel softmax.
    pub gain: Tensor,
}

fn matrix_tensor(m: &DMatrix<f64>) -> Tensor {
    let data = m.transpose().as_slice().to_vec();
    Tensor::new(vec![m.nrows(), m.ncols()], data).expect("shape and length agree")
}

pub(crate) fn spd_inverse(m: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.try_inverse()
        .ok_or_else(|| UnmixError::Singular(format!("{what} is not invertible")))
}

impl BlockParams {
    /// Closed-form initialization: the 1×1 `W1`, `Q1` branches reproduce the
    /// `A`-update at `m0`, and `W2`, `Q2` reproduce the `M`-update at `a0`.
    pub fn from_closed_form(
        m0: &DMatrix<f64>,
        a0: &DMatrix<f64>,
        config: &NetConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let (b, r) = m0.shape();
        if a0.nrows() != r {
            return Err(UnmixError::Shape(format!(
                "M has {r} columns but A has {} rows",
                a0.nrows()
            )));
        }
        let (alpha, beta) = (config.alpha, config.beta);
        let inv_a = spd_inverse(
            m0.transpose() * m0 + DMatrix::identity(r, r) * alpha,
            "MᵀM + αI",
        )?;
        let mut w1 = DclParams::new(b, r, &config.kernel_sizes, rng)?;
        w1.set_pointwise(&(&inv_a * m0.transpose()))?;
        let mut q1 = DclParams::new(r, r, &config.q1_kernel_sizes, rng)?;
        q1.set_pointwise(&(&inv_a * alpha))?;
        let inv_m = spd_inverse(
            a0 * a0.transpose() + DMatrix::identity(r, r) * beta,
            "AAᵀ + βI",
        )?;
        let w2 = a0.transpose() * &inv_m;
        let q2 = &inv_m * (-beta);
        Ok(Self {
            w1,
            q1,
            theta1: Tensor::scalar(0.5),
            theta2: Tensor::scalar(0.5),
            w2: matrix_tensor(&w2),
            q2: matrix_tensor(&q2),
            theta3: Tensor::scalar(0.1),
            theta4: Tensor::scalar(0.1),
            gain: Tensor::scalar(config.softmax_gain),
        })
    }

    pub fn named(&self, block: usize) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.w1.visit(&format!("block{block}.w1"), &mut out);
        self.q1.visit(&format!("block{block}.q1"), &mut out);
        out.push((format!("block{block}.theta1"), &self.theta1));
        out.push((format!("block{block}.theta2"), &self.theta2));
        out.push((format!("block{block}.w2"), &self.w2));
        out.push((format!("block{block}.q2"), &self.q2));
        out.push((format!("block{block}.theta3"), &self.theta3));
        out.push((format!("block{block}.theta4"), &self.theta4));
        out.push((format!("block{block}.gain"), &self.gain));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        self.w1.visit_mut(&mut out);
        self.q1.visit_mut(&mut out);
        out.push(&mut self.theta1);
        out.push(&mut self.theta2);
        out.push(&mut self.w2);
        out.push(&mut self.q2);
        out.push(&mut self.theta3);
        out.push(&mut self.theta4);
        out.push(&mut self.gain);
        out
    }
}

/// Parameters of all blocks; blocks do not share weights.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub blocks: Vec<BlockParams>,
}

impl NetParams {
    /// Every tensor with a stable name, in checkpoint order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(k, b)| b.named(k))
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.blocks
            .iter_mut()
            .flat_map(|b| b.tensors_mut())
            .collect()
    }

    /// Owned copies in checkpoint order.
    pub fn flatten(&self) -> Vec<(String, Tensor)> {
        self.named()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect()
    }

    /// Overwrites every tensor from `values` (checkpoint order, same shapes).
    pub fn assign(&mut self, values: &[Tensor]) -> Result<()> {
        let mut slots = self.tensors_mut();
        if slots.len() != values.len() {
            return Err(UnmixError::Shape(format!(
                "expected {} tensors, got {}",
                slots.len(),
                values.len()
            )));
        }
        for (slot, v) in slots.iter_mut().zip(values) {
            if slot.shape() != v.shape() {
                return Err(UnmixError::Shape(format!(
                    "tensor shape {:?} vs {:?}",
                    slot.shape(),
                    v.shape()
                )));
            }
            **slot = v.clone();
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Builds `K` blocks from the VCA/FCLS initialization. Attention weights are
/// seeded from `config.seed`.
pub fn init_params(init: &InitResult, config: &NetConfig) -> Result<NetParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let m0 = init.endmembers.matrix();
    let a0 = init.abundances.matrix();
    let blocks = (0..config.blocks)
        .map(|_| BlockParams::from_closed_form(m0, a0, config, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(NetParams { blocks })
}
