use unmix_autodiff::{Graph, NodeId, Tensor};

use super::forward::{build_graph, forward, NetInput, NetState};
use super::params::{init_params, NetParams};
use super::{NetConfig, NetHooks};
use crate::data::{AbundanceField, EndmemberMatrix, HyperCube};
use crate::error::{Result, UnmixError};
use crate::init::InitResult;

/// Adaptive-moment optimizer state, one moment pair per tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u32,
    lr_scale: Vec<f64>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            lr_scale: vec![1.0; sizes.len()],
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Multiplies the step size of tensor `index`.
    pub fn set_lr_scale(&mut self, index: usize, scale: f64) {
        self.lr_scale[index] = scale;
    }

    /// One bias-corrected update of every tensor in `params`.
    pub fn update(&mut self, params: &mut [&mut Tensor], grads: &[Option<&Tensor>]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let Some(gt) = grads[i] else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let lr = self.lr * self.lr_scale[i];
            for (j, x) in p.data_mut().iter_mut().enumerate() {
                let gj = gt.data()[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                *x -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetParams,
    pub state: NetState,
    /// `M` of the last block.
    pub endmembers: EndmemberMatrix,
    /// `A` of the last block.
    pub abundances: AbundanceField,
    /// Loss at the start of every epoch.
    pub history: Vec<f64>,
    pub final_loss: f64,
    pub stopped_early: bool,
}

pub fn train(cube: &HyperCube, config: &NetConfig, init: &InitResult) -> Result<TrainOutcome> {
    train_with(cube, config, init, &NetHooks::default(), |_, _| {})
}

/// Full-image gradient descent on the weighted multi-block loss.
///
/// `on_epoch(epoch, loss)` runs after each loss evaluation. Fails with
/// [`UnmixError::Diverged`] when the loss turns non-finite or exceeds
/// `divergence_factor` times the first loss.
pub fn train_with(
    cube: &HyperCube,
    config: &NetConfig,
    init: &InitResult,
    hooks: &NetHooks,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    config.validate()?;
    if init.endmembers.bands() != cube.bands() || init.abundances.pixels() != cube.pixels() {
        return Err(UnmixError::Shape(
            "initialization does not match the cube".into(),
        ));
    }
    let input = NetInput::from_cube(cube);
    let state = NetState::from_init(init);
    let mut params = init_params(init, config)?;
    let sizes: Vec<usize> = params.named().iter().map(|(_, t)| t.len()).collect();
    let mut adam = Adam::new(config.lr, &sizes);
    let n = cube.pixels() as f64;
    for (i, (name, t)) in params.named().iter().enumerate() {
        if config.w2_fan_in_lr && name.ends_with(".w2") {
            adam.set_lr_scale(i, 1.0 / n);
        }
        if config.kernel_fan_in_lr && name.contains(".kernel") {
            let s = t.shape();
            adam.set_lr_scale(i, 1.0 / (s[1] * s[2] * s[3]) as f64);
        }
    }
    // Near an exact fit Adam's normalized steps briefly lift the loss off
    // zero; growth that stays this small relative to the data is not divergence.
    let x = cube.to_matrix();
    let floor = 1e-6 * config.beta_k.iter().sum::<f64>() * x.norm_squared() / (2.0 * n);
    let mut history: Vec<f64> = Vec::with_capacity(config.epochs);
    let mut stopped_early = false;

    for epoch in 0..config.epochs {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = params
            .named()
            .into_iter()
            .map(|(_, t)| g.param(t.clone()))
            .collect();
        let fg = build_graph(&mut g, &ids, &input, &state, config, hooks)?;
        let loss = g.value(fg.loss).item().expect("scalar loss");
        on_epoch(epoch, loss);
        let initial = history.first().copied().unwrap_or(loss);
        if !loss.is_finite() || loss > config.divergence_factor * initial.max(floor) {
            return Err(UnmixError::Diverged {
                step: epoch,
                loss,
                initial,
            });
        }
        history.push(loss);
        let w = config.early_stop_window;
        if w > 0 && epoch >= w && history[epoch - w] - loss < config.early_stop_tol {
            stopped_early = true;
            break;
        }
        g.backward(fg.loss)?;
        let grads: Vec<Option<&Tensor>> = ids.iter().map(|&id| g.grad(id)).collect();
        let mut slots = params.tensors_mut();
        adam.update(&mut slots, &grads);
    }

    let (outputs, final_loss) = forward(&params, &input, &state, config, hooks)?;
    let last = outputs.last().expect("at least one block");
    Ok(TrainOutcome {
        endmembers: EndmemberMatrix::new(last.m.clone())?,
        abundances: AbundanceField::new(cube.height(), cube.width(), last.a.clone())?,
        params,
        state,
        history,
        final_loss,
        stopped_early,
    })
}

/// Training history as CSV text.
pub fn history_csv(history: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (e, l) in history.iter().enumerate() {
        s.push_str(&format!("{e},{l:e}\n"));
    }
    s
}
