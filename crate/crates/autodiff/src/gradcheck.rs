//! Central finite-difference verification of graph gradients.

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Upper bound on coordinates probed per tensor; larger tensors are
    /// probed on an evenly strided subset.
    pub max_coords: usize,
    pub tolerance: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-6,
            max_coords: 200,
            tolerance: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub checked: usize,
    /// Largest `|analytic − numeric|` over probed coordinates, divided by the
    /// largest numeric magnitude in the tensor (absolute when that is zero).
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.max_rel_error < self.tolerance)
    }

    pub fn worst(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_error)
            .fold(0.0, f64::max)
    }
}

fn probe_indices(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    // Strided subset that still touches the first and last element.
    (0..max).map(|i| i * (len - 1) / (max - 1)).collect()
}

/// Builds the graph once for analytic gradients and twice per probed
/// coordinate for central differences. `build` receives one parameter node
/// per entry of `params` (in order) and returns the scalar loss node.
pub fn grad_check<F>(
    params: &[(String, Tensor)],
    build: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = values.iter().map(|t| g.param(t.clone())).collect();
        let loss = build(&mut g, &ids)?;
        Ok(g.value(loss).data()[0])
    };

    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|(_, t)| g.param(t.clone())).collect();
    let loss = build(&mut g, &ids)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> = ids
        .iter()
        .zip(params)
        .map(|(&id, (_, t))| {
            g.grad(id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();

    let mut values: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let mut entries = Vec::with_capacity(params.len());
    for (pi, (name, tensor)) in params.iter().enumerate() {
        let idx = probe_indices(tensor.len(), opts.max_coords);
        let mut numeric = Vec::with_capacity(idx.len());
        for &i in &idx {
            let orig = values[pi].data()[i];
            values[pi].data_mut()[i] = orig + opts.step;
            let up = eval(&values)?;
            values[pi].data_mut()[i] = orig - opts.step;
            let down = eval(&values)?;
            values[pi].data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * opts.step));
        }
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let denom = if scale > 0.0 { scale } else { 1.0 };
        let max_err = idx
            .iter()
            .zip(&numeric)
            .map(|(&i, n)| (analytic[pi].data()[i] - n).abs() / denom)
            .fold(0.0, f64::max);
        entries.push(GradCheckEntry {
            name: name.clone(),
            checked: idx.len(),
            max_rel_error: max_err,
        });
    }
    Ok(GradCheckReport {
        entries,
        tolerance: opts.tolerance,
    })
}
