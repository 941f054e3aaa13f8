use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use unmix_autodiff::Tensor;

use super::forward::{matrix_from_tensor, tensor_from_matrix, NetState};
use super::params::{init_params, NetParams};
use super::NetConfig;
use crate::data::{AbundanceField, EndmemberMatrix};
use crate::error::{Result, UnmixError};
use crate::init::InitResult;

/// Trained parameters together with the configuration and entry state
/// needed to rerun inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: NetConfig,
    pub params: NetParams,
    pub state: NetState,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    dtype: String,
    seed: u64,
    config: NetConfig,
    tensors: Vec<TensorEntry>,
}

const FORMAT: &str = "pnp-net-checkpoint-v1";

fn state_tensors(state: &NetState) -> Vec<(String, Tensor)> {
    let t = |name: &str, m: &DMatrix<f64>| {
        (
            name.to_string(),
            tensor_from_matrix(m, &[m.nrows(), m.ncols()]),
        )
    };
    vec![
        t("state.v1", &state.v1),
        t("state.g1", &state.g1),
        t("state.v2", &state.v2),
        t("state.g2", &state.g2),
    ]
}

/// JSON header line, then every tensor as little-endian `f64` in header order.
pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut tensors = ck.params.flatten();
    tensors.extend(state_tensors(&ck.state));
    let header = Header {
        format: FORMAT.into(),
        dtype: "f64le".into(),
        seed: ck.config.seed,
        config: ck.config.clone(),
        tensors: tensors
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let mut bytes = serde_json::to_vec(&header).map_err(|e| UnmixError::Format {
        path: path.into(),
        field: "header".into(),
        reason: e.to_string(),
    })?;
    bytes.push(b'\n');
    for (_, t) in &tensors {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| UnmixError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| UnmixError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| UnmixError::io(path, e))?;
    let fmt_err = |field: &str, reason: String| UnmixError::Format {
        path: path.into(),
        field: field.into(),
        reason,
    };
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| fmt_err("header", "missing header line".into()))?;
    let header: Header =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| fmt_err("header", e.to_string()))?;
    if header.format != FORMAT {
        return Err(fmt_err(
            "format",
            format!("unsupported format {}", header.format),
        ));
    }
    if header.dtype != "f64le" {
        return Err(fmt_err(
            "dtype",
            format!("unsupported dtype {}", header.dtype),
        ));
    }
    let payload = &bytes[nl + 1..];
    let expected: usize = header
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>())
        .sum();
    if payload.len() != expected * 8 {
        return Err(UnmixError::SizeMismatch {
            path: path.into(),
            expected,
            found: payload.len() / 8,
        });
    }
    let mut values: Vec<(String, Tensor)> = Vec::with_capacity(header.tensors.len());
    let mut off = 0;
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let data = payload[off * 8..(off + n) * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        off += n;
        values.push((entry.name.clone(), Tensor::new(entry.shape.clone(), data)?));
    }
    let state_at = values
        .iter()
        .position(|(n, _)| n == "state.v1")
        .ok_or_else(|| fmt_err("tensors", "missing state.v1".into()))?;
    if values.len() != state_at + 4 {
        return Err(fmt_err("tensors", "state block must be last".into()));
    }
    let m = |i: usize| {
        let t = &values[state_at + i].1;
        matrix_from_tensor(t, t.shape()[0])
    };
    let state = NetState {
        v1: m(0),
        g1: m(1),
        v2: m(2),
        g2: m(3),
    };

    // Build a correctly shaped skeleton, then overwrite every tensor.
    let r = state.v1.nrows();
    let (b, n) = (state.v2.nrows(), state.v1.ncols());
    let skeleton = InitResult {
        endmembers: EndmemberMatrix::new(DMatrix::from_fn(
            b,
            r,
            |i, j| if i == j { 1.0 } else { 0.0 },
        ))?,
        abundances: AbundanceField::new(
            1,
            n,
            DMatrix::from_fn(r, n, |i, j| if i == j % r { 1.0 } else { 0.0 }),
        )?,
    };
    let config = header.config;
    let mut params = init_params(&skeleton, &config)?;
    let expected_names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    let names: Vec<&String> = values[..state_at].iter().map(|(n, _)| n).collect();
    if expected_names.iter().collect::<Vec<_>>() != names {
        return Err(fmt_err(
            "tensors",
            "tensor list does not match the configured layout".into(),
        ));
    }
    let tensors: Vec<Tensor> = values[..state_at].iter().map(|(_, t)| t.clone()).collect();
    params.assign(&tensors)?;
    Ok(Checkpoint {
        config,
        params,
        state,
    })
}
