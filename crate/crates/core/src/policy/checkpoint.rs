//! Policy checkpoints: a raw little-endian f64 parameter file plus a JSON
//! sidecar at `<path>.json` describing how to interpret it.
//!
//! The binary holds `num_params` IEEE-754 doubles, no header, in the order
//! `W1, b1, W2, b2, W3, b3`; each weight matrix row-major `[fan_out][fan_in]`.
//! The network input is the step-size history flattened lag-major: row 0
//! (most recent inner solve) first, columns within a row in slot order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{MetaPolicy, PolicyError};
use crate::Scalar;

pub const CHECKPOINT_FORMAT: &str = "mso-meta-policy/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub dtype: String,
    pub layer_sizes: [usize; 4],
    pub activation: String,
    pub output: String,
    pub param_order: Vec<String>,
    pub weight_layout: String,
    pub input_flattening: String,
    pub d: usize,
    pub h: usize,
    pub include_gradient_alpha: bool,
    pub num_params: usize,
}

impl CheckpointMeta {
    pub fn describe<S: Scalar>(net: &MetaPolicy<S>, d: usize, h: usize, include_gradient_alpha: bool) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            dtype: "f64-le".into(),
            layer_sizes: net.layer_sizes(),
            activation: "tanh".into(),
            output: "softmax".into(),
            param_order: ["W1", "b1", "W2", "b2", "W3", "b3"].map(String::from).to_vec(),
            weight_layout: "row-major [fan_out][fan_in]".into(),
            input_flattening: "lag-major".into(),
            d,
            h,
            include_gradient_alpha,
            num_params: net.num_params(),
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_checkpoint<S: Scalar>(
    path: impl AsRef<Path>,
    net: &MetaPolicy<S>,
    d: usize,
    h: usize,
    include_gradient_alpha: bool,
) -> Result<CheckpointMeta, PolicyError> {
    let path = path.as_ref();
    let meta = CheckpointMeta::describe(net, d, h, include_gradient_alpha);
    let bytes: Vec<u8> = net.params().iter().flat_map(|v| v.to_f64_lossy().to_le_bytes()).collect();
    fs::write(path, bytes)?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;
    Ok(meta)
}

pub fn load_checkpoint<S: Scalar>(path: impl AsRef<Path>) -> Result<(MetaPolicy<S>, CheckpointMeta), PolicyError> {
    let path = path.as_ref();
    let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    if meta.format != CHECKPOINT_FORMAT || meta.dtype != "f64-le" {
        return Err(PolicyError::Checkpoint(format!("unsupported format {} / {}", meta.format, meta.dtype)));
    }
    let bytes = fs::read(path)?;
    if bytes.len() != meta.num_params * 8 {
        return Err(PolicyError::Checkpoint(format!(
            "expected {} bytes of parameters, found {}",
            meta.num_params * 8,
            bytes.len()
        )));
    }
    let theta: Vec<S> = bytes
        .chunks_exact(8)
        .map(|c| S::lit(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
        .collect();
    let net = MetaPolicy::from_parts(meta.layer_sizes, theta)?;
    let cols = meta.d - 1 + usize::from(meta.include_gradient_alpha);
    if net.input_len() != meta.h * cols || net.actions() != meta.d - 1 {
        return Err(PolicyError::Checkpoint("layer sizes inconsistent with d/h".into()));
    }
    Ok((net, meta))
}
