//! Versioned checkpoint container: a JSON metadata header followed by
//! named, shape-tagged, little-endian f32 arrays. Sensing matrices are not
//! stored; their metadata regenerates them bit-exactly.

use super::optim::OptimizerState;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{init_params, DecoderParams, ModelConfig};
use crate::sensing::SensingMeta;
use ndarray::Array1;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"CSVCKPT\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArraySpec {
    name: String,
    shape: Vec<usize>,
    /// Offset into the payload, in f32 slots.
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    model: ModelConfig,
    sensing: SensingMeta,
    train: TrainConfig,
    step: u64,
    arrays: Vec<ArraySpec>,
    has_optimizer: bool,
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub sensing: SensingMeta,
    pub train: TrainConfig,
    pub step: u64,
    pub params: DecoderParams<f32>,
    pub opt_state: Option<OptimizerState<f32>>,
}

impl Checkpoint {
    /// Rejects checkpoints whose architecture differs from `expected`.
    pub fn require_model(&self, expected: &ModelConfig) -> Result<()> {
        if self.model != *expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained with a different architecture: {:?} vs expected {:?}",
                self.model, expected
            )));
        }
        Ok(())
    }
}

fn write_f32s<W: Write>(w: &mut W, values: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Serializes parameters, optional optimizer state, and all run metadata.
pub fn save_checkpoint(
    params: &DecoderParams<f32>,
    opt_state: Option<&OptimizerState<f32>>,
    sensing: SensingMeta,
    train: &TrainConfig,
    path: &Path,
) -> Result<()> {
    let layout = params.store().layout();
    let arrays: Vec<ArraySpec> = layout
        .entries()
        .iter()
        .map(|e| ArraySpec {
            name: e.name.clone(),
            shape: e.shape.clone(),
            offset: e.offset,
        })
        .collect();
    let header = Header {
        version: VERSION,
        model: params.config().clone(),
        sensing,
        train: train.clone(),
        step: opt_state.map_or(0, |s| s.step()),
        arrays,
        has_optimizer: opt_state.is_some(),
    };
    let header_json = serde_json::to_vec(&header)?;

    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header_json.len() as u64).to_le_bytes())?;
    w.write_all(&header_json)?;
    write_f32s(&mut w, params.store().values())?;
    if let Some(state) = opt_state {
        if state.len() != params.store().values().len() {
            return Err(Error::Checkpoint(
                "optimizer state does not match parameter count".into(),
            ));
        }
        write_f32s(&mut w, state.first_moment().as_slice().expect("contiguous"))?;
        write_f32s(&mut w, state.second_moment().as_slice().expect("contiguous"))?;
    }
    w.flush()?;
    Ok(())
}

fn read_exact_f32s(bytes: &[u8], count: usize) -> Vec<f32> {
    (0..count)
        .map(|i| f32::from_le_bytes([bytes[4 * i], bytes[4 * i + 1], bytes[4 * i + 2], bytes[4 * i + 3]]))
        .collect()
}

/// Loads and validates a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    BufReader::new(fs::File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() < MAGIC.len() + 12 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let header_end = 20 + header_len;
    if bytes.len() < header_end {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[20..header_end])?;

    header.model.validate().map_err(|e| {
        Error::Checkpoint(format!("invalid model configuration in header: {e}"))
    })?;

    // The header's array table must agree exactly with the layout implied
    // by the model configuration.
    let layout = header.model.layout();
    if header.arrays.len() != layout.entries().len() {
        return Err(Error::Checkpoint(format!(
            "array table lists {} tensors, architecture has {}",
            header.arrays.len(),
            layout.entries().len()
        )));
    }
    for (spec, expected) in header.arrays.iter().zip(layout.entries()) {
        if spec.name != expected.name
            || spec.shape != expected.shape
            || spec.offset != expected.offset
        {
            return Err(Error::Checkpoint(format!(
                "tensor {} has shape {:?} at offset {}, expected {:?} at {}",
                spec.name, spec.shape, spec.offset, expected.shape, expected.offset
            )));
        }
    }

    let param_count = layout.total_len();
    let float_count = if header.has_optimizer {
        3 * param_count
    } else {
        param_count
    };
    let payload = &bytes[header_end..];
    if payload.len() != float_count * 4 {
        return Err(Error::Checkpoint(format!(
            "payload is {} bytes, expected {}",
            payload.len(),
            float_count * 4
        )));
    }

    let mut params = init_params::<f32>(&header.model, 0).map_err(|e| {
        Error::Checkpoint(format!("cannot rebuild parameter storage: {e}"))
    })?;
    params
        .store_mut()
        .values_mut()
        .copy_from_slice(&read_exact_f32s(payload, param_count));

    let opt_state = if header.has_optimizer {
        let m = read_exact_f32s(&payload[param_count * 4..], param_count);
        let v = read_exact_f32s(&payload[param_count * 8..], param_count);
        Some(OptimizerState::from_parts(
            Array1::from_vec(m),
            Array1::from_vec(v),
            header.step,
        ))
    } else {
        None
    };

    if params.store().values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Checkpoint("non-finite parameter values".into()));
    }

    Ok(Checkpoint {
        model: header.model,
        sensing: header.sensing,
        train: header.train,
        step: header.step,
        params,
        opt_state,
    })
}
