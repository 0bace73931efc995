//! Versioned model checkpoint in the safetensors container.
//!
//! Layout: every parameter array is stored as an `F64` tensor under its
//! parameter name (e.g. `time.layer0.attn.query.weight`) with its shape. The
//! time scale is stored exactly as the 2-element tensor `meta.time_scale`
//! (`[t_min, t_max]`). String metadata holds:
//!
//! | key | value |
//! |---|---|
//! | `format` | `cliptime-checkpoint` |
//! | `format_version` | `1` |
//! | `encoder_config` | JSON object |
//! | `model_config` | JSON object |
//! | `time_scale` | JSON object (informational; the tensor is authoritative) |
//! | `vocabulary` | JSON array of tokens, index = token id |
//! | `epoch` | integer |
//! | `val_loss` | number or `null` |
//!
//! Any safetensors reader can load the arrays without this crate.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};

use crate::encoders::{EncoderConfig, Vocabulary};
use crate::error::{Error, Result};
use crate::heads::ModelConfig;
use crate::io::write_atomic;
use crate::model::Model;
use crate::training::TimeScale;

pub const FORMAT: &str = "cliptime-checkpoint";
pub const FORMAT_VERSION: &str = "1";
const TIME_SCALE_TENSOR: &str = "meta.time_scale";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub time_scale: TimeScale,
    pub epoch: usize,
    pub val_loss: Option<f64>,
}

fn to_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn from_bytes(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect()
}

/// Rewrite the JSON header with sorted keys. The container serializes it from
/// hash maps, so without this two identical models give different files.
fn canonical_header(bytes: Vec<u8>) -> Result<Vec<u8>> {
    let n = u64::from_le_bytes(bytes[..8].try_into().expect("length prefix")) as usize;
    let header: serde_json::Value =
        serde_json::from_slice(&bytes[8..8 + n]).map_err(|e| bad(format!("header: {e}")))?;
    let mut text = serde_json::to_string(&header).expect("header serializes");
    while !text.len().is_multiple_of(8) {
        text.push(' ');
    }
    let mut out = Vec::with_capacity(bytes.len());
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&bytes[8 + n..]);
    Ok(out)
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("config serializes")
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buffers: Vec<(String, Vec<usize>, Vec<u8>)> = self
            .model
            .params
            .specs()
            .iter()
            .map(|s| (s.name.clone(), s.shape.clone(), to_bytes(self.model.params.get(s.id))))
            .collect();
        buffers.push((
            TIME_SCALE_TENSOR.to_string(),
            vec![2],
            to_bytes(&[self.time_scale.t_min, self.time_scale.t_max]),
        ));
        let views = buffers
            .iter()
            .map(|(name, shape, data)| {
                TensorView::new(Dtype::F64, shape.clone(), data)
                    .map(|v| (name.clone(), v))
                    .map_err(|e| bad(format!("tensor {name}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut meta = HashMap::new();
        meta.insert("format".to_string(), FORMAT.to_string());
        meta.insert("format_version".to_string(), FORMAT_VERSION.to_string());
        meta.insert("encoder_config".to_string(), json(&self.model.encoder_cfg));
        meta.insert("model_config".to_string(), json(&self.model.model_cfg));
        meta.insert("time_scale".to_string(), json(&self.time_scale));
        meta.insert("vocabulary".to_string(), json(&self.model.vocab.tokens()));
        meta.insert("epoch".to_string(), self.epoch.to_string());
        meta.insert("val_loss".to_string(), json(&self.val_loss));
        let bytes = safetensors::serialize(views, Some(meta)).map_err(|e| bad(e.to_string()))?;
        canonical_header(bytes)
    }

    /// Write atomically (temporary file + rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| bad(e.to_string()))?;
        let meta = header
            .metadata()
            .as_ref()
            .ok_or_else(|| bad("missing metadata"))?;
        let get = |k: &str| meta.get(k).ok_or_else(|| bad(format!("missing metadata key {k}")));
        if get("format")? != FORMAT {
            return Err(bad("not a cliptime checkpoint"));
        }
        if get("format_version")? != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {}", get("format_version")?)));
        }
        let parse = |k: &str| -> Result<serde_json::Value> {
            serde_json::from_str(get(k)?).map_err(|e| bad(format!("{k}: {e}")))
        };
        let encoder_cfg: EncoderConfig =
            serde_json::from_value(parse("encoder_config")?).map_err(|e| bad(format!("encoder_config: {e}")))?;
        let model_cfg: ModelConfig =
            serde_json::from_value(parse("model_config")?).map_err(|e| bad(format!("model_config: {e}")))?;
        let tokens: Vec<String> =
            serde_json::from_value(parse("vocabulary")?).map_err(|e| bad(format!("vocabulary: {e}")))?;
        let vocab = Vocabulary::from_tokens(tokens)?;
        let epoch: usize = get("epoch")?.parse().map_err(|_| bad("epoch"))?;
        let val_loss: Option<f64> =
            serde_json::from_value(parse("val_loss")?).map_err(|e| bad(format!("val_loss: {e}")))?;

        let tensors = SafeTensors::deserialize(bytes).map_err(|e| bad(e.to_string()))?;
        let read = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
            let t = tensors
                .tensor(name)
                .map_err(|_| bad(format!("missing tensor {name}")))?;
            if t.dtype() != Dtype::F64 {
                return Err(bad(format!("tensor {name} has dtype {:?}, expected F64", t.dtype())));
            }
            if t.shape() != shape {
                return Err(bad(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    shape
                )));
            }
            Ok(from_bytes(t.data()))
        };

        let mut model = Model::new(encoder_cfg, model_cfg, vocab, 0)?;
        let specs = model.params.specs().to_vec();
        for spec in &specs {
            let values = read(&spec.name, &spec.shape)?;
            model.params.get_mut(spec.id).copy_from_slice(&values);
        }
        let expected = specs.len() + 1;
        if tensors.len() != expected {
            return Err(bad(format!("expected {expected} tensors, found {}", tensors.len())));
        }
        let ts = read(TIME_SCALE_TENSOR, &[2])?;
        let time_scale = TimeScale::new(ts[0], ts[1]).map_err(|e| bad(e.to_string()))?;
        Ok(Self {
            model,
            time_scale,
            epoch,
            val_loss,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
