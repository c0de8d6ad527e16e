use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Hyperparams, Transformer, TransformerParams};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::tokenizer::BpeModel;
use crate::trainer::OptimizerState;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NORMACKP";
pub const CHECKPOINT_VERSION: u32 = 1;

const M_PREFIX: &str = "adam.m/";
const V_PREFIX: &str = "adam.v/";

/// Which tokenizer file a model was trained with.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerRef {
    pub path: String,
    pub sha256: String,
}

impl TokenizerRef {
    pub fn of(model: &BpeModel, path: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            sha256: model.content_hash(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingMeta {
    pub step: u64,
    pub epoch: usize,
    pub best_val_loss: Option<f64>,
    pub seed: u64,
    /// Free-form labels such as the training direction or dataset tags.
    pub labels: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub hyperparams: Hyperparams,
    pub tokenizer: TokenizerRef,
    pub meta: TrainingMeta,
    pub params: TransformerParams<f32>,
    pub optimizer: Option<OptimizerState>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    hyperparams: Hyperparams,
    tokenizer: TokenizerRef,
    meta: TrainingMeta,
    optimizer_step: Option<u64>,
    tensors: Vec<TensorEntry>,
}

fn corrupt(what: impl Into<String>) -> Error {
    Error::invalid(format!("corrupted checkpoint: {}", what.into()))
}

impl Checkpoint {
    pub fn new(model: &Transformer<f32>, tokenizer: TokenizerRef, meta: TrainingMeta) -> Self {
        Self {
            hyperparams: model.hyperparams().clone(),
            tokenizer,
            meta,
            params: model.params().clone(),
            optimizer: None,
        }
    }

    pub fn model(&self) -> Result<Transformer<f32>> {
        Transformer::from_params(self.hyperparams.clone(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors: Vec<(String, &Tensor<f32>)> = self
            .params
            .names()
            .iter()
            .cloned()
            .zip(self.params.tensors())
            .collect();
        if let Some(opt) = &self.optimizer {
            for (prefix, moments) in [(M_PREFIX, &opt.m), (V_PREFIX, &opt.v)] {
                for (name, t) in self.params.names().iter().zip(moments) {
                    tensors.push((format!("{prefix}{name}"), t));
                }
            }
        }
        let mut offset = 0u64;
        let entries = tensors
            .iter()
            .map(|(name, t)| {
                let e = TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += 4 * t.len() as u64;
                e
            })
            .collect();
        let header = Header {
            hyperparams: self.hyperparams.clone(),
            tokenizer: self.tokenizer.clone(),
            meta: self.meta.clone(),
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("missing NORMACKP magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                what: "checkpoint",
                found: version.to_string(),
                expected: CHECKPOINT_VERSION.to_string(),
            });
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let payload_start = 16usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| corrupt("header length exceeds file size"))?;
        let header: Header = serde_json::from_slice(&bytes[16..payload_start])
            .map_err(|e| corrupt(format!("header: {e}")))?;
        let payload = &bytes[payload_start..];

        let mut by_name = BTreeMap::new();
        let mut expected_end = 0u64;
        for e in &header.tensors {
            let count: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start
                .checked_add(4 * count)
                .filter(|&end| end <= payload.len())
                .ok_or_else(|| corrupt(format!("truncated payload for tensor {}", e.name)))?;
            let data = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            by_name.insert(e.name.clone(), Tensor::new(&e.shape, data)?);
            expected_end = expected_end.max(end as u64);
        }
        if expected_end as usize != payload.len() {
            return Err(corrupt("trailing bytes after tensor payload"));
        }

        let mut take = |name: &str| {
            by_name
                .remove(name)
                .ok_or_else(|| corrupt(format!("missing tensor {name}")))
        };
        let hp = header.hyperparams;
        let template = TransformerParams::<f32>::init_shapes(&hp)?;
        let mut tensors = Vec::with_capacity(template.len());
        for (name, _) in &template {
            tensors.push(take(name)?);
        }
        let names: Vec<String> = template.into_iter().map(|(n, _)| n).collect();
        let optimizer = match header.optimizer_step {
            None => None,
            Some(step) => {
                let m = names.iter().map(|n| take(&format!("{M_PREFIX}{n}"))).collect::<Result<_>>()?;
                let v = names.iter().map(|n| take(&format!("{V_PREFIX}{n}"))).collect::<Result<_>>()?;
                Some(OptimizerState { step, m, v })
            }
        };
        let params = TransformerParams::from_parts(names, tensors);
        // Validates shapes and finiteness against the hyperparameters.
        Transformer::from_params(hp.clone(), params.clone())?;
        Ok(Self {
            hyperparams: hp,
            tokenizer: header.tokenizer,
            meta: header.meta,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::InvalidInput(msg) => Error::InvalidInput(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Load and confirm that `tokenizer` is the one the model was trained with.
    pub fn load_with_tokenizer(path: impl AsRef<Path>, tokenizer: &BpeModel) -> Result<Self> {
        let ckpt = Self::load(path)?;
        ckpt.verify_tokenizer(tokenizer)?;
        Ok(ckpt)
    }

    pub fn verify_tokenizer(&self, tokenizer: &BpeModel) -> Result<()> {
        let actual = tokenizer.content_hash();
        if actual != self.tokenizer.sha256 {
            return Err(Error::TokenizerHash {
                expected: self.tokenizer.sha256.clone(),
                actual,
            });
        }
        Ok(())
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn content_hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }
}
