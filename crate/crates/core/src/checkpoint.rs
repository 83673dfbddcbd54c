//! Versioned binary container for model parameters and training state.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "FANCKPT\0"
//! version  u32      currently 1
//! hlen     u64      byte length of the header
//! header   hlen     UTF-8 JSON: kind, epoch, config, rng, relations,
//!                   tokens, log, tensors [{name, shape}]
//! payload           f64 values of each tensor in header order, row-major
//! ```
//!
//! Floats in the header round-trip exactly, so a loaded checkpoint
//! continues training bit-for-bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aligner::AlignerModel;
use crate::corpus::{RelationVocab, TokenVocab};
use crate::error::{FanError, Result};
use crate::miner::FilterModel;
use crate::numerics::{ParamSet, Tensor};
use crate::trainer::{RngState, StepLog, TrainConfig, TrainLog, TrainerState};

pub const MAGIC: &[u8; 8] = b"FANCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Filter,
    Aligner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    epoch: usize,
    config: TrainConfig,
    rng: Option<RngState>,
    relations: RelationVocab,
    tokens: TokenVocab,
    log: Vec<StepLog>,
    tensors: Vec<TensorMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub epoch: usize,
    pub config: TrainConfig,
    pub rng: Option<RngState>,
    pub relations: RelationVocab,
    pub tokens: TokenVocab,
    pub log: Vec<StepLog>,
    pub tensors: Vec<(String, Tensor)>,
}

fn snapshot<P: ParamSet>(model: &P) -> Vec<(String, Tensor)> {
    model.params().into_iter().map(|(n, p)| (n, p.value.clone())).collect()
}

impl Checkpoint {
    pub fn filter(model: &FilterModel, config: &TrainConfig, relations: &RelationVocab, tokens: &TokenVocab) -> Self {
        Checkpoint {
            kind: ModelKind::Filter,
            epoch: config.filter_epochs,
            config: config.clone(),
            rng: None,
            relations: relations.clone(),
            tokens: tokens.clone(),
            log: Vec::new(),
            tensors: snapshot(model),
        }
    }

    pub fn aligner(state: &TrainerState, relations: &RelationVocab, tokens: &TokenVocab) -> Self {
        Checkpoint {
            kind: ModelKind::Aligner,
            epoch: state.epoch,
            config: state.config.clone(),
            rng: Some(state.rng.clone()),
            relations: relations.clone(),
            tokens: tokens.clone(),
            log: state.log.steps.clone(),
            tensors: snapshot(&state.model),
        }
    }

    fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(FanError::Format(format!(
                "checkpoint holds a {:?} model, expected {:?}",
                self.kind, kind
            )));
        }
        Ok(())
    }

    /// Copies the stored tensors into `model`; names and shapes must match exactly.
    pub fn load_into<P: ParamSet>(&self, model: &mut P) -> Result<()> {
        let mut params = model.params_mut();
        if params.len() != self.tensors.len() {
            return Err(FanError::Format(format!(
                "checkpoint has {} tensors, model expects {}",
                self.tensors.len(),
                params.len()
            )));
        }
        for ((name, p), (stored, t)) in params.iter_mut().zip(&self.tensors) {
            if name != stored || p.value.shape() != t.shape() {
                return Err(FanError::Format(format!(
                    "tensor {stored} {:?} does not fit model slot {name} {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(())
    }

    pub fn filter_model(&self) -> Result<FilterModel> {
        self.expect_kind(ModelKind::Filter)?;
        let mut model = FilterModel::zeros(&self.config.encoder, self.tokens.len());
        self.load_into(&mut model)?;
        Ok(model)
    }

    pub fn aligner_model(&self) -> Result<AlignerModel> {
        self.expect_kind(ModelKind::Aligner)?;
        let mut model = AlignerModel::zeros(&self.config.encoder, self.tokens.len(), self.relations.len());
        self.load_into(&mut model)?;
        Ok(model)
    }

    pub fn trainer_state(&self) -> Result<TrainerState> {
        let model = self.aligner_model()?;
        let rng = self
            .rng
            .clone()
            .ok_or_else(|| FanError::Format("aligner checkpoint has no RNG state".into()))?;
        Ok(TrainerState {
            model,
            config: self.config.clone(),
            epoch: self.epoch,
            log: TrainLog {
                steps: self.log.clone(),
            },
            rng,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind,
            epoch: self.epoch,
            config: self.config.clone(),
            rng: self.rng.clone(),
            relations: self.relations.clone(),
            tokens: self.tokens.clone(),
            log: self.log.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| TensorMeta {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
        let payload: usize = self.tensors.iter().map(|(_, t)| t.len() * 8).sum();
        let mut out = Vec::with_capacity(20 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |m: &str| FanError::Format(format!("checkpoint: {m}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(fail("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(fail(&format!("unsupported version {version}, expected {VERSION}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(fail("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| fail(&format!("header: {e}")))?;
        let mut rest = &body[hlen..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for meta in header.tensors {
            let n: usize = meta.shape.iter().product();
            if rest.len() < n * 8 {
                return Err(fail(&format!("truncated tensor {}", meta.name)));
            }
            let data = rest[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            rest = &rest[n * 8..];
            tensors.push((meta.name, Tensor::from_vec(&meta.shape, data)?));
        }
        if !rest.is_empty() {
            return Err(fail("trailing bytes"));
        }
        Ok(Checkpoint {
            kind: header.kind,
            epoch: header.epoch,
            config: header.config,
            rng: header.rng,
            relations: header.relations,
            tokens: header.tokens,
            log: header.log,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| FanError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| FanError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
