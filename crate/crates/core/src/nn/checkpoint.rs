//! Self-describing JSON checkpoints: parameter tensors, Adam moments,
//! batch-norm running statistics, and the network layout they belong to.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::spec::NetworkSpec;
use super::{AdamState, NnError, Parameter};
use crate::real::Real;

pub const CHECKPOINT_VERSION: u32 = 1;

/// One named tensor. Adam moments are present for trainable parameters
/// and absent for plain buffers (running stats).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorData {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam_m: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam_v: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam_step: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// Global training step at save time.
    pub step: u64,
    /// Hash of the resolved training config, for provenance checks.
    pub config_hash: String,
    pub encoder_spec: NetworkSpec,
    pub decoder_spec: NetworkSpec,
    pub tensors: BTreeMap<String, TensorData>,
}

impl Checkpoint {
    pub fn new(
        step: u64,
        config_hash: String,
        encoder_spec: NetworkSpec,
        decoder_spec: NetworkSpec,
    ) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            step,
            config_hash,
            encoder_spec,
            decoder_spec,
            tensors: BTreeMap::new(),
        }
    }

    pub fn put_parameter<R: Real>(&mut self, p: &Parameter<R>) {
        self.tensors.insert(
            p.name.clone(),
            TensorData {
                shape: p.shape.clone(),
                data: p.data.iter().map(|v| v.to_f64()).collect(),
                adam_m: Some(p.adam.m.iter().map(|v| v.to_f64()).collect()),
                adam_v: Some(p.adam.v.iter().map(|v| v.to_f64()).collect()),
                adam_step: Some(p.adam.step),
            },
        );
    }

    pub fn put_buffer<R: Real>(&mut self, name: &str, data: &[R]) {
        self.tensors.insert(
            name.to_string(),
            TensorData {
                shape: vec![data.len()],
                data: data.iter().map(|v| v.to_f64()).collect(),
                adam_m: None,
                adam_v: None,
                adam_step: None,
            },
        );
    }

    pub fn tensor(&self, name: &str) -> Result<&TensorData, NnError> {
        self.tensors
            .get(name)
            .ok_or_else(|| NnError::MissingTensor(name.to_string()))
    }

    /// Restores a parameter (values + Adam state) by name, validating shape.
    pub fn load_parameter<R: Real>(&self, p: &mut Parameter<R>) -> Result<(), NnError> {
        let t = self.tensor(&p.name)?;
        if t.shape != p.shape {
            return Err(NnError::ShapeMismatch(format!(
                "tensor {}: checkpoint {:?} vs model {:?}",
                p.name, t.shape, p.shape
            )));
        }
        p.data = t.data.iter().map(|&v| R::from_f64(v)).collect();
        p.adam = match (&t.adam_m, &t.adam_v) {
            (Some(m), Some(v)) => AdamState {
                m: m.iter().map(|&x| R::from_f64(x)).collect(),
                v: v.iter().map(|&x| R::from_f64(x)).collect(),
                step: t.adam_step.unwrap_or(0),
            },
            _ => AdamState::zeros(p.data.len()),
        };
        Ok(())
    }

    pub fn load_buffer<R: Real>(&self, name: &str, out: &mut [R]) -> Result<(), NnError> {
        let t = self.tensor(name)?;
        if t.data.len() != out.len() {
            return Err(NnError::ShapeMismatch(format!(
                "buffer {name}: checkpoint has {} values, expected {}",
                t.data.len(),
                out.len()
            )));
        }
        for (o, &v) in out.iter_mut().zip(&t.data) {
            *o = R::from_f64(v);
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let json = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&json)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(NnError::CheckpointVersion {
                found: ck.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(ck)
    }
}
