//! Minimal tensor and reverse-mode differentiation core: exactly the ops
//! the pitch model needs (1-D conv, transposed conv, batch norm, ReLU,
//! max-pool, dense, sigmoid, elementwise losses, Adam).

mod adam;
mod checkpoint;
mod init;
mod spec;
mod tape;

pub use adam::{adam_step, AdamParams, AdamState};
pub use checkpoint::{Checkpoint, TensorData, CHECKPOINT_VERSION};
pub use init::he_uniform;
pub use spec::{LayerSpec, NetworkSpec};
pub use tape::{huber_value, LossKind, NodeId, RunningStats, Tape};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("checkpoint version {found} unsupported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("checkpoint missing tensor {0}")]
    MissingTensor(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

/// A trainable tensor with its Adam state.
#[derive(Debug, Clone)]
pub struct Parameter<R: crate::real::Real> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<R>,
    pub adam: AdamState<R>,
}

impl<R: crate::real::Real> Parameter<R> {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<R>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        let n = data.len();
        Self {
            name: name.into(),
            shape,
            data,
            adam: AdamState::zeros(n),
        }
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(name, shape, vec![R::ZERO; n])
    }

    /// Registers this parameter as a differentiable leaf on a tape.
    pub fn leaf(&self, tape: &mut Tape<R>) -> NodeId {
        tape.leaf(self.shape.clone(), self.data.clone(), true)
    }
}
