//! Regression MLP and conditional neural process, both expressed over the
//! differentiation graph.

mod checkpoint;
mod cnp;
mod mlp;

use std::io;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{self, DiffError, Graph, Matrix, ParamLayout, ParamVector};

pub use checkpoint::{sidecar_path, Checkpoint, FORMAT_VERSION, MAGIC};
pub use cnp::{cnp_forward, cnp_task_loss, gaussian_nll, CnpPrediction, CnpSpec, CnpTaskLoss, DEFAULT_VARIANCE_FLOOR};
pub use mlp::{mlp_task_loss, Activation, MlpSpec, MlpTaskLoss};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("{0} must not be empty")]
    EmptyData(&'static str),
    #[error("parameter vector has {got} entries, model expects {expected}")]
    ParamCount { expected: usize, got: usize },
    #[error("input has {got} columns, model expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("operation not supported for this model kind: {0}")]
    WrongKind(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Mlp(MlpSpec),
    Cnp(CnpSpec),
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            ModelSpec::Mlp(m) => m.validate(),
            ModelSpec::Cnp(c) => c.validate(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            ModelSpec::Mlp(m) => m.param_count(),
            ModelSpec::Cnp(c) => c.param_count(),
        }
    }

    pub fn layout(&self) -> ParamLayout {
        match self {
            ModelSpec::Mlp(m) => m.layout(),
            ModelSpec::Cnp(c) => c.layout(),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        match self {
            ModelSpec::Mlp(m) => m.init(rng),
            ModelSpec::Cnp(c) => c.init(rng),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelSpec::Mlp(_) => "mlp",
            ModelSpec::Cnp(_) => "cnp",
        }
    }
}

/// Forward pass of an MLP on each row of `inputs`.
pub fn evaluate(model: &ModelSpec, params: &ParamVector, inputs: &Matrix) -> Result<Matrix, ModelError> {
    let ModelSpec::Mlp(spec) = model else {
        return Err(ModelError::WrongKind("evaluate needs an MLP; use cnp_forward for CNPs"));
    };
    spec.validate()?;
    if params.len() != spec.param_count() {
        return Err(ModelError::ParamCount { expected: spec.param_count(), got: params.len() });
    }
    if inputs.cols() != spec.input_dim() {
        return Err(ModelError::InputDim { expected: spec.input_dim(), got: inputs.cols() });
    }
    let mut g = Graph::<f64>::new();
    let p = g.constant(diffcore::Tensor::from_vec(1, params.len(), params.values().to_vec()));
    let x = g.constant(inputs.clone());
    let out = spec.forward(&mut g, p, x);
    if let Some(nf) = g.non_finite() {
        return Err(DiffError::NonFinite { primitive: nf.primitive, node: nf.node }.into());
    }
    Ok(g.value(out).clone())
}
