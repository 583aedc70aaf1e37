//! Differentiation engine.
//!
//! Losses are written once against [`Graph`] and evaluated over any
//! [`Scalar`]. Reverse mode over `f64` gives gradients; reverse mode over
//! [`Dual`] gives Hessian-vector products, which is all the exact meta-gradient
//! of a single inner step needs:
//!
//! ```text
//! d/dθ outer(θ − λ∇inner(θ)) = (I − λ∇²inner(θ)) · ∇outer(θ')
//! ```

mod graph;
mod meta;
mod params;
mod scalar;
mod tensor;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use graph::{Graph, NonFiniteNode, Var};
pub use meta::{adapt, meta_gradient, AdaptedPoint, MetaGradient};
pub use params::{BlockRole, GradVector, ParamBlock, ParamLayout, ParamVector};
pub use scalar::{Dual, Scalar};
pub use tensor::{Matrix, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value produced by primitive `{primitive}` (node {node})")]
    NonFinite { primitive: &'static str, node: usize },
    #[error("parameter {index} is not finite")]
    NonFiniteParameter { index: usize },
    #[error("gradient entry {index} is not finite")]
    NonFiniteGradient { index: usize },
    #[error("inner adaptation step produced non-finite parameters")]
    NonFiniteAdapted,
    #[error("inner learning rate must be positive and finite, got {0}")]
    InvalidInnerLr(f64),
    #[error("loss must be a 1x1 node, got {0}x{1}")]
    NonScalarLoss(usize, usize),
}

/// A scalar loss expressed over the graph primitives, generic in the number
/// type so the same definition serves values, gradients and HVPs.
pub trait ScalarFn: Sync {
    fn build<T: Scalar>(&self, graph: &mut Graph<T>, params: Var) -> Var;
}

/// How the inner step is treated when differentiating through it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradMode {
    /// Includes the second-order term through the inner step.
    #[default]
    Exact,
    /// Treats the adapted parameters as constants.
    FirstOrder,
}

fn build_loss<T: Scalar, F: ScalarFn>(loss: &F, params: Vec<T>) -> Result<(Graph<T>, Var, Var), DiffError> {
    let mut g = Graph::new();
    let n = params.len();
    let p = g.param(Tensor::from_vec(1, n, params));
    let out = loss.build(&mut g, p);
    let (r, c) = g.value(out).shape();
    if (r, c) != (1, 1) {
        return Err(DiffError::NonScalarLoss(r, c));
    }
    if let Some(nf) = g.non_finite() {
        return Err(DiffError::NonFinite { primitive: nf.primitive, node: nf.node });
    }
    Ok((g, p, out))
}

/// Loss value only.
pub fn value<F: ScalarFn>(loss: &F, params: &ParamVector) -> Result<f64, DiffError> {
    let (g, _, out) = build_loss::<f64, F>(loss, params.values().to_vec())?;
    Ok(g.scalar(out))
}

/// Loss value and its exact reverse-mode gradient.
pub fn value_and_gradient<F: ScalarFn>(loss: &F, params: &ParamVector) -> Result<(f64, GradVector), DiffError> {
    let (g, p, out) = build_loss::<f64, F>(loss, params.values().to_vec())?;
    let grad = g.gradient(out, p).into_vec();
    Ok((g.scalar(out), GradVector::new(Arc::clone(params.layout()), grad)?))
}

pub fn gradient<F: ScalarFn>(loss: &F, params: &ParamVector) -> Result<GradVector, DiffError> {
    value_and_gradient(loss, params).map(|(_, g)| g)
}

/// Gradient at `params` together with `∇²loss(params) · direction`.
pub fn hessian_vector_product<F: ScalarFn>(
    loss: &F,
    params: &ParamVector,
    direction: &[f64],
) -> Result<(GradVector, Vec<f64>), DiffError> {
    if direction.len() != params.len() {
        return Err(DiffError::Dimension(format!(
            "direction has {} entries, parameters have {}",
            direction.len(),
            params.len()
        )));
    }
    let duals = params.values().iter().zip(direction).map(|(&x, &v)| Dual::new(x, v)).collect();
    let (g, p, out) = build_loss::<Dual, F>(loss, duals)?;
    let grad = g.gradient(out, p).into_vec();
    let (re, du): (Vec<f64>, Vec<f64>) = grad.iter().map(|d| (d.re, d.du)).unzip();
    if let Some(index) = du.iter().position(|v| !v.is_finite()) {
        return Err(DiffError::NonFiniteGradient { index });
    }
    Ok((GradVector::new(Arc::clone(params.layout()), re)?, du))
}
