use std::sync::Arc;

use super::{hessian_vector_product, value_and_gradient, DiffError, GradMode, GradVector, ParamVector, ScalarFn};

/// Result of differentiating `outer(θ − λ∇inner(θ))`.
#[derive(Clone, Debug)]
pub struct MetaGradient {
    pub grad: GradVector,
    pub adapted: ParamVector,
    pub inner_value: f64,
    pub outer_value: f64,
}

/// The first half of a meta-gradient: one inner step and the outer loss at
/// the adapted point. Enough to rank tasks before paying for the
/// second-order term.
#[derive(Clone, Debug)]
pub struct AdaptedPoint {
    pub adapted: ParamVector,
    pub inner_value: f64,
    pub outer_value: f64,
    pub outer_grad: GradVector,
}

fn check_lr(inner_lr: f64) -> Result<(), DiffError> {
    if inner_lr > 0.0 && inner_lr.is_finite() {
        Ok(())
    } else {
        Err(DiffError::InvalidInnerLr(inner_lr))
    }
}

/// θ' = θ − λ∇inner(θ), then the outer loss and its gradient at θ'.
pub fn adapt<I: ScalarFn, O: ScalarFn>(
    inner: &I,
    outer: &O,
    params: &ParamVector,
    inner_lr: f64,
) -> Result<AdaptedPoint, DiffError> {
    check_lr(inner_lr)?;
    let (inner_value, inner_grad) = value_and_gradient(inner, params)?;
    let adapted = params.step(inner_grad.values(), -inner_lr).map_err(|_| DiffError::NonFiniteAdapted)?;
    let (outer_value, outer_grad) = value_and_gradient(outer, &adapted)?;
    Ok(AdaptedPoint { adapted, inner_value, outer_value, outer_grad })
}

impl AdaptedPoint {
    /// Completes the meta-gradient. In exact mode this is
    /// `g − λ∇²inner(θ)·g` with `g = ∇outer(θ')`.
    pub fn meta_gradient<I: ScalarFn>(
        self,
        inner: &I,
        params: &ParamVector,
        inner_lr: f64,
        mode: GradMode,
    ) -> Result<MetaGradient, DiffError> {
        let grad = match mode {
            GradMode::FirstOrder => self.outer_grad,
            GradMode::Exact => {
                let g = self.outer_grad.values();
                let (_, hg) = hessian_vector_product(inner, params, g)?;
                let values = g.iter().zip(&hg).map(|(gi, hi)| gi - inner_lr * hi).collect();
                GradVector::new(Arc::clone(params.layout()), values)?
            }
        };
        Ok(MetaGradient {
            grad,
            adapted: self.adapted,
            inner_value: self.inner_value,
            outer_value: self.outer_value,
        })
    }
}

/// Meta-gradient through exactly one inner gradient step.
pub fn meta_gradient<I: ScalarFn, O: ScalarFn>(
    inner: &I,
    outer: &O,
    params: &ParamVector,
    inner_lr: f64,
    mode: GradMode,
) -> Result<MetaGradient, DiffError> {
    adapt(inner, outer, params, inner_lr)?.meta_gradient(inner, params, inner_lr, mode)
}
