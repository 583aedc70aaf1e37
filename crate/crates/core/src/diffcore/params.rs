use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::DiffError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockRole {
    Weight,
    Bias,
    /// Anything not produced by a layered model.
    Flat,
}

/// One contiguous `rows×cols` block of a parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub layer: usize,
    pub role: BlockRole,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Maps (layer, weight/bias) to index ranges of a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    blocks: Vec<ParamBlock>,
    len: usize,
}

impl ParamLayout {
    /// Builds a layout from `(layer, role, rows, cols)` entries laid out back to back.
    pub fn from_shapes(shapes: impl IntoIterator<Item = (usize, BlockRole, usize, usize)>) -> Self {
        let mut offset = 0;
        let blocks = shapes
            .into_iter()
            .map(|(layer, role, rows, cols)| {
                let b = ParamBlock { layer, role, offset, rows, cols };
                offset += rows * cols;
                b
            })
            .collect();
        Self { blocks, len: offset }
    }

    pub fn flat(len: usize) -> Self {
        Self::from_shapes([(0, BlockRole::Flat, 1, len)])
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn block(&self, layer: usize, role: BlockRole) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.layer == layer && b.role == role)
    }
}

/// Flat model parameters with an immutable layout descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<ParamLayout>,
}

/// Gradient with the same layout as the parameters it differentiates.
#[derive(Clone, Debug, PartialEq)]
pub struct GradVector {
    values: Vec<f64>,
    layout: Arc<ParamLayout>,
}

fn check(values: &[f64], layout: &ParamLayout) -> Result<(), DiffError> {
    if values.len() != layout.len() {
        return Err(DiffError::Dimension(format!(
            "{} values for a layout of {} parameters",
            values.len(),
            layout.len()
        )));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(DiffError::NonFiniteParameter { index: i });
    }
    Ok(())
}

impl ParamVector {
    pub fn new(layout: Arc<ParamLayout>, values: Vec<f64>) -> Result<Self, DiffError> {
        check(&values, &layout)?;
        Ok(Self { values, layout })
    }

    /// Single-block vector, handy for hand-written losses.
    pub fn flat(values: Vec<f64>) -> Result<Self, DiffError> {
        let layout = Arc::new(ParamLayout::flat(values.len()));
        Self::new(layout, values)
    }

    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        Self { values: vec![0.0; layout.len()], layout }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `self + scale·direction`, rejected when any entry becomes non-finite.
    pub fn step(&self, direction: &[f64], scale: f64) -> Result<Self, DiffError> {
        if direction.len() != self.values.len() {
            return Err(DiffError::Dimension(format!(
                "step direction has {} entries, parameters have {}",
                direction.len(),
                self.values.len()
            )));
        }
        let values: Vec<f64> = self.values.iter().zip(direction).map(|(p, d)| p + scale * d).collect();
        check(&values, &self.layout)?;
        Ok(Self { values, layout: Arc::clone(&self.layout) })
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, DiffError> {
        Self::new(Arc::clone(&self.layout), values)
    }
}

impl GradVector {
    pub fn new(layout: Arc<ParamLayout>, values: Vec<f64>) -> Result<Self, DiffError> {
        check(&values, &layout).map_err(|e| match e {
            DiffError::NonFiniteParameter { index } => DiffError::NonFiniteGradient { index },
            other => other,
        })?;
        Ok(Self { values, layout })
    }

    pub fn zeros_like(params: &ParamVector) -> Self {
        Self { values: vec![0.0; params.len()], layout: Arc::clone(&params.layout) }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `self += w·other`
    pub fn add_scaled(&mut self, other: &GradVector, w: f64) {
        assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += w * b;
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_offsets_are_contiguous() {
        let l = ParamLayout::from_shapes([
            (0, BlockRole::Weight, 1, 40),
            (0, BlockRole::Bias, 1, 40),
            (1, BlockRole::Weight, 40, 1),
        ]);
        assert_eq!(l.len(), 120);
        assert_eq!(l.block(1, BlockRole::Weight).unwrap().range(), 80..120);
    }

    #[test]
    fn rejects_length_mismatch_and_non_finite() {
        let l = Arc::new(ParamLayout::flat(2));
        assert!(matches!(ParamVector::new(l.clone(), vec![1.0]), Err(DiffError::Dimension(_))));
        assert!(matches!(
            ParamVector::new(l.clone(), vec![1.0, f64::NAN]),
            Err(DiffError::NonFiniteParameter { index: 1 })
        ));
        let p = ParamVector::new(l, vec![1.0, 2.0]).unwrap();
        assert!(p.step(&[f64::INFINITY, 0.0], 1.0).is_err());
        assert_eq!(p.step(&[1.0, 1.0], -0.5).unwrap().values(), &[0.5, 1.5]);
    }
}
