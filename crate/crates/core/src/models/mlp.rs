use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{BlockRole, Graph, ParamLayout, ParamVector, Scalar, ScalarFn, Var};
use crate::taskgen::Point;

use super::ModelError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub(crate) fn apply<T: Scalar>(self, g: &mut Graph<T>, x: Var) -> Var {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
        }
    }
}

/// Fully connected network; hidden layers use `activation`, the output layer is linear.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation) -> Result<Self, ModelError> {
        let spec = Self { layer_widths, activation };
        spec.validate()?;
        Ok(spec)
    }

    /// 1→40→40→1 with ReLU, the sinusoid regressor.
    pub fn sinusoid() -> Self {
        Self { layer_widths: vec![1, 40, 40, 1], activation: Activation::Relu }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layer_widths.len() < 2 {
            return Err(ModelError::Spec("an MLP needs at least input and output widths".into()));
        }
        if self.layer_widths.contains(&0) {
            return Err(ModelError::Spec("layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().expect("validated")
    }

    pub fn param_count(&self) -> usize {
        self.layer_widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::from_shapes(layer_shapes(&self.layer_widths, 0))
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let layout = Arc::new(self.layout());
        let values = init_values(&layout, rng);
        ParamVector::new(layout, values).expect("initial values are finite")
    }

    /// Forward pass for an n×input_dim node.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, params: Var, input: Var) -> Var {
        dense_stack(g, params, input, &self.layer_widths, 0, self.activation)
    }
}

pub(crate) fn layer_shapes(widths: &[usize], first_layer: usize) -> Vec<(usize, BlockRole, usize, usize)> {
    widths
        .windows(2)
        .enumerate()
        .flat_map(|(i, w)| [(first_layer + i, BlockRole::Weight, w[0], w[1]), (first_layer + i, BlockRole::Bias, 1, w[1])])
        .collect()
}

/// Uniform in ±sqrt(6/(fan_in+fan_out)) for every block of a layer, biases included.
pub(crate) fn init_values<R: Rng + ?Sized>(layout: &ParamLayout, rng: &mut R) -> Vec<f64> {
    let mut values = vec![0.0; layout.len()];
    for block in layout.blocks() {
        let (fan_in, fan_out) = match block.role {
            BlockRole::Weight => (block.rows, block.cols),
            _ => {
                let w = layout.block(block.layer, BlockRole::Weight).expect("bias without weight");
                (w.rows, w.cols)
            }
        };
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in &mut values[block.range()] {
            *v = rng.random_range(-s..=s);
        }
    }
    values
}

/// Dense layers `widths[0]→…→widths[n]` reading weights from `params` starting at `offset`.
pub(crate) fn dense_stack<T: Scalar>(
    g: &mut Graph<T>,
    params: Var,
    input: Var,
    widths: &[usize],
    mut offset: usize,
    activation: Activation,
) -> Var {
    let mut h = input;
    let n_layers = widths.len() - 1;
    for (i, w) in widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let weight = g.slice(params, offset, fan_in, fan_out);
        offset += fan_in * fan_out;
        let bias = g.slice(params, offset, 1, fan_out);
        offset += fan_out;
        let z = g.matmul(h, weight);
        h = g.add_row(z, bias);
        if i + 1 < n_layers {
            h = activation.apply(g, h);
        }
    }
    h
}

/// Mean squared error of an MLP regressor over a point set.
#[derive(Clone, Debug)]
pub struct MlpTaskLoss<'a> {
    spec: &'a MlpSpec,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl<'a> MlpTaskLoss<'a> {
    pub fn new(spec: &'a MlpSpec, data: &[Point]) -> Result<Self, ModelError> {
        if data.is_empty() {
            return Err(ModelError::EmptyData("task loss"));
        }
        if spec.input_dim() != 1 || spec.output_dim() != 1 {
            return Err(ModelError::Spec(format!(
                "point-set regression needs a 1→…→1 network, got {:?}",
                spec.layer_widths
            )));
        }
        Ok(Self { spec, xs: data.iter().map(|p| p.x).collect(), ys: data.iter().map(|p| p.y).collect() })
    }
}

impl ScalarFn for MlpTaskLoss<'_> {
    fn build<T: Scalar>(&self, g: &mut Graph<T>, params: Var) -> Var {
        let n = self.xs.len();
        let x = g.constant_f64(n, 1, &self.xs);
        let y = g.constant_f64(n, 1, &self.ys);
        let pred = self.spec.forward(g, params, x);
        let r = g.sub(pred, y);
        let sq = g.square(r);
        g.mean(sq)
    }
}

/// `mlp_task_loss`: MSE loss over `data`.
pub fn mlp_task_loss<'a>(spec: &'a MlpSpec, data: &[Point]) -> Result<MlpTaskLoss<'a>, ModelError> {
    MlpTaskLoss::new(spec, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sinusoid_param_count() {
        // (1+1)·40 + (40+1)·40 + (40+1)·1
        assert_eq!(MlpSpec::sinusoid().param_count(), 1761);
        assert_eq!(MlpSpec::sinusoid().layout().len(), 1761);
    }

    #[test]
    fn init_respects_per_layer_bounds() {
        let spec = MlpSpec::sinusoid();
        let p = spec.init(&mut ChaCha8Rng::seed_from_u64(3));
        let layout = p.layout().clone();
        for b in layout.blocks() {
            let w = layout.block(b.layer, BlockRole::Weight).unwrap();
            let s = (6.0 / (w.rows + w.cols) as f64).sqrt();
            assert!(p.values()[b.range()].iter().all(|v| v.abs() <= s));
        }
    }

    #[test]
    fn zero_network_losses() {
        let spec = MlpSpec::sinusoid();
        let zero = ParamVector::zeros(Arc::new(spec.layout()));
        let loss = |pts: &[Point]| diffcore::value(&mlp_task_loss(&spec, pts).unwrap(), &zero).unwrap();
        assert_eq!(loss(&[Point::new(0.0, 0.0)]), 0.0);
        assert_eq!(loss(&[Point::new(1.0, 2.0)]), 4.0);
        assert_eq!(loss(&[Point::new(1.0, 1.0), Point::new(1.0, -1.0)]), 1.0);
    }

    #[test]
    fn empty_data_is_rejected() {
        let spec = MlpSpec::sinusoid();
        assert!(matches!(mlp_task_loss(&spec, &[]), Err(ModelError::EmptyData(_))));
    }
}
