use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{self, Graph, ParamLayout, ParamVector, Scalar, ScalarFn, Var};
use crate::taskgen::Point;

use super::mlp::{dense_stack, init_values, layer_shapes, Activation};
use super::ModelError;

pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-6;

fn default_floor() -> f64 {
    DEFAULT_VARIANCE_FLOOR
}

/// Conditional neural process: a per-point encoder over (x, y) pairs, mean
/// aggregation into a representation `z`, and a decoder from `[z, x]` to a
/// Gaussian mean and raw variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CnpSpec {
    pub encoder_widths: Vec<usize>,
    pub decoder_widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_floor")]
    pub variance_floor: f64,
}

impl Default for CnpSpec {
    fn default() -> Self {
        Self::with_width(128)
    }
}

impl CnpSpec {
    /// Encoder 2→w→w→w, decoder (w+1)→w→w→2.
    pub fn with_width(w: usize) -> Self {
        Self {
            encoder_widths: vec![2, w, w, w],
            decoder_widths: vec![w + 1, w, w, 2],
            activation: Activation::Relu,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let (e, d) = (&self.encoder_widths, &self.decoder_widths);
        if e.len() < 2 || d.len() < 2 || e.iter().chain(d).any(|&w| w == 0) {
            return Err(ModelError::Spec("encoder and decoder need ≥2 positive widths".into()));
        }
        if e[0] != 2 {
            return Err(ModelError::Spec(format!("encoder must consume (x, y) pairs, input width is {}", e[0])));
        }
        let z = *e.last().unwrap();
        if d[0] != z + 1 {
            return Err(ModelError::Spec(format!("decoder input must be representation width + 1 = {}, got {}", z + 1, d[0])));
        }
        if *d.last().unwrap() != 2 {
            return Err(ModelError::Spec("decoder must emit mean and raw variance".into()));
        }
        if !(self.variance_floor > 0.0 && self.variance_floor.is_finite()) {
            return Err(ModelError::Spec("variance floor must be positive".into()));
        }
        Ok(())
    }

    pub fn representation_dim(&self) -> usize {
        *self.encoder_widths.last().expect("validated")
    }

    fn encoder_len(&self) -> usize {
        self.encoder_widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    pub fn param_count(&self) -> usize {
        self.encoder_len() + self.decoder_widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum::<usize>()
    }

    pub fn layout(&self) -> ParamLayout {
        let n_enc = self.encoder_widths.len() - 1;
        let mut shapes = layer_shapes(&self.encoder_widths, 0);
        shapes.extend(layer_shapes(&self.decoder_widths, n_enc));
        ParamLayout::from_shapes(shapes)
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let layout = Arc::new(self.layout());
        let values = init_values(&layout, rng);
        ParamVector::new(layout, values).expect("initial values are finite")
    }

    /// Builds predictive means and variances (both m×1) for `target_x`.
    ///
    /// Context points are aggregated in sorted (x, y) order so the result
    /// does not depend on how the caller ordered them.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, params: Var, context: &[Point], target_x: &[f64]) -> (Var, Var) {
        let mut ctx: Vec<Point> = context.to_vec();
        ctx.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
        let flat: Vec<f64> = ctx.iter().flat_map(|p| [p.x, p.y]).collect();
        let ctx_in = g.constant_f64(ctx.len(), 2, &flat);
        let r = dense_stack(g, params, ctx_in, &self.encoder_widths, 0, self.activation);
        let z = g.mean_rows(r);

        let m = target_x.len();
        let zs = g.repeat_rows(z, m);
        let tx = g.constant_f64(m, 1, target_x);
        let dec_in = g.concat_cols(zs, tx);
        let out = dense_stack(g, params, dec_in, &self.decoder_widths, self.encoder_len(), self.activation);
        let mean = g.column(out, 0);
        let raw = g.column(out, 1);
        let sp = g.softplus(raw);
        let var = g.add_const(sp, self.variance_floor);
        (mean, var)
    }
}

/// Mean Gaussian negative log-likelihood of `y` under N(mean, var), all m×1.
pub fn gaussian_nll<T: Scalar>(g: &mut Graph<T>, mean: Var, var: Var, y: Var) -> Var {
    let r = g.sub(y, mean);
    let sq = g.square(r);
    let quad = g.div(sq, var);
    let quad = g.scale(quad, 0.5);
    let lv = g.log(var);
    let lv = g.scale(lv, 0.5);
    let per_point = g.add(quad, lv);
    let m = g.mean(per_point);
    g.add_const(m, 0.5 * (2.0 * PI).ln())
}

/// Predictive distribution at the target inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct CnpPrediction {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

pub fn cnp_forward(spec: &CnpSpec, params: &ParamVector, context: &[Point], target_x: &[f64]) -> Result<CnpPrediction, ModelError> {
    spec.validate()?;
    if context.is_empty() {
        return Err(ModelError::EmptyData("context"));
    }
    if params.len() != spec.param_count() {
        return Err(ModelError::ParamCount { expected: spec.param_count(), got: params.len() });
    }
    let mut g = Graph::<f64>::new();
    let p = g.constant(diffcore::Tensor::from_vec(1, params.len(), params.values().to_vec()));
    let (mean, var) = spec.forward(&mut g, p, context, target_x);
    if let Some(nf) = g.non_finite() {
        return Err(ModelError::Diff(diffcore::DiffError::NonFinite { primitive: nf.primitive, node: nf.node }));
    }
    Ok(CnpPrediction { means: g.value(mean).data().to_vec(), variances: g.value(var).data().to_vec() })
}

/// Mean NLL of the target set given the context set.
#[derive(Clone, Debug)]
pub struct CnpTaskLoss<'a> {
    spec: &'a CnpSpec,
    context: Vec<Point>,
    target_x: Vec<f64>,
    target_y: Vec<f64>,
}

impl ScalarFn for CnpTaskLoss<'_> {
    fn build<T: Scalar>(&self, g: &mut Graph<T>, params: Var) -> Var {
        let (mean, var) = self.spec.forward(g, params, &self.context, &self.target_x);
        let y = g.constant_f64(self.target_y.len(), 1, &self.target_y);
        gaussian_nll(g, mean, var, y)
    }
}

pub fn cnp_task_loss<'a>(spec: &'a CnpSpec, context: &[Point], target: &[Point]) -> Result<CnpTaskLoss<'a>, ModelError> {
    spec.validate()?;
    if context.is_empty() {
        return Err(ModelError::EmptyData("context"));
    }
    if target.is_empty() {
        return Err(ModelError::EmptyData("target"));
    }
    Ok(CnpTaskLoss {
        spec,
        context: context.to_vec(),
        target_x: target.iter().map(|p| p.x).collect(),
        target_y: target.iter().map(|p| p.y).collect(),
    })
}
