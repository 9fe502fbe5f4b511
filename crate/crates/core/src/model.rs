//! Feed-forward feature extractor with a linear softmax head.
//!
//! Hidden layers apply the configured activation; the last extractor layer is
//! linear and its output is the feature vector the center terms act on.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::dataset::MiniBatch;
use crate::error::{Error, Result};
use crate::loss::{heterogeneity_loss, CenterStore, Head, LossBreakdown, LossWeights};
use crate::math;
use crate::matrix::Matrix;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => math::tanh(x),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Layer widths of a model.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelShape {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub n_classes: usize,
    pub activation: Activation,
}

/// Fully-connected layer, `weight` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weight: Matrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut z = x.matmul_t(&self.weight)?;
        for i in 0..z.rows() {
            for (v, b) in z.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(z)
    }
}

/// Extractor layers followed by the classifier head. The same type doubles as
/// the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Hidden layers, then the linear feature layer.
    pub layers: Vec<Dense>,
    pub head: Head,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub features: Matrix,
    pub logits: Matrix,
    pub probabilities: Matrix,
}

/// Layer outputs kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `outputs[0]` is the input; `outputs[i + 1]` is the output of layer `i`.
    outputs: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn features(&self) -> &Matrix {
        self.outputs.last().expect("trace holds at least the input")
    }
}

impl ModelParams {
    pub fn zeros(shape: &ModelShape) -> Self {
        let mut widths = vec![shape.input_dim];
        widths.extend_from_slice(&shape.hidden);
        widths.push(shape.feature_dim);
        ModelParams {
            layers: widths.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            head: Head::zeros(shape.n_classes, shape.feature_dim),
            activation: shape.activation,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(shape: &ModelShape, seed: u64) -> Self {
        let mut params = ModelParams::zeros(shape);
        let mut rng = seed::rng(seed);
        let weights = params
            .layers
            .iter_mut()
            .map(|l| &mut l.weight)
            .chain(core::iter::once(&mut params.head.weight));
        for w in weights {
            let limit = math::sqrt(6.0 / (w.rows() + w.cols()) as f64);
            for v in w.as_mut_slice() {
                *v = rng.random_range(-limit..limit);
            }
        }
        params
    }

    pub fn shape(&self) -> ModelShape {
        let first = &self.layers[0];
        ModelShape {
            input_dim: first.weight.cols(),
            hidden: self.layers[..self.layers.len() - 1]
                .iter()
                .map(|l| l.weight.rows())
                .collect(),
            feature_dim: self.feature_dim(),
            n_classes: self.head.n_classes(),
            activation: self.activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn feature_dim(&self) -> usize {
        self.head.dim()
    }

    pub fn n_classes(&self) -> usize {
        self.head.n_classes()
    }

    /// Named parameter blocks as `(name, rows, cols, values)`; biases are `1 × n`.
    pub fn blocks(&self) -> Vec<(String, usize, usize, &[f64])> {
        let mut out = Vec::with_capacity(2 * self.layers.len() + 2);
        for (i, l) in self.layers.iter().enumerate() {
            out.push((
                format!("layer{i}.weight"),
                l.weight.rows(),
                l.weight.cols(),
                l.weight.as_slice(),
            ));
            out.push((format!("layer{i}.bias"), 1, l.bias.len(), l.bias.as_slice()));
        }
        out.push((
            String::from("head.weight"),
            self.head.weight.rows(),
            self.head.weight.cols(),
            self.head.weight.as_slice(),
        ));
        out.push((String::from("head.bias"), 1, self.head.bias.len(), self.head.bias.as_slice()));
        out
    }

    fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .chain([self.head.weight.as_mut_slice(), self.head.bias.as_mut_slice()])
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.3.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, _, _, v) in self.blocks() {
            out.extend_from_slice(v);
        }
        out
    }

    /// Overwrites all parameters from a flat vector laid out as [`Self::to_flat`].
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(Error::ShapeMismatch {
                what: "flat parameter length",
                expected: n,
                found: flat.len(),
            });
        }
        let mut rest = flat;
        for s in self.slices_mut() {
            let (head, tail) = rest.split_at(s.len());
            s.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.3.iter().all(|v| v.is_finite()))
    }

    pub fn forward_trace(&self, inputs: &Matrix) -> Result<ForwardTrace> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                what: "input width",
                expected: self.input_dim(),
                found: inputs.cols(),
            });
        }
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(inputs.clone());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.apply(outputs.last().unwrap())?;
            if i < last {
                z.as_mut_slice()
                    .iter_mut()
                    .for_each(|v| *v = self.activation.apply(*v));
            }
            outputs.push(z);
        }
        Ok(ForwardTrace { outputs })
    }

    pub fn forward(&self, inputs: &Matrix) -> Result<ForwardOutput> {
        let trace = self.forward_trace(inputs)?;
        let features = trace.outputs.into_iter().last().unwrap();
        let logits = self.head.logits(&features)?;
        let probabilities = softmax_rows(&logits);
        Ok(ForwardOutput {
            features,
            logits,
            probabilities,
        })
    }

    /// Propagates a gradient with respect to the features back through the
    /// extractor, filling the layer entries of `grads`.
    pub fn backprop_features(&self, trace: &ForwardTrace, grad_features: &Matrix, grads: &mut ModelParams) {
        let last = self.layers.len() - 1;
        let mut g = grad_features.clone();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let out = &trace.outputs[i + 1];
            let input = &trace.outputs[i];
            if i < last {
                for (gv, &y) in g.as_mut_slice().iter_mut().zip(out.as_slice()) {
                    *gv *= self.activation.derivative_from_output(y);
                }
            }
            let gl = &mut grads.layers[i];
            for r in 0..g.rows() {
                let gr = g.row(r);
                let x = input.row(r);
                for (o, &go) in gr.iter().enumerate() {
                    gl.bias[o] += go;
                    let gw = gl.weight.row_mut(o);
                    for (w, &xv) in gw.iter_mut().zip(x) {
                        *w += go * xv;
                    }
                }
            }
            if i > 0 {
                let mut prev = Matrix::zeros(g.rows(), layer.weight.cols());
                for r in 0..g.rows() {
                    let gr = g.row(r);
                    let pr = prev.row_mut(r);
                    for (o, &go) in gr.iter().enumerate() {
                        for (p, &w) in pr.iter_mut().zip(layer.weight.row(o)) {
                            *p += go * w;
                        }
                    }
                }
                g = prev;
            }
        }
    }
}

/// Loss and gradients for one mini-batch, chained through the extractor.
#[derive(Debug, Clone)]
pub struct Backward {
    pub loss: LossBreakdown,
    pub model: ModelParams,
    pub centers: CenterStore,
}

/// Runs the forward pass on `inputs` (rows aligned with `batch`) and returns
/// the heterogeneity loss with gradients for every parameter group.
pub fn backward(
    params: &ModelParams,
    centers: &CenterStore,
    inputs: &Matrix,
    batch: &MiniBatch,
    subject_class: &[usize],
    weights: &LossWeights,
) -> Result<Backward> {
    let trace = params.forward_trace(inputs)?;
    let loss = heterogeneity_loss(batch, trace.features(), &params.head, centers, subject_class, weights)?;
    let mut grads = ModelParams::zeros(&params.shape());
    grads.head.weight = loss.grads.head_weight.clone();
    grads.head.bias = loss.grads.head_bias.clone();
    params.backprop_features(&trace, &loss.grads.features, &mut grads);
    let center_grads = CenterStore {
        class_centers: loss.grads.class_centers.clone(),
        subject_centers: loss.grads.subject_centers.clone(),
    };
    Ok(Backward {
        loss,
        model: grads,
        centers: center_grads,
    })
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = math::exp(*v - max);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(hidden: &[usize]) -> ModelShape {
        ModelShape {
            input_dim: 3,
            hidden: hidden.to_vec(),
            feature_dim: 4,
            n_classes: 2,
            activation: Activation::Tanh,
        }
    }

    #[test]
    fn zero_head_is_uniform() {
        let mut p = ModelParams::init(&shape(&[5]), 1);
        p.head = Head::zeros(2, 4);
        let out = p.forward(&Matrix::from_rows(&[[1.0, -2.0, 0.5]]).unwrap()).unwrap();
        assert_eq!(out.probabilities.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn identity_extractor_passes_inputs_through() {
        let s = ModelShape {
            input_dim: 3,
            hidden: vec![3],
            feature_dim: 3,
            n_classes: 2,
            activation: Activation::Identity,
        };
        let mut p = ModelParams::zeros(&s);
        for l in &mut p.layers {
            l.weight = Matrix::identity(3);
        }
        let x = Matrix::from_rows(&[[0.25, -1.5, 3.0], [7.0, 0.0, -0.125]]).unwrap();
        assert_eq!(p.forward(&x).unwrap().features, x);
    }

    #[test]
    fn flat_round_trip() {
        let p = ModelParams::init(&shape(&[5, 6]), 9);
        let flat = p.to_flat();
        assert_eq!(flat.len(), p.num_params());
        assert_eq!(p.num_params(), 3 * 5 + 5 + 5 * 6 + 6 + 6 * 4 + 4 + 4 * 2 + 2);
        let mut q = ModelParams::zeros(&p.shape());
        q.assign_flat(&flat).unwrap();
        assert_eq!(p, q);
        assert!(q.assign_flat(&flat[1..]).is_err());
    }

    #[test]
    fn input_width_checked() {
        let p = ModelParams::init(&shape(&[]), 0);
        assert!(matches!(
            p.forward(&Matrix::zeros(1, 2)),
            Err(Error::ShapeMismatch { what: "input width", .. })
        ));
    }
}
