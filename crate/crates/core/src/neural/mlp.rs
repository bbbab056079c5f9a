use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::State;
use crate::error::{shape_err, Error, Result};

/// Fully connected layer `y = W x + b`, `W` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: DMatrix::zeros(outputs, inputs),
            bias: DVector::zeros(outputs),
        }
    }

    /// Kaiming-uniform weights (`±sqrt(6 / fan_in)`) and `±1/sqrt(fan_in)` biases.
    pub fn kaiming(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let wb = (6.0 / inputs as f64).sqrt();
        let bb = 1.0 / (inputs as f64).sqrt();
        let weights = DMatrix::from_fn(outputs, inputs, |_, _| rng.random_range(-wb..wb));
        let bias = DVector::from_fn(outputs, |_, _| rng.random_range(-bb..bb));
        Self { weights, bias }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

/// Multilayer perceptron with ReLU hidden layers and a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Per-layer pre-activations and activations of a batch forward pass
/// (columns are samples).
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub(crate) activations: Vec<DMatrix<f64>>,
    pub(crate) pre: Vec<DMatrix<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &DMatrix<f64> {
        self.activations.last().expect("cache holds at least the input")
    }
}

impl Mlp {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Precondition("an MLP needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].outputs() != w[1].inputs() {
                return Err(shape_err("Mlp layer chain", w[0].outputs(), w[1].inputs()));
            }
        }
        for l in &layers {
            if l.bias.len() != l.outputs() {
                return Err(shape_err("Mlp bias", l.outputs(), l.bias.len()));
            }
        }
        Ok(Self { layers })
    }

    /// Layer sizes `[n, h_1, .., m]`.
    pub fn new_kaiming(sizes: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Precondition(format!("invalid layer sizes {sizes:?}")));
        }
        Self::from_layers(
            sizes
                .windows(2)
                .map(|w| Dense::kaiming(w[0], w[1], rng))
                .collect(),
        )
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Precondition(format!("invalid layer sizes {sizes:?}")));
        }
        Self::from_layers(sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect())
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs()];
        s.extend(self.layers.iter().map(Dense::outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Dense::outputs).unwrap_or(0)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Checked single-sample forward pass.
    pub fn forward(&self, x: &State) -> Result<State> {
        if x.len() != self.input_dim() {
            return Err(shape_err("Mlp::forward", self.input_dim(), x.len()));
        }
        if !self.is_finite() {
            return Err(Error::Precondition("network has non-finite parameters".into()));
        }
        let mut out = State::zeros(self.output_dim());
        self.forward_into(x.as_slice(), out.as_mut_slice());
        if let Some((index, value)) = out.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Evaluation {
                index,
                value: *value,
                x: x.iter().copied().collect(),
            });
        }
        Ok(out)
    }

    /// Unchecked single-sample forward pass into `out`.
    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        let mut cur: Vec<f64> = x.to_vec();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let w = &layer.weights;
            let mut next = layer.bias.as_slice().to_vec();
            for c in 0..w.ncols() {
                let xc = cur[c];
                if xc == 0.0 {
                    continue;
                }
                let col = w.column(c);
                for (r, nv) in next.iter_mut().enumerate() {
                    *nv += col[r] * xc;
                }
            }
            if li != last {
                for v in next.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            cur = next;
        }
        out.copy_from_slice(&cur);
    }

    /// Batch forward pass; `inputs` has one sample per column.
    pub fn forward_batch(&self, inputs: &DMatrix<f64>) -> ForwardCache {
        let last = self.layers.len() - 1;
        let mut activations = vec![inputs.clone()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weights * activations.last().unwrap();
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
            }
            let a = if li == last {
                z.clone()
            } else {
                z.map(|v| if v > 0.0 { v } else { 0.0 })
            };
            pre.push(z);
            activations.push(a);
        }
        ForwardCache { activations, pre }
    }

    /// Reverse pass for an upstream gradient on the output (`m x batch`),
    /// accumulating into `grads`. The ReLU derivative at exactly 0 is 0.
    pub fn backward_accumulate(&self, cache: &ForwardCache, upstream: DMatrix<f64>, grads: &mut Mlp) {
        let last = self.layers.len() - 1;
        let mut delta = upstream;
        for li in (0..self.layers.len()).rev() {
            if li != last {
                let z = &cache.pre[li];
                delta.zip_apply(z, |d, zv| {
                    if zv <= 0.0 {
                        *d = 0.0
                    }
                });
            }
            let g = &mut grads.layers[li];
            g.weights.gemm(1.0, &delta, &cache.activations[li].transpose(), 1.0);
            g.bias += delta.column_sum();
            if li > 0 {
                delta = self.layers[li].weights.transpose() * &delta;
            }
        }
    }

    /// Sign pattern of every hidden pre-activation over a batch; used to tell
    /// whether a perturbation crossed a ReLU kink.
    pub fn relu_pattern(&self, inputs: &DMatrix<f64>) -> Vec<bool> {
        let cache = self.forward_batch(inputs);
        let hidden = self.layers.len() - 1;
        cache.pre[..hidden]
            .iter()
            .flat_map(|z| z.iter().map(|v| *v > 0.0).collect::<Vec<_>>())
            .collect()
    }

    pub(crate) fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub(crate) fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub(crate) fn zeros_like(&self) -> Mlp {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs(), l.outputs()))
                .collect(),
        }
    }
}

/// Serialized layer: row-major weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpRecord {
    pub layer_sizes: Vec<usize>,
    pub layers: Vec<LayerRecord>,
}

impl From<&Mlp> for MlpRecord {
    fn from(m: &Mlp) -> Self {
        MlpRecord {
            layer_sizes: m.sizes(),
            layers: m
                .layers
                .iter()
                .map(|l| LayerRecord {
                    inputs: l.inputs(),
                    outputs: l.outputs(),
                    weights: row_major(&l.weights),
                    bias: l.bias.iter().copied().collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<&MlpRecord> for Mlp {
    type Error = Error;

    fn try_from(r: &MlpRecord) -> Result<Self> {
        let layers = r
            .layers
            .iter()
            .map(|l| {
                if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                    return Err(Error::Parse("layer record has inconsistent sizes".into()));
                }
                Ok(Dense {
                    weights: DMatrix::from_row_slice(l.outputs, l.inputs, &l.weights),
                    bias: DVector::from_column_slice(&l.bias),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mlp = Mlp::from_layers(layers)?;
        if mlp.sizes() != r.layer_sizes {
            return Err(Error::Parse("layer_sizes disagree with layers".into()));
        }
        Ok(mlp)
    }
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}
