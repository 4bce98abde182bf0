use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::params::Module;
use super::tape::{gemm, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
    Exp,
    /// Elementwise square. Lets a potential network express exact quadratics.
    Square,
}

#[derive(Clone, Debug)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Fully connected network. Weights are stored `[in, out]` and applied as
/// `x W + b` to row-major batches.
#[derive(Clone, Debug)]
pub struct Mlp {
    prefix: String,
    layers: Vec<Layer>,
}

impl Mlp {
    /// He-initialized network with `hidden` activations on every layer but
    /// the last, which uses `output`.
    pub fn new<R: Rng + ?Sized>(
        prefix: &str,
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output extents");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| { let u: f64 = StandardNormal.sample(rng); std * u })
                    .collect::<Vec<f64>>();
                let activation = if k + 2 == dims.len() { output } else { hidden };
                Layer {
                    weight: Tensor::from_parts(vec![fan_in, fan_out], data),
                    bias: Tensor::zeros(&[fan_out]),
                    activation,
                }
            })
            .collect();
        Mlp {
            prefix: prefix.to_string(),
            layers,
        }
    }

    pub fn from_layers(prefix: &str, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Contract("MLP without layers".into()));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.weight.rank() != 2 || layer.bias.shape() != [layer.output_dim()] {
                return Err(Error::Dimension(format!(
                    "layer {k}: weight {:?} bias {:?}",
                    layer.weight.shape(),
                    layer.bias.shape()
                )));
            }
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Dimension(format!(
                    "layer {k} emits {} but layer {} expects {}",
                    pair[0].output_dim(),
                    k + 1,
                    pair[1].input_dim()
                )));
            }
        }
        Ok(Mlp {
            prefix: prefix.to_string(),
            layers,
        })
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim()
    }

    fn name(&self, k: usize, what: &str) -> String {
        format!("{}.{k}.{what}", self.prefix)
    }

    /// Apply the network to `x` of shape `[in]` or `[batch, in]`.
    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.last() != Some(&self.input_dim()) || shape.len() > 2 {
            return Err(Error::Dimension(format!(
                "MLP `{}` expects last extent {}, got {:?}",
                self.prefix,
                self.input_dim(),
                shape
            )));
        }
        let vector = shape.len() == 1;
        let mut h = if vector { x.reshape(&[1, shape[0]])? } else { x };
        for (k, layer) in self.layers.iter().enumerate() {
            let w = tape.param(&self.name(k, "weight"), &layer.weight);
            let b = tape.param(&self.name(k, "bias"), &layer.bias);
            h = h.matmul(w)?.add(b)?;
            h = match layer.activation {
                Activation::Relu => h.relu(),
                Activation::Linear => h,
                Activation::Exp => h.exp(),
                Activation::Square => h.square(),
            };
        }
        if vector {
            h = h.reshape(&[self.output_dim()])?;
        }
        Ok(h)
    }

    /// Forward pass on plain values, without recording a tape.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let shape = x.shape();
        if shape.last() != Some(&self.input_dim()) || shape.len() > 2 {
            return Err(Error::Dimension(format!(
                "MLP `{}` expects last extent {}, got {:?}",
                self.prefix,
                self.input_dim(),
                shape
            )));
        }
        let rows = if shape.len() == 1 { 1 } else { shape[0] };
        let mut h = x.data().to_vec();
        for layer in &self.layers {
            let (k, n) = (layer.input_dim(), layer.output_dim());
            let mut out = vec![0.0; rows * n];
            for r in 0..rows {
                out[r * n..(r + 1) * n].copy_from_slice(layer.bias.data());
            }
            gemm(rows, k, n, &h, false, layer.weight.data(), false, &mut out, true);
            match layer.activation {
                Activation::Relu => out.iter_mut().for_each(|v| *v = v.max(0.0)),
                Activation::Linear => {}
                Activation::Exp => out.iter_mut().for_each(|v| *v = v.exp()),
                Activation::Square => out.iter_mut().for_each(|v| *v *= *v),
            }
            h = out;
        }
        let shape = if shape.len() == 1 { vec![self.output_dim()] } else { vec![rows, self.output_dim()] };
        Ok(Tensor::from_parts(shape, h))
    }
}

impl Module for Mlp {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (k, layer) in self.layers.iter().enumerate() {
            f(&self.name(k, "weight"), &layer.weight);
            f(&self.name(k, "bias"), &layer.bias);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for k in 0..self.layers.len() {
            let (wn, bn) = (self.name(k, "weight"), self.name(k, "bias"));
            f(&wn, &mut self.layers[k].weight);
            f(&bn, &mut self.layers[k].bias);
        }
    }
}
