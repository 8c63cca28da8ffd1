//! Fully connected networks with explicit backpropagation.
//!
//! Gradients are computed by hand per layer rather than by a tape: the
//! architectures in this crate are all small chains of dense layers, and an
//! explicit backward pass keeps every derivative auditable against finite
//! differences. Parameters flatten to a single `Vec<f64>` in a fixed order
//! (layer by layer, weights row-major then bias) so one optimizer state can
//! drive a whole model.

use super::linalg::Matrix;
use super::rng::RngStream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => stable_sigmoid(z),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative at pre-activation `z` with post-activation `y` available,
    /// so sigmoid and tanh reuse the forward value.
    #[inline]
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        }
    }

    /// Stable numeric code used by the on-disk parameter format.
    pub fn code(self) -> u64 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
            Activation::Tanh => 3,
        }
    }

    pub fn from_code(code: u64) -> Result<Self> {
        match code {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Sigmoid),
            3 => Ok(Activation::Tanh),
            other => Err(Error::Store(format!("unknown activation code {other}"))),
        }
    }
}

#[inline]
pub fn stable_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub w: Matrix,
    pub b: Vec<f64>,
    pub act: Activation,
}

#[derive(Debug, Clone)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

/// Scratch space for one forward pass; reused across samples in training
/// loops to avoid per-sample allocation.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    input: Vec<f64>,
    pres: Vec<Vec<f64>>,
    outs: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.outs.last().expect("trace of an empty net")
    }
}

/// Per-layer weight and bias gradients, accumulated across a batch.
#[derive(Debug, Clone)]
pub struct NetGrads {
    pub layers: Vec<(Matrix, Vec<f64>)>,
}

impl NetGrads {
    pub fn zeros_like(net: &DenseNet) -> Self {
        NetGrads {
            layers: net
                .layers
                .iter()
                .map(|l| (Matrix::zeros(l.w.rows(), l.w.cols()), vec![0.0; l.b.len()]))
                .collect(),
        }
    }

    pub fn reset(&mut self) {
        for (w, b) in &mut self.layers {
            w.fill(0.0);
            b.fill(0.0);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for (w, b) in &mut self.layers {
            super::linalg::scale(w.data_mut(), alpha);
            super::linalg::scale(b, alpha);
        }
    }
}

impl DenseNet {
    /// Build a network from layer sizes and one activation per layer.
    /// `dims = [in, h1, ..., out]` needs `acts.len() == dims.len() - 1`.
    /// Weights start He-scaled for relu layers and Xavier-scaled otherwise;
    /// biases start at zero.
    pub fn new(dims: &[usize], acts: &[Activation], rng: &mut RngStream) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument(
                "DenseNet needs at least input and output dims".into(),
            ));
        }
        if acts.len() != dims.len() - 1 {
            return Err(Error::Shape {
                context: "DenseNet::new activations",
                expected: dims.len() - 1,
                got: acts.len(),
            });
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument("zero layer width".into()));
        }
        let mut layers = Vec::with_capacity(acts.len());
        for (l, &act) in acts.iter().enumerate() {
            let fan_in = dims[l];
            let fan_out = dims[l + 1];
            let std = match act {
                Activation::Relu => (2.0 / fan_in as f64).sqrt(),
                _ => (1.0 / fan_in as f64).sqrt(),
            };
            let w = Matrix::from_fn(fan_out, fan_in, |_, _| std * rng.standard_normal());
            layers.push(Layer {
                w,
                b: vec![0.0; fan_out],
                act,
            });
        }
        Ok(DenseNet { layers })
    }

    /// All-zero parameters; the shape scaffold for loading a saved network.
    pub fn zeros(dims: &[usize], acts: &[Activation]) -> Result<Self> {
        let mut rng = RngStream::new(0, "densenet-zeros");
        let mut net = DenseNet::new(dims, acts, &mut rng)?;
        for layer in &mut net.layers {
            layer.w.fill(0.0);
        }
        Ok(net)
    }

    /// Layer sizes as `[in, h1, ..., out]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.w.rows()));
        dims
    }

    /// Relu hidden layers with a chosen output activation.
    pub fn relu_stack(dims: &[usize], output: Activation, rng: &mut RngStream) -> Result<Self> {
        let mut acts = vec![Activation::Relu; dims.len().saturating_sub(1)];
        if let Some(last) = acts.last_mut() {
            *last = output;
        }
        DenseNet::new(dims, &acts, rng)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("empty net").w.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let mut next = layer.w.matvec_owned(&cur);
            for (v, b) in next.iter_mut().zip(&layer.b) {
                *v = layer.act.apply(*v + b);
            }
            cur = next;
        }
        Ok(cur)
    }

    /// Forward pass that records every intermediate needed by `backward`.
    pub fn forward_trace(&self, x: &[f64], trace: &mut Trace) -> Result<()> {
        self.check_input(x)?;
        trace.input.clear();
        trace.input.extend_from_slice(x);
        trace.pres.resize(self.layers.len(), Vec::new());
        trace.outs.resize(self.layers.len(), Vec::new());
        for (l, layer) in self.layers.iter().enumerate() {
            let rows = layer.w.rows();
            // Split borrows: the input of layer l is trace.outs[l - 1].
            let (head, tail) = trace.outs.split_at_mut(l);
            let input: &[f64] = if l == 0 { &trace.input } else { &head[l - 1] };
            let pre = &mut trace.pres[l];
            pre.resize(rows, 0.0);
            layer.w.matvec(input, pre);
            for (p, b) in pre.iter_mut().zip(&layer.b) {
                *p += b;
            }
            let out = &mut tail[0];
            out.resize(rows, 0.0);
            for i in 0..rows {
                out[i] = layer.act.apply(pre[i]);
            }
        }
        Ok(())
    }

    /// Backpropagate `dl_dout` (gradient of a scalar loss in the network
    /// output) through the trace. Parameter gradients accumulate into
    /// `grads`; the returned vector is the gradient in the network input.
    pub fn backward(&self, trace: &Trace, dl_dout: &[f64], grads: &mut NetGrads) -> Vec<f64> {
        assert_eq!(
            dl_dout.len(),
            self.output_dim(),
            "backward output-gradient length"
        );
        assert_eq!(grads.layers.len(), self.layers.len(), "grads layer count");
        let mut delta = dl_dout.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let pre = &trace.pres[l];
            let out = &trace.outs[l];
            for i in 0..delta.len() {
                delta[i] *= layer.act.derivative(pre[i], out[i]);
            }
            let input: &[f64] = if l == 0 {
                &trace.input
            } else {
                &trace.outs[l - 1]
            };
            let (dw, db) = &mut grads.layers[l];
            dw.add_outer(&delta, input);
            super::linalg::axpy(1.0, &delta, db);
            let mut prev = vec![0.0; layer.w.cols()];
            layer.w.tmatvec(&delta, &mut prev);
            delta = prev;
        }
        delta
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w.rows() * l.w.cols() + l.b.len())
            .sum()
    }

    /// Append all parameters to `out` in the canonical order.
    pub fn push_params(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(l.w.data());
            out.extend_from_slice(&l.b);
        }
    }

    /// Read parameters back from a flat slice; returns how many were used.
    pub fn load_params(&mut self, flat: &[f64]) -> Result<usize> {
        let need = self.param_count();
        if flat.len() < need {
            return Err(Error::Shape {
                context: "DenseNet::load_params",
                expected: need,
                got: flat.len(),
            });
        }
        let mut off = 0;
        for l in &mut self.layers {
            let wlen = l.w.rows() * l.w.cols();
            l.w.data_mut().copy_from_slice(&flat[off..off + wlen]);
            off += wlen;
            let blen = l.b.len();
            l.b.copy_from_slice(&flat[off..off + blen]);
            off += blen;
        }
        Ok(need)
    }

    pub fn push_grads(grads: &NetGrads, out: &mut Vec<f64>) {
        for (w, b) in &grads.layers {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                context: "DenseNet input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }
}
