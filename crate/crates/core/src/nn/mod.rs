//! Fully connected networks with hand-written reverse-mode gradients.
//!
//! Parameters live in one flat [`ParamVector`] in canonical order: for each
//! layer, the `d_out × d_in` weight matrix row-major, followed by the `d_out`
//! biases. Row `o` of a weight matrix holds the incoming weights of output
//! unit `o`, so a layer computes `z[b][o] = Σ_i W[o][i]·x[b][i] + bias[o]`.
//!
//! Hidden layers apply the spec's activation; the last layer is linear.

mod spectral;

pub use spectral::{spectral_normalize, SpectralLayer, SpectralState};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation. ReLU'(0) is 0.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Location of one dense layer inside a flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub d_in: usize,
    pub d_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerShape {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.weight_offset..self.weight_offset + self.d_in * self.d_out
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        self.bias_offset..self.bias_offset + self.d_out
    }
}

/// Architecture of a multilayer perceptron.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MlpSpec {
    widths: Vec<usize>,
    activation: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least input and output widths, got {widths:?}"
            )));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidSpec(format!(
                "layer widths must be positive, got {widths:?}"
            )));
        }
        Ok(Self { widths, activation })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Σ over consecutive width pairs of `d_in·d_out + d_out`.
    pub fn parameter_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        let mut offset = 0;
        self.widths
            .windows(2)
            .map(|w| {
                let (d_in, d_out) = (w[0], w[1]);
                let shape = LayerShape {
                    d_in,
                    d_out,
                    weight_offset: offset,
                    bias_offset: offset + d_in * d_out,
                };
                offset += d_in * d_out + d_out;
                shape
            })
            .collect()
    }

    /// Stable byte encoding used for checkpoints and digests.
    pub fn descriptor_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.widths.len() + 1);
        out.extend_from_slice(&(self.widths.len() as u32).to_le_bytes());
        for &w in &self.widths {
            out.extend_from_slice(&(w as u32).to_le_bytes());
        }
        out.push(self.activation.tag());
        out
    }
}

/// Flat network parameters in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// Copy of layer `layer`'s weight matrix.
    pub fn layer_weights(&self, spec: &MlpSpec, layer: usize) -> Matrix {
        let shape = spec.layers()[layer];
        Matrix::from_vec(
            shape.d_out,
            shape.d_in,
            self.0[shape.weight_range()].to_vec(),
        )
    }

    pub fn set_layer_weights(&mut self, spec: &MlpSpec, layer: usize, weights: &Matrix) {
        let shape = spec.layers()[layer];
        assert_eq!(weights.shape(), (shape.d_out, shape.d_in));
        self.0[shape.weight_range()].copy_from_slice(weights.as_slice());
    }

    pub fn check_len(&self, spec: &MlpSpec) -> Result<()> {
        if self.len() != spec.parameter_count() {
            return Err(Error::DimensionMismatch {
                context: "parameter vector".into(),
                expected: spec.parameter_count(),
                found: self.len(),
            });
        }
        Ok(())
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Intermediate values of a forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `activations[l]` is the input to layer `l`; the last entry is the output.
    activations: Vec<Matrix>,
    /// Pre-activations of the hidden layers.
    pre_activations: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Matrix {
        self.activations.last().unwrap()
    }

    pub fn into_output(mut self) -> Matrix {
        self.activations.pop().unwrap()
    }

    pub fn input(&self) -> &Matrix {
        &self.activations[0]
    }
}

fn check_input(spec: &MlpSpec, inputs: &Matrix) -> Result<()> {
    if inputs.cols() != spec.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "layer 0 input width".into(),
            expected: spec.input_dim(),
            found: inputs.cols(),
        });
    }
    Ok(())
}

fn affine(params: &[f64], shape: &LayerShape, x: &Matrix) -> Matrix {
    let w = &params[shape.weight_range()];
    let b = &params[shape.bias_range()];
    let mut z = Matrix::zeros(x.rows(), shape.d_out);
    for (xr, zr) in x.iter_rows().zip(z.as_mut_slice().chunks_exact_mut(shape.d_out)) {
        for (o, zo) in zr.iter_mut().enumerate() {
            *zo = dot(&w[o * shape.d_in..(o + 1) * shape.d_in], xr) + b[o];
        }
    }
    z
}

/// Runs the network and keeps every intermediate needed by [`backward_trace`].
pub fn forward_trace(params: &ParamVector, spec: &MlpSpec, inputs: &Matrix) -> Result<ForwardTrace> {
    params.check_len(spec)?;
    check_input(spec, inputs)?;
    let layers = spec.layers();
    let mut activations = Vec::with_capacity(layers.len() + 1);
    let mut pre_activations = Vec::with_capacity(layers.len().saturating_sub(1));
    activations.push(inputs.clone());
    for (l, shape) in layers.iter().enumerate() {
        let z = affine(params.as_slice(), shape, activations.last().unwrap());
        if l + 1 == layers.len() {
            activations.push(z);
        } else {
            let mut a = z.clone();
            let act = spec.activation();
            a.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v));
            pre_activations.push(z);
            activations.push(a);
        }
    }
    Ok(ForwardTrace {
        activations,
        pre_activations,
    })
}

/// `f(inputs; params)` as a `B × d_out` matrix.
pub fn forward(params: &ParamVector, spec: &MlpSpec, inputs: &Matrix) -> Result<Matrix> {
    Ok(forward_trace(params, spec, inputs)?.into_output())
}

/// Vector-Jacobian product through a recorded forward pass.
///
/// Returns the parameter gradient of `⟨cotangent, f(x; θ)⟩` together with the
/// cotangent with respect to the inputs.
pub fn backward_trace(
    params: &ParamVector,
    spec: &MlpSpec,
    trace: &ForwardTrace,
    cotangent: &Matrix,
) -> Result<(ParamVector, Matrix)> {
    params.check_len(spec)?;
    let layers = spec.layers();
    let last = layers.len() - 1;
    let batch = trace.input().rows();
    if cotangent.shape() != (batch, spec.output_dim()) {
        let (expected, found) = if cotangent.rows() != batch {
            (batch, cotangent.rows())
        } else {
            (spec.output_dim(), cotangent.cols())
        };
        return Err(Error::DimensionMismatch {
            context: format!("layer {last} output cotangent"),
            expected,
            found,
        });
    }
    let p = params.as_slice();
    let mut grad = vec![0.0; p.len()];
    let mut delta = cotangent.clone();
    for l in (0..layers.len()).rev() {
        let shape = layers[l];
        let a_in = &trace.activations[l];
        {
            let (gw, gb) = grad[shape.weight_offset..shape.bias_offset + shape.d_out]
                .split_at_mut(shape.d_in * shape.d_out);
            for (dr, ar) in delta.iter_rows().zip(a_in.iter_rows()) {
                for (o, &d) in dr.iter().enumerate() {
                    if d != 0.0 {
                        axpy(d, ar, &mut gw[o * shape.d_in..(o + 1) * shape.d_in]);
                    }
                    gb[o] += d;
                }
            }
        }
        let w = &p[shape.weight_range()];
        let mut prev = Matrix::zeros(batch, shape.d_in);
        for (dr, pr) in delta
            .iter_rows()
            .zip(prev.as_mut_slice().chunks_exact_mut(shape.d_in.max(1)))
        {
            for (o, &d) in dr.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, &w[o * shape.d_in..(o + 1) * shape.d_in], pr);
                }
            }
        }
        if l > 0 {
            let act = spec.activation();
            let z = &trace.pre_activations[l - 1];
            for (pv, &zv) in prev.as_mut_slice().iter_mut().zip(z.as_slice()) {
                *pv *= act.derivative(zv);
            }
        }
        delta = prev;
    }
    Ok((ParamVector(grad), delta))
}

/// Gradient of `⟨cotangent, f(inputs; θ)⟩` with respect to `θ`, in canonical order.
pub fn backward(
    params: &ParamVector,
    spec: &MlpSpec,
    inputs: &Matrix,
    cotangent: &Matrix,
) -> Result<ParamVector> {
    let trace = forward_trace(params, spec, inputs)?;
    Ok(backward_trace(params, spec, &trace, cotangent)?.0)
}
