//! Small differentiable feed-forward networks.
//!
//! A network is a [`NetSpec`] (layer widths plus hidden activations) and a flat
//! [`ParamVector`]. Evaluation is batched: rows of the input matrix are samples.
//! Reverse-mode gradients come from a [`Tape`] recorded during the forward pass,
//! and forward-mode directional derivatives with respect to the parameters are
//! available for Fisher-vector products.

mod adam;
pub mod checkpoint;

pub use adam::Adam;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Layer widths (input first) and one activation per hidden layer.
/// The output layer is always linear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawNetSpec", into = "RawNetSpec")]
pub struct NetSpec {
    layer_dims: Vec<usize>,
    activations: Vec<Activation>,
}

#[derive(Serialize, Deserialize)]
struct RawNetSpec {
    layer_dims: Vec<usize>,
    activations: Vec<Activation>,
}

impl TryFrom<RawNetSpec> for NetSpec {
    type Error = NetError;
    fn try_from(raw: RawNetSpec) -> Result<Self> {
        NetSpec::new(raw.layer_dims, raw.activations)
    }
}

impl From<NetSpec> for RawNetSpec {
    fn from(spec: NetSpec) -> Self {
        RawNetSpec {
            layer_dims: spec.layer_dims,
            activations: spec.activations,
        }
    }
}

/// Offsets of one dense layer inside a flat parameter vector.
/// Weights are stored row-major as `d_out x d_in`, followed by `d_out` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub d_in: usize,
    pub d_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl NetSpec {
    pub fn new(layer_dims: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(NetError::InvalidSpec(format!(
                "need at least 2 layer dims, got {}",
                layer_dims.len()
            )));
        }
        if layer_dims.contains(&0) {
            return Err(NetError::InvalidSpec("layer dims must be >= 1".into()));
        }
        if activations.len() != layer_dims.len() - 2 {
            return Err(NetError::InvalidSpec(format!(
                "{} hidden layers but {} activations",
                layer_dims.len() - 2,
                activations.len()
            )));
        }
        Ok(Self {
            layer_dims,
            activations,
        })
    }

    /// `input -> hidden... -> output` with the same activation on every hidden layer.
    pub fn mlp(input: usize, hidden: &[usize], output: usize, act: Activation) -> Result<Self> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input);
        dims.extend_from_slice(hidden);
        dims.push(output);
        Self::new(dims, vec![act; hidden.len()])
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    pub fn layout(&self) -> Vec<LayerLayout> {
        let mut offset = 0;
        self.layer_dims
            .windows(2)
            .map(|w| {
                let l = LayerLayout {
                    d_in: w[0],
                    d_out: w[1],
                    weight_offset: offset,
                    bias_offset: offset + w[0] * w[1],
                };
                offset += w[0] * w[1] + w[1];
                l
            })
            .collect()
    }

    fn activation(&self, layer: usize) -> Activation {
        self.activations
            .get(layer)
            .copied()
            .unwrap_or(Activation::Identity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(spec: &NetSpec) -> Self {
        Self {
            values: vec![0.0; spec.num_params()],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(spec: &NetSpec, rng: &mut R) -> Self {
        let mut values = vec![0.0; spec.num_params()];
        for l in spec.layout() {
            let limit = (6.0 / (l.d_in + l.d_out) as f64).sqrt();
            for w in &mut values[l.weight_offset..l.bias_offset] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Self { values }
    }

    pub fn from_values(spec: &NetSpec, values: Vec<f64>) -> Result<Self> {
        check_len("parameter vector", spec.num_params(), values.len())?;
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn weights(&self, layout: &LayerLayout) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape(
            (layout.d_out, layout.d_in),
            &self.values[layout.weight_offset..layout.bias_offset],
        )
        .expect("layout matches parameter length")
    }

    pub fn bias(&self, layout: &LayerLayout) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.values[layout.bias_offset..layout.bias_offset + layout.d_out])
    }

    /// Per-layer `(weights, bias)` copies.
    pub fn to_layers(&self, spec: &NetSpec) -> Vec<(Array2<f64>, Array1<f64>)> {
        spec.layout()
            .iter()
            .map(|l| (self.weights(l).to_owned(), self.bias(l).to_owned()))
            .collect()
    }

    pub fn from_layers(spec: &NetSpec, layers: &[(Array2<f64>, Array1<f64>)]) -> Result<Self> {
        let layout = spec.layout();
        check_len("layer count", layout.len(), layers.len())?;
        let mut values = Vec::with_capacity(spec.num_params());
        for (l, (w, b)) in layout.iter().zip(layers) {
            if w.dim() != (l.d_out, l.d_in) {
                return Err(NetError::DimensionMismatch {
                    what: "layer weights",
                    expected: l.d_out * l.d_in,
                    got: w.len(),
                });
            }
            check_len("layer bias", l.d_out, b.len())?;
            values.extend(w.iter());
            values.extend(b.iter());
        }
        Ok(Self { values })
    }
}

/// A network specification bundled with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: NetSpec,
    pub params: ParamVector,
}

impl Mlp {
    pub fn new(spec: NetSpec, params: ParamVector) -> Result<Self> {
        check_len("parameter vector", spec.num_params(), params.len())?;
        Ok(Self { spec, params })
    }

    pub fn init<R: Rng + ?Sized>(spec: NetSpec, rng: &mut R) -> Self {
        let params = ParamVector::glorot(&spec, rng);
        Self { spec, params }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        forward(&self.spec, &self.params, input)
    }

    pub fn forward_batch(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(forward_tape(&self.spec, &self.params, inputs)?.into_output())
    }

    pub fn tape(&self, inputs: ArrayView2<'_, f64>) -> Result<Tape> {
        forward_tape(&self.spec, &self.params, inputs)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }
}

/// Output and gradients of `<d_output, f(params, input)>` for a single sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GradResult {
    pub output: Vec<f64>,
    pub d_params: ParamVector,
    pub d_input: Vec<f64>,
}

/// Activations recorded by a batched forward pass.
/// `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct Tape {
    acts: Vec<Array2<f64>>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().unwrap()
    }

    pub fn into_output(mut self) -> Array2<f64> {
        self.acts.pop().unwrap()
    }

    pub fn batch_size(&self) -> usize {
        self.acts[0].nrows()
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(NetError::DimensionMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

pub fn forward(spec: &NetSpec, params: &ParamVector, input: &[f64]) -> Result<Vec<f64>> {
    check_len("network input", spec.input_dim(), input.len())?;
    let x = ArrayView2::from_shape((1, input.len()), input).unwrap();
    Ok(forward_tape(spec, params, x)?.into_output().into_raw_vec_and_offset().0)
}

pub fn backward(
    spec: &NetSpec,
    params: &ParamVector,
    input: &[f64],
    d_output: &[f64],
) -> Result<GradResult> {
    check_len("network input", spec.input_dim(), input.len())?;
    check_len("output gradient", spec.output_dim(), d_output.len())?;
    let x = ArrayView2::from_shape((1, input.len()), input).unwrap();
    let tape = forward_tape(spec, params, x)?;
    let dy = ArrayView2::from_shape((1, d_output.len()), d_output).unwrap();
    let (d_params, d_input) = backward_tape(spec, params, &tape, dy)?;
    Ok(GradResult {
        output: tape.output().row(0).to_vec(),
        d_params,
        d_input: d_input.into_raw_vec_and_offset().0,
    })
}

pub fn forward_tape(spec: &NetSpec, params: &ParamVector, inputs: ArrayView2<'_, f64>) -> Result<Tape> {
    check_len("network input", spec.input_dim(), inputs.ncols())?;
    check_len("parameter vector", spec.num_params(), params.len())?;
    let layout = spec.layout();
    let mut acts = Vec::with_capacity(layout.len() + 1);
    acts.push(inputs.to_owned());
    for (i, l) in layout.iter().enumerate() {
        let mut z = acts[i].dot(&params.weights(l).t());
        z += &params.bias(l);
        let act = spec.activation(i);
        if act != Activation::Identity {
            z.mapv_inplace(|v| act.apply(v));
        }
        acts.push(z);
    }
    Ok(Tape { acts })
}

/// Reverse pass: gradients of `sum_rows <d_out_row, output_row>` with respect to
/// the parameters (summed over the batch) and to each input row.
pub fn backward_tape(
    spec: &NetSpec,
    params: &ParamVector,
    tape: &Tape,
    d_out: ArrayView2<'_, f64>,
) -> Result<(ParamVector, Array2<f64>)> {
    let out = tape.output();
    if d_out.dim() != out.dim() {
        return Err(NetError::DimensionMismatch {
            what: "output gradient",
            expected: out.len(),
            got: d_out.len(),
        });
    }
    let layout = spec.layout();
    let mut grad = vec![0.0; spec.num_params()];
    let mut delta = d_out.to_owned();
    for (i, l) in layout.iter().enumerate().rev() {
        let act = spec.activation(i);
        if act != Activation::Identity {
            delta.zip_mut_with(&tape.acts[i + 1], |d, &y| *d *= act.derivative_from_output(y));
        }
        let dw = delta.t().dot(&tape.acts[i]);
        let db = delta.sum_axis(Axis(0));
        grad[l.weight_offset..l.bias_offset]
            .iter_mut()
            .zip(dw.iter())
            .for_each(|(g, v)| *g = *v);
        grad[l.bias_offset..l.bias_offset + l.d_out]
            .iter_mut()
            .zip(db.iter())
            .for_each(|(g, v)| *g = *v);
        delta = delta.dot(&params.weights(l));
    }
    Ok((ParamVector { values: grad }, delta))
}

/// Forward-mode pass: derivative of every output row along the parameter
/// direction `direction`, holding the inputs fixed.
pub fn jvp_tape(
    spec: &NetSpec,
    params: &ParamVector,
    tape: &Tape,
    direction: &[f64],
) -> Result<Array2<f64>> {
    check_len("parameter direction", spec.num_params(), direction.len())?;
    let dir = ParamVector {
        values: direction.to_vec(),
    };
    let layout = spec.layout();
    let mut tangent: Option<Array2<f64>> = None;
    for (i, l) in layout.iter().enumerate() {
        let mut dz = tape.acts[i].dot(&dir.weights(l).t());
        dz += &dir.bias(l);
        if let Some(t) = &tangent {
            dz += &t.dot(&params.weights(l).t());
        }
        let act = spec.activation(i);
        if act != Activation::Identity {
            dz.zip_mut_with(&tape.acts[i + 1], |d, &y| *d *= act.derivative_from_output(y));
        }
        tangent = Some(dz);
    }
    Ok(tangent.unwrap())
}
