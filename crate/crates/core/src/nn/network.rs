use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::Label;
use crate::features::FeatureSequence;
use crate::scalar::{relu, sigmoid, Scalar};

use super::cell::{cell_backward, lstm_cell_forward, CellStep, LstmCellParams};
use super::matrix::{dot, Matrix};

/// Neurons in the fully connected layer between the LSTM stack and the output.
pub const FC_WIDTH: usize = 32;

fn default_fc_width() -> usize {
    FC_WIDTH
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkDims {
    /// Features per timestep.
    pub input_width: usize,
    /// LSTM cells per layer.
    pub hidden: usize,
    #[serde(default = "default_fc_width")]
    pub fc_width: usize,
}

impl NetworkDims {
    pub fn new(input_width: usize, hidden: usize) -> Self {
        NetworkDims { input_width, hidden, fc_width: FC_WIDTH }
    }

    pub fn check(&self) -> Result<()> {
        if self.input_width == 0 || self.hidden == 0 || self.fc_width == 0 {
            return Err(Error::InvalidConfig(format!("network dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams<T> {
    pub w: Matrix<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> DenseParams<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        DenseParams { w: Matrix::zeros(output, input), b: vec![T::zero(); output] }
    }
}

/// All trainable parameters.
///
/// Canonical tensor order, used by checkpoints and optimizers: for each
/// LSTM layer the gates `f, i, o, c`, each as `W_x, W_h, b`; then the FC
/// weights and bias; then the output weights and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    pub layer1: LstmCellParams<T>,
    pub layer2: LstmCellParams<T>,
    pub fc: DenseParams<T>,
    pub out: DenseParams<T>,
}

/// Gradients share the parameter layout.
pub type Gradients<T> = NetworkParams<T>;

impl<T: Scalar> NetworkParams<T> {
    pub fn zeros(dims: &NetworkDims) -> Self {
        NetworkParams {
            layer1: LstmCellParams::zeros(dims.input_width, dims.hidden),
            layer2: LstmCellParams::zeros(dims.hidden, dims.hidden),
            fc: DenseParams::zeros(dims.hidden, dims.fc_width),
            out: DenseParams::zeros(dims.fc_width, 1),
        }
    }

    pub fn dims(&self) -> NetworkDims {
        NetworkDims { input_width: self.layer1.input_width(), hidden: self.layer1.hidden(), fc_width: self.fc.b.len() }
    }

    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::with_capacity(28);
        for layer in [&self.layer1, &self.layer2] {
            for g in layer.gates() {
                out.extend([g.w_x.data.as_slice(), g.w_h.data.as_slice(), g.b.as_slice()]);
            }
        }
        out.extend([
            self.fc.w.data.as_slice(),
            self.fc.b.as_slice(),
            self.out.w.data.as_slice(),
            self.out.b.as_slice(),
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::with_capacity(28);
        for layer in [&mut self.layer1, &mut self.layer2] {
            for g in layer.gates_mut() {
                out.push(g.w_x.data.as_mut_slice());
                out.push(g.w_h.data.as_mut_slice());
                out.push(g.b.as_mut_slice());
            }
        }
        out.push(self.fc.w.data.as_mut_slice());
        out.push(self.fc.b.as_mut_slice());
        out.push(self.out.w.data.as_mut_slice());
        out.push(self.out.b.as_mut_slice());
        out
    }

    /// Names matching [`Self::tensors`], e.g. `layer2.o.w_h`.
    pub fn tensor_names() -> Vec<String> {
        let mut names = Vec::with_capacity(28);
        for layer in ["layer1", "layer2"] {
            for gate in ["f", "i", "o", "c"] {
                for part in ["w_x", "w_h", "b"] {
                    names.push(format!("{layer}.{gate}.{part}"));
                }
            }
        }
        names.extend(["fc.w", "fc.b", "out.w", "out.b"].map(String::from));
        names
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.tensors().concat()
    }

    pub fn from_flat(dims: &NetworkDims, flat: &[T]) -> Result<Self> {
        let mut params = Self::zeros(dims);
        let expected = params.len();
        if flat.len() != expected {
            return Err(Error::shape("flat parameter vector", expected, flat.len()));
        }
        let mut cursor = 0;
        for t in params.tensors_mut() {
            t.copy_from_slice(&flat[cursor..cursor + t.len()]);
            cursor += t.len();
        }
        Ok(params)
    }

    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        let flat: Vec<U> = self.to_flat().into_iter().map(|v| U::lit(v.as_f64())).collect();
        NetworkParams::from_flat(&self.dims(), &flat).expect("same dims")
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Euclidean norm over every parameter.
    pub fn norm(&self) -> T {
        self.tensors().iter().flat_map(|t| t.iter()).map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Glorot-uniform weights, zero biases, deterministic per seed.
pub fn init_params<T: Scalar>(seed: u64, dims: &NetworkDims) -> NetworkParams<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = NetworkParams::<T>::zeros(dims);
    let fill = |m: &mut Matrix<T>, rng: &mut ChaCha8Rng| {
        let limit = (6.0 / (m.rows + m.cols) as f64).sqrt();
        m.data.iter_mut().for_each(|v| *v = T::lit(rng.random_range(-limit..limit)));
    };
    for layer in [&mut params.layer1, &mut params.layer2] {
        for g in layer.gates_mut() {
            fill(&mut g.w_x, &mut rng);
            fill(&mut g.w_h, &mut rng);
        }
    }
    fill(&mut params.fc.w, &mut rng);
    fill(&mut params.out.w, &mut rng);
    params
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Eval,
    /// Inverted dropout on both LSTM output sequences.
    Train {
        dropout_rate: f64,
    },
}

/// Per layer, per timestep, per unit: 0 or `1 / keep_probability`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks<T> {
    pub layers: [Vec<Vec<T>>; 2],
}

impl<T: Scalar> DropoutMasks<T> {
    pub fn sample<R: Rng + ?Sized>(rate: f64, steps: usize, hidden: usize, rng: &mut R) -> Self {
        let keep = 1.0 - rate;
        let scale = T::lit(1.0 / keep);
        let mut layer = || -> Vec<Vec<T>> {
            (0..steps)
                .map(|_| (0..hidden).map(|_| if rng.random::<f64>() < keep { scale } else { T::zero() }).collect())
                .collect()
        };
        let first = layer();
        let second = layer();
        DropoutMasks { layers: [first, second] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCache<T> {
    pub steps: Vec<CellStep<T>>,
    /// `relu(h_t)`, times the dropout mask when one is active.
    pub outputs: Vec<Vec<T>>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache<T> {
    pub input_width: usize,
    pub layers: [LayerCache<T>; 2],
    pub masks: Option<DropoutMasks<T>>,
    /// FC pre-activation.
    pub fc_pre: Vec<T>,
    pub fc_out: Vec<T>,
    pub logit: T,
    pub probability: T,
}

fn run_layer<T: Scalar>(inputs: &[&[T]], params: &LstmCellParams<T>, mask: Option<&[Vec<T>]>) -> Result<LayerCache<T>> {
    let hidden = params.hidden();
    let zeros = vec![T::zero(); hidden];
    let mut steps: Vec<CellStep<T>> = Vec::with_capacity(inputs.len());
    let mut outputs = Vec::with_capacity(inputs.len());
    for (t, x) in inputs.iter().enumerate() {
        let (h_prev, c_prev) = match steps.last() {
            Some(s) => (&s.h, &s.c),
            None => (&zeros, &zeros),
        };
        let step = lstm_cell_forward(x, h_prev, c_prev, params)?;
        let mut z: Vec<T> = step.h.iter().map(|&v| relu(v)).collect();
        if let Some(mask) = mask {
            z.iter_mut().zip(&mask[t]).for_each(|(v, &m)| *v *= m);
        }
        outputs.push(z);
        steps.push(step);
    }
    Ok(LayerCache { steps, outputs })
}

/// Forward pass with explicit dropout masks (`None` for evaluation).
pub fn forward_with_masks<T: Scalar>(
    seq: &FeatureSequence<T>,
    params: &NetworkParams<T>,
    masks: Option<DropoutMasks<T>>,
) -> Result<ForwardCache<T>> {
    let dims = params.dims();
    if seq.width != dims.input_width {
        return Err(Error::shape("sequence width", dims.input_width, seq.width));
    }
    if seq.n == 0 {
        return Err(Error::shape("sequence length", 1, 0));
    }
    if let Some(m) = &masks {
        for layer in &m.layers {
            if layer.len() != seq.n || layer.iter().any(|v| v.len() != dims.hidden) {
                return Err(Error::shape("dropout mask", seq.n * dims.hidden, layer.iter().map(Vec::len).sum()));
            }
        }
    }
    let inputs: Vec<&[T]> = seq.steps().collect();
    let l1 = run_layer(&inputs, &params.layer1, masks.as_ref().map(|m| m.layers[0].as_slice()))?;
    let hidden_seq: Vec<&[T]> = l1.outputs.iter().map(Vec::as_slice).collect();
    let l2 = run_layer(&hidden_seq, &params.layer2, masks.as_ref().map(|m| m.layers[1].as_slice()))?;

    let last = l2.outputs.last().expect("nonempty sequence");
    let mut fc_pre = params.fc.b.clone();
    params.fc.w.mul_vec_acc(last, &mut fc_pre);
    let fc_out: Vec<T> = fc_pre.iter().map(|&v| relu(v)).collect();
    let logit = dot(params.out.w.row(0), &fc_out) + params.out.b[0];
    let probability = sigmoid(logit);
    Ok(ForwardCache { input_width: seq.width, layers: [l1, l2], masks, fc_pre, fc_out, logit, probability })
}

/// Probability of a lane change for `seq`, plus the cache for backprop.
pub fn network_forward<T: Scalar, R: Rng + ?Sized>(
    seq: &FeatureSequence<T>,
    params: &NetworkParams<T>,
    mode: Mode,
    rng: &mut R,
) -> Result<(T, ForwardCache<T>)> {
    let masks = match mode {
        Mode::Eval => None,
        Mode::Train { dropout_rate } => {
            if !(0.0..1.0).contains(&dropout_rate) {
                return Err(Error::InvalidConfig(format!("dropout rate must lie in [0, 1), got {dropout_rate}")));
            }
            (dropout_rate > 0.0).then(|| DropoutMasks::sample(dropout_rate, seq.n, params.dims().hidden, rng))
        }
    };
    let cache = forward_with_masks(seq, params, masks)?;
    Ok((cache.probability, cache))
}

/// Evaluation-mode probability.
pub fn predict<T: Scalar>(seq: &FeatureSequence<T>, params: &NetworkParams<T>) -> Result<T> {
    Ok(forward_with_masks(seq, params, None)?.probability)
}

/// Backpropagation through both layers. `d_out[t]` is the gradient w.r.t.
/// the layer's output `z_t`. Returns the gradient w.r.t. each input when
/// `want_dx`.
fn backward_layer<T: Scalar>(
    cache: &LayerCache<T>,
    inputs: &[&[T]],
    mask: Option<&[Vec<T>]>,
    d_out: &[Vec<T>],
    params: &LstmCellParams<T>,
    grads: &mut LstmCellParams<T>,
    want_dx: bool,
) -> Option<Vec<Vec<T>>> {
    let hidden = params.hidden();
    let zeros = vec![T::zero(); hidden];
    let mut dh_next = vec![T::zero(); hidden];
    let mut dc_next = vec![T::zero(); hidden];
    let mut dxs = want_dx.then(|| vec![vec![T::zero(); params.input_width()]; inputs.len()]);
    for t in (0..cache.steps.len()).rev() {
        let step = &cache.steps[t];
        let mut dh = dh_next;
        for k in 0..hidden {
            let mut g = d_out[t][k];
            if let Some(mask) = mask {
                g *= mask[t][k];
            }
            if step.h[k] > T::zero() {
                dh[k] += g;
            }
        }
        let (h_prev, c_prev) = if t > 0 { (&cache.steps[t - 1].h, &cache.steps[t - 1].c) } else { (&zeros, &zeros) };
        let mut dh_prev = vec![T::zero(); hidden];
        let dx = dxs.as_mut().map(|d| d[t].as_mut_slice());
        dc_next = cell_backward(step, inputs[t], h_prev, c_prev, &dh, &dc_next, params, grads, &mut dh_prev, dx);
        dh_next = dh_prev;
    }
    dxs
}

/// Gradient of the binary cross-entropy of the cached probability against
/// `label`, w.r.t. every parameter. Dropout masks in the cache are reused.
pub fn network_backward<T: Scalar>(
    cache: &ForwardCache<T>,
    seq: &FeatureSequence<T>,
    params: &NetworkParams<T>,
    label: Label,
) -> Result<Gradients<T>> {
    let dims = params.dims();
    if cache.input_width != seq.width || seq.width != dims.input_width {
        return Err(Error::StaleCache(format!(
            "input width: cache {}, sequence {}, parameters {}",
            cache.input_width, seq.width, dims.input_width
        )));
    }
    for (l, layer) in cache.layers.iter().enumerate() {
        if layer.steps.len() != seq.n || layer.steps.iter().any(|s| s.h.len() != dims.hidden) {
            return Err(Error::StaleCache(format!(
                "layer {} holds {} steps for a sequence of {}",
                l + 1,
                layer.steps.len(),
                seq.n
            )));
        }
    }
    if cache.fc_out.len() != dims.fc_width {
        return Err(Error::StaleCache(format!("fc width {} vs {}", cache.fc_out.len(), dims.fc_width)));
    }

    let mut grads = NetworkParams::zeros(&dims);
    // d(BCE)/d(logit) for a sigmoid output.
    let y = T::lit(f64::from(label.as_u8()));
    let d_logit = cache.probability - y;
    grads.out.b[0] = d_logit;
    for (g, &r) in grads.out.w.data.iter_mut().zip(&cache.fc_out) {
        *g = d_logit * r;
    }
    let d_fc_pre: Vec<T> = (0..dims.fc_width)
        .map(|k| if cache.fc_pre[k] > T::zero() { d_logit * params.out.w.data[k] } else { T::zero() })
        .collect();
    let last = cache.layers[1].outputs.last().expect("nonempty");
    grads.fc.w.add_outer(&d_fc_pre, last);
    grads.fc.b.copy_from_slice(&d_fc_pre);

    let mut d_z2 = vec![vec![T::zero(); dims.hidden]; seq.n];
    params.fc.w.mul_t_vec_acc(&d_fc_pre, &mut d_z2[seq.n - 1]);

    let masks = cache.masks.as_ref();
    let l1_out: Vec<&[T]> = cache.layers[0].outputs.iter().map(Vec::as_slice).collect();
    let d_z1 = backward_layer(
        &cache.layers[1],
        &l1_out,
        masks.map(|m| m.layers[1].as_slice()),
        &d_z2,
        &params.layer2,
        &mut grads.layer2,
        true,
    )
    .expect("requested input gradient");
    let inputs: Vec<&[T]> = seq.steps().collect();
    backward_layer(
        &cache.layers[0],
        &inputs,
        masks.map(|m| m.layers[0].as_slice()),
        &d_z1,
        &params.layer1,
        &mut grads.layer1,
        false,
    );
    Ok(grads)
}
