use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Scalar};

use super::matrix::Matrix;

/// Input weights `(H × D)`, recurrent weights `(H × H)` and bias of one gate.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams<T> {
    pub w_x: Matrix<T>,
    pub w_h: Matrix<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> GateParams<T> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        GateParams { w_x: Matrix::zeros(hidden, input), w_h: Matrix::zeros(hidden, hidden), b: vec![T::zero(); hidden] }
    }

    /// `W_x x + W_h h + b`
    fn preactivation(&self, x: &[T], h: &[T]) -> Vec<T> {
        let mut a = self.b.clone();
        self.w_x.mul_vec_acc(x, &mut a);
        self.w_h.mul_vec_acc(h, &mut a);
        a
    }
}

/// Parameters of one LSTM layer: forget, input, output and candidate gates.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellParams<T> {
    pub forget: GateParams<T>,
    pub input: GateParams<T>,
    pub output: GateParams<T>,
    pub candidate: GateParams<T>,
}

impl<T: Scalar> LstmCellParams<T> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmCellParams {
            forget: GateParams::zeros(input, hidden),
            input: GateParams::zeros(input, hidden),
            output: GateParams::zeros(input, hidden),
            candidate: GateParams::zeros(input, hidden),
        }
    }

    pub fn input_width(&self) -> usize {
        self.forget.w_x.cols
    }

    pub fn hidden(&self) -> usize {
        self.forget.w_x.rows
    }

    /// Gates in canonical order `f, i, o, c`.
    pub fn gates(&self) -> [&GateParams<T>; 4] {
        [&self.forget, &self.input, &self.output, &self.candidate]
    }

    pub fn gates_mut(&mut self) -> [&mut GateParams<T>; 4] {
        [&mut self.forget, &mut self.input, &mut self.output, &mut self.candidate]
    }
}

/// Activations of one cell at one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct CellStep<T> {
    pub f: Vec<T>,
    pub i: Vec<T>,
    pub o: Vec<T>,
    /// Candidate `tanh(W_xc x + W_hc h + b_c)`.
    pub g: Vec<T>,
    pub c: Vec<T>,
    pub tanh_c: Vec<T>,
    pub h: Vec<T>,
}

/// One LSTM step:
///
/// ```text
/// f = σ(W_xf x + W_hf h_prev + b_f)
/// i = σ(W_xi x + W_hi h_prev + b_i)
/// o = σ(W_xo x + W_ho h_prev + b_o)
/// c = f ⊙ c_prev + i ⊙ tanh(W_xc x + W_hc h_prev + b_c)
/// h = o ⊙ tanh(c)
/// ```
pub fn lstm_cell_forward<T: Scalar>(
    x: &[T],
    h_prev: &[T],
    c_prev: &[T],
    params: &LstmCellParams<T>,
) -> Result<CellStep<T>> {
    let (d, h) = (params.input_width(), params.hidden());
    if x.len() != d {
        return Err(Error::shape("cell input", d, x.len()));
    }
    if h_prev.len() != h {
        return Err(Error::shape("previous hidden state", h, h_prev.len()));
    }
    if c_prev.len() != h {
        return Err(Error::shape("previous cell state", h, c_prev.len()));
    }
    let gate = |p: &GateParams<T>, act: fn(T) -> T| -> Vec<T> {
        let mut a = p.preactivation(x, h_prev);
        a.iter_mut().for_each(|v| *v = act(*v));
        a
    };
    let f = gate(&params.forget, sigmoid);
    let i = gate(&params.input, sigmoid);
    let o = gate(&params.output, sigmoid);
    let g = gate(&params.candidate, T::tanh);
    let c: Vec<T> = (0..h).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<T> = c.iter().map(|v| v.tanh()).collect();
    let h_out = o.iter().zip(&tanh_c).map(|(&o, &t)| o * t).collect();
    Ok(CellStep { f, i, o, g, c, tanh_c, h: h_out })
}

/// Backpropagates one step. `dh` is the total gradient reaching `h_t`,
/// `dc` the gradient reaching `c_t` from step `t + 1`. Accumulates parameter
/// gradients into `grads`, adds `∂/∂h_prev` into `dh_prev` and `∂/∂x` into
/// `dx` when requested, and returns `∂/∂c_prev`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn cell_backward<T: Scalar>(
    step: &CellStep<T>,
    x: &[T],
    h_prev: &[T],
    c_prev: &[T],
    dh: &[T],
    dc: &[T],
    params: &LstmCellParams<T>,
    grads: &mut LstmCellParams<T>,
    dh_prev: &mut [T],
    dx: Option<&mut [T]>,
) -> Vec<T> {
    let hidden = params.hidden();
    let one = T::one();
    let mut da = [vec![T::zero(); hidden], vec![T::zero(); hidden], vec![T::zero(); hidden], vec![T::zero(); hidden]];
    let mut dc_prev = vec![T::zero(); hidden];
    for k in 0..hidden {
        let (f, i, o, g, tc) = (step.f[k], step.i[k], step.o[k], step.g[k], step.tanh_c[k]);
        let dct = dc[k] + dh[k] * o * (one - tc * tc);
        da[0][k] = dct * c_prev[k] * f * (one - f);
        da[1][k] = dct * g * i * (one - i);
        da[2][k] = dh[k] * tc * o * (one - o);
        da[3][k] = dct * i * (one - g * g);
        dc_prev[k] = dct * f;
    }
    let mut dx = dx;
    for ((gp, gg), dak) in params.gates().into_iter().zip(grads.gates_mut()).zip(&da) {
        gg.w_x.add_outer(dak, x);
        gg.w_h.add_outer(dak, h_prev);
        for (b, &d) in gg.b.iter_mut().zip(dak) {
            *b += d;
        }
        gp.w_h.mul_t_vec_acc(dak, dh_prev);
        if let Some(dx) = dx.as_deref_mut() {
            gp.w_x.mul_t_vec_acc(dak, dx);
        }
    }
    dc_prev
}
