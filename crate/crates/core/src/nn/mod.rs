//! Two-layer LSTM classifier with a hand-derived backward pass.

mod cell;
mod matrix;
mod network;

pub use cell::{lstm_cell_forward, CellStep, GateParams, LstmCellParams};
pub use matrix::Matrix;
pub use network::{
    forward_with_masks, init_params, network_backward, network_forward, predict, DenseParams, DropoutMasks,
    ForwardCache, Gradients, LayerCache, Mode, NetworkDims, NetworkParams, FC_WIDTH,
};
