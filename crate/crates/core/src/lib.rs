//! Lane-change prediction on highway trajectory recordings.
//!
//! The pipeline reads HighD-style track files, cuts lane-change and
//! lane-keep windows around lane-ID transitions, encodes them as relative
//! neighbor features (ACC or CACC sensing), and trains a two-layer LSTM
//! classifier whose forward and backward passes are written out by hand.
//!
//! Network, optimizer and metric code is generic over [`Scalar`]; the
//! aliases below fix the common instantiations.

pub mod checkpoint;
pub mod error;
pub mod evaluation;
pub mod events;
pub mod experiments;
pub mod features;
pub mod nn;
pub mod scalar;
pub mod synthgen;
pub mod training;
pub mod trajectory;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision network parameters (training default).
pub type NetworkParams64 = nn::NetworkParams<f64>;
/// Single-precision network parameters (inference only).
pub type NetworkParams32 = nn::NetworkParams<f32>;
pub type ForwardCache64 = nn::ForwardCache<f64>;
pub type FeatureSequence64 = features::FeatureSequence<f64>;
pub type FeatureSequence32 = features::FeatureSequence<f32>;
pub type RmspropState64 = training::RmspropState<f64>;
