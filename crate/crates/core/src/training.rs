//! Mini-batch training with binary cross-entropy and RMSprop.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{confusion, metrics, MetricsReport};
use crate::events::Label;
use crate::features::FeatureSequence;
use crate::nn::{init_params, network_backward, network_forward, predict, Gradients, Mode, NetworkDims, NetworkParams};
use crate::scalar::Scalar;

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` inside the loss.
pub const BCE_CLAMP: f64 = 1e-12;

/// Binary cross-entropy and its derivative w.r.t. `p`.
pub fn bce_loss<T: Scalar>(p: T, label: Label) -> (T, T) {
    let eps = T::lit(BCE_CLAMP);
    let one = T::one();
    let p = p.max(eps).min(one - eps);
    let y = T::lit(f64::from(label.as_u8()));
    let loss = -(y * p.ln() + (one - y) * (one - p).ln());
    let grad = -(y / p) + (one - y) / (one - p);
    (loss, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    /// Epochs without improvement before stopping.
    pub patience: usize,
    pub min_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    pub seed: u64,
    pub gradient_clip_norm: Option<f64>,
    pub early_stop: Option<EarlyStop>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 100,
            dropout_rate: 0.2,
            learning_rate: 1e-3,
            rmsprop_decay: 0.9,
            rmsprop_epsilon: 1e-8,
            seed: 0,
            gradient_clip_norm: Some(5.0),
            early_stop: None,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if !(self.learning_rate >= 0.0) {
            return bad(format!("learning_rate must be non-negative, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.rmsprop_decay) {
            return bad(format!("rmsprop_decay must lie in [0, 1), got {}", self.rmsprop_decay));
        }
        if !(self.rmsprop_epsilon > 0.0) {
            return bad("rmsprop_epsilon must be positive".into());
        }
        if let Some(c) = self.gradient_clip_norm {
            if !(c > 0.0) {
                return bad(format!("gradient_clip_norm must be positive, got {c}"));
            }
        }
        Ok(())
    }

    pub fn rmsprop(&self) -> RmspropConfig {
        RmspropConfig {
            learning_rate: self.learning_rate,
            decay: self.rmsprop_decay,
            epsilon: self.rmsprop_epsilon,
            clip_norm: self.gradient_clip_norm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmspropConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    /// Rescale the whole gradient to at most this Euclidean norm first.
    pub clip_norm: Option<f64>,
}

/// Running mean of squared gradients, one entry per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct RmspropState<T> {
    pub mean_square: NetworkParams<T>,
}

impl<T: Scalar> RmspropState<T> {
    pub fn new(dims: &NetworkDims) -> Self {
        RmspropState { mean_square: NetworkParams::zeros(dims) }
    }
}

/// Elementwise update on flat slices:
/// `s ← ρ s + (1 − ρ) g²`, `θ ← θ − lr g / (√s + ε)`.
pub fn rmsprop_update<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    state: &mut [T],
    learning_rate: T,
    decay: T,
    epsilon: T,
) {
    let one = T::one();
    for ((p, &g), s) in params.iter_mut().zip(grads).zip(state.iter_mut()) {
        *s = decay * *s + (one - decay) * g * g;
        *p -= learning_rate * g / (s.sqrt() + epsilon);
    }
}

pub fn rmsprop_step<T: Scalar>(
    params: &mut NetworkParams<T>,
    grads: &Gradients<T>,
    state: &mut RmspropState<T>,
    config: &RmspropConfig,
) {
    let mut scale = T::one();
    if let Some(max) = config.clip_norm {
        let norm = grads.norm();
        let max = T::lit(max);
        if norm > max {
            scale = max / norm;
        }
    }
    let (lr, decay, eps) = (T::lit(config.learning_rate), T::lit(config.decay), T::lit(config.epsilon));
    for ((p, g), s) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(state.mean_square.tensors_mut()) {
        if scale == T::one() {
            rmsprop_update(p, g, s, lr, decay, eps);
        } else {
            let clipped: Vec<T> = g.iter().map(|&v| v * scale).collect();
            rmsprop_update(p, &clipped, s, lr, decay, eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub validation: Option<MetricsReport>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    /// CSV with columns `epoch,loss,acc,val_acc,seconds`. Wall-clock seconds
    /// are written only when `with_timing`; otherwise the column reads `n/a`
    /// so reruns stay byte-identical.
    pub fn to_csv(&self, with_timing: bool) -> String {
        let mut out = String::from("epoch,loss,acc,val_acc,seconds\n");
        for e in &self.epochs {
            let val = e
                .validation
                .as_ref()
                .map_or_else(|| "n/a".to_string(), |m| crate::evaluation::format_fraction(m.accuracy));
            let secs = if with_timing { format!("{:.3}", e.seconds) } else { "n/a".into() };
            let _ = writeln!(out, "{},{:.6},{:.6},{},{}", e.epoch, e.loss, e.accuracy, val, secs);
        }
        out
    }

    pub fn total_seconds(&self) -> f64 {
        self.epochs.iter().map(|e| e.seconds).sum()
    }
}

struct ExampleResult<T> {
    grads: Gradients<T>,
    loss: T,
    correct: bool,
}

fn example_pass<T: Scalar>(
    seq: &FeatureSequence<T>,
    params: &NetworkParams<T>,
    dropout_rate: f64,
    seed: u64,
) -> Result<ExampleResult<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (p, cache) = network_forward(seq, params, Mode::Train { dropout_rate }, &mut rng)?;
    let grads = network_backward(&cache, seq, params, seq.label)?;
    let (loss, _) = bce_loss(p, seq.label);
    let correct = (p >= T::lit(0.5)) == (seq.label == Label::Change);
    Ok(ExampleResult { grads, loss, correct })
}

pub fn evaluate<T: Scalar>(params: &NetworkParams<T>, data: &[FeatureSequence<T>]) -> Result<MetricsReport> {
    let probs = data.par_iter().map(|s| predict(s, params)).collect::<Result<Vec<T>>>()?;
    let labels: Vec<Label> = data.iter().map(|s| s.label).collect();
    Ok(metrics(&confusion(&probs, &labels, T::lit(0.5))?))
}

/// Trains from a fresh initialization seeded by `config.seed`.
///
/// Per-example gradients of a batch may be computed in parallel; they are
/// summed in example order, so results do not depend on the thread count.
pub fn train<T: Scalar>(
    data: &[FeatureSequence<T>],
    dims: &NetworkDims,
    config: &TrainConfig,
    validation: Option<&[FeatureSequence<T>]>,
) -> Result<(NetworkParams<T>, TrainHistory)> {
    config.check()?;
    dims.check()?;
    if !data.iter().any(|s| s.label == Label::Change) {
        return Err(Error::EmptyClass("lane change"));
    }
    if !data.iter().any(|s| s.label == Label::Keep) {
        return Err(Error::EmptyClass("lane keep"));
    }
    if let Some(bad) = data.iter().find(|s| s.width != dims.input_width) {
        return Err(Error::shape("training sequence width", dims.input_width, bad.width));
    }

    let mut params = init_params::<T>(config.seed, dims);
    let mut state = RmspropState::new(dims);
    let opt = config.rmsprop();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005E_ED0F_7EA1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = TrainHistory::default();
    let (mut best, mut stale) = (f64::INFINITY, 0usize);

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for batch in order.chunks(config.batch_size) {
            let seeds: Vec<u64> = batch.iter().map(|_| rng.random()).collect();
            let results = batch
                .par_iter()
                .zip(seeds.par_iter())
                .map(|(&i, &s)| example_pass(&data[i], &params, config.dropout_rate, s))
                .collect::<Result<Vec<_>>>()?;
            let mut results = results.into_iter();
            let first = results.next().expect("nonempty batch");
            let mut total = first.grads;
            loss_sum += first.loss.as_f64();
            correct += usize::from(first.correct);
            for r in results {
                total.add_assign(&r.grads);
                loss_sum += r.loss.as_f64();
                correct += usize::from(r.correct);
            }
            total.scale(T::one() / T::lit(batch.len() as f64));
            rmsprop_step(&mut params, &total, &mut state, &opt);
        }
        let validation = validation.map(|v| evaluate(&params, v)).transpose()?;
        let stats = EpochStats {
            epoch,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
            validation,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::debug!("epoch {epoch}: loss {:.5} acc {:.4}", stats.loss, stats.accuracy);
        let monitored = stats.validation.as_ref().and_then(|m| m.accuracy.map(|a| 1.0 - a)).unwrap_or(stats.loss);
        history.epochs.push(stats);
        if let Some(es) = config.early_stop {
            if monitored < best - es.min_delta {
                best = monitored;
                stale = 0;
            } else {
                stale += 1;
                if stale > es.patience {
                    break;
                }
            }
        }
    }
    if !params.all_finite() {
        return Err(Error::InvalidConfig("training diverged to non-finite parameters; lower the learning rate".into()));
    }
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_reference_values() {
        let (l, _) = bce_loss(0.5f64, Label::Change);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let (l, _) = bce_loss(0.5f64, Label::Keep);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let (l, _) = bce_loss(0.9f64, Label::Keep);
        assert!((l - 2.302_585_1).abs() < 1e-7);
        let (l, _) = bce_loss(1.0f64, Label::Change);
        assert!(l >= 0.0 && l < 1e-11);
        let (l, _) = bce_loss(0.0f64, Label::Change);
        assert!(l.is_finite());
    }

    #[test]
    fn bce_derivative_matches_difference() {
        for &(p, y) in &[(0.3f64, Label::Change), (0.8, Label::Keep), (0.55, Label::Change)] {
            let (_, g) = bce_loss(p, y);
            let h = 1e-6;
            let fd = (bce_loss(p + h, y).0 - bce_loss(p - h, y).0) / (2.0 * h);
            assert!((g - fd).abs() < 1e-6, "{g} vs {fd}");
        }
    }

    #[test]
    fn first_rmsprop_step() {
        let (mut p, mut s) = ([0.0f64], [0.0f64]);
        rmsprop_update(&mut p, &[1.0], &mut s, 0.001, 0.9, 1e-8);
        assert!((p[0] + 0.001 / (0.1f64.sqrt() + 1e-8)).abs() < 1e-15);
        assert!((p[0] + 0.003_162_3).abs() < 1e-7);
        assert!((s[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_decays_state_only() {
        let (mut p, mut s) = ([1.5f64, -2.0], [0.4f64, 0.2]);
        rmsprop_update(&mut p, &[0.0, 0.0], &mut s, 0.01, 0.9, 1e-8);
        assert_eq!(p, [1.5, -2.0]);
        assert!((s[0] - 0.36).abs() < 1e-15 && (s[1] - 0.18).abs() < 1e-15);
    }

    #[test]
    fn repeated_gradient_step_tends_to_lr() {
        // Fixed point: s → g², so |Δθ| → lr·|g|/(|g| + ε) ≈ lr.
        let lr = 0.001;
        let (mut p, mut s) = ([0.0f64], [0.0f64]);
        let mut last = 0.0;
        for _ in 0..400 {
            let before = p[0];
            rmsprop_update(&mut p, &[0.7], &mut s, lr, 0.9, 1e-8);
            last = before - p[0];
        }
        assert!((s[0] - 0.49).abs() < 1e-12);
        assert!((last - lr).abs() < 1e-9);
    }

    #[test]
    fn clipping_bounds_the_update_norm() {
        let dims = NetworkDims::new(2, 2);
        let mut params = NetworkParams::<f64>::zeros(&dims);
        let mut grads = NetworkParams::<f64>::zeros(&dims);
        grads.out.b[0] = 100.0;
        let mut state = RmspropState::new(&dims);
        let cfg = RmspropConfig { learning_rate: 1.0, decay: 0.0, epsilon: 0.0, clip_norm: Some(5.0) };
        rmsprop_step(&mut params, &grads, &mut state, &cfg);
        assert_eq!(state.mean_square.out.b[0], 25.0);
        assert_eq!(params.out.b[0], -1.0);
    }

    #[test]
    fn config_checks() {
        assert!(TrainConfig::default().check().is_ok());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.check().is_err());
        assert!(TrainConfig { dropout_rate: 1.0, ..Default::default() }.check().is_err());
        assert!(TrainConfig { learning_rate: -1.0, ..Default::default() }.check().is_err());
    }

    #[test]
    fn history_csv_hides_timing_by_default() {
        let h = TrainHistory {
            epochs: vec![EpochStats { epoch: 1, loss: 0.5, accuracy: 0.75, validation: None, seconds: 1.25 }],
        };
        assert_eq!(h.to_csv(false), "epoch,loss,acc,val_acc,seconds\n1,0.500000,0.750000,n/a,n/a\n");
        assert!(h.to_csv(true).ends_with(",n/a,1.250\n"));
    }
}
