//! Relative neighbor features.
//!
//! Each timestep holds, for every configured slot in canonical order, the
//! configured channels in `dp, dv, da` order. A channel is the Manhattan
//! distance between the ego and neighbor position, velocity or
//! acceleration vectors. An absent neighbor reads as a vehicle at
//! `max_range` moving exactly like the ego.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::events::{Label, LabeledWindow};
use crate::scalar::Scalar;
use crate::trajectory::{FrameRecord, Recording};

pub use crate::trajectory::NeighborSlot;

/// Bumped whenever the column layout of encoded features changes.
pub const FEATURE_ORDERING_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Dp,
    Dv,
    Da,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Dp, Channel::Dv, Channel::Da];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Dp => "dp",
            Channel::Dv => "dv",
            Channel::Da => "da",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Channel::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown channel `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub slots: Vec<NeighborSlot>,
    pub channels: Vec<Channel>,
    pub n: usize,
    /// Distance reported for an absent neighbor, in meters.
    pub max_range: f64,
    /// Min-max scale features with statistics of the training split.
    pub normalize: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        cacc_config()
    }
}

fn canonical<T: Ord + Copy>(items: &[T]) -> Vec<T> {
    let mut v = items.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

impl FeatureConfig {
    pub fn new(slots: &[NeighborSlot], channels: &[Channel]) -> Self {
        FeatureConfig {
            slots: canonical(slots),
            channels: canonical(channels),
            n: 5,
            max_range: 150.0,
            normalize: true,
        }
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    /// Puts slots and channels in canonical order and checks the invariants.
    pub fn canonicalized(mut self) -> Result<Self> {
        self.slots = canonical(&self.slots);
        self.channels = canonical(&self.channels);
        if self.slots.is_empty() {
            return Err(Error::InvalidConfig("feature config needs at least one slot".into()));
        }
        if self.channels.is_empty() {
            return Err(Error::InvalidConfig("feature config needs at least one channel".into()));
        }
        if !(self.max_range > 0.0 && self.max_range.is_finite()) {
            return Err(Error::InvalidConfig(format!("max_range must be positive, got {}", self.max_range)));
        }
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        Ok(self)
    }

    /// Scalars per timestep.
    pub fn width(&self) -> usize {
        self.slots.len() * self.channels.len()
    }

    pub fn total(&self) -> usize {
        self.n * self.width()
    }
}

/// Lead vehicles in all three lanes, position and velocity only.
pub fn acc_config() -> FeatureConfig {
    FeatureConfig::new(&[NeighborSlot::LP, NeighborSlot::PV, NeighborSlot::RP], &[Channel::Dp, Channel::Dv])
}

/// All eight neighbors with position, velocity and acceleration.
pub fn cacc_config() -> FeatureConfig {
    FeatureConfig::new(&NeighborSlot::ALL, &Channel::ALL)
}

/// Following vehicles in all three lanes, all channels.
pub fn followers_config() -> FeatureConfig {
    FeatureConfig::new(&[NeighborSlot::LF, NeighborSlot::FV, NeighborSlot::RF], &Channel::ALL)
}

/// Lead and alongside vehicles, all channels.
pub fn leaders_alongside_config() -> FeatureConfig {
    use NeighborSlot::*;
    FeatureConfig::new(&[LP, PV, RP, LA, RA], &Channel::ALL)
}

/// `n × width` feature matrix, row-major by timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence<T> {
    pub n: usize,
    pub width: usize,
    pub values: Vec<T>,
    pub label: Label,
}

impl<T: Scalar> FeatureSequence<T> {
    pub fn new(n: usize, width: usize, values: Vec<T>, label: Label) -> Result<Self> {
        if values.len() != n * width {
            return Err(Error::shape("feature sequence values", n * width, values.len()));
        }
        Ok(FeatureSequence { n, width, values, label })
    }

    pub fn step(&self, t: usize) -> &[T] {
        &self.values[t * self.width..(t + 1) * self.width]
    }

    pub fn steps(&self) -> impl Iterator<Item = &[T]> {
        self.values.chunks_exact(self.width)
    }

    pub fn cast<U: Scalar>(&self) -> FeatureSequence<U> {
        FeatureSequence {
            n: self.n,
            width: self.width,
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
            label: self.label,
        }
    }
}

/// Resolves the neighbor in `slot` at the ego's frame. `Ok(None)` means the
/// slot is empty.
pub fn resolve_neighbor<'a>(
    ego: &FrameRecord,
    slot: NeighborSlot,
    recording: &'a Recording,
) -> Result<Option<&'a FrameRecord>> {
    let Some(id) = ego.neighbor(slot) else { return Ok(None) };
    recording.record_at(id, ego.frame).map(Some).ok_or(Error::DanglingNeighbor {
        vehicle_id: ego.vehicle_id,
        frame: ego.frame,
        neighbor_id: id,
    })
}

/// `(dp, dv, da)` between ego and neighbor.
pub fn compute_channels(ego: &FrameRecord, neighbor: Option<&FrameRecord>, max_range: f64) -> [f64; 3] {
    match neighbor {
        None => [max_range, 0.0, 0.0],
        Some(nb) => [
            (ego.x - nb.x).abs() + (ego.y - nb.y).abs(),
            (ego.x_vel - nb.x_vel).abs() + (ego.y_vel - nb.y_vel).abs(),
            (ego.x_acc - nb.x_acc).abs() + (ego.y_acc - nb.y_acc).abs(),
        ],
    }
}

/// Encodes a window. `recording` must be the window's own recording.
pub fn encode_window(
    window: &LabeledWindow,
    config: &FeatureConfig,
    recording: &Recording,
) -> Result<FeatureSequence<f64>> {
    if window.frames.len() != config.n {
        return Err(Error::shape("window length", config.n, window.frames.len()));
    }
    let mut values = Vec::with_capacity(config.total());
    for ego in &window.frames {
        for &slot in &config.slots {
            let all = compute_channels(ego, resolve_neighbor(ego, slot, recording)?, config.max_range);
            values.extend(config.channels.iter().map(|&c| all[c as usize]));
        }
    }
    FeatureSequence::new(config.n, config.width(), values, window.label)
}

/// Encodes windows from any of `recordings`.
pub fn encode_windows(
    windows: &[LabeledWindow],
    config: &FeatureConfig,
    recordings: &[Recording],
) -> Result<Vec<FeatureSequence<f64>>> {
    windows
        .iter()
        .map(|w| {
            let rec = recordings
                .iter()
                .find(|r| r.id() == w.recording_id)
                .ok_or(Error::UnknownVehicle { recording_id: w.recording_id, vehicle_id: w.vehicle_id })?;
            encode_window(w, config, rec)
        })
        .collect()
}

/// Per-column min-max scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalizer {
    pub fn fit(training: &[FeatureSequence<f64>]) -> Result<Self> {
        let first =
            training.first().ok_or_else(|| Error::InvalidConfig("cannot fit a normalizer on no sequences".into()))?;
        let width = first.width;
        let mut min = vec![f64::INFINITY; width];
        let mut max = vec![f64::NEG_INFINITY; width];
        for seq in training {
            if seq.width != width {
                return Err(Error::shape("normalizer input width", width, seq.width));
            }
            for row in seq.steps() {
                for (j, &v) in row.iter().enumerate() {
                    min[j] = min[j].min(v);
                    max[j] = max[j].max(v);
                }
            }
        }
        Ok(Normalizer { min, max })
    }

    pub fn width(&self) -> usize {
        self.min.len()
    }

    /// Values outside the fitted range map outside `[0, 1]`; they are not clamped.
    pub fn apply(&self, seq: &FeatureSequence<f64>) -> Result<FeatureSequence<f64>> {
        if seq.width != self.width() {
            return Err(Error::shape("normalizer input width", self.width(), seq.width));
        }
        let values = seq
            .values
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let j = k % seq.width;
                let span = self.max[j] - self.min[j];
                if span > 0.0 {
                    (v - self.min[j]) / span
                } else {
                    0.0
                }
            })
            .collect();
        Ok(FeatureSequence { values, ..seq.clone() })
    }
}

/// Everything needed to reproduce the network's input encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub ordering_version: u32,
    pub slots: Vec<NeighborSlot>,
    pub channels: Vec<Channel>,
    pub n: usize,
    pub stride: usize,
    pub max_range: f64,
    pub normalization: Option<Normalizer>,
}

impl FeatureManifest {
    pub fn new(config: &FeatureConfig, stride: usize, normalization: Option<Normalizer>) -> Self {
        FeatureManifest {
            ordering_version: FEATURE_ORDERING_VERSION,
            slots: config.slots.clone(),
            channels: config.channels.clone(),
            n: config.n,
            stride,
            max_range: config.max_range,
            normalization,
        }
    }

    pub fn config(&self) -> FeatureConfig {
        FeatureConfig {
            slots: self.slots.clone(),
            channels: self.channels.clone(),
            n: self.n,
            max_range: self.max_range,
            normalize: self.normalization.is_some(),
        }
    }

    /// Hex SHA-256 of the manifest's JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("manifest serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn prepare(&self, seq: &FeatureSequence<f64>) -> Result<FeatureSequence<f64>> {
        match &self.normalization {
            Some(norm) => norm.apply(seq),
            None => Ok(seq.clone()),
        }
    }
}

/// Encodes train and test windows, fitting normalization on train only.
pub fn prepare_split(
    train: &[LabeledWindow],
    test: &[LabeledWindow],
    config: &FeatureConfig,
    stride: usize,
    recordings: &[Recording],
) -> Result<(Vec<FeatureSequence<f64>>, Vec<FeatureSequence<f64>>, FeatureManifest)> {
    let train = encode_windows(train, config, recordings)?;
    let test = encode_windows(test, config, recordings)?;
    let normalization = if config.normalize { Some(Normalizer::fit(&train)?) } else { None };
    let manifest = FeatureManifest::new(config, stride, normalization);
    let train = train.iter().map(|s| manifest.prepare(s)).collect::<Result<_>>()?;
    let test = test.iter().map(|s| manifest.prepare(s)).collect::<Result<_>>()?;
    Ok((train, test, manifest))
}
