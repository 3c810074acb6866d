//! Lane-change detection and labeled window extraction.
//!
//! A lane change happens at the first frame carrying the new lane ID
//! (`f_lc`). Its window is the `n` frames strictly before `f_lc`, so the
//! classifier never sees the crossing itself. Lane-keep windows are drawn
//! where the lane stays constant through the window and for `horizon`
//! frames after it.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{write_records, Frame, FrameRecord, Recording, VehicleTrack};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaneChangeEvent {
    pub vehicle_id: u32,
    /// First frame in the new lane.
    pub f_lc: Frame,
    pub from_lane: u32,
    pub to_lane: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Keep = 0,
    Change = 1,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_bool(change: bool) -> Self {
        if change {
            Label::Change
        } else {
            Label::Keep
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.as_u8()
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::Keep),
            1 => Ok(Label::Change),
            _ => Err(format!("label must be 0 or 1, got {v}")),
        }
    }
}

/// `n` ego frames ending at `anchor_frame`, with their label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub recording_id: u32,
    pub vehicle_id: u32,
    pub frames: Vec<FrameRecord>,
    pub label: Label,
    pub anchor_frame: Frame,
}

impl LabeledWindow {
    pub fn key(&self) -> (u32, u32) {
        (self.recording_id, self.vehicle_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowSpec {
    /// Frames per window.
    pub n: usize,
    /// Frame step between consecutive window entries.
    pub stride: usize,
    /// Lane-keep anchors must precede any lane change by at least this many frames.
    pub horizon: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec { n: 5, stride: 1, horizon: 25 }
    }
}

impl WindowSpec {
    pub fn with_n(n: usize) -> Self {
        WindowSpec { n, ..Self::default() }
    }

    pub fn check(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("window length n must be at least 1".into()));
        }
        if self.stride == 0 {
            return Err(Error::InvalidConfig("window stride must be at least 1".into()));
        }
        Ok(())
    }

    /// Frames from the first window entry to the anchor, inclusive.
    fn span(&self) -> usize {
        (self.n - 1) * self.stride + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowRejection {
    InsufficientHistory,
    OverlappingEvent,
}

pub fn detect_lane_changes(track: &VehicleTrack) -> Vec<LaneChangeEvent> {
    track
        .records
        .windows(2)
        .filter(|p| p[0].lane_id != p[1].lane_id)
        .map(|p| LaneChangeEvent {
            vehicle_id: track.vehicle_id,
            f_lc: p[1].frame,
            from_lane: p[0].lane_id,
            to_lane: p[1].lane_id,
        })
        .collect()
}

/// Samples `spec.n` frames ending at `anchor`. Requires every frame of the
/// span to be present and in one lane.
fn slice_window(
    track: &VehicleTrack,
    anchor: Frame,
    spec: &WindowSpec,
) -> std::result::Result<Vec<FrameRecord>, WindowRejection> {
    let start = anchor - (spec.span() as Frame - 1);
    let (Some(first), Some(last)) = (track.position(start), track.position(anchor)) else {
        return Err(WindowRejection::InsufficientHistory);
    };
    let span = &track.records[first..=last];
    if span.len() != spec.span() {
        return Err(WindowRejection::InsufficientHistory);
    }
    if span.iter().any(|r| r.lane_id != span[0].lane_id) {
        return Err(WindowRejection::OverlappingEvent);
    }
    Ok(span.iter().step_by(spec.stride).copied().collect())
}

pub fn extract_lc_window(
    recording_id: u32,
    track: &VehicleTrack,
    event: &LaneChangeEvent,
    spec: &WindowSpec,
) -> std::result::Result<LabeledWindow, WindowRejection> {
    let anchor = event.f_lc - 1;
    let frames = slice_window(track, anchor, spec)?;
    Ok(LabeledWindow { recording_id, vehicle_id: track.vehicle_id, frames, label: Label::Change, anchor_frame: anchor })
}

/// Lane-keep anchor candidates of one track as inclusive index ranges.
fn keep_anchor_ranges(track: &VehicleTrack, spec: &WindowSpec) -> Vec<(usize, usize)> {
    let lead = spec.span() - 1;
    let mut ranges = Vec::new();
    let mut run_start = 0;
    let records = &track.records;
    for i in 0..records.len() {
        let run_ends = i + 1 == records.len()
            || records[i + 1].lane_id != records[i].lane_id
            || records[i + 1].frame != records[i].frame + 1;
        if run_ends {
            let (lo, hi) = (run_start + lead, i.checked_sub(spec.horizon));
            if let Some(hi) = hi {
                if lo <= hi {
                    ranges.push((lo, hi));
                }
            }
            run_start = i + 1;
        }
    }
    ranges
}

#[derive(Debug, Clone, Default)]
pub struct KeepSample {
    pub windows: Vec<LabeledWindow>,
    /// Fewer candidates existed than were requested.
    pub shortfall: bool,
}

/// Draws up to `count` lane-keep windows uniformly from all candidate
/// anchors, iterating recordings, vehicles and frames in ascending order.
pub fn sample_lk_windows(recordings: &[Recording], spec: &WindowSpec, count: usize, seed: u64) -> KeepSample {
    struct Pool<'a> {
        recording_id: u32,
        track: &'a VehicleTrack,
        ranges: Vec<(usize, usize)>,
        offset: usize,
    }
    let mut pools = Vec::new();
    let mut total = 0usize;
    for rec in recordings {
        for track in rec.tracks() {
            let ranges = keep_anchor_ranges(track, spec);
            let size: usize = ranges.iter().map(|(lo, hi)| hi - lo + 1).sum();
            if size > 0 {
                pools.push(Pool { recording_id: rec.id(), track, ranges, offset: total });
                total += size;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks =
        if count >= total { (0..total).collect() } else { index::sample(&mut rng, total, count).into_vec() };
    picks.sort_unstable();

    let windows = picks
        .into_iter()
        .map(|g| {
            let p = pools.partition_point(|p| p.offset <= g) - 1;
            let pool = &pools[p];
            let mut local = g - pool.offset;
            let mut idx = 0;
            for &(lo, hi) in &pool.ranges {
                let len = hi - lo + 1;
                if local < len {
                    idx = lo + local;
                    break;
                }
                local -= len;
            }
            let anchor = pool.track.records[idx].frame;
            let frames = slice_window(pool.track, anchor, spec).expect("candidate anchors have clean windows");
            LabeledWindow {
                recording_id: pool.recording_id,
                vehicle_id: pool.track.vehicle_id,
                frames,
                label: Label::Keep,
                anchor_frame: anchor,
            }
        })
        .collect();
    KeepSample { windows, shortfall: count > total }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionStats {
    pub events: usize,
    pub insufficient_history: usize,
    pub overlapping: usize,
    pub keep_shortfall: bool,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<LabeledWindow>,
    pub test: Vec<LabeledWindow>,
    pub stats: ExtractionStats,
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Balanced 1:1 dataset split by vehicle so no vehicle is on both sides.
pub fn build_dataset(recordings: &[Recording], spec: &WindowSpec, seed: u64, split_fraction: f64) -> Result<Dataset> {
    spec.check()?;
    if !(split_fraction > 0.0 && split_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("split_fraction must lie in (0, 1), got {split_fraction}")));
    }
    let mut stats = ExtractionStats::default();
    let mut changes = Vec::new();
    for rec in recordings {
        for track in rec.tracks() {
            for event in detect_lane_changes(track) {
                stats.events += 1;
                match extract_lc_window(rec.id(), track, &event, spec) {
                    Ok(w) => changes.push(w),
                    Err(WindowRejection::InsufficientHistory) => stats.insufficient_history += 1,
                    Err(WindowRejection::OverlappingEvent) => stats.overlapping += 1,
                }
            }
        }
    }
    if changes.is_empty() {
        return Err(Error::EmptyClass("lane change"));
    }
    let keeps = sample_lk_windows(recordings, spec, changes.len(), derive_seed(seed, 1));
    stats.keep_shortfall = keeps.shortfall;
    let keeps = keeps.windows;
    if keeps.is_empty() {
        return Err(Error::EmptyClass("lane keep"));
    }
    if keeps.len() < changes.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
        let mut keep_idx = index::sample(&mut rng, changes.len(), keeps.len()).into_vec();
        keep_idx.sort_unstable();
        changes = keep_idx.into_iter().map(|i| changes[i].clone()).collect();
    }

    // Vehicles with a lane-change window form one stratum, the rest another.
    let mut per_vehicle: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for w in changes.iter().chain(&keeps) {
        *per_vehicle.entry(w.key()).or_default() += 1;
    }
    let changers: BTreeSet<(u32, u32)> = changes.iter().map(|w| w.key()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3));
    let mut train_keys = BTreeSet::new();
    for stratum_is_changer in [true, false] {
        let mut keys: Vec<(u32, u32)> =
            per_vehicle.keys().copied().filter(|k| changers.contains(k) == stratum_is_changer).collect();
        keys.shuffle(&mut rng);
        let total: usize = keys.iter().map(|k| per_vehicle[k]).sum();
        let target = (split_fraction * total as f64).round() as usize;
        let mut taken = 0usize;
        for key in keys {
            let c = per_vehicle[&key];
            if (taken + c).abs_diff(target) <= taken.abs_diff(target) {
                taken += c;
                train_keys.insert(key);
            }
        }
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for w in changes.into_iter().chain(keeps) {
        if train_keys.contains(&w.key()) {
            train.push(w);
        } else {
            test.push(w);
        }
    }
    let order = |a: &LabeledWindow, b: &LabeledWindow| {
        (a.key(), a.anchor_frame, a.label).cmp(&(b.key(), b.anchor_frame, b.label))
    };
    train.sort_by(order);
    test.sort_by(order);
    Ok(Dataset { train, test, stats })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub recording_id: u32,
    pub vehicle_id: u32,
    pub anchor_frame: Frame,
    pub label: Label,
    pub split: Split,
}

/// Reproducibility record of an extracted dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub window: WindowSpec,
    pub split_fraction: f64,
    pub stats: ExtractionStats,
    pub windows: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(dataset: &Dataset, spec: &WindowSpec, seed: u64, split_fraction: f64) -> Self {
        let entries = [(Split::Train, &dataset.train), (Split::Test, &dataset.test)]
            .into_iter()
            .flat_map(|(split, ws)| ws.iter().map(move |w| (split, w)))
            .enumerate()
            .map(|(i, (split, w))| ManifestEntry {
                file: format!("windows/{i:06}.csv"),
                recording_id: w.recording_id,
                vehicle_id: w.vehicle_id,
                anchor_frame: w.anchor_frame,
                label: w.label,
                split,
            })
            .collect();
        DatasetManifest { seed, window: *spec, split_fraction, stats: dataset.stats.clone(), windows: entries }
    }

    /// Writes `manifest.json` and one CSV per window under `dir`.
    pub fn write(&self, dir: &Path, dataset: &Dataset) -> Result<()> {
        let windows_dir = dir.join("windows");
        fs::create_dir_all(&windows_dir).map_err(|e| Error::io(&windows_dir, e))?;
        for (entry, w) in self.windows.iter().zip(dataset.train.iter().chain(&dataset.test)) {
            let path = dir.join(&entry.file);
            let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            write_records(std::io::BufWriter::new(file), &w.frames)?;
        }
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Re-slices the listed windows from the recordings.
    pub fn resolve(&self, recordings: &[Recording]) -> Result<Dataset> {
        let mut dataset = Dataset { train: Vec::new(), test: Vec::new(), stats: self.stats.clone() };
        for e in &self.windows {
            let rec = recordings.iter().find(|r| r.id() == e.recording_id).ok_or_else(|| {
                Error::InvalidConfig(format!("manifest refers to missing recording {}", e.recording_id))
            })?;
            let track = rec
                .track(e.vehicle_id)
                .ok_or(Error::UnknownVehicle { recording_id: e.recording_id, vehicle_id: e.vehicle_id })?;
            let frames = slice_window(track, e.anchor_frame, &self.window).map_err(|r| {
                Error::InvalidConfig(format!(
                    "manifest window of vehicle {} at frame {} no longer valid: {r:?}",
                    e.vehicle_id, e.anchor_frame
                ))
            })?;
            let w = LabeledWindow {
                recording_id: e.recording_id,
                vehicle_id: e.vehicle_id,
                frames,
                label: e.label,
                anchor_frame: e.anchor_frame,
            };
            match e.split {
                Split::Train => dataset.train.push(w),
                Split::Test => dataset.test.push(w),
            }
        }
        Ok(dataset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::RecordingMeta;

    pub(crate) fn track_from_lanes(vehicle_id: u32, first_frame: Frame, lanes: &[u32]) -> VehicleTrack {
        let records = lanes
            .iter()
            .enumerate()
            .map(|(i, &lane_id)| FrameRecord {
                frame: first_frame + i as Frame,
                vehicle_id,
                x: i as f64,
                y: 0.0,
                x_vel: 25.0,
                y_vel: 0.0,
                x_acc: 0.0,
                y_acc: 0.0,
                neighbor_ids: [0; 8],
                lane_id,
            })
            .collect();
        VehicleTrack { vehicle_id, records }
    }

    fn recording(tracks: Vec<VehicleTrack>) -> Recording {
        Recording::new(RecordingMeta { recording_id: 1, frame_rate: 25.0, lane_count: 4 }, tracks)
    }

    fn sample_lanes() -> (Frame, Vec<u32>) {
        let mut lanes = vec![3; 11];
        lanes.extend([2; 6]);
        (1137, lanes)
    }

    #[test]
    fn sample_transition_detected() {
        let (first, lanes) = sample_lanes();
        let track = track_from_lanes(48, first, &lanes);
        let events = detect_lane_changes(&track);
        assert_eq!(events, vec![LaneChangeEvent { vehicle_id: 48, f_lc: 1148, from_lane: 3, to_lane: 2 }]);
    }

    #[test]
    fn constant_lane_has_no_events() {
        assert!(detect_lane_changes(&track_from_lanes(1, 0, &[2; 40])).is_empty());
    }

    #[test]
    fn lc_window_precedes_change() {
        let (first, lanes) = sample_lanes();
        let track = track_from_lanes(48, first, &lanes);
        let event = detect_lane_changes(&track)[0];
        let w = extract_lc_window(1, &track, &event, &WindowSpec::with_n(5)).unwrap();
        assert_eq!(w.frames.iter().map(|r| r.frame).collect::<Vec<_>>(), vec![1143, 1144, 1145, 1146, 1147]);
        assert_eq!(w.label, Label::Change);
        assert_eq!(w.anchor_frame, 1147);
        assert_eq!(w.frames.last().unwrap().lane_id, event.from_lane);
    }

    #[test]
    fn lc_window_rejections() {
        let track = track_from_lanes(1, 0, &[1, 1, 2, 2, 2, 2, 2, 2]);
        let event = detect_lane_changes(&track)[0];
        assert_eq!(
            extract_lc_window(1, &track, &event, &WindowSpec::with_n(5)),
            Err(WindowRejection::InsufficientHistory)
        );
        let track = track_from_lanes(1, 0, &[1, 1, 1, 1, 1, 1, 1, 2, 2, 2, 3, 3]);
        let events = detect_lane_changes(&track);
        assert_eq!(events.len(), 2);
        assert_eq!(events[1].f_lc - events[0].f_lc, 3);
        assert!(extract_lc_window(1, &track, &events[0], &WindowSpec::with_n(5)).is_ok());
        assert_eq!(
            extract_lc_window(1, &track, &events[1], &WindowSpec::with_n(5)),
            Err(WindowRejection::OverlappingEvent)
        );
    }

    #[test]
    fn strided_window() {
        let track = track_from_lanes(1, 0, &[[1; 20].as_slice(), &[2; 3]].concat());
        let event = detect_lane_changes(&track)[0];
        let spec = WindowSpec { n: 3, stride: 4, horizon: 25 };
        let w = extract_lc_window(1, &track, &event, &spec).unwrap();
        assert_eq!(w.frames.iter().map(|r| r.frame).collect::<Vec<_>>(), vec![11, 15, 19]);
    }

    #[test]
    fn keep_sampling_respects_horizon() {
        // Every frame is within the horizon of a lane change.
        let busy: Vec<u32> = (0..60).map(|i| 1 + (i / 10) % 2).collect();
        let rec = recording(vec![track_from_lanes(1, 0, &busy)]);
        let sample = sample_lk_windows(&[rec.clone()], &WindowSpec::with_n(5), 10, 3);
        assert!(sample.windows.is_empty());
        assert!(sample.shortfall);
        let none = sample_lk_windows(&[rec], &WindowSpec::with_n(5), 0, 3);
        assert!(none.windows.is_empty() && !none.shortfall);
    }

    #[test]
    fn keep_candidates_by_enumeration() {
        // lanes: 40 frames lane 1, then lane 2 for 40 frames
        let lanes: Vec<u32> = [[1u32; 40], [2u32; 40]].concat();
        let track = track_from_lanes(1, 0, &lanes);
        let spec = WindowSpec::with_n(5);
        let rec = recording(vec![track.clone()]);
        let all = sample_lk_windows(&[rec], &spec, usize::MAX, 0).windows;
        // Brute force: anchors a where a-4 >= run start and a+25 stays in the run.
        let expected: Vec<Frame> = (0..80).filter(|&a| (a >= 4 && a + 25 <= 39) || (a >= 44 && a + 25 <= 79)).collect();
        assert_eq!(all.iter().map(|w| w.anchor_frame).collect::<Vec<_>>(), expected);
    }

    #[test]
    fn keep_sampling_deterministic() {
        let rec = recording((1..=5).map(|v| track_from_lanes(v, 0, &[1; 200])).collect());
        let a = sample_lk_windows(&[rec.clone()], &WindowSpec::with_n(5), 50, 11);
        let b = sample_lk_windows(&[rec.clone()], &WindowSpec::with_n(5), 50, 11);
        let c = sample_lk_windows(&[rec], &WindowSpec::with_n(5), 50, 12);
        assert_eq!(a.windows, b.windows);
        assert_ne!(a.windows, c.windows);
        assert_eq!(a.windows.len(), 50);
    }

    #[test]
    fn dataset_is_balanced_and_vehicle_disjoint() {
        // 10 changers, 50 keepers with a single candidate window each.
        let mut tracks = Vec::new();
        for v in 1..=10 {
            tracks.push(track_from_lanes(v, 0, &[[1u32; 8].as_slice(), &[2u32; 2]].concat()));
        }
        for v in 11..=60 {
            tracks.push(track_from_lanes(v, 0, &[1; 30]));
        }
        let rec = recording(tracks);
        let ds = build_dataset(&[rec], &WindowSpec::with_n(5), 9, 0.8).unwrap();
        let all: Vec<_> = ds.train.iter().chain(&ds.test).collect();
        assert_eq!(all.len(), 20);
        assert_eq!(all.iter().filter(|w| w.label == Label::Change).count(), 10);
        assert!(ds.train.len().abs_diff(16) <= 1, "train {}", ds.train.len());
        let train_ids: BTreeSet<_> = ds.train.iter().map(|w| w.key()).collect();
        assert!(ds.test.iter().all(|w| !train_ids.contains(&w.key())));
    }

    #[test]
    fn dataset_requires_lane_changes() {
        let rec = recording(vec![track_from_lanes(1, 0, &[1; 100])]);
        assert!(matches!(build_dataset(&[rec], &WindowSpec::default(), 0, 0.8), Err(Error::EmptyClass(_))));
    }

    #[test]
    fn manifest_resolves_to_same_windows() {
        let mut tracks = Vec::new();
        for v in 1..=6 {
            tracks.push(track_from_lanes(v, 0, &[[1u32; 40].as_slice(), &[2u32; 40]].concat()));
        }
        let rec = recording(tracks);
        let spec = WindowSpec::default();
        let ds = build_dataset(&[rec.clone()], &spec, 5, 0.5).unwrap();
        let manifest = DatasetManifest::new(&ds, &spec, 5, 0.5);
        let json = serde_json::to_string(&manifest).unwrap();
        let back: DatasetManifest = serde_json::from_str(&json).unwrap();
        let resolved = back.resolve(&[rec]).unwrap();
        assert_eq!(resolved.train, ds.train);
        assert_eq!(resolved.test, ds.test);
    }
}
