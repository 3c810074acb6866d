//! Synthetic multi-lane highway recordings with ground-truth lane changes.
//!
//! Geometry: vehicles drive in `+x`; lane `k` covers
//! `y ∈ [(k-1)·w, k·w)` for lane width `w`, and the lane to a vehicle's left
//! has the next higher ID. Every vehicle is present from frame 1 to
//! `duration_frames`. Neighbor columns follow the sensing layout: nearest
//! vehicle ahead/behind in the own lane, and in each adjacent lane the
//! nearest vehicle alongside (`|Δx|` below one vehicle length), ahead and
//! behind.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::LaneChangeEvent;
use crate::trajectory::{write_recording, FrameRecord, NeighborSlot, Recording, RecordingMeta, VehicleTrack};

/// Which kinematic channels separate changers from keepers shortly before
/// the lane crossing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalMode {
    /// A brisk lateral maneuver; no longitudinal signature.
    Velocity,
    /// A longitudinal acceleration oscillation before the crossing. Lateral
    /// cues are masked by a slow maneuver and lateral wander on every vehicle.
    Acceleration,
    /// Brisk maneuver plus the acceleration signature.
    Both,
}

impl SignalMode {
    pub fn has_acceleration(self) -> bool {
        matches!(self, SignalMode::Acceleration | SignalMode::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub recording_id: u32,
    pub vehicle_count: usize,
    pub lane_count: u32,
    pub frame_rate: f64,
    pub duration_frames: usize,
    /// Fraction of vehicles that change lanes (rounded to a whole count).
    pub lane_change_fraction: f64,
    pub changes_per_changer: usize,
    /// Frames from the start to the end of one lateral maneuver.
    pub maneuver_frames: usize,
    pub lane_width: f64,
    pub vehicle_length: f64,
    /// Initial positions are spread uniformly over this many meters.
    pub road_length: f64,
    pub speed_mean: f64,
    pub speed_std: f64,
    /// Stationary std of the random longitudinal acceleration (m/s²).
    pub accel_noise_std: f64,
    /// Correlation time of that acceleration (s).
    pub accel_noise_tau: f64,
    /// Pull back toward the desired speed (1/s).
    pub speed_reversion: f64,
    /// Peak lateral excursion from the lane center (m); 0 disables wander.
    pub lateral_wander: f64,
    pub lateral_wander_period: f64,
    pub signal_mode: SignalMode,
    /// Frames before the crossing that carry the acceleration signature.
    pub signature_frames: usize,
    pub signature_amplitude: f64,
    pub signature_period_frames: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            recording_id: 1,
            vehicle_count: 100,
            lane_count: 3,
            frame_rate: 25.0,
            duration_frames: 250,
            lane_change_fraction: 0.5,
            changes_per_changer: 1,
            maneuver_frames: 50,
            lane_width: 3.75,
            vehicle_length: 4.5,
            road_length: 1500.0,
            speed_mean: 30.0,
            speed_std: 2.0,
            accel_noise_std: 0.2,
            accel_noise_tau: 1.0,
            speed_reversion: 0.3,
            lateral_wander: 0.0,
            lateral_wander_period: 4.0,
            signal_mode: SignalMode::Velocity,
            signature_frames: 25,
            signature_amplitude: 2.0,
            signature_period_frames: 8.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn velocity_signal(seed: u64) -> Self {
        SynthConfig { seed, ..Default::default() }
    }

    pub fn acceleration_signal(seed: u64) -> Self {
        SynthConfig {
            seed,
            signal_mode: SignalMode::Acceleration,
            duration_frames: 400,
            maneuver_frames: 150,
            speed_std: 4.0,
            lateral_wander: 0.8,
            ..Default::default()
        }
    }

    /// Frames a maneuver occupies before its crossing frame, plus the
    /// longest history a window might need.
    fn lead_frames(&self) -> usize {
        (self.maneuver_frames / 2 + 1).max(self.signature_frames) + 16
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.lane_count < 2 {
            return bad(format!("lane_count must be at least 2, got {}", self.lane_count));
        }
        if self.vehicle_count == 0 {
            return bad("vehicle_count must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.lane_change_fraction) {
            return bad(format!("lane_change_fraction must lie in [0, 1], got {}", self.lane_change_fraction));
        }
        if !(self.frame_rate > 0.0) {
            return bad("frame_rate must be positive".into());
        }
        if self.maneuver_frames < 2 {
            return bad("maneuver_frames must be at least 2".into());
        }
        if !(self.lane_width > 0.0 && self.vehicle_length > 0.0 && self.road_length > 0.0) {
            return bad("lane_width, vehicle_length and road_length must be positive".into());
        }
        for (name, v) in [
            ("speed_std", self.speed_std),
            ("accel_noise_std", self.accel_noise_std),
            ("speed_reversion", self.speed_reversion),
            ("signature_amplitude", self.signature_amplitude),
        ] {
            if !(v >= 0.0) {
                return bad(format!("{name} must be non-negative"));
            }
        }
        if !(self.accel_noise_tau > 0.0 && self.lateral_wander_period > 0.0 && self.signature_period_frames > 0.0) {
            return bad("accel_noise_tau, lateral_wander_period and signature_period_frames must be positive".into());
        }
        if !(0.0..self.lane_width / 2.0 - 0.1).contains(&self.lateral_wander) {
            return bad(format!(
                "lateral_wander must lie in [0, {}), got {}",
                self.lane_width / 2.0 - 0.1,
                self.lateral_wander
            ));
        }
        let per_change = self.lead_frames() + self.maneuver_frames / 2 + 2;
        if self.lane_change_fraction > 0.0 && self.changes_per_changer * per_change > self.duration_frames {
            return bad(format!(
                "duration_frames {} cannot hold {} maneuvers of {} frames",
                self.duration_frames, self.changes_per_changer, per_change
            ));
        }
        Ok(())
    }

    fn lane_of(&self, y: f64) -> u32 {
        (y / self.lane_width).floor() as u32 + 1
    }

    fn center(&self, lane: u32) -> f64 {
        (f64::from(lane) - 0.5) * self.lane_width
    }
}

/// A generated recording and its ground-truth lane changes.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub recording: Recording,
    pub events: Vec<LaneChangeEvent>,
}

/// `τ − sin(2πτ)/2π`: rises from 0 to 1 with lateral velocity
/// `∝ 1 − cos(2πτ)`.
fn raised_cosine(tau: f64) -> f64 {
    let t = tau.clamp(0.0, 1.0);
    t - (2.0 * PI * t).sin() / (2.0 * PI)
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Lateral plan of one vehicle.
struct Lateral {
    base: f64,
    /// `(start time in frames, signed displacement)` per maneuver.
    maneuvers: Vec<(f64, f64)>,
    duration: f64,
    wander: f64,
    omega: f64,
    phase: f64,
    taper: f64,
}

impl Lateral {
    /// `y` at fractional frame time `t`.
    fn y(&self, t: f64) -> f64 {
        let mut y = self.base;
        let mut envelope: f64 = 1.0;
        for &(start, disp) in &self.maneuvers {
            y += disp * raised_cosine((t - start) / self.duration);
            let gap = if t < start { start - t } else { (t - start - self.duration).max(0.0) };
            envelope = envelope.min(smoothstep(gap / self.taper));
        }
        y + envelope * self.wander * (self.omega * t + self.phase).sin()
    }
}

struct Plan {
    lateral: Lateral,
    events: Vec<(i64, u32, u32)>,
}

fn plan_vehicle(config: &SynthConfig, rng: &mut ChaCha8Rng, changes: usize) -> Plan {
    let lanes = config.lane_count;
    let mut lane = rng.random_range(1..=lanes);
    let base = config.center(lane);
    let m = config.maneuver_frames as f64;
    let mut maneuvers = Vec::new();
    let mut events = Vec::new();
    if changes > 0 {
        // Each maneuver gets an equal share of the recording; the crossing
        // frame is drawn inside its share.
        let share = config.duration_frames / changes;
        let (lead, tail) = (config.lead_frames(), config.maneuver_frames / 2 + 2);
        for k in 0..changes {
            let lo = k * share + lead;
            let hi = (k + 1) * share - tail;
            let f_lc = rng.random_range(lo..=hi.max(lo)) as i64 + 1;
            let left = match lane {
                1 => true,
                l if l == lanes => false,
                _ => rng.random_bool(0.5),
            };
            let to = if left { lane + 1 } else { lane - 1 };
            let disp = if left { config.lane_width } else { -config.lane_width };
            // Offset by a quarter frame so no frame sits exactly on the boundary.
            maneuvers.push((f_lc as f64 - 0.25 - m / 2.0, disp));
            events.push((f_lc, lane, to));
            lane = to;
        }
    }
    let lateral = Lateral {
        base,
        maneuvers,
        duration: m,
        wander: config.lateral_wander,
        omega: 2.0 * PI / (config.lateral_wander_period * config.frame_rate),
        phase: rng.random_range(0.0..2.0 * PI),
        taper: config.frame_rate,
    };
    Plan { lateral, events }
}

fn simulate_vehicle(config: &SynthConfig, vehicle_id: u32, changes: usize) -> (Vec<FrameRecord>, Vec<LaneChangeEvent>) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(u64::from(vehicle_id));
    let plan = plan_vehicle(config, &mut rng, changes);
    let dt = 1.0 / config.frame_rate;
    let desired = config.speed_mean + config.speed_std * rng.sample::<f64, _>(StandardNormal);
    let mut x = rng.random_range(0.0..config.road_length);
    let mut v = desired;
    let decay = (-dt / config.accel_noise_tau).exp();
    let kick = Normal::new(0.0, config.accel_noise_std * (1.0 - decay * decay).sqrt()).expect("finite std");
    let mut noise = config.accel_noise_std * rng.sample::<f64, _>(StandardNormal);
    let fps = config.frame_rate;
    let signature = |frame: i64| -> f64 {
        if !config.signal_mode.has_acceleration() {
            return 0.0;
        }
        plan.events
            .iter()
            .map(|&(f_lc, _, _)| {
                let before = f_lc - frame;
                if before >= 1 && before <= config.signature_frames as i64 {
                    config.signature_amplitude * (2.0 * PI * before as f64 / config.signature_period_frames).sin()
                } else {
                    0.0
                }
            })
            .sum()
    };
    let h = 1e-3;
    let mut records = Vec::with_capacity(config.duration_frames);
    for k in 0..config.duration_frames {
        let frame = k as i64 + 1;
        let t = frame as f64;
        let a = noise + config.speed_reversion * (desired - v) + signature(frame);
        let lat = &plan.lateral;
        let y = lat.y(t);
        let y_vel = (lat.y(t + h) - lat.y(t - h)) / (2.0 * h) * fps;
        let y_acc = (lat.y(t + h) - 2.0 * y + lat.y(t - h)) / (h * h) * fps * fps;
        records.push(FrameRecord {
            frame,
            vehicle_id,
            x,
            y,
            x_vel: v,
            y_vel,
            x_acc: a,
            y_acc,
            neighbor_ids: [0; 8],
            lane_id: config.lane_of(y),
        });
        x += v * dt + 0.5 * a * dt * dt;
        v += a * dt;
        noise = noise * decay + kick.sample(&mut rng);
    }
    let events = plan
        .events
        .iter()
        .map(|&(f_lc, from_lane, to_lane)| LaneChangeEvent { vehicle_id, f_lc, from_lane, to_lane })
        .collect();
    (records, events)
}

/// Fills the neighbor columns of every vehicle at one frame. `records`
/// holds each vehicle's record for that frame.
pub fn assign_neighbors(records: &mut [FrameRecord], vehicle_length: f64) {
    let snapshot: Vec<(u32, u32, f64)> = records.iter().map(|r| (r.vehicle_id, r.lane_id, r.x)).collect();
    // Nearest by |Δx|, ties to the smaller ID.
    let nearest = |me: u32, lane: u32, x: f64, keep: &dyn Fn(f64) -> bool| -> u32 {
        snapshot
            .iter()
            .filter(|&&(id, l, ox)| id != me && l == lane && keep(ox - x))
            .min_by(|a, b| (a.2 - x).abs().total_cmp(&(b.2 - x).abs()).then(a.0.cmp(&b.0)))
            .map_or(0, |v| v.0)
    };
    let len = vehicle_length;
    for r in records.iter_mut() {
        let (me, lane, x) = (r.vehicle_id, r.lane_id, r.x);
        let mut ids = [0u32; 8];
        ids[NeighborSlot::PV.index()] = nearest(me, lane, x, &|dx| dx > 0.0);
        ids[NeighborSlot::FV.index()] = nearest(me, lane, x, &|dx| dx <= 0.0);
        for (side, slots) in [
            (lane + 1, [NeighborSlot::LP, NeighborSlot::LA, NeighborSlot::LF]),
            (lane.wrapping_sub(1), [NeighborSlot::RP, NeighborSlot::RA, NeighborSlot::RF]),
        ] {
            ids[slots[0].index()] = nearest(me, side, x, &|dx| dx >= len);
            ids[slots[1].index()] = nearest(me, side, x, &|dx| dx.abs() < len);
            ids[slots[2].index()] = nearest(me, side, x, &|dx| dx <= -len);
        }
        r.neighbor_ids = ids;
    }
}

pub fn generate_recording(config: &SynthConfig) -> Result<SynthOutput> {
    config.check()?;
    let n = config.vehicle_count;
    let changers = (config.lane_change_fraction * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut is_changer = vec![false; n];
    for i in index::sample(&mut rng, n, changers) {
        is_changer[i] = true;
    }
    let mut per_vehicle: Vec<(Vec<FrameRecord>, Vec<LaneChangeEvent>)> = (0..n)
        .map(|i| simulate_vehicle(config, i as u32 + 1, if is_changer[i] { config.changes_per_changer } else { 0 }))
        .collect();
    for k in 0..config.duration_frames {
        let mut frame: Vec<FrameRecord> = per_vehicle.iter().map(|(r, _)| r[k]).collect();
        assign_neighbors(&mut frame, config.vehicle_length);
        for (v, r) in per_vehicle.iter_mut().zip(frame) {
            v.0[k].neighbor_ids = r.neighbor_ids;
        }
    }
    let mut events = Vec::new();
    let mut tracks = Vec::with_capacity(n);
    for (i, (records, ev)) in per_vehicle.into_iter().enumerate() {
        tracks.push(VehicleTrack { vehicle_id: i as u32 + 1, records });
        events.extend(ev);
    }
    let meta = RecordingMeta {
        recording_id: config.recording_id,
        frame_rate: config.frame_rate,
        lane_count: config.lane_count,
    };
    Ok(SynthOutput { recording: Recording::new(meta, tracks), events })
}

/// `count` recordings with IDs `1..=count`, each seeded from `(seed, id)`.
pub fn generate_recordings(config: &SynthConfig, count: usize) -> Result<Vec<SynthOutput>> {
    (1..=count as u32)
        .into_par_iter()
        .map(|id| {
            let seed = config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(u64::from(id));
            generate_recording(&SynthConfig { recording_id: id, seed, ..config.clone() })
        })
        .collect()
}

pub fn events_path(dir: &Path, recording_id: u32) -> std::path::PathBuf {
    dir.join(format!("{recording_id:02}_events.json"))
}

/// Writes tracks, metadata and the ground-truth sidecar.
pub fn write_output(dir: &Path, output: &SynthOutput) -> Result<()> {
    write_recording(dir, &output.recording)?;
    let path = events_path(dir, output.recording.id());
    fs::write(&path, serde_json::to_string_pretty(&output.events)? + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_events(dir: &Path, recording_id: u32) -> Result<Vec<LaneChangeEvent>> {
    let path = events_path(dir, recording_id);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::detect_lane_changes;
    use crate::trajectory::validate_tracks;

    #[test]
    fn raised_cosine_profile() {
        assert_eq!(raised_cosine(0.0), 0.0);
        assert!((raised_cosine(0.5) - 0.5).abs() < 1e-15);
        assert_eq!(raised_cosine(1.0), 1.0);
        assert_eq!(raised_cosine(2.0), 1.0);
    }

    #[test]
    fn no_changers_no_events() {
        let out =
            generate_recording(&SynthConfig { lane_change_fraction: 0.0, vehicle_count: 20, ..Default::default() })
                .unwrap();
        assert!(out.events.is_empty());
        assert!(out.recording.tracks().iter().all(|t| detect_lane_changes(t).is_empty()));
    }

    #[test]
    fn detection_recovers_ground_truth() {
        for mode in [SynthConfig::velocity_signal(3), SynthConfig::acceleration_signal(3)] {
            let out = generate_recording(&mode).unwrap();
            assert_eq!(out.events.len(), 50);
            let found: Vec<_> = out.recording.tracks().iter().flat_map(detect_lane_changes).collect();
            assert_eq!(found, out.events);
        }
    }

    #[test]
    fn valid_and_deterministic() {
        let cfg = SynthConfig { vehicle_count: 30, seed: 9, ..Default::default() };
        let a = generate_recording(&cfg).unwrap();
        assert!(validate_tracks(a.recording.tracks(), &a.recording.meta).is_clean());
        let b = generate_recording(&cfg).unwrap();
        assert_eq!(a.recording.tracks(), b.recording.tracks());
    }

    #[test]
    fn lane_matches_band() {
        let cfg = SynthConfig::acceleration_signal(1);
        let out = generate_recording(&cfg).unwrap();
        for r in out.recording.tracks().iter().flat_map(|t| &t.records) {
            assert_eq!(r.lane_id, (r.y / cfg.lane_width).floor() as u32 + 1);
            assert!((1..=cfg.lane_count).contains(&r.lane_id));
        }
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(SynthConfig { lane_count: 1, ..Default::default() }.check().is_err());
        assert!(SynthConfig { lane_change_fraction: 1.5, ..Default::default() }.check().is_err());
        assert!(SynthConfig { duration_frames: 40, ..Default::default() }.check().is_err());
    }
}
