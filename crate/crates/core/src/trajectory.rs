//! HighD-format trajectory recordings.
//!
//! A recording is a `NN_tracks.csv` file (one row per vehicle per frame)
//! next to a `NN_recording.json` metadata file. Column headers may use the
//! HighD names (`xVelocity`, `precedingId`, ...) or the short aliases
//! (`xVel`, `PVId`, ...); unknown columns are ignored.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frame index as found in the recording.
pub type Frame = i64;

/// The eight surrounding-vehicle positions, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NeighborSlot {
    PV,
    FV,
    LP,
    LA,
    LF,
    RP,
    RA,
    RF,
}

impl NeighborSlot {
    pub const ALL: [NeighborSlot; 8] = [
        NeighborSlot::PV,
        NeighborSlot::FV,
        NeighborSlot::LP,
        NeighborSlot::LA,
        NeighborSlot::LF,
        NeighborSlot::RP,
        NeighborSlot::RA,
        NeighborSlot::RF,
    ];

    /// Position in [`FrameRecord::neighbor_ids`].
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            NeighborSlot::PV => "PV",
            NeighborSlot::FV => "FV",
            NeighborSlot::LP => "LP",
            NeighborSlot::LA => "LA",
            NeighborSlot::LF => "LF",
            NeighborSlot::RP => "RP",
            NeighborSlot::RA => "RA",
            NeighborSlot::RF => "RF",
        }
    }
}

impl fmt::Display for NeighborSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NeighborSlot {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NeighborSlot::ALL
            .into_iter()
            .find(|slot| slot.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown neighbor slot `{s}`")))
    }
}

/// One vehicle's state at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameRecord {
    pub frame: Frame,
    pub vehicle_id: u32,
    pub x: f64,
    pub y: f64,
    pub x_vel: f64,
    pub y_vel: f64,
    pub x_acc: f64,
    pub y_acc: f64,
    /// Neighbor vehicle IDs indexed by [`NeighborSlot::index`]; 0 means absent.
    pub neighbor_ids: [u32; 8],
    pub lane_id: u32,
}

impl FrameRecord {
    pub fn neighbor(&self, slot: NeighborSlot) -> Option<u32> {
        match self.neighbor_ids[slot.index()] {
            0 => None,
            id => Some(id),
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.vehicle_id == 0 {
            return Err("vehicle id must be positive".into());
        }
        if self.lane_id == 0 {
            return Err("lane id must be positive".into());
        }
        if let Some(slot) = NeighborSlot::ALL.iter().find(|s| self.neighbor_ids[s.index()] == self.vehicle_id) {
            return Err(format!("{slot} neighbor refers to the vehicle itself"));
        }
        let kinematics = [self.x, self.y, self.x_vel, self.y_vel, self.x_acc, self.y_acc];
        if kinematics.iter().any(|v| !v.is_finite()) {
            return Err("non-finite kinematic value".into());
        }
        Ok(())
    }
}

/// All records of one vehicle, ordered by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleTrack {
    pub vehicle_id: u32,
    pub records: Vec<FrameRecord>,
}

impl VehicleTrack {
    pub fn first_frame(&self) -> Option<Frame> {
        self.records.first().map(|r| r.frame)
    }

    pub fn last_frame(&self) -> Option<Frame> {
        self.records.last().map(|r| r.frame)
    }

    /// Index of the record at `frame`, if present.
    pub fn position(&self, frame: Frame) -> Option<usize> {
        // Gap-free tracks resolve by offset; fall back to a search otherwise.
        let first = self.first_frame()?;
        let offset = usize::try_from(frame - first).ok()?;
        match self.records.get(offset) {
            Some(r) if r.frame == frame => Some(offset),
            _ => self.records.binary_search_by_key(&frame, |r| r.frame).ok(),
        }
    }

    pub fn at(&self, frame: Frame) -> Option<&FrameRecord> {
        self.position(frame).map(|i| &self.records[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub recording_id: u32,
    /// Hz.
    pub frame_rate: f64,
    /// Highest valid lane ID.
    pub lane_count: u32,
}

impl RecordingMeta {
    pub fn check(&self) -> Result<()> {
        if !(self.frame_rate > 0.0) || !self.frame_rate.is_finite() {
            return Err(Error::InvalidConfig(format!("frame_rate must be positive, got {}", self.frame_rate)));
        }
        if self.lane_count == 0 {
            return Err(Error::InvalidConfig("lane_count must be positive".into()));
        }
        Ok(())
    }
}

/// A recording's tracks plus a vehicle-ID lookup.
#[derive(Debug, Clone)]
pub struct Recording {
    pub meta: RecordingMeta,
    tracks: Vec<VehicleTrack>,
    by_id: HashMap<u32, usize>,
}

impl Recording {
    pub fn new(meta: RecordingMeta, mut tracks: Vec<VehicleTrack>) -> Self {
        tracks.sort_by_key(|t| t.vehicle_id);
        let by_id = tracks.iter().enumerate().map(|(i, t)| (t.vehicle_id, i)).collect();
        Recording { meta, tracks, by_id }
    }

    pub fn id(&self) -> u32 {
        self.meta.recording_id
    }

    /// Tracks in ascending vehicle-ID order.
    pub fn tracks(&self) -> &[VehicleTrack] {
        &self.tracks
    }

    pub fn track(&self, vehicle_id: u32) -> Option<&VehicleTrack> {
        self.by_id.get(&vehicle_id).map(|&i| &self.tracks[i])
    }

    pub fn record_at(&self, vehicle_id: u32, frame: Frame) -> Option<&FrameRecord> {
        self.track(vehicle_id)?.at(frame)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Reject frame gaps inside a track instead of leaving them to
    /// [`validate_tracks`].
    pub strict_gaps: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Frame,
    Id,
    X,
    Y,
    XVel,
    YVel,
    XAcc,
    YAcc,
    Neighbor(NeighborSlot),
    Lane,
}

const FIELDS: [(Field, &str, &[&str]); 17] = [
    (Field::Frame, "frame", &[]),
    (Field::Id, "id", &["vehicleId"]),
    (Field::X, "x", &[]),
    (Field::Y, "y", &[]),
    (Field::XVel, "xVelocity", &["xVel"]),
    (Field::YVel, "yVelocity", &["yVel"]),
    (Field::XAcc, "xAcceleration", &["xAcc"]),
    (Field::YAcc, "yAcceleration", &["yAcc"]),
    (Field::Neighbor(NeighborSlot::PV), "precedingId", &["PVId"]),
    (Field::Neighbor(NeighborSlot::FV), "followingId", &["FVId"]),
    (Field::Neighbor(NeighborSlot::LP), "leftPrecedingId", &["LPId"]),
    (Field::Neighbor(NeighborSlot::LA), "leftAlongsideId", &["LAId"]),
    (Field::Neighbor(NeighborSlot::LF), "leftFollowingId", &["LFId"]),
    (Field::Neighbor(NeighborSlot::RP), "rightPrecedingId", &["RPId"]),
    (Field::Neighbor(NeighborSlot::RA), "rightAlongsideId", &["RAId"]),
    (Field::Neighbor(NeighborSlot::RF), "rightFollowingId", &["RFId"]),
    (Field::Lane, "laneId", &["lane"]),
];

fn column_map(headers: &csv::StringRecord) -> Result<Vec<usize>> {
    FIELDS
        .iter()
        .map(|(_, canonical, aliases)| {
            headers
                .iter()
                .position(|h| {
                    let h = h.trim();
                    h.eq_ignore_ascii_case(canonical) || aliases.iter().any(|a| h.eq_ignore_ascii_case(a))
                })
                .ok_or_else(|| Error::MissingColumn((*canonical).to_string()))
        })
        .collect()
}

fn parse_field<T: FromStr>(row: &csv::StringRecord, col: usize, name: &str, line: u64) -> Result<T> {
    let raw = row.get(col).unwrap_or("").trim();
    raw.parse().map_err(|_| Error::MalformedRow { line, reason: format!("column `{name}`: cannot parse `{raw}`") })
}

fn parse_row(row: &csv::StringRecord, cols: &[usize], line: u64) -> Result<FrameRecord> {
    let name = |i: usize| FIELDS[i].1;
    let float = |i: usize| parse_field::<f64>(row, cols[i], name(i), line);
    let mut neighbor_ids = [0u32; 8];
    for (k, id) in neighbor_ids.iter_mut().enumerate() {
        // HighD writes absent neighbors as 0; negative IDs are rejected.
        *id = parse_field::<u32>(row, cols[8 + k], name(8 + k), line)?;
    }
    let record = FrameRecord {
        frame: parse_field(row, cols[0], name(0), line)?,
        vehicle_id: parse_field(row, cols[1], name(1), line)?,
        x: float(2)?,
        y: float(3)?,
        x_vel: float(4)?,
        y_vel: float(5)?,
        x_acc: float(6)?,
        y_acc: float(7)?,
        neighbor_ids,
        lane_id: parse_field(row, cols[16], name(16), line)?,
    };
    record.check().map_err(|reason| Error::InvalidRecord { line, reason })?;
    Ok(record)
}

/// Parses a tracks CSV into one track per vehicle, sorted by vehicle ID.
///
/// Rows of one vehicle must appear in increasing frame order; rows of
/// different vehicles may interleave.
pub fn parse_tracks<R: Read>(source: R, options: &ParseOptions) -> Result<Vec<VehicleTrack>> {
    let mut reader =
        csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    let cols = column_map(&headers)?;

    let mut tracks: BTreeMap<u32, Vec<FrameRecord>> = BTreeMap::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != headers.len() {
            return Err(Error::MalformedRow {
                line,
                reason: format!("expected {} fields, found {}", headers.len(), row.len()),
            });
        }
        let record = parse_row(&row, &cols, line)?;
        let records = tracks.entry(record.vehicle_id).or_default();
        if let Some(prev) = records.last() {
            if record.frame <= prev.frame {
                return Err(Error::NonMonotonicFrames {
                    vehicle_id: record.vehicle_id,
                    frame: record.frame,
                    previous: prev.frame,
                });
            }
            if options.strict_gaps && record.frame != prev.frame + 1 {
                return Err(Error::FrameGap {
                    vehicle_id: record.vehicle_id,
                    frame: record.frame,
                    previous: prev.frame,
                });
            }
        }
        records.push(record);
    }
    Ok(tracks.into_iter().map(|(vehicle_id, records)| VehicleTrack { vehicle_id, records }).collect())
}

/// Writes tracks with the canonical HighD column names.
///
/// Floats use the shortest representation that parses back to the same
/// value, so [`parse_tracks`] restores the tracks exactly.
pub fn write_tracks<W: Write>(sink: W, tracks: &[VehicleTrack]) -> Result<()> {
    write_records(sink, tracks.iter().flat_map(|t| t.records.iter()))
}

pub fn write_records<'a, W: Write>(sink: W, records: impl IntoIterator<Item = &'a FrameRecord>) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(FIELDS.iter().map(|(_, name, _)| *name))?;
    for r in records {
        let mut row: Vec<String> = vec![
            r.frame.to_string(),
            r.vehicle_id.to_string(),
            r.x.to_string(),
            r.y.to_string(),
            r.x_vel.to_string(),
            r.y_vel.to_string(),
            r.x_acc.to_string(),
            r.y_acc.to_string(),
        ];
        row.extend(r.neighbor_ids.iter().map(|id| id.to_string()));
        row.push(r.lane_id.to_string());
        writer.write_record(&row)?;
    }
    writer.flush().map_err(|e| Error::io("<tracks writer>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// Frames `first_missing ..= first_missing + count - 1` are absent.
    FrameGap {
        vehicle_id: u32,
        first_missing: Frame,
        count: i64,
    },
    LaneOutOfRange {
        vehicle_id: u32,
        frame: Frame,
        lane_id: u32,
    },
    DanglingNeighbor {
        vehicle_id: u32,
        frame: Frame,
        slot: NeighborSlot,
        neighbor_id: u32,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks tracks against the recording metadata. Never fails; every
/// problem becomes a report entry.
pub fn validate_tracks(tracks: &[VehicleTrack], meta: &RecordingMeta) -> ValidationReport {
    let by_id: HashMap<u32, &VehicleTrack> = tracks.iter().map(|t| (t.vehicle_id, t)).collect();
    let mut violations = Vec::new();
    for track in tracks {
        for pair in track.records.windows(2) {
            let gap = pair[1].frame - pair[0].frame;
            if gap > 1 {
                violations.push(Violation::FrameGap {
                    vehicle_id: track.vehicle_id,
                    first_missing: pair[0].frame + 1,
                    count: gap - 1,
                });
            }
        }
        for r in &track.records {
            if r.lane_id > meta.lane_count {
                violations.push(Violation::LaneOutOfRange {
                    vehicle_id: r.vehicle_id,
                    frame: r.frame,
                    lane_id: r.lane_id,
                });
            }
            for slot in NeighborSlot::ALL {
                if let Some(id) = r.neighbor(slot) {
                    if by_id.get(&id).and_then(|t| t.at(r.frame)).is_none() {
                        violations.push(Violation::DanglingNeighbor {
                            vehicle_id: r.vehicle_id,
                            frame: r.frame,
                            slot,
                            neighbor_id: id,
                        });
                    }
                }
            }
        }
    }
    ValidationReport { violations }
}

pub fn tracks_path(dir: &Path, recording_id: u32) -> PathBuf {
    dir.join(format!("{recording_id:02}_tracks.csv"))
}

pub fn meta_path(dir: &Path, recording_id: u32) -> PathBuf {
    dir.join(format!("{recording_id:02}_recording.json"))
}

/// Reads HighD's own `NN_recordingMeta.csv` when no JSON metadata exists.
/// The lane count is the number of lane markings on both carriageways,
/// which equals the highest lane ID HighD assigns.
fn read_highd_meta(path: &Path) -> Result<RecordingMeta> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers()?.clone();
    let row = reader
        .records()
        .next()
        .ok_or_else(|| Error::MalformedRow { line: 2, reason: "recording meta has no data row".into() })??;
    let get = |name: &str| -> Result<&str> {
        headers
            .iter()
            .position(|h| h == name)
            .and_then(|i| row.get(i))
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let bad = |name: &str| Error::MalformedRow { line: 2, reason: format!("cannot parse `{name}`") };
    let markings =
        |name: &str| -> Result<u32> { Ok(get(name)?.split(';').filter(|s| !s.trim().is_empty()).count() as u32) };
    Ok(RecordingMeta {
        recording_id: get("id")?.trim().parse().map_err(|_| bad("id"))?,
        frame_rate: get("frameRate")?.trim().parse().map_err(|_| bad("frameRate"))?,
        lane_count: markings("upperLaneMarkings")? + markings("lowerLaneMarkings")?,
    })
}

pub fn read_recording(dir: &Path, recording_id: u32, options: &ParseOptions) -> Result<Recording> {
    let json = meta_path(dir, recording_id);
    let meta = if json.exists() {
        let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        serde_json::from_str::<RecordingMeta>(&text)?
    } else {
        read_highd_meta(&dir.join(format!("{recording_id:02}_recordingMeta.csv")))?
    };
    meta.check()?;
    let path = tracks_path(dir, recording_id);
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let tracks = parse_tracks(std::io::BufReader::new(file), options)?;
    Ok(Recording::new(meta, tracks))
}

/// Loads every `NN_tracks.csv` recording in `dir`, ordered by recording ID.
pub fn load_recordings(dir: &Path, options: &ParseOptions) -> Result<Vec<Recording>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(stem) = name.to_str().and_then(|n| n.strip_suffix("_tracks.csv")) else { continue };
        if let Ok(id) = stem.parse::<u32>() {
            ids.push(id);
        }
    }
    if ids.is_empty() {
        return Err(Error::NoRecordings(dir.to_path_buf()));
    }
    ids.sort_unstable();
    ids.into_iter().map(|id| read_recording(dir, id, options)).collect()
}

pub fn write_recording(dir: &Path, recording: &Recording) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = meta_path(dir, recording.id());
    fs::write(&meta, serde_json::to_string_pretty(&recording.meta)? + "\n").map_err(|e| Error::io(&meta, e))?;
    let path = tracks_path(dir, recording.id());
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_tracks(std::io::BufWriter::new(file), recording.tracks())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "frame,id,x,y,xVel,yVel,xAcc,yAcc,PVId,FVId,LPId,LAId,LFId,RPId,RAId,RFId,laneId";

    fn row(frame: i64, id: u32, lane: u32) -> String {
        format!("{frame},{id},1.5,2.5,-30,0,0.1,0,0,0,0,0,0,0,0,0,{lane}")
    }

    fn parse(text: &str) -> Result<Vec<VehicleTrack>> {
        parse_tracks(text.as_bytes(), &ParseOptions::default())
    }

    #[test]
    fn printed_sample_row_parses() {
        let text = format!("{HEADER}\n1137,48,166.64,12.11,-33.64,-1.17,0.44,-0.21,46,49,0,0,0,0,0,0,3\n");
        let tracks = parse(&text).unwrap();
        let r = tracks[0].records[0];
        assert_eq!((r.frame, r.vehicle_id, r.lane_id), (1137, 48, 3));
        assert_eq!((r.x, r.y, r.x_vel, r.y_vel, r.x_acc, r.y_acc), (166.64, 12.11, -33.64, -1.17, 0.44, -0.21));
        assert_eq!(r.neighbor(NeighborSlot::PV), Some(46));
        assert_eq!(r.neighbor(NeighborSlot::FV), Some(49));
        assert_eq!(r.neighbor(NeighborSlot::LA), None);
    }

    #[test]
    fn header_only_is_empty() {
        assert!(parse(&format!("{HEADER}\n")).unwrap().is_empty());
    }

    #[test]
    fn highd_names_and_extra_columns_accepted() {
        let text = "frame,id,x,y,width,height,xVelocity,yVelocity,xAcceleration,yAcceleration,precedingId,followingId,\
                    leftPrecedingId,leftAlongsideId,leftFollowingId,rightPrecedingId,rightAlongsideId,rightFollowingId,laneId\n\
                    1,7,10,3,4.5,1.8,30,0,0,0,0,0,0,0,0,0,0,0,2\n";
        let tracks = parse(text).unwrap();
        assert_eq!(tracks[0].records[0].x_vel, 30.0);
        assert_eq!(tracks[0].records[0].lane_id, 2);
    }

    #[test]
    fn missing_column_is_named() {
        let text = "frame,id,x,y,xVel,yVel,xAcc,yAcc,PVId,FVId,LPId,LAId,LFId,RPId,RAId,RFId\n";
        match parse(text) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "laneId"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_rows_report_line() {
        let text = format!("{HEADER}\n{}\n1,2,abc,0,0,0,0,0,0,0,0,0,0,0,0,0,1\n", row(1, 2, 1));
        match parse(&text) {
            Err(Error::MalformedRow { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let short = format!("{HEADER}\n1,2,3\n");
        assert!(matches!(parse(&short), Err(Error::MalformedRow { line: 2, .. })));
    }

    #[test]
    fn decreasing_or_duplicate_frames_rejected() {
        let dup = format!("{HEADER}\n{}\n{}\n", row(5, 1, 1), row(5, 1, 1));
        assert!(matches!(parse(&dup), Err(Error::NonMonotonicFrames { frame: 5, .. })));
        let dec = format!("{HEADER}\n{}\n{}\n", row(5, 1, 1), row(4, 1, 1));
        assert!(matches!(parse(&dec), Err(Error::NonMonotonicFrames { frame: 4, previous: 5, .. })));
    }

    #[test]
    fn record_invariants_enforced() {
        let self_ref = format!("{HEADER}\n1,3,0,0,0,0,0,0,3,0,0,0,0,0,0,0,1\n");
        assert!(matches!(parse(&self_ref), Err(Error::InvalidRecord { .. })));
        let lane0 = format!("{HEADER}\n{}\n", row(1, 3, 0));
        assert!(matches!(parse(&lane0), Err(Error::InvalidRecord { .. })));
        let nan = format!("{HEADER}\n1,3,NaN,0,0,0,0,0,0,0,0,0,0,0,0,0,1\n");
        assert!(matches!(parse(&nan), Err(Error::InvalidRecord { .. })));
    }

    #[test]
    fn interleaved_vehicles_are_grouped() {
        let text = format!("{HEADER}\n{}\n{}\n{}\n{}\n", row(1, 9, 1), row(1, 2, 1), row(2, 9, 1), row(2, 2, 1));
        let tracks = parse(&text).unwrap();
        assert_eq!(tracks.iter().map(|t| t.vehicle_id).collect::<Vec<_>>(), vec![2, 9]);
        assert!(tracks.iter().all(|t| t.records.len() == 2));
    }

    #[test]
    fn gaps_are_strict_only_when_asked() {
        let text = format!("{HEADER}\n{}\n{}\n{}\n", row(1, 1, 1), row(2, 1, 1), row(4, 1, 1));
        let tracks = parse(&text).unwrap();
        let meta = RecordingMeta { recording_id: 1, frame_rate: 25.0, lane_count: 3 };
        let report = validate_tracks(&tracks, &meta);
        assert_eq!(report.violations, vec![Violation::FrameGap { vehicle_id: 1, first_missing: 3, count: 1 }]);
        let strict = parse_tracks(text.as_bytes(), &ParseOptions { strict_gaps: true });
        assert!(matches!(strict, Err(Error::FrameGap { frame: 4, previous: 2, .. })));
        assert_eq!(tracks[0].at(4).unwrap().frame, 4);
        assert!(tracks[0].at(3).is_none());
    }

    #[test]
    fn dangling_neighbor_and_lane_range_reported() {
        let text = format!("{HEADER}\n1,1,0,0,0,0,0,0,999,0,0,0,0,0,0,0,4\n");
        let tracks = parse(&text).unwrap();
        let meta = RecordingMeta { recording_id: 1, frame_rate: 25.0, lane_count: 3 };
        let report = validate_tracks(&tracks, &meta);
        assert!(report.violations.contains(&Violation::LaneOutOfRange { vehicle_id: 1, frame: 1, lane_id: 4 }));
        assert!(report.violations.contains(&Violation::DanglingNeighbor {
            vehicle_id: 1,
            frame: 1,
            slot: NeighborSlot::PV,
            neighbor_id: 999
        }));
    }

    #[test]
    fn slot_names_round_trip() {
        for slot in NeighborSlot::ALL {
            assert_eq!(slot.name().parse::<NeighborSlot>().unwrap(), slot);
        }
        assert!("XX".parse::<NeighborSlot>().is_err());
    }
}
