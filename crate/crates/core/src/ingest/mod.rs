//! Detection streams and ground truth in MOT Challenge text format.
//!
//! Each line is `frame,id,bb_left,bb_top,w,h,conf,x,y,z`. Raw detections carry
//! `id = -1`; ground-truth lines carry identities `>= 0`. Column 8 (`x`) holds
//! an integer class label when non-negative. Lines with 7 to 10 columns are
//! accepted; output always has 10.

mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BoundingBox, Category, Detection, FrameDetections, GeometryError, Vec2};

pub use config::{load_config, AssignmentStrategy, ConfigError, RunConfig};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: {source}")]
    InvalidDetection {
        line: usize,
        #[source]
        source: GeometryError,
    },
    #[error("line {line}: box lies outside the {width}x{height} frame by more than its own extent")]
    OutOfBounds { line: usize, width: u32, height: u32 },
    #[error("line {line}: duplicate ground truth for identity {id} in frame {frame}")]
    DuplicateGroundTruth { line: usize, frame: u64, id: u64 },
    #[error("line {line}: ground truth requires an identity >= 0, got {id}")]
    MissingIdentity { line: usize, id: i64 },
    #[error("invalid JSON detections: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSize {
    pub width: u32,
    pub height: u32,
}

impl Default for FrameSize {
    fn default() -> Self {
        Self {
            width: 1280,
            height: 720,
        }
    }
}

impl FrameSize {
    /// True when the box overhangs the frame by at most one of its own extents
    /// on every side.
    pub fn admits(&self, b: &BoundingBox) -> bool {
        let (fw, fh) = (self.width as f64, self.height as f64);
        b.left() >= -b.width()
            && b.right() <= fw + b.width()
            && b.top() >= -b.height()
            && b.bottom() <= fh + b.height()
    }

    pub fn contains(&self, p: Vec2) -> bool {
        (0.0..=self.width as f64).contains(&p.x) && (0.0..=self.height as f64).contains(&p.y)
    }
}

/// Per-frame detections over a contiguous frame range.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionStream {
    frames: BTreeMap<u64, FrameDetections>,
    pub frame_size: FrameSize,
}

impl DetectionStream {
    /// Builds a stream, filling gaps between the first and last frame with
    /// empty frames.
    pub fn new(frames: impl IntoIterator<Item = FrameDetections>, frame_size: FrameSize) -> Self {
        let mut map: BTreeMap<u64, FrameDetections> = BTreeMap::new();
        for f in frames {
            map.entry(f.frame)
                .or_insert_with(|| FrameDetections::empty(f.frame))
                .detections
                .extend(f.detections);
        }
        if let (Some(&lo), Some(&hi)) = (map.keys().next(), map.keys().next_back()) {
            for k in lo..=hi {
                map.entry(k).or_insert_with(|| FrameDetections::empty(k));
            }
        }
        Self {
            frames: map,
            frame_size,
        }
    }

    pub fn frames(&self) -> impl Iterator<Item = &FrameDetections> {
        self.frames.values()
    }

    pub fn frame(&self, k: u64) -> Option<&FrameDetections> {
        self.frames.get(&k)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn detection_count(&self) -> usize {
        self.frames.values().map(|f| f.detections.len()).sum()
    }
}

struct MotRow {
    frame: u64,
    id: i64,
    left: f64,
    top: f64,
    width: f64,
    height: f64,
    conf: f64,
    class: f64,
}

fn parse_row(line_no: usize, line: &str) -> Result<MotRow, IngestError> {
    let cols: Vec<&str> = line.split(',').map(str::trim).collect();
    if !(7..=10).contains(&cols.len()) {
        return Err(IngestError::Malformed {
            line: line_no,
            message: format!("expected 10 comma-separated columns, found {}", cols.len()),
        });
    }
    let num = |i: usize, name: &str| -> Result<f64, IngestError> {
        cols[i].parse::<f64>().map_err(|_| IngestError::Malformed {
            line: line_no,
            message: format!("column {name}: cannot parse {:?} as a number", cols[i]),
        })
    };
    let frame = cols[0].parse::<u64>().map_err(|_| IngestError::Malformed {
        line: line_no,
        message: format!("frame must be a non-negative integer, got {:?}", cols[0]),
    })?;
    let id = num(1, "id")?;
    if id.fract() != 0.0 {
        return Err(IngestError::Malformed {
            line: line_no,
            message: format!("id must be an integer, got {id}"),
        });
    }
    Ok(MotRow {
        frame,
        id: id as i64,
        left: num(2, "bb_left")?,
        top: num(3, "bb_top")?,
        width: num(4, "w")?,
        height: num(5, "h")?,
        conf: num(6, "conf")?,
        class: if cols.len() > 7 { num(7, "x")? } else { -1.0 },
    })
}

fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

pub fn parse_mot_detections(text: &str) -> Result<DetectionStream, IngestError> {
    parse_mot_detections_sized(text, FrameSize::default())
}

pub fn parse_mot_detections_sized(
    text: &str,
    frame_size: FrameSize,
) -> Result<DetectionStream, IngestError> {
    let mut frames: BTreeMap<u64, FrameDetections> = BTreeMap::new();
    for (line, raw) in numbered_lines(text) {
        let row = parse_row(line, raw)?;
        let invalid = |source| IngestError::InvalidDetection { line, source };
        let bbox = BoundingBox::from_corner(row.left, row.top, row.width, row.height).map_err(invalid)?;
        if !frame_size.admits(&bbox) {
            return Err(IngestError::OutOfBounds {
                line,
                width: frame_size.width,
                height: frame_size.height,
            });
        }
        let category = if row.class >= 0.0 && row.class.fract() == 0.0 {
            Category(row.class as i64)
        } else {
            Category::UNLABELED
        };
        let det = Detection::new(bbox, category, row.conf, row.frame).map_err(invalid)?;
        frames
            .entry(row.frame)
            .or_insert_with(|| FrameDetections::empty(row.frame))
            .detections
            .push(det);
    }
    Ok(DetectionStream::new(frames.into_values(), frame_size))
}

pub fn write_mot_detections(stream: &DetectionStream) -> String {
    let mut out = String::new();
    for f in stream.frames() {
        for d in &f.detections {
            let b = &d.bbox;
            let _ = writeln!(
                out,
                "{},-1,{},{},{},{},{},{},-1,-1",
                f.frame,
                b.left(),
                b.top(),
                b.width(),
                b.height(),
                d.confidence(),
                d.category.0
            );
        }
    }
    out
}

/// Ground truth: identity -> chronologically sorted `(frame, box)` pairs.
pub type GroundTruth = BTreeMap<u64, Vec<(u64, BoundingBox)>>;

pub fn parse_ground_truth(text: &str) -> Result<GroundTruth, IngestError> {
    let mut by_id: BTreeMap<u64, BTreeMap<u64, BoundingBox>> = BTreeMap::new();
    for (line, raw) in numbered_lines(text) {
        let row = parse_row(line, raw)?;
        if row.id < 0 {
            return Err(IngestError::MissingIdentity { line, id: row.id });
        }
        let id = row.id as u64;
        let bbox = BoundingBox::from_corner(row.left, row.top, row.width, row.height)
            .map_err(|source| IngestError::InvalidDetection { line, source })?;
        if by_id.entry(id).or_default().insert(row.frame, bbox).is_some() {
            return Err(IngestError::DuplicateGroundTruth {
                line,
                frame: row.frame,
                id,
            });
        }
    }
    Ok(by_id
        .into_iter()
        .map(|(id, boxes)| (id, boxes.into_iter().collect()))
        .collect())
}

/// Writes ground truth sorted by frame, then identity.
pub fn write_ground_truth(truth: &GroundTruth) -> String {
    let mut rows: Vec<(u64, u64, &BoundingBox)> = truth
        .iter()
        .flat_map(|(&id, boxes)| boxes.iter().map(move |(frame, b)| (*frame, id, b)))
        .collect();
    rows.sort_by_key(|&(frame, id, _)| (frame, id));
    let mut out = String::new();
    for (frame, id, b) in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},1,-1,-1,-1",
            frame,
            id,
            b.left(),
            b.top(),
            b.width(),
            b.height()
        );
    }
    out
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonStream {
    #[serde(default)]
    frame_size: FrameSize,
    frames: Vec<JsonFrame>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonFrame {
    frame: u64,
    detections: Vec<JsonDetection>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonDetection {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    confidence: f64,
    #[serde(default)]
    category: Option<i64>,
}

/// Parses the JSON alternative to MOT text:
///
/// ```json
/// {"frame_size": {"width": 1280, "height": 720},
///  "frames": [{"frame": 1, "detections": [
///      {"cx": 120, "cy": 160, "w": 40, "h": 20, "confidence": 0.83, "category": 3}]}]}
/// ```
///
/// `frame_size` and `category` are optional. Error line numbers refer to the
/// running detection index (1-based) since JSON has no line structure.
pub fn parse_json_detections(text: &str) -> Result<DetectionStream, IngestError> {
    let doc: JsonStream = serde_json::from_str(text)?;
    let mut frames = Vec::with_capacity(doc.frames.len());
    let mut index = 0;
    for f in doc.frames {
        let mut dets = Vec::with_capacity(f.detections.len());
        for d in f.detections {
            index += 1;
            let invalid = |source| IngestError::InvalidDetection { line: index, source };
            let bbox = BoundingBox::new(Vec2::new(d.cx, d.cy), d.w, d.h).map_err(invalid)?;
            if !doc.frame_size.admits(&bbox) {
                return Err(IngestError::OutOfBounds {
                    line: index,
                    width: doc.frame_size.width,
                    height: doc.frame_size.height,
                });
            }
            let category = d.category.map(Category).unwrap_or_default();
            dets.push(Detection::new(bbox, category, d.confidence, f.frame).map_err(invalid)?);
        }
        frames.push(FrameDetections {
            frame: f.frame,
            detections: dets,
        });
    }
    Ok(DetectionStream::new(frames, doc.frame_size))
}
