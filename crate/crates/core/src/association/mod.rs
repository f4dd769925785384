//! Tracking by detection.
//!
//! Each frame runs one pass of the abstract tracking loop: every live track
//! is Kalman-predicted into the frame, detections are merged into tracks by a
//! plausibility score (the merge filter), unmatched high-confidence
//! detections open new tracks, and tracks failing the deletion filter are
//! dropped.
//!
//! The literal loop lets one detection update several tracks. Here the merge
//! step is a one-to-one assignment (greedy or Hungarian) run in two tiers:
//! high-confidence detections first, then low-confidence detections against
//! the tracks left over. Tracks updated in a frame are carried into the next
//! one.

mod assignment;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{anchor_point, iou, merge_detections, BoundingBox, Detection, FrameDetections, Vec2};
use crate::ingest::{DetectionStream, RunConfig};
use crate::kalman::{coast, ekf_predict, ekf_update, KalmanError, KalmanState};

pub use assignment::{assign, hungarian_max, Matching};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackError {
    #[error("frame {got} does not follow current frame {current}")]
    NonMonotoneFrame { current: u64, got: u64 },
    #[error("track {track}: {source}")]
    Kalman {
        track: u64,
        #[source]
        source: KalmanError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Lost,
}

impl TrackStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrackStatus::Tentative => "tentative",
            TrackStatus::Confirmed => "confirmed",
            TrackStatus::Lost => "lost",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tentative" => Some(TrackStatus::Tentative),
            "confirmed" => Some(TrackStatus::Confirmed),
            "lost" => Some(TrackStatus::Lost),
            _ => None,
        }
    }
}

/// One matched observation in a track's history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub frame: u64,
    pub bbox: BoundingBox,
    pub anchor: Vec2,
    /// Status right after this observation was merged.
    pub status: TrackStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub history: Vec<TrackPoint>,
    pub kalman: KalmanState,
    pub status: TrackStatus,
    pub frames_since_update: u32,
    /// Consecutive matched frames.
    pub hits: u32,
    pub ever_confirmed: bool,
}

impl Track {
    fn spawn(id: u64, det: &Detection, cfg: &RunConfig) -> Self {
        let anchor = anchor_point(&det.bbox);
        let status = if cfg.t_confirm <= 1 {
            TrackStatus::Confirmed
        } else {
            TrackStatus::Tentative
        };
        Self {
            id,
            history: vec![TrackPoint {
                frame: det.frame,
                bbox: det.bbox,
                anchor,
                status,
            }],
            kalman: KalmanState::initialize(anchor, cfg.motion_model()),
            status,
            frames_since_update: 0,
            hits: 1,
            ever_confirmed: status == TrackStatus::Confirmed,
        }
    }

    pub fn last(&self) -> &TrackPoint {
        self.history.last().expect("tracks are created with one observation")
    }

    /// The box at the filter's current position, with the latest observed
    /// extent.
    pub fn predicted_box(&self) -> BoundingBox {
        self.last().bbox.with_anchor(self.kalman.position())
    }

    fn merge(&mut self, det: &Detection, cfg: &RunConfig) -> Result<(), KalmanError> {
        let anchor = anchor_point(&det.bbox);
        self.kalman = ekf_update(&self.kalman, anchor)?;
        self.frames_since_update = 0;
        self.hits += 1;
        self.status = match self.status {
            TrackStatus::Tentative if self.hits >= cfg.t_confirm => TrackStatus::Confirmed,
            TrackStatus::Lost => TrackStatus::Confirmed,
            s => s,
        };
        self.ever_confirmed |= self.status == TrackStatus::Confirmed;
        self.history.push(TrackPoint {
            frame: det.frame,
            bbox: det.bbox,
            anchor,
            status: self.status,
        });
        Ok(())
    }

    fn miss(&mut self) {
        self.frames_since_update += 1;
        self.hits = 0;
        if self.status == TrackStatus::Confirmed {
            self.status = TrackStatus::Lost;
        }
    }

    pub fn anchors(&self) -> Vec<crate::geometry::AnchorPoint> {
        self.history
            .iter()
            .map(|p| crate::geometry::AnchorPoint {
                position: p.anchor,
                frame: p.frame,
            })
            .collect()
    }
}

/// Scores how plausible it is that a detection continues a track.
/// Zero means implausible; higher is better.
pub trait Plausibility {
    fn score(&self, detection: &Detection, track: &Track) -> f64;
}

/// IoU between the detection and the track's predicted box, zeroed below
/// the gate.
#[derive(Debug, Clone, Copy)]
pub struct IouGate {
    pub gate: f64,
}

impl Plausibility for IouGate {
    fn score(&self, detection: &Detection, track: &Track) -> f64 {
        plausibility(detection, track, self.gate)
    }
}

pub fn plausibility(detection: &Detection, track: &Track, gate: f64) -> f64 {
    let score = iou(&detection.bbox, &track.predicted_box());
    if score < gate {
        0.0
    } else {
        score
    }
}

/// True when a track should be removed: it has gone unmatched for more than
/// `t_max` frames, or it missed a frame before being confirmed.
pub fn deletion_filter(track: &Track, cfg: &RunConfig) -> bool {
    track.frames_since_update > cfg.t_max
        || (track.status == TrackStatus::Tentative && track.frames_since_update > 0)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackerState {
    /// Live tracks in ascending id order.
    pub tracks: Vec<Track>,
    pub next_id: u64,
    pub current_frame: Option<u64>,
    /// Removed tracks that were confirmed at some point.
    pub finished: Vec<Track>,
}

impl TrackerState {
    pub fn new() -> Self {
        Self::default()
    }
}

fn match_tier(
    tracks: &mut [Track],
    candidates: &[usize],
    dets: &[Detection],
    cfg: &RunConfig,
    scorer: &dyn Plausibility,
) -> Result<(Vec<usize>, Vec<usize>), TrackError> {
    let scores: Vec<Vec<f64>> = dets
        .iter()
        .map(|d| candidates.iter().map(|&t| scorer.score(d, &tracks[t])).collect())
        .collect();
    let matching = assign(&scores, candidates.len(), cfg.assignment);
    for &(d, c) in &matching.pairs {
        let track = &mut tracks[candidates[c]];
        track
            .merge(&dets[d], cfg)
            .map_err(|source| TrackError::Kalman { track: track.id, source })?;
    }
    let leftover_tracks = matching.unmatched_tracks.iter().map(|&c| candidates[c]).collect();
    Ok((leftover_tracks, matching.unmatched_detections))
}

/// Advances the tracker by one frame using IoU plausibility.
pub fn step(state: TrackerState, frame: &FrameDetections, cfg: &RunConfig) -> Result<TrackerState, TrackError> {
    step_with(state, frame, cfg, &IouGate { gate: cfg.gate_iou })
}

/// Advances the tracker by one frame with a custom plausibility function.
pub fn step_with(
    mut state: TrackerState,
    frame: &FrameDetections,
    cfg: &RunConfig,
    scorer: &dyn Plausibility,
) -> Result<TrackerState, TrackError> {
    let k = frame.frame;
    let elapsed = match state.current_frame {
        Some(current) if k <= current => return Err(TrackError::NonMonotoneFrame { current, got: k }),
        Some(current) => k - current,
        None => 1,
    };

    // skipped frames count as misses
    for track in &mut state.tracks {
        for _ in 1..elapsed {
            track.kalman = coast(&track.kalman).map_err(|source| TrackError::Kalman { track: track.id, source })?;
            track.miss();
        }
        track.kalman = ekf_predict(&track.kalman).map_err(|source| TrackError::Kalman { track: track.id, source })?;
    }
    if elapsed > 1 {
        retire(&mut state, cfg);
    }

    let merged = merge_detections(&frame.detections, cfg.merge_iou);
    let (high, low): (Vec<Detection>, Vec<Detection>) = merged
        .into_iter()
        .filter(|d| d.confidence() >= cfg.conf_low)
        .partition(|d| d.confidence() >= cfg.conf_high);

    let all: Vec<usize> = (0..state.tracks.len()).collect();
    let (remaining, new_dets) = match_tier(&mut state.tracks, &all, &high, cfg, scorer)?;
    let (unmatched, _) = match_tier(&mut state.tracks, &remaining, &low, cfg, scorer)?;

    for &t in &unmatched {
        state.tracks[t].miss();
    }
    for &d in &new_dets {
        state.tracks.push(Track::spawn(state.next_id, &high[d], cfg));
        state.next_id += 1;
    }
    retire(&mut state, cfg);
    state.current_frame = Some(k);
    Ok(state)
}

fn retire(state: &mut TrackerState, cfg: &RunConfig) {
    let (dead, alive): (Vec<Track>, Vec<Track>) =
        std::mem::take(&mut state.tracks).into_iter().partition(|t| deletion_filter(t, cfg));
    state.tracks = alive;
    state.finished.extend(dead.into_iter().filter(|t| t.ever_confirmed));
}

/// Runs the tracker over a whole stream and returns every track that was
/// ever confirmed, in id order, with full history.
pub fn run(stream: &DetectionStream, cfg: &RunConfig) -> Result<Vec<Track>, TrackError> {
    let mut state = TrackerState::new();
    for frame in stream.frames() {
        state = step(state, frame, cfg)?;
    }
    let mut out = state.finished;
    out.extend(state.tracks.into_iter().filter(|t| t.ever_confirmed));
    out.sort_by_key(|t| t.id);
    Ok(out)
}
