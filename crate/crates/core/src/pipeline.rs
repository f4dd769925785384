//! File formats that connect the pipeline stages, plus whole-run helpers.
//!
//! ```text
//! tracks.csv       frame,track_id,cx,cy,w,h,anchor_x,anchor_y,status
//! predictions.csv  origin_frame,track_id,future_frame,pred_x,pred_y
//! report.csv       video,tracker,config,category,ade,fde,mae,rmse,id_switches,track_coverage,matched_pairs,unmatched_predictions
//! ```
//!
//! Every file has a header row. Undefined metrics are written as empty cells.

use std::collections::BTreeMap;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

use crate::association::{Track, TrackStatus};
use crate::geometry::{AnchorPoint, BoundingBox, GeometryError, Vec2};
use crate::ingest::RunConfig;
use crate::kalman::{coast, ekf_predict, ekf_update, filter_history, KalmanError, KalmanState};
use crate::metrics::{EvalReport, PredictionRecord, TrackBoxes};
use crate::spline::{predict, SplineError};

pub const TRACKS_HEADER: [&str; 9] = ["frame", "track_id", "cx", "cy", "w", "h", "anchor_x", "anchor_y", "status"];
pub const PREDICTIONS_HEADER: [&str; 5] = ["origin_frame", "track_id", "future_frame", "pred_x", "pred_y"];
pub const REPORT_HEADER: [&str; 12] = [
    "video",
    "tracker",
    "config",
    "category",
    "ade",
    "fde",
    "mae",
    "rmse",
    "id_switches",
    "track_coverage",
    "matched_pairs",
    "unmatched_predictions",
];

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("expected header `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("row {row}: {source}")]
    Geometry {
        row: usize,
        #[source]
        source: GeometryError,
    },
    #[error("row {row}: track {track} repeats frame {frame}")]
    DuplicateFrame { row: usize, track: u64, frame: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackRow {
    pub frame: u64,
    pub track_id: u64,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub anchor_x: f64,
    pub anchor_y: f64,
    pub status: TrackStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct PredictionRow {
    origin_frame: u64,
    track_id: u64,
    future_frame: u64,
    pred_x: f64,
    pred_y: f64,
}

/// One flat row of an evaluation, keyed by `(video, tracker, config)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub video: String,
    pub tracker: String,
    pub config: String,
    pub category: String,
    pub ade: Option<f64>,
    pub fde: Option<f64>,
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub id_switches: Option<usize>,
    pub track_coverage: Option<f64>,
    pub matched_pairs: usize,
    pub unmatched_predictions: usize,
}

impl ReportRow {
    pub fn from_report(report: &EvalReport, video: &str, tracker: &str, config: &str, category: &str) -> Self {
        Self {
            video: video.to_string(),
            tracker: tracker.to_string(),
            config: config.to_string(),
            category: category.to_string(),
            ade: report.ade,
            fde: report.fde,
            mae: report.mae,
            rmse: report.rmse,
            id_switches: report.id_switches,
            track_coverage: report.track_coverage,
            matched_pairs: report.matched_pairs,
            unmatched_predictions: report.unmatched_predictions,
        }
    }
}

fn write_rows<T: Serialize>(header: &[&str], rows: impl IntoIterator<Item = T>) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).expect("writing to memory");
    for row in rows {
        w.serialize(row).expect("rows serialize to flat records");
    }
    String::from_utf8(w.into_inner().expect("flushing to memory")).expect("csv output is utf-8")
}

fn read_rows<T: DeserializeOwned>(text: &str, header: &[&str]) -> Result<Vec<T>, FormatError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let found = r.headers()?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(FormatError::Header {
            expected: header.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        });
    }
    r.deserialize().map(|row| row.map_err(FormatError::from)).collect()
}

/// Rows for every observation of every track, sorted by frame then track id.
pub fn track_rows(tracks: &[Track]) -> Vec<TrackRow> {
    let mut rows: Vec<TrackRow> = tracks
        .iter()
        .flat_map(|t| {
            t.history.iter().map(move |p| TrackRow {
                frame: p.frame,
                track_id: t.id,
                cx: p.bbox.center().x,
                cy: p.bbox.center().y,
                w: p.bbox.width(),
                h: p.bbox.height(),
                anchor_x: p.anchor.x,
                anchor_y: p.anchor.y,
                status: p.status,
            })
        })
        .collect();
    rows.sort_by_key(|r| (r.frame, r.track_id));
    rows
}

pub fn write_tracks(tracks: &[Track]) -> String {
    write_rows(&TRACKS_HEADER, track_rows(tracks))
}

pub fn parse_tracks(text: &str) -> Result<Vec<TrackRow>, FormatError> {
    read_rows(text, &TRACKS_HEADER)
}

/// Per-track anchor histories in frame order.
pub fn track_histories(rows: &[TrackRow]) -> Result<BTreeMap<u64, Vec<AnchorPoint>>, FormatError> {
    let mut by_track: BTreeMap<u64, BTreeMap<u64, Vec2>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        let anchor = Vec2::new(r.anchor_x, r.anchor_y);
        if by_track.entry(r.track_id).or_default().insert(r.frame, anchor).is_some() {
            return Err(FormatError::DuplicateFrame {
                row: i + 2,
                track: r.track_id,
                frame: r.frame,
            });
        }
    }
    Ok(by_track
        .into_iter()
        .map(|(id, pts)| {
            let history = pts.into_iter().map(|(frame, position)| AnchorPoint { position, frame }).collect();
            (id, history)
        })
        .collect())
}

pub fn track_boxes(rows: &[TrackRow]) -> Result<TrackBoxes, FormatError> {
    let mut out = TrackBoxes::new();
    for (i, r) in rows.iter().enumerate() {
        let b = BoundingBox::new(Vec2::new(r.cx, r.cy), r.w, r.h)
            .map_err(|source| FormatError::Geometry { row: i + 2, source })?;
        out.entry(r.track_id).or_default().insert(r.frame, b);
    }
    Ok(out)
}

/// Writes predictions sorted by origin frame, track id, future frame.
pub fn write_predictions(preds: &[PredictionRecord]) -> String {
    let mut rows: Vec<PredictionRow> = preds
        .iter()
        .map(|p| PredictionRow {
            origin_frame: p.origin_frame,
            track_id: p.track_id,
            future_frame: p.future_frame,
            pred_x: p.position.x,
            pred_y: p.position.y,
        })
        .collect();
    rows.sort_by_key(|r| (r.origin_frame, r.track_id, r.future_frame));
    write_rows(&PREDICTIONS_HEADER, rows)
}

pub fn parse_predictions(text: &str) -> Result<Vec<PredictionRecord>, FormatError> {
    let rows: Vec<PredictionRow> = read_rows(text, &PREDICTIONS_HEADER)?;
    Ok(rows
        .into_iter()
        .map(|r| PredictionRecord {
            origin_frame: r.origin_frame,
            track_id: r.track_id,
            future_frame: r.future_frame,
            position: Vec2::new(r.pred_x, r.pred_y),
        })
        .collect())
}

pub fn write_report_rows(rows: &[ReportRow]) -> String {
    write_rows(&REPORT_HEADER, rows)
}

pub fn parse_report_rows(text: &str) -> Result<Vec<ReportRow>, FormatError> {
    read_rows(text, &REPORT_HEADER)
}

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("track {track}: {source}")]
    Spline {
        track: u64,
        #[source]
        source: SplineError,
    },
    #[error("track {track}: {source}")]
    Kalman {
        track: u64,
        #[source]
        source: KalmanError,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionRun {
    pub records: Vec<PredictionRecord>,
    /// Tracks with fewer than two observations, which cannot be extrapolated.
    pub skipped_tracks: usize,
}

/// Spline predictions from every observation of every track, using the
/// history up to and including that observation. Short histories fall back
/// to the Kalman velocity estimate.
pub fn predict_tracks(
    histories: &BTreeMap<u64, Vec<AnchorPoint>>,
    cfg: &RunConfig,
    horizon: usize,
) -> Result<PredictionRun, PredictError> {
    let params = cfg.spline_params();
    let model = cfg.motion_model();
    let mut run = PredictionRun::default();
    for (&track, history) in histories {
        if history.len() < 2 {
            run.skipped_tracks += 1;
            continue;
        }
        for end in 2..=history.len() {
            let prefix = &history[..end];
            let fallback = if end < crate::spline::MIN_SPLINE_POINTS {
                let measurements: Vec<(u64, Vec2)> = prefix.iter().map(|p| (p.frame, p.position)).collect();
                filter_history(&measurements, model)
                    .map_err(|source| PredictError::Kalman { track, source })?
                    .map(|s| s.velocity())
            } else {
                None
            };
            let predicted =
                predict(prefix, horizon, &params, fallback).map_err(|source| PredictError::Spline { track, source })?;
            run.records.extend(predicted.points.iter().map(|p| PredictionRecord {
                origin_frame: predicted.origin_frame,
                track_id: track,
                future_frame: p.frame,
                position: p.position,
            }));
        }
    }
    Ok(run)
}

/// Constant-velocity baseline: the Kalman filter's position and velocity at
/// each observation, extrapolated linearly.
pub fn predict_tracks_cv(
    histories: &BTreeMap<u64, Vec<AnchorPoint>>,
    cfg: &RunConfig,
    horizon: usize,
) -> Result<PredictionRun, PredictError> {
    let model = cfg.motion_model();
    let mut run = PredictionRun::default();
    for (&track, history) in histories {
        if history.len() < 2 {
            run.skipped_tracks += 1;
            continue;
        }
        let mut state = KalmanState::initialize(history[0].position, model);
        let mut frame = history[0].frame;
        for point in &history[1..] {
            let kalman = |source| PredictError::Kalman { track, source };
            while frame + 1 < point.frame {
                state = coast(&state).map_err(kalman)?;
                frame += 1;
            }
            state = ekf_update(&ekf_predict(&state).map_err(kalman)?, point.position).map_err(kalman)?;
            frame = point.frame;
            let (p, v) = (state.position(), state.velocity());
            run.records.extend((1..=horizon).map(|j| PredictionRecord {
                origin_frame: frame,
                track_id: track,
                future_frame: frame + j as u64,
                position: p + v * j as f64,
            }));
        }
    }
    Ok(run)
}
