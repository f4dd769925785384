//! Prediction and tracking quality against ground truth, in pixels.
//!
//! * ADE: mean Euclidean distance over every matched (prediction, truth)
//!   pair, across all horizon steps and emission frames.
//! * FDE: mean Euclidean distance over the final-horizon pair of each
//!   emission (only emissions whose last prediction is matched).
//! * MAE / RMSE: over the pooled per-coordinate residuals `{dx..., dy...}`.
//!
//! A prediction is matched when ground truth exists for its identity at its
//! future frame. Unmatched predictions are counted, not penalized. With no
//! matched pairs every error metric is undefined (`None`), never zero.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::geometry::{anchor_point, iou, BoundingBox, Vec2};
use crate::ingest::GroundTruth;

/// IoU a track box needs to count as covering a ground-truth box.
pub const MATCH_IOU: f64 = 0.5;

pub const METRIC_DEFINITIONS: &str = "ADE: mean Euclidean distance (px) over all matched (prediction, truth) anchor pairs; \
FDE: mean Euclidean distance (px) over the final-horizon pair of each emission; \
MAE: mean absolute per-coordinate residual (px); RMSE: root mean squared per-coordinate residual (px); \
predictions without ground truth at their future frame are counted as unmatched and excluded";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionRecord {
    pub origin_frame: u64,
    pub track_id: u64,
    pub future_frame: u64,
    pub position: Vec2,
}

/// Ground-truth anchor points: identity -> frame -> anchor.
pub type TruthAnchors = BTreeMap<u64, BTreeMap<u64, Vec2>>;

pub fn truth_anchors(gt: &GroundTruth) -> TruthAnchors {
    gt.iter()
        .map(|(&id, boxes)| (id, boxes.iter().map(|(f, b)| (*f, anchor_point(b))).collect()))
        .collect()
}

/// Matched pairs of one emission (one track at one origin frame).
#[derive(Debug, Clone, PartialEq)]
pub struct Emission {
    pub track_id: u64,
    pub origin_frame: u64,
    /// `(prediction, truth)` in future-frame order.
    pub pairs: Vec<(Vec2, Vec2)>,
    /// Whether the last-horizon prediction found ground truth.
    pub final_matched: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Pairing {
    pub emissions: Vec<Emission>,
    pub unmatched: usize,
}

impl Pairing {
    pub fn matched(&self) -> usize {
        self.emissions.iter().map(|e| e.pairs.len()).sum()
    }

    fn pairs(&self) -> impl Iterator<Item = &(Vec2, Vec2)> {
        self.emissions.iter().flat_map(|e| e.pairs.iter())
    }
}

/// Pairs predictions with ground truth. `identity_of(track_id, origin_frame)`
/// names the ground-truth identity a track stands for when it emitted; return
/// `None` when the track matched no identity then.
pub fn pair_predictions(
    preds: &[PredictionRecord],
    truth: &TruthAnchors,
    identity_of: impl Fn(u64, u64) -> Option<u64>,
) -> Pairing {
    let mut grouped: BTreeMap<(u64, u64), Vec<&PredictionRecord>> = BTreeMap::new();
    for p in preds {
        grouped.entry((p.track_id, p.origin_frame)).or_default().push(p);
    }
    let mut pairing = Pairing::default();
    for ((track_id, origin_frame), mut records) in grouped {
        records.sort_by_key(|r| r.future_frame);
        let gt = identity_of(track_id, origin_frame).and_then(|id| truth.get(&id));
        let mut emission = Emission {
            track_id,
            origin_frame,
            pairs: Vec::with_capacity(records.len()),
            final_matched: false,
        };
        for (i, r) in records.iter().enumerate() {
            match gt.and_then(|frames| frames.get(&r.future_frame)) {
                Some(&t) => {
                    emission.pairs.push((r.position, t));
                    emission.final_matched = i + 1 == records.len();
                }
                None => pairing.unmatched += 1,
            }
        }
        pairing.emissions.push(emission);
    }
    pairing
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn ade(pairing: &Pairing) -> Option<f64> {
    mean(pairing.pairs().map(|(p, t)| (*p - *t).norm()))
}

pub fn fde(pairing: &Pairing) -> Option<f64> {
    mean(
        pairing
            .emissions
            .iter()
            .filter(|e| e.final_matched)
            .map(|e| {
                let (p, t) = e.pairs[e.pairs.len() - 1];
                (p - t).norm()
            }),
    )
}

fn residuals(pairing: &Pairing) -> impl Iterator<Item = f64> + '_ {
    pairing.pairs().flat_map(|(p, t)| {
        let d = *p - *t;
        [d.x, d.y]
    })
}

pub fn mae(pairing: &Pairing) -> Option<f64> {
    mean(residuals(pairing).map(f64::abs))
}

pub fn rmse(pairing: &Pairing) -> Option<f64> {
    mean(residuals(pairing).map(|r| r * r)).map(f64::sqrt)
}

/// Track boxes: track id -> frame -> box.
pub type TrackBoxes = BTreeMap<u64, BTreeMap<u64, BoundingBox>>;

/// Per-frame one-to-one matching of ground-truth identities to tracks by
/// descending IoU above [`MATCH_IOU`]. Returns frame -> identity -> track.
pub fn frame_matches(tracks: &TrackBoxes, gt: &GroundTruth) -> BTreeMap<u64, BTreeMap<u64, u64>> {
    let mut by_frame_gt: BTreeMap<u64, Vec<(u64, BoundingBox)>> = BTreeMap::new();
    for (&id, boxes) in gt {
        for &(f, b) in boxes {
            by_frame_gt.entry(f).or_default().push((id, b));
        }
    }
    let mut by_frame_tr: BTreeMap<u64, Vec<(u64, BoundingBox)>> = BTreeMap::new();
    for (&id, boxes) in tracks {
        for (&f, &b) in boxes {
            by_frame_tr.entry(f).or_default().push((id, b));
        }
    }
    let mut out = BTreeMap::new();
    for (f, gts) in by_frame_gt {
        let Some(trs) = by_frame_tr.get(&f) else { continue };
        let mut candidates: Vec<(f64, u64, u64)> = gts
            .iter()
            .flat_map(|(gid, gb)| trs.iter().map(move |(tid, tb)| (iou(gb, tb), *gid, *tid)))
            .filter(|(score, _, _)| *score > MATCH_IOU)
            .collect();
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut matched: BTreeMap<u64, u64> = BTreeMap::new();
        let mut used_tracks = Vec::new();
        for (_, gid, tid) in candidates {
            if !matched.contains_key(&gid) && !used_tracks.contains(&tid) {
                matched.insert(gid, tid);
                used_tracks.push(tid);
            }
        }
        if !matched.is_empty() {
            out.insert(f, matched);
        }
    }
    out
}

/// Frames where an identity's matched track differs from the track it was
/// last matched to.
pub fn id_switches(tracks: &TrackBoxes, gt: &GroundTruth) -> usize {
    let mut last: BTreeMap<u64, u64> = BTreeMap::new();
    let mut switches = 0;
    for matched in frame_matches(tracks, gt).values() {
        for (&gid, &tid) in matched {
            if let Some(prev) = last.insert(gid, tid) {
                if prev != tid {
                    switches += 1;
                }
            }
        }
    }
    switches
}

/// Fraction of ground-truth boxes matched by some track; `None` without
/// ground truth.
pub fn track_coverage(tracks: &TrackBoxes, gt: &GroundTruth) -> Option<f64> {
    let total: usize = gt.values().map(Vec::len).sum();
    let matched: usize = frame_matches(tracks, gt).values().map(BTreeMap::len).sum();
    (total > 0).then(|| matched as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackBreakdown {
    pub track_id: u64,
    pub matched_pairs: usize,
    pub ade: Option<f64>,
    pub fde: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub definitions: &'static str,
    pub ade: Option<f64>,
    pub fde: Option<f64>,
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub matched_pairs: usize,
    pub unmatched_predictions: usize,
    pub emissions: usize,
    pub id_switches: Option<usize>,
    pub track_coverage: Option<f64>,
    pub per_track: Vec<TrackBreakdown>,
}

/// Scores predictions; when `tracks` is given, predictions are attributed to
/// identities through per-frame IoU matching and identity metrics are filled
/// in. Without tracks, a prediction's track id is taken as its identity.
pub fn evaluate(preds: &[PredictionRecord], gt: &GroundTruth, tracks: Option<&TrackBoxes>) -> EvalReport {
    let truth = truth_anchors(gt);
    let pairing = match tracks {
        Some(tracks) => {
            let matches = frame_matches(tracks, gt);
            let mut owner: BTreeMap<(u64, u64), u64> = BTreeMap::new();
            for (&f, m) in &matches {
                for (&gid, &tid) in m {
                    owner.insert((tid, f), gid);
                }
            }
            pair_predictions(preds, &truth, |tid, origin| owner.get(&(tid, origin)).copied())
        }
        None => pair_predictions(preds, &truth, |tid, _| Some(tid)),
    };

    let mut per_track: BTreeMap<u64, Pairing> = BTreeMap::new();
    for e in &pairing.emissions {
        per_track.entry(e.track_id).or_default().emissions.push(e.clone());
    }
    EvalReport {
        definitions: METRIC_DEFINITIONS,
        ade: ade(&pairing),
        fde: fde(&pairing),
        mae: mae(&pairing),
        rmse: rmse(&pairing),
        matched_pairs: pairing.matched(),
        unmatched_predictions: pairing.unmatched,
        emissions: pairing.emissions.len(),
        id_switches: tracks.map(|t| id_switches(t, gt)),
        track_coverage: tracks.and_then(|t| track_coverage(t, gt)),
        per_track: per_track
            .into_iter()
            .map(|(track_id, p)| TrackBreakdown {
                track_id,
                matched_pairs: p.matched(),
                ade: ade(&p),
                fde: fde(&p),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(cx: f64, cy: f64) -> BoundingBox {
        BoundingBox::new(Vec2::new(cx, cy), 40.0, 20.0).unwrap()
    }

    fn emission(offsets: &[(f64, f64)]) -> Emission {
        Emission {
            track_id: 0,
            origin_frame: 0,
            pairs: offsets
                .iter()
                .enumerate()
                .map(|(i, &(dx, dy))| {
                    let t = Vec2::new(i as f64, 2.0 * i as f64);
                    (t + Vec2::new(dx, dy), t)
                })
                .collect(),
            final_matched: true,
        }
    }

    fn pairing(emissions: Vec<Emission>) -> Pairing {
        Pairing { emissions, unmatched: 0 }
    }

    #[test]
    fn perfect_predictions_score_zero() {
        let p = pairing(vec![emission(&[(0.0, 0.0); 4])]);
        assert_eq!((ade(&p), fde(&p), mae(&p), rmse(&p)), (Some(0.0), Some(0.0), Some(0.0), Some(0.0)));
    }

    #[test]
    fn constant_offset() {
        let p = pairing(vec![emission(&[(3.0, 4.0); 5])]);
        assert_eq!(ade(&p), Some(5.0));
        assert_eq!(fde(&p), Some(5.0));
        assert_eq!(mae(&p), Some(3.5));
        assert!((rmse(&p).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn mean_distances() {
        let p = pairing(vec![emission(&[(1.0, 0.0), (0.0, 3.0)])]);
        assert_eq!(ade(&p), Some(2.0));
    }

    #[test]
    fn fde_uses_final_step_only() {
        let p = pairing(vec![emission(&[(0.0, 0.0), (0.0, 0.0), (3.0, 4.0)])]);
        assert_eq!(fde(&p), Some(5.0));
        assert!(ade(&p).unwrap() < 5.0);

        let two = pairing(vec![emission(&[(1.0, 1.0), (0.0, 0.0)]), emission(&[(0.0, 0.0), (6.0, 8.0)])]);
        assert_eq!(fde(&two), Some(5.0));
    }

    #[test]
    fn constant_residual_equalizes_mae_and_rmse() {
        let p = pairing(vec![emission(&[(-2.5, 2.5); 3])]);
        assert_eq!(mae(&p), Some(2.5));
        assert_eq!(rmse(&p), Some(2.5));
    }

    #[test]
    fn no_pairs_is_undefined() {
        let p = Pairing::default();
        assert_eq!((ade(&p), fde(&p), mae(&p), rmse(&p)), (None, None, None, None));
    }

    #[test]
    fn unmatched_predictions_counted() {
        let mut gt = GroundTruth::new();
        gt.insert(0, vec![(1, bx(10.0, 10.0)), (2, bx(12.0, 10.0))]);
        let preds: Vec<PredictionRecord> = (1..=3)
            .map(|f| PredictionRecord { origin_frame: 0, track_id: 0, future_frame: f, position: Vec2::new(10.0, 20.0) })
            .chain([PredictionRecord { origin_frame: 0, track_id: 9, future_frame: 1, position: Vec2::ZERO }])
            .collect();
        let report = evaluate(&preds, &gt, None);
        assert_eq!(report.matched_pairs, 2);
        assert_eq!(report.unmatched_predictions, 2);
        // final-horizon prediction (frame 3) has no truth
        assert_eq!(report.fde, None);
        assert_eq!(report.ade, Some(1.0));
    }

    fn track_boxes(rows: &[(u64, u64, f64)]) -> TrackBoxes {
        let mut t = TrackBoxes::new();
        for &(id, f, x) in rows {
            t.entry(id).or_default().insert(f, bx(x, 100.0));
        }
        t
    }

    #[test]
    fn id_switch_counting() {
        let mut gt = GroundTruth::new();
        gt.insert(0, (0..4).map(|f| (f, bx(100.0, 100.0))).collect());
        let perfect = track_boxes(&[(0, 0, 100.0), (0, 1, 100.0), (0, 2, 100.0), (0, 3, 100.0)]);
        assert_eq!(id_switches(&perfect, &gt), 0);
        assert_eq!(track_coverage(&perfect, &gt), Some(1.0));

        let handoff = track_boxes(&[(0, 0, 100.0), (0, 1, 100.0), (1, 2, 100.0), (1, 3, 100.0)]);
        assert_eq!(id_switches(&handoff, &gt), 1);

        // two identities swap tracks once: one switch each
        let mut gt2 = GroundTruth::new();
        gt2.insert(0, (0..4).map(|f| (f, bx(100.0, 100.0))).collect());
        gt2.insert(1, (0..4).map(|f| (f, bx(500.0, 100.0))).collect());
        let swapped = track_boxes(&[
            (0, 0, 100.0), (0, 1, 100.0), (0, 2, 500.0), (0, 3, 500.0),
            (1, 0, 500.0), (1, 1, 500.0), (1, 2, 100.0), (1, 3, 100.0),
        ]);
        assert_eq!(id_switches(&swapped, &gt2), 2);
    }

    #[test]
    fn gaps_do_not_reset_identity() {
        let mut gt = GroundTruth::new();
        gt.insert(0, (0..5).map(|f| (f, bx(100.0, 100.0))).collect());
        let gappy = track_boxes(&[(3, 0, 100.0), (3, 4, 100.0)]);
        assert_eq!(id_switches(&gappy, &gt), 0);
        assert_eq!(track_coverage(&gappy, &gt), Some(0.4));
    }

    #[test]
    fn evaluate_with_tracks_maps_identities() {
        let mut gt = GroundTruth::new();
        gt.insert(7, (0..5).map(|f| (f, bx(100.0 + f as f64, 100.0))).collect());
        let tracks = track_boxes(&[(0, 0, 100.0), (0, 1, 101.0)]);
        let preds: Vec<PredictionRecord> = (2..=3)
            .map(|f| PredictionRecord {
                origin_frame: 1,
                track_id: 0,
                future_frame: f,
                position: anchor_point(&bx(100.0 + f as f64, 100.0)) + Vec2::new(3.0, 4.0),
            })
            .collect();
        let report = evaluate(&preds, &gt, Some(&tracks));
        assert_eq!(report.ade, Some(5.0));
        assert_eq!(report.fde, Some(5.0));
        assert_eq!(report.id_switches, Some(0));
        assert_eq!(report.track_coverage, Some(0.4));
        assert_eq!(report.per_track.len(), 1);
    }
}
