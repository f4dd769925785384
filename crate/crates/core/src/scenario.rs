//! Synthetic vessel scenarios: exact ground-truth paths plus seeded
//! detector-style corruption.
//!
//! Randomness comes from [`ScenarioRng`], PCG-XSL-RR 128/64 (`rand_pcg::Pcg64`)
//! seeded as `state = seed`, `stream = 0xa02bdbf7bb3c0a7ac28fa16a64abf96`.
//! Uniform reals are `(next_u64 >> 11) * 2^-53`; normals use the cosine branch
//! of Box–Muller on two fresh uniforms. Draw order is fixed (see
//! [`corrupt`]), so any reimplementation with the same generator reproduces
//! streams bit for bit.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand_core::Rng;
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BoundingBox, Category, Detection, FrameDetections, Vec2};
use crate::ingest::{DetectionStream, FrameSize, GroundTruth};
use crate::spline::HermitePiece;

const PCG_STREAM: u128 = 0xa02b_dbf7_bb3c_0a7a_c28f_a16a_64ab_f96;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("vessel {vessel}: {message}")]
    InvalidPath { vessel: usize, message: String },
    #[error("invalid corruption spec: {0}")]
    InvalidCorruption(String),
    #[error("occlusion window [{start}, {end}] outside frames [0, {frames})")]
    WindowOutOfRange { start: u64, end: u64, frames: u64 },
    #[error("unknown identity {0}")]
    UnknownIdentity(u64),
}

/// Seeded generator with a documented, portable output sequence.
pub struct ScenarioRng(Pcg64);

impl ScenarioRng {
    pub fn new(seed: u64) -> Self {
        Self(Pcg64::new(seed as u128, PCG_STREAM))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self, sigma: f64) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        sigma * (-2.0 * (1.0 - u1).ln()).sqrt() * (TAU * u2).cos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Extent {
    pub width: f64,
    pub height: f64,
    /// Per-frame growth in pixels, e.g. for an approaching vessel.
    #[serde(default)]
    pub growth: (f64, f64),
}

impl Extent {
    fn at(&self, frame: u64) -> (f64, f64) {
        let f = frame as f64;
        (self.width + self.growth.0 * f, self.height + self.growth.1 * f)
    }
}

/// Path of a vessel's box center over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PathKind {
    /// `start + velocity * f`.
    Line { start: Vec2, velocity: Vec2 },
    /// `center + radius * (cos θ, sin θ)` with `θ = start_angle + angular_rate * f`.
    Arc {
        center: Vec2,
        radius: f64,
        angular_rate: f64,
        #[serde(default)]
        start_angle: f64,
    },
    /// Catmull–Rom spline through `(frame, position)` waypoints, held constant
    /// outside the waypoint range.
    Spline { waypoints: Vec<(u64, Vec2)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    #[serde(flatten)]
    pub kind: PathKind,
    pub extent: Extent,
    /// First frame the vessel exists (inclusive).
    #[serde(default)]
    pub enter: u64,
    /// Frame after which the vessel is gone (inclusive); defaults to the end.
    #[serde(default)]
    pub exit: Option<u64>,
}

impl PathSpec {
    pub fn center_at(&self, frame: u64) -> Vec2 {
        let f = frame as f64;
        match &self.kind {
            PathKind::Line { start, velocity } => *start + *velocity * f,
            PathKind::Arc {
                center,
                radius,
                angular_rate,
                start_angle,
            } => {
                let theta = start_angle + angular_rate * f;
                *center + Vec2::new(theta.cos(), theta.sin()) * *radius
            }
            PathKind::Spline { waypoints } => catmull_rom(waypoints, f),
        }
    }
}

fn catmull_rom(waypoints: &[(u64, Vec2)], f: f64) -> Vec2 {
    let n = waypoints.len();
    if f <= waypoints[0].0 as f64 {
        return waypoints[0].1;
    }
    if f >= waypoints[n - 1].0 as f64 {
        return waypoints[n - 1].1;
    }
    let i = waypoints.windows(2).position(|w| f < w[1].0 as f64).unwrap_or(n - 2);
    let velocity = |m: usize| {
        let (lo, hi) = (m.saturating_sub(1), (m + 1).min(n - 1));
        (waypoints[hi].1 - waypoints[lo].1) * (1.0 / (waypoints[hi].0 - waypoints[lo].0) as f64)
    };
    let (l, r) = (waypoints[i], waypoints[i + 1]);
    let span = (r.0 - l.0) as f64;
    HermitePiece::new(l.1, r.1, velocity(i) * span, velocity(i + 1) * span).eval((f - l.0 as f64) / span)
}

/// Camera shake: `amplitude * (sin, cos)(2π f / period)` plus Gaussian jitter,
/// added to every box in a frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Shake {
    pub amplitude: f64,
    pub period: f64,
    pub jitter_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionSpec {
    pub position_sigma: f64,
    pub extent_sigma: f64,
    pub dropout: f64,
    /// Expected false positives per frame: `floor(rate)` always, plus one more
    /// with probability `fract(rate)`.
    pub false_positive_rate: f64,
    pub shake: Shake,
    /// Fraction of true detections whose confidence falls in the low tier.
    pub low_confidence_fraction: f64,
    pub conf_low: f64,
    pub conf_high: f64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            position_sigma: 0.0,
            extent_sigma: 0.0,
            dropout: 0.0,
            false_positive_rate: 0.0,
            shake: Shake::default(),
            low_confidence_fraction: 0.0,
            conf_low: 0.1,
            conf_high: 0.5,
        }
    }
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::InvalidCorruption(m.to_string()));
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        let sigma = |s: f64| s.is_finite() && s >= 0.0;
        if !prob(self.dropout) {
            return bad("dropout must be in [0, 1]");
        }
        if !prob(self.low_confidence_fraction) {
            return bad("low_confidence_fraction must be in [0, 1]");
        }
        if !(sigma(self.position_sigma) && sigma(self.extent_sigma) && sigma(self.shake.jitter_sigma)) {
            return bad("noise sigmas must be finite and >= 0");
        }
        if !(sigma(self.false_positive_rate) && sigma(self.shake.amplitude)) {
            return bad("false_positive_rate and shake amplitude must be finite and >= 0");
        }
        if self.shake.amplitude > 0.0 && !(self.shake.period > 0.0) {
            return bad("shake period must be > 0 when amplitude is set");
        }
        if !(prob(self.conf_low) && prob(self.conf_high) && self.conf_low <= self.conf_high) {
            return bad("confidence tiers must satisfy 0 <= conf_low <= conf_high <= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Occlusion {
    pub identity: u64,
    pub start: u64,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub frame_size: FrameSize,
    pub frames: u64,
    pub vessels: Vec<PathSpec>,
    #[serde(default)]
    pub corruption: CorruptionSpec,
    #[serde(default)]
    pub occlusions: Vec<Occlusion>,
    #[serde(default)]
    pub seed: u64,
    /// Grouping label for reports, e.g. `inland` or `sea`.
    #[serde(default = "default_category")]
    pub category: String,
}

fn default_category() -> String {
    "uncategorized".to_string()
}

/// Identity -> frame -> exact box. Only frames where the box center lies
/// inside the image are present.
pub type Truth = BTreeMap<u64, BTreeMap<u64, BoundingBox>>;

pub fn generate_truth(scenario: &Scenario) -> Result<Truth, ScenarioError> {
    let (fw, fh) = (scenario.frame_size.width as f64, scenario.frame_size.height as f64);
    let mut truth = Truth::new();
    for (vessel, spec) in scenario.vessels.iter().enumerate() {
        let invalid = |message: String| ScenarioError::InvalidPath { vessel, message };
        if let PathKind::Spline { waypoints } = &spec.kind {
            if waypoints.len() < 2 || !waypoints.windows(2).all(|w| w[0].0 < w[1].0) {
                return Err(invalid("spline needs >= 2 waypoints with increasing frames".into()));
            }
        }
        let last = spec.exit.unwrap_or(u64::MAX).min(scenario.frames.saturating_sub(1));
        let mut boxes = BTreeMap::new();
        for f in spec.enter..=last {
            if scenario.frames == 0 {
                break;
            }
            let c = spec.center_at(f);
            if !(c.is_finite() && c.x >= -fw / 2.0 && c.x <= 1.5 * fw && c.y >= -fh / 2.0 && c.y <= 1.5 * fh) {
                return Err(invalid(format!("center ({:.1}, {:.1}) at frame {f} leaves twice the frame bounds", c.x, c.y)));
            }
            let (w, h) = spec.extent.at(f);
            let b = BoundingBox::new(c, w, h).map_err(|e| invalid(format!("frame {f}: {e}")))?;
            if scenario.frame_size.contains(c) {
                boxes.insert(f, b);
            }
        }
        truth.insert(vessel as u64, boxes);
    }
    for occ in &scenario.occlusions {
        truth = occlusion_window(truth, occ.identity, occ.start, occ.len, scenario.frames)?;
    }
    Ok(truth)
}

/// Removes `identity`'s boxes on frames `start .. start + len`.
pub fn occlusion_window(
    mut truth: Truth,
    identity: u64,
    start: u64,
    len: u64,
    frames: u64,
) -> Result<Truth, ScenarioError> {
    if len == 0 {
        return Ok(truth);
    }
    let end = start + len - 1;
    if end >= frames {
        return Err(ScenarioError::WindowOutOfRange { start, end, frames });
    }
    let boxes = truth.get_mut(&identity).ok_or(ScenarioError::UnknownIdentity(identity))?;
    boxes.retain(|f, _| !(start..=end).contains(f));
    Ok(truth)
}

pub fn truth_to_ground_truth(truth: &Truth) -> GroundTruth {
    truth
        .iter()
        .map(|(&id, boxes)| (id, boxes.iter().map(|(&f, &b)| (f, b)).collect()))
        .collect()
}

/// Turns exact boxes into a detector-like stream over frames `0..frames`.
///
/// Per frame, in order: shake jitter (x then y); then for each identity
/// present, ascending: dropout draw, then (if kept) position noise x, y,
/// extent noise w, h, low-tier draw, confidence draw; then the false-positive
/// count draw and, per false positive, center x, y, width, aspect, confidence.
/// All draws happen even when the corresponding magnitude is zero.
/// Detections that end up with a non-positive extent or too far outside the
/// frame are dropped.
pub fn corrupt(
    truth: &Truth,
    spec: &CorruptionSpec,
    seed: u64,
    frames: u64,
    frame_size: FrameSize,
) -> Result<DetectionStream, ScenarioError> {
    spec.validate()?;
    let mut rng = ScenarioRng::new(seed);
    let (fw, fh) = (frame_size.width as f64, frame_size.height as f64);
    let mut out = Vec::with_capacity(frames as usize);
    for f in 0..frames {
        let phase = if spec.shake.period > 0.0 { TAU * f as f64 / spec.shake.period } else { 0.0 };
        let jx = rng.normal(spec.shake.jitter_sigma);
        let jy = rng.normal(spec.shake.jitter_sigma);
        let shake = Vec2::new(spec.shake.amplitude * phase.sin() + jx, spec.shake.amplitude * phase.cos() + jy);

        let mut dets = Vec::new();
        for boxes in truth.values() {
            let Some(b) = boxes.get(&f) else { continue };
            let dropped = rng.uniform() < spec.dropout;
            if dropped {
                continue;
            }
            let noise = Vec2::new(rng.normal(spec.position_sigma), rng.normal(spec.position_sigma));
            let (dw, dh) = (rng.normal(spec.extent_sigma), rng.normal(spec.extent_sigma));
            let low = rng.uniform() < spec.low_confidence_fraction;
            let u = rng.uniform();
            let conf = if low {
                spec.conf_low + (spec.conf_high - spec.conf_low) * u
            } else {
                spec.conf_high + (1.0 - spec.conf_high) * u
            };
            let Ok(noisy) = BoundingBox::new(b.center() + noise + shake, b.width() + dw, b.height() + dh) else {
                continue;
            };
            if frame_size.admits(&noisy) {
                dets.push(Detection::new(noisy, Category::UNLABELED, conf.min(1.0), f).expect("confidence in [0, 1]"));
            }
        }

        let extra = if rng.uniform() < spec.false_positive_rate.fract() { 1 } else { 0 };
        for _ in 0..spec.false_positive_rate.floor() as u64 + extra {
            let center = Vec2::new(rng.uniform_in(0.0, fw), rng.uniform_in(0.0, fh));
            let w = rng.uniform_in(20.0, 120.0);
            let h = w * rng.uniform_in(0.3, 0.6);
            let conf = rng.uniform_in(spec.conf_low, spec.conf_high);
            let b = BoundingBox::new(center, w, h).expect("positive extent");
            dets.push(Detection::new(b, Category::UNLABELED, conf, f).expect("confidence in [0, 1]"));
        }
        out.push(FrameDetections { frame: f, detections: dets });
    }
    Ok(DetectionStream::new(out, frame_size))
}

/// Truth plus corrupted detections for a scenario.
pub fn synthesize(scenario: &Scenario) -> Result<(Truth, DetectionStream), ScenarioError> {
    let truth = generate_truth(scenario)?;
    let stream = corrupt(&truth, &scenario.corruption, scenario.seed, scenario.frames, scenario.frame_size)?;
    Ok((truth, stream))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn line(start: (f64, f64), v: (f64, f64)) -> PathSpec {
        PathSpec {
            kind: PathKind::Line {
                start: Vec2::new(start.0, start.1),
                velocity: Vec2::new(v.0, v.1),
            },
            extent: Extent { width: 40.0, height: 20.0, growth: (0.0, 0.0) },
            enter: 0,
            exit: None,
        }
    }

    fn scenario(vessels: Vec<PathSpec>, frames: u64) -> Scenario {
        Scenario {
            frame_size: FrameSize::default(),
            frames,
            vessels,
            corruption: CorruptionSpec::default(),
            occlusions: vec![],
            seed: 7,
            category: default_category(),
        }
    }

    #[test]
    fn line_kinematics() {
        let truth = generate_truth(&scenario(vec![line((0.0, 360.0), (2.0, 0.0))], 10)).unwrap();
        let centers: Vec<Vec2> = truth[&0].values().map(|b| b.center()).collect();
        let expected: Vec<Vec2> = (0..10).map(|f| Vec2::new(2.0 * f as f64, 360.0)).collect();
        assert_eq!(centers, expected);
    }

    #[test]
    fn arc_parameterization() {
        let mut s = scenario(vec![], 50);
        s.vessels.push(PathSpec {
            kind: PathKind::Arc { center: Vec2::new(640.0, 360.0), radius: 100.0, angular_rate: PI / 100.0, start_angle: 0.0 },
            extent: Extent { width: 30.0, height: 10.0, growth: (0.0, 0.0) },
            enter: 0,
            exit: None,
        });
        let truth = generate_truth(&s).unwrap();
        for (&f, b) in &truth[&0] {
            let theta = f as f64 * PI / 100.0;
            let expected = Vec2::new(640.0 + 100.0 * theta.cos(), 360.0 + 100.0 * theta.sin());
            assert!((b.center() - expected).norm() < 1e-9);
            assert!(((b.center() - Vec2::new(640.0, 360.0)).norm() - 100.0).abs() < 1e-9);
        }
        assert_eq!(truth[&0].len(), 50);
    }

    #[test]
    fn no_vessels_no_truth() {
        assert!(generate_truth(&scenario(vec![], 10)).unwrap().is_empty());
    }

    #[test]
    fn paths_leaving_double_bounds_rejected() {
        let err = generate_truth(&scenario(vec![line((0.0, 0.0), (100.0, 0.0))], 30)).unwrap_err();
        assert!(matches!(err, ScenarioError::InvalidPath { vessel: 0, .. }));
    }

    #[test]
    fn offscreen_frames_are_absent() {
        let truth = generate_truth(&scenario(vec![line((-50.0, 100.0), (10.0, 0.0))], 20)).unwrap();
        assert_eq!(truth[&0].keys().next(), Some(&5));
    }

    #[test]
    fn spline_path_interpolates_waypoints() {
        let mut s = scenario(vec![], 30);
        s.vessels.push(PathSpec {
            kind: PathKind::Spline {
                waypoints: vec![(0, Vec2::new(100.0, 100.0)), (10, Vec2::new(200.0, 150.0)), (20, Vec2::new(300.0, 100.0))],
            },
            extent: Extent { width: 30.0, height: 10.0, growth: (0.0, 0.0) },
            enter: 0,
            exit: Some(20),
        });
        let truth = generate_truth(&s).unwrap();
        assert_eq!(truth[&0][&10].center(), Vec2::new(200.0, 150.0));
        assert_eq!(truth[&0].len(), 21);
    }

    #[test]
    fn zero_corruption_is_identity_on_geometry() {
        let s = scenario(vec![line((100.0, 300.0), (2.0, 1.0)), line((900.0, 200.0), (-1.5, 0.5))], 40);
        let (truth, stream) = synthesize(&s).unwrap();
        assert_eq!(stream.len(), 40);
        for f in stream.frames() {
            let boxes: Vec<BoundingBox> = f.detections.iter().map(|d| d.bbox).collect();
            let expected: Vec<BoundingBox> = truth.values().filter_map(|m| m.get(&f.frame).copied()).collect();
            assert_eq!(boxes, expected);
            assert!(f.detections.iter().all(|d| d.confidence() >= 0.5));
        }
    }

    #[test]
    fn full_dropout_empties_every_frame() {
        let mut s = scenario(vec![line((100.0, 300.0), (2.0, 1.0))], 30);
        s.corruption.dropout = 1.0;
        let (_, stream) = synthesize(&s).unwrap();
        assert_eq!(stream.len(), 30);
        assert_eq!(stream.detection_count(), 0);
    }

    #[test]
    fn dropout_rate_concentrates() {
        // one stationary vessel, 1000 frames: binomial sd ~0.0145, tolerance 0.05
        let mut s = scenario(vec![line((640.0, 360.0), (0.0, 0.0))], 1000);
        s.corruption.dropout = 0.3;
        let (_, stream) = synthesize(&s).unwrap();
        let dropped = 1.0 - stream.detection_count() as f64 / 1000.0;
        assert!((dropped - 0.3).abs() <= 0.05, "dropped {dropped}");
    }

    #[test]
    fn false_positives_are_low_confidence() {
        let mut s = scenario(vec![], 50);
        s.corruption.false_positive_rate = 2.0;
        let (_, stream) = synthesize(&s).unwrap();
        assert_eq!(stream.detection_count(), 100);
        for f in stream.frames() {
            assert!(f.detections.iter().all(|d| (0.1..0.5).contains(&d.confidence())));
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let mut s = scenario(vec![line((100.0, 300.0), (2.0, 1.0))], 100);
        s.corruption = CorruptionSpec {
            position_sigma: 2.0,
            extent_sigma: 1.0,
            dropout: 0.1,
            false_positive_rate: 1.5,
            shake: Shake { amplitude: 5.0, period: 40.0, jitter_sigma: 1.0 },
            ..CorruptionSpec::default()
        };
        assert_eq!(synthesize(&s).unwrap(), synthesize(&s).unwrap());
        let mut other = s.clone();
        other.seed += 1;
        assert_ne!(synthesize(&s).unwrap().1, synthesize(&other).unwrap().1);
    }

    #[test]
    fn rng_sequence_is_pinned() {
        // guards the documented generator construction against silent changes
        let mut a = ScenarioRng::new(42);
        let mut b = Pcg64::new(42, PCG_STREAM);
        for _ in 0..4 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut r = ScenarioRng::new(1);
        let draws: Vec<f64> = (0..1000).map(|_| r.uniform()).collect();
        assert!(draws.iter().all(|u| (0.0..1.0).contains(u)));
        let mean = draws.iter().sum::<f64>() / 1000.0;
        assert!((mean - 0.5).abs() < 0.05);
    }

    #[test]
    fn occlusion_windows() {
        let s = scenario(vec![line((100.0, 300.0), (1.0, 0.0))], 100);
        let truth = generate_truth(&s).unwrap();
        assert_eq!(occlusion_window(truth.clone(), 0, 10, 0, 100).unwrap(), truth);

        let cut = occlusion_window(truth.clone(), 0, 50, 21, 100).unwrap();
        assert!((50..=70).all(|f| !cut[&0].contains_key(&f)));
        assert!(cut[&0].contains_key(&49) && cut[&0].contains_key(&71));
        assert_eq!(cut[&0].len(), 100 - 21);

        let gone = occlusion_window(truth.clone(), 0, 0, 100, 100).unwrap();
        assert!(gone[&0].is_empty());

        assert!(matches!(occlusion_window(truth.clone(), 0, 90, 20, 100), Err(ScenarioError::WindowOutOfRange { .. })));
        assert!(matches!(occlusion_window(truth, 3, 0, 5, 100), Err(ScenarioError::UnknownIdentity(3))));
    }

    #[test]
    fn scenario_json_round_trip() {
        let text = r#"{
            "frames": 20,
            "vessels": [
                {"kind": "line", "start": {"x": 10, "y": 300}, "velocity": {"x": 2, "y": 0},
                 "extent": {"width": 40, "height": 20}},
                {"kind": "arc", "center": {"x": 640, "y": 360}, "radius": 100, "angular_rate": 0.01,
                 "extent": {"width": 40, "height": 20, "growth": [0.1, 0.05]}, "enter": 5}
            ],
            "corruption": {"position_sigma": 1.0, "shake": {"amplitude": 3, "period": 25}},
            "seed": 3,
            "category": "inland"
        }"#;
        let s: Scenario = serde_json::from_str(text).unwrap();
        assert_eq!(s.vessels.len(), 2);
        assert_eq!(s.corruption.shake.amplitude, 3.0);
        let echoed: Scenario = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(echoed, s);
        assert!(serde_json::from_str::<Scenario>(r#"{"frames": 1, "vessels": [], "bogus": 1}"#).is_err());
    }
}
