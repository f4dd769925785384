//! Cubic Hermite trajectory splines: knot selection, tangent estimation,
//! angle-based segmentation, regularization and horizon prediction.
//!
//! A Hermite piece between `p_l` and `p_r` with tangents `t_l`, `t_r` is
//!
//! ```text
//! f(t) = [t³ t² t 1] · | 2 -2  1  1 | · [p_l p_r t_l t_r]ᵀ
//!                      |-3  3 -2 -1 |
//!                      | 0  0  1  0 |
//!                      | 1  0  0  0 |
//! ```
//!
//! so that `f(0) = p_l`, `f(1) = p_r`, `f'(0) = t_l` and `f'(1) = t_r`.
//!
//! Trajectories are indexed by frame. Tangents returned by
//! [`estimate_tangents`] are velocities in pixels per frame; a piece spanning
//! `L` frames uses `L` times that velocity as its parametric tangent, which
//! keeps affine motion exact across unevenly spaced knots.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{AnchorPoint, Vec2};

/// Hermite basis: rows are the coefficients of `t³, t², t, 1` over
/// `(p_l, p_r, t_l, t_r)`.
pub const HERMITE_BASIS: [[f64; 4]; 4] = [
    [2.0, -2.0, 1.0, 1.0],
    [-3.0, 3.0, -2.0, -1.0],
    [0.0, 0.0, 1.0, 0.0],
    [1.0, 0.0, 0.0, 0.0],
];

/// Cubic extrapolation stops at this parameter value; beyond it the curve
/// continues linearly with its tangent at the cap.
pub const MAX_EXTRAPOLATION_PARAM: f64 = 3.0;

/// Histories shorter than this are extrapolated with constant velocity.
pub const MIN_SPLINE_POINTS: usize = 4;

/// Observations required per polynomial degree when smoothing the last
/// segment before prediction (degree 1 to 3).
pub const POINTS_PER_DEGREE: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("invalid knot request: {n_knots} knots over {n_points} points")]
    InvalidKnots { n_points: usize, n_knots: usize },
    #[error("points must have strictly increasing frames")]
    NotTimeOrdered,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplineParams {
    pub knots: usize,
    pub epsilon_deg: f64,
}

impl Default for SplineParams {
    fn default() -> Self {
        Self {
            knots: 5,
            epsilon_deg: 30.0,
        }
    }
}

/// A single cubic Hermite piece in parametric form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HermitePiece {
    pub a: Vec2,
    pub b: Vec2,
    pub c: Vec2,
    pub d: Vec2,
}

impl HermitePiece {
    pub fn new(p_l: Vec2, p_r: Vec2, t_l: Vec2, t_r: Vec2) -> Self {
        let g = [p_l, p_r, t_l, t_r];
        let row = |r: &[f64; 4]| {
            g.iter()
                .zip(r)
                .fold(Vec2::ZERO, |acc, (v, &w)| acc + *v * w)
        };
        Self {
            a: row(&HERMITE_BASIS[0]),
            b: row(&HERMITE_BASIS[1]),
            c: row(&HERMITE_BASIS[2]),
            d: row(&HERMITE_BASIS[3]),
        }
    }

    pub fn eval(&self, t: f64) -> Vec2 {
        ((self.a * t + self.b) * t + self.c) * t + self.d
    }

    pub fn derivative(&self, t: f64) -> Vec2 {
        (self.a * (3.0 * t) + self.b * 2.0) * t + self.c
    }
}

/// Evaluates the Hermite cubic through `p_l`, `p_r` with tangents `t_l`,
/// `t_r` at `t`. Values outside `[0, 1]` extrapolate.
pub fn hermite_eval(p_l: Vec2, p_r: Vec2, t_l: Vec2, t_r: Vec2, t: f64) -> Vec2 {
    HermitePiece::new(p_l, p_r, t_l, t_r).eval(t)
}

fn check_time_ordered(points: &[AnchorPoint]) -> Result<(), SplineError> {
    if points.windows(2).all(|w| w[0].frame < w[1].frame) {
        Ok(())
    } else {
        Err(SplineError::NotTimeOrdered)
    }
}

fn velocity_between(a: &AnchorPoint, b: &AnchorPoint) -> Vec2 {
    (b.position - a.position) * (1.0 / (b.frame - a.frame) as f64)
}

/// Direction vectors from adjacent points, in pixels per frame.
///
/// Interior points use the central difference `(p[m+1] - p[m-1]) / Δframe`;
/// the endpoints use one-sided differences. For consecutive frames this is
/// `(p[m+1] - p[m-1]) / 2`.
pub fn estimate_tangents(points: &[AnchorPoint]) -> Result<Vec<Vec2>, SplineError> {
    let n = points.len();
    if n < 2 {
        return Err(SplineError::TooFewPoints { needed: 2, got: n });
    }
    check_time_ordered(points)?;
    Ok((0..n)
        .map(|m| {
            let lo = m.saturating_sub(1);
            let hi = (m + 1).min(n - 1);
            velocity_between(&points[lo], &points[hi])
        })
        .collect())
}

/// Chebyshev–Lobatto sample indices over `0..n_points`.
///
/// Nodes `cos(iπ/(n_knots-1))` are mapped affinely onto `[0, n_points-1]`
/// and rounded. Indices that collide after rounding are shifted to the
/// nearest free slot, so the result always has `n_knots` distinct entries
/// including both endpoints.
pub fn chebyshev_knots(n_points: usize, n_knots: usize) -> Result<Vec<usize>, SplineError> {
    if n_knots < 2 || n_knots > n_points {
        return Err(SplineError::InvalidKnots { n_points, n_knots });
    }
    let last = (n_points - 1) as f64;
    let intervals = (n_knots - 1) as f64;
    let mut idx: Vec<usize> = (0..n_knots)
        .map(|i| {
            let node = (i as f64 * std::f64::consts::PI / intervals).cos();
            (0.5 * (1.0 - node) * last).round() as usize
        })
        .collect();
    idx[0] = 0;
    idx[n_knots - 1] = n_points - 1;
    // rounding can collide near the ends; push duplicates apart so the knot
    // count is kept (n_knots <= n_points leaves room for this)
    for i in 1..n_knots - 1 {
        idx[i] = idx[i].max(idx[i - 1] + 1);
    }
    for i in (0..n_knots - 1).rev() {
        idx[i] = idx[i].min(idx[i + 1] - 1);
    }
    Ok(idx)
}

/// A run of knots whose direction changes stay within the split angle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectorySegment {
    pub knots: Vec<AnchorPoint>,
    /// Per-frame velocity at each knot, estimated within this segment only.
    pub tangents: Vec<Vec2>,
    /// First and last frame covered.
    pub span: (u64, u64),
}

impl TrajectorySegment {
    fn from_knots(knots: Vec<AnchorPoint>) -> Result<Self, SplineError> {
        let tangents = estimate_tangents(&knots)?;
        let span = (knots[0].frame, knots[knots.len() - 1].frame);
        Ok(Self {
            knots,
            tangents,
            span,
        })
    }

    /// Evaluates the piecewise spline at a (possibly fractional) frame.
    /// Frames past the last knot extrapolate the final piece.
    pub fn eval_frame(&self, frame: f64) -> Vec2 {
        let n = self.knots.len();
        let piece = self
            .knots
            .windows(2)
            .position(|w| frame <= w[1].frame as f64)
            .unwrap_or(n - 2);
        let (l, r) = (&self.knots[piece], &self.knots[piece + 1]);
        let span = (r.frame - l.frame) as f64;
        let hermite = HermitePiece::new(
            l.position,
            r.position,
            self.tangents[piece] * span,
            self.tangents[piece + 1] * span,
        );
        hermite.eval((frame - l.frame as f64) / span)
    }
}

/// Splits a point sequence wherever the path turns by more than
/// `epsilon_deg` at a point.
///
/// The turning angle at interior point `m` is the angle between the incoming
/// direction `p[m] - p[m-1]` and the outgoing direction `p[m+1] - p[m]`. The
/// scan runs left to right; neighboring segments share their boundary point.
pub fn segment_trajectory(
    points: &[AnchorPoint],
    epsilon_deg: f64,
) -> Result<Vec<TrajectorySegment>, SplineError> {
    let n = points.len();
    if n < 2 {
        return Err(SplineError::TooFewPoints { needed: 2, got: n });
    }
    check_time_ordered(points)?;
    let mut segments = Vec::new();
    let mut start = 0;
    for m in 1..n - 1 {
        let incoming = points[m].position - points[m - 1].position;
        let outgoing = points[m + 1].position - points[m].position;
        if incoming.angle_deg(outgoing) > epsilon_deg {
            segments.push(TrajectorySegment::from_knots(points[start..=m].to_vec())?);
            start = m;
        }
    }
    segments.push(TrajectorySegment::from_knots(points[start..].to_vec())?);
    Ok(segments)
}

fn knot_segments(
    points: &[AnchorPoint],
    params: &SplineParams,
) -> Result<Vec<TrajectorySegment>, SplineError> {
    let n_knots = params.knots.clamp(2, points.len());
    let knots: Vec<AnchorPoint> = chebyshev_knots(points.len(), n_knots)?
        .into_iter()
        .map(|i| points[i])
        .collect();
    segment_trajectory(&knots, params.epsilon_deg)
}

/// Smooths a trajectory by resampling it from its knot spline.
///
/// Knots are Chebyshev-selected over the whole trajectory and split into
/// segments by turning angle; every input frame is then replaced by the
/// value of its segment's Hermite spline. Knot frames keep their positions.
pub fn regularize(
    points: &[AnchorPoint],
    params: &SplineParams,
) -> Result<Vec<AnchorPoint>, SplineError> {
    if points.len() < 2 {
        return Err(SplineError::TooFewPoints {
            needed: 2,
            got: points.len(),
        });
    }
    check_time_ordered(points)?;
    let segments = knot_segments(points, params)?;
    let mut seg = 0;
    Ok(points
        .iter()
        .map(|p| {
            while seg + 1 < segments.len() && p.frame > segments[seg].span.1 {
                seg += 1;
            }
            let segment = &segments[seg];
            let position = match segment.knots.iter().find(|k| k.frame == p.frame) {
                Some(k) => k.position,
                None => segment.eval_frame(p.frame as f64),
            };
            AnchorPoint {
                position,
                frame: p.frame,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictedTrajectory {
    pub origin_frame: u64,
    pub points: Vec<AnchorPoint>,
}

/// Predicts `horizon` future anchor points after the last history entry.
///
/// The history is split into segments by turning angle and the last
/// segment is resampled on its own, repeating until it no longer splits.
/// The observations of that segment are regularized by a low-degree
/// least-squares fit, which supplies the knot positions and tangents; a
/// cubic extrapolated past its interval amplifies raw measurement noise
/// many times over. The final knot interval of length `L` frames is
/// extrapolated with
/// `t = 1 + j / L` for future frame offset `j`; past
/// [`MAX_EXTRAPOLATION_PARAM`] the path continues along the tangent.
///
/// Histories shorter than [`MIN_SPLINE_POINTS`] extrapolate with
/// `fallback_velocity` (typically the Kalman estimate) or, absent that, with
/// the velocity between the last two points.
pub fn predict(
    history: &[AnchorPoint],
    horizon: usize,
    params: &SplineParams,
    fallback_velocity: Option<Vec2>,
) -> Result<PredictedTrajectory, SplineError> {
    let n = history.len();
    if n < 2 {
        return Err(SplineError::TooFewPoints { needed: 2, got: n });
    }
    check_time_ordered(history)?;
    let last = history[n - 1];
    let future = |j: usize| last.frame + j as u64;

    if n < MIN_SPLINE_POINTS {
        let v = fallback_velocity.unwrap_or_else(|| velocity_between(&history[n - 2], &last));
        return Ok(PredictedTrajectory {
            origin_frame: last.frame,
            points: (1..=horizon)
                .map(|j| AnchorPoint {
                    position: last.position + v * j as f64,
                    frame: future(j),
                })
                .collect(),
        });
    }

    let segment = last_segment(history, params)?;
    let k = segment.knots.len();
    let (l, r) = (segment.knots[k - 2].frame, segment.knots[k - 1].frame);
    let window = &history[history.partition_point(|p| p.frame < segment.span.0)..];
    let fit = SmoothFit::new(window);
    let span = (r - l) as f64;
    let piece = HermitePiece::new(
        fit.position(l),
        fit.position(r),
        fit.velocity(l) * span,
        fit.velocity(r) * span,
    );
    let cap_pos = piece.eval(MAX_EXTRAPOLATION_PARAM);
    let cap_vel = piece.derivative(MAX_EXTRAPOLATION_PARAM) * (1.0 / span);

    Ok(PredictedTrajectory {
        origin_frame: last.frame,
        points: (1..=horizon)
            .map(|j| {
                let t = 1.0 + j as f64 / span;
                let position = if t <= MAX_EXTRAPOLATION_PARAM {
                    piece.eval(t)
                } else {
                    cap_pos + cap_vel * ((t - MAX_EXTRAPOLATION_PARAM) * span)
                };
                AnchorPoint {
                    position,
                    frame: future(j),
                }
            })
            .collect(),
    })
}

/// Least-squares polynomial through a window of observations, in frames.
/// The degree grows with the window, one per [`POINTS_PER_DEGREE`] points,
/// from 1 up to 3.
struct SmoothFit {
    origin: f64,
    scale: f64,
    coeffs: DMatrix<f64>,
}

impl SmoothFit {
    fn new(window: &[AnchorPoint]) -> Self {
        let n = window.len();
        let degree = (n / POINTS_PER_DEGREE).clamp(1, 3).min(n - 1);
        let origin = window[n - 1].frame as f64;
        // scaled abscissae lie in [-1, 0], which keeps the system well conditioned
        let scale = (origin - window[0].frame as f64).max(1.0);
        let x = |p: &AnchorPoint| (p.frame as f64 - origin) / scale;
        let a = DMatrix::from_fn(n, degree + 1, |i, j| x(&window[i]).powi(j as i32));
        let b = DMatrix::from_fn(n, 2, |i, j| if j == 0 { window[i].position.x } else { window[i].position.y });
        let coeffs = a
            .svd(true, true)
            .solve(&b, 1e-12)
            .expect("both singular vector sets were computed");
        Self { origin, scale, coeffs }
    }

    fn position(&self, frame: u64) -> Vec2 {
        let x = (frame as f64 - self.origin) / self.scale;
        let mut p = Vec2::ZERO;
        for j in (0..self.coeffs.nrows()).rev() {
            p = p * x + Vec2::new(self.coeffs[(j, 0)], self.coeffs[(j, 1)]);
        }
        p
    }

    /// Pixels per frame.
    fn velocity(&self, frame: u64) -> Vec2 {
        let x = (frame as f64 - self.origin) / self.scale;
        let mut v = Vec2::ZERO;
        for j in (1..self.coeffs.nrows()).rev() {
            v = v * x + Vec2::new(self.coeffs[(j, 0)], self.coeffs[(j, 1)]) * j as f64;
        }
        v * (1.0 / self.scale)
    }
}

fn last_segment(
    history: &[AnchorPoint],
    params: &SplineParams,
) -> Result<TrajectorySegment, SplineError> {
    let mut window = history;
    loop {
        let mut segments = knot_segments(window, params)?;
        let tail = segments.pop().expect("segmentation yields at least one segment");
        if segments.is_empty() {
            return Ok(tail);
        }
        let start = window
            .iter()
            .position(|p| p.frame == tail.span.0)
            .expect("knot frames come from the window");
        let sub = &window[start..];
        if sub.len() < MIN_SPLINE_POINTS || sub.len() == window.len() {
            return Ok(tail);
        }
        window = sub;
    }
}
