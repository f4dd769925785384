//! Extended Kalman filter over anchor-point measurements.
//!
//! Two motion models are provided:
//!
//! * [`MotionKind::Cv`]: state `(px, py, vx, vy)`, linear constant velocity.
//! * [`MotionKind::Ctrv`]: state `(px, py, speed, heading, yaw_rate)`,
//!   constant turn rate and velocity along a circular arc.
//!
//! Both observe position only, `z = (px, py)`. Process noise is a discretized
//! white-noise acceleration model scaled by `q_scale`; measurement noise is
//! `r_scale * I`.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;

/// Below this yaw rate CTRV uses the straight-line limit.
const YAW_EPS: f64 = 1e-6;

/// Initial variance for unobserved velocity terms.
pub const INITIAL_VELOCITY_VARIANCE: f64 = 1e3;

/// Yaw acceleration noise relative to `q_scale` for CTRV.
const CTRV_YAW_NOISE_RATIO: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KalmanError {
    #[error("non-finite value after {0}")]
    NonFinite(&'static str),
    #[error("innovation covariance S = H P H^T + R is singular")]
    SingularInnovation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionKind {
    #[default]
    Cv,
    Ctrv,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionModel {
    pub kind: MotionKind,
    /// Time step in frames.
    pub dt: f64,
    pub q_scale: f64,
    pub r_scale: f64,
}

impl MotionModel {
    pub fn new(kind: MotionKind, dt: f64, q_scale: f64, r_scale: f64) -> Self {
        Self {
            kind,
            dt,
            q_scale,
            r_scale,
        }
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            MotionKind::Cv => 4,
            MotionKind::Ctrv => 5,
        }
    }

    /// The transition `f(x)`.
    pub fn transition(&self, x: &DVector<f64>) -> DVector<f64> {
        let dt = self.dt;
        match self.kind {
            MotionKind::Cv => DVector::from_vec(vec![x[0] + x[2] * dt, x[1] + x[3] * dt, x[2], x[3]]),
            MotionKind::Ctrv => {
                let (px, py, v, yaw, rate) = (x[0], x[1], x[2], x[3], x[4]);
                let (nx, ny) = if rate.abs() < YAW_EPS {
                    (px + v * yaw.cos() * dt, py + v * yaw.sin() * dt)
                } else {
                    let yaw2 = yaw + rate * dt;
                    (
                        px + v / rate * (yaw2.sin() - yaw.sin()),
                        py + v / rate * (yaw.cos() - yaw2.cos()),
                    )
                };
                DVector::from_vec(vec![nx, ny, v, yaw + rate * dt, rate])
            }
        }
    }

    /// Jacobian of [`transition`](Self::transition) evaluated at `x`.
    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let dt = self.dt;
        match self.kind {
            MotionKind::Cv => {
                let mut a = DMatrix::identity(4, 4);
                a[(0, 2)] = dt;
                a[(1, 3)] = dt;
                a
            }
            MotionKind::Ctrv => {
                let (v, yaw, rate) = (x[2], x[3], x[4]);
                let mut a = DMatrix::identity(5, 5);
                let (s, c) = yaw.sin_cos();
                if rate.abs() < YAW_EPS {
                    a[(0, 2)] = c * dt;
                    a[(0, 3)] = -v * s * dt;
                    a[(0, 4)] = -0.5 * v * s * dt * dt;
                    a[(1, 2)] = s * dt;
                    a[(1, 3)] = v * c * dt;
                    a[(1, 4)] = 0.5 * v * c * dt * dt;
                } else {
                    let yaw2 = yaw + rate * dt;
                    let (s2, c2) = yaw2.sin_cos();
                    a[(0, 2)] = (s2 - s) / rate;
                    a[(0, 3)] = v / rate * (c2 - c);
                    a[(0, 4)] = v * dt / rate * c2 - v / (rate * rate) * (s2 - s);
                    a[(1, 2)] = (c - c2) / rate;
                    a[(1, 3)] = v / rate * (s2 - s);
                    a[(1, 4)] = v * dt / rate * s2 - v / (rate * rate) * (c - c2);
                }
                a[(3, 4)] = dt;
                a
            }
        }
    }

    pub fn process_noise(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let dt = self.dt;
        let q = self.q_scale;
        match self.kind {
            MotionKind::Cv => {
                let (d4, d3, d2) = (dt.powi(4) / 4.0, dt.powi(3) / 2.0, dt * dt);
                let mut m = DMatrix::zeros(4, 4);
                for axis in 0..2 {
                    let (p, v) = (axis, axis + 2);
                    m[(p, p)] = d4 * q;
                    m[(p, v)] = d3 * q;
                    m[(v, p)] = d3 * q;
                    m[(v, v)] = d2 * q;
                }
                m
            }
            MotionKind::Ctrv => {
                // G diag(q_accel, q_yaw) G^T with noise entering speed and yaw rate
                let (s, c) = x[3].sin_cos();
                let g = DMatrix::from_row_slice(
                    5,
                    2,
                    &[
                        0.5 * dt * dt * c, 0.0,
                        0.5 * dt * dt * s, 0.0,
                        dt, 0.0,
                        0.0, 0.5 * dt * dt,
                        0.0, dt,
                    ],
                );
                let noise = DMatrix::from_diagonal(&DVector::from_vec(vec![q, q * CTRV_YAW_NOISE_RATIO]));
                &g * noise * g.transpose()
            }
        }
    }

    /// Position selector `H`.
    pub fn observation_matrix(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(2, self.dim());
        h[(0, 0)] = 1.0;
        h[(1, 1)] = 1.0;
        h
    }

    pub fn observe(&self, x: &DVector<f64>) -> Vector2<f64> {
        Vector2::new(x[0], x[1])
    }

    pub fn measurement_noise(&self) -> Matrix2<f64> {
        Matrix2::identity() * self.r_scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
    pub model: MotionModel,
}

impl KalmanState {
    /// Starts a filter at `position` with zero velocity terms. Position
    /// variance equals the measurement variance; velocity variance is large so
    /// the first measurements dominate.
    pub fn initialize(position: Vec2, model: MotionModel) -> Self {
        let n = model.dim();
        let mut x = DVector::zeros(n);
        x[0] = position.x;
        x[1] = position.y;
        let mut diag = vec![INITIAL_VELOCITY_VARIANCE; n];
        diag[0] = model.r_scale;
        diag[1] = model.r_scale;
        if model.kind == MotionKind::Ctrv {
            diag[3] = std::f64::consts::PI * std::f64::consts::PI;
            diag[4] = 0.1;
        }
        Self {
            x,
            p: DMatrix::from_diagonal(&DVector::from_vec(diag)),
            model,
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x[0], self.x[1])
    }

    /// Per-frame image-plane velocity implied by the state.
    pub fn velocity(&self) -> Vec2 {
        match self.model.kind {
            MotionKind::Cv => Vec2::new(self.x[2], self.x[3]),
            MotionKind::Ctrv => {
                let (s, c) = self.x[3].sin_cos();
                Vec2::new(self.x[2] * c, self.x[2] * s)
            }
        }
    }
}

pub fn ekf_predict(state: &KalmanState) -> Result<KalmanState, KalmanError> {
    let model = state.model;
    let a = model.jacobian(&state.x);
    let x = model.transition(&state.x);
    let mut p = &a * &state.p * a.transpose() + model.process_noise(&state.x);
    symmetrize(&mut p);
    if !(x.iter().all(|v| v.is_finite()) && p.iter().all(|v| v.is_finite())) {
        return Err(KalmanError::NonFinite("predict"));
    }
    Ok(KalmanState { x, p, model })
}

pub fn ekf_update(state: &KalmanState, z: Vec2) -> Result<KalmanState, KalmanError> {
    let model = state.model;
    let h = model.observation_matrix();
    let ht = h.transpose();
    let pht = &state.p * &ht;
    let s = &h * &pht + DMatrix::from_iterator(2, 2, model.measurement_noise().iter().copied());
    let s_inv = s
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or(KalmanError::SingularInnovation)?;
    let gain = pht * s_inv;
    let innovation = Vector2::new(z.x, z.y) - model.observe(&state.x);
    let innovation = DVector::from_column_slice(innovation.as_slice());
    let x = &state.x + &gain * innovation;
    let mut p = &state.p - &gain * &h * &state.p;
    symmetrize(&mut p);
    if !(x.iter().all(|v| v.is_finite()) && p.iter().all(|v| v.is_finite())) {
        return Err(KalmanError::NonFinite("update"));
    }
    Ok(KalmanState { x, p, model })
}

/// Advances the filter through a frame without a measurement.
pub fn coast(state: &KalmanState) -> Result<KalmanState, KalmanError> {
    ekf_predict(state)
}

fn symmetrize(p: &mut DMatrix<f64>) {
    let n = p.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = m;
            p[(j, i)] = m;
        }
    }
}

/// Runs predict/update over a time-ordered sequence of `(frame, position)`
/// measurements, coasting through frame gaps.
pub fn filter_history(
    measurements: &[(u64, Vec2)],
    model: MotionModel,
) -> Result<Option<KalmanState>, KalmanError> {
    let Some(&(first_frame, first)) = measurements.first() else {
        return Ok(None);
    };
    let mut state = KalmanState::initialize(first, model);
    let mut frame = first_frame;
    for &(k, z) in &measurements[1..] {
        while frame + 1 < k {
            state = coast(&state)?;
            frame += 1;
        }
        state = ekf_update(&ekf_predict(&state)?, z)?;
        frame = k;
    }
    Ok(Some(state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cv(q: f64, r: f64) -> MotionModel {
        MotionModel::new(MotionKind::Cv, 1.0, q, r)
    }

    fn naive_matmul(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    out[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        out
    }

    #[test]
    fn cv_predict_moves_by_velocity() {
        let s = KalmanState {
            x: DVector::from_vec(vec![0.0, 0.0, 1.0, 0.0]),
            p: DMatrix::identity(4, 4),
            model: cv(0.0, 1.0),
        };
        let next = ekf_predict(&s).unwrap();
        assert_eq!(next.x.as_slice(), &[1.0, 0.0, 1.0, 0.0]);

        // dense oracle: A I A^T with A = [[1,0,1,0],[0,1,0,1],[0,0,1,0],[0,0,0,1]]
        let a = [[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
        let mut at = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                at[i][j] = a[j][i];
            }
        }
        let expected = naive_matmul(&a, &at);
        assert_eq!(
            expected,
            [[2.0, 0.0, 1.0, 0.0], [0.0, 2.0, 0.0, 1.0], [1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0]]
        );
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(next.p[(i, j)], expected[i][j]);
            }
        }
    }

    #[test]
    fn ctrv_zero_yaw_rate_matches_cv() {
        let (speed, heading) = (3.0f64, 0.7f64);
        let ctrv = MotionModel::new(MotionKind::Ctrv, 1.0, 0.1, 1.0);
        let x = DVector::from_vec(vec![10.0, 20.0, speed, heading, 0.0]);
        let moved = ctrv.transition(&x);
        let cv_x = DVector::from_vec(vec![10.0, 20.0, speed * heading.cos(), speed * heading.sin()]);
        let cv_moved = cv(0.1, 1.0).transition(&cv_x);
        assert!((moved[0] - cv_moved[0]).abs() < 1e-12);
        assert!((moved[1] - cv_moved[1]).abs() < 1e-12);
    }

    #[test]
    fn update_with_exact_measurement_keeps_state() {
        let s = KalmanState {
            x: DVector::from_vec(vec![3.0, -2.0, 0.5, 0.25]),
            p: DMatrix::identity(4, 4) * 7.0,
            model: cv(0.1, 2.0),
        };
        let u = ekf_update(&s, Vec2::new(3.0, -2.0)).unwrap();
        assert_eq!(u.x, s.x);
    }

    #[test]
    fn huge_measurement_noise_suppresses_gain() {
        let s = KalmanState {
            x: DVector::zeros(4),
            p: DMatrix::identity(4, 4),
            model: cv(0.1, 1e12),
        };
        let z = Vec2::new(10.0, -4.0);
        let u = ekf_update(&s, z).unwrap();
        let shift = (u.position() - s.position()).norm();
        assert!(shift < 1e-6 * z.norm());
    }

    #[test]
    fn unit_prior_halves_innovation() {
        // K = P H^T (H P H^T + R)^-1 = I2 (2 I2)^-1 = 0.5 I on the position rows
        let s = KalmanState {
            x: DVector::zeros(4),
            p: DMatrix::identity(4, 4),
            model: cv(0.0, 1.0),
        };
        let u = ekf_update(&s, Vec2::new(2.0, 0.0)).unwrap();
        assert!((u.x[0] - 1.0).abs() < 1e-15);
        assert!(u.x[1].abs() < 1e-15 && u.x[2].abs() < 1e-15 && u.x[3].abs() < 1e-15);
        assert!((u.p[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn singular_innovation_reported() {
        let s = KalmanState {
            x: DVector::zeros(4),
            p: DMatrix::zeros(4, 4),
            model: cv(0.0, 0.0),
        };
        assert_eq!(ekf_update(&s, Vec2::new(1.0, 1.0)), Err(KalmanError::SingularInnovation));
    }

    #[test]
    fn coast_is_predict() {
        let s = KalmanState::initialize(Vec2::new(5.0, 6.0), cv(0.3, 2.0));
        assert_eq!(coast(&s).unwrap(), ekf_predict(&s).unwrap());
    }

    #[test]
    fn ten_coasts_follow_closed_form() {
        let mut s = KalmanState {
            x: DVector::from_vec(vec![1.0, 2.0, 0.5, -1.5]),
            p: DMatrix::identity(4, 4),
            model: cv(0.2, 1.0),
        };
        for _ in 0..10 {
            let before = s.p.trace();
            s = coast(&s).unwrap();
            assert!(s.p.trace() >= before);
        }
        assert!((s.x[0] - 6.0).abs() < 1e-12);
        assert!((s.x[1] + 13.0).abs() < 1e-12);
    }

    #[test]
    fn noise_free_cv_converges() {
        let model = cv(0.01, 1.0);
        let mut s = KalmanState::initialize(Vec2::new(100.0, 50.0), model);
        let v = Vec2::new(2.5, -1.25);
        for k in 1..=50 {
            s = ekf_update(&ekf_predict(&s).unwrap(), Vec2::new(100.0, 50.0) + v * k as f64).unwrap();
        }
        let truth = Vec2::new(100.0, 50.0) + v * 50.0;
        assert!((s.position() - truth).norm() < 1e-6, "error {}", (s.position() - truth).norm());
    }

    #[test]
    fn filter_history_coasts_gaps() {
        let model = cv(0.0, 1.0);
        let hist = [(0, Vec2::new(0.0, 0.0)), (3, Vec2::new(3.0, 0.0))];
        let s = filter_history(&hist, model).unwrap().unwrap();
        assert!(s.x[2] > 0.0);
        assert!(filter_history(&[], model).unwrap().is_none());
    }

    fn ctrv_state() -> impl Strategy<Value = DVector<f64>> {
        (
            -500.0..500.0f64,
            -500.0..500.0f64,
            0.1..20.0f64,
            -3.1..3.1f64,
            prop_oneof![-0.3..-0.001f64, 0.001..0.3f64, Just(0.0)],
        )
            .prop_map(|(a, b, c, d, e)| DVector::from_vec(vec![a, b, c, d, e]))
    }

    proptest! {
        #[test]
        fn ctrv_jacobian_matches_central_differences(x in ctrv_state(), dt in 0.5..2.0f64) {
            let model = MotionModel::new(MotionKind::Ctrv, dt, 0.1, 1.0);
            let a = model.jacobian(&x);
            for j in 0..5 {
                let step = 1e-6 * x[j].abs().max(1.0);
                let mut hi = x.clone();
                let mut lo = x.clone();
                hi[j] += step;
                lo[j] -= step;
                // avoid straddling the straight-line switch
                if j == 4 && x[4].abs() < 1e-3 {
                    continue;
                }
                let diff = (model.transition(&hi) - model.transition(&lo)) / (2.0 * step);
                for i in 0..5 {
                    let scale = a[(i, j)].abs().max(1.0);
                    prop_assert!((diff[i] - a[(i, j)]).abs() / scale < 1e-5,
                        "entry ({}, {}): fd {} vs analytic {}", i, j, diff[i], a[(i, j)]);
                }
            }
        }

        #[test]
        fn covariance_stays_symmetric_psd(
            seq in prop::collection::vec((any::<bool>(), -50.0..50.0f64, -50.0..50.0f64), 1..200),
            ctrv in any::<bool>(),
        ) {
            let kind = if ctrv { MotionKind::Ctrv } else { MotionKind::Cv };
            let mut s = KalmanState::initialize(Vec2::new(0.0, 0.0), MotionModel::new(kind, 1.0, 0.5, 4.0));
            for (measure, zx, zy) in seq {
                s = ekf_predict(&s).unwrap();
                if measure {
                    s = ekf_update(&s, Vec2::new(zx, zy)).unwrap();
                }
                let asym = (&s.p - s.p.transpose()).abs().max();
                prop_assert!(asym <= 1e-9);
                let min_eig = s.p.clone().symmetric_eigen().eigenvalues.min();
                prop_assert!(min_eig >= -1e-9, "min eigenvalue {}", min_eig);
            }
        }
    }
}
