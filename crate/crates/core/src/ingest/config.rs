use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kalman::{MotionKind, MotionModel};
use crate::spline::SplineParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config key `{key}` = {value} out of range: must be {bound}")]
    OutOfRange {
        key: &'static str,
        value: String,
        bound: &'static str,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignmentStrategy {
    Greedy,
    #[default]
    Hungarian,
}

/// Every tunable of a tracking and prediction run.
///
/// | key            | default     | range                        |
/// |----------------|-------------|------------------------------|
/// | `gate_iou`     | 0.3         | (0, 1]                       |
/// | `conf_high`    | 0.5         | [conf_low, 1]                |
/// | `conf_low`     | 0.1         | [0, conf_high]               |
/// | `t_confirm`    | 3           | >= 1                         |
/// | `t_max`        | 30          | >= 1                         |
/// | `kalman_model` | `"cv"`      | `"cv"` or `"ctrv"`           |
/// | `q_scale`      | 0.05        | >= 0, finite                 |
/// | `r_scale`      | 4.0         | > 0, finite                  |
/// | `epsilon_deg`  | 30          | (0, 180]                     |
/// | `horizon`      | 30          | >= 1                         |
/// | `knots`        | 5           | >= 2                         |
/// | `merge_iou`    | 0.7         | (0, 1]                       |
/// | `assignment`   | `"hungarian"` | `"greedy"` or `"hungarian"` |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub gate_iou: f64,
    pub conf_high: f64,
    pub conf_low: f64,
    pub t_confirm: u32,
    pub t_max: u32,
    pub kalman_model: MotionKind,
    pub q_scale: f64,
    pub r_scale: f64,
    pub epsilon_deg: f64,
    pub horizon: u32,
    pub knots: u32,
    pub merge_iou: f64,
    pub assignment: AssignmentStrategy,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            gate_iou: 0.3,
            conf_high: 0.5,
            conf_low: 0.1,
            t_confirm: 3,
            t_max: 30,
            kalman_model: MotionKind::Cv,
            q_scale: 0.05,
            r_scale: 4.0,
            epsilon_deg: 30.0,
            horizon: 30,
            knots: 5,
            merge_iou: 0.7,
            assignment: AssignmentStrategy::Hungarian,
        }
    }
}

fn check(ok: bool, key: &'static str, value: impl ToString, bound: &'static str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::OutOfRange {
            key,
            value: value.to_string(),
            bound,
        })
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        check(self.gate_iou > 0.0 && self.gate_iou <= 1.0, "gate_iou", self.gate_iou, "in (0, 1]")?;
        check(unit(self.conf_low), "conf_low", self.conf_low, "in [0, 1]")?;
        check(unit(self.conf_high), "conf_high", self.conf_high, "in [0, 1]")?;
        check(
            self.conf_low <= self.conf_high,
            "conf_low",
            self.conf_low,
            "<= conf_high",
        )?;
        check(self.t_confirm >= 1, "t_confirm", self.t_confirm, ">= 1")?;
        check(self.t_max >= 1, "t_max", self.t_max, ">= 1")?;
        check(
            self.q_scale.is_finite() && self.q_scale >= 0.0,
            "q_scale",
            self.q_scale,
            "finite and >= 0",
        )?;
        check(
            self.r_scale.is_finite() && self.r_scale > 0.0,
            "r_scale",
            self.r_scale,
            "finite and > 0",
        )?;
        check(
            self.epsilon_deg > 0.0 && self.epsilon_deg <= 180.0,
            "epsilon_deg",
            self.epsilon_deg,
            "in (0, 180]",
        )?;
        check(self.horizon >= 1, "horizon", self.horizon, ">= 1")?;
        check(self.knots >= 2, "knots", self.knots, ">= 2")?;
        check(self.merge_iou > 0.0 && self.merge_iou <= 1.0, "merge_iou", self.merge_iou, "in (0, 1]")?;
        Ok(())
    }

    pub fn motion_model(&self) -> MotionModel {
        MotionModel::new(self.kalman_model, 1.0, self.q_scale, self.r_scale)
    }

    pub fn spline_params(&self) -> SplineParams {
        SplineParams {
            knots: self.knots as usize,
            epsilon_deg: self.epsilon_deg,
        }
    }
}

/// Parses a JSON config; absent keys take defaults, unknown keys are errors.
pub fn load_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = serde_json::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}
