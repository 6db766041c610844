//! Scenario descriptions and analytic ground-truth motion.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SimError;

/// How a target moves around the (static) sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pattern", rename_all = "snake_case", deny_unknown_fields)]
pub enum Motion {
    Static,
    /// Horizontal circle about the sensor, azimuth decreasing.
    CircleCw,
    /// Horizontal circle about the sensor, azimuth increasing.
    CircleCcw,
    /// Sinusoidal horizontal range between `r_min` and `r_max` at a fixed azimuth.
    RadialOscillate {
        r_min: f64,
        r_max: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    /// Position at `t = 0`, meters, sensor frame.
    pub position: [f64; 3],
    pub motion: Motion,
    /// Walking speed along the path (peak speed for radial motion), m/s.
    #[serde(default)]
    pub speed: f64,
    /// Physical height, meters.
    pub height: f64,
    /// Width-to-height ratio of the body box.
    #[serde(default = "default_aspect")]
    pub aspect: f64,
}

fn default_aspect() -> f64 {
    0.4
}

/// Clamped normal score distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreDistribution {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for ScoreDistribution {
    fn default() -> Self {
        Self { mean: 0.85, std: 0.08, min: 0.0, max: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimNoise {
    /// Detector pixel noise (bearing and box height), px.
    pub sigma_px: f64,
    /// LiDAR range noise, m.
    pub sigma_depth: f64,
    pub sigma_aspect: f64,
    /// Per-target, per-frame probability of a missed detection.
    pub dropout_prob: f64,
    /// Expected number of false positives per frame.
    pub false_positive_rate: f64,
    pub score_distribution: ScoreDistribution,
    /// False-positive scores are uniform on this range.
    pub false_positive_score: [f64; 2],
}

impl Default for SimNoise {
    fn default() -> Self {
        Self {
            sigma_px: 2.0,
            sigma_depth: 0.05,
            sigma_aspect: 0.02,
            dropout_prob: 0.0,
            false_positive_rate: 0.0,
            score_distribution: ScoreDistribution::default(),
            false_positive_score: [0.1, 0.5],
        }
    }
}

impl SimNoise {
    /// All noise sources switched off.
    pub fn noiseless() -> Self {
        Self {
            sigma_px: 0.0,
            sigma_depth: 0.0,
            sigma_aspect: 0.0,
            dropout_prob: 0.0,
            false_positive_rate: 0.0,
            score_distribution: ScoreDistribution { mean: 0.9, std: 0.0, min: 0.0, max: 1.0 },
            false_positive_score: [0.1, 0.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Seconds.
    pub duration: f64,
    /// Camera frame rate, Hz.
    #[serde(default = "default_camera_rate")]
    pub camera_rate: f64,
    /// Time for one full LiDAR revolution, seconds.
    #[serde(default = "default_sweep_period")]
    pub sweep_period: f64,
    #[serde(default = "default_img_h")]
    pub img_h: f64,
    pub targets: Vec<TargetSpec>,
    #[serde(default)]
    pub noise: SimNoise,
    /// Radians.
    #[serde(default = "default_occlusion_angle")]
    pub occlusion_angle: f64,
    /// Free-form notes (assumptions behind the chosen numbers).
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub notes: String,
}

fn default_camera_rate() -> f64 {
    30.0
}
fn default_sweep_period() -> f64 {
    1.0
}
fn default_img_h() -> f64 {
    1000.0
}
fn default_occlusion_angle() -> f64 {
    0.08
}

impl Scenario {
    /// Parses and validates a scenario from JSON text.
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn sha256(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::Config(msg));
        for (name, v) in [
            ("duration", self.duration),
            ("camera_rate", self.camera_rate),
            ("sweep_period", self.sweep_period),
            ("img_h", self.img_h),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a positive number, got {v}"));
            }
        }
        if !(self.occlusion_angle >= 0.0) {
            return bad(format!("occlusion_angle must be >= 0, got {}", self.occlusion_angle));
        }
        let n = &self.noise;
        for (name, v) in [
            ("sigma_px", n.sigma_px),
            ("sigma_depth", n.sigma_depth),
            ("sigma_aspect", n.sigma_aspect),
            ("false_positive_rate", n.false_positive_rate),
            ("score_distribution.std", n.score_distribution.std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("noise.{name} must be >= 0, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&n.dropout_prob) {
            return bad(format!("noise.dropout_prob must be in [0, 1], got {}", n.dropout_prob));
        }
        let [lo, hi] = n.false_positive_score;
        if !(lo <= hi && lo >= 0.0 && hi <= 1.0) {
            return bad(format!("noise.false_positive_score must be an ordered range in [0, 1], got [{lo}, {hi}]"));
        }
        for (i, t) in self.targets.iter().enumerate() {
            let [x, y, z] = t.position;
            if !(x.is_finite() && y.is_finite() && z.is_finite()) {
                return bad(format!("targets[{i}].position must be finite"));
            }
            if !(t.height > 0.0) {
                return bad(format!("targets[{i}].height must be > 0, got {}", t.height));
            }
            if !(t.aspect > 0.0) {
                return bad(format!("targets[{i}].aspect must be > 0, got {}", t.aspect));
            }
            if !(t.speed >= 0.0) {
                return bad(format!("targets[{i}].speed must be >= 0, got {}", t.speed));
            }
            if !(x.hypot(y) > 1e-6) {
                return bad(format!("targets[{i}].position must be off the sensor's vertical axis"));
            }
            if let Motion::RadialOscillate { r_min, r_max } = t.motion {
                if !(r_min > 0.0 && r_max > r_min) {
                    return bad(format!("targets[{i}].motion needs 0 < r_min < r_max, got [{r_min}, {r_max}]"));
                }
            }
        }
        Ok(())
    }

    /// Number of camera frames.
    pub fn frame_count(&self) -> usize {
        (self.duration * self.camera_rate).round() as usize
    }

    /// Timestamp of camera frame `k`.
    pub fn frame_time(&self, k: usize) -> f64 {
        k as f64 / self.camera_rate
    }
}

impl TargetSpec {
    fn polar0(&self) -> (f64, f64, f64) {
        let [x, y, z] = self.position;
        (x.hypot(y), y.atan2(x), z)
    }

    /// Radial oscillation parameters `(mid, amplitude, omega, phase)`.
    fn radial(&self, r_min: f64, r_max: f64) -> (f64, f64, f64, f64) {
        let (r0, _, _) = self.polar0();
        let mid = 0.5 * (r_min + r_max);
        let amp = 0.5 * (r_max - r_min);
        let omega = self.speed / amp;
        let phase = ((r0 - mid) / amp).clamp(-1.0, 1.0).asin();
        (mid, amp, omega, phase)
    }

    /// Continuous (unwrapped) azimuth at time `t`.
    pub fn unwrapped_azimuth(&self, t: f64) -> f64 {
        let (r0, a0, _) = self.polar0();
        match self.motion {
            Motion::Static | Motion::RadialOscillate { .. } => a0,
            Motion::CircleCw => a0 - self.speed / r0 * t,
            Motion::CircleCcw => a0 + self.speed / r0 * t,
        }
    }

    /// Position at time `t`, meters.
    pub fn position_at(&self, t: f64) -> Vector3<f64> {
        let (r0, _, z) = self.polar0();
        let a = self.unwrapped_azimuth(t);
        let r = match self.motion {
            Motion::RadialOscillate { r_min, r_max } => {
                let (mid, amp, omega, phase) = self.radial(r_min, r_max);
                mid + amp * (omega * t + phase).sin()
            }
            _ => r0,
        };
        if let Motion::Static = self.motion {
            return Vector3::from(self.position);
        }
        Vector3::new(r * a.cos(), r * a.sin(), z)
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_pi(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}
