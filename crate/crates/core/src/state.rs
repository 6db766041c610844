//! Track state layout and constant-velocity dynamics.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{make_tangent_basis, TangentBasis, UnitBearing};

pub const STATE_DIM: usize = 10;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateCovariance = SMatrix<f64, STATE_DIM, STATE_DIM>;

// Frozen state layout.
pub const W1: usize = 0;
pub const W2: usize = 1;
pub const W1_DOT: usize = 2;
pub const W2_DOT: usize = 3;
pub const ASPECT: usize = 4;
pub const ASPECT_DOT: usize = 5;
pub const BOX_H: usize = 6;
pub const BOX_H_DOT: usize = 7;
pub const DEPTH: usize = 8;
pub const DEPTH_DOT: usize = 9;

/// (quantity, rate) index pairs, one per constant-velocity block.
pub const CV_PAIRS: [(usize, usize); 5] =
    [(W1, W1_DOT), (W2, W2_DOT), (ASPECT, ASPECT_DOT), (BOX_H, BOX_H_DOT), (DEPTH, DEPTH_DOT)];

/// Smallest depth a corrected state may carry, in meters.
pub const DEPTH_FLOOR: f64 = 0.1;
/// Smallest aspect ratio a corrected state may carry.
pub const ASPECT_FLOOR: f64 = 1e-3;

/// Physical height assumed for a freshly spawned track, in meters.
pub const DEFAULT_HEIGHT_M: f64 = 1.7;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ModelError {
    #[error("time step must be non-negative, got {0}")]
    NegativeDt(f64),
    #[error("process noise needs a strictly positive time step, got {0}")]
    NonPositiveDt(f64),
    #[error("process noise standard deviations must be positive, got {0}")]
    NonPositiveSigma(f64),
}

/// The ten-dimensional filter state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackState(pub StateVector);

impl TrackState {
    pub fn zeros() -> Self {
        Self(StateVector::zeros())
    }

    pub fn w(&self) -> nalgebra::Vector2<f64> {
        nalgebra::Vector2::new(self.0[W1], self.0[W2])
    }

    pub fn w_dot(&self) -> nalgebra::Vector2<f64> {
        nalgebra::Vector2::new(self.0[W1_DOT], self.0[W2_DOT])
    }

    pub fn aspect(&self) -> f64 {
        self.0[ASPECT]
    }

    pub fn box_h(&self) -> f64 {
        self.0[BOX_H]
    }

    pub fn depth(&self) -> f64 {
        self.0[DEPTH]
    }

    pub fn depth_dot(&self) -> f64 {
        self.0[DEPTH_DOT]
    }

    /// Clamp the positive quantities back into their valid ranges.
    pub fn enforce_floors(&mut self) {
        if !(self.0[DEPTH] >= DEPTH_FLOOR) {
            self.0[DEPTH] = DEPTH_FLOOR;
        }
        if !(self.0[ASPECT] >= ASPECT_FLOOR) {
            self.0[ASPECT] = ASPECT_FLOOR;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Lost,
}

/// One tracked object: filter state plus its chart and lifecycle bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackHypothesis {
    pub id: u64,
    pub state: TrackState,
    pub cov: StateCovariance,
    /// Chart anchor.
    pub g_ref: UnitBearing,
    pub basis: TangentBasis,
    /// Estimated physical height of the object, meters.
    pub height_est: f64,
    pub status: TrackStatus,
    /// Consecutive frames with an associated detection.
    pub hits: u32,
    /// Consecutive frames without one.
    pub misses: u32,
    /// Time of the last measurement update, seconds.
    pub last_update: f64,
}

impl TrackHypothesis {
    /// New tentative track anchored at `g_ref` with zero chart offset.
    pub fn new(id: u64, g_ref: UnitBearing, state: TrackState, cov: StateCovariance, t: f64) -> Self {
        Self {
            id,
            state,
            cov,
            basis: make_tangent_basis(&g_ref),
            g_ref,
            height_est: DEFAULT_HEIGHT_M,
            status: TrackStatus::Tentative,
            hits: 1,
            misses: 0,
            last_update: t,
        }
    }
}

/// Per-block acceleration standard deviations of the process noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcessNoise {
    /// Tangent-plane acceleration, rad/s².
    pub sigma_w: f64,
    /// Aspect-ratio acceleration, 1/s².
    pub sigma_aspect: f64,
    /// Box-height acceleration, px/s².
    pub sigma_box_h: f64,
    /// Depth acceleration, m/s².
    pub sigma_depth: f64,
}

impl Default for ProcessNoise {
    fn default() -> Self {
        Self { sigma_w: 0.5, sigma_aspect: 0.1, sigma_box_h: 20.0, sigma_depth: 1.0 }
    }
}

impl ProcessNoise {
    fn per_pair(&self) -> [f64; 5] {
        [self.sigma_w, self.sigma_w, self.sigma_aspect, self.sigma_box_h, self.sigma_depth]
    }
}

/// Block-diagonal constant-velocity transition for a step of `dt` seconds.
pub fn build_transition(dt: f64) -> Result<StateCovariance, ModelError> {
    if !(dt >= 0.0) {
        return Err(ModelError::NegativeDt(dt));
    }
    let mut f = StateCovariance::identity();
    for (pos, vel) in CV_PAIRS {
        f[(pos, vel)] = dt;
    }
    Ok(f)
}

/// Discrete white-noise-acceleration covariance for a step of `dt` seconds.
pub fn build_process_noise(dt: f64, sigmas: &ProcessNoise) -> Result<StateCovariance, ModelError> {
    if !(dt > 0.0) {
        return Err(ModelError::NonPositiveDt(dt));
    }
    let dt2 = dt * dt;
    let (a, b, c) = (dt2 * dt2 / 4.0, dt2 * dt / 2.0, dt2);
    let mut q = StateCovariance::zeros();
    for ((pos, vel), sigma) in CV_PAIRS.into_iter().zip(sigmas.per_pair()) {
        if !(sigma > 0.0) {
            return Err(ModelError::NonPositiveSigma(sigma));
        }
        let var = sigma * sigma;
        q[(pos, pos)] = var * a;
        q[(pos, vel)] = var * b;
        q[(vel, pos)] = var * b;
        q[(vel, vel)] = var * c;
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_step_is_identity() {
        assert_eq!(build_transition(0.0).unwrap(), StateCovariance::identity());
    }

    #[test]
    fn camera_rate_step_couples_each_pair() {
        let f = build_transition(1.0 / 30.0).unwrap();
        assert_eq!(f[(W1, W1_DOT)], 1.0 / 30.0);
        for (pos, vel) in CV_PAIRS {
            assert_eq!(f[(pos, vel)], 1.0 / 30.0);
            assert_eq!(f[(vel, pos)], 0.0);
            assert_eq!(f[(pos, pos)], 1.0);
            assert_eq!(f[(vel, vel)], 1.0);
        }
        // Nothing outside the five 2x2 blocks.
        let off_block = f.iter().filter(|v| **v != 0.0).count();
        assert_eq!(off_block, 15);
    }

    #[test]
    fn negative_step_rejected() {
        assert_eq!(build_transition(-0.1), Err(ModelError::NegativeDt(-0.1)));
    }

    #[test]
    fn unit_dwna_block() {
        let s = ProcessNoise { sigma_w: 1.0, sigma_aspect: 1.0, sigma_box_h: 1.0, sigma_depth: 1.0 };
        let q = build_process_noise(1.0, &s).unwrap();
        assert_eq!(q[(DEPTH, DEPTH)], 0.25);
        assert_eq!(q[(DEPTH, DEPTH_DOT)], 0.5);
        assert_eq!(q[(DEPTH_DOT, DEPTH)], 0.5);
        assert_eq!(q[(DEPTH_DOT, DEPTH_DOT)], 1.0);
    }

    #[test]
    fn zero_sigma_and_zero_dt_rejected() {
        let s = ProcessNoise { sigma_aspect: 0.0, ..Default::default() };
        assert_eq!(build_process_noise(0.1, &s), Err(ModelError::NonPositiveSigma(0.0)));
        assert_eq!(build_process_noise(0.0, &ProcessNoise::default()), Err(ModelError::NonPositiveDt(0.0)));
    }

    #[test]
    fn floors_clamp_depth_and_aspect() {
        let mut s = TrackState::zeros();
        s.0[DEPTH] = -2.0;
        s.0[ASPECT] = f64::NAN;
        s.enforce_floors();
        assert_eq!(s.depth(), DEPTH_FLOOR);
        assert_eq!(s.aspect(), ASPECT_FLOOR);
    }

    proptest! {
        #[test]
        fn prop_transition_semigroup(a in 0.0f64..5.0, b in 0.0f64..5.0) {
            let lhs = build_transition(a).unwrap() * build_transition(b).unwrap();
            let rhs = build_transition(a + b).unwrap();
            prop_assert!((lhs - rhs).norm() <= 1e-12);
        }

        #[test]
        fn prop_transition_unit_determinant(dt in 0.0f64..100.0) {
            prop_assert!((build_transition(dt).unwrap().determinant() - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn prop_process_noise_psd(
            dt in 1e-4f64..5.0,
            sw in 1e-3f64..5.0, sa in 1e-3f64..5.0, sh in 1e-3f64..50.0, sd in 1e-3f64..5.0,
        ) {
            let q = build_process_noise(dt, &ProcessNoise {
                sigma_w: sw, sigma_aspect: sa, sigma_box_h: sh, sigma_depth: sd,
            }).unwrap();
            prop_assert_eq!(q, q.transpose());
            let scale = q.amax().max(1e-300);
            let min_eig = q.symmetric_eigenvalues().min();
            prop_assert!(min_eig >= -1e-12 * scale);
        }
    }
}
