//! Predict / update / re-anchor cycle of the spherical Kalman filter.
//!
//! Updates run on the locally Euclidean chart state. After a correction,
//! [`finalize_on_sphere`] folds the corrected chart offset into the reference
//! bearing, rebuilds the tangent basis and carries the tangent velocities
//! (and their covariance) into the new frame.

use nalgebra::{Const, DMatrix, DVector, Dyn, OMatrix, Vector2};
use thiserror::Error;

use crate::geometry::{exp_map, make_tangent_basis, parallel_transport, GeometryError, TangentCoords};
use crate::measurement::MeasurementPacket;
use crate::state::{
    build_process_noise, build_transition, ModelError, ProcessNoise, StateCovariance, StateVector, TrackHypothesis,
    TrackState, STATE_DIM, W1, W1_DOT, W2, W2_DOT,
};

/// Innovation-covariance eigenvalues are clamped from below to this value.
pub const LAMBDA_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum FilterError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("measurement packet is inconsistent: z has {z} rows, H is {h_rows}x{h_cols}, R is {r_rows}x{r_cols}")]
    DimensionMismatch { z: usize, h_rows: usize, h_cols: usize, r_rows: usize, r_cols: usize },
    #[error("innovation covariance is not invertible even after eigenvalue clamping")]
    SingularInnovation,
}

type Gain = OMatrix<f64, Const<STATE_DIM>, Dyn>;

/// Innovation of a packet against a state, with the clamped inverse of its covariance.
#[derive(Debug, Clone)]
pub struct Innovation {
    pub residual: DVector<f64>,
    pub s: DMatrix<f64>,
    pub s_inv: DMatrix<f64>,
}

impl Innovation {
    /// Squared Mahalanobis length of the residual.
    pub fn mahalanobis_sq(&self) -> f64 {
        let v = &self.s_inv * &self.residual;
        self.residual.dot(&v).max(0.0)
    }
}

fn check_dims(pkt: &MeasurementPacket) -> Result<(), FilterError> {
    let m = pkt.z.len();
    if m == 0 || pkt.h.nrows() != m || pkt.r.nrows() != m || pkt.r.ncols() != m {
        return Err(FilterError::DimensionMismatch {
            z: m,
            h_rows: pkt.h.nrows(),
            h_cols: pkt.h.ncols(),
            r_rows: pkt.r.nrows(),
            r_cols: pkt.r.ncols(),
        });
    }
    Ok(())
}

/// Inverse of a symmetric matrix with its spectrum clamped below at [`LAMBDA_FLOOR`].
///
/// A Cholesky inverse is used whenever it exists and the row-sum bound on its
/// spectrum shows the clamp would not bind; the eigendecomposition is only
/// needed near singularity, where it is also least accurate on badly scaled
/// input.
pub fn clamped_inverse(s: &DMatrix<f64>) -> Result<DMatrix<f64>, FilterError> {
    if let Some(chol) = s.clone().cholesky() {
        let inv = chol.inverse();
        // lambda_max(S^-1) <= max row sum, so lambda_min(S) >= 1 / that.
        let bound = inv.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        if bound.is_finite() && bound * LAMBDA_FLOOR <= 1.0 {
            return Ok(inv);
        }
    }
    let eig = s.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|l| !l.is_finite()) {
        return Err(FilterError::SingularInnovation);
    }
    let inv_diag = eig.eigenvalues.map(|l| 1.0 / l.max(LAMBDA_FLOOR));
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&inv_diag) * v.transpose())
}

/// Residual `z - Hx` and clamped innovation covariance `S = H P H^T + R`.
pub fn innovation(x: &StateVector, p: &StateCovariance, pkt: &MeasurementPacket) -> Result<Innovation, FilterError> {
    check_dims(pkt)?;
    let residual = &pkt.z - &pkt.h * x;
    let mut s = &pkt.h * p * pkt.h.transpose() + &pkt.r;
    s = (&s + s.transpose()) * 0.5;
    let s_inv = clamped_inverse(&s)?;
    Ok(Innovation { residual, s, s_inv })
}

/// One Kalman correction of `(x, P)` with a Joseph-form covariance update.
pub fn kalman_correct(
    x: &StateVector,
    p: &StateCovariance,
    pkt: &MeasurementPacket,
) -> Result<(StateVector, StateCovariance), FilterError> {
    let inn = innovation(x, p, pkt)?;
    let pht: Gain = p * pkt.h.transpose();
    let k: Gain = &pht * &inn.s_inv;
    let x_new = x + &k * &inn.residual;
    let i_kh = StateCovariance::identity() - &k * &pkt.h;
    let p_new = i_kh * p * i_kh.transpose() + &k * &pkt.r * k.transpose();
    Ok((x_new, symmetrize(&p_new)))
}

#[inline]
pub fn symmetrize(p: &StateCovariance) -> StateCovariance {
    (p + p.transpose()) * 0.5
}

/// Propagate a track by `dt` seconds in its current chart.
pub fn predict(track: &TrackHypothesis, dt: f64, noise: &ProcessNoise) -> Result<TrackHypothesis, FilterError> {
    let f = build_transition(dt)?;
    let mut out = track.clone();
    out.state = TrackState(f * track.state.0);
    let mut p = f * track.cov * f.transpose();
    if dt > 0.0 {
        p += build_process_noise(dt, noise)?;
    }
    out.cov = symmetrize(&p);
    Ok(out)
}

/// Kalman correction of a track with one measurement packet.
pub fn kalman_update(track: &TrackHypothesis, pkt: &MeasurementPacket) -> Result<TrackHypothesis, FilterError> {
    let (x, p) = kalman_correct(&track.state.0, &track.cov, pkt)?;
    let mut out = track.clone();
    out.state = TrackState(x);
    out.state.enforce_floors();
    out.cov = p;
    Ok(out)
}

/// Re-anchor the chart at the corrected bearing.
///
/// The chart offset is absorbed into `g_ref` (leaving `w = 0`), the basis is
/// rebuilt there, and velocities plus the direction block of the covariance
/// are carried over with `T = B_new^T B_old`.
pub fn finalize_on_sphere(track: &TrackHypothesis) -> Result<TrackHypothesis, FilterError> {
    let w = track.state.w();
    let g_new = exp_map(&track.g_ref, &track.basis, &TangentCoords(w))?;
    let basis_new = make_tangent_basis(&g_new);
    let t = parallel_transport(&track.basis, &basis_new);

    let mut out = track.clone();
    let v: Vector2<f64> = t * track.state.w_dot();
    out.state.0[W1] = 0.0;
    out.state.0[W2] = 0.0;
    out.state.0[W1_DOT] = v.x;
    out.state.0[W2_DOT] = v.y;

    let mut j = StateCovariance::identity();
    j.fixed_view_mut::<2, 2>(W1, W1).copy_from(&t);
    j.fixed_view_mut::<2, 2>(W1_DOT, W1_DOT).copy_from(&t);
    debug_assert_eq!(W2, W1 + 1);
    debug_assert_eq!(W2_DOT, W1_DOT + 1);
    out.cov = symmetrize(&(j * track.cov * j.transpose()));

    out.g_ref = g_new;
    out.basis = basis_new;
    Ok(out)
}
