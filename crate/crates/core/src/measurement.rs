//! Camera and LiDAR observation models.
//!
//! The camera reports a bearing, a box aspect ratio and a box height in
//! pixels. The LiDAR reports a depth at the azimuth where its sweep crossed
//! the target. Box height and depth are linked through the object's physical
//! height and the linear angle/pixel map `alpha = h_px / px_per_rad`, with
//! `px_per_rad = 2 img_h / pi` by default (the full image height spans pi/2).

use nalgebra::{Const, DMatrix, DVector, Dyn, OMatrix};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::geometry::{log_map, GeometryError, UnitBearing};
use crate::state::{TrackHypothesis, ASPECT, BOX_H, DEPTH, STATE_DIM, W1, W2};

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum MeasurementError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("box height {box_h} px is at or below the {min} px floor; depth would diverge")]
    DegenerateBox { box_h: f64, min: f64 },
    #[error("box height {box_h} px exceeds the image height {img_h} px")]
    BoxExceedsImage { box_h: f64, img_h: f64 },
    #[error("{what} must be positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },
    #[error("image ({image_t} s) and lidar ({lidar_t} s) packets are more than {dt_sync} s apart")]
    Sync { image_t: f64, lidar_t: f64, dt_sync: f64 },
    #[error("packets to combine must be an image and a lidar packet")]
    WrongModality,
}

/// Linear angle/pixel camera map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraModel {
    /// Image height, pixels.
    pub img_h: f64,
    /// Angular gain, pixels per radian. Defaults to `2 img_h / pi`.
    #[serde(default)]
    pub px_per_rad: Option<f64>,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self::new(1000.0)
    }
}

impl CameraModel {
    pub fn new(img_h: f64) -> Self {
        Self { img_h, px_per_rad: None }
    }

    #[inline]
    pub fn gain(&self) -> f64 {
        self.px_per_rad.unwrap_or(2.0 * self.img_h / PI)
    }

    /// Angle subtended by `px` pixels.
    #[inline]
    pub fn px_to_rad(&self, px: f64) -> f64 {
        px / self.gain()
    }

    #[inline]
    pub fn rad_to_px(&self, rad: f64) -> f64 {
        rad * self.gain()
    }

    /// Range at which an object of height `height_m` spans `box_h` pixels.
    pub fn depth_from_box(&self, box_h: f64, height_m: f64) -> f64 {
        let alpha = self.px_to_rad(box_h);
        0.5 * height_m / (0.5 * alpha).tan()
    }

    /// `d depth / d box_h` at the given box height, m/px.
    pub fn depth_from_box_slope(&self, box_h: f64, height_m: f64) -> f64 {
        let half = 0.5 * self.px_to_rad(box_h);
        let s = half.sin();
        -height_m / (4.0 * s * s) / self.gain()
    }

    /// Expected box height in pixels of an object of height `height_m` at `depth` meters.
    pub fn height_obs_from_depth(&self, depth: f64, height_m: f64) -> f64 {
        self.rad_to_px(2.0 * (height_m / (2.0 * depth)).atan())
    }
}

/// Range (m) of an object of height `height_est` spanning `box_h_det` pixels
/// in an image `img_h` pixels tall, under the default angular gain.
pub fn depth_from_box(box_h_det: f64, height_est: f64, img_h: f64) -> f64 {
    CameraModel::new(img_h).depth_from_box(box_h_det, height_est)
}

/// Box height (px) that an object of height `height_est` at `depth_obs`
/// meters would span; the exact inverse of [`depth_from_box`].
pub fn height_obs_from_depth(depth_obs: f64, height_est: f64, img_h: f64) -> f64 {
    CameraModel::new(img_h).height_obs_from_depth(depth_obs, height_est)
}

/// A detection from the panoramic camera, already expressed as a bearing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraDetection {
    pub t: f64,
    pub bearing: UnitBearing,
    /// Box width over height.
    pub aspect: f64,
    /// Box height, pixels.
    pub box_h: f64,
    pub score: f64,
}

/// One aggregated LiDAR depth return for a target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarDepthObs {
    pub t: f64,
    /// Sweep azimuth at emission, radians.
    pub azimuth: f64,
    /// Range, meters.
    pub depth: f64,
    /// Robust standard deviation of the aggregated returns, meters.
    pub spread: f64,
}

/// Measurement noise parameters for both modalities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasurementNoise {
    /// Detector pixel noise on the box centre and height, pixels.
    pub sigma_px: f64,
    /// Aspect-ratio noise.
    pub sigma_aspect: f64,
    /// Floor on the LiDAR depth standard deviation, meters.
    pub sigma_depth_min: f64,
    /// Uncertainty of the physical height prior used in the box/depth conversions, meters.
    pub sigma_height: f64,
    /// Boxes at or below this height (pixels) carry no usable depth.
    pub h_px_min: f64,
    /// Maximum timestamp gap for a joint image+LiDAR update, seconds.
    pub dt_sync: f64,
}

impl Default for MeasurementNoise {
    fn default() -> Self {
        Self {
            sigma_px: 2.0,
            sigma_aspect: 0.05,
            sigma_depth_min: 0.02,
            sigma_height: 0.1,
            h_px_min: 2.0,
            dt_sync: 0.005,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Image,
    Lidar,
    Joint,
}

/// A raw scalar reading carried alongside a packet for later recombination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarObs {
    pub value: f64,
    pub variance: f64,
}

/// Observation matrix: one row per measured quantity, one column per state entry.
pub type ObservationMatrix = OMatrix<f64, Dyn, Const<STATE_DIM>>;

/// Linear(ised) observation `z = H x + r`, `r ~ N(0, R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementPacket {
    pub t: f64,
    pub z: DVector<f64>,
    pub h: ObservationMatrix,
    pub r: DMatrix<f64>,
    pub modality: Modality,
    /// The raw detected box height of an image packet, used to build the
    /// joint observation.
    pub box_height: Option<ScalarObs>,
}

/// Selector matrix picking `indices` out of the state.
pub fn selector(indices: &[usize]) -> ObservationMatrix {
    let mut h = ObservationMatrix::zeros(indices.len());
    for (row, &col) in indices.iter().enumerate() {
        h[(row, col)] = 1.0;
    }
    h
}

pub const IMAGE_ROWS: [usize; 4] = [W1, W2, ASPECT, DEPTH];
pub const LIDAR_ROWS: [usize; 2] = [BOX_H, DEPTH];
pub const JOINT_ROWS: [usize; 5] = [W1, W2, ASPECT, BOX_H, DEPTH];

impl MeasurementPacket {
    pub fn dim(&self) -> usize {
        self.z.len()
    }

    /// Sub-packet made of the given rows, keeping the matching block of `R`.
    pub fn select_rows(&self, rows: &[usize]) -> MeasurementPacket {
        let n = rows.len();
        let z = DVector::from_iterator(n, rows.iter().map(|&i| self.z[i]));
        let h = ObservationMatrix::from_fn(n, |i, j| self.h[(rows[i], j)]);
        let r = DMatrix::from_fn(n, n, |i, j| self.r[(rows[i], rows[j])]);
        MeasurementPacket { t: self.t, z, h, r, modality: self.modality, box_height: None }
    }
}

/// Stack two packets into one with block-diagonal noise.
pub fn stack_packets(a: &MeasurementPacket, b: &MeasurementPacket) -> MeasurementPacket {
    let (na, nb) = (a.dim(), b.dim());
    let n = na + nb;
    let mut z = DVector::zeros(n);
    z.rows_mut(0, na).copy_from(&a.z);
    z.rows_mut(na, nb).copy_from(&b.z);
    let mut h = ObservationMatrix::zeros(n);
    h.rows_mut(0, na).copy_from(&a.h);
    h.rows_mut(na, nb).copy_from(&b.h);
    let mut r = DMatrix::zeros(n, n);
    r.view_mut((0, 0), (na, na)).copy_from(&a.r);
    r.view_mut((na, na), (nb, nb)).copy_from(&b.r);
    MeasurementPacket { t: a.t.max(b.t), z, h, r, modality: Modality::Joint, box_height: None }
}

/// Rejects box heights that are degenerate or larger than the image.
pub fn check_box(box_h: f64, cam: &CameraModel, noise: &MeasurementNoise) -> Result<(), MeasurementError> {
    if !(box_h > noise.h_px_min) {
        return Err(MeasurementError::DegenerateBox { box_h, min: noise.h_px_min });
    }
    if box_h > cam.img_h {
        return Err(MeasurementError::BoxExceedsImage { box_h, img_h: cam.img_h });
    }
    Ok(())
}

/// Image observation `[w1, w2, aspect, depth_from_box]` in the track's chart.
pub fn image_measurement(
    det: &CameraDetection,
    track: &TrackHypothesis,
    cam: &CameraModel,
    noise: &MeasurementNoise,
) -> Result<MeasurementPacket, MeasurementError> {
    check_box(det.box_h, cam, noise)?;
    let w = log_map(&track.g_ref, &track.basis, &det.bearing)?;
    let height = track.height_est;
    let depth = cam.depth_from_box(det.box_h, height);

    let dir_var = (noise.sigma_px / cam.gain()).powi(2);
    let slope = cam.depth_from_box_slope(det.box_h, height);
    let depth_var = (slope * noise.sigma_px).powi(2) + (depth / height * noise.sigma_height).powi(2);

    Ok(MeasurementPacket {
        t: det.t,
        z: DVector::from_vec(vec![w.0.x, w.0.y, det.aspect, depth]),
        h: selector(&IMAGE_ROWS),
        r: DMatrix::from_diagonal(&DVector::from_vec(vec![dir_var, dir_var, noise.sigma_aspect.powi(2), depth_var])),
        modality: Modality::Image,
        box_height: Some(ScalarObs { value: det.box_h, variance: noise.sigma_px.powi(2) }),
    })
}

/// LiDAR observation `[expected box height, depth]`.
pub fn lidar_measurement(
    obs: &LidarDepthObs,
    track: &TrackHypothesis,
    cam: &CameraModel,
    noise: &MeasurementNoise,
) -> Result<MeasurementPacket, MeasurementError> {
    if !(obs.depth > 0.0) {
        return Err(MeasurementError::NonPositive { what: "lidar depth", value: obs.depth });
    }
    let height = track.height_est;
    let d = obs.depth;
    let depth_var = obs.spread.powi(2).max(noise.sigma_depth_min.powi(2));

    let box_h = cam.height_obs_from_depth(d, height);
    // alpha = 2 atan(H / 2d); propagate depth noise and the height prior.
    let u = height / (2.0 * d);
    let k = cam.gain() / (1.0 + u * u);
    let dh_dd = -k * height / (d * d);
    let dh_dheight = k / d;
    let box_var = dh_dd.powi(2) * depth_var + (dh_dheight * noise.sigma_height).powi(2);

    Ok(MeasurementPacket {
        t: obs.t,
        z: DVector::from_vec(vec![box_h, d]),
        h: selector(&LIDAR_ROWS),
        r: DMatrix::from_diagonal(&DVector::from_vec(vec![box_var, depth_var])),
        modality: Modality::Lidar,
        box_height: None,
    })
}

/// Five-row observation `[w1, w2, aspect, box_h_det, depth_obs]` from a
/// synchronised image/LiDAR pair.
pub fn joint_measurement(
    img: &MeasurementPacket,
    lidar: &MeasurementPacket,
    dt_sync: f64,
) -> Result<MeasurementPacket, MeasurementError> {
    let box_height = match (img.modality, lidar.modality, img.box_height) {
        (Modality::Image, Modality::Lidar, Some(b)) => b,
        _ => return Err(MeasurementError::WrongModality),
    };
    if (img.t - lidar.t).abs() > dt_sync {
        return Err(MeasurementError::Sync { image_t: img.t, lidar_t: lidar.t, dt_sync });
    }
    let mut z = DVector::zeros(5);
    z.rows_mut(0, 3).copy_from(&img.z.rows(0, 3));
    z[3] = box_height.value;
    z[4] = lidar.z[1];
    let mut r = DMatrix::zeros(5, 5);
    r.view_mut((0, 0), (3, 3)).copy_from(&img.r.view((0, 0), (3, 3)));
    r[(3, 3)] = box_height.variance;
    r[(4, 4)] = lidar.r[(1, 1)];
    Ok(MeasurementPacket {
        t: img.t.max(lidar.t),
        z,
        h: selector(&JOINT_ROWS),
        r,
        modality: Modality::Joint,
        box_height: None,
    })
}
