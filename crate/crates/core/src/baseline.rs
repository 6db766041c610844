//! Image-plane reference tracker on an equirectangular canvas.
//!
//! Boxes are tracked by pixel centre, aspect and height with a
//! constant-velocity Kalman filter. Columns are NOT wrapped: a target that
//! crosses azimuth +-pi jumps by a full canvas width in measurement space,
//! which the gate rejects. This is the behaviour being measured against the
//! spherical tracker, not a bug to fix.

use std::f64::consts::PI;

use log::warn;
use nalgebra::{SMatrix, SVector};

use crate::assignment::CostMatrix;
use crate::geometry::UnitBearing;
use crate::lifecycle::{associate_staged, split_by_score, Lifecycle};
use crate::measurement::{check_box, CameraDetection};
use crate::state::{TrackStatus, DEFAULT_HEIGHT_M};
use crate::tracker::{FrameInput, TrackOutput, TrackerConfig, TrackerError, TrackingEngine};

pub const PIXEL_DIM: usize = 8;

pub type PixelVector = SVector<f64, PIXEL_DIM>;
pub type PixelCovariance = SMatrix<f64, PIXEL_DIM, PIXEL_DIM>;
type PixelH = SMatrix<f64, 4, PIXEL_DIM>;

// u, v, u_dot, v_dot, aspect, aspect_dot, box_h, box_h_dot
const U: usize = 0;
const V: usize = 1;
const ASPECT: usize = 4;
const BOX_H: usize = 6;
const PAIRS: [(usize, usize); 4] = [(0, 2), (1, 3), (4, 5), (6, 7)];

/// Equirectangular canvas of a camera with image height `img_h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Canvas {
    pub img_h: f64,
}

impl Canvas {
    pub fn width(&self) -> f64 {
        4.0 * self.img_h
    }

    pub fn height(&self) -> f64 {
        2.0 * self.img_h
    }

    /// Pixels per radian, identical along both axes.
    pub fn gain(&self) -> f64 {
        self.width() / (2.0 * PI)
    }

    /// Bearing of an (unwrapped) pixel position.
    pub fn unproject(&self, u: f64, v: f64) -> UnitBearing {
        let az = 2.0 * PI * u / self.width() - PI;
        let el = PI / 2.0 - PI * v / self.height();
        UnitBearing::from_azimuth_elevation(az, el)
    }
}

/// Pixel position `(u, v)` of a bearing, with `0 <= u < W`.
pub fn project_equirect(bearing: &UnitBearing, canvas: &Canvas) -> (f64, f64) {
    let g = bearing.as_vector();
    let w = canvas.width();
    let mut u = w * (g.y.atan2(g.x) + PI) / (2.0 * PI);
    if u >= w {
        u -= w;
    }
    let v = canvas.height() * (PI / 2.0 - g.z.clamp(-1.0, 1.0).asin()) / PI;
    (u, v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelTrack {
    pub id: u64,
    pub x: PixelVector,
    pub p: PixelCovariance,
    pub life: Lifecycle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PixelBox {
    u: f64,
    v: f64,
    w: f64,
    h: f64,
}

fn iou(a: &PixelBox, b: &PixelBox) -> f64 {
    let ix = ((a.u + a.w / 2.0).min(b.u + b.w / 2.0) - (a.u - a.w / 2.0).max(b.u - b.w / 2.0)).max(0.0);
    let iy = ((a.v + a.h / 2.0).min(b.v + b.h / 2.0) - (a.v - a.h / 2.0).max(b.v - b.h / 2.0)).max(0.0);
    let inter = ix * iy;
    let union = a.w * a.h + b.w * b.h - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Pixel-space tracker sharing the spherical tracker's configuration.
#[derive(Debug, Clone)]
pub struct PixelTracker {
    cfg: TrackerConfig,
    canvas: Canvas,
    h: PixelH,
    r: SMatrix<f64, 4, 4>,
    tracks: Vec<PixelTrack>,
    next_id: u64,
    last_t: Option<f64>,
}

impl PixelTracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self, TrackerError> {
        cfg.validate()?;
        let mut h = PixelH::zeros();
        for (row, col) in [U, V, ASPECT, BOX_H].into_iter().enumerate() {
            h[(row, col)] = 1.0;
        }
        let m = &cfg.measurement;
        let r = SMatrix::<f64, 4, 4>::from_diagonal(&SVector::<f64, 4>::new(
            m.sigma_px.powi(2),
            m.sigma_px.powi(2),
            m.sigma_aspect.powi(2),
            m.sigma_px.powi(2),
        ));
        Ok(Self { canvas: Canvas { img_h: cfg.camera.img_h }, cfg, h, r, tracks: Vec::new(), next_id: 1, last_t: None })
    }

    pub fn tracks(&self) -> &[PixelTrack] {
        &self.tracks
    }

    pub fn canvas(&self) -> Canvas {
        self.canvas
    }

    fn measure(&self, det: &CameraDetection) -> SVector<f64, 4> {
        let (u, v) = project_equirect(&det.bearing, &self.canvas);
        SVector::<f64, 4>::new(u, v, det.aspect, det.box_h)
    }

    fn predict(&self, tr: &PixelTrack, dt: f64) -> PixelTrack {
        let gain = self.canvas.gain();
        let p = &self.cfg.process;
        let sigmas = [p.sigma_w * gain, p.sigma_w * gain, p.sigma_aspect, p.sigma_box_h];
        let mut f = PixelCovariance::identity();
        let mut q = PixelCovariance::zeros();
        let dt2 = dt * dt;
        for ((a, b), s) in PAIRS.into_iter().zip(sigmas) {
            f[(a, b)] = dt;
            let var = s * s;
            q[(a, a)] = var * dt2 * dt2 / 4.0;
            q[(a, b)] = var * dt2 * dt / 2.0;
            q[(b, a)] = var * dt2 * dt / 2.0;
            q[(b, b)] = var * dt2;
        }
        let p_new = f * tr.p * f.transpose() + q;
        PixelTrack { x: f * tr.x, p: (p_new + p_new.transpose()) * 0.5, ..tr.clone() }
    }

    /// Innovation and its inverse covariance.
    fn innovation(&self, tr: &PixelTrack, z: &SVector<f64, 4>) -> Option<(SVector<f64, 4>, SMatrix<f64, 4, 4>)> {
        let s = self.h * tr.p * self.h.transpose() + self.r;
        let s_inv = ((s + s.transpose()) * 0.5).cholesky()?.inverse();
        Some((z - self.h * tr.x, s_inv))
    }

    fn update(&self, tr: &PixelTrack, z: &SVector<f64, 4>) -> Option<PixelTrack> {
        let (y, s_inv) = self.innovation(tr, z)?;
        let k = tr.p * self.h.transpose() * s_inv;
        let i_kh = PixelCovariance::identity() - k * self.h;
        let p = i_kh * tr.p * i_kh.transpose() + k * self.r * k.transpose();
        Some(PixelTrack { x: tr.x + k * y, p: (p + p.transpose()) * 0.5, ..tr.clone() })
    }

    fn cost(&self, tracks: &[&PixelTrack], dets: &[&CameraDetection]) -> CostMatrix {
        let a = &self.cfg.association;
        let mut c = CostMatrix::new(tracks.len(), dets.len());
        for (i, tr) in tracks.iter().enumerate() {
            let tb = PixelBox { u: tr.x[U], v: tr.x[V], w: tr.x[ASPECT] * tr.x[BOX_H], h: tr.x[BOX_H] };
            for (j, det) in dets.iter().enumerate() {
                let z = self.measure(det);
                let Some((y, s_inv)) = self.innovation(tr, &z) else { continue };
                let d2 = (y.transpose() * s_inv * y)[(0, 0)];
                if !(d2 <= a.chi2_img) {
                    continue;
                }
                let db = PixelBox { u: z[0], v: z[1], w: z[2] * z[3], h: z[3] };
                c.set(i, j, Some(a.lambda_maha * d2 / a.chi2_img + a.lambda_iou * (1.0 - iou(&tb, &db))));
            }
        }
        c
    }

    fn spawn(&mut self, det: &CameraDetection) -> Option<PixelTrack> {
        if check_box(det.box_h, &self.cfg.camera, &self.cfg.measurement).is_err() || !(det.aspect > 0.0) {
            return None;
        }
        let z = self.measure(det);
        let m = &self.cfg.measurement;
        let init = &self.cfg.init;
        let rate = (init.sigma_w_dot * self.canvas.gain()).powi(2);
        let x = PixelVector::from([z[0], z[1], 0.0, 0.0, z[2], 0.0, z[3], 0.0]);
        let p = PixelCovariance::from_diagonal(&PixelVector::from([
            m.sigma_px.powi(2),
            m.sigma_px.powi(2),
            rate,
            rate,
            m.sigma_aspect.powi(2),
            init.sigma_aspect_dot.powi(2),
            m.sigma_px.powi(2),
            init.sigma_box_h_dot.powi(2),
        ]));
        let id = self.next_id;
        self.next_id += 1;
        Some(PixelTrack { id, x, p, life: Lifecycle::spawn(self.cfg.association.confirm_hits) })
    }

    pub fn step(&mut self, frame: &FrameInput) -> Result<Vec<TrackOutput>, TrackerError> {
        let t = frame.t;
        if !t.is_finite() {
            return Err(TrackerError::NonFiniteTime(t));
        }
        if let Some(prev) = self.last_t {
            if t < prev {
                return Err(TrackerError::NonMonotonicTime { previous: prev, t });
            }
        }
        let dt = t - self.last_t.unwrap_or(t);
        let predicted: Vec<PixelTrack> = self.tracks.iter().map(|tr| self.predict(tr, dt)).collect();

        let dets: Vec<&CameraDetection> = frame.detections.iter().collect();
        let (high, low) = split_by_score(dets.iter().map(|d| d.score), &self.cfg.association);
        let statuses: Vec<TrackStatus> = predicted.iter().map(|t| t.life.status).collect();
        let staged = associate_staged(&statuses, &high, &low, |ti, dj| {
            let trs: Vec<&PixelTrack> = ti.iter().map(|&i| &predicted[i]).collect();
            let ds: Vec<&CameraDetection> = dj.iter().map(|&j| dets[j]).collect();
            self.cost(&trs, &ds)
        });

        let confirm = self.cfg.association.confirm_hits;
        let max_age = self.cfg.association.max_age_frames;
        let mut next = Vec::with_capacity(predicted.len() + staged.unmatched_high.len());
        for (i, pred) in predicted.iter().enumerate() {
            let updated = staged.detection_for(i).and_then(|j| {
                let r = self.update(pred, &self.measure(dets[j]));
                if r.is_none() {
                    warn!("pixel track {}: singular innovation", pred.id);
                }
                r
            });
            match updated {
                Some(mut tr) => {
                    tr.life.hit(confirm);
                    next.push(tr);
                }
                None => {
                    let mut tr = pred.clone();
                    if tr.life.miss(max_age) {
                        next.push(tr);
                    }
                }
            }
        }
        for &j in &staged.unmatched_high {
            if let Some(tr) = self.spawn(dets[j]) {
                next.push(tr);
            }
        }
        self.tracks = next;
        self.last_t = Some(t);

        let pose = frame.sensor_pose.as_ref();
        Ok(self
            .tracks
            .iter()
            .filter(|tr| tr.life.status == TrackStatus::Confirmed)
            .map(|tr| {
                let bearing = self.canvas.unproject(tr.x[U], tr.x[V]);
                let depth = self.cfg.camera.depth_from_box(tr.x[BOX_H].max(1e-6), DEFAULT_HEIGHT_M);
                TrackOutput::new(t, tr.id, bearing, depth, tr.p.diagonal().iter().copied().collect(), pose)
            })
            .collect())
    }
}

impl TrackingEngine for PixelTracker {
    fn name(&self) -> &'static str {
        "pixel"
    }

    fn step(&mut self, frame: &FrameInput) -> Result<Vec<TrackOutput>, TrackerError> {
        PixelTracker::step(self, frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CANVAS: Canvas = Canvas { img_h: 1000.0 };

    fn det(az: f64, t: f64) -> CameraDetection {
        CameraDetection {
            t,
            bearing: UnitBearing::from_azimuth_elevation(az, 0.0),
            aspect: 0.4,
            box_h: 300.0,
            score: 0.9,
        }
    }

    #[test]
    fn forward_maps_to_centre() {
        let (u, v) = project_equirect(&UnitBearing::from_xyz(1.0, 0.0, 0.0).unwrap(), &CANVAS);
        assert!((u - 2000.0).abs() < 1e-9);
        assert!((v - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn north_pole_is_top_row() {
        let (_, v) = project_equirect(&UnitBearing::from_xyz(0.0, 0.0, 1.0).unwrap(), &CANVAS);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn seam_splits_neighbours() {
        let eps = 1e-3;
        let (ua, _) = project_equirect(&UnitBearing::from_azimuth_elevation(PI - eps, 0.0), &CANVAS);
        let (ub, _) = project_equirect(&UnitBearing::from_azimuth_elevation(-PI + eps, 0.0), &CANVAS);
        assert!(ua > CANVAS.width() - 5.0);
        assert!(ub < 5.0);
        let (uc, _) = project_equirect(&UnitBearing::from_azimuth_elevation(PI, 0.0), &CANVAS);
        assert!((0.0..CANVAS.width()).contains(&uc));
    }

    #[test]
    fn unproject_inverts_projection() {
        let g = UnitBearing::from_azimuth_elevation(-2.3, 0.4);
        let (u, v) = project_equirect(&g, &CANVAS);
        assert!(CANVAS.unproject(u, v).angle_to(&g) < 1e-12);
        // Unwrapped columns past the edge still decode to a valid bearing.
        assert!(CANVAS.unproject(u + CANVAS.width(), v).angle_to(&g) < 1e-9);
    }

    fn run(start_az: f64, rate: f64, frames: usize) -> Vec<u64> {
        let mut tr = PixelTracker::new(TrackerConfig::default()).unwrap();
        let mut ids = std::collections::BTreeSet::new();
        for k in 0..frames {
            let t = k as f64 / 30.0;
            for o in
                tr.step(&FrameInput { t, detections: vec![det(start_az + rate * t, t)], ..Default::default() }).unwrap()
            {
                ids.insert(o.id);
            }
        }
        ids.into_iter().collect()
    }

    #[test]
    fn benign_target_keeps_identity() {
        assert_eq!(run(0.5, 0.2, 150), vec![1]);
    }

    #[test]
    fn seam_crossing_spawns_new_identity() {
        // Starts 0.1 rad short of +pi and moves across it at 0.2 rad/s.
        let ids = run(PI - 0.1, 0.2, 150);
        assert_eq!(ids.len(), 2, "{ids:?}");
    }

    #[test]
    fn rejects_time_going_backwards() {
        let mut tr = PixelTracker::new(TrackerConfig::default()).unwrap();
        tr.step(&FrameInput { t: 2.0, ..Default::default() }).unwrap();
        assert!(matches!(
            tr.step(&FrameInput { t: 1.0, ..Default::default() }),
            Err(TrackerError::NonMonotonicTime { .. })
        ));
    }

    #[test]
    fn output_depth_uses_default_height() {
        let mut tr = PixelTracker::new(TrackerConfig::default()).unwrap();
        let mut out = Vec::new();
        for k in 0..3 {
            let t = k as f64 / 30.0;
            out = tr.step(&FrameInput { t, detections: vec![det(1.0, t)], ..Default::default() }).unwrap();
        }
        assert_eq!(out.len(), 1);
        let expected = crate::measurement::CameraModel::default().depth_from_box(300.0, DEFAULT_HEIGHT_M);
        assert!((out[0].depth - expected).abs() < 1e-6);
        assert_eq!(out[0].cov_diag.len(), PIXEL_DIM);
    }
}
