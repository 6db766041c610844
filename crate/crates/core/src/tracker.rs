//! Per-frame spherical tracking: predict, associate, fuse, re-anchor, manage.

use log::{debug, warn};
use nalgebra::{RowVector2, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{solve_assignment, CostMatrix};
use crate::association::{build_cost_matrix, AssociationConfig, CostGrid};
use crate::filter::{finalize_on_sphere, kalman_update, predict};
use crate::geometry::{exp_map, TangentCoords, UnitBearing};
use crate::lifecycle::{associate_staged, split_by_score, Lifecycle};
use crate::measurement::{
    check_box, joint_measurement, lidar_measurement, CameraDetection, CameraModel, LidarDepthObs, MeasurementNoise,
    MeasurementPacket,
};
use crate::state::{
    ProcessNoise, StateCovariance, TrackHypothesis, TrackState, TrackStatus, ASPECT, BOX_H, DEFAULT_HEIGHT_M, DEPTH,
    STATE_DIM, W1, W2,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackerError {
    #[error("frame time {t} s precedes the previous frame at {previous} s")]
    NonMonotonicTime { previous: f64, t: f64 },
    #[error("frame time must be finite, got {0}")]
    NonFiniteTime(f64),
    #[error("invalid tracker configuration: {0}")]
    Config(String),
}

/// Prior standard deviations of the rate components of a new track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitUncertainty {
    /// Tangent-plane angular rate, rad/s.
    pub sigma_w_dot: f64,
    pub sigma_aspect_dot: f64,
    /// Box-height rate, px/s.
    pub sigma_box_h_dot: f64,
    /// Range rate, m/s.
    pub sigma_depth_dot: f64,
}

impl Default for InitUncertainty {
    fn default() -> Self {
        Self { sigma_w_dot: 0.3, sigma_aspect_dot: 0.1, sigma_box_h_dot: 30.0, sigma_depth_dot: 1.0 }
    }
}

/// Everything the spherical tracker needs, with all defaults resolved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub camera: CameraModel,
    pub measurement: MeasurementNoise,
    pub process: ProcessNoise,
    pub association: AssociationConfig,
    pub init: InitUncertainty,
    /// Smoothing factor of the per-track physical height estimate.
    pub height_ema: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            camera: CameraModel::default(),
            measurement: MeasurementNoise::default(),
            process: ProcessNoise::default(),
            association: AssociationConfig::default(),
            init: InitUncertainty::default(),
            height_ema: 0.3,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackerError> {
        let err = |s: String| Err(TrackerError::Config(s));
        if !(self.camera.img_h > 0.0) {
            return err(format!("camera.img_h must be > 0, got {}", self.camera.img_h));
        }
        if let Some(g) = self.camera.px_per_rad {
            if !(g > 0.0) {
                return err(format!("camera.px_per_rad must be > 0, got {g}"));
            }
        }
        let m = &self.measurement;
        for (name, v) in [
            ("sigma_px", m.sigma_px),
            ("sigma_aspect", m.sigma_aspect),
            ("sigma_depth_min", m.sigma_depth_min),
            ("dt_sync", m.dt_sync),
        ] {
            if !(v > 0.0) {
                return err(format!("measurement.{name} must be > 0, got {v}"));
            }
        }
        for (name, v) in [("sigma_height", m.sigma_height), ("h_px_min", m.h_px_min)] {
            if !(v >= 0.0) {
                return err(format!("measurement.{name} must be >= 0, got {v}"));
            }
        }
        let p = &self.process;
        for (name, v) in [
            ("sigma_w", p.sigma_w),
            ("sigma_aspect", p.sigma_aspect),
            ("sigma_box_h", p.sigma_box_h),
            ("sigma_depth", p.sigma_depth),
        ] {
            if !(v > 0.0) {
                return err(format!("process.{name} must be > 0, got {v}"));
            }
        }
        let i = &self.init;
        for (name, v) in [
            ("sigma_w_dot", i.sigma_w_dot),
            ("sigma_aspect_dot", i.sigma_aspect_dot),
            ("sigma_box_h_dot", i.sigma_box_h_dot),
            ("sigma_depth_dot", i.sigma_depth_dot),
        ] {
            if !(v > 0.0) {
                return err(format!("init.{name} must be > 0, got {v}"));
            }
        }
        if !(self.height_ema >= 0.0 && self.height_ema <= 1.0) {
            return err(format!("height_ema must be in [0, 1], got {}", self.height_ema));
        }
        self.association.validate().map_err(TrackerError::Config)
    }
}

/// Rigid sensor-to-world transform applied to outputs only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorPose {
    pub translation: [f64; 3],
    /// Unit quaternion `[w, x, y, z]`.
    pub rotation: [f64; 4],
}

impl SensorPose {
    pub fn identity() -> Self {
        Self { translation: [0.0; 3], rotation: [1.0, 0.0, 0.0, 0.0] }
    }

    fn quaternion(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.rotation;
        UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z))
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.quaternion() * p + Vector3::from(self.translation)
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.quaternion() * v
    }
}

/// Sensor input for one camera frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FrameInput {
    pub t: f64,
    pub detections: Vec<CameraDetection>,
    /// LiDAR returns stamped since the previous frame.
    pub lidar_obs: Vec<LidarDepthObs>,
    pub sensor_pose: Option<SensorPose>,
}

/// One confirmed track at one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackOutput {
    pub t: f64,
    pub id: u64,
    pub bearing: UnitBearing,
    /// Range, meters.
    pub depth: f64,
    /// Horizontal position `[x, y]`, meters.
    pub planar: [f64; 2],
    /// Diagonal of the state covariance.
    pub cov_diag: Vec<f64>,
}

impl TrackOutput {
    /// Builds an output, mapping into the world frame when a pose is given.
    pub fn new(
        t: f64,
        id: u64,
        bearing: UnitBearing,
        depth: f64,
        cov_diag: Vec<f64>,
        pose: Option<&SensorPose>,
    ) -> Self {
        let (bearing, p) = match pose {
            None => (bearing, bearing.as_vector() * depth),
            Some(pose) => {
                let b = UnitBearing::new(pose.rotate(bearing.as_vector())).unwrap_or(bearing);
                (b, pose.apply(&(bearing.as_vector() * depth)))
            }
        };
        Self { t, id, bearing, depth, planar: [p.x, p.y], cov_diag }
    }
}

/// Common interface of the spherical tracker and the pixel baseline.
pub trait TrackingEngine {
    fn name(&self) -> &'static str;

    /// Advances to `frame.t` and returns the confirmed tracks, sorted by id.
    fn step(&mut self, frame: &FrameInput) -> Result<Vec<TrackOutput>, TrackerError>;
}

/// Multi-target tracker with tangent-plane Kalman filters on the sphere.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    tracks: Vec<TrackHypothesis>,
    next_id: u64,
    last_t: Option<f64>,
}

fn lifecycle_of(t: &TrackHypothesis) -> Lifecycle {
    Lifecycle { status: t.status, hits: t.hits, misses: t.misses }
}

fn set_lifecycle(t: &mut TrackHypothesis, l: Lifecycle) {
    t.status = l.status;
    t.hits = l.hits;
    t.misses = l.misses;
}

fn wrap_angle(a: f64) -> f64 {
    let w = (a + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
    if w == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        w
    }
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self, TrackerError> {
        cfg.validate()?;
        Ok(Self { cfg, tracks: Vec::new(), next_id: 1, last_t: None })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    /// All live hypotheses, including tentative and lost ones.
    pub fn tracks(&self) -> &[TrackHypothesis] {
        &self.tracks
    }

    pub fn last_time(&self) -> Option<f64> {
        self.last_t
    }

    /// Cost of pairing a predicted track with a LiDAR return, or `None` when
    /// the return falls outside the track's azimuth or depth gate.
    ///
    /// The track is extrapolated along its predicted rates to the return's
    /// timestamp before the azimuth is compared.
    fn lidar_cost(&self, track: &TrackHypothesis, t: f64, obs: &LidarDepthObs) -> Option<f64> {
        let a = &self.cfg.association;
        let lead = obs.t - t;
        let x = &track.state;
        let w = x.w() + x.w_dot() * lead;
        let g = exp_map(&track.g_ref, &track.basis, &TangentCoords(w)).ok()?;
        let v = g.as_vector();
        let horiz = v.x.hypot(v.y);
        if horiz < 1e-6 {
            return None;
        }
        let east = Vector3::new(-v.y, v.x, 0.0) / horiz;
        let j = RowVector2::new(east.dot(&track.basis.b1), east.dot(&track.basis.b2)) / horiz;
        let p_ww = track.cov.fixed_view::<2, 2>(W1, W1);
        let var_az = (j * p_ww * j.transpose())[(0, 0)].max(0.0);
        let sigma_az = var_az.sqrt().max(a.lidar_gate_floor);
        let d_az = wrap_angle(obs.azimuth - g.azimuth());
        if d_az.abs() > a.lidar_gate_sigmas * sigma_az {
            return None;
        }
        let d_pred = x.depth() + x.depth_dot() * lead;
        let var_d = track.cov[(DEPTH, DEPTH)] + obs.spread.powi(2) + self.cfg.measurement.sigma_depth_min.powi(2);
        let nd2 = (obs.depth - d_pred).powi(2) / var_d;
        if nd2 > a.chi2_lidar {
            return None;
        }
        Some((d_az / sigma_az).powi(2) + nd2)
    }

    /// Fresh tentative track from an unmatched detection.
    fn spawn(&mut self, det: &CameraDetection, t: f64) -> Option<TrackHypothesis> {
        let cam = &self.cfg.camera;
        let noise = &self.cfg.measurement;
        if check_box(det.box_h, cam, noise).is_err() || !(det.aspect > 0.0) {
            return None;
        }
        let height = DEFAULT_HEIGHT_M;
        let depth = cam.depth_from_box(det.box_h, height);
        let dir_var = (noise.sigma_px / cam.gain()).powi(2);
        let slope = cam.depth_from_box_slope(det.box_h, height);
        let depth_var = (slope * noise.sigma_px).powi(2) + (depth / height * noise.sigma_height).powi(2);
        let init = &self.cfg.init;

        let mut s = TrackState::zeros();
        s.0[ASPECT] = det.aspect;
        s.0[BOX_H] = det.box_h;
        s.0[DEPTH] = depth;
        s.enforce_floors();
        let diag = [
            dir_var,
            dir_var,
            init.sigma_w_dot.powi(2),
            init.sigma_w_dot.powi(2),
            noise.sigma_aspect.powi(2),
            init.sigma_aspect_dot.powi(2),
            noise.sigma_px.powi(2),
            init.sigma_box_h_dot.powi(2),
            depth_var,
            init.sigma_depth_dot.powi(2),
        ];
        let cov = StateCovariance::from_diagonal(&nalgebra::SVector::<f64, STATE_DIM>::from(diag));
        let id = self.next_id;
        self.next_id += 1;
        let mut track = TrackHypothesis::new(id, det.bearing, s, cov, t);
        set_lifecycle(&mut track, Lifecycle::spawn(self.cfg.association.confirm_hits));
        Some(track)
    }

    /// Image update, fused with a LiDAR return when one was associated.
    ///
    /// Returns within `dt_sync` of the frame are fused in one joint update;
    /// older returns are applied first, by re-running the prediction from
    /// the previous posterior through the return's timestamp.
    fn fuse(
        &self,
        prior: &TrackHypothesis,
        predicted: &TrackHypothesis,
        img: &MeasurementPacket,
        lidar: Option<&LidarDepthObs>,
        t_prev: f64,
        t: f64,
    ) -> Option<TrackHypothesis> {
        let cfg = &self.cfg;
        let Some(obs) = lidar else {
            return kalman_update(predicted, img)
                .map_err(|e| warn!("track {}: image update failed: {e}", prior.id))
                .ok();
        };
        let result = if (obs.t - t).abs() <= cfg.measurement.dt_sync {
            lidar_measurement(obs, predicted, &cfg.camera, &cfg.measurement)
                .and_then(|l| joint_measurement(img, &l, cfg.measurement.dt_sync))
                .map_err(|e| e.to_string())
                .and_then(|j| kalman_update(predicted, &j).map_err(|e| e.to_string()))
        } else {
            let t_l = obs.t.clamp(t_prev, t);
            (|| {
                let a = predict(prior, t_l - t_prev, &cfg.process).map_err(|e| e.to_string())?;
                let l = lidar_measurement(obs, &a, &cfg.camera, &cfg.measurement).map_err(|e| e.to_string())?;
                let a = kalman_update(&a, &l).map_err(|e| e.to_string())?;
                let a = predict(&a, t - t_l, &cfg.process).map_err(|e| e.to_string())?;
                kalman_update(&a, img).map_err(|e| e.to_string())
            })()
        };
        match result {
            Ok(tr) => Some(tr),
            Err(e) => {
                warn!("track {}: fused update failed ({e}); using image only", prior.id);
                kalman_update(predicted, img).ok()
            }
        }
    }

    /// One frame of the tracking loop.
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
        let t_prev = self.last_t.unwrap_or(t);
        let dt = t - t_prev;
        let cfg = self.cfg;

        // Predict.
        let priors = std::mem::take(&mut self.tracks);
        let mut predicted = Vec::with_capacity(priors.len());
        let mut kept_priors = Vec::with_capacity(priors.len());
        for tr in priors {
            match predict(&tr, dt, &cfg.process) {
                Ok(p) => {
                    predicted.push(p);
                    kept_priors.push(tr);
                }
                Err(e) => warn!("track {}: prediction failed, dropping: {e}", tr.id),
            }
        }

        // Associate detections in three stages.
        let dets: Vec<&CameraDetection> = frame.detections.iter().collect();
        let (high, low) = split_by_score(dets.iter().map(|d| d.score), &cfg.association);
        let statuses: Vec<TrackStatus> = predicted.iter().map(|t| t.status).collect();
        let n_dets = dets.len();
        let mut packets: Vec<Option<MeasurementPacket>> = vec![None; predicted.len() * n_dets];
        let staged = associate_staged(&statuses, &high, &low, |ti, dj| {
            let trs: Vec<&TrackHypothesis> = ti.iter().map(|&i| &predicted[i]).collect();
            let ds: Vec<&CameraDetection> = dj.iter().map(|&j| dets[j]).collect();
            let mut grid: CostGrid = build_cost_matrix(&trs, &ds, &cfg.camera, &cfg.measurement, &cfg.association);
            for (a, &i) in ti.iter().enumerate() {
                for (b, &j) in dj.iter().enumerate() {
                    if let Some(p) = grid.take_packet(a, b) {
                        packets[i * n_dets + j] = Some(p);
                    }
                }
            }
            grid.cost
        });

        // Associate LiDAR returns to the tracks that received a detection.
        let matched: Vec<usize> = {
            let mut m: Vec<usize> = staged.pairs.iter().map(|p| p.0).collect();
            m.sort_unstable();
            m
        };
        let mut lidar_for = vec![None; predicted.len()];
        if !matched.is_empty() && !frame.lidar_obs.is_empty() {
            let mut lc = CostMatrix::new(matched.len(), frame.lidar_obs.len());
            for (a, &i) in matched.iter().enumerate() {
                for (b, obs) in frame.lidar_obs.iter().enumerate() {
                    lc.set(a, b, self.lidar_cost(&predicted[i], t, obs));
                }
            }
            for (a, b) in solve_assignment(&lc).pairs {
                lidar_for[matched[a]] = Some(b);
            }
        }

        // Update, re-anchor, and manage lifecycles.
        let mut next = Vec::with_capacity(predicted.len() + staged.unmatched_high.len());
        for (i, pred) in predicted.iter().enumerate() {
            let mut life = lifecycle_of(pred);
            let det = staged.detection_for(i);
            let updated = det.and_then(|j| {
                let img = packets[i * n_dets + j].as_ref()?;
                let obs = lidar_for[i].map(|b| &frame.lidar_obs[b]);
                let mut tr = self.fuse(&kept_priors[i], pred, img, obs, t_prev, t)?;
                if let Some(obs) = obs {
                    self.update_height(&mut tr, dets[j], obs);
                }
                Some(tr)
            });
            let mut tr = match updated {
                Some(mut tr) => {
                    life.hit(cfg.association.confirm_hits);
                    tr.last_update = t;
                    tr
                }
                None => {
                    if !life.miss(cfg.association.max_age_frames) {
                        debug!("track {} removed after {} misses", pred.id, life.misses);
                        continue;
                    }
                    pred.clone()
                }
            };
            set_lifecycle(&mut tr, life);
            match finalize_on_sphere(&tr) {
                Ok(f) => next.push(f),
                Err(e) => warn!("track {}: cannot re-anchor, dropping: {e}", tr.id),
            }
        }
        for &j in &staged.unmatched_high {
            if let Some(tr) = self.spawn(dets[j], t) {
                next.push(tr);
            }
        }
        self.tracks = next;
        self.last_t = Some(t);

        Ok(self.outputs(t, frame.sensor_pose.as_ref()))
    }

    fn update_height(&self, track: &mut TrackHypothesis, det: &CameraDetection, obs: &LidarDepthObs) {
        let alpha = self.cfg.camera.px_to_rad(det.box_h);
        let sample = 2.0 * obs.depth * (alpha / 2.0).tan();
        if sample.is_finite() && sample > 0.0 {
            let k = self.cfg.height_ema;
            track.height_est = (1.0 - k) * track.height_est + k * sample;
        }
    }

    fn outputs(&self, t: f64, pose: Option<&SensorPose>) -> Vec<TrackOutput> {
        self.tracks
            .iter()
            .filter(|tr| tr.status == TrackStatus::Confirmed)
            .map(|tr| {
                let bearing = exp_map(&tr.g_ref, &tr.basis, &TangentCoords::new(tr.state.0[W1], tr.state.0[W2]))
                    .unwrap_or(tr.g_ref);
                TrackOutput::new(t, tr.id, bearing, tr.state.depth(), tr.cov.diagonal().iter().copied().collect(), pose)
            })
            .collect()
    }
}

impl TrackingEngine for Tracker {
    fn name(&self) -> &'static str {
        "spherical"
    }

    fn step(&mut self, frame: &FrameInput) -> Result<Vec<TrackOutput>, TrackerError> {
        Tracker::step(self, frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(az: f64, box_h: f64, score: f64, t: f64) -> CameraDetection {
        CameraDetection { t, bearing: UnitBearing::from_azimuth_elevation(az, 0.0), aspect: 0.4, box_h, score }
    }

    fn frame(t: f64, detections: Vec<CameraDetection>) -> FrameInput {
        FrameInput { t, detections, ..Default::default() }
    }

    fn confirmed_tracker(az: f64) -> Tracker {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        for k in 0..3 {
            let t = k as f64 / 30.0;
            tr.step(&frame(t, vec![det(az, 300.0, 0.9, t)])).unwrap();
        }
        assert_eq!(tr.tracks()[0].status, TrackStatus::Confirmed);
        tr
    }

    #[test]
    fn rejects_time_going_backwards() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        tr.step(&frame(1.0, vec![])).unwrap();
        assert!(tr.step(&frame(1.0, vec![])).is_ok());
        assert_eq!(tr.step(&frame(0.5, vec![])), Err(TrackerError::NonMonotonicTime { previous: 1.0, t: 0.5 }));
    }

    #[test]
    fn empty_frame_only_predicts() {
        let mut tr = confirmed_tracker(0.5);
        let before = tr.tracks()[0].clone();
        let out = tr.step(&frame(0.1, vec![])).unwrap();
        let after = &tr.tracks()[0];
        assert!(out.is_empty());
        assert_eq!(after.misses, 1);
        assert_eq!(after.status, TrackStatus::Lost);
        assert_eq!(after.last_update, before.last_update);
        assert!(after.cov[(W1, W1)] > before.cov[(W1, W1)]);
    }

    #[test]
    fn matched_detection_pulls_bearing() {
        let mut tr = confirmed_tracker(0.5);
        let prior = tr.tracks()[0].g_ref;
        let target = UnitBearing::from_azimuth_elevation(0.51, 0.0);
        let out = tr.step(&frame(0.1, vec![CameraDetection { bearing: target, ..det(0.0, 300.0, 0.9, 0.1) }])).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].bearing.angle_to(&target) < prior.angle_to(&target));
    }

    #[test]
    fn ids_increase_and_low_scores_never_spawn() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        tr.step(&frame(0.0, vec![det(0.0, 300.0, 0.3, 0.0)])).unwrap();
        assert!(tr.tracks().is_empty());
        tr.step(&frame(0.1, vec![det(0.0, 300.0, 0.9, 0.1), det(2.0, 300.0, 0.9, 0.1)])).unwrap();
        let ids: Vec<u64> = tr.tracks().iter().map(|t| t.id).collect();
        assert_eq!(ids, vec![1, 2]);
        tr.step(&frame(0.2, vec![])).unwrap();
        tr.step(&frame(0.3, vec![det(1.0, 300.0, 0.9, 0.3)])).unwrap();
        assert_eq!(tr.tracks()[0].id, 3);
    }

    #[test]
    fn degenerate_boxes_do_not_spawn() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        tr.step(&frame(0.0, vec![det(0.0, 1.0, 0.9, 0.0), det(1.0, 5000.0, 0.9, 0.0)])).unwrap();
        assert!(tr.tracks().is_empty());
    }

    #[test]
    fn lidar_return_sets_depth() {
        let mut tr = confirmed_tracker(0.5);
        let d0 = tr.tracks()[0].state.depth();
        let obs = LidarDepthObs { t: 0.1, azimuth: 0.5, depth: d0 + 0.2, spread: 0.02 };
        let f =
            FrameInput { t: 0.1, detections: vec![det(0.5, 300.0, 0.9, 0.1)], lidar_obs: vec![obs], sensor_pose: None };
        tr.step(&f).unwrap();
        let d1 = tr.tracks()[0].state.depth();
        assert!((d1 - (d0 + 0.2)).abs() < 0.05, "{d0} -> {d1}");
    }

    #[test]
    fn far_lidar_azimuth_is_ignored() {
        let mut tr = confirmed_tracker(0.5);
        let d0 = tr.tracks()[0].state.depth();
        let obs = LidarDepthObs { t: 0.1, azimuth: 1.5, depth: d0 + 0.2, spread: 0.02 };
        let f =
            FrameInput { t: 0.1, detections: vec![det(0.5, 300.0, 0.9, 0.1)], lidar_obs: vec![obs], sensor_pose: None };
        tr.step(&f).unwrap();
        assert!((tr.tracks()[0].state.depth() - d0).abs() < 0.05);
    }

    #[test]
    fn asynchronous_lidar_return_is_applied() {
        let mut tr = confirmed_tracker(-2.0);
        let d0 = tr.tracks()[0].state.depth();
        let t_prev = tr.last_time().unwrap();
        let obs = LidarDepthObs { t: t_prev + 0.01, azimuth: -2.0, depth: d0 + 0.2, spread: 0.02 };
        let f = FrameInput {
            t: t_prev + 1.0 / 30.0,
            detections: vec![det(-2.0, 300.0, 0.9, 0.1)],
            lidar_obs: vec![obs],
            sensor_pose: None,
        };
        tr.step(&f).unwrap();
        let d1 = tr.tracks()[0].state.depth();
        assert!(d1 > d0 + 0.15, "{d0} -> {d1}");
    }

    #[test]
    fn pose_moves_outputs() {
        let mut tr = confirmed_tracker(0.0);
        let pose = SensorPose {
            translation: [10.0, -2.0, 0.0],
            rotation: [std::f64::consts::FRAC_1_SQRT_2, 0.0, 0.0, std::f64::consts::FRAC_1_SQRT_2],
        };
        let f = FrameInput {
            t: 0.1,
            detections: vec![det(0.0, 300.0, 0.9, 0.1)],
            lidar_obs: vec![],
            sensor_pose: Some(pose),
        };
        let out = tr.step(&f).unwrap();
        let d = out[0].depth;
        assert!((out[0].planar[0] - 10.0).abs() < 1e-3);
        assert!((out[0].planar[1] - (-2.0 + d)).abs() < 1e-3);
        assert!((out[0].bearing.azimuth() - std::f64::consts::FRAC_PI_2).abs() < 1e-3);
    }

    #[test]
    fn config_errors_name_the_field() {
        let mut cfg = TrackerConfig::default();
        cfg.process.sigma_depth = -1.0;
        assert!(matches!(Tracker::new(cfg), Err(TrackerError::Config(s)) if s.contains("process.sigma_depth")));
        let mut cfg = TrackerConfig::default();
        cfg.association.tau_low = 0.9;
        assert!(matches!(Tracker::new(cfg), Err(TrackerError::Config(s)) if s.contains("tau_high")));
    }

    #[test]
    fn config_roundtrips_and_rejects_unknown_fields() {
        let cfg = TrackerConfig::default();
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<TrackerConfig>(&s).unwrap(), cfg);
        assert_eq!(serde_json::from_str::<TrackerConfig>("{}").unwrap(), cfg);
        assert!(serde_json::from_str::<TrackerConfig>(r#"{"association": {"chi3": 1}}"#).is_err());
    }

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_angle(std::f64::consts::PI), std::f64::consts::PI);
        assert!(
            (wrap_angle(-std::f64::consts::PI + 0.1 - std::f64::consts::TAU) - (-std::f64::consts::PI + 0.1)).abs()
                < 1e-12
        );
    }
}
