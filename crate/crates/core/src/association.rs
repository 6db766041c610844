//! Gating and association costs between predicted tracks and detections.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::assignment::CostMatrix;
use crate::filter::{innovation, FilterError};
use crate::geometry::{exp_map, log_map, make_tangent_basis, TangentBasis, TangentCoords, UnitBearing};
use crate::measurement::{image_measurement, CameraDetection, CameraModel, MeasurementNoise, MeasurementPacket};
use crate::state::TrackHypothesis;

/// Association thresholds and cost weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssociationConfig {
    /// Gate on the 4-dof image innovation (95% chi-square quantile).
    pub chi2_img: f64,
    /// Gate on the LiDAR depth consistency test (95% chi-square quantile, 2 dof).
    pub chi2_lidar: f64,
    pub tau_high: f64,
    pub tau_low: f64,
    pub lambda_maha: f64,
    pub lambda_iou: f64,
    pub lambda_depth: f64,
    /// Depth difference (m) that costs `lambda_depth`.
    pub depth_gate_sigma: f64,
    /// Consecutive hits before a tentative track is confirmed.
    pub confirm_hits: u32,
    /// Frames a lost track is kept before deletion.
    pub max_age_frames: u32,
    /// LiDAR azimuth gate half-width, in standard deviations of the predicted azimuth.
    pub lidar_gate_sigmas: f64,
    /// Floor on the azimuth standard deviation used by the LiDAR gate, radians.
    pub lidar_gate_floor: f64,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        Self {
            chi2_img: 9.488,
            chi2_lidar: 5.991,
            tau_high: 0.6,
            tau_low: 0.1,
            lambda_maha: 1.0,
            lambda_iou: 1.0,
            lambda_depth: 0.5,
            depth_gate_sigma: 0.5,
            confirm_hits: 3,
            max_age_frames: 30,
            lidar_gate_sigmas: 3.0,
            lidar_gate_floor: 0.02,
        }
    }
}

impl AssociationConfig {
    /// Checks the documented parameter ranges, naming the first offending field.
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("chi2_img", self.chi2_img),
            ("chi2_lidar", self.chi2_lidar),
            ("depth_gate_sigma", self.depth_gate_sigma),
            ("lidar_gate_sigmas", self.lidar_gate_sigmas),
            ("lidar_gate_floor", self.lidar_gate_floor),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(format!("association.{name} must be > 0, got {v}"));
            }
        }
        for (name, v) in [
            ("lambda_maha", self.lambda_maha),
            ("lambda_iou", self.lambda_iou),
            ("lambda_depth", self.lambda_depth),
            ("tau_low", self.tau_low),
        ] {
            if !(v >= 0.0) {
                return Err(format!("association.{name} must be >= 0, got {v}"));
            }
        }
        if !(self.tau_high >= self.tau_low) {
            return Err(format!("association.tau_high ({}) must be >= tau_low ({})", self.tau_high, self.tau_low));
        }
        if self.confirm_hits == 0 {
            return Err("association.confirm_hits must be >= 1".into());
        }
        Ok(())
    }
}

/// Squared Mahalanobis distance of a packet's innovation against a track.
pub fn mahalanobis_sq(pkt: &MeasurementPacket, track: &TrackHypothesis) -> Result<f64, FilterError> {
    Ok(innovation(&track.state.0, &track.cov, pkt)?.mahalanobis_sq())
}

/// Angular bounding box centred on a bearing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularBox {
    pub center: UnitBearing,
    /// Horizontal extent, radians.
    pub width: f64,
    /// Vertical extent, radians.
    pub height: f64,
}

impl AngularBox {
    /// Box of a detection (or predicted track) with the given aspect and pixel height.
    pub fn from_pixels(center: UnitBearing, aspect: f64, box_h: f64, cam: &CameraModel) -> Self {
        let height = cam.px_to_rad(box_h);
        Self { center, width: aspect * height, height }
    }
}

/// East/up frame at `m`, falling back to the canonical basis near the poles.
fn east_up_basis(m: &UnitBearing) -> TangentBasis {
    let v = m.as_vector();
    let east = Vector3::z().cross(v);
    if east.norm() < 1e-6 {
        return make_tangent_basis(m);
    }
    let b1 = east.normalize();
    TangentBasis { b1, b2: v.cross(&b1) }
}

/// IoU of two angular boxes, evaluated as axis-aligned rectangles in the
/// east/up tangent plane at the spherical midpoint of their centres.
pub fn spherical_iou(a: &AngularBox, b: &AngularBox) -> f64 {
    let sum = a.center.as_vector() + b.center.as_vector();
    let Ok(mid) = UnitBearing::new(sum) else {
        return 0.0;
    };
    let basis = east_up_basis(&mid);
    let (Ok(ca), Ok(cb)) = (log_map(&mid, &basis, &a.center), log_map(&mid, &basis, &b.center)) else {
        return 0.0;
    };
    let overlap = |c1: f64, e1: f64, c2: f64, e2: f64| {
        let lo = (c1 - e1 / 2.0).max(c2 - e2 / 2.0);
        let hi = (c1 + e1 / 2.0).min(c2 + e2 / 2.0);
        (hi - lo).max(0.0)
    };
    let inter = overlap(ca.0.x, a.width, cb.0.x, b.width) * overlap(ca.0.y, a.height, cb.0.y, b.height);
    let union = a.width * a.height + b.width * b.height - inter;
    if union > 0.0 {
        (inter / union).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Predicted bearing of a track: its chart origin displaced by the predicted offset.
pub fn predicted_bearing(track: &TrackHypothesis) -> UnitBearing {
    exp_map(&track.g_ref, &track.basis, &TangentCoords(track.state.w())).unwrap_or(track.g_ref)
}

/// Association costs of a set of tracks against a set of detections.
#[derive(Debug, Clone)]
pub struct CostGrid {
    pub cost: CostMatrix,
    /// Image packets, row-major, for every pair whose packet could be formed.
    pub packets: Vec<Option<MeasurementPacket>>,
}

impl CostGrid {
    pub fn packet(&self, i: usize, j: usize) -> Option<&MeasurementPacket> {
        self.packets[i * self.cost.cols() + j].as_ref()
    }

    pub fn take_packet(&mut self, i: usize, j: usize) -> Option<MeasurementPacket> {
        let cols = self.cost.cols();
        self.packets[i * cols + j].take()
    }
}

/// Gated composite costs
/// `lambda_maha D^2 / chi2 + lambda_iou (1 - sIoU) + lambda_depth |d - d_det| / sigma`.
///
/// Entries whose image innovation exceeds `chi2_img`, or whose packet cannot
/// be formed (antipodal bearing, degenerate box), are infeasible.
pub fn build_cost_matrix(
    tracks: &[&TrackHypothesis],
    detections: &[&CameraDetection],
    cam: &CameraModel,
    noise: &MeasurementNoise,
    cfg: &AssociationConfig,
) -> CostGrid {
    let (n, m) = (tracks.len(), detections.len());
    let mut cost = CostMatrix::new(n, m);
    let mut packets = vec![None; n * m];
    for (i, track) in tracks.iter().enumerate() {
        let track_box =
            AngularBox::from_pixels(predicted_bearing(track), track.state.aspect(), track.state.box_h(), cam);
        for (j, det) in detections.iter().enumerate() {
            let Ok(pkt) = image_measurement(det, track, cam, noise) else {
                continue;
            };
            let Ok(d2) = mahalanobis_sq(&pkt, track) else {
                continue;
            };
            if d2 > cfg.chi2_img {
                continue;
            }
            let mut c = cfg.lambda_maha * d2 / cfg.chi2_img;
            if cfg.lambda_iou > 0.0 {
                let det_box = AngularBox::from_pixels(det.bearing, det.aspect, det.box_h, cam);
                c += cfg.lambda_iou * (1.0 - spherical_iou(&track_box, &det_box));
            }
            if cfg.lambda_depth > 0.0 {
                c += cfg.lambda_depth * (track.state.depth() - pkt.z[3]).abs() / cfg.depth_gate_sigma;
            }
            cost.set(i, j, Some(c));
            packets[i * m + j] = Some(pkt);
        }
    }
    CostGrid { cost, packets }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::solve_assignment;
    use crate::measurement::selector;
    use crate::state::{StateCovariance, TrackState, ASPECT, BOX_H, DEPTH};
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn track_at(g: UnitBearing) -> TrackHypothesis {
        let mut s = TrackState::zeros();
        s.0[ASPECT] = 0.4;
        s.0[BOX_H] = 300.0;
        s.0[DEPTH] = CameraModel::default().depth_from_box(300.0, 1.7);
        let mut cov = StateCovariance::identity() * 1e-4;
        cov[(DEPTH, DEPTH)] = 0.04;
        TrackHypothesis::new(1, g, s, cov, 0.0)
    }

    fn det_at(g: UnitBearing, box_h: f64) -> CameraDetection {
        CameraDetection { t: 0.0, bearing: g, aspect: 0.4, box_h, score: 0.9 }
    }

    #[test]
    fn perfect_innovation_has_zero_distance() {
        let t = track_at(UnitBearing::from_xyz(1.0, 0.0, 0.0).unwrap());
        let pkt = image_measurement(&det_at(t.g_ref, 300.0), &t, &CameraModel::default(), &MeasurementNoise::default())
            .unwrap();
        assert!(mahalanobis_sq(&pkt, &t).unwrap() < 1e-20);
    }

    #[test]
    fn identity_innovation_three_four_five() {
        let mut t = track_at(UnitBearing::from_xyz(1.0, 0.0, 0.0).unwrap());
        t.cov = StateCovariance::zeros();
        let pkt = MeasurementPacket {
            t: 0.0,
            z: DVector::from_vec(vec![3.0, 4.0]),
            h: selector(&[0, 1]),
            r: DMatrix::identity(2, 2),
            modality: crate::measurement::Modality::Image,
            box_height: None,
        };
        assert!((mahalanobis_sq(&pkt, &t).unwrap() - 25.0).abs() < 1e-12);
    }

    #[test]
    fn identical_boxes_have_unit_iou() {
        let b = AngularBox { center: UnitBearing::from_azimuth_elevation(1.0, 0.2), width: 0.1, height: 0.3 };
        assert!((spherical_iou(&b, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn distant_boxes_do_not_overlap() {
        let a = AngularBox { center: UnitBearing::from_azimuth_elevation(0.0, 0.0), width: 0.1, height: 0.1 };
        let b = AngularBox { center: UnitBearing::from_azimuth_elevation(0.5, 0.0), ..a };
        assert_eq!(spherical_iou(&a, &b), 0.0);
        let anti = AngularBox { center: UnitBearing::from_azimuth_elevation(std::f64::consts::PI, 0.0), ..a };
        assert_eq!(spherical_iou(&a, &anti), 0.0);
    }

    #[test]
    fn half_width_shift_gives_one_third() {
        let a = AngularBox { center: UnitBearing::from_azimuth_elevation(3.1, 0.0), width: 0.1, height: 0.25 };
        let b = AngularBox { center: UnitBearing::from_azimuth_elevation(3.1 + 0.05, 0.0), ..a };
        assert!((spherical_iou(&a, &b) - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn iou_is_seam_free() {
        let a = AngularBox {
            center: UnitBearing::from_azimuth_elevation(std::f64::consts::PI - 0.01, 0.0),
            width: 0.1,
            height: 0.2,
        };
        let b = AngularBox { center: UnitBearing::from_azimuth_elevation(-std::f64::consts::PI + 0.01, 0.0), ..a };
        assert!((spherical_iou(&a, &b) - 2.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn exact_detection_costs_nothing() {
        let t = track_at(UnitBearing::from_xyz(0.6, 0.8, 0.0).unwrap());
        let d = det_at(t.g_ref, 300.0);
        let grid = build_cost_matrix(
            &[&t],
            &[&d],
            &CameraModel::default(),
            &MeasurementNoise::default(),
            &AssociationConfig::default(),
        );
        assert!(grid.cost.get(0, 0).unwrap().abs() < 1e-9);
        assert!(grid.packet(0, 0).is_some());
    }

    #[test]
    fn gate_dominates_iou() {
        let t = track_at(UnitBearing::from_xyz(0.6, 0.8, 0.0).unwrap());
        // Same box, but a bearing offset far outside the predicted spread.
        let g = exp_map(&t.g_ref, &t.basis, &TangentCoords::new(0.2, 0.0)).unwrap();
        let d = det_at(g, 300.0);
        let cfg = AssociationConfig { lambda_iou: 100.0, ..Default::default() };
        let grid = build_cost_matrix(&[&t], &[&d], &CameraModel::default(), &MeasurementNoise::default(), &cfg);
        assert!(!grid.cost.is_feasible(0, 0));
    }

    #[test]
    fn config_validation_names_field() {
        let cfg = AssociationConfig { tau_high: 0.05, ..Default::default() };
        assert!(cfg.validate().unwrap_err().contains("tau_high"));
        let cfg = AssociationConfig { chi2_img: 0.0, ..Default::default() };
        assert!(cfg.validate().unwrap_err().contains("chi2_img"));
        assert!(AssociationConfig::default().validate().is_ok());
    }

    proptest! {
        // With only the Mahalanobis term, costs order pairs exactly as D^2 does.
        #[test]
        fn prop_pure_mahalanobis_ranking(offsets in prop::collection::vec((-0.004f64..0.004, -0.004f64..0.004, 250.0f64..350.0), 2..6)) {
            let t = track_at(UnitBearing::from_azimuth_elevation(0.3, 0.1));
            let cam = CameraModel::default();
            let noise = MeasurementNoise::default();
            let dets: Vec<_> = offsets.iter().map(|&(a, b, h)| {
                det_at(exp_map(&t.g_ref, &t.basis, &TangentCoords::new(a, b)).unwrap(), h)
            }).collect();
            let refs: Vec<_> = dets.iter().collect();
            let cfg = AssociationConfig { lambda_iou: 0.0, lambda_depth: 0.0, chi2_img: 1e9, ..Default::default() };
            let grid = build_cost_matrix(&[&t], &refs, &cam, &noise, &cfg);
            let d2: Vec<f64> = dets.iter().map(|d| mahalanobis_sq(&image_measurement(d, &t, &cam, &noise).unwrap(), &t).unwrap()).collect();
            for a in 0..dets.len() {
                for b in 0..dets.len() {
                    let (ca, cb) = (grid.cost.get(0, a).unwrap(), grid.cost.get(0, b).unwrap());
                    prop_assert_eq!(ca < cb, d2[a] < d2[b]);
                }
            }
            // And the assignment picks the D^2 minimiser.
            let best = (0..dets.len()).min_by(|&a, &b| d2[a].total_cmp(&d2[b])).unwrap();
            prop_assert_eq!(solve_assignment(&grid.cost).pairs, vec![(0, best)]);
        }

        #[test]
        fn prop_mahalanobis_reparameterisation_invariant(
            scale in prop::collection::vec(0.1f64..10.0, 4),
            mix in -0.5f64..0.5,
            off in (-0.01f64..0.01, -0.01f64..0.01),
        ) {
            let t = track_at(UnitBearing::from_azimuth_elevation(-1.2, 0.3));
            let g = exp_map(&t.g_ref, &t.basis, &TangentCoords::new(off.0, off.1)).unwrap();
            let pkt = image_measurement(&det_at(g, 280.0), &t, &CameraModel::default(), &MeasurementNoise::default()).unwrap();
            let mut a = DMatrix::from_diagonal(&DVector::from_vec(scale));
            a[(0, 1)] = mix;
            let transformed = MeasurementPacket {
                z: &a * &pkt.z,
                h: crate::measurement::ObservationMatrix::from_fn(4, |i, j| (&a * DMatrix::from_fn(4, 10, |r, c| pkt.h[(r, c)]))[(i, j)]),
                r: &a * &pkt.r * a.transpose(),
                ..pkt.clone()
            };
            let d_a = mahalanobis_sq(&pkt, &t).unwrap();
            let d_b = mahalanobis_sq(&transformed, &t).unwrap();
            prop_assert!((d_a - d_b).abs() <= 1e-8 * d_a.max(1.0));
        }
    }
}
