//! Ground truth and synthetic sensor streams for a scenario.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::scenario::{wrap_pi, Scenario, SimNoise, TargetSpec};
use crate::geometry::{exp_map, make_tangent_basis, TangentCoords, UnitBearing};
use crate::measurement::{CameraDetection, CameraModel, LidarDepthObs};
use crate::tracker::FrameInput;

/// Ground-truth position of one target at one camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtRecord {
    pub t: f64,
    pub target_id: u64,
    /// Meters, sensor frame.
    pub position: [f64; 3],
}

/// Every target at every camera frame, frame-major.
pub type GroundTruthLog = Vec<GtRecord>;

/// Rendered sensor streams of one scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    pub gt: GroundTruthLog,
    pub frames: Vec<FrameInput>,
}

const LIDAR_STREAM_BIT: u64 = 1 << 63;

/// Independent generator for one stream of a run; draws do not depend on
/// how many values other streams consumed.
fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn generate_ground_truth(scenario: &Scenario) -> GroundTruthLog {
    let mut out = Vec::with_capacity(scenario.frame_count() * scenario.targets.len());
    for k in 0..scenario.frame_count() {
        let t = scenario.frame_time(k);
        for (i, target) in scenario.targets.iter().enumerate() {
            out.push(GtRecord { t, target_id: i as u64, position: target.position_at(t).into() });
        }
    }
    out
}

/// Angle subtended by a body of `height` meters at range `range`.
pub fn angular_extent(height: f64, range: f64) -> f64 {
    2.0 * (height / (2.0 * range)).atan()
}

/// Detections of one camera frame.
///
/// Every target consumes the same number of draws whether or not it is
/// detected, so toggling dropout or occlusion does not reshuffle the noise
/// of the other targets.
pub fn render_camera_frame(
    targets: &[(TargetSpec, Vector3<f64>)],
    t: f64,
    cam: &CameraModel,
    noise: &SimNoise,
    occlusion_angle: f64,
    rng: &mut impl Rng,
) -> Vec<CameraDetection> {
    let mut out = Vec::with_capacity(targets.len());
    let sigma_dir = noise.sigma_px / cam.gain();
    for (i, (spec, p)) in targets.iter().enumerate() {
        let u_drop: f64 = rng.gen();
        let (n1, n2, n_box, n_aspect, n_score) = (normal(rng), normal(rng), normal(rng), normal(rng), normal(rng));

        let Ok(g) = UnitBearing::new(*p) else { continue };
        let range = p.norm();
        let occluded = targets.iter().enumerate().any(|(j, (_, q))| {
            j != i && q.norm() < range && UnitBearing::new(*q).is_ok_and(|h| h.angle_to(&g) < occlusion_angle)
        });
        if u_drop < noise.dropout_prob || occluded {
            continue;
        }
        let bearing = if sigma_dir > 0.0 {
            exp_map(&g, &make_tangent_basis(&g), &TangentCoords::new(sigma_dir * n1, sigma_dir * n2)).unwrap_or(g)
        } else {
            g
        };
        let sd = &noise.score_distribution;
        out.push(CameraDetection {
            t,
            bearing,
            aspect: (spec.aspect + noise.sigma_aspect * n_aspect).max(1e-3),
            box_h: cam.rad_to_px(angular_extent(spec.height, range)) + noise.sigma_px * n_box,
            score: (sd.mean + sd.std * n_score).clamp(sd.min, sd.max),
        });
    }

    if noise.false_positive_rate > 0.0 {
        let n = Poisson::new(noise.false_positive_rate).map_or(0.0, |d| d.sample(rng)) as usize;
        let [lo, hi] = noise.false_positive_score;
        for _ in 0..n {
            let z: f64 = rng.gen_range(-1.0..=1.0);
            let az: f64 = rng.gen_range(-PI..PI);
            let r = (1.0 - z * z).max(0.0).sqrt();
            let bearing = UnitBearing::from_xyz(r * az.cos(), r * az.sin(), z).expect("unit vector");
            out.push(CameraDetection {
                t,
                bearing,
                aspect: rng.gen_range(0.3..0.6),
                box_h: rng.gen_range(40.0..300.0),
                score: if hi > lo { rng.gen_range(lo..hi) } else { lo },
            });
        }
    }
    out
}

/// Times in `[t0, t1]` at which a sweep starting at azimuth 0 at `t = 0` and
/// turning `2 pi` per `period` points at the target.
///
/// The azimuth gap is bracketed on a grid a sixteenth of a sweep wide and
/// each crossing refined by bisection.
pub fn sweep_crossings(target: &TargetSpec, period: f64, t0: f64, t1: f64) -> Vec<f64> {
    let psi = |t: f64| target.unwrapped_azimuth(t) - TAU * t / period;
    let h = period / 16.0;
    let steps = ((t1 - t0) / h).ceil().max(1.0) as usize;
    let mut out = Vec::new();
    let mut a = t0;
    let mut pa = psi(a);
    for s in 1..=steps {
        let b = (t0 + s as f64 * h).min(t1);
        let pb = psi(b);
        // Levels 2 pi m in (pb, pa], or (pa, pb] for an overtaking target.
        let (lo, hi) = if pb <= pa { (pb, pa) } else { (pa, pb) };
        let m_lo = (lo / TAU).floor() as i64 + 1;
        let m_hi = (hi / TAU).floor() as i64;
        for m in m_lo..=m_hi {
            let level = TAU * m as f64;
            let (mut l, mut r) = (a, b);
            let below_at_l = psi(l) < level;
            for _ in 0..200 {
                if r - l <= 1e-12 {
                    break;
                }
                let mid = 0.5 * (l + r);
                if (psi(mid) < level) == below_at_l {
                    l = mid;
                } else {
                    r = mid;
                }
            }
            let t = if psi(a) == level { a } else { 0.5 * (l + r) };
            out.push(t);
        }
        a = b;
        pa = pb;
    }
    out
}

/// LiDAR returns of every target over `[t0, t1]`, sorted by time.
pub fn render_lidar_sweep(scenario: &Scenario, t0: f64, t1: f64, seed: u64) -> Vec<LidarDepthObs> {
    let mut out = Vec::new();
    let sigma = scenario.noise.sigma_depth;
    for (i, target) in scenario.targets.iter().enumerate() {
        for t in sweep_crossings(target, scenario.sweep_period, t0, t1) {
            let sweep = (t / scenario.sweep_period).floor().max(0.0) as u64;
            let mut rng = stream_rng(seed, LIDAR_STREAM_BIT | (sweep << 20) | i as u64);
            let p = target.position_at(t);
            out.push(LidarDepthObs {
                t,
                azimuth: wrap_pi(target.unwrapped_azimuth(t)),
                depth: p.norm() + sigma * normal(&mut rng),
                spread: sigma,
            });
        }
    }
    out.sort_by(|a, b| a.t.total_cmp(&b.t));
    out
}

/// Renders a full run: ground truth plus one [`FrameInput`] per camera frame.
/// LiDAR returns are grouped with the first frame at or after their timestamp.
pub fn simulate(scenario: &Scenario, seed: u64) -> SimRun {
    let cam = CameraModel::new(scenario.img_h);
    let n = scenario.frame_count();
    let gt = generate_ground_truth(scenario);
    let t_end = if n == 0 { 0.0 } else { scenario.frame_time(n - 1) };
    let lidar = render_lidar_sweep(scenario, 0.0, t_end, seed);

    let mut frames = Vec::with_capacity(n);
    let mut next_obs = 0;
    for k in 0..n {
        let t = scenario.frame_time(k);
        let targets: Vec<(TargetSpec, Vector3<f64>)> = scenario
            .targets
            .iter()
            .enumerate()
            .map(|(i, s)| (*s, Vector3::from(gt[k * scenario.targets.len() + i].position)))
            .collect();
        let mut rng = stream_rng(seed, k as u64);
        let detections = render_camera_frame(&targets, t, &cam, &scenario.noise, scenario.occlusion_angle, &mut rng);
        let start = next_obs;
        while next_obs < lidar.len() && lidar[next_obs].t <= t {
            next_obs += 1;
        }
        frames.push(FrameInput { t, detections, lidar_obs: lidar[start..next_obs].to_vec(), sensor_pose: None });
    }
    SimRun { gt, frames }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scenario::{Motion, ScoreDistribution};

    fn spec(motion: Motion, pos: [f64; 3], speed: f64) -> TargetSpec {
        TargetSpec { position: pos, motion, speed, height: 1.7, aspect: 0.4 }
    }

    fn scenario(targets: Vec<TargetSpec>, noise: SimNoise) -> Scenario {
        Scenario {
            name: "t".into(),
            duration: 3.0,
            camera_rate: 30.0,
            sweep_period: 1.0,
            img_h: 1000.0,
            targets,
            noise,
            occlusion_angle: 0.08,
            notes: String::new(),
        }
    }

    #[test]
    fn noiseless_detection_is_exact() {
        let s = spec(Motion::Static, [3.0, 1.0, -0.2], 0.0);
        let p = Vector3::from(s.position);
        let cam = CameraModel::default();
        let dets = render_camera_frame(&[(s, p)], 0.0, &cam, &SimNoise::noiseless(), 0.08, &mut stream_rng(1, 0));
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].bearing, UnitBearing::new(p).unwrap());
        assert_eq!(dets[0].box_h, cam.rad_to_px(angular_extent(1.7, p.norm())));
        assert_eq!(dets[0].score, 0.9);
    }

    #[test]
    fn nearer_target_occludes_farther() {
        let near = spec(Motion::Static, [2.0, 0.0, 0.0], 0.0);
        let far = spec(Motion::Static, [5.0, 0.1, 0.0], 0.0);
        let targets = [(near, Vector3::from(near.position)), (far, Vector3::from(far.position))];
        let dets = render_camera_frame(
            &targets,
            0.0,
            &CameraModel::default(),
            &SimNoise::noiseless(),
            0.08,
            &mut stream_rng(1, 0),
        );
        assert_eq!(dets.len(), 1);
        assert!((dets[0].bearing.as_vector() - Vector3::x()).norm() < 1e-12);
    }

    #[test]
    fn full_dropout_empties_frame() {
        let s = spec(Motion::Static, [3.0, 0.0, 0.0], 0.0);
        let noise = SimNoise { dropout_prob: 1.0, ..SimNoise::default() };
        let dets = render_camera_frame(
            &[(s, Vector3::from(s.position))],
            0.0,
            &CameraModel::default(),
            &noise,
            0.08,
            &mut stream_rng(1, 0),
        );
        assert!(dets.is_empty());
    }

    #[test]
    fn false_positives_have_low_scores() {
        let noise = SimNoise { false_positive_rate: 5.0, ..SimNoise::default() };
        let dets = render_camera_frame(&[], 0.0, &CameraModel::default(), &noise, 0.08, &mut stream_rng(7, 3));
        assert!(!dets.is_empty());
        assert!(dets.iter().all(|d| d.score < 0.5 && d.score >= 0.1));
    }

    #[test]
    fn static_target_one_return_per_sweep() {
        let s = scenario(vec![spec(Motion::Static, [3.0, 0.0, 0.0], 0.0)], SimNoise::noiseless());
        let obs = render_lidar_sweep(&s, 0.0, 2.95, 1);
        assert_eq!(obs.iter().map(|o| o.t).collect::<Vec<_>>(), vec![0.0, 1.0, 2.0]);
        assert!(obs.iter().all(|o| o.depth == 3.0 && o.azimuth == 0.0));
    }

    #[test]
    fn quarter_azimuth_at_quarter_period() {
        let s = scenario(vec![spec(Motion::Static, [0.0, 4.0, 0.0], 0.0)], SimNoise::noiseless());
        let obs = render_lidar_sweep(&s, 0.0, 1.0, 1);
        assert_eq!(obs.len(), 1);
        assert!((obs[0].t - 0.25).abs() < 1e-10);
    }

    #[test]
    fn moving_target_crossing_matches_sweep() {
        let target = spec(Motion::CircleCcw, [0.0, -3.0, 0.0], 2.0);
        let s = scenario(vec![target], SimNoise::noiseless());
        let obs = render_lidar_sweep(&s, 0.0, 2.99, 1);
        assert!(obs.len() >= 2);
        for o in &obs {
            let sweep_az = wrap_pi(TAU * o.t);
            let p = target.position_at(o.t);
            assert!(wrap_pi(sweep_az - p.y.atan2(p.x)).abs() < 1e-6);
            assert!((o.azimuth - p.y.atan2(p.x)).abs() < 1e-9);
        }
    }

    #[test]
    fn simulation_is_deterministic_and_complete() {
        let noise = SimNoise {
            dropout_prob: 0.1,
            false_positive_rate: 0.5,
            score_distribution: ScoreDistribution::default(),
            ..SimNoise::default()
        };
        let s = scenario(
            vec![spec(Motion::CircleCw, [4.0, 0.0, 0.0], 0.8), spec(Motion::Static, [0.0, 3.0, 0.0], 0.0)],
            noise,
        );
        let a = simulate(&s, 42);
        let b = simulate(&s, 42);
        assert_eq!(a, b);
        assert_ne!(a, simulate(&s, 43));
        assert_eq!(a.frames.len(), 90);
        assert_eq!(a.gt.len(), 180);
        let n_lidar: usize = a.frames.iter().map(|f| f.lidar_obs.len()).sum();
        assert_eq!(n_lidar, render_lidar_sweep(&s, 0.0, s.frame_time(89), 42).len());
        for f in &a.frames {
            assert!(f.lidar_obs.iter().all(|o| o.t <= f.t && o.t > f.t - 1.0 / 30.0 - 1e-12));
        }
    }
}
