//! Dense synthetic frame streams for latency measurement.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::render::simulate;
use super::scenario::{Motion, Scenario, SimNoise, TargetSpec};
use crate::geometry::UnitBearing;
use crate::measurement::CameraDetection;
use crate::tracker::FrameInput;

/// `targets` walkers evenly spread in azimuth, each detected in every frame,
/// padded with uniform clutter to exactly `detections` detections per frame.
pub fn dense_workload(targets: usize, detections: usize, frames: usize, seed: u64) -> Scenario {
    assert!(detections >= targets, "need at least one detection per target");
    let specs = (0..targets)
        .map(|i| {
            let az = TAU * i as f64 / targets.max(1) as f64 + 0.1;
            let r = 3.0 + (i % 4) as f64;
            TargetSpec {
                position: [r * az.cos(), r * az.sin(), -0.1],
                motion: Motion::CircleCcw,
                // same angular rate for all, so nobody overtakes
                speed: 0.2 * r,
                height: 1.7,
                aspect: 0.4,
            }
        })
        .collect();
    Scenario {
        name: format!("dense_{targets}x{detections}_s{seed}"),
        duration: frames as f64 / 30.0,
        camera_rate: 30.0,
        sweep_period: 1.0,
        img_h: 1000.0,
        targets: specs,
        noise: SimNoise::default(),
        occlusion_angle: 0.0,
        notes: String::new(),
    }
}

/// Frames of [`dense_workload`] with clutter filling each frame up to
/// `detections`.
pub fn dense_frames(targets: usize, detections: usize, frames: usize, seed: u64) -> Vec<FrameInput> {
    let scenario = dense_workload(targets, detections, frames, seed);
    let mut run = simulate(&scenario, seed).frames;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_edc1);
    for f in &mut run {
        while f.detections.len() < detections {
            let az = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let el = rng.gen_range(-0.3..0.1);
            f.detections.push(CameraDetection {
                t: f.t,
                bearing: UnitBearing::from_azimuth_elevation(az, el),
                aspect: rng.gen_range(0.3..0.6),
                box_h: rng.gen_range(60.0..400.0),
                score: rng.gen_range(0.1..0.9),
            });
        }
    }
    run
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_frame_has_exact_detection_count() {
        let frames = dense_frames(10, 20, 60, 1);
        assert_eq!(frames.len(), 60);
        assert!(frames.iter().all(|f| f.detections.len() == 20));
        assert!(frames.iter().any(|f| !f.lidar_obs.is_empty()));
    }

    #[test]
    fn deterministic() {
        assert_eq!(dense_frames(4, 6, 30, 9), dense_frames(4, 6, 30, 9));
    }
}
