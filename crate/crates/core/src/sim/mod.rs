//! Deterministic panoramic scenes: ground truth, camera detections, LiDAR returns.

mod render;
mod scenario;
mod workload;

pub use render::{
    angular_extent, generate_ground_truth, render_camera_frame, render_lidar_sweep, simulate, sweep_crossings,
    GroundTruthLog, GtRecord, SimRun,
};
pub use scenario::{wrap_pi, Motion, Scenario, ScoreDistribution, SimNoise, TargetSpec};
pub use workload::{dense_frames, dense_workload};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("unknown canned scenario {0:?}")]
    UnknownScenario(String),
}

/// Names of the scenarios shipped with the crate.
pub const CANNED: [&str; 5] = ["seq1_static", "seq2_cw", "seq3_ccw", "seq4_mixed_occlusion", "seq5_radial_fast"];

/// The four moving-target scenarios.
pub const DYNAMIC: [&str; 4] = ["seq2_cw", "seq3_ccw", "seq4_mixed_occlusion", "seq5_radial_fast"];

/// The scenario whose targets cross the azimuth seam.
pub const SEAM_SCENARIO: &str = "seq2_cw";

/// JSON source of a shipped scenario.
pub fn canned_source(name: &str) -> Option<&'static str> {
    Some(match name {
        "seq1_static" => include_str!("../../scenarios/seq1_static.json"),
        "seq2_cw" => include_str!("../../scenarios/seq2_cw.json"),
        "seq3_ccw" => include_str!("../../scenarios/seq3_ccw.json"),
        "seq4_mixed_occlusion" => include_str!("../../scenarios/seq4_mixed_occlusion.json"),
        "seq5_radial_fast" => include_str!("../../scenarios/seq5_radial_fast.json"),
        _ => return None,
    })
}

pub fn canned(name: &str) -> Result<Scenario, SimError> {
    Scenario::from_json(canned_source(name).ok_or_else(|| SimError::UnknownScenario(name.into()))?)
}
