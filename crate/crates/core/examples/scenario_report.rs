//! Runs both engines over the shipped scenarios and prints metrics.

use s3kf_core::metrics::{evaluate, DEFAULT_MATCH_RADIUS};
use s3kf_core::pipeline::{config_for, run_engine, EngineKind};
use s3kf_core::sim::{canned, simulate, CANNED};
use s3kf_core::tracker::TrackerConfig;

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(42);
    for name in CANNED {
        let scenario = canned(name).expect("shipped scenario parses");
        let run = simulate(&scenario, seed);
        let cfg = config_for(&scenario, &TrackerConfig::default());
        for kind in [EngineKind::Spherical, EngineKind::Pixel] {
            let mut engine = kind.build(cfg).expect("default config is valid");
            let start = std::time::Instant::now();
            let (outputs, _) = run_engine(engine.as_mut(), &run.frames).expect("frames are time-ordered");
            let elapsed = start.elapsed();
            let (report, _) = evaluate(&outputs, &run.gt, DEFAULT_MATCH_RADIUS).expect("tracks were produced");
            println!(
                "{name} [{}]: max_id_total {} switches {} ({:.0?})",
                kind.name(),
                report.max_id_total,
                report.total_switches,
                elapsed
            );
            for t in &report.targets {
                println!(
                    "  target {}: rmse {:?} coverage {:.3} after-first {:.3} switches {}",
                    t.target_id, t.rmse, t.coverage, t.coverage_after_first_match, t.switches
                );
            }
        }
    }
}
