use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use s3kf_core::assignment::{solve_assignment, CostMatrix};
use s3kf_core::baseline::PixelTracker;
use s3kf_core::geometry::{exp_map, log_map, make_tangent_basis, TangentCoords, UnitBearing};
use s3kf_core::sim::dense_frames;
use s3kf_core::tracker::{Tracker, TrackerConfig, TrackingEngine};

fn geometry(c: &mut Criterion) {
    let g = UnitBearing::from_azimuth_elevation(0.7, -0.2);
    let basis = make_tangent_basis(&g);
    let w = TangentCoords::new(0.3, -1.1);
    c.bench_function("exp_log_roundtrip", |b| {
        b.iter(|| {
            let p = exp_map(&g, &basis, black_box(&w)).unwrap();
            log_map(&g, &basis, &p).unwrap()
        })
    });
}

fn assignment(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rows: Vec<Vec<f64>> = (0..20).map(|_| (0..20).map(|_| rng.gen_range(0.0..10.0)).collect()).collect();
    let cost = CostMatrix::from_rows(&rows);
    c.bench_function("hungarian_20x20", |b| b.iter(|| solve_assignment(black_box(&cost))));
}

fn bench_step<E: TrackingEngine + Clone>(c: &mut Criterion, mut engine: E) {
    let frames = dense_frames(10, 20, 120, 7);
    let (warm, rest) = frames.split_at(90);
    for f in warm {
        engine.step(f).unwrap();
    }
    c.bench_function(&format!("step_10x20_{}", engine.name()), |b| {
        b.iter_batched(|| engine.clone(), |mut e| e.step(black_box(&rest[0])).unwrap(), BatchSize::SmallInput)
    });
}

/// One step with 10 live tracks and 20 detections.
fn tracker_step(c: &mut Criterion) {
    bench_step(c, Tracker::new(TrackerConfig::default()).unwrap());
    bench_step(c, PixelTracker::new(TrackerConfig::default()).unwrap());
}

criterion_group!(benches, geometry, assignment, tracker_step);
criterion_main!(benches);
