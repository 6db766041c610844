//! Planar accuracy and identity metrics against ground truth.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::GtRecord;
use crate::tracker::TrackOutput;

pub const DEFAULT_MATCH_RADIUS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("{0} log is empty")]
    EmptyLog(&'static str),
    #[error("target {0} was never matched")]
    NoMatches(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub target_id: u64,
    pub track_id: u64,
    /// Horizontal distance, meters.
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMatch {
    pub t: f64,
    pub pairs: Vec<MatchPair>,
}

/// Per-frame assignment of estimates to ground-truth targets.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchLog {
    pub frames: Vec<FrameMatch>,
    /// Every ground-truth target id, with its number of frames.
    pub frames_per_target: BTreeMap<u64, usize>,
}

impl MatchLog {
    /// Matched `(t, track_id, error)` of one target, in time order.
    pub fn history(&self, target: u64) -> impl Iterator<Item = (f64, u64, f64)> + '_ {
        self.frames
            .iter()
            .filter_map(move |f| f.pairs.iter().find(|p| p.target_id == target).map(|p| (f.t, p.track_id, p.error)))
    }
}

fn planar_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Greedy nearest-neighbour matching per ground-truth frame.
///
/// Each ground-truth frame uses the estimate frame nearest in time, if it
/// lies within half a frame interval. Candidate pairs within `radius` are
/// accepted in order of (distance, target id, track id).
pub fn match_tracks_to_gt(tracks: &[TrackOutput], gt: &[GtRecord], radius: f64) -> Result<MatchLog, MetricsError> {
    if gt.is_empty() {
        return Err(MetricsError::EmptyLog("ground-truth"));
    }
    if tracks.is_empty() {
        return Err(MetricsError::EmptyLog("track"));
    }

    let mut gt_frames: Vec<(f64, Vec<&GtRecord>)> = Vec::new();
    let mut frames_per_target = BTreeMap::new();
    let mut sorted_gt: Vec<&GtRecord> = gt.iter().collect();
    sorted_gt.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.target_id.cmp(&b.target_id)));
    for r in sorted_gt {
        *frames_per_target.entry(r.target_id).or_insert(0) += 1;
        match gt_frames.last_mut() {
            Some((t, v)) if *t == r.t => v.push(r),
            _ => gt_frames.push((r.t, vec![r])),
        }
    }

    let mut est_frames: Vec<(f64, Vec<&TrackOutput>)> = Vec::new();
    let mut sorted_est: Vec<&TrackOutput> = tracks.iter().collect();
    sorted_est.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.id.cmp(&b.id)));
    for r in sorted_est {
        match est_frames.last_mut() {
            Some((t, v)) if *t == r.t => v.push(r),
            _ => est_frames.push((r.t, vec![r])),
        }
    }

    let mut gaps: Vec<f64> = gt_frames.windows(2).map(|w| w[1].0 - w[0].0).collect();
    gaps.sort_by(f64::total_cmp);
    let half = gaps.get(gaps.len() / 2).map_or(1e-9, |g| 0.5 * g);

    let mut frames = Vec::with_capacity(gt_frames.len());
    for (t, truths) in &gt_frames {
        let idx = est_frames.partition_point(|(te, _)| te < t);
        let nearest = [idx.checked_sub(1), Some(idx)]
            .into_iter()
            .flatten()
            .filter(|&i| i < est_frames.len())
            .min_by(|&a, &b| (est_frames[a].0 - t).abs().total_cmp(&(est_frames[b].0 - t).abs()));
        let estimates: &[&TrackOutput] = match nearest {
            Some(i) if (est_frames[i].0 - t).abs() <= half => &est_frames[i].1,
            _ => &[],
        };

        let mut candidates = Vec::new();
        for g in truths {
            let gp = [g.position[0], g.position[1]];
            for e in estimates {
                let d = planar_distance(gp, e.planar);
                if d <= radius {
                    candidates.push((d, g.target_id, e.id));
                }
            }
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let (mut used_gt, mut used_est) = (BTreeSet::new(), BTreeSet::new());
        let mut pairs = Vec::new();
        for (d, g, e) in candidates {
            if used_gt.contains(&g) || used_est.contains(&e) {
                continue;
            }
            used_gt.insert(g);
            used_est.insert(e);
            pairs.push(MatchPair { target_id: g, track_id: e, error: d });
        }
        pairs.sort_by_key(|p| p.target_id);
        frames.push(FrameMatch { t: *t, pairs });
    }
    Ok(MatchLog { frames, frames_per_target })
}

/// Root-mean-square planar error of one target over its matched frames.
pub fn target_rmse(log: &MatchLog, target: u64) -> Result<f64, MetricsError> {
    let (mut sum, mut n) = (0.0, 0usize);
    for (_, _, e) in log.history(target) {
        sum += e * e;
        n += 1;
    }
    if n == 0 {
        return Err(MetricsError::NoMatches(target));
    }
    Ok((sum / n as f64).sqrt())
}

/// Planar RMSE of every target; fails if any target was never matched.
pub fn planar_rmse(log: &MatchLog) -> Result<BTreeMap<u64, f64>, MetricsError> {
    log.frames_per_target.keys().map(|&g| Ok((g, target_rmse(log, g)?))).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchReport {
    pub per_target: BTreeMap<u64, u32>,
    pub total: u32,
    /// Distinct estimate ids ever matched to any target.
    pub max_id_total: usize,
}

/// Identity changes along each target's matched-id sequence.
pub fn identity_switches(log: &MatchLog) -> SwitchReport {
    let mut per_target = BTreeMap::new();
    let mut ids = BTreeSet::new();
    for &g in log.frames_per_target.keys() {
        let mut prev = None;
        let mut n = 0;
        for (_, id, _) in log.history(g) {
            ids.insert(id);
            if prev.is_some_and(|p| p != id) {
                n += 1;
            }
            prev = Some(id);
        }
        per_target.insert(g, n);
    }
    SwitchReport { total: per_target.values().sum(), per_target, max_id_total: ids.len() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetMetrics {
    pub target_id: u64,
    /// `None` when the target was never matched.
    pub rmse: Option<f64>,
    pub switches: u32,
    pub matched_frames: usize,
    pub total_frames: usize,
    /// Matched fraction of all frames.
    pub coverage: f64,
    /// Matched fraction of the frames from the first match onward.
    pub coverage_after_first_match: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub match_radius: f64,
    pub targets: Vec<TargetMetrics>,
    pub total_switches: u32,
    pub max_id_total: usize,
}

/// Full metric set for one run.
pub fn evaluate(tracks: &[TrackOutput], gt: &[GtRecord], radius: f64) -> Result<(EvalReport, MatchLog), MetricsError> {
    let log = match_tracks_to_gt(tracks, gt, radius)?;
    let switches = identity_switches(&log);
    let mut targets = Vec::new();
    for (&g, &total) in &log.frames_per_target {
        let frames_seen: Vec<bool> = log.frames.iter().map(|f| f.pairs.iter().any(|p| p.target_id == g)).collect();
        let matched = frames_seen.iter().filter(|m| **m).count();
        let after = frames_seen.iter().position(|m| *m).map_or(0, |i| frames_seen.len() - i);
        targets.push(TargetMetrics {
            target_id: g,
            rmse: target_rmse(&log, g).ok(),
            switches: switches.per_target[&g],
            matched_frames: matched,
            total_frames: total,
            coverage: matched as f64 / total as f64,
            coverage_after_first_match: if after == 0 { 0.0 } else { matched as f64 / after as f64 },
        });
    }
    Ok((
        EvalReport {
            match_radius: radius,
            targets,
            total_switches: switches.total,
            max_id_total: switches.max_id_total,
        },
        log,
    ))
}

/// Per-frame planar errors as CSV (`t,target_id,track_id,error_m`).
pub fn errors_csv(log: &MatchLog) -> String {
    let mut s = String::from("t,target_id,track_id,error_m\n");
    for f in &log.frames {
        for p in &f.pairs {
            s.push_str(&format!("{},{},{},{}\n", f.t, p.target_id, p.track_id, p.error));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::UnitBearing;
    use proptest::prelude::*;

    fn gt(t: f64, id: u64, x: f64, y: f64) -> GtRecord {
        GtRecord { t, target_id: id, position: [x, y, 0.0] }
    }

    fn est(t: f64, id: u64, x: f64, y: f64) -> TrackOutput {
        TrackOutput {
            t,
            id,
            bearing: UnitBearing::from_xyz(x, y, 0.0).unwrap_or(UnitBearing::from_azimuth_elevation(0.0, 0.0)),
            depth: x.hypot(y),
            planar: [x, y],
            cov_diag: vec![0.0; 10],
        }
    }

    #[test]
    fn identical_logs_match_at_zero() {
        let g: Vec<_> = (0..5).flat_map(|k| [gt(k as f64, 0, 1.0, 2.0), gt(k as f64, 1, -3.0, 0.5)]).collect();
        let e: Vec<_> = g.iter().map(|r| est(r.t, r.target_id + 10, r.position[0], r.position[1])).collect();
        let (rep, log) = evaluate(&e, &g, 1.0).unwrap();
        assert!(log.frames.iter().all(|f| f.pairs.len() == 2 && f.pairs.iter().all(|p| p.error == 0.0)));
        assert!(rep.targets.iter().all(|t| t.rmse == Some(0.0) && t.switches == 0 && t.coverage == 1.0));
        assert_eq!(rep.max_id_total, 2);
    }

    #[test]
    fn equidistant_estimate_goes_to_lower_target() {
        let g = [gt(0.0, 4, -1.0, 0.0), gt(0.0, 2, 1.0, 0.0)];
        let log = match_tracks_to_gt(&[est(0.0, 7, 0.0, 0.0)], &g, 1.5).unwrap();
        assert_eq!(log.frames[0].pairs, vec![MatchPair { target_id: 2, track_id: 7, error: 1.0 }]);
    }

    #[test]
    fn radius_gate() {
        let log = match_tracks_to_gt(&[est(0.0, 1, 1.5, 0.0)], &[gt(0.0, 0, 0.0, 0.0)], 1.0).unwrap();
        assert!(log.frames[0].pairs.is_empty());
        assert_eq!(planar_rmse(&log), Err(MetricsError::NoMatches(0)));
    }

    #[test]
    fn constant_offset_rmse() {
        let g: Vec<_> = (0..20).map(|k| gt(k as f64 * 0.1, 0, k as f64, 1.0)).collect();
        let e: Vec<_> = g.iter().map(|r| est(r.t, 1, r.position[0] + 0.3, r.position[1] + 0.4)).collect();
        let log = match_tracks_to_gt(&e, &g, 1.0).unwrap();
        assert!((planar_rmse(&log).unwrap()[&0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_id_change_is_one_switch() {
        let g: Vec<_> = (0..6).map(|k| gt(k as f64, 0, 2.0, 0.0)).collect();
        let e: Vec<_> = (0..6).map(|k| est(k as f64, if k < 3 { 1 } else { 2 }, 2.0, 0.0)).collect();
        let r = identity_switches(&match_tracks_to_gt(&e, &g, 1.0).unwrap());
        assert_eq!(r.per_target[&0], 1);
        assert_eq!(r.max_id_total, 2);
    }

    #[test]
    fn swap_and_swap_back() {
        let mut g = Vec::new();
        let mut e = Vec::new();
        for k in 0..5 {
            let t = k as f64;
            g.push(gt(t, 0, 0.0, 0.0));
            g.push(gt(t, 1, 5.0, 0.0));
            let (a, b) = if k == 2 { (2, 1) } else { (1, 2) };
            e.push(est(t, a, 0.0, 0.0));
            e.push(est(t, b, 5.0, 0.0));
        }
        let r = identity_switches(&match_tracks_to_gt(&e, &g, 1.0).unwrap());
        assert_eq!(r.per_target[&0], 2);
        assert_eq!(r.per_target[&1], 2);
        assert_eq!(r.total, 4);
    }

    #[test]
    fn near_frame_alignment_and_coverage() {
        let g: Vec<_> = (0..10).map(|k| gt(k as f64 * 0.1, 0, 3.0, 0.0)).collect();
        // Estimates slightly off in time, missing the first three frames.
        let e: Vec<_> = (3..10).map(|k| est(k as f64 * 0.1 + 0.01, 1, 3.0, 0.0)).collect();
        let (rep, _) = evaluate(&e, &g, 1.0).unwrap();
        assert_eq!(rep.targets[0].matched_frames, 7);
        assert!((rep.targets[0].coverage - 0.7).abs() < 1e-12);
        assert_eq!(rep.targets[0].coverage_after_first_match, 1.0);
    }

    #[test]
    fn empty_logs_rejected() {
        assert_eq!(match_tracks_to_gt(&[], &[gt(0.0, 0, 0.0, 0.0)], 1.0).unwrap_err(), MetricsError::EmptyLog("track"));
        assert_eq!(
            match_tracks_to_gt(&[est(0.0, 1, 0.0, 1.0)], &[], 1.0).unwrap_err(),
            MetricsError::EmptyLog("ground-truth")
        );
    }

    #[test]
    fn csv_has_header_and_rows() {
        let log = match_tracks_to_gt(&[est(0.0, 3, 1.0, 0.0)], &[gt(0.0, 0, 1.0, 0.0)], 1.0).unwrap();
        assert_eq!(errors_csv(&log), "t,target_id,track_id,error_m\n0,0,3,0\n");
    }

    fn scene() -> impl Strategy<Value = (Vec<GtRecord>, Vec<TrackOutput>, Vec<f64>)> {
        (2usize..5, 3usize..12).prop_flat_map(|(n, frames)| {
            (
                prop::collection::vec((-6.0f64..6.0, -6.0f64..6.0), n),
                prop::collection::vec(prop::collection::vec((-0.6f64..0.6, -0.6f64..0.6, 1u64..4), n), frames),
                prop::collection::vec(-2.0f64..2.0, n * frames),
            )
                .prop_map(move |(base, jitter, zs)| {
                    let mut g = Vec::new();
                    let mut e = Vec::new();
                    for (k, row) in jitter.iter().enumerate() {
                        for (i, &(dx, dy, id)) in row.iter().enumerate() {
                            let (x, y) = (base[i].0 + 2.0 * i as f64 * 13.0, base[i].1);
                            g.push(gt(k as f64, i as u64, x, y));
                            e.push(est(k as f64, i as u64 * 10 + id, x + dx, y + dy));
                        }
                    }
                    (g, e, zs)
                })
        })
    }

    proptest! {
        #[test]
        fn prop_relabeling_preserves_switches((g, e, _) in scene(), shift in 100u64..1000, flip in any::<bool>()) {
            let relabel = |id: u64| if flip { u64::MAX - id } else { id + shift };
            let e2: Vec<_> = e.iter().map(|r| TrackOutput { id: relabel(r.id), ..r.clone() }).collect();
            let a = identity_switches(&match_tracks_to_gt(&e, &g, 1.0).unwrap());
            let b = identity_switches(&match_tracks_to_gt(&e2, &g, 1.0).unwrap());
            prop_assert_eq!(a.per_target, b.per_target);
            prop_assert_eq!(a.max_id_total, b.max_id_total);
        }

        #[test]
        fn prop_rmse_ignores_height((g, e, zs) in scene()) {
            let g2: Vec<_> = g.iter().zip(&zs).map(|(r, z)| GtRecord { position: [r.position[0], r.position[1], *z], ..*r }).collect();
            let a = planar_rmse(&match_tracks_to_gt(&e, &g, 1.0).unwrap());
            let b = planar_rmse(&match_tracks_to_gt(&e, &g2, 1.0).unwrap());
            prop_assert_eq!(a, b);
        }
    }
}
