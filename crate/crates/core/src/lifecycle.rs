//! Track lifecycle and staged association shared by both tracking engines.

use crate::assignment::{solve_assignment, CostMatrix};
use crate::association::AssociationConfig;
use crate::state::TrackStatus;

/// Hit/miss bookkeeping of one track.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lifecycle {
    pub status: TrackStatus,
    pub hits: u32,
    pub misses: u32,
}

impl Lifecycle {
    /// A freshly spawned track, counting its spawning detection as a hit.
    pub fn spawn(confirm_hits: u32) -> Self {
        let status = if confirm_hits <= 1 { TrackStatus::Confirmed } else { TrackStatus::Tentative };
        Self { status, hits: 1, misses: 0 }
    }

    pub fn hit(&mut self, confirm_hits: u32) {
        self.hits = self.hits.saturating_add(1);
        self.misses = 0;
        match self.status {
            TrackStatus::Tentative if self.hits >= confirm_hits => self.status = TrackStatus::Confirmed,
            TrackStatus::Lost => self.status = TrackStatus::Confirmed,
            _ => {}
        }
    }

    /// Registers a miss; returns `false` when the track should be deleted.
    pub fn miss(&mut self, max_age_frames: u32) -> bool {
        self.hits = 0;
        self.misses = self.misses.saturating_add(1);
        match self.status {
            TrackStatus::Tentative => false,
            TrackStatus::Confirmed => {
                self.status = TrackStatus::Lost;
                self.misses <= max_age_frames
            }
            TrackStatus::Lost => self.misses <= max_age_frames,
        }
    }
}

/// Outcome of the staged association for one frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StagedMatches {
    /// `(track, detection)` pairs, indices into the caller's slices.
    pub pairs: Vec<(usize, usize)>,
    /// Which stage (1, 2 or 3) produced each pair.
    pub stage: Vec<u8>,
    /// High-score detections left unmatched after all stages.
    pub unmatched_high: Vec<usize>,
}

impl StagedMatches {
    pub fn detection_for(&self, track: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == track).map(|p| p.1)
    }
}

/// Splits detection indices by score into (high, low); scores below
/// `tau_low` or non-finite are discarded.
pub fn split_by_score(scores: impl IntoIterator<Item = f64>, cfg: &AssociationConfig) -> (Vec<usize>, Vec<usize>) {
    let (mut high, mut low) = (Vec::new(), Vec::new());
    for (j, s) in scores.into_iter().enumerate() {
        if s >= cfg.tau_high {
            high.push(j);
        } else if s >= cfg.tau_low {
            low.push(j);
        }
    }
    (high, low)
}

/// Three-stage association.
///
/// 1. high-score detections against confirmed and lost tracks;
/// 2. low-score detections against confirmed tracks still unmatched;
/// 3. remaining high-score detections against tentative tracks.
///
/// `cost(tracks, detections)` returns a `tracks.len() x detections.len()` matrix.
pub fn associate_staged(
    statuses: &[TrackStatus],
    high: &[usize],
    low: &[usize],
    mut cost: impl FnMut(&[usize], &[usize]) -> CostMatrix,
) -> StagedMatches {
    let mut out = StagedMatches::default();
    let mut track_used = vec![false; statuses.len()];
    let mut high_used = vec![false; high.len()];

    let mut run = |tracks: Vec<usize>, dets: &[usize], stage: u8, out: &mut StagedMatches| -> Vec<usize> {
        if tracks.is_empty() || dets.is_empty() {
            return Vec::new();
        }
        let m = solve_assignment(&cost(&tracks, dets));
        let mut claimed = Vec::with_capacity(m.len());
        for (r, c) in m.pairs {
            out.pairs.push((tracks[r], dets[c]));
            out.stage.push(stage);
            claimed.push(c);
        }
        claimed
    };

    let stage1: Vec<usize> =
        (0..statuses.len()).filter(|&i| matches!(statuses[i], TrackStatus::Confirmed | TrackStatus::Lost)).collect();
    for c in run(stage1, high, 1, &mut out) {
        high_used[c] = true;
    }
    for &(i, _) in &out.pairs {
        track_used[i] = true;
    }

    let stage2: Vec<usize> =
        (0..statuses.len()).filter(|&i| statuses[i] == TrackStatus::Confirmed && !track_used[i]).collect();
    run(stage2, low, 2, &mut out);

    let remaining: Vec<usize> = high.iter().zip(&high_used).filter(|(_, u)| !**u).map(|(j, _)| *j).collect();
    let stage3: Vec<usize> = (0..statuses.len()).filter(|&i| statuses[i] == TrackStatus::Tentative).collect();
    let claimed3 = run(stage3, &remaining, 3, &mut out);
    let mut rem_used = vec![false; remaining.len()];
    for c in claimed3 {
        rem_used[c] = true;
    }
    out.unmatched_high = remaining.iter().zip(&rem_used).filter(|(_, u)| !**u).map(|(j, _)| *j).collect();
    out
}
