//! Reconstruction of instances the network missed. When a track has a gap or
//! ends abruptly, the last observed mask is shifted to the position predicted
//! by a least-squares fit of the track's center history and proposed as a new
//! instance. A lost instance is followed for at most `gap_limit` frames, and
//! proposals mostly covered by an ignored region or nearly duplicating an
//! existing prediction are suppressed.
//!
//! The two phases are strictly separated: proposal generation sees only the
//! instances the network predicted, never earlier reconstructions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::round_shift;
use crate::sequence::{Frame, InstancePrediction, Origin};
use crate::track::{predict_center, Track, TrackError, TrackerConfig};

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("track error: {0}")]
    Track(#[from] TrackError),
    #[error("mask error: {0}")]
    Mask(#[from] crate::mask::MaskError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Maximum number of frames a lost instance is followed (10 ≈ one second).
    pub gap_limit: usize,
    /// Proposals with at least this fraction of pixels in the ignored region
    /// are suppressed.
    pub ignore_cover_threshold: f64,
    /// Proposals whose IoU with an existing prediction exceeds this are
    /// suppressed as duplicates.
    pub duplicate_iou_threshold: f64,
    /// Minimum number of observed centers before extrapolation is attempted.
    pub min_history: usize,
    /// Cap on how many centers feed the regression; `None` uses the full
    /// history, which is the default behavior.
    pub regression_window: Option<usize>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            gap_limit: 10,
            ignore_cover_threshold: 0.8,
            duplicate_iou_threshold: 0.95,
            min_history: 2,
            regression_window: None,
        }
    }
}

/// A reconstructed instance: the shifted mask plus where it came from.
#[derive(Debug, Clone)]
pub struct DetectedInstance {
    pub frame: usize,
    pub instance: InstancePrediction,
    pub source_track_id: u64,
    /// Last frame in which the source track was observed before `frame`.
    pub source_frame: usize,
}

/// Instance counts in the style of a predicted/detected bookkeeping table.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DetectReport {
    /// Instances predicted by the network (after the ignored-region filter).
    pub predicted_instances: usize,
    /// Instances added by the detection algorithm.
    pub detected_instances: usize,
    /// Proposals whose shifted mask left the grid entirely.
    pub dropped_empty: usize,
    /// Proposals rejected by the covering check.
    pub suppressed: usize,
}

/// Phase 1: per frame, the reconstruction candidates from all tracks.
///
/// For every track and every frame `t` where the track is absent, has at
/// least `min_history` prior observations and `t - t_last <= gap_limit`, the
/// mask at `t_last` is shifted by the rounded difference between the center
/// predicted at `t` and the center at `t_last`. Candidates that clip to an
/// empty mask are dropped and counted.
pub fn detect_false_negatives(
    tracks: &[Track],
    n_frames: usize,
    cfg: &DetectorConfig,
) -> Result<(Vec<Vec<DetectedInstance>>, usize), DetectError> {
    let mut per_frame: Vec<Vec<DetectedInstance>> = vec![Vec::new(); n_frames];
    let mut dropped_empty = 0usize;

    let mut ordered: Vec<&Track> = tracks.iter().collect();
    ordered.sort_by_key(|t| t.track_id);
    for track in ordered {
        let mut history_len = 0usize; // centers observed strictly before t
        let mut t_last: Option<usize> = None;
        for t in 0..n_frames {
            if track.entries.contains_key(&t) {
                history_len += 1;
                t_last = Some(t);
                continue;
            }
            let Some(last) = t_last else { continue };
            if history_len < cfg.min_history || t - last > cfg.gap_limit {
                continue;
            }
            let window_start = match cfg.regression_window {
                Some(w) => history_len.saturating_sub(w),
                None => 0,
            };
            let history = &track.centers[window_start..history_len];
            let predicted = predict_center(history, t)?;
            let last_center = track.centers[history_len - 1].1;
            let last_instance = &track.entries[&last];
            let shifted = last_instance.mask.shift(
                round_shift(predicted.v - last_center.v),
                round_shift(predicted.h - last_center.h),
            );
            if shifted.is_empty() {
                dropped_empty += 1;
                continue;
            }
            let score = track
                .mean_score_before(t)
                .expect("history_len >= 2 implies prior scores");
            per_frame[t].push(DetectedInstance {
                frame: t,
                instance: InstancePrediction {
                    mask: shifted,
                    class_id: last_instance.class_id,
                    score,
                    track_id: Some(track.track_id),
                    origin: Origin::Detected,
                },
                source_track_id: track.track_id,
                source_frame: last,
            });
        }
    }
    Ok((per_frame, dropped_empty))
}

/// Phase 2: the covering check. A candidate is accepted when less than
/// `ignore_cover_threshold` of it lies in the ignored region and its maximum
/// IoU against the frame's predicted instances does not exceed
/// `duplicate_iou_threshold`. Candidates are checked against network
/// predictions only, not against each other.
pub fn covering_check(
    candidates: Vec<DetectedInstance>,
    frame: &Frame,
    cfg: &DetectorConfig,
) -> Result<(Vec<DetectedInstance>, usize), DetectError> {
    let mut accepted = Vec::with_capacity(candidates.len());
    let mut suppressed = 0usize;
    for cand in candidates {
        if let Some(region) = &frame.ignored {
            if cand.instance.mask.overlap_ratio(region)? >= cfg.ignore_cover_threshold {
                suppressed += 1;
                continue;
            }
        }
        let mut max_iou = 0.0f64;
        for existing in &frame.instances {
            max_iou = max_iou.max(cand.instance.mask.iou(&existing.mask)?);
        }
        if max_iou > cfg.duplicate_iou_threshold {
            suppressed += 1;
            continue;
        }
        accepted.push(cand);
    }
    Ok((accepted, suppressed))
}

/// Everything the detection step produces: frames with accepted
/// reconstructions appended, tracks extended by the same entries, and counts.
#[derive(Debug)]
pub struct DetectionOutput {
    pub frames: Vec<Frame>,
    pub tracks: Vec<Track>,
    pub accepted: Vec<DetectedInstance>,
    pub report: DetectReport,
}

/// Runs both phases against already-tracked frames (the output of
/// [`crate::track::apply_tracks`]).
pub fn detect_on_tracked(
    frames: &[Frame],
    tracks: &[Track],
    cfg: &DetectorConfig,
) -> Result<DetectionOutput, DetectError> {
    let (candidates, dropped_empty) = detect_false_negatives(tracks, frames.len(), cfg)?;
    let mut out_frames = frames.to_vec();
    let mut out_tracks = tracks.to_vec();
    out_tracks.sort_by_key(|t| t.track_id);
    let mut accepted_all = Vec::new();
    let mut suppressed = 0usize;
    for (t, frame_candidates) in candidates.into_iter().enumerate() {
        let (accepted, s) = covering_check(frame_candidates, &frames[t], cfg)?;
        suppressed += s;
        for det in accepted {
            out_frames[t].instances.push(det.instance.clone());
            let idx = out_tracks
                .binary_search_by_key(&det.source_track_id, |tr| tr.track_id)
                .expect("candidate source track exists");
            out_tracks[idx].insert(t, det.instance.clone());
            accepted_all.push(det);
        }
    }
    let report = DetectReport {
        predicted_instances: frames.iter().map(|f| f.instances.len()).sum(),
        detected_instances: accepted_all.len(),
        dropped_empty,
        suppressed,
    };
    Ok(DetectionOutput {
        frames: out_frames,
        tracks: out_tracks,
        accepted: accepted_all,
        report,
    })
}

/// Tracks a sequence and runs the detection algorithm on it in one go.
pub fn run_detection(
    frames: &[Frame],
    tracker_cfg: &TrackerConfig,
    detector_cfg: &DetectorConfig,
) -> Result<DetectionOutput, DetectError> {
    let tracks = crate::track::track_sequence(frames, tracker_cfg)?;
    let tracked_frames = crate::track::apply_tracks(frames, &tracks);
    detect_on_tracked(&tracked_frames, &tracks, detector_cfg)
}
