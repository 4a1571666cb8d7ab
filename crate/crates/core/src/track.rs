//! Track id assignment across consecutive frames. Instances are matched by
//! the overlap of motion-shifted masks: each active track predicts its next
//! geometric center by least squares over recent history, its last mask is
//! shifted there, and candidate pairs are matched greedily by descending IoU.
//!
//! The tracker only links consecutive frames; gaps and sudden track ends are
//! the detection algorithm's job.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{round_shift, CenterPoint, MaskError};
use crate::sequence::{Frame, InstancePrediction};

/// Instances with at least this fraction of their pixels inside an ignored
/// region are excluded from tracking and all further processing.
pub const IGNORE_COVER_THRESHOLD: f64 = 0.8;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("center regression needs at least 2 history points, got {0}")]
    ShortHistory(usize),
    #[error("history frames must be strictly increasing")]
    NonIncreasingFrames,
    #[error("mask error: {0}")]
    Mask(#[from] MaskError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackerConfig {
    /// Minimum IoU between a shifted previous mask and a current instance.
    pub match_iou_threshold: f64,
    /// Number of most recent centers used for motion prediction.
    pub window: usize,
    /// Only match instances of equal class.
    pub class_gated: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            match_iou_threshold: 0.25,
            window: 5,
            class_gated: true,
        }
    }
}

/// A tracked instance's time series: one entry per frame it appears in, the
/// parallel history of geometric centers, and the last frame seen.
#[derive(Debug, Clone)]
pub struct Track {
    pub track_id: u64,
    pub entries: BTreeMap<usize, InstancePrediction>,
    /// Geometric centers per present frame, in frame order.
    pub centers: Vec<(usize, CenterPoint)>,
    pub t_last: usize,
}

impl Track {
    pub fn new(track_id: u64, frame: usize, instance: InstancePrediction) -> Self {
        let center = instance
            .mask
            .geometric_center()
            .expect("tracked instances have non-empty masks");
        let mut entries = BTreeMap::new();
        entries.insert(frame, instance);
        Self {
            track_id,
            entries,
            centers: vec![(frame, center)],
            t_last: frame,
        }
    }

    /// Adds an observation, keeping centers and `t_last` consistent.
    pub fn insert(&mut self, frame: usize, instance: InstancePrediction) {
        let center = instance
            .mask
            .geometric_center()
            .expect("tracked instances have non-empty masks");
        self.entries.insert(frame, instance);
        let pos = self.centers.partition_point(|&(f, _)| f < frame);
        self.centers.insert(pos, (frame, center));
        self.t_last = self.t_last.max(frame);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn first_frame(&self) -> usize {
        *self.entries.keys().next().expect("tracks are non-empty")
    }

    /// Up to `window` most recent centers at frames strictly before `frame`.
    pub fn centers_before(&self, frame: usize, window: usize) -> Vec<(usize, CenterPoint)> {
        let upto = self.centers.partition_point(|&(f, _)| f < frame);
        let start = upto.saturating_sub(window);
        self.centers[start..upto].to_vec()
    }

    /// Mean score over entries strictly before `frame`.
    pub fn mean_score_before(&self, frame: usize) -> Option<f64> {
        let scores: Vec<f64> = self
            .entries
            .range(..frame)
            .map(|(_, inst)| inst.score)
            .collect();
        if scores.is_empty() {
            None
        } else {
            Some(scores.iter().sum::<f64>() / scores.len() as f64)
        }
    }
}

/// Ordinary least squares fit of a scalar series against frame index,
/// evaluated at `target`. Exact linear extrapolation for two points.
pub fn extrapolate(series: &[(usize, f64)], target: usize) -> Result<f64, TrackError> {
    if series.len() < 2 {
        return Err(TrackError::ShortHistory(series.len()));
    }
    if series.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(TrackError::NonIncreasingFrames);
    }
    let n = series.len() as f64;
    let mean_x = series.iter().map(|&(f, _)| f as f64).sum::<f64>() / n;
    let mean_y = series.iter().map(|&(_, y)| y).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(f, y) in series {
        let dx = f as f64 - mean_x;
        sxx += dx * dx;
        sxy += dx * (y - mean_y);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    Ok(intercept + slope * target as f64)
}

/// Predicts the geometric center at `target_frame` by independent least
/// squares fits of the v and h coordinates against frame index.
pub fn predict_center(
    history: &[(usize, CenterPoint)],
    target_frame: usize,
) -> Result<CenterPoint, TrackError> {
    let vs: Vec<(usize, f64)> = history.iter().map(|&(f, c)| (f, c.v)).collect();
    let hs: Vec<(usize, f64)> = history.iter().map(|&(f, c)| (f, c.h)).collect();
    Ok(CenterPoint {
        v: extrapolate(&vs, target_frame)?,
        h: extrapolate(&hs, target_frame)?,
    })
}

/// Indices of a frame's instances that survive the ignored-region filter:
/// instances with >= 80% of their pixels inside the ignored region are out.
pub fn prefilter_ignored(frame: &Frame) -> Result<Vec<usize>, TrackError> {
    let Some(region) = &frame.ignored else {
        return Ok((0..frame.instances.len()).collect());
    };
    let mut kept = Vec::with_capacity(frame.instances.len());
    for (k, inst) in frame.instances.iter().enumerate() {
        if inst.mask.overlap_ratio(region)? < IGNORE_COVER_THRESHOLD {
            kept.push(k);
        }
    }
    Ok(kept)
}

/// Matches current-frame instances against active tracks. Returns, per
/// current instance, the matched track id or `None` for a fresh track.
///
/// Each active track's last mask is shifted to its motion-predicted center
/// (identity shift while fewer than two centers are known); pairs with equal
/// class (when gated) and IoU at or above the threshold are matched greedily
/// in descending IoU order.
pub fn match_frames(
    active: &[&Track],
    curr: &[&InstancePrediction],
    target_frame: usize,
    cfg: &TrackerConfig,
) -> Result<Vec<Option<u64>>, TrackError> {
    let mut shifted = Vec::with_capacity(active.len());
    for track in active {
        let (_, inst) = track
            .entries
            .iter()
            .next_back()
            .expect("active tracks are non-empty");
        let history = track.centers_before(target_frame, cfg.window);
        let mask = if history.len() >= 2 {
            let predicted = predict_center(&history, target_frame)?;
            let last = history.last().unwrap().1;
            inst.mask.shift(
                round_shift(predicted.v - last.v),
                round_shift(predicted.h - last.h),
            )
        } else {
            inst.mask.clone()
        };
        shifted.push((track.track_id, inst.class_id, mask));
    }

    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (a, (_, class_id, mask)) in shifted.iter().enumerate() {
        if mask.is_empty() {
            continue;
        }
        for (c, inst) in curr.iter().enumerate() {
            if cfg.class_gated && *class_id != inst.class_id {
                continue;
            }
            let overlap = mask.iou(&inst.mask)?;
            if overlap >= cfg.match_iou_threshold {
                pairs.push((overlap, a, c));
            }
        }
    }
    pairs.sort_by(|x, y| {
        y.0.total_cmp(&x.0)
            .then(shifted[x.1].0.cmp(&shifted[y.1].0))
            .then(x.2.cmp(&y.2))
    });

    let mut track_used = vec![false; active.len()];
    let mut assignment: Vec<Option<u64>> = vec![None; curr.len()];
    for (_, a, c) in pairs {
        if track_used[a] || assignment[c].is_some() {
            continue;
        }
        track_used[a] = true;
        assignment[c] = Some(shifted[a].0);
    }
    Ok(assignment)
}

/// Tracks a whole sequence. Instances mostly covered by ignored regions are
/// filtered out first; every surviving prediction lands in exactly one track.
pub fn track_sequence(frames: &[Frame], cfg: &TrackerConfig) -> Result<Vec<Track>, TrackError> {
    let mut tracks: Vec<Track> = Vec::new();
    let mut next_id: u64 = 1;
    let mut active: Vec<usize> = Vec::new(); // indices into tracks with t_last == t-1

    for frame in frames {
        let kept = prefilter_ignored(frame)?;
        let curr: Vec<&InstancePrediction> = kept.iter().map(|&k| &frame.instances[k]).collect();
        let active_tracks: Vec<&Track> = active.iter().map(|&i| &tracks[i]).collect();
        let assignment = match_frames(&active_tracks, &curr, frame.index, cfg)?;

        let mut next_active = Vec::with_capacity(curr.len());
        for (c, assigned) in assignment.into_iter().enumerate() {
            let mut inst = curr[c].clone();
            match assigned {
                Some(id) => {
                    inst.track_id = Some(id);
                    let idx = tracks
                        .iter()
                        .position(|t| t.track_id == id)
                        .expect("assigned id comes from an existing track");
                    tracks[idx].insert(frame.index, inst);
                    next_active.push(idx);
                }
                None => {
                    let id = next_id;
                    next_id += 1;
                    inst.track_id = Some(id);
                    tracks.push(Track::new(id, frame.index, inst));
                    next_active.push(tracks.len() - 1);
                }
            }
        }
        active = next_active;
    }
    Ok(tracks)
}

/// Rebuilds frames from tracks: per frame, the tracked instances ordered by
/// track id, with ignored regions and depth carried over. Instances removed
/// by the ignored-region filter do not reappear.
pub fn apply_tracks(frames: &[Frame], tracks: &[Track]) -> Vec<Frame> {
    let mut out: Vec<Frame> = frames
        .iter()
        .map(|f| Frame {
            index: f.index,
            height: f.height,
            width: f.width,
            instances: Vec::new(),
            ignored: f.ignored.clone(),
            depth: f.depth.clone(),
        })
        .collect();
    let mut ordered: Vec<&Track> = tracks.iter().collect();
    ordered.sort_by_key(|t| t.track_id);
    for track in ordered {
        for (&frame, inst) in &track.entries {
            out[frame].instances.push(inst.clone());
        }
    }
    out
}

/// One `tracks.jsonl` record: a (track, frame) pair with the index of the
/// instance in the original frame file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackRecord {
    pub track_id: u64,
    pub frame: usize,
    pub instance: usize,
}

/// Flattens tracks into `tracks.jsonl` records. The instance index refers to
/// the original (unfiltered) frame instance list.
pub fn track_records(frames: &[Frame], tracks: &[Track]) -> Vec<TrackRecord> {
    let mut records = Vec::new();
    for track in tracks {
        for (&frame, inst) in &track.entries {
            let instance = frames[frame]
                .instances
                .iter()
                .position(|orig| orig.mask == inst.mask && orig.class_id == inst.class_id)
                .expect("track entries originate from frame instances");
            records.push(TrackRecord {
                track_id: track.track_id,
                frame,
                instance,
            });
        }
    }
    records.sort_by_key(|r| (r.frame, r.track_id));
    records
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::PixelMask;
    use crate::sequence::Origin;

    fn inst(mask: PixelMask, class_id: u32) -> InstancePrediction {
        InstancePrediction {
            mask,
            class_id,
            score: 0.9,
            track_id: None,
            origin: Origin::Network,
        }
    }

    fn cp(v: f64, h: f64) -> CenterPoint {
        CenterPoint { v, h }
    }

    #[test]
    fn predict_center_two_points_is_exact_line() {
        let hist = vec![(1, cp(0.0, 0.0)), (2, cp(1.0, 1.0))];
        let p = predict_center(&hist, 3).unwrap();
        assert_eq!(p, cp(2.0, 2.0));
    }

    #[test]
    fn predict_center_constant_series() {
        let hist = vec![(0, cp(4.0, 7.0)), (3, cp(4.0, 7.0)), (5, cp(4.0, 7.0))];
        for target in [6, 10, 50] {
            let p = predict_center(&hist, target).unwrap();
            assert!((p.v - 4.0).abs() < 1e-12);
            assert!((p.h - 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_center_least_squares_value() {
        // v-coords 0,2,7 at t=1,2,3: slope 3.5, intercept -4, value 10 at t=4
        let hist = vec![(1, cp(0.0, 0.0)), (2, cp(2.0, 0.0)), (3, cp(7.0, 0.0))];
        let p = predict_center(&hist, 4).unwrap();
        assert!((p.v - 10.0).abs() < 1e-12);
    }

    #[test]
    fn predict_center_errors() {
        assert!(matches!(
            predict_center(&[(0, cp(1.0, 1.0))], 2),
            Err(TrackError::ShortHistory(1))
        ));
        let dup = vec![(2, cp(0.0, 0.0)), (2, cp(1.0, 1.0))];
        assert!(matches!(
            predict_center(&dup, 3),
            Err(TrackError::NonIncreasingFrames)
        ));
    }

    #[test]
    fn match_with_no_active_tracks_gives_new_ids() {
        let cfg = TrackerConfig::default();
        let a = inst(PixelMask::rect(16, 16, 2, 2, 4, 4).unwrap(), 0);
        let assignment = match_frames(&[], &[&a], 0, &cfg).unwrap();
        assert_eq!(assignment, vec![None]);
    }

    #[test]
    fn static_masks_keep_ids() {
        let cfg = TrackerConfig::default();
        let mask = PixelMask::rect(16, 16, 2, 2, 4, 4).unwrap();
        let mut frames = Vec::new();
        for t in 0..3 {
            let mut f = Frame::new(t, 16, 16);
            f.instances.push(inst(mask.clone(), 0));
            frames.push(f);
        }
        let tracks = track_sequence(&frames, &cfg).unwrap();
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].len(), 3);
    }

    #[test]
    fn class_gate_forces_consistent_assignment_through_crossing() {
        let cfg = TrackerConfig::default();
        // class 0 moves right along row 4, class 1 moves left; at t=2 both
        // sit at the same position and only the gate tells them apart
        let positions_a = [2usize, 4, 6];
        let positions_b = [10usize, 8, 6];
        let mut frames = Vec::new();
        for t in 0..3 {
            let mut f = Frame::new(t, 24, 24);
            f.instances.push(inst(
                PixelMask::rect(24, 24, 4, positions_a[t], 6, 6).unwrap(),
                0,
            ));
            f.instances.push(inst(
                PixelMask::rect(24, 24, 4, positions_b[t], 6, 6).unwrap(),
                1,
            ));
            frames.push(f);
        }
        let tracks = track_sequence(&frames, &cfg).unwrap();
        assert_eq!(tracks.len(), 2);
        for track in &tracks {
            assert_eq!(track.len(), 3, "no id switch through the crossing");
            let classes: Vec<u32> = track.entries.values().map(|i| i.class_id).collect();
            assert!(classes.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn two_disjoint_static_objects_two_tracks() {
        let cfg = TrackerConfig::default();
        let mut frames = Vec::new();
        for t in 0..5 {
            let mut f = Frame::new(t, 24, 24);
            f.instances
                .push(inst(PixelMask::rect(24, 24, 2, 2, 4, 4).unwrap(), 0));
            f.instances
                .push(inst(PixelMask::rect(24, 24, 14, 14, 4, 4).unwrap(), 0));
            frames.push(f);
        }
        let tracks = track_sequence(&frames, &cfg).unwrap();
        assert_eq!(tracks.len(), 2);
        assert!(tracks.iter().all(|t| t.len() == 5));
    }

    #[test]
    fn prefilter_boundary_cases() {
        let mut frame = Frame::new(0, 40, 40);
        // no ignored region: identity
        frame
            .instances
            .push(inst(PixelMask::rect(40, 40, 0, 0, 5, 5).unwrap(), 0));
        assert_eq!(prefilter_ignored(&frame).unwrap(), vec![0]);

        // instance fully inside the region is removed
        frame.ignored = Some(PixelMask::rect(40, 40, 0, 0, 20, 20).unwrap());
        assert!(prefilter_ignored(&frame).unwrap().is_empty());

        // 799 of 1000 pixels covered: kept (under the 0.8 threshold)
        let mut frame = Frame::new(0, 40, 40);
        let mask = PixelMask::rect(40, 40, 0, 0, 25, 40).unwrap(); // 1000 px
        frame.instances.push(inst(mask, 0));
        let mut bits = vec![false; 40 * 40];
        for v in 0..20 {
            for h in 0..40 {
                bits[v * 40 + h] = true;
            }
        }
        bits[0] = false; // 799 of the instance's pixels covered
        frame.ignored = Some(PixelMask::from_bitmap(40, 40, &bits).unwrap());
        assert_eq!(prefilter_ignored(&frame).unwrap(), vec![0]);

        // exactly 800 of 1000: removed (boundary counts as covered)
        bits[0] = true;
        let mut frame2 = Frame::new(0, 40, 40);
        frame2
            .instances
            .push(inst(PixelMask::rect(40, 40, 0, 0, 25, 40).unwrap(), 0));
        frame2.ignored = Some(PixelMask::from_bitmap(40, 40, &bits).unwrap());
        assert!(prefilter_ignored(&frame2).unwrap().is_empty());
    }

    #[test]
    fn one_to_one_matching_invariant() {
        // no track id appears twice in any frame, every instance is covered
        let cfg = TrackerConfig::default();
        let crowded = crate::sequence::SynthConfig {
            frames_per_sequence: 30,
            min_objects: 4,
            max_objects: 4,
            dropout: 0.2,
            fp_rate: 0.2,
            seed: 7,
            ..crate::sequence::SynthConfig::default()
        };
        let seqs = crate::sequence::generate_scene(&crowded).unwrap();
        let tracks = track_sequence(&seqs[0].frames, &cfg).unwrap();
        let mut per_frame: std::collections::BTreeMap<usize, Vec<u64>> = Default::default();
        let mut covered = 0usize;
        for track in &tracks {
            for (&frame, _) in &track.entries {
                per_frame.entry(frame).or_default().push(track.track_id);
                covered += 1;
            }
        }
        for (_, ids) in per_frame {
            let mut sorted = ids.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), ids.len());
        }
        let total: usize = seqs[0].frames.iter().map(|f| f.instances.len()).sum();
        assert_eq!(covered, total);
    }
}
