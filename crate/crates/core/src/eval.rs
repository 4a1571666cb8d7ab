//! Evaluation: matching predictions to ground truth, meta-classification
//! quality (accuracy, AUROC), Pearson correlations between metrics and IoU,
//! precision-recall sweeps with their AUC, object tracking metrics
//! (GT/MT/PT/ML/smn) and occlusion-level stratification.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{MaskError, PixelMask};
use crate::metrics::MetricRecord;
use crate::sequence::{Frame, GtFrame, Origin};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("mask error: {0}")]
    Mask(#[from] MaskError),
    #[error("need both classes present, found only one")]
    SingleClass,
    #[error("empty input")]
    Empty,
    #[error("input is constant; correlation undefined")]
    ConstantInput,
    #[error("scores and labels differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no admissible ground truth instances")]
    NoAdmissibleGt,
}

/// Best ground-truth match for one prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtMatch {
    pub gt_track_id: Option<u64>,
    pub iou: f64,
}

/// For each prediction, the ground-truth instance with maximum IoU (ties go
/// to the smaller gt id) and that IoU; zero overlap leaves the id unset.
pub fn match_gt(
    predictions: &[&PixelMask],
    gt_frame: &GtFrame,
) -> Result<Vec<GtMatch>, EvalError> {
    let mut out = Vec::with_capacity(predictions.len());
    for pred in predictions {
        let mut best = GtMatch {
            gt_track_id: None,
            iou: 0.0,
        };
        for g in &gt_frame.instances {
            let iou = pred.iou(&g.mask)?;
            if iou > best.iou {
                best = GtMatch {
                    gt_track_id: Some(g.gt_track_id),
                    iou,
                };
            }
        }
        out.push(best);
    }
    Ok(out)
}

/// Fills `iou_gt` on metric records from the tracked frames they refer to.
pub fn fill_iou_gt(
    records: &mut [MetricRecord],
    frames: &[Frame],
    gt: &[GtFrame],
) -> Result<(), EvalError> {
    let mut by_frame_track: BTreeMap<(usize, u64), f64> = BTreeMap::new();
    for frame in frames {
        let masks: Vec<&PixelMask> = frame.instances.iter().map(|i| &i.mask).collect();
        let matches = match_gt(&masks, &gt[frame.index])?;
        for (inst, m) in frame.instances.iter().zip(matches) {
            if let Some(id) = inst.track_id {
                by_frame_track.insert((frame.index, id), m.iou);
            }
        }
    }
    for r in records.iter_mut() {
        if let Some(&iou) = by_frame_track.get(&(r.frame, r.track_id)) {
            r.iou_gt = Some(iou);
        }
    }
    Ok(())
}

/// AUROC in the Mann-Whitney form: the probability that a random positive
/// outranks a random negative, ties counting one half. Exact integer
/// counting, identical to brute-force pair enumeration.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&y| y).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut pairs: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut wins2 = 0u64; // 2 per strict win, 1 per tie
    let mut negatives_below = 0u64;
    let mut i = 0usize;
    while i < pairs.len() {
        let mut j = i;
        let mut pos_in_group = 0u64;
        let mut neg_in_group = 0u64;
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            if pairs[j].1 {
                pos_in_group += 1;
            } else {
                neg_in_group += 1;
            }
            j += 1;
        }
        wins2 += pos_in_group * (2 * negatives_below + neg_in_group);
        negatives_below += neg_in_group;
        i = j;
    }
    Ok(wins2 as f64 / (2 * n_pos * n_neg) as f64)
}

/// Fraction of labels predicted correctly at the probability cutoff.
pub fn accuracy(probabilities: &[f64], labels: &[bool], cutoff: f64) -> Result<f64, EvalError> {
    if probabilities.len() != labels.len() {
        return Err(EvalError::LengthMismatch(probabilities.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(EvalError::Empty);
    }
    let correct = probabilities
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| (p >= cutoff) == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, EvalError> {
    if xs.len() != ys.len() {
        return Err(EvalError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(EvalError::Empty);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::ConstantInput);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

fn iou_passes(iou: f64, h: f64) -> bool {
    if h == 0.0 {
        iou > 0.0
    } else {
        iou >= h
    }
}

/// Ground-truth instances admissible for the threshold sweep, as
/// (gt_track_id, frame) pairs.
///
/// A gt track that is never matched by any network prediction anywhere in
/// the sequence is dropped entirely; for matched tracks, the frames before
/// the first network match are dropped. Reconstructed instances play no role
/// here: the detection algorithm can only recover what the network found at
/// least once before.
pub fn exclusion_rule(
    frames: &[Frame],
    gt: &[GtFrame],
    h: f64,
) -> Result<BTreeSet<(u64, usize)>, EvalError> {
    let mut first_found: BTreeMap<u64, usize> = BTreeMap::new();
    for frame in frames {
        let network_masks: Vec<&PixelMask> = frame
            .instances
            .iter()
            .filter(|i| i.origin == Origin::Network)
            .map(|i| &i.mask)
            .collect();
        for m in match_gt(&network_masks, &gt[frame.index])? {
            if let Some(id) = m.gt_track_id {
                if iou_passes(m.iou, h) {
                    first_found.entry(id).or_insert(frame.index);
                }
            }
        }
    }
    let mut admissible = BTreeSet::new();
    for gf in gt {
        for g in &gf.instances {
            if let Some(&first) = first_found.get(&g.gt_track_id) {
                if gf.index >= first {
                    admissible.insert((g.gt_track_id, gf.index));
                }
            }
        }
    }
    Ok(admissible)
}

/// One instance entering a threshold sweep: its frame, the selector value
/// thresholded on (score or meta probability), and the mask.
#[derive(Debug, Clone)]
pub struct SweepCandidate {
    pub frame: usize,
    pub selector: f64,
    pub mask: PixelMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    /// Trapezoidal area over the observed (recall, precision) points.
    pub auc: f64,
    /// Thresholds skipped because no instance passed them.
    pub skipped_thresholds: Vec<f64>,
}

/// 15 evenly spaced thresholds in [0, 1].
pub fn default_thresholds() -> Vec<f64> {
    (0..15).map(|i| i as f64 / 14.0).collect()
}

/// Threshold sweep: at each threshold the instances with selector >= t are
/// kept and matched greedily one-to-one (by descending IoU) against the
/// admissible ground truth. TP are matched predictions, FP the remaining
/// kept predictions, FN the unmatched admissible gt instances.
pub fn sweep(
    candidates: &[SweepCandidate],
    gt: &[GtFrame],
    admissible: &BTreeSet<(u64, usize)>,
    thresholds: &[f64],
    h: f64,
) -> Result<SweepResult, EvalError> {
    if admissible.is_empty() {
        return Err(EvalError::NoAdmissibleGt);
    }
    let n_frames = gt.len();
    let mut per_frame: Vec<Vec<&SweepCandidate>> = vec![Vec::new(); n_frames];
    for c in candidates {
        per_frame[c.frame].push(c);
    }

    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for &threshold in thresholds {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut kept_total = 0usize;
        let mut matched_gt = 0usize;
        for gf in gt {
            let kept: Vec<&&SweepCandidate> = per_frame[gf.index]
                .iter()
                .filter(|c| c.selector >= threshold)
                .collect();
            kept_total += kept.len();
            let admissible_here: Vec<&crate::sequence::GroundTruthInstance> = gf
                .instances
                .iter()
                .filter(|g| admissible.contains(&(g.gt_track_id, gf.index)))
                .collect();
            // all qualifying (prediction, gt) pairs, best overlaps first
            let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
            for (pi, c) in kept.iter().enumerate() {
                for (gi, g) in admissible_here.iter().enumerate() {
                    let iou = c.mask.iou(&g.mask)?;
                    if iou_passes(iou, h) {
                        pairs.push((iou, pi, gi));
                    }
                }
            }
            pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
            let mut pred_used = vec![false; kept.len()];
            let mut gt_used = vec![false; admissible_here.len()];
            for (_, pi, gi) in pairs {
                if pred_used[pi] || gt_used[gi] {
                    continue;
                }
                pred_used[pi] = true;
                gt_used[gi] = true;
                tp += 1;
                matched_gt += 1;
            }
            fp += kept.len() - pred_used.iter().filter(|&&u| u).count();
        }
        if kept_total == 0 {
            skipped.push(threshold);
            continue;
        }
        let fn_ = admissible.len() - matched_gt;
        points.push(SweepPoint {
            threshold,
            tp,
            fp,
            fn_,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / (tp + fn_) as f64,
        });
    }
    let auc = pr_auc(&points);
    Ok(SweepResult {
        points,
        auc,
        skipped_thresholds: skipped,
    })
}

/// Trapezoidal area under the observed (recall, precision) points, without
/// extrapolation to recall 0 or 1.
pub fn pr_auc(points: &[SweepPoint]) -> f64 {
    let mut sorted: Vec<&SweepPoint> = points.iter().collect();
    sorted.sort_by(|a, b| a.recall.total_cmp(&b.recall));
    let mut auc = 0.0;
    for w in sorted.windows(2) {
        auc += (w[1].recall - w[0].recall) * (w[1].precision + w[0].precision) / 2.0;
    }
    auc
}

/// Object tracking summary in the mostly-tracked style: a gt track is MT
/// when matched in at least 80% of its occurrence frames, ML under 20%,
/// otherwise PT; smn counts matched/non-matched switches between adjacent
/// occurrence frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackingMetrics {
    pub gt: usize,
    pub mt: usize,
    pub pt: usize,
    pub ml: usize,
    pub smn: usize,
}

/// `flags`: per gt track, its occurrence frames in order with the matched flag.
pub fn tracking_metrics(flags: &BTreeMap<u64, Vec<(usize, bool)>>) -> TrackingMetrics {
    let mut out = TrackingMetrics {
        gt: flags.len(),
        mt: 0,
        pt: 0,
        ml: 0,
        smn: 0,
    };
    for series in flags.values() {
        let matched = series.iter().filter(|(_, m)| *m).count();
        let fraction = matched as f64 / series.len() as f64;
        if fraction >= 0.8 {
            out.mt += 1;
        } else if fraction < 0.2 {
            out.ml += 1;
        } else {
            out.pt += 1;
        }
        out.smn += series.windows(2).filter(|w| w[0].1 != w[1].1).count();
    }
    out
}

/// Builds the per-gt-track matched flags against an instance set: a gt
/// instance counts as matched when some prediction's best overlap is with it
/// and passes the IoU threshold.
pub fn gt_match_flags(
    frames: &[Frame],
    gt: &[GtFrame],
    h: f64,
) -> Result<BTreeMap<u64, Vec<(usize, bool)>>, EvalError> {
    let mut matched: BTreeSet<(u64, usize)> = BTreeSet::new();
    for frame in frames {
        let masks: Vec<&PixelMask> = frame.instances.iter().map(|i| &i.mask).collect();
        for m in match_gt(&masks, &gt[frame.index])? {
            if let Some(id) = m.gt_track_id {
                if iou_passes(m.iou, h) {
                    matched.insert((id, frame.index));
                }
            }
        }
    }
    let mut flags: BTreeMap<u64, Vec<(usize, bool)>> = BTreeMap::new();
    for gf in gt {
        for g in &gf.instances {
            flags
                .entry(g.gt_track_id)
                .or_default()
                .push((gf.index, matched.contains(&(g.gt_track_id, gf.index))));
        }
    }
    Ok(flags)
}

/// Maximum bounding-box IoU of a gt instance against the other gt instances
/// in its frame.
pub fn occlusion_level(
    instance: &PixelMask,
    others: &[&PixelMask],
) -> Result<f64, EvalError> {
    let own = instance.bounding_box()?;
    let mut level: f64 = 0.0;
    for other in others {
        level = level.max(own.iou(&other.bounding_box()?));
    }
    Ok(level)
}

/// Bin index for an occlusion level: bin 0 holds exactly 0, then
/// (0,0.1] → 1 up to (0.9,1.0] → 10.
pub fn occlusion_bin(level: f64) -> usize {
    if level <= 0.0 {
        0
    } else {
        ((level * 10.0).ceil() as usize).clamp(1, 10)
    }
}

// ---------------------------------------------------------------------------
// Report structures
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetaSummary {
    pub history: usize,
    pub runs: usize,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub auroc_mean: f64,
    pub auroc_std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrCurve {
    pub method: String,
    pub h: f64,
    pub auc: f64,
    pub points: Vec<SweepPoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackingComparison {
    /// Network predictions only.
    pub baseline: TrackingMetrics,
    /// Predictions plus reconstructed instances.
    pub augmented: TrackingMetrics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OcclusionLevelReport {
    pub bin: usize,
    /// Half-open level interval (lo, hi] covered by this bin; bin 0 is {0}.
    pub level_lo: f64,
    pub level_hi: f64,
    pub gt_instances: usize,
    pub score: Vec<SweepPoint>,
    pub fused: Vec<SweepPoint>,
}

/// Everything `evaluate` and `run-all` emit as `eval_report.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: Vec<MetaSummary>,
    pub pr: Vec<PrCurve>,
    pub tracking: TrackingComparison,
    pub pearson: Vec<(String, f64)>,
    pub occlusion: Vec<OcclusionLevelReport>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::GroundTruthInstance;

    fn gt_frame(index: usize, instances: Vec<(u64, PixelMask)>) -> GtFrame {
        GtFrame {
            index,
            height: 16,
            width: 16,
            instances: instances
                .into_iter()
                .map(|(id, mask)| GroundTruthInstance {
                    mask,
                    class_id: 0,
                    gt_track_id: id,
                })
                .collect(),
        }
    }

    #[test]
    fn match_gt_examples() {
        let g1 = PixelMask::rect(16, 16, 2, 2, 4, 4).unwrap();
        let g2 = PixelMask::rect(16, 16, 10, 10, 4, 4).unwrap();
        let gf = gt_frame(0, vec![(1, g1.clone()), (2, g2)]);

        let exact = match_gt(&[&g1], &gf).unwrap();
        assert_eq!(exact[0], GtMatch { gt_track_id: Some(1), iou: 1.0 });

        let nowhere = PixelMask::rect(16, 16, 2, 10, 2, 2).unwrap();
        let miss = match_gt(&[&nowhere], &gf).unwrap();
        assert_eq!(miss[0], GtMatch { gt_track_id: None, iou: 0.0 });

        // prediction overlapping gt 1 with 2 pixels and gt 3 with 1 pixel
        let ga = PixelMask::from_pixels(16, 16, [(0, 0), (0, 1)]).unwrap();
        let gb = PixelMask::from_pixels(16, 16, [(0, 2)]).unwrap();
        let gf2 = gt_frame(0, vec![(1, ga), (3, gb)]);
        let pred = PixelMask::from_pixels(16, 16, [(0, 0), (0, 1), (0, 2)]).unwrap();
        let m = match_gt(&[&pred], &gf2).unwrap();
        assert_eq!(m[0].gt_track_id, Some(1));
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(
            auroc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(),
            1.0
        );
        assert_eq!(
            auroc(&[0.9, 0.8, 0.2, 0.1], &[false, false, true, true]).unwrap(),
            0.0
        );
        let v = auroc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert_eq!(v, 0.75);
        assert!(matches!(
            auroc(&[0.1, 0.2], &[true, true]),
            Err(EvalError::SingleClass)
        ));
    }

    #[test]
    fn auroc_equals_pair_counting_and_is_rank_invariant() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = rng.gen_range(5..200);
            let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..20) as f64) / 20.0).collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
                continue;
            }
            // brute-force pair counting oracle
            let mut wins2 = 0u64;
            let mut pairs = 0u64;
            for (i, &yi) in labels.iter().enumerate() {
                if !yi {
                    continue;
                }
                for (j, &yj) in labels.iter().enumerate() {
                    if yj {
                        continue;
                    }
                    pairs += 1;
                    if scores[i] > scores[j] {
                        wins2 += 2;
                    } else if scores[i] == scores[j] {
                        wins2 += 1;
                    }
                }
            }
            let expected = wins2 as f64 / (2 * pairs) as f64;
            assert_eq!(auroc(&scores, &labels).unwrap(), expected);

            // strictly increasing transform leaves the value unchanged
            let transformed: Vec<f64> = scores.iter().map(|&s| (3.0 * s + 1.0).exp()).collect();
            assert_eq!(
                auroc(&transformed, &labels).unwrap(),
                auroc(&scores, &labels).unwrap()
            );
        }
    }

    #[test]
    fn accuracy_examples() {
        let labels = [true, true, false, false];
        assert_eq!(accuracy(&[0.9, 0.8, 0.1, 0.2], &labels, 0.5).unwrap(), 1.0);
        assert_eq!(accuracy(&[0.1, 0.2, 0.9, 0.8], &labels, 0.5).unwrap(), 0.0);
        assert_eq!(accuracy(&[0.9, 0.8, 0.1, 0.7], &labels, 0.5).unwrap(), 0.75);
        assert!(matches!(accuracy(&[], &[], 0.5), Err(EvalError::Empty)));
    }

    #[test]
    fn pearson_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &xs).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(
            pearson(&xs, &[2.0, 2.0, 2.0, 2.0]),
            Err(EvalError::ConstantInput)
        ));
    }

    fn simple_world() -> (Vec<Frame>, Vec<GtFrame>) {
        // one gt object present frames 0..6, detected by the network from
        // frame 2 on; a second gt object never detected
        let mut frames = Vec::new();
        let mut gts = Vec::new();
        for t in 0..6 {
            let gmask = PixelMask::rect(16, 16, 4, 4, 4, 4).unwrap();
            let hidden = PixelMask::rect(16, 16, 10, 10, 3, 3).unwrap();
            gts.push(gt_frame(t, vec![(7, gmask.clone()), (9, hidden)]));
            let mut f = Frame::new(t, 16, 16);
            if t >= 2 {
                f.instances.push(crate::sequence::InstancePrediction {
                    mask: gmask,
                    class_id: 0,
                    score: 0.9,
                    track_id: Some(1),
                    origin: Origin::Network,
                });
            }
            frames.push(f);
        }
        (frames, gts)
    }

    #[test]
    fn exclusion_rule_examples() {
        let (frames, gts) = simple_world();
        let admissible = exclusion_rule(&frames, &gts, 0.5).unwrap();
        // track 9 never found: gone entirely; track 7 admissible from frame 2
        assert!(admissible.iter().all(|&(id, _)| id == 7));
        let frames_of_7: Vec<usize> = admissible.iter().map(|&(_, f)| f).collect();
        assert_eq!(frames_of_7, vec![2, 3, 4, 5]);
    }

    #[test]
    fn sweep_perfect_predictions() {
        let (frames, gts) = simple_world();
        let admissible = exclusion_rule(&frames, &gts, 0.5).unwrap();
        let candidates: Vec<SweepCandidate> = frames
            .iter()
            .flat_map(|f| {
                f.instances.iter().map(|i| SweepCandidate {
                    frame: f.index,
                    selector: i.score,
                    mask: i.mask.clone(),
                })
            })
            .collect();
        let result = sweep(&candidates, &gts, &admissible, &[0.0], 0.5).unwrap();
        assert_eq!(result.points.len(), 1);
        let p = result.points[0];
        assert_eq!((p.precision, p.recall), (1.0, 1.0));

        // threshold above every selector: the point is skipped
        let result = sweep(&candidates, &gts, &admissible, &[0.95], 0.5).unwrap();
        assert!(result.points.is_empty());
        assert_eq!(result.skipped_thresholds, vec![0.95]);
    }

    #[test]
    fn sweep_count_invariants() {
        // mix of perfect predictions and injected false positives
        let (mut frames, gts) = simple_world();
        for f in frames.iter_mut() {
            f.instances.push(crate::sequence::InstancePrediction {
                mask: PixelMask::rect(16, 16, 0, 12, 3, 3).unwrap(),
                class_id: 0,
                score: 0.4,
                track_id: Some(50),
                origin: Origin::Network,
            });
        }
        let admissible = exclusion_rule(&frames, &gts, 0.5).unwrap();
        let candidates: Vec<SweepCandidate> = frames
            .iter()
            .flat_map(|f| {
                f.instances.iter().map(|i| SweepCandidate {
                    frame: f.index,
                    selector: i.score,
                    mask: i.mask.clone(),
                })
            })
            .collect();
        let thresholds = default_thresholds();
        let result = sweep(&candidates, &gts, &admissible, &thresholds, 0.5).unwrap();
        let mut last_recall = f64::INFINITY;
        for p in &result.points {
            assert_eq!(p.tp + p.fn_, admissible.len(), "TP+FN covers admissible gt");
            let kept = candidates
                .iter()
                .filter(|c| c.selector >= p.threshold)
                .count();
            assert_eq!(p.tp + p.fp, kept, "TP+FP covers kept predictions");
            assert!(p.recall <= last_recall, "recall non-increasing in threshold");
            last_recall = p.recall;
        }
        assert!(result.auc > 0.0);
    }

    #[test]
    fn tracking_metric_rules() {
        let mut flags: BTreeMap<u64, Vec<(usize, bool)>> = BTreeMap::new();
        flags.insert(1, (0..10).map(|t| (t, true)).collect()); // 100% -> MT
        flags.insert(2, (0..10).map(|t| (t, t == 0)).collect()); // 10% -> ML
        flags.insert(3, (0..10).map(|t| (t, t < 5)).collect()); // 50% -> PT
        flags.insert(4, vec![(0, true), (1, false), (2, true), (3, false)]); // smn 3
        let m = tracking_metrics(&flags);
        assert_eq!(m.gt, 4);
        assert_eq!(m.mt, 1);
        assert_eq!(m.ml, 1);
        assert_eq!(m.pt, 2);
        assert_eq!(m.gt, m.mt + m.pt + m.ml);
        // switches: track2 has T F...: 1, track3 T*5 F*5: 1, track4: 3
        assert_eq!(m.smn, 1 + 1 + 3);
    }

    #[test]
    fn occlusion_levels_and_bins() {
        let a = PixelMask::rect(16, 16, 2, 2, 4, 4).unwrap();
        let far = PixelMask::rect(16, 16, 10, 10, 4, 4).unwrap();
        assert_eq!(occlusion_level(&a, &[&far]).unwrap(), 0.0);
        assert_eq!(occlusion_level(&a, &[]).unwrap(), 0.0);
        assert_eq!(occlusion_level(&a, &[&a]).unwrap(), 1.0);

        assert_eq!(occlusion_bin(0.0), 0);
        assert_eq!(occlusion_bin(0.05), 1);
        assert_eq!(occlusion_bin(0.1), 1);
        assert_eq!(occlusion_bin(0.55), 6); // (0.5, 0.6]
        assert_eq!(occlusion_bin(0.6), 6);
        assert_eq!(occlusion_bin(1.0), 10);
    }
}
