//! Meta classification: deciding per instance whether its IoU with ground
//! truth reaches a threshold h, without seeing ground truth at inference.
//! The classifier is a gradient-boosted ensemble of shallow regression trees
//! on the logistic loss, fed with time series of the per-frame metric
//! records. Splitting into train/val/test folds happens at track level so
//! temporally adjacent near-duplicates cannot leak across folds.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::MetricRecord;

#[derive(Debug, Error)]
pub enum MetaError {
    #[error("training data contains a single class only")]
    SingleClass,
    #[error("no training rows")]
    Empty,
    #[error("feature vector has {got} entries, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("record for track {track_id} frame {frame} is missing {what}")]
    MissingField {
        track_id: u64,
        frame: usize,
        what: &'static str,
    },
    #[error("need at least {need} tracks to split, found {got}")]
    TooFewTracks { need: usize, got: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad model file {path}: {message}")]
    BadModel { path: String, message: String },
}

// ---------------------------------------------------------------------------
// Feature assembly
// ---------------------------------------------------------------------------

/// Layout of the per-record feature vector: `history + 1` consecutive blocks
/// of per-frame metrics (oldest first), each with a one-hot class encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    /// Number of previous frames included (n in the time series U_{t-n..t}).
    pub history: usize,
    /// Class vocabulary for the one-hot block, sorted.
    pub class_ids: Vec<u32>,
    pub use_depth: bool,
    pub use_survival: bool,
}

impl FeatureSpec {
    /// Derives the vocabulary and optional blocks from the records at hand:
    /// depth and survival features are used only when every record has them.
    pub fn infer(records: &[MetricRecord], history: usize) -> Self {
        let class_ids: Vec<u32> = records
            .iter()
            .map(|r| r.class_id)
            .collect::<BTreeSet<u32>>()
            .into_iter()
            .collect();
        Self {
            history,
            class_ids,
            use_depth: !records.is_empty() && records.iter().all(|r| r.depth.is_some()),
            use_survival: !records.is_empty() && records.iter().all(|r| r.survival.is_some()),
        }
    }

    /// Per-frame feature count M.
    pub fn block_len(&self) -> usize {
        13 + usize::from(self.use_survival)
            + if self.use_depth { 6 } else { 0 }
            + self.class_ids.len()
    }

    /// Total vector length (history + 1) × M.
    pub fn vector_len(&self) -> usize {
        (self.history + 1) * self.block_len()
    }

    fn block(&self, r: &MetricRecord) -> Result<Vec<f64>, MetaError> {
        let mut out = Vec::with_capacity(self.block_len());
        out.extend([
            r.size as f64,
            r.size_in as f64,
            r.size_bd as f64,
            r.size_rel,
            r.size_in_rel,
            r.center.v,
            r.center.h,
            r.score,
            r.occlusion,
            r.size_dev,
            r.center_dev,
            r.ratio,
            r.deformation,
        ]);
        if self.use_survival {
            out.push(r.survival.ok_or(MetaError::MissingField {
                track_id: r.track_id,
                frame: r.frame,
                what: "survival",
            })?);
        }
        if self.use_depth {
            let d = r.depth.ok_or(MetaError::MissingField {
                track_id: r.track_id,
                frame: r.frame,
                what: "depth",
            })?;
            out.extend([
                d.mean,
                d.mean_in,
                d.mean_bd,
                d.rel,
                d.rel_in,
                r.depth_dev.unwrap_or(0.0),
            ]);
        }
        for &c in &self.class_ids {
            out.push(if r.class_id == c { 1.0 } else { 0.0 });
        }
        Ok(out)
    }
}

/// Builds the time-series feature vector for every record of one track.
/// `track_records` must be the track's records in frame order. History
/// shorter than `history + 1` frames is padded by replicating the oldest
/// available block.
pub fn assemble_features(
    track_records: &[&MetricRecord],
    spec: &FeatureSpec,
) -> Result<Vec<Vec<f64>>, MetaError> {
    let blocks: Vec<Vec<f64>> = track_records
        .iter()
        .map(|r| spec.block(r))
        .collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(blocks.len());
    for t in 0..blocks.len() {
        let mut vector = Vec::with_capacity(spec.vector_len());
        for k in 0..=spec.history {
            // offset into the past: history - k frames before t, clamped
            let back = spec.history - k;
            let idx = t.saturating_sub(back);
            vector.extend_from_slice(&blocks[idx]);
        }
        out.push(vector);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Labels and track-level splitting
// ---------------------------------------------------------------------------

/// Binary labels from ground-truth IoU: true when `iou_gt >= h`, except at
/// h = 0 where the semantic-segmentation convention `iou_gt > 0` applies.
pub fn label_records(records: &[MetricRecord], h: f64) -> Result<Vec<bool>, MetaError> {
    records
        .iter()
        .map(|r| {
            let iou = r.iou_gt.ok_or(MetaError::MissingField {
                track_id: r.track_id,
                frame: r.frame,
                what: "iou_gt",
            })?;
            Ok(if h == 0.0 { iou > 0.0 } else { iou >= h })
        })
        .collect()
}

/// Train/val/test fractions and the split seed. Splitting assigns whole
/// tracks (keyed by sequence and track id) to a fold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
            seed,
        }
    }
}

/// Record indices per fold.
#[derive(Debug, Clone, PartialEq)]
pub struct Folds {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits records into folds at track granularity: all records of a track
/// land in the same fold. Requires at least 10 tracks.
pub fn split_dataset(records: &[MetricRecord], spec: &SplitSpec) -> Result<Folds, MetaError> {
    let mut tracks: Vec<(String, u64)> = records
        .iter()
        .map(|r| (r.sequence.clone(), r.track_id))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if tracks.len() < 10 {
        return Err(MetaError::TooFewTracks {
            need: 10,
            got: tracks.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    tracks.shuffle(&mut rng);
    let n = tracks.len();
    let n_train = ((n as f64 * spec.train).round() as usize).clamp(1, n - 2);
    let n_val = ((n as f64 * spec.val).round() as usize).clamp(1, n - n_train - 1);
    let fold_of = |track: &(String, u64)| -> usize {
        let pos = tracks.iter().position(|t| t == track).expect("track listed");
        if pos < n_train {
            0
        } else if pos < n_train + n_val {
            1
        } else {
            2
        }
    };
    let mut folds = Folds {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (i, r) in records.iter().enumerate() {
        match fold_of(&(r.sequence.clone(), r.track_id)) {
            0 => folds.train.push(i),
            1 => folds.val.push(i),
            _ => folds.test.push(i),
        }
    }
    Ok(folds)
}

/// Track count per fold for a given split, in (train, val, test) order.
pub fn fold_track_counts(records: &[MetricRecord], folds: &Folds) -> (usize, usize, usize) {
    let count = |idx: &[usize]| {
        idx.iter()
            .map(|&i| (records[i].sequence.clone(), records[i].track_id))
            .collect::<BTreeSet<_>>()
            .len()
    };
    (count(&folds.train), count(&folds.val), count(&folds.test))
}

// ---------------------------------------------------------------------------
// Gradient-boosted trees
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: f64,
    },
}

impl TreeNode {
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        match self {
            TreeNode::Leaf { value } => *value,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] <= *threshold {
                    left.evaluate(x)
                } else {
                    right.evaluate(x)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtConfig {
    pub max_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    /// Fraction of rows sampled per tree; 1.0 disables subsampling.
    pub subsample: f64,
    /// Trees without validation improvement before training stops.
    pub early_stopping_patience: usize,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self {
            max_trees: 200,
            max_depth: 3,
            learning_rate: 0.1,
            min_leaf: 5,
            subsample: 1.0,
            early_stopping_patience: 20,
        }
    }
}

/// Boosted ensemble with its training configuration; fully determined by
/// (features, labels, config, seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub trees: Vec<TreeNode>,
    pub learning_rate: f64,
    pub initial_log_odds: f64,
    pub n_features: usize,
    pub config: GbtConfig,
    pub seed: u64,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl GbtModel {
    pub fn predict_raw(&self, x: &[f64]) -> Result<f64, MetaError> {
        if x.len() != self.n_features {
            return Err(MetaError::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let mut f = self.initial_log_odds;
        for tree in &self.trees {
            f += self.learning_rate * tree.evaluate(x);
        }
        Ok(f)
    }

    /// Probability of the positive class (IoU above the threshold), strictly
    /// inside (0, 1).
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, MetaError> {
        Ok(sigmoid(self.predict_raw(x)?).clamp(1e-15, 1.0 - 1e-15))
    }

    pub fn save(&self, path: &Path) -> Result<(), MetaError> {
        let file = VersionedGbt {
            version: 1,
            model: self.clone(),
        };
        let body = serde_json::to_string_pretty(&file).expect("model serializes");
        std::fs::write(path, body + "\n").map_err(|source| MetaError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, MetaError> {
        let body = std::fs::read_to_string(path).map_err(|source| MetaError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file: VersionedGbt = serde_json::from_str(&body).map_err(|e| MetaError::BadModel {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if file.version != 1 {
            return Err(MetaError::BadModel {
                path: path.display().to_string(),
                message: format!("unsupported version {}", file.version),
            });
        }
        Ok(file.model)
    }
}

#[derive(Serialize, Deserialize)]
struct VersionedGbt {
    version: u32,
    model: GbtModel,
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    gradients: &'a [f64],
    hessians: &'a [f64],
    sorted_by_feature: &'a [Vec<u32>],
    min_leaf: usize,
}

impl TreeBuilder<'_> {
    fn leaf(&self, rows: &[u32]) -> TreeNode {
        let g: f64 = rows.iter().map(|&i| self.gradients[i as usize]).sum();
        let h: f64 = rows.iter().map(|&i| self.hessians[i as usize]).sum();
        TreeNode::Leaf {
            value: if h > 1e-12 { g / h } else { 0.0 },
        }
    }

    fn build(&self, rows: &[u32], in_node: &mut [bool], depth: usize) -> TreeNode {
        if depth == 0 || rows.len() < 2 * self.min_leaf {
            return self.leaf(rows);
        }
        let total_sum: f64 = rows.iter().map(|&i| self.gradients[i as usize]).sum();
        let total_cnt = rows.len() as f64;
        let base_score = total_sum * total_sum / total_cnt;

        let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
        for (f, order) in self.sorted_by_feature.iter().enumerate() {
            let mut left_sum = 0.0;
            let mut left_cnt = 0usize;
            let mut prev_value: Option<f64> = None;
            for &i in order {
                if !in_node[i as usize] {
                    continue;
                }
                let value = self.x[i as usize][f];
                if let Some(pv) = prev_value {
                    if value > pv
                        && left_cnt >= self.min_leaf
                        && rows.len() - left_cnt >= self.min_leaf
                    {
                        let right_sum = total_sum - left_sum;
                        let right_cnt = total_cnt - left_cnt as f64;
                        let score = left_sum * left_sum / left_cnt as f64
                            + right_sum * right_sum / right_cnt;
                        let gain = score - base_score;
                        if best.map_or(gain > 1e-12, |(bg, _, _)| gain > bg + 1e-12) {
                            best = Some((gain, f, 0.5 * (pv + value)));
                        }
                    }
                }
                left_sum += self.gradients[i as usize];
                left_cnt += 1;
                prev_value = Some(value);
            }
        }

        let Some((_, feature, threshold)) = best else {
            return self.leaf(rows);
        };
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = rows
            .iter()
            .partition(|&&i| self.x[i as usize][feature] <= threshold);
        for &i in &right_rows {
            in_node[i as usize] = false;
        }
        let left = self.build(&left_rows, in_node, depth - 1);
        for &i in &left_rows {
            in_node[i as usize] = false;
        }
        for &i in &right_rows {
            in_node[i as usize] = true;
        }
        let right = self.build(&right_rows, in_node, depth - 1);
        for &i in &left_rows {
            in_node[i as usize] = true;
        }
        TreeNode::Split {
            feature,
            threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }
}

fn log_loss(probabilities: &[f64], labels: &[bool]) -> f64 {
    let mut loss = 0.0;
    for (&p, &y) in probabilities.iter().zip(labels) {
        let p = p.clamp(1e-15, 1.0 - 1e-15);
        loss -= if y { p.ln() } else { (1.0 - p).ln() };
    }
    loss / labels.len() as f64
}

/// Trains the boosted classifier. With a validation set, the tree count is
/// chosen by early stopping on validation log-loss and single-class training
/// data is rejected; without one (direct-fit mode) the configured tree count
/// is used as-is and a single-class input yields the constant prior model.
pub fn train_gbt(
    train_x: &[Vec<f64>],
    train_y: &[bool],
    validation: Option<(&[Vec<f64>], &[bool])>,
    config: &GbtConfig,
    seed: u64,
) -> Result<GbtModel, MetaError> {
    if train_x.is_empty() {
        return Err(MetaError::Empty);
    }
    let n = train_x.len();
    let n_features = train_x[0].len();
    let positives = train_y.iter().filter(|&&y| y).count();
    let single_class = positives == 0 || positives == n;
    if single_class && validation.is_some() {
        return Err(MetaError::SingleClass);
    }
    let prior = (positives as f64 / n as f64).clamp(1e-12, 1.0 - 1e-12);
    let mut model = GbtModel {
        trees: Vec::new(),
        learning_rate: config.learning_rate,
        initial_log_odds: (prior / (1.0 - prior)).ln(),
        n_features,
        config: config.clone(),
        seed,
    };
    if single_class {
        return Ok(model);
    }

    // presort rows per feature once; node scans reuse the global order
    let mut sorted_by_feature: Vec<Vec<u32>> = Vec::with_capacity(n_features);
    for f in 0..n_features {
        let mut order: Vec<u32> = (0..n as u32).collect();
        order.sort_by(|&a, &b| train_x[a as usize][f].total_cmp(&train_x[b as usize][f]));
        sorted_by_feature.push(order);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raw: Vec<f64> = vec![model.initial_log_odds; n];
    let mut val_raw: Vec<f64> = validation
        .map(|(vx, _)| {
            vx.iter()
                .map(|_| model.initial_log_odds)
                .collect::<Vec<f64>>()
        })
        .unwrap_or_default();
    let mut best_loss = f64::INFINITY;
    let mut best_len = 0usize;
    let mut since_best = 0usize;

    let mut gradients = vec![0.0; n];
    let mut hessians = vec![0.0; n];
    for _ in 0..config.max_trees {
        for i in 0..n {
            let p = sigmoid(raw[i]);
            gradients[i] = (if train_y[i] { 1.0 } else { 0.0 }) - p;
            hessians[i] = (p * (1.0 - p)).max(1e-12);
        }
        let rows: Vec<u32> = if config.subsample < 1.0 {
            let take = ((n as f64 * config.subsample).round() as usize).max(1);
            let mut all: Vec<u32> = (0..n as u32).collect();
            all.shuffle(&mut rng);
            let mut chosen = all[..take].to_vec();
            chosen.sort_unstable();
            chosen
        } else {
            let _ = rng.gen::<u64>(); // keep the stream moving either way
            (0..n as u32).collect()
        };
        let mut in_node = vec![false; n];
        for &i in &rows {
            in_node[i as usize] = true;
        }
        let builder = TreeBuilder {
            x: train_x,
            gradients: &gradients,
            hessians: &hessians,
            sorted_by_feature: &sorted_by_feature,
            min_leaf: config.min_leaf,
        };
        let tree = builder.build(&rows, &mut in_node, config.max_depth);
        for i in 0..n {
            raw[i] += config.learning_rate * tree.evaluate(&train_x[i]);
        }
        if let Some((vx, vy)) = validation {
            for (r, x) in val_raw.iter_mut().zip(vx) {
                *r += config.learning_rate * tree.evaluate(x);
            }
            model.trees.push(tree);
            let probs: Vec<f64> = val_raw.iter().map(|&r| sigmoid(r)).collect();
            let loss = log_loss(&probs, vy);
            if loss < best_loss - 1e-12 {
                best_loss = loss;
                best_len = model.trees.len();
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.early_stopping_patience {
                    break;
                }
            }
        } else {
            model.trees.push(tree);
        }
    }
    if validation.is_some() {
        model.trees.truncate(best_len);
    }
    Ok(model)
}

/// Batch probabilities for a feature matrix.
pub fn predict_batch(model: &GbtModel, xs: &[Vec<f64>]) -> Result<Vec<f64>, MetaError> {
    xs.iter().map(|x| model.predict_proba(x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::CenterPoint;
    use crate::sequence::Origin;

    fn record(sequence: &str, track_id: u64, frame: usize, iou_gt: Option<f64>) -> MetricRecord {
        MetricRecord {
            sequence: sequence.into(),
            track_id,
            frame,
            origin: Origin::Network,
            class_id: (track_id % 2) as u32,
            score: 0.5 + 0.01 * frame as f64,
            size: 10 + frame,
            size_in: 2,
            size_bd: 8,
            size_rel: 1.25,
            size_in_rel: 0.25,
            center: CenterPoint {
                v: frame as f64,
                h: 2.0 * frame as f64,
            },
            occlusion: 0.0,
            depth: None,
            depth_dev: None,
            size_dev: 0.0,
            center_dev: 0.0,
            survival: None,
            ratio: 1.0,
            deformation: 1.0,
            iou_gt,
        }
    }

    #[test]
    fn feature_vector_shapes() {
        let records: Vec<MetricRecord> = (0..3).map(|t| record("s", 1, t, None)).collect();
        let refs: Vec<&MetricRecord> = records.iter().collect();

        let spec0 = FeatureSpec::infer(&records, 0);
        let v0 = assemble_features(&refs, &spec0).unwrap();
        assert_eq!(v0.len(), 3);
        assert!(v0.iter().all(|v| v.len() == spec0.block_len()));

        let spec10 = FeatureSpec::infer(&records, 10);
        let v10 = assemble_features(&refs, &spec10).unwrap();
        assert!(v10.iter().all(|v| v.len() == 11 * spec10.block_len()));
    }

    #[test]
    fn short_history_replicates_oldest_block() {
        let records: Vec<MetricRecord> = (0..3).map(|t| record("s", 1, t, None)).collect();
        let refs: Vec<&MetricRecord> = records.iter().collect();
        let spec = FeatureSpec::infer(&records, 10);
        let m = spec.block_len();
        let vectors = assemble_features(&refs, &spec).unwrap();
        // for the newest record (t = 2): 9 replicated oldest blocks, then
        // the three real ones
        let v = &vectors[2];
        let oldest = &v[0..m];
        for k in 0..9 {
            assert_eq!(&v[k * m..(k + 1) * m], oldest, "block {k} replicates oldest");
        }
        let newest = &v[10 * m..11 * m];
        assert_ne!(newest, oldest);
    }

    #[test]
    fn label_rules() {
        let records = vec![
            record("s", 1, 0, Some(0.6)),
            record("s", 1, 1, Some(0.5)),
            record("s", 1, 2, Some(0.0)),
            record("s", 1, 3, Some(0.2)),
        ];
        let at_half = label_records(&records, 0.5).unwrap();
        assert_eq!(at_half, vec![true, true, false, false]);
        let at_zero = label_records(&records, 0.0).unwrap();
        assert_eq!(at_zero, vec![true, true, false, true]);

        let missing = vec![record("s", 1, 0, None)];
        assert!(matches!(
            label_records(&missing, 0.5),
            Err(MetaError::MissingField { what: "iou_gt", .. })
        ));
    }

    fn ten_track_records() -> Vec<MetricRecord> {
        let mut records = Vec::new();
        for track in 0..10u64 {
            for frame in 0..4 {
                records.push(record("s", track, frame, Some(0.8)));
            }
        }
        records
    }

    #[test]
    fn split_is_track_level_and_deterministic() {
        let records = ten_track_records();
        let spec = SplitSpec::new(42);
        let folds = split_dataset(&records, &spec).unwrap();
        assert_eq!(fold_track_counts(&records, &folds), (7, 1, 2));
        assert_eq!(folds, split_dataset(&records, &spec).unwrap());

        // no track appears in two folds
        let track_of = |i: usize| records[i].track_id;
        let train: BTreeSet<u64> = folds.train.iter().map(|&i| track_of(i)).collect();
        let val: BTreeSet<u64> = folds.val.iter().map(|&i| track_of(i)).collect();
        let test: BTreeSet<u64> = folds.test.iter().map(|&i| track_of(i)).collect();
        assert!(train.is_disjoint(&val));
        assert!(train.is_disjoint(&test));
        assert!(val.is_disjoint(&test));
    }

    #[test]
    fn split_fractions_within_one_track() {
        let mut records = Vec::new();
        for track in 0..37u64 {
            for frame in 0..3 {
                records.push(record("s", track, frame, Some(0.8)));
            }
        }
        for seed in 0..100 {
            let folds = split_dataset(&records, &SplitSpec::new(seed)).unwrap();
            let (tr, va, te) = fold_track_counts(&records, &folds);
            assert!((tr as f64 - 37.0 * 0.7).abs() <= 1.0);
            assert!((va as f64 - 37.0 * 0.1).abs() <= 1.0);
            assert!((te as f64 - 37.0 * 0.2).abs() <= 1.0);
            assert_eq!(tr + va + te, 37);
        }
    }

    #[test]
    fn too_few_tracks_is_an_error() {
        let records: Vec<MetricRecord> = (0..5).map(|t| record("s", t, 0, None)).collect();
        assert!(matches!(
            split_dataset(&records, &SplitSpec::new(1)),
            Err(MetaError::TooFewTracks { .. })
        ));
    }

    #[test]
    fn separable_line_reaches_full_training_accuracy() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
        let y: Vec<bool> = (0..40).map(|i| i >= 20).collect();
        let cfg = GbtConfig {
            max_trees: 20,
            ..GbtConfig::default()
        };
        let model = train_gbt(&x, &y, None, &cfg, 0).unwrap();
        let correct = x
            .iter()
            .zip(&y)
            .filter(|(xi, &yi)| (model.predict_proba(xi).unwrap() >= 0.5) == yi)
            .count();
        assert_eq!(correct, 40);
    }

    #[test]
    fn single_class_direct_fit_returns_prior() {
        let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64]).collect();
        let y = vec![true; 8];
        let model = train_gbt(&x, &y, None, &GbtConfig::default(), 0).unwrap();
        assert!(model.trees.is_empty());
        let p = model.predict_proba(&[3.0]).unwrap();
        assert!((p - 1.0).abs() < 1e-9);

        // with validation enabled the same input is rejected
        let err = train_gbt(&x, &y, Some((&x, &y)), &GbtConfig::default(), 0);
        assert!(matches!(err, Err(MetaError::SingleClass)));
    }

    #[test]
    fn xor_needs_depth_two() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..200 {
            let a = (i % 2) as f64;
            let b = ((i / 2) % 2) as f64;
            let jitter = (i as f64 * 0.001) % 0.05;
            x.push(vec![a + jitter, b - jitter]);
            y.push((a > 0.5) != (b > 0.5));
        }
        let cfg = GbtConfig {
            max_trees: 60,
            max_depth: 2,
            min_leaf: 2,
            ..GbtConfig::default()
        };
        let model = train_gbt(&x, &y, None, &cfg, 3).unwrap();
        let correct = x
            .iter()
            .zip(&y)
            .filter(|(xi, &yi)| (model.predict_proba(xi).unwrap() >= 0.5) == yi)
            .count();
        assert!(correct as f64 / y.len() as f64 >= 0.95);
    }

    #[test]
    fn zero_trees_predict_the_prior() {
        let model = GbtModel {
            trees: vec![],
            learning_rate: 0.1,
            initial_log_odds: (0.25f64 / 0.75).ln(),
            n_features: 2,
            config: GbtConfig::default(),
            seed: 0,
        };
        let p = model.predict_proba(&[1.0, 2.0]).unwrap();
        assert!((p - 0.25).abs() < 1e-12);
    }

    #[test]
    fn positive_tree_raises_every_probability() {
        let base = GbtModel {
            trees: vec![],
            learning_rate: 0.5,
            initial_log_odds: 0.0,
            n_features: 1,
            config: GbtConfig::default(),
            seed: 0,
        };
        let mut boosted = base.clone();
        boosted.trees.push(TreeNode::Split {
            feature: 0,
            threshold: 0.5,
            left: Box::new(TreeNode::Leaf { value: 0.3 }),
            right: Box::new(TreeNode::Leaf { value: 1.2 }),
        });
        for x in [-3.0, 0.0, 0.5, 2.0] {
            assert!(
                boosted.predict_proba(&[x]).unwrap() > base.predict_proba(&[x]).unwrap(),
                "all-positive leaves must increase the probability"
            );
        }
    }

    #[test]
    fn hand_built_tree_forward_pass() {
        let model = GbtModel {
            trees: vec![
                TreeNode::Split {
                    feature: 0,
                    threshold: 1.0,
                    left: Box::new(TreeNode::Leaf { value: -2.0 }),
                    right: Box::new(TreeNode::Leaf { value: 2.0 }),
                },
                TreeNode::Leaf { value: 1.0 },
            ],
            learning_rate: 0.5,
            initial_log_odds: 0.25,
            n_features: 1,
            config: GbtConfig::default(),
            seed: 0,
        };
        // x = 0: raw = 0.25 + 0.5 * (-2.0 + 1.0) = -0.25
        let p = model.predict_proba(&[0.0]).unwrap();
        assert!((p - sigmoid(-0.25)).abs() < 1e-12);
        // x = 3: raw = 0.25 + 0.5 * (2.0 + 1.0) = 1.75
        let p = model.predict_proba(&[3.0]).unwrap();
        assert!((p - sigmoid(1.75)).abs() < 1e-12);

        assert!(matches!(
            model.predict_proba(&[0.0, 1.0]),
            Err(MetaError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..120 {
            x.push(vec![(i % 13) as f64, (i % 7) as f64]);
            y.push((i % 13) >= 6);
        }
        let cfg = GbtConfig {
            max_trees: 30,
            subsample: 0.8,
            ..GbtConfig::default()
        };
        let a = train_gbt(&x, &y, None, &cfg, 9).unwrap();
        let b = train_gbt(&x, &y, None, &cfg, 9).unwrap();
        assert_eq!(a, b);
        for xi in &x {
            assert_eq!(a.predict_proba(xi).unwrap(), b.predict_proba(xi).unwrap());
        }
    }

    #[test]
    fn model_file_round_trip() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i % 5) as f64]).collect();
        let y: Vec<bool> = (0..30).map(|i| i % 3 == 0).collect();
        let model = train_gbt(&x, &y, None, &GbtConfig { max_trees: 5, ..GbtConfig::default() }, 1)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gbt.json");
        model.save(&path).unwrap();
        assert_eq!(GbtModel::load(&path).unwrap(), model);
    }
}
