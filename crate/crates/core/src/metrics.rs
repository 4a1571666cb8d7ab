//! Per-instance uncertainty and geometry metrics: sizes and relative sizes,
//! depth statistics, occlusion, temporal deviations of depth/size/center,
//! aspect ratio and frame-to-frame deformation. One record is produced per
//! (track, frame); the full table is the meta classifier's input.
//!
//! The metrics deliberately use only information that is also available for
//! reconstructed instances, which have no softmax output.

use std::io::Write as IoWrite;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{round_shift, CenterPoint, MaskError, PixelMask};
use crate::sequence::{DepthMap, Frame, Origin};
use crate::track::{extrapolate, Track};

/// Temporal deviations look back this many frames.
pub const DEVIATION_WINDOW: usize = 5;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("mask error: {0}")]
    Mask(#[from] MaskError),
    #[error("track error: {0}")]
    Track(#[from] crate::track::TrackError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
}

/// Instance size decomposition. The inner part holds the pixels whose eight
/// neighbors all belong to the instance; the boundary is the rest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeMetrics {
    pub size: usize,
    pub size_in: usize,
    pub size_bd: usize,
    /// S / S_bd, at least 1.
    pub size_rel: f64,
    /// S_in / S_bd.
    pub size_in_rel: f64,
}

/// Mean depths over the instance and its inner/boundary parts, plus the
/// size-weighted relative variants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub mean: f64,
    pub mean_in: f64,
    pub mean_bd: f64,
    pub rel: f64,
    pub rel_in: f64,
}

/// The full metric vector for one instance in one frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRecord {
    pub sequence: String,
    pub track_id: u64,
    pub frame: usize,
    pub origin: Origin,
    pub class_id: u32,
    pub score: f64,
    pub size: usize,
    pub size_in: usize,
    pub size_bd: usize,
    pub size_rel: f64,
    pub size_in_rel: f64,
    pub center: CenterPoint,
    pub occlusion: f64,
    pub depth: Option<DepthMetrics>,
    /// Deviation of the mean depth from its extrapolated value.
    pub depth_dev: Option<f64>,
    pub size_dev: f64,
    pub center_dev: f64,
    /// Survival probability from the Cox model; filled in a second pass.
    pub survival: Option<f64>,
    /// Bounding-box height over width.
    pub ratio: f64,
    /// Center-aligned IoU against the previous frame's mask.
    pub deformation: f64,
    /// IoU against the best-overlapping ground truth; label-time only.
    pub iou_gt: Option<f64>,
}

pub fn size_metrics(mask: &PixelMask) -> Result<SizeMetrics, MetricsError> {
    let (inner, boundary) = mask.split_inner_boundary()?;
    let size = mask.area();
    let size_in = inner.area();
    let size_bd = boundary.area();
    Ok(SizeMetrics {
        size,
        size_in,
        size_bd,
        size_rel: size as f64 / size_bd as f64,
        size_in_rel: size_in as f64 / size_bd as f64,
    })
}

/// Depth means over the whole mask and its inner/boundary split. An empty
/// inner part contributes 0 by convention, so confident small instances do
/// not produce outlier values.
pub fn depth_metrics(
    mask: &PixelMask,
    depth: &DepthMap,
    sizes: &SizeMetrics,
) -> Result<DepthMetrics, MetricsError> {
    let (inner, boundary) = mask.split_inner_boundary()?;
    let mean = depth.mean_over(mask).expect("non-empty mask");
    let mean_in = depth.mean_over(&inner).unwrap_or(0.0);
    let mean_bd = depth.mean_over(&boundary).expect("boundary is non-empty");
    Ok(DepthMetrics {
        mean,
        mean_in,
        mean_bd,
        rel: mean * sizes.size_rel,
        rel_in: if sizes.size_in == 0 {
            0.0
        } else {
            mean_in * sizes.size_in_rel
        },
    })
}

/// Occlusion of an instance: its previous-frame mask is shifted to share the
/// current geometric center, then measured against the union of all other
/// instances in the current frame. No previous frame means 0.
pub fn occlusion(
    prev_mask: &PixelMask,
    curr_center: CenterPoint,
    others: &[&PixelMask],
) -> Result<f64, MetricsError> {
    if others.is_empty() {
        return Ok(0.0);
    }
    let prev_center = prev_mask.geometric_center()?;
    let shifted = prev_mask.shift(
        round_shift(curr_center.v - prev_center.v),
        round_shift(curr_center.h - prev_center.h),
    );
    if shifted.is_empty() {
        return Ok(0.0);
    }
    let union = PixelMask::union_of(others.iter().copied())?.expect("others is non-empty");
    Ok(shifted.overlap_ratio(&union)?)
}

/// |extrapolated - actual| over a short series; fewer than two points is a
/// deviation of 0 by convention.
pub fn temporal_deviation(series: &[(usize, f64)], frame: usize, actual: f64) -> f64 {
    if series.len() < 2 {
        return 0.0;
    }
    let predicted = extrapolate(series, frame).expect("series validated by caller");
    (predicted - actual).abs()
}

/// Euclidean distance between the extrapolated and actual center.
pub fn center_deviation(series: &[(usize, CenterPoint)], frame: usize, actual: CenterPoint) -> f64 {
    if series.len() < 2 {
        return 0.0;
    }
    let predicted = crate::track::predict_center(series, frame).expect("series validated");
    predicted.distance(&actual)
}

/// Bounding-box height to width ratio.
pub fn aspect_ratio(mask: &PixelMask) -> Result<f64, MetricsError> {
    let bb = mask.bounding_box()?;
    Ok(bb.height() as f64 / bb.width() as f64)
}

/// Shape change between consecutive frames: the previous mask is translated
/// to share the current mask's center, then the IoU of the aligned masks is
/// returned. Pure translation gives 1; the first frame defaults to 1.
pub fn deformation(prev_mask: &PixelMask, curr_mask: &PixelMask) -> Result<f64, MetricsError> {
    let prev_center = prev_mask.geometric_center()?;
    let curr_center = curr_mask.geometric_center()?;
    let aligned = prev_mask.shift(
        round_shift(curr_center.v - prev_center.v),
        round_shift(curr_center.h - prev_center.h),
    );
    if aligned.is_empty() {
        return Ok(0.0);
    }
    Ok(aligned.iou(curr_mask)?)
}

/// Computes the record for every entry of a track. `frames` must be the
/// tracked (and possibly detection-augmented) frames the track refers to.
pub fn compute_track_metrics(
    track: &Track,
    frames: &[Frame],
    sequence: &str,
) -> Result<Vec<MetricRecord>, MetricsError> {
    let mut records = Vec::with_capacity(track.len());
    for (&t, inst) in &track.entries {
        let frame = &frames[t];
        let sizes = size_metrics(&inst.mask)?;
        let center = inst.mask.geometric_center()?;

        let depth = match &frame.depth {
            Some(d) => Some(depth_metrics(&inst.mask, d, &sizes)?),
            None => None,
        };

        let prev = t
            .checked_sub(1)
            .and_then(|p| track.entries.get(&p).map(|i| (p, i)));
        let occ = match prev {
            Some((_, prev_inst)) => {
                let others: Vec<&PixelMask> = frame
                    .instances
                    .iter()
                    .filter(|other| other.track_id != Some(track.track_id))
                    .map(|other| &other.mask)
                    .collect();
                occlusion(&prev_inst.mask, center, &others)?
            }
            None => 0.0,
        };
        let deform = match prev {
            Some((_, prev_inst)) => deformation(&prev_inst.mask, &inst.mask)?,
            None => 1.0,
        };

        let window = t.saturating_sub(DEVIATION_WINDOW)..t;
        let mut size_series = Vec::new();
        let mut center_series = Vec::new();
        let mut depth_series = Vec::new();
        for (&pf, pinst) in track.entries.range(window) {
            size_series.push((pf, pinst.mask.area() as f64));
            center_series.push((pf, pinst.mask.geometric_center()?));
            if let Some(d) = &frames[pf].depth {
                if let Some(mean) = d.mean_over(&pinst.mask) {
                    depth_series.push((pf, mean));
                }
            }
        }
        let size_dev = temporal_deviation(&size_series, t, sizes.size as f64);
        let center_dev = center_deviation(&center_series, t, center);
        let depth_dev = depth
            .as_ref()
            .map(|d| temporal_deviation(&depth_series, t, d.mean));

        records.push(MetricRecord {
            sequence: sequence.to_string(),
            track_id: track.track_id,
            frame: t,
            origin: inst.origin,
            class_id: inst.class_id,
            score: inst.score,
            size: sizes.size,
            size_in: sizes.size_in,
            size_bd: sizes.size_bd,
            size_rel: sizes.size_rel,
            size_in_rel: sizes.size_in_rel,
            center,
            occlusion: occ,
            depth,
            depth_dev,
            size_dev,
            center_dev,
            survival: None,
            ratio: aspect_ratio(&inst.mask)?,
            deformation: deform,
            iou_gt: None,
        });
    }
    Ok(records)
}

/// Records for all tracks of a sequence, ordered by (frame, track_id).
pub fn compute_sequence_metrics(
    tracks: &[Track],
    frames: &[Frame],
    sequence: &str,
) -> Result<Vec<MetricRecord>, MetricsError> {
    let mut records = Vec::new();
    for track in tracks {
        records.extend(compute_track_metrics(track, frames, sequence)?);
    }
    records.sort_by(|a, b| (a.frame, a.track_id).cmp(&(b.frame, b.track_id)));
    Ok(records)
}

// ---------------------------------------------------------------------------
// metrics.csv
// ---------------------------------------------------------------------------

const CSV_HEADER: [&str; 24] = [
    "sequence",
    "track_id",
    "frame",
    "origin",
    "class_id",
    "score",
    "size",
    "size_in",
    "size_bd",
    "size_rel",
    "size_in_rel",
    "center_v",
    "center_h",
    "occlusion",
    "depth_mean",
    "depth_in",
    "depth_bd",
    "depth_rel",
    "depth_in_rel",
    "depth_dev",
    "size_dev",
    "center_dev",
    "ratio",
    "deformation",
];
const CSV_TAIL: [&str; 2] = ["survival", "iou_gt"];

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v}")).unwrap_or_default()
}

/// Writes `metrics.csv`: a `# config=<hash>` provenance line, a header, then
/// one row per record in (sequence, frame, track_id) order.
pub fn write_metrics_csv(
    path: &Path,
    records: &[MetricRecord],
    config_hash: &str,
) -> Result<(), MetricsError> {
    let io = |source: std::io::Error| MetricsError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = std::fs::File::create(path).map_err(io)?;
    writeln!(file, "# config={config_hash}").map_err(io)?;
    let mut w = csv::Writer::from_writer(file);
    let header: Vec<&str> = CSV_HEADER.iter().chain(CSV_TAIL.iter()).copied().collect();
    w.write_record(&header).map_err(|e| MetricsError::Parse {
        path: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    let mut ordered: Vec<&MetricRecord> = records.iter().collect();
    ordered.sort_by(|a, b| {
        (a.sequence.as_str(), a.frame, a.track_id).cmp(&(b.sequence.as_str(), b.frame, b.track_id))
    });
    for r in ordered {
        let d = r.depth;
        let row = vec![
            r.sequence.clone(),
            r.track_id.to_string(),
            r.frame.to_string(),
            match r.origin {
                Origin::Network => "network".into(),
                Origin::Detected => "detected".into(),
            },
            r.class_id.to_string(),
            format!("{}", r.score),
            r.size.to_string(),
            r.size_in.to_string(),
            r.size_bd.to_string(),
            format!("{}", r.size_rel),
            format!("{}", r.size_in_rel),
            format!("{}", r.center.v),
            format!("{}", r.center.h),
            format!("{}", r.occlusion),
            fmt_opt(d.map(|d| d.mean)),
            fmt_opt(d.map(|d| d.mean_in)),
            fmt_opt(d.map(|d| d.mean_bd)),
            fmt_opt(d.map(|d| d.rel)),
            fmt_opt(d.map(|d| d.rel_in)),
            fmt_opt(r.depth_dev),
            format!("{}", r.size_dev),
            format!("{}", r.center_dev),
            format!("{}", r.ratio),
            format!("{}", r.deformation),
            fmt_opt(r.survival),
            fmt_opt(r.iou_gt),
        ];
        w.write_record(&row).map_err(|e| MetricsError::Parse {
            path: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;
    }
    w.flush().map_err(io)
}

/// Reads `metrics.csv` back; returns the records and the embedded config hash.
pub fn read_metrics_csv(path: &Path) -> Result<(Vec<MetricRecord>, String), MetricsError> {
    let io = |source: std::io::Error| MetricsError::Io {
        path: path.display().to_string(),
        source,
    };
    let text = std::fs::read_to_string(path).map_err(io)?;
    let mut config_hash = String::new();
    if let Some(first) = text.lines().next() {
        if let Some(rest) = first.strip_prefix("# config=") {
            config_hash = rest.trim().to_string();
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let parse = |line: usize, message: String| MetricsError::Parse {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut records = Vec::new();
    for (k, row) in reader.records().enumerate() {
        let row = row.map_err(|e| parse(k + 2, e.to_string()))?;
        let get = |i: usize| row.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64, MetricsError> {
            get(i)
                .parse()
                .map_err(|_| parse(k + 2, format!("bad number in column {i}: {:?}", get(i))))
        };
        let opt = |i: usize| -> Result<Option<f64>, MetricsError> {
            if get(i).is_empty() {
                Ok(None)
            } else {
                num(i).map(Some)
            }
        };
        let depth = if get(14).is_empty() {
            None
        } else {
            Some(DepthMetrics {
                mean: num(14)?,
                mean_in: num(15)?,
                mean_bd: num(16)?,
                rel: num(17)?,
                rel_in: num(18)?,
            })
        };
        records.push(MetricRecord {
            sequence: get(0).to_string(),
            track_id: get(1).parse().map_err(|_| parse(k + 2, "bad track id".into()))?,
            frame: get(2).parse().map_err(|_| parse(k + 2, "bad frame".into()))?,
            origin: match get(3) {
                "network" => Origin::Network,
                "detected" => Origin::Detected,
                other => return Err(parse(k + 2, format!("bad origin {other:?}"))),
            },
            class_id: get(4).parse().map_err(|_| parse(k + 2, "bad class".into()))?,
            score: num(5)?,
            size: num(6)? as usize,
            size_in: num(7)? as usize,
            size_bd: num(8)? as usize,
            size_rel: num(9)?,
            size_in_rel: num(10)?,
            center: CenterPoint {
                v: num(11)?,
                h: num(12)?,
            },
            occlusion: num(13)?,
            depth,
            depth_dev: opt(19)?,
            size_dev: num(20)?,
            center_dev: num(21)?,
            ratio: num(22)?,
            deformation: num(23)?,
            survival: opt(24)?,
            iou_gt: opt(25)?,
        });
    }
    Ok((records, config_hash))
}
