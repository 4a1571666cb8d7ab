//! Sequence data model and file formats: per-frame prediction/ground-truth
//! files, ignored-region masks, PFM depth maps and the `sequence.json`
//! manifest, plus a deterministic synthetic scene generator and an adapter
//! for KITTI-MOTS-style annotation dumps.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{MaskError, PixelMask};

#[derive(Debug, Error)]
pub enum SequenceError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("no frames in sequence at {0}")]
    NoFrames(String),
    #[error("frame {frame}: {message}")]
    BadFrame { frame: usize, message: String },
    #[error("mask error: {0}")]
    Mask(#[from] MaskError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid synthetic config: {0}")]
    BadConfig(String),
}

fn io_err(path: &Path, source: std::io::Error) -> SequenceError {
    SequenceError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Whether an instance came out of the segmentation network or was
/// reconstructed by the false-negative detection algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Network,
    Detected,
}

/// One predicted instance: mask, class, confidence score and, once the
/// tracker has run, a track id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstancePrediction {
    pub mask: PixelMask,
    pub class_id: u32,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<u64>,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthInstance {
    pub mask: PixelMask,
    pub class_id: u32,
    pub gt_track_id: u64,
}

/// Per-pixel depth estimate aligned with a frame grid, in depth units
/// (meters for real data). Values are finite and positive.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl DepthMap {
    pub fn constant(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    /// Mean depth over the mask's foreground pixels; `None` for empty masks.
    pub fn mean_over(&self, mask: &PixelMask) -> Option<f64> {
        let area = mask.area();
        if area == 0 {
            return None;
        }
        let mut sum = 0.0f64;
        for (start, end) in mask.intervals() {
            for &v in &self.values[start..end] {
                sum += v as f64;
            }
        }
        Some(sum / area as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub height: usize,
    pub width: usize,
    pub instances: Vec<InstancePrediction>,
    pub ignored: Option<PixelMask>,
    pub depth: Option<DepthMap>,
}

impl Frame {
    pub fn new(index: usize, height: usize, width: usize) -> Self {
        Self {
            index,
            height,
            width,
            instances: Vec::new(),
            ignored: None,
            depth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtFrame {
    pub index: usize,
    pub height: usize,
    pub width: usize,
    pub instances: Vec<GroundTruthInstance>,
}

impl GtFrame {
    pub fn new(index: usize, height: usize, width: usize) -> Self {
        Self {
            index,
            height,
            width,
            instances: Vec::new(),
        }
    }
}

/// An image sequence's predictions plus, when available, parallel ground
/// truth. Frames are stored in order; `frames[t].index == t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub fps: f64,
    pub frames: Vec<Frame>,
    pub gt: Option<Vec<GtFrame>>,
}

impl Sequence {
    pub fn new(name: impl Into<String>, height: usize, width: usize, fps: f64) -> Self {
        Self {
            name: name.into(),
            height,
            width,
            fps,
            frames: Vec::new(),
            gt: None,
        }
    }

    /// Checks grid consistency, score ranges, non-empty masks and track-id
    /// uniqueness per frame.
    pub fn validate(&self) -> Result<(), SequenceError> {
        let bad = |frame: usize, message: String| SequenceError::BadFrame { frame, message };
        for frame in &self.frames {
            if frame.height != self.height || frame.width != self.width {
                return Err(bad(frame.index, "frame grid differs from sequence".into()));
            }
            let mut seen = std::collections::BTreeSet::new();
            for (k, inst) in frame.instances.iter().enumerate() {
                if inst.mask.height() != self.height || inst.mask.width() != self.width {
                    return Err(bad(frame.index, format!("instance {k} grid mismatch")));
                }
                if inst.mask.is_empty() {
                    return Err(bad(frame.index, format!("instance {k} has an empty mask")));
                }
                if !(0.0..=1.0).contains(&inst.score) {
                    return Err(bad(frame.index, format!("instance {k} score {}", inst.score)));
                }
                if let Some(id) = inst.track_id {
                    if !seen.insert(id) {
                        return Err(bad(frame.index, format!("duplicate track id {id}")));
                    }
                }
            }
            if let Some(ign) = &frame.ignored {
                if ign.height() != self.height || ign.width() != self.width {
                    return Err(bad(frame.index, "ignored-region grid mismatch".into()));
                }
            }
            if let Some(d) = &frame.depth {
                if d.height != self.height || d.width != self.width {
                    return Err(bad(frame.index, "depth grid mismatch".into()));
                }
            }
        }
        if let Some(gt) = &self.gt {
            for gf in gt {
                let mut ids = std::collections::BTreeSet::new();
                for g in &gf.instances {
                    if g.mask.is_empty() {
                        return Err(bad(gf.index, "gt instance with empty mask".into()));
                    }
                    if !ids.insert(g.gt_track_id) {
                        return Err(bad(
                            gf.index,
                            format!("duplicate gt track id {}", g.gt_track_id),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    name: String,
    height: usize,
    width: usize,
    fps: f64,
    frames: Vec<String>,
    /// Score threshold the detector applied before dumping; provenance only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score_threshold: Option<f64>,
}

fn frame_file(prefix: &str, index: usize, ext: &str) -> String {
    format!("{prefix}_{index:06}.{ext}")
}

/// Writes the manifest layout: `sequence.json`, `pred_%06d.txt`,
/// `gt_%06d.txt`, `ign_%06d.txt` and `depth_%06d.pfm`.
pub fn save_sequence(dir: &Path, seq: &Sequence) -> Result<(), SequenceError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut frame_names = Vec::with_capacity(seq.frames.len());
    for frame in &seq.frames {
        let pred_name = frame_file("pred", frame.index, "txt");
        let pred_path = dir.join(&pred_name);
        let mut out = String::new();
        for inst in &frame.instances {
            out.push_str(&serde_json::to_string(inst).expect("instance serializes"));
            out.push('\n');
        }
        fs::write(&pred_path, out).map_err(|e| io_err(&pred_path, e))?;
        if let Some(ign) = &frame.ignored {
            let p = dir.join(frame_file("ign", frame.index, "txt"));
            fs::write(&p, format!("{ign}\n")).map_err(|e| io_err(&p, e))?;
        }
        if let Some(depth) = &frame.depth {
            let p = dir.join(frame_file("depth", frame.index, "pfm"));
            write_pfm(&p, depth)?;
        }
        if let Some(gt) = &seq.gt {
            let gf = &gt[frame.index];
            let p = dir.join(frame_file("gt", frame.index, "txt"));
            let mut out = String::new();
            for inst in &gf.instances {
                out.push_str(&serde_json::to_string(inst).expect("gt instance serializes"));
                out.push('\n');
            }
            fs::write(&p, out).map_err(|e| io_err(&p, e))?;
        }
        frame_names.push(pred_name);
    }
    let manifest = Manifest {
        name: seq.name.clone(),
        height: seq.height,
        width: seq.width,
        fps: seq.fps,
        frames: frame_names,
        score_threshold: None,
    };
    let p = dir.join("sequence.json");
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&p, body + "\n").map_err(|e| io_err(&p, e))
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, SequenceError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| SequenceError::Parse {
            path: path.display().to_string(),
            line: k + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Loads a sequence directory written by [`save_sequence`]. Ground truth,
/// ignored regions and depth maps are picked up when the sibling files exist.
pub fn load_sequence(dir: &Path) -> Result<Sequence, SequenceError> {
    let manifest_path = dir.join("sequence.json");
    if !manifest_path.exists() {
        return Err(SequenceError::NoFrames(dir.display().to_string()));
    }
    let body = fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&body).map_err(|e| SequenceError::Parse {
        path: manifest_path.display().to_string(),
        line: 1,
        message: e.to_string(),
    })?;
    if manifest.frames.is_empty() {
        return Err(SequenceError::NoFrames(dir.display().to_string()));
    }
    let mut seq = Sequence::new(manifest.name, manifest.height, manifest.width, manifest.fps);
    let mut gt_frames: Vec<GtFrame> = Vec::new();
    let mut any_gt = false;
    for (t, pred_name) in manifest.frames.iter().enumerate() {
        let pred_path = dir.join(pred_name);
        let mut frame = Frame::new(t, manifest.height, manifest.width);
        frame.instances = read_jsonl(&pred_path)?;

        let ign_path = dir.join(frame_file("ign", t, "txt"));
        if ign_path.exists() {
            let text = fs::read_to_string(&ign_path).map_err(|e| io_err(&ign_path, e))?;
            let mask: PixelMask =
                text.trim()
                    .parse()
                    .map_err(|e: MaskError| SequenceError::Parse {
                        path: ign_path.display().to_string(),
                        line: 1,
                        message: e.to_string(),
                    })?;
            frame.ignored = Some(mask);
        }
        let depth_path = dir.join(frame_file("depth", t, "pfm"));
        if depth_path.exists() {
            frame.depth = Some(read_pfm(&depth_path)?);
        }
        seq.frames.push(frame);

        let gt_path = dir.join(frame_file("gt", t, "txt"));
        let mut gf = GtFrame::new(t, manifest.height, manifest.width);
        if gt_path.exists() {
            any_gt = true;
            gf.instances = read_jsonl(&gt_path)?;
        }
        gt_frames.push(gf);
    }
    if any_gt {
        seq.gt = Some(gt_frames);
    }
    seq.validate()?;
    Ok(seq)
}

// ---------------------------------------------------------------------------
// PFM depth maps
// ---------------------------------------------------------------------------

/// Writes a grayscale PFM ("Pf") file: little-endian 32-bit floats, scanlines
/// bottom-to-top per the format convention.
pub fn write_pfm(path: &Path, depth: &DepthMap) -> Result<(), SequenceError> {
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let header = format!("Pf\n{} {}\n-1.0\n", depth.width, depth.height);
    file.write_all(header.as_bytes())
        .map_err(|e| io_err(path, e))?;
    let mut buf = Vec::with_capacity(depth.values.len() * 4);
    for row in (0..depth.height).rev() {
        for col in 0..depth.width {
            buf.extend_from_slice(&depth.values[row * depth.width + col].to_le_bytes());
        }
    }
    file.write_all(&buf).map_err(|e| io_err(path, e))
}

pub fn read_pfm(path: &Path) -> Result<DepthMap, SequenceError> {
    let parse = |message: String| SequenceError::Parse {
        path: path.display().to_string(),
        line: 1,
        message,
    };
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    // header: three whitespace-terminated tokens, then binary data
    let mut pos = 0usize;
    let mut token = |pos: &mut usize| -> Result<String, SequenceError> {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(parse("truncated header".into()));
        }
        let tok = String::from_utf8_lossy(&bytes[start..*pos]).into_owned();
        *pos += 1; // single whitespace terminator
        Ok(tok)
    };
    let magic = token(&mut pos)?;
    if magic != "Pf" {
        return Err(parse(format!("expected 'Pf' magic, got {magic:?}")));
    }
    let width: usize = token(&mut pos)?
        .parse()
        .map_err(|_| parse("bad width".into()))?;
    let height: usize = token(&mut pos)?
        .parse()
        .map_err(|_| parse("bad height".into()))?;
    let scale: f64 = token(&mut pos)?
        .parse()
        .map_err(|_| parse("bad scale".into()))?;
    if scale >= 0.0 {
        return Err(parse("big-endian PFM not supported".into()));
    }
    let expected = height * width * 4;
    if bytes.len() - pos < expected {
        return Err(parse(format!(
            "expected {expected} data bytes, found {}",
            bytes.len() - pos
        )));
    }
    let data = &bytes[pos..pos + expected];
    let mut values = vec![0.0f32; height * width];
    for row_from_bottom in 0..height {
        let row = height - 1 - row_from_bottom;
        for col in 0..width {
            let off = (row_from_bottom * width + col) * 4;
            let v = f32::from_le_bytes(data[off..off + 4].try_into().unwrap());
            if !v.is_finite() || v <= 0.0 {
                return Err(parse(format!("non-positive depth value {v}")));
            }
            values[row * width + col] = v;
        }
    }
    Ok(DepthMap {
        height,
        width,
        values,
    })
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
}

/// Configuration for the synthetic scene generator. The same config (and in
/// particular the same seed) always produces the same scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_sequences: usize,
    pub frames_per_sequence: usize,
    pub height: usize,
    pub width: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_extent: usize,
    pub max_extent: usize,
    /// Per-axis velocity is an integer in [-max_speed, max_speed].
    pub max_speed: i64,
    /// Probability that a true detection is dropped in a frame.
    pub dropout: f64,
    /// Per object slot per frame, probability of injecting a spurious instance.
    pub fp_rate: f64,
    pub score_mean: f64,
    pub score_sigma: f64,
    pub fp_score_range: (f64, f64),
    pub object_depth_range: (f64, f64),
    pub background_depth: f64,
    pub with_depth: bool,
    pub num_classes: u32,
    /// Constrain starts so trajectories never clip at borders (when feasible).
    pub keep_inside: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_sequences: 1,
            frames_per_sequence: 100,
            height: 96,
            width: 96,
            min_objects: 5,
            max_objects: 5,
            min_extent: 8,
            max_extent: 14,
            max_speed: 1,
            dropout: 0.1,
            fp_rate: 0.1,
            score_mean: 0.9,
            score_sigma: 0.15,
            fp_score_range: (0.2, 0.6),
            object_depth_range: (5.0, 30.0),
            background_depth: 80.0,
            with_depth: true,
            num_classes: 2,
            keep_inside: false,
            seed: 0,
        }
    }
}

struct SynthObject {
    shape: Vec<(usize, usize)>, // pixel offsets relative to (0, 0)
    start: (i64, i64),
    velocity: (i64, i64),
    class_id: u32,
    depth: f32,
}

impl SynthObject {
    fn mask_at(&self, t: usize, height: usize, width: usize) -> PixelMask {
        let dv = self.start.0 + t as i64 * self.velocity.0;
        let dh = self.start.1 + t as i64 * self.velocity.1;
        let mut bits = vec![false; height * width];
        for &(ov, oh) in &self.shape {
            let v = ov as i64 + dv;
            let h = oh as i64 + dh;
            if v >= 0 && v < height as i64 && h >= 0 && h < width as i64 {
                bits[v as usize * width + h as usize] = true;
            }
        }
        PixelMask::from_bitmap(height, width, &bits).expect("bitmap sized to grid")
    }
}

fn shape_pixels(kind: ShapeKind, extent_v: usize, extent_h: usize) -> Vec<(usize, usize)> {
    let mut px = Vec::new();
    match kind {
        ShapeKind::Rectangle => {
            for v in 0..extent_v {
                for h in 0..extent_h {
                    px.push((v, h));
                }
            }
        }
        ShapeKind::Ellipse => {
            let av = extent_v as f64 / 2.0;
            let ah = extent_h as f64 / 2.0;
            for v in 0..extent_v {
                for h in 0..extent_h {
                    let dv = (v as f64 + 0.5 - av) / av;
                    let dh = (h as f64 + 0.5 - ah) / ah;
                    if dv * dv + dh * dh <= 1.0 {
                        px.push((v, h));
                    }
                }
            }
        }
    }
    px
}

/// Generates `num_sequences` synthetic sequences: rigid shapes with constant
/// integer velocities (clipped at borders) as ground truth, and predictions
/// derived from them by dropout, spurious-instance injection and score noise.
pub fn generate_scene(cfg: &SynthConfig) -> Result<Vec<Sequence>, SequenceError> {
    if cfg.height < 8 || cfg.width < 8 {
        return Err(SequenceError::BadConfig(format!(
            "grid {}x{} too small, need at least 8x8",
            cfg.height, cfg.width
        )));
    }
    if cfg.frames_per_sequence == 0 {
        return Err(SequenceError::BadConfig("frames_per_sequence is 0".into()));
    }
    if cfg.min_objects > cfg.max_objects || cfg.min_extent > cfg.max_extent {
        return Err(SequenceError::BadConfig("empty sampling range".into()));
    }
    if cfg.min_extent < 2 || cfg.max_extent >= cfg.height.min(cfg.width) {
        return Err(SequenceError::BadConfig("object extent out of range".into()));
    }
    for p in [cfg.dropout, cfg.fp_rate] {
        if !(0.0..=1.0).contains(&p) {
            return Err(SequenceError::BadConfig(format!(
                "probability {p} not in [0,1]"
            )));
        }
    }
    let mut sequences = Vec::with_capacity(cfg.num_sequences);
    for seq_idx in 0..cfg.num_sequences {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(seq_idx as u64 + 1);
        sequences.push(generate_one(cfg, seq_idx, &mut rng));
    }
    Ok(sequences)
}

fn sample_start(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    extent: usize,
    velocity: (i64, i64),
) -> (i64, i64) {
    let free_v = (cfg.height - extent) as i64;
    let free_h = (cfg.width - extent) as i64;
    if !cfg.keep_inside {
        return (rng.gen_range(0..=free_v), rng.gen_range(0..=free_h));
    }
    // confine the whole trajectory to the grid when the travel fits
    let frames = (cfg.frames_per_sequence - 1) as i64;
    let band = |free: i64, vel: i64| -> (i64, i64) {
        let travel = vel * frames;
        let lo = 0.max(-travel);
        let hi = free.min(free - travel);
        if lo <= hi {
            (lo, hi)
        } else {
            (0, free) // trajectory cannot stay inside; fall back to clipping
        }
    };
    let (vlo, vhi) = band(free_v, velocity.0);
    let (hlo, hhi) = band(free_h, velocity.1);
    (rng.gen_range(vlo..=vhi), rng.gen_range(hlo..=hhi))
}

fn generate_one(cfg: &SynthConfig, seq_idx: usize, rng: &mut ChaCha8Rng) -> Sequence {
    let n_objects = rng.gen_range(cfg.min_objects..=cfg.max_objects);
    let mut objects = Vec::with_capacity(n_objects);
    for _ in 0..n_objects {
        let extent = rng.gen_range(cfg.min_extent..=cfg.max_extent);
        let kind = if rng.gen_bool(0.5) {
            ShapeKind::Rectangle
        } else {
            ShapeKind::Ellipse
        };
        let velocity = (
            rng.gen_range(-cfg.max_speed..=cfg.max_speed),
            rng.gen_range(-cfg.max_speed..=cfg.max_speed),
        );
        let start = sample_start(rng, cfg, extent, velocity);
        objects.push(SynthObject {
            shape: shape_pixels(kind, extent, extent),
            start,
            velocity,
            class_id: rng.gen_range(0..cfg.num_classes),
            depth: rng.gen_range(cfg.object_depth_range.0..=cfg.object_depth_range.1) as f32,
        });
    }

    let score_noise = Normal::new(0.0, cfg.score_sigma.max(1e-12)).expect("valid sigma");
    let mut seq = Sequence::new(format!("synth_{seq_idx:03}"), cfg.height, cfg.width, 10.0);
    let mut gt_frames = Vec::with_capacity(cfg.frames_per_sequence);
    for t in 0..cfg.frames_per_sequence {
        let mut frame = Frame::new(t, cfg.height, cfg.width);
        let mut gt_frame = GtFrame::new(t, cfg.height, cfg.width);

        // depth: paint objects far-to-near over a constant background
        let mut depth = if cfg.with_depth {
            Some(DepthMap::constant(
                cfg.height,
                cfg.width,
                cfg.background_depth as f32,
            ))
        } else {
            None
        };
        let mut order: Vec<usize> = (0..objects.len()).collect();
        order.sort_by(|&a, &b| objects[b].depth.total_cmp(&objects[a].depth));
        for obj_idx in order {
            let obj = &objects[obj_idx];
            let mask = obj.mask_at(t, cfg.height, cfg.width);
            if mask.is_empty() {
                continue;
            }
            if let Some(d) = depth.as_mut() {
                for (start, end) in mask.intervals() {
                    for v in &mut d.values[start..end] {
                        *v = obj.depth;
                    }
                }
            }
        }

        for (obj_idx, obj) in objects.iter().enumerate() {
            let mask = obj.mask_at(t, cfg.height, cfg.width);
            // sample per-object randomness unconditionally to keep the
            // stream aligned whether or not the object is visible
            let dropped = rng.gen_bool(cfg.dropout);
            let noise = score_noise.sample(rng);
            if mask.is_empty() {
                continue;
            }
            gt_frame.instances.push(GroundTruthInstance {
                mask: mask.clone(),
                class_id: obj.class_id,
                gt_track_id: obj_idx as u64,
            });
            if !dropped {
                let score = if cfg.score_sigma == 0.0 {
                    cfg.score_mean.clamp(0.0, 1.0)
                } else {
                    (cfg.score_mean + noise).clamp(0.0, 1.0)
                };
                frame.instances.push(InstancePrediction {
                    mask,
                    class_id: obj.class_id,
                    score,
                    track_id: None,
                    origin: Origin::Network,
                });
            }
        }

        // spurious detections
        for _ in 0..objects.len() {
            if cfg.fp_rate == 0.0 || !rng.gen_bool(cfg.fp_rate) {
                continue;
            }
            let extent = rng.gen_range(cfg.min_extent..=cfg.max_extent);
            let kind = if rng.gen_bool(0.5) {
                ShapeKind::Rectangle
            } else {
                ShapeKind::Ellipse
            };
            let v0 = rng.gen_range(0..=(cfg.height - extent));
            let h0 = rng.gen_range(0..=(cfg.width - extent));
            let pixels: Vec<(usize, usize)> = shape_pixels(kind, extent, extent)
                .into_iter()
                .map(|(v, h)| (v + v0, h + h0))
                .collect();
            let mask = PixelMask::from_pixels(cfg.height, cfg.width, pixels)
                .expect("spurious shape fits grid");
            frame.instances.push(InstancePrediction {
                mask,
                class_id: rng.gen_range(0..cfg.num_classes),
                score: rng.gen_range(cfg.fp_score_range.0..cfg.fp_score_range.1),
                track_id: None,
                origin: Origin::Network,
            });
        }

        frame.depth = depth;
        seq.frames.push(frame);
        gt_frames.push(gt_frame);
    }
    seq.gt = Some(gt_frames);
    seq
}

// ---------------------------------------------------------------------------
// KITTI-MOTS-style annotation import
// ---------------------------------------------------------------------------

/// Classes carried over from KITTI-MOTS dumps; everything else (including
/// the explicit ignore class 10) is merged into the frame's ignored region.
const KITTI_KNOWN_CLASSES: [u32; 2] = [1, 2];

/// Imports a per-sequence annotation file in the KITTI-MOTS text format:
/// one line per instance, `frame obj_id class_id height width coco_rle`.
/// Produces a sequence whose ground truth and ignored regions are filled in;
/// predictions are expected to arrive separately.
pub fn import_kitti_mots(path: &Path) -> Result<Sequence, SequenceError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "kitti".into());

    struct Row {
        frame: usize,
        obj_id: u64,
        class_id: u32,
        mask: PixelMask,
    }
    let mut rows: Vec<Row> = Vec::new();
    let mut grid: Option<(usize, usize)> = None;
    for (k, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |message: String| SequenceError::Parse {
            path: path.display().to_string(),
            line: k + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(parse(format!("expected 6 fields, found {}", fields.len())));
        }
        let frame: usize = fields[0]
            .parse()
            .map_err(|_| parse("bad frame index".into()))?;
        let obj_id: u64 = fields[1]
            .parse()
            .map_err(|_| parse("bad object id".into()))?;
        let class_id: u32 = fields[2]
            .parse()
            .map_err(|_| parse("bad class id".into()))?;
        let height: usize = fields[3].parse().map_err(|_| parse("bad height".into()))?;
        let width: usize = fields[4].parse().map_err(|_| parse("bad width".into()))?;
        match grid {
            None => grid = Some((height, width)),
            Some(g) if g != (height, width) => {
                return Err(parse(format!(
                    "grid {height}x{width} differs from sequence grid {}x{}",
                    g.0, g.1
                )));
            }
            _ => {}
        }
        let mask = decode_coco_rle(fields[5], height, width).map_err(parse)?;
        rows.push(Row {
            frame,
            obj_id,
            class_id,
            mask,
        });
    }

    let (height, width) = grid.unwrap_or((0, 0));
    let n_frames = rows.iter().map(|r| r.frame + 1).max().unwrap_or(0);
    let mut seq = Sequence::new(name, height, width, 10.0);
    let mut gt: Vec<GtFrame> = (0..n_frames)
        .map(|t| GtFrame::new(t, height, width))
        .collect();
    seq.frames = (0..n_frames).map(|t| Frame::new(t, height, width)).collect();
    for row in rows {
        if KITTI_KNOWN_CLASSES.contains(&row.class_id) {
            gt[row.frame].instances.push(GroundTruthInstance {
                mask: row.mask,
                class_id: row.class_id,
                gt_track_id: row.obj_id,
            });
        } else {
            let frame = &mut seq.frames[row.frame];
            frame.ignored = Some(match frame.ignored.take() {
                None => row.mask,
                Some(acc) => acc.union_with(&row.mask)?,
            });
        }
    }
    if n_frames > 0 {
        seq.gt = Some(gt);
    }
    Ok(seq)
}

/// Decodes the COCO compressed RLE string form (6 bits per char, offset 48,
/// counts beyond the third stored as deltas) into a mask. COCO counts are
/// column-major; the result is re-encoded row-major.
pub fn decode_coco_rle(s: &str, height: usize, width: usize) -> Result<PixelMask, String> {
    let bytes = s.as_bytes();
    let mut counts: Vec<i64> = Vec::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        let mut x: i64 = 0;
        let mut k = 0u32;
        loop {
            if pos >= bytes.len() {
                return Err("truncated RLE string".into());
            }
            let c = bytes[pos] as i64 - 48;
            if !(0..64).contains(&c) {
                return Err(format!("invalid RLE character {:?}", bytes[pos] as char));
            }
            x |= (c & 0x1f) << (5 * k);
            pos += 1;
            k += 1;
            if c & 0x20 == 0 {
                if c & 0x10 != 0 {
                    x |= -1i64 << (5 * k);
                }
                break;
            }
        }
        if counts.len() > 2 {
            x += counts[counts.len() - 2];
        }
        counts.push(x);
    }
    let total: i64 = counts.iter().sum();
    if counts.iter().any(|&c| c < 0) || total != (height * width) as i64 {
        return Err(format!(
            "RLE counts sum to {total}, expected {}",
            height * width
        ));
    }
    // column-major decode, then transpose into row-major bits
    let mut col_major = vec![false; height * width];
    let mut idx = 0usize;
    for (k, &c) in counts.iter().enumerate() {
        let fg = k % 2 == 1;
        for _ in 0..c {
            col_major[idx] = fg;
            idx += 1;
        }
    }
    let mut bits = vec![false; height * width];
    for h in 0..width {
        for v in 0..height {
            bits[v * width + h] = col_major[h * height + v];
        }
    }
    PixelMask::from_bitmap(height, width, &bits).map_err(|e| e.to_string())
}

/// Encodes a mask into the COCO compressed RLE string form (column-major).
pub fn encode_coco_rle(mask: &PixelMask) -> String {
    let bits = mask.to_bitmap();
    let (height, width) = (mask.height(), mask.width());
    let mut counts: Vec<i64> = Vec::new();
    let mut current = false;
    let mut run = 0i64;
    for h in 0..width {
        for v in 0..height {
            let b = bits[v * width + h];
            if b == current {
                run += 1;
            } else {
                counts.push(run);
                current = b;
                run = 1;
            }
        }
    }
    counts.push(run);
    let mut out = String::new();
    for i in 0..counts.len() {
        let mut x = counts[i];
        if i > 2 {
            x -= counts[i - 2];
        }
        loop {
            let mut c = (x & 0x1f) as u8;
            x >>= 5;
            let more = if c & 0x10 != 0 { x != -1 } else { x != 0 };
            if more {
                c |= 0x20;
            }
            out.push((c + 48) as char);
            if !more {
                break;
            }
        }
    }
    out
}

/// Convenience wrapper: saves every generated sequence under `root/<name>/`.
pub fn save_generated(root: &Path, sequences: &[Sequence]) -> Result<Vec<PathBuf>, SequenceError> {
    let mut dirs = Vec::with_capacity(sequences.len());
    for seq in sequences {
        let dir = root.join(&seq.name);
        save_sequence(&dir, seq)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

/// Loads every sequence directory directly under `root`, sorted by name.
pub fn load_all(root: &Path) -> Result<Vec<Sequence>, SequenceError> {
    let mut dirs: Vec<PathBuf> = Vec::new();
    let entries = fs::read_dir(root).map_err(|e| io_err(root, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| io_err(root, e))?;
        if entry.path().join("sequence.json").exists() {
            dirs.push(entry.path());
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        // maybe root itself is a sequence directory
        if root.join("sequence.json").exists() {
            return Ok(vec![load_sequence(root)?]);
        }
        return Err(SequenceError::NoFrames(root.display().to_string()));
    }
    dirs.iter().map(|d| load_sequence(d)).collect()
}
