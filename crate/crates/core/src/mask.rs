//! Binary instance masks stored as row-major run-length encodings, plus the
//! exact pixel-set algebra the rest of the pipeline is built on: overlap
//! ratios, IoU, geometric centers, inner/boundary decomposition, shifting and
//! bounding boxes.
//!
//! All counting is done in integer arithmetic; only the final ratios and
//! centers are floating point.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MaskError {
    #[error("mask grids differ: {0}x{1} vs {2}x{3}")]
    GridMismatch(usize, usize, usize, usize),
    #[error("operation requires a non-empty mask")]
    EmptyMask,
    #[error("run lengths sum to {got}, expected {expected} for a {height}x{width} grid")]
    BadRunSum {
        got: usize,
        expected: usize,
        height: usize,
        width: usize,
    },
    #[error("bitmap has {got} entries, expected {expected}")]
    BadBitmapLen { got: usize, expected: usize },
    #[error("pixel ({v},{h}) outside {height}x{width} grid")]
    PixelOutOfBounds {
        v: usize,
        h: usize,
        height: usize,
        width: usize,
    },
    #[error("invalid RLE text: {0}")]
    ParseRle(String),
}

/// Integer pixel coordinate: `v` is the row, `h` the column, both 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelCoord {
    pub v: usize,
    pub h: usize,
}

/// Real-valued point on (or off) the pixel grid, used for geometric centers
/// and motion-predicted positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterPoint {
    pub v: f64,
    pub h: f64,
}

impl CenterPoint {
    pub fn distance(&self, other: &CenterPoint) -> f64 {
        ((self.v - other.v).powi(2) + (self.h - other.h).powi(2)).sqrt()
    }
}

/// Tight axis-aligned bounding box over foreground pixels, all bounds inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub v_min: usize,
    pub v_max: usize,
    pub h_min: usize,
    pub h_max: usize,
}

impl BoundingBox {
    pub fn height(&self) -> usize {
        self.v_max - self.v_min + 1
    }

    pub fn width(&self) -> usize {
        self.h_max - self.h_min + 1
    }

    /// IoU of two boxes treated as pixel rectangles.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let v0 = self.v_min.max(other.v_min);
        let v1 = self.v_max.min(other.v_max);
        let h0 = self.h_min.max(other.h_min);
        let h1 = self.h_max.min(other.h_max);
        if v0 > v1 || h0 > h1 {
            return 0.0;
        }
        let inter = ((v1 - v0 + 1) * (h1 - h0 + 1)) as u64;
        let a = (self.height() * self.width()) as u64;
        let b = (other.height() * other.width()) as u64;
        inter as f64 / (a + b - inter) as f64
    }
}

/// Binary mask on a fixed grid, stored as alternating background/foreground
/// run lengths in row-major order. The first run is background and is the
/// only run allowed to be zero; runs may cross row boundaries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    height: usize,
    width: usize,
    runs: Vec<usize>,
}

impl PixelMask {
    /// Builds a mask from raw run lengths, canonicalizing zero-length runs
    /// away (except a leading background zero).
    pub fn from_runs(height: usize, width: usize, runs: Vec<usize>) -> Result<Self, MaskError> {
        let total: usize = runs.iter().sum();
        if total != height * width {
            return Err(MaskError::BadRunSum {
                got: total,
                expected: height * width,
                height,
                width,
            });
        }
        Ok(Self {
            height,
            width,
            runs: canonicalize(&runs),
        })
    }

    /// Encodes a row-major bitmap. Inverse of [`PixelMask::to_bitmap`].
    pub fn from_bitmap(height: usize, width: usize, bits: &[bool]) -> Result<Self, MaskError> {
        if bits.len() != height * width {
            return Err(MaskError::BadBitmapLen {
                got: bits.len(),
                expected: height * width,
            });
        }
        let mut runs = Vec::new();
        let mut current = false;
        let mut count = 0usize;
        for &b in bits {
            if b == current {
                count += 1;
            } else {
                runs.push(count);
                current = b;
                count = 1;
            }
        }
        runs.push(count);
        Ok(Self {
            height,
            width,
            runs,
        })
    }

    /// Mask with the given foreground pixels set.
    pub fn from_pixels<I>(height: usize, width: usize, pixels: I) -> Result<Self, MaskError>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut bits = vec![false; height * width];
        for (v, h) in pixels {
            if v >= height || h >= width {
                return Err(MaskError::PixelOutOfBounds {
                    v,
                    h,
                    height,
                    width,
                });
            }
            bits[v * width + h] = true;
        }
        Self::from_bitmap(height, width, &bits)
    }

    /// Axis-aligned filled rectangle, clipped to the grid.
    pub fn rect(
        height: usize,
        width: usize,
        v0: usize,
        h0: usize,
        rect_h: usize,
        rect_w: usize,
    ) -> Result<Self, MaskError> {
        let mut bits = vec![false; height * width];
        for v in v0..(v0 + rect_h).min(height) {
            for h in h0..(h0 + rect_w).min(width) {
                bits[v * width + h] = true;
            }
        }
        Self::from_bitmap(height, width, &bits)
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            runs: vec![height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn runs(&self) -> &[usize] {
        &self.runs
    }

    /// Foreground pixel count.
    pub fn area(&self) -> usize {
        self.runs.iter().skip(1).step_by(2).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn same_grid(&self, other: &PixelMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    fn check_grid(&self, other: &PixelMask) -> Result<(), MaskError> {
        if !self.same_grid(other) {
            return Err(MaskError::GridMismatch(
                self.height,
                self.width,
                other.height,
                other.width,
            ));
        }
        Ok(())
    }

    /// Foreground intervals `[start, end)` in flattened row-major index space.
    pub fn intervals(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.runs.len() / 2);
        let mut pos = 0usize;
        for (k, &len) in self.runs.iter().enumerate() {
            if k % 2 == 1 && len > 0 {
                out.push((pos, pos + len));
            }
            pos += len;
        }
        out
    }

    /// Foreground segments per row as `(h_start, h_end)` half-open column spans.
    pub fn row_segments(&self) -> Vec<Vec<(usize, usize)>> {
        let mut rows = vec![Vec::new(); self.height];
        for (start, end) in self.intervals() {
            let mut pos = start;
            while pos < end {
                let row = pos / self.width;
                let h0 = pos % self.width;
                let row_end = (row + 1) * self.width;
                let stop = end.min(row_end);
                rows[row].push((h0, h0 + (stop - pos)));
                pos = stop;
            }
        }
        rows
    }

    fn from_row_segments(height: usize, width: usize, rows: &[Vec<(usize, usize)>]) -> Self {
        // flatten to row-major intervals, merging across row boundaries
        let mut flat: Vec<(usize, usize)> = Vec::new();
        for (r, segs) in rows.iter().enumerate() {
            for &(a, b) in segs {
                let start = r * width + a;
                let end = r * width + b;
                match flat.last_mut() {
                    Some(last) if last.1 == start => last.1 = end,
                    _ => flat.push((start, end)),
                }
            }
        }
        let mut runs = Vec::with_capacity(2 * flat.len() + 1);
        let mut pos = 0usize;
        for (a, b) in flat {
            runs.push(a - pos);
            runs.push(b - a);
            pos = b;
        }
        runs.push(height * width - pos);
        Self {
            height,
            width,
            runs: canonicalize(&runs),
        }
    }

    /// Decodes to a row-major bitmap.
    pub fn to_bitmap(&self) -> Vec<bool> {
        let mut bits = vec![false; self.height * self.width];
        for (start, end) in self.intervals() {
            for b in &mut bits[start..end] {
                *b = true;
            }
        }
        bits
    }

    /// |self ∩ other|, exact.
    pub fn intersection_area(&self, other: &PixelMask) -> Result<usize, MaskError> {
        self.check_grid(other)?;
        let a = self.intervals();
        let b = other.intervals();
        let (mut i, mut j) = (0usize, 0usize);
        let mut inter = 0usize;
        while i < a.len() && j < b.len() {
            let lo = a[i].0.max(b[j].0);
            let hi = a[i].1.min(b[j].1);
            if lo < hi {
                inter += hi - lo;
            }
            if a[i].1 <= b[j].1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        Ok(inter)
    }

    /// Overlap ratio |self ∩ other| / |self|: how much of `self` is covered.
    /// Asymmetric; `other` may be an ignored region or another instance.
    pub fn overlap_ratio(&self, other: &PixelMask) -> Result<f64, MaskError> {
        let area = self.area();
        if area == 0 {
            return Err(MaskError::EmptyMask);
        }
        let inter = self.intersection_area(other)?;
        Ok(inter as f64 / area as f64)
    }

    /// Intersection over union, symmetric. Errors when both masks are empty.
    pub fn iou(&self, other: &PixelMask) -> Result<f64, MaskError> {
        let inter = self.intersection_area(other)?;
        let union = self.area() + other.area() - inter;
        if union == 0 {
            return Err(MaskError::EmptyMask);
        }
        Ok(inter as f64 / union as f64)
    }

    /// Arithmetic mean of (v, h) over foreground pixels, accumulated in
    /// integer arithmetic before the final division.
    pub fn geometric_center(&self) -> Result<CenterPoint, MaskError> {
        let area = self.area();
        if area == 0 {
            return Err(MaskError::EmptyMask);
        }
        let mut sum_v = 0u64;
        let mut sum_h = 0u64;
        for (r, segs) in self.row_segments().iter().enumerate() {
            for &(a, b) in segs {
                let count = (b - a) as u64;
                sum_v += r as u64 * count;
                // consecutive integers a..b sum to (a + b - 1) * count / 2
                sum_h += (a + b - 1) as u64 * count / 2;
            }
        }
        Ok(CenterPoint {
            v: sum_v as f64 / area as f64,
            h: sum_h as f64 / area as f64,
        })
    }

    /// Splits into (inner, boundary): a pixel is inner when all eight
    /// neighbors are foreground; image-border pixels are never inner.
    ///
    /// Computed bit-parallel on 64-pixel words: a horizontal 3-wide erosion
    /// per row, then a vertical AND of three adjacent rows.
    pub fn split_inner_boundary(&self) -> Result<(PixelMask, PixelMask), MaskError> {
        if self.is_empty() {
            return Err(MaskError::EmptyMask);
        }
        let words_per_row = self.width.div_ceil(64);
        let mut rows = vec![vec![0u64; words_per_row]; self.height];
        for (r, segs) in self.row_segments().iter().enumerate() {
            for &(a, b) in segs {
                for h in a..b {
                    rows[r][h / 64] |= 1u64 << (h % 64);
                }
            }
        }
        // horizontal erosion: bit h survives if h-1, h, h+1 all set
        let h_eroded: Vec<Vec<u64>> = rows
            .iter()
            .map(|w| {
                let left = shift_up(w);
                let right = shift_down(w);
                w.iter()
                    .zip(left.iter().zip(right.iter()))
                    .map(|(&c, (&l, &r))| c & l & r)
                    .collect::<Vec<u64>>()
            })
            .collect();
        let mut inner_bits = vec![false; self.height * self.width];
        for v in 1..self.height.saturating_sub(1) {
            for h in 1..self.width.saturating_sub(1) {
                let word = h / 64;
                let bit = 1u64 << (h % 64);
                if h_eroded[v - 1][word] & h_eroded[v][word] & h_eroded[v + 1][word] & bit == bit {
                    inner_bits[v * self.width + h] = true;
                }
            }
        }
        let inner = PixelMask::from_bitmap(self.height, self.width, &inner_bits)?;
        let fg = self.to_bitmap();
        let boundary_bits: Vec<bool> = fg
            .iter()
            .zip(inner_bits.iter())
            .map(|(&f, &i)| f && !i)
            .collect();
        let boundary = PixelMask::from_bitmap(self.height, self.width, &boundary_bits)?;
        Ok((inner, boundary))
    }

    /// Translates every foreground pixel by `(dv, dh)`, dropping pixels that
    /// leave the grid. The result may be empty.
    pub fn shift(&self, dv: i64, dh: i64) -> PixelMask {
        let mut rows: Vec<Vec<(usize, usize)>> = vec![Vec::new(); self.height];
        for (r, segs) in self.row_segments().iter().enumerate() {
            let tv = r as i64 + dv;
            if tv < 0 || tv >= self.height as i64 {
                continue;
            }
            for &(a, b) in segs {
                let ta = a as i64 + dh;
                let tb = b as i64 + dh;
                let ca = ta.max(0);
                let cb = tb.min(self.width as i64);
                if ca < cb {
                    rows[tv as usize].push((ca as usize, cb as usize));
                }
            }
        }
        PixelMask::from_row_segments(self.height, self.width, &rows)
    }

    /// Tight bounding box over foreground pixels.
    pub fn bounding_box(&self) -> Result<BoundingBox, MaskError> {
        let segs = self.row_segments();
        let mut bb: Option<BoundingBox> = None;
        for (r, row) in segs.iter().enumerate() {
            for &(a, b) in row {
                let bb = bb.get_or_insert(BoundingBox {
                    v_min: r,
                    v_max: r,
                    h_min: a,
                    h_max: b - 1,
                });
                bb.v_min = bb.v_min.min(r);
                bb.v_max = bb.v_max.max(r);
                bb.h_min = bb.h_min.min(a);
                bb.h_max = bb.h_max.max(b - 1);
            }
        }
        bb.ok_or(MaskError::EmptyMask)
    }

    /// Pixelwise union. Grids must match.
    pub fn union_with(&self, other: &PixelMask) -> Result<PixelMask, MaskError> {
        self.check_grid(other)?;
        let mut bits = self.to_bitmap();
        for (start, end) in other.intervals() {
            for b in &mut bits[start..end] {
                *b = true;
            }
        }
        PixelMask::from_bitmap(self.height, self.width, &bits)
    }

    /// Union of many masks on a shared grid; `None` when the iterator is empty.
    pub fn union_of<'a, I>(masks: I) -> Result<Option<PixelMask>, MaskError>
    where
        I: IntoIterator<Item = &'a PixelMask>,
    {
        let mut acc: Option<PixelMask> = None;
        for m in masks {
            acc = Some(match acc {
                None => m.clone(),
                Some(a) => a.union_with(m)?,
            });
        }
        Ok(acc)
    }
}

fn canonicalize(runs: &[usize]) -> Vec<usize> {
    // drop zero-length runs and merge equal-parity neighbors
    let mut merged: Vec<(bool, usize)> = Vec::new();
    for (k, &len) in runs.iter().enumerate() {
        if len == 0 {
            continue;
        }
        let fg = k % 2 == 1;
        match merged.last_mut() {
            Some((f, l)) if *f == fg => *l += len,
            _ => merged.push((fg, len)),
        }
    }
    let mut out = Vec::with_capacity(merged.len() + 1);
    if merged.first().is_none_or(|&(fg, _)| fg) {
        out.push(0);
    }
    out.extend(merged.into_iter().map(|(_, len)| len));
    out
}

/// Bit h of the result holds bit h-1 of the input (h-1 < 0 reads as 0).
fn shift_up(words: &[u64]) -> Vec<u64> {
    let mut out = vec![0u64; words.len()];
    let mut carry = 0u64;
    for (i, &w) in words.iter().enumerate() {
        out[i] = (w << 1) | carry;
        carry = w >> 63;
    }
    out
}

/// Bit h of the result holds bit h+1 of the input (h+1 past the end reads as 0).
fn shift_down(words: &[u64]) -> Vec<u64> {
    let mut out = vec![0u64; words.len()];
    let mut carry = 0u64;
    for (i, &w) in words.iter().enumerate().rev() {
        out[i] = (w >> 1) | (carry << 63);
        carry = w & 1;
    }
    out
}

/// Rounds to the nearest integer with .5 ties going away from zero, the
/// convention used for all center-difference shift vectors.
pub fn round_shift(x: f64) -> i64 {
    x.round() as i64
}

impl fmt::Display for PixelMask {
    /// Text form `size:[H,W]; counts:[c0,c1,...]`, used verbatim in frame files.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "size:[{},{}]; counts:[", self.height, self.width)?;
        for (k, r) in self.runs.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{r}")?;
        }
        write!(f, "]")
    }
}

impl FromStr for PixelMask {
    type Err = MaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |m: &str| MaskError::ParseRle(format!("{m}: {s:.60}"));
        let s = s.trim();
        let rest = s
            .strip_prefix("size:[")
            .ok_or_else(|| err("expected 'size:['"))?;
        let (dims, rest) = rest
            .split_once(']')
            .ok_or_else(|| err("unterminated size"))?;
        let (h, w) = dims.split_once(',').ok_or_else(|| err("expected 'H,W'"))?;
        let height: usize = h.trim().parse().map_err(|_| err("bad height"))?;
        let width: usize = w.trim().parse().map_err(|_| err("bad width"))?;
        let rest = rest
            .strip_prefix(';')
            .ok_or_else(|| err("expected ';' after size"))?;
        let rest = rest
            .trim_start()
            .strip_prefix("counts:[")
            .ok_or_else(|| err("expected 'counts:['"))?;
        let counts_str = rest
            .strip_suffix(']')
            .ok_or_else(|| err("unterminated counts"))?;
        let mut runs = Vec::new();
        if !counts_str.trim().is_empty() {
            for tok in counts_str.split(',') {
                runs.push(tok.trim().parse().map_err(|_| err("bad count"))?);
            }
        }
        PixelMask::from_runs(height, width, runs)
    }
}

impl Serialize for PixelMask {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PixelMask {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
