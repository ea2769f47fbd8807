//! Binary masks on a fixed image grid, stored as row-major run-length codes.
//!
//! Runs alternate background/foreground starting with background. Only the
//! first run may be zero, which makes the encoding canonical: two masks are
//! pixel-equal iff their run vectors are equal. All set algebra walks the
//! run boundaries of both operands directly without decoding to bitmaps.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageGrid {
    pub width: u32,
    pub height: u32,
}

impl ImageGrid {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "grid must be at least 1x1, got {width}x{height}"
            )));
        }
        if u64::from(width) * u64::from(height) > u64::from(u32::MAX) {
            return Err(Error::invalid(format!("grid {width}x{height} exceeds 2^32 - 1 pixels")));
        }
        Ok(Self { width, height })
    }

    pub fn pixels(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }

    fn ensure_same(&self, other: &ImageGrid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch {
                left: self.to_string(),
                right: other.to_string(),
            });
        }
        Ok(())
    }
}

impl fmt::Display for ImageGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl FromStr for ImageGrid {
    type Err = Error;

    /// Parses `WxH`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("grid {s:?} is not of the form WxH"));
        let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        ImageGrid::new(w.trim().parse().map_err(|_| bad())?, h.trim().parse().map_err(|_| bad())?)
    }
}

/// Axis-aligned pixel rectangle covering `[x, x+w) × [y, y+h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "[u32; 4]", try_from = "[u32; 4]")]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(Error::invalid(format!("box {x},{y},{w},{h} has zero area")));
        }
        Ok(Self { x, y, w, h })
    }

    /// Clips a possibly out-of-range rectangle to the grid. `None` when
    /// nothing of it remains inside.
    pub fn clipped(x: i64, y: i64, w: i64, h: i64, grid: ImageGrid) -> Option<Self> {
        let x0 = x.max(0);
        let y0 = y.max(0);
        let x1 = (x + w).min(i64::from(grid.width));
        let y1 = (y + h).min(i64::from(grid.height));
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        Some(Self {
            x: x0 as u32,
            y: y0 as u32,
            w: (x1 - x0) as u32,
            h: (y1 - y0) as u32,
        })
    }

    pub fn clamp_to(&self, grid: ImageGrid) -> Option<Self> {
        Self::clipped(
            i64::from(self.x),
            i64::from(self.y),
            i64::from(self.w),
            i64::from(self.h),
            grid,
        )
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    pub fn intersection_area(&self, other: &BBox) -> u64 {
        let w = self.right().min(other.right()).saturating_sub(self.x.max(other.x));
        let h = self.bottom().min(other.bottom()).saturating_sub(self.y.max(other.y));
        u64::from(w) * u64::from(h)
    }

    pub fn fits(&self, grid: ImageGrid) -> bool {
        self.w > 0 && self.h > 0 && self.right() <= grid.width && self.bottom() <= grid.height
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl TryFrom<[u32; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [u32; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

/// Intersection-over-union of two rectangles.
pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return 0.0;
    }
    inter as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    grid: ImageGrid,
    runs: Vec<u32>,
}

impl Mask {
    /// Builds a mask from raw runs, validating the canonical form.
    pub fn from_runs(grid: ImageGrid, runs: Vec<u32>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::CorruptMask("no runs".into()));
        }
        if let Some(pos) = runs.iter().skip(1).position(|&r| r == 0) {
            return Err(Error::CorruptMask(format!("zero-length run at index {}", pos + 1)));
        }
        let sum: u64 = runs.iter().map(|&r| u64::from(r)).sum();
        if sum != grid.pixels() {
            return Err(Error::CorruptMask(format!(
                "runs sum to {sum}, grid {grid} has {} pixels",
                grid.pixels()
            )));
        }
        Ok(Self { grid, runs })
    }

    pub fn empty(grid: ImageGrid) -> Self {
        Self { grid, runs: vec![grid.pixels() as u32] }
    }

    pub fn full(grid: ImageGrid) -> Self {
        Self { grid, runs: vec![0, grid.pixels() as u32] }
    }

    /// Rasterizes a box, clipped to the grid.
    pub fn from_box(grid: ImageGrid, bbox: &BBox) -> Self {
        let Some(b) = bbox.clamp_to(grid) else {
            return Self::empty(grid);
        };
        let width = u64::from(grid.width);
        let mut out = RunBuilder::new();
        let mut pos = 0u64;
        for row in b.y..b.bottom() {
            let start = u64::from(row) * width + u64::from(b.x);
            out.push(false, start - pos);
            out.push(true, u64::from(b.w));
            pos = start + u64::from(b.w);
        }
        out.push(false, grid.pixels() - pos);
        out.finish(grid)
    }

    pub fn encode(bitmap: &[bool], grid: ImageGrid) -> Result<Self> {
        let expected = grid.pixels() as usize;
        if bitmap.len() != expected {
            return Err(Error::DimensionMismatch { expected, actual: bitmap.len() });
        }
        let mut out = RunBuilder::new();
        for &px in bitmap {
            out.push(px, 1);
        }
        Ok(out.finish(grid))
    }

    pub fn decode(&self) -> Vec<bool> {
        let mut bitmap = Vec::with_capacity(self.grid.pixels() as usize);
        for (i, &run) in self.runs.iter().enumerate() {
            bitmap.extend(std::iter::repeat_n(i % 2 == 1, run as usize));
        }
        bitmap
    }

    pub fn grid(&self) -> ImageGrid {
        self.grid
    }

    pub fn runs(&self) -> &[u32] {
        &self.runs
    }

    pub fn area(&self) -> u64 {
        self.runs.iter().skip(1).step_by(2).map(|&r| u64::from(r)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.len() == 1
    }

    /// Foreground spans as half-open flat pixel ranges.
    pub fn spans(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        let mut pos = 0u64;
        self.runs.iter().enumerate().filter_map(move |(i, &r)| {
            let start = pos;
            pos += u64::from(r);
            (i % 2 == 1).then_some((start, pos))
        })
    }

    pub fn complement(&self) -> Mask {
        let runs = if self.runs[0] == 0 {
            self.runs[1..].to_vec()
        } else {
            std::iter::once(0).chain(self.runs.iter().copied()).collect()
        };
        Mask { grid: self.grid, runs }
    }

    pub fn union(&self, other: &Mask) -> Result<Mask> {
        combine(self, other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &Mask) -> Result<Mask> {
        combine(self, other, |a, b| a && b)
    }

    pub fn difference(&self, other: &Mask) -> Result<Mask> {
        combine(self, other, |a, b| a && !b)
    }

    pub fn intersection_area(&self, other: &Mask) -> Result<u64> {
        let mut n = 0;
        walk(self, other, |a, b, len| {
            if a && b {
                n += len;
            }
        })?;
        Ok(n)
    }

    pub fn union_area(&self, other: &Mask) -> Result<u64> {
        let mut n = 0;
        walk(self, other, |a, b, len| {
            if a || b {
                n += len;
            }
        })?;
        Ok(n)
    }
}

impl fmt::Display for Mask {
    /// `w h r0 r1 ...`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.grid.width, self.grid.height)?;
        for r in &self.runs {
            write!(f, " {r}")?;
        }
        Ok(())
    }
}

impl FromStr for Mask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let nums = s
            .split_ascii_whitespace()
            .map(|t| {
                t.parse::<u32>()
                    .map_err(|e| Error::CorruptMask(format!("bad integer {t:?}: {e}")))
            })
            .collect::<Result<Vec<u32>>>()?;
        if nums.len() < 3 {
            return Err(Error::CorruptMask("expected `w h r0 ...`".into()));
        }
        let grid = ImageGrid::new(nums[0], nums[1])?;
        Mask::from_runs(grid, nums[2..].to_vec())
    }
}

struct RunBuilder {
    runs: Vec<u64>,
}

impl RunBuilder {
    fn new() -> Self {
        Self { runs: vec![0] }
    }

    fn push(&mut self, value: bool, len: u64) {
        if len == 0 {
            return;
        }
        // odd run count means the open run is background
        let open_is_fg = self.runs.len().is_multiple_of(2);
        if open_is_fg == value {
            *self.runs.last_mut().unwrap() += len;
        } else {
            self.runs.push(len);
        }
    }

    fn finish(self, grid: ImageGrid) -> Mask {
        Mask { grid, runs: self.runs.into_iter().map(|r| r as u32).collect() }
    }
}

struct Cursor<'a> {
    runs: &'a [u32],
    idx: usize,
    end: u64,
}

impl<'a> Cursor<'a> {
    fn new(runs: &'a [u32]) -> Self {
        let mut c = Self { runs, idx: 0, end: u64::from(runs[0]) };
        if c.end == 0 && runs.len() > 1 {
            c.advance();
        }
        c
    }

    fn value(&self) -> bool {
        self.idx % 2 == 1
    }

    fn advance(&mut self) {
        self.idx += 1;
        if let Some(&r) = self.runs.get(self.idx) {
            self.end += u64::from(r);
        }
    }
}

/// Visits maximal stretches over which both masks hold a constant value.
fn walk(a: &Mask, b: &Mask, mut visit: impl FnMut(bool, bool, u64)) -> Result<()> {
    a.grid.ensure_same(&b.grid)?;
    let total = a.grid.pixels();
    let mut ca = Cursor::new(&a.runs);
    let mut cb = Cursor::new(&b.runs);
    let mut pos = 0u64;
    while pos < total {
        let next = ca.end.min(cb.end);
        visit(ca.value(), cb.value(), next - pos);
        pos = next;
        if ca.end == pos {
            ca.advance();
        }
        if cb.end == pos {
            cb.advance();
        }
    }
    Ok(())
}

fn combine(a: &Mask, b: &Mask, op: impl Fn(bool, bool) -> bool) -> Result<Mask> {
    let mut out = RunBuilder::new();
    walk(a, b, |x, y, len| out.push(op(x, y), len))?;
    Ok(out.finish(a.grid))
}

/// Overlap ratio of two masks. Two empty masks score 0.
pub fn mask_iou(a: &Mask, b: &Mask) -> Result<f64> {
    let mut inter = 0u64;
    let mut union = 0u64;
    walk(a, b, |x, y, len| {
        if x && y {
            inter += len;
        }
        if x || y {
            union += len;
        }
    })?;
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Pixels of the grid not covered by any of `masks`.
pub fn untracked_region<'a>(
    grid: ImageGrid,
    masks: impl IntoIterator<Item = &'a Mask>,
) -> Result<Mask> {
    let mut covered = Mask::empty(grid);
    for m in masks {
        covered = covered.union(m)?;
    }
    Ok(covered.complement())
}

/// Tight bounds of the foreground, `None` for an empty mask.
pub fn box_from_mask(mask: &Mask) -> Option<BBox> {
    let width = u64::from(mask.grid.width);
    let (mut x0, mut y0, mut x1, mut y1) = (u64::MAX, u64::MAX, 0u64, 0u64);
    for (start, end) in mask.spans() {
        let (row_s, row_e) = (start / width, (end - 1) / width);
        y0 = y0.min(row_s);
        y1 = y1.max(row_e);
        if row_s == row_e {
            x0 = x0.min(start % width);
            x1 = x1.max((end - 1) % width);
        } else {
            x0 = 0;
            x1 = width - 1;
        }
    }
    if x0 == u64::MAX {
        return None;
    }
    Some(BBox {
        x: x0 as u32,
        y: y0 as u32,
        w: (x1 - x0 + 1) as u32,
        h: (y1 - y0 + 1) as u32,
    })
}

/// Fraction of the box area covered by `region` foreground.
pub fn box_region_overlap(bbox: &BBox, region: &Mask) -> Result<f64> {
    let clamped = bbox
        .clamp_to(region.grid)
        .ok_or_else(|| Error::invalid(format!("box {bbox:?} has no area inside the grid")))?;
    let inside = Mask::from_box(region.grid, &clamped).intersection_area(region)?;
    Ok(inside as f64 / clamped.area() as f64)
}
