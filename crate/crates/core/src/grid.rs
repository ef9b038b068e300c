//! BEV grid geometry, poses and cross-frame resampling.
//!
//! Axis convention used throughout the crate: +x forward, +y left, yaw
//! counter-clockwise. Grid rows run along x, columns along y; cell `(0, 0)`
//! is the lower corner `(x_min, y_min)`.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Number of pyramid levels carried by every feature stack.
pub const LEVELS: usize = 3;

/// Wrap an angle into `(-π, π]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Pose {
            x,
            y,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn identity() -> Self {
        Pose::new(0.0, 0.0, 0.0)
    }

    /// Map a point from this pose's local frame into the parent frame.
    pub fn to_world(&self, p: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        (self.x + c * p.0 - s * p.1, self.y + s * p.0 + c * p.1)
    }

    /// Map a parent-frame point into this pose's local frame.
    pub fn to_local(&self, p: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        let dx = p.0 - self.x;
        let dy = p.1 - self.y;
        (c * dx + s * dy, -s * dx + c * dy)
    }

    /// `self ∘ local`: the pose `local`, given in this frame, expressed in
    /// the parent frame.
    pub fn compose(&self, local: &Pose) -> Pose {
        let (x, y) = self.to_world((local.x, local.y));
        Pose::new(x, y, self.yaw + local.yaw)
    }

    pub fn inverse(&self) -> Pose {
        let (x, y) = Pose::new(0.0, 0.0, -self.yaw).to_world((-self.x, -self.y));
        Pose::new(x, y, -self.yaw)
    }

    pub fn distance(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Pose `b` expressed in the frame of `a`.
pub fn relative_pose(a: &Pose, b: &Pose) -> Pose {
    let (x, y) = a.to_local((b.x, b.y));
    Pose::new(x, y, b.yaw - a.yaw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Cell { row, col }
    }
}

/// Ego-frame extents and resolution of the level-0 grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub cell_m: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            x_min: -12.0,
            x_max: 36.0,
            y_min: -12.0,
            y_max: 12.0,
            cell_m: 0.5,
        }
    }
}

fn exact_count(extent: f64, cell: f64) -> Option<usize> {
    let n = extent / cell;
    let r = n.round();
    if r >= 1.0 && (n - r).abs() < 1e-9 {
        Some(r as usize)
    } else {
        None
    }
}

impl GridSpec {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, cell_m: f64) -> Result<Self> {
        let spec = GridSpec {
            x_min,
            x_max,
            y_min,
            y_max,
            cell_m,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_m > 0.0) || !self.cell_m.is_finite() {
            return Err(Error::InvalidGrid(format!("cell size {}", self.cell_m)));
        }
        let x = exact_count(self.x_max - self.x_min, self.cell_m)
            .ok_or_else(|| Error::InvalidGrid("x extent is not a whole number of cells".into()))?;
        let y = exact_count(self.y_max - self.y_min, self.cell_m)
            .ok_or_else(|| Error::InvalidGrid("y extent is not a whole number of cells".into()))?;
        if x % 4 != 0 || y % 4 != 0 {
            return Err(Error::InvalidGrid(format!(
                "cell counts {x}x{y} must be divisible by 4"
            )));
        }
        Ok(())
    }

    /// Level-0 cell count along x.
    pub fn rows(&self) -> usize {
        ((self.x_max - self.x_min) / self.cell_m).round() as usize
    }

    /// Level-0 cell count along y.
    pub fn cols(&self) -> usize {
        ((self.y_max - self.y_min) / self.cell_m).round() as usize
    }

    pub fn rows_at(&self, level: usize) -> usize {
        self.rows() >> level
    }

    pub fn cols_at(&self, level: usize) -> usize {
        self.cols() >> level
    }

    pub fn cells(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn cell_m_at(&self, level: usize) -> f64 {
        self.cell_m * (1u32 << level) as f64
    }

    /// Ego-frame center of a cell at `level`.
    pub fn cell_center(&self, level: usize, cell: Cell) -> (f64, f64) {
        let s = self.cell_m_at(level);
        (
            self.x_min + (cell.row as f64 + 0.5) * s,
            self.y_min + (cell.col as f64 + 0.5) * s,
        )
    }

    /// Cell at `level` containing an ego-frame point, or `None` when outside
    /// the extents.
    pub fn cell_of_local(&self, level: usize, p: (f64, f64)) -> Option<Cell> {
        let s = self.cell_m_at(level);
        let r = ((p.0 - self.x_min) / s).floor();
        let c = ((p.1 - self.y_min) / s).floor();
        if !(r >= 0.0 && c >= 0.0) {
            return None;
        }
        let (r, c) = (r as usize, c as usize);
        if r < self.rows_at(level) && c < self.cols_at(level) {
            Some(Cell::new(r, c))
        } else {
            None
        }
    }

    pub fn contains_local(&self, p: (f64, f64)) -> bool {
        p.0 >= self.x_min && p.0 < self.x_max && p.1 >= self.y_min && p.1 < self.y_max
    }
}

/// Level-0 cell holding `point_world` in the frame of `ego`.
pub fn world_to_cell(spec: &GridSpec, ego: &Pose, point_world: (f64, f64)) -> Option<Cell> {
    spec.cell_of_local(0, ego.to_local(point_world))
}

/// A single-channel raster over one pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    pub spec: GridSpec,
    pub level: usize,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl ScalarGrid {
    pub fn zeros(spec: GridSpec, level: usize) -> Self {
        Self::filled(spec, level, 0.0)
    }

    pub fn filled(spec: GridSpec, level: usize, v: f64) -> Self {
        let rows = spec.rows_at(level);
        let cols = spec.cols_at(level);
        ScalarGrid {
            spec,
            level,
            rows,
            cols,
            values: vec![v; rows * cols],
        }
    }

    pub fn from_values(spec: GridSpec, level: usize, values: Vec<f64>) -> Result<Self> {
        let rows = spec.rows_at(level);
        let cols = spec.cols_at(level);
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} grid",
                values.len()
            )));
        }
        Ok(ScalarGrid {
            spec,
            level,
            rows,
            cols,
            values,
        })
    }

    #[inline]
    pub fn idx(&self, cell: Cell) -> usize {
        cell.row * self.cols + cell.col
    }

    #[inline]
    pub fn get(&self, cell: Cell) -> f64 {
        self.values[self.idx(cell)]
    }

    #[inline]
    pub fn set(&mut self, cell: Cell, v: f64) {
        let i = self.idx(cell);
        self.values[i] = v;
    }

    pub fn same_shape(&self, other: &ScalarGrid) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.level == other.level
    }

    pub fn count_nonzero(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }
}

/// One dense level of a feature pyramid: `rows × cols × channels` features
/// plus a per-cell validity bit.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLevel {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub data: Vec<f32>,
    pub valid: Vec<bool>,
}

impl FeatureLevel {
    pub fn zeros(rows: usize, cols: usize, channels: usize, valid: bool) -> Self {
        FeatureLevel {
            rows,
            cols,
            channels,
            data: vec![0.0; rows * cols * channels],
            valid: vec![valid; rows * cols],
        }
    }

    #[inline]
    pub fn cell_index(&self, cell: Cell) -> usize {
        cell.row * self.cols + cell.col
    }

    #[inline]
    pub fn vector(&self, idx: usize) -> &[f32] {
        &self.data[idx * self.channels..(idx + 1) * self.channels]
    }

    #[inline]
    pub fn vector_mut(&mut self, idx: usize) -> &mut [f32] {
        let c = self.channels;
        &mut self.data[idx * c..(idx + 1) * c]
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }
}

/// Three-level BEV feature stack; level `l` has `2^l · D` channels at
/// `1/2^l` resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    pub spec: GridSpec,
    pub base_channels: usize,
    pub levels: Vec<FeatureLevel>,
}

impl FeaturePyramid {
    pub fn zeros(spec: GridSpec, base_channels: usize, valid: bool) -> Self {
        let levels = (0..LEVELS)
            .map(|l| {
                FeatureLevel::zeros(
                    spec.rows_at(l),
                    spec.cols_at(l),
                    base_channels << l,
                    valid,
                )
            })
            .collect();
        FeaturePyramid {
            spec,
            base_channels,
            levels,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.levels.len() != LEVELS {
            return Err(Error::DimensionMismatch(format!(
                "pyramid has {} levels",
                self.levels.len()
            )));
        }
        for (l, lev) in self.levels.iter().enumerate() {
            if lev.rows != self.spec.rows_at(l)
                || lev.cols != self.spec.cols_at(l)
                || lev.channels != self.base_channels << l
                || lev.data.len() != lev.rows * lev.cols * lev.channels
                || lev.valid.len() != lev.rows * lev.cols
            {
                return Err(Error::DimensionMismatch(format!("level {l} shape")));
            }
        }
        Ok(())
    }
}

/// Nearest-neighbour resample of `src` (sensed at `src_pose`) into the frame
/// of `dst_pose`. Destination cells whose centre falls outside the source
/// grid or on an invalid source cell come out invalid and zeroed.
pub fn warp_pyramid(
    src: &FeaturePyramid,
    src_pose: &Pose,
    dst_pose: &Pose,
    dst_spec: &GridSpec,
) -> FeaturePyramid {
    let rel = relative_pose(src_pose, dst_pose);
    let levels = (0..LEVELS)
        .map(|l| warp_level(&src.levels[l], &src.spec, &rel, dst_spec, l))
        .collect();
    FeaturePyramid {
        spec: *dst_spec,
        base_channels: src.base_channels,
        levels,
    }
}

fn warp_level(
    src: &FeatureLevel,
    src_spec: &GridSpec,
    rel: &Pose,
    dst_spec: &GridSpec,
    level: usize,
) -> FeatureLevel {
    let rows = dst_spec.rows_at(level);
    let cols = dst_spec.cols_at(level);
    let ch = src.channels;
    let sources: Vec<Option<usize>> = par::map_range(rows * cols, |i| {
        let cell = Cell::new(i / cols, i % cols);
        let p = rel.to_world(dst_spec.cell_center(level, cell));
        let sc = src_spec.cell_of_local(level, p)?;
        let si = sc.row * src.cols + sc.col;
        src.valid[si].then_some(si)
    });
    let mut out = FeatureLevel::zeros(rows, cols, ch, false);
    for (i, s) in sources.into_iter().enumerate() {
        if let Some(si) = s {
            out.valid[i] = true;
            out.data[i * ch..(i + 1) * ch].copy_from_slice(src.vector(si));
        }
    }
    out
}

/// Nearest-neighbour resample of a scalar raster between frames; cells with
/// no source become `fill`.
pub fn warp_scalar(src: &ScalarGrid, src_pose: &Pose, dst_pose: &Pose, fill: f64) -> ScalarGrid {
    let rel = relative_pose(src_pose, dst_pose);
    let spec = src.spec;
    let level = src.level;
    let cols = src.cols;
    let values = par::map_range(src.rows * src.cols, |i| {
        let cell = Cell::new(i / cols, i % cols);
        let p = rel.to_world(spec.cell_center(level, cell));
        match spec.cell_of_local(level, p) {
            Some(sc) => src.get(sc),
            None => fill,
        }
    });
    ScalarGrid {
        spec,
        level,
        rows: src.rows,
        cols: src.cols,
        values,
    }
}
