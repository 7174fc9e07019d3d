//! Uniform cell-centered grids on axis-aligned squares.
//!
//! Cells are enumerated row-major: index `j * n + i`, with `i` running along
//! the first coordinate and `j` along the second. Cell `(i, j)` has its center
//! at `origin + ((i + 1/2) h, (j + 1/2) h)`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_CELLS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn scale(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }
}

/// Open ball `B_r(center)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    pub const fn new(center: Point, radius: f64) -> Self {
        Ball { center, radius }
    }

    pub fn contains(&self, p: Point) -> bool {
        p.dist(self.center) < self.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    origin: Point,
    extent: f64,
    n_cells: usize,
    h: f64,
}

impl Grid {
    /// Square grid of side `extent` centered at `center`.
    pub fn new(extent: f64, n_cells: usize, center: Point) -> Result<Self> {
        if !(extent > 0.0) || !extent.is_finite() {
            return Err(Error::InvalidGrid(format!("extent must be positive, got {extent}")));
        }
        if n_cells < MIN_CELLS {
            return Err(Error::InvalidGrid(format!(
                "need at least {MIN_CELLS} cells per axis, got {n_cells}"
            )));
        }
        if !center.x.is_finite() || !center.y.is_finite() {
            return Err(Error::InvalidGrid("center must be finite".into()));
        }
        let half = 0.5 * extent;
        Ok(Grid {
            origin: Point::new(center.x - half, center.y - half),
            extent,
            n_cells,
            h: extent / n_cells as f64,
        })
    }

    pub fn origin(&self) -> Point {
        self.origin
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn center(&self) -> Point {
        Point::new(
            self.origin.x + 0.5 * self.extent,
            self.origin.y + 0.5 * self.extent,
        )
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.n_cells * self.n_cells
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n_cells + i
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.n_cells, idx / self.n_cells)
    }

    #[inline]
    pub fn cell_center(&self, i: usize, j: usize) -> Point {
        Point::new(
            self.origin.x + (i as f64 + 0.5) * self.h,
            self.origin.y + (j as f64 + 0.5) * self.h,
        )
    }

    #[inline]
    pub fn center_of(&self, idx: usize) -> Point {
        let (i, j) = self.coords(idx);
        self.cell_center(i, j)
    }

    /// Cells on the outermost ring carry Dirichlet data.
    #[inline]
    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i + 1 == self.n_cells || j + 1 == self.n_cells
    }

    pub fn is_boundary_index(&self, idx: usize) -> bool {
        let (i, j) = self.coords(idx);
        self.is_boundary(i, j)
    }

    /// Index of the cell containing `p`, clamped to the grid. Points on a
    /// cell edge belong to the cell above/right of it.
    pub fn locate(&self, p: Point) -> usize {
        let clamp = |t: f64| -> usize {
            let k = (t / self.h).floor();
            if k < 0.0 {
                0
            } else {
                (k as usize).min(self.n_cells - 1)
            }
        };
        self.index(clamp(p.x - self.origin.x), clamp(p.y - self.origin.y))
    }

    /// Whether `ball` lies inside the closed square.
    pub fn contains_ball(&self, ball: &Ball) -> bool {
        let tol = 1e-12 * self.extent;
        let hi_x = self.origin.x + self.extent;
        let hi_y = self.origin.y + self.extent;
        ball.center.x - ball.radius >= self.origin.x - tol
            && ball.center.x + ball.radius <= hi_x + tol
            && ball.center.y - ball.radius >= self.origin.y - tol
            && ball.center.y + ball.radius <= hi_y + tol
    }

    /// Whether `p` lies in the convex hull of the cell centers.
    pub fn in_hull(&self, p: Point) -> bool {
        let lo_x = self.origin.x + 0.5 * self.h;
        let lo_y = self.origin.y + 0.5 * self.h;
        let hi_x = self.origin.x + self.extent - 0.5 * self.h;
        let hi_y = self.origin.y + self.extent - 0.5 * self.h;
        let tol = 1e-12 * self.extent;
        p.x >= lo_x - tol && p.x <= hi_x + tol && p.y >= lo_y - tol && p.y <= hi_y + tol
    }

    /// Cells whose centers satisfy `|x - center| < r`.
    pub fn ball_cells(&self, center: Point, r: f64) -> CellSet {
        let mut set = CellSet::empty(*self);
        for idx in self.ball_indices(center, r) {
            set.mask[idx] = true;
        }
        set
    }

    /// Row-major indices of the cells in `B_r(center)`.
    pub fn ball_indices(&self, center: Point, r: f64) -> Vec<usize> {
        let n = self.n_cells as isize;
        let to_index = |t: f64| ((t / self.h) - 0.5).floor() as isize;
        let i_lo = (to_index(center.x - r - self.origin.x)).clamp(0, n - 1);
        let i_hi = (to_index(center.x + r - self.origin.x) + 1).clamp(0, n - 1);
        let j_lo = (to_index(center.y - r - self.origin.y)).clamp(0, n - 1);
        let j_hi = (to_index(center.y + r - self.origin.y) + 1).clamp(0, n - 1);
        let mut out = Vec::new();
        for j in j_lo..=j_hi {
            for i in i_lo..=i_hi {
                let (i, j) = (i as usize, j as usize);
                if self.cell_center(i, j).dist(center) < r {
                    out.push(self.index(i, j));
                }
            }
        }
        out
    }

    pub fn same_as(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch("operands live on different grids"))
        }
    }
}

/// One real value per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        ScalarField {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        ScalarField {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(Point) -> f64) -> Self {
        let values = (0..grid.len()).map(|k| f(grid.center_of(k))).collect();
        ScalarField { grid, values }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::arg(
                "values",
                format!("expected {} values, got {}", grid.len(), values.len()),
            ));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::arg("values", format!("non-finite value at cell {k}")));
        }
        Ok(ScalarField { grid, values })
    }

    pub(crate) fn from_values_unchecked(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        ScalarField { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `max |self - other|` over all cells.
    pub fn max_abs_diff(&self, other: &ScalarField) -> Result<f64> {
        self.grid.same_as(&other.grid)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// `max |self - other|` over cells in `set`.
    pub fn max_abs_diff_on(&self, other: &ScalarField, set: &CellSet) -> Result<f64> {
        self.grid.same_as(&other.grid)?;
        self.grid.same_as(&set.grid)?;
        Ok(set
            .indices()
            .map(|k| (self.values[k] - other.values[k]).abs())
            .fold(0.0, f64::max))
    }

    /// Largest value among the cells of `B_r(center)`, `None` for an empty ball.
    pub fn sup_on_ball(&self, center: Point, r: f64) -> Option<f64> {
        self.grid
            .ball_indices(center, r)
            .into_iter()
            .map(|k| self.values[k])
            .reduce(f64::max)
    }

    /// Bilinear interpolation from the four surrounding cell centers.
    pub fn sample(&self, p: Point) -> Result<f64> {
        if !self.grid.in_hull(p) {
            return Err(Error::OutsideHull { x: p.x, y: p.y });
        }
        let g = &self.grid;
        let n = g.n_cells;
        let h = g.h;
        let locate = |t: f64| -> (usize, f64) {
            let s = (t / h - 0.5).max(0.0);
            let k = (s.floor() as usize).min(n - 2);
            (k, (s - k as f64).clamp(0.0, 1.0))
        };
        let (i, tx) = locate(p.x - g.origin.x);
        let (j, ty) = locate(p.y - g.origin.y);
        let v00 = self.at(i, j);
        let v10 = self.at(i + 1, j);
        let v01 = self.at(i, j + 1);
        let v11 = self.at(i + 1, j + 1);
        Ok((1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Text persistence: header lines followed by row-major values.
    pub fn to_text(&self) -> String {
        write_channels(&self.grid, &[&self.values])
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (grid, mut channels) = read_channels(text)?;
        if channels.len() != 1 {
            return Err(Error::Format(format!(
                "expected 1 channel, found {}",
                channels.len()
            )));
        }
        ScalarField::from_values(grid, channels.remove(0))
            .map_err(|e| Error::Format(e.to_string()))
    }
}

/// Boolean mask over the cells of a grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellSet {
    grid: Grid,
    mask: Vec<bool>,
}

// `Grid` holds floats but never NaN (validated on construction).
impl Eq for Grid {}

impl CellSet {
    pub fn empty(grid: Grid) -> Self {
        CellSet {
            grid,
            mask: vec![false; grid.len()],
        }
    }

    pub fn full(grid: Grid) -> Self {
        CellSet {
            grid,
            mask: vec![true; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(usize) -> bool) -> Self {
        CellSet {
            grid,
            mask: (0..grid.len()).map(f).collect(),
        }
    }

    pub fn interior(grid: Grid) -> Self {
        CellSet::from_fn(grid, |k| !grid.is_boundary_index(k))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn contains(&self, idx: usize) -> bool {
        self.mask[idx]
    }

    pub fn set(&mut self, idx: usize, value: bool) {
        self.mask[idx] = value;
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&b| b)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(k, &b)| b.then_some(k))
    }

    pub fn area(&self) -> f64 {
        self.count() as f64 * self.grid.h * self.grid.h
    }

    pub fn intersect(&self, other: &CellSet) -> Result<CellSet> {
        self.grid.same_as(&other.grid)?;
        Ok(CellSet::from_fn(self.grid, |k| {
            self.mask[k] && other.mask[k]
        }))
    }

    pub fn union(&self, other: &CellSet) -> Result<CellSet> {
        self.grid.same_as(&other.grid)?;
        Ok(CellSet::from_fn(self.grid, |k| self.mask[k] || other.mask[k]))
    }

    pub fn complement_in(&self, universe: &CellSet) -> Result<CellSet> {
        self.grid.same_as(&universe.grid)?;
        Ok(CellSet::from_fn(self.grid, |k| {
            universe.mask[k] && !self.mask[k]
        }))
    }

    /// `0`/`1` bitmap, one row of the grid per line (top row last).
    pub fn to_bitmap(&self) -> String {
        let n = self.grid.n_cells;
        let mut out = String::with_capacity(self.grid.len() + n);
        for j in 0..n {
            for i in 0..n {
                out.push(if self.mask[self.grid.index(i, j)] { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }

    pub fn from_bitmap(grid: Grid, text: &str) -> Result<Self> {
        let mut mask = Vec::with_capacity(grid.len());
        for line in text.lines().filter(|l| !l.is_empty()) {
            if line.len() != grid.n_cells {
                return Err(Error::Format(format!(
                    "bitmap row has {} entries, expected {}",
                    line.len(),
                    grid.n_cells
                )));
            }
            for c in line.chars() {
                match c {
                    '0' => mask.push(false),
                    '1' => mask.push(true),
                    other => return Err(Error::Format(format!("bad bitmap char {other:?}"))),
                }
            }
        }
        if mask.len() != grid.len() {
            return Err(Error::Format("bitmap has the wrong number of rows".into()));
        }
        Ok(CellSet { grid, mask })
    }
}

const FIELD_MAGIC: &str = "# obstacle-lab field v1";

pub(crate) fn write_channels(grid: &Grid, channels: &[&[f64]]) -> String {
    let c = grid.center();
    let mut out = String::new();
    let _ = writeln!(out, "{FIELD_MAGIC}");
    let _ = writeln!(out, "extent {:.16e}", grid.extent);
    let _ = writeln!(out, "n_cells {}", grid.n_cells);
    let _ = writeln!(out, "center {:.16e} {:.16e}", c.x, c.y);
    let _ = writeln!(out, "channels {}", channels.len());
    for k in 0..grid.len() {
        for (m, ch) in channels.iter().enumerate() {
            if m > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{:.16e}", ch[k]);
        }
        out.push('\n');
    }
    out
}

pub(crate) fn read_channels(text: &str) -> Result<(Grid, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(FIELD_MAGIC) {
        return Err(Error::Format("missing field header".into()));
    }
    let mut header = |key: &str| -> Result<Vec<String>> {
        let line = lines
            .next()
            .ok_or_else(|| Error::Format(format!("missing `{key}` line")))?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(Error::Format(format!("expected `{key}` line, got {line:?}")));
        }
        Ok(parts.map(str::to_owned).collect())
    };
    let num = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|e| Error::Format(format!("bad number {s:?}: {e}")))
    };
    let extent = num(header("extent")?.first().map(String::as_str).unwrap_or(""))?;
    let n_cells: usize = header("n_cells")?
        .first()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("bad n_cells".into()))?;
    let center = header("center")?;
    if center.len() != 2 {
        return Err(Error::Format("center needs two coordinates".into()));
    }
    let center = Point::new(num(&center[0])?, num(&center[1])?);
    let n_channels: usize = header("channels")?
        .first()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("bad channel count".into()))?;
    let grid = Grid::new(extent, n_cells, center).map_err(|e| Error::Format(e.to_string()))?;
    let mut channels = vec![Vec::with_capacity(grid.len()); n_channels];
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != n_channels {
            return Err(Error::Format(format!(
                "row has {} values, expected {n_channels}",
                parts.len()
            )));
        }
        for (ch, s) in channels.iter_mut().zip(parts) {
            ch.push(num(s)?);
        }
    }
    if channels.iter().any(|c| c.len() != grid.len()) {
        return Err(Error::Format(format!("expected {} rows", grid.len())));
    }
    Ok((grid, channels))
}
