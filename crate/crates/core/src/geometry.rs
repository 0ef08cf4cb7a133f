//! Scan geometries, Siddon ray tracing and the sparse system matrix.
//!
//! Pixels are indexed row-major with row 0 at the top of the image
//! (`y = +extent`) and column 0 at the left (`x = -extent`). Every pixel owns
//! the half-open box `[x_lo, x_hi) × [y_lo, y_hi)`, so a ray running exactly
//! along a pixel boundary is credited to one pixel only.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Square image domain `[-extent, extent]²` split into `width × height` pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub extent: f64,
}

impl Grid {
    pub fn new(width: usize, height: usize, extent: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid must have at least one pixel, got {width}x{height}"
            )));
        }
        if !(extent > 0.0 && extent.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "grid extent must be positive, got {extent}"
            )));
        }
        Ok(Grid {
            width,
            height,
            extent,
        })
    }

    /// Square grid of side `n` on `[-1, 1]²`.
    pub fn square(n: usize) -> Result<Self> {
        Grid::new(n, n, 1.0)
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    /// Horizontal pixel pitch `2·extent/width`.
    pub fn pixel_size(&self) -> f64 {
        2.0 * self.extent / self.width as f64
    }

    /// Vertical pixel pitch; equals [`Grid::pixel_size`] on square grids.
    pub fn pixel_height(&self) -> f64 {
        2.0 * self.extent / self.height as f64
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn row_col(&self, j: usize) -> (usize, usize) {
        (j / self.width, j % self.width)
    }

    pub fn pixel_center(&self, j: usize) -> [f64; 2] {
        let (row, col) = self.row_col(j);
        let x = -self.extent + (col as f64 + 0.5) * self.pixel_size();
        let y = self.extent - (row as f64 + 0.5) * self.pixel_height();
        [x, y]
    }

    /// Pixel containing `(x, y)`, or `None` outside the closed domain.
    pub fn pixel_at(&self, x: f64, y: f64) -> Option<usize> {
        let e = self.extent;
        if !(-e..=e).contains(&x) || !(-e..=e).contains(&y) {
            return None;
        }
        let col = (((x + e) / self.pixel_size()).floor() as usize).min(self.width - 1);
        let up = (((y + e) / self.pixel_height()).floor() as usize).min(self.height - 1);
        Some(self.index(self.height - 1 - up, col))
    }
}

/// An infinite line `origin + s·direction`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: [f64; 2],
    pub direction: [f64; 2],
}

impl Ray {
    /// Ray through `origin` along `direction`, normalized to unit length.
    pub fn new(origin: [f64; 2], direction: [f64; 2]) -> Result<Self> {
        let norm = direction[0].hypot(direction[1]);
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::InvalidArgument(
                "ray direction must be a nonzero finite vector".into(),
            ));
        }
        Ok(Ray {
            origin,
            direction: [direction[0] / norm, direction[1] / norm],
        })
    }

    /// Line through two distinct points.
    pub fn through(a: [f64; 2], b: [f64; 2]) -> Result<Self> {
        Ray::new(a, [b[0] - a[0], b[1] - a[1]])
    }

    /// Parameter interval `[s_in, s_out]` inside the closed grid box.
    pub fn clip(&self, grid: &Grid) -> Option<(f64, f64)> {
        let e = grid.extent;
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for axis in 0..2 {
            let o = self.origin[axis];
            let v = self.direction[axis];
            if v == 0.0 {
                if o < -e || o > e {
                    return None;
                }
            } else {
                let a = (-e - o) / v;
                let b = (e - o) / v;
                lo = lo.max(a.min(b));
                hi = hi.min(a.max(b));
            }
        }
        (hi > lo).then_some((lo, hi))
    }

    /// Length of the chord inside the grid box.
    pub fn chord_length(&self, grid: &Grid) -> f64 {
        self.clip(grid).map_or(0.0, |(lo, hi)| hi - lo)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeometryKind {
    Parallel { n_angles: usize, n_offsets: usize },
    Ring { n_detectors: usize },
    Custom,
}

/// Ordered list of lines of response.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySet {
    pub rays: Vec<Ray>,
    pub kind: GeometryKind,
}

impl RaySet {
    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    /// Drop rays that do not cross the grid. Ring geometries always contain
    /// such chords near the circle.
    pub fn retain_hitting(mut self, grid: &Grid) -> Self {
        self.rays.retain(|r| !siddon_trace(r, grid).is_empty());
        self
    }
}

/// `n_angles` directions uniform on `[0, π)`, each with `n_offsets` parallel
/// lines at bin centers across `[-extent, extent]`. Angle-major order.
pub fn build_parallel_geometry(n_angles: usize, n_offsets: usize, grid: &Grid) -> Result<RaySet> {
    if n_angles == 0 || n_offsets == 0 {
        return Err(Error::InvalidArgument(format!(
            "parallel geometry needs positive counts, got {n_angles} angles and {n_offsets} offsets"
        )));
    }
    let e = grid.extent;
    let bin = 2.0 * e / n_offsets as f64;
    let mut rays = Vec::with_capacity(n_angles * n_offsets);
    for a in 0..n_angles {
        let theta = std::f64::consts::PI * a as f64 / n_angles as f64;
        let (sin, cos) = theta.sin_cos();
        for k in 0..n_offsets {
            let s = -e + (k as f64 + 0.5) * bin;
            rays.push(Ray {
                origin: [-s * sin, s * cos],
                direction: [cos, sin],
            });
        }
    }
    Ok(RaySet {
        rays,
        kind: GeometryKind::Parallel {
            n_angles,
            n_offsets,
        },
    })
}

/// Every chord between distinct detectors equally spaced on the circle of
/// radius `1.01·√2·extent`, ordered `(0,1), (0,2), …, (n−2,n−1)`.
///
/// Chords near the circle miss the grid; pass the result through
/// [`RaySet::retain_hitting`] before assembling a design.
pub fn build_ring_geometry(n_detectors: usize, grid: &Grid) -> Result<RaySet> {
    if n_detectors < 3 {
        return Err(Error::InvalidArgument(format!(
            "ring geometry needs at least 3 detectors, got {n_detectors}"
        )));
    }
    let radius = grid.extent * std::f64::consts::SQRT_2 * 1.01;
    let detectors: Vec<[f64; 2]> = (0..n_detectors)
        .map(|k| {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / n_detectors as f64;
            [radius * phi.cos(), radius * phi.sin()]
        })
        .collect();
    let mut rays = Vec::with_capacity(n_detectors * (n_detectors - 1) / 2);
    for a in 0..n_detectors {
        for b in a + 1..n_detectors {
            rays.push(Ray::through(detectors[a], detectors[b])?);
        }
    }
    Ok(RaySet {
        rays,
        kind: GeometryKind::Ring { n_detectors },
    })
}

/// Segments shorter than this are structural zeros.
const MIN_LENGTH: f64 = 1e-14;

/// Pixels crossed by `ray` with their intersection lengths, sorted by pixel.
///
/// Plane crossings along both axes are merged into one sorted list of
/// parameters; each resulting segment is assigned to the pixel containing
/// its midpoint.
pub fn siddon_trace(ray: &Ray, grid: &Grid) -> Vec<(usize, f64)> {
    let Some((s_in, s_out)) = ray.clip(grid) else {
        return Vec::new();
    };
    let e = grid.extent;
    let mut params = vec![s_in, s_out];
    let planes = [
        (grid.width, grid.pixel_size()),
        (grid.height, grid.pixel_height()),
    ];
    for (axis, &(n, pitch)) in planes.iter().enumerate() {
        let v = ray.direction[axis];
        if v == 0.0 {
            continue;
        }
        let o = ray.origin[axis];
        for k in 1..n {
            let s = (-e + k as f64 * pitch - o) / v;
            if s > s_in && s < s_out {
                params.push(s);
            }
        }
    }
    params.sort_by(f64::total_cmp);

    let mut out: Vec<(usize, f64)> = Vec::with_capacity(params.len());
    for w in params.windows(2) {
        let len = w[1] - w[0];
        if len < MIN_LENGTH {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let x = ray.origin[0] + mid * ray.direction[0];
        let y = ray.origin[1] + mid * ray.direction[1];
        if let Some(j) = grid.pixel_at(x.clamp(-e, e), y.clamp(-e, e)) {
            out.push((j, len));
        }
    }
    out.sort_by_key(|&(j, _)| j);
    out.dedup_by(|next, prev| {
        if next.0 == prev.0 {
            prev.1 += next.1;
            true
        } else {
            false
        }
    });
    out
}

/// Column scaling applied by [`assemble_design`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    /// Every column sums to one.
    ColumnStochastic,
    /// Intersection lengths as traced.
    Raw,
    /// Global rescaling so the largest column sum is one.
    Scaled,
}

/// Nonnegative sparse `d × p` matrix kept in both CSR and CSC layouts.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseDesign {
    d: usize,
    p: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    col_values: Vec<f64>,
    col_sums: Vec<f64>,
}

impl SparseDesign {
    /// Build from per-row `(column, value)` lists.
    ///
    /// Entries at or below `1e-14` are dropped, duplicates are summed. Fails
    /// if a row or a column ends up empty.
    pub fn from_rows(p: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let d = rows.len();
        if d == 0 || p == 0 {
            return Err(Error::InvalidArgument("design must be at least 1x1".into()));
        }
        let mut row_ptr = Vec::with_capacity(d + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(j, _)| j);
            let start = col_idx.len();
            for (j, v) in row {
                if j >= p {
                    return Err(Error::DimensionMismatch {
                        what: "design column index",
                        expected: p,
                        found: j,
                    });
                }
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::ModelViolation(format!(
                        "design entry ({i}, {j}) = {v} is not a finite nonnegative number"
                    )));
                }
                if v <= MIN_LENGTH {
                    continue;
                }
                if col_idx.len() > start && *col_idx.last().unwrap() == j {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            if col_idx.len() == start {
                return Err(Error::ModelViolation(format!(
                    "LOR {i} does not intersect any pixel"
                )));
            }
            row_ptr.push(col_idx.len());
        }
        let design = Self::with_columns(d, p, row_ptr, col_idx, values);
        if let Some(j) = design.col_sums.iter().position(|&s| s <= 0.0) {
            return Err(Error::ModelViolation(format!(
                "pixel {j} is not detectable by any LOR"
            )));
        }
        Ok(design)
    }

    /// Build from a dense matrix, dropping structural zeros.
    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        let rows = (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| (j, m[(i, j)])).collect())
            .collect();
        Self::from_rows(m.ncols(), rows)
    }

    fn with_columns(
        d: usize,
        p: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        let nnz = values.len();
        let mut counts = vec![0usize; p + 1];
        for &j in &col_idx {
            counts[j + 1] += 1;
        }
        for j in 0..p {
            counts[j + 1] += counts[j];
        }
        let col_ptr = counts.clone();
        let mut next = counts;
        let mut row_idx = vec![0usize; nnz];
        let mut col_values = vec![0.0; nnz];
        for i in 0..d {
            for k in row_ptr[i]..row_ptr[i + 1] {
                let j = col_idx[k];
                row_idx[next[j]] = i;
                col_values[next[j]] = values[k];
                next[j] += 1;
            }
        }
        // Summing down each column in row order keeps the sums reproducible.
        let col_sums = (0..p)
            .map(|j| col_values[col_ptr[j]..col_ptr[j + 1]].iter().sum())
            .collect();
        SparseDesign {
            d,
            p,
            row_ptr,
            col_idx,
            values,
            col_ptr,
            row_idx,
            col_values,
            col_sums,
        }
    }

    /// Number of LORs.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of pixels.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `A_j = Σ_i a_ij`.
    pub fn col_sums(&self) -> &[f64] {
        &self.col_sums
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    /// Row indices and values of column `j`.
    pub fn col(&self, j: usize) -> (&[usize], &[f64]) {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        (&self.row_idx[r.clone()], &self.col_values[r])
    }

    /// CSR arrays `(row_ptr, col_idx, values)`.
    pub fn csr(&self) -> (&[usize], &[usize], &[f64]) {
        (&self.row_ptr, &self.col_idx, &self.values)
    }

    /// `Aλ`.
    pub fn forward(&self, lambda: &[f64]) -> Vec<f64> {
        debug_assert_eq!(lambda.len(), self.p);
        (0..self.d)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&j, &a)| a * lambda[j]).sum()
            })
            .collect()
    }

    /// `Aᵀv`.
    pub fn back(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.d);
        (0..self.p)
            .map(|j| {
                let (rows, vals) = self.col(j);
                rows.iter().zip(vals).map(|(&i, &a)| a * v[i]).sum()
            })
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.d, self.p);
        for i in 0..self.d {
            let (cols, vals) = self.row(i);
            for (&j, &a) in cols.iter().zip(vals) {
                m[(i, j)] = a;
            }
        }
        m
    }

    /// Multiply every entry by `factor > 0`.
    fn scaled(mut self, factor: f64) -> Self {
        for v in self.values.iter_mut().chain(self.col_values.iter_mut()) {
            *v *= factor;
        }
        for s in &mut self.col_sums {
            *s *= factor;
        }
        self
    }

    /// Replace the column sums with stored values that agree with the
    /// entries to a relative `1e-12`, so a reloaded design reproduces the
    /// original bit for bit.
    pub(crate) fn with_col_sums(mut self, sums: Vec<f64>) -> Result<Self> {
        if sums.len() != self.p {
            return Err(Error::DimensionMismatch {
                what: "stored column sums",
                expected: self.p,
                found: sums.len(),
            });
        }
        if let Some(j) =
            (0..self.p).find(|&j| !((sums[j] - self.col_sums[j]).abs() <= 1e-12 * self.col_sums[j]))
        {
            return Err(Error::ModelViolation(format!(
                "stored sum of column {j} disagrees with its entries"
            )));
        }
        self.col_sums = sums;
        Ok(self)
    }

    /// Divide each column by its sum.
    fn column_normalized(self) -> Self {
        let inv: Vec<f64> = self.col_sums.iter().map(|s| 1.0 / s).collect();
        let values = self
            .values
            .iter()
            .zip(&self.col_idx)
            .map(|(v, &j)| v * inv[j])
            .collect();
        let mut out = Self::with_columns(self.d, self.p, self.row_ptr, self.col_idx, values);
        // Division leaves sums a few ulps from 1; the identity is exact by
        // construction, so record it exactly.
        out.col_sums.iter_mut().for_each(|s| *s = 1.0);
        out
    }
}

/// Trace every ray and assemble the system matrix.
///
/// Fails with a model violation naming the first LOR that misses the grid
/// or the first pixel that no LOR reaches.
pub fn assemble_design(
    rays: &RaySet,
    grid: &Grid,
    normalization: Normalization,
) -> Result<SparseDesign> {
    if rays.is_empty() {
        return Err(Error::InvalidArgument("ray set is empty".into()));
    }
    let rows: Vec<Vec<(usize, f64)>> = rays
        .rays
        .par_iter()
        .map(|r| siddon_trace(r, grid))
        .collect();
    let design = SparseDesign::from_rows(grid.n_pixels(), rows)?;
    Ok(match normalization {
        Normalization::Raw => design,
        Normalization::ColumnStochastic => design.column_normalized(),
        Normalization::Scaled => {
            let max = design.col_sums.iter().cloned().fold(0.0, f64::max);
            design.scaled(1.0 / max)
        }
    })
}

/// Outcome of a condition-number computation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Conditioning {
    Finite(f64),
    /// Smallest singular value below `1e-12` times the largest.
    Singular,
}

impl Conditioning {
    pub fn value(&self) -> Option<f64> {
        match *self {
            Conditioning::Finite(c) => Some(c),
            Conditioning::Singular => None,
        }
    }
}

/// Column limit for densified condition numbers.
pub const MAX_DENSE_COLUMNS: usize = 2000;

/// Ratio of extreme singular values of a dense matrix.
pub fn design_condition_number(m: &DMatrix<f64>) -> Result<Conditioning> {
    if m.ncols() > MAX_DENSE_COLUMNS {
        return Err(Error::Capacity {
            what: "dense design columns",
            size: m.ncols(),
            limit: MAX_DENSE_COLUMNS,
        });
    }
    if m.nrows() < m.ncols() {
        // Fewer rows than columns: the column space cannot be injective.
        return Ok(Conditioning::Singular);
    }
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if !(max > 0.0) || min < 1e-12 * max {
        Ok(Conditioning::Singular)
    } else {
        Ok(Conditioning::Finite(max / min))
    }
}
