//! Segmentation side information: the reduced design `A_M`, weighted
//! likelihood bootstrap draws of segment activities, and the diagnostics
//! that check whether the segment model can put zero intensity where the
//! data do.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::geometry::{design_condition_number, Conditioning, Grid, RaySet, SparseDesign};
use crate::model::{default_zero_tol, index_sets, Sinogram};
use crate::recon::{iterate, uniform_start_value, Projector, SolverConfig};
use crate::rng::{self, Stage};

/// Label of pixels outside every segment.
pub const OUTSIDE: i32 = -1;

/// One or more label maps on a common grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    grid: Grid,
    images: Vec<Vec<i32>>,
    counts: Vec<usize>,
}

impl Segmentation {
    /// Segment counts are inferred as `max label + 1`; every label below that
    /// must be used.
    pub fn new(grid: Grid, images: Vec<Vec<i32>>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::InvalidArgument(
                "segmentation has no label image".into(),
            ));
        }
        let mut counts = Vec::with_capacity(images.len());
        for (k, labels) in images.iter().enumerate() {
            if labels.len() != grid.n_pixels() {
                return Err(Error::DimensionMismatch {
                    what: "label map pixels",
                    expected: grid.n_pixels(),
                    found: labels.len(),
                });
            }
            if let Some(&bad) = labels.iter().find(|&&l| l < OUTSIDE) {
                return Err(Error::InvalidArgument(format!(
                    "label map {k} contains invalid label {bad}"
                )));
            }
            let n = labels
                .iter()
                .cloned()
                .max()
                .map_or(0, |m| (m + 1).max(0) as usize);
            let mut used = vec![false; n];
            for &l in labels.iter().filter(|&&l| l >= 0) {
                used[l as usize] = true;
            }
            if let Some(s) = used.iter().position(|u| !u) {
                return Err(Error::InvalidSegmentation {
                    image: k,
                    segment: s,
                });
            }
            if n == 0 {
                return Err(Error::InvalidArgument(format!(
                    "label map {k} has no segment"
                )));
            }
            counts.push(n);
        }
        Ok(Segmentation {
            grid,
            images,
            counts,
        })
    }

    /// Single label map.
    pub fn single(grid: Grid, labels: Vec<i32>) -> Result<Self> {
        Segmentation::new(grid, vec![labels])
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn images(&self) -> &[Vec<i32>] {
        &self.images
    }

    /// `p_k` for every label map.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// `p_M = Σ_k p_k`.
    pub fn n_segments(&self) -> usize {
        self.counts.iter().sum()
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.counts.len());
        let mut acc = 0;
        for &c in &self.counts {
            off.push(acc);
            acc += c;
        }
        off
    }

    /// Pixel image `λ_j = Σ_k λ_M[k, label_k(j)]` of segment activities.
    pub fn expand(&self, lambda_m: &[f64]) -> Vec<f64> {
        let off = self.offsets();
        (0..self.grid.n_pixels())
            .map(|j| {
                self.images
                    .iter()
                    .zip(&off)
                    .filter(|(labels, _)| labels[j] >= 0)
                    .map(|(labels, &o)| lambda_m[o + labels[j] as usize])
                    .sum()
            })
            .collect()
    }
}

/// Default cap on `cond(A_M)`.
pub const DEFAULT_CONDITION_CAP: f64 = 1e6;

/// Dense `d × p_M` design of segment activities.
#[derive(Clone, Debug)]
pub struct MixingDesign {
    matrix: DMatrix<f64>,
    col_sums: Vec<f64>,
    empty_rows: Vec<bool>,
    conditioning: Conditioning,
    cap: f64,
}

impl MixingDesign {
    /// Wrap a dense nonnegative matrix with positive column sums.
    pub fn from_matrix(matrix: DMatrix<f64>, cap: f64) -> Result<Self> {
        if matrix.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::ModelViolation(
                "mixing design entries must be finite and nonnegative".into(),
            ));
        }
        let col_sums: Vec<f64> = matrix.column_iter().map(|c| c.sum()).collect();
        if let Some(s) = col_sums.iter().position(|&c| c <= 0.0) {
            return Err(Error::ModelViolation(format!(
                "segment column {s} is not detectable by any LOR"
            )));
        }
        let empty_rows = matrix
            .row_iter()
            .map(|r| r.iter().all(|&v| v == 0.0))
            .collect();
        let conditioning = design_condition_number(&matrix)?;
        Ok(MixingDesign {
            matrix,
            col_sums,
            empty_rows,
            conditioning,
            cap,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn col_sums(&self) -> &[f64] {
        &self.col_sums
    }

    pub fn conditioning(&self) -> Conditioning {
        self.conditioning
    }

    /// False when `A_M` is singular or its condition number exceeds the cap.
    pub fn is_well_conditioned(&self) -> bool {
        matches!(self.conditioning, Conditioning::Finite(c) if c < self.cap)
    }

    pub fn n_segments(&self) -> usize {
        self.matrix.ncols()
    }
}

impl Projector for MixingDesign {
    fn n_lors(&self) -> usize {
        self.matrix.nrows()
    }
    fn n_cols(&self) -> usize {
        self.matrix.ncols()
    }
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        (&self.matrix * DVector::from_column_slice(x)).data.into()
    }
    fn back(&self, v: &[f64]) -> Vec<f64> {
        self.matrix
            .tr_mul(&DVector::from_column_slice(v))
            .data
            .into()
    }
    fn sensitivities(&self) -> &[f64] {
        &self.col_sums
    }
    fn row_is_empty(&self, i: usize) -> bool {
        self.empty_rows[i]
    }
}

/// Aggregate design columns over segments: column `(k, s)` of `A_M` is the
/// sum of the columns of the pixels labeled `s` in map `k`.
pub fn reduce_design(design: &SparseDesign, seg: &Segmentation, cap: f64) -> Result<MixingDesign> {
    if design.p() != seg.grid.n_pixels() {
        return Err(Error::DimensionMismatch {
            what: "segmentation pixels vs design columns",
            expected: design.p(),
            found: seg.grid.n_pixels(),
        });
    }
    let off = seg.offsets();
    let mut m = DMatrix::zeros(design.d(), seg.n_segments());
    for i in 0..design.d() {
        let (cols, vals) = design.row(i);
        for (&j, &a) in cols.iter().zip(vals) {
            for (labels, &o) in seg.images.iter().zip(&off) {
                let l = labels[j];
                if l >= 0 {
                    m[(i, o + l as usize)] += a;
                }
            }
        }
    }
    MixingDesign::from_matrix(m, cap)
}

/// Segment activities and their projection `A_M λ_M`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingDraw {
    pub lambda_m: Vec<f64>,
    pub projection: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn check_counts(data: &Sinogram, mixing: &MixingDesign) -> Result<()> {
    if data.d() != mixing.n_lors() {
        return Err(Error::DimensionMismatch {
            what: "sinogram LORs vs mixing design rows",
            expected: mixing.n_lors(),
            found: data.d(),
        });
    }
    if !data.is_counts() {
        return Err(Error::InvalidArgument(
            "bootstrap weighting needs integer counts".into(),
        ));
    }
    Ok(())
}

/// `Λ̃_i ~ Γ(Y_i, 1/t)`, one stream per draw index.
pub fn wlb_intensities(data: &Sinogram, seed: u64, b: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, Stage::MixingWeights, b);
    let scale = 1.0 / data.t();
    data.values()
        .iter()
        .map(|&y| rng::gamma(&mut r, y, scale))
        .collect()
}

/// `Λ̃_i = t⁻¹ Σ_{k ≤ Y_i} w_k` with unit exponential weights on the
/// individual events.
pub fn weight_representation_intensities(data: &Sinogram, seed: u64, b: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, Stage::ListMode, b);
    let t = data.t();
    data.values()
        .iter()
        .map(|&y| {
            let n = y as u64;
            let s: f64 = (0..n).map(|_| -> f64 { Exp1.sample(&mut r) }).sum();
            s / t
        })
        .collect()
}

/// MLEM on `A_M` from the uniform start.
pub fn reconstruct_segments(
    intensities: &[f64],
    mixing: &MixingDesign,
    solver: &SolverConfig,
) -> Result<MixingDraw> {
    let v = uniform_start_value(intensities, mixing.col_sums());
    reconstruct_segments_from(vec![v; mixing.n_segments()], intensities, mixing, solver)
}

/// MLEM on `A_M` from a given nonnegative start.
pub fn reconstruct_segments_from(
    start: Vec<f64>,
    intensities: &[f64],
    mixing: &MixingDesign,
    solver: &SolverConfig,
) -> Result<MixingDraw> {
    solver.validate()?;
    if start.len() != mixing.n_segments() || intensities.len() != mixing.n_lors() {
        return Err(Error::DimensionMismatch {
            what: "start or intensities vs mixing design",
            expected: mixing.n_segments(),
            found: start.len(),
        });
    }
    let it = iterate(
        start,
        intensities,
        mixing,
        0.0,
        None,
        solver.max_iters,
        solver.rel_tol,
    )?;
    let projection = mixing.forward(&it.x);
    Ok(MixingDraw {
        lambda_m: it.x,
        projection,
        iterations: it.iterations,
        converged: it.converged,
    })
}

/// One weighted likelihood bootstrap draw of the segment activities.
pub fn wlb_sample(
    data: &Sinogram,
    mixing: &MixingDesign,
    seed: u64,
    b: u64,
    solver: &SolverConfig,
) -> Result<MixingDraw> {
    check_counts(data, mixing)?;
    reconstruct_segments(&wlb_intensities(data, seed, b), mixing, solver)
}

/// Same law as [`wlb_sample`], built from per-event exponential weights.
pub fn weight_representation_sample(
    data: &Sinogram,
    mixing: &MixingDesign,
    seed: u64,
    b: u64,
    solver: &SolverConfig,
) -> Result<MixingDraw> {
    check_counts(data, mixing)?;
    reconstruct_segments(
        &weight_representation_intensities(data, seed, b),
        mixing,
        solver,
    )
}

/// Outcome of [`nonexpansiveness_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct NonexpansivenessReport {
    pub holds: bool,
    /// LORs with zero true intensity where the segment model predicts more
    /// than the tolerance.
    pub violating: Vec<usize>,
    pub fit: MixingDraw,
}

/// Fit the segment model to the true intensities and compare zero sets.
pub fn nonexpansiveness_check(
    truth: &Sinogram,
    mixing: &MixingDesign,
    tol: f64,
    solver: &SolverConfig,
) -> Result<NonexpansivenessReport> {
    if truth.d() != mixing.n_lors() {
        return Err(Error::DimensionMismatch {
            what: "sinogram LORs vs mixing design rows",
            expected: mixing.n_lors(),
            found: truth.d(),
        });
    }
    let fit = reconstruct_segments(truth.values(), mixing, solver)?;
    let zero = default_zero_tol(truth);
    let violating: Vec<usize> = index_sets(truth, zero)
        .i0
        .into_iter()
        .filter(|&i| fit.projection[i] > tol)
        .collect();
    Ok(NonexpansivenessReport {
        holds: violating.is_empty(),
        violating,
        fit,
    })
}

/// Estimate of the discrete convex hull of the tracer support: pixels that
/// lie strictly inside the support half-plane of every zero LOR and are not
/// crossed by it.
pub fn discrete_convex_hull(
    rays: &RaySet,
    design: &SparseDesign,
    data: &Sinogram,
    grid: &Grid,
) -> Result<Vec<bool>> {
    if rays.len() != design.d() || data.d() != design.d() {
        return Err(Error::DimensionMismatch {
            what: "rays, design rows and sinogram LORs",
            expected: design.d(),
            found: if rays.len() != design.d() {
                rays.len()
            } else {
                data.d()
            },
        });
    }
    let sets = index_sets(data, default_zero_tol(data));
    if sets.i1.is_empty() {
        return Err(Error::DegenerateData(
            "every LOR is empty; the support is unknown".into(),
        ));
    }
    let p = grid.n_pixels();
    let mut crossed_by_zero = vec![false; p];
    for &i in &sets.i0 {
        for &j in design.row(i).0 {
            crossed_by_zero[j] = true;
        }
    }
    // Pixels seen by data and never crossed by an empty LOR are the evidence
    // for which side of each empty LOR the tracer sits on.
    let backproj = design.back(data.values());
    let evidence: Vec<f64> = (0..p)
        .map(|j| if crossed_by_zero[j] { 0.0 } else { backproj[j] })
        .collect();
    let centers: Vec<[f64; 2]> = (0..p).map(|j| grid.pixel_center(j)).collect();
    let mut hull = vec![true; p];
    for &i in &sets.i0 {
        let ray = &rays.rays[i];
        let side = |c: &[f64; 2]| {
            let dx = c[0] - ray.origin[0];
            let dy = c[1] - ray.origin[1];
            ray.direction[0] * dy - ray.direction[1] * dx
        };
        let (mut left, mut right) = (0.0, 0.0);
        for j in 0..p {
            let s = side(&centers[j]);
            if s > 0.0 {
                left += evidence[j];
            } else if s < 0.0 {
                right += evidence[j];
            }
        }
        let keep_left = left >= right;
        let (cols, _) = design.row(i);
        for j in 0..p {
            let s = side(&centers[j]);
            if (keep_left && s <= 0.0) || (!keep_left && s >= 0.0) {
                hull[j] = false;
            }
        }
        for &j in cols {
            hull[j] = false;
        }
    }
    if !hull.iter().any(|&h| h) {
        return Err(Error::DegenerateData(
            "estimated convex hull is empty".into(),
        ));
    }
    Ok(hull)
}

/// Remove pixels outside the estimated convex hull from every label map,
/// drop segments left empty and renumber the rest in order.
pub fn mask_preprocess(
    rays: &RaySet,
    design: &SparseDesign,
    seg: &Segmentation,
    data: &Sinogram,
) -> Result<Segmentation> {
    let hull = discrete_convex_hull(rays, design, data, &seg.grid)?;
    let mut images = Vec::with_capacity(seg.images.len());
    for labels in &seg.images {
        let masked: Vec<i32> = labels
            .iter()
            .zip(&hull)
            .map(|(&l, &h)| if h { l } else { OUTSIDE })
            .collect();
        let n = masked.iter().cloned().max().unwrap_or(OUTSIDE) + 1;
        let mut remap = vec![OUTSIDE; n.max(0) as usize];
        let mut present = vec![false; remap.len()];
        for &l in masked.iter().filter(|&&l| l >= 0) {
            present[l as usize] = true;
        }
        let mut next = 0;
        for (s, &p) in present.iter().enumerate() {
            if p {
                remap[s] = next;
                next += 1;
            }
        }
        if next == 0 {
            // A map with no surviving segment carries no information.
            continue;
        }
        images.push(
            masked
                .iter()
                .map(|&l| if l >= 0 { remap[l as usize] } else { OUTSIDE })
                .collect(),
        );
    }
    if images.is_empty() {
        return Err(Error::DegenerateData(
            "no segment survives inside the estimated convex hull".into(),
        ));
    }
    Segmentation::new(seg.grid, images)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{
        assemble_design, build_parallel_geometry, GeometryKind, Normalization, Ray,
    };
    use crate::model::{make_disk_phantom, simulate_sinogram};

    fn setup() -> (Grid, RaySet, SparseDesign) {
        let g = Grid::square(8).unwrap();
        let rays = build_parallel_geometry(8, 8, &g).unwrap();
        let a = assemble_design(&rays, &g, Normalization::ColumnStochastic).unwrap();
        (g, rays, a)
    }

    #[test]
    fn identity_aggregation_and_single_segment() {
        let (g, _, a) = setup();
        let each = Segmentation::single(g, (0..64).collect()).unwrap();
        let m = reduce_design(&a, &each, DEFAULT_CONDITION_CAP).unwrap();
        assert_eq!(m.matrix(), &a.to_dense());
        let one = Segmentation::single(g, vec![0; 64]).unwrap();
        let m = reduce_design(&a, &one, DEFAULT_CONDITION_CAP).unwrap();
        let dense = a.to_dense();
        for i in 0..a.d() {
            assert!((m.matrix()[(i, 0)] - dense.row(i).sum()).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_segment_is_named() {
        let g = Grid::square(2).unwrap();
        let err = Segmentation::single(g, vec![0, 0, 2, 2]).unwrap_err();
        assert!(matches!(
            err,
            Error::InvalidSegmentation {
                image: 0,
                segment: 1
            }
        ));
    }

    #[test]
    fn expand_matches_projection() {
        let (g, _, a) = setup();
        let labels: Vec<i32> = (0..64)
            .map(|j| if j % 7 == 0 { -1 } else { (j % 3) as i32 })
            .collect();
        let labels2: Vec<i32> = (0..64).map(|j| (j / 32) as i32).collect();
        let seg = Segmentation::new(g, vec![labels, labels2]).unwrap();
        let m = reduce_design(&a, &seg, DEFAULT_CONDITION_CAP).unwrap();
        let lm = vec![0.3, 1.1, 2.0, 0.7, 0.2];
        let lhs = m.forward(&lm);
        let rhs = a.forward(&seg.expand(&lm));
        for (u, v) in lhs.iter().zip(&rhs) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_counts_give_zero_draw() {
        let (g, _, a) = setup();
        let seg = Segmentation::single(g, (0..64).map(|j| (j % 2) as i32).collect()).unwrap();
        let m = reduce_design(&a, &seg, DEFAULT_CONDITION_CAP).unwrap();
        let y = Sinogram::new(vec![0.0; a.d()], 5.0).unwrap();
        let draw = wlb_sample(&y, &m, 1, 0, &SolverConfig::default()).unwrap();
        assert!(draw.lambda_m.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wlb_simplex_identity() {
        let (g, _, a) = setup();
        let truth = make_disk_phantom(&g, 3.0, 1.0, 0.4, 1.0).unwrap();
        let y = simulate_sinogram(&truth, &a, 40.0, 2).unwrap();
        let seg = Segmentation::single(g, (0..64).map(|j| (j % 4) as i32).collect()).unwrap();
        let m = reduce_design(&a, &seg, DEFAULT_CONDITION_CAP).unwrap();
        for b in 0..20 {
            let lt = wlb_intensities(&y, 5, b);
            let draw = wlb_sample(&y, &m, 5, b, &SolverConfig::default()).unwrap();
            let lhs: f64 = draw
                .lambda_m
                .iter()
                .zip(m.col_sums())
                .map(|(l, s)| l * s)
                .sum();
            let rhs: f64 = lt.iter().sum();
            assert!((lhs - rhs).abs() <= 1e-8 * rhs);
        }
    }

    #[test]
    fn weight_representation_zero_and_mean() {
        let y = Sinogram::new(vec![0.0, 4.0], 2.0).unwrap();
        let mut mean = 0.0;
        for b in 0..20_000 {
            let v = weight_representation_intensities(&y, 3, b);
            assert_eq!(v[0], 0.0);
            mean += v[1] / 20_000.0;
        }
        assert!((mean - 2.0).abs() < 0.03);
    }

    #[test]
    fn mask_without_zero_lors_is_identity() {
        let (g, rays, a) = setup();
        let data = Sinogram::intensities(a.forward(&vec![1.0; g.n_pixels()])).unwrap();
        let seg = Segmentation::single(g, (0..64).map(|j| (j % 3) as i32).collect()).unwrap();
        assert_eq!(mask_preprocess(&rays, &a, &seg, &data).unwrap(), seg);
        let dark = Sinogram::intensities(vec![0.0; a.d()]).unwrap();
        assert!(matches!(
            mask_preprocess(&rays, &a, &seg, &dark),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn single_zero_ray_cuts_half_plane() {
        let g = Grid::square(8).unwrap();
        let mut rays: Vec<Ray> = (0..8)
            .map(|r| Ray::new([-2.0, g.pixel_center(g.index(r, 0))[1]], [1.0, 0.0]).unwrap())
            .collect();
        rays.push(Ray::new([0.6, -2.0], [0.0, 1.0]).unwrap());
        let rays = RaySet {
            rays,
            kind: GeometryKind::Custom,
        };
        let a = assemble_design(&rays, &g, Normalization::Raw).unwrap();
        let truth: Vec<f64> = (0..64)
            .map(|j| if g.pixel_center(j)[0] < 0.5 { 1.0 } else { 0.0 })
            .collect();
        let data = Sinogram::intensities(a.forward(&truth)).unwrap();
        let seg = Segmentation::new(
            g,
            vec![(0..64).map(|j| (j % 8 / 4) as i32).collect(), vec![0; 64]],
        )
        .unwrap();
        let masked = mask_preprocess(&rays, &a, &seg, &data).unwrap();
        for j in 0..64 {
            let x = g.pixel_center(j)[0];
            let kept = x < 0.6 && !(0.5..0.75).contains(&x);
            for k in 0..2 {
                assert_eq!(masked.images()[k][j] >= 0, kept, "pixel {j}");
            }
        }
        assert_eq!(masked.counts(), &[2, 1]);
        assert_eq!(mask_preprocess(&rays, &a, &masked, &data).unwrap(), masked);

        let right_only =
            Segmentation::single(g, (0..64).map(|j| if j % 8 >= 6 { 1 } else { 0 }).collect())
                .unwrap();
        let masked = mask_preprocess(&rays, &a, &right_only, &data).unwrap();
        assert_eq!(masked.n_segments(), 1);
    }
}
