//! Images, sinograms, phantoms, Poisson simulation and the objectives.
//!
//! The negative log-likelihood of an image `λ` given counts `Y` at exposure
//! `t` is `Σ_i tΛ_i − Y_i log(tΛ_i)` with `Λ = Aλ` and `0·log 0 = 0`. With
//! gamma-weighted intensities in place of counts the same functional is used
//! at `t = 1`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Grid, SparseDesign};
use crate::rng::{self, Stage};

/// Nonnegative activity on a pixel grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    grid: Grid,
    values: Vec<f64>,
}

impl Image {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_pixels() {
            return Err(Error::DimensionMismatch {
                what: "image pixels",
                expected: grid.n_pixels(),
                found: values.len(),
            });
        }
        if let Some(j) = values.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "pixel {j} has invalid activity {}",
                values[j]
            )));
        }
        Ok(Image { grid, values })
    }

    pub fn constant(grid: Grid, value: f64) -> Result<Self> {
        Image::new(grid, vec![value; grid.n_pixels()])
    }

    /// Caller guarantees the invariants.
    pub(crate) fn from_parts(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n_pixels());
        Image { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Pixel values along image row `row`, left to right.
    pub fn row(&self, row: usize) -> Result<&[f64]> {
        if row >= self.grid.height {
            return Err(Error::InvalidArgument(format!(
                "row {row} outside image of height {}",
                self.grid.height
            )));
        }
        let w = self.grid.width;
        Ok(&self.values[row * w..(row + 1) * w])
    }
}

/// Per-LOR counts or intensities together with the exposure they refer to.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    values: Vec<f64>,
    t: f64,
}

impl Sinogram {
    pub fn new(values: Vec<f64>, t: f64) -> Result<Self> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "exposure must be positive, got {t}"
            )));
        }
        if let Some(i) = values.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "LOR {i} has invalid value {}",
                values[i]
            )));
        }
        Ok(Sinogram { values, t })
    }

    /// Intensities at unit exposure.
    pub fn intensities(values: Vec<f64>) -> Result<Self> {
        Sinogram::new(values, 1.0)
    }

    pub(crate) fn from_parts(values: Vec<f64>, t: f64) -> Self {
        Sinogram { values, t }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn d(&self) -> usize {
        self.values.len()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// True when every value is a whole number.
    pub fn is_counts(&self) -> bool {
        self.values.iter().all(|v| v.fract() == 0.0)
    }
}

/// Objective value with an explicit marker for `+∞`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    Finite(f64),
    /// Some LOR carries data while the image predicts zero intensity there.
    Infeasible,
}

impl Objective {
    pub fn finite(self) -> Option<f64> {
        match self {
            Objective::Finite(v) => Some(v),
            Objective::Infeasible => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Objective::Finite(_))
    }

    /// Value of a finite objective; panics on `Infeasible`.
    pub fn unwrap(self) -> f64 {
        self.finite().expect("objective is infeasible")
    }

    pub(crate) fn add(self, v: f64) -> Objective {
        match self {
            Objective::Finite(a) => Objective::Finite(a + v),
            Objective::Infeasible => Objective::Infeasible,
        }
    }
}

impl PartialOrd for Objective {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        use std::cmp::Ordering::*;
        match (self, other) {
            (Objective::Finite(a), Objective::Finite(b)) => a.partial_cmp(b),
            (Objective::Infeasible, Objective::Infeasible) => Some(Equal),
            (Objective::Infeasible, _) => Some(Greater),
            (_, Objective::Infeasible) => Some(Less),
        }
    }
}

/// Log-cosh penalty parameters on the 8-neighborhood.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PenaltyParams {
    pub zeta: f64,
    pub nu: f64,
}

impl Default for PenaltyParams {
    fn default() -> Self {
        PenaltyParams {
            zeta: 0.05,
            nu: 0.15,
        }
    }
}

impl PenaltyParams {
    pub fn new(zeta: f64, nu: f64) -> Result<Self> {
        if !(zeta > 0.0 && zeta.is_finite()) || !(0.0..=1.0).contains(&nu) {
            return Err(Error::InvalidArgument(format!(
                "penalty needs zeta > 0 and nu in [0, 1], got zeta={zeta}, nu={nu}"
            )));
        }
        Ok(PenaltyParams { zeta, nu })
    }

    /// Pairwise potential `ψ(u) = (1−ν)ζ log cosh(u/ζ) + ν u²/2`.
    pub fn psi(&self, u: f64) -> f64 {
        (1.0 - self.nu) * self.zeta * log_cosh(u / self.zeta) + 0.5 * self.nu * u * u
    }
}

/// `log cosh x` without overflow.
pub fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Weight of a diagonal neighbor.
pub const DIAGONAL_WEIGHT: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Neighbor pairs `(j, k, w)` with `k` after `j` in raster order; each
/// unordered pair appears once.
pub fn neighbor_pairs(grid: &Grid) -> Vec<(usize, usize, f64)> {
    let (w, h) = (grid.width, grid.height);
    let mut pairs = Vec::with_capacity(4 * w * h);
    for r in 0..h {
        for c in 0..w {
            let j = grid.index(r, c);
            if c + 1 < w {
                pairs.push((j, grid.index(r, c + 1), 1.0));
            }
            if r + 1 < h {
                if c > 0 {
                    pairs.push((j, grid.index(r + 1, c - 1), DIAGONAL_WEIGHT));
                }
                pairs.push((j, grid.index(r + 1, c), 1.0));
                if c + 1 < w {
                    pairs.push((j, grid.index(r + 1, c + 1), DIAGONAL_WEIGHT));
                }
            }
        }
    }
    pairs
}

/// Symmetric 8-neighborhood in CSR form: for pixel `j`, the neighbors
/// `idx[ptr[j]..ptr[j+1]]` with weights `w[..]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Neighborhood {
    pub ptr: Vec<usize>,
    pub idx: Vec<usize>,
    pub w: Vec<f64>,
}

impl Neighborhood {
    pub fn eight(grid: &Grid) -> Self {
        let (w, h) = (grid.width as isize, grid.height as isize);
        let mut ptr = vec![0];
        let mut idx = Vec::new();
        let mut wt = Vec::new();
        for r in 0..h {
            for c in 0..w {
                for dr in -1..=1isize {
                    for dc in -1..=1isize {
                        if dr == 0 && dc == 0 {
                            continue;
                        }
                        let (rr, cc) = (r + dr, c + dc);
                        if rr < 0 || rr >= h || cc < 0 || cc >= w {
                            continue;
                        }
                        idx.push(grid.index(rr as usize, cc as usize));
                        wt.push(if dr != 0 && dc != 0 {
                            DIAGONAL_WEIGHT
                        } else {
                            1.0
                        });
                    }
                }
                ptr.push(idx.len());
            }
        }
        Neighborhood { ptr, idx, w: wt }
    }

    pub fn of(&self, j: usize) -> (&[usize], &[f64]) {
        let r = self.ptr[j]..self.ptr[j + 1];
        (&self.idx[r.clone()], &self.w[r])
    }
}

/// Split of the LORs into zero and positive intensity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexSets {
    pub i0: Vec<usize>,
    pub i1: Vec<usize>,
}

/// Disk phantom: `inner_value` within `r_in`, `outer_value` out to `r_out`,
/// zero beyond. With `r_out >= extent` the outer value fills the whole square.
pub fn make_disk_phantom(
    grid: &Grid,
    inner_value: f64,
    outer_value: f64,
    r_in: f64,
    r_out: f64,
) -> Result<Image> {
    if !(inner_value >= 0.0 && outer_value >= 0.0) {
        return Err(Error::InvalidArgument(
            "phantom values must be nonnegative".into(),
        ));
    }
    if !(r_in >= 0.0 && r_in < r_out) {
        return Err(Error::InvalidArgument(format!(
            "phantom radii must satisfy 0 <= r_in < r_out, got {r_in}, {r_out}"
        )));
    }
    let fills = r_out >= grid.extent;
    let values = (0..grid.n_pixels())
        .map(|j| {
            let [x, y] = grid.pixel_center(j);
            let r = x.hypot(y);
            if r < r_in {
                inner_value
            } else if fills || r < r_out {
                outer_value
            } else {
                0.0
            }
        })
        .collect();
    Image::new(*grid, values)
}

/// Synthetic brain-like phantom with its anatomical labels.
#[derive(Clone, Debug)]
pub struct BrainPhantom {
    pub image: Image,
    /// `-1` outside the head, `0` gray matter, `1` white matter,
    /// `2` ventricles. The lesion carries the label of the tissue around it.
    pub labels: Vec<i32>,
    pub n_regions: usize,
    /// Pixels covered by the lesion.
    pub lesion: Vec<usize>,
}

pub const GRAY_MATTER: f64 = 4.0;
pub const WHITE_MATTER: f64 = 1.0;
pub const VENTRICLE: f64 = 0.5;
pub const LESION_FACTOR: f64 = 1.5;

/// Elliptical head with a gray-matter rim, white-matter core, two ventricles
/// and a hot lesion (1.5× gray matter) invisible to the labels. Activities
/// are rescaled so the image sums to `total_activity`.
pub fn make_brain_phantom(grid: &Grid, total_activity: f64) -> Result<BrainPhantom> {
    if !(total_activity > 0.0 && total_activity.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "total activity must be positive, got {total_activity}"
        )));
    }
    let e = grid.extent;
    let inside = |x: f64, y: f64, cx: f64, cy: f64, ax: f64, ay: f64| {
        ((x - cx) / ax).powi(2) + ((y - cy) / ay).powi(2) < 1.0
    };
    let mut values = vec![0.0; grid.n_pixels()];
    let mut labels = vec![-1; grid.n_pixels()];
    let mut lesion = Vec::new();
    for j in 0..grid.n_pixels() {
        let [x, y] = grid.pixel_center(j);
        let (x, y) = (x / e, y / e);
        if !inside(x, y, 0.0, 0.0, 0.72, 0.88) {
            continue;
        }
        let (label, value) = if !inside(x, y, 0.0, 0.0, 0.56, 0.72) {
            (0, GRAY_MATTER)
        } else if inside(x, y, -0.16, 0.08, 0.09, 0.26) || inside(x, y, 0.16, 0.08, 0.09, 0.26) {
            (2, VENTRICLE)
        } else {
            (1, WHITE_MATTER)
        };
        labels[j] = label;
        values[j] = value;
        if inside(x, y, 0.3, -0.38, 0.13, 0.13) {
            values[j] = LESION_FACTOR * GRAY_MATTER;
            lesion.push(j);
        }
    }
    let sum: f64 = values.iter().sum();
    values.iter_mut().for_each(|v| *v *= total_activity / sum);
    Ok(BrainPhantom {
        image: Image::new(*grid, values)?,
        labels,
        n_regions: 3,
        lesion,
    })
}

fn check_design(lambda: &[f64], d: usize, design: &SparseDesign) -> Result<()> {
    if lambda.len() != design.p() {
        return Err(Error::DimensionMismatch {
            what: "image pixels vs design columns",
            expected: design.p(),
            found: lambda.len(),
        });
    }
    if d != design.d() {
        return Err(Error::DimensionMismatch {
            what: "sinogram LORs vs design rows",
            expected: design.d(),
            found: d,
        });
    }
    Ok(())
}

/// Counts `Y_i ~ Po(t·(Aλ)_i)`, one random stream per LOR.
pub fn simulate_sinogram(
    truth: &Image,
    design: &SparseDesign,
    t: f64,
    seed: u64,
) -> Result<Sinogram> {
    check_design(truth.values(), design.d(), design)?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "exposure must be positive, got {t}"
        )));
    }
    let lam = design.forward(truth.values());
    let counts = lam
        .par_iter()
        .enumerate()
        .map(|(i, &l)| rng::poisson(&mut rng::stream(seed, Stage::Simulate, i as u64), t * l))
        .collect();
    Ok(Sinogram::from_parts(counts, t))
}

/// `Σ_i tΛ_i − Y_i log(tΛ_i)` for projections `Λ` already computed.
pub fn nll_from_projection(proj: &[f64], data: &[f64], t: f64) -> Objective {
    let mut total = 0.0;
    for (&l, &y) in proj.iter().zip(data) {
        let tl = t * l;
        if y > 0.0 {
            if tl <= 0.0 {
                return Objective::Infeasible;
            }
            total += tl - y * tl.ln();
        } else {
            total += tl;
        }
    }
    Objective::Finite(total)
}

/// Poisson negative log-likelihood at the sinogram's exposure.
pub fn neg_log_likelihood(
    lambda: &Image,
    data: &Sinogram,
    design: &SparseDesign,
) -> Result<Objective> {
    check_design(lambda.values(), data.d(), design)?;
    Ok(nll_from_projection(
        &design.forward(lambda.values()),
        data.values(),
        data.t(),
    ))
}

/// `L(λ | Λ*, A, 1)`: the likelihood criterion with intensities as data.
pub fn kl_objective(lambda: &Image, target: &Sinogram, design: &SparseDesign) -> Result<Objective> {
    check_design(lambda.values(), target.d(), design)?;
    Ok(nll_from_projection(
        &design.forward(lambda.values()),
        target.values(),
        1.0,
    ))
}

/// `Σ_j Σ_{k∈N_j} w_jk ψ(λ_j − λ_k)` over ordered neighbor pairs.
pub fn penalty_value(lambda: &Image, params: &PenaltyParams) -> f64 {
    penalty_from_pairs(lambda.values(), &neighbor_pairs(lambda.grid()), params)
}

pub(crate) fn penalty_from_pairs(
    values: &[f64],
    pairs: &[(usize, usize, f64)],
    params: &PenaltyParams,
) -> f64 {
    // Each unordered pair stands for two ordered ones.
    2.0 * pairs
        .iter()
        .map(|&(j, k, w)| w * params.psi(values[j] - values[k]))
        .sum::<f64>()
}

/// `ω(u) = ψ'(u)/u`, the curvature of the parabola majorizing `ψ` at `u`.
pub fn penalty_curvature(u: f64, params: &PenaltyParams) -> f64 {
    let x = u / params.zeta;
    let shape = if x.abs() < 1e-4 {
        // tanh(x)/x = 1 − x²/3 + O(x⁴)
        (1.0 - x * x / 3.0) / params.zeta
    } else {
        x.tanh() / u
    };
    (1.0 - params.nu) * shape + params.nu
}

/// `L + β·φ`. With `β = 0` the penalty is not evaluated.
pub fn penalized_objective(
    lambda: &Image,
    data: &Sinogram,
    design: &SparseDesign,
    beta: f64,
    penalty: &PenaltyParams,
) -> Result<Objective> {
    if !(beta >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "beta must be nonnegative, got {beta}"
        )));
    }
    let nll = neg_log_likelihood(lambda, data, design)?;
    Ok(if beta == 0.0 {
        nll
    } else {
        nll.add(beta * penalty_value(lambda, penalty))
    })
}

/// LORs with intensity at most `tol` versus the rest.
pub fn index_sets(intensities: &Sinogram, tol: f64) -> IndexSets {
    let (i0, i1) = (0..intensities.d()).partition(|&i| intensities.values()[i] <= tol);
    IndexSets { i0, i1 }
}

/// Default zero tolerance: exact for integer or exactly simulated data,
/// `1e-12·max` otherwise.
pub fn default_zero_tol(intensities: &Sinogram) -> f64 {
    if intensities.is_counts() {
        0.0
    } else {
        1e-12 * intensities.values().iter().cloned().fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{assemble_design, build_parallel_geometry, Normalization};

    fn one_by_one() -> (Grid, SparseDesign) {
        let g = Grid::square(1).unwrap();
        (g, SparseDesign::from_rows(1, vec![vec![(0, 1.0)]]).unwrap())
    }

    #[test]
    fn likelihood_examples() {
        let (g, a) = one_by_one();
        let lam = Image::new(g, vec![2.0]).unwrap();
        let y = Sinogram::new(vec![2.0], 1.0).unwrap();
        let v = neg_log_likelihood(&lam, &y, &a).unwrap().unwrap();
        assert!((v - (2.0 - 2.0 * 2f64.ln())).abs() < 1e-15);

        let zero = Sinogram::new(vec![0.0], 3.0).unwrap();
        assert_eq!(
            neg_log_likelihood(&lam, &zero, &a).unwrap(),
            Objective::Finite(6.0)
        );

        let dark = Image::new(g, vec![0.0]).unwrap();
        let one = Sinogram::new(vec![1.0], 1.0).unwrap();
        assert_eq!(
            neg_log_likelihood(&dark, &one, &a).unwrap(),
            Objective::Infeasible
        );
        assert!(Objective::Infeasible > Objective::Finite(1e300));
    }

    #[test]
    fn two_pixel_penalty_counts_both_orders() {
        let g = Grid::new(2, 1, 1.0).unwrap();
        let p = PenaltyParams::new(0.05, 0.0).unwrap();
        let img = Image::new(g, vec![0.3, 0.1]).unwrap();
        let expected = 2.0 * 0.05 * (0.2f64 / 0.05).cosh().ln();
        assert!((penalty_value(&img, &p) - expected).abs() < 1e-14);
    }

    #[test]
    fn quadratic_endpoint() {
        let g = Grid::new(3, 1, 1.0).unwrap();
        let p = PenaltyParams::new(0.05, 1.0).unwrap();
        let img = Image::new(g, vec![1.0, 3.0, 0.0]).unwrap();
        // Ordered pairs: 2·(½·4 + ½·9)
        assert!((penalty_value(&img, &p) - 13.0).abs() < 1e-12);
        assert_eq!(penalty_value(&Image::constant(g, 2.5).unwrap(), &p), 0.0);
    }

    #[test]
    fn neighbor_pairs_match_csr_neighborhood() {
        let g = Grid::new(5, 4, 1.0).unwrap();
        let pairs = neighbor_pairs(&g);
        let nb = Neighborhood::eight(&g);
        assert_eq!(2 * pairs.len(), nb.idx.len());
        for &(j, k, w) in &pairs {
            let (idx, wt) = nb.of(j);
            let pos = idx.iter().position(|&x| x == k).unwrap();
            assert_eq!(wt[pos], w);
            let (idx, wt) = nb.of(k);
            let pos = idx.iter().position(|&x| x == j).unwrap();
            assert_eq!(wt[pos], w);
        }
    }

    #[test]
    fn log_cosh_is_stable() {
        for &x in &[0.0, 1e-8, 0.5, 3.0, 20.0] {
            assert!((log_cosh(x) - f64::cosh(x).ln()).abs() < 1e-14, "x={x}");
        }
        assert!((log_cosh(1e4) - (1e4 - std::f64::consts::LN_2)).abs() < 1e-9);
        assert_eq!(log_cosh(-3.0), log_cosh(3.0));
    }

    #[test]
    fn curvature_limit_and_monotonicity() {
        let p = PenaltyParams::default();
        assert!((penalty_curvature(0.0, &p) - 17.15).abs() < 1e-12);
        let q = PenaltyParams::new(0.05, 1.0).unwrap();
        assert_eq!(penalty_curvature(0.3, &q), 1.0);
        let mut prev = f64::INFINITY;
        for k in 0..10_000 {
            let u = 100.0 * p.zeta * k as f64 / 9999.0;
            let w = penalty_curvature(u, &p);
            assert!(w > 0.0 && w <= prev + 1e-12, "u={u}");
            prev = w;
        }
        // Continuity across the series cut-over.
        let x = 1e-4 * p.zeta;
        let a = penalty_curvature(x * 0.999, &p);
        let b = penalty_curvature(x * 1.001, &p);
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn disk_phantom_profile() {
        let g = Grid::square(64).unwrap();
        let img = make_disk_phantom(&g, 2.0, 1.0, 0.25, 1.0).unwrap();
        let row = img.row(32).unwrap();
        assert_eq!(row[0], 1.0);
        assert_eq!(row[32], 2.0);
        assert_eq!(row[63], 1.0);
        assert!(img.values().iter().all(|&v| v == 1.0 || v == 2.0));
        let annulus = make_disk_phantom(&g, 3.0, 1.0, 0.0, 0.5).unwrap();
        assert!(annulus.values().iter().all(|&v| v == 1.0 || v == 0.0));
        assert!(make_disk_phantom(&g, -1.0, 1.0, 0.1, 0.5).is_err());
    }

    #[test]
    fn brain_phantom_total_and_lesion() {
        let g = Grid::square(64).unwrap();
        let ph = make_brain_phantom(&g, 5e5).unwrap();
        assert!((ph.image.total() - 5e5).abs() < 1e-6);
        assert!(!ph.lesion.is_empty());
        let gm = ph.image.values()[ph.labels.iter().position(|&l| l == 0).unwrap()];
        for &j in &ph.lesion {
            assert!((ph.image.values()[j] / gm - LESION_FACTOR).abs() < 1e-12);
            assert!(ph.labels[j] >= 0);
        }
        for r in 0..3 {
            assert!(ph.labels.contains(&r));
        }
    }

    #[test]
    fn simulation_is_deterministic_and_respects_zeros() {
        let g = Grid::square(8).unwrap();
        let rays = build_parallel_geometry(8, 8, &g).unwrap();
        let a = assemble_design(&rays, &g, Normalization::ColumnStochastic).unwrap();
        let truth = make_disk_phantom(&g, 3.0, 1.0, 0.3, 0.7).unwrap();
        let y1 = simulate_sinogram(&truth, &a, 50.0, 7).unwrap();
        let y2 = simulate_sinogram(&truth, &a, 50.0, 7).unwrap();
        assert_eq!(y1, y2);
        assert!(y1.is_counts());
        let proj = a.forward(truth.values());
        for (y, l) in y1.values().iter().zip(&proj) {
            if *l == 0.0 {
                assert_eq!(*y, 0.0);
            }
        }
    }

    #[test]
    fn index_sets_partition() {
        let s = Sinogram::intensities(vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let sets = index_sets(&s, 0.0);
        assert_eq!(sets.i1, vec![0]);
        assert_eq!(sets.i0, vec![1, 2, 3, 4, 5]);
        let pos = Sinogram::intensities(vec![0.5, 2.0]).unwrap();
        assert!(index_sets(&pos, 0.0).i0.is_empty());
    }
}
