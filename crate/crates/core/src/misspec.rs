//! A four-pixel problem where an injective design still fails to identify
//! the Kullback–Leibler projection, and the multi-start check that tells it
//! apart from an identifiable segment model.
//!
//! Six rays cross a 2×2 grid: the two rows, the two columns and the two
//! diagonals. Only the top row sees activity. Every image with zero bottom
//! row and unit top-row total then minimizes the misspecified criterion.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Grid, SparseDesign};
use crate::model::{kl_objective, nll_from_projection, Image, Objective, Sinogram};
use crate::mri::{nonexpansiveness_check, reconstruct_segments_from, MixingDesign};
use crate::recon::{solve, SolverConfig, Start};
use crate::rng::{self, Stage};

/// Stopping rule used for every solve in this module.
pub fn tight_solver() -> SolverConfig {
    SolverConfig::default().with_stopping(100_000, 0.0)
}

/// Unnormalized ray/pixel lengths of the six rays.
pub fn raw_matrix() -> DMatrix<f64> {
    let r = std::f64::consts::SQRT_2;
    DMatrix::from_row_slice(
        6,
        4,
        &[
            1.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 1.0, //
            1.0, 0.0, 1.0, 0.0, //
            0.0, 1.0, 0.0, 1.0, //
            0.0, r, r, 0.0, //
            r, 0.0, 0.0, r,
        ],
    )
}

/// The raw matrix with every column scaled to sum to 1.
pub fn normalized_matrix() -> DMatrix<f64> {
    let mut m = raw_matrix();
    for mut c in m.column_iter_mut() {
        let s = c.sum();
        c /= s;
    }
    m
}

pub fn design() -> SparseDesign {
    SparseDesign::from_dense(&normalized_matrix()).expect("fixed matrix is a valid design")
}

pub fn grid() -> Grid {
    Grid::square(2).expect("2x2 grid")
}

/// Intensities seen by the six rays: only the first one is active.
pub fn truth_intensities() -> Sinogram {
    Sinogram::intensities(vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).expect("valid intensities")
}

/// `−log(1/(2+√2)) + 1`, the minimum of the criterion.
pub fn analytic_minimum() -> f64 {
    (2.0 + std::f64::consts::SQRT_2).ln() + 1.0
}

/// Determinant of `A′ᵀA′`.
pub fn gram_determinant() -> f64 {
    let a = raw_matrix();
    (a.transpose() * a).determinant()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CounterexamplePoint {
    pub start: [f64; 4],
    pub lambda: [f64; 4],
    pub objective: f64,
    pub iterations: usize,
}

/// Minimize the criterion from `start` with the production solver.
pub fn counterexample_solve(start: [f64; 4], solver: &SolverConfig) -> Result<CounterexamplePoint> {
    if start.iter().any(|&v| !(v >= 0.0)) || start[0] + start[1] <= 0.0 {
        return Err(Error::InvalidArgument(
            "start must be nonnegative with positive top-row mass".into(),
        ));
    }
    let a = design();
    let img = Image::new(grid(), start.to_vec())?;
    let cfg = SolverConfig {
        beta: 0.0,
        penalty: None,
        ..*solver
    };
    let report = solve(Start::From(&img), &truth_intensities(), &a, &cfg)?;
    let v = report.result.values();
    Ok(CounterexamplePoint {
        start,
        lambda: [v[0], v[1], v[2], v[3]],
        objective: kl_objective(&report.result, &truth_intensities(), &a)?.unwrap(),
        iterations: report.iterations,
    })
}

/// Random starts with positive top-row mass, keyed by `(seed, index)`.
pub fn random_starts(n: usize, seed: u64) -> Vec<[f64; 4]> {
    (0..n as u64)
        .map(|k| {
            let mut r = rng::stream(seed, Stage::Starts, k);
            let mut s = [0.0; 4];
            for v in &mut s {
                *v = r.random_range(0.01..2.0);
            }
            s
        })
        .collect()
}

/// Solve from several starts in parallel.
pub fn counterexample_multistart(
    starts: &[[f64; 4]],
    solver: &SolverConfig,
) -> Result<Vec<CounterexamplePoint>> {
    starts
        .par_iter()
        .map(|&s| counterexample_solve(s, solver))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridOracle {
    pub resolution: usize,
    pub min_value: f64,
    pub argmin: [f64; 4],
    /// Grid points within `1e-12` of the minimum.
    pub near_minimizers: Vec<[f64; 4]>,
}

/// Brute-force minimum of the criterion over the lattice
/// `{0, h, …, 2}⁴` with `h = 2 / resolution`.
pub fn counterexample_grid_oracle(resolution: usize) -> Result<GridOracle> {
    if resolution < 10 {
        return Err(Error::InvalidArgument(format!(
            "resolution must be at least 10, got {resolution}"
        )));
    }
    let a = normalized_matrix();
    let y = truth_intensities();
    let n = resolution + 1;
    let h = 2.0 / resolution as f64;
    let eval = |p: [f64; 4]| -> f64 {
        let proj = &a * DVector::from_column_slice(&p);
        match nll_from_projection(proj.as_slice(), y.values(), 1.0) {
            Objective::Finite(v) => v,
            Objective::Infeasible => f64::INFINITY,
        }
    };
    let per_slice: Vec<(f64, Vec<[f64; 4]>)> = (0..n)
        .into_par_iter()
        .map(|i0| {
            let mut best = f64::INFINITY;
            let mut pts = Vec::new();
            for i1 in 0..n {
                for i2 in 0..n {
                    for i3 in 0..n {
                        let p = [i0 as f64 * h, i1 as f64 * h, i2 as f64 * h, i3 as f64 * h];
                        let v = eval(p);
                        if v < best - 1e-12 {
                            best = v;
                            pts.clear();
                        }
                        if (v - best).abs() <= 1e-12 {
                            pts.push(p);
                        }
                    }
                }
            }
            (best, pts)
        })
        .collect();
    let min_value = per_slice.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let near_minimizers: Vec<[f64; 4]> = per_slice
        .into_iter()
        .filter(|s| (s.0 - min_value).abs() <= 1e-12)
        .flat_map(|s| s.1)
        .collect();
    Ok(GridOracle {
        resolution,
        min_value,
        argmin: near_minimizers[0],
        near_minimizers,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdentifiabilityReport {
    /// Multi-start solutions agree and curvature is positive everywhere probed.
    pub identified: bool,
    pub injective: bool,
    pub nonexpansive: bool,
    pub minimizers: Vec<Vec<f64>>,
    /// Largest coordinate difference between any two minimizers.
    pub spread: f64,
    /// Smallest curvature `dᵀ∇²L d / ‖d‖²` over the probed directions.
    pub min_curvature: f64,
}

/// Agreement tolerance between multi-start minimizers.
pub const AGREEMENT_TOL: f64 = 1e-6;

/// Solve the segment-level criterion from `n_starts` random starts and
/// probe its curvature along `n_directions` random feasible directions at
/// the first minimizer.
pub fn identifiability_positive_check(
    mixing: &MixingDesign,
    truth: &Sinogram,
    n_starts: usize,
    n_directions: usize,
    seed: u64,
    solver: &SolverConfig,
) -> Result<IdentifiabilityReport> {
    if n_starts < 2 {
        return Err(Error::InvalidArgument(
            "at least two starts are needed".into(),
        ));
    }
    let q = mixing.n_segments();
    let nonexpansive = nonexpansiveness_check(truth, mixing, 1e-9, solver)?.holds;
    let minimizers: Vec<Vec<f64>> = (0..n_starts as u64)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::stream(seed, Stage::Starts, k);
            let start: Vec<f64> = (0..q).map(|_| r.random_range(0.01..2.0)).collect();
            reconstruct_segments_from(start, truth.values(), mixing, solver).map(|d| d.lambda_m)
        })
        .collect::<Result<_>>()?;
    let mut spread: f64 = 0.0;
    for a in &minimizers {
        for b in &minimizers {
            for (u, v) in a.iter().zip(b) {
                spread = spread.max((u - v).abs());
            }
        }
    }
    let x = &minimizers[0];
    let proj = crate::recon::Projector::forward(mixing, x);
    let m = mixing.matrix();
    let mut r = rng::stream(seed, Stage::Probe, 0);
    let mut min_curvature = f64::INFINITY;
    for _ in 0..n_directions {
        // Coordinates at the boundary may only move inward.
        let d: Vec<f64> = x
            .iter()
            .map(|&xj| {
                let v: f64 = r.random_range(-1.0..1.0);
                if xj > 0.0 {
                    v
                } else {
                    v.abs()
                }
            })
            .collect();
        let dd = DVector::from_column_slice(&d);
        let ad = m * &dd;
        let mut c = 0.0;
        for i in 0..m.nrows() {
            let y = truth.values()[i];
            if y > 0.0 {
                c += y * ad[i] * ad[i] / (proj[i] * proj[i]);
            }
        }
        min_curvature = min_curvature.min(c / dd.norm_squared());
    }
    let injective = mixing.is_well_conditioned();
    Ok(IdentifiabilityReport {
        identified: spread <= AGREEMENT_TOL && min_curvature > 1e-10,
        injective,
        nonexpansive,
        minimizers,
        spread,
        min_curvature,
    })
}
