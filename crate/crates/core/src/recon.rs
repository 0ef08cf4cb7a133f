//! MLEM and penalized GEM reconstruction by optimization transfer.
//!
//! Every solver here minimizes `L(λ | Λ̃, A, 1) + β·φ(λ)` for nonnegative
//! intensities `Λ̃`. A count sinogram at exposure `t` enters as `Y/t`, which
//! changes the likelihood by a factor `t` and a constant, so the MAP at
//! penalty weight `β^t` is the minimizer at `β = β^t/t`.

use crate::error::{Error, Result};
use crate::geometry::{Grid, SparseDesign};
use crate::model::{
    neighbor_pairs, nll_from_projection, penalty_curvature, penalty_from_pairs, Image, Objective,
    PenaltyParams, Sinogram,
};

/// Iterates below this are treated as exact zeros.
pub const TINY: f64 = 1e-300;

/// Linear operator with nonnegative entries and positive column sums.
pub trait Projector: Sync {
    fn n_lors(&self) -> usize;
    fn n_cols(&self) -> usize;
    fn forward(&self, x: &[f64]) -> Vec<f64>;
    fn back(&self, v: &[f64]) -> Vec<f64>;
    /// Column sums `A_j`.
    fn sensitivities(&self) -> &[f64];
    /// Rows without any nonzero entry carry no information about the image
    /// and are left out of the likelihood.
    fn row_is_empty(&self, _i: usize) -> bool {
        false
    }
}

impl Projector for SparseDesign {
    fn n_lors(&self) -> usize {
        self.d()
    }
    fn n_cols(&self) -> usize {
        self.p()
    }
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        SparseDesign::forward(self, x)
    }
    fn back(&self, v: &[f64]) -> Vec<f64> {
        SparseDesign::back(self, v)
    }
    fn sensitivities(&self) -> &[f64] {
        self.col_sums()
    }
}

#[inline]
fn flush(v: f64) -> f64 {
    if v < TINY {
        0.0
    } else {
        v
    }
}

/// `Λ̃_i / Λ_i`, zero wherever `Λ̃_i = 0`.
fn em_ratio<P: Projector + ?Sized>(proj: &[f64], data: &[f64], design: &P) -> Result<Vec<f64>> {
    proj.iter()
        .zip(data)
        .enumerate()
        .map(|(i, (&l, &y))| {
            if y == 0.0 {
                Ok(0.0)
            } else if l > 0.0 {
                Ok(y / l)
            } else if design.row_is_empty(i) {
                Ok(0.0)
            } else {
                Err(Error::DegenerateSupport { lor: i })
            }
        })
        .collect()
}

/// The EM image `λ^L_j = (λ_j/A_j) Σ_i a_ij Λ̃_i/Λ_i` given `proj = Aλ`.
pub fn em_update<P: Projector + ?Sized>(
    current: &[f64],
    proj: &[f64],
    data: &[f64],
    design: &P,
) -> Result<Vec<f64>> {
    let ratio = em_ratio(proj, data, design)?;
    let back = design.back(&ratio);
    Ok(current
        .iter()
        .zip(&back)
        .zip(design.sensitivities())
        .map(|((&l, &b), &s)| if l < TINY { 0.0 } else { flush(l * b / s) })
        .collect())
}

/// Penalty data shared by every iteration of a solve.
#[derive(Clone, Debug)]
pub struct PenaltyContext {
    pub params: PenaltyParams,
    pub pairs: Vec<(usize, usize, f64)>,
}

impl PenaltyContext {
    pub fn new(grid: &Grid, params: PenaltyParams) -> Self {
        PenaltyContext {
            params,
            pairs: neighbor_pairs(grid),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        penalty_from_pairs(x, &self.pairs, &self.params)
    }
}

/// Closed-form minimizer of the separable surrogate, given the EM image.
fn gem_combine(
    current: &[f64],
    lam_l: &[f64],
    sens: &[f64],
    beta: f64,
    pen: &PenaltyContext,
) -> Result<Vec<f64>> {
    let n = current.len();
    // ω is even, so one evaluation serves both orders of a pair.
    let mut curv = vec![0.0; n];
    let mut centre = vec![0.0; n];
    for &(j, k, w) in &pen.pairs {
        let (lj, lk) = (current[j], current[k]);
        let om = w * penalty_curvature(lj - lk, &pen.params);
        let c = om * (lj + lk);
        curv[j] += om;
        curv[k] += om;
        centre[j] += c;
        centre[k] += c;
    }
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let (curv, centre) = (curv[j], centre[j]);
        let p_j = 4.0 * curv;
        let lam_phi = 2.0 * centre / p_j;
        let beta_j = beta * p_j / sens[j];
        let b = 1.0 - beta_j * lam_phi;
        let ll = lam_l[j];
        if !(beta_j.is_finite() && b.is_finite() && beta_j > 0.0) {
            return Err(Error::Numeric(format!(
                "surrogate parameters at pixel {j} are not finite (beta_j={beta_j}, b={b})"
            )));
        }
        let disc = (b * b + 4.0 * beta_j * ll).sqrt();
        let v = if b >= 0.0 {
            if ll == 0.0 {
                0.0
            } else {
                2.0 * ll / (disc + b)
            }
        } else {
            (disc - b) / (2.0 * beta_j)
        };
        out.push(flush(v));
    }
    Ok(out)
}

/// Effective penalty weight and shape for [`gem_step`] and [`solve`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub rel_tol: f64,
    /// Coefficient in front of `φ`, already divided by the exposure.
    pub beta: f64,
    pub penalty: Option<PenaltyParams>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: 500,
            rel_tol: 1e-9,
            beta: 0.0,
            penalty: None,
        }
    }
}

impl SolverConfig {
    pub fn penalized(beta: f64, penalty: PenaltyParams) -> Self {
        SolverConfig {
            beta,
            penalty: Some(penalty),
            ..Default::default()
        }
    }

    pub fn with_stopping(mut self, max_iters: usize, rel_tol: f64) -> Self {
        self.max_iters = max_iters;
        self.rel_tol = rel_tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument(
                "max_iters must be at least 1".into(),
            ));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "rel_tol must be nonnegative, got {}",
                self.rel_tol
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "beta must be finite and nonnegative, got {}",
                self.beta
            )));
        }
        Ok(())
    }

    fn is_penalized(&self) -> bool {
        self.beta > 0.0 && self.penalty.is_some()
    }
}

fn intensities(data: &Sinogram) -> Vec<f64> {
    let t = data.t();
    if t == 1.0 {
        data.values().to_vec()
    } else {
        data.values().iter().map(|y| y / t).collect()
    }
}

fn check_dims<P: Projector + ?Sized>(x: usize, d: usize, design: &P) -> Result<()> {
    if x != design.n_cols() {
        return Err(Error::DimensionMismatch {
            what: "image pixels vs design columns",
            expected: design.n_cols(),
            found: x,
        });
    }
    if d != design.n_lors() {
        return Err(Error::DimensionMismatch {
            what: "sinogram LORs vs design rows",
            expected: design.n_lors(),
            found: d,
        });
    }
    Ok(())
}

/// One MLEM iteration.
pub fn mlem_step(current: &Image, data: &Sinogram, design: &SparseDesign) -> Result<Image> {
    check_dims(current.len(), data.d(), design)?;
    let proj = design.forward(current.values());
    let next = em_update(current.values(), &proj, &intensities(data), design)?;
    Ok(Image::from_parts(*current.grid(), next))
}

/// One GEM iteration for `L + β·φ`; identical to [`mlem_step`] when `β = 0`.
pub fn gem_step(
    current: &Image,
    data: &Sinogram,
    design: &SparseDesign,
    config: &SolverConfig,
) -> Result<Image> {
    config.validate()?;
    if !config.is_penalized() {
        return mlem_step(current, data, design);
    }
    check_dims(current.len(), data.d(), design)?;
    let pen = PenaltyContext::new(current.grid(), config.penalty.unwrap());
    let proj = design.forward(current.values());
    let lam_l = em_update(current.values(), &proj, &intensities(data), design)?;
    let next = gem_combine(
        current.values(),
        &lam_l,
        design.col_sums(),
        config.beta,
        &pen,
    )?;
    Ok(Image::from_parts(*current.grid(), next))
}

/// Outcome of [`solve`].
#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub result: Image,
    pub iterations: usize,
    /// Objective at the start followed by its value after every iteration.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

impl SolveReport {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().unwrap()
    }
}

/// Where a solve begins.
#[derive(Clone, Copy, Debug)]
pub enum Start<'a> {
    /// Constant image `Σ Λ̃_i / Σ A_j` on the given grid.
    Uniform(Grid),
    From(&'a Image),
}

/// Uniform starting value preserving total expected counts.
pub fn uniform_start_value(data: &[f64], sens: &[f64]) -> f64 {
    let total: f64 = data.iter().sum();
    let s: f64 = sens.iter().sum();
    // An all-zero sinogram would start at 0, where MLEM freezes; any positive
    // value converges to the zero image instead.
    if total > 0.0 {
        total / s
    } else {
        1.0
    }
}

/// No pixel moved by more than a few ulps.
fn is_fixed_point(x: &[f64], next: &[f64]) -> bool {
    x.iter()
        .zip(next)
        .all(|(a, b)| (a - b).abs() <= 4.0 * f64::EPSILON * a.abs().max(b.abs()))
}

/// Slice-level solver shared with the segment-level reconstructions.
pub(crate) struct Iterates {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub trace: Vec<f64>,
    pub converged: bool,
}

pub(crate) fn iterate<P: Projector + ?Sized>(
    start: Vec<f64>,
    data: &[f64],
    design: &P,
    beta: f64,
    penalty: Option<&PenaltyContext>,
    max_iters: usize,
    rel_tol: f64,
) -> Result<Iterates> {
    let pen = penalty.filter(|_| beta > 0.0);
    let objective = |x: &[f64], proj: &[f64]| -> Result<f64> {
        let mut v = nll_from_projection(proj, data, 1.0);
        if let Some(p) = pen {
            v = v.add(beta * p.value(x));
        }
        match v {
            Objective::Finite(v) => Ok(v),
            Objective::Infeasible => Err(Error::Numeric(
                "objective became infinite during reconstruction".into(),
            )),
        }
    };
    let mut x = start;
    let mut proj = design.forward(&x);
    let mut trace = vec![objective(&x, &proj)?];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        let lam_l = em_update(&x, &proj, data, design)?;
        let next = match pen {
            Some(p) => gem_combine(&x, &lam_l, design.sensitivities(), beta, p)?,
            None => lam_l,
        };
        if is_fixed_point(&x, &next) {
            converged = true;
            break;
        }
        iterations += 1;
        x = next;
        proj = design.forward(&x);
        let obj = objective(&x, &proj)?;
        let prev = *trace.last().unwrap();
        trace.push(obj);
        if (obj - prev).abs() / (1.0 + obj.abs()) < rel_tol {
            converged = true;
            break;
        }
    }
    Ok(Iterates {
        x,
        iterations,
        trace,
        converged,
    })
}

/// Iterate [`gem_step`] until the relative objective change drops below
/// `rel_tol` or `max_iters` iterations have run.
///
/// An iteration that returns its input unchanged up to rounding is a fixed
/// point; the solve stops there without counting it.
pub fn solve(
    start: Start<'_>,
    data: &Sinogram,
    design: &SparseDesign,
    config: &SolverConfig,
) -> Result<SolveReport> {
    config.validate()?;
    let y = intensities(data);
    let (grid, x0) = match start {
        Start::Uniform(grid) => {
            let v = uniform_start_value(&y, design.col_sums());
            (grid, vec![v; grid.n_pixels()])
        }
        Start::From(img) => (*img.grid(), img.values().to_vec()),
    };
    check_dims(x0.len(), data.d(), design)?;
    let pen = config
        .penalty
        .filter(|_| config.beta > 0.0)
        .map(|p| PenaltyContext::new(&grid, p));
    let it = iterate(
        x0,
        &y,
        design,
        config.beta,
        pen.as_ref(),
        config.max_iters,
        config.rel_tol,
    )?;
    Ok(SolveReport {
        result: Image::from_parts(grid, it.x),
        iterations: it.iterations,
        objective_trace: it.trace,
        converged: it.converged,
    })
}

/// Minimizer of `L(λ | Aλ*, A, 1) + β_min·φ(λ)`: the penalty-selected
/// representative of the images that project like the truth.
pub fn lambda_opt(
    truth: &Image,
    design: &SparseDesign,
    beta_min: f64,
    penalty: PenaltyParams,
    max_iters: usize,
    rel_tol: f64,
) -> Result<SolveReport> {
    if !(beta_min > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "beta_min must be positive, got {beta_min}"
        )));
    }
    let target = Sinogram::intensities(design.forward(truth.values()))?;
    let config = SolverConfig::penalized(beta_min, penalty).with_stopping(max_iters, rel_tol);
    solve(Start::Uniform(*truth.grid()), &target, design, &config)
}

/// Jensen surrogate of the likelihood built at `anchor`.
///
/// Equals `L(anchor | Λ̃, A, 1)` at `λ = anchor` and lies above `L`
/// wherever both are finite.
pub fn surrogate_likelihood(
    lambda: &[f64],
    anchor: &[f64],
    data: &[f64],
    design: &SparseDesign,
) -> Objective {
    let proj = design.forward(anchor);
    let mut total = 0.0;
    for i in 0..design.d() {
        let (cols, vals) = design.row(i);
        for (&j, &a) in cols.iter().zip(vals) {
            if anchor[j] == 0.0 {
                total += a * lambda[j];
                continue;
            }
            let weight = a * anchor[j] / proj[i];
            let x = lambda[j] * proj[i] / anchor[j];
            let f = if data[i] == 0.0 {
                x
            } else if x > 0.0 {
                x - data[i] * x.ln()
            } else {
                return Objective::Infeasible;
            };
            total += weight * f;
        }
    }
    Objective::Finite(total)
}

/// Separable quadratic surrogate of `φ` built at `anchor`, including the
/// constant that makes it touch `φ` there.
pub fn surrogate_penalty(lambda: &[f64], anchor: &[f64], pen: &PenaltyContext) -> f64 {
    let params = &pen.params;
    let mut total = 0.0;
    for &(j, k, w) in &pen.pairs {
        let u0 = anchor[j] - anchor[k];
        let om = penalty_curvature(u0, params);
        let c = 0.5 * (anchor[j] + anchor[k]);
        // Both orders of the pair, each majorized by the Huber parabola and
        // split with De Pierro's convexity trick.
        total += 2.0 * w * (params.psi(u0) - 0.5 * om * u0 * u0);
        total += 2.0 * w * om * ((lambda[j] - c).powi(2) + (lambda[k] - c).powi(2));
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{assemble_design, build_parallel_geometry, Normalization};
    use crate::model::{make_disk_phantom, penalized_objective, simulate_sinogram};

    fn setup(n: usize) -> (Grid, SparseDesign, Image) {
        let g = Grid::square(n).unwrap();
        let rays = build_parallel_geometry(n, n, &g).unwrap();
        let a = assemble_design(&rays, &g, Normalization::ColumnStochastic).unwrap();
        let truth = make_disk_phantom(&g, 2.0, 1.0, 0.25, 1.0).unwrap();
        (g, a, truth)
    }

    fn identity(n: usize) -> SparseDesign {
        SparseDesign::from_rows(n, (0..n).map(|j| vec![(j, 1.0)]).collect()).unwrap()
    }

    #[test]
    fn identity_design_lands_in_one_step() {
        let g = Grid::new(5, 1, 1.0).unwrap();
        let a = identity(5);
        let data = Sinogram::intensities(vec![0.5, 1.0, 0.0, 3.0, 7.25]).unwrap();
        let start = Image::constant(g, 0.9).unwrap();
        let same = |x: &[f64]| {
            x.iter()
                .zip(data.values())
                .all(|(u, v)| (u - v).abs() <= 2.0 * f64::EPSILON * v)
        };
        assert!(same(mlem_step(&start, &data, &a).unwrap().values()));
        let rep = solve(Start::Uniform(g), &data, &a, &SolverConfig::default()).unwrap();
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
        assert!(same(rep.result.values()));
    }

    #[test]
    fn mass_identity_and_frozen_zero() {
        let (g, a, truth) = setup(8);
        let data = simulate_sinogram(&truth, &a, 20.0, 3).unwrap();
        let y: Vec<f64> = data.values().iter().map(|v| v / 20.0).collect();
        let mut cur = Image::constant(g, 1.0).unwrap().into_values();
        cur[5] = 0.0;
        let mut img = Image::new(g, cur).unwrap();
        let total: f64 = y.iter().sum();
        for _ in 0..20 {
            img = mlem_step(&img, &data, &a).unwrap();
            let mass: f64 = img
                .values()
                .iter()
                .zip(a.col_sums())
                .map(|(l, s)| l * s)
                .sum();
            assert!((mass - total).abs() <= 1e-10 * total);
            assert_eq!(img.values()[5], 0.0);
        }
    }

    #[test]
    fn degenerate_support_is_reported() {
        let g = Grid::new(2, 1, 1.0).unwrap();
        let a = identity(2);
        let data = Sinogram::intensities(vec![1.0, 1.0]).unwrap();
        let start = Image::new(g, vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            mlem_step(&start, &data, &a),
            Err(Error::DegenerateSupport { lor: 1 })
        ));
    }

    #[test]
    fn gem_with_zero_beta_is_mlem_bitwise() {
        let (g, a, truth) = setup(8);
        let data = simulate_sinogram(&truth, &a, 50.0, 1).unwrap();
        let start = Image::constant(g, 1.3).unwrap();
        let cfg = SolverConfig::penalized(0.0, PenaltyParams::default());
        let x = gem_step(&start, &data, &a, &cfg).unwrap();
        let y = mlem_step(&start, &data, &a).unwrap();
        assert!(x
            .values()
            .iter()
            .zip(y.values())
            .all(|(u, v)| u.to_bits() == v.to_bits()));
    }

    #[test]
    fn gem_descends_on_disk_phantom() {
        let (g, a, truth) = setup(16);
        let data = simulate_sinogram(&truth, &a, 30.0, 9).unwrap();
        let penalty = PenaltyParams::default();
        let cfg = SolverConfig::penalized(2e-3 / 30.0 * 100.0, penalty);
        let y = Sinogram::intensities(data.values().iter().map(|v| v / 30.0).collect()).unwrap();
        let mut img = Image::constant(g, 1.0).unwrap();
        let mut prev = penalized_objective(&img, &y, &a, cfg.beta, &penalty)
            .unwrap()
            .unwrap();
        for _ in 0..50 {
            img = gem_step(&img, &y, &a, &cfg).unwrap();
            let cur = penalized_objective(&img, &y, &a, cfg.beta, &penalty)
                .unwrap()
                .unwrap();
            assert!(cur <= prev + 1e-12 * prev.abs().max(1.0));
            prev = cur;
        }
    }

    #[test]
    fn constant_image_is_fixed_point() {
        let (g, a, _) = setup(8);
        let c = Image::constant(g, 1.7).unwrap();
        let data = Sinogram::intensities(a.forward(c.values())).unwrap();
        let cfg = SolverConfig::penalized(5.0, PenaltyParams::default());
        let next = gem_step(&c, &data, &a, &cfg).unwrap();
        for v in next.values() {
            assert!((v - 1.7).abs() < 1e-12);
        }
    }

    #[test]
    fn surrogates_touch_at_anchor() {
        let (g, a, truth) = setup(6);
        let data = a.forward(truth.values());
        let pen = PenaltyContext::new(&g, PenaltyParams::default());
        let anchor: Vec<f64> = (0..g.n_pixels())
            .map(|j| 0.5 + (j as f64 * 0.7).sin().abs())
            .collect();
        let ql = surrogate_likelihood(&anchor, &anchor, &data, &a).unwrap();
        let l = nll_from_projection(&a.forward(&anchor), &data, 1.0).unwrap();
        assert!((ql - l).abs() < 1e-10 * l.abs().max(1.0));
        let qp = surrogate_penalty(&anchor, &anchor, &pen);
        assert!((qp - pen.value(&anchor)).abs() < 1e-10);
    }

    #[test]
    fn lambda_opt_on_identity_recovers_truth() {
        let g = Grid::square(8).unwrap();
        let a = identity(64);
        let truth = make_disk_phantom(&g, 2.0, 1.0, 0.4, 1.0).unwrap();
        let rep = lambda_opt(&truth, &a, 1e-6, PenaltyParams::default(), 2000, 1e-15).unwrap();
        for (x, t) in rep.result.values().iter().zip(truth.values()) {
            assert!((x - t).abs() < 1e-4, "{x} vs {t}");
        }
    }

    #[test]
    fn trace_is_monotone() {
        let (g, a, truth) = setup(12);
        let data = simulate_sinogram(&truth, &a, 10.0, 2).unwrap();
        let cfg = SolverConfig::penalized(2e-3, PenaltyParams::default()).with_stopping(100, 0.0);
        let rep = solve(Start::Uniform(g), &data, &a, &cfg).unwrap();
        assert_eq!(rep.iterations, 100);
        for w in rep.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs());
        }
    }
}
