//! Binned nonparametric posterior learning: each draw perturbs the observed
//! counts with gamma weights, mixes in pseudo-data generated from a
//! segment-model draw at rate `θ = ρ·t`, and re-solves the penalized
//! reconstruction.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Grid, SparseDesign};
use crate::model::{Image, PenaltyParams, Sinogram};
use crate::mri::{wlb_sample, MixingDesign};
use crate::recon::{solve, SolverConfig, Start};
use crate::rng::{self, Stage};

/// How the gamma draws of a single NPL draw are produced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DrawMode {
    #[default]
    Sampled,
    /// Every gamma variable replaced by its mean. The mixing draw is then
    /// the segment fit to `Y/t`.
    Means,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NplConfig {
    /// Pseudo-data ratio; the pseudo-photon rate is `θ = ρ·t`.
    pub rho: f64,
    pub n_draws: usize,
    /// Penalty weight `β^t` on the count scale; the solver sees `β^t / t`.
    pub beta: f64,
    pub penalty: PenaltyParams,
    /// Stopping rule for the pixel-level solve. Its `beta` and `penalty`
    /// fields are overwritten per draw.
    pub solver: SolverConfig,
    /// Stopping rule for the segment-level solve.
    pub mixing_solver: SolverConfig,
    pub seed: u64,
    pub mode: DrawMode,
}

impl Default for NplConfig {
    fn default() -> Self {
        NplConfig {
            rho: 0.0,
            n_draws: 100,
            beta: 0.0,
            penalty: PenaltyParams::default(),
            solver: SolverConfig::default(),
            mixing_solver: SolverConfig::default(),
            seed: 0,
            mode: DrawMode::Sampled,
        }
    }
}

impl NplConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "rho must be finite and nonnegative, got {}",
                self.rho
            )));
        }
        if self.n_draws == 0 {
            return Err(Error::InvalidArgument(
                "at least one draw is required".into(),
            ));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "beta must be finite and nonnegative, got {}",
                self.beta
            )));
        }
        self.solver.validate()?;
        self.mixing_solver.validate()
    }

    fn pixel_solver(&self, t: f64) -> SolverConfig {
        SolverConfig {
            beta: self.beta / t,
            penalty: Some(self.penalty),
            ..self.solver
        }
    }
}

/// `Λ̃_i ~ Γ(Y_i + θΛ̃_{M,i}, 1/(θ + t))` with `θ = ρ·t`.
pub fn perturb_intensities(
    data: &Sinogram,
    mixing_projection: &[f64],
    rho: f64,
    seed: u64,
    b: u64,
) -> Result<Sinogram> {
    let values = perturbed_values(data, mixing_projection, rho, seed, b, DrawMode::Sampled)?;
    Sinogram::intensities(values)
}

fn perturbed_values(
    data: &Sinogram,
    mixing_projection: &[f64],
    rho: f64,
    seed: u64,
    b: u64,
    mode: DrawMode,
) -> Result<Vec<f64>> {
    let t = data.t();
    let theta = rho * t;
    if theta > 0.0 && mixing_projection.len() != data.d() {
        return Err(Error::DimensionMismatch {
            what: "mixing projection vs sinogram LORs",
            expected: data.d(),
            found: mixing_projection.len(),
        });
    }
    let scale = 1.0 / (theta + t);
    let shape = |i: usize, y: f64| {
        if theta > 0.0 {
            y + theta * mixing_projection[i]
        } else {
            y
        }
    };
    Ok(match mode {
        DrawMode::Sampled => {
            let mut r = rng::stream(seed, Stage::Perturb, b);
            data.values()
                .iter()
                .enumerate()
                .map(|(i, &y)| rng::gamma(&mut r, shape(i, y), scale))
                .collect()
        }
        DrawMode::Means => data
            .values()
            .iter()
            .enumerate()
            .map(|(i, &y)| shape(i, y) * scale)
            .collect(),
    })
}

/// One NPL draw and the work its solve took.
#[derive(Clone, Debug, PartialEq)]
pub struct DrawRecord {
    pub index: u64,
    pub image: Option<Image>,
    pub iterations: usize,
    pub converged: bool,
    pub error: Option<String>,
}

/// Draw `b` of the sampler. Deterministic in `(config.seed, b)`.
pub fn npl_draw(
    data: &Sinogram,
    design: &SparseDesign,
    mixing: Option<&MixingDesign>,
    grid: &Grid,
    config: &NplConfig,
    b: u64,
) -> Result<(Image, usize, bool)> {
    let t = data.t();
    let projection = if config.rho > 0.0 {
        let mixing = mixing
            .ok_or_else(|| Error::InvalidArgument("rho > 0 needs a segment design".into()))?;
        match config.mode {
            DrawMode::Sampled => {
                wlb_sample(data, mixing, config.seed, b, &config.mixing_solver)?.projection
            }
            DrawMode::Means => {
                let y: Vec<f64> = data.values().iter().map(|v| v / t).collect();
                crate::mri::reconstruct_segments(&y, mixing, &config.mixing_solver)?.projection
            }
        }
    } else {
        Vec::new()
    };
    let lt = perturbed_values(data, &projection, config.rho, config.seed, b, config.mode)?;
    let report = solve(
        Start::Uniform(*grid),
        &Sinogram::intensities(lt)?,
        design,
        &config.pixel_solver(t),
    )?;
    Ok((report.result, report.iterations, report.converged))
}

/// All draws of a run, in draw order.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleArchive {
    pub config: NplConfig,
    pub t: f64,
    pub grid: Grid,
    pub draws: Vec<DrawRecord>,
}

impl SampleArchive {
    /// Images of the draws that completed.
    pub fn images(&self) -> Vec<&Image> {
        self.draws.iter().filter_map(|d| d.image.as_ref()).collect()
    }

    pub fn n_failed(&self) -> usize {
        self.draws.iter().filter(|d| d.image.is_none()).count()
    }
}

/// Run `config.n_draws` independent draws. A failed draw is recorded and
/// the run continues. `workers = None` uses the global rayon pool.
pub fn npl_sample(
    data: &Sinogram,
    design: &SparseDesign,
    mixing: Option<&MixingDesign>,
    grid: &Grid,
    config: &NplConfig,
    workers: Option<usize>,
) -> Result<SampleArchive> {
    config.validate()?;
    if config.rho > 0.0 && mixing.is_none() {
        return Err(Error::InvalidArgument(
            "rho > 0 needs a segment design".into(),
        ));
    }
    let run = || -> Vec<DrawRecord> {
        (0..config.n_draws as u64)
            .into_par_iter()
            .map(|b| match npl_draw(data, design, mixing, grid, config, b) {
                Ok((image, iterations, converged)) => DrawRecord {
                    index: b,
                    image: Some(image),
                    iterations,
                    converged,
                    error: None,
                },
                Err(e) => DrawRecord {
                    index: b,
                    image: None,
                    iterations: 0,
                    converged: false,
                    error: Some(e.to_string()),
                },
            })
            .collect()
    };
    let draws = match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?
            .install(run),
        None => run(),
    };
    Ok(SampleArchive {
        config: config.clone(),
        t: data.t(),
        grid: *grid,
        draws,
    })
}
