//! Command-line driver: one subcommand per pipeline stage, each reading a
//! `key=value` configuration and writing its artifacts plus a
//! `manifest.txt` into the output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::geometry::{Grid, RaySet, SparseDesign};
use crate::gibbs::{self, GibbsConfig};
use crate::io;
use crate::misspec;
use crate::model::{Image, Sinogram};
use crate::mri::{self, Segmentation};
use crate::npl::{npl_sample, NplConfig};
use crate::recon::{self, SolveReport, SolverConfig, Start};
use crate::stats;

/// Environment variable overriding the default output directory.
pub const OUT_DIR_ENV: &str = "NPL_ET_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "npl-et",
    version,
    about = "Posterior sampling for emission tomography"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Configuration file of `key=value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 is the reference execution.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory (default `$NPL_ET_OUT` or `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write the configured phantom (and labels for the brain phantom).
    Phantom,
    /// Write the design matrix and the noiseless projection of the truth.
    Project,
    /// Draw a Poisson sinogram from the truth.
    Simulate,
    /// Unpenalized reconstruction.
    Mlem,
    /// Penalized reconstruction with `beta / t`.
    Map,
    /// Penalized reconstruction of the noiseless projection with `beta_min`.
    LambdaOpt,
    /// Bootstrap draws of the segment activities.
    Wlb,
    /// Posterior draws into a sample archive.
    Npl,
    /// Data-augmentation Gibbs chain.
    Gibbs,
    /// Eigen-mode autocorrelations of a chain against their prediction.
    Diagnose,
    /// Pixelwise mean, standard deviation and quantile band of an archive.
    Summarize,
    /// Coverage of a target image by an archive's quantile band.
    Coverage,
    /// The four-pixel non-identifiability example.
    #[command(alias = "misspec-demo")]
    Misspec,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Phantom => "phantom",
            Command::Project => "project",
            Command::Simulate => "simulate",
            Command::Mlem => "mlem",
            Command::Map => "map",
            Command::LambdaOpt => "lambda-opt",
            Command::Wlb => "wlb",
            Command::Npl => "npl",
            Command::Gibbs => "gibbs",
            Command::Diagnose => "diagnose",
            Command::Summarize => "summarize",
            Command::Coverage => "coverage",
            Command::Misspec => "misspec",
        }
    }
}

/// Run a parsed command line; returns the lines to print.
pub fn execute(cli: &Cli) -> Result<Vec<String>> {
    let (mut cfg, raw) = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None if cli.command == Command::Misspec => (RunConfig::default(), Vec::new()),
        None => return Err(Error::Config("--config is required".into())),
    };
    if let Some(s) = cli.seed {
        cfg.set("seed", &s.to_string())?;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let ctx = Ctx { cfg, out };
    let run = || dispatch(cli.command, &ctx);
    let lines = match cli.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?
            .install(run)?,
        None => run()?,
    };
    write_manifest(&ctx, cli.command, &raw)?;
    Ok(lines)
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
}

impl Ctx {
    fn at(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn setup(&self) -> Result<(Grid, RaySet, SparseDesign)> {
        let grid = self.cfg.grid()?;
        let rays = self.cfg.rays(&grid)?;
        let design = self.cfg.design(&grid, &rays)?;
        Ok((grid, rays, design))
    }

    fn sinogram(&self, design: &SparseDesign) -> Result<Sinogram> {
        let s = io::read_sinogram(&self.cfg.path("sinogram")?)?;
        if s.d() != design.d() {
            return Err(Error::DimensionMismatch {
                what: "sinogram LORs vs design rows",
                expected: design.d(),
                found: s.d(),
            });
        }
        Ok(s)
    }

    fn segmentation(
        &self,
        grid: &Grid,
        rays: &RaySet,
        design: &SparseDesign,
        data: &Sinogram,
    ) -> Result<Segmentation> {
        let seg = io::read_segmentation(&self.cfg.path("segmentation")?, grid.extent)?;
        if seg.grid() != grid {
            return Err(Error::DimensionMismatch {
                what: "segmentation pixels vs grid",
                expected: grid.n_pixels(),
                found: seg.grid().n_pixels(),
            });
        }
        if self.cfg.bool_or("apply_mask", false) {
            mri::mask_preprocess(rays, design, &seg, data)
        } else {
            Ok(seg)
        }
    }

    fn write_image_set(&self, stem: &str, image: &Image) -> Result<()> {
        io::write_image(&self.at(&format!("{stem}.npli")), image)?;
        io::write_text(&self.at(&format!("{stem}.csv")), &io::image_csv(image))?;
        io::write_pgm(&self.at(&format!("{stem}.pgm")), image)
    }

    fn write_report(&self, stem: &str, report: &SolveReport) -> Result<()> {
        self.write_image_set(stem, &report.result)?;
        io::write_text(
            &self.at(&format!("{stem}_report.txt")),
            &format!(
                "iterations={}\nconverged={}\nobjective_final={}\n",
                report.iterations,
                report.converged,
                report.objective()
            ),
        )?;
        let mut csv = String::from("iteration,objective\n");
        for (k, v) in report.objective_trace.iter().enumerate() {
            let _ = writeln!(csv, "{k},{v}");
        }
        io::write_text(&self.at(&format!("{stem}_objective.csv")), &csv)
    }
}

fn dispatch(cmd: Command, ctx: &Ctx) -> Result<Vec<String>> {
    let cfg = &ctx.cfg;
    match cmd {
        Command::Phantom => {
            let grid = cfg.grid()?;
            let (img, labels) = cfg.phantom(&grid)?;
            ctx.write_image_set("phantom", &img)?;
            if let Some(l) = labels {
                io::write_segmentation(&ctx.at("labels.npll"), &Segmentation::single(grid, l)?)?;
            }
            Ok(vec![format!("phantom total={}", img.total())])
        }
        Command::Project => {
            let (grid, _, a) = ctx.setup()?;
            let truth = cfg.truth(&grid)?;
            io::write_design(&ctx.at("design.npld"), &a)?;
            let proj = Sinogram::intensities(a.forward(truth.values()))?;
            io::write_sinogram(&ctx.at("projection.npls"), &proj)?;
            io::write_text(&ctx.at("projection.csv"), &io::sinogram_csv(&proj))?;
            Ok(vec![format!(
                "design d={} p={} nnz={}",
                a.d(),
                a.p(),
                a.nnz()
            )])
        }
        Command::Simulate => {
            let (grid, _, a) = ctx.setup()?;
            let truth = cfg.truth(&grid)?;
            let y =
                crate::model::simulate_sinogram(&truth, &a, cfg.f64("t")?, cfg.u64_or("seed", 0))?;
            io::write_sinogram(&ctx.at("sinogram.npls"), &y)?;
            io::write_text(&ctx.at("sinogram.csv"), &io::sinogram_csv(&y))?;
            Ok(vec![format!("counts total={}", y.total())])
        }
        Command::Mlem | Command::Map => {
            let (grid, _, a) = ctx.setup()?;
            let y = ctx.sinogram(&a)?;
            let solver = if cmd == Command::Map {
                SolverConfig {
                    beta: cfg.f64("beta")? / y.t(),
                    penalty: Some(cfg.penalty()?),
                    ..cfg.solver()
                }
            } else {
                cfg.solver()
            };
            let report = recon::solve(Start::Uniform(grid), &y, &a, &solver)?;
            ctx.write_report(cmd.name(), &report)?;
            Ok(vec![format!(
                "iterations={} converged={} objective={}",
                report.iterations,
                report.converged,
                report.objective()
            )])
        }
        Command::LambdaOpt => {
            let (grid, _, a) = ctx.setup()?;
            let truth = cfg.truth(&grid)?;
            let s = cfg.solver();
            let report = recon::lambda_opt(
                &truth,
                &a,
                cfg.f64("beta_min")?,
                cfg.penalty()?,
                s.max_iters,
                s.rel_tol,
            )?;
            ctx.write_report("lambda_opt", &report)?;
            Ok(vec![format!(
                "iterations={} converged={}",
                report.iterations, report.converged
            )])
        }
        Command::Wlb => {
            let (grid, rays, a) = ctx.setup()?;
            let y = ctx.sinogram(&a)?;
            let seg = ctx.segmentation(&grid, &rays, &a, &y)?;
            let m = mri::reduce_design(
                &a,
                &seg,
                cfg.f64_or("condition_cap", mri::DEFAULT_CONDITION_CAP),
            )?;
            let seed = cfg.u64_or("seed", 0);
            let solver = cfg.mixing_solver();
            let mut csv = String::from("draw");
            for s in 0..m.n_segments() {
                let _ = write!(csv, ",segment_{s}");
            }
            csv.push('\n');
            let draws: Vec<_> = {
                use rayon::prelude::*;
                (0..cfg.usize_or("draws", 100) as u64)
                    .into_par_iter()
                    .map(|b| mri::wlb_sample(&y, &m, seed, b, &solver))
                    .collect::<Result<_>>()?
            };
            for (b, d) in draws.iter().enumerate() {
                let _ = write!(csv, "{b}");
                for v in &d.lambda_m {
                    let _ = write!(csv, ",{v}");
                }
                csv.push('\n');
            }
            io::write_text(&ctx.at("wlb.csv"), &csv)?;
            let mut lines = vec![format!("segments={} draws={}", m.n_segments(), draws.len())];
            if !m.is_well_conditioned() {
                lines.push(format!(
                    "warning: segment design conditioning {:?}",
                    m.conditioning()
                ));
            }
            Ok(lines)
        }
        Command::Npl => {
            let (grid, rays, a) = ctx.setup()?;
            let y = ctx.sinogram(&a)?;
            let rho = cfg.f64_or("rho", 0.0);
            let mixing = if rho > 0.0 {
                let seg = ctx.segmentation(&grid, &rays, &a, &y)?;
                Some(mri::reduce_design(
                    &a,
                    &seg,
                    cfg.f64_or("condition_cap", mri::DEFAULT_CONDITION_CAP),
                )?)
            } else {
                None
            };
            let npl = NplConfig {
                rho,
                n_draws: cfg.usize_or("draws", 100),
                beta: cfg.f64_or("beta", 0.0),
                penalty: cfg.penalty()?,
                solver: cfg.solver(),
                mixing_solver: cfg.mixing_solver(),
                seed: cfg.u64_or("seed", 0),
                ..Default::default()
            };
            let archive = npl_sample(&y, &a, mixing.as_ref(), &grid, &npl, None)?;
            let meta = format!(
                "kind=npl\nseed={}\nrho={}\nt={}\nbeta={}\nzeta={}\nnu={}\ndraws={}\nmax_iters={}\nrel_tol={}\n",
                npl.seed, npl.rho, archive.t, npl.beta, npl.penalty.zeta, npl.penalty.nu, npl.n_draws,
                npl.solver.max_iters, npl.solver.rel_tol
            );
            let dir = ctx.at("archive");
            let mut reports = String::from("draw,iterations,converged,error\n");
            for d in &archive.draws {
                if let Some(img) = &d.image {
                    io::write_image(&dir.join(draw_name(d.index)), img)?;
                }
                let _ = writeln!(
                    reports,
                    "{},{},{},{}",
                    d.index,
                    d.iterations,
                    d.converged,
                    d.error.as_deref().unwrap_or("").replace(',', ";")
                );
            }
            io::write_text(&dir.join("solver_reports.csv"), &reports)?;
            io::write_text(&dir.join("meta.txt"), &meta)?;
            Ok(vec![format!(
                "draws={} failed={}",
                archive.draws.len(),
                archive.n_failed()
            )])
        }
        Command::Gibbs => {
            let (grid, _, a) = ctx.setup()?;
            let y = ctx.sinogram(&a)?;
            let start = if cfg.has("start") {
                io::read_image(&cfg.path("start")?, grid.extent)?
            } else {
                cfg.truth(&grid)?
            };
            let d = GibbsConfig::default();
            let gc = GibbsConfig {
                alpha: cfg.f64_or("prior_alpha", d.alpha),
                beta: cfg.f64_or("prior_beta", d.beta),
                burn_in: cfg.usize_or("burn_in", d.burn_in),
                n_samples: cfg.usize_or("n_samples", d.n_samples),
                seed: cfg.u64_or("seed", 0),
            };
            let chain = gibbs::run_chain(&y, &a, &gc, &start)?;
            let dir = ctx.at("chain");
            for (k, s) in chain.samples.iter().enumerate() {
                io::write_image(&dir.join(draw_name(k as u64)), s)?;
            }
            io::write_text(
                &dir.join("meta.txt"),
                &format!(
                    "kind=gibbs\nseed={}\nt={}\nprior_alpha={}\nprior_beta={}\nburn_in={}\nn_samples={}\n",
                    gc.seed, chain.t, gc.alpha, gc.beta, gc.burn_in, gc.n_samples
                ),
            )?;
            Ok(vec![format!("samples={}", chain.samples.len())])
        }
        Command::Diagnose => {
            let (grid, _, a) = ctx.setup()?;
            let truth = cfg.truth(&grid)?;
            let samples = read_archive(&cfg.path("chain")?, grid.extent)?;
            let pair = gibbs::fisher_matrices(&truth, &a)?;
            let tol = cfg.f64_or("rank_tol", gibbs::DEFAULT_RANK_TOL);
            let modes = cfg.usize_or("modes", pair.rank(tol)).min(pair.rank(tol));
            let analytic = gibbs::mode_fractions(&pair, modes, tol);
            let empirical = gibbs::eigenmode_correlations(&samples, &pair, modes)?;
            let mut csv = String::from("mode,s_m,gamma_analytic,gamma_empirical\n");
            for m in 0..modes {
                let e = empirical[m].map_or("nan".to_string(), |v| v.to_string());
                let _ = writeln!(csv, "{},{},{},{}", m, pair.eigenvalues[m], analytic[m], e);
            }
            io::write_text(&ctx.at("diagnostics.csv"), &csv)?;
            let worst = analytic.iter().cloned().fold(0.0, f64::max);
            let need =
                gibbs::green_sample_size(worst)?.map_or("unbounded".to_string(), |n| n.to_string());
            Ok(vec![format!(
                "modes={modes} max_gamma={worst} samples_needed={need}"
            )])
        }
        Command::Summarize => {
            let grid = cfg.grid()?;
            let draws = read_archive(&cfg.path("archive")?, grid.extent)?;
            let refs: Vec<&Image> = draws.iter().collect();
            let s = stats::summarize(&refs, cfg.f64_or("level", 0.95))?;
            ctx.write_image_set("mean", &s.mean)?;
            ctx.write_image_set("std", &s.std)?;
            ctx.write_image_set("lower", &s.lower)?;
            ctx.write_image_set("upper", &s.upper)?;
            Ok(vec![format!("draws={} level={}", s.n_draws, s.level)])
        }
        Command::Coverage => {
            let grid = cfg.grid()?;
            let draws = read_archive(&cfg.path("archive")?, grid.extent)?;
            let refs: Vec<&Image> = draws.iter().collect();
            let s = stats::summarize(&refs, cfg.f64_or("level", 0.95))?;
            let target = io::read_image(&cfg.path("target")?, grid.extent)?;
            let c = stats::coverage(&s, &target, None)?;
            let mut csv = String::from("pixel,status\n");
            for (j, (st, m)) in c.status.iter().zip(&c.mask).enumerate() {
                if *m {
                    let name = match st {
                        stats::Status::Covered => "covered",
                        stats::Status::Above => "above",
                        stats::Status::Below => "below",
                    };
                    let _ = writeln!(csv, "{j},{name}");
                }
            }
            io::write_text(&ctx.at("coverage.csv"), &csv)?;
            let line = format!("fraction={}", c.fraction());
            io::write_text(&ctx.at("coverage.txt"), &format!("{line}\n"))?;
            Ok(vec![line])
        }
        Command::Misspec => {
            let starts = misspec::random_starts(cfg.usize_or("starts", 20), cfg.u64_or("seed", 0));
            let points = misspec::counterexample_multistart(&starts, &misspec::tight_solver())?;
            let oracle = misspec::counterexample_grid_oracle(cfg.usize_or("grid_resolution", 50))?;
            let mut csv = String::from("start,λ1,λ2,λ3,λ4,objective\n");
            let mut lines = vec![format!(
                "{:>5} {:>12} {:>12} {:>12} {:>12} {:>14}",
                "start", "λ1", "λ2", "λ3", "λ4", "objective"
            )];
            for (k, p) in points.iter().enumerate() {
                let l = p.lambda;
                let _ = writeln!(
                    csv,
                    "{k},{},{},{},{},{}",
                    l[0], l[1], l[2], l[3], p.objective
                );
                lines.push(format!(
                    "{:>5} {:>12.8} {:>12.8} {:>12.3e} {:>12.3e} {:>14.10}",
                    k, l[0], l[1], l[2], l[3], p.objective
                ));
            }
            io::write_text(&ctx.at("counterexample.csv"), &csv)?;
            lines.push(format!(
                "analytic minimum {:.10}; grid minimum {:.10} at resolution {}",
                misspec::analytic_minimum(),
                oracle.min_value,
                oracle.resolution
            ));
            Ok(lines)
        }
    }
}

fn draw_name(b: u64) -> String {
    format!("draw_{b:05}.npli")
}

/// Images `draw_*.npli` of an archive directory, in draw order.
pub fn read_archive(dir: &Path, extent: f64) -> Result<Vec<Image>> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("draw_") && n.ends_with(".npli"))
        })
        .collect();
    names.sort();
    names.iter().map(|p| io::read_image(p, extent)).collect()
}

fn write_manifest(ctx: &Ctx, cmd: Command, raw_config: &[u8]) -> Result<()> {
    let mut s = format!(
        "tool=npl-et {}\ncommand={}\nconfig_sha256={}\nconfig_effective_sha256={}\n",
        env!("CARGO_PKG_VERSION"),
        cmd.name(),
        io::sha256_hex(raw_config),
        io::sha256_hex(ctx.cfg.canonical().as_bytes())
    );
    for key in [
        "truth",
        "sinogram",
        "segmentation",
        "design",
        "target",
        "start",
    ] {
        if ctx.cfg.has(key) {
            let p = ctx.cfg.path(key)?;
            let _ = writeln!(
                s,
                "input_{key}={} sha256={}",
                p.display(),
                io::file_sha256(&p)?
            );
        }
    }
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let _ = writeln!(s, "created_unix={now}");
    io::write_text(&ctx.at("manifest.txt"), &s)
}
