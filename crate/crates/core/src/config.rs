//! `key=value` run configuration with a fixed schema.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{
    assemble_design, build_parallel_geometry, build_ring_geometry, Grid, Normalization, RaySet,
    SparseDesign,
};
use crate::io;
use crate::model::{make_brain_phantom, make_disk_phantom, Image, PenaltyParams};
use crate::recon::SolverConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Float,
    Count,
    Bool,
    Path,
    Choice(&'static [&'static str]),
}

const SCHEMA: &[(&str, Kind)] = &[
    ("grid_width", Kind::Count),
    ("grid_height", Kind::Count),
    ("extent", Kind::Float),
    ("geometry", Kind::Choice(&["parallel", "ring"])),
    ("n_angles", Kind::Count),
    ("n_offsets", Kind::Count),
    ("n_detectors", Kind::Count),
    (
        "normalization",
        Kind::Choice(&["column-stochastic", "raw", "scaled"]),
    ),
    ("phantom", Kind::Choice(&["disk", "brain"])),
    ("inner_value", Kind::Float),
    ("outer_value", Kind::Float),
    ("r_in", Kind::Float),
    ("r_out", Kind::Float),
    ("total_activity", Kind::Float),
    ("t", Kind::Float),
    ("rho", Kind::Float),
    ("draws", Kind::Count),
    ("beta", Kind::Float),
    ("beta_min", Kind::Float),
    ("zeta", Kind::Float),
    ("nu", Kind::Float),
    ("max_iters", Kind::Count),
    ("rel_tol", Kind::Float),
    ("mixing_max_iters", Kind::Count),
    ("mixing_rel_tol", Kind::Float),
    ("condition_cap", Kind::Float),
    ("apply_mask", Kind::Bool),
    ("seed", Kind::Count),
    ("prior_alpha", Kind::Float),
    ("prior_beta", Kind::Float),
    ("burn_in", Kind::Count),
    ("n_samples", Kind::Count),
    ("modes", Kind::Count),
    ("rank_tol", Kind::Float),
    ("level", Kind::Float),
    ("starts", Kind::Count),
    ("grid_resolution", Kind::Count),
    ("truth", Kind::Path),
    ("sinogram", Kind::Path),
    ("segmentation", Kind::Path),
    ("design", Kind::Path),
    ("archive", Kind::Path),
    ("chain", Kind::Path),
    ("target", Kind::Path),
    ("start", Kind::Path),
];

/// Validated configuration. Relative paths resolve against `base`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
    base: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let origin = base.join("<config>");
        let mut entries = BTreeMap::new();
        for (k, v) in io::parse_key_values(&origin, text)? {
            let Some(&(_, kind)) = SCHEMA.iter().find(|(n, _)| *n == k) else {
                return Err(Error::Config(format!("unknown key `{k}`")));
            };
            check_kind(&k, &v, kind)?;
            if entries.insert(k.clone(), v).is_some() {
                return Err(Error::Config(format!("key `{k}` given twice")));
            }
        }
        Ok(RunConfig {
            entries,
            base: base.to_path_buf(),
        })
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = io::read_bytes(path)?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((RunConfig::parse(&text, &base)?, bytes))
    }

    /// Set or replace a key, as the command line does for `--seed`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let Some(&(_, kind)) = SCHEMA.iter().find(|(n, _)| *n == key) else {
            return Err(Error::Config(format!("unknown key `{key}`")));
        };
        check_kind(key, value, kind)?;
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn has(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Fail unless every listed key is present.
    pub fn require(&self, keys: &[&str]) -> Result<()> {
        let missing: Vec<&str> = keys.iter().copied().filter(|k| !self.has(k)).collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "missing required keys: {}",
                missing.join(", ")
            )))
        }
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn f64_or(&self, key: &str, default: f64) -> f64 {
        self.raw(key).map_or(default, |v| v.parse().unwrap())
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.require(&[key])?;
        Ok(self.f64_or(key, 0.0))
    }

    pub fn u64_or(&self, key: &str, default: u64) -> u64 {
        self.raw(key).map_or(default, |v| v.parse().unwrap())
    }

    pub fn usize_or(&self, key: &str, default: usize) -> usize {
        self.u64_or(key, default as u64) as usize
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.require(&[key])?;
        Ok(self.usize_or(key, 0))
    }

    pub fn bool_or(&self, key: &str, default: bool) -> bool {
        self.raw(key).map_or(default, |v| v == "true")
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.raw(key).unwrap_or(default)
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        self.require(&[key])?;
        Ok(self.base.join(self.raw(key).unwrap()))
    }

    /// Canonical `key=value` text, used for hashing and archive metadata.
    pub fn canonical(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn grid(&self) -> Result<Grid> {
        let w = self.usize("grid_width")?;
        let h = self.usize_or("grid_height", w);
        Grid::new(w, h, self.f64_or("extent", 1.0))
    }

    pub fn rays(&self, grid: &Grid) -> Result<RaySet> {
        match self.str_or("geometry", "parallel") {
            "parallel" => build_parallel_geometry(
                self.usize_or("n_angles", grid.width),
                self.usize_or("n_offsets", grid.width),
                grid,
            ),
            _ => Ok(build_ring_geometry(self.usize("n_detectors")?, grid)?.retain_hitting(grid)),
        }
    }

    pub fn normalization(&self) -> Normalization {
        match self.str_or("normalization", "column-stochastic") {
            "raw" => Normalization::Raw,
            "scaled" => Normalization::Scaled,
            _ => Normalization::ColumnStochastic,
        }
    }

    /// The design from the `design` file if given, otherwise traced from the
    /// geometry keys.
    pub fn design(&self, grid: &Grid, rays: &RaySet) -> Result<SparseDesign> {
        if self.has("design") {
            let a = io::read_design(&self.path("design")?)?;
            if a.p() != grid.n_pixels() {
                return Err(Error::DimensionMismatch {
                    what: "design columns vs grid pixels",
                    expected: grid.n_pixels(),
                    found: a.p(),
                });
            }
            Ok(a)
        } else {
            assemble_design(rays, grid, self.normalization())
        }
    }

    pub fn penalty(&self) -> Result<PenaltyParams> {
        let d = PenaltyParams::default();
        PenaltyParams::new(self.f64_or("zeta", d.zeta), self.f64_or("nu", d.nu))
    }

    pub fn solver(&self) -> SolverConfig {
        let d = SolverConfig::default();
        SolverConfig::default().with_stopping(
            self.usize_or("max_iters", d.max_iters),
            self.f64_or("rel_tol", d.rel_tol),
        )
    }

    pub fn mixing_solver(&self) -> SolverConfig {
        let d = SolverConfig::default();
        SolverConfig::default().with_stopping(
            self.usize_or("mixing_max_iters", d.max_iters),
            self.f64_or("mixing_rel_tol", d.rel_tol),
        )
    }

    /// Phantom described by the phantom keys, with anatomical labels for the
    /// brain phantom.
    pub fn phantom(&self, grid: &Grid) -> Result<(Image, Option<Vec<i32>>)> {
        match self.str_or("phantom", "disk") {
            "brain" => {
                let b = make_brain_phantom(grid, self.f64("total_activity")?)?;
                Ok((b.image, Some(b.labels)))
            }
            _ => Ok((
                make_disk_phantom(
                    grid,
                    self.f64_or("inner_value", 2.0),
                    self.f64_or("outer_value", 1.0),
                    self.f64_or("r_in", 0.25),
                    self.f64_or("r_out", grid.extent),
                )?,
                None,
            )),
        }
    }

    /// The `truth` image file if given, else the configured phantom.
    pub fn truth(&self, grid: &Grid) -> Result<Image> {
        if self.has("truth") {
            let img = io::read_image(&self.path("truth")?, grid.extent)?;
            if img.grid() != grid {
                return Err(Error::DimensionMismatch {
                    what: "truth image pixels vs grid",
                    expected: grid.n_pixels(),
                    found: img.len(),
                });
            }
            Ok(img)
        } else {
            Ok(self.phantom(grid)?.0)
        }
    }
}

fn check_kind(key: &str, v: &str, kind: Kind) -> Result<()> {
    let ok = match kind {
        Kind::Float => v.parse::<f64>().map(|x| x.is_finite()).unwrap_or(false),
        Kind::Count => v.parse::<u64>().is_ok(),
        Kind::Bool => v == "true" || v == "false",
        Kind::Path => !v.is_empty(),
        Kind::Choice(opts) => opts.contains(&v),
    };
    if ok {
        Ok(())
    } else {
        let want = match kind {
            Kind::Float => "a finite number".to_string(),
            Kind::Count => "a nonnegative integer".to_string(),
            Kind::Bool => "true or false".to_string(),
            Kind::Path => "a path".to_string(),
            Kind::Choice(opts) => format!("one of {}", opts.join(", ")),
        };
        Err(Error::Config(format!("`{key}` must be {want}, got `{v}`")))
    }
}
