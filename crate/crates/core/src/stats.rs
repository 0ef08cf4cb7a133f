//! Pixelwise summaries of posterior draws: moments, quantile bands,
//! coverage of a reference image and line profiles.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Grid;
use crate::model::Image;

/// Relative threshold of the default support mask.
pub const SUPPORT_FRACTION: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub mean: Image,
    pub std: Image,
    pub lower: Image,
    pub upper: Image,
    pub level: f64,
    pub n_draws: usize,
}

/// Type-7 quantile of sorted data: linear interpolation between order
/// statistics at position `(n − 1)q`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean, standard deviation (divisor `n − 1`) and the central `level`
/// quantile band of every pixel.
pub fn summarize(draws: &[&Image], level: f64) -> Result<Summary> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "level must be in (0, 1), got {level}"
        )));
    }
    if draws.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: draws.len(),
        });
    }
    let grid = *draws[0].grid();
    if let Some(bad) = draws.iter().find(|d| d.grid() != &grid) {
        return Err(Error::DimensionMismatch {
            what: "draw pixels",
            expected: grid.n_pixels(),
            found: bad.len(),
        });
    }
    let n = draws.len() as f64;
    let (lq, uq) = ((1.0 - level) / 2.0, (1.0 + level) / 2.0);
    let stats: Vec<[f64; 4]> = (0..grid.n_pixels())
        .into_par_iter()
        .map(|j| {
            let mut v: Vec<f64> = draws.iter().map(|d| d.values()[j]).collect();
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
            v.sort_by(f64::total_cmp);
            [
                mean,
                var.sqrt(),
                quantile_sorted(&v, lq),
                quantile_sorted(&v, uq),
            ]
        })
        .collect();
    let col = |k: usize| Image::new(grid, stats.iter().map(|s| s[k]).collect());
    Ok(Summary {
        mean: col(0)?,
        std: col(1)?,
        lower: col(2)?,
        upper: col(3)?,
        level,
        n_draws: draws.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Covered,
    /// Target above the band.
    Above,
    /// Target below the band.
    Below,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoverageMap {
    pub status: Vec<Status>,
    pub mask: Vec<bool>,
}

impl CoverageMap {
    /// Share of masked pixels whose target lies in the band.
    pub fn fraction(&self) -> f64 {
        let n = self.mask.iter().filter(|&&m| m).count();
        let c = self
            .status
            .iter()
            .zip(&self.mask)
            .filter(|(s, &m)| m && **s == Status::Covered)
            .count();
        if n == 0 {
            0.0
        } else {
            c as f64 / n as f64
        }
    }

    /// Number of masked pixels with the given status.
    pub fn count(&self, status: Status) -> usize {
        self.status
            .iter()
            .zip(&self.mask)
            .filter(|(s, &m)| m && **s == status)
            .count()
    }
}

/// Pixels where `image > SUPPORT_FRACTION · max(image)`.
pub fn support_mask(image: &Image) -> Vec<bool> {
    let cut = SUPPORT_FRACTION * image.max();
    image.values().iter().map(|&v| v > cut).collect()
}

/// Classify every pixel of `target` against the band. `mask = None` uses
/// [`support_mask`] of the target.
pub fn coverage(summary: &Summary, target: &Image, mask: Option<&[bool]>) -> Result<CoverageMap> {
    let p = summary.mean.len();
    if target.len() != p {
        return Err(Error::DimensionMismatch {
            what: "target pixels vs summary pixels",
            expected: p,
            found: target.len(),
        });
    }
    let mask = match mask {
        Some(m) if m.len() != p => {
            return Err(Error::DimensionMismatch {
                what: "mask pixels vs summary pixels",
                expected: p,
                found: m.len(),
            })
        }
        Some(m) => m.to_vec(),
        None => support_mask(target),
    };
    let status = (0..p)
        .map(|j| {
            let v = target.values()[j];
            if v > summary.upper.values()[j] {
                Status::Above
            } else if v < summary.lower.values()[j] {
                Status::Below
            } else {
                Status::Covered
            }
        })
        .collect();
    Ok(CoverageMap { status, mask })
}

/// Average of the pixel variances over the mask.
pub fn mean_variance(summary: &Summary, mask: &[bool]) -> f64 {
    let (s, n) = summary
        .std
        .values()
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v * v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Values along one image row, left to right.
pub fn profile(image: &Image, row: usize) -> Result<Vec<f64>> {
    Ok(image.row(row)?.to_vec())
}

#[derive(Clone, Debug, PartialEq)]
pub struct BandProfile {
    pub lower: Vec<f64>,
    pub mean: Vec<f64>,
    pub upper: Vec<f64>,
}

pub fn band_profile(summary: &Summary, row: usize) -> Result<BandProfile> {
    Ok(BandProfile {
        lower: profile(&summary.lower, row)?,
        mean: profile(&summary.mean, row)?,
        upper: profile(&summary.upper, row)?,
    })
}

/// Pixelwise mean of a set of images.
pub fn mean_image(draws: &[&Image]) -> Result<Image> {
    let first = draws
        .first()
        .ok_or(Error::InsufficientData { needed: 1, got: 0 })?;
    let grid: Grid = *first.grid();
    let n = draws.len() as f64;
    let mut acc = vec![0.0; grid.n_pixels()];
    for d in draws {
        if d.grid() != &grid {
            return Err(Error::DimensionMismatch {
                what: "draw pixels",
                expected: grid.n_pixels(),
                found: d.len(),
            });
        }
        for (a, v) in acc.iter_mut().zip(d.values()) {
            *a += v;
        }
    }
    Image::new(grid, acc.into_iter().map(|a| a / n).collect())
}

/// `‖mean − map‖₂ / ‖map‖₂`.
pub fn npl_vs_map_distance(mean: &Image, map: &Image) -> Result<f64> {
    if mean.len() != map.len() {
        return Err(Error::DimensionMismatch {
            what: "mean pixels vs reference pixels",
            expected: map.len(),
            found: mean.len(),
        });
    }
    let norm = map.values().iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::InvalidArgument(
            "reference image has zero norm".into(),
        ));
    }
    let diff = mean
        .values()
        .iter()
        .zip(map.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(diff / norm)
}
