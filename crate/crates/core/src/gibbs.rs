//! Data-augmentation Gibbs sampler for the Poisson model with independent
//! gamma priors, and the tools to predict and measure how slowly it mixes.
//!
//! The chain alternates latent per-entry counts `n_ij` (multinomial split of
//! each `Y_i`) with conjugate gamma draws of the pixels. Along the
//! eigenvectors `h_m` of the observed Fisher information its lag-1
//! autocorrelation approaches `1 - s_m·h_mᵀF_aug⁻¹h_m`, which tends to 1 for
//! poorly resolved modes.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::SparseDesign;
use crate::model::{Image, Sinogram};
use crate::rng::{self, Stage};

/// Default relative eigenvalue cutoff for the pseudoinverse.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GibbsConfig {
    /// Gamma prior shape.
    pub alpha: f64,
    /// Gamma prior rate.
    pub beta: f64,
    pub burn_in: usize,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            alpha: 1.0,
            beta: 1.0,
            burn_in: 1000,
            n_samples: 2000,
            seed: 0,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.alpha.is_finite() && self.beta.is_finite())
        {
            return Err(Error::InvalidArgument(format!(
                "gamma prior needs alpha > 0 and beta > 0, got ({}, {})",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// Largest pixel count for which the dense Fisher pair is formed (64×64).
pub const MAX_FISHER_PIXELS: usize = 4096;

const ROW_BITS: u32 = 28;

fn key(iteration: u64, pixel_step: bool, index: usize) -> u64 {
    debug_assert!((index as u64) < (1 << ROW_BITS) && iteration < (1 << (55 - ROW_BITS)));
    (iteration << (ROW_BITS + 1)) | ((pixel_step as u64) << ROW_BITS) | index as u64
}

/// Latent counts aligned with the design's CSR entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Latents {
    pub counts: Vec<u64>,
}

impl Latents {
    /// `Σ_i n_ij` for every pixel.
    pub fn pixel_totals(&self, design: &SparseDesign) -> Vec<f64> {
        let (ptr, idx, _) = design.csr();
        let mut out = vec![0.0; design.p()];
        for i in 0..design.d() {
            for k in ptr[i]..ptr[i + 1] {
                out[idx[k]] += self.counts[k] as f64;
            }
        }
        out
    }

    /// `Σ_j n_ij` for every LOR.
    pub fn row_totals(&self, design: &SparseDesign) -> Vec<u64> {
        let (ptr, _, _) = design.csr();
        (0..design.d())
            .map(|i| self.counts[ptr[i]..ptr[i + 1]].iter().sum())
            .collect()
    }
}

fn check_counts(data: &Sinogram, design: &SparseDesign) -> Result<()> {
    if data.d() != design.d() {
        return Err(Error::DimensionMismatch {
            what: "sinogram LORs vs design rows",
            expected: design.d(),
            found: data.d(),
        });
    }
    if !data.is_counts() {
        return Err(Error::InvalidArgument(
            "the Gibbs sampler needs integer counts".into(),
        ));
    }
    Ok(())
}

/// Split every `Y_i` multinomially over its row with probabilities
/// `a_ij λ_j / Σ_k a_ik λ_k`, by sequential conditional binomials.
pub fn gibbs_latent_step(
    lambda: &[f64],
    data: &Sinogram,
    design: &SparseDesign,
    seed: u64,
    iteration: u64,
) -> Result<Latents> {
    let (ptr, idx, val) = design.csr();
    let rows: Vec<Vec<u64>> = (0..design.d())
        .into_par_iter()
        .map(|i| {
            let range = ptr[i]..ptr[i + 1];
            let y = data.values()[i] as u64;
            let mut out = vec![0u64; range.len()];
            if y == 0 {
                return Ok(out);
            }
            let w: Vec<f64> = range.clone().map(|k| val[k] * lambda[idx[k]]).collect();
            let mut rest: f64 = w.iter().sum();
            if !(rest > 0.0) {
                return Err(Error::DegenerateState { lor: i });
            }
            let mut r = rng::stream(seed, Stage::Gibbs, key(iteration, false, i));
            let mut left = y;
            let last = w.iter().rposition(|&v| v > 0.0).unwrap();
            for (k, &wk) in w.iter().enumerate() {
                if left == 0 {
                    break;
                }
                if k == last {
                    out[k] = left;
                    break;
                }
                let n = rng::binomial(&mut r, left, (wk / rest).min(1.0));
                out[k] = n;
                left -= n;
                rest -= wk;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(Latents {
        counts: rows.into_iter().flatten().collect(),
    })
}

/// Conjugate update `λ_j ~ Γ(Σ_i n_ij + α, 1/(tA_j + β))`.
pub fn gibbs_lambda_step(
    latents: &Latents,
    design: &SparseDesign,
    t: f64,
    config: &GibbsConfig,
    iteration: u64,
) -> Vec<f64> {
    let totals = latents.pixel_totals(design);
    let sens = design.col_sums();
    (0..design.p())
        .into_par_iter()
        .map(|j| {
            let mut r = rng::stream(config.seed, Stage::Gibbs, key(iteration, true, j));
            rng::gamma(
                &mut r,
                totals[j] + config.alpha,
                1.0 / (t * sens[j] + config.beta),
            )
        })
        .collect()
}

/// Stored chain after burn-in.
#[derive(Clone, Debug, PartialEq)]
pub struct Chain {
    pub samples: Vec<Image>,
    pub config: GibbsConfig,
    pub t: f64,
}

/// Run burn-in plus `n_samples` sweeps from `start`.
pub fn run_chain(
    data: &Sinogram,
    design: &SparseDesign,
    config: &GibbsConfig,
    start: &Image,
) -> Result<Chain> {
    config.validate()?;
    check_counts(data, design)?;
    if start.len() != design.p() {
        return Err(Error::DimensionMismatch {
            what: "start image pixels vs design columns",
            expected: design.p(),
            found: start.len(),
        });
    }
    if start.values().iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Precondition(
            "the chain must start from a strictly positive image".into(),
        ));
    }
    let grid = *start.grid();
    let mut lambda = start.values().to_vec();
    let mut samples = Vec::with_capacity(config.n_samples);
    for it in 0..(config.burn_in + config.n_samples) as u64 {
        let latents = gibbs_latent_step(&lambda, data, design, config.seed, it)?;
        lambda = gibbs_lambda_step(&latents, design, data.t(), config, it);
        if it as usize >= config.burn_in {
            samples.push(Image::new(grid, lambda.clone())?);
        }
    }
    Ok(Chain {
        samples,
        config: *config,
        t: data.t(),
    })
}

/// Observed and augmented Fisher information at a strictly positive truth.
#[derive(Clone, Debug)]
pub struct FisherPair {
    pub f_obs: DMatrix<f64>,
    /// Diagonal of `F_aug`: `A_j / λ*_j`.
    pub f_aug: Vec<f64>,
    /// Eigenvalues of `F_obs`, descending.
    pub eigenvalues: Vec<f64>,
    /// Matching unit eigenvectors as columns.
    pub eigenvectors: DMatrix<f64>,
}

impl FisherPair {
    /// Number of eigenvalues above `rank_tol · s_1`.
    pub fn rank(&self, rank_tol: f64) -> usize {
        let s1 = self.eigenvalues.first().copied().unwrap_or(0.0);
        self.eigenvalues
            .iter()
            .filter(|&&s| s > rank_tol * s1)
            .count()
    }

    pub fn mode(&self, m: usize) -> DVector<f64> {
        self.eigenvectors.column(m).into_owned()
    }
}

/// `F_obs = Σ_{i ∈ I_1} a_i a_iᵀ / Λ*_i` and `F_aug = diag(A_j/λ*_j)`.
pub fn fisher_matrices(truth: &Image, design: &SparseDesign) -> Result<FisherPair> {
    if truth.len() != design.p() {
        return Err(Error::DimensionMismatch {
            what: "truth pixels vs design columns",
            expected: design.p(),
            found: truth.len(),
        });
    }
    if let Some(j) = truth.values().iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Precondition(format!(
            "Fisher information needs a strictly positive truth; pixel {j} is zero"
        )));
    }
    let p = design.p();
    if p > MAX_FISHER_PIXELS {
        return Err(Error::Capacity {
            what: "dense Fisher matrix",
            size: p,
            limit: MAX_FISHER_PIXELS,
        });
    }
    let proj = design.forward(truth.values());
    let mut f = DMatrix::<f64>::zeros(p, p);
    for i in 0..design.d() {
        if proj[i] <= 0.0 {
            continue;
        }
        let (cols, vals) = design.row(i);
        for (a, (&j, &u)) in cols.iter().zip(vals).enumerate() {
            for (&k, &v) in cols[a..].iter().zip(&vals[a..]) {
                let w = u * v / proj[i];
                f[(j, k)] += w;
                if j != k {
                    f[(k, j)] += w;
                }
            }
        }
    }
    let f_aug = design
        .col_sums()
        .iter()
        .zip(truth.values())
        .map(|(a, l)| a / l)
        .collect();
    let eig = SymmetricEigen::new(f.clone());
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = order.iter().map(|&m| eig.eigenvalues[m]).collect();
    let eigenvectors = DMatrix::from_fn(p, p, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(FisherPair {
        f_obs: f,
        f_aug,
        eigenvalues,
        eigenvectors,
    })
}

/// `γ(h) = 1 − hᵀF_aug⁻¹h / hᵀF_obs⁺h`, the asymptotic lag-1
/// autocorrelation of the chain along `h`.
pub fn asymptotic_fraction(h: &[f64], pair: &FisherPair, rank_tol: f64) -> Result<f64> {
    let p = pair.f_aug.len();
    if h.len() != p {
        return Err(Error::DimensionMismatch {
            what: "direction length vs pixels",
            expected: p,
            found: h.len(),
        });
    }
    let h = DVector::from_column_slice(h);
    let norm = h.norm();
    if norm == 0.0 {
        return Err(Error::InvalidArgument("direction must be nonzero".into()));
    }
    let r = pair.rank(rank_tol);
    let mut in_range = DVector::<f64>::zeros(p);
    let mut pinv_quad = 0.0;
    for m in 0..r {
        let v = pair.eigenvectors.column(m);
        let c = v.dot(&h);
        in_range += c * v;
        pinv_quad += c * c / pair.eigenvalues[m];
    }
    let kernel_norm = (&h - in_range).norm() / norm;
    if kernel_norm > rank_tol.sqrt() {
        return Err(Error::UndefinedDirection { kernel_norm });
    }
    let aug_quad: f64 = h.iter().zip(&pair.f_aug).map(|(x, f)| x * x / f).sum();
    Ok(1.0 - aug_quad / pinv_quad)
}

/// `γ(h_m) = 1 − s_m·h_mᵀF_aug⁻¹h_m` for the first `m_max` resolved modes.
pub fn mode_fractions(pair: &FisherPair, m_max: usize, rank_tol: f64) -> Vec<f64> {
    (0..m_max.min(pair.rank(rank_tol)))
        .map(|m| {
            let v = pair.eigenvectors.column(m);
            let q: f64 = v.iter().zip(&pair.f_aug).map(|(x, f)| x * x / f).sum();
            1.0 - pair.eigenvalues[m] * q
        })
        .collect()
}

/// Pearson correlation of `(z_k, z_{k+1})`; `None` if either side is flat.
pub fn lag1_correlation(z: &[f64]) -> Option<f64> {
    if z.len() < 3 {
        return None;
    }
    let (a, b) = (&z[..z.len() - 1], &z[1..]);
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// Empirical lag-1 correlations of `h_mᵀλ_k` for the first `m_max` modes.
pub fn eigenmode_correlations(
    samples: &[Image],
    pair: &FisherPair,
    m_max: usize,
) -> Result<Vec<Option<f64>>> {
    if samples.len() < 100 {
        return Err(Error::InsufficientData {
            needed: 100,
            got: samples.len(),
        });
    }
    let m_max = m_max.min(pair.eigenvalues.len());
    let x = DMatrix::from_fn(samples.len(), pair.f_aug.len(), |k, j| {
        samples[k].values()[j]
    });
    let z = x * pair.eigenvectors.columns(0, m_max);
    Ok((0..m_max)
        .map(|m| lag1_correlation(z.column(m).as_slice()))
        .collect())
}

/// Correlations on the first and second halves of the chain separately, as
/// a burn-in sensitivity check.
pub fn half_split_correlations(
    chain: &Chain,
    pair: &FisherPair,
    m_max: usize,
) -> Result<(Vec<Option<f64>>, Vec<Option<f64>>)> {
    let h = chain.samples.len() / 2;
    Ok((
        eigenmode_correlations(&chain.samples[..h], pair, m_max)?,
        eigenmode_correlations(&chain.samples[h..], pair, m_max)?,
    ))
}

/// Draws needed so the Monte Carlo error of a mean stays near 1% of the
/// posterior spread: `⌈100(1+γ)/(1−γ)⌉`. `None` when `γ ≥ 1`.
pub fn green_sample_size(gamma: f64) -> Result<Option<u64>> {
    if !(gamma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "fraction must be in [0, 1), got {gamma}"
        )));
    }
    if gamma >= 1.0 {
        return Ok(None);
    }
    // Round away representation noise before the ceiling (0.5 gives 300, not 301).
    let n = 100.0 * (1.0 + gamma) / (1.0 - gamma);
    Ok(Some((n * (1.0 - 1e-12)).ceil() as u64))
}
