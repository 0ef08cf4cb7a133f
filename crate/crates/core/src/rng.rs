//! Counter-based random streams and the scalar samplers used throughout.
//!
//! Every random quantity in the crate is drawn from a stream keyed by
//! `(seed, stage, index)`. Two different keys never share a stream, so the
//! order in which independent tasks run (or the number of worker threads)
//! has no influence on the values they draw.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma};

/// Pipeline stage a stream belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Stage {
    Simulate = 1,
    MixingWeights = 2,
    Perturb = 3,
    ListMode = 4,
    Gibbs = 5,
    Starts = 6,
    Probe = 7,
}

/// Independent generator for `(seed, stage, index)`.
///
/// `index` must stay below 2^56; it is the LOR, draw or iteration number.
pub fn stream(seed: u64, stage: Stage, index: u64) -> ChaCha8Rng {
    debug_assert!(index < (1 << 56));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stage as u64) << 56) | index);
    rng
}

const SMALL_INTEGER_SHAPE: f64 = 32.0;

/// Draw from `Gamma(shape, scale)` (mean `shape * scale`).
///
/// Shape 0 is the point mass at 0. Integer shapes up to 32 use the sum of
/// `shape` unit exponentials; everything else goes through Marsaglia–Tsang.
pub fn gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> f64 {
    debug_assert!(shape >= 0.0 && scale > 0.0);
    if shape == 0.0 {
        return 0.0;
    }
    if shape <= SMALL_INTEGER_SHAPE && shape.fract() == 0.0 {
        let n = shape as u32;
        let mut sum = 0.0;
        for _ in 0..n {
            // 1 - U lies in (0, 1], so the log is finite.
            let u: f64 = rng.random();
            sum -= (1.0 - u).ln();
        }
        return sum * scale;
    }
    Gamma::new(shape, scale)
        .expect("gamma parameters validated by caller")
        .sample(rng)
}

/// Draw from `Poisson(mean)` as an integer-valued `f64`.
///
/// Sequential-search inversion below mean 10, Hörmann's transformed
/// rejection (PTRS) above.
pub fn poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> f64 {
    debug_assert!(mean >= 0.0 && mean.is_finite());
    if mean == 0.0 {
        0.0
    } else if mean < 10.0 {
        poisson_inversion(rng, mean)
    } else {
        poisson_ptrs(rng, mean)
    }
}

fn poisson_inversion<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> f64 {
    let u: f64 = rng.random();
    let mut k = 0.0;
    let mut p = (-mean).exp();
    let mut cdf = p;
    while u > cdf {
        k += 1.0;
        p *= mean / k;
        cdf += p;
        // Guard against the cdf saturating below u through rounding.
        if p < f64::MIN_POSITIVE * 1e10 && k > mean {
            break;
        }
    }
    k
}

fn poisson_ptrs<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> f64 {
    let slam = mean.sqrt();
    let loglam = mean.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + mean + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln()
            <= -mean + k * loglam - ln_factorial(k)
        {
            return k;
        }
    }
}

/// `ln(k!)` for integer-valued `k >= 0`.
pub(crate) fn ln_factorial(k: f64) -> f64 {
    const TABLE: [f64; 10] = [
        0.0,
        0.0,
        std::f64::consts::LN_2,
        1.791_759_469_228_055,
        3.178_053_830_347_945_8,
        4.787_491_742_782_046,
        6.579_251_212_010_101,
        8.525_161_361_065_415,
        10.604_602_902_745_25,
        12.801_827_480_081_469,
    ];
    if k < 10.0 {
        return TABLE[k as usize];
    }
    // Stirling series for ln Γ(k + 1).
    let x = k + 1.0;
    let x2 = 1.0 / (x * x);
    let series = (1.0 / 12.0 - x2 * (1.0 / 360.0 - x2 * (1.0 / 1260.0 - x2 * (1.0 / 1680.0)))) / x;
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + series
}

/// Draw from `Binomial(n, p)`.
pub fn binomial<R: Rng + ?Sized>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p)
        .expect("probability clamped to (0, 1)")
        .sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn streams_are_keyed() {
        let a: u64 = stream(7, Stage::Perturb, 3).random();
        let b: u64 = stream(7, Stage::Perturb, 3).random();
        let c: u64 = stream(7, Stage::Perturb, 4).random();
        let d: u64 = stream(7, Stage::MixingWeights, 3).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn ln_factorial_matches_direct_sum() {
        for k in 0..60u32 {
            let direct: f64 = (1..=k).map(|i| (i as f64).ln()).sum();
            assert!((ln_factorial(k as f64) - direct).abs() < 1e-10, "k={k}");
        }
    }

    #[test]
    fn poisson_moments_across_regimes() {
        for &mean in &[0.3, 4.0, 9.99, 10.0, 57.0, 1.0e6] {
            let mut rng = stream(11, Stage::Probe, (mean * 100.0) as u64);
            let xs: Vec<f64> = (0..100_000).map(|_| poisson(&mut rng, mean)).collect();
            let (m, v) = moments(&xs);
            let se = (mean / xs.len() as f64).sqrt();
            assert!((m - mean).abs() < 5.0 * se, "mean {mean}: got {m}");
            assert!((v / mean - 1.0).abs() < 0.03, "var {mean}: got {v}");
            assert!(xs.iter().all(|x| x.fract() == 0.0 && *x >= 0.0));
        }
    }

    #[test]
    fn gamma_moments_small_and_large_shapes() {
        for &(shape, scale) in &[
            (1.0, 0.5),
            (3.0, 2.0),
            (32.0, 0.1),
            (33.0, 0.1),
            (2.5, 1.0),
            (0.3, 4.0),
        ] {
            let mut rng = stream(5, Stage::Probe, (shape * 10.0) as u64);
            let xs: Vec<f64> = (0..100_000)
                .map(|_| gamma(&mut rng, shape, scale))
                .collect();
            let (m, v) = moments(&xs);
            assert!((m / (shape * scale) - 1.0).abs() < 0.02, "shape {shape}");
            assert!(
                (v / (shape * scale * scale) - 1.0).abs() < 0.05,
                "shape {shape}"
            );
        }
        let mut rng = stream(5, Stage::Probe, 0);
        assert_eq!(gamma(&mut rng, 0.0, 3.0), 0.0);
    }

    #[test]
    fn binomial_edges() {
        let mut rng = stream(1, Stage::Probe, 1);
        assert_eq!(binomial(&mut rng, 0, 0.5), 0);
        assert_eq!(binomial(&mut rng, 10, 0.0), 0);
        assert_eq!(binomial(&mut rng, 10, 1.0), 10);
    }
}
