//! Statistical properties of the samplers and optimizers that need more
//! than a handful of draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{Continuous, ContinuousCDF, Normal as NormalLaw};

use npl_et::geometry::{
    assemble_design, build_parallel_geometry, Grid, Normalization, SparseDesign,
};
use npl_et::gibbs::{run_chain, GibbsConfig};
use npl_et::misspec;
use npl_et::model::{
    make_disk_phantom, penalized_objective, simulate_sinogram, Image, PenaltyParams, Sinogram,
};
use npl_et::mri::{self, Segmentation, DEFAULT_CONDITION_CAP};
use npl_et::npl::{npl_sample, NplConfig};
use npl_et::recon::{solve, SolverConfig, Start};
use npl_et::stats;

fn disk16() -> (Grid, SparseDesign, Image, Segmentation) {
    let g = Grid::square(16).unwrap();
    let rays = build_parallel_geometry(16, 16, &g).unwrap();
    let a = assemble_design(&rays, &g, Normalization::ColumnStochastic).unwrap();
    let truth = make_disk_phantom(&g, 2.0, 1.0, 0.5, 1.0).unwrap();
    let labels = truth
        .values()
        .iter()
        .map(|&v| if v > 1.5 { 0 } else { 1 })
        .collect();
    let seg = Segmentation::single(g, labels).unwrap();
    (g, a, truth, seg)
}

#[test]
fn variance_falls_as_rho_grows() {
    let (g, a, truth, seg) = disk16();
    let y = simulate_sinogram(&truth, &a, 2.0, 3).unwrap();
    let m = mri::reduce_design(&a, &seg, DEFAULT_CONDITION_CAP).unwrap();
    let mask = stats::support_mask(&truth);
    let mut vars = Vec::new();
    for rho in [0.0, 0.25, 0.5, 1.0, 2.0] {
        let cfg = NplConfig {
            rho,
            n_draws: 100,
            beta: 0.02,
            solver: SolverConfig::default().with_stopping(300, 1e-9),
            seed: 4,
            ..Default::default()
        };
        let arc = npl_sample(&y, &a, Some(&m), &g, &cfg, None).unwrap();
        assert!(arc
            .images()
            .iter()
            .all(|d| d.values().iter().all(|&v| v >= 0.0)));
        let s = stats::summarize(&arc.images(), 0.9).unwrap();
        vars.push(stats::mean_variance(&s, &mask));
    }
    assert!(vars.windows(2).all(|w| w[1] < w[0]), "{vars:?}");
}

#[test]
fn chain_marginals_at_identity_design() {
    let g = Grid::new(5, 1, 1.0).unwrap();
    let a = SparseDesign::from_rows(5, (0..5).map(|j| vec![(j, 1.0)]).collect()).unwrap();
    let t = 3.0;
    let y = Sinogram::new(vec![0.0, 1.0, 4.0, 10.0, 30.0], t).unwrap();
    let cfg = GibbsConfig {
        alpha: 1.5,
        beta: 0.5,
        burn_in: 10,
        n_samples: 4000,
        seed: 6,
    };
    let start = Image::constant(g, 1.0).unwrap();
    let chain = run_chain(&y, &a, &cfg, &start).unwrap();
    let n = chain.samples.len() as f64;
    for j in 0..5 {
        let shape = y.values()[j] + cfg.alpha;
        let rate = t + cfg.beta;
        let mean: f64 = chain.samples.iter().map(|s| s.values()[j]).sum::<f64>() / n;
        let se = (shape / (rate * rate) / n).sqrt();
        assert!(
            (mean - shape / rate).abs() <= 3.0 * se,
            "pixel {j}: {mean} vs {}",
            shape / rate
        );
    }
}

#[test]
fn band_quantiles_match_gaussian_truth() {
    let g = Grid::new(4, 1, 1.0).unwrap();
    let mus = [4.0, 10.0, 5.0, 10.0];
    let sigmas = [0.5, 2.0, 1.0, 0.1];
    let mut r = ChaCha8Rng::seed_from_u64(12);
    let b = 1000;
    let draws: Vec<Image> = (0..b)
        .map(|_| {
            let v = (0..4)
                .map(|j| Normal::new(mus[j], sigmas[j]).unwrap().sample(&mut r))
                .collect();
            Image::new(g, v).unwrap()
        })
        .collect();
    let q = 0.9;
    let s = stats::summarize(&draws.iter().collect::<Vec<_>>(), q).unwrap();
    for j in 0..4 {
        let law = NormalLaw::new(mus[j], sigmas[j]).unwrap();
        for (p, est) in [
            ((1.0 - q) / 2.0, s.lower.values()[j]),
            ((1.0 + q) / 2.0, s.upper.values()[j]),
        ] {
            let x = law.inverse_cdf(p);
            let se = (p * (1.0 - p) / b as f64).sqrt() / law.pdf(x);
            assert!(
                (est - x).abs() <= 3.0 * se,
                "pixel {j}, level {p}: {est} vs {x}"
            );
        }
    }
}

#[test]
fn well_specified_segments_are_identified_from_any_start() {
    let (_, a, truth, seg) = disk16();
    let m = mri::reduce_design(&a, &seg, DEFAULT_CONDITION_CAP).unwrap();
    let lam = Sinogram::intensities(a.forward(truth.values())).unwrap();
    let report =
        misspec::identifiability_positive_check(&m, &lam, 10, 50, 3, &misspec::tight_solver())
            .unwrap();
    assert!(report.injective && report.nonexpansive && report.identified);
    for x in &report.minimizers {
        assert!(
            (x[0] - 2.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6,
            "{x:?}"
        );
    }
}

#[test]
fn counterexample_points_satisfy_the_simplex_identity() {
    let a = misspec::design();
    let total: f64 = misspec::truth_intensities().values().iter().sum();
    for p in
        misspec::counterexample_multistart(&misspec::random_starts(20, 4), &misspec::tight_solver())
            .unwrap()
    {
        let mass: f64 = p.lambda.iter().zip(a.col_sums()).map(|(l, s)| l * s).sum();
        assert!((mass - total).abs() <= 1e-8);
    }
}

#[test]
fn map_beats_random_feasible_perturbations() {
    let (g, a, truth, _) = disk16();
    let y = simulate_sinogram(&truth, &a, 10.0, 8).unwrap();
    let pen = PenaltyParams::default();
    let beta = 0.01;
    let cfg = SolverConfig::penalized(beta, pen).with_stopping(5000, 1e-13);
    let rep = solve(Start::Uniform(g), &y, &a, &cfg).unwrap();
    // The solver works on intensities, so its β is β^t / t.
    let beta_t = beta * y.t();
    let best = penalized_objective(&rep.result, &y, &a, beta_t, &pen)
        .unwrap()
        .unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let v = rep
            .result
            .values()
            .iter()
            .map(|&x| (x * (1.0 + r.random_range(-5e-2..5e-2))).max(0.0))
            .collect();
        let f = penalized_objective(&Image::new(g, v).unwrap(), &y, &a, beta_t, &pen)
            .unwrap()
            .unwrap();
        assert!(f >= best - 1e-9 * best.abs());
    }
}

#[test]
fn exact_data_make_the_likelihood_stationary() {
    let (_, a, truth, _) = disk16();
    let t = 5.0;
    let lam = a.forward(truth.values());
    // ∇L = t·Aᵀ(1 − Y/(tAλ)) with Y = tAλ.
    let ratio: Vec<f64> = lam.iter().map(|&l| 1.0 - (t * l) / (t * l)).collect();
    let grad = a.back(&ratio);
    assert!(grad.iter().all(|g| g.abs() <= 1e-12));
    let y = Sinogram::new(lam.iter().map(|l| t * l).collect(), t).unwrap();
    let f0 = penalized_objective(&truth, &y, &a, 0.0, &PenaltyParams::default())
        .unwrap()
        .unwrap();
    let bumped = Image::new(
        *truth.grid(),
        truth.values().iter().map(|v| v * 1.01).collect(),
    )
    .unwrap();
    assert!(
        penalized_objective(&bumped, &y, &a, 0.0, &PenaltyParams::default())
            .unwrap()
            .unwrap()
            > f0
    );
}
