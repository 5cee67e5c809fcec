use rand_distr::{Distribution, Normal};
use scal_core::alignment::{
    estimate_conditional_kl_latents, fit_kde, train_discriminator, DiscriminatorOptimizer,
    DiscriminatorParams,
};
use scal_core::numerics::{AdamConfig, DenseArray};
use scal_core::rng::stream;

pub const N: usize = 5000;

pub fn gaussian_pair_estimate(mu_t: f64, sigma_t: f64, seed: u64) -> f64 {
    let mut r = stream(seed, "samples");
    let x = [0.0, 0.0, 0.2, 0.2, 0.2];
    let src: Vec<Vec<f64>> = (0..N).map(|_| vec![Normal::new(0.0, 1.0).unwrap().sample(&mut r)]).collect();
    let tgt: Vec<Vec<f64>> =
        (0..N).map(|_| vec![Normal::new(mu_t, sigma_t).unwrap().sample(&mut r)]).collect();
    let xs = vec![x; N];
    let fuse = |l: &[Vec<f64>]| {
        let rows: Vec<Vec<f64>> = l.iter().map(|v| v.iter().chain(&x).copied().collect()).collect();
        DenseArray::from_rows(&rows).unwrap()
    };
    let (fs, ft) = (fuse(&src), fuse(&tgt));
    let mut dr = stream(seed, "disc");
    let mut disc = DiscriminatorParams::random(1, 5, 64, &mut dr).unwrap();
    let mut opt = DiscriminatorOptimizer::new(&disc, AdamConfig::with_lr(3e-3));
    train_discriminator(&mut disc, &mut opt, &fs, &ft, 3000, 256, &mut dr).unwrap();
    let kde_s = fit_kde(&xs).unwrap();
    let kde_t = fit_kde(&xs).unwrap();
    estimate_conditional_kl_latents(&disc, &kde_s, &kde_t, &src, &xs).unwrap()
}

/// `(μ_t, σ_t, closed-form KL, tolerance)` against a standard normal source.
pub const CASES: [(f64, f64, f64, f64); 4] = [
    (0.0, 1.0, 0.0, 0.12),
    (1.0, 1.0, 0.5, 0.12),
    (0.0, 2.0, 0.318_147_180_559_945_3, 0.12),
    (2.0, 1.0, 2.0, 0.3),
];
