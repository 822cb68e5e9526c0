// The noise schedule checked against closed forms, and a denoiser whose head
// is pinned to the clean signal so that it predicts the true noise exactly.

use std::time::Instant;

use hoisynth::diffusion::{sample, training_loss, Conditions, Denoiser, DenoiserConfig, DenoiserSpec, NoiseSchedule, Normalizer, Output, Role, SamplerKind};
use hoisynth::hoi_core::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub struct DiffusionMathReport {
    /// |x⁰ − reverse(forward(x⁰, ε), ε)| with a single-step schedule.
    pub one_step_round_trip: f64,
    /// Largest |mean − closed form| / SE and |var − closed form| / SE over the checked steps.
    pub mc_mean_z: f64,
    pub mc_var_z: f64,
    pub oracle_loss: f64,
    pub oracle_reconstruction: f64,
    pub seconds: f64,
}

fn normal(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Mat {
    Mat::from_shape_fn(shape, |_| StandardNormal.sample(rng))
}

/// Composes single forward steps with fresh noise and compares the empirical
/// per-entry mean and variance of x^k with √ᾱ_k x⁰ and 1 − ᾱ_k.
fn monte_carlo(s: &NoiseSchedule, x0: &Mat, draws: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let checks = [1, s.steps() / 4, s.steps() / 2, s.steps()];
    let n = draws as f64;
    let mut sum: Vec<Mat> = checks.iter().map(|_| Mat::zeros(x0.dim())).collect();
    let mut sq = sum.clone();
    let mut quad = sum.clone();
    for _ in 0..draws {
        let mut x = x0.clone();
        let mut c = 0;
        for k in 1..=s.steps() {
            x = s.forward_step(&x, k, &normal(rng, x0.dim())).unwrap();
            if k == checks[c] {
                let dev = &x - &(x0 * s.alpha_bar(k).sqrt());
                sum[c] += &dev;
                sq[c] += &(&dev * &dev);
                quad[c] += &(&dev * &dev * &dev * &dev);
                c += 1;
            }
        }
    }
    let (mut zm, mut zv) = (0.0f64, 0.0f64);
    for (c, &k) in checks.iter().enumerate() {
        let var = 1.0 - s.alpha_bar(k);
        for ((&m1, &m2), &m4) in sum[c].iter().zip(sq[c].iter()).zip(quad[c].iter()) {
            let mean = m1 / n;
            let second = m2 / n;
            zm = zm.max(mean.abs() / (var / n).sqrt());
            // SE of the second central moment estimate, from the fourth moment
            let se = ((m4 / n - second * second) / n).sqrt();
            zv = zv.max((second - var).abs() / se);
        }
    }
    (zm, zv)
}

/// A denoiser that outputs x⁰ regardless of input: zero head weights and a
/// head bias holding one patch of the (patch-periodic) normalized target.
fn oracle(x0n: &Mat, patch: usize) -> Denoiser {
    let cfg = DenoiserConfig {
        layers: 1,
        heads: 2,
        d_model: 8,
        ff: 8,
        patch,
        text_width: 8,
        output: Output::Sample,
        ..DenoiserConfig::default()
    };
    let spec = DenoiserSpec { role: Role::Alpha, x_dim: x0n.ncols(), n_frames: x0n.nrows(), vocab: 4, body_features: 0, points: 0, contact: false };
    let mut den = Denoiser::new(cfg, spec, NoiseSchedule::training_default(), 0).unwrap();
    let mut named = den.store.to_named();
    let bias = named.get_mut("head.bias").expect("head bias");
    for (i, v) in bias.iter_mut().enumerate() {
        *v = x0n[[i / x0n.ncols(), i % x0n.ncols()]];
    }
    den.store.load_named(&named).unwrap();
    den
}

pub fn run_example() -> DiffusionMathReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    let one = NoiseSchedule::linear(1, 0.3, 0.3).unwrap();
    let x0 = normal(&mut rng, (16, 9));
    let eps = normal(&mut rng, (16, 9));
    let back = one.reverse_step(&one.forward_noise(&x0, 1, &eps).unwrap(), 1, &eps).unwrap();
    let one_step_round_trip = back.iter().zip(x0.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let short = NoiseSchedule::linear(40, 1e-3, 0.08).unwrap();
    let (mc_mean_z, mc_var_z) = monte_carlo(&short, &normal(&mut rng, (1, 3)), 10_000, &mut rng);

    // patch-periodic target so that one bias row reproduces every token
    let (patch, frames, dim) = (2, 8, 5);
    let unit = normal(&mut rng, (patch, dim));
    let x0n = Mat::from_shape_fn((frames, dim), |(f, d)| unit[[f % patch, d]]);
    let mut den = oracle(&x0n, patch);
    den.norm = Normalizer { mean: (0..dim).map(|d| d as f64 * 0.3 - 0.5).collect(), std: (0..dim).map(|d| 0.5 + d as f64 * 0.25).collect() };
    let target = den.norm.denormalize(&x0n);
    let batch = 6;
    let cond = Conditions { tokens: Some(vec![vec![1, 2]; batch]), ..Conditions::default() };
    let (oracle_loss, _) = training_loss(&den, &vec![target.clone(); batch], &cond, &mut rng).unwrap();
    let seeds: Vec<u64> = (0..batch as u64).collect();
    let out = sample(&den, &cond, &seeds, SamplerKind::Deterministic, None).unwrap();
    let oracle_reconstruction = out.iter().flat_map(|m| m.iter().zip(target.iter()).map(|(a, b)| (a - b).abs())).fold(0.0, f64::max);

    let report = DiffusionMathReport { one_step_round_trip, mc_mean_z, mc_var_z, oracle_loss, oracle_reconstruction, seconds: start.elapsed().as_secs_f64() };
    println!("single-step round trip error   {:.2e}", report.one_step_round_trip);
    println!("forward process, 10^4 draws    mean within {:.2} SE, variance within {:.2} SE", report.mc_mean_z, report.mc_var_z);
    println!("oracle denoising loss          {:.2e}", report.oracle_loss);
    println!("oracle 50-step reconstruction  {:.2e}", report.oracle_reconstruction);
    println!("took {:.1} s", report.seconds);
    report
}

#[allow(dead_code)]
fn main() {
    run_example();
}
