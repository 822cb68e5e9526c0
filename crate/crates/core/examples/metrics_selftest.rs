// Metric sanity checks: FID against the closed form for Gaussians, the
// chance level of R-Precision, and degenerate inputs with known answers.

use hoisynth::metrics::{diversity, fid, mean_ci, mm_dist, mmodality, r_precision, R_PRECISION_POOL};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub struct MetricsSelftestReport {
    pub fid_estimate: f64,
    pub fid_closed_form: f64,
    pub fid_rel_error: f64,
    /// (observed, chance, standard error) for top-1..3
    pub r_precision_random: Vec<(f64, f64, f64)>,
    pub trivial: Vec<(String, bool)>,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, mean: &DVector<f64>, q: &DMatrix<f64>, sd: &[f64]) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let z = DVector::from_iterator(sd.len(), sd.iter().map(|s| { let z: f64 = StandardNormal.sample(rng); s * z }));
            (mean + q * z).iter().copied().collect()
        })
        .collect()
}

fn random_rotation(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    a.qr().q()
}

fn noise(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect()).collect()
}

pub fn run_example() -> MetricsSelftestReport {
    let mut rng = ChaCha8Rng::seed_from_u64(51);

    // shared eigenvectors, so (Σ₁Σ₂)^½ = Q diag(s₁s₂) Qᵀ and the distance is
    // ‖μ₁ − μ₂‖² + Σ (s₁ − s₂)²
    let d = 8;
    let q = random_rotation(&mut rng, d);
    let s1: Vec<f64> = (0..d).map(|i| 0.5 + 0.2 * i as f64).collect();
    let s2: Vec<f64> = (0..d).map(|i| 1.6 - 0.1 * i as f64).collect();
    let m1 = DVector::from_fn(d, |i, _| 0.1 * i as f64);
    let m2 = DVector::from_fn(d, |i, _| 0.4 - 0.05 * i as f64);
    let closed = (&m1 - &m2).norm_squared() + s1.iter().zip(&s2).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let a = gaussian(&mut rng, 20_000, &m1, &q, &s1);
    let b = gaussian(&mut rng, 20_000, &m2, &q, &s2);
    let est = fid(&a, &b).unwrap();

    let n = 4096;
    let hoi = noise(&mut rng, n, 16);
    let text = noise(&mut rng, n, 16);
    let rp = r_precision(&hoi, &text, 3, &mut rng).unwrap();
    let r_precision_random: Vec<(f64, f64, f64)> = rp
        .iter()
        .enumerate()
        .map(|(k, &o)| {
            let p = (k + 1) as f64 / R_PRECISION_POOL as f64;
            (o, p, (p * (1.0 - p) / n as f64).sqrt())
        })
        .collect();

    let x = noise(&mut rng, 64, 6);
    let same: Vec<Vec<f64>> = vec![vec![0.3; 6]; 40];
    let ci = mean_ci(&[1.0, 2.0, 3.0, 4.0, 5.0]);
    let trivial = vec![
        ("FID of a set with itself is 0".to_string(), fid(&x, &x).unwrap().abs() < 1e-9),
        ("R-Precision with text features equal to HOI features is 1".into(), r_precision(&x, &x, 3, &mut rng).unwrap() == vec![1.0; 3]),
        ("MM-Dist of identical pairs is 0".into(), mm_dist(&x, &x).unwrap() == 0.0),
        ("Diversity of identical features is 0".into(), diversity(&same, 32, &mut rng).unwrap() == 0.0),
        ("MModality of identical repeats is 0".into(), mmodality(&[same.clone(), same.clone()], 5, &mut rng).unwrap() == 0.0),
        ("mean ± CI of 1..5 is 3 ± 1.963243".into(), ci.mean == 3.0 && (ci.ci95.unwrap() - 1.963243).abs() < 1e-6),
        ("R-Precision rejects pools smaller than 32".into(), r_precision(&x[..20], &x[..20], 1, &mut rng).is_err()),
    ];

    let report = MetricsSelftestReport { fid_estimate: est, fid_closed_form: closed, fid_rel_error: (est - closed).abs() / closed, r_precision_random, trivial };
    println!("FID on Gaussians: {est:.4} vs closed form {closed:.4} ({:.2}% off)", 100.0 * report.fid_rel_error);
    for (k, (o, p, se)) in report.r_precision_random.iter().enumerate() {
        println!("random R-Precision top-{}: {o:.4} (chance {p:.4}, SE {se:.4})", k + 1);
    }
    for (name, ok) in &report.trivial {
        println!("{} {name}", if *ok { "ok  " } else { "FAIL" });
    }
    report
}

#[allow(dead_code)]
fn main() {
    run_example();
}
