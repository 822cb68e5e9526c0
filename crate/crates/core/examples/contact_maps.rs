// Hand-object distance maps, their Gaussian normalization and the
// thresholded per-point contact labels.

use hoisynth::contact::{contact_radius, default_lambda, distance_map, gt_contact, normalize_map, SIGMA};
use hoisynth::synthkit::{generate_dataset, sample_contact, ScenarioSpec};
use nalgebra::Vector3;
use ndarray::{Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct ContactMapsReport {
    pub max_brute_force_gap: f64,
    pub at_sigma: f64,
    pub instances: usize,
    pub rule_agreement: usize,
    pub mean_contact_fraction: f64,
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Array3<f64> {
    Array3::from_shape_fn((n, k, 3), |_| rng.random_range(-0.3..0.3))
}

pub fn run_example() -> ContactMapsReport {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let instances = 1000;
    let mut max_gap = 0.0f64;
    let mut agree = 0;
    for _ in 0..instances {
        let (n, j, p) = (rng.random_range(1..6), rng.random_range(1..5), rng.random_range(1..40));
        let hands = random_cloud(&mut rng, n, j);
        let object = random_cloud(&mut rng, n, p);
        let d = distance_map(hands.view(), object.view()).unwrap();
        for f in 0..n {
            for a in 0..j {
                let h = Vector3::from_iterator(hands.index_axis(Axis(0), f).index_axis(Axis(0), a).iter().copied());
                for b in 0..p {
                    let o = Vector3::from_iterator(object.index_axis(Axis(0), f).index_axis(Axis(0), b).iter().copied());
                    max_gap = max_gap.max(((h - o).norm() - d[[f, a, b]]).abs());
                }
            }
        }
        let lambda = rng.random_range(0.05..0.95);
        let sigma = rng.random_range(0.02..0.2);
        let labels = gt_contact(normalize_map(d.view(), sigma).unwrap().view(), lambda);
        let radius = contact_radius(sigma, lambda);
        let by_distance: Vec<bool> = (0..p).map(|b| d.index_axis(Axis(2), b).iter().any(|&x| x < radius)).collect();
        agree += usize::from(labels == by_distance);
    }
    let at_sigma = normalize_map(Array3::from_elem((1, 1, 1), SIGMA).view(), SIGMA).unwrap()[[0, 0, 0]];

    let (world, ds) = generate_dataset(&ScenarioSpec { per_cell: 4, ..ScenarioSpec::default() }).unwrap();
    let fractions: Vec<f64> = ds
        .samples
        .iter()
        .map(|s| {
            let c = sample_contact(s, &world.skeleton).unwrap();
            c.iter().filter(|&&x| x).count() as f64 / c.len() as f64
        })
        .collect();
    let mean_contact_fraction = fractions.iter().sum::<f64>() / fractions.len() as f64;

    println!("distance map vs brute force: max gap {max_gap:.2e}");
    println!("normalized value at d = sigma: {at_sigma:.6}");
    println!("threshold rule == distance rule on {agree}/{instances} random instances");
    println!("default contact radius {:.4} m", contact_radius(SIGMA, default_lambda()));
    println!("mean fraction of object points in contact: {mean_contact_fraction:.3}");
    ContactMapsReport { max_brute_force_gap: max_gap, at_sigma, instances, rule_agreement: agree, mean_contact_fraction }
}

#[allow(dead_code)]
fn main() {
    run_example();
}
