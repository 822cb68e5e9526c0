// Guided correction of object postures: synthetic grasps whose object is
// pushed 3 cm off the hand are pulled back over ten guidance calls.

use hoisynth::hoi_core::rotation::{exp_map, Vec3};
use hoisynth::hoi_core::{Mat, ObjectGeometry};
use hoisynth::interactor::{CorrectionTrace, Interactor, InteractorConfig};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct InteractionOptimizerReport {
    pub instances: usize,
    pub reductions: Vec<f64>,
    pub median_reduction: f64,
    /// Accepted steps that raised L_I, plus calls after which the freshly
    /// detected L_I was higher than before.
    pub increases: usize,
    pub trace: CorrectionTrace,
}

pub const OFFSET: f64 = 0.03;
const CALLS: usize = 10;
const STEPS_PER_CALL: usize = 2;
const FRAMES: usize = 24;

/// Four grip points at least 12 cm apart, touched by the hand points, and
/// filler points kept 10 cm or more away from every grip point.
fn instance(rng: &mut ChaCha8Rng) -> (Array3<f64>, ObjectGeometry, Mat) {
    let grips: Vec<Vec3> = (0..4)
        .map(|k| {
            let a = k as f64 * std::f64::consts::FRAC_PI_2 + rng.random_range(-0.2..0.2);
            Vec3::new(0.1 * a.cos(), 0.1 * a.sin(), rng.random_range(-0.02..0.02))
        })
        .collect();
    let mut points = grips.clone();
    while points.len() < 64 {
        let q = Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
        if grips.iter().all(|g| (g - q).norm() >= 0.1) {
            points.push(q);
        }
    }
    let geometry = ObjectGeometry { points: Mat::from_shape_fn((points.len(), 3), |(i, c)| points[i][c]), class_id: 0, scale: [1.0; 3] };
    let w0 = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let dw = Vec3::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02));
    let v = Vec3::new(rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01), rng.random_range(0.0..0.02));
    let mut postures = Mat::zeros((FRAMES, 6));
    let mut hands = Array3::zeros((FRAMES, grips.len(), 3));
    for f in 0..FRAMES {
        let w = w0 + dw * f as f64;
        let t = Vec3::new(0.4, 0.0, 0.9) + v * f as f64;
        let r = exp_map(&w);
        for c in 0..3 {
            postures[[f, c]] = w[c];
            postures[[f, 3 + c]] = t[c];
        }
        for (j, g) in grips.iter().enumerate() {
            let h = r * g + t;
            for c in 0..3 {
                hands[[f, j, c]] = h[c];
            }
        }
    }
    (hands, geometry, postures)
}

pub fn run_example() -> InteractionOptimizerReport {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let cfg = InteractorConfig { steps: STEPS_PER_CALL, ..InteractorConfig::default() };
    let instances = 50;
    let mut reductions = Vec::with_capacity(instances);
    let mut increases = 0;
    let mut trace = CorrectionTrace::default();
    for i in 0..instances {
        let (hands, geometry, clean) = instance(&mut rng);
        let axis = i % 3;
        let mut o = clean.clone();
        o.column_mut(3 + axis).mapv_inplace(|x| x + OFFSET);
        let it = Interactor::from_parts(cfg.clone(), hands, &geometry);
        let start = it.error(&o).unwrap().total;
        let mut last = start;
        for call in 0..CALLS {
            o = it.correct(&o, i, call, CALLS - 1 - call, &mut trace).unwrap();
            let now = it.error(&o).unwrap().total;
            increases += usize::from(now > last);
            last = now;
        }
        reductions.push(1.0 - last / start);
    }
    increases += trace.steps.iter().filter(|t| t.after > t.before).count();
    let mut sorted = reductions.clone();
    sorted.sort_by(f64::total_cmp);
    let median_reduction = (sorted[instances / 2 - 1] + sorted[instances / 2]) / 2.0;
    println!("{instances} grasps offset by {OFFSET} m, {CALLS} calls x {STEPS_PER_CALL} steps");
    println!("L_I reduction: median {:.1}%, worst {:.1}%", 100.0 * median_reduction, 100.0 * sorted[0]);
    println!("increases observed: {increases}");
    println!("{} trace rows, {} diagnostics", trace.steps.len(), trace.diagnostics.len());
    InteractionOptimizerReport { instances, reductions, median_reduction, increases, trace }
}

#[allow(dead_code)]
fn main() {
    run_example();
}
