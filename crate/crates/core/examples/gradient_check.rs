// Central finite differences against the tape gradients of the denoising
// loss and the contact loss, on small double-precision networks.

use std::time::Instant;

use hoisynth::contact::{ContactPredictor, ContactPredictorConfig};
use hoisynth::diffusion::{training_loss, Conditions, Denoiser, DenoiserConfig, DenoiserSpec, NoiseSchedule, Output, Role};
use hoisynth::hoi_core::Mat;
use hoisynth::nn::{Graph, ParamId, ParamStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct GradientCheck {
    pub name: String,
    pub checked: usize,
    /// max over parameter tensors of ‖g − g_fd‖ / max(‖g‖, ‖g_fd‖)
    pub max_rel_error: f64,
}

pub struct GradientReport {
    pub checks: Vec<GradientCheck>,
    pub seconds: f64,
}

const H: f64 = 1e-5;
const PER_TENSOR: usize = 4;

/// Moves every parameter off its initial value so that zero-initialized
/// heads do not hide the gradients behind them.
fn jiggle(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for i in 0..store.len() {
        for v in store.get_mut(ParamId(i)).iter_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
    }
}

fn check(name: &str, store: &mut ParamStore, grads: &[Option<Mat>], mut loss: impl FnMut(&ParamStore) -> f64, rng: &mut ChaCha8Rng) -> GradientCheck {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for i in 0..store.len() {
        let id = ParamId(i);
        let n = store.get(id).len();
        let zero = Mat::zeros(store.get(id).dim());
        let analytic = grads[i].as_ref().unwrap_or(&zero);
        let (mut diff, mut na, mut nf) = (0.0, 0.0, 0.0);
        for _ in 0..PER_TENSOR.min(n) {
            let e = rng.random_range(0..n);
            let orig = store.get(id).as_slice().unwrap()[e];
            store.get_mut(id).as_slice_mut().unwrap()[e] = orig + H;
            let up = loss(store);
            store.get_mut(id).as_slice_mut().unwrap()[e] = orig - H;
            let down = loss(store);
            store.get_mut(id).as_slice_mut().unwrap()[e] = orig;
            let fd = (up - down) / (2.0 * H);
            let a = analytic.as_slice().unwrap()[e];
            diff += (a - fd) * (a - fd);
            na += a * a;
            nf += fd * fd;
            checked += 1;
        }
        let scale = na.max(nf).sqrt();
        if scale > 1e-10 {
            worst = worst.max(diff.sqrt() / scale);
        }
    }
    println!("{name:<24} {checked:>4} entries, max relative error {worst:.2e}");
    GradientCheck { name: name.into(), checked, max_rel_error: worst }
}

fn cloud(seed: usize, p: usize) -> Mat {
    Mat::from_shape_fn((p, 3), |(i, j)| (((i * 7 + j * 3 + seed) as f64) * 0.61).sin() * 0.15)
}

fn denoiser_check(role: Role, rng: &mut ChaCha8Rng) -> GradientCheck {
    let cfg = DenoiserConfig {
        layers: 2,
        heads: 2,
        d_model: 8,
        ff: 12,
        patch: 2,
        train_steps: 30,
        inference_steps: 5,
        text_width: 6,
        cond_width: 6,
        point_width: 5,
        body_hidden: 4,
        std_floor: 1e-3,
        output: Output::Velocity,
    };
    let spec = DenoiserSpec { role, x_dim: 3, n_frames: 4, vocab: 6, body_features: 2, points: 6, contact: true };
    let mut den = Denoiser::new(cfg, spec, NoiseSchedule::linear(30, 0.01, 0.2).unwrap(), 5).unwrap();
    jiggle(&mut den.store, rng);
    let b = 3;
    let tokens = Some((0..b).map(|i| vec![2, 3 + i as u32 % 3]).collect());
    let points = Some((0..b).map(|i| cloud(i, 6)).collect());
    let cond = match role {
        Role::Alpha => Conditions { tokens, ..Conditions::default() },
        Role::Beta => Conditions { tokens, points, ..Conditions::default() },
        Role::Gamma => Conditions {
            points,
            body: Some((0..b).map(|i| Mat::from_shape_fn((4, 2), |(f, c)| ((f * 2 + c + i) as f64 * 0.9).cos())).collect()),
            contact: Some((0..b).map(|i| (0..6).map(|p| ((p * 5 + i) % 7) as f64 / 7.0).collect()).collect()),
            ..Conditions::default()
        },
    };
    let x0: Vec<Mat> = (0..b).map(|i| Mat::from_shape_fn((4, 3), |(f, c)| ((f * 3 + c + 4 * i) as f64 * 0.47).sin())).collect();
    let (_, grads) = training_loss(&den, &x0, &cond, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let mut store = den.store.clone();
    check(
        &format!("denoising loss, {role:?}"),
        &mut store,
        &grads,
        |s| {
            den.store = s.clone();
            training_loss(&den, &x0, &cond, &mut ChaCha8Rng::seed_from_u64(9)).unwrap().0
        },
        rng,
    )
}

fn contact_check(rng: &mut ChaCha8Rng) -> GradientCheck {
    let cfg = ContactPredictorConfig { layers: 2, heads: 2, d_model: 8, ff: 12, text_width: 6, point_width: 5, object_width: 7 };
    let mut pred = ContactPredictor::new(cfg, 6, 4).unwrap();
    jiggle(&mut pred.store, rng);
    let tokens: Vec<Vec<u32>> = vec![vec![2, 3], vec![4, 5, 2]];
    let clouds = [cloud(0, 8), cloud(3, 8)];
    let refs: Vec<&Mat> = clouds.iter().collect();
    let labels: Vec<Vec<bool>> = (0..2).map(|i| (0..8).map(|p| (p + i) % 3 == 0).collect()).collect();
    let grads = {
        let mut g = Graph::new(&pred.store);
        let l = pred.loss(&mut g, &tokens, &refs, &labels).unwrap();
        let mut gr = g.tape.backward(l);
        g.param_grads(&mut gr)
    };
    let mut store = pred.store.clone();
    check(
        "contact loss",
        &mut store,
        &grads,
        |s| {
            pred.store = s.clone();
            let mut g = Graph::new(&pred.store);
            let l = pred.loss(&mut g, &tokens, &refs, &labels).unwrap();
            g.tape.scalar(l)
        },
        rng,
    )
}

pub fn run_example() -> GradientReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut checks: Vec<GradientCheck> = [Role::Alpha, Role::Beta, Role::Gamma].into_iter().map(|r| denoiser_check(r, &mut rng)).collect();
    checks.push(contact_check(&mut rng));
    GradientReport { checks, seconds: start.elapsed().as_secs_f64() }
}

#[allow(dead_code)]
fn main() {
    run_example();
}
