// Split body motion into a per-action canonical motion and a residual
// interaction style, then put it back together.

use std::time::Instant;

use hoisynth::decouple::{max_class_mean_residual, recompose, CanonicalActionSet};
use hoisynth::error::Error;
use hoisynth::hoi_core::BodyPoseSequence;
use hoisynth::synthkit::{generate_dataset, ScenarioSpec};

pub struct DecomposeReport {
    pub samples: usize,
    pub bit_exact: usize,
    pub max_class_mean_residual: f64,
    pub seconds: f64,
    pub unknown_label_is_retrieval_error: bool,
}

pub fn run_example() -> DecomposeReport {
    let (_, ds) = generate_dataset(&ScenarioSpec::default()).expect("generate");
    let start = Instant::now();
    let set = CanonicalActionSet::build(&ds.samples, &ds.meta.action_names).expect("canonical set");
    let mut bit_exact = 0;
    for s in &ds.samples {
        let r = set.residual(&s.body, s.action()).expect("residual");
        let back = recompose(set.retrieve(s.action()).expect("retrieve"), &r.frames).expect("recompose");
        let mut want = BodyPoseSequence::new(s.body.frames.clone());
        want.canonicalize();
        if back.frames.iter().zip(want.frames.iter()).all(|(a, b)| a.to_bits() == b.to_bits()) {
            bit_exact += 1;
        }
    }
    let mean = max_class_mean_residual(&set, &ds.samples).expect("residual means");
    let seconds = start.elapsed().as_secs_f64();
    let unknown = matches!(set.retrieve(99), Err(Error::Retrieval { .. }));
    println!("{bit_exact}/{} samples recompose bit-exactly", ds.samples.len());
    println!("largest class-mean residual entry: {mean:.3e}");
    println!("decompose + recompose took {seconds:.3} s");
    DecomposeReport { samples: ds.samples.len(), bit_exact, max_class_mean_residual: mean, seconds, unknown_label_is_retrieval_error: unknown }
}

#[allow(dead_code)]
fn main() {
    run_example();
}
