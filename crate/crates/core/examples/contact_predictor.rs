// Train the text- and geometry-conditioned contact predictor and score it
// on held-out instructions.

use std::time::Instant;

use hoisynth::contact::{roc_auc, ContactPredictor};
use hoisynth::error::Error;
use hoisynth::hoi_core::{KinematicBody, Mat, Split};
use hoisynth::pipeline::{gen_data, train_stage, PipelineConfig, Stage, Workspace};
use hoisynth::synthkit::sample_contact;

pub struct ContactPredictorReport {
    pub untrained_is_missing_dependency: bool,
    pub loss_start: f64,
    pub loss_end: f64,
    pub test_auc: f64,
    pub maps_written: usize,
    pub train_seconds: f64,
}

pub fn run_with(cfg: &PipelineConfig) -> ContactPredictorReport {
    let dir = tempfile::tempdir().expect("tempdir");
    let ws = Workspace::new(dir.path());
    let ds = gen_data(cfg, &ws).expect("data");

    let fresh = ContactPredictor::new(cfg.contact.clone(), ds.meta.vocabulary.len(), 0).unwrap();
    let probe = [ds.samples[0].geometry.points.clone()];
    let untrained = matches!(fresh.predict(&[ds.samples[0].text.tokens.clone()], &[&probe[0]]), Err(Error::MissingDependency(_)));

    let start = Instant::now();
    let log = train_stage(Stage::Contact, cfg, &ds, &ws).expect("stage III");
    let train_seconds = start.elapsed().as_secs_f64();
    let (loss_start, loss_end) = log.endpoints();

    let pred = ContactPredictor::load(&ws.checkpoint("contact")).expect("checkpoint");
    let skel = KinematicBody::smpl_lite();
    let test: Vec<_> = ds.split(Split::Test).collect();
    let tokens: Vec<Vec<u32>> = test.iter().map(|s| s.text.tokens.clone()).collect();
    let clouds: Vec<&Mat> = test.iter().map(|s| &s.geometry.points).collect();
    let probs = pred.predict(&tokens, &clouds).expect("predict");
    let labels: Vec<bool> = test.iter().flat_map(|s| sample_contact(s, &skel).unwrap()).collect();
    let scores: Vec<f64> = probs.into_iter().flatten().collect();
    let test_auc = roc_auc(&labels, &scores).expect("both classes present");
    let maps_written = std::fs::read_dir(ws.contact()).map(|d| d.count()).unwrap_or(0);

    println!("untrained predictor refuses to predict: {untrained}");
    println!("stage III loss {loss_start:.3} -> {loss_end:.3} in {train_seconds:.1} s");
    println!("test-split ROC-AUC over {} points: {test_auc:.4}", labels.len());
    ContactPredictorReport { untrained_is_missing_dependency: untrained, loss_start, loss_end, test_auc, maps_written, train_seconds }
}

pub fn run_example() -> ContactPredictorReport {
    run_with(&PipelineConfig::default())
}

#[allow(dead_code)]
fn main() {
    run_example();
}
