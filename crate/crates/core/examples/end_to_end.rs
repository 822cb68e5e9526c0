// The whole pipeline on a fresh workspace: generate data, train the four
// stages and the evaluation extractor, score the test split, then synthesize
// one interaction and export it in every supported format.

use std::path::{Path, PathBuf};
use std::time::Instant;

use hoisynth::hoi_core::{Dataset, Split};
use hoisynth::pipeline::{
    evaluate, gen_data, synthesis_archive, trace_csv, train_extractor, train_stage, write_obj_sequence, AblationFlags, EvalReport, Pipeline, PipelineConfig,
    Request, Stage, StageConfig, Workspace,
};

pub struct EndToEndReport {
    pub timings: Vec<(String, f64)>,
    pub eval: EvalReport,
    pub r_precision_top1: f64,
    pub fid: f64,
    pub noise_fid: f64,
    pub c_prec: f64,
    pub exported: Vec<PathBuf>,
    pub seconds: f64,
}

/// Small enough to run in well under a minute; the numbers it produces are
/// not meaningful.
pub fn tiny_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.data.per_cell = 24;
    cfg.data.points = 64;
    let short = StageConfig { steps: 30, batch: 8, lr: 1e-3 };
    cfg.stage1 = short.clone();
    cfg.stage2 = short.clone();
    cfg.stage3 = short.clone();
    cfg.stage4 = short;
    cfg.extractor.steps = 30;
    cfg.eval.repeats = 2;
    cfg
}

pub fn train_pipeline(cfg: &PipelineConfig, ws: &Workspace) -> (Dataset, Vec<(String, f64)>) {
    let mut timings = Vec::new();
    let t = Instant::now();
    let ds = gen_data(cfg, ws).expect("data");
    timings.push(("data".to_string(), t.elapsed().as_secs_f64()));
    for stage in [Stage::Action, Stage::Style, Stage::Contact, Stage::Object] {
        let t = Instant::now();
        let log = train_stage(stage, cfg, &ds, ws).expect("training");
        let (a, b) = log.endpoints();
        println!("stage {}: loss {a:.4} -> {b:.4} ({:.1} s)", stage.number(), t.elapsed().as_secs_f64());
        timings.push((format!("stage{}", stage.number()), t.elapsed().as_secs_f64()));
    }
    let t = Instant::now();
    train_extractor(cfg, &ds, ws).expect("extractor");
    timings.push(("extractor".to_string(), t.elapsed().as_secs_f64()));
    (ds, timings)
}

fn export_one(cfg: &PipelineConfig, ws: &Workspace, ds: &Dataset) -> Vec<PathBuf> {
    let pipe = Pipeline::load(cfg, ws).expect("pipeline");
    let sample = ds.split(Split::Test).next().expect("a test sample");
    let text = sample.text.raw.clone();
    let req = Request { tokens: pipe.tokens_for(&text).expect("known words"), geometry: &sample.geometry, truth_contact: None };
    let out = pipe.synthesize(&[req], cfg.seed, &AblationFlags::default()).expect("synthesis");
    let dir = ws.root.join("exports");
    let mut files = Vec::new();
    synthesis_archive(&out.samples, &[text.clone()]).unwrap().write(&dir.join("container")).unwrap();
    files.push(dir.join("container"));
    files.extend(write_obj_sequence(&out.samples[0], &sample.geometry, &pipe.skel, &dir.join("obj")).unwrap());
    std::fs::write(dir.join("trace.csv"), trace_csv(&out.trace)).unwrap();
    files.push(dir.join("trace.csv"));
    if let Some((a, b)) = out.trace.endpoints(0) {
        println!("\"{text}\": interaction error {a:.4} -> {b:.4} during guidance");
    }
    files
}

pub fn run_with(cfg: &PipelineConfig, root: &Path) -> EndToEndReport {
    let start = Instant::now();
    let ws = Workspace::new(root);
    let (ds, mut timings) = train_pipeline(cfg, &ws);
    let t = Instant::now();
    let eval = evaluate(cfg, &ws, &[AblationFlags::default()], "evaluate").expect("evaluation");
    timings.push(("evaluate".to_string(), t.elapsed().as_secs_f64()));
    print!("{}", eval.to_text());
    let exported = export_one(cfg, &ws, &ds);
    let full = eval.variant("full").expect("full variant");
    EndToEndReport {
        r_precision_top1: full.mean("r_precision_top1"),
        fid: full.mean("fid"),
        noise_fid: eval.reference["noise_fid"],
        c_prec: full.mean("c_prec"),
        timings,
        eval,
        exported,
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub fn run_example() -> EndToEndReport {
    let dir = tempfile::tempdir().expect("tempdir");
    run_with(&tiny_config(), dir.path())
}

#[allow(dead_code)]
fn main() {
    env_logger::init();
    run_example();
}
