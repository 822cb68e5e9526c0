// Ablation variants next to the full pipeline, with paired per-repeat
// differences and their 95% intervals.
//
// "A is worse than B" holds when the whole interval of the paired
// difference lies on the worse side of zero. "A is at least B" holds when A
// is not significantly worse: the interval reaches zero or beyond.

use std::path::Path;
use std::time::Instant;

use hoisynth::metrics::{mean_ci, Summary};
use hoisynth::pipeline::{
    evaluate, gen_data, train_direct_body, train_extractor, train_object_no_contact, train_stage, AblationFlags, EvalReport, PipelineConfig, Stage, StageConfig,
    Workspace,
};

pub struct Comparison {
    pub claim: String,
    pub metric: String,
    /// Per-repeat difference, signed so that positive supports the claim.
    pub diff: Summary,
    pub holds: bool,
}

pub struct AblationReport {
    pub eval: EvalReport,
    pub comparisons: Vec<Comparison>,
    pub train_seconds: f64,
}

pub const VARIANTS: [&str; 8] =
    ["", "direct-body", "no-contact", "optimizer=none", "optimizer=temporal", "optimizer=in-contact", "real-canonical", "real-contact"];

fn higher_is_better(metric: &str) -> bool {
    !matches!(metric, "fid" | "mm_dist")
}

/// Per repeat, how much better `a` does than `b` on `metric`.
fn advantage(eval: &EvalReport, a: &str, b: &str, metric: &str) -> Summary {
    let va = &eval.variant(a).expect("variant evaluated").per_repeat[metric];
    let vb = &eval.variant(b).expect("variant evaluated").per_repeat[metric];
    let sign = if higher_is_better(metric) { 1.0 } else { -1.0 };
    mean_ci(&va.iter().zip(vb).map(|(x, y)| sign * (x - y)).collect::<Vec<_>>())
}

pub fn worse(eval: &EvalReport, a: &str, b: &str, metric: &str) -> Comparison {
    let diff = advantage(eval, b, a, metric);
    let holds = diff.mean - diff.ci95.unwrap_or(0.0) > 0.0;
    Comparison { claim: format!("{a} worse than {b}"), metric: metric.into(), diff, holds }
}

pub fn at_least(eval: &EvalReport, a: &str, b: &str, metric: &str) -> Comparison {
    let diff = advantage(eval, a, b, metric);
    let holds = diff.mean + diff.ci95.unwrap_or(0.0) >= 0.0;
    Comparison { claim: format!("{a} at least {b}"), metric: metric.into(), diff, holds }
}

pub fn comparisons(eval: &EvalReport) -> Vec<Comparison> {
    vec![
        worse(eval, "direct-body", "full", "r_precision_top1"),
        worse(eval, "direct-body", "full", "fid"),
        worse(eval, "no-contact", "full", "c_prec"),
        at_least(eval, "full", "optimizer=temporal", "c_prec"),
        at_least(eval, "full", "optimizer=in-contact", "c_prec"),
        at_least(eval, "optimizer=temporal", "optimizer=none", "c_prec"),
        at_least(eval, "optimizer=in-contact", "optimizer=none", "c_prec"),
    ]
}

/// Trains whatever the ablation run needs that the workspace lacks.
pub fn ensure_trained(cfg: &PipelineConfig, ws: &Workspace) {
    let ds = match ws.load_dataset() {
        Ok(ds) => ds,
        Err(_) => gen_data(cfg, ws).expect("data"),
    };
    for (stage, name) in [(Stage::Action, "alpha"), (Stage::Style, "beta"), (Stage::Contact, "contact"), (Stage::Object, "gamma")] {
        if !ws.checkpoint(name).exists() {
            train_stage(stage, cfg, &ds, ws).expect("stage");
        }
    }
    if !ws.checkpoint("extractor").exists() {
        train_extractor(cfg, &ds, ws).expect("extractor");
    }
    if !ws.checkpoint("direct").exists() {
        train_direct_body(cfg, &ds, ws).expect("direct body").write(ws).unwrap();
    }
    if !ws.checkpoint("gamma-no-contact").exists() {
        train_object_no_contact(cfg, &ds, ws).expect("no-contact object").write(ws).unwrap();
    }
}

pub fn run_with(cfg: &PipelineConfig, root: &Path) -> AblationReport {
    let ws = Workspace::new(root);
    let t = Instant::now();
    ensure_trained(cfg, &ws);
    let train_seconds = t.elapsed().as_secs_f64();
    let variants: Vec<AblationFlags> = VARIANTS.iter().map(|v| AblationFlags::parse(v).unwrap()).collect();
    let eval = evaluate(cfg, &ws, &variants, "ablate").expect("evaluation");
    print!("{}", eval.to_text());
    let comparisons = comparisons(&eval);
    for c in &comparisons {
        println!("{:<5} {} on {}: advantage {}", if c.holds { "holds" } else { "fails" }, c.claim, c.metric, c.diff);
    }
    AblationReport { eval, comparisons, train_seconds }
}

pub fn run_example() -> AblationReport {
    let mut cfg = PipelineConfig::default();
    cfg.data.per_cell = 24;
    cfg.data.points = 64;
    let short = StageConfig { steps: 30, batch: 8, lr: 1e-3 };
    cfg.stage1 = short.clone();
    cfg.stage2 = short.clone();
    cfg.stage3 = short.clone();
    cfg.stage4 = short;
    cfg.extractor.steps = 30;
    cfg.eval.repeats = 3;
    let dir = tempfile::tempdir().expect("tempdir");
    run_with(&cfg, dir.path())
}

#[allow(dead_code)]
fn main() {
    run_example();
}
