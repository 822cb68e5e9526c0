//! One pass/fail line per acceptance criterion, written straight to stderr so
//! it shows up without `--nocapture`. The full pipeline criteria train at the
//! default configuration and take tens of minutes on one core.

use std::io::Write;
use std::time::Instant;

use hoisynth::pipeline::PipelineConfig;

#[allow(dead_code)]
mod decompose {
    include!("../examples/decompose.rs");
}
#[allow(dead_code)]
mod diffusion_math {
    include!("../examples/diffusion_math.rs");
}
#[allow(dead_code)]
mod gradient_check {
    include!("../examples/gradient_check.rs");
}
#[allow(dead_code)]
mod contact_maps {
    include!("../examples/contact_maps.rs");
}
#[allow(dead_code)]
mod contact_predictor {
    include!("../examples/contact_predictor.rs");
}
#[allow(dead_code)]
mod interaction_optimizer {
    include!("../examples/interaction_optimizer.rs");
}
#[allow(dead_code)]
mod metrics_selftest {
    include!("../examples/metrics_selftest.rs");
}
#[allow(dead_code)]
mod end_to_end {
    include!("../examples/end_to_end.rs");
}
#[allow(dead_code)]
mod ablations {
    include!("../examples/ablations.rs");
}

struct Outcome {
    id: usize,
    pass: bool,
    detail: String,
}

fn emit(o: &Outcome) {
    let line = format!("criterion {}: {} | {}\n", o.id, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn c1() -> Outcome {
    let r = decompose::run_example();
    let pass = r.samples == 600 && r.bit_exact == r.samples && r.max_class_mean_residual <= 1e-6 && r.seconds < 10.0 && r.unknown_label_is_retrieval_error;
    Outcome {
        id: 1,
        pass,
        detail: format!(
            "{}/{} bit-exact, class-mean residual {:.2e}, {:.3} s, unknown label -> retrieval error: {}",
            r.bit_exact, r.samples, r.max_class_mean_residual, r.seconds, r.unknown_label_is_retrieval_error
        ),
    }
}

fn c2() -> Outcome {
    let r = diffusion_math::run_example();
    let pass = r.one_step_round_trip < 1e-12 && r.mc_mean_z < 3.0 && r.mc_var_z < 3.0 && r.oracle_loss < 1e-20 && r.oracle_reconstruction <= 1e-4 && r.seconds < 60.0;
    Outcome {
        id: 2,
        pass,
        detail: format!(
            "K=1 round trip {:.1e}, Monte Carlo mean {:.2} SE / var {:.2} SE, oracle loss {:.1e}, 50-step reconstruction {:.1e}, {:.1} s",
            r.one_step_round_trip, r.mc_mean_z, r.mc_var_z, r.oracle_loss, r.oracle_reconstruction, r.seconds
        ),
    }
}

fn c3() -> Outcome {
    let r = gradient_check::run_example();
    let worst = r.checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    let pass = r.checks.iter().all(|c| c.checked > 0) && worst < 1e-4 && r.seconds < 120.0;
    let names: Vec<String> = r.checks.iter().map(|c| format!("{} {:.1e}", c.name, c.max_rel_error)).collect();
    Outcome { id: 3, pass, detail: format!("{}; {:.1} s", names.join(", "), r.seconds) }
}

fn c4() -> Outcome {
    let r = contact_maps::run_example();
    let pass = r.max_brute_force_gap <= 1e-9 && (r.at_sigma - 0.606531).abs() <= 1e-6 && r.instances == 1000 && r.rule_agreement == 1000;
    Outcome {
        id: 4,
        pass,
        detail: format!("brute-force gap {:.1e}, d=sigma -> {:.7}, rules agree on {}/{}", r.max_brute_force_gap, r.at_sigma, r.rule_agreement, r.instances),
    }
}

fn c5() -> Outcome {
    let r = contact_predictor::run_example();
    let pass = r.test_auc >= 0.9 && r.train_seconds <= 900.0 && r.untrained_is_missing_dependency;
    Outcome { id: 5, pass, detail: format!("test ROC-AUC {:.4}, trained in {:.1} s", r.test_auc, r.train_seconds) }
}

fn c6() -> Outcome {
    let r = interaction_optimizer::run_example();
    let pass = r.instances == 50 && r.median_reduction >= 0.9 && r.increases == 0;
    Outcome { id: 6, pass, detail: format!("{} grasps, median L_I reduction {:.1}%, increases {}", r.instances, 100.0 * r.median_reduction, r.increases) }
}

fn c7(root: &std::path::Path) -> Outcome {
    let r = end_to_end::run_with(&PipelineConfig::default(), root);
    let ratio = r.fid / r.noise_fid;
    let pass = r.r_precision_top1 >= 0.8 && ratio <= 0.2 && r.c_prec >= 0.7 && r.seconds <= 3600.0;
    Outcome {
        id: 7,
        pass,
        detail: format!(
            "R-Precision top-1 {:.3}, FID {:.4} = {:.3} x noise FID {:.4}, C_prec {:.3}, {:.0} s",
            r.r_precision_top1, r.fid, ratio, r.noise_fid, r.c_prec, r.seconds
        ),
    }
}

fn c8(root: &std::path::Path) -> Outcome {
    let r = ablations::run_with(&PipelineConfig::default(), root);
    let pass = r.comparisons.iter().all(|c| c.holds);
    let parts: Vec<String> = r
        .comparisons
        .iter()
        .map(|c| format!("{} {} on {} ({})", if c.holds { "ok" } else { "NO" }, c.claim, c.metric, c.diff))
        .collect();
    Outcome { id: 8, pass, detail: format!("{} repeats; {}", r.eval.variants[0].summary["fid"].repeats, parts.join("; ")) }
}

fn c9() -> Outcome {
    let r = metrics_selftest::run_example();
    let rp_ok = r.r_precision_random.iter().all(|(o, p, se)| (o - p).abs() <= 3.0 * se);
    let trivial_ok = r.trivial.iter().all(|t| t.1);
    let pass = r.fid_rel_error <= 0.05 && rp_ok && trivial_ok;
    let rp: Vec<String> = r.r_precision_random.iter().map(|(o, p, _)| format!("{o:.4}/{p:.4}")).collect();
    Outcome {
        id: 9,
        pass,
        detail: format!(
            "Gaussian FID off by {:.2}%, random R-Precision {}, trivial cases {}/{}",
            100.0 * r.fid_rel_error,
            rp.join(" "),
            r.trivial.iter().filter(|t| t.1).count(),
            r.trivial.len()
        ),
    }
}

#[test]
fn acceptance() {
    let start = Instant::now();
    let dir = tempfile::tempdir().expect("tempdir");
    let mut outcomes = Vec::new();
    for f in [c1, c2, c3, c4, c5, c6, c9] {
        let o = f();
        emit(&o);
        outcomes.push(o);
    }
    for f in [c7, c8] {
        let o = f(dir.path());
        emit(&o);
        outcomes.push(o);
    }
    outcomes.sort_by_key(|o| o.id);
    let failing: Vec<String> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id.to_string()).collect();
    let summary = format!(
        "acceptance: {}/{} criteria pass{} ({:.0} s)\n",
        outcomes.len() - failing.len(),
        outcomes.len(),
        if failing.is_empty() { String::new() } else { format!("; failing: {}", failing.join(", ")) },
        start.elapsed().as_secs_f64()
    );
    let _ = std::io::stderr().write_all(summary.as_bytes());
    assert_eq!(outcomes.len(), 9);
}
