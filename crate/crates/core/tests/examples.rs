#[allow(dead_code)]
mod dataset_io {
    include!("../examples/dataset_io.rs");
}
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
#[allow(dead_code)]
mod configuration {
    include!("../examples/configuration.rs");
}

#[test]
fn dataset_round_trips() {
    let r = dataset_io::run_example();
    assert!(r.round_trip_exact);
    assert_eq!(r.splits.iter().sum::<usize>(), r.samples);
    assert!(r.max_window_distance < 1e-6);
}

#[test]
fn decomposition_recomposes_exactly() {
    let r = decompose::run_example();
    assert_eq!(r.bit_exact, r.samples);
    assert!(r.max_class_mean_residual <= 1e-6);
    assert!(r.unknown_label_is_retrieval_error);
}

#[test]
fn diffusion_oracles() {
    let r = diffusion_math::run_example();
    assert!(r.one_step_round_trip < 1e-12);
    assert!(r.mc_mean_z < 3.0 && r.mc_var_z < 3.0);
    assert!(r.oracle_loss < 1e-20);
    assert!(r.oracle_reconstruction <= 1e-4);
}

#[test]
fn gradients_match_finite_differences() {
    let r = gradient_check::run_example();
    assert_eq!(r.checks.len(), 4);
    for c in &r.checks {
        assert!(c.checked > 0 && c.max_rel_error < 1e-4, "{}: {}", c.name, c.max_rel_error);
    }
}

#[test]
fn contact_map_geometry() {
    let r = contact_maps::run_example();
    assert!(r.max_brute_force_gap <= 1e-9);
    assert!((r.at_sigma - 0.606531).abs() <= 1e-6);
    assert_eq!(r.rule_agreement, r.instances);
    assert!(r.mean_contact_fraction > 0.0);
}

#[test]
fn contact_predictor_separates_contact_points() {
    let r = contact_predictor::run_example();
    assert!(r.untrained_is_missing_dependency);
    assert!(r.loss_end < r.loss_start);
    assert!(r.test_auc > 0.5);
    assert!(r.maps_written > 0);
}

#[test]
fn optimizer_pulls_grasps_back() {
    let r = interaction_optimizer::run_example();
    assert_eq!(r.increases, 0);
    assert!(r.median_reduction >= 0.9);
    assert!(r.trace.diagnostics.is_empty());
}

#[test]
fn metrics_pass_self_tests() {
    let r = metrics_selftest::run_example();
    assert!(r.fid_rel_error < 0.05);
    for (o, p, se) in &r.r_precision_random {
        assert!((o - p).abs() <= 4.0 * se, "{o} vs {p}");
    }
    for (name, ok) in &r.trivial {
        assert!(ok, "{name}");
    }
}

#[test]
fn tiny_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let r = end_to_end::run_with(&end_to_end::tiny_config(), dir.path());
    assert!(r.fid.is_finite() && r.noise_fid.is_finite());
    assert!((0.0..=1.0).contains(&r.r_precision_top1));
    assert!((0.0..=1.0).contains(&r.c_prec));
    assert!(r.exported.iter().all(|p| p.exists()));
    assert!(r.exported.len() > 2);
}

#[test]
fn tiny_ablation_run_reports_every_variant() {
    let r = ablations::run_example();
    assert_eq!(r.eval.variants.len(), ablations::VARIANTS.len());
    assert_eq!(r.comparisons.len(), 7);
    assert!(r.comparisons.iter().all(|c| c.diff.mean.is_finite()));
}

#[test]
fn configuration_rules() {
    let r = configuration::run_example();
    assert!(r.round_trips);
    assert!(r.rejected.iter().all(|(_, code)| *code == 2));
}
