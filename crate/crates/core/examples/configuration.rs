// Pipeline configuration as TOML, ablation flag parsing, and the exit codes
// the command-line tool maps errors to.

use hoisynth::pipeline::{AblationFlags, PipelineConfig};

pub struct ConfigurationReport {
    pub round_trips: bool,
    /// (input, exit code of the error it produced)
    pub rejected: Vec<(String, u8)>,
}

pub fn run_example() -> ConfigurationReport {
    let cfg = PipelineConfig::default();
    let text = cfg.to_toml();
    let round_trips = PipelineConfig::from_toml(&text).map(|c| c == cfg).unwrap_or(false);
    println!("default configuration:\n{}", text.lines().take(12).collect::<Vec<_>>().join("\n"));

    let partial = PipelineConfig::from_toml("seed = 3\n[stage4]\nsteps = 100\n").unwrap();
    println!("partial file: seed {}, stage 4 runs {} steps at batch {}", partial.seed, partial.stage4.steps, partial.stage4.batch);

    let flags = AblationFlags::parse("direct-body,optimizer=temporal").unwrap();
    println!("parsed flags: {}", flags.label());

    let mut rejected = Vec::new();
    for bad in ["no-contact,real-contact", "direct-body,real-canonical", "optimizer=none,optimizer=both", "optimizer=sometimes"] {
        let e = AblationFlags::parse(bad).unwrap_err();
        println!("`{bad}` -> exit {}: {e}", e.exit_code());
        rejected.push((bad.to_string(), e.exit_code()));
    }
    for bad in ["[denoiser]\nheads = 3\n", "unknown_key = 1\n", "[eval]\nrepeats = 0\n"] {
        let e = PipelineConfig::from_toml(bad).unwrap_err();
        println!("config {:?} -> exit {}: {e}", bad.trim(), e.exit_code());
        rejected.push((bad.to_string(), e.exit_code()));
    }
    ConfigurationReport { round_trips, rejected }
}

#[allow(dead_code)]
fn main() {
    run_example();
}
