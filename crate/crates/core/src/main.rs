use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hoisynth::error::{Error, Result};
use hoisynth::hoi_core::{HOISample, KinematicBody};
use hoisynth::pipeline::{
    evaluate, gen_data, plot_logs, synthesis_archive, trace_csv, train_direct_body, train_extractor, train_object_no_contact, train_stage, write_obj_sequence,
    AblationFlags, ExportFormat, Pipeline, PipelineConfig, Request, Stage, SynthesisOutput, Workspace,
};

#[derive(Parser)]
#[command(name = "hoisynth", version, about = "Text-conditioned human-object interaction synthesis")]
struct Cli {
    /// TOML configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Workspace directory.
    #[arg(long, default_value = "workspace")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic interaction dataset.
    GenData,
    /// Train one stage, or the extra models used by evaluation and ablations.
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4), required_unless_present_any = ["extractor", "ablation_models"])]
        stage: Option<u8>,
        /// Train the evaluation feature extractor.
        #[arg(long, conflicts_with_all = ["stage", "ablation_models"])]
        extractor: bool,
        /// Train the direct-body and contact-free object denoisers.
        #[arg(long, conflicts_with = "stage")]
        ablation_models: bool,
    },
    /// Synthesize one interaction and store it under `samples/`.
    Sample {
        #[arg(long)]
        text: String,
        /// Object class name, e.g. `box`.
        #[arg(long)]
        object: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score the full pipeline on the test split.
    Evaluate,
    /// Score ablation variants next to the full pipeline.
    Ablate {
        /// Comma-separated flags for one variant; repeat for more variants.
        #[arg(long, required = true)]
        flags: Vec<String>,
    },
    /// Synthesize one interaction and write it in the given format.
    Export {
        #[arg(long, value_parser = ["container", "obj-sequence", "csv-trace"])]
        format: String,
        #[arg(long)]
        text: String,
        #[arg(long)]
        object: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Plot training loss curves to `reports/losses.svg`.
    Plot,
}

fn find_object<'a>(samples: &'a [HOISample], names: &[String], object: &str) -> Result<&'a HOISample> {
    let class = names.iter().position(|n| n == object).ok_or_else(|| Error::Argument(format!("unknown object `{object}`; known: {}", names.join(", "))))?;
    samples
        .iter()
        .find(|s| s.geometry.class_id == class)
        .ok_or_else(|| Error::Data(format!("no sample of object `{object}` in the dataset")))
}

fn synthesize_one(cfg: &PipelineConfig, ws: &Workspace, text: &str, object: &str, seed: u64) -> Result<(Pipeline, HOISample, SynthesisOutput)> {
    let ds = ws.load_dataset()?;
    let pipe = Pipeline::load(cfg, ws)?;
    let tokens = pipe.tokens_for(text)?;
    let sample = find_object(&ds.samples, &ds.meta.object_names, object)?.clone();
    let req = Request { tokens, geometry: &sample.geometry, truth_contact: None };
    let out = pipe.synthesize(&[req], seed, &AblationFlags::default())?;
    Ok((pipe, sample, out))
}

fn slug(text: &str, object: &str, seed: u64) -> String {
    let t: String = text.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '-' }).collect();
    format!("{t}_{object}_{seed}")
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let ws = Workspace::new(&cli.out);
    match cli.command {
        Command::GenData => {
            let ds = gen_data(&cfg, &ws)?;
            println!("wrote {} samples to {}", ds.samples.len(), ws.data().display());
        }
        Command::Train { stage, extractor, ablation_models } => {
            let ds = ws.load_dataset()?;
            let logs = if extractor {
                vec![train_extractor(&cfg, &ds, &ws)?]
            } else if ablation_models {
                ws.load_canonical()?;
                let logs = vec![train_direct_body(&cfg, &ds, &ws)?, train_object_no_contact(&cfg, &ds, &ws)?];
                for l in &logs {
                    l.write(&ws)?;
                }
                logs
            } else {
                let stage = Stage::from_number(stage.expect("clap requires a stage"))?;
                vec![train_stage(stage, &cfg, &ds, &ws)?]
            };
            for l in logs {
                let (a, b) = l.endpoints();
                println!("{}: {} steps, loss {a:.4} -> {b:.4}", l.name, l.losses.len());
            }
        }
        Command::Sample { text, object, seed } => {
            let (_, _, out) = synthesize_one(&cfg, &ws, &text, &object, seed)?;
            let dir = ws.root.join("samples").join(slug(&text, &object, seed));
            synthesis_archive(&out.samples, &[text])?.write(&dir)?;
            std::fs::write(dir.join("trace.csv"), trace_csv(&out.trace))?;
            println!("wrote {}", dir.display());
        }
        Command::Evaluate => {
            let report = evaluate(&cfg, &ws, &[AblationFlags::default()], "evaluate")?;
            print!("{}", report.to_text());
        }
        Command::Ablate { flags } => {
            let mut variants = vec![AblationFlags::default()];
            for f in &flags {
                let v = AblationFlags::parse(f)?;
                if !variants.contains(&v) {
                    variants.push(v);
                }
            }
            let report = evaluate(&cfg, &ws, &variants, "ablate")?;
            print!("{}", report.to_text());
        }
        Command::Export { format, text, object, seed } => {
            let format = ExportFormat::parse(&format)?;
            let (pipe, sample, out) = synthesize_one(&cfg, &ws, &text, &object, seed)?;
            let dir = ws.root.join("exports").join(slug(&text, &object, seed));
            std::fs::create_dir_all(&dir)?;
            match format {
                ExportFormat::Container => synthesis_archive(&out.samples, &[text])?.write(&dir.join("container"))?,
                ExportFormat::ObjSequence => {
                    let skel: &KinematicBody = &pipe.skel;
                    write_obj_sequence(&out.samples[0], &sample.geometry, skel, &dir.join("obj"))?;
                }
                ExportFormat::CsvTrace => std::fs::write(dir.join("trace.csv"), trace_csv(&out.trace))?,
            }
            println!("wrote {}", dir.display());
        }
        Command::Plot => println!("wrote {}", plot_logs(&ws)?.display()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
