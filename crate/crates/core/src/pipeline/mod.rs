//! Four-stage training, synthesis, evaluation and ablation runs.

pub mod config;
pub mod evaluate;
pub mod export;
pub mod synth;
pub mod train;

pub use config::{AblationFlags, EvalConfig, PipelineConfig, ScheduleConfig, StageConfig};
pub use evaluate::{evaluate, EvalReport, Evaluator, VariantReport};
pub use export::{plot_logs, synthesis_archive, trace_csv, write_obj_sequence, ExportFormat};
pub use synth::{BodySynthesis, Pipeline, Request, Synthesis, SynthesisOutput};
pub use train::{gen_data, train_contact_predictor, train_direct_body, train_extractor, train_object_no_contact, train_stage, Stage, TrainLog, Workspace};
