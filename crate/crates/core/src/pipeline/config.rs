use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contact::ContactPredictorConfig;
use crate::diffusion::{DenoiserConfig, NoiseSchedule, SamplerKind};
use crate::error::{Error, Result};
use crate::interactor::{InteractorConfig, Terms};
use crate::metrics::ExtractorConfig;
use crate::synthkit::ScenarioSpec;

/// Optimizer settings and budget for one training stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self { steps: 1500, batch: 32, lr: 1e-3 }
    }
}

impl StageConfig {
    /// Published settings: Adam at 1e-4 with batch 128 (64 for the contact
    /// predictor).
    pub fn published(batch: usize) -> Self {
        Self { steps: 6000, batch, lr: 1e-4 }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.batch == 0 || !(self.lr > 0.0) {
            return Err(Error::Config(format!("{name}: batch must be positive and lr > 0")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { beta_start: 1e-4, beta_end: 0.0182 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub repeats: usize,
    /// Pairs per text group for multimodality.
    pub mmodality_subset: usize,
    pub diversity_subset: usize,
    pub top_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { repeats: 20, mmodality_subset: 5, diversity_subset: 32, top_k: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub data: ScenarioSpec,
    pub denoiser: DenoiserConfig,
    pub schedule: ScheduleConfig,
    pub contact: ContactPredictorConfig,
    pub interactor: InteractorConfig,
    pub extractor: ExtractorConfig,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub stage3: StageConfig,
    pub stage4: StageConfig,
    /// Stage IV trains on ground-truth bodies and contact labels.
    pub teacher_forcing: bool,
    pub sampler: SamplerKind,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: ScenarioSpec::default(),
            denoiser: DenoiserConfig::default(),
            schedule: ScheduleConfig::default(),
            contact: ContactPredictorConfig::default(),
            interactor: InteractorConfig::default(),
            extractor: ExtractorConfig::default(),
            stage1: StageConfig { steps: 600, ..StageConfig::default() },
            stage2: StageConfig::default(),
            stage3: StageConfig { steps: 400, batch: 16, ..StageConfig::default() },
            stage4: StageConfig { steps: 3000, ..StageConfig::default() },
            teacher_forcing: true,
            sampler: SamplerKind::Deterministic,
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Published model sizes and optimizer settings.
    pub fn published() -> Self {
        Self {
            denoiser: DenoiserConfig::published(),
            contact: ContactPredictorConfig::published(),
            stage1: StageConfig::published(128),
            stage2: StageConfig::published(128),
            stage3: StageConfig { steps: 3000, ..StageConfig::published(64) },
            stage4: StageConfig::published(128),
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.denoiser.validate()?;
        self.interactor.validate()?;
        self.schedule()?;
        for (name, s) in [("stage1", &self.stage1), ("stage2", &self.stage2), ("stage3", &self.stage3), ("stage4", &self.stage4)] {
            s.validate(name)?;
        }
        if self.eval.repeats == 0 || self.eval.top_k == 0 {
            return Err(Error::Config("evaluation needs at least one repeat and top_k ≥ 1".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.denoiser.train_steps, self.schedule.beta_start, self.schedule.beta_end)
    }
}

/// Pipeline variant switches for ablation runs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationFlags {
    /// One denoiser generates the whole body; no canonical/residual split.
    pub direct_body: bool,
    /// Use the retrieved canonical motion instead of sampling it.
    pub real_canonical: bool,
    /// Condition object diffusion on ground-truth contact labels.
    pub real_contact: bool,
    /// Object diffusion without a contact condition.
    pub no_contact: bool,
    pub optimizer: Terms,
}

impl AblationFlags {
    /// Parses a comma-separated list such as `direct-body,optimizer=none`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut f = Self::default();
        let mut optimizer_set = false;
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "direct-body" => f.direct_body = true,
                "real-canonical" => f.real_canonical = true,
                "real-contact" => f.real_contact = true,
                "no-contact" => f.no_contact = true,
                other => {
                    let value = other.strip_prefix("optimizer=").ok_or_else(|| Error::Config(format!("unknown ablation flag `{other}`")))?;
                    let t = Terms::parse(value).ok_or_else(|| Error::Config(format!("unknown optimizer mode `{value}`")))?;
                    if optimizer_set && t != f.optimizer {
                        return Err(Error::Config("optimizer mode given twice with different values".into()));
                    }
                    f.optimizer = t;
                    optimizer_set = true;
                }
            }
        }
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.direct_body && self.real_canonical {
            return Err(Error::Config("direct-body has no canonical motion to substitute".into()));
        }
        if self.no_contact && self.real_contact {
            return Err(Error::Config("no-contact and real-contact contradict each other".into()));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.direct_body {
            parts.push("direct-body".to_string());
        }
        if self.real_canonical {
            parts.push("real-canonical".to_string());
        }
        if self.real_contact {
            parts.push("real-contact".to_string());
        }
        if self.no_contact {
            parts.push("no-contact".to_string());
        }
        if self.optimizer != Terms::Both {
            parts.push(format!("optimizer={}", serde_json::to_value(self.optimizer).unwrap().as_str().unwrap()));
        }
        if parts.is_empty() {
            "full".into()
        } else {
            parts.join(",")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert!(matches!(PipelineConfig::from_toml("bogus = 1"), Err(Error::Config(_))));
        let partial = PipelineConfig::from_toml("seed = 9\n[stage1]\nsteps = 5\n").unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.stage1.batch, StageConfig::default().batch);
    }

    #[test]
    fn flag_parsing() {
        assert_eq!(AblationFlags::parse("").unwrap(), AblationFlags::default());
        assert_eq!(AblationFlags::parse("optimizer=both").unwrap(), AblationFlags::default());
        let f = AblationFlags::parse("direct-body, optimizer=in-contact").unwrap();
        assert!(f.direct_body);
        assert_eq!(f.optimizer, Terms::InContact);
        assert_eq!(f.label(), "direct-body,optimizer=in-contact");
        for bad in ["direct-body,real-canonical", "no-contact,real-contact", "optimizer=none,optimizer=both", "fast"] {
            assert!(matches!(AblationFlags::parse(bad), Err(Error::Config(_))), "{bad}");
        }
    }
}
