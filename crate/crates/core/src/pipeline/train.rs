use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contact::ContactPredictor;
use crate::container::{Archive, LoadError, NamedArray};
use crate::decouple::CanonicalActionSet;
use crate::diffusion::encoders::{body_feature_width, body_features};
use crate::diffusion::{training_loss, Conditions, Denoiser, DenoiserSpec, Normalizer, Role};
use crate::error::{Error, Result};
use crate::hoi_core::{load_dataset, save_dataset, Dataset, HOISample, KinematicBody, Mat, Split};
use crate::metrics::{hoi_frame_width, FeatureExtractor, HoiView};
use crate::nn::{Adam, AdamConfig, Graph};
use crate::synthkit::generate_dataset;

use super::config::{PipelineConfig, StageConfig};
use super::synth::{Pipeline, Request};

/// Directory layout of one pipeline run.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn canonical(&self) -> PathBuf {
        self.root.join("canonical")
    }

    pub fn contact(&self) -> PathBuf {
        self.root.join("contact")
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(name)
    }

    pub fn logs(&self) -> PathBuf {
        self.root.join("logs")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let dir = self.data();
        if !dir.join("manifest.json").exists() {
            return Err(Error::MissingDependency(format!("no dataset at {}; run gen-data first", dir.display())));
        }
        Ok(load_dataset(&dir)?)
    }

    pub fn load_canonical(&self) -> Result<CanonicalActionSet> {
        let dir = self.canonical();
        if !dir.join("manifest.json").exists() {
            return Err(Error::MissingDependency(format!("no canonical set at {}; run train --stage 1 first", dir.display())));
        }
        Ok(CanonicalActionSet::read_from(&Archive::read(&dir)?)?)
    }

    pub fn require(&self, name: &str, stage: &str) -> Result<PathBuf> {
        let dir = self.checkpoint(name);
        if !dir.join("manifest.json").exists() {
            return Err(Error::MissingDependency(format!("checkpoint `{name}` is missing; train {stage} first")));
        }
        Ok(dir)
    }
}

/// Generates the synthetic dataset into the workspace.
pub fn gen_data(cfg: &PipelineConfig, ws: &Workspace) -> Result<Dataset> {
    let (_, ds) = generate_dataset(&cfg.data)?;
    save_dataset(&ds, &ws.data())?;
    Ok(ds)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// Action diffusion on canonical motions.
    Action,
    /// Style diffusion on residuals.
    Style,
    /// Contact-part predictor.
    Contact,
    /// Object motion diffusion.
    Object,
}

impl Stage {
    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Stage::Action),
            2 => Ok(Stage::Style),
            3 => Ok(Stage::Contact),
            4 => Ok(Stage::Object),
            _ => Err(Error::Config(format!("stage must be 1..=4, got {n}"))),
        }
    }

    pub fn number(self) -> u8 {
        self as u8 + 1
    }
}

/// Loss per step, written as `step,loss` CSV.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub name: String,
    pub losses: Vec<f64>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            let _ = writeln!(s, "{i},{l}");
        }
        s
    }

    pub fn write(&self, ws: &Workspace) -> Result<()> {
        std::fs::create_dir_all(ws.logs())?;
        std::fs::write(ws.logs().join(format!("{}.csv", self.name)), self.to_csv())?;
        Ok(())
    }

    /// Mean of the first and last tenth of the curve.
    pub fn endpoints(&self) -> (f64, f64) {
        let n = self.losses.len();
        let w = (n / 10).max(1).min(n.max(1));
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
        (mean(&self.losses[..w.min(n)]), mean(&self.losses[n.saturating_sub(w)..]))
    }
}

pub(crate) fn fan_out(master: u64, salt: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(index);
    rand::Rng::random(&mut rng)
}

pub(crate) const SALT_ALPHA: u64 = 1;
pub(crate) const SALT_BETA: u64 = 2;
pub(crate) const SALT_GAMMA: u64 = 3;
pub(crate) const SALT_DIRECT: u64 = 4;
const SALT_INIT: u64 = 10;
const SALT_BATCH: u64 = 11;

/// Minibatch Adam on the noise-prediction loss.
pub fn train_denoiser(den: &mut Denoiser, x0: &[Mat], cond: &Conditions, stage: &StageConfig, seed: u64) -> Result<Vec<f64>> {
    if cond.batch() != Some(x0.len()) || x0.is_empty() {
        return Err(Error::Structural("training targets and conditions differ in count".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = Adam::new(AdamConfig { lr: stage.lr, ..AdamConfig::default() }, &den.store);
    let batch = stage.batch.min(x0.len());
    let mut losses = Vec::with_capacity(stage.steps);
    for _ in 0..stage.steps {
        let idx = sample_indices(&mut rng, x0.len(), batch).into_vec();
        let xb: Vec<Mat> = idx.iter().map(|&i| x0[i].clone()).collect();
        let (loss, grads) = training_loss(den, &xb, &cond.select(&idx), &mut rng)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("training loss became {loss}")));
        }
        losses.push(loss);
        opt.step(&mut den.store, &grads);
    }
    Ok(losses)
}

fn train_split(ds: &Dataset) -> Vec<&HOISample> {
    ds.split(Split::Train).collect()
}

fn tokens_of(samples: &[&HOISample]) -> Vec<Vec<u32>> {
    samples.iter().map(|s| s.text.tokens.clone()).collect()
}

fn points_of(samples: &[&HOISample]) -> Vec<Mat> {
    samples.iter().map(|s| s.geometry.points.clone()).collect()
}

pub(crate) fn labels_of(ds: &Dataset, skel: &KinematicBody) -> Result<Vec<Vec<bool>>> {
    match &ds.contact {
        Some(c) => Ok(c.clone()),
        None => ds.samples.iter().map(|s| crate::synthkit::sample_contact(s, skel)).collect(),
    }
}

fn new_denoiser(cfg: &PipelineConfig, ds: &Dataset, role: Role, x_dim: usize, contact: bool, salt: u64) -> Result<Denoiser> {
    let skel = KinematicBody::smpl_lite();
    let spec = DenoiserSpec {
        role,
        x_dim,
        n_frames: ds.meta.n_frames,
        vocab: ds.meta.vocabulary.len(),
        body_features: body_feature_width(&skel),
        points: ds.meta.points,
        contact,
    };
    Denoiser::new(cfg.denoiser.clone(), spec, cfg.schedule()?, fan_out(cfg.seed, SALT_INIT, salt))
}

fn fit_and_train(den: &mut Denoiser, x0: &[Mat], cond: &Conditions, stage: &StageConfig, cfg: &PipelineConfig, salt: u64) -> Result<Vec<f64>> {
    den.norm = Normalizer::fit(&x0.iter().collect::<Vec<_>>(), cfg.denoiser.std_floor);
    train_denoiser(den, x0, cond, stage, fan_out(cfg.seed, SALT_BATCH, salt))
}

/// Builds the canonical set and trains the action denoiser on it.
pub fn train_action(cfg: &PipelineConfig, ds: &Dataset, ws: &Workspace) -> Result<TrainLog> {
    let train = train_split(ds);
    let set = CanonicalActionSet::build(train.iter().copied(), &ds.meta.action_names)?;
    set.to_archive().write(&ws.canonical())?;
    let x0 = train.iter().map(|s| set.retrieve(s.action()).cloned()).collect::<Result<Vec<_>>>()?;
    let cond = Conditions { tokens: Some(tokens_of(&train)), ..Conditions::default() };
    let mut den = new_denoiser(cfg, ds, Role::Alpha, ds.meta.layout.width(), false, SALT_ALPHA)?;
    let losses = fit_and_train(&mut den, &x0, &cond, &cfg.stage1, cfg, SALT_ALPHA)?;
    den.save(&ws.checkpoint("alpha"))?;
    Ok(TrainLog { name: "stage1".into(), losses })
}

/// Trains the style denoiser on residuals against the stored canonical set.
pub fn train_style(cfg: &PipelineConfig, ds: &Dataset, ws: &Workspace) -> Result<TrainLog> {
    let set = ws.load_canonical()?;
    let train = train_split(ds);
    let x0 = train.iter().map(|s| set.residual(&s.body, s.action()).map(|r| r.frames)).collect::<Result<Vec<_>>>()?;
    let cond = Conditions { tokens: Some(tokens_of(&train)), points: Some(points_of(&train)), ..Conditions::default() };
    let mut den = new_denoiser(cfg, ds, Role::Beta, ds.meta.layout.width(), false, SALT_BETA)?;
    let losses = fit_and_train(&mut den, &x0, &cond, &cfg.stage2, cfg, SALT_BETA)?;
    den.save(&ws.checkpoint("beta"))?;
    Ok(TrainLog { name: "stage2".into(), losses })
}

/// Trains one denoiser on whole bodies, for the no-decoupling ablation.
pub fn train_direct_body(cfg: &PipelineConfig, ds: &Dataset, ws: &Workspace) -> Result<TrainLog> {
    let train = train_split(ds);
    let x0: Vec<Mat> = train.iter().map(|s| s.body.frames.clone()).collect();
    let cond = Conditions { tokens: Some(tokens_of(&train)), points: Some(points_of(&train)), ..Conditions::default() };
    let mut den = new_denoiser(cfg, ds, Role::Beta, ds.meta.layout.width(), false, SALT_DIRECT)?;
    let losses = fit_and_train(&mut den, &x0, &cond, &cfg.stage2, cfg, SALT_DIRECT)?;
    den.save(&ws.checkpoint("direct"))?;
    Ok(TrainLog { name: "direct-body".into(), losses })
}

/// Predicted contact maps of every sample, persisted under `contact/`.
pub fn write_contact_maps(pred: &ContactPredictor, ds: &Dataset, dir: &Path) -> Result<()> {
    let tokens: Vec<Vec<u32>> = ds.samples.iter().map(|s| s.text.tokens.clone()).collect();
    let clouds: Vec<&Mat> = ds.samples.iter().map(|s| &s.geometry.points).collect();
    let mut maps = Vec::with_capacity(ds.samples.len());
    for (t, c) in tokens.chunks(32).zip(clouds.chunks(32)) {
        maps.extend(pred.predict(t, c)?);
    }
    let p = ds.meta.points;
    let mut a = Archive::new("contact-maps", serde_json::json!({ "points": p }));
    let ids: Vec<i32> = ds.samples.iter().map(|s| s.sample_id as i32).collect();
    a.push("maps", NamedArray::i32("maps/sample_id", vec![ids.len()], ids));
    a.push("maps", NamedArray::f32("maps/probs", vec![maps.len(), p], maps.iter().flatten().map(|&v| v as f32).collect()));
    a.write(dir)?;
    Ok(())
}

/// Reads maps written by [`write_contact_maps`] as (sample id, probabilities).
pub fn read_contact_maps(dir: &Path) -> Result<Vec<(u64, Vec<f64>)>> {
    let a = Archive::read(dir)?;
    let ids = a.array("maps", "maps/sample_id")?.as_i32()?.to_vec();
    let probs = a.array("maps", "maps/probs")?;
    let p = *probs.shape.get(1).ok_or_else(|| LoadError::Content { array: "maps/probs".into(), reason: "expected a matrix".into() })?;
    let flat = probs.as_f64();
    Ok(ids.iter().enumerate().map(|(i, &id)| (id as u64, flat[i * p..(i + 1) * p].to_vec())).collect())
}

pub fn train_contact_predictor(cfg: &PipelineConfig, ds: &Dataset, ws: &Workspace) -> Result<TrainLog> {
    let skel = KinematicBody::smpl_lite();
    let labels = labels_of(ds, &skel)?;
    let train_idx = ds.split_indices(Split::Train);
    let mut pred = ContactPredictor::new(cfg.contact.clone(), ds.meta.vocabulary.len(), fan_out(cfg.seed, SALT_INIT, 5))?;
    let mut rng = ChaCha8Rng::seed_from_u64(fan_out(cfg.seed, SALT_BATCH, 5));
    let mut opt = Adam::new(AdamConfig { lr: cfg.stage3.lr, ..AdamConfig::default() }, &pred.store);
    let batch = cfg.stage3.batch.min(train_idx.len());
    let mut losses = Vec::with_capacity(cfg.stage3.steps);
    for _ in 0..cfg.stage3.steps {
        let idx: Vec<usize> = sample_indices(&mut rng, train_idx.len(), batch).into_iter().map(|k| train_idx[k]).collect();
        let tokens: Vec<Vec<u32>> = idx.iter().map(|&i| ds.samples[i].text.tokens.clone()).collect();
        let clouds: Vec<&Mat> = idx.iter().map(|&i| &ds.samples[i].geometry.points).collect();
        let lab: Vec<Vec<bool>> = idx.iter().map(|&i| labels[i].clone()).collect();
        let mut g = Graph::new(&pred.store);
        let loss = pred.loss(&mut g, &tokens, &clouds, &lab)?;
        let mut grads = g.tape.backward(loss);
        losses.push(g.tape.scalar(loss));
        let pg = g.param_grads(&mut grads);
        opt.step(&mut pred.store, &pg);
    }
    pred.trained = true;
    pred.save(&ws.checkpoint("contact"))?;
    write_contact_maps(&pred, ds, &ws.contact())?;
    Ok(TrainLog { name: "stage3".into(), losses })
}

/// Object-motion conditions for the training split: ground truth under
/// teacher forcing, otherwise synthesized by the upstream stages.
fn object_conditions(cfg: &PipelineConfig, ds: &Dataset, ws: &Workspace, contact: bool) -> Result<Conditions> {
    let skel = KinematicBody::smpl_lite();
    let train = train_split(ds);
    if cfg.teacher_forcing {
        let labels = labels_of(ds, &skel)?;
        let by_id: std::collections::HashMap<u64, &Vec<bool>> = ds.samples.iter().map(|s| s.sample_id).zip(&labels).collect();
        let body = train.iter().map(|s| body_features(&s.body, &skel)).collect::<Result<Vec<_>>>()?;
        let maps = contact.then(|| train.iter().map(|s| by_id[&s.sample_id].iter().map(|&c| f64::from(u8::from(c))).collect()).collect());
        let points = contact.then(|| points_of(&train));
        return Ok(Conditions { body: Some(body), contact: maps, points, ..Conditions::default() });
    }
    let pipe = Pipeline::load_body_and_contact(cfg, ws)?;
    let requests: Vec<Request> = train.iter().map(|s| Request { tokens: s.text.tokens.clone(), geometry: &s.geometry, truth_contact: None }).collect();
    let bodies = pipe.synthesize_bodies(&requests, cfg.seed, &Default::default())?;
    let body = bodies.iter().map(|b| body_features(&b.body, &skel)).collect::<Result<Vec<_>>>()?;
    let maps = if contact { Some(pipe.predict_contact(&requests)?) } else { None };
    let points = contact.then(|| points_of(&train));
    Ok(Conditions { body: Some(body), contact: maps, points, ..Conditions::default() })
}

fn train_object_variant(cfg: &PipelineConfig, ds: &Dataset, ws: &Workspace, contact: bool) -> Result<TrainLog> {
    let train = train_split(ds);
    let x0: Vec<Mat> = train.iter().map(|s| s.object_motion.frames.clone()).collect();
    let cond = object_conditions(cfg, ds, ws, contact)?;
    let salt = if contact { SALT_GAMMA } else { SALT_GAMMA + 100 };
    let mut den = new_denoiser(cfg, ds, Role::Gamma, 6, contact, salt)?;
    let losses = fit_and_train(&mut den, &x0, &cond, &cfg.stage4, cfg, salt)?;
    let (name, log) = if contact { ("gamma", "stage4") } else { ("gamma-no-contact", "no-contact") };
    den.save(&ws.checkpoint(name))?;
    Ok(TrainLog { name: log.into(), losses })
}

pub fn train_object(cfg: &PipelineConfig, ds: &Dataset, ws: &Workspace) -> Result<TrainLog> {
    train_object_variant(cfg, ds, ws, true)
}

/// Object denoiser without the contact condition, for ablations.
pub fn train_object_no_contact(cfg: &PipelineConfig, ds: &Dataset, ws: &Workspace) -> Result<TrainLog> {
    train_object_variant(cfg, ds, ws, false)
}

/// Runs one stage, writing its checkpoint and loss log.
pub fn train_stage(stage: Stage, cfg: &PipelineConfig, ds: &Dataset, ws: &Workspace) -> Result<TrainLog> {
    if stage == Stage::Style && !ws.canonical().join("manifest.json").exists() {
        return Err(Error::MissingDependency("stage 2 needs the canonical set from stage 1".into()));
    }
    if stage == Stage::Object && !cfg.teacher_forcing {
        ws.require("alpha", "stage 1")?;
        ws.require("beta", "stage 2")?;
        ws.require("contact", "stage 3")?;
    }
    let log = match stage {
        Stage::Action => train_action(cfg, ds, ws)?,
        Stage::Style => train_style(cfg, ds, ws)?,
        Stage::Contact => train_contact_predictor(cfg, ds, ws)?,
        Stage::Object => train_object(cfg, ds, ws)?,
    };
    log.write(ws)?;
    Ok(log)
}

/// Trains the contrastive feature extractor used by evaluation.
pub fn train_extractor(cfg: &PipelineConfig, ds: &Dataset, ws: &Workspace) -> Result<TrainLog> {
    let skel = KinematicBody::smpl_lite();
    let train = train_split(ds);
    let views: Vec<HoiView> = train.iter().map(|s| HoiView { body: &s.body, object: &s.object_motion, geometry: &s.geometry }).collect();
    let mut ex = FeatureExtractor::new(cfg.extractor.clone(), ds.meta.vocabulary.len(), ds.meta.n_frames, hoi_frame_width(&skel), fan_out(cfg.seed, SALT_INIT, 6))?;
    let losses = ex.train(&views, &tokens_of(&train), &skel, fan_out(cfg.seed, SALT_BATCH, 6))?;
    ex.save(&ws.checkpoint("extractor"))?;
    let log = TrainLog { name: "extractor".into(), losses };
    log.write(ws)?;
    Ok(log)
}
