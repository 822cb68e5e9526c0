use serde::Serialize;

use crate::contact::ContactPredictor;
use crate::decouple::{recompose, CanonicalActionSet};
use crate::diffusion::encoders::body_features;
use crate::diffusion::{sample, Conditions, Denoiser, SamplerKind};
use crate::error::{Error, Result};
use crate::hoi_core::{BodyPoseSequence, DatasetMeta, KinematicBody, Mat, ObjectGeometry, ObjectPostureSequence};
use crate::interactor::{CorrectionTrace, Interactor, InteractorConfig, Terms};

use super::config::{AblationFlags, PipelineConfig};
use super::train::{fan_out, Workspace, SALT_ALPHA, SALT_BETA, SALT_DIRECT, SALT_GAMMA};

/// One text + object synthesis request.
#[derive(Clone, Debug)]
pub struct Request<'a> {
    pub tokens: Vec<u32>,
    pub geometry: &'a ObjectGeometry,
    /// Ground-truth contact labels, used only by the real-contact variant.
    pub truth_contact: Option<Vec<bool>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BodySynthesis {
    pub body: BodyPoseSequence,
    /// Sampled (or retrieved) canonical motion b̃'.
    pub canonical: Option<Mat>,
    /// Sampled interaction-style residual b̂'.
    pub residual: Option<Mat>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Synthesis {
    pub body: BodySynthesis,
    /// Contact map fed to object diffusion, if any.
    pub contact: Option<Vec<f64>>,
    pub object: ObjectPostureSequence,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SynthesisOutput {
    #[serde(skip)]
    pub samples: Vec<Synthesis>,
    pub trace: CorrectionTrace,
}

/// Trained models of one workspace. Models that were never trained stay
/// absent and are reported when a variant needs them.
pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub meta: DatasetMeta,
    pub skel: KinematicBody,
    pub canonical: CanonicalActionSet,
    pub alpha: Option<Denoiser>,
    pub beta: Option<Denoiser>,
    pub direct: Option<Denoiser>,
    pub contact: Option<ContactPredictor>,
    pub gamma: Option<Denoiser>,
    pub gamma_no_contact: Option<Denoiser>,
}

fn optional<T>(ws: &Workspace, name: &str, load: impl Fn(&std::path::Path) -> Result<T>) -> Result<Option<T>> {
    let dir = ws.checkpoint(name);
    if dir.join("manifest.json").exists() {
        load(&dir).map(Some)
    } else {
        Ok(None)
    }
}

fn need<'a, T>(m: &'a Option<T>, what: &str) -> Result<&'a T> {
    m.as_ref().ok_or_else(|| Error::MissingDependency(format!("{what} has not been trained")))
}

impl Pipeline {
    pub fn load(cfg: &PipelineConfig, ws: &Workspace) -> Result<Self> {
        let meta = ws.load_dataset()?.meta;
        Ok(Self {
            cfg: cfg.clone(),
            meta,
            skel: KinematicBody::smpl_lite(),
            canonical: ws.load_canonical()?,
            alpha: optional(ws, "alpha", Denoiser::load)?,
            beta: optional(ws, "beta", Denoiser::load)?,
            direct: optional(ws, "direct", Denoiser::load)?,
            contact: optional(ws, "contact", ContactPredictor::load)?,
            gamma: optional(ws, "gamma", Denoiser::load)?,
            gamma_no_contact: optional(ws, "gamma-no-contact", Denoiser::load)?,
        })
    }

    /// Same as [`load`](Self::load); named for the stage IV path that only
    /// needs the upstream models.
    pub fn load_body_and_contact(cfg: &PipelineConfig, ws: &Workspace) -> Result<Self> {
        Self::load(cfg, ws)
    }

    fn sampler(&self) -> SamplerKind {
        self.cfg.sampler
    }

    fn actions(&self, requests: &[Request]) -> Result<Vec<usize>> {
        requests
            .iter()
            .map(|r| {
                let a = self.meta.vocabulary.action_label(&r.tokens)?;
                self.canonical.retrieve(a)?;
                Ok(a)
            })
            .collect()
    }

    fn seeds(&self, master: u64, salt: u64, n: usize) -> Vec<u64> {
        (0..n as u64).map(|i| fan_out(master, salt, i)).collect()
    }

    pub fn synthesize_bodies(&self, requests: &[Request], master: u64, flags: &AblationFlags) -> Result<Vec<BodySynthesis>> {
        flags.validate()?;
        let actions = self.actions(requests)?;
        let n = requests.len();
        let tokens: Vec<Vec<u32>> = requests.iter().map(|r| r.tokens.clone()).collect();
        let points: Vec<Mat> = requests.iter().map(|r| r.geometry.points.clone()).collect();
        let text_object = Conditions { tokens: Some(tokens.clone()), points: Some(points), ..Conditions::default() };
        if flags.direct_body {
            let den = need(&self.direct, "the direct-body denoiser")?;
            let xs = sample(den, &text_object, &self.seeds(master, SALT_DIRECT, n), self.sampler(), None)?;
            return Ok(xs
                .into_iter()
                .map(|x| {
                    let mut body = BodyPoseSequence::new(x);
                    body.canonicalize();
                    BodySynthesis { body, canonical: None, residual: None }
                })
                .collect());
        }
        let canonical: Vec<Mat> = if flags.real_canonical {
            actions.iter().map(|&a| self.canonical.retrieve(a).cloned()).collect::<Result<_>>()?
        } else {
            let den = need(&self.alpha, "the action denoiser (stage 1)")?;
            let cond = Conditions { tokens: Some(tokens), ..Conditions::default() };
            sample(den, &cond, &self.seeds(master, SALT_ALPHA, n), self.sampler(), None)?
        };
        let den = need(&self.beta, "the style denoiser (stage 2)")?;
        let residual = sample(den, &text_object, &self.seeds(master, SALT_BETA, n), self.sampler(), None)?;
        canonical
            .into_iter()
            .zip(residual)
            .map(|(c, r)| Ok(BodySynthesis { body: recompose(&c, &r)?, canonical: Some(c), residual: Some(r) }))
            .collect()
    }

    pub fn predict_contact(&self, requests: &[Request]) -> Result<Vec<Vec<f64>>> {
        let pred = need(&self.contact, "the contact predictor (stage 3)")?;
        let mut out = Vec::with_capacity(requests.len());
        for chunk in requests.chunks(32) {
            let tokens: Vec<Vec<u32>> = chunk.iter().map(|r| r.tokens.clone()).collect();
            let clouds: Vec<&Mat> = chunk.iter().map(|r| &r.geometry.points).collect();
            out.extend(pred.predict(&tokens, &clouds)?);
        }
        Ok(out)
    }

    fn contact_for(&self, requests: &[Request], flags: &AblationFlags) -> Result<Option<Vec<Vec<f64>>>> {
        if flags.no_contact {
            return Ok(None);
        }
        if flags.real_contact {
            return requests
                .iter()
                .map(|r| {
                    r.truth_contact
                        .as_ref()
                        .map(|c| c.iter().map(|&b| f64::from(u8::from(b))).collect())
                        .ok_or_else(|| Error::Argument("real-contact needs ground-truth labels on every request".into()))
                })
                .collect::<Result<Vec<_>>>()
                .map(Some);
        }
        self.predict_contact(requests).map(Some)
    }

    /// Object motion for already synthesized bodies, with interaction
    /// guidance over the final sampling steps.
    pub fn synthesize_objects(
        &self,
        requests: &[Request],
        bodies: &[BodySynthesis],
        master: u64,
        flags: &AblationFlags,
        trace: &mut CorrectionTrace,
    ) -> Result<Vec<(Option<Vec<f64>>, ObjectPostureSequence)>> {
        if bodies.len() != requests.len() {
            return Err(Error::Structural("one body per request".into()));
        }
        let contact = self.contact_for(requests, flags)?;
        let den = if flags.no_contact {
            need(&self.gamma_no_contact, "the contact-free object denoiser")?
        } else {
            need(&self.gamma, "the object denoiser (stage 4)")?
        };
        let feats = bodies.iter().map(|b| body_features(&b.body, &self.skel)).collect::<Result<Vec<_>>>()?;
        let points = contact.is_some().then(|| requests.iter().map(|r| r.geometry.points.clone()).collect());
        let cond = Conditions { body: Some(feats), contact: contact.clone(), points, ..Conditions::default() };
        let seeds = self.seeds(master, SALT_GAMMA, requests.len());
        let objects = if flags.optimizer == Terms::None {
            sample(den, &cond, &seeds, self.sampler(), None)?
        } else {
            let icfg = InteractorConfig { terms: flags.optimizer, ..self.cfg.interactor.clone() };
            let inters = bodies
                .iter()
                .zip(requests)
                .map(|(b, r)| Interactor::new(icfg.clone(), &b.body, r.geometry, &self.skel))
                .collect::<Result<Vec<_>>>()?;
            let mut call = 0;
            let mut hook = |remaining: usize, xs: &mut [Mat]| -> bool {
                let mut changed = false;
                for (j, x) in xs.iter_mut().enumerate() {
                    match inters[j].correct(x, j, call, remaining, trace) {
                        Ok(y) if y != *x => {
                            *x = y;
                            changed = true;
                        }
                        Ok(_) => {}
                        Err(e) => trace.diagnostics.push(format!("sample {j} call {call}: {e}")),
                    }
                }
                call += 1;
                changed
            };
            sample(den, &cond, &seeds, self.sampler(), Some(&mut hook))?
        };
        let contact = contact.map(|c| c.into_iter().map(Some).collect()).unwrap_or_else(|| vec![None; requests.len()]);
        Ok(contact.into_iter().zip(objects).map(|(c, o)| (c, ObjectPostureSequence::new(o))).collect())
    }

    /// Full text + object → (body, object) synthesis.
    pub fn synthesize(&self, requests: &[Request], master: u64, flags: &AblationFlags) -> Result<SynthesisOutput> {
        let bodies = self.synthesize_bodies(requests, master, flags)?;
        let mut trace = CorrectionTrace::default();
        let objects = self.synthesize_objects(requests, &bodies, master, flags, &mut trace)?;
        let samples = bodies
            .into_iter()
            .zip(objects)
            .map(|(body, (contact, object))| Synthesis { body, contact, object })
            .collect();
        Ok(SynthesisOutput { samples, trace })
    }

    /// Parses a free text in the closed vocabulary into tokens, failing on
    /// unknown action words.
    pub fn tokens_for(&self, text: &str) -> Result<Vec<u32>> {
        let tokens = self.meta.vocabulary.encode(text);
        self.meta.vocabulary.action_label(&tokens)?;
        Ok(tokens)
    }
}
