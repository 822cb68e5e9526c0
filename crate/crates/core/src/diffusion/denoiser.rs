use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Axis;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::encoders::{tile_rows, BodyEncoder, ContactEncoder, ObjectEncoder, TextEncoder};
use super::schedule::NoiseSchedule;
use crate::autodiff::Var;
use crate::container::{Archive, LoadError, NamedArray};
use crate::error::{Error, Result};
use crate::hoi_core::Mat;
use crate::nn::{sinusoidal, Builder, Graph, LayerNorm, Linear, Mlp, ParamStore, TransformerBlock};

pub const CHECKPOINT_KIND: &str = "denoiser";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Which of the three denoisers a network plays, and so which conditions it reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Action motion from text.
    Alpha,
    /// Interaction style from text and object.
    Beta,
    /// Object motion from body motion and contact.
    Gamma,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub ff: usize,
    /// Frames folded into one token.
    pub patch: usize,
    pub train_steps: usize,
    pub inference_steps: usize,
    pub text_width: usize,
    pub cond_width: usize,
    pub point_width: usize,
    pub body_hidden: usize,
    /// Lower bound on the per-dimension scale used to normalize targets.
    pub std_floor: f64,
    pub output: Output,
}

/// What the network head emits before conversion to a noise prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Output {
    /// ε directly.
    Epsilon,
    /// v = √ᾱ ε − √(1−ᾱ) x⁰, so ε = √(1−ᾱ) x^k + √ᾱ v.
    #[default]
    Velocity,
    /// x⁰, so ε = (x^k − √ᾱ x⁰) / √(1−ᾱ).
    Sample,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            d_model: 64,
            ff: 128,
            patch: 4,
            train_steps: 1000,
            inference_steps: 50,
            text_width: 256,
            cond_width: 512,
            point_width: 64,
            body_hidden: 64,
            std_floor: 1e-3,
            output: Output::default(),
        }
    }
}

impl DenoiserConfig {
    /// Published sizes (eight layers, four heads); far beyond a desk budget.
    pub fn published() -> Self {
        Self { layers: 8, d_model: 512, ff: 1024, patch: 1, point_width: 256, body_hidden: 256, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.d_model % self.heads != 0 || self.d_model % 2 != 0 {
            return Err(Error::Config("model width must be even and divide into the heads".into()));
        }
        if self.patch == 0 || self.inference_steps == 0 || self.inference_steps > self.train_steps {
            return Err(Error::Config("bad patch or step counts".into()));
        }
        if !(self.std_floor > 0.0) {
            return Err(Error::Config("std_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Data-dependent shape of a denoiser.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserSpec {
    pub role: Role,
    pub x_dim: usize,
    pub n_frames: usize,
    pub vocab: usize,
    pub body_features: usize,
    pub points: usize,
    /// Whether ε_γ reads the contact map (off for the no-contact ablation).
    pub contact: bool,
}

impl DenoiserSpec {
    fn uses_text(&self) -> bool {
        matches!(self.role, Role::Alpha | Role::Beta)
    }

    fn uses_object(&self) -> bool {
        self.role == Role::Beta
    }

    fn uses_body(&self) -> bool {
        self.role == Role::Gamma
    }

    fn uses_contact(&self) -> bool {
        self.role == Role::Gamma && self.contact
    }

    fn uses_points(&self) -> bool {
        self.uses_object() || self.uses_contact()
    }
}

/// Per-dimension affine map between physical values and network space.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn fit(data: &[&Mat], floor: f64) -> Self {
        let d = data.first().map(|m| m.ncols()).unwrap_or(0);
        let views: Vec<_> = data.iter().map(|m| m.view()).collect();
        if views.is_empty() {
            return Self::identity(d);
        }
        let all = ndarray::concatenate(Axis(0), &views).expect("equal widths");
        let mean = all.mean_axis(Axis(0)).expect("non-empty").to_vec();
        let std = all.std_axis(Axis(0), 0.0).iter().map(|s| s.max(floor)).collect();
        Self { mean, std }
    }

    pub fn normalize(&self, x: &Mat) -> Mat {
        let mut y = x.clone();
        for mut row in y.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        y
    }

    pub fn denormalize(&self, x: &Mat) -> Mat {
        let mut y = x.clone();
        for mut row in y.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * self.std[j] + self.mean[j];
            }
        }
        y
    }
}

/// Conditioning inputs for a batch. Which fields must be present depends on
/// the denoiser's role.
#[derive(Clone, Debug, Default)]
pub struct Conditions {
    pub tokens: Option<Vec<Vec<u32>>>,
    pub points: Option<Vec<Mat>>,
    /// Per sample, N × F body features.
    pub body: Option<Vec<Mat>>,
    /// Per sample, P contact probabilities or labels.
    pub contact: Option<Vec<Vec<f64>>>,
}

impl Conditions {
    pub fn batch(&self) -> Option<usize> {
        let lens = [
            self.tokens.as_ref().map(Vec::len),
            self.points.as_ref().map(Vec::len),
            self.body.as_ref().map(Vec::len),
            self.contact.as_ref().map(Vec::len),
        ];
        let mut it = lens.into_iter().flatten();
        let first = it.next()?;
        it.all(|l| l == first).then_some(first)
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        fn pick<T: Clone>(v: &Option<Vec<T>>, idx: &[usize]) -> Option<Vec<T>> {
            v.as_ref().map(|v| idx.iter().map(|&i| v[i].clone()).collect())
        }
        Self {
            tokens: pick(&self.tokens, idx),
            points: pick(&self.points, idx),
            body: pick(&self.body, idx),
            contact: pick(&self.contact, idx),
        }
    }
}

/// Encoded conditions for one batch.
pub struct Encoded {
    /// One B × d matrix per prefix token kind (step token excluded).
    prefix: Vec<Var>,
    /// (B·T) × d addition to the frame tokens.
    frame_add: Option<Var>,
    batch: usize,
}

#[derive(Clone, Debug)]
struct Net {
    text: Option<(TextEncoder, Linear)>,
    object: Option<(ObjectEncoder, Linear)>,
    body: Option<(BodyEncoder, Linear)>,
    contact: Option<(ContactEncoder, Linear)>,
    input: Linear,
    step: Mlp,
    blocks: Vec<TransformerBlock>,
    ln_out: LayerNorm,
    head: Linear,
}

/// Transformer noise predictor over patched frame tokens with prefix
/// condition tokens.
#[derive(Clone, Debug)]
pub struct Denoiser {
    pub cfg: DenoiserConfig,
    pub spec: DenoiserSpec,
    pub store: ParamStore,
    pub norm: Normalizer,
    pub schedule: NoiseSchedule,
    net: Net,
}

impl Denoiser {
    pub fn new(cfg: DenoiserConfig, spec: DenoiserSpec, schedule: NoiseSchedule, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if spec.n_frames % cfg.patch != 0 {
            return Err(Error::Config(format!("{} frames do not split into patches of {}", spec.n_frames, cfg.patch)));
        }
        if schedule.steps() != cfg.train_steps {
            return Err(Error::Config("schedule length differs from train_steps".into()));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder::new(&mut store, &mut rng);
        let d = cfg.d_model;
        let text = spec.uses_text().then(|| {
            (TextEncoder::new(&mut b, "text_enc", spec.vocab, cfg.text_width), Linear::new(&mut b, "text_proj", cfg.text_width, d))
        });
        let object = spec.uses_object().then(|| {
            (
                ObjectEncoder::new(&mut b, "object_enc", cfg.point_width, cfg.cond_width),
                Linear::new(&mut b, "object_proj", cfg.cond_width, d),
            )
        });
        let body = spec.uses_body().then(|| {
            (
                BodyEncoder::new(&mut b, "body_enc", spec.body_features, cfg.body_hidden, cfg.heads, cfg.cond_width),
                Linear::new(&mut b, "body_proj", cfg.cond_width * cfg.patch, d),
            )
        });
        let contact = spec.uses_contact().then(|| {
            (
                ContactEncoder::new(&mut b, "contact_enc", cfg.point_width, cfg.cond_width),
                Linear::new(&mut b, "contact_proj", cfg.cond_width, d),
            )
        });
        let input = Linear::new(&mut b, "input", spec.x_dim * cfg.patch, d);
        let step = Mlp::new(&mut b, "step", d, d, d);
        let blocks = (0..cfg.layers).map(|i| TransformerBlock::new(&mut b, &format!("block{i}"), d, cfg.heads, cfg.ff)).collect();
        let ln_out = LayerNorm::new(&mut b, "ln_out", d);
        let head = Linear::zeros(&mut b, "head", d, spec.x_dim * cfg.patch);
        let net = Net { text, object, body, contact, input, step, blocks, ln_out, head };
        let norm = Normalizer::identity(spec.x_dim);
        Ok(Self { cfg, spec, store, norm, schedule, net })
    }

    fn tokens_per_sample(&self) -> usize {
        self.spec.n_frames / self.cfg.patch
    }

    fn prefix_len(&self) -> usize {
        1 + usize::from(self.net.text.is_some()) + usize::from(self.net.object.is_some()) + usize::from(self.net.contact.is_some())
    }

    fn check_conditions(&self, cond: &Conditions) -> Result<usize> {
        let role = self.spec.role;
        let need = [
            ("text", self.spec.uses_text(), cond.tokens.is_some()),
            ("object", self.spec.uses_points(), cond.points.is_some()),
            ("body", self.spec.uses_body(), cond.body.is_some()),
            ("contact", self.spec.uses_contact(), cond.contact.is_some()),
        ];
        for (name, wanted, given) in need {
            if wanted != given {
                let verb = if wanted { "requires" } else { "does not take" };
                return Err(Error::Contract(format!("{role:?} denoiser {verb} a {name} condition")));
            }
        }
        cond.batch().ok_or_else(|| Error::Contract("conditions disagree on batch size".into()))
    }

    /// Runs the condition encoders.
    pub fn encode(&self, g: &mut Graph, cond: &Conditions) -> Result<Encoded> {
        let batch = self.check_conditions(cond)?;
        let mut prefix = Vec::new();
        if let (Some((enc, proj)), Some(tokens)) = (&self.net.text, &cond.tokens) {
            let f = enc.forward(g, tokens)?;
            prefix.push(proj.forward(g, f));
        }
        if let (Some((enc, proj)), Some(points)) = (&self.net.object, &cond.points) {
            let refs: Vec<&Mat> = points.iter().collect();
            let codes = enc.forward(g, &refs)?;
            prefix.push(proj.forward(g, codes.pooled));
        }
        if let (Some((enc, proj)), Some(maps), Some(points)) = (&self.net.contact, &cond.contact, &cond.points) {
            let refs: Vec<&[f64]> = maps.iter().map(Vec::as_slice).collect();
            let clouds: Vec<&Mat> = points.iter().collect();
            let f = enc.forward(g, &refs, &clouds)?;
            prefix.push(proj.forward(g, f));
        }
        let frame_add = match (&self.net.body, &cond.body) {
            (Some((enc, proj)), Some(body)) => {
                let refs: Vec<&Mat> = body.iter().collect();
                if refs.iter().any(|m| m.nrows() != self.spec.n_frames) {
                    return Err(Error::Structural("body condition has the wrong frame count".into()));
                }
                let f = enc.forward(g, &refs)?;
                let t = batch * self.tokens_per_sample();
                let f = g.tape.reshape(f, t, self.cfg.cond_width * self.cfg.patch);
                Some(proj.forward(g, f))
            }
            _ => None,
        };
        Ok(Encoded { prefix, frame_add, batch })
    }

    /// Freezes encoded conditions into constants of another graph.
    fn reuse(&self, from: &Graph, enc: &Encoded, g: &mut Graph) -> Encoded {
        Encoded {
            prefix: enc.prefix.iter().map(|&v| g.constant(from.value(v).clone())).collect(),
            frame_add: enc.frame_add.map(|v| g.constant(from.value(v).clone())),
            batch: enc.batch,
        }
    }

    /// Predicts ε for `x`, a (B·N) × D matrix in normalized space, with one
    /// training-schedule step per sample.
    pub fn predict(&self, g: &mut Graph, x: Var, steps: &[usize], enc: &Encoded) -> Var {
        let b = enc.batch;
        assert_eq!(steps.len(), b, "one step per sample");
        let (d, p) = (self.cfg.d_model, self.cfg.patch);
        let t = self.tokens_per_sample();
        let x_in = x;
        let x = g.tape.reshape(x, b * t, self.spec.x_dim * p);
        let mut frames = self.net.input.forward(g, x);
        let pos = g.constant(tile_rows(&sinusoidal(&(0..t).map(|i| i as f64).collect::<Vec<_>>(), d), b));
        frames = g.tape.add(frames, pos);
        if let Some(fa) = enc.frame_add {
            frames = g.tape.add(frames, fa);
        }
        let s = g.constant(sinusoidal(&steps.iter().map(|&k| k as f64).collect::<Vec<_>>(), d));
        let step_tok = self.net.step.forward(g, s);

        let cp = self.prefix_len();
        let mut parts = vec![step_tok];
        parts.extend(enc.prefix.iter().copied());
        parts.push(frames);
        let all = g.tape.concat_rows(&parts);
        let len = cp + t;
        let mut order = Vec::with_capacity(b * len);
        let mut owner = Vec::with_capacity(b * len);
        for i in 0..b {
            for c in 0..cp {
                order.push(c * b + i);
            }
            for j in 0..t {
                order.push(cp * b + i * t + j);
            }
            owner.extend(std::iter::repeat_n(i, len));
        }
        let seq = g.tape.gather_rows(all, order);
        let step_all = g.tape.gather_rows(step_tok, owner);
        let mut h = g.tape.add(seq, step_all);
        for block in &self.net.blocks {
            h = block.forward(g, h, b);
        }
        let frame_rows: Vec<usize> = (0..b).flat_map(|i| (0..t).map(move |j| i * len + cp + j)).collect();
        let h = g.tape.gather_rows(h, frame_rows);
        let h = self.net.ln_out.forward(g, h);
        let out = self.net.head.forward(g, h);
        let out = g.tape.reshape(out, b * self.spec.n_frames, self.spec.x_dim);
        let coef = |f: &dyn Fn(f64) -> f64| {
            let n = self.spec.n_frames;
            Mat::from_shape_fn((b * n, self.spec.x_dim), |(r, _)| f(self.schedule.alpha_bar(steps[r / n])))
        };
        match self.cfg.output {
            Output::Epsilon => out,
            Output::Velocity => {
                let cx = g.constant(coef(&|ab| (1.0 - ab).sqrt()));
                let co = g.constant(coef(&|ab| ab.sqrt()));
                let a = g.tape.mul(x_in, cx);
                let o = g.tape.mul(out, co);
                g.tape.add(a, o)
            }
            Output::Sample => {
                let cx = g.constant(coef(&|ab| 1.0 / (1.0 - ab).sqrt()));
                let co = g.constant(coef(&|ab| -(ab / (1.0 - ab)).sqrt()));
                let a = g.tape.mul(x_in, cx);
                let o = g.tape.mul(out, co);
                g.tape.add(a, o)
            }
        }
    }

    fn stack(&self, xs: &[Mat]) -> Result<Mat> {
        let want = (self.spec.n_frames, self.spec.x_dim);
        if xs.iter().any(|x| x.dim() != want) {
            return Err(Error::Structural(format!("denoiser expects {want:?} sequences")));
        }
        let views: Vec<_> = xs.iter().map(|x| x.view()).collect();
        Ok(ndarray::concatenate(Axis(0), &views).expect("checked shapes"))
    }

    /// Denoising loss for fixed (k, ε) draws on normalized targets:
    /// (1/B) Σ_b ‖ε_b − ε_θ(x_b^k, k_b, c_b)‖².
    pub fn loss_with(&self, g: &mut Graph, x0: &[Mat], steps: &[usize], eps: &[Mat], cond: &Conditions) -> Result<Var> {
        let enc = self.encode(g, cond)?;
        if x0.len() != enc.batch || steps.len() != enc.batch || eps.len() != enc.batch {
            return Err(Error::Contract("targets, steps and noises must match the condition batch".into()));
        }
        let noisy: Vec<Mat> = x0
            .iter()
            .zip(steps)
            .zip(eps)
            .map(|((x, &k), e)| self.schedule.forward_noise(x, k, e))
            .collect::<Result<_>>()?;
        let x = g.constant(self.stack(&noisy)?);
        let pred = self.predict(g, x, steps, &enc);
        Ok(g.tape.sq_err_sum(pred, self.stack(eps)?, 1.0 / enc.batch as f64))
    }

    /// Plain ε predictions without gradients.
    pub fn predict_eps(&self, xs: &[Mat], steps: &[usize], cond: &Conditions) -> Result<Vec<Mat>> {
        let mut g = Graph::new(&self.store);
        let enc = self.encode(&mut g, cond)?;
        let x = g.constant(self.stack(xs)?);
        let out = self.predict(&mut g, x, steps, &enc);
        Ok(split_rows(g.value(out), self.spec.n_frames))
    }

    pub fn save(&self, dir: &Path) -> std::io::Result<()> {
        self.to_archive().write(dir)
    }

    pub fn to_archive(&self) -> Archive {
        let meta = serde_json::json!({
            "version": CHECKPOINT_VERSION,
            "config": self.cfg,
            "spec": self.spec,
            "schedule": self.schedule,
        });
        let mut a = Archive::new(CHECKPOINT_KIND, meta);
        for (name, m) in self.store.iter() {
            a.push("params", NamedArray::f64(name, vec![m.nrows(), m.ncols()], m.iter().copied().collect()));
        }
        let d = self.norm.mean.len();
        a.push("normalizer", NamedArray::f64("mean", vec![d], self.norm.mean.clone()));
        a.push("normalizer", NamedArray::f64("std", vec![d], self.norm.std.clone()));
        a
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_archive(&Archive::read(dir)?)
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        if a.kind != CHECKPOINT_KIND {
            return Err(LoadError::Manifest(format!("expected a `{CHECKPOINT_KIND}` archive, found `{}`", a.kind)).into());
        }
        let version = a.meta["version"].as_u64();
        if version != Some(CHECKPOINT_VERSION as u64) {
            return Err(LoadError::Manifest(format!("checkpoint version {version:?} is not {CHECKPOINT_VERSION}")).into());
        }
        let field = |k: &str| a.meta[k].clone();
        let parse_err = |e: serde_json::Error| Error::from(LoadError::Manifest(format!("checkpoint metadata: {e}")));
        let cfg: DenoiserConfig = serde_json::from_value(field("config")).map_err(parse_err)?;
        let spec: DenoiserSpec = serde_json::from_value(field("spec")).map_err(parse_err)?;
        let schedule: NoiseSchedule = serde_json::from_value(field("schedule")).map_err(parse_err)?;
        let mut den = Self::new(cfg, spec, schedule, 0)?;
        let mut named = BTreeMap::new();
        for arr in a.blob("params").unwrap_or_default() {
            if arr.shape.len() != 2 {
                return Err(LoadError::ShapeMismatch { array: arr.name.clone(), shape: arr.shape.clone(), nbytes: 0 }.into());
            }
            named.insert(arr.name.clone(), Mat::from_shape_vec((arr.shape[0], arr.shape[1]), arr.as_f64()).expect("shape from manifest"));
        }
        den.store.load_named(&named).map_err(|e| LoadError::Content { array: "params".into(), reason: e })?;
        let mean = a.array("normalizer", "mean")?.as_f64();
        let std = a.array("normalizer", "std")?.as_f64();
        if mean.len() != den.spec.x_dim || std.len() != den.spec.x_dim {
            return Err(LoadError::Content { array: "normalizer".into(), reason: "width differs from x_dim".into() }.into());
        }
        den.norm = Normalizer { mean, std };
        Ok(den)
    }
}

pub fn split_rows(m: &Mat, rows: usize) -> Vec<Mat> {
    (0..m.nrows() / rows).map(|i| m.slice(ndarray::s![i * rows..(i + 1) * rows, ..]).to_owned()).collect()
}

/// One draw of (k, ε) per sample and the resulting loss and parameter
/// gradients. Targets are in physical units.
pub fn training_loss(
    den: &Denoiser,
    x0: &[Mat],
    cond: &Conditions,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<Option<Mat>>)> {
    let k_max = den.schedule.steps();
    let xs: Vec<Mat> = x0.iter().map(|x| den.norm.normalize(x)).collect();
    let steps: Vec<usize> = xs.iter().map(|_| rng.random_range(1..=k_max)).collect();
    let eps: Vec<Mat> = xs.iter().map(|x| Mat::from_shape_fn(x.dim(), |_| StandardNormal.sample(rng))).collect();
    let mut g = Graph::new(&den.store);
    let loss = den.loss_with(&mut g, &xs, &steps, &eps, cond)?;
    let mut grads = g.tape.backward(loss);
    Ok((g.tape.scalar(loss), g.param_grads(&mut grads)))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    /// The deterministic reverse update fed with the implied single-step noise.
    #[default]
    Deterministic,
    /// Ancestral sampling from the Gaussian posterior; a cross-check only.
    Posterior,
}

/// Steps on which the guidance hook runs.
pub const GUIDED_STEPS: usize = 10;

/// Called after each of the last [`GUIDED_STEPS`] reverse steps with the
/// remaining step count and the batch in physical units; returns whether it
/// changed anything.
pub type Guidance<'a> = dyn FnMut(usize, &mut [Mat]) -> bool + 'a;

/// Draws one sample per seed. Each sample's noise comes from its own seed, so
/// results do not depend on how samples are batched.
pub fn sample(den: &Denoiser, cond: &Conditions, seeds: &[u64], kind: SamplerKind, mut guidance: Option<&mut Guidance>) -> Result<Vec<Mat>> {
    let b = seeds.len();
    if cond.batch() != Some(b) {
        return Err(Error::Contract("one seed per conditioned sample".into()));
    }
    let (sub, tau) = den.schedule.strided(den.cfg.inference_steps)?;
    let shape = (den.spec.n_frames, den.spec.x_dim);
    let mut rngs: Vec<ChaCha8Rng> = seeds.iter().map(|&s| ChaCha8Rng::seed_from_u64(s)).collect();
    let mut xs: Vec<Mat> = rngs.iter_mut().map(|r| Mat::from_shape_fn(shape, |_| StandardNormal.sample(r))).collect();

    let mut enc_graph = Graph::new(&den.store);
    let enc = den.encode(&mut enc_graph, cond)?;
    for i in (1..=sub.steps()).rev() {
        let eps_hat = {
            let mut g = Graph::new(&den.store);
            let e = den.reuse(&enc_graph, &enc, &mut g);
            let x = g.constant(den.stack(&xs)?);
            let out = den.predict(&mut g, x, &vec![tau[i]; b], &e);
            split_rows(g.value(out), shape.0)
        };
        for (j, x) in xs.iter_mut().enumerate() {
            *x = match kind {
                SamplerKind::Deterministic => {
                    let e = sub.step_noise(x, i, &eps_hat[j]);
                    sub.reverse_step(x, i, &e)?
                }
                SamplerKind::Posterior => {
                    let x0 = sub.predict_x0(x, i, &eps_hat[j]);
                    let mean = sub.posterior_mean(x, i, &x0);
                    let sd = sub.posterior_variance(i).sqrt();
                    let r = &mut rngs[j];
                    mean + Mat::from_shape_fn(shape, |_| { let z: f64 = StandardNormal.sample(r); sd * z })
                }
            };
        }
        if i <= GUIDED_STEPS {
            if let Some(hook) = guidance.as_deref_mut() {
                let before: Vec<Mat> = xs.iter().map(|x| den.norm.denormalize(x)).collect();
                let mut phys = before.clone();
                if hook(i - 1, &mut phys) {
                    for ((x, p), q) in xs.iter_mut().zip(&phys).zip(&before) {
                        if p != q {
                            *x = den.norm.normalize(p);
                        }
                    }
                }
            }
        }
    }
    Ok(xs.iter().map(|x| den.norm.denormalize(x)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(role: Role) -> Denoiser {
        let cfg = DenoiserConfig {
            layers: 1,
            heads: 2,
            d_model: 8,
            ff: 8,
            patch: 2,
            train_steps: 20,
            inference_steps: 5,
            text_width: 6,
            cond_width: 6,
            point_width: 4,
            body_hidden: 4,
            std_floor: 1e-3,
            output: Output::Epsilon,
        };
        let spec = DenoiserSpec { role, x_dim: 3, n_frames: 4, vocab: 5, body_features: 2, points: 5, contact: true };
        Denoiser::new(cfg, spec, NoiseSchedule::linear(20, 0.01, 0.2).unwrap(), 3).unwrap()
    }

    fn cond(role: Role, b: usize) -> Conditions {
        let tokens = Some((0..b).map(|i| vec![2, 3 + (i % 2) as u32]).collect());
        let points = Some((0..b).map(|i| Mat::from_shape_fn((5, 3), |(p, c)| ((p + c + i) as f64).sin() * 0.1)).collect());
        let body = Some((0..b).map(|i| Mat::from_shape_fn((4, 2), |(f, c)| (f + c + i) as f64 * 0.1)).collect());
        let contact = Some((0..b).map(|i| (0..5).map(|p| ((p + i) % 2) as f64).collect()).collect());
        match role {
            Role::Alpha => Conditions { tokens, ..Default::default() },
            Role::Beta => Conditions { tokens, points, ..Default::default() },
            Role::Gamma => Conditions { body, contact, points, ..Default::default() },
        }
    }

    #[test]
    fn role_condition_mismatch_is_a_contract_error() {
        let den = toy(Role::Alpha);
        let mut g = Graph::new(&den.store);
        assert!(matches!(den.encode(&mut g, &cond(Role::Beta, 2)), Err(Error::Contract(_))));
        assert!(matches!(toy(Role::Gamma).encode(&mut g, &cond(Role::Alpha, 2)), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_head_predicts_zero_noise() {
        for role in [Role::Alpha, Role::Beta, Role::Gamma] {
            let den = toy(role);
            let xs = vec![Mat::from_elem((4, 3), 0.5); 2];
            let out = den.predict_eps(&xs, &[3, 7], &cond(role, 2)).unwrap();
            assert_eq!(out.len(), 2);
            assert!(out.iter().all(|m| m.dim() == (4, 3) && m.iter().all(|&v| v == 0.0)));
        }
    }

    #[test]
    fn zero_head_conversions() {
        let mut den = toy(Role::Alpha);
        let xs = vec![Mat::from_elem((4, 3), 0.5); 2];
        let steps = [3, 7];
        for (out, f) in [(Output::Velocity, (|ab: f64| (1.0 - ab).sqrt()) as fn(f64) -> f64), (Output::Sample, |ab: f64| 1.0 / (1.0 - ab).sqrt())] {
            den.cfg.output = out;
            let eps = den.predict_eps(&xs, &steps, &cond(Role::Alpha, 2)).unwrap();
            for (e, &k) in eps.iter().zip(&steps) {
                let want = 0.5 * f(den.schedule.alpha_bar(k));
                assert!(e.iter().all(|&v| (v - want).abs() < 1e-12), "{out:?}");
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_and_identity_guidance_is_a_no_op() {
        let den = toy(Role::Beta);
        let c = cond(Role::Beta, 2);
        let a = sample(&den, &c, &[1, 2], SamplerKind::Deterministic, None).unwrap();
        let b = sample(&den, &c, &[1, 2], SamplerKind::Deterministic, None).unwrap();
        assert_eq!(a, b);
        let mut calls = Vec::new();
        let mut hook = |k: usize, _: &mut [Mat]| {
            calls.push(k);
            false
        };
        let g = sample(&den, &c, &[1, 2], SamplerKind::Deterministic, Some(&mut hook)).unwrap();
        assert_eq!(a, g);
        assert_eq!(calls, vec![4, 3, 2, 1, 0]);
        let single = sample(&den, &c.select(&[1]), &[2], SamplerKind::Deterministic, None).unwrap();
        for (x, y) in single[0].iter().zip(a[1].iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut den = toy(Role::Gamma);
        den.norm = Normalizer { mean: vec![0.1, 0.2, 0.3], std: vec![1.0, 2.0, 3.0] };
        let dir = tempfile::tempdir().unwrap();
        den.save(dir.path()).unwrap();
        let back = Denoiser::load(dir.path()).unwrap();
        assert_eq!(back.store.digest(), den.store.digest());
        assert_eq!(back.norm, den.norm);
        assert_eq!(back.cfg, den.cfg);
    }
}
