use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::container::{Archive, LoadError, NamedArray};
use crate::diffusion::encoders::{body_features, body_feature_width, tile_rows, ObjectEncoder, TextEncoder};
use crate::diffusion::Normalizer;
use crate::error::{Error, Result};
use crate::hoi_core::rotation::{exp_map, Vec3};
use crate::hoi_core::{forward_kinematics, BodyPoseSequence, KinematicBody, Mat, ObjectGeometry, ObjectPostureSequence};
use crate::nn::{sinusoidal, Adam, AdamConfig, Builder, Graph, Linear, Mlp, ParamStore, TransformerBlock};

pub const EXTRACTOR_KIND: &str = "feature-extractor";
const EXTRACTOR_VERSION: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorConfig {
    pub width: usize,
    pub temperature: f64,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub patch: usize,
    pub text_width: usize,
    pub point_width: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            width: 128,
            temperature: 0.07,
            d_model: 64,
            heads: 4,
            layers: 1,
            patch: 4,
            text_width: 128,
            point_width: 32,
            steps: 300,
            batch: 64,
            lr: 1e-3,
        }
    }
}

/// One interaction sequence as seen by the feature extractor.
#[derive(Clone, Copy, Debug)]
pub struct HoiView<'a> {
    pub body: &'a BodyPoseSequence,
    pub object: &'a ObjectPostureSequence,
    pub geometry: &'a ObjectGeometry,
}

/// Per frame: body features, the object posture, and hand joints expressed
/// in the object frame.
pub fn hoi_frame_features(v: HoiView, skel: &KinematicBody) -> Result<Mat> {
    let body = body_features(v.body, skel)?;
    let hands = forward_kinematics(v.body, skel)?.hands;
    let n = body.nrows();
    if v.object.frames.dim() != (n, 6) {
        return Err(Error::Structural(format!("object postures {:?} do not match {n} body frames", v.object.frames.dim())));
    }
    let j = hands.dim().1;
    let width = body.ncols() + 6 + 3 * j;
    let mut out = Mat::zeros((n, width));
    for f in 0..n {
        let o = v.object.frames.row(f);
        let r = exp_map(&Vec3::new(o[0], o[1], o[2]));
        let t = Vec3::new(o[3], o[4], o[5]);
        let mut row = out.row_mut(f);
        let mut c = 0;
        for x in body.row(f).iter().chain(o.iter()) {
            row[c] = *x;
            c += 1;
        }
        for h in 0..j {
            let local = r.transpose() * (Vec3::new(hands[[f, h, 0]], hands[[f, h, 1]], hands[[f, h, 2]]) - t);
            for k in 0..3 {
                row[c] = local[k];
                c += 1;
            }
        }
    }
    Ok(out)
}

pub fn hoi_frame_width(skel: &KinematicBody) -> usize {
    body_feature_width(skel) + 6 + 3 * skel.hands.len()
}

/// HOI-sequence and text encoders sharing one unit-norm embedding space.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub cfg: ExtractorConfig,
    pub vocab: usize,
    pub n_frames: usize,
    pub frame_width: usize,
    pub store: ParamStore,
    pub norm: Normalizer,
    text: TextEncoder,
    text_out: Linear,
    object: ObjectEncoder,
    frame_in: Linear,
    blocks: Vec<TransformerBlock>,
    hoi_out: Mlp,
}

impl FeatureExtractor {
    pub fn new(cfg: ExtractorConfig, vocab: usize, n_frames: usize, frame_width: usize, seed: u64) -> Result<Self> {
        if cfg.patch == 0 || n_frames % cfg.patch != 0 || cfg.d_model % cfg.heads.max(1) != 0 || cfg.temperature <= 0.0 {
            return Err(Error::Config("extractor patch must divide the frame count, heads the width, and temperature be positive".into()));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder::new(&mut store, &mut rng);
        let d = cfg.d_model;
        let text = TextEncoder::new(&mut b, "text_enc", vocab, cfg.text_width);
        let text_out = Linear::new(&mut b, "text_out", cfg.text_width, cfg.width);
        let object = ObjectEncoder::new(&mut b, "object_enc", cfg.point_width, d);
        let frame_in = Linear::new(&mut b, "frame_in", frame_width * cfg.patch, d);
        let blocks = (0..cfg.layers).map(|i| TransformerBlock::new(&mut b, &format!("block{i}"), d, cfg.heads, 2 * d)).collect();
        let hoi_out = Mlp::new(&mut b, "hoi_out", 2 * d, d, cfg.width);
        Ok(Self {
            norm: Normalizer::identity(frame_width),
            cfg,
            vocab,
            n_frames,
            frame_width,
            store,
            text,
            text_out,
            object,
            frame_in,
            blocks,
            hoi_out,
        })
    }

    fn text_forward(&self, g: &mut Graph, tokens: &[Vec<u32>]) -> Result<Var> {
        let t = self.text.forward(g, tokens)?;
        let t = self.text_out.forward(g, t);
        Ok(g.tape.l2_normalize_rows(t))
    }

    fn hoi_forward(&self, g: &mut Graph, frames: &[Mat], clouds: &[&Mat]) -> Result<Var> {
        let b = frames.len();
        if frames.iter().any(|f| f.dim() != (self.n_frames, self.frame_width)) {
            return Err(Error::Structural(format!("HOI frames must be {} × {}", self.n_frames, self.frame_width)));
        }
        let tokens = self.n_frames / self.cfg.patch;
        let views: Vec<_> = frames.iter().map(|f| self.norm.normalize(f)).collect();
        let views: Vec<_> = views.iter().map(|f| f.view()).collect();
        let x = g.constant(ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths"));
        let x = g.tape.reshape(x, b * tokens, self.frame_width * self.cfg.patch);
        let mut h = self.frame_in.forward(g, x);
        let pos = sinusoidal(&(0..tokens).map(|i| i as f64).collect::<Vec<_>>(), self.cfg.d_model);
        let pos = g.constant(tile_rows(&pos, b));
        h = g.tape.add(h, pos);
        for block in &self.blocks {
            h = block.forward(g, h, b);
        }
        let pooled = g.tape.segment_mean(h, tokens);
        let obj = self.object.forward(g, clouds)?.pooled;
        let both = g.tape.concat_cols(&[pooled, obj]);
        let out = self.hoi_out.forward(g, both);
        Ok(g.tape.l2_normalize_rows(out))
    }

    fn rows(m: &Mat) -> Vec<Vec<f64>> {
        m.outer_iter().map(|r| r.to_vec()).collect()
    }

    pub fn embed_text(&self, tokens: &[Vec<u32>]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(tokens.len());
        for chunk in tokens.chunks(256) {
            let mut g = Graph::new(&self.store);
            let v = self.text_forward(&mut g, chunk)?;
            out.extend(Self::rows(g.value(v)));
        }
        Ok(out)
    }

    /// Embeds precomputed frame features (see [`hoi_frame_features`]).
    pub fn embed_frames(&self, frames: &[Mat], clouds: &[&Mat]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(frames.len());
        for (f, c) in frames.chunks(64).zip(clouds.chunks(64)) {
            let mut g = Graph::new(&self.store);
            let v = self.hoi_forward(&mut g, f, c)?;
            out.extend(Self::rows(g.value(v)));
        }
        Ok(out)
    }

    pub fn embed_hoi(&self, views: &[HoiView], skel: &KinematicBody) -> Result<Vec<Vec<f64>>> {
        let frames = views.iter().map(|v| hoi_frame_features(*v, skel)).collect::<Result<Vec<_>>>()?;
        let clouds: Vec<&Mat> = views.iter().map(|v| &v.geometry.points).collect();
        self.embed_frames(&frames, &clouds)
    }

    /// Symmetric cross-entropy over the batch similarity matrix. Pairs with
    /// identical token sequences share the target mass.
    pub fn contrastive_loss(&self, g: &mut Graph, frames: &[Mat], clouds: &[&Mat], tokens: &[Vec<u32>]) -> Result<Var> {
        let b = tokens.len();
        let h = self.hoi_forward(g, frames, clouds)?;
        let t = self.text_forward(g, tokens)?;
        let sim = g.tape.matmul_bt(h, t);
        let logits = g.tape.scale(sim, 1.0 / self.cfg.temperature);
        let targets = Mat::from_shape_fn((b, b), |(i, j)| {
            if tokens[i] == tokens[j] {
                1.0 / tokens.iter().filter(|x| **x == tokens[i]).count() as f64
            } else {
                0.0
            }
        });
        let lt = g.tape.transpose(logits);
        let a = g.tape.soft_cross_entropy(logits, targets.clone(), 0.5 / b as f64);
        let c = g.tape.soft_cross_entropy(lt, targets, 0.5 / b as f64);
        Ok(g.tape.add(a, c))
    }

    /// Fits the input normalizer and trains both encoders; returns the loss
    /// per step.
    pub fn train(&mut self, views: &[HoiView], tokens: &[Vec<u32>], skel: &KinematicBody, seed: u64) -> Result<Vec<f64>> {
        if views.len() != tokens.len() || views.len() < 2 {
            return Err(Error::Structural("need at least two paired (HOI, text) examples".into()));
        }
        let frames = views.iter().map(|v| hoi_frame_features(*v, skel)).collect::<Result<Vec<_>>>()?;
        self.norm = Normalizer::fit(&frames.iter().collect::<Vec<_>>(), 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut opt = Adam::new(AdamConfig { lr: self.cfg.lr, ..AdamConfig::default() }, &self.store);
        let batch = self.cfg.batch.min(views.len());
        let mut losses = Vec::with_capacity(self.cfg.steps);
        for _ in 0..self.cfg.steps {
            let idx = sample_indices(&mut rng, views.len(), batch).into_vec();
            let f: Vec<Mat> = idx.iter().map(|&i| frames[i].clone()).collect();
            let c: Vec<&Mat> = idx.iter().map(|&i| &views[i].geometry.points).collect();
            let t: Vec<Vec<u32>> = idx.iter().map(|&i| tokens[i].clone()).collect();
            let mut g = Graph::new(&self.store);
            let loss = self.contrastive_loss(&mut g, &f, &c, &t)?;
            let mut grads = g.tape.backward(loss);
            losses.push(g.tape.scalar(loss));
            let pg = g.param_grads(&mut grads);
            opt.step(&mut self.store, &pg);
        }
        Ok(losses)
    }

    pub fn save(&self, dir: &Path) -> std::io::Result<()> {
        let meta = serde_json::json!({
            "version": EXTRACTOR_VERSION,
            "config": self.cfg,
            "vocab": self.vocab,
            "n_frames": self.n_frames,
            "frame_width": self.frame_width,
        });
        let mut a = Archive::new(EXTRACTOR_KIND, meta);
        self.store.write_into(&mut a, "params");
        let d = self.frame_width;
        a.push("normalizer", NamedArray::f64("mean", vec![d], self.norm.mean.clone()));
        a.push("normalizer", NamedArray::f64("std", vec![d], self.norm.std.clone()));
        a.write(dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let a = Archive::read(dir)?;
        if a.kind != EXTRACTOR_KIND || a.meta["version"].as_u64() != Some(EXTRACTOR_VERSION) {
            return Err(LoadError::Manifest(format!("not a version {EXTRACTOR_VERSION} feature extractor")).into());
        }
        let cfg: ExtractorConfig = serde_json::from_value(a.meta["config"].clone())
            .map_err(|e| Error::from(LoadError::Manifest(format!("extractor config: {e}"))))?;
        let num = |k: &str| {
            a.meta[k].as_u64().map(|v| v as usize).ok_or_else(|| Error::from(LoadError::Manifest(format!("missing `{k}`"))))
        };
        let mut ex = Self::new(cfg, num("vocab")?, num("n_frames")?, num("frame_width")?, 0)?;
        ex.store.read_from(&a, "params")?;
        let mean = a.array("normalizer", "mean")?.as_f64();
        let std = a.array("normalizer", "std")?.as_f64();
        if mean.len() != ex.frame_width || std.len() != ex.frame_width {
            return Err(LoadError::Content { array: "normalizer".into(), reason: "width mismatch".into() }.into());
        }
        ex.norm = Normalizer { mean, std };
        Ok(ex)
    }
}
