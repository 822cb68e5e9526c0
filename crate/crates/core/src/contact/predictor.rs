use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Var, PROB_CLAMP};
use crate::container::{Archive, LoadError};
use crate::diffusion::encoders::{ObjectEncoder, TextEncoder};
use crate::error::{Error, Result};
use crate::hoi_core::Mat;
use crate::nn::{Builder, CrossAttentionBlock, Graph, Linear, ParamStore};

pub const PREDICTOR_KIND: &str = "contact-predictor";
const PREDICTOR_VERSION: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContactPredictorConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub ff: usize,
    pub text_width: usize,
    pub point_width: usize,
    pub object_width: usize,
}

impl Default for ContactPredictorConfig {
    fn default() -> Self {
        Self { layers: 2, heads: 4, d_model: 64, ff: 128, text_width: 256, point_width: 64, object_width: 512 }
    }
}

impl ContactPredictorConfig {
    /// Published depth: six cross-attention layers.
    pub fn published() -> Self {
        Self { layers: 6, d_model: 256, ff: 512, ..Self::default() }
    }
}

/// Cross-attention contact-part predictor. Each object point gets a query
/// built from the text code plus its own point token; keys and values are the
/// point tokens.
#[derive(Clone, Debug)]
pub struct ContactPredictor {
    pub cfg: ContactPredictorConfig,
    pub vocab: usize,
    pub store: ParamStore,
    /// Cleared until the parameters come from training or a checkpoint.
    pub trained: bool,
    text: TextEncoder,
    text_proj: Linear,
    object: ObjectEncoder,
    point_proj: Linear,
    blocks: Vec<CrossAttentionBlock>,
    head: Linear,
}

impl ContactPredictor {
    pub fn new(cfg: ContactPredictorConfig, vocab: usize, seed: u64) -> Result<Self> {
        if cfg.layers == 0 || cfg.heads == 0 || cfg.d_model % cfg.heads != 0 {
            return Err(Error::Config("contact predictor width must divide into its heads".into()));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder::new(&mut store, &mut rng);
        let d = cfg.d_model;
        let text = TextEncoder::new(&mut b, "text_enc", vocab, cfg.text_width);
        let text_proj = Linear::new(&mut b, "text_proj", cfg.text_width, d);
        let object = ObjectEncoder::new(&mut b, "object_enc", cfg.point_width, cfg.object_width);
        let point_proj = Linear::new(&mut b, "point_proj", cfg.point_width, d);
        let blocks = (0..cfg.layers).map(|i| CrossAttentionBlock::new(&mut b, &format!("block{i}"), d, cfg.heads, cfg.ff)).collect();
        let head = Linear::new(&mut b, "head", d, 1);
        Ok(Self { cfg, vocab, store, trained: false, text, text_proj, object, point_proj, blocks, head })
    }

    /// (B·P) × 1 probabilities.
    pub fn forward(&self, g: &mut Graph, tokens: &[Vec<u32>], clouds: &[&Mat]) -> Result<Var> {
        if tokens.len() != clouds.len() {
            return Err(Error::Contract("one text per object".into()));
        }
        let p = clouds.first().map(|c| c.nrows()).unwrap_or(0);
        let b = clouds.len();
        let ft = self.text.forward(g, tokens)?;
        let tq = self.text_proj.forward(g, ft);
        let codes = self.object.forward(g, clouds)?;
        let kv = self.point_proj.forward(g, codes.per_point);
        let owner: Vec<usize> = (0..b).flat_map(|i| std::iter::repeat_n(i, p)).collect();
        let tq = g.tape.gather_rows(tq, owner);
        let mut q = g.tape.add(tq, kv);
        for block in &self.blocks {
            q = block.forward(g, q, kv, b);
        }
        let logits = self.head.forward(g, q);
        Ok(g.tape.sigmoid(logits))
    }

    /// Per-point contact probabilities, one vector per (text, object) pair.
    pub fn predict(&self, tokens: &[Vec<u32>], clouds: &[&Mat]) -> Result<Vec<Vec<f64>>> {
        if !self.trained {
            return Err(Error::MissingDependency("the contact predictor has no trained parameters".into()));
        }
        self.predict_raw(tokens, clouds)
    }

    /// Like [`predict`](Self::predict) but without the trained-parameter check.
    pub fn predict_raw(&self, tokens: &[Vec<u32>], clouds: &[&Mat]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new(&self.store);
        let out = self.forward(&mut g, tokens, clouds)?;
        let v = g.value(out);
        let p = clouds.first().map(|c| c.nrows()).unwrap_or(0);
        Ok((0..clouds.len()).map(|i| (0..p).map(|k| v[[i * p + k, 0]]).collect()).collect())
    }

    /// Batch-mean of the summed binary cross-entropy, on the tape.
    pub fn loss(&self, g: &mut Graph, tokens: &[Vec<u32>], clouds: &[&Mat], labels: &[Vec<bool>]) -> Result<Var> {
        let probs = self.forward(g, tokens, clouds)?;
        let n = g.value(probs).nrows();
        let flat: Vec<f64> = labels.iter().flatten().map(|&c| f64::from(u8::from(c))).collect();
        if flat.len() != n {
            return Err(Error::Structural("labels do not match the point count".into()));
        }
        Ok(g.tape.bce_prob(probs, Mat::from_shape_vec((n, 1), flat).expect("sized above"), 1.0 / labels.len() as f64))
    }

    pub fn save(&self, dir: &Path) -> std::io::Result<()> {
        let meta = serde_json::json!({ "version": PREDICTOR_VERSION, "config": self.cfg, "vocab": self.vocab });
        let mut a = Archive::new(PREDICTOR_KIND, meta);
        self.store.write_into(&mut a, "params");
        a.write(dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let a = Archive::read(dir)?;
        if a.kind != PREDICTOR_KIND || a.meta["version"].as_u64() != Some(PREDICTOR_VERSION) {
            return Err(LoadError::Manifest(format!("not a version {PREDICTOR_VERSION} contact predictor checkpoint")).into());
        }
        let cfg: ContactPredictorConfig = serde_json::from_value(a.meta["config"].clone())
            .map_err(|e| Error::from(LoadError::Manifest(format!("predictor config: {e}"))))?;
        let vocab = a.meta["vocab"].as_u64().ok_or_else(|| Error::from(LoadError::Manifest("missing vocab size".into())))? as usize;
        let mut pred = Self::new(cfg, vocab, 0)?;
        pred.store.read_from(&a, "params")?;
        pred.trained = true;
        Ok(pred)
    }
}

/// L_c = −Σ_p [c_p ln c'_p + (1 − c_p) ln(1 − c'_p)], with c' clamped to
/// [1e-7, 1 − 1e-7].
pub fn contact_loss(labels: &[bool], probs: &[f64]) -> Result<f64> {
    if labels.len() != probs.len() {
        return Err(Error::Structural("labels and probabilities differ in length".into()));
    }
    Ok(labels
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if c {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum())
}

/// Area under the ROC curve, with tied scores counted as half.
pub fn roc_auc(labels: &[bool], scores: &[f64]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let pos = labels.iter().filter(|&&c| c).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    // rank-sum with average ranks over ties
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if labels[k] {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    Some((rank_sum - (pos * (pos + 1)) as f64 / 2.0) / (pos * neg) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ContactPredictor {
        let cfg = ContactPredictorConfig { layers: 1, heads: 2, d_model: 8, ff: 8, text_width: 6, point_width: 4, object_width: 6 };
        ContactPredictor::new(cfg, 5, 1).unwrap()
    }

    #[test]
    fn loss_closed_forms() {
        assert!((contact_loss(&[true; 4], &[0.5; 4]).unwrap() - 4.0 * 2f64.ln()).abs() < 1e-12);
        let exact = contact_loss(&[true, false], &[1.0, 0.0]).unwrap();
        assert!(exact <= 2.0 * 1e-7 * 1.01);
    }

    #[test]
    fn untrained_predictor_refuses() {
        let p = tiny();
        let cloud = Mat::from_shape_fn((6, 3), |(i, j)| (i + j) as f64 * 0.01);
        assert!(matches!(p.predict(&[vec![2, 3]], &[&cloud]), Err(Error::MissingDependency(_))));
    }

    #[test]
    fn outputs_are_probabilities_and_permute_with_points() {
        let p = tiny();
        let cloud = Mat::from_shape_fn((6, 3), |(i, j)| ((i * 3 + j) as f64).sin() * 0.1);
        let perm = [3, 0, 5, 1, 4, 2];
        let shuffled = cloud.select(ndarray::Axis(0), &perm);
        let a = p.predict_raw(&[vec![2, 3]], &[&cloud]).unwrap();
        let b = p.predict_raw(&[vec![2, 3]], &[&shuffled]).unwrap();
        assert!(a[0].iter().all(|&x| (0.0..=1.0).contains(&x)));
        for (k, &src) in perm.iter().enumerate() {
            assert!((b[0][k] - a[0][src]).abs() < 1e-9);
        }
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[false, true], &[0.1, 0.9]), Some(1.0));
        assert_eq!(roc_auc(&[true, false], &[0.1, 0.9]), Some(0.0));
        assert_eq!(roc_auc(&[true, false], &[0.5, 0.5]), Some(0.5));
        assert_eq!(roc_auc(&[true, true], &[0.5, 0.5]), None);
    }
}
