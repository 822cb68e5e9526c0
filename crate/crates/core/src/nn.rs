//! Parameter storage, layers and the Adam optimizer built on [`crate::autodiff`].

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Gradients, Mat, Tape, Var};
use crate::container::{Archive, LoadError, NamedArray};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named, ordered set of trainable matrices.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|m| m.len()).sum()
    }

    /// SHA-256 over names, shapes and little-endian parameter bytes.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, m) in self.iter() {
            h.update(name.as_bytes());
            h.update((m.nrows() as u64).to_le_bytes());
            h.update((m.ncols() as u64).to_le_bytes());
            for v in m.iter() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn to_named(&self) -> BTreeMap<String, Mat> {
        self.iter().map(|(n, m)| (n.to_string(), m.clone())).collect()
    }

    /// Overwrites values from a name → matrix map; every parameter must be
    /// present with a matching shape.
    pub fn load_named(&mut self, named: &BTreeMap<String, Mat>) -> Result<(), String> {
        for (name, value) in self.names.iter().zip(self.values.iter_mut()) {
            let src = named
                .get(name)
                .ok_or_else(|| format!("missing parameter `{name}`"))?;
            if src.dim() != value.dim() {
                return Err(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    src.dim(),
                    value.dim()
                ));
            }
            value.assign(src);
        }
        Ok(())
    }

    /// Appends every parameter as an f64 array to `blob`.
    pub fn write_into(&self, archive: &mut Archive, blob: &str) {
        for (name, m) in self.iter() {
            archive.push(blob, NamedArray::f64(name, vec![m.nrows(), m.ncols()], m.iter().copied().collect()));
        }
    }

    /// Loads every parameter from `blob`.
    pub fn read_from(&mut self, archive: &Archive, blob: &str) -> Result<(), LoadError> {
        let mut named = BTreeMap::new();
        for arr in archive.blob(blob).unwrap_or_default() {
            if arr.shape.len() != 2 {
                return Err(LoadError::Content { array: arr.name.clone(), reason: format!("expected a matrix, found shape {:?}", arr.shape) });
            }
            named.insert(arr.name.clone(), Mat::from_shape_vec((arr.shape[0], arr.shape[1]), arr.as_f64()).expect("shape checked by the reader"));
        }
        self.load_named(&named).map_err(|reason| LoadError::Content { array: blob.to_string(), reason })
    }
}

/// A tape bound to a parameter store; parameters become leaves on first use.
pub struct Graph<'p> {
    pub tape: Tape,
    store: &'p ParamStore,
    leaves: Vec<Option<Var>>,
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            tape: Tape::new(),
            store,
            leaves: vec![None; store.len()],
        }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.leaves[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.store.get(id).clone());
        self.leaves[id.0] = Some(v);
        v
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.tape.leaf(m)
    }

    pub fn value(&self, v: Var) -> &Mat {
        self.tape.value(v)
    }

    /// Gradients for every parameter reached by the graph, indexed by id.
    pub fn param_grads(&self, grads: &mut Gradients) -> Vec<Option<Mat>> {
        self.leaves
            .iter()
            .map(|leaf| leaf.and_then(|v| grads.take(v)))
            .collect()
    }
}

/// Scoped parameter builder with a deterministic initializer.
pub struct Builder<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn scoped<T>(&mut self, name: &str, f: impl FnOnce(&mut Builder) -> T) -> T {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        let mut inner = Builder {
            store: self.store,
            rng: self.rng,
            prefix,
        };
        f(&mut inner)
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn uniform(&mut self, name: &str, rows: usize, cols: usize, bound: f64) -> ParamId {
        let m = Array2::from_shape_fn((rows, cols), |_| self.rng.random_range(-bound..bound));
        let n = self.full_name(name);
        self.store.add(n, m)
    }

    pub fn constant(&mut self, name: &str, rows: usize, cols: usize, v: f64) -> ParamId {
        let n = self.full_name(name);
        self.store.add(n, Array2::from_elem((rows, cols), v))
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub fn new(bld: &mut Builder, name: &str, input: usize, output: usize) -> Self {
        bld.scoped(name, |b| {
            let bound = (6.0 / (input + output) as f64).sqrt();
            Self {
                w: b.uniform("weight", input, output, bound),
                b: b.constant("bias", 1, output, 0.0),
            }
        })
    }

    /// Zero-initialized projection; used for output heads of residual models.
    pub fn zeros(bld: &mut Builder, name: &str, input: usize, output: usize) -> Self {
        bld.scoped(name, |b| Self {
            w: b.constant("weight", input, output, 0.0),
            b: b.constant("bias", 1, output, 0.0),
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.tape.matmul(x, w);
        g.tape.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    gain: ParamId,
    bias: ParamId,
}

impl LayerNorm {
    pub fn new(bld: &mut Builder, name: &str, width: usize) -> Self {
        bld.scoped(name, |b| Self {
            gain: b.constant("gain", 1, width, 1.0),
            bias: b.constant("bias", 1, width, 0.0),
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.tape.layer_norm(x, gain, bias, 1e-5)
    }
}

/// Two-layer perceptron with a SiLU hidden activation.
#[derive(Clone, Debug)]
pub struct Mlp {
    fc1: Linear,
    fc2: Linear,
}

impl Mlp {
    pub fn new(bld: &mut Builder, name: &str, input: usize, hidden: usize, output: usize) -> Self {
        bld.scoped(name, |b| Self {
            fc1: Linear::new(b, "fc1", input, hidden),
            fc2: Linear::new(b, "fc2", hidden, output),
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.fc1.forward(g, x);
        let h = g.tape.silu(h);
        self.fc2.forward(g, h)
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn new(bld: &mut Builder, name: &str, width: usize, heads: usize) -> Self {
        assert!(width % heads == 0, "width must divide into heads");
        bld.scoped(name, |b| Self {
            wq: Linear::new(b, "q", width, width),
            wk: Linear::new(b, "k", width, width),
            wv: Linear::new(b, "v", width, width),
            wo: Linear::new(b, "out", width, width),
            heads,
        })
    }

    /// `query` rows are `(batch * tq)`, `context` rows `(batch * tk)`.
    pub fn forward(&self, g: &mut Graph, query: Var, context: Var, batch: usize) -> Var {
        let q = self.wq.forward(g, query);
        let k = self.wk.forward(g, context);
        let v = self.wv.forward(g, context);
        let a = g.tape.attention(q, k, v, batch, self.heads);
        self.wo.forward(g, a)
    }
}

/// Pre-norm self-attention block.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ff: Mlp,
}

impl TransformerBlock {
    pub fn new(bld: &mut Builder, name: &str, width: usize, heads: usize, ff: usize) -> Self {
        bld.scoped(name, |b| Self {
            ln1: LayerNorm::new(b, "ln1", width),
            attn: MultiHeadAttention::new(b, "attn", width, heads),
            ln2: LayerNorm::new(b, "ln2", width),
            ff: Mlp::new(b, "ff", width, ff, width),
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var, batch: usize) -> Var {
        let h = self.ln1.forward(g, x);
        let a = self.attn.forward(g, h, h, batch);
        let x = g.tape.add(x, a);
        let h = self.ln2.forward(g, x);
        let f = self.ff.forward(g, h);
        g.tape.add(x, f)
    }
}

/// Post-norm cross-attention block: residual + layer norm around attention,
/// then around the feed-forward layer.
#[derive(Clone, Debug)]
pub struct CrossAttentionBlock {
    attn: MultiHeadAttention,
    ln1: LayerNorm,
    ff: Mlp,
    ln2: LayerNorm,
}

impl CrossAttentionBlock {
    pub fn new(bld: &mut Builder, name: &str, width: usize, heads: usize, ff: usize) -> Self {
        bld.scoped(name, |b| Self {
            attn: MultiHeadAttention::new(b, "attn", width, heads),
            ln1: LayerNorm::new(b, "ln1", width),
            ff: Mlp::new(b, "ff", width, ff, width),
            ln2: LayerNorm::new(b, "ln2", width),
        })
    }

    pub fn forward(&self, g: &mut Graph, query: Var, context: Var, batch: usize) -> Var {
        let a = self.attn.forward(g, query, context, batch);
        let x = g.tape.add(query, a);
        let x = self.ln1.forward(g, x);
        let f = self.ff.forward(g, x);
        let x = g.tape.add(x, f);
        self.ln2.forward(g, x)
    }
}

/// Sinusoidal embedding of integer positions or diffusion steps.
pub fn sinusoidal(positions: &[f64], width: usize) -> Mat {
    let half = width / 2;
    Array2::from_shape_fn((positions.len(), width), |(i, j)| {
        let k = (j % half) as f64;
        let freq = (-(10000f64).ln() * k / half as f64).exp();
        let a = positions[i] * freq;
        if j < half {
            a.sin()
        } else {
            a.cos()
        }
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Mat> = store.iter().map(|(_, m)| Mat::zeros(m.dim())).collect();
        Self {
            cfg,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Mat>]) {
        self.t += 1;
        let scale = match self.cfg.clip_norm {
            Some(c) => {
                let norm = grads
                    .iter()
                    .flatten()
                    .map(|g| g.iter().map(|x| x * x).sum::<f64>())
                    .sum::<f64>()
                    .sqrt();
                if norm > c {
                    c / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let lr = self.cfg.lr;
        let eps = self.cfg.eps;
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let p = store.get_mut(ParamId(i));
            ndarray::Zip::from(p)
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(g)
                .for_each(|p, m, v, &g| {
                    let g = g * scale;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn adam_fits_linear_regression() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let lin = {
            let mut b = Builder::new(&mut store, &mut rng);
            Linear::new(&mut b, "lin", 2, 1)
        };
        let x = Mat::from_shape_fn((16, 2), |(i, j)| ((i * 3 + j * 5) % 7) as f64 / 7.0);
        let y = x.dot(&ndarray::array![[2.0], [-1.0]]) + 0.5;
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.05,
                clip_norm: None,
                ..AdamConfig::default()
            },
            &store,
        );
        let mut last = f64::INFINITY;
        for _ in 0..500 {
            let (loss, grads) = {
                let mut g = Graph::new(&store);
                let xv = g.constant(x.clone());
                let p = lin.forward(&mut g, xv);
                let l = g.tape.sq_err_sum(p, y.clone(), 1.0 / 16.0);
                let mut gr = g.tape.backward(l);
                (g.tape.scalar(l), g.param_grads(&mut gr))
            };
            opt.step(&mut store, &grads);
            last = loss;
        }
        assert!(last < 1e-4, "final loss {last}");
    }

    #[test]
    fn digest_tracks_values() {
        let mut s = ParamStore::new();
        let id = s.add("a", Mat::zeros((2, 2)));
        let d0 = s.digest();
        s.get_mut(id)[[0, 0]] = 1.0;
        assert_ne!(d0, s.digest());
    }
}
