//! Condition encoders: text, object points, body motion and contact maps.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::hoi_core::rotation::Vec3;
use crate::hoi_core::{BodyPoseSequence, KinematicBody, Mat, PAD};
use crate::nn::{sinusoidal, Builder, Graph, Linear, Mlp, ParamId, TransformerBlock};

/// Points are fed in decimeters so first-layer activations start near unit scale.
const POINT_SCALE: f64 = 10.0;

/// Bag-of-tokens text encoder: embedding lookup, mean over the padded
/// sequence, then an MLP.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    embed: ParamId,
    mlp: Mlp,
    vocab: usize,
}

impl TextEncoder {
    pub fn new(bld: &mut Builder, name: &str, vocab: usize, width: usize) -> Self {
        bld.scoped(name, |b| Self {
            embed: b.uniform("embed", vocab, width, 1.0),
            mlp: Mlp::new(b, "mlp", width, width, width),
            vocab,
        })
    }

    /// B × width
    pub fn forward(&self, g: &mut Graph, tokens: &[Vec<u32>]) -> Result<Var> {
        let len = tokens.iter().map(Vec::len).max().unwrap_or(0).max(1);
        let mut idx = Vec::with_capacity(tokens.len() * len);
        for t in tokens {
            if let Some(bad) = t.iter().find(|&&x| x as usize >= self.vocab) {
                return Err(Error::Structural(format!("token {bad} outside a vocabulary of {}", self.vocab)));
            }
            idx.extend(t.iter().map(|&x| x as usize));
            idx.extend(std::iter::repeat_n(PAD as usize, len - t.len()));
        }
        let e = g.param(self.embed);
        let rows = g.tape.gather_rows(e, idx);
        let pooled = g.tape.segment_mean(rows, len);
        Ok(self.mlp.forward(g, pooled))
    }
}

/// Shared per-point MLP followed by max pooling; the pooled code is invariant
/// to point order and the per-point states are exposed for the contact
/// predictor.
#[derive(Clone, Debug)]
pub struct ObjectEncoder {
    point: Mlp,
    out: Linear,
}

pub struct ObjectCodes {
    /// (B·P) × point width
    pub per_point: Var,
    /// B × output width
    pub pooled: Var,
}

impl ObjectEncoder {
    pub fn new(bld: &mut Builder, name: &str, point_width: usize, width: usize) -> Self {
        bld.scoped(name, |b| Self {
            point: Mlp::new(b, "point", 3, point_width, point_width),
            out: Linear::new(b, "out", point_width, width),
        })
    }

    pub fn forward(&self, g: &mut Graph, clouds: &[&Mat]) -> Result<ObjectCodes> {
        let p = clouds.first().map(|c| c.nrows()).unwrap_or(0);
        if p == 0 || clouds.iter().any(|c| c.nrows() != p || c.ncols() != 3) {
            return Err(Error::Structural("object clouds must all be P × 3 with P > 0".into()));
        }
        let views: Vec<_> = clouds.iter().map(|c| c.view()).collect();
        let stacked = ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths") * POINT_SCALE;
        let x = g.constant(stacked);
        let per_point = self.point.forward(g, x);
        let pooled = g.tape.segment_max(per_point, p);
        let pooled = self.out.forward(g, pooled);
        Ok(ObjectCodes { per_point, pooled })
    }
}

/// Per-frame body features: pose parameters, hand joint positions and both
/// wrist orientations, all from forward kinematics.
pub fn body_features(body: &BodyPoseSequence, skel: &KinematicBody) -> Result<Mat> {
    let d = skel.pose_width();
    if body.frames.ncols() != d {
        return Err(Error::Structural(format!("pose width {} does not match skeleton width {d}", body.frames.ncols())));
    }
    let wrists: Vec<usize> = ["r_wrist", "l_wrist"].iter().filter_map(|n| skel.joint(n)).collect();
    let width = d + 3 * skel.hands.len() + 9 * wrists.len();
    let mut out = Mat::zeros((body.n_frames(), width));
    for (f, frame) in body.frames.rows().into_iter().enumerate() {
        let (pos, rot) = skel.pose_frame(frame);
        let mut row = out.row_mut(f);
        let mut c = 0;
        for v in frame.iter() {
            row[c] = *v;
            c += 1;
        }
        for &h in &skel.hands {
            let p: Vec3 = pos[h];
            for k in 0..3 {
                row[c] = p[k];
                c += 1;
            }
        }
        for &w in &wrists {
            for v in rot[w].iter() {
                row[c] = *v;
                c += 1;
            }
        }
    }
    Ok(out)
}

pub fn body_feature_width(skel: &KinematicBody) -> usize {
    let wrists = ["r_wrist", "l_wrist"].iter().filter(|n| skel.joint(n).is_some()).count();
    skel.pose_width() + 3 * skel.hands.len() + 9 * wrists
}

/// Transformer over frames producing one embedding per frame.
#[derive(Clone, Debug)]
pub struct BodyEncoder {
    inp: Linear,
    block: TransformerBlock,
    out: Linear,
    hidden: usize,
}

impl BodyEncoder {
    pub fn new(bld: &mut Builder, name: &str, features: usize, hidden: usize, heads: usize, width: usize) -> Self {
        bld.scoped(name, |b| Self {
            inp: Linear::new(b, "in", features, hidden),
            block: TransformerBlock::new(b, "block", hidden, heads, 2 * hidden),
            out: Linear::new(b, "out", hidden, width),
            hidden,
        })
    }

    /// (B·N) × width
    pub fn forward(&self, g: &mut Graph, feats: &[&Mat]) -> Result<Var> {
        let n = feats.first().map(|f| f.nrows()).unwrap_or(0);
        if n == 0 || feats.iter().any(|f| f.dim() != feats[0].dim()) {
            return Err(Error::Structural("body feature sequences must share one shape".into()));
        }
        let views: Vec<_> = feats.iter().map(|f| f.view()).collect();
        let x = g.constant(ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths"));
        let h = self.inp.forward(g, x);
        let pos = sinusoidal(&(0..n).map(|i| i as f64).collect::<Vec<_>>(), self.hidden);
        let pos = tile_rows(&pos, feats.len());
        let pos = g.constant(pos);
        let h = g.tape.add(h, pos);
        let h = self.block.forward(g, h, feats.len());
        Ok(self.out.forward(g, h))
    }
}

/// Per-point MLP over each point's position and contact value, max-pooled,
/// so the code says where on the object the contact region lies.
#[derive(Clone, Debug)]
pub struct ContactEncoder {
    point: Mlp,
    out: Linear,
}

impl ContactEncoder {
    pub fn new(bld: &mut Builder, name: &str, point_width: usize, width: usize) -> Self {
        bld.scoped(name, |b| Self {
            point: Mlp::new(b, "point", 7, point_width, point_width),
            out: Linear::new(b, "out", point_width, width),
        })
    }

    pub fn forward(&self, g: &mut Graph, maps: &[&[f64]], clouds: &[&Mat]) -> Result<Var> {
        let p = clouds.first().map(|c| c.nrows()).unwrap_or(0);
        if maps.len() != clouds.len() || p == 0 || clouds.iter().zip(maps).any(|(c, m)| c.nrows() != p || c.ncols() != 3 || m.len() != p) {
            return Err(Error::Structural("one P-entry contact map per P × 3 object cloud".into()));
        }
        let mut x = Mat::zeros((maps.len() * p, 7));
        for (i, (c, m)) in clouds.iter().zip(maps).enumerate() {
            for j in 0..p {
                let mut row = x.row_mut(i * p + j);
                row[3] = m[j];
                for a in 0..3 {
                    row[a] = c[[j, a]] * POINT_SCALE;
                    row[4 + a] = c[[j, a]] * POINT_SCALE * m[j];
                }
            }
        }
        let x = g.constant(x);
        let h = self.point.forward(g, x);
        let pooled = g.tape.segment_max(h, p);
        Ok(self.out.forward(g, pooled))
    }
}

/// Repeats the rows of `m` `times` times, block after block.
pub fn tile_rows(m: &Mat, times: usize) -> Mat {
    let views: Vec<_> = (0..times).map(|_| m.view()).collect();
    ndarray::concatenate(ndarray::Axis(0), &views).expect("same widths")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn object_code_ignores_point_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let enc = ObjectEncoder::new(&mut Builder::new(&mut store, &mut rng), "obj", 16, 32);
        let pts = Mat::from_shape_fn((40, 3), |(i, j)| ((i * 3 + j) as f64 * 0.37).sin() * 0.2);
        let mut order: Vec<usize> = (0..40).collect();
        order.shuffle(&mut rng);
        let shuffled = pts.select(ndarray::Axis(0), &order);
        let a = {
            let mut g = Graph::new(&store);
            let c = enc.forward(&mut g, &[&pts]).unwrap();
            g.value(c.pooled).clone()
        };
        let b = {
            let mut g = Graph::new(&store);
            let c = enc.forward(&mut g, &[&shuffled]).unwrap();
            g.value(c.pooled).clone()
        };
        assert_eq!(a.dim(), (1, 32));
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn contact_code_is_order_invariant_and_sees_the_region() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let enc = ContactEncoder::new(&mut Builder::new(&mut store, &mut rng), "c", 16, 24);
        let pts = Mat::from_shape_fn((10, 3), |(p, c)| ((p * 3 + c) as f64 * 0.37).sin() * 0.1);
        let map: Vec<f64> = (0..10).map(|p| f64::from(u8::from(p < 3))).collect();
        let moved: Vec<f64> = (0..10).map(|p| f64::from(u8::from(p >= 7))).collect();
        let mut order: Vec<usize> = (0..10).collect();
        order.shuffle(&mut rng);
        let code = |m: &[f64], c: &Mat| {
            let mut g = Graph::new(&store);
            let v = enc.forward(&mut g, &[m], &[c]).unwrap();
            g.value(v).clone()
        };
        let a = code(&map, &pts);
        assert_eq!(a.dim(), (1, 24));
        let shuffled_map: Vec<f64> = order.iter().map(|&i| map[i]).collect();
        let b = code(&shuffled_map, &pts.select(ndarray::Axis(0), &order));
        assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() < 1e-9));
        let c = code(&moved, &pts);
        assert!(a.iter().zip(c.iter()).any(|(x, y)| (x - y).abs() > 1e-6));
        let mut g = Graph::new(&store);
        assert!(enc.forward(&mut g, &[&map[..3]], &[&pts]).is_err());
    }

    #[test]
    fn body_features_have_declared_width() {
        let skel = KinematicBody::smpl_lite();
        let b = BodyPoseSequence::new(Mat::zeros((5, skel.pose_width())));
        let f = body_features(&b, &skel).unwrap();
        assert_eq!(f.dim(), (5, body_feature_width(&skel)));
        // identity wrist orientation shows up as an identity matrix block
        let w = f.ncols() - 18;
        assert_eq!(f[[0, w]], 1.0);
        assert_eq!(f[[0, w + 4]], 1.0);
    }
}
