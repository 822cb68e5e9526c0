//! Canonical action set, residual decomposition and recomposition.
//!
//! A body sequence `b` of action `a` splits into the action's frame-wise mean
//! `b̃_a` and a residual `b̂ = b − b̃_a`. Canonical values are rounded onto the
//! f32 grid (and flushed to zero below 2⁻²⁶) so that, for the f32-valued data
//! the pipeline stores, subtraction and re-addition are exact in f64.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::container::{Archive, LoadError, NamedArray};
use crate::error::{Error, Result};
use crate::hoi_core::{BodyPoseSequence, HOISample, Mat};

pub const CANONICAL_KIND: &str = "canonical-set";
pub const CANONICAL_BLOB: &str = "canonical";

const FLUSH: f64 = 1.0 / (1u64 << 26) as f64;

#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalActionSet {
    entries: BTreeMap<usize, Mat>,
    counts: BTreeMap<usize, usize>,
    /// Human-readable names, indexed by label, used in retrieval errors.
    names: Vec<String>,
}

/// Residual of a body sequence against its action's canonical motion.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionStyleResidual {
    pub frames: Mat,
    pub action_label: usize,
}

#[derive(Serialize, Deserialize)]
struct CanonicalMeta {
    names: Vec<String>,
    n_frames: usize,
    width: usize,
}

fn snap(v: f64) -> f64 {
    if v.abs() < FLUSH {
        0.0
    } else {
        v as f32 as f64
    }
}

impl CanonicalActionSet {
    /// Frame-wise mean per action label. Samples are summed in `sample_id`
    /// order, so the result does not depend on the order they are passed in.
    pub fn build<'a>(samples: impl IntoIterator<Item = &'a HOISample>, names: &[String]) -> Result<Self> {
        let mut sorted: Vec<&HOISample> = samples.into_iter().collect();
        sorted.sort_by_key(|s| s.sample_id);
        let mut sums: BTreeMap<usize, Mat> = BTreeMap::new();
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for s in sorted {
            let frames = &s.body.frames;
            match sums.get_mut(&s.action()) {
                Some(acc) => {
                    if acc.dim() != frames.dim() {
                        return Err(Error::Structural(format!(
                            "sample {} has shape {:?}, expected {:?}",
                            s.sample_id,
                            frames.dim(),
                            acc.dim()
                        )));
                    }
                    *acc += frames;
                }
                None => {
                    sums.insert(s.action(), frames.clone());
                }
            }
            *counts.entry(s.action()).or_default() += 1;
        }
        let entries = sums
            .into_iter()
            .map(|(a, sum)| {
                let n = counts[&a] as f64;
                (a, sum.mapv(|v| snap(v / n)))
            })
            .collect();
        Ok(Self { entries, counts, names: names.to_vec() })
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.keys().copied()
    }

    pub fn count(&self, action: usize) -> usize {
        self.counts.get(&action).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn label_name(&self, action: usize) -> String {
        self.names.get(action).cloned().unwrap_or_else(|| format!("#{action}"))
    }

    pub fn retrieve(&self, action: usize) -> Result<&Mat> {
        self.entries.get(&action).ok_or_else(|| Error::Retrieval { label: self.label_name(action) })
    }

    pub fn residual(&self, body: &BodyPoseSequence, action: usize) -> Result<InteractionStyleResidual> {
        let base = self.retrieve(action)?;
        if base.dim() != body.frames.dim() {
            return Err(Error::Structural(format!(
                "body shape {:?} does not match canonical {:?}",
                body.frames.dim(),
                base.dim()
            )));
        }
        Ok(InteractionStyleResidual { frames: &body.frames - base, action_label: action })
    }

    /// Stores the set under the `canonical/` namespace of an archive.
    pub fn write_into(&self, archive: &mut Archive) {
        let (n, d) = self.entries.values().next().map(|m| m.dim()).unwrap_or((0, 0));
        let labels: Vec<i32> = self.entries.keys().map(|&a| a as i32).collect();
        let counts: Vec<i32> = self.entries.keys().map(|a| self.counts[a] as i32).collect();
        let frames: Vec<f32> = self.entries.values().flat_map(|m| m.iter().map(|&v| v as f32)).collect();
        let a = labels.len();
        archive.push(CANONICAL_BLOB, NamedArray::i32("canonical/labels", vec![a], labels));
        archive.push(CANONICAL_BLOB, NamedArray::i32("canonical/counts", vec![a], counts));
        archive.push(CANONICAL_BLOB, NamedArray::f32("canonical/frames", vec![a, n, d], frames));
        if let Some(obj) = archive.meta.as_object_mut() {
            let meta = CanonicalMeta { names: self.names.clone(), n_frames: n, width: d };
            obj.insert("canonical".into(), serde_json::to_value(meta).expect("plain struct"));
        }
    }

    pub fn to_archive(&self) -> Archive {
        let mut archive = Archive::new(CANONICAL_KIND, serde_json::json!({}));
        self.write_into(&mut archive);
        archive
    }

    pub fn read_from(archive: &Archive) -> Result<Self, LoadError> {
        let meta: CanonicalMeta = serde_json::from_value(archive.meta["canonical"].clone())
            .map_err(|e| LoadError::Manifest(format!("canonical metadata: {e}")))?;
        let labels = archive.array(CANONICAL_BLOB, "canonical/labels")?.as_i32()?.to_vec();
        let counts = archive.array(CANONICAL_BLOB, "canonical/counts")?.as_i32()?.to_vec();
        let frames = archive.array(CANONICAL_BLOB, "canonical/frames")?;
        let (n, d) = (meta.n_frames, meta.width);
        if frames.shape != [labels.len(), n, d] || counts.len() != labels.len() {
            return Err(LoadError::ShapeMismatch { array: "canonical/frames".into(), shape: frames.shape.clone(), nbytes: 0 });
        }
        let flat = frames.as_f64();
        let mut entries = BTreeMap::new();
        let mut count_map = BTreeMap::new();
        for (i, (&a, &c)) in labels.iter().zip(&counts).enumerate() {
            let m = Mat::from_shape_vec((n, d), flat[i * n * d..(i + 1) * n * d].to_vec()).expect("sized above");
            entries.insert(a as usize, m);
            count_map.insert(a as usize, c as usize);
        }
        Ok(Self { entries, counts: count_map, names: meta.names })
    }
}

pub fn build_canonical_set<'a>(samples: impl IntoIterator<Item = &'a HOISample>, names: &[String]) -> Result<CanonicalActionSet> {
    CanonicalActionSet::build(samples, names)
}

pub fn retrieve_canonical(set: &CanonicalActionSet, action: usize) -> Result<&Mat> {
    set.retrieve(action)
}

pub fn compute_residual(body: &BodyPoseSequence, set: &CanonicalActionSet, action: usize) -> Result<InteractionStyleResidual> {
    set.residual(body, action)
}

/// `b = b̃ + b̂`, with axis-angle triples wrapped to norm ≤ π.
pub fn recompose(base: &Mat, residual: &Mat) -> Result<BodyPoseSequence> {
    if base.dim() != residual.dim() {
        return Err(Error::Structural(format!(
            "canonical {:?} and residual {:?} differ in shape",
            base.dim(),
            residual.dim()
        )));
    }
    let mut b = BodyPoseSequence::new(base + residual);
    b.canonicalize();
    Ok(b)
}

/// Largest absolute entry of the per-class residual mean, over all classes.
pub fn max_class_mean_residual<'a>(set: &CanonicalActionSet, samples: impl IntoIterator<Item = &'a HOISample>) -> Result<f64> {
    let mut sums: BTreeMap<usize, (Mat, usize)> = BTreeMap::new();
    for s in samples {
        let r = set.residual(&s.body, s.action())?;
        let e = sums.entry(s.action()).or_insert_with(|| (Mat::zeros(r.frames.dim()), 0));
        e.0 += &r.frames;
        e.1 += 1;
    }
    Ok(sums
        .values()
        .map(|(m, c)| (m / *c as f64).iter().fold(0.0f64, |a, v| a.max(v.abs())))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hoi_core::{ObjectGeometry, ObjectPostureSequence, Split, TextInstruction};
    use proptest::prelude::*;

    fn sample(id: u64, action: usize, frames: Mat) -> HOISample {
        let n = frames.nrows();
        HOISample {
            body: BodyPoseSequence::new(frames),
            object_motion: ObjectPostureSequence::identity(n),
            geometry: ObjectGeometry { points: Mat::zeros((1, 3)), class_id: 0, scale: [1.0; 3] },
            text: TextInstruction { tokens: vec![], action_label: action, raw: String::new() },
            sample_id: id,
            split: Split::Train,
        }
    }

    fn names() -> Vec<String> {
        vec!["lift".into(), "push".into(), "sip".into()]
    }

    #[test]
    fn single_sample_is_its_own_canonical() {
        let x = Mat::from_shape_fn((4, 6), |(i, j)| ((i * 6 + j) as f32 * 0.1) as f64);
        let set = build_canonical_set([&sample(0, 0, x.clone())], &names()).unwrap();
        assert_eq!(set.retrieve(0).unwrap(), &x);
        let r = compute_residual(&BodyPoseSequence::new(x.clone()), &set, 0).unwrap();
        assert!(r.frames.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn symmetric_pair_averages_to_one() {
        let x = Mat::from_shape_fn((3, 6), |(i, j)| 0.25 * (i + j) as f64);
        let y = x.mapv(|v| 2.0 - v);
        let set = build_canonical_set([&sample(0, 1, x), &sample(1, 1, y)], &names()).unwrap();
        assert!(set.retrieve(1).unwrap().iter().all(|&v| v == 1.0));
        assert_eq!(set.count(1), 2);
    }

    #[test]
    fn unseen_label_is_an_error() {
        let set = build_canonical_set([&sample(0, 0, Mat::zeros((2, 6)))], &names()).unwrap();
        assert!(set.retrieve(0).is_ok());
        match set.retrieve(2) {
            Err(Error::Retrieval { label }) => assert_eq!(label, "sip"),
            other => panic!("expected a retrieval error, got {other:?}"),
        }
        let rebuilt = build_canonical_set([&sample(0, 0, Mat::zeros((2, 6))), &sample(1, 2, Mat::zeros((2, 6)))], &names()).unwrap();
        assert!(rebuilt.retrieve(2).is_ok());
    }

    #[test]
    fn recompose_checks_shapes() {
        assert!(matches!(recompose(&Mat::zeros((2, 6)), &Mat::zeros((3, 6))), Err(Error::Structural(_))));
        let z = Mat::from_elem((2, 6), 0.5);
        assert_eq!(recompose(&z, &Mat::zeros((2, 6))).unwrap().frames, z);
    }

    #[test]
    fn archive_round_trip() {
        let x = Mat::from_shape_fn((4, 6), |(i, j)| ((i + 2 * j) as f32 * 0.3) as f64);
        let set = build_canonical_set([&sample(3, 0, x.clone()), &sample(1, 2, -x)], &names()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        set.to_archive().write(dir.path()).unwrap();
        let back = CanonicalActionSet::read_from(&Archive::read(dir.path()).unwrap()).unwrap();
        assert_eq!(back, set);
    }

    proptest! {
        #[test]
        fn decompose_recompose_is_exact(vals in proptest::collection::vec(-3.0f32..3.0, 3 * 4 * 6), perm in 0usize..6) {
            let mats: Vec<Mat> = (0..3).map(|k| Mat::from_shape_fn((4, 6), |(i, j)| {
                let v = vals[k * 24 + i * 6 + j] as f64;
                // keep axis-angle triples inside the ball of radius π
                if j >= 3 { v * 0.5 } else { v }
            })).collect();
            let samples: Vec<HOISample> = mats.iter().enumerate().map(|(i, m)| sample(i as u64, 0, m.clone())).collect();
            let order = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]][perm];
            let a = build_canonical_set(samples.iter(), &names()).unwrap();
            let b = build_canonical_set(order.iter().map(|&i| &samples[i]), &names()).unwrap();
            prop_assert_eq!(&a, &b);
            for s in &samples {
                let r = a.residual(&s.body, 0).unwrap();
                let back = recompose(a.retrieve(0).unwrap(), &r.frames).unwrap();
                prop_assert_eq!(&back.frames, &s.body.frames);
            }
            prop_assert!(max_class_mean_residual(&a, samples.iter()).unwrap() <= 1e-6);
        }
    }
}
