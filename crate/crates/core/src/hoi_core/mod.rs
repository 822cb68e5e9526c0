//! Shared domain types, geometry and dataset I/O.

mod dataset;
mod kinematics;
pub mod rotation;

use std::fmt;
use std::ops::Range;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::{load_dataset, save_dataset, Dataset, DatasetMeta};
pub use kinematics::{forward_kinematics, transform_object, JointPositions, KinematicBody, FINGERTIPS};

pub type Mat = Array2<f64>;

/// Pipeline-wide sequence length.
pub const DEFAULT_FRAMES: usize = 64;

/// Names the slices of a body pose frame: root translation, then one
/// axis-angle triple per rotated joint.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BodyLayout {
    pub joints: Vec<String>,
}

impl BodyLayout {
    pub fn new(joints: Vec<String>) -> Self {
        Self { joints }
    }

    pub fn width(&self) -> usize {
        3 + 3 * self.joints.len()
    }

    pub fn translation(&self) -> Range<usize> {
        0..3
    }

    pub fn rotation(&self, joint: &str) -> Option<Range<usize>> {
        let i = self.joints.iter().position(|j| j == joint)?;
        Some(3 + 3 * i..6 + 3 * i)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BodyPoseSequence {
    /// N × D_b
    pub frames: Mat,
}

impl BodyPoseSequence {
    pub fn new(frames: Mat) -> Self {
        Self { frames }
    }

    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    /// Wraps every axis-angle triple (all columns after the translation) to norm ≤ π.
    pub fn canonicalize(&mut self) {
        let d = self.frames.ncols();
        for mut row in self.frames.rows_mut() {
            for s in (3..d).step_by(3) {
                let w = rotation::canonicalize([row[s], row[s + 1], row[s + 2]]);
                row[s] = w[0];
                row[s + 1] = w[1];
                row[s + 2] = w[2];
            }
        }
    }

    pub fn validate(&self, width: usize) -> Result<()> {
        if self.frames.ncols() != width {
            return Err(Error::Structural(format!(
                "body width {} != {width}",
                self.frames.ncols()
            )));
        }
        if !self.frames.iter().all(|v| v.is_finite()) {
            return Err(Error::Structural("non-finite body pose entry".into()));
        }
        for row in self.frames.rows() {
            for s in (3..width).step_by(3) {
                let n = (row[s].powi(2) + row[s + 1].powi(2) + row[s + 2].powi(2)).sqrt();
                if n > std::f64::consts::PI + 1e-6 {
                    return Err(Error::Structural("axis-angle norm exceeds π".into()));
                }
            }
        }
        Ok(())
    }
}

/// Per frame: axis-angle rotation (3) then translation (3).
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectPostureSequence {
    pub frames: Mat,
}

impl ObjectPostureSequence {
    pub fn new(frames: Mat) -> Self {
        Self { frames }
    }

    pub fn identity(n: usize) -> Self {
        Self { frames: Mat::zeros((n, 6)) }
    }

    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectGeometry {
    /// P × 3 in the object frame.
    pub points: Mat,
    pub class_id: usize,
    pub scale: [f64; 3],
}

impl ObjectGeometry {
    pub fn centroid(&self) -> [f64; 3] {
        let m = self.points.mean_axis(ndarray::Axis(0)).expect("non-empty point set");
        [m[0], m[1], m[2]]
    }

    /// Moves the centroid to the origin unless it is already within 1e-6.
    pub fn recenter(&mut self) {
        let c = self.centroid();
        if c.iter().map(|v| v * v).sum::<f64>().sqrt() > 1e-6 {
            for mut row in self.points.rows_mut() {
                for k in 0..3 {
                    row[k] -= c[k];
                }
            }
        }
    }
}

/// Closed vocabulary with designated verb and noun slots.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub words: Vec<String>,
    /// Verb surface form per action label.
    pub verbs: Vec<String>,
    /// Noun per object class.
    pub nouns: Vec<String>,
}

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;

impl Vocabulary {
    pub fn new(filler: &[&str], verbs: &[&str], nouns: &[&str]) -> Self {
        let mut words = vec!["<pad>".to_string(), "<unk>".to_string()];
        words.extend(filler.iter().chain(verbs).chain(nouns).map(|w| w.to_string()));
        Self {
            words,
            verbs: verbs.iter().map(|w| w.to_string()).collect(),
            nouns: nouns.iter().map(|w| w.to_string()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.words.iter().position(|w| w == word).map_or(UNK, |i| i as u32)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.split_whitespace().map(|w| self.id(&w.to_lowercase())).collect()
    }

    pub fn decode(&self, tokens: &[u32]) -> String {
        tokens
            .iter()
            .filter(|&&t| t != PAD)
            .map(|&t| self.words.get(t as usize).map_or("<unk>", String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Action label of the first verb token; unknown verbs are a retrieval error.
    pub fn action_label(&self, tokens: &[u32]) -> Result<usize> {
        for &t in tokens {
            if let Some(w) = self.words.get(t as usize) {
                if let Some(a) = self.verbs.iter().position(|v| v == w) {
                    return Ok(a);
                }
            }
        }
        Err(Error::Retrieval { label: self.decode(tokens) })
    }

    pub fn object_class(&self, tokens: &[u32]) -> Option<usize> {
        tokens.iter().find_map(|&t| {
            let w = self.words.get(t as usize)?;
            self.nouns.iter().position(|n| n == w)
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextInstruction {
    pub tokens: Vec<u32>,
    pub action_label: usize,
    pub raw: String,
}

impl TextInstruction {
    pub fn parse(vocab: &Vocabulary, raw: &str) -> Result<Self> {
        let tokens = vocab.encode(raw);
        let action_label = vocab.action_label(&tokens)?;
        Ok(Self { tokens, action_label, raw: raw.to_string() })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HOISample {
    pub body: BodyPoseSequence,
    pub object_motion: ObjectPostureSequence,
    pub geometry: ObjectGeometry,
    pub text: TextInstruction,
    pub sample_id: u64,
    pub split: Split,
}

impl HOISample {
    pub fn action(&self) -> usize {
        self.text.action_label
    }

    pub fn validate(&self, pose_width: usize, vocab: &Vocabulary) -> Result<()> {
        self.body.validate(pose_width)?;
        let n = self.body.n_frames();
        if self.object_motion.frames.dim() != (n, 6) {
            return Err(Error::Structural("object motion shape does not match body".into()));
        }
        if !self.object_motion.frames.iter().chain(self.geometry.points.iter()).all(|v| v.is_finite()) {
            return Err(Error::Structural("non-finite object entry".into()));
        }
        if self.geometry.points.ncols() != 3 {
            return Err(Error::Structural("points must be P × 3".into()));
        }
        if self.text.tokens.iter().any(|&t| t as usize >= vocab.len()) {
            return Err(Error::Structural("token id outside the vocabulary".into()));
        }
        if vocab.action_label(&self.text.tokens)? != self.text.action_label {
            return Err(Error::Structural("action label does not match tokens".into()));
        }
        Ok(())
    }
}

/// Linear interpolation of the rows of `seq` onto `target` uniformly spaced
/// times. Endpoints are copied exactly; equal lengths return a bitwise copy.
pub fn resample(seq: &Mat, target: usize) -> Result<Mat> {
    let m = seq.nrows();
    if target < 2 {
        return Err(Error::Argument(format!("target length {target} < 2")));
    }
    if m < 2 {
        return Err(Error::Argument(format!("source length {m} < 2")));
    }
    if m == target {
        return Ok(seq.clone());
    }
    let mut out = Mat::zeros((target, seq.ncols()));
    let scale = (m - 1) as f64 / (target - 1) as f64;
    for i in 0..target {
        if i == target - 1 {
            out.row_mut(i).assign(&seq.row(m - 1));
            continue;
        }
        let t = i as f64 * scale;
        let lo = (t.floor() as usize).min(m - 2);
        let w = t - lo as f64;
        if w == 0.0 {
            out.row_mut(i).assign(&seq.row(lo));
        } else {
            let a = seq.slice(s![lo, ..]);
            let b = seq.slice(s![lo + 1, ..]);
            out.row_mut(i).assign(&(&a * (1.0 - w) + &b * w));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn resample_examples() {
        let x = Mat::from_shape_vec((2, 1), vec![0.0, 1.0]).unwrap();
        let y = resample(&x, 5).unwrap();
        assert_eq!(y.column(0).to_vec(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let c = Mat::from_elem((7, 3), 0.3);
        assert!(resample(&c, 13).unwrap().iter().all(|&v| v == 0.3));
        let r = Mat::from_shape_fn((9, 2), |(i, j)| (i * 7 + j) as f64 * 0.37);
        assert_eq!(resample(&r, 9).unwrap(), r);
        assert!(matches!(resample(&r, 1), Err(Error::Argument(_))));
    }

    proptest! {
        #[test]
        fn resample_composes_on_linear_inputs(
            a in -5.0f64..5.0, b in -5.0f64..5.0, len in 2usize..40, n in 2usize..40, extra in 0usize..40,
        ) {
            let m = n + extra;
            let x = Mat::from_shape_fn((len, 1), |(i, _)| a + b * i as f64 / (len - 1) as f64);
            let direct = resample(&x, n).unwrap();
            let twice = resample(&resample(&x, m).unwrap(), n).unwrap();
            for (p, q) in direct.iter().zip(twice.iter()) {
                prop_assert!((p - q).abs() < 1e-6);
            }
        }

        #[test]
        fn resample_composes_on_refined_grids(len in 2usize..12, k in 1usize..5, seed in 0u64..1000) {
            // knots of the source are a subset of the intermediate grid
            let x = Mat::from_shape_fn((len, 2), |(i, j)| ((seed as f64 + 1.3 * i as f64 + j as f64) * 0.71).sin());
            let m = k * (len - 1) + 1;
            let twice = resample(&resample(&x, m).unwrap(), len).unwrap();
            for (p, q) in x.iter().zip(twice.iter()) {
                prop_assert!((p - q).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn vocabulary_round_trip() {
        let v = Vocabulary::new(&["a", "person", "the"], &["lifts", "pushes"], &["box"]);
        let t = TextInstruction::parse(&v, "a person pushes the box").unwrap();
        assert_eq!(t.action_label, 1);
        assert_eq!(v.decode(&t.tokens), "a person pushes the box");
        assert_eq!(v.object_class(&t.tokens), Some(0));
        assert!(matches!(
            TextInstruction::parse(&v, "a person juggles the box"),
            Err(Error::Retrieval { .. })
        ));
    }
}
