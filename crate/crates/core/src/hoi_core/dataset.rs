use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    BodyLayout, BodyPoseSequence, HOISample, Mat, ObjectGeometry, ObjectPostureSequence, Split,
    TextInstruction, Vocabulary, PAD,
};
use crate::container::{Archive, LoadError, NamedArray};

pub const DATASET_KIND: &str = "hoi-dataset";
const CONTACT_BLOB: &str = "contact";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n_frames: usize,
    pub hand_joints: usize,
    pub points: usize,
    pub layout: BodyLayout,
    pub vocabulary: Vocabulary,
    pub action_names: Vec<String>,
    pub object_names: Vec<String>,
    /// Whatever produced the data (a generator spec, usually).
    #[serde(default)]
    pub source: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    /// Sorted by `sample_id`.
    pub samples: Vec<HOISample>,
    /// Optional per-sample, per-point ground-truth contact labels.
    pub contact: Option<Vec<Vec<bool>>>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &HOISample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.samples[i].split == split).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn to_archive(&self) -> Archive {
        let counts: serde_json::Map<_, _> = Split::ALL
            .iter()
            .map(|s| (s.name().to_string(), self.count(*s).into()))
            .collect();
        let meta = serde_json::json!({ "dataset": self.meta, "counts": counts });
        let mut archive = Archive::new(DATASET_KIND, meta);
        let (n, p, d) = (self.meta.n_frames, self.meta.points, self.meta.layout.width());
        let tmax = self.samples.iter().map(|s| s.text.tokens.len()).max().unwrap_or(0);
        for split in Split::ALL {
            let items: Vec<&HOISample> = self.split(split).collect();
            let c = items.len();
            let blob = split.name();
            let f32s = |m: &Mat| m.iter().map(|&v| v as f32).collect::<Vec<f32>>();
            archive.push(blob, NamedArray::i32("sample_id", vec![c], items.iter().map(|s| s.sample_id as i32).collect()));
            archive.push(blob, NamedArray::i32("action", vec![c], items.iter().map(|s| s.text.action_label as i32).collect()));
            let mut tokens = Vec::with_capacity(c * tmax);
            for s in &items {
                tokens.extend(s.text.tokens.iter().map(|&t| t as i32));
                tokens.extend(std::iter::repeat_n(PAD as i32, tmax - s.text.tokens.len()));
            }
            archive.push(blob, NamedArray::i32("tokens", vec![c, tmax], tokens));
            archive.push(blob, NamedArray::f32("body", vec![c, n, d], items.iter().flat_map(|s| f32s(&s.body.frames)).collect()));
            archive.push(
                blob,
                NamedArray::f32("object_motion", vec![c, n, 6], items.iter().flat_map(|s| f32s(&s.object_motion.frames)).collect()),
            );
            archive.push(blob, NamedArray::f32("points", vec![c, p, 3], items.iter().flat_map(|s| f32s(&s.geometry.points)).collect()));
            archive.push(blob, NamedArray::i32("object_class", vec![c], items.iter().map(|s| s.geometry.class_id as i32).collect()));
            archive.push(blob, NamedArray::f32("scale", vec![c, 3], items.iter().flat_map(|s| s.geometry.scale.map(|v| v as f32)).collect()));
        }
        if let Some(contact) = &self.contact {
            let c = self.samples.len();
            archive.push(CONTACT_BLOB, NamedArray::i32("contact/sample_id", vec![c], self.samples.iter().map(|s| s.sample_id as i32).collect()));
            archive.push(
                CONTACT_BLOB,
                NamedArray::i32("contact/labels", vec![c, p], contact.iter().flatten().map(|&b| b as i32).collect()),
            );
        }
        archive
    }

    pub fn from_archive(archive: &Archive) -> Result<Self, LoadError> {
        if archive.kind != DATASET_KIND {
            return Err(LoadError::Manifest(format!("expected kind `{DATASET_KIND}`, found `{}`", archive.kind)));
        }
        let meta: DatasetMeta = serde_json::from_value(archive.meta["dataset"].clone())
            .map_err(|e| LoadError::Manifest(format!("dataset metadata: {e}")))?;
        let (n, p, d) = (meta.n_frames, meta.points, meta.layout.width());
        let mut samples = Vec::new();
        for split in Split::ALL {
            let blob = split.name();
            let ids = archive.array(blob, "sample_id")?;
            let c = ids.shape[0];
            let declared = archive.meta["counts"][blob].as_u64();
            if declared != Some(c as u64) {
                return Err(LoadError::Content {
                    array: format!("{blob}/sample_id"),
                    reason: format!("manifest declares {declared:?} samples, blob holds {c}"),
                });
            }
            let get = |name: &str, shape: &[usize]| -> Result<&NamedArray, LoadError> {
                let a = archive.array(blob, name)?;
                if a.shape != shape {
                    return Err(LoadError::ShapeMismatch { array: format!("{blob}/{name}"), shape: a.shape.clone(), nbytes: 0 });
                }
                Ok(a)
            };
            let ids = ids.as_i32()?;
            let action = get("action", &[c])?.as_i32()?;
            let tok = archive.array(blob, "tokens")?;
            let tmax = tok.shape.get(1).copied().unwrap_or(0);
            let tok = get("tokens", &[c, tmax])?.as_i32()?;
            let body = get("body", &[c, n, d])?.as_f64();
            let motion = get("object_motion", &[c, n, 6])?.as_f64();
            let points = get("points", &[c, p, 3])?.as_f64();
            let class = get("object_class", &[c])?.as_i32()?;
            let scale = get("scale", &[c, 3])?.as_f64();
            for i in 0..c {
                let mut tokens: Vec<u32> = tok[i * tmax..(i + 1) * tmax].iter().map(|&t| t as u32).collect();
                while tokens.last() == Some(&PAD) {
                    tokens.pop();
                }
                let mut geometry = ObjectGeometry {
                    points: Mat::from_shape_vec((p, 3), points[i * p * 3..(i + 1) * p * 3].to_vec()).unwrap(),
                    class_id: class[i] as usize,
                    scale: [scale[3 * i], scale[3 * i + 1], scale[3 * i + 2]],
                };
                geometry.recenter();
                samples.push(HOISample {
                    body: BodyPoseSequence::new(Mat::from_shape_vec((n, d), body[i * n * d..(i + 1) * n * d].to_vec()).unwrap()),
                    object_motion: ObjectPostureSequence::new(
                        Mat::from_shape_vec((n, 6), motion[i * n * 6..(i + 1) * n * 6].to_vec()).unwrap(),
                    ),
                    geometry,
                    text: TextInstruction { raw: meta.vocabulary.decode(&tokens), tokens, action_label: action[i] as usize },
                    sample_id: ids[i] as u64,
                    split,
                });
            }
        }
        samples.sort_by_key(|s| s.sample_id);
        let contact = match archive.blob(CONTACT_BLOB) {
            None => None,
            Some(_) => {
                let ids = archive.array(CONTACT_BLOB, "contact/sample_id")?.as_i32()?;
                let labels = archive.array(CONTACT_BLOB, "contact/labels")?;
                if labels.shape != [ids.len(), p] || ids.len() != samples.len() {
                    return Err(LoadError::ShapeMismatch {
                        array: "contact/labels".into(),
                        shape: labels.shape.clone(),
                        nbytes: 0,
                    });
                }
                let flat = labels.as_i32()?;
                let mut rows: Vec<(i32, Vec<bool>)> =
                    ids.iter().enumerate().map(|(i, &id)| (id, flat[i * p..(i + 1) * p].iter().map(|&v| v != 0).collect())).collect();
                rows.sort_by_key(|r| r.0);
                Some(rows.into_iter().map(|r| r.1).collect())
            }
        };
        Ok(Self { meta, samples, contact })
    }
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> std::io::Result<()> {
    dataset.to_archive().write(dir)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, LoadError> {
    Dataset::from_archive(&Archive::read(dir)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let vocab = Vocabulary::new(&["a", "person", "the"], &["lifts", "pushes"], &["box"]);
        let meta = DatasetMeta {
            n_frames: 4,
            hand_joints: 1,
            points: 3,
            layout: BodyLayout::new(vec!["root".into()]),
            vocabulary: vocab.clone(),
            action_names: vec!["lift".into(), "push".into()],
            object_names: vec!["box".into()],
            source: serde_json::Value::Null,
        };
        let samples = (0..3u64)
            .map(|i| HOISample {
                body: BodyPoseSequence::new(Mat::from_shape_fn((4, 6), |(a, b)| ((a * 6 + b + i as usize) as f32 * 0.1f32) as f64)),
                object_motion: ObjectPostureSequence::identity(4),
                geometry: ObjectGeometry {
                    points: Mat::from_shape_vec((3, 3), vec![1.0, 0.0, 0.0, -1.0, 0.5, 0.0, 0.0, -0.5, 0.0]).unwrap(),
                    class_id: 0,
                    scale: [1.0; 3],
                },
                text: TextInstruction::parse(&vocab, if i % 2 == 0 { "a person lifts the box" } else { "a person pushes the box" }).unwrap(),
                sample_id: i,
                split: Split::ALL[i as usize],
            })
            .collect();
        Dataset { meta, samples, contact: Some(vec![vec![true, false, true]; 3]) }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny();
        save_dataset(&ds, dir.path()).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), ds);
    }

    #[test]
    fn empty_dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = tiny();
        ds.samples.clear();
        ds.contact = None;
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert!(back.samples.is_empty());
        assert_eq!(back.meta, ds.meta);
    }
}
