use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hoi_core::{BodyPoseSequence, Dataset, HOISample, Mat, ObjectPostureSequence, Split};
use crate::interactor::CorrectionTrace;
use crate::metrics::{contact_metrics, diversity, fid, mean_ci, mm_dist, mmodality, r_precision, FeatureExtractor, HoiView, Summary};

use super::config::{AblationFlags, PipelineConfig};
use super::synth::{BodySynthesis, Pipeline, Request};
use super::train::{fan_out, labels_of, Workspace};

const SALT_EVAL: u64 = 20;
const SALT_METRIC: u64 = 21;
const SALT_NOISE: u64 = 22;

#[derive(Clone, Debug, Serialize)]
pub struct VariantReport {
    pub label: String,
    pub flags: AblationFlags,
    pub summary: BTreeMap<String, Summary>,
    pub per_repeat: BTreeMap<String, Vec<f64>>,
}

impl VariantReport {
    pub fn mean(&self, metric: &str) -> f64 {
        self.summary.get(metric).map_or(f64::NAN, |s| s.mean)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    /// Ground-truth test features scored the same way, plus the FID of
    /// moment-matched Gaussian noise.
    pub reference: BTreeMap<String, f64>,
    pub variants: Vec<VariantReport>,
    pub seconds: f64,
}

impl EvalReport {
    pub fn variant(&self, label: &str) -> Option<&VariantReport> {
        self.variants.iter().find(|v| v.label == label)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("reference\n");
        for (k, v) in &self.reference {
            let _ = writeln!(s, "  {k:<16} {v:.4}");
        }
        for v in &self.variants {
            let _ = writeln!(s, "{}", v.label);
            for (k, m) in &v.summary {
                let _ = writeln!(s, "  {k:<16} {m}");
            }
        }
        let _ = writeln!(s, "elapsed {:.1} s", self.seconds);
        s
    }

    /// One row per variant, metric and repeat.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,metric,repeat,value\n");
        for v in &self.variants {
            for (k, xs) in &v.per_repeat {
                for (i, x) in xs.iter().enumerate() {
                    let _ = writeln!(s, "{},{k},{i},{x}", v.label.replace(',', ";"));
                }
            }
        }
        s
    }

    pub fn write(&self, dir: &Path, name: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Structural(e.to_string()))?;
        std::fs::write(dir.join(format!("{name}.json")), json)?;
        std::fs::write(dir.join(format!("{name}.txt")), self.to_text())?;
        std::fs::write(dir.join(format!("{name}.csv")), self.to_csv())?;
        Ok(())
    }
}

/// Scores pipeline variants on the test split against a trained extractor.
pub struct Evaluator<'a> {
    pub pipe: &'a Pipeline,
    pub extractor: &'a FeatureExtractor,
    pub samples: Vec<&'a HOISample>,
    labels: Vec<Vec<bool>>,
    real: Vec<Vec<f64>>,
    text: Vec<Vec<f64>>,
}

fn moment_noise(frames: &[&Mat], rng: &mut ChaCha8Rng) -> Vec<Mat> {
    let n = frames.len() as f64;
    let mean = frames.iter().fold(Mat::zeros(frames[0].raw_dim()), |acc, m| acc + *m) / n;
    let var = frames.iter().fold(Mat::zeros(mean.raw_dim()), |acc, m| acc + (*m - &mean).mapv(|v| v * v)) / n;
    let std = var.mapv(f64::sqrt);
    frames
        .iter()
        .map(|_| {
            let z = Mat::from_shape_simple_fn(mean.raw_dim(), || StandardNormal.sample(rng));
            &mean + &(z * &std)
        })
        .collect()
}

impl<'a> Evaluator<'a> {
    pub fn new(pipe: &'a Pipeline, extractor: &'a FeatureExtractor, ds: &'a Dataset) -> Result<Self> {
        let all = labels_of(ds, &pipe.skel)?;
        let idx = ds.split_indices(Split::Test);
        if idx.len() < 2 {
            return Err(Error::Data("the test split needs at least two samples".into()));
        }
        let samples: Vec<&HOISample> = idx.iter().map(|&i| &ds.samples[i]).collect();
        let labels = idx.iter().map(|&i| all[i].clone()).collect();
        let views: Vec<HoiView> = samples.iter().map(|s| HoiView { body: &s.body, object: &s.object_motion, geometry: &s.geometry }).collect();
        let real = extractor.embed_hoi(&views, &pipe.skel)?;
        let text = extractor.embed_text(&samples.iter().map(|s| s.text.tokens.clone()).collect::<Vec<_>>())?;
        Ok(Self { pipe, extractor, samples, labels, real, text })
    }

    pub fn requests(&self) -> Vec<Request<'a>> {
        self.samples
            .iter()
            .zip(&self.labels)
            .map(|(s, l)| Request { tokens: s.text.tokens.clone(), geometry: &s.geometry, truth_contact: Some(l.clone()) })
            .collect()
    }

    fn text_groups(&self, feats: &[Vec<f64>]) -> Vec<Vec<Vec<f64>>> {
        let mut groups: BTreeMap<&[u32], Vec<Vec<f64>>> = BTreeMap::new();
        for (s, f) in self.samples.iter().zip(feats) {
            groups.entry(&s.text.tokens).or_default().push(f.clone());
        }
        groups.into_values().filter(|g| g.len() >= 2).collect()
    }

    /// Metrics of one set of generations, aligned with the test samples.
    pub fn score(&self, bodies: &[&BodyPoseSequence], objects: &[ObjectPostureSequence], seed: u64) -> Result<BTreeMap<String, f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let views: Vec<HoiView> = self
            .samples
            .iter()
            .zip(bodies.iter().zip(objects))
            .map(|(s, (b, o))| HoiView { body: b, object: o, geometry: &s.geometry })
            .collect();
        let feats = self.extractor.embed_hoi(&views, &self.pipe.skel)?;
        let mut out = self.feature_metrics(&feats, &mut rng)?;
        let mut prec = 0.0;
        let mut percent = 0.0;
        for (v, s) in views.iter().zip(&self.samples) {
            let c = contact_metrics(*v, HoiView { body: &s.body, object: &s.object_motion, geometry: &s.geometry }, &self.pipe.skel)?;
            prec += c.c_prec;
            percent += c.c_percent;
        }
        let n = views.len() as f64;
        out.insert("c_prec".into(), prec / n);
        out.insert("c_percent".into(), percent / n);
        Ok(out)
    }

    fn feature_metrics(&self, feats: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Result<BTreeMap<String, f64>> {
        let cfg = &self.pipe.cfg.eval;
        let mut out = BTreeMap::new();
        out.insert("fid".into(), fid(&self.real, feats)?);
        for (k, r) in r_precision(feats, &self.text, cfg.top_k, rng)?.into_iter().enumerate() {
            out.insert(format!("r_precision_top{}", k + 1), r);
        }
        out.insert("mm_dist".into(), mm_dist(feats, &self.text)?);
        out.insert("diversity".into(), diversity(feats, cfg.diversity_subset.min(feats.len()), rng)?);
        let groups = self.text_groups(feats);
        if !groups.is_empty() {
            let subset = groups.iter().map(Vec::len).min().unwrap_or(0).min(cfg.mmodality_subset);
            out.insert("mmodality".into(), mmodality(&groups, subset, rng)?);
        }
        Ok(out)
    }

    /// Ground-truth scores and the FID of moment-matched Gaussian noise.
    pub fn reference(&self) -> Result<BTreeMap<String, f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(fan_out(self.pipe.cfg.seed, SALT_METRIC, u64::MAX));
        let mut out: BTreeMap<String, f64> =
            self.feature_metrics(&self.real, &mut rng)?.into_iter().filter(|(k, _)| k != "fid").map(|(k, v)| (format!("real_{k}"), v)).collect();
        let mut nrng = ChaCha8Rng::seed_from_u64(fan_out(self.pipe.cfg.seed, SALT_NOISE, 0));
        let bodies = moment_noise(&self.samples.iter().map(|s| &s.body.frames).collect::<Vec<_>>(), &mut nrng);
        let objects = moment_noise(&self.samples.iter().map(|s| &s.object_motion.frames).collect::<Vec<_>>(), &mut nrng);
        let bodies: Vec<BodyPoseSequence> = bodies.into_iter().map(BodyPoseSequence::new).collect();
        let objects: Vec<ObjectPostureSequence> = objects.into_iter().map(ObjectPostureSequence::new).collect();
        let views: Vec<HoiView> =
            self.samples.iter().zip(bodies.iter().zip(&objects)).map(|(s, (b, o))| HoiView { body: b, object: o, geometry: &s.geometry }).collect();
        let noise = self.extractor.embed_hoi(&views, &self.pipe.skel)?;
        out.insert("noise_fid".into(), fid(&self.real, &noise)?);
        Ok(out)
    }

    /// Runs every variant for `repeats` repeats. Variants that differ only on
    /// the object side share the body generations of each repeat, and all
    /// variants share sampling seeds, so differences between them are paired.
    pub fn run(&self, variants: &[AblationFlags], repeats: usize) -> Result<EvalReport> {
        let start = Instant::now();
        for v in variants {
            v.validate()?;
        }
        let requests = self.requests();
        let mut per: Vec<BTreeMap<String, Vec<f64>>> = vec![BTreeMap::new(); variants.len()];
        for r in 0..repeats {
            let master = fan_out(self.pipe.cfg.seed, SALT_EVAL, r as u64);
            let mut bodies: BTreeMap<(bool, bool), Vec<BodySynthesis>> = BTreeMap::new();
            for (vi, v) in variants.iter().enumerate() {
                let key = (v.direct_body, v.real_canonical);
                if !bodies.contains_key(&key) {
                    bodies.insert(key, self.pipe.synthesize_bodies(&requests, master, v)?);
                }
                let b = &bodies[&key];
                let mut trace = CorrectionTrace::default();
                let objects = self.pipe.synthesize_objects(&requests, b, master, v, &mut trace)?;
                let objects: Vec<ObjectPostureSequence> = objects.into_iter().map(|(_, o)| o).collect();
                let refs: Vec<&BodyPoseSequence> = b.iter().map(|x| &x.body).collect();
                let scores = self.score(&refs, &objects, fan_out(self.pipe.cfg.seed, SALT_METRIC, r as u64))?;
                for (k, x) in scores {
                    per[vi].entry(k).or_default().push(x);
                }
            }
            log::info!("evaluation repeat {}/{} done after {:.1} s", r + 1, repeats, start.elapsed().as_secs_f64());
        }
        let variants = variants
            .iter()
            .zip(per)
            .map(|(f, per_repeat)| VariantReport {
                label: f.label(),
                flags: f.clone(),
                summary: per_repeat.iter().map(|(k, v)| (k.clone(), mean_ci(v))).collect(),
                per_repeat,
            })
            .collect();
        Ok(EvalReport { reference: self.reference()?, variants, seconds: start.elapsed().as_secs_f64() })
    }
}

/// Loads a trained workspace and evaluates the given variants, writing
/// `reports/<name>.{json,txt,csv}`.
pub fn evaluate(cfg: &PipelineConfig, ws: &Workspace, variants: &[AblationFlags], name: &str) -> Result<EvalReport> {
    let ds = ws.load_dataset()?;
    let pipe = Pipeline::load(cfg, ws)?;
    let extractor = FeatureExtractor::load(&ws.require("extractor", "the evaluation extractor")?)?;
    let report = Evaluator::new(&pipe, &extractor, &ds)?.run(variants, cfg.eval.repeats)?;
    report.write(&ws.reports(), name)?;
    Ok(report)
}
