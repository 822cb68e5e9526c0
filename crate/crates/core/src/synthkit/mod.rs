//! Procedural HOI world: scripted right-hand actions on rigid templates with
//! analytically known canonical motions and contact regions.

mod actions;
mod objects;

use ndarray::{Array1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use actions::{base_curve, grasp_rotation, solve_right_arm, ActionFamily, Script, Slots, APPROACH_FRAMES, ROOT_HEIGHT};
pub use objects::{build_template, fingertip_centroid, fingertip_spread, ObjectTemplate, TemplateGeometry, SNAP_CLEARANCE};

use crate::contact::maps::{default_lambda, distance_map, gt_contact, normalize_map, SIGMA};
use crate::error::{Error, Result};
use crate::hoi_core::rotation::{log_map, Mat3, Vec3};
use crate::hoi_core::{
    forward_kinematics, transform_object, BodyPoseSequence, Dataset, DatasetMeta, HOISample, KinematicBody, Mat,
    ObjectGeometry, ObjectPostureSequence, Split, TextInstruction, Vocabulary, DEFAULT_FRAMES,
};

/// Points of the designated graspable region lie this close to one of the
/// grasp's fingertip points.
pub const GRASP_REGION_RADIUS: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub actions: Vec<ActionFamily>,
    pub objects: Vec<ObjectTemplate>,
    pub per_cell: usize,
    /// Amplitude of the smooth per-sample jitter on joint angles (radians).
    pub jitter_rot: f64,
    /// Amplitude of the jitter on the root translation (meters).
    pub jitter_trans: f64,
    /// Multiplier on the object-conditioned reach warp.
    pub warp_scale: f64,
    pub points: usize,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            actions: ActionFamily::ALL.to_vec(),
            objects: ObjectTemplate::ALL.to_vec(),
            per_cell: 50,
            jitter_rot: 0.03,
            jitter_trans: 0.01,
            warp_scale: 1.0,
            points: 256,
            seed: 7,
        }
    }
}

impl ScenarioSpec {
    pub fn zero_jitter(mut self) -> Self {
        self.jitter_rot = 0.0;
        self.jitter_trans = 0.0;
        self
    }

    pub fn total(&self) -> usize {
        self.actions.len() * self.objects.len() * self.per_cell
    }

    /// (train, val, test) counts from the 0.8 / 0.05 / 0.15 ratios.
    pub fn split_counts(&self) -> (usize, usize, usize) {
        let n = self.total();
        let train = (n as f64 * 0.8).round() as usize;
        let val = (n as f64 * 0.05).round() as usize;
        (train, val, n.saturating_sub(train + val))
    }

    pub fn validate(&self) -> Result<()> {
        if self.actions.len() < 2 || self.objects.len() < 2 {
            return Err(Error::Config("need at least two actions and two object templates".into()));
        }
        if self.per_cell == 0 || self.split_counts().2 == 0 {
            return Err(Error::Config(format!("{} samples leave the test split empty", self.total())));
        }
        if self.points < 3 * self.actions.len() + 1 {
            return Err(Error::Config("point budget too small for the grasp sites".into()));
        }
        if !(self.jitter_rot >= 0.0 && self.jitter_trans >= 0.0 && self.warp_scale.is_finite()) {
            return Err(Error::Config("noise amplitudes must be non-negative".into()));
        }
        let mut a = self.actions.clone();
        a.dedup();
        let mut o = self.objects.clone();
        o.dedup();
        if a.len() != self.actions.len() || o.len() != self.objects.len() {
            return Err(Error::Config("duplicate action or object entries".into()));
        }
        Ok(())
    }
}

/// Raw per-template reach warp, before removing the mean over templates.
fn raw_warp(t: ObjectTemplate, slots: &Slots, width: usize) -> Array1<f64> {
    let mut w = Array1::zeros(width);
    let mut set = |i: usize, v: f64| w[i] = v;
    match t {
        ObjectTemplate::Box => {
            set(2, 0.03);
            set(slots.spine, 0.06);
            set(slots.r_shoulder, 0.06);
            set(slots.r_elbow, -0.02);
        }
        ObjectTemplate::Cylinder => {
            set(0, -0.03);
            set(slots.spine, -0.04);
            set(slots.r_shoulder + 2, -0.10);
            set(slots.r_elbow, -0.06);
        }
        ObjectTemplate::Sphere => {
            set(1, -0.03);
            set(2, -0.04);
            set(slots.spine, 0.08);
            set(slots.r_shoulder, -0.08);
            set(slots.r_elbow, 0.10);
        }
    }
    w
}

/// Everything derived from a spec that is shared across samples.
#[derive(Clone, Debug)]
pub struct World {
    pub spec: ScenarioSpec,
    pub skeleton: KinematicBody,
    pub vocabulary: Vocabulary,
    pub n_frames: usize,
    pub templates: Vec<TemplateGeometry>,
    /// Per action, N × D_b.
    pub base: Vec<Mat>,
    /// Per template, zero-mean across templates.
    pub warps: Vec<Array1<f64>>,
    grasp_rot: Vec<Mat3>,
}

impl World {
    pub fn new(spec: ScenarioSpec) -> Result<Self> {
        if spec.actions.is_empty() || spec.objects.is_empty() {
            return Err(Error::Config("at least one action and one object are required".into()));
        }
        let skeleton = KinematicBody::smpl_lite();
        let slots = Slots::new(&skeleton);
        let n_frames = DEFAULT_FRAMES;
        let verbs: Vec<&str> = spec.actions.iter().map(|a| a.verb()).collect();
        let nouns: Vec<&str> = spec.objects.iter().map(|o| o.noun()).collect();
        let vocabulary = Vocabulary::new(&["a", "person", "the"], &verbs, &nouns);
        let grasp_rot: Vec<Mat3> = spec
            .actions
            .iter()
            .map(|a| {
                let s = a.script();
                grasp_rotation(s.palm, s.fingers)
            })
            .collect();
        let grasps: Vec<(Mat3, Vec3)> = spec
            .actions
            .iter()
            .zip(&grasp_rot)
            .map(|(a, r)| (*r, -a.script().palm))
            .collect();
        let templates = spec.objects.iter().map(|&t| build_template(t, &grasps, spec.points)).collect();
        let base = spec
            .actions
            .iter()
            .map(|&a| base_curve(a, &skeleton, n_frames).mapv(|v| v as f32 as f64))
            .collect();
        let width = skeleton.pose_width();
        let raw: Vec<Array1<f64>> = spec.objects.iter().map(|&t| raw_warp(t, &slots, width)).collect();
        let mean = raw.iter().fold(Array1::<f64>::zeros(width), |a, w| a + w) / raw.len() as f64;
        let warps = raw.iter().map(|w| (w - &mean) * spec.warp_scale).collect();
        Ok(Self { spec, skeleton, vocabulary, n_frames, templates, base, warps, grasp_rot })
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            n_frames: self.n_frames,
            hand_joints: self.skeleton.hands.len(),
            points: self.spec.points,
            layout: self.skeleton.layout(),
            vocabulary: self.vocabulary.clone(),
            action_names: self.spec.actions.iter().map(|a| a.name().to_string()).collect(),
            object_names: self.spec.objects.iter().map(|o| o.noun().to_string()).collect(),
            source: serde_json::to_value(&self.spec).expect("spec serializes"),
        }
    }

    pub fn window(&self, action: usize) -> (usize, usize) {
        self.spec.actions[action].script().window
    }

    pub fn text(&self, action: usize, template: usize) -> String {
        format!("a person {} the {}", self.spec.actions[action].verb(), self.spec.objects[template].noun())
    }

    pub fn geometry(&self, template: usize) -> ObjectGeometry {
        let t = &self.templates[template];
        let d = t.template.dims();
        ObjectGeometry { points: t.points.clone(), class_id: template, scale: d.map(|v| v as f32 as f64) }
    }

    /// Flat-topped bump covering the contact window with smooth shoulders.
    fn warp_profile(&self, action: usize, t: usize) -> f64 {
        let (s, e) = self.window(action);
        let (a0, a1) = (s as f64 - 8.0, s as f64 - 2.0);
        let (b0, b1) = (e as f64 + 2.0, e as f64 + 8.0);
        let t = t as f64;
        let ramp = |u: f64| {
            let u = u.clamp(0.0, 1.0);
            u * u * (3.0 - 2.0 * u)
        };
        ramp((t - a0) / (a1 - a0)) * (1.0 - ramp((t - b0) / (b1 - b0)))
    }

    /// Body sequence for one sample before quantization.
    pub fn body_curve(&self, action: usize, template: usize, seed: u64) -> Mat {
        let mut body = self.base[action].clone();
        let n = self.n_frames;
        for t in 0..n {
            let w = self.warp_profile(action, t);
            body.row_mut(t).scaled_add(w, &self.warps[template]);
        }
        if self.spec.jitter_rot > 0.0 || self.spec.jitter_trans > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tau = 2.0 * std::f64::consts::PI / (n - 1) as f64;
            for col in 0..body.ncols() {
                let amp = if col < 3 { self.spec.jitter_trans } else { self.spec.jitter_rot };
                for _ in 0..2 {
                    let a = amp * rng.random_range(0.4..1.0);
                    let f = rng.random_range(0.3..1.2);
                    let ph = rng.random_range(0.0..2.0 * std::f64::consts::PI);
                    for t in 0..n {
                        body[[t, col]] += a * (f * tau * t as f64 + ph).sin();
                    }
                }
            }
        }
        body
    }

    /// Object postures that keep the grasp rigid inside the window and freeze
    /// the object outside it.
    pub fn object_motion(&self, action: usize, template: usize, body: &BodyPoseSequence) -> ObjectPostureSequence {
        let (s, e) = self.window(action);
        let wrist = self.skeleton.joint("r_wrist").unwrap();
        let r_g = self.grasp_rot[action].transpose();
        let (site, _) = self.templates[template].sites[action];
        let t_g = fingertip_centroid() - r_g * site;
        let mut out = Mat::zeros((self.n_frames, 6));
        for n in 0..self.n_frames {
            let k = n.clamp(s, e);
            let (pos, rot) = self.skeleton.pose_frame(body.frames.row(k));
            let r_o = rot[wrist] * r_g;
            let t_o = pos[wrist] + rot[wrist] * t_g;
            let w = log_map(&r_o);
            for c in 0..3 {
                out[[n, c]] = w[c] as f32 as f64;
                out[[n, 3 + c]] = t_o[c] as f32 as f64;
            }
        }
        ObjectPostureSequence::new(out)
    }

    pub fn generate_sample(&self, action: usize, template: usize, seed: u64) -> HOISample {
        let mut body = BodyPoseSequence::new(self.body_curve(action, template, seed));
        body.canonicalize();
        body.frames.mapv_inplace(|v| v as f32 as f64);
        let object_motion = self.object_motion(action, template, &body);
        let raw = self.text(action, template);
        let tokens = self.vocabulary.encode(&raw);
        HOISample {
            body,
            object_motion,
            geometry: self.geometry(template),
            text: TextInstruction { tokens, action_label: action, raw },
            sample_id: 0,
            split: Split::Train,
        }
    }

    pub fn action_of(&self, sample: &HOISample) -> usize {
        sample.text.action_label
    }

    pub fn template_of(&self, sample: &HOISample) -> usize {
        sample.geometry.class_id
    }

    /// Designated graspable region: the patch under the action's fingertip points.
    pub fn graspable_region(&self, action: usize, template: usize) -> Vec<bool> {
        let t = &self.templates[template];
        let tips: Vec<Vec3> = t.snapped[action].iter().map(|&i| Vec3::new(t.points[[i, 0]], t.points[[i, 1]], t.points[[i, 2]])).collect();
        t.points
            .axis_iter(Axis(0))
            .map(|p| {
                let q = Vec3::new(p[0], p[1], p[2]);
                tips.iter().any(|c| (q - c).norm() < GRASP_REGION_RADIUS)
            })
            .collect()
    }
}

/// Hand-object distance map of a sample.
pub fn sample_distances(sample: &HOISample, skel: &KinematicBody) -> Result<ndarray::Array3<f64>> {
    let v_h = forward_kinematics(&sample.body, skel)?.hands;
    let v_o = transform_object(&sample.geometry, &sample.object_motion);
    distance_map(v_h.view(), v_o.view())
}

/// Ground-truth per-point contact labels of a sample.
pub fn sample_contact(sample: &HOISample, skel: &KinematicBody) -> Result<Vec<bool>> {
    let d = sample_distances(sample, skel)?;
    Ok(gt_contact(normalize_map(d.view(), SIGMA)?.view(), default_lambda()))
}

fn sample_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index + 1);
    rng.random()
}

/// Generates the full labeled dataset for a spec.
pub fn generate_dataset(spec: &ScenarioSpec) -> Result<(World, Dataset)> {
    spec.validate()?;
    let world = World::new(spec.clone())?;
    let mut samples = Vec::with_capacity(spec.total());
    for a in 0..spec.actions.len() {
        for t in 0..spec.objects.len() {
            for k in 0..spec.per_cell {
                let id = ((a * spec.objects.len() + t) * spec.per_cell + k) as u64;
                let mut s = world.generate_sample(a, t, sample_seed(spec.seed, id));
                s.sample_id = id;
                samples.push(s);
            }
        }
    }
    let (train, val, _) = spec.split_counts();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5b11_75b1));
    for (rank, &i) in order.iter().enumerate() {
        samples[i].split = if rank < train {
            Split::Train
        } else if rank < train + val {
            Split::Val
        } else {
            Split::Test
        };
    }
    let contact = samples
        .iter()
        .map(|s| sample_contact(s, &world.skeleton))
        .collect::<Result<Vec<_>>>()?;
    let dataset = Dataset { meta: world.meta(), samples, contact: Some(contact) };
    Ok((world, dataset))
}

/// Result of the generator's self-checks over a dataset.
#[derive(Clone, Debug, Serialize)]
pub struct SelfCheck {
    /// Largest in-window minimum hand-object distance.
    pub max_window_distance: f64,
    /// Smallest IoU between ground-truth contact and the graspable region.
    pub min_region_iou: f64,
    pub invalid_samples: usize,
}

pub fn self_check(world: &World, dataset: &Dataset) -> Result<SelfCheck> {
    let mut max_window_distance: f64 = 0.0;
    let mut min_region_iou: f64 = 1.0;
    let mut invalid = 0;
    let width = world.skeleton.pose_width();
    for (i, s) in dataset.samples.iter().enumerate() {
        if s.validate(width, &world.vocabulary).is_err() {
            invalid += 1;
        }
        let d = sample_distances(s, &world.skeleton)?;
        let (a, t) = (world.action_of(s), world.template_of(s));
        let (ws, we) = world.window(a);
        for n in ws..=we {
            let m = d.index_axis(Axis(0), n).iter().copied().fold(f64::INFINITY, f64::min);
            max_window_distance = max_window_distance.max(m);
        }
        let gt = match &dataset.contact {
            Some(c) => c[i].clone(),
            None => sample_contact(s, &world.skeleton)?,
        };
        let region = world.graspable_region(a, t);
        let inter = gt.iter().zip(&region).filter(|(x, y)| **x && **y).count();
        let union = gt.iter().zip(&region).filter(|(x, y)| **x || **y).count();
        min_region_iou = min_region_iou.min(if union == 0 { 1.0 } else { inter as f64 / union as f64 });
    }
    Ok(SelfCheck { max_window_distance, min_region_iou, invalid_samples: invalid })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contact::maps::min_per_frame;

    fn small() -> ScenarioSpec {
        ScenarioSpec { per_cell: 2, ..ScenarioSpec::default() }
    }

    #[test]
    fn deterministic_samples() {
        let w = World::new(ScenarioSpec::default()).unwrap();
        assert_eq!(w.generate_sample(1, 2, 99), w.generate_sample(1, 2, 99));
        assert_ne!(w.generate_sample(1, 2, 99), w.generate_sample(1, 2, 98));
    }

    #[test]
    fn detected_windows_match_scripts() {
        let w = World::new(ScenarioSpec::default()).unwrap();
        for a in 0..4 {
            for t in 0..3 {
                for seed in [0u64, 1, 2] {
                    let s = w.generate_sample(a, t, seed);
                    let d = sample_distances(&s, &w.skeleton).unwrap();
                    let per = min_per_frame(d.view());
                    let frames: Vec<usize> = (0..per.len()).filter(|&n| per[n] < 0.05).collect();
                    let (ws, we) = w.window(a);
                    assert_eq!(frames, (ws..=we).collect::<Vec<_>>(), "action {a} template {t} seed {seed}: {per:?}");
                    assert!(per[ws..=we].iter().all(|&m| m <= 0.01));
                }
            }
        }
    }

    #[test]
    fn small_dataset_self_check() {
        let (world, ds) = generate_dataset(&small()).unwrap();
        assert_eq!(ds.samples.len(), 24);
        let check = self_check(&world, &ds).unwrap();
        assert_eq!(check.invalid_samples, 0);
        assert!(check.max_window_distance <= 0.01, "{check:?}");
        assert!(check.min_region_iou >= 0.5, "{check:?}");
    }

    #[test]
    fn split_arithmetic() {
        assert_eq!(ScenarioSpec::default().split_counts(), (480, 30, 90));
        let bad = ScenarioSpec { per_cell: 0, ..ScenarioSpec::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}
