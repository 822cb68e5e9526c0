//! Contact-state detection, the interaction error and guided correction of
//! object postures late in sampling.

use std::fmt::Write as _;

use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::contact::distance_map;
use crate::error::{Error, Result};
use crate::hoi_core::rotation::{exp_map, exp_map_jacobian, Vec3};
use crate::hoi_core::{forward_kinematics, transform_object, BodyPoseSequence, KinematicBody, Mat, ObjectGeometry, ObjectPostureSequence};

/// Which parts of the interaction error drive the correction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Terms {
    None,
    Temporal,
    InContact,
    #[default]
    Both,
}

impl Terms {
    pub fn temporal(self) -> bool {
        matches!(self, Terms::Temporal | Terms::Both)
    }

    pub fn in_contact(self) -> bool {
        matches!(self, Terms::InContact | Terms::Both)
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(Terms::None),
            "temporal" => Some(Terms::Temporal),
            "in-contact" => Some(Terms::InContact),
            "both" => Some(Terms::Both),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InteractorConfig {
    /// Contact threshold in meters.
    pub delta: f64,
    pub eta: f64,
    /// Gradient steps per guidance call.
    pub steps: usize,
    pub max_halvings: usize,
    pub terms: Terms,
    /// Norms in the descent direction become √(‖v‖² + ε²); step acceptance
    /// still uses the exact error.
    pub smoothing: f64,
}

impl Default for InteractorConfig {
    fn default() -> Self {
        Self { delta: 0.05, eta: 1e-2, steps: 5, max_halvings: 10, terms: Terms::Both, smoothing: 1e-3 }
    }
}

impl InteractorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::Config(format!("contact threshold must be positive, got {}", self.delta)));
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::Config(format!("step size must be finite and non-negative, got {}", self.eta)));
        }
        if !(self.smoothing >= 0.0) {
            return Err(Error::Config(format!("smoothing must be non-negative, got {}", self.smoothing)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContactFrames {
    /// Ascending.
    pub frames: Vec<usize>,
    pub anchor: Option<usize>,
}

/// Frame n is in contact iff its smallest hand-object distance is below δ.
pub fn detect_contact_frames(d: ArrayView3<f64>, delta: f64) -> ContactFrames {
    let frames: Vec<usize> = d
        .outer_iter()
        .enumerate()
        .filter(|(_, f)| f.iter().any(|&x| x < delta))
        .map(|(n, _)| n)
        .collect();
    ContactFrames { anchor: frames.first().copied(), frames }
}

/// (hand joint, point) pairs closer than δ at frame m.
pub fn contact_pairs(d: ArrayView3<f64>, m: usize, delta: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for ((j, p), &x) in d.index_axis(ndarray::Axis(0), m).indexed_iter() {
        if x < delta {
            out.push((j, p));
        }
    }
    out
}

fn frame_in_contact(d: ArrayView3<f64>, n: usize, delta: f64) -> bool {
    n < d.dim().0 && d.index_axis(ndarray::Axis(0), n).iter().any(|&x| x < delta)
}

/// I_n = ‖d_n[S] − d_m[S]‖ + ‖d_n[S]‖ where S is the pair set in contact at
/// the anchor frame m.
pub fn interaction_error(d: ArrayView3<f64>, m: usize, n: usize, delta: f64) -> Result<f64> {
    for f in [m, n] {
        if !frame_in_contact(d, f, delta) {
            return Err(Error::Contract(format!("frame {f} is not in contact")));
        }
    }
    Ok(pair_terms(d, m, n, &contact_pairs(d, m, delta), Terms::Both))
}

fn pair_terms(d: ArrayView3<f64>, m: usize, n: usize, pairs: &[(usize, usize)], terms: Terms) -> f64 {
    let mut diff = 0.0;
    let mut own = 0.0;
    for &(j, p) in pairs {
        let a = d[[n, j, p]];
        let b = d[[m, j, p]];
        diff += (a - b) * (a - b);
        own += a * a;
    }
    let mut e = 0.0;
    if terms.temporal() {
        e += diff.sqrt();
    }
    if terms.in_contact() {
        e += own.sqrt();
    }
    e
}

#[derive(Clone, Debug, PartialEq)]
pub struct InteractionError {
    /// (frame, I_n) for each in-contact frame.
    pub per_frame: Vec<(usize, f64)>,
    pub total: f64,
    pub anchor: Option<usize>,
    pub pairs: Vec<(usize, usize)>,
    pub delta: f64,
}

/// Detects contact and evaluates L_I = Σ_n I_n over the in-contact frames.
pub fn evaluate(d: ArrayView3<f64>, delta: f64, terms: Terms) -> InteractionError {
    let cf = detect_contact_frames(d, delta);
    let Some(m) = cf.anchor else {
        return InteractionError { per_frame: Vec::new(), total: 0.0, anchor: None, pairs: Vec::new(), delta };
    };
    let pairs = contact_pairs(d, m, delta);
    let per_frame: Vec<(usize, f64)> = cf.frames.iter().map(|&n| (n, pair_terms(d, m, n, &pairs, terms))).collect();
    let total = per_frame.iter().map(|x| x.1).sum();
    InteractionError { per_frame, total, anchor: Some(m), pairs, delta }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub sample: usize,
    pub call: usize,
    /// Inference steps left when the call was made.
    pub remaining: usize,
    pub step: usize,
    pub before: f64,
    pub after: f64,
    pub eta: f64,
    pub halvings: usize,
    pub accepted: bool,
}

/// Per-step record of the interaction error during correction.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrectionTrace {
    pub steps: Vec<TraceStep>,
    pub diagnostics: Vec<String>,
}

impl CorrectionTrace {
    /// Tab-separated log with a header line; diagnostics follow as `#` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::from("sample\tcall\tremaining\tstep\tL_I_before\tL_I_after\teta\thalvings\taccepted\n");
        for t in &self.steps {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{:.9e}\t{:.9e}\t{:.3e}\t{}\t{}",
                t.sample, t.call, t.remaining, t.step, t.before, t.after, t.eta, t.halvings, t.accepted
            );
        }
        for d in &self.diagnostics {
            let _ = writeln!(s, "# {d}");
        }
        s
    }

    /// L_I before the first step and after the last, per sample.
    pub fn endpoints(&self, sample: usize) -> Option<(f64, f64)> {
        let mut it = self.steps.iter().filter(|t| t.sample == sample);
        let first = it.next()?;
        let last = it.last().unwrap_or(first);
        Some((first.before, last.after))
    }
}

/// Hand positions and object points, fixed for the duration of a correction.
#[derive(Clone, Debug)]
pub struct Interactor {
    pub cfg: InteractorConfig,
    /// N × J × 3
    hands: Array3<f64>,
    points: Vec<Vec3>,
}

/// The contact structure a correction call works with.
struct Active {
    /// Ascending; the first is the anchor.
    frames: Vec<usize>,
    pairs: Vec<(usize, usize)>,
}

impl Interactor {
    pub fn new(cfg: InteractorConfig, body: &BodyPoseSequence, geometry: &ObjectGeometry, skel: &KinematicBody) -> Result<Self> {
        cfg.validate()?;
        let hands = forward_kinematics(body, skel)?.hands;
        Ok(Self::from_parts(cfg, hands, geometry))
    }

    pub fn from_parts(cfg: InteractorConfig, hands: Array3<f64>, geometry: &ObjectGeometry) -> Self {
        let points = geometry.points.rows().into_iter().map(|r| Vec3::new(r[0], r[1], r[2])).collect();
        Self { cfg, hands, points }
    }

    fn distances(&self, o: &Mat, geometry_points: &[Vec3]) -> Array3<f64> {
        let n = o.nrows();
        let mut vo = Array3::zeros((n, geometry_points.len(), 3));
        for f in 0..n {
            let r = exp_map(&Vec3::new(o[[f, 0]], o[[f, 1]], o[[f, 2]]));
            let t = Vec3::new(o[[f, 3]], o[[f, 4]], o[[f, 5]]);
            for (i, q) in geometry_points.iter().enumerate() {
                let x = r * q + t;
                for c in 0..3 {
                    vo[[f, i, c]] = x[c];
                }
            }
        }
        distance_map(self.hands.view(), vo.view()).expect("shapes fixed at construction")
    }

    fn check(&self, o: &Mat) -> Result<()> {
        if o.ncols() != 6 || o.nrows() != self.hands.dim().0 {
            return Err(Error::Structural(format!(
                "object postures {:?} do not match {} body frames",
                o.dim(),
                self.hands.dim().0
            )));
        }
        Ok(())
    }

    /// Full distance map d'[n, j, p] for the given postures.
    pub fn distance_map(&self, o: &Mat) -> Result<Array3<f64>> {
        self.check(o)?;
        Ok(self.distances(o, &self.points))
    }

    pub fn error(&self, o: &Mat) -> Result<InteractionError> {
        let d = self.distance_map(o)?;
        Ok(evaluate(d.view(), self.cfg.delta, self.cfg.terms))
    }

    fn detect(&self, o: &Mat) -> Option<Active> {
        let d = self.distances(o, &self.points);
        let cf = detect_contact_frames(d.view(), self.cfg.delta);
        let pairs = contact_pairs(d.view(), cf.anchor?, self.cfg.delta);
        Some(Active { frames: cf.frames, pairs })
    }

    fn pair_distance(&self, o: &Mat, f: usize, j: usize, p: usize) -> (f64, Vec3) {
        let r = exp_map(&Vec3::new(o[[f, 0]], o[[f, 1]], o[[f, 2]]));
        let x = r * self.points[p] + Vec3::new(o[[f, 3]], o[[f, 4]], o[[f, 5]]);
        let h = Vec3::new(self.hands[[f, j, 0]], self.hands[[f, j, 1]], self.hands[[f, j, 2]]);
        let v = x - h;
        (v.norm(), v)
    }

    fn pair_values(&self, o: &Mat, act: &Active) -> Vec<Vec<f64>> {
        act.frames
            .iter()
            .map(|&f| act.pairs.iter().map(|&(j, p)| self.pair_distance(o, f, j, p).0).collect())
            .collect()
    }

    fn objective(&self, o: &Mat, act: &Active) -> f64 {
        let vals = self.pair_values(o, act);
        let anchor = &vals[0];
        vals.iter().map(|dn| terms_of(dn, anchor, self.cfg.terms)).sum()
    }

    /// L_I over a fixed active set and the gradient of its smoothed form with
    /// respect to the N × 6 postures. The exact norms have kinks at zero where
    /// the temporal term starts out on a clean grasp.
    fn objective_grad(&self, o: &Mat, act: &Active) -> (f64, Mat) {
        let vals = self.pair_values(o, act);
        let anchor = vals[0].clone();
        let s = act.pairs.len();
        // coefficients ∂L/∂d for each (active frame, pair)
        let mut coef = vec![vec![0.0; s]; act.frames.len()];
        let mut total = 0.0;
        let eps2 = self.cfg.smoothing * self.cfg.smoothing;
        for (i, dn) in vals.iter().enumerate() {
            total += terms_of(dn, &anchor, self.cfg.terms);
            if self.cfg.terms.temporal() && i > 0 {
                let a = (dn.iter().zip(&anchor).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() + eps2).sqrt();
                if a > 0.0 {
                    for k in 0..s {
                        let g = (dn[k] - anchor[k]) / a;
                        coef[i][k] += g;
                        coef[0][k] -= g;
                    }
                }
            }
            if self.cfg.terms.in_contact() {
                let b = (dn.iter().map(|x| x * x).sum::<f64>() + eps2).sqrt();
                if b > 0.0 {
                    for k in 0..s {
                        coef[i][k] += dn[k] / b;
                    }
                }
            }
        }
        let mut grad = Mat::zeros(o.dim());
        for (i, &f) in act.frames.iter().enumerate() {
            let w = Vec3::new(o[[f, 0]], o[[f, 1]], o[[f, 2]]);
            let jac = exp_map_jacobian(&w);
            for (k, &(j, p)) in act.pairs.iter().enumerate() {
                let c = coef[i][k];
                if c == 0.0 {
                    continue;
                }
                let (dist, v) = self.pair_distance(o, f, j, p);
                if dist == 0.0 {
                    continue;
                }
                let u = v / dist * c;
                for a in 0..3 {
                    grad[[f, a]] += u.dot(&(jac[a] * self.points[p]));
                    grad[[f, 3 + a]] += u[a];
                }
            }
        }
        (total, grad)
    }

    /// L_I and its gradient for the contact state detected at `o`.
    pub fn loss_and_grad(&self, o: &Mat) -> Result<(f64, Mat)> {
        self.check(o)?;
        Ok(match self.detect(o) {
            Some(act) => self.objective_grad(o, &act),
            None => (0.0, Mat::zeros(o.dim())),
        })
    }

    /// Up to `cfg.steps` descent steps on L_I with a halving line search.
    /// Contact is detected once, at entry. A step is taken only when it
    /// strictly lowers L_I, so L_I never rises.
    pub fn correct(&self, o: &Mat, sample: usize, call: usize, remaining: usize, trace: &mut CorrectionTrace) -> Result<Mat> {
        self.check(o)?;
        let mut cur = o.clone();
        if self.cfg.terms == Terms::None || self.cfg.eta == 0.0 {
            return Ok(cur);
        }
        let Some(act) = self.detect(o) else {
            return Ok(cur);
        };
        for step in 0..self.cfg.steps {
            let (before, mut grad) = self.objective_grad(&cur, &act);
            // the anchor appears in every temporal term; scaling its row keeps
            // one frame from dictating the step size for all others
            if self.cfg.terms.temporal() {
                grad.row_mut(act.frames[0]).mapv_inplace(|g| g / act.frames.len() as f64);
            }
            if !before.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                let msg = format!("sample {sample} call {call} step {step}: non-finite interaction gradient, correction skipped");
                log::warn!("{msg}");
                trace.diagnostics.push(msg);
                break;
            }
            let mut eta = self.cfg.eta;
            let mut halvings = 0;
            let mut accepted = None;
            loop {
                let trial = &cur - &(&grad * eta);
                let after = self.objective(&trial, &act);
                if after < before {
                    accepted = Some((trial, after));
                    break;
                }
                if halvings == self.cfg.max_halvings {
                    break;
                }
                eta *= 0.5;
                halvings += 1;
            }
            let after = accepted.as_ref().map_or(before, |a| a.1);
            trace.steps.push(TraceStep { sample, call, remaining, step, before, after, eta, halvings, accepted: accepted.is_some() });
            match accepted {
                Some((next, _)) => cur = next,
                None => break,
            }
        }
        Ok(cur)
    }
}

fn terms_of(dn: &[f64], anchor: &[f64], terms: Terms) -> f64 {
    let mut e = 0.0;
    if terms.temporal() {
        e += dn.iter().zip(anchor).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    }
    if terms.in_contact() {
        e += dn.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    e
}

/// One guidance call on a posture sequence with the body held fixed.
pub fn guided_correction(
    o: &ObjectPostureSequence,
    body: &BodyPoseSequence,
    geometry: &ObjectGeometry,
    skel: &KinematicBody,
    cfg: &InteractorConfig,
    trace: &mut CorrectionTrace,
) -> Result<ObjectPostureSequence> {
    let it = Interactor::new(cfg.clone(), body, geometry, skel)?;
    Ok(ObjectPostureSequence::new(it.correct(&o.frames, 0, 0, 0, trace)?))
}

/// L_I of a full (body, object) pair at the default threshold.
pub fn interaction_loss(body: &BodyPoseSequence, o: &ObjectPostureSequence, geometry: &ObjectGeometry, skel: &KinematicBody, cfg: &InteractorConfig) -> Result<f64> {
    let hands = forward_kinematics(body, skel)?.hands;
    let vo = transform_object(geometry, o);
    let d = distance_map(hands.view(), vo.view())?;
    Ok(evaluate(d.view(), cfg.delta, cfg.terms).total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(d: ArrayView3<f64>, m: usize, n: usize, delta: f64) -> f64 {
        let (_, j, p) = d.dim();
        let mut a = 0.0;
        let mut b = 0.0;
        for jj in 0..j {
            for pp in 0..p {
                if d[[m, jj, pp]] < delta {
                    let x = d[[n, jj, pp]];
                    let y = d[[m, jj, pp]];
                    a += (x - y).powi(2);
                    b += x.powi(2);
                }
            }
        }
        a.sqrt() + b.sqrt()
    }

    #[test]
    fn detection_examples() {
        let mut d = Array3::from_elem((5, 2, 3), 1.0);
        assert_eq!(detect_contact_frames(d.view(), 0.05), ContactFrames::default());
        d[[2, 1, 0]] = 0.04;
        d[[4, 0, 2]] = 0.01;
        let cf = detect_contact_frames(d.view(), 0.05);
        assert_eq!(cf.frames, vec![2, 4]);
        assert_eq!(cf.anchor, Some(2));
    }

    #[test]
    fn error_examples() {
        let mut d = Array3::from_elem((2, 1, 2), 1.0);
        d[[0, 0, 0]] = 0.0;
        d[[1, 0, 0]] = 0.0;
        assert_eq!(interaction_error(d.view(), 0, 1, 0.05).unwrap(), 0.0);
        d[[0, 0, 0]] = 0.03;
        d[[1, 0, 0]] = 0.03;
        assert!((interaction_error(d.view(), 0, 1, 0.05).unwrap() - 0.03).abs() < 1e-15);
        let far = Array3::from_elem((2, 1, 2), 1.0);
        assert!(matches!(interaction_error(far.view(), 0, 1, 0.05), Err(Error::Contract(_))));
    }

    #[test]
    fn error_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let d = Array3::from_shape_fn((4, 3, 10), |_| rng.random_range(0.0..0.12));
            let cf = detect_contact_frames(d.view(), 0.05);
            let m = cf.anchor.unwrap();
            for &n in &cf.frames {
                let v = interaction_error(d.view(), m, n, 0.05).unwrap();
                assert!((v - brute(d.view(), m, n, 0.05)).abs() < 1e-9);
            }
        }
    }

    fn toy(rng: &mut ChaCha8Rng) -> (Interactor, Mat) {
        let n = 6;
        let hands = Array3::from_shape_fn((n, 2, 3), |(f, j, c)| 0.01 * f as f64 + 0.03 * j as f64 + 0.02 * c as f64);
        let pts = Mat::from_shape_fn((12, 3), |_| rng.random_range(-0.06..0.06));
        let g = ObjectGeometry { points: pts, class_id: 0, scale: [1.0; 3] };
        let o = Mat::from_shape_fn((n, 6), |(_, c)| if c < 3 { rng.random_range(-0.4..0.4) } else { rng.random_range(0.0..0.04) });
        (Interactor::from_parts(InteractorConfig::default(), hands, &g), o)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for terms in [Terms::Temporal, Terms::InContact, Terms::Both] {
            let (mut it, o) = toy(&mut rng);
            it.cfg.terms = terms;
            it.cfg.smoothing = 0.0;
            let act = it.detect(&o).expect("toy is in contact");
            let (_, g) = it.objective_grad(&o, &act);
            let h = 1e-6;
            for f in 0..o.nrows() {
                for c in 0..6 {
                    let mut a = o.clone();
                    a[[f, c]] += h;
                    let mut b = o.clone();
                    b[[f, c]] -= h;
                    let fd = (it.objective(&a, &act) - it.objective(&b, &act)) / (2.0 * h);
                    assert!((fd - g[[f, c]]).abs() < 1e-6 * (1.0 + fd.abs()), "{terms:?} {f} {c}: {fd} vs {}", g[[f, c]]);
                }
            }
        }
    }

    #[test]
    fn trivial_corrections_leave_input_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (mut it, o) = toy(&mut rng);
        let mut tr = CorrectionTrace::default();
        it.cfg.eta = 0.0;
        assert_eq!(it.correct(&o, 0, 0, 0, &mut tr).unwrap(), o);
        it.cfg.eta = 1e-2;
        let mut far = o.clone();
        far.column_mut(4).fill(5.0);
        assert_eq!(it.correct(&far, 0, 0, 0, &mut tr).unwrap(), far);
        assert!(tr.steps.is_empty());
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        // a broken hand joint on a later frame, reached only through the
        // anchor's pair set
        let (it, o) = (0..50)
            .find_map(|seed| {
                let (mut it, o) = toy(&mut ChaCha8Rng::seed_from_u64(seed));
                let act = it.detect(&o)?;
                let j = act.pairs[0].0;
                let &n = act.frames.iter().skip(1).find(|&&n| {
                    it.distances(&o, &it.points).index_axis(ndarray::Axis(0), n).outer_iter().enumerate().any(|(jj, row)| jj != j && row.iter().any(|&x| x < 0.05))
                })?;
                it.hands.slice_mut(ndarray::s![n, j, ..]).fill(f64::NAN);
                Some((it, o))
            })
            .expect("some toy has a second in-contact frame");
        let mut tr = CorrectionTrace::default();
        let out = it.correct(&o, 0, 0, 0, &mut tr).unwrap();
        assert_eq!(out, o);
        assert_eq!(tr.diagnostics.len(), 1);
        assert!(tr.to_text().contains("non-finite"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn correction_never_raises_the_error(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mut it, mut o) = toy(&mut rng);
            it.cfg.steps = 4;
            let mut tr = CorrectionTrace::default();
            for call in 0..5 {
                o = it.correct(&o, 0, call, 5 - call, &mut tr).unwrap();
            }
            for t in &tr.steps {
                prop_assert!(t.after <= t.before);
            }
        }

        #[test]
        fn error_is_rigid_invariant(seed in 0u64..10_000, w in prop::array::uniform3(-2.0f64..2.0), t in prop::array::uniform3(-1.0f64..1.0)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vh = Array3::from_shape_fn((3, 2, 3), |_| rng.random_range(-0.05..0.05));
            let vo = Array3::from_shape_fn((3, 8, 3), |_| rng.random_range(-0.05..0.05));
            let r = exp_map(&Vec3::from(w));
            let tv = Vec3::from(t);
            let move_all = |v: &Array3<f64>| {
                let mut out = v.clone();
                for f in 0..v.dim().0 {
                    for i in 0..v.dim().1 {
                        let x = r * Vec3::new(v[[f, i, 0]], v[[f, i, 1]], v[[f, i, 2]]) + tv;
                        for c in 0..3 {
                            out[[f, i, c]] = x[c];
                        }
                    }
                }
                out
            };
            let a = evaluate(distance_map(vh.view(), vo.view()).unwrap().view(), 0.05, Terms::Both).total;
            let b = evaluate(distance_map(move_all(&vh).view(), move_all(&vo).view()).unwrap().view(), 0.05, Terms::Both).total;
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
