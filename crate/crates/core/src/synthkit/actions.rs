use nalgebra::{DMatrix, DVector, UnitQuaternion};
use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::objects::fingertip_centroid;
use crate::hoi_core::rotation::{exp_map, log_map, Mat3, Vec3};
use crate::hoi_core::{KinematicBody, Mat};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionFamily {
    Lift,
    Push,
    Drink,
    Inspect,
}

/// Standing root height.
pub const ROOT_HEIGHT: f64 = 0.95;

/// One key of the right hand's world path: fingertip centroid and wrist rotation.
#[derive(Clone, Debug)]
pub struct HandKey {
    pub frame: usize,
    pub centroid: Vec3,
    pub rot: Mat3,
    /// Interpolate linearly into this key instead of with a smoothstep.
    pub linear: bool,
}

/// World-space script of one action: where and how the right hand grasps, and
/// where it carries the object.
#[derive(Clone, Debug)]
pub struct Script {
    /// Contact window, inclusive.
    pub window: (usize, usize),
    /// Palm normal and finger direction at the grasp.
    pub palm: Vec3,
    pub fingers: Vec3,
    /// Fingertip centroid at the grasp.
    pub grasp: Vec3,
    /// Hand path between the two rest poses.
    pub hand: Vec<HandKey>,
    /// (frame, spine, neck, root offset) torso keys.
    pub torso: Vec<(usize, f64, f64, Vec3)>,
}

/// Frames spent on the final straight approach and on the release.
pub const APPROACH_FRAMES: usize = 2;
/// Distance covered by the approach and the release.
pub const APPROACH_DIST: f64 = 0.16;

impl ActionFamily {
    pub const ALL: [ActionFamily; 4] = [ActionFamily::Lift, ActionFamily::Push, ActionFamily::Drink, ActionFamily::Inspect];

    pub fn name(self) -> &'static str {
        match self {
            ActionFamily::Lift => "lift",
            ActionFamily::Push => "push",
            ActionFamily::Drink => "drink",
            ActionFamily::Inspect => "inspect",
        }
    }

    pub fn verb(self) -> &'static str {
        match self {
            ActionFamily::Lift => "lifts",
            ActionFamily::Push => "pushes",
            ActionFamily::Drink => "sips",
            ActionFamily::Inspect => "inspects",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s || a.verb() == s)
    }

    pub fn script(self) -> Script {
        let v = Vec3::new;
        let z = Vec3::zeros();
        // (window, palm, fingers, grasp, approach direction, via point, carry keys, torso keys)
        let (window, palm, fingers, grasp, away, via, carry, torso): (_, _, _, _, Vec3, Vec3, Vec<(usize, Vec3, Vec3)>, _) = match self {
            ActionFamily::Lift => (
                (18, 45),
                v(0.0, -1.0, 0.0),
                v(0.0, 0.0, 1.0),
                v(-0.22, 1.10, 0.48),
                v(0.0, 1.0, -0.12),
                v(-0.26, 1.32, 0.16),
                vec![(27, v(0.0, 0.24, -0.06), z), (36, v(0.02, 0.26, -0.06), z), (45, v(0.06, 0.0, 0.0), z)],
                vec![(0, 0.0, 0.0, z), (16, 0.15, 0.35, z), (27, 0.05, 0.15, z), (36, 0.05, 0.15, z), (45, 0.15, 0.35, z), (54, 0.0, 0.0, z)],
            ),
            ActionFamily::Push => (
                (16, 47),
                v(0.0, 0.0, 1.0),
                v(0.0, 1.0, 0.0),
                v(-0.20, 1.15, 0.34),
                v(0.0, -0.1, -1.0),
                v(-0.24, 1.02, 0.10),
                vec![(31, v(0.0, 0.0, 0.12), z), (47, v(0.0, 0.0, 0.24), z)],
                vec![
                    (0, 0.0, 0.0, z),
                    (14, 0.10, 0.10, z),
                    (31, 0.18, 0.10, v(0.0, -0.01, 0.10)),
                    (47, 0.25, 0.10, v(0.0, -0.02, 0.22)),
                    (56, 0.05, 0.0, v(0.0, 0.0, 0.22)),
                ],
            ),
            ActionFamily::Drink => (
                (20, 44),
                v(1.0, 0.0, 0.0),
                v(0.0, 0.0, 1.0),
                v(-0.16, 1.10, 0.38),
                v(-1.0, 0.0, -0.12),
                v(-0.40, 1.05, 0.15),
                vec![
                    (30, v(0.10, 0.30, -0.12), v(0.0, 0.0, 0.5)),
                    (36, v(0.10, 0.32, -0.14), v(0.0, 0.0, 0.7)),
                    (44, v(0.02, 0.0, 0.0), z),
                ],
                vec![(0, 0.0, 0.0, z), (18, 0.05, 0.20, z), (30, -0.05, -0.20, z), (36, -0.08, -0.25, z), (44, 0.05, 0.20, z), (54, 0.0, 0.0, z)],
            ),
            ActionFamily::Inspect => (
                (14, 49),
                v(0.0, 1.0, 0.0),
                v(0.0, 0.0, 1.0),
                v(-0.20, 1.18, 0.34),
                v(0.0, -1.0, -0.4),
                v(-0.26, 0.95, 0.18),
                vec![
                    (22, v(0.06, 0.22, -0.08), z),
                    (30, v(0.06, 0.22, -0.08), v(0.0, 0.0, 0.8)),
                    (38, v(0.06, 0.22, -0.08), v(0.0, 0.0, -0.6)),
                    (44, v(0.06, 0.22, -0.08), z),
                    (49, v(0.0, 0.0, 0.0), z),
                ],
                vec![(0, 0.0, 0.0, z), (12, 0.08, 0.30, z), (22, 0.02, 0.45, z), (44, 0.02, 0.45, z), (49, 0.08, 0.30, z), (58, 0.0, 0.0, z)],
            ),
        };
        let (s, e) = window;
        let r_grasp = grasp_rotation(palm, fingers);
        let lead = APPROACH_FRAMES;
        let mut hand = vec![
            HandKey { frame: s - lead - 7, centroid: via, rot: r_grasp, linear: false },
            HandKey { frame: s - lead, centroid: grasp + away.normalize() * APPROACH_DIST, rot: r_grasp, linear: false },
            HandKey { frame: s, centroid: grasp, rot: r_grasp, linear: true },
        ];
        for (frame, offset, extra) in carry {
            hand.push(HandKey { frame, centroid: grasp + offset, rot: exp_map(&extra) * r_grasp, linear: false });
        }
        let last = hand.last().unwrap().clone();
        assert_eq!(last.frame, e, "carry must end at the window end");
        let root_end = torso.last().map_or(z, |t: &(usize, f64, f64, Vec3)| t.3);
        let back = -(last.rot * Vec3::z()) * APPROACH_DIST;
        hand.push(HandKey { frame: e + lead, centroid: last.centroid + back, rot: last.rot, linear: true });
        hand.push(HandKey { frame: e + lead + 7, centroid: via + root_end, rot: r_grasp, linear: false });
        Script { window, palm, fingers, grasp, hand, torso }
    }
}

/// Wrist-to-world rotation taking the wrist's +z to `palm` and its −y to `fingers`.
pub fn grasp_rotation(palm: Vec3, fingers: Vec3) -> Mat3 {
    let z = palm.normalize();
    let y = -fingers.normalize();
    let x = y.cross(&z);
    Mat3::from_columns(&[x, y, z])
}

fn smoothstep(u: f64) -> f64 {
    u * u * (3.0 - 2.0 * u)
}

/// Indices of pose parameters used by the generator.
pub struct Slots {
    pub spine: usize,
    pub chest: usize,
    pub neck: usize,
    pub r_shoulder: usize,
    pub r_elbow: usize,
    pub r_wrist: usize,
    pub l_shoulder: usize,
    pub l_elbow: usize,
}

impl Slots {
    pub fn new(skel: &KinematicBody) -> Self {
        let layout = skel.layout();
        let at = |n: &str| layout.rotation(n).expect("joint in layout").start;
        Self {
            spine: at("spine"),
            chest: at("chest"),
            neck: at("neck"),
            r_shoulder: at("r_shoulder"),
            r_elbow: at("r_elbow"),
            r_wrist: at("r_wrist"),
            l_shoulder: at("l_shoulder"),
            l_elbow: at("l_elbow"),
        }
    }
}

fn rest_pose(skel: &KinematicBody, slots: &Slots) -> Array1<f64> {
    let mut p = Array1::zeros(skel.pose_width());
    p[1] = ROOT_HEIGHT;
    p[slots.l_shoulder + 2] = 0.12;
    p[slots.l_elbow] = -0.15;
    p[slots.r_shoulder + 2] = -0.12;
    p[slots.r_elbow] = -0.15;
    p
}

fn torso_at(script: &Script, frame: usize) -> (f64, f64, Vec3) {
    let keys = &script.torso;
    if frame <= keys[0].0 {
        return (keys[0].1, keys[0].2, keys[0].3);
    }
    for w in keys.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if frame <= b.0 {
            let u = smoothstep((frame - a.0) as f64 / (b.0 - a.0) as f64);
            return (a.1 + (b.1 - a.1) * u, a.2 + (b.2 - a.2) * u, a.3 + (b.3 - a.3) * u);
        }
    }
    let l = keys.last().unwrap();
    (l.1, l.2, l.3)
}

fn with_torso(base: &Array1<f64>, slots: &Slots, spine: f64, neck: f64, root: Vec3) -> Array1<f64> {
    let mut p = base.clone();
    p[0] += root.x;
    p[1] += root.y;
    p[2] += root.z;
    p[slots.spine] = spine * 0.6;
    p[slots.chest] = spine * 0.4;
    p[slots.neck] = neck;
    p
}

const IK_PARAMS: usize = 8;

fn ik_apply(p: &mut Array1<f64>, slots: &Slots, x: &DVector<f64>) {
    for k in 0..3 {
        p[slots.r_shoulder + k] = x[k];
        p[slots.r_wrist + k] = x[5 + k];
    }
    p[slots.r_elbow] = x[3];
    p[slots.r_elbow + 1] = x[4];
}

fn ik_params(p: &Array1<f64>, slots: &Slots) -> DVector<f64> {
    let mut x = DVector::zeros(IK_PARAMS);
    for k in 0..3 {
        x[k] = p[slots.r_shoulder + k];
        x[5 + k] = p[slots.r_wrist + k];
    }
    x[3] = p[slots.r_elbow];
    x[4] = p[slots.r_elbow + 1];
    x
}

/// Solves right shoulder, elbow (flexion + twist) and wrist angles so the wrist
/// reaches `pos` with orientation `rot`, preferring solutions close to
/// `reference`. `start` seeds the search.
pub fn solve_right_arm(
    skel: &KinematicBody,
    slots: &Slots,
    pose: &Array1<f64>,
    pos: Vec3,
    rot: &Mat3,
    reference: &Array1<f64>,
    start: &Array1<f64>,
) -> Array1<f64> {
    let wrist = skel.joint("r_wrist").unwrap();
    let elbow = skel.joint("r_elbow").unwrap();
    let mu = 1e-4f64;
    let x_ref = ik_params(reference, slots);
    let residual = |x: &DVector<f64>| -> DVector<f64> {
        let mut p = pose.clone();
        ik_apply(&mut p, slots, x);
        let (jp, jr) = skel.pose_frame(p.view());
        let e_pos = (jp[wrist] - pos) * 10.0;
        let e_rot = log_map(&(rot.transpose() * jr[wrist]));
        let mut r = DVector::zeros(6 + IK_PARAMS);
        for k in 0..3 {
            r[k] = e_pos[k];
            r[3 + k] = e_rot[k];
        }
        for k in 0..IK_PARAMS {
            r[6 + k] = mu.sqrt() * (x[k] - x_ref[k]);
        }
        r
    };
    let mut x = ik_params(start, slots);
    let mut lambda = 1e-3;
    let mut r = residual(&x);
    let mut cost = r.norm_squared();
    for _ in 0..100 {
        let mut jac = DMatrix::zeros(r.len(), IK_PARAMS);
        for k in 0..IK_PARAMS {
            let h = 1e-6;
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            jac.set_column(k, &((residual(&xp) - residual(&xm)) / (2.0 * h)));
        }
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        let mut improved = false;
        for _ in 0..12 {
            let a = &jtj + DMatrix::identity(IK_PARAMS, IK_PARAMS) * lambda;
            let step = a.lu().solve(&(-&g)).unwrap_or_else(|| DVector::zeros(IK_PARAMS));
            let xn = &x + step;
            let rn = residual(&xn);
            let cn = rn.norm_squared();
            if cn < cost {
                improved = cost - cn > 1e-14;
                x = xn;
                r = rn;
                cost = cn;
                lambda = (lambda * 0.3).max(1e-9);
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let mut p = pose.clone();
    ik_apply(&mut p, slots, &x);
    // hit the orientation exactly
    let (_, jr) = skel.pose_frame(p.view());
    let local = log_map(&(jr[elbow].transpose() * rot));
    for k in 0..3 {
        p[slots.r_wrist + k] = local[k];
    }
    p
}

fn interp_keys(keys: &[HandKey], t: usize) -> (Vec3, Mat3) {
    let k = keys.iter().position(|k| k.frame >= t).unwrap_or(keys.len() - 1);
    if keys[k].frame <= t || k == 0 {
        return (keys[k].centroid, keys[k].rot);
    }
    let (a, b) = (&keys[k - 1], &keys[k]);
    let u = (t - a.frame) as f64 / (b.frame - a.frame) as f64;
    let w = if b.linear { u } else { smoothstep(u) };
    let qa = UnitQuaternion::from_matrix(&a.rot);
    let qb = UnitQuaternion::from_matrix(&b.rot);
    let q = qa.slerp(&qb, w);
    (a.centroid + (b.centroid - a.centroid) * w, q.to_rotation_matrix().into_inner())
}

/// Closed-form base curve of one action family: N × D_b.
pub fn base_curve(action: ActionFamily, skel: &KinematicBody, n_frames: usize) -> Mat {
    let slots = Slots::new(skel);
    let script = action.script();
    let rest = rest_pose(skel, &slots);
    let f_bar = fingertip_centroid();
    let wrist = skel.joint("r_wrist").unwrap();

    let (rp, rr) = skel.pose_frame(rest.view());
    let rest_centroid = rp[wrist] + rr[wrist] * f_bar;
    let (_, _, root_end) = torso_at(&script, n_frames - 1);
    let mut keys = vec![HandKey { frame: 0, centroid: rest_centroid, rot: rr[wrist], linear: false }];
    keys.extend(script.hand.iter().cloned());
    keys.push(HandKey { frame: n_frames - 1, centroid: rest_centroid + root_end, rot: rr[wrist], linear: false });

    let mut out = Mat::zeros((n_frames, skel.pose_width()));
    let mut prev = rest.clone();
    for t in 0..n_frames {
        let (sp, nk, root) = torso_at(&script, t);
        let mut torso = with_torso(&rest, &slots, sp, nk, root);
        let (c, rot) = interp_keys(&keys, t);
        torso = solve_right_arm(skel, &slots, &torso, c - rot * f_bar, &rot, &rest, &prev);
        // idle sway of the free arm
        let ph = 2.0 * std::f64::consts::PI * t as f64 / (n_frames - 1) as f64;
        torso[slots.l_shoulder] += 0.06 * ph.sin();
        out.row_mut(t).assign(&torso);
        prev = torso;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grasp_rotation_is_proper() {
        for a in ActionFamily::ALL {
            let s = a.script();
            let r = grasp_rotation(s.palm, s.fingers);
            assert!((r.transpose() * r - Mat3::identity()).abs().max() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ik_reaches_grasps() {
        let skel = KinematicBody::smpl_lite();
        let slots = Slots::new(&skel);
        let wrist = skel.joint("r_wrist").unwrap();
        for a in ActionFamily::ALL {
            let s = a.script();
            let rot = grasp_rotation(s.palm, s.fingers);
            let target = s.grasp - rot * fingertip_centroid();
            let rest = rest_pose(&skel, &slots);
            let p = solve_right_arm(&skel, &slots, &rest, target, &rot, &rest, &rest);
            let (jp, jr) = skel.pose_frame(p.view());
            assert!((jp[wrist] - target).norm() < 5e-3, "{a:?}: {}", (jp[wrist] - target).norm());
            assert!((jr[wrist] - rot).abs().max() < 1e-9);
        }
    }
}
