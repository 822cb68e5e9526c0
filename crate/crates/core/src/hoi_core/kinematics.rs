use ndarray::{Array3, ArrayView1};

use super::rotation::{exp_map, Mat3, Vec3};
use super::{BodyLayout, BodyPoseSequence, ObjectGeometry, ObjectPostureSequence};
use crate::error::{Error, Result};

/// Rigid skeleton: a rooted tree of joints with fixed bone offsets.
///
/// Only the joints listed in `rotated` carry axis-angle parameters; the rest
/// (fingertips, head, ankles) inherit their parent's orientation.
#[derive(Clone, Debug, PartialEq)]
pub struct KinematicBody {
    pub names: Vec<String>,
    pub parents: Vec<Option<usize>>,
    /// Offset from the parent joint, in the parent's frame.
    pub offsets: Vec<[f64; 3]>,
    pub rotated: Vec<usize>,
    pub hands: Vec<usize>,
}

impl KinematicBody {
    pub fn new(
        names: Vec<String>,
        parents: Vec<Option<usize>>,
        offsets: Vec<[f64; 3]>,
        rotated: Vec<usize>,
        hands: Vec<usize>,
    ) -> Result<Self> {
        let n = names.len();
        if parents.len() != n || offsets.len() != n {
            return Err(Error::Structural("joint tables have different lengths".into()));
        }
        if n == 0 || parents[0].is_some() {
            return Err(Error::Structural("joint 0 must be the root".into()));
        }
        for (i, p) in parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < i => {}
                _ => return Err(Error::Structural(format!("joint {i} has an invalid parent"))),
            }
        }
        if rotated.first() != Some(&0) {
            return Err(Error::Structural("the root must carry a rotation".into()));
        }
        if rotated.windows(2).any(|w| w[0] >= w[1]) || hands.iter().chain(&rotated).any(|&j| j >= n) {
            return Err(Error::Structural("bad rotated or hand joint indices".into()));
        }
        Ok(Self { names, parents, offsets, rotated, hands })
    }

    /// The 23-joint desk skeleton: y up, facing +z, the body's right side at -x.
    pub fn smpl_lite() -> Self {
        let mut names = Vec::new();
        let mut parents = Vec::new();
        let mut offsets = Vec::new();
        let mut add = |name: &str, parent: Option<usize>, off: [f64; 3]| {
            names.push(name.to_string());
            parents.push(parent);
            offsets.push(off);
            names.len() - 1
        };
        let pelvis = add("pelvis", None, [0.0, 0.0, 0.0]);
        let spine = add("spine", Some(pelvis), [0.0, 0.12, 0.0]);
        let chest = add("chest", Some(spine), [0.0, 0.20, 0.0]);
        let neck = add("neck", Some(chest), [0.0, 0.20, 0.0]);
        add("head", Some(neck), [0.0, 0.12, 0.0]);
        for (side, sx) in [("r", -1.0), ("l", 1.0)] {
            let sh = add(&format!("{side}_shoulder"), Some(chest), [0.18 * sx, 0.16, 0.0]);
            let el = add(&format!("{side}_elbow"), Some(sh), [0.0, -0.28, 0.0]);
            let wr = add(&format!("{side}_wrist"), Some(el), [0.0, -0.26, 0.0]);
            for (k, tip) in FINGERTIPS.iter().enumerate() {
                add(&format!("{side}_tip{k}"), Some(wr), [tip[0] * sx, tip[1], tip[2]]);
            }
        }
        for (side, sx) in [("r", -1.0), ("l", 1.0)] {
            let hip = add(&format!("{side}_hip"), Some(pelvis), [0.09 * sx, -0.05, 0.0]);
            let knee = add(&format!("{side}_knee"), Some(hip), [0.0, -0.42, 0.0]);
            add(&format!("{side}_ankle"), Some(knee), [0.0, -0.42, 0.0]);
        }
        let idx = |n: &str| names.iter().position(|x| x == n).unwrap();
        let rotated = [
            "pelvis", "spine", "chest", "neck", "r_shoulder", "r_elbow", "r_wrist", "l_shoulder",
            "l_elbow", "l_wrist", "r_hip", "r_knee", "l_hip", "l_knee",
        ]
        .map(idx)
        .to_vec();
        let hands = [
            "r_wrist", "r_tip0", "r_tip1", "r_tip2", "l_wrist", "l_tip0", "l_tip1", "l_tip2",
        ]
        .map(idx)
        .to_vec();
        Self::new(names, parents, offsets, rotated, hands).expect("built-in skeleton is valid")
    }

    pub fn n_joints(&self) -> usize {
        self.names.len()
    }

    pub fn joint(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn pose_width(&self) -> usize {
        3 + 3 * self.rotated.len()
    }

    pub fn layout(&self) -> BodyLayout {
        BodyLayout::new(self.rotated.iter().map(|&j| self.names[j].clone()).collect())
    }

    /// World positions and orientations of every joint for one pose frame.
    pub fn pose_frame(&self, frame: ArrayView1<f64>) -> (Vec<Vec3>, Vec<Mat3>) {
        let n = self.n_joints();
        let mut local = vec![Mat3::identity(); n];
        for (slot, &j) in self.rotated.iter().enumerate() {
            let s = 3 + 3 * slot;
            local[j] = exp_map(&Vec3::new(frame[s], frame[s + 1], frame[s + 2]));
        }
        let mut pos = Vec::with_capacity(n);
        let mut rot = Vec::with_capacity(n);
        for j in 0..n {
            let off = Vec3::from(self.offsets[j]);
            match self.parents[j] {
                None => {
                    pos.push(Vec3::new(frame[0], frame[1], frame[2]) + off);
                    rot.push(local[j]);
                }
                Some(p) => {
                    pos.push(pos[p] + rot[p] * off);
                    rot.push(rot[p] * local[j]);
                }
            }
        }
        (pos, rot)
    }
}

/// Finger tip offsets in the right wrist frame; the palm faces the wrist's +z.
pub const FINGERTIPS: [[f64; 3]; 3] = [[0.045, -0.10, 0.07], [-0.045, -0.10, 0.07], [0.0, -0.02, 0.07]];

#[derive(Clone, Debug)]
pub struct JointPositions {
    /// N × J_total × 3
    pub all: Array3<f64>,
    /// N × J × 3, rows picked by the skeleton's hand set
    pub hands: Array3<f64>,
}

pub fn forward_kinematics(body: &BodyPoseSequence, skel: &KinematicBody) -> Result<JointPositions> {
    let width = body.frames.ncols();
    if width != skel.pose_width() {
        return Err(Error::Structural(format!(
            "pose width {width} does not match skeleton width {}",
            skel.pose_width()
        )));
    }
    let n = body.frames.nrows();
    let mut all = Array3::zeros((n, skel.n_joints(), 3));
    let mut hands = Array3::zeros((n, skel.hands.len(), 3));
    for (f, frame) in body.frames.rows().into_iter().enumerate() {
        let (pos, _) = skel.pose_frame(frame);
        for (j, p) in pos.iter().enumerate() {
            for c in 0..3 {
                all[[f, j, c]] = p[c];
            }
        }
        for (h, &j) in skel.hands.iter().enumerate() {
            for c in 0..3 {
                hands[[f, h, c]] = pos[j][c];
            }
        }
    }
    Ok(JointPositions { all, hands })
}

/// Applies the per-frame rigid posture to the object's local points: R(ω_n) p + τ_n.
pub fn transform_object(g: &ObjectGeometry, o: &ObjectPostureSequence) -> Array3<f64> {
    let n = o.frames.nrows();
    let p = g.points.nrows();
    let mut out = Array3::zeros((n, p, 3));
    for (f, frame) in o.frames.rows().into_iter().enumerate() {
        let r = exp_map(&Vec3::new(frame[0], frame[1], frame[2]));
        let t = Vec3::new(frame[3], frame[4], frame[5]);
        for (i, pt) in g.points.rows().into_iter().enumerate() {
            let q = r * Vec3::new(pt[0], pt[1], pt[2]) + t;
            for c in 0..3 {
                out[[f, i, c]] = q[c];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hoi_core::Mat;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn chain() -> KinematicBody {
        KinematicBody::new(
            vec!["a".into(), "b".into()],
            vec![None, Some(0)],
            vec![[0.0; 3], [1.0, 0.0, 0.0]],
            vec![0],
            vec![1],
        )
        .unwrap()
    }

    #[test]
    fn rest_pose_is_cumulative_offsets() {
        let skel = KinematicBody::smpl_lite();
        let body = BodyPoseSequence::new(Mat::zeros((2, skel.pose_width())));
        let fk = forward_kinematics(&body, &skel).unwrap();
        for j in 0..skel.n_joints() {
            let mut acc = Vec3::zeros();
            let mut k = Some(j);
            while let Some(i) = k {
                acc += Vec3::from(skel.offsets[i]);
                k = skel.parents[i];
            }
            for c in 0..3 {
                assert_abs_diff_eq!(fk.all[[1, j, c]], acc[c], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn root_translation_shifts_everything() {
        let skel = KinematicBody::smpl_lite();
        let mut frames = Mat::from_shape_fn((1, skel.pose_width()), |(_, i)| 0.1 * (i as f64).sin());
        let base = forward_kinematics(&BodyPoseSequence::new(frames.clone()), &skel).unwrap();
        frames[[0, 0]] += 1.0;
        let moved = forward_kinematics(&BodyPoseSequence::new(frames), &skel).unwrap();
        for j in 0..skel.n_joints() {
            assert_abs_diff_eq!(moved.all[[0, j, 0]] - base.all[[0, j, 0]], 1.0, epsilon = 1e-12);
            assert_eq!(moved.all[[0, j, 1]], base.all[[0, j, 1]]);
        }
    }

    #[test]
    fn quarter_turn_chain() {
        let body = BodyPoseSequence::new(Mat::from_shape_vec((1, 6), vec![0.0, 0.0, 0.0, 0.0, 0.0, FRAC_PI_2]).unwrap());
        let fk = forward_kinematics(&body, &chain()).unwrap();
        assert_abs_diff_eq!(fk.all[[0, 1, 0]], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(fk.all[[0, 1, 1]], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(fk.hands[[0, 0, 1]], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn width_mismatch_is_structural() {
        let body = BodyPoseSequence::new(Mat::zeros((1, 9)));
        assert!(matches!(forward_kinematics(&body, &chain()), Err(Error::Structural(_))));
    }

    #[test]
    fn invalid_tree_rejected() {
        let r = KinematicBody::new(
            vec!["a".into(), "b".into()],
            vec![None, Some(1)],
            vec![[0.0; 3]; 2],
            vec![0],
            vec![],
        );
        assert!(r.is_err());
    }
}
