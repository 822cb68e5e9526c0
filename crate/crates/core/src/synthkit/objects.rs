use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hoi_core::rotation::{Mat3, Vec3};
use crate::hoi_core::{Mat, FINGERTIPS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectTemplate {
    Box,
    Cylinder,
    Sphere,
}

impl ObjectTemplate {
    pub const ALL: [ObjectTemplate; 3] = [ObjectTemplate::Box, ObjectTemplate::Cylinder, ObjectTemplate::Sphere];

    pub fn noun(self) -> &'static str {
        match self {
            ObjectTemplate::Box => "box",
            ObjectTemplate::Cylinder => "cylinder",
            ObjectTemplate::Sphere => "sphere",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.noun() == s)
    }

    /// Box half-extents, (radius, half-height, 0) for cylinders, (radius, 0, 0) for spheres.
    pub fn dims(self) -> [f64; 3] {
        match self {
            ObjectTemplate::Box => [0.18, 0.12, 0.14],
            ObjectTemplate::Cylinder => [0.14, 0.225, 0.0],
            ObjectTemplate::Sphere => [0.20, 0.0, 0.0],
        }
    }

    /// Surface point whose outward normal is `n` (one of ±x, ±y, ±z).
    pub fn site(self, n: Vec3) -> Vec3 {
        let d = self.dims();
        match self {
            ObjectTemplate::Box => Vec3::new(n.x * d[0], n.y * d[1], n.z * d[2]),
            ObjectTemplate::Cylinder => {
                if n.y.abs() > 0.5 {
                    Vec3::new(0.0, n.y * d[1], 0.0)
                } else {
                    Vec3::new(n.x * d[0], 0.0, n.z * d[0])
                }
            }
            ObjectTemplate::Sphere => n * d[0],
        }
    }

    fn area_weights(self) -> Vec<f64> {
        let d = self.dims();
        match self {
            ObjectTemplate::Box => {
                let (a, b, c) = (d[1] * d[2], d[0] * d[2], d[0] * d[1]);
                vec![a, a, b, b, c, c]
            }
            ObjectTemplate::Cylinder => vec![2.0 * d[0] * 2.0 * d[1], d[0] * d[0] / 2.0, d[0] * d[0] / 2.0],
            ObjectTemplate::Sphere => vec![1.0],
        }
    }

    fn sample_surface(self, rng: &mut ChaCha8Rng) -> Vec3 {
        let d = self.dims();
        let w = self.area_weights();
        let total: f64 = w.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut face = 0;
        while face + 1 < w.len() && u > w[face] {
            u -= w[face];
            face += 1;
        }
        let mut r = || rng.random::<f64>() * 2.0 - 1.0;
        match self {
            ObjectTemplate::Box => {
                let s = if face % 2 == 0 { 1.0 } else { -1.0 };
                match face / 2 {
                    0 => Vec3::new(s * d[0], r() * d[1], r() * d[2]),
                    1 => Vec3::new(r() * d[0], s * d[1], r() * d[2]),
                    _ => Vec3::new(r() * d[0], r() * d[1], s * d[2]),
                }
            }
            ObjectTemplate::Cylinder => match face {
                0 => {
                    let a = r() * std::f64::consts::PI;
                    Vec3::new(d[0] * a.cos(), r() * d[1], d[0] * a.sin())
                }
                _ => {
                    let s = if face == 1 { 1.0 } else { -1.0 };
                    loop {
                        let (x, z) = (r(), r());
                        if x * x + z * z <= 1.0 {
                            break Vec3::new(x * d[0], s * d[1], z * d[0]);
                        }
                    }
                }
            },
            ObjectTemplate::Sphere => loop {
                let v = Vec3::new(r(), r(), r());
                let n = v.norm();
                if n > 1e-3 && n <= 1.0 {
                    break v / n * d[0];
                }
            },
        }
    }
}

/// Fingertip positions relative to their centroid, in the wrist frame.
pub fn fingertip_spread() -> [Vec3; 3] {
    let c = FINGERTIPS.iter().fold(Vec3::zeros(), |a, t| a + Vec3::from(*t)) / 3.0;
    FINGERTIPS.map(|t| Vec3::from(t) - c)
}

pub fn fingertip_centroid() -> Vec3 {
    FINGERTIPS.iter().fold(Vec3::zeros(), |a, t| a + Vec3::from(*t)) / 3.0
}

/// Template geometry with the grasp sites of every action baked into the cloud.
#[derive(Clone, Debug)]
pub struct TemplateGeometry {
    pub template: ObjectTemplate,
    /// P × 3, centered on the centroid.
    pub points: Mat,
    /// Per action: site center on the surface (object frame) and outward normal.
    pub sites: Vec<(Vec3, Vec3)>,
    /// Per action: indices of the three points snapped under the fingertips.
    pub snapped: Vec<[usize; 3]>,
}

/// Minimum spacing between a snapped contact point and any other point.
pub const SNAP_CLEARANCE: f64 = 0.052;
const CANDIDATES: usize = 6000;

/// Builds the point cloud: snapped fingertip points for each grasp first, then
/// farthest-point sampling of surface candidates that keep clear of them.
/// `grasps` holds, per action, the grasp orientation (wrist to world at the
/// nominal grasp) and the site normal in the object frame.
pub fn build_template(template: ObjectTemplate, grasps: &[(Mat3, Vec3)], n_points: usize) -> TemplateGeometry {
    let spread = fingertip_spread();
    let mut pts: Vec<Vec3> = Vec::with_capacity(n_points);
    let mut sites = Vec::new();
    let mut snapped = Vec::new();
    for (r_target, normal) in grasps {
        let c = template.site(*normal);
        let mut idx = [0; 3];
        for (k, s) in spread.iter().enumerate() {
            idx[k] = pts.len();
            pts.push(r_target * s + c);
        }
        sites.push((c, *normal));
        snapped.push(idx);
    }
    assert!(pts.len() <= n_points, "more snapped points than the cloud holds");
    for (i, a) in pts.iter().enumerate() {
        for b in &pts[i + 1..] {
            assert!((a - b).norm() >= SNAP_CLEARANCE, "grasp sites overlap on {template:?}");
        }
    }
    let n_snapped = pts.len();

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + template as u64);
    let cands: Vec<Vec3> = (0..CANDIDATES)
        .map(|_| template.sample_surface(&mut rng))
        .filter(|c| pts.iter().all(|p| (c - p).norm() >= SNAP_CLEARANCE))
        .collect();
    let mut nearest: Vec<f64> = cands
        .iter()
        .map(|c| pts.iter().map(|p| (c - p).norm()).fold(f64::INFINITY, f64::min))
        .collect();
    while pts.len() < n_points {
        let (best, _) = nearest
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
        let chosen = cands[best];
        pts.push(chosen);
        for (d, c) in nearest.iter_mut().zip(&cands) {
            *d = d.min((c - chosen).norm());
        }
    }

    let centroid = pts.iter().fold(Vec3::zeros(), |a, p| a + p) / pts.len() as f64;
    let mut points = Mat::zeros((n_points, 3));
    for (i, p) in pts.iter().enumerate() {
        for k in 0..3 {
            // stored values are exactly representable in f32
            points[[i, k]] = ((p[k] - centroid[k]) as f32) as f64;
        }
    }
    let sites = sites.into_iter().map(|(c, n)| (c - centroid, n)).collect();
    debug_assert!(n_snapped <= n_points);
    TemplateGeometry { template, points, sites, snapped }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surface_samples_lie_on_surface() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in ObjectTemplate::ALL {
            let d = t.dims();
            for _ in 0..200 {
                let p = t.sample_surface(&mut rng);
                let on = match t {
                    ObjectTemplate::Box => {
                        (0..3).any(|k| (p[k].abs() - d[k]).abs() < 1e-12) && (0..3).all(|k| p[k].abs() <= d[k] + 1e-12)
                    }
                    ObjectTemplate::Cylinder => {
                        let r = (p.x * p.x + p.z * p.z).sqrt();
                        ((r - d[0]).abs() < 1e-12 && p.y.abs() <= d[1]) || ((p.y.abs() - d[1]).abs() < 1e-12 && r <= d[0])
                    }
                    ObjectTemplate::Sphere => (p.norm() - d[0]).abs() < 1e-12,
                };
                assert!(on, "{t:?} {p:?}");
            }
        }
    }
}
