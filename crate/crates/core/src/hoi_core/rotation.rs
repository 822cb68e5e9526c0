//! Axis-angle helpers on top of nalgebra.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

pub fn vec3(v: &[f64]) -> Vec3 {
    Vec3::new(v[0], v[1], v[2])
}

pub fn exp_map(w: &Vec3) -> Mat3 {
    Rotation3::from_scaled_axis(*w).into_inner()
}

pub fn log_map(r: &Mat3) -> Vec3 {
    Rotation3::from_matrix_unchecked(*r).scaled_axis()
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Wraps the rotation angle into [-π, π] so the returned vector has norm ≤ π
/// and describes the same rotation. Idempotent.
pub fn canonicalize(w: [f64; 3]) -> [f64; 3] {
    let v = Vec3::from(w);
    let theta = v.norm();
    if theta <= PI {
        return w;
    }
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    let out = v * (t / theta);
    [out.x, out.y, out.z]
}

/// Partial derivatives ∂R/∂w_i of the exponential map, i = 0..3.
pub fn exp_map_jacobian(w: &Vec3) -> [Mat3; 3] {
    let theta2 = w.norm_squared();
    let basis = [Vec3::x(), Vec3::y(), Vec3::z()];
    if theta2 < 1e-16 {
        return basis.map(|e| skew(&e));
    }
    let r = exp_map(w);
    let i_minus_r = Mat3::identity() - r;
    basis.map(|e| {
        let k = w.dot(&e);
        let c = w.cross(&(i_minus_r * e));
        (skew(w) * k + skew(&c)) / theta2 * r
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn jacobian_matches_finite_differences() {
        for w in [Vec3::new(0.3, -1.2, 0.7), Vec3::new(1e-9, 0.0, 0.0), Vec3::new(2.9, 0.1, 0.2)] {
            let jac = exp_map_jacobian(&w);
            for (i, j) in jac.iter().enumerate() {
                let h = 1e-6;
                let mut wp = w;
                let mut wm = w;
                wp[i] += h;
                wm[i] -= h;
                let fd = (exp_map(&wp) - exp_map(&wm)) / (2.0 * h);
                assert_abs_diff_eq!(*j, fd, epsilon = 1e-7);
            }
        }
    }

    proptest! {
        #[test]
        fn canonicalize_keeps_rotation(x in -12.0f64..12.0, y in -12.0f64..12.0, z in -12.0f64..12.0) {
            let c = canonicalize([x, y, z]);
            prop_assert!(Vec3::from(c).norm() <= PI + 1e-12);
            prop_assert_eq!(canonicalize(c), c);
            let a = exp_map(&Vec3::new(x, y, z));
            let b = exp_map(&Vec3::from(c));
            prop_assert!((a - b).abs().max() < 1e-9);
        }
    }
}
