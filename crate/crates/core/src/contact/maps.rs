use ndarray::{Array1, Array3, ArrayView3, Axis};

use crate::error::{Error, Result};

/// Normalizing factor for distances, in meters.
pub const SIGMA: f64 = 0.05;

/// Confidence threshold; with `SIGMA` this means "closer than 5 cm".
pub fn default_lambda() -> f64 {
    (-0.5f64).exp()
}

/// d[n, j, p] = ‖v_h[n, j] − v_o[n, p]‖
pub fn distance_map(v_h: ArrayView3<f64>, v_o: ArrayView3<f64>) -> Result<Array3<f64>> {
    let (n, j, c) = v_h.dim();
    let (no, p, co) = v_o.dim();
    if n != no || c != 3 || co != 3 {
        return Err(Error::Structural(format!(
            "hand {:?} and object {:?} shapes do not pair up",
            v_h.dim(),
            v_o.dim()
        )));
    }
    let mut d = Array3::zeros((n, j, p));
    for f in 0..n {
        for a in 0..j {
            let h = [v_h[[f, a, 0]], v_h[[f, a, 1]], v_h[[f, a, 2]]];
            for b in 0..p {
                let dx = h[0] - v_o[[f, b, 0]];
                let dy = h[1] - v_o[[f, b, 1]];
                let dz = h[2] - v_o[[f, b, 2]];
                d[[f, a, b]] = (dx * dx + dy * dy + dz * dz).sqrt();
            }
        }
    }
    Ok(d)
}

/// exp(−d² / 2σ²)
pub fn normalize_map(d: ArrayView3<f64>, sigma: f64) -> Result<Array3<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::Argument(format!("sigma must be positive, got {sigma}")));
    }
    let k = 1.0 / (2.0 * sigma * sigma);
    Ok(d.mapv(|x| (-x * x * k).exp()))
}

/// c_p = 1 iff the largest confidence over frames and hand joints exceeds λ.
pub fn gt_contact(d_bar: ArrayView3<f64>, lambda: f64) -> Vec<bool> {
    max_over_hands(d_bar).iter().map(|&m| m > lambda).collect()
}

/// Distance below which the thresholded rule fires: σ·√(−2 ln λ).
pub fn contact_radius(sigma: f64, lambda: f64) -> f64 {
    sigma * (-2.0 * lambda.ln()).sqrt()
}

/// Per point, the maximum over frames and hand joints.
pub fn max_over_hands(m: ArrayView3<f64>) -> Array1<f64> {
    let per_frame = m.fold_axis(Axis(1), f64::NEG_INFINITY, |a, &b| a.max(b));
    per_frame.fold_axis(Axis(0), f64::NEG_INFINITY, |a, &b| a.max(b))
}

/// Per point, the minimum over frames and hand joints.
pub fn min_over_hands(d: ArrayView3<f64>) -> Array1<f64> {
    let per_frame = d.fold_axis(Axis(1), f64::INFINITY, |a, &b| a.min(b));
    per_frame.fold_axis(Axis(0), f64::INFINITY, |a, &b| a.min(b))
}

/// Per frame, the minimum hand-object distance.
pub fn min_per_frame(d: ArrayView3<f64>) -> Vec<f64> {
    d.outer_iter()
        .map(|f| f.iter().copied().fold(f64::INFINITY, f64::min))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array3;

    #[test]
    fn three_four_five() {
        let h = Array3::zeros((1, 1, 3));
        let o = Array3::from_shape_vec((1, 1, 3), vec![3.0, 4.0, 0.0]).unwrap();
        assert_eq!(distance_map(h.view(), o.view()).unwrap()[[0, 0, 0]], 5.0);
        assert_eq!(distance_map(o.view(), o.view()).unwrap()[[0, 0, 0]], 0.0);
    }

    #[test]
    fn sigma_gives_exp_minus_half() {
        let d = Array3::from_elem((1, 1, 1), SIGMA);
        let v = normalize_map(d.view(), SIGMA).unwrap()[[0, 0, 0]];
        assert_abs_diff_eq!(v, 0.606531, epsilon = 1e-6);
        assert!(normalize_map(d.view(), 0.0).is_err());
        assert_abs_diff_eq!(contact_radius(SIGMA, default_lambda()), SIGMA, epsilon = 1e-15);
    }

    #[test]
    fn far_object_has_no_contact() {
        let d = Array3::from_elem((4, 8, 5), 1.0);
        let c = gt_contact(normalize_map(d.view(), SIGMA).unwrap().view(), default_lambda());
        assert!(c.iter().all(|&x| !x));
    }
}
