//! Evaluation metrics over contrastive features and contact labels.

pub mod extractor;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::contact::{distance_map, min_per_frame};
use crate::error::{Error, Result};
use crate::hoi_core::{forward_kinematics, transform_object, KinematicBody};

pub use extractor::{hoi_frame_features, hoi_frame_width, ExtractorConfig, FeatureExtractor, HoiView};

pub const R_PRECISION_POOL: usize = 32;
pub const FID_JITTER: f64 = 1e-6;
/// Per-frame contact threshold in meters; strict.
pub const CONTACT_THRESHOLD: f64 = 0.05;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn moments(x: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = x.len();
    if n < 2 {
        return Err(Error::Argument(format!("need at least 2 feature vectors, got {n}")));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::Structural("feature vectors differ in width".into()));
    }
    let m = DMatrix::from_fn(n, d, |i, j| x[i][j]);
    let mu = m.row_mean().transpose();
    let c = DMatrix::from_fn(n, d, |i, j| m[(i, j)] - mu[j]);
    let cov = c.transpose() * &c / (n - 1) as f64;
    let cov = (&cov + cov.transpose()) * 0.5 + DMatrix::identity(d, d) * FID_JITTER;
    Ok((mu, cov))
}

fn psd_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().any(|l| !l.is_finite() || *l <= 0.0) {
        return Err(Error::Numerical(format!("{what} covariance is degenerate after jitter")));
    }
    let s = eig.eigenvalues.map(f64::sqrt);
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&s) * eig.eigenvectors.transpose())
}

/// Fréchet distance between Gaussians fitted to the two feature sets:
/// ‖μ₁ − μ₂‖² + Tr(Σ₁ + Σ₂ − 2 (Σ₁Σ₂)^½). The trace of the cross term is
/// taken from the symmetric product Σ₁^½ Σ₂ Σ₁^½, which has the same
/// spectrum.
pub fn fid(real: &[Vec<f64>], generated: &[Vec<f64>]) -> Result<f64> {
    let (m1, s1) = moments(real)?;
    let (m2, s2) = moments(generated)?;
    if m1.len() != m2.len() {
        return Err(Error::Structural("feature sets differ in width".into()));
    }
    let r1 = psd_sqrt(&s1, "first")?;
    psd_sqrt(&s2, "second")?;
    let prod = &r1 * &s2 * &r1;
    let prod = (&prod + prod.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(prod).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let v = (&m1 - &m2).norm_squared() + s1.trace() + s2.trace() - 2.0 * cross;
    if !v.is_finite() {
        return Err(Error::Numerical("non-finite Fréchet distance".into()));
    }
    Ok(v)
}

/// Top-1..=`top_k` retrieval rates. Each HOI feature ranks its own text
/// against 31 distractor texts drawn without replacement from the other
/// samples whose text feature differs from its own. Ties go to the true text.
pub fn r_precision<R: Rng>(hoi: &[Vec<f64>], text: &[Vec<f64>], top_k: usize, rng: &mut R) -> Result<Vec<f64>> {
    let n = hoi.len();
    if text.len() != n {
        return Err(Error::Structural("HOI and text features must be paired".into()));
    }
    if n < R_PRECISION_POOL {
        return Err(Error::Argument(format!("R-Precision needs at least {R_PRECISION_POOL} samples, got {n}")));
    }
    let mut hits = vec![0usize; top_k];
    for i in 0..n {
        let others: Vec<usize> = (0..n).filter(|&j| text[j] != text[i]).collect();
        if others.len() < R_PRECISION_POOL - 1 {
            return Err(Error::Argument(format!(
                "sample {i} has only {} samples with a different text for {} distractors",
                others.len(),
                R_PRECISION_POOL - 1
            )));
        }
        let own = dist(&hoi[i], &text[i]);
        let closer = sample_indices(rng, others.len(), R_PRECISION_POOL - 1)
            .into_iter()
            .filter(|&k| dist(&hoi[i], &text[others[k]]) < own)
            .count();
        for (k, h) in hits.iter_mut().enumerate() {
            if closer <= k {
                *h += 1;
            }
        }
    }
    Ok(hits.into_iter().map(|h| h as f64 / n as f64).collect())
}

/// Mean distance between matched HOI and text features.
pub fn mm_dist(hoi: &[Vec<f64>], text: &[Vec<f64>]) -> Result<f64> {
    if hoi.len() != text.len() || hoi.is_empty() {
        return Err(Error::Structural("need a non-empty set of matched pairs".into()));
    }
    Ok(hoi.iter().zip(text).map(|(h, t)| dist(h, t)).sum::<f64>() / hoi.len() as f64)
}

fn paired_subset_distance<R: Rng>(x: &[Vec<f64>], subset: usize, rng: &mut R) -> f64 {
    let a = sample_indices(rng, x.len(), subset).into_vec();
    let b = sample_indices(rng, x.len(), subset).into_vec();
    a.iter().zip(&b).map(|(&i, &j)| dist(&x[i], &x[j])).sum::<f64>() / subset as f64
}

/// Mean distance between two random subsets of `subset` features, paired
/// index by index.
pub fn diversity<R: Rng>(features: &[Vec<f64>], subset: usize, rng: &mut R) -> Result<f64> {
    if subset == 0 || features.len() < subset {
        return Err(Error::Argument(format!("diversity subset {subset} needs at least that many of {} features", features.len())));
    }
    Ok(paired_subset_distance(features, subset, rng))
}

/// Per text, the paired-subset distance between repeated generations,
/// averaged over texts.
pub fn mmodality<R: Rng>(groups: &[Vec<Vec<f64>>], subset: usize, rng: &mut R) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::Argument("no texts to measure multimodality over".into()));
    }
    if let Some(g) = groups.iter().find(|g| g.len() < subset.max(2)) {
        return Err(Error::Argument(format!("multimodality needs {} repeats per text, got {}", subset.max(2), g.len())));
    }
    let sum: f64 = groups.iter().map(|g| paired_subset_distance(g, subset, rng)).sum();
    Ok(sum / groups.len() as f64)
}

/// Per-frame contact: the smallest hand-object distance is strictly below 5 cm.
pub fn contact_labels(v: HoiView, skel: &KinematicBody) -> Result<Vec<bool>> {
    let hands = forward_kinematics(v.body, skel)?.hands;
    let pts = transform_object(v.geometry, v.object);
    let d = distance_map(hands.view(), pts.view())?;
    Ok(min_per_frame(d.view()).into_iter().map(|m| m < CONTACT_THRESHOLD).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactScores {
    /// Fraction of frames whose contact label agrees with ground truth.
    pub c_prec: f64,
    /// Fraction of generated frames in contact.
    pub c_percent: f64,
}

pub fn contact_metrics(generated: HoiView, truth: HoiView, skel: &KinematicBody) -> Result<ContactScores> {
    let g = contact_labels(generated, skel)?;
    let t = contact_labels(truth, skel)?;
    if g.len() != t.len() || g.is_empty() {
        return Err(Error::Structural("generated and ground-truth sequences differ in length".into()));
    }
    let n = g.len() as f64;
    Ok(ContactScores {
        c_prec: g.iter().zip(&t).filter(|(a, b)| a == b).count() as f64 / n,
        c_percent: g.iter().filter(|&&a| a).count() as f64 / n,
    })
}

/// Mean with a two-sided 95% Student-t confidence half-width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Absent for fewer than two values.
    pub ci95: Option<f64>,
    pub repeats: usize,
}

pub fn mean_ci(values: &[f64]) -> Summary {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n.max(1) as f64;
    let ci95 = (n >= 2).then(|| {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive dof").inverse_cdf(0.975);
        t * (var / n as f64).sqrt()
    });
    Summary { mean, ci95, repeats: n }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.ci95 {
            Some(c) => write!(f, "{:.4} ± {:.4}", self.mean, c),
            None => write!(f, "{:.4}", self.mean),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize, shift: f64) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| { let z: f64 = StandardNormal.sample(rng); z + shift }).collect()).collect()
    }

    #[test]
    fn fid_trivial_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = gaussian(&mut rng, 200, 6, 0.0);
        let b = gaussian(&mut rng, 150, 6, 0.3);
        assert!(fid(&a, &a).unwrap().abs() < 1e-3);
        assert!((fid(&a, &b).unwrap() - fid(&b, &a).unwrap()).abs() < 1e-8);
        assert!(matches!(fid(&a[..1], &b), Err(Error::Argument(_))));
    }

    #[test]
    fn fid_rejects_degenerate_covariance() {
        let huge = vec![vec![1e300, 0.0], vec![-1e300, 0.0], vec![0.0, 1.0]];
        assert!(fid(&huge, &huge).is_err());
    }

    #[test]
    fn r_precision_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = gaussian(&mut rng, 40, 5, 0.0);
        assert_eq!(r_precision(&f, &f, 3, &mut rng).unwrap(), vec![1.0, 1.0, 1.0]);
        assert!(r_precision(&f[..31], &f[..31], 1, &mut rng).is_err());
    }

    #[test]
    fn r_precision_ignores_sample_order() {
        // with exactly 32 samples every other sample is a distractor, so the
        // rate is fully determined
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = gaussian(&mut rng, 32, 4, 0.0);
        let t = gaussian(&mut rng, 32, 4, 0.0);
        let base = r_precision(&h, &t, 3, &mut rng).unwrap();
        let rev_h: Vec<_> = h.iter().rev().cloned().collect();
        let rev_t: Vec<_> = t.iter().rev().cloned().collect();
        assert_eq!(base, r_precision(&rev_h, &rev_t, 3, &mut rng).unwrap());
        assert!(base[0] <= base[1] && base[1] <= base[2]);
    }

    #[test]
    fn spread_metrics_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = gaussian(&mut rng, 10, 3, 0.0);
        assert_eq!(mm_dist(&f, &f).unwrap(), 0.0);
        let constant = vec![vec![0.5, 0.5]; 20];
        assert_eq!(diversity(&constant, 10, &mut rng).unwrap(), 0.0);
        assert_eq!(mmodality(&[constant.clone(), constant], 5, &mut rng).unwrap(), 0.0);
        assert!(mmodality(&[vec![vec![0.0]]], 1, &mut rng).is_err());
        assert!(diversity(&f, 11, &mut rng).is_err());
    }

    #[test]
    fn confidence_interval_matches_t_table() {
        let s = mean_ci(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        // t(0.975, 2) = 4.302653
        assert!((s.ci95.unwrap() - 4.302653 / 3f64.sqrt()).abs() < 1e-5);
        assert_eq!(mean_ci(&[4.0]).ci95, None);
    }
}
