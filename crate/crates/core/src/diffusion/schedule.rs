use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hoi_core::Mat;

/// Retention coefficients α_1..α_K and their running products ᾱ_0..ᾱ_K.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    alphas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_alphas(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::Config("a schedule needs at least one step".into()));
        }
        if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return Err(Error::Config(format!("retention coefficient {a} outside (0, 1)")));
        }
        let mut alpha_bar = Vec::with_capacity(alphas.len() + 1);
        alpha_bar.push(1.0);
        for a in &alphas {
            alpha_bar.push(alpha_bar.last().unwrap() * a);
        }
        Ok(Self { alphas, alpha_bar })
    }

    /// α_k = 1 − β_k with β linear from `beta_start` to `beta_end`.
    pub fn linear(k: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("a schedule needs at least one step".into()));
        }
        let alphas = (0..k)
            .map(|i| {
                let t = if k == 1 { 0.0 } else { i as f64 / (k - 1) as f64 };
                1.0 - (beta_start + t * (beta_end - beta_start))
            })
            .collect();
        Self::from_alphas(alphas)
    }

    /// 1000 steps, ᾱ_K ≈ 1e-4.
    pub fn training_default() -> Self {
        Self::linear(1000, 1e-4, 0.0182).expect("valid constants")
    }

    pub fn steps(&self) -> usize {
        self.alphas.len()
    }

    pub fn alpha(&self, k: usize) -> f64 {
        self.alphas[k - 1]
    }

    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bar[k]
    }

    /// Uniform-stride sub-schedule with `steps` steps over this one's ᾱ grid.
    /// Returns the schedule and, per sub-step i = 0..=steps, the original step
    /// index τ_i it stands for.
    pub fn strided(&self, steps: usize) -> Result<(NoiseSchedule, Vec<usize>)> {
        let k = self.steps();
        if steps == 0 || steps > k {
            return Err(Error::Config(format!("cannot take {steps} inference steps from a {k}-step schedule")));
        }
        let tau: Vec<usize> = (0..=steps).map(|i| (i * k + steps / 2) / steps).collect();
        let alphas = (1..=steps).map(|i| self.alpha_bar[tau[i]] / self.alpha_bar[tau[i - 1]]).collect();
        Ok((Self::from_alphas(alphas)?, tau))
    }

    fn check_step(&self, k: usize, allow_zero: bool) -> Result<()> {
        if k > self.steps() || (!allow_zero && k == 0) {
            return Err(Error::Argument(format!("step {k} outside {}..={}", usize::from(!allow_zero), self.steps())));
        }
        Ok(())
    }

    /// x^k = √ᾱ_k x⁰ + √(1 − ᾱ_k) ε
    pub fn forward_noise(&self, x0: &Mat, k: usize, eps: &Mat) -> Result<Mat> {
        self.check_step(k, true)?;
        if x0.dim() != eps.dim() {
            return Err(Error::Structural("noise and signal shapes differ".into()));
        }
        let ab = self.alpha_bar[k];
        Ok(x0 * ab.sqrt() + eps * (1.0 - ab).sqrt())
    }

    /// One application of the single-step forward process:
    /// x^k = √α_k x^{k−1} + √(1 − α_k) ε.
    pub fn forward_step(&self, x_prev: &Mat, k: usize, eps: &Mat) -> Result<Mat> {
        self.check_step(k, false)?;
        let a = self.alphas[k - 1];
        Ok(x_prev * a.sqrt() + eps * (1.0 - a).sqrt())
    }

    /// x^{k−1} = x^k / √α_k − √(1/α_k − 1) ε, with no noise re-injection.
    pub fn reverse_step(&self, xk: &Mat, k: usize, eps_pred: &Mat) -> Result<Mat> {
        self.check_step(k, false)?;
        let a = self.alphas[k - 1];
        Ok(xk / a.sqrt() - eps_pred * (1.0 / a - 1.0).sqrt())
    }

    /// Clean-signal estimate from a cumulative-noise prediction.
    pub fn predict_x0(&self, xk: &Mat, k: usize, eps_hat: &Mat) -> Mat {
        let ab = self.alpha_bar[k];
        (xk - &(eps_hat * (1.0 - ab).sqrt())) / ab.sqrt()
    }

    /// Mean of q(x^{k−1} | x^k, x⁰).
    pub fn posterior_mean(&self, xk: &Mat, k: usize, x0: &Mat) -> Mat {
        let a = self.alphas[k - 1];
        let ab = self.alpha_bar[k];
        let ab_prev = self.alpha_bar[k - 1];
        let c0 = ab_prev.sqrt() * (1.0 - a) / (1.0 - ab);
        let ck = a.sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        x0 * c0 + xk * ck
    }

    /// Variance of q(x^{k−1} | x^k, x⁰).
    pub fn posterior_variance(&self, k: usize) -> f64 {
        (1.0 - self.alpha_bar[k - 1]) / (1.0 - self.alpha_bar[k]) * (1.0 - self.alphas[k - 1])
    }

    /// The single-step noise whose removal by [`reverse_step`](Self::reverse_step)
    /// lands on the posterior mean implied by a cumulative-noise prediction.
    pub fn step_noise(&self, xk: &Mat, k: usize, eps_hat: &Mat) -> Mat {
        let a = self.alphas[k - 1];
        let x0 = self.predict_x0(xk, k, eps_hat);
        let mean = self.posterior_mean(xk, k, &x0);
        (xk - &(mean * a.sqrt())) / (1.0 - a).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_shape_fn((r, c), |_| StandardNormal.sample(rng))
    }

    #[test]
    fn schedule_invariants() {
        let s = NoiseSchedule::training_default();
        assert_eq!(s.alpha_bar(0), 1.0);
        assert!((1..=s.steps()).all(|k| s.alpha_bar(k) < s.alpha_bar(k - 1)));
        assert!((s.alpha_bar(1000) - 1e-4).abs() < 1e-5);
        assert!(NoiseSchedule::from_alphas(vec![0.5, 1.0]).is_err());
        let (sub, tau) = s.strided(50).unwrap();
        assert_eq!(tau[0], 0);
        assert_eq!(tau[50], 1000);
        for i in 0..=50 {
            assert!((sub.alpha_bar(i) - s.alpha_bar(tau[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn trivial_noise_cases() {
        let s = NoiseSchedule::training_default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = normal(&mut rng, 3, 4);
        let e = normal(&mut rng, 3, 4);
        assert_eq!(s.forward_noise(&x, 0, &e).unwrap(), x);
        let z = Mat::zeros((3, 4));
        assert_eq!(s.forward_noise(&x, 7, &z).unwrap(), &x * s.alpha_bar(7).sqrt());
        assert_eq!(s.reverse_step(&x, 7, &z).unwrap(), &x / s.alpha(7).sqrt());
        assert!(matches!(s.reverse_step(&x, 0, &z), Err(Error::Argument(_))));
        assert!(matches!(s.forward_noise(&x, 1001, &z), Err(Error::Argument(_))));
    }

    #[test]
    fn closed_form_matches_composed_steps() {
        let s = NoiseSchedule::linear(200, 1e-3, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x0 = normal(&mut rng, 2, 5);
        // composed single steps carry independent noise terms whose variances
        // must add up to 1 − ᾱ_k
        let mut x = x0.clone();
        let mut coef = 0.0f64;
        for k in 1..=200 {
            x = s.forward_step(&x, k, &Mat::zeros((2, 5))).unwrap();
            coef = coef * s.alpha(k).sqrt();
            coef = (coef * coef + (1.0 - s.alpha(k))).sqrt();
        }
        let closed = s.forward_noise(&x0, 200, &Mat::zeros((2, 5))).unwrap();
        for (a, b) in x.iter().zip(closed.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!((coef * coef - (1.0 - s.alpha_bar(200))).abs() < 1e-6);
    }

    #[test]
    fn step_noise_lands_on_the_posterior_mean() {
        let s = NoiseSchedule::training_default();
        let (sub, _) = s.strided(50).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xk = normal(&mut rng, 4, 3);
        let eh = normal(&mut rng, 4, 3);
        for k in [1, 2, 25, 50] {
            let e = sub.step_noise(&xk, k, &eh);
            let via_reverse = sub.reverse_step(&xk, k, &e).unwrap();
            let mean = sub.posterior_mean(&xk, k, &sub.predict_x0(&xk, k, &eh));
            for (a, b) in via_reverse.iter().zip(mean.iter()) {
                assert!((a - b).abs() < 1e-9, "{k}: {a} vs {b}");
            }
        }
    }
}
