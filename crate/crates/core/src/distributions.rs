//! Weibull reparameterization, moments and the analytic Weibull‖Gamma KL.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BndlError, Result};
use crate::numkernel::{digamma_unchecked, gamma_unchecked, ln_gamma_unchecked, EULER_MASCHERONI};

pub const SHAPE_MIN: f64 = 1e-2;
pub const SHAPE_MAX: f64 = 1e3;
pub const SCALE_MIN: f64 = 1e-4;

/// Weibull distribution with shape `k` and scale `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullParams {
    pub shape: f64,
    pub scale: f64,
}

impl WeibullParams {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite()) || !(scale > 0.0 && scale.is_finite()) {
            return Err(BndlError::Domain(format!(
                "weibull requires positive finite parameters, got k={shape}, lambda={scale}"
            )));
        }
        Ok(Self { shape, scale })
    }

    /// Applies the boundary clamps k ∈ [1e-2, 1e3], λ ≥ 1e-4.
    pub fn clamped(shape: f64, scale: f64) -> Self {
        Self {
            shape: clamp_shape(shape),
            scale: scale.max(SCALE_MIN),
        }
    }
}

/// Gamma distribution with shape `alpha` and rate `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl GammaParams {
    pub const STANDARD: GammaParams = GammaParams {
        shape: 1.0,
        rate: 1.0,
    };

    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite()) || !(rate > 0.0 && rate.is_finite()) {
            return Err(BndlError::Domain(format!(
                "gamma requires positive finite parameters, got alpha={shape}, beta={rate}"
            )));
        }
        Ok(Self { shape, rate })
    }
}

impl Default for GammaParams {
    fn default() -> Self {
        Self::STANDARD
    }
}

pub fn clamp_shape(k: f64) -> f64 {
    k.clamp(SHAPE_MIN, SHAPE_MAX)
}

/// Γ(1 + 1/k): the ratio between a Weibull mean and its scale.
pub fn mean_factor(shape: f64) -> f64 {
    gamma_unchecked(1.0 + 1.0 / shape)
}

/// d/dk Γ(1 + 1/k).
pub fn mean_factor_grad(shape: f64) -> f64 {
    let z = 1.0 + 1.0 / shape;
    -gamma_unchecked(z) * digamma_unchecked(z) / (shape * shape)
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(BndlError::Domain(format!(
            "reparameterization noise must lie in (0, 1), got {eps}"
        )))
    }
}

/// Draws from the open interval (0, 1), rejecting an exact zero.
pub fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 && u < 1.0 {
            return u;
        }
    }
}

#[inline]
pub(crate) fn sample_unchecked(shape: f64, scale: f64, eps: f64) -> f64 {
    scale * (-(-eps).ln_1p()).powf(1.0 / shape)
}

/// x = λ(−ln(1−ε))^{1/k}.
pub fn weibull_sample(w: WeibullParams, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    Ok(sample_unchecked(w.shape, w.scale, eps))
}

/// Pathwise partials (∂x/∂k, ∂x/∂λ) of [`weibull_sample`].
pub fn weibull_sample_grad(w: WeibullParams, eps: f64) -> Result<(f64, f64)> {
    check_eps(eps)?;
    Ok(sample_grad_unchecked(w.shape, w.scale, eps))
}

#[inline]
pub(crate) fn sample_grad_unchecked(shape: f64, scale: f64, eps: f64) -> (f64, f64) {
    let e = -(-eps).ln_1p();
    let base = e.powf(1.0 / shape);
    let x = scale * base;
    let dx_dk = -x * e.ln() / (shape * shape);
    (dx_dk, base)
}

pub fn weibull_mean(w: WeibullParams) -> f64 {
    w.scale * mean_factor(w.shape)
}

/// KL(Weibull(k, λ) ‖ Gamma(α, β)) in closed form.
pub fn kl_weibull_gamma(w: WeibullParams, g: GammaParams) -> f64 {
    let (k, lam) = (w.shape, w.scale);
    let (a, b) = (g.shape, g.rate);
    EULER_MASCHERONI * a / k - a * lam.ln() + k.ln() + b * lam * mean_factor(k)
        - EULER_MASCHERONI
        - 1.0
        - a * b.ln()
        + ln_gamma_unchecked(a)
}

/// Partials (∂KL/∂k, ∂KL/∂λ) of [`kl_weibull_gamma`].
pub fn kl_weibull_gamma_grad(w: WeibullParams, g: GammaParams) -> (f64, f64) {
    let (k, lam) = (w.shape, w.scale);
    let (a, b) = (g.shape, g.rate);
    let d_k = -EULER_MASCHERONI * a / (k * k) + 1.0 / k + b * lam * mean_factor_grad(k);
    let d_lam = -a / lam + b * mean_factor(k);
    (d_k, d_lam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn w(k: f64, l: f64) -> WeibullParams {
        WeibullParams::new(k, l).unwrap()
    }

    #[test]
    fn sample_examples() {
        let eps = 1.0 - (-1.0f64).exp();
        for &k in &[0.3, 1.0, 7.0] {
            assert!((weibull_sample(w(k, 2.0), eps).unwrap() - 2.0).abs() < 1e-12);
        }
        assert!((weibull_sample(w(1.0, 1.0), 0.5).unwrap() - 2f64.ln()).abs() < 1e-15);
        let x = weibull_sample(w(2.0, 3.0), 0.9).unwrap();
        assert!((x - 3.0 * 10f64.ln().sqrt()).abs() < 1e-12);
        assert!((x - 4.5523).abs() < 1e-3);
    }

    #[test]
    fn sample_rejects_endpoints() {
        assert!(weibull_sample(w(1.0, 1.0), 0.0).is_err());
        assert!(weibull_sample(w(1.0, 1.0), 1.0).is_err());
        assert!(weibull_sample_grad(w(1.0, 1.0), 1.0).is_err());
    }

    #[test]
    fn mean_examples() {
        assert!((weibull_mean(w(1.0, 2.0)) - 2.0).abs() < 1e-13);
        assert!((weibull_mean(w(2.0, 1.0)) - 0.886_226_925_452_758).abs() < 1e-13);
        assert!((weibull_mean(w(1000.0, 5.0)) / 5.0 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn kl_examples() {
        let g = GammaParams::STANDARD;
        assert!(kl_weibull_gamma(w(1.0, 1.0), g).abs() < 1e-12);
        let v = kl_weibull_gamma(w(1.0, 2.0), g);
        assert!((v - (1.0 - 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn sample_grad_examples() {
        let eps = 1.0 - (-1.0f64).exp();
        let (dk, dl) = weibull_sample_grad(w(3.0, 5.0), eps).unwrap();
        assert!(dk.abs() < 1e-15);
        assert!((dl - 1.0).abs() < 1e-15);
        let (_, dl) = weibull_sample_grad(w(1.0, 1.0), 0.5).unwrap();
        assert!((dl - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn kl_lambda_grad_is_stationary_at_exp1() {
        let g = GammaParams::STANDARD;
        for &l in &[0.5, 1.0, 3.0] {
            let (_, dl) = kl_weibull_gamma_grad(w(1.0, l), g);
            assert!((dl - (1.0 - 1.0 / l)).abs() < 1e-12);
        }
        let (dk, dl) = kl_weibull_gamma_grad(w(1.0, 1.0), g);
        assert!(dk.abs() < 1e-12 && dl.abs() < 1e-12);
    }

    #[test]
    fn clamps() {
        let c = WeibullParams::clamped(0.0, 0.0);
        assert_eq!(c.shape, SHAPE_MIN);
        assert_eq!(c.scale, SCALE_MIN);
        assert_eq!(WeibullParams::clamped(1e9, 2.0).shape, SHAPE_MAX);
    }

    #[test]
    fn collapse_limit_has_tiny_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = w(SHAPE_MAX, 2.0);
        let xs: Vec<f64> = (0..10_000)
            .map(|_| weibull_sample(p, open_uniform(&mut rng)).unwrap())
            .collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!(var.sqrt() < 1e-2 * 2.0);
    }
}
