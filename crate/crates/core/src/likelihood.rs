//! Likelihood families derived from loss functions.
//!
//! A loss ℓ with finite Z = ∫ exp(−ℓ(y)) dy defines a Gibbs likelihood
//! exp(−ℓ)/Z. For losses of the form ℓ((y−f)/σ) this gives a location-scale
//! family with normalizer σ·Z₀, which is what makes aleatoric uncertainty
//! (the σ head) trainable alongside the loss. Gaussian and Laplace are the
//! familiar members; the reverse Huber (berHu) loss is the practically
//! interesting one, with closed-form Z₀ and variance weight w(c).
//! Classification uses a Boltzmann likelihood over re-scaled logits
//! f'_k = f_k/σ²_k so per-class scales can absorb label noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::erf::erfc;

use crate::error::{FvError, Result};
use crate::quad;
use crate::tape::Real;

const SQRT_2PI: f64 = 2.506_628_274_631_000_6;

/// Clamp applied to data-derived berHu thresholds; the c → 0 limit collapses
/// the likelihood onto a zero-variance Gaussian with unbounded log-density.
pub const BERHU_C_FLOOR: f64 = 1e-3;

/// Supported likelihood families.
#[derive(Clone, Debug, PartialEq)]
pub enum LikelihoodFamily {
    Gaussian,
    Laplace,
    BerHu { c: f64 },
    Boltzmann { classes: usize },
}

impl LikelihoodFamily {
    pub fn is_regression(&self) -> bool {
        !matches!(self, LikelihoodFamily::Boltzmann { .. })
    }

    /// Standardized loss ℓ(y) of the family member with unit scale.
    pub fn std_loss<T: Real>(&self, y: T) -> Result<T> {
        match self {
            LikelihoodFamily::Gaussian => Ok(y.square().mul_f(0.5)),
            LikelihoodFamily::Laplace => Ok(y.abs()),
            LikelihoodFamily::BerHu { c } => Ok(berhu_loss(y, *c)?),
            LikelihoodFamily::Boltzmann { .. } => Err(FvError::Domain(
                "Boltzmann has no scalar regression loss".into(),
            )),
        }
    }

    /// log Z₀ of the standard member.
    pub fn log_z0(&self) -> Result<f64> {
        match self {
            LikelihoodFamily::Gaussian => Ok(SQRT_2PI.ln()),
            LikelihoodFamily::Laplace => Ok(2.0f64.ln()),
            LikelihoodFamily::BerHu { c } => berhu_log_z0(*c),
            LikelihoodFamily::Boltzmann { .. } => {
                Err(FvError::Domain("Boltzmann has no scalar normalizer".into()))
            }
        }
    }

    /// Variance of the standard member: aleatoric variance is this times σ².
    pub fn aleatoric_weight(&self) -> Result<f64> {
        match self {
            LikelihoodFamily::Gaussian => Ok(1.0),
            LikelihoodFamily::Laplace => Ok(2.0),
            LikelihoodFamily::BerHu { c } => berhu_w(*c),
            LikelihoodFamily::Boltzmann { .. } => Err(FvError::Domain(
                "Boltzmann reports uncertainty via predictive entropy".into(),
            )),
        }
    }
}

/// Reverse Huber loss: |y| up to the threshold c, then (y² + c²)/(2c).
/// Continuous with continuous derivative at |y| = c.
pub fn berhu_loss<T: Real>(y: T, c: f64) -> Result<T> {
    if c <= 0.0 {
        return Err(FvError::Domain(format!("berHu threshold must be > 0, got {c}")));
    }
    let a = y.abs();
    if a.val() <= c {
        Ok(a)
    } else {
        Ok(a.square().add_f(c * c).div_f(2.0 * c))
    }
}

/// Φ(−√c) computed through the complementary error function; the direct form
/// 1 − Φ(√c) cancels catastrophically for large c.
fn phi_neg_sqrt(c: f64) -> f64 {
    0.5 * erfc((c / 2.0).sqrt())
}

/// log Z₀ of the standard berHu member:
/// Z₀ = 2(1 − e^{−c} + e^{−c/2} (2πc)^{1/2} Φ(−√c)). As c → ∞ this tends to
/// the Laplace normalizer 2.
pub fn berhu_log_z0(c: f64) -> Result<f64> {
    if c <= 0.0 {
        return Err(FvError::Domain(format!("berHu threshold must be > 0, got {c}")));
    }
    let z0 = 2.0 * (1.0 - (-c).exp() + (-c / 2.0).exp() * (2.0 * std::f64::consts::PI * c).sqrt() * phi_neg_sqrt(c));
    Ok(z0.ln())
}

/// Aleatoric variance weight of the berHu family:
/// w(c) = (−4(c+1)e^{−c} + 4 + 2e^{−c/2}(2π)^{1/2}c^{3/2}Φ(−√c)) / Z₀,
/// the variance of the standard member; w(c → ∞) → 2.
pub fn berhu_w(c: f64) -> Result<f64> {
    let log_z0 = berhu_log_z0(c)?;
    let num = -4.0 * (c + 1.0) * (-c).exp() + 4.0 + 2.0 * (-c / 2.0).exp() * SQRT_2PI * c.powf(1.5) * phi_neg_sqrt(c);
    Ok(num / log_z0.exp())
}

/// Data-driven berHu threshold: one fifth of the largest expected absolute
/// residual. The caller clamps the result to [`BERHU_C_FLOOR`]; the trainer
/// records the running max over the final epoch for test-time use.
pub fn berhu_threshold(expected_abs_residuals: &[f64]) -> Result<f64> {
    if expected_abs_residuals.is_empty() {
        return Err(FvError::EmptyInput("berHu threshold over empty residuals".into()));
    }
    let max = expected_abs_residuals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max < 0.0 {
        return Err(FvError::Domain("expected absolute residuals must be >= 0".into()));
    }
    Ok(max / 5.0)
}

/// Log-density of a location-scale family member:
/// −ℓ((y − f)/σ) − log σ − log Z₀.
pub fn location_scale_logpdf<T: Real>(
    family: &LikelihoodFamily,
    y: f64,
    f: T,
    sigma: T,
) -> Result<T> {
    if sigma.val() <= 0.0 {
        return Err(FvError::Domain(format!("scale must be > 0, got {}", sigma.val())));
    }
    let std_res = f.rsub_f(y) / sigma;
    let loss = family.std_loss(std_res)?;
    Ok(-loss - sigma.ln().add_f(family.log_z0()?))
}

/// Log-probability of class `y` under the Boltzmann likelihood with re-scaled
/// logits f'_k = f_k/σ²_k, computed with max-subtraction stability.
pub fn boltzmann_logprob<T: Real>(logits: &[T], scales: &[T], y: usize) -> Result<T> {
    if logits.len() != scales.len() || logits.is_empty() {
        return Err(FvError::ShapeMismatch("logits and scales must share a nonzero length".into()));
    }
    if y >= logits.len() {
        return Err(FvError::Domain(format!("class index {y} out of range {}", logits.len())));
    }
    for s in scales {
        if s.val() <= 0.0 {
            return Err(FvError::Domain(format!("logit scale must be > 0, got {}", s.val())));
        }
    }
    let rescaled: Vec<T> = logits.iter().zip(scales).map(|(f, s)| *f / *s).collect();
    let m = rescaled.iter().map(|v| v.val()).fold(f64::NEG_INFINITY, f64::max);
    let mut sum_exp: Option<T> = None;
    for v in &rescaled {
        let e = v.sub_f(m).exp();
        sum_exp = Some(match sum_exp {
            None => e,
            Some(acc) => acc + e,
        });
    }
    let lse = sum_exp.expect("nonempty").ln().add_f(m);
    Ok(rescaled[y] - lse)
}

/// Boltzmann class probabilities (plain f64 path, used at prediction time).
pub fn boltzmann_probs(logits: &[f64], scales: &[f64]) -> Result<Vec<f64>> {
    let k = logits.len();
    let mut out = Vec::with_capacity(k);
    for y in 0..k {
        out.push(boltzmann_logprob(logits, scales, y)?.exp());
    }
    Ok(out)
}

/// Z = ∫ exp(−ℓ(y)) dy by adaptive quadrature: over `bounds` when given,
/// otherwise over the whole line via a tail transform.
pub fn gibbs_normalizer_numeric(
    loss: impl Fn(f64) -> f64,
    bounds: Option<(f64, f64)>,
    tol: f64,
) -> Result<f64> {
    let f = move |y: f64| (-loss(y)).exp();
    let z = match bounds {
        Some((a, b)) => quad::integrate(f, a, b, tol)?,
        None => quad::integrate_line(f, tol)?,
    };
    if !z.is_finite() || z > 1e12 {
        return Err(FvError::NonFinite("Gibbs normalizer diverged".into()));
    }
    Ok(z)
}

/// Average log-density over reparametrized samples f = mean + std·ε of the
/// variational marginal. The ε values are supplied so gradients flow through
/// mean, std and σ when instantiated on the tape.
pub fn regression_loglik_sampled<T: Real>(
    family: &LikelihoodFamily,
    y: f64,
    f_mean: T,
    f_std: T,
    sigma: T,
    eps: &[f64],
) -> Result<T> {
    if eps.is_empty() {
        return Err(FvError::EmptyInput("need at least one sample".into()));
    }
    let mut acc: Option<T> = None;
    for e in eps {
        let f = f_mean + f_std.mul_f(*e);
        let lp = location_scale_logpdf(family, y, f, sigma)?;
        acc = Some(match acc {
            None => lp,
            Some(a) => a + lp,
        });
    }
    Ok(acc.expect("nonempty").div_f(eps.len() as f64))
}

/// Monte-Carlo expected log-likelihood under q(f) = N(q_mean, q_var);
/// deterministic per seed.
pub fn expected_loglik_mc(
    family: &LikelihoodFamily,
    q_mean: f64,
    q_var: f64,
    y: f64,
    sigma: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if q_var < 0.0 {
        return Err(FvError::Domain(format!("q_var must be >= 0, got {q_var}")));
    }
    if samples == 0 {
        return Err(FvError::EmptyInput("samples must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps: Vec<f64> = (0..samples).map(|_| StandardNormal.sample(&mut rng)).collect();
    regression_loglik_sampled(family, y, q_mean, q_var.sqrt(), sigma, &eps)
}

/// Closed-form Gaussian expected log-likelihood:
/// −½log(2πσ²) − ((y−μ)² + v)/(2σ²).
pub fn expected_loglik_gaussian_closed<T: Real>(q_mean: T, q_var: T, y: f64, sigma: T) -> Result<T> {
    if sigma.val() <= 0.0 {
        return Err(FvError::Domain(format!("scale must be > 0, got {}", sigma.val())));
    }
    if q_var.val() < 0.0 {
        return Err(FvError::Domain(format!("q_var must be >= 0, got {}", q_var.val())));
    }
    let var2 = sigma.square().mul_f(2.0);
    let resid = q_mean.sub_f(y);
    Ok(-sigma.ln().add_f(0.5 * (2.0 * std::f64::consts::PI).ln()) - (resid.square() + q_var) / var2)
}

/// Averaged Boltzmann log-probability over sampled logits
/// f_k = mean_k + std_k·ε; `eps` is laid out sample-major (S × K).
pub fn boltzmann_loglik_sampled<T: Real>(
    means: &[T],
    stds: &[T],
    scales: &[T],
    y: usize,
    eps: &[f64],
) -> Result<T> {
    let k = means.len();
    if k == 0 || eps.is_empty() || eps.len() % k != 0 {
        return Err(FvError::ShapeMismatch("eps must hold S×K draws".into()));
    }
    let s = eps.len() / k;
    let mut acc: Option<T> = None;
    for si in 0..s {
        let logits: Vec<T> = (0..k)
            .map(|ki| means[ki] + stds[ki].mul_f(eps[si * k + ki]))
            .collect();
        let lp = boltzmann_logprob(&logits, scales, y)?;
        acc = Some(match acc {
            None => lp,
            Some(a) => a + lp,
        });
    }
    Ok(acc.expect("nonempty").div_f(s as f64))
}

/// Predictive mean and uncertainty split for regression families.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveMoments {
    pub mean: f64,
    pub epistemic_var: f64,
    pub aleatoric_var: f64,
    /// Law of total variance: epistemic + aleatoric.
    pub total_var: f64,
}

/// Moments of the predictive distribution: the variational mean, its variance
/// as the epistemic part, and weight(family)·σ² as the aleatoric part.
pub fn predictive_moments(
    family: &LikelihoodFamily,
    q_mean: f64,
    q_var: f64,
    sigma: f64,
) -> Result<PredictiveMoments> {
    if sigma <= 0.0 {
        return Err(FvError::Domain(format!("scale must be > 0, got {sigma}")));
    }
    if q_var < 0.0 {
        return Err(FvError::Domain(format!("q_var must be >= 0, got {q_var}")));
    }
    let aleatoric = family.aleatoric_weight()? * sigma * sigma;
    Ok(PredictiveMoments {
        mean: q_mean,
        epistemic_var: q_var,
        aleatoric_var: aleatoric,
        total_var: q_var + aleatoric,
    })
}

/// Entropy of a probability vector, in nats.
pub fn entropy(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| -p * p.ln())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    const QUAD_TOL: f64 = 1e-10;

    #[test]
    fn berhu_loss_examples() {
        assert_eq!(berhu_loss(0.0, 1.0).unwrap(), 0.0);
        // both branches agree at the threshold
        let c = 0.8;
        assert_relative_eq!(berhu_loss(c, c).unwrap(), c, epsilon = 1e-15);
        assert_relative_eq!(berhu_loss(3.0, 1.0).unwrap(), 5.0, epsilon = 1e-15);
        assert!(berhu_loss(1.0, 0.0).is_err());
    }

    #[test]
    fn berhu_loss_c1_at_threshold() {
        let c = 1.3;
        let h = 1e-7;
        let d_below = (berhu_loss(c, c).unwrap() - berhu_loss(c - h, c).unwrap()) / h;
        let d_above = (berhu_loss(c + h, c).unwrap() - berhu_loss(c, c).unwrap()) / h;
        assert_relative_eq!(d_below, d_above, epsilon = 1e-6);
    }

    #[test]
    fn berhu_log_z0_laplace_limit() {
        assert_relative_eq!(berhu_log_z0(30.0).unwrap(), 2.0f64.ln(), epsilon = 1e-10);
    }

    #[test]
    fn berhu_log_z0_matches_quadrature() {
        for c in [0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0] {
            let z = gibbs_normalizer_numeric(|y| berhu_loss(y, c).unwrap(), None, QUAD_TOL).unwrap();
            assert_relative_eq!(berhu_log_z0(c).unwrap(), z.ln(), epsilon = 1e-8);
        }
    }

    #[test]
    fn berhu_z0_monotone() {
        let z = |c: f64| gibbs_normalizer_numeric(|y| berhu_loss(y, c).unwrap(), None, QUAD_TOL).unwrap();
        assert!(z(2.0) > z(0.5));
    }

    #[test]
    fn berhu_w_laplace_limit() {
        assert_relative_eq!(berhu_w(30.0).unwrap(), 2.0, epsilon = 1e-6);
    }

    #[test]
    fn berhu_w_matches_quadrature_second_moment() {
        for c in [0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0] {
            let z0 = berhu_log_z0(c).unwrap().exp();
            let m2 = quad::integrate_line(|y| y * y * (-berhu_loss(y, c).unwrap()).exp(), QUAD_TOL)
                .unwrap()
                / z0;
            assert_relative_eq!(berhu_w(c).unwrap(), m2, epsilon = 1e-8);
            assert!(berhu_w(c).unwrap() > 0.0);
        }
    }

    #[test]
    fn berhu_threshold_rule() {
        assert_relative_eq!(berhu_threshold(&[5.0]).unwrap(), 1.0);
        assert_eq!(berhu_threshold(&[0.0, 0.0]).unwrap(), 0.0);
        assert_relative_eq!(berhu_threshold(&[1.0, 2.0, 10.0]).unwrap(), 2.0);
        assert!(berhu_threshold(&[]).is_err());
    }

    #[test]
    fn location_scale_examples() {
        let lp = location_scale_logpdf(&LikelihoodFamily::Gaussian, 1.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(lp, -0.5 * (2.0 * PI).ln(), epsilon = 1e-12);
        let lp = location_scale_logpdf(&LikelihoodFamily::Laplace, 1.0, 0.0, 1.0).unwrap();
        assert_relative_eq!(lp, -1.0 - 2.0f64.ln(), epsilon = 1e-12);
        let fam = LikelihoodFamily::BerHu { c: 1.0 };
        let lp = location_scale_logpdf(&fam, 0.5, 0.0, 2.0).unwrap();
        let expect = -0.25 - 2.0f64.ln() - berhu_log_z0(1.0).unwrap();
        assert_relative_eq!(lp, expect, epsilon = 1e-12);
        assert!(location_scale_logpdf(&LikelihoodFamily::Gaussian, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn densities_normalize_for_all_scales() {
        let fams = [
            LikelihoodFamily::Gaussian,
            LikelihoodFamily::Laplace,
            LikelihoodFamily::BerHu { c: 1.0 },
            LikelihoodFamily::BerHu { c: 0.3 },
        ];
        for fam in &fams {
            for sigma in [0.5, 1.0, 2.0] {
                let f = 0.3;
                let mass = quad::integrate_line(
                    |y| location_scale_logpdf(fam, y, f, sigma).unwrap().exp(),
                    QUAD_TOL,
                )
                .unwrap();
                assert_relative_eq!(mass, 1.0, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn boltzmann_uniform_and_two_class() {
        let lp = boltzmann_logprob(&[0.7, 0.7, 0.7], &[1.0, 1.0, 1.0], 1).unwrap();
        assert_relative_eq!(lp, -(3.0f64.ln()), epsilon = 1e-12);
        let lp = boltzmann_logprob(&[1.0, 0.0], &[1.0, 1.0], 0).unwrap();
        assert_relative_eq!(lp, -(1.0 + (-1.0f64).exp()).ln(), epsilon = 1e-12);
        assert!(boltzmann_logprob(&[1.0, 0.0], &[1.0, 0.0], 0).is_err());
    }

    #[test]
    fn boltzmann_probs_sum_to_one_and_shift_invariant() {
        let logits = [2.0, -1.0, 0.5, 3.3];
        let scales = [0.7, 1.1, 2.0, 0.9];
        let p = boltzmann_probs(&logits, &scales).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // shifting every re-scaled logit by a constant leaves probs unchanged
        let delta = 1.7;
        let shifted: Vec<f64> = logits.iter().zip(&scales).map(|(f, s)| f + delta * s).collect();
        let p2 = boltzmann_probs(&shifted, &scales).unwrap();
        for (a, b) in p.iter().zip(&p2) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn boltzmann_equal_scales_preserve_argmax() {
        let logits = [1.0, 2.5, 0.3];
        let s1 = [1.0, 1.0, 1.0];
        let s2 = [2.0, 2.0, 2.0];
        let p1 = boltzmann_probs(&logits, &s1).unwrap();
        let p2 = boltzmann_probs(&logits, &s2).unwrap();
        let argmax = |p: &[f64]| {
            p.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        assert_eq!(argmax(&p1), argmax(&p2));
        assert!((p1[1] - p2[1]).abs() > 1e-6); // probabilities do change
    }

    #[test]
    fn gibbs_normalizer_known_families() {
        let z = gibbs_normalizer_numeric(|y| 0.5 * y * y, None, QUAD_TOL).unwrap();
        assert_relative_eq!(z, SQRT_2PI, epsilon = 1e-8);
        let z = gibbs_normalizer_numeric(|y| y.abs(), None, QUAD_TOL).unwrap();
        assert_relative_eq!(z, 2.0, epsilon = 1e-8);
        let z = gibbs_normalizer_numeric(|y| berhu_loss(y, 1.7).unwrap(), None, QUAD_TOL).unwrap();
        assert_relative_eq!(z, berhu_log_z0(1.7).unwrap().exp(), epsilon = 1e-8);
    }

    #[test]
    fn expected_loglik_mc_zero_variance_is_exact() {
        let fam = LikelihoodFamily::Laplace;
        let exact = location_scale_logpdf(&fam, 1.0, 0.4, 0.8).unwrap();
        let single = expected_loglik_mc(&fam, 0.4, 0.0, 1.0, 0.8, 1, 7).unwrap();
        assert_eq!(single, exact);
        // every sample collapses onto the mean; averaging only adds rounding
        let avg = expected_loglik_mc(&fam, 0.4, 0.0, 1.0, 0.8, 64, 7).unwrap();
        assert_relative_eq!(avg, exact, epsilon = 1e-14);
    }

    #[test]
    fn expected_loglik_mc_matches_gaussian_closed_form() {
        let (mu, var, y, sigma) = (0.3, 0.5, 1.1, 0.7);
        let closed = expected_loglik_gaussian_closed(mu, var, y, sigma).unwrap();
        let s = 10_000usize;
        let mc = expected_loglik_mc(&LikelihoodFamily::Gaussian, mu, var, y, sigma, s, 11).unwrap();
        // crude SE bound: the summand varies on the scale of var/(2σ²)
        let se = 3.0 * (2.0f64 / s as f64).sqrt() * (var / (2.0 * sigma * sigma) + 1.0);
        assert!((mc - closed).abs() < se, "mc {mc} closed {closed}");
    }

    #[test]
    fn expected_loglik_mc_deterministic() {
        let fam = LikelihoodFamily::Gaussian;
        let a = expected_loglik_mc(&fam, 0.0, 1.0, 0.5, 1.0, 1, 3).unwrap();
        let b = expected_loglik_mc(&fam, 0.0, 1.0, 0.5, 1.0, 1, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_closed_form_examples() {
        let v = expected_loglik_gaussian_closed(0.2, 0.0, 0.2, 1.0).unwrap();
        assert_relative_eq!(v, -0.5 * (2.0 * PI).ln(), epsilon = 1e-12);
        let v = expected_loglik_gaussian_closed(0.2, 1.0, 0.2, 1.0).unwrap();
        assert_relative_eq!(v, -0.5 * (2.0 * PI).ln() - 0.5, epsilon = 1e-12);
    }

    #[test]
    fn predictive_moment_examples() {
        let m = predictive_moments(&LikelihoodFamily::Gaussian, 0.1, 0.3, 0.5).unwrap();
        assert_relative_eq!(m.total_var, 0.3 + 0.25, epsilon = 1e-12);
        let m = predictive_moments(&LikelihoodFamily::Laplace, 0.0, 0.0, 1.0).unwrap();
        assert_relative_eq!(m.aleatoric_var, 2.0, epsilon = 1e-12);
        let fam = LikelihoodFamily::BerHu { c: 1.0 };
        let m = predictive_moments(&fam, 0.0, 0.0, 0.9).unwrap();
        let z0 = berhu_log_z0(1.0).unwrap().exp();
        let m2 = quad::integrate_line(|y| y * y * (-berhu_loss(y, 1.0).unwrap()).exp(), QUAD_TOL)
            .unwrap()
            / z0;
        assert_relative_eq!(m.aleatoric_var, m2 * 0.81, epsilon = 1e-8);
    }

    #[test]
    fn berhu_logpdf_c1_at_scaled_threshold() {
        // the log-density must be C¹ at |y−f| = cσ
        let fam = LikelihoodFamily::BerHu { c: 0.9 };
        let (f, sigma) = (0.2, 1.4);
        let y0 = f + 0.9 * sigma;
        let h = 1e-7;
        let lp = |y: f64| location_scale_logpdf(&fam, y, f, sigma).unwrap();
        let below = (lp(y0) - lp(y0 - h)) / h;
        let above = (lp(y0 + h) - lp(y0)) / h;
        assert_relative_eq!(below, above, epsilon = 1e-5);
    }

    #[test]
    fn entropy_basics() {
        assert_relative_eq!(entropy(&[0.5, 0.5]), 2.0f64.ln(), epsilon = 1e-12);
        assert_eq!(entropy(&[1.0, 0.0]), 0.0);
    }
}
