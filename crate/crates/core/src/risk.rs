//! Error rates of linear rules under the two-class normal model and the
//! expected-error expansion of the hard-assignment (CML) classifier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{bayes_coefficients, mahalanobis_sq, DiscriminantCoeffs, GaussianPairModel};
use crate::special::{norm_cdf, norm_pdf};

/// Error rate of the Bayes rule.
pub fn optimal_error(theta: &GaussianPairModel) -> f64 {
    if theta.pi1() == 0.5 {
        norm_cdf(-0.5 * mahalanobis_sq(theta).sqrt())
    } else {
        conditional_error(&bayes_coefficients(theta), theta)
    }
}

/// True when `beta1` is identically zero, i.e. the rule ignores the features.
pub fn is_constant_rule(beta: &DiscriminantCoeffs) -> bool {
    beta.beta1.iter().all(|b| *b == 0.0)
}

/// Overall error of the rule "assign class 1 iff `beta0 + beta1' y >= 0`"
/// when the data follow `theta`.
///
/// A constant rule (`beta1 = 0`) sends everything to one class and errs with
/// the prior of the other; with `beta0 = 0` the tie rule sends everything to
/// class 1.
pub fn conditional_error(beta: &DiscriminantCoeffs, theta: &GaussianPairModel) -> f64 {
    assert_eq!(beta.dim(), theta.dim(), "rule and model dimensions differ");
    let (pi1, pi2) = (theta.pi1(), theta.pi2());
    if is_constant_rule(beta) {
        return if beta.beta0 >= 0.0 { pi2 } else { pi1 };
    }
    let s = beta.beta1.dot(&(theta.sigma() * &beta.beta1)).sqrt();
    let d1 = beta.beta0 + beta.beta1.dot(theta.mu1());
    let d2 = beta.beta0 + beta.beta1.dot(theta.mu2());
    pi1 * norm_cdf(-d1 / s) + pi2 * norm_cdf(d2 / s)
}

/// `conditional_error(beta_hat) - optimal_error`, clipped at zero.
pub fn excess_error(beta_hat: &DiscriminantCoeffs, theta: &GaussianPairModel) -> f64 {
    let gap = conditional_error(beta_hat, theta) - optimal_error(theta);
    debug_assert!(gap > -1e-12, "rule beats the Bayes rule by {gap}");
    gap.max(0.0)
}

/// Setting of the CML error expansion: separation, dimension, classified
/// counts per class and the iteration index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CmlExpansionConfig {
    pub delta: f64,
    pub p: usize,
    pub n1c: usize,
    pub n2c: usize,
    pub k: u32,
}

impl CmlExpansionConfig {
    pub fn new(delta: f64, p: usize, n1c: usize, n2c: usize, k: u32) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
        }
        if p == 0 {
            return Err(Error::InvalidParameter("p must be at least 1".into()));
        }
        if n1c == 0 || n2c == 0 || n1c + n2c < 3 {
            return Err(Error::InvalidParameter(format!(
                "need n1c, n2c >= 1 and n1c + n2c >= 3, got ({n1c}, {n2c})"
            )));
        }
        Ok(Self { delta, p, n1c, n2c, k })
    }
}

/// Contraction factors `(h1, h2)` of the CML iteration.
pub fn cml_contraction(delta: f64) -> (f64, f64) {
    let half = 0.5 * delta;
    let dens = norm_pdf(half);
    let h1 = dens * (4.0 * dens + delta * (1.0 - 2.0 * norm_cdf(-half)));
    let h2 = dens * dens * (4.0 + delta * delta) / h1;
    (h1, h2)
}

/// First-order coefficient `a1^(k)` of the expansion.
pub fn cml_a1(cfg: &CmlExpansionConfig) -> f64 {
    let (h1, h2) = cml_contraction(cfg.delta);
    let delta = cfg.delta;
    let pm1 = (cfg.p - 1) as f64;
    let nc = (cfg.n1c + cfg.n2c) as f64;
    let two_k = 2 * cfg.k as i32;
    let g1 = h1.powi(two_k);
    let g2 = h2.powi(two_k);
    g1 * delta / 4.0
        + g2 * (pm1 / delta) * (1.0 / cfg.n1c as f64 + 1.0 / cfg.n2c as f64)
        + g2 * pm1 * delta / (nc - 2.0)
}

/// Expected error of the CML rule after `k` iterations (equal, known priors),
/// to first order in `1/n_c`.
pub fn cml_expected_error(cfg: &CmlExpansionConfig) -> f64 {
    let half = 0.5 * cfg.delta;
    norm_cdf(-half) + norm_pdf(half) / 4.0 * cml_a1(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;
    use proptest::prelude::*;

    #[test]
    fn optimal_error_examples() {
        let theta = GaussianPairModel::canonical(2.0, 2, 0.5).unwrap();
        assert_abs_diff_eq!(optimal_error(&theta), 0.158_655_253_931_457, epsilon = 1e-12);
        assert_eq!(optimal_error(&GaussianPairModel::canonical(0.0, 2, 0.5).unwrap()), 0.5);
        assert!(optimal_error(&GaussianPairModel::canonical(20.0, 1, 0.5).unwrap()) < 1e-12);
        // Unequal priors with no separation: always pick the larger class.
        let flat = GaussianPairModel::canonical(0.0, 1, 0.3).unwrap();
        assert_abs_diff_eq!(optimal_error(&flat), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn conditional_error_examples() {
        let theta = GaussianPairModel::canonical(2.0, 3, 0.5).unwrap();
        let beta = bayes_coefficients(&theta);
        assert_abs_diff_eq!(conditional_error(&beta, &theta), 0.158_655_253_931_457, epsilon = 1e-12);
        let flipped = DiscriminantCoeffs::new(-beta.beta0, -&beta.beta1);
        assert_abs_diff_eq!(conditional_error(&flipped, &theta), 0.841_344_746_068_543, epsilon = 1e-12);
        let scaled = DiscriminantCoeffs::new(3.5 * beta.beta0, &beta.beta1 * 3.5);
        assert_abs_diff_eq!(
            conditional_error(&scaled, &theta),
            conditional_error(&beta, &theta),
            epsilon = 1e-15
        );
    }

    #[test]
    fn constant_rules() {
        let theta = GaussianPairModel::canonical(2.0, 1, 0.3).unwrap();
        let always_one = DiscriminantCoeffs::new(1.0, DVector::zeros(1));
        let always_two = DiscriminantCoeffs::new(-1.0, DVector::zeros(1));
        assert_abs_diff_eq!(conditional_error(&always_one, &theta), 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(conditional_error(&always_two, &theta), 0.3, epsilon = 1e-15);
        assert!(is_constant_rule(&always_one));
    }

    #[test]
    fn excess_error_examples() {
        let theta = GaussianPairModel::canonical(2.0, 1, 0.5).unwrap();
        let beta = bayes_coefficients(&theta);
        assert_eq!(excess_error(&beta, &theta), 0.0);
        let shifted = DiscriminantCoeffs::new(beta.beta0 + 0.1, beta.beta1.clone());
        assert!(excess_error(&shifted, &theta) > 0.0);
    }

    #[test]
    fn contraction_factors_below_one() {
        let mut delta = 0.25;
        while delta <= 6.0 + 1e-12 {
            let (h1, h2) = cml_contraction(delta);
            assert!(h1.abs() < 1.0 && h2.abs() < 1.0, "delta {delta}: {h1} {h2}");
            delta += 0.05;
        }
    }

    #[test]
    fn cml_expansion_limits_and_monotonicity() {
        let at = |k| cml_expected_error(&CmlExpansionConfig::new(2.0, 3, 25, 25, k).unwrap());
        for k in 0..10 {
            assert!(at(k + 1) <= at(k));
        }
        assert_abs_diff_eq!(at(200), norm_cdf(-1.0), epsilon = 1e-12);
        let p1 = CmlExpansionConfig::new(1.5, 1, 10, 12, 3).unwrap();
        let (h1, _) = cml_contraction(1.5);
        assert_abs_diff_eq!(cml_a1(&p1), h1.powi(6) * 1.5 / 4.0, epsilon = 1e-15);
        assert!(CmlExpansionConfig::new(2.0, 1, 1, 1, 0).is_err());
        assert!(CmlExpansionConfig::new(2.0, 1, 0, 5, 0).is_err());
    }

    proptest! {
        #[test]
        fn bayes_rule_is_optimal(
            delta in 0.1f64..4.0,
            pi1 in 0.1f64..0.9,
            b0 in -3.0f64..3.0,
            b1 in prop::collection::vec(-2.0f64..2.0, 2),
            c in 0.01f64..50.0,
        ) {
            let theta = GaussianPairModel::canonical(delta, 2, pi1).unwrap();
            let beta = DiscriminantCoeffs::new(b0, DVector::from_vec(b1));
            let err = conditional_error(&beta, &theta);
            prop_assert!(err >= optimal_error(&theta) - 1e-12);
            let scaled = DiscriminantCoeffs::new(c * b0, &beta.beta1 * c);
            prop_assert!((conditional_error(&scaled, &theta) - err).abs() < 1e-12);
        }
    }
}
