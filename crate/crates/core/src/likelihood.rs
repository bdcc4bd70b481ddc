//! Log-likelihoods of a partially classified sample and their gradients.
//!
//! Gradients are taken with respect to an unconstrained parameter vector laid
//! out as
//!
//! ```text
//! [ mu1 (p) | mu2 (p) | log-Cholesky of Sigma (p(p+1)/2) | logit pi1 | xi0 | xi1 ]
//! ```
//!
//! The log-Cholesky block lists the lower triangle row by row, with diagonal
//! entries stored as logarithms. The `xi` entries are present only for the
//! full likelihood.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{
    DiscriminantCoeffs, FullParams, GaussianPairModel, MissingnessParams, ModelEval,
    PartialSample,
};
use crate::special::{expit, log_add_exp, log_expit, logit};

/// Number of unconstrained parameters describing a model of dimension `p`.
pub fn theta_param_len(p: usize) -> usize {
    2 * p + p * (p + 1) / 2 + 1
}

/// Number of unconstrained parameters of the full model.
pub fn full_param_len(p: usize) -> usize {
    theta_param_len(p) + 2
}

/// Packs a model into the unconstrained layout.
pub fn pack_theta(theta: &GaussianPairModel) -> Vec<f64> {
    let p = theta.dim();
    let mut out = Vec::with_capacity(theta_param_len(p));
    out.extend(theta.mu1().iter());
    out.extend(theta.mu2().iter());
    let l = theta
        .sigma()
        .clone()
        .cholesky()
        .expect("validated covariance is positive definite")
        .l();
    for a in 0..p {
        for b in 0..=a {
            out.push(if a == b { l[(a, a)].ln() } else { l[(a, b)] });
        }
    }
    out.push(logit(theta.pi1()));
    out
}

pub fn pack_full(psi: &FullParams) -> Vec<f64> {
    let mut out = pack_theta(&psi.theta);
    out.push(psi.xi.xi0);
    out.push(psi.xi.xi1);
    out
}

/// Inverse of [`pack_theta`]. Fails when the implied covariance is not
/// numerically positive definite or an entry is not finite.
pub fn unpack_theta(x: &[f64], p: usize) -> Result<GaussianPairModel> {
    if x.len() < theta_param_len(p) {
        return Err(Error::DimensionMismatch {
            expected: theta_param_len(p),
            found: x.len(),
        });
    }
    if x[..theta_param_len(p)].iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite parameter".into()));
    }
    let mu1 = DVector::from_column_slice(&x[..p]);
    let mu2 = DVector::from_column_slice(&x[p..2 * p]);
    let mut l = DMatrix::zeros(p, p);
    let mut k = 2 * p;
    for a in 0..p {
        for b in 0..=a {
            l[(a, b)] = if a == b { x[k].exp() } else { x[k] };
            k += 1;
        }
    }
    let sigma = &l * l.transpose();
    GaussianPairModel::new(mu1, mu2, sigma, expit(x[k]))
}

pub fn unpack_full(x: &[f64], p: usize) -> Result<FullParams> {
    if x.len() != full_param_len(p) {
        return Err(Error::DimensionMismatch {
            expected: full_param_len(p),
            found: x.len(),
        });
    }
    let theta = unpack_theta(x, p)?;
    let k = theta_param_len(p);
    Ok(FullParams::new(theta, MissingnessParams::new(x[k], x[k + 1])?))
}

/// Log-likelihood components of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLikParts {
    pub classified: f64,
    pub unclassified: f64,
    /// Bernoulli log-likelihood of the missing-label indicators; zero when
    /// the evaluation ignored the mechanism.
    pub missing: f64,
    pub n_classified: usize,
    pub n_unclassified: usize,
}

impl LogLikParts {
    pub fn ignore(&self) -> f64 {
        self.classified + self.unclassified
    }

    pub fn full(&self) -> f64 {
        self.ignore() + self.missing
    }
}

/// Accumulates gradient contributions expressed as weights on the class
/// log-joint densities `log(pi_i f_i(y))` plus direct `xi` terms.
pub(crate) struct GradAccum {
    p: usize,
    weight: [f64; 2],
    resid: [DVector<f64>; 2],
    scatter: DMatrix<f64>,
    xi: [f64; 2],
}

impl GradAccum {
    pub fn new(p: usize) -> Self {
        Self {
            p,
            weight: [0.0; 2],
            resid: [DVector::zeros(p), DVector::zeros(p)],
            scatter: DMatrix::zeros(p, p),
            xi: [0.0; 2],
        }
    }

    /// Adds `w * grad log(pi_slot f_slot(y))`.
    #[inline]
    pub fn add_class(&mut self, eval: &ModelEval, slot: usize, w: f64, y: &[f64]) {
        if w == 0.0 {
            return;
        }
        let mu = &eval.mu[slot];
        self.weight[slot] += w;
        let p = self.p;
        for a in 0..p {
            let ra = y[a] - mu[a];
            self.resid[slot][a] += w * ra;
            for b in 0..=a {
                self.scatter[(a, b)] += w * ra * (y[b] - mu[b]);
            }
        }
    }

    #[inline]
    pub fn add_xi(&mut self, g0: f64, g1: f64) {
        self.xi[0] += g0;
        self.xi[1] += g1;
    }

    /// Gradient in the unconstrained layout; `with_xi` appends the two
    /// missingness entries.
    pub fn finish(mut self, eval: &ModelEval, pi1: f64, with_xi: bool) -> Vec<f64> {
        let p = self.p;
        for a in 0..p {
            for b in 0..a {
                self.scatter[(b, a)] = self.scatter[(a, b)];
            }
        }
        let mut out = Vec::with_capacity(full_param_len(p));
        for slot in 0..2 {
            let g = &eval.inv_sigma * &self.resid[slot];
            out.extend(g.iter());
        }
        let wsum = self.weight[0] + self.weight[1];
        let g_sigma =
            (&eval.inv_sigma * &self.scatter * &eval.inv_sigma - &eval.inv_sigma * wsum) * 0.5;
        let dl = (g_sigma * &eval.chol_l) * 2.0;
        for a in 0..p {
            for b in 0..=a {
                out.push(if a == b {
                    dl[(a, a)] * eval.chol_l[(a, a)]
                } else {
                    dl[(a, b)]
                });
            }
        }
        out.push(self.weight[0] * (1.0 - pi1) - self.weight[1] * pi1);
        if with_xi {
            out.extend(self.xi);
        }
        out
    }
}

fn bayes_from_eval(eval: &ModelEval, theta: &GaussianPairModel) -> DiscriminantCoeffs {
    let diff = &eval.mu[0] - &eval.mu[1];
    let beta1 = &eval.inv_sigma * &diff;
    let mid = (&eval.mu[0] + &eval.mu[1]) * 0.5;
    let beta0 = (theta.pi1() / theta.pi2()).ln() - mid.dot(&beta1);
    DiscriminantCoeffs::new(beta0, beta1)
}

/// Single pass over the sample. Rows are visited in order so the result is
/// bit-reproducible.
pub(crate) fn evaluate(
    sample: &PartialSample,
    theta: &GaussianPairModel,
    xi: Option<&MissingnessParams>,
    mut grad: Option<&mut GradAccum>,
) -> Result<LogLikParts> {
    sample.check_dim(theta.dim())?;
    let eval = theta.evaluator();
    let beta = xi.map(|_| bayes_from_eval(&eval, theta));
    let mut parts = LogLikParts {
        classified: 0.0,
        unclassified: 0.0,
        missing: 0.0,
        n_classified: 0,
        n_unclassified: 0,
    };
    for (j, y) in sample.rows().enumerate() {
        let lj = eval.log_joint(y);
        let label = sample.label(j);
        match label {
            Some(class) => {
                let s = class.slot();
                parts.classified += lj[s];
                parts.n_classified += 1;
                if let Some(g) = grad.as_deref_mut() {
                    g.add_class(&eval, s, 1.0, y);
                }
            }
            None => {
                let lse = log_add_exp(lj[0], lj[1]);
                parts.unclassified += lse;
                parts.n_unclassified += 1;
                if let Some(g) = grad.as_deref_mut() {
                    g.add_class(&eval, 0, (lj[0] - lse).exp(), y);
                    g.add_class(&eval, 1, (lj[1] - lse).exp(), y);
                }
            }
        }
        if let (Some(xi), Some(beta)) = (xi, beta.as_ref()) {
            let d = beta.eval_unchecked(y);
            let eta = xi.xi0 + xi.xi1 * d * d;
            let m = label.is_none();
            parts.missing += if m { log_expit(eta) } else { log_expit(-eta) };
            if let Some(g) = grad.as_deref_mut() {
                let resid = if m { 1.0 - expit(eta) } else { -expit(eta) };
                let c = resid * 2.0 * xi.xi1 * d;
                g.add_class(&eval, 0, c, y);
                g.add_class(&eval, 1, -c, y);
                g.add_xi(resid, resid * d * d);
            }
        }
    }
    let total = parts.ignore() + parts.missing;
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("log-likelihood evaluated to {total}")));
    }
    Ok(parts)
}

/// Log-likelihood of the classified rows, `sum (1-m_j) log(pi_z f_z(y_j))`.
pub fn loglik_classified(sample: &PartialSample, theta: &GaussianPairModel) -> Result<f64> {
    Ok(evaluate(sample, theta, None, None)?.classified)
}

/// Mixture log-likelihood of the unclassified rows.
pub fn loglik_unclassified(sample: &PartialSample, theta: &GaussianPairModel) -> Result<f64> {
    Ok(evaluate(sample, theta, None, None)?.unclassified)
}

/// Log-likelihood ignoring the missing-label mechanism.
pub fn loglik_ignore(sample: &PartialSample, theta: &GaussianPairModel) -> Result<f64> {
    Ok(evaluate(sample, theta, None, None)?.ignore())
}

/// Bernoulli log-likelihood of the missing-label indicators.
pub fn loglik_missing(sample: &PartialSample, psi: &FullParams) -> Result<f64> {
    Ok(evaluate(sample, &psi.theta, Some(&psi.xi), None)?.missing)
}

/// Full log-likelihood: ignore-mechanism part plus missingness part.
pub fn loglik_full(sample: &PartialSample, psi: &FullParams) -> Result<f64> {
    Ok(loglik_parts(sample, psi)?.full())
}

pub fn loglik_parts(sample: &PartialSample, psi: &FullParams) -> Result<LogLikParts> {
    evaluate(sample, &psi.theta, Some(&psi.xi), None)
}

/// Gradient of [`loglik_ignore`] in the unconstrained `theta` layout.
pub fn grad_loglik_ignore(sample: &PartialSample, theta: &GaussianPairModel) -> Result<Vec<f64>> {
    let mut acc = GradAccum::new(theta.dim());
    evaluate(sample, theta, None, Some(&mut acc))?;
    Ok(acc.finish(&theta.evaluator(), theta.pi1(), false))
}

/// Gradient of [`loglik_full`] in the unconstrained layout.
pub fn grad_loglik_full(sample: &PartialSample, psi: &FullParams) -> Result<Vec<f64>> {
    Ok(value_and_grad_full(sample, psi)?.1)
}

pub(crate) fn value_and_grad_full(
    sample: &PartialSample,
    psi: &FullParams,
) -> Result<(LogLikParts, Vec<f64>)> {
    let mut acc = GradAccum::new(psi.theta.dim());
    let parts = evaluate(sample, &psi.theta, Some(&psi.xi), Some(&mut acc))?;
    Ok((parts, acc.finish(&psi.theta.evaluator(), psi.theta.pi1(), true)))
}

/// Complete-data log-likelihood of a fully labelled sample.
pub fn loglik_complete(sample: &PartialSample, theta: &GaussianPairModel) -> Result<f64> {
    if sample.n_unclassified() > 0 {
        return Err(Error::InvalidSample(
            "complete-data likelihood needs every label".into(),
        ));
    }
    loglik_classified(sample, theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{bayes_coefficients, missing_prob, Class};
    use crate::special::LN_2PI;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn canonical(delta: f64, p: usize) -> GaussianPairModel {
        GaussianPairModel::canonical(delta, p, 0.5).unwrap()
    }

    fn random_sample(rng: &mut ChaCha8Rng, n: usize, p: usize, miss_frac: f64) -> PartialSample {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let class = if rng.random::<f64>() < 0.5 { Class::One } else { Class::Two };
            let shift = if class == Class::One { 1.5 } else { 0.0 };
            let y: Vec<f64> = (0..p)
                .map(|a| rng.sample::<f64, _>(StandardNormal) + if a == 0 { shift } else { 0.0 })
                .collect();
            features.push(y);
            labels.push(if rng.random::<f64>() < miss_frac { None } else { Some(class) });
        }
        PartialSample::new(features, labels).unwrap()
    }

    fn random_psi(rng: &mut ChaCha8Rng, p: usize) -> FullParams {
        let mut x: Vec<f64> = (0..full_param_len(p))
            .map(|_| rng.random_range(-0.8..0.8))
            .collect();
        x[0] += 1.0;
        unpack_full(&x, p).unwrap()
    }

    #[test]
    fn classified_examples() {
        let theta = canonical(2.0, 3);
        let none = PartialSample::new(vec![vec![0.0; 3]], vec![None]).unwrap();
        assert_eq!(loglik_classified(&none, &theta).unwrap(), 0.0);
        let one = PartialSample::new(vec![vec![2.0, 0.0, 0.0]], vec![Some(Class::One)]).unwrap();
        assert_abs_diff_eq!(
            loglik_classified(&one, &theta).unwrap(),
            -(2f64.ln()) - 1.5 * LN_2PI,
            epsilon = 1e-13
        );
        assert_eq!(
            loglik_complete(&one, &theta).unwrap(),
            loglik_classified(&one, &theta).unwrap()
        );
        assert!(loglik_complete(&none, &theta).is_err());
    }

    #[test]
    fn unclassified_examples() {
        let theta = canonical(2.0, 1);
        let labelled = PartialSample::new(vec![vec![0.3]], vec![Some(Class::Two)]).unwrap();
        assert_eq!(loglik_unclassified(&labelled, &theta).unwrap(), 0.0);
        let mid = PartialSample::new(vec![vec![1.0]], vec![None]).unwrap();
        assert_abs_diff_eq!(
            loglik_unclassified(&mid, &theta).unwrap(),
            -0.5 * LN_2PI - 0.5,
            epsilon = 1e-14
        );
        // Near-degenerate prior: mixture reduces to the class-1 density.
        let skew = GaussianPairModel::canonical(2.0, 1, 1.0 - 1e-12).unwrap();
        let y = PartialSample::new(vec![vec![0.4]], vec![None]).unwrap();
        let class_one = -0.5 * LN_2PI - 0.5 * 1.6f64.powi(2);
        assert_abs_diff_eq!(loglik_unclassified(&y, &skew).unwrap(), class_one, epsilon = 1e-9);
    }

    #[test]
    fn ignore_is_additive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sample = random_sample(&mut rng, 40, 2, 0.4);
        let theta = canonical(1.5, 2);
        let total = loglik_ignore(&sample, &theta).unwrap();
        let c = loglik_classified(&sample, &theta).unwrap();
        let u = loglik_unclassified(&sample, &theta).unwrap();
        assert_eq!(total, c + u);
        let all_labelled = random_sample(&mut rng, 20, 2, 0.0);
        assert_eq!(
            loglik_ignore(&all_labelled, &theta).unwrap(),
            loglik_classified(&all_labelled, &theta).unwrap()
        );
        let all_missing = random_sample(&mut rng, 20, 2, 1.0);
        assert_eq!(
            loglik_ignore(&all_missing, &theta).unwrap(),
            loglik_unclassified(&all_missing, &theta).unwrap()
        );
    }

    #[test]
    fn missing_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let theta = canonical(2.0, 1);
        let labelled = random_sample(&mut rng, 30, 1, 0.0);
        let nothing = FullParams::new(theta.clone(), MissingnessParams::new(-40.0, -1.0).unwrap());
        assert!(loglik_missing(&labelled, &nothing).unwrap().abs() < 1e-15);

        let sample = random_sample(&mut rng, 50, 1, 0.3);
        let k = sample.n_unclassified() as f64;
        let n = sample.len() as f64;
        let xi0 = 0.4;
        let mcar = FullParams::new(theta.clone(), MissingnessParams::new(xi0, 0.0).unwrap());
        let expected = k * expit(xi0).ln() + (n - k) * (1.0 - expit(xi0)).ln();
        assert_abs_diff_eq!(loglik_missing(&sample, &mcar).unwrap(), expected, epsilon = 1e-11);

        let boundary = PartialSample::new(vec![vec![1.0]], vec![None]).unwrap();
        let psi = FullParams::new(theta, MissingnessParams::new(1.5, -7.0).unwrap());
        assert_abs_diff_eq!(
            loglik_missing(&boundary, &psi).unwrap(),
            -0.201_413_277_982_752_83,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(missing_prob(&[1.0], &psi).unwrap().ln(), -0.201_413_277_982_752_83, epsilon = 1e-12);
    }

    #[test]
    fn full_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sample = random_sample(&mut rng, 25, 2, 0.5);
        let theta = canonical(1.0, 2);
        let half = FullParams::new(theta.clone(), MissingnessParams::new(0.0, 0.0).unwrap());
        assert_abs_diff_eq!(
            loglik_full(&sample, &half).unwrap(),
            loglik_ignore(&sample, &theta).unwrap() + 25.0 * 0.5f64.ln(),
            epsilon = 1e-11
        );
        for _ in 0..5 {
            let psi = random_psi(&mut rng, 2);
            let parts = loglik_parts(&sample, &psi).unwrap();
            assert_eq!(loglik_full(&sample, &psi).unwrap(), parts.ignore() + parts.missing);
            assert_eq!(parts.ignore(), loglik_ignore(&sample, &psi.theta).unwrap());
            assert_eq!(parts.missing, loglik_missing(&sample, &psi).unwrap());
            assert_eq!(parts.n_classified + parts.n_unclassified, 25);
            assert!(parts.missing <= 0.0);
        }
    }

    #[test]
    fn pack_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for p in 1..4 {
            let psi = random_psi(&mut rng, p);
            let x = pack_full(&psi);
            assert_eq!(x.len(), full_param_len(p));
            let back = unpack_full(&x, p).unwrap();
            assert!((back.theta.sigma() - psi.theta.sigma()).amax() < 1e-12);
            assert!((back.theta.pi1() - psi.theta.pi1()).abs() < 1e-14);
        }
        assert!(unpack_full(&[0.0; 3], 1).is_err());
    }

    fn central_difference(sample: &PartialSample, psi: &FullParams, h: f64) -> Vec<f64> {
        let p = psi.theta.dim();
        let x = pack_full(psi);
        (0..x.len())
            .map(|k| {
                let mut up = x.clone();
                let mut down = x.clone();
                up[k] += h;
                down[k] -= h;
                let fu = loglik_full(sample, &unpack_full(&up, p).unwrap()).unwrap();
                let fd = loglik_full(sample, &unpack_full(&down, p).unwrap()).unwrap();
                (fu - fd) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..10 {
            let p = 1 + trial % 3;
            let sample = random_sample(&mut rng, 60, p, 0.45);
            let psi = random_psi(&mut rng, p);
            let analytic = grad_loglik_full(&sample, &psi).unwrap();
            let numeric = central_difference(&sample, &psi, 1e-6);
            let scale = analytic.iter().map(|v| v.abs()).fold(1.0, f64::max);
            for (a, n) in analytic.iter().zip(&numeric) {
                assert!((a - n).abs() / scale < 1e-5, "trial {trial}: {a} vs {n}");
            }
        }
    }

    #[test]
    fn xi_gradient_is_bernoulli_score_under_mcar() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let sample = random_sample(&mut rng, 80, 2, 0.3);
        let psi = FullParams::new(canonical(2.0, 2), MissingnessParams::new(-0.4, 0.0).unwrap());
        let g = grad_loglik_full(&sample, &psi).unwrap();
        let expected: f64 = sample
            .miss_indicators()
            .iter()
            .map(|m| f64::from(*m) - expit(-0.4))
            .sum();
        assert_abs_diff_eq!(g[g.len() - 2], expected, epsilon = 1e-10);
    }

    #[test]
    fn ignore_gradient_matches_full_theta_block_without_mechanism() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let sample = random_sample(&mut rng, 50, 2, 0.5);
        let theta = random_psi(&mut rng, 2).theta;
        let psi = FullParams::new(theta.clone(), MissingnessParams::new(0.2, 0.0).unwrap());
        let g_ig = grad_loglik_ignore(&sample, &theta).unwrap();
        let g_full = grad_loglik_full(&sample, &psi).unwrap();
        for (a, b) in g_ig.iter().zip(&g_full) {
            assert!((a - b).abs() < 1e-10);
        }
        let beta = bayes_coefficients(&theta);
        assert_eq!(beta.dim(), 2);
    }

    proptest! {
        #[test]
        fn permutation_invariance(seed in 0u64..1000, shift in 1usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sample = random_sample(&mut rng, 31, 2, 0.4);
            let psi = random_psi(&mut rng, 2);
            let idx: Vec<usize> = (0..31).map(|j| (j * 7 + shift) % 31).collect();
            let permuted = sample.select(&idx).unwrap();
            let a = loglik_full(&sample, &psi).unwrap();
            let b = loglik_full(&permuted, &psi).unwrap();
            prop_assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
            prop_assert!(loglik_missing(&sample, &psi).unwrap() <= 0.0);
        }
    }
}
