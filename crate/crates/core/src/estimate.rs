//! Estimators of the generative model from a partially classified sample.
//!
//! * [`fit_complete`]: closed-form ML from a fully labelled sample.
//! * [`fit_ignore_em`]: EM on the likelihood that ignores the missing-label
//!   mechanism.
//! * [`fit_full_ml`]: BFGS on the full likelihood, which adds the logistic
//!   model for the missing-label indicators.
//! * [`fit_cml_hard`]: classification ML, i.e. EM with hard assignment of
//!   the unlabelled rows.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{
    full_param_len, loglik_full, loglik_ignore, pack_full, unpack_full, value_and_grad_full,
};
use crate::model::{
    bayes_coefficients, eigen_range, posterior_from_log_joint, Class, DiscriminantCoeffs,
    FullParams, GaussianPairModel, MissingnessParams, PartialSample,
};
use crate::optim::{minimize, BfgsOptions};
use crate::special::logit;

/// Smallest covariance eigenvalue accepted during EM before the fit is
/// declared collapsed.
pub const COVARIANCE_FLOOR: f64 = 1e-8;
pub const DEFAULT_EM_TOL: f64 = 1e-8;
pub const DEFAULT_GRAD_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    Complete,
    IgnoreEm,
    FullMl,
    CmlHard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub method: FitMethod,
    pub theta: GaussianPairModel,
    /// Present only for the full-likelihood fit.
    pub xi: Option<MissingnessParams>,
    /// Objective at the returned estimate: complete-data, ignore-mechanism,
    /// full, or classification log-likelihood depending on `method`.
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
    /// Discriminant estimate after each CML iteration; empty otherwise.
    pub beta_trace: Vec<DiscriminantCoeffs>,
}

impl FitResult {
    pub fn beta(&self) -> DiscriminantCoeffs {
        bayes_coefficients(&self.theta)
    }

    pub fn full_params(&self) -> Option<FullParams> {
        self.xi.map(|xi| FullParams::new(self.theta.clone(), xi))
    }
}

/// Weighted closed-form M-step: priors from weight totals, class means, and
/// the pooled covariance with divisor `n`.
fn m_step(sample: &PartialSample, weights: &[[f64; 2]]) -> Result<GaussianPairModel> {
    let p = sample.dim();
    let n = sample.len() as f64;
    let mut total = [0.0; 2];
    let mut sums = [DVector::<f64>::zeros(p), DVector::<f64>::zeros(p)];
    for (y, w) in sample.rows().zip(weights) {
        for slot in 0..2 {
            total[slot] += w[slot];
            for a in 0..p {
                sums[slot][a] += w[slot] * y[a];
            }
        }
    }
    if total.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::DegenerateFit(format!(
            "a class received no weight (totals {total:?})"
        )));
    }
    let means = [&sums[0] / total[0], &sums[1] / total[1]];
    let mut scatter = DMatrix::<f64>::zeros(p, p);
    for (y, w) in sample.rows().zip(weights) {
        for slot in 0..2 {
            if w[slot] == 0.0 {
                continue;
            }
            for a in 0..p {
                let ra = y[a] - means[slot][a];
                for b in 0..=a {
                    scatter[(a, b)] += w[slot] * ra * (y[b] - means[slot][b]);
                }
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            scatter[(b, a)] = scatter[(a, b)];
        }
    }
    let sigma = scatter / n;
    let (min_eig, _) = eigen_range(&sigma);
    if !(min_eig >= COVARIANCE_FLOOR) {
        return Err(Error::DegenerateFit(format!(
            "covariance collapsed (smallest eigenvalue {min_eig:e})"
        )));
    }
    let pi1 = total[0] / (total[0] + total[1]);
    let [mu1, mu2] = means;
    GaussianPairModel::new(mu1, mu2, sigma, pi1)
}

fn hard_weights(labels: &[Option<Class>]) -> Vec<[f64; 2]> {
    labels
        .iter()
        .map(|l| match l {
            Some(Class::One) => [1.0, 0.0],
            Some(Class::Two) => [0.0, 1.0],
            None => [0.0, 0.0],
        })
        .collect()
}

/// Closed-form ML estimate from a fully labelled sample.
pub fn fit_complete(sample: &PartialSample) -> Result<FitResult> {
    if sample.n_unclassified() > 0 {
        return Err(Error::InvalidSample(format!(
            "complete-data fit needs every label; {} missing",
            sample.n_unclassified()
        )));
    }
    let counts = sample.class_counts();
    if counts.iter().any(|c| *c < 2) {
        return Err(Error::DegenerateFit(format!(
            "each class needs at least two rows, got {counts:?}"
        )));
    }
    if sample.len() <= sample.dim() + 2 {
        return Err(Error::DegenerateFit(format!(
            "need n > p + 2, got n = {} with p = {}",
            sample.len(),
            sample.dim()
        )));
    }
    let theta = m_step(sample, &hard_weights(sample.labels())).map_err(|e| match e {
        Error::DegenerateFit(msg) => Error::DegenerateFit(format!("pooled covariance: {msg}")),
        other => other,
    })?;
    let loglik = loglik_ignore(sample, &theta)?;
    Ok(FitResult {
        method: FitMethod::Complete,
        theta,
        xi: None,
        loglik,
        iterations: 1,
        converged: true,
        trace: vec![loglik],
        beta_trace: Vec::new(),
    })
}

/// Starting model for the iterative fits.
///
/// Uses the labelled rows when each class has at least two of them and their
/// pooled covariance is usable; otherwise splits all rows at the median of
/// their projection on the leading principal axis.
pub fn initial_model(sample: &PartialSample) -> Result<GaussianPairModel> {
    let counts = sample.class_counts();
    if counts.iter().all(|c| *c >= 2) && sample.n_classified() > sample.dim() + 2 {
        let idx: Vec<usize> = (0..sample.len()).filter(|j| sample.label(*j).is_some()).collect();
        let labelled = sample.select(&idx)?;
        if let Ok(theta) = m_step(&labelled, &hard_weights(labelled.labels())) {
            return Ok(theta);
        }
    }
    let p = sample.dim();
    let n = sample.len();
    let mean = sample
        .rows()
        .fold(DVector::<f64>::zeros(p), |acc, y| acc + DVector::from_column_slice(y))
        / n as f64;
    let mut cov = DMatrix::<f64>::zeros(p, p);
    for y in sample.rows() {
        let r = DVector::from_column_slice(y) - &mean;
        cov += &r * r.transpose();
    }
    let eig = SymmetricEigen::new(cov / n as f64);
    let lead = eig.eigenvalues.imax();
    let axis = eig.eigenvectors.column(lead).into_owned();
    let proj: Vec<f64> = sample
        .rows()
        .map(|y| (DVector::from_column_slice(y) - &mean).dot(&axis))
        .collect();
    let mut sorted = proj.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[n / 2];
    let labels: Vec<Option<Class>> = proj
        .iter()
        .map(|v| Some(if *v >= median { Class::One } else { Class::Two }))
        .collect();
    m_step(sample, &hard_weights(&labels))
}

/// EM for the likelihood that ignores the missing-label mechanism.
///
/// Labelled rows keep their indicators; unlabelled rows get posterior
/// weights. The trace holds the log-likelihood of every visited iterate and
/// iteration stops once the increase drops below `tol`.
pub fn fit_ignore_em(
    sample: &PartialSample,
    init: &GaussianPairModel,
    tol: f64,
    max_iter: usize,
) -> Result<FitResult> {
    sample.check_dim(init.dim())?;
    if sample.n_unclassified() == 0 {
        let mut fit = fit_complete(sample)?;
        fit.method = FitMethod::IgnoreEm;
        return Ok(fit);
    }
    let mut theta = init.clone();
    let mut trace: Vec<f64> = Vec::new();
    let mut weights = vec![[0.0; 2]; sample.len()];
    let mut converged = false;
    let mut iterations = 0;
    loop {
        // E-step, which also yields the log-likelihood of the current iterate.
        let eval = theta.evaluator();
        let mut ll = 0.0;
        for (j, y) in sample.rows().enumerate() {
            let lj = eval.log_joint(y);
            match sample.label(j) {
                Some(class) => {
                    ll += lj[class.slot()];
                    weights[j] = hard_weights(&[Some(class)])[0];
                }
                None => {
                    let tau = posterior_from_log_joint(lj);
                    ll += crate::special::log_add_exp(lj[0], lj[1]);
                    weights[j] = tau;
                }
            }
        }
        if !ll.is_finite() {
            return Err(Error::NonFinite(format!("EM log-likelihood {ll}")));
        }
        if let Some(prev) = trace.last() {
            if ll - prev < tol {
                converged = true;
                trace.push(ll);
                break;
            }
        }
        trace.push(ll);
        if iterations == max_iter {
            break;
        }
        theta = m_step(sample, &weights)?;
        iterations += 1;
    }
    let loglik = *trace.last().expect("trace has at least one entry");
    Ok(FitResult {
        method: FitMethod::IgnoreEm,
        theta,
        xi: None,
        loglik,
        iterations,
        converged,
        trace,
        beta_trace: Vec::new(),
    })
}

/// Starting point for the full-likelihood fit: a fitted model plus
/// `xi = (logit of the observed missing fraction, 0)`.
pub fn default_full_init(sample: &PartialSample, theta: &GaussianPairModel) -> FullParams {
    let n = sample.len() as f64;
    let frac = (sample.n_unclassified() as f64 / n).clamp(0.5 / n, 1.0 - 0.5 / n);
    FullParams::new(
        theta.clone(),
        MissingnessParams::new(logit(frac), 0.0).expect("finite by construction"),
    )
}

/// Quasi-Newton maximisation of the full log-likelihood.
///
/// The objective is the per-observation negative log-likelihood, so `tol`
/// bounds the largest component of the average score.
pub fn fit_full_ml(
    sample: &PartialSample,
    init: &FullParams,
    tol: f64,
    max_iter: usize,
) -> Result<FitResult> {
    let p = init.theta.dim();
    sample.check_dim(p)?;
    let n = sample.len() as f64;
    let x0 = pack_full(init);
    debug_assert_eq!(x0.len(), full_param_len(p));
    let objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let psi = unpack_full(x, p)?;
        let (parts, grad) = value_and_grad_full(sample, &psi)?;
        Ok((-parts.full() / n, grad.iter().map(|g| -g / n).collect()))
    };
    let opts = BfgsOptions {
        grad_tol: tol,
        max_iter,
        ..BfgsOptions::default()
    };
    let out = minimize(objective, &x0, opts)?;
    let psi = unpack_full(&out.x, p)?;
    let loglik = loglik_full(sample, &psi)?;
    Ok(FitResult {
        method: FitMethod::FullMl,
        theta: psi.theta,
        xi: Some(psi.xi),
        loglik,
        iterations: out.iterations,
        converged: out.converged,
        trace: out.trace.iter().map(|f| -f * n).collect(),
        beta_trace: Vec::new(),
    })
}

/// Classification ML: unlabelled rows are assigned outright to their most
/// probable class and the model is refitted on the completed sample, until
/// the partition stops changing. Labelled rows are never reassigned.
pub fn fit_cml_hard(
    sample: &PartialSample,
    init: &GaussianPairModel,
    max_iter: usize,
) -> Result<FitResult> {
    sample.check_dim(init.dim())?;
    if sample.class_counts().iter().any(|c| *c == 0) {
        return Err(Error::DegenerateFit(
            "CML requires labelled rows in both classes".into(),
        ));
    }
    let mut theta = init.clone();
    let mut previous: Option<Vec<Option<Class>>> = None;
    let mut trace = Vec::new();
    let mut beta_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        let eval = theta.evaluator();
        let completed: Vec<Option<Class>> = sample
            .rows()
            .enumerate()
            .map(|(j, y)| {
                sample.label(j).or_else(|| {
                    let lj = eval.log_joint(y);
                    Some(if lj[0] >= lj[1] { Class::One } else { Class::Two })
                })
            })
            .collect();
        if previous.as_ref() == Some(&completed) {
            converged = true;
            break;
        }
        theta = m_step(sample, &hard_weights(&completed)).map_err(|e| match e {
            Error::DegenerateFit(msg) => {
                Error::DegenerateFit(format!("CML iteration {}: {msg}", iterations + 1))
            }
            other => other,
        })?;
        iterations += 1;
        let full = sample.with_labels(completed.clone())?;
        trace.push(loglik_ignore(&full, &theta)?);
        beta_trace.push(bayes_coefficients(&theta));
        previous = Some(completed);
    }
    let loglik = trace.last().copied().unwrap_or(f64::NAN);
    Ok(FitResult {
        method: FitMethod::CmlHard,
        theta,
        xi: None,
        loglik,
        iterations,
        converged,
        trace,
        beta_trace,
    })
}

/// Ignore-mechanism EM from [`initial_model`] followed by the full fit
/// started at its estimate.
pub fn fit_ignore_then_full(sample: &PartialSample) -> Result<(FitResult, FitResult)> {
    let init = initial_model(sample)?;
    let ig = fit_ignore_em(sample, &init, DEFAULT_EM_TOL, DEFAULT_MAX_ITER)?;
    let start = default_full_init(sample, &ig.theta);
    let full = fit_full_ml(sample, &start, DEFAULT_GRAD_TOL, DEFAULT_MAX_ITER)?;
    Ok((ig, full))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::draw_partial_sample;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn canonical_psi(delta: f64, xi0: f64, xi1: f64) -> FullParams {
        FullParams::new(
            GaussianPairModel::canonical(delta, 1, 0.5).unwrap(),
            MissingnessParams::new(xi0, xi1).unwrap(),
        )
    }

    #[test]
    fn complete_fit_symmetric_points() {
        let sample = PartialSample::new(
            vec![vec![1.0], vec![3.0], vec![-1.0], vec![-3.0], vec![2.0], vec![-2.0]],
            vec![
                Some(Class::One),
                Some(Class::One),
                Some(Class::Two),
                Some(Class::Two),
                Some(Class::One),
                Some(Class::Two),
            ],
        )
        .unwrap();
        let fit = fit_complete(&sample).unwrap();
        assert_abs_diff_eq!(fit.theta.mu1()[0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(fit.theta.mu2()[0], -2.0, epsilon = 1e-15);
        assert_eq!(fit.theta.pi1(), 0.5);
        assert_abs_diff_eq!(fit.theta.sigma()[(0, 0)], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn complete_fit_is_invariant_to_duplication() {
        let psi = canonical_psi(2.0, -40.0, 0.0);
        let sample = draw_partial_sample(200, &psi, 4, 0).unwrap();
        let idx: Vec<usize> = (0..200).chain(0..200).collect();
        let doubled = sample.select(&idx).unwrap();
        let a = fit_complete(&sample).unwrap();
        let b = fit_complete(&doubled).unwrap();
        assert!((a.theta.mu1() - b.theta.mu1()).amax() < 1e-12);
        assert!((a.theta.sigma() - b.theta.sigma()).amax() < 1e-12);
        assert_eq!(a.theta.pi1(), b.theta.pi1());
    }

    #[test]
    fn complete_fit_errors() {
        let missing = PartialSample::new(vec![vec![0.0], vec![1.0]], vec![None, Some(Class::One)]).unwrap();
        assert!(matches!(fit_complete(&missing), Err(Error::InvalidSample(_))));
        let one_class = PartialSample::new(
            vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]],
            vec![Some(Class::One); 4],
        )
        .unwrap();
        assert!(matches!(fit_complete(&one_class), Err(Error::DegenerateFit(_))));
        let flat = PartialSample::new(
            vec![vec![1.0], vec![1.0], vec![0.0], vec![0.0], vec![1.0]],
            vec![Some(Class::One), Some(Class::One), Some(Class::Two), Some(Class::Two), Some(Class::One)],
        )
        .unwrap();
        assert!(matches!(fit_complete(&flat), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn complete_fit_is_consistent() {
        let psi = FullParams::new(
            GaussianPairModel::canonical(2.0, 2, 0.5).unwrap(),
            MissingnessParams::new(-40.0, 0.0).unwrap(),
        );
        let sample = draw_partial_sample(50_000, &psi, 21, 0).unwrap();
        let fit = fit_complete(&sample).unwrap();
        assert!((fit.theta.mu1() - psi.theta.mu1()).amax() < 0.05);
        assert!((fit.theta.mu2() - psi.theta.mu2()).amax() < 0.05);
        assert!((fit.theta.sigma() - psi.theta.sigma()).amax() < 0.05);
        assert!((fit.theta.pi1() - 0.5).abs() < 0.05);
    }

    #[test]
    fn em_on_fully_labelled_sample_reproduces_complete_fit() {
        let psi = canonical_psi(1.5, -40.0, 0.0);
        let sample = draw_partial_sample(300, &psi, 8, 0).unwrap();
        let init = GaussianPairModel::canonical(0.5, 1, 0.3).unwrap();
        let em = fit_ignore_em(&sample, &init, DEFAULT_EM_TOL, DEFAULT_MAX_ITER).unwrap();
        let cc = fit_complete(&sample).unwrap();
        assert_eq!(em.theta, cc.theta);
        assert_eq!(em.iterations, 1);
    }

    #[test]
    fn em_is_consistent_under_mcar() {
        let psi = canonical_psi(2.0, 0.0, 0.0);
        let sample = draw_partial_sample(50_000, &psi, 17, 0).unwrap();
        let init = initial_model(&sample).unwrap();
        let fit = fit_ignore_em(&sample, &init, DEFAULT_EM_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(fit.converged);
        let truth = bayes_coefficients(&psi.theta).to_vec();
        for (a, b) in fit.beta().to_vec().iter().zip(&truth) {
            assert!((a - b).abs() < 0.1, "{a} vs {b}");
        }
    }

    #[test]
    fn full_fit_is_consistent_under_nmar() {
        let psi = canonical_psi(2.0, 3.0, -5.0);
        let sample = draw_partial_sample(20_000, &psi, 5, 0).unwrap();
        let (ig, full) = fit_ignore_then_full(&sample).unwrap();
        assert!(full.converged);
        let start = default_full_init(&sample, &ig.theta);
        assert!(full.loglik >= loglik_full(&sample, &start).unwrap());
        let truth = bayes_coefficients(&psi.theta).to_vec();
        for (a, b) in full.beta().to_vec().iter().zip(&truth) {
            assert!((a - b).abs() < 0.1, "{a} vs {b}");
        }
        let xi = full.xi.unwrap();
        assert!(xi.xi1 < 0.0);
    }

    #[test]
    fn full_fit_without_mechanism_matches_em() {
        // xi1 = 0: the indicators carry no information about beta.
        let psi = canonical_psi(2.0, 0.5, 0.0);
        let reps = 20;
        let mut diffs = Vec::new();
        let mut xi1s = Vec::new();
        for rep in 0..reps {
            let sample = draw_partial_sample(1000, &psi, 77, rep).unwrap();
            let (ig, full) = fit_ignore_then_full(&sample).unwrap();
            diffs.push(full.beta().beta1[0] - ig.beta().beta1[0]);
            xi1s.push(full.xi.unwrap().xi1);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let se = |v: &[f64]| {
            let m = mean(v);
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
                / (v.len() as f64).sqrt()
        };
        assert!(mean(&diffs).abs() <= 2.0 * se(&diffs) + 1e-3, "{diffs:?}");
        assert!(mean(&xi1s).abs() <= 2.0 * se(&xi1s) + 1e-3, "{xi1s:?}");
    }

    #[test]
    fn cml_converges_quickly_when_separated() {
        let psi = canonical_psi(6.0, 0.0, 0.0);
        let sample = draw_partial_sample(400, &psi, 3, 0).unwrap();
        let init = initial_model(&sample).unwrap();
        let fit = fit_cml_hard(&sample, &init, 50).unwrap();
        assert!(fit.converged);
        assert!(fit.iterations <= 3, "took {}", fit.iterations);
        assert_eq!(fit.beta_trace.len(), fit.iterations);
        // Restarting from the fixed point reproduces it.
        let again = fit_cml_hard(&sample, &fit.theta, 50).unwrap();
        assert_eq!(again.theta, fit.theta);
        assert_eq!(again.iterations, 1);
    }

    #[test]
    fn cml_without_unlabelled_rows_is_complete_fit() {
        let psi = canonical_psi(1.0, -40.0, 0.0);
        let sample = draw_partial_sample(150, &psi, 6, 0).unwrap();
        let init = GaussianPairModel::canonical(3.0, 1, 0.5).unwrap();
        let cml = fit_cml_hard(&sample, &init, 20).unwrap();
        assert_eq!(cml.theta, fit_complete(&sample).unwrap().theta);
    }

    #[test]
    fn cml_needs_labels_in_both_classes() {
        let sample = PartialSample::new(vec![vec![0.0], vec![1.0], vec![2.0]], vec![None; 3]).unwrap();
        let init = GaussianPairModel::canonical(1.0, 1, 0.5).unwrap();
        let err = fit_cml_hard(&sample, &init, 10).unwrap_err();
        assert!(err.to_string().contains("requires labelled rows in both classes"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn em_trace_is_nondecreasing(seed in 0u64..10_000, delta in 0.5f64..3.0, xi0 in -1.0f64..2.0) {
            let psi = canonical_psi(delta, xi0, -0.5);
            let sample = draw_partial_sample(120, &psi, seed, 0).unwrap();
            let init = initial_model(&sample).unwrap();
            if let Ok(fit) = fit_ignore_em(&sample, &init, DEFAULT_EM_TOL, DEFAULT_MAX_ITER) {
                for w in fit.trace.windows(2) {
                    prop_assert!(w[1] >= w[0] - 1e-10, "{} -> {}", w[0], w[1]);
                }
            }
        }
    }
}
