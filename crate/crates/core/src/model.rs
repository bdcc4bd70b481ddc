//! Generative model, discriminant function, posteriors and the missing-label
//! probability.
//!
//! The two classes are multivariate normal with a shared covariance matrix.
//! Everything downstream depends on the model only through the values
//! defined here.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{expit, log_add_exp, LN_2PI};

/// Relative eigenvalue tolerance for positive definiteness.
pub const PD_RELATIVE_TOLERANCE: f64 = 1e-10;

/// Class membership. Class 1 wins ties on the decision boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Class {
    One,
    Two,
}

impl Class {
    pub fn from_index(label: u8) -> Option<Class> {
        match label {
            1 => Some(Class::One),
            2 => Some(Class::Two),
            _ => None,
        }
    }

    /// 1 or 2.
    pub fn index(self) -> u8 {
        match self {
            Class::One => 1,
            Class::Two => 2,
        }
    }

    /// 0 or 1, for array indexing.
    pub fn slot(self) -> usize {
        match self {
            Class::One => 0,
            Class::Two => 1,
        }
    }
}

/// Two-class homoscedastic normal model: means, shared covariance and the
/// prior of class 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPairModel {
    mu1: DVector<f64>,
    mu2: DVector<f64>,
    sigma: DMatrix<f64>,
    pi1: f64,
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eigen_range(sigma: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(sigma.clone());
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

fn check_positive_definite(sigma: &DMatrix<f64>) -> Result<()> {
    let (min, max) = eigen_range(sigma);
    if !(max > 0.0) || !(min > PD_RELATIVE_TOLERANCE * max) {
        return Err(Error::SingularCovariance {
            min_eigenvalue: min,
            max_eigenvalue: max,
        });
    }
    Ok(())
}

impl GaussianPairModel {
    pub fn new(
        mu1: DVector<f64>,
        mu2: DVector<f64>,
        sigma: DMatrix<f64>,
        pi1: f64,
    ) -> Result<Self> {
        let p = mu1.len();
        if p == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        if mu2.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: mu2.len(),
            });
        }
        if sigma.nrows() != p || sigma.ncols() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: sigma.nrows().max(sigma.ncols()),
            });
        }
        if !(pi1 > 0.0 && pi1 < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "pi1 must lie in (0, 1), got {pi1}"
            )));
        }
        if mu1.iter().chain(mu2.iter()).chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite model entry".into()));
        }
        let scale = sigma.amax();
        if (&sigma - sigma.transpose()).amax() > 1e-12 * scale.max(1.0) {
            return Err(Error::InvalidParameter("covariance is not symmetric".into()));
        }
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        check_positive_definite(&sigma)?;
        Ok(Self {
            mu1,
            mu2,
            sigma,
            pi1,
        })
    }

    /// Canonical form: identity covariance, `mu1 = (delta, 0, ..., 0)` and
    /// `mu2 = 0`.
    pub fn canonical(delta: f64, p: usize, pi1: f64) -> Result<Self> {
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "delta must be finite and non-negative, got {delta}"
            )));
        }
        let mut mu1 = DVector::zeros(p);
        if p > 0 {
            mu1[0] = delta;
        }
        Self::new(mu1, DVector::zeros(p), DMatrix::identity(p, p), pi1)
    }

    pub fn dim(&self) -> usize {
        self.mu1.len()
    }

    pub fn mu1(&self) -> &DVector<f64> {
        &self.mu1
    }

    pub fn mu2(&self) -> &DVector<f64> {
        &self.mu2
    }

    pub fn mu(&self, class: Class) -> &DVector<f64> {
        match class {
            Class::One => &self.mu1,
            Class::Two => &self.mu2,
        }
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn pi1(&self) -> f64 {
        self.pi1
    }

    pub fn pi2(&self) -> f64 {
        1.0 - self.pi1
    }

    pub(crate) fn evaluator(&self) -> ModelEval {
        ModelEval::new(self)
    }
}

/// Precomputed quantities for repeated density evaluation.
#[derive(Debug, Clone)]
pub(crate) struct ModelEval {
    pub p: usize,
    pub mu: [DVector<f64>; 2],
    pub inv_sigma: DMatrix<f64>,
    pub chol_l: DMatrix<f64>,
    /// `log pi_i - p/2 log(2 pi) - 1/2 log |Sigma|`.
    pub log_norm: [f64; 2],
}

impl ModelEval {
    fn new(theta: &GaussianPairModel) -> Self {
        let p = theta.dim();
        let chol = theta
            .sigma
            .clone()
            .cholesky()
            .expect("validated covariance is positive definite");
        let chol_l = chol.l();
        let log_det: f64 = 2.0 * chol_l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let inv_sigma = chol.inverse();
        let log_pi = [theta.pi1.ln(), (1.0 - theta.pi1).ln()];
        let base = -0.5 * p as f64 * LN_2PI - 0.5 * log_det;
        Self {
            p,
            mu: [theta.mu1.clone(), theta.mu2.clone()],
            inv_sigma,
            chol_l,
            log_norm: [log_pi[0] + base, log_pi[1] + base],
        }
    }

    /// Squared Mahalanobis distance of `y` from the mean of class `slot`.
    #[inline]
    pub fn quad(&self, y: &[f64], slot: usize) -> f64 {
        let mu = &self.mu[slot];
        let p = self.p;
        if p == 1 {
            let r = y[0] - mu[0];
            return r * r * self.inv_sigma[(0, 0)];
        }
        let mut total = 0.0;
        for a in 0..p {
            let ra = y[a] - mu[a];
            let mut row = 0.0;
            for b in 0..p {
                row += self.inv_sigma[(a, b)] * (y[b] - mu[b]);
            }
            total += ra * row;
        }
        total
    }

    /// `log(pi_i f_i(y))` for both classes.
    #[inline]
    pub fn log_joint(&self, y: &[f64]) -> [f64; 2] {
        [
            self.log_norm[0] - 0.5 * self.quad(y, 0),
            self.log_norm[1] - 0.5 * self.quad(y, 1),
        ]
    }
}

/// Coefficients of the linear discriminant `beta0 + beta1' y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminantCoeffs {
    pub beta0: f64,
    pub beta1: DVector<f64>,
}

impl DiscriminantCoeffs {
    pub fn new(beta0: f64, beta1: DVector<f64>) -> Self {
        Self { beta0, beta1 }
    }

    pub fn dim(&self) -> usize {
        self.beta1.len()
    }

    /// The coefficient vector `(beta0, beta1...)`.
    pub fn to_vec(&self) -> Vec<f64> {
        std::iter::once(self.beta0)
            .chain(self.beta1.iter().copied())
            .collect()
    }

    /// Evaluates `beta0 + beta1' y`.
    pub fn discriminant(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.beta1.len() {
            return Err(Error::DimensionMismatch {
                expected: self.beta1.len(),
                found: y.len(),
            });
        }
        Ok(self.eval_unchecked(y))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, y: &[f64]) -> f64 {
        self.beta0 + self.beta1.iter().zip(y).map(|(b, v)| b * v).sum::<f64>()
    }
}

/// Logistic missing-label model parameters `(xi0, xi1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissingnessParams {
    pub xi0: f64,
    pub xi1: f64,
}

impl MissingnessParams {
    pub fn new(xi0: f64, xi1: f64) -> Result<Self> {
        if !xi0.is_finite() || !xi1.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "missingness parameters must be finite, got ({xi0}, {xi1})"
            )));
        }
        Ok(Self { xi0, xi1 })
    }

    /// Probability of a missing label for a discriminant value `d`.
    #[inline]
    pub fn prob_from_discriminant(&self, d: f64) -> f64 {
        expit(self.xi0 + self.xi1 * d * d)
    }

    /// The same probability written in terms of the class-1 posterior.
    pub fn prob_from_posterior(&self, tau1: f64) -> f64 {
        let logit = (tau1 / (1.0 - tau1)).ln();
        expit(self.xi0 + self.xi1 * logit * logit)
    }
}

/// Generative model plus missingness parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullParams {
    pub theta: GaussianPairModel,
    pub xi: MissingnessParams,
}

impl FullParams {
    pub fn new(theta: GaussianPairModel, xi: MissingnessParams) -> Self {
        Self { theta, xi }
    }
}

/// Features with optional labels. A row is unclassified exactly when its
/// label is absent.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialSample {
    p: usize,
    data: Vec<f64>,
    labels: Vec<Option<Class>>,
}

impl PartialSample {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<Option<Class>>) -> Result<Self> {
        let n = features.len();
        if n == 0 {
            return Err(Error::InvalidSample("sample has no rows".into()));
        }
        if labels.len() != n {
            return Err(Error::InvalidSample(format!(
                "{n} feature rows but {} labels",
                labels.len()
            )));
        }
        let p = features[0].len();
        if p == 0 {
            return Err(Error::InvalidSample("feature dimension is zero".into()));
        }
        let mut data = Vec::with_capacity(n * p);
        for (j, row) in features.iter().enumerate() {
            if row.len() != p {
                return Err(Error::InvalidSample(format!(
                    "row {j} has {} features, expected {p}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidSample(format!("row {j} has a non-finite feature")));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { p, data, labels })
    }

    /// Builds a sample from raw label indices and missing indicators, checking
    /// that `miss[j] == 1` exactly when the label is absent.
    pub fn from_indicators(
        features: Vec<Vec<f64>>,
        labels: Vec<Option<u8>>,
        miss: Vec<u8>,
    ) -> Result<Self> {
        if labels.len() != miss.len() {
            return Err(Error::InvalidSample(format!(
                "{} labels but {} missing indicators",
                labels.len(),
                miss.len()
            )));
        }
        let mut classes = Vec::with_capacity(labels.len());
        for (row, (label, m)) in labels.iter().zip(&miss).enumerate() {
            match (label, m) {
                (None, 1) => classes.push(None),
                (Some(l), 0) => classes.push(Some(
                    Class::from_index(*l).ok_or(Error::InvalidLabel { row, label: *l })?,
                )),
                _ => {
                    return Err(Error::InvalidSample(format!(
                        "row {row}: missing indicator {m} inconsistent with label {label:?}"
                    )))
                }
            }
        }
        Self::new(features, classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.p..(j + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.p)
    }

    pub fn label(&self, j: usize) -> Option<Class> {
        self.labels[j]
    }

    pub fn labels(&self) -> &[Option<Class>] {
        &self.labels
    }

    /// Missing-label indicator of row `j`.
    pub fn miss(&self, j: usize) -> u8 {
        u8::from(self.labels[j].is_none())
    }

    pub fn miss_indicators(&self) -> Vec<u8> {
        (0..self.len()).map(|j| self.miss(j)).collect()
    }

    pub fn n_unclassified(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }

    pub fn n_classified(&self) -> usize {
        self.len() - self.n_unclassified()
    }

    /// Labelled counts per class.
    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0; 2];
        for class in self.labels.iter().flatten() {
            counts[class.slot()] += 1;
        }
        counts
    }

    pub(crate) fn check_dim(&self, p: usize) -> Result<()> {
        if self.p != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: self.p,
            });
        }
        Ok(())
    }

    /// Copy of the sample with the labels replaced.
    pub fn with_labels(&self, labels: Vec<Option<Class>>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::InvalidSample("label count changed".into()));
        }
        Ok(Self {
            p: self.p,
            data: self.data.clone(),
            labels,
        })
    }

    /// Row-major features already known to be finite.
    pub(crate) fn from_flat(p: usize, data: Vec<f64>, labels: Vec<Option<Class>>) -> Self {
        debug_assert_eq!(data.len(), p * labels.len());
        Self { p, data, labels }
    }

    /// Rows selected by index, in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let features = idx.iter().map(|&j| self.row(j).to_vec()).collect();
        let labels = idx.iter().map(|&j| self.labels[j]).collect();
        Self::new(features, labels)
    }
}

/// Coefficients of the Bayes rule: `beta1 = Sigma^{-1}(mu1 - mu2)` and
/// `beta0 = log(pi1/pi2) - (mu1 + mu2)' Sigma^{-1} (mu1 - mu2) / 2`.
pub fn bayes_coefficients(theta: &GaussianPairModel) -> DiscriminantCoeffs {
    let eval = theta.evaluator();
    let diff = &theta.mu1 - &theta.mu2;
    let beta1 = &eval.inv_sigma * &diff;
    let mid = (&theta.mu1 + &theta.mu2) * 0.5;
    let beta0 = (theta.pi1 / (1.0 - theta.pi1)).ln() - mid.dot(&beta1);
    DiscriminantCoeffs { beta0, beta1 }
}

pub fn discriminant(y: &[f64], beta: &DiscriminantCoeffs) -> Result<f64> {
    beta.discriminant(y)
}

fn check_len(y: &[f64], p: usize) -> Result<()> {
    if y.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: y.len(),
        });
    }
    Ok(())
}

/// Posterior class probabilities `(tau1, tau2)`, computed from the log
/// densities.
pub fn posterior(y: &[f64], theta: &GaussianPairModel) -> Result<[f64; 2]> {
    check_len(y, theta.dim())?;
    let lj = theta.evaluator().log_joint(y);
    Ok(posterior_from_log_joint(lj))
}

#[inline]
pub(crate) fn posterior_from_log_joint(lj: [f64; 2]) -> [f64; 2] {
    let lse = log_add_exp(lj[0], lj[1]);
    [(lj[0] - lse).exp(), (lj[1] - lse).exp()]
}

/// Bayes allocation. Points with equal posteriors go to class 1.
pub fn bayes_classify(y: &[f64], theta: &GaussianPairModel) -> Result<Class> {
    check_len(y, theta.dim())?;
    let lj = theta.evaluator().log_joint(y);
    Ok(if lj[0] >= lj[1] { Class::One } else { Class::Two })
}

/// Shannon entropy (natural log) of a probability vector, with `0 log 0 = 0`.
pub fn shannon_entropy(tau: &[f64]) -> Result<f64> {
    if tau.is_empty() {
        return Err(Error::InvalidProbability("empty vector".into()));
    }
    if tau.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::InvalidProbability(format!(
            "components must be finite and non-negative: {tau:?}"
        )));
    }
    let total: f64 = tau.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidProbability(format!(
            "components sum to {total}, not 1"
        )));
    }
    Ok(-tau
        .iter()
        .filter(|t| **t > 0.0)
        .map(|t| t * t.ln())
        .sum::<f64>())
}

/// Probability that the label of `y` is missing: `expit(xi0 + xi1 d(y)^2)`
/// with `d` the Bayes discriminant under `psi.theta`.
pub fn missing_prob(y: &[f64], psi: &FullParams) -> Result<f64> {
    let beta = bayes_coefficients(&psi.theta);
    let d = beta.discriminant(y)?;
    Ok(psi.xi.prob_from_discriminant(d))
}

/// Squared Mahalanobis distance between the class means.
pub fn mahalanobis_sq(theta: &GaussianPairModel) -> f64 {
    let eval = theta.evaluator();
    let diff = &theta.mu1 - &theta.mu2;
    let v = diff.dot(&(&eval.inv_sigma * &diff));
    v.max(0.0)
}

/// The canonical-form model with the same separation and prior.
pub fn canonicalize(theta: &GaussianPairModel) -> GaussianPairModel {
    GaussianPairModel::canonical(mahalanobis_sq(theta).sqrt(), theta.dim(), theta.pi1)
        .expect("canonical parameters of a valid model are valid")
}
