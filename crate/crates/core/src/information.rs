//! Asymptotic relative efficiencies of the partially classified rules and
//! Monte Carlo estimates of the information matrices behind them.
//!
//! The efficiencies reduce to one-dimensional integrals along the canonical
//! discriminant direction. With equal priors the two class densities sit at
//! `+-delta/2`, the discriminant is `delta * y` and
//!
//! * `gamma = int q f`
//! * `gamma d0 = int tau1 tau2 q f`
//! * `b0 = int 4 xi1^2 delta^2 y^2 q (1 - q) f`
//!
//! where `f` is the two-component mixture density and `q` the missing-label
//! probability.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{grad_loglik_full, grad_loglik_ignore, pack_full, theta_param_len, unpack_full};
use crate::model::{canonicalize, mahalanobis_sq, Class, FullParams, MissingnessParams, PartialSample};
use crate::quadrature::{integrate, QuadOptions};
use crate::simulate::RowSampler;
use crate::special::{expit, norm_pdf};

/// Largest accepted quadrature error estimate.
pub const QUAD_ERROR_LIMIT: f64 = 1e-9;
/// Half-width of the integration range beyond the class means.
pub const TAIL_WIDTH: f64 = 10.0;
/// The missingness terms can be sharply peaked near the boundary, so the
/// range starts cut into pieces no wider than about a quarter unit.
const INITIAL_INTERVALS: usize = 96;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ARESpec {
    pub delta: f64,
    pub xi: MissingnessParams,
    pub pi1: f64,
}

impl ARESpec {
    pub fn new(delta: f64, xi: MissingnessParams, pi1: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
        }
        if !(pi1 > 0.0 && pi1 < 1.0) {
            return Err(Error::InvalidProbability(format!("pi1 = {pi1}")));
        }
        let xi = MissingnessParams::new(xi.xi0, xi.xi1)?;
        Ok(Self { delta, xi, pi1 })
    }

    /// Equal priors.
    pub fn balanced(delta: f64, xi0: f64, xi1: f64) -> Result<Self> {
        Self::new(delta, MissingnessParams::new(xi0, xi1)?, 0.5)
    }

    fn require_equal_priors(&self) -> Result<()> {
        if self.pi1 != 0.5 {
            return Err(Error::InvalidParameter(format!(
                "efficiency formulas need equal priors, got pi1 = {}",
                self.pi1
            )));
        }
        Ok(())
    }

    fn density(&self, y: f64) -> f64 {
        let h = 0.5 * self.delta;
        self.pi1 * norm_pdf(y - h) + (1.0 - self.pi1) * norm_pdf(y + h)
    }

    fn log_prior_odds(&self) -> f64 {
        (self.pi1 / (1.0 - self.pi1)).ln()
    }

    fn missing_prob(&self, y: f64) -> f64 {
        let d = self.delta * y + self.log_prior_odds();
        self.xi.prob_from_discriminant(d)
    }

    fn integrate(&self, f: impl Fn(f64) -> f64) -> Result<(f64, f64)> {
        let l = 0.5 * self.delta + TAIL_WIDTH;
        let opts = QuadOptions {
            initial_intervals: INITIAL_INTERVALS,
            ..QuadOptions::default()
        };
        let r = integrate(f, -l, l, opts)?;
        if !(r.abs_error <= QUAD_ERROR_LIMIT) {
            return Err(Error::Quadrature {
                error_estimate: r.abs_error,
                tolerance: QUAD_ERROR_LIMIT,
            });
        }
        Ok((r.value, r.abs_error))
    }

    fn gamma_with_error(&self) -> Result<(f64, f64)> {
        self.integrate(|y| self.missing_prob(y) * self.density(y))
    }

    /// `gamma * d0`, computed as one integral so it stays well defined when
    /// `gamma` underflows.
    fn gamma_d0_with_error(&self) -> Result<(f64, f64)> {
        self.require_equal_priors()?;
        let delta = self.delta;
        self.integrate(|y| {
            let t = delta * y;
            expit(t) * expit(-t) * self.missing_prob(y) * self.density(y)
        })
    }

    fn b0_with_error(&self) -> Result<(f64, f64)> {
        self.require_equal_priors()?;
        if self.xi.xi1 == 0.0 {
            return Ok((0.0, 0.0));
        }
        let c = 4.0 * self.xi.xi1 * self.xi.xi1 * self.delta * self.delta;
        self.integrate(|y| {
            let q = self.missing_prob(y);
            c * y * y * q * (1.0 - q) * self.density(y)
        })
    }

    /// `4 (1 + delta^2 / 4)`.
    fn scale(&self) -> f64 {
        4.0 * (1.0 + 0.25 * self.delta * self.delta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AREReport {
    pub gamma: f64,
    pub d0: f64,
    pub b0: f64,
    pub u0: f64,
    pub are_full: f64,
    pub are_ignore: f64,
    pub are_ratio: f64,
    pub quadrature_error_estimate: f64,
}

/// Expected fraction of unclassified rows.
pub fn gamma_expected_missing(spec: &ARESpec) -> Result<f64> {
    Ok(spec.gamma_with_error()?.0)
}

/// The integrals `(b0, d0)`.
pub fn integrals_b0_d0(spec: &ARESpec) -> Result<(f64, f64)> {
    let gamma = gamma_expected_missing(spec)?;
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter("no missing labels expected; d0 undefined".into()));
    }
    let (b0, _) = spec.b0_with_error()?;
    let (gd0, _) = spec.gamma_d0_with_error()?;
    Ok((b0, gd0 / gamma))
}

/// All efficiency quantities for one setting.
pub fn are_report(spec: &ARESpec) -> Result<AREReport> {
    spec.require_equal_priors()?;
    let (gamma, e1) = spec.gamma_with_error()?;
    let (gd0, e2) = spec.gamma_d0_with_error()?;
    let (b0, e3) = spec.b0_with_error()?;
    let c = spec.scale();
    let ignore_term = 1.0 / c - gd0;
    let u0 = ignore_term + b0;
    let are_full = c * u0;
    let are_ignore = c * ignore_term;
    let are_ratio = if are_full == 0.0 { f64::NAN } else { are_ignore / are_full };
    Ok(AREReport {
        gamma,
        d0: if gamma > 0.0 { gd0 / gamma } else { 0.0 },
        b0,
        u0,
        are_full,
        are_ignore,
        are_ratio,
        quadrature_error_estimate: e1 + e2 + e3,
    })
}

/// Efficiency of the full-likelihood rule relative to the fully classified
/// rule.
pub fn are_full(spec: &ARESpec) -> Result<f64> {
    spec.require_equal_priors()?;
    let (gd0, _) = spec.gamma_d0_with_error()?;
    let (b0, _) = spec.b0_with_error()?;
    let c = spec.scale();
    Ok(c * (1.0 / c - gd0 + b0))
}

/// Efficiency of the ignore-mechanism rule relative to the fully classified
/// rule.
pub fn are_ignore(spec: &ARESpec) -> Result<f64> {
    spec.require_equal_priors()?;
    let (gd0, _) = spec.gamma_d0_with_error()?;
    let c = spec.scale();
    Ok(c * (1.0 / c - gd0))
}

/// Efficiency of the ignore-mechanism rule relative to the full rule.
pub fn are_ratio(spec: &ARESpec) -> Result<f64> {
    let r = are_report(spec)?;
    if r.are_full == 0.0 {
        return Err(Error::InvalidParameter("full efficiency is zero".into()));
    }
    Ok(r.are_ratio)
}

/// Expected missing fraction for arbitrary parameters, via the canonical
/// form.
pub fn expected_missing(psi: &FullParams) -> Result<f64> {
    let canon = canonicalize(&psi.theta);
    let delta = mahalanobis_sq(&canon).sqrt();
    gamma_expected_missing(&ARESpec::new(delta, psi.xi, canon.pi1())?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AreTable {
    /// Ignore-mechanism efficiency with every label missing completely at
    /// random, equal priors, `delta = 1..4`.
    Table1,
    /// Full-likelihood efficiency over the missingness grid.
    Table2,
    /// Ignore relative to full over the missingness grid.
    Table3,
}

/// Missingness setting standing in for "every label missing at random":
/// `expit(40)` differs from 1 by about 4e-18.
pub const MCAR_ALL_MISSING_XI0: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreCell {
    pub xi0: f64,
    pub delta: f64,
    pub xi1: f64,
    pub value: Option<f64>,
    pub quadrature_error_estimate: Option<f64>,
    pub error: Option<String>,
}

fn table_settings(which: AreTable) -> Vec<(f64, f64, f64)> {
    match which {
        AreTable::Table1 => (1..=4).map(|d| (MCAR_ALL_MISSING_XI0, d as f64, 0.0)).collect(),
        AreTable::Table2 | AreTable::Table3 => crate::simulate::grid_cells(),
    }
}

/// Recomputes one of the efficiency tables, cell by cell.
pub fn table_report(which: AreTable) -> Vec<AreCell> {
    table_settings(which)
        .into_par_iter()
        .map(|(xi0, delta, xi1)| {
            let outcome = ARESpec::balanced(delta, xi0, xi1).and_then(|s| are_report(&s));
            match outcome {
                Ok(r) => AreCell {
                    xi0,
                    delta,
                    xi1,
                    value: Some(match which {
                        AreTable::Table1 => r.are_ignore,
                        AreTable::Table2 => r.are_full,
                        AreTable::Table3 => r.are_ratio,
                    }),
                    quadrature_error_estimate: Some(r.quadrature_error_estimate),
                    error: None,
                },
                Err(e) => AreCell {
                    xi0,
                    delta,
                    xi1,
                    value: None,
                    quadrature_error_estimate: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

/// Which per-observation log-likelihood the information refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfoKind {
    /// Labels always observed.
    Complete,
    /// Partially classified, mechanism ignored.
    Ignore,
    /// Partially classified plus the missing-label indicators.
    Full,
    /// Class label given the features, over rows whose label is missing.
    LabelsGivenFeatures,
    /// Missing-label indicators alone.
    Missingness,
}

impl InfoKind {
    fn stream(self) -> u64 {
        match self {
            InfoKind::Complete => 0,
            InfoKind::Ignore => 1,
            InfoKind::Full => 2,
            InfoKind::LabelsGivenFeatures => 3,
            InfoKind::Missingness => 4,
        }
    }
}

pub const MIN_MC_DRAWS: usize = 10_000;
pub const MC_BATCHES: usize = 100;
const FD_STEP: f64 = 1e-5;
const MAX_REJECTION_FACTOR: usize = 10_000;

/// Monte Carlo information estimate with entrywise standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct McInformation {
    pub kind: InfoKind,
    /// Expected per-observation negative Hessian in the packed `theta`
    /// coordinates (means, log-Cholesky factor, logit prior).
    pub matrix: DMatrix<f64>,
    pub se: DMatrix<f64>,
    pub n_mc: usize,
}

fn draw_batch(sampler: &mut RowSampler, p: usize, size: usize, kind: InfoKind) -> Result<(Vec<f64>, Vec<Class>, Vec<bool>)> {
    let mut data = Vec::with_capacity(size * p);
    let mut classes = Vec::with_capacity(size);
    let mut missing = Vec::with_capacity(size);
    let mut attempts = 0usize;
    while classes.len() < size {
        attempts += 1;
        if attempts > MAX_REJECTION_FACTOR * size {
            return Err(Error::InvalidParameter(
                "missing labels too rare to sample the conditional information".into(),
            ));
        }
        let (class, m) = sampler.next_row(&mut data);
        if kind == InfoKind::LabelsGivenFeatures && !m {
            data.truncate(data.len() - p);
            continue;
        }
        classes.push(class);
        missing.push(m);
    }
    Ok((data, classes, missing))
}

/// Batch log-likelihood gradient in the `theta` block for the chosen kind.
fn batch_gradient(
    kind: InfoKind,
    labelled: &PartialSample,
    partial: &PartialSample,
    psi: &FullParams,
) -> Result<Vec<f64>> {
    let k = theta_param_len(psi.theta.dim());
    let sub = |a: Vec<f64>, b: Vec<f64>| a.iter().zip(&b).map(|(x, y)| x - y).collect::<Vec<_>>();
    Ok(match kind {
        InfoKind::Complete => grad_loglik_ignore(labelled, &psi.theta)?,
        InfoKind::Ignore => grad_loglik_ignore(partial, &psi.theta)?,
        InfoKind::Full => grad_loglik_full(partial, psi)?[..k].to_vec(),
        InfoKind::Missingness => sub(
            grad_loglik_full(partial, psi)?[..k].to_vec(),
            grad_loglik_ignore(partial, &psi.theta)?,
        ),
        InfoKind::LabelsGivenFeatures => sub(
            grad_loglik_ignore(labelled, &psi.theta)?,
            grad_loglik_ignore(partial, &psi.theta)?,
        ),
    })
}

/// Monte Carlo estimate of the expected per-observation information of
/// the chosen log-likelihood at `psi`.
///
/// The draws are split into batches; each batch mean Hessian comes from
/// central differences of the analytic batch gradient and the standard
/// errors from the spread of the batch means. Each kind draws from its own
/// stream of `seed`.
pub fn mc_information(kind: InfoKind, psi: &FullParams, n_mc: usize, seed: u64) -> Result<McInformation> {
    if n_mc < MIN_MC_DRAWS {
        return Err(Error::InvalidParameter(format!(
            "n_mc must be at least {MIN_MC_DRAWS}, got {n_mc}"
        )));
    }
    let p = psi.theta.dim();
    let k = theta_param_len(p);
    let x0 = pack_full(psi);
    let mut sampler = RowSampler::new(psi, seed, kind.stream())?;
    let batch = n_mc / MC_BATCHES;
    let mut means = Vec::with_capacity(MC_BATCHES);
    for _ in 0..MC_BATCHES {
        let (data, classes, missing) = draw_batch(&mut sampler, p, batch, kind)?;
        let labelled = PartialSample::from_flat(p, data.clone(), classes.iter().map(|c| Some(*c)).collect());
        let partial_labels = match kind {
            InfoKind::LabelsGivenFeatures => vec![None; batch],
            _ => classes.iter().zip(&missing).map(|(c, m)| (!m).then_some(*c)).collect(),
        };
        let partial = PartialSample::from_flat(p, data, partial_labels);
        let mut h = DMatrix::<f64>::zeros(k, k);
        for j in 0..k {
            let mut xp = x0.clone();
            let mut xm = x0.clone();
            xp[j] += FD_STEP;
            xm[j] -= FD_STEP;
            let gp = batch_gradient(kind, &labelled, &partial, &unpack_full(&xp, p)?)?;
            let gm = batch_gradient(kind, &labelled, &partial, &unpack_full(&xm, p)?)?;
            for i in 0..k {
                h[(i, j)] = -(gp[i] - gm[i]) / (2.0 * FD_STEP * batch as f64);
            }
        }
        means.push(0.5 * (&h + h.transpose()));
    }
    let kb = MC_BATCHES as f64;
    let matrix = means.iter().fold(DMatrix::zeros(k, k), |acc, m| acc + m) / kb;
    let var = means
        .iter()
        .fold(DMatrix::zeros(k, k), |acc: DMatrix<f64>, m| {
            acc + (m - &matrix).map(|v| v * v)
        })
        / (kb - 1.0);
    let se = var.map(|v| (v / kb).sqrt());
    Ok(McInformation { kind, matrix, se, n_mc: batch * MC_BATCHES })
}

/// Monte Carlo check of the two information decompositions:
///
/// * ignore = complete - gamma * labels-given-features
/// * full = complete - gamma * labels-given-features + missingness
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionCheck {
    pub gamma: f64,
    pub residual_ignore: DMatrix<f64>,
    pub se_ignore: DMatrix<f64>,
    pub residual_full: DMatrix<f64>,
    pub se_full: DMatrix<f64>,
}

/// Largest `|residual| / se` over the entries; entries whose residual is
/// below `1e-9` in absolute value count as zero.
pub fn max_abs_z(residual: &DMatrix<f64>, se: &DMatrix<f64>) -> f64 {
    residual
        .iter()
        .zip(se.iter())
        .map(|(r, s)| if r.abs() < 1e-9 { 0.0 } else { r.abs() / s })
        .fold(0.0, f64::max)
}

impl DecompositionCheck {
    pub fn max_z_ignore(&self) -> f64 {
        max_abs_z(&self.residual_ignore, &self.se_ignore)
    }

    pub fn max_z_full(&self) -> f64 {
        max_abs_z(&self.residual_full, &self.se_full)
    }
}

pub fn mc_decomposition(psi: &FullParams, n_mc: usize, seed: u64) -> Result<DecompositionCheck> {
    let gamma = expected_missing(psi)?;
    let k = theta_param_len(psi.theta.dim());
    let complete = mc_information(InfoKind::Complete, psi, n_mc, seed)?;
    let ignore = mc_information(InfoKind::Ignore, psi, n_mc, seed)?;
    let full = mc_information(InfoKind::Full, psi, n_mc, seed)?;
    let missingness = mc_information(InfoKind::Missingness, psi, n_mc, seed)?;
    let (clr, clr_se) = if gamma > 1e-12 {
        let c = mc_information(InfoKind::LabelsGivenFeatures, psi, n_mc, seed)?;
        (c.matrix, c.se)
    } else {
        (DMatrix::zeros(k, k), DMatrix::zeros(k, k))
    };
    let sq = |m: &DMatrix<f64>| m.map(|v| v * v);
    let lost = &clr * gamma;
    let residual_ignore = &ignore.matrix - &complete.matrix + &lost;
    let se_ignore = (sq(&ignore.se) + sq(&complete.se) + sq(&clr_se) * (gamma * gamma)).map(f64::sqrt);
    let residual_full = &full.matrix - &complete.matrix + &lost - &missingness.matrix;
    let se_full = (sq(&full.se) + sq(&complete.se) + sq(&clr_se) * (gamma * gamma) + sq(&missingness.se))
        .map(f64::sqrt);
    Ok(DecompositionCheck {
        gamma,
        residual_ignore,
        se_ignore,
        residual_full,
        se_full,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GaussianPairModel;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn spec(delta: f64, xi0: f64, xi1: f64) -> ARESpec {
        ARESpec::balanced(delta, xi0, xi1).unwrap()
    }

    #[test]
    fn gamma_examples() {
        assert_abs_diff_eq!(gamma_expected_missing(&spec(2.0, 0.7, 0.0)).unwrap(), expit(0.7), epsilon = 1e-12);
        assert!(gamma_expected_missing(&spec(2.0, -40.0, -0.5)).unwrap() < 1e-15);
        let g = gamma_expected_missing(&spec(2.0, 1.5, -1.0)).unwrap();
        assert!(g > 0.0 && g < expit(1.5));
    }

    #[test]
    fn b0_d0_examples() {
        let (b0, _) = integrals_b0_d0(&spec(2.0, 1.0, 0.0)).unwrap();
        assert_eq!(b0, 0.0);
        // Every label missing at random: gamma d0 reduces to int tau1 tau2 f.
        let s = spec(2.0, MCAR_ALL_MISSING_XI0, 0.0);
        let (_, d0) = integrals_b0_d0(&s).unwrap();
        let g = gamma_expected_missing(&s).unwrap();
        let direct = integrate(
            |y: f64| expit(2.0 * y) * expit(-2.0 * y) * s.density(y),
            -11.0,
            11.0,
            QuadOptions::default(),
        )
        .unwrap()
        .value;
        assert_abs_diff_eq!(g * d0, direct, epsilon = 1e-12);
    }

    #[test]
    fn efficiency_examples() {
        assert_abs_diff_eq!(are_full(&spec(1.0, 1.5, -10.0)).unwrap(), 23.1, epsilon = 0.05);
        assert_abs_diff_eq!(are_full(&spec(3.0, 5.0, -0.1)).unwrap(), 1.9, epsilon = 0.05);
        assert_abs_diff_eq!(are_full(&spec(2.0, -40.0, -0.1)).unwrap(), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(are_ignore(&spec(2.0, MCAR_ALL_MISSING_XI0, 0.0)).unwrap(), 0.1008, epsilon = 5e-4);
        assert_abs_diff_eq!(are_ignore(&spec(2.0, -40.0, -1.0)).unwrap(), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(are_ratio(&spec(1.0, 1.5, -0.1)).unwrap(), 0.81, epsilon = 0.005);
        assert_abs_diff_eq!(are_ratio(&spec(2.0, 5.0, -10.0)).unwrap(), 0.02, epsilon = 0.005);
        assert_abs_diff_eq!(are_ratio(&spec(2.0, 1.0, 0.0)).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn unequal_priors_are_rejected() {
        let s = ARESpec::new(2.0, MissingnessParams::new(0.0, -1.0).unwrap(), 0.3).unwrap();
        assert!(gamma_expected_missing(&s).is_ok());
        assert!(matches!(are_full(&s), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn table_cells() {
        let t2 = table_report(AreTable::Table2);
        let cell = t2.iter().find(|c| c.xi0 == 3.0 && c.delta == 2.0 && c.xi1 == -5.0).unwrap();
        assert_abs_diff_eq!(cell.value.unwrap(), 14.8, epsilon = 0.05);
        let t3 = table_report(AreTable::Table3);
        let cell = t3.iter().find(|c| c.xi0 == 3.0 && c.delta == 3.0 && c.xi1 == -10.0).unwrap();
        assert_abs_diff_eq!(cell.value.unwrap(), 0.07, epsilon = 0.005);
        let t1 = table_report(AreTable::Table1);
        assert_abs_diff_eq!(t1[2].value.unwrap(), 0.3592, epsilon = 5e-4);
    }

    #[test]
    fn expected_missing_matches_canonical_spec() {
        let theta = GaussianPairModel::new(
            nalgebra::dvector![1.0, 2.0],
            nalgebra::dvector![-0.5, 0.0],
            nalgebra::dmatrix![2.0, 0.3; 0.3, 1.0],
            0.5,
        )
        .unwrap();
        let xi = MissingnessParams::new(1.0, -0.7).unwrap();
        let delta = mahalanobis_sq(&theta).sqrt();
        let a = expected_missing(&FullParams::new(theta, xi)).unwrap();
        let b = gamma_expected_missing(&ARESpec::new(delta, xi, 0.5).unwrap()).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn mc_information_needs_enough_draws() {
        let psi = FullParams::new(
            GaussianPairModel::canonical(2.0, 1, 0.5).unwrap(),
            MissingnessParams::new(0.0, -1.0).unwrap(),
        );
        assert!(mc_information(InfoKind::Ignore, &psi, 9_999, 1).is_err());
    }

    #[test]
    fn no_missingness_ignore_equals_complete() {
        let psi = FullParams::new(
            GaussianPairModel::canonical(2.0, 1, 0.5).unwrap(),
            MissingnessParams::new(-40.0, 0.0).unwrap(),
        );
        let ig = mc_information(InfoKind::Ignore, &psi, 20_000, 3).unwrap();
        let cc = mc_information(InfoKind::Complete, &psi, 20_000, 3).unwrap();
        let gap = (&ig.matrix - &cc.matrix).norm();
        let se = (ig.se.map(|v| v * v) + cc.se.map(|v| v * v)).sum().sqrt();
        assert!(gap < 3.0 * se, "gap {gap}, se {se}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn efficiency_identities(delta in 0.3f64..4.0, xi0 in -3.0f64..6.0, xi1 in -12.0f64..0.0) {
            let r = are_report(&spec(delta, xi0, xi1)).unwrap();
            prop_assert!((r.are_ratio * r.are_full - r.are_ignore).abs() < 1e-8);
            prop_assert!(r.are_ignore <= 1.0 + 1e-9);
            prop_assert!(r.b0 >= 0.0 && r.d0 >= 0.0);
            prop_assert!(r.gamma > 0.0 && r.gamma < 1.0);
        }

        #[test]
        fn more_missingness_less_efficiency(delta in 0.5f64..4.0, xi0 in -3.0f64..5.0, step in 0.1f64..2.0, xi1 in -10.0f64..0.0) {
            let a = are_ignore(&spec(delta, xi0, xi1)).unwrap();
            let b = are_ignore(&spec(delta, xi0 + step, xi1)).unwrap();
            prop_assert!(b <= a + 1e-12);
        }
    }
}
