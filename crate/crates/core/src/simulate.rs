//! Seeded generation of partially classified samples and the Monte Carlo
//! relative efficiency of the ignore-mechanism rule against the full rule.
//!
//! Every replication draws from its own ChaCha8 stream, selected by the
//! replication index, so results do not depend on thread count or on the
//! order in which replications finish.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::fit_ignore_then_full;
use crate::model::{
    bayes_coefficients, Class, DiscriminantCoeffs, FullParams, GaussianPairModel,
    MissingnessParams, PartialSample,
};
use crate::risk::excess_error;

/// Identifies the generator in reports.
pub const RNG_ID: &str = "ChaCha8Rng/rand_chacha-0.9/seed_from_u64+set_stream";

/// Stream reserved for bootstrap resampling.
pub const BOOTSTRAP_STREAM: u64 = u64::MAX;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Row-by-row generator: the class from the prior, the features from that
/// class's normal, then the missing indicator from the logistic model.
pub(crate) struct RowSampler<'a> {
    psi: &'a FullParams,
    chol: DMatrix<f64>,
    beta: DiscriminantCoeffs,
    rng: ChaCha8Rng,
    e: Vec<f64>,
}

impl<'a> RowSampler<'a> {
    pub(crate) fn new(psi: &'a FullParams, seed: u64, stream: u64) -> Result<Self> {
        let chol = psi
            .theta
            .sigma()
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidParameter("covariance has no Cholesky factor".into()))?
            .l();
        Ok(Self {
            psi,
            chol,
            beta: bayes_coefficients(&psi.theta),
            rng: stream_rng(seed, stream),
            e: vec![0.0; psi.theta.dim()],
        })
    }

    /// Appends one feature row to `out` and returns its class and whether
    /// its label is missing.
    pub(crate) fn next_row(&mut self, out: &mut Vec<f64>) -> (Class, bool) {
        let theta = &self.psi.theta;
        let class = if self.rng.random::<f64>() < theta.pi1() { Class::One } else { Class::Two };
        for v in self.e.iter_mut() {
            *v = self.rng.sample(StandardNormal);
        }
        let mu = theta.mu(class);
        let start = out.len();
        for a in 0..self.e.len() {
            let mut v = mu[a];
            for b in 0..=a {
                v += self.chol[(a, b)] * self.e[b];
            }
            out.push(v);
        }
        let q = self.psi.xi.prob_from_discriminant(self.beta.eval_unchecked(&out[start..]));
        (class, self.rng.random::<f64>() < q)
    }
}

/// Draws `n` rows from `psi` on stream `stream` of generator `seed`.
pub fn draw_partial_sample(n: usize, psi: &FullParams, seed: u64, stream: u64) -> Result<PartialSample> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample size must be positive".into()));
    }
    let p = psi.theta.dim();
    let mut sampler = RowSampler::new(psi, seed, stream)?;
    let mut data = Vec::with_capacity(n * p);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let (class, missing) = sampler.next_row(&mut data);
        labels.push(if missing { None } else { Some(class) });
    }
    Ok(PartialSample::from_flat(p, data, labels))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub delta: f64,
    pub pi1: f64,
    pub xi: MissingnessParams,
    pub reps: usize,
    pub seed: u64,
    pub bootstrap_reps: usize,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::InvalidParameter(format!("n must be at least 10, got {}", self.n)));
        }
        if self.p == 0 {
            return Err(Error::InvalidParameter("p must be at least 1".into()));
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::InvalidParameter(format!("delta must be positive, got {}", self.delta)));
        }
        if !(self.pi1 > 0.0 && self.pi1 < 1.0) {
            return Err(Error::InvalidProbability(format!("pi1 = {}", self.pi1)));
        }
        if self.reps < 2 {
            return Err(Error::InvalidParameter(format!("reps must be at least 2, got {}", self.reps)));
        }
        if self.bootstrap_reps < 100 {
            return Err(Error::InvalidParameter(format!(
                "bootstrap_reps must be at least 100, got {}",
                self.bootstrap_reps
            )));
        }
        MissingnessParams::new(self.xi.xi0, self.xi.xi1)?;
        Ok(())
    }

    /// The generating parameters in canonical form.
    pub fn full_params(&self) -> Result<FullParams> {
        Ok(FullParams::new(
            GaussianPairModel::canonical(self.delta, self.p, self.pi1)?,
            self.xi,
        ))
    }
}

/// Sample for replication `rep_index`.
pub fn gen_partial_sample(cfg: &SimConfig, rep_index: u64) -> Result<PartialSample> {
    cfg.validate()?;
    draw_partial_sample(cfg.n, &cfg.full_params()?, cfg.seed, rep_index)
}

/// Discriminant estimates `(full, ignore)` for one sample.
pub type RuleEstimator = dyn Fn(&PartialSample, &FullParams) -> Result<(DiscriminantCoeffs, DiscriminantCoeffs)> + Sync;

/// Ignore-mechanism EM followed by the full-likelihood fit.
pub fn default_estimator(sample: &PartialSample, _truth: &FullParams) -> Result<(DiscriminantCoeffs, DiscriminantCoeffs)> {
    let (ig, full) = fit_ignore_then_full(sample)?;
    if !full.converged {
        return Err(Error::DegenerateFit(format!(
            "full fit did not converge in {} iterations",
            full.iterations
        )));
    }
    Ok((full.beta(), ig.beta()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    /// Mean full excess over mean ignore excess; `None` when the latter is 0.
    pub re_hat: Option<f64>,
    pub bootstrap_se: Option<f64>,
    pub mean_excess_full: f64,
    pub mean_excess_ignore: f64,
    pub successes: usize,
    pub failures: usize,
    /// First few failure messages, in replication order.
    pub failure_examples: Vec<String>,
    pub degenerate: bool,
    pub rng: String,
}

const FAILURE_EXAMPLES: usize = 5;

/// Monte Carlo relative efficiency with the default estimators.
pub fn simulate_re(cfg: &SimConfig) -> Result<SimReport> {
    simulate_re_with(cfg, &default_estimator)
}

/// Monte Carlo relative efficiency with a caller-supplied estimator pair.
///
/// Replications whose fits fail are excluded and counted. The bootstrap
/// resamples the paired excess errors of the successful replications.
pub fn simulate_re_with(cfg: &SimConfig, estimator: &RuleEstimator) -> Result<SimReport> {
    cfg.validate()?;
    let psi = cfg.full_params()?;
    let outcomes: Vec<Result<(f64, f64)>> = (0..cfg.reps as u64)
        .into_par_iter()
        .map(|rep| {
            let sample = draw_partial_sample(cfg.n, &psi, cfg.seed, rep)?;
            let (full, ig) = estimator(&sample, &psi)?;
            Ok((excess_error(&full, &psi.theta), excess_error(&ig, &psi.theta)))
        })
        .collect();
    let mut pairs = Vec::with_capacity(cfg.reps);
    let mut failure_examples = Vec::new();
    for (rep, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(pair) => pairs.push(pair),
            Err(e) if failure_examples.len() < FAILURE_EXAMPLES => {
                failure_examples.push(format!("replication {rep}: {e}"))
            }
            Err(_) => {}
        }
    }
    if pairs.is_empty() {
        return Err(Error::AllReplicationsFailed { reps: cfg.reps });
    }
    let failures = cfg.reps - pairs.len();
    let (mean_full, mean_ignore) = mean_pair(pairs.iter());
    let degenerate = mean_ignore == 0.0;
    let re_hat = (!degenerate).then(|| mean_full / mean_ignore);
    let bootstrap_se = if degenerate {
        None
    } else {
        bootstrap_ratio_se(&pairs, cfg.bootstrap_reps, cfg.seed)
    };
    Ok(SimReport {
        config: cfg.clone(),
        re_hat,
        bootstrap_se,
        mean_excess_full: mean_full,
        mean_excess_ignore: mean_ignore,
        successes: pairs.len(),
        failures,
        failure_examples,
        degenerate,
        rng: RNG_ID.to_string(),
    })
}

fn mean_pair<'a>(pairs: impl Iterator<Item = &'a (f64, f64)>) -> (f64, f64) {
    let (mut a, mut b, mut k) = (0.0, 0.0, 0usize);
    for (x, y) in pairs {
        a += x;
        b += y;
        k += 1;
    }
    (a / k as f64, b / k as f64)
}

/// Standard deviation of the ratio of means over bootstrap resamples of the
/// pairs. Resamples with a zero denominator are skipped.
fn bootstrap_ratio_se(pairs: &[(f64, f64)], reps: usize, seed: u64) -> Option<f64> {
    let mut rng = stream_rng(seed, BOOTSTRAP_STREAM);
    let m = pairs.len();
    let mut ratios = Vec::with_capacity(reps);
    for _ in 0..reps {
        let (mut a, mut b) = (0.0, 0.0);
        for _ in 0..m {
            let (x, y) = pairs[rng.random_range(0..m)];
            a += x;
            b += y;
        }
        if b > 0.0 {
            ratios.push(a / b);
        }
    }
    if ratios.len() < 2 {
        return None;
    }
    let k = ratios.len() as f64;
    let mean = ratios.iter().sum::<f64>() / k;
    Some((ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimTable {
    /// n = 500.
    Table4,
    /// n = 100.
    Table5,
}

impl SimTable {
    pub fn sample_size(self) -> usize {
        match self {
            SimTable::Table4 => 500,
            SimTable::Table5 => 100,
        }
    }
}

pub const GRID_XI0: [f64; 3] = [1.5, 3.0, 5.0];
pub const GRID_DELTA: [f64; 3] = [1.0, 2.0, 3.0];
pub const GRID_XI1: [f64; 5] = [-0.1, -0.5, -1.0, -5.0, -10.0];
pub const TABLE_REPS: usize = 1000;
pub const TABLE_BOOTSTRAP_REPS: usize = 1000;

/// One grid cell: either a report or the error that stopped it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCell {
    pub xi0: f64,
    pub delta: f64,
    pub xi1: f64,
    pub report: Option<SimReport>,
    pub error: Option<String>,
}

/// The `(xi0, delta, xi1)` grid in row-major table order.
pub fn grid_cells() -> Vec<(f64, f64, f64)> {
    let mut out = Vec::with_capacity(45);
    for xi0 in GRID_XI0 {
        for delta in GRID_DELTA {
            for xi1 in GRID_XI1 {
                out.push((xi0, delta, xi1));
            }
        }
    }
    out
}

/// Seed for cell `index` derived from a run seed, so cells use unrelated
/// streams.
pub fn cell_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 finaliser
    let mut z = seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs the given cells at sample size `n` with `reps` replications each.
pub fn simulate_cells(
    n: usize,
    cells: &[(f64, f64, f64)],
    reps: usize,
    bootstrap_reps: usize,
    seed: u64,
) -> Vec<SimCell> {
    cells
        .iter()
        .enumerate()
        .map(|(i, &(xi0, delta, xi1))| {
            let outcome = MissingnessParams::new(xi0, xi1).and_then(|xi| {
                simulate_re(&SimConfig {
                    n,
                    p: 1,
                    delta,
                    pi1: 0.5,
                    xi,
                    reps,
                    seed: cell_seed(seed, i),
                    bootstrap_reps,
                })
            });
            let (report, error) = match outcome {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            SimCell { xi0, delta, xi1, report, error }
        })
        .collect()
}

/// Full 45-cell sweep for one of the simulated tables.
pub fn simulate_tables(which: SimTable, seed: u64) -> Vec<SimCell> {
    simulate_cells(which.sample_size(), &grid_cells(), TABLE_REPS, TABLE_BOOTSTRAP_REPS, seed)
}
