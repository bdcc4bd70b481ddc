//! Does the chance that a label is missing depend on how uncertain the
//! class is? These diagnostics fit the two-component mixture, compute the
//! entropy of every row's class posterior, and compare labelled with
//! unlabelled rows on the negative log entropy scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{fit_ignore_em, initial_model, DEFAULT_EM_TOL, DEFAULT_MAX_ITER};
use crate::model::{posterior_from_log_joint, shannon_entropy, GaussianPairModel, PartialSample};
use crate::special::norm_pdf;

pub const ENTROPY_FLOOR: f64 = 1e-300;
pub const KDE_GRID: usize = 512;
pub const NW_GRID: usize = 100;
/// Denominators below this leave a regression point undefined.
pub const NW_MIN_WEIGHT: f64 = 1e-12;
/// Grid padding beyond the data, in bandwidths.
const KDE_PAD: f64 = 5.0;
/// Data quantiles bounding the interior of a regression curve, where the
/// kernel weights are not dominated by a handful of points.
const INTERIOR_QUANTILES: (f64, f64) = (0.1, 0.9);
/// Standard errors a change must exceed to count in the trend test.
const TREND_Z: f64 = 3.0;

/// Posterior entropy of every row under `theta`, labelled or not.
pub fn per_obs_entropy(sample: &PartialSample, theta: &GaussianPairModel) -> Result<Vec<f64>> {
    sample.check_dim(theta.dim())?;
    let eval = theta.evaluator();
    sample
        .rows()
        .map(|y| shannon_entropy(&posterior_from_log_joint(eval.log_joint(y))))
        .collect()
}

/// `-log(e)` with `e` floored so certain rows stay finite.
pub fn neg_log_entropy(entropy: &[f64]) -> Vec<f64> {
    entropy.iter().map(|e| -e.max(ENTROPY_FLOOR).ln()).collect()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_sd(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let pos = prob * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman's rule of thumb, `0.9 min(sd, IQR / 1.34) n^(-1/5)`.
pub fn silverman_bandwidth(x: &[f64]) -> f64 {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let sd = sample_sd(x);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (x.len() as f64).powf(-0.2)
}

/// Values of a function on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

/// Right-continuous step function through the sorted sample: at `x[i]` the
/// value jumps to `y[i]`, and it is 0 left of `x[0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl StepFunction {
    pub fn ecdf(data: &[f64]) -> Self {
        let mut sorted = data.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mut x: Vec<f64> = Vec::new();
        let mut y: Vec<f64> = Vec::new();
        for (i, v) in sorted.iter().enumerate() {
            let height = if i + 1 == sorted.len() { 1.0 } else { (i + 1) as f64 / n };
            if x.last() == Some(v) {
                *y.last_mut().expect("parallel to x") = height;
            } else {
                x.push(*v);
                y.push(height);
            }
        }
        Self { x, y }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self.x.partition_point(|v| *v <= t) {
            0 => 0.0,
            k => self.y[k - 1],
        }
    }
}

fn kde_on_grid(data: &[f64], h: f64, grid: &[f64]) -> Vec<f64> {
    let n = data.len() as f64;
    grid.iter()
        .map(|g| data.iter().map(|x| norm_pdf((g - x) / h)).sum::<f64>() / (n * h))
        .collect()
}

/// Trapezoid rule over an equispaced grid.
pub fn trapezoid(curve: &Curve) -> f64 {
    curve
        .grid
        .windows(2)
        .zip(curve.values.windows(2))
        .map(|(g, v)| 0.5 * (g[1] - g[0]) * (v[0] + v[1]))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionComparison {
    pub kde_labelled: Curve,
    pub kde_unlabelled: Curve,
    pub ecdf_labelled: StepFunction,
    pub ecdf_unlabelled: StepFunction,
    pub bandwidth_labelled: f64,
    pub bandwidth_unlabelled: f64,
    /// Largest gap between the two ECDFs.
    pub ks_statistic: f64,
    pub n_labelled: usize,
    pub n_unlabelled: usize,
}

fn check_group(name: &'static str, x: &[f64]) -> Result<()> {
    if x.len() < 2 {
        return Err(Error::Diagnostics {
            group: name,
            reason: format!("needs at least 2 observations, has {}", x.len()),
        });
    }
    if x.iter().all(|v| *v == x[0]) {
        return Err(Error::Diagnostics {
            group: name,
            reason: "all values are equal".into(),
        });
    }
    Ok(())
}

fn split_groups(x: &[f64], miss: &[u8]) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.len() != miss.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), found: miss.len() });
    }
    let mut labelled = Vec::new();
    let mut unlabelled = Vec::new();
    for (v, m) in x.iter().zip(miss) {
        match m {
            0 => labelled.push(*v),
            1 => unlabelled.push(*v),
            other => {
                return Err(Error::InvalidSample(format!("missing indicator must be 0 or 1, got {other}")))
            }
        }
    }
    Ok((labelled, unlabelled))
}

/// Largest vertical distance between two ECDFs.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let fa = StepFunction::ecdf(a);
    let fb = StepFunction::ecdf(b);
    fa.x.iter()
        .chain(&fb.x)
        .map(|t| (fa.eval(*t) - fb.eval(*t)).abs())
        .fold(0.0, f64::max)
}

/// KDEs on a shared grid and ECDFs of `x` for labelled (`miss = 0`) and
/// unlabelled (`miss = 1`) rows.
pub fn compare_distributions(x: &[f64], miss: &[u8], bandwidth: Option<f64>) -> Result<DistributionComparison> {
    let (labelled, unlabelled) = split_groups(x, miss)?;
    check_group("labelled", &labelled)?;
    check_group("unlabelled", &unlabelled)?;
    if let Some(h) = bandwidth {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {h}")));
        }
    }
    let h_lab = bandwidth.unwrap_or_else(|| silverman_bandwidth(&labelled));
    let h_unl = bandwidth.unwrap_or_else(|| silverman_bandwidth(&unlabelled));
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min) - KDE_PAD * h_lab.max(h_unl);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max) + KDE_PAD * h_lab.max(h_unl);
    let grid = linspace(lo, hi, KDE_GRID);
    Ok(DistributionComparison {
        kde_labelled: Curve { grid: grid.clone(), values: kde_on_grid(&labelled, h_lab, &grid) },
        kde_unlabelled: Curve { grid: grid.clone(), values: kde_on_grid(&unlabelled, h_unl, &grid) },
        ecdf_labelled: StepFunction::ecdf(&labelled),
        ecdf_unlabelled: StepFunction::ecdf(&unlabelled),
        bandwidth_labelled: h_lab,
        bandwidth_unlabelled: h_unl,
        ks_statistic: ks_statistic(&labelled, &unlabelled),
        n_labelled: labelled.len(),
        n_unlabelled: unlabelled.len(),
    })
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| if i + 1 == n { hi } else { lo + step * i as f64 }).collect()
}

/// Kernel regression curve with pointwise standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NwCurve {
    pub grid: Vec<f64>,
    /// `None` where the kernel weights vanish.
    pub values: Vec<Option<f64>>,
    pub se: Vec<Option<f64>>,
    pub bandwidth: f64,
    /// Interior range of the grid, between two data quantiles.
    pub interior: (f64, f64),
    /// Rank correlation of the interior values with the grid.
    pub spearman: Option<f64>,
    /// Over the interior the curve rises significantly from its first to its
    /// last point and never drops significantly below an earlier value.
    pub increasing: bool,
}

impl NwCurve {
    /// Defined `(grid, value, se)` triples inside the interior range.
    pub fn interior_points(&self) -> Vec<(f64, f64, f64)> {
        let (lo, hi) = self.interior;
        (0..self.grid.len())
            .filter(|i| self.grid[*i] >= lo && self.grid[*i] <= hi)
            .filter_map(|i| Some((self.grid[i], self.values[i]?, self.se[i]?)))
            .collect()
    }

    /// True when every interior point lies within `k` standard errors of
    /// `level`.
    pub fn flat_within(&self, level: f64, k: f64) -> bool {
        self.interior_points().iter().all(|(_, v, s)| (v - level).abs() <= k * s)
    }
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|a, b| x[*a].total_cmp(&x[*b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; `None` when either input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, my) = (mean(&rx), mean(&ry));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Gaussian-kernel Nadaraya-Watson estimate of `E[y | x]` on `grid` equally
/// spaced points across the range of `x`.
pub fn nadaraya_watson(x: &[f64], y: &[f64], bandwidth: Option<f64>, grid: usize) -> Result<NwCurve> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), found: y.len() });
    }
    if x.len() < 5 {
        return Err(Error::InvalidSample(format!("kernel regression needs n >= 5, got {}", x.len())));
    }
    if grid < 2 {
        return Err(Error::InvalidParameter("grid needs at least 2 points".into()));
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {h}"))),
        None => silverman_bandwidth(x),
    };
    if !(h > 0.0) {
        return Err(Error::InvalidSample("x is constant; no default bandwidth".into()));
    }
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let points = linspace(lo, hi, grid);
    let constant = y.iter().all(|v| *v == y[0]).then_some(y[0]);
    let mut values = Vec::with_capacity(grid);
    let mut se = Vec::with_capacity(grid);
    for g in &points {
        let (mut sw, mut swy, mut sw2) = (0.0, 0.0, 0.0);
        for (xj, yj) in x.iter().zip(y) {
            let w = norm_pdf((g - xj) / h);
            sw += w;
            swy += w * yj;
            sw2 += w * w;
        }
        if sw < NW_MIN_WEIGHT {
            values.push(None);
            se.push(None);
            continue;
        }
        let m = constant.unwrap_or((swy / sw).clamp(0.0, 1.0));
        values.push(Some(m));
        se.push(Some((m * (1.0 - m) * sw2).sqrt() / sw));
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let interior = (
        quantile_sorted(&sorted, INTERIOR_QUANTILES.0),
        quantile_sorted(&sorted, INTERIOR_QUANTILES.1),
    );
    let mut curve = NwCurve {
        grid: points,
        values,
        se,
        bandwidth: h,
        interior,
        spearman: None,
        increasing: false,
    };
    let inner = curve.interior_points();
    if inner.len() >= 3 {
        let gx: Vec<f64> = inner.iter().map(|t| t.0).collect();
        let gy: Vec<f64> = inner.iter().map(|t| t.1).collect();
        curve.spearman = spearman(&gx, &gy);
        curve.increasing = increasing_trend(&inner);
    }
    Ok(curve)
}

fn increasing_trend(points: &[(f64, f64, f64)]) -> bool {
    let gap = |a: &(f64, f64, f64), b: &(f64, f64, f64)| TREND_Z * (a.2 * a.2 + b.2 * b.2).sqrt();
    let (first, last) = (&points[0], &points[points.len() - 1]);
    if !(last.1 - first.1 > gap(first, last)) {
        return false;
    }
    // Compare each point with the highest point before it.
    let mut best = &points[0];
    for pt in &points[1..] {
        if best.1 - pt.1 > gap(best, pt) {
            return false;
        }
        if pt.1 > best.1 {
            best = pt;
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyDiagnostics {
    pub theta: GaussianPairModel,
    pub entropy: Vec<f64>,
    pub neg_log_entropy: Vec<f64>,
    pub miss: Vec<u8>,
    pub mean_entropy_labelled: f64,
    pub mean_entropy_unlabelled: f64,
    pub comparison: DistributionComparison,
    /// Probability that a row is labelled against its negative log entropy.
    pub nw_curve: NwCurve,
    /// Overall labelled fraction, the level of a flat curve.
    pub labelled_fraction: f64,
}

/// Fits the mixture, then compares labelled and unlabelled rows by their
/// posterior entropy.
pub fn diagnose(sample: &PartialSample) -> Result<EntropyDiagnostics> {
    let miss = sample.miss_indicators();
    let group_size = |flag: u8| miss.iter().filter(|m| **m == flag).count();
    for (flag, name) in [(0u8, "labelled"), (1u8, "unlabelled")] {
        if group_size(flag) < 2 {
            return Err(Error::Diagnostics {
                group: name,
                reason: format!("needs at least 2 observations, has {}", group_size(flag)),
            });
        }
    }
    let init = initial_model(sample)?;
    let fit = fit_ignore_em(sample, &init, DEFAULT_EM_TOL, DEFAULT_MAX_ITER)?;
    let entropy = per_obs_entropy(sample, &fit.theta)?;
    let nle = neg_log_entropy(&entropy);
    let comparison = compare_distributions(&nle, &miss, None)?;
    let labelled: Vec<f64> = miss.iter().map(|m| 1.0 - *m as f64).collect();
    let nw_curve = nadaraya_watson(&nle, &labelled, None, NW_GRID)?;
    let group_mean = |flag: u8| {
        let v: Vec<f64> = entropy.iter().zip(&miss).filter(|(_, m)| **m == flag).map(|(e, _)| *e).collect();
        mean(&v)
    };
    Ok(EntropyDiagnostics {
        theta: fit.theta,
        mean_entropy_labelled: group_mean(0),
        mean_entropy_unlabelled: group_mean(1),
        labelled_fraction: mean(&labelled),
        entropy,
        neg_log_entropy: nle,
        miss,
        comparison,
        nw_curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Class, FullParams, MissingnessParams};
    use crate::simulate::draw_partial_sample;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn canonical(delta: f64) -> GaussianPairModel {
        GaussianPairModel::canonical(delta, 2, 0.5).unwrap()
    }

    #[test]
    fn entropy_examples() {
        let theta = canonical(2.0);
        let s = PartialSample::new(vec![vec![1.0, 0.0], vec![1.0, -4.0]], vec![None, Some(Class::One)]).unwrap();
        let e = per_obs_entropy(&s, &theta).unwrap();
        assert_abs_diff_eq!(e[0], std::f64::consts::LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(e[1], std::f64::consts::LN_2, epsilon = 1e-15);
        // Ten units from the boundary when the means are three apart.
        let theta = canonical(3.0);
        let s = PartialSample::new(vec![vec![11.5, 0.0], vec![-8.5, 3.0]], vec![None, None]).unwrap();
        let e = per_obs_entropy(&s, &theta).unwrap();
        assert!(e[0] < 1e-8 && e[1] < 1e-8, "{e:?}");
        assert!(neg_log_entropy(&[0.0])[0].is_finite());
    }

    fn normals(n: usize, shift: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| shift + rng.sample::<f64, _>(StandardNormal)).collect()
    }

    #[test]
    fn identical_groups_pass_ks() {
        let mut x = normals(2000, 0.0, 1);
        x.extend(normals(2000, 0.0, 2));
        let miss: Vec<u8> = (0..4000).map(|i| (i >= 2000) as u8).collect();
        let c = compare_distributions(&x, &miss, None).unwrap();
        let n_eff = 2000.0 * 2000.0 / 4000.0;
        assert!(c.ks_statistic < 1.63 / f64::sqrt(n_eff));
        for kde in [&c.kde_labelled, &c.kde_unlabelled] {
            assert!(kde.values.iter().all(|v| *v >= 0.0));
            assert_abs_diff_eq!(trapezoid(kde), 1.0, epsilon = 1e-3);
        }
        for ecdf in [&c.ecdf_labelled, &c.ecdf_unlabelled] {
            assert_eq!(ecdf.eval(f64::NEG_INFINITY), 0.0);
            assert_eq!(*ecdf.y.last().unwrap(), 1.0);
            assert!(ecdf.y.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn shifted_group_is_dominated() {
        let mut x = normals(500, 0.0, 3);
        x.extend(normals(500, 1.0, 4));
        let miss: Vec<u8> = (0..1000).map(|i| (i >= 500) as u8).collect();
        let c = compare_distributions(&x, &miss, None).unwrap();
        for t in [-1.0, 0.0, 0.5, 1.0, 2.0] {
            assert!(c.ecdf_unlabelled.eval(t) <= c.ecdf_labelled.eval(t));
        }
    }

    #[test]
    fn group_errors_name_the_group() {
        let err = compare_distributions(&[1.0, 2.0, 3.0], &[0, 0, 0], None).unwrap_err();
        assert!(err.to_string().contains("unlabelled"));
        let err = compare_distributions(&[1.0, 1.0, 3.0, 4.0], &[0, 0, 1, 1], None).unwrap_err();
        assert!(err.to_string().contains("labelled"));
    }

    #[test]
    fn ecdf_handles_ties() {
        let f = StepFunction::ecdf(&[2.0, 1.0, 2.0, 3.0]);
        assert_eq!(f.x, vec![1.0, 2.0, 3.0]);
        assert_eq!(f.y, vec![0.25, 0.75, 1.0]);
        assert_eq!(f.eval(2.0), 0.75);
        assert_eq!(f.eval(1.999), 0.25);
    }

    #[test]
    fn nw_constant_and_flat_responses() {
        let x = normals(200, 0.0, 5);
        let ones = vec![1.0; 200];
        let c = nadaraya_watson(&x, &ones, None, 50).unwrap();
        assert!(c.values.iter().flatten().all(|v| *v == 1.0));
        let n = 10_000;
        let x = normals(n, 0.0, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let y: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() < 0.7) as u8 as f64).collect();
        let c = nadaraya_watson(&x, &y, None, 50).unwrap();
        for (_, v, _) in c.interior_points() {
            assert!((v - 0.7).abs() < 0.05, "{v}");
        }
        assert!(nadaraya_watson(&x[..4], &y[..4], None, 10).is_err());
    }

    #[test]
    fn nw_marks_empty_regions_undefined() {
        let x = [0.0, 0.1, 0.2, 0.3, 100.0];
        let y = [1.0, 0.0, 1.0, 0.0, 1.0];
        let c = nadaraya_watson(&x, &y, Some(0.1), 11).unwrap();
        assert!(c.values[5].is_none());
        assert!(c.values[0].is_some() && c.values[10].is_some());
    }

    #[test]
    fn spearman_examples() {
        assert_abs_diff_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0, epsilon = 1e-15);
        assert!(spearman(&[1.0, 2.0], &[1.0, 1.0]).is_none());
    }

    #[test]
    fn pipeline_on_generated_data() {
        let psi = FullParams::new(
            GaussianPairModel::canonical(2.0, 1, 0.5).unwrap(),
            MissingnessParams::new(1.5, -5.0).unwrap(),
        );
        let sample = draw_partial_sample(3000, &psi, 11, 0).unwrap();
        let d = diagnose(&sample).unwrap();
        assert!(d.mean_entropy_unlabelled > d.mean_entropy_labelled);
        assert!(d.nw_curve.increasing);
        assert!(d.nw_curve.values.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(diagnose(&sample).unwrap(), d);
    }

    #[test]
    fn fully_labelled_input_is_rejected() {
        let psi = FullParams::new(
            GaussianPairModel::canonical(2.0, 1, 0.5).unwrap(),
            MissingnessParams::new(-40.0, 0.0).unwrap(),
        );
        let sample = draw_partial_sample(100, &psi, 1, 0).unwrap();
        let err = diagnose(&sample).unwrap_err();
        assert!(matches!(err, Error::Diagnostics { group: "unlabelled", .. }));
    }
}
