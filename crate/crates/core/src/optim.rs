//! BFGS minimisation with a strong-Wolfe line search.
//!
//! Objective evaluations that fail (for example parameters whose covariance
//! is not positive definite) are treated as `+inf` so the line search backs
//! off instead of aborting.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    /// Convergence when the largest gradient component falls below this.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Inverse-Hessian resets allowed after failed line searches.
    pub max_restarts: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-6,
            max_iter: 500,
            max_restarts: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value at the start and after every accepted step.
    pub trace: Vec<f64>,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_LS_STEPS: usize = 40;

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone)]
struct Trial {
    alpha: f64,
    f: f64,
    slope: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

struct LineSearch<'a, F> {
    obj: &'a mut F,
    x0: &'a [f64],
    dir: &'a [f64],
    f0: f64,
    slope0: f64,
}

impl<F> LineSearch<'_, F>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn eval(&mut self, alpha: f64) -> Trial {
        let x: Vec<f64> = self
            .x0
            .iter()
            .zip(self.dir)
            .map(|(a, d)| a + alpha * d)
            .collect();
        match (self.obj)(&x) {
            Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => {
                let slope = dot(&g, self.dir);
                Trial { alpha, f, slope, x, g }
            }
            _ => Trial {
                alpha,
                f: f64::INFINITY,
                slope: f64::NAN,
                x,
                g: Vec::new(),
            },
        }
    }

    fn armijo_fails(&self, t: &Trial) -> bool {
        !(t.f <= self.f0 + C1 * t.alpha * self.slope0)
    }

    fn curvature_holds(&self, t: &Trial) -> bool {
        t.slope.abs() <= -C2 * self.slope0
    }

    fn search(&mut self, alpha_init: f64) -> Option<Trial> {
        let mut prev = Trial {
            alpha: 0.0,
            f: self.f0,
            slope: self.slope0,
            x: self.x0.to_vec(),
            g: Vec::new(),
        };
        let mut alpha = alpha_init;
        for i in 0..MAX_LS_STEPS {
            let t = self.eval(alpha);
            if self.armijo_fails(&t) || (i > 0 && t.f >= prev.f) {
                return self.zoom(prev, t);
            }
            if self.curvature_holds(&t) {
                return Some(t);
            }
            if t.slope >= 0.0 {
                return self.zoom(t, prev);
            }
            prev = t;
            alpha *= 2.0;
        }
        None
    }

    fn zoom(&mut self, mut lo: Trial, mut hi: Trial) -> Option<Trial> {
        for _ in 0..MAX_LS_STEPS {
            let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
            let width = b - a;
            let mut alpha = if hi.f.is_finite() && lo.slope.is_finite() && hi.slope.is_finite() {
                cubic_minimizer(&lo, &hi).unwrap_or(0.5 * (a + b))
            } else {
                0.5 * (lo.alpha + hi.alpha)
            };
            if !(alpha > a + 0.1 * width && alpha < b - 0.1 * width) {
                alpha = 0.5 * (a + b);
            }
            let t = self.eval(alpha);
            if self.armijo_fails(&t) || t.f >= lo.f {
                hi = t;
            } else {
                if self.curvature_holds(&t) {
                    return Some(t);
                }
                if t.slope * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = t;
            }
            if width < 1e-14 * lo.alpha.abs().max(1e-10) {
                break;
            }
        }
        // Accept a sufficient-decrease step even if curvature never held.
        (lo.alpha > 0.0 && lo.f < self.f0).then_some(lo)
    }
}

fn cubic_minimizer(lo: &Trial, hi: &Trial) -> Option<f64> {
    let (a, fa, da) = (lo.alpha, lo.f, lo.slope);
    let (b, fb, db) = (hi.alpha, hi.f, hi.slope);
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let x = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    x.is_finite().then_some(x)
}

/// Minimises `obj` starting from `x0`.
pub fn minimize<F>(mut obj: F, x0: &[f64], opts: BfgsOptions) -> Result<BfgsOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let (mut f, mut g) = obj(x0)?;
    if !f.is_finite() {
        return Err(Error::NonFinite(format!("objective at start is {f}")));
    }
    let mut x = x0.to_vec();
    let mut h = identity(n);
    let mut fresh_h = true;
    let mut restarts = 0;
    let mut trace = vec![f];
    let mut iterations = 0;

    while iterations < opts.max_iter {
        if max_abs(&g) < opts.grad_tol {
            return Ok(BfgsOutcome { x, f, grad: g, iterations, converged: true, trace });
        }
        let mut dir = mat_vec(&h, &g);
        dir.iter_mut().for_each(|v| *v = -*v);
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            h = identity(n);
            fresh_h = true;
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&g, &dir);
        }
        let alpha_init = if fresh_h {
            (1.0 / max_abs(&g)).min(1.0)
        } else {
            1.0
        };
        let mut ls = LineSearch { obj: &mut obj, x0: &x, dir: &dir, f0: f, slope0: slope };
        let Some(step) = ls.search(alpha_init) else {
            restarts += 1;
            if restarts > opts.max_restarts {
                return Err(Error::LineSearch { restarts: opts.max_restarts, grad_norm: max_abs(&g) });
            }
            h = identity(n);
            fresh_h = true;
            continue;
        };
        iterations += 1;
        let s: Vec<f64> = step.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let grad_new = if step.g.is_empty() {
            obj(&step.x)?.1
        } else {
            step.g
        };
        let y: Vec<f64> = grad_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if fresh_h {
                let scale = sy / dot(&y, &y);
                h = identity(n);
                h.iter_mut().enumerate().for_each(|(i, row)| row[i] = scale);
            }
            bfgs_update(&mut h, &s, &y, sy);
            fresh_h = false;
        }
        x = step.x;
        f = step.f;
        g = grad_new;
        trace.push(f);
    }
    let converged = max_abs(&g) < opts.grad_tol;
    Ok(BfgsOutcome { x, f, grad: g, iterations, converged, trace })
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn mat_vec(h: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    h.iter().map(|row| dot(row, v)).collect()
}

/// Inverse-Hessian update `H <- (I - rho s y') H (I - rho y s') + rho s s'`.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}
