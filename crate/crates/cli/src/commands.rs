use std::fmt::Write as _;
use std::path::Path;

use serde_json::{json, Value};
use ssl_nmar::diagnostics::diagnose as run_diagnostics;
use ssl_nmar::estimate::{
    default_full_init, fit_cml_hard, fit_complete, fit_full_ml, fit_ignore_em, initial_model, FitResult,
    DEFAULT_EM_TOL, DEFAULT_GRAD_TOL,
};
use ssl_nmar::information::{table_report, AreCell, AreTable};
use ssl_nmar::simulate::{
    draw_partial_sample, grid_cells, simulate_cells, simulate_re, SimCell, SimConfig, SimReport, SimTable,
};
use ssl_nmar::{Error, FullParams, GaussianPairModel, MissingnessParams};

use crate::io::{fmt_f64, read_sample, write_sample};
use crate::manifest::RunManifest;
use crate::{Failure, Format, Method, EXIT_DIAGNOSTICS, EXIT_FIT, EXIT_INPUT, EXIT_IO, EXIT_QUADRATURE, EXIT_SIMULATION};

fn write_output(path: Option<&Path>, content: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, content).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", p.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn to_json(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("values are serializable");
    s.push('\n');
    s
}

fn is_input_error(e: &Error) -> bool {
    matches!(
        e,
        Error::InvalidSample(_)
            | Error::InvalidLabel { .. }
            | Error::DimensionMismatch { .. }
            | Error::InvalidParameter(_)
            | Error::InvalidProbability(_)
    )
}

fn fit_failure(e: Error) -> Failure {
    let code = if is_input_error(&e) { EXIT_INPUT } else { EXIT_FIT };
    Failure::new(code, e.to_string())
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn table_kind(which: u8) -> AreTable {
    match which {
        1 => AreTable::Table1,
        2 => AreTable::Table2,
        _ => AreTable::Table3,
    }
}

pub fn tables(which: u8, format: Format, output: Option<&Path>) -> Result<(), Failure> {
    let cells = table_report(table_kind(which));
    let failed: Vec<String> = cells
        .iter()
        .filter_map(|c| {
            c.error
                .as_ref()
                .map(|e| format!("(xi0 = {}, delta = {}, xi1 = {}): {e}", c.xi0, c.delta, c.xi1))
        })
        .collect();
    if !failed.is_empty() {
        return Err(Failure::new(EXIT_QUADRATURE, format!("quadrature failed at {}", failed.join("; "))));
    }
    let manifest = RunManifest::new("tables", json!({ "which": which, "format": format!("{format:?}").to_lowercase() }), None);
    let content = match format {
        Format::Json => to_json(&json!({ "manifest": manifest, "table": which, "cells": cells })),
        Format::Csv => {
            let mut s = String::from("xi0,delta,xi1,value,quadrature_error_estimate\n");
            for c in &cells {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{}",
                    fmt_f64(c.xi0),
                    fmt_f64(c.delta),
                    fmt_f64(c.xi1),
                    opt(c.value),
                    opt(c.quadrature_error_estimate)
                );
            }
            s
        }
        Format::Text => tables_text(which, &cells),
    };
    write_output(output, &content)
}

fn tables_text(which: u8, cells: &[AreCell]) -> String {
    let mut s = String::new();
    let max_err = cells.iter().filter_map(|c| c.quadrature_error_estimate).fold(0.0, f64::max);
    if which == 1 {
        let _ = writeln!(s, "Ignore-mechanism efficiency, every label missing at random");
        let _ = writeln!(s, "{:>6} {:>10} {:>10} {:>10} {:>10}", "pi1", "delta=1", "delta=2", "delta=3", "delta=4");
        let _ = write!(s, "{:>6}", "0.5");
        for c in cells {
            let _ = write!(s, " {:>10.4}", c.value.unwrap_or(f64::NAN));
        }
        s.push('\n');
    } else {
        let title = if which == 2 {
            "Full-likelihood efficiency relative to fully labelled data"
        } else {
            "Ignore-mechanism efficiency relative to the full likelihood"
        };
        let _ = writeln!(s, "{title}");
        let _ = write!(s, "{:>5} {:>6}", "xi0", "delta");
        for xi1 in ssl_nmar::simulate::GRID_XI1 {
            let _ = write!(s, " {:>10}", format!("xi1={xi1}"));
        }
        s.push('\n');
        for row in cells.chunks(ssl_nmar::simulate::GRID_XI1.len()) {
            let _ = write!(s, "{:>5} {:>6}", row[0].xi0, row[0].delta);
            for c in row {
                let _ = write!(s, " {:>10.4}", c.value.unwrap_or(f64::NAN));
            }
            s.push('\n');
        }
    }
    let _ = writeln!(s, "largest quadrature error estimate: {max_err:.1e}");
    s
}

pub struct SimArgs {
    pub n: usize,
    pub reps: usize,
    pub delta: f64,
    pub xi0: f64,
    pub xi1: f64,
    pub p: usize,
    pub pi1: f64,
    pub bootstrap_reps: usize,
    pub seed: u64,
}

const SIM_CSV_HEADER: &str =
    "n,p,delta,pi1,xi0,xi1,reps,seed,re_hat,bootstrap_se,mean_excess_full,mean_excess_ignore,successes,failures,degenerate";

fn sim_csv_row(r: &SimReport) -> String {
    let c = &r.config;
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        c.n,
        c.p,
        fmt_f64(c.delta),
        fmt_f64(c.pi1),
        fmt_f64(c.xi.xi0),
        fmt_f64(c.xi.xi1),
        c.reps,
        c.seed,
        opt(r.re_hat),
        opt(r.bootstrap_se),
        fmt_f64(r.mean_excess_full),
        fmt_f64(r.mean_excess_ignore),
        r.successes,
        r.failures,
        r.degenerate
    )
}

fn fmt_re(r: &SimReport) -> String {
    match (r.re_hat, r.bootstrap_se) {
        (Some(re), Some(se)) => format!("{re:.3} ({se:.3})"),
        (Some(re), None) => format!("{re:.3} (-)"),
        _ => "degenerate".into(),
    }
}

pub fn simulate(args: SimArgs, format: Format, output: Option<&Path>) -> Result<(), Failure> {
    let xi = MissingnessParams::new(args.xi0, args.xi1).map_err(|e| Failure::new(EXIT_INPUT, e.to_string()))?;
    let cfg = SimConfig {
        n: args.n,
        p: args.p,
        delta: args.delta,
        pi1: args.pi1,
        xi,
        reps: args.reps,
        seed: args.seed,
        bootstrap_reps: args.bootstrap_reps,
    };
    cfg.validate().map_err(|e| Failure::new(EXIT_INPUT, e.to_string()))?;
    let report = simulate_re(&cfg).map_err(|e| Failure::new(EXIT_SIMULATION, e.to_string()))?;
    let manifest = RunManifest::new("simulate", serde_json::to_value(&cfg).expect("serializable"), Some(cfg.seed));
    let content = match format {
        Format::Json => to_json(&json!({ "manifest": manifest, "report": report })),
        Format::Csv => format!("{SIM_CSV_HEADER}\n{}\n", sim_csv_row(&report)),
        Format::Text => format!(
            "relative efficiency {}\nmean excess error: full {:.6e}, ignore {:.6e}\nreplications: {} ok, {} failed\n",
            fmt_re(&report),
            report.mean_excess_full,
            report.mean_excess_ignore,
            report.successes,
            report.failures
        ),
    };
    write_output(output, &content)
}

pub fn simulate_table(
    table: u8,
    reps: usize,
    bootstrap_reps: usize,
    seed: u64,
    format: Format,
    output: Option<&Path>,
) -> Result<(), Failure> {
    let which = if table == 4 { SimTable::Table4 } else { SimTable::Table5 };
    let n = which.sample_size();
    let cells: Vec<SimCell> = simulate_cells(n, &grid_cells(), reps, bootstrap_reps, seed);
    let manifest = RunManifest::new(
        "simulate",
        json!({ "table": table, "n": n, "p": 1, "pi1": 0.5, "reps": reps, "bootstrap_reps": bootstrap_reps }),
        Some(seed),
    );
    let content = match format {
        Format::Json => to_json(&json!({ "manifest": manifest, "table": table, "cells": cells })),
        Format::Csv => {
            let mut s = format!("{SIM_CSV_HEADER},error\n");
            for c in &cells {
                match &c.report {
                    Some(r) => {
                        let _ = writeln!(s, "{},", sim_csv_row(r));
                    }
                    None => {
                        let _ = writeln!(
                            s,
                            "{n},1,{},{},{},{},{reps},,,,,,,,,\"{}\"",
                            fmt_f64(c.delta),
                            fmt_f64(0.5),
                            fmt_f64(c.xi0),
                            fmt_f64(c.xi1),
                            c.error.as_deref().unwrap_or("").replace('"', "'")
                        );
                    }
                }
            }
            s
        }
        Format::Text => {
            let mut s = format!("Simulated relative efficiency, n = {n}, p = 1 (bootstrap SE)\n");
            let _ = write!(s, "{:>5} {:>6}", "xi0", "delta");
            for xi1 in ssl_nmar::simulate::GRID_XI1 {
                let _ = write!(s, " {:>15}", format!("xi1={xi1}"));
            }
            s.push('\n');
            for row in cells.chunks(ssl_nmar::simulate::GRID_XI1.len()) {
                let _ = write!(s, "{:>5} {:>6}", row[0].xi0, row[0].delta);
                for c in row {
                    let cell = c.report.as_ref().map(fmt_re).unwrap_or_else(|| "failed".into());
                    let _ = write!(s, " {cell:>15}");
                }
                s.push('\n');
            }
            s
        }
    };
    write_output(output, &content)?;
    let failed: Vec<String> = cells
        .iter()
        .filter(|c| c.report.is_none())
        .map(|c| format!("(xi0 = {}, delta = {}, xi1 = {})", c.xi0, c.delta, c.xi1))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::new(EXIT_SIMULATION, format!("no usable replications at {}", failed.join(", "))))
    }
}

fn model_json(theta: &GaussianPairModel) -> Value {
    let rows: Vec<Vec<f64>> = theta.sigma().row_iter().map(|r| r.iter().copied().collect()).collect();
    json!({
        "mu1": theta.mu1().as_slice(),
        "mu2": theta.mu2().as_slice(),
        "sigma": rows,
        "pi1": theta.pi1(),
    })
}

fn fit_json(fit: &FitResult) -> Value {
    let beta = fit.beta();
    json!({
        "method": fit.method,
        "theta": model_json(&fit.theta),
        "xi": fit.xi,
        "beta0": beta.beta0,
        "beta1": beta.beta1.as_slice(),
        "loglik": fit.loglik,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "trace": fit.trace,
    })
}

pub fn fit(
    input: &Path,
    method: Method,
    init_xi0: Option<f64>,
    init_xi1: Option<f64>,
    max_iter: usize,
    output: Option<&Path>,
) -> Result<(), Failure> {
    let sample = read_sample(input).map_err(|m| Failure::new(EXIT_INPUT, m))?;
    let result = match method {
        Method::Cc => fit_complete(&sample),
        Method::Ig => initial_model(&sample).and_then(|init| fit_ignore_em(&sample, &init, DEFAULT_EM_TOL, max_iter)),
        Method::Full => initial_model(&sample)
            .and_then(|init| fit_ignore_em(&sample, &init, DEFAULT_EM_TOL, max_iter))
            .and_then(|ig| {
                let mut start = default_full_init(&sample, &ig.theta);
                if let Some(v) = init_xi0 {
                    start.xi.xi0 = v;
                }
                if let Some(v) = init_xi1 {
                    start.xi.xi1 = v;
                }
                let start = FullParams::new(start.theta, MissingnessParams::new(start.xi.xi0, start.xi.xi1)?);
                fit_full_ml(&sample, &start, DEFAULT_GRAD_TOL, max_iter)
            }),
        Method::Cml => {
            if sample.class_counts().iter().any(|c| *c == 0) {
                Err(Error::DegenerateFit("CML requires labelled rows in both classes".into()))
            } else {
                initial_model(&sample).and_then(|init| fit_cml_hard(&sample, &init, max_iter))
            }
        }
    };
    let fit = result.map_err(fit_failure)?;
    let manifest = RunManifest::new(
        "fit",
        json!({
            "input": input.display().to_string(),
            "method": format!("{method:?}").to_lowercase(),
            "init_xi0": init_xi0,
            "init_xi1": init_xi1,
            "max_iter": max_iter,
        }),
        None,
    );
    let mut body = fit_json(&fit);
    body["manifest"] = serde_json::to_value(&manifest).expect("serializable");
    body["n"] = json!(sample.len());
    body["n_unclassified"] = json!(sample.n_unclassified());
    write_output(output, &to_json(&body))
}

#[allow(clippy::too_many_arguments)]
pub fn gen(n: usize, p: usize, delta: f64, pi1: f64, xi0: f64, xi1: f64, seed: u64, output: &Path) -> Result<(), Failure> {
    let input = |e: Error| Failure::new(EXIT_INPUT, e.to_string());
    if n == 0 {
        return Err(Failure::new(EXIT_INPUT, "n must be at least 1"));
    }
    if p == 0 {
        return Err(Failure::new(EXIT_INPUT, "p must be at least 1"));
    }
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Failure::new(EXIT_INPUT, format!("delta must be nonnegative, got {delta}")));
    }
    let theta = GaussianPairModel::canonical(delta, p, pi1).map_err(input)?;
    let psi = FullParams::new(theta, MissingnessParams::new(xi0, xi1).map_err(input)?);
    let sample = draw_partial_sample(n, &psi, seed, 0).map_err(input)?;
    write_sample(output, &sample).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", output.display())))?;
    let manifest = RunManifest::new(
        "gen",
        json!({ "n": n, "p": p, "delta": delta, "pi1": pi1, "xi0": xi0, "xi1": xi1, "stream": 0 }),
        Some(seed),
    );
    let sidecar = manifest_path(output);
    write_output(Some(&sidecar), &to_json(&json!({ "manifest": manifest })))
}

/// `data.csv` -> `data.csv.manifest.json`.
pub fn manifest_path(output: &Path) -> std::path::PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    name.into()
}

pub fn diagnose(input: &Path, output: Option<&Path>) -> Result<(), Failure> {
    let sample = read_sample(input).map_err(|m| Failure::new(EXIT_INPUT, m))?;
    let d = run_diagnostics(&sample).map_err(|e| {
        let code = if is_input_error(&e) { EXIT_INPUT } else { EXIT_DIAGNOSTICS };
        Failure::new(code, e.to_string())
    })?;
    let manifest = RunManifest::new("diagnose", json!({ "input": input.display().to_string() }), None);
    let c = &d.comparison;
    let nw = &d.nw_curve;
    let body = json!({
        "manifest": manifest,
        "n": sample.len(),
        "n_labelled": c.n_labelled,
        "n_unlabelled": c.n_unlabelled,
        "theta": model_json(&d.theta),
        "mean_entropy_labelled": d.mean_entropy_labelled,
        "mean_entropy_unlabelled": d.mean_entropy_unlabelled,
        "labelled_fraction": d.labelled_fraction,
        "neg_log_entropy": d.neg_log_entropy,
        "miss": d.miss,
        "kde": {
            "grid": c.kde_labelled.grid,
            "labelled": c.kde_labelled.values,
            "unlabelled": c.kde_unlabelled.values,
            "bandwidth_labelled": c.bandwidth_labelled,
            "bandwidth_unlabelled": c.bandwidth_unlabelled,
        },
        "ecdf": {
            "labelled": { "x": c.ecdf_labelled.x, "y": c.ecdf_labelled.y },
            "unlabelled": { "x": c.ecdf_unlabelled.x, "y": c.ecdf_unlabelled.y },
            "ks_statistic": c.ks_statistic,
        },
        "nw": {
            "grid": nw.grid,
            "values": nw.values,
            "se": nw.se,
            "bandwidth": nw.bandwidth,
            "interior": [nw.interior.0, nw.interior.1],
            "spearman": nw.spearman,
            "increasing": nw.increasing,
        },
    });
    write_output(output, &to_json(&body))
}
