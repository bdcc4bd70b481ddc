//! Sample files: header `f1,...,fp,label`, one row per observation, label
//! `1`, `2` or empty when missing.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use ssl_nmar::model::Class;
use ssl_nmar::PartialSample;

/// Floats are written with 17 significant digits so files round-trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn read_sample(path: &Path) -> Result<PartialSample, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let header = reader.headers().map_err(|e| format!("header: {e}"))?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 2 || cols.last() != Some(&"label") {
        return Err(format!("header must be f1,...,fp,label; got {}", cols.join(",")));
    }
    let p = cols.len() - 1;
    for (i, name) in cols[..p].iter().enumerate() {
        if *name != format!("f{}", i + 1) {
            return Err(format!("header column {} must be f{}, got {name:?}", i + 1, i + 1));
        }
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| format!("row {row}: {e}"))?;
        if record.len() != p + 1 {
            return Err(format!("row {row}: expected {} fields, found {}", p + 1, record.len()));
        }
        let mut y = Vec::with_capacity(p);
        for (c, field) in record.iter().take(p).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| format!("row {row}, column f{}: {field:?} is not a number", c + 1))?;
            if !v.is_finite() {
                return Err(format!("row {row}, column f{}: value must be finite", c + 1));
            }
            y.push(v);
        }
        let label = match &record[p] {
            "" => None,
            "1" => Some(Class::One),
            "2" => Some(Class::Two),
            other => return Err(format!("row {row}, column label: {other:?} is not 1, 2 or empty")),
        };
        features.push(y);
        labels.push(label);
    }
    if features.is_empty() {
        return Err("file has no data rows".into());
    }
    PartialSample::new(features, labels).map_err(|e| e.to_string())
}

pub fn write_sample(path: &Path, sample: &PartialSample) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    let header: Vec<String> = (1..=sample.dim()).map(|i| format!("f{i}")).chain(["label".to_string()]).collect();
    writeln!(out, "{}", header.join(","))?;
    for (j, y) in sample.rows().enumerate() {
        let mut fields: Vec<String> = y.iter().map(|v| fmt_f64(*v)).collect();
        fields.push(sample.label(j).map(|c| c.index().to_string()).unwrap_or_default());
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()
}
