use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PropertyReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub sample_id: usize,
    pub p_true: Option<f64>,
    pub l_x: f64,
    pub est_i: f64,
    pub est_ii: f64,
    pub est_iii: f64,
    pub est_iv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraversalRow {
    pub dim: usize,
    pub step: usize,
    pub output: Vec<f64>,
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidArgument(format!("csv: {other:?}")),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `report.json`, `perdim.csv`, `scatter.csv` and `traverse.csv`.
pub fn write_report(dir: &Path, report: &PropertyReport, traversal: &[TraversalRow]) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), serde_json::to_vec_pretty(report)?)?;

    let mut w = csv::Writer::from_path(dir.join("perdim.csv")).map_err(csv_err)?;
    w.write_record([
        "dim",
        "mean_norm_stat",
        "sd_norm_stat",
        "mean_inv_sigma2",
        "ratio",
        "var_simple",
        "var_accurate",
        "informative",
    ])
    .map_err(csv_err)?;
    for d in &report.dims {
        w.write_record([
            d.dim.to_string(),
            d.norm_stat.mean.to_string(),
            d.norm_stat.sd.to_string(),
            d.mean_inv_sigma2.to_string(),
            opt(d.ratio),
            d.var_simple.to_string(),
            d.var_accurate.to_string(),
            d.informative.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("scatter.csv")).map_err(csv_err)?;
    w.write_record(["sample_id", "p_true", "est_i", "est_ii", "est_iii", "est_iv"])
        .map_err(csv_err)?;
    for s in &report.per_sample {
        w.write_record([
            s.sample_id.to_string(),
            opt(s.p_true),
            s.est_i.to_string(),
            s.est_ii.to_string(),
            s.est_iii.to_string(),
            s.est_iv.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;

    let width = traversal.first().map_or(0, |t| t.output.len());
    let mut w = csv::Writer::from_path(dir.join("traverse.csv")).map_err(csv_err)?;
    let mut header = vec!["dim".to_string(), "step".to_string()];
    header.extend((0..width).map(|k| format!("x{k}")));
    w.write_record(&header).map_err(csv_err)?;
    for t in traversal {
        let mut rec = vec![t.dim.to_string(), t.step.to_string()];
        rec.extend(t.output.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
