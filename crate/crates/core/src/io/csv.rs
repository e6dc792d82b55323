//! Rectangular CSV reports with exact float formatting.

use std::fs;
use std::path::Path;

use super::fmt_f64;
use crate::engine::TrainLog;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::metrics::EvalReport;
use crate::tasks::{ActiveLearningCurve, OodReport, ScoreKind};
use crate::uncertainty::UncertaintyTriple;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => fmt_f64(*v),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvReport {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn check_field(s: &str) -> Result<()> {
    if s.contains([',', '"', '\n', '\r']) {
        return Err(Error::InvalidConfig(format!("CSV field {s:?} needs quoting, which reports do not support")));
    }
    Ok(())
}

impl CsvReport {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Result<Self> {
        let header: Vec<String> = header.iter().map(|s| s.as_ref().to_string()).collect();
        header.iter().try_for_each(|h| check_field(h))?;
        Ok(Self { header, rows: Vec::new() })
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::DimensionMismatch {
                context: "CSV row".into(),
                expected: self.header.len(),
                found: row.len(),
            });
        }
        let row: Vec<String> = row.iter().map(Cell::render).collect();
        row.iter().try_for_each(|f| check_field(f))?;
        self.rows.push(row);
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    /// Parses text written by [`CsvReport::to_csv_string`].
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::MalformedHeader("empty report".into()))?;
        let header: Vec<String> = header.split(',').map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, line) in lines {
            let row: Vec<String> = line.split(',').map(str::to_string).collect();
            if row.len() != header.len() {
                return Err(Error::RowLengthMismatch {
                    line: i + 1,
                    expected: header.len(),
                    found: row.len(),
                });
            }
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j].as_str()).collect())
    }

    pub fn float_column(&self, name: &str) -> Result<Vec<f64>> {
        let col = self
            .column(name)
            .ok_or_else(|| Error::MalformedHeader(format!("no column {name:?}")))?;
        col.iter()
            .enumerate()
            .map(|(i, s)| {
                s.parse().map_err(|_| Error::NonFiniteValue {
                    line: i + 2,
                    value: s.to_string(),
                })
            })
            .collect()
    }
}

pub fn train_log_report(log: &TrainLog) -> CsvReport {
    let mut r = CsvReport::new(&["step", "mean_nll", "mean_function_distance", "mean_param_distance", "bandwidth"])
        .expect("static header");
    for rec in &log.records {
        // NaN marks steps without a kernel
        let bw = if rec.bandwidth.is_nan() { Cell::Text("NA".into()) } else { Cell::Float(rec.bandwidth) };
        r.push(vec![
            rec.step.into(),
            rec.mean_nll.into(),
            rec.mean_function_distance.into(),
            rec.mean_param_distance.into(),
            bw,
        ])
        .expect("fixed width");
    }
    r
}

/// NLL and ECE are multiplied by 100 when `percent` is set.
pub fn metrics_report(id: &EvalReport, percent: bool) -> CsvReport {
    let scale = if percent { 100.0 } else { 1.0 };
    let mut r = CsvReport::new(&["samples", "accuracy", "nll", "ece", "brier"]).expect("static header");
    r.push(vec![
        id.samples.into(),
        id.accuracy.into(),
        (id.nll * scale).into(),
        (id.ece * scale).into(),
        id.brier.into(),
    ])
    .expect("fixed width");
    r
}

/// One row per OOD set, one AUROC column per score kind.
pub fn ood_matrix_report(report: &OodReport) -> Result<CsvReport> {
    let mut header = vec!["ood_set".to_string()];
    header.extend(ScoreKind::ALL.iter().map(|k| format!("auroc_{}", k.name())));
    let mut r = CsvReport::new(&header)?;
    let mut sets: Vec<&str> = Vec::new();
    for e in &report.entries {
        if !sets.contains(&e.ood_set.as_str()) {
            sets.push(&e.ood_set);
        }
    }
    for set in sets {
        let mut row = vec![Cell::Text(set.to_string())];
        for kind in ScoreKind::ALL {
            row.push(report.auroc(set, kind).unwrap_or(f64::NAN).into());
        }
        r.push(row)?;
    }
    Ok(r)
}

/// Per-input uncertainty scores of one named set.
pub fn scores_report(set: &str, triples: &[UncertaintyTriple]) -> Result<CsvReport> {
    let mut r = CsvReport::new(&["set", "index", "total", "aleatoric", "epistemic"])?;
    for (i, t) in triples.iter().enumerate() {
        r.push(vec![set.into(), i.into(), t.total.into(), t.aleatoric.into(), t.epistemic.into()])?;
    }
    Ok(r)
}

/// Long format: one row per (curve, round).
pub fn accuracy_curve_report(curves: &[(&str, &ActiveLearningCurve)]) -> Result<CsvReport> {
    let mut r = CsvReport::new(&["acquisition", "round", "labeled", "accuracy"])?;
    for (name, c) in curves {
        for (round, (&size, &acc)) in c.labeled_sizes.iter().zip(&c.accuracies).enumerate() {
            r.push(vec![(*name).into(), round.into(), size.into(), acc.into()])?;
        }
    }
    Ok(r)
}

/// Grid predictions of every particle (`n × G`) with their mean and std.
pub fn particles_report(grid_x: &[f64], predictions: &Matrix) -> Result<CsvReport> {
    let (n, g) = predictions.shape();
    if g != grid_x.len() {
        return Err(Error::DimensionMismatch {
            context: "particle predictions vs grid".into(),
            expected: grid_x.len(),
            found: g,
        });
    }
    let mut header = vec!["x".to_string(), "mean".to_string(), "std".to_string()];
    header.extend((0..n).map(|i| format!("particle_{i}")));
    let mut r = CsvReport::new(&header)?;
    let (mean, std) = column_mean_std(predictions);
    for j in 0..g {
        let mut row = vec![grid_x[j].into(), mean[j].into(), std[j].into()];
        row.extend((0..n).map(|i| Cell::Float(predictions.get(i, j))));
        r.push(row)?;
    }
    Ok(r)
}

/// Per-column mean and population standard deviation.
pub fn column_mean_std(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let (n, g) = m.shape();
    let mut mean = vec![0.0; g];
    let mut std = vec![0.0; g];
    for j in 0..g {
        let mu = (0..n).map(|i| m.get(i, j)).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (m.get(i, j) - mu).powi(2)).sum::<f64>() / n as f64;
        mean[j] = mu;
        std[j] = var.sqrt();
    }
    (mean, std)
}
