//! Dataset files: an editable CSV form and an exact little-endian binary form.
//!
//! CSV: header `feat_0,...,feat_{d-1},label`, one sample per line.
//! Binary: `"RPDS"`, u16 version, u32 N, u32 d, u8 target kind, N·d f64
//! inputs row-major, then N targets (u32 class labels or f64 values).

use std::fs;
use std::path::Path;

use super::fmt_f64;
use crate::data::{Dataset, TargetKind, Targets};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const DATASET_MAGIC: &[u8; 4] = b"RPDS";
pub const DATASET_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Csv,
    Binary,
}

impl DatasetFormat {
    /// Binary for `.rpds` files, CSV otherwise.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("rpds") => DatasetFormat::Binary,
            _ => DatasetFormat::Csv,
        }
    }
}

pub fn dataset_to_csv(ds: &Dataset) -> String {
    let d = ds.dim();
    let mut out = String::new();
    for j in 0..d {
        out.push_str(&format!("feat_{j},"));
    }
    out.push_str("label\n");
    for (i, row) in ds.inputs.iter_rows().enumerate() {
        for v in row {
            out.push_str(&fmt_f64(*v));
            out.push(',');
        }
        match &ds.targets {
            Targets::Classes { labels, .. } => out.push_str(&labels[i].to_string()),
            Targets::Real(v) => out.push_str(&fmt_f64(v[i])),
        }
        out.push('\n');
    }
    out
}

/// Parses a CSV dataset. Class labels must be non-negative integers; the class
/// count is `num_classes` when given, else one more than the largest label.
pub fn dataset_from_csv(
    text: &str,
    name: &str,
    kind: TargetKind,
    num_classes: Option<usize>,
) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::MalformedHeader("empty file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let d = cols.len().saturating_sub(1);
    let expected_header = (0..d).map(|j| format!("feat_{j}")).chain(["label".to_string()]);
    if d == 0 || !cols.iter().copied().eq(expected_header.collect::<Vec<_>>().iter().map(String::as_str)) {
        return Err(Error::MalformedHeader(header.to_string()));
    }
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != d + 1 {
            return Err(Error::RowLengthMismatch {
                line: line_no,
                expected: d + 1,
                found: fields.len(),
            });
        }
        for f in &fields[..d] {
            let v: f64 = f.parse().map_err(|_| Error::MalformedDataset(format!("line {line_no}: {f:?} is not a number")))?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue {
                    line: line_no,
                    value: f.to_string(),
                });
            }
            inputs.push(v);
        }
        let raw = fields[d];
        match kind {
            TargetKind::Class => {
                let label = raw.parse::<usize>().ok().or_else(|| {
                    // accept integral floats such as "3.0"
                    raw.parse::<f64>()
                        .ok()
                        .filter(|v| v.fract() == 0.0 && *v >= 0.0 && *v < u32::MAX as f64)
                        .map(|v| v as usize)
                });
                match label {
                    Some(l) => labels.push(l),
                    None => {
                        return Err(Error::InvalidLabel {
                            line: line_no,
                            value: raw.to_string(),
                        })
                    }
                }
            }
            TargetKind::Real => {
                let v: f64 = raw.parse().map_err(|_| Error::InvalidLabel {
                    line: line_no,
                    value: raw.to_string(),
                })?;
                if !v.is_finite() {
                    return Err(Error::NonFiniteValue {
                        line: line_no,
                        value: raw.to_string(),
                    });
                }
                values.push(v);
            }
        }
    }
    let n = inputs.len() / d;
    let targets = match kind {
        TargetKind::Class => {
            let k = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
            Targets::classes(labels, k)?
        }
        TargetKind::Real => Targets::Real(values),
    };
    Dataset::new(name, Matrix::from_vec(n, d, inputs), targets)
}

pub fn dataset_to_bytes(ds: &Dataset) -> Vec<u8> {
    let (n, d) = ds.inputs.shape();
    let mut out = Vec::with_capacity(15 + 8 * n * d + 8 * n);
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.push(ds.targets.kind().tag());
    for v in ds.inputs.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    match &ds.targets {
        Targets::Classes { labels, .. } => {
            for &l in labels {
                out.extend_from_slice(&(l as u32).to_le_bytes());
            }
        }
        Targets::Real(v) => {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(k).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::MalformedDataset("truncated binary dataset".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn dataset_from_bytes(bytes: &[u8], name: &str, num_classes: Option<usize>) -> Result<Dataset> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != DATASET_MAGIC {
        return Err(Error::MalformedHeader("missing RPDS magic".into()));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != DATASET_VERSION {
        return Err(Error::MalformedHeader(format!("unsupported dataset version {version}")));
    }
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    let kind = r.take(1)?[0];
    let expected = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(8))
        .and_then(|b| b.checked_add(n * if kind == 0 { 4 } else { 8 }))
        .and_then(|b| b.checked_add(15));
    if expected != Some(bytes.len()) {
        return Err(Error::MalformedDataset(format!(
            "binary dataset of {} bytes does not match header (N={n}, d={d})",
            bytes.len()
        )));
    }
    let mut inputs = Vec::with_capacity(n * d);
    for i in 0..n * d {
        let v = r.f64()?;
        if !v.is_finite() {
            return Err(Error::NonFiniteValue {
                line: i / d.max(1) + 1,
                value: v.to_string(),
            });
        }
        inputs.push(v);
    }
    let targets = match kind {
        0 => {
            let labels: Vec<usize> = (0..n).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_>>()?;
            let k = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
            Targets::classes(labels, k)?
        }
        1 => Targets::Real((0..n).map(|_| r.f64()).collect::<Result<_>>()?),
        other => return Err(Error::MalformedHeader(format!("unknown target kind {other}"))),
    };
    Dataset::new(name, Matrix::from_vec(n, d, inputs), targets)
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset").to_string()
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    match DatasetFormat::from_path(path) {
        DatasetFormat::Csv => fs::write(path, dataset_to_csv(ds))?,
        DatasetFormat::Binary => fs::write(path, dataset_to_bytes(ds))?,
    }
    Ok(())
}

/// Loads either format. Binary files are recognized by their magic bytes, so
/// `kind` only matters for CSV.
pub fn load_dataset(path: &Path, kind: TargetKind, num_classes: Option<usize>) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    let name = stem(path);
    if bytes.starts_with(DATASET_MAGIC) {
        let ds = dataset_from_bytes(&bytes, &name, num_classes)?;
        if ds.targets.kind() != kind {
            return Err(Error::InvalidTargets(format!(
                "{} holds {:?} targets, expected {kind:?}",
                path.display(),
                ds.targets.kind()
            )));
        }
        return Ok(ds);
    }
    let text = String::from_utf8(bytes).map_err(|_| Error::MalformedDataset("CSV dataset is not UTF-8".into()))?;
    dataset_from_csv(&text, &name, kind, num_classes)
}
