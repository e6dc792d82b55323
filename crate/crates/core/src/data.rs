//! Labelled datasets and mini-batches.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    Class,
    Real,
}

impl TargetKind {
    pub fn tag(self) -> u8 {
        match self {
            TargetKind::Class => 0,
            TargetKind::Real => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes { labels: Vec<usize>, num_classes: usize },
    Real(Vec<f64>),
}

impl Targets {
    pub fn classes(labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(Error::LabelOutOfRange {
                index,
                label,
                classes: num_classes,
            });
        }
        Ok(Targets::Classes {
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Real(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> TargetKind {
        match self {
            Targets::Classes { .. } => TargetKind::Class,
            Targets::Real(_) => TargetKind::Real,
        }
    }

    pub fn select(&self, indices: &[usize]) -> Targets {
        match self {
            Targets::Classes {
                labels,
                num_classes,
            } => Targets::Classes {
                labels: indices.iter().map(|&i| labels[i]).collect(),
                num_classes: *num_classes,
            },
            Targets::Real(v) => Targets::Real(indices.iter().map(|&i| v[i]).collect()),
        }
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match self {
            Targets::Classes { labels, .. } => Some(labels),
            Targets::Real(_) => None,
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        match self {
            Targets::Classes { num_classes, .. } => Some(*num_classes),
            Targets::Real(_) => None,
        }
    }

    pub fn values(&self) -> Option<&[f64]> {
        match self {
            Targets::Real(v) => Some(v),
            Targets::Classes { .. } => None,
        }
    }
}

/// Inputs with targets, e.g. one training mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub targets: Targets,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub inputs: Matrix,
    pub targets: Targets,
    /// Per-sample flag marking synthetic ambiguous samples, when known.
    pub ambiguous: Option<Vec<bool>>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, inputs: Matrix, targets: Targets) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            inputs,
            targets,
            ambiguous: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.rows() == 0 {
            return Err(Error::Empty("dataset"));
        }
        if self.inputs.rows() != self.targets.len() {
            return Err(Error::DimensionMismatch {
                context: format!("targets of dataset {:?}", self.name),
                expected: self.inputs.rows(),
                found: self.targets.len(),
            });
        }
        if self.inputs.has_nan() {
            return Err(Error::NonFinite(format!("inputs of dataset {:?}", self.name)));
        }
        if let Some(flags) = &self.ambiguous {
            if flags.len() != self.len() {
                return Err(Error::DimensionMismatch {
                    context: "ambiguity flags".into(),
                    expected: self.len(),
                    found: flags.len(),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        Batch {
            inputs: self.inputs.select_rows(indices),
            targets: self.targets.select(indices),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            inputs: self.inputs.select_rows(indices),
            targets: self.targets.select(indices),
            ambiguous: self
                .ambiguous
                .as_ref()
                .map(|f| indices.iter().map(|&i| f[i]).collect()),
        }
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.targets.labels()
    }
}
