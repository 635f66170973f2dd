//! Decompositions of the inputs that share a label.
//!
//! Every column of a plan, restricted to one class, is a deterministic
//! relabeling of that class's examples. The base expansion writes each
//! example's within-class index in base |Y|; random plans draw each column
//! uniformly.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{DibError, Result};
use crate::rng::rng_from;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelingMode {
    BaseExpansion,
    Random,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecompositionPlan {
    pub n_classes: usize,
    pub labels: Vec<usize>,
    /// Position of each example among the examples of its class, in dataset order.
    pub per_class_index: Vec<usize>,
    /// Row-major `[n_examples x n_digits]`, values in `[0, n_classes)`.
    pub digits: Vec<usize>,
    pub n_digits: usize,
    pub mode: LabelingMode,
}

fn check_labels(labels: &[usize], n_classes: usize) -> Result<Vec<usize>> {
    if n_classes < 2 {
        return Err(DibError::Argument(format!("need at least 2 classes, got {n_classes}")));
    }
    let mut sizes = vec![0usize; n_classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= n_classes {
            return Err(DibError::Index(format!("label {y} of example {i} outside [0, {n_classes})")));
        }
        sizes[y] += 1;
    }
    if let Some(empty) = sizes.iter().position(|&s| s == 0) {
        return Err(DibError::Assumption(format!("class {empty} has no examples")));
    }
    Ok(sizes)
}

fn within_class_indices(labels: &[usize], n_classes: usize) -> Vec<usize> {
    let mut next = vec![0usize; n_classes];
    labels
        .iter()
        .map(|&y| {
            let i = next[y];
            next[y] += 1;
            i
        })
        .collect()
}

/// Smallest `D >= 1` with `base^D >= count`.
pub fn digit_count(count: usize, base: usize) -> usize {
    let mut d = 1;
    let mut span = base;
    while span < count {
        span = span.saturating_mul(base);
        d += 1;
    }
    d
}

/// Most-significant-first base-`base` digits of `value`, zero-padded to `width`.
pub fn to_digits(mut value: usize, base: usize, width: usize) -> Vec<usize> {
    let mut out = vec![0; width];
    for slot in out.iter_mut().rev() {
        *slot = value % base;
        value /= base;
    }
    out
}

pub fn build_base_expansion(labels: &[usize], n_classes: usize) -> Result<DecompositionPlan> {
    let sizes = check_labels(labels, n_classes)?;
    let per_class_index = within_class_indices(labels, n_classes);
    let n_digits = digit_count(*sizes.iter().max().unwrap_or(&1), n_classes);
    let digits = per_class_index.iter().flat_map(|&i| to_digits(i, n_classes, n_digits)).collect();
    Ok(DecompositionPlan {
        n_classes,
        labels: labels.to_vec(),
        per_class_index,
        digits,
        n_digits,
        mode: LabelingMode::BaseExpansion,
    })
}

pub fn sample_random_labelings(labels: &[usize], n_classes: usize, k: usize, seed: u64) -> Result<DecompositionPlan> {
    if k == 0 {
        return Err(DibError::Argument("k must be >= 1".into()));
    }
    check_labels(labels, n_classes)?;
    let per_class_index = within_class_indices(labels, n_classes);
    let mut rng = rng_from(seed, 0xDEC0);
    let digits = (0..labels.len() * k).map(|_| rng.random_range(0..n_classes)).collect();
    Ok(DecompositionPlan {
        n_classes,
        labels: labels.to_vec(),
        per_class_index,
        digits,
        n_digits: k,
        mode: LabelingMode::Random,
    })
}

pub fn build_plan(labels: &[usize], n_classes: usize, mode: LabelingMode, k: usize, seed: u64) -> Result<DecompositionPlan> {
    match mode {
        LabelingMode::BaseExpansion => build_base_expansion(labels, n_classes),
        LabelingMode::Random => sample_random_labelings(labels, n_classes, k, seed),
    }
}

pub fn decode_index(plan: &DecompositionPlan, example_id: usize) -> Result<usize> {
    if plan.mode != LabelingMode::BaseExpansion {
        return Err(DibError::UnsupportedMode("decoding a random labeling".into()));
    }
    if example_id >= plan.len() {
        return Err(DibError::Index(format!("example {example_id} of {}", plan.len())));
    }
    Ok(plan.row(example_id).iter().fold(0, |acc, &d| acc * plan.n_classes + d))
}

impl DecompositionPlan {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, example_id: usize) -> &[usize] {
        &self.digits[example_id * self.n_digits..(example_id + 1) * self.n_digits]
    }

    pub fn column(&self, d: usize) -> Vec<usize> {
        (0..self.len()).map(|i| self.digits[i * self.n_digits + d]).collect()
    }

    /// The `k` columns that vary fastest: the least significant digits of a
    /// base expansion (the leading digits are constant on small classes),
    /// or the first `k` columns of a random plan. Fewer are returned when
    /// the plan is narrower than `k`.
    pub fn head_columns(&self, k: usize) -> Vec<usize> {
        let k = k.min(self.n_digits);
        match self.mode {
            LabelingMode::BaseExpansion => (self.n_digits - k..self.n_digits).rev().collect(),
            LabelingMode::Random => (0..k).collect(),
        }
    }

    /// Restriction to a subset of examples, keeping their digits unchanged.
    pub fn subset(&self, ids: &[usize]) -> DecompositionPlan {
        DecompositionPlan {
            n_classes: self.n_classes,
            labels: ids.iter().map(|&i| self.labels[i]).collect(),
            per_class_index: ids.iter().map(|&i| self.per_class_index[i]).collect(),
            digits: ids.iter().flat_map(|&i| self.row(i).to_vec()).collect(),
            n_digits: self.n_digits,
            mode: self.mode,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header = vec!["example_id".to_string(), "class".into(), "within_class_index".into()];
        header.extend((0..self.n_digits).map(|d| format!("digit_{d}")));
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let mut rec = vec![i.to_string(), self.labels[i].to_string(), self.per_class_index[i].to_string()];
            rec.extend(self.row(i).iter().map(|d| d.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> DibError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DibError::Io(io),
        other => DibError::Parse { line, message: format!("{other:?}") },
    }
}
