//! Confusion matrices and classification metrics.
//!
//! Rows are true classes and columns predicted classes, both indexed by the
//! catalog's canonical order (healthy last). All metric values are percents
//! kept at full precision; rounding happens only in [`MetricReport::to_text_table`].
//!
//! A 0/0 precision, recall or F1 is reported as 0 and flagged on the class.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ClassCatalog, Dataset, RecallTable};
use crate::num::{ratio_or_zero, round2, Real};
use crate::rules::Prediction;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no prediction for image `{0}`")]
    MissingPrediction(String),
    #[error("prediction for image `{0}` which is not in the dataset")]
    UnknownImage(String),
    #[error("more than one prediction for image `{0}`")]
    DuplicatePrediction(String),
    #[error("label `{0}` is not in the class catalog")]
    UnknownLabel(String),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("confusion matrices have different sizes ({0} vs {1})")]
    SizeMismatch(usize, usize),
}

/// Square matrix of counts, `counts[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(catalog: &ClassCatalog) -> Self {
        let n = catalog.num_classes();
        ConfusionMatrix {
            labels: catalog.labels().map(str::to_string).collect(),
            counts: vec![vec![0; n]; n],
        }
    }

    /// Wraps raw counts; `counts` must be `labels.len()` square.
    pub fn from_counts(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self, MetricsError> {
        let n = labels.len();
        if let Some(row) = counts.iter().find(|r| r.len() != n) {
            return Err(MetricsError::SizeMismatch(n, row.len()));
        }
        if counts.len() != n {
            return Err(MetricsError::SizeMismatch(n, counts.len()));
        }
        Ok(ConfusionMatrix { labels, counts })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    /// Per-class ground-truth counts (row sums).
    pub fn support(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Per-class predicted counts (column sums).
    pub fn predicted_totals(&self) -> Vec<u64> {
        (0..self.size())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.size()).map(|i| self.counts[i][i]).sum()
    }

    /// Element-wise sum with another tally over the same classes.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), MetricsError> {
        if self.labels != other.labels {
            return Err(MetricsError::SizeMismatch(self.size(), other.size()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn normalized<T: Real>(&self) -> Vec<Vec<T>> {
        let rows: Vec<Vec<T>> = self
            .counts
            .iter()
            .map(|r| r.iter().map(|&c| T::from_count(c)).collect())
            .collect();
        normalize_rows(&rows)
    }
}

/// Tallies predictions against ground truth. Exactly one prediction per
/// dataset image is required.
pub fn confusion(
    dataset: &Dataset,
    predictions: &[Prediction],
    catalog: &ClassCatalog,
) -> Result<ConfusionMatrix, MetricsError> {
    let mut seen = std::collections::HashSet::with_capacity(predictions.len());
    let mut m = ConfusionMatrix::zeros(catalog);
    for p in predictions {
        let rec = dataset
            .get(&p.image_id)
            .ok_or_else(|| MetricsError::UnknownImage(p.image_id.clone()))?;
        if !seen.insert(p.image_id.as_str()) {
            return Err(MetricsError::DuplicatePrediction(p.image_id.clone()));
        }
        let t = catalog
            .index_of(&rec.true_label)
            .ok_or_else(|| MetricsError::UnknownLabel(rec.true_label.clone()))?;
        let j = catalog
            .index_of(&p.predicted_label)
            .ok_or_else(|| MetricsError::UnknownLabel(p.predicted_label.clone()))?;
        m.add(t, j);
    }
    if let Some(r) = dataset
        .records()
        .iter()
        .find(|r| !seen.contains(r.image_id.as_str()))
    {
        return Err(MetricsError::MissingPrediction(r.image_id.clone()));
    }
    Ok(m)
}

/// Scales each row to sum to one; all-zero rows stay zero.
pub fn normalize_rows<T: Real>(rows: &[Vec<T>]) -> Vec<Vec<T>> {
    rows.iter()
        .map(|r| {
            let sum = r.iter().fold(T::zero(), |a, &b| a + b);
            if sum == T::zero() {
                vec![T::zero(); r.len()]
            } else {
                r.iter().map(|&v| v / sum).collect()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics<T> {
    pub label: String,
    pub support: u64,
    pub predicted: u64,
    pub true_positives: u64,
    pub precision: T,
    pub recall: T,
    pub f1: T,
    /// No ground-truth images of this class: recall (and F1) reported as 0.
    pub zero_support: bool,
    /// Never predicted: precision reported as 0.
    pub zero_predicted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport<T> {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_tag: Option<String>,
    pub total: u64,
    pub correct: u64,
    pub accuracy: T,
    /// Mean recall over classes that have ground-truth support.
    pub balanced_accuracy: T,
    pub micro_f1: T,
    /// Unweighted mean of per-class F1 over every catalog class.
    pub macro_f1: T,
    pub per_class: Vec<ClassMetrics<T>>,
}

pub fn report<T: Real>(matrix: &ConfusionMatrix) -> Result<MetricReport<T>, MetricsError> {
    let total = matrix.total();
    if total == 0 || matrix.size() == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let hundred = T::hundred();
    let support = matrix.support();
    let predicted = matrix.predicted_totals();

    let mut per_class = Vec::with_capacity(matrix.size());
    let (mut tp_sum, mut fp_sum, mut fn_sum) = (0u64, 0u64, 0u64);
    for (i, label) in matrix.labels().iter().enumerate() {
        let tp = matrix.count(i, i);
        let fp = predicted[i] - tp;
        let fn_ = support[i] - tp;
        tp_sum += tp;
        fp_sum += fp;
        fn_sum += fn_;
        per_class.push(ClassMetrics {
            label: label.clone(),
            support: support[i],
            predicted: predicted[i],
            true_positives: tp,
            precision: ratio_or_zero::<T>(tp, predicted[i]) * hundred,
            recall: ratio_or_zero::<T>(tp, support[i]) * hundred,
            f1: ratio_or_zero::<T>(2 * tp, 2 * tp + fp + fn_) * hundred,
            zero_support: support[i] == 0,
            zero_predicted: predicted[i] == 0,
        });
    }

    let n_classes = T::from_count(per_class.len() as u64);
    let macro_f1 = per_class.iter().fold(T::zero(), |a, c| a + c.f1) / n_classes;
    let supported: Vec<&ClassMetrics<T>> = per_class.iter().filter(|c| !c.zero_support).collect();
    let balanced_accuracy = supported.iter().fold(T::zero(), |a, c| a + c.recall)
        / T::from_count(supported.len() as u64);

    Ok(MetricReport {
        model_tag: None,
        total,
        correct: matrix.trace(),
        accuracy: ratio_or_zero::<T>(matrix.trace(), total) * hundred,
        balanced_accuracy,
        micro_f1: ratio_or_zero::<T>(2 * tp_sum, 2 * tp_sum + fp_sum + fn_sum) * hundred,
        macro_f1,
        per_class,
    })
}

impl<T: Real> MetricReport<T> {
    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.model_tag = Some(tag.into());
        self
    }

    pub fn class(&self, label: &str) -> Option<&ClassMetrics<T>> {
        self.per_class.iter().find(|c| c.label == label)
    }

    /// Plain-text table, percents rounded half-up to two decimals.
    pub fn to_text_table(&self) -> String {
        let width = self
            .per_class
            .iter()
            .map(|c| c.label.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut s = String::new();
        if let Some(tag) = &self.model_tag {
            let _ = writeln!(s, "model: {tag}");
        }
        let _ = writeln!(
            s,
            "{:<width$} {:>9} {:>9} {:>9} {:>8}",
            "class", "precision", "recall", "f1", "support"
        );
        for c in &self.per_class {
            let _ = writeln!(
                s,
                "{:<width$} {:>9.2} {:>9.2} {:>9.2} {:>8}{}",
                c.label,
                round2(c.precision.as_f64()),
                round2(c.recall.as_f64()),
                round2(c.f1.as_f64()),
                c.support,
                if c.zero_support { "  (no support)" } else { "" },
            );
        }
        let _ = writeln!(s);
        for (name, v) in [
            ("accuracy", self.accuracy),
            ("balanced accuracy", self.balanced_accuracy),
            ("micro-F1", self.micro_f1),
            ("macro-F1", self.macro_f1),
        ] {
            let _ = writeln!(s, "{name:<18} {:>7.2}", round2(v.as_f64()));
        }
        let _ = writeln!(s, "{:<18} {:>7}", "images", self.total);
        s
    }
}

/// Disease-class recalls of one model generation; the healthy class is left out.
pub fn recall_table(
    matrix: &ConfusionMatrix,
    catalog: &ClassCatalog,
    model_tag: &str,
) -> RecallTable {
    let support = matrix.support();
    let mut values = Vec::with_capacity(catalog.num_diseases());
    let mut zero = Vec::new();
    for (i, label) in catalog.disease_classes().iter().enumerate() {
        let r: f64 = ratio_or_zero::<f64>(matrix.count(i, i), support[i]) * 100.0;
        values.push((label.clone(), r));
        if support[i] == 0 {
            zero.push(label.clone());
        }
    }
    RecallTable::new(model_tag, catalog, values, zero)
        .expect("recall table covers the catalog by construction")
}

/// Rebuilds a recall table from a serialized report.
pub fn recall_table_from_report<T: Real>(
    report: &MetricReport<T>,
    catalog: &ClassCatalog,
    model_tag: &str,
) -> Result<RecallTable, crate::model::RecallTableError> {
    let mut values = Vec::new();
    let mut zero = Vec::new();
    for label in catalog.disease_classes() {
        if let Some(c) = report.class(label) {
            values.push((label.clone(), c.recall.as_f64()));
            if c.zero_support {
                zero.push(label.clone());
            }
        }
    }
    RecallTable::new(model_tag, catalog, values, zero)
}
