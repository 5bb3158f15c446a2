//! Shared domain types: class catalogs, boxes, detections, image records,
//! detection sets and recall tables.
//!
//! Everything here is plain data. Validation happens once, at construction
//! (`ClassCatalog::new`, `validate_dataset`, `DetectionSet::covering`), and
//! the validated values are immutable afterwards.

use std::collections::{HashMap, HashSet};
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Canonical class index: `0..N` are diseases, `N` is the healthy class.
pub type ClassIndex = usize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CatalogError {
    #[error("duplicate class label `{0}`")]
    DuplicateLabel(String),
    #[error("healthy label `{0}` is also listed as a disease class")]
    HealthyCollision(String),
    #[error("class labels must be non-empty strings")]
    EmptyLabel,
}

/// Ordered set of disease labels plus the distinguished healthy label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CatalogDocument", into = "CatalogDocument")]
pub struct ClassCatalog {
    disease_classes: Vec<String>,
    healthy_label: String,
    #[serde(skip)]
    index: HashMap<String, ClassIndex>,
}

#[derive(Serialize, Deserialize)]
struct CatalogDocument {
    disease_classes: Vec<String>,
    healthy_label: String,
}

impl TryFrom<CatalogDocument> for ClassCatalog {
    type Error = CatalogError;

    fn try_from(doc: CatalogDocument) -> Result<Self, Self::Error> {
        ClassCatalog::new(doc.disease_classes, doc.healthy_label)
    }
}

impl From<ClassCatalog> for CatalogDocument {
    fn from(c: ClassCatalog) -> Self {
        CatalogDocument {
            disease_classes: c.disease_classes,
            healthy_label: c.healthy_label,
        }
    }
}

impl ClassCatalog {
    /// Builds a catalog, preserving the caller's disease order.
    pub fn new<S: Into<String>>(
        disease_labels: impl IntoIterator<Item = S>,
        healthy_label: impl Into<String>,
    ) -> Result<Self, CatalogError> {
        let healthy_label = healthy_label.into();
        if healthy_label.is_empty() {
            return Err(CatalogError::EmptyLabel);
        }
        let mut disease_classes = Vec::new();
        let mut index = HashMap::new();
        for label in disease_labels {
            let label = label.into();
            if label.is_empty() {
                return Err(CatalogError::EmptyLabel);
            }
            if label == healthy_label {
                return Err(CatalogError::HealthyCollision(label));
            }
            if index.insert(label.clone(), disease_classes.len()).is_some() {
                return Err(CatalogError::DuplicateLabel(label));
            }
            disease_classes.push(label);
        }
        index.insert(healthy_label.clone(), disease_classes.len());
        Ok(ClassCatalog {
            disease_classes,
            healthy_label,
            index,
        })
    }

    pub fn disease_classes(&self) -> &[String] {
        &self.disease_classes
    }

    pub fn healthy_label(&self) -> &str {
        &self.healthy_label
    }

    /// Number of disease classes (the healthy class is not counted).
    pub fn num_diseases(&self) -> usize {
        self.disease_classes.len()
    }

    /// Number of classes including healthy.
    pub fn num_classes(&self) -> usize {
        self.disease_classes.len() + 1
    }

    pub fn healthy_index(&self) -> ClassIndex {
        self.disease_classes.len()
    }

    pub fn index_of(&self, label: &str) -> Option<ClassIndex> {
        self.index.get(label).copied()
    }

    pub fn label(&self, index: ClassIndex) -> Option<&str> {
        match index.cmp(&self.disease_classes.len()) {
            std::cmp::Ordering::Less => Some(&self.disease_classes[index]),
            std::cmp::Ordering::Equal => Some(&self.healthy_label),
            std::cmp::Ordering::Greater => None,
        }
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index.contains_key(label)
    }

    pub fn is_healthy(&self, label: &str) -> bool {
        label == self.healthy_label
    }

    pub fn is_disease(&self, label: &str) -> bool {
        self.contains(label) && !self.is_healthy(label)
    }

    /// All labels in canonical order, healthy last.
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.disease_classes
            .iter()
            .map(String::as_str)
            .chain(std::iter::once(self.healthy_label.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoxError {
    #[error("image dimensions must be positive, got {0}x{1}")]
    ImageSize(u32, u32),
    #[error("`{field}` must be finite, got {value}")]
    NonFinite { field: &'static str, value: f64 },
    #[error("`{field}` must be non-negative, got {value}")]
    Negative { field: &'static str, value: f64 },
    #[error("`{field}` must be positive, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("`{field}` extends to {extent} beyond image {axis} {limit}")]
    OutOfBounds {
        field: &'static str,
        axis: &'static str,
        extent: f64,
        limit: u32,
    },
}

impl BoxError {
    /// Name of the offending box field.
    pub fn field(&self) -> &'static str {
        match self {
            BoxError::ImageSize(..) => "image_w",
            BoxError::NonFinite { field, .. }
            | BoxError::Negative { field, .. }
            | BoxError::NonPositive { field, .. }
            | BoxError::OutOfBounds { field, .. } => field,
        }
    }
}

/// Axis-aligned box in pixels: top-left corner plus width/height, together
/// with the dimensions of the image it lives in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub image_w: u32,
    pub image_h: u32,
}

impl BoundingBox {
    pub fn new(
        x: f64,
        y: f64,
        w: f64,
        h: f64,
        image_w: u32,
        image_h: u32,
    ) -> Result<Self, BoxError> {
        let b = BoundingBox {
            x,
            y,
            w,
            h,
            image_w,
            image_h,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), BoxError> {
        if self.image_w == 0 || self.image_h == 0 {
            return Err(BoxError::ImageSize(self.image_w, self.image_h));
        }
        for (field, value) in [("x", self.x), ("y", self.y), ("w", self.w), ("h", self.h)] {
            if !value.is_finite() {
                return Err(BoxError::NonFinite { field, value });
            }
        }
        for (field, value) in [("x", self.x), ("y", self.y)] {
            if value < 0.0 {
                return Err(BoxError::Negative { field, value });
            }
        }
        for (field, value) in [("w", self.w), ("h", self.h)] {
            if value <= 0.0 {
                return Err(BoxError::NonPositive { field, value });
            }
        }
        if self.x + self.w > f64::from(self.image_w) {
            return Err(BoxError::OutOfBounds {
                field: "w",
                axis: "width",
                extent: self.x + self.w,
                limit: self.image_w,
            });
        }
        if self.y + self.h > f64::from(self.image_h) {
            return Err(BoxError::OutOfBounds {
                field: "h",
                axis: "height",
                extent: self.y + self.h,
                limit: self.image_h,
            });
        }
        Ok(())
    }

    /// Lexicographic geometry key used for deterministic tie-breaks.
    pub(crate) fn geometry_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.x
            .total_cmp(&other.x)
            .then(self.y.total_cmp(&other.y))
            .then(self.w.total_cmp(&other.w))
            .then(self.h.total_cmp(&other.h))
    }
}

/// One predicted box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_label: String,
    pub confidence: f64,
    pub bbox: BoundingBox,
}

/// A labelled box attached to an image record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub label: String,
    pub bbox: BoundingBox,
}

/// One image with its ground-truth label and (possibly empty) annotations.
///
/// `hard_sample_key` is set only on pseudo-annotated healthy hard-samples and
/// records the disease class the image was mined under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub true_label: String,
    pub image_w: u32,
    pub image_h: u32,
    pub annotations: Vec<Annotation>,
    pub hard_sample_key: Option<String>,
}

impl ImageRecord {
    pub fn new(
        image_id: impl Into<String>,
        true_label: impl Into<String>,
        image_w: u32,
        image_h: u32,
    ) -> Self {
        ImageRecord {
            image_id: image_id.into(),
            true_label: true_label.into(),
            image_w,
            image_h,
            annotations: Vec::new(),
            hard_sample_key: None,
        }
    }

    pub fn with_annotation(mut self, label: impl Into<String>, bbox: BoundingBox) -> Self {
        self.annotations.push(Annotation {
            label: label.into(),
            bbox,
        });
        self
    }
}

/// A single broken dataset invariant.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("image id `{0}` appears more than once")]
    DuplicateImageId(String),
    #[error("image `{image_id}` uses unknown label `{label}`")]
    UnknownLabel { image_id: String, label: String },
    #[error("image `{image_id}` annotation {annotation}: {error}")]
    BoxOutOfBounds {
        image_id: String,
        annotation: usize,
        error: BoxError,
    },
    #[error("healthy image `{0}` carries annotations but is not a mined hard-sample")]
    HealthyWithAnnotations(String),
    #[error(
        "image `{image_id}` annotation {annotation} is labelled `{label}`, expected `{expected}`"
    )]
    AnnotationLabelMismatch {
        image_id: String,
        annotation: usize,
        label: String,
        expected: String,
    },
    #[error("image `{image_id}` has invalid dimensions {image_w}x{image_h}")]
    InvalidImageSize {
        image_id: String,
        image_w: u32,
        image_h: u32,
    },
    #[error("image id must be non-empty")]
    EmptyImageId,
    #[error("image `{image_id}` has hard-sample key `{key}` which is not a disease class")]
    InvalidHardSampleKey { image_id: String, key: String },
}

/// Every violation found while validating a dataset.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("dataset failed validation with {} violation(s); first: {}", .0.len(), .0[0])]
pub struct ValidationErrors(pub Vec<Violation>);

/// A record list that satisfied every dataset invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<ImageRecord>,
    positions: HashMap<String, usize>,
}

impl Dataset {
    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<ImageRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageRecord> {
        self.positions.get(image_id).map(|&i| &self.records[i])
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.positions.contains_key(image_id)
    }

    /// Records whose ground truth is the healthy class.
    pub fn healthy<'a>(
        &'a self,
        catalog: &'a ClassCatalog,
    ) -> impl Iterator<Item = &'a ImageRecord> + 'a {
        self.records
            .iter()
            .filter(|r| catalog.is_healthy(&r.true_label))
    }

    /// Records whose ground truth is a disease class.
    pub fn diseased<'a>(
        &'a self,
        catalog: &'a ClassCatalog,
    ) -> impl Iterator<Item = &'a ImageRecord> + 'a {
        self.records
            .iter()
            .filter(|r| !catalog.is_healthy(&r.true_label))
    }
}

/// Checks every record invariant and returns the dataset only if none fail.
/// All violations are collected, not just the first.
pub fn validate_dataset(
    records: Vec<ImageRecord>,
    catalog: &ClassCatalog,
) -> Result<Dataset, ValidationErrors> {
    let mut violations = Vec::new();
    let mut positions = HashMap::with_capacity(records.len());
    let mut reported_dups = HashSet::new();

    for (pos, rec) in records.iter().enumerate() {
        if rec.image_id.is_empty() {
            violations.push(Violation::EmptyImageId);
        }
        if positions.insert(rec.image_id.clone(), pos).is_some()
            && reported_dups.insert(rec.image_id.clone())
        {
            violations.push(Violation::DuplicateImageId(rec.image_id.clone()));
        }
        if rec.image_w == 0 || rec.image_h == 0 {
            violations.push(Violation::InvalidImageSize {
                image_id: rec.image_id.clone(),
                image_w: rec.image_w,
                image_h: rec.image_h,
            });
        }
        let label_known = catalog.contains(&rec.true_label);
        if !label_known {
            violations.push(Violation::UnknownLabel {
                image_id: rec.image_id.clone(),
                label: rec.true_label.clone(),
            });
        }
        let healthy = catalog.is_healthy(&rec.true_label);
        match &rec.hard_sample_key {
            Some(key) if !healthy || !catalog.is_disease(key) => {
                violations.push(Violation::InvalidHardSampleKey {
                    image_id: rec.image_id.clone(),
                    key: key.clone(),
                });
            }
            None if healthy && !rec.annotations.is_empty() => {
                violations.push(Violation::HealthyWithAnnotations(rec.image_id.clone()));
            }
            _ => {}
        }
        for (i, ann) in rec.annotations.iter().enumerate() {
            if !catalog.contains(&ann.label) {
                violations.push(Violation::UnknownLabel {
                    image_id: rec.image_id.clone(),
                    label: ann.label.clone(),
                });
            } else if label_known && ann.label != rec.true_label {
                violations.push(Violation::AnnotationLabelMismatch {
                    image_id: rec.image_id.clone(),
                    annotation: i,
                    label: ann.label.clone(),
                    expected: rec.true_label.clone(),
                });
            }
            let mut bbox = ann.bbox;
            if bbox.image_w != rec.image_w || bbox.image_h != rec.image_h {
                // A box is checked against the image it is attached to.
                bbox.image_w = rec.image_w;
                bbox.image_h = rec.image_h;
            }
            if let Err(error) = bbox.validate() {
                if !matches!(error, BoxError::ImageSize(..)) {
                    violations.push(Violation::BoxOutOfBounds {
                        image_id: rec.image_id.clone(),
                        annotation: i,
                        error,
                    });
                }
            }
        }
    }

    if violations.is_empty() {
        Ok(Dataset { records, positions })
    } else {
        Err(ValidationErrors(violations))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoverageError {
    #[error("detection set has no entry for image `{0}`")]
    MissingImage(String),
    #[error("detection set references image `{0}` which is not in the dataset")]
    UnknownImage(String),
}

/// Per-image detection lists covering a companion dataset. An image without
/// detections maps to an empty list, never to absence.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionSet {
    entries: IndexMap<String, Vec<Detection>>,
}

impl DetectionSet {
    /// Builds a set from explicit entries; dataset images missing from
    /// `entries` receive an empty list. Entries for unknown images are an
    /// error. Ordering follows the dataset.
    pub fn covering(
        dataset: &Dataset,
        mut entries: HashMap<String, Vec<Detection>>,
    ) -> Result<Self, CoverageError> {
        let mut out = IndexMap::with_capacity(dataset.len());
        for rec in dataset.records() {
            let dets = entries.remove(&rec.image_id).unwrap_or_default();
            out.insert(rec.image_id.clone(), dets);
        }
        if let Some(extra) = entries.into_keys().min() {
            return Err(CoverageError::UnknownImage(extra));
        }
        Ok(DetectionSet { entries: out })
    }

    /// Builds a set without a companion dataset; insertion order is kept.
    pub fn from_entries(entries: impl IntoIterator<Item = (String, Vec<Detection>)>) -> Self {
        DetectionSet {
            entries: entries.into_iter().collect(),
        }
    }

    pub fn get(&self, image_id: &str) -> Option<&[Detection]> {
        self.entries.get(image_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[Detection])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Checks that exactly the dataset's images are covered.
    pub fn check_covers(&self, dataset: &Dataset) -> Result<(), CoverageError> {
        for rec in dataset.records() {
            if !self.entries.contains_key(&rec.image_id) {
                return Err(CoverageError::MissingImage(rec.image_id.clone()));
            }
        }
        if let Some(extra) = self.entries.keys().find(|id| !dataset.contains(id)) {
            return Err(CoverageError::UnknownImage(extra.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecallTableError {
    #[error("recall table is missing disease class `{0}`")]
    MissingClass(String),
    #[error("recall table has entry for `{0}` which is not a disease class")]
    UnknownClass(String),
    #[error("recall for `{label}` must be within [0, 100], got {value}")]
    OutOfRange { label: String, value: f64 },
}

/// Per-disease-class recall (percent) for one model generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallTable {
    pub model_tag: String,
    recalls: IndexMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    zero_support: Vec<String>,
}

impl RecallTable {
    /// Builds a table that must hold exactly one value per disease class.
    pub fn new(
        model_tag: impl Into<String>,
        catalog: &ClassCatalog,
        values: impl IntoIterator<Item = (String, f64)>,
        zero_support: impl IntoIterator<Item = String>,
    ) -> Result<Self, RecallTableError> {
        let mut given: HashMap<String, f64> = HashMap::new();
        for (label, value) in values {
            if !catalog.is_disease(&label) {
                return Err(RecallTableError::UnknownClass(label));
            }
            if !(0.0..=100.0).contains(&value) {
                return Err(RecallTableError::OutOfRange { label, value });
            }
            given.insert(label, value);
        }
        let mut recalls = IndexMap::with_capacity(catalog.num_diseases());
        for label in catalog.disease_classes() {
            match given.get(label) {
                Some(&v) => {
                    recalls.insert(label.clone(), v);
                }
                None => return Err(RecallTableError::MissingClass(label.clone())),
            }
        }
        let mut zero_support: Vec<String> = zero_support.into_iter().collect();
        zero_support.sort_by_key(|l| catalog.index_of(l));
        zero_support.dedup();
        Ok(RecallTable {
            model_tag: model_tag.into(),
            recalls,
            zero_support,
        })
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.recalls.get(label).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.recalls.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Classes whose recall was recorded as 0 because they had no support.
    pub fn zero_support(&self) -> &[String] {
        &self.zero_support
    }

    pub fn is_zero_support(&self, label: &str) -> bool {
        self.zero_support.iter().any(|l| l == label)
    }
}

impl fmt::Display for RecallTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.model_tag)?;
        for (label, v) in &self.recalls {
            write!(f, " {label}={v:.2}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn cucumber() -> ClassCatalog {
        ClassCatalog::new(["CCYV", "CLS", "DM", "GM", "MYSV", "MD", "PM"], "HE").unwrap()
    }

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox {
            x,
            y,
            w,
            h,
            image_w: 100,
            image_h: 100,
        }
    }

    #[test]
    fn catalog_indices_are_canonical() {
        let c = cucumber();
        assert_eq!(c.num_diseases(), 7);
        assert_eq!(c.healthy_index(), 7);
        assert_eq!(c.index_of("CCYV"), Some(0));
        assert_eq!(c.index_of("PM"), Some(6));
        assert_eq!(c.index_of("HE"), Some(7));
        for (i, l) in c.labels().enumerate() {
            assert_eq!(c.index_of(l), Some(i));
            assert_eq!(c.label(i), Some(l));
        }
        assert_eq!(c.label(8), None);
    }

    #[test]
    fn tomato_catalog() {
        let c = ClassCatalog::new(
            ["BC", "BW", "CLM", "CTS", "GM", "LB", "LM", "PM", "YLC"],
            "HE",
        )
        .unwrap();
        assert_eq!(c.num_classes(), 10);
        assert_eq!(c.healthy_index(), 9);
    }

    #[test]
    fn catalog_errors() {
        assert_eq!(
            ClassCatalog::new(["A"], "A").unwrap_err(),
            CatalogError::HealthyCollision("A".into())
        );
        assert_eq!(
            ClassCatalog::new(["A", "B", "A"], "HE").unwrap_err(),
            CatalogError::DuplicateLabel("A".into())
        );
        assert_eq!(
            ClassCatalog::new(["A", ""], "HE").unwrap_err(),
            CatalogError::EmptyLabel
        );
        assert_eq!(
            ClassCatalog::new(["A"], "").unwrap_err(),
            CatalogError::EmptyLabel
        );
        // labels are case-sensitive
        assert!(ClassCatalog::new(["md", "MD"], "HE").is_ok());
    }

    #[test]
    fn catalog_json_round_trip() {
        let c = cucumber();
        let json = serde_json::to_string(&c).unwrap();
        let back: ClassCatalog = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.index_of("MD"), Some(5));
        assert!(serde_json::from_str::<ClassCatalog>(
            r#"{"disease_classes":["A"],"healthy_label":"A"}"#
        )
        .is_err());
    }

    #[test]
    fn box_constraints() {
        assert!(BoundingBox::new(0.0, 0.0, 100.0, 100.0, 100, 100).is_ok());
        assert_eq!(
            BoundingBox::new(-1.0, 0.0, 1.0, 1.0, 100, 100)
                .unwrap_err()
                .field(),
            "x"
        );
        assert_eq!(
            BoundingBox::new(0.0, 0.0, 0.0, 1.0, 100, 100)
                .unwrap_err()
                .field(),
            "w"
        );
        assert_eq!(
            BoundingBox::new(50.0, 0.0, 51.0, 1.0, 100, 100)
                .unwrap_err()
                .field(),
            "w"
        );
        assert_eq!(
            BoundingBox::new(0.0, 0.0, 1.0, f64::NAN, 100, 100)
                .unwrap_err()
                .field(),
            "h"
        );
        assert!(BoundingBox::new(0.0, 0.0, 1.0, 1.0, 0, 100).is_err());
    }

    #[test]
    fn empty_dataset_is_valid() {
        let d = validate_dataset(vec![], &cucumber()).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let recs = vec![
            ImageRecord::new("img1", "HE", 10, 10),
            ImageRecord::new("img1", "MD", 10, 10),
        ];
        let err = validate_dataset(recs, &cucumber()).unwrap_err();
        assert_eq!(err.0, vec![Violation::DuplicateImageId("img1".into())]);
    }

    #[test]
    fn each_invariant_is_checked_independently() {
        let c = cucumber();
        let good =
            ImageRecord::new("ok", "MD", 100, 100).with_annotation("MD", bx(1.0, 1.0, 10.0, 10.0));
        let fixture = vec![
            (ImageRecord::new("ok", "HE", 100, 100), "dup"),
            (ImageRecord::new("u", "XX", 100, 100), "unknown"),
            (
                ImageRecord::new("b", "PM", 100, 100)
                    .with_annotation("PM", bx(95.0, 0.0, 10.0, 10.0)),
                "bounds",
            ),
            (
                ImageRecord::new("h", "HE", 100, 100).with_annotation("HE", bx(0.0, 0.0, 1.0, 1.0)),
                "healthy",
            ),
            (
                ImageRecord::new("m", "PM", 100, 100).with_annotation("MD", bx(0.0, 0.0, 1.0, 1.0)),
                "mismatch",
            ),
        ];
        for (bad, what) in fixture {
            let err = validate_dataset(vec![good.clone(), bad], &c).unwrap_err();
            assert_eq!(err.0.len(), 1, "{what}: {:?}", err.0);
            let ok = matches!(
                (&err.0[0], what),
                (Violation::DuplicateImageId(_), "dup")
                    | (Violation::UnknownLabel { .. }, "unknown")
                    | (Violation::BoxOutOfBounds { .. }, "bounds")
                    | (Violation::HealthyWithAnnotations(_), "healthy")
                    | (Violation::AnnotationLabelMismatch { .. }, "mismatch")
            );
            assert!(ok, "{what}: {:?}", err.0);
        }
    }

    #[test]
    fn reports_all_violations() {
        let recs = vec![
            ImageRecord::new("a", "XX", 100, 100),
            ImageRecord::new("b", "HE", 100, 100).with_annotation("HE", bx(0.0, 0.0, 1.0, 1.0)),
            ImageRecord::new("a", "MD", 100, 100),
        ];
        let err = validate_dataset(recs, &cucumber()).unwrap_err();
        assert_eq!(err.0.len(), 3);
    }

    #[test]
    fn hard_sample_records_may_carry_healthy_boxes() {
        let mut r =
            ImageRecord::new("hs", "HE", 100, 100).with_annotation("HE", bx(0.0, 0.0, 5.0, 5.0));
        r.hard_sample_key = Some("MD".into());
        assert!(validate_dataset(vec![r.clone()], &cucumber()).is_ok());
        r.hard_sample_key = Some("HE".into());
        assert!(validate_dataset(vec![r], &cucumber()).is_err());
    }

    #[test]
    fn detection_set_fills_missing_with_empty() {
        let c = cucumber();
        let d = validate_dataset(
            vec![
                ImageRecord::new("c1", "MD", 10, 10),
                ImageRecord::new("c2", "HE", 10, 10),
                ImageRecord::new("c3", "PM", 10, 10),
            ],
            &c,
        )
        .unwrap();
        let det = Detection {
            class_label: "MD".into(),
            confidence: 0.5,
            bbox: BoundingBox::new(0.0, 0.0, 1.0, 1.0, 10, 10).unwrap(),
        };
        let set =
            DetectionSet::covering(&d, HashMap::from([("c1".to_string(), vec![det])])).unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.get("c1").unwrap().len(), 1);
        assert!(set.get("c2").unwrap().is_empty());
        assert!(set.check_covers(&d).is_ok());
        let err =
            DetectionSet::covering(&d, HashMap::from([("zz".to_string(), vec![])])).unwrap_err();
        assert_eq!(err, CoverageError::UnknownImage("zz".into()));
    }

    #[test]
    fn recall_table_requires_every_disease() {
        let c = ClassCatalog::new(["A", "B"], "HE").unwrap();
        let t = RecallTable::new("org", &c, [("A".into(), 50.0), ("B".into(), 100.0)], []).unwrap();
        assert_eq!(t.get("A"), Some(50.0));
        assert!(matches!(
            RecallTable::new("org", &c, [("A".into(), 50.0)], []),
            Err(RecallTableError::MissingClass(_))
        ));
        assert!(matches!(
            RecallTable::new("org", &c, [("A".into(), 50.0), ("B".into(), 101.0)], []),
            Err(RecallTableError::OutOfRange { .. })
        ));
        assert!(matches!(
            RecallTable::new("org", &c, [("HE".into(), 50.0)], []),
            Err(RecallTableError::UnknownClass(_))
        ));
    }
}
