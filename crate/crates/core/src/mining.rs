//! Hard-sample harvesting on unannotated healthy images.
//!
//! Every disease box a detector fires on a healthy image is a false positive.
//! Images with at least one surviving box are indexed under the class of
//! their strongest box and all of their surviving boxes become healthy-class
//! pseudo-annotations.

use std::collections::{HashMap, HashSet};

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Annotation, BoundingBox, ClassCatalog, Detection, DetectionSet, ImageRecord};
use crate::rules::strongest;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MiningError {
    #[error("image `{image_id}` has ground truth `{label}`; only healthy images can be mined")]
    NonHealthyInput { image_id: String, label: String },
    #[error("detection set has no entry for image `{0}`")]
    CoverageMismatch(String),
    #[error("confidence floor must be within [0, 1], got {0}")]
    InvalidFloor(f64),
    #[error("hard-sample class `{0}` is not a disease class")]
    InvalidClassKey(String),
    #[error("image `{0}` appears more than once in the hard-sample index")]
    DuplicateImage(String),
    #[error("hard-sample image `{0}` has no boxes")]
    EmptyBoxes(String),
    #[error("hard-sample image `{image_id}` key confidence {value} is outside [0, 1]")]
    InvalidKeyConfidence { image_id: String, value: f64 },
    #[error("hard-sample image `{image_id}` box {index}: {error}")]
    InvalidBox {
        image_id: String,
        index: usize,
        error: crate::model::BoxError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    /// Boxes below this confidence are discarded before mining.
    pub confidence_floor: f64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            confidence_floor: 0.25,
        }
    }
}

impl MiningConfig {
    pub fn new(confidence_floor: f64) -> Result<Self, MiningError> {
        if !(0.0..=1.0).contains(&confidence_floor) {
            return Err(MiningError::InvalidFloor(confidence_floor));
        }
        Ok(MiningConfig { confidence_floor })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardSampleImage {
    pub image_id: String,
    pub boxes: Vec<BoundingBox>,
    /// Confidence of the box that decided the class key.
    pub key_confidence: f64,
}

/// Disease class to the healthy images mis-detected as that class.
/// Only classes with at least one image are present; keys follow catalog order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HardSampleIndex {
    classes: IndexMap<String, Vec<HardSampleImage>>,
}

impl HardSampleIndex {
    /// Validates and assembles an index. Empty class lists are dropped.
    pub fn new(
        catalog: &ClassCatalog,
        classes: impl IntoIterator<Item = (String, Vec<HardSampleImage>)>,
    ) -> Result<Self, MiningError> {
        let mut by_class: HashMap<String, Vec<HardSampleImage>> = HashMap::new();
        let mut seen = HashSet::new();
        for (key, images) in classes {
            if !catalog.is_disease(&key) {
                return Err(MiningError::InvalidClassKey(key));
            }
            for img in &images {
                if !seen.insert(img.image_id.clone()) {
                    return Err(MiningError::DuplicateImage(img.image_id.clone()));
                }
                if img.boxes.is_empty() {
                    return Err(MiningError::EmptyBoxes(img.image_id.clone()));
                }
                if !(0.0..=1.0).contains(&img.key_confidence) {
                    return Err(MiningError::InvalidKeyConfidence {
                        image_id: img.image_id.clone(),
                        value: img.key_confidence,
                    });
                }
                for (index, b) in img.boxes.iter().enumerate() {
                    b.validate().map_err(|error| MiningError::InvalidBox {
                        image_id: img.image_id.clone(),
                        index,
                        error,
                    })?;
                }
            }
            by_class.entry(key).or_default().extend(images);
        }
        let mut out = IndexMap::new();
        for label in catalog.disease_classes() {
            if let Some(images) = by_class.remove(label) {
                if !images.is_empty() {
                    out.insert(label.clone(), images);
                }
            }
        }
        Ok(HardSampleIndex { classes: out })
    }

    pub fn get(&self, class: &str) -> Option<&[HardSampleImage]> {
        self.classes.get(class).map(Vec::as_slice)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.classes.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[HardSampleImage])> {
        self.classes.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn total_images(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    /// Copy of the index without the named classes.
    pub fn without_classes(&self, removed: &HashSet<&str>) -> HardSampleIndex {
        HardSampleIndex {
            classes: self
                .classes
                .iter()
                .filter(|(k, _)| !removed.contains(k.as_str()))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }
}

/// Surviving false positives on one healthy image: disease boxes at or above
/// the floor. Healthy-class boxes are correct predictions and never survive.
fn surviving<'a>(
    dets: &'a [Detection],
    config: &MiningConfig,
    catalog: &ClassCatalog,
) -> Vec<&'a Detection> {
    dets.iter()
        .filter(|d| d.confidence >= config.confidence_floor && catalog.is_disease(&d.class_label))
        .collect()
}

pub fn mine_hard_samples(
    healthy: &[ImageRecord],
    detections: &DetectionSet,
    config: &MiningConfig,
    catalog: &ClassCatalog,
) -> Result<HardSampleIndex, MiningError> {
    MiningConfig::new(config.confidence_floor)?;
    for rec in healthy {
        if !catalog.is_healthy(&rec.true_label) {
            return Err(MiningError::NonHealthyInput {
                image_id: rec.image_id.clone(),
                label: rec.true_label.clone(),
            });
        }
        if detections.get(&rec.image_id).is_none() {
            return Err(MiningError::CoverageMismatch(rec.image_id.clone()));
        }
    }

    let mined: Vec<Option<(String, HardSampleImage)>> = healthy
        .par_iter()
        .map(|rec| {
            let kept: Vec<Detection> = surviving(
                detections.get(&rec.image_id).unwrap_or_default(),
                config,
                catalog,
            )
            .into_iter()
            .cloned()
            .collect();
            let key = strongest(&kept, catalog)?;
            Some((
                key.class_label.clone(),
                HardSampleImage {
                    image_id: rec.image_id.clone(),
                    key_confidence: key.confidence,
                    boxes: kept.iter().map(|d| d.bbox).collect(),
                },
            ))
        })
        .collect();

    let mut grouped: IndexMap<String, Vec<HardSampleImage>> = IndexMap::new();
    for (key, img) in mined.into_iter().flatten() {
        grouped.entry(key).or_default().push(img);
    }
    HardSampleIndex::new(catalog, grouped)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexStats {
    /// Image count for every disease class in catalog order, zeros included.
    pub per_class: IndexMap<String, usize>,
    pub total_images: usize,
    pub total_boxes: usize,
}

pub fn index_stats(index: &HardSampleIndex, catalog: &ClassCatalog) -> IndexStats {
    let per_class: IndexMap<String, usize> = catalog
        .disease_classes()
        .iter()
        .map(|l| (l.clone(), index.get(l).map_or(0, <[_]>::len)))
        .collect();
    IndexStats {
        total_images: per_class.values().sum(),
        total_boxes: index
            .iter()
            .flat_map(|(_, v)| v)
            .map(|i| i.boxes.len())
            .sum(),
        per_class,
    }
}

/// Converts mined images into healthy-labelled training records. The class
/// key survives only as `hard_sample_key` metadata.
pub fn as_annotations(index: &HardSampleIndex, catalog: &ClassCatalog) -> Vec<ImageRecord> {
    let healthy = catalog.healthy_label();
    index
        .iter()
        .flat_map(|(key, images)| {
            images.iter().map(move |img| {
                let (w, h) = img.boxes.first().map_or((0, 0), |b| (b.image_w, b.image_h));
                ImageRecord {
                    image_id: img.image_id.clone(),
                    true_label: healthy.to_string(),
                    image_w: w,
                    image_h: h,
                    annotations: img
                        .boxes
                        .iter()
                        .map(|b| Annotation {
                            label: healthy.to_string(),
                            bbox: *b,
                        })
                        .collect(),
                    hard_sample_key: Some(key.to_string()),
                }
            })
        })
        .collect()
}
