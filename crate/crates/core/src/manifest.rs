//! Retraining manifests: original disease images plus retained hard-samples.

use std::collections::HashSet;
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mining::{as_annotations, HardSampleIndex};
use crate::model::{ClassCatalog, ImageRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenerationTag {
    Org,
    Hsm,
    Hsrem,
}

impl GenerationTag {
    pub fn as_str(self) -> &'static str {
        match self {
            GenerationTag::Org => "org",
            GenerationTag::Hsm => "hsm",
            GenerationTag::Hsrem => "hsrem",
        }
    }
}

impl fmt::Display for GenerationTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for GenerationTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "org" => Ok(GenerationTag::Org),
            "hsm" => Ok(GenerationTag::Hsm),
            "hsrem" => Ok(GenerationTag::Hsrem),
            other => Err(format!(
                "unknown generation tag `{other}` (expected org, hsm or hsrem)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ManifestError {
    #[error("image id `{0}` appears more than once in the manifest")]
    IdCollision(String),
    #[error("generation `{tag}` {reason}")]
    TagMismatch {
        tag: GenerationTag,
        reason: &'static str,
    },
    #[error("image `{image_id}` with label `{label}` is not a disease image")]
    NotDiseaseImage { image_id: String, label: String },
    #[error("image `{0}` is not a healthy hard-sample record")]
    NotHardSample(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingManifest {
    pub generation: GenerationTag,
    pub disease_records: Vec<ImageRecord>,
    pub hard_sample_records: Vec<ImageRecord>,
}

impl TrainingManifest {
    pub fn total_images(&self) -> usize {
        self.disease_records.len() + self.hard_sample_records.len()
    }

    /// Disease records first, then hard-samples.
    pub fn records(&self) -> impl Iterator<Item = &ImageRecord> {
        self.disease_records.iter().chain(&self.hard_sample_records)
    }

    /// Reassembles a manifest from a flat record list, splitting on the
    /// hard-sample key.
    pub fn from_records(
        records: Vec<ImageRecord>,
        catalog: &ClassCatalog,
        generation: GenerationTag,
    ) -> Result<Self, ManifestError> {
        let (hard, disease): (Vec<_>, Vec<_>) = records
            .into_iter()
            .partition(|r| r.hard_sample_key.is_some());
        assemble(disease, hard, catalog, generation)
    }

    /// Hard-sample class keys present in the manifest, catalog order.
    pub fn hard_sample_keys<'a>(&self, catalog: &'a ClassCatalog) -> Vec<&'a str> {
        let keys: HashSet<&str> = self
            .hard_sample_records
            .iter()
            .filter_map(|r| r.hard_sample_key.as_deref())
            .collect();
        catalog
            .disease_classes()
            .iter()
            .map(String::as_str)
            .filter(|k| keys.contains(k))
            .collect()
    }
}

fn assemble(
    disease_records: Vec<ImageRecord>,
    hard_sample_records: Vec<ImageRecord>,
    catalog: &ClassCatalog,
    generation: GenerationTag,
) -> Result<TrainingManifest, ManifestError> {
    if generation == GenerationTag::Org && !hard_sample_records.is_empty() {
        return Err(ManifestError::TagMismatch {
            tag: generation,
            reason: "cannot include hard-samples",
        });
    }
    let mut ids = HashSet::with_capacity(disease_records.len() + hard_sample_records.len());
    for r in &disease_records {
        if !catalog.is_disease(&r.true_label) {
            return Err(ManifestError::NotDiseaseImage {
                image_id: r.image_id.clone(),
                label: r.true_label.clone(),
            });
        }
        if !ids.insert(r.image_id.as_str()) {
            return Err(ManifestError::IdCollision(r.image_id.clone()));
        }
    }
    for r in &hard_sample_records {
        if !catalog.is_healthy(&r.true_label) || r.hard_sample_key.is_none() {
            return Err(ManifestError::NotHardSample(r.image_id.clone()));
        }
        if !ids.insert(r.image_id.as_str()) {
            return Err(ManifestError::IdCollision(r.image_id.clone()));
        }
    }
    Ok(TrainingManifest {
        generation,
        disease_records,
        hard_sample_records,
    })
}

/// Builds a manifest from disease images and an optional hard-sample index.
/// `org` takes no index; `hsm` and `hsrem` require one (it may be empty).
pub fn build_manifest(
    disease_records: &[ImageRecord],
    index: Option<&HardSampleIndex>,
    catalog: &ClassCatalog,
    generation: GenerationTag,
) -> Result<TrainingManifest, ManifestError> {
    let hard = match (generation, index) {
        (GenerationTag::Org, Some(_)) => {
            return Err(ManifestError::TagMismatch {
                tag: generation,
                reason: "cannot include hard-samples",
            })
        }
        (GenerationTag::Org, None) => Vec::new(),
        (_, None) => {
            return Err(ManifestError::TagMismatch {
                tag: generation,
                reason: "requires a hard-sample index",
            })
        }
        (_, Some(idx)) => as_annotations(idx, catalog),
    };
    assemble(disease_records.to_vec(), hard, catalog, generation)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub images: usize,
    pub boxes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestSummary {
    pub generation: GenerationTag,
    /// Every catalog class, healthy last; hard-samples count under healthy.
    pub per_class: IndexMap<String, ClassCounts>,
    /// Hard-sample images per mined class key.
    pub hard_samples_by_key: IndexMap<String, usize>,
    pub disease_images: usize,
    pub hard_sample_images: usize,
    pub total_images: usize,
    pub total_boxes: usize,
}

pub fn manifest_summary(manifest: &TrainingManifest, catalog: &ClassCatalog) -> ManifestSummary {
    let mut per_class: IndexMap<String, ClassCounts> = catalog
        .labels()
        .map(|l| (l.to_string(), ClassCounts::default()))
        .collect();
    let mut by_key: IndexMap<String, usize> = catalog
        .disease_classes()
        .iter()
        .map(|l| (l.clone(), 0))
        .collect();
    for r in manifest.records() {
        if let Some(c) = per_class.get_mut(&r.true_label) {
            c.images += 1;
            c.boxes += r.annotations.len();
        }
        if let Some(n) = r.hard_sample_key.as_ref().and_then(|k| by_key.get_mut(k)) {
            *n += 1;
        }
    }
    ManifestSummary {
        generation: manifest.generation,
        total_images: per_class.values().map(|c| c.images).sum(),
        total_boxes: per_class.values().map(|c| c.boxes).sum(),
        per_class,
        hard_samples_by_key: by_key,
        disease_images: manifest.disease_records.len(),
        hard_sample_images: manifest.hard_sample_records.len(),
    }
}
