//! Synthetic detector driven by a confusion kernel.
//!
//! Kernel entry `(i, j)` is the probability that an image of true class `i`
//! produces boxes of disease class `j`; whatever mass a row leaves over is the
//! chance the image produces nothing (and is therefore read as healthy). The
//! healthy column must be zero.
//!
//! Every image draws from its own ChaCha stream seeded by SHA-256 of the
//! profile seed and the image id, so output does not depend on iteration
//! order or thread count.
//!
//! Box geometry is uniform over the image. Nothing downstream interprets it.

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::metrics::{confusion, report, MetricReport, MetricsError};
use crate::model::{
    Annotation, BoundingBox, ClassCatalog, Dataset, Detection, DetectionSet, ImageRecord,
};
use crate::rules::{classify_dataset, Rule, RulesError};

const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulationError {
    #[error("invalid detector profile: {0}")]
    InvalidProfile(String),
    #[error("invalid degradation: {0}")]
    InvalidDegradation(String),
    #[error(transparent)]
    Rules(#[from] RulesError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn invalid(msg: impl Into<String>) -> SimulationError {
    SimulationError::InvalidProfile(msg.into())
}

/// File form of a profile: sparse, label-keyed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileDocument {
    pub seed: u64,
    pub boxes_per_hit: [u32; 2],
    pub default_confidence: [f64; 2],
    pub kernel: IndexMap<String, IndexMap<String, f64>>,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub confidence: IndexMap<String, IndexMap<String, [f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorProfile {
    labels: Vec<String>,
    kernel: Vec<Vec<f64>>,
    confidence: Vec<Vec<(f64, f64)>>,
    pub boxes_per_hit: (u32, u32),
    pub seed: u64,
}

impl DetectorProfile {
    /// Perfect detector: every disease image fires its own class, healthy
    /// images fire nothing.
    pub fn identity(catalog: &ClassCatalog, seed: u64) -> Self {
        let n = catalog.num_classes();
        let mut kernel = vec![vec![0.0; n]; n];
        for (i, row) in kernel.iter_mut().enumerate().take(catalog.num_diseases()) {
            row[i] = 1.0;
        }
        DetectorProfile {
            labels: catalog.labels().map(str::to_string).collect(),
            kernel,
            confidence: vec![vec![(0.5, 0.99); n]; n],
            boxes_per_hit: (1, 1),
            seed,
        }
    }

    pub fn from_document(
        doc: &ProfileDocument,
        catalog: &ClassCatalog,
    ) -> Result<Self, SimulationError> {
        let n = catalog.num_classes();
        let index = |l: &str| {
            catalog
                .index_of(l)
                .ok_or_else(|| invalid(format!("unknown class `{l}`")))
        };
        let mut kernel = vec![vec![0.0; n]; n];
        for (from, row) in &doc.kernel {
            let i = index(from)?;
            for (to, &p) in row {
                kernel[i][index(to)?] = p;
            }
        }
        let default = (doc.default_confidence[0], doc.default_confidence[1]);
        let mut confidence = vec![vec![default; n]; n];
        for (from, row) in &doc.confidence {
            let i = index(from)?;
            for (to, r) in row {
                confidence[i][index(to)?] = (r[0], r[1]);
            }
        }
        let p = DetectorProfile {
            labels: catalog.labels().map(str::to_string).collect(),
            kernel,
            confidence,
            boxes_per_hit: (doc.boxes_per_hit[0], doc.boxes_per_hit[1]),
            seed: doc.seed,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn to_document(&self) -> ProfileDocument {
        let mut kernel = IndexMap::new();
        let mut confidence: IndexMap<String, IndexMap<String, [f64; 2]>> = IndexMap::new();
        let default = self.most_common_range();
        for (i, from) in self.labels.iter().enumerate() {
            let row: IndexMap<String, f64> = self
                .labels
                .iter()
                .enumerate()
                .filter(|&(j, _)| self.kernel[i][j] != 0.0)
                .map(|(j, to)| (to.clone(), self.kernel[i][j]))
                .collect();
            if !row.is_empty() {
                kernel.insert(from.clone(), row);
            }
            for (j, to) in self.labels.iter().enumerate() {
                let r = self.confidence[i][j];
                if r != default {
                    confidence
                        .entry(from.clone())
                        .or_default()
                        .insert(to.clone(), [r.0, r.1]);
                }
            }
        }
        ProfileDocument {
            seed: self.seed,
            boxes_per_hit: [self.boxes_per_hit.0, self.boxes_per_hit.1],
            default_confidence: [default.0, default.1],
            kernel,
            confidence,
        }
    }

    fn most_common_range(&self) -> (f64, f64) {
        let mut counts: Vec<((f64, f64), usize)> = Vec::new();
        for r in self.confidence.iter().flatten() {
            match counts.iter_mut().find(|(k, _)| k == r) {
                Some((_, c)) => *c += 1,
                None => counts.push((*r, 1)),
            }
        }
        counts
            .into_iter()
            .fold(
                None,
                |best: Option<((f64, f64), usize)>, (r, c)| match best {
                    Some((_, bc)) if bc >= c => best,
                    _ => Some((r, c)),
                },
            )
            .map_or((0.5, 0.99), |(r, _)| r)
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        let n = self.labels.len();
        if n < 2 {
            return Err(invalid(
                "need at least one disease class and the healthy class",
            ));
        }
        if self.kernel.len() != n || self.kernel.iter().any(|r| r.len() != n) {
            return Err(invalid(format!("kernel must be {n}x{n}")));
        }
        let healthy = n - 1;
        for (i, row) in self.kernel.iter().enumerate() {
            for (j, &p) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&p) {
                    return Err(invalid(format!(
                        "kernel[{}][{}] = {p} is outside [0, 1]",
                        self.labels[i], self.labels[j]
                    )));
                }
            }
            if row[healthy] != 0.0 {
                return Err(invalid(format!(
                    "kernel[{}][{}] must be zero; leftover row mass is the healthy outcome",
                    self.labels[i], self.labels[healthy]
                )));
            }
            let sum: f64 = row.iter().sum();
            if sum > 1.0 + MASS_TOLERANCE {
                return Err(invalid(format!(
                    "kernel row `{}` sums to {sum} > 1",
                    self.labels[i]
                )));
            }
        }
        for (i, row) in self.confidence.iter().enumerate() {
            for (j, &(lo, hi)) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                    return Err(invalid(format!(
                        "confidence range for ({}, {}) must satisfy 0 <= lo <= hi <= 1, got [{lo}, {hi}]",
                        self.labels[i], self.labels[j]
                    )));
                }
            }
        }
        let (lo, hi) = self.boxes_per_hit;
        if lo == 0 || lo > hi {
            return Err(invalid(format!(
                "boxes_per_hit must satisfy 1 <= min <= max, got [{lo}, {hi}]"
            )));
        }
        Ok(())
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn kernel(&self) -> &[Vec<f64>] {
        &self.kernel
    }

    pub fn entry(&self, from: &str, to: &str) -> Option<f64> {
        let i = self.labels.iter().position(|l| l == from)?;
        let j = self.labels.iter().position(|l| l == to)?;
        Some(self.kernel[i][j])
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn check_catalog(&self, catalog: &ClassCatalog) -> Result<(), SimulationError> {
        if self.labels.iter().map(String::as_str).ne(catalog.labels()) {
            return Err(invalid("profile classes do not match the catalog"));
        }
        Ok(())
    }
}

fn image_rng(seed: u64, image_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(image_id.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

fn random_box<R: Rng>(rng: &mut R, image_w: u32, image_h: u32) -> BoundingBox {
    let w = rng.random_range(1..=image_w);
    let h = rng.random_range(1..=image_h);
    let x = rng.random_range(0..=image_w - w);
    let y = rng.random_range(0..=image_h - h);
    BoundingBox {
        x: f64::from(x),
        y: f64::from(y),
        w: f64::from(w),
        h: f64::from(h),
        image_w,
        image_h,
    }
}

fn simulate_image(
    profile: &DetectorProfile,
    true_index: usize,
    rec: &ImageRecord,
) -> Vec<Detection> {
    let mut rng = image_rng(profile.seed, &rec.image_id);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let emitted = profile.kernel[true_index].iter().position(|&p| {
        acc += p;
        u < acc
    });
    let Some(j) = emitted else {
        return Vec::new();
    };
    let (lo, hi) = profile.boxes_per_hit;
    let count = rng.random_range(lo..=hi);
    let (clo, chi) = profile.confidence[true_index][j];
    (0..count)
        .map(|_| {
            let confidence = if clo == chi {
                clo
            } else {
                rng.random_range(clo..=chi)
            };
            Detection {
                class_label: profile.labels[j].clone(),
                confidence,
                bbox: random_box(&mut rng, rec.image_w, rec.image_h),
            }
        })
        .collect()
}

/// Runs the synthetic detector over a dataset.
pub fn simulate_detections(
    dataset: &Dataset,
    profile: &DetectorProfile,
    catalog: &ClassCatalog,
) -> Result<DetectionSet, SimulationError> {
    profile.validate()?;
    profile.check_catalog(catalog)?;
    let entries: Vec<(String, Vec<Detection>)> = dataset
        .records()
        .par_iter()
        .map(|rec| {
            let i = catalog
                .index_of(&rec.true_label)
                .expect("validated dataset label");
            (rec.image_id.clone(), simulate_image(profile, i, rec))
        })
        .collect();
    Ok(DetectionSet::from_entries(entries))
}

/// A single kernel-entry shift in percentage points. Mass removed from an
/// entry goes to the row's "emit nothing" remainder, and mass added is taken
/// from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelShift {
    pub true_label: String,
    pub emitted: String,
    pub delta_pp: f64,
}

/// Kernel deltas that stand in for the effect of retraining.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationModel {
    /// Shorthand for diagonal shifts: class to recall delta.
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub recall_deltas: IndexMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub shifts: Vec<KernelShift>,
}

impl DegradationModel {
    pub fn all_shifts(&self) -> impl Iterator<Item = KernelShift> + '_ {
        self.recall_deltas
            .iter()
            .map(|(l, &d)| KernelShift {
                true_label: l.clone(),
                emitted: l.clone(),
                delta_pp: d,
            })
            .chain(self.shifts.iter().cloned())
    }

    /// Concatenates the shifts of several models.
    pub fn combined<'a>(
        models: impl IntoIterator<Item = &'a DegradationModel>,
    ) -> DegradationModel {
        DegradationModel {
            recall_deltas: IndexMap::new(),
            shifts: models.into_iter().flat_map(|m| m.all_shifts()).collect(),
        }
    }
}

/// Applies shifts (summed per entry) and returns a new profile. Any entry
/// leaving [0, 1] or any row exceeding unit mass is rejected.
pub fn apply_degradation(
    profile: &DetectorProfile,
    model: &DegradationModel,
) -> Result<DetectorProfile, SimulationError> {
    let bad = |m: String| SimulationError::InvalidDegradation(m);
    let pos = |l: &str| {
        profile
            .labels
            .iter()
            .position(|x| x == l)
            .ok_or_else(|| bad(format!("unknown class `{l}`")))
    };
    let healthy = profile.labels.len() - 1;
    let mut out = profile.clone();
    for s in model.all_shifts() {
        if !s.delta_pp.is_finite() {
            return Err(bad(format!(
                "non-finite delta for ({}, {})",
                s.true_label, s.emitted
            )));
        }
        let (i, j) = (pos(&s.true_label)?, pos(&s.emitted)?);
        if j == healthy {
            return Err(bad(format!(
                "cannot shift the `{}` column; shift disease emissions instead",
                s.emitted
            )));
        }
        out.kernel[i][j] += s.delta_pp / 100.0;
    }
    for (i, row) in out.kernel.iter_mut().enumerate() {
        for (j, p) in row.iter_mut().enumerate() {
            if *p < -MASS_TOLERANCE || *p > 1.0 + MASS_TOLERANCE {
                return Err(bad(format!(
                    "kernel[{}][{}] would become {:.6}",
                    profile.labels[i], profile.labels[j], p
                )));
            }
            *p = p.clamp(0.0, 1.0);
        }
        let sum: f64 = row.iter().sum();
        if sum > 1.0 + MASS_TOLERANCE {
            return Err(bad(format!(
                "kernel row `{}` would sum to {sum:.6}",
                profile.labels[i]
            )));
        }
    }
    out.validate().map_err(|e| bad(e.to_string()))?;
    Ok(out)
}

/// Per-hard-sample-class retraining effects. Training on the hard-samples of
/// class `k` applies `per_key[k]` to the base detector.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrainingModel {
    pub per_key: IndexMap<String, DegradationModel>,
}

impl RetrainingModel {
    /// Combined effect of training with the given hard-sample classes.
    pub fn effect_of<'a>(&self, keys: impl IntoIterator<Item = &'a str>) -> DegradationModel {
        DegradationModel::combined(keys.into_iter().filter_map(|k| self.per_key.get(k)))
    }

    pub fn retrained<'a>(
        &self,
        base: &DetectorProfile,
        keys: impl IntoIterator<Item = &'a str>,
    ) -> Result<DetectorProfile, SimulationError> {
        apply_degradation(base, &self.effect_of(keys))
    }
}

/// Simulates, classifies and scores a dataset in one go.
pub fn simulated_report(
    dataset: &Dataset,
    profile: &DetectorProfile,
    catalog: &ClassCatalog,
) -> Result<MetricReport<f64>, SimulationError> {
    let dets = simulate_detections(dataset, profile, catalog)?;
    let preds = classify_dataset(dataset, &dets, Rule::Detection, catalog)?;
    let m = confusion(dataset, &preds, catalog)?;
    Ok(report(&m)?)
}

/// Synthetic dataset: `counts` images per class label, each disease image
/// with one to three boxes of its own class, healthy images unannotated.
pub fn synth_records(
    catalog: &ClassCatalog,
    counts: &[(String, usize)],
    image_size: (u32, u32),
    seed: u64,
    id_prefix: &str,
) -> Vec<ImageRecord> {
    let (iw, ih) = image_size;
    let mut out = Vec::new();
    for (label, n) in counts {
        let healthy = catalog.is_healthy(label);
        for k in 0..*n {
            let image_id = format!("{id_prefix}{label}-{k:05}");
            let mut rec = ImageRecord::new(image_id, label.clone(), iw, ih);
            if !healthy {
                let mut rng = image_rng(seed, &rec.image_id);
                let boxes = rng.random_range(1..=3);
                rec.annotations = (0..boxes)
                    .map(|_| Annotation {
                        label: label.clone(),
                        bbox: random_box(&mut rng, iw, ih),
                    })
                    .collect();
            }
            out.push(rec);
        }
    }
    out
}

/// Bundled demonstration scenario on the cucumber class list: the base
/// detector calls 47% of healthy leaves mosaic disease, and hard-samples of
/// the two yellowing viruses cost those classes more than 6 points of recall.
pub mod demo {
    use super::*;

    pub const CATALOG_JSON: &str = include_str!("../demo/catalog.json");
    pub const PROFILE_JSON: &str = include_str!("../demo/profile.json");
    pub const RETRAINING_JSON: &str = include_str!("../demo/retraining.json");

    pub fn catalog() -> ClassCatalog {
        serde_json::from_str(CATALOG_JSON).expect("bundled catalog is valid")
    }

    pub fn profile() -> DetectorProfile {
        let doc: ProfileDocument =
            serde_json::from_str(PROFILE_JSON).expect("bundled profile parses");
        DetectorProfile::from_document(&doc, &catalog()).expect("bundled profile is valid")
    }

    pub fn retraining() -> RetrainingModel {
        serde_json::from_str(RETRAINING_JSON).expect("bundled retraining model parses")
    }
}
