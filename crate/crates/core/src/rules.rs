//! Detection-to-classification rules.
//!
//! An image with no boxes is healthy; otherwise it takes the class of its
//! most confident box. The two-stage variant consults a binary healthy /
//! diseased gate first and only falls through to the detector when the gate
//! says diseased.

use std::cmp::Ordering;
use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ClassCatalog, CoverageError, Dataset, Detection, DetectionSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleTag {
    /// Plain detector rule.
    Detection,
    /// Two-stage: the gate declared the image healthy.
    GateHealthy,
    /// Two-stage: the gate declared the image diseased and the detector decided.
    GateDiseased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub image_id: String,
    pub predicted_label: String,
    /// Confidence of the winning box; `None` means healthy by default.
    pub winning_confidence: Option<f64>,
    pub rule: RuleTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateVerdict {
    Healthy,
    Diseased,
}

/// First-stage verdicts from an external binary classifier.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BinaryGate {
    verdicts: HashMap<String, GateVerdict>,
}

impl BinaryGate {
    pub fn new(verdicts: impl IntoIterator<Item = (String, GateVerdict)>) -> Self {
        BinaryGate {
            verdicts: verdicts.into_iter().collect(),
        }
    }

    /// A gate that calls every image diseased.
    pub fn all_diseased<'a>(ids: impl IntoIterator<Item = &'a str>) -> Self {
        Self::new(
            ids.into_iter()
                .map(|id| (id.to_string(), GateVerdict::Diseased)),
        )
    }

    pub fn verdict(&self, image_id: &str) -> Option<GateVerdict> {
        self.verdicts.get(image_id).copied()
    }

    pub fn len(&self) -> usize {
        self.verdicts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verdicts.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RulesError {
    #[error("no gate verdict for image `{0}`")]
    MissingGateVerdict(String),
    #[error(transparent)]
    Coverage(#[from] CoverageError),
}

#[derive(Debug, Clone, Copy)]
pub enum Rule<'a> {
    Detection,
    TwoStage(&'a BinaryGate),
}

/// Ordering where `Greater` means "wins": higher confidence, then lower class
/// index, then smaller box in (x, y, w, h) order. Unknown labels rank last.
fn strength(a: &Detection, b: &Detection, catalog: &ClassCatalog) -> Ordering {
    let ia = catalog.index_of(&a.class_label).unwrap_or(usize::MAX);
    let ib = catalog.index_of(&b.class_label).unwrap_or(usize::MAX);
    a.confidence
        .total_cmp(&b.confidence)
        .then(ib.cmp(&ia))
        .then(b.bbox.geometry_cmp(&a.bbox))
}

/// The detection that decides an image's class, if any.
pub fn strongest<'d>(detections: &'d [Detection], catalog: &ClassCatalog) -> Option<&'d Detection> {
    detections.iter().max_by(|a, b| strength(a, b, catalog))
}

pub fn classify_by_detection(
    image_id: &str,
    detections: &[Detection],
    catalog: &ClassCatalog,
) -> Prediction {
    match strongest(detections, catalog) {
        Some(d) => Prediction {
            image_id: image_id.to_string(),
            predicted_label: d.class_label.clone(),
            winning_confidence: Some(d.confidence),
            rule: RuleTag::Detection,
        },
        None => Prediction {
            image_id: image_id.to_string(),
            predicted_label: catalog.healthy_label().to_string(),
            winning_confidence: None,
            rule: RuleTag::Detection,
        },
    }
}

pub fn classify_two_stage(
    gate: &BinaryGate,
    image_id: &str,
    detections: &[Detection],
    catalog: &ClassCatalog,
) -> Result<Prediction, RulesError> {
    match gate.verdict(image_id) {
        None => Err(RulesError::MissingGateVerdict(image_id.to_string())),
        Some(GateVerdict::Healthy) => Ok(Prediction {
            image_id: image_id.to_string(),
            predicted_label: catalog.healthy_label().to_string(),
            winning_confidence: None,
            rule: RuleTag::GateHealthy,
        }),
        Some(GateVerdict::Diseased) => {
            let mut p = classify_by_detection(image_id, detections, catalog);
            p.rule = RuleTag::GateDiseased;
            Ok(p)
        }
    }
}

/// One prediction per dataset image, in dataset order. Coverage and gate
/// completeness are checked before anything is classified.
pub fn classify_dataset(
    dataset: &Dataset,
    detections: &DetectionSet,
    rule: Rule<'_>,
    catalog: &ClassCatalog,
) -> Result<Vec<Prediction>, RulesError> {
    detections.check_covers(dataset)?;
    if let Rule::TwoStage(gate) = rule {
        if let Some(r) = dataset
            .records()
            .iter()
            .find(|r| gate.verdict(&r.image_id).is_none())
        {
            return Err(RulesError::MissingGateVerdict(r.image_id.clone()));
        }
    }
    dataset
        .records()
        .par_iter()
        .map(|rec| {
            let dets = detections.get(&rec.image_id).unwrap_or_default();
            match rule {
                Rule::Detection => Ok(classify_by_detection(&rec.image_id, dets, catalog)),
                Rule::TwoStage(gate) => classify_two_stage(gate, &rec.image_id, dets, catalog),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_dataset, BoundingBox, ImageRecord};

    fn catalog() -> ClassCatalog {
        ClassCatalog::new(["CCYV", "CLS", "DM", "GM", "MYSV", "MD", "PM", "LB"], "HE").unwrap()
    }

    fn det(label: &str, conf: f64) -> Detection {
        det_at(label, conf, 0.0)
    }

    fn det_at(label: &str, conf: f64, x: f64) -> Detection {
        Detection {
            class_label: label.into(),
            confidence: conf,
            bbox: BoundingBox::new(x, 0.0, 10.0, 10.0, 100, 100).unwrap(),
        }
    }

    #[test]
    fn empty_is_healthy() {
        let p = classify_by_detection("i", &[], &catalog());
        assert_eq!(p.predicted_label, "HE");
        assert_eq!(p.winning_confidence, None);
    }

    #[test]
    fn highest_confidence_wins() {
        let p = classify_by_detection("i", &[det("MD", 0.91), det("PM", 0.72)], &catalog());
        assert_eq!(p.predicted_label, "MD");
        assert_eq!(p.winning_confidence, Some(0.91));
    }

    #[test]
    fn ties_go_to_lower_class_index_then_box_order() {
        let c = catalog();
        assert!(c.index_of("MD") < c.index_of("PM"));
        let p = classify_by_detection("i", &[det("PM", 0.8), det("MD", 0.8)], &c);
        assert_eq!(p.predicted_label, "MD");
        let dets = [det_at("MD", 0.8, 20.0), det_at("MD", 0.8, 5.0)];
        assert_eq!(strongest(&dets, &c).unwrap().bbox.x, 5.0);
        let rev = [dets[1].clone(), dets[0].clone()];
        assert_eq!(strongest(&rev, &c).unwrap().bbox.x, 5.0);
    }

    #[test]
    fn two_stage_semantics() {
        let c = catalog();
        let gate = BinaryGate::new([
            ("h".to_string(), GateVerdict::Healthy),
            ("d".to_string(), GateVerdict::Diseased),
        ]);
        let p = classify_two_stage(&gate, "h", &[det("MD", 0.99)], &c).unwrap();
        assert_eq!(
            (p.predicted_label.as_str(), p.rule),
            ("HE", RuleTag::GateHealthy)
        );
        let p = classify_two_stage(&gate, "d", &[], &c).unwrap();
        assert_eq!(p.predicted_label, "HE");
        let p = classify_two_stage(&gate, "d", &[det("LB", 0.6)], &c).unwrap();
        assert_eq!(p.predicted_label, "LB");
        assert_eq!(
            classify_two_stage(&gate, "x", &[], &c).unwrap_err(),
            RulesError::MissingGateVerdict("x".into())
        );
    }

    #[test]
    fn dataset_classification_checks_coverage_first() {
        let c = catalog();
        let ds = validate_dataset(
            vec![
                ImageRecord::new("a", "HE", 100, 100),
                ImageRecord::new("b", "MD", 100, 100),
                ImageRecord::new("c", "PM", 100, 100),
            ],
            &c,
        )
        .unwrap();
        let full = DetectionSet::covering(&ds, HashMap::new()).unwrap();
        let preds = classify_dataset(&ds, &full, Rule::Detection, &c).unwrap();
        assert_eq!(preds.len(), 3);
        assert!(preds.iter().all(|p| p.predicted_label == "HE"));
        assert_eq!(
            preds
                .iter()
                .map(|p| p.image_id.as_str())
                .collect::<Vec<_>>(),
            ["a", "b", "c"]
        );

        let partial = DetectionSet::from_entries([("a".to_string(), vec![])]);
        assert!(matches!(
            classify_dataset(&ds, &partial, Rule::Detection, &c),
            Err(RulesError::Coverage(CoverageError::MissingImage(_)))
        ));
        let gate = BinaryGate::all_diseased(["a", "b"]);
        assert_eq!(
            classify_dataset(&ds, &full, Rule::TwoStage(&gate), &c).unwrap_err(),
            RulesError::MissingGateVerdict("c".into())
        );
    }
}
