//! Hard-sample selection: drop every class whose recall fell by more than
//! `theta` percentage points between the original and the HSM model, and
//! search for a good integer `theta`.

use std::collections::HashSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mining::HardSampleIndex;
use crate::model::RecallTable;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SelectionError {
    #[error("recall table `{table}` has no entry for class `{class}`")]
    MissingRecallEntry { table: String, class: String },
    #[error("hard-sample index is empty")]
    EmptyIndex,
    #[error("no candidate thresholds in [{lower}, {upper}]")]
    EmptyCandidateSet { lower: u32, upper: u32 },
    #[error("every candidate threshold failed to evaluate")]
    AllEvaluationsFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    #[default]
    Exhaustive,
    /// Halving search; only correct when the score is unimodal in theta.
    Binary,
}

impl std::str::FromStr for SearchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exhaustive" => Ok(SearchMode::Exhaustive),
            "binary" => Ok(SearchMode::Binary),
            other => Err(format!(
                "unknown search mode `{other}` (expected exhaustive or binary)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub theta: u32,
    pub search_lower: u32,
    pub search_mode: SearchMode,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            theta: 6,
            search_lower: 3,
            search_mode: SearchMode::Exhaustive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovedClass {
    pub class: String,
    pub drop: f64,
    pub images: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome {
    pub theta: u32,
    pub retained: HardSampleIndex,
    pub removed: Vec<RemovedClass>,
    /// `R_org - R_hsm` in percentage points for every class keyed in the input.
    pub drops: IndexMap<String, f64>,
}

impl SelectionOutcome {
    pub fn retained_total(&self) -> usize {
        self.retained.total_images()
    }
}

/// Recall drop for every class keyed in the index, in index order.
pub fn drop_table(
    r_org: &RecallTable,
    r_hsm: &RecallTable,
    index: &HardSampleIndex,
) -> Result<IndexMap<String, f64>, SelectionError> {
    index
        .keys()
        .map(|class| {
            let org = lookup(r_org, class)?;
            let hsm = lookup(r_hsm, class)?;
            Ok((class.to_string(), org - hsm))
        })
        .collect()
}

fn lookup(table: &RecallTable, class: &str) -> Result<f64, SelectionError> {
    table
        .get(class)
        .ok_or_else(|| SelectionError::MissingRecallEntry {
            table: table.model_tag.clone(),
            class: class.to_string(),
        })
}

/// Removes all hard-samples of every class whose drop exceeds `theta`
/// (strictly). Classes are kept or removed whole.
pub fn hss_select(
    r_org: &RecallTable,
    r_hsm: &RecallTable,
    index: &HardSampleIndex,
    theta: u32,
) -> Result<SelectionOutcome, SelectionError> {
    let drops = drop_table(r_org, r_hsm, index)?;
    let limit = f64::from(theta);
    let removed: Vec<RemovedClass> = drops
        .iter()
        .filter(|(_, &d)| d > limit)
        .map(|(class, &drop)| RemovedClass {
            class: class.clone(),
            drop,
            images: index.get(class).map_or(0, <[_]>::len),
        })
        .collect();
    let removed_keys: HashSet<&str> = removed.iter().map(|r| r.class.as_str()).collect();
    Ok(SelectionOutcome {
        theta,
        retained: index.without_classes(&removed_keys),
        removed,
        drops,
    })
}

/// Integer search window `[lower, beta]` where `beta` is the largest recall
/// drop over keyed classes rounded up. Collapses to `[lower, lower]` when no
/// drop exceeds `lower`.
pub fn theta_bounds(
    r_org: &RecallTable,
    r_hsm: &RecallTable,
    index: &HardSampleIndex,
    lower: u32,
) -> Result<(u32, u32), SelectionError> {
    if index.is_empty() {
        return Err(SelectionError::EmptyIndex);
    }
    let drops = drop_table(r_org, r_hsm, index)?;
    let max_drop = drops.values().copied().fold(f64::NEG_INFINITY, f64::max);
    if max_drop <= f64::from(lower) {
        return Ok((lower, lower));
    }
    // recall drops are at most 100 points, so the cast cannot overflow
    Ok((lower, max_drop.ceil() as u32))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaEvaluation {
    pub theta: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best_theta: u32,
    pub best_score: f64,
    pub outcome: SelectionOutcome,
    pub bounds: (u32, u32),
    pub mode: SearchMode,
    /// Every evaluation, in the order performed.
    pub trace: Vec<ThetaEvaluation>,
    pub assumption: Option<&'static str>,
}

pub const UNIMODAL_ASSUMPTION: &str = "binary mode assumes the score is unimodal in theta";

/// Picks the integer `theta` in `[lower, beta]` that maximises `evaluator`.
///
/// The evaluator receives each candidate and its selection outcome. Failed
/// evaluations are recorded in the trace and skipped. Ties go to the smaller
/// theta.
pub fn search_theta<F, E>(
    r_org: &RecallTable,
    r_hsm: &RecallTable,
    index: &HardSampleIndex,
    config: &SelectionConfig,
    mut evaluator: F,
) -> Result<SearchResult, SelectionError>
where
    F: FnMut(u32, &SelectionOutcome) -> Result<f64, E>,
    E: std::fmt::Display,
{
    let bounds = theta_bounds(r_org, r_hsm, index, config.search_lower)?;
    let (lower, upper) = bounds;
    if lower > upper {
        return Err(SelectionError::EmptyCandidateSet { lower, upper });
    }

    let mut trace: Vec<ThetaEvaluation> = Vec::new();
    let mut eval =
        |theta: u32, trace: &mut Vec<ThetaEvaluation>| -> Result<Option<f64>, SelectionError> {
            if let Some(prev) = trace.iter().find(|e| e.theta == theta) {
                return Ok(prev.score);
            }
            let outcome = hss_select(r_org, r_hsm, index, theta)?;
            let entry = match evaluator(theta, &outcome) {
                Ok(score) if score.is_nan() => ThetaEvaluation {
                    theta,
                    score: None,
                    error: Some("evaluator returned NaN".into()),
                },
                Ok(score) => ThetaEvaluation {
                    theta,
                    score: Some(score),
                    error: None,
                },
                Err(e) => {
                    log::warn!("theta {theta}: evaluation failed: {e}");
                    ThetaEvaluation {
                        theta,
                        score: None,
                        error: Some(e.to_string()),
                    }
                }
            };
            let score = entry.score;
            trace.push(entry);
            Ok(score)
        };

    match config.search_mode {
        SearchMode::Exhaustive => {
            for theta in lower..=upper {
                eval(theta, &mut trace)?;
            }
        }
        SearchMode::Binary => {
            let (mut lo, mut hi) = (lower, upper);
            while lo < hi {
                let mid = lo + (hi - lo) / 2;
                let a = eval(mid, &mut trace)?.unwrap_or(f64::NEG_INFINITY);
                let b = eval(mid + 1, &mut trace)?.unwrap_or(f64::NEG_INFINITY);
                if b > a {
                    lo = mid + 1;
                } else {
                    hi = mid;
                }
            }
            eval(lo, &mut trace)?;
        }
    }

    let (best_theta, best_score) = trace
        .iter()
        .filter_map(|e| e.score.map(|s| (e.theta, s)))
        .fold(None, |best: Option<(u32, f64)>, (t, s)| match best {
            Some((bt, bs)) if bs > s || (bs == s && bt < t) => Some((bt, bs)),
            _ => Some((t, s)),
        })
        .ok_or(SelectionError::AllEvaluationsFailed)?;

    Ok(SearchResult {
        best_theta,
        best_score,
        outcome: hss_select(r_org, r_hsm, index, best_theta)?,
        bounds,
        mode: config.search_mode,
        trace,
        assumption: (config.search_mode == SearchMode::Binary).then_some(UNIMODAL_ASSUMPTION),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mining::HardSampleImage;
    use crate::model::{BoundingBox, ClassCatalog};

    fn catalog() -> ClassCatalog {
        ClassCatalog::new(["A", "B", "C"], "HE").unwrap()
    }

    fn index(c: &ClassCatalog, counts: &[(&str, usize)]) -> HardSampleIndex {
        let b = BoundingBox::new(0.0, 0.0, 1.0, 1.0, 10, 10).unwrap();
        HardSampleIndex::new(
            c,
            counts.iter().map(|&(k, n)| {
                (
                    k.to_string(),
                    (0..n)
                        .map(|i| HardSampleImage {
                            image_id: format!("{k}-{i}"),
                            boxes: vec![b],
                            key_confidence: 0.5,
                        })
                        .collect(),
                )
            }),
        )
        .unwrap()
    }

    fn tables(c: &ClassCatalog, drops: &[(&str, f64)]) -> (RecallTable, RecallTable) {
        let org = RecallTable::new(
            "org",
            c,
            c.disease_classes().iter().map(|l| (l.clone(), 90.0)),
            [],
        )
        .unwrap();
        let hsm = RecallTable::new(
            "hsm",
            c,
            c.disease_classes().iter().map(|l| {
                let d = drops.iter().find(|(k, _)| k == l).map_or(0.0, |(_, d)| *d);
                (l.clone(), 90.0 - d)
            }),
            [],
        )
        .unwrap();
        (org, hsm)
    }

    #[test]
    fn strict_inequality() {
        let c = catalog();
        let idx = index(&c, &[("A", 3), ("B", 2)]);
        let (org, hsm) = tables(&c, &[("A", 6.0), ("B", 6.5)]);
        let out = hss_select(&org, &hsm, &idx, 6).unwrap();
        assert_eq!(out.retained.get("A").unwrap().len(), 3);
        assert!(out.retained.get("B").is_none());
        assert_eq!(out.removed.len(), 1);
        assert_eq!(out.removed[0].class, "B");
        assert_eq!(out.removed[0].images, 2);
        assert_eq!(out.drops["B"], 6.5);
    }

    #[test]
    fn large_theta_is_identity() {
        let c = catalog();
        let idx = index(&c, &[("A", 3), ("C", 1)]);
        let (org, hsm) = tables(&c, &[("A", 30.0), ("C", 50.0)]);
        assert_eq!(hss_select(&org, &hsm, &idx, 50).unwrap().retained, idx);
    }

    #[test]
    fn missing_recall_entry() {
        let c = catalog();
        let other = ClassCatalog::new(["A", "B", "C", "D"], "HE").unwrap();
        let idx = index(&other, &[("D", 1)]);
        let (org, hsm) = tables(&c, &[]);
        assert!(matches!(
            hss_select(&org, &hsm, &idx, 6),
            Err(SelectionError::MissingRecallEntry { .. })
        ));
    }

    #[test]
    fn bounds() {
        let c = catalog();
        let idx = index(&c, &[("A", 1), ("B", 1)]);
        let (org, hsm) = tables(&c, &[("A", 2.0), ("B", 8.4), ("C", 40.0)]);
        // C is not keyed in the index, so it does not widen the window
        assert_eq!(theta_bounds(&org, &hsm, &idx, 3).unwrap(), (3, 9));
        let (org, hsm) = tables(&c, &[("A", -2.0), ("B", -8.4)]);
        assert_eq!(theta_bounds(&org, &hsm, &idx, 3).unwrap(), (3, 3));
        assert_eq!(
            theta_bounds(&org, &hsm, &HardSampleIndex::default(), 3).unwrap_err(),
            SelectionError::EmptyIndex
        );
    }

    #[test]
    fn search_picks_argmax() {
        let c = catalog();
        let idx = index(&c, &[("A", 1), ("B", 1)]);
        let (org, hsm) = tables(&c, &[("A", 2.0), ("B", 8.4)]);
        let scores = [
            (3, 70.0),
            (4, 72.0),
            (5, 74.0),
            (6, 79.0),
            (7, 78.0),
            (8, 76.0),
            (9, 75.0),
        ];
        let f = |t: u32, _: &SelectionOutcome| -> Result<f64, String> {
            Ok(scores.iter().find(|(k, _)| *k == t).unwrap().1)
        };
        for mode in [SearchMode::Exhaustive, SearchMode::Binary] {
            let cfg = SelectionConfig {
                search_mode: mode,
                ..Default::default()
            };
            let r = search_theta(&org, &hsm, &idx, &cfg, f).unwrap();
            assert_eq!(r.best_theta, 6, "{mode:?}");
            assert_eq!(r.best_score, 79.0);
            assert_eq!(r.outcome.theta, 6);
        }
        let r = search_theta(&org, &hsm, &idx, &SelectionConfig::default(), f).unwrap();
        assert_eq!(r.trace.len(), 7);
        assert_eq!(r.assumption, None);
    }

    #[test]
    fn degenerate_range_evaluates_once() {
        let c = catalog();
        let idx = index(&c, &[("A", 1)]);
        let (org, hsm) = tables(&c, &[("A", -1.0)]);
        let mut calls = 0;
        let r = search_theta(&org, &hsm, &idx, &SelectionConfig::default(), |_, _| {
            calls += 1;
            Ok::<_, String>(1.0)
        })
        .unwrap();
        assert_eq!((r.best_theta, calls), (3, 1));
    }

    #[test]
    fn failures_are_recorded_and_skipped() {
        let c = catalog();
        let idx = index(&c, &[("A", 1)]);
        let (org, hsm) = tables(&c, &[("A", 5.5)]);
        let r = search_theta(&org, &hsm, &idx, &SelectionConfig::default(), |t, _| {
            if t == 3 {
                Err("boom".to_string())
            } else {
                Ok(f64::from(t))
            }
        })
        .unwrap();
        assert_eq!(r.bounds, (3, 6));
        assert_eq!(r.best_theta, 6);
        assert_eq!(r.trace[0].error.as_deref(), Some("boom"));
        let err = search_theta(&org, &hsm, &idx, &SelectionConfig::default(), |_, _| {
            Err::<f64, _>("nope")
        })
        .unwrap_err();
        assert_eq!(err, SelectionError::AllEvaluationsFailed);
    }

    #[test]
    fn ties_prefer_smaller_theta() {
        let c = catalog();
        let idx = index(&c, &[("A", 1)]);
        let (org, hsm) = tables(&c, &[("A", 8.0)]);
        let r = search_theta(&org, &hsm, &idx, &SelectionConfig::default(), |_, _| {
            Ok::<_, String>(1.0)
        })
        .unwrap();
        assert_eq!(r.best_theta, 3);
    }
}
