//! The full org -> HSM -> HSReM chain run against the synthetic detector.

use serde::Serialize;

use crate::manifest::{build_manifest, GenerationTag, TrainingManifest};
use crate::metrics::{confusion, recall_table, report, ConfusionMatrix, MetricReport};
use crate::mining::{mine_hard_samples, HardSampleIndex, MiningConfig};
use crate::model::{validate_dataset, ClassCatalog, Dataset, RecallTable};
use crate::rules::{classify_dataset, Rule};
use crate::selection::{hss_select, SelectionOutcome};
use crate::simulation::{
    simulate_detections, synth_records, DetectorProfile, RetrainingModel, SimulationError,
};
use crate::Error;

/// Scores a candidate `theta` by simulating the detector retrained on the
/// retained hard-sample classes and taking macro-F1 on `validation`.
pub fn simulation_evaluator<'a>(
    base: &'a DetectorProfile,
    retraining: &'a RetrainingModel,
    validation: &'a Dataset,
    catalog: &'a ClassCatalog,
) -> impl FnMut(u32, &SelectionOutcome) -> Result<f64, SimulationError> + 'a {
    move |_theta, outcome| {
        let profile = retraining.retrained(base, outcome.retained.keys())?;
        Ok(crate::simulation::simulated_report(validation, &profile, catalog)?.macro_f1)
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub catalog: ClassCatalog,
    pub base: DetectorProfile,
    pub retraining: RetrainingModel,
    pub train_disease_per_class: usize,
    pub train_healthy: usize,
    pub test_per_class: usize,
    pub image_size: (u32, u32),
    pub theta: u32,
    pub mining: MiningConfig,
    pub seed: u64,
}

impl Scenario {
    /// The bundled demonstration scenario.
    pub fn demo() -> Self {
        Scenario {
            catalog: crate::simulation::demo::catalog(),
            base: crate::simulation::demo::profile(),
            retraining: crate::simulation::demo::retraining(),
            train_disease_per_class: 200,
            train_healthy: 2_000,
            test_per_class: 1_500,
            image_size: (1472, 1427),
            theta: 6,
            mining: MiningConfig::default(),
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GenerationResult {
    pub generation: GenerationTag,
    pub report: MetricReport<f64>,
    pub confusion: ConfusionMatrix,
    #[serde(skip)]
    pub manifest: TrainingManifest,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub hard_samples: HardSampleIndex,
    pub r_org: RecallTable,
    pub r_hsm: RecallTable,
    pub selection: SelectionOutcome,
    pub org: GenerationResult,
    pub hsm: GenerationResult,
    pub hsrem: GenerationResult,
}

fn evaluate(
    dataset: &Dataset,
    profile: &DetectorProfile,
    catalog: &ClassCatalog,
) -> Result<(MetricReport<f64>, ConfusionMatrix), Error> {
    let dets = simulate_detections(dataset, profile, catalog)?;
    let preds = classify_dataset(dataset, &dets, Rule::Detection, catalog)?;
    let m = confusion(dataset, &preds, catalog)?;
    Ok((report(&m)?, m))
}

/// Mines hard-samples with the base detector, measures the HSM recall drops,
/// selects with `theta`, and scores all three generations. Each generation's
/// detector is derived from the hard-sample keys present in its manifest.
pub fn run_scenario(s: &Scenario) -> Result<ScenarioOutcome, Error> {
    let c = &s.catalog;
    let mut train_counts: Vec<(String, usize)> = c
        .disease_classes()
        .iter()
        .map(|l| (l.clone(), s.train_disease_per_class))
        .collect();
    train_counts.push((c.healthy_label().to_string(), s.train_healthy));
    let train = validate_dataset(
        synth_records(c, &train_counts, s.image_size, s.seed, "train-"),
        c,
    )?;
    let test_counts: Vec<(String, usize)> = c
        .labels()
        .map(|l| (l.to_string(), s.test_per_class))
        .collect();
    let test = validate_dataset(
        synth_records(
            c,
            &test_counts,
            s.image_size,
            s.seed.wrapping_add(1),
            "test-",
        ),
        c,
    )?;

    let train_dets = simulate_detections(&train, &s.base, c)?;
    let healthy: Vec<_> = train.healthy(c).cloned().collect();
    let hard = mine_hard_samples(&healthy, &train_dets, &s.mining, c)?;
    let disease: Vec<_> = train.diseased(c).cloned().collect();

    let manifests = [
        build_manifest(&disease, None, c, GenerationTag::Org)?,
        build_manifest(&disease, Some(&hard), c, GenerationTag::Hsm)?,
    ];
    let hsm_profile = s
        .retraining
        .retrained(&s.base, manifests[1].hard_sample_keys(c))?;
    let (org_report, org_m) = evaluate(&test, &s.base, c)?;
    let (hsm_report, hsm_m) = evaluate(&test, &hsm_profile, c)?;
    let r_org = recall_table(&org_m, c, "org");
    let r_hsm = recall_table(&hsm_m, c, "hsm");

    let selection = hss_select(&r_org, &r_hsm, &hard, s.theta)?;
    let hsrem_manifest =
        build_manifest(&disease, Some(&selection.retained), c, GenerationTag::Hsrem)?;
    let hsrem_profile = s
        .retraining
        .retrained(&s.base, hsrem_manifest.hard_sample_keys(c))?;
    let (hsrem_report, hsrem_m) = evaluate(&test, &hsrem_profile, c)?;

    let [org_manifest, hsm_manifest] = manifests;
    Ok(ScenarioOutcome {
        hard_samples: hard,
        r_org,
        r_hsm,
        selection,
        org: GenerationResult {
            generation: GenerationTag::Org,
            report: org_report.with_tag("org"),
            confusion: org_m,
            manifest: org_manifest,
        },
        hsm: GenerationResult {
            generation: GenerationTag::Hsm,
            report: hsm_report.with_tag("hsm"),
            confusion: hsm_m,
            manifest: hsm_manifest,
        },
        hsrem: GenerationResult {
            generation: GenerationTag::Hsrem,
            report: hsrem_report.with_tag("hsrem"),
            confusion: hsrem_m,
            manifest: hsrem_manifest,
        },
    })
}
