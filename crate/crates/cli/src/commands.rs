use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use remine_core::formats::{
    export_labels, hard_samples_to_json, parse_detections, parse_gate, parse_hard_samples,
    parse_manifest, write_detections, write_manifest,
};
use remine_core::metrics::recall_table_from_report;
use remine_core::mining::IndexStats;
use remine_core::pipeline::simulation_evaluator;
use remine_core::selection::{RemovedClass, ThetaEvaluation};
use remine_core::simulation::{demo, synth_records, ProfileDocument, RetrainingModel};
use remine_core::{
    apply_degradation, build_manifest, classify_dataset, confusion, hss_select, index_stats,
    manifest_summary, mine_hard_samples, report, validate_dataset, ClassCatalog, ConfusionMatrix,
    Dataset, DegradationModel, DetectorProfile, HardSampleIndex, MetricReport, MiningConfig,
    RecallTable, Rule, SearchMode, SelectionConfig, SelectionOutcome,
};
use serde::Serialize;

use crate::config::{optional, required, RunConfig};
use crate::fail::{
    ensure_dir, open, read_json, read_text, write_bytes, write_json, At, CliResult, Failure,
};
use crate::{
    Common, EmitArgs, EvaluateArgs, GenDatasetArgs, InitDemoArgs, MineArgs, SearchThetaArgs,
    SelectArgs, SimulateArgs,
};

struct Env {
    catalog: ClassCatalog,
    out: PathBuf,
}

fn env(common: &Common, config: &RunConfig) -> CliResult<Env> {
    let path = required(&common.catalog, &config.catalog, "catalog")?;
    let catalog = read_json(&path)?;
    let out = required(&common.out, &config.out, "out")?;
    ensure_dir(&out)?;
    Ok(Env { catalog, out })
}

fn load_dataset(path: &Path, catalog: &ClassCatalog) -> CliResult<Dataset> {
    let records = parse_manifest(open(path)?, catalog).at(path.display())?;
    validate_dataset(records, catalog).at(path.display())
}

fn load_index(path: &Path, catalog: &ClassCatalog) -> CliResult<HardSampleIndex> {
    parse_hard_samples(&read_text(path)?, catalog).at(path.display())
}

fn load_profile(
    path: &Path,
    catalog: &ClassCatalog,
    seed: Option<u64>,
) -> CliResult<DetectorProfile> {
    let doc: ProfileDocument = read_json(path)?;
    let profile = DetectorProfile::from_document(&doc, catalog).at(path.display())?;
    Ok(match seed {
        Some(s) => profile.with_seed(s),
        None => profile,
    })
}

fn load_recalls(path: &Path, catalog: &ClassCatalog, tag: &str) -> CliResult<RecallTable> {
    let r: MetricReport = read_json(path)?;
    recall_table_from_report(&r, catalog, tag).at(path.display())
}

fn confusion_csv(
    m: &ConfusionMatrix,
    cells: impl Fn(usize, usize) -> String,
) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["true\\predicted".to_string()];
    header.extend(m.labels().iter().cloned());
    w.write_record(&header).map_err(Failure::internal)?;
    for (i, label) in m.labels().iter().enumerate() {
        let mut row = vec![label.clone()];
        row.extend((0..m.size()).map(|j| cells(i, j)));
        w.write_record(&row).map_err(Failure::internal)?;
    }
    w.into_inner().map_err(Failure::internal)
}

pub fn evaluate(a: &EvaluateArgs, config: &RunConfig) -> CliResult<()> {
    let Env { catalog: c, out } = env(&a.common, config)?;
    let manifest = required(&a.manifest, &config.manifest, "manifest")?;
    let det_path = required(&a.detections, &config.detections, "detections")?;
    let ds = load_dataset(&manifest, &c)?;
    let dets = parse_detections(open(&det_path)?, &c, &ds).at(det_path.display())?;
    let gate = match optional(&a.gate, &config.gate) {
        Some(p) => Some(parse_gate(open(&p)?).at(p.display())?),
        None => None,
    };
    let rule = gate.as_ref().map_or(Rule::Detection, Rule::TwoStage);
    let preds = classify_dataset(&ds, &dets, rule, &c).at(det_path.display())?;
    let m = confusion(&ds, &preds, &c).at("confusion matrix")?;
    let mut r: MetricReport = report(&m).at("metric report")?;
    if let Some(tag) = &a.tag {
        r = r.with_tag(tag.clone());
    }
    log::info!(
        "{} images, accuracy {:.2}, macro-F1 {:.2}",
        r.total,
        r.accuracy,
        r.macro_f1
    );

    write_json(&out.join("report.json"), &r)?;
    write_bytes(&out.join("report.txt"), r.to_text_table().as_bytes())?;
    write_bytes(
        &out.join("confusion.csv"),
        &confusion_csv(&m, |i, j| m.count(i, j).to_string())?,
    )?;
    let norm = m.normalized::<f64>();
    write_bytes(
        &out.join("confusion_normalized.csv"),
        &confusion_csv(&m, |i, j| norm[i][j].to_string())?,
    )
}

pub fn mine(a: &MineArgs, config: &RunConfig) -> CliResult<()> {
    let Env { catalog: c, out } = env(&a.common, config)?;
    let manifest = required(&a.manifest, &config.manifest, "manifest")?;
    let det_path = required(&a.detections, &config.detections, "detections")?;
    let floor = optional(&a.conf_floor, &config.conf_floor)
        .unwrap_or(MiningConfig::default().confidence_floor);
    let mining = MiningConfig::new(floor).at("--conf-floor")?;
    let ds = load_dataset(&manifest, &c)?;
    let dets = parse_detections(open(&det_path)?, &c, &ds).at(det_path.display())?;
    let healthy: Vec<_> = ds.healthy(&c).cloned().collect();
    let index = mine_hard_samples(&healthy, &dets, &mining, &c).at(det_path.display())?;
    let stats: IndexStats = index_stats(&index, &c);
    log::info!(
        "{} of {} healthy images mined",
        stats.total_images,
        healthy.len()
    );

    write_bytes(
        &out.join("hard_samples.json"),
        hard_samples_to_json(&index).as_bytes(),
    )?;
    write_json(&out.join("mining_stats.json"), &stats)
}

#[derive(Serialize)]
struct SelectionReport<'a> {
    theta: u32,
    drops: &'a IndexMap<String, f64>,
    removed: &'a [RemovedClass],
    retained: IndexMap<&'a str, usize>,
    retained_total: usize,
}

impl<'a> SelectionReport<'a> {
    fn new(o: &'a SelectionOutcome) -> Self {
        SelectionReport {
            theta: o.theta,
            drops: &o.drops,
            removed: &o.removed,
            retained: o.retained.iter().map(|(k, v)| (k, v.len())).collect(),
            retained_total: o.retained_total(),
        }
    }
}

struct SelectionInputs {
    r_org: RecallTable,
    r_hsm: RecallTable,
    index: HardSampleIndex,
}

fn selection_inputs(
    org: &Option<PathBuf>,
    hsm: &Option<PathBuf>,
    hard: &Option<PathBuf>,
    config: &RunConfig,
    c: &ClassCatalog,
) -> CliResult<SelectionInputs> {
    let org = required(org, &config.org_report, "org-report")?;
    let hsm = required(hsm, &config.hsm_report, "hsm-report")?;
    let hard = required(hard, &config.hard_samples, "hard-samples")?;
    Ok(SelectionInputs {
        r_org: load_recalls(&org, c, "org")?,
        r_hsm: load_recalls(&hsm, c, "hsm")?,
        index: load_index(&hard, c)?,
    })
}

pub fn select(a: &SelectArgs, config: &RunConfig) -> CliResult<()> {
    let Env { catalog: c, out } = env(&a.common, config)?;
    let inputs = selection_inputs(&a.org_report, &a.hsm_report, &a.hard_samples, config, &c)?;
    let theta = optional(&a.theta, &config.theta).unwrap_or(SelectionConfig::default().theta);
    let outcome = hss_select(&inputs.r_org, &inputs.r_hsm, &inputs.index, theta).at("selection")?;
    log::info!(
        "theta {theta}: kept {} of {} hard-samples",
        outcome.retained_total(),
        inputs.index.total_images()
    );

    write_bytes(
        &out.join("hard_samples.selected.json"),
        hard_samples_to_json(&outcome.retained).as_bytes(),
    )?;
    write_json(
        &out.join("selection_report.json"),
        &SelectionReport::new(&outcome),
    )
}

pub fn emit(a: &EmitArgs, config: &RunConfig) -> CliResult<()> {
    let Env { catalog: c, out } = env(&a.common, config)?;
    let manifest = required(&a.manifest, &config.manifest, "manifest")?;
    let ds = load_dataset(&manifest, &c)?;
    let index = match optional(&a.hard_samples, &config.hard_samples) {
        Some(p) => Some(load_index(&p, &c)?),
        None => None,
    };
    let disease: Vec<_> = ds.diseased(&c).cloned().collect();
    let m =
        build_manifest(&disease, index.as_ref(), &c, a.tag).at(format!("{} manifest", a.tag))?;
    let summary = manifest_summary(&m, &c);
    log::info!(
        "{}: {} disease + {} hard-sample images",
        a.tag,
        summary.disease_images,
        summary.hard_sample_images
    );

    let mut buf = Vec::new();
    write_manifest(&mut buf, m.records()).map_err(Failure::internal)?;
    write_bytes(&out.join(format!("train.{}.manifest.jsonl", a.tag)), &buf)?;
    write_json(&out.join(format!("summary.{}.json", a.tag)), &summary)?;
    if a.labels {
        let dir = out.join(format!("labels.{}", a.tag));
        let files = export_labels(&m, &c, &dir).at(dir.display())?;
        log::info!("{} label files under {}", files.len(), dir.display());
    }
    Ok(())
}

pub fn simulate(a: &SimulateArgs, config: &RunConfig) -> CliResult<()> {
    let Env { catalog: c, out } = env(&a.common, config)?;
    let manifest = required(&a.manifest, &config.manifest, "manifest")?;
    let profile_path = required(&a.profile, &config.profile, "profile")?;
    let ds = load_dataset(&manifest, &c)?;
    let mut profile = load_profile(&profile_path, &c, optional(&a.seed, &config.seed))?;
    if let Some(p) = optional(&a.degradation, &config.degradation) {
        let model: DegradationModel = read_json(&p)?;
        profile = apply_degradation(&profile, &model).at(p.display())?;
    }
    match optional(&a.retraining, &config.retraining) {
        Some(p) => {
            if let Some(k) = a.keys.iter().find(|k| !c.is_disease(k)) {
                return Err(Failure::input(format!(
                    "--keys: `{k}` is not a disease class"
                )));
            }
            let model: RetrainingModel = read_json(&p)?;
            profile = model
                .retrained(&profile, a.keys.iter().map(String::as_str))
                .at(p.display())?;
        }
        None if !a.keys.is_empty() => return Err(Failure::input("--keys needs --retraining")),
        None => {}
    }
    let dets = remine_core::simulate_detections(&ds, &profile, &c).at("simulation")?;
    let mut buf = Vec::new();
    write_detections(&mut buf, &dets).map_err(Failure::internal)?;
    write_bytes(&out.join(&a.name), &buf)
}

#[derive(Serialize)]
struct SearchReport<'a> {
    mode: SearchMode,
    bounds: (u32, u32),
    best_theta: u32,
    best_score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    assumption: Option<&'static str>,
    trace: &'a [ThetaEvaluation],
    selection: SelectionReport<'a>,
}

pub fn search_theta(a: &SearchThetaArgs, config: &RunConfig) -> CliResult<()> {
    let Env { catalog: c, out } = env(&a.common, config)?;
    let inputs = selection_inputs(&a.org_report, &a.hsm_report, &a.hard_samples, config, &c)?;
    let manifest = required(&a.manifest, &config.manifest, "manifest")?;
    let profile_path = required(&a.profile, &config.profile, "profile")?;
    let retraining_path = required(&a.retraining, &config.retraining, "retraining")?;
    let validation = load_dataset(&manifest, &c)?;
    let base = load_profile(&profile_path, &c, optional(&a.seed, &config.seed))?;
    let retraining: RetrainingModel = read_json(&retraining_path)?;
    let defaults = SelectionConfig::default();
    let sel = SelectionConfig {
        theta: defaults.theta,
        search_lower: optional(&a.search_lower, &config.search_lower)
            .unwrap_or(defaults.search_lower),
        search_mode: optional(&a.theta_mode, &config.theta_mode).unwrap_or(defaults.search_mode),
    };
    let evaluator = simulation_evaluator(&base, &retraining, &validation, &c);
    let result =
        remine_core::search_theta(&inputs.r_org, &inputs.r_hsm, &inputs.index, &sel, evaluator)
            .at("theta search")?;
    log::info!(
        "best theta {} (macro-F1 {:.2})",
        result.best_theta,
        result.best_score
    );

    write_bytes(
        &out.join("hard_samples.selected.json"),
        hard_samples_to_json(&result.outcome.retained).as_bytes(),
    )?;
    write_json(
        &out.join("theta_search.json"),
        &SearchReport {
            mode: result.mode,
            bounds: result.bounds,
            best_theta: result.best_theta,
            best_score: result.best_score,
            assumption: result.assumption,
            trace: &result.trace,
            selection: SelectionReport::new(&result.outcome),
        },
    )
}

fn parse_size(s: &str) -> CliResult<(u32, u32)> {
    let bad = || Failure::input(format!("--image-size `{s}`: expected WIDTHxHEIGHT"));
    let (w, h) = s.split_once('x').ok_or_else(bad)?;
    let w: u32 = w.parse().map_err(|_| bad())?;
    let h: u32 = h.parse().map_err(|_| bad())?;
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

pub fn gen_dataset(a: &GenDatasetArgs, config: &RunConfig) -> CliResult<()> {
    let Env { catalog: c, out } = env(&a.common, config)?;
    let size = parse_size(&a.image_size)?;
    let mut counts: IndexMap<String, usize> = c
        .disease_classes()
        .iter()
        .map(|l| (l.clone(), a.per_class))
        .collect();
    counts.insert(
        c.healthy_label().to_string(),
        a.healthy.unwrap_or(a.per_class),
    );
    for entry in &a.counts {
        let (label, n) = entry
            .split_once('=')
            .and_then(|(l, n)| Some((l, n.parse::<usize>().ok()?)))
            .ok_or_else(|| Failure::input(format!("--count `{entry}`: expected CLASS=N")))?;
        if !c.contains(label) {
            return Err(Failure::input(format!("--count: unknown class `{label}`")));
        }
        counts.insert(label.to_string(), n);
    }
    let counts: Vec<(String, usize)> = counts.into_iter().collect();
    let seed = optional(&a.seed, &config.seed).unwrap_or(0);
    let records = synth_records(&c, &counts, size, seed, &a.prefix);
    let mut buf = Vec::new();
    write_manifest(&mut buf, &records).map_err(Failure::internal)?;
    write_bytes(&out.join(&a.name), &buf)
}

pub fn init_demo(a: &InitDemoArgs, config: &RunConfig) -> CliResult<()> {
    let out = required(&a.out, &config.out, "out")?;
    write_bytes(&out.join("catalog.json"), demo::CATALOG_JSON.as_bytes())?;
    write_bytes(&out.join("profile.json"), demo::PROFILE_JSON.as_bytes())?;
    write_bytes(
        &out.join("retraining.json"),
        demo::RETRAINING_JSON.as_bytes(),
    )
}
