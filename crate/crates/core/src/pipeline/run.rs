//! End-to-end runner: ingestion, per-patient processing, model stages and the
//! report bundle under the configured output directory.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use serde::Serialize;

use super::config::PipelineConfig;
use super::dataset::{
    discover_patients, ehr_rows, neural_inputs, process_patient, survival_table, NeuralPatient, PatientFiles,
    ProcessOptions, ProcessedPatient,
};
use super::evaluate::{evaluate_segmentation, SegmentationScores};
use super::split::{split_cohort, write_split_summary, Split, SplitAssignment};
use super::synth::{write_bytes, write_text};
use crate::classifier::{f1_scores, svm_predict, svm_train, Gamma, SvmParams};
use crate::error::Error;
use crate::morphology::{write_feature_csv, CALIBRATED_FEATURE_NAMES};
use crate::neural::{
    default_bin_count, ensemble_risk, fill_median, make_time_bins, train, Architecture, ModelConfig, PatientInput,
    TrainConfig, TrainedModel,
};
use crate::par::{with_threads, Exec};
use crate::survival::{
    calibration_sweep, concordance_index, fit_report, impute_missing, predict_risks, CohortTable, SurvivalModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Ingest,
    Localize,
    Features,
    Classify,
    Survival,
    Neural,
    Evaluate,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Localize => "localize",
            Stage::Features => "features",
            Stage::Classify => "classify",
            Stage::Survival => "survival",
            Stage::Neural => "neural",
            Stage::Evaluate => "evaluate",
        }
    }

    fn dir(self) -> &'static str {
        match self {
            Stage::Evaluate => "eval",
            s => s.name(),
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("stage '{stage}': {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

impl PipelineError {
    /// 2 for configuration problems, 3 for unreadable or malformed inputs,
    /// 4 for any other stage failure.
    pub fn exit_code(&self) -> i32 {
        exit_code(&self.source)
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Ingestion(_) | Error::Io { .. } | Error::Format(_) | Error::Csv(_) => 3,
        _ => 4,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum StageStatus {
    Disabled,
    Ok,
    Skipped(String),
    Failed(String),
    NotRun,
}

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a> {
    config_hash: String,
    config: &'a PipelineConfig,
    patients: usize,
    stages: BTreeMap<&'static str, StageStatus>,
    files: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub segmentation_validation: Option<SegmentationScores>,
    pub segmentation_all: Option<SegmentationScores>,
    pub cindex_survival: Option<f64>,
    pub cindex_neural: Option<f64>,
    pub cindex_ensemble: Option<f64>,
    pub validation_patients: usize,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub output: PathBuf,
    pub stages: BTreeMap<&'static str, StageStatus>,
    pub metrics: Option<EvalMetrics>,
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    out: PathBuf,
    stages: BTreeMap<&'static str, StageStatus>,
    files: Vec<String>,
    patients: usize,
}

type StageResult<T> = std::result::Result<T, PipelineError>;

fn at<T>(stage: Stage, r: crate::Result<T>) -> StageResult<T> {
    r.map_err(|source| PipelineError { stage, source })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl Run<'_> {
    fn write(&mut self, stage: Stage, name: &str, bytes: &[u8]) -> StageResult<()> {
        let dir = self.out.join(stage.dir());
        at(stage, std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e)))?;
        at(stage, write_bytes(&dir.join(name), bytes))?;
        self.files.push(format!("{}/{name}", stage.dir()));
        Ok(())
    }

    fn write_json(&mut self, stage: Stage, name: &str, value: &impl Serialize) -> StageResult<()> {
        let text = at(stage, serde_json::to_string_pretty(value).map_err(Error::from))?;
        self.write(stage, name, format!("{text}\n").as_bytes())
    }

    fn set(&mut self, stage: Stage, status: StageStatus) {
        self.stages.insert(stage.name(), status);
    }

    fn manifest(&self) -> crate::Result<()> {
        let mut files = self.files.clone();
        files.sort();
        let m = Manifest {
            config_hash: self.cfg.hash(),
            config: self.cfg,
            patients: self.patients,
            stages: self.stages.clone(),
            files,
        };
        write_text(&self.out.join("manifest.json"), &format!("{}\n", serde_json::to_string_pretty(&m)?))
    }
}

/// Runs every enabled stage. Reports of completed stages and `manifest.json`
/// are written even when a later stage fails.
pub fn run_pipeline(cfg: &PipelineConfig) -> StageResult<RunReport> {
    at(Stage::Config, cfg.validate())?;
    let out = cfg.paths.output.clone();
    at(Stage::Config, std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e)))?;
    let s = cfg.stages;
    let mut run = Run {
        cfg,
        out: out.clone(),
        stages: BTreeMap::new(),
        files: Vec::new(),
        patients: 0,
    };
    for (stage, on) in [
        (Stage::Localize, s.localize),
        (Stage::Features, s.features),
        (Stage::Classify, s.classify),
        (Stage::Survival, s.survival),
        (Stage::Neural, s.neural),
        (Stage::Evaluate, s.evaluate),
    ] {
        run.set(stage, if on { StageStatus::NotRun } else { StageStatus::Disabled });
    }
    let workers = cfg.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let result = with_threads(workers, || stages(&mut run));
    if let Err(e) = &result {
        if e.stage != Stage::Ingest && e.stage != Stage::Config {
            run.set(e.stage, StageStatus::Failed(e.source.to_string()));
        }
        log::error!("{e}");
    }
    let written = run.manifest();
    let metrics = result?;
    at(Stage::Evaluate, written)?;
    Ok(RunReport {
        output: out,
        stages: run.stages,
        metrics,
    })
}

struct Cohort {
    ids: Vec<String>,
    split: SplitAssignment,
    ehr: Option<CohortTable>,
    files: Vec<PatientFiles>,
}

fn ingest(cfg: &PipelineConfig) -> crate::Result<Cohort> {
    let s = cfg.stages;
    let need_images = s.localize || s.features;
    let need_ehr = s.survival || s.neural;
    let p = &cfg.paths;
    let ehr = if need_ehr {
        if !p.ehr_csv.is_file() {
            return Err(Error::Ingestion(format!("EHR table {} does not exist", p.ehr_csv.display())));
        }
        Some(CohortTable::read_csv(&p.ehr_csv)?)
    } else {
        None
    };
    let files = if need_images {
        discover_patients(&p.images, &p.masks, p.truth.as_deref())?
    } else {
        Vec::new()
    };
    let ids: Vec<String> = if need_images {
        files.iter().map(|f| f.id.clone()).collect()
    } else if let Some(t) = &ehr {
        let mut v = t.patient_ids.clone();
        v.sort();
        v
    } else {
        Vec::new()
    };
    let split = if ids.is_empty() {
        SplitAssignment { assignments: Vec::new() }
    } else {
        split_cohort(&ids, cfg.seeds.split, cfg.val_frac)?
    };
    Ok(Cohort { ids, split, ehr, files })
}

fn stages(run: &mut Run<'_>) -> StageResult<Option<EvalMetrics>> {
    let cfg = run.cfg;
    let s = cfg.stages;
    if !(s.localize || s.features || s.classify || s.survival || s.neural || s.evaluate) {
        return Ok(None);
    }
    let cohort = at(Stage::Ingest, ingest(cfg))?;
    run.patients = cohort.ids.len();
    if !cohort.ids.is_empty() {
        let mut buf = Vec::new();
        at(Stage::Ingest, cohort.split.write_csv(&mut buf))?;
        at(Stage::Ingest, write_bytes(&run.out.join("split.csv"), &buf))?;
        run.files.push("split.csv".into());
    }
    if let Some(t) = &cohort.ehr {
        let times: BTreeMap<String, (f64, u8)> =
            t.patient_ids.iter().enumerate().map(|(i, id)| (id.clone(), (t.time[i], t.event[i]))).collect();
        let mut buf = Vec::new();
        at(Stage::Ingest, write_split_summary(&mut buf, &cohort.split, &times))?;
        at(Stage::Ingest, write_bytes(&run.out.join("split_summary.csv"), &buf))?;
        run.files.push("split_summary.csv".into());
    }
    let is_train = |id: &str| cohort.split.split_of(id) == Some(Split::Train);

    // per-patient processing
    let processed: Vec<ProcessedPatient> = if s.localize || s.features {
        let stage = if s.localize { Stage::Localize } else { Stage::Features };
        let opts = ProcessOptions {
            localize: s.localize,
            ..ProcessOptions::default()
        };
        let results = Exec::default().map(&cohort.files, |f| process_patient(f, &opts));
        at(stage, results.into_iter().collect::<crate::Result<Vec<_>>>())?
    } else {
        Vec::new()
    };
    if s.localize {
        localize_reports(run, &processed)?;
        run.set(Stage::Localize, StageStatus::Ok);
    }
    if s.features {
        let mut rows = Vec::new();
        for p in &processed {
            for (i, r) in p.regions.iter().enumerate() {
                rows.push((p.id.clone(), (i + 1) as u32, r.clone()));
            }
        }
        let mut buf = Vec::new();
        at(Stage::Features, write_feature_csv(&mut buf, &rows))?;
        run.write(Stage::Features, "regions.csv", &buf)?;
        let all: Vec<Vec<f64>> = processed.iter().map(|p| p.calibrated_features(&p.tumour_indices(None))).collect();
        run.write(Stage::Features, "patient_features.csv", calibrated_csv(&processed, &all).as_bytes())?;
        run.set(Stage::Features, StageStatus::Ok);
    }

    // tumour typing
    let mut classes: Option<Vec<Vec<u32>>> = None;
    if s.classify {
        if processed.iter().any(|p| p.component_truth.is_none()) {
            run.set(Stage::Classify, StageStatus::Skipped("no ground-truth label maps".into()));
        } else {
            classes = Some(classify(run, &processed, &is_train)?);
            run.set(Stage::Classify, StageStatus::Ok);
        }
    }
    let keep: Vec<Vec<usize>> = processed
        .iter()
        .enumerate()
        .map(|(i, p)| p.tumour_indices(classes.as_ref().map(|c| c[i].as_slice())))
        .collect();

    // survival regression
    let mut surv_risk: Option<HashMap<String, f64>> = None;
    if s.survival {
        let ehr = cohort.ehr.as_ref().expect("ingested");
        let ehr = at(Stage::Survival, select_ehr(ehr, &cfg.survival.ehr_columns))?;
        surv_risk = Some(survival(run, &ehr, &cohort.ids, &processed, &keep, &is_train)?);
        run.set(Stage::Survival, StageStatus::Ok);
    }

    // neural network
    let mut net_risk: Option<HashMap<String, f64>> = None;
    if s.neural {
        let ehr = cohort.ehr.as_ref().expect("ingested");
        net_risk = Some(neural(run, ehr, &processed, &keep, &is_train)?);
        run.set(Stage::Neural, StageStatus::Ok);
    }

    if !s.evaluate {
        return Ok(None);
    }
    let metrics = evaluate(run, &cohort, &processed, classes.as_deref(), surv_risk.as_ref(), net_risk.as_ref())?;
    run.set(Stage::Evaluate, StageStatus::Ok);
    Ok(Some(metrics))
}

fn select_ehr(ehr: &CohortTable, columns: &[String]) -> crate::Result<CohortTable> {
    if columns.is_empty() {
        Ok(ehr.clone())
    } else {
        ehr.select_columns(columns)
    }
}

fn localize_reports(run: &mut Run<'_>, processed: &[ProcessedPatient]) -> StageResult<()> {
    let mut csv = String::from("patient_id,head_top_mm,brain_peak_mm,neck_drop_mm,roi_z_mm,roi_y_mm,roi_x_mm,roi_size_mm\n");
    for p in processed {
        let l = p.localization.as_ref().expect("localized");
        let m = l.landmarks;
        let r = l.roi;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            p.id, m.head_top_mm, m.brain_peak_mm, m.neck_drop_mm, r.min_corner_mm[0], r.min_corner_mm[1], r.min_corner_mm[2], r.size_mm[0]
        ));
        run.write(Stage::Localize, &format!("{}_profile.csv", p.id), l.profile_csv().as_bytes())?;
    }
    run.write(Stage::Localize, "landmarks.csv", csv.as_bytes())
}

fn calibrated_csv(processed: &[ProcessedPatient], rows: &[Vec<f64>]) -> String {
    let mut s = format!("patient_id,{}\n", CALIBRATED_FEATURE_NAMES.join(","));
    for (p, r) in processed.iter().zip(rows) {
        let cells: Vec<String> = r.iter().map(|v| if v.is_nan() { String::new() } else { format!("{v}") }).collect();
        s.push_str(&format!("{},{}\n", p.id, cells.join(",")));
    }
    s
}

#[derive(Serialize)]
struct ClassifyMetrics {
    train_components: usize,
    validation_components: usize,
    train_f1_macro: f64,
    train_f1_micro: f64,
    validation_f1_macro: Option<f64>,
    validation_f1_micro: Option<f64>,
}

fn classify(
    run: &mut Run<'_>,
    processed: &[ProcessedPatient],
    is_train: &dyn Fn(&str) -> bool,
) -> StageResult<Vec<Vec<u32>>> {
    let cfg = run.cfg;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for p in processed.iter().filter(|p| is_train(&p.id)) {
        let t = p.component_truth.as_ref().expect("checked");
        for (r, &c) in p.regions.iter().zip(t) {
            x.push(r.to_vec());
            y.push(c);
        }
    }
    let params = SvmParams {
        c: cfg.classifier.c,
        gamma: cfg.classifier.gamma.map_or(Gamma::Scale, Gamma::Fixed),
        seed: cfg.seeds.classifier,
        ..SvmParams::default()
    };
    let model = at(Stage::Classify, svm_train(&x, &y, &params))?;
    let mut classes = Vec::with_capacity(processed.len());
    let mut csv = String::from("patient_id,component,split,predicted,truth\n");
    let (mut tp, mut tt, mut vp, mut vt) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for p in processed {
        let pred = at(
            Stage::Classify,
            p.regions.iter().map(|r| svm_predict(&model, &r.to_vec())).collect::<crate::Result<Vec<u32>>>(),
        )?;
        let truth = p.component_truth.as_ref().expect("checked");
        let train = is_train(&p.id);
        for (i, (&a, &b)) in pred.iter().zip(truth).enumerate() {
            let split = if train { "train" } else { "validation" };
            csv.push_str(&format!("{},{},{split},{a},{b}\n", p.id, i + 1));
            if train {
                tp.push(a);
                tt.push(b);
            } else {
                vp.push(a);
                vt.push(b);
            }
        }
        classes.push(pred);
    }
    let (train_f1_macro, train_f1_micro) = at(Stage::Classify, f1_scores(&tp, &tt))?;
    let val = f1_scores(&vp, &vt).ok();
    let metrics = ClassifyMetrics {
        train_components: tp.len(),
        validation_components: vp.len(),
        train_f1_macro,
        train_f1_micro,
        validation_f1_macro: val.map(|v| v.0),
        validation_f1_micro: val.map(|v| v.1),
    };
    run.write_json(Stage::Classify, "model.json", &model)?;
    run.write(Stage::Classify, "predictions.csv", csv.as_bytes())?;
    run.write_json(Stage::Classify, "metrics.json", &metrics)?;
    Ok(classes)
}

fn risks_csv(ids: &[String], split: &dyn Fn(&str) -> bool, risk: &HashMap<String, f64>) -> String {
    let mut s = String::from("patient_id,split,risk\n");
    for id in ids {
        if let Some(r) = risk.get(id) {
            s.push_str(&format!("{id},{},{r}\n", if split(id) { "train" } else { "validation" }));
        }
    }
    s
}

fn survival(
    run: &mut Run<'_>,
    ehr: &CohortTable,
    ids: &[String],
    processed: &[ProcessedPatient],
    keep: &[Vec<usize>],
    is_train: &dyn Fn(&str) -> bool,
) -> StageResult<HashMap<String, f64>> {
    let kind = run.cfg.survival.model;
    let ehr_cols = ehr.columns.clone();
    let table = if processed.is_empty() {
        let pos: HashMap<&str, usize> = ehr.patient_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let rows: Vec<usize> = ids.iter().filter_map(|id| pos.get(id.as_str()).copied()).collect();
        ehr.select_rows(&rows)
    } else {
        let feats: HashMap<String, Vec<f64>> =
            processed.iter().zip(keep).map(|(p, k)| (p.id.clone(), p.calibrated_features(k))).collect();
        at(Stage::Survival, survival_table(ehr, &feats, ids))?
    };
    let mut columns = ehr_cols.clone();
    if !processed.is_empty() {
        columns.extend(run.cfg.survival.features.iter().cloned());
    }
    let table = impute_missing(&at(Stage::Survival, table.select_columns(&columns))?);
    let rows = |train: bool| -> Vec<usize> { (0..table.len()).filter(|&i| is_train(&table.patient_ids[i]) == train).collect() };
    let tr = table.select_rows(&rows(true));
    let va = table.select_rows(&rows(false));
    let model = at(Stage::Survival, SurvivalModel::fit(kind, &tr))?;
    let report = at(Stage::Survival, fit_report(&model, &tr))?;
    let risks = at(Stage::Survival, predict_risks(&model, &table))?;
    let risk: HashMap<String, f64> = table.patient_ids.iter().cloned().zip(risks).collect();
    run.write_json(Stage::Survival, "model.json", &model)?;
    run.write_json(Stage::Survival, "fit_report.json", &report)?;
    let mut buf = Vec::new();
    at(Stage::Survival, write_table(&table, &mut buf))?;
    run.write(Stage::Survival, "table.csv", &buf)?;
    run.write(Stage::Survival, "risks.csv", risks_csv(&table.patient_ids, is_train, &risk).as_bytes())?;
    if !processed.is_empty() && !va.is_empty() {
        let desc = run.cfg.survival.features.clone();
        let mut both = ehr_cols.clone();
        both.extend(desc.iter().cloned());
        let sets = vec![ehr_cols, both, desc];
        let rows = calibration_sweep(&tr, &va, &sets, kind, Exec::Sequential);
        let mut csv = String::from("subset,c_index,error\n");
        for r in rows {
            csv.push_str(&format!("\"{}\",{},\"{}\"\n", r.subset.join(" "), fmt_opt(r.c_index), r.error.unwrap_or_default()));
        }
        run.write(Stage::Survival, "sweep.csv", csv.as_bytes())?;
    }
    Ok(risk)
}

fn write_table(t: &CohortTable, out: &mut Vec<u8>) -> crate::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["patient_id".to_string()];
    header.extend(t.columns.iter().cloned());
    header.extend(["time".to_string(), "event".to_string()]);
    w.write_record(&header)?;
    for i in 0..t.len() {
        let mut rec = vec![t.patient_ids[i].clone()];
        rec.extend(t.x[i].iter().map(|v| format!("{v}")));
        rec.push(format!("{}", t.time[i]));
        rec.push(t.event[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<survival table>", e))
}

fn neural(
    run: &mut Run<'_>,
    ehr: &CohortTable,
    processed: &[ProcessedPatient],
    keep: &[Vec<usize>],
    is_train: &dyn Fn(&str) -> bool,
) -> StageResult<HashMap<String, f64>> {
    let cfg = run.cfg;
    let nc = &cfg.neural;
    let cols = &cfg.survival.ehr_columns;
    let rows = at(Stage::Neural, ehr_rows(ehr, cols))?;
    let pos: HashMap<&str, usize> = ehr.patient_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut patients = Vec::new();
    for (p, k) in processed.iter().zip(keep) {
        let Some(&r) = pos.get(p.id.as_str()) else {
            return Err(PipelineError {
                stage: Stage::Neural,
                source: Error::Ingestion(format!("patient {} missing from the EHR table", p.id)),
            });
        };
        patients.push(NeuralPatient {
            patient: p,
            keep: k.clone(),
            ehr: rows[&p.id].clone(),
            time: ehr.time[r],
            event: ehr.event[r] == 1,
            train: is_train(&p.id),
        });
    }
    let inputs = at(Stage::Neural, neural_inputs(&patients, nc.architecture))?;
    let times: Vec<f64> = inputs.train.iter().map(|s| s.time).collect();
    let events: Vec<u8> = inputs.train.iter().map(|s| s.event as u8).collect();
    let n_events = events.iter().filter(|&&e| e == 1).count();
    let k = nc.bins.unwrap_or_else(|| default_bin_count(n_events));
    let bins = at(Stage::Neural, make_time_bins(&times, &events, k))?;
    let ehr_dim = patients.first().map_or(0, |p| p.ehr.len());
    let model_cfg = match nc.architecture {
        Architecture::MultiPatch => ModelConfig::multi_patch(super::dataset::NODE_DESCRIPTOR_NAMES.len(), ehr_dim, k),
        Architecture::DeepFusion => ModelConfig::deep_fusion(ehr_dim, k),
    };
    let tc = TrainConfig {
        lr: nc.lr,
        epochs: nc.epochs,
        milestones: nc.milestones.clone(),
        batch_size: nc.batch_size,
        seed: cfg.seeds.neural,
        ..TrainConfig::default()
    };
    let trained: TrainedModel<f32> = at(Stage::Neural, train(model_cfg, &inputs.train, &inputs.validation, bins, &tc, Exec::default()))?;
    let all: Vec<&PatientInput<f32>> = inputs.train.iter().chain(&inputs.validation).map(|s| &s.input).collect();
    let predicted = at(Stage::Neural, trained.predict_risks(&all, Exec::default()))?;
    // predictions come back train-first; map them to ids in the same order
    let mut with_input: Vec<&str> = Vec::new();
    for train_pass in [true, false] {
        for p in &patients {
            if p.train == train_pass && !inputs.skipped.contains(&p.patient.id) {
                with_input.push(&p.patient.id);
            }
        }
    }
    let by_id: HashMap<&str, f64> = with_input.into_iter().zip(predicted).collect();
    let ordered: Vec<Option<f64>> = patients.iter().map(|p| by_id.get(p.patient.id.as_str()).copied()).collect();
    let filled = at(Stage::Neural, fill_median(&ordered))?;
    let risk: HashMap<String, f64> = patients.iter().map(|p| p.patient.id.clone()).zip(filled).collect();
    let ids: Vec<String> = patients.iter().map(|p| p.patient.id.clone()).collect();
    let mut log = Vec::new();
    at(Stage::Neural, trained.write_log(&mut log))?;
    run.write(Stage::Neural, "training_log.csv", &log)?;
    run.write_json(Stage::Neural, "model.json", &trained)?;
    run.write(Stage::Neural, "risks.csv", risks_csv(&ids, is_train, &risk).as_bytes())?;
    if !inputs.skipped.is_empty() {
        run.write(Stage::Neural, "median_filled.csv", format!("patient_id\n{}\n", inputs.skipped.join("\n")).as_bytes())?;
    }
    Ok(risk)
}

fn evaluate(
    run: &mut Run<'_>,
    cohort: &Cohort,
    processed: &[ProcessedPatient],
    classes: Option<&[Vec<u32>]>,
    surv: Option<&HashMap<String, f64>>,
    net: Option<&HashMap<String, f64>>,
) -> StageResult<EvalMetrics> {
    let val_ids = cohort.split.ids(Split::Validation);
    let mut m = EvalMetrics {
        validation_patients: val_ids.len(),
        ..EvalMetrics::default()
    };
    if let Some(classes) = classes {
        let mut pv = Vec::new();
        let mut tv = Vec::new();
        let mut pa = Vec::new();
        let mut ta = Vec::new();
        for (p, c) in processed.iter().zip(classes) {
            let pred = at(Stage::Evaluate, p.class_map(c))?;
            let truth = p.truth.clone().expect("classified patients have truth");
            if cohort.split.split_of(&p.id) == Some(Split::Validation) {
                pv.push(pred.clone());
                tv.push(truth.clone());
            }
            pa.push(pred);
            ta.push(truth);
        }
        m.segmentation_validation = Some(at(Stage::Evaluate, evaluate_segmentation(&pv, &tv))?);
        m.segmentation_all = Some(at(Stage::Evaluate, evaluate_segmentation(&pa, &ta))?);
    }
    if let Some(ehr) = &cohort.ehr {
        let pos: HashMap<&str, usize> = ehr.patient_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let ids: Vec<&String> = val_ids.iter().filter(|id| pos.contains_key(id.as_str())).collect();
        let time: Vec<f64> = ids.iter().map(|id| ehr.time[pos[id.as_str()]]).collect();
        let event: Vec<u8> = ids.iter().map(|id| ehr.event[pos[id.as_str()]]).collect();
        let pick = |r: &HashMap<String, f64>| -> Option<Vec<f64>> { ids.iter().map(|id| r.get(*id).copied()).collect() };
        let sv = surv.and_then(pick);
        let nv = net.and_then(pick);
        let c = |r: &[f64]| concordance_index(r, &time, &event).ok();
        m.cindex_survival = sv.as_deref().and_then(c);
        m.cindex_neural = nv.as_deref().and_then(c);
        let mut csv = String::from("patient_id,time,event,survival_risk,neural_risk,ensemble_risk\n");
        let ens = match (&sv, &nv) {
            (Some(a), Some(b)) => ensemble_risk(a, b, run.cfg.ensemble).ok(),
            _ => None,
        };
        m.cindex_ensemble = ens.as_deref().and_then(c);
        for (i, id) in ids.iter().enumerate() {
            let g = |v: &Option<Vec<f64>>| fmt_opt(v.as_ref().map(|v| v[i]));
            csv.push_str(&format!("{id},{},{},{},{},{}\n", time[i], event[i], g(&sv), g(&nv), g(&ens)));
        }
        if surv.is_some() || net.is_some() {
            run.write(Stage::Evaluate, "validation_risks.csv", csv.as_bytes())?;
        }
    }
    run.write_json(Stage::Evaluate, "metrics.json", &m)?;
    Ok(m)
}
