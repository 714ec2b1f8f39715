use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use progkit::classifier::{
    f1_scores, relabel_segmentation, svm_predict, svm_train, Gamma, SvmModel, SvmParams, GTVN, GTVP,
};
use progkit::morphology::{connected_components, read_feature_csv, region_descriptors, write_feature_csv, Connectivity};
use progkit::neural::{ensemble_risk, EnsembleMode};
use progkit::pipeline::dataset::{process_patient, PatientFiles, ProcessOptions};
use progkit::pipeline::{
    evaluate_segmentation, exit_code, make_synthetic_cohort, mini_cohort_config, run_pipeline, split_cohort,
    write_synthetic_cohort, PipelineConfig, Stages, SynthSpec,
};
use progkit::survival::{
    calibration_sweep, fit_report, impute_missing, predict_risks, CohortTable, ModelKind, SurvivalModel,
};
use progkit::volume::{load_nifti, save_nifti_with, NiftiDatatype, NiftiWriteOptions};
use progkit::{localizer, Error, Result};

#[derive(Parser)]
#[command(name = "progkit", version, about = "Head-and-neck PET/CT prognosis toolkit")]
struct Cli {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for per-patient stages.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Config override, `dotted.key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Average raw risks instead of z-scores when ensembling.
    #[arg(long, global = true)]
    raw: bool,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Head-and-neck landmarks and crop box of one scan.
    Localize {
        #[arg(long)]
        ct: PathBuf,
        #[arg(long)]
        pet: PathBuf,
    },
    /// Region descriptors of one patient's segmentation.
    Features {
        #[arg(long)]
        id: String,
        #[arg(long)]
        ct: PathBuf,
        #[arg(long)]
        pet: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Ground-truth label map; adds a `class` column.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Use the full scan instead of the localized crop.
        #[arg(long)]
        no_localize: bool,
    },
    /// Trains the tumour-type SVM on feature tables with a `class` column.
    ClassifyTrain {
        #[arg(required = true)]
        features: Vec<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Relabels a binary segmentation into primary and nodal tumours.
    ClassifyApply {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        ct: PathBuf,
        #[arg(long)]
        pet: PathBuf,
        #[arg(long)]
        mask: PathBuf,
    },
    /// Fits a survival model to a cohort table.
    SurvFit {
        table: PathBuf,
        #[arg(long, default_value = "weibull")]
        model: String,
        /// Comma-separated covariates; default all.
        #[arg(long)]
        columns: Option<String>,
    },
    /// Fits one model per column subset and scores it on a validation table.
    SurvSweep {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        validation: PathBuf,
        /// Subsets separated by `;`, columns by `,`.
        #[arg(long)]
        subsets: String,
        #[arg(long, default_value = "weibull")]
        model: String,
    },
    /// Trains the neural survival model on the configured cohort.
    MtlrTrain,
    /// Combines two `patient_id,risk` tables.
    Ensemble { a: PathBuf, b: PathBuf },
    /// Aggregated Dice of predicted label maps against ground truth (matched by file name).
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Per-centre train/validation split of the ids in a cohort table.
    Split {
        table: PathBuf,
        #[arg(long, default_value_t = 0.15)]
        val_frac: f64,
    },
    /// Writes a synthetic cohort with a ready-to-run config.
    Synth {
        #[arg(long, default_value_t = 20)]
        n: usize,
        /// Generator settings (JSON); defaults otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Runs the configured pipeline.
    Run,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, message }) => {
            eprintln!("error: {message}");
            ExitCode::from(code as u8)
        }
    }
}

struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

impl From<progkit::pipeline::PipelineError> for Failure {
    fn from(e: progkit::pipeline::PipelineError) -> Self {
        Failure {
            code: e.exit_code(),
            message: e.to_string(),
        }
    }
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let d = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&d).map_err(|e| io(&d, e))?;
    Ok(d)
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io(path, e))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("this command needs --config".into()))?;
    let mut cfg = PipelineConfig::load(path)?;
    for o in &cli.overrides {
        cfg.set(o)?;
    }
    cfg.apply_env()?;
    if let Some(s) = cli.seed {
        cfg.set_all_seeds(s);
    }
    if let Some(o) = &cli.out {
        cfg.paths.output = o.clone();
    }
    if let Some(w) = cli.workers {
        cfg.workers = Some(w);
    }
    if cli.raw {
        cfg.ensemble = EnsembleMode::RawMean;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn model_kind(s: &str) -> Result<ModelKind> {
    match s {
        "weibull" => Ok(ModelKind::Weibull),
        "cox" => Ok(ModelKind::Cox),
        _ => Err(Error::Config(format!("unknown survival model '{s}' (weibull or cox)"))),
    }
}

fn json(value: &impl serde::Serialize) -> Result<String> {
    Ok(format!("{}\n", serde_json::to_string_pretty(value)?))
}

fn read_risks(path: &Path) -> Result<HashMap<String, f64>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.to_string()).collect();
    let (Some(id), Some(risk)) = (header.iter().position(|h| h == "patient_id"), header.iter().position(|h| h == "risk"))
    else {
        return Err(Error::Ingestion(format!("{}: needs patient_id and risk columns", path.display())));
    };
    let mut out = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let r: f64 = rec[risk]
            .parse()
            .map_err(|_| Error::Ingestion(format!("{}: bad risk '{}'", path.display(), &rec[risk])))?;
        out.insert(rec[id].to_string(), r);
    }
    Ok(out)
}

fn dispatch(cli: &Cli) -> std::result::Result<(), Failure> {
    match &cli.command {
        Command::Localize { ct, pet } => {
            let loc = localizer::localize(&load_nifti(ct)?, &load_nifti(pet)?, &localizer::LocalizerParams::default())?;
            let out = out_dir(cli)?;
            write(&out.join("localization.json"), &json(&serde_json::json!({
                "landmarks": loc.landmarks,
                "roi": loc.roi,
            }))?)?;
            write(&out.join("profile.csv"), &loc.profile_csv())?;
            println!(
                "head_top_mm={} brain_peak_mm={} neck_drop_mm={}",
                loc.landmarks.head_top_mm, loc.landmarks.brain_peak_mm, loc.landmarks.neck_drop_mm
            );
        }
        Command::Features { id, ct, pet, mask, truth, no_localize } => {
            let files = PatientFiles {
                id: id.clone(),
                ct: ct.clone(),
                pet: pet.clone(),
                mask: mask.clone(),
                truth: truth.clone(),
            };
            let p = process_patient(&files, &ProcessOptions {
                localize: !no_localize,
                ..ProcessOptions::default()
            })?;
            let rows: Vec<_> = p.regions.iter().enumerate().map(|(i, r)| (p.id.clone(), (i + 1) as u32, r.clone())).collect();
            let mut buf = Vec::new();
            write_feature_csv(&mut buf, &rows)?;
            let mut text = String::from_utf8(buf).expect("csv is utf-8");
            if let Some(classes) = &p.component_truth {
                text = text
                    .lines()
                    .enumerate()
                    .map(|(k, l)| if k == 0 { format!("{l},class\n") } else { format!("{l},{}\n", classes[k - 1]) })
                    .collect();
            }
            let out = out_dir(cli)?;
            write(&out.join(format!("{id}_features.csv")), &text)?;
            println!("{} regions", rows.len());
        }
        Command::ClassifyTrain { features, c, gamma } => {
            let mut x = Vec::new();
            let mut y = Vec::new();
            for f in features {
                let file = std::fs::File::open(f).map_err(|e| io(f, e))?;
                for row in read_feature_csv(file)? {
                    let class = row
                        .class
                        .ok_or_else(|| Error::Ingestion(format!("{}: training needs a class column", f.display())))?;
                    x.push(row.features.to_vec());
                    y.push(class);
                }
            }
            let params = SvmParams {
                c: *c,
                gamma: gamma.map_or(Gamma::Scale, Gamma::Fixed),
                seed: cli.seed.unwrap_or(0),
                ..SvmParams::default()
            };
            let model = svm_train(&x, &y, &params)?;
            let pred = x.iter().map(|r| svm_predict(&model, r)).collect::<Result<Vec<u32>>>()?;
            let (macro_f1, micro_f1) = f1_scores(&pred, &y)?;
            let out = out_dir(cli)?;
            model.save(&out.join("svm_model.json"))?;
            println!("trained on {} components; training F1 macro {macro_f1:.4} micro {micro_f1:.4}", y.len());
        }
        Command::ClassifyApply { model, ct, pet, mask } => {
            let model = SvmModel::load(model)?;
            let (ct, pet, mask) = (load_nifti(ct)?, load_nifti(pet)?, load_nifti(mask)?);
            let lm = connected_components(&mask, Connectivity::TwentySix);
            let labels = relabel_segmentation(&mask, &lm, &model, &ct, &pet)?;
            let mut csv = String::from("component,class\n");
            for l in 1..=lm.count() as u32 {
                let f = region_descriptors(&lm, l, &ct, &pet)?;
                csv.push_str(&format!("{l},{}\n", svm_predict(&model, &f.to_vec())?));
            }
            let out = out_dir(cli)?;
            save_nifti_with(
                &labels,
                out.join("classified.nii.gz"),
                &NiftiWriteOptions {
                    datatype: NiftiDatatype::U8,
                    ..Default::default()
                },
            )?;
            write(&out.join("components.csv"), &csv)?;
            let count = |c: u32| labels.data().iter().filter(|&&v| v == c as f32).count();
            println!("primary voxels {} nodal voxels {}", count(GTVP), count(GTVN));
        }
        Command::SurvFit { table, model, columns } => {
            let mut t = CohortTable::read_csv(table)?;
            if let Some(cols) = columns {
                t = t.select_columns(&cols.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>())?;
            }
            let t = impute_missing(&t);
            let m = SurvivalModel::fit(model_kind(model)?, &t)?;
            let report = fit_report(&m, &t)?;
            let out = out_dir(cli)?;
            write(&out.join("survival_model.json"), &json(&m)?)?;
            write(&out.join("fit_report.json"), &json(&report)?)?;
            let mut csv = String::from("patient_id,risk\n");
            for (id, r) in t.patient_ids.iter().zip(predict_risks(&m, &t)?) {
                csv.push_str(&format!("{id},{r}\n"));
            }
            write(&out.join("risks.csv"), &csv)?;
            println!("train C-index {}", report.train_c_index.map_or("undefined".into(), |c| format!("{c:.4}")));
        }
        Command::SurvSweep { train, validation, subsets, model } => {
            let tr = impute_missing(&CohortTable::read_csv(train)?);
            let va = impute_missing(&CohortTable::read_csv(validation)?);
            let sets: Vec<Vec<String>> = subsets
                .split(';')
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.split(',').map(|c| c.trim().to_string()).collect())
                .collect();
            let rows = calibration_sweep(&tr, &va, &sets, model_kind(model)?, progkit::par::Exec::default());
            let mut csv = String::from("subset,c_index,error\n");
            for r in &rows {
                csv.push_str(&format!(
                    "\"{}\",{},\"{}\"\n",
                    r.subset.join(" "),
                    r.c_index.map(|c| c.to_string()).unwrap_or_default(),
                    r.error.clone().unwrap_or_default()
                ));
                println!("{:<60} {}", r.subset.join(","), r.c_index.map_or("failed".into(), |c| format!("{c:.4}")));
            }
            write(&out_dir(cli)?.join("sweep.csv"), &csv)?;
        }
        Command::MtlrTrain => {
            let mut cfg = load_config(cli)?;
            cfg.stages = Stages {
                localize: cfg.stages.localize,
                features: true,
                classify: cfg.stages.classify,
                neural: true,
                evaluate: true,
                ..Stages::none()
            };
            let r = run_pipeline(&cfg)?;
            if let Some(c) = r.metrics.and_then(|m| m.cindex_neural) {
                println!("validation C-index {c:.4}");
            }
        }
        Command::Ensemble { a, b } => {
            let (ra, rb) = (read_risks(a)?, read_risks(b)?);
            let mut ids: Vec<&String> = ra.keys().filter(|k| rb.contains_key(*k)).collect();
            ids.sort();
            let va: Vec<f64> = ids.iter().map(|k| ra[*k]).collect();
            let vb: Vec<f64> = ids.iter().map(|k| rb[*k]).collect();
            let mode = if cli.raw { EnsembleMode::RawMean } else { EnsembleMode::ZscoreMean };
            let e = ensemble_risk(&va, &vb, mode)?;
            let mut csv = String::from("patient_id,risk\n");
            for (id, r) in ids.iter().zip(e) {
                csv.push_str(&format!("{id},{r}\n"));
            }
            write(&out_dir(cli)?.join("ensemble_risks.csv"), &csv)?;
        }
        Command::Evaluate { pred, truth } => {
            let mut names: Vec<String> = std::fs::read_dir(pred)
                .map_err(|e| io(pred, e))?
                .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
                .filter(|n| n.ends_with(".nii") || n.ends_with(".nii.gz"))
                .collect();
            names.sort();
            if names.is_empty() {
                return Err(Error::Ingestion(format!("{}: no NIfTI label maps", pred.display())).into());
            }
            let mut p = Vec::new();
            let mut t = Vec::new();
            for n in &names {
                p.push(load_nifti(pred.join(n))?);
                let tp = truth.join(n);
                if !tp.is_file() {
                    return Err(Error::Ingestion(format!("no ground truth {}", tp.display())).into());
                }
                t.push(load_nifti(tp)?);
            }
            let s = evaluate_segmentation(&p, &t)?;
            write(&out_dir(cli)?.join("segmentation.json"), &json(&s)?)?;
            println!("dice_gtvp {} dice_gtvn {} aggregated {}", s.dice_gtvp, s.dice_gtvn, s.aggregated);
        }
        Command::Split { table, val_frac } => {
            let t = CohortTable::read_csv(table)?;
            let a = split_cohort(&t.patient_ids, cli.seed.unwrap_or(0), *val_frac)?;
            let mut buf = Vec::new();
            a.write_csv(&mut buf)?;
            write(&out_dir(cli)?.join("split.csv"), &String::from_utf8(buf).expect("csv is utf-8"))?;
            println!(
                "train {} validation {}",
                a.ids(progkit::pipeline::Split::Train).len(),
                a.ids(progkit::pipeline::Split::Validation).len()
            );
        }
        Command::Synth { n, spec } => {
            let spec: SynthSpec = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| io(p, e))?;
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                }
                None => SynthSpec::default(),
            };
            let seed = cli.seed.unwrap_or(0);
            let out = out_dir(cli)?;
            let mut cfg = mini_cohort_config(seed);
            for o in &cli.overrides {
                cfg.set(o)?;
            }
            let cohort = make_synthetic_cohort(seed, *n, &spec)?;
            write_synthetic_cohort(&cohort, &out, &cfg)?;
            println!("{} patients written to {}", n, out.display());
        }
        Command::Run => {
            let cfg = load_config(cli)?;
            let r = run_pipeline(&cfg)?;
            for (stage, status) in &r.stages {
                println!("{stage:<10} {status:?}");
            }
        }
    }
    Ok(())
}
