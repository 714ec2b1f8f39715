//! Synthetic head-and-neck cohorts with known geometry and planted survival.
//!
//! Each phantom is a stack of elliptic cylinders: a flat-topped head, a
//! narrower neck and a wide torso, on a CT air background. PET has a tissue
//! floor, a hot brain ball below the head top and a hotter "bladder" ball far
//! inferior. One to three ellipsoidal tumours (the first primary, the rest
//! nodal) sit in the neck region. Event times follow a Weibull AFT model whose
//! log-scale depends on the patients' mean tumour PET uptake, age and HPV
//! status.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Paths, PipelineConfig, Stages};
use super::split::{split_cohort, write_split_summary};
use crate::classifier::{GTVN, GTVP};
use crate::error::{Error, Result};
use crate::survival::{censor_times, CohortTable};
use crate::volume::{save_nifti_with, Modality, NiftiDatatype, NiftiWriteOptions, Volume};

pub const CENTRES: [&str; 6] = ["CHUM", "CHUP", "CHUS", "HGJ", "HMR", "MDA"];
pub const EHR_COLUMNS: [&str; 6] = ["age", "gender", "hpv", "tobacco", "chemotherapy", "weight"];

const AIR_HU: f32 = -1000.0;
const TISSUE_HU: f32 = 30.0;
const TUMOUR_HU: f32 = 55.0;
/// Head height; the neck transition sits this far below the head top.
pub const HEAD_HEIGHT_MM: f64 = 210.0;
const NECK_HEIGHT_MM: f64 = 90.0;
pub const BRAIN_OFFSET_MM: f64 = 85.0;
pub const BLADDER_OFFSET_MM: f64 = 500.0;
/// Reference uptake used to centre the planted covariate.
const SUV_REF: f64 = 7.0;
const SUV_SCALE: f64 = 2.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub censor_frac: f64,
    pub rho: f64,
    pub beta0: f64,
    /// Effect of the standardized mean tumour SUV on log survival time.
    pub beta_suv: f64,
    pub beta_age: f64,
    pub beta_hpv: f64,
    pub max_tumours: usize,
    /// Probability of a spurious non-tumour blob in the binary mask.
    pub false_positive_rate: f64,
    /// Probability that the HPV status is unknown.
    pub hpv_missing_rate: f64,
    /// Relative CT/PET noise amplitude.
    pub noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            dims: [180, 64, 64],
            spacing: [6.0, 4.0, 4.0],
            censor_frac: 0.3,
            rho: 1.5,
            beta0: 6.5,
            beta_suv: -0.6,
            beta_age: -0.2,
            beta_hpv: 0.4,
            max_tumours: 3,
            false_positive_rate: 0.3,
            hpv_missing_rate: 0.1,
            noise: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TumourTruth {
    pub class: u32,
    pub centre_mm: [f64; 3],
    pub radii_mm: [f64; 3],
    pub suv: f64,
}

/// Generative parameters of one phantom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientTruth {
    pub patient_id: String,
    pub head_top_mm: f64,
    pub brain_peak_mm: f64,
    pub neck_mm: f64,
    pub bladder_mm: f64,
    pub tumours: Vec<TumourTruth>,
    pub false_positive: Option<[f64; 3]>,
    pub log_scale: f64,
    pub event_time: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticPatient {
    pub truth: PatientTruth,
    pub ct: Volume,
    pub pet: Volume,
    /// Ground-truth labels {0, 1, 2}.
    pub labels: Volume,
    /// Binary segmentation handed to the pipeline.
    pub mask: Volume,
    /// Values in [`EHR_COLUMNS`] order; NaN marks a missing entry.
    pub ehr: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub spec: SynthSpec,
    pub seed: u64,
    pub patients: Vec<SyntheticPatient>,
    pub ehr: CohortTable,
}

fn inside(p: [f64; 3], c: [f64; 3], r: [f64; 3]) -> bool {
    (0..3).map(|a| ((p[a] - c[a]) / r[a]).powi(2)).sum::<f64>() <= 1.0
}

/// Generates one phantom and its uncensored event time.
pub fn generate_patient(id: String, spec: &SynthSpec, rng: &mut impl Rng) -> Result<SyntheticPatient> {
    let [nz, ny, nx] = spec.dims;
    let sp = spec.spacing;
    let height = nz as f64 * sp[0];
    let needed = 60.0 + BLADDER_OFFSET_MM + BRAIN_OFFSET_MM + 80.0;
    if height < needed {
        return Err(Error::arg(format!("phantom needs at least {needed} mm of z extent, got {height}")));
    }
    let head_top = 40.0 + rng.random_range(0.0..30.0);
    let neck = head_top + HEAD_HEIGHT_MM;
    let torso = neck + NECK_HEIGHT_MM;
    let brain = head_top + BRAIN_OFFSET_MM;
    let bladder = brain + BLADDER_OFFSET_MM;
    let cy = (ny - 1) as f64 * sp[1] / 2.0;
    let cx = (nx - 1) as f64 * sp[2] / 2.0;
    let half_fov = (ny.min(nx) as f64 * sp[1].min(sp[2])) / 2.0;
    let head_r = [0.0, 0.65 * half_fov, 0.55 * half_fov];
    let neck_r = [0.0, 0.38 * half_fov, 0.32 * half_fov];
    let torso_r = [0.0, 0.95 * half_fov, 0.8 * half_fov];

    // tumours: first primary, the rest nodal, non-overlapping, inside the neck
    let n_tum = rng.random_range(1..=spec.max_tumours.max(1));
    let mut tumours: Vec<TumourTruth> = Vec::new();
    let mut attempts = 0;
    while tumours.len() < n_tum && attempts < 200 {
        attempts += 1;
        let class = if tumours.is_empty() { GTVP } else { GTVN };
        let base = if class == GTVP { 9.0 } else { 6.0 };
        let radii = [0, 1, 2].map(|_| base + rng.random_range(0.0..5.0));
        let c = [
            neck - 70.0 + rng.random_range(0.0..120.0),
            cy + rng.random_range(-0.5..0.5) * neck_r[1],
            cx + rng.random_range(-0.5..0.5) * neck_r[2],
        ];
        if tumours.iter().any(|t| {
            let d = (0..3).map(|a| (t.centre_mm[a] - c[a]).powi(2)).sum::<f64>().sqrt();
            d < t.radii_mm.iter().fold(0.0f64, |m, &r| m.max(r)) + radii.iter().fold(0.0f64, |m, &r| m.max(r)) + 2.0 * sp[0]
        }) {
            continue;
        }
        let suv = if class == GTVP { rng.random_range(4.0..14.0) } else { rng.random_range(3.0..11.0) };
        tumours.push(TumourTruth {
            class,
            centre_mm: c,
            radii_mm: radii,
            suv,
        });
    }
    let false_positive = rng.random_bool(spec.false_positive_rate.clamp(0.0, 1.0)).then(|| {
        [head_top + 40.0 + rng.random_range(0.0..60.0), cy + 0.3 * head_r[1], cx - 0.3 * head_r[2]]
    });
    let fp_r = [1.5 * sp[0], 2.0 * sp[1], 2.0 * sp[2]];

    let n = nz * ny * nx;
    let mut ct = vec![AIR_HU; n];
    let mut pet = vec![0.0f32; n];
    let mut labels = vec![0.0f32; n];
    let mut mask = vec![0.0f32; n];
    let amp = spec.noise as f32;
    for z in 0..nz {
        let pz = z as f64 * sp[0];
        let radii = if pz < head_top {
            None
        } else if pz < neck {
            Some(head_r)
        } else if pz < torso {
            Some(neck_r)
        } else {
            Some(torso_r)
        };
        for y in 0..ny {
            let py = y as f64 * sp[1];
            for x in 0..nx {
                let px = x as f64 * sp[2];
                let i = (z * ny + y) * nx + x;
                let Some(r) = radii else { continue };
                if ((py - cy) / r[1]).powi(2) + ((px - cx) / r[2]).powi(2) > 1.0 {
                    continue;
                }
                let p = [pz, py, px];
                let mut hu = TISSUE_HU;
                let mut suv = 1.0f64;
                if inside(p, [brain, cy, cx], [55.0, 0.5 * head_r[1], 0.5 * head_r[2]]) {
                    suv = 7.0;
                    hu = 35.0;
                }
                if inside(p, [bladder, cy, cx], [40.0, 35.0, 35.0]) {
                    suv = 25.0;
                }
                for t in &tumours {
                    if inside(p, t.centre_mm, t.radii_mm) {
                        suv = t.suv;
                        hu = TUMOUR_HU;
                        labels[i] = t.class as f32;
                        mask[i] = 1.0;
                    }
                }
                if let Some(c) = false_positive {
                    if inside(p, c, fp_r) {
                        mask[i] = 1.0;
                    }
                }
                ct[i] = hu + amp * 20.0 * (rng.random::<f32>() - 0.5);
                pet[i] = (suv as f32 * (1.0 + amp * 0.2 * (rng.random::<f32>() - 0.5))).max(0.0);
            }
        }
    }
    let vol = |d: Vec<f32>, m: Modality| Volume::new(d, spec.dims, sp, [0.0; 3], m);

    let age = (60.0 + 10.0 * (rng.random::<f64>() + rng.random::<f64>() + rng.random::<f64>() - 1.5) * 2.0).round();
    let gender = rng.random_bool(0.3) as u8 as f64;
    let hpv_val = rng.random_bool(0.5) as u8 as f64;
    let hpv = if rng.random_bool(spec.hpv_missing_rate.clamp(0.0, 1.0)) { f64::NAN } else { hpv_val };
    let tobacco = rng.random_bool(0.4) as u8 as f64;
    let chemo = rng.random_bool(0.6) as u8 as f64;
    let weight = (75.0 + 15.0 * (rng.random::<f64>() - 0.5) * 2.0).round();
    let mean_suv = tumours.iter().map(|t| t.suv).sum::<f64>() / tumours.len().max(1) as f64;
    let log_scale = spec.beta0
        + spec.beta_suv * (mean_suv - SUV_REF) / SUV_SCALE
        + spec.beta_age * (age - 60.0) / 10.0
        + spec.beta_hpv * hpv_val;
    let u: f64 = 1.0 - rng.random::<f64>();
    let event_time = log_scale.exp() * (-u.ln()).powf(1.0 / spec.rho);

    Ok(SyntheticPatient {
        truth: PatientTruth {
            patient_id: id,
            head_top_mm: head_top,
            brain_peak_mm: brain,
            neck_mm: neck,
            bladder_mm: bladder,
            tumours,
            false_positive,
            log_scale,
            event_time,
        },
        ct: vol(ct, Modality::Ct)?,
        pet: vol(pet, Modality::Pet)?,
        labels: vol(labels, Modality::Mask)?,
        mask: vol(mask, Modality::Mask)?,
        ehr: vec![age, gender, hpv, tobacco, chemo, weight],
    })
}

/// Patient ids cycle through the centre codes: `CHUM-000`, `CHUP-001`, ...
pub fn synthetic_id(i: usize) -> String {
    format!("{}-{i:03}", CENTRES[i % CENTRES.len()])
}

/// Censors the event times of a generated set and builds the EHR table.
pub fn cohort_table(patients: &[SyntheticPatient], censor_frac: f64, rng: &mut impl Rng) -> Result<CohortTable> {
    let t: Vec<f64> = patients.iter().map(|p| p.truth.event_time).collect();
    let (time, event) = censor_times(&t, censor_frac, rng);
    CohortTable::new(
        patients.iter().map(|p| p.truth.patient_id.clone()).collect(),
        EHR_COLUMNS.iter().map(|s| s.to_string()).collect(),
        patients.iter().map(|p| p.ehr.clone()).collect(),
        time,
        event,
    )
}

pub fn make_synthetic_cohort(seed: u64, n_patients: usize, spec: &SynthSpec) -> Result<SyntheticCohort> {
    if n_patients == 0 {
        return Err(Error::arg("synthetic cohort needs at least one patient"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let patients = (0..n_patients)
        .map(|i| generate_patient(synthetic_id(i), spec, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let ehr = cohort_table(&patients, spec.censor_frac, &mut rng)?;
    Ok(SyntheticCohort {
        spec: spec.clone(),
        seed,
        patients,
        ehr,
    })
}

/// Layout: `images/<id>_{ct,pet}.nii.gz`, `masks/<id>_mask.nii.gz`,
/// `truth/<id>_gtv.nii.gz`, `ehr.csv`, `truth_params.json`,
/// `split_summary.csv` and a ready-to-run `config.json`.
pub fn write_synthetic_cohort(cohort: &SyntheticCohort, dir: &Path, config: &PipelineConfig) -> Result<()> {
    for sub in ["images", "masks", "truth"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let i16_opts = NiftiWriteOptions {
        datatype: NiftiDatatype::I16,
        ..Default::default()
    };
    let u8_opts = NiftiWriteOptions {
        datatype: NiftiDatatype::U8,
        ..Default::default()
    };
    for p in &cohort.patients {
        let id = &p.truth.patient_id;
        let ct = p.ct.map(Modality::Ct, |v| v.round())?;
        save_nifti_with(&ct, dir.join("images").join(format!("{id}_ct.nii.gz")), &i16_opts)?;
        save_nifti_with(&p.pet, dir.join("images").join(format!("{id}_pet.nii.gz")), &NiftiWriteOptions::default())?;
        save_nifti_with(&p.mask, dir.join("masks").join(format!("{id}_mask.nii.gz")), &u8_opts)?;
        save_nifti_with(&p.labels, dir.join("truth").join(format!("{id}_gtv.nii.gz")), &u8_opts)?;
    }
    cohort.ehr.write_csv(&dir.join("ehr.csv"))?;
    #[derive(Serialize)]
    struct TruthFile<'a> {
        seed: u64,
        spec: &'a SynthSpec,
        patients: Vec<&'a PatientTruth>,
    }
    let truth = TruthFile {
        seed: cohort.seed,
        spec: &cohort.spec,
        patients: cohort.patients.iter().map(|p| &p.truth).collect(),
    };
    write_text(&dir.join("truth_params.json"), &serde_json::to_string_pretty(&truth)?)?;
    let split = split_cohort(&cohort.ehr.patient_ids, config.seeds.split, config.val_frac)?;
    let times: BTreeMap<String, (f64, u8)> = cohort
        .ehr
        .patient_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), (cohort.ehr.time[i], cohort.ehr.event[i])))
        .collect();
    let mut buf = Vec::new();
    write_split_summary(&mut buf, &split, &times)?;
    write_bytes(&dir.join("split_summary.csv"), &buf)?;
    write_text(&dir.join("config.json"), &config.to_json())?;
    Ok(())
}

/// Config for a cohort written by [`write_synthetic_cohort`], with paths
/// relative to the cohort directory.
pub fn mini_cohort_config(seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(Paths {
        images: "images".into(),
        masks: "masks".into(),
        truth: Some("truth".into()),
        ehr_csv: "ehr.csv".into(),
        output: "out".into(),
    });
    cfg.stages = Stages::default();
    cfg.set_all_seeds(seed);
    cfg.val_frac = 0.25;
    cfg.survival.ehr_columns = vec!["age".into(), "hpv".into()];
    cfg.survival.features = vec!["pet_mean".into(), "n_tumours".into()];
    cfg
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survival::{fit_weibull_aft, CohortTable};

    fn small_spec() -> SynthSpec {
        SynthSpec {
            dims: [140, 24, 24],
            spacing: [6.0, 8.0, 8.0],
            ..SynthSpec::default()
        }
    }

    #[test]
    fn phantom_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = generate_patient("MDA-001".into(), &small_spec(), &mut rng).unwrap();
        let t = &p.truth;
        assert!(!t.tumours.is_empty() && t.tumours.len() <= 3);
        assert_eq!(t.tumours[0].class, GTVP);
        assert!(t.tumours[1..].iter().all(|x| x.class == GTVN));
        assert!(t.bladder_mm - t.brain_peak_mm >= 500.0 - 1e-9);
        // every labelled voxel is in the binary mask
        for (l, m) in p.labels.data().iter().zip(p.mask.data()) {
            if *l > 0.0 {
                assert_eq!(*m, 1.0);
            }
        }
        assert!(p.labels.data().iter().any(|&l| l == 1.0));
        // air above the head
        assert_eq!(p.ct.get(0, 12, 12), AIR_HU);
        let too_short = SynthSpec {
            dims: [20, 8, 8],
            ..small_spec()
        };
        assert!(generate_patient("A-1".into(), &too_short, &mut rng).is_err());
    }

    #[test]
    fn zero_censoring_means_all_events() {
        let spec = SynthSpec {
            censor_frac: 0.0,
            ..small_spec()
        };
        let c = make_synthetic_cohort(3, 5, &spec).unwrap();
        assert!(c.ehr.event.iter().all(|&e| e == 1));
        assert_eq!(c.ehr.patient_ids[1], "CHUP-001");
    }

    #[test]
    fn byte_identical_outputs() {
        let spec = SynthSpec {
            dims: [130, 12, 12],
            spacing: [6.0, 16.0, 16.0],
            ..SynthSpec::default()
        };
        let cfg = mini_cohort_config(4);
        let read_all = |d: &Path| {
            let mut files: Vec<(String, Vec<u8>)> = Vec::new();
            for sub in ["", "images", "masks", "truth"] {
                for e in std::fs::read_dir(d.join(sub)).unwrap() {
                    let e = e.unwrap();
                    if e.file_type().unwrap().is_file() {
                        files.push((format!("{sub}/{}", e.file_name().to_string_lossy()), std::fs::read(e.path()).unwrap()));
                    }
                }
            }
            files.sort();
            files
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_synthetic_cohort(&make_synthetic_cohort(9, 3, &spec).unwrap(), a.path(), &cfg).unwrap();
        write_synthetic_cohort(&make_synthetic_cohort(9, 3, &spec).unwrap(), b.path(), &cfg).unwrap();
        let (fa, fb) = (read_all(a.path()), read_all(b.path()));
        assert_eq!(fa.len(), 3 * 4 + 4);
        assert_eq!(fa, fb);
        let back = CohortTable::read_csv(&a.path().join("ehr.csv")).unwrap();
        assert_eq!(back.columns.len(), EHR_COLUMNS.len());
    }

    #[test]
    fn planted_weibull_shape() {
        // the time model alone, without rendering volumes
        let spec = SynthSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 2000;
        let mut x = Vec::new();
        let mut t = Vec::new();
        for _ in 0..n {
            let suv: f64 = rng.random_range(3.0..14.0);
            let z = (suv - SUV_REF) / SUV_SCALE;
            let u: f64 = 1.0 - rng.random::<f64>();
            t.push((spec.beta0 + spec.beta_suv * z).exp() * (-u.ln()).powf(1.0 / spec.rho));
            x.push(vec![z]);
        }
        let (time, event) = censor_times(&t, 0.3, &mut rng);
        let tbl = CohortTable::new((0..n).map(|i| format!("S-{i}")).collect(), vec!["z".into()], x, time, event).unwrap();
        let m = fit_weibull_aft(&tbl).unwrap();
        assert!((m.rho() - spec.rho).abs() < 0.1 * spec.rho);
    }
}
