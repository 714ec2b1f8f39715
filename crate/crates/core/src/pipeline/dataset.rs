//! Per-patient ingestion and the tables and samples built from it.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use crate::classifier::component_training_labels;
use crate::error::{Error, Result};
use crate::localizer::{localize, Localization, LocalizerParams};
use crate::morphology::{
    connected_components, patient_feature_vector, region_descriptors, select_calibrated_features, Connectivity, LabelMap,
    RegionFeatures, CALIBRATED_FEATURE_NAMES,
};
use crate::neural::{Architecture, PatchData, PatientInput, TrainingSample, TumorGraph, DEEP_FUSION_PATCH, GRAPH_PATCH};
use crate::survival::{impute_missing, CohortTable, Standardizer};
use crate::volume::{crop_mm, extract_patch, fuse_average, load_nifti, window_clip, znormalize, Volume, CT_PAD};

/// CT soft-tissue window applied before fusion.
pub const CT_WINDOW: (f32, f32) = (-200.0, 200.0);

/// Per-node descriptor columns of the tumour graph.
pub const NODE_DESCRIPTOR_NAMES: [&str; 6] = ["centroid_x", "centroid_y", "centroid_z", "ct_mean", "pet_mean", "ct_max"];

#[derive(Debug, Clone, PartialEq)]
pub struct PatientFiles {
    pub id: String,
    pub ct: PathBuf,
    pub pet: PathBuf,
    pub mask: PathBuf,
    pub truth: Option<PathBuf>,
}

fn nifti_path(dir: &Path, stem: &str) -> Option<PathBuf> {
    ["nii.gz", "nii"].iter().map(|ext| dir.join(format!("{stem}.{ext}"))).find(|p| p.is_file())
}

/// Patients with a `<id>_ct` image, sorted by id. Every patient must also have
/// a PET image and a mask; with `truth` set, a `<id>_gtv` label map too.
pub fn discover_patients(images: &Path, masks: &Path, truth: Option<&Path>) -> Result<Vec<PatientFiles>> {
    let entries = std::fs::read_dir(images).map_err(|e| Error::io(images, e))?;
    let mut ids = Vec::new();
    for e in entries {
        let name = e.map_err(|e| Error::io(images, e))?.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix("_ct.nii.gz").or_else(|| name.strip_suffix("_ct.nii")) {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    ids.dedup();
    if ids.is_empty() {
        return Err(Error::Ingestion(format!("{}: no <id>_ct.nii[.gz] images", images.display())));
    }
    let mut missing = Vec::new();
    let mut out = Vec::new();
    for id in ids {
        let ct = nifti_path(images, &format!("{id}_ct"));
        let pet = nifti_path(images, &format!("{id}_pet"));
        let mask = nifti_path(masks, &format!("{id}_mask"));
        let gt = truth.map(|d| nifti_path(d, &format!("{id}_gtv")));
        if pet.is_none() {
            missing.push(format!("{id}_pet"));
        }
        if mask.is_none() {
            missing.push(format!("{id}_mask"));
        }
        if gt == Some(None) {
            missing.push(format!("{id}_gtv"));
        }
        if let (Some(ct), Some(pet), Some(mask)) = (ct, pet, mask) {
            out.push(PatientFiles {
                id,
                ct,
                pet,
                mask,
                truth: gt.flatten(),
            });
        }
    }
    if !missing.is_empty() {
        return Err(Error::Ingestion(format!("missing images: {}", missing.join(", "))));
    }
    Ok(out)
}

/// Everything later stages need from one patient's images.
#[derive(Debug, Clone)]
pub struct ProcessedPatient {
    pub id: String,
    pub localization: Option<Localization>,
    /// Connected components of the binary mask on the analysis grid.
    pub components: LabelMap,
    /// Descriptors per component, label order.
    pub regions: Vec<RegionFeatures>,
    /// Class per component from the ground truth, when available.
    pub component_truth: Option<Vec<u32>>,
    pub truth: Option<Volume>,
    /// Fused patch per component, centred on its centroid.
    pub patches: Vec<Volume>,
    /// Single patch centred on the mean component centroid.
    pub region_patch: Option<Volume>,
}

pub struct ProcessOptions {
    pub localize: bool,
    pub localizer: LocalizerParams,
    pub graph_patch: [usize; 3],
    pub region_patch: [usize; 3],
}

impl Default for ProcessOptions {
    fn default() -> Self {
        ProcessOptions {
            localize: true,
            localizer: LocalizerParams::default(),
            graph_patch: GRAPH_PATCH,
            region_patch: DEEP_FUSION_PATCH,
        }
    }
}

fn check_grid(id: &str, what: &str, a: &Volume, b: &Volume) -> Result<()> {
    if a.same_grid(b) {
        Ok(())
    } else {
        Err(Error::Ingestion(format!("{id}: {what} is not on the CT grid")))
    }
}

/// Localize, crop, extract components and descriptors, and cut fused patches.
pub fn process_patient(files: &PatientFiles, opts: &ProcessOptions) -> Result<ProcessedPatient> {
    let id = files.id.as_str();
    let tag = |e: Error| match e {
        Error::Detection(m) => Error::Detection(format!("{id}: {m}")),
        Error::Argument(m) => Error::Ingestion(format!("{id}: {m}")),
        other => other,
    };
    let ct = load_nifti(&files.ct)?;
    let pet = load_nifti(&files.pet)?;
    let mask = load_nifti(&files.mask)?;
    let truth = files.truth.as_ref().map(load_nifti).transpose()?;
    check_grid(id, "PET", &ct, &pet)?;
    check_grid(id, "mask", &ct, &mask)?;
    if let Some(t) = &truth {
        check_grid(id, "ground truth", &ct, t)?;
    }
    let (localization, ct, pet, mask, truth) = if opts.localize {
        let loc = localize(&ct, &pet, &opts.localizer).map_err(tag)?;
        let crop = |v: &Volume, pad: f32| crop_mm(v, &loc.roi, pad);
        let cropped = (crop(&ct, CT_PAD)?, crop(&pet, 0.0)?, crop(&mask, 0.0)?, truth.as_ref().map(|t| crop(t, 0.0)).transpose()?);
        (Some(loc), cropped.0, cropped.1, cropped.2, cropped.3)
    } else {
        (None, ct, pet, mask, truth)
    };
    let components = connected_components(&mask, Connectivity::TwentySix);
    let regions = (1..=components.count() as u32)
        .map(|l| region_descriptors(&components, l, &ct, &pet))
        .collect::<Result<Vec<_>>>()
        .map_err(tag)?;
    let component_truth = truth.as_ref().map(|t| component_training_labels(&components, t)).transpose()?;
    let fused = fuse_average(
        &znormalize(&window_clip(&ct, CT_WINDOW.0, CT_WINDOW.1)?)?,
        &znormalize(&pet)?,
    )?;
    let patches = regions
        .iter()
        .map(|r| extract_patch(&fused, r.centroid_mm, opts.graph_patch))
        .collect::<Result<Vec<_>>>()?;
    let region_patch = if regions.is_empty() {
        None
    } else {
        let n = regions.len() as f64;
        let c = [0, 1, 2].map(|a| regions.iter().map(|r| r.centroid_mm[a]).sum::<f64>() / n);
        Some(extract_patch(&fused, c, opts.region_patch)?)
    };
    Ok(ProcessedPatient {
        id: files.id.clone(),
        localization,
        components,
        regions,
        component_truth,
        truth,
        patches,
        region_patch,
    })
}

impl ProcessedPatient {
    /// Indices of the components kept as tumours: those with a non-background
    /// class in `classes`, or every component without a classification.
    pub fn tumour_indices(&self, classes: Option<&[u32]>) -> Vec<usize> {
        (0..self.regions.len())
            .filter(|&i| classes.is_none_or(|c| c[i] != crate::classifier::BACKGROUND))
            .collect()
    }

    /// The seven calibrated survival features over the kept tumours. Without
    /// tumours the six descriptor means are missing and the count is 0.
    pub fn calibrated_features(&self, keep: &[usize]) -> Vec<f64> {
        if keep.is_empty() {
            let mut v = vec![f64::NAN; CALIBRATED_FEATURE_NAMES.len()];
            *v.last_mut().expect("non-empty") = 0.0;
            return v;
        }
        let regions: Vec<RegionFeatures> = keep.iter().map(|&i| self.regions[i].clone()).collect();
        select_calibrated_features(&patient_feature_vector(&regions)).to_vec()
    }

    /// Pixel-wise class map with each component painted with its class.
    pub fn class_map(&self, classes: &[u32]) -> Result<Volume> {
        let data = self
            .components
            .labels()
            .iter()
            .map(|&l| if l == 0 { 0.0 } else { classes[l as usize - 1] as f32 })
            .collect();
        Volume::new(
            data,
            self.components.dims(),
            self.components.spacing(),
            self.components.origin(),
            crate::volume::Modality::Mask,
        )
    }
}

/// Node descriptor vector of one region, in [`NODE_DESCRIPTOR_NAMES`] order.
pub fn node_descriptors(r: &RegionFeatures) -> Vec<f64> {
    vec![r.centroid_mm[2], r.centroid_mm[1], r.centroid_mm[0], r.ct_mean, r.pet_mean, r.ct_max]
}

/// EHR rows for `patients`, in that order, joined with their calibrated features.
pub fn survival_table(ehr: &CohortTable, features: &HashMap<String, Vec<f64>>, ids: &[String]) -> Result<CohortTable> {
    let known: HashSet<&str> = ehr.patient_ids.iter().map(|s| s.as_str()).collect();
    let absent: Vec<&str> = ids.iter().map(|s| s.as_str()).filter(|id| !known.contains(id)).collect();
    if !absent.is_empty() {
        return Err(Error::Ingestion(format!("patients missing from the EHR table: {}", absent.join(", "))));
    }
    let pos: HashMap<&str, usize> = ehr.patient_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let rows: Vec<usize> = ids.iter().map(|id| pos[id.as_str()]).collect();
    let names: Vec<String> = CALIBRATED_FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    ehr.select_rows(&rows).join_columns(&names, features)
}

/// Standardized neural inputs. Descriptor and EHR scaling are fitted on the
/// training patients only.
pub struct NeuralInputs {
    pub train: Vec<TrainingSample<f32>>,
    pub validation: Vec<TrainingSample<f32>>,
    /// Patients without a usable patch, by id.
    pub skipped: Vec<String>,
}

pub struct NeuralPatient<'a> {
    pub patient: &'a ProcessedPatient,
    pub keep: Vec<usize>,
    pub ehr: Vec<f64>,
    pub time: f64,
    pub event: bool,
    pub train: bool,
}

pub fn neural_inputs(patients: &[NeuralPatient<'_>], architecture: Architecture) -> Result<NeuralInputs> {
    let ehr_rows: Vec<Vec<f64>> = patients.iter().filter(|p| p.train).map(|p| p.ehr.clone()).collect();
    let ehr_width = patients.first().map_or(0, |p| p.ehr.len());
    let ehr_scale = Standardizer::fit(&ehr_rows, ehr_width);
    let desc_rows: Vec<Vec<f64>> = patients
        .iter()
        .filter(|p| p.train)
        .flat_map(|p| p.keep.iter().map(|&i| node_descriptors(&p.patient.regions[i])))
        .collect();
    let desc_scale = Standardizer::fit(&desc_rows, NODE_DESCRIPTOR_NAMES.len());
    let mut out = NeuralInputs {
        train: Vec::new(),
        validation: Vec::new(),
        skipped: Vec::new(),
    };
    for p in patients {
        let graph = match architecture {
            Architecture::MultiPatch if !p.keep.is_empty() => {
                let patches = p
                    .keep
                    .iter()
                    .map(|&i| {
                        let v = &p.patient.patches[i];
                        PatchData::new(v.data(), v.dims())
                    })
                    .collect::<Result<Vec<_>>>()?;
                let desc = p.keep.iter().map(|&i| desc_scale.apply(&node_descriptors(&p.patient.regions[i]))).collect();
                TumorGraph::new(patches, desc)?
            }
            Architecture::DeepFusion if p.patient.region_patch.is_some() => {
                let v = p.patient.region_patch.as_ref().expect("checked");
                TumorGraph::single(PatchData::new(v.data(), v.dims())?)
            }
            _ => {
                out.skipped.push(p.patient.id.clone());
                continue;
            }
        };
        let sample = TrainingSample {
            input: PatientInput {
                graph,
                ehr: ehr_scale.apply(&p.ehr),
            },
            time: p.time,
            event: p.event,
        };
        if p.train {
            out.train.push(sample);
        } else {
            out.validation.push(sample);
        }
    }
    Ok(out)
}

/// Imputed EHR covariates per patient id.
pub fn ehr_rows(ehr: &CohortTable, columns: &[String]) -> Result<HashMap<String, Vec<f64>>> {
    let t = impute_missing(&if columns.is_empty() { ehr.clone() } else { ehr.select_columns(columns)? });
    Ok(t.patient_ids.iter().cloned().zip(t.x).collect())
}
