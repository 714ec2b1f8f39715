//! Tumour typing: an RBF support vector machine over region descriptors that
//! relabels binary segmentations into background / primary / nodal classes.

mod svm;

pub use svm::{svm_predict, svm_train, BinaryMachine, Gamma, SvmModel, SvmParams, SVM_FORMAT};

use crate::error::{Error, Result};
use crate::morphology::{region_descriptors, LabelMap};
use crate::volume::{Modality, Volume};

pub const BACKGROUND: u32 = 0;
pub const GTVP: u32 = 1;
pub const GTVN: u32 = 2;

/// Minimum fraction of a component that must overlap ground-truth tumour
/// before it is treated as a tumour rather than a false positive.
pub const MIN_TUMOUR_OVERLAP: f64 = 0.10;

/// Writes each component's predicted class into its voxels. Components predicted
/// as background are erased.
pub fn relabel_segmentation(
    binary_mask: &Volume,
    lm: &LabelMap,
    model: &SvmModel,
    ct: &Volume,
    pet: &Volume,
) -> Result<Volume> {
    if binary_mask.dims() != lm.dims() {
        return Err(Error::arg("mask and label map are not aligned"));
    }
    let mut class_of = vec![BACKGROUND; lm.count() + 1];
    for label in 1..=lm.count() as u32 {
        let f = region_descriptors(lm, label, ct, pet)?;
        class_of[label as usize] = svm_predict(model, &f.to_vec())?;
    }
    let data = lm
        .labels()
        .iter()
        .zip(binary_mask.data())
        .map(|(&l, &m)| if m > 0.0 && l > 0 { class_of[l as usize] as f32 } else { 0.0 })
        .collect();
    Volume::new(data, lm.dims(), lm.spacing(), lm.origin(), Modality::Mask)
}

/// Training class of each component from a ground-truth map with labels {0, 1, 2}:
/// majority tumour class by overlap (ties to primary), or background when less than
/// [`MIN_TUMOUR_OVERLAP`] of the component touches any tumour.
pub fn component_training_labels(lm: &LabelMap, truth: &Volume) -> Result<Vec<u32>> {
    if truth.dims() != lm.dims() {
        return Err(Error::arg("ground truth and label map are not aligned"));
    }
    let mut counts = vec![[0usize; 3]; lm.count() + 1];
    for (&l, &t) in lm.labels().iter().zip(truth.data()) {
        if l > 0 {
            let c = match t.round() as i64 {
                1 => 1,
                2 => 2,
                _ => 0,
            };
            counts[l as usize][c] += 1;
        }
    }
    Ok(counts[1..]
        .iter()
        .map(|[bg, p, n]| {
            let size = (bg + p + n) as f64;
            if ((p + n) as f64) < MIN_TUMOUR_OVERLAP * size {
                BACKGROUND
            } else if n > p {
                GTVN
            } else {
                GTVP
            }
        })
        .collect())
}

/// Macro and micro F1 over the classes present in either list.
pub fn f1_scores(pred: &[u32], truth: &[u32]) -> Result<(f64, f64)> {
    if pred.is_empty() {
        return Err(Error::arg("f1 of an empty list"));
    }
    if pred.len() != truth.len() {
        return Err(Error::arg("prediction and truth lengths differ"));
    }
    let mut classes: Vec<u32> = pred.iter().chain(truth).copied().collect();
    classes.sort_unstable();
    classes.dedup();
    let (mut tp_all, mut fp_all, mut fn_all) = (0usize, 0usize, 0usize);
    // per-class F1 as exact fractions, so the macro mean is correctly rounded
    let mut per_class: Vec<(u128, u128)> = Vec::new();
    for &c in &classes {
        let tp = pred.iter().zip(truth).filter(|(&p, &t)| p == c && t == c).count();
        let fp = pred.iter().zip(truth).filter(|(&p, &t)| p == c && t != c).count();
        let fneg = pred.iter().zip(truth).filter(|(&p, &t)| p != c && t == c).count();
        tp_all += tp;
        fp_all += fp;
        fn_all += fneg;
        per_class.push((2 * tp as u128, (2 * tp + fp + fneg) as u128));
    }
    let macro_f1 = mean_of_fractions(&per_class);
    let micro_f1 = 2.0 * tp_all as f64 / (2 * tp_all + fp_all + fn_all) as f64;
    Ok((macro_f1, micro_f1))
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn mean_of_fractions(fracs: &[(u128, u128)]) -> f64 {
    let exact = fracs.iter().try_fold((0u128, 1u128), |(n, d), &(a, b)| {
        let g = gcd(d, b);
        let den = (d / g).checked_mul(b)?;
        let num = n.checked_mul(b / g)?.checked_add(a.checked_mul(d / g)?)?;
        let r = gcd(num, den).max(1);
        Some((num / r, den / r))
    });
    match exact.and_then(|(n, d)| Some((n, d.checked_mul(fracs.len() as u128)?))) {
        Some((n, d)) if n < 1 << 53 && d < 1 << 53 => n as f64 / d as f64,
        _ => fracs.iter().map(|&(a, b)| a as f64 / b as f64).sum::<f64>() / fracs.len() as f64,
    }
}
