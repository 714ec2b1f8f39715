use serde::{Deserialize, Serialize};

use crate::classifier::{GTVN, GTVP};
use crate::error::{Error, Result};
use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationScores {
    pub dice_gtvp: f64,
    pub dice_gtvn: f64,
    pub aggregated: f64,
}

/// Cohort-level Dice per class, `2 * sum |P & G| / sum (|P| + |G|)`, then
/// the mean of the two classes. A class absent from every prediction and
/// every ground truth scores 1.
pub fn evaluate_segmentation(pred: &[Volume], truth: &[Volume]) -> Result<SegmentationScores> {
    if pred.len() != truth.len() {
        return Err(Error::arg(format!("{} predictions for {} ground truths", pred.len(), truth.len())));
    }
    // [class][intersection, pred size, truth size]
    let mut counts = [[0u64; 3]; 2];
    for (i, (p, t)) in pred.iter().zip(truth).enumerate() {
        if p.dims() != t.dims() {
            return Err(Error::arg(format!("patient {i}: prediction {:?} vs truth {:?}", p.dims(), t.dims())));
        }
        for (&a, &b) in p.data().iter().zip(t.data()) {
            let (a, b) = (a.round() as i64, b.round() as i64);
            for (k, class) in [GTVP, GTVN].iter().enumerate() {
                let c = *class as i64;
                let (ia, ib) = ((a == c) as u64, (b == c) as u64);
                counts[k][0] += ia & ib;
                counts[k][1] += ia;
                counts[k][2] += ib;
            }
        }
    }
    let dice = |c: [u64; 3]| {
        if c[1] + c[2] == 0 {
            1.0
        } else {
            2.0 * c[0] as f64 / (c[1] + c[2]) as f64
        }
    };
    let (p, n) = (dice(counts[0]), dice(counts[1]));
    Ok(SegmentationScores {
        dice_gtvp: p,
        dice_gtvn: n,
        aggregated: 0.5 * (p + n),
    })
}
