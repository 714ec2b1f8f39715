use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub patient_id: String,
    pub centre: String,
    pub split: Split,
}

/// Split of every patient, in input order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub assignments: Vec<Assignment>,
}

impl SplitAssignment {
    pub fn ids(&self, split: Split) -> Vec<String> {
        self.assignments
            .iter()
            .filter(|a| a.split == split)
            .map(|a| a.patient_id.clone())
            .collect()
    }

    pub fn id_set(&self, split: Split) -> HashSet<String> {
        self.ids(split).into_iter().collect()
    }

    pub fn split_of(&self, id: &str) -> Option<Split> {
        self.assignments.iter().find(|a| a.patient_id == id).map(|a| a.split)
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["patient_id", "centre", "split"])?;
        for a in &self.assignments {
            w.write_record([a.patient_id.as_str(), a.centre.as_str(), a.split.name()])?;
        }
        w.flush().map_err(|e| Error::io("<split csv>", e))?;
        Ok(())
    }
}

/// Centre code: the part of the id before the first `-`.
pub fn centre_of(id: &str) -> Option<&str> {
    match id.split_once('-') {
        Some((c, rest)) if !c.is_empty() && !rest.is_empty() => Some(c),
        _ => None,
    }
}

/// Per-centre random allocation. The validation total is `round(frac * n)`;
/// centres receive `floor(frac * n_c)` each and the remainder goes to the
/// largest fractional parts (ties by centre name), so every centre is within
/// one patient of its proportional share.
pub fn split_cohort(ids: &[String], seed: u64, val_frac: f64) -> Result<SplitAssignment> {
    if ids.is_empty() {
        return Err(Error::Ingestion("no patient ids to split".into()));
    }
    if !(val_frac > 0.0 && val_frac < 1.0) {
        return Err(Error::arg(format!("validation fraction must lie in (0, 1), got {val_frac}")));
    }
    let bad: Vec<&str> = ids.iter().filter(|id| centre_of(id).is_none()).map(|s| s.as_str()).collect();
    if !bad.is_empty() {
        return Err(Error::Ingestion(format!("ids without a centre prefix: {}", bad.join(", "))));
    }
    let mut seen = HashSet::new();
    let dups: Vec<&str> = ids.iter().filter(|id| !seen.insert(id.as_str())).map(|s| s.as_str()).collect();
    if !dups.is_empty() {
        return Err(Error::Ingestion(format!("duplicate ids: {}", dups.join(", "))));
    }
    let mut by_centre: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, id) in ids.iter().enumerate() {
        by_centre.entry(centre_of(id).expect("checked")).or_default().push(i);
    }
    let total = (val_frac * ids.len() as f64).round() as usize;
    let mut quota: Vec<(&str, usize, f64)> = by_centre
        .iter()
        .map(|(c, members)| {
            let q = val_frac * members.len() as f64;
            (*c, q.floor() as usize, q - q.floor())
        })
        .collect();
    let assigned: usize = quota.iter().map(|q| q.1).sum();
    let mut order: Vec<usize> = (0..quota.len()).collect();
    order.sort_by(|&a, &b| quota[b].2.total_cmp(&quota[a].2).then(quota[a].0.cmp(quota[b].0)));
    for &k in order.iter().cycle().take(total.saturating_sub(assigned)) {
        quota[k].1 += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = vec![Split::Train; ids.len()];
    for ((_, members), (_, n_val, _)) in by_centre.iter().zip(&quota) {
        let mut m = members.clone();
        m.shuffle(&mut rng);
        for &i in m.iter().take(*n_val) {
            split[i] = Split::Validation;
        }
    }
    Ok(SplitAssignment {
        assignments: ids
            .iter()
            .zip(split)
            .map(|(id, s)| Assignment {
                patient_id: id.clone(),
                centre: centre_of(id).expect("checked").to_string(),
                split: s,
            })
            .collect(),
    })
}

/// Survival-time histograms (20 equal-width bins over `[0, max time]`) and
/// censoring proportion per split, as `split,n,censored_fraction,bin,bin_lo,bin_hi,count` rows.
pub fn write_split_summary(
    out: impl Write,
    split: &SplitAssignment,
    times: &BTreeMap<String, (f64, u8)>,
) -> Result<()> {
    const BINS: usize = 20;
    let t_max = times.values().map(|v| v.0).fold(0.0, f64::max);
    let width = if t_max > 0.0 { t_max / BINS as f64 } else { 1.0 };
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["split", "n", "censored_fraction", "bin", "bin_lo", "bin_hi", "count"])?;
    for s in [Split::Train, Split::Validation] {
        let rows: Vec<(f64, u8)> = split.ids(s).iter().filter_map(|id| times.get(id).copied()).collect();
        let n = rows.len();
        let censored = rows.iter().filter(|r| r.1 == 0).count();
        let frac = if n > 0 { censored as f64 / n as f64 } else { 0.0 };
        let mut counts = [0usize; BINS];
        for (t, _) in &rows {
            counts[((t / width) as usize).min(BINS - 1)] += 1;
        }
        for (b, c) in counts.iter().enumerate() {
            w.write_record([
                s.name().to_string(),
                n.to_string(),
                format!("{frac}"),
                b.to_string(),
                format!("{}", b as f64 * width),
                format!("{}", (b + 1) as f64 * width),
                c.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<split summary>", e))?;
    Ok(())
}
