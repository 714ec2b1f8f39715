use crate::error::{Error, Result};

/// Pair counts behind Harrell's C.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConcordanceCounts {
    pub concordant: u64,
    pub tied_risk: u64,
    pub comparable: u64,
}

impl ConcordanceCounts {
    pub fn c_index(&self) -> Result<f64> {
        if self.comparable == 0 {
            return Err(Error::Undefined("no comparable pairs for the concordance index".into()));
        }
        Ok((self.concordant as f64 + 0.5 * self.tied_risk as f64) / self.comparable as f64)
    }
}

/// Fenwick tree of counts over risk ranks.
struct Fenwick(Vec<u64>);

impl Fenwick {
    fn add(&mut self, mut i: usize) {
        i += 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of entries with rank < i.
    fn below(&self, mut i: usize) -> u64 {
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Counts pairs `(i, j)` with `t_i < t_j` and `event_i = 1`, in O(n log n).
pub fn concordance_counts(risk: &[f64], time: &[f64], event: &[u8]) -> Result<ConcordanceCounts> {
    let n = risk.len();
    if time.len() != n || event.len() != n {
        return Err(Error::arg("risk, time and event lengths differ"));
    }
    if n < 2 {
        return Err(Error::arg("concordance needs at least two subjects"));
    }
    if risk.iter().chain(time).any(|v| !v.is_finite()) {
        return Err(Error::arg("non-finite risk or time"));
    }
    let mut levels: Vec<f64> = risk.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let rank = |r: f64| levels.partition_point(|&v| v < r);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| time[b].total_cmp(&time[a]));
    let mut tree = Fenwick(vec![0; levels.len() + 1]);
    let mut inserted = 0u64;
    let mut out = ConcordanceCounts::default();
    let mut k = 0;
    while k < n {
        let mut end = k;
        while end < n && time[order[end]] == time[order[k]] {
            end += 1;
        }
        // the tree holds exactly the subjects with strictly later times
        for &i in &order[k..end] {
            if event[i] == 1 {
                let r = rank(risk[i]);
                let below = tree.below(r);
                let at = tree.below(r + 1) - below;
                out.concordant += below;
                out.tied_risk += at;
                out.comparable += inserted;
            }
        }
        for &i in &order[k..end] {
            tree.add(rank(risk[i]));
            inserted += 1;
        }
        k = end;
    }
    Ok(out)
}

/// Harrell's concordance index; higher risk should mean earlier events.
pub fn concordance_index(risk: &[f64], time: &[f64], event: &[u8]) -> Result<f64> {
    concordance_counts(risk, time, event)?.c_index()
}
