use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Time-bin edges `tau_1 < ... < tau_K` in days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeBins {
    edges: Vec<f64>,
}

impl TimeBins {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::arg("at least one time bin is required"));
        }
        if !(edges[0] > 0.0) || edges.windows(2).any(|w| !(w[1] > w[0])) || edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::arg("bin edges must be positive and strictly increasing"));
        }
        Ok(TimeBins { edges })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn k(&self) -> usize {
        self.edges.len()
    }

    /// 0-based sequence index of a time: `s` such that `t` lies in
    /// `(tau_s, tau_{s+1}]`, or `K` when `t > tau_K`.
    pub fn interval(&self, t: f64) -> usize {
        self.edges.partition_point(|&e| e < t)
    }
}

/// Default bin count: `ceil(sqrt(#events))`, at least 1.
pub fn default_bin_count(n_events: usize) -> usize {
    ((n_events as f64).sqrt().ceil() as usize).max(1)
}

/// Edges at the nearest-rank `j/K` quantiles of the observed event times.
pub fn make_time_bins(times: &[f64], events: &[u8], k: usize) -> Result<TimeBins> {
    if k == 0 {
        return Err(Error::arg("K must be at least 1"));
    }
    if times.len() != events.len() {
        return Err(Error::arg("times and events lengths differ"));
    }
    let mut ev: Vec<f64> = times.iter().zip(events).filter(|(_, &e)| e == 1).map(|(&t, _)| t).collect();
    if ev.is_empty() {
        return Err(Error::arg("no events to place time bins"));
    }
    ev.sort_by(f64::total_cmp);
    let n = ev.len();
    let mut edges = Vec::with_capacity(k);
    for j in 1..=k {
        let rank = (j * n).div_ceil(k);
        let mut e = ev[rank - 1];
        if let Some(&prev) = edges.last() {
            if e <= prev {
                e = prev + 1e-6 * j as f64;
            }
        }
        edges.push(e);
    }
    TimeBins::new(edges)
}

/// Scores of the `K + 1` monotone sequences: sequence `s` (0-based) has
/// `y_j = 1` for every `j >= s`, so its score is the suffix sum of logits.
fn sequence_scores(f: &[f64]) -> Vec<f64> {
    let k = f.len();
    let mut s = vec![0.0; k + 1];
    for j in (0..k).rev() {
        s[j] = s[j + 1] + f[j];
    }
    s
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Probabilities of the `K + 1` sequences (event in bin 1, ..., bin K, after `tau_K`).
pub fn sequence_probabilities(f: &[f64]) -> Vec<f64> {
    let s = sequence_scores(f);
    let lz = log_sum_exp(&s);
    s.iter().map(|v| (v - lz).exp()).collect()
}

/// Negative log-likelihood of one subject and its gradient in the logits.
///
/// An event selects its own sequence. A censored subject is consistent with
/// every sequence whose event falls in a later bin than the censoring time;
/// censoring beyond `tau_K` leaves only the all-zero sequence.
pub fn mtlr_loss(f: &[f64], t: f64, event: bool, bins: &TimeBins) -> Result<(f64, Vec<f64>)> {
    let k = bins.k();
    if f.len() != k {
        return Err(Error::arg(format!("expected {k} logits, got {}", f.len())));
    }
    if !(t > 0.0) {
        return Err(Error::arg("time must be positive"));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("non-finite logits"));
    }
    let s = sequence_scores(f);
    let lz = log_sum_exp(&s);
    let p: Vec<f64> = s.iter().map(|v| (v - lz).exp()).collect();
    let bin = bins.interval(t);
    let first = if event { bin } else { (bin + 1).min(k) };
    let last = if event { bin } else { k };
    let lc = log_sum_exp(&s[first..=last]);
    let loss = lz - lc;
    // d/df_j of log sum_{s in set} exp(score_s) = P(y_j = 1 | set) = mass of sequences s <= j
    let q: Vec<f64> = (first..=last).map(|i| (s[i] - lc).exp()).collect();
    let mut grad = vec![0.0; k];
    let (mut all, mut cons) = (0.0, 0.0);
    for j in 0..k {
        all += p[j];
        if j >= first && j <= last {
            cons += q[j - first];
        }
        grad[j] = all - cons;
    }
    Ok((loss, grad))
}

/// `-sum_k S(tau_k)`: larger for earlier predicted events.
pub fn mtlr_risk(f: &[f64]) -> f64 {
    let p = sequence_probabilities(f);
    let k = f.len();
    // S(tau_j) is the mass of sequences with the event after bin j
    let mut surv = 0.0;
    let mut tail = p[k];
    for j in (0..k).rev() {
        surv += tail;
        tail += p[j];
    }
    -surv
}
