use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::cohort::{CohortTable, Standardizer};
use super::optim::{newton_minimize, spd_inverse, Eval};
use crate::error::{Error, Result};

/// Coefficients beyond this magnitude (fitting scale) are probed for a monotone likelihood.
const SEPARATION_PROBE: f64 = 5.0;

/// Cox proportional hazards fit with Efron tie handling. No baseline hazard is kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxModel {
    pub columns: Vec<String>,
    pub standardizer: Standardizer,
    /// Raw-scale coefficients.
    pub beta: Vec<f64>,
    pub beta_std: Vec<f64>,
    /// Raw-scale covariance; rows of constant columns are zero.
    pub covariance: Option<Vec<Vec<f64>>>,
    pub log_partial_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub grad_inf: f64,
}

impl CoxModel {
    pub fn linear_predictor(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.beta.len() {
            return Err(Error::arg(format!("expected {} covariates, got {}", self.beta.len(), x.len())));
        }
        let z = self.standardizer.apply(x);
        Ok(self.beta_std.iter().zip(&z).map(|(b, v)| b * v).sum())
    }
}

/// Efron log partial likelihood with gradient and Hessian (of the log-likelihood).
pub fn cox_partial_loglik(
    beta: &[f64],
    x: &[Vec<f64>],
    time: &[f64],
    event: &[u8],
) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
    let e = eval(&DVector::from_column_slice(beta), x, time, event, &sort_desc(time), true);
    let p = beta.len();
    // eval works on the negative log-likelihood
    let h = (0..p).map(|i| e.hess.row(i).iter().map(|v| -v).collect()).collect();
    (-e.value, e.grad.iter().map(|v| -v).collect(), h)
}

fn sort_desc(time: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..time.len()).collect();
    order.sort_by(|&a, &b| time[b].total_cmp(&time[a]).then(a.cmp(&b)));
    order
}

fn eval(beta: &DVector<f64>, x: &[Vec<f64>], time: &[f64], event: &[u8], order: &[usize], second: bool) -> Eval {
    let p = beta.len();
    let mut value = 0.0;
    let mut grad = DVector::zeros(p);
    let mut hess = DMatrix::zeros(p, p);
    // running risk-set sums S0, S1, S2
    let mut s0 = 0.0;
    let mut s1 = DVector::zeros(p);
    let mut s2 = DMatrix::zeros(p, p);
    let mut k = 0;
    while k < order.len() {
        let t = time[order[k]];
        let mut end = k;
        while end < order.len() && time[order[end]] == t {
            end += 1;
        }
        // tie group: add everyone to the risk set, collect event sums
        let mut d = 0usize;
        let mut d0 = 0.0;
        let mut d1 = DVector::zeros(p);
        let mut d2 = DMatrix::zeros(p, p);
        for &i in &order[k..end] {
            let xi = DVector::from_column_slice(&x[i]);
            let eta = beta.dot(&xi);
            let w = eta.exp();
            s0 += w;
            s1 += &xi * w;
            if second {
                s2 += &xi * xi.transpose() * w;
            }
            if event[i] == 1 {
                d += 1;
                value -= eta;
                grad -= &xi;
                d0 += w;
                d1 += &xi * w;
                if second {
                    d2 += &xi * xi.transpose() * w;
                }
            }
        }
        for l in 0..d {
            let f = l as f64 / d as f64;
            let den = s0 - f * d0;
            let num1 = &s1 - &d1 * f;
            value += den.ln();
            grad += &num1 / den;
            if second {
                let num2 = &s2 - &d2 * f;
                hess += num2 / den - &num1 * num1.transpose() / (den * den);
            }
        }
        k = end;
    }
    Eval { value, grad, hess }
}

pub fn fit_cox_ph(tbl: &CohortTable) -> Result<CoxModel> {
    if tbl.has_missing() {
        return Err(Error::arg("cohort has missing cells; impute first"));
    }
    if tbl.n_events() == 0 {
        return Err(Error::Fit("no events in cohort".into()));
    }
    let p = tbl.columns.len();
    let st = Standardizer::fit(&tbl.x, p);
    let active: Vec<usize> = (0..p).filter(|&j| !st.constant[j]).collect();
    let xs: Vec<Vec<f64>> = tbl
        .x
        .iter()
        .map(|r| {
            let z = st.apply(r);
            active.iter().map(|&j| z[j]).collect()
        })
        .collect();
    let q = active.len();
    let order = sort_desc(&tbl.time);
    let f = |b: &DVector<f64>| eval(b, &xs, &tbl.time, &tbl.event, &order, true);
    let fv = |b: &DVector<f64>| eval(b, &xs, &tbl.time, &tbl.event, &order, false).value;
    let res = newton_minimize(f, fv, DVector::zeros(q), 1e-7, 200)?;

    // monotone likelihood: pushing a large coefficient further never hurts
    for k in 0..q {
        let b = res.x[k];
        if b.abs() > SEPARATION_PROBE {
            let mut probe = res.x.clone();
            probe[k] += 10.0 * b.signum();
            let v = fv(&probe);
            if v <= res.value + 1e-9 * res.value.abs().max(1.0) {
                return Err(Error::Separation {
                    column: tbl.columns[active[k]].clone(),
                });
            }
        }
    }
    if !res.converged {
        return Err(Error::Fit(format!(
            "cox fit did not converge in {} iterations (|grad| = {:.3e})",
            res.iterations, res.grad_inf
        )));
    }

    let mut beta_std = vec![0.0; p];
    for (k, &j) in active.iter().enumerate() {
        beta_std[j] = res.x[k];
    }
    let beta = (0..p).map(|j| beta_std[j] / st.scale[j]).collect();
    let covariance = spd_inverse(&res.hess).map(|inv| {
        let mut c = vec![vec![0.0; p]; p];
        for (a, &ja) in active.iter().enumerate() {
            for (b, &jb) in active.iter().enumerate() {
                c[ja][jb] = inv[(a, b)] / (st.scale[ja] * st.scale[jb]);
            }
        }
        c
    });
    Ok(CoxModel {
        columns: tbl.columns.clone(),
        standardizer: st,
        beta,
        beta_std,
        covariance,
        log_partial_likelihood: -res.value,
        iterations: res.iterations,
        converged: res.converged,
        grad_inf: res.grad_inf,
    })
}
