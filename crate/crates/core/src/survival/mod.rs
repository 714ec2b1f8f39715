//! Censored survival regression: Weibull AFT and Cox PH fits, Wald tests,
//! Harrell's concordance index and the descriptor calibration sweep.

mod cindex;
mod cohort;
mod cox;
mod optim;
mod weibull;

pub use cindex::{concordance_counts, concordance_index, ConcordanceCounts};
pub use cohort::{impute_missing, CohortTable, Standardizer, MAX_FLAG_LEVELS, MISSING_VALUE};
pub use cox::{cox_partial_loglik, fit_cox_ph, CoxModel};
pub use weibull::{fit_weibull_aft, fit_weibull_aft_with, weibull_objective, WeibullAftModel, WeibullOptions};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::par::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Cox,
    Weibull,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cox" => Ok(ModelKind::Cox),
            "weibull" => Ok(ModelKind::Weibull),
            _ => Err(Error::arg(format!("unknown survival model '{s}' (cox|weibull)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurvivalModel {
    Cox(CoxModel),
    Weibull(WeibullAftModel),
}

impl SurvivalModel {
    pub fn fit(kind: ModelKind, tbl: &CohortTable) -> Result<Self> {
        Ok(match kind {
            ModelKind::Cox => SurvivalModel::Cox(fit_cox_ph(tbl)?),
            ModelKind::Weibull => SurvivalModel::Weibull(fit_weibull_aft(tbl)?),
        })
    }

    pub fn columns(&self) -> &[String] {
        match self {
            SurvivalModel::Cox(m) => &m.columns,
            SurvivalModel::Weibull(m) => &m.columns,
        }
    }
}

/// Higher means shorter expected survival. Cox: `beta . x`; Weibull: `-log lambda`.
pub fn predict_risk(model: &SurvivalModel, x: &[f64]) -> Result<f64> {
    match model {
        SurvivalModel::Cox(m) => m.linear_predictor(x),
        SurvivalModel::Weibull(m) => Ok(-m.log_scale(x)?),
    }
}

pub fn predict_risks(model: &SurvivalModel, tbl: &CohortTable) -> Result<Vec<f64>> {
    tbl.x.iter().map(|r| predict_risk(model, r)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub name: String,
    pub beta: f64,
    /// `None` for columns excluded from the fit (constant) or fixed parameters.
    pub se: Option<f64>,
    pub z: Option<f64>,
    pub p: Option<f64>,
}

fn wald(name: &str, beta: f64, var: f64, estimated: bool) -> Result<CoefficientRow> {
    if !estimated {
        return Ok(CoefficientRow {
            name: name.to_string(),
            beta,
            se: None,
            z: None,
            p: None,
        });
    }
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::Singular(format!("variance of '{name}' is {var}")));
    }
    let se = var.sqrt();
    let z = beta / se;
    Ok(CoefficientRow {
        name: name.to_string(),
        beta,
        se: Some(se),
        z: Some(z),
        p: Some(erfc(z.abs() / std::f64::consts::SQRT_2)),
    })
}

/// Wald z-tests from the fit covariance, covariate rows in column order. The
/// Weibull table also carries `beta0` and `log_rho` rows (raw scale).
pub fn coefficient_significance(model: &SurvivalModel) -> Result<Vec<CoefficientRow>> {
    match model {
        SurvivalModel::Cox(m) => {
            let cov = m.covariance.as_ref().ok_or_else(|| Error::Singular("information matrix not invertible".into()))?;
            (0..m.beta.len())
                .map(|j| wald(&m.columns[j], m.beta[j], cov[j][j], !m.standardizer.constant[j]))
                .collect()
        }
        SurvivalModel::Weibull(m) => {
            let cov = m.covariance.as_ref().ok_or_else(|| Error::Singular("information matrix not invertible".into()))?;
            let p = m.beta.len();
            let mut rows = Vec::with_capacity(p + 2);
            for j in 0..p {
                rows.push(wald(&m.columns[j], m.beta[j], cov[1 + j][1 + j], !m.standardizer.constant[j])?);
            }
            rows.push(wald("beta0", m.beta0, cov[0][0], true)?);
            rows.push(wald("log_rho", m.log_rho, cov[p + 1][p + 1], !m.rho_fixed)?);
            Ok(rows)
        }
    }
}

/// JSON fit summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: ModelKind,
    pub n: usize,
    pub events: usize,
    pub coefficients: Vec<CoefficientRow>,
    pub rho: Option<f64>,
    pub log_rho: Option<f64>,
    pub beta0: Option<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub grad_inf: f64,
    pub train_c_index: Option<f64>,
}

pub fn fit_report(model: &SurvivalModel, tbl: &CohortTable) -> Result<FitReport> {
    let coefficients = coefficient_significance(model)?;
    let train_c_index = predict_risks(model, tbl).ok().and_then(|r| concordance_index(&r, &tbl.time, &tbl.event).ok());
    let base = FitReport {
        model: ModelKind::Cox,
        n: tbl.len(),
        events: tbl.n_events(),
        coefficients,
        rho: None,
        log_rho: None,
        beta0: None,
        log_likelihood: 0.0,
        iterations: 0,
        converged: false,
        grad_inf: 0.0,
        train_c_index,
    };
    Ok(match model {
        SurvivalModel::Cox(m) => FitReport {
            log_likelihood: m.log_partial_likelihood,
            iterations: m.iterations,
            converged: m.converged,
            grad_inf: m.grad_inf,
            ..base
        },
        SurvivalModel::Weibull(m) => FitReport {
            model: ModelKind::Weibull,
            rho: Some(m.rho()),
            log_rho: Some(m.log_rho),
            beta0: Some(m.beta0),
            log_likelihood: m.log_likelihood,
            iterations: m.iterations,
            converged: m.converged,
            grad_inf: m.grad_inf,
            ..base
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub subset: Vec<String>,
    pub c_index: Option<f64>,
    pub error: Option<String>,
}

/// Fits one model per column subset on `train` and scores it on `validation`.
/// A failing row records its error; the sweep continues.
pub fn calibration_sweep(
    train: &CohortTable,
    validation: &CohortTable,
    feature_sets: &[Vec<String>],
    kind: ModelKind,
    exec: Exec,
) -> Vec<SweepRow> {
    exec.map(feature_sets, |subset| {
        let run = || -> Result<f64> {
            let tr = train.select_columns(subset)?;
            let va = validation.select_columns(subset)?;
            let model = SurvivalModel::fit(kind, &tr)?;
            concordance_index(&predict_risks(&model, &va)?, &va.time, &va.event)
        };
        match run() {
            Ok(c) => SweepRow {
                subset: subset.clone(),
                c_index: Some(c),
                error: None,
            },
            Err(e) => SweepRow {
                subset: subset.clone(),
                c_index: None,
                error: Some(e.to_string()),
            },
        }
    })
}

/// Independent exponential censoring scaled so that roughly `censor_frac` of
/// `event_times` are censored. Returns observed times and event flags.
pub fn censor_times(event_times: &[f64], censor_frac: f64, rng: &mut impl Rng) -> (Vec<f64>, Vec<u8>) {
    if censor_frac <= 0.0 {
        return (event_times.to_vec(), vec![1; event_times.len()]);
    }
    let draws: Vec<f64> = event_times.iter().map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let frac = |s: f64| event_times.iter().zip(&draws).filter(|(t, c)| **t > s * **c).count() as f64 / event_times.len() as f64;
    let (mut lo, mut hi) = (1e-6f64, 1e9f64);
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if frac(mid) > censor_frac { lo = mid } else { hi = mid }
    }
    let s = hi;
    event_times
        .iter()
        .zip(&draws)
        .map(|(&t, &c)| if t <= s * c { (t, 1) } else { ((s * c).max(1e-9), 0) })
        .unzip()
}

/// Weibull AFT cohort with standard normal covariates `x_1..x_p`.
pub fn simulate_weibull_cohort(n: usize, beta0: f64, beta: &[f64], rho: f64, censor_frac: f64, seed: u64) -> CohortTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<Vec<f64>> = (0..n).map(|_| beta.iter().map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    let t: Vec<f64> = x
        .iter()
        .map(|r: &Vec<f64>| {
            let eta = beta0 + r.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
            let u: f64 = 1.0 - rng.random::<f64>();
            eta.exp() * (-u.ln()).powf(1.0 / rho)
        })
        .collect();
    let (time, event) = censor_times(&t, censor_frac, &mut rng);
    CohortTable::new(
        (0..n).map(|i| format!("SIM-{i:04}")).collect(),
        (1..=beta.len()).map(|j| format!("x{j}")).collect(),
        x,
        time,
        event,
    )
    .expect("simulated cohort is valid")
}
