use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SVM_FORMAT: &str = "progkit-svm/1";

/// RBF width: `Scale` is `1 / (d * Var(X))` over the (standardized) training matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gamma {
    Scale,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub gamma: Gamma,
    pub tolerance: f64,
    pub max_iter: u64,
    pub standardize: bool,
    /// Only permutes the order in which training points enter the solver.
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 1.0,
            gamma: Gamma::Scale,
            tolerance: 1e-3,
            max_iter: 1_000_000,
            standardize: true,
            seed: 0,
        }
    }
}

/// One-vs-one machine; positive decision values vote for `class_a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMachine {
    pub class_a: u32,
    pub class_b: u32,
    pub support: Vec<Vec<f64>>,
    /// `alpha_i * y_i` for each support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
    pub iterations: u64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub format: String,
    pub classes: Vec<u32>,
    pub gamma: f64,
    pub c: f64,
    pub standardize: bool,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub machines: Vec<BinaryMachine>,
}

fn rbf(gamma: f64, u: &[f64], v: &[f64]) -> f64 {
    let d2: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    (-gamma * d2).exp()
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn transform(&self, x: &[f64]) -> Vec<f64> {
        if !self.standardize {
            return x.to_vec();
        }
        x.iter().zip(self.mean.iter().zip(&self.std)).map(|(v, (m, s))| (v - m) / s).collect()
    }

    /// Decision values of every pairwise machine, in `machines` order.
    pub fn decision_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::arg(format!("feature dimension {} != model dimension {}", x.len(), self.dim())));
        }
        let z = self.transform(x);
        Ok(self
            .machines
            .iter()
            .map(|m| m.support.iter().zip(&m.coef).map(|(s, c)| c * rbf(self.gamma, s, &z)).sum::<f64>() + m.bias)
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: SvmModel = serde_json::from_str(&text)?;
        if m.format != SVM_FORMAT {
            return Err(Error::Format(format!("{}: unsupported model format {:?}", path.display(), m.format)));
        }
        Ok(m)
    }
}

/// Majority vote over pairwise machines; ties go to the larger summed |margin|,
/// then to the lowest class. A decision value of exactly 0 casts no vote.
pub fn svm_predict(m: &SvmModel, x: &[f64]) -> Result<u32> {
    let dv = m.decision_values(x)?;
    let k = m.classes.len();
    let mut votes = vec![0u32; k];
    let mut margin = vec![0.0f64; k];
    let pos = |c: u32| m.classes.iter().position(|&v| v == c).expect("machine class in model");
    for (mach, &f) in m.machines.iter().zip(&dv) {
        let winner = if f > 0.0 {
            mach.class_a
        } else if f < 0.0 {
            mach.class_b
        } else {
            continue;
        };
        votes[pos(winner)] += 1;
        margin[pos(winner)] += f.abs();
    }
    let mut best = 0;
    for c in 1..k {
        if votes[c] > votes[best] || (votes[c] == votes[best] && margin[c] > margin[best]) {
            best = c;
        }
    }
    Ok(m.classes[best])
}

pub fn svm_train(x: &[Vec<f64>], y: &[u32], params: &SvmParams) -> Result<SvmModel> {
    if x.len() != y.len() {
        return Err(Error::arg("feature and label counts differ"));
    }
    let d = x.first().map(|r| r.len()).ok_or_else(|| Error::arg("empty training set"))?;
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::arg("feature vectors have different dimensions"));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::arg("non-finite feature value"));
    }
    if !(params.c > 0.0) {
        return Err(Error::arg("C must be positive"));
    }
    let mut classes: Vec<u32> = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::arg("svm needs at least two classes"));
    }

    let n = x.len() as f64;
    let (mean, std) = if params.standardize {
        let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std: Vec<f64> = (0..d)
            .map(|j| {
                let s = (x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt();
                if s > 0.0 { s } else { 1.0 }
            })
            .collect();
        (mean, std)
    } else {
        (vec![0.0; d], vec![1.0; d])
    };
    let z: Vec<Vec<f64>> = x
        .iter()
        .map(|r| r.iter().zip(mean.iter().zip(&std)).map(|(v, (m, s))| (v - m) / s).collect())
        .collect();

    let gamma = match params.gamma {
        Gamma::Fixed(g) if g > 0.0 => g,
        Gamma::Fixed(_) => return Err(Error::arg("gamma must be positive")),
        Gamma::Scale => {
            let all = z.iter().flatten();
            let cnt = n * d as f64;
            let mu = all.clone().sum::<f64>() / cnt;
            let var = all.map(|v| (v - mu).powi(2)).sum::<f64>() / cnt;
            if var > 0.0 { 1.0 / (d as f64 * var) } else { 1.0 }
        }
    };

    let mut order: Vec<usize> = (0..x.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(params.seed));

    let mut machines = Vec::new();
    for (ia, &a) in classes.iter().enumerate() {
        for &b in &classes[ia + 1..] {
            let idx: Vec<usize> = order.iter().copied().filter(|&i| y[i] == a || y[i] == b).collect();
            let pts: Vec<&[f64]> = idx.iter().map(|&i| z[i].as_slice()).collect();
            let lab: Vec<f64> = idx.iter().map(|&i| if y[i] == a { 1.0 } else { -1.0 }).collect();
            let sol = smo(&pts, &lab, gamma, params.c, params.tolerance, params.max_iter);
            if !sol.converged {
                log::warn!("svm pair ({a}, {b}) stopped at the iteration cap");
            }
            let mut support = Vec::new();
            let mut coef = Vec::new();
            for (k, &al) in sol.alpha.iter().enumerate() {
                if al > 0.0 {
                    support.push(pts[k].to_vec());
                    coef.push(al * lab[k]);
                }
            }
            machines.push(BinaryMachine {
                class_a: a,
                class_b: b,
                support,
                coef,
                bias: sol.bias,
                iterations: sol.iterations,
                converged: sol.converged,
            });
        }
    }
    Ok(SvmModel {
        format: SVM_FORMAT.to_string(),
        classes,
        gamma,
        c: params.c,
        standardize: params.standardize,
        mean,
        std,
        machines,
    })
}

pub(crate) struct SmoSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub iterations: u64,
    pub converged: bool,
}

const TAU: f64 = 1e-12;
const CACHE_LIMIT: usize = 3000;

/// Kernel rows, precomputed for small problems.
struct Kernel<'a> {
    pts: &'a [&'a [f64]],
    gamma: f64,
    full: Option<Vec<f64>>,
}

impl Kernel<'_> {
    fn row(&self, i: usize, out: &mut [f64]) {
        let n = self.pts.len();
        match &self.full {
            Some(k) => out.copy_from_slice(&k[i * n..(i + 1) * n]),
            None => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = rbf(self.gamma, self.pts[i], self.pts[j]);
                }
            }
        }
    }
}

/// Dual SMO with maximal-violating-pair selection. `y` is +-1.
pub(crate) fn smo(pts: &[&[f64]], y: &[f64], gamma: f64, c: f64, eps: f64, max_iter: u64) -> SmoSolution {
    let n = pts.len();
    let full = (n <= CACHE_LIMIT).then(|| {
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = rbf(gamma, pts[i], pts[j]);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        k
    });
    let kernel = Kernel { pts, gamma, full };
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut ki = vec![0.0; n];
    let mut kj = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iter {
        let (mut i, mut gmax) = (usize::MAX, f64::NEG_INFINITY);
        let (mut j, mut gmin) = (usize::MAX, f64::INFINITY);
        for t in 0..n {
            let v = -y[t] * grad[t];
            let up = (y[t] > 0.0 && alpha[t] < c) || (y[t] < 0.0 && alpha[t] > 0.0);
            let low = (y[t] > 0.0 && alpha[t] > 0.0) || (y[t] < 0.0 && alpha[t] < c);
            if up && v > gmax {
                gmax = v;
                i = t;
            }
            if low && v < gmin {
                gmin = v;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < eps {
            converged = true;
            break;
        }
        iterations += 1;
        kernel.row(i, &mut ki);
        kernel.row(j, &mut kj);
        let qij = y[i] * y[j] * ki[j];
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let mut quad = ki[i] + kj[j] + 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = ki[i] + kj[j] - 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * di + y[j] * kj[t] * dj);
        }
    }

    // bias from free vectors, or the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut nfree, mut sfree) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else {
            nfree += 1;
            sfree += yg;
        }
    }
    let rho = if nfree > 0 { sfree / nfree as f64 } else { (ub + lb) / 2.0 };
    SmoSolution {
        alpha,
        bias: -rho,
        iterations,
        converged,
    }
}
