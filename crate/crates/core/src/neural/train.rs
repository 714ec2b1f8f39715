//! Mini-batch Adam training with a multi-step learning-rate schedule.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, Network, PatientInput, TrainingSample};
use super::mtlr::TimeBins;
use super::real::Real;
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::survival::concordance_index;

pub const CHECKPOINT_FORMAT: &str = "progkit-mtlr/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Epochs (0-based) from which the learning rate is multiplied by `lr_decay`.
    pub milestones: Vec<usize>,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.016,
            epochs: 100,
            milestones: vec![60, 80],
            lr_decay: 0.1,
            batch_size: 16,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config("learning rate must be finite and non-negative".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.lr * self.lr_decay.powi(drops as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_cindex: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel<T> {
    pub format: String,
    pub network: Network<T>,
    pub bins: TimeBins,
    pub train_config: TrainConfig,
    pub history: Vec<EpochRecord>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step<T: Real>(&mut self, params: &mut [T], grad: &[T], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i].to_f64();
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let step = lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + cfg.adam_eps);
            params[i] = T::from_f64(params[i].to_f64() - step);
        }
    }
}

fn validation_cindex<T: Real>(net: &Network<T>, val: &[TrainingSample<T>], exec: Exec) -> Result<Option<f64>> {
    if val.is_empty() {
        return Ok(None);
    }
    let inputs: Vec<&PatientInput<T>> = val.iter().map(|s| &s.input).collect();
    let risks: Vec<f64> = net.predict(&inputs, exec)?.into_iter().map(|p| p.risk).collect();
    let time: Vec<f64> = val.iter().map(|s| s.time).collect();
    let event: Vec<u8> = val.iter().map(|s| s.event as u8).collect();
    Ok(concordance_index(&risks, &time, &event).ok())
}

/// Trains a freshly initialized network (seeded by `cfg.seed`) on the mean
/// MTLR loss. Batches follow a seeded shuffle, so a rerun with the same
/// inputs reproduces every parameter bit for bit.
pub fn train<T: Real>(
    model: ModelConfig,
    train_set: &[TrainingSample<T>],
    val_set: &[TrainingSample<T>],
    bins: TimeBins,
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<TrainedModel<T>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::arg("training set is empty"));
    }
    if bins.k() != model.bins {
        return Err(Error::arg("model bin count differs from the time bins"));
    }
    let mut net = Network::<T>::new(model, cfg.seed)?;
    let mut adam = Adam {
        m: vec![0.0; net.params.len()],
        v: vec![0.0; net.params.len()],
        t: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&TrainingSample<T>> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, grad, stats) = net.loss_and_grad(&batch, &bins, exec)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                let max_grad = grad.iter().map(|g| g.to_f64().abs()).fold(0.0, f64::max);
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: bi + 1,
                    max_grad,
                });
            }
            total += loss * chunk.len() as f64;
            net.update_running_stats(&stats);
            adam.step(&mut net.params, &grad, lr, cfg);
        }
        let rec = EpochRecord {
            epoch: epoch + 1,
            lr,
            train_loss: total / train_set.len() as f64,
            val_cindex: validation_cindex(&net, val_set, exec)?,
        };
        log::debug!("epoch {} lr {} loss {:.6} val C {:?}", rec.epoch, rec.lr, rec.train_loss, rec.val_cindex);
        history.push(rec);
    }
    Ok(TrainedModel {
        format: CHECKPOINT_FORMAT.into(),
        network: net,
        bins,
        train_config: cfg.clone(),
        history,
    })
}

impl<T: Real> TrainedModel<T> {
    pub fn predict_risks(&self, inputs: &[&PatientInput<T>], exec: Exec) -> Result<Vec<f64>> {
        Ok(self.network.predict(inputs, exec)?.into_iter().map(|p| p.risk).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&s)?;
        if m.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unsupported checkpoint format '{}'", m.format)));
        }
        if m.network.params.len() != super::model::Layout::new(&m.network.config).total() {
            return Err(Error::Format("checkpoint parameter count does not match its config".into()));
        }
        Ok(m)
    }

    /// `epoch,lr,train_loss,val_cindex`; an undefined C-index is left empty.
    pub fn write_log(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "lr", "train_loss", "val_cindex"])?;
        for r in &self.history {
            out.write_record([
                r.epoch.to_string(),
                r.lr.to_string(),
                r.train_loss.to_string(),
                r.val_cindex.map(|c| c.to_string()).unwrap_or_default(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("training log", e))?;
        Ok(())
    }
}
