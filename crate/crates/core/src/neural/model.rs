//! Deep Fusion and multi-patch tumour-graph survival networks.
//!
//! Both share the patch encoder and the MTLR head:
//!
//! ```text
//! multi-patch: patches -> encoder -> [emb || descriptors] -> GATv2 -> GATv2 -> mean -> [.. || ehr] -> MLP -> K logits
//! deep fusion: patch   -> encoder -> [emb || ehr] -> MLP -> K logits
//! ```

use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{conv_moments, encoder_backward, kernel_from, sweep, BnState, PatchData, PatchSweep, BN_EPS, CHANNELS, TAPS};
use super::gat::{gatv2_backward, gatv2_forward, GatCache, GatWeights};
use super::mtlr::{mtlr_loss, mtlr_risk, TimeBins};
use super::real::{affine, affine_backward, Real};
use crate::error::{Error, Result};
use crate::par::Exec;

/// Width of patch embeddings, graph layers and the MLP hidden layer.
pub const HIDDEN: usize = 64;
/// Node patch size of the multi-patch model `(z, y, x)`.
pub const GRAPH_PATCH: [usize; 3] = [32, 32, 32];
/// Region-of-interest patch size of the Deep Fusion model `(z, y, x)`.
pub const DEEP_FUSION_PATCH: [usize; 3] = [50, 80, 80];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    DeepFusion,
    MultiPatch,
}

impl FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deep_fusion" | "deep-fusion" => Ok(Architecture::DeepFusion),
            "multi_patch" | "multi-patch" => Ok(Architecture::MultiPatch),
            _ => Err(Error::Config(format!("unknown architecture '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub patch_dims: [usize; 3],
    /// Descriptor width per node (multi-patch only).
    pub desc_dim: usize,
    pub ehr_dim: usize,
    /// Number of MTLR time bins `K`.
    pub bins: usize,
    pub batch_norm: bool,
    pub bn_momentum: f64,
}

impl ModelConfig {
    pub fn multi_patch(desc_dim: usize, ehr_dim: usize, bins: usize) -> Self {
        ModelConfig {
            architecture: Architecture::MultiPatch,
            patch_dims: GRAPH_PATCH,
            desc_dim,
            ehr_dim,
            bins,
            batch_norm: true,
            bn_momentum: 0.1,
        }
    }

    pub fn deep_fusion(ehr_dim: usize, bins: usize) -> Self {
        ModelConfig {
            architecture: Architecture::DeepFusion,
            patch_dims: DEEP_FUSION_PATCH,
            desc_dim: 0,
            ehr_dim,
            bins,
            batch_norm: true,
            bn_momentum: 0.1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.bins == 0 {
            return Err(Error::Config("model needs at least one time bin".into()));
        }
        if self.patch_dims.iter().any(|&d| d < 3) {
            return Err(Error::Config(format!("patch dims {:?} too small", self.patch_dims)));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("batch-norm momentum must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Parameter blocks in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    ConvW,
    BnGamma,
    BnBeta,
    ProjW,
    ProjB,
    Gat1Wl,
    Gat1Wr,
    Gat1A,
    Gat2Wl,
    Gat2Wr,
    Gat2A,
    MlpW1,
    MlpB1,
    MlpW2,
    MlpB2,
}

pub const BLOCKS: [Block; 15] = [
    Block::ConvW,
    Block::BnGamma,
    Block::BnBeta,
    Block::ProjW,
    Block::ProjB,
    Block::Gat1Wl,
    Block::Gat1Wr,
    Block::Gat1A,
    Block::Gat2Wl,
    Block::Gat2Wr,
    Block::Gat2A,
    Block::MlpW1,
    Block::MlpB1,
    Block::MlpW2,
    Block::MlpB2,
];

impl Block {
    pub fn name(self) -> &'static str {
        match self {
            Block::ConvW => "conv_w",
            Block::BnGamma => "bn_gamma",
            Block::BnBeta => "bn_beta",
            Block::ProjW => "proj_w",
            Block::ProjB => "proj_b",
            Block::Gat1Wl => "gat1_w_l",
            Block::Gat1Wr => "gat1_w_r",
            Block::Gat1A => "gat1_a",
            Block::Gat2Wl => "gat2_w_l",
            Block::Gat2Wr => "gat2_w_r",
            Block::Gat2A => "gat2_a",
            Block::MlpW1 => "mlp_w1",
            Block::MlpB1 => "mlp_b1",
            Block::MlpW2 => "mlp_w2",
            Block::MlpB2 => "mlp_b2",
        }
    }

    /// `(length, fan_in)`; fan-in 0 marks biases and normalization parameters.
    fn shape(self, cfg: &ModelConfig) -> (usize, usize) {
        let graph = cfg.architecture == Architecture::MultiPatch;
        let g = |n: usize, fan: usize| if graph { (n, fan) } else { (0, 0) };
        let node = HIDDEN + cfg.desc_dim;
        match self {
            Block::ConvW => (TAPS * CHANNELS, TAPS),
            Block::BnGamma | Block::BnBeta => (CHANNELS, 0),
            Block::ProjW => (HIDDEN * CHANNELS, CHANNELS),
            Block::ProjB => (HIDDEN, 0),
            Block::Gat1Wl | Block::Gat1Wr => g(HIDDEN * node, node),
            Block::Gat2Wl | Block::Gat2Wr => g(HIDDEN * HIDDEN, HIDDEN),
            Block::Gat1A | Block::Gat2A => g(HIDDEN, HIDDEN),
            Block::MlpW1 => (HIDDEN * (HIDDEN + cfg.ehr_dim), HIDDEN + cfg.ehr_dim),
            Block::MlpB1 => (HIDDEN, 0),
            Block::MlpW2 => (cfg.bins * HIDDEN, HIDDEN),
            Block::MlpB2 => (cfg.bins, 0),
        }
    }
}

/// Offsets of every block inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    offsets: [usize; 16],
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut offsets = [0; 16];
        for (i, b) in BLOCKS.iter().enumerate() {
            offsets[i + 1] = offsets[i] + b.shape(cfg).0;
        }
        Layout { offsets }
    }

    pub fn range(&self, b: Block) -> Range<usize> {
        let i = b as usize;
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn total(&self) -> usize {
        self.offsets[15]
    }

    fn split<'a, T>(&self, data: &'a [T]) -> Vec<&'a [T]> {
        let mut out = Vec::with_capacity(15);
        let mut rest = data;
        for i in 0..15 {
            let (a, b) = rest.split_at(self.offsets[i + 1] - self.offsets[i]);
            out.push(a);
            rest = b;
        }
        out
    }

    fn split_mut<'a, T>(&self, data: &'a mut [T]) -> Vec<&'a mut [T]> {
        let mut out = Vec::with_capacity(15);
        let mut rest = data;
        for i in 0..15 {
            let (a, b) = rest.split_at_mut(self.offsets[i + 1] - self.offsets[i]);
            out.push(a);
            rest = b;
        }
        out
    }
}

/// Tumours of one patient as a complete graph with self-loops.
#[derive(Debug, Clone)]
pub struct TumorGraph<T> {
    pub patches: Vec<PatchData<T>>,
    /// Standardized descriptor vector per node.
    pub descriptors: Vec<Vec<f64>>,
}

impl<T: Real> TumorGraph<T> {
    pub fn new(patches: Vec<PatchData<T>>, descriptors: Vec<Vec<f64>>) -> Result<Self> {
        if patches.is_empty() {
            return Err(Error::arg("tumour graph has no nodes"));
        }
        if patches.len() != descriptors.len() {
            return Err(Error::arg("one descriptor vector per patch is required"));
        }
        if descriptors.iter().any(|d| d.len() != descriptors[0].len()) {
            return Err(Error::arg("descriptor widths differ between nodes"));
        }
        Ok(TumorGraph { patches, descriptors })
    }

    /// Deep Fusion input: one region patch, no descriptors.
    pub fn single(patch: PatchData<T>) -> Self {
        TumorGraph {
            patches: vec![patch],
            descriptors: vec![Vec::new()],
        }
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn adjacency(&self) -> Vec<Vec<bool>> {
        vec![vec![true; self.len()]; self.len()]
    }
}

#[derive(Debug, Clone)]
pub struct PatientInput<T> {
    pub graph: TumorGraph<T>,
    pub ehr: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainingSample<T> {
    pub input: PatientInput<T>,
    pub time: f64,
    pub event: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub risk: f64,
}

#[derive(Debug, Clone)]
struct SampleCache<T> {
    first_patch: usize,
    nodes: usize,
    gat: Option<(GatCache<T>, GatCache<T>)>,
    z: Vec<T>,
    pre: Vec<T>,
    hidden: Vec<T>,
}

/// Intermediates of a batched forward pass.
pub(crate) struct BatchPass<T> {
    bn: BnState,
    batch_var: [f64; CHANNELS],
    sweeps: Vec<PatchSweep>,
    samples: Vec<SampleCache<T>>,
    pub logits: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network<T> {
    pub config: ModelConfig,
    pub params: Vec<T>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl<T: Real> Network<T> {
    /// Seeded initialization: weights `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`,
    /// biases and shifts 0, batch-norm scales 1.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![T::ZERO; layout.total()];
        for b in BLOCKS {
            let (_, fan) = b.shape(&config);
            let r = layout.range(b);
            if b == Block::BnGamma {
                params[r].fill(T::ONE);
            } else if fan > 0 {
                let bound = 1.0 / (fan as f64).sqrt();
                for v in &mut params[r] {
                    *v = T::from_f64(rng.random_range(-bound..bound));
                }
            }
        }
        Ok(Network {
            config,
            params,
            running_mean: vec![0.0; CHANNELS],
            running_var: vec![1.0; CHANNELS],
        })
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }

    pub fn block(&self, b: Block) -> &[T] {
        &self.params[self.layout().range(b)]
    }

    pub fn block_mut(&mut self, b: Block) -> &mut [T] {
        let r = self.layout().range(b);
        &mut self.params[r]
    }

    fn check_input(&self, x: &PatientInput<T>) -> Result<()> {
        let c = &self.config;
        let g = &x.graph;
        if g.is_empty() {
            return Err(Error::arg("patient has no tumour patches"));
        }
        if c.architecture == Architecture::DeepFusion && g.len() != 1 {
            return Err(Error::arg("deep fusion takes exactly one patch per patient"));
        }
        if let Some(p) = g.patches.iter().find(|p| p.dims != c.patch_dims) {
            return Err(Error::arg(format!("patch dims {:?}, model expects {:?}", p.dims, c.patch_dims)));
        }
        if c.architecture == Architecture::MultiPatch && g.descriptors.iter().any(|d| d.len() != c.desc_dim) {
            return Err(Error::arg(format!("model expects {} descriptors per node", c.desc_dim)));
        }
        if x.ehr.len() != c.ehr_dim {
            return Err(Error::arg(format!("model expects {} EHR values, got {}", c.ehr_dim, x.ehr.len())));
        }
        Ok(())
    }

    fn bn_state(&self, patches: &[&PatchData<T>], kernel: &[[T; CHANNELS]; TAPS], gamma: &[T], train: bool) -> (BnState, [f64; CHANNELS]) {
        let mut bn = BnState {
            enabled: self.config.batch_norm,
            batch_stats: train && self.config.batch_norm,
            mean: [0.0; CHANNELS],
            inv_std: [1.0; CHANNELS],
            gamma: [1.0; CHANNELS],
            positions: 0.0,
        };
        let mut var = [0.0; CHANNELS];
        if !bn.enabled {
            return (bn, var);
        }
        for c in 0..CHANNELS {
            bn.gamma[c] = gamma[c].to_f64();
        }
        if bn.batch_stats {
            let (m, v, n) = conv_moments(patches, kernel);
            bn.mean = m;
            var = v;
            bn.positions = n;
        } else {
            bn.mean.copy_from_slice(&self.running_mean);
            var.copy_from_slice(&self.running_var);
        }
        for c in 0..CHANNELS {
            bn.inv_std[c] = 1.0 / (var[c] + BN_EPS).sqrt();
        }
        (bn, var)
    }

    pub(crate) fn forward_batch(&self, inputs: &[&PatientInput<T>], train: bool, exec: Exec) -> Result<BatchPass<T>> {
        if inputs.is_empty() {
            return Err(Error::arg("empty batch"));
        }
        for x in inputs {
            self.check_input(x)?;
        }
        let layout = self.layout();
        let p = layout.split(&self.params);
        let kernel = kernel_from(p[Block::ConvW as usize]);
        let patches: Vec<&PatchData<T>> = inputs.iter().flat_map(|x| x.graph.patches.iter()).collect();
        let (bn, batch_var) = self.bn_state(&patches, &kernel, p[Block::BnGamma as usize], train);
        let aff = bn.affine(p[Block::BnBeta as usize]);
        let sweeps = exec.map(&patches, |pd| sweep(pd, &kernel, &aff, train));
        let emb: Vec<Vec<T>> = sweeps
            .iter()
            .map(|sw| {
                let pooled: Vec<T> = sw.pooled.iter().map(|&v| T::from_f64(v)).collect();
                let mut e = vec![T::ZERO; HIDDEN];
                affine(p[Block::ProjW as usize], Some(p[Block::ProjB as usize]), &pooled, &mut e);
                e
            })
            .collect();
        let cfg = &self.config;
        let mut samples = Vec::with_capacity(inputs.len());
        let mut logits = Vec::with_capacity(inputs.len());
        let mut first = 0;
        for x in inputs {
            let n = x.graph.len();
            let (g, gat) = match cfg.architecture {
                Architecture::DeepFusion => (emb[first].clone(), None),
                Architecture::MultiPatch => {
                    let h: Vec<Vec<T>> = (0..n)
                        .map(|i| {
                            let mut v = emb[first + i].clone();
                            v.extend(x.graph.descriptors[i].iter().map(|&d| T::from_f64(d)));
                            v
                        })
                        .collect();
                    let w1 = GatWeights {
                        w_l: p[Block::Gat1Wl as usize],
                        w_r: p[Block::Gat1Wr as usize],
                        a: p[Block::Gat1A as usize],
                        d_in: HIDDEN + cfg.desc_dim,
                        d_out: HIDDEN,
                    };
                    let w2 = GatWeights {
                        w_l: p[Block::Gat2Wl as usize],
                        w_r: p[Block::Gat2Wr as usize],
                        a: p[Block::Gat2A as usize],
                        d_in: HIDDEN,
                        d_out: HIDDEN,
                    };
                    let (o1, c1) = gatv2_forward(&h, None, w1)?;
                    let (o2, c2) = gatv2_forward(&o1, None, w2)?;
                    let inv = T::from_f64(1.0 / n as f64);
                    let mut g = vec![T::ZERO; HIDDEN];
                    for row in &o2 {
                        for (a, b) in g.iter_mut().zip(row) {
                            *a += *b;
                        }
                    }
                    for v in &mut g {
                        *v *= inv;
                    }
                    (g, Some((c1, c2)))
                }
            };
            let mut z = g;
            z.extend(x.ehr.iter().map(|&v| T::from_f64(v)));
            let mut pre = vec![T::ZERO; HIDDEN];
            affine(p[Block::MlpW1 as usize], Some(p[Block::MlpB1 as usize]), &z, &mut pre);
            let hidden: Vec<T> = pre.iter().map(|v| v.relu()).collect();
            let mut f = vec![T::ZERO; cfg.bins];
            affine(p[Block::MlpW2 as usize], Some(p[Block::MlpB2 as usize]), &hidden, &mut f);
            logits.push(f.iter().map(|v| v.to_f64()).collect());
            samples.push(SampleCache {
                first_patch: first,
                nodes: n,
                gat,
                z,
                pre,
                hidden,
            });
            first += n;
        }
        Ok(BatchPass {
            bn,
            batch_var,
            sweeps,
            samples,
            logits,
        })
    }

    /// Parameter gradient given `d loss / d logits` for every sample of the pass.
    pub(crate) fn backward_batch(&self, inputs: &[&PatientInput<T>], pass: &BatchPass<T>, d_logits: &[Vec<f64>]) -> Vec<T> {
        let cfg = &self.config;
        let layout = self.layout();
        let p = layout.split(&self.params);
        let mut grad = vec![T::ZERO; layout.total()];
        let mut g = layout.split_mut(&mut grad);
        let n_patches = pass.sweeps.len();
        let mut d_emb = vec![vec![T::ZERO; HIDDEN]; n_patches];
        for (sc, dl) in pass.samples.iter().zip(d_logits) {
            let dl: Vec<T> = dl.iter().map(|&v| T::from_f64(v)).collect();
            let mut d_hidden = vec![T::ZERO; HIDDEN];
            affine_backward(p[Block::MlpW2 as usize], &sc.hidden, &dl, g[Block::MlpW2 as usize], Some(&mut d_hidden));
            for (b, d) in g[Block::MlpB2 as usize].iter_mut().zip(&dl) {
                *b += *d;
            }
            let d_pre: Vec<T> = d_hidden
                .iter()
                .zip(&sc.pre)
                .map(|(&d, &v)| if v > T::ZERO { d } else { T::ZERO })
                .collect();
            let mut dz = vec![T::ZERO; sc.z.len()];
            affine_backward(p[Block::MlpW1 as usize], &sc.z, &d_pre, g[Block::MlpW1 as usize], Some(&mut dz));
            for (b, d) in g[Block::MlpB1 as usize].iter_mut().zip(&d_pre) {
                *b += *d;
            }
            let dg = &dz[..HIDDEN];
            match &sc.gat {
                None => {
                    for (a, b) in d_emb[sc.first_patch].iter_mut().zip(dg) {
                        *a += *b;
                    }
                }
                Some((c1, c2)) => {
                    let inv = T::from_f64(1.0 / sc.nodes as f64);
                    let d_o2: Vec<Vec<T>> = (0..sc.nodes).map(|_| dg.iter().map(|&v| v * inv).collect()).collect();
                    let w2 = GatWeights {
                        w_l: p[Block::Gat2Wl as usize],
                        w_r: p[Block::Gat2Wr as usize],
                        a: p[Block::Gat2A as usize],
                        d_in: HIDDEN,
                        d_out: HIDDEN,
                    };
                    let (gl, rest) = g[Block::Gat2Wl as usize..].split_at_mut(1);
                    let (gr, rest) = rest.split_at_mut(1);
                    let d_o1 = gatv2_backward(w2, c2, &d_o2, gl[0], gr[0], rest[0]);
                    let w1 = GatWeights {
                        w_l: p[Block::Gat1Wl as usize],
                        w_r: p[Block::Gat1Wr as usize],
                        a: p[Block::Gat1A as usize],
                        d_in: HIDDEN + cfg.desc_dim,
                        d_out: HIDDEN,
                    };
                    let (gl, rest) = g[Block::Gat1Wl as usize..].split_at_mut(1);
                    let (gr, rest) = rest.split_at_mut(1);
                    let d_h = gatv2_backward(w1, c1, &d_o1, gl[0], gr[0], rest[0]);
                    for (i, dh) in d_h.iter().enumerate() {
                        for (a, b) in d_emb[sc.first_patch + i].iter_mut().zip(&dh[..HIDDEN]) {
                            *a += *b;
                        }
                    }
                }
            }
        }
        let mut d_pooled = vec![[0.0f64; CHANNELS]; n_patches];
        for ((sw, de), dp) in pass.sweeps.iter().zip(&d_emb).zip(&mut d_pooled) {
            let pooled: Vec<T> = sw.pooled.iter().map(|&v| T::from_f64(v)).collect();
            let mut dpt = vec![T::ZERO; CHANNELS];
            affine_backward(p[Block::ProjW as usize], &pooled, de, g[Block::ProjW as usize], Some(&mut dpt));
            for (b, d) in g[Block::ProjB as usize].iter_mut().zip(de) {
                *b += *d;
            }
            for c in 0..CHANNELS {
                dp[c] = dpt[c].to_f64();
            }
        }
        let patches: Vec<&PatchData<T>> = inputs.iter().flat_map(|x| x.graph.patches.iter()).collect();
        let kernel = kernel_from(p[Block::ConvW as usize]);
        let (gc, rest) = g.split_at_mut(1);
        let (gg, rest) = rest.split_at_mut(1);
        encoder_backward(&patches, &pass.sweeps, &pass.bn, &kernel, &d_pooled, gc[0], gg[0], rest[0]);
        drop(g);
        grad
    }

    /// Mean MTLR loss of a batch in training mode, its parameter gradient and
    /// the batch statistics of the encoder (for the running averages).
    pub fn loss_and_grad(&self, batch: &[&TrainingSample<T>], bins: &TimeBins, exec: Exec) -> Result<(f64, Vec<T>, BatchStats)> {
        if bins.k() != self.config.bins {
            return Err(Error::arg(format!("model has {} bins, time bins have {}", self.config.bins, bins.k())));
        }
        let inputs: Vec<&PatientInput<T>> = batch.iter().map(|s| &s.input).collect();
        let pass = self.forward_batch(&inputs, true, exec)?;
        let b = batch.len() as f64;
        let mut loss = 0.0;
        let mut d_logits = Vec::with_capacity(batch.len());
        for (s, f) in batch.iter().zip(&pass.logits) {
            if f.iter().any(|v| !v.is_finite()) {
                return Ok((f64::NAN, vec![T::ZERO; self.params.len()], BatchStats::default()));
            }
            let (l, gr) = mtlr_loss(f, s.time, s.event, bins)?;
            loss += l / b;
            d_logits.push(gr.into_iter().map(|v| v / b).collect::<Vec<_>>());
        }
        let grad = self.backward_batch(&inputs, &pass, &d_logits);
        let stats = BatchStats {
            mean: pass.bn.mean.to_vec(),
            var: pass.batch_var.to_vec(),
            positions: pass.bn.positions,
        };
        Ok((loss, grad, stats))
    }

    /// Mean MTLR loss in training mode (batch statistics), without gradients.
    pub fn batch_loss(&self, batch: &[&TrainingSample<T>], bins: &TimeBins, exec: Exec) -> Result<f64> {
        let inputs: Vec<&PatientInput<T>> = batch.iter().map(|s| &s.input).collect();
        let pass = self.forward_batch(&inputs, true, exec)?;
        let mut loss = 0.0;
        for (s, f) in batch.iter().zip(&pass.logits) {
            loss += mtlr_loss(f, s.time, s.event, bins)?.0;
        }
        Ok(loss / batch.len() as f64)
    }

    /// Exponential moving average of the encoder statistics; the variance
    /// uses the unbiased estimate.
    pub fn update_running_stats(&mut self, stats: &BatchStats) {
        if !self.config.batch_norm || stats.positions <= 1.0 {
            return;
        }
        let m = self.config.bn_momentum;
        let corr = stats.positions / (stats.positions - 1.0);
        for c in 0..CHANNELS {
            self.running_mean[c] = (1.0 - m) * self.running_mean[c] + m * stats.mean[c];
            self.running_var[c] = (1.0 - m) * self.running_var[c] + m * stats.var[c] * corr;
        }
    }

    /// Inference with running statistics.
    pub fn predict(&self, inputs: &[&PatientInput<T>], exec: Exec) -> Result<Vec<Prediction>> {
        let mut out = Vec::with_capacity(inputs.len());
        // inference is per patient, so batch composition cannot matter
        let per: Vec<Result<Prediction>> = exec.map(inputs, |x| {
            let pass = self.forward_batch(&[*x], false, Exec::Sequential)?;
            let logits = pass.logits.into_iter().next().expect("one sample");
            Ok(Prediction {
                risk: mtlr_risk(&logits),
                logits,
            })
        });
        for r in per {
            out.push(r?);
        }
        Ok(out)
    }

    pub fn multi_patch_forward(&self, graph: &TumorGraph<T>, ehr: &[f64]) -> Result<Prediction> {
        if self.config.architecture != Architecture::MultiPatch {
            return Err(Error::arg("not a multi-patch model"));
        }
        let x = PatientInput {
            graph: graph.clone(),
            ehr: ehr.to_vec(),
        };
        Ok(self.predict(&[&x], Exec::Sequential)?.remove(0))
    }

    pub fn deep_fusion_forward(&self, patch: &PatchData<T>, ehr: &[f64]) -> Result<Prediction> {
        if self.config.architecture != Architecture::DeepFusion {
            return Err(Error::arg("not a deep fusion model"));
        }
        let x = PatientInput {
            graph: TumorGraph::single(patch.clone()),
            ehr: ehr.to_vec(),
        };
        Ok(self.predict(&[&x], Exec::Sequential)?.remove(0))
    }

    /// Pooled encoder channels and the 64-d embedding of one patch (inference mode).
    pub fn conv_encode(&self, patch: &PatchData<T>) -> Result<(Vec<f64>, Vec<f64>)> {
        if patch.dims != self.config.patch_dims {
            return Err(Error::arg(format!("patch dims {:?}, model expects {:?}", patch.dims, self.config.patch_dims)));
        }
        let layout = self.layout();
        let p = layout.split(&self.params);
        let kernel = kernel_from(p[Block::ConvW as usize]);
        let (bn, _) = self.bn_state(&[patch], &kernel, p[Block::BnGamma as usize], false);
        let sw = sweep(patch, &kernel, &bn.affine(p[Block::BnBeta as usize]), false);
        let pooled: Vec<T> = sw.pooled.iter().map(|&v| T::from_f64(v)).collect();
        let mut e = vec![T::ZERO; HIDDEN];
        affine(p[Block::ProjW as usize], Some(p[Block::ProjB as usize]), &pooled, &mut e);
        Ok((sw.pooled.to_vec(), e.iter().map(|v| v.to_f64()).collect()))
    }
}

/// Encoder batch statistics of one training step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub positions: f64,
}
