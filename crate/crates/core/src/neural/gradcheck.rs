//! Central finite-difference checks of the analytic network gradient.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{Block, Network, TrainingSample, BLOCKS};
use super::mtlr::TimeBins;
use crate::error::Result;
use crate::par::Exec;

#[derive(Debug, Clone)]
pub struct BlockCheck {
    pub block: &'static str,
    pub coordinates: usize,
    /// `|analytic - numeric| / max(|analytic|, |numeric|)` over the checked coordinates.
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockCheck>,
    pub rel_error: f64,
}

fn norm_rel(a: &[f64], n: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let s = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(n.iter().map(|x| x * x).sum::<f64>().sqrt());
    if s < 1e-12 { d } else { d / s }
}

/// Compares the gradient of the training-mode batch loss with fourth-order
/// central differences using step `step(block)`. `per_block = None` checks
/// every coordinate; otherwise a seeded sample of at most that many
/// coordinates per block. Coordinates are evaluated concurrently under `exec`.
pub fn check_gradient(
    net: &Network<f64>,
    batch: &[&TrainingSample<f64>],
    bins: &TimeBins,
    per_block: Option<usize>,
    step: impl Fn(Block) -> f64 + Sync,
    seed: u64,
    exec: Exec,
) -> Result<GradCheckReport> {
    let (_, grad, _) = net.loss_and_grad(batch, bins, Exec::Sequential)?;
    let layout = net.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<(Block, usize)> = Vec::new();
    for b in BLOCKS {
        let r = layout.range(b);
        match per_block {
            Some(m) if m < r.len() => chosen.extend(sample(&mut rng, r.len(), m).into_iter().map(|i| (b, r.start + i))),
            _ => chosen.extend(r.map(|i| (b, i))),
        }
    }
    let numeric: Vec<Result<f64>> = exec.map(&chosen, |&(b, i)| {
        let eps = step(b);
        let mut probe = net.clone();
        let mut at = |h: f64| {
            probe.params[i] = net.params[i] + h;
            probe.batch_loss(batch, bins, Exec::Sequential)
        };
        let (p1, m1, p2, m2) = (at(eps)?, at(-eps)?, at(2.0 * eps)?, at(-2.0 * eps)?);
        Ok((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * eps))
    });
    let numeric = numeric.into_iter().collect::<Result<Vec<f64>>>()?;
    let mut blocks = Vec::new();
    for b in BLOCKS {
        let idx: Vec<usize> = (0..chosen.len()).filter(|&k| chosen[k].0 == b).collect();
        if idx.is_empty() {
            continue;
        }
        let a: Vec<f64> = idx.iter().map(|&k| grad[chosen[k].1]).collect();
        let n: Vec<f64> = idx.iter().map(|&k| numeric[k]).collect();
        blocks.push(BlockCheck {
            block: b.name(),
            coordinates: idx.len(),
            rel_error: norm_rel(&a, &n),
        });
    }
    let all_a: Vec<f64> = chosen.iter().map(|&(_, i)| grad[i]).collect();
    Ok(GradCheckReport {
        rel_error: norm_rel(&all_a, &numeric),
        blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::super::model::tests::{random_sample, small_config};
    use super::super::model::{Architecture, ModelConfig, DEEP_FUSION_PATCH};
    use super::*;

    fn run(cfg: ModelConfig, nodes: &[usize], per_block: Option<usize>) -> GradCheckReport {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let samples: Vec<TrainingSample<f64>> = nodes.iter().map(|&n| random_sample(&cfg, n, &mut rng)).collect();
        let refs: Vec<&TrainingSample<f64>> = samples.iter().collect();
        let bins = TimeBins::new(vec![15.0, 35.0, 60.0, 85.0]).unwrap();
        let mut net = Network::<f64>::new(cfg, 5).unwrap();
        // move away from the initial zero biases so every ReLU branch is exercised
        for v in net.block_mut(Block::BnBeta) {
            *v = 0.1;
        }
        // sharpen attention: at the initial scale its gradient sits near the difference noise floor
        for b in [Block::Gat1Wl, Block::Gat1A, Block::Gat2Wl, Block::Gat2A] {
            for v in net.block_mut(b) {
                *v *= 4.0;
            }
        }
        check_gradient(&net, &refs, &bins, per_block, test_step, 3, Exec::default()).unwrap()
    }

    /// Attention scores are smooth but their gradient is small, so they get a
    /// wider step; everything downstream of the convolution ReLU a narrow one.
    fn test_step(b: Block) -> f64 {
        match b {
            Block::Gat1Wl | Block::Gat1A | Block::Gat2Wl | Block::Gat2A => 1e-4,
            _ => 1e-6,
        }
    }

    fn assert_ok(r: &GradCheckReport) {
        for b in &r.blocks {
            assert!(b.rel_error < 1e-4, "{}: {}", b.block, b.rel_error);
        }
        assert!(r.rel_error < 1e-4);
    }

    #[test]
    fn multi_patch_every_coordinate() {
        let r = run(small_config(Architecture::MultiPatch), &[1, 3, 2], None);
        assert_eq!(r.blocks.len(), 15);
        assert_ok(&r);
    }

    #[test]
    fn multi_patch_without_batch_norm() {
        let mut cfg = small_config(Architecture::MultiPatch);
        cfg.batch_norm = false;
        assert_ok(&run(cfg, &[2, 1], Some(40)));
    }

    #[test]
    fn deep_fusion_full_size_sampled() {
        let mut cfg = small_config(Architecture::DeepFusion);
        cfg.patch_dims = DEEP_FUSION_PATCH;
        let r = run(cfg, &[1, 1], Some(6));
        assert_eq!(r.blocks.len(), 9);
        assert_ok(&r);
    }
}
