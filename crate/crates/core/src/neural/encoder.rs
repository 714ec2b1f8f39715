//! Patch encoder: valid 3x3x3 convolution (1 -> 16 channels), batch norm,
//! ReLU, global average pooling.
//!
//! Batch-norm statistics of a convolution output are quadratic forms of
//! data-only moments (neighbourhood sums and their 27x27 Gram matrix), so
//! those are cached per patch. One sweep over a patch then yields the pooled
//! activations together with the masked neighbourhood sums needed for the
//! kernel gradient; no activations are stored.

use super::real::Real;
use crate::error::{Error, Result};

pub const CHANNELS: usize = 16;
pub const TAPS: usize = 27;
pub const BN_EPS: f64 = 1e-5;

/// A patch plus its cached first and second neighbourhood moments.
#[derive(Debug, Clone)]
pub struct PatchData<T> {
    pub dims: [usize; 3],
    pub voxels: Vec<T>,
    /// Sum over output positions of each tap value.
    pub tap_sum: [f64; TAPS],
    /// Row-major `TAPS x TAPS` sums of tap products.
    pub tap_gram: Vec<f64>,
    pub positions: usize,
}

fn tap_offsets(dims: [usize; 3]) -> [usize; TAPS] {
    let [_, ny, nx] = dims;
    let mut off = [0; TAPS];
    let mut k = 0;
    for dz in 0..3 {
        for dy in 0..3 {
            for dx in 0..3 {
                off[k] = (dz * ny + dy) * nx + dx;
                k += 1;
            }
        }
    }
    off
}

impl<T: Real> PatchData<T> {
    pub fn new(voxels: &[f32], dims: [usize; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d < 3) {
            return Err(Error::arg(format!("patch dims {dims:?} too small for a 3x3x3 kernel")));
        }
        if voxels.len() != dims.iter().product::<usize>() {
            return Err(Error::arg("patch data does not match dims"));
        }
        let v: Vec<T> = voxels.iter().map(|&x| T::from_f64(x as f64)).collect();
        let off = tap_offsets(dims);
        let [nz, ny, nx] = dims;
        let mut tap_sum = [0.0; TAPS];
        let mut gram = vec![0.0; TAPS * TAPS];
        let mut taps = [0.0f64; TAPS];
        for z in 0..nz - 2 {
            for y in 0..ny - 2 {
                let base = (z * ny + y) * nx;
                for x in 0..nx - 2 {
                    let n = base + x;
                    for k in 0..TAPS {
                        taps[k] = v[n + off[k]].to_f64();
                        tap_sum[k] += taps[k];
                    }
                    for a in 0..TAPS {
                        let ta = taps[a];
                        let row = &mut gram[a * TAPS..a * TAPS + a + 1];
                        for (g, tb) in row.iter_mut().zip(&taps[..=a]) {
                            *g += ta * tb;
                        }
                    }
                }
            }
        }
        for a in 0..TAPS {
            for b in 0..a {
                gram[b * TAPS + a] = gram[a * TAPS + b];
            }
        }
        Ok(PatchData {
            dims,
            voxels: v,
            tap_sum,
            tap_gram: gram,
            positions: (nz - 2) * (ny - 2) * (nx - 2),
        })
    }
}

/// Per-channel affine map `a = scale * y + shift` applied after the convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ChannelAffine<T> {
    pub scale: [T; CHANNELS],
    pub shift: [T; CHANNELS],
}

/// Per-patch results of one sweep.
#[derive(Debug, Clone)]
pub(crate) struct PatchSweep {
    /// Mean over positions of ReLU(a).
    pub pooled: [f64; CHANNELS],
    /// Number of positions with `a > 0`.
    pub active: [f64; CHANNELS],
    /// Sum of the raw convolution output over active positions.
    pub active_y: [f64; CHANNELS],
    /// `[tap][channel]` sums of tap values over active positions.
    pub active_taps: Option<Vec<[f64; CHANNELS]>>,
}

#[inline(always)]
fn sweep_body<T: Real>(p: &PatchData<T>, w: &[[T; CHANNELS]; TAPS], aff: &ChannelAffine<T>, with_taps: bool) -> PatchSweep {
    let off = tap_offsets(p.dims);
    let [nz, ny, nx] = p.dims;
    let x = &p.voxels;
    let mut pooled = [0.0f64; CHANNELS];
    let mut active = [0.0f64; CHANNELS];
    let mut active_y = [0.0f64; CHANNELS];
    let mut taps_acc = vec![[0.0f64; CHANNELS]; if with_taps { TAPS } else { 0 }];
    let mut row_taps = [[T::ZERO; CHANNELS]; TAPS];
    for z in 0..nz - 2 {
        for yy in 0..ny - 2 {
            // row-local accumulators in T, flushed to f64 once per row
            let mut r_pool = [T::ZERO; CHANNELS];
            let mut r_act = [T::ZERO; CHANNELS];
            let mut r_y = [T::ZERO; CHANNELS];
            if with_taps {
                row_taps = [[T::ZERO; CHANNELS]; TAPS];
            }
            let base = (z * ny + yy) * nx;
            for xx in 0..nx - 2 {
                let n = base + xx;
                let mut t = [T::ZERO; TAPS];
                for k in 0..TAPS {
                    t[k] = x[n + off[k]];
                }
                let mut y = [T::ZERO; CHANNELS];
                for k in 0..TAPS {
                    let v = t[k];
                    let wk = &w[k];
                    for c in 0..CHANNELS {
                        y[c] += wk[c] * v;
                    }
                }
                let mut m = [T::ZERO; CHANNELS];
                for c in 0..CHANNELS {
                    let a = aff.scale[c] * y[c] + aff.shift[c];
                    let on = if a > T::ZERO { T::ONE } else { T::ZERO };
                    m[c] = on;
                    r_pool[c] += on * a;
                    r_act[c] += on;
                    r_y[c] += on * y[c];
                }
                if with_taps {
                    for k in 0..TAPS {
                        let v = t[k];
                        let acc = &mut row_taps[k];
                        for c in 0..CHANNELS {
                            acc[c] += m[c] * v;
                        }
                    }
                }
            }
            for c in 0..CHANNELS {
                pooled[c] += r_pool[c].to_f64();
                active[c] += r_act[c].to_f64();
                active_y[c] += r_y[c].to_f64();
            }
            if with_taps {
                for (acc, row) in taps_acc.iter_mut().zip(&row_taps) {
                    for c in 0..CHANNELS {
                        acc[c] += row[c].to_f64();
                    }
                }
            }
        }
    }
    let n = p.positions as f64;
    for v in &mut pooled {
        *v /= n;
    }
    PatchSweep {
        pooled,
        active,
        active_y,
        active_taps: with_taps.then_some(taps_acc),
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn sweep_avx2<T: Real>(p: &PatchData<T>, w: &[[T; CHANNELS]; TAPS], aff: &ChannelAffine<T>, with_taps: bool) -> PatchSweep {
    sweep_body(p, w, aff, with_taps)
}

pub(crate) fn sweep<T: Real>(p: &PatchData<T>, w: &[[T; CHANNELS]; TAPS], aff: &ChannelAffine<T>, with_taps: bool) -> PatchSweep {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
            // SAFETY: the required CPU features were detected at runtime.
            return unsafe { sweep_avx2(p, w, aff, with_taps) };
        }
    }
    sweep_body(p, w, aff, with_taps)
}

/// Convolution kernel `[tap][channel]` from a flat parameter slice.
pub(crate) fn kernel_from<T: Real>(flat: &[T]) -> [[T; CHANNELS]; TAPS] {
    let mut w = [[T::ZERO; CHANNELS]; TAPS];
    for k in 0..TAPS {
        w[k].copy_from_slice(&flat[k * CHANNELS..(k + 1) * CHANNELS]);
    }
    w
}

/// Channel means and (biased) variances of the convolution output over a set of patches.
pub(crate) fn conv_moments<T: Real>(patches: &[&PatchData<T>], w: &[[T; CHANNELS]; TAPS]) -> ([f64; CHANNELS], [f64; CHANNELS], f64) {
    let mut s = [0.0; TAPS];
    let mut g = vec![0.0; TAPS * TAPS];
    let mut m = 0.0;
    for p in patches {
        for k in 0..TAPS {
            s[k] += p.tap_sum[k];
        }
        for (a, b) in g.iter_mut().zip(&p.tap_gram) {
            *a += b;
        }
        m += p.positions as f64;
    }
    let mut mean = [0.0; CHANNELS];
    let mut var = [0.0; CHANNELS];
    for c in 0..CHANNELS {
        let wc: Vec<f64> = (0..TAPS).map(|k| w[k][c].to_f64()).collect();
        let mu = (0..TAPS).map(|k| wc[k] * s[k]).sum::<f64>() / m;
        let mut q = 0.0;
        for a in 0..TAPS {
            let row = &g[a * TAPS..(a + 1) * TAPS];
            q += wc[a] * row.iter().zip(&wc).map(|(x, y)| x * y).sum::<f64>();
        }
        mean[c] = mu;
        var[c] = (q / m - mu * mu).max(0.0);
    }
    (mean, var, m)
}

/// Normalization used by one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct BnState {
    pub enabled: bool,
    /// Statistics come from the batch itself (training mode).
    pub batch_stats: bool,
    pub mean: [f64; CHANNELS],
    pub inv_std: [f64; CHANNELS],
    pub gamma: [f64; CHANNELS],
    pub positions: f64,
}

impl BnState {
    pub fn affine<T: Real>(&self, beta: &[T]) -> ChannelAffine<T> {
        let mut scale = [T::ZERO; CHANNELS];
        let mut shift = [T::ZERO; CHANNELS];
        for c in 0..CHANNELS {
            if self.enabled {
                let s = self.gamma[c] * self.inv_std[c];
                scale[c] = T::from_f64(s);
                shift[c] = T::from_f64(beta[c].to_f64() - s * self.mean[c]);
            } else {
                scale[c] = T::ONE;
            }
        }
        ChannelAffine { scale, shift }
    }
}

/// Gradients of the encoder parameters given `d loss / d pooled` for each patch.
///
/// Writes into `d_kernel` (`[tap][channel]` flat), `d_gamma`, `d_beta`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn encoder_backward<T: Real>(
    patches: &[&PatchData<T>],
    sweeps: &[PatchSweep],
    bn: &BnState,
    w: &[[T; CHANNELS]; TAPS],
    d_pooled: &[[f64; CHANNELS]],
    d_kernel: &mut [T],
    d_gamma: &mut [T],
    d_beta: &mut [T],
) {
    let mut s = [0.0; TAPS];
    let mut g = vec![0.0; TAPS * TAPS];
    if bn.enabled && bn.batch_stats {
        for p in patches {
            for k in 0..TAPS {
                s[k] += p.tap_sum[k];
            }
            for (a, b) in g.iter_mut().zip(&p.tap_gram) {
                *a += b;
            }
        }
    }
    for c in 0..CHANNELS {
        // d a_i = G_p on active positions, G_p = d pooled / N_p
        let mut direct = [0.0; TAPS];
        let mut db = 0.0;
        let mut dg = 0.0;
        for ((p, sw), dp) in patches.iter().zip(sweeps).zip(d_pooled) {
            let gp = dp[c] / p.positions as f64;
            if gp == 0.0 {
                continue;
            }
            let taps = sw.active_taps.as_ref().expect("sweep ran with tap sums");
            for k in 0..TAPS {
                direct[k] += gp * taps[k][c];
            }
            db += gp * sw.active[c];
            dg += gp * (sw.active_y[c] - bn.mean[c] * sw.active[c]) * bn.inv_std[c];
        }
        if !bn.enabled {
            for k in 0..TAPS {
                d_kernel[k * CHANNELS + c] += T::from_f64(direct[k]);
            }
            continue;
        }
        d_gamma[c] += T::from_f64(dg);
        d_beta[c] += T::from_f64(db);
        let coef = bn.gamma[c] * bn.inv_std[c];
        if bn.batch_stats {
            let m = bn.positions;
            let wc: Vec<f64> = (0..TAPS).map(|k| w[k][c].to_f64()).collect();
            for k in 0..TAPS {
                let gw: f64 = g[k * TAPS..(k + 1) * TAPS].iter().zip(&wc).map(|(a, b)| a * b).sum();
                let yhat_x = (gw - bn.mean[c] * s[k]) * bn.inv_std[c];
                let v = coef * (direct[k] - db * s[k] / m - dg * yhat_x / m);
                d_kernel[k * CHANNELS + c] += T::from_f64(v);
            }
        } else {
            for k in 0..TAPS {
                d_kernel[k * CHANNELS + c] += T::from_f64(coef * direct[k]);
            }
        }
    }
}
