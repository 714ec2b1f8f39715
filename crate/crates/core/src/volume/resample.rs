use serde::{Deserialize, Serialize};

use super::{check_spacing, Modality, Volume};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Trilinear,
    Nearest,
}

/// Resamples onto a grid with `target_spacing` covering the same physical extent.
///
/// Both grids share their outer edge: output voxel `k` sits at
/// `edge + (k + 0.5) * target`, where `edge = origin - 0.5 * spacing`. The output
/// has `max(1, round(n * spacing / target))` voxels per axis. Samples falling
/// beyond the outermost input centres are clamped to the border voxel.
pub fn resample(v: &Volume, target_spacing: [f64; 3], mode: Interpolation) -> Result<Volume> {
    check_spacing(&target_spacing).map_err(|_| {
        Error::arg(format!("target spacing must be positive, got {target_spacing:?}"))
    })?;
    let sp = v.spacing();
    let dims_in = v.dims();
    let dims = [0, 1, 2].map(|a| {
        ((dims_in[a] as f64 * sp[a] / target_spacing[a]).round() as usize).max(1)
    });
    let ratio = [0, 1, 2].map(|a| target_spacing[a] / sp[a]);
    let origin = [0, 1, 2].map(|a| {
        if target_spacing[a] == sp[a] { v.origin()[a] } else { v.origin()[a] - 0.5 * sp[a] + 0.5 * target_spacing[a] }
    });

    // continuous input coordinate of every output index, per axis
    let coords: [Vec<f64>; 3] = [0, 1, 2].map(|a| {
        (0..dims[a])
            .map(|k| {
                let c = k as f64 * ratio[a] + 0.5 * ratio[a] - 0.5;
                c.clamp(0.0, (dims_in[a] - 1) as f64)
            })
            .collect()
    });

    let mut data = Vec::with_capacity(dims.iter().product());
    match mode {
        Interpolation::Nearest => {
            let idx: [Vec<usize>; 3] = [0, 1, 2].map(|a| {
                coords[a]
                    .iter()
                    .map(|&c| ((c + 0.5).floor() as usize).min(dims_in[a] - 1))
                    .collect()
            });
            for &z in &idx[0] {
                for &y in &idx[1] {
                    for &x in &idx[2] {
                        data.push(v.get(z, y, x));
                    }
                }
            }
        }
        Interpolation::Trilinear => {
            let split = |c: f64, n: usize| -> (usize, usize, f64) {
                let i0 = c.floor() as usize;
                let t = c - i0 as f64;
                if t == 0.0 || i0 + 1 >= n {
                    (i0.min(n - 1), i0.min(n - 1), 0.0)
                } else {
                    (i0, i0 + 1, t)
                }
            };
            let w: [Vec<(usize, usize, f64)>; 3] =
                [0, 1, 2].map(|a| coords[a].iter().map(|&c| split(c, dims_in[a])).collect());
            let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else { a + (b - a) * t };
            for &(z0, z1, tz) in &w[0] {
                for &(y0, y1, ty) in &w[1] {
                    for &(x0, x1, tx) in &w[2] {
                        let g = |z, y, x| v.get(z, y, x) as f64;
                        let c00 = lerp(g(z0, y0, x0), g(z0, y0, x1), tx);
                        let c01 = lerp(g(z0, y1, x0), g(z0, y1, x1), tx);
                        let c10 = lerp(g(z1, y0, x0), g(z1, y0, x1), tx);
                        let c11 = lerp(g(z1, y1, x0), g(z1, y1, x1), tx);
                        let c0 = lerp(c00, c01, ty);
                        let c1 = lerp(c10, c11, ty);
                        data.push(lerp(c0, c1, tz) as f32);
                    }
                }
            }
        }
    }
    let modality = match (mode, v.modality()) {
        (Interpolation::Trilinear, Modality::Mask) => Modality::Fused,
        (_, m) => m,
    };
    Volume::new(data, dims, target_spacing, origin, modality)
}
