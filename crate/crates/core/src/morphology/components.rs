use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Modality, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "6")]
    Six,
    #[default]
    #[serde(rename = "26")]
    TwentySix,
}

impl Connectivity {
    pub(crate) fn offsets(self) -> Vec<[i64; 3]> {
        let mut out = Vec::new();
        for dz in -1..=1i64 {
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let manhattan = dz.abs() + dy.abs() + dx.abs();
                    let keep = match self {
                        Connectivity::Six => manhattan == 1,
                        Connectivity::TwentySix => manhattan > 0,
                    };
                    if keep {
                        out.push([dz, dy, dx]);
                    }
                }
            }
        }
        out
    }
}

/// Component labels `1..=count`, 0 = background.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    labels: Vec<u32>,
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    count: usize,
}

impl LabelMap {
    /// Builds a label map from explicit labels, which must be consecutive `1..=count`.
    pub fn from_labels(
        labels: Vec<u32>,
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
    ) -> Result<Self> {
        if labels.len() != dims.iter().product::<usize>() {
            return Err(Error::arg("label data does not match dims"));
        }
        let count = labels.iter().copied().max().unwrap_or(0) as usize;
        let mut seen = vec![false; count + 1];
        for &l in &labels {
            seen[l as usize] = true;
        }
        if seen.iter().skip(1).any(|s| !s) {
            return Err(Error::arg("labels must be consecutive 1..count"));
        }
        Ok(LabelMap {
            labels,
            dims,
            spacing,
            origin,
            count,
        })
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Voxel indices `(z, y, x)` of each label, in raster order; entry 0 is label 1.
    pub fn regions(&self) -> Vec<Vec<[i64; 3]>> {
        let mut out = vec![Vec::new(); self.count];
        let [_, ny, nx] = self.dims;
        for (i, &l) in self.labels.iter().enumerate() {
            if l > 0 {
                let z = i / (ny * nx);
                let y = (i / nx) % ny;
                let x = i % nx;
                out[l as usize - 1].push([z as i64, y as i64, x as i64]);
            }
        }
        out
    }

    pub fn to_volume(&self) -> Volume {
        Volume::new(
            self.labels.iter().map(|&l| l as f32).collect(),
            self.dims,
            self.spacing,
            self.origin,
            Modality::Mask,
        )
        .expect("label map geometry is valid")
    }
}

/// Labels maximal connected foreground sets (`voxel > 0`) in order of each
/// component's first voxel in raster order.
pub fn connected_components(mask: &Volume, connectivity: Connectivity) -> LabelMap {
    let dims = mask.dims();
    let [nz, ny, nx] = dims;
    let fg: Vec<bool> = mask.data().iter().map(|&v| v > 0.0).collect();
    let mut labels = vec![0u32; fg.len()];
    let offsets = connectivity.offsets();
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..fg.len() {
        if !fg[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let z = (i / (ny * nx)) as i64;
            let y = ((i / nx) % ny) as i64;
            let x = (i % nx) as i64;
            for o in &offsets {
                let (zz, yy, xx) = (z + o[0], y + o[1], x + o[2]);
                if zz < 0 || yy < 0 || xx < 0 || zz >= nz as i64 || yy >= ny as i64 || xx >= nx as i64 {
                    continue;
                }
                let j = (zz as usize * ny + yy as usize) * nx + xx as usize;
                if fg[j] && labels[j] == 0 {
                    labels[j] = next;
                    queue.push_back(j);
                }
            }
        }
    }
    LabelMap {
        labels,
        dims,
        spacing: mask.spacing(),
        origin: mask.origin(),
        count: next as usize,
    }
}
