//! Volumetric images and the intensity/geometry operations applied to them.
//!
//! A [`Volume`] stores voxels in `(z, y, x)` row-major order. Voxel `(k, j, i)`
//! has its centre at `origin + (k, j, i) * spacing` in millimetres.

mod nifti;
mod resample;

pub use nifti::{load_nifti, save_nifti, save_nifti_with, NiftiDatatype, NiftiWriteOptions};
pub use resample::{resample, Interpolation};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Patch size of the single-patch network, `(z, y, x)`.
pub const DEEP_FUSION_PATCH: [usize; 3] = [50, 80, 80];
/// Patch size of the per-tumour graph nodes, `(z, y, x)`.
pub const MULTI_PATCH_PATCH: [usize; 3] = [32, 32, 32];
/// Edge length of the head-and-neck crop.
pub const ROI_SIZE_MM: f64 = 440.0;

/// Hounsfield value used to pad CT crops.
pub const CT_PAD: f32 = -1024.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Modality {
    Ct,
    Pet,
    Fused,
    Mask,
}

impl Modality {
    pub fn tag(self) -> &'static str {
        match self {
            Modality::Ct => "CT",
            Modality::Pet => "PET",
            Modality::Fused => "FUSED",
            Modality::Mask => "MASK",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "CT" => Some(Modality::Ct),
            "PET" => Some(Modality::Pet),
            "FUSED" => Some(Modality::Fused),
            "MASK" => Some(Modality::Mask),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    data: Vec<f32>,
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    modality: Modality,
}

impl Volume {
    pub fn new(
        data: Vec<f32>,
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        modality: Modality,
    ) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::arg(format!("volume dims must be >= 1, got {dims:?}")));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::arg(format!(
                "data length {} does not match dims {dims:?}",
                data.len()
            )));
        }
        check_spacing(&spacing)?;
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::arg("origin must be finite"));
        }
        if modality == Modality::Mask && data.iter().any(|&v| v < 0.0 || v.fract() != 0.0) {
            return Err(Error::arg("mask volumes must hold non-negative integers"));
        }
        Ok(Volume {
            data,
            dims,
            spacing,
            origin,
            modality,
        })
    }

    pub fn filled(
        value: f32,
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        modality: Modality,
    ) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(vec![value; n], dims, spacing, origin, modality)
    }

    /// Builds a volume by evaluating `f(z, y, x)` at every index.
    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        modality: Modality,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    data.push(f(z, y, x));
                }
            }
        }
        Self::new(data, dims, spacing, origin, modality)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
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

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn with_modality(mut self, modality: Modality) -> Result<Self> {
        if modality == Modality::Mask && self.data.iter().any(|&v| v < 0.0 || v.fract() != 0.0) {
            return Err(Error::arg("mask volumes must hold non-negative integers"));
        }
        self.modality = modality;
        Ok(self)
    }

    pub fn with_origin(mut self, origin: [f64; 3]) -> Self {
        self.origin = origin;
        self
    }

    /// Same geometry, new voxel values.
    pub fn map(&self, modality: Modality, f: impl Fn(f32) -> f32) -> Result<Self> {
        Self::new(
            self.data.iter().map(|&v| f(v)).collect(),
            self.dims,
            self.spacing,
            self.origin,
            modality,
        )
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(z, y, x)]
    }

    /// Value at a signed index, `None` outside the grid.
    #[inline]
    pub fn get_signed(&self, z: i64, y: i64, x: i64) -> Option<f32> {
        if z < 0 || y < 0 || x < 0 {
            return None;
        }
        let (z, y, x) = (z as usize, y as usize, x as usize);
        if z >= self.dims[0] || y >= self.dims[1] || x >= self.dims[2] {
            return None;
        }
        Some(self.get(z, y, x))
    }

    /// Physical position (mm) of a voxel centre.
    pub fn position(&self, idx: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| self.origin[a] + idx[a] * self.spacing[a])
    }

    /// Continuous voxel index of a physical position.
    pub fn continuous_index(&self, pos: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| (pos[a] - self.origin[a]) / self.spacing[a])
    }

    /// Physical box covered by the voxels (edges, not centres).
    pub fn extent(&self) -> BoxMM {
        let min = [0, 1, 2].map(|a| self.origin[a] - 0.5 * self.spacing[a]);
        let size = [0, 1, 2].map(|a| self.dims[a] as f64 * self.spacing[a]);
        BoxMM {
            min_corner_mm: min,
            size_mm: size,
        }
    }

    pub fn min_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    /// Default padding for out-of-bounds reads: -1024 HU for CT, volume minimum otherwise.
    pub fn pad_value(&self) -> f32 {
        match self.modality {
            Modality::Ct => CT_PAD,
            Modality::Mask => 0.0,
            _ => self.min_value(),
        }
    }

    pub fn same_grid(&self, other: &Volume) -> bool {
        self.dims == other.dims
            && (0..3).all(|a| {
                (self.spacing[a] - other.spacing[a]).abs() <= 1e-6 * self.spacing[a]
                    && (self.origin[a] - other.origin[a]).abs() <= 1e-4
            })
    }
}

fn check_spacing(spacing: &[f64; 3]) -> Result<()> {
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::arg(format!("spacing must be positive, got {spacing:?}")));
    }
    Ok(())
}

/// Axis-aligned physical box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxMM {
    pub min_corner_mm: [f64; 3],
    pub size_mm: [f64; 3],
}

impl BoxMM {
    pub fn new(min_corner_mm: [f64; 3], size_mm: [f64; 3]) -> Result<Self> {
        if size_mm.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::arg(format!("box size must be positive, got {size_mm:?}")));
        }
        Ok(BoxMM {
            min_corner_mm,
            size_mm,
        })
    }

    pub fn centered(center: [f64; 3], size_mm: [f64; 3]) -> Result<Self> {
        Self::new([0, 1, 2].map(|a| center[a] - 0.5 * size_mm[a]), size_mm)
    }

    pub fn max_corner_mm(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.min_corner_mm[a] + self.size_mm[a])
    }
}

/// Clamps every voxel into `[lo, hi]`.
pub fn window_clip(v: &Volume, lo: f32, hi: f32) -> Result<Volume> {
    if !(lo < hi) {
        return Err(Error::arg(format!("window requires lo < hi, got ({lo}, {hi})")));
    }
    v.map(v.modality, |x| x.clamp(lo, hi))
}

/// Standardizes to zero mean and unit standard deviation (population).
/// A constant volume maps to all zeros.
pub fn znormalize(v: &Volume) -> Result<Volume> {
    if v.len() < 2 {
        return Err(Error::arg("znormalize needs at least 2 voxels"));
    }
    let (mean, std) = mean_std(v.data());
    let modality = v.modality;
    if std <= f64::EPSILON * mean.abs().max(1.0) {
        return v.map(modality, |_| 0.0);
    }
    v.map(modality, |x| ((x as f64 - mean) / std) as f32)
}

pub(crate) fn mean_std(data: &[f32]) -> (f64, f64) {
    let n = data.len() as f64;
    let mean = data.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = data
        .iter()
        .map(|&x| {
            let d = x as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    (mean, var.sqrt())
}

/// Voxelwise mean of two aligned images.
pub fn fuse_average(ct: &Volume, pet: &Volume) -> Result<Volume> {
    if ct.dims != pet.dims || !ct.same_grid(pet) {
        return Err(Error::arg(format!(
            "fuse_average needs identical grids, got {:?} vs {:?}",
            ct.dims, pet.dims
        )));
    }
    let data = ct
        .data
        .iter()
        .zip(&pet.data)
        .map(|(&a, &b)| ((a as f64 + b as f64) * 0.5) as f32)
        .collect();
    Volume::new(data, ct.dims, ct.spacing, ct.origin, Modality::Fused)
}

#[inline]
fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

/// Crops the physical box `bx` on the volume's own grid. The output has
/// `floor(size / spacing)` voxels per axis; voxels outside the input take
/// `pad_value`.
pub fn crop_mm(v: &Volume, bx: &BoxMM, pad_value: f32) -> Result<Volume> {
    let bx = BoxMM::new(bx.min_corner_mm, bx.size_mm)?;
    let sp = v.spacing;
    let dims = [0, 1, 2].map(|a| ((bx.size_mm[a] / sp[a] + 1e-9).floor() as usize).max(1));
    let start = [0, 1, 2].map(|a| {
        let first_centre = bx.min_corner_mm[a] + 0.5 * sp[a];
        round_half_up((first_centre - v.origin[a]) / sp[a])
    });
    let origin = [0, 1, 2].map(|a| v.origin[a] + start[a] as f64 * sp[a]);
    Volume::from_fn(dims, sp, origin, v.modality, |z, y, x| {
        v.get_signed(start[0] + z as i64, start[1] + y as i64, start[2] + x as i64)
            .unwrap_or(pad_value)
    })
}

/// Extracts a patch of exactly `size_voxels` (`(z, y, x)`) on the volume grid,
/// centred on the voxel nearest `center_mm`. Out-of-bounds voxels take the
/// volume minimum.
pub fn extract_patch(v: &Volume, center_mm: [f64; 3], size_voxels: [usize; 3]) -> Result<Volume> {
    if size_voxels.iter().any(|&s| s == 0) {
        return Err(Error::arg("patch size must be >= 1 on every axis"));
    }
    let c = v.continuous_index(center_mm).map(round_half_up);
    let start = [0, 1, 2].map(|a| c[a] - (size_voxels[a] / 2) as i64);
    let pad = v.min_value();
    let origin = [0, 1, 2].map(|a| v.origin[a] + start[a] as f64 * v.spacing[a]);
    Volume::from_fn(size_voxels, v.spacing, origin, v.modality, |z, y, x| {
        v.get_signed(start[0] + z as i64, start[1] + y as i64, start[2] + x as i64)
            .unwrap_or(pad)
    })
}
