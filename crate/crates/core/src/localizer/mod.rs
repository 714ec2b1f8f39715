//! Head-and-neck localization from axial intensity profiles.
//!
//! The PET profile anchors the head top and the brain peak; the CT profile
//! supplies the neck (steepest drop of the smoothed mean slice intensity).
//! The brain search is confined to the first 250 mm below the head top so
//! bladder uptake lower in the body is never picked up.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{resample, window_clip, BoxMM, Interpolation, Volume, ROI_SIZE_MM};

/// Brain search window below the head top.
pub const BRAIN_SEARCH_MM: f64 = 250.0;
pub const DEFAULT_HEAD_FRAC: f64 = 0.05;
pub const DEFAULT_NECK_WINDOW_MM: f64 = 300.0;
/// Coarse grid used for localization.
pub const LOCALIZER_SPACING_MM: f64 = 7.0;

const Z_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxialProfile {
    pub values: Vec<f64>,
    pub spacing_mm: f64,
    pub z0_mm: f64,
}

impl AxialProfile {
    pub fn new(values: Vec<f64>, spacing_mm: f64, z0_mm: f64) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::arg("axial profile needs at least 2 slices"));
        }
        if !(spacing_mm > 0.0) {
            return Err(Error::arg("profile spacing must be positive"));
        }
        Ok(AxialProfile {
            values,
            spacing_mm,
            z0_mm,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn z(&self, k: usize) -> f64 {
        self.z0_mm + k as f64 * self.spacing_mm
    }

    fn z_last(&self) -> f64 {
        self.z(self.len() - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmarks {
    pub head_top_mm: f64,
    pub brain_peak_mm: f64,
    pub neck_drop_mm: f64,
}

impl Landmarks {
    pub fn new(head_top_mm: f64, brain_peak_mm: f64, neck_drop_mm: f64) -> Result<Self> {
        if !(head_top_mm <= brain_peak_mm && brain_peak_mm <= neck_drop_mm) {
            return Err(Error::Detection(format!(
                "landmarks out of order: head {head_top_mm}, brain {brain_peak_mm}, neck {neck_drop_mm}"
            )));
        }
        if brain_peak_mm - head_top_mm > BRAIN_SEARCH_MM + Z_EPS {
            return Err(Error::Detection(format!(
                "brain peak {brain_peak_mm} mm is more than {BRAIN_SEARCH_MM} mm below head top {head_top_mm} mm"
            )));
        }
        Ok(Landmarks {
            head_top_mm,
            brain_peak_mm,
            neck_drop_mm,
        })
    }
}

/// What to do when no intensity drop exists below the brain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoDropPolicy {
    #[default]
    Error,
    InferiorMost,
}

/// Mean intensity of each axial slice.
pub fn axial_profile(v: &Volume) -> Result<AxialProfile> {
    let [nz, ny, nx] = v.dims();
    let per = ny * nx;
    let values = (0..nz)
        .map(|k| {
            v.data()[k * per..(k + 1) * per]
                .iter()
                .map(|&x| x as f64)
                .sum::<f64>()
                / per as f64
        })
        .collect::<Vec<_>>();
    if values.len() < 2 {
        return Err(Error::arg("volume needs at least 2 axial slices"));
    }
    AxialProfile::new(values, v.spacing()[0], v.origin()[0])
}

/// First slice from the superior end whose PET mean exceeds `frac * max`.
pub fn find_head_top(pet: &AxialProfile, frac: f64) -> Result<f64> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::arg(format!("head threshold fraction must be in (0,1), got {frac}")));
    }
    let max = pet.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(Error::Detection("PET profile has no positive signal".into()));
    }
    let thr = frac * max;
    let k = pet
        .values
        .iter()
        .position(|&v| v > thr)
        .expect("max exceeds threshold");
    Ok(pet.z(k))
}

/// Argmax of the PET profile within `[head_top, head_top + 250 mm]`, ties toward superior.
pub fn find_brain_peak(pet: &AxialProfile, head_top_mm: f64) -> Result<f64> {
    if head_top_mm < pet.z0_mm - Z_EPS || head_top_mm > pet.z_last() + Z_EPS {
        return Err(Error::arg(format!("head top {head_top_mm} mm outside the profile")));
    }
    let hi = head_top_mm + BRAIN_SEARCH_MM;
    let mut best: Option<(usize, f64)> = None;
    for (k, &v) in pet.values.iter().enumerate() {
        let z = pet.z(k);
        if z < head_top_mm - Z_EPS || z > hi + Z_EPS {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    best.map(|(k, _)| pet.z(k))
        .ok_or_else(|| Error::Detection("empty brain search window".into()))
}

fn smooth3(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|k| {
            let lo = k.saturating_sub(1);
            let hi = (k + 1).min(n - 1);
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Slice of the steepest drop of the 3-tap smoothed CT profile within
/// `(brain_peak, brain_peak + window]`. The drop at slice `k` is
/// `s[k] - s[k-1]`. Within one slice of that minimum, among slices at least
/// half as steep, the largest raw drop wins.
pub fn find_neck_drop(ct: &AxialProfile, brain_peak_mm: f64, window_mm: f64) -> Result<f64> {
    find_neck_drop_with(ct, brain_peak_mm, window_mm, NoDropPolicy::Error)
}

pub fn find_neck_drop_with(
    ct: &AxialProfile,
    brain_peak_mm: f64,
    window_mm: f64,
    policy: NoDropPolicy,
) -> Result<f64> {
    if !(window_mm > 0.0) {
        return Err(Error::arg("neck search window must be positive"));
    }
    if brain_peak_mm < ct.z0_mm - Z_EPS || brain_peak_mm > ct.z_last() + Z_EPS {
        return Err(Error::arg(format!("brain peak {brain_peak_mm} mm outside the profile")));
    }
    let s = smooth3(&ct.values);
    let window: Vec<usize> = (1..ct.len())
        .filter(|&k| {
            let z = ct.z(k);
            z > brain_peak_mm + Z_EPS && z <= brain_peak_mm + window_mm + Z_EPS
        })
        .collect();
    if window.is_empty() {
        return Err(Error::Detection("empty neck search window".into()));
    }
    let drop = |k: usize| s[k] - s[k - 1];
    let min_drop = window.iter().map(|&k| drop(k)).fold(f64::INFINITY, f64::min);
    if min_drop >= 0.0 {
        return match policy {
            NoDropPolicy::Error => Err(Error::Detection(
                "CT profile never drops below the brain".into(),
            )),
            NoDropPolicy::InferiorMost => Ok(ct.z(*window.last().unwrap())),
        };
    }
    // a clean step spreads over three equal smoothed drops; the raw drop
    // picks the slice inside that plateau
    let best = window.iter().copied().find(|&k| drop(k) == min_drop).unwrap();
    let k = window
        .iter()
        .copied()
        .filter(|&k| k.abs_diff(best) <= 1 && drop(k) <= 0.5 * min_drop)
        .min_by(|&a, &b| {
            let ra = ct.values[a] - ct.values[a - 1];
            let rb = ct.values[b] - ct.values[b - 1];
            ra.total_cmp(&rb).then(a.cmp(&b))
        })
        .unwrap();
    Ok(ct.z(k))
}

/// 440 mm cube starting at the head top, centred in-plane on the PET centre of mass
/// of the slab it covers.
pub fn roi_box(lm: &Landmarks, pet: &Volume) -> Result<BoxMM> {
    let z_lo = lm.head_top_mm;
    let z_hi = z_lo + ROI_SIZE_MM;
    let [nz, ny, nx] = pet.dims();
    let (mut sw, mut sy, mut sx) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..nz {
        let z = pet.position([k as f64, 0.0, 0.0])[0];
        if z < z_lo - Z_EPS || z > z_hi + Z_EPS {
            continue;
        }
        for j in 0..ny {
            for i in 0..nx {
                let w = pet.get(k, j, i).max(0.0) as f64;
                sw += w;
                sy += w * j as f64;
                sx += w * i as f64;
            }
        }
    }
    let (cy, cx) = if sw > 0.0 {
        (sy / sw, sx / sw)
    } else {
        ((ny - 1) as f64 / 2.0, (nx - 1) as f64 / 2.0)
    };
    let c = pet.position([0.0, cy, cx]);
    BoxMM::new(
        [z_lo, c[1] - ROI_SIZE_MM / 2.0, c[2] - ROI_SIZE_MM / 2.0],
        [ROI_SIZE_MM; 3],
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizerParams {
    pub coarse_spacing_mm: f64,
    pub head_frac: f64,
    pub neck_window_mm: f64,
    pub no_drop: NoDropPolicy,
}

impl Default for LocalizerParams {
    fn default() -> Self {
        LocalizerParams {
            coarse_spacing_mm: LOCALIZER_SPACING_MM,
            head_frac: DEFAULT_HEAD_FRAC,
            neck_window_mm: DEFAULT_NECK_WINDOW_MM,
            no_drop: NoDropPolicy::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    pub landmarks: Landmarks,
    pub roi: BoxMM,
    pub ct_profile: AxialProfile,
    pub pet_profile: AxialProfile,
}

impl Localization {
    /// `z_mm,ct_mean,pet_mean` rows for diagnostics plots.
    pub fn profile_csv(&self) -> String {
        let mut s = String::from("z_mm,ct_mean,pet_mean\n");
        for k in 0..self.ct_profile.len().min(self.pet_profile.len()) {
            s.push_str(&format!(
                "{},{},{}\n",
                self.ct_profile.z(k),
                self.ct_profile.values[k],
                self.pet_profile.values[k]
            ));
        }
        s
    }
}

/// Full localization: coarse resample, CT clip to [-1024, 1024], profiles, landmarks, box.
pub fn localize(ct: &Volume, pet: &Volume, params: &LocalizerParams) -> Result<Localization> {
    let sp = [params.coarse_spacing_mm; 3];
    let ct_lo = window_clip(&resample(ct, sp, Interpolation::Trilinear)?, -1024.0, 1024.0)?;
    let pet_lo = resample(pet, sp, Interpolation::Trilinear)?;
    let ct_profile = axial_profile(&ct_lo)?;
    let pet_profile = axial_profile(&pet_lo)?;
    let head = find_head_top(&pet_profile, params.head_frac)?;
    let brain = find_brain_peak(&pet_profile, head)?;
    let neck = find_neck_drop_with(&ct_profile, brain, params.neck_window_mm, params.no_drop)?;
    let landmarks = Landmarks::new(head, brain, neck)?;
    let roi = roi_box(&landmarks, &pet_lo)?;
    Ok(Localization {
        landmarks,
        roi,
        ct_profile,
        pet_profile,
    })
}
