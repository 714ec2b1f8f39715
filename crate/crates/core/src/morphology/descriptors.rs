use std::io::Write;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::components::LabelMap;
use super::hull::convex_hull;
use super::topology::Grid;
use crate::error::{Error, Result};
use crate::volume::Volume;

/// Shape and intensity descriptors of one tumour region.
///
/// Positions are in millimetres, `(z, y, x)` order. Voxel counts are on the
/// region's own grid. Shape features are computed from coordinates relative to
/// the bounding box, so they are bit-identical under whole-voxel translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionFeatures {
    pub centroid_mm: [f64; 3],
    /// `(min_z, min_y, min_x, max_z, max_y, max_x)` of the voxel edges.
    pub bbox_mm: [f64; 6],
    pub euler_number: i64,
    pub extent: f64,
    pub solidity: f64,
    pub filled_area_vox: u64,
    pub convex_area_vox: u64,
    pub bbox_area_vox: u64,
    pub max_feret_mm: f64,
    pub equiv_diameter_mm: f64,
    /// Eigenvalues of the second central moment tensor (mm^2), descending.
    pub inertia_eigvals: [f64; 3],
    pub ct_min: f64,
    pub ct_mean: f64,
    pub ct_max: f64,
    pub pet_min: f64,
    pub pet_mean: f64,
    pub pet_max: f64,
}

impl RegionFeatures {
    pub const NAMES: [&'static str; 26] = [
        "centroid_z",
        "centroid_y",
        "centroid_x",
        "bbox_min_z",
        "bbox_min_y",
        "bbox_min_x",
        "bbox_max_z",
        "bbox_max_y",
        "bbox_max_x",
        "euler_number",
        "extent",
        "solidity",
        "filled_area_vox",
        "convex_area_vox",
        "bbox_area_vox",
        "max_feret_mm",
        "equiv_diameter_mm",
        "inertia_eig_0",
        "inertia_eig_1",
        "inertia_eig_2",
        "ct_min",
        "ct_mean",
        "ct_max",
        "pet_min",
        "pet_mean",
        "pet_max",
    ];

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::NAMES.len());
        v.extend(self.centroid_mm);
        v.extend(self.bbox_mm);
        v.extend([
            self.euler_number as f64,
            self.extent,
            self.solidity,
            self.filled_area_vox as f64,
            self.convex_area_vox as f64,
            self.bbox_area_vox as f64,
            self.max_feret_mm,
            self.equiv_diameter_mm,
        ]);
        v.extend(self.inertia_eigvals);
        v.extend([self.ct_min, self.ct_mean, self.ct_max, self.pet_min, self.pet_mean, self.pet_max]);
        v
    }

    /// Inverse of [`RegionFeatures::to_vec`].
    pub fn from_vec(v: &[f64]) -> Result<Self> {
        if v.len() != Self::NAMES.len() {
            return Err(Error::arg(format!("expected {} feature values, got {}", Self::NAMES.len(), v.len())));
        }
        let count = |x: f64, name: &str| -> Result<u64> {
            if x >= 0.0 && x.fract() == 0.0 {
                Ok(x as u64)
            } else {
                Err(Error::arg(format!("{name} must be a non-negative integer, got {x}")))
            }
        };
        Ok(RegionFeatures {
            centroid_mm: [v[0], v[1], v[2]],
            bbox_mm: [v[3], v[4], v[5], v[6], v[7], v[8]],
            euler_number: v[9] as i64,
            extent: v[10],
            solidity: v[11],
            filled_area_vox: count(v[12], "filled_area_vox")?,
            convex_area_vox: count(v[13], "convex_area_vox")?,
            bbox_area_vox: count(v[14], "bbox_area_vox")?,
            max_feret_mm: v[15],
            equiv_diameter_mm: v[16],
            inertia_eigvals: [v[17], v[18], v[19]],
            ct_min: v[20],
            ct_mean: v[21],
            ct_max: v[22],
            pet_min: v[23],
            pet_mean: v[24],
            pet_max: v[25],
        })
    }

    fn index_of(name: &str) -> usize {
        Self::NAMES.iter().position(|n| *n == name).expect("known feature name")
    }
}

/// Descriptors for `label` of `lm`, sampling intensities from aligned `ct` and `pet`.
pub fn region_descriptors(lm: &LabelMap, label: u32, ct: &Volume, pet: &Volume) -> Result<RegionFeatures> {
    if label == 0 || label as usize > lm.count() {
        return Err(Error::arg(format!("unknown label {label} (count {})", lm.count())));
    }
    for (name, v) in [("ct", ct), ("pet", pet)] {
        if v.dims() != lm.dims() {
            return Err(Error::arg(format!(
                "{name} dims {:?} do not match label map {:?}",
                v.dims(),
                lm.dims()
            )));
        }
    }
    let [_, ny, nx] = lm.dims();
    let voxels: Vec<[i64; 3]> = lm
        .labels()
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == label)
        .map(|(i, _)| [(i / (ny * nx)) as i64, ((i / nx) % ny) as i64, (i % nx) as i64])
        .collect();
    region_descriptors_from_voxels(&voxels, lm.spacing(), lm.origin(), ct, pet)
}

/// Descriptors of an explicit voxel set on a grid with the given geometry.
pub fn region_descriptors_from_voxels(
    voxels: &[[i64; 3]],
    spacing: [f64; 3],
    origin: [f64; 3],
    ct: &Volume,
    pet: &Volume,
) -> Result<RegionFeatures> {
    if voxels.is_empty() {
        return Err(Error::arg("empty region"));
    }
    let lo = [0, 1, 2].map(|a| voxels.iter().map(|v| v[a]).min().unwrap());
    let hi = [0, 1, 2].map(|a| voxels.iter().map(|v| v[a]).max().unwrap());
    let bdims = [0, 1, 2].map(|a| (hi[a] - lo[a] + 1) as usize);
    let rel: Vec<[i64; 3]> = voxels.iter().map(|v| [v[0] - lo[0], v[1] - lo[1], v[2] - lo[2]]).collect();
    let n = rel.len();
    let nf = n as f64;

    // local binary grid over the bounding box
    let mut fg = vec![false; bdims.iter().product()];
    for r in &rel {
        fg[(r[0] as usize * bdims[1] + r[1] as usize) * bdims[2] + r[2] as usize] = true;
    }
    let grid = Grid { fg: &fg, dims: bdims };
    let euler_number = grid.euler();
    let filled_area_vox = grid.filled().iter().filter(|&&b| b).count() as u64;

    let hull = convex_hull(&rel)?;
    let convex_area_vox = hull.volume_voxels() as u64;
    let bbox_area_vox = bdims.iter().product::<usize>() as u64;

    let mean_rel = [0, 1, 2].map(|a| rel.iter().map(|r| r[a] as f64).sum::<f64>() / nf);
    let centroid_mm = [0, 1, 2].map(|a| origin[a] + (lo[a] as f64 + mean_rel[a]) * spacing[a]);
    let bbox_mm = [
        origin[0] + (lo[0] as f64 - 0.5) * spacing[0],
        origin[1] + (lo[1] as f64 - 0.5) * spacing[1],
        origin[2] + (lo[2] as f64 - 0.5) * spacing[2],
        origin[0] + (hi[0] as f64 + 0.5) * spacing[0],
        origin[1] + (hi[1] as f64 + 0.5) * spacing[1],
        origin[2] + (hi[2] as f64 + 0.5) * spacing[2],
    ];

    let mut cov = Matrix3::<f64>::zeros();
    for r in &rel {
        let d = [0, 1, 2].map(|a| (r[a] as f64 - mean_rel[a]) * spacing[a]);
        for i in 0..3 {
            for j in 0..3 {
                cov[(i, j)] += d[i] * d[j];
            }
        }
    }
    cov /= nf;
    let mut eig: Vec<f64> = cov.symmetric_eigen().eigenvalues.iter().map(|&e| e.max(0.0)).collect();
    eig.sort_by(|a, b| b.total_cmp(a));

    let voxel_volume = spacing.iter().product::<f64>();
    let equiv_diameter_mm = (6.0 * nf * voxel_volume / std::f64::consts::PI).cbrt();

    let stats = |v: &Volume| -> Result<(f64, f64, f64)> {
        let (mut mn, mut mx, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for p in voxels {
            let x = v
                .get_signed(p[0], p[1], p[2])
                .ok_or_else(|| Error::arg("region voxel outside intensity volume"))? as f64;
            mn = mn.min(x);
            mx = mx.max(x);
            sum += x;
        }
        Ok((mn, (sum / nf).clamp(mn, mx), mx))
    };
    let (ct_min, ct_mean, ct_max) = stats(ct)?;
    let (pet_min, pet_mean, pet_max) = stats(pet)?;

    Ok(RegionFeatures {
        centroid_mm,
        bbox_mm,
        euler_number,
        extent: nf / bbox_area_vox as f64,
        solidity: nf / convex_area_vox as f64,
        filled_area_vox,
        convex_area_vox,
        bbox_area_vox,
        max_feret_mm: hull.max_feret(spacing),
        equiv_diameter_mm,
        inertia_eigvals: [eig[0], eig[1], eig[2]],
        ct_min,
        ct_mean,
        ct_max,
        pet_min,
        pet_mean,
        pet_max,
    })
}

/// Per-feature means over a patient's regions plus the region count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientFeatureVector {
    /// Means in [`RegionFeatures::NAMES`] order.
    pub means: Vec<f64>,
    pub n_tumours: usize,
}

impl PatientFeatureVector {
    pub fn get(&self, name: &str) -> f64 {
        self.means[RegionFeatures::index_of(name)]
    }
}

pub fn patient_feature_vector(regions: &[RegionFeatures]) -> PatientFeatureVector {
    let mut means = vec![0.0; RegionFeatures::NAMES.len()];
    for r in regions {
        for (m, v) in means.iter_mut().zip(r.to_vec()) {
            *m += v;
        }
    }
    if !regions.is_empty() {
        let n = regions.len() as f64;
        means.iter_mut().for_each(|m| *m /= n);
    }
    PatientFeatureVector {
        means,
        n_tumours: regions.len(),
    }
}

pub const CALIBRATED_FEATURE_NAMES: [&str; 7] = [
    "centroid_x",
    "centroid_y",
    "centroid_z",
    "ct_mean",
    "pet_mean",
    "ct_max",
    "n_tumours",
];

/// The survival descriptor subset: centroid (x, y, z), mean CT, mean PET, max CT, tumour count.
pub fn select_calibrated_features(pfv: &PatientFeatureVector) -> [f64; 7] {
    [
        pfv.get("centroid_x"),
        pfv.get("centroid_y"),
        pfv.get("centroid_z"),
        pfv.get("ct_mean"),
        pfv.get("pet_mean"),
        pfv.get("ct_max"),
        pfv.n_tumours as f64,
    ]
}

/// Writes `patient_id,label,<features...>` rows with a header.
pub fn write_feature_csv<W: Write>(out: W, rows: &[(String, u32, RegionFeatures)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["patient_id".to_string(), "label".to_string()];
    header.extend(RegionFeatures::NAMES.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for (pid, label, f) in rows {
        let mut rec = vec![pid.clone(), label.to_string()];
        rec.extend(f.to_vec().iter().map(|v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<feature csv>", e))?;
    Ok(())
}

/// One row of a feature table; `class` is present when the table carries
/// a `class` column.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub patient_id: String,
    pub label: u32,
    pub features: RegionFeatures,
    pub class: Option<u32>,
}

/// Reads a table written by [`write_feature_csv`], optionally with a
/// trailing `class` column.
pub fn read_feature_csv<R: std::io::Read>(input: R) -> Result<Vec<FeatureRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.to_string()).collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Ingestion(format!("feature csv lacks column '{name}'")))
    };
    let pid = col("patient_id")?;
    let label = col("label")?;
    let feats: Vec<usize> = RegionFeatures::NAMES.iter().map(|n| col(n)).collect::<Result<_>>()?;
    let class = header.iter().position(|h| h == "class");
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        let num = |j: usize| -> Result<f64> {
            rec.get(j)
                .unwrap_or("")
                .parse::<f64>()
                .map_err(|_| Error::Ingestion(format!("row {row}: bad value in '{}'", header[j])))
        };
        let int = |j: usize| -> Result<u32> {
            rec.get(j)
                .unwrap_or("")
                .parse::<u32>()
                .map_err(|_| Error::Ingestion(format!("row {row}: '{}' must be an unsigned integer", header[j])))
        };
        let values = feats.iter().map(|&j| num(j)).collect::<Result<Vec<f64>>>()?;
        rows.push(FeatureRow {
            patient_id: rec.get(pid).unwrap_or("").to_string(),
            label: int(label)?,
            features: RegionFeatures::from_vec(&values).map_err(|e| Error::Ingestion(format!("row {row}: {e}")))?,
            class: class.map(int).transpose()?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morphology::{connected_components, Connectivity};
    use crate::volume::Modality;
    use proptest::prelude::*;

    fn region_volume(dims: [usize; 3], pred: impl Fn(i64, i64, i64) -> bool) -> Volume {
        Volume::from_fn(dims, [1.0; 3], [0.0; 3], Modality::Mask, |z, y, x| {
            if pred(z as i64, y as i64, x as i64) { 1.0 } else { 0.0 }
        })
        .unwrap()
    }

    fn intensities(dims: [usize; 3], seed: u32) -> Volume {
        Volume::from_fn(dims, [1.0; 3], [0.0; 3], Modality::Ct, |z, y, x| {
            (((z * 131 + y * 71 + x * 29) as u32 ^ seed) % 97) as f32 - 40.0
        })
        .unwrap()
    }

    fn features(mask: &Volume, ct: &Volume, pet: &Volume) -> RegionFeatures {
        let lm = connected_components(mask, Connectivity::TwentySix);
        assert_eq!(lm.count(), 1);
        region_descriptors(&lm, 1, ct, pet).unwrap()
    }

    #[test]
    fn single_voxel() {
        let dims = [6, 6, 6];
        let m = region_volume(dims, |z, y, x| (z, y, x) == (2, 3, 4));
        let f = features(&m, &intensities(dims, 1), &intensities(dims, 2));
        assert_eq!(f.centroid_mm, [2.0, 3.0, 4.0]);
        assert_eq!(f.extent, 1.0);
        assert_eq!(f.solidity, 1.0);
        assert!((f.equiv_diameter_mm - (6.0 / std::f64::consts::PI).cbrt()).abs() < 1e-12);
        assert!((f.equiv_diameter_mm - 1.2407).abs() < 1e-4);
        assert_eq!(f.euler_number, 1);
        assert_eq!(f.max_feret_mm, 0.0);
        assert_eq!(f.inertia_eigvals, [0.0; 3]);
        assert_eq!(f.bbox_mm, [1.5, 2.5, 3.5, 2.5, 3.5, 4.5]);
        assert_eq!(f.ct_min, f.ct_max);
    }

    #[test]
    fn rod() {
        let dims = [12, 3, 3];
        let m = region_volume(dims, |z, y, x| (1..10).contains(&z) && y == 1 && x == 1);
        let f = features(&m, &intensities(dims, 1), &intensities(dims, 2));
        assert_eq!(f.max_feret_mm, 8.0);
        // variance of 0..9 along z = (81 - 1) / 12
        assert!((f.inertia_eigvals[0] - 80.0 / 12.0).abs() < 1e-12);
        assert!(f.inertia_eigvals[1] < 1e-12 && f.inertia_eigvals[2] < 1e-12);
    }

    #[test]
    fn ball_radius_10() {
        let dims = [25, 25, 25];
        let m = region_volume(dims, |z, y, x| ((z - 12).pow(2) + (y - 12).pow(2) + (x - 12).pow(2)) as f64 <= 100.0);
        let f = features(&m, &intensities(dims, 1), &intensities(dims, 2));
        assert!((f.equiv_diameter_mm - 20.0).abs() / 20.0 < 0.05);
        assert!(f.solidity >= 0.95);
        assert_eq!(f.euler_number, 1);
        let [a, b, c] = f.inertia_eigvals;
        assert!((a - c) / a < 0.05 && (a - b) / a < 0.05);
        assert!(f.max_feret_mm >= f.equiv_diameter_mm - 2.0 * 3f64.sqrt());
    }

    #[test]
    fn hollow_cube_fills() {
        let dims = [7, 7, 7];
        let m = region_volume(dims, |z, y, x| {
            let inside = |c: i64| (1..=5).contains(&c);
            let cav = |c: i64| (2..=4).contains(&c);
            inside(z) && inside(y) && inside(x) && !(cav(z) && cav(y) && cav(x))
        });
        let f = features(&m, &intensities(dims, 1), &intensities(dims, 2));
        assert_eq!(f.filled_area_vox, 125);
        assert_eq!(f.convex_area_vox, 125);
        assert_eq!(f.euler_number, 2);
        assert!((f.solidity - 98.0 / 125.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_label_and_misaligned() {
        let dims = [4, 4, 4];
        let m = region_volume(dims, |z, _, _| z == 0);
        let lm = connected_components(&m, Connectivity::TwentySix);
        let ct = intensities(dims, 1);
        assert!(region_descriptors(&lm, 2, &ct, &ct).is_err());
        assert!(region_descriptors(&lm, 0, &ct, &ct).is_err());
        let small = intensities([3, 3, 3], 1);
        assert!(region_descriptors(&lm, 1, &small, &ct).is_err());
    }

    #[test]
    fn patient_means() {
        let dims = [6, 6, 6];
        let m = region_volume(dims, |z, y, x| (z, y, x) == (2, 3, 4));
        let f = features(&m, &intensities(dims, 1), &intensities(dims, 2));
        let one = patient_feature_vector(std::slice::from_ref(&f));
        assert_eq!(one.means, f.to_vec());
        assert_eq!(one.n_tumours, 1);

        let mut a = f.clone();
        let mut b = f.clone();
        a.ct_mean = 10.0;
        b.ct_mean = 30.0;
        let two = patient_feature_vector(&[a, b]);
        assert_eq!(two.get("ct_mean"), 20.0);
        assert_eq!(two.n_tumours, 2);

        let none = patient_feature_vector(&[]);
        assert!(none.means.iter().all(|&v| v == 0.0));
        assert_eq!(select_calibrated_features(&none), [0.0; 7]);
        let sel = select_calibrated_features(&one);
        assert_eq!(sel.len(), 7);
        assert_eq!(sel, select_calibrated_features(&one));
        assert_eq!(&sel[..3], &[4.0, 3.0, 2.0]);
        assert_eq!(sel[6], 1.0);
    }

    #[test]
    fn csv_layout() {
        let dims = [3, 3, 3];
        let m = region_volume(dims, |z, y, x| (z, y, x) == (1, 1, 1));
        let f = features(&m, &intensities(dims, 1), &intensities(dims, 2));
        let mut buf = Vec::new();
        write_feature_csv(&mut buf, &[("CHUM-001".into(), 1, f)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("patient_id,label,centroid_z"));
        assert_eq!(header.split(',').count(), 28);
        assert!(lines.next().unwrap().starts_with("CHUM-001,1,1,1,1"));
    }

    #[test]
    fn feature_csv_round_trip() {
        let m = region_volume([5, 5, 5], |z, y, x| (1..4).contains(&z) && (1..4).contains(&y) && x > 0 && x < 3);
        let lm = connected_components(&m, Connectivity::TwentySix);
        let ct = intensities([5, 5, 5], 9);
        let f = region_descriptors(&lm, 1, &ct, &ct).unwrap();
        assert_eq!(RegionFeatures::from_vec(&f.to_vec()).unwrap(), f);
        let mut buf = Vec::new();
        write_feature_csv(&mut buf, &[("MDA-001".into(), 1, f.clone())]).unwrap();
        let back = read_feature_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!((back[0].patient_id.as_str(), back[0].label, back[0].class), ("MDA-001", 1, None));
        assert_eq!(back[0].features, f);
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let with_class = format!("{},class\n{},2\n", lines.next().unwrap(), lines.next().unwrap());
        assert_eq!(read_feature_csv(with_class.as_bytes()).unwrap()[0].class, Some(2));
        assert!(read_feature_csv("patient_id,label\nA-1,1\n".as_bytes()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn translation_invariance(
            bits in prop::collection::vec(any::<bool>(), 27),
            shift in (0i64..4, 0i64..4, 0i64..4),
        ) {
            let dims = [8, 8, 8];
            let base = |z: i64, y: i64, x: i64| z < 3 && y < 3 && x < 3 && bits[((z * 3 + y) * 3 + x) as usize];
            let m0 = region_volume(dims, |z, y, x| base(z, y, x) || (z, y, x) == (1, 1, 1));
            let m1 = region_volume(dims, |z, y, x| {
                let (a, b, c) = (z - shift.0, y - shift.1, x - shift.2);
                a >= 0 && b >= 0 && c >= 0 && (base(a, b, c) || (a, b, c) == (1, 1, 1))
            });
            let ct0 = intensities(dims, 5);
            let ct1 = Volume::from_fn(dims, [1.0; 3], [0.0; 3], Modality::Ct, |z, y, x| {
                let (a, b, c) = (z as i64 - shift.0, y as i64 - shift.1, x as i64 - shift.2);
                ct0.get_signed(a, b, c).unwrap_or(0.0)
            }).unwrap();
            let l0 = connected_components(&m0, Connectivity::TwentySix);
            let l1 = connected_components(&m1, Connectivity::TwentySix);
            prop_assume!(l0.count() == 1);
            let f0 = region_descriptors(&l0, 1, &ct0, &ct0).unwrap();
            let f1 = region_descriptors(&l1, 1, &ct1, &ct1).unwrap();
            let s = [shift.0 as f64, shift.1 as f64, shift.2 as f64];
            for a in 0..3 {
                prop_assert!((f1.centroid_mm[a] - f0.centroid_mm[a] - s[a]).abs() < 1e-9);
                prop_assert_eq!(f1.bbox_mm[a] - f0.bbox_mm[a], s[a]);
            }
            prop_assert_eq!(f0.euler_number, f1.euler_number);
            prop_assert_eq!(f0.extent, f1.extent);
            prop_assert_eq!(f0.solidity, f1.solidity);
            prop_assert_eq!(f0.max_feret_mm, f1.max_feret_mm);
            prop_assert_eq!(f0.equiv_diameter_mm, f1.equiv_diameter_mm);
            prop_assert_eq!(f0.inertia_eigvals, f1.inertia_eigvals);
            prop_assert_eq!(f0.filled_area_vox, f1.filled_area_vox);
            prop_assert_eq!(f0.convex_area_vox, f1.convex_area_vox);
            prop_assert_eq!((f0.ct_min, f0.ct_mean, f0.ct_max), (f1.ct_min, f1.ct_mean, f1.ct_max));
            prop_assert!(f0.solidity > 0.0 && f0.solidity <= 1.0);
            prop_assert!(f0.extent <= 1.0);
        }

        #[test]
        fn inertia_invariant_under_axis_permutation(bits in prop::collection::vec(any::<bool>(), 64)) {
            let dims = [4, 4, 4];
            let base = |z: i64, y: i64, x: i64| bits[((z * 4 + y) * 4 + x) as usize] || (z, y, x) == (0, 0, 0);
            let m0 = region_volume(dims, base);
            let m1 = region_volume(dims, |z, y, x| base(x, z, y));
            let ct = intensities(dims, 3);
            let vox = |m: &Volume| -> Vec<[i64; 3]> {
                (0..64).filter(|&i| m.data()[i] > 0.0).map(|i| [(i / 16) as i64, ((i / 4) % 4) as i64, (i % 4) as i64]).collect()
            };
            let f0 = region_descriptors_from_voxels(&vox(&m0), [1.0; 3], [0.0; 3], &ct, &ct).unwrap();
            let f1 = region_descriptors_from_voxels(&vox(&m1), [1.0; 3], [0.0; 3], &ct, &ct).unwrap();
            for k in 0..3 {
                let (a, b) = (f0.inertia_eigvals[k], f1.inertia_eigvals[k]);
                prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-12) + 1e-12);
            }
        }
    }
}
