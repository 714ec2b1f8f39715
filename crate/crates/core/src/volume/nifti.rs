//! Single-file NIfTI-1 reader/writer (`.nii`, `.nii.gz`) plus `.hdr`/`.img` pairs.
//!
//! Only axis-aligned affines are accepted. On load the axes are flipped so that
//! x and y increase along RAS+ and index 0 of z is the most superior slice; the
//! stored physical coordinates are `(depth, y, x)` with `depth = -S`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{Modality, Volume};
use crate::error::{Error, Result};

const HEADER_LEN: usize = 348;
const OFF_TOLERANCE: f64 = 1e-3;
const TAG_PREFIX: &str = "progkit:";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiftiDatatype {
    U8,
    I16,
    I32,
    F32,
    F64,
}

impl NiftiDatatype {
    fn code(self) -> i16 {
        match self {
            NiftiDatatype::U8 => 2,
            NiftiDatatype::I16 => 4,
            NiftiDatatype::I32 => 8,
            NiftiDatatype::F32 => 16,
            NiftiDatatype::F64 => 64,
        }
    }

    fn from_code(code: i16) -> Option<Self> {
        Some(match code {
            2 => NiftiDatatype::U8,
            4 => NiftiDatatype::I16,
            8 => NiftiDatatype::I32,
            16 => NiftiDatatype::F32,
            64 => NiftiDatatype::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            NiftiDatatype::U8 => 1,
            NiftiDatatype::I16 => 2,
            NiftiDatatype::I32 | NiftiDatatype::F32 => 4,
            NiftiDatatype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NiftiWriteOptions {
    pub datatype: NiftiDatatype,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub big_endian: bool,
}

impl Default for NiftiWriteOptions {
    fn default() -> Self {
        NiftiWriteOptions {
            datatype: NiftiDatatype::F32,
            scl_slope: 1.0,
            scl_inter: 0.0,
            big_endian: false,
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    big: bool,
}

impl Reader<'_> {
    fn i16(&self, off: usize) -> i16 {
        let b = [self.buf[off], self.buf[off + 1]];
        if self.big {
            i16::from_be_bytes(b)
        } else {
            i16::from_le_bytes(b)
        }
    }

    fn f32(&self, off: usize) -> f32 {
        let b: [u8; 4] = self.buf[off..off + 4].try_into().unwrap();
        if self.big {
            f32::from_be_bytes(b)
        } else {
            f32::from_le_bytes(b)
        }
    }
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| Error::io(path, e))?;
    if is_gz(path) || raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("{}: bad gzip stream: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn companion_img(path: &Path) -> PathBuf {
    let s = path.to_string_lossy();
    if let Some(stem) = s.strip_suffix(".hdr.gz") {
        PathBuf::from(format!("{stem}.img.gz"))
    } else if let Some(stem) = s.strip_suffix(".hdr") {
        PathBuf::from(format!("{stem}.img"))
    } else {
        path.with_extension("img")
    }
}

/// Reads a NIfTI-1 image, converting voxels to `f32` with `scl_slope`/`scl_inter` applied.
pub fn load_nifti(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = read_all(path)?;
    let fmt = |m: &str| Error::Format(format!("{}: {m}", path.display()));
    if bytes.len() < HEADER_LEN {
        return Err(fmt(&format!("header truncated ({} < 348 bytes)", bytes.len())));
    }
    let le = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let be = i32::from_be_bytes(bytes[0..4].try_into().unwrap());
    let big = match (le, be) {
        (348, _) => false,
        (_, 348) => true,
        _ => return Err(fmt("sizeof_hdr is not 348")),
    };
    let r = Reader { buf: &bytes, big };
    let magic = &bytes[344..348];
    let single = match magic {
        b"n+1\0" => true,
        b"ni1\0" => false,
        _ => return Err(fmt("missing NIfTI-1 magic")),
    };

    let ndim = r.i16(40);
    if !(1..=7).contains(&ndim) {
        return Err(fmt(&format!("dim[0] = {ndim} out of range")));
    }
    let mut dim_xyz = [1usize; 3];
    for a in 0..3 {
        if (a as i16) < ndim {
            let d = r.i16(42 + 2 * a);
            if d < 1 {
                return Err(fmt(&format!("dim[{}] = {d}", a + 1)));
            }
            dim_xyz[a] = d as usize;
        }
    }
    for a in 3..ndim as usize {
        if r.i16(42 + 2 * a) > 1 {
            return Err(Error::Unsupported(format!(
                "{}: 4D and higher-dimensional images",
                path.display()
            )));
        }
    }
    let dt_code = r.i16(70);
    let dtype = NiftiDatatype::from_code(dt_code)
        .ok_or_else(|| Error::Unsupported(format!("{}: datatype code {dt_code}", path.display())))?;
    let pixdim: Vec<f32> = (0..8).map(|i| r.f32(76 + 4 * i)).collect();
    let vox_offset = r.f32(108);
    let slope = r.f32(112);
    let inter = r.f32(116);
    let qform_code = r.i16(252);
    let sform_code = r.i16(254);

    // affine rows (x, y, z) -> RAS
    let affine: [[f64; 4]; 3] = if sform_code > 0 {
        [0, 1, 2].map(|row| [0, 1, 2, 3].map(|c| r.f32(280 + 16 * row + 4 * c) as f64))
    } else if qform_code > 0 {
        qform_affine(&r, &pixdim)
    } else {
        [
            [pixdim[1].abs() as f64, 0.0, 0.0, 0.0],
            [0.0, pixdim[2].abs() as f64, 0.0, 0.0],
            [0.0, 0.0, pixdim[3].abs() as f64, 0.0],
        ]
    };
    for (row, vals) in affine.iter().enumerate() {
        for (col, &v) in vals[..3].iter().enumerate() {
            if row != col && v.abs() >= OFF_TOLERANCE {
                return Err(Error::Unsupported(format!(
                    "{}: oblique affine (element [{row}][{col}] = {v})",
                    path.display()
                )));
            }
        }
    }
    let diag = [affine[0][0], affine[1][1], affine[2][2]];
    if diag.iter().any(|d| d.abs() < 1e-9 || !d.is_finite()) {
        return Err(fmt("degenerate affine diagonal"));
    }

    let n = dim_xyz[0] * dim_xyz[1] * dim_xyz[2];
    let nbytes = n * dtype.size();
    let companion;
    let (payload, start): (&[u8], usize) = if single {
        let off = if vox_offset >= HEADER_LEN as f32 { vox_offset as usize } else { 352 };
        (&bytes, off)
    } else {
        companion = read_all(&companion_img(path))?;
        (&companion, vox_offset.max(0.0) as usize)
    };
    if payload.len() < start + nbytes {
        return Err(fmt(&format!(
            "voxel data truncated: need {} bytes at offset {start}, have {}",
            nbytes,
            payload.len()
        )));
    }
    let raw = &payload[start..start + nbytes];
    let scale = |v: f64| -> f32 {
        if slope != 0.0 && slope.is_finite() {
            (v * slope as f64 + inter as f64) as f32
        } else {
            v as f32
        }
    };
    let sz = dtype.size();
    let value = |i: usize| -> f64 {
        let b = &raw[i * sz..(i + 1) * sz];
        macro_rules! conv {
            ($t:ty) => {{
                let arr = b.try_into().unwrap();
                (if big { <$t>::from_be_bytes(arr) } else { <$t>::from_le_bytes(arr) }) as f64
            }};
        }
        match dtype {
            NiftiDatatype::U8 => b[0] as f64,
            NiftiDatatype::I16 => conv!(i16),
            NiftiDatatype::I32 => conv!(i32),
            NiftiDatatype::F32 => conv!(f32),
            NiftiDatatype::F64 => conv!(f64),
        }
    };

    // Target index direction in RAS per file axis: +x, +y, -z (superior first).
    let target = [1.0, 1.0, -1.0];
    let flip = [0, 1, 2].map(|a| diag[a].signum() != target[a]);
    let [nx, ny, nz] = dim_xyz;
    let mut data = vec![0f32; n];
    for k in 0..nz {
        let fk = if flip[2] { nz - 1 - k } else { k };
        for j in 0..ny {
            let fj = if flip[1] { ny - 1 - j } else { j };
            for i in 0..nx {
                let fi = if flip[0] { nx - 1 - i } else { i };
                data[(k * ny + j) * nx + i] = scale(value((fk * ny + fj) * nx + fi));
            }
        }
    }
    // RAS coordinate of the first stored voxel after flipping, mapped to our frame
    let first = [0, 1, 2].map(|a| {
        let n_a = dim_xyz[a] as f64;
        let t = affine[a][3];
        let ras = if flip[a] { t + (n_a - 1.0) * diag[a] } else { t };
        target[a] * ras
    });
    let spacing_xyz = diag.map(f64::abs);

    let intent = String::from_utf8_lossy(&payload_header_slice(&r, 328, 16)).to_string();
    let modality = intent
        .trim_end_matches('\0')
        .strip_prefix(TAG_PREFIX)
        .and_then(Modality::from_tag)
        .unwrap_or(if dtype == NiftiDatatype::U8 { Modality::Mask } else { Modality::Ct });
    let modality = if modality == Modality::Mask && data.iter().any(|&v| v < 0.0 || v.fract() != 0.0) {
        Modality::Fused
    } else {
        modality
    };

    Volume::new(
        data,
        [nz, ny, nx],
        [spacing_xyz[2], spacing_xyz[1], spacing_xyz[0]],
        [first[2], first[1], first[0]],
        modality,
    )
}

fn payload_header_slice(r: &Reader<'_>, off: usize, len: usize) -> Vec<u8> {
    r.buf[off..off + len].to_vec()
}

fn qform_affine(r: &Reader<'_>, pixdim: &[f32]) -> [[f64; 4]; 3] {
    let (b, c, d) = (r.f32(256) as f64, r.f32(260) as f64, r.f32(264) as f64);
    let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
    let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
    let rot = [
        [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
        [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
        [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - b * b - c * c],
    ];
    let s = [pixdim[1] as f64, pixdim[2] as f64, pixdim[3] as f64 * qfac];
    let off = [r.f32(268) as f64, r.f32(272) as f64, r.f32(276) as f64];
    [0, 1, 2].map(|i| [rot[i][0] * s[0], rot[i][1] * s[1], rot[i][2] * s[2], off[i]])
}

pub fn save_nifti(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    save_nifti_with(v, path, &NiftiWriteOptions::default())
}

/// Writes a single-file NIfTI-1 image; gzip-compressed when the path ends in `.gz`.
pub fn save_nifti_with(v: &Volume, path: impl AsRef<Path>, opts: &NiftiWriteOptions) -> Result<()> {
    let path = path.as_ref();
    let [nz, ny, nx] = v.dims();
    for d in [nx, ny, nz] {
        if d > i16::MAX as usize {
            return Err(Error::Unsupported(format!("dimension {d} exceeds NIfTI-1 limits")));
        }
    }
    let big = opts.big_endian;
    let mut h = vec![0u8; HEADER_LEN + 4];
    let put_i16 = |h: &mut Vec<u8>, off: usize, x: i16| {
        let b = if big { x.to_be_bytes() } else { x.to_le_bytes() };
        h[off..off + 2].copy_from_slice(&b);
    };
    let put_i32 = |h: &mut Vec<u8>, off: usize, x: i32| {
        let b = if big { x.to_be_bytes() } else { x.to_le_bytes() };
        h[off..off + 4].copy_from_slice(&b);
    };
    let put_f32 = |h: &mut Vec<u8>, off: usize, x: f32| {
        let b = if big { x.to_be_bytes() } else { x.to_le_bytes() };
        h[off..off + 4].copy_from_slice(&b);
    };
    let [sz, sy, sx] = v.spacing();
    let [oz, oy, ox] = v.origin();
    put_i32(&mut h, 0, HEADER_LEN as i32);
    h[38] = b'r';
    for (i, d) in [3i16, nx as i16, ny as i16, nz as i16, 1, 1, 1, 1].into_iter().enumerate() {
        put_i16(&mut h, 40 + 2 * i, d);
    }
    put_i16(&mut h, 70, opts.datatype.code());
    put_i16(&mut h, 72, (opts.datatype.size() * 8) as i16);
    // qfac = -1 encodes the z flip of the (x, y, depth) frame
    for (i, p) in [-1.0f32, sx as f32, sy as f32, sz as f32, 1.0, 1.0, 1.0, 1.0].into_iter().enumerate() {
        put_f32(&mut h, 76 + 4 * i, p);
    }
    put_f32(&mut h, 108, (HEADER_LEN + 4) as f32);
    put_f32(&mut h, 112, opts.scl_slope);
    put_f32(&mut h, 116, opts.scl_inter);
    h[123] = 2; // mm
    put_i16(&mut h, 252, 1);
    put_i16(&mut h, 254, 1);
    put_f32(&mut h, 268, ox as f32);
    put_f32(&mut h, 272, oy as f32);
    put_f32(&mut h, 276, -oz as f32);
    let srow = [
        [sx as f32, 0.0, 0.0, ox as f32],
        [0.0, sy as f32, 0.0, oy as f32],
        [0.0, 0.0, -sz as f32, -oz as f32],
    ];
    for (row, vals) in srow.iter().enumerate() {
        for (c, &x) in vals.iter().enumerate() {
            put_f32(&mut h, 280 + 16 * row + 4 * c, x);
        }
    }
    let tag = format!("{TAG_PREFIX}{}", v.modality().tag());
    h[328..328 + tag.len()].copy_from_slice(tag.as_bytes());
    h[344..348].copy_from_slice(b"n+1\0");

    let slope = if opts.scl_slope != 0.0 { opts.scl_slope as f64 } else { 1.0 };
    let inter = if opts.scl_slope != 0.0 { opts.scl_inter as f64 } else { 0.0 };
    let mut body = Vec::with_capacity(v.len() * opts.datatype.size());
    for &val in v.data() {
        let stored = (val as f64 - inter) / slope;
        macro_rules! push {
            ($x:expr) => {{
                let x = $x;
                body.extend_from_slice(&if big { x.to_be_bytes() } else { x.to_le_bytes() });
            }};
        }
        match opts.datatype {
            NiftiDatatype::U8 => body.push(stored.round().clamp(0.0, 255.0) as u8),
            NiftiDatatype::I16 => push!(stored.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16),
            NiftiDatatype::I32 => push!(stored.round() as i32),
            NiftiDatatype::F32 => push!(if opts.scl_slope == 1.0 && opts.scl_inter == 0.0 { val } else { stored as f32 }),
            NiftiDatatype::F64 => push!(stored),
        }
    }

    let write = |w: &mut dyn Write| -> std::io::Result<()> {
        w.write_all(&h)?;
        w.write_all(&body)
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let res = if is_gz(path) {
        let mut enc = GzEncoder::new(file, Compression::fast());
        write(&mut enc).and_then(|_| enc.finish().map(|_| ()))
    } else {
        let mut f = std::io::BufWriter::new(file);
        write(&mut f).and_then(|_| f.flush())
    };
    res.map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Volume {
        Volume::from_fn([4, 4, 4], [1.0; 3], [0.0; 3], Modality::Ct, |z, y, x| {
            (z as f32 - 1.5) * 0.1 + y as f32 * 3.25 - x as f32 / 7.0
        })
        .unwrap()
    }

    #[test]
    fn float32_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = sample();
        for name in ["a.nii", "a.nii.gz"] {
            let p = dir.path().join(name);
            save_nifti(&v, &p).unwrap();
            let back = load_nifti(&p).unwrap();
            assert_eq!(back.dims(), [4, 4, 4]);
            assert_eq!(back.spacing(), [1.0; 3]);
            assert_eq!(back.data(), v.data());
            assert_eq!(back.modality(), Modality::Ct);
        }
    }

    #[test]
    fn spacing_and_origin_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = Volume::from_fn([3, 5, 2], [2.5, 0.75, 1.25], [-12.0, 40.5, 3.0], Modality::Pet, |z, y, x| {
            (z * 10 + y + x) as f32
        })
        .unwrap();
        let p = dir.path().join("b.nii.gz");
        save_nifti(&v, &p).unwrap();
        let back = load_nifti(&p).unwrap();
        assert_eq!(back.data(), v.data());
        for a in 0..3 {
            assert!((back.spacing()[a] - v.spacing()[a]).abs() < 1e-6);
            assert!((back.origin()[a] - v.origin()[a]).abs() < 1e-4);
        }
        assert_eq!(back.modality(), Modality::Pet);
    }

    #[test]
    fn int16_with_intercept_big_endian() {
        let dir = tempfile::tempdir().unwrap();
        // stored raw values 0..n, loaded values shifted by -1024
        let raw = Volume::from_fn([2, 3, 4], [1.0; 3], [0.0; 3], Modality::Ct, |z, y, x| {
            (z * 12 + y * 4 + x) as f32
        })
        .unwrap();
        let shifted = raw.map(Modality::Ct, |v| v - 1024.0).unwrap();
        for big in [false, true] {
            let p = dir.path().join(format!("ct_{big}.nii"));
            let opts = NiftiWriteOptions {
                datatype: NiftiDatatype::I16,
                scl_slope: 1.0,
                scl_inter: -1024.0,
                big_endian: big,
            };
            save_nifti_with(&shifted, &p, &opts).unwrap();
            let back = load_nifti(&p).unwrap();
            for (a, b) in back.data().iter().zip(raw.data()) {
                assert_eq!(*a, b - 1024.0);
            }
        }
    }

    #[test]
    fn truncated_header_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("short.nii");
        std::fs::write(&p, vec![0u8; 200]).unwrap();
        assert!(matches!(load_nifti(&p), Err(Error::Format(_))));
    }

    #[test]
    fn unsupported_datatype() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.nii");
        save_nifti(&sample(), &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[70..72].copy_from_slice(&32i16.to_le_bytes()); // complex64
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(load_nifti(&p), Err(Error::Unsupported(_))));
    }

    #[test]
    fn oblique_affine_rejected_and_small_shear_tolerated() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("o.nii");
        save_nifti(&sample(), &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[284..288].copy_from_slice(&0.0005f32.to_le_bytes());
        std::fs::write(&p, &bytes).unwrap();
        assert!(load_nifti(&p).is_ok());
        bytes[284..288].copy_from_slice(&0.3f32.to_le_bytes());
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_nifti(&p), Err(Error::Unsupported(_))));
    }

    #[test]
    fn inferior_first_scan_is_flipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.nii");
        let v = Volume::from_fn([3, 1, 1], [2.0; 3], [0.0; 3], Modality::Ct, |z, _, _| z as f32).unwrap();
        save_nifti(&v, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        // rewrite srow_z so index increases towards superior: +2 mm per slice from S = -4
        bytes[320..324].copy_from_slice(&2.0f32.to_le_bytes());
        bytes[324..328].copy_from_slice(&(-4.0f32).to_le_bytes());
        std::fs::write(&p, &bytes).unwrap();
        let back = load_nifti(&p).unwrap();
        // most superior (S = 0) slice comes first
        assert_eq!(back.data(), &[2.0, 1.0, 0.0]);
        assert_eq!(back.origin()[0], 0.0);
    }

    #[test]
    fn two_file_pair() {
        let dir = tempfile::tempdir().unwrap();
        let single = dir.path().join("s.nii");
        save_nifti(&sample(), &single).unwrap();
        let bytes = std::fs::read(&single).unwrap();
        let mut hdr = bytes[..HEADER_LEN].to_vec();
        hdr[344..348].copy_from_slice(b"ni1\0");
        hdr[108..112].copy_from_slice(&0f32.to_le_bytes());
        std::fs::write(dir.path().join("p.hdr"), &hdr).unwrap();
        std::fs::write(dir.path().join("p.img"), &bytes[HEADER_LEN + 4..]).unwrap();
        let back = load_nifti(dir.path().join("p.hdr")).unwrap();
        assert_eq!(back.data(), sample().data());
    }
}
