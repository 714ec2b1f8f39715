//! Incremental 3D convex hull over integer voxel centres.
//!
//! All predicates use exact `i64` arithmetic, so there is no epsilon tuning:
//! a point is outside a face iff its orientation determinant is strictly
//! positive.

use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};
use crate::volume::{Modality, Volume};

type P = [i64; 3];

#[inline]
fn sub(a: P, b: P) -> P {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn cross(a: P, b: P) -> P {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
fn dot(a: P, b: P) -> i64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn orient(a: P, b: P, c: P, p: P) -> i64 {
    dot(cross(sub(b, a), sub(c, a)), sub(p, a))
}

/// Half-space `normal . p <= offset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Plane {
    pub normal: [i64; 3],
    pub offset: i64,
}

impl Plane {
    pub fn contains(&self, p: [i64; 3]) -> bool {
        dot(self.normal, p) <= self.offset
    }
}

/// Convex hull of a voxel set in index space.
#[derive(Debug, Clone)]
pub struct ConvexHull {
    /// Affine dimension of the point set (0..=3).
    pub rank: usize,
    pub vertices: Vec<[i64; 3]>,
    /// Outward faces; empty when `rank < 3`.
    pub planes: Vec<Plane>,
    /// Voxels whose centres lie inside or on the hull. For `rank < 3` this is
    /// the input set itself.
    pub voxels: Vec<[i64; 3]>,
}

impl ConvexHull {
    pub fn volume_voxels(&self) -> usize {
        self.voxels.len()
    }

    pub fn contains(&self, p: [i64; 3]) -> bool {
        if self.rank == 3 {
            self.planes.iter().all(|pl| pl.contains(p))
        } else {
            self.voxels.contains(&p)
        }
    }

    /// Largest distance between two vertices after scaling each axis by `spacing`.
    pub fn max_feret(&self, spacing: [f64; 3]) -> f64 {
        let mut best = 0.0f64;
        for (i, a) in self.vertices.iter().enumerate() {
            for b in &self.vertices[i + 1..] {
                let d2: f64 = (0..3)
                    .map(|k| ((a[k] - b[k]) as f64 * spacing[k]).powi(2))
                    .sum();
                best = best.max(d2);
            }
        }
        best.sqrt()
    }
}

/// Keeps only the two x-extremes of every `(z, y)` row; their hull equals the hull of all points.
fn row_extremes(points: &[P]) -> Vec<P> {
    let mut rows: BTreeMap<(i64, i64), (i64, i64)> = BTreeMap::new();
    for p in points {
        rows.entry((p[0], p[1]))
            .and_modify(|e| {
                e.0 = e.0.min(p[2]);
                e.1 = e.1.max(p[2]);
            })
            .or_insert((p[2], p[2]));
    }
    let mut out = Vec::with_capacity(rows.len() * 2);
    for ((z, y), (lo, hi)) in rows {
        out.push([z, y, lo]);
        if hi != lo {
            out.push([z, y, hi]);
        }
    }
    out
}

pub fn convex_hull(region: &[[i64; 3]]) -> Result<ConvexHull> {
    if region.is_empty() {
        return Err(Error::arg("convex hull of an empty region"));
    }
    let pts = row_extremes(region);
    let p0 = pts[0];
    let Some(&p1) = pts.iter().find(|&&p| p != p0) else {
        return Ok(degenerate(0, vec![p0], region));
    };
    let d01 = sub(p1, p0);
    let Some(&p2) = pts.iter().find(|&&p| cross(d01, sub(p, p0)) != [0, 0, 0]) else {
        // collinear: endpoints along the line
        let key = |p: &P| dot(sub(*p, p0), d01);
        let lo = *pts.iter().min_by_key(|p| key(p)).unwrap();
        let hi = *pts.iter().max_by_key(|p| key(p)).unwrap();
        return Ok(degenerate(1, vec![lo, hi], region));
    };
    let Some(&p3) = pts.iter().find(|&&p| orient(p0, p1, p2, p) != 0) else {
        return Ok(degenerate(2, planar_hull(&pts, p0, cross(d01, sub(p2, p0))), region));
    };

    let mut verts: Vec<P> = vec![p0, p1, p2, p3];
    // orient faces so the opposite vertex is on the negative side
    let tetra = [[0usize, 1, 2, 3], [0, 1, 3, 2], [0, 2, 3, 1], [1, 2, 3, 0]];
    let mut faces: Vec<[usize; 3]> = tetra
        .iter()
        .map(|&[a, b, c, d]| {
            if orient(verts[a], verts[b], verts[c], verts[d]) > 0 {
                [a, c, b]
            } else {
                [a, b, c]
            }
        })
        .collect();

    for &p in &pts {
        if [p0, p1, p2, p3].contains(&p) {
            continue;
        }
        let visible: Vec<bool> = faces
            .iter()
            .map(|f| orient(verts[f[0]], verts[f[1]], verts[f[2]], p) > 0)
            .collect();
        if !visible.iter().any(|&v| v) {
            continue;
        }
        let mut edges: HashSet<(usize, usize)> = HashSet::new();
        for (f, _) in faces.iter().zip(&visible).filter(|(_, v)| **v) {
            edges.insert((f[0], f[1]));
            edges.insert((f[1], f[2]));
            edges.insert((f[2], f[0]));
        }
        let idx = verts.len();
        verts.push(p);
        let mut next: Vec<[usize; 3]> = faces
            .iter()
            .zip(&visible)
            .filter(|(_, v)| !**v)
            .map(|(f, _)| *f)
            .collect();
        let mut horizon: Vec<(usize, usize)> =
            edges.iter().copied().filter(|&(a, b)| !edges.contains(&(b, a))).collect();
        horizon.sort_unstable();
        next.extend(horizon.into_iter().map(|(a, b)| [a, b, idx]));
        faces = next;
    }

    let mut used: Vec<usize> = faces.iter().flatten().copied().collect();
    used.sort_unstable();
    used.dedup();
    let vertices: Vec<P> = used.iter().map(|&i| verts[i]).collect();
    let planes: Vec<Plane> = faces
        .iter()
        .map(|f| {
            let n = cross(sub(verts[f[1]], verts[f[0]]), sub(verts[f[2]], verts[f[0]]));
            Plane {
                normal: n,
                offset: dot(n, verts[f[0]]),
            }
        })
        .collect();
    let voxels = voxelize(&planes, &vertices);
    Ok(ConvexHull {
        rank: 3,
        vertices,
        planes,
        voxels,
    })
}

fn degenerate(rank: usize, vertices: Vec<P>, region: &[P]) -> ConvexHull {
    let mut voxels = region.to_vec();
    voxels.sort_unstable();
    voxels.dedup();
    ConvexHull {
        rank,
        vertices,
        planes: Vec::new(),
        voxels,
    }
}

/// Gift-wrapping hull of coplanar points with plane normal `n`.
fn planar_hull(pts: &[P], start_hint: P, n: P) -> Vec<P> {
    let mut uniq = pts.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    // lowest point in lexicographic order is a hull vertex
    let start = *uniq.iter().min().unwrap_or(&start_hint);
    let mut hull = vec![start];
    let mut current = start;
    loop {
        let mut cand = *uniq.iter().find(|&&p| p != current).unwrap();
        for &p in &uniq {
            if p == current {
                continue;
            }
            let turn = dot(n, cross(sub(cand, current), sub(p, current)));
            let farther = dot(sub(p, current), sub(p, current)) > dot(sub(cand, current), sub(cand, current));
            if turn < 0 || (turn == 0 && farther) {
                cand = p;
            }
        }
        if cand == start || hull.len() > uniq.len() {
            break;
        }
        hull.push(cand);
        current = cand;
    }
    hull
}

#[inline]
fn floor_div(a: i64, b: i64) -> i64 {
    let q = a / b;
    if (a % b != 0) && ((a < 0) != (b < 0)) {
        q - 1
    } else {
        q
    }
}

#[inline]
fn ceil_div(a: i64, b: i64) -> i64 {
    -floor_div(-a, b)
}

fn voxelize(planes: &[Plane], vertices: &[P]) -> Vec<P> {
    let lo = [0, 1, 2].map(|k| vertices.iter().map(|v| v[k]).min().unwrap());
    let hi = [0, 1, 2].map(|k| vertices.iter().map(|v| v[k]).max().unwrap());
    let mut out = Vec::new();
    for z in lo[0]..=hi[0] {
        for y in lo[1]..=hi[1] {
            let (mut xmin, mut xmax) = (lo[2], hi[2]);
            for pl in planes {
                let r = pl.offset - pl.normal[0] * z - pl.normal[1] * y;
                let nx = pl.normal[2];
                if nx > 0 {
                    xmax = xmax.min(floor_div(r, nx));
                } else if nx < 0 {
                    xmin = xmin.max(ceil_div(r, nx));
                } else if r < 0 {
                    xmax = xmin - 1;
                    break;
                }
                if xmin > xmax {
                    break;
                }
            }
            out.extend((xmin..=xmax).map(|x| [z, y, x]));
        }
    }
    out
}

/// Convex hull of a mask's foreground voxel centres, voxelized on the same grid,
/// with hull vertices in millimetres.
pub fn convex_hull_mask(mask: &Volume) -> Result<(Volume, Vec<[f64; 3]>)> {
    let [nz, ny, nx] = mask.dims();
    let mut region = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if mask.get(z, y, x) > 0.0 {
                    region.push([z as i64, y as i64, x as i64]);
                }
            }
        }
    }
    let hull = convex_hull(&region)?;
    let mut data = vec![0f32; mask.len()];
    for v in &hull.voxels {
        data[mask.index(v[0] as usize, v[1] as usize, v[2] as usize)] = 1.0;
    }
    let out = Volume::new(data, mask.dims(), mask.spacing(), mask.origin(), Modality::Mask)?;
    let verts = hull
        .vertices
        .iter()
        .map(|v| mask.position([v[0] as f64, v[1] as f64, v[2] as f64]))
        .collect();
    Ok((out, verts))
}


#[cfg(test)]
mod tests {
    use super::oracle::in_hull_brute_force;
    use super::*;
    use proptest::prelude::*;

    fn ball(r: f64) -> Vec<P> {
        let ri = r.ceil() as i64;
        let mut out = Vec::new();
        for z in -ri..=ri {
            for y in -ri..=ri {
                for x in -ri..=ri {
                    if ((z * z + y * y + x * x) as f64) <= r * r {
                        out.push([z, y, x]);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn ball_hull_is_tight() {
        let b = ball(6.0);
        let h = convex_hull(&b).unwrap();
        assert_eq!(h.rank, 3);
        let set: HashSet<P> = h.voxels.iter().copied().collect();
        assert!(b.iter().all(|p| set.contains(p)));
        assert!(h.voxels.len() as f64 / b.len() as f64 <= 1.05);
        // every voxel centre the hull claims satisfies all half-spaces
        for v in &h.voxels {
            assert!(h.planes.iter().all(|pl| pl.contains(*v)));
        }
    }

    #[test]
    fn two_voxels_degenerate() {
        let h = convex_hull(&[[0, 0, 0], [0, 0, 1]]).unwrap();
        assert_eq!(h.rank, 1);
        assert_eq!(h.voxels.len(), 2);
        assert_eq!(h.max_feret([1.0; 3]), 1.0);
    }

    #[test]
    fn planar_tromino_is_its_own_hull() {
        // three points are always coplanar: the region itself is returned
        let h = convex_hull(&[[0, 0, 0], [0, 0, 1], [0, 1, 0]]).unwrap();
        assert_eq!(h.rank, 2);
        assert_eq!(h.voxels.len(), 3);
        assert_eq!(h.vertices.len(), 3);
    }

    #[test]
    fn extruded_l_fills_the_corner() {
        // L of five voxels in a 3x3 square, two layers thick
        let mut region = Vec::new();
        for z in 0..2 {
            for (y, x) in [(0, 0), (0, 1), (0, 2), (1, 0), (2, 0)] {
                region.push([z, y, x]);
            }
        }
        let h = convex_hull(&region).unwrap();
        assert_eq!(h.rank, 3);
        let mut expected = Vec::new();
        for z in 0..2 {
            for y in 0..3 {
                for x in 0..3 {
                    if in_hull_brute_force(&region, [z, y, x]) {
                        expected.push([z, y, x]);
                    }
                }
            }
        }
        let mut got = h.voxels.clone();
        got.sort_unstable();
        expected.sort_unstable();
        assert_eq!(got, expected);
        assert_eq!(got.len(), 12);
        assert!((region.len() as f64 / got.len() as f64) < 1.0);
    }

    #[test]
    fn rod_feret() {
        let rod: Vec<P> = (0..9).map(|z| [z, 0, 0]).collect();
        let h = convex_hull(&rod).unwrap();
        assert_eq!(h.max_feret([1.0; 3]), 8.0);
    }

    #[test]
    fn empty_region_is_error() {
        assert!(convex_hull(&[]).is_err());
    }

    #[test]
    fn mask_wrapper() {
        let m = Volume::from_fn([4, 4, 4], [2.0; 3], [0.0; 3], Modality::Mask, |z, y, x| {
            if (z == 0 && y == 0 && x <= 2) || (z == 2 && y == 2 && x == 0) || (z == 1 && y == 3 && x == 3) { 1.0 } else { 0.0 }
        })
        .unwrap();
        let (hm, verts) = convex_hull_mask(&m).unwrap();
        assert!(hm.data().iter().filter(|&&v| v > 0.0).count() >= 5);
        assert!(verts.iter().all(|v| v.iter().all(|c| *c >= 0.0 && *c <= 6.0)));
    }

    proptest! {
        #[test]
        fn hull_matches_brute_force(pts in prop::collection::vec((0i64..4, 0i64..4, 0i64..4), 4..14)) {
            let mut region: Vec<P> = pts.into_iter().map(|(a, b, c)| [a, b, c]).collect();
            region.sort_unstable();
            region.dedup();
            let h = convex_hull(&region).unwrap();
            prop_assume!(h.rank == 3);
            for z in 0..4 {
                for y in 0..4 {
                    for x in 0..4 {
                        let p = [z, y, x];
                        prop_assert_eq!(h.voxels.contains(&p), in_hull_brute_force(&region, p), "point {:?}", p);
                    }
                }
            }
        }
    }
}
