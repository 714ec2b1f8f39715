use std::collections::VecDeque;

use crate::volume::{Modality, Volume};

/// Dense binary grid with zero padding for out-of-range reads.
pub(crate) struct Grid<'a> {
    pub fg: &'a [bool],
    pub dims: [usize; 3],
}

impl Grid<'_> {
    #[inline]
    fn at(&self, z: i64, y: i64, x: i64) -> bool {
        let [nz, ny, nx] = self.dims;
        if z < 0 || y < 0 || x < 0 || z >= nz as i64 || y >= ny as i64 || x >= nx as i64 {
            return false;
        }
        self.fg[(z as usize * ny + y as usize) * nx + x as usize]
    }

    /// Euler characteristic V - E + F - C of the union of closed unit cubes.
    pub fn euler(&self) -> i64 {
        let [nz, ny, nx] = self.dims.map(|d| d as i64);
        let any = |cells: &[(i64, i64, i64)]| cells.iter().any(|&(z, y, x)| self.at(z, y, x));
        let (mut v, mut e, mut f, mut c) = (0i64, 0i64, 0i64, 0i64);
        for z in 0..=nz {
            for y in 0..=ny {
                for x in 0..=nx {
                    // lattice vertex (z, y, x) touches the 8 cells below/behind/left of it
                    if any(&[
                        (z - 1, y - 1, x - 1),
                        (z - 1, y - 1, x),
                        (z - 1, y, x - 1),
                        (z - 1, y, x),
                        (z, y - 1, x - 1),
                        (z, y - 1, x),
                        (z, y, x - 1),
                        (z, y, x),
                    ]) {
                        v += 1;
                    }
                    // edges starting at the vertex along +x, +y, +z
                    if x < nx && any(&[(z - 1, y - 1, x), (z - 1, y, x), (z, y - 1, x), (z, y, x)]) {
                        e += 1;
                    }
                    if y < ny && any(&[(z - 1, y, x - 1), (z - 1, y, x), (z, y, x - 1), (z, y, x)]) {
                        e += 1;
                    }
                    if z < nz && any(&[(z, y - 1, x - 1), (z, y - 1, x), (z, y, x - 1), (z, y, x)]) {
                        e += 1;
                    }
                    // faces spanned by pairs of directions
                    if y < ny && x < nx && any(&[(z - 1, y, x), (z, y, x)]) {
                        f += 1;
                    }
                    if z < nz && x < nx && any(&[(z, y - 1, x), (z, y, x)]) {
                        f += 1;
                    }
                    if z < nz && y < ny && any(&[(z, y, x - 1), (z, y, x)]) {
                        f += 1;
                    }
                    if z < nz && y < ny && x < nx && self.at(z, y, x) {
                        c += 1;
                    }
                }
            }
        }
        v - e + f - c
    }

    /// Foreground plus every background voxel not 6-connected to the array border.
    pub fn filled(&self) -> Vec<bool> {
        let [nz, ny, nx] = self.dims;
        let mut outside = vec![false; self.fg.len()];
        let mut queue = VecDeque::new();
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let border = z == 0 || y == 0 || x == 0 || z == nz - 1 || y == ny - 1 || x == nx - 1;
                    let i = (z * ny + y) * nx + x;
                    if border && !self.fg[i] {
                        outside[i] = true;
                        queue.push_back(i);
                    }
                }
            }
        }
        while let Some(i) = queue.pop_front() {
            let z = (i / (ny * nx)) as i64;
            let y = ((i / nx) % ny) as i64;
            let x = (i % nx) as i64;
            for o in [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]] {
                let (zz, yy, xx) = (z + o[0], y + o[1], x + o[2]);
                if zz < 0 || yy < 0 || xx < 0 || zz >= nz as i64 || yy >= ny as i64 || xx >= nx as i64 {
                    continue;
                }
                let j = (zz as usize * ny + yy as usize) * nx + xx as usize;
                if !self.fg[j] && !outside[j] {
                    outside[j] = true;
                    queue.push_back(j);
                }
            }
        }
        outside.iter().map(|o| !o).collect()
    }
}

/// Euler characteristic of the foreground (`voxel > 0`) as a cubical complex.
pub fn euler_number(mask: &Volume) -> i64 {
    let fg: Vec<bool> = mask.data().iter().map(|&v| v > 0.0).collect();
    Grid { fg: &fg, dims: mask.dims() }.euler()
}

/// Fills cavities: background not reachable from the array border becomes foreground.
pub fn fill_holes(mask: &Volume) -> Volume {
    let fg: Vec<bool> = mask.data().iter().map(|&v| v > 0.0).collect();
    let filled = Grid { fg: &fg, dims: mask.dims() }.filled();
    Volume::new(
        filled.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        mask.dims(),
        mask.spacing(),
        mask.origin(),
        Modality::Mask,
    )
    .expect("same geometry as input")
}

#[cfg(test)]
pub(crate) mod oracle {
    use std::collections::HashSet;

    /// Brute-force V - E + F - C: every voxel contributes its closed cells in
    /// doubled coordinates; shared cells deduplicate through the sets.
    pub fn euler_brute_force(voxels: &[[i64; 3]]) -> i64 {
        let mut cells: [HashSet<[i64; 3]>; 4] = Default::default();
        for v in voxels {
            for dz in 0..=2 {
                for dy in 0..=2 {
                    for dx in 0..=2 {
                        let p = [2 * v[0] + dz, 2 * v[1] + dy, 2 * v[2] + dx];
                        // number of odd coordinates = cell dimension
                        let dim = p.iter().filter(|c| c.rem_euclid(2) == 1).count();
                        cells[dim].insert(p);
                    }
                }
            }
        }
        cells[0].len() as i64 - cells[1].len() as i64 + cells[2].len() as i64 - cells[3].len() as i64
    }
}
