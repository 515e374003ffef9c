//! Binary 3D morphology: connected components, dilation, surface
//! extraction and an exact Euclidean distance transform.

use serde::{Deserialize, Serialize};

use crate::volume::{BinaryMask, ImageGeometry};

/// Neighborhood used for component labeling and dilation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Six,
    Eighteen,
    TwentySix,
}

impl Connectivity {
    /// Neighbor offsets for this connectivity, faces first, then edges,
    /// then corners.
    pub fn offsets(self) -> &'static [[i64; 3]] {
        match self {
            Connectivity::Six => &ALL_OFFSETS[..6],
            Connectivity::Eighteen => &ALL_OFFSETS[..18],
            Connectivity::TwentySix => &ALL_OFFSETS,
        }
    }
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            6 => Ok(Connectivity::Six),
            18 => Ok(Connectivity::Eighteen),
            26 => Ok(Connectivity::TwentySix),
            other => Err(format!("connectivity must be 6, 18 or 26, got {other}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Six => 6,
            Connectivity::Eighteen => 18,
            Connectivity::TwentySix => 26,
        }
    }
}

#[rustfmt::skip]
static ALL_OFFSETS: [[i64; 3]; 26] = [
    // 6 faces
    [-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1],
    // 12 edges
    [-1, -1, 0], [-1, 1, 0], [1, -1, 0], [1, 1, 0],
    [-1, 0, -1], [-1, 0, 1], [1, 0, -1], [1, 0, 1],
    [0, -1, -1], [0, -1, 1], [0, 1, -1], [0, 1, 1],
    // 8 corners
    [-1, -1, -1], [-1, -1, 1], [-1, 1, -1], [-1, 1, 1],
    [1, -1, -1], [1, -1, 1], [1, 1, -1], [1, 1, 1],
];

/// Result of labeling the connected components of a mask.
///
/// Component ids run from 1 to `count()`; id 0 is background. Ids are
/// assigned in raster order of each component's first voxel, so the
/// labeling is deterministic.
#[derive(Debug, Clone)]
pub struct ComponentLabeling {
    pub geometry: ImageGeometry,
    pub labels: Vec<u32>,
    sizes: Vec<usize>,
}

impl ComponentLabeling {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    /// Voxel count of component `id` (1-based).
    pub fn size(&self, id: u32) -> usize {
        self.sizes[(id - 1) as usize]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Binary mask of a single component.
    pub fn component_mask(&self, id: u32) -> BinaryMask {
        let voxels = self.labels.iter().map(|&l| l == id).collect();
        BinaryMask {
            geometry: self.geometry.clone(),
            voxels,
        }
    }
}

/// Label connected components with a two-pass union-find sweep.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> ComponentLabeling {
    let [nx, ny, nz] = mask.geometry.dims;
    let n = mask.voxels.len();
    let mut parent: Vec<u32> = vec![0; n];
    let mut provisional: Vec<u32> = vec![0; n];

    // Offsets pointing at voxels already visited in raster order.
    let backward: Vec<[i64; 3]> = connectivity
        .offsets()
        .iter()
        .copied()
        .filter(|&[dx, dy, dz]| dz < 0 || (dz == 0 && (dy < 0 || (dy == 0 && dx < 0))))
        .collect();

    fn find(parent: &mut [u32], mut i: u32) -> u32 {
        while parent[i as usize] != i {
            parent[i as usize] = parent[parent[i as usize] as usize];
            i = parent[i as usize];
        }
        i
    }

    let mut next: u32 = 0;
    let mut idx = 0usize;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if mask.voxels[idx] {
                    let mut root: Option<u32> = None;
                    for &[dx, dy, dz] in &backward {
                        let (px, py, pz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                        if px < 0 || py < 0 || pz < 0 {
                            continue;
                        }
                        let (px, py, pz) = (px as usize, py as usize, pz as usize);
                        if px >= nx || py >= ny || pz >= nz {
                            continue;
                        }
                        let pidx = px + nx * (py + ny * pz);
                        if !mask.voxels[pidx] {
                            continue;
                        }
                        let r = find(&mut parent, provisional[pidx]);
                        root = Some(match root {
                            None => r,
                            Some(prev) => {
                                let a = find(&mut parent, prev);
                                if a != r {
                                    // Union by pointing the larger id at the smaller.
                                    let (lo, hi) = if a < r { (a, r) } else { (r, a) };
                                    parent[hi as usize] = lo;
                                    lo
                                } else {
                                    a
                                }
                            }
                        });
                    }
                    let label = match root {
                        Some(r) => r,
                        None => {
                            let l = next;
                            parent[l as usize] = l;
                            next += 1;
                            l
                        }
                    };
                    provisional[idx] = label;
                }
                idx += 1;
            }
        }
    }

    // Second pass: compress to final ids in order of first appearance.
    let mut remap: Vec<u32> = vec![0; next as usize];
    let mut labels = vec![0u32; n];
    let mut sizes: Vec<usize> = Vec::new();
    for i in 0..n {
        if mask.voxels[i] {
            let root = find(&mut parent, provisional[i]);
            let id = if remap[root as usize] == 0 {
                sizes.push(0);
                remap[root as usize] = sizes.len() as u32;
                sizes.len() as u32
            } else {
                remap[root as usize]
            };
            labels[i] = id;
            sizes[(id - 1) as usize] += 1;
        }
    }

    ComponentLabeling {
        geometry: mask.geometry.clone(),
        labels,
        sizes,
    }
}

/// Dilate a mask `radius` times with the unit structuring element of the
/// given connectivity. Radius 0 returns the mask unchanged.
pub fn dilate(mask: &BinaryMask, radius: usize, connectivity: Connectivity) -> BinaryMask {
    let [nx, ny, nz] = mask.geometry.dims;
    let offsets = connectivity.offsets();
    let mut current = mask.voxels.clone();
    for _ in 0..radius {
        let mut out = current.clone();
        let mut idx = 0usize;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    if current[idx] {
                        for &[dx, dy, dz] in offsets {
                            let (px, py, pz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                            if px < 0
                                || py < 0
                                || pz < 0
                                || px >= nx as i64
                                || py >= ny as i64
                                || pz >= nz as i64
                            {
                                continue;
                            }
                            out[px as usize + nx * (py as usize + ny * pz as usize)] = true;
                        }
                    }
                    idx += 1;
                }
            }
        }
        current = out;
    }
    BinaryMask {
        geometry: mask.geometry.clone(),
        voxels: current,
    }
}

/// Surface voxels of a mask: set voxels with at least one 6-neighbor that
/// is unset or outside the grid.
pub fn boundary(mask: &BinaryMask) -> BinaryMask {
    let [nx, ny, nz] = mask.geometry.dims;
    let mut out = vec![false; mask.voxels.len()];
    let mut idx = 0usize;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if mask.voxels[idx] {
                    let mut exposed = false;
                    for &[dx, dy, dz] in Connectivity::Six.offsets() {
                        let (px, py, pz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                        if px < 0
                            || py < 0
                            || pz < 0
                            || px >= nx as i64
                            || py >= ny as i64
                            || pz >= nz as i64
                        {
                            exposed = true;
                            break;
                        }
                        if !mask.voxels[px as usize + nx * (py as usize + ny * pz as usize)] {
                            exposed = true;
                            break;
                        }
                    }
                    out[idx] = exposed;
                }
                idx += 1;
            }
        }
    }
    BinaryMask {
        geometry: mask.geometry.clone(),
        voxels: out,
    }
}

/// Exact Euclidean distance in millimeters from every voxel to the nearest
/// set voxel, honoring anisotropic spacing. Every distance is
/// `f64::INFINITY` when the mask is empty.
///
/// Separable lower-envelope transform: one 1D pass per axis over squared
/// distances.
pub fn distance_transform(mask: &BinaryMask) -> Vec<f64> {
    let [nx, ny, nz] = mask.geometry.dims;
    let spacing = mask.geometry.spacing;
    let mut dist: Vec<f64> = mask
        .voxels
        .iter()
        .map(|&v| if v { 0.0 } else { f64::INFINITY })
        .collect();

    let mut line: Vec<f64> = Vec::new();
    let mut out_line: Vec<f64> = Vec::new();

    // x axis
    line.resize(nx, 0.0);
    out_line.resize(nx, 0.0);
    for z in 0..nz {
        for y in 0..ny {
            let base = nx * (y + ny * z);
            line.copy_from_slice(&dist[base..base + nx]);
            edt_1d(&line, spacing[0], &mut out_line);
            dist[base..base + nx].copy_from_slice(&out_line);
        }
    }

    // y axis
    line.resize(ny, 0.0);
    out_line.resize(ny, 0.0);
    for z in 0..nz {
        for x in 0..nx {
            for y in 0..ny {
                line[y] = dist[x + nx * (y + ny * z)];
            }
            edt_1d(&line, spacing[1], &mut out_line);
            for y in 0..ny {
                dist[x + nx * (y + ny * z)] = out_line[y];
            }
        }
    }

    // z axis
    line.resize(nz, 0.0);
    out_line.resize(nz, 0.0);
    for y in 0..ny {
        for x in 0..nx {
            for z in 0..nz {
                line[z] = dist[x + nx * (y + ny * z)];
            }
            edt_1d(&line, spacing[2], &mut out_line);
            for z in 0..nz {
                dist[x + nx * (y + ny * z)] = out_line[z];
            }
        }
    }

    for d in &mut dist {
        *d = d.sqrt();
    }
    dist
}

/// 1D squared-distance transform of sampled function `f` at positions
/// `i * h`: `out[q] = min_p ((q - p) * h)^2 + f[p]`.
///
/// Lower-envelope-of-parabolas scan. Sites with infinite height carry no
/// parabola, so lines without any seed stay infinite.
fn edt_1d(f: &[f64], h: f64, out: &mut [f64]) {
    let n = f.len();
    // v: site index of each parabola on the envelope.
    // z: envelope boundaries; parabola v[i] covers [z[i], z[i + 1]].
    let mut v: Vec<usize> = Vec::with_capacity(n);
    let mut z: Vec<f64> = Vec::with_capacity(n + 1);
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let xq = q as f64 * h;
        loop {
            if v.is_empty() {
                v.push(q);
                z.clear();
                z.push(f64::NEG_INFINITY);
                z.push(f64::INFINITY);
                break;
            }
            let p = *v.last().unwrap();
            let xp = p as f64 * h;
            // Intersection of the parabolas rooted at xq and xp.
            let s = ((f[q] + xq * xq) - (f[p] + xp * xp)) / (2.0 * xq - 2.0 * xp);
            if s <= z[v.len() - 1] {
                v.pop();
                z.pop();
            } else {
                *z.last_mut().unwrap() = s;
                v.push(q);
                z.push(f64::INFINITY);
                break;
            }
        }
    }

    if v.is_empty() {
        out[..n].fill(f64::INFINITY);
        return;
    }

    let mut k = 0usize;
    for q in 0..n {
        let xq = q as f64 * h;
        while z[k + 1] < xq {
            k += 1;
        }
        let p = v[k];
        let d = xq - p as f64 * h;
        out[q] = d * d + f[p];
    }
}
