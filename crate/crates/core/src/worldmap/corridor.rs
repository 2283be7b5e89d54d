use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{MapError, OccupancyGrid};

/// Convex region `{x | a_i · x <= b_i for all rows i}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyhedron {
    /// Outward unit face normals, one per row.
    pub a: Vec<Vector3<f64>>,
    pub b: Vec<f64>,
}

impl Polyhedron {
    pub fn from_box(lo: Vector3<f64>, hi: Vector3<f64>) -> Self {
        let mut a = Vec::with_capacity(6);
        let mut b = Vec::with_capacity(6);
        for k in 0..3 {
            let mut n = Vector3::zeros();
            n[k] = 1.0;
            a.push(n);
            b.push(hi[k]);
            a.push(-n);
            b.push(-lo[k]);
        }
        Self { a, b }
    }

    /// Signed violation `a_i · p - b_i` of every row.
    pub fn residuals(&self, p: &Vector3<f64>) -> impl Iterator<Item = f64> + '_ {
        let p = *p;
        self.a.iter().zip(&self.b).map(move |(n, &o)| n.dot(&p) - o)
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        self.residuals(p).all(|r| r <= 0.0)
    }

    /// Axis-aligned bounds for box-shaped polyhedra (rows built by
    /// [`Polyhedron::from_box`]).
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        if self.a.len() != 6 {
            return None;
        }
        let mut lo = Vector3::zeros();
        let mut hi = Vector3::zeros();
        for k in 0..3 {
            hi[k] = self.b[2 * k];
            lo[k] = -self.b[2 * k + 1];
        }
        Some((lo, hi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorridorConfig {
    /// Obstacle inflation (vehicle radius), m.
    pub inflation: f64,
    /// Maximum outward growth of each face beyond the segment's bounding box, m.
    pub max_half_width: f64,
}

impl Default for CorridorConfig {
    fn default() -> Self {
        Self {
            inflation: 0.3,
            max_half_width: 3.0,
        }
    }
}

/// Summed-volume table over a grid's occupancy.
#[derive(Debug, Clone)]
struct VoxelTable {
    dims: [usize; 3],
    table: Vec<u32>,
}

impl VoxelTable {
    fn new(grid: &OccupancyGrid) -> Self {
        let [nx, ny, nz] = grid.dims();
        let (sx, sy) = (nx + 1, ny + 1);
        let mut table = vec![0u32; sx * sy * (nz + 1)];
        let at = |x: usize, y: usize, z: usize| x + sx * (y + sy * z);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let t = |x, y, z| table[at(x, y, z)] as i64;
                    let v = grid.is_occupied_index([x, y, z]) as i64
                        + t(x, y + 1, z + 1)
                        + t(x + 1, y, z + 1)
                        + t(x + 1, y + 1, z)
                        - t(x, y, z + 1)
                        - t(x, y + 1, z)
                        - t(x + 1, y, z)
                        + t(x, y, z);
                    table[at(x + 1, y + 1, z + 1)] = v as u32;
                }
            }
        }
        Self {
            dims: grid.dims(),
            table,
        }
    }

    /// Occupied voxel count in the inclusive index box `lo..=hi`.
    fn count(&self, lo: [usize; 3], hi: [usize; 3]) -> u32 {
        let [nx, ny, _] = self.dims;
        let (sx, sy) = (nx + 1, ny + 1);
        let at = |x: usize, y: usize, z: usize| self.table[x + sx * (y + sy * z)] as i64;
        let (x0, y0, z0) = (lo[0], lo[1], lo[2]);
        let (x1, y1, z1) = (hi[0] + 1, hi[1] + 1, hi[2] + 1);
        let s = at(x1, y1, z1) - at(x0, y1, z1) - at(x1, y0, z1) - at(x1, y1, z0)
            + at(x0, y0, z1)
            + at(x0, y1, z0)
            + at(x1, y0, z0)
            - at(x0, y0, z0);
        s as u32
    }

    fn box_free(&self, lo: [usize; 3], hi: [usize; 3]) -> bool {
        (0..3).all(|k| lo[k] <= hi[k] && hi[k] < self.dims[k]) && self.count(lo, hi) == 0
    }
}

/// Reusable corridor generator: holds the inflated map and summed-volume
/// tables so that "is this voxel box free" costs eight lookups.
#[derive(Debug, Clone)]
pub struct CorridorBuilder {
    inflated: OccupancyGrid,
    table: VoxelTable,
    /// Uninflated occupancy, used to leave the inflated zone.
    raw: VoxelTable,
    cfg: CorridorConfig,
}

impl CorridorBuilder {
    pub fn new(grid: &OccupancyGrid, cfg: CorridorConfig) -> Self {
        let mut inflated = grid.inflated(cfg.inflation);
        let [nx, ny, nz] = inflated.dims();
        // the map border is a wall too
        let shell = (cfg.inflation / grid.resolution()).ceil() as usize;
        if shell > 0 {
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        let near = |i: usize, n: usize| i < shell || i + shell >= n;
                        if near(x, nx) || near(y, ny) || near(z, nz) {
                            inflated.set_occupied([x, y, z], true);
                        }
                    }
                }
            }
        }
        Self {
            table: VoxelTable::new(&inflated),
            raw: VoxelTable::new(grid),
            inflated,
            cfg,
        }
    }

    pub fn inflated(&self) -> &OccupancyGrid {
        &self.inflated
    }

    pub fn config(&self) -> CorridorConfig {
        self.cfg
    }

    /// True when the inclusive voxel box is inside the grid and free after
    /// inflation.
    pub fn box_free(&self, lo: [usize; 3], hi: [usize; 3]) -> bool {
        self.table.box_free(lo, hi)
    }

    /// True when the inclusive voxel box is inside the grid and free of raw
    /// obstacles.
    pub fn raw_box_free(&self, lo: [usize; 3], hi: [usize; 3]) -> bool {
        self.raw.box_free(lo, hi)
    }

    /// One box per segment of `path`, each grown from the segment's voxel
    /// bounding box.
    pub fn build(
        &self,
        raw: &OccupancyGrid,
        path: &[Vector3<f64>],
    ) -> Result<Vec<Polyhedron>, MapError> {
        if path.len() < 2 {
            return Err(MapError::PathTooShort);
        }
        for (index, p) in path.iter().enumerate() {
            if raw.occupancy(p) != super::Occupancy::Free {
                return Err(MapError::PathPointOccupied {
                    index,
                    point: [p.x, p.y, p.z],
                });
            }
        }
        path.windows(2)
            .enumerate()
            .map(|(index, w)| {
                self.grow(&w[0], &w[1], &self.table)
                    .or_else(|| {
                        // a segment starting inside the inflated zone gets a
                        // box free of raw obstacles so the vehicle can move out
                        let seed = self.inflated.index_of(&w[0])?;
                        (!self.table.box_free(seed, seed))
                            .then(|| self.grow(&w[0], &w[1], &self.raw))
                            .flatten()
                    })
                    .ok_or(MapError::SegmentBlocked { index })
            })
            .collect()
    }

    fn grow(&self, a: &Vector3<f64>, b: &Vector3<f64>, table: &VoxelTable) -> Option<Polyhedron> {
        let ia = self.inflated.index_of(a)?;
        let ib = self.inflated.index_of(b)?;
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for k in 0..3 {
            lo[k] = ia[k].min(ib[k]);
            hi[k] = ia[k].max(ib[k]);
        }
        if !table.box_free(lo, hi) {
            return None;
        }
        let dims = self.inflated.dims();
        let reach = (self.cfg.max_half_width / self.inflated.resolution()).round() as usize;
        let (lo0, hi0) = (lo, hi);
        let mut open = [true; 6];
        while open.iter().any(|&o| o) {
            for face in 0..6 {
                if !open[face] {
                    continue;
                }
                let k = face / 2;
                let (mut slab_lo, mut slab_hi) = (lo, hi);
                if face % 2 == 0 {
                    if hi[k] + 1 >= dims[k] || hi[k] + 1 > hi0[k] + reach {
                        open[face] = false;
                        continue;
                    }
                    slab_lo[k] = hi[k] + 1;
                    slab_hi[k] = hi[k] + 1;
                } else {
                    if lo[k] == 0 || lo[k] + reach <= lo0[k] {
                        open[face] = false;
                        continue;
                    }
                    slab_lo[k] = lo[k] - 1;
                    slab_hi[k] = lo[k] - 1;
                }
                if table.count(slab_lo, slab_hi) == 0 {
                    lo[k] = lo[k].min(slab_lo[k]);
                    hi[k] = hi[k].max(slab_hi[k]);
                } else {
                    open[face] = false;
                }
            }
        }
        let res = self.inflated.resolution();
        let o = self.inflated.origin();
        let lo_w = o + Vector3::new(lo[0] as f64, lo[1] as f64, lo[2] as f64) * res;
        let hi_w =
            o + Vector3::new((hi[0] + 1) as f64, (hi[1] + 1) as f64, (hi[2] + 1) as f64) * res;
        Some(Polyhedron::from_box(lo_w, hi_w))
    }
}

/// Convenience wrapper: inflates `grid` and builds the corridor for `path`.
pub fn build_corridor(
    grid: &OccupancyGrid,
    path: &[Vector3<f64>],
    cfg: CorridorConfig,
) -> Result<Vec<Polyhedron>, MapError> {
    CorridorBuilder::new(grid, cfg).build(grid, path)
}
