//! Voxel occupancy world model.
//!
//! The grid is the single source of occlusion and collision truth. Positions
//! map to voxels by floor division of `(p - origin) / resolution`; anything
//! outside the bounds is [`Occupancy::Unknown`].

mod corridor;
mod generate;
mod io;
mod ray;

pub use corridor::{build_corridor, CorridorBuilder, CorridorConfig, Polyhedron};
pub use generate::{generate_map, ClearZone, MapKind, MapSpec, WallParams};
pub use io::MapFile;
pub use ray::{line_of_sight_clear, visit_segment_voxels};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Edge length (in voxels) of the bookkeeping chunks used to skip empty space.
const CHUNK: usize = 8;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MapError {
    #[error("resolution must be positive, got {0}")]
    BadResolution(f64),
    #[error("grid dimensions must all be >= 1, got {0:?}")]
    BadDims([usize; 3]),
    #[error("invalid map parameter: {0}")]
    BadParameter(String),
    #[error("obstacle placement failed after {attempts} attempts ({placed}/{requested} placed)")]
    InfeasibleScene {
        attempts: usize,
        placed: usize,
        requested: usize,
    },
    #[error("path point {index} at {point:?} is occupied")]
    PathPointOccupied { index: usize, point: [f64; 3] },
    #[error("segment {index} bounding box intersects inflated obstacles or leaves the map")]
    SegmentBlocked { index: usize },
    #[error("path needs at least two points")]
    PathTooShort,
    #[error("malformed map file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Occupancy {
    Occupied,
    Free,
    Unknown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    origin: Vector3<f64>,
    resolution: f64,
    dims: [usize; 3],
    cells: Vec<bool>,
    chunk_dims: [usize; 3],
    chunk_counts: Vec<u32>,
}

impl OccupancyGrid {
    pub fn new(origin: Vector3<f64>, resolution: f64, dims: [usize; 3]) -> Result<Self, MapError> {
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(MapError::BadResolution(resolution));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(MapError::BadDims(dims));
        }
        let chunk_dims = [
            dims[0].div_ceil(CHUNK),
            dims[1].div_ceil(CHUNK),
            dims[2].div_ceil(CHUNK),
        ];
        Ok(Self {
            origin,
            resolution,
            dims,
            cells: vec![false; dims[0] * dims[1] * dims[2]],
            chunk_dims,
            chunk_counts: vec![0; chunk_dims[0] * chunk_dims[1] * chunk_dims[2]],
        })
    }

    /// Grid covering `[origin, origin + extent]` at the given resolution.
    pub fn with_extent(
        origin: Vector3<f64>,
        extent: Vector3<f64>,
        resolution: f64,
    ) -> Result<Self, MapError> {
        if !(resolution > 0.0) {
            return Err(MapError::BadResolution(resolution));
        }
        let dims = [
            (extent.x / resolution).round().max(0.0) as usize,
            (extent.y / resolution).round().max(0.0) as usize,
            (extent.z / resolution).round().max(0.0) as usize,
        ];
        Self::new(origin, resolution, dims)
    }

    pub fn origin(&self) -> Vector3<f64> {
        self.origin
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn max_corner(&self) -> Vector3<f64> {
        self.origin
            + Vector3::new(
                self.dims[0] as f64,
                self.dims[1] as f64,
                self.dims[2] as f64,
            ) * self.resolution
    }

    #[inline]
    fn linear(&self, idx: [usize; 3]) -> usize {
        idx[0] + self.dims[0] * (idx[1] + self.dims[1] * idx[2])
    }

    #[inline]
    fn chunk_linear(&self, idx: [usize; 3]) -> usize {
        let c = [idx[0] / CHUNK, idx[1] / CHUNK, idx[2] / CHUNK];
        c[0] + self.chunk_dims[0] * (c[1] + self.chunk_dims[1] * c[2])
    }

    /// Voxel index containing `p`, or `None` when out of bounds.
    pub fn index_of(&self, p: &Vector3<f64>) -> Option<[usize; 3]> {
        let g = (p - self.origin) / self.resolution;
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let f = g[a].floor();
            if !(f >= 0.0) || f >= self.dims[a] as f64 {
                return None;
            }
            idx[a] = f as usize;
        }
        Some(idx)
    }

    /// Bounds-checked lookup on signed indices.
    #[inline]
    pub fn occupied_at(&self, idx: [i64; 3]) -> Option<bool> {
        for a in 0..3 {
            if idx[a] < 0 || idx[a] >= self.dims[a] as i64 {
                return None;
            }
        }
        Some(self.cells[self.linear([idx[0] as usize, idx[1] as usize, idx[2] as usize])])
    }

    #[inline]
    pub fn is_occupied_index(&self, idx: [usize; 3]) -> bool {
        self.cells[self.linear(idx)]
    }

    pub fn set_occupied(&mut self, idx: [usize; 3], occupied: bool) {
        let li = self.linear(idx);
        if self.cells[li] == occupied {
            return;
        }
        self.cells[li] = occupied;
        let ci = self.chunk_linear(idx);
        if occupied {
            self.chunk_counts[ci] += 1;
        } else {
            self.chunk_counts[ci] -= 1;
        }
    }

    pub fn occupancy(&self, p: &Vector3<f64>) -> Occupancy {
        match self.index_of(p) {
            None => Occupancy::Unknown,
            Some(idx) if self.is_occupied_index(idx) => Occupancy::Occupied,
            Some(_) => Occupancy::Free,
        }
    }

    pub fn voxel_center(&self, idx: [usize; 3]) -> Vector3<f64> {
        self.origin
            + Vector3::new(
                idx[0] as f64 + 0.5,
                idx[1] as f64 + 0.5,
                idx[2] as f64 + 0.5,
            ) * self.resolution
    }

    pub fn occupied_count(&self) -> usize {
        self.chunk_counts.iter().map(|&c| c as usize).sum()
    }

    /// Linear indices of occupied voxels in ascending order.
    pub fn occupied_indices(&self) -> Vec<u64> {
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(i, &o)| o.then_some(i as u64))
            .collect()
    }

    pub fn unravel(&self, linear: usize) -> [usize; 3] {
        let x = linear % self.dims[0];
        let rest = linear / self.dims[0];
        [x, rest % self.dims[1], rest / self.dims[1]]
    }

    /// Calls `f` for every occupied voxel whose center lies within `radius` of
    /// `center`. Empty chunks are skipped wholesale.
    pub fn for_each_occupied_near<F: FnMut([usize; 3], Vector3<f64>)>(
        &self,
        center: &Vector3<f64>,
        radius: f64,
        mut f: F,
    ) {
        let lo = (center - Vector3::repeat(radius) - self.origin) / self.resolution;
        let hi = (center + Vector3::repeat(radius) - self.origin) / self.resolution;
        let mut lo_i = [0usize; 3];
        let mut hi_i = [0usize; 3];
        for a in 0..3 {
            let l = lo[a].floor().max(0.0);
            let h = hi[a].floor().min(self.dims[a] as f64 - 1.0);
            if h < l {
                return;
            }
            lo_i[a] = l as usize;
            hi_i[a] = h as usize;
        }
        let r2 = radius * radius;
        for cz in lo_i[2] / CHUNK..=hi_i[2] / CHUNK {
            for cy in lo_i[1] / CHUNK..=hi_i[1] / CHUNK {
                for cx in lo_i[0] / CHUNK..=hi_i[0] / CHUNK {
                    let ci = cx + self.chunk_dims[0] * (cy + self.chunk_dims[1] * cz);
                    if self.chunk_counts[ci] == 0 {
                        continue;
                    }
                    let z0 = (cz * CHUNK).max(lo_i[2]);
                    let z1 = ((cz + 1) * CHUNK - 1).min(hi_i[2]);
                    let y0 = (cy * CHUNK).max(lo_i[1]);
                    let y1 = ((cy + 1) * CHUNK - 1).min(hi_i[1]);
                    let x0 = (cx * CHUNK).max(lo_i[0]);
                    let x1 = ((cx + 1) * CHUNK - 1).min(hi_i[0]);
                    for z in z0..=z1 {
                        for y in y0..=y1 {
                            let row = self.dims[0] * (y + self.dims[1] * z);
                            for x in x0..=x1 {
                                if !self.cells[row + x] {
                                    continue;
                                }
                                let idx = [x, y, z];
                                let c = self.voxel_center(idx);
                                if (c - center).norm_squared() <= r2 {
                                    f(idx, c);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Dilates occupancy by `radius` meters. A voxel is marked when its box
    /// lies closer than `radius` to any occupied voxel box, so every point of
    /// a free voxel in the result keeps at least `radius` clearance.
    pub fn inflated(&self, radius: f64) -> OccupancyGrid {
        let mut out = self.clone();
        if radius <= 0.0 {
            return out;
        }
        let reach = (radius / self.resolution).ceil() as i64 + 1;
        let mut kernel = Vec::new();
        for dz in -reach..=reach {
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let gap = |d: i64| ((d.abs() - 1).max(0)) as f64;
                    let dist2 = (gap(dx).powi(2) + gap(dy).powi(2) + gap(dz).powi(2))
                        * self.resolution
                        * self.resolution;
                    if dist2 < radius * radius && (dx, dy, dz) != (0, 0, 0) {
                        kernel.push([dx, dy, dz]);
                    }
                }
            }
        }
        let dims = self.dims;
        for li in 0..self.cells.len() {
            if !self.cells[li] {
                continue;
            }
            let idx = self.unravel(li);
            let s = [idx[0] as i64, idx[1] as i64, idx[2] as i64];
            // interior voxels add nothing beyond what their surface neighbours add
            let surface = [
                [1, 0, 0],
                [-1, 0, 0],
                [0, 1, 0],
                [0, -1, 0],
                [0, 0, 1],
                [0, 0, -1],
            ]
            .iter()
            .any(|d: &[i64; 3]| {
                self.occupied_at([s[0] + d[0], s[1] + d[1], s[2] + d[2]]) != Some(true)
            });
            if !surface {
                continue;
            }
            for k in &kernel {
                let n = [s[0] + k[0], s[1] + k[1], s[2] + k[2]];
                if (0..3).all(|a| n[a] >= 0 && n[a] < dims[a] as i64) {
                    out.set_occupied([n[0] as usize, n[1] as usize, n[2] as usize], true);
                }
            }
        }
        out
    }
}
