use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MapError, OccupancyGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    /// Vertical cylinders ("trees").
    Forest,
    /// Axis-aligned slabs.
    Walls,
}

/// Region in the xy-plane kept free of obstacles: a capsule around segment
/// `a`-`b` (a disc when `a == b`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClearZone {
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub radius: f64,
}

impl ClearZone {
    pub fn disc(center: [f64; 2], radius: f64) -> Self {
        Self {
            a: center,
            b: center,
            radius,
        }
    }

    fn distance(&self, p: Vector2<f64>) -> f64 {
        let a = Vector2::from(self.a);
        let b = Vector2::from(self.b);
        let ab = b - a;
        let len2 = ab.norm_squared();
        let t = if len2 > 0.0 {
            ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (p - (a + ab * t)).norm()
    }

    /// Distance from the zone's spine to an axis-aligned rectangle.
    fn distance_to_rect(&self, lo: Vector2<f64>, hi: Vector2<f64>) -> f64 {
        let a = Vector2::from(self.a);
        let b = Vector2::from(self.b);
        let len = (b - a).norm();
        let steps = ((len / 0.02).ceil() as usize).max(1);
        (0..=steps)
            .map(|i| {
                let p = a + (b - a) * (i as f64 / steps as f64);
                let dx = (lo.x - p.x).max(0.0).max(p.x - hi.x);
                let dy = (lo.y - p.y).max(0.0).max(p.y - hi.y);
                (dx * dx + dy * dy).sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Slab geometry for the walls map. Defaults are invented: 3 m long, 0.3 m
/// thick, 4 m tall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WallParams {
    pub length: f64,
    pub thickness: f64,
    pub height: f64,
    /// Minimum footprint gap between two slabs.
    pub gap: f64,
}

impl Default for WallParams {
    fn default() -> Self {
        Self {
            length: 3.0,
            thickness: 0.3,
            height: 4.0,
            gap: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    pub kind: MapKind,
    pub seed: u64,
    /// Size in meters; the grid spans `[0, extent]`.
    pub extent: [f64; 3],
    /// Obstacles per square meter of ground area.
    pub density: f64,
    #[serde(default = "default_resolution")]
    pub resolution: f64,
    #[serde(default)]
    pub clear_zones: Vec<ClearZone>,
    #[serde(default = "default_tree_height")]
    pub tree_height: f64,
    #[serde(default = "default_tree_diameter")]
    pub tree_diameter: f64,
    #[serde(default)]
    pub walls: WallParams,
    #[serde(default = "default_attempts")]
    pub max_attempts: usize,
}

fn default_resolution() -> f64 {
    0.1
}
fn default_tree_height() -> f64 {
    4.0
}
fn default_tree_diameter() -> f64 {
    1.0
}
fn default_attempts() -> usize {
    1000
}

impl MapSpec {
    pub fn new(kind: MapKind, seed: u64, extent: [f64; 3], density: f64) -> Self {
        Self {
            kind,
            seed,
            extent,
            density,
            resolution: default_resolution(),
            clear_zones: Vec::new(),
            tree_height: default_tree_height(),
            tree_diameter: default_tree_diameter(),
            walls: WallParams::default(),
            max_attempts: default_attempts(),
        }
    }

    pub fn obstacle_count(&self) -> usize {
        (self.extent[0] * self.extent[1] * self.density).floor() as usize
    }
}

/// Procedurally generates a map. Same spec, same voxels.
pub fn generate_map(spec: &MapSpec) -> Result<OccupancyGrid, MapError> {
    if spec.density < 0.0 || !spec.density.is_finite() {
        return Err(MapError::BadParameter(format!(
            "density must be >= 0, got {}",
            spec.density
        )));
    }
    if spec.extent.iter().any(|&e| !(e > 0.0)) {
        return Err(MapError::BadParameter(format!(
            "extent must be positive, got {:?}",
            spec.extent
        )));
    }
    let mut grid = OccupancyGrid::with_extent(
        Vector3::zeros(),
        Vector3::from(spec.extent),
        spec.resolution,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let count = spec.obstacle_count();
    match spec.kind {
        MapKind::Forest => place_trees(&mut grid, spec, count, &mut rng)?,
        MapKind::Walls => place_walls(&mut grid, spec, count, &mut rng)?,
    }
    Ok(grid)
}

fn place_trees(
    grid: &mut OccupancyGrid,
    spec: &MapSpec,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(), MapError> {
    let radius = spec.tree_diameter / 2.0;
    let (ex, ey) = (spec.extent[0], spec.extent[1]);
    if ex <= 2.0 * radius || ey <= 2.0 * radius {
        return Err(MapError::BadParameter("extent smaller than a tree".into()));
    }
    let mut centers: Vec<Vector2<f64>> = Vec::with_capacity(count);
    let mut attempts = 0;
    while centers.len() < count {
        if attempts >= spec.max_attempts * count.max(1) {
            return Err(MapError::InfeasibleScene {
                attempts,
                placed: centers.len(),
                requested: count,
            });
        }
        attempts += 1;
        let c = Vector2::new(
            rng.random_range(radius..ex - radius),
            rng.random_range(radius..ey - radius),
        );
        if spec
            .clear_zones
            .iter()
            .any(|z| z.distance(c) < z.radius + radius)
        {
            continue;
        }
        if centers.iter().any(|o| (o - c).norm() < spec.tree_diameter) {
            continue;
        }
        centers.push(c);
    }
    let res = grid.resolution();
    let dims = grid.dims();
    let top = ((spec.tree_height / res).round() as usize).min(dims[2]);
    for c in &centers {
        let x0 = (((c.x - radius) / res).floor().max(0.0)) as usize;
        let x1 = (((c.x + radius) / res).ceil() as usize).min(dims[0]);
        let y0 = (((c.y - radius) / res).floor().max(0.0)) as usize;
        let y1 = (((c.y + radius) / res).ceil() as usize).min(dims[1]);
        for y in y0..y1 {
            for x in x0..x1 {
                let vc = Vector2::new((x as f64 + 0.5) * res, (y as f64 + 0.5) * res);
                if (vc - c).norm() <= radius {
                    for z in 0..top {
                        grid.set_occupied([x, y, z], true);
                    }
                }
            }
        }
    }
    Ok(())
}

fn place_walls(
    grid: &mut OccupancyGrid,
    spec: &MapSpec,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(), MapError> {
    let w = spec.walls;
    let (ex, ey) = (spec.extent[0], spec.extent[1]);
    if ex <= w.length || ey <= w.length {
        return Err(MapError::BadParameter("extent smaller than a wall".into()));
    }
    let mut rects: Vec<(Vector2<f64>, Vector2<f64>)> = Vec::with_capacity(count);
    let mut attempts = 0;
    while rects.len() < count {
        if attempts >= spec.max_attempts * count.max(1) {
            return Err(MapError::InfeasibleScene {
                attempts,
                placed: rects.len(),
                requested: count,
            });
        }
        attempts += 1;
        let along_x: bool = rng.random_bool(0.5);
        let half = if along_x {
            Vector2::new(w.length / 2.0, w.thickness / 2.0)
        } else {
            Vector2::new(w.thickness / 2.0, w.length / 2.0)
        };
        let c = Vector2::new(
            rng.random_range(half.x..ex - half.x),
            rng.random_range(half.y..ey - half.y),
        );
        let (lo, hi) = (c - half, c + half);
        if spec
            .clear_zones
            .iter()
            .any(|z| z.distance_to_rect(lo, hi) < z.radius)
        {
            continue;
        }
        let g = w.gap;
        if rects
            .iter()
            .any(|(l, h)| lo.x < h.x + g && hi.x > l.x - g && lo.y < h.y + g && hi.y > l.y - g)
        {
            continue;
        }
        rects.push((lo, hi));
    }
    let res = grid.resolution();
    let dims = grid.dims();
    let top = ((w.height / res).round() as usize).min(dims[2]);
    for (lo, hi) in &rects {
        let x0 = (lo.x / res).round().max(0.0) as usize;
        let x1 = (x0 + ((hi.x - lo.x) / res).round() as usize).min(dims[0]);
        let y0 = (lo.y / res).round().max(0.0) as usize;
        let y1 = (y0 + ((hi.y - lo.y) / res).round() as usize).min(dims[1]);
        for z in 0..top {
            for y in y0..y1 {
                for x in x0..x1 {
                    grid.set_occupied([x, y, z], true);
                }
            }
        }
    }
    Ok(())
}
