//! Bundled occlusion scenes and the incremental-vs-brute-force benchmark.

use std::time::Instant;

use nalgebra::Vector3;
use serde::Serialize;

use super::{SphericalGridSpec, SsdfConfig, SsdfVolume, VisibilityMap};
use crate::worldmap::OccupancyGrid;

pub struct BenchScene {
    pub name: &'static str,
    pub grid: OccupancyGrid,
    /// Target point, the field origin.
    pub target: Vector3<f64>,
}

fn cylinder(g: &mut OccupancyGrid, cx: f64, cy: f64, radius: f64, z0: f64, z1: f64) {
    let [nx, ny, nz] = g.dims();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let c = g.voxel_center([x, y, z]);
                if c.z >= z0 && c.z <= z1 && (c.x - cx).hypot(c.y - cy) <= radius {
                    g.set_occupied([x, y, z], true);
                }
            }
        }
    }
}

fn slab(g: &mut OccupancyGrid, lo: [f64; 3], hi: [f64; 3]) {
    let [nx, ny, nz] = g.dims();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let c = g.voxel_center([x, y, z]);
                if (0..3).all(|a| c[a] >= lo[a] && c[a] <= hi[a]) {
                    g.set_occupied([x, y, z], true);
                }
            }
        }
    }
}

/// Three scenes of increasing clutter around a target at the origin.
pub fn bundled_scenes() -> Vec<BenchScene> {
    let blank =
        || OccupancyGrid::new(Vector3::repeat(-6.0), 0.1, [120, 120, 120]).expect("valid grid");
    let trees = [
        (1.8, 0.4),
        (-1.2, 2.1),
        (0.3, -2.6),
        (-2.9, -1.1),
        (3.1, 2.7),
        (-0.6, 3.6),
        (2.4, -2.2),
        (-3.4, 1.9),
        (4.0, -0.5),
        (-1.9, -3.5),
        (1.0, 4.2),
        (-4.2, -0.2),
    ];

    let mut s1 = blank();
    for &(x, y) in &trees[..3] {
        cylinder(&mut s1, x, y, 0.5, -6.0, 2.0);
    }

    let mut s2 = blank();
    for &(x, y) in &trees[..6] {
        cylinder(&mut s2, x, y, 0.5, -6.0, 2.0);
    }
    slab(&mut s2, [2.5, -1.5, -6.0], [2.8, 1.5, 1.5]);

    let mut s3 = blank();
    for &(x, y) in &trees {
        cylinder(&mut s3, x, y, 0.5, -6.0, 2.0);
    }
    slab(&mut s3, [2.5, -1.5, -6.0], [2.8, 1.5, 1.5]);
    slab(&mut s3, [-1.5, -2.0, -6.0], [1.5, -1.7, 1.0]);
    slab(&mut s3, [-1.0, -1.0, 1.8], [1.0, 1.0, 2.0]);

    vec![
        BenchScene {
            name: "scene1",
            grid: s1,
            target: Vector3::zeros(),
        },
        BenchScene {
            name: "scene2",
            grid: s2,
            target: Vector3::zeros(),
        },
        BenchScene {
            name: "scene3",
            grid: s3,
            target: Vector3::zeros(),
        },
    ]
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub scene: String,
    pub method: String,
    pub time_ms: f64,
    pub cum_error_rad: f64,
}

/// Times both builders on one scene (mean of `reps` runs after one warm-up,
/// visibility map shared) and reports the incremental field's cumulative deviation from the
/// brute-force one.
pub fn bench_scene(scene: &BenchScene, cfg: &SsdfConfig, reps: usize) -> [BenchRow; 2] {
    let spec = SphericalGridSpec::from_config(scene.target, cfg).expect("valid config");
    let vmap = VisibilityMap::from_grid(&scene.grid, &spec, cfg.inflation);

    let (inc, t_inc) = mean_of(reps, || SsdfVolume::build_incremental(&vmap, 0.0));
    let (bf, t_bf) = mean_of(reps, || SsdfVolume::build_bruteforce(&vmap, 0.0));
    let cum: f64 = inc.d.iter().zip(&bf.d).map(|(a, b)| (a - b).abs()).sum();
    [
        BenchRow {
            scene: scene.name.into(),
            method: "incremental".into(),
            time_ms: t_inc,
            cum_error_rad: cum,
        },
        BenchRow {
            scene: scene.name.into(),
            method: "bruteforce".into(),
            time_ms: t_bf,
            cum_error_rad: 0.0,
        },
    ]
}

fn mean_of<T>(reps: usize, mut f: impl FnMut() -> T) -> (T, f64) {
    let reps = reps.max(1);
    let mut out = std::hint::black_box(f());
    let start = Instant::now();
    for _ in 0..reps {
        out = std::hint::black_box(f());
    }
    (out, start.elapsed().as_secs_f64() * 1e3 / reps as f64)
}
