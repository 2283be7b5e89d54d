use nalgebra::Vector3;

use super::OccupancyGrid;

/// Walks the voxels pierced by segment `a`-`b` in traversal order
/// (Amanatides-Woo stepping). `visit` returns `false` to stop early.
/// Indices may lie outside the grid when the segment does.
pub fn visit_segment_voxels<F: FnMut([i64; 3]) -> bool>(
    grid: &OccupancyGrid,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    mut visit: F,
) {
    let ga = (a - grid.origin()) / grid.resolution();
    let gb = (b - grid.origin()) / grid.resolution();
    let d = gb - ga;
    let mut cell = [
        ga.x.floor() as i64,
        ga.y.floor() as i64,
        ga.z.floor() as i64,
    ];
    let end = [
        gb.x.floor() as i64,
        gb.y.floor() as i64,
        gb.z.floor() as i64,
    ];
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for k in 0..3 {
        if d[k] > 0.0 {
            step[k] = 1;
            t_max[k] = ((cell[k] + 1) as f64 - ga[k]) / d[k];
            t_delta[k] = 1.0 / d[k];
        } else if d[k] < 0.0 {
            step[k] = -1;
            t_max[k] = (cell[k] as f64 - ga[k]) / d[k];
            t_delta[k] = -1.0 / d[k];
        }
    }
    let budget: i64 = (0..3).map(|k| (end[k] - cell[k]).abs()).sum::<i64>() + 3;
    for _ in 0..=budget {
        if !visit(cell) || cell == end {
            return;
        }
        let k = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        if t_max[k] > 1.0 {
            return;
        }
        cell[k] += step[k];
        t_max[k] += t_delta[k];
    }
}

/// Slack in grid units so that exact face contact survives round-off.
const TOUCH_EPS: f64 = 1e-9;

/// Closed segment against the closed unit box at `cell`, in grid units.
#[inline]
fn segment_touches_cell(ga: &Vector3<f64>, d: &Vector3<f64>, cell: [i64; 3]) -> bool {
    let mut t0: f64 = 0.0;
    let mut t1: f64 = 1.0;
    for k in 0..3 {
        let lo = cell[k] as f64 - TOUCH_EPS;
        let hi = cell[k] as f64 + 1.0 + TOUCH_EPS;
        if d[k] == 0.0 {
            if ga[k] < lo || ga[k] > hi {
                return false;
            }
        } else {
            let ta = (lo - ga[k]) / d[k];
            let tb = (hi - ga[k]) / d[k];
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
            if t0 > t1 {
                return false;
            }
        }
    }
    true
}

/// True iff no occupied voxel touches the closed segment `a`-`b`.
///
/// Tie rule: a segment running exactly along a voxel face, edge, or corner
/// touches every voxel sharing it, so all of them are checked. Cells outside
/// the grid never block.
pub fn line_of_sight_clear(grid: &OccupancyGrid, a: &Vector3<f64>, b: &Vector3<f64>) -> bool {
    let ga = (a - grid.origin()) / grid.resolution();
    let d = (b - grid.origin()) / grid.resolution() - ga;
    let mut clear = true;
    visit_segment_voxels(grid, a, b, |c| {
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let n = [c[0] + dx, c[1] + dy, c[2] + dz];
                    if grid.occupied_at(n) == Some(true) && segment_touches_cell(&ga, &d, n) {
                        clear = false;
                        return false;
                    }
                }
            }
        }
        true
    });
    clear
}
