use nalgebra::Vector3;

use super::{to_spherical, SphericalGridSpec};
use crate::worldmap::OccupancyGrid;

/// First occluded shell per direction, plus the per-shell lists of
/// directions that become visible there when walking inward.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityMap {
    pub spec: SphericalGridSpec,
    /// `k_min[i * N_φ + j]`; `N_r` when the direction is never blocked.
    pub k_min: Vec<u32>,
    /// `newly_visible[k]` holds directions visible on shell `k` but not on
    /// `k + 1`; never-blocked directions sit in the outermost entry.
    pub newly_visible: Vec<Vec<u32>>,
}

impl VisibilityMap {
    /// Builds the map from occupied voxels within `r_max` of the spec origin.
    /// Occluded directions are dilated by `inflation` cells (Chebyshev, with
    /// azimuth wraparound) before the shell lists are formed.
    pub fn from_grid(grid: &OccupancyGrid, spec: &SphericalGridSpec, inflation: usize) -> Self {
        let n_r = spec.n_r as u32;
        let mut raw = vec![n_r; spec.directions()];
        let res = grid.resolution();
        let reach = spec.r_max + res;
        let (dt, dp) = (spec.d_theta(), spec.d_phi());
        let mut mark = |p: &Vector3<f64>| {
            let Some((theta, phi, r)) = to_spherical(p, &spec.origin) else {
                return;
            };
            let k = (r / spec.dr).round() as u32;
            if k >= n_r {
                return;
            }
            let i = ((theta / dt) as usize).min(spec.n_theta - 1);
            let j = ((phi / dp).round() as usize) % spec.n_phi;
            let c = &mut raw[i * spec.n_phi + j];
            *c = (*c).min(k);
        };
        grid.for_each_occupied_near(&spec.origin, reach, |_, center| {
            let r = (center - spec.origin).norm();
            // a voxel near the target spans several angular cells
            let n = if r > 0.0 {
                ((res / (r * spec.dang)).ceil() as usize).clamp(1, 8)
            } else {
                1
            };
            if n == 1 {
                mark(&center);
                return;
            }
            let h = res / n as f64;
            for a in 0..n {
                for b in 0..n {
                    for c in 0..n {
                        let off = Vector3::new(a as f64 + 0.5, b as f64 + 0.5, c as f64 + 0.5) * h
                            - Vector3::repeat(res / 2.0);
                        mark(&(center + off));
                    }
                }
            }
        });
        Self::from_k_min(spec, dilate(spec, &raw, inflation))
    }

    /// Builds the shell lists from an explicit first-blocked-shell array.
    pub fn from_k_min(spec: &SphericalGridSpec, k_min: Vec<u32>) -> Self {
        assert_eq!(k_min.len(), spec.directions());
        let mut newly_visible = vec![Vec::new(); spec.n_r];
        for (dir, &k) in k_min.iter().enumerate() {
            debug_assert!(k as usize <= spec.n_r);
            if k > 0 {
                newly_visible[k as usize - 1].push(dir as u32);
            }
        }
        Self {
            spec: *spec,
            k_min,
            newly_visible,
        }
    }

    #[inline]
    pub fn is_visible(&self, dir: usize, k: usize) -> bool {
        (k as u32) < self.k_min[dir]
    }

    /// Visibility slice of shell `k`.
    pub fn layer(&self, k: usize) -> Vec<bool> {
        self.k_min.iter().map(|&m| (k as u32) < m).collect()
    }
}

fn dilate(spec: &SphericalGridSpec, raw: &[u32], cells: usize) -> Vec<u32> {
    if cells == 0 {
        return raw.to_vec();
    }
    let (nt, np) = (spec.n_theta, spec.n_phi);
    let c = cells as i64;
    let mut out = raw.to_vec();
    for i in 0..nt {
        for j in 0..np {
            let mut best = raw[i * np + j];
            for di in -c..=c {
                let m = i as i64 + di;
                if m < 0 || m >= nt as i64 {
                    continue;
                }
                for dj in -c..=c {
                    let n = (j as i64 + dj).rem_euclid(np as i64) as usize;
                    best = best.min(raw[m as usize * np + n]);
                }
            }
            out[i * np + j] = best;
        }
    }
    out
}
