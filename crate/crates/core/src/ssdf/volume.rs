use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{Read, Write};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::transform::{cos_to_field, transform_into, Scratch};
use super::{to_spherical, SphericalGridSpec, SsdfConfig, SsdfError, VisibilityMap, NO_BOUNDARY};
use crate::worldmap::OccupancyGrid;

/// Truncated spherical signed distance field over a full `(θ, φ, r)` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SsdfVolume {
    pub spec: SphericalGridSpec,
    /// Layout `k * N_θ N_φ + i * N_φ + j`; values in `[-π, 0]`.
    pub d: Vec<f64>,
    /// Nearest visible direction on the same shell, or [`NO_BOUNDARY`].
    pub b: Vec<u32>,
    pub stamp: f64,
}

/// Wavefront entry, nearest to its source first.
struct Wave {
    cos: f64,
    cell: usize,
    source: u32,
}

impl PartialEq for Wave {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Wave {}

impl PartialOrd for Wave {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Wave {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cos
            .total_cmp(&other.cos)
            .then(other.cell.cmp(&self.cell))
            .then(other.source.cmp(&self.source))
    }
}

#[derive(Serialize, Deserialize)]
struct DumpHeader {
    spec: SphericalGridSpec,
    stamp: f64,
    cells: usize,
}

impl SsdfVolume {
    /// Outermost shell by the two-pass transform, then each inner shell by
    /// breadth-first insertion of its newly visible directions.
    pub fn build_incremental(vmap: &VisibilityMap, stamp: f64) -> Self {
        let spec = vmap.spec;
        let tables = spec.tables();
        let nd = spec.directions();
        let (np, nt) = (spec.n_phi, spec.n_theta);
        let mut d = vec![0.0; spec.cells()];
        let mut b = vec![0u32; spec.cells()];
        let mut cos = vec![0.0; nd];
        let mut bnd = vec![0u32; nd];

        let top = spec.n_r - 1;
        let visible = vmap.layer(top);
        let mut scratch = Scratch::new(&tables);
        transform_into(&tables, &visible, &mut scratch, &mut cos, &mut bnd);
        {
            let off = top * nd;
            for c in 0..nd {
                d[off + c] = cos_to_field(cos[c], visible[c], bnd[c]);
            }
            b[off..off + nd].copy_from_slice(&bnd);
        }

        let mut queue: BinaryHeap<Wave> = BinaryHeap::new();
        let mut touched = Vec::new();
        let mut dirty = vec![false; nd];
        let mut expanded_by = vec![NO_BOUNDARY; nd];
        let mut reached = Vec::new();
        for k in (0..top).rev() {
            let (below, above) = d.split_at_mut((k + 1) * nd);
            below[k * nd..].copy_from_slice(&above[..nd]);
            for &u in &vmap.newly_visible[k] {
                let u = u as usize;
                cos[u] = 1.0;
                bnd[u] = u as u32;
                queue.push(Wave {
                    cos: 1.0,
                    cell: u,
                    source: u as u32,
                });
                if !dirty[u] {
                    dirty[u] = true;
                    touched.push(u);
                }
            }
            // Each source floods the cells it wins, nearest first.
            while let Some(Wave {
                cos: here,
                cell: c,
                source,
            }) = queue.pop()
            {
                if expanded_by[c] == source {
                    continue;
                }
                expanded_by[c] = source;
                reached.push(c);
                let (i, j) = (c / np, c % np);
                for di in [-1i64, 0, 1] {
                    let m = i as i64 + di;
                    if m < 0 || m >= nt as i64 {
                        continue;
                    }
                    for dj in [np - 1, 0, 1] {
                        if di == 0 && dj == 0 {
                            continue;
                        }
                        let n = m as usize * np + (j + dj) % np;
                        if expanded_by[n] == source {
                            continue;
                        }
                        let cand = tables.cos_between(source, n as u32);
                        if cand >= here {
                            continue;
                        }
                        if cand > cos[n] {
                            cos[n] = cand;
                            bnd[n] = source;
                            queue.push(Wave {
                                cos: cand,
                                cell: n,
                                source,
                            });
                            if !dirty[n] {
                                dirty[n] = true;
                                touched.push(n);
                            }
                        }
                    }
                }
            }
            for c in reached.drain(..) {
                expanded_by[c] = NO_BOUNDARY;
            }
            let off = k * nd;
            for &c in &touched {
                d[off + c] = if bnd[c] == c as u32 {
                    0.0
                } else {
                    cos_to_field(cos[c], false, bnd[c])
                };
                dirty[c] = false;
            }
            touched.clear();
            b[off..off + nd].copy_from_slice(&bnd);
        }
        Self { spec, d, b, stamp }
    }

    /// Independent two-pass transform on every shell.
    pub fn build_bruteforce(vmap: &VisibilityMap, stamp: f64) -> Self {
        let spec = vmap.spec;
        let tables = spec.tables();
        let nd = spec.directions();
        let mut d = vec![0.0; spec.cells()];
        let mut b = vec![0u32; spec.cells()];
        let mut cos = vec![0.0; nd];
        let mut scratch = Scratch::new(&tables);
        for k in 0..spec.n_r {
            let visible = vmap.layer(k);
            let off = k * nd;
            transform_into(
                &tables,
                &visible,
                &mut scratch,
                &mut cos,
                &mut b[off..off + nd],
            );
            for c in 0..nd {
                d[off + c] = cos_to_field(cos[c], visible[c], b[off + c]);
            }
        }
        Self { spec, d, b, stamp }
    }

    #[inline]
    pub fn value_at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.d[k * self.spec.directions() + i * self.spec.n_phi + j]
    }

    /// Continuous lattice coordinates of `p` and their Cartesian Jacobian
    /// rows (zero where clamped or singular).
    fn lattice(&self, p: &Vector3<f64>) -> Option<([f64; 3], [Vector3<f64>; 3])> {
        let s = &self.spec;
        let (theta, phi, r) = to_spherical(p, &s.origin)?;
        let (dt, dp) = (s.d_theta(), s.d_phi());
        let mut a = theta / dt - 0.5;
        let mut c = r / s.dr;
        let bb = phi / dp;
        let (st, ct, sp, cp) = (theta.sin(), theta.cos(), phi.sin(), phi.cos());
        let mut ja = Vector3::new(ct * cp, ct * sp, -st) / (r * dt);
        let mut jc = (p - s.origin) / (r * s.dr);
        let jb = if st > 1e-12 {
            Vector3::new(-sp, cp, 0.0) / (r * st * dp)
        } else {
            Vector3::zeros()
        };
        let amax = (s.n_theta - 1) as f64;
        if a <= 0.0 || a >= amax {
            a = a.clamp(0.0, amax);
            ja = Vector3::zeros();
        }
        let cmax = (s.n_r - 1) as f64;
        if c >= cmax {
            c = cmax;
            jc = Vector3::zeros();
        }
        Some(([a, bb, c], [ja, jb, jc]))
    }

    /// Trilinear interpolation with azimuth wraparound; zero at the origin.
    pub fn query(&self, p: &Vector3<f64>) -> f64 {
        self.query_with_gradient(p).0
    }

    /// Cartesian gradient of [`SsdfVolume::query`]; zero at the origin and on
    /// the polar axis.
    pub fn gradient(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.query_with_gradient(p).1
    }

    pub fn query_with_gradient(&self, p: &Vector3<f64>) -> (f64, Vector3<f64>) {
        let Some(([a, bb, c], [ja, jb, jc])) = self.lattice(p) else {
            return (0.0, Vector3::zeros());
        };
        let s = &self.spec;
        let i0 = (a.floor() as usize).min(s.n_theta - 2);
        let k0 = (c.floor() as usize).min(s.n_r - 2);
        let jf = bb.floor();
        let j0 = (jf as usize) % s.n_phi;
        let j1 = (j0 + 1) % s.n_phi;
        let (fa, fb, fc) = (a - i0 as f64, bb - jf, c - k0 as f64);
        let v = |di: usize, j: usize, dk: usize| self.value_at(i0 + di, j, k0 + dk);
        let mut val = 0.0;
        let mut g = [0.0; 3];
        for di in 0..2 {
            let wa = if di == 0 { 1.0 - fa } else { fa };
            let sa = if di == 0 { -1.0 } else { 1.0 };
            for (dj, j) in [(0usize, j0), (1, j1)] {
                let wb = if dj == 0 { 1.0 - fb } else { fb };
                let sb = if dj == 0 { -1.0 } else { 1.0 };
                for dk in 0..2 {
                    let wc = if dk == 0 { 1.0 - fc } else { fc };
                    let sc = if dk == 0 { -1.0 } else { 1.0 };
                    let x = v(di, j, dk);
                    val += wa * wb * wc * x;
                    g[0] += sa * wb * wc * x;
                    g[1] += wa * sb * wc * x;
                    g[2] += wa * wb * sc * x;
                }
            }
        }
        let grad = ja * g[0] + jb * g[1] + jc * g[2];
        if jb == Vector3::zeros() {
            // on the polar axis the azimuth is undefined
            return (val, Vector3::zeros());
        }
        (val, grad)
    }

    /// Debug dump: one JSON header line, then `d` as little-endian f64.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = DumpHeader {
            spec: self.spec,
            stamp: self.stamp,
            cells: self.d.len(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for v in &self.d {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a dump written by [`SsdfVolume::write_dump`]; boundaries are not
    /// stored and come back as [`NO_BOUNDARY`].
    pub fn read_dump<R: Read>(mut r: R) -> Result<Self, SsdfError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| SsdfError::Format(e.to_string()))?;
        let nl = bytes
            .iter()
            .position(|&c| c == b'\n')
            .ok_or_else(|| SsdfError::Format("missing header line".into()))?;
        let header: DumpHeader =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| SsdfError::Format(e.to_string()))?;
        let body = &bytes[nl + 1..];
        if body.len() != header.cells * 8 || header.cells != header.spec.cells() {
            return Err(SsdfError::Format("payload size mismatch".into()));
        }
        let d = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
            .collect();
        Ok(Self {
            spec: header.spec,
            d,
            b: vec![NO_BOUNDARY; header.cells],
            stamp: header.stamp,
        })
    }
}

/// Builds one volume per prediction point, in parallel.
pub fn build_volumes(
    grid: &OccupancyGrid,
    points: &[(f64, Vector3<f64>)],
    cfg: &SsdfConfig,
) -> Result<Vec<SsdfVolume>, SsdfError> {
    points
        .par_iter()
        .map(|&(stamp, origin)| {
            let spec = SphericalGridSpec::from_config(origin, cfg)?;
            let vmap = VisibilityMap::from_grid(grid, &spec, cfg.inflation);
            Ok(SsdfVolume::build_incremental(&vmap, stamp))
        })
        .collect()
}
