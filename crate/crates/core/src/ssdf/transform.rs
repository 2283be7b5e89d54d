use std::f64::consts::PI;

use super::{SphericalGridSpec, Tables, NO_BOUNDARY};

/// Truncated signed distance on one shell.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerField {
    /// `0` on visible directions, `-angle` to the nearest visible one
    /// elsewhere, `-π` everywhere when nothing is visible.
    pub d: Vec<f64>,
    /// Flattened index `i * N_φ + j` of the nearest visible direction.
    pub b: Vec<u32>,
}

/// Exact two-pass transform of a visibility slice (`visible[i * N_φ + j]`).
pub fn distance_transform_2d(spec: &SphericalGridSpec, visible: &[bool]) -> LayerField {
    assert_eq!(visible.len(), spec.directions(), "layer size mismatch");
    let tables = spec.tables();
    let mut scratch = Scratch::new(&tables);
    let mut cos = vec![0.0; visible.len()];
    let mut b = vec![0; visible.len()];
    transform_into(&tables, visible, &mut scratch, &mut cos, &mut b);
    let d = cos
        .iter()
        .zip(visible)
        .zip(&b)
        .map(|((&c, &v), &bb)| cos_to_field(c, v, bb))
        .collect();
    LayerField { d, b }
}

#[inline]
pub(crate) fn cos_to_field(c: f64, visible: bool, boundary: u32) -> f64 {
    if visible {
        0.0
    } else if boundary == NO_BOUNDARY {
        -PI
    } else {
        -c.clamp(-1.0, 1.0).acos()
    }
}

/// Reusable buffers for [`transform_into`].
pub(crate) struct Scratch {
    nearest_col: Vec<u32>,
    back: Vec<usize>,
    stack_row: Vec<usize>,
    stack_z: Vec<f64>,
    theta: Vec<f64>,
}

impl Scratch {
    pub fn new(t: &Tables) -> Self {
        Self {
            nearest_col: vec![NO_BOUNDARY; t.n_theta * t.n_phi],
            back: vec![0; t.n_phi],
            stack_row: Vec::with_capacity(t.n_theta + 1),
            stack_z: Vec::with_capacity(t.n_theta + 2),
            theta: (0..t.n_theta)
                .map(|i| (i as f64 + 0.5) * PI / t.n_theta as f64)
                .collect(),
        }
    }
}

#[inline]
fn theta_from_pqr(p: f64, q: f64, r: f64) -> f64 {
    if p == q {
        return PI / 2.0;
    }
    let ratio = r / (p - q);
    if ratio >= 0.0 {
        ratio.atan()
    } else {
        ratio.atan() + PI
    }
}

/// Core transform: writes the cosine of the distance to the nearest visible
/// direction (1 on visible cells) and its index.
pub(crate) fn transform_into(
    t: &Tables,
    visible: &[bool],
    s: &mut Scratch,
    cos_out: &mut [f64],
    b_out: &mut [u32],
) {
    let (nt, np) = (t.n_theta, t.n_phi);

    // Phase 1: nearest visible column on each latitude, circularly. On a
    // fixed latitude the angle grows with the circular index gap, so index
    // distance decides exactly.
    for i in 0..nt {
        let row = &visible[i * np..(i + 1) * np];
        let out = &mut s.nearest_col[i * np..(i + 1) * np];
        let Some(first) = row.iter().position(|&v| v) else {
            out.fill(NO_BOUNDARY);
            continue;
        };
        // forward lap over the doubled range, starting at a visible column
        let mut last = first;
        let back = &mut s.back;
        for step in 0..np {
            let j = (first + step) % np;
            if row[j] {
                last = j;
            }
            back[j] = last;
        }
        let mut next = first;
        for step in 0..np {
            let j = (first + np - step) % np;
            if row[j] {
                next = j;
            }
            let gap_back = (j + np - back[j]) % np;
            let gap_fwd = (next + np - j) % np;
            out[j] = if gap_back <= gap_fwd { back[j] } else { next } as u32;
        }
    }

    // Phase 2: lower envelope along each meridian over the per-row
    // candidates, ordered by polar angle.
    for j in 0..np {
        s.stack_row.clear();
        s.stack_z.clear();
        s.stack_z.push(f64::NEG_INFINITY);
        for i in 0..nt {
            let col = s.nearest_col[i * np + j];
            if col == NO_BOUNDARY {
                continue;
            }
            let p_new = t.sin_t[i] * t.cos_dp[(col as usize).abs_diff(j)];
            loop {
                let Some(&top) = s.stack_row.last() else {
                    s.stack_row.push(i);
                    break;
                };
                let col_top = s.nearest_col[top * np + j];
                let p_top = t.sin_t[top] * t.cos_dp[(col_top as usize).abs_diff(j)];
                let h = theta_from_pqr(p_top, p_new, t.cos_t[i] - t.cos_t[top]);
                if h <= *s.stack_z.last().expect("sentinel present") {
                    s.stack_row.pop();
                    s.stack_z.pop();
                    if s.stack_row.is_empty() {
                        s.stack_z.push(f64::NEG_INFINITY);
                    }
                } else {
                    s.stack_row.push(i);
                    s.stack_z.push(h);
                    break;
                }
            }
        }
        let mut n = 0;
        for i in 0..nt {
            let cell = i * np + j;
            if visible[cell] {
                cos_out[cell] = 1.0;
                b_out[cell] = cell as u32;
                continue;
            }
            if s.stack_row.is_empty() {
                cos_out[cell] = f64::NEG_INFINITY;
                b_out[cell] = NO_BOUNDARY;
                continue;
            }
            while n + 1 < s.stack_row.len() && s.stack_z[n + 1] < s.theta[i] {
                n += 1;
            }
            let row = s.stack_row[n];
            let bnd = (row * np) as u32 + s.nearest_col[row * np + j];
            b_out[cell] = bnd;
            cos_out[cell] = t.cos_between(bnd, cell as u32);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// O(N²) reference straight from the definition.
    fn brute(spec: &SphericalGridSpec, visible: &[bool]) -> Vec<f64> {
        let dirs: Vec<(f64, f64)> = (0..spec.directions())
            .map(|c| (spec.theta_at(c / spec.n_phi), spec.phi_at(c % spec.n_phi)))
            .collect();
        (0..visible.len())
            .map(|v| {
                if visible[v] {
                    return 0.0;
                }
                let best = (0..visible.len())
                    .filter(|&u| visible[u])
                    .map(|u| crate::ssdf::angular_distance(dirs[u], dirs[v]))
                    .fold(f64::INFINITY, f64::min);
                if best.is_finite() {
                    -best
                } else {
                    -PI
                }
            })
            .collect()
    }

    fn random_layer(spec: &SphericalGridSpec, rng: &mut ChaCha8Rng) -> Vec<bool> {
        // blobs of occlusion on a visible background, plus sparse noise
        let mut v = vec![true; spec.directions()];
        let blobs = rng.random_range(0..6);
        for _ in 0..blobs {
            let (ci, cj) = (
                rng.random_range(0..spec.n_theta),
                rng.random_range(0..spec.n_phi),
            );
            let (ri, rj) = (
                rng.random_range(0..spec.n_theta / 2 + 1),
                rng.random_range(0..spec.n_phi / 2 + 1),
            );
            for i in ci.saturating_sub(ri)..(ci + ri + 1).min(spec.n_theta) {
                for dj in 0..=2 * rj {
                    let j = (cj + spec.n_phi + dj - rj) % spec.n_phi;
                    v[i * spec.n_phi + j] = false;
                }
            }
        }
        let p_flip = rng.random_range(0.0..0.3);
        for c in v.iter_mut() {
            if rng.random_bool(p_flip) {
                *c = !*c;
            }
        }
        v
    }

    fn check_exact(dang: f64, seeds: u64) {
        let spec = SphericalGridSpec::new(Vector3::zeros(), 1.0, 0.5, dang).unwrap();
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let layer = random_layer(&spec, &mut rng);
            let got = distance_transform_2d(&spec, &layer);
            let want = brute(&spec, &layer);
            for (c, (&g, &w)) in got.d.iter().zip(&want).enumerate() {
                assert!((g - w).abs() <= 1e-12, "seed {seed} cell {c}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn exact_at_coarse_resolution() {
        check_exact(0.2, 100);
    }

    #[test]
    fn exact_at_default_resolution() {
        check_exact(0.1, 100);
    }

    #[test]
    fn all_visible_and_all_occluded() {
        let spec = SphericalGridSpec::new(Vector3::zeros(), 1.0, 0.5, 0.2).unwrap();
        let f = distance_transform_2d(&spec, &vec![true; spec.directions()]);
        assert!(f.d.iter().all(|&d| d == 0.0));
        let f = distance_transform_2d(&spec, &vec![false; spec.directions()]);
        assert!(f.d.iter().all(|&d| d == -PI));
        assert!(f.b.iter().all(|&b| b == NO_BOUNDARY));
    }

    #[test]
    fn boundary_points_at_visible_cell() {
        let spec = SphericalGridSpec::new(Vector3::zeros(), 1.0, 0.5, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let layer = random_layer(&spec, &mut rng);
        let f = distance_transform_2d(&spec, &layer);
        let t = spec.tables();
        for (c, &b) in f.b.iter().enumerate() {
            if layer[c] {
                assert_eq!((b, f.d[c]), (c as u32, 0.0));
            } else if b != NO_BOUNDARY {
                assert!(layer[b as usize]);
                let d = -t.cos_between(b, c as u32).clamp(-1.0, 1.0).acos();
                assert_eq!(d, f.d[c]);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn single_visible_direction(i in 0usize..16, j in 0usize..31) {
            let spec = SphericalGridSpec::new(Vector3::zeros(), 1.0, 0.5, 0.2).unwrap();
            let mut layer = vec![false; spec.directions()];
            layer[i * spec.n_phi + j] = true;
            let got = distance_transform_2d(&spec, &layer);
            let want = brute(&spec, &layer);
            for (g, w) in got.d.iter().zip(&want) {
                prop_assert!((g - w).abs() <= 1e-12);
            }
        }
    }
}
