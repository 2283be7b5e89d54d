//! Spherical signed distance fields around predicted target positions.
//!
//! A field lives on a `(θ, φ, r)` grid centred at the target. Each cell
//! stores zero when the target is visible from it and otherwise the negative
//! angular distance to the nearest visible direction on the same shell.

pub mod bench;
mod transform;
mod visibility;
mod volume;

pub use transform::{distance_transform_2d, LayerField};
pub use visibility::VisibilityMap;
pub use volume::{build_volumes, SsdfVolume};

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Marks "no visible direction on this shell".
pub const NO_BOUNDARY: u32 = u32::MAX;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SsdfError {
    #[error("invalid spherical grid: {0}")]
    BadSpec(String),
    #[error("malformed volume dump: {0}")]
    Format(String),
}

/// User-facing parameters of a spherical grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsdfConfig {
    pub r_max: f64,
    pub dr: f64,
    pub dang: f64,
    /// Angular dilation of occluded directions, in cells.
    pub inflation: usize,
}

impl Default for SsdfConfig {
    fn default() -> Self {
        Self {
            r_max: 5.0,
            dr: 0.1,
            dang: 0.1,
            inflation: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalGridSpec {
    pub origin: Vector3<f64>,
    pub r_max: f64,
    pub dr: f64,
    pub dang: f64,
    pub n_theta: usize,
    pub n_phi: usize,
    pub n_r: usize,
}

impl SphericalGridSpec {
    pub fn new(origin: Vector3<f64>, r_max: f64, dr: f64, dang: f64) -> Result<Self, SsdfError> {
        if !(dr > 0.0 && dang > 0.0 && r_max > 0.0) {
            return Err(SsdfError::BadSpec(format!(
                "r_max, dr, dang must be positive (got {r_max}, {dr}, {dang})"
            )));
        }
        let n_theta = (PI / dang).round() as usize;
        let n_phi = (TAU / dang).round() as usize;
        let n_r = (r_max / dr).round() as usize;
        if n_theta < 2 || n_phi < 2 || n_r < 2 {
            return Err(SsdfError::BadSpec(format!(
                "cell counts ({n_theta}, {n_phi}, {n_r}) must all be >= 2"
            )));
        }
        Ok(Self {
            origin,
            r_max,
            dr,
            dang,
            n_theta,
            n_phi,
            n_r,
        })
    }

    pub fn from_config(origin: Vector3<f64>, cfg: &SsdfConfig) -> Result<Self, SsdfError> {
        Self::new(origin, cfg.r_max, cfg.dr, cfg.dang)
    }

    /// Effective polar spacing, `π / N_θ`.
    pub fn d_theta(&self) -> f64 {
        PI / self.n_theta as f64
    }

    /// Effective azimuthal spacing, `2π / N_φ`.
    pub fn d_phi(&self) -> f64 {
        TAU / self.n_phi as f64
    }

    pub fn theta_at(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.d_theta()
    }

    pub fn phi_at(&self, j: usize) -> f64 {
        j as f64 * self.d_phi()
    }

    pub fn r_at(&self, k: usize) -> f64 {
        k as f64 * self.dr
    }

    pub fn directions(&self) -> usize {
        self.n_theta * self.n_phi
    }

    pub fn cells(&self) -> usize {
        self.directions() * self.n_r
    }

    /// Position of the cell centre `(i, j, k)`.
    pub fn cell_center(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        let (t, p, r) = (self.theta_at(i), self.phi_at(j), self.r_at(k));
        self.origin + r * Vector3::new(t.sin() * p.cos(), t.sin() * p.sin(), t.cos())
    }

    pub(crate) fn tables(&self) -> Tables {
        Tables::new(self)
    }
}

/// Precomputed trigonometry for a spec's direction lattice.
#[derive(Debug, Clone)]
pub(crate) struct Tables {
    pub n_theta: usize,
    pub n_phi: usize,
    pub cos_t: Vec<f64>,
    pub sin_t: Vec<f64>,
    /// `cos(Δj · dφ)` for `Δj` in `0..N_φ`.
    pub cos_dp: Vec<f64>,
}

impl Tables {
    fn new(spec: &SphericalGridSpec) -> Self {
        let theta: Vec<f64> = (0..spec.n_theta).map(|i| spec.theta_at(i)).collect();
        Self {
            n_theta: spec.n_theta,
            n_phi: spec.n_phi,
            cos_t: theta.iter().map(|t| t.cos()).collect(),
            sin_t: theta.iter().map(|t| t.sin()).collect(),
            cos_dp: (0..spec.n_phi).map(|d| spec.phi_at(d).cos()).collect(),
        }
    }

    /// Cosine of the angle between lattice directions `a` and `b`
    /// (flattened `i * N_φ + j`).
    #[inline]
    pub fn cos_between(&self, a: u32, b: u32) -> f64 {
        let (ia, ja) = (a as usize / self.n_phi, a as usize % self.n_phi);
        let (ib, jb) = (b as usize / self.n_phi, b as usize % self.n_phi);
        let dj = ja.abs_diff(jb);
        self.cos_t[ia] * self.cos_t[ib] + self.sin_t[ia] * self.sin_t[ib] * self.cos_dp[dj]
    }
}

/// Spherical coordinates of `p` about `origin`: polar angle from +z,
/// azimuth from +x in `[0, 2π)`, radius. `None` when `p == origin`.
pub fn to_spherical(p: &Vector3<f64>, origin: &Vector3<f64>) -> Option<(f64, f64, f64)> {
    let d = p - origin;
    let r = d.norm();
    if r == 0.0 {
        return None;
    }
    let theta = (d.z / r).clamp(-1.0, 1.0).acos();
    let mut phi = d.y.atan2(d.x);
    if phi < 0.0 {
        phi += TAU;
    }
    if phi >= TAU {
        phi -= TAU;
    }
    Some((theta, phi, r))
}

/// Great-circle angle between directions `(θ, φ)` and `(θ', φ')`.
pub fn angular_distance(u: (f64, f64), v: (f64, f64)) -> f64 {
    let c = u.0.cos() * v.0.cos() + u.0.sin() * v.0.sin() * (u.1 - v.1).abs().cos();
    c.clamp(-1.0, 1.0).acos()
}

/// Polar angle on meridian `phi0` equidistant from `v1` and `v2`.
///
/// For `θ1 < θ2`, `v1` is nearer on `[0, θ0)` and `v2` on `(θ0, π]`.
pub fn theta_intersection(v1: (f64, f64), v2: (f64, f64), phi0: f64) -> f64 {
    let p = v1.0.sin() * (v1.1 - phi0).cos();
    let q = v2.0.sin() * (v2.1 - phi0).cos();
    let r = v2.0.cos() - v1.0.cos();
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

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn default_spec_counts() {
        let s = SphericalGridSpec::from_config(Vector3::zeros(), &SsdfConfig::default()).unwrap();
        assert_eq!((s.n_theta, s.n_phi, s.n_r), (31, 63, 50));
        assert!(s.theta_at(0) > 0.0 && s.theta_at(30) < PI);
        // +x is a lattice direction
        assert!((s.theta_at(15) - FRAC_PI_2).abs() < 1e-15);
        assert!(SphericalGridSpec::new(Vector3::zeros(), 5.0, 0.1, 2.5).is_err());
        assert!(SphericalGridSpec::new(Vector3::zeros(), 0.1, 0.1, 0.1).is_err());
    }

    #[test]
    fn spherical_examples() {
        let o = Vector3::new(1.0, 2.0, 3.0);
        let (t, p, r) = to_spherical(&(o + Vector3::z()), &o).unwrap();
        assert_eq!((t, p, r), (0.0, 0.0, 1.0));
        let (t, p, r) = to_spherical(&(o + Vector3::x()), &o).unwrap();
        assert!((t - FRAC_PI_2).abs() < 1e-15 && p == 0.0 && r == 1.0);
        let (t, p, r) = to_spherical(&(o + Vector3::new(0.0, -2.0, 0.0)), &o).unwrap();
        assert!((t - FRAC_PI_2).abs() < 1e-15 && (p - 1.5 * PI).abs() < 1e-15 && r == 2.0);
        assert!(to_spherical(&o, &o).is_none());
    }

    #[test]
    fn angular_distance_examples() {
        assert_eq!(angular_distance((0.7, 1.1), (0.7, 1.1)), 0.0);
        assert!(
            (angular_distance((FRAC_PI_2, 0.0), (FRAC_PI_2, FRAC_PI_2)) - FRAC_PI_2).abs() < 1e-15
        );
        for (a, b) in [(0.0, 0.3), (2.0, 5.5), (1.0, 1.0)] {
            assert!((angular_distance((0.0, a), (FRAC_PI_2, b)) - FRAC_PI_2).abs() < 1e-15);
        }
    }

    #[test]
    fn intersection_examples() {
        let q = PI / 4.0;
        assert_eq!(theta_intersection((q, 0.0), (3.0 * q, 0.0), 0.0), FRAC_PI_2);
        let t = theta_intersection((FRAC_PI_2, 0.0), (FRAC_PI_2, FRAC_PI_2), q);
        assert!((t - FRAC_PI_2).abs() < 1e-15);
    }

    /// Bisection on the distance difference, independent of the closed form.
    fn bisect(v1: (f64, f64), v2: (f64, f64), phi0: f64) -> Option<f64> {
        let f = |t: f64| angular_distance(v1, (t, phi0)) - angular_distance(v2, (t, phi0));
        let (mut lo, mut hi) = (0.0, PI);
        if f(lo).signum() == f(hi).signum() {
            return None;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid).signum() == f(lo).signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn intersection_is_equidistant(
            t1 in 0.01f64..3.13, p1 in 0.0f64..TAU,
            t2 in 0.01f64..3.13, p2 in 0.0f64..TAU,
            p0 in 0.0f64..TAU,
        ) {
            prop_assume!((t1 - t2).abs() > 1e-3);
            let t0 = theta_intersection((t1, p1), (t2, p2), p0);
            prop_assert!((0.0..=PI).contains(&t0));
            let gap = angular_distance((t1, p1), (t0, p0)) - angular_distance((t2, p2), (t0, p0));
            prop_assert!(gap.abs() <= 1e-9, "gap {gap}");
            if let Some(b) = bisect((t1, p1), (t2, p2), p0) {
                prop_assert!((b - t0).abs() < 1e-6);
            }
        }

        #[test]
        fn angular_distance_symmetric(a in 0.0f64..PI, b in 0.0f64..TAU, c in 0.0f64..PI, d in 0.0f64..TAU) {
            let x = angular_distance((a, b), (c, d));
            prop_assert_eq!(x, angular_distance((c, d), (a, b)));
            prop_assert!((0.0..=PI).contains(&x));
        }
    }
}
