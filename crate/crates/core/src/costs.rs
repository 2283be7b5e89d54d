//! Differentiable tracking and coordination costs.
//!
//! Inequality-style terms come in two flavours: a `*_violation` function
//! returning the raw signed violation, and a smoothed cost obtained by
//! passing it through [`smooth`].

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::ssdf::SsdfVolume;
use crate::worldmap::Polyhedron;

type V3 = Vector3<f64>;

/// Tracking geometry and dynamic limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingParams {
    pub d_lb: f64,
    pub d_ub: f64,
    /// Minimum angular separation between trackers as seen from the target.
    pub theta_c: f64,
    pub k_e: f64,
    /// Inter-agent clearance.
    pub r_s: f64,
    pub v_max: f64,
    pub a_max: f64,
    pub yaw_rate_max: f64,
}

impl Default for TrackingParams {
    fn default() -> Self {
        Self {
            d_lb: 1.5,
            d_ub: 2.5,
            theta_c: 0.6,
            k_e: 1.0,
            r_s: 1.0,
            v_max: 3.0,
            a_max: 4.0,
            yaw_rate_max: 2.0,
        }
    }
}

impl TrackingParams {
    pub fn validate(&self) -> Result<(), String> {
        let ok = self.d_lb > 0.0
            && self.d_lb < self.d_ub
            && self.theta_c > 0.0
            && self.theta_c < PI
            && self.k_e >= 0.0
            && self.r_s > 0.0
            && self.v_max > 0.0
            && self.a_max > 0.0
            && self.yaw_rate_max > 0.0;
        if ok {
            Ok(())
        } else {
            Err(format!("invalid tracking parameters: {self:?}"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FovKind {
    Omnidirectional,
    Conic,
}

/// Sensor field of view, attached to the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FovConfig {
    pub kind: FovKind,
    /// Full vertical extent.
    pub theta_vrt: f64,
    /// Elevation of the vertical bisector above the horizon.
    pub theta_ctr: f64,
    /// Sensor offset in the body frame.
    pub offset: V3,
}

impl Default for FovConfig {
    fn default() -> Self {
        Self::omni()
    }
}

impl FovConfig {
    /// Annular sensor covering elevations from -7° to 52°.
    pub fn omni() -> Self {
        Self {
            kind: FovKind::Omnidirectional,
            theta_vrt: 59f64.to_radians(),
            theta_ctr: 22.5f64.to_radians(),
            offset: V3::zeros(),
        }
    }

    /// Forward-facing cone with a 70.4° vertical extent.
    pub fn conic() -> Self {
        Self {
            kind: FovKind::Conic,
            theta_vrt: 70.4f64.to_radians(),
            theta_ctr: 0.0,
            offset: V3::zeros(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.theta_vrt > 0.0 && self.theta_vrt < PI && self.theta_ctr.abs() < PI / 2.0 {
            Ok(())
        } else {
            Err(format!("invalid field of view: {self:?}"))
        }
    }

    /// Target position expressed in the sensor frame for a body at `p`
    /// rotated by `yaw` about the world z-axis.
    pub fn to_sensor(&self, p: &V3, yaw: f64, target: &V3) -> V3 {
        let (s, c) = yaw.sin_cos();
        let w = target - p;
        V3::new(c * w.x + s * w.y, -s * w.x + c * w.y, w.z) - self.offset
    }
}

/// Weights of every cost term; zero disables a term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    pub visibility: f64,
    pub fov: f64,
    pub distance: f64,
    pub teammate_occlusion: f64,
    pub formation: f64,
    pub corridor: f64,
    pub dynamics: f64,
    pub swarm: f64,
    /// Scale of the front-end depth heuristic.
    pub heuristic: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            visibility: 100.0,
            fov: 1_000_000.0,
            distance: 1000.0,
            teammate_occlusion: 100.0,
            formation: 2.0,
            corridor: 10000.0,
            dynamics: 1000.0,
            swarm: 10000.0,
            heuristic: 100.0,
        }
    }
}

impl CostWeights {
    pub const TERMS: [&'static str; 8] = [
        "visibility",
        "fov",
        "distance",
        "teammate_occlusion",
        "formation",
        "corridor",
        "dynamics",
        "swarm",
    ];

    pub fn validate(&self) -> Result<(), String> {
        let all = [
            self.visibility,
            self.fov,
            self.distance,
            self.teammate_occlusion,
            self.formation,
            self.corridor,
            self.dynamics,
            self.swarm,
            self.heuristic,
        ];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(format!("weights must be finite and nonnegative: {self:?}"))
        }
    }

    /// Zeroes a term by name; returns false for unknown names.
    pub fn zero(&mut self, term: &str) -> bool {
        let slot = match term {
            "visibility" => &mut self.visibility,
            "fov" => &mut self.fov,
            "distance" => &mut self.distance,
            "teammate_occlusion" => &mut self.teammate_occlusion,
            "formation" => &mut self.formation,
            "corridor" => &mut self.corridor,
            "dynamics" => &mut self.dynamics,
            "swarm" => &mut self.swarm,
            _ => return false,
        };
        *slot = 0.0;
        true
    }
}

/// Cubic one-sided penalty `max(x, 0)³` and its derivative.
#[inline]
pub fn smooth(x: f64) -> (f64, f64) {
    if x > 0.0 {
        (x * x * x, 3.0 * x * x)
    } else {
        (0.0, 0.0)
    }
}

/// Occlusion cost: negated field value.
pub fn visibility(volume: &SsdfVolume, p: &V3) -> (f64, V3) {
    let (d, g) = volume.query_with_gradient(p);
    (-d, -g)
}

/// Field-of-view cost with its parts and gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FovCost {
    pub value: f64,
    pub grad_p: V3,
    pub grad_yaw: f64,
    /// Raw vertical violation before smoothing.
    pub vertical: f64,
    /// Horizontal misalignment, zero for omnidirectional sensors.
    pub horizontal: f64,
}

/// Vertical band penalty (smoothed) plus, for conic sensors, horizontal
/// misalignment `1 - x/√(x² + y²)` in the sensor frame.
pub fn fov(cfg: &FovConfig, p: &V3, yaw: f64, target: &V3) -> FovCost {
    let l = cfg.to_sensor(p, yaw, target);
    let n = l.norm();
    if n == 0.0 {
        return FovCost {
            value: 0.0,
            grad_p: V3::zeros(),
            grad_yaw: 0.0,
            vertical: 0.0,
            horizontal: 0.0,
        };
    }
    let rho = l.x.hypot(l.y);
    let (ss, cs) = cfg.theta_ctr.sin_cos();
    // cosine between the bearing and its projection onto the bisector cone
    let num = rho * cs + l.z * ss;
    let align = num / n;
    let dnum = if rho > 0.0 {
        V3::new(cs * l.x / rho, cs * l.y / rho, ss)
    } else {
        V3::new(0.0, 0.0, ss)
    };
    let dalign = dnum / n - l * (num / (n * n * n));
    let vertical = (cfg.theta_vrt / 2.0).cos() - align;
    let (pv, dpv) = smooth(vertical);
    let mut value = pv;
    let mut g_l = -dalign * dpv;

    let mut horizontal = 0.0;
    if cfg.kind == FovKind::Conic {
        if rho > 0.0 {
            horizontal = 1.0 - l.x / rho;
            let r3 = rho * rho * rho;
            g_l += V3::new(-l.y * l.y / r3, l.x * l.y / r3, 0.0);
        } else {
            horizontal = 1.0;
        }
        value += horizontal;
    }

    let (s, c) = yaw.sin_cos();
    let w = target - p;
    // l = Rᵀ(w) - offset with R the yaw rotation
    let grad_p = -V3::new(c * g_l.x - s * g_l.y, s * g_l.x + c * g_l.y, g_l.z);
    let dl_dyaw = V3::new(-s * w.x + c * w.y, -c * w.x - s * w.y, 0.0);
    FovCost {
        value,
        grad_p,
        grad_yaw: g_l.dot(&dl_dyaw),
        vertical,
        horizontal,
    }
}

/// Distance band cost: `5(d_lb - d)³` below, `(d - d_ub)²/2` above.
pub fn distance(p: &V3, target: &V3, params: &TrackingParams) -> (f64, V3) {
    let w = p - target;
    let d = w.norm();
    if d == 0.0 {
        return (5.0 * params.d_lb.powi(3), V3::zeros());
    }
    let u = w / d;
    if d < params.d_lb {
        let e = params.d_lb - d;
        (5.0 * e * e * e, -u * (15.0 * e * e))
    } else if d > params.d_ub {
        let e = d - params.d_ub;
        (0.5 * e * e, u * e)
    } else {
        (0.0, V3::zeros())
    }
}

/// Teammate occlusion: `Σ (η_j - cos θ_c)³` over teammates whose bearing from
/// the target is within `θ_c` of the ego's.
pub fn teammate_occlusion(p: &V3, target: &V3, teammates: &[V3], theta_c: f64) -> (f64, V3) {
    let a = p - target;
    let na = a.norm();
    if na == 0.0 {
        return (0.0, V3::zeros());
    }
    let ua = a / na;
    let cos_c = theta_c.cos();
    let mut value = 0.0;
    let mut grad = V3::zeros();
    for q in teammates {
        let b = q - target;
        let nb = b.norm();
        if nb == 0.0 {
            continue;
        }
        let ub = b / nb;
        let eta = ua.dot(&ub);
        let (v, dv) = smooth(eta - cos_c);
        if v > 0.0 {
            value += v;
            grad += (ub - ua * eta) * (dv / na);
        }
    }
    (value, grad)
}

/// Logarithmic pair energy `Σ k_e log(1/‖p - p_j‖)`.
pub fn formation(p: &V3, teammates: &[V3], k_e: f64) -> (f64, V3) {
    let mut value = 0.0;
    let mut grad = V3::zeros();
    for q in teammates {
        let w = p - q;
        let d2 = w.norm_squared();
        if d2 == 0.0 {
            continue;
        }
        value -= 0.5 * k_e * d2.ln();
        grad -= w * (k_e / d2);
    }
    (value, grad)
}

/// Signed per-face violations `A p - b`.
pub fn corridor_violation(poly: &Polyhedron, p: &V3) -> Vec<f64> {
    poly.residuals(p).collect()
}

/// Smoothed corridor penalty summed over violated faces.
pub fn corridor(poly: &Polyhedron, p: &V3) -> (f64, V3) {
    let mut value = 0.0;
    let mut grad = V3::zeros();
    for (a, b) in poly.a.iter().zip(&poly.b) {
        let (v, dv) = smooth(a.dot(p) - b);
        value += v;
        grad += a * dv;
    }
    (value, grad)
}

/// Raw magnitude violation `‖v‖² - limit²`.
pub fn dynamics_violation(v: &V3, limit: f64) -> (f64, V3) {
    (v.norm_squared() - limit * limit, 2.0 * v)
}

pub fn dynamics(v: &V3, limit: f64) -> (f64, V3) {
    let (x, g) = dynamics_violation(v, limit);
    let (s, ds) = smooth(x);
    (s, g * ds)
}

/// Raw clearance violation `max(r_s² - ‖p_i - p_j‖², 0)` and its gradient
/// with respect to `p_i` (the `p_j` gradient is its negation).
pub fn swarm_violation(pi: &V3, pj: &V3, r_s: f64) -> (f64, V3) {
    let w = pi - pj;
    let x = r_s * r_s - w.norm_squared();
    if x > 0.0 {
        (x, -2.0 * w)
    } else {
        (0.0, V3::zeros())
    }
}

/// Smoothed clearance penalty; returns gradients for both agents.
pub fn swarm_clearance(pi: &V3, pj: &V3, r_s: f64) -> (f64, V3, V3) {
    let (x, g) = swarm_violation(pi, pj, r_s);
    let (s, ds) = smooth(x);
    (s, g * ds, -g * ds)
}
