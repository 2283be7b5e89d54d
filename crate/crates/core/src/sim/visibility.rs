//! Ground-truth target visibility for one tracker.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::costs::{FovConfig, FovKind};
use crate::worldmap::{line_of_sight_clear, OccupancyGrid};

type V3 = Vector3<f64>;

/// Why a tracker does not see the target, in evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossCause {
    Obstacle,
    Teammate,
    FovExit,
    TooClose,
    OutOfRange,
}

impl LossCause {
    pub const ALL: [LossCause; 5] = [
        LossCause::Obstacle,
        LossCause::Teammate,
        LossCause::FovExit,
        LossCause::TooClose,
        LossCause::OutOfRange,
    ];

    pub fn code(self) -> u8 {
        match self {
            LossCause::Obstacle => 1,
            LossCause::Teammate => 2,
            LossCause::FovExit => 3,
            LossCause::TooClose => 4,
            LossCause::OutOfRange => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossCause::Obstacle => "obstacle",
            LossCause::Teammate => "teammate",
            LossCause::FovExit => "fov_exit",
            LossCause::TooClose => "too_close",
            LossCause::OutOfRange => "out_of_range",
        }
    }
}

/// Whether the segment `a`-`b` passes within `radius` of `c`.
pub fn segment_hits_sphere(a: &V3, b: &V3, c: &V3, radius: f64) -> bool {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((c - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (a + ab * t - c).norm() <= radius
}

/// Exact containment of the target bearing in the sensor's field of view.
/// Omnidirectional sensors cover an elevation band around `theta_ctr`;
/// conic ones a circular cone around the forward axis tilted by
/// `theta_ctr`.
pub fn in_fov(cfg: &FovConfig, p: &V3, yaw: f64, target: &V3) -> bool {
    let l = cfg.to_sensor(p, yaw, target);
    let n = l.norm();
    if n == 0.0 {
        return false;
    }
    let half = cfg.theta_vrt / 2.0;
    match cfg.kind {
        FovKind::Omnidirectional => {
            let elevation = l.z.atan2(l.x.hypot(l.y));
            (elevation - cfg.theta_ctr).abs() <= half
        }
        FovKind::Conic => {
            let (s, c) = cfg.theta_ctr.sin_cos();
            let axis = V3::new(c, 0.0, s);
            (axis.dot(&l) / n).clamp(-1.0, 1.0).acos() <= half
        }
    }
}

/// Evaluation thresholds.
#[derive(Debug, Clone, Copy)]
pub struct VisibilityRules {
    pub block_radius: f64,
    pub too_close: f64,
    pub range: f64,
}

/// `None` when visible, otherwise the first failing check.
pub fn evaluate(
    grid: &OccupancyGrid,
    rules: &VisibilityRules,
    fov: &FovConfig,
    p: &V3,
    yaw: f64,
    target: &V3,
    others: &[V3],
) -> Option<LossCause> {
    let sensor = p + nalgebra::Rotation3::from_axis_angle(&V3::z_axis(), yaw) * fov.offset;
    if !line_of_sight_clear(grid, &sensor, target) {
        return Some(LossCause::Obstacle);
    }
    if others
        .iter()
        .any(|o| segment_hits_sphere(&sensor, target, o, rules.block_radius))
    {
        return Some(LossCause::Teammate);
    }
    if !in_fov(fov, p, yaw, target) {
        return Some(LossCause::FovExit);
    }
    let d = (target - p).norm();
    if d < rules.too_close {
        return Some(LossCause::TooClose);
    }
    if d > rules.range {
        return Some(LossCause::OutOfRange);
    }
    None
}
