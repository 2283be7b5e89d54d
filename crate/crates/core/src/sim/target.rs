//! Scripted target motion along a polyline at constant speed.

use nalgebra::Vector3;

use super::config::TargetConfig;

type V3 = Vector3<f64>;

#[derive(Debug, Clone)]
pub struct TargetScript {
    points: Vec<V3>,
    /// Cumulative arc length at each point.
    arc: Vec<f64>,
    speed: f64,
    closed: bool,
}

impl TargetScript {
    pub fn new(cfg: &TargetConfig) -> Self {
        let mut points: Vec<V3> = cfg.waypoints.iter().map(|w| V3::from(*w)).collect();
        if cfg.closed && points.len() > 1 {
            points.push(points[0]);
        }
        let mut arc = vec![0.0];
        for w in points.windows(2) {
            arc.push(arc.last().unwrap() + (w[1] - w[0]).norm());
        }
        Self {
            points,
            arc,
            speed: cfg.speed,
            closed: cfg.closed,
        }
    }

    pub fn length(&self) -> f64 {
        *self.arc.last().unwrap()
    }

    /// Position and velocity at time `t`.
    pub fn state(&self, t: f64) -> (V3, V3) {
        let total = self.length();
        if total == 0.0 || self.speed == 0.0 {
            return (self.points[0], V3::zeros());
        }
        let mut s = self.speed * t.max(0.0);
        if self.closed {
            s = s.rem_euclid(total);
        } else if s >= total {
            return (*self.points.last().unwrap(), V3::zeros());
        }
        let i = self
            .arc
            .partition_point(|a| *a <= s)
            .clamp(1, self.arc.len() - 1)
            - 1;
        let seg = self.points[i + 1] - self.points[i];
        let len = self.arc[i + 1] - self.arc[i];
        let dir = seg / len;
        (self.points[i] + dir * (s - self.arc[i]), dir * self.speed)
    }
}
