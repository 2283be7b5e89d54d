//! Back-end trajectory optimisation and the receding-horizon pipeline.
//!
//! The decision vector holds the intermediate waypoints, the duration
//! logits, the free terminal position/acceleration/jerk and, for conic
//! sensors, the yaw waypoints and terminal yaw state. Terminal velocity is
//! pinned to the predicted target velocity and the total duration to the
//! prediction horizon.

pub mod lbfgs;
mod objective;
pub mod replan;
pub mod time_map;

use std::time::Instant;

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costs::{CostWeights, FovConfig, FovKind, TrackingParams};
use crate::minco::{Minco, MincoError, PolyTrajectory};
use crate::prediction::TargetPrediction;
use crate::search::FrontEndPath;
use crate::ssdf::SsdfVolume;
use crate::worldmap::Polyhedron;

pub use lbfgs::{LbfgsConfig, LbfgsReport, StopReason};
pub use objective::{CostBreakdown, Evaluation};
pub use replan::{
    hover_plan, replan, AgentContext, Plan, PlanResult, PlanStatus, PlannerConfig, StageTimings,
};

type V3 = Vector3<f64>;

/// Position trajectory order (degree 7 pieces).
pub const POSITION_ORDER: usize = 4;
/// Yaw trajectory order (cubic pieces).
pub const YAW_ORDER: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("trajectory construction failed: {0}")]
    Minco(#[from] MincoError),
    #[error("objective is not finite at the initial guess")]
    NonFiniteInit,
    #[error("no target estimate")]
    NoEstimate,
    #[error("{0}")]
    Stage(String),
}

/// A trajectory anchored at an absolute start time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StampedTrajectory {
    pub start: f64,
    pub traj: PolyTrajectory,
}

impl StampedTrajectory {
    pub fn end(&self) -> f64 {
        self.start + self.traj.duration()
    }

    /// Derivative of the given order at absolute time `t`. Before the start
    /// the initial state is held; after the end the final position is held
    /// at rest.
    pub fn at(&self, t: f64, order: usize) -> Vec<f64> {
        let tr = &self.traj;
        let last = tr.pieces() - 1;
        if t >= self.end() {
            if order == 0 {
                return tr.eval_piece(last, tr.times[last], 0);
            }
            return vec![0.0; tr.dims];
        }
        let rel = (t - self.start).max(0.0);
        let mut acc = 0.0;
        for (i, &ti) in tr.times.iter().enumerate() {
            if rel <= acc + ti || i == last {
                return tr.eval_piece(i, (rel - acc).clamp(0.0, ti), order);
            }
            acc += ti;
        }
        unreachable!("non-empty trajectory")
    }

    pub fn at3(&self, t: f64, order: usize) -> V3 {
        V3::from_column_slice(&self.at(t, order))
    }
}

/// Tuning of the back-end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptSettings {
    /// Trapezoid intervals per piece for the continuous penalties.
    pub samples_per_piece: usize,
    /// Weight of the position control effort.
    pub effort: f64,
    /// Weight of the yaw control effort.
    pub yaw_effort: f64,
    pub lbfgs: LbfgsConfig,
}

impl Default for OptSettings {
    fn default() -> Self {
        Self {
            samples_per_piece: 8,
            effort: 0.01,
            yaw_effort: 1.0,
            lbfgs: LbfgsConfig::default(),
        }
    }
}

/// Everything the objective reads; teammate data is frozen for the whole
/// optimisation.
#[derive(Debug, Clone)]
pub struct OptProblem<'a> {
    /// Absolute time of the trajectory start.
    pub start: f64,
    /// Position, velocity, acceleration and jerk at the start.
    pub head: [V3; 4],
    /// Yaw and yaw rate at the start.
    pub yaw_head: [f64; 2],
    pub fov: FovConfig,
    pub prediction: &'a TargetPrediction,
    /// Volume `k` belongs to prediction stamp `k`; missing ones skip the
    /// occlusion term.
    pub volumes: &'a [SsdfVolume],
    /// One polyhedron per piece; empty disables the corridor term.
    pub corridors: &'a [Polyhedron],
    /// Cooperating teammates.
    pub teammates: &'a [StampedTrajectory],
    /// Other agents that must only be kept clear of.
    pub obstacles: &'a [StampedTrajectory],
    pub params: TrackingParams,
    pub weights: CostWeights,
    pub settings: OptSettings,
}

/// Offsets into the decision vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub pieces: usize,
    pub yaw: bool,
}

impl Layout {
    pub fn waypoints(&self) -> usize {
        0
    }
    pub fn logits(&self) -> usize {
        3 * (self.pieces - 1)
    }
    /// Terminal position, acceleration and jerk, three entries each.
    pub fn tail(&self) -> usize {
        self.logits() + self.pieces - 1
    }
    pub fn yaw_waypoints(&self) -> usize {
        self.tail() + 9
    }
    /// Terminal yaw and yaw rate.
    pub fn yaw_tail(&self) -> usize {
        self.yaw_waypoints() + self.pieces - 1
    }
    pub fn len(&self) -> usize {
        if self.yaw {
            self.yaw_tail() + 2
        } else {
            self.yaw_waypoints()
        }
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Result of one back-end run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptReport {
    pub iterations: usize,
    pub evaluations: usize,
    pub cost: f64,
    pub breakdown: CostBreakdown,
    pub reason: StopReason,
    /// Set when some stamp had no occlusion field.
    pub degraded: bool,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct OptResult {
    pub position: PolyTrajectory,
    pub yaw: Option<PolyTrajectory>,
    pub decision: Vec<f64>,
    pub report: OptReport,
}

impl<'a> OptProblem<'a> {
    pub fn layout(&self) -> Layout {
        Layout {
            pieces: self.prediction.n_steps(),
            yaw: self.fov.kind == FovKind::Conic,
        }
    }

    /// Piece durations encoded by `x`.
    pub fn durations(&self, x: &[f64]) -> Vec<f64> {
        let l = self.layout();
        time_map::durations(&x[l.logits()..l.tail()], self.prediction.horizon)
    }

    /// Builds the position and optional yaw trajectories encoded by `x`.
    pub fn trajectories(&self, x: &[f64]) -> Result<(Minco, Option<Minco>), MincoError> {
        let l = self.layout();
        let m = l.pieces;
        let times = self.durations(x);
        let head = DMatrix::from_fn(4, 3, |d, k| self.head[d][k]);
        let tv = self.prediction.velocity;
        let t = l.tail();
        let tail = DMatrix::from_fn(4, 3, |d, k| match d {
            0 => x[t + k],
            1 => tv[k],
            2 => x[t + 3 + k],
            _ => x[t + 6 + k],
        });
        let pts = DMatrix::from_fn(m - 1, 3, |i, k| x[3 * i + k]);
        let pos = Minco::new(POSITION_ORDER, &head, &tail, &pts, &times)?;
        let yaw = if l.yaw {
            let head = DMatrix::from_column_slice(2, 1, &self.yaw_head);
            let tail = DMatrix::from_column_slice(2, 1, &x[l.yaw_tail()..l.yaw_tail() + 2]);
            let pts = DMatrix::from_column_slice(m - 1, 1, &x[l.yaw_waypoints()..l.yaw_tail()]);
            Some(Minco::new(YAW_ORDER, &head, &tail, &pts, &times)?)
        } else {
            None
        };
        Ok((pos, yaw))
    }

    /// Decision vector initialised from a front-end path: waypoints at the
    /// node positions, even durations, terminal state at the last node, yaw
    /// facing the predicted target.
    pub fn initial_guess(&self, path: &FrontEndPath) -> Vec<f64> {
        let l = self.layout();
        let m = l.pieces;
        let node = |i: usize| -> V3 {
            path.states
                .get(i)
                .or(path.states.last())
                .map(|s| s.0)
                .unwrap_or(self.head[0])
        };
        let mut x = vec![0.0; l.len()];
        for i in 1..m {
            x[3 * (i - 1)..3 * i].copy_from_slice(node(i).as_slice());
        }
        let t = l.tail();
        x[t..t + 3].copy_from_slice(node(m).as_slice());
        if l.yaw {
            let mut prev = self.yaw_head[0];
            for i in 1..=m {
                let w = self.prediction.points[i] - node(i);
                let mut bearing = w.y.atan2(w.x);
                // unwrap next to the previous heading
                bearing = prev
                    + (bearing - prev + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU)
                    - std::f64::consts::PI;
                let slot = if i < m {
                    l.yaw_waypoints() + i - 1
                } else {
                    l.yaw_tail()
                };
                x[slot] = bearing;
                prev = bearing;
            }
        }
        x
    }

    /// Runs the quasi-Newton descent from `x0`.
    pub fn optimize_from(&self, x0: Vec<f64>) -> Result<OptResult, PlanError> {
        let clock = Instant::now();
        let first = self.evaluate(&x0, false)?;
        if !first.value.is_finite() {
            return Err(PlanError::NonFiniteInit);
        }
        let mut x = x0;
        let lb = lbfgs::minimize(
            |x, g| match self.evaluate(x, true) {
                Ok(e) => {
                    g.copy_from_slice(&e.gradient);
                    e.value
                }
                Err(_) => f64::NAN,
            },
            &mut x,
            &self.settings.lbfgs,
        );
        let last = self.evaluate(&x, false)?;
        let (pos, yaw) = self.trajectories(&x)?;
        Ok(OptResult {
            position: pos.traj,
            yaw: yaw.map(|y| y.traj),
            report: OptReport {
                iterations: lb.iterations,
                evaluations: lb.evaluations,
                cost: last.value,
                breakdown: last.breakdown,
                reason: lb.reason,
                degraded: last.degraded,
                wall_ms: clock.elapsed().as_secs_f64() * 1e3,
            },
            decision: x,
        })
    }

    pub fn optimize(&self, init: &FrontEndPath) -> Result<OptResult, PlanError> {
        self.optimize_from(self.initial_guess(init))
    }
}
