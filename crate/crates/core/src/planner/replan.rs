//! One receding-horizon cycle: fuse and predict, build occlusion fields,
//! search, build corridors, optimise; with reuse and hover fallbacks.

use std::time::Instant;

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use super::{OptProblem, OptReport, OptSettings, PlanError, StampedTrajectory, POSITION_ORDER};
use crate::costs::{CostWeights, FovConfig, FovKind, TrackingParams};
use crate::minco::{Minco, PolyTrajectory};
use crate::prediction::{self, FilterConfig, Measurement, TargetEstimate, TargetPrediction};
use crate::search::{self, FrontEndPath, SearchConfig, SearchProblem};
use crate::ssdf::{build_volumes, SsdfConfig};
use crate::worldmap::{CorridorBuilder, OccupancyGrid};

type V3 = Vector3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Prediction step, also the spacing of the tracking stamps (s).
    pub step: f64,
    /// Prediction horizon and trajectory duration (s).
    pub horizon: f64,
    pub ssdf: SsdfConfig,
    pub search: SearchConfig,
    pub optimizer: OptSettings,
    pub filter: FilterConfig,
    /// Consecutive failed cycles tolerated by reusing the previous plan
    /// before switching to hover.
    pub max_reuse: usize,
    /// Runs the kinodynamic search; when off, the back-end starts from a
    /// straight line that keeps the current offset to the target.
    pub front_end: bool,
    /// Angle by which the planned field of view is narrowed on each side
    /// (rad).
    pub fov_margin: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            step: 0.3,
            horizon: 1.8,
            ssdf: SsdfConfig::default(),
            search: SearchConfig::default(),
            optimizer: OptSettings::default(),
            filter: FilterConfig::default(),
            max_reuse: 1,
            front_end: true,
            fov_margin: 0.05,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), String> {
        let n = (self.horizon / self.step).round();
        if !(self.step > 0.0) || n < 2.0 || (n * self.step - self.horizon).abs() > 1e-9 {
            return Err(format!(
                "horizon {} must be an integer multiple (at least 2) of step {}",
                self.horizon, self.step
            ));
        }
        if !(self.fov_margin >= 0.0) {
            return Err(format!(
                "fov_margin must be nonnegative, got {}",
                self.fov_margin
            ));
        }
        if self.optimizer.samples_per_piece < 2 {
            return Err("samples_per_piece must be at least 2".into());
        }
        Ok(())
    }
}

/// Inputs of one agent's cycle, copied at cycle start.
pub struct AgentContext<'a> {
    pub now: f64,
    /// Position, velocity, acceleration and jerk.
    pub state: [V3; 4],
    /// Yaw and yaw rate.
    pub yaw: [f64; 2],
    pub fov: FovConfig,
    pub estimate: Option<&'a TargetEstimate>,
    /// Measurements received since the last cycle.
    pub measurements: &'a [Measurement],
    pub grid: &'a OccupancyGrid,
    pub corridor: &'a CorridorBuilder,
    pub teammates: &'a [StampedTrajectory],
    pub obstacles: &'a [StampedTrajectory],
    pub previous: Option<&'a Plan>,
    /// Consecutive failed cycles so far.
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub position: StampedTrajectory,
    pub yaw: Option<StampedTrajectory>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStatus {
    Nominal,
    /// A new plan was produced from incomplete inputs.
    Degraded,
    /// The previous plan was kept.
    Reused,
    /// The agent brakes to a stop.
    Hover,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub ssdf_ms: f64,
    pub search_ms: f64,
    pub corridor_ms: f64,
    pub optimize_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub plan: Plan,
    pub status: PlanStatus,
    pub estimate: Option<TargetEstimate>,
    pub timings: StageTimings,
    pub report: Option<OptReport>,
    pub failure: Option<String>,
    pub expansions: usize,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Trajectory braking from `state` to rest over `horizon`.
pub fn hover_plan(now: f64, state: &[V3; 4], yaw: f64, horizon: f64) -> Plan {
    let head = DMatrix::from_fn(4, 3, |d, k| state[d][k]);
    let stop = state[0] + state[1] * (0.5 * horizon);
    let tail = DMatrix::from_fn(4, 3, |d, k| if d == 0 { stop[k] } else { 0.0 });
    let traj = Minco::new(
        POSITION_ORDER,
        &head,
        &tail,
        &DMatrix::zeros(0, 3),
        &[horizon],
    )
    .map(|m| m.traj)
    .unwrap_or_else(|_| constant(state[0].as_slice(), horizon));
    Plan {
        position: StampedTrajectory { start: now, traj },
        yaw: Some(StampedTrajectory {
            start: now,
            traj: constant(&[yaw], horizon),
        }),
    }
}

fn constant(value: &[f64], horizon: f64) -> PolyTrajectory {
    let dims = value.len();
    let mut coeffs = vec![0.0; 2 * POSITION_ORDER * dims];
    coeffs[..dims].copy_from_slice(value);
    PolyTrajectory {
        order: POSITION_ORDER,
        dims,
        times: vec![horizon],
        coeffs,
    }
}

/// Nodes moving linearly from the start to the final predicted target
/// position plus the current offset.
fn straight_path(state: &[V3; 4], pred: &TargetPrediction) -> FrontEndPath {
    let n = pred.n_steps();
    let goal = state[0] + pred.points[n] - pred.points[0];
    let v = (goal - state[0]) / pred.horizon;
    FrontEndPath {
        states: (0..=n)
            .map(|k| (state[0] + (goal - state[0]) * (k as f64 / n as f64), v))
            .collect(),
        controls: vec![V3::zeros(); n],
        stamps: (0..=n).map(|k| pred.stamp(k)).collect(),
        cost: 0.0,
        degraded: false,
        expansions: 0,
    }
}

/// Runs one planning cycle.
pub fn replan(
    ctx: &AgentContext,
    params: &TrackingParams,
    weights: &CostWeights,
    cfg: &PlannerConfig,
) -> PlanResult {
    let clock = Instant::now();
    let mut timings = StageTimings::default();
    let mut expansions = 0;
    let mut estimate = ctx.estimate.cloned();
    let outcome = run_stages(
        ctx,
        params,
        weights,
        cfg,
        &mut timings,
        &mut estimate,
        &mut expansions,
    );
    timings.total_ms = ms(clock);
    match outcome {
        Ok((plan, report, degraded)) => PlanResult {
            plan,
            status: if degraded {
                PlanStatus::Degraded
            } else {
                PlanStatus::Nominal
            },
            estimate,
            timings,
            report: Some(report),
            failure: None,
            expansions,
        },
        Err(e) => {
            log::debug!("cycle at {:.3} failed: {e}", ctx.now);
            let (plan, status) = match ctx.previous {
                Some(prev) if ctx.failures < cfg.max_reuse && prev.position.end() > ctx.now => {
                    (prev.clone(), PlanStatus::Reused)
                }
                _ => (
                    hover_plan(ctx.now, &ctx.state, ctx.yaw[0], cfg.horizon),
                    PlanStatus::Hover,
                ),
            };
            PlanResult {
                plan,
                status,
                estimate,
                timings,
                report: None,
                failure: Some(e.to_string()),
                expansions,
            }
        }
    }
}

fn run_stages(
    ctx: &AgentContext,
    params: &TrackingParams,
    weights: &CostWeights,
    cfg: &PlannerConfig,
    timings: &mut StageTimings,
    estimate: &mut Option<TargetEstimate>,
    expansions: &mut usize,
) -> Result<(Plan, OptReport, bool), PlanError> {
    let base = estimate.as_ref().ok_or(PlanError::NoEstimate)?;
    let fused = prediction::fuse(base, ctx.measurements, &cfg.filter)
        .map_err(|e| PlanError::Stage(format!("fusion: {e}")))?;
    // align the prediction with the cycle start
    let now_est = if fused.stamp < ctx.now {
        fused.propagated(ctx.now, cfg.filter.accel_noise)
    } else {
        fused.clone()
    };
    *estimate = Some(fused);
    let pred = prediction::predict(&now_est, cfg.step, cfg.horizon)
        .map_err(|e| PlanError::Stage(format!("prediction: {e}")))?;

    let t0 = Instant::now();
    let points: Vec<(f64, V3)> = pred
        .points
        .iter()
        .enumerate()
        .map(|(k, p)| (ctx.now + pred.stamp(k), *p))
        .collect();
    let volumes = if weights.visibility > 0.0 {
        build_volumes(ctx.grid, &points, &cfg.ssdf)
            .map_err(|e| PlanError::Stage(format!("ssdf: {e}")))?
    } else {
        Vec::new()
    };
    timings.ssdf_ms = ms(t0);

    let t0 = Instant::now();
    let mates_at: Vec<Vec<V3>> = (0..=pred.n_steps())
        .map(|k| {
            let t = ctx.now + pred.stamp(k);
            ctx.teammates
                .iter()
                .chain(ctx.obstacles)
                .map(|o| o.at3(t, 0))
                .collect()
        })
        .collect();
    let sp = SearchProblem {
        start_p: ctx.state[0],
        start_v: ctx.state[1],
        prediction: &pred,
        volumes: &volumes,
        teammates: &mates_at,
        map: ctx.corridor,
        params: *params,
        weights: *weights,
        config: cfg.search,
    };
    let path = if cfg.front_end {
        search::search(&sp)
    } else {
        straight_path(&ctx.state, &pred)
    };
    *expansions = path.expansions;
    timings.search_ms = ms(t0);

    let t0 = Instant::now();
    let mut nodes = path.positions();
    while nodes.len() < pred.n_steps() + 1 {
        let last = *nodes.last().expect("root node");
        nodes.push(last);
    }
    let corridors = ctx
        .corridor
        .build(ctx.grid, &nodes)
        .map_err(|e| PlanError::Stage(format!("corridor: {e}")))?;
    timings.corridor_ms = ms(t0);

    let t0 = Instant::now();
    let mut fov = ctx.fov;
    fov.theta_vrt = (fov.theta_vrt - 2.0 * cfg.fov_margin).max(1e-3);
    let problem = OptProblem {
        start: ctx.now,
        head: ctx.state,
        yaw_head: ctx.yaw,
        fov,
        prediction: &pred,
        volumes: &volumes,
        corridors: &corridors,
        teammates: ctx.teammates,
        obstacles: ctx.obstacles,
        params: *params,
        weights: *weights,
        settings: cfg.optimizer,
    };
    let result = problem.optimize(&path)?;
    timings.optimize_ms = ms(t0);
    let yaw = match (ctx.fov.kind, result.yaw) {
        (FovKind::Conic, Some(traj)) => Some(StampedTrajectory {
            start: ctx.now,
            traj,
        }),
        _ => None,
    };
    let degraded = path.degraded || result.report.degraded;
    Ok((
        Plan {
            position: StampedTrajectory {
                start: ctx.now,
                traj: result.position,
            },
            yaw,
        },
        result.report,
        degraded,
    ))
}
