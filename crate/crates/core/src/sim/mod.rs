//! Deterministic desk-scale swarm simulation.
//!
//! Time advances from event to event: membership changes, bus deliveries,
//! ground-truth samples and per-agent replans, in that order at equal
//! stamps. Agents replan at a fixed rate with evenly spread phase offsets
//! and follow their trajectories exactly.

pub mod bus;
pub mod config;
pub mod metrics;
pub mod target;
pub mod visibility;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::costs::FovConfig;
use crate::planner::{
    hover_plan, replan, AgentContext, OptReport, Plan, PlanStatus, StageTimings, StampedTrajectory,
};
use crate::prediction::{Measurement, TargetEstimate};
use crate::worldmap::{generate_map, CorridorBuilder, CorridorConfig, MapError, OccupancyGrid};

use bus::{Bus, BusMessage, BusStats, Payload};
use config::{ConfigError, MembershipEvent, ScenarioConfig};
use metrics::{
    compute_metrics, MetricsError, Sample, ScenarioMetrics, TrackerSample, VisibilityLog,
};
use target::TargetScript;
use visibility::{LossCause, VisibilityRules};

type V3 = Vector3<f64>;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("map generation: {0}")]
    Map(#[from] MapError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    /// Not yet in the world.
    Pending,
    /// Flying and calibrating; plans alone and is not on the bus.
    Joining,
    Active,
    Dropped,
}

impl Membership {
    fn present(self) -> bool {
        matches!(self, Membership::Joining | Membership::Active)
    }

    fn code(self) -> u8 {
        match self {
            Membership::Pending => 0,
            Membership::Joining => 1,
            Membership::Active => 2,
            Membership::Dropped => 3,
        }
    }
}

/// One agent's cycle as seen by the simulator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplanRecord {
    pub t: f64,
    pub agent: usize,
    pub membership: Membership,
    pub status: PlanStatus,
    pub timings: StageTimings,
    pub report: Option<OptReport>,
    /// Teammates whose trajectories constrained this cycle.
    pub teammates: Vec<usize>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ReplanStats {
    pub count: usize,
    pub mean_ms: f64,
    pub max_ms: f64,
    pub ssdf_mean_ms: f64,
    pub search_mean_ms: f64,
    pub corridor_mean_ms: f64,
    pub optimize_mean_ms: f64,
    pub nominal: usize,
    pub degraded: usize,
    pub reused: usize,
    pub hover: usize,
}

impl ReplanStats {
    pub fn from_records(records: &[ReplanRecord]) -> Self {
        let mut s = Self {
            count: records.len(),
            ..Self::default()
        };
        for r in records {
            s.mean_ms += r.timings.total_ms;
            s.max_ms = s.max_ms.max(r.timings.total_ms);
            s.ssdf_mean_ms += r.timings.ssdf_ms;
            s.search_mean_ms += r.timings.search_ms;
            s.corridor_mean_ms += r.timings.corridor_ms;
            s.optimize_mean_ms += r.timings.optimize_ms;
            match r.status {
                PlanStatus::Nominal => s.nominal += 1,
                PlanStatus::Degraded => s.degraded += 1,
                PlanStatus::Reused => s.reused += 1,
                PlanStatus::Hover => s.hover += 1,
            }
        }
        if s.count > 0 {
            let n = s.count as f64;
            s.mean_ms /= n;
            s.ssdf_mean_ms /= n;
            s.search_mean_ms /= n;
            s.corridor_mean_ms /= n;
            s.optimize_mean_ms /= n;
        }
        s
    }

    /// Whether any cycle fell back to reusing or hovering.
    pub fn fell_back(&self) -> bool {
        self.reused + self.hover > 0
    }
}

/// Summary written next to the time series.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub name: String,
    pub seed: u64,
    pub duration: f64,
    pub metrics: ScenarioMetrics,
    pub collisions: usize,
    pub min_separation: f64,
    pub replans: ReplanStats,
    pub messages_sent: usize,
    pub messages_dropped: usize,
    pub degraded: bool,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub log: VisibilityLog,
    pub replans: Vec<ReplanRecord>,
    /// Collision episodes with obstacles or between agents.
    pub collisions: usize,
    /// Smallest distance between two present agents at any sample.
    pub min_separation: f64,
    pub bus: BusStats,
    pub timeseries: String,
}

impl SimOutput {
    pub fn report(&self, cfg: &ScenarioConfig) -> Result<RunReport, SimError> {
        let replans = ReplanStats::from_records(&self.replans);
        Ok(RunReport {
            name: cfg.name.clone(),
            seed: cfg.seed,
            duration: cfg.duration,
            metrics: compute_metrics(&self.log)?,
            collisions: self.collisions,
            min_separation: self.min_separation,
            replans,
            messages_sent: self.bus.sent,
            messages_dropped: self.bus.dropped,
            degraded: replans.fell_back(),
        })
    }
}

struct Agent {
    fov: FovConfig,
    status: Membership,
    plan: Plan,
    /// Heading used when the plan carries no yaw trajectory.
    heading: f64,
    estimate: Option<TargetEstimate>,
    inbox: Vec<Measurement>,
    /// Latest trajectory per teammate with its send stamp.
    mates: BTreeMap<usize, (f64, StampedTrajectory)>,
    failures: usize,
    next_cycle: u64,
    rng: ChaCha8Rng,
}

impl Agent {
    fn state(&self, t: f64) -> [V3; 4] {
        std::array::from_fn(|d| self.plan.position.at3(t, d))
    }

    fn yaw(&self, t: f64) -> [f64; 2] {
        match &self.plan.yaw {
            Some(y) => [y.at(t, 0)[0], y.at(t, 1)[0]],
            None => [self.heading, 0.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Change {
    Appear(usize),
    Activate(usize),
    Drop(usize),
}

pub struct Simulation {
    cfg: ScenarioConfig,
    grid: OccupancyGrid,
    corridor: CorridorBuilder,
    target: TargetScript,
    agents: Vec<Agent>,
    bus: Bus,
    changes: Vec<(f64, Change)>,
    rules: VisibilityRules,
}

fn agent_seed(seed: u64, id: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (id as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let grid = generate_map(&cfg.map_spec())?;
        Ok(Self::with_grid(cfg, grid))
    }

    /// Uses `grid` as ground truth instead of generating one.
    pub fn with_grid(cfg: ScenarioConfig, grid: OccupancyGrid) -> Self {
        let corridor = CorridorBuilder::new(&grid, CorridorConfig::default());
        let target = TargetScript::new(&cfg.target);
        let (target0, _) = target.state(0.0);
        let agents = cfg
            .agents
            .iter()
            .enumerate()
            .map(|(id, a)| {
                let p = V3::from(a.start);
                let to_target = target0 - p;
                let heading = to_target.y.atan2(to_target.x);
                let state = [p, V3::zeros(), V3::zeros(), V3::zeros()];
                Agent {
                    fov: a.fov.resolve(),
                    status: if a.join_at.is_some() {
                        Membership::Pending
                    } else {
                        Membership::Active
                    },
                    plan: hover_plan(0.0, &state, heading, cfg.planner.horizon),
                    heading,
                    estimate: None,
                    inbox: Vec::new(),
                    mates: BTreeMap::new(),
                    failures: 0,
                    next_cycle: 0,
                    rng: ChaCha8Rng::seed_from_u64(agent_seed(cfg.seed, id)),
                }
            })
            .collect();
        let mut changes = Vec::new();
        for (id, a) in cfg.agents.iter().enumerate() {
            if let Some(at) = a.join_at {
                changes.push((at, Change::Appear(id)));
                changes.push((at + cfg.join_delay, Change::Activate(id)));
            }
        }
        for e in &cfg.events {
            let MembershipEvent::Drop { at, agent } = *e;
            changes.push((at, Change::Drop(agent)));
        }
        // stable: appear before activate for a zero delay
        changes.sort_by(|a, b| a.0.total_cmp(&b.0));
        let bus = Bus::new(
            cfg.bus.latency,
            cfg.bus.drop_probability,
            ChaCha8Rng::seed_from_u64(agent_seed(cfg.seed, usize::MAX - 1)),
        );
        let rules = VisibilityRules {
            block_radius: cfg.sensing.block_radius,
            too_close: cfg.params.d_lb,
            range: cfg.sensing.range,
        };
        Self {
            cfg,
            grid,
            corridor,
            target,
            agents,
            bus,
            changes,
            rules,
        }
    }

    pub fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }

    fn replan_time(&self, id: usize, cycle: u64) -> f64 {
        let p = self.cfg.period();
        (cycle as f64 + id as f64 / self.agents.len() as f64) * p
    }

    /// First cycle of `id` at or after `t`.
    fn first_cycle_from(&self, id: usize, t: f64) -> u64 {
        let p = self.cfg.period();
        let phase = id as f64 / self.agents.len() as f64;
        ((t / p - phase - 1e-9).ceil()).max(0.0) as u64
    }

    /// Runs the scenario to completion.
    pub fn run(mut self) -> SimOutput {
        let duration = self.cfg.duration;
        let dt = self.cfg.sample_interval;
        let n_samples = (duration / dt - 1e-9).ceil().max(0.0) as u64;
        let mut next_sample = 0u64;
        let mut next_change = 0usize;
        let mut out = SimOutput {
            log: VisibilityLog {
                dt,
                samples: Vec::new(),
            },
            replans: Vec::new(),
            collisions: 0,
            min_separation: f64::INFINITY,
            bus: BusStats::default(),
            timeseries: self.csv_header(),
        };
        let n = self.agents.len();
        let mut touching_obstacle = vec![false; n];
        let mut touching_pair = vec![vec![false; n]; n];
        loop {
            // candidates ranked by (time, class, agent)
            let mut best: Option<(f64, u8, usize)> = None;
            let mut offer = |t: f64, class: u8, id: usize| {
                let key = (t, class, id);
                let better = match best {
                    None => true,
                    Some(b) => t
                        .total_cmp(&b.0)
                        .then(class.cmp(&b.1))
                        .then(id.cmp(&b.2))
                        .is_lt(),
                };
                if better {
                    best = Some(key);
                }
            };
            if let Some((t, _)) = self.changes.get(next_change) {
                offer(*t, 0, 0);
            }
            if let Some(t) = self.bus.next_due() {
                offer(t, 1, 0);
            }
            if next_sample < n_samples {
                offer(next_sample as f64 * dt, 2, 0);
            }
            for (id, a) in self.agents.iter().enumerate() {
                if a.status.present() {
                    offer(self.replan_time(id, a.next_cycle), 3, id);
                }
            }
            let Some((t, class, id)) = best else { break };
            if t >= duration {
                break;
            }
            match class {
                0 => {
                    let (_, change) = self.changes[next_change];
                    next_change += 1;
                    self.apply(t, change);
                }
                1 => self.deliver(t),
                2 => {
                    next_sample += 1;
                    self.sample(t, &mut out, &mut touching_obstacle, &mut touching_pair);
                }
                _ => {
                    let record = self.cycle(t, id);
                    out.replans.push(record);
                }
            }
        }
        out.bus = self.bus.stats;
        out
    }

    fn apply(&mut self, t: f64, change: Change) {
        match change {
            Change::Appear(id) => {
                if self.agents[id].status == Membership::Pending {
                    self.agents[id].status = Membership::Joining;
                    self.agents[id].next_cycle = self.first_cycle_from(id, t);
                    log::info!("agent {id} appears at {t:.2}");
                }
            }
            Change::Activate(id) => {
                if self.agents[id].status == Membership::Joining {
                    self.agents[id].status = Membership::Active;
                    log::info!("agent {id} completes calibration at {t:.2}");
                    let occupied = self.grid.occupied_count();
                    let receivers = self.active_ids();
                    self.bus.broadcast(
                        BusMessage {
                            sender: id,
                            sent: t,
                            payload: Payload::MapDelta { occupied },
                        },
                        receivers,
                    );
                }
            }
            Change::Drop(id) => {
                self.agents[id].status = Membership::Dropped;
                self.bus.purge(id);
                log::info!("agent {id} drops at {t:.2}");
            }
        }
    }

    fn active_ids(&self) -> Vec<usize> {
        (0..self.agents.len())
            .filter(|&i| self.agents[i].status == Membership::Active)
            .collect()
    }

    fn deliver(&mut self, t: f64) {
        for d in self.bus.take_due(t) {
            let agent = &mut self.agents[d.receiver];
            if agent.status != Membership::Active {
                continue;
            }
            let sender = d.message.sender;
            match d.message.payload {
                Payload::Trajectory(traj) => {
                    let newer = agent
                        .mates
                        .get(&sender)
                        .is_none_or(|(s, _)| d.message.sent >= *s);
                    if newer {
                        agent.mates.insert(sender, (d.message.sent, traj));
                    }
                }
                Payload::Measurement(m) => agent.inbox.push(m),
                Payload::MapDelta { .. } => {}
            }
        }
    }

    fn positions_except(&self, t: f64, id: usize) -> Vec<V3> {
        self.agents
            .iter()
            .enumerate()
            .filter(|(j, a)| *j != id && a.status.present())
            .map(|(_, a)| a.plan.position.at3(t, 0))
            .collect()
    }

    fn cycle(&mut self, t: f64, id: usize) -> ReplanRecord {
        let truth = self.target.state(t).0;
        let others = self.positions_except(t, id);
        let status = self.agents[id].status;
        let state = self.agents[id].state(t);
        let yaw = self.agents[id].yaw(t);
        let fov = self.agents[id].fov;

        // sensing and sharing
        let seen = visibility::evaluate(
            &self.grid,
            &self.rules,
            &fov,
            &state[0],
            yaw[0],
            &truth,
            &others,
        )
        .is_none();
        if seen {
            let sigma = self.cfg.sensing.sigma;
            let rng = &mut self.agents[id].rng;
            let noise = match Normal::new(0.0, sigma) {
                Ok(n) => V3::new(n.sample(rng), n.sample(rng), n.sample(rng)),
                Err(_) => V3::zeros(),
            };
            let m = Measurement {
                position: truth + noise,
                sigma: sigma.max(1e-3),
                stamp: t,
            };
            self.agents[id].inbox.push(m);
            if status == Membership::Active {
                let receivers = self.active_ids();
                self.bus.broadcast(
                    BusMessage {
                        sender: id,
                        sent: t,
                        payload: Payload::Measurement(m),
                    },
                    receivers,
                );
            }
        }

        // constraint sets
        let stale_after = self.cfg.stale_after();
        let mut mate_ids = Vec::new();
        let mut teammates = Vec::new();
        if status == Membership::Active {
            for (&j, (sent, traj)) in &self.agents[id].mates {
                if t - sent <= stale_after + 1e-9 {
                    mate_ids.push(j);
                    teammates.push(traj.clone());
                }
            }
        }
        let obstacles: Vec<StampedTrajectory> = if status == Membership::Joining {
            self.agents
                .iter()
                .enumerate()
                .filter(|(j, a)| *j != id && a.status.present())
                .map(|(_, a)| a.plan.position.clone())
                .collect()
        } else {
            Vec::new()
        };

        // measurements not older than the estimate
        let filter = self.cfg.planner.filter;
        let agent = &mut self.agents[id];
        let mut inbox = std::mem::take(&mut agent.inbox);
        inbox.sort_by(|a, b| a.stamp.total_cmp(&b.stamp));
        let mut base = agent.estimate.clone();
        if base.is_none() && !inbox.is_empty() {
            let first = inbox.remove(0);
            base = Some(TargetEstimate::new(
                first.position,
                V3::zeros(),
                first.stamp,
                &filter,
            ));
        }
        if let Some(b) = &base {
            inbox.retain(|m| m.stamp >= b.stamp);
        }

        let agent = &self.agents[id];
        let ctx = AgentContext {
            now: t,
            state,
            yaw,
            fov,
            estimate: base.as_ref(),
            measurements: &inbox,
            grid: &self.grid,
            corridor: &self.corridor,
            teammates: &teammates,
            obstacles: &obstacles,
            previous: Some(&agent.plan),
            failures: agent.failures,
        };
        let result = replan(&ctx, &self.cfg.params, &self.cfg.weights, &self.cfg.planner);

        let agent = &mut self.agents[id];
        agent.next_cycle += 1;
        agent.estimate = result.estimate.clone().or(base);
        agent.failures = match result.status {
            PlanStatus::Reused | PlanStatus::Hover => agent.failures + 1,
            _ => 0,
        };
        if result.status != PlanStatus::Reused {
            agent.plan = result.plan.clone();
        }
        if status == Membership::Active {
            let receivers = self.active_ids();
            self.bus.broadcast(
                BusMessage {
                    sender: id,
                    sent: t,
                    payload: Payload::Trajectory(self.agents[id].plan.position.clone()),
                },
                receivers,
            );
        }
        ReplanRecord {
            t,
            agent: id,
            membership: status,
            status: result.status,
            timings: result.timings,
            report: result.report,
            teammates: mate_ids,
            failure: result.failure,
        }
    }

    fn sample(
        &mut self,
        t: f64,
        out: &mut SimOutput,
        touching_obstacle: &mut [bool],
        touching_pair: &mut [Vec<bool>],
    ) {
        let truth = self.target.state(t).0;
        let n = self.agents.len();
        let body = self.cfg.sensing.body_radius;
        let poses: Vec<(V3, f64)> = self
            .agents
            .iter()
            .map(|a| (a.plan.position.at3(t, 0), a.yaw(t)[0]))
            .collect();
        let mut losses: Vec<Option<LossCause>> = vec![None; n];
        let mut sample = Sample {
            t,
            target: truth,
            agents: vec![None; n],
        };
        for i in 0..n {
            let a = &self.agents[i];
            if !a.status.present() {
                touching_obstacle[i] = false;
                continue;
            }
            let others: Vec<V3> = (0..n)
                .filter(|&j| j != i && self.agents[j].status.present())
                .map(|j| poses[j].0)
                .collect();
            let (p, yaw) = poses[i];
            losses[i] =
                visibility::evaluate(&self.grid, &self.rules, &a.fov, &p, yaw, &truth, &others);
            if a.status == Membership::Active {
                sample.agents[i] = Some(TrackerSample {
                    position: p,
                    loss: losses[i],
                });
            }
            let mut hit = false;
            self.grid
                .for_each_occupied_near(&p, body, |_, _| hit = true);
            if hit && !touching_obstacle[i] {
                out.collisions += 1;
                log::warn!("agent {i} hits an obstacle at t={t:.2}");
            }
            touching_obstacle[i] = hit;
            for j in i + 1..n {
                if !self.agents[j].status.present() {
                    touching_pair[i][j] = false;
                    continue;
                }
                let d = (poses[j].0 - p).norm();
                out.min_separation = out.min_separation.min(d);
                let close = d < 2.0 * body;
                if close && !touching_pair[i][j] {
                    out.collisions += 1;
                    log::warn!("agents {i} and {j} collide at t={t:.2}");
                }
                touching_pair[i][j] = close;
            }
        }
        self.csv_row(&mut out.timeseries, t, &truth, &poses, &losses);
        out.log.samples.push(sample);
    }

    fn csv_header(&self) -> String {
        let mut h = String::from("t,target_x,target_y,target_z");
        for i in 0..self.agents.len() {
            for f in ["status", "x", "y", "z", "yaw", "visible", "loss"] {
                let _ = write!(h, ",a{i}_{f}");
            }
        }
        h.push('\n');
        h
    }

    fn csv_row(
        &self,
        buf: &mut String,
        t: f64,
        target: &V3,
        poses: &[(V3, f64)],
        losses: &[Option<LossCause>],
    ) {
        let _ = write!(
            buf,
            "{t:.3},{:.4},{:.4},{:.4}",
            target.x, target.y, target.z
        );
        for (i, a) in self.agents.iter().enumerate() {
            let (p, yaw) = poses[i];
            let present = a.status.present();
            let visible = present && losses[i].is_none();
            let loss = match (present, losses[i]) {
                (true, Some(c)) => c.name(),
                _ => "",
            };
            let _ = write!(
                buf,
                ",{},{:.4},{:.4},{:.4},{:.4},{},{}",
                a.status.code(),
                p.x,
                p.y,
                p.z,
                yaw,
                u8::from(visible),
                loss
            );
        }
        buf.push('\n');
    }
}

/// Convenience wrapper: builds, runs and summarises a scenario.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<(SimOutput, RunReport), SimError> {
    let out = Simulation::new(cfg.clone())?.run();
    let report = out.report(cfg)?;
    Ok((out, report))
}
