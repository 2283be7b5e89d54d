//! Scenario description, parsed strictly from JSON.

use serde::{Deserialize, Serialize};

use crate::costs::{CostWeights, FovConfig, FovKind, TrackingParams};
use crate::planner::PlannerConfig;
use crate::worldmap::{ClearZone, MapKind, MapSpec, WallParams};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    /// JSON syntax or schema violation, with its 1-based location.
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    pub kind: MapKind,
    /// Size in meters; the grid spans `[0, extent]`.
    pub extent: [f64; 3],
    /// Obstacles per square meter.
    pub density: f64,
    #[serde(default = "default_resolution")]
    pub resolution: f64,
    #[serde(default = "default_tree_diameter")]
    pub tree_diameter: f64,
    #[serde(default)]
    pub walls: WallParams,
    /// Obstacle-free radius around the target route.
    #[serde(default = "default_route_clearance")]
    pub route_clearance: f64,
    /// Obstacle-free radius around every agent start.
    #[serde(default = "default_start_clearance")]
    pub start_clearance: f64,
    /// Extra obstacle-free zones.
    #[serde(default)]
    pub clear_zones: Vec<ClearZone>,
}

fn default_resolution() -> f64 {
    0.1
}
fn default_tree_diameter() -> f64 {
    1.0
}
fn default_route_clearance() -> f64 {
    1.0
}
fn default_start_clearance() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    /// Polyline visited at constant speed.
    pub waypoints: Vec<[f64; 3]>,
    pub speed: f64,
    /// Returns to the first waypoint and repeats.
    #[serde(default = "yes")]
    pub closed: bool,
}

fn yes() -> bool {
    true
}

/// Sensor choice: a preset name or a full description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FovSpec {
    Preset(FovKind),
    Custom(FovConfig),
}

impl FovSpec {
    pub fn resolve(&self) -> FovConfig {
        match self {
            FovSpec::Preset(FovKind::Omnidirectional) => FovConfig::omni(),
            FovSpec::Preset(FovKind::Conic) => FovConfig::conic(),
            FovSpec::Custom(c) => *c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub start: [f64; 3],
    #[serde(default = "omni")]
    pub fov: FovSpec,
    /// Time the agent appears and starts its calibration; absent means it
    /// is active from the start.
    #[serde(default)]
    pub join_at: Option<f64>,
}

fn omni() -> FovSpec {
    FovSpec::Preset(FovKind::Omnidirectional)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BusConfig {
    /// Delivery delay (s).
    pub latency: f64,
    pub drop_probability: f64,
}

impl Default for BusConfig {
    fn default() -> Self {
        Self {
            latency: 0.0,
            drop_probability: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensingConfig {
    /// Standard deviation of target position measurements (m).
    pub sigma: f64,
    /// Detection range (m).
    pub range: f64,
    /// Teammate body radius that blocks lines of sight (m).
    pub block_radius: f64,
    /// Agent body radius used for collision accounting (m).
    pub body_radius: f64,
}

impl Default for SensingConfig {
    fn default() -> Self {
        Self {
            sigma: 0.05,
            range: 15.0,
            block_radius: 0.3,
            body_radius: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum MembershipEvent {
    Drop { at: f64, agent: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    /// Simulated time (s).
    pub duration: f64,
    pub map: MapConfig,
    pub target: TargetConfig,
    pub agents: Vec<AgentConfig>,
    #[serde(default)]
    pub bus: BusConfig,
    #[serde(default)]
    pub sensing: SensingConfig,
    #[serde(default)]
    pub params: TrackingParams,
    #[serde(default)]
    pub weights: CostWeights,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default = "default_rate")]
    pub replan_rate: f64,
    #[serde(default = "default_sample")]
    pub sample_interval: f64,
    /// Calibration time of a joining agent (s).
    #[serde(default = "default_join_delay")]
    pub join_delay: f64,
    /// Age after which a teammate's trajectory is ignored; defaults to one
    /// and a half replanning periods plus the bus latency.
    #[serde(default)]
    pub stale_timeout: Option<f64>,
    #[serde(default)]
    pub events: Vec<MembershipEvent>,
}

fn default_rate() -> f64 {
    15.0
}
fn default_sample() -> f64 {
    0.05
}
fn default_join_delay() -> f64 {
    5.0
}

impl ScenarioConfig {
    /// Parses and validates a scenario; unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialises")
    }

    pub fn period(&self) -> f64 {
        1.0 / self.replan_rate
    }

    pub fn stale_after(&self) -> f64 {
        self.stale_timeout
            .unwrap_or(1.5 * self.period() + self.bus.latency)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.duration > 0.0) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        if !(self.replan_rate > 0.0) || !(self.sample_interval > 0.0) {
            return bad("replan_rate and sample_interval must be positive".into());
        }
        if self.target.waypoints.is_empty() || !(self.target.speed >= 0.0) {
            return bad("target needs waypoints and a nonnegative speed".into());
        }
        if !(0.0..=1.0).contains(&self.bus.drop_probability) || !(self.bus.latency >= 0.0) {
            return bad("bus latency must be >= 0 and drop probability in [0, 1]".into());
        }
        if !(self.sensing.sigma >= 0.0) || !(self.join_delay >= 0.0) {
            return bad("sensing sigma and join delay must be nonnegative".into());
        }
        self.params.validate().map_err(ConfigError::Invalid)?;
        self.weights.validate().map_err(ConfigError::Invalid)?;
        self.planner.validate().map_err(ConfigError::Invalid)?;
        for a in &self.agents {
            a.fov.resolve().validate().map_err(ConfigError::Invalid)?;
        }
        for e in &self.events {
            let MembershipEvent::Drop { agent, .. } = e;
            if *agent >= self.agents.len() {
                return bad(format!("event refers to unknown agent {agent}"));
            }
        }
        Ok(())
    }

    /// Map generation input, with the route and the starts kept clear.
    pub fn map_spec(&self) -> MapSpec {
        let m = &self.map;
        let mut spec = MapSpec::new(m.kind, self.seed, m.extent, m.density);
        spec.resolution = m.resolution;
        spec.tree_diameter = m.tree_diameter;
        spec.tree_height = m.extent[2];
        spec.walls = m.walls;
        spec.clear_zones = m.clear_zones.clone();
        let wp = &self.target.waypoints;
        let mut legs: Vec<([f64; 3], [f64; 3])> = wp.windows(2).map(|w| (w[0], w[1])).collect();
        if self.target.closed && wp.len() > 1 {
            legs.push((wp[wp.len() - 1], wp[0]));
        }
        if wp.len() == 1 {
            legs.push((wp[0], wp[0]));
        }
        for (a, b) in legs {
            spec.clear_zones.push(ClearZone {
                a: [a[0], a[1]],
                b: [b[0], b[1]],
                radius: m.route_clearance,
            });
        }
        for a in &self.agents {
            spec.clear_zones
                .push(ClearZone::disc([a.start[0], a.start[1]], m.start_clearance));
        }
        spec
    }

    /// The bundled forest loop: four trackers around a target circling a
    /// 20 m × 10 m rectangle.
    pub fn forest(seed: u64, density: f64, speed: f64, duration: f64) -> Self {
        let z = 1.0;
        let start = [5.0, 5.0, z];
        let agents = (0..4)
            .map(|i| {
                let a = std::f64::consts::FRAC_PI_4 + i as f64 * std::f64::consts::FRAC_PI_2;
                AgentConfig {
                    start: [start[0] + 2.0 * a.cos(), start[1] + 2.0 * a.sin(), z],
                    fov: omni(),
                    join_at: None,
                }
            })
            .collect();
        Self {
            name: "forest".into(),
            seed,
            duration,
            map: MapConfig {
                kind: MapKind::Forest,
                extent: [30.0, 20.0, 2.5],
                density,
                resolution: default_resolution(),
                tree_diameter: default_tree_diameter(),
                walls: WallParams::default(),
                route_clearance: default_route_clearance(),
                start_clearance: default_start_clearance(),
                clear_zones: Vec::new(),
            },
            target: TargetConfig {
                waypoints: vec![start, [25.0, 5.0, z], [25.0, 15.0, z], [5.0, 15.0, z]],
                speed,
                closed: true,
            },
            agents,
            bus: BusConfig::default(),
            sensing: SensingConfig::default(),
            params: TrackingParams::default(),
            weights: CostWeights::default(),
            planner: PlannerConfig::default(),
            replan_rate: default_rate(),
            sample_interval: default_sample(),
            join_delay: default_join_delay(),
            stale_timeout: None,
            events: Vec::new(),
        }
    }
}
