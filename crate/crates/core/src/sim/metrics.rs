//! Tracking metrics from uniformly sampled visibility logs.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::visibility::LossCause;

type V3 = Vector3<f64>;

/// State of one tracked agent at one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerSample {
    pub position: V3,
    pub loss: Option<LossCause>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub target: V3,
    /// Indexed by agent id; `None` for agents not tracking at this time.
    pub agents: Vec<Option<TrackerSample>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VisibilityLog {
    pub dt: f64,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentLosses {
    pub agent: usize,
    /// Seconds without the target, keyed by cause.
    pub seconds: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    pub theta_avg: f64,
    pub theta_wrst: usize,
    /// Percentage of time every tracking agent sees the target.
    pub gamma_vis: f64,
    pub d_avg: f64,
    pub duration: f64,
    pub losses: Vec<AgentLosses>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("no samples with tracking agents in the requested window")]
    Empty,
}

/// Metrics over samples with `t` in `[from, to)`, restricted to the agents
/// accepted by `keep`.
pub fn compute_metrics_filtered(
    log: &VisibilityLog,
    from: f64,
    to: f64,
    keep: impl Fn(usize) -> bool,
) -> Result<ScenarioMetrics, MetricsError> {
    let mut count = 0usize;
    let mut theta_sum = 0.0;
    let mut theta_min = usize::MAX;
    let mut full = 0usize;
    let mut d_sum = 0.0;
    let mut d_n = 0usize;
    let mut losses: BTreeMap<usize, BTreeMap<String, f64>> = BTreeMap::new();
    for s in log.samples.iter().filter(|s| s.t >= from && s.t < to) {
        let tracked: Vec<(usize, &TrackerSample)> = s
            .agents
            .iter()
            .enumerate()
            .filter_map(|(i, a)| a.as_ref().map(|a| (i, a)))
            .filter(|(i, _)| keep(*i))
            .collect();
        if tracked.is_empty() {
            continue;
        }
        count += 1;
        let seeing = tracked.iter().filter(|(_, a)| a.loss.is_none()).count();
        theta_sum += seeing as f64;
        theta_min = theta_min.min(seeing);
        if seeing == tracked.len() {
            full += 1;
        }
        for (i, a) in &tracked {
            d_sum += (a.position - s.target).norm();
            d_n += 1;
            let entry = losses.entry(*i).or_default();
            if let Some(c) = a.loss {
                *entry.entry(c.name().to_string()).or_default() += log.dt;
            }
        }
    }
    if count == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(ScenarioMetrics {
        theta_avg: theta_sum / count as f64,
        theta_wrst: theta_min,
        gamma_vis: 100.0 * full as f64 / count as f64,
        d_avg: d_sum / d_n as f64,
        duration: count as f64 * log.dt,
        losses: losses
            .into_iter()
            .map(|(agent, mut seconds)| {
                for c in LossCause::ALL {
                    seconds.entry(c.name().to_string()).or_insert(0.0);
                }
                AgentLosses { agent, seconds }
            })
            .collect(),
    })
}

pub fn compute_metrics(log: &VisibilityLog) -> Result<ScenarioMetrics, MetricsError> {
    compute_metrics_filtered(log, f64::NEG_INFINITY, f64::INFINITY, |_| true)
}
