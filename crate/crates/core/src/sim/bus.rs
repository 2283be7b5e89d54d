//! Lossy broadcast channel with fixed latency.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::planner::StampedTrajectory;
use crate::prediction::Measurement;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Trajectory(StampedTrajectory),
    Measurement(Measurement),
    /// Shared-mapping update, carried at the semantic level only.
    MapDelta {
        occupied: usize,
    },
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Trajectory(_) => "trajectory",
            Payload::Measurement(_) => "target_measurement",
            Payload::MapDelta { .. } => "map_delta",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BusMessage {
    pub sender: usize,
    pub sent: f64,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub at: f64,
    pub receiver: usize,
    pub message: BusMessage,
    seq: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BusStats {
    pub sent: usize,
    pub dropped: usize,
    pub delivered: usize,
    pub purged: usize,
}

#[derive(Debug, Clone)]
pub struct Bus {
    latency: f64,
    drop_probability: f64,
    pending: Vec<Delivery>,
    seq: u64,
    rng: ChaCha8Rng,
    pub stats: BusStats,
}

impl Bus {
    pub fn new(latency: f64, drop_probability: f64, rng: ChaCha8Rng) -> Self {
        Self {
            latency,
            drop_probability,
            pending: Vec::new(),
            seq: 0,
            rng,
            stats: BusStats::default(),
        }
    }

    /// Queues one copy per receiver; each copy is lost independently.
    pub fn broadcast(&mut self, message: BusMessage, receivers: impl IntoIterator<Item = usize>) {
        let at = message.sent + self.latency;
        for r in receivers {
            if r == message.sender {
                continue;
            }
            self.stats.sent += 1;
            if self.drop_probability > 0.0 && self.rng.random_bool(self.drop_probability) {
                self.stats.dropped += 1;
                continue;
            }
            self.pending.push(Delivery {
                at,
                receiver: r,
                message: message.clone(),
                seq: self.seq,
            });
            self.seq += 1;
        }
    }

    pub fn next_due(&self) -> Option<f64> {
        self.pending.iter().map(|d| d.at).min_by(f64::total_cmp)
    }

    /// Removes and returns every delivery due at or before `t`, in due
    /// order then send order.
    pub fn take_due(&mut self, t: f64) -> Vec<Delivery> {
        let (mut due, rest): (Vec<_>, Vec<_>) = self.pending.drain(..).partition(|d| d.at <= t);
        self.pending = rest;
        due.sort_by(|a, b| a.at.total_cmp(&b.at).then(a.seq.cmp(&b.seq)));
        self.stats.delivered += due.len();
        due
    }

    /// Forgets every undelivered message from or to `agent`.
    pub fn purge(&mut self, agent: usize) {
        let before = self.pending.len();
        self.pending
            .retain(|d| d.message.sender != agent && d.receiver != agent);
        self.stats.purged += before - self.pending.len();
    }

    pub fn in_flight(&self) -> usize {
        self.pending.len()
    }
}
