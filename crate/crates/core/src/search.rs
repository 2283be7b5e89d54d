//! Kinodynamic front-end: best-first search over double-integrator
//! primitives aligned with the target prediction stamps.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::costs::{self, CostWeights, TrackingParams};
use crate::prediction::TargetPrediction;
use crate::ssdf::SsdfVolume;
use crate::worldmap::CorridorBuilder;

type V3 = Vector3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Position lattice for duplicate detection (m); zero disables bucketing.
    pub bucket_pos: f64,
    /// Velocity lattice for duplicate detection (m/s).
    pub bucket_vel: f64,
    pub max_expansions: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            bucket_pos: 0.2,
            bucket_vel: 0.5,
            max_expansions: 4000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchNode {
    pub p: V3,
    pub v: V3,
    pub depth: usize,
    pub g: f64,
    pub parent: Option<usize>,
    /// Control that produced this node from its parent.
    pub u: V3,
}

/// The 27 children of `node` under accelerations in `{-a, 0, a}³`.
pub fn expand(node: &SearchNode, a_max: f64, step: f64) -> Vec<SearchNode> {
    // zero control first so that it wins ties
    let levels = [0.0, -a_max, a_max];
    let mut out = Vec::with_capacity(27);
    for &ax in &levels {
        for &ay in &levels {
            for &az in &levels {
                let u = V3::new(ax, ay, az);
                out.push(SearchNode {
                    p: node.p + node.v * step + u * (0.5 * step * step),
                    v: node.v + u * step,
                    depth: node.depth + 1,
                    g: node.g,
                    parent: None,
                    u,
                });
            }
        }
    }
    out
}

/// Feasibility of a child reached from `from`: free segment box in the
/// inflated map (raw map when `from` lies in the inflated zone), speed
/// limit, and teammate clearance.
pub fn admissible(
    from: &V3,
    child: &SearchNode,
    map: &CorridorBuilder,
    teammates: &[V3],
    params: &TrackingParams,
) -> bool {
    if child.v.norm() > params.v_max {
        return false;
    }
    if teammates.iter().any(|q| (child.p - q).norm() <= params.r_s) {
        return false;
    }
    let grid = map.inflated();
    let (Some(a), Some(b)) = (grid.index_of(from), grid.index_of(&child.p)) else {
        return false;
    };
    let lo = [a[0].min(b[0]), a[1].min(b[1]), a[2].min(b[2])];
    let hi = [a[0].max(b[0]), a[1].max(b[1]), a[2].max(b[2])];
    // from inside the inflated zone only raw obstacles block
    map.box_free(lo, hi) || (!map.box_free(a, a) && map.raw_box_free(lo, hi))
}

/// Retains the admissible children.
pub fn prune(
    from: &V3,
    children: Vec<SearchNode>,
    map: &CorridorBuilder,
    teammates: &[V3],
    params: &TrackingParams,
) -> Vec<SearchNode> {
    children
        .into_iter()
        .filter(|c| admissible(from, c, map, teammates, params))
        .collect()
}

/// Everything the search reads.
pub struct SearchProblem<'a> {
    pub start_p: V3,
    pub start_v: V3,
    pub prediction: &'a TargetPrediction,
    /// One volume per prediction stamp; empty disables the occlusion term.
    pub volumes: &'a [SsdfVolume],
    /// Teammate positions at each prediction stamp.
    pub teammates: &'a [Vec<V3>],
    pub map: &'a CorridorBuilder,
    pub params: TrackingParams,
    pub weights: CostWeights,
    pub config: SearchConfig,
}

impl SearchProblem<'_> {
    fn mates(&self, k: usize) -> &[V3] {
        self.teammates.get(k).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Weighted running cost of a node at stamp `k`.
    pub fn node_cost(&self, p: &V3, k: usize) -> f64 {
        let w = &self.weights;
        let target = &self.prediction.points[k];
        let mates = self.mates(k);
        let mut g = 0.0;
        if w.visibility > 0.0 {
            if let Some(vol) = self.volumes.get(k) {
                g += w.visibility * costs::visibility(vol, p).0;
            }
        }
        g += w.distance * costs::distance(p, target, &self.params).0;
        if w.teammate_occlusion > 0.0 {
            g += w.teammate_occlusion
                * costs::teammate_occlusion(p, target, mates, self.params.theta_c).0;
        }
        if w.formation > 0.0 {
            // clamped so node costs stay nonnegative
            let reach = 2.0 * self.params.d_ub;
            let e: f64 = mates
                .iter()
                .map(|q| (reach / (p - q).norm().max(1e-9)).ln().max(0.0))
                .sum();
            g += w.formation * self.params.k_e * e;
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontEndPath {
    /// `(position, velocity)` from the root to the deepest node.
    pub states: Vec<(V3, V3)>,
    pub controls: Vec<V3>,
    pub stamps: Vec<f64>,
    pub cost: f64,
    /// Set when the horizon was not reached.
    pub degraded: bool,
    pub expansions: usize,
}

impl FrontEndPath {
    pub fn positions(&self) -> Vec<V3> {
        self.states.iter().map(|s| s.0).collect()
    }
}

struct Open {
    f: f64,
    depth: usize,
    id: usize,
}

impl PartialEq for Open {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Open {}
impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Open {
    // max-heap: lower f first, then deeper, then older
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then(self.depth.cmp(&other.depth))
            .then(other.id.cmp(&self.id))
    }
}

fn bucket(n: &SearchNode, cfg: &SearchConfig) -> (usize, [i64; 6]) {
    let q = |x: f64, s: f64| (x / s).floor() as i64;
    (
        n.depth,
        [
            q(n.p.x, cfg.bucket_pos),
            q(n.p.y, cfg.bucket_pos),
            q(n.p.z, cfg.bucket_pos),
            q(n.v.x, cfg.bucket_vel),
            q(n.v.y, cfg.bucket_vel),
            q(n.v.z, cfg.bucket_vel),
        ],
    )
}

/// Best-first search ordered by `g + w_h (T_p - t_k)`.
pub fn search(problem: &SearchProblem) -> FrontEndPath {
    let pred = problem.prediction;
    let horizon = pred.n_steps();
    let step = pred.step;
    let cfg = problem.config;
    let bucketing = cfg.bucket_pos > 0.0 && cfg.bucket_vel > 0.0;

    let mut nodes = vec![SearchNode {
        p: problem.start_p,
        v: problem.start_v,
        depth: 0,
        g: 0.0,
        parent: None,
        u: V3::zeros(),
    }];
    let mut best_in: HashMap<(usize, [i64; 6]), usize> = HashMap::new();
    let mut open = BinaryHeap::new();
    let h = |depth: usize| problem.weights.heuristic * (horizon - depth) as f64 * step;
    open.push(Open {
        f: h(0),
        depth: 0,
        id: 0,
    });
    let mut expansions = 0;
    let mut goal = None;

    while let Some(Open { id, .. }) = open.pop() {
        let node = nodes[id];
        if bucketing && best_in.get(&bucket(&node, &cfg)).is_some_and(|&b| b != id) {
            continue;
        }
        if node.depth == horizon {
            goal = Some(id);
            break;
        }
        if expansions >= cfg.max_expansions {
            break;
        }
        expansions += 1;
        let k = node.depth + 1;
        for mut child in prune(
            &node.p,
            expand(&node, problem.params.a_max, step),
            problem.map,
            problem.mates(k),
            &problem.params,
        ) {
            child.g = node.g + problem.node_cost(&child.p, k);
            child.parent = Some(id);
            let cid = nodes.len();
            if bucketing {
                let key = bucket(&child, &cfg);
                match best_in.get(&key) {
                    Some(&b) if nodes[b].g <= child.g => continue,
                    _ => {
                        best_in.insert(key, cid);
                    }
                }
            }
            nodes.push(child);
            open.push(Open {
                f: child.g + h(k),
                depth: k,
                id: cid,
            });
        }
    }

    let degraded = goal.is_none();
    let end = goal.unwrap_or_else(|| {
        // deepest node, cheapest among equals
        (0..nodes.len())
            .min_by(|&a, &b| {
                nodes[b]
                    .depth
                    .cmp(&nodes[a].depth)
                    .then(nodes[a].g.total_cmp(&nodes[b].g))
            })
            .expect("root exists")
    });
    let mut chain = vec![end];
    while let Some(p) = nodes[*chain.last().expect("nonempty")].parent {
        chain.push(p);
    }
    chain.reverse();
    FrontEndPath {
        states: chain.iter().map(|&i| (nodes[i].p, nodes[i].v)).collect(),
        controls: chain.iter().skip(1).map(|&i| nodes[i].u).collect(),
        stamps: chain
            .iter()
            .map(|&i| nodes[i].depth as f64 * step)
            .collect(),
        cost: nodes[end].g,
        degraded,
        expansions,
    }
}
