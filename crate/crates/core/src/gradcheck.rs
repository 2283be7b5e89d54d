//! Finite-difference audit of every analytic gradient, plus randomised
//! desk-scale fixtures for the back-end.

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::costs::{self, CostWeights, FovConfig, FovKind, TrackingParams};
use crate::minco::{basis_row, Minco, PolyTrajectory};
use crate::planner::{time_map, OptProblem, OptSettings, StampedTrajectory};
use crate::prediction::TargetPrediction;
use crate::ssdf::{build_volumes, to_spherical, SsdfConfig, SsdfVolume};
use crate::worldmap::{OccupancyGrid, Polyhedron};

type V3 = Vector3<f64>;

/// Names of the audited gradients, in report order.
pub const CHECKS: [&str; 11] = [
    "visibility",
    "fov",
    "distance",
    "teammate_occlusion",
    "formation",
    "corridor",
    "dynamics",
    "swarm_clearance",
    "minco_propagation",
    "time_map",
    "objective",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub instances: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct AuditConfig {
    pub instances: usize,
    pub seed: u64,
    pub tolerance: f64,
    /// Perturbs the assembled objective gradient; a negative control.
    pub corrupt: bool,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            instances: 100,
            seed: 7,
            tolerance: 1e-4,
            corrupt: false,
        }
    }
}

/// `max|a - n| / max(|a|, |n|)` over the components, with a tiny floor.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(1e-8, f64::max);
    diff / scale
}

/// Central differences of `f` at `x` with step `h · max(1, |x_i|)`.
pub fn central_differences<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            let step = h * x[i].abs().max(1.0);
            y[i] = x[i] + step;
            let a = f(&y);
            y[i] = x[i] - step;
            let b = f(&y);
            y[i] = x[i];
            (a - b) / (2.0 * step)
        })
        .collect()
}

fn v3(x: &[f64]) -> V3 {
    V3::new(x[0], x[1], x[2])
}

fn rand_v3(rng: &mut ChaCha8Rng, r: f64) -> V3 {
    V3::new(
        rng.random_range(-r..r),
        rng.random_range(-r..r),
        rng.random_range(-r..r),
    )
}

/// Runs every check and returns one result per name in [`CHECKS`].
pub fn run_audit(cfg: &AuditConfig) -> Vec<CheckResult> {
    CHECKS
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64));
            let n = cfg.instances;
            let err = match *name {
                "visibility" => check_visibility(&mut rng, n),
                "fov" => check_point_cost(&mut rng, n, fov_case),
                "distance" => check_point_cost(&mut rng, n, distance_case),
                "teammate_occlusion" => check_point_cost(&mut rng, n, occlusion_case),
                "formation" => check_point_cost(&mut rng, n, formation_case),
                "corridor" => check_point_cost(&mut rng, n, corridor_case),
                "dynamics" => check_point_cost(&mut rng, n, dynamics_case),
                "swarm_clearance" => check_point_cost(&mut rng, n, swarm_case),
                "minco_propagation" => check_minco(&mut rng, n),
                "time_map" => check_time_map(&mut rng, n),
                "objective" => check_objective(&mut rng, n, cfg.corrupt),
                _ => unreachable!(),
            };
            CheckResult {
                name: name.to_string(),
                instances: n,
                max_rel_error: err,
                tolerance: cfg.tolerance,
                passed: err.is_finite() && err <= cfg.tolerance,
            }
        })
        .collect()
}

/// A scalar function of a flat input with its analytic gradient.
type Case = Box<dyn Fn(&[f64]) -> (f64, Vec<f64>)>;

fn check_point_cost(
    rng: &mut ChaCha8Rng,
    instances: usize,
    make: fn(&mut ChaCha8Rng) -> (Case, Vec<f64>),
) -> f64 {
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < instances {
        let (f, x) = make(rng);
        let (_, g) = f(&x);
        if g.iter().all(|v| *v == 0.0) {
            // inactive instance carries no information
            continue;
        }
        let fd = central_differences(|y| f(y).0, &x, 1e-6);
        worst = worst.max(relative_error(&g, &fd));
        done += 1;
    }
    worst
}

fn fov_case(rng: &mut ChaCha8Rng) -> (Case, Vec<f64>) {
    let mut cfg = if rng.random_bool(0.5) {
        FovConfig::conic()
    } else {
        FovConfig::omni()
    };
    cfg.offset = rand_v3(rng, 0.1);
    let target = rand_v3(rng, 3.0);
    let x = {
        let p = rand_v3(rng, 3.0);
        vec![p.x, p.y, p.z, rng.random_range(-3.0..3.0)]
    };
    let f = move |x: &[f64]| {
        let c = costs::fov(&cfg, &v3(x), x[3], &target);
        (
            c.value,
            vec![c.grad_p.x, c.grad_p.y, c.grad_p.z, c.grad_yaw],
        )
    };
    (Box::new(f), x)
}

fn distance_case(rng: &mut ChaCha8Rng) -> (Case, Vec<f64>) {
    let params = TrackingParams::default();
    let target = rand_v3(rng, 2.0);
    let dir = rand_v3(rng, 1.0).normalize();
    let p = target + dir * rng.random_range(0.2..5.0);
    let f = move |x: &[f64]| {
        let (v, g) = costs::distance(&v3(x), &target, &params);
        (v, g.as_slice().to_vec())
    };
    (Box::new(f), p.as_slice().to_vec())
}

fn occlusion_case(rng: &mut ChaCha8Rng) -> (Case, Vec<f64>) {
    let target = rand_v3(rng, 2.0);
    let p = target + rand_v3(rng, 3.0);
    // teammates near the ego bearing so the term is active
    let mates: Vec<V3> = (0..3)
        .map(|_| target + (p - target) * rng.random_range(0.5..1.5) + rand_v3(rng, 0.8))
        .collect();
    let f = move |x: &[f64]| {
        let (v, g) = costs::teammate_occlusion(&v3(x), &target, &mates, 0.6);
        (v, g.as_slice().to_vec())
    };
    (Box::new(f), p.as_slice().to_vec())
}

fn formation_case(rng: &mut ChaCha8Rng) -> (Case, Vec<f64>) {
    let mates: Vec<V3> = (0..rng.random_range(1..5))
        .map(|_| rand_v3(rng, 3.0))
        .collect();
    let p = rand_v3(rng, 3.0);
    let f = move |x: &[f64]| {
        let (v, g) = costs::formation(&v3(x), &mates, 1.0);
        (v, g.as_slice().to_vec())
    };
    (Box::new(f), p.as_slice().to_vec())
}

fn corridor_case(rng: &mut ChaCha8Rng) -> (Case, Vec<f64>) {
    let lo = rand_v3(rng, 1.0);
    let hi = lo
        + V3::new(
            rng.random_range(0.2..2.0),
            rng.random_range(0.2..2.0),
            rng.random_range(0.2..2.0),
        );
    let poly = Polyhedron::from_box(lo, hi);
    let p = (lo + hi) * 0.5 + rand_v3(rng, 2.0);
    let f = move |x: &[f64]| {
        let (v, g) = costs::corridor(&poly, &v3(x));
        (v, g.as_slice().to_vec())
    };
    (Box::new(f), p.as_slice().to_vec())
}

fn dynamics_case(rng: &mut ChaCha8Rng) -> (Case, Vec<f64>) {
    let limit = rng.random_range(0.5..3.0);
    let v = rand_v3(rng, 3.0);
    let f = move |x: &[f64]| {
        let (c, g) = costs::dynamics(&v3(x), limit);
        (c, g.as_slice().to_vec())
    };
    (Box::new(f), v.as_slice().to_vec())
}

fn swarm_case(rng: &mut ChaCha8Rng) -> (Case, Vec<f64>) {
    let pi = rand_v3(rng, 1.0);
    let pj = pi + rand_v3(rng, 0.8);
    let f = move |x: &[f64]| {
        let (c, gi, gj) = costs::swarm_clearance(&v3(x), &v3(&x[3..]), 1.0);
        (c, [gi.as_slice(), gj.as_slice()].concat())
    };
    (Box::new(f), [pi.as_slice(), pj.as_slice()].concat())
}

fn check_visibility(rng: &mut ChaCha8Rng, instances: usize) -> f64 {
    let mut grid =
        OccupancyGrid::new(V3::new(-6.0, -6.0, -6.0), 0.1, [120, 120, 120]).expect("grid");
    for _ in 0..8 {
        let c = rand_v3(rng, 4.0);
        if c.norm() < 1.0 {
            continue;
        }
        let r: f64 = rng.random_range(0.2..0.6);
        let n = (r / 0.1_f64).ceil() as i64;
        if let Some(ci) = grid.index_of(&c) {
            for dx in -n..=n {
                for dy in -n..=n {
                    for dz in -n..=n {
                        let idx = [ci[0] as i64 + dx, ci[1] as i64 + dy, ci[2] as i64 + dz];
                        if idx.iter().all(|v| (0..120).contains(v))
                            && ((dx * dx + dy * dy + dz * dz) as f64) * 0.01 <= r * r
                        {
                            grid.set_occupied(
                                [idx[0] as usize, idx[1] as usize, idx[2] as usize],
                                true,
                            );
                        }
                    }
                }
            }
        }
    }
    let cfg = SsdfConfig::default();
    let vol = build_volumes(&grid, &[(0.0, V3::zeros())], &cfg)
        .expect("volume")
        .remove(0);
    let spec = vol.spec;
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < instances {
        let p = rand_v3(rng, 4.5);
        let r = p.norm();
        if !(0.3..4.8).contains(&r) || p.x.hypot(p.y) < 0.3 {
            continue;
        }
        let (_, g) = costs::visibility(&vol, &p);
        if g.norm() < 1e-3 {
            continue;
        }
        // the interpolant is smooth only inside a lattice cell
        let (theta, phi, _) = to_spherical(&p, &spec.origin).expect("off origin");
        let fr = |x: f64| (x - x.round()).abs();
        if fr(theta / spec.d_theta() - 0.5) < 0.01
            || fr(phi / spec.d_phi()) < 0.01
            || fr(r / spec.dr) < 0.01
        {
            continue;
        }
        let fd = central_differences(|y| costs::visibility(&vol, &v3(y)).0, p.as_slice(), 1e-7);
        worst = worst.max(relative_error(g.as_slice(), &fd));
        done += 1;
    }
    worst
}

/// Smooth functional of samples at fixed fractions of every piece, with its
/// coefficient and direct duration gradients.
fn sampled_functional(tr: &PolyTrajectory) -> (f64, Vec<f64>, Vec<f64>) {
    let (n, dims) = (tr.n_coeff(), tr.dims);
    let mut value = 0.0;
    let mut gc = vec![0.0; tr.coeffs.len()];
    let mut gt = vec![0.0; tr.pieces()];
    let mut b0 = vec![0.0; n];
    let mut b1 = vec![0.0; n];
    for i in 0..tr.pieces() {
        for alpha in [0.3, 0.7, 1.0] {
            let t = alpha * tr.times[i];
            let p = tr.eval_piece(i, t, 0);
            let v = tr.eval_piece(i, t, 1);
            let a = tr.eval_piece(i, t, 2);
            basis_row(0, t, &mut b0);
            basis_row(1, t, &mut b1);
            for k in 0..dims {
                value += p[k].sin() + 0.1 * v[k] * v[k];
                for j in 0..n {
                    gc[(i * n + j) * dims + k] += p[k].cos() * b0[j] + 0.2 * v[k] * b1[j];
                }
                gt[i] += alpha * (p[k].cos() * v[k] + 0.2 * v[k] * a[k]);
            }
        }
    }
    (value, gc, gt)
}

fn check_minco(rng: &mut ChaCha8Rng, instances: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for inst in 0..instances {
        let s = if inst % 3 == 0 { 2 } else { 4 };
        let m = rng.random_range(1..6);
        let dims = 2;
        let head = DMatrix::from_fn(s, dims, |_, _| rng.random_range(-1.0..1.0));
        let n_in = (m - 1) * dims + m + s * dims;
        let x: Vec<f64> = (0..n_in)
            .map(|i| {
                if ((m - 1) * dims..(m - 1) * dims + m).contains(&i) {
                    rng.random_range(0.4..1.2)
                } else {
                    rng.random_range(-2.0..2.0)
                }
            })
            .collect();
        let split = |x: &[f64]| {
            let pts = DMatrix::from_row_slice(m - 1, dims, &x[..(m - 1) * dims]);
            let times = x[(m - 1) * dims..(m - 1) * dims + m].to_vec();
            let tail = DMatrix::from_row_slice(s, dims, &x[(m - 1) * dims + m..]);
            (pts, times, tail)
        };
        let build = |x: &[f64]| {
            let (pts, times, tail) = split(x);
            Minco::new(s, &head, &tail, &pts, &times)
        };
        let Ok(mc) = build(&x) else { continue };
        let (_, gc, gt) = sampled_functional(&mc.traj);
        let g = mc.propagate(&gc, &gt);
        let mut analytic: Vec<f64> = Vec::with_capacity(n_in);
        for i in 0..m - 1 {
            for k in 0..dims {
                analytic.push(g.points[(i, k)]);
            }
        }
        analytic.extend_from_slice(&g.times);
        for d in 0..s {
            for k in 0..dims {
                analytic.push(g.tail[(d, k)]);
            }
        }
        let numeric = five_point(
            |y| {
                build(y)
                    .map(|mc| sampled_functional(&mc.traj).0)
                    .unwrap_or(f64::NAN)
            },
            &x,
            1e-4,
        );
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

/// Fourth-order central differences.
fn five_point<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            let mut at = |d: f64| {
                y[i] = x[i] + d;
                let v = f(&y);
                y[i] = x[i];
                v
            };
            (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h)
        })
        .collect()
}

fn check_time_map(rng: &mut ChaCha8Rng, instances: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let m = rng.random_range(2..9);
        let total = rng.random_range(0.5..4.0);
        let w: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
        let logits: Vec<f64> = (0..m - 1).map(|_| rng.random_range(-2.0..2.0)).collect();
        let j = |l: &[f64]| -> f64 {
            time_map::durations(l, total)
                .iter()
                .zip(&w)
                .map(|(t, w)| w * t * t + t.sin())
                .sum()
        };
        let t = time_map::durations(&logits, total);
        let gt: Vec<f64> = t
            .iter()
            .zip(&w)
            .map(|(t, w)| 2.0 * w * t + t.cos())
            .collect();
        let g = time_map::logits_gradient(&t, total, &gt);
        let fd = central_differences(j, &logits, 1e-6);
        worst = worst.max(relative_error(&g, &fd));
    }
    worst
}

fn check_objective(rng: &mut ChaCha8Rng, instances: usize, corrupt: bool) -> f64 {
    let mut worst: f64 = 0.0;
    let mut done = 0;
    // volumes are the expensive part; share them across a few perturbations
    while done < instances {
        let fixture = DeskInstance::random(rng.random(), rng.random_bool(0.5));
        for _ in 0..5 {
            let mut x = fixture.x0.clone();
            for v in x.iter_mut() {
                *v += rng.random_range(-0.15..0.15);
            }
            let problem = fixture.problem();
            let Ok(e) = problem.evaluate(&x, true) else {
                continue;
            };
            let mut g = e.gradient;
            if corrupt {
                g.iter_mut().step_by(7).for_each(|v| *v *= 1.01);
            }
            let fd = central_differences(
                |y| {
                    problem
                        .evaluate(y, false)
                        .map(|e| e.value)
                        .unwrap_or(f64::NAN)
                },
                &x,
                1e-6,
            );
            worst = worst.max(relative_error(&g, &fd));
            done += 1;
        }
    }
    worst
}

/// A self-contained back-end problem in a small random forest.
pub struct DeskInstance {
    pub grid: OccupancyGrid,
    pub prediction: TargetPrediction,
    pub volumes: Vec<SsdfVolume>,
    pub corridors: Vec<Polyhedron>,
    pub teammates: Vec<StampedTrajectory>,
    pub head: [V3; 4],
    pub yaw_head: [f64; 2],
    pub fov: FovConfig,
    pub params: TrackingParams,
    pub weights: CostWeights,
    pub settings: OptSettings,
    /// A plausible starting decision vector.
    pub x0: Vec<f64>,
}

impl DeskInstance {
    /// Random instance: six pieces over 1.8 s, two moving teammates, tight
    /// corridors and a few pillars so that every term can be active.
    pub fn random(seed: u64, conic: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut grid =
            OccupancyGrid::new(V3::new(-7.0, -7.0, -2.0), 0.1, [140, 140, 40]).expect("grid");
        for _ in 0..6 {
            let c = V3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                0.0,
            );
            if c.xy().norm() < 1.0 {
                continue;
            }
            let r = rng.random_range(0.2..0.5);
            add_pillar(&mut grid, c, r);
        }
        let step = 0.3;
        let n = 6;
        let tv = V3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            0.0,
        );
        let t0 = V3::new(
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            0.0,
        );
        let prediction = TargetPrediction {
            points: (0..=n).map(|k| t0 + tv * (k as f64 * step)).collect(),
            step,
            horizon: step * n as f64,
            start: 0.0,
            velocity: tv,
        };
        let pts: Vec<(f64, V3)> = prediction
            .points
            .iter()
            .enumerate()
            .map(|(k, p)| (k as f64 * step, *p))
            .collect();
        let volumes = build_volumes(&grid, &pts, &SsdfConfig::default()).expect("volumes");
        let bearing = rng.random_range(0.0..std::f64::consts::TAU);
        let offset = V3::new(bearing.cos(), bearing.sin(), 0.0) * rng.random_range(1.2..2.8);
        let head = [
            t0 + offset,
            tv + rand_v3(&mut rng, 0.5),
            rand_v3(&mut rng, 1.0),
            rand_v3(&mut rng, 1.0),
        ];
        let fov = if conic {
            FovConfig::conic()
        } else {
            FovConfig::omni()
        };
        let corridors: Vec<Polyhedron> = (0..n)
            .map(|i| {
                let a = prediction.points[i] + offset;
                let b = prediction.points[i + 1] + offset;
                let lo = a.inf(&b) - V3::repeat(0.15);
                let hi = a.sup(&b) + V3::repeat(0.15);
                Polyhedron::from_box(lo, hi)
            })
            .collect();
        let teammates = (0..2)
            .map(|_| {
                let start = t0 + offset + rand_v3(&mut rng, 1.5);
                let head = DMatrix::from_fn(4, 3, |d, k| if d == 0 { start[k] } else { 0.0 });
                let end = start + rand_v3(&mut rng, 2.0);
                let tail = DMatrix::from_fn(4, 3, |d, k| if d == 0 { end[k] } else { 0.0 });
                let mid = (start + end) * 0.5 + rand_v3(&mut rng, 0.5);
                let pts = DMatrix::from_row_slice(1, 3, mid.as_slice());
                let traj = Minco::new(4, &head, &tail, &pts, &[1.2, 1.3])
                    .expect("teammate")
                    .traj;
                StampedTrajectory { start: -0.4, traj }
            })
            .collect();
        let params = TrackingParams {
            v_max: 1.5,
            a_max: 2.0,
            yaw_rate_max: 1.0,
            ..TrackingParams::default()
        };
        let mut inst = Self {
            grid,
            prediction,
            volumes,
            corridors,
            teammates,
            head,
            yaw_head: [bearing + std::f64::consts::PI, 0.0],
            fov,
            params,
            weights: CostWeights::default(),
            settings: OptSettings::default(),
            x0: Vec::new(),
        };
        let layout = inst.problem().layout();
        let mut x = vec![0.0; layout.len()];
        for i in 1..n {
            let p = inst.prediction.points[i] + offset;
            x[3 * (i - 1)..3 * i].copy_from_slice(p.as_slice());
        }
        let t = layout.tail();
        x[t..t + 3].copy_from_slice((inst.prediction.points[n] + offset).as_slice());
        for (i, v) in x[layout.logits()..t].iter_mut().enumerate() {
            *v = 0.1 * i as f64 - 0.2;
        }
        if layout.yaw {
            for v in &mut x[layout.yaw_waypoints()..layout.yaw_tail() + 1] {
                *v = inst.yaw_head[0];
            }
        }
        inst.x0 = x;
        inst
    }

    pub fn problem(&self) -> OptProblem<'_> {
        OptProblem {
            start: 0.0,
            head: self.head,
            yaw_head: self.yaw_head,
            fov: self.fov,
            prediction: &self.prediction,
            volumes: &self.volumes,
            corridors: &self.corridors,
            teammates: &self.teammates,
            obstacles: &[],
            params: self.params,
            weights: self.weights,
            settings: self.settings,
        }
    }

    pub fn is_conic(&self) -> bool {
        self.fov.kind == FovKind::Conic
    }
}

/// Marks a vertical cylinder spanning the whole grid height.
pub fn add_pillar(grid: &mut OccupancyGrid, center: V3, radius: f64) {
    let [nx, ny, nz] = grid.dims();
    for ix in 0..nx {
        for iy in 0..ny {
            let c = grid.voxel_center([ix, iy, 0]);
            if (c.x - center.x).hypot(c.y - center.y) <= radius {
                for iz in 0..nz {
                    grid.set_occupied([ix, iy, iz], true);
                }
            }
        }
    }
}
