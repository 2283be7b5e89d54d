//! Objective assembly: control effort, sampled continuous penalties and
//! per-stamp tracking penalties, with gradients pulled back through the
//! trajectory construction and the duration map.

use nalgebra::Vector3;
use serde::Serialize;

use super::{time_map, OptProblem, PlanError, StampedTrajectory};
use crate::costs::{self, smooth};
use crate::minco::{basis_row, PolyTrajectory};

type V3 = Vector3<f64>;

/// Unweighted-by-name but weighted-by-value contribution of each term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub effort: f64,
    pub corridor: f64,
    pub dynamics: f64,
    pub swarm: f64,
    pub visibility: f64,
    pub fov: f64,
    pub distance: f64,
    pub teammate_occlusion: f64,
    pub formation: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.effort
            + self.corridor
            + self.dynamics
            + self.swarm
            + self.visibility
            + self.fov
            + self.distance
            + self.teammate_occlusion
            + self.formation
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    /// Empty unless requested.
    pub gradient: Vec<f64>,
    pub breakdown: CostBreakdown,
    pub degraded: bool,
}

/// Coefficient and direct duration gradients of one trajectory.
struct Accum {
    gc: Vec<f64>,
    n: usize,
    dims: usize,
    row: Vec<f64>,
}

impl Accum {
    fn new(tr: &PolyTrajectory) -> Self {
        Self {
            gc: vec![0.0; tr.coeffs.len()],
            n: tr.n_coeff(),
            dims: tr.dims,
            row: vec![0.0; tr.n_coeff()],
        }
    }

    /// Adds `g · d^order β(t)` to the coefficients of `piece`.
    fn add(&mut self, piece: usize, order: usize, t: f64, g: &[f64]) {
        basis_row(order, t, &mut self.row);
        for (j, b) in self.row.iter().enumerate().skip(order) {
            let base = (piece * self.n + j) * self.dims;
            for (k, gk) in g.iter().enumerate() {
                self.gc[base + k] += b * gk;
            }
        }
    }
}

impl OptProblem<'_> {
    /// Objective value and, when `with_grad`, its gradient over the full
    /// decision vector.
    pub fn evaluate(&self, x: &[f64], with_grad: bool) -> Result<Evaluation, PlanError> {
        let l = self.layout();
        let m = l.pieces;
        let times = self.durations(x);
        let (pos, yaw) = self.trajectories(x)?;
        let w = &self.weights;
        let p = &self.params;
        let mut bd = CostBreakdown::default();

        let (e, gce, gte) = pos.traj.control_effort();
        let ke = self.settings.effort;
        bd.effort = ke * e;
        let mut acc = Accum::new(&pos.traj);
        for (a, b) in acc.gc.iter_mut().zip(&gce) {
            *a += ke * b;
        }
        let mut gt: Vec<f64> = gte.iter().map(|v| ke * v).collect();
        let mut yacc = yaw.as_ref().map(|y| Accum::new(&y.traj));
        if let (Some(y), Some(ya)) = (&yaw, yacc.as_mut()) {
            let (e, gc, gty) = y.traj.control_effort();
            let ky = self.settings.yaw_effort;
            bd.effort += ky * e;
            for (a, b) in ya.gc.iter_mut().zip(&gc) {
                *a += ky * b;
            }
            for (a, b) in gt.iter_mut().zip(&gty) {
                *a += ky * b;
            }
        }

        // continuous penalties, trapezoid over each piece
        let kappa = self.settings.samples_per_piece.max(1);
        let use_corridor = self.corridors.len() == m && w.corridor > 0.0;
        let others: Vec<&StampedTrajectory> = self.teammates.iter().chain(self.obstacles).collect();
        let mut offset = 0.0;
        for i in 0..m {
            let ti = times[i];
            for j in 0..=kappa {
                let frac = j as f64 / kappa as f64;
                let t = frac * ti;
                let end_w = if j == 0 || j == kappa { 0.5 } else { 1.0 };
                let omega = end_w * ti / kappa as f64;
                let pp = pos.traj.eval3(i, t, 0);
                let vv = pos.traj.eval3(i, t, 1);
                let aa = pos.traj.eval3(i, t, 2);
                let jj = pos.traj.eval3(i, t, 3);
                let mut f = 0.0;
                let mut gp = V3::zeros();
                let mut gv = V3::zeros();
                let mut ga = V3::zeros();
                if use_corridor {
                    let (c, g) = costs::corridor(&self.corridors[i], &pp);
                    f += w.corridor * c;
                    bd.corridor += omega * w.corridor * c;
                    gp += w.corridor * g;
                }
                if w.dynamics > 0.0 {
                    let (c1, g1) = costs::dynamics(&vv, p.v_max);
                    let (c2, g2) = costs::dynamics(&aa, p.a_max);
                    f += w.dynamics * (c1 + c2);
                    bd.dynamics += omega * w.dynamics * (c1 + c2);
                    gv += w.dynamics * g1;
                    ga += w.dynamics * g2;
                }
                // time coupling through the teammates' absolute clock
                let mut g_tau = 0.0;
                if w.swarm > 0.0 && !others.is_empty() {
                    let tau = self.start + offset + t;
                    for o in &others {
                        let q = o.at3(tau, 0);
                        let (c, gi, gj) = costs::swarm_clearance(&pp, &q, p.r_s);
                        if c > 0.0 {
                            f += w.swarm * c;
                            bd.swarm += omega * w.swarm * c;
                            gp += w.swarm * gi;
                            g_tau += w.swarm * gj.dot(&o.at3(tau, 1));
                        }
                    }
                }
                let mut gyr = 0.0;
                let mut yaw_acc = 0.0;
                if let Some(y) = &yaw {
                    if w.dynamics > 0.0 {
                        let r = y.traj.eval_piece(i, t, 1)[0];
                        let (c, dc) = smooth(r * r - p.yaw_rate_max * p.yaw_rate_max);
                        f += w.dynamics * c;
                        bd.dynamics += omega * w.dynamics * c;
                        gyr = w.dynamics * dc * 2.0 * r;
                        yaw_acc = y.traj.eval_piece(i, t, 2)[0];
                    }
                }
                if !with_grad || f == 0.0 {
                    continue;
                }
                acc.add(i, 0, t, (gp * omega).as_slice());
                acc.add(i, 1, t, (gv * omega).as_slice());
                acc.add(i, 2, t, (ga * omega).as_slice());
                let chain = gp.dot(&vv) + gv.dot(&aa) + ga.dot(&jj) + g_tau + gyr * yaw_acc;
                gt[i] += f * end_w / kappa as f64 + omega * frac * chain;
                for g in gt.iter_mut().take(i) {
                    *g += omega * g_tau;
                }
                if let Some(ya) = yacc.as_mut() {
                    if gyr != 0.0 {
                        ya.add(i, 1, t, &[omega * gyr]);
                    }
                }
            }
            offset += ti;
        }

        // tracking penalties at the prediction stamps
        let pred = self.prediction;
        let step = pred.step;
        let mut degraded = false;
        let mut tail_p = V3::zeros();
        let mut tail_yaw = 0.0;
        let fixed_yaw = self.yaw_head[0];
        for k in 1..=m {
            let target = &pred.points[k];
            let tk = pred.stamp(k);
            let abs = self.start + tk;
            let mates: Vec<V3> = self.teammates.iter().map(|o| o.at3(abs, 0)).collect();
            let terminal = k == m;
            let (piece, tr) = if terminal {
                (m - 1, times[m - 1])
            } else {
                locate(&times, tk)
            };
            let pp = if terminal {
                let t = l.tail();
                V3::new(x[t], x[t + 1], x[t + 2])
            } else {
                pos.traj.eval3(piece, tr, 0)
            };
            let psi = match &yaw {
                Some(_) if terminal => x[l.yaw_tail()],
                Some(y) => y.traj.eval_piece(piece, tr, 0)[0],
                None => fixed_yaw,
            };
            let mut gp = V3::zeros();
            let mut gpsi = 0.0;
            if w.visibility > 0.0 {
                match self.volumes.get(k) {
                    Some(vol) => {
                        let (c, g) = costs::visibility(vol, &pp);
                        bd.visibility += step * w.visibility * c;
                        gp += w.visibility * g;
                    }
                    None => degraded = true,
                }
            }
            if w.fov > 0.0 {
                let c = costs::fov(&self.fov, &pp, psi, target);
                bd.fov += step * w.fov * c.value;
                gp += w.fov * c.grad_p;
                gpsi += w.fov * c.grad_yaw;
            }
            if w.distance > 0.0 {
                let (c, g) = costs::distance(&pp, target, p);
                bd.distance += step * w.distance * c;
                gp += w.distance * g;
            }
            if w.teammate_occlusion > 0.0 {
                let (c, g) = costs::teammate_occlusion(&pp, target, &mates, p.theta_c);
                bd.teammate_occlusion += step * w.teammate_occlusion * c;
                gp += w.teammate_occlusion * g;
            }
            if w.formation > 0.0 {
                let (c, g) = costs::formation(&pp, &mates, p.k_e);
                bd.formation += step * w.formation * c;
                gp += w.formation * g;
            }
            if !with_grad {
                continue;
            }
            gp *= step;
            gpsi *= step;
            if terminal {
                tail_p += gp;
                tail_yaw += gpsi;
                continue;
            }
            acc.add(piece, 0, tr, gp.as_slice());
            let mut dt = gp.dot(&pos.traj.eval3(piece, tr, 1));
            if let (Some(y), Some(ya)) = (&yaw, yacc.as_mut()) {
                ya.add(piece, 0, tr, &[gpsi]);
                dt += gpsi * y.traj.eval_piece(piece, tr, 1)[0];
            }
            // the relative time shrinks as earlier pieces grow
            for g in gt.iter_mut().take(piece) {
                *g -= dt;
            }
        }

        let value = bd.total();
        let mut gradient = Vec::new();
        if with_grad {
            gradient = vec![0.0; l.len()];
            let gpos = pos.propagate(&acc.gc, &gt);
            let mut gtimes = gpos.times.clone();
            for i in 0..m - 1 {
                for k in 0..3 {
                    gradient[3 * i + k] = gpos.points[(i, k)];
                }
            }
            let t = l.tail();
            for k in 0..3 {
                gradient[t + k] = gpos.tail[(0, k)] + tail_p[k];
                gradient[t + 3 + k] = gpos.tail[(2, k)];
                gradient[t + 6 + k] = gpos.tail[(3, k)];
            }
            if let (Some(y), Some(ya)) = (&yaw, &yacc) {
                let gy = y.propagate(&ya.gc, &vec![0.0; m]);
                for (a, b) in gtimes.iter_mut().zip(&gy.times) {
                    *a += b;
                }
                for i in 0..m - 1 {
                    gradient[l.yaw_waypoints() + i] = gy.points[(i, 0)];
                }
                gradient[l.yaw_tail()] = gy.tail[(0, 0)] + tail_yaw;
                gradient[l.yaw_tail() + 1] = gy.tail[(1, 0)];
            }
            let gl = time_map::logits_gradient(&times, self.prediction.horizon, &gtimes);
            gradient[l.logits()..l.tail()].copy_from_slice(&gl);
        }
        Ok(Evaluation {
            value,
            gradient,
            breakdown: bd,
            degraded,
        })
    }
}

/// Piece index and local time of relative stamp `t`.
fn locate(times: &[f64], t: f64) -> (usize, f64) {
    let mut acc = 0.0;
    for (i, &ti) in times.iter().enumerate() {
        if t < acc + ti || i == times.len() - 1 {
            return (i, (t - acc).clamp(0.0, ti));
        }
        acc += ti;
    }
    unreachable!("non-empty durations")
}
