//! Polynomial trajectory checks against an independent dense formulation:
//! the energy-minimising coefficients are recomputed from the KKT system of
//! the equality-constrained quadratic program.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vistrack::minco::{Minco, PolyTrajectory};

fn fact(j: usize, d: usize) -> f64 {
    if d > j {
        0.0
    } else {
        ((j - d + 1)..=j).map(|x| x as f64).product()
    }
}

fn dbasis(j: usize, d: usize, t: f64) -> f64 {
    if d > j {
        0.0
    } else {
        fact(j, d) * t.powi((j - d) as i32)
    }
}

struct Instance {
    s: usize,
    head: DMatrix<f64>,
    tail: DMatrix<f64>,
    pts: DMatrix<f64>,
    times: Vec<f64>,
}

fn instance(rng: &mut ChaCha8Rng, s: usize, mp: usize, dims: usize) -> Instance {
    let mut r = |_, _| rng.random_range(-2.0..2.0);
    Instance {
        s,
        head: DMatrix::from_fn(s, dims, &mut r),
        tail: DMatrix::from_fn(s, dims, &mut r),
        pts: DMatrix::from_fn(mp - 1, dims, &mut r),
        times: (0..mp).map(|_| rng.random_range(0.3..1.5)).collect(),
    }
}

impl Instance {
    fn build(&self) -> Minco {
        Minco::new(self.s, &self.head, &self.tail, &self.pts, &self.times).unwrap()
    }

    /// Constraint rows (boundary, waypoints, continuity up to order s-1)
    /// for one dimension, plus the energy Hessian.
    fn qp(&self, dim: usize) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
        let (s, mp) = (self.s, self.times.len());
        let n = 2 * s;
        let nv = n * mp;
        let mut q = DMatrix::zeros(nv, nv);
        for (i, &t) in self.times.iter().enumerate() {
            for j in s..n {
                for k in s..n {
                    let e = (j + k + 1 - 2 * s) as f64;
                    q[(n * i + j, n * i + k)] = fact(j, s) * fact(k, s) * t.powf(e) / e;
                }
            }
        }
        let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
        for d in 0..s {
            rows.push((vec![(d, dbasis(d, d, 0.0))], self.head[(d, dim)]));
            let last = mp - 1;
            let r = (d..n)
                .map(|j| (n * last + j, dbasis(j, d, self.times[last])))
                .collect();
            rows.push((r, self.tail[(d, dim)]));
        }
        for i in 0..mp - 1 {
            let t = self.times[i];
            rows.push((
                (0..n).map(|j| (n * i + j, dbasis(j, 0, t))).collect(),
                self.pts[(i, dim)],
            ));
            for d in 0..s {
                let mut r: Vec<(usize, f64)> =
                    (d..n).map(|j| (n * i + j, dbasis(j, d, t))).collect();
                r.push((n * (i + 1) + d, -fact(d, d)));
                rows.push((r, 0.0));
            }
        }
        let mut e = DMatrix::zeros(rows.len(), nv);
        let mut f = DVector::zeros(rows.len());
        for (r, (entries, rhs)) in rows.iter().enumerate() {
            for &(c, v) in entries {
                e[(r, c)] = v;
            }
            f[r] = *rhs;
        }
        (q, e, f)
    }

    fn kkt_coeffs(&self, dim: usize) -> DVector<f64> {
        let (q, e, f) = self.qp(dim);
        let (nv, nc) = (q.nrows(), e.nrows());
        let mut k = DMatrix::zeros(nv + nc, nv + nc);
        k.view_mut((0, 0), (nv, nv)).copy_from(&(&q * 2.0));
        k.view_mut((0, nv), (nv, nc)).copy_from(&e.transpose());
        k.view_mut((nv, 0), (nc, nv)).copy_from(&e);
        let mut rhs = DVector::zeros(nv + nc);
        rhs.rows_mut(nv, nc).copy_from(&f);
        let sol = k.full_piv_lu().solve(&rhs).expect("KKT system solvable");
        sol.rows(0, nv).into_owned()
    }
}

fn coeff_column(tr: &PolyTrajectory, dim: usize) -> DVector<f64> {
    DVector::from_fn(tr.coeffs.len() / tr.dims, |r, _| {
        tr.coeffs[r * tr.dims + dim]
    })
}

fn energy(q: &DMatrix<f64>, c: &DVector<f64>) -> f64 {
    (c.transpose() * q * c)[(0, 0)]
}

#[test]
fn matches_kkt_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..40 {
        let s = if trial % 2 == 0 { 4 } else { 2 };
        let mp = rng.random_range(1..7);
        let inst = instance(&mut rng, s, mp, 3);
        let tr = inst.build().traj;
        for dim in 0..3 {
            let want = inst.kkt_coeffs(dim);
            let got = coeff_column(&tr, dim);
            let scale = want.amax().max(1.0);
            assert!(
                (got - &want).amax() <= 1e-7 * scale,
                "trial {trial} dim {dim}"
            );
        }
    }
}

#[test]
fn interpolation_and_continuity() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..100 {
        let inst = instance(&mut rng, 4, 3, 3);
        let tr = inst.build().traj;
        for i in 0..2 {
            let end = tr.eval_piece(i, inst.times[i], 0);
            for k in 0..3 {
                assert!((end[k] - inst.pts[(i, k)]).abs() <= 1e-8);
            }
            for d in 0..inst.s {
                let a = tr.eval_piece(i, inst.times[i], d);
                let b = tr.eval_piece(i + 1, 0.0, d);
                for k in 0..3 {
                    assert!(
                        (a[k] - b[k]).abs() <= 1e-8 * a[k].abs().max(1.0),
                        "order {d}"
                    );
                }
            }
        }
    }
}

#[test]
fn energy_is_minimal_under_feasible_perturbations() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let inst = instance(&mut rng, 4, 4, 1);
    let tr = inst.build().traj;
    let (q, e, f) = inst.qp(0);
    let c = coeff_column(&tr, 0);
    assert!((&e * &c - &f).amax() < 1e-8);
    let base = energy(&q, &c);
    assert!((base - tr.control_effort().0).abs() <= 1e-9 * base.max(1.0));
    // null space of the constraint rows
    let eig = (e.transpose() * &e).symmetric_eigen();
    let null: Vec<DVector<f64>> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i].abs() < 1e-9 * eig.eigenvalues.amax())
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();
    assert!(!null.is_empty());
    for _ in 0..100 {
        let mut delta = DVector::zeros(c.len());
        for v in &null {
            delta += v * rng.random_range(-1.0..1.0);
        }
        delta *= rng.random_range(1e-4..1.0);
        assert!((&e * &delta).amax() < 1e-8);
        assert!(energy(&q, &(&c + &delta)) >= base * (1.0 - 1e-12));
    }
}

/// Smooth test functional of samples at fixed fractions of every piece.
fn functional(tr: &PolyTrajectory) -> (f64, Vec<f64>, Vec<f64>) {
    let (n, dims) = (tr.n_coeff(), tr.dims);
    let mut value = 0.0;
    let mut gc = vec![0.0; tr.coeffs.len()];
    let mut gt = vec![0.0; tr.pieces()];
    for i in 0..tr.pieces() {
        for alpha in [0.25, 0.6, 1.0] {
            let t = alpha * tr.times[i];
            let p = tr.eval_piece(i, t, 0);
            let v = tr.eval_piece(i, t, 1);
            let a = tr.eval_piece(i, t, 2);
            for k in 0..dims {
                value += p[k].sin() + 0.1 * v[k] * v[k];
                for j in 0..n {
                    gc[(i * n + j) * dims + k] +=
                        p[k].cos() * dbasis(j, 0, t) + 0.2 * v[k] * dbasis(j, 1, t);
                }
                gt[i] += alpha * (p[k].cos() * v[k] + 0.2 * v[k] * a[k]);
            }
        }
    }
    (value, gc, gt)
}

/// Five-point central difference of the functional along one input.
fn fd(inst: &Instance, bump: impl Fn(&mut Instance, f64)) -> f64 {
    let h = 1e-4;
    let at = |x: f64| {
        let mut c = clone(inst);
        bump(&mut c, x);
        functional(&c.build().traj).0
    };
    (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h)
}

#[test]
fn propagated_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-2);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let s = if trial % 3 == 0 { 2 } else { 4 };
        let mp = rng.random_range(2..6);
        let inst = instance(&mut rng, s, mp, 2);
        let mc = inst.build();
        let (_, gc, gt) = functional(&mc.traj);
        let g = mc.propagate(&gc, &gt);
        for r in 0..inst.pts.nrows() {
            for k in 0..2 {
                let num = fd(&inst, |c, x| c.pts[(r, k)] += x);
                worst = worst.max(rel(g.points[(r, k)], num));
            }
        }
        for i in 0..inst.times.len() {
            let num = fd(&inst, |c, x| c.times[i] += x);
            worst = worst.max(rel(g.times[i], num));
        }
        for d in 0..s {
            for k in 0..2 {
                let num = fd(&inst, |c, x| c.tail[(d, k)] += x);
                worst = worst.max(rel(g.tail[(d, k)], num));
                let num = fd(&inst, |c, x| c.head[(d, k)] += x);
                worst = worst.max(rel(g.head[(d, k)], num));
            }
        }
    }
    assert!(worst <= 1e-5, "worst relative error {worst}");
}

#[test]
fn single_piece_energy_time_derivative() {
    // s = 4 rest-to-rest: energy scales as T^-7
    let head = DMatrix::zeros(4, 1);
    let mut tail = DMatrix::zeros(4, 1);
    tail[(0, 0)] = 1.0;
    for t in [0.5, 1.0, 2.3] {
        let mc = Minco::new(4, &head, &tail, &DMatrix::zeros(0, 1), &[t]).unwrap();
        let (e, gc, gt) = mc.traj.control_effort();
        let c1 = e * t.powi(7);
        let g = mc.propagate(&gc, &gt);
        let want = -7.0 * c1 / t.powi(8);
        assert!((g.times[0] - want).abs() <= 1e-8 * want.abs());
    }
}

fn clone(i: &Instance) -> Instance {
    Instance {
        s: i.s,
        head: i.head.clone(),
        tail: i.tail.clone(),
        pts: i.pts.clone(),
        times: i.times.clone(),
    }
}
