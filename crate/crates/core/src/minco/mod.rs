//! Minimum-control-effort piecewise polynomial trajectories.
//!
//! A trajectory of order `s` has `M` pieces of degree `2s - 1`. Given the
//! head and tail states (derivatives `0..s`), the `M - 1` intermediate
//! points and the piece durations, the coefficients follow from one banded
//! linear system; its transpose gives the adjoint used to push cost
//! gradients back to points, durations and boundary states.

mod banded;

pub use banded::{BandedLu, BandedMatrix};

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MincoError {
    #[error("piece durations must be positive and finite")]
    BadTimes,
    #[error("inconsistent shapes: {0}")]
    BadShape(String),
    #[error("singular coefficient system")]
    Singular,
}

/// `j! / (j - d)!`, zero when `d > j`.
#[inline]
fn falling(j: usize, d: usize) -> f64 {
    if d > j {
        return 0.0;
    }
    ((j - d + 1)..=j).map(|x| x as f64).product()
}

/// Value of `d/dt^d t^j` at `t`.
#[inline]
fn basis(j: usize, d: usize, t: f64) -> f64 {
    if d > j {
        0.0
    } else {
        falling(j, d) * t.powi((j - d) as i32)
    }
}

/// Fills `out[j]` with the `order`-th derivative of `t^j` at `t`.
pub fn basis_row(order: usize, t: f64, out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        *o = basis(j, order, t);
    }
}

/// Piecewise polynomial: piece `i` is `Σ_j c[i][j] t^j` on `[0, T_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyTrajectory {
    pub order: usize,
    pub dims: usize,
    pub times: Vec<f64>,
    /// Row-major `(2s·M) × dims`, piece-major rows.
    pub coeffs: Vec<f64>,
}

impl PolyTrajectory {
    pub fn pieces(&self) -> usize {
        self.times.len()
    }

    pub fn n_coeff(&self) -> usize {
        2 * self.order
    }

    pub fn duration(&self) -> f64 {
        self.times.iter().sum()
    }

    #[inline]
    pub fn coeff(&self, piece: usize, j: usize, dim: usize) -> f64 {
        self.coeffs[(piece * self.n_coeff() + j) * self.dims + dim]
    }

    /// Piece index and local time for global `t`, clamped to the domain.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let total = self.duration();
        if t < -1e-9 || t > total + 1e-9 {
            log::warn!("trajectory evaluated at {t} outside [0, {total}]; clamping");
        }
        let mut rest = t.clamp(0.0, total);
        let last = self.pieces() - 1;
        for (i, &dt) in self.times.iter().enumerate() {
            if rest <= dt || i == last {
                return (i, rest.min(dt));
            }
            rest -= dt;
        }
        unreachable!("at least one piece")
    }

    /// `order`-th derivative of piece `i` at local time `t`.
    pub fn eval_piece_into(&self, i: usize, t: f64, order: usize, out: &mut [f64]) {
        out.fill(0.0);
        for j in order..self.n_coeff() {
            let b = basis(j, order, t);
            for (d, o) in out.iter_mut().enumerate() {
                *o += b * self.coeff(i, j, d);
            }
        }
    }

    pub fn eval_piece(&self, i: usize, t: f64, order: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dims];
        self.eval_piece_into(i, t, order, &mut out);
        out
    }

    pub fn evaluate(&self, t: f64, order: usize) -> Vec<f64> {
        let (i, local) = self.locate(t);
        self.eval_piece(i, local, order)
    }

    /// Three-dimensional convenience accessor.
    pub fn eval3(&self, i: usize, t: f64, order: usize) -> Vector3<f64> {
        debug_assert_eq!(self.dims, 3);
        let mut out = [0.0; 3];
        self.eval_piece_into(i, t, order, &mut out);
        Vector3::from(out)
    }

    pub fn at3(&self, t: f64, order: usize) -> Vector3<f64> {
        let (i, local) = self.locate(t);
        self.eval3(i, local, order)
    }

    /// Scalar convenience accessor for one-dimensional trajectories.
    pub fn at1(&self, t: f64, order: usize) -> f64 {
        let (i, local) = self.locate(t);
        let mut out = [0.0];
        self.eval_piece_into(i, local, order, &mut out);
        out[0]
    }

    /// Exact `Σ_i ∫ ‖p_i^{(s)}‖² dt` with its coefficient and duration
    /// gradients (row-major like `coeffs`).
    pub fn control_effort(&self) -> (f64, Vec<f64>, Vec<f64>) {
        let (s, n, m) = (self.order, self.n_coeff(), self.dims);
        let mut value = 0.0;
        let mut gc = vec![0.0; self.coeffs.len()];
        let mut gt = vec![0.0; self.pieces()];
        let mut top = vec![0.0; m];
        for (i, &t) in self.times.iter().enumerate() {
            for j in s..n {
                for k in s..n {
                    let e = (j + k - 2 * s + 1) as f64;
                    let w = falling(j, s) * falling(k, s) * t.powi((j + k - 2 * s + 1) as i32) / e;
                    for d in 0..m {
                        let cj = self.coeff(i, j, d);
                        let ck = self.coeff(i, k, d);
                        value += w * cj * ck;
                        gc[(i * n + j) * m + d] += 2.0 * w * ck;
                    }
                }
            }
            self.eval_piece_into(i, t, s, &mut top);
            gt[i] = top.iter().map(|x| x * x).sum();
        }
        (value, gc, gt)
    }
}

/// Gradients with respect to the construction inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct MincoGradient {
    /// `(M - 1) × dims`.
    pub points: DMatrix<f64>,
    pub times: Vec<f64>,
    /// `s × dims`, row `d` for the `d`-th derivative.
    pub head: DMatrix<f64>,
    pub tail: DMatrix<f64>,
}

/// A constructed trajectory together with its factorised system.
#[derive(Debug, Clone)]
pub struct Minco {
    pub traj: PolyTrajectory,
    lu: BandedLu,
}

impl Minco {
    /// Builds the minimum-effort interpolant of order `s` through `points`
    /// (`(M - 1) × dims`) with boundary states `head`, `tail` (`s × dims`).
    pub fn new(
        order: usize,
        head: &DMatrix<f64>,
        tail: &DMatrix<f64>,
        points: &DMatrix<f64>,
        times: &[f64],
    ) -> Result<Self, MincoError> {
        let s = order;
        let m_pieces = times.len();
        let dims = head.ncols();
        if s == 0 || m_pieces == 0 {
            return Err(MincoError::BadShape(
                "order and piece count must be positive".into(),
            ));
        }
        if head.nrows() != s || tail.nrows() != s || tail.ncols() != dims {
            return Err(MincoError::BadShape(format!(
                "boundary states must be {s} x {dims}"
            )));
        }
        if points.nrows() != m_pieces - 1 || (m_pieces > 1 && points.ncols() != dims) {
            return Err(MincoError::BadShape(format!(
                "expected {} intermediate points of dimension {dims}",
                m_pieces - 1
            )));
        }
        if !times.iter().all(|t| t.is_finite() && *t > 0.0) {
            return Err(MincoError::BadTimes);
        }
        let n = 2 * s;
        let size = n * m_pieces;
        let mut a = BandedMatrix::zeros(size, s + 1, s - 1);
        let mut b = vec![0.0; size * dims];
        for d in 0..s {
            a.set(d, d, falling(d, d));
            for k in 0..dims {
                b[d * dims + k] = head[(d, k)];
            }
        }
        for i in 0..m_pieces - 1 {
            let base = s + n * i;
            let t = times[i];
            for j in 0..n {
                a.set(base, n * i + j, basis(j, 0, t));
            }
            for k in 0..dims {
                b[base * dims + k] = points[(i, k)];
            }
            for d in 0..n - 1 {
                let r = base + 1 + d;
                for j in d..n {
                    a.set(r, n * i + j, basis(j, d, t));
                }
                a.set(r, n * (i + 1) + d, -falling(d, d));
            }
        }
        let base = size - s;
        let t = times[m_pieces - 1];
        for d in 0..s {
            for j in d..n {
                a.set(base + d, n * (m_pieces - 1) + j, basis(j, d, t));
            }
            for k in 0..dims {
                b[(base + d) * dims + k] = tail[(d, k)];
            }
        }
        let lu = a.factorize().map_err(|_| MincoError::Singular)?;
        lu.solve(&mut b, dims);
        Ok(Self {
            traj: PolyTrajectory {
                order: s,
                dims,
                times: times.to_vec(),
                coeffs: b,
            },
            lu,
        })
    }

    /// Pulls `∂F/∂c` (row-major like the coefficients) and direct `∂F/∂T`
    /// back to the construction inputs.
    pub fn propagate(&self, grad_c: &[f64], grad_t: &[f64]) -> MincoGradient {
        let tr = &self.traj;
        let (s, n, dims, mp) = (tr.order, tr.n_coeff(), tr.dims, tr.pieces());
        assert_eq!(grad_c.len(), tr.coeffs.len());
        assert_eq!(grad_t.len(), mp);
        let mut lam = grad_c.to_vec();
        self.lu.solve_transpose(&mut lam, dims);
        let row = |r: usize, k: usize| lam[r * dims + k];

        let head = DMatrix::from_fn(s, dims, |d, k| row(d, k));
        let tail = DMatrix::from_fn(s, dims, |d, k| row(n * mp - s + d, k));
        let points = DMatrix::from_fn(mp - 1, dims, |i, k| row(s + n * i, k));

        let mut times = grad_t.to_vec();
        let mut deriv = vec![0.0; dims];
        let mut apply = |piece: usize, r: usize, d: usize, times: &mut Vec<f64>| {
            tr.eval_piece_into(piece, tr.times[piece], d + 1, &mut deriv);
            times[piece] -= (0..dims).map(|k| row(r, k) * deriv[k]).sum::<f64>();
        };
        for i in 0..mp - 1 {
            let base = s + n * i;
            apply(i, base, 0, &mut times);
            for d in 0..n - 1 {
                apply(i, base + 1 + d, d, &mut times);
            }
        }
        for d in 0..s {
            apply(mp - 1, n * mp - s + d, d, &mut times);
        }
        MincoGradient {
            points,
            times,
            head,
            tail,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(
        rng: &mut ChaCha8Rng,
        s: usize,
        mp: usize,
        dims: usize,
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
        let mut r = |_, _| rng.random_range(-2.0..2.0);
        let head = DMatrix::from_fn(s, dims, &mut r);
        let tail = DMatrix::from_fn(s, dims, &mut r);
        let pts = DMatrix::from_fn(mp - 1, dims, &mut r);
        let times = (0..mp).map(|_| rng.random_range(0.2..1.5)).collect();
        (head, tail, pts, times)
    }

    #[test]
    fn two_point_cubic() {
        let t = 1.7;
        let head = DMatrix::from_row_slice(2, 1, &[0.0, 0.0]);
        let tail = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let mc = Minco::new(2, &head, &tail, &DMatrix::zeros(0, 1), &[t]).unwrap();
        for k in 0..=20 {
            let x = t * k as f64 / 20.0;
            let want = 3.0 * x * x / (t * t) - 2.0 * x.powi(3) / t.powi(3);
            assert!((mc.traj.at1(x, 0) - want).abs() <= 1e-8);
        }
        assert!((mc.traj.at1(t / 2.0, 0) - 0.5).abs() < 1e-12);
        let (e, _, _) = mc.traj.control_effort();
        assert!((e - 12.0 / t.powi(3)).abs() < 1e-9);
        // total time derivative of the energy through the coefficients
        let (_, gc, gt) = mc.traj.control_effort();
        let g = mc.propagate(&gc, &gt);
        assert!(
            (g.times[0] + 36.0 / t.powi(4)).abs() < 1e-8,
            "{}",
            g.times[0]
        );
    }

    #[test]
    fn boundary_values_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (head, tail, pts, times) = random_instance(&mut rng, 4, 5, 3);
        let mc = Minco::new(4, &head, &tail, &pts, &times).unwrap();
        let tr = &mc.traj;
        for d in 0..4 {
            let a = tr.evaluate(0.0, d);
            let b = tr.evaluate(tr.duration(), d);
            for k in 0..3 {
                assert!((a[k] - head[(d, k)]).abs() < 1e-9);
                assert!((b[k] - tail[(d, k)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn zero_gradients_stay_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (head, tail, pts, times) = random_instance(&mut rng, 4, 4, 3);
        let mc = Minco::new(4, &head, &tail, &pts, &times).unwrap();
        let g = mc.propagate(&vec![0.0; mc.traj.coeffs.len()], &[0.0; 4]);
        assert_eq!(g.points.amax(), 0.0);
        assert!(g.times.iter().all(|&t| t == 0.0));
        assert_eq!(g.tail.amax(), 0.0);
    }

    #[test]
    fn straight_line_has_no_effort() {
        let v = [1.0, -0.5, 0.2];
        let head = DMatrix::from_row_slice(
            4,
            3,
            &[
                0.0, 0.0, 0.0, v[0], v[1], v[2], 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
            ],
        );
        let times = [0.5, 0.7, 0.6];
        let total: f64 = times.iter().sum();
        let tail = DMatrix::from_row_slice(
            4,
            3,
            &[
                v[0] * total,
                v[1] * total,
                v[2] * total,
                v[0],
                v[1],
                v[2],
                0.0,
                0.0,
                0.0,
                0.0,
                0.0,
                0.0,
            ],
        );
        let pts = DMatrix::from_fn(2, 3, |i, k| v[k] * times[..=i].iter().sum::<f64>());
        let mc = Minco::new(4, &head, &tail, &pts, &times).unwrap();
        assert!(mc.traj.control_effort().0.abs() < 1e-12);
    }

    #[test]
    fn doubling_durations_lowers_effort() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let (head, tail, pts, times) = random_instance(&mut rng, 4, 3, 3);
            let a = Minco::new(4, &head, &tail, &pts, &times).unwrap();
            let doubled: Vec<f64> = times.iter().map(|t| 2.0 * t).collect();
            let b = Minco::new(4, &head, &tail, &pts, &doubled).unwrap();
            assert!(b.traj.control_effort().0 < a.traj.control_effort().0);
        }
    }

    #[test]
    fn invalid_inputs_rejected() {
        let h = DMatrix::zeros(2, 1);
        assert_eq!(
            Minco::new(2, &h, &h, &DMatrix::zeros(0, 1), &[0.0]).unwrap_err(),
            MincoError::BadTimes
        );
        assert!(matches!(
            Minco::new(2, &h, &h, &DMatrix::zeros(2, 1), &[1.0]),
            Err(MincoError::BadShape(_))
        ));
        assert!(matches!(
            Minco::new(2, &DMatrix::zeros(3, 1), &h, &DMatrix::zeros(0, 1), &[1.0]),
            Err(MincoError::BadShape(_))
        ));
    }

    #[test]
    fn serialization_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (head, tail, pts, times) = random_instance(&mut rng, 4, 3, 3);
        let tr = Minco::new(4, &head, &tail, &pts, &times).unwrap().traj;
        let back: PolyTrajectory =
            serde_json::from_str(&serde_json::to_string(&tr).unwrap()).unwrap();
        assert_eq!(back, tr);
    }
}
