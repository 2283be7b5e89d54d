//! Banded LU factorisation with partial pivoting.

/// Square matrix with `lower` sub- and `upper` super-diagonals, stored by
/// row with room for pivoting fill-in.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedMatrix {
    n: usize,
    lower: usize,
    upper: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, lower: usize, upper: usize) -> Self {
        let width = 2 * lower + upper + 1;
        Self {
            n,
            lower,
            upper,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(
            j + self.lower >= i && j <= i + self.lower + self.upper,
            "({i}, {j}) outside band"
        );
        i * self.width + (j + self.lower - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.lower < i || j > i + self.lower + self.upper {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// Sets an entry inside the declared band.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            j + self.lower >= i && j <= i + self.upper,
            "({i}, {j}) outside band"
        );
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    /// Factorises in place; fails on a zero pivot.
    pub fn factorize(mut self) -> Result<BandedLu, usize> {
        let (n, kl) = (self.n, self.lower);
        let reach = self.lower + self.upper;
        let mut pivots = vec![0usize; n];
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.slot(k, k)].abs();
            for r in k + 1..=last {
                let v = self.data[self.slot(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(k);
            }
            pivots[k] = p;
            let cols = (k + reach).min(n - 1);
            if p != k {
                for j in k..=cols {
                    let (a, b) = (self.slot(k, j), self.slot(p, j));
                    self.data.swap(a, b);
                }
            }
            let d = self.data[self.slot(k, k)];
            for r in k + 1..=last {
                let s = self.slot(r, k);
                let l = self.data[s] / d;
                self.data[s] = l;
                if l != 0.0 {
                    for j in k + 1..=cols {
                        let u = self.data[self.slot(k, j)];
                        let t = self.slot(r, j);
                        self.data[t] -= l * u;
                    }
                }
            }
        }
        Ok(BandedLu { m: self, pivots })
    }
}

#[derive(Debug, Clone)]
pub struct BandedLu {
    m: BandedMatrix,
    pivots: Vec<usize>,
}

impl BandedLu {
    pub fn size(&self) -> usize {
        self.m.n
    }

    /// Solves `A x = b` for every column of the row-major `n × cols` block.
    pub fn solve(&self, b: &mut [f64], cols: usize) {
        let m = &self.m;
        let (n, kl) = (m.n, m.lower);
        let reach = m.lower + m.upper;
        assert_eq!(b.len(), n * cols);
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                for c in 0..cols {
                    b.swap(k * cols + c, p * cols + c);
                }
            }
            for r in k + 1..=(k + kl).min(n - 1) {
                let l = m.data[m.slot(r, k)];
                if l != 0.0 {
                    for c in 0..cols {
                        b[r * cols + c] -= l * b[k * cols + c];
                    }
                }
            }
        }
        for k in (0..n).rev() {
            for j in k + 1..=(k + reach).min(n - 1) {
                let u = m.data[m.slot(k, j)];
                if u != 0.0 {
                    for c in 0..cols {
                        b[k * cols + c] -= u * b[j * cols + c];
                    }
                }
            }
            let d = m.data[m.slot(k, k)];
            for c in 0..cols {
                b[k * cols + c] /= d;
            }
        }
    }

    /// Solves `Aᵀ x = b` for every column of the row-major block.
    pub fn solve_transpose(&self, b: &mut [f64], cols: usize) {
        let m = &self.m;
        let (n, kl) = (m.n, m.lower);
        let reach = m.lower + m.upper;
        assert_eq!(b.len(), n * cols);
        // Uᵀ z = b, forward
        for k in 0..n {
            let d = m.data[m.slot(k, k)];
            for c in 0..cols {
                b[k * cols + c] /= d;
            }
            for j in k + 1..=(k + reach).min(n - 1) {
                let u = m.data[m.slot(k, j)];
                if u != 0.0 {
                    for c in 0..cols {
                        b[j * cols + c] -= u * b[k * cols + c];
                    }
                }
            }
        }
        // then the elimination steps in reverse, each followed by its swap
        for k in (0..n).rev() {
            for r in k + 1..=(k + kl).min(n - 1) {
                let l = m.data[m.slot(r, k)];
                if l != 0.0 {
                    for c in 0..cols {
                        b[k * cols + c] -= l * b[r * cols + c];
                    }
                }
            }
            let p = self.pivots[k];
            if p != k {
                for c in 0..cols {
                    b.swap(k * cols + c, p * cols + c);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_band(
        n: usize,
        kl: usize,
        ku: usize,
        rng: &mut ChaCha8Rng,
    ) -> (BandedMatrix, DMatrix<f64>) {
        let mut b = BandedMatrix::zeros(n, kl, ku);
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                // sparse-ish, with zero diagonals to force pivoting
                if rng.random_bool(0.7) && !(i == j && rng.random_bool(0.3)) {
                    let v = rng.random_range(-2.0..2.0);
                    b.set(i, j, v);
                    d[(i, j)] = v;
                }
            }
        }
        (b, d)
    }

    #[test]
    fn matches_dense_solves() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 200 {
            let n = rng.random_range(1..40);
            let (kl, ku) = (rng.random_range(0..5), rng.random_range(0..5));
            let (band, dense) = random_band(n, kl, ku, &mut rng);
            if dense.clone().lu().determinant().abs() < 1e-6 {
                continue;
            }
            let Ok(lu) = band.factorize() else {
                continue;
            };
            let x = DMatrix::<f64>::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
            let rhs = &dense * &x;
            let mut b: Vec<f64> = (0..n).flat_map(|i| [rhs[(i, 0)], rhs[(i, 1)]]).collect();
            lu.solve(&mut b, 2);
            let rhs_t = dense.transpose() * &x;
            let mut bt: Vec<f64> = (0..n)
                .flat_map(|i| [rhs_t[(i, 0)], rhs_t[(i, 1)]])
                .collect();
            lu.solve_transpose(&mut bt, 2);
            let scale = x.amax().max(1.0) * dense.clone().try_inverse().unwrap().amax().max(1.0);
            for i in 0..n {
                for c in 0..2 {
                    assert!(
                        (b[i * 2 + c] - x[(i, c)]).abs() < 1e-9 * scale,
                        "n {n} kl {kl} ku {ku}"
                    );
                    assert!((bt[i * 2 + c] - x[(i, c)]).abs() < 1e-9 * scale);
                }
            }
            checked += 1;
        }
    }

    #[test]
    fn singular_is_rejected() {
        let m = BandedMatrix::zeros(3, 1, 1);
        assert!(m.factorize().is_err());
    }
}
