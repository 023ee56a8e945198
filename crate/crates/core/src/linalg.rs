//! Banded LU factorization for the sparse systems produced by the grid
//! operators. Storage follows the LAPACK `gbtrf` layout in spirit: each row
//! keeps the columns `row - kl ..= row + ku + kl`, the extra `kl` columns
//! absorbing fill from partial pivoting.

use num_complex::Complex64;

use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Banded matrix under assembly.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    /// Upper bandwidth reserved for pivoting fill.
    ku_ext: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl BandMatrix {
    pub fn new(n: usize, kl: usize, ku: usize, pivoting: bool) -> Self {
        let ku_ext = if pivoting { ku + kl } else { ku };
        let width = kl + ku_ext + 1;
        Self {
            n,
            kl,
            ku,
            ku_ext,
            width,
            data: vec![ZERO; n * width],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, row: usize, col: usize) -> usize {
        row * self.width + (col + self.kl - row)
    }

    #[inline]
    fn in_band(&self, row: usize, col: usize) -> bool {
        col + self.kl >= row && col <= row + self.ku
    }

    /// Adds `v` at `(row, col)`. Panics when the entry is outside the band.
    pub fn add(&mut self, row: usize, col: usize, v: Complex64) {
        assert!(
            self.in_band(row, col),
            "entry ({row}, {col}) outside band kl={} ku={}",
            self.kl,
            self.ku
        );
        let s = self.slot(row, col);
        self.data[s] += v;
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        if col + self.kl >= row && col <= row + self.ku_ext {
            self.data[self.slot(row, col)]
        } else {
            ZERO
        }
    }

    /// `y = A x` on the unfactored matrix.
    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y = vec![ZERO; self.n];
        for (row, yr) in y.iter_mut().enumerate() {
            let lo = row.saturating_sub(self.kl);
            let hi = (row + self.ku).min(self.n - 1);
            let mut acc = ZERO;
            for col in lo..=hi {
                acc += self.data[self.slot(row, col)] * x[col];
            }
            *yr = acc;
        }
        y
    }

    /// Max-row-sum norm of the unfactored matrix.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|row| {
                let lo = row.saturating_sub(self.kl);
                let hi = (row + self.ku).min(self.n - 1);
                (lo..=hi).map(|c| self.data[self.slot(row, c)].norm()).sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// Factorizes in place. Without pivoting the matrix should be diagonally
    /// dominant or positive definite.
    pub fn factorize(mut self) -> Result<BandLu> {
        let n = self.n;
        let kl = self.kl;
        let pivoting = self.ku_ext > self.ku;
        let mut piv = Vec::with_capacity(n);
        let scale = self.norm_inf().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            if pivoting {
                let mut best = self.data[self.slot(k, k)].norm();
                for i in k + 1..=last_row {
                    let v = self.data[self.slot(i, k)].norm();
                    if v > best {
                        best = v;
                        p = i;
                    }
                }
            }
            let last_col = (k + self.ku_ext).min(n - 1);
            if p != k {
                for c in k..=last_col {
                    let a = self.slot(k, c);
                    let b = self.slot(p, c);
                    self.data.swap(a, b);
                }
            }
            piv.push(p);
            let pivot = self.data[self.slot(k, k)];
            if pivot.norm() <= 1e-300_f64.max(scale * 1e-15) {
                return Err(Error::SolverBreakdown(format!(
                    "zero pivot at row {k} of {n}"
                )));
            }
            let inv = pivot.inv();
            for i in k + 1..=last_row {
                let sik = self.slot(i, k);
                let l = self.data[sik] * inv;
                if l == ZERO {
                    continue;
                }
                self.data[sik] = l;
                for c in k + 1..=last_col {
                    let u = self.data[self.slot(k, c)];
                    if u != ZERO {
                        let s = self.slot(i, c);
                        self.data[s] -= l * u;
                    }
                }
            }
        }
        Ok(BandLu { band: self, piv })
    }
}

/// Factorized band matrix, reusable for many right-hand sides.
#[derive(Debug, Clone)]
pub struct BandLu {
    band: BandMatrix,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn dim(&self) -> usize {
        self.band.n
    }

    pub fn solve_in_place(&self, b: &mut [Complex64]) {
        let a = &self.band;
        let n = a.n;
        assert_eq!(b.len(), n);
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk == ZERO {
                continue;
            }
            for i in k + 1..=(k + a.kl).min(n - 1) {
                b[i] -= a.data[a.slot(i, k)] * bk;
            }
        }
        for k in (0..n).rev() {
            let mut acc = b[k];
            for c in k + 1..=(k + a.ku_ext).min(n - 1) {
                acc -= a.data[a.slot(k, c)] * b[c];
            }
            b[k] = acc / a.data[a.slot(k, k)];
        }
    }

    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn tridiagonal_solve() {
        let n = 6;
        let mut a = BandMatrix::new(n, 1, 1, false);
        for i in 0..n {
            a.add(i, i, c(2.0, 0.0));
            if i > 0 {
                a.add(i, i - 1, c(-1.0, 0.0));
            }
            if i + 1 < n {
                a.add(i, i + 1, c(-1.0, 0.0));
            }
        }
        let x: Vec<Complex64> = (0..n).map(|i| c(i as f64, 1.0 - i as f64)).collect();
        let b = a.mul_vec(&x);
        let lu = a.factorize().unwrap();
        let y = lu.solve(&b);
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).norm() < 1e-12);
        }
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        // [[0, 1], [1, 0]] needs a row swap
        let mut a = BandMatrix::new(2, 1, 1, true);
        a.add(0, 1, c(1.0, 0.0));
        a.add(1, 0, c(1.0, 0.0));
        let lu = a.factorize().unwrap();
        let y = lu.solve(&[c(3.0, 0.0), c(5.0, 0.0)]);
        assert!((y[0] - c(5.0, 0.0)).norm() < 1e-14);
        assert!((y[1] - c(3.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn singular_reported() {
        let a = BandMatrix::new(3, 1, 1, true);
        assert!(matches!(a.factorize(), Err(Error::SolverBreakdown(_))));
    }

    proptest! {
        #[test]
        fn random_banded_systems_solve(
            seed in proptest::collection::vec(-1.0f64..1.0, 200),
            kl in 0usize..4, ku in 0usize..4,
        ) {
            let n = 12;
            let mut a = BandMatrix::new(n, kl, ku, true);
            let mut it = seed.iter().cycle();
            for i in 0..n {
                for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                    let v = c(*it.next().unwrap(), *it.next().unwrap());
                    a.add(i, j, v);
                }
                // keep it comfortably nonsingular
                a.add(i, i, c(3.0, 0.5));
            }
            let x: Vec<Complex64> = (0..n).map(|i| c((i as f64).sin(), (i as f64).cos())).collect();
            let b = a.mul_vec(&x);
            let lu = a.factorize().unwrap();
            let y = lu.solve(&b);
            for (u, v) in x.iter().zip(&y) {
                prop_assert!((u - v).norm() < 1e-9);
            }
        }
    }
}
