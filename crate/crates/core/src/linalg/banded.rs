//! Complex banded LU with partial pivoting, LAPACK `gbtrf` storage.
//!
//! Entry `A[i][j]` lives at `data[(kl + ku + i - j) + j * ldab]` with
//! `ldab = 2 kl + ku + 1`; the top `kl` rows of each column hold fill-in.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::exec::{for_each_chunk, Execution};

#[derive(Clone, Debug)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    data: Vec<Complex64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        BandedMatrix {
            n,
            kl,
            ku,
            ldab,
            data: vec![Complex64::new(0.0, 0.0); ldab * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        if i >= self.n || j >= self.n || i + self.ku < j || i > j + self.kl {
            return None;
        }
        Some(self.kl + self.ku + i - j + j * self.ldab)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.slot(i, j)
            .map_or(Complex64::new(0.0, 0.0), |s| self.data[s])
    }

    /// Adds `v` to `A[i][j]`; panics outside the band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: Complex64) {
        let s = self
            .slot(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside band ({}, {})", self.kl, self.ku));
        self.data[s] += v;
    }

    /// Fills every column from `f(j)`, a list of `(row, value)` pairs that are
    /// added to the column; columns are processed in parallel under `exec`.
    pub fn fill_columns<F>(&mut self, exec: Execution, f: F)
    where
        F: Fn(usize) -> Vec<(usize, Complex64)> + Sync + Send,
    {
        let (n, kl, ku, ldab) = (self.n, self.kl, self.ku, self.ldab);
        for_each_chunk(exec, &mut self.data, ldab, |j, col| {
            for (i, v) in f(j) {
                assert!(
                    i < n && i + ku >= j && i <= j + kl,
                    "entry ({i}, {j}) outside band ({kl}, {ku})"
                );
                col[kl + ku + i - j] += v;
            }
        });
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y = vec![Complex64::new(0.0, 0.0); self.n];
        for j in 0..self.n {
            let lo = j.saturating_sub(self.ku);
            let hi = (j + self.kl).min(self.n - 1);
            for (i, yi) in y.iter_mut().enumerate().take(hi + 1).skip(lo) {
                *yi += self.data[self.kl + self.ku + i - j + j * self.ldab] * x[j];
            }
        }
        y
    }

    /// LU factorization with partial pivoting (consumes the matrix).
    pub fn factor(mut self) -> Result<BandedLu> {
        let n = self.n;
        let (kl, ku, ldab) = (self.kl, self.ku, self.ldab);
        let kv = kl + ku;
        let mut ipiv = vec![0usize; n];
        let mut ju = 0usize;
        let mut max_pivot = 0.0f64;
        let mut min_pivot = f64::INFINITY;
        let a = &mut self.data;
        let idx = |i: usize, j: usize| kv + i - j + j * ldab;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut jp = 0;
            let mut best = -1.0;
            for r in 0..=km {
                let v = a[kv + r + j * ldab].norm();
                if v > best {
                    best = v;
                    jp = r;
                }
            }
            ipiv[j] = j + jp;
            if best == 0.0 {
                return Err(Error::Solver(format!(
                    "singular banded matrix: zero pivot in column {j}; try a larger sponge damping"
                )));
            }
            max_pivot = max_pivot.max(best);
            min_pivot = min_pivot.min(best);
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    a.swap(idx(j, c), idx(j + jp, c));
                }
            }
            let inv = 1.0 / a[kv + j * ldab];
            for r in 1..=km {
                a[kv + r + j * ldab] *= inv;
            }
            for c in (j + 1)..=ju {
                let ujc = a[idx(j, c)];
                if ujc == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let base_c = c * ldab + kv - c;
                let base_j = j * ldab + kv - j;
                for r in 1..=km {
                    let i = j + r;
                    let l = a[base_j + i];
                    a[base_c + i] -= l * ujc;
                }
            }
        }
        Ok(BandedLu {
            n,
            kl,
            ku,
            ldab,
            data: self.data,
            ipiv,
            pivot_ratio: if max_pivot > 0.0 {
                min_pivot / max_pivot
            } else {
                0.0
            },
        })
    }
}

/// Factorization produced by [`BandedMatrix::factor`].
#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    data: Vec<Complex64>,
    ipiv: Vec<usize>,
    pivot_ratio: f64,
}

impl BandedLu {
    /// Smallest over largest pivot magnitude; a cheap conditioning hint.
    pub fn pivot_ratio(&self) -> f64 {
        self.pivot_ratio
    }

    pub fn solve_in_place(&self, b: &mut [Complex64]) {
        let n = self.n;
        let kv = self.kl + self.ku;
        let ldab = self.ldab;
        let a = &self.data;
        for j in 0..n {
            let km = self.kl.min(n - 1 - j);
            let l = self.ipiv[j];
            if l != j {
                b.swap(l, j);
            }
            let bj = b[j];
            for r in 1..=km {
                b[j + r] -= a[kv + r + j * ldab] * bj;
            }
        }
        for j in (0..n).rev() {
            b[j] /= a[kv + j * ldab];
            let bj = b[j];
            let lo = j.saturating_sub(kv);
            for i in lo..j {
                b[i] -= a[kv + i - j + j * ldab] * bj;
            }
        }
    }
}
