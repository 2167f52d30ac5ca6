//! Lowest eigenpairs of a dense Hermitian matrix: Householder reduction to a
//! real symmetric tridiagonal, Sturm bisection, inverse iteration and back
//! transformation. Only the requested eigenpairs are formed.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Eigenvalues in ascending order with matching eigenvector columns.
#[derive(Clone, Debug)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: DMatrix<Complex64>,
}

/// `Q^H A Q = T` with `T` real symmetric tridiagonal and `Q = H_0 H_1 ... H_{n-2}`.
#[derive(Clone, Debug)]
pub struct Tridiagonal {
    d: Vec<f64>,
    e: Vec<f64>,
    /// `(tau_k, v_k)` with `H_k = I - tau_k v_k v_k^H` acting on indices `k+1..n`.
    reflectors: Vec<(Complex64, Vec<Complex64>)>,
    norm: f64,
}

impl Tridiagonal {
    pub fn new(a: &DMatrix<Complex64>) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() || n == 0 {
            return Err(Error::Dimension(format!(
                "expected a nonempty square matrix, got {}x{}",
                n,
                a.ncols()
            )));
        }
        // column-major working copy, full Hermitian storage
        let mut w: Vec<Complex64> = a.as_slice().to_vec();
        let idx = |r: usize, c: usize| r + c * n;
        let mut d = vec![0.0; n];
        let mut e = vec![0.0; n.saturating_sub(1)];
        let mut reflectors = Vec::with_capacity(n.saturating_sub(1));
        let mut x = vec![ZERO; n];
        for k in 0..n.saturating_sub(1) {
            let m = n - k - 1;
            let alpha = w[idx(k + 1, k)];
            let xnorm = (k + 2..n)
                .map(|r| w[idx(r, k)].norm_sqr())
                .sum::<f64>()
                .sqrt();
            let (tau, beta) = if xnorm == 0.0 && alpha.im == 0.0 {
                (ZERO, alpha.re)
            } else {
                let mag = (alpha.norm_sqr() + xnorm * xnorm).sqrt();
                let beta = if alpha.re >= 0.0 { -mag } else { mag };
                let tau = Complex64::new((beta - alpha.re) / beta, -alpha.im / beta);
                let scale = 1.0 / (alpha - beta);
                for r in k + 2..n {
                    w[idx(r, k)] *= scale;
                }
                (tau, beta)
            };
            d[k] = w[idx(k, k)].re;
            e[k] = beta;
            let mut v = Vec::with_capacity(m);
            v.push(Complex64::new(1.0, 0.0));
            v.extend((k + 2..n).map(|r| w[idx(r, k)]));
            if tau != ZERO {
                // x = tau A22 v
                let xs = &mut x[..m];
                xs.iter_mut().for_each(|t| *t = ZERO);
                for (c, vc) in v.iter().enumerate() {
                    let col = &w[idx(k + 1, k + 1 + c)..idx(k + 1, k + 1 + c) + m];
                    let s = tau * vc;
                    for (t, ac) in xs.iter_mut().zip(col) {
                        *t += ac * s;
                    }
                }
                let dot: Complex64 = xs.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
                let alpha2 = -0.5 * tau * dot;
                for (t, vc) in xs.iter_mut().zip(&v) {
                    *t += alpha2 * vc;
                }
                // A22 -= v w^H + w v^H
                for c in 0..m {
                    let wc = xs[c].conj();
                    let vc = v[c].conj();
                    let base = idx(k + 1, k + 1 + c);
                    for r in 0..m {
                        w[base + r] -= v[r] * wc + xs[r] * vc;
                    }
                }
            }
            reflectors.push((tau, v));
        }
        d[n - 1] = w[idx(n - 1, n - 1)].re;
        let mut norm = 0.0f64;
        for i in 0..n {
            let off = e.get(i).map_or(0.0, |v| v.abs()) + if i > 0 { e[i - 1].abs() } else { 0.0 };
            norm = norm.max(d[i].abs() + off);
        }
        Ok(Tridiagonal {
            d,
            e,
            reflectors,
            norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.d.len()
    }

    fn pivmin(&self) -> f64 {
        let emax = self.e.iter().map(|v| v * v).fold(1.0, f64::max);
        f64::MIN_POSITIVE * emax
    }

    /// Number of eigenvalues strictly below `x`.
    fn count_below(&self, x: f64) -> usize {
        let pivmin = self.pivmin();
        let mut count = 0;
        let mut q = self.d[0] - x;
        if q.abs() <= pivmin {
            q = -pivmin;
        }
        if q < 0.0 {
            count += 1;
        }
        for i in 1..self.d.len() {
            q = self.d[i] - x - self.e[i - 1] * self.e[i - 1] / q;
            if q.abs() <= pivmin {
                q = -pivmin;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// The `k`-th smallest eigenvalue (0-based) by bisection to full precision.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        let n = self.d.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let r = if i > 0 { self.e[i - 1].abs() } else { 0.0 }
                + self.e.get(i).map_or(0.0, |v| v.abs());
            lo = lo.min(self.d[i] - r);
            hi = hi.max(self.d[i] + r);
        }
        let pad = 2.0 * f64::EPSILON * self.norm.max(f64::MIN_POSITIVE) + self.pivmin();
        lo -= pad;
        hi += pad;
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Solves `(T - lambda) y = b` by Gaussian elimination with row
    /// interchanges; pivots below `eps |T|` in magnitude are replaced by it.
    fn shifted_solve(&self, lambda: f64, b: &mut [f64]) {
        let n = self.d.len();
        let tiny = f64::EPSILON * self.norm.max(f64::MIN_POSITIVE);
        let mut d: Vec<f64> = self.d.iter().map(|v| v - lambda).collect();
        if n == 1 {
            d[0] = clamp_pivot(d[0], tiny);
            b[0] /= d[0];
            return;
        }
        let mut dl = self.e.clone();
        let mut du = self.e.clone();
        for i in 0..n - 1 {
            if d[i].abs() >= dl[i].abs() {
                d[i] = clamp_pivot(d[i], tiny);
                let fact = dl[i] / d[i];
                d[i + 1] -= fact * du[i];
                b[i + 1] -= fact * b[i];
                dl[i] = 0.0;
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                let temp = d[i + 1];
                d[i + 1] = du[i] - fact * temp;
                if i + 2 < n {
                    dl[i] = du[i + 1];
                    du[i + 1] = -fact * dl[i];
                } else {
                    dl[i] = 0.0;
                }
                du[i] = temp;
                let tb = b[i];
                b[i] = b[i + 1];
                b[i + 1] = tb - fact * b[i + 1];
            }
        }
        d[n - 1] = clamp_pivot(d[n - 1], tiny);
        b[n - 1] /= d[n - 1];
        b[n - 2] = (b[n - 2] - du[n - 2] * b[n - 1]) / d[n - 2];
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - du[i] * b[i + 1] - dl[i] * b[i + 2]) / d[i];
        }
    }

    /// Eigenvectors of `T` for ascending `values` by inverse iteration;
    /// vectors whose eigenvalues lie within `1e-3 |T|` are orthogonalized.
    pub fn tridiagonal_vectors(&self, values: &[f64]) -> Vec<Vec<f64>> {
        let n = self.d.len();
        let ortol = 1e-3 * self.norm;
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(values.len());
        let mut seed: u64 = 0x9E37_79B9_7F4A_7C15;
        for (i, &lam) in values.iter().enumerate() {
            let mut y: Vec<f64> = (0..n)
                .map(|_| {
                    seed ^= seed << 13;
                    seed ^= seed >> 7;
                    seed ^= seed << 17;
                    (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
                })
                .collect();
            let cluster_start = (0..i)
                .rev()
                .take_while(|&p| lam - values[p] <= ortol)
                .last()
                .unwrap_or(i);
            for _ in 0..4 {
                self.shifted_solve(lam, &mut y);
                for _ in 0..2 {
                    for prev in &out[cluster_start..i] {
                        let dot: f64 = prev.iter().zip(&y).map(|(a, b)| a * b).sum();
                        y.iter_mut().zip(prev).for_each(|(a, b)| *a -= dot * b);
                    }
                }
                let nrm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                y.iter_mut().for_each(|v| *v /= nrm);
            }
            out.push(y);
        }
        out
    }

    /// `Q y`.
    pub fn back_transform(&self, y: &[f64]) -> Vec<Complex64> {
        let mut z: Vec<Complex64> = y.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        for (k, (tau, v)) in self.reflectors.iter().enumerate().rev() {
            if *tau == ZERO {
                continue;
            }
            let seg = &mut z[k + 1..];
            let dot: Complex64 = v.iter().zip(seg.iter()).map(|(a, b)| a.conj() * b).sum();
            let s = tau * dot;
            seg.iter_mut().zip(v).for_each(|(t, vv)| *t -= s * vv);
        }
        z
    }
}

fn clamp_pivot(p: f64, tiny: f64) -> f64 {
    if p.abs() < tiny {
        if p < 0.0 {
            -tiny
        } else {
            tiny
        }
    } else {
        p
    }
}

impl Tridiagonal {
    /// Eigenvectors of the original matrix `a` for the given ascending
    /// eigenvalues of `self`, residual checked.
    pub fn eigenvectors(
        &self,
        a: &DMatrix<Complex64>,
        values: &[f64],
    ) -> Result<Vec<Vec<Complex64>>> {
        let ys = self.tridiagonal_vectors(values);
        let zs: Vec<Vec<Complex64>> = ys.iter().map(|y| self.back_transform(y)).collect();
        for (c, z) in zs.iter().enumerate() {
            residual(a, values[c], z, self.norm.max(1.0), c)?;
        }
        Ok(zs)
    }
}

fn residual(a: &DMatrix<Complex64>, lam: f64, v: &[Complex64], scale: f64, c: usize) -> Result<()> {
    let n = a.nrows();
    let mut worst = 0.0f64;
    let mut acc = vec![ZERO; n];
    for k in 0..n {
        let col = a.column(k);
        let vk = v[k];
        for r in 0..n {
            acc[r] += col[r] * vk;
        }
    }
    for r in 0..n {
        worst = worst.max((acc[r] - lam * v[r]).norm());
    }
    if !(worst <= 1e-9 * scale) {
        return Err(Error::Numeric(format!(
            "eigenpair {c} residual {worst:.3e} exceeds tolerance (matrix scale {scale:.3e})"
        )));
    }
    Ok(())
}

/// The `count` lowest eigenpairs of the Hermitian matrix `a`.
pub fn eigh_lowest(a: &DMatrix<Complex64>, count: usize) -> Result<EigenPairs> {
    let n = a.nrows();
    if count > n {
        return Err(Error::Validation(format!(
            "requested {count} eigenpairs of a {n}x{n} matrix"
        )));
    }
    let t = Tridiagonal::new(a)?;
    let values: Vec<f64> = (0..count).map(|k| t.eigenvalue(k)).collect();
    let zs = t.eigenvectors(a, &values)?;
    let mut vectors = DMatrix::zeros(n, count);
    for (c, z) in zs.into_iter().enumerate() {
        for (r, v) in z.into_iter().enumerate() {
            vectors[(r, c)] = v;
        }
    }
    Ok(EigenPairs { values, vectors })
}

/// The `count` lowest eigenvalues of `a`.
pub fn eigvalsh_lowest(a: &DMatrix<Complex64>, count: usize) -> Result<Vec<f64>> {
    let n = a.nrows();
    if count > n {
        return Err(Error::Validation(format!(
            "requested {count} eigenvalues of a {n}x{n} matrix"
        )));
    }
    let t = Tridiagonal::new(a)?;
    Ok((0..count).map(|k| t.eigenvalue(k)).collect())
}

/// All eigenpairs.
pub fn eigh(a: &DMatrix<Complex64>) -> Result<EigenPairs> {
    eigh_lowest(a, a.nrows())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(n: usize, seed: u64) -> DMatrix<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = DMatrix::zeros(n, n);
        for c in 0..n {
            for r in 0..=c {
                let v = if r == c {
                    Complex64::new(rng.gen_range(-1.0..1.0), 0.0)
                } else {
                    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                };
                a[(r, c)] = v;
                a[(c, r)] = v.conj();
            }
        }
        a
    }

    #[test]
    fn agrees_with_reference_eigensolver() {
        for (n, seed) in [(1, 1), (2, 2), (7, 3), (40, 4)] {
            let a = random_hermitian(n, seed);
            let ours = eigh(&a).unwrap();
            let mut reference: Vec<f64> = nalgebra::SymmetricEigen::new(a.clone())
                .eigenvalues
                .iter()
                .cloned()
                .collect();
            reference.sort_by(f64::total_cmp);
            for (x, y) in ours.values.iter().zip(&reference) {
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
            let g = ours.vectors.adjoint() * &ours.vectors;
            for r in 0..n {
                for c in 0..n {
                    let want = if r == c { 1.0 } else { 0.0 };
                    assert!((g[(r, c)] - want).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn degenerate_diagonal() {
        let vals = [3.0, 1.0, 1.0, 2.0, 1.0];
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            5,
            vals.iter().map(|&v| Complex64::new(v, 0.0)),
        ));
        let p = eigh_lowest(&a, 4).unwrap();
        assert_eq!(p.values, vec![1.0, 1.0, 1.0, 2.0]);
        let g = p.vectors.adjoint() * &p.vectors;
        for r in 0..4 {
            for c in 0..4 {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((g[(r, c)] - want).norm() < 1e-12);
            }
        }
        for c in 0..3 {
            for r in [0, 3] {
                assert!(p.vectors[(r, c)].norm() < 1e-14);
            }
        }
    }
}
