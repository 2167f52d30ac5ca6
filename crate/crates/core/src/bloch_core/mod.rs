//! Shifted cell eigenproblems, band structures and group velocities.

mod contour;

pub use contour::{isofrequency_contour, Polyline};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::cell_model::{CoefficientField, FourierTable};
use crate::error::{Error, Result};
use crate::exec::{map_range, Execution};
use crate::linalg::{eigh_lowest, eigvalsh_lowest, Tridiagonal};

/// Which half of the strip a quantity refers to: `Plus` is the crystal, `Minus` free space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Plus => "plus",
            Side::Minus => "minus",
        }
    }
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Side {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plus" | "+" => Ok(Side::Plus),
            "minus" | "-" => Ok(Side::Minus),
            _ => Err(Error::Validation(format!("unknown side '{s}'"))),
        }
    }
}

/// Lexicographic plane-wave index set `|G|_inf <= cutoff`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlaneWaves {
    pub cutoff: usize,
}

impl PlaneWaves {
    #[inline]
    pub fn width(&self) -> usize {
        2 * self.cutoff + 1
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.width() * self.width()
    }

    #[inline]
    pub fn g(&self, idx: usize) -> [i32; 2] {
        let w = self.width();
        let c = self.cutoff as i32;
        [(idx / w) as i32 - c, (idx % w) as i32 - c]
    }

    #[inline]
    pub fn index(&self, g: [i32; 2]) -> Option<usize> {
        let c = self.cutoff as i32;
        if g[0].abs() > c || g[1].abs() > c {
            return None;
        }
        Some((g[0] + c) as usize * self.width() + (g[1] + c) as usize)
    }
}

/// Reduces `j` to `[0, 1)^2`.
pub fn canonical_j(j: [f64; 2]) -> [f64; 2] {
    let c = |v: f64| {
        let r = v.rem_euclid(1.0);
        if r >= 1.0 {
            0.0
        } else {
            r
        }
    };
    [c(j[0]), c(j[1])]
}

/// A normalized cell eigenfunction `Psi_{j,m}` in plane-wave coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlochMode {
    pub j: [f64; 2],
    pub m: usize,
    pub mu: f64,
    pub psi: Vec<Complex64>,
    pub cutoff: usize,
    pub side: Side,
    pub epsilon: f64,
}

impl BlochMode {
    pub fn basis(&self) -> PlaneWaves {
        PlaneWaves {
            cutoff: self.cutoff,
        }
    }

    pub fn coeff(&self, g: [i32; 2]) -> Complex64 {
        self.basis()
            .index(g)
            .map_or(Complex64::new(0.0, 0.0), |i| self.psi[i])
    }

    /// `U(x) = Psi(x) exp(2 pi i j.x / eps)`.
    pub fn evaluate(&self, x: [f64; 2]) -> Complex64 {
        let pw = self.basis();
        let mut s = Complex64::new(0.0, 0.0);
        for (i, c) in self.psi.iter().enumerate() {
            if *c == Complex64::new(0.0, 0.0) {
                continue;
            }
            let g = pw.g(i);
            let ph =
                2.0 * PI * ((g[0] as f64 + self.j[0]) * x[0] + (g[1] as f64 + self.j[1]) * x[1])
                    / self.epsilon;
            s += c * Complex64::from_polar(1.0, ph);
        }
        s
    }
}

/// Assembles `A[G', G] = (4 pi^2 / eps^2) ((G' + j).(G + j)) a_hat(G' - G)`.
pub fn assemble_cell_operator(
    a_hat: &FourierTable,
    j: [f64; 2],
    epsilon: f64,
    cutoff: usize,
) -> Result<DMatrix<Complex64>> {
    if cutoff == 0 {
        return Err(Error::Validation("cutoff must be at least 1".into()));
    }
    if a_hat.gmax() < 2 * cutoff as i32 {
        return Err(Error::Assembly(format!(
            "Fourier table holds |G| <= {}, cutoff {cutoff} needs {}",
            a_hat.gmax(),
            2 * cutoff
        )));
    }
    let pw = PlaneWaves { cutoff };
    let n = pw.dim();
    let scale = 4.0 * PI * PI / (epsilon * epsilon);
    let mut a = DMatrix::zeros(n, n);
    for q in 0..n {
        let gq = pw.g(q);
        let kq = [gq[0] as f64 + j[0], gq[1] as f64 + j[1]];
        for p in 0..n {
            let gp = pw.g(p);
            let kp = [gp[0] as f64 + j[0], gp[1] as f64 + j[1]];
            let ah = a_hat.get(gp[0] - gq[0], gp[1] - gq[1]).unwrap();
            a[(p, q)] = ah * (scale * (kp[0] * kq[0] + kp[1] * kq[1]));
        }
    }
    Ok(a)
}

/// One eigenpair returned by [`solve_bands`].
#[derive(Clone, Debug)]
pub struct BandPair {
    pub mu: f64,
    pub psi: Vec<Complex64>,
}

/// Relative gap below which neighbouring eigenvalues form one cluster.
pub const CLUSTER_GAP: f64 = 1e-9;

fn apply_gauge(v: &mut [Complex64]) {
    let mut best = 0.0;
    for c in v.iter() {
        best = f64::max(best, c.norm());
    }
    if best == 0.0 {
        return;
    }
    let idx = v
        .iter()
        .position(|c| c.norm() >= best * (1.0 - 1e-12))
        .unwrap();
    let phase = v[idx].conj() / v[idx].norm();
    for c in v.iter_mut() {
        *c *= phase;
    }
    v[idx] = Complex64::new(v[idx].re, 0.0);
}

/// Deterministic orthonormal basis of the span of `cols`: repeatedly take the
/// projection of the plane wave with the largest remaining weight (lowest
/// index on ties). Returns `(pivot, vector)` sorted by pivot.
fn canonical_cluster(cols: Vec<Vec<Complex64>>) -> Vec<(usize, Vec<Complex64>)> {
    let n = cols[0].len();
    let mut w = cols;
    let mut out = Vec::new();
    while !w.is_empty() {
        let d = w.len();
        let row_norm = |g: usize| w.iter().map(|c| c[g].norm_sqr()).sum::<f64>();
        let norms: Vec<f64> = (0..n).map(row_norm).collect();
        let max = norms.iter().cloned().fold(0.0, f64::max);
        let pivot = norms
            .iter()
            .position(|&r| r >= max * (1.0 - 1e-10))
            .unwrap();
        let rn = norms[pivot].sqrt();
        let coef: Vec<Complex64> = w.iter().map(|c| c[pivot].conj() / rn).collect();
        let mut b = vec![Complex64::new(0.0, 0.0); n];
        for (c, k) in w.iter().zip(&coef) {
            for (bi, ci) in b.iter_mut().zip(c) {
                *bi += ci * k;
            }
        }
        out.push((pivot, b));
        // orthonormal complement of `coef` in C^d, then rotate the working basis
        let mut comp: Vec<Vec<Complex64>> = Vec::new();
        let mut basis = vec![coef.clone()];
        for e in 0..d {
            let mut v = vec![Complex64::new(0.0, 0.0); d];
            v[e] = Complex64::new(1.0, 0.0);
            for _ in 0..2 {
                for u in &basis {
                    let dot: Complex64 = u.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
                    for (vi, ui) in v.iter_mut().zip(u) {
                        *vi -= dot * ui;
                    }
                }
            }
            let nv = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            if nv > 1e-6 && comp.len() < d - 1 {
                for c in v.iter_mut() {
                    *c /= nv;
                }
                basis.push(v.clone());
                comp.push(v);
            }
        }
        let next: Vec<Vec<Complex64>> = comp
            .iter()
            .map(|q| {
                let mut v = vec![Complex64::new(0.0, 0.0); n];
                for (c, k) in w.iter().zip(q) {
                    for (vi, ci) in v.iter_mut().zip(c) {
                        *vi += ci * k;
                    }
                }
                v
            })
            .collect();
        w = next;
    }
    out.sort_by_key(|(p, _)| *p);
    out
}

/// First `count` eigenpairs, ascending, orthonormal and gauge fixed.
pub fn solve_bands(a: &DMatrix<Complex64>, count: usize) -> Result<Vec<BandPair>> {
    let n = a.nrows();
    if count > n {
        return Err(Error::Validation(format!(
            "requested {count} bands from a {n}x{n} operator"
        )));
    }
    let t = Tridiagonal::new(a)?;
    let mut vals: Vec<f64> = (0..count).map(|k| t.eigenvalue(k)).collect();
    // extend through a cluster straddling the last requested band
    while vals.len() < n && count > 0 {
        let last = vals[vals.len() - 1];
        let next = t.eigenvalue(vals.len());
        if next - last < CLUSTER_GAP * last.abs().max(1.0) {
            vals.push(next);
        } else {
            break;
        }
    }
    let n = vals.len();
    let vectors = t.eigenvectors(a, &vals)?;
    let mut out = Vec::with_capacity(count);
    let mut start = 0;
    while start < count {
        let mut end = start + 1;
        while end < n && vals[end] - vals[end - 1] < CLUSTER_GAP * vals[end - 1].abs().max(1.0) {
            end += 1;
        }
        if end - start == 1 {
            let mut v: Vec<Complex64> = vectors[start].clone();
            apply_gauge(&mut v);
            out.push(BandPair {
                mu: vals[start],
                psi: v,
            });
        } else {
            let cols = (start..end).map(|c| vectors[c].clone()).collect();
            for (k, (_, mut v)) in canonical_cluster(cols).into_iter().enumerate() {
                if start + k >= count {
                    break;
                }
                apply_gauge(&mut v);
                out.push(BandPair {
                    mu: vals[start + k],
                    psi: v,
                });
            }
        }
        start = end;
    }
    Ok(out)
}

/// A free-space band: `mu = 4 pi^2 |k + j|^2 / eps^2`, `Psi = exp(2 pi i k.x / eps)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FreeBand {
    pub mu: f64,
    pub k: [i32; 2],
}

/// The `count` lowest free-space bands at `j`; ties ordered lexicographically in `k`.
pub fn free_space_bands(j: [f64; 2], epsilon: f64, count: usize) -> Vec<FreeBand> {
    let r = (count as f64).sqrt().ceil() as i32 + 2;
    let scale = 4.0 * PI * PI / (epsilon * epsilon);
    let mut all = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
    for k1 in -r..=r {
        for k2 in -r..=r {
            let a = k1 as f64 + j[0];
            let b = k2 as f64 + j[1];
            all.push(FreeBand {
                mu: scale * (a * a + b * b),
                k: [k1, k2],
            });
        }
    }
    all.sort_by(|x, y| x.mu.total_cmp(&y.mu).then(x.k.cmp(&y.k)));
    all.truncate(count);
    all
}

/// The lowest `count` Bloch modes of `field` at `j`. Constant fields use the
/// closed form (scaled by the constant), all others the plane-wave eigensolve.
pub fn compute_modes(
    field: &CoefficientField,
    side: Side,
    j: [f64; 2],
    count: usize,
    cutoff: usize,
) -> Result<Vec<BlochMode>> {
    let j = canonical_j(j);
    let epsilon = field.epsilon();
    let pw = PlaneWaves { cutoff };
    if let Some(c) = field.constant_value() {
        let bands = free_space_bands(j, epsilon, count);
        return bands
            .into_iter()
            .enumerate()
            .map(|(m, b)| {
                let idx = pw.index(b.k).ok_or_else(|| {
                    Error::Validation(format!("band {m} at k = {:?} exceeds cutoff {cutoff}", b.k))
                })?;
                let mut psi = vec![Complex64::new(0.0, 0.0); pw.dim()];
                psi[idx] = Complex64::new(1.0, 0.0);
                Ok(BlochMode {
                    j,
                    m,
                    mu: c * b.mu,
                    psi,
                    cutoff,
                    side,
                    epsilon,
                })
            })
            .collect();
    }
    let table = field.fourier_coefficients(cutoff)?;
    let a = assemble_cell_operator(&table, j, epsilon, cutoff)?;
    Ok(solve_bands(&a, count)?
        .into_iter()
        .enumerate()
        .map(|(m, p)| BlochMode {
            j,
            m,
            mu: p.mu,
            psi: p.psi,
            cutoff,
            side,
            epsilon,
        })
        .collect())
}

/// The lowest `count` eigenvalues of `field` at `j`.
pub fn band_values(
    field: &CoefficientField,
    j: [f64; 2],
    count: usize,
    cutoff: usize,
) -> Result<Vec<f64>> {
    let j = canonical_j(j);
    if let Some(c) = field.constant_value() {
        return Ok(free_space_bands(j, field.epsilon(), count)
            .iter()
            .map(|b| c * b.mu)
            .collect());
    }
    let table = field.fourier_coefficients(cutoff)?;
    let a = assemble_cell_operator(&table, j, field.epsilon(), cutoff)?;
    eigvalsh_lowest(&a, count)
}

/// How a group velocity was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMethod {
    HellmannFeynman,
    /// Central differences with step 1e-3; used near degeneracies.
    FiniteDifference,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupVelocity {
    pub grad: [f64; 2],
    pub method: GradientMethod,
}

/// `<Psi, dA/dj_i Psi>` with `dA/dj_i[G', G] = (4 pi^2/eps^2)(G'_i + G_i + 2 j_i) a_hat(G' - G)`.
pub fn hellmann_feynman(
    a_hat: &FourierTable,
    j: [f64; 2],
    epsilon: f64,
    psi: &[Complex64],
    cutoff: usize,
) -> [f64; 2] {
    let pw = PlaneWaves { cutoff };
    let scale = 4.0 * PI * PI / (epsilon * epsilon);
    let mut acc = [Complex64::new(0.0, 0.0); 2];
    for (p, cp) in psi.iter().enumerate() {
        if *cp == Complex64::new(0.0, 0.0) {
            continue;
        }
        let gp = pw.g(p);
        for (q, cq) in psi.iter().enumerate() {
            if *cq == Complex64::new(0.0, 0.0) {
                continue;
            }
            let gq = pw.g(q);
            let w = cp.conj() * cq * a_hat.get(gp[0] - gq[0], gp[1] - gq[1]).unwrap();
            for i in 0..2 {
                acc[i] += w * (gp[i] as f64 + gq[i] as f64 + 2.0 * j[i]);
            }
        }
    }
    [scale * acc[0].re, scale * acc[1].re]
}

/// Gradient `grad_j mu_m(j)`.
pub fn group_velocity(
    field: &CoefficientField,
    j: [f64; 2],
    m: usize,
    cutoff: usize,
) -> Result<GroupVelocity> {
    let epsilon = field.epsilon();
    let table = field.fourier_coefficients(cutoff)?;
    let a = assemble_cell_operator(&table, j, epsilon, cutoff)?;
    if m >= a.nrows() {
        return Err(Error::Validation(format!(
            "band {m} beyond operator size {}",
            a.nrows()
        )));
    }
    let eig = eigh_lowest(&a, (m + 2).min(a.nrows()))?;
    let v = &eig.values;
    let tol = 1e-6 * v[m].abs().max(1.0);
    let below = if m > 0 {
        v[m] - v[m - 1]
    } else {
        f64::INFINITY
    };
    let above = if m + 1 < v.len() {
        v[m + 1] - v[m]
    } else {
        f64::INFINITY
    };
    if below > tol && above > tol {
        let psi: Vec<Complex64> = eig.vectors.column(m).iter().cloned().collect();
        return Ok(GroupVelocity {
            grad: hellmann_feynman(&table, j, epsilon, &psi, cutoff),
            method: GradientMethod::HellmannFeynman,
        });
    }
    let h = 1e-3;
    let mut grad = [0.0; 2];
    for i in 0..2 {
        let mut jp = j;
        let mut jm = j;
        jp[i] += h;
        jm[i] -= h;
        let fp = band_values(field, jp, m + 1, cutoff)?[m];
        let fm = band_values(field, jm, m + 1, cutoff)?[m];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    if !(grad[0].is_finite() && grad[1].is_finite()) {
        return Err(Error::DegenerateBand(format!(
            "band {m} at j = {j:?}: finite differences failed"
        )));
    }
    Ok(GroupVelocity {
        grad,
        method: GradientMethod::FiniteDifference,
    })
}

/// Eigenvalues on the `Q_R x Q_R` grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BandStructure {
    pub r: usize,
    pub side: Side,
    pub epsilon: f64,
    pub j_grid: Vec<[f64; 2]>,
    pub bands: Vec<Vec<f64>>,
}

pub fn band_structure(
    field: &CoefficientField,
    side: Side,
    r: usize,
    count: usize,
    cutoff: usize,
    exec: Execution,
) -> Result<BandStructure> {
    if r == 0 {
        return Err(Error::Validation("grid order R must be positive".into()));
    }
    let j_grid: Vec<[f64; 2]> = (0..r * r)
        .map(|i| [(i / r) as f64 / r as f64, (i % r) as f64 / r as f64])
        .collect();
    let bands = map_range(exec, j_grid.len(), |i| {
        band_values(field, j_grid[i], count, cutoff)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(BandStructure {
        r,
        side,
        epsilon: field.epsilon(),
        j_grid,
        bands,
    })
}

/// Pointwise access to `mu_m(j)`.
pub trait BandSampler: Sync {
    fn mu(&self, j: [f64; 2], m: usize) -> f64;
}

/// Samples bands of a coefficient field (closed form for constants).
#[derive(Clone, Debug)]
pub struct FieldSampler {
    pub field: CoefficientField,
    pub cutoff: usize,
}

impl BandSampler for FieldSampler {
    fn mu(&self, j: [f64; 2], m: usize) -> f64 {
        band_values(&self.field, j, m + 1, self.cutoff)
            .map(|v| v[m])
            .unwrap_or(f64::NAN)
    }
}

/// Result of the frequency smallness check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmallnessCheck {
    pub ok: bool,
    pub margin: f64,
    pub inf_plus: f64,
    pub inf_minus: f64,
}

/// Grid infimum of the second band on both sides against `omega^2`.
pub fn check_frequency_smallness(
    crystal: &CoefficientField,
    omega: f64,
    cutoff: usize,
    grid_n: usize,
    exec: Execution,
) -> Result<SmallnessCheck> {
    if grid_n < 8 {
        return Err(Error::Validation(format!(
            "grid_n must be at least 8, got {grid_n}"
        )));
    }
    let free = CoefficientField::free_space(crystal.epsilon());
    let inf = |f: &CoefficientField| -> Result<f64> {
        let vals = map_range(exec, grid_n * grid_n, |i| {
            let j = [
                (i / grid_n) as f64 / grid_n as f64,
                (i % grid_n) as f64 / grid_n as f64,
            ];
            band_values(f, j, 2, cutoff).map(|v| v[1])
        });
        let mut m = f64::INFINITY;
        for v in vals {
            m = m.min(v?);
        }
        Ok(m)
    };
    let inf_plus = inf(crystal)?;
    let inf_minus = inf(&free)?;
    let bound = inf_plus.min(inf_minus);
    let w2 = omega * omega;
    Ok(SmallnessCheck {
        ok: w2 < bound,
        margin: bound - w2,
        inf_plus,
        inf_minus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell_model::Geometry;

    fn free() -> CoefficientField {
        CoefficientField::free_space(1.0)
    }

    #[test]
    fn free_matrix_is_diagonal() {
        let t = free().fourier_coefficients(1).unwrap();
        let a = assemble_cell_operator(&t, [0.0, 0.0], 1.0, 1).unwrap();
        let pw = PlaneWaves { cutoff: 1 };
        for p in 0..9 {
            for q in 0..9 {
                let g = pw.g(p);
                let want = if p == q {
                    4.0 * PI * PI * (g[0] * g[0] + g[1] * g[1]) as f64
                } else {
                    0.0
                };
                assert!((a[(p, q)].re - want).abs() < 1e-12 && a[(p, q)].im == 0.0);
            }
        }
        let two = CoefficientField::new(1.0, Geometry::Constant { value: 2.0 }).unwrap();
        let b = assemble_cell_operator(&two.fourier_coefficients(1).unwrap(), [0.3, 0.1], 1.0, 1)
            .unwrap();
        let a = assemble_cell_operator(&t, [0.3, 0.1], 1.0, 1).unwrap();
        assert_eq!(b, a * Complex64::new(2.0, 0.0));
    }

    #[test]
    fn cutoff_too_large_for_table() {
        let t = free().fourier_coefficients(2).unwrap();
        assert!(matches!(
            assemble_cell_operator(&t, [0.0, 0.0], 1.0, 3),
            Err(Error::Assembly(_))
        ));
    }

    #[test]
    fn free_space_examples() {
        let t = free().fourier_coefficients(3).unwrap();
        let a = assemble_cell_operator(&t, [0.0, 0.0], 1.0, 3).unwrap();
        let b = solve_bands(&a, 1).unwrap();
        assert!(b[0].mu.abs() < 1e-12);
        let pw = PlaneWaves { cutoff: 3 };
        assert!((b[0].psi[pw.index([0, 0]).unwrap()] - 1.0).norm() < 1e-12);
        let a = assemble_cell_operator(&t, [0.25, 0.0], 1.0, 3).unwrap();
        let b = solve_bands(&a, 2).unwrap();
        assert!((b[0].mu - 2.467_401_100_272_339_6).abs() < 1e-9);
        assert!((b[1].mu - 4.0 * PI * PI * 9.0 / 16.0).abs() < 1e-9);
        let fb = free_space_bands([0.25, 0.0], 1.0, 1);
        assert_eq!(fb[0].k, [0, 0]);
        assert!((fb[0].mu - PI * PI / 4.0).abs() < 1e-14);
    }

    #[test]
    fn four_fold_tie_is_lexicographic() {
        let fb = free_space_bands([0.5, 0.5], 1.0, 4);
        let ks: Vec<[i32; 2]> = fb.iter().map(|b| b.k).collect();
        assert_eq!(ks, vec![[-1, -1], [-1, 0], [0, -1], [0, 0]]);
        for b in &fb {
            assert!((b.mu - 2.0 * PI * PI).abs() < 1e-12);
        }
        // the eigensolver path resolves the cluster the same way
        let t = free().fourier_coefficients(2).unwrap();
        let a = assemble_cell_operator(&t, [0.5, 0.5], 1.0, 2).unwrap();
        let b = solve_bands(&a, 4).unwrap();
        let pw = PlaneWaves { cutoff: 2 };
        for (pair, fb) in b.iter().zip(&fb) {
            let idx = pw.index(fb.k).unwrap();
            assert!((pair.psi[idx] - 1.0).norm() < 1e-10, "{:?}", fb.k);
        }
    }

    #[test]
    fn group_velocity_free_space() {
        let g = group_velocity(&free(), [0.3, 0.2], 0, 4).unwrap();
        assert_eq!(g.method, GradientMethod::HellmannFeynman);
        let want = [8.0 * PI * PI * 0.3, 8.0 * PI * PI * 0.2];
        assert!((g.grad[0] - want[0]).abs() < 1e-9 && (g.grad[1] - want[1]).abs() < 1e-9);
        let g = group_velocity(&free(), [0.25, 0.0], 0, 4).unwrap();
        assert!((g.grad[0] - 2.0 * PI * PI).abs() < 1e-9 && g.grad[1].abs() < 1e-9);
        // j = (1/2, 0) is a two-fold crossing
        let g = group_velocity(&free(), [0.5, 0.1], 0, 4).unwrap();
        assert_eq!(g.method, GradientMethod::FiniteDifference);
    }

    #[test]
    fn smallness_free_space() {
        let c = check_frequency_smallness(&free(), 0.0, 3, 64, Execution::Sequential).unwrap();
        // second free band: min over the 64-grid, attained at j = (1/2, 0)
        let mut want = f64::INFINITY;
        for i in 0..64 {
            for k in 0..64 {
                let fb = free_space_bands([i as f64 / 64.0, k as f64 / 64.0], 1.0, 2);
                want = want.min(fb[1].mu);
            }
        }
        assert_eq!(c.inf_minus, want);
        assert!((want - PI * PI).abs() < 1e-12);
        assert!(c.ok);
    }
}
