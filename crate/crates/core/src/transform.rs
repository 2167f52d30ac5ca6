//! Vertical pre-Bloch expansions, Bloch expansions on boxes and projections.

use num_complex::Complex64;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use crate::bloch_core::{canonical_j, compute_modes, PlaneWaves, Side};
use crate::cell_model::CoefficientField;
use crate::error::{Error, Result};
use crate::exec::{map_range, Execution};
use crate::fft;
use crate::flux::poynting_from_psi;

pub use crate::field::{BoxField, FieldStrip};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// `DFT(w) / N` on the box grid, indexed by FFT bins (`k1 * n + k2`).
/// The true coefficient of frequency `f` (samples sit at half steps) is
/// `raw[bin(f)] * half_shift(f, n)`.
pub fn box_spectrum(exec: Execution, w: &BoxField) -> Vec<Complex64> {
    let n = w.n();
    let mut data = w.samples.clone();
    fft::fft2(exec, &mut data, n, n, false);
    let norm = 1.0 / (n * n) as f64;
    for v in data.iter_mut() {
        *v *= norm;
    }
    data
}

/// Phase `exp(-i pi (f1 + f2) / n)` from the half-step sample offset.
#[inline]
pub fn half_shift(f1: i64, f2: i64, n: usize) -> Complex64 {
    Complex64::from_polar(1.0, -PI * (f1 + f2) as f64 / n as f64)
}

/// Bloch modes of one side at one `j`, with their Poynting numbers.
#[derive(Clone, Debug)]
pub struct ModeSet {
    pub j: [f64; 2],
    pub mus: Vec<f64>,
    pub psi: Vec<Vec<Complex64>>,
    pub poynting: Vec<f64>,
}

/// Caching provider of Bloch bases for one side of the interface.
#[derive(Debug)]
pub struct BlochBasis {
    side: Side,
    field: CoefficientField,
    cutoff: usize,
    cache: Mutex<HashMap<(u64, u64, usize), Arc<ModeSet>>>,
}

impl BlochBasis {
    pub fn new(field: CoefficientField, side: Side, cutoff: usize) -> Self {
        BlochBasis {
            side,
            field,
            cutoff,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn field(&self) -> &CoefficientField {
        &self.field
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn epsilon(&self) -> f64 {
        self.field.epsilon()
    }

    /// The lowest `count` modes at `j`; concurrent callers may compute the same
    /// entry twice, the first insertion wins.
    pub fn modes(&self, j: [f64; 2], count: usize) -> Result<Arc<ModeSet>> {
        let j = canonical_j(j);
        let key = (j[0].to_bits(), j[1].to_bits(), count);
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let modes = compute_modes(&self.field, self.side, j, count, self.cutoff)?;
        let table = self.field.fourier_table();
        let set = ModeSet {
            j,
            mus: modes.iter().map(|m| m.mu).collect(),
            poynting: modes
                .iter()
                .map(|m| poynting_from_psi(&m.psi, j, self.cutoff, self.field.epsilon(), table))
                .collect(),
            psi: modes.into_iter().map(|m| m.psi).collect(),
        };
        let mut cache = self.cache.lock().unwrap();
        Ok(cache.entry(key).or_insert_with(|| Arc::new(set)).clone())
    }
}

/// Coefficients `alpha_{(j,m),R}` of a box field, `j` in `Q_R x Q_R`, `m < M`.
#[derive(Clone, Debug)]
pub struct BlochCoefficients {
    pub r: usize,
    pub side: Side,
    pub m_count: usize,
    pub epsilon: f64,
    pub n_cell: usize,
    pub cutoff: usize,
    /// Layout `(a1 * R + a2) * M + m` with `j = (a1, a2) / R`.
    pub alpha: Vec<Complex64>,
    /// Basis data per `j` bin; `None` where the field had no content.
    pub modes: Vec<Option<Arc<ModeSet>>>,
    pub residual_mass: f64,
    pub total_mass: f64,
}

impl BlochCoefficients {
    #[inline]
    pub fn index(&self, a1: usize, a2: usize, m: usize) -> usize {
        (a1 * self.r + a2) * self.m_count + m
    }

    pub fn j_of_bin(&self, bin: usize) -> [f64; 2] {
        [
            (bin / self.r) as f64 / self.r as f64,
            (bin % self.r) as f64 / self.r as f64,
        ]
    }

    /// `Sigma |alpha|^2` over the stored indices.
    pub fn mass(&self) -> f64 {
        self.alpha.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn poynting(&self, bin: usize, m: usize) -> Option<f64> {
        self.modes[bin].as_ref().map(|s| s.poynting[m])
    }

    pub fn mu(&self, bin: usize, m: usize) -> Option<f64> {
        self.modes[bin].as_ref().map(|s| s.mus[m])
    }

    /// Iterates `(j, m, alpha)` over all stored indices.
    pub fn iter(&self) -> impl Iterator<Item = ([f64; 2], usize, Complex64)> + '_ {
        self.alpha
            .iter()
            .enumerate()
            .map(move |(i, &a)| (self.j_of_bin(i / self.m_count), i % self.m_count, a))
    }
}

fn check_basis_grid(n_cell: usize, cutoff: usize) -> Result<()> {
    if n_cell < 2 * cutoff + 2 {
        return Err(Error::Grid(format!(
            "n_cell = {n_cell} cannot resolve a plane-wave cutoff of {cutoff}; need n_cell >= {}",
            2 * cutoff + 2
        )));
    }
    Ok(())
}

/// `alpha_lambda = <w, U_lambda>_R` by a box FFT and per-`j` inner products.
pub fn bloch_coefficients(
    w: &BoxField,
    m_count: usize,
    basis: &BlochBasis,
    exec: Execution,
) -> Result<BlochCoefficients> {
    let cutoff = basis.cutoff();
    check_basis_grid(w.n_cell, cutoff)?;
    if (basis.epsilon() - w.epsilon).abs() > 1e-15 * w.epsilon {
        return Err(Error::Dimension(
            "basis period differs from the box period".into(),
        ));
    }
    let r = w.r;
    let n = w.n();
    let raw = box_spectrum(exec, w);
    let total: f64 = raw.iter().map(|c| c.norm_sqr()).sum();
    let pw = PlaneWaves { cutoff };
    let ri = r as i64;
    // content per j bin, summed over all bins of that residue class
    let mut bin_mass = vec![0.0; r * r];
    for k1 in 0..n {
        for k2 in 0..n {
            bin_mass[(k1 % r) * r + k2 % r] += raw[k1 * n + k2].norm_sqr();
        }
    }
    let per_bin = map_range(
        exec,
        r * r,
        |b| -> Result<(Vec<Complex64>, Option<Arc<ModeSet>>)> {
            if total == 0.0 || bin_mass[b] <= 1e-26 * total {
                return Ok((vec![ZERO; m_count], None));
            }
            let a1 = (b / r) as i64;
            let a2 = (b % r) as i64;
            let set = basis.modes([a1 as f64 / r as f64, a2 as f64 / r as f64], m_count)?;
            let proj: Vec<Complex64> = (0..pw.dim())
                .map(|i| {
                    let g = pw.g(i);
                    let f1 = g[0] as i64 * ri + a1;
                    let f2 = g[1] as i64 * ri + a2;
                    raw[fft::bin(f1, n) * n + fft::bin(f2, n)] * half_shift(f1, f2, n)
                })
                .collect();
            let alphas = set
                .psi
                .iter()
                .map(|psi| psi.iter().zip(&proj).map(|(c, p)| c.conj() * p).sum())
                .collect();
            Ok((alphas, Some(set)))
        },
    );
    let mut alpha = Vec::with_capacity(r * r * m_count);
    let mut modes = Vec::with_capacity(r * r);
    for item in per_bin {
        let (a, s) = item?;
        alpha.extend(a);
        modes.push(s);
    }
    let mass: f64 = alpha.iter().map(|a| a.norm_sqr()).sum();
    let residual = total - mass;
    if residual < -1e-8 * total.max(1e-300) {
        return Err(Error::Numeric(format!(
            "Bloch coefficients exceed the field energy: residual {residual:.3e} of {total:.3e}"
        )));
    }
    Ok(BlochCoefficients {
        r,
        side: basis.side(),
        m_count,
        epsilon: w.epsilon,
        n_cell: w.n_cell,
        cutoff,
        alpha,
        modes,
        residual_mass: residual,
        total_mass: total,
    })
}

/// `Sigma alpha_lambda U_lambda` on the box grid.
pub fn synthesize(coeffs: &BlochCoefficients, exec: Execution) -> Result<BoxField> {
    check_basis_grid(coeffs.n_cell, coeffs.cutoff)?;
    let r = coeffs.r;
    let n = r * coeffs.n_cell;
    let ri = r as i64;
    let pw = PlaneWaves {
        cutoff: coeffs.cutoff,
    };
    let mut spec = vec![ZERO; n * n];
    for b in 0..r * r {
        let Some(set) = &coeffs.modes[b] else {
            continue;
        };
        let a1 = (b / r) as i64;
        let a2 = (b % r) as i64;
        for m in 0..coeffs.m_count {
            let alpha = coeffs.alpha[b * coeffs.m_count + m];
            if alpha == ZERO {
                continue;
            }
            for (i, c) in set.psi[m].iter().enumerate() {
                if *c == ZERO {
                    continue;
                }
                let g = pw.g(i);
                let f1 = g[0] as i64 * ri + a1;
                let f2 = g[1] as i64 * ri + a2;
                spec[fft::bin(f1, n) * n + fft::bin(f2, n)] +=
                    alpha * c * half_shift(f1, f2, n).conj();
            }
        }
    }
    fft::fft2(exec, &mut spec, n, n, true);
    BoxField::new(r, coeffs.epsilon, coeffs.n_cell, spec)
}

/// Coefficient layout for synthesizing chosen modes from scratch.
pub fn coefficients_from_modes(
    basis: &BlochBasis,
    r: usize,
    n_cell: usize,
    m_count: usize,
    entries: &[([usize; 2], usize, Complex64)],
) -> Result<BlochCoefficients> {
    let mut alpha = vec![ZERO; r * r * m_count];
    let mut modes = vec![None; r * r];
    for &(a, m, val) in entries {
        if a[0] >= r || a[1] >= r || m >= m_count {
            return Err(Error::Index(format!(
                "mode ({a:?}, {m}) outside Q_{r} x {m_count}"
            )));
        }
        let b = a[0] * r + a[1];
        if modes[b].is_none() {
            modes[b] =
                Some(basis.modes([a[0] as f64 / r as f64, a[1] as f64 / r as f64], m_count)?);
        }
        alpha[b * m_count + m] += val;
    }
    Ok(BlochCoefficients {
        r,
        side: basis.side(),
        m_count,
        epsilon: basis.epsilon(),
        n_cell,
        cutoff: basis.cutoff(),
        total_mass: alpha.iter().map(|a| a.norm_sqr()).sum(),
        alpha,
        modes,
        residual_mass: 0.0,
    })
}

/// Sign sets of the Poynting number.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignSet {
    Negative,
    NonPositive,
    Positive,
    NonNegative,
    Zero,
}

impl SignSet {
    pub fn contains(self, p: f64, tol: f64) -> bool {
        match self {
            SignSet::Negative => p < -tol,
            SignSet::NonPositive => p <= tol,
            SignSet::Positive => p > tol,
            SignSet::NonNegative => p >= -tol,
            SignSet::Zero => p.abs() <= tol,
        }
    }
}

/// Index predicates for [`project`].
#[derive(Clone, Debug, PartialEq)]
pub enum Predicate {
    Poynting {
        set: SignSet,
        tol: f64,
    },
    /// `j2 = k2` with `k2` in `Q_R`.
    Vertical(f64),
    Level(usize),
    LevelAtLeast(usize),
    And(Box<Predicate>, Box<Predicate>),
}

impl Predicate {
    pub fn and(self, other: Predicate) -> Predicate {
        Predicate::And(Box::new(self), Box::new(other))
    }

    fn holds(&self, c: &BlochCoefficients, bin: usize, m: usize) -> bool {
        match self {
            Predicate::Poynting { set, tol } => {
                c.poynting(bin, m).is_some_and(|p| set.contains(p, *tol))
            }
            Predicate::Vertical(k2) => {
                let j2 = c.j_of_bin(bin)[1];
                let d = (j2 - k2).rem_euclid(1.0);
                d.min(1.0 - d) <= 1e-9
            }
            Predicate::Level(l) => m == *l,
            Predicate::LevelAtLeast(l) => m >= *l,
            Predicate::And(a, b) => a.holds(c, bin, m) && b.holds(c, bin, m),
        }
    }

    /// Whether the unresolved `m >= M` remainder belongs to the projection.
    fn keeps_residual(&self) -> bool {
        match self {
            Predicate::LevelAtLeast(_) => true,
            Predicate::And(a, b) => a.keeps_residual() && b.keeps_residual(),
            _ => false,
        }
    }
}

/// Zeroes every coefficient whose index fails `pred`.
pub fn project(coeffs: &BlochCoefficients, pred: &Predicate) -> BlochCoefficients {
    let mut out = coeffs.clone();
    for (i, a) in out.alpha.iter_mut().enumerate() {
        if !pred.holds(coeffs, i / coeffs.m_count, i % coeffs.m_count) {
            *a = ZERO;
        }
    }
    if !pred.keeps_residual() {
        out.residual_mass = 0.0;
    }
    out.total_mass = out.mass() + out.residual_mass;
    out
}

/// Pre-Bloch components `Phi_{j2}` (stored on the full strip grid).
#[derive(Clone, Debug)]
pub struct PreBlochExpansion {
    /// Number of vertical phase shifts, `j2 = a / order`.
    pub order: usize,
    pub phi: Vec<FieldStrip>,
}

impl PreBlochExpansion {
    /// `Sigma Phi_{j2} exp(2 pi i j2 x2 / eps)`.
    pub fn reconstruct(&self) -> FieldStrip {
        let mut out = self.phi[0].clone();
        out.samples.iter_mut().for_each(|v| *v = ZERO);
        for (a, phi) in self.phi.iter().enumerate() {
            let j2 = a as f64 / self.order as f64;
            let n2 = phi.n2();
            for (idx, v) in phi.samples.iter().enumerate() {
                let x2 = phi.x2(idx % n2);
                out.samples[idx] +=
                    v * Complex64::from_polar(1.0, 2.0 * PI * j2 * x2 / phi.epsilon);
            }
        }
        out
    }

    /// Mean square of `Phi_{a / order}` over the strip.
    pub fn mass(&self, a: usize) -> f64 {
        let p = &self.phi[a];
        p.samples.iter().map(|v| v.norm_sqr()).sum::<f64>() / p.samples.len().max(1) as f64
    }
}

fn column_projections(u: &FieldStrip, order: usize) -> Vec<FieldStrip> {
    let n2 = u.n2();
    let mut spec = u.samples.clone();
    fft::fft_rows(Execution::default(), &mut spec, n2, false);
    let mut out = Vec::with_capacity(order);
    for a in 0..order {
        let mut masked: Vec<Complex64> = spec
            .iter()
            .enumerate()
            .map(|(i, v)| {
                if (i % n2) % order == a {
                    v / n2 as f64
                } else {
                    ZERO
                }
            })
            .collect();
        fft::fft_rows(Execution::default(), &mut masked, n2, true);
        out.push(FieldStrip {
            samples: masked,
            ..u.clone()
        });
    }
    out
}

/// Splits `u` into `Phi_{j2}`, `j2 in Q_K`.
pub fn vertical_pre_bloch(u: &FieldStrip) -> Result<PreBlochExpansion> {
    let k = u.k_cells;
    if u.n2() % k != 0 {
        return Err(Error::Grid(
            "vertical sample count not divisible by K".into(),
        ));
    }
    let parts = column_projections(u, k);
    let phi = parts
        .into_iter()
        .enumerate()
        .map(|(a, mut p)| {
            let j2 = a as f64 / k as f64;
            let n2 = p.n2();
            for (idx, v) in p.samples.iter_mut().enumerate() {
                let x2 = (idx % n2) as f64 + 0.5;
                *v *= Complex64::from_polar(1.0, -2.0 * PI * j2 * x2 / u.n_cell as f64);
            }
            p
        })
        .collect();
    Ok(PreBlochExpansion { order: k, phi })
}

fn q_index(k2: f64, order: usize) -> Result<usize> {
    let t = k2.rem_euclid(1.0) * order as f64;
    let a = t.round();
    if (t - a).abs() > 1e-9 {
        return Err(Error::Index(format!("k2 = {k2} is not in Q_{order}")));
    }
    Ok(a as usize % order)
}

/// `Phi_{k2} exp(2 pi i k2 x2 / eps)`.
pub fn vertical_projection(u: &FieldStrip, k2: f64) -> Result<FieldStrip> {
    let a = q_index(k2, u.k_cells)?;
    Ok(column_projections(u, u.k_cells).swap_remove(a))
}

/// Tiles `u` vertically to height `R eps` and expands over `Q_R`.
pub fn extend_and_expand(u: &FieldStrip, r: usize) -> Result<PreBlochExpansion> {
    let k = u.k_cells;
    if r == 0 || r % k != 0 {
        return Err(Error::Grid(format!("R = {r} is not a multiple of K = {k}")));
    }
    let reps = r / k;
    let n2 = u.n2();
    let mut samples = Vec::with_capacity(u.samples.len() * reps);
    for i1 in 0..u.n1 {
        let col = &u.samples[i1 * n2..(i1 + 1) * n2];
        for _ in 0..reps {
            samples.extend_from_slice(col);
        }
    }
    let ext = FieldStrip {
        k_cells: r,
        samples,
        ..u.clone()
    };
    vertical_pre_bloch(&ext)
}

/// `max |grad(Pi u) - Pi(grad u)|` with spectral `d2` and centered `d1`.
pub fn projection_gradient_commutation_check(u: &FieldStrip, k2: f64) -> Result<f64> {
    let d = |f: &FieldStrip| -> (FieldStrip, FieldStrip) {
        let n2 = f.n2();
        let dx = f.spacing();
        let mut d1 = f.clone();
        for i1 in 0..f.n1 {
            for i2 in 0..n2 {
                d1.samples[i1 * n2 + i2] = if i1 == 0 || i1 + 1 == f.n1 {
                    ZERO
                } else {
                    (f.get(i1 + 1, i2) - f.get(i1 - 1, i2)) / (2.0 * dx)
                };
            }
        }
        let mut spec = f.samples.clone();
        fft::fft_rows(Execution::default(), &mut spec, n2, false);
        let h = f.height();
        for (i, v) in spec.iter_mut().enumerate() {
            let q = fft::signed(i % n2, n2);
            let q = if n2 % 2 == 0 && q == -(n2 as i64) / 2 {
                0
            } else {
                q
            };
            *v *= Complex64::new(0.0, 2.0 * PI * q as f64 / h) / n2 as f64;
        }
        fft::fft_rows(Execution::default(), &mut spec, n2, true);
        (
            d1,
            FieldStrip {
                samples: spec,
                ..f.clone()
            },
        )
    };
    let p = vertical_projection(u, k2)?;
    let (a1, a2) = d(&p);
    let (g1, g2) = d(u);
    let b1 = vertical_projection(&g1, k2)?;
    let b2 = vertical_projection(&g2, k2)?;
    let mut worst = 0.0f64;
    for (x, y) in a1
        .samples
        .iter()
        .zip(&b1.samples)
        .chain(a2.samples.iter().zip(&b2.samples))
    {
        worst = worst.max((x - y).norm());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell_model::Geometry;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rod() -> CoefficientField {
        CoefficientField::new(
            1.0,
            Geometry::Rod {
                center: [0.5, 0.5],
                radius: 0.3,
                a_inside: 0.5,
                a_outside: 1.0,
                mollify: 0.1,
            },
        )
        .unwrap()
    }

    fn pure(k: usize, q: usize, n1: usize) -> FieldStrip {
        FieldStrip::from_fn(-1.0, 1.0, 4, k, n1, |x| {
            Complex64::from_polar(1.0, 2.0 * PI * (q as f64 / k as f64) * x[1])
        })
    }

    fn random_strip(seed: u64, k: usize, n_cell: usize, n1: usize) -> FieldStrip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n2 = k * n_cell;
        let samples = (0..n1 * n2)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        FieldStrip::new(0.0, 1.0, n_cell, k, n1, samples).unwrap()
    }

    #[test]
    fn pre_bloch_pure_mode() {
        let u = pure(4, 2, 3);
        let e = vertical_pre_bloch(&u).unwrap();
        for a in 0..4 {
            for v in &e.phi[a].samples {
                let want = if a == 2 { 1.0 } else { 0.0 };
                assert!((v - want).norm() < 1e-12, "a={a} {v}");
            }
        }
        let one = FieldStrip::from_fn(0.0, 1.0, 4, 4, 2, |_| Complex64::new(1.0, 0.0));
        let e = vertical_pre_bloch(&one).unwrap();
        assert!(e.phi[0].samples.iter().all(|v| (v - 1.0).norm() < 1e-12));
        assert!((1..4).all(|a| e.mass(a) < 1e-26));
    }

    #[test]
    fn pre_bloch_round_trip() {
        let u = random_strip(7, 4, 8, 5);
        let back = vertical_pre_bloch(&u).unwrap().reconstruct();
        for (a, b) in u.samples.iter().zip(&back.samples) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn vertical_projection_examples() {
        let u = pure(4, 1, 3);
        let p = vertical_projection(&u, 0.25).unwrap();
        assert!(p
            .samples
            .iter()
            .zip(&u.samples)
            .all(|(a, b)| (a - b).norm() < 1e-12));
        let p = vertical_projection(&u, 0.5).unwrap();
        assert!(p.max_abs() < 1e-12);
        assert!(matches!(vertical_projection(&u, 0.3), Err(Error::Index(_))));

        let v = pure(4, 3, 3);
        let mut sum = u.clone();
        sum.samples
            .iter_mut()
            .zip(&v.samples)
            .for_each(|(a, b)| *a = *a * 0.6 + b * 0.8);
        let p = vertical_projection(&sum, 0.25).unwrap();
        let q = vertical_projection(&sum, 0.75).unwrap();
        let e = |f: &FieldStrip| f.samples.iter().map(|c| c.norm_sqr()).sum::<f64>();
        assert!((e(&p) + e(&q) - e(&sum)).abs() < 1e-12 * e(&sum));
        // idempotent, and the complement is orthogonal
        let r = random_strip(3, 4, 4, 6);
        let p = vertical_projection(&r, 0.5).unwrap();
        let pp = vertical_projection(&p, 0.5).unwrap();
        assert!(p
            .samples
            .iter()
            .zip(&pp.samples)
            .all(|(a, b)| (a - b).norm() < 1e-12));
        let ip: Complex64 = p
            .samples
            .iter()
            .zip(&r.samples)
            .map(|(a, b)| a * (b - a).conj())
            .sum();
        assert!(ip.norm() < 1e-10);
    }

    #[test]
    fn extension_keeps_q_k() {
        let u = pure(2, 1, 3);
        let e = extend_and_expand(&u, 4).unwrap();
        assert_eq!(e.order, 4);
        assert!(e.phi[2].samples.iter().all(|v| (v - 1.0).norm() < 1e-12));
        assert!(e.mass(1) + e.mass(3) + e.mass(0) < 1e-24);
        let r = random_strip(11, 2, 4, 5);
        let total = r.samples.iter().map(|c| c.norm_sqr()).sum::<f64>() / r.samples.len() as f64;
        let e = extend_and_expand(&r, 8).unwrap();
        let off: f64 = (0..8).filter(|a| a % 4 != 0).map(|a| e.mass(a)).sum();
        assert!(off <= 1e-10 * total);
        let zero = FieldStrip {
            samples: vec![ZERO; r.samples.len()],
            ..r.clone()
        };
        let e = extend_and_expand(&zero, 4).unwrap();
        assert!((0..4).all(|a| e.mass(a) == 0.0));
        assert!(matches!(extend_and_expand(&r, 3), Err(Error::Grid(_))));
    }

    #[test]
    fn single_mode_coefficients() {
        let basis = BlochBasis::new(CoefficientField::free_space(1.0), Side::Minus, 3);
        let c = coefficients_from_modes(&basis, 4, 8, 3, &[([1, 0], 0, Complex64::new(1.0, 0.0))])
            .unwrap();
        let w = synthesize(&c, Execution::Sequential).unwrap();
        let back = bloch_coefficients(&w, 3, &basis, Execution::Sequential).unwrap();
        for (i, a) in back.alpha.iter().enumerate() {
            let want = if i == back.index(1, 0, 0) { 1.0 } else { 0.0 };
            assert!((a - want).norm() < 1e-10, "{i} {a}");
        }
        assert!(back.residual_mass.abs() < 1e-10);
        let z = bloch_coefficients(
            &BoxField::zeros(4, 1.0, 8),
            3,
            &basis,
            Execution::Sequential,
        )
        .unwrap();
        assert!(z.alpha.iter().all(|a| *a == ZERO));
    }

    #[test]
    fn two_mode_crystal_mix() {
        let basis = BlochBasis::new(rod(), Side::Plus, 5);
        let entries = [
            ([1, 2], 0, Complex64::new(0.6, 0.0)),
            ([3, 1], 1, Complex64::new(0.0, 0.8)),
        ];
        let c = coefficients_from_modes(&basis, 4, 12, 3, &entries).unwrap();
        let w = synthesize(&c, Execution::default()).unwrap();
        assert!((w.mean_sq() - 1.0).abs() < 1e-10);
        let back = bloch_coefficients(&w, 3, &basis, Execution::default()).unwrap();
        assert!((back.alpha[back.index(1, 2, 0)].norm() - 0.6).abs() < 1e-9);
        assert!((back.alpha[back.index(3, 1, 1)].norm() - 0.8).abs() < 1e-9);
        assert!((back.mass() + back.residual_mass - 1.0).abs() < 1e-8);
        let again = bloch_coefficients(
            &synthesize(&back, Execution::Sequential).unwrap(),
            3,
            &basis,
            Execution::Sequential,
        )
        .unwrap();
        for (a, b) in back.alpha.iter().zip(&again.alpha) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let basis = BlochBasis::new(CoefficientField::free_space(1.0), Side::Minus, 5);
        let w = BoxField::zeros(2, 1.0, 8);
        assert!(matches!(
            bloch_coefficients(&w, 2, &basis, Execution::Sequential),
            Err(Error::Grid(_))
        ));
    }

    #[test]
    fn projection_examples() {
        let basis = BlochBasis::new(CoefficientField::free_space(1.0), Side::Minus, 3);
        let entries = [
            ([1, 0], 0, Complex64::new(1.0, 0.0)),
            ([3, 0], 0, Complex64::new(0.5, 0.0)),
            ([0, 2], 1, Complex64::new(0.0, 0.3)),
        ];
        let c = coefficients_from_modes(&basis, 4, 8, 3, &entries).unwrap();
        let tol = 1e-9;
        let v = project(&c, &Predicate::Vertical(0.0));
        assert!((v.mass() - 1.25).abs() < 1e-14);
        let only_m1 = project(&c, &Predicate::Level(1));
        assert!(project(&only_m1, &Predicate::Level(0)).mass() == 0.0);
        let neg = project(
            &c,
            &Predicate::Poynting {
                set: SignSet::Negative,
                tol,
            },
        );
        let nonneg = project(
            &c,
            &Predicate::Poynting {
                set: SignSet::NonNegative,
                tol,
            },
        );
        assert!((neg.mass() + nonneg.mass() - c.mass()).abs() < 1e-15);
        assert!((neg.mass() - 0.25).abs() < 1e-14);
        assert_eq!(
            project(
                &neg,
                &Predicate::Poynting {
                    set: SignSet::NonNegative,
                    tol
                }
            )
            .mass(),
            0.0
        );
        let twice = project(
            &neg,
            &Predicate::Poynting {
                set: SignSet::Negative,
                tol,
            },
        );
        assert_eq!(twice.alpha, neg.alpha);
        let both = project(
            &c,
            &Predicate::Level(0).and(Predicate::Poynting {
                set: SignSet::Positive,
                tol,
            }),
        );
        assert!((both.mass() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn commutation_defect() {
        let u = pure(4, 1, 6);
        assert!(projection_gradient_commutation_check(&u, 0.25).unwrap() < 1e-12);
        let one = FieldStrip::from_fn(0.0, 1.0, 4, 4, 6, |_| Complex64::new(1.0, 0.0));
        assert_eq!(
            projection_gradient_commutation_check(&one, 0.0).unwrap(),
            0.0
        );
        // band-limited in x2, arbitrary in x1
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let amps: Vec<Complex64> = (0..8)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let u = FieldStrip::from_fn(0.0, 1.0, 8, 2, 10, |x| {
            (0..8)
                .map(|q| {
                    amps[q]
                        * x[0].powi(q as i32 % 3)
                        * Complex64::from_polar(1.0, PI * (q as f64 - 4.0) * x[1])
                })
                .sum()
        });
        for k2 in [0.0, 0.5] {
            assert!(projection_gradient_commutation_check(&u, k2).unwrap() < 1e-10);
        }
    }
}
