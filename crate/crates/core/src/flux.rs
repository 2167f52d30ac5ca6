//! Poynting numbers, flux classification and the box forms `b_R` and `B_R`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::bloch_core::{BlochMode, PlaneWaves, Side};
use crate::cell_model::{CoefficientField, FourierTable};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fft;
use crate::field::BoxField;
use crate::transform::{box_spectrum, half_shift};

/// Horizontal flux `Im <U, a d1 U>` of a Bloch mode, evaluated on plane-wave coefficients.
pub fn poynting_from_psi(
    psi: &[Complex64],
    j: [f64; 2],
    cutoff: usize,
    epsilon: f64,
    a_hat: &FourierTable,
) -> f64 {
    let pw = PlaneWaves { cutoff };
    let nz: Vec<(usize, [i32; 2])> = psi
        .iter()
        .enumerate()
        .filter(|(_, c)| c.norm_sqr() > 0.0)
        .map(|(i, _)| (i, pw.g(i)))
        .collect();
    let mut s = Complex64::new(0.0, 0.0);
    for &(p, gp) in &nz {
        let cp = psi[p].conj();
        for &(q, gq) in &nz {
            let ah = a_hat.get(gp[0] - gq[0], gp[1] - gq[1]).unwrap_or_default();
            s += cp * psi[q] * ah * (gq[0] as f64 + j[0]);
        }
    }
    // the average of conj(U) a d1 U is i (2 pi / eps) s
    2.0 * PI / epsilon * s.re
}

/// Poynting number `P_lambda` of `mode` for the coefficient `field` of its side.
pub fn poynting_number(mode: &BlochMode, field: &CoefficientField) -> f64 {
    poynting_from_psi(
        &mode.psi,
        mode.j,
        mode.cutoff,
        mode.epsilon,
        field.fourier_table(),
    )
}

/// Flux direction of a mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Right,
    Left,
    Vertical,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Right => "right",
            Classification::Left => "left",
            Classification::Vertical => "vertical",
        }
    }
}

pub fn classify_index(p: f64, tol: f64) -> Classification {
    if p > tol {
        Classification::Right
    } else if p < -tol {
        Classification::Left
    } else {
        Classification::Vertical
    }
}

/// `1e-9 * 2 pi / eps`.
pub fn default_tolerance(epsilon: f64) -> f64 {
    1e-9 * 2.0 * PI / epsilon
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoyntingRecord {
    pub j: [f64; 2],
    pub m: usize,
    pub side: Side,
    pub p: f64,
    pub classification: Classification,
    pub tol_used: f64,
}

impl PoyntingRecord {
    pub fn new(mode: &BlochMode, field: &CoefficientField, tol: f64) -> Self {
        let p = poynting_number(mode, field);
        PoyntingRecord {
            j: mode.j,
            m: mode.m,
            side: mode.side,
            p,
            classification: classify_index(p, tol),
            tol_used: tol,
        }
    }
}

/// The box `W_R = (0, R eps)^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub r: usize,
    pub epsilon: f64,
}

impl BoxDomain {
    pub fn area(&self) -> f64 {
        (self.epsilon * self.r as f64).powi(2)
    }
}

/// Face coefficient between two neighbouring samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaceAverage {
    #[default]
    Arithmetic,
    Harmonic,
}

impl FaceAverage {
    #[inline]
    pub fn combine(self, a: f64, b: f64) -> f64 {
        match self {
            FaceAverage::Arithmetic => 0.5 * (a + b),
            FaceAverage::Harmonic => 2.0 * a * b / (a + b),
        }
    }
}

/// Quadrature used for `b_R`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientRule {
    /// Exact for the trigonometric interpolant of a periodic box field: the
    /// product with `a` is formed with the exact `a_hat`.
    Spectral,
    /// Face-averaged differences with the halo columns (or periodic wrap).
    FluxForm(FaceAverage),
}

/// `b_R(u, v) = (1/|W_R|) int conj(u) e1.(a grad v)`; `field` is the coefficient of the side.
pub fn sesquilinear_b(
    u: &BoxField,
    v: &BoxField,
    field: &CoefficientField,
    rule: GradientRule,
) -> Result<Complex64> {
    u.check_same_grid(v)?;
    if (field.epsilon() - u.epsilon).abs() > 1e-15 * u.epsilon {
        return Err(Error::Dimension(
            "coefficient period differs from the box period".into(),
        ));
    }
    match rule {
        GradientRule::FluxForm(avg) => Ok(flux_form_b(u, v, field, avg)),
        GradientRule::Spectral => Ok(spectral_b(u, v, field)),
    }
}

fn flux_form_b(
    u: &BoxField,
    v: &BoxField,
    field: &CoefficientField,
    avg: FaceAverage,
) -> Complex64 {
    let n = u.n();
    let dx = u.spacing();
    // coefficient samples of one cell column pattern, periodic in both directions
    let nc = u.n_cell;
    let a_cell: Vec<f64> = (0..nc * nc)
        .map(|i| field.value_at([((i / nc) as f64 + 0.5) * dx, ((i % nc) as f64 + 0.5) * dx]))
        .collect();
    let a = |i1: isize, i2: usize| a_cell[(i1.rem_euclid(nc as isize) as usize) * nc + i2 % nc];
    let vget = |i1: isize, i2: usize| -> Complex64 {
        if i1 < 0 {
            match &v.halo {
                Some(h) => h[0][i2],
                None => v.samples[(n - 1) * n + i2],
            }
        } else if i1 as usize >= n {
            match &v.halo {
                Some(h) => h[1][i2],
                None => v.samples[i2],
            }
        } else {
            v.samples[i1 as usize * n + i2]
        }
    };
    let mut s = Complex64::new(0.0, 0.0);
    for i1 in 0..n as isize {
        for i2 in 0..n {
            let a0 = a(i1, i2);
            let ap = avg.combine(a0, a(i1 + 1, i2));
            let am = avg.combine(a0, a(i1 - 1, i2));
            let vc = vget(i1, i2);
            let d = ap * (vget(i1 + 1, i2) - vc) + am * (vc - vget(i1 - 1, i2));
            s += u.samples[i1 as usize * n + i2].conj() * d;
        }
    }
    s / (2.0 * dx * (n * n) as f64)
}

fn spectral_b(u: &BoxField, v: &BoxField, field: &CoefficientField) -> Complex64 {
    let exec = Execution::Sequential;
    let n = u.n();
    let r = u.r;
    let nc = u.n_cell;
    let uh = box_spectrum(exec, u);
    let vh = box_spectrum(exec, v);
    let a_hat = field.fourier_table();
    let total_u: f64 = uh.iter().map(|c| c.norm_sqr()).sum();
    let total_v: f64 = vh.iter().map(|c| c.norm_sqr()).sum();
    if total_u == 0.0 || total_v == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let half = (n / 2) as i64;
    let mut out = Complex64::new(0.0, 0.0);
    let mut gu = Vec::with_capacity(nc * nc);
    let mut gv = Vec::with_capacity(nc * nc);
    for a1 in 0..r as i64 {
        for a2 in 0..r as i64 {
            gu.clear();
            gv.clear();
            let first = |a: i64| {
                (-half - a).div_euclid(r as i64)
                    + if (-half - a).rem_euclid(r as i64) == 0 {
                        0
                    } else {
                        1
                    }
            };
            let (g1lo, g2lo) = (first(a1), first(a2));
            let mut mu = 0.0f64;
            let mut mv = 0.0f64;
            for g1 in g1lo..g1lo + nc as i64 {
                for g2 in g2lo..g2lo + nc as i64 {
                    let f1 = g1 * r as i64 + a1;
                    let f2 = g2 * r as i64 + a2;
                    let k = fft::bin(f1, n) * n + fft::bin(f2, n);
                    let ph = half_shift(f1, f2, n);
                    gu.push(([g1 as i32, g2 as i32], uh[k] * ph));
                    gv.push(([g1 as i32, g2 as i32], vh[k] * ph));
                    mu += uh[k].norm_sqr();
                    mv += vh[k].norm_sqr();
                }
            }
            if mu <= 1e-30 * total_u || mv <= 1e-30 * total_v {
                continue;
            }
            let j1 = a1 as f64 / r as f64;
            for (gp, cu) in &gu {
                if cu.norm_sqr() == 0.0 {
                    continue;
                }
                let mut acc = Complex64::new(0.0, 0.0);
                for (g, cv) in &gv {
                    if let Some(ah) = a_hat.get(gp[0] - g[0], gp[1] - g[1]) {
                        acc += ah * cv * (g[0] as f64 + j1);
                    }
                }
                out += cu.conj() * acc;
            }
        }
    }
    out * Complex64::new(0.0, 2.0 * PI / u.epsilon)
}

/// `B_R(w) = Im b_R(w, w)`.
pub fn energy_flux_b(w: &BoxField, field: &CoefficientField, rule: GradientRule) -> Result<f64> {
    Ok(sesquilinear_b(w, w, field, rule)?.im)
}
