//! Outgoing-wave conditions, Bloch measures and energy diagnostics on solver fields.
//!
//! Box fields are taken far from the interface: `u+_R(x) = u(R eps + x1, x2)`
//! and `u-_R(x) = u(-2 R eps + x1, x2)`, both extended vertically by periodicity.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bloch_core::Side;
use crate::cell_model::{smoothstep, CoefficientField};
use crate::error::{Error, Result};
use crate::exec::{map_slice, Execution};
use crate::field::{BoxField, FieldStrip};
use crate::flux::{energy_flux_b, FaceAverage, GradientRule};
use crate::transform::{
    bloch_coefficients, project, synthesize, BlochBasis, BlochCoefficients, Predicate, SignSet,
};

/// Restriction `u+-_R` on `W_R` with the neighbouring columns as halo.
pub fn restrict_box(u: &FieldStrip, r: usize, side: Side) -> Result<BoxField> {
    if r == 0 || r % u.k_cells != 0 {
        return Err(Error::Domain(format!(
            "R = {r} must be a positive multiple of K = {}",
            u.k_cells
        )));
    }
    let eps = u.epsilon;
    let start = match side {
        Side::Plus => r as f64 * eps,
        Side::Minus => -2.0 * r as f64 * eps,
    };
    let need = match side {
        Side::Plus => format!("[{}, {}]", r as f64 * eps, 2.0 * r as f64 * eps),
        Side::Minus => format!("[{}, {}]", -2.0 * r as f64 * eps, -(r as f64) * eps),
    };
    let first = u
        .face_index(start)
        .filter(|&i| i + r * u.n_cell <= u.n1)
        .ok_or_else(|| {
            Error::Domain(format!(
                "field covers [{}, {}] but side {side} needs {need}",
                u.x_lo,
                u.x_hi()
            ))
        })?;
    let n = r * u.n_cell;
    let n2 = u.n2();
    let column = |i1: usize| -> Vec<Complex64> { (0..n).map(|i2| u.get(i1, i2 % n2)).collect() };
    let mut samples = Vec::with_capacity(n * n);
    for i1 in first..first + n {
        samples.extend(column(i1));
    }
    let mut b = BoxField::new(r, eps, u.n_cell, samples)?;
    if first > 0 && first + n < u.n1 {
        b.halo = Some([column(first - 1), column(first + n)]);
    }
    Ok(b)
}

/// Shape of the cut-off on `W_R`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffFlavor {
    /// `eta(x1)` only, vertically periodic.
    #[default]
    Horizontal,
    /// `eta(x1) eta(x2)`.
    Square,
    /// The linear ramp `theta`: 1 for `|x1| <= R eps`, 0 from `2 R eps`, seen from the box of `side`.
    Ramp(Side),
}

/// Cut-off samples on the `W_R` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CutoffProfile {
    pub r: usize,
    pub epsilon: f64,
    pub n_cell: usize,
    pub flavor: CutoffFlavor,
    pub values: Vec<f64>,
}

impl CutoffProfile {
    pub fn n(&self) -> usize {
        self.r * self.n_cell
    }

    /// Largest one-step difference quotient over the grid (periodic in both directions).
    pub fn max_gradient(&self) -> f64 {
        let n = self.n();
        let dx = self.epsilon / self.n_cell as f64;
        let mut g = 0.0f64;
        for i1 in 0..n {
            for i2 in 0..n {
                let v = self.values[i1 * n + i2];
                if i1 + 1 < n {
                    g = g.max((self.values[(i1 + 1) * n + i2] - v).abs() / dx);
                }
                if i2 + 1 < n {
                    g = g.max((self.values[i1 * n + i2 + 1] - v).abs() / dx);
                }
            }
        }
        g
    }
}

fn edge_profile(t: f64, r: usize) -> f64 {
    // t = x / eps in (0, R)
    smoothstep(t).min(smoothstep(r as f64 - t))
}

pub fn build_cutoff(
    r: usize,
    epsilon: f64,
    n_cell: usize,
    flavor: CutoffFlavor,
) -> Result<CutoffProfile> {
    if r < 2 {
        return Err(Error::Validation(format!("cut-off needs R >= 2, got {r}")));
    }
    let n = r * n_cell;
    let t = |i: usize| (i as f64 + 0.5) / n_cell as f64;
    let line: Vec<f64> = (0..n)
        .map(|i| match flavor {
            CutoffFlavor::Horizontal | CutoffFlavor::Square => edge_profile(t(i), r),
            CutoffFlavor::Ramp(Side::Plus) => 1.0 - t(i) / r as f64,
            CutoffFlavor::Ramp(Side::Minus) => t(i) / r as f64,
        })
        .collect();
    let mut values = Vec::with_capacity(n * n);
    for i1 in 0..n {
        for i2 in 0..n {
            values.push(match flavor {
                CutoffFlavor::Square => line[i1] * line[i2],
                _ => line[i1],
            });
        }
    }
    Ok(CutoffProfile {
        r,
        epsilon,
        n_cell,
        flavor,
        values,
    })
}

/// Analysis settings shared by all radiation diagnostics.
#[derive(Debug)]
pub struct RadiationContext {
    pub plus: BlochBasis,
    pub minus: BlochBasis,
    pub m_count: usize,
    pub tol_p: f64,
    pub flavor: CutoffFlavor,
    pub exec: Execution,
}

impl RadiationContext {
    pub fn new(
        crystal: CoefficientField,
        cutoff: usize,
        m_count: usize,
        tol_p: f64,
        flavor: CutoffFlavor,
    ) -> Self {
        let free = CoefficientField::free_space(crystal.epsilon());
        RadiationContext {
            plus: BlochBasis::new(crystal, Side::Plus, cutoff),
            minus: BlochBasis::new(free, Side::Minus, cutoff),
            m_count,
            tol_p,
            flavor,
            exec: Execution::default(),
        }
    }

    pub fn basis(&self, side: Side) -> &BlochBasis {
        match side {
            Side::Plus => &self.plus,
            Side::Minus => &self.minus,
        }
    }

    /// `u+-_R eta_R`.
    pub fn truncated(&self, u: &FieldStrip, side: Side, r: usize) -> Result<BoxField> {
        let b = restrict_box(u, r, side)?;
        let eta = build_cutoff(r, u.epsilon, u.n_cell, self.flavor)?;
        Ok(b.scaled(&eta.values))
    }

    /// Bloch coefficients of the truncated restriction.
    pub fn coefficients(&self, u: &FieldStrip, side: Side, r: usize) -> Result<BlochCoefficients> {
        let w = self.truncated(u, side, r)?;
        bloch_coefficients(&w, self.m_count, self.basis(side), self.exec)
    }
}

/// The wrong-direction sign set of a side, strict and with the vertical set.
fn incoming_sets(side: Side) -> (SignSet, SignSet) {
    match side {
        Side::Plus => (SignSet::Negative, SignSet::NonPositive),
        Side::Minus => (SignSet::Positive, SignSet::NonNegative),
    }
}

/// Outgoing-condition mass on one box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutgoingMetric {
    /// Mass of the strictly incoming class.
    pub mass: f64,
    /// Mass of the incoming class including vertical flux.
    pub mass_leq: f64,
    pub total_mass: f64,
}

impl OutgoingMetric {
    pub fn fraction(&self) -> f64 {
        if self.total_mass > 0.0 {
            self.mass / self.total_mass
        } else {
            0.0
        }
    }

    pub fn fraction_leq(&self) -> f64 {
        if self.total_mass > 0.0 {
            self.mass_leq / self.total_mass
        } else {
            0.0
        }
    }
}

pub fn outgoing_metric_of(c: &BlochCoefficients, tol_p: f64) -> OutgoingMetric {
    let (strict, weak) = incoming_sets(c.side);
    OutgoingMetric {
        mass: project(
            c,
            &Predicate::Poynting {
                set: strict,
                tol: tol_p,
            },
        )
        .mass(),
        mass_leq: project(
            c,
            &Predicate::Poynting {
                set: weak,
                tol: tol_p,
            },
        )
        .mass(),
        total_mass: c.total_mass,
    }
}

pub fn outgoing_metric(
    ctx: &RadiationContext,
    u: &FieldStrip,
    side: Side,
    r: usize,
) -> Result<OutgoingMetric> {
    Ok(outgoing_metric_of(
        &ctx.coefficients(u, side, r)?,
        ctx.tol_p,
    ))
}

/// `B_R` of the synthesized incoming, level-zero part; signed.
pub fn energetic_metric_of(
    c: &BlochCoefficients,
    field: &CoefficientField,
    tol_p: f64,
    exec: Execution,
) -> Result<f64> {
    let (strict, _) = incoming_sets(c.side);
    let p = project(
        c,
        &Predicate::Poynting {
            set: strict,
            tol: tol_p,
        }
        .and(Predicate::Level(0)),
    );
    if p.mass() == 0.0 {
        return Ok(0.0);
    }
    let w = synthesize(&p, exec)?;
    energy_flux_b(&w, field, GradientRule::Spectral)
}

pub fn energetic_metric(
    ctx: &RadiationContext,
    u: &FieldStrip,
    side: Side,
    r: usize,
) -> Result<f64> {
    let c = ctx.coefficients(u, side, r)?;
    energetic_metric_of(&c, ctx.basis(side).field(), ctx.tol_p, ctx.exec)
}

/// `Sigma_{m >= 1} |alpha|^2` plus the unresolved remainder.
pub fn m_ge1_mass_of(c: &BlochCoefficients) -> f64 {
    project(c, &Predicate::LevelAtLeast(1)).total_mass
}

pub fn m_ge1_mass(ctx: &RadiationContext, u: &FieldStrip, side: Side, r: usize) -> Result<f64> {
    Ok(m_ge1_mass_of(&ctx.coefficients(u, side, r)?))
}

/// One atom of a discrete Bloch measure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub j: [f64; 2],
    pub weight: f64,
    pub mu: f64,
    pub p: f64,
}

/// `nu_{l,R}`: the atoms `|alpha_{(j,l),R}|^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteBlochMeasure {
    pub l: usize,
    pub side: Side,
    pub r: usize,
    pub atoms: Vec<Atom>,
}

impl DiscreteBlochMeasure {
    pub fn mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    pub fn peak(&self) -> Option<Atom> {
        self.atoms
            .iter()
            .copied()
            .max_by(|a, b| a.weight.total_cmp(&b.weight))
    }
}

pub fn bloch_measure_of(c: &BlochCoefficients, l: usize) -> Result<DiscreteBlochMeasure> {
    if l >= c.m_count {
        return Err(Error::Index(format!(
            "level {l} not resolved with M = {}",
            c.m_count
        )));
    }
    let mut atoms = Vec::new();
    for bin in 0..c.r * c.r {
        let w = c.alpha[bin * c.m_count + l].norm_sqr();
        if w > 0.0 {
            atoms.push(Atom {
                j: c.j_of_bin(bin),
                weight: w,
                mu: c.mu(bin, l).unwrap_or(f64::NAN),
                p: c.poynting(bin, l).unwrap_or(f64::NAN),
            });
        }
    }
    Ok(DiscreteBlochMeasure {
        l,
        side: c.side,
        r: c.r,
        atoms,
    })
}

/// All levels `l < M` of one box.
pub fn bloch_measures(c: &BlochCoefficients) -> Vec<DiscreteBlochMeasure> {
    (0..c.m_count)
        .map(|l| bloch_measure_of(c, l).expect("level in range"))
        .collect()
}

pub fn bloch_measure(
    ctx: &RadiationContext,
    u: &FieldStrip,
    side: Side,
    l: usize,
    r: usize,
) -> Result<DiscreteBlochMeasure> {
    bloch_measure_of(&ctx.coefficients(u, side, r)?, l)
}

/// Thresholds of the support classification.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupportTolerances {
    /// Relative frequency band `|mu0 - omega^2| <= tol_freq omega^2`.
    pub tol_freq: f64,
    /// Vertical band in `j2`; `None` means half a bin, `1/(2R)`.
    pub tol_vert: Option<f64>,
    /// Vertical-flux band relative to the largest `|P|` seen on the box.
    pub tol_p_rel: f64,
}

impl Default for SupportTolerances {
    fn default() -> Self {
        SupportTolerances {
            tol_freq: 0.05,
            tol_vert: None,
            tol_p_rel: 0.02,
        }
    }
}

/// Support classification of the level-zero measure at one `R`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportEntry {
    pub r: usize,
    pub level0_mass: f64,
    pub inside_mass: f64,
    pub inside_fraction: f64,
    /// Level-zero mass on the frequency set alone.
    pub on_shell_fraction: f64,
    /// Levels `l >= 1` plus the unresolved remainder.
    pub higher_mass: f64,
    pub higher_fraction: f64,
    pub tol_vert: f64,
    pub tol_p: f64,
    /// Total-variation distance to the previous `R` after binning to its grid.
    pub tv_to_previous: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportReport {
    pub side: Side,
    pub omega: f64,
    pub k2: f64,
    pub entries: Vec<SupportEntry>,
    /// No mass at any `R`.
    pub vacuous: bool,
    /// `tv_to_previous` did not decrease along the sequence.
    pub non_cauchy: bool,
}

fn circle_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Level-zero weights binned onto the `Q_r` grid, normalized.
fn binned(m: &DiscreteBlochMeasure, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * r];
    for a in &m.atoms {
        let b1 = ((a.j[0] * r as f64).round() as usize) % r;
        let b2 = ((a.j[1] * r as f64).round() as usize) % r;
        out[b1 * r + b2] += a.weight;
    }
    let s: f64 = out.iter().sum();
    if s > 0.0 {
        out.iter_mut().for_each(|v| *v /= s);
    }
    out
}

/// Classifies the support of the level-zero measures along an `R` sequence.
/// `levels[i]` holds the measures of all levels at `R_i`; `residual[i]` the
/// unresolved mass of that box.
pub fn measure_support_report(
    levels: &[Vec<DiscreteBlochMeasure>],
    residual: &[f64],
    omega: f64,
    k2: f64,
    tol: SupportTolerances,
) -> Result<SupportReport> {
    if levels.len() < 2 || residual.len() != levels.len() {
        return Err(Error::Validation(
            "support report needs at least two R values with residuals".into(),
        ));
    }
    let w2 = omega * omega;
    let side = levels[0].first().map(|m| m.side).unwrap_or(Side::Plus);
    let mut entries: Vec<SupportEntry> = Vec::new();
    for (i, ms) in levels.iter().enumerate() {
        let nu0 = ms
            .iter()
            .find(|m| m.l == 0)
            .ok_or_else(|| Error::Validation("level 0 missing".into()))?;
        let r = nu0.r;
        let tol_vert = tol.tol_vert.unwrap_or(0.5 / r as f64);
        let pmax = nu0
            .atoms
            .iter()
            .map(|a| a.p.abs())
            .filter(|p| p.is_finite())
            .fold(0.0, f64::max);
        let tol_p = tol.tol_p_rel * pmax;
        let mut inside = 0.0;
        let mut shell = 0.0;
        for a in &nu0.atoms {
            let on_shell = (a.mu - w2).abs() <= tol.tol_freq * w2;
            if on_shell {
                shell += a.weight;
                if circle_dist(a.j[1], k2) <= tol_vert + 1e-12 || a.p.abs() <= tol_p {
                    inside += a.weight;
                }
            }
        }
        let level0 = nu0.mass();
        let higher: f64 = ms
            .iter()
            .filter(|m| m.l >= 1)
            .map(|m| m.mass())
            .sum::<f64>()
            + residual[i];
        let all = level0 + higher;
        let tv = if i > 0 {
            let prev = levels[i - 1].iter().find(|m| m.l == 0).expect("checked");
            let coarse = prev.r.min(r);
            let (a, b) = (binned(prev, coarse), binned(nu0, coarse));
            Some(0.5 * a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>())
        } else {
            None
        };
        let frac = |x: f64, d: f64| if d > 0.0 { x / d } else { 0.0 };
        entries.push(SupportEntry {
            r,
            level0_mass: level0,
            inside_mass: inside,
            inside_fraction: frac(inside, level0),
            on_shell_fraction: frac(shell, level0),
            higher_mass: higher,
            higher_fraction: frac(higher, all),
            tol_vert,
            tol_p,
            tv_to_previous: tv,
        });
    }
    let vacuous = entries.iter().all(|e| e.level0_mass + e.higher_mass == 0.0);
    let tvs: Vec<f64> = entries.iter().filter_map(|e| e.tv_to_previous).collect();
    let non_cauchy = tvs.windows(2).any(|w| w[1] > w[0] + 1e-12);
    Ok(SupportReport {
        side,
        omega,
        k2,
        entries,
        vacuous,
        non_cauchy,
    })
}

/// Flux through the two analysis boxes of a strip solution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyBalance {
    pub r: usize,
    pub flux_left: f64,
    pub flux_right: f64,
    pub defect: f64,
    /// Flux of the incident wave in the same quadrature, when supplied.
    pub incident_flux: Option<f64>,
    pub relative_defect: Option<f64>,
}

/// `Im b-_R(u-_R, u-_R)` against `Im b+_R(u+_R, u+_R)` with face differences.
pub fn energy_balance(
    u: &FieldStrip,
    r: usize,
    crystal: &CoefficientField,
    avg: FaceAverage,
    incident: Option<&FieldStrip>,
) -> Result<EnergyBalance> {
    let free = CoefficientField::free_space(crystal.epsilon());
    let rule = GradientRule::FluxForm(avg);
    let need_halo = |b: &BoxField| -> Result<()> {
        if b.halo.is_none() {
            return Err(Error::Domain(
                "analysis box touches the end of the strip".into(),
            ));
        }
        Ok(())
    };
    let left = restrict_box(u, r, Side::Minus)?;
    let right = restrict_box(u, r, Side::Plus)?;
    need_halo(&left)?;
    need_halo(&right)?;
    let flux_left = energy_flux_b(&left, &free, rule)?;
    let flux_right = energy_flux_b(&right, crystal, rule)?;
    let incident_flux = match incident {
        Some(inc) => {
            let b = restrict_box(inc, r, Side::Minus)?;
            need_halo(&b)?;
            Some(energy_flux_b(&b, &free, rule)?)
        }
        None => None,
    };
    let defect = flux_left - flux_right;
    Ok(EnergyBalance {
        r,
        flux_left,
        flux_right,
        defect,
        incident_flux,
        relative_defect: incident_flux.map(|f| defect.abs() / f.abs()),
    })
}

/// `int_{(L, L+1) x (0, h)} |grad u|^2 / (1 + int_{(L-1, L+2) x (0, h)} |u|^2)` in units of `eps`.
pub fn caccioppoli_check(u: &FieldStrip, l: f64) -> Result<f64> {
    let eps = u.epsilon;
    let dx = u.spacing();
    let n2 = u.n2();
    let col = |x: f64| -> Result<usize> {
        u.face_index(x).ok_or_else(|| {
            Error::Domain(format!(
                "window edge {x} is not a grid face inside the strip"
            ))
        })
    };
    let (a, b) = (col((l - 1.0) * eps)?, col((l + 2.0) * eps)?);
    let (c, d) = (col(l * eps)?, col((l + 1.0) * eps)?);
    if a == 0 || b >= u.n1 {
        return Err(Error::Domain(
            "window needs one column of margin on both sides".into(),
        ));
    }
    let cell = dx * dx;
    let mut grad = 0.0;
    for i1 in c..d {
        for i2 in 0..n2 {
            let g1 = (u.get(i1 + 1, i2) - u.get(i1 - 1, i2)) / (2.0 * dx);
            let g2 = (u.get(i1, (i2 + 1) % n2) - u.get(i1, (i2 + n2 - 1) % n2)) / (2.0 * dx);
            grad += (g1.norm_sqr() + g2.norm_sqr()) * cell;
        }
    }
    let mass: f64 = (a..b)
        .map(|i1| u.column(i1).iter().map(|v| v.norm_sqr()).sum::<f64>())
        .sum::<f64>()
        * cell;
    Ok(grad / (1.0 + mass))
}

/// `Sigma |alpha|^2 |P|` over one Poynting class.
pub fn weighted_flux_sum(c: &BlochCoefficients, set: SignSet, tol_p: f64) -> f64 {
    let mut s = 0.0;
    for bin in 0..c.r * c.r {
        for m in 0..c.m_count {
            if let Some(p) = c.poynting(bin, m) {
                if set.contains(p, tol_p) {
                    s += c.alpha[bin * c.m_count + m].norm_sqr() * p.abs();
                }
            }
        }
    }
    s
}

/// Per-`R` radiation diagnostics of one side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiationEntry {
    pub side: Side,
    #[serde(rename = "R")]
    pub r: usize,
    pub outgoing_metric: f64,
    pub outgoing_metric_leq: f64,
    pub outgoing_fraction: f64,
    pub outgoing_fraction_leq: f64,
    pub energetic_metric: f64,
    pub m_ge1_mass: f64,
    pub m_ge1_fraction: f64,
    pub total_mass: f64,
    /// `mean |u_R|^2` before truncation; bounded uniformly in `R` for admissible fields.
    pub box_mean_sq: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiationReport {
    pub side: Side,
    pub entries: Vec<RadiationEntry>,
    /// Fraction at the largest `R` is below `threshold` and never increases.
    pub satisfied: bool,
    pub threshold: f64,
}

pub fn radiation_entry(
    ctx: &RadiationContext,
    u: &FieldStrip,
    side: Side,
    r: usize,
) -> Result<(RadiationEntry, BlochCoefficients)> {
    let raw = restrict_box(u, r, side)?;
    let eta = build_cutoff(r, u.epsilon, u.n_cell, ctx.flavor)?;
    let c = bloch_coefficients(
        &raw.scaled(&eta.values),
        ctx.m_count,
        ctx.basis(side),
        ctx.exec,
    )?;
    let o = outgoing_metric_of(&c, ctx.tol_p);
    let higher = m_ge1_mass_of(&c);
    let entry = RadiationEntry {
        side,
        r,
        outgoing_metric: o.mass,
        outgoing_metric_leq: o.mass_leq,
        outgoing_fraction: o.fraction(),
        outgoing_fraction_leq: o.fraction_leq(),
        energetic_metric: energetic_metric_of(&c, ctx.basis(side).field(), ctx.tol_p, ctx.exec)?,
        m_ge1_mass: higher,
        m_ge1_fraction: if c.total_mass > 0.0 {
            higher / c.total_mass
        } else {
            0.0
        },
        total_mass: c.total_mass,
        box_mean_sq: raw.mean_sq(),
    };
    Ok((entry, c))
}

/// Diagnostics over an `R` sequence; boxes are evaluated independently.
pub fn radiation_report(
    ctx: &RadiationContext,
    u: &FieldStrip,
    side: Side,
    rs: &[usize],
    threshold: f64,
) -> Result<(RadiationReport, Vec<BlochCoefficients>)> {
    let results = map_slice(ctx.exec, rs, |&r| radiation_entry(ctx, u, side, r));
    let mut entries = Vec::with_capacity(rs.len());
    let mut coeffs = Vec::with_capacity(rs.len());
    for res in results {
        let (e, c) = res?;
        entries.push(e);
        coeffs.push(c);
    }
    let fr: Vec<f64> = entries.iter().map(|e| e.outgoing_fraction).collect();
    let satisfied = fr.last().is_some_and(|&f| f <= threshold)
        && fr.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-15);
    Ok((
        RadiationReport {
            side,
            entries,
            satisfied,
            threshold,
        },
        coeffs,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell_model::Geometry;
    use crate::transform::coefficients_from_modes;
    use std::f64::consts::PI;

    fn plane_strip(
        k: [f64; 2],
        amp: Complex64,
        x_lo: f64,
        cells: usize,
        k_cells: usize,
        nc: usize,
    ) -> FieldStrip {
        FieldStrip::from_fn(x_lo, 1.0, nc, k_cells, cells * nc, |x| {
            amp * Complex64::from_polar(1.0, 2.0 * PI * (k[0] * x[0] + k[1] * x[1]))
        })
    }

    fn add(a: &FieldStrip, b: &FieldStrip) -> FieldStrip {
        FieldStrip {
            samples: a
                .samples
                .iter()
                .zip(&b.samples)
                .map(|(x, y)| x + y)
                .collect(),
            ..a.clone()
        }
    }

    #[test]
    fn restriction_shift_and_tiling() {
        let u = plane_strip([0.25, 0.0], Complex64::new(1.0, 0.0), -8.0, 16, 1, 8);
        let b = restrict_box(&u, 2, Side::Plus).unwrap();
        for i1 in 0..16 {
            for i2 in 0..16 {
                let x = b.point(i1, i2);
                let want = -Complex64::from_polar(1.0, 2.0 * PI * 0.25 * x[0]);
                assert!((b.samples[i1 * 16 + i2] - want).norm() < 1e-12);
            }
        }
        assert!(b.halo.is_some());
        let c = FieldStrip::from_fn(-8.0, 1.0, 8, 1, 128, |_| Complex64::new(2.0, -1.0));
        let bm = restrict_box(&c, 4, Side::Minus).unwrap();
        assert!(bm.samples.iter().all(|v| *v == Complex64::new(2.0, -1.0)));
        assert!(bm.halo.is_none());
        assert!(
            matches!(restrict_box(&c, 8, Side::Plus), Err(Error::Domain(m)) if m.contains("[8, 16]"))
        );
        let k2 = FieldStrip::from_fn(-20.0, 1.0, 8, 2, 320, |x| Complex64::new(x[0], x[1]));
        assert!(matches!(
            restrict_box(&k2, 3, Side::Plus),
            Err(Error::Domain(_))
        ));
        let b = restrict_box(&k2, 8, Side::Plus).unwrap();
        let n = 64;
        for i1 in 0..n {
            for t in 0..4 {
                assert_eq!(
                    b.samples[i1 * n..i1 * n + 16],
                    b.samples[i1 * n + 16 * t..i1 * n + 16 * (t + 1)]
                );
            }
        }
    }

    #[test]
    fn cutoff_shapes() {
        let e = build_cutoff(2, 1.0, 16, CutoffFlavor::Horizontal).unwrap();
        let n = 32;
        assert!(e.values[0] < 0.01 && e.values[(n - 1) * n] < 0.01);
        assert_eq!(e.values[15 * n + 3], e.values[15 * n + 29]);
        assert!(e.values.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(e.max_gradient() <= 2.0 * 1.5 + 1e-12);
        let e = build_cutoff(8, 1.0, 16, CutoffFlavor::Square).unwrap();
        let n = 128;
        for i1 in 16..112 {
            for i2 in 16..112 {
                assert_eq!(e.values[i1 * n + i2], 1.0);
            }
        }
        assert!(e.max_gradient() <= 3.0);
        let t = build_cutoff(4, 1.0, 8, CutoffFlavor::Ramp(Side::Plus)).unwrap();
        // box x1 = 1.0625 is global 5.0625: 2 - 5.0625 / 4
        assert!((t.values[8 * 32] - (2.0 - 5.0625 / 4.0)).abs() < 1e-14);
        let t = build_cutoff(4, 1.0, 8, CutoffFlavor::Ramp(Side::Minus)).unwrap();
        // global -8 + 1.0625: (2 R - |x|) / R
        assert!((t.values[8 * 32] - (8.0 - 6.9375) / 4.0).abs() < 1e-14);
        assert!(build_cutoff(1, 1.0, 8, CutoffFlavor::Horizontal).is_err());
    }

    fn free_ctx() -> RadiationContext {
        RadiationContext::new(
            CoefficientField::free_space(1.0),
            3,
            3,
            1e-9,
            CutoffFlavor::Horizontal,
        )
    }

    #[test]
    fn plane_wave_metrics() {
        let ctx = free_ctx();
        let u = plane_strip([0.25, 0.0], Complex64::new(1.0, 0.0), -32.0, 64, 1, 8);
        // with the cut-off, truncation leaks a little into left-going bins
        let m = outgoing_metric(&ctx, &u, Side::Minus, 8).unwrap();
        assert!(
            m.fraction() > 0.95 && m.fraction() < 1.0,
            "{}",
            m.fraction()
        );
        // without it the box field is a single mode
        let raw = |u: &FieldStrip| {
            let b = restrict_box(u, 8, Side::Minus).unwrap();
            bloch_coefficients(&b, 3, &ctx.minus, Execution::Sequential).unwrap()
        };
        let c = raw(&u);
        let m = outgoing_metric_of(&c, 1e-9);
        assert!((m.mass - 1.0).abs() < 1e-10);
        assert!(
            project(
                &c,
                &Predicate::Poynting {
                    set: SignSet::Negative,
                    tol: 1e-9
                }
            )
            .mass()
                <= 1e-8
        );
        // incident plus a left-going wave of amplitude 0.3
        let refl = plane_strip([-0.25, 0.0], Complex64::new(0.3, 0.0), -32.0, 64, 1, 8);
        let c = raw(&add(&u, &refl));
        let right = project(
            &c,
            &Predicate::Poynting {
                set: SignSet::Positive,
                tol: 1e-9,
            },
        )
        .mass();
        let left = project(
            &c,
            &Predicate::Poynting {
                set: SignSet::Negative,
                tol: 1e-9,
            },
        )
        .mass();
        assert!((right - 1.0).abs() < 1e-10);
        assert!((left - 0.09).abs() < 1e-10);
    }

    #[test]
    fn energetic_metric_cases() {
        let ctx = RadiationContext::new(
            CoefficientField::free_space(1.0),
            3,
            3,
            1e-9,
            CutoffFlavor::Horizontal,
        );
        let basis = &ctx.plus;
        let right =
            coefficients_from_modes(basis, 8, 8, 3, &[([2, 0], 0, Complex64::new(1.0, 0.0))])
                .unwrap();
        assert!(
            energetic_metric_of(&right, basis.field(), 1e-9, Execution::Sequential)
                .unwrap()
                .abs()
                <= 1e-8
        );
        let left =
            coefficients_from_modes(basis, 8, 8, 3, &[([6, 1], 0, Complex64::new(0.0, 1.0))])
                .unwrap();
        let p = left.poynting(6 * 8 + 1, 0).unwrap();
        assert!(p < 0.0);
        let e = energetic_metric_of(&left, basis.field(), 1e-9, Execution::Sequential).unwrap();
        assert!((e - p).abs() <= 1e-6 * p.abs(), "{e} vs {p}");
        let zero = coefficients_from_modes(basis, 8, 8, 3, &[]).unwrap();
        assert_eq!(
            energetic_metric_of(&zero, basis.field(), 1e-9, Execution::Sequential).unwrap(),
            0.0
        );
    }

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

    #[test]
    fn level_masses_and_measures() {
        let ctx = RadiationContext::new(rod(), 4, 3, 1e-9, CutoffFlavor::Horizontal);
        let b = &ctx.plus;
        let only0 =
            coefficients_from_modes(b, 8, 10, 3, &[([1, 2], 0, Complex64::new(1.0, 0.0))]).unwrap();
        let w = synthesize(&only0, Execution::Sequential).unwrap();
        let c = bloch_coefficients(&w, 3, b, Execution::Sequential).unwrap();
        assert!(m_ge1_mass_of(&c) <= 1e-8);
        let one =
            coefficients_from_modes(b, 8, 10, 3, &[([1, 2], 1, Complex64::new(0.0, 0.7))]).unwrap();
        let w = synthesize(&one, Execution::Sequential).unwrap();
        let c = bloch_coefficients(&w, 3, b, Execution::Sequential).unwrap();
        assert!((m_ge1_mass_of(&c) - 0.49).abs() < 1e-8);
        // two level-zero modes with weights 0.36 and 0.64
        let two = coefficients_from_modes(
            b,
            8,
            10,
            3,
            &[
                ([1, 2], 0, Complex64::new(0.6, 0.0)),
                ([5, 3], 0, Complex64::new(0.0, 0.8)),
            ],
        )
        .unwrap();
        let w = synthesize(&two, Execution::Sequential).unwrap();
        let c = bloch_coefficients(&w, 3, b, Execution::Sequential).unwrap();
        let nu = bloch_measure_of(&c, 0).unwrap();
        let big: Vec<&Atom> = nu.atoms.iter().filter(|a| a.weight > 1e-6).collect();
        assert_eq!(big.len(), 2);
        let ratio = big.iter().map(|a| a.weight).fold(f64::INFINITY, f64::min)
            / big.iter().map(|a| a.weight).fold(0.0, f64::max);
        assert!((ratio - 0.5625).abs() < 0.05 * 0.5625);
        let all = bloch_measures(&c);
        let total: f64 = all.iter().map(|m| m.mass()).sum::<f64>() + c.residual_mass;
        assert!((total - w.mean_sq()).abs() <= 1e-8 * w.mean_sq());
        assert!(bloch_measure_of(&c, 3).is_err());
        let zero = coefficients_from_modes(b, 8, 10, 3, &[]).unwrap();
        assert!(bloch_measure_of(&zero, 0).unwrap().atoms.is_empty());
    }

    #[test]
    fn truncated_mode_leakage() {
        // a single free-space mode restricted and cut off at R = 8
        let ctx = free_ctx();
        let u = plane_strip([0.25, 0.125], Complex64::new(1.0, 0.0), -40.0, 80, 8, 8);
        let nu = bloch_measure(&ctx, &u, Side::Plus, 0, 8).unwrap();
        let peak = nu.peak().unwrap();
        assert_eq!(peak.j, [0.25, 0.125]);
        let c = ctx.coefficients(&u, Side::Plus, 8).unwrap();
        assert!(1.0 - peak.weight / c.total_mass <= 0.15);
    }

    #[test]
    fn support_classification() {
        let ctx = free_ctx();
        let omega = 2.0 * PI * (0.25f64 * 0.25 + 0.125 * 0.125).sqrt();
        let on = plane_strip([0.25, 0.125], Complex64::new(1.0, 0.0), -80.0, 160, 8, 8);
        let report = |u: &FieldStrip, rs: &[usize]| {
            let mut levels = Vec::new();
            let mut res = Vec::new();
            for &r in rs {
                let c = ctx.coefficients(u, Side::Plus, r).unwrap();
                levels.push(bloch_measures(&c));
                res.push(c.residual_mass);
            }
            measure_support_report(&levels, &res, omega, 0.125, SupportTolerances::default())
                .unwrap()
        };
        let rep = report(&on, &[8, 16]);
        assert!(
            rep.entries[1].inside_fraction >= 0.9,
            "{:?}",
            rep.entries[1]
        );
        assert!(!rep.vacuous);
        // wrong frequency for the same field
        let off = plane_strip([0.5, 0.375], Complex64::new(1.0, 0.0), -80.0, 160, 8, 8);
        let rep = report(&off, &[8, 16]);
        assert!(rep.entries[1].inside_fraction <= 0.05);
        let zero = FieldStrip::from_fn(-80.0, 1.0, 8, 8, 1280, |_| Complex64::new(0.0, 0.0));
        assert!(report(&zero, &[8, 16]).vacuous);
    }

    #[test]
    fn plane_wave_energy_balance() {
        let k = [0.25, 0.0];
        let u = plane_strip(k, Complex64::new(1.0, 0.0), -40.0, 80, 1, 16);
        let e = energy_balance(
            &u,
            8,
            &CoefficientField::free_space(1.0),
            FaceAverage::Arithmetic,
            Some(&u),
        )
        .unwrap();
        assert!((e.flux_left - e.flux_right).abs() <= 1e-6 * e.flux_left.abs());
        assert!((e.flux_left - PI / 2.0).abs() < 0.01);
        assert!(e.relative_defect.unwrap() < 1e-6);
        let s = FieldStrip::from_fn(-40.0, 1.0, 16, 1, 1280, |x| {
            Complex64::new((2.0 * PI * 0.25 * x[0]).cos(), 0.0)
        });
        let e = energy_balance(
            &s,
            8,
            &CoefficientField::free_space(1.0),
            FaceAverage::Arithmetic,
            None,
        )
        .unwrap();
        assert!(e.flux_left.abs() < 1e-12 && e.flux_right.abs() < 1e-12);
    }

    #[test]
    fn caccioppoli_plane_wave() {
        let k = [0.25, 0.125];
        let u = plane_strip(k, Complex64::new(1.0, 0.0), -20.0, 40, 8, 16);
        let vals: Vec<f64> = [2.0, 5.0, 9.0]
            .iter()
            .map(|&l| caccioppoli_check(&u, l).unwrap())
            .collect();
        for v in &vals {
            assert!((v / vals[0] - 1.0).abs() < 0.01);
        }
        let kk = 4.0 * PI * PI * (k[0] * k[0] + k[1] * k[1]);
        assert!((vals[0] - kk * 8.0 / (1.0 + 24.0)).abs() < 0.01 * vals[0]);
        let z = FieldStrip::from_fn(-20.0, 1.0, 8, 1, 320, |_| Complex64::new(0.0, 0.0));
        assert_eq!(caccioppoli_check(&z, 3.0).unwrap(), 0.0);
    }
}
