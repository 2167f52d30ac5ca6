//! Transmitted Bloch modes on the line `j2 = k2` and the refraction verdict.

use serde::{Deserialize, Serialize};

use crate::bloch_core::{
    band_values, compute_modes, group_velocity, GradientMethod, Side, SmallnessCheck,
};
use crate::cell_model::CoefficientField;
use crate::error::{Error, Result};
use crate::exec::{map_range, map_slice, Execution};
use crate::flux::poynting_number;
use crate::radiation::DiscreteBlochMeasure;

/// A root of `mu_m(j1, k2) = omega^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub j: [f64; 2],
    pub level: usize,
    pub mu_defect: f64,
    pub group_velocity: [f64; 2],
    pub gradient_method: GradientMethod,
    pub p0: f64,
}

/// Scan settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanOptions {
    pub grid_n: usize,
    pub cutoff: usize,
    /// Bands scanned: `0..levels`; only the lowest is justified below the threshold frequency.
    pub levels: usize,
    /// Roots with `|P| <= tol_p_rel * omega` count as vertical flux.
    pub tol_p_rel: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            grid_n: 64,
            cutoff: 7,
            levels: 1,
            tol_p_rel: 1e-6,
        }
    }
}

/// All roots on the line, split by condition (c) and by vertical flux.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransmittedModes {
    pub omega: f64,
    pub k2: f64,
    /// Roots with a positive horizontal group velocity and nonzero flux.
    pub candidates: Vec<Candidate>,
    /// Roots whose flux vanishes within tolerance.
    pub vertical_flux: Vec<Candidate>,
    /// Roots failing condition (c).
    pub rejected: Vec<Candidate>,
    pub diagnostic: Option<String>,
    pub sign_changes: usize,
}

fn canonical(x: f64) -> f64 {
    let r = x.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Solves (a) and (b) by scanning `j1` and bisecting, then applies (c).
pub fn transmitted_modes(
    field: &CoefficientField,
    omega: f64,
    k2: f64,
    opts: ScanOptions,
    exec: Execution,
) -> Result<TransmittedModes> {
    if opts.grid_n < 4 || opts.levels == 0 {
        return Err(Error::Validation(
            "scan needs grid_n >= 4 and at least one level".into(),
        ));
    }
    let eps = field.epsilon();
    let j2 = canonical(k2 * eps);
    let w2 = omega * omega;
    let n = opts.grid_n;
    let tol = 1e-8 * w2;
    let mu_at = |j1: f64, m: usize| -> Result<f64> {
        Ok(band_values(field, [j1, j2], m + 1, opts.cutoff)?[m])
    };
    let samples = map_range(exec, n, |i| {
        band_values(field, [i as f64 / n as f64, j2], opts.levels, opts.cutoff)
    });
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
    let mut roots: Vec<(f64, usize)> = Vec::new();
    let mut sign_changes = 0;
    for m in 0..opts.levels {
        for i in 0..n {
            let f0 = samples[i][m] - w2;
            let f1 = samples[(i + 1) % n][m] - w2;
            if f0.abs() <= tol {
                roots.push((i as f64 / n as f64, m));
                continue;
            }
            if f0.signum() == f1.signum() || f1.abs() <= tol {
                continue;
            }
            sign_changes += 1;
            let (mut lo, mut hi) = (i as f64 / n as f64, (i + 1) as f64 / n as f64);
            let mut flo = f0;
            let mut mid = 0.5 * (lo + hi);
            for _ in 0..200 {
                mid = 0.5 * (lo + hi);
                let fm = mu_at(mid, m)? - w2;
                if fm.abs() <= tol || hi - lo < 1e-15 {
                    break;
                }
                if fm.signum() == flo.signum() {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            roots.push((canonical(mid), m));
        }
    }
    let tol_p = opts.tol_p_rel * omega.max(f64::MIN_POSITIVE);
    let analysed = map_slice(exec, &roots, |&(j1, m)| -> Result<Candidate> {
        let j = [j1, j2];
        let gv = group_velocity(field, j, m, opts.cutoff)?;
        let modes = compute_modes(field, Side::Plus, j, m + 1, opts.cutoff)?;
        Ok(Candidate {
            j,
            level: m,
            mu_defect: modes[m].mu - w2,
            group_velocity: gv.grad,
            gradient_method: gv.method,
            p0: poynting_number(&modes[m], field),
        })
    });
    let mut out = TransmittedModes {
        omega,
        k2,
        candidates: Vec::new(),
        vertical_flux: Vec::new(),
        rejected: Vec::new(),
        diagnostic: None,
        sign_changes,
    };
    for c in analysed {
        let c = c?;
        if c.p0.abs() <= tol_p {
            out.vertical_flux.push(c);
        } else if c.group_velocity[0] > 0.0 {
            out.candidates.push(c);
        } else {
            out.rejected.push(c);
        }
    }
    if roots.is_empty() {
        let lo = samples.iter().map(|s| s[0]).fold(f64::INFINITY, f64::min);
        let hi = samples
            .iter()
            .map(|s| s[opts.levels - 1])
            .fold(f64::NEG_INFINITY, f64::max);
        out.diagnostic = Some(format!(
            "omega^2 = {w2} is outside the band range [{lo}, {hi}] on the line j2 = {j2}"
        ));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Uniqueness {
    Unique,
    Multiple,
    None,
}

/// Transmitted-mode prediction with the refraction verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransmissionPrediction {
    pub omega: f64,
    pub k: [f64; 2],
    pub candidate_modes: Vec<Candidate>,
    /// Per candidate: vertical group velocity opposite to the incident one.
    pub candidate_negative: Vec<bool>,
    pub vertical_flux_modes: Vec<Candidate>,
    pub negative_refraction: bool,
    pub uniqueness: Uniqueness,
    pub smallness: Option<SmallnessCheck>,
    pub diagnostic: Option<String>,
}

/// Incident vertical group velocity has the sign of `k2`; refraction is negative
/// when the transmitted mode's `e2 . grad mu0` has the opposite sign.
pub fn refraction_report(
    k: [f64; 2],
    omega: f64,
    modes: &TransmittedModes,
    smallness: Option<SmallnessCheck>,
) -> TransmissionPrediction {
    let flags: Vec<bool> = modes
        .candidates
        .iter()
        .map(|c| {
            k[1] != 0.0
                && c.group_velocity[1] != 0.0
                && c.group_velocity[1].signum() == -k[1].signum()
        })
        .collect();
    let uniqueness = match modes.candidates.len() {
        0 => Uniqueness::None,
        1 => Uniqueness::Unique,
        _ => Uniqueness::Multiple,
    };
    let mut diagnostic = modes.diagnostic.clone();
    if let Some(s) = smallness {
        if !s.ok {
            let note = format!(
                "omega^2 exceeds the second-band infimum by {:.3e}; outside the proven regime",
                -s.margin
            );
            diagnostic = Some(match diagnostic {
                Some(d) => format!("{d}; {note}"),
                None => note,
            });
        }
    }
    TransmissionPrediction {
        omega,
        k,
        negative_refraction: uniqueness == Uniqueness::Unique && flags[0],
        candidate_negative: flags,
        candidate_modes: modes.candidates.clone(),
        vertical_flux_modes: modes.vertical_flux.clone(),
        uniqueness,
        smallness,
        diagnostic,
    }
}

/// Comparison of a prediction with the measure of a solver field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldValidation {
    pub peak_j: Option<[f64; 2]>,
    /// Torus distance from the peak to each predicted `j`.
    pub distances: Vec<f64>,
    pub nearest: Option<f64>,
    /// Measure mass within `tol` of a predicted `j`.
    pub mass_fraction: f64,
    pub tol: f64,
    pub r: usize,
    pub impossible: bool,
}

fn wrap(d: f64) -> f64 {
    let d = d.rem_euclid(1.0);
    if d > 0.5 {
        d - 1.0
    } else {
        d
    }
}

pub fn torus_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    wrap(a[0] - b[0]).hypot(wrap(a[1] - b[1]))
}

/// Mass-weighted centroid of the atoms above 10% of the largest, on the torus.
pub fn measure_peak(measure: &DiscreteBlochMeasure) -> Option<[f64; 2]> {
    let top = measure.peak()?;
    if top.weight <= 0.0 {
        return None;
    }
    let mut s = [0.0; 2];
    let mut w = 0.0;
    for a in measure
        .atoms
        .iter()
        .filter(|a| a.weight >= 0.1 * top.weight)
    {
        s[0] += a.weight * wrap(a.j[0] - top.j[0]);
        s[1] += a.weight * wrap(a.j[1] - top.j[1]);
        w += a.weight;
    }
    Some([
        canonical(top.j[0] + s[0] / w),
        canonical(top.j[1] + s[1] / w),
    ])
}

/// `tol` defaults to `2/R`.
pub fn validate_against_field(
    prediction: &TransmissionPrediction,
    measure: &DiscreteBlochMeasure,
    tol: Option<f64>,
) -> FieldValidation {
    let tol = tol.unwrap_or(2.0 / measure.r as f64);
    let total = measure.mass();
    let peak = measure_peak(measure);
    let targets: Vec<[f64; 2]> = prediction.candidate_modes.iter().map(|c| c.j).collect();
    let distances: Vec<f64> = match peak {
        Some(p) => targets.iter().map(|&t| torus_distance(p, t)).collect(),
        None => Vec::new(),
    };
    let near: f64 = measure
        .atoms
        .iter()
        .filter(|a| {
            targets
                .iter()
                .any(|&t| torus_distance(a.j, t) <= tol + 1e-12)
        })
        .map(|a| a.weight)
        .sum();
    FieldValidation {
        peak_j: peak,
        nearest: distances.iter().copied().reduce(f64::min),
        distances,
        mass_fraction: if total > 0.0 { near / total } else { 0.0 },
        tol,
        r: measure.r,
        impossible: total == 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radiation::Atom;
    use std::f64::consts::PI;

    fn free() -> CoefficientField {
        CoefficientField::free_space(1.0)
    }

    #[test]
    fn free_space_roots() {
        let opts = ScanOptions {
            cutoff: 3,
            ..Default::default()
        };
        let t = transmitted_modes(&free(), PI / 2.0, 0.0, opts, Execution::Sequential).unwrap();
        assert_eq!(t.candidates.len(), 1);
        assert!((t.candidates[0].j[0] - 0.25).abs() < 1e-9);
        assert_eq!(t.rejected.len(), 1);
        assert!((t.rejected[0].j[0] - 0.75).abs() < 1e-9);
        for c in t.candidates.iter().chain(&t.rejected) {
            assert!(c.mu_defect.abs() <= 1e-8 * PI * PI / 4.0);
        }
        let p = refraction_report([0.25, 0.0], PI / 2.0, &t, None);
        assert_eq!(p.uniqueness, Uniqueness::Unique);
        assert!(!p.negative_refraction);
        let z = transmitted_modes(&free(), 0.0, 0.0, opts, Execution::Sequential).unwrap();
        assert!(z.candidates.is_empty());
        assert_eq!(
            refraction_report([0.0, 0.0], 0.0, &z, None).uniqueness,
            Uniqueness::None
        );
    }

    #[test]
    fn snell_branch_in_free_space() {
        let k: [f64; 2] = [0.2, -0.15];
        let omega = 2.0 * PI * (k[0] * k[0] + k[1] * k[1]).sqrt();
        let t = transmitted_modes(
            &free(),
            omega,
            k[1],
            ScanOptions {
                cutoff: 3,
                ..Default::default()
            },
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(t.candidates.len(), 1);
        let c = t.candidates[0];
        assert!((c.j[0] - 0.2).abs() < 1e-8 && (c.j[1] - 0.85).abs() < 1e-12);
        assert!(c.group_velocity[1] < 0.0);
        let p = refraction_report(k, omega, &t, None);
        assert!(!p.negative_refraction);
        assert_eq!(p.candidate_negative, vec![false]);
    }

    #[test]
    fn verdict_sign_rule() {
        let c = Candidate {
            j: [0.3, 0.875],
            level: 0,
            mu_defect: 0.0,
            group_velocity: [1.0, 2.0],
            gradient_method: GradientMethod::HellmannFeynman,
            p0: 0.5,
        };
        let modes = TransmittedModes {
            omega: 1.0,
            k2: -0.125,
            candidates: vec![c],
            vertical_flux: vec![],
            rejected: vec![],
            diagnostic: None,
            sign_changes: 2,
        };
        assert!(refraction_report([0.1, -0.125], 1.0, &modes, None).negative_refraction);
        assert!(!refraction_report([0.1, 0.125], 1.0, &modes, None).negative_refraction);
        let two = TransmittedModes {
            candidates: vec![c, c],
            ..modes.clone()
        };
        let p = refraction_report([0.1, -0.125], 1.0, &two, None);
        assert_eq!(p.uniqueness, Uniqueness::Multiple);
        assert!(!p.negative_refraction);
        assert_eq!(p.candidate_negative, vec![true, true]);
    }

    #[test]
    fn peak_and_validation() {
        let atom = |j: [f64; 2], w: f64| Atom {
            j,
            weight: w,
            mu: 0.0,
            p: 0.0,
        };
        let m = DiscreteBlochMeasure {
            l: 0,
            side: Side::Plus,
            r: 16,
            atoms: vec![
                atom([0.0, 0.5], 1.0),
                atom([15.0 / 16.0, 0.5], 1.0),
                atom([0.5, 0.5], 0.01),
            ],
        };
        let peak = measure_peak(&m).unwrap();
        assert!(torus_distance(peak, [31.0 / 32.0, 0.5]) < 1e-12);
        let c = Candidate {
            j: [0.0, 0.5],
            level: 0,
            mu_defect: 0.0,
            group_velocity: [1.0, 0.0],
            gradient_method: GradientMethod::HellmannFeynman,
            p0: 1.0,
        };
        let modes = TransmittedModes {
            omega: 1.0,
            k2: 0.5,
            candidates: vec![c],
            vertical_flux: vec![],
            rejected: vec![],
            diagnostic: None,
            sign_changes: 2,
        };
        let p = refraction_report([0.1, 0.5], 1.0, &modes, None);
        let v = validate_against_field(&p, &m, None);
        assert!(v.nearest.unwrap() <= 1.0 / 16.0);
        assert!((v.mass_fraction - 2.0 / 2.01).abs() < 1e-12);
        let empty = DiscreteBlochMeasure { atoms: vec![], ..m };
        assert!(validate_against_field(&p, &empty, None).impossible);
    }
}
