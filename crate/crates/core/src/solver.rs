//! Finite-difference Helmholtz transmission solver on a vertically periodic strip.
//!
//! Free space (`a = 1`) fills `x1 < 0`, the periodic medium fills `x1 > 0`.
//! The incident wave is injected on a total-field / scattered-field plane in
//! free space; sponge layers with damped coefficient `a (1 - i delta)` absorb
//! outgoing waves before the Dirichlet ends of the strip.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::time::Instant;

use crate::cell_model::CoefficientField;
use crate::error::{Error, Result};
use crate::exec::{map_range, Execution};
use crate::field::FieldStrip;
use crate::flux::FaceAverage;
use crate::linalg::BandedMatrix;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Absorbing ramp at both ends of the strip.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sponge {
    /// Thickness in cells.
    pub width: f64,
    pub delta_max: f64,
    pub exponent: f64,
}

impl Default for Sponge {
    fn default() -> Self {
        Sponge {
            width: 8.0,
            delta_max: 0.5,
            exponent: 2.0,
        }
    }
}

/// How the vertical period `h = K eps` is discretized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerticalReduction {
    /// One cell height with the quasi-periodic wrap `exp(2 pi i k2 eps)`; the
    /// full strip follows by the phase relation.
    #[default]
    Floquet,
    /// All `K` cells with a periodic wrap.
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterConfig {
    pub omega: f64,
    pub k: [f64; 2],
    pub epsilon: f64,
    pub k_cells: usize,
    /// `[x_lo, x_hi]`, on the sample grid.
    pub extent: [f64; 2],
    pub n_cell: usize,
    pub sponge: Sponge,
    pub tfsf_plane: f64,
    pub face_average: FaceAverage,
    pub vertical: VerticalReduction,
    /// Largest analysis box order; boxes `[R eps, 2 R eps]` must avoid the sponges.
    pub r_max: Option<usize>,
}

impl ScatterConfig {
    pub fn spacing(&self) -> f64 {
        self.epsilon / self.n_cell as f64
    }

    pub fn height(&self) -> f64 {
        self.epsilon * self.k_cells as f64
    }

    pub fn n1(&self) -> usize {
        ((self.extent[1] - self.extent[0]) / self.spacing()).round() as usize
    }

    /// All constraint violations as `field: message`; empty when the configuration is usable.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.omega > 0.0) {
            v.push(format!("omega: must be positive, got {}", self.omega));
        }
        if !(self.epsilon > 0.0) {
            v.push(format!("epsilon: must be positive, got {}", self.epsilon));
        }
        if self.k_cells == 0 {
            v.push("k_cells: K must be at least 1".into());
        }
        let k2sq = self.k[0] * self.k[0] + self.k[1] * self.k[1];
        let w2 = self.omega * self.omega;
        if (4.0 * PI * PI * k2sq - w2).abs() > 1e-12 * w2.max(f64::MIN_POSITIVE) {
            v.push(format!(
                "k: frequency-wavevector mismatch: 4 pi^2 |k|^2 = {} but omega^2 = {}",
                4.0 * PI * PI * k2sq,
                w2
            ));
        }
        if !(self.k[0] > 0.0) {
            v.push(format!(
                "k: incident k1 must be positive, got {}",
                self.k[0]
            ));
        }
        let kh = self.k[1] * self.height();
        if (kh - kh.round()).abs() > 1e-12 * kh.abs().max(1.0) {
            v.push(format!(
                "k: vertical periodicity: k2 h = {kh} is not an integer"
            ));
        }
        if self.n_cell < 8 {
            v.push(format!("n_cell: {} is below the minimum of 8", self.n_cell));
        }
        if self.omega > 0.0 && self.n_cell > 0 && self.epsilon > 0.0 {
            let ppw = 2.0 * PI / self.omega / self.spacing();
            if ppw < 10.0 {
                v.push(format!(
                    "n_cell: under-resolved: {ppw:.2} points per wavelength, need at least 10"
                ));
            }
        }
        if self.n_cell == 0 || !(self.epsilon > 0.0) {
            return v;
        }
        let dx = self.spacing();
        for (name, x) in [
            ("extent", self.extent[0]),
            ("extent", self.extent[1]),
            ("tfsf_plane", self.tfsf_plane),
        ] {
            let t = x / dx;
            if (t - t.round()).abs() > 1e-9 {
                v.push(format!(
                    "{name}: {x} is not on the sample grid (spacing {dx})"
                ));
            }
        }
        if !(self.extent[0] < self.tfsf_plane && self.tfsf_plane < 0.0) {
            v.push(format!(
                "tfsf_plane: {} must lie in (x_lo, 0)",
                self.tfsf_plane
            ));
        }
        let sw = self.sponge.width * self.epsilon;
        if !(self.sponge.width >= 0.0 && self.sponge.delta_max >= 0.0 && self.sponge.exponent > 0.0)
        {
            v.push("sponge: width and delta_max must be nonnegative, exponent positive".into());
        }
        if self.tfsf_plane <= self.extent[0] + sw {
            v.push(format!(
                "tfsf_plane: {} lies inside the left sponge",
                self.tfsf_plane
            ));
        }
        if let Some(r) = self.r_max {
            let need = 2.0 * r as f64 * self.epsilon;
            if self.extent[1] - sw < need - 1e-9 * self.epsilon {
                v.push(format!(
                    "extent: right sponge starts at {} and overlaps the analysis box [{}, {}]",
                    self.extent[1] - sw,
                    need / 2.0,
                    need
                ));
            }
            if self.extent[0] + sw > -need + 1e-9 * self.epsilon {
                v.push(format!(
                    "extent: left sponge ends at {} and overlaps the analysis box [{}, {}]",
                    self.extent[0] + sw,
                    -need,
                    -need / 2.0
                ));
            }
        }
        if self.k_cells > 0 && discrete_k1(self).is_none() {
            v.push("n_cell: the grid cannot carry the incident wave (discrete dispersion has no real solution)".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            let resolution = v.iter().all(|s| s.starts_with("n_cell:"));
            let msg = v.join("; ");
            Err(if resolution {
                Error::Resolution(msg)
            } else {
                Error::Config(msg)
            })
        }
    }

    /// Sponge damping at `x1`.
    pub fn delta(&self, x1: f64) -> f64 {
        let s = &self.sponge;
        if s.width <= 0.0 || s.delta_max == 0.0 {
            return 0.0;
        }
        let w = s.width * self.epsilon;
        let left = ((self.extent[0] + w - x1) / w).clamp(0.0, 1.0);
        let right = ((x1 - (self.extent[1] - w)) / w).clamp(0.0, 1.0);
        s.delta_max * left.max(right).powf(s.exponent)
    }

    fn rows(&self) -> usize {
        match self.vertical {
            VerticalReduction::Floquet => self.n_cell,
            VerticalReduction::Full => self.n_cell * self.k_cells,
        }
    }

    fn tfsf_column(&self) -> usize {
        ((self.tfsf_plane - self.extent[0]) / self.spacing()).round() as usize
    }
}

/// Horizontal wavenumber for which the sampled plane wave solves the discrete
/// free-space equation exactly.
pub fn discrete_k1(cfg: &ScatterConfig) -> Option<f64> {
    let dx = cfg.spacing();
    let s2 = (PI * cfg.k[1] * dx).sin().powi(2);
    let t = (cfg.omega * cfg.omega * dx * dx / 4.0 - s2).sqrt();
    if !(t.is_finite() && t <= 1.0) {
        return None;
    }
    Some(t.asin() / (PI * dx))
}

/// Free space on the left, `crystal` on the right.
#[derive(Clone, Debug)]
pub struct Medium {
    pub crystal: CoefficientField,
}

impl Medium {
    pub fn a(&self, x: [f64; 2]) -> f64 {
        if x[0] < 0.0 {
            1.0
        } else {
            self.crystal.value_at(x)
        }
    }
}

/// Assembled system `A u = b` for the mixed total/scattered unknowns.
#[derive(Clone, Debug)]
pub struct HelmholtzSystem {
    pub matrix: BandedMatrix,
    pub rhs: Vec<Complex64>,
    pub n1: usize,
    pub n2: usize,
    /// First total-field column.
    pub tfsf_column: usize,
    /// Wrap phase across the top of the discretized height.
    pub wrap: Complex64,
}

struct Stencil<'a> {
    cfg: &'a ScatterConfig,
    a: Vec<f64>,
    n1: usize,
    n2: usize,
    wrap: Complex64,
    damped: bool,
}

impl Stencil<'_> {
    fn new<'a>(
        cfg: &'a ScatterConfig,
        medium: &Medium,
        n2: usize,
        wrap: Complex64,
        damped: bool,
    ) -> Stencil<'a> {
        let n1 = cfg.n1();
        let dx = cfg.spacing();
        let a = (0..n1 * n2)
            .map(|p| {
                let x = [
                    cfg.extent[0] + ((p / n2) as f64 + 0.5) * dx,
                    ((p % n2) as f64 + 0.5) * dx,
                ];
                medium.a(x)
            })
            .collect();
        Stencil {
            cfg,
            a,
            n1,
            n2,
            wrap,
            damped,
        }
    }

    fn damping(&self, x1: f64) -> Complex64 {
        if self.damped {
            Complex64::new(1.0, -self.cfg.delta(x1))
        } else {
            Complex64::new(1.0, 0.0)
        }
    }

    /// Row `p`: `(column, coefficient)` pairs, diagonal first.
    fn row(&self, p: usize) -> [(Option<usize>, Complex64); 5] {
        let (n1, n2) = (self.n1, self.n2);
        let (i1, i2) = (p / n2, p % n2);
        let cfg = self.cfg;
        let dx = cfg.spacing();
        let inv = 1.0 / (dx * dx);
        let avg = cfg.face_average;
        let a0 = self.a[p];
        let x_left = cfg.extent[0] + i1 as f64 * dx;
        let x_mid = x_left + 0.5 * dx;
        let mut diag = Complex64::new(-cfg.omega * cfg.omega, 0.0);
        let mut out = [(None, ZERO); 5];
        // horizontal faces; Dirichlet ghosts beyond the ends
        let left = if i1 > 0 {
            avg.combine(a0, self.a[p - n2])
        } else {
            a0
        };
        let cl = left * self.damping(x_left) * inv;
        diag += cl;
        if i1 > 0 {
            out[1] = (Some(p - n2), -cl);
        }
        let right = if i1 + 1 < n1 {
            avg.combine(a0, self.a[p + n2])
        } else {
            a0
        };
        let cr = right * self.damping(x_left + dx) * inv;
        diag += cr;
        if i1 + 1 < n1 {
            out[2] = (Some(p + n2), -cr);
        }
        // vertical faces with the wrap phase
        let d = self.damping(x_mid);
        let (down, down_phase) = if i2 > 0 {
            (p - 1, Complex64::new(1.0, 0.0))
        } else {
            (p + n2 - 1, self.wrap.conj())
        };
        let (up, up_phase) = if i2 + 1 < n2 {
            (p + 1, Complex64::new(1.0, 0.0))
        } else {
            (p + 1 - n2, self.wrap)
        };
        let cd = avg.combine(a0, self.a[down]) * d * inv;
        let cu = avg.combine(a0, self.a[up]) * d * inv;
        diag += cd + cu;
        if n2 == 1 {
            // a single row couples to itself through the wrap
            diag -= cd * down_phase + cu * up_phase;
        } else {
            out[3] = (Some(down), -cd * down_phase);
            out[4] = (Some(up), -cu * up_phase);
        }
        out[0] = (Some(p), diag);
        out
    }

    fn apply(&self, u: &[Complex64], p: usize) -> Complex64 {
        self.row(p)
            .iter()
            .filter_map(|(c, v)| c.map(|c| v * u[c]))
            .sum()
    }
}

/// The incident plane wave on the solver grid (`rows` samples per column).
fn incident_samples(cfg: &ScatterConfig, n2: usize) -> Result<Vec<Complex64>> {
    let k1 = discrete_k1(cfg)
        .ok_or_else(|| Error::Resolution("incident wave not representable on the grid".into()))?;
    let n1 = cfg.n1();
    let dx = cfg.spacing();
    Ok((0..n1 * n2)
        .map(|p| {
            let x1 = cfg.extent[0] + ((p / n2) as f64 + 0.5) * dx;
            let x2 = ((p % n2) as f64 + 0.5) * dx;
            Complex64::from_polar(1.0, 2.0 * PI * (k1 * x1 + cfg.k[1] * x2))
        })
        .collect())
}

/// The incident wave injected by the solver, on the full strip grid.
pub fn incident_field(cfg: &ScatterConfig) -> Result<FieldStrip> {
    let k1 = discrete_k1(cfg)
        .ok_or_else(|| Error::Resolution("incident wave not representable on the grid".into()))?;
    Ok(FieldStrip::from_fn(
        cfg.extent[0],
        cfg.epsilon,
        cfg.n_cell,
        cfg.k_cells,
        cfg.n1(),
        |x| Complex64::from_polar(1.0, 2.0 * PI * (k1 * x[0] + cfg.k[1] * x[1])),
    ))
}

fn wrap_phase(cfg: &ScatterConfig, n2: usize) -> Complex64 {
    let h = n2 as f64 * cfg.spacing();
    if cfg.vertical == VerticalReduction::Full || n2 == cfg.n_cell * cfg.k_cells {
        // k2 h is an integer by validation
        let t = cfg.k[1] * h;
        return Complex64::from_polar(1.0, 2.0 * PI * (t - t.round()));
    }
    Complex64::from_polar(1.0, 2.0 * PI * cfg.k[1] * h)
}

/// Assembles the damped, TF/SF-split system.
pub fn assemble_helmholtz(
    cfg: &ScatterConfig,
    medium: &Medium,
    exec: Execution,
) -> Result<HelmholtzSystem> {
    cfg.validate()?;
    let n2 = cfg.rows();
    let n1 = cfg.n1();
    let wrap = wrap_phase(cfg, n2);
    let st = Stencil::new(cfg, medium, n2, wrap, true);
    let n = n1 * n2;
    let mut matrix = BandedMatrix::zeros(n, n2, n2);
    // column j collects A[i][j] from the rows i that reference j
    matrix.fill_columns(exec, |j| {
        let (i1, i2) = (j / n2, j % n2);
        let mut rows = vec![j];
        if i1 > 0 {
            rows.push(j - n2);
        }
        if i1 + 1 < n1 {
            rows.push(j + n2);
        }
        if n2 > 1 {
            rows.push(if i2 > 0 { j - 1 } else { j + n2 - 1 });
            rows.push(if i2 + 1 < n2 { j + 1 } else { j + 1 - n2 });
        }
        rows.sort_unstable();
        rows.dedup();
        let mut out = Vec::with_capacity(rows.len());
        for i in rows {
            let mut v = ZERO;
            for (c, val) in st.row(i) {
                if c == Some(j) {
                    v += val;
                }
            }
            if v != ZERO {
                out.push((i, v));
            }
        }
        out
    });
    let s = cfg.tfsf_column();
    let inc = incident_samples(cfg, n2)?;
    let mut rhs = vec![ZERO; n];
    for i2 in 0..n2 {
        let tf = s * n2 + i2;
        let sf = tf - n2;
        // row tf references the scattered value at sf, row sf the total value at tf
        let c_tf = st.row(tf)[1].1;
        let c_sf = st.row(sf)[2].1;
        rhs[tf] -= c_tf * inc[sf];
        rhs[sf] += c_sf * inc[tf];
    }
    Ok(HelmholtzSystem {
        matrix,
        rhs,
        n1,
        n2,
        tfsf_column: s,
        wrap,
    })
}

/// Solver output.
#[derive(Clone, Debug)]
pub struct ScatterSolution {
    /// Total field on the full strip (`K` cells high).
    pub u: FieldStrip,
    pub k1_discrete: f64,
    pub residual: f64,
    pub pivot_ratio: f64,
    pub assemble_seconds: f64,
    pub solve_seconds: f64,
}

/// Solves the transmission problem and returns the total field.
pub fn solve_scattering(
    cfg: &ScatterConfig,
    medium: &Medium,
    exec: Execution,
) -> Result<ScatterSolution> {
    let t0 = Instant::now();
    let sys = assemble_helmholtz(cfg, medium, exec)?;
    let t1 = Instant::now();
    let (n1, n2, s) = (sys.n1, sys.n2, sys.tfsf_column);
    let mut x = sys.rhs.clone();
    let lu = sys.matrix.factor()?;
    let pivot_ratio = lu.pivot_ratio();
    lu.solve_in_place(&mut x);
    if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Solver(format!(
            "non-finite solution (pivot ratio {pivot_ratio:.2e}); increase sponge delta_max"
        )));
    }
    let inc = incident_samples(cfg, n2)?;
    for p in 0..s * n2 {
        x[p] += inc[p];
    }
    let t2 = Instant::now();
    // extend to K cells
    let full = cfg.n_cell * cfg.k_cells;
    let samples = if n2 == full {
        x
    } else {
        let phase = Complex64::from_polar(1.0, 2.0 * PI * cfg.k[1] * cfg.epsilon);
        let mut out = Vec::with_capacity(n1 * full);
        for i1 in 0..n1 {
            let col = &x[i1 * n2..(i1 + 1) * n2];
            let mut ph = Complex64::new(1.0, 0.0);
            for _ in 0..cfg.k_cells {
                out.extend(col.iter().map(|v| v * ph));
                ph *= phase;
            }
        }
        out
    };
    let u = FieldStrip::new(
        cfg.extent[0],
        cfg.epsilon,
        cfg.n_cell,
        cfg.k_cells,
        n1,
        samples,
    )?;
    let residual = residual_check(&u, cfg, medium)?;
    Ok(ScatterSolution {
        u,
        k1_discrete: discrete_k1(cfg).unwrap_or(f64::NAN),
        residual,
        pivot_ratio,
        assemble_seconds: (t1 - t0).as_secs_f64(),
        solve_seconds: (t2 - t1).as_secs_f64(),
    })
}

/// `max |L0 u - omega^2 u| / (omega^2 |u|_inf)` over undamped interior columns,
/// with the undamped operator on the full strip.
pub fn residual_check(u: &FieldStrip, cfg: &ScatterConfig, medium: &Medium) -> Result<f64> {
    if u.n1 != cfg.n1() || u.n_cell != cfg.n_cell || u.k_cells != cfg.k_cells {
        return Err(Error::Dimension(
            "field grid does not match the configuration".into(),
        ));
    }
    let n2 = u.n2();
    let full = ScatterConfig {
        vertical: VerticalReduction::Full,
        ..cfg.clone()
    };
    let st = Stencil::new(&full, medium, n2, wrap_phase(&full, n2), false);
    let dx = cfg.spacing();
    let cols: Vec<usize> = (1..u.n1.saturating_sub(1))
        .filter(|&i1| {
            let xl = cfg.extent[0] + i1 as f64 * dx;
            cfg.delta(xl) == 0.0 && cfg.delta(xl + dx) == 0.0
        })
        .collect();
    let worst = map_range(Execution::default(), cols.len(), |c| {
        let i1 = cols[c];
        (0..n2)
            .map(|i2| st.apply(&u.samples, i1 * n2 + i2).norm())
            .fold(0.0, f64::max)
    })
    .into_iter()
    .fold(0.0, f64::max);
    let scale = cfg.omega * cfg.omega * u.max_abs();
    Ok(if scale > 0.0 { worst / scale } else { worst })
}

/// Pointwise `u1 - u2`.
pub fn difference_solution(u1: &FieldStrip, u2: &FieldStrip) -> Result<FieldStrip> {
    if !u1.same_grid(u2) {
        return Err(Error::Dimension("fields live on different grids".into()));
    }
    Ok(FieldStrip {
        samples: u1
            .samples
            .iter()
            .zip(&u2.samples)
            .map(|(a, b)| a - b)
            .collect(),
        ..u1.clone()
    })
}

/// Mean square of `u` over `x1` in `[lo, hi]`.
pub fn region_mean_sq(u: &FieldStrip, lo: f64, hi: f64) -> f64 {
    let mut s = 0.0;
    let mut count = 0usize;
    for i1 in 0..u.n1 {
        let x = u.x1(i1);
        if x >= lo && x <= hi {
            s += u.column(i1).iter().map(|v| v.norm_sqr()).sum::<f64>();
            count += u.n2();
        }
    }
    if count == 0 {
        0.0
    } else {
        s / count as f64
    }
}

/// Lowest `count` eigenvalues of the solver's undamped five-point operator on one
/// cell with Bloch phases `exp(2 pi i j)`: the dispersion the strip solution obeys.
pub fn fd_cell_bands(
    crystal: &CoefficientField,
    n_cell: usize,
    j: [f64; 2],
    count: usize,
    avg: FaceAverage,
) -> Result<Vec<f64>> {
    let n = n_cell;
    let dx = crystal.epsilon() / n as f64;
    let inv = 1.0 / (dx * dx);
    let a: Vec<f64> = (0..n * n)
        .map(|p| crystal.value_at([((p / n) as f64 + 0.5) * dx, ((p % n) as f64 + 0.5) * dx]))
        .collect();
    let mut m = nalgebra::DMatrix::<Complex64>::zeros(n * n, n * n);
    let ph = [
        Complex64::from_polar(1.0, 2.0 * PI * j[0]),
        Complex64::from_polar(1.0, 2.0 * PI * j[1]),
    ];
    for i1 in 0..n {
        for i2 in 0..n {
            let p = i1 * n + i2;
            // forward neighbours; the backward links are the adjoints
            for (d, (q1, q2)) in [(0usize, (i1 + 1, i2)), (1, (i1, i2 + 1))] {
                let wrapped = q1 == n || q2 == n;
                let q = (q1 % n) * n + q2 % n;
                let c = avg.combine(a[p], a[q]) * inv;
                let phase = if wrapped {
                    ph[d]
                } else {
                    Complex64::new(1.0, 0.0)
                };
                m[(p, p)] += c;
                m[(q, q)] += c;
                m[(p, q)] -= c * phase;
                m[(q, p)] -= c * phase.conj();
            }
        }
    }
    crate::linalg::eigvalsh_lowest(&m, count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell_model::Geometry;

    fn free_cfg() -> ScatterConfig {
        let k: [f64; 2] = [0.125, -0.125];
        ScatterConfig {
            omega: 2.0 * PI * (k[0] * k[0] + k[1] * k[1]).sqrt(),
            k,
            epsilon: 1.0,
            k_cells: 8,
            extent: [-40.0, 40.0],
            n_cell: 16,
            sponge: Sponge {
                width: 16.0,
                delta_max: 2.0,
                exponent: 2.0,
            },
            tfsf_plane: -1.0,
            face_average: FaceAverage::Arithmetic,
            vertical: VerticalReduction::Floquet,
            r_max: Some(8),
        }
    }

    fn free_medium() -> Medium {
        Medium {
            crystal: CoefficientField::free_space(1.0),
        }
    }

    #[test]
    fn violations_are_collected() {
        let mut c = free_cfg();
        assert!(c.violations().is_empty(), "{:?}", c.violations());
        c.k = [0.2, -0.125];
        c.k_cells = 3;
        let v = c.violations();
        assert!(v
            .iter()
            .any(|s| s.contains("frequency-wavevector mismatch")));
        assert!(v.iter().any(|s| s.contains("vertical periodicity")));
        let mut c = free_cfg();
        c.n_cell = 4;
        c.tfsf_plane = 0.5;
        assert!(c.violations().len() >= 2);
        let mut c = free_cfg();
        c.r_max = Some(16);
        assert!(
            matches!(c.validate(), Err(Error::Config(m)) if m.contains("overlaps the analysis box"))
        );
        let mut c = free_cfg();
        c.omega *= 20.0;
        c.k = [c.k[0] * 20.0, c.k[1] * 20.0];
        assert!(c.violations().iter().any(|s| s.contains("under-resolved")));
    }

    #[test]
    fn interior_stencil() {
        let mut c = free_cfg();
        c.sponge.delta_max = 0.0;
        let st = Stencil::new(&c, &free_medium(), 16, Complex64::new(1.0, 0.0), true);
        let p = 300 * 16 + 5;
        let row = st.row(p);
        let inv = 1.0 / (c.spacing() * c.spacing());
        assert!((row[0].1 - Complex64::new(4.0 * inv - c.omega * c.omega, 0.0)).norm() < 1e-9);
        for (_, v) in &row[1..] {
            assert!((v + inv).norm() < 1e-9);
        }
        // full sponge depth: the a-terms carry (1 - i delta_max)
        let c = free_cfg();
        let st = Stencil::new(&c, &free_medium(), 16, Complex64::new(1.0, 0.0), true);
        let row = st.row(2 * 16 + 3);
        let d = Complex64::new(1.0, -c.delta(c.extent[0] + 2.5 * c.spacing()));
        assert!(c.delta(c.extent[0] + 2.5 * c.spacing()) > 0.9 * c.sponge.delta_max);
        assert!((row[3].1 + inv * d).norm() < 1e-9 * inv);
    }

    #[test]
    fn tfsf_consistency() {
        let c = free_cfg();
        let sys = assemble_helmholtz(&c, &free_medium(), Execution::default()).unwrap();
        let inc = incident_samples(&c, sys.n2).unwrap();
        let mut split = inc.clone();
        for p in 0..sys.tfsf_column * sys.n2 {
            split[p] = ZERO;
        }
        let lhs = sys.matrix.matvec(&split);
        let scale = 4.0 / (c.spacing() * c.spacing());
        for i1 in 0..sys.n1 {
            let x = c.extent[0] + i1 as f64 * c.spacing();
            if c.delta(x) > 0.0 || c.delta(x + c.spacing()) > 0.0 {
                continue;
            }
            for i2 in 0..sys.n2 {
                let p = i1 * sys.n2 + i2;
                assert!((lhs[p] - sys.rhs[p]).norm() < 1e-10 * scale, "column {i1}");
            }
        }
    }

    #[test]
    fn free_space_passes_through() {
        let c = free_cfg();
        let sol = solve_scattering(&c, &free_medium(), Execution::default()).unwrap();
        let inc = incident_field(&c).unwrap();
        let mut worst = 0.0f64;
        for i1 in 0..sol.u.n1 {
            let x = sol.u.x1(i1);
            if x > c.tfsf_plane && c.delta(x) == 0.0 {
                for i2 in 0..sol.u.n2() {
                    worst = worst.max((sol.u.get(i1, i2) - inc.get(i1, i2)).norm());
                }
            }
        }
        assert!(worst <= 1e-3, "{worst}");
        assert!(sol.residual <= 1e-8, "{}", sol.residual);
    }

    #[test]
    fn floquet_matches_full_height() {
        let crystal = CoefficientField::new(
            1.0,
            Geometry::Rod {
                center: [0.5, 0.5],
                radius: 0.3,
                a_inside: 0.5,
                a_outside: 1.0,
                mollify: 0.1,
            },
        )
        .unwrap();
        let k: [f64; 2] = [0.25, 0.5];
        let c = ScatterConfig {
            omega: 2.0 * PI * (k[0] * k[0] + k[1] * k[1]).sqrt(),
            k,
            k_cells: 2,
            extent: [-12.0, 12.0],
            n_cell: 8,
            sponge: Sponge {
                width: 6.0,
                delta_max: 2.0,
                exponent: 2.0,
            },
            r_max: None,
            ..free_cfg()
        };
        let m = Medium { crystal };
        let a = solve_scattering(&c, &m, Execution::Sequential).unwrap();
        let full = ScatterConfig {
            vertical: VerticalReduction::Full,
            ..c.clone()
        };
        let b = solve_scattering(&full, &m, Execution::Sequential).unwrap();
        let d = difference_solution(&a.u, &b.u).unwrap();
        assert!(d.max_abs() < 1e-10 * a.u.max_abs(), "{}", d.max_abs());
        assert!(a.residual < 1e-8 && b.residual < 1e-8);
        let zero = difference_solution(&a.u, &a.u).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
    }

    fn normal_incidence(extent: [f64; 2], width: f64) -> ScatterConfig {
        let k: [f64; 2] = [0.125, 0.0];
        ScatterConfig {
            omega: 2.0 * PI * k[0],
            k,
            k_cells: 1,
            extent,
            sponge: Sponge {
                width,
                delta_max: 2.0,
                exponent: 2.0,
            },
            tfsf_plane: -2.0,
            face_average: FaceAverage::Harmonic,
            r_max: None,
            ..free_cfg()
        }
    }

    #[test]
    fn fresnel_step() {
        let c = normal_incidence([-64.0, 64.0], 16.0);
        let m = Medium {
            crystal: CoefficientField::new(1.0, Geometry::Constant { value: 4.0 }).unwrap(),
        };
        let sol = solve_scattering(&c, &m, Execution::default()).unwrap();
        let inc = incident_field(&c).unwrap();
        let refl = difference_solution(&sol.u, &inc).unwrap();
        let r = region_mean_sq(&refl, -40.0, -20.0).sqrt();
        assert!((r - 1.0 / 3.0).abs() < 0.01, "{r}");
        // no sponge-born standing wave on the transmitted side
        let t = region_mean_sq(&sol.u, 10.0, 40.0).sqrt();
        let t_exact = 2.0 / 3.0;
        assert!((t - t_exact).abs() < 0.01, "{t}");
    }

    #[test]
    fn sponge_width_insensitive() {
        let m = Medium {
            crystal: CoefficientField::new(
                1.0,
                Geometry::Rod {
                    center: [0.5, 0.5],
                    radius: 0.3,
                    a_inside: 0.5,
                    a_outside: 1.0,
                    mollify: 0.1,
                },
            )
            .unwrap(),
        };
        let a = solve_scattering(
            &normal_incidence([-40.0, 40.0], 8.0),
            &m,
            Execution::default(),
        )
        .unwrap();
        let b = solve_scattering(
            &normal_incidence([-48.0, 48.0], 16.0),
            &m,
            Execution::default(),
        )
        .unwrap();
        let shift = 8 * 16;
        let mut num = 0.0;
        let mut den = 0.0;
        for i1 in 0..a.u.n1 {
            let x = a.u.x1(i1);
            if x.abs() > 30.0 {
                continue;
            }
            for i2 in 0..a.u.n2() {
                num += (a.u.get(i1, i2) - b.u.get(i1 + shift, i2)).norm_sqr();
                den += b.u.get(i1 + shift, i2).norm_sqr();
            }
        }
        eprintln!("sponge mass ratio {}", num / den);
        assert!(num / den <= 0.05, "{}", num / den);
    }

    #[test]
    fn cell_dispersion() {
        let j = [0.3, 0.85];
        let free = CoefficientField::free_space(1.0);
        let mu = fd_cell_bands(&free, 8, j, 1, FaceAverage::Arithmetic).unwrap()[0];
        let dx: f64 = 1.0 / 8.0;
        // lowest branch folds j2 = 0.85 to -0.15
        let want =
            4.0 / (dx * dx) * ((PI * 0.3 * dx).sin().powi(2) + (PI * 0.15 * dx).sin().powi(2));
        assert!((mu - want).abs() < 1e-10 * want, "{mu} {want}");
        let rod = CoefficientField::new(
            1.0,
            Geometry::Rod {
                center: [0.5, 0.5],
                radius: 0.3,
                a_inside: 0.5,
                a_outside: 1.0,
                mollify: 0.1,
            },
        )
        .unwrap();
        let fd = fd_cell_bands(&rod, 16, [0.25, 0.125], 1, FaceAverage::Arithmetic).unwrap()[0];
        let pw = crate::bloch_core::band_values(&rod, [0.25, 0.125], 1, 7).unwrap()[0];
        assert!((fd - pw).abs() < 0.01 * pw, "{fd} {pw}");
    }
}
