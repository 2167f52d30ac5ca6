//! Periodic coefficient fields `a(x)` on the unit cell `Y = (0, eps)^2`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fft;

/// Sampling resolution used for the cached Fourier table.
pub const FOURIER_SAMPLES: usize = 1024;
/// Largest `|G|_inf` stored in the cached Fourier table.
pub const FOURIER_GMAX: i32 = 32;

/// Geometry of the coefficient inside one cell, in cell coordinates `y = x / eps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Geometry {
    Constant {
        value: f64,
    },
    /// Circular inclusion with a smoothstep radial transition of width `mollify`.
    Rod {
        center: [f64; 2],
        radius: f64,
        a_inside: f64,
        a_outside: f64,
        #[serde(default = "default_mollify")]
        mollify: f64,
    },
    /// Layers with normal `normal` (integer lattice vector); `fill` is the
    /// fraction of each period occupied by `a_inside`.
    Laminate {
        normal: [i32; 2],
        fill: f64,
        a_inside: f64,
        a_outside: f64,
        #[serde(default = "default_mollify")]
        mollify: f64,
    },
    /// `n x n` cell-centered samples, row index along `x1`; bilinear periodic interpolation.
    Grid {
        n: usize,
        values: Vec<f64>,
    },
}

fn default_mollify() -> f64 {
    0.05
}

#[inline]
pub(crate) fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

#[inline]
fn blend(a_inside: f64, a_outside: f64, t: f64) -> f64 {
    if t <= 0.0 {
        a_inside
    } else if t >= 1.0 {
        a_outside
    } else {
        a_inside + (a_outside - a_inside) * t
    }
}

#[inline]
fn wrap_half(d: f64) -> f64 {
    d - d.round()
}

/// Dense table of Fourier coefficients `a_hat(G)` for `|G|_inf <= gmax`.
#[derive(Clone, Debug)]
pub struct FourierTable {
    gmax: i32,
    data: Vec<Complex64>,
}

impl FourierTable {
    pub fn gmax(&self) -> i32 {
        self.gmax
    }

    #[inline]
    pub fn get(&self, g1: i32, g2: i32) -> Option<Complex64> {
        if g1.abs() > self.gmax || g2.abs() > self.gmax {
            return None;
        }
        let w = (2 * self.gmax + 1) as usize;
        Some(self.data[(g1 + self.gmax) as usize * w + (g2 + self.gmax) as usize])
    }

    /// Coefficient of the constant field `value`.
    pub fn constant(value: f64, gmax: i32) -> Self {
        let w = (2 * gmax + 1) as usize;
        let mut data = vec![Complex64::new(0.0, 0.0); w * w];
        data[gmax as usize * w + gmax as usize] = Complex64::new(value, 0.0);
        FourierTable { gmax, data }
    }

    fn truncate(&self, gmax: i32) -> Self {
        let w = (2 * gmax + 1) as usize;
        let mut data = Vec::with_capacity(w * w);
        for g1 in -gmax..=gmax {
            for g2 in -gmax..=gmax {
                data.push(self.get(g1, g2).unwrap());
            }
        }
        FourierTable { gmax, data }
    }

    /// Iterates `(G, a_hat(G))`.
    pub fn iter(&self) -> impl Iterator<Item = ([i32; 2], Complex64)> + '_ {
        let g = self.gmax;
        let w = (2 * g + 1) as usize;
        self.data
            .iter()
            .enumerate()
            .map(move |(i, &v)| ([(i / w) as i32 - g, (i % w) as i32 - g], v))
    }
}

/// Cell-centered sampling grid with `n` points per side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellGrid {
    pub n: usize,
}

impl CellGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::Grid(format!(
                "cell grid size {n} must be a power of two"
            )));
        }
        Ok(CellGrid { n })
    }

    /// Cell-centered location of sample `(i1, i2)` in physical units.
    pub fn point(&self, i1: usize, i2: usize, epsilon: f64) -> [f64; 2] {
        let h = epsilon / self.n as f64;
        [(i1 as f64 + 0.5) * h, (i2 as f64 + 0.5) * h]
    }
}

/// Periodic coefficient field with cached spectral data.
#[derive(Clone, Debug)]
pub struct CoefficientField {
    epsilon: f64,
    geometry: Geometry,
    a_min: f64,
    a_max: f64,
    table: Arc<OnceLock<FourierTable>>,
}

impl CoefficientField {
    pub fn new(epsilon: f64, geometry: Geometry) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Validation(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        let (a_min, a_max) = validate_geometry(&geometry)?;
        Ok(CoefficientField {
            epsilon,
            geometry,
            a_min,
            a_max,
            table: Arc::new(OnceLock::new()),
        })
    }

    /// The free-space branch `a = 1`.
    pub fn free_space(epsilon: f64) -> Self {
        Self::new(epsilon, Geometry::Constant { value: 1.0 }).expect("unit field is valid")
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn a_min(&self) -> f64 {
        self.a_min
    }

    pub fn a_max(&self) -> f64 {
        self.a_max
    }

    /// `Some(c)` when the field is the constant `c`.
    pub fn constant_value(&self) -> Option<f64> {
        match self.geometry {
            Geometry::Constant { value } => Some(value),
            _ => None,
        }
    }

    /// Value at cell coordinates `y` (periodic with period 1 in each direction).
    pub fn value_at_cell(&self, y: [f64; 2]) -> f64 {
        let y = [y[0].rem_euclid(1.0), y[1].rem_euclid(1.0)];
        match &self.geometry {
            Geometry::Constant { value } => *value,
            Geometry::Rod {
                center,
                radius,
                a_inside,
                a_outside,
                mollify,
            } => {
                let d1 = wrap_half(y[0] - center[0]);
                let d2 = wrap_half(y[1] - center[1]);
                let r = (d1 * d1 + d2 * d2).sqrt();
                let t = if *mollify > 0.0 {
                    smoothstep((r - radius) / mollify + 0.5)
                } else if r < *radius {
                    0.0
                } else {
                    1.0
                };
                blend(*a_inside, *a_outside, t)
            }
            Geometry::Laminate {
                normal,
                fill,
                a_inside,
                a_outside,
                mollify,
            } => {
                let len = ((normal[0] * normal[0] + normal[1] * normal[1]) as f64).sqrt();
                let s = (normal[0] as f64 * y[0] + normal[1] as f64 * y[1]).rem_euclid(1.0);
                let d = (s - 0.5).abs() - 0.5 * fill;
                let t = if *mollify > 0.0 {
                    smoothstep(d / (len * mollify) + 0.5)
                } else if d < 0.0 {
                    0.0
                } else {
                    1.0
                };
                blend(*a_inside, *a_outside, t)
            }
            Geometry::Grid { n, values } => {
                let n = *n;
                let p1 = y[0] * n as f64 - 0.5;
                let p2 = y[1] * n as f64 - 0.5;
                let f1 = p1.floor();
                let f2 = p2.floor();
                let t1 = p1 - f1;
                let t2 = p2 - f2;
                let i0 = (f1 as i64).rem_euclid(n as i64) as usize;
                let j0 = (f2 as i64).rem_euclid(n as i64) as usize;
                let i1 = (i0 + 1) % n;
                let j1 = (j0 + 1) % n;
                let v = |i: usize, j: usize| values[i * n + j];
                (1.0 - t1) * ((1.0 - t2) * v(i0, j0) + t2 * v(i0, j1))
                    + t1 * ((1.0 - t2) * v(i1, j0) + t2 * v(i1, j1))
            }
        }
    }

    /// Value at physical position `x`.
    #[inline]
    pub fn value_at(&self, x: [f64; 2]) -> f64 {
        self.value_at_cell([x[0] / self.epsilon, x[1] / self.epsilon])
    }

    /// Pointwise evaluation at the cell centers of `grid`, row index along `x1`.
    pub fn sample_on_grid(&self, grid: CellGrid) -> Vec<f64> {
        let n = grid.n;
        let mut out = Vec::with_capacity(n * n);
        for i1 in 0..n {
            for i2 in 0..n {
                out.push(
                    self.value_at_cell([
                        (i1 as f64 + 0.5) / n as f64,
                        (i2 as f64 + 0.5) / n as f64,
                    ]),
                );
            }
        }
        out
    }

    /// The cached table with `|G|_inf <= FOURIER_GMAX`.
    pub fn fourier_table(&self) -> &FourierTable {
        self.table.get_or_init(|| match self.constant_value() {
            Some(c) => FourierTable::constant(c, FOURIER_GMAX),
            None => compute_table(self, FOURIER_SAMPLES, FOURIER_GMAX),
        })
    }

    /// `a_hat(G)` for `|G|_inf <= 2 * cutoff`.
    pub fn fourier_coefficients(&self, cutoff: usize) -> Result<FourierTable> {
        if cutoff == 0 {
            return Err(Error::Validation("cutoff must be at least 1".into()));
        }
        let g = 2 * cutoff as i32;
        if g > FOURIER_GMAX {
            return Err(Error::Validation(format!(
                "cutoff {cutoff} exceeds the supported maximum {}",
                FOURIER_GMAX / 2
            )));
        }
        Ok(self.fourier_table().truncate(g))
    }
}

/// Midpoint quadrature of `a(y) exp(-2 pi i G.y)` on an `n x n` cell-centered grid.
pub(crate) fn compute_table(field: &CoefficientField, n: usize, gmax: i32) -> FourierTable {
    let exec = Execution::default();
    let samples = field.sample_on_grid(CellGrid { n });
    let mut data: Vec<Complex64> = samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft::fft2(exec, &mut data, n, n, false);
    let norm = 1.0 / (n * n) as f64;
    let w = (2 * gmax + 1) as usize;
    let mut raw = vec![Complex64::new(0.0, 0.0); w * w];
    for g1 in -gmax..=gmax {
        for g2 in -gmax..=gmax {
            let k = fft::bin(g1 as i64, n) * n + fft::bin(g2 as i64, n);
            let phase = Complex64::from_polar(1.0, -PI * (g1 + g2) as f64 / n as f64);
            raw[(g1 + gmax) as usize * w + (g2 + gmax) as usize] = data[k] * phase * norm;
        }
    }
    // a is real: enforce exact conjugate symmetry
    let mut out = raw.clone();
    for g1 in -gmax..=gmax {
        for g2 in -gmax..=gmax {
            let i = (g1 + gmax) as usize * w + (g2 + gmax) as usize;
            let m = (gmax - g1) as usize * w + (gmax - g2) as usize;
            out[i] = 0.5 * (raw[i] + raw[m].conj());
        }
    }
    FourierTable { gmax, data: out }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "{name} must be positive, got {v}"
        )))
    }
}

fn validate_geometry(g: &Geometry) -> Result<(f64, f64)> {
    match g {
        Geometry::Constant { value } => {
            positive("value", *value)?;
            Ok((*value, *value))
        }
        Geometry::Rod {
            center,
            radius,
            a_inside,
            a_outside,
            mollify,
        } => {
            positive("a_inside", *a_inside)?;
            positive("a_outside", *a_outside)?;
            if !(center[0].is_finite() && center[1].is_finite()) {
                return Err(Error::Validation("rod center must be finite".into()));
            }
            if !(*radius > 0.0 && *radius < 0.5) {
                return Err(Error::Validation(format!(
                    "rod radius must lie in (0, 1/2), got {radius}"
                )));
            }
            if !(*mollify >= 0.0 && *mollify < 2.0 * radius && radius + 0.5 * mollify < 0.5) {
                return Err(Error::Validation(format!(
                    "mollify width {mollify} incompatible with radius {radius}"
                )));
            }
            Ok((a_inside.min(*a_outside), a_inside.max(*a_outside)))
        }
        Geometry::Laminate {
            normal,
            fill,
            a_inside,
            a_outside,
            mollify,
        } => {
            positive("a_inside", *a_inside)?;
            positive("a_outside", *a_outside)?;
            if normal[0] == 0 && normal[1] == 0 {
                return Err(Error::Validation("laminate normal must be nonzero".into()));
            }
            let len = ((normal[0] * normal[0] + normal[1] * normal[1]) as f64).sqrt();
            if !(*fill > 0.0 && *fill < 1.0) {
                return Err(Error::Validation(format!(
                    "laminate fill must lie in (0, 1), got {fill}"
                )));
            }
            if !(*mollify >= 0.0 && len * mollify < fill.min(1.0 - fill)) {
                return Err(Error::Validation(format!(
                    "mollify width {mollify} too large for fill {fill}"
                )));
            }
            Ok((a_inside.min(*a_outside), a_inside.max(*a_outside)))
        }
        Geometry::Grid { n, values } => {
            if *n == 0 || values.len() != n * n {
                return Err(Error::Validation(format!(
                    "grid geometry expects {n}x{n} values, got {}",
                    values.len()
                )));
            }
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &v in values {
                positive("grid value", v)?;
                lo = lo.min(v);
                hi = hi.max(v);
            }
            Ok((lo, hi))
        }
    }
}
