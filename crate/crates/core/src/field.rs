//! Sampled complex fields on the strip and on analysis boxes.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Complex samples on `(x_lo, x_lo + n1 * dx) x (0, K eps)` at cell centers,
/// `dx = eps / n_cell`, stored column by column (`i1 * n2 + i2`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldStrip {
    pub x_lo: f64,
    pub epsilon: f64,
    pub n_cell: usize,
    pub k_cells: usize,
    pub n1: usize,
    pub samples: Vec<Complex64>,
}

impl FieldStrip {
    pub fn new(
        x_lo: f64,
        epsilon: f64,
        n_cell: usize,
        k_cells: usize,
        n1: usize,
        samples: Vec<Complex64>,
    ) -> Result<Self> {
        if n_cell == 0 || k_cells == 0 {
            return Err(Error::Grid("n_cell and K must be positive".into()));
        }
        if samples.len() != n1 * n_cell * k_cells {
            return Err(Error::Grid(format!(
                "strip expects {} samples, got {}",
                n1 * n_cell * k_cells,
                samples.len()
            )));
        }
        Ok(FieldStrip {
            x_lo,
            epsilon,
            n_cell,
            k_cells,
            n1,
            samples,
        })
    }

    pub fn from_fn(
        x_lo: f64,
        epsilon: f64,
        n_cell: usize,
        k_cells: usize,
        n1: usize,
        f: impl Fn([f64; 2]) -> Complex64,
    ) -> Self {
        let n2 = n_cell * k_cells;
        let dx = epsilon / n_cell as f64;
        let mut samples = Vec::with_capacity(n1 * n2);
        for i1 in 0..n1 {
            for i2 in 0..n2 {
                samples.push(f([x_lo + (i1 as f64 + 0.5) * dx, (i2 as f64 + 0.5) * dx]));
            }
        }
        FieldStrip {
            x_lo,
            epsilon,
            n_cell,
            k_cells,
            n1,
            samples,
        }
    }

    #[inline]
    pub fn n2(&self) -> usize {
        self.n_cell * self.k_cells
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        self.epsilon / self.n_cell as f64
    }

    pub fn height(&self) -> f64 {
        self.epsilon * self.k_cells as f64
    }

    pub fn x_hi(&self) -> f64 {
        self.x_lo + self.n1 as f64 * self.spacing()
    }

    #[inline]
    pub fn x1(&self, i1: usize) -> f64 {
        self.x_lo + (i1 as f64 + 0.5) * self.spacing()
    }

    #[inline]
    pub fn x2(&self, i2: usize) -> f64 {
        (i2 as f64 + 0.5) * self.spacing()
    }

    #[inline]
    pub fn get(&self, i1: usize, i2: usize) -> Complex64 {
        self.samples[i1 * self.n2() + i2]
    }

    pub fn column(&self, i1: usize) -> &[Complex64] {
        let n2 = self.n2();
        &self.samples[i1 * n2..(i1 + 1) * n2]
    }

    /// Column index whose left face sits at `x`, which must be on the grid.
    pub fn face_index(&self, x: f64) -> Option<usize> {
        let t = (x - self.x_lo) / self.spacing();
        let r = t.round();
        if (t - r).abs() > 1e-9 || r < 0.0 || r > self.n1 as f64 {
            return None;
        }
        Some(r as usize)
    }

    pub fn same_grid(&self, other: &FieldStrip) -> bool {
        self.n1 == other.n1
            && self.n_cell == other.n_cell
            && self.k_cells == other.k_cells
            && (self.x_lo - other.x_lo).abs() <= 1e-12 * self.epsilon
            && (self.epsilon - other.epsilon).abs() <= 1e-15 * self.epsilon
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Complex samples on the box `W_R = (0, R eps)^2` at cell centers (`i1 * n + i2`).
/// The optional halo holds the columns just left and right of the box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxField {
    pub r: usize,
    pub epsilon: f64,
    pub n_cell: usize,
    pub samples: Vec<Complex64>,
    pub halo: Option<[Vec<Complex64>; 2]>,
}

impl BoxField {
    pub fn new(r: usize, epsilon: f64, n_cell: usize, samples: Vec<Complex64>) -> Result<Self> {
        let n = r * n_cell;
        if r == 0 || n_cell == 0 || samples.len() != n * n {
            return Err(Error::Grid(format!(
                "box R={r}, n_cell={n_cell} expects {} samples, got {}",
                n * n,
                samples.len()
            )));
        }
        Ok(BoxField {
            r,
            epsilon,
            n_cell,
            samples,
            halo: None,
        })
    }

    pub fn zeros(r: usize, epsilon: f64, n_cell: usize) -> Self {
        let n = r * n_cell;
        BoxField {
            r,
            epsilon,
            n_cell,
            samples: vec![Complex64::new(0.0, 0.0); n * n],
            halo: None,
        }
    }

    pub fn from_fn(
        r: usize,
        epsilon: f64,
        n_cell: usize,
        f: impl Fn([f64; 2]) -> Complex64,
    ) -> Self {
        let n = r * n_cell;
        let dx = epsilon / n_cell as f64;
        let mut samples = Vec::with_capacity(n * n);
        for i1 in 0..n {
            for i2 in 0..n {
                samples.push(f([(i1 as f64 + 0.5) * dx, (i2 as f64 + 0.5) * dx]));
            }
        }
        BoxField {
            r,
            epsilon,
            n_cell,
            samples,
            halo: None,
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.r * self.n_cell
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        self.epsilon / self.n_cell as f64
    }

    pub fn point(&self, i1: usize, i2: usize) -> [f64; 2] {
        let dx = self.spacing();
        [(i1 as f64 + 0.5) * dx, (i2 as f64 + 0.5) * dx]
    }

    pub fn check_same_grid(&self, other: &BoxField) -> Result<()> {
        if self.r != other.r
            || self.n_cell != other.n_cell
            || (self.epsilon - other.epsilon).abs() > 1e-15 * self.epsilon
        {
            return Err(Error::Dimension(format!(
                "box grids differ: (R={}, n_cell={}) vs (R={}, n_cell={})",
                self.r, self.n_cell, other.r, other.n_cell
            )));
        }
        Ok(())
    }

    /// `(1/|W_R|) int |w|^2`.
    pub fn mean_sq(&self) -> f64 {
        self.samples.iter().map(|v| v.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }

    /// Weighted inner product `<v, w>_R = (1/|W_R|) int v conj(w)`.
    pub fn inner(&self, other: &BoxField) -> Result<Complex64> {
        self.check_same_grid(other)?;
        let s: Complex64 = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a * b.conj())
            .sum();
        Ok(s / self.samples.len() as f64)
    }

    /// Pointwise product with a real profile on the same grid; the halo is dropped.
    pub fn scaled(&self, profile: &[f64]) -> BoxField {
        assert_eq!(profile.len(), self.samples.len());
        BoxField {
            r: self.r,
            epsilon: self.epsilon,
            n_cell: self.n_cell,
            samples: self
                .samples
                .iter()
                .zip(profile)
                .map(|(v, p)| v * p)
                .collect(),
            halo: None,
        }
    }

    pub fn sub(&self, other: &BoxField) -> Result<BoxField> {
        self.check_same_grid(other)?;
        let halo = match (&self.halo, &other.halo) {
            (Some(a), Some(b)) => Some([
                a[0].iter().zip(&b[0]).map(|(x, y)| x - y).collect(),
                a[1].iter().zip(&b[1]).map(|(x, y)| x - y).collect(),
            ]),
            _ => None,
        };
        Ok(BoxField {
            r: self.r,
            epsilon: self.epsilon,
            n_cell: self.n_cell,
            samples: self
                .samples
                .iter()
                .zip(&other.samples)
                .map(|(a, b)| a - b)
                .collect(),
            halo,
        })
    }
}
