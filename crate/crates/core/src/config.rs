//! Run configuration: one JSON document, unknown keys rejected, all violations collected.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

use crate::cell_model::{CoefficientField, Geometry};
use crate::error::{Error, Result};
use crate::flux::FaceAverage;
use crate::radiation::{CutoffFlavor, SupportTolerances};
use crate::solver::{ScatterConfig, Sponge, VerticalReduction};

fn one() -> f64 {
    1.0
}

/// Mollified low-coefficient rod.
pub fn default_geometry() -> Geometry {
    Geometry::Rod {
        center: [0.5, 0.5],
        radius: 0.3,
        a_inside: 0.5,
        a_outside: 1.0,
        mollify: 0.1,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Frequencies {
    /// Defaults to `2 pi |k|`.
    #[serde(default)]
    pub omega: Option<f64>,
    pub k: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Discretization {
    #[serde(rename = "N_c")]
    pub n_c: usize,
    pub n_cell: usize,
    pub grid_n: usize,
    #[serde(rename = "M")]
    pub m: usize,
}

impl Default for Discretization {
    fn default() -> Self {
        Discretization {
            n_c: 7,
            n_cell: 16,
            grid_n: 32,
            m: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadiationTolerances {
    /// Poynting tolerance of the outgoing metrics, relative to `2 pi / eps`.
    pub tol_p: f64,
    /// Outgoing condition threshold on the mass fraction at the largest `R`.
    pub threshold: f64,
    pub tol_freq: f64,
    /// `None` means half a bin, `1/(2R)`.
    pub tol_vert: Option<f64>,
    pub tol_p_rel: f64,
}

impl RadiationTolerances {
    pub fn support(&self) -> SupportTolerances {
        SupportTolerances {
            tol_freq: self.tol_freq,
            tol_vert: self.tol_vert,
            tol_p_rel: self.tol_p_rel,
        }
    }
}

impl Default for RadiationTolerances {
    fn default() -> Self {
        let s = SupportTolerances::default();
        RadiationTolerances {
            tol_p: 1e-9,
            threshold: 1e-2,
            tol_freq: s.tol_freq,
            tol_vert: s.tol_vert,
            tol_p_rel: s.tol_p_rel,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadiationSection {
    /// Defaults to `{K, 2K, 4K, 8K}`.
    #[serde(rename = "R_sequence")]
    pub r_sequence: Option<Vec<usize>>,
    pub tolerances: RadiationTolerances,
    pub cutoff: CutoffFlavor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    #[serde(rename = "K")]
    pub k_cells: usize,
    /// Defaults to `+-(2 R_max + sponge width) eps`.
    pub extent: Option<[f64; 2]>,
    pub sponge: Sponge,
    /// Defaults to `-eps`.
    pub tfsf_plane: Option<f64>,
    pub face_average: FaceAverage,
    pub vertical: VerticalReduction,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            k_cells: 8,
            extent: None,
            sponge: Sponge::default(),
            tfsf_plane: None,
            face_average: FaceAverage::Arithmetic,
            vertical: VerticalReduction::Floquet,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldFormat {
    Bin,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: String,
    /// Field dump formats; JSON and CSV reports are always written.
    pub formats: Vec<FieldFormat>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: "out".into(),
            formats: vec![FieldFormat::Bin],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "one")]
    pub epsilon: f64,
    #[serde(default = "default_geometry")]
    pub geometry: Geometry,
    pub frequencies: Frequencies,
    #[serde(default)]
    pub discretization: Discretization,
    #[serde(default)]
    pub radiation: RadiationSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    pub fn omega(&self) -> f64 {
        let k = self.frequencies.k;
        self.frequencies
            .omega
            .unwrap_or(2.0 * PI * (k[0] * k[0] + k[1] * k[1]).sqrt())
    }

    pub fn r_sequence(&self) -> Vec<usize> {
        let k = self.solver.k_cells;
        self.radiation
            .r_sequence
            .clone()
            .unwrap_or_else(|| vec![k, 2 * k, 4 * k, 8 * k])
    }

    pub fn r_max(&self) -> usize {
        self.r_sequence().into_iter().max().unwrap_or(0)
    }

    pub fn crystal(&self) -> Result<CoefficientField> {
        CoefficientField::new(self.epsilon, self.geometry.clone())
    }

    /// Poynting tolerance in absolute units.
    pub fn tol_p(&self) -> f64 {
        self.radiation.tolerances.tol_p * 2.0 * PI / self.epsilon
    }

    pub fn scatter(&self) -> ScatterConfig {
        let s = &self.solver;
        let r_max = self.r_max();
        let reach = (2 * r_max) as f64 * self.epsilon + s.sponge.width * self.epsilon;
        ScatterConfig {
            omega: self.omega(),
            k: self.frequencies.k,
            epsilon: self.epsilon,
            k_cells: s.k_cells,
            extent: s.extent.unwrap_or([-reach, reach]),
            n_cell: self.discretization.n_cell,
            sponge: s.sponge,
            tfsf_plane: s.tfsf_plane.unwrap_or(-self.epsilon),
            face_average: s.face_average,
            vertical: s.vertical,
            r_max: Some(r_max),
        }
    }

    /// Every violated constraint, as `section.field: message`.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if let Err(e) = self.crystal() {
            v.push(format!("geometry: {e}"));
        }
        let d = &self.discretization;
        if d.n_c == 0 {
            v.push("discretization.N_c: must be at least 1".into());
        }
        if d.n_cell < 2 * d.n_c + 2 {
            v.push(format!(
                "discretization.n_cell: {} cannot resolve N_c = {}; need at least {}",
                d.n_cell,
                d.n_c,
                2 * d.n_c + 2
            ));
        }
        if d.grid_n < 8 {
            v.push(format!("discretization.grid_n: {} is below 8", d.grid_n));
        }
        if d.m == 0 {
            v.push("discretization.M: must be at least 1".into());
        }
        let rs = self.r_sequence();
        if rs.len() < 2 {
            v.push("radiation.R_sequence: needs at least two values".into());
        }
        for r in &rs {
            if *r < 2 || self.solver.k_cells == 0 || r % self.solver.k_cells != 0 {
                v.push(format!(
                    "radiation.R_sequence: {r} is not a multiple of K = {} (and at least 2)",
                    self.solver.k_cells
                ));
            }
        }
        if rs.windows(2).any(|w| w[1] <= w[0]) {
            v.push("radiation.R_sequence: must be increasing".into());
        }
        let t = &self.radiation.tolerances;
        if !(t.tol_p >= 0.0 && t.threshold > 0.0 && t.tol_freq > 0.0 && t.tol_p_rel >= 0.0) {
            v.push(
                "radiation.tolerances: must be nonnegative (threshold and tol_freq positive)"
                    .into(),
            );
        }
        if self.output.directory.is_empty() {
            v.push("output.directory: must not be empty".into());
        }
        for s in self.scatter().violations() {
            let (field, msg) = s.split_once(": ").unwrap_or(("", s.as_str()));
            let path = match field {
                "omega" => "frequencies.omega",
                "k" => "frequencies.k",
                "epsilon" => "epsilon",
                "k_cells" => "solver.K",
                "n_cell" => "discretization.n_cell",
                "extent" => "solver.extent",
                "tfsf_plane" => "solver.tfsf_plane",
                "sponge" => "solver.sponge",
                _ => "solver",
            };
            v.push(format!("{path}: {msg}"));
        }
        v
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            Error::Config(format!(
                "parse error at line {}, column {}: {e}",
                e.line(),
                e.column()
            ))
        })?;
        let v = cfg.violations();
        if v.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(v.join("\n")))
        }
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    RunConfig::from_json(&text)
}
