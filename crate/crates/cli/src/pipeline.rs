//! Stages shared by the single commands and by `full`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use bloch_strip::bloch_core::{
    band_values, check_frequency_smallness, group_velocity, isofrequency_contour, FieldSampler,
    Side, SmallnessCheck,
};
use bloch_strip::cell_model::CoefficientField;
use bloch_strip::config::{FieldFormat, RunConfig};
use bloch_strip::exec::{map_range, Execution};
use bloch_strip::field::FieldStrip;
use bloch_strip::flux::classify_index;
use bloch_strip::io::{read_field, write_field_bin, write_field_csv};
use bloch_strip::radiation::{
    bloch_measures, energy_balance, measure_support_report, radiation_report, Atom,
    DiscreteBlochMeasure, EnergyBalance, RadiationContext, RadiationReport, SupportReport,
};
use bloch_strip::solver::{difference_solution, incident_field, solve_scattering, Medium};
use bloch_strip::transform::BlochCoefficients;
use bloch_strip::transmission::{
    refraction_report, transmitted_modes, validate_against_field, FieldValidation, ScanOptions,
    TransmissionPrediction, TransmittedModes,
};
use bloch_strip::{Error, Result};

use crate::artifacts::{num, OutDir};

/// A failed stage; the name ends up in `FAILED.json`.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

pub type StageResult<T> = std::result::Result<T, StageError>;

pub trait StageContext<T> {
    fn stage(self, name: &'static str) -> StageResult<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, name: &'static str) -> StageResult<T> {
        self.map_err(|error| StageError { stage: name, error })
    }
}

fn sides(side: Option<Side>) -> Vec<Side> {
    match side {
        Some(s) => vec![s],
        None => vec![Side::Plus, Side::Minus],
    }
}

pub struct Session {
    pub cfg: RunConfig,
    pub config_sha256: String,
    pub out: OutDir,
    pub exec: Execution,
    pub threads: usize,
    pub seed: Option<u64>,
    pub timings: BTreeMap<String, f64>,
    pub headline: serde_json::Map<String, Value>,
    crystal: CoefficientField,
    free: CoefficientField,
    ctx: Option<RadiationContext>,
    field: Option<FieldStrip>,
    /// Analysis-side field per side: `u` on the right, `u - U_inc` on the left.
    coeffs: BTreeMap<(u8, usize), BlochCoefficients>,
    prediction: Option<TransmissionPrediction>,
}

fn side_key(s: Side) -> u8 {
    match s {
        Side::Plus => 0,
        Side::Minus => 1,
    }
}

impl Session {
    pub fn new(
        cfg: RunConfig,
        config_sha256: String,
        out: OutDir,
        exec: Execution,
        threads: usize,
        seed: Option<u64>,
    ) -> Result<Self> {
        let crystal = cfg.crystal()?;
        Ok(Session {
            cfg,
            config_sha256,
            out,
            exec,
            threads,
            seed,
            timings: BTreeMap::new(),
            headline: serde_json::Map::new(),
            free: CoefficientField::free_space(crystal.epsilon()),
            crystal,
            ctx: None,
            field: None,
            coeffs: BTreeMap::new(),
            prediction: None,
        })
    }

    fn field_of(&self, side: Side) -> &CoefficientField {
        match side {
            Side::Plus => &self.crystal,
            Side::Minus => &self.free,
        }
    }

    fn context(&mut self) -> &RadiationContext {
        if self.ctx.is_none() {
            let d = &self.cfg.discretization;
            let mut ctx = RadiationContext::new(
                self.crystal.clone(),
                d.n_c,
                d.m,
                self.cfg.tol_p(),
                self.cfg.radiation.cutoff,
            );
            ctx.exec = self.exec;
            self.ctx = Some(ctx);
        }
        self.ctx.as_ref().unwrap()
    }

    fn time<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        let t = Instant::now();
        let v = f(self);
        *self.timings.entry(name.to_string()).or_insert(0.0) += t.elapsed().as_secs_f64();
        v
    }

    /// The solver field: in memory after `simulate`, else read from `path` or the output directory.
    fn load_field(&mut self, path: Option<&Path>) -> Result<()> {
        if self.field.is_some() && path.is_none() {
            return Ok(());
        }
        let p: PathBuf = match path {
            Some(p) => p.to_path_buf(),
            None => {
                let bin = self.out.path("field.bin");
                if bin.exists() {
                    bin
                } else {
                    self.out.path("field.csv")
                }
            }
        };
        if !p.exists() {
            return Err(Error::Validation(format!(
                "no field dump at {}; run simulate first or pass --field",
                p.display()
            )));
        }
        let u = read_field(&p)?;
        let s = self.cfg.scatter();
        if (u.epsilon - s.epsilon).abs() > 1e-12 || u.n_cell != s.n_cell || u.k_cells != s.k_cells {
            return Err(Error::Validation(format!(
                "{}: field grid (eps {}, n_cell {}, K {}) does not match the configuration",
                p.display(),
                u.epsilon,
                u.n_cell,
                u.k_cells
            )));
        }
        self.field = Some(u);
        self.coeffs.clear();
        Ok(())
    }

    fn analysis_field(&self, side: Side) -> Result<FieldStrip> {
        let u = self.field.as_ref().expect("field loaded");
        match side {
            Side::Plus => Ok(u.clone()),
            Side::Minus => {
                let inc = incident_field(&self.cfg.scatter())?;
                if !inc.same_grid(u) {
                    return Err(Error::Validation(
                        "field dump does not cover the configured strip".into(),
                    ));
                }
                difference_solution(u, &inc)
            }
        }
    }

    /// Bloch coefficients of all configured boxes of one side, computed once.
    fn side_coefficients(&mut self, side: Side) -> Result<RadiationReport> {
        let rs = self.cfg.r_sequence();
        let w = self.analysis_field(side)?;
        let threshold = self.cfg.radiation.tolerances.threshold;
        let (report, cs) = radiation_report(self.context(), &w, side, &rs, threshold)?;
        for (r, c) in rs.iter().zip(cs) {
            self.coeffs.insert((side_key(side), *r), c);
        }
        Ok(report)
    }

    fn coefficients(&mut self, side: Side) -> Result<Vec<&BlochCoefficients>> {
        let rs = self.cfg.r_sequence();
        if rs
            .iter()
            .any(|r| !self.coeffs.contains_key(&(side_key(side), *r)))
        {
            self.side_coefficients(side)?;
        }
        Ok(rs
            .iter()
            .map(|r| &self.coeffs[&(side_key(side), *r)])
            .collect())
    }

    fn smallness(&mut self) -> Result<SmallnessCheck> {
        let d = &self.cfg.discretization;
        check_frequency_smallness(&self.crystal, self.cfg.omega(), d.n_c, d.grid_n, self.exec)
    }

    pub fn bands(&mut self, side: Option<Side>) -> StageResult<()> {
        let d = self.cfg.discretization.clone();
        let n = d.grid_n;
        let mut rows = Vec::new();
        for s in sides(side) {
            let field = self.field_of(s).clone();
            let vals = self.time("bands", |me| {
                map_range(me.exec, n * n, |i| {
                    let j = [(i / n) as f64 / n as f64, (i % n) as f64 / n as f64];
                    band_values(&field, j, d.m, d.n_c).map(|v| (j, v))
                })
            });
            for v in vals {
                let (j, mus) = v.stage("bands")?;
                for (m, mu) in mus.iter().enumerate() {
                    rows.push(vec![
                        num(j[0]),
                        num(j[1]),
                        m.to_string(),
                        num(*mu),
                        s.to_string(),
                    ]);
                }
            }
        }
        self.out
            .write_csv("bands.csv", &["j1", "j2", "m", "mu", "side"], &rows)
            .stage("bands")
    }

    pub fn isofreq(&mut self, side: Option<Side>) -> StageResult<()> {
        let d = self.cfg.discretization.clone();
        let omega_sq = self.cfg.omega().powi(2);
        let mut lines = Vec::new();
        let mut arrows = Vec::new();
        let mut id = 0usize;
        for s in sides(side) {
            let field = self.field_of(s).clone();
            for m in 0..d.m {
                let sampler = FieldSampler {
                    field: field.clone(),
                    cutoff: d.n_c,
                };
                let polys = self.time("isofreq", |me| {
                    isofrequency_contour(&sampler, m, omega_sq, d.grid_n, me.exec)
                });
                for poly in polys {
                    let grads = self.time("isofreq", |me| {
                        map_range(me.exec, poly.points.len(), |i| {
                            group_velocity(&field, poly.points[i], m, d.n_c)
                        })
                    });
                    for (i, (p, g)) in poly.points.iter().zip(grads).enumerate() {
                        let g = g.stage("isofreq")?;
                        let head = [
                            id.to_string(),
                            s.to_string(),
                            m.to_string(),
                            i.to_string(),
                            num(p[0]),
                            num(p[1]),
                        ];
                        let mut l = head.to_vec();
                        l.push(poly.closed.to_string());
                        lines.push(l);
                        let mut a = head.to_vec();
                        a.extend([num(g.grad[0]), num(g.grad[1])]);
                        arrows.push(a);
                    }
                    id += 1;
                }
            }
        }
        self.out
            .write_csv(
                "isofreq.csv",
                &["contour", "side", "m", "index", "j1", "j2", "closed"],
                &lines,
            )
            .stage("isofreq")?;
        self.out
            .write_csv(
                "group_velocity.csv",
                &["contour", "side", "m", "index", "j1", "j2", "g1", "g2"],
                &arrows,
            )
            .stage("isofreq")
    }

    pub fn poynting(&mut self, side: Option<Side>) -> StageResult<()> {
        let d = self.cfg.discretization.clone();
        let n = d.grid_n;
        let tol = self.cfg.tol_p();
        let mut rows = Vec::new();
        for s in sides(side) {
            let sets = self.time("poynting", |me| {
                let exec = me.exec;
                let basis = me.context().basis(s);
                map_range(exec, n * n, |i| {
                    basis.modes([(i / n) as f64 / n as f64, (i % n) as f64 / n as f64], d.m)
                })
            });
            for set in sets {
                let set = set.stage("poynting")?;
                for m in 0..d.m {
                    let p = set.poynting[m];
                    rows.push(vec![
                        num(set.j[0]),
                        num(set.j[1]),
                        m.to_string(),
                        s.to_string(),
                        num(set.mus[m]),
                        num(p),
                        classify_index(p, tol).as_str().to_string(),
                    ]);
                }
            }
        }
        self.out
            .write_csv(
                "poynting.csv",
                &["j1", "j2", "m", "side", "mu", "P", "classification"],
                &rows,
            )
            .stage("poynting")
    }

    pub fn simulate(&mut self) -> StageResult<()> {
        let scfg = self.cfg.scatter();
        let medium = Medium {
            crystal: self.crystal.clone(),
        };
        let sol = self
            .time("simulate", |me| solve_scattering(&scfg, &medium, me.exec))
            .stage("simulate")?;
        self.timings
            .insert("simulate.assemble".into(), sol.assemble_seconds);
        self.timings
            .insert("simulate.solve".into(), sol.solve_seconds);
        for f in self.cfg.output.formats.clone() {
            match f {
                FieldFormat::Bin => write_field_bin(&self.out.record("field.bin"), &sol.u),
                FieldFormat::Csv => write_field_csv(&self.out.record("field.csv"), &sol.u),
            }
            .stage("simulate")?;
        }
        let smallness = self.smallness().stage("simulate")?;
        let inc = incident_field(&scfg).stage("simulate")?;
        let energy: Vec<EnergyBalance> = self
            .cfg
            .r_sequence()
            .iter()
            .filter_map(|&r| {
                energy_balance(&sol.u, r, &self.crystal, scfg.face_average, Some(&inc)).ok()
            })
            .collect();
        let report = json!({
            "grid": {
                "x_lo": sol.u.x_lo,
                "x_hi": sol.u.x_hi(),
                "spacing": sol.u.spacing(),
                "n1": sol.u.n1,
                "n2": sol.u.n2(),
                "n_cell": sol.u.n_cell,
                "K": sol.u.k_cells,
                "epsilon": sol.u.epsilon,
            },
            "scatter": scfg,
            "k1_discrete": sol.k1_discrete,
            "residual": sol.residual,
            "pivot_ratio": sol.pivot_ratio,
            "energy_balance": energy,
            "smallness": smallness,
        });
        self.out
            .write_json("simulate.json", &report)
            .stage("simulate")?;
        self.headline.insert("residual".into(), json!(sol.residual));
        self.field = Some(sol.u);
        self.coeffs.clear();
        Ok(())
    }

    pub fn expand(
        &mut self,
        field: Option<&Path>,
        side: Option<Side>,
        r: Option<usize>,
    ) -> StageResult<()> {
        self.load_field(field).stage("expand")?;
        let rs = self.cfg.r_sequence();
        if let Some(r) = r {
            if !rs.contains(&r) {
                return Err(StageError {
                    stage: "expand",
                    error: Error::Validation(format!(
                        "R = {r} is not in the configured sequence {rs:?}"
                    )),
                });
            }
        }
        let mut summary = Vec::new();
        for s in sides(side) {
            let cs: Vec<BlochCoefficients> = self
                .time("expand", |me| {
                    me.coefficients(s).map(|v| v.into_iter().cloned().collect())
                })
                .stage("expand")?;
            for c in cs.iter().filter(|c| r.is_none_or(|r| c.r == r)) {
                let mut rows = Vec::with_capacity(c.alpha.len());
                for (i, (j, m, a)) in c.iter().enumerate() {
                    let bin = i / c.m_count;
                    rows.push(vec![
                        num(j[0]),
                        num(j[1]),
                        m.to_string(),
                        num(a.re),
                        num(a.im),
                        c.mu(bin, m).map(num).unwrap_or_default(),
                        c.poynting(bin, m).map(num).unwrap_or_default(),
                    ]);
                }
                let name = format!("expand_{}_R{}.csv", s, c.r);
                self.out
                    .write_csv(&name, &["j1", "j2", "m", "re", "im", "mu", "P"], &rows)
                    .stage("expand")?;
                summary.push(json!({
                    "side": s,
                    "R": c.r,
                    "file": name,
                    "M": c.m_count,
                    "coefficient_mass": c.mass(),
                    "residual_mass": c.residual_mass,
                    "total_mass": c.total_mass,
                }));
            }
        }
        self.out.write_json("expand.json", &summary).stage("expand")
    }

    pub fn check_radiation(&mut self, field: Option<&Path>) -> StageResult<()> {
        self.load_field(field).stage("check-radiation")?;
        let plus = self
            .time("check-radiation", |me| me.side_coefficients(Side::Plus))
            .stage("check-radiation")?;
        let minus = self
            .time("check-radiation", |me| me.side_coefficients(Side::Minus))
            .stage("check-radiation")?;
        let scfg = self.cfg.scatter();
        let inc = incident_field(&scfg).stage("check-radiation")?;
        let u = self.field.as_ref().unwrap();
        let energy: Vec<EnergyBalance> = self
            .cfg
            .r_sequence()
            .iter()
            .filter_map(|&r| {
                energy_balance(u, r, &self.crystal, scfg.face_average, Some(&inc)).ok()
            })
            .collect();
        let last = |r: &RadiationReport| r.entries.last().map(|e| e.outgoing_fraction);
        self.headline
            .insert("outgoing_fraction_plus".into(), json!(last(&plus)));
        self.headline
            .insert("outgoing_fraction_minus".into(), json!(last(&minus)));
        self.headline.insert(
            "outgoing_satisfied".into(),
            json!(plus.satisfied && minus.satisfied),
        );
        if let Some(e) = energy
            .iter()
            .find(|e| e.r == 2 * scfg.k_cells)
            .or(energy.first())
        {
            self.headline
                .insert("energy_relative_defect".into(), json!(e.relative_defect));
        }
        let report = json!({
            "tol_p": self.cfg.tol_p(),
            "threshold": self.cfg.radiation.tolerances.threshold,
            "plus": plus,
            "minus": minus,
            "entries": plus.entries.iter().chain(&minus.entries).collect::<Vec<_>>(),
            "energy_balance": energy,
        });
        self.out
            .write_json("radiation.json", &report)
            .stage("check-radiation")
    }

    pub fn bloch_measure(&mut self, field: Option<&Path>) -> StageResult<()> {
        self.load_field(field).stage("bloch-measure")?;
        let mut rows = Vec::new();
        let mut support: Option<SupportReport> = None;
        for s in [Side::Plus, Side::Minus] {
            let (levels, residual): (Vec<Vec<DiscreteBlochMeasure>>, Vec<f64>) = self
                .time("bloch-measure", |me| {
                    me.coefficients(s).map(|cs| {
                        cs.iter()
                            .map(|c| (bloch_measures(c), c.residual_mass))
                            .unzip()
                    })
                })
                .stage("bloch-measure")?;
            for ms in &levels {
                for m in ms {
                    for a in &m.atoms {
                        rows.push(vec![
                            s.to_string(),
                            num(a.j[0]),
                            num(a.j[1]),
                            m.l.to_string(),
                            num(a.weight),
                            m.r.to_string(),
                            num(a.mu),
                            num(a.p),
                        ]);
                    }
                }
            }
            if s == Side::Plus {
                let rep = measure_support_report(
                    &levels,
                    &residual,
                    self.cfg.omega(),
                    self.cfg.frequencies.k[1],
                    self.cfg.radiation.tolerances.support(),
                )
                .stage("bloch-measure")?;
                support = Some(rep);
            }
        }
        self.out
            .write_csv(
                "measure.csv",
                &["side", "j1", "j2", "l", "weight", "R", "mu", "P"],
                &rows,
            )
            .stage("bloch-measure")?;
        let support = support.unwrap();
        if let Some(e) = support.entries.last() {
            self.headline
                .insert("support_inside_fraction".into(), json!(e.inside_fraction));
            self.headline
                .insert("support_higher_fraction".into(), json!(e.higher_fraction));
        }
        self.out
            .write_json("support.json", &support)
            .stage("bloch-measure")
    }

    pub fn transmit(&mut self) -> StageResult<()> {
        let d = self.cfg.discretization.clone();
        let omega = self.cfg.omega();
        let k = self.cfg.frequencies.k;
        let opts = |grid_n| ScanOptions {
            grid_n,
            cutoff: d.n_c,
            ..ScanOptions::default()
        };
        let (modes, fine, smallness) = self
            .time(
                "transmit",
                |me| -> Result<(TransmittedModes, TransmittedModes, SmallnessCheck)> {
                    let a =
                        transmitted_modes(&me.crystal, omega, k[1], opts(2 * d.grid_n), me.exec)?;
                    let b =
                        transmitted_modes(&me.crystal, omega, k[1], opts(4 * d.grid_n), me.exec)?;
                    Ok((a, b, me.smallness()?))
                },
            )
            .stage("transmit")?;
        let prediction = refraction_report(k, omega, &modes, Some(smallness));
        let stable = modes.sign_changes == fine.sign_changes
            && modes.candidates.len() == fine.candidates.len();
        let scan = json!({
            "grid_n": 2 * d.grid_n,
            "modes": modes,
            "refined_grid_n": 4 * d.grid_n,
            "refined": fine,
            "stable": stable,
        });
        self.out
            .write_json("transmit_scan.json", &scan)
            .stage("transmit")?;
        self.out
            .write_json("prediction.json", &prediction)
            .stage("transmit")?;
        self.headline.insert(
            "negative_refraction".into(),
            json!(prediction.negative_refraction),
        );
        self.headline
            .insert("uniqueness".into(), json!(prediction.uniqueness));
        self.headline.insert(
            "candidates".into(),
            json!(prediction
                .candidate_modes
                .iter()
                .map(|c| c.j)
                .collect::<Vec<_>>()),
        );
        self.headline.insert("scan_stable".into(), json!(stable));
        self.prediction = Some(prediction);
        Ok(())
    }

    pub fn validate(
        &mut self,
        prediction: Option<&Path>,
        measure: Option<&Path>,
    ) -> StageResult<()> {
        let pred = match (prediction, &self.prediction) {
            (None, Some(p)) => p.clone(),
            _ => {
                let p = prediction
                    .map(Path::to_path_buf)
                    .unwrap_or_else(|| self.out.path("prediction.json"));
                let text = std::fs::read_to_string(&p)
                    .map_err(|e| Error::Validation(format!("{}: {e}", p.display())))
                    .stage("validate")?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Validation(format!("{}: {e}", p.display())))
                    .stage("validate")?
            }
        };
        let mp = measure
            .map(Path::to_path_buf)
            .unwrap_or_else(|| self.out.path("measure.csv"));
        let m = read_measure(&mp, Side::Plus, 0).stage("validate")?;
        let v: FieldValidation = validate_against_field(&pred, &m, None);
        let within = v.nearest.is_some_and(|d| d <= v.tol);
        self.headline
            .insert("peak_distance".into(), json!(v.nearest));
        self.headline
            .insert("peak_within_tolerance".into(), json!(within));
        let report = json!({
            "validation": v,
            "within_tolerance": within,
            "negative_refraction": pred.negative_refraction,
            "measure": mp.file_name().map(|s| s.to_string_lossy().into_owned()),
        });
        self.out
            .write_json("validation.json", &report)
            .stage("validate")
    }

    pub fn manifest(&mut self, command: &str) -> StageResult<()> {
        let files = self.out.records().stage("manifest")?;
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_sha256: self.config_sha256.clone(),
            seed: self.seed,
            threads: self.threads,
            parallel: self.exec.is_parallel(),
            timings: self.timings.clone(),
            headline: Value::Object(self.headline.clone()),
            files,
        };
        self.out
            .write_json("manifest.json", &manifest)
            .stage("manifest")
    }
}

#[derive(Serialize)]
struct Manifest {
    tool: String,
    version: String,
    command: String,
    config_sha256: String,
    seed: Option<u64>,
    threads: usize,
    parallel: bool,
    timings: BTreeMap<String, f64>,
    headline: Value,
    files: Vec<crate::artifacts::FileRecord>,
}

#[derive(Deserialize)]
struct MeasureRow {
    side: Side,
    j1: f64,
    j2: f64,
    l: usize,
    weight: f64,
    #[serde(rename = "R")]
    r: usize,
    mu: f64,
    #[serde(rename = "P")]
    p: f64,
}

/// Level `l` of one side at the largest `R` present in a measure CSV.
pub fn read_measure(path: &Path, side: Side, l: usize) -> Result<DiscreteBlochMeasure> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<MeasureRow>() {
        let row = rec.map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        if row.side == side && row.l == l {
            rows.push(row);
        }
    }
    let r = rows.iter().map(|x| x.r).max().ok_or_else(|| {
        Error::Validation(format!("{}: no {side} level-{l} atoms", path.display()))
    })?;
    let atoms = rows
        .into_iter()
        .filter(|x| x.r == r)
        .map(|x| Atom {
            j: [x.j1, x.j2],
            weight: x.weight,
            mu: x.mu,
            p: x.p,
        })
        .collect();
    Ok(DiscreteBlochMeasure { l, side, r, atoms })
}
