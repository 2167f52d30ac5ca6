//! Field dumps: a JSON header line followed by little-endian `(re, im)` pairs, or CSV.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::FieldStrip;

pub const FIELD_MAGIC: &str = "bloch-strip-field";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldHeader {
    pub format: String,
    pub version: u32,
    pub x_lo: f64,
    pub epsilon: f64,
    pub n_cell: usize,
    #[serde(rename = "K")]
    pub k_cells: usize,
    pub n1: usize,
    pub n2: usize,
    /// Sample layout: `x1` index major.
    pub layout: String,
    pub dtype: String,
}

impl FieldHeader {
    pub fn of(u: &FieldStrip) -> Self {
        FieldHeader {
            format: FIELD_MAGIC.into(),
            version: 1,
            x_lo: u.x_lo,
            epsilon: u.epsilon,
            n_cell: u.n_cell,
            k_cells: u.k_cells,
            n1: u.n1,
            n2: u.n2(),
            layout: "i1*n2+i2, cell centers".into(),
            dtype: "complex128-le".into(),
        }
    }
}

pub fn write_field_bin(path: &Path, u: &FieldStrip) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut w, &FieldHeader::of(u)).map_err(|e| Error::Io(e.into()))?;
    w.write_all(b"\n")?;
    for v in &u.samples {
        w.write_all(&v.re.to_le_bytes())?;
        w.write_all(&v.im.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_field_bin(path: &Path) -> Result<FieldStrip> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let h: FieldHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::Validation(format!("{}: bad field header: {e}", path.display())))?;
    if h.format != FIELD_MAGIC || h.version != 1 || h.dtype != "complex128-le" {
        return Err(Error::Validation(format!(
            "{}: unsupported field dump {} v{}",
            path.display(),
            h.format,
            h.version
        )));
    }
    if h.n2 != h.n_cell * h.k_cells {
        return Err(Error::Validation(format!(
            "{}: n2 = {} but n_cell K = {}",
            path.display(),
            h.n2,
            h.n_cell * h.k_cells
        )));
    }
    let count = h.n1 * h.n2;
    let mut bytes = Vec::with_capacity(count * 16);
    r.read_to_end(&mut bytes)?;
    if bytes.len() != count * 16 {
        return Err(Error::Validation(format!(
            "{}: expected {} bytes of samples, found {}",
            path.display(),
            count * 16,
            bytes.len()
        )));
    }
    let f = |c: &[u8]| f64::from_le_bytes(c.try_into().expect("8 bytes"));
    let samples = bytes
        .chunks_exact(16)
        .map(|c| Complex64::new(f(&c[..8]), f(&c[8..])))
        .collect();
    FieldStrip::new(h.x_lo, h.epsilon, h.n_cell, h.k_cells, h.n1, samples)
}

/// `x1,x2,re,im` rows; the header comment carries the grid.
pub fn write_field_csv(path: &Path, u: &FieldStrip) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        w,
        "# {}",
        serde_json::to_string(&FieldHeader::of(u)).map_err(|e| Error::Io(e.into()))?
    )?;
    writeln!(w, "x1,x2,re,im")?;
    for i1 in 0..u.n1 {
        for i2 in 0..u.n2() {
            let v = u.get(i1, i2);
            writeln!(w, "{:e},{:e},{:e},{:e}", u.x1(i1), u.x2(i2), v.re, v.im)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_field_csv(path: &Path) -> Result<FieldStrip> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let head = lines
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .ok_or_else(|| Error::Validation(format!("{}: missing header comment", path.display())))?;
    let h: FieldHeader = serde_json::from_str(head)
        .map_err(|e| Error::Validation(format!("{}: bad field header: {e}", path.display())))?;
    lines.next();
    let mut samples = Vec::with_capacity(h.n1 * h.n2);
    for (n, l) in lines.enumerate() {
        let cols: Vec<&str> = l.split(',').collect();
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Validation(format!("{}: row {}: {e}", path.display(), n + 3)))
        };
        if cols.len() != 4 {
            return Err(Error::Validation(format!(
                "{}: row {} has {} columns",
                path.display(),
                n + 3,
                cols.len()
            )));
        }
        samples.push(Complex64::new(parse(cols[2])?, parse(cols[3])?));
    }
    FieldStrip::new(h.x_lo, h.epsilon, h.n_cell, h.k_cells, h.n1, samples)
}

/// Reads either dump by extension (`.csv` or anything else as binary).
pub fn read_field(path: &Path) -> Result<FieldStrip> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_field_csv(path),
        _ => read_field_bin(path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        let u = FieldStrip::from_fn(-2.0, 1.0, 8, 2, 32, |x| {
            Complex64::new(x[0].sin(), x[1] * 1e-300)
        });
        let dir = std::env::temp_dir().join(format!("bloch-strip-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let b = dir.join("u.bin");
        write_field_bin(&b, &u).unwrap();
        assert_eq!(read_field(&b).unwrap(), u);
        let c = dir.join("u.csv");
        write_field_csv(&c, &u).unwrap();
        assert_eq!(read_field(&c).unwrap(), u);
        std::fs::write(&b, b"{\"format\":\"x\"}\n").unwrap();
        assert!(read_field(&b).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
