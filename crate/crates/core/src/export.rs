//! CSV tables with round-trip float formatting and a versioned binary
//! spectrum dump.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::spectral::Spectrum;

/// 17 significant digits; parses back to the identical f64.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    F(f64),
    I(i64),
    S(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(x) => fmt_f64(*x),
            Cell::I(i) => i.to_string(),
            Cell::S(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::F)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::I(x as i64)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::S(x.to_string())
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::S(x.to_string())
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::S(x.to_string())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self { header: header.iter().map(|s| s.as_ref().to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::Format(format!("row has {} cells, header has {}", row.len(), self.header.len())));
        }
        self.rows.push(row.iter().map(Cell::render).collect());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            rows.push(rec?.iter().map(str::to_string).collect());
        }
        Ok(Self { header, rows })
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("missing column '{name}'")))
    }

    /// Parsed float column; empty cells become None.
    pub fn column_opt(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let i = self.column_index(name)?;
        self.rows
            .iter()
            .map(|r| {
                let s = r[i].trim();
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse::<f64>()
                        .map(Some)
                        .map_err(|_| Error::Format(format!("column '{name}': cannot parse '{s}'")))
                }
            })
            .collect()
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        self.column_opt(name)?
            .into_iter()
            .map(|x| x.ok_or_else(|| Error::Format(format!("column '{name}' has empty cells"))))
            .collect()
    }
}

const MAGIC: &[u8; 8] = b"TLSPEC\0\0";
pub const DUMP_VERSION: u32 = 1;

/// Layout: magic, version (u32), dim (u64), energies, free energies,
/// coefficient rows; all little-endian f64.
pub fn write_spectrum_dump(path: &Path, spectrum: &Spectrum) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&DUMP_VERSION.to_le_bytes())?;
    w.write_all(&(spectrum.dim() as u64).to_le_bytes())?;
    for x in spectrum.energies.iter().chain(&spectrum.free_energies).chain(spectrum.coefficients.iter()) {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub struct SpectrumDump {
    pub energies: Vec<f64>,
    pub free_energies: Vec<f64>,
    pub coefficients: Array2<f64>,
}

pub fn read_spectrum_dump(path: &Path) -> Result<SpectrumDump> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a spectrum dump".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != DUMP_VERSION {
        return Err(Error::Format(format!("unsupported dump version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let d = u64::from_le_bytes(b8) as usize;
    let mut read_vec = |n: usize| -> Result<Vec<f64>> {
        let mut buf = vec![0u8; n * 8];
        r.read_exact(&mut buf)?;
        Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    };
    let energies = read_vec(d)?;
    let free_energies = read_vec(d)?;
    let coefficients = Array2::from_shape_vec((d, d), read_vec(d * d)?).map_err(|e| Error::Format(e.to_string()))?;
    Ok(SpectrumDump { energies, free_energies, coefficients })
}

/// Dense matrix as CSV: header c0..c{n-1}, one row per matrix row.
pub fn matrix_table(m: &Array2<f64>) -> Table {
    let header: Vec<String> = (0..m.ncols()).map(|j| format!("c{j}")).collect();
    let mut t = Table::new(&header);
    for row in m.rows() {
        t.rows.push(row.iter().map(|x| fmt_f64(*x)).collect());
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::diagonalize_matrix;

    #[test]
    fn float_round_trip() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, std::f64::consts::PI, 0.0] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let mut t = Table::new(&["t", "value", "gamma"]);
        t.push(vec![0.5.into(), (1.0 / 7.0).into(), None.into()]).unwrap();
        t.push(vec![1.5.into(), (-2.0f64).into(), Some(0.25).into()]).unwrap();
        assert!(t.push(vec![1.0.into()]).is_err());
        t.write(&p).unwrap();
        let back = Table::read(&p).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.column("value").unwrap(), vec![1.0 / 7.0, -2.0]);
        assert_eq!(back.column_opt("gamma").unwrap(), vec![None, Some(0.25)]);
        assert!(back.column("gamma").is_err());
        assert!(back.column("missing").is_err());
    }

    #[test]
    fn spectrum_dump_round_trip() {
        let h = ndarray::array![[1.0, 0.3, 0.0], [0.3, -0.5, 0.2], [0.0, 0.2, 2.0]];
        let s = diagonalize_matrix(&h, vec![1.0, -0.5, 2.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        write_spectrum_dump(&p, &s).unwrap();
        let d = read_spectrum_dump(&p).unwrap();
        assert_eq!(d.energies, s.energies);
        assert_eq!(d.free_energies, s.free_energies);
        assert_eq!(d.coefficients, s.coefficients);
        std::fs::write(&p, b"garbage!garbage").unwrap();
        assert!(read_spectrum_dump(&p).is_err());
    }
}
