//! The n×d data table with its missingness mask, plus the CSV format
//! (header row, empty field = missing, LF newlines).

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{invalid, io_err, Error, Result};

/// Row-major `n × d` values plus a mask where `true` marks a missing cell.
/// Missing positions hold NaN and are never read.
#[derive(Debug, Clone)]
pub struct Table {
    n: usize,
    d: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
    column_names: Option<Vec<String>>,
}

impl PartialEq for Table {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.d == other.d
            && self.mask == other.mask
            && self.column_names == other.column_names
            && self
                .values
                .iter()
                .zip(&other.values)
                .zip(&self.mask)
                .all(|((a, b), &m)| m || a.to_bits() == b.to_bits())
    }
}

impl Table {
    pub fn new(n: usize, d: usize, mut values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(invalid(format!("table must be at least 1×1, got {n}×{d}")));
        }
        if values.len() != n * d || mask.len() != n * d {
            return Err(invalid(format!(
                "table {n}×{d} needs {} cells, got {} values / {} mask entries",
                n * d,
                values.len(),
                mask.len()
            )));
        }
        for (i, (v, &m)) in values.iter_mut().zip(&mask).enumerate() {
            if m {
                *v = f64::NAN;
            } else if !v.is_finite() {
                return Err(Error::NonFinite(format!("cell ({}, {})", i / d, i % d)));
            }
        }
        Ok(Self {
            n,
            d,
            values,
            mask,
            column_names: None,
        })
    }

    pub fn fully_observed(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(n, d, values, vec![false; n * d])
    }

    pub fn with_column_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.d {
            return Err(invalid(format!("{} column names for {} columns", names.len(), self.d)));
        }
        self.column_names = Some(names);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn column_names(&self) -> Option<&[String]> {
        self.column_names.as_deref()
    }

    /// Observed value of a cell, `None` when missing.
    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        let i = r * self.d + c;
        (!self.mask[i]).then(|| self.values[i])
    }

    pub fn is_missing(&self, r: usize, c: usize) -> bool {
        self.mask[r * self.d + c]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Raw storage; missing cells are NaN.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("cell ({r}, {c})")));
        }
        let i = r * self.d + c;
        self.values[i] = value;
        self.mask[i] = false;
        Ok(())
    }

    pub fn set_missing(&mut self, r: usize, c: usize) {
        let i = r * self.d + c;
        self.values[i] = f64::NAN;
        self.mask[i] = true;
    }

    pub fn missing_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Observed values of column `c`.
    pub fn observed_column(&self, c: usize) -> Vec<f64> {
        (0..self.n).filter_map(|r| self.get(r, c)).collect()
    }

    /// Table with columns in the given order (`columns[k]` becomes column `k`).
    pub fn select_columns(&self, columns: &[usize]) -> Result<Self> {
        if columns.iter().any(|&c| c >= self.d) {
            return Err(invalid("column index out of range"));
        }
        let dn = columns.len();
        let mut values = Vec::with_capacity(self.n * dn);
        let mut mask = Vec::with_capacity(self.n * dn);
        for r in 0..self.n {
            for &c in columns {
                values.push(self.values[r * self.d + c]);
                mask.push(self.mask[r * self.d + c]);
            }
        }
        let mut t = Self::new(self.n, dn, values, mask)?;
        t.column_names = self
            .column_names
            .as_ref()
            .map(|names| columns.iter().map(|&c| names[c].clone()).collect());
        Ok(t)
    }

    /// Rows `rows` in order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if rows.iter().any(|&r| r >= self.n) {
            return Err(invalid("row index out of range"));
        }
        let mut values = Vec::with_capacity(rows.len() * self.d);
        let mut mask = Vec::with_capacity(rows.len() * self.d);
        for &r in rows {
            values.extend_from_slice(&self.values[r * self.d..(r + 1) * self.d]);
            mask.extend_from_slice(&self.mask[r * self.d..(r + 1) * self.d]);
        }
        let mut t = Self::new(rows.len(), self.d, values, mask)?;
        t.column_names = self.column_names.clone();
        Ok(t)
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &Table) -> Result<Self> {
        if other.d != self.d {
            return Err(invalid("vstack: column counts differ"));
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        let mut mask = self.mask.clone();
        mask.extend_from_slice(&other.mask);
        let mut t = Self::new(self.n + other.n, self.d, values, mask)?;
        t.column_names = self.column_names.clone();
        Ok(t)
    }

    fn header(&self) -> Vec<String> {
        self.column_names
            .clone()
            .unwrap_or_else(|| (0..self.d).map(|c| format!("x{c}")).collect())
    }

    /// Writes CSV. Values use the shortest decimal form that parses back to
    /// the same `f64`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        wr.write_record(self.header()).map_err(csv_err)?;
        let mut rec: Vec<String> = Vec::with_capacity(self.d);
        for r in 0..self.n {
            rec.clear();
            for c in 0..self.d {
                rec.push(self.get(r, c).map(format_value).unwrap_or_default());
            }
            wr.write_record(&rec).map_err(csv_err)?;
        }
        wr.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(r);
        let names: Vec<String> = rd.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
        let d = names.len();
        if d == 0 || (d == 1 && names[0].is_empty()) {
            return Err(Error::Csv("missing header row".into()));
        }
        let mut values = Vec::new();
        let mut mask = Vec::new();
        let mut n = 0;
        for rec in rd.records() {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != d {
                return Err(Error::Csv(format!("row {} has {} fields, expected {d}", n + 1, rec.len())));
            }
            for (c, field) in rec.iter().enumerate() {
                let field = field.trim();
                if field.is_empty() {
                    values.push(f64::NAN);
                    mask.push(true);
                } else {
                    let v: f64 = field
                        .parse()
                        .map_err(|_| Error::Csv(format!("row {} column {c}: cannot parse {field:?}", n + 1)))?;
                    if !v.is_finite() {
                        return Err(Error::Csv(format!("row {} column {c}: non-finite value", n + 1)));
                    }
                    values.push(v);
                    mask.push(false);
                }
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::Csv("no data rows".into()));
        }
        Table::new(n, d, values, mask)?.with_column_names(names)
    }

    pub fn from_csv_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_csv(bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(io_err(path))?;
        Self::read_csv(std::io::BufReader::new(f))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(io_err(path))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

pub fn format_value(v: f64) -> String {
    format!("{v}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv(e.to_string())
}
