//! Sample matrices standing in for a target distribution.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// An `n × d` matrix of samples stored row-major, one sample per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    n: usize,
    d: usize,
    values: Vec<f64>,
    /// Environment index this dataset was drawn from, if known.
    #[serde(default)]
    pub env: Option<usize>,
    /// Intervention targets of the generating environment (empty = observational).
    #[serde(default)]
    pub targets: Vec<usize>,
}

impl Dataset {
    pub fn new(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return invalid("dataset dimension must be positive");
        }
        if values.len() != n * d {
            return invalid(format!(
                "dataset buffer has {} values, expected {n}x{d}",
                values.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("dataset contains non-finite values");
        }
        Ok(Self {
            n,
            d,
            values,
            env: None,
            targets: Vec::new(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != d) {
            return invalid("rows have inconsistent lengths");
        }
        Self::new(rows.len(), d, rows.concat())
    }

    pub fn with_provenance(mut self, env: usize, targets: Vec<usize>) -> Self {
        self.env = Some(env);
        self.targets = targets;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.d)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Subset of rows in the given order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        let mut values = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        Dataset {
            n: idx.len(),
            d: self.d,
            values,
            env: self.env,
            targets: self.targets.clone(),
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for r in self.rows() {
            for (mi, ri) in m.iter_mut().zip(r) {
                *mi += ri;
            }
        }
        let n = self.n.max(1) as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Population (1/n) standard deviation per column.
    pub fn std(&self) -> Vec<f64> {
        let m = self.mean();
        let mut s = vec![0.0; self.d];
        for r in self.rows() {
            for j in 0..self.d {
                s[j] += (r[j] - m[j]).powi(2);
            }
        }
        let n = self.n.max(1) as f64;
        s.iter().map(|v| (v / n).sqrt()).collect()
    }

    /// Unbiased sample covariance.
    pub fn covariance(&self) -> nalgebra::DMatrix<f64> {
        let m = self.mean();
        let d = self.d;
        let mut c = nalgebra::DMatrix::zeros(d, d);
        for r in self.rows() {
            for i in 0..d {
                for j in 0..d {
                    c[(i, j)] += (r[i] - m[i]) * (r[j] - m[j]);
                }
            }
        }
        c / ((self.n as f64) - 1.0).max(1.0)
    }

    /// Apply `(x - mean) / std` column-wise.
    pub fn standardized(&self, mean: &[f64], std: &[f64]) -> Result<Dataset> {
        if mean.len() != self.d || std.len() != self.d {
            return invalid("standardization constants have wrong length");
        }
        if std.iter().any(|s| !(*s > 0.0)) {
            return invalid("standardization std must be positive");
        }
        let mut out = self.clone();
        for r in out.values.chunks_exact_mut(self.d) {
            for j in 0..self.d {
                r[j] = (r[j] - mean[j]) / std[j];
            }
        }
        Ok(out)
    }

    /// Write as CSV with header `x1,...,xd`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let header: Vec<String> = (1..=self.d).map(|j| format!("x{j}")).collect();
        wtr.write_record(&header)?;
        for r in self.rows() {
            wtr.write_record(r.iter().map(|v| format!("{v:?}")))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Dataset> {
        let mut rdr = csv::Reader::from_reader(r);
        let d = rdr.headers()?.len();
        let mut values = Vec::new();
        let mut n = 0;
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != d {
                return invalid(format!(
                    "csv row {} has {} fields, expected {d}",
                    n + 1,
                    rec.len()
                ));
            }
            for field in rec.iter() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::InvalidInput(format!("cannot parse {field:?} as a number"))
                })?;
                values.push(v);
            }
            n += 1;
        }
        Dataset::new(n, d, values)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}
