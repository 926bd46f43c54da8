//! Dense real matrix with row-major external representation.

use super::NumericsError;
use crate::util::{fmt_g12, round_sig};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Read, Write};
use std::ops::{Add, Mul, Sub};

/// Dense `rows x cols` matrix of finite `f64` entries.
///
/// Constructors that take raw data reject NaN and infinity, so downstream
/// kernels may assume finite operands. The file exchange formats are CSV
/// (one line per matrix row, plain decimal) and a JSON wrapper
/// `{"rows": r, "cols": c, "data": [...]}` with `data` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    inner: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            inner: DMatrix::zeros(rows, cols),
        }
    }

    pub fn identity(n: usize) -> Self {
        Matrix {
            inner: DMatrix::identity(n, n),
        }
    }

    /// Build from row-major data, rejecting non-finite entries.
    pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::DimensionMismatch {
                context: format!(
                    "expected {}x{} = {} entries, got {}",
                    rows,
                    cols,
                    rows * cols,
                    data.len()
                ),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(NumericsError::NonFinite {
                context: "matrix construction".into(),
            });
        }
        Ok(Matrix {
            inner: DMatrix::from_row_slice(rows, cols, data),
        })
    }

    /// Build from a list of equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(NumericsError::DimensionMismatch {
                context: "ragged rows".into(),
            });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Matrix::from_row_major(r, c, &flat)
    }

    /// Build column-by-column (each column a snapshot vector).
    pub fn from_columns(cols: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let c = cols.len();
        let r = cols.first().map_or(0, |col| col.len());
        if cols.iter().any(|col| col.len() != r) {
            return Err(NumericsError::DimensionMismatch {
                context: "ragged columns".into(),
            });
        }
        let mut m = DMatrix::zeros(r, c);
        for (j, col) in cols.iter().enumerate() {
            if !col.iter().all(|v| v.is_finite()) {
                return Err(NumericsError::NonFinite {
                    context: "matrix construction".into(),
                });
            }
            for (i, &v) in col.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(Matrix { inner: m })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> f64) -> Self {
        Matrix {
            inner: DMatrix::from_fn(rows, cols, f),
        }
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        Matrix::from_fn(diag.len(), diag.len(), |i, j| if i == j { diag[i] } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.inner.nrows()
    }

    pub fn cols(&self) -> usize {
        self.inner.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner[(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.inner[(i, j)] = v;
    }

    /// Entries in row-major order.
    pub fn row_major(&self) -> Vec<f64> {
        let (r, c) = (self.rows(), self.cols());
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(self.inner[(i, j)]);
            }
        }
        out
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols()).map(|j| self.inner[(i, j)]).collect()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows()).map(|i| self.inner[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix {
            inner: self.inner.transpose(),
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            inner: &self.inner * s,
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.inner.norm()
    }

    pub fn max_abs(&self) -> f64 {
        self.inner.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.inner.iter().all(|v| v.is_finite())
    }

    /// `(A + A^T) / 2`.
    pub fn symmetrized(&self) -> Matrix {
        Matrix {
            inner: (&self.inner + self.inner.transpose()) * 0.5,
        }
    }

    /// Copy of the `nr x nc` block with upper-left corner `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> Matrix {
        Matrix {
            inner: self.inner.view((r0, c0), (nr, nc)).into_owned(),
        }
    }

    /// Horizontal concatenation.
    pub fn hstack(parts: &[&Matrix]) -> Result<Matrix, NumericsError> {
        let r = parts.first().map_or(0, |m| m.rows());
        if parts.iter().any(|m| m.rows() != r) {
            return Err(NumericsError::DimensionMismatch {
                context: "hstack row counts differ".into(),
            });
        }
        let c: usize = parts.iter().map(|m| m.cols()).sum();
        let mut out = DMatrix::zeros(r, c);
        let mut off = 0;
        for m in parts {
            out.view_mut((0, off), (r, m.cols())).copy_from(&m.inner);
            off += m.cols();
        }
        Ok(Matrix { inner: out })
    }

    /// Vertical concatenation.
    pub fn vstack(parts: &[&Matrix]) -> Result<Matrix, NumericsError> {
        let c = parts.first().map_or(0, |m| m.cols());
        if parts.iter().any(|m| m.cols() != c) {
            return Err(NumericsError::DimensionMismatch {
                context: "vstack column counts differ".into(),
            });
        }
        let r: usize = parts.iter().map(|m| m.rows()).sum();
        let mut out = DMatrix::zeros(r, c);
        let mut off = 0;
        for m in parts {
            out.view_mut((off, 0), (m.rows(), c)).copy_from(&m.inner);
            off += m.rows();
        }
        Ok(Matrix { inner: out })
    }

    /// Matrix-vector product.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols(), v.len(), "mul_vec dimension mismatch");
        let mut out = vec![0.0; self.rows()];
        for i in 0..self.rows() {
            let mut acc = 0.0;
            for j in 0..self.cols() {
                acc += self.inner[(i, j)] * v[j];
            }
            out[i] = acc;
        }
        out
    }

    /// Quadratic form `v^T A v`.
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        let av = self.mul_vec(v);
        v.iter().zip(av.iter()).map(|(a, b)| a * b).sum()
    }

    /// Eigenvalues of the symmetric part, ascending. Used for PSD checks.
    pub fn symmetric_eigenvalues(&self) -> Vec<f64> {
        let sym = self.symmetrized();
        let mut ev: Vec<f64> = sym.inner.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Entries rounded to 12 significant digits (the file precision).
    pub fn rounded_12(&self) -> Matrix {
        Matrix {
            inner: self.inner.map(|v| round_sig(v, 12)),
        }
    }

    /// Write CSV: one line per row, comma-separated plain decimals with 12
    /// significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), NumericsError> {
        for i in 0..self.rows() {
            let line: Vec<String> = (0..self.cols()).map(|j| fmt_g12(self.get(i, j))).collect();
            writeln!(w, "{}", line.join(",")).map_err(NumericsError::from)?;
        }
        Ok(())
    }

    /// Read the CSV format produced by [`Matrix::write_csv`].
    pub fn read_csv<R: Read>(r: R) -> Result<Matrix, NumericsError> {
        let reader = BufReader::new(r);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for line in reader.lines() {
            let line = line.map_err(NumericsError::from)?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let row: Result<Vec<f64>, _> = trimmed
                .split(',')
                .map(|tok| {
                    tok.trim()
                        .parse::<f64>()
                        .map_err(|e| NumericsError::Parse(format!("bad entry {tok:?}: {e}")))
                })
                .collect();
            rows.push(row?);
        }
        Matrix::from_rows(&rows)
    }

    pub(crate) fn as_dmatrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub(crate) fn from_dmatrix(inner: DMatrix<f64>) -> Matrix {
        Matrix { inner }
    }
}

impl Serialize for Matrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        MatrixJson {
            rows: self.rows(),
            cols: self.cols(),
            data: self.rounded_12().row_major(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = MatrixJson::deserialize(d)?;
        Matrix::from_row_major(raw.rows, raw.cols, &raw.data).map_err(serde::de::Error::custom)
    }
}

impl Add for &Matrix {
    type Output = Matrix;
    fn add(self, rhs: &Matrix) -> Matrix {
        Matrix {
            inner: &self.inner + &rhs.inner,
        }
    }
}

impl Sub for &Matrix {
    type Output = Matrix;
    fn sub(self, rhs: &Matrix) -> Matrix {
        Matrix {
            inner: &self.inner - &rhs.inner,
        }
    }
}

impl Mul for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &Matrix) -> Matrix {
        Matrix {
            inner: &self.inner * &rhs.inner,
        }
    }
}
