use std::fmt;

use crate::error::{Error, Result};
use crate::numerics::SeededRng;

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            if r > 0 {
                write!(f, "; ")?;
            }
            let row: Vec<String> = self.row(r).iter().map(|v| format!("{v}")).collect();
            write!(f, "{}", row.join(", "))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Builds a matrix from row-major data. Rejects wrong lengths and non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("from_vec", (rows, cols), (data.len(), 1)));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "from_vec" });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Convenience constructor for literals; panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        let data = rows.iter().flat_map(|row| row.iter().copied()).collect();
        Matrix::from_vec(r, c, data).expect("finite literal")
    }

    /// Column vector `n x 1`.
    pub fn column(values: &[f64]) -> Result<Self> {
        Matrix::from_vec(values.len(), 1, values.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Sets one entry. Non-finite values are rejected.
    pub fn set(&mut self, r: usize, c: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "set" });
        }
        self.data[r * self.cols + c] = value;
        Ok(())
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col_to_vec(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Standard matrix product `a * b`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape("matmul", self.shape(), other.shape()));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out.ensure_finite("matmul")
    }

    /// `alpha * x + y`, elementwise.
    pub fn axpy(alpha: f64, x: &Matrix, y: &Matrix) -> Result<Matrix> {
        if x.shape() != y.shape() {
            return Err(Error::shape("axpy", x.shape(), y.shape()));
        }
        let data = x.data.iter().zip(&y.data).map(|(a, b)| alpha * a + b).collect();
        Matrix {
            rows: x.rows,
            cols: x.cols,
            data,
        }
        .ensure_finite("axpy")
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        Matrix::axpy(1.0, other, self)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        Matrix::axpy(-1.0, other, self)
    }

    pub fn scale(&self, alpha: f64) -> Result<Matrix> {
        self.map(|v| alpha * v).ensure_finite("scale")
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::shape("hadamard", self.shape(), other.shape()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
        .ensure_finite("hadamard")
    }

    pub(crate) fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest absolute elementwise difference. Shapes must agree.
    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::shape("max_abs_diff", self.shape(), other.shape()));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Keeps the first `rows` rows and `cols` columns.
    pub fn top_left(&self, rows: usize, cols: usize) -> Result<Matrix> {
        if rows > self.rows || cols > self.cols {
            return Err(Error::shape("top_left", self.shape(), (rows, cols)));
        }
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            out.data[r * cols..(r + 1) * cols].copy_from_slice(&self.row(r)[..cols]);
        }
        Ok(out)
    }

    /// Zero-pads to `rows x cols`, keeping existing entries top-left.
    pub fn zero_padded(&self, rows: usize, cols: usize) -> Result<Matrix> {
        if rows < self.rows || cols < self.cols {
            return Err(Error::shape("zero_padded", self.shape(), (rows, cols)));
        }
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..self.rows {
            out.data[r * cols..r * cols + self.cols].copy_from_slice(self.row(r));
        }
        Ok(out)
    }

    /// Builds a matrix whose columns are the given equal-length slices.
    pub fn from_columns(columns: &[&[f64]]) -> Result<Matrix> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, |c| c.len());
        let mut out = Matrix::zeros(rows, cols);
        for (c, column) in columns.iter().enumerate() {
            if column.len() != rows {
                return Err(Error::shape("from_columns", (rows, cols), (column.len(), 1)));
            }
            for (r, v) in column.iter().enumerate() {
                out.data[r * cols + c] = *v;
            }
        }
        out.ensure_finite("from_columns")
    }

    fn ensure_finite(self, op: &'static str) -> Result<Matrix> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(self)
        } else {
            Err(Error::NonFinite { op })
        }
    }
}

/// I.i.d. `N(0, std^2)` entries drawn from `rng` in row-major order.
pub fn gaussian(rng: &mut SeededRng, rows: usize, cols: usize, std: f64) -> Matrix {
    assert!(std >= 0.0 && std.is_finite(), "std must be finite and non-negative");
    let mut m = Matrix::zeros(rows, cols);
    if std == 0.0 {
        return m;
    }
    for v in m.data.iter_mut() {
        *v = std * rng.standard_normal();
    }
    m
}
