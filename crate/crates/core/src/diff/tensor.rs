use std::fmt;

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Tensor2D {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            values: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values for a {rows}x{cols} tensor",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("tensor value {bad}")));
        }
        Ok(Self { rows, cols, values })
    }

    /// Builds a tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn row_vector(values: Vec<f64>) -> Result<Self> {
        Self::from_vec(1, values.len(), values)
    }

    pub fn column_vector(values: Vec<f64>) -> Result<Self> {
        Self::from_vec(values.len(), 1, values)
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            values: vec![value],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.values[i * n + i] = 1.0;
        }
        t
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
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    /// The single value of a 1x1 tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.values.len(), 1);
        self.values[0]
    }

    pub fn is_vector(&self) -> bool {
        self.rows == 1 || self.cols == 1
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Keeps the listed rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Tensor2D {
        let mut values = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Tensor2D {
            rows: indices.len(),
            cols: self.cols,
            values,
        }
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &Tensor2D) -> Result<Tensor2D> {
        if self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "vstack of {} and {} columns",
                self.cols, other.cols
            )));
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Ok(Tensor2D {
            rows: self.rows + other.rows,
            cols: self.cols,
            values,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor2D {
        Tensor2D {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn zip_with(&self, other: &Tensor2D, f: impl Fn(f64, f64) -> f64) -> Tensor2D {
        debug_assert_eq!(self.shape(), other.shape());
        Tensor2D {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor2D) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn transpose(&self) -> Tensor2D {
        let mut out = Tensor2D::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.values[c * self.rows + r] = self.values[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Tensor2D) -> Result<Tensor2D> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let out_row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a = self.values[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.values[p * m..(p + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor2D {
            rows: n,
            cols: m,
            values: out,
        })
    }
}

impl fmt::Debug for Tensor2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor2D({}x{}) [", self.rows, self.cols)?;
        for r in 0..self.rows {
            if r > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

/// Affine map `x · weight + bias`, with `bias` broadcast over rows.
pub fn linear_forward(x: &Tensor2D, weight: &Tensor2D, bias: &Tensor2D) -> Result<Tensor2D> {
    if bias.rows() != 1 || bias.cols() != weight.cols() {
        return Err(Error::Dimension(format!(
            "bias {}x{} for {} output units",
            bias.rows(),
            bias.cols(),
            weight.cols()
        )));
    }
    let mut out = x.matmul(weight)?;
    let k = out.cols();
    for row in out.values_mut().chunks_mut(k) {
        for (o, b) in row.iter_mut().zip(bias.values()) {
            *o += b;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_identity_input() {
        let w = Tensor2D::from_rows(&[vec![3.0, 0.0], vec![0.0, 5.0]]).unwrap();
        let out = linear_forward(&Tensor2D::identity(2), &w, &Tensor2D::zeros(1, 2)).unwrap();
        assert_eq!(out, w);
    }

    #[test]
    fn linear_zero_weight_gives_bias_rows() {
        let x = Tensor2D::from_rows(&[vec![1.5, -2.0, 7.0], vec![0.1, 0.2, 0.3]]).unwrap();
        let b = Tensor2D::row_vector(vec![1.0, 2.0]).unwrap();
        let out = linear_forward(&x, &Tensor2D::zeros(3, 2), &b).unwrap();
        for r in 0..2 {
            assert_eq!(out.row(r), &[1.0, 2.0]);
        }
    }

    #[test]
    fn linear_hand_computed() {
        let x = Tensor2D::row_vector(vec![1.0, 2.0]).unwrap();
        let w = Tensor2D::column_vector(vec![1.0, 1.0]).unwrap();
        let out = linear_forward(&x, &w, &Tensor2D::scalar(0.5)).unwrap();
        assert_eq!(out.item(), 3.5);
    }

    #[test]
    fn linear_shape_mismatch() {
        let x = Tensor2D::zeros(2, 3);
        assert!(matches!(
            linear_forward(&x, &Tensor2D::zeros(2, 2), &Tensor2D::zeros(1, 2)),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            linear_forward(&x, &Tensor2D::zeros(3, 2), &Tensor2D::zeros(1, 3)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Tensor2D::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Tensor2D::from_vec(1, 3, vec![1.0, 2.0]).is_err());
    }
}
