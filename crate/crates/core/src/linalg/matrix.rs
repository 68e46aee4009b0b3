use serde::{Deserialize, Serialize};

use super::ops::dot;
use super::{Real, SeededRng};
use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{} elements for {rows}x{cols}", rows * cols),
                data.len(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Fan-in scaled uniform initialization on `[-sqrt(1/cols), sqrt(1/cols)]`.
    ///
    /// Draws are taken in 64-bit and narrowed, so the same seed gives the
    /// same matrix (up to rounding) in either precision.
    pub fn init_uniform(rng: &mut SeededRng, rows: usize, cols: usize) -> Self {
        let bound = (1.0 / cols.max(1) as f64).sqrt();
        Self::from_fn(rows, cols, |_, _| T::lit(rng.uniform_in(-bound, bound)))
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    /// `self · v`.
    pub fn matvec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.cols {
            return Err(Error::shape(
                "matvec",
                format!("vector of length {} for {}x{} matrix", self.cols, self.rows, self.cols),
                v.len(),
            ));
        }
        Ok(self.matvec_cols(0, v))
    }

    /// Product of the column block `[start, start + v.len())` with `v`.
    /// Callers guarantee the range is in bounds.
    pub(crate) fn matvec_cols(&self, start: usize, v: &[T]) -> Vec<T> {
        let end = start + v.len();
        (0..self.rows).map(|i| dot(&self.row(i)[start..end], v)).collect()
    }

    /// `selfᵀ · v`.
    pub fn matvec_t(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.rows {
            return Err(Error::shape(
                "matvec_t",
                format!("vector of length {} for transposed {}x{} matrix", self.rows, self.rows, self.cols),
                v.len(),
            ));
        }
        let mut out = vec![T::zero(); self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi != T::zero() {
                super::axpy(vi, self.row(i), &mut out);
            }
        }
        Ok(out)
    }

    /// `self += scale · a bᵀ` restricted to the column block starting at `start`.
    pub(crate) fn add_outer_cols(&mut self, scale: T, a: &[T], start: usize, b: &[T]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert!(start + b.len() <= self.cols);
        let end = start + b.len();
        for (i, &ai) in a.iter().enumerate() {
            let s = scale * ai;
            if s != T::zero() {
                super::axpy(s, b, &mut self.row_mut(i)[start..end]);
            }
        }
    }

    /// `self += scale · a bᵀ`.
    pub fn add_outer(&mut self, scale: T, a: &[T], b: &[T]) -> Result<()> {
        if a.len() != self.rows || b.len() != self.cols {
            return Err(Error::shape(
                "add_outer",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", a.len(), b.len()),
            ));
        }
        self.add_outer_cols(scale, a, 0, b);
        Ok(())
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn add_assign(&mut self, other: &Matrix<T>) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                "add_assign",
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        self.data.iter_mut().zip(&other.data).for_each(|(a, &b)| *a += b);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    /// Element-wise conversion to another precision.
    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| U::lit(x.to_f64_lossy())).collect(),
        }
    }
}

/// `a bᵀ`.
pub fn outer<T: Real>(a: &[T], b: &[T]) -> Matrix<T> {
    let mut m = Matrix::zeros(a.len(), b.len());
    for (i, &ai) in a.iter().enumerate() {
        for (dst, &bj) in m.row_mut(i).iter_mut().zip(b) {
            *dst = ai * bj;
        }
    }
    m
}

impl<T: Real> Matrix<T> {
    pub fn outer(a: &[T], b: &[T]) -> Self {
        outer(a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matvec(m: &Matrix<f64>, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; m.rows()];
        for i in 0..m.rows() {
            let mut acc = 0.0;
            for j in 0..m.cols() {
                acc += m.get(i, j) * v[j];
            }
            out[i] = acc;
        }
        out
    }

    #[test]
    fn identity_matvec() {
        let m = Matrix::<f64>::identity(3);
        assert_eq!(m.matvec(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn zero_matvec() {
        let m = Matrix::<f64>::zeros(2, 3);
        assert_eq!(m.matvec(&[4.0, -1.0, 9.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn matvec_matches_naive_loop() {
        let mut rng = SeededRng::new(11);
        let m = Matrix::<f64>::from_fn(5, 4, |_, _| rng.uniform_in(-1.0, 1.0));
        let v: Vec<f64> = (0..4).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let got = m.matvec(&v).unwrap();
        let want = naive_matvec(&m, &v);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-14, "{g} vs {w}");
        }
        // long rows exercise the unrolled accumulation path
        let m = Matrix::<f64>::from_fn(3, 37, |_, _| rng.uniform_in(-1.0, 1.0));
        let v: Vec<f64> = (0..37).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        for (g, w) in m.matvec(&v).unwrap().iter().zip(&naive_matvec(&m, &v)) {
            assert!((g - w).abs() < 1e-13);
        }
    }

    #[test]
    fn matvec_shape_error_reports_both_shapes() {
        let m = Matrix::<f32>::zeros(2, 3);
        let err = m.matvec(&[1.0, 2.0]).unwrap_err().to_string();
        assert!(err.contains("2x3"), "{err}");
        assert!(err.contains("found 2"), "{err}");
    }

    #[test]
    fn matvec_t_matches_transpose() {
        let mut rng = SeededRng::new(3);
        let m = Matrix::<f64>::from_fn(4, 6, |_, _| rng.uniform_in(-1.0, 1.0));
        let v: Vec<f64> = (0..4).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let t = Matrix::from_fn(6, 4, |i, j| m.get(j, i));
        let a = m.matvec_t(&v).unwrap();
        let b = naive_matvec(&t, &v);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn outer_small_cases() {
        let m = outer(&[1.0f64, 0.0], &[2.0, 3.0]);
        assert_eq!(m.as_slice(), &[2.0, 3.0, 0.0, 0.0]);
        let z = outer(&[0.0f64, 0.0], &[5.0, -2.0, 1.0]);
        assert!(z.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn outer_matches_naive_loop() {
        let mut rng = SeededRng::new(5);
        let a: Vec<f64> = (0..4).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
        let b: Vec<f64> = (0..3).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
        let m = outer(&a, &b);
        assert_eq!(m.shape(), (4, 3));
        for i in 0..4 {
            for j in 0..3 {
                assert_eq!(m.get(i, j), a[i] * b[j]);
            }
        }
        let mut acc = Matrix::<f64>::zeros(4, 3);
        acc.add_outer(1.0, &a, &b).unwrap();
        assert_eq!(acc, m);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = Matrix::<f32>::init_uniform(&mut SeededRng::new(9), 7, 16);
        let b = Matrix::<f32>::init_uniform(&mut SeededRng::new(9), 7, 16);
        assert_eq!(a, b);
        let bound = (1.0f32 / 16.0).sqrt();
        assert!(a.as_slice().iter().all(|x| x.abs() <= bound));
    }

    #[test]
    fn init_mean_within_three_sigma() {
        let cols = 4;
        let m = Matrix::<f64>::init_uniform(&mut SeededRng::new(2024), 25_000, cols);
        let n = m.len() as f64;
        let mean = m.as_slice().iter().sum::<f64>() / n;
        let bound = (1.0 / cols as f64).sqrt();
        // variance of U(-b, b) is b^2 / 3
        let sigma = (bound * bound / 3.0 / n).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean}, sigma {sigma}");
    }
}
