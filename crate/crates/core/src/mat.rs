//! Dense row-major matrix used for every tensor in the model.
//!
//! Deliberately minimal: the model only needs a handful of products and
//! element-wise maps, and keeping the loops explicit makes the floating point
//! evaluation order part of the contract (training is required to be
//! bit-reproducible for a fixed seed).

use crate::scalar::Scalar;

/// Dense row-major matrix. Row vectors are represented as `1 x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![T::ZERO; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape {rows}x{cols} needs {} values", rows * cols);
        Mat { rows, cols, data }
    }

    /// Builds a matrix from `rows x cols` values given in row-major order as f64.
    pub fn from_rows_f64(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend(row.iter().map(|&x| T::from_f64(x)));
        }
        Mat { rows: r, cols: c, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::ONE;
        }
        m
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

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self + other`, element-wise.
    pub fn add(&self, other: &Mat<T>) -> Self {
        assert_eq!(self.shape(), other.shape(), "add shape mismatch");
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Mat { rows: self.rows, cols: self.cols, data }
    }

    /// `self += other * s`, element-wise.
    pub fn add_scaled_assign(&mut self, other: &Mat<T>, s: T) {
        assert_eq!(self.shape(), other.shape(), "add_scaled shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b * s;
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    pub fn scale_assign(&mut self, s: T) {
        for x in &mut self.data {
            *x *= s;
        }
    }

    /// `self (m x k) * b (k x n) -> m x n`.
    pub fn matmul(&self, b: &Mat<T>) -> Mat<T> {
        assert_eq!(self.cols, b.rows, "matmul {}x{} * {}x{}", self.rows, self.cols, b.rows, b.cols);
        let (m, k, n) = (self.rows, self.cols, b.cols);
        let mut out = Mat::zeros(m, n);
        for i in 0..m {
            let arow = self.row(i);
            let orow = &mut out.data[i * n..(i + 1) * n];
            for (p, &a) in arow.iter().enumerate().take(k) {
                let brow = &b.data[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += a * bv;
                }
            }
        }
        out
    }

    /// `self (m x k) * b^T (k x n) -> m x n` where `b` is stored `n x k`.
    pub fn matmul_nt(&self, b: &Mat<T>) -> Mat<T> {
        assert_eq!(self.cols, b.cols, "matmul_nt {}x{} * ({}x{})^T", self.rows, self.cols, b.rows, b.cols);
        let (m, n) = (self.rows, b.rows);
        let mut out = Mat::zeros(m, n);
        for i in 0..m {
            let arow = self.row(i);
            let orow = &mut out.data[i * n..(i + 1) * n];
            for (j, o) in orow.iter_mut().enumerate().take(n) {
                *o = dot(arow, b.row(j));
            }
        }
        out
    }

    /// `self^T (k x m) * b (m x n) -> k x n` where `self` is stored `m x k`.
    pub fn matmul_tn(&self, b: &Mat<T>) -> Mat<T> {
        assert_eq!(self.rows, b.rows, "matmul_tn ({}x{})^T * {}x{}", self.rows, self.cols, b.rows, b.cols);
        let (k, n) = (self.cols, b.cols);
        let mut out = Mat::zeros(k, n);
        for i in 0..self.rows {
            let arow = self.row(i);
            let brow = b.row(i);
            for (p, &a) in arow.iter().enumerate().take(k) {
                let orow = &mut out.data[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += a * bv;
                }
            }
        }
        out
    }

    /// Sum over rows, yielding a `1 x cols` matrix. Rows are accumulated in
    /// ascending row order so the result is reproducible bit-for-bit.
    pub fn col_sum(&self) -> Mat<T> {
        let mut out = Mat::zeros(1, self.cols);
        for r in 0..self.rows {
            for (o, &v) in out.data.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Converts the element type, used when loading checkpoints of a
    /// different width than requested.
    pub fn cast<U: Scalar>(&self) -> Mat<U> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| U::from_f64(x.to_f64())).collect(),
        }
    }
}

/// Dot product accumulated left to right.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut s = T::ZERO;
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Cosine similarity of two equal-length vectors; zero if either has zero norm.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    let num = dot(a, b).to_f64();
    let na = dot(a, a).to_f64().sqrt();
    let nb = dot(b, b).to_f64().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        num / (na * nb)
    }
}

/// Numerically stable softmax of a slice, written into a new vector.
pub fn softmax_slice<T: Scalar>(x: &[T]) -> Vec<T> {
    assert!(!x.is_empty(), "softmax of empty slice");
    let mut mx = x[0];
    for &v in &x[1..] {
        mx = mx.max(v);
    }
    let mut out: Vec<T> = x.iter().map(|&v| (v - mx).exp()).collect();
    let mut sum = T::ZERO;
    for &v in &out {
        sum += v;
    }
    for v in &mut out {
        *v = *v / sum;
    }
    out
}

/// `logsumexp` of a slice, stable under large magnitudes.
pub fn logsumexp<T: Scalar>(x: &[T]) -> T {
    assert!(!x.is_empty(), "logsumexp of empty slice");
    let mut mx = x[0];
    for &v in &x[1..] {
        mx = mx.max(v);
    }
    let mut sum = T::ZERO;
    for &v in x {
        sum += (v - mx).exp();
    }
    mx + sum.ln()
}
