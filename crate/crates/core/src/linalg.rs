//! Dense row-major matrices over real or complex scalars.
//!
//! Everything in this crate works with small dense matrices (a few hundred
//! agents at most), so storage is a flat `Vec` and products are the naive
//! triple loop.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_traits::{Num, One, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::scalar::{Real, C};

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

/// Serialized as a list of rows.
impl<S: Serialize> Serialize for Matrix<S> {
    fn serialize<Ser: Serializer>(&self, ser: Ser) -> Result<Ser::Ok, Ser::Error> {
        let empty: &[S] = &[];
        ser.collect_seq((0..self.rows).map(|i| {
            if self.cols == 0 { empty } else { &self.data[i * self.cols..(i + 1) * self.cols] }
        }))
    }
}

impl<'de, S: Copy + Deserialize<'de>> Deserialize<'de> for Matrix<S> {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<S>>::deserialize(de)?;
        Matrix::from_rows(&rows).ok_or_else(|| serde::de::Error::custom("ragged matrix rows"))
    }
}

impl<S: Copy> Matrix<S> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    /// Builds from a list of rows; `None` when the rows are ragged.
    pub fn from_rows(rows: &[Vec<S>]) -> Option<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return None;
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Some(Self::from_vec(n_rows, n_cols, data))
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<S> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<S>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn map<U: Copy>(&self, f: impl Fn(S) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().copied().map(f).collect(),
        }
    }

    /// Copy of the block `[r0, r1) x [c0, c1)`.
    pub fn block(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> Self {
        Self::from_fn(r1 - r0, c1 - c0, |i, j| self[(r0 + i, c0 + j)])
    }
}

impl<S: Copy + Num> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_vec(rows, cols, vec![S::zero(); rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { S::one() } else { S::zero() })
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "matmul dimension mismatch");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a.is_zero() {
                    continue;
                }
                for j in 0..rhs.cols {
                    let idx = i * rhs.cols + j;
                    out.data[idx] = out.data[idx] + a * rhs[(k, j)];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[S]) -> Vec<S> {
        assert_eq!(self.cols, v.len(), "matrix-vector dimension mismatch");
        (0..self.rows)
            .map(|i| dot(self.row(i), v))
            .collect()
    }

    pub fn scale(&self, s: S) -> Self {
        self.map(|x| x * s)
    }
}

/// Bilinear dot product `x^T y` (no conjugation).
pub fn dot<S: Copy + Num>(x: &[S], y: &[S]) -> S {
    x.iter()
        .zip(y)
        .fold(S::zero(), |acc, (&a, &b)| acc + a * b)
}

impl<S> Index<(usize, usize)> for Matrix<S> {
    type Output = S;
    fn index(&self, (i, j): (usize, usize)) -> &S {
        &self.data[i * self.cols + j]
    }
}

impl<S> IndexMut<(usize, usize)> for Matrix<S> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut S {
        &mut self.data[i * self.cols + j]
    }
}

impl<S: Copy + Num> Add for &Matrix<S> {
    type Output = Matrix<S>;
    fn add(self, rhs: Self) -> Matrix<S> {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a + b).collect(),
        }
    }
}

impl<S: Copy + Num> Sub for &Matrix<S> {
    type Output = Matrix<S>;
    fn sub(self, rhs: Self) -> Matrix<S> {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a - b).collect(),
        }
    }
}

impl<S: Copy + Num> Mul for &Matrix<S> {
    type Output = Matrix<S>;
    fn mul(self, rhs: Self) -> Matrix<S> {
        self.matmul(rhs)
    }
}

impl<T: Real> Matrix<T> {
    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        (self - other).max_abs()
    }

    pub fn to_complex(&self) -> Matrix<C<T>> {
        self.map(|x| C::new(x, T::zero()))
    }

    /// Largest deviation from symmetry.
    pub fn asymmetry(&self) -> T {
        assert!(self.is_square());
        let mut m = T::zero();
        for i in 0..self.rows {
            for j in 0..i {
                m = m.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        m
    }

    pub fn symmetrize(&self) -> Self {
        let t = self.transpose();
        (self + &t).scale(T::lit(0.5))
    }

    pub fn to_f64(&self) -> Matrix<f64> {
        self.map(Real::as_f64)
    }
}

impl<T: Real> Matrix<C<T>> {
    pub fn max_norm(&self) -> T {
        self.data.iter().fold(T::zero(), |m, z| m.max(z.norm()))
    }

    pub fn max_norm_diff(&self, other: &Self) -> T {
        (self - other).max_norm()
    }

    pub fn max_imag(&self) -> T {
        self.data.iter().fold(T::zero(), |m, z| m.max(z.im.abs()))
    }

    pub fn real_part(&self) -> Matrix<T> {
        self.map(|z| z.re)
    }

    pub fn conj(&self) -> Self {
        self.map(|z| z.conj())
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order together with the matrix whose
/// columns are the matching orthonormal eigenvectors. Only the upper
/// triangle of `a` is trusted; the input is symmetrized first.
pub fn symmetric_eigen<T: Real>(a: &Matrix<T>) -> (Vec<T>, Matrix<T>) {
    assert!(a.is_square(), "symmetric_eigen needs a square matrix");
    let n = a.rows();
    let mut m = a.symmetrize();
    let mut v = Matrix::<T>::identity(n);
    let scale = m.max_abs().max(T::min_positive_value());
    let two = T::lit(2.0);

    for _sweep in 0..100 {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off = off + m[(p, q)] * m[(p, q)];
            }
        }
        if off.sqrt() <= T::epsilon() * scale * T::lit(1e-2) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= T::min_positive_value() {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (two * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].partial_cmp(&m[(j, j)]).expect("finite eigenvalues"));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (values, vectors)
}

impl<S: Copy + Zero + One + PartialEq> Matrix<S> {
    pub fn is_identity_pattern(&self) -> bool {
        self.is_square()
            && (0..self.rows).all(|i| {
                (0..self.cols).all(|j| {
                    let x = self[(i, j)];
                    if i == j { x == S::one() } else { x == S::zero() }
                })
            })
    }
}
