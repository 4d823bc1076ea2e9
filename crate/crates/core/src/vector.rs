//! Fixed-capacity state vectors for the factor dimensions the library supports.

use std::ops::{Add, Mul, Neg, Sub};

/// Largest factor dimension handled anywhere in the crate.
pub const MAX_DIM: usize = 2;

/// A vector in ℝ^d for d ∈ {1, 2}, stored inline so hot loops never allocate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vector {
    data: [f64; MAX_DIM],
    dim: usize,
}

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "unsupported dimension {dim}");
        Self { data: [0.0; MAX_DIM], dim }
    }

    pub fn scalar(x: f64) -> Self {
        Self { data: [x, 0.0], dim: 1 }
    }

    pub fn from_slice(xs: &[f64]) -> Self {
        let mut v = Self::zeros(xs.len());
        v.data[..xs.len()].copy_from_slice(xs);
        v
    }

    pub fn filled(dim: usize, x: f64) -> Self {
        let mut v = Self::zeros(dim);
        v.data[..dim].iter_mut().for_each(|c| *c = x);
        v
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data[..self.dim]
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data[..self.dim]
    }

    /// First component; the whole value when `dim == 1`.
    #[inline]
    pub fn x(&self) -> f64 {
        self.data[0]
    }

    #[inline]
    pub fn dot(&self, other: &Vector) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        self.as_slice().iter().zip(other.as_slice()).map(|(a, b)| a * b).sum()
    }

    #[inline]
    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Vector {
        let mut out = *self;
        out.as_mut_slice().iter_mut().for_each(|c| *c = f(*c));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|c| c.is_finite())
    }
}

impl Add for Vector {
    type Output = Vector;
    fn add(mut self, rhs: Vector) -> Vector {
        debug_assert_eq!(self.dim, rhs.dim);
        for k in 0..self.dim {
            self.data[k] += rhs.data[k];
        }
        self
    }
}

impl Sub for Vector {
    type Output = Vector;
    fn sub(mut self, rhs: Vector) -> Vector {
        debug_assert_eq!(self.dim, rhs.dim);
        for k in 0..self.dim {
            self.data[k] -= rhs.data[k];
        }
        self
    }
}

impl Mul<f64> for Vector {
    type Output = Vector;
    fn mul(self, rhs: f64) -> Vector {
        self.map(|c| c * rhs)
    }
}

impl Neg for Vector {
    type Output = Vector;
    fn neg(self) -> Vector {
        self.map(|c| -c)
    }
}

/// Square matrix of size `dim ≤ MAX_DIM`, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Matrix {
    data: [[f64; MAX_DIM]; MAX_DIM],
    dim: usize,
}

impl Matrix {
    pub fn identity(dim: usize) -> Self {
        let mut m = Self { data: [[0.0; MAX_DIM]; MAX_DIM], dim };
        for k in 0..dim {
            m.data[k][k] = 1.0;
        }
        m
    }

    pub fn scalar(x: f64) -> Self {
        let mut m = Self::identity(1);
        m.data[0][0] = x;
        m
    }

    /// Builds from nested rows; `None` if the rows are not square or too large.
    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Self> {
        let dim = rows.len();
        if dim == 0 || dim > MAX_DIM || rows.iter().any(|r| r.len() != dim) {
            return None;
        }
        let mut m = Self::identity(dim);
        for (i, row) in rows.iter().enumerate() {
            m.data[i][..dim].copy_from_slice(row);
        }
        Some(m)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i][j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| self.data[i][..self.dim].to_vec()).collect()
    }

    #[inline]
    pub fn mul_vec(&self, v: &Vector) -> Vector {
        let mut out = Vector::zeros(self.dim);
        for i in 0..self.dim {
            out.as_mut_slice()[i] = (0..self.dim).map(|j| self.data[i][j] * v.as_slice()[j]).sum();
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = *self;
        for i in 0..self.dim {
            for j in 0..self.dim {
                t.data[i][j] = self.data[j][i];
            }
        }
        t
    }

    pub fn frobenius_norm(&self) -> f64 {
        (0..self.dim)
            .flat_map(|i| (0..self.dim).map(move |j| (i, j)))
            .map(|(i, j)| self.data[i][j].powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Smallest eigenvalue of the symmetric part (A + Aᵀ)/2.
    pub fn min_symmetric_eigenvalue(&self) -> f64 {
        match self.dim {
            1 => self.data[0][0],
            _ => {
                let a = self.data[0][0];
                let d = self.data[1][1];
                let b = 0.5 * (self.data[0][1] + self.data[1][0]);
                let mean = 0.5 * (a + d);
                let rad = (0.25 * (a - d).powi(2) + b * b).sqrt();
                mean - rad
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_and_norms() {
        let a = Vector::from_slice(&[3.0, 4.0]);
        assert_eq!(a.norm(), 5.0);
        let b = a - Vector::from_slice(&[1.0, 1.0]);
        assert_eq!(b.as_slice(), &[2.0, 3.0]);
        assert_eq!((b * 2.0).as_slice(), &[4.0, 6.0]);
        assert_eq!(a.dot(&b), 18.0);
    }

    #[test]
    fn symmetric_eigenvalue_of_rotation_part_ignored() {
        // Antisymmetric part does not affect the quadratic form.
        let m = Matrix::from_rows(&[vec![1.0, 5.0], vec![-5.0, 2.0]]).unwrap();
        assert!((m.min_symmetric_eigenvalue() - 1.0).abs() < 1e-15);
    }
}
