//! Dense symmetric matrices and the linear operators W, D and V acting on them.
//!
//! `W(A) = (I - E/m) A (I - E/m)` double-centres a matrix, `D(A)_ij = A_ii + A_jj - 2 A_ij`
//! turns a covariance into pairwise distances, and `V(A) = A - (1/m^2) E A E` removes the
//! component along the all-ones matrix `E`. `W` and `V` are orthogonal projections in the
//! Frobenius inner product; `-D/2` is an oblique projection with the same kernel as `W`.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest `m` for which [`operator_norm`] will build the `d x d` operator matrix.
pub const DEFAULT_OPERATOR_CAP: usize = 64;

/// Symmetry tolerance used when building a [`SymMat`] from a full square matrix.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Symmetric `m x m` matrix stored as its packed upper triangle (row-major, `i <= j`).
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMat {
    dim: usize,
    data: Vec<f64>,
}

#[inline]
fn packed_len(m: usize) -> usize {
    m * (m + 1) / 2
}

impl SymMat {
    pub fn zeros(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::DimTooSmall(m));
        }
        Ok(SymMat {
            dim: m,
            data: vec![0.0; packed_len(m)],
        })
    }

    pub fn identity(m: usize) -> Result<Self> {
        Self::from_fn(m, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    /// The all-ones matrix `E`.
    pub fn ones(m: usize) -> Result<Self> {
        Self::from_fn(m, |_, _| 1.0)
    }

    /// Builds a matrix from `f(i, j)` evaluated for `i <= j` only.
    pub fn from_fn(m: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut out = Self::zeros(m)?;
        let mut k = 0;
        for i in 0..m {
            for j in i..m {
                out.data[k] = f(i, j);
                k += 1;
            }
        }
        Ok(out)
    }

    pub fn from_packed(m: usize, data: Vec<f64>) -> Result<Self> {
        if m < 2 {
            return Err(Error::DimTooSmall(m));
        }
        if data.len() != packed_len(m) {
            return Err(Error::DimMismatch {
                expected: packed_len(m),
                found: data.len(),
            });
        }
        Ok(SymMat { dim: m, data })
    }

    /// Builds a matrix from full rows, checking symmetry within [`SYMMETRY_TOL`]
    /// (relative to the entry magnitude) and storing `(A + A^t) / 2`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        for row in rows {
            if row.len() != m {
                return Err(Error::DimMismatch {
                    expected: m,
                    found: row.len(),
                });
            }
        }
        for (i, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
            }
        }
        for i in 0..m {
            for j in (i + 1)..m {
                let (a, b) = (rows[i][j], rows[j][i]);
                let gap = (a - b).abs();
                if gap > SYMMETRY_TOL * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::NotSymmetric { i, j, gap });
                }
            }
        }
        Self::from_fn(m, |i, j| 0.5 * (rows[i][j] + rows[j][i]))
    }

    /// `u v^t + v u^t`.
    pub fn sym_outer(u: &[f64], v: &[f64]) -> Result<Self> {
        if u.len() != v.len() {
            return Err(Error::DimMismatch {
                expected: u.len(),
                found: v.len(),
            });
        }
        Self::from_fn(u.len(), |i, j| u[i] * v[j] + v[i] * u[j])
    }

    /// Kernel element `e v^t + v e^t` shared by W and D.
    pub fn ones_outer(v: &[f64]) -> Result<Self> {
        Self::from_fn(v.len(), |i, j| v[i] + v[j])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        debug_assert!(j < self.dim);
        i * (2 * self.dim - i + 1) / 2 + (j - i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.index(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.index(i, j);
        self.data[k] = v;
    }

    /// Packed upper triangle, row-major.
    pub fn packed(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j)).collect())
            .collect()
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j)).sum())
            .collect()
    }

    /// Sum over the full `m x m` grid.
    pub fn total_sum(&self) -> f64 {
        self.row_sums().iter().sum()
    }

    pub fn scale(&self, s: f64) -> SymMat {
        SymMat {
            dim: self.dim,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_inner_unchecked(self, self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &SymMat) -> f64 {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Smallest eigenvalue.
    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.to_dmatrix())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    fn zip_with(&self, other: &SymMat, f: impl Fn(f64, f64) -> f64) -> SymMat {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        SymMat {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        }
    }
}

impl fmt::Debug for SymMat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "SymMat(m={})", self.dim)?;
        for row in self.to_rows() {
            writeln!(f, "  {row:?}")?;
        }
        Ok(())
    }
}

impl Add for &SymMat {
    type Output = SymMat;
    fn add(self, rhs: &SymMat) -> SymMat {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &SymMat {
    type Output = SymMat;
    fn sub(self, rhs: &SymMat) -> SymMat {
        self.zip_with(rhs, |a, b| a - b)
    }
}

impl Add for SymMat {
    type Output = SymMat;
    fn add(self, rhs: SymMat) -> SymMat {
        &self + &rhs
    }
}

impl Sub for SymMat {
    type Output = SymMat;
    fn sub(self, rhs: SymMat) -> SymMat {
        &self - &rhs
    }
}

impl Mul<f64> for &SymMat {
    type Output = SymMat;
    fn mul(self, s: f64) -> SymMat {
        self.scale(s)
    }
}

impl Mul<f64> for SymMat {
    type Output = SymMat;
    fn mul(self, s: f64) -> SymMat {
        self.scale(s)
    }
}

impl Neg for &SymMat {
    type Output = SymMat;
    fn neg(self) -> SymMat {
        self.scale(-1.0)
    }
}

fn frobenius_inner_unchecked(a: &SymMat, b: &SymMat) -> f64 {
    let m = a.dim;
    let mut diag = 0.0;
    let mut off = 0.0;
    let mut k = 0;
    for i in 0..m {
        for j in i..m {
            let p = a.data[k] * b.data[k];
            if i == j {
                diag += p;
            } else {
                off += p;
            }
            k += 1;
        }
    }
    diag + 2.0 * off
}

/// Frobenius inner product over the full grid (off-diagonal pairs counted twice).
pub fn frobenius_inner(a: &SymMat, b: &SymMat) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::DimMismatch {
            expected: a.dim,
            found: b.dim,
        });
    }
    Ok(frobenius_inner_unchecked(a, b))
}

pub fn frobenius_norm(a: &SymMat) -> f64 {
    a.frobenius_norm()
}

/// The operators acting on symmetric matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OperatorKind {
    W,
    D,
    V,
    /// `-D/2`.
    HalfNegD,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 4] = [
        OperatorKind::W,
        OperatorKind::D,
        OperatorKind::V,
        OperatorKind::HalfNegD,
    ];

    pub fn label(self) -> &'static str {
        match self {
            OperatorKind::W => "W",
            OperatorKind::D => "D",
            OperatorKind::V => "V",
            OperatorKind::HalfNegD => "-D/2",
        }
    }
}

/// `(I - E/m) A (I - E/m)`, evaluated through row and grand means.
pub fn apply_w(a: &SymMat) -> SymMat {
    let m = a.dim as f64;
    let row_means: Vec<f64> = a.row_sums().iter().map(|s| s / m).collect();
    let grand = row_means.iter().sum::<f64>() / m;
    let mut out = a.clone();
    let mut k = 0;
    for i in 0..a.dim {
        for j in i..a.dim {
            out.data[k] = a.data[k] - row_means[i] - row_means[j] + grand;
            k += 1;
        }
    }
    out
}

/// `D(A)_ij = A_ii + A_jj - 2 A_ij`.
pub fn apply_d(a: &SymMat) -> SymMat {
    let diag = a.diagonal();
    let mut out = a.clone();
    let mut k = 0;
    for i in 0..a.dim {
        for j in i..a.dim {
            out.data[k] = if i == j {
                0.0
            } else {
                diag[i] + diag[j] - 2.0 * a.data[k]
            };
            k += 1;
        }
    }
    out
}

/// `A - (1/m^2) E A E`: subtracts the mean entry from every entry.
pub fn apply_v(a: &SymMat) -> SymMat {
    let m = a.dim as f64;
    let mean = a.total_sum() / (m * m);
    SymMat {
        dim: a.dim,
        data: a.data.iter().map(|v| v - mean).collect(),
    }
}

pub fn apply(kind: OperatorKind, a: &SymMat) -> SymMat {
    match kind {
        OperatorKind::W => apply_w(a),
        OperatorKind::D => apply_d(a),
        OperatorKind::V => apply_v(a),
        OperatorKind::HalfNegD => apply_d(a).scale(-0.5),
    }
}

/// A basis of the operator's kernel: `{e_i e^t + e e_i^t}` for W, D and -D/2, `{E}` for V.
pub fn kernel_basis(kind: OperatorKind, m: usize) -> Result<Vec<SymMat>> {
    if m < 2 {
        return Err(Error::DimTooSmall(m));
    }
    match kind {
        OperatorKind::V => Ok(vec![SymMat::ones(m)?]),
        _ => (0..m)
            .map(|i| {
                let mut unit = vec![0.0; m];
                unit[i] = 1.0;
                SymMat::ones_outer(&unit)
            })
            .collect(),
    }
}

/// Dimension of the vector space of symmetric `m x m` matrices.
pub fn sym_dim(m: usize) -> usize {
    packed_len(m)
}

/// Coordinates of `a` in the orthonormal basis `{e_i e_i^t} ∪ {(e_i e_j^t + e_j e_i^t)/√2, i<j}`,
/// diagonals first, then `(i, j)` lexicographic. Frobenius inner products become dot products.
pub fn to_orthonormal_coords(a: &SymMat) -> Vec<f64> {
    let m = a.dim;
    let mut out = Vec::with_capacity(packed_len(m));
    out.extend((0..m).map(|i| a.get(i, i)));
    for i in 0..m {
        for j in (i + 1)..m {
            out.push(std::f64::consts::SQRT_2 * a.get(i, j));
        }
    }
    out
}

pub fn from_orthonormal_coords(m: usize, coords: &[f64]) -> Result<SymMat> {
    if coords.len() != packed_len(m) {
        return Err(Error::DimMismatch {
            expected: packed_len(m),
            found: coords.len(),
        });
    }
    let mut out = SymMat::zeros(m)?;
    for i in 0..m {
        out.set(i, i, coords[i]);
    }
    let mut k = m;
    for i in 0..m {
        for j in (i + 1)..m {
            out.set(i, j, coords[k] / std::f64::consts::SQRT_2);
            k += 1;
        }
    }
    Ok(out)
}

/// The `d x d` matrix of the operator in the orthonormal basis, `d = m(m+1)/2`.
pub fn operator_matrix(kind: OperatorKind, m: usize) -> Result<DMatrix<f64>> {
    let d = packed_len(m);
    let mut out = DMatrix::zeros(d, d);
    for col in 0..d {
        let mut unit = vec![0.0; d];
        unit[col] = 1.0;
        let basis = from_orthonormal_coords(m, &unit)?;
        let image = to_orthonormal_coords(&apply(kind, &basis));
        for (row, v) in image.into_iter().enumerate() {
            out[(row, col)] = v;
        }
    }
    Ok(out)
}

fn singular_values(kind: OperatorKind, m: usize, cap: usize) -> Result<Vec<f64>> {
    if m < 2 {
        return Err(Error::DimTooSmall(m));
    }
    if m > cap {
        return Err(Error::DimCapExceeded { m, cap });
    }
    let op = operator_matrix(kind, m)?;
    Ok(op.singular_values().iter().copied().collect())
}

/// Largest Frobenius amplification of the operator on `S_m`, with the default cap.
pub fn operator_norm(kind: OperatorKind, m: usize) -> Result<f64> {
    operator_norm_capped(kind, m, DEFAULT_OPERATOR_CAP)
}

pub fn operator_norm_capped(kind: OperatorKind, m: usize, cap: usize) -> Result<f64> {
    Ok(singular_values(kind, m, cap)?
        .into_iter()
        .fold(0.0_f64, f64::max))
}

/// Numerical rank of the operator (singular values above `1e-9` times the largest).
pub fn operator_rank(kind: OperatorKind, m: usize) -> Result<usize> {
    let sv = singular_values(kind, m, DEFAULT_OPERATOR_CAP)?;
    let top = sv.iter().copied().fold(0.0_f64, f64::max);
    Ok(sv.iter().filter(|&&s| s > 1e-9 * top).count())
}

/// Numerical kernel dimension, `m(m+1)/2 - rank`.
pub fn kernel_dim(kind: OperatorKind, m: usize) -> Result<usize> {
    Ok(packed_len(m) - operator_rank(kind, m)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> SymMat {
        SymMat::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn rejects_m_below_two() {
        assert!(matches!(SymMat::zeros(1), Err(Error::DimTooSmall(1))));
        assert!(matches!(SymMat::zeros(0), Err(Error::DimTooSmall(0))));
        assert!(kernel_basis(OperatorKind::W, 1).is_err());
    }

    #[test]
    fn from_rows_symmetrizes_and_rejects_asymmetry() {
        let a = SymMat::from_rows(&[vec![1.0, 2.0 + 1e-12], vec![2.0, 3.0]]).unwrap();
        assert!((a.get(0, 1) - (2.0 + 0.5e-12)).abs() < 1e-15);
        let err = SymMat::from_rows(&[vec![1.0, 2.0], vec![2.1, 3.0]]).unwrap_err();
        assert!(matches!(err, Error::NotSymmetric { i: 0, j: 1, .. }));
        assert!(SymMat::from_rows(&[vec![1.0, 2.0], vec![2.0]]).is_err());
    }

    #[test]
    fn w_examples() {
        let e3 = SymMat::ones(3).unwrap();
        assert!(apply_w(&e3).max_abs() < 1e-15);

        let a = mat(&[&[7.0, 5.0], &[5.0, 6.0]]);
        let w = apply_w(&a);
        let expected = mat(&[&[0.75, -0.75], &[-0.75, 0.75]]);
        assert!(w.max_abs_diff(&expected) < 1e-12);
        for s in w.row_sums() {
            assert!(s.abs() < 1e-12);
        }

        let k = SymMat::ones_outer(&[1.0, 2.0, 3.0]).unwrap();
        assert!(apply_w(&k).max_abs() < 1e-12);
    }

    #[test]
    fn d_examples() {
        let a = mat(&[&[7.0, 5.0], &[5.0, 6.0]]);
        assert_eq!(apply_d(&a), mat(&[&[0.0, 3.0], &[3.0, 0.0]]));

        let e = SymMat::ones(4).unwrap().scale(2.5);
        assert_eq!(apply_d(&e).max_abs(), 0.0);

        // m=3 tree: leaf 1 on its own branch (σ11 + σ12 = 2 after sliding), leaves 2,3 share σ12.
        let sigma = mat(&[&[1.0, 0.0, 0.0], &[0.0, 3.0, 1.0], &[0.0, 1.0, 4.0]]);
        let expected = mat(&[&[0.0, 4.0, 5.0], &[4.0, 0.0, 5.0], &[5.0, 5.0, 0.0]]);
        assert_eq!(apply_d(&sigma), expected);
    }

    #[test]
    fn v_examples() {
        let a = mat(&[&[7.0, 5.0], &[5.0, 6.0]]);
        let expected = mat(&[&[1.25, -0.75], &[-0.75, 0.25]]);
        assert!(apply_v(&a).max_abs_diff(&expected) < 1e-12);

        // closed form for the m=2 tree with σ1=2, σ2=1
        let (s1, s2) = (2.0, 1.0);
        let closed = mat(&[
            &[(3.0 * s1 - s2) / 4.0, -(s1 + s2) / 4.0],
            &[-(s1 + s2) / 4.0, (3.0 * s2 - s1) / 4.0],
        ]);
        assert!(apply_v(&a).max_abs_diff(&closed) < 1e-12);

        let e = SymMat::ones(3).unwrap().scale(-4.0);
        assert!(apply_v(&e).max_abs() < 1e-15);

        let z = mat(&[&[1.0, -2.0, 0.5], &[-2.0, 3.0, 0.0], &[0.5, 0.0, -1.0]]);
        assert!(z.total_sum().abs() < 1e-15);
        assert!(apply_v(&z).max_abs_diff(&z) < 1e-15);
    }

    #[test]
    fn v_differs_from_d_after_d() {
        let i2 = SymMat::identity(2).unwrap();
        let d = apply_d(&i2);
        assert!(apply_v(&d).max_abs_diff(&d) > 0.1);
    }

    #[test]
    fn kernel_bases() {
        let w2 = kernel_basis(OperatorKind::W, 2).unwrap();
        assert_eq!(
            w2,
            vec![
                mat(&[&[2.0, 1.0], &[1.0, 0.0]]),
                mat(&[&[0.0, 1.0], &[1.0, 2.0]])
            ]
        );
        assert_eq!(kernel_basis(OperatorKind::D, 2).unwrap(), w2);
        assert_eq!(
            kernel_basis(OperatorKind::V, 3).unwrap(),
            vec![SymMat::ones(3).unwrap()]
        );
        for kind in OperatorKind::ALL {
            for m in 2..7 {
                for b in kernel_basis(kind, m).unwrap() {
                    assert!(apply(kind, &b).max_abs() < 1e-12, "{kind:?} m={m}");
                }
            }
        }
    }

    #[test]
    fn operator_norm_examples() {
        assert!((operator_norm(OperatorKind::W, 5).unwrap() - 1.0).abs() < 1e-9);
        assert!((operator_norm(OperatorKind::HalfNegD, 4).unwrap() - 2.0).abs() < 1e-9);
        assert!(
            (operator_norm(OperatorKind::HalfNegD, 3).unwrap() - 1.7320508075688772).abs() < 1e-9
        );
        assert!(matches!(
            operator_norm(OperatorKind::W, 65),
            Err(Error::DimCapExceeded { m: 65, cap: 64 })
        ));
    }

    #[test]
    fn half_neg_d_lower_bound_witness() {
        // -D/2 (I - E/m) has -1 off the diagonal, so its norm ratio is exactly √m.
        for m in 2..8 {
            let a = &SymMat::identity(m).unwrap() - &SymMat::ones(m).unwrap().scale(1.0 / m as f64);
            let img = apply(OperatorKind::HalfNegD, &a);
            assert!((img.frobenius_norm().powi(2) - (m * (m - 1)) as f64).abs() < 1e-10);
            assert!((a.frobenius_norm() - ((m - 1) as f64).sqrt()).abs() < 1e-12);
            let ratio = img.frobenius_norm() / a.frobenius_norm();
            assert!(ratio <= operator_norm(OperatorKind::HalfNegD, m).unwrap() + 1e-9);
        }
    }

    #[test]
    fn frobenius_examples() {
        let m2 = &SymMat::identity(2).unwrap() - &SymMat::ones(2).unwrap().scale(0.5);
        assert!((frobenius_norm(&m2) - 1.0).abs() < 1e-15);
        assert_eq!(SymMat::zeros(3).unwrap().frobenius_norm(), 0.0);
        let b = mat(&[&[1.0, 2.0], &[2.0, 3.0]]);
        assert_eq!(frobenius_inner(&SymMat::ones(2).unwrap(), &b).unwrap(), 8.0);
        assert!(frobenius_inner(&SymMat::ones(2).unwrap(), &SymMat::ones(3).unwrap()).is_err());
    }

    #[test]
    fn orthonormal_coords_round_trip_and_preserve_inner() {
        let a = mat(&[&[1.0, -2.0, 0.5], &[-2.0, 3.0, 4.0], &[0.5, 4.0, -1.5]]);
        let b = mat(&[&[0.3, 1.0, 2.0], &[1.0, -3.0, 0.0], &[2.0, 0.0, 7.0]]);
        let ca = to_orthonormal_coords(&a);
        let cb = to_orthonormal_coords(&b);
        let dot: f64 = ca.iter().zip(&cb).map(|(x, y)| x * y).sum();
        assert!((dot - frobenius_inner(&a, &b).unwrap()).abs() < 1e-12);
        assert!(from_orthonormal_coords(3, &ca).unwrap().max_abs_diff(&a) < 1e-15);
    }

    #[test]
    fn ranks_and_kernel_dims() {
        for m in 2..9 {
            assert_eq!(operator_rank(OperatorKind::W, m).unwrap(), m * (m - 1) / 2);
            assert_eq!(operator_rank(OperatorKind::D, m).unwrap(), m * (m - 1) / 2);
            assert_eq!(
                operator_rank(OperatorKind::V, m).unwrap(),
                m * (m + 1) / 2 - 1
            );
            assert_eq!(kernel_dim(OperatorKind::W, m).unwrap(), m);
            assert_eq!(kernel_dim(OperatorKind::V, m).unwrap(), 1);
        }
    }
}
