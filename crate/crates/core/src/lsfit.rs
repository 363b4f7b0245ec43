//! Frobenius least squares under linear hypotheses `V ∈ L`.
//!
//! Projection onto `span(basis)` uses a thin QR factorization of the basis in orthonormal
//! coordinates of the symmetric matrices. [`ls_pair`] fits `V̂`
//! in `L` and `Ŵ` in `W(L)` and reports whether `W` of the first fit equals the second,
//! which is guaranteed when `W(L) ⊆ L`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::symcore::{
    apply_w, frobenius_inner, from_orthonormal_coords, sym_dim, to_orthonormal_coords, SymMat,
};

/// Gram matrices with a larger condition number are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Relative drop tolerance for pivoted Gram–Schmidt pruning.
pub const PRUNE_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct MatrixSubspace {
    dim_m: usize,
    basis: Vec<SymMat>,
    gram: DMatrix<f64>,
    condition: f64,
    /// Thin QR of the basis coordinates.
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

fn gram_of(basis: &[SymMat]) -> DMatrix<f64> {
    let k = basis.len();
    DMatrix::from_fn(k, k, |a, b| {
        frobenius_inner(&basis[a], &basis[b]).expect("basis dims checked")
    })
}

fn condition_of(gram: &DMatrix<f64>) -> f64 {
    if gram.nrows() == 0 {
        return 1.0;
    }
    let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

impl MatrixSubspace {
    /// Subspace spanned by a linearly independent basis (may be empty).
    pub fn new(dim_m: usize, basis: Vec<SymMat>) -> Result<Self> {
        if dim_m < 2 {
            return Err(Error::DimTooSmall(dim_m));
        }
        for b in &basis {
            if b.dim() != dim_m {
                return Err(Error::DimMismatch {
                    expected: dim_m,
                    found: b.dim(),
                });
            }
        }
        let gram = gram_of(&basis);
        let condition = condition_of(&gram);
        if !(condition < MAX_CONDITION) {
            return Err(Error::RankDeficient(condition));
        }
        let coords = DMatrix::from_fn(sym_dim(dim_m), basis.len(), |row, col| {
            to_orthonormal_coords(&basis[col])[row]
        });
        let (q, r) = if basis.is_empty() {
            (coords, DMatrix::zeros(0, 0))
        } else {
            let qr = coords.qr();
            (qr.q(), qr.r())
        };
        Ok(MatrixSubspace {
            dim_m,
            basis,
            gram,
            condition,
            q,
            r,
        })
    }

    /// As [`MatrixSubspace::new`], additionally requiring every basis element to have
    /// zero entry sum (within `1e-9` relative), i.e. `L ⊆ V(S_m)`.
    pub fn new_in_v_space(dim_m: usize, basis: Vec<SymMat>) -> Result<Self> {
        for (index, b) in basis.iter().enumerate() {
            let sum = b.total_sum();
            if sum.abs() > 1e-9 * (1.0 + b.frobenius_norm()) {
                return Err(Error::NotInVSpace { index, sum });
            }
        }
        Self::new(dim_m, basis)
    }

    /// Span of an arbitrary generating set, pruned to an independent subset by pivoted
    /// Gram–Schmidt (drop tolerance `1e-10 * max ||B_i||`).
    pub fn spanned_by(dim_m: usize, generators: Vec<SymMat>) -> Result<Self> {
        let scale = generators
            .iter()
            .map(SymMat::frobenius_norm)
            .fold(0.0_f64, f64::max);
        let kept = prune_independent(&generators, scale);
        Self::new(
            dim_m,
            kept.into_iter().map(|i| generators[i].clone()).collect(),
        )
    }

    pub fn dim_m(&self) -> usize {
        self.dim_m
    }

    pub fn basis(&self) -> &[SymMat] {
        &self.basis
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Dimension of the subspace.
    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    /// `W(L)`, spanned by `{W(B_i)}` pruned to an independent set. The drop tolerance is
    /// relative to `L`'s basis, so images of kernel directions are discarded.
    pub fn w_image(&self) -> Result<MatrixSubspace> {
        let images: Vec<SymMat> = self.basis.iter().map(apply_w).collect();
        let scale = self
            .basis
            .iter()
            .map(SymMat::frobenius_norm)
            .fold(0.0_f64, f64::max);
        let kept = prune_independent(&images, scale);
        Self::new(
            self.dim_m,
            kept.into_iter().map(|i| images[i].clone()).collect(),
        )
    }
}

/// Indices of a maximal independent subset, chosen by largest remaining residual norm.
/// Residuals at or below `PRUNE_TOL * scale` count as dependent.
fn prune_independent(gens: &[SymMat], scale: f64) -> Vec<usize> {
    let tol = PRUNE_TOL * scale;
    let mut residuals: Vec<SymMat> = gens.to_vec();
    let mut remaining: Vec<usize> = (0..gens.len()).collect();
    let mut kept = Vec::new();
    while !remaining.is_empty() {
        let (pos, norm) = remaining
            .iter()
            .enumerate()
            .map(|(p, &i)| (p, residuals[i].frobenius_norm()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty");
        if norm <= tol || norm == 0.0 {
            break;
        }
        let pivot = remaining.swap_remove(pos);
        kept.push(pivot);
        let q = residuals[pivot].scale(1.0 / norm);
        for &i in &remaining {
            let c = frobenius_inner(&residuals[i], &q).expect("same dims");
            residuals[i] = &residuals[i] - &q.scale(c);
        }
    }
    kept.sort_unstable();
    kept
}

/// Least-squares fit of `M` in `L` and its coefficients in `L`'s basis.
#[derive(Clone, Debug)]
pub struct Projection {
    pub fit: SymMat,
    pub coefficients: Vec<f64>,
}

/// `argmin_{A in L} ||M - A||_F`.
pub fn project(m: &SymMat, l: &MatrixSubspace) -> Result<Projection> {
    if m.dim() != l.dim_m {
        return Err(Error::DimMismatch {
            expected: l.dim_m,
            found: m.dim(),
        });
    }
    if l.basis.is_empty() {
        return Ok(Projection {
            fit: SymMat::zeros(l.dim_m)?,
            coefficients: vec![],
        });
    }
    let z = l.q.transpose() * DVector::from_vec(to_orthonormal_coords(m));
    let fit = from_orthonormal_coords(l.dim_m, (&l.q * &z).as_slice())?;
    let coef =
        l.r.solve_upper_triangular(&z)
            .ok_or(Error::RankDeficient(l.condition))?;
    Ok(Projection {
        fit,
        coefficients: coef.iter().copied().collect(),
    })
}

/// True iff `W(B)` lies in `L` for every basis element `B`.
pub fn w_invariance_check(l: &MatrixSubspace) -> Result<bool> {
    for b in &l.basis {
        let wb = apply_w(b);
        let residual = &wb - &project(&wb, l)?.fit;
        if residual.frobenius_norm() > 1e-9 * b.frobenius_norm().max(f64::MIN_POSITIVE) {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Clone, Debug)]
pub struct LsPair {
    /// `V̂_L`, the fit of `V̂` in `L`.
    pub v_fit: SymMat,
    /// `Ŵ_L`, the fit of `Ŵ` in `W(L)`.
    pub w_fit: SymMat,
    /// Whether `Ŵ_L = W(V̂_L)` within `1e-8 (1 + ||V̂||_F)`.
    pub consistent: bool,
    pub gap: f64,
}

pub fn ls_pair(vhat: &SymMat, what: &SymMat, l: &MatrixSubspace) -> Result<LsPair> {
    if vhat.dim() != what.dim() {
        return Err(Error::DimMismatch {
            expected: vhat.dim(),
            found: what.dim(),
        });
    }
    let scale = 1.0 + vhat.frobenius_norm();
    let input_gap = (what - &apply_w(vhat)).frobenius_norm();
    if input_gap > 1e-9 * scale {
        return Err(Error::InconsistentInputs(input_gap));
    }
    let v_fit = project(vhat, l)?.fit;
    let w_fit = project(what, &l.w_image()?)?.fit;
    let gap = (&w_fit - &apply_w(&v_fit)).frobenius_norm();
    Ok(LsPair {
        v_fit,
        w_fit,
        consistent: gap <= 1e-8 * scale,
        gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symcore::apply_v;

    fn mat(rows: &[&[f64]]) -> SymMat {
        SymMat::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn tree_family() -> MatrixSubspace {
        // (1/4)[[σ+2δ, -σ], [-σ, σ-2δ]]
        MatrixSubspace::new_in_v_space(
            2,
            vec![
                mat(&[&[0.25, -0.25], &[-0.25, 0.25]]),
                mat(&[&[0.5, 0.0], &[0.0, -0.5]]),
            ],
        )
        .unwrap()
    }

    fn tilted_line() -> MatrixSubspace {
        // σ1 = 2σ2: (1/4)[[5σ2, -3σ2], [-3σ2, σ2]]
        MatrixSubspace::new_in_v_space(2, vec![mat(&[&[1.25, -0.75], &[-0.75, 0.25]])]).unwrap()
    }

    #[test]
    fn projection_fixes_members() {
        let l = tree_family();
        let m = mat(&[&[0.9, -0.4], &[-0.4, -0.1]]);
        assert!(m.total_sum().abs() < 1e-15);
        let p = project(&m, &l).unwrap();
        assert!(p.fit.max_abs_diff(&m) < 1e-12);
    }

    #[test]
    fn one_dimensional_projection() {
        let l = MatrixSubspace::new(2, vec![mat(&[&[1.0, -1.0], &[-1.0, 1.0]])]).unwrap();
        let p = project(&mat(&[&[1.0, 0.0], &[0.0, 0.0]]), &l).unwrap();
        assert!((p.coefficients[0] - 0.25).abs() < 1e-15);
        assert!(p.fit.max_abs_diff(&mat(&[&[0.25, -0.25], &[-0.25, 0.25]])) < 1e-15);
    }

    #[test]
    fn invariance_examples() {
        assert!(w_invariance_check(&tree_family()).unwrap());
        assert!(!w_invariance_check(&tilted_line()).unwrap());
        // full zero-sum space of S_2
        let full = MatrixSubspace::new_in_v_space(
            2,
            vec![
                mat(&[&[1.0, 0.0], &[0.0, -1.0]]),
                mat(&[&[0.0, 1.0], &[1.0, -2.0]]),
            ],
        )
        .unwrap();
        assert!(w_invariance_check(&full).unwrap());
    }

    #[test]
    fn tilted_line_has_trivial_intersection_with_its_w_image() {
        let l = tilted_line();
        let wl = l.w_image().unwrap();
        assert_eq!(wl.rank(), 1);
        let wb = &wl.basis()[0];
        // W(L̃) = W(L) for the tree family
        assert!(w_invariance_check(&MatrixSubspace::new(2, vec![wb.clone()]).unwrap()).unwrap());
        let residual = wb - &project(wb, &l).unwrap().fit;
        assert!(residual.frobenius_norm() > 0.1 * wb.frobenius_norm());
    }

    #[test]
    fn ls_pair_examples() {
        let vhat = apply_v(&mat(&[&[1.0, 0.0], &[0.0, 0.0]]));
        let what = apply_w(&vhat);

        let tree = ls_pair(&vhat, &what, &tree_family()).unwrap();
        assert!(tree.consistent);

        let tilted = ls_pair(&vhat, &what, &tilted_line()).unwrap();
        assert!(!tilted.consistent);
        // by hand with B = [[5,-3],[-3,1]]: V̂ = [[3/4,-1/4],[-1/4,-1/4]], <V̂,B>/<B,B> = 5/44,
        // W(B) = 3J, so W(V̂_L) = (15/44) J while Ŵ_L = Ŵ = (1/4) J, J = [[1,-1],[-1,1]]
        assert!((tilted.v_fit.get(0, 0) - 25.0 / 44.0).abs() < 1e-15);
        assert!((tilted.w_fit.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((apply_w(&tilted.v_fit).get(0, 0) - 15.0 / 44.0).abs() < 1e-15);

        let member = mat(&[&[1.25, -0.75], &[-0.75, 0.25]]).scale(0.3);
        let exact = ls_pair(&member, &apply_w(&member), &tilted_line()).unwrap();
        assert!(exact.consistent);
    }

    #[test]
    fn ls_pair_rejects_mismatched_w() {
        let vhat = apply_v(&mat(&[&[1.0, 0.0], &[0.0, 0.0]]));
        let bad = &apply_w(&vhat) + &SymMat::identity(2).unwrap().scale(1e-3);
        assert!(matches!(
            ls_pair(&vhat, &bad, &tree_family()),
            Err(Error::InconsistentInputs(_))
        ));
    }

    #[test]
    fn rank_deficient_and_off_space_bases() {
        let b = mat(&[&[1.0, -1.0], &[-1.0, 1.0]]);
        assert!(matches!(
            MatrixSubspace::new(2, vec![b.clone(), b.scale(2.0)]),
            Err(Error::RankDeficient(_))
        ));
        assert!(matches!(
            MatrixSubspace::new_in_v_space(2, vec![SymMat::identity(2).unwrap()]),
            Err(Error::NotInVSpace { index: 0, .. })
        ));
        let pruned =
            MatrixSubspace::spanned_by(2, vec![b.clone(), b.scale(2.0), SymMat::zeros(2).unwrap()])
                .unwrap();
        assert_eq!(pruned.rank(), 1);
    }

    #[test]
    fn empty_subspace_projects_to_zero() {
        let l = MatrixSubspace::new(3, vec![]).unwrap();
        let p = project(&SymMat::identity(3).unwrap(), &l).unwrap();
        assert_eq!(p.fit.max_abs(), 0.0);
        assert!(w_invariance_check(&l).unwrap());
    }
}
