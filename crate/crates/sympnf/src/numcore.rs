//! Dense matrix helpers and the tolerance policy behind every rank decision.

use nalgebra::{Complex, ComplexField, DMatrix, DVector, SymmetricEigen, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type RMat = DMatrix<f64>;
pub type CMat = DMatrix<C64>;
pub type RVec = DVector<f64>;
pub type CVec = DVector<C64>;

/// Every numerical threshold used by the library.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToleranceConfig {
    pub rank_rel_tol: f64,
    pub eig_cluster_tol: f64,
    pub circle_snap_tol: f64,
    pub residual_tol: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        ToleranceConfig {
            rank_rel_tol: 1e-9,
            eig_cluster_tol: 1e-7,
            circle_snap_tol: 1e-7,
            residual_tol: 1e-8,
        }
    }
}

impl ToleranceConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("rank_rel_tol", self.rank_rel_tol),
            ("eig_cluster_tol", self.eig_cluster_tol),
            ("circle_snap_tol", self.circle_snap_tol),
            ("residual_tol", self.residual_tol),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        if self.rank_rel_tol > self.eig_cluster_tol {
            return Err(Error::InvalidInput(
                "rank_rel_tol must not exceed eig_cluster_tol".into(),
            ));
        }
        Ok(())
    }
}

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn to_complex(m: &RMat) -> CMat {
    m.map(|x| C64::new(x, 0.0))
}

pub fn conj(m: &CMat) -> CMat {
    m.map(|z| z.conj())
}

pub fn real_part(m: &CMat) -> RMat {
    m.map(|z| z.re)
}

pub fn imag_part(m: &CMat) -> RMat {
    m.map(|z| z.im)
}

fn check_finite<T: ComplexField<RealField = f64>>(m: &DMatrix<T>) -> Result<()> {
    if m.iter().all(|x| x.clone().is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput("matrix has non-finite entries".into()))
    }
}

/// Singular values in descending order.
pub fn singular_values<T: ComplexField<RealField = f64>>(m: &DMatrix<T>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    SVD::new(m.clone(), false, false).singular_values.iter().copied().collect()
}

/// Numerical rank and an orthonormal kernel basis.
///
/// A singular value counts toward the rank when it exceeds
/// `rank_rel_tol` times the largest one (or times 1 for the zero matrix).
pub fn rank_kernel<T>(m: &DMatrix<T>, cfg: &ToleranceConfig) -> Result<(usize, DMatrix<T>)>
where
    T: ComplexField<RealField = f64>,
{
    rank_kernel_scaled(m, None, cfg)
}

/// Like [`rank_kernel`], but the threshold is `rank_rel_tol · reference`
/// when a reference scale is given.
pub fn rank_kernel_scaled<T>(
    m: &DMatrix<T>,
    reference: Option<f64>,
    cfg: &ToleranceConfig,
) -> Result<(usize, DMatrix<T>)>
where
    T: ComplexField<RealField = f64>,
{
    if m.is_empty() {
        return Err(Error::InvalidInput("rank_kernel of an empty matrix".into()));
    }
    check_finite(m)?;
    let cols = m.ncols();
    // pad with zero rows so that the SVD returns a full right basis
    let padded = if m.nrows() < cols {
        let mut p = DMatrix::<T>::zeros(cols, cols);
        p.rows_mut(0, m.nrows()).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = SVD::new(padded, false, true);
    let sv = &svd.singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let base = reference.unwrap_or(smax);
    let thr = cfg.rank_rel_tol * if base > 0.0 { base } else { 1.0 };
    let rank = sv.iter().filter(|&&s| s > thr).count();
    let vt = svd.v_t.expect("right singular vectors requested");
    let kernel = vt.rows(rank, cols - rank).adjoint();
    Ok((rank, kernel))
}

/// Orthonormal basis of the column space, using the same rank policy.
pub fn orth_range<T>(m: &DMatrix<T>, cfg: &ToleranceConfig) -> Result<DMatrix<T>>
where
    T: ComplexField<RealField = f64>,
{
    if m.ncols() == 0 {
        return Ok(DMatrix::zeros(m.nrows(), 0));
    }
    check_finite(m)?;
    let svd = SVD::new(m.clone(), true, false);
    let sv = &svd.singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let thr = cfg.rank_rel_tol * if smax > 0.0 { smax } else { 1.0 };
    let rank = sv.iter().filter(|&&s| s > thr).count();
    let u = svd.u.expect("left singular vectors requested");
    Ok(u.columns(0, rank).into_owned())
}

/// Inverse through the SVD; refuses numerically singular input.
pub fn solve_inverse(m: &RMat, cfg: &ToleranceConfig) -> Result<RMat> {
    if m.nrows() != m.ncols() || m.is_empty() {
        return Err(Error::InvalidInput("solve_inverse needs a nonempty square matrix".into()));
    }
    check_finite(m)?;
    let svd = SVD::new(m.clone(), true, true);
    let sv = &svd.singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let threshold = cfg.rank_rel_tol * m.norm();
    if smin < threshold || smax == 0.0 {
        return Err(Error::SingularMatrix { smallest: smin, threshold });
    }
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut vs = vt.transpose();
    for (j, s) in sv.iter().enumerate() {
        vs.column_mut(j).scale_mut(1.0 / s);
    }
    Ok(vs * u.transpose())
}

/// The standard symplectic matrix [[0, I], [-I, 0]] of size `dim` (even).
pub fn omega(dim: usize) -> RMat {
    let n = dim / 2;
    let mut o = RMat::zeros(dim, dim);
    for i in 0..n {
        o[(i, n + i)] = 1.0;
        o[(n + i, i)] = -1.0;
    }
    o
}

/// Computes Ω·Y without forming Ω.
pub fn omega_apply<T: ComplexField>(y: &DMatrix<T>) -> DMatrix<T> {
    let n = y.nrows() / 2;
    let mut out = DMatrix::<T>::zeros(y.nrows(), y.ncols());
    for j in 0..y.ncols() {
        for i in 0..n {
            out[(i, j)] = y[(n + i, j)].clone();
            out[(n + i, j)] = -y[(i, j)].clone();
        }
    }
    out
}

/// The pairing matrix XᵀΩY (bilinear, no conjugation).
pub fn pairing<T: ComplexField>(x: &DMatrix<T>, y: &DMatrix<T>) -> DMatrix<T> {
    x.transpose() * omega_apply(y)
}

/// ‖AᵀΩA − Ω‖_F.
pub fn symplectic_residual(a: &RMat) -> f64 {
    (pairing(a, a) - omega(a.ncols())).norm()
}

/// Acceptance bound for treating a matrix as symplectic.
pub fn symplectic_bound(a: &RMat, cfg: &ToleranceConfig) -> f64 {
    let n = (a.nrows() / 2).max(1) as f64;
    cfg.residual_tol * n * a.norm().max(1.0).powi(2)
}

/// −Ω_m PᵀΩ_n: the inverse of a square symplectic matrix, or the left
/// inverse of a symplectic basis of a subspace.
pub fn symplectic_left_inverse(p: &RMat) -> RMat {
    -omega_apply(&pairing(p, &RMat::identity(p.nrows(), p.nrows())))
}

/// Scalar Ω(u, v) for vectors of equal even length.
pub fn omega_pair(u: &CVec, v: &CVec) -> Result<C64> {
    if u.len() != v.len() || !u.len().is_multiple_of(2) {
        return Err(Error::InvalidInput(format!(
            "omega_pair needs equal even lengths, got {} and {}",
            u.len(),
            v.len()
        )));
    }
    let n = u.len() / 2;
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        acc += u[i] * v[n + i] - u[n + i] * v[i];
    }
    Ok(acc)
}

/// Turns an orthonormal basis `q` of a symplectic subspace into a
/// symplectic basis (first half e's, second half f's with Ω(e_i, f_j) = δ_ij).
pub fn symplectic_basis(q: &RMat, cfg: &ToleranceConfig) -> Result<RMat> {
    let d = q.ncols();
    if d == 0 {
        return Ok(RMat::zeros(q.nrows(), 0));
    }
    if !d.is_multiple_of(2) {
        return Err(Error::NumericalDegeneracy(format!(
            "odd-dimensional subspace ({d}) cannot be symplectic"
        )));
    }
    let g = pairing(q, q);
    let ig = g.map(|x| C64::new(0.0, x));
    let eig = SymmetricEigen::new(ig);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let smax = eig.eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let m = d / 2;
    let mut out = RMat::zeros(q.nrows(), d);
    for (slot, &idx) in order.iter().take(m).enumerate() {
        let sigma = eig.eigenvalues[idx];
        if !(sigma > cfg.rank_rel_tol * smax.max(f64::MIN_POSITIVE)) {
            return Err(Error::NumericalDegeneracy(format!(
                "restricted symplectic form is degenerate (eigenvalue {sigma:.3e} of {smax:.3e})"
            )));
        }
        let w = eig.eigenvectors.column(idx);
        let scale = (2.0 / sigma).sqrt();
        let x = RVec::from_iterator(d, w.iter().map(|z| z.re * scale));
        let y = RVec::from_iterator(d, w.iter().map(|z| z.im * scale));
        out.set_column(slot, &(q * y));
        out.set_column(m + slot, &(q * x));
    }
    Ok(out)
}

/// Newton steps P ← P(I + ½ΩE) with E = PᵀΩP − Ω, which cancel the
/// first-order part of the symplecticity error of a nearly symplectic P.
pub fn symplectic_polish(p: &RMat, steps: usize) -> RMat {
    let mut p = p.clone();
    let k = p.ncols();
    for _ in 0..steps {
        let e = pairing(&p, &p) - omega(k);
        if e.norm() <= f64::EPSILON * p.norm().powi(2) {
            break;
        }
        p = &p * (RMat::identity(k, k) + omega_apply(&e) * 0.5);
    }
    p
}

/// Symplectic basis of the Ω-orthogonal complement of span(z) inside the
/// space with standard form; `z` must itself be a symplectic basis.
pub fn symplectic_complement(z: &RMat, cfg: &ToleranceConfig) -> Result<RMat> {
    let dim = z.nrows();
    let d = z.ncols();
    if d == dim {
        return Ok(RMat::zeros(dim, 0));
    }
    if d > dim {
        return Err(Error::InvalidInput(format!("{d} vectors in dimension {dim}")));
    }
    // the complement is Ker(zᵀΩ), whose dimension is known in advance
    let mut m = RMat::zeros(dim, dim);
    m.rows_mut(0, d).copy_from(&pairing(z, &RMat::identity(dim, dim)));
    let svd = SVD::new(m, false, true);
    let vt = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap_or(std::cmp::Ordering::Equal)
    });
    let smax = svd.singular_values[order[0]];
    if svd.singular_values[order[d - 1]] <= cfg.rank_rel_tol * smax {
        return Err(Error::NumericalDegeneracy("basis of the removed block is rank deficient".into()));
    }
    let kernel: Vec<RVec> = order[d..].iter().map(|&i| vt.row(i).transpose()).collect();
    symplectic_basis(&RMat::from_columns(&kernel), cfg)
}
