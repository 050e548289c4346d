//! The Ω pairing, the T_{i,j} calculus, the Q̃_j pairing and the Q̂ forms.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{
    conj, orth_range, pairing, singular_values, to_complex, CMat, CVec, RMat, ToleranceConfig, C64,
};
use crate::spectral::{staircase_at, staircase_at_real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FormKind {
    Symmetric,
    Hermitian,
    Pairing,
}

/// Gram matrix of a form on explicit bases. `scale` is the product of the
/// norms of the vectors that entered the pairing; rank thresholds use it to
/// recognise forms that vanish in exact arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct FormMatrix {
    pub kind: FormKind,
    pub gram: CMat,
    pub domain_basis: CMat,
    pub codomain_basis: Option<CMat>,
    pub scale: f64,
}

impl FormMatrix {
    pub fn from_gram(kind: FormKind, gram: CMat) -> Self {
        let n = gram.nrows();
        FormMatrix {
            kind,
            gram,
            domain_basis: CMat::identity(n, n),
            codomain_basis: None,
            scale: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub n_plus: usize,
    pub n_minus: usize,
    pub n_zero: usize,
}

impl Signature {
    pub fn rank(&self) -> usize {
        self.n_plus + self.n_minus
    }
}

pub(crate) fn is_unit(lambda: C64) -> bool {
    (lambda.norm() - 1.0).abs() <= 1e-12
}

pub(crate) fn shift(a: &RMat, lambda: C64) -> CMat {
    let mut m = to_complex(a);
    for i in 0..m.nrows() {
        m[(i, i)] -= lambda;
    }
    m
}

/// v, Nv, …, N^{len−1} v.
pub fn chain(n: &CMat, v: &CVec, len: usize) -> Vec<CVec> {
    let mut out = Vec::with_capacity(len);
    let mut cur = v.clone();
    for _ in 0..len {
        out.push(cur.clone());
        cur = n * cur;
    }
    out
}

fn pair(u: &CVec, v: &CVec) -> C64 {
    let n = u.len() / 2;
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        acc += u[i] * v[n + i] - u[n + i] * v[i];
    }
    acc
}

/// The full table T_{i,j}(v), 0 ≤ i, j ≤ p, from one chain computation.
pub fn t_table(a: &RMat, lambda: C64, v: &CVec, p: usize) -> CMat {
    let n = shift(a, lambda);
    let ch = chain(&n, v, p + 1);
    let bar: Vec<CVec> = ch.iter().map(|x| x.map(|z| z.conj())).collect();
    let linv = C64::new(1.0, 0.0) / lambda;
    let lbinv = linv.conj();
    CMat::from_fn(p + 1, p + 1, |i, j| {
        pair(&ch[i], &bar[j]) * linv.powu(i as u32) * lbinv.powu(j as u32)
    })
}

/// T_{i,j}(v) = λ^{−i} λ̄^{−j} Ω((A−λI)^i v, (A−λ̄I)^j v̄); only defined for |λ| = 1.
pub fn t_form(a: &RMat, lambda: C64, v: &CVec, i: usize, j: usize) -> Result<C64> {
    if !is_unit(lambda) {
        return Err(Error::InvalidInput(format!("T is only defined for |λ| = 1, got |λ| = {}", lambda.norm())));
    }
    if v.len() != a.nrows() {
        return Err(Error::InvalidInput("vector length does not match the matrix".into()));
    }
    Ok(t_table(a, lambda, v, i.max(j))[(i, j)])
}

/// Inertia of a symmetric or Hermitian Gram matrix. The zero threshold is
/// rank_rel_tol times the larger of the top |eigenvalue| and the form's scale.
pub fn signature_of(form: &FormMatrix, cfg: &ToleranceConfig) -> Result<Signature> {
    if form.kind == FormKind::Pairing {
        return Err(Error::InvalidInput("signature needs a symmetric or Hermitian form".into()));
    }
    let g = &form.gram;
    let n = g.nrows();
    if n == 0 {
        return Ok(Signature { n_plus: 0, n_minus: 0, n_zero: 0 });
    }
    if g.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidInput("form has non-finite entries".into()));
    }
    let h = (g + g.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(h);
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let reference = top.max(form.scale);
    let thr = cfg.rank_rel_tol * if reference > 0.0 { reference } else { 1.0 };
    let n_plus = eig.eigenvalues.iter().filter(|&&x| x > thr).count();
    let n_minus = eig.eigenvalues.iter().filter(|&&x| x < -thr).count();
    Ok(Signature { n_plus, n_minus, n_zero: n - n_plus - n_minus })
}

/// Gram of Q̂^λ_m on the columns of `basis` (which should lie in Ker(A−λI)^m).
///
/// λ = ±1, m = 2k: λ Ω(N^k v, N^{k−1} w̄); unit λ, m = 2k: λ^{−1} Ω(N^k v, conj(N^{k−1} w));
/// unit λ, m = 2k+1: i Ω(N^k v, conj(N^k w)). On real bases the conjugation is inert.
pub fn q_hat_gram(a: &RMat, lambda: C64, m: usize, basis: &CMat) -> Result<(CMat, f64)> {
    if !is_unit(lambda) {
        return Err(Error::InvalidInput(format!("Q̂ needs |λ| = 1, got |λ| = {}", lambda.norm())));
    }
    if m == 0 {
        return Err(Error::InvalidInput("Q̂ needs m ≥ 1".into()));
    }
    let real = lambda.im == 0.0;
    if real && m % 2 == 1 {
        return Err(Error::InvalidInput("Q̂ at λ = ±1 is only defined for even m".into()));
    }
    let n = shift(a, lambda);
    let k = m / 2;
    let (left_pow, right_pow, factor) = if m.is_multiple_of(2) {
        (k, k - 1, C64::new(1.0, 0.0) / lambda)
    } else {
        (k, k, C64::new(0.0, 1.0))
    };
    let mut x = basis.clone();
    for _ in 0..left_pow {
        x = &n * x;
    }
    let mut y = basis.clone();
    for _ in 0..right_pow {
        y = &n * y;
    }
    let scale = x.norm() * y.norm();
    let g = pairing(&x, &conj(&y)) * factor;
    Ok((g, scale))
}

/// Q̂^λ_m on the computed kernel Ker(A−λI)^m, with its signature.
pub fn q_hat(a: &RMat, lambda: C64, m: usize, cfg: &ToleranceConfig) -> Result<(FormMatrix, Signature)> {
    if !is_unit(lambda) {
        return Err(Error::InvalidInput(format!("Q̂ needs |λ| = 1, got |λ| = {}", lambda.norm())));
    }
    let domain = kernel_power(a, lambda, m, cfg)?;
    let (gram, scale) = q_hat_gram(a, lambda, m, &domain)?;
    let form = FormMatrix {
        kind: if lambda.im == 0.0 { FormKind::Symmetric } else { FormKind::Hermitian },
        gram,
        domain_basis: domain,
        codomain_basis: None,
        scale,
    };
    let sig = signature_of(&form, cfg)?;
    Ok((form, sig))
}

/// Orthonormal basis of Ker(A−λI)^m (real whenever λ is real).
pub fn kernel_power(a: &RMat, lambda: C64, m: usize, cfg: &ToleranceConfig) -> Result<CMat> {
    let dim = a.nrows();
    let pick = |len: usize| m.min(len);
    if lambda.im == 0.0 {
        let b = staircase_at_real(a, lambda.re, cfg)?;
        if b.is_empty() || m == 0 {
            return Ok(CMat::zeros(dim, 0));
        }
        Ok(to_complex(&b[pick(b.len()) - 1]))
    } else {
        let b = staircase_at(a, lambda, cfg)?;
        if b.is_empty() || m == 0 {
            return Ok(CMat::zeros(dim, 0));
        }
        Ok(b[pick(b.len()) - 1].clone())
    }
}

fn quotient(e: &CMat, k: &CMat, cfg: &ToleranceConfig) -> Result<CMat> {
    let reduced = if k.ncols() == 0 { e.clone() } else { e - k * (k.adjoint() * e) };
    orth_range(&reduced, cfg)
}

/// Q̃_j([v],[w]) = Ω((A−λI)^j v, w) on representatives of
/// E_λ / Ker(A−λI)^j and E_{1/λ} / Ker(A−λ^{−1}I)^j.
pub fn q_tilde(a: &RMat, lambda: C64, j: usize, cfg: &ToleranceConfig) -> Result<FormMatrix> {
    if j == 0 {
        return Err(Error::InvalidInput("Q̃_j needs j ≥ 1".into()));
    }
    let mu = C64::new(1.0, 0.0) / lambda;
    let sl = staircase_at(a, lambda, cfg)?;
    let sm = staircase_at(a, mu, cfg)?;
    if sl.is_empty() || sm.is_empty() {
        return Err(Error::NotAnEigenvalue { re: lambda.re, im: lambda.im });
    }
    let dim = a.nrows();
    let el = sl.last().unwrap();
    let em = sm.last().unwrap();
    let kl = if j <= sl.len() { sl[j - 1].clone() } else { el.clone() };
    let km = if j <= sm.len() { sm[j - 1].clone() } else { em.clone() };
    let ql = if kl.ncols() == el.ncols() { CMat::zeros(dim, 0) } else { quotient(el, &kl, cfg)? };
    let qm = if km.ncols() == em.ncols() { CMat::zeros(dim, 0) } else { quotient(em, &km, cfg)? };
    if ql.ncols() != qm.ncols() {
        return Err(Error::InternalConsistency(format!(
            "quotient dimensions differ: {} for λ, {} for 1/λ",
            ql.ncols(),
            qm.ncols()
        )));
    }
    let n = shift(a, lambda);
    let mut x = ql.clone();
    for _ in 0..j {
        x = &n * x;
    }
    let scale = x.norm() * qm.norm();
    let gram = pairing(&x, &qm);
    if gram.nrows() > 0 {
        let sv = singular_values(&gram);
        let smin = sv.last().copied().unwrap_or(0.0);
        if smin <= cfg.rank_rel_tol * sv[0].max(f64::MIN_POSITIVE) {
            return Err(Error::NumericalDegeneracy(format!(
                "Q̃_{j} is numerically degenerate (smallest singular value {smin:.3e})"
            )));
        }
    }
    Ok(FormMatrix {
        kind: FormKind::Pairing,
        gram,
        domain_basis: ql,
        codomain_basis: Some(qm),
        scale,
    })
}
