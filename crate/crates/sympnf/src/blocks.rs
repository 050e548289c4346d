//! Block constructors, symplectic direct sums, global assembly, fingerprints.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forms::{q_hat_gram, signature_of, FormKind, FormMatrix, Signature};
use crate::normalform::{case_offcircle, case_pm1, case_unit, CaseResult};
use crate::numcore::{
    omega, pairing, singular_values, symplectic_polish, symplectic_residual, to_complex, CMat, RMat, ToleranceConfig, C64,
};
use crate::spectral::{
    class_order, eigen_quadruples, staircase_at, staircase_at_real, CaseTag, QuadrupleClass, SnapReport,
};

/// Serializes a complex number as `[re, im]`.
pub mod complex_pair {
    use super::C64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(z: &C64, s: S) -> Result<S::Ok, S::Error> {
        [z.re, z.im].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<C64, D::Error> {
        let [re, im] = <[f64; 2]>::deserialize(d)?;
        Ok(C64::new(re, im))
    }
}

/// One block of the normal form.
///
/// `size_param` is q (off the circle), r (at ±1) or k (unit, non-real).
/// Unit blocks come in two shapes: dimension 4k (odd p) or 4k + 2 (even p).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalFormBlock {
    pub case: CaseTag,
    #[serde(with = "complex_pair")]
    pub lambda: C64,
    pub size_param: usize,
    pub sign: i8,
    pub dim: usize,
}

impl NormalFormBlock {
    pub fn real_off(lambda: f64, q: usize) -> Self {
        NormalFormBlock { case: CaseTag::RealOffCircle, lambda: C64::new(lambda, 0.0), size_param: q, sign: 0, dim: 2 * q }
    }

    pub fn complex_off(lambda: C64, q: usize) -> Self {
        NormalFormBlock { case: CaseTag::ComplexOffCircle, lambda, size_param: q, sign: 0, dim: 4 * q }
    }

    pub fn plus_minus_one(lambda: f64, r: usize, sign: i8) -> Self {
        let case = if lambda > 0.0 { CaseTag::PlusOne } else { CaseTag::MinusOne };
        NormalFormBlock { case, lambda: C64::new(lambda.signum(), 0.0), size_param: r, sign, dim: 2 * r }
    }

    pub fn unit_odd(lambda: C64, k: usize, sign: i8) -> Self {
        NormalFormBlock { case: CaseTag::UnitNonReal, lambda, size_param: k, sign, dim: 4 * k }
    }

    pub fn unit_even(lambda: C64, k: usize, sign: i8) -> Self {
        NormalFormBlock { case: CaseTag::UnitNonReal, lambda, size_param: k, sign, dim: 4 * k + 2 }
    }

    /// Sizes of the Jordan blocks at the representative λ that this block contributes.
    pub fn jordan_sizes(&self) -> Vec<usize> {
        match self.case {
            CaseTag::RealOffCircle | CaseTag::ComplexOffCircle => vec![self.size_param],
            CaseTag::PlusOne | CaseTag::MinusOne => {
                if self.sign == 0 {
                    vec![self.size_param, self.size_param]
                } else {
                    vec![2 * self.size_param]
                }
            }
            CaseTag::UnitNonReal => {
                if self.dim == 4 * self.size_param {
                    vec![2 * self.size_param]
                } else {
                    vec![2 * self.size_param + 1]
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(format!("invalid block {self:?}: {msg}")));
        let l = self.lambda;
        if !(l.re.is_finite() && l.im.is_finite()) {
            return bad("non-finite λ");
        }
        if !(-1..=1).contains(&self.sign) {
            return bad("sign must be -1, 0 or +1");
        }
        match self.case {
            CaseTag::RealOffCircle => {
                if l.im != 0.0 || l.re.abs() <= 1.0 {
                    return bad("needs real λ with |λ| > 1");
                }
                if self.size_param == 0 || self.sign != 0 || self.dim != 2 * self.size_param {
                    return bad("needs q ≥ 1, sign 0, dim 2q");
                }
            }
            CaseTag::ComplexOffCircle => {
                if l.im <= 0.0 || l.norm() <= 1.0 {
                    return bad("needs Im λ > 0 and |λ| > 1");
                }
                if self.size_param == 0 || self.sign != 0 || self.dim != 4 * self.size_param {
                    return bad("needs q ≥ 1, sign 0, dim 4q");
                }
            }
            CaseTag::PlusOne | CaseTag::MinusOne => {
                let want = if self.case == CaseTag::PlusOne { 1.0 } else { -1.0 };
                if l != C64::new(want, 0.0) {
                    return bad("λ must be exactly ±1");
                }
                if self.size_param == 0 || self.dim != 2 * self.size_param {
                    return bad("needs r ≥ 1, dim 2r");
                }
                if self.sign == 0 && self.size_param.is_multiple_of(2) {
                    return bad("sign 0 requires odd r");
                }
            }
            CaseTag::UnitNonReal => {
                if l.im <= 0.0 || (l.norm() - 1.0).abs() > 1e-12 {
                    return bad("needs |λ| = 1 and Im λ > 0");
                }
                if self.sign == 0 {
                    return bad("sign must be ±1");
                }
                let odd = self.dim == 4 * self.size_param && self.size_param >= 1;
                let even = self.dim == 4 * self.size_param + 2;
                if !(odd || even) {
                    return bad("dim must be 4k (k ≥ 1) or 4k + 2");
                }
            }
        }
        Ok(())
    }

    fn sign_rank(&self) -> u8 {
        match self.sign {
            1 => 0,
            -1 => 1,
            _ => 2,
        }
    }

    /// Order inside one class: larger blocks first, then sign +1, −1, 0.
    pub fn order_within_class(a: &Self, b: &Self) -> Ordering {
        b.dim
            .cmp(&a.dim)
            .then(b.size_param.cmp(&a.size_param))
            .then(a.sign_rank().cmp(&b.sign_rank()))
    }
}

/// Elementary m×m Jordan matrix: λ on the diagonal, 1 above it.
pub fn jordan(lambda: C64, m: usize) -> Result<CMat> {
    if m == 0 {
        return Err(Error::InvalidInput("Jordan block of size 0".into()));
    }
    let mut j = CMat::zeros(m, m);
    for i in 0..m {
        j[(i, i)] = lambda;
        if i + 1 < m {
            j[(i, i + 1)] = C64::new(1.0, 0.0);
        }
    }
    Ok(j)
}

fn jordan_r(lambda: f64, m: usize) -> RMat {
    let mut j = RMat::zeros(m, m);
    for i in 0..m {
        j[(i, i)] = lambda;
        if i + 1 < m {
            j[(i, i + 1)] = 1.0;
        }
    }
    j
}

/// Inverse of the real Jordan block: entry (i, i+d) is (−1)^d λ^{−d−1}.
fn jordan_r_inverse(lambda: f64, m: usize) -> RMat {
    let mut j = RMat::zeros(m, m);
    for i in 0..m {
        for d in 0..(m - i) {
            let sgn = if d % 2 == 0 { 1.0 } else { -1.0 };
            j[(i, i + d)] = sgn * lambda.powi(-(d as i32) - 1);
        }
    }
    j
}

fn cell(z: C64) -> [[f64; 2]; 2] {
    [[z.re, -z.im], [z.im, z.re]]
}

fn put_cell(m: &mut RMat, row: usize, col: usize, z: C64) {
    let c = cell(z);
    for a in 0..2 {
        for b in 0..2 {
            m[(row + a, col + b)] = c[a][b];
        }
    }
}

/// J_ℝ for the complex number z: R(z) cells on the block diagonal, 2×2
/// identities above.
fn jordan_real_c(z: C64, two_m: usize) -> RMat {
    let m = two_m / 2;
    let mut j = RMat::zeros(two_m, two_m);
    for i in 0..m {
        put_cell(&mut j, 2 * i, 2 * i, z);
        if i + 1 < m {
            j[(2 * i, 2 * i + 2)] = 1.0;
            j[(2 * i + 1, 2 * i + 3)] = 1.0;
        }
    }
    j
}

/// Exact inverse of `jordan_real_c`: cell (i, i+d) is R((−1)^d z^{−d−1}).
fn jordan_real_c_inverse(z: C64, two_m: usize) -> RMat {
    let m = two_m / 2;
    let zi = C64::new(1.0, 0.0) / z;
    let mut j = RMat::zeros(two_m, two_m);
    for i in 0..m {
        for d in 0..(m - i) {
            let sgn = if d % 2 == 0 { 1.0 } else { -1.0 };
            put_cell(&mut j, 2 * i, 2 * (i + d), zi.powu(d as u32 + 1) * sgn);
        }
    }
    j
}

/// Real Jordan block built from rotation-scaling cells R(re^{iφ}).
pub fn jordan_real(r: f64, phi: f64, two_m: usize) -> Result<RMat> {
    if two_m == 0 || !two_m.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!("jordan_real needs a positive even size, got {two_m}")));
    }
    Ok(jordan_real_c(C64::from_polar(r, phi), two_m))
}

fn diag_sum(top: &RMat, bottom: &RMat) -> RMat {
    let a = top.nrows();
    let b = bottom.nrows();
    let mut m = RMat::zeros(a + b, a + b);
    m.view_mut((0, 0), (a, a)).copy_from(top);
    m.view_mut((a, a), (b, b)).copy_from(bottom);
    m
}

/// The 2k×2 column block with 2×2 rows (−1)^{j−1} R(λ^j), j = k down to 1.
fn v_columns(lambda: C64, k: usize) -> RMat {
    let mut v = RMat::zeros(2 * k, 2);
    for (row, j) in (1..=k).rev().enumerate() {
        let sgn = if (j - 1) % 2 == 0 { 1.0 } else { -1.0 };
        put_cell(&mut v, 2 * row, 0, lambda.powu(j as u32) * sgn);
    }
    v
}

fn unit_odd_block(lambda: C64, k: usize, s: f64) -> RMat {
    let d = 2 * k;
    let j = jordan_real_c(lambda.conj(), d);
    let ji = jordan_real_c_inverse(lambda.conj(), d);
    let mut b = diag_sum(&ji, &j.transpose());
    let v = v_columns(lambda, k);
    for row in 0..d {
        b[(row, 2 * d - 2)] = s * v[(row, 0)];
        b[(row, 2 * d - 1)] = s * v[(row, 1)];
    }
    b
}

fn unit_even_block(lambda: C64, k: usize, s: f64) -> RMat {
    let d = 2 * k + 1;
    let mut b = RMat::zeros(2 * d, 2 * d);
    let (cs, sn) = (lambda.re, lambda.im);
    if k > 0 {
        let tk = 2 * k;
        let j = jordan_real_c(lambda.conj(), tk);
        let ji = jordan_real_c_inverse(lambda.conj(), tk);
        b.view_mut((0, 0), (tk, tk)).copy_from(&ji);
        b.view_mut((d, d), (tk, tk)).copy_from(&j.transpose());
        let v = v_columns(lambda, k);
        let rot = RMat::from_row_slice(2, 2, &[cs, -sn, sn, cs]);
        let u = &v * rot;
        for row in 0..tk {
            b[(row, tk)] = s * u[(row, 1)];
            b[(row, d + tk - 2)] = 0.5 * s * v[(row, 1)];
            b[(row, d + tk - 1)] = -0.5 * s * v[(row, 0)];
            b[(row, 2 * d - 1)] = u[(row, 0)];
        }
        b[(tk, d + tk - 2)] = 1.0;
        b[(2 * d - 1, d + tk - 1)] = -s;
    }
    let tk = 2 * k;
    b[(tk, tk)] = cs;
    b[(tk, 2 * d - 1)] = s * sn;
    b[(2 * d - 1, tk)] = -s * sn;
    b[(2 * d - 1, 2 * d - 1)] = cs;
    b
}

/// The exact real block matrix described by `b`.
pub fn build_block(b: &NormalFormBlock) -> Result<RMat> {
    b.validate()?;
    let l = b.lambda;
    let q = b.size_param;
    Ok(match b.case {
        CaseTag::RealOffCircle => diag_sum(&jordan_r_inverse(l.re, q), &jordan_r(l.re, q).transpose()),
        CaseTag::ComplexOffCircle => {
            let z = l.conj();
            diag_sum(&jordan_real_c_inverse(z, 2 * q), &jordan_real_c(z, 2 * q).transpose())
        }
        CaseTag::PlusOne | CaseTag::MinusOne => {
            let ji = jordan_r_inverse(l.re, q);
            let mut m = diag_sum(&ji, &jordan_r(l.re, q).transpose());
            // C(r, s, λ) = J(λ, r)^{-1} diag(0, …, 0, s): only the last column is nonzero
            for row in 0..q {
                m[(row, 2 * q - 1)] = ji[(row, q - 1)] * b.sign as f64;
            }
            m
        }
        CaseTag::UnitNonReal => {
            let s = b.sign as f64;
            if b.dim == 4 * q {
                unit_odd_block(l, q, s)
            } else {
                unit_even_block(l, q, s)
            }
        }
    })
}

fn halves(m: &RMat) -> Result<usize> {
    if m.nrows() != m.ncols() || !m.nrows().is_multiple_of(2) {
        return Err(Error::InvalidInput(format!(
            "symplectic direct sum needs square even-sized matrices, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows() / 2)
}

/// A1 ⋄ A2: first halves of both blocks come first, then the second halves.
pub fn symplectic_direct_sum(a1: &RMat, a2: &RMat) -> Result<RMat> {
    direct_sum_all(&[a1.clone(), a2.clone()])
}

pub fn direct_sum_all(parts: &[RMat]) -> Result<RMat> {
    let mut sizes = Vec::with_capacity(parts.len());
    for p in parts {
        sizes.push(halves(p)?);
    }
    let n: usize = sizes.iter().sum();
    let mut out = RMat::zeros(2 * n, 2 * n);
    let mut off = 0;
    for (p, &k) in parts.iter().zip(&sizes) {
        for (bi, gi) in [(0, off), (k, n + off)] {
            for (bj, gj) in [(0, off), (k, n + off)] {
                out.view_mut((gi, gj), (k, k)).copy_from(&p.view((bi, bj), (k, k)));
            }
        }
        off += k;
    }
    Ok(out)
}

/// Column version of ⋄ for bases [E_i | F_i]: returns [E_1 … E_m | F_1 … F_m].
pub fn interleave_bases(rows: usize, parts: &[RMat]) -> RMat {
    let n: usize = parts.iter().map(|p| p.ncols() / 2).sum();
    let mut out = RMat::zeros(rows, 2 * n);
    let mut off = 0;
    for p in parts {
        let k = p.ncols() / 2;
        out.view_mut((0, off), (rows, k)).copy_from(&p.columns(0, k));
        out.view_mut((0, n + off), (rows, k)).copy_from(&p.columns(k, k));
        off += k;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QhatEntry {
    pub m: usize,
    pub rank: usize,
    pub signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFingerprint {
    pub case: CaseTag,
    #[serde(with = "complex_pair")]
    pub lambda: C64,
    pub multiplicity: usize,
    pub ladder: Vec<usize>,
    pub qhat: Vec<QhatEntry>,
}

/// The complete conjugacy invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub dim: usize,
    pub classes: Vec<ClassFingerprint>,
}

fn show(z: C64) -> String {
    crate::spectral::describe(z)
}

impl Fingerprint {
    /// First difference between two fingerprints, or None if they agree.
    /// Integers must match exactly; eigenvalues within `lambda_tol`.
    pub fn discrepancy(&self, other: &Fingerprint, lambda_tol: f64) -> Option<String> {
        if self.dim != other.dim {
            return Some(format!("dimension mismatch: {} vs {}", self.dim, other.dim));
        }
        if self.classes.len() != other.classes.len() {
            return Some(format!(
                "eigenvalue class count mismatch: {} vs {}",
                self.classes.len(),
                other.classes.len()
            ));
        }
        for (a, b) in self.classes.iter().zip(&other.classes) {
            if a.case != b.case || (a.lambda - b.lambda).norm() > lambda_tol {
                return Some(format!("eigenvalue mismatch: λ={} vs λ={}", show(a.lambda), show(b.lambda)));
            }
            if a.multiplicity != b.multiplicity {
                return Some(format!("multiplicity mismatch at λ={}", show(a.lambda)));
            }
            if a.ladder != b.ladder {
                return Some(format!(
                    "kernel ladder mismatch at λ={}: {:?} vs {:?}",
                    show(a.lambda),
                    a.ladder,
                    b.ladder
                ));
            }
            if a.qhat.len() != b.qhat.len() {
                return Some(format!("Q̂ list length mismatch at λ={}", show(a.lambda)));
            }
            for (x, y) in a.qhat.iter().zip(&b.qhat) {
                if x != y {
                    let what = if x.rank != y.rank { "rank" } else { "signature" };
                    let index = if a.case == CaseTag::UnitNonReal {
                        format!("m={}", x.m)
                    } else {
                        format!("k={}", x.m / 2)
                    };
                    return Some(format!("Q̂ {what} mismatch at λ={}, {index}", show(a.lambda)));
                }
            }
        }
        None
    }

    pub fn matches(&self, other: &Fingerprint, lambda_tol: f64) -> bool {
        self.discrepancy(other, lambda_tol).is_none()
    }
}

/// Fingerprint entries for one class, computed from kernels and Q̂ forms only.
pub fn class_fingerprint(a: &RMat, q: &QuadrupleClass, cfg: &ToleranceConfig) -> Result<ClassFingerprint> {
    let lambda = q.representative;
    let bases: Vec<CMat> = if lambda.im == 0.0 {
        staircase_at_real(a, lambda.re, cfg)?.iter().map(to_complex).collect()
    } else {
        staircase_at(a, lambda, cfg)?
    };
    if bases.is_empty() {
        return Err(Error::NotAnEigenvalue { re: lambda.re, im: lambda.im });
    }
    let ladder: Vec<usize> = bases.iter().map(|b| b.ncols()).collect();
    let mut qhat = Vec::new();
    if q.case_tag.on_circle() {
        let step = if q.case_tag == CaseTag::UnitNonReal { 1 } else { 2 };
        let mut m = step;
        while m <= bases.len() {
            let domain = &bases[m - 1];
            let (gram, scale) = q_hat_gram(a, lambda, m, domain)?;
            let kind = if lambda.im == 0.0 { FormKind::Symmetric } else { FormKind::Hermitian };
            let form = FormMatrix { kind, gram, domain_basis: domain.clone(), codomain_basis: None, scale };
            let signature = signature_of(&form, cfg)?;
            qhat.push(QhatEntry { m, rank: signature.rank(), signature });
            m += step;
        }
    }
    Ok(ClassFingerprint {
        case: q.case_tag,
        lambda,
        multiplicity: q.algebraic_multiplicity_per_member,
        ladder,
        qhat,
    })
}

fn fingerprint_from(a: &RMat, classes: &[QuadrupleClass], cfg: &ToleranceConfig) -> Result<Fingerprint> {
    let mut out = Vec::with_capacity(classes.len());
    for q in classes {
        out.push(class_fingerprint(a, q, cfg)?);
    }
    Ok(Fingerprint { dim: a.nrows(), classes: out })
}

/// Conjugacy invariants of A without building a basis.
pub fn fingerprint_of(a: &RMat, cfg: &ToleranceConfig) -> Result<Fingerprint> {
    let (classes, _) = eigen_quadruples(a, cfg)?;
    fingerprint_from(a, &classes, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub symplecticity: f64,
    pub reconstruction: f64,
    pub condition_p: f64,
    pub snap_report: SnapReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalFormResult {
    pub blocks: Vec<NormalFormBlock>,
    pub n: RMat,
    pub p: RMat,
    pub residual_report: ResidualReport,
    pub fingerprint: Fingerprint,
}

/// Conditioning allowance in the reconstruction bound ‖AP − PN‖ ≤ tol·‖A‖·COND_BOUND.
pub const COND_BOUND: f64 = 1e3;

/// Runs one class through the construction for its case.
pub fn run_class(a: &RMat, q: &QuadrupleClass, cfg: &ToleranceConfig) -> Result<CaseResult> {
    match q.case_tag {
        CaseTag::RealOffCircle | CaseTag::ComplexOffCircle => case_offcircle(a, q, cfg),
        CaseTag::PlusOne | CaseTag::MinusOne => case_pm1(a, q, cfg),
        CaseTag::UnitNonReal => case_unit(a, q, cfg),
    }
}

/// Full pipeline: classes, per-class constructions, global N and P.
pub fn analyze(a: &RMat, cfg: &ToleranceConfig) -> Result<NormalFormResult> {
    let (classes, snap_report) = eigen_quadruples(a, cfg)?;
    let mut blocks = Vec::new();
    let mut mats = Vec::new();
    let mut bases = Vec::new();
    for q in &classes {
        let res = run_class(a, q, cfg)?;
        for (b, z) in res.blocks.iter().zip(res.bases) {
            mats.push(build_block(b)?);
            blocks.push(*b);
            bases.push(z);
        }
    }
    let n = direct_sum_all(&mats)?;
    let p = symplectic_polish(&interleave_bases(a.nrows(), &bases), 2);
    let symplecticity = (pairing(&p, &p) - omega(p.ncols())).norm();
    let reconstruction = (a * &p - &p * &n).norm();
    let sv = singular_values(&p);
    let condition_p = sv.first().copied().unwrap_or(0.0) / sv.last().copied().unwrap_or(1.0);
    let half = (a.nrows() / 2) as f64;
    let sym_bound = cfg.residual_tol * half;
    let rec_bound = cfg.residual_tol * a.norm().max(1.0) * COND_BOUND;
    if symplecticity > sym_bound || reconstruction > rec_bound {
        return Err(Error::NumericalDegeneracy(format!(
            "basis residuals too large: symplecticity {symplecticity:.3e} (bound {sym_bound:.3e}), \
             reconstruction {reconstruction:.3e} (bound {rec_bound:.3e})"
        )));
    }
    let fingerprint = fingerprint_from(a, &classes, cfg)?;
    Ok(NormalFormResult {
        blocks,
        n,
        p,
        residual_report: ResidualReport { symplecticity, reconstruction, condition_p, snap_report },
        fingerprint,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugacyReport {
    pub conjugate: bool,
    pub discrepancy: Option<String>,
    pub fingerprint_a: Fingerprint,
    pub fingerprint_b: Fingerprint,
}

/// Decides conjugacy in Sp(2n, ℝ) by comparing fingerprints.
pub fn conjugacy_equal(a: &RMat, b: &RMat, cfg: &ToleranceConfig) -> Result<ConjugacyReport> {
    if a.shape() != b.shape() {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: {}x{} vs {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let fa = fingerprint_of(a, cfg)?;
    let fb = fingerprint_of(b, cfg)?;
    let discrepancy = fa.discrepancy(&fb, cfg.eig_cluster_tol);
    Ok(ConjugacyReport { conjugate: discrepancy.is_none(), discrepancy, fingerprint_a: fa, fingerprint_b: fb })
}

/// Checks ‖BᵀΩB − Ω‖_F for a block; used by tests and the verifier.
pub fn block_symplectic_residual(b: &NormalFormBlock) -> Result<f64> {
    Ok(symplectic_residual(&build_block(b)?))
}

/// Sorts classes' fingerprints canonically (they already come sorted from
/// `eigen_quadruples`; expected fingerprints built elsewhere use this).
pub fn sort_classes(classes: &mut [ClassFingerprint]) {
    classes.sort_by(|x, y| class_order((x.case, x.lambda), (y.case, y.lambda)));
}
