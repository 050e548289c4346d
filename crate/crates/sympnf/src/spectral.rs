//! Eigenvalue quadruples, kernel ladders and the real invariant subspaces V_[λ].

use std::cmp::Ordering;

use nalgebra::{ComplexField, DMatrix, Schur};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{
    orth_range, rank_kernel_scaled, symplectic_basis, symplectic_bound, symplectic_residual,
    to_complex, CMat, RMat, ToleranceConfig, C64,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CaseTag {
    RealOffCircle,
    ComplexOffCircle,
    PlusOne,
    MinusOne,
    UnitNonReal,
}

impl CaseTag {
    pub fn on_circle(self) -> bool {
        matches!(self, CaseTag::PlusOne | CaseTag::MinusOne | CaseTag::UnitNonReal)
    }

    pub fn is_real(self) -> bool {
        matches!(self, CaseTag::RealOffCircle | CaseTag::PlusOne | CaseTag::MinusOne)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadrupleClass {
    pub representative: C64,
    pub members: Vec<C64>,
    pub case_tag: CaseTag,
    pub algebraic_multiplicity_per_member: usize,
}

impl QuadrupleClass {
    pub fn dimension(&self) -> usize {
        self.members.len() * self.algebraic_multiplicity_per_member
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenspaceLadder {
    pub lambda: C64,
    pub dims: Vec<usize>,
    pub p: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapEvent {
    pub kind: String,
    pub raw: [f64; 2],
    pub snapped: [f64; 2],
    pub distance: f64,
}

/// What the clustering did to reach exact symmetry, plus values that came
/// close to a snapping locus without being snapped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SnapReport {
    pub snaps: Vec<SnapEvent>,
    pub near_misses: Vec<SnapEvent>,
}

/// Canonical orbit point of μ: modulus at least one, imaginary part nonnegative.
pub fn fold(mu: C64) -> C64 {
    let z = if mu.norm() < 1.0 { C64::new(1.0, 0.0) / mu.conj() } else { mu };
    if z.im < 0.0 {
        z.conj()
    } else {
        z
    }
}

/// The exact orbit {λ, 1/λ, λ̄, 1/λ̄} of a snapped representative, in a fixed order.
pub fn orbit(rep: C64, tag: CaseTag) -> Vec<C64> {
    let one = C64::new(1.0, 0.0);
    match tag {
        CaseTag::PlusOne | CaseTag::MinusOne => vec![rep],
        CaseTag::UnitNonReal => vec![rep, rep.conj()],
        CaseTag::RealOffCircle => vec![rep, one / rep],
        CaseTag::ComplexOffCircle => vec![rep, rep.conj(), one / rep, one / rep.conj()],
    }
}

/// Ordering key for classes: case tag, then real part, then imaginary part.
pub fn class_order(a: (CaseTag, C64), b: (CaseTag, C64)) -> Ordering {
    a.0.cmp(&b.0)
        .then(a.1.re.partial_cmp(&b.1.re).unwrap_or(Ordering::Equal))
        .then(a.1.im.partial_cmp(&b.1.im).unwrap_or(Ordering::Equal))
}

fn push_near_miss(report: &mut SnapReport, kind: &str, raw: C64, target: C64, dist: f64, tol: f64) {
    if dist > tol && dist <= 1e3 * tol {
        report.near_misses.push(SnapEvent {
            kind: kind.into(),
            raw: [raw.re, raw.im],
            snapped: [target.re, target.im],
            distance: dist,
        });
    }
}

/// Snaps a representative estimate onto the symmetry loci and picks the
/// canonical member of its orbit.
pub fn snap(z: C64, cfg: &ToleranceConfig, report: &mut SnapReport) -> (C64, CaseTag) {
    let z = fold(z);
    let mut record = |kind: &str, to: C64, dist: f64| {
        report.snaps.push(SnapEvent {
            kind: kind.into(),
            raw: [z.re, z.im],
            snapped: [to.re, to.im],
            distance: dist,
        })
    };
    for (target, tag) in [(1.0, CaseTag::PlusOne), (-1.0, CaseTag::MinusOne)] {
        let t = C64::new(target, 0.0);
        let d = (z - t).norm();
        if d <= cfg.circle_snap_tol {
            record(if target > 0.0 { "plus_one" } else { "minus_one" }, t, d);
            return (t, tag);
        }
    }
    let dcirc = (z.norm() - 1.0).abs();
    if dcirc <= cfg.circle_snap_tol {
        let u = z / z.norm();
        record("unit_circle", u, dcirc);
        return (u, CaseTag::UnitNonReal);
    }
    if z.im.abs() <= cfg.eig_cluster_tol {
        let r = C64::new(z.re, 0.0);
        record("real_axis", r, z.im.abs());
        return (r, CaseTag::RealOffCircle);
    }
    (z, CaseTag::ComplexOffCircle)
}

fn note_near_misses(z: C64, cfg: &ToleranceConfig, report: &mut SnapReport) {
    let z = fold(z);
    for t in [1.0, -1.0] {
        let t = C64::new(t, 0.0);
        push_near_miss(report, "plus_minus_one", z, t, (z - t).norm(), cfg.circle_snap_tol);
    }
    push_near_miss(report, "unit_circle", z, z / z.norm(), (z.norm() - 1.0).abs(), cfg.circle_snap_tol);
    push_near_miss(report, "real_axis", z, C64::new(z.re, 0.0), z.im.abs(), cfg.eig_cluster_tol);
}

/// Nested kernels K_r = Ker(N^r), r = 1, 2, …, until the dimension stops
/// growing. Each K_r is computed as the kernel of (I − Q Q*) N with Q an
/// orthonormal basis of K_{r−1}.
pub fn kernel_staircase<T>(n: &DMatrix<T>, cfg: &ToleranceConfig) -> Result<Vec<DMatrix<T>>>
where
    T: ComplexField<RealField = f64>,
{
    kernel_staircase_scaled(n, n.norm(), cfg)
}

/// Staircase whose rank decisions are relative to `reference` (typically
/// ‖A‖ rather than ‖A − λI‖, which can itself be at noise level).
pub fn kernel_staircase_scaled<T>(n: &DMatrix<T>, reference: f64, cfg: &ToleranceConfig) -> Result<Vec<DMatrix<T>>>
where
    T: ComplexField<RealField = f64>,
{
    let dim = n.nrows();
    let mut bases: Vec<DMatrix<T>> = Vec::new();
    let mut q = DMatrix::<T>::zeros(dim, 0);
    while q.ncols() < dim {
        let proj = if q.ncols() == 0 {
            n.clone()
        } else {
            n - &q * (q.adjoint() * n)
        };
        let (_, k) = rank_kernel_scaled(&proj, Some(reference), cfg)?;
        if k.ncols() <= q.ncols() {
            break;
        }
        bases.push(k.clone());
        q = k;
    }
    Ok(bases)
}

fn ladder_from(bases: &[CMat], lambda: C64) -> EigenspaceLadder {
    let dims: Vec<usize> = bases.iter().map(|b| b.ncols()).collect();
    let p = dims.len().saturating_sub(1);
    EigenspaceLadder { lambda, dims, p }
}

fn shifted(a: &RMat, lambda: C64) -> CMat {
    let mut m = to_complex(a);
    for i in 0..m.nrows() {
        m[(i, i)] -= lambda;
    }
    m
}

fn shifted_real(a: &RMat, lambda: f64) -> RMat {
    let mut m = a.clone();
    for i in 0..m.nrows() {
        m[(i, i)] -= lambda;
    }
    m
}

/// Kernel staircase of A − λI as complex bases.
pub fn staircase_at(a: &RMat, lambda: C64, cfg: &ToleranceConfig) -> Result<Vec<CMat>> {
    kernel_staircase_scaled(&shifted(a, lambda), a.norm().max(1.0), cfg)
}

/// Kernel staircase of A − λI for real λ, with real bases.
pub fn staircase_at_real(a: &RMat, lambda: f64, cfg: &ToleranceConfig) -> Result<Vec<RMat>> {
    kernel_staircase_scaled(&shifted_real(a, lambda), a.norm().max(1.0), cfg)
}

/// Basis of E_λ = Ker(A − λI)^{p+1} and the kernel ladder.
pub fn generalized_eigenspace(
    a: &RMat,
    lambda: C64,
    cfg: &ToleranceConfig,
) -> Result<(CMat, EigenspaceLadder)> {
    let bases = staircase_at(a, lambda, cfg)?;
    if bases.is_empty() {
        return Err(Error::NotAnEigenvalue { re: lambda.re, im: lambda.im });
    }
    let ladder = ladder_from(&bases, lambda);
    Ok((bases.last().unwrap().clone(), ladder))
}

/// Kernel ladder only.
pub fn ladder(a: &RMat, lambda: C64, cfg: &ToleranceConfig) -> Result<EigenspaceLadder> {
    generalized_eigenspace(a, lambda, cfg).map(|(_, l)| l)
}

pub fn check_symplectic(a: &RMat, cfg: &ToleranceConfig) -> Result<()> {
    if a.nrows() != a.ncols() || a.nrows() == 0 || !a.nrows().is_multiple_of(2) {
        return Err(Error::InvalidInput(format!(
            "expected a nonempty square matrix of even size, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let residual = symplectic_residual(a);
    let bound = symplectic_bound(a, cfg);
    if residual > bound {
        return Err(Error::NotSymplectic { residual, bound });
    }
    Ok(())
}

fn raw_eigenvalues(a: &RMat) -> Result<Vec<C64>> {
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 100_000)
        .ok_or_else(|| Error::NumericalDegeneracy("Schur iteration did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

fn components(points: &[C64], idx: &[usize], tau: f64) -> Vec<Vec<usize>> {
    let mut seen = vec![false; idx.len()];
    let mut out = Vec::new();
    for start in 0..idx.len() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut head = 0;
        while head < comp.len() {
            let cur = comp[head];
            head += 1;
            for other in 0..idx.len() {
                if !seen[other] && (points[idx[cur]] - points[idx[other]]).norm() <= tau {
                    seen[other] = true;
                    comp.push(other);
                }
            }
        }
        comp.sort();
        out.push(comp.into_iter().map(|i| idx[i]).collect());
    }
    out
}

fn mean(vals: impl Iterator<Item = C64>) -> C64 {
    let mut s = C64::new(0.0, 0.0);
    let mut n = 0.0;
    for v in vals {
        s += v;
        n += 1.0;
    }
    s / n
}

struct Attempt {
    class: QuadrupleClass,
    snaps: SnapReport,
}

fn try_class(raw: &[C64], folded: &[C64], comp: &[usize], tau: f64, a: &RMat, cfg: &ToleranceConfig) -> Option<Attempt> {
    let zmean = mean(comp.iter().map(|&i| folded[i]));
    let groups = components(raw, comp, tau);
    let means: Vec<C64> = groups.iter().map(|g| mean(g.iter().map(|&i| raw[i]))).collect();
    let best = (0..groups.len()).min_by(|&x, &y| {
        (means[x] - zmean).norm().partial_cmp(&(means[y] - zmean).norm()).unwrap_or(Ordering::Equal)
    })?;
    let mut snaps = SnapReport::default();
    let (rep, tag) = snap(means[best], cfg, &mut snaps);
    note_near_misses(means[best], cfg, &mut snaps);
    let members = orbit(rep, tag);
    if groups.len() != members.len() {
        return None;
    }
    let size = groups[0].len();
    if groups.iter().any(|g| g.len() != size) || comp.len() != size * members.len() {
        return None;
    }
    // every group mean must sit near a distinct member
    let mut used = vec![false; members.len()];
    for m in &means {
        let j = (0..members.len())
            .filter(|&j| !used[j])
            .min_by(|&x, &y| (members[x] - m).norm().partial_cmp(&(members[y] - m).norm()).unwrap())?;
        if (members[j] - m).norm() > tau {
            return None;
        }
        used[j] = true;
    }
    let bases = staircase_at(a, rep, cfg).ok()?;
    if bases.last().map(|b| b.ncols()) != Some(size) {
        return None;
    }
    Some(Attempt {
        class: QuadrupleClass {
            representative: rep,
            members,
            case_tag: tag,
            algebraic_multiplicity_per_member: size,
        },
        snaps,
    })
}

fn resolve(
    raw: &[C64],
    folded: &[C64],
    comp: Vec<usize>,
    tau: f64,
    a: &RMat,
    cfg: &ToleranceConfig,
    out: &mut Vec<QuadrupleClass>,
    report: &mut SnapReport,
) -> Result<()> {
    if let Some(at) = try_class(raw, folded, &comp, tau, a, cfg) {
        out.push(at.class);
        report.snaps.extend(at.snaps.snaps);
        report.near_misses.extend(at.snaps.near_misses);
        return Ok(());
    }
    let finer = tau / 4.0;
    if finer < cfg.eig_cluster_tol {
        let vals: Vec<String> = comp.iter().map(|&i| format!("{:.6}{:+.6}i", raw[i].re, raw[i].im)).collect();
        return Err(Error::ToleranceAmbiguity(format!(
            "cannot split eigenvalues [{}] into consistent quadruples",
            vals.join(", ")
        )));
    }
    let parts = components(folded, &comp, finer);
    for part in parts {
        resolve(raw, folded, part, finer, a, cfg, out, report)?;
    }
    Ok(())
}

/// Partition of the spectrum into quadruple classes, sorted canonically.
pub fn eigen_quadruples(a: &RMat, cfg: &ToleranceConfig) -> Result<(Vec<QuadrupleClass>, SnapReport)> {
    cfg.validate()?;
    check_symplectic(a, cfg)?;
    let raw = raw_eigenvalues(a)?;
    let folded: Vec<C64> = raw.iter().map(|&m| fold(m)).collect();
    let all: Vec<usize> = (0..raw.len()).collect();
    let tau0 = 0.25;
    let mut classes = Vec::new();
    let mut report = SnapReport::default();
    for comp in components(&folded, &all, tau0) {
        resolve(&raw, &folded, comp, tau0, a, cfg, &mut classes, &mut report)?;
    }
    classes.sort_by(|x, y| class_order((x.case_tag, x.representative), (y.case_tag, y.representative)));
    for w in classes.windows(2) {
        let d = (w[0].representative - w[1].representative).norm();
        if d <= cfg.eig_cluster_tol {
            return Err(Error::ToleranceAmbiguity(format!(
                "classes at {} and {} are within the clustering tolerance",
                w[0].representative, w[1].representative
            )));
        }
    }
    let total: usize = classes.iter().map(|q| q.dimension()).sum();
    if total != a.nrows() {
        return Err(Error::InternalConsistency(format!(
            "class multiplicities sum to {total}, expected {}",
            a.nrows()
        )));
    }
    Ok((classes, report))
}

/// Real symplectic basis of V_[λ], the real part of the sum of the
/// generalized eigenspaces of the members of `q`.
pub fn invariant_real_subspace(a: &RMat, q: &QuadrupleClass, cfg: &ToleranceConfig) -> Result<RMat> {
    let dim = a.nrows();
    let mut cols: Vec<nalgebra::DVector<f64>> = Vec::new();
    for mu in &q.members {
        if mu.im < 0.0 {
            continue;
        }
        if mu.im == 0.0 {
            let bases = staircase_at_real(a, mu.re, cfg)?;
            let e = bases.last().ok_or(Error::NotAnEigenvalue { re: mu.re, im: mu.im })?;
            cols.extend(e.column_iter().map(|c| c.into_owned()));
        } else {
            let bases = staircase_at(a, *mu, cfg)?;
            let e = bases.last().ok_or(Error::NotAnEigenvalue { re: mu.re, im: mu.im })?;
            for col in e.column_iter() {
                cols.push(col.map(|z| z.re));
                cols.push(col.map(|z| z.im));
            }
        }
    }
    let stacked = if cols.is_empty() { RMat::zeros(dim, 0) } else { RMat::from_columns(&cols) };
    let basis = orth_range(&stacked, cfg)?;
    if basis.ncols() != q.dimension() {
        return Err(Error::NumericalDegeneracy(format!(
            "real invariant subspace for λ={} has dimension {} instead of {}",
            q.representative,
            basis.ncols(),
            q.dimension()
        )));
    }
    symplectic_basis(&basis, cfg)
}

/// Members of a class sorted for display; used by diagnostics.
pub fn describe(z: C64) -> String {
    if z.im == 0.0 {
        format!("{}", z.re)
    } else {
        format!("{}{:+}i", z.re, z.im)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{c, pairing};
    use nalgebra::dmatrix;

    fn cfg() -> ToleranceConfig {
        ToleranceConfig::default()
    }

    #[test]
    fn diagonal_real_pair() {
        let a = dmatrix![2.0, 0.0; 0.0, 0.5];
        let (q, _) = eigen_quadruples(&a, &cfg()).unwrap();
        assert_eq!(q.len(), 1);
        assert_eq!(q[0].case_tag, CaseTag::RealOffCircle);
        assert!((q[0].representative - c(2.0, 0.0)).norm() < 1e-14);
        assert_eq!(q[0].members.len(), 2);
    }

    #[test]
    fn quarter_rotation() {
        let a = dmatrix![0.0, -1.0; 1.0, 0.0];
        let (q, _) = eigen_quadruples(&a, &cfg()).unwrap();
        assert_eq!(q.len(), 1);
        assert_eq!(q[0].case_tag, CaseTag::UnitNonReal);
        assert!((q[0].representative - c(0.0, 1.0)).norm() < 1e-14);
        assert_eq!(q[0].representative.norm(), 1.0);
    }

    #[test]
    fn complex_quadruple() {
        // diag(R(z)^{-T}, R(z)) is symplectic, with z = 2e^{iπ/3}
        let z = C64::from_polar(2.0, std::f64::consts::FRAC_PI_3);
        let r = dmatrix![z.re, -z.im; z.im, z.re];
        let rit = r.clone().try_inverse().unwrap().transpose();
        let mut a = RMat::zeros(4, 4);
        a.view_mut((0, 0), (2, 2)).copy_from(&rit);
        a.view_mut((2, 2), (2, 2)).copy_from(&r);
        let (q, _) = eigen_quadruples(&a, &cfg()).unwrap();
        assert_eq!(q.len(), 1);
        assert_eq!(q[0].case_tag, CaseTag::ComplexOffCircle);
        assert!((q[0].representative - z).norm() < 1e-12);
        assert_eq!(q[0].members.len(), 4);
    }

    #[test]
    fn not_symplectic() {
        let a = dmatrix![2.0, 0.0; 0.0, 2.0];
        assert!(matches!(eigen_quadruples(&a, &cfg()), Err(Error::NotSymplectic { .. })));
    }

    #[test]
    fn shear_ladder() {
        let a = dmatrix![1.0, 1.0; 0.0, 1.0];
        let (e, l) = generalized_eigenspace(&a, c(1.0, 0.0), &cfg()).unwrap();
        assert_eq!(e.ncols(), 2);
        assert_eq!(l.dims, vec![1, 2]);
        assert_eq!(l.p, 1);
    }

    #[test]
    fn diagonal_ladder_and_non_eigenvalue() {
        let a = dmatrix![2.0, 0.0; 0.0, 0.5];
        let (e, l) = generalized_eigenspace(&a, c(2.0, 0.0), &cfg()).unwrap();
        assert_eq!(l.dims, vec![1]);
        assert_eq!(l.p, 0);
        assert!(e[(1, 0)].norm() < 1e-15);
        assert!(matches!(
            generalized_eigenspace(&a, c(3.0, 0.0), &cfg()),
            Err(Error::NotAnEigenvalue { .. })
        ));
    }

    #[test]
    fn real_subspace_of_direct_sum() {
        // R(π/2) ⋄ diag(3, 1/3): coordinates (x1, x2, y1, y2)
        let mut a = RMat::zeros(4, 4);
        a[(0, 0)] = 0.0;
        a[(0, 2)] = -1.0;
        a[(2, 0)] = 1.0;
        a[(1, 1)] = 3.0;
        a[(3, 3)] = 1.0 / 3.0;
        let (classes, _) = eigen_quadruples(&a, &cfg()).unwrap();
        let three = classes.iter().find(|q| q.case_tag == CaseTag::RealOffCircle).unwrap();
        let w = invariant_real_subspace(&a, three, &cfg()).unwrap();
        assert_eq!(w.ncols(), 2);
        // span is {e2, e4}
        for i in [0, 2] {
            assert!(w.row(i).norm() < 1e-14);
        }
        assert!((pairing(&w, &w) - crate::numcore::omega(2)).norm() < 1e-13);
        // invariance
        let aw = &a * &w;
        let resid = &aw - &w * (w.transpose() * &aw);
        assert!(resid.norm() < 1e-13);
    }

    #[test]
    fn identity_subspace() {
        let a = RMat::identity(2, 2);
        let (classes, _) = eigen_quadruples(&a, &cfg()).unwrap();
        assert_eq!(classes[0].case_tag, CaseTag::PlusOne);
        let w = invariant_real_subspace(&a, &classes[0], &cfg()).unwrap();
        assert_eq!(w.ncols(), 2);
    }

    #[test]
    fn fold_is_canonical() {
        let z = C64::from_polar(0.5, -1.0);
        let f = fold(z);
        assert!(f.norm() >= 1.0 && f.im >= 0.0);
        assert!((f - C64::from_polar(2.0, 1.0)).norm() < 1e-14);
    }
}
