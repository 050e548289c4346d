//! Per-case constructions of the normal-form basis.
//!
//! Each class is processed by peeling off one block at a time: pick a
//! generator (or generator pair) of maximal height in the current local
//! space, build the block's chain basis, transfer it onto the exact block
//! matrix and recurse into the symplectic complement.

use nalgebra::SVD;

use crate::blocks::{build_block, interleave_bases, NormalFormBlock};
use crate::error::{Error, Result};
use crate::forms::{chain, is_unit, q_hat_gram, shift, t_table};
use crate::numcore::{
    omega, omega_pair, pairing, symplectic_complement, symplectic_left_inverse, to_complex, CMat, CVec,
    RMat, ToleranceConfig, C64,
};
use crate::spectral::{invariant_real_subspace, staircase_at, staircase_at_real, CaseTag, QuadrupleClass};

/// A Jordan chain a_i = N^i v (and, for pair cases, a second chain b_j).
#[derive(Debug, Clone, PartialEq)]
pub struct ChainBasis {
    pub lambda: C64,
    pub p: usize,
    pub a_chain: Vec<CVec>,
    pub b_chain: Option<Vec<CVec>>,
}

/// Blocks of one class with their real symplectic bases [E | F] in the
/// ambient coordinates; `basis_columns` interleaves them into one
/// symplectic basis of V_[λ].
#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub blocks: Vec<NormalFormBlock>,
    pub bases: Vec<RMat>,
    pub basis_columns: RMat,
}

fn one() -> C64 {
    C64::new(1.0, 0.0)
}

fn col(m: &CMat, j: usize) -> CVec {
    m.column(j).into_owned()
}

fn conj_vec(v: &CVec) -> CVec {
    v.map(|z| z.conj())
}

fn cols(vs: &[CVec]) -> CMat {
    CMat::from_columns(vs)
}

/// Staircase at λ, real bases when λ is real.
fn stair(m: &RMat, lambda: C64, cfg: &ToleranceConfig) -> Result<Vec<CMat>> {
    let out: Vec<CMat> = if lambda.im == 0.0 {
        staircase_at_real(m, lambda.re, cfg)?.iter().map(to_complex).collect()
    } else {
        staircase_at(m, lambda, cfg)?
    };
    if out.is_empty() {
        return Err(Error::NotAnEigenvalue { re: lambda.re, im: lambda.im });
    }
    Ok(out)
}

/// Largest r with N^r v numerically nonzero.
fn chain_height(n: &CMat, v: &CVec, cfg: &ToleranceConfig) -> usize {
    let scale = n.norm().max(1.0);
    let v0 = v.norm();
    let mut cur = n * v;
    let mut p = 0;
    let mut bound = v0;
    for r in 1..=v.len() {
        bound *= scale;
        if cur.norm() <= cfg.residual_tol * bound {
            break;
        }
        p = r;
        cur = n * cur;
    }
    p
}

/// Symplectic Gram-Schmidt on the second chain:
/// b'_{p−j} = (b_{p−j} − Σ_{r<j} Ω(b_{p−j}, a_r) b'_{p−r}) / Ω(b_{p−j}, a_j),
/// so that Ω(b'_q, a_i) = δ_{q+i,p}.
pub fn symplectic_gram_schmidt(pivot_chain: &ChainBasis, cfg: &ToleranceConfig) -> Result<ChainBasis> {
    let p = pivot_chain.p;
    let a = &pivot_chain.a_chain;
    let b = pivot_chain
        .b_chain
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("Gram-Schmidt needs a second chain".into()))?;
    if a.len() != p + 1 || b.len() != p + 1 {
        return Err(Error::InvalidInput(format!("chains must have length {}", p + 1)));
    }
    let mut out: Vec<Option<CVec>> = vec![None; p + 1];
    for j in 0..=p {
        let bj = &b[p - j];
        let mut acc = bj.clone();
        for r in 0..j {
            let coef = omega_pair(bj, &a[r])?;
            acc -= out[p - r].as_ref().unwrap() * coef;
        }
        let piv = omega_pair(bj, &a[j])?;
        if piv.norm() <= cfg.rank_rel_tol * bj.norm() * a[j].norm() {
            return Err(Error::DegenerateChain(j));
        }
        out[p - j] = Some(acc / piv);
    }
    Ok(ChainBasis {
        lambda: pivot_chain.lambda,
        p,
        a_chain: a.clone(),
        b_chain: Some(out.into_iter().map(|x| x.unwrap()).collect()),
    })
}

/// Adjusts `x` by multiples of `dir(x, p − σ)` so that antidiagonal σ of
/// `table(x)` matches `target` on the entries selected by `mask`, for
/// σ = p−1 down to 0. Each step changes antidiagonal σ real-linearly in
/// the coefficient, so one least-squares solve per antidiagonal suffices.
fn match_antidiagonals(
    x: &CVec,
    p: usize,
    complex: bool,
    table: &dyn Fn(&CVec) -> CMat,
    dir: &dyn Fn(&CVec, usize) -> CVec,
    target: &CMat,
    mask: &dyn Fn(usize, usize) -> bool,
) -> CVec {
    let mut x = x.clone();
    for _sweep in 0..2 {
        for sigma in (0..p).rev() {
            let entries: Vec<(usize, usize)> =
                (0..=sigma).map(|i| (i, sigma - i)).filter(|&(i, j)| mask(i, j)).collect();
            if entries.is_empty() {
                continue;
            }
            let t0 = table(&x);
            let y = dir(&x, p - sigma);
            let d1 = table(&(&x + &y)) - &t0;
            let di = if complex {
                Some(table(&(&x + &y * C64::new(0.0, 1.0))) - &t0)
            } else {
                None
            };
            let rows = 2 * entries.len();
            let ncols = if complex { 2 } else { 1 };
            let mut lhs = RMat::zeros(rows, ncols);
            let mut rhs = RMat::zeros(rows, 1);
            for (e, &(i, j)) in entries.iter().enumerate() {
                let r = target[(i, j)] - t0[(i, j)];
                rhs[(2 * e, 0)] = r.re;
                rhs[(2 * e + 1, 0)] = r.im;
                lhs[(2 * e, 0)] = d1[(i, j)].re;
                lhs[(2 * e + 1, 0)] = d1[(i, j)].im;
                if let Some(di) = &di {
                    lhs[(2 * e, 1)] = di[(i, j)].re;
                    lhs[(2 * e + 1, 1)] = di[(i, j)].im;
                }
            }
            let svd = SVD::new(lhs, true, true);
            let smax = svd.singular_values.max();
            if smax == 0.0 {
                continue;
            }
            let Ok(sol) = svd.solve(&rhs, 1e-10 * smax) else { continue };
            let coef = if complex { C64::new(sol[(0, 0)], sol[(1, 0)]) } else { C64::new(sol[(0, 0)], 0.0) };
            x += &y * coef;
        }
    }
    x
}

/// Raw table R_{i,j} = Ω(N^i v, conj(N^j v)) and the weights λ^{−i} λ̄^{−j}
/// that turn it into T.
struct PolyTable {
    p: usize,
    raw: CMat,
    weight: CMat,
}

impl PolyTable {
    fn new(n: &CMat, lambda: C64, v: &CVec, p: usize) -> Self {
        let ch = chain(n, v, p + 1);
        let raw = CMat::from_fn(p + 1, p + 1, |i, j| omega_pair(&ch[i], &conj_vec(&ch[j])).unwrap());
        let li = one() / lambda;
        let weight = CMat::from_fn(p + 1, p + 1, |i, j| li.powu(i as u32) * li.conj().powu(j as u32));
        PolyTable { p, raw, weight }
    }

    fn r(&self, i: usize, j: usize) -> C64 {
        if i <= self.p && j <= self.p {
            self.raw[(i, j)]
        } else {
            C64::new(0.0, 0.0)
        }
    }

    /// T_{i,j}(Σ c_a N^a v).
    fn eval(&self, c: &[C64], i: usize, j: usize) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for (a, ca) in c.iter().enumerate().take(self.p + 1 - i) {
            for (b, cb) in c.iter().enumerate().take(self.p + 1 - j) {
                acc += ca * cb.conj() * self.r(i + a, j + b);
            }
        }
        acc * self.weight[(i, j)]
    }

    /// Derivatives of T_{i,j} along Re c_a and Im c_a.
    fn grad(&self, c: &[C64], i: usize, j: usize, a: usize) -> (C64, C64) {
        let mut left = C64::new(0.0, 0.0);
        let mut right = C64::new(0.0, 0.0);
        for (b, cb) in c.iter().enumerate() {
            left += self.r(i + a, j + b) * cb.conj();
            right += cb * self.r(i + b, j + a);
        }
        let w = self.weight[(i, j)];
        let im = C64::new(0.0, 1.0);
        ((left + right) * w, (left - right) * im * w)
    }
}

/// Finds x = Σ c_a N^a v whose T-table agrees with `target` on the masked
/// entries, by Gauss-Newton on the coefficients c (real when λ is real).
/// Steps are minimal in the norm Σ_i ‖N^i x‖², so the solution stays close
/// to the starting generator and its chain basis stays well conditioned.
fn solve_generator(
    n: &CMat,
    lambda: C64,
    v: &CVec,
    p: usize,
    target: &CMat,
    mask: &dyn Fn(usize, usize) -> bool,
) -> CVec {
    let complex = lambda.im != 0.0;
    let table = PolyTable::new(n, lambda, v, p);
    let ch = chain(n, v, p + 1);
    let entries: Vec<(usize, usize)> =
        (0..=p).flat_map(|i| (0..=p).map(move |j| (i, j))).filter(|&(i, j)| mask(i, j)).collect();
    let per = if complex { 2 } else { 1 };
    let params = per * (p + 1);

    // metric on the real parameters
    let mut u: Vec<CVec> = Vec::with_capacity(params);
    for a in 0..=p {
        u.push(ch[a].clone());
        if complex {
            u.push(&ch[a] * C64::new(0.0, 1.0));
        }
    }
    let mut cur = CMat::from_columns(&u);
    let mut metric = RMat::zeros(params, params);
    for _ in 0..=p {
        metric += (cur.adjoint() * &cur).map(|z| z.re);
        cur = n * cur;
    }
    let ridge = 1e-14 * metric.trace().max(f64::MIN_POSITIVE);
    for i in 0..params {
        metric[(i, i)] += ridge;
    }
    let chol = metric.cholesky();

    let (pi, pj) = pivot_index(p);
    let start = (target[(pi, pj)].norm() / table.eval(&[one()], pi, pj).norm()).sqrt();
    let mut c = vec![C64::new(0.0, 0.0); p + 1];
    c[0] = C64::new(if start.is_finite() { start } else { 1.0 }, 0.0);
    let scale = target.norm().max(1.0);
    for _ in 0..100 {
        let mut res = RMat::zeros(2 * entries.len(), 1);
        let mut jac = RMat::zeros(2 * entries.len(), params);
        for (e, &(i, j)) in entries.iter().enumerate() {
            let r = target[(i, j)] - table.eval(&c, i, j);
            res[(2 * e, 0)] = r.re;
            res[(2 * e + 1, 0)] = r.im;
            for a in 0..=p {
                let (dre, dim) = table.grad(&c, i, j, a);
                jac[(2 * e, per * a)] = dre.re;
                jac[(2 * e + 1, per * a)] = dre.im;
                if complex {
                    jac[(2 * e, per * a + 1)] = dim.re;
                    jac[(2 * e + 1, per * a + 1)] = dim.im;
                }
            }
        }
        if res.norm() <= 1e-15 * scale {
            break;
        }
        // d = L^{-T} e with e the minimum-norm solution of (J L^{-T}) e = r
        let (jt, back): (RMat, Box<dyn Fn(RMat) -> RMat>) = match &chol {
            Some(ch) => {
                let l = ch.l();
                let lt = l.transpose();
                let jt = l
                    .solve_lower_triangular(&jac.transpose())
                    .map(|m| m.transpose())
                    .unwrap_or_else(|| jac.clone());
                (jt, Box::new(move |e: RMat| lt.solve_upper_triangular(&e).unwrap_or(e)))
            }
            None => (jac.clone(), Box::new(|e: RMat| e)),
        };
        let svd = SVD::new(jt, true, true);
        let smax = svd.singular_values.max();
        if smax == 0.0 {
            break;
        }
        let Ok(e) = svd.solve(&res, 1e-12 * smax) else { break };
        let step = back(e);
        let mut moved = 0.0;
        for a in 0..=p {
            let d = if complex {
                C64::new(step[(per * a, 0)], step[(per * a + 1, 0)])
            } else {
                C64::new(step[(a, 0)], 0.0)
            };
            c[a] += d;
            moved += d.norm();
        }
        if moved <= 1e-16 * c[0].norm() {
            break;
        }
    }
    let mut x = CVec::zeros(v.len());
    for (a, ca) in c.iter().enumerate() {
        x += &ch[a] * *ca;
    }
    x
}

fn pivot_index(p: usize) -> (usize, usize) {
    if p % 2 == 1 {
        let k = p.div_ceil(2);
        (k, k - 1)
    } else {
        (p / 2, p / 2)
    }
}

/// Sign carried by the pivot entry of a T-table.
fn pivot_sign(t: &CMat, p: usize) -> i8 {
    let piv = t[pivot_index(p)];
    let val = if p % 2 == 1 { piv.re } else { -piv.im };
    if val > 0.0 {
        1
    } else {
        -1
    }
}

/// Generator maximizing |Q̂_{p+1}| on E_λ, with the sign of the form there.
fn top_generator(a: &RMat, lambda: C64, p: usize, e: &CMat, cfg: &ToleranceConfig) -> Result<(CVec, i8)> {
    let (gram, scale) = q_hat_gram(a, lambda, p + 1, e)?;
    let h = (&gram + gram.adjoint()) * C64::new(0.5, 0.0);
    let (vals, vecs): (Vec<f64>, CMat) = if lambda.im == 0.0 {
        let eig = h.map(|z| z.re).symmetric_eigen();
        (eig.eigenvalues.iter().copied().collect(), to_complex(&eig.eigenvectors))
    } else {
        let eig = h.symmetric_eigen();
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
    };
    let mut best = 0;
    for (i, v) in vals.iter().enumerate() {
        if v.abs() > vals[best].abs() {
            best = i;
        }
    }
    let top = vals.get(best).copied().unwrap_or(0.0);
    if top.abs() <= cfg.rank_rel_tol * top.abs().max(scale).max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateGenerator(format!(
            "Q̂ of order {} vanishes on the top kernel at λ={lambda}",
            p + 1
        )));
    }
    // the form is conjugate-linear in its second slot, so E·y has value y*Ḡy
    let v = e * col(&vecs, best).map(|z| z.conj());
    Ok((v, if top > 0.0 { 1 } else { -1 }))
}

fn rescale_pivot(a: &RMat, lambda: C64, v: &CVec, p: usize, magnitude: f64, cfg: &ToleranceConfig) -> Result<CVec> {
    let t = t_table(a, lambda, v, p);
    let piv = t[pivot_index(p)].norm();
    let n = shift(a, lambda);
    let ch = chain(&n, v, p + 1);
    let (i, j) = pivot_index(p);
    if piv <= cfg.rank_rel_tol * ch[i].norm() * ch[j].norm() {
        return Err(Error::DegenerateGenerator(format!("pivot T_{{{i},{j}}} vanishes")));
    }
    Ok(v * C64::new((magnitude / piv).sqrt(), 0.0))
}

/// Brings a generator into the normal position for its height p:
/// odd p = 2k−1: T_{k,k−1} = s and T_{i,j} = 0 for i, j ≤ k−1;
/// even p = 2k: T_{k,k} = −si, T_{k,k−1} = si/2 and T_{i,j} = 0 for i, j ≤ k−1.
fn canonical_generator(a: &RMat, lambda: C64, v: &CVec, p: usize, cfg: &ToleranceConfig) -> Result<CVec> {
    let v = rescale_pivot(a, lambda, v, p, 1.0, cfg)?;
    let s = pivot_sign(&t_table(a, lambda, &v, p), p) as f64;
    let k = p.div_ceil(2);
    let kk = p / 2;
    let mut target = CMat::zeros(p + 1, p + 1);
    let even = p.is_multiple_of(2);
    if even && kk >= 1 {
        target[(kk, kk - 1)] = C64::new(0.0, 0.5 * s);
    }
    let mask = |i: usize, j: usize| {
        if even {
            (i < kk && j < kk) || (kk >= 1 && i == kk && j == kk - 1)
        } else {
            i < k && j < k
        }
    };
    let (pi, pj) = pivot_index(p);
    target[(pi, pj)] = if even { C64::new(0.0, -s) } else { C64::new(s, 0.0) };
    let mask = |i: usize, j: usize| (i, j) == (pi, pj) || mask(i, j);
    Ok(solve_generator(&shift(a, lambda), lambda, &v, p, &target, &mask))
}

/// Normalizes a generator of odd height p = 2k−1 at a unit eigenvalue so that
/// T_{k,k−1}(v) = ±1 and T_{i,j}(v) = 0 whenever i, j ≤ k−1.
pub fn normalize_generator_odd(a: &RMat, lambda: C64, v: &CVec, cfg: &ToleranceConfig) -> Result<CVec> {
    if !is_unit(lambda) {
        return Err(Error::InvalidInput(format!("λ must lie on the unit circle, got {lambda}")));
    }
    if v.len() != a.nrows() {
        return Err(Error::InvalidInput("vector length does not match the matrix".into()));
    }
    let n = shift(a, lambda);
    let p = chain_height(&n, v, cfg);
    if p.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!("generator has even height {p}")));
    }
    canonical_generator(a, lambda, v, p, cfg)
}

/// Columns [a_0 … a_p, b'_0 … b'_p] (plus conjugates when λ is not real).
fn pair_columns(basis: &ChainBasis) -> CMat {
    let mut vs: Vec<CVec> = basis.a_chain.clone();
    vs.extend(basis.b_chain.as_ref().unwrap().iter().cloned());
    if basis.lambda.im != 0.0 {
        let bars: Vec<CVec> = vs.iter().map(conj_vec).collect();
        vs.extend(bars);
    }
    cols(&vs)
}

/// Off-circle chain pair: v ∈ E_λ, w ∈ E_{1/λ} with Ω(N_μ^p w, v) = 1,
/// followed by Gram-Schmidt on the w-chain.
fn offcircle_basis(m: &RMat, lambda: C64, cfg: &ToleranceConfig) -> Result<(usize, CMat)> {
    let mu = one() / lambda;
    let mu = if lambda.im == 0.0 { C64::new(mu.re, 0.0) } else { mu };
    let el = stair(m, lambda, cfg)?;
    let em = stair(m, mu, cfg)?;
    let p = el.len() - 1;
    if em.len() - 1 != p {
        return Err(Error::InternalConsistency(format!(
            "heights at λ and 1/λ differ ({p} vs {})",
            em.len() - 1
        )));
    }
    let (el, em) = (el.last().unwrap(), em.last().unwrap());
    let nl = shift(m, lambda);
    let nm = shift(m, mu);
    let mut top = em.clone();
    for _ in 0..p {
        top = &nm * top;
    }
    let g = pairing(&top, el);
    let svd = SVD::new(g, true, true);
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let mut best = 0;
    for i in 0..svd.singular_values.len() {
        if svd.singular_values[i] > svd.singular_values[best] {
            best = i;
        }
    }
    let s1 = svd.singular_values[best];
    if s1 <= cfg.rank_rel_tol * top.norm() * el.norm() {
        return Err(Error::DegenerateGenerator(format!("no pairing between E_λ and E_1/λ at λ={lambda}")));
    }
    let u1 = col(u, best);
    let v1 = vt.row(best).adjoint();
    let v = el * v1;
    let w = em * conj_vec(&u1) / C64::new(s1, 0.0);
    let basis = ChainBasis {
        lambda,
        p,
        a_chain: chain(&nl, &v, p + 1),
        b_chain: Some(chain(&nm, &w, p + 1)),
    };
    let basis = symplectic_gram_schmidt(&basis, cfg)?;
    Ok((p, pair_columns(&basis)))
}

/// ±1 with even height: a pair v, w with Ω(N^p v, w) = 1, both chains
/// isotropic, then Gram-Schmidt.
fn pm1_pair_basis(m: &RMat, lambda: C64, cfg: &ToleranceConfig) -> Result<(usize, CMat)> {
    let st = stair(m, lambda, cfg)?;
    let p = st.len() - 1;
    let e = st.last().unwrap();
    let n = shift(m, lambda);
    let mut top = e.clone();
    for _ in 0..p {
        top = &n * top;
    }
    let g = pairing(&top, e).map(|z| z.re);
    let svd = SVD::new(g, true, true);
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let mut best = 0;
    for i in 0..svd.singular_values.len() {
        if svd.singular_values[i] > svd.singular_values[best] {
            best = i;
        }
    }
    let s1 = svd.singular_values[best];
    if s1 <= cfg.rank_rel_tol * top.norm() * e.norm() {
        return Err(Error::DegenerateGenerator(format!("Ω(N^{p}·, ·) vanishes at λ={lambda}")));
    }
    let ur: CVec = u.column(best).map(|x| C64::new(x, 0.0));
    let vr: CVec = vt.row(best).transpose().map(|x| C64::new(x, 0.0));
    let mut v = e * ur;
    let mut w = e * vr / C64::new(s1, 0.0);
    let zero = CMat::zeros(p + 1, p + 1);
    let all = |_: usize, _: usize| true;
    let table = |x: &CVec| t_table(m, lambda, x, p);
    {
        let w0 = w.clone();
        let dir = |_: &CVec, k: usize| chain(&n, &w0, k + 1).pop().unwrap();
        v = match_antidiagonals(&v, p, false, &table, &dir, &zero, &all);
    }
    {
        let v0 = v.clone();
        let dir = |_: &CVec, k: usize| chain(&n, &v0, k + 1).pop().unwrap();
        w = match_antidiagonals(&w, p, false, &table, &dir, &zero, &all);
    }
    let basis = ChainBasis { lambda, p, a_chain: chain(&n, &v, p + 1), b_chain: Some(chain(&n, &w, p + 1)) };
    let basis = symplectic_gram_schmidt(&basis, cfg)?;
    Ok((p, pair_columns(&basis)))
}

fn single_columns(n: &CMat, v: &CVec, p: usize, lambda: C64) -> CMat {
    let mut vs = chain(n, v, p + 1);
    if lambda.im != 0.0 {
        let bars: Vec<CVec> = vs.iter().map(conj_vec).collect();
        vs.extend(bars);
    }
    cols(&vs)
}

/// Z = Re(S_A S_B^{-1}), checked to intertwine and preserve Ω.
fn transfer(m: &RMat, b: &RMat, s_a: &CMat, s_b: &CMat, cfg: &ToleranceConfig) -> Result<RMat> {
    let inv = s_b
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InternalConsistency("block chain basis is singular".into()))?;
    let zc = s_a * inv;
    let z = zc.map(|x| x.re);
    let zn = z.norm().max(1.0);
    let imag = zc.map(|x| x.im).norm();
    let tol = cfg.residual_tol * 1e2 * zn * zn;
    let sym = (pairing(&z, &z) - omega(z.ncols())).norm();
    let rec = (m * &z - &z * b).norm();
    if imag > tol || sym > tol || rec > tol * m.norm().max(1.0) {
        return Err(Error::InternalConsistency(format!(
            "block transfer failed: imaginary part {imag:.3e}, symplecticity {sym:.3e}, \
             intertwining {rec:.3e}"
        )));
    }
    Ok(z)
}

fn extract_offcircle(m: &RMat, lambda: C64, cfg: &ToleranceConfig) -> Result<(NormalFormBlock, RMat)> {
    let (p, s_a) = offcircle_basis(m, lambda, cfg)?;
    let desc = if lambda.im == 0.0 {
        NormalFormBlock::real_off(lambda.re, p + 1)
    } else {
        NormalFormBlock::complex_off(lambda, p + 1)
    };
    let b = build_block(&desc)?;
    let (pb, s_b) = offcircle_basis(&b, lambda, cfg)?;
    if pb != p {
        return Err(Error::InternalConsistency("canonical block has a different height".into()));
    }
    Ok((desc, transfer(m, &b, &s_a, &s_b, cfg)?))
}

fn extract_single(
    m: &RMat,
    lambda: C64,
    p: usize,
    e: &CMat,
    cfg: &ToleranceConfig,
    make: &dyn Fn(i8) -> NormalFormBlock,
) -> Result<(NormalFormBlock, RMat)> {
    let (v, s) = top_generator(m, lambda, p, e, cfg)?;
    let desc = make(s);
    let b = build_block(&desc)?;
    let st_b = stair(&b, lambda, cfg)?;
    if st_b.len() - 1 != p {
        return Err(Error::InternalConsistency("canonical block has a different height".into()));
    }
    let (u, sb) = top_generator(&b, lambda, p, st_b.last().unwrap(), cfg)?;
    if sb != s {
        return Err(Error::InternalConsistency(format!("canonical block carries sign {sb}, expected {s}")));
    }
    let u = canonical_generator(&b, lambda, &u, p, cfg)?;
    let tau = t_table(&b, lambda, &u, p);
    let v = rescale_pivot(m, lambda, &v, p, tau[pivot_index(p)].norm(), cfg)?;
    if pivot_sign(&t_table(m, lambda, &v, p), p) != pivot_sign(&tau, p) {
        return Err(Error::InternalConsistency("generator sign disagrees with its block".into()));
    }
    let n = shift(m, lambda);
    let all = |_: usize, _: usize| true;
    let v = solve_generator(&n, lambda, &v, p, &tau, &all);
    let s_a = single_columns(&n, &v, p, lambda);
    let s_b = single_columns(&shift(&b, lambda), &u, p, lambda);
    Ok((desc, transfer(m, &b, &s_a, &s_b, cfg)?))
}

fn extract_pm1(m: &RMat, lambda: C64, cfg: &ToleranceConfig) -> Result<(NormalFormBlock, RMat)> {
    let st = stair(m, lambda, cfg)?;
    let p = st.len() - 1;
    if p % 2 == 1 {
        let r = p.div_ceil(2);
        let make = |s: i8| NormalFormBlock::plus_minus_one(lambda.re, r, s);
        return extract_single(m, lambda, p, st.last().unwrap(), cfg, &make);
    }
    let (_, s_a) = pm1_pair_basis(m, lambda, cfg)?;
    let desc = NormalFormBlock::plus_minus_one(lambda.re, p + 1, 0);
    let b = build_block(&desc)?;
    let (pb, s_b) = pm1_pair_basis(&b, lambda, cfg)?;
    if pb != p {
        return Err(Error::InternalConsistency("canonical block has a different height".into()));
    }
    Ok((desc, transfer(m, &b, &s_a, &s_b, cfg)?))
}

fn extract_unit(m: &RMat, lambda: C64, cfg: &ToleranceConfig) -> Result<(NormalFormBlock, RMat)> {
    let st = stair(m, lambda, cfg)?;
    let p = st.len() - 1;
    let make = |s: i8| {
        if p % 2 == 1 {
            NormalFormBlock::unit_odd(lambda, p.div_ceil(2), s)
        } else {
            NormalFormBlock::unit_even(lambda, p / 2, s)
        }
    };
    extract_single(m, lambda, p, st.last().unwrap(), cfg, &make)
}

type Extractor = fn(&RMat, C64, &ToleranceConfig) -> Result<(NormalFormBlock, RMat)>;

fn run(a: &RMat, q: &QuadrupleClass, cfg: &ToleranceConfig, extract: Extractor) -> Result<CaseResult> {
    let mut w = invariant_real_subspace(a, q, cfg)?;
    let mut found: Vec<(NormalFormBlock, RMat)> = Vec::new();
    while w.ncols() > 0 {
        let local = symplectic_left_inverse(&w) * a * &w;
        let (block, z) = extract(&local, q.representative, cfg)?;
        found.push((block, &w * &z));
        if z.ncols() > w.ncols() {
            return Err(Error::InternalConsistency("block larger than its class".into()));
        }
        let comp = symplectic_complement(&z, cfg)?;
        w = &w * comp;
    }
    found.sort_by(|x, y| NormalFormBlock::order_within_class(&x.0, &y.0));
    let (blocks, bases): (Vec<_>, Vec<_>) = found.into_iter().unzip();
    let basis_columns = interleave_bases(a.nrows(), &bases);
    Ok(CaseResult { blocks, bases, basis_columns })
}

pub fn case_offcircle(a: &RMat, q: &QuadrupleClass, cfg: &ToleranceConfig) -> Result<CaseResult> {
    match q.case_tag {
        CaseTag::RealOffCircle | CaseTag::ComplexOffCircle => run(a, q, cfg, extract_offcircle),
        t => Err(Error::InvalidInput(format!("case_offcircle called on a {t:?} class"))),
    }
}

pub fn case_pm1(a: &RMat, q: &QuadrupleClass, cfg: &ToleranceConfig) -> Result<CaseResult> {
    match q.case_tag {
        CaseTag::PlusOne | CaseTag::MinusOne => run(a, q, cfg, extract_pm1),
        t => Err(Error::InvalidInput(format!("case_pm1 called on a {t:?} class"))),
    }
}

pub fn case_unit(a: &RMat, q: &QuadrupleClass, cfg: &ToleranceConfig) -> Result<CaseResult> {
    match q.case_tag {
        CaseTag::UnitNonReal => run(a, q, cfg, extract_unit),
        t => Err(Error::InvalidInput(format!("case_unit called on a {t:?} class"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::c;
    use std::f64::consts::FRAC_PI_3;

    fn cfg() -> ToleranceConfig {
        ToleranceConfig::default()
    }

    fn unit_vec(dim: usize, i: usize) -> CVec {
        let mut v = CVec::zeros(dim);
        v[i] = one();
        v
    }

    #[test]
    fn gram_schmidt_gives_dual_chains() {
        let lambda = C64::new(2.0, 0.0);
        let b = build_block(&NormalFormBlock::real_off(2.0, 3)).unwrap();
        let (p, s) = offcircle_basis(&b, lambda, &cfg()).unwrap();
        assert_eq!(p, 2);
        for q in 0..=p {
            for i in 0..=p {
                let got = omega_pair(&col(&s, p + 1 + q), &col(&s, i)).unwrap();
                let want = if q + i == p { 1.0 } else { 0.0 };
                assert!((got - c(want, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn gram_schmidt_rejects_degenerate_chain() {
        let e = unit_vec(4, 0);
        let basis = ChainBasis { lambda: one(), p: 0, a_chain: vec![e.clone()], b_chain: Some(vec![e]) };
        assert_eq!(symplectic_gram_schmidt(&basis, &cfg()), Err(Error::DegenerateChain(0)));
    }

    #[test]
    fn normalize_odd_on_shear_blocks() {
        for r in [1, 2, 3] {
            for s in [-1i8, 1] {
                let b = build_block(&NormalFormBlock::plus_minus_one(1.0, r, s)).unwrap();
                let dim = 2 * r;
                // start from a generic vector of full height
                let v = CVec::from_fn(dim, |i, _| c(1.0 + i as f64 * 0.37, 0.0));
                let p = chain_height(&shift(&b, one()), &v, &cfg());
                if p.is_multiple_of(2) {
                    continue;
                }
                let u = normalize_generator_odd(&b, one(), &v, &cfg()).unwrap();
                let k = p.div_ceil(2);
                let t = t_table(&b, one(), &u, p);
                assert!((t[(k, k - 1)].re.abs() - 1.0).abs() < 1e-9);
                for i in 0..k {
                    for j in 0..k {
                        assert!(t[(i, j)].norm() < 1e-8, "r={r} T[{i},{j}]={}", t[(i, j)]);
                    }
                }
            }
        }
    }

    #[test]
    fn normalize_odd_unit_block() {
        let lambda = C64::from_polar(1.0, FRAC_PI_3);
        let b = build_block(&NormalFormBlock::unit_odd(lambda, 2, -1)).unwrap();
        let v = CVec::from_fn(8, |i, _| c(0.3 * i as f64 - 1.0, 0.1 * (i * i) as f64));
        let st = staircase_at(&b, lambda, &cfg()).unwrap();
        let e = st.last().unwrap();
        let v = e * (e.adjoint() * v);
        let u = normalize_generator_odd(&b, lambda, &v, &cfg()).unwrap();
        let t = t_table(&b, lambda, &u, 3);
        assert!((t[(2, 1)] - c(-1.0, 0.0)).norm() < 1e-9);
        for i in 0..2 {
            for j in 0..2 {
                assert!(t[(i, j)].norm() < 1e-8);
            }
        }
    }

    #[test]
    fn normalize_rejects_even_height() {
        let b = build_block(&NormalFormBlock::unit_even(C64::from_polar(1.0, 1.0), 1, 1)).unwrap();
        let lambda = C64::from_polar(1.0, 1.0);
        let st = staircase_at(&b, lambda, &cfg()).unwrap();
        let v = col(st.last().unwrap(), 0);
        assert!(matches!(normalize_generator_odd(&b, lambda, &v, &cfg()), Err(Error::InvalidInput(_))));
        assert!(normalize_generator_odd(&b, c(2.0, 0.0), &v, &cfg()).is_err());
    }

    #[test]
    fn chain_height_of_jordan_vectors() {
        let b = build_block(&NormalFormBlock::plus_minus_one(1.0, 3, 1)).unwrap();
        let n = shift(&b, one());
        let st = staircase_at_real(&b, 1.0, &cfg()).unwrap();
        assert_eq!(st.len(), 6);
        assert_eq!(chain_height(&n, &to_complex(&st[0]).column(0).into_owned(), &cfg()), 0);
    }
}
