//! Seeded generation of symplectic matrices with a prescribed normal form,
//! and the fingerprint those parameters imply.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, QR};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::{build_block, direct_sum_all, ClassFingerprint, Fingerprint, NormalFormBlock, QhatEntry};
use crate::error::{Error, Result};
use crate::forms::Signature;
use crate::numcore::{singular_values, symplectic_left_inverse, to_complex, CMat, RMat, ToleranceConfig, C64};
use crate::spectral::{class_order, CaseTag};

pub const MAX_ATTEMPTS: usize = 64;

fn default_cap() -> f64 {
    1e3
}

/// Block parameters plus the conjugator used to hide them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub blocks: Vec<NormalFormBlock>,
    pub conjugator_seed: u64,
    #[serde(default = "default_cap")]
    pub conjugator_condition_cap: f64,
}

impl BlockSpec {
    pub fn new(blocks: Vec<NormalFormBlock>, seed: u64) -> Self {
        BlockSpec { blocks, conjugator_seed: seed, conjugator_condition_cap: default_cap() }
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.dim).sum()
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> RMat {
    RMat::from_fn(rows, cols, |_, _| scale * rng.random_range(-1.0..1.0))
}

fn orthogonal_symplectic(rng: &mut ChaCha8Rng, n: usize) -> RMat {
    let z = CMat::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let u = QR::new(z).q();
    let mut o = RMat::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let (x, y) = (u[(i, j)].re, u[(i, j)].im);
            o[(i, j)] = x;
            o[(i, n + j)] = -y;
            o[(n + i, j)] = y;
            o[(n + i, n + j)] = x;
        }
    }
    o
}

fn symmetric(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> RMat {
    let s = uniform(rng, n, n, scale);
    (&s + s.transpose()) * 0.5
}

fn sample(rng: &mut ChaCha8Rng, n: usize) -> RMat {
    let scale = 0.8 / (n as f64).sqrt();
    let eye = RMat::identity(n, n);
    let mut upper = RMat::identity(2 * n, 2 * n);
    upper.view_mut((0, n), (n, n)).copy_from(&symmetric(rng, n, scale));
    let mut lower = RMat::identity(2 * n, 2 * n);
    lower.view_mut((n, 0), (n, n)).copy_from(&symmetric(rng, n, scale));
    let d = &eye + uniform(rng, n, n, 0.5 * scale);
    let mut diag = RMat::zeros(2 * n, 2 * n);
    let dit = d.clone().try_inverse().unwrap_or_else(|| eye.clone()).transpose();
    diag.view_mut((0, 0), (n, n)).copy_from(&dit);
    diag.view_mut((n, n), (n, n)).copy_from(&d);
    orthogonal_symplectic(rng, n) * upper * diag * lower * orthogonal_symplectic(rng, n)
}

fn condition(m: &RMat) -> f64 {
    let sv = singular_values(m);
    match (sv.first(), sv.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Random element of Sp(2n, ℝ) with 2-norm condition number at most `cap`.
/// A product of orthogonal-symplectic, shear and diagonal factors, resampled
/// until the cap holds.
pub fn random_symplectic(n: usize, seed: u64, cap: f64) -> Result<RMat> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be at least 1".into()));
    }
    if !(cap >= 1.0) {
        return Err(Error::InvalidInput(format!("condition cap must be at least 1, got {cap}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let p = sample(&mut rng, n);
        if condition(&p) <= cap {
            return Ok(p);
        }
    }
    Err(Error::GenerationFailure { cap, attempts: MAX_ATTEMPTS })
}

/// A = P N P⁻¹ for the spec's blocks; returns (A, N, P).
pub fn build_with_conjugator(spec: &BlockSpec) -> Result<(RMat, RMat, RMat)> {
    if spec.blocks.is_empty() {
        return Err(Error::InvalidInput("spec has no blocks".into()));
    }
    let mut mats = Vec::with_capacity(spec.blocks.len());
    for b in &spec.blocks {
        mats.push(build_block(b)?);
    }
    let n = direct_sum_all(&mats)?;
    let p = random_symplectic(n.nrows() / 2, spec.conjugator_seed, spec.conjugator_condition_cap)?;
    let a = &p * &n * symplectic_left_inverse(&p);
    Ok((a, n, p))
}

/// The conjugated matrix together with the fingerprint its blocks imply.
pub fn build_from_params(spec: &BlockSpec) -> Result<(RMat, Fingerprint)> {
    let (a, _, _) = build_with_conjugator(spec)?;
    Ok((a, expected_fingerprint(&spec.blocks)))
}

fn class_key(b: &NormalFormBlock) -> (CaseTag, [u64; 2]) {
    (b.case, [b.lambda.re.to_bits(), b.lambda.im.to_bits()])
}

/// Fingerprint predicted from block parameters alone: d_r = Σ min(r, size)
/// over the Jordan sizes at λ, and Q̂_m counts the signs of blocks whose
/// Jordan size is m.
pub fn expected_fingerprint(blocks: &[NormalFormBlock]) -> Fingerprint {
    let mut groups: BTreeMap<(CaseTag, [u64; 2]), Vec<NormalFormBlock>> = BTreeMap::new();
    for b in blocks {
        groups.entry(class_key(b)).or_default().push(*b);
    }
    let mut classes: Vec<ClassFingerprint> = groups
        .into_values()
        .map(|bs| {
            let case = bs[0].case;
            let lambda = bs[0].lambda;
            let mut sizes: Vec<(usize, i8)> = Vec::new();
            for b in &bs {
                for s in b.jordan_sizes() {
                    sizes.push((s, b.sign));
                }
            }
            let top = sizes.iter().map(|x| x.0).max().unwrap_or(0);
            let ladder: Vec<usize> = (1..=top).map(|r| sizes.iter().map(|x| x.0.min(r)).sum()).collect();
            let mut qhat = Vec::new();
            if case.on_circle() {
                let step = if case == CaseTag::UnitNonReal { 1 } else { 2 };
                let mut m = step;
                while m <= top {
                    let n_plus = sizes.iter().filter(|x| x.0 == m && x.1 > 0).count();
                    let n_minus = sizes.iter().filter(|x| x.0 == m && x.1 < 0).count();
                    let n_zero = ladder[m - 1] - n_plus - n_minus;
                    let signature = Signature { n_plus, n_minus, n_zero };
                    qhat.push(QhatEntry { m, rank: n_plus + n_minus, signature });
                    m += step;
                }
            }
            ClassFingerprint { case, lambda, multiplicity: sizes.iter().map(|x| x.0).sum(), ladder, qhat }
        })
        .collect();
    classes.sort_by(|x, y| class_order((x.case, x.lambda), (y.case, y.lambda)));
    Fingerprint { dim: blocks.iter().map(|b| b.dim).sum(), classes }
}

/// dim Ker (A − λI)^r for r = 1..=r_max from explicit powers and their
/// singular values. Independent of the staircase used elsewhere; the rank
/// threshold is rank_rel_tol · max(1, ‖A‖₂)^r.
pub fn brute_force_ladder(a: &RMat, lambda: C64, r_max: usize, cfg: &ToleranceConfig) -> Result<Vec<usize>> {
    let dim = a.nrows();
    if a.ncols() != dim || !dim.is_multiple_of(2) {
        return Err(Error::InvalidInput("expected a square even-sized matrix".into()));
    }
    if r_max > dim {
        return Err(Error::InvalidInput(format!("r_max {r_max} exceeds the dimension {dim}")));
    }
    let norm = singular_values(a).first().copied().unwrap_or(0.0).max(1.0);
    let mut n = to_complex(a);
    for i in 0..dim {
        n[(i, i)] -= lambda;
    }
    let mut power: CMat = DMatrix::identity(dim, dim);
    let mut out = Vec::with_capacity(r_max);
    for r in 1..=r_max {
        power = &n * power;
        let thr = cfg.rank_rel_tol * norm.powi(r as i32);
        let rank = singular_values(&power).iter().filter(|&&s| s > thr).count();
        out.push(dim - rank);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{c, symplectic_residual};

    #[test]
    fn conjugators_are_symplectic_and_deterministic() {
        for n in [1, 2, 4, 8] {
            for seed in 0..5 {
                let p = random_symplectic(n, seed, 1e3).unwrap();
                assert!(symplectic_residual(&p) <= 1e-12 * n as f64, "n {n} seed {seed}");
                assert!(condition(&p) <= 1e3);
                assert_eq!(p, random_symplectic(n, seed, 1e3).unwrap());
            }
        }
        assert_ne!(random_symplectic(2, 1, 1e3).unwrap(), random_symplectic(2, 2, 1e3).unwrap());
        let p = random_symplectic(1, 42, 1e3).unwrap();
        assert!((p.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn impossible_cap_fails() {
        assert_eq!(
            random_symplectic(4, 0, 1.0),
            Err(Error::GenerationFailure { cap: 1.0, attempts: MAX_ATTEMPTS })
        );
        assert!(random_symplectic(0, 0, 10.0).is_err());
    }

    #[test]
    fn build_reconstructs() {
        let spec = BlockSpec::new(
            vec![NormalFormBlock::real_off(2.0, 2), NormalFormBlock::plus_minus_one(1.0, 1, -1)],
            7,
        );
        let (a, n, p) = build_with_conjugator(&spec).unwrap();
        assert!((&a * &p - &p * &n).norm() < 1e-10);
        assert!(symplectic_residual(&a) < 1e-9);
    }

    #[test]
    fn expected_fingerprint_counts() {
        let f = expected_fingerprint(&[
            NormalFormBlock::plus_minus_one(1.0, 1, 1),
            NormalFormBlock::plus_minus_one(1.0, 1, -1),
            NormalFormBlock::plus_minus_one(1.0, 3, 0),
        ]);
        assert_eq!(f.dim, 10);
        let cl = &f.classes[0];
        assert_eq!(cl.ladder, vec![4, 8, 10]);
        assert_eq!(cl.multiplicity, 10);
        assert_eq!(cl.qhat[0].signature, Signature { n_plus: 1, n_minus: 1, n_zero: 6 });
    }

    #[test]
    fn brute_force_on_shear() {
        let shear = nalgebra::dmatrix![1.0, 1.0; 0.0, 1.0];
        let cfg = ToleranceConfig::default();
        assert_eq!(brute_force_ladder(&shear, c(1.0, 0.0), 2, &cfg).unwrap(), vec![1, 2]);
        assert_eq!(brute_force_ladder(&RMat::identity(2, 2), c(1.0, 0.0), 2, &cfg).unwrap(), vec![2, 2]);
        assert_eq!(brute_force_ladder(&shear, c(2.0, 0.0), 1, &cfg).unwrap(), vec![0]);
        let spec = BlockSpec::new(vec![NormalFormBlock::plus_minus_one(1.0, 3, 0)], 3);
        let (a, _) = build_from_params(&spec).unwrap();
        assert_eq!(brute_force_ladder(&a, c(1.0, 0.0), 5, &cfg).unwrap(), vec![2, 4, 6, 6, 6]);
    }
}
