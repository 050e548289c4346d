mod common;

use nalgebra::Complex;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sympnf::numcore::{symplectic_left_inverse, RMat};
use sympnf::synth::{build_from_params, random_symplectic, BlockSpec};
use sympnf::{analyze, conjugacy_equal, NormalFormBlock, ToleranceConfig};

use common::unit;

fn random_blocks(seed: u64, max_dim: usize) -> Vec<NormalFormBlock> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sign = |rng: &mut ChaCha8Rng| [-1, 1][rng.random_range(0..2)];
    let mut blocks = Vec::new();
    let mut dim = 0;
    loop {
        let b = match rng.random_range(0..5) {
            0 => NormalFormBlock::real_off(1.5 + rng.random_range(0..3) as f64, rng.random_range(1..4)),
            1 => NormalFormBlock::complex_off(Complex::from_polar(1.8, 0.9), rng.random_range(1..3)),
            2 => {
                let r = rng.random_range(1..7);
                let s = if r % 2 == 1 { rng.random_range(-1..2) } else { sign(&mut rng) };
                NormalFormBlock::plus_minus_one(if rng.random_bool(0.5) { 1.0 } else { -1.0 }, r, s)
            }
            3 => NormalFormBlock::unit_odd(unit(1.1), rng.random_range(1..4), sign(&mut rng)),
            _ => NormalFormBlock::unit_even(unit(0.7), rng.random_range(0..4), sign(&mut rng)),
        };
        if dim + b.dim > max_dim {
            if blocks.is_empty() {
                continue;
            }
            return blocks;
        }
        dim += b.dim;
        blocks.push(b);
    }
}

fn recovers(blocks: Vec<NormalFormBlock>, seed: u64) -> Result<(), String> {
    let spec = BlockSpec::new(blocks, seed);
    let (a, expected) = build_from_params(&spec).map_err(|e| e.to_string())?;
    let res = analyze(&a, &ToleranceConfig::default()).map_err(|e| format!("{:?}: {e}", spec.blocks))?;
    match res.fingerprint.discrepancy(&expected, 1e-7) {
        None => Ok(()),
        Some(d) => Err(format!("{:?}: {d}", spec.blocks)),
    }
}

#[test]
fn larger_random_specs_round_trip() {
    let failures: Vec<String> = (0..120).filter_map(|seed| recovers(random_blocks(seed, 24), seed).err()).collect();
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn opposite_sign_unit_blocks_of_equal_size() {
    for seed in 0..6 {
        let blocks = vec![
            NormalFormBlock::unit_odd(unit(1.1), 2, -1),
            NormalFormBlock::unit_odd(unit(1.1), 2, 1),
            NormalFormBlock::unit_odd(unit(1.1), 1, -1),
        ];
        recovers(blocks, seed).unwrap();
        let blocks = vec![NormalFormBlock::unit_even(unit(0.7), 1, 1), NormalFormBlock::unit_even(unit(0.7), 1, -1)];
        recovers(blocks, seed).unwrap();
    }
}

#[test]
fn long_jordan_chains() {
    recovers(vec![NormalFormBlock::plus_minus_one(1.0, 6, -1)], 3).unwrap();
    recovers(vec![NormalFormBlock::plus_minus_one(-1.0, 5, 0)], 4).unwrap();
    recovers(vec![NormalFormBlock::unit_even(unit(0.7), 3, 1)], 241).unwrap();
    recovers(vec![NormalFormBlock::real_off(2.0, 5)], 5).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conjugation_preserves_fingerprint(seed in 0u64..10_000, q_seed in 0u64..10_000) {
        let blocks = random_blocks(seed, 12);
        let (a, _) = build_from_params(&BlockSpec::new(blocks, seed)).unwrap();
        let q = random_symplectic(a.nrows() / 2, q_seed, 1e2).unwrap();
        let b: RMat = &q * &a * symplectic_left_inverse(&q);
        let rep = conjugacy_equal(&a, &b, &ToleranceConfig::default()).unwrap();
        prop_assert!(rep.conjugate, "{:?}", rep.discrepancy);
    }

    #[test]
    fn flipping_a_sign_breaks_conjugacy(seed in 0u64..10_000, k in 0usize..3) {
        let b = NormalFormBlock::unit_even(unit(0.7), k, 1);
        let mut flipped = b;
        flipped.sign = -1;
        let (x, _) = build_from_params(&BlockSpec::new(vec![b], seed)).unwrap();
        let (y, _) = build_from_params(&BlockSpec::new(vec![flipped], seed + 1)).unwrap();
        let rep = conjugacy_equal(&x, &y, &ToleranceConfig::default()).unwrap();
        prop_assert!(!rep.conjugate);
        prop_assert!(rep.discrepancy.unwrap().contains("signature"));
    }

    #[test]
    fn normal_form_of_normal_form_is_itself(seed in 0u64..10_000) {
        let blocks = random_blocks(seed, 12);
        let (a, _) = build_from_params(&BlockSpec::new(blocks, seed)).unwrap();
        let cfg = ToleranceConfig::default();
        let first = analyze(&a, &cfg).unwrap();
        let second = analyze(&first.n, &cfg).unwrap();
        prop_assert_eq!(first.blocks.len(), second.blocks.len());
        prop_assert!((&first.n - &second.n).norm() <= 1e-9 * first.n.norm());
    }
}
