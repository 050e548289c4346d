#![allow(dead_code)]

use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sympnf::synth::BlockSpec;
use sympnf::NormalFormBlock;

pub type C64 = Complex<f64>;

pub fn unit(phi: f64) -> C64 {
    C64::from_polar(1.0, phi)
}

/// Every single-block shape in the grid, over a few eigenvalues each.
pub fn single_blocks() -> Vec<NormalFormBlock> {
    let mut out = Vec::new();
    for &l in &[2.0, -1.5, 3.7] {
        for q in 1..=3 {
            out.push(NormalFormBlock::real_off(l, q));
        }
    }
    for &z in &[C64::from_polar(2.0, std::f64::consts::FRAC_PI_4), C64::from_polar(1.5, 2.0)] {
        for q in 1..=2 {
            out.push(NormalFormBlock::complex_off(z, q));
        }
    }
    for &l in &[1.0, -1.0] {
        for r in 1..=3 {
            for s in [-1, 0, 1] {
                if s == 0 && r % 2 == 0 {
                    continue;
                }
                out.push(NormalFormBlock::plus_minus_one(l, r, s));
            }
        }
    }
    for &phi in &[std::f64::consts::FRAC_PI_3, 2.2] {
        for s in [-1, 1] {
            for k in 1..=2 {
                out.push(NormalFormBlock::unit_odd(unit(phi), k, s));
            }
            for k in 0..=2 {
                out.push(NormalFormBlock::unit_even(unit(phi), k, s));
            }
        }
    }
    out
}

/// Blocks used to assemble mixed specs; eigenvalues repeat on purpose so
/// that classes carry several blocks.
fn pool() -> Vec<NormalFormBlock> {
    let z = unit(1.1);
    let w = C64::from_polar(1.8, 0.9);
    let mut out = vec![
        NormalFormBlock::real_off(2.5, 1),
        NormalFormBlock::real_off(2.5, 2),
        NormalFormBlock::real_off(-3.0, 1),
        NormalFormBlock::complex_off(w, 1),
        NormalFormBlock::complex_off(w, 2),
    ];
    for &l in &[1.0, -1.0] {
        for (r, s) in [(1, 1), (1, -1), (1, 0), (2, 1), (2, -1), (3, 0), (3, 1)] {
            out.push(NormalFormBlock::plus_minus_one(l, r, s));
        }
    }
    for s in [-1, 1] {
        out.push(NormalFormBlock::unit_odd(z, 1, s));
        out.push(NormalFormBlock::unit_even(z, 0, s));
        out.push(NormalFormBlock::unit_even(z, 1, s));
    }
    out
}

/// Random multi-block specs of total dimension at most `max_dim`.
pub fn mixed_specs(count: usize, max_dim: usize, seed: u64) -> Vec<BlockSpec> {
    let pool = pool();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let want = rng.random_range(2..=4);
        let mut blocks = Vec::new();
        let mut dim = 0;
        for _ in 0..20 {
            if blocks.len() == want {
                break;
            }
            let b = pool[rng.random_range(0..pool.len())];
            if dim + b.dim <= max_dim {
                dim += b.dim;
                blocks.push(b);
            }
        }
        if blocks.len() >= 2 {
            out.push(BlockSpec::new(blocks, 1000 + out.len() as u64));
        }
    }
    out
}

/// The round-trip grid: each single block with two conjugators, plus mixed specs.
pub fn grid() -> Vec<BlockSpec> {
    let mut out = Vec::new();
    for (i, b) in single_blocks().into_iter().enumerate() {
        for j in 0..2 {
            out.push(BlockSpec::new(vec![b], (10 * i + j) as u64));
        }
    }
    out.extend(mixed_specs(110, 16, 7));
    out
}
