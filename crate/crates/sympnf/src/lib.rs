//! Symplectic normal forms of real symplectic matrices.
//!
//! Given A in Sp(2n, ℝ), [`analyze`] returns the blocks of its normal form,
//! the block-diagonal matrix N and a symplectic P with P⁻¹AP = N. The
//! [`Fingerprint`] of a matrix (eigenvalue classes, kernel ladders and Q̂
//! signatures) is a complete conjugacy invariant; [`conjugacy_equal`]
//! compares two of them.

pub mod blocks;
pub mod cli;
pub mod error;
pub mod forms;
pub mod normalform;
pub mod numcore;
pub mod spectral;
pub mod synth;

pub use blocks::{
    analyze, build_block, conjugacy_equal, fingerprint_of, symplectic_direct_sum, ConjugacyReport, Fingerprint,
    NormalFormBlock, NormalFormResult,
};
pub use error::{Error, Result};
pub use numcore::ToleranceConfig;
pub use spectral::CaseTag;
