//! Dense Hermitian eigensolves and banded complex LU.

pub mod banded;
pub mod hermitian;

pub use banded::{BandedLu, BandedMatrix};
pub use hermitian::{eigh, eigh_lowest, eigvalsh_lowest, EigenPairs, Tridiagonal};
