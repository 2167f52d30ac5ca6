//! Thin wrappers over rustfft for row-major 2D arrays.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::exec::{for_each_chunk, Execution};

fn plans(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    }
}

/// In-place unnormalized 1D transforms of every contiguous row of length `n`.
pub fn fft_rows(exec: Execution, data: &mut [Complex64], n: usize, inverse: bool) {
    let plan = plans(n, inverse);
    let rows_per_chunk = (data.len() / n / 64).max(1);
    for_each_chunk(exec, data, rows_per_chunk * n, |_, chunk| {
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        plan.process_with_scratch(chunk, &mut scratch);
    });
}

fn transpose(data: &[Complex64], n1: usize, n2: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    const B: usize = 32;
    for ib in (0..n1).step_by(B) {
        for jb in (0..n2).step_by(B) {
            for i in ib..(ib + B).min(n1) {
                for j in jb..(jb + B).min(n2) {
                    out[j * n1 + i] = data[i * n2 + j];
                }
            }
        }
    }
    out
}

/// Unnormalized 2D transform of an `n1 x n2` row-major array
/// (index `i1 * n2 + i2`). Forward uses `exp(-2 pi i f.x)`.
pub fn fft2(exec: Execution, data: &mut Vec<Complex64>, n1: usize, n2: usize, inverse: bool) {
    assert_eq!(data.len(), n1 * n2);
    fft_rows(exec, data, n2, inverse);
    let mut t = transpose(data, n1, n2);
    fft_rows(exec, &mut t, n1, inverse);
    *data = transpose(&t, n2, n1);
}

/// Maps a signed frequency to its FFT bin.
#[inline]
pub fn bin(f: i64, n: usize) -> usize {
    f.rem_euclid(n as i64) as usize
}

/// Maps an FFT bin to the signed frequency in `[-n/2, n/2)`.
#[inline]
pub fn signed(k: usize, n: usize) -> i64 {
    let k = k as i64;
    let n = n as i64;
    if k >= (n + 1) / 2 {
        k - n
    } else {
        k
    }
}
