//! Iterative radix-2 FFT on power-of-two lengths.
//!
//! Forward transform is unnormalized; the inverse here is also unnormalized
//! (conjugate twiddles), callers apply 1/N where the op contract wants it.

use num_complex::Complex64;

pub fn is_power_of_two(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

/// Twiddle table w[j] = exp(sign * i * pi * j / (n/2)) for j < n/2.
fn twiddles(n: usize, inverse: bool) -> Vec<Complex64> {
    let sign = if inverse { 1.0 } else { -1.0 };
    let step = sign * std::f64::consts::PI / (n / 2).max(1) as f64;
    (0..n / 2).map(|j| Complex64::from_polar(1.0, step * j as f64)).collect()
}

fn transform_with(buf: &mut [Complex64], table: &[Complex64]) {
    let n = buf.len();
    if n <= 1 {
        return;
    }

    // Bit-reversal permutation.
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }

    let mut half = 1usize;
    while half < n {
        let stride = n / (2 * half);
        for start in (0..n).step_by(half * 2) {
            for k in 0..half {
                let w = table[k * stride];
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        half *= 2;
    }
}

/// Transform every contiguous row of length `n` in `data` in place, sharing
/// one twiddle table across rows. `inverse` flips the twiddle sign only.
pub fn transform_rows(data: &mut [Complex64], n: usize, inverse: bool) {
    debug_assert!(is_power_of_two(n));
    debug_assert_eq!(data.len() % n, 0);
    let table = twiddles(n, inverse);
    for row in data.chunks_mut(n) {
        transform_with(row, &table);
    }
}

/// Standard FFT cost model used for the tape's flop estimate.
pub fn flops(rows: usize, n: usize) -> u64 {
    if n <= 1 {
        return 0;
    }
    (rows * 5 * n * n.trailing_zeros() as usize) as u64
}
