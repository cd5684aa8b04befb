//! Discrete Fourier transforms.
//!
//! Power-of-two lengths use an iterative radix-2 Cooley–Tukey kernel; any other
//! length falls back to the direct O(N²) sum. The forward transform uses the
//! `e^{-2πi kn/N}` kernel and the inverse carries the `1/N` factor.

use num_complex::Complex64;
use std::f64::consts::PI;

/// In-place forward DFT.
pub fn fft(buf: &mut [Complex64]) {
    transform(buf, false);
}

/// In-place inverse DFT, normalized by `1/N`.
pub fn ifft(buf: &mut [Complex64]) {
    transform(buf, true);
    let scale = 1.0 / buf.len() as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

/// Unnormalized inverse (adjoint of the forward transform).
pub(crate) fn fft_adjoint(buf: &mut [Complex64]) {
    transform(buf, true);
}

fn transform(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        radix2(buf, inverse);
    } else {
        let out = dft_naive(buf, inverse);
        buf.copy_from_slice(&out);
    }
}

/// Direct evaluation of the DFT sum; no normalization in either direction.
pub fn dft_naive(input: &[Complex64], inverse: bool) -> Vec<Complex64> {
    let n = input.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    (0..n)
        .map(|k| {
            input
                .iter()
                .enumerate()
                .map(|(j, &x)| {
                    // reduce the phase index first so large N keeps accuracy
                    let phase = ((j * k) % n) as f64 / n as f64;
                    x * Complex64::from_polar(1.0, sign * 2.0 * PI * phase)
                })
                .sum()
        })
        .collect()
}

fn radix2(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = sign * 2.0 * PI / len as f64;
        let twiddles: Vec<Complex64> = (0..half)
            .map(|k| Complex64::from_polar(1.0, step * k as f64))
            .collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = buf[start + k];
                let b = buf[start + k + half] * twiddles[k];
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

/// Signed frequency of DFT bin `k` for length `n` (`n/2` maps to `+n/2`).
pub fn signed_frequency(k: usize, n: usize) -> i64 {
    if k <= n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_signal(n: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn radix2_matches_naive() {
        for n in [1, 2, 4, 8, 16, 64] {
            let x = random_signal(n, n as u64);
            let mut fast = x.clone();
            fft(&mut fast);
            let slow = dft_naive(&x, false);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).norm() < 1e-12, "n={n}");
            }
        }
    }

    #[test]
    fn non_power_of_two_roundtrip() {
        let x = random_signal(12, 3);
        let mut y = x.clone();
        fft(&mut y);
        ifft(&mut y);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn real_roundtrip_length_16() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let x: Vec<Complex64> = (0..16).map(|_| Complex64::new(rng.gen(), 0.0)).collect();
        let mut y = x.clone();
        fft(&mut y);
        ifft(&mut y);
        let dev = x.iter().zip(&y).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(dev < 1e-10);
    }

    #[test]
    fn parseval() {
        for n in [8, 10, 32] {
            let x = random_signal(n, 7);
            let mut y = x.clone();
            fft(&mut y);
            let ex: f64 = x.iter().map(|v| v.norm_sqr()).sum();
            let ey: f64 = y.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
            assert!((ex - ey).abs() / ex < 1e-10);
        }
    }

    #[test]
    fn signed_frequencies() {
        let f: Vec<i64> = (0..8).map(|k| signed_frequency(k, 8)).collect();
        assert_eq!(f, vec![0, 1, 2, 3, 4, -3, -2, -1]);
    }
}
