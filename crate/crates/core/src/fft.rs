//! In-place radix-2 Cooley-Tukey FFT.
//!
//! Lengths must be powers of two; callers zero-pad with [`padded_len`].
//! Neither direction is normalized, so `inverse(forward(x)) = n * x` and
//! Parseval reads `sum |X_k|^2 = n * sum |x_j|^2`.

use alloc::vec::Vec;
use core::f64::consts::PI;
use core::ops::{Add, Mul, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub const ZERO: Complex = Complex { re: 0.0, im: 0.0 };

    pub fn new(re: f64, im: f64) -> Self {
        Complex { re, im }
    }

    pub fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }

    pub fn norm(self) -> f64 {
        libm::hypot(self.re, self.im)
    }

    pub fn conj(self) -> Self {
        Complex::new(self.re, -self.im)
    }

    pub fn scale(self, s: f64) -> Self {
        Complex::new(self.re * s, self.im * s)
    }
}

impl Add for Complex {
    type Output = Complex;
    fn add(self, o: Complex) -> Complex {
        Complex::new(self.re + o.re, self.im + o.im)
    }
}

impl Sub for Complex {
    type Output = Complex;
    fn sub(self, o: Complex) -> Complex {
        Complex::new(self.re - o.re, self.im - o.im)
    }
}

impl Mul for Complex {
    type Output = Complex;
    fn mul(self, o: Complex) -> Complex {
        Complex::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }
}

/// Smallest power of two `>= n` (1 for `n = 0`).
pub fn padded_len(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

fn transform(buf: &mut [Complex], sign: f64) {
    let n = buf.len();
    assert!(n.is_power_of_two(), "fft length {n} is not a power of two");
    if n == 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = sign * 2.0 * PI / len as f64;
        // twiddles per stage from direct sin/cos keep rounding error flat
        let twiddles: Vec<Complex> = (0..half)
            .map(|k| {
                let a = step * k as f64;
                Complex::new(libm::cos(a), libm::sin(a))
            })
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

/// Forward transform, `X_k = sum_j x_j exp(-2 pi i jk / n)`.
pub fn forward(buf: &mut [Complex]) {
    transform(buf, -1.0);
}

/// Unnormalized inverse, `x_j = sum_k X_k exp(+2 pi i jk / n)`.
pub fn inverse(buf: &mut [Complex]) {
    transform(buf, 1.0);
}

/// Spectrum of a real sequence zero-padded to the next power of two.
pub fn real_spectrum(x: &[f64]) -> Vec<Complex> {
    let n = padded_len(x.len());
    let mut buf: Vec<Complex> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(n, Complex::ZERO);
    forward(&mut buf);
    buf
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(x: &[f64]) -> Vec<Complex> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter().enumerate().fold(Complex::ZERO, |acc, (j, &v)| {
                    let a = -2.0 * PI * (j * k % n) as f64 / n as f64;
                    acc + Complex::new(v * libm::cos(a), v * libm::sin(a))
                })
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft() {
        let x: Vec<f64> = (0..64).map(|i| libm::sin(i as f64 * 0.37) + (i % 5) as f64).collect();
        let fast = real_spectrum(&x);
        let slow = naive_dft(&x);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((*a - *b).norm() < 1e-10);
        }
    }

    #[test]
    fn constant_is_dc_only() {
        let spec = real_spectrum(&[2.5; 16]);
        assert!((spec[0].re - 40.0).abs() < 1e-12);
        assert!(spec[1..].iter().all(|c| c.norm() < 1e-12));
    }

    #[test]
    fn inverse_round_trip() {
        let x = [1.0, -2.0, 3.5, 0.0, 0.25, 7.0, -1.0, 2.0];
        let mut buf = real_spectrum(&x);
        inverse(&mut buf);
        for (b, v) in buf.iter().zip(x) {
            assert!((b.re / 8.0 - v).abs() < 1e-12 && b.im.abs() < 1e-12);
        }
    }

    #[test]
    fn pads_to_power_of_two() {
        assert_eq!(padded_len(0), 1);
        assert_eq!(padded_len(5), 8);
        assert_eq!(real_spectrum(&[1.0; 5]).len(), 8);
    }
}
