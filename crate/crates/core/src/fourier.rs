//! Periodic grid functions on [0, 1) and their Fourier coefficients.
//!
//! Coefficients use the convention `u_n = ∫ u(x) e^{-2πinx} dx` and are stored
//! in FFT order. Pairings are bilinear (no conjugation).

use num_complex::Complex64 as C64;
use rustfft::FftPlanner;
use std::cell::RefCell;
use std::f64::consts::PI;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub fn freq(k: usize, m: usize) -> i64 {
    if k < m.div_ceil(2) {
        k as i64
    } else {
        k as i64 - m as i64
    }
}

pub fn index(n: i64, m: usize) -> usize {
    n.rem_euclid(m as i64) as usize
}

pub fn grid(m: usize) -> Vec<f64> {
    (0..m).map(|j| j as f64 / m as f64).collect()
}

/// Samples to coefficients.
pub fn forward(samples: &[C64]) -> Vec<C64> {
    let m = samples.len();
    let mut buf = samples.to_vec();
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(m).process(&mut buf));
    let s = 1.0 / m as f64;
    buf.iter_mut().for_each(|c| *c *= s);
    buf
}

/// Coefficients to samples.
pub fn inverse(coeffs: &[C64]) -> Vec<C64> {
    let m = coeffs.len();
    let mut buf = coeffs.to_vec();
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(m).process(&mut buf));
    buf
}

pub fn real_to_complex(v: &[f64]) -> Vec<C64> {
    v.iter().map(|&x| C64::new(x, 0.0)).collect()
}

/// Apply a Fourier multiplier `sym(n)` to sampled data.
pub fn multiplier<F: Fn(i64) -> C64>(samples: &[C64], sym: F) -> Vec<C64> {
    let m = samples.len();
    let mut c = forward(samples);
    for (k, ck) in c.iter_mut().enumerate() {
        *ck *= sym(freq(k, m));
    }
    inverse(&c)
}

/// Spectral derivative; odd orders drop the Nyquist mode.
pub fn derivative(samples: &[C64], order: u32) -> Vec<C64> {
    let m = samples.len();
    multiplier(samples, |n| {
        if order % 2 == 1 && m % 2 == 0 && n == -(m as i64) / 2 {
            C64::new(0.0, 0.0)
        } else {
            C64::new(0.0, 2.0 * PI * n as f64).powu(order)
        }
    })
}

/// ∂ₓ^{-k} on mean-zero functions; the constant mode is annihilated.
pub fn inv_derivative(samples: &[C64], k: u32) -> Vec<C64> {
    let m = samples.len();
    multiplier(samples, |n| {
        if n == 0 || (m % 2 == 0 && n == -(m as i64) / 2) {
            C64::new(0.0, 0.0)
        } else {
            C64::new(0.0, 2.0 * PI * n as f64).powu(k).inv()
        }
    })
}

/// ∫₀¹ u v dx (bilinear).
pub fn pair(u: &[C64], v: &[C64]) -> C64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum::<C64>() / u.len() as f64
}

pub fn mean(u: &[C64]) -> C64 {
    u.iter().sum::<C64>() / u.len() as f64
}

/// Trigonometric interpolation onto a grid of size `m_new`.
pub fn resample(samples: &[C64], m_new: usize) -> Vec<C64> {
    let m = samples.len();
    if m == m_new {
        return samples.to_vec();
    }
    let c = forward(samples);
    let mut out = vec![C64::new(0.0, 0.0); m_new];
    let lim = (m.min(m_new) / 2) as i64;
    for n in -lim + 1..lim {
        out[index(n, m_new)] = c[index(n, m)];
    }
    inverse(&out)
}

/// Evaluate the trigonometric interpolant at an arbitrary point.
pub fn eval_at(coeffs: &[C64], x: f64) -> C64 {
    let m = coeffs.len();
    let mut s = C64::new(0.0, 0.0);
    for (k, c) in coeffs.iter().enumerate() {
        let n = freq(k, m);
        if m % 2 == 0 && n == -(m as i64) / 2 {
            continue;
        }
        s += c * C64::from_polar(1.0, 2.0 * PI * n as f64 * x);
    }
    s
}

pub fn sup_norm(u: &[C64]) -> f64 {
    u.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave(m: usize, n: i64) -> Vec<C64> {
        grid(m).iter().map(|x| C64::from_polar(1.0, 2.0 * PI * n as f64 * x)).collect()
    }

    #[test]
    fn roundtrip_and_single_mode() {
        let u = wave(32, 3);
        let c = forward(&u);
        assert!((c[3] - 1.0).norm() < 1e-14);
        let back = inverse(&c);
        assert!(u.iter().zip(&back).all(|(a, b)| (a - b).norm() < 1e-14));
    }

    #[test]
    fn derivative_and_inverse() {
        let u = wave(64, -5);
        let du = derivative(&u, 1);
        let k = C64::new(0.0, -10.0 * PI);
        assert!(du.iter().zip(&u).all(|(d, a)| (d - k * a).norm() < 1e-10));
        let back = inv_derivative(&du, 1);
        assert!(back.iter().zip(&u).all(|(a, b)| (a - b).norm() < 1e-12));
    }

    #[test]
    fn pairing_is_bilinear_orthogonality() {
        let u = wave(16, 2);
        let v = wave(16, -2);
        let w = wave(16, 3);
        assert!((pair(&u, &v) - 1.0).norm() < 1e-14);
        assert!(pair(&u, &w).norm() < 1e-14);
    }
}
