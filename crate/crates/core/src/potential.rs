//! Real, mean-zero, 1-periodic potentials stored by Fourier coefficients.

use crate::error::{Error, Result};
use crate::fourier;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// `coeffs[n-1]` holds `q_n` for `1 ≤ n ≤ n_pot`; `q_{-n} = conj(q_n)`, `q_0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    coeffs: Vec<C64>,
    grid: usize,
}

/// JSON form: `{n_pot, coeffs: [[n, re, im], ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PotentialJson {
    pub n_pot: usize,
    pub coeffs: Vec<[f64; 3]>,
}

const HERMITIAN_TOL: f64 = 1e-12;

impl Potential {
    pub fn zero() -> Self {
        Self { coeffs: Vec::new(), grid: 4 }
    }

    /// From positive-index coefficients; trailing zeros are trimmed.
    pub fn from_positive(mut coeffs: Vec<C64>) -> Self {
        while coeffs.last().is_some_and(|c| c.norm() == 0.0) {
            coeffs.pop();
        }
        let grid = (4 * coeffs.len()).max(4).next_power_of_two();
        Self { coeffs, grid }
    }

    /// From `(n, q_n)` pairs over both signs of `n`. Missing partners are
    /// filled by conjugation; inconsistent partners are rejected.
    pub fn from_trig(entries: &[(i64, C64)]) -> Result<Self> {
        let n_pot = entries.iter().map(|(n, _)| n.unsigned_abs() as usize).max().unwrap_or(0);
        let mut pos: Vec<Option<C64>> = vec![None; n_pot];
        let mut neg: Vec<Option<C64>> = vec![None; n_pot];
        for &(n, c) in entries {
            if n == 0 {
                if c.norm() > HERMITIAN_TOL {
                    return Err(Error::Input("nonzero mean (index 0)".into()));
                }
                continue;
            }
            let slot = if n > 0 { &mut pos[n as usize - 1] } else { &mut neg[(-n) as usize - 1] };
            if slot.replace(c).is_some() {
                return Err(Error::Input(format!("duplicate index {n}")));
            }
        }
        let mut coeffs = Vec::with_capacity(n_pot);
        for i in 0..n_pot {
            let c = match (pos[i], neg[i]) {
                (Some(p), Some(m)) => {
                    if (p - m.conj()).norm() > HERMITIAN_TOL * (1.0 + p.norm()) {
                        return Err(Error::Input(format!(
                            "non-Hermitian coefficients at n = ±{}",
                            i + 1
                        )));
                    }
                    p
                }
                (Some(p), None) => p,
                (None, Some(m)) => m.conj(),
                (None, None) => C64::new(0.0, 0.0),
            };
            coeffs.push(c);
        }
        Ok(Self::from_positive(coeffs))
    }

    /// Projects real samples on [0,1) to a potential (mean dropped), keeping
    /// modes above `rel_tol` times the largest one.
    pub fn from_samples(samples: &[f64], rel_tol: f64) -> Self {
        let m = samples.len();
        let c = fourier::forward(&fourier::real_to_complex(samples));
        let half = (m - 1) / 2;
        let mut pos: Vec<C64> = (1..=half).map(|n| c[n]).collect();
        let big = pos.iter().map(|z| z.norm()).fold(0.0, f64::max);
        while pos.last().is_some_and(|z| z.norm() <= rel_tol * big) {
            pos.pop();
        }
        Self::from_positive(pos)
    }

    pub fn n_pot(&self) -> usize {
        self.coeffs.len()
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn coeff(&self, n: i64) -> C64 {
        if n == 0 {
            return C64::new(0.0, 0.0);
        }
        match self.coeffs.get(n.unsigned_abs() as usize - 1) {
            Some(c) if n > 0 => *c,
            Some(c) => c.conj(),
            None => C64::new(0.0, 0.0),
        }
    }

    pub fn positive_coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// ‖q‖ in L².
    pub fn l2_norm(&self) -> f64 {
        (2.0 * self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>()).sqrt()
    }

    /// ‖q‖_s = (Σ |n|^{2s} |q_n|²)^{1/2}.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        let t: f64 = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| ((i + 1) as f64).powf(2.0 * s) * c.norm_sqr())
            .sum();
        (2.0 * t).sqrt()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_derivative(x, 0)
    }

    /// ∂ₓ^order q at x. Exact for the stored trigonometric polynomial; no depth
    /// limit beyond floating-point growth of (2πn)^order.
    pub fn eval_derivative(&self, x: f64, order: u32) -> f64 {
        let step = C64::from_polar(1.0, 2.0 * PI * x);
        let mut e = C64::new(1.0, 0.0);
        let mut s = 0.0;
        for (i, c) in self.coeffs.iter().enumerate() {
            e *= step;
            let n = (i + 1) as f64;
            let k = C64::new(0.0, 2.0 * PI * n).powu(order);
            s += 2.0 * (c * k * e).re;
        }
        s
    }

    /// Samples on an `m`-point grid.
    pub fn samples(&self, m: usize) -> Vec<f64> {
        let mut c = vec![C64::new(0.0, 0.0); m];
        for n in 1..=self.n_pot() as i64 {
            if 2 * n as usize >= m {
                break;
            }
            c[fourier::index(n, m)] = self.coeff(n);
            c[fourier::index(-n, m)] = self.coeff(-n);
        }
        fourier::inverse(&c).iter().map(|z| z.re).collect()
    }

    pub fn samples_complex(&self, m: usize) -> Vec<C64> {
        fourier::real_to_complex(&self.samples(m))
    }

    /// (S_rev q)(x) = q(-x).
    pub fn reverse(&self) -> Self {
        Self { coeffs: self.coeffs.iter().map(|c| c.conj()).collect(), grid: self.grid }
    }

    /// q(· + s).
    pub fn translate(&self, s: f64) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c * C64::from_polar(1.0, 2.0 * PI * (i + 1) as f64 * s))
            .collect();
        Self { coeffs, grid: self.grid }
    }

    pub fn scale(&self, a: f64) -> Self {
        Self { coeffs: self.coeffs.iter().map(|c| c * a).collect(), grid: self.grid }
    }

    pub fn add(&self, other: &Potential) -> Self {
        let n = self.n_pot().max(other.n_pot());
        Self::from_positive((1..=n as i64).map(|k| self.coeff(k) + other.coeff(k)).collect())
    }

    /// KdV Hamiltonian ½∫q_x² + ∫q³.
    pub fn hamiltonian(&self) -> f64 {
        let h2: f64 = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| (2.0 * PI * (i + 1) as f64).powi(2) * c.norm_sqr())
            .sum();
        let m = (4 * self.n_pot()).max(8).next_power_of_two();
        let s = self.samples(m);
        let h3 = s.iter().map(|v| v * v * v).sum::<f64>() / m as f64;
        h2 + h3
    }

    pub fn to_json(&self) -> PotentialJson {
        let mut coeffs = Vec::new();
        for n in 1..=self.n_pot() as i64 {
            for k in [-n, n] {
                let c = self.coeff(k);
                coeffs.push([k as f64, c.re, c.im]);
            }
        }
        PotentialJson { n_pot: self.n_pot(), coeffs }
    }

    pub fn from_json(j: &PotentialJson) -> Result<Self> {
        let mut entries = Vec::with_capacity(j.coeffs.len());
        for c in &j.coeffs {
            if c[0].fract() != 0.0 {
                return Err(Error::Input(format!("non-integer index {}", c[0])));
            }
            let n = c[0] as i64;
            if n.unsigned_abs() as usize > j.n_pot {
                return Err(Error::Input(format!("index {n} exceeds n_pot {}", j.n_pot)));
            }
            entries.push((n, C64::new(c[1], c[2])));
        }
        Self::from_trig(&entries)
    }
}

/// Complete elliptic integral K(k) via the arithmetic-geometric mean.
pub fn elliptic_k(k: f64) -> f64 {
    PI / (2.0 * agm(1.0, (1.0 - k * k).sqrt()))
}

fn agm(mut a: f64, mut b: f64) -> f64 {
    for _ in 0..64 {
        if (a - b).abs() <= 1e-15 * a {
            break;
        }
        let an = 0.5 * (a + b);
        b = (a * b).sqrt();
        a = an;
    }
    a
}

/// Jacobi sn(u, k) by descending AGM/Landen recursion.
pub fn jacobi_sn(u: f64, k: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&k) {
        return Err(Error::Elliptic(format!("modulus {k} outside [0,1)")));
    }
    if k == 0.0 {
        return Ok(u.sin());
    }
    let mut a = vec![1.0];
    let mut c = vec![k];
    let mut b = (1.0 - k * k).sqrt();
    while c.last().unwrap().abs() > 1e-14 {
        if a.len() > 60 {
            return Err(Error::Elliptic("AGM did not converge".into()));
        }
        let an = *a.last().unwrap();
        let cn = 0.5 * (an - b);
        let bn = (an * b).sqrt();
        a.push(0.5 * (an + b));
        c.push(cn);
        b = bn;
    }
    let n = a.len() - 1;
    let mut phi = 2f64.powi(n as i32) * a[n] * u;
    for j in (1..=n).rev() {
        phi = 0.5 * (phi + (c[j] / a[j] * phi.sin()).asin());
    }
    Ok(phi.sin())
}

/// One-gap Lamé potential q(x) = 2(2K)²k² sn²(2Kx, k) + c(k), mean zero.
/// Returns the potential and the number of samples used.
pub fn lame_one_gap(k: f64) -> Result<(Potential, usize)> {
    if !(k > 0.0 && k < 1.0) {
        return Err(Error::Input(format!("modulus {k} outside (0,1)")));
    }
    let kk = elliptic_k(k);
    let amp = 2.0 * (2.0 * kk).powi(2) * k * k;
    let mut m = 256;
    loop {
        let xs = fourier::grid(m);
        let mut s = Vec::with_capacity(m);
        for x in &xs {
            let v = jacobi_sn(2.0 * kk * x, k)?;
            s.push(amp * v * v);
        }
        let c = fourier::forward(&fourier::real_to_complex(&s));
        let tail = c[m / 2 - 1].norm().max(c[m / 2 - 2].norm());
        if tail < 1e-17 * amp || m >= 1 << 16 {
            let q = Potential::from_samples(&s, 1e-15);
            return Ok((q, m));
        }
        m *= 2;
    }
}
