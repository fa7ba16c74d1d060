//! Paradifferential calculus on the truncated torus. Functions are Fourier
//! coefficient vectors over modes |n| ≤ m, stored at index n + m.

use crate::error::{Error, Result};
use crate::par;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::f64::consts::PI;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

fn bump_h(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else {
        (-1.0 / s).exp()
    }
}

fn bump_dh(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else {
        (-1.0 / s).exp() / (s * s)
    }
}

/// Admissible cut-off χ(θ, η) = φ(|θ|/(1+|η|)).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Cutoff {
    pub eps1: f64,
    pub eps2: f64,
}

impl Default for Cutoff {
    fn default() -> Self {
        Cutoff { eps1: 0.1, eps2: 0.2 }
    }
}

pub fn make_cutoff(eps1: f64, eps2: f64) -> Result<Cutoff> {
    if !(0.0 < eps1 && eps1 < eps2 && eps2 < 1.0) {
        return Err(Error::Input(format!("cut-off needs 0 < eps1 < eps2 < 1, got {eps1}, {eps2}")));
    }
    Ok(Cutoff { eps1, eps2 })
}

impl Cutoff {
    /// Plateau φ: 1 on [0, eps1], 0 on [eps2, ∞), C^∞ in between.
    pub fn phi(&self, t: f64) -> f64 {
        let s = (self.eps2 - t) / (self.eps2 - self.eps1);
        let (a, b) = (bump_h(s), bump_h(1.0 - s));
        if a + b == 0.0 {
            return if s >= 1.0 { 1.0 } else { 0.0 };
        }
        a / (a + b)
    }

    pub fn dphi(&self, t: f64) -> f64 {
        let w = self.eps2 - self.eps1;
        let s = (self.eps2 - t) / w;
        let (a, b) = (bump_h(s), bump_h(1.0 - s));
        if a + b == 0.0 {
            return 0.0;
        }
        let (da, db) = (bump_dh(s), bump_dh(1.0 - s));
        // d/ds [a/(a+b)] = (da·b + a·db)/(a+b)²
        -(da * b + a * db) / ((a + b) * (a + b)) / w
    }

    pub fn chi(&self, theta: f64, eta: f64) -> f64 {
        self.phi(theta.abs() / (1.0 + eta.abs()))
    }

    /// ∂_η χ
    pub fn chi_d_eta(&self, theta: f64, eta: f64) -> f64 {
        let r = 1.0 + eta.abs();
        let t = theta.abs() / r;
        -self.dphi(t) * t / r * eta.signum()
    }
}

/// ⟨n⟩ = (1 + n²)^{1/2}
pub fn bracket(n: i64) -> f64 {
    (1.0 + (n * n) as f64).sqrt()
}

pub fn modes(m: usize) -> impl Iterator<Item = i64> {
    -(m as i64)..=(m as i64)
}

fn idx(n: i64, m: usize) -> usize {
    (n + m as i64) as usize
}

pub fn sobolev_norm(u: &[C64], s: f64) -> f64 {
    let m = (u.len() - 1) / 2;
    modes(m).map(|n| bracket(n).powf(2.0 * s) * u[idx(n, m)].norm_sqr()).sum::<f64>().sqrt()
}

/// Random real band-limited function with ⟨n⟩^{−decay}-weighted Gaussian
/// coefficients on 0 < |n| ≤ band, embedded in modes |n| ≤ m.
pub fn random_function(m: usize, band: usize, decay: f64, rng: &mut ChaCha8Rng) -> Vec<C64> {
    let mut u = vec![ZERO; 2 * m + 1];
    for n in 1..=band.min(m) as i64 {
        let w = bracket(n).powf(-decay);
        let v = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * w;
        u[idx(n, m)] = v;
        u[idx(-n, m)] = v.conj();
    }
    u
}

/// Fourier coefficients of ∂ₓⁱ a.
pub fn derivative(a: &[C64], i: u32) -> Vec<C64> {
    let m = (a.len() - 1) / 2;
    modes(m).map(|n| a[idx(n, m)] * C64::new(0.0, 2.0 * PI * n as f64).powi(i as i32)).collect()
}

#[derive(Debug, Clone)]
pub struct Projected {
    pub value: Vec<C64>,
    /// true when some k+n fell outside the truncation and was dropped
    pub overflow: bool,
}

/// T_a u = Σ χ(k,n) a_k u_n e_{k+n}
pub fn paraproduct(chi: &Cutoff, a: &[C64], u: &[C64]) -> Projected {
    bilinear_sum(a, u, |k, n| chi.chi(k as f64, n as f64))
}

/// ab projected onto the truncation.
pub fn product(a: &[C64], b: &[C64]) -> Projected {
    bilinear_sum(a, b, |_, _| 1.0)
}

fn bilinear_sum<F: Fn(i64, i64) -> f64>(a: &[C64], u: &[C64], w: F) -> Projected {
    let m = (a.len() - 1) / 2;
    let mut out = vec![ZERO; 2 * m + 1];
    let mut overflow = false;
    for k in modes(m) {
        let ak = a[idx(k, m)];
        if ak == ZERO {
            continue;
        }
        for n in modes(m) {
            let un = u[idx(n, m)];
            if un == ZERO {
                continue;
            }
            let c = w(k, n);
            if c == 0.0 {
                continue;
            }
            let p = k + n;
            if p.unsigned_abs() as usize > m {
                overflow = true;
                continue;
            }
            out[idx(p, m)] += c * ak * un;
        }
    }
    Projected { value: out, overflow }
}

/// Matrix of u ↦ T_a u on the truncation.
pub fn paraproduct_matrix(chi: &Cutoff, a: &[C64]) -> DMatrix<C64> {
    let m = (a.len() - 1) / 2;
    let d = 2 * m + 1;
    DMatrix::from_fn(d, d, |r, c| {
        let (p, n) = (r as i64 - m as i64, c as i64 - m as i64);
        let k = p - n;
        if k.unsigned_abs() as usize > m {
            ZERO
        } else {
            chi.chi(k as f64, n as f64) * a[idx(k, m)]
        }
    })
}

/// Matrix of u ↦ a·u on the truncation.
pub fn multiplication_matrix(a: &[C64]) -> DMatrix<C64> {
    let m = (a.len() - 1) / 2;
    let d = 2 * m + 1;
    DMatrix::from_fn(d, d, |r, c| {
        let k = r as i64 - c as i64;
        if k.unsigned_abs() as usize > m {
            ZERO
        } else {
            a[idx(k, m)]
        }
    })
}

/// Diagonal of ∂ₓ^{−k}; the constant mode is annihilated.
pub fn dx_inv_matrix(m: usize, k: u32) -> DMatrix<C64> {
    DMatrix::from_diagonal(&DVector::from_iterator(
        2 * m + 1,
        modes(m).map(|n| if n == 0 { ZERO } else { C64::new(0.0, 2.0 * PI * n as f64).powi(-(k as i32)) }),
    ))
}

/// Bilinear transpose (Aᵗ)_{p,n} = A_{−n,−p}.
pub fn transpose(a: &DMatrix<C64>) -> DMatrix<C64> {
    let d = a.nrows();
    DMatrix::from_fn(d, d, |r, c| a[(d - 1 - c, d - 1 - r)])
}

/// H^s → H^{s'} operator norm by power iteration on the weighted matrix.
pub fn operator_norm(a: &DMatrix<C64>, s: f64, s_out: f64) -> f64 {
    let m = (a.nrows() - 1) / 2;
    let w = |n: i64, t: f64| bracket(n).powf(t);
    let b = DMatrix::from_fn(a.nrows(), a.ncols(), |r, c| {
        let (p, n) = (r as i64 - m as i64, c as i64 - m as i64);
        a[(r, c)] * w(p, s_out) / w(n, s)
    });
    let bh = b.adjoint();
    let mut v = DVector::from_fn(b.ncols(), |i, _| C64::new(1.0 + (i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()));
    let mut est = 0.0;
    for _ in 0..20 {
        let w = &bh * (&b * &v);
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        let next = (nw / v.norm()).sqrt();
        v = w / C64::new(nw, 0.0);
        let done = (next - est).abs() <= 1e-6 * next;
        est = next;
        if done {
            break;
        }
    }
    est
}

#[derive(Debug, Clone)]
pub struct BonySplit {
    pub t_a_b: Vec<C64>,
    pub t_b_a: Vec<C64>,
    pub r: Vec<C64>,
    pub ab: Vec<C64>,
    pub overflow: bool,
}

impl BonySplit {
    /// max |ab − T_a b − T_b a − R|
    pub fn identity_residual(&self) -> f64 {
        (0..self.ab.len()).map(|i| (self.ab[i] - self.t_a_b[i] - self.t_b_a[i] - self.r[i]).norm()).fold(0.0, f64::max)
    }
}

pub fn bony_split(chi: &Cutoff, a: &[C64], b: &[C64]) -> BonySplit {
    let tab = paraproduct(chi, a, b);
    let tba = paraproduct(chi, b, a);
    let ab = product(a, b);
    let r: Vec<C64> = (0..ab.value.len()).map(|i| ab.value[i] - tab.value[i] - tba.value[i]).collect();
    BonySplit { overflow: tab.overflow || tba.overflow || ab.overflow, t_a_b: tab.value, t_b_a: tba.value, r, ab: ab.value }
}

/// max over draws of ‖R(a,b)‖_{s₁+s₂−1} / (‖a‖_{s₁}‖b‖_{s₂}) for functions of band `band`.
pub fn bony_smoothing_ratio(chi: &Cutoff, band: usize, s1: f64, s2: f64, draws: usize, seed: u64) -> f64 {
    let m = 2 * band;
    let seeds: Vec<u64> = (0..draws as u64).collect();
    par::map(&seeds, |&i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(i));
        let a = random_function(m, band, s1 + 0.6, &mut rng);
        let b = random_function(m, band, s2 + 0.6, &mut rng);
        let sp = bony_split(chi, &a, &b);
        sobolev_norm(&sp.r, s1 + s2 - 1.0) / (sobolev_norm(&a, s1) * sobolev_norm(&b, s2))
    })
    .into_iter()
    .fold(0.0, f64::max)
}

/// ‖T_aᵗ − T_a‖ from H^s to H^{s+ρ−1}.
pub fn transpose_smoothing(chi: &Cutoff, a: &[C64], s: f64, rho: f64) -> f64 {
    let t = paraproduct_matrix(chi, a);
    operator_norm(&(transpose(&t) - &t), s, s + rho - 1.0)
}

/// Generalized binomial coefficient binom(x, i).
pub fn binom(x: f64, i: u32) -> f64 {
    (0..i).fold(1.0, |acc, r| acc * (x - r as f64) / (r as f64 + 1.0))
}

/// Candidate constant C_i(k, j) = binom(−k, i).
pub fn candidate_constant(k: u32, _j: u32, i: u32) -> f64 {
    binom(-(k as f64), i)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstantRow {
    pub k: u32,
    pub j: u32,
    pub i: u32,
    pub c: f64,
    pub fit_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComposeReport {
    pub k: u32,
    pub j: u32,
    pub n: u32,
    pub constants: Vec<ConstantRow>,
    /// H^s → H^{s+N+1} norm of the remainder on each truncation
    pub remainder_norms: Vec<(usize, f64)>,
    pub refit: bool,
}

/// Fits Σᵢ Cᵢ tⁱ, t = d/n, to the normalized exact entries
/// E(n+d, n)·(2πin)^{k+j}/w(d, n)â_d over large n, d ∈ {±1, ±2}.
fn fit_constants<F: Fn(i64, i64) -> C64>(entry: F, k: u32, j: u32, max_i: u32) -> Vec<f64> {
    let deg = (max_i + 8) as usize;
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for d in [-2i64, -1, 1, 2] {
        for n in (60..=600).step_by(9) {
            for sn in [n, -n] {
                let e = entry(sn, d);
                let val = e * C64::new(0.0, 2.0 * PI * sn as f64).powi((k + j) as i32);
                let t = d as f64 / sn as f64;
                rows.push((0..deg).map(|p| t.powi(p as i32)).collect::<Vec<f64>>());
                rhs.push(val.re);
            }
        }
    }
    let a = DMatrix::from_fn(rows.len(), deg, |r, c| rows[r][c] * 60f64.powi(c as i32));
    let b = DVector::from_vec(rhs);
    let sol = a.svd(true, true).solve(&b, 0.0).expect("svd solve");
    (0..=max_i as usize).map(|p| sol[p] * 60f64.powi(p as i32)).collect()
}

/// Symbol-expansion side Σ_{i ≤ N−k−j} C_i (∂ⁱa) ∂^{−k−j−i}, optionally paraproduct form.
fn expansion_matrix(chi: Option<&Cutoff>, a: &[C64], k: u32, j: u32, n: u32, consts: &[f64]) -> DMatrix<C64> {
    let m = (a.len() - 1) / 2;
    let d = 2 * m + 1;
    let mut out = DMatrix::<C64>::zeros(d, d);
    for i in 0..=(n.saturating_sub(k + j)) {
        let di = derivative(a, i);
        let left = match chi {
            Some(c) => paraproduct_matrix(c, &di),
            None => multiplication_matrix(&di),
        };
        out += left * dx_inv_matrix(m, k + j + i) * C64::new(consts[i as usize], 0.0);
    }
    out
}

fn exact_matrix(chi: Option<&Cutoff>, a: &[C64], k: u32, j: u32) -> DMatrix<C64> {
    let m = (a.len() - 1) / 2;
    let mid = match chi {
        Some(c) => paraproduct_matrix(c, a),
        None => multiplication_matrix(a),
    };
    dx_inv_matrix(m, k) * mid * dx_inv_matrix(m, j)
}

fn compose_expand(chi: Option<&Cutoff>, a: &[C64], k: u32, j: u32, n: u32, truncations: &[usize], s: f64) -> Result<ComposeReport> {
    if n < k + j {
        return Err(Error::Input(format!("N = {n} must be at least k + j = {}", k + j)));
    }
    let max_i = 3.max(n - k - j);
    let w = |d: i64, nn: i64| chi.map_or(1.0, |c| c.chi(d as f64, nn as f64));
    // exact entries of ∂^{−k}(·)∂^{−j} for a = e^{2πidx}, with the cut-off divided out
    let entry = |nn: i64, d: i64| -> C64 {
        let e = w(d, nn) * C64::new(0.0, 2.0 * PI * (nn + d) as f64).powi(-(k as i32)) * C64::new(0.0, 2.0 * PI * nn as f64).powi(-(j as i32));
        e / w(d, nn)
    };
    let fitted = fit_constants(entry, k, j, max_i);
    let mut constants = Vec::new();
    let mut refit = false;
    let mut consts = Vec::new();
    for i in 0..=max_i {
        let cand = candidate_constant(k, j, i);
        let resid = (fitted[i as usize] - cand).abs();
        if resid > 1e-4 {
            return Err(Error::NoConvergence(format!("constant C_{i}({k},{j}) fit {} disagrees with {}", fitted[i as usize], cand)));
        }
        let c = if resid <= 1e-8 {
            cand
        } else {
            refit = true;
            fitted[i as usize]
        };
        consts.push(c);
        constants.push(ConstantRow { k, j, i, c, fit_residual: resid });
    }
    let remainder_norms = par::map(truncations, |&m| {
        let mut aa = vec![ZERO; 2 * m + 1];
        let ma = (a.len() - 1) / 2;
        for nn in modes(ma.min(m)) {
            aa[idx(nn, m)] = a[idx(nn, ma)];
        }
        let r = exact_matrix(chi, &aa, k, j) - expansion_matrix(chi, &aa, k, j, n, &consts);
        (m, operator_norm(&r, s, s + n as f64 + 1.0))
    });
    Ok(ComposeReport { k, j, n, constants, remainder_norms, refit })
}

/// ∂ₓ^{−k}∘a∘∂ₓ^{−j} = Σ C_i(k,j)(∂ₓⁱa)∂ₓ^{−k−j−i} + R; constants validated
/// against exact Fourier entries, remainder H^s → H^{s+N+1} norms per truncation.
pub fn psido_compose_expand(a: &[C64], k: u32, j: u32, n: u32, truncations: &[usize], s: f64) -> Result<ComposeReport> {
    compose_expand(None, a, k, j, n, truncations, s)
}

/// ∂ₓ^{−k}∘T_a∘∂ₓ^{−j} = Σ C_i(k,j) T_{∂ₓⁱa}∂ₓ^{−k−j−i} + R.
pub fn para_compose_expand(chi: &Cutoff, a: &[C64], k: u32, j: u32, n: u32, truncations: &[usize], s: f64) -> Result<ComposeReport> {
    compose_expand(Some(chi), a, k, j, n, truncations, s)
}

/// Exact-Fourier check of the expansion on basis vectors e_n, |n| ≤ m:
/// max entry difference between both sides, remainder excluded by taking
/// N large enough for the given band.
pub fn expansion_entry_error(a: &[C64], k: u32, j: u32, n: u32) -> f64 {
    let consts: Vec<f64> = (0..=n).map(|i| candidate_constant(k, j, i)).collect();
    let lhs = exact_matrix(None, a, k, j);
    let rhs = expansion_matrix(None, a, k, j, n, &consts);
    let m = (a.len() - 1) / 2;
    let mut err: f64 = 0.0;
    for c in 0..lhs.ncols() {
        let nn = c as i64 - m as i64;
        // the expansion is asymptotic in 1/n; compare on high modes
        if nn.unsigned_abs() < (m / 2) as u64 {
            continue;
        }
        for r in 0..lhs.nrows() {
            let scale = C64::new(0.0, 2.0 * PI * nn as f64).powi((k + j) as i32).norm();
            err = err.max((lhs[(r, c)] - rhs[(r, c)]).norm() * scale);
        }
    }
    err
}

/// max over draws of ‖uv‖_s / (‖u‖_s‖v‖₁ + ‖u‖₁‖v‖_s).
pub fn interpolation_ratio(s: f64, band: usize, draws: usize, seed: u64) -> f64 {
    let m = 2 * band;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let u = random_function(m, band, s, &mut rng);
        let v = random_function(m, band, s, &mut rng);
        let uv = product(&u, &v).value;
        let den = sobolev_norm(&u, s) * sobolev_norm(&v, 1.0) + sobolev_norm(&u, 1.0) * sobolev_norm(&v, s);
        worst = worst.max(sobolev_norm(&uv, s) / den);
    }
    worst
}

pub fn constants_csv(rows: &[ConstantRow]) -> String {
    let mut s = String::from("k,j,i,C_i,fit_residual\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{:.12e},{:.3e}\n", r.k, r.j, r.i, r.c, r.fit_residual));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(m: usize) -> Vec<C64> {
        let mut a = vec![ZERO; 2 * m + 1];
        a[m + 1] = C64::new(1.0, 0.0);
        a[m - 1] = C64::new(1.0, 0.0);
        a
    }

    #[test]
    fn cutoff_shape() {
        let c = Cutoff::default();
        assert_eq!(c.chi(0.0, 5.0), 1.0);
        assert_eq!(c.chi(6.0, 5.0), 0.0);
        assert_eq!(c.chi(0.1, 0.0), 1.0);
        assert_eq!(c.chi(0.2, 0.0), 0.0);
        assert!(make_cutoff(0.3, 0.2).is_err());
        let mut worst: f64 = 0.0;
        for th in -40..=40 {
            for eta in -40..=40 {
                worst = worst.max(c.chi_d_eta(th as f64, eta as f64).abs() * (1.0 + (eta as f64).abs()));
            }
        }
        assert!(worst < 10.0);
        // derivative against finite differences
        let (t, h) = (0.15, 1e-6);
        assert!(((c.phi(t + h) - c.phi(t - h)) / (2.0 * h) - c.dphi(t)).abs() < 1e-6);
    }

    #[test]
    fn paraproduct_constant_and_low_high() {
        let c = Cutoff::default();
        let m = 16;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_function(m, 8, 1.0, &mut rng);
        let mut a = vec![ZERO; 2 * m + 1];
        a[m] = C64::new(2.5, 0.0);
        let t = paraproduct(&c, &a, &u).value;
        for i in 0..t.len() {
            assert!((t[i] - 2.5 * u[i]).norm() < 1e-15);
        }
        let mut one = vec![ZERO; 2 * m + 1];
        one[m] = C64::new(1.0, 0.0);
        let t = paraproduct(&c, &u, &one).value;
        assert!(t.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn binomials() {
        assert_eq!(binom(-1.0, 3), -1.0);
        assert_eq!(binom(-2.0, 2), 3.0);
        assert_eq!(binom(5.0, 0), 1.0);
    }

    #[test]
    fn expansion_collapses_for_constants() {
        let m = 12;
        let mut a = vec![ZERO; 2 * m + 1];
        a[m] = C64::new(1.5, 0.0);
        let r = psido_compose_expand(&a, 1, 1, 3, &[m], 0.0).unwrap();
        assert!(r.remainder_norms[0].1 < 1e-14);
        let r = para_compose_expand(&Cutoff::default(), &a, 1, 1, 3, &[m], 0.0).unwrap();
        assert!(r.remainder_norms[0].1 < 1e-14);
    }

    #[test]
    fn cosine_expansion_entries() {
        let a = cosine(64);
        assert!(expansion_entry_error(&a, 1, 0, 12) < 1e-8);
    }
}
