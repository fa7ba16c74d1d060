//! Per-index Floquet data at closed gaps, gap factors, actions and frequencies.

use crate::curve::{poly_eval, poly_mul, Curve, End};
use crate::error::{Error, Result};
use crate::fourier;
use crate::hill::{FloquetEntries, Hill, SpectralTable};
use crate::par;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::Serialize;
use std::f64::consts::PI;

/// Overall orientation of the reduced β integrand relative to the monic
/// numerator. Fixed by translation covariance of Wₙ.
const BETA_SIGN: f64 = 1.0;

/// Radius factor for the action contour: r = max(γₙ, EPS_R·n²).
const EPS_R: f64 = 0.05;

fn parity(n: usize) -> f64 {
    if n % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FloquetCoefficient {
    pub a_plus: C64,
    pub a_minus: C64,
    /// The same pair from the ṁ₁', ṁ₂' formula.
    pub alt_plus: C64,
    pub alt_minus: C64,
}

impl FloquetCoefficient {
    pub fn disagreement(&self) -> f64 {
        (self.a_plus - self.alt_plus).norm().max((self.a_minus - self.alt_minus).norm())
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GapFactorD {
    pub direct: f64,
    pub product: f64,
}

#[derive(Debug, Clone)]
pub struct FloquetData {
    pub n: usize,
    pub tau: f64,
    pub grid: usize,
    pub a_plus: C64,
    pub a_minus: C64,
    /// f±ₙ and ∂ₓfₙ at x = k/grid, k = 0..=grid.
    pub f_plus: Vec<C64>,
    pub f_minus: Vec<C64>,
    pub df_plus: Vec<C64>,
    pub h: Vec<f64>,
    pub g: Vec<f64>,
    /// W±ₙ at x = k/grid, k = 0..grid.
    pub w_plus: Vec<C64>,
    pub w_minus: Vec<C64>,
    pub xi: f64,
    pub d: f64,
    pub beta: f64,
    /// √(−2ṁ₂/Δ̈)
    pub scale: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GapFactors {
    pub n: usize,
    pub xi: f64,
    pub d: f64,
    pub beta: f64,
    pub s_poly: Vec<f64>,
    pub omega: f64,
    pub omega_free_diff: f64,
    pub big_omega: f64,
}

/// Floquet theory of one potential with its spectral table.
pub struct Floquet<'a> {
    pub hill: &'a Hill,
    pub table: &'a SpectralTable,
    pub curve: Curve,
    freq: FreqPoly,
}

#[derive(Debug, Clone)]
struct FreqPoly {
    p: Vec<f64>,
    diff: Vec<f64>,
    k_const: f64,
}

impl<'a> Floquet<'a> {
    pub fn new(hill: &'a Hill, table: &'a SpectralTable) -> Result<Self> {
        let curve = Curve::from_table(table);
        let freq = FreqPoly::new(&curve)?;
        let mut f = Floquet { hill, table, curve, freq };
        f.finish_freq();
        Ok(f)
    }

    fn closed(&self, n: usize) -> Result<f64> {
        if n == 0 || n > self.table.n_max {
            return Err(Error::Input(format!("index {n} outside table")));
        }
        if self.table.is_open(n) {
            return Err(Error::OpenGap(n as i64));
        }
        Ok(self.table.tau(n))
    }

    pub fn entries_at_tau(&self, n: usize) -> Result<FloquetEntries> {
        let tau = self.closed(n)?;
        self.hill.entries(C64::new(tau, 0.0))
    }

    fn coefficient_from(&self, n: usize, e: &FloquetEntries) -> Result<FloquetCoefficient> {
        let sg = parity(n);
        let m2d = e.m2_dot.re;
        let ddd = e.dd_delta.re;
        if sg * m2d <= 0.0 {
            return Err(Error::SignCondition { index: n as i64, detail: format!("(-1)^n m2_dot = {}", sg * m2d) });
        }
        if -sg * ddd <= 0.0 {
            return Err(Error::SignCondition { index: n as i64, detail: format!("(-1)^(n+1) Delta_ddot = {}", -sg * ddd) });
        }
        let root = (-sg * ddd / 2.0).sqrt();
        let re = -e.m1_dot.re / m2d;
        let im = root / (sg * m2d);
        let alt = |s: f64| C64::new(e.dm1_dot.re, 0.0) / C64::new(-e.dm2_dot.re, s * sg * root);
        Ok(FloquetCoefficient {
            a_plus: C64::new(re, im),
            a_minus: C64::new(re, -im),
            alt_plus: alt(1.0),
            alt_minus: alt(-1.0),
        })
    }

    pub fn coefficient(&self, n: usize) -> Result<FloquetCoefficient> {
        let e = self.entries_at_tau(n)?;
        self.coefficient_from(n, &e)
    }

    /// √(nπ)·ξₙ from the limiting quotient χ(τₙ).
    pub fn xi(&self, n: usize) -> Result<f64> {
        let tau = self.closed(n)?;
        let mut chi = 1.0 / (tau - self.table.lam0).sqrt();
        for &(k, lm, lp) in &self.curve.gaps {
            let ld = self.table.row(k).lam_dot;
            chi *= (tau - ld) / ((lp - tau) * (lm - tau)).sqrt();
        }
        if !(chi > 0.0) {
            return Err(Error::Input(format!("tau_{n} on the branch cut (chi = {chi})")));
        }
        Ok((n as f64 * PI * chi).sqrt())
    }

    fn d_from(&self, n: usize, e: &FloquetEntries) -> GapFactorD {
        let tau = self.table.tau(n);
        let mut product = 1.0;
        for &(k, _, _) in &self.curve.gaps {
            let r = self.table.row(k);
            product *= (1.0 - r.mu / tau) / (1.0 - r.lam_dot / tau);
        }
        GapFactorD { direct: -e.m2_dot.re / e.dd_delta.re, product }
    }

    pub fn d(&self, n: usize) -> Result<GapFactorD> {
        let e = self.entries_at_tau(n)?;
        Ok(self.d_from(n, &e))
    }

    /// Coefficients s_0..s_{M−1} of the monic numerator of ψₙ/√(Δ²−4),
    /// and the residual of the linear system.
    pub fn psi_polynomial(&self, n: usize) -> Result<(Vec<f64>, f64)> {
        let tau = self.closed(n)?;
        let m = self.curve.genus();
        if m == 0 {
            return Ok((Vec::new(), 0.0));
        }
        let pn2 = (n as f64 * PI).powi(2);
        let w = |l: f64| pn2 / (tau - l);
        let mut e = DMatrix::<f64>::zeros(m, m);
        let mut b = DVector::<f64>::zeros(m);
        for l in 0..m {
            for j in 0..m {
                e[(l, j)] = self.curve.gap_integral(l, |x| x.powi(j as i32) * w(x));
            }
            b[l] = self.curve.gap_integral(l, |x| x.powi(m as i32) * w(x));
        }
        let rhs = -&b;
        let s = e.clone().lu().solve(&rhs).ok_or_else(|| Error::Singular(format!("psi system at n = {n}")))?;
        let res = (&e * &s - &rhs).amax() / rhs.amax().max(1e-300);
        Ok((s.iter().copied().collect(), res))
    }

    /// βₙ: sum over open gaps ℓ of the reduced integral from λℓ⁻ to μℓ, with
    /// the root sign fixed by δ(μℓ).
    pub fn beta(&self, n: usize) -> Result<f64> {
        let tau = self.closed(n)?;
        let m = self.curve.genus();
        if m == 0 {
            return Ok(0.0);
        }
        let (s, _) = self.psi_polynomial(n)?;
        let mut num = s.clone();
        num.push(1.0);
        let pn2 = (n as f64 * PI).powi(2);
        let mut beta = 0.0;
        for (j, &(l, lm, lp)) in self.curve.gaps.iter().enumerate() {
            let mu = self.table.row(l).mu;
            if mu < lm - 1e-9 * lm.abs().max(1.0) || mu > lp + 1e-9 * lp.abs().max(1.0) {
                return Err(Error::Ordering { index: l as i64, detail: "mu outside its gap".into() });
            }
            let half = 0.5 * (lp - lm);
            let c = ((0.5 * (lm + lp) - mu) / half).clamp(-1.0, 1.0);
            let phi = c.acos();
            let delta = self.hill.entries_order(C64::new(mu, 0.0), 0)?.delta_anti.re;
            // ψₙ carries the closed roots τ_k (k ≠ n) that the positive root of
            // Δ²−4 turns into |τ_k − λ|; those below gap ℓ flip the sign.
            let closed_below = (1..l).filter(|&k| k != n && !self.table.is_open(k)).count();
            let orient = parity(closed_below) * parity(m) * (tau - lm).signum();
            let v = self.curve.gap_partial(j, phi, |x| poly_eval(&num, x) * pn2 / (tau - x));
            beta += BETA_SIGN * orient * delta.signum() * v / (n as f64 * PI);
        }
        Ok(beta)
    }

    /// Iₙ = (1/π)∮ λΔ̇/√(Δ²−4) dλ on a circle around the gap, trapezoid rule
    /// in the angle, canonical root continued from the band left of the gap.
    pub fn action(&self, n: usize) -> Result<f64> {
        let row = *self.table.row(n);
        // keep the circle clear of the neighbouring gaps when the bands are thin
        let left = if n == 1 { self.table.lam0 } else { self.table.row(n - 1).lam_plus };
        let right = if n < self.table.n_max { self.table.row(n + 1).lam_minus } else { row.lam_plus + row.gamma };
        let room = (row.lam_minus - left).min(right - row.lam_plus);
        let r = row.gamma.max(EPS_R * (n * n) as f64).min(0.5 * (row.gamma + room));
        let mut k = 128;
        let mut prev = self.action_trapezoid(n, row.tau, r, k)?;
        loop {
            k *= 2;
            let cur = self.action_trapezoid(n, row.tau, r, k)?;
            let scale = cur.abs().max(row.gamma * row.gamma / (8.0 * n as f64 * PI)).max(1e-14);
            if (cur - prev).abs() <= 1e-11 * scale || k >= 4096 {
                return Ok(cur);
            }
            prev = cur;
        }
    }

    fn action_trapezoid(&self, n: usize, tau: f64, r: f64, k: usize) -> Result<f64> {
        let phis: Vec<f64> = (0..k).map(|i| 2.0 * PI * i as f64 / k as f64).collect();
        let vals = par::try_map(&phis, |&phi| {
            let lam = tau - r * C64::from_polar(1.0, phi);
            let e = self.hill.entries_order(lam, 1)?;
            Ok::<_, Error>((lam, e.disc(), e.d_delta))
        })?;
        // band between gaps n−1 and n: √c(Δ²−4) = −i(−1)^{n−1}√(4−Δ²)
        let d0 = vals[0].1;
        let mut root = C64::new(0.0, -parity(n - 1)) * (-d0).sqrt();
        let mut sum = C64::new(0.0, 0.0);
        for (i, &(lam, d, dd)) in vals.iter().enumerate() {
            let cand = d.sqrt();
            if i > 0 {
                root = if (cand - root).norm() <= (cand + root).norm() { cand } else { -cand };
            }
            let dlam = -C64::new(0.0, r) * C64::from_polar(1.0, phis[i]);
            sum += lam * dd / root * dlam;
        }
        let last = vals[0].1.sqrt();
        let back = if (last - root).norm() <= (last + root).norm() { last } else { -last };
        let start = C64::new(0.0, -parity(n - 1)) * (-d0).sqrt();
        if (back - start).norm() > 1e-6 * start.norm().max(1e-12) {
            return Err(Error::NoConvergence(format!("branch tracking for I_{n} did not close")));
        }
        let v = sum * (2.0 * PI / k as f64) / PI;
        Ok(v.re)
    }

    /// ∫ over the band pieces from λ₀ up to `x` of P/w. `x` must lie in a band.
    fn bands_to(&self, x: f64) -> f64 {
        let p = &self.freq.p;
        let below = self.curve.gaps.iter().filter(|gp| gp.2 < x).count();
        let mut s = 0.0;
        for i in 0..below {
            s += self.curve.band_integral(End::Branch(2 * i), End::Branch(2 * i + 1), |l| poly_eval(p, l));
        }
        s + self.curve.band_integral(End::Branch(2 * below), End::Point(x), |l| poly_eval(p, l))
    }

    /// ∫ₓ^∞ (P/w − √λ) dλ without cancellation, via u = λ^{−1/2}.
    fn tail(&self, x: f64) -> f64 {
        let p = &self.freq.p;
        let dpoly = &self.freq.diff;
        let rp = self.curve.r_poly();
        crate::curve::integrate_checked(0.0, 1.0 / x.sqrt(), |u| {
            if u == 0.0 {
                return 0.0;
            }
            let lam = 1.0 / (u * u);
            let w = poly_eval(&rp, lam).sqrt();
            let v = poly_eval(dpoly, lam) / (w * (poly_eval(p, lam) + lam.sqrt() * w));
            2.0 * v / (u * u * u)
        })
    }

    /// The constant that must vanish for ωₙ − (2πn)³ → 0.
    pub fn frequency_constant(&self) -> f64 {
        self.freq.k_const
    }

    /// (ωₙ, ωₙ − (2πn)³).
    pub fn frequency(&self, n: usize) -> Result<(f64, f64)> {
        if n == 0 || n > self.table.n_max {
            return Err(Error::Input(format!("index {n} outside table")));
        }
        let free = (2.0 * n as f64 * PI).powi(3);
        if self.table.is_open(n) {
            let j = self.curve.gaps.iter().position(|g| g.0 == n).unwrap();
            let mut s = 0.0;
            for i in 0..=j {
                s += self.curve.band_integral(End::Branch(2 * i), End::Branch(2 * i + 1), |l| poly_eval(&self.freq.p, l));
            }
            let w = 12.0 * s;
            return Ok((w, w - free));
        }
        let tau = self.table.tau(n);
        let b = self.freq_b();
        if tau <= b {
            let w = 12.0 * self.bands_to(tau);
            return Ok((w, w - free));
        }
        let npi = n as f64 * PI;
        let (st, sn) = (tau.sqrt(), npi);
        let pow_diff = (tau - npi * npi) / (st + sn) * (tau + st * sn + npi * npi);
        let diff = 8.0 * pow_diff + 12.0 * self.freq.k_const - 12.0 * self.tail(tau);
        Ok((free + diff, diff))
    }

    /// ωₙ by direct band integration up to τₙ (cross-check of the stable form).
    pub fn frequency_direct(&self, n: usize) -> Result<f64> {
        let tau = self.closed(n)?;
        Ok(12.0 * self.bands_to(tau))
    }

    fn freq_b(&self) -> f64 {
        let a = *self.curve.roots().last().unwrap();
        a + a.abs().max(1.0)
    }

    fn finish_freq(&mut self) {
        let b = self.freq_b();
        let k = self.bands_to(b) + self.tail(b) - 2.0 / 3.0 * b.powf(1.5);
        self.freq.k_const = k;
    }

    /// Floquet solutions, normalized pair, gap factors and W±ₙ on a grid.
    pub fn data(&self, n: usize, grid: usize) -> Result<FloquetData> {
        let tau = self.closed(n)?;
        let pair = self.hill.solve(C64::new(tau, 0.0), 2, grid)?;
        let e = FloquetEntries::from_pair(&pair);
        let coef = self.coefficient_from(n, &e)?;
        let (a_plus, a_minus) = (coef.a_plus, coef.a_minus);
        let f_plus: Vec<C64> = pair.y1.iter().zip(&pair.y2).map(|(y1, y2)| y1 + a_plus * y2).collect();
        let f_minus: Vec<C64> = pair.y1.iter().zip(&pair.y2).map(|(y1, y2)| y1 + a_minus * y2).collect();
        let df_plus: Vec<C64> = pair.dy1.iter().zip(&pair.dy2).map(|(y1, y2)| y1 + a_plus * y2).collect();
        let df_minus: Vec<C64> = pair.dy1.iter().zip(&pair.dy2).map(|(y1, y2)| y1 + a_minus * y2).collect();
        let m2d = e.m2_dot.re;
        let ddd = e.dd_delta.re;
        let scale = (-2.0 * m2d / ddd).sqrt();
        let root = (-parity(n) * ddd / 2.0).sqrt();
        let h: Vec<f64> = pair.y1.iter().zip(&pair.y2).map(|(y1, y2)| scale * (y1.re - e.m1_dot.re / m2d * y2.re)).collect();
        let g: Vec<f64> = pair.y2.iter().map(|y2| scale * root / (parity(n) * m2d) * y2.re).collect();
        let xi = self.xi(n)?;
        let d = self.d_from(n, &e).direct;
        let beta = self.beta(n)?;
        let two_pi_in = C64::new(0.0, 2.0 * PI * n as f64);
        let pref = xi * (m2d / ddd);
        let cp = pref * C64::from_polar(1.0, beta) * (-1.0 / two_pi_in);
        let cm = pref * C64::from_polar(1.0, -beta) * (1.0 / two_pi_in);
        let w_plus: Vec<C64> = (0..grid).map(|k| cp * 2.0 * f_plus[k] * df_plus[k]).collect();
        let w_minus: Vec<C64> = (0..grid).map(|k| cm * 2.0 * f_minus[k] * df_minus[k]).collect();
        Ok(FloquetData { n, tau, grid, a_plus, a_minus, f_plus, f_minus, df_plus, h, g, w_plus, w_minus, xi, d, beta, scale })
    }

    pub fn factors(&self, n: usize) -> Result<GapFactors> {
        let (omega, diff) = self.frequency(n)?;
        let (s_poly, _) = self.psi_polynomial(n)?;
        Ok(GapFactors {
            n,
            xi: self.xi(n)?,
            d: self.d(n)?.direct,
            beta: self.beta(n)?,
            s_poly,
            omega,
            omega_free_diff: diff,
            big_omega: omega / (2.0 * PI * n as f64),
        })
    }
}

impl FreqPoly {
    fn new(curve: &Curve) -> Result<Self> {
        let m = curve.genus();
        let roots = curve.roots();
        let c1 = -0.5 * roots.iter().sum::<f64>();
        // ascending coefficients; P = λ^{M+1} + c1 λ^M + c2 λ^{M−1} + ...
        let mut p = vec![0.0; m + 2];
        p[m + 1] = 1.0;
        p[m] = c1;
        if m > 0 {
            let mut a = DMatrix::<f64>::zeros(m, m);
            let mut b = DVector::<f64>::zeros(m);
            for j in 0..m {
                for i in 0..m {
                    a[(j, i)] = curve.gap_integral(j, |l| l.powi((m - 1 - i) as i32));
                }
                b[j] = -(curve.gap_integral(j, |l| l.powi(m as i32 + 1)) + c1 * curve.gap_integral(j, |l| l.powi(m as i32)));
            }
            let c = a.lu().solve(&b).ok_or_else(|| Error::Singular("a-cycle normalization".into()))?;
            for i in 0..m {
                p[m - 1 - i] = c[i];
            }
        }
        // P² − λR with the two leading coefficients cancelled exactly
        let p2 = poly_mul(&p, &p);
        let lr = poly_mul(&curve.r_poly(), &[0.0, 1.0]);
        let mut diff: Vec<f64> = p2.iter().zip(&lr).map(|(a, b)| a - b).collect();
        let len = diff.len();
        diff[len - 1] = 0.0;
        diff[len - 2] = 0.0;
        Ok(FreqPoly { p, diff, k_const: 0.0 })
    }
}

/// Builds the Floquet context and evaluates the frequency constant.
pub fn floquet<'a>(hill: &'a Hill, table: &'a SpectralTable) -> Result<Floquet<'a>> {
    Floquet::new(hill, table)
}

/// Fourier coefficients (FFT order) of periodic grid samples.
pub fn coefficients(samples: &[C64]) -> Vec<C64> {
    fourier::forward(samples)
}

/// Trapezoid mean of a periodic grid function given with its endpoint.
pub fn periodic_mean(v: &[f64]) -> f64 {
    let m = v.len() - 1;
    v[..m].iter().sum::<f64>() / m as f64
}

/// Grid large enough to resolve Wₙ for a potential with band limit `n_pot`.
pub fn grid_for(n: usize, n_pot: usize) -> usize {
    (4 * (n + 2 * n_pot + 8)).next_power_of_two()
}

