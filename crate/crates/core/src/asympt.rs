//! Large-n expansions: the y_k recursion, coefficient extraction for
//! n-indexed families and boundedness diagnostics of remainders.

use crate::error::{Error, Result};
use crate::floquet::{grid_for, Floquet};
use crate::par;
use crate::potential::Potential;
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::Serialize;
use std::f64::consts::PI;

pub const DEFAULT_N_SET: [i64; 6] = [8, 11, 16, 23, 32, 45];
const MAX_DEPTH: usize = 12;
const MAX_CONDITION: f64 = 1e12;

/// Σⱼ xʲ pⱼ(x) with trigonometric polynomials pⱼ; exact under ∂ₓ, ∫₀ˣ and
/// multiplication by a trigonometric polynomial.
#[derive(Debug, Clone)]
pub struct PolyTrig {
    band: i64,
    /// terms[j][m + band] is the coefficient of xʲ e^{2πimx}
    terms: Vec<Vec<C64>>,
}

impl PolyTrig {
    pub fn constant(c: C64) -> Self {
        PolyTrig { band: 0, terms: vec![vec![c]] }
    }

    pub fn from_potential(q: &Potential) -> Self {
        let b = q.n_pot() as i64;
        let mut t = vec![C64::new(0.0, 0.0); (2 * b + 1) as usize];
        for n in -b..=b {
            t[(n + b) as usize] = q.coeff(n);
        }
        PolyTrig { band: b, terms: vec![t] }
    }

    fn zero(band: i64, deg: usize) -> Self {
        PolyTrig { band, terms: vec![vec![C64::new(0.0, 0.0); (2 * band + 1) as usize]; deg + 1] }
    }

    pub fn degree(&self) -> usize {
        self.terms.len() - 1
    }

    pub fn band(&self) -> i64 {
        self.band
    }

    fn get(&self, j: usize, m: i64) -> C64 {
        if m.abs() > self.band || j >= self.terms.len() {
            C64::new(0.0, 0.0)
        } else {
            self.terms[j][(m + self.band) as usize]
        }
    }

    fn add_to(&mut self, j: usize, m: i64, v: C64) {
        self.terms[j][(m + self.band) as usize] += v;
    }

    pub fn add(&self, o: &PolyTrig) -> PolyTrig {
        let band = self.band.max(o.band);
        let deg = self.degree().max(o.degree());
        let mut r = PolyTrig::zero(band, deg);
        for j in 0..=deg {
            for m in -band..=band {
                r.add_to(j, m, self.get(j, m) + o.get(j, m));
            }
        }
        r
    }

    pub fn scale(&self, s: C64) -> PolyTrig {
        let mut r = self.clone();
        r.terms.iter_mut().flatten().for_each(|c| *c *= s);
        r
    }

    pub fn mul(&self, o: &PolyTrig) -> PolyTrig {
        let band = self.band + o.band;
        let mut r = PolyTrig::zero(band, self.degree() + o.degree());
        for (j1, t1) in self.terms.iter().enumerate() {
            for (j2, t2) in o.terms.iter().enumerate() {
                for (i1, a) in t1.iter().enumerate() {
                    if a.norm() == 0.0 {
                        continue;
                    }
                    let m1 = i1 as i64 - self.band;
                    for (i2, b) in t2.iter().enumerate() {
                        let m2 = i2 as i64 - o.band;
                        r.add_to(j1 + j2, m1 + m2, a * b);
                    }
                }
            }
        }
        r
    }

    pub fn derivative(&self) -> PolyTrig {
        let mut r = PolyTrig::zero(self.band, self.degree());
        for j in 0..=self.degree() {
            for m in -self.band..=self.band {
                let c = self.get(j, m);
                r.add_to(j, m, c * C64::new(0.0, 2.0 * PI * m as f64));
                if j > 0 {
                    r.add_to(j - 1, m, c * j as f64);
                }
            }
        }
        r.trim()
    }

    /// ∫₀ˣ, using ∫ xʲe^{iωx} = e^{iωx} Σᵣ (−1)ʳ j!/(j−r)! x^{j−r}/(iω)^{r+1}.
    pub fn antiderivative(&self) -> PolyTrig {
        let mut r = PolyTrig::zero(self.band, self.degree() + 1);
        for j in 0..=self.degree() {
            for m in -self.band..=self.band {
                let c = self.get(j, m);
                if c.norm() == 0.0 {
                    continue;
                }
                if m == 0 {
                    r.add_to(j + 1, 0, c / (j + 1) as f64);
                    continue;
                }
                let iw = C64::new(0.0, 2.0 * PI * m as f64);
                let mut fall = 1.0;
                for rr in 0..=j {
                    let term = c * fall * (-1.0f64).powi(rr as i32) / iw.powu(rr as u32 + 1);
                    r.add_to(j - rr, m, term);
                    fall *= (j - rr) as f64;
                }
            }
        }
        let v0 = r.eval(0.0);
        r.add_to(0, 0, -v0);
        r.trim()
    }

    fn trim(mut self) -> Self {
        while self.terms.len() > 1 && self.terms.last().unwrap().iter().all(|c| c.norm() == 0.0) {
            self.terms.pop();
        }
        self
    }

    pub fn eval(&self, x: f64) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        let mut xp = 1.0;
        for t in &self.terms {
            let mut s = C64::new(0.0, 0.0);
            for (i, c) in t.iter().enumerate() {
                let m = i as i64 - self.band;
                s += c * C64::from_polar(1.0, 2.0 * PI * m as f64 * x);
            }
            acc += s * xp;
            xp *= x;
        }
        acc
    }

    /// Values at x = k/m, k = 0..=m.
    pub fn samples(&self, m: usize) -> Vec<C64> {
        (0..=m).map(|k| self.eval(k as f64 / m as f64)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct YaeCoefficients {
    pub k_max: usize,
    /// y[0] ≡ 1, y[k] for k = 1..=k_max
    pub y: Vec<PolyTrig>,
    pub q_anti: PolyTrig,
    q: PolyTrig,
}

impl YaeCoefficients {
    pub fn eval(&self, k: usize, x: f64) -> f64 {
        self.y[k].eval(x).re
    }

    /// sup over x ∈ [0,1] of |(−∂² + q − ν²) y_N| / |e^{iνx}| for the series
    /// truncated at order N.
    pub fn defect(&self, n_order: usize, nu: f64, m: usize) -> f64 {
        let two_inu = C64::new(0.0, 2.0 * nu);
        let mut u = PolyTrig::constant(C64::new(1.0, 0.0));
        for k in 1..=n_order {
            u = u.add(&self.y[k].scale(two_inu.powi(-(k as i32))));
        }
        let du = u.derivative();
        let ddu = du.derivative();
        let qu = self.q.mul(&u);
        (0..=m)
            .map(|i| {
                let x = i as f64 / m as f64;
                (-ddu.eval(x) - C64::new(0.0, 2.0 * nu) * du.eval(x) + qu.eval(x)).norm()
            })
            .fold(0.0, f64::max)
    }
}

/// y_k(x) = ∫₀ˣ (−∂ₜ² + q) y_{k−1}(t) dt with y₀ ≡ 1.
pub fn y_ae_coefficients(q: &Potential, k_max: usize) -> Result<YaeCoefficients> {
    if k_max > MAX_DEPTH {
        return Err(Error::Input(format!("depth {k_max} exceeds {MAX_DEPTH}")));
    }
    let qp = PolyTrig::from_potential(q);
    let mut y = vec![PolyTrig::constant(C64::new(1.0, 0.0))];
    for k in 1..=k_max {
        let prev = &y[k - 1];
        let d = prev.derivative();
        let d0 = d.eval(0.0);
        let next = d.scale(C64::new(-1.0, 0.0)).add(&PolyTrig::constant(d0)).add(&qp.mul(prev).antiderivative());
        y.push(next);
    }
    Ok(YaeCoefficients { k_max, y, q_anti: qp.antiderivative(), q: qp })
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpansionReport {
    pub powers: Vec<i32>,
    pub remainder_power: i32,
    pub n: Vec<i64>,
    /// coeffs[k][c]: coefficient of (2πin)^{−powers[k]} for component c
    pub coeffs: Vec<Vec<C64>>,
    /// remainder[i][c] at n[i]
    pub remainder: Vec<Vec<C64>>,
    pub sup_remainder: Vec<f64>,
    pub sup_bound: f64,
    pub decay_slope: f64,
    pub ratio: f64,
    pub condition: f64,
}

impl ExpansionReport {
    /// Bounded in the finite-sample sense: log-log slope ≤ 0.1 and max/min ≤ 5.
    pub fn bounded(&self) -> bool {
        is_bounded(&self.sup_remainder, &self.n)
    }

    pub fn reconstruct(&self, i: usize, c: usize) -> C64 {
        let t = t_of(self.n[i]);
        let mut v = C64::new(0.0, 0.0);
        for (k, &p) in self.powers.iter().enumerate() {
            v += self.coeffs[k][c] * t.powi(p);
        }
        v + self.remainder[i][c] * t.powi(self.remainder_power)
    }
}

fn t_of(n: i64) -> C64 {
    C64::new(0.0, 2.0 * PI * n as f64).inv()
}

/// Least-squares slope of log v against log n.
pub fn loglog_slope(v: &[f64], n: &[i64]) -> f64 {
    let pts: Vec<(f64, f64)> = v.iter().zip(n).filter(|(x, _)| **x > 0.0).map(|(x, k)| ((*k as f64).abs().ln(), x.ln())).collect();
    if pts.len() < 2 {
        return f64::NEG_INFINITY;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

pub fn max_min_ratio(v: &[f64]) -> f64 {
    let mx = v.iter().cloned().fold(0.0, f64::max);
    let mn = v.iter().cloned().fold(f64::INFINITY, f64::min);
    if mx == 0.0 {
        1.0
    } else {
        mx / mn
    }
}

pub fn is_bounded(v: &[f64], n: &[i64]) -> bool {
    let slope = loglog_slope(v, n);
    let ratio = max_min_ratio(v);
    (slope <= 0.1 || slope == f64::NEG_INFINITY) && ratio <= 5.0
}

/// Fits value(n) ≈ Σ c_k (2πin)^{−p_k} over `n_set`, with `guard` extra powers
/// of the same step absorbing the next terms. The remainder is the exact
/// residual of the requested terms scaled by (2πin)^{p_next}.
pub fn expansion_extract(values: &[Vec<C64>], powers: &[i32], n_set: &[i64], guard: usize) -> Result<ExpansionReport> {
    if n_set.len() != values.len() {
        return Err(Error::Input("values and n_set differ in length".into()));
    }
    let step = if powers.len() > 1 && powers.iter().all(|p| p % 2 == powers[0] % 2) && powers.windows(2).all(|w| w[1] - w[0] == 2) {
        2
    } else {
        1
    };
    let p_max = *powers.iter().max().ok_or_else(|| Error::Input("no powers".into()))?;
    let p_next = p_max + step;
    let mut fit_powers = powers.to_vec();
    let max_guard = n_set.len().saturating_sub(powers.len() + 1);
    for g in 0..guard.min(max_guard) {
        fit_powers.push(p_next + step * g as i32);
    }
    if n_set.len() < powers.len() + 1 {
        return Err(Error::Input(format!("need at least {} indices", powers.len() + 1)));
    }
    let rows = n_set.len();
    let cols = fit_powers.len();
    let ncomp = values[0].len();
    let mut a = DMatrix::<C64>::zeros(rows, cols);
    for (i, &n) in n_set.iter().enumerate() {
        let t = t_of(n);
        for (k, &p) in fit_powers.iter().enumerate() {
            a[(i, k)] = t.powi(p);
        }
    }
    // column scaling for the conditioning estimate and the solve
    let scales: Vec<f64> = (0..cols).map(|k| a.column(k).norm()).collect();
    let mut an = a.clone();
    for k in 0..cols {
        an.column_mut(k).scale_mut(1.0 / scales[k]);
    }
    let svd = an.clone().svd(true, true);
    let sv = &svd.singular_values;
    let condition = sv.max() / sv.min();
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Input(format!("extraction conditioning {condition:.3e}")));
    }
    let mut b = DMatrix::<C64>::zeros(rows, ncomp);
    for (i, v) in values.iter().enumerate() {
        for (c, x) in v.iter().enumerate() {
            b[(i, c)] = *x;
        }
    }
    let sol = svd.solve(&b, 0.0).map_err(|e| Error::Singular(e.to_string()))?;
    let coeffs: Vec<Vec<C64>> = (0..powers.len()).map(|k| (0..ncomp).map(|c| sol[(k, c)] / scales[k]).collect()).collect();
    let mut remainder = Vec::with_capacity(rows);
    for (i, &n) in n_set.iter().enumerate() {
        let t = t_of(n);
        let r: Vec<C64> = (0..ncomp)
            .map(|c| {
                let mut v = values[i][c];
                for (k, &p) in powers.iter().enumerate() {
                    v -= coeffs[k][c] * t.powi(p);
                }
                v * t.powi(-p_next)
            })
            .collect();
        remainder.push(r);
    }
    let sup_remainder: Vec<f64> = remainder.iter().map(|r| r.iter().map(|z| z.norm()).fold(0.0, f64::max)).collect();
    Ok(ExpansionReport {
        powers: powers.to_vec(),
        remainder_power: p_next,
        n: n_set.to_vec(),
        coeffs,
        sup_bound: sup_remainder.iter().cloned().fold(0.0, f64::max),
        decay_slope: loglog_slope(&sup_remainder, n_set),
        ratio: max_min_ratio(&sup_remainder),
        remainder,
        sup_remainder,
        condition,
    })
}

/// e^{−iπnx} fₙ(x) on x = k/m, k = 0..=m.
fn f_family(fl: &Floquet, n_set: &[i64], m: usize) -> Result<Vec<Vec<C64>>> {
    par::try_map(n_set, |&n| {
        let d = fl.data(n as usize, m)?;
        Ok::<_, Error>(
            d.f_plus.iter().enumerate().map(|(k, f)| f * C64::from_polar(1.0, -PI * n as f64 * k as f64 / m as f64)).collect(),
        )
    })
}

/// e^{−2πinx} Wₙ(x) on x = k/m, k = 0..m.
fn w_family(fl: &Floquet, n_set: &[i64], m: usize) -> Result<Vec<Vec<C64>>> {
    par::try_map(n_set, |&n| {
        let d = fl.data(n as usize, m)?;
        Ok::<_, Error>(
            d.w_plus.iter().enumerate().map(|(k, w)| w * C64::from_polar(1.0, -2.0 * PI * n as f64 * k as f64 / m as f64)).collect(),
        )
    })
}

pub fn expansion_grid(fl: &Floquet, n_set: &[i64]) -> usize {
    grid_for(*n_set.iter().max().unwrap_or(&8) as usize, fl.hill.potential().n_pot()).max(128)
}

/// fₙ = e^{iπnx}(1 + Σ_{k≤N} f_k/(2πin)^k + R_N/(2πin)^{N+1}).
pub fn floquet_expansion(fl: &Floquet, n_order: usize, n_set: &[i64]) -> Result<ExpansionReport> {
    let m = expansion_grid(fl, n_set);
    let vals = f_family(fl, n_set, m)?;
    let powers: Vec<i32> = (0..=n_order as i32).collect();
    expansion_extract(&vals, &powers, n_set, 2)
}

/// Wₙ = e^{2πinx}(1 + Σ_{k≤N} W_k/(2πin)^k + R_N/(2πin)^{N+1}).
pub fn w_expansion(fl: &Floquet, n_order: usize, n_set: &[i64]) -> Result<ExpansionReport> {
    let m = expansion_grid(fl, n_set);
    let vals = w_family(fl, n_set, m)?;
    let powers: Vec<i32> = (0..=n_order as i32).collect();
    expansion_extract(&vals, &powers, n_set, 2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scalar {
    Tau,
    A,
    Xi,
    D,
    Beta,
    Omega,
}

impl std::str::FromStr for Scalar {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "tau" => Scalar::Tau,
            "a" => Scalar::A,
            "xi" => Scalar::Xi,
            "d" => Scalar::D,
            "beta" => Scalar::Beta,
            "omega" => Scalar::Omega,
            _ => return Err(Error::Input(format!("unknown family {s}"))),
        })
    }
}

/// Deviation of a scalar family from its free value, at index n.
pub fn scalar_value(fl: &Floquet, which: Scalar, n: usize) -> Result<C64> {
    let npi = n as f64 * PI;
    Ok(match which {
        Scalar::Tau => C64::new(fl.table.tau(n) - npi * npi, 0.0),
        Scalar::A => fl.coefficient(n)?.a_plus - C64::new(0.0, npi),
        Scalar::Xi => C64::new(fl.xi(n)? - 1.0, 0.0),
        Scalar::D => C64::new(fl.d(n)?.direct - 1.0, 0.0),
        Scalar::Beta => C64::new(fl.beta(n)?, 0.0),
        Scalar::Omega => {
            let (_, diff) = fl.frequency(n)?;
            C64::new(diff / (2.0 * npi), 0.0)
        }
    })
}

/// Even powers for τ, ξ, d, Ω; full basis otherwise.
pub fn scalar_expansions(fl: &Floquet, which: Scalar, n_order: usize, n_set: &[i64]) -> Result<ExpansionReport> {
    let vals = par::try_map(n_set, |&n| scalar_value(fl, which, n as usize).map(|v| vec![v]))?;
    let powers: Vec<i32> = match which {
        Scalar::Tau | Scalar::Xi | Scalar::D | Scalar::Omega => (1..=n_order as i32).map(|k| 2 * k).collect(),
        Scalar::A => (0..=n_order as i32).collect(),
        Scalar::Beta => (1..=n_order as i32).collect(),
    };
    expansion_extract(&vals, &powers, n_set, 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cos2() -> Potential {
        Potential::from_trig(&[(1, C64::new(1.0, 0.0))]).unwrap()
    }

    #[test]
    fn antiderivative_of_polynomial_times_exponential() {
        let mut p = PolyTrig::zero(2, 2);
        p.add_to(2, 1, C64::new(1.0, 0.0));
        p.add_to(0, -2, C64::new(0.5, 0.3));
        let a = p.antiderivative();
        let d = a.derivative();
        for x in [0.0, 0.17, 0.5, 0.93] {
            assert!((d.eval(x) - p.eval(x)).norm() < 1e-13);
        }
        assert!(a.eval(0.0).norm() < 1e-15);
    }

    #[test]
    fn y_ae_examples() {
        let z = y_ae_coefficients(&Potential::zero(), 3).unwrap();
        for k in 1..=3 {
            assert!(z.y[k].samples(16).iter().all(|v| v.norm() < 1e-15));
        }
        let q = cos2();
        let y = y_ae_coefficients(&q, 2).unwrap();
        assert!((y.eval(1, 0.25) - 1.0 / PI).abs() < 1e-14);
        for i in 0..=40 {
            let x = i as f64 / 40.0;
            let qq = (2.0 * PI * x).sin() / PI;
            let want = -(q.eval(x) - q.eval(0.0)) + 0.5 * qq * qq;
            assert!((y.eval(2, x) - want).abs() < 1e-10);
            assert!((y.eval(1, x) - y.q_anti.eval(x).re).abs() < 1e-15);
        }
    }

    #[test]
    fn extraction_exact_models() {
        let n_set: Vec<i64> = DEFAULT_N_SET.to_vec();
        let vals: Vec<Vec<C64>> = n_set.iter().map(|&n| vec![C64::new(1.0, 0.0) + t_of(n)]).collect();
        let r = expansion_extract(&vals, &[0, 1], &n_set, 2).unwrap();
        assert!((r.coeffs[0][0] - 1.0).norm() < 1e-9 && (r.coeffs[1][0] - 1.0).norm() < 1e-9);
        assert!(r.sup_bound < 1e-6);
        for i in 0..n_set.len() {
            assert!((r.reconstruct(i, 0) - vals[i][0]).norm() < 1e-14);
        }
        let vals: Vec<Vec<C64>> = n_set.iter().map(|&n| vec![t_of(n).powi(3)]).collect();
        let r = expansion_extract(&vals, &[0, 1, 2], &n_set, 2).unwrap();
        assert!(r.coeffs.iter().all(|c| c[0].norm() < 1e-9));
        assert!(r.bounded());
    }

    #[test]
    fn conditioning_is_reported() {
        let n_set = [40i64, 40, 41, 41];
        let vals: Vec<Vec<C64>> = n_set.iter().map(|_| vec![C64::new(1.0, 0.0)]).collect();
        assert!(expansion_extract(&vals, &[0, 2, 4], &n_set, 0).is_err());
    }

    #[test]
    fn defect_decays_with_order() {
        let q = cos2();
        let y = y_ae_coefficients(&q, 4).unwrap();
        let nus = [10.0 * PI, 20.0 * PI, 40.0 * PI];
        let d: Vec<f64> = nus.iter().map(|&nu| y.defect(3, nu, 64)).collect();
        let slope = (d[2] / d[0]).ln() / 4f64.ln();
        assert!(slope < -2.7, "{d:?}");
    }
}
