//! Real hyperelliptic integrals over the open-gap curve
//! μ² = R(λ) = (λ − λ₀)∏ⱼ(λ − λⱼ⁺)(λ − λⱼ⁻).
//!
//! Square-root endpoint singularities are removed by the substitutions
//! λ = mid − half·cos φ (both ends) or λ = a + t² (one end).

use crate::hill::SpectralTable;
use crate::quad;

/// Open gaps of a spectral table as a branch-point set.
#[derive(Debug, Clone)]
pub struct Curve {
    pub lam0: f64,
    /// (index, λ⁻, λ⁺)
    pub gaps: Vec<(usize, f64, f64)>,
}

/// A band endpoint: plain point or one of the curve's branch points.
#[derive(Debug, Clone, Copy)]
pub enum End {
    Point(f64),
    Branch(usize),
}

pub fn poly_eval(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, a| acc * x + a)
}

pub fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut r = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            r[i + j] += x * y;
        }
    }
    r
}

/// Gauss–Legendre with doubling until two successive rules agree.
pub fn integrate_checked<F: Fn(f64) -> f64>(a: f64, b: f64, f: F) -> f64 {
    let mut n = 48;
    let mut prev = quad::integrate(a, b, n, &f);
    loop {
        n *= 2;
        let cur = quad::integrate(a, b, n, &f);
        let scale = cur.abs().max(prev.abs()).max(1e-300);
        if (cur - prev).abs() <= 1e-13 * scale || n >= 3072 {
            return cur;
        }
        prev = cur;
    }
}

impl Curve {
    pub fn from_table(t: &SpectralTable) -> Self {
        let gaps = t.rows.iter().filter(|r| r.gamma > 0.0).map(|r| (r.n, r.lam_minus, r.lam_plus)).collect();
        Curve { lam0: t.lam0, gaps }
    }

    pub fn genus(&self) -> usize {
        self.gaps.len()
    }

    /// Branch points: λ₀, then λⱼ⁻, λⱼ⁺ for each gap.
    pub fn roots(&self) -> Vec<f64> {
        let mut r = vec![self.lam0];
        for &(_, lm, lp) in &self.gaps {
            r.push(lm);
            r.push(lp);
        }
        r
    }

    /// Branch-point indices of gap `j` (position in `gaps`).
    pub fn gap_roots(&self, j: usize) -> (usize, usize) {
        (1 + 2 * j, 2 + 2 * j)
    }

    /// R expanded in ascending powers.
    pub fn r_poly(&self) -> Vec<f64> {
        self.roots().iter().fold(vec![1.0], |p, r| poly_mul(&p, &[-r, 1.0]))
    }

    fn abs_r_excl(&self, lam: f64, excl: &[usize]) -> f64 {
        self.roots()
            .iter()
            .enumerate()
            .filter(|(i, _)| !excl.contains(i))
            .map(|(_, r)| (lam - r).abs())
            .product()
    }

    /// (−1)^{number of gaps to the right of λ}: the sign of the root that
    /// behaves like +λ^{g+1/2} at +∞, continued along the real line.
    pub fn sign(&self, lam: f64) -> f64 {
        let k = self.gaps.iter().filter(|g| g.1 > lam).count();
        if k % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// ∫ over gap j of g(λ)/√|R(λ)|.
    pub fn gap_integral<F: Fn(f64) -> f64>(&self, j: usize, g: F) -> f64 {
        self.gap_partial(j, std::f64::consts::PI, g)
    }

    /// ∫ from λⱼ⁻ to τⱼ − (γⱼ/2)cos φ_end of g(λ)/√|R(λ)|.
    pub fn gap_partial<F: Fn(f64) -> f64>(&self, j: usize, phi_end: f64, g: F) -> f64 {
        let (_, lm, lp) = self.gaps[j];
        let (a, b) = self.gap_roots(j);
        let mid = 0.5 * (lm + lp);
        let half = 0.5 * (lp - lm);
        integrate_checked(0.0, phi_end, |phi| {
            let lam = mid - half * phi.cos();
            g(lam) / self.abs_r_excl(lam, &[a, b]).sqrt()
        })
    }

    /// ∫ₐᵇ g(λ)/w(λ) with w = sign(λ)·√|R(λ)| on a band segment.
    pub fn band_integral<F: Fn(f64) -> f64>(&self, a: End, b: End, g: F) -> f64 {
        let roots = self.roots();
        let val = |e: End| match e {
            End::Point(x) => x,
            End::Branch(i) => roots[i],
        };
        let (xa, xb) = (val(a), val(b));
        let s = self.sign(0.5 * (xa + xb));
        let v = match (a, b) {
            (End::Branch(i), End::Branch(k)) => {
                let mid = 0.5 * (xa + xb);
                let half = 0.5 * (xb - xa);
                integrate_checked(0.0, std::f64::consts::PI, |phi| {
                    let lam = mid - half * phi.cos();
                    g(lam) / self.abs_r_excl(lam, &[i, k]).sqrt()
                })
            }
            (End::Branch(i), End::Point(_)) => integrate_checked(0.0, (xb - xa).sqrt(), |t| {
                let lam = xa + t * t;
                2.0 * g(lam) / self.abs_r_excl(lam, &[i]).sqrt()
            }),
            (End::Point(_), End::Branch(k)) => integrate_checked(0.0, (xb - xa).sqrt(), |t| {
                let lam = xb - t * t;
                2.0 * g(lam) / self.abs_r_excl(lam, &[k]).sqrt()
            }),
            (End::Point(_), End::Point(_)) => {
                integrate_checked(xa, xb, |lam| g(lam) / self.abs_r_excl(lam, &[]).sqrt())
            }
        };
        s * v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elementary_integrals() {
        let c = Curve { lam0: 0.0, gaps: vec![(1, 2.0, 3.0)] };
        // ∫₂³ dλ / √((λ−2)(3−λ)) · 1/√λ with the gap substitution
        let v = c.gap_integral(0, |_| 1.0);
        let want = quad::integrate(0.0, std::f64::consts::PI, 200, |p| 1.0 / (2.5 - 0.5 * p.cos()).sqrt());
        assert!((v - want).abs() < 1e-13);
        // band [λ₀, λ₁⁻] carries sign −1
        assert_eq!(c.sign(1.0), -1.0);
        assert_eq!(c.sign(4.0), 1.0);
        let r = c.r_poly();
        assert!((poly_eval(&r, 5.0) - 5.0 * 3.0 * 2.0).abs() < 1e-12);
    }

    #[test]
    fn one_sided_band() {
        let c = Curve { lam0: 0.0, gaps: vec![] };
        // ∫₀⁴ λ/√λ = (2/3)·8
        let v = c.band_integral(End::Branch(0), End::Point(4.0), |l| l);
        assert!((v - 16.0 / 3.0).abs() < 1e-13);
    }
}
