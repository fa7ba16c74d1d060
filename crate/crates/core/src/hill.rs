//! Fundamental solutions of −y'' + qy = λy, the Floquet matrix with its
//! λ-derivatives, and the periodic/Dirichlet/Neumann spectra.
//!
//! The ODE is integrated with 4-stage Gauss–Legendre collocation (order 8).
//! The λ-variations solve the forced linear systems obtained by differentiating
//! the equation, with the same collocation matrix.

use crate::error::{Error, Result};
use crate::par;
use crate::potential::Potential;
use crate::quad;
use num_complex::Complex64 as C64;
use serde::Serialize;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

const S: usize = 4;
const MAX_STEPS: usize = 1 << 20;

struct Tableau {
    c: [f64; S],
    b: [f64; S],
    a2: [[f64; S]; S],
    ba: [f64; S],
}

fn tableau() -> &'static Tableau {
    static T: OnceLock<Tableau> = OnceLock::new();
    T.get_or_init(|| {
        let gl = quad::gauss_legendre(S);
        let mut c = [0.0; S];
        let mut b = [0.0; S];
        for i in 0..S {
            c[i] = 0.5 * (1.0 + gl.0[i]);
            b[i] = 0.5 * gl.1[i];
        }
        let lag = |j: usize, t: f64| {
            (0..S).filter(|&m| m != j).map(|m| (t - c[m]) / (c[j] - c[m])).product::<f64>()
        };
        let mut a = [[0.0; S]; S];
        for i in 0..S {
            for j in 0..S {
                a[i][j] = quad::integrate(0.0, c[i], S, |t| lag(j, t));
            }
        }
        let mut a2 = [[0.0; S]; S];
        let mut ba = [0.0; S];
        for i in 0..S {
            for j in 0..S {
                a2[i][j] = (0..S).map(|k| a[i][k] * a[k][j]).sum();
                ba[j] += b[i] * a[i][j];
            }
        }
        Tableau { c, b, a2, ba }
    })
}

/// Monodromy data at x = 1, ordered as (y1, y1', y2, y2').
pub type Mono = [C64; 4];

/// Fundamental solutions at one λ.
#[derive(Debug, Clone)]
pub struct FundamentalPair {
    pub lambda: C64,
    /// Grid values at x = k/m, k = 0..=m (empty unless a grid was requested).
    pub y1: Vec<C64>,
    pub dy1: Vec<C64>,
    pub y2: Vec<C64>,
    pub dy2: Vec<C64>,
    /// Values at x = 1 and their first and second λ-derivatives.
    pub end: Mono,
    pub end_d1: Mono,
    pub end_d2: Mono,
    pub steps: usize,
    pub err_est: f64,
}

/// Floquet matrix entries and λ-derivatives.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FloquetEntries {
    pub lambda: C64,
    pub m1: C64,
    pub m2: C64,
    pub dm1: C64,
    pub dm2: C64,
    pub delta_tr: C64,
    pub delta_anti: C64,
    pub d_delta: C64,
    pub dd_delta: C64,
    pub m1_dot: C64,
    pub m2_dot: C64,
    pub dm1_dot: C64,
    pub dm2_dot: C64,
    pub m2_ddot: C64,
    pub dm1_ddot: C64,
}

impl FloquetEntries {
    pub fn from_pair(p: &FundamentalPair) -> Self {
        let [m1, dm1, m2, dm2] = p.end;
        let [a, b, c, d] = p.end_d1;
        let [_, b2, c2, _] = p.end_d2;
        FloquetEntries {
            lambda: p.lambda,
            m1,
            m2,
            dm1,
            dm2,
            delta_tr: m1 + dm2,
            delta_anti: m1 - dm2,
            d_delta: a + d,
            dd_delta: p.end_d2[0] + p.end_d2[3],
            m1_dot: a,
            m2_dot: c,
            dm1_dot: b,
            dm2_dot: d,
            m2_ddot: c2,
            dm1_ddot: b2,
        }
    }

    /// Δ² − 4 written as δ² + 4 m₂ m₁', which keeps its digits near double roots.
    pub fn disc(&self) -> C64 {
        self.delta_anti * self.delta_anti + 4.0 * self.m2 * self.dm1
    }

    pub fn det(&self) -> C64 {
        self.m1 * self.dm2 - self.m2 * self.dm1
    }
}

/// Integrator bound to one potential. Stage samples of q are cached per step count.
pub struct Hill {
    q: Potential,
    sup: f64,
    tol: f64,
    stages: Mutex<HashMap<usize, Arc<Vec<f64>>>>,
}

impl Hill {
    pub fn new(q: &Potential) -> Self {
        Self::with_tol(q, 1e-12)
    }

    /// `tol` bounds the step-doubling estimate of the scaled monodromy error.
    pub fn with_tol(q: &Potential, tol: f64) -> Self {
        let sup = q.samples((8 * q.n_pot()).max(64)).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        Hill { q: q.clone(), sup, tol, stages: Mutex::new(HashMap::new()) }
    }

    pub fn potential(&self) -> &Potential {
        &self.q
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup
    }

    fn stage_samples(&self, n: usize) -> Arc<Vec<f64>> {
        if let Some(v) = self.stages.lock().unwrap().get(&n) {
            return v.clone();
        }
        let t = tableau();
        let h = 1.0 / n as f64;
        let mut v = Vec::with_capacity(n * S);
        for k in 0..n {
            for c in t.c {
                v.push(self.q.eval(h * (k as f64 + c)));
            }
        }
        let v = Arc::new(v);
        self.stages.lock().unwrap().insert(n, v.clone());
        v
    }

    fn initial_steps(&self, lambda: C64, grid: usize) -> usize {
        let scale = (lambda.norm() + self.sup).sqrt();
        let n0 = (scale / 0.3).ceil() as usize;
        let n0 = n0.max(32).max(8 * self.q.n_pot());
        if grid > 0 {
            n0.div_ceil(grid) * grid
        } else {
            n0
        }
    }

    /// Fundamental solutions with λ-derivatives up to `order` (0, 1 or 2)
    /// at x = 1 and, if `grid > 0`, values on the `grid`-point mesh.
    pub fn solve(&self, lambda: C64, order: usize, grid: usize) -> Result<FundamentalPair> {
        let mut n = self.initial_steps(lambda, grid);
        let scale = lambda.norm().sqrt().max(1.0);
        let mut coarse = self.run(lambda, n, order, 0);
        loop {
            n *= 2;
            let fine = self.run(lambda, n, order, grid);
            let e = &coarse.end;
            let f = &fine.end;
            let diff = (e[0] - f[0]).norm()
                + (e[1] - f[1]).norm() / scale
                + (e[2] - f[2]).norm() * scale
                + (e[3] - f[3]).norm();
            let size = f[0].norm() + f[1].norm() / scale + f[2].norm() * scale + f[3].norm();
            let est = diff / 255.0;
            if est <= self.tol * size.max(1.0) {
                let mut fine = fine;
                fine.err_est = est / size.max(1.0);
                return Ok(fine);
            }
            if n >= MAX_STEPS {
                return Err(Error::Integrator { lambda: format!("{lambda}"), estimate: est });
            }
            coarse = fine;
        }
    }

    fn run(&self, lambda: C64, n: usize, order: usize, grid: usize) -> FundamentalPair {
        let t = tableau();
        let qs = self.stage_samples(n);
        let h = 1.0 / n as f64;
        let h2 = h * h;
        // columns: solution 1, solution 2; rows: order 0, 1, 2; entries (y, y')
        let mut st = [[[C64::new(0.0, 0.0); 2]; 2]; 3];
        st[0][0][0] = C64::new(1.0, 0.0);
        st[0][1][1] = C64::new(1.0, 0.0);
        let every = if grid > 0 { n / grid } else { 0 };
        let cap = if grid > 0 { grid + 1 } else { 0 };
        let (mut y1, mut dy1, mut y2, mut dy2) =
            (Vec::with_capacity(cap), Vec::with_capacity(cap), Vec::with_capacity(cap), Vec::with_capacity(cap));
        let record = |st: &[[[C64; 2]; 2]; 3], y1: &mut Vec<C64>, dy1: &mut Vec<C64>, y2: &mut Vec<C64>, dy2: &mut Vec<C64>| {
            y1.push(st[0][0][0]);
            dy1.push(st[0][0][1]);
            y2.push(st[0][1][0]);
            dy2.push(st[0][1][1]);
        };
        if grid > 0 {
            record(&st, &mut y1, &mut dy1, &mut y2, &mut dy2);
        }
        for k in 0..n {
            let mut p = [C64::new(0.0, 0.0); S];
            for i in 0..S {
                p[i] = qs[k * S + i] - lambda;
            }
            let mut m = [[C64::new(0.0, 0.0); S]; S];
            for i in 0..S {
                for j in 0..S {
                    m[i][j] = -h2 * p[i] * t.a2[i][j];
                }
                m[i][i] += 1.0;
            }
            let lu = Lu4::new(m);
            for col in 0..2 {
                let mut prev_stage = [C64::new(0.0, 0.0); S];
                for ord in 0..=order {
                    let (y, yp) = (st[ord][col][0], st[ord][col][1]);
                    let mut rhs = [C64::new(0.0, 0.0); S];
                    for i in 0..S {
                        rhs[i] = p[i] * (y + h * t.c[i] * yp) - ord as f64 * prev_stage[i];
                    }
                    let l = lu.solve(rhs);
                    if ord < order {
                        for i in 0..S {
                            let a2l: C64 = (0..S).map(|j| t.a2[i][j] * l[j]).sum();
                            prev_stage[i] = y + h * t.c[i] * yp + h2 * a2l;
                        }
                    }
                    let bal: C64 = (0..S).map(|j| t.ba[j] * l[j]).sum();
                    let bl: C64 = (0..S).map(|j| t.b[j] * l[j]).sum();
                    st[ord][col][0] = y + h * yp + h2 * bal;
                    st[ord][col][1] = yp + h * bl;
                }
            }
            if grid > 0 && (k + 1) % every == 0 {
                record(&st, &mut y1, &mut dy1, &mut y2, &mut dy2);
            }
        }
        let pick = |o: usize| [st[o][0][0], st[o][0][1], st[o][1][0], st[o][1][1]];
        FundamentalPair {
            lambda,
            y1,
            dy1,
            y2,
            dy2,
            end: pick(0),
            end_d1: pick(1),
            end_d2: pick(2),
            steps: n,
            err_est: 0.0,
        }
    }

    pub fn entries(&self, lambda: C64) -> Result<FloquetEntries> {
        self.entries_order(lambda, 2)
    }

    /// Entries with λ-derivatives up to `order`; higher ones are zero.
    pub fn entries_order(&self, lambda: C64, order: usize) -> Result<FloquetEntries> {
        Ok(FloquetEntries::from_pair(&self.solve(lambda, order, 0)?))
    }

    /// Single run at the initial step count with first λ-derivatives, no
    /// error control. Used for sign scans.
    pub fn rough(&self, lambda: C64) -> FloquetEntries {
        FloquetEntries::from_pair(&self.run(lambda, self.initial_steps(lambda, 0), 1, 0))
    }

    pub fn entries_real(&self, lambda: f64) -> Result<FloquetEntries> {
        self.entries(C64::new(lambda, 0.0))
    }
}

/// Unpivoted LU of a 4×4 matrix close to the identity.
struct Lu4 {
    m: [[C64; S]; S],
}

impl Lu4 {
    fn new(mut m: [[C64; S]; S]) -> Self {
        for k in 0..S {
            let inv = 1.0 / m[k][k];
            for i in k + 1..S {
                let f = m[i][k] * inv;
                m[i][k] = f;
                for j in k + 1..S {
                    let t = m[k][j];
                    m[i][j] -= f * t;
                }
            }
        }
        Lu4 { m }
    }

    fn solve(&self, mut b: [C64; S]) -> [C64; S] {
        let m = &self.m;
        for i in 1..S {
            for j in 0..i {
                let t = b[j];
                b[i] -= m[i][j] * t;
            }
        }
        for i in (0..S).rev() {
            for j in i + 1..S {
                let t = b[j];
                b[i] -= m[i][j] * t;
            }
            b[i] /= m[i][i];
        }
        b
    }
}

pub fn fundamental_solutions(q: &Potential, lambda: C64, grid: usize) -> Result<FundamentalPair> {
    Hill::new(q).solve(lambda, 2, grid)
}

pub fn floquet_entries(q: &Potential, lambda: C64) -> Result<FloquetEntries> {
    Hill::new(q).entries(lambda)
}

/// One row of the spectral table.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct GapRow {
    pub n: usize,
    pub lam_minus: f64,
    pub lam_plus: f64,
    pub mu: f64,
    pub nu: f64,
    pub lam_dot: f64,
    pub tau: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralTable {
    pub n_max: usize,
    pub lam0: f64,
    pub nu0: f64,
    pub rows: Vec<GapRow>,
}

/// Gap-closure threshold for index n.
pub fn tol_gap(n: usize) -> f64 {
    1e-8 * (n as f64 * n as f64).max(1.0)
}

impl SpectralTable {
    pub fn row(&self, n: usize) -> &GapRow {
        &self.rows[n - 1]
    }

    pub fn tau(&self, n: usize) -> f64 {
        self.row(n).tau
    }

    pub fn gamma(&self, n: usize) -> f64 {
        self.row(n).gamma
    }

    pub fn is_open(&self, n: usize) -> bool {
        self.row(n).gamma > 0.0
    }

    pub fn open_gaps(&self) -> Vec<usize> {
        self.rows.iter().filter(|r| r.gamma > 0.0).map(|r| r.n).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,lam_minus,lam_plus,mu,nu,lam_dot,tau,gamma\n");
        s.push_str(&format!("0,{:e},{:e},,{:e},,,\n", self.lam0, self.lam0, self.nu0));
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
                r.n, r.lam_minus, r.lam_plus, r.mu, r.nu, r.lam_dot, r.tau, r.gamma
            ));
        }
        s
    }

    /// Arrays keyed by family name.
    pub fn families(&self) -> SpectralFamilies {
        let col = |f: fn(&GapRow) -> f64| self.rows.iter().map(f).collect();
        SpectralFamilies {
            n_max: self.n_max,
            lam0: self.lam0,
            nu0: self.nu0,
            lam_minus: col(|r| r.lam_minus),
            lam_plus: col(|r| r.lam_plus),
            mu: col(|r| r.mu),
            nu: col(|r| r.nu),
            lam_dot: col(|r| r.lam_dot),
            tau: col(|r| r.tau),
            gamma: col(|r| r.gamma),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralFamilies {
    pub n_max: usize,
    pub lam0: f64,
    pub nu0: f64,
    pub lam_minus: Vec<f64>,
    pub lam_plus: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub lam_dot: Vec<f64>,
    pub tau: Vec<f64>,
    pub gamma: Vec<f64>,
}

fn lam_of_t(t: f64) -> f64 {
    t.signum() * t * t
}

/// Safeguarded Newton/bisection on [a, b] where `f` has signs `sa`, `sb` at
/// the ends. `f` returns (value, derivative); `x0` seeds the iteration.
fn refine<F>(mut a: f64, mut b: f64, sa: f64, sb: f64, x0: f64, index: i64, f: F) -> Result<f64>
where
    F: Fn(f64) -> Result<(f64, f64)>,
{
    if sa == sb || sa == 0.0 || sb == 0.0 {
        return Err(Error::Bracket { index, lo: a, hi: b });
    }
    let mut x = if x0 > a && x0 < b { x0 } else { 0.5 * (a + b) };
    let mut last_step = f64::INFINITY;
    for _ in 0..200 {
        let (fx, dx) = f(x)?;
        if fx == 0.0 {
            return Ok(x);
        }
        if fx.signum() == sa {
            a = x;
        } else {
            b = x;
        }
        let newton = x - fx / dx;
        let next = if dx != 0.0 && newton >= a && newton <= b { newton } else { 0.5 * (a + b) };
        let step = (next - x).abs();
        let scale = next.abs().max(1.0);
        if step <= 4e-15 * scale || (b - a) <= 4e-15 * scale || (step < 1e-11 * scale && step > 0.5 * last_step) {
            return Ok(next);
        }
        last_step = step;
        x = next;
    }
    Ok(x)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Periodic, Dirichlet and Neumann spectra up to index `n_max`.
pub fn spectral_table(q: &Potential, n_max: usize) -> Result<SpectralTable> {
    spectral_table_with(&Hill::new(q), n_max)
}

pub fn spectral_table_with(hill: &Hill, n_max: usize) -> Result<SpectralTable> {
    if n_max < 1 {
        return Err(Error::Input("n_max must be at least 1".into()));
    }
    let ne = n_max + 1;
    let t0 = -(1.0 + hill.sup).sqrt();
    let t1 = (ne as f64 + 0.5) * PI;
    let dt = PI / 16.0;
    let npts = ((t1 - t0) / dt).ceil() as usize + 1;
    let lams: Vec<f64> = (0..npts).map(|i| lam_of_t(t0 + dt * i as f64)).collect();
    let samples: Vec<FloquetEntries> = par::map(&lams, |&l| hill.rough(C64::new(l, 0.0)));

    // zeros of Δ̇
    let mut brackets = Vec::new();
    for i in 0..npts - 1 {
        let (u, v) = (samples[i].d_delta.re, samples[i + 1].d_delta.re);
        if sign(u) != sign(v) {
            let x0 = lams[i] + (lams[i + 1] - lams[i]) * u / (u - v);
            brackets.push((lams[i], lams[i + 1], sign(u), sign(v), x0));
        }
    }
    if brackets.len() < ne {
        return Err(Error::Bracket { index: brackets.len() as i64 + 1, lo: lams[0], hi: lams[npts - 1] });
    }
    brackets.truncate(ne);
    let lam_dot = par::map_range(ne, |k| {
        let (a, b, sa, sb, x0) = brackets[k];
        refine(a, b, sa, sb, x0, k as i64 + 1, |l| {
            let e = hill.entries_order(C64::new(l, 0.0), 2)?;
            Ok((e.d_delta.re, e.dd_delta.re))
        })
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;

    // λ₀⁺: sign change of Δ²−4 left of λ̇₁
    let mut lam0 = None;
    for i in 0..npts - 1 {
        if lams[i + 1] >= lam_dot[0] {
            break;
        }
        let (u, v) = (samples[i].disc().re, samples[i + 1].disc().re);
        if u > 0.0 && v <= 0.0 {
            let x0 = lams[i] + (lams[i + 1] - lams[i]) * u / (u - v);
            lam0 = Some(refine(lams[i], lams[i + 1], 1.0, -1.0, x0, 0, |l| disc_with_derivative(hill, l))?);
            break;
        }
    }
    let lam0 = lam0.ok_or(Error::Bracket { index: 0, lo: lams[0], hi: lam_dot[0] })?;

    let pairs = par::map_range(ne, |k| periodic_pair(hill, k + 1, &lam_dot, lam0))
        .into_iter()
        .collect::<Result<Vec<(f64, f64)>>>()?;

    let left_end = |k: usize| if k == 0 { lam0 } else { pairs[k - 1].1 };
    let m2 = |l: f64| -> Result<(f64, f64)> {
        let e = hill.entries_order(C64::new(l, 0.0), 1)?;
        Ok((e.m2.re, e.m2_dot.re))
    };
    let dm1 = |l: f64| -> Result<(f64, f64)> {
        let e = hill.entries_order(C64::new(l, 0.0), 1)?;
        Ok((e.dm1.re, e.dm1_dot.re))
    };
    let dir_neu = par::map_range(n_max, |k| -> Result<(f64, f64)> {
        let lo = 0.5 * (left_end(k) + pairs[k].0);
        let hi = 0.5 * (pairs[k].1 + pairs[k + 1].0);
        let (elo, ehi) = (hill.rough(C64::new(lo, 0.0)), hill.rough(C64::new(hi, 0.0)));
        let idx = k as i64 + 1;
        let x0 = lam_dot[k];
        let mu = refine(lo, hi, sign(elo.m2.re), sign(ehi.m2.re), x0, idx, m2)?;
        let nu = refine(lo, hi, sign(elo.dm1.re), sign(ehi.dm1.re), x0, idx, dm1)?;
        Ok((mu, nu))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let hi0 = 0.5 * (lam0 + pairs[0].0);
    let s_hi0 = sign(hill.rough(C64::new(hi0, 0.0)).dm1.re);
    let nu0 = refine(lams[0], hi0, sign(samples[0].dm1.re), s_hi0, lam0, 0, dm1)?;

    let mut rows = Vec::with_capacity(n_max);
    for k in 0..n_max {
        let (lm, lp) = pairs[k];
        let (mu, nu) = dir_neu[k];
        rows.push(GapRow {
            n: k + 1,
            lam_minus: lm,
            lam_plus: lp,
            mu,
            nu,
            lam_dot: lam_dot[k],
            tau: 0.5 * (lm + lp),
            gamma: lp - lm,
        });
    }
    let table = SpectralTable { n_max, lam0, nu0, rows };
    check_ordering(&table)?;
    Ok(table)
}

fn disc_with_derivative(hill: &Hill, l: f64) -> Result<(f64, f64)> {
    let e = hill.entries_order(C64::new(l, 0.0), 1)?;
    Ok((e.disc().re, 2.0 * (e.delta_tr * e.d_delta).re))
}

fn periodic_pair(hill: &Hill, n: usize, lam_dot: &[f64], lam0: f64) -> Result<(f64, f64)> {
    let ld = lam_dot[n - 1];
    let e = hill.entries_order(C64::new(ld, 0.0), 2)?;
    let d = e.disc().re;
    let curv = (e.delta_tr * e.dd_delta).re;
    let est = if d > 0.0 && curv < 0.0 { 2.0 * (-d / curv).sqrt() } else { 0.0 };
    if est < tol_gap(n) {
        return Ok((ld, ld));
    }
    let lo_lim = if n == 1 { lam0 } else { lam_dot[n - 2] };
    let hi_lim = lam_dot.get(n).copied().unwrap_or(ld + (ld - lo_lim));
    let side = |dir: f64, lim: f64| -> Result<f64> {
        let mut step = est;
        let mut inner = ld;
        loop {
            let x = ld + dir * step;
            let x = if dir < 0.0 { x.max(lim) } else { x.min(lim) };
            let (v, _) = disc_with_derivative(hill, x)?;
            if v <= 0.0 {
                let x0 = ld + dir * 0.5 * est;
                return if dir < 0.0 {
                    refine(x, inner, -1.0, 1.0, x0, n as i64, |l| disc_with_derivative(hill, l))
                } else {
                    refine(inner, x, 1.0, -1.0, x0, n as i64, |l| disc_with_derivative(hill, l))
                };
            }
            if x == lim {
                // thin band: Δ is monotone between zeros of Δ̇, solve Δ = ±2 there
                let s = if n % 2 == 0 { 2.0 } else { -2.0 };
                let g = |l: f64| -> Result<(f64, f64)> {
                    let e = hill.entries_order(C64::new(l, 0.0), 1)?;
                    Ok((e.delta_tr.re - s, e.d_delta.re))
                };
                let (a, b) = if dir < 0.0 { (lim, inner) } else { (inner, lim) };
                let (ga, gb) = (g(a)?.0, g(b)?.0);
                return refine(a, b, sign(ga), sign(gb), 0.5 * (a + b), n as i64, g);
            }
            inner = x;
            step *= 2.0;
        }
    };
    Ok((side(-1.0, lo_lim)?, side(1.0, hi_lim)?))
}

fn check_ordering(t: &SpectralTable) -> Result<()> {
    let slack = |n: usize| 1e-9 * (n as f64 * n as f64).max(1.0) * PI * PI;
    if t.nu0 > t.lam0 + slack(1) {
        return Err(Error::Ordering { index: 0, detail: format!("nu0 {} > lam0 {}", t.nu0, t.lam0) });
    }
    let mut prev = t.lam0;
    for r in &t.rows {
        let s = slack(r.n);
        let bad = |what: &str| Err(Error::Ordering { index: r.n as i64, detail: what.to_string() });
        if r.lam_minus <= prev {
            return bad("lam_minus not above previous lam_plus");
        }
        if r.mu < r.lam_minus - s || r.mu > r.lam_plus + s {
            return bad("mu outside gap");
        }
        if r.nu < r.lam_minus - s || r.nu > r.lam_plus + s {
            return bad("nu outside gap");
        }
        if r.lam_dot < r.lam_minus - s || r.lam_dot > r.lam_plus + s {
            return bad("lam_dot outside gap");
        }
        prev = r.lam_plus;
    }
    Ok(())
}

/// Which entire function to rebuild from its zeros.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Product {
    Disc,
    DeltaDot,
    M2,
    DM1,
}

/// ∏_{n>N} (1 − λ/(nπ)²), stable near λ = (kπ)² for k ≤ N.
fn sinc_tail(lambda: C64, n_trunc: usize) -> C64 {
    let s = lambda.sqrt();
    let k = (s.re / PI).round();
    let head = |skip: i64| -> C64 {
        (1..=n_trunc as i64)
            .filter(|&n| n != skip)
            .map(|n| 1.0 - lambda / (n as f64 * PI).powi(2))
            .product()
    };
    if k >= 1.0 && (k as usize) <= n_trunc && (s - k * PI).norm() < 0.5 {
        // sinc(s) / (1 − λ/(kπ)²) = −(−1)^k (kπ)² sin(ε)/ε / (s (kπ + s)), ε = s − kπ
        let eps = s - k * PI;
        let sinc_eps = if eps.norm() < 1e-8 { C64::new(1.0, 0.0) - eps * eps / 6.0 } else { eps.sin() / eps };
        let sign = if (k as i64) % 2 == 0 { -1.0 } else { 1.0 };
        let kp = k * PI;
        let r = sign * kp * kp * sinc_eps / (s * (kp + s));
        r / head(k as i64)
    } else {
        let sinc = if s.norm() < 1e-8 { C64::new(1.0, 0.0) - lambda / 6.0 } else { s.sin() / s };
        sinc / head(0)
    }
}

/// Truncated product representation with the tail replaced by its q = 0 value.
pub fn product_representation_eval(table: &SpectralTable, which: Product, lambda: C64, n_trunc: usize) -> Result<C64> {
    if n_trunc > table.n_max {
        return Err(Error::Input(format!("n_trunc {} exceeds n_max {}", n_trunc, table.n_max)));
    }
    let pn2 = |n: usize| (n as f64 * PI).powi(2);
    let tail = sinc_tail(lambda, n_trunc);
    let v = match which {
        Product::Disc => {
            let mut p = 4.0 * (table.lam0 - lambda);
            for r in &table.rows[..n_trunc] {
                p *= (r.lam_plus - lambda) * (r.lam_minus - lambda) / (pn2(r.n) * pn2(r.n));
            }
            p * tail * tail
        }
        Product::DeltaDot => {
            let mut p = C64::new(-1.0, 0.0);
            for r in &table.rows[..n_trunc] {
                p *= (r.lam_dot - lambda) / pn2(r.n);
            }
            p * tail
        }
        Product::M2 => {
            let mut p = C64::new(1.0, 0.0);
            for r in &table.rows[..n_trunc] {
                p *= (r.mu - lambda) / pn2(r.n);
            }
            p * tail
        }
        Product::DM1 => {
            let mut p = table.nu0 - lambda;
            for r in &table.rows[..n_trunc] {
                p *= (r.nu - lambda) / pn2(r.n);
            }
            p * tail
        }
    };
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn tableau_is_order_eight() {
        let t = tableau();
        for k in 0..8 {
            let s: f64 = (0..S).map(|i| t.b[i] * t.c[i].powi(k)).sum();
            assert!((s - 1.0 / (k as f64 + 1.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn free_closed_forms() {
        let h = Hill::new(&Potential::zero());
        let e = h.entries(c(PI * PI)).unwrap();
        assert!((e.m1 + 1.0).norm() < 1e-12);
        assert!(e.m2.norm() < 1e-12);
        assert!((e.delta_tr + 2.0).norm() < 1e-12);
        assert!(e.delta_anti.norm() < 1e-12);
        let p = h.solve(c(0.0), 0, 8).unwrap();
        for (k, (a, b)) in p.y1.iter().zip(&p.y2).enumerate() {
            assert!((a - 1.0).norm() < 1e-13);
            assert!((b - k as f64 / 8.0).norm() < 1e-13);
        }
    }

    #[test]
    fn free_derivatives() {
        let h = Hill::new(&Potential::zero());
        for l in [3.0, 20.0, 150.0] {
            let e = h.entries(c(l)).unwrap();
            let s = f64::sqrt(l);
            assert!((e.d_delta.re + s.sin() / s).abs() < 1e-11);
            let dd = -(s.cos() / s - s.sin() / (s * s)) / (2.0 * s);
            assert!((e.dd_delta.re - dd).abs() < 1e-11);
        }
    }

    #[test]
    fn free_table() {
        let t = spectral_table(&Potential::zero(), 3).unwrap();
        assert!(t.lam0.abs() < 1e-10);
        assert!(t.nu0.abs() < 1e-10);
        for r in &t.rows {
            let want = (r.n as f64 * PI).powi(2);
            for v in [r.lam_minus, r.lam_plus, r.mu, r.nu, r.lam_dot, r.tau] {
                assert!((v - want).abs() < 1e-8 * want, "n={} v={v}", r.n);
            }
            assert_eq!(r.gamma, 0.0);
        }
    }

    #[test]
    fn sinc_tail_near_poles() {
        for k in 1..4 {
            let l = c((k as f64 * PI).powi(2) * (1.0 + 1e-12));
            let direct: C64 = (4..20000).map(|n| 1.0 - l / (n as f64 * PI).powi(2)).product();
            assert!((sinc_tail(l, 3) - direct).norm() < 1e-4);
        }
    }
}
