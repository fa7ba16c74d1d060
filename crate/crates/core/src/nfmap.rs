//! Truncated phase space around the one-gap torus S₊ = {1}: the chart, the
//! partially linearized map Ψ_L, the two-form 𝓛(z), the corrector field X,
//! its flow Ψ_C and the normal-form checks for H∘Ψ_L∘Ψ_C.

use crate::asympt::loglog_slope;
use crate::error::{Error, Result};
use crate::floquet;
use crate::fourier;
use crate::hill::{spectral_table_with, Hill};
use crate::par;
use crate::potential::{lame_one_gap, Potential};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TruncConfig {
    pub n_max: usize,
    pub grid: usize,
    pub ode_steps: usize,
    /// Chebyshev nodes in the action and relative half-width of their interval.
    pub cheb_nodes: usize,
    pub cheb_width: f64,
}

impl TruncConfig {
    pub fn new(n_max: usize) -> Self {
        TruncConfig { n_max, grid: (8 * n_max).next_power_of_two(), ode_steps: 4, cheb_nodes: 10, cheb_width: 0.02 }
    }

    pub fn layout(&self) -> Layout {
        Layout { n_max: self.n_max }
    }

    fn validate(&self) -> Result<()> {
        if self.n_max < 3 || self.grid < 8 * self.n_max || self.ode_steps == 0 || self.ode_steps % 2 == 1 {
            return Err(Error::Input(format!("invalid truncation {self:?}")));
        }
        Ok(())
    }
}

/// Index map for modes 0 < |n| ≤ n_max, stored as 1, −1, 2, −2, ...
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub n_max: usize,
}

impl Layout {
    pub fn dim(&self) -> usize {
        2 * self.n_max
    }

    pub fn pos(&self, n: i64) -> usize {
        2 * (n.unsigned_abs() as usize - 1) + usize::from(n < 0)
    }

    pub fn mode(&self, i: usize) -> i64 {
        let a = (i / 2 + 1) as i64;
        if i % 2 == 0 {
            a
        } else {
            -a
        }
    }

    pub fn is_s(n: i64) -> bool {
        n.abs() == 1
    }

    pub fn perp(&self) -> Vec<i64> {
        (2..=self.n_max as i64).flat_map(|n| [n, -n]).collect()
    }

    pub fn interior_perp(&self) -> Vec<i64> {
        (2..=(self.n_max / 2) as i64).flat_map(|n| [n, -n]).collect()
    }
}

/// A point of the truncated sequence space.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqState {
    pub n_max: usize,
    pub z: Vec<C64>,
}

impl SeqState {
    pub fn zeros(n_max: usize) -> Self {
        SeqState { n_max, z: vec![ZERO; 2 * n_max] }
    }

    fn layout(&self) -> Layout {
        Layout { n_max: self.n_max }
    }

    pub fn get(&self, n: i64) -> C64 {
        self.z[self.layout().pos(n)]
    }

    pub fn set(&mut self, n: i64, v: C64) {
        let p = self.layout().pos(n);
        self.z[p] = v;
    }

    pub fn z_s(&self) -> [C64; 2] {
        [self.z[0], self.z[1]]
    }

    pub fn perp_part(&self) -> SeqState {
        let mut r = self.clone();
        r.z[0] = ZERO;
        r.z[1] = ZERO;
        r
    }

    pub fn s_part(&self) -> SeqState {
        let mut r = SeqState::zeros(self.n_max);
        r.z[0] = self.z[0];
        r.z[1] = self.z[1];
        r
    }

    /// (Σ |n|^{2s} |zₙ|²)^{1/2}
    pub fn norm(&self, s: f64) -> f64 {
        let l = self.layout();
        self.z.iter().enumerate().map(|(i, v)| (l.mode(i).abs() as f64).powf(2.0 * s) * v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn perp_norm(&self, s: f64) -> f64 {
        self.perp_part().norm(s)
    }

    pub fn add(&self, o: &SeqState) -> SeqState {
        SeqState { n_max: self.n_max, z: self.z.iter().zip(&o.z).map(|(a, b)| a + b).collect() }
    }

    pub fn sub(&self, o: &SeqState) -> SeqState {
        SeqState { n_max: self.n_max, z: self.z.iter().zip(&o.z).map(|(a, b)| a - b).collect() }
    }

    pub fn scale(&self, s: C64) -> SeqState {
        SeqState { n_max: self.n_max, z: self.z.iter().map(|a| a * s).collect() }
    }

    /// (𝓢_rev z)ₙ = z₋ₙ
    pub fn s_rev(&self) -> SeqState {
        let l = self.layout();
        let mut r = SeqState::zeros(self.n_max);
        for i in 0..self.z.len() {
            r.set(-l.mode(i), self.z[i]);
        }
        r
    }

    pub fn is_real(&self, tol: f64) -> bool {
        (1..=self.n_max as i64).all(|n| (self.get(-n) - self.get(n).conj()).norm() <= tol)
    }

    pub fn dist(&self, o: &SeqState) -> f64 {
        self.sub(o).norm(0.0)
    }

    pub fn vector(&self) -> DVector<C64> {
        DVector::from_vec(self.z.clone())
    }

    pub fn from_vector(n_max: usize, v: &DVector<C64>) -> Self {
        SeqState { n_max, z: v.iter().copied().collect() }
    }
}

/// J: zₙ ↦ 2πin zₙ on the layout.
pub fn j_diag(l: &Layout) -> Vec<C64> {
    (0..l.dim()).map(|i| C64::new(0.0, 2.0 * PI * l.mode(i) as f64)).collect()
}

/// Diagonal and index-map operators on the truncation.
pub struct BasisMaps {
    pub layout: Layout,
    pub grid: usize,
}

impl BasisMaps {
    pub fn new(cfg: &TruncConfig) -> Self {
        BasisMaps { layout: cfg.layout(), grid: cfg.grid }
    }

    pub fn j(&self) -> DMatrix<C64> {
        DMatrix::from_diagonal(&DVector::from_vec(j_diag(&self.layout)))
    }

    pub fn j_inv(&self) -> DMatrix<C64> {
        DMatrix::from_diagonal(&DVector::from_vec(j_diag(&self.layout).iter().map(|v| v.inv()).collect()))
    }

    /// ∂ₓ^{−k} on grid coefficient vectors; the constant mode is annihilated.
    pub fn dx_inv(&self, u: &[C64], k: i32) -> Vec<C64> {
        let m = u.len();
        u.iter()
            .enumerate()
            .map(|(i, v)| {
                let n = fourier::freq(i, m);
                if n == 0 {
                    ZERO
                } else {
                    v * C64::new(0.0, 2.0 * PI * n as f64).powi(-k)
                }
            })
            .collect()
    }

    /// F_⊥⁻¹: sequence ⊥-part to grid coefficients.
    pub fn f_perp_inv(&self, z: &SeqState) -> Vec<C64> {
        let mut u = vec![ZERO; self.grid];
        for n in self.layout.perp() {
            u[fourier::index(n, self.grid)] = z.get(n);
        }
        u
    }

    /// F_⊥: grid coefficients to the ⊥-part of a sequence.
    pub fn f_perp(&self, u: &[C64]) -> SeqState {
        let mut z = SeqState::zeros(self.layout.n_max);
        for n in self.layout.perp() {
            z.set(n, u[fourier::index(n, self.grid)]);
        }
        z
    }

    pub fn pi_s(&self, z: &SeqState) -> SeqState {
        z.s_part()
    }

    pub fn pi_perp(&self, z: &SeqState) -> SeqState {
        z.perp_part()
    }
}

/// ⟨∂ₓ⁻¹u, v⟩ for grid coefficient vectors, bilinear.
pub fn pair_dx_inv(u: &[C64], v: &[C64]) -> C64 {
    let m = u.len();
    let mut s = ZERO;
    for i in 1..m {
        let n = fourier::freq(i, m);
        if m % 2 == 0 && n == -(m as i64) / 2 {
            continue;
        }
        s += u[i] * v[fourier::index(-n, m)] / C64::new(0.0, 2.0 * PI * n as f64);
    }
    s
}

/// ⟨u, v⟩ = ∫ u v for grid coefficient vectors.
pub fn pair(u: &[C64], v: &[C64]) -> C64 {
    let m = u.len();
    (0..m).map(|i| u[i] * v[fourier::index(-fourier::freq(i, m), m)]).sum()
}

/// ½∫u_x² + ∫u³ for a grid coefficient vector, extended bilinearly.
pub fn hamiltonian_coeffs(u: &[C64]) -> C64 {
    let m = u.len();
    let mut kin = ZERO;
    for i in 0..m {
        let n = fourier::freq(i, m);
        kin += (2.0 * PI * n as f64).powi(2) * u[i] * u[fourier::index(-n, m)];
    }
    let s = fourier::inverse(u);
    let cub: C64 = s.iter().map(|v| v * v * v).sum::<C64>() / m as f64;
    0.5 * kin + cub
}

/// Λ[ẑ, ŵ] = Σ ẑₙŵ₋ₙ/(2πin)
pub fn lambda_form(a: &SeqState, b: &SeqState) -> C64 {
    let l = a.layout();
    (0..l.dim()).map(|i| a.z[i] * b.get(-l.mode(i)) / C64::new(0.0, 2.0 * PI * l.mode(i) as f64)).sum()
}

#[derive(Debug, Clone)]
struct ChebTable {
    /// coefficient arrays c_k, each of a fixed length
    c: Vec<Vec<C64>>,
}

impl ChebTable {
    fn from_nodes(vals: &[Vec<C64>]) -> Self {
        let k = vals.len();
        let len = vals[0].len();
        let mut c = vec![vec![ZERO; len]; k];
        for (r, cr) in c.iter_mut().enumerate() {
            for (j, v) in vals.iter().enumerate() {
                let w = ((r as f64) * (2 * j + 1) as f64 * PI / (2 * k) as f64).cos() * 2.0 / k as f64;
                for (a, b) in cr.iter_mut().zip(v) {
                    *a += w * b;
                }
            }
        }
        c[0].iter_mut().for_each(|a| *a *= 0.5);
        ChebTable { c }
    }

    fn eval_into(&self, t: &[C64], out: &mut [C64]) {
        out.iter_mut().for_each(|v| *v = ZERO);
        for (tk, ck) in t.iter().zip(&self.c) {
            for (o, a) in out.iter_mut().zip(ck) {
                *o += tk * a;
            }
        }
    }
}

fn cheb_basis(x: C64, k: usize) -> (Vec<C64>, Vec<C64>) {
    let mut t = vec![ZERO; k];
    let mut dt = vec![ZERO; k];
    t[0] = c(1.0);
    if k > 1 {
        t[1] = x;
        dt[1] = c(1.0);
    }
    for r in 2..k {
        t[r] = 2.0 * x * t[r - 1] - t[r - 2];
        dt[r] = 2.0 * t[r - 1] + 2.0 * x * dt[r - 1] - dt[r - 2];
    }
    (t, dt)
}

/// Action I₁ of the one-gap Lamé potential with modulus k.
pub fn lame_action(k: f64) -> Result<f64> {
    let (q, _) = lame_one_gap(k)?;
    let h = Hill::new(&q);
    let t = spectral_table_with(&h, 2)?;
    let f = floquet::floquet(&h, &t)?;
    f.action(1)
}

pub const MODULUS_RANGE: (f64, f64) = (1e-3, 0.95);

/// Solves action(lame(k)) = I₁ by bracketing with Illinois steps.
pub fn modulus_for_action(i1: f64) -> Result<f64> {
    let (lo_k, hi_k) = MODULUS_RANGE;
    if !(i1 > 0.0) {
        return Err(Error::Input(format!("action {i1} must be positive")));
    }
    let g = |k: f64| lame_action(k).map(|v| v - i1);
    let guess = (i1 / 5.1).powf(0.25).clamp(lo_k, hi_k);
    let (mut a, mut b) = ((guess * 0.8).max(lo_k), (guess * 1.25).min(hi_k));
    let (mut fa, mut fb) = (g(a)?, g(b)?);
    let mut tries = 0;
    while fa * fb > 0.0 {
        tries += 1;
        if tries > 40 {
            return Err(Error::Input(format!("action {i1} outside the calibrated modulus range")));
        }
        if fa > 0.0 {
            if a <= lo_k {
                return Err(Error::Input(format!("action {i1} below the calibrated range")));
            }
            b = a;
            fb = fa;
            a = (a * 0.7).max(lo_k);
            fa = g(a)?;
        } else {
            if b >= hi_k {
                return Err(Error::Input(format!("action {i1} above the calibrated range")));
            }
            a = b;
            fa = fb;
            b = (b * 1.3).min(hi_k);
            fb = g(b)?;
        }
    }
    if fa > 0.0 {
        return Err(Error::Bracket { index: 1, lo: a, hi: b });
    }
    let mut side = 0;
    for _ in 0..200 {
        let x = (a * fb - b * fa) / (fb - fa);
        let fx = g(x)?;
        if fx.abs() <= 1e-10 * i1 || (b - a) < 1e-12 * b {
            return Ok(x);
        }
        if fx < 0.0 {
            a = x;
            fa = fx;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            b = x;
            fb = fx;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
    }
    Err(Error::NoConvergence("modulus root solve".into()))
}

/// Ψ^kdv(z_S, 0) for S₊ = {1} in action-angle form, with Ψ₁ interpolated in I.
#[derive(Debug, Clone)]
pub struct OneGapChart {
    pub theta: f64,
    pub i1: f64,
    pub modulus: f64,
    pub q0: Potential,
    /// Ωₙ(I₁) for n = 1..=n_max (index n−1) and ω₁.
    pub big_omega: Vec<f64>,
    pub omega1: f64,
    pub hamiltonian: f64,
    pub steps: (f64, f64),
    cfg: TruncConfig,
    nodes: Vec<f64>,
    width: f64,
    q_tab: ChebTable,
    /// W_m for m in Layout::perp() order, concatenated.
    w_tab: ChebTable,
}

/// Chart values at one z_S. Coefficient vectors are in grid FFT order.
pub struct ChartPoint {
    pub q: Vec<C64>,
    pub dq: [Vec<C64>; 2],
    pub w: Vec<Vec<C64>>,
    pub dw: Option<[Vec<Vec<C64>>; 2]>,
}

fn node_data(cfg: &TruncConfig, i1: f64) -> Result<(f64, Vec<C64>, Vec<C64>)> {
    let k = modulus_for_action(i1)?;
    let (q, _) = lame_one_gap(k)?;
    let h = Hill::new(&q);
    let t = spectral_table_with(&h, cfg.n_max + 1)?;
    let fl = floquet::floquet(&h, &t)?;
    let m = cfg.grid;
    let mut qc = vec![ZERO; m];
    for n in -(q.n_pot() as i64)..=(q.n_pot() as i64) {
        if (n.unsigned_abs() as usize) < m / 2 {
            qc[fourier::index(n, m)] = q.coeff(n);
        }
    }
    let cols = par::try_map_range(cfg.n_max - 1, |i| {
        let d = fl.data(i + 2, m)?;
        Ok::<_, Error>((fourier::forward(&d.w_plus), fourier::forward(&d.w_minus)))
    })?;
    let mut w = Vec::with_capacity(2 * (cfg.n_max - 1) * m);
    for (wp, wm) in cols {
        w.extend(wp);
        w.extend(wm);
    }
    Ok((k, qc, w))
}

/// One-gap chart at angle θ and action I₁: q = translate(lame(k(I₁)), −θ/2π).
pub fn finite_gap_chart(cfg: &TruncConfig, theta: f64, i1: f64) -> Result<OneGapChart> {
    cfg.validate()?;
    let kn = cfg.cheb_nodes;
    let width = cfg.cheb_width * i1;
    let nodes: Vec<f64> = (0..kn).map(|j| i1 + width * ((2 * j + 1) as f64 * PI / (2 * kn) as f64).cos()).collect();
    let data = nodes.iter().map(|&ij| node_data(cfg, ij)).collect::<Result<Vec<_>>>()?;
    let q_tab = ChebTable::from_nodes(&data.iter().map(|d| d.1.clone()).collect::<Vec<_>>());
    let w_tab = ChebTable::from_nodes(&data.iter().map(|d| d.2.clone()).collect::<Vec<_>>());
    let modulus = modulus_for_action(i1)?;
    let (base, _) = lame_one_gap(modulus)?;
    let h = Hill::new(&base);
    let t = spectral_table_with(&h, cfg.n_max + 1)?;
    let fl = floquet::floquet(&h, &t)?;
    let big_omega = (1..=cfg.n_max).map(|n| fl.frequency(n).map(|(w, _)| w / (2.0 * PI * n as f64))).collect::<Result<Vec<_>>>()?;
    let omega1 = big_omega[0] * 2.0 * PI;
    let q0 = base.translate(-theta / (2.0 * PI));
    Ok(OneGapChart {
        theta,
        i1,
        modulus,
        hamiltonian: q0.hamiltonian(),
        q0,
        big_omega,
        omega1,
        steps: (1e-4, 1e-4),
        cfg: *cfg,
        nodes,
        width,
        q_tab,
        w_tab,
    })
}

impl OneGapChart {
    pub fn config(&self) -> &TruncConfig {
        &self.cfg
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// z_{±1} = √(2πI) e^{∓iθ}
    pub fn z_s(&self) -> [C64; 2] {
        let r = (2.0 * PI * self.i1).sqrt();
        [C64::from_polar(r, -self.theta), C64::from_polar(r, self.theta)]
    }

    pub fn base_state(&self) -> SeqState {
        let mut z = SeqState::zeros(self.cfg.n_max);
        let zs = self.z_s();
        z.z[0] = zs[0];
        z.z[1] = zs[1];
        z
    }

    pub fn omega(&self, n: i64) -> f64 {
        self.big_omega[n.unsigned_abs() as usize - 1]
    }

    /// (I, e^{iθ}) from z_S, continued analytically around the chart angle.
    pub fn action_angle(&self, zs: [C64; 2]) -> (C64, C64) {
        let i = zs[0] * zs[1] / (2.0 * PI);
        let rho = (zs[1] / zs[0]).sqrt();
        let ref_rho = C64::from_polar(1.0, self.theta);
        let rho = if (rho - ref_rho).norm() <= (rho + ref_rho).norm() { rho } else { -rho };
        (i, rho)
    }

    pub fn eval(&self, zs: [C64; 2], derivs: bool) -> Result<ChartPoint> {
        let m = self.cfg.grid;
        let (i, rho) = self.action_angle(zs);
        let x = (i - self.i1) / self.width;
        if x.norm() > 1.0 + 1e-9 {
            return Err(Error::Input(format!("action {i} left the chart interval")));
        }
        let (t, dt) = cheb_basis(x, self.cfg.cheb_nodes);
        let dt: Vec<C64> = dt.iter().map(|v| v / self.width).collect();
        let pows: Vec<C64> = (0..m).map(|j| rho.powi(-fourier::freq(j, m) as i32)).collect();
        let mut qv = vec![ZERO; m];
        self.q_tab.eval_into(&t, &mut qv);
        let mut q_i = vec![ZERO; m];
        if derivs {
            self.q_tab.eval_into(&dt, &mut q_i);
        }
        // ∂_{z₁} = (I∂_I + (i/2)∂_θ)/z₁, ∂_{z₋₁} = (I∂_I − (i/2)∂_θ)/z₋₁
        let ih = C64::new(0.0, 0.5);
        let q: Vec<C64> = qv.iter().zip(&pows).map(|(a, p)| a * p).collect();
        let mut dq = [vec![ZERO; m], vec![ZERO; m]];
        if derivs {
            for j in 0..m {
                let th = C64::new(0.0, -(fourier::freq(j, m) as f64)) * q[j];
                let di = q_i[j] * pows[j] * i;
                dq[0][j] = (di + ih * th) / zs[0];
                dq[1][j] = (di - ih * th) / zs[1];
            }
        }
        let perp = self.cfg.layout().perp();
        let mut all = vec![ZERO; perp.len() * m];
        self.w_tab.eval_into(&t, &mut all);
        let mut all_i = Vec::new();
        if derivs {
            all_i = vec![ZERO; perp.len() * m];
            self.w_tab.eval_into(&dt, &mut all_i);
        }
        let mut w = Vec::with_capacity(perp.len());
        let mut dw0 = Vec::new();
        let mut dw1 = Vec::new();
        for (k, &n) in perp.iter().enumerate() {
            let rn = rho.powi(n as i32);
            let col: Vec<C64> = (0..m).map(|j| all[k * m + j] * pows[j] * rn).collect();
            if derivs {
                let mut a = vec![ZERO; m];
                let mut b = vec![ZERO; m];
                for j in 0..m {
                    let th = C64::new(0.0, (n - fourier::freq(j, m)) as f64) * col[j];
                    let di = all_i[k * m + j] * pows[j] * rn * i;
                    a[j] = (di + ih * th) / zs[0];
                    b[j] = (di - ih * th) / zs[1];
                }
                dw0.push(a);
                dw1.push(b);
            }
            w.push(col);
        }
        Ok(ChartPoint { q, dq, w, dw: if derivs { Some([dw0, dw1]) } else { None } })
    }

    /// Ψ₁ as a grid-coefficient × ⊥ matrix (column k is W for Layout::perp()[k]).
    pub fn psi1_matrix(&self) -> Result<DMatrix<C64>> {
        let p = self.eval(self.z_s(), false)?;
        let m = self.cfg.grid;
        Ok(DMatrix::from_fn(m, p.w.len(), |j, k| p.w[k][j]))
    }
}

/// Ψ_L, 𝓛, 𝓔, X and the flow on one chart.
pub struct NormalFormMap<'a> {
    pub chart: &'a OneGapChart,
    pub layout: Layout,
    jd: Vec<C64>,
    perp: Vec<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    Neumann,
    Dense,
}

impl<'a> NormalFormMap<'a> {
    pub fn new(chart: &'a OneGapChart) -> Self {
        let layout = chart.cfg.layout();
        NormalFormMap { chart, jd: j_diag(&layout), perp: layout.perp(), layout }
    }

    fn grid(&self) -> usize {
        self.chart.cfg.grid
    }

    /// Ψ_L(z) = q(z_S) + Σ_{m∈⊥} z_m W_m(z_S), as grid coefficients.
    pub fn psi_l(&self, z: &SeqState) -> Result<Vec<C64>> {
        let p = self.chart.eval(z.z_s(), false)?;
        let mut u = p.q.clone();
        for (k, &n) in self.perp.iter().enumerate() {
            let zn = z.get(n);
            for (a, b) in u.iter_mut().zip(&p.w[k]) {
                *a += zn * b;
            }
        }
        Ok(u)
    }

    fn combine(&self, cols: &[Vec<C64>], z: &SeqState) -> Vec<C64> {
        let mut u = vec![ZERO; self.grid()];
        for (k, &n) in self.perp.iter().enumerate() {
            let zn = z.get(n);
            if zn == ZERO {
                continue;
            }
            for (a, b) in u.iter_mut().zip(&cols[k]) {
                *a += zn * b;
            }
        }
        u
    }

    /// 𝓛(z) on the layout: 𝓛_{n,j} = Λ_L[e_j, e_{−n}], with the ⊥⊥ block zero.
    pub fn l_matrix(&self, z: &SeqState) -> Result<DMatrix<C64>> {
        let p = self.chart.eval(z.z_s(), true)?;
        Ok(self.l_from_point(&p, z))
    }

    fn l_from_point(&self, p: &ChartPoint, z: &SeqState) -> DMatrix<C64> {
        let l = &self.layout;
        let dw = p.dw.as_ref().unwrap();
        let v = [self.combine(&dw[0], z), self.combine(&dw[1], z)];
        let dim = l.dim();
        let mut mat = DMatrix::<C64>::zeros(dim, dim);
        // S index s ∈ {0: mode 1, 1: mode −1}
        for j in 0..2 {
            for k in 0..2 {
                let val = pair_dx_inv(&v[j], &v[k]) + pair_dx_inv(&p.dq[j], &v[k]) + pair_dx_inv(&v[j], &p.dq[k]);
                // column e_j, row n with −n = mode(k)
                mat[(l.pos(-l.mode(k)), j)] = val;
            }
        }
        let rows: Vec<(usize, [C64; 2], [C64; 2])> = par::map(&self.perp, |&m| {
            let km = self.perp.iter().position(|&x| x == m).unwrap();
            let a = [pair_dx_inv(&p.w[km], &v[0]), pair_dx_inv(&p.w[km], &v[1])];
            let b = [pair_dx_inv(&v[0], &p.w[km]), pair_dx_inv(&v[1], &p.w[km])];
            (km, a, b)
        });
        for (km, a, b) in rows {
            let m = self.perp[km];
            for k in 0..2 {
                // Λ_L[e_m, e_k]: column m, row −k
                mat[(l.pos(-l.mode(k)), l.pos(m))] = a[k];
                // Λ_L[e_k, e_m]: column k, row −m
                mat[(l.pos(-m), k)] = b[k];
            }
        }
        mat
    }

    /// 𝓔(z) = (½𝓛_S^⊥(z)[z_⊥], 0)
    pub fn e_vector(&self, z: &SeqState) -> Result<SeqState> {
        let lm = self.l_matrix(z)?;
        Ok(self.e_from_l(&lm, z))
    }

    fn e_from_l(&self, lm: &DMatrix<C64>, z: &SeqState) -> SeqState {
        let zp = z.perp_part().vector();
        let full = lm * zp;
        let mut e = SeqState::zeros(z.n_max);
        e.z[0] = 0.5 * full[0];
        e.z[1] = 0.5 * full[1];
        e
    }

    /// X(τ, z) = −𝓛_τ(z)⁻¹[J𝓔(z)], 𝓛_τ = Id + τJ𝓛(z).
    pub fn x_field(&self, tau: f64, z: &SeqState) -> Result<SeqState> {
        self.x_field_with(tau, z, Solver::Neumann).map(|r| r.0)
    }

    /// Returns the field and the solver that produced it.
    pub fn x_field_with(&self, tau: f64, z: &SeqState, solver: Solver) -> Result<(SeqState, Solver)> {
        let lm = self.l_matrix(z)?;
        self.x_from_l(tau, &lm, z, solver)
    }

    fn jl(&self, tau: f64, lm: &DMatrix<C64>) -> DMatrix<C64> {
        let mut a = lm.clone();
        for (i, mut row) in a.row_iter_mut().enumerate() {
            row *= self.jd[i] * tau;
        }
        a
    }

    fn x_from_l(&self, tau: f64, lm: &DMatrix<C64>, z: &SeqState, solver: Solver) -> Result<(SeqState, Solver)> {
        let e = self.e_from_l(lm, z);
        let je = DVector::from_iterator(e.z.len(), e.z.iter().zip(&self.jd).map(|(a, b)| a * b));
        let a = self.jl(tau, lm);
        if solver == Solver::Neumann && spectral_radius(&a) < 0.9 {
            let mut term = je.clone();
            let mut sum = je.clone();
            let scale = je.norm().max(1e-300);
            for _ in 0..500 {
                term = -(&a * &term);
                sum += &term;
                if term.norm() < 1e-12 * scale {
                    return Ok((SeqState::from_vector(z.n_max, &(-sum)), Solver::Neumann));
                }
            }
        }
        let mut lt = a;
        for i in 0..lt.nrows() {
            lt[(i, i)] += c(1.0);
        }
        let x = lt.lu().solve(&je).ok_or_else(|| Error::Singular("L_tau".into()))?;
        Ok((SeqState::from_vector(z.n_max, &(-x)), Solver::Dense))
    }

    /// 𝓛_τ(z) = Id + τJ𝓛(z)
    pub fn l_tau(&self, tau: f64, z: &SeqState) -> Result<DMatrix<C64>> {
        let lm = self.l_matrix(z)?;
        let mut a = self.jl(tau, &lm);
        for i in 0..a.nrows() {
            a[(i, i)] += c(1.0);
        }
        Ok(a)
    }

    /// Ψ_X^{τ₀,τ₁}(z) by RK4; the states at each step are returned as well.
    pub fn flow_path(&self, t0: f64, t1: f64, z: &SeqState) -> Result<Vec<(f64, SeqState)>> {
        let steps = ((t1 - t0).abs() * self.chart.cfg.ode_steps as f64).ceil().max(1.0) as usize;
        let h = (t1 - t0) / steps as f64;
        let mut y = z.clone();
        let mut path = vec![(t0, y.clone())];
        for s in 0..steps {
            let t = t0 + s as f64 * h;
            let k1 = self.x_field(t, &y)?;
            let k2 = self.x_field(t + 0.5 * h, &y.add(&k1.scale(c(0.5 * h))))?;
            let k3 = self.x_field(t + 0.5 * h, &y.add(&k2.scale(c(0.5 * h))))?;
            let k4 = self.x_field(t + h, &y.add(&k3.scale(c(h))))?;
            let inc = k1.add(&k2.scale(c(2.0))).add(&k3.scale(c(2.0))).add(&k4).scale(c(h / 6.0));
            y = y.add(&inc);
            path.push((t + h, y.clone()));
        }
        Ok(path)
    }

    pub fn flow(&self, t0: f64, t1: f64, z: &SeqState) -> Result<SeqState> {
        Ok(self.flow_path(t0, t1, z)?.pop().unwrap().1)
    }

    /// Ψ_C = Ψ_X^{0,1}
    pub fn corrector(&self, z: &SeqState) -> Result<SeqState> {
        self.flow(0.0, 1.0, z)
    }

    /// 𝓗 = H^kdv∘Ψ_L∘Ψ_C, or H^kdv∘Ψ_L without the corrector.
    pub fn hamiltonian(&self, z: &SeqState, corrected: bool) -> Result<C64> {
        let w = if corrected { self.corrector(z)? } else { z.clone() };
        Ok(hamiltonian_coeffs(&self.psi_l(&w)?))
    }

    /// Central-difference differential of Ψ_L∘Ψ_C (or Ψ_L) along ẑ.
    pub fn d_psi(&self, z: &SeqState, dz: &SeqState, h: f64, corrected: bool) -> Result<Vec<C64>> {
        let f = |s: f64| -> Result<Vec<C64>> {
            let w = z.add(&dz.scale(c(s)));
            let w = if corrected { self.corrector(&w)? } else { w };
            self.psi_l(&w)
        };
        let a = f(h)?;
        let b = f(-h)?;
        Ok(a.iter().zip(&b).map(|(x, y)| (x - y) / (2.0 * h)).collect())
    }

    /// Central-difference Jacobian of a map on the layout.
    pub fn jacobian<F>(&self, z: &SeqState, h: f64, f: F) -> Result<DMatrix<C64>>
    where
        F: Fn(&SeqState) -> Result<SeqState> + Sync,
    {
        let dim = self.layout.dim();
        let cols = par::try_map_range(dim, |i| {
            let mut e = SeqState::zeros(z.n_max);
            e.z[i] = c(h);
            let a = f(&z.add(&e))?;
            let b = f(&z.sub(&e))?;
            Ok::<_, Error>(a.sub(&b).scale(c(0.5 / h)).z)
        })?;
        Ok(DMatrix::from_fn(dim, dim, |r, k| cols[k][r]))
    }
}

/// Power-iteration estimate of the spectral radius.
pub fn spectral_radius(a: &DMatrix<C64>) -> f64 {
    let n = a.nrows();
    let mut v = DVector::from_fn(n, |i, _| C64::new(1.0 + 0.1 * i as f64, 0.3));
    let mut est = 0.0;
    for _ in 0..30 {
        let w = a * &v;
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        est = nw / v.norm();
        v = w / c(nw);
    }
    est
}

/// The bilinear transpose on the layout: (Aᵗ)_{n,m} = A_{−m,−n}.
pub fn bilinear_transpose(a: &DMatrix<C64>, l: &Layout) -> DMatrix<C64> {
    let dim = l.dim();
    DMatrix::from_fn(dim, dim, |r, k| a[(l.pos(-l.mode(k)), l.pos(-l.mode(r)))])
}

/// Random ⊥ state with equal moduli, random phases, ‖z_⊥‖₀ = radius.
pub fn random_perp(n_max: usize, radius: f64, real: bool, seed: u64) -> SeqState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = SeqState::zeros(n_max);
    for n in 2..=n_max as i64 {
        let ph: f64 = rng.gen_range(0.0..2.0 * PI);
        let v = C64::from_polar(1.0, ph);
        z.set(n, v);
        let w = if real { v.conj() } else { C64::from_polar(1.0, rng.gen_range(0.0..2.0 * PI)) };
        z.set(-n, w);
    }
    let nz = z.norm(0.0);
    z.scale(c(radius / nz))
}

/// Random tangent vector supported on |n| ≤ n_lim, unit ‖·‖₀.
pub fn random_tangent(n_max: usize, n_lim: usize, rng: &mut ChaCha8Rng) -> SeqState {
    let mut z = SeqState::zeros(n_max);
    for n in 1..=n_lim as i64 {
        z.set(n, C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        z.set(-n, C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    }
    let nz = z.norm(0.0);
    z.scale(c(1.0 / nz))
}

#[derive(Debug, Clone, Serialize)]
pub struct TransposeReport {
    /// max over the interior block of 2π|n|·|(Ψ₁ᵗ∂⁻¹Ψ₁ − J_⊥⁻¹)_{nm}|
    pub residual: f64,
    /// max_d |a₁(Ψ₁ᵗ)(d) + a₁(Ψ₁)(d)| relative to max_d |a₁(Ψ₁)(d)|
    pub a1_relation: f64,
    pub a1_psi: Vec<(i64, C64)>,
}

/// Fits e(m+d, m) ≈ Σ_{k=1..K} c_k(d)/(2πim)^k along each diagonal offset d and
/// returns c_1(d), using columns with |m| ≥ m_min.
pub fn diagonal_offset_fit<F>(entry: F, cols: &[i64], rows_ok: &dyn Fn(i64) -> bool, d_max: i64, m_min: i64, order: usize) -> Vec<(i64, C64)>
where
    F: Fn(i64, i64) -> C64,
{
    let mut out = Vec::new();
    for d in -d_max..=d_max {
        let ms: Vec<i64> = cols.iter().copied().filter(|&m| m.abs() >= m_min && rows_ok(m + d)).collect();
        if ms.len() < order + 1 {
            continue;
        }
        let a = DMatrix::from_fn(ms.len(), order, |i, k| C64::new(0.0, 2.0 * PI * ms[i] as f64).powi(-(k as i32 + 1)));
        let b = DVector::from_iterator(ms.len(), ms.iter().map(|&m| entry(m + d, m)));
        let scales: Vec<f64> = (0..order).map(|k| a.column(k).norm()).collect();
        let mut an = a.clone();
        for k in 0..order {
            an.column_mut(k).scale_mut(1.0 / scales[k]);
        }
        if let Ok(sol) = an.svd(true, true).solve(&b, 0.0) {
            out.push((d, sol[0] / scales[0]));
        }
    }
    out
}

/// Ψ₁ᵗ∂ₓ⁻¹Ψ₁ = J_⊥⁻¹ on the interior and the sign relation a₁(Ψ₁ᵗ) = −a₁(Ψ₁).
pub fn psi1_transpose_identity(chart: &OneGapChart) -> Result<TransposeReport> {
    let cfg = chart.cfg;
    let l = cfg.layout();
    let p = chart.eval(chart.z_s(), false)?;
    let perp = l.perp();
    let col = |n: i64| perp.iter().position(|&x| x == n).unwrap();
    let interior = l.interior_perp();
    let mut residual: f64 = 0.0;
    for &n in &interior {
        for &m in &interior {
            let v = pair_dx_inv(&p.w[col(m)], &p.w[col(-n)]);
            let want = if n == m { C64::new(0.0, 2.0 * PI * n as f64).inv() } else { ZERO };
            residual = residual.max((v - want).norm() * 2.0 * PI * n.abs() as f64);
        }
    }
    let g = cfg.grid;
    let nm = cfg.n_max as i64;
    let in_range = |n: i64| n.abs() >= 2 && n.abs() <= nm;
    let d_max = (nm / 4).clamp(2, 12);
    let m_min = 4;
    // Ψ₁: entry (j, m) = coefficient j of W_m
    let a1 = diagonal_offset_fit(|j, m| p.w[col(m)][fourier::index(j, g)] - if j == m { c(1.0) } else { ZERO }, &perp, &in_range, d_max, m_min, 3);
    // Ψ₁ᵗ: entry (n, j) = coefficient −j of W_{−n}
    let a1t = diagonal_offset_fit(
        |n, j| p.w[col(-n)][fourier::index(-j, g)] - if n == j { c(1.0) } else { ZERO },
        &perp,
        &in_range,
        d_max,
        m_min,
        3,
    );
    let scale = a1.iter().map(|x| x.1.norm()).fold(0.0, f64::max).max(1e-300);
    let mut rel: f64 = 0.0;
    for (d, v) in &a1 {
        if let Some((_, w)) = a1t.iter().find(|x| x.0 == *d) {
            rel = rel.max((v + w).norm() / scale);
        }
    }
    Ok(TransposeReport { residual, a1_relation: rel, a1_psi: a1 })
}

/// Row norms of 𝓛_⊥^S(z) over the interior ⊥ indices and their log-log slope.
pub fn l_perp_s_decay(nf: &NormalFormMap, z: &SeqState) -> Result<(Vec<(i64, f64)>, f64)> {
    let lm = nf.l_matrix(z)?;
    let l = nf.layout;
    let rows: Vec<(i64, f64)> = (2..=(l.n_max / 2) as i64)
        .map(|n| {
            let r: f64 = [n, -n].iter().map(|&k| lm[(l.pos(k), 0)].norm_sqr() + lm[(l.pos(k), 1)].norm_sqr()).sum();
            (n, (0.5 * r).sqrt())
        })
        .collect();
    let slope = loglog_slope(&rows.iter().map(|r| r.1).collect::<Vec<_>>(), &rows.iter().map(|r| r.0).collect::<Vec<_>>());
    Ok((rows, slope))
}

/// max over tangent pairs of |Λ_G[dΨẑ, dΨŵ] − Λ[ẑ, ŵ]|, tangents on |n| ≤ n_lim.
pub fn symplectic_residual(nf: &NormalFormMap, z: &SeqState, n_lim: usize, pairs: usize, seed: u64, corrected: bool) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tangents: Vec<(SeqState, SeqState)> =
        (0..pairs).map(|_| (random_tangent(z.n_max, n_lim, &mut rng), random_tangent(z.n_max, n_lim, &mut rng))).collect();
    let h = 1e-5;
    let vals = par::try_map(&tangents, |(a, b)| {
        let da = nf.d_psi(z, a, h, corrected)?;
        let db = nf.d_psi(z, b, h, corrected)?;
        Ok::<_, Error>((pair_dx_inv(&da, &db) - lambda_form(a, b)).norm())
    })?;
    Ok(vals.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, Serialize)]
pub struct NormalFormReport {
    /// max_n |∂²𝓗/∂zₙ∂z₋ₙ − Ωₙ| / Ωₙ over interior n
    pub quad_rel: f64,
    /// max |∂²𝓗/∂zₙ∂z_m| / Ω_{|n|} over sampled interior pairs with m ≠ −n
    pub offdiag_rel: f64,
    pub diag: Vec<(i64, C64, f64)>,
    /// ‖Ψ₁ᵗd∇HΨ₁ − Ω_⊥ − 𝓖‖ / ‖Ψ₁ᵗd∇HΨ₁‖ on the interior block
    pub identity_rel: f64,
    pub cubic_exponent: f64,
    pub cubic_samples: Vec<(f64, f64)>,
}

/// Ψ₁ᵗ d∇H Ψ₁, Ω_⊥ + 𝓖 on the interior ⊥ block, 𝓖 = −ω₁Ψ₁ᵗ∂ₓ⁻¹∂_θΨ₁.
pub fn operator_identity(chart: &OneGapChart) -> Result<(DMatrix<C64>, DMatrix<C64>)> {
    let cfg = chart.cfg;
    let l = cfg.layout();
    let g = cfg.grid;
    let p = chart.eval(chart.z_s(), false)?;
    let perp = l.perp();
    let col = |n: i64| perp.iter().position(|&x| x == n).unwrap();
    let interior = l.interior_perp();
    let qs = fourier::inverse(&p.q);
    let dnabla = |w: &[C64]| -> Vec<C64> {
        let s = fourier::inverse(w);
        let prod: Vec<C64> = s.iter().zip(&qs).map(|(a, b)| 6.0 * a * b).collect();
        let pc = fourier::forward(&prod);
        (0..g).map(|j| (2.0 * PI * fourier::freq(j, g) as f64).powi(2) * w[j] + pc[j]).collect()
    };
    let theta_d = |w: &[C64], n: i64| -> Vec<C64> { (0..g).map(|j| C64::new(0.0, (n - fourier::freq(j, g)) as f64) * w[j]).collect() };
    let k = interior.len();
    let applied: Vec<(Vec<C64>, Vec<C64>)> = par::map(&interior, |&m| (dnabla(&p.w[col(m)]), theta_d(&p.w[col(m)], m)));
    let mut lhs = DMatrix::<C64>::zeros(k, k);
    let mut rhs = DMatrix::<C64>::zeros(k, k);
    for (a, &n) in interior.iter().enumerate() {
        let wn = &p.w[col(-n)];
        for (b, &m) in interior.iter().enumerate() {
            lhs[(a, b)] = pair(wn, &applied[b].0);
            let gval = -chart.omega1 * pair_dx_inv(&applied[b].1, wn);
            rhs[(a, b)] = gval + if n == m { c(chart.omega(n)) } else { ZERO };
        }
    }
    Ok((lhs, rhs))
}

fn second_mixed<F: Fn(&SeqState) -> Result<C64> + Sync>(f: &F, z: &SeqState, n: i64, m: i64, h: f64) -> Result<C64> {
    let shift = |a: f64, b: f64| {
        let mut e = SeqState::zeros(z.n_max);
        e.set(n, c(a));
        let prev = e.get(m);
        e.set(m, prev + c(b));
        z.add(&e)
    };
    let v = [f(&shift(h, h))?, f(&shift(h, -h))?, f(&shift(-h, h))?, f(&shift(-h, -h))?];
    Ok((v[0] - v[1] - v[2] + v[3]) / (4.0 * h * h))
}

/// Quadratic part of 𝓗 = H∘Ψ_L∘Ψ_C at (z_S, 0), operator identity and cubic
/// remainder scaling.
pub fn hamiltonian_normal_form_check(nf: &NormalFormMap, seed: u64) -> Result<NormalFormReport> {
    let chart = nf.chart;
    let z0 = chart.base_state();
    let l = nf.layout;
    let h = 1e-3;
    let f = |w: &SeqState| nf.hamiltonian(w, true);
    let ns: Vec<i64> = (2..=(l.n_max / 2) as i64).collect();
    let diag = par::try_map(&ns, |&n| {
        let v = second_mixed(&f, &z0, n, -n, h)?;
        Ok::<_, Error>((n, v, (v - chart.omega(n)).norm() / chart.omega(n)))
    })?;
    let quad_rel = diag.iter().map(|d| d.2).fold(0.0, f64::max);
    let pairs: Vec<(i64, i64)> = ns.iter().flat_map(|&n| [(n, n), (n, -(n + 1)), (n, 2)]).filter(|&(n, m)| m != -n && m.abs() <= (l.n_max / 2) as i64).collect();
    let off = par::try_map(&pairs, |&(n, m)| Ok::<_, Error>(second_mixed(&f, &z0, n, m, h)?.norm() / chart.omega(n)))?;
    let offdiag_rel = off.into_iter().fold(0.0, f64::max);
    let (lhs, rhs) = operator_identity(chart)?;
    let identity_rel = (&lhs - &rhs).norm() / lhs.norm();
    // cubic remainder along a fixed real ⊥ direction
    let dir = random_perp(l.n_max, 1.0, true, seed);
    let h0 = f(&z0)?;
    let radii = [0.004, 0.008, 0.016, 0.032];
    let samples = par::try_map(&radii, |&r| {
        let z = z0.add(&dir.scale(c(r)));
        let quad: C64 = (2..=l.n_max as i64).map(|n| chart.omega(n) * z.get(n) * z.get(-n)).sum();
        let v = f(&z)? - h0 - quad;
        Ok::<_, Error>((r, v.norm()))
    })?;
    let xs: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let cubic_exponent = fit_exponent(&xs, &ys);
    Ok(NormalFormReport { quad_rel, offdiag_rel, diag, identity_rel, cubic_exponent, cubic_samples: samples })
}

/// Least-squares slope of log y against log x.
pub fn fit_exponent(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.max(1e-300).ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Serialize)]
pub struct DflowReport {
    pub formula_vs_direct: f64,
    pub scale: f64,
}

/// dΨ^{0,τ}(z)ᵗ = J⁻¹ dΨ^{τ,0}(Ψ^{0,τ}(z)) 𝓛_τ(Ψ^{0,τ}(z))⁻¹ J, compared with
/// the bilinear transpose of the finite-difference Jacobian on interior modes.
pub fn dflow_transpose(nf: &NormalFormMap, tau: f64, z: &SeqState) -> Result<(DMatrix<C64>, DflowReport)> {
    let l = nf.layout;
    let h = 1e-5;
    let a = nf.jacobian(z, h, |w| nf.flow(0.0, tau, w))?;
    let w = nf.flow(0.0, tau, z)?;
    let b = nf.jacobian(&w, h, |v| nf.flow(tau, 0.0, v))?;
    let lt = nf.l_tau(tau, &w)?;
    let lt_inv = lt.try_inverse().ok_or_else(|| Error::Singular("L_tau".into()))?;
    let jd = DMatrix::from_diagonal(&DVector::from_vec(j_diag(&l)));
    let jinv = DMatrix::from_diagonal(&DVector::from_vec(j_diag(&l).iter().map(|v| v.inv()).collect()));
    let formula = &jinv * b * lt_inv * &jd;
    let direct = bilinear_transpose(&a, &l);
    let lim = (l.n_max / 2) as i64;
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for r in 0..l.dim() {
        for k in 0..l.dim() {
            if l.mode(r).abs() <= lim && l.mode(k).abs() <= lim {
                diff = diff.max((formula[(r, k)] - direct[(r, k)]).norm());
                scale = scale.max(direct[(r, k)].norm());
            }
        }
    }
    Ok((formula, DflowReport { formula_vs_direct: diff, scale }))
}

#[derive(Debug, Clone, Serialize)]
pub struct ParametrixReport {
    /// Fourier coefficients (offset d, â₁(d)) of a₁(z; Ψ_C)
    pub a1: Vec<(i64, C64)>,
    pub a1_norm: f64,
    /// |Rₙ| for interior ⊥ n > 0 (averaged over ±n)
    pub remainder_rows: Vec<(i64, f64)>,
    pub remainder_slope: f64,
}

/// Coefficient a₁(τ, z; X) of X_⊥(τ, z) ≈ F_⊥ a₁ ∂ₓ⁻¹ F_⊥⁻¹[z_⊥], read off
/// X_⊥ = −τJ_⊥𝓛_⊥^S(z)X_S, which is linear in z_⊥.
pub fn x_coefficient_a1(nf: &NormalFormMap, tau: f64, z: &SeqState) -> Result<Vec<(i64, C64)>> {
    let p = nf.chart.eval(z.z_s(), true)?;
    let lm = nf.l_from_point(&p, z);
    let (x, _) = nf.x_from_l(tau, &lm, z, Solver::Neumann)?;
    let dw = p.dw.as_ref().unwrap();
    let perp = nf.perp.clone();
    let col = |n: i64| perp.iter().position(|&v| v == n).unwrap();
    let xs = [x.z[0], x.z[1]];
    let nm = nf.layout.n_max as i64;
    let in_range = |n: i64| n.abs() >= 2 && n.abs() <= nm;
    let d_max = (nm / 4).clamp(2, 12);
    let entry = |n: i64, m: i64| -> C64 {
        let wn = &p.w[col(-n)];
        let s = xs[0] * pair_dx_inv(&dw[0][col(m)], wn) + xs[1] * pair_dx_inv(&dw[1][col(m)], wn);
        -tau * C64::new(0.0, 2.0 * PI * n as f64) * s
    };
    Ok(diagonal_offset_fit(entry, &perp, &in_range, d_max, 4, 3))
}

/// a₁(z; Ψ_C) = ∫₀¹ a₁(t, Ψ^{0,t}(z); X) dt (Simpson on the RK4 nodes) and the
/// N = 1 remainder Ψ_C(z)_⊥ − z_⊥ − F_⊥(a₁∂ₓ⁻¹F_⊥⁻¹z_⊥).
pub fn parametrix_coeffs(nf: &NormalFormMap, z: &SeqState) -> Result<ParametrixReport> {
    let path = nf.flow_path(0.0, 1.0, z)?;
    let coeffs = par::try_map(&path, |(t, w)| x_coefficient_a1(nf, *t, w))?;
    let steps = path.len() - 1;
    let hstep = 1.0 / steps as f64;
    let mut a1: Vec<(i64, C64)> = coeffs[0].iter().map(|(d, _)| (*d, ZERO)).collect();
    for (i, cs) in coeffs.iter().enumerate() {
        let w = if i == 0 || i == steps {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        for (d, v) in cs {
            if let Some(slot) = a1.iter_mut().find(|x| x.0 == *d) {
                slot.1 += v * (w * hstep / 3.0);
            }
        }
    }
    let end = &path[steps].1;
    let l = nf.layout;
    let perp = l.perp();
    let mut rows = Vec::new();
    for n in 2..=(l.n_max / 2) as i64 {
        let mut acc = 0.0;
        for nn in [n, -n] {
            let mut pred = ZERO;
            for &m in &perp {
                if let Some((_, a)) = a1.iter().find(|x| x.0 == nn - m) {
                    pred += a * z.get(m) / C64::new(0.0, 2.0 * PI * m as f64);
                }
            }
            let r = end.get(nn) - z.get(nn) - pred;
            acc += r.norm_sqr();
        }
        rows.push((n, (0.5 * acc).sqrt()));
    }
    let slope = loglog_slope(&rows.iter().map(|r| r.1).collect::<Vec<_>>(), &rows.iter().map(|r| r.0).collect::<Vec<_>>());
    let a1_norm = a1.iter().map(|x| x.1.norm_sqr()).sum::<f64>().sqrt();
    Ok(ParametrixReport { a1, a1_norm, remainder_rows: rows, remainder_slope: slope })
}

/// Little-endian row-major complex doubles after a 16-byte header
/// (8-byte magic, u32 rows, u32 cols).
pub const MATRIX_MAGIC: &[u8; 8] = b"KDVNFMAT";

pub fn write_matrix(path: &Path, m: &DMatrix<C64>) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MATRIX_MAGIC)?;
    f.write_all(&(m.nrows() as u32).to_le_bytes())?;
    f.write_all(&(m.ncols() as u32).to_le_bytes())?;
    for r in 0..m.nrows() {
        for k in 0..m.ncols() {
            f.write_all(&m[(r, k)].re.to_le_bytes())?;
            f.write_all(&m[(r, k)].im.to_le_bytes())?;
        }
    }
    f.flush()
}

pub fn read_matrix(path: &Path) -> std::io::Result<DMatrix<C64>> {
    let bytes = std::fs::read(path)?;
    let bad = || std::io::Error::new(std::io::ErrorKind::InvalidData, "not a matrix file");
    if bytes.len() < 16 || &bytes[..8] != MATRIX_MAGIC {
        return Err(bad());
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if bytes.len() != 16 + 16 * rows * cols {
        return Err(bad());
    }
    let f = |i: usize| f64::from_le_bytes(bytes[16 + 8 * i..24 + 8 * i].try_into().unwrap());
    Ok(DMatrix::from_fn(rows, cols, |r, k| {
        let i = 2 * (r * cols + k);
        C64::new(f(i), f(i + 1))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_roundtrip() {
        let l = Layout { n_max: 5 };
        for i in 0..l.dim() {
            assert_eq!(l.pos(l.mode(i)), i);
        }
        assert_eq!(l.perp().len(), 8);
    }

    #[test]
    fn basis_maps() {
        let cfg = TruncConfig::new(6);
        let b = BasisMaps::new(&cfg);
        let id = b.j() * b.j_inv();
        assert!((id - DMatrix::<C64>::identity(12, 12)).norm() < 1e-14);
        let mut u = vec![ZERO; cfg.grid];
        u[1] = c(1.0);
        let v = b.dx_inv(&u, 1);
        assert!((v[1] - C64::new(0.0, 2.0 * PI).inv()).norm() < 1e-15);
        let mut z = random_perp(6, 1.0, true, 3);
        z.z[0] = ZERO;
        z.z[1] = ZERO;
        assert!(b.f_perp(&b.f_perp_inv(&z)).dist(&z) < 1e-15);
    }

    #[test]
    fn cheb_reproduces_polynomials() {
        let k = 6;
        let vals: Vec<Vec<C64>> =
            (0..k).map(|j| ((2 * j + 1) as f64 * PI / (2 * k) as f64).cos()).map(|x| vec![c(x * x * x - 2.0 * x)]).collect();
        let tab = ChebTable::from_nodes(&vals);
        let x = C64::new(0.3, 0.1);
        let (t, dt) = cheb_basis(x, k);
        let mut o = vec![ZERO];
        tab.eval_into(&t, &mut o);
        assert!((o[0] - (x * x * x - 2.0 * x)).norm() < 1e-13);
        tab.eval_into(&dt, &mut o);
        assert!((o[0] - (3.0 * x * x - 2.0)).norm() < 1e-12);
    }

    #[test]
    fn matrix_file_roundtrip() {
        let m = DMatrix::from_fn(3, 2, |r, k| C64::new(r as f64, k as f64 - 0.5));
        let p = std::env::temp_dir().join("kdv_nf_matrix_test.bin");
        write_matrix(&p, &m).unwrap();
        let back = read_matrix(&p).unwrap();
        assert_eq!(m, back);
        std::fs::remove_file(p).ok();
    }

    #[test]
    fn pairing_is_skew() {
        let m = 16;
        let u: Vec<C64> = (0..m).map(|i| C64::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let v: Vec<C64> = (0..m).map(|i| C64::new((i as f64 * 1.7).cos(), 0.2)).collect();
        assert!((pair_dx_inv(&u, &v) + pair_dx_inv(&v, &u)).norm() < 1e-14);
    }
}
