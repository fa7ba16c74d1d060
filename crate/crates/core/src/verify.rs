//! The acceptance suite: fourteen numbered checks, each reduced to a
//! pass/fail flag, a one-line detail and named metrics.

use crate::asympt::{self, is_bounded, loglog_slope, max_min_ratio, Scalar, DEFAULT_N_SET};
use crate::error::Result;
use crate::floquet::{self, Floquet};
use crate::hill::{spectral_table_with, Hill};
use crate::nfmap::{self, NormalFormMap, OneGapChart, TruncConfig};
use crate::paracalc::{self, Cutoff};
use crate::potential::{lame_one_gap, Potential};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::f64::consts::PI;
use std::time::Instant;

#[derive(Debug, Clone, Serialize)]
pub struct Criterion {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub metrics: Vec<(String, f64)>,
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct VerifyOptions {
    pub quick: bool,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { quick: false, seed: 20240611 }
    }
}

pub const NAMES: [&str; 14] = [
    "free closed forms",
    "Wronskian",
    "one-gap generator",
    "normalized pair",
    "f and W remainders",
    "scalar expansions",
    "reversibility",
    "two-smoothing of L_perp^S",
    "symplectic corrector",
    "quadratic normal form",
    "operator identity",
    "frequency vs dH/dI",
    "paracalc",
    "parametrix",
];

/// Criteria run by `--quick`: closed forms and cheap one-gap checks.
pub const QUICK: [u32; 6] = [1, 2, 3, 4, 7, 13];

/// Base angle and radius of the nfmap checks.
pub const CHART_THETA: f64 = 0.3;
pub const PERP_RADIUS: f64 = 0.05;

struct Outcome {
    passed: bool,
    detail: String,
    metrics: Vec<(String, f64)>,
}

fn outcome(passed: bool, detail: String, metrics: Vec<(&str, f64)>) -> Outcome {
    Outcome { passed, detail, metrics: metrics.into_iter().map(|(k, v)| (k.to_string(), v)).collect() }
}

/// Shared state: the lame(0.5) chart at n_max = 32 is built once.
pub struct Suite {
    opts: VerifyOptions,
    chart32: Option<Result<OneGapChart>>,
    chart_secs: f64,
}

impl Suite {
    pub fn new(opts: VerifyOptions) -> Self {
        Suite { opts, chart32: None, chart_secs: 0.0 }
    }

    fn chart(&mut self) -> Result<&OneGapChart> {
        if self.chart32.is_none() {
            let t = Instant::now();
            self.chart32 = Some(lame_chart(32));
            self.chart_secs = t.elapsed().as_secs_f64();
        }
        self.chart32.as_ref().unwrap().as_ref().map_err(|e| e.clone())
    }

    pub fn run(&mut self, id: u32) -> Criterion {
        let t = Instant::now();
        let res = match id {
            1 => c1_free(),
            2 => c2_wronskian(self.opts.seed),
            3 => c3_generator(),
            4 => c4_normalization(),
            5 => c5_remainders(),
            6 => c6_scalars(),
            7 => c7_reversibility(),
            8 => self.c8_smoothing(),
            9 => self.c9_corrector(),
            10 => self.c10_normal_form(),
            11 => self.c11_identity(),
            12 => c12_frequency(),
            13 => c13_paracalc(self.opts.seed),
            14 => self.c14_parametrix(),
            _ => Ok(outcome(false, format!("unknown criterion {id}"), vec![])),
        };
        let (passed, detail, metrics) = match res {
            Ok(o) => (o.passed, o.detail, o.metrics),
            Err(e) => (false, format!("error: {e}"), vec![]),
        };
        Criterion { id, name: NAMES[(id as usize).saturating_sub(1).min(13)].to_string(), passed, detail, metrics, seconds: t.elapsed().as_secs_f64() }
    }

    pub fn ids(&self) -> Vec<u32> {
        if self.opts.quick {
            QUICK.to_vec()
        } else {
            (1..=14).collect()
        }
    }

    fn c8_smoothing(&mut self) -> Result<Outcome> {
        let seed = self.opts.seed;
        let chart = self.chart()?;
        let nf = NormalFormMap::new(chart);
        let z = chart.base_state().add(&nfmap::random_perp(32, PERP_RADIUS, true, seed));
        let (_, slope) = nfmap::l_perp_s_decay(&nf, &z)?;
        Ok(outcome(slope <= -1.7, format!("row-norm slope {slope:.3} (need <= -1.7)"), vec![("slope", slope)]))
    }

    fn c9_corrector(&mut self) -> Result<Outcome> {
        let seed = self.opts.seed;
        let t = Instant::now();
        let chart_secs = {
            self.chart()?;
            self.chart_secs
        };
        let chart = self.chart()?;
        let nf = NormalFormMap::new(chart);
        let base = chart.base_state();
        let fixed = nf.corrector(&base)?.dist(&base);
        let z = base.add(&nfmap::random_perp(32, PERP_RADIUS, true, seed));
        let w = nf.corrector(&z)?;
        let inv = nf.flow(1.0, 0.0, &w)?.dist(&z);
        let r32 = nfmap::symplectic_residual(&nf, &z, 16, 4, seed, true)?;
        let secs32 = chart_secs + t.elapsed().as_secs_f64();
        let chart64 = lame_chart(64)?;
        let nf64 = NormalFormMap::new(&chart64);
        let mut z64 = chart64.base_state();
        for n in 2..=32i64 {
            z64.set(n, z.get(n));
            z64.set(-n, z.get(-n));
        }
        let r64 = nfmap::symplectic_residual(&nf64, &z64, 32, 4, seed, true)?;
        let ok = fixed <= 1e-10 && inv <= 1e-8 && r32 < 1e-4 && r64 <= 0.5 * r32 && secs32 < 300.0;
        Ok(outcome(
            ok,
            format!("fixed {fixed:.1e}, inverse {inv:.1e}, residual n_max=32 {r32:.2e}, n_max=64 {r64:.2e} (need halving){}", if secs32 < 300.0 { "" } else { ", over the 5 min budget" }),
            vec![("fixed_point", fixed), ("inverse", inv), ("residual_32", r32), ("residual_64", r64)],
        ))
    }

    fn c10_normal_form(&mut self) -> Result<Outcome> {
        let seed = self.opts.seed;
        let chart = self.chart()?;
        let nf = NormalFormMap::new(chart);
        let r = nfmap::hamiltonian_normal_form_check(&nf, seed)?;
        let q = r.quad_rel.max(r.offdiag_rel);
        let ok = q <= 5e-3 && (r.cubic_exponent - 3.0).abs() <= 0.2;
        Ok(outcome(
            ok,
            format!("quadratic form rel {q:.2e} (need <= 5e-3), cubic exponent {:.3} (need 3 +- 0.2)", r.cubic_exponent),
            vec![("quad_rel", r.quad_rel), ("offdiag_rel", r.offdiag_rel), ("cubic_exponent", r.cubic_exponent)],
        ))
    }

    fn c11_identity(&mut self) -> Result<Outcome> {
        let chart = self.chart()?;
        let (lhs, rhs) = nfmap::operator_identity(chart)?;
        let rel = (&lhs - &rhs).norm() / lhs.norm();
        Ok(outcome(rel < 1e-3, format!("relative residual {rel:.2e} (need < 1e-3)"), vec![("relative", rel)]))
    }

    fn c14_parametrix(&mut self) -> Result<Outcome> {
        let seed = self.opts.seed;
        let chart = self.chart()?;
        let nf = NormalFormMap::new(chart);
        let dir = nfmap::random_perp(32, 1.0, true, seed);
        let z1 = chart.base_state().add(&dir.scale(C64::new(PERP_RADIUS, 0.0)));
        let z2 = chart.base_state().add(&dir.scale(C64::new(2.0 * PERP_RADIUS, 0.0)));
        let p1 = nfmap::parametrix_coeffs(&nf, &z1)?;
        let p2 = nfmap::parametrix_coeffs(&nf, &z2)?;
        let ratio = p2.a1_norm / p1.a1_norm;
        let slope = p1.remainder_slope;
        let ok = (ratio / 4.0 - 1.0).abs() <= 0.1 && slope <= -1.7;
        Ok(outcome(
            ok,
            format!("a1 scaling ratio {ratio:.4} (need 4 +- 10%), remainder slope {slope:.2} (need <= -1.7)"),
            vec![("a1_ratio", ratio), ("remainder_slope", slope)],
        ))
    }
}

pub fn run_all(opts: VerifyOptions) -> Vec<Criterion> {
    let mut s = Suite::new(opts);
    s.ids().into_iter().map(|id| s.run(id)).collect()
}

pub fn lame_chart(n_max: usize) -> Result<OneGapChart> {
    let i1 = nfmap::lame_action(0.5)?;
    nfmap::finite_gap_chart(&TruncConfig::new(n_max), CHART_THETA, i1)
}

/// Translated lame(0.5): one gap, not even, so βₙ ≠ 0.
pub fn generic_one_gap() -> Result<Potential> {
    Ok(lame_one_gap(0.5)?.0.translate(0.1))
}

fn c1_free() -> Result<Outcome> {
    let q = Potential::zero();
    let h = Hill::new(&q);
    let mut delta_err: f64 = 0.0;
    let top = (12.0 * PI).powi(2);
    for i in 0..200 {
        let lam = top * i as f64 / 199.0;
        let e = h.entries(C64::new(lam, 0.0))?;
        delta_err = delta_err.max((e.delta_tr - 2.0 * lam.sqrt().cos()).norm());
    }
    let t = spectral_table_with(&h, 12)?;
    let mut eig_err: f64 = 0.0;
    for n in 1..=12 {
        let r = t.row(n);
        let want = (n as f64 * PI).powi(2);
        for v in [r.lam_minus, r.lam_plus, r.mu, r.nu] {
            eig_err = eig_err.max((v - want).abs() / want);
        }
    }
    let fl = floquet::floquet(&h, &t)?;
    let (mut a_err, mut f_err, mut w_err, mut fac_err, mut om_err): (f64, f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let grid = 64;
    for n in 1..=12usize {
        let npi = n as f64 * PI;
        let c = fl.coefficient(n)?;
        a_err = a_err.max((c.a_plus - C64::new(0.0, npi)).norm()).max((c.a_minus + C64::new(0.0, npi)).norm());
        let d = fl.data(n, grid)?;
        for k in 0..=grid {
            let x = k as f64 / grid as f64;
            f_err = f_err.max((d.f_plus[k] - C64::from_polar(1.0, npi * x)).norm());
            f_err = f_err.max((d.f_minus[k] - C64::from_polar(1.0, -npi * x)).norm());
            if k < grid {
                w_err = w_err.max((d.w_plus[k] - C64::from_polar(1.0, 2.0 * npi * x)).norm());
                w_err = w_err.max((d.w_minus[k] - C64::from_polar(1.0, -2.0 * npi * x)).norm());
            }
        }
        fac_err = fac_err.max((d.xi - 1.0).abs()).max(d.beta.abs()).max((d.d - 1.0).abs());
        let (w, _) = fl.frequency(n)?;
        om_err = om_err.max((w - (2.0 * npi).powi(3)).abs() / (2.0 * npi).powi(3));
    }
    let ok = delta_err < 1e-9 && eig_err < 1e-8 && a_err < 1e-8 && f_err < 1e-8 && w_err < 1e-8 && fac_err < 1e-8 && om_err < 1e-6;
    Ok(outcome(
        ok,
        format!("Delta {delta_err:.1e}, eigenvalues {eig_err:.1e}, a {a_err:.1e}, f {f_err:.1e}, W {w_err:.1e}, xi/beta/d {fac_err:.1e}, omega {om_err:.1e}"),
        vec![("delta", delta_err), ("eigen", eig_err), ("a", a_err), ("f", f_err), ("w", w_err), ("factors", fac_err), ("omega", om_err)],
    ))
}

/// Random real trigonometric potential with `band` modes of size ≤ amp.
pub fn random_trig(rng: &mut ChaCha8Rng, band: usize, amp: f64) -> Potential {
    let entries: Vec<(i64, C64)> =
        (1..=band as i64).map(|n| (n, C64::new(rng.gen_range(-amp..amp), rng.gen_range(-amp..amp)))).collect();
    Potential::from_trig(&entries).expect("hermitian by construction")
}

fn c2_wronskian(seed: u64) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let q = random_trig(&mut rng, 4, 3.0);
        let h = Hill::new(&q);
        for _ in 0..20 {
            let lam = C64::new(rng.gen_range(-50.0..2000.0), rng.gen_range(-20.0..20.0));
            let p = h.solve(lam, 0, 16)?;
            for k in 0..p.y1.len() {
                let w = p.y1[k] * p.dy2[k] - p.dy1[k] * p.y2[k];
                worst = worst.max((w - 1.0).norm());
            }
        }
    }
    Ok(outcome(worst < 1e-9, format!("max |W - 1| = {worst:.2e} (need < 1e-9)"), vec![("wronskian", worst)]))
}

fn c3_generator() -> Result<Outcome> {
    let (q, _) = lame_one_gap(0.5)?;
    let t = spectral_table_with(&Hill::new(&q), 8)?;
    let g1 = t.gamma(1);
    let worst = (2..=8).map(|n| t.gamma(n) / (n * n) as f64).fold(0.0, f64::max);
    Ok(outcome(g1 > 1e-2 && worst < 1e-6, format!("gamma_1 {g1:.4}, max gamma_n/n^2 {worst:.1e}"), vec![("gamma1", g1), ("closed", worst)]))
}

fn c4_normalization() -> Result<Outcome> {
    let (q, _) = lame_one_gap(0.5)?;
    let h = Hill::new(&q);
    let t = spectral_table_with(&h, 21)?;
    let fl = floquet::floquet(&h, &t)?;
    let mut worst: f64 = 0.0;
    for n in 2..=20 {
        let grid = 256;
        let d = fl.data(n, grid)?;
        let m = |f: &dyn Fn(usize) -> f64| (0..grid).map(f).sum::<f64>() / grid as f64;
        let hh = m(&|k| d.h[k] * d.h[k]);
        let gg = m(&|k| d.g[k] * d.g[k]);
        let hg = m(&|k| d.h[k] * d.g[k]);
        worst = worst.max((hh - 1.0).abs()).max((gg - 1.0).abs()).max(hg.abs());
    }
    Ok(outcome(worst < 1e-6, format!("max normalization residual {worst:.2e} (need < 1e-6)"), vec![("residual", worst)]))
}

fn lame_floquet_run<T>(pot: &Potential, n_max: usize, f: impl FnOnce(&Floquet) -> Result<T>) -> Result<T> {
    let h = Hill::new(pot);
    let t = spectral_table_with(&h, n_max)?;
    let fl = floquet::floquet(&h, &t)?;
    f(&fl)
}

fn c5_remainders() -> Result<Outcome> {
    let (q, _) = lame_one_gap(0.5)?;
    lame_floquet_run(&q, 48, |fl| {
        let mut ok = true;
        let mut parts = Vec::new();
        let mut metrics = Vec::new();
        for nn in [1usize, 2] {
            let f = asympt::floquet_expansion(fl, nn, &DEFAULT_N_SET)?;
            let w = asympt::w_expansion(fl, nn, &DEFAULT_N_SET)?;
            for (label, r) in [("f", &f), ("W", &w)] {
                ok &= r.bounded();
                parts.push(format!("{label} N={nn}: slope {:.3} ratio {:.2}", r.decay_slope, r.ratio));
                metrics.push((format!("{label}{nn}_slope"), r.decay_slope));
                metrics.push((format!("{label}{nn}_ratio"), r.ratio));
            }
        }
        Ok(Outcome { passed: ok, detail: parts.join("; "), metrics })
    })
}

/// The six scaled scalar sequences over n_set on the generic one-gap potential.
pub fn scaled_scalars(fl: &Floquet, n_set: &[i64]) -> Result<Vec<(&'static str, Vec<f64>)>> {
    let a0 = asympt::scalar_expansions(fl, Scalar::A, 1, n_set)?.coeffs[0][0];
    let mut out = Vec::new();
    for (label, which, power) in [
        ("n^2 (tau - n^2 pi^2)", Scalar::Tau, 2),
        ("n (a - i pi n - a0)", Scalar::A, 1),
        ("n^2 (xi - 1)", Scalar::Xi, 2),
        ("n^2 (d - 1)", Scalar::D, 2),
        ("n beta", Scalar::Beta, 1),
        ("2 pi n (omega - (2 pi n)^3)", Scalar::Omega, 1),
    ] {
        let mut v = Vec::new();
        for &n in n_set {
            let raw = asympt::scalar_value(fl, which, n as usize)?;
            let raw = if which == Scalar::A { raw - a0 } else { raw };
            let scale = if which == Scalar::Omega { 2.0 * PI * n as f64 } else { (n as f64).powi(power) };
            v.push(raw.norm() * scale);
        }
        out.push((label, v));
    }
    Ok(out)
}

fn c6_scalars() -> Result<Outcome> {
    let q = generic_one_gap()?;
    lame_floquet_run(&q, 48, |fl| {
        let seqs = scaled_scalars(fl, &DEFAULT_N_SET)?;
        let mut ok = true;
        let mut parts = Vec::new();
        let mut metrics = Vec::new();
        for (label, v) in &seqs {
            let b = is_bounded(v, &DEFAULT_N_SET);
            ok &= b;
            let slope = loglog_slope(v, &DEFAULT_N_SET);
            let ratio = max_min_ratio(v);
            parts.push(format!("{label}: slope {slope:.2} ratio {ratio:.2}{}", if b { "" } else { " FAIL" }));
            metrics.push((format!("{label} slope"), slope));
            metrics.push((format!("{label} ratio"), ratio));
        }
        Ok(Outcome { passed: ok, detail: parts.join("; "), metrics })
    })
}

fn c7_reversibility() -> Result<Outcome> {
    let q = generic_one_gap()?;
    let r = q.reverse();
    let (hq, hr) = (Hill::new(&q), Hill::new(&r));
    let (tq, tr) = (spectral_table_with(&hq, 12)?, spectral_table_with(&hr, 12)?);
    let mut spec: f64 = (tq.lam0 - tr.lam0).abs();
    for n in 1..=12 {
        let (a, b) = (tq.row(n), tr.row(n));
        spec = spec.max((a.lam_minus - b.lam_minus).abs() / a.lam_minus.abs().max(1.0));
        spec = spec.max((a.lam_plus - b.lam_plus).abs() / a.lam_plus.abs().max(1.0));
    }
    let (fq, fr) = (floquet::floquet(&hq, &tq)?, floquet::floquet(&hr, &tr)?);
    let grid = 128;
    let (mut f_err, mut b_err): (f64, f64) = (0.0, 0.0);
    for n in 2..=10usize {
        let (dq, dr) = (fq.data(n, grid)?, fr.data(n, grid)?);
        let sg = if n % 2 == 0 { 1.0 } else { -1.0 };
        // f(−x) = (−1)ⁿ f(1 − x) at a closed gap
        for k in 0..=grid {
            f_err = f_err.max((dr.f_plus[k] - sg * dq.f_minus[grid - k]).norm());
        }
        b_err = b_err.max((dr.beta + dq.beta).abs());
    }
    let (iq, ir) = (fq.action(1)?, fr.action(1)?);
    let i_err = (iq - ir).abs();
    let ok = spec < 1e-9 && f_err < 1e-7 && b_err < 1e-6 && i_err < 1e-8;
    Ok(outcome(
        ok,
        format!("spectra {spec:.1e}, f {f_err:.1e}, beta {b_err:.1e}, I_1 {i_err:.1e}"),
        vec![("spectra", spec), ("f", f_err), ("beta", b_err), ("action", i_err)],
    ))
}

/// ω₁ and the central difference of H^kdv against I₁ along the Lamé family.
pub fn frequency_vs_hamiltonian(k: f64, h: f64) -> Result<(f64, f64)> {
    let point = |k: f64| -> Result<(f64, f64)> {
        let (q, _) = lame_one_gap(k)?;
        Ok((q.hamiltonian(), nfmap::lame_action(k)?))
    };
    let (hp, ip) = point(k + h)?;
    let (hm, im) = point(k - h)?;
    let (q, _) = lame_one_gap(k)?;
    let w = lame_floquet_run(&q, 2, |fl| Ok(fl.frequency(1)?.0))?;
    Ok((w, (hp - hm) / (ip - im)))
}

fn c12_frequency() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    let mut metrics = Vec::new();
    for k in [0.3, 0.5, 0.7] {
        let (w, fd) = frequency_vs_hamiltonian(k, 1e-3)?;
        let rel = (w - fd).abs() / fd.abs();
        worst = worst.max(rel);
        metrics.push((format!("k={k}"), rel));
    }
    Ok(Outcome { passed: worst < 1e-3, detail: format!("max relative difference {worst:.2e} (need < 1e-3)"), metrics })
}

fn embed(a: &[C64], m: usize) -> Vec<C64> {
    let ma = (a.len() - 1) / 2;
    let mut out = vec![C64::new(0.0, 0.0); 2 * m + 1];
    for n in -(ma.min(m) as i64)..=(ma.min(m) as i64) {
        out[(n + m as i64) as usize] = a[(n + ma as i64) as usize];
    }
    out
}

fn c13_paracalc(seed: u64) -> Result<Outcome> {
    let chi = Cutoff::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bony: f64 = 0.0;
    for _ in 0..20 {
        let a = paracalc::random_function(64, 32, 1.0, &mut rng);
        let b = paracalc::random_function(64, 32, 1.0, &mut rng);
        let s = paracalc::bony_split(&chi, &a, &b);
        let scale = s.ab.iter().map(|v| v.norm()).fold(0.0, f64::max);
        bony = bony.max(s.identity_residual() / scale);
    }
    let sm = [paracalc::bony_smoothing_ratio(&chi, 32, 1.0, 1.0, 30, seed), paracalc::bony_smoothing_ratio(&chi, 64, 1.0, 1.0, 30, seed)];
    let a8 = paracalc::random_function(8, 8, 3.0, &mut rng);
    let tr = [paracalc::transpose_smoothing(&chi, &embed(&a8, 64), 0.0, 2.0), paracalc::transpose_smoothing(&chi, &embed(&a8, 128), 0.0, 2.0)];
    let ps = paracalc::psido_compose_expand(&a8, 1, 1, 3, &[64, 128], 0.0)?;
    let pa = paracalc::para_compose_expand(&chi, &a8, 1, 1, 3, &[64, 128], 0.0)?;
    let growth = |v: &[(usize, f64)]| if v[0].1 == 0.0 { 1.0 } else { v[1].1 / v[0].1 };
    let grow = [sm[1] / sm[0], tr[1] / tr[0], growth(&ps.remainder_norms), growth(&pa.remainder_norms)];
    let mut fit: f64 = 0.0;
    let mut refit = false;
    for k in 0..=2 {
        for j in 0..=2 {
            let r = paracalc::psido_compose_expand(&a8, k, j, 3.max(k + j), &[8], 0.0)?;
            refit |= r.refit;
            for c in r.constants.iter().filter(|c| c.i <= 3) {
                fit = fit.max(c.fit_residual);
            }
        }
    }
    let worst_growth = grow.iter().cloned().fold(0.0, f64::max);
    let ok = bony < 1e-14 && worst_growth <= 1.5 && fit <= 1e-8 && !refit;
    Ok(outcome(
        ok,
        format!("Bony identity {bony:.1e}, max growth under doubling {worst_growth:.3} (need <= 1.5), constant fit {fit:.1e} (need <= 1e-8)"),
        vec![
            ("bony", bony),
            ("bony_smoothing_growth", grow[0]),
            ("transpose_growth", grow[1]),
            ("psido_remainder_growth", grow[2]),
            ("para_remainder_growth", grow[3]),
            ("constant_fit", fit),
        ],
    ))
}

pub fn format_line(c: &Criterion) -> String {
    format!("[{}] {:>2} {:<28} {}", if c.passed { "PASS" } else { "FAIL" }, c.id, c.name, c.detail)
}
