use kdv_core::asympt::loglog_slope;
use kdv_core::fourier;
use kdv_core::nfmap::{self, NormalFormMap, OneGapChart, SeqState, Solver, TruncConfig};
use kdv_core::potential::lame_one_gap;
use num_complex::Complex64 as C64;
use std::f64::consts::PI;
use std::sync::OnceLock;

const THETA: f64 = 0.3;

fn chart() -> &'static OneGapChart {
    static CHART: OnceLock<OneGapChart> = OnceLock::new();
    CHART.get_or_init(|| kdv_core::verify::lame_chart(32).unwrap())
}

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

fn point(radius: f64, seed: u64) -> SeqState {
    chart().base_state().add(&nfmap::random_perp(32, radius, true, seed))
}

fn scaled(z: &SeqState, s: f64) -> SeqState {
    let base = chart().base_state();
    base.add(&z.sub(&base).scale(c(s)))
}

/// Σ u_n v_{−n} over the layout.
fn pairing(u: &SeqState, v: &SeqState) -> C64 {
    (1..=u.n_max as i64).map(|n| u.get(n) * v.get(-n) + u.get(-n) * v.get(n)).sum()
}

#[test]
fn action_modulus_roundtrip() {
    for k in [0.2, 0.5, 0.8, 0.9] {
        let i = nfmap::lame_action(k).unwrap();
        assert!((nfmap::modulus_for_action(i).unwrap() - k).abs() < 1e-8);
    }
}

#[test]
fn chart_base_point_is_translated_lame() {
    let ch = chart();
    let nf = NormalFormMap::new(ch);
    let u = nf.psi_l(&ch.base_state()).unwrap();
    let q = lame_one_gap(ch.modulus).unwrap().0.translate(-THETA / (2.0 * PI));
    let m = u.len();
    for n in -12i64..=12 {
        assert!((u[fourier::index(n, m)] - q.coeff(n)).norm() < 1e-9, "mode {n}");
    }
    let zs = ch.z_s();
    assert!((zs[0] * zs[1] / (2.0 * PI) - ch.i1).norm() < 1e-14);
}

#[test]
fn psi1_columns_approach_fourier_basis() {
    let ch = chart();
    let p = ch.eval(ch.z_s(), false).unwrap();
    let perp = ch.config().layout().perp();
    let m = p.w[0].len();
    let mut ns = Vec::new();
    let mut dev = Vec::new();
    for (k, &n) in perp.iter().enumerate() {
        if n > 2 && n <= 16 {
            let e: f64 = (0..m).map(|j| (p.w[k][j] - if j == fourier::index(n, m) { c(1.0) } else { c(0.0) }).norm_sqr()).sum();
            ns.push(n);
            dev.push(e.sqrt() * n as f64);
        }
    }
    assert!(loglog_slope(&dev, &ns) <= 0.1, "{dev:?}");
}

#[test]
fn transpose_identity_and_a1_sign_relation() {
    let r = nfmap::psi1_transpose_identity(chart()).unwrap();
    assert!(r.residual < 1e-8, "{}", r.residual);
    assert!(r.a1_relation < 1e-3, "{}", r.a1_relation);
}

#[test]
fn l_vanishes_on_s_and_is_skew() {
    let ch = chart();
    let nf = NormalFormMap::new(ch);
    assert!(nf.l_matrix(&ch.base_state()).unwrap().norm() < 1e-12);
    let z = point(0.05, 3);
    let l = nf.l_matrix(&z).unwrap();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(9);
    let a = nfmap::random_tangent(32, 32, &mut rng);
    let b = nfmap::random_tangent(32, 32, &mut rng);
    let la = SeqState::from_vector(32, &(&l * a.vector()));
    let lb = SeqState::from_vector(32, &(&l * b.vector()));
    let (x, y) = (pairing(&la, &b), pairing(&a, &lb));
    assert!((x + y).norm() < 1e-6 * x.norm().max(1e-12), "{x} vs {y}");
}

#[test]
fn error_term_is_quadratic_and_reversible() {
    let nf = NormalFormMap::new(chart());
    let z = point(0.02, 5);
    let e1 = nf.e_vector(&z).unwrap();
    let e2 = nf.e_vector(&scaled(&z, 2.0)).unwrap();
    let ratio = e2.norm(0.0) / e1.norm(0.0);
    assert!((ratio / 4.0 - 1.0).abs() < 1e-2, "{ratio}");
    let er = nf.e_vector(&z.s_rev()).unwrap();
    let want = e1.s_rev().scale(c(-1.0));
    assert!(er.dist(&want) < 1e-6 * e1.norm(0.0).max(1e-12) + 1e-12);
}

#[test]
fn vector_field_solvers_agree_and_scale_quadratically() {
    let nf = NormalFormMap::new(chart());
    let z = point(0.02, 7);
    let (xn, sn) = nf.x_field_with(0.5, &z, Solver::Neumann).unwrap();
    let (xd, _) = nf.x_field_with(0.5, &z, Solver::Dense).unwrap();
    assert_eq!(sn, Solver::Neumann);
    assert!(xn.dist(&xd) < 1e-12 * xn.norm(0.0).max(1e-300));
    let x2 = nf.x_field(0.5, &scaled(&z, 2.0)).unwrap();
    let ratio = x2.norm(0.0) / xn.norm(0.0);
    assert!((ratio / 4.0 - 1.0).abs() < 0.1, "{ratio}");
}

#[test]
fn corrector_fixes_s_and_is_reversible() {
    let ch = chart();
    let nf = NormalFormMap::new(ch);
    let base = ch.base_state();
    assert!(nf.corrector(&base).unwrap().dist(&base) < 1e-10);
    let z = point(0.02, 11);
    let w = nf.corrector(&z).unwrap();
    assert!(w.is_real(1e-10));
    assert!(nf.flow(1.0, 0.0, &w).unwrap().dist(&z) < 1e-8);
    let d1 = w.dist(&z);
    let d2 = nf.corrector(&scaled(&z, 2.0)).unwrap().dist(&scaled(&z, 2.0));
    assert!((d2 / d1 / 4.0 - 1.0).abs() < 0.1, "{}", d2 / d1);
    let rev = nf.corrector(&z.s_rev()).unwrap();
    assert!(rev.dist(&w.s_rev()) < 1e-10, "{}", rev.dist(&w.s_rev()));
}

#[test]
fn corrected_map_is_symplectic() {
    let nf = NormalFormMap::new(chart());
    let z = point(0.05, 13);
    let raw = nfmap::symplectic_residual(&nf, &z, 8, 3, 1, false).unwrap();
    let fixed = nfmap::symplectic_residual(&nf, &z, 8, 3, 1, true).unwrap();
    assert!(fixed < 1e-4 && fixed < 1e-3 * raw, "{raw} -> {fixed}");
}

#[test]
fn flow_derivative_transpose_formula() {
    let nf = NormalFormMap::new(chart());
    let (_, r) = nfmap::dflow_transpose(&nf, 0.7, &point(0.02, 17)).unwrap();
    assert!(r.formula_vs_direct < 1e-6 * r.scale, "{} vs {}", r.formula_vs_direct, r.scale);
}

#[test]
fn frequencies_of_small_chart_are_free() {
    let i = nfmap::lame_action(0.01).unwrap();
    let ch = nfmap::finite_gap_chart(&TruncConfig::new(8), THETA, i).unwrap();
    for n in 2..=8 {
        let w = (2.0 * PI * n as f64).powi(2);
        assert!((ch.big_omega[n - 1] / w - 1.0).abs() < 1e-4, "n {n}: {}", ch.big_omega[n - 1]);
    }
}

#[test]
fn matrices_survive_the_binary_format() {
    let nf = NormalFormMap::new(chart());
    let l = nf.l_matrix(&point(0.05, 19)).unwrap();
    let path = std::env::temp_dir().join(format!("kdvnf-l-{}.bin", std::process::id()));
    nfmap::write_matrix(&path, &l).unwrap();
    let back = nfmap::read_matrix(&path).unwrap();
    std::fs::remove_file(&path).unwrap();
    assert_eq!(back, l);
    let bytes = {
        nfmap::write_matrix(&path, &l).unwrap();
        let b = std::fs::read(&path).unwrap();
        std::fs::remove_file(&path).unwrap();
        b
    };
    assert_eq!(&bytes[..8], nfmap::MATRIX_MAGIC);
    assert_eq!(bytes.len(), 16 + 16 * l.nrows() * l.ncols());
}
