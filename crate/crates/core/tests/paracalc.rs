use kdv_core::paracalc::{self as pc, Cutoff};
use nalgebra::DVector;
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn embed(a: &[C64], m: usize) -> Vec<C64> {
    let ma = (a.len() - 1) / 2;
    let mut out = vec![C64::new(0.0, 0.0); 2 * m + 1];
    for n in -(ma as i64)..=(ma as i64) {
        out[(n + m as i64) as usize] = a[(n + ma as i64) as usize];
    }
    out
}

#[test]
fn dx_inverse_of_first_mode() {
    let m = 4;
    let d = pc::dx_inv_matrix(m, 1);
    let mut e = DVector::from_element(2 * m + 1, C64::new(0.0, 0.0));
    e[m + 1] = C64::new(1.0, 0.0);
    let v = d * e;
    for (i, x) in v.iter().enumerate() {
        let want = if i == m + 1 { C64::new(0.0, 2.0 * PI).inv() } else { C64::new(0.0, 0.0) };
        assert!((x - want).norm() < 1e-15);
    }
}

#[test]
fn cutoff_eta_derivative_decays() {
    let chi = Cutoff::default();
    let mut worst: f64 = 0.0;
    for i in -400..=400 {
        let eta = i as f64 * 0.5;
        for j in -40..=40 {
            let theta = j as f64 * 0.25 * (1.0 + eta.abs());
            worst = worst.max(chi.chi_d_eta(theta, eta).abs() * (1.0 + eta.abs()));
        }
    }
    assert!(worst < 50.0, "{worst}");
    assert!(pc::make_cutoff(0.3, 0.2).is_err());
}

#[test]
fn paraproduct_norm_is_linear_in_c1_norm() {
    let chi = Cutoff::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ratios = Vec::new();
    for band in [4usize, 8, 16] {
        for amp in [0.1, 1.0, 10.0] {
            let a: Vec<C64> = pc::random_function(32, band, 1.5, &mut rng).iter().map(|v| v * amp).collect();
            let t = pc::paraproduct_matrix(&chi, &a);
            ratios.push(pc::operator_norm(&t, 1.0, 1.0) / pc::sobolev_norm(&a, 1.0));
        }
    }
    let hi = ratios.iter().cloned().fold(0.0, f64::max);
    assert!(hi < 3.0, "{ratios:?}");
}

#[test]
fn bony_remainder_smoothing_is_stable_in_band() {
    let chi = Cutoff::default();
    let r: Vec<f64> = [16usize, 32, 64].iter().map(|&b| pc::bony_smoothing_ratio(&chi, b, 1.0, 1.0, 100, 8)).collect();
    for w in r.windows(2) {
        assert!(w[1] <= 1.5 * w[0], "{r:?}");
    }
}

#[test]
fn bony_identity_is_exact() {
    let chi = Cutoff::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let a = pc::random_function(48, 24, 1.0, &mut rng);
        let b = pc::random_function(48, 24, 1.0, &mut rng);
        let s = pc::bony_split(&chi, &a, &b);
        assert!(!s.overflow);
        assert!(s.identity_residual() < 1e-14 * pc::sobolev_norm(&s.ab, 0.0));
    }
}

#[test]
fn transpose_gain_is_bounded_by_symbol_norm() {
    let chi = Cutoff::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a8 = pc::random_function(8, 8, 3.0, &mut rng);
    let t64 = pc::transpose_smoothing(&chi, &embed(&a8, 64), 0.0, 2.0);
    let t128 = pc::transpose_smoothing(&chi, &embed(&a8, 128), 0.0, 2.0);
    assert!(t128 <= 1.5 * t64, "{t64} -> {t128}");
    let mut worst: f64 = 0.0;
    for _ in 0..6 {
        let a = pc::random_function(8, 8, 3.0, &mut rng);
        worst = worst.max(pc::transpose_smoothing(&chi, &embed(&a, 32), 0.0, 2.0) / pc::sobolev_norm(&a, 2.0));
    }
    assert!(worst < 5.0, "{worst}");
}

#[test]
fn composition_constants_are_binomials() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = pc::random_function(8, 8, 3.0, &mut rng);
    for k in 0..=2 {
        for j in 0..=2 {
            let r = pc::psido_compose_expand(&a, k, j, 3.max(k + j), &[8], 0.0).unwrap();
            for row in r.constants.iter().filter(|c| c.i <= 3) {
                let want = pc::candidate_constant(k, j, row.i);
                assert!((row.c - want).abs() < 1e-8, "k {k} j {j} i {}: {} vs {want}", row.i, row.c);
            }
        }
    }
}

#[test]
fn composition_remainders_stay_bounded_as_truncation_doubles() {
    let chi = Cutoff::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = pc::random_function(8, 8, 3.0, &mut rng);
    let ps = pc::psido_compose_expand(&a, 1, 1, 3, &[64, 128], 0.0).unwrap();
    let pa = pc::para_compose_expand(&chi, &a, 1, 1, 3, &[64, 128], 0.0).unwrap();
    for r in [&ps, &pa] {
        let (x, y) = (r.remainder_norms[0].1, r.remainder_norms[1].1);
        assert!(y <= 1.5 * x.max(1e-14), "{:?}", r.remainder_norms);
    }
}

#[test]
fn product_interpolation_constant() {
    for s in [1.0, 2.0, 3.0] {
        let a = pc::interpolation_ratio(s, 16, 20, 6);
        let b = pc::interpolation_ratio(s, 32, 20, 6);
        assert!(a < 1.0 && b <= 1.5 * a, "s {s}: {a} -> {b}");
    }
}
