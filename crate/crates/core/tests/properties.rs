use kdv_core::asympt::loglog_slope;
use kdv_core::hill::{spectral_table, Hill};
use kdv_core::nfmap::SeqState;
use kdv_core::paracalc::{self as pc, Cutoff};
use kdv_core::potential::Potential;
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn potential(max_modes: usize, amp: f64) -> impl Strategy<Value = Potential> {
    prop::collection::vec((-amp..amp, -amp..amp), 1..=max_modes)
        .prop_map(|v| Potential::from_positive(v.into_iter().map(|(a, b)| C64::new(a, b)).collect()))
}

fn close(p: &Potential, q: &Potential, tol: f64) -> bool {
    let n = p.n_pot().max(q.n_pot()) as i64;
    (-n..=n).all(|k| (p.coeff(k) - q.coeff(k)).norm() <= tol)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn json_roundtrip(q in potential(6, 3.0)) {
        let back = Potential::from_json(&q.to_json()).unwrap();
        prop_assert!(close(&q, &back, 0.0));
    }

    #[test]
    fn reverse_and_translate_algebra(q in potential(5, 2.0), s in -1.0f64..1.0, t in -1.0f64..1.0, x in 0.0f64..1.0) {
        prop_assert!(close(&q.reverse().reverse(), &q, 1e-15));
        prop_assert!(close(&q.translate(s).translate(t), &q.translate(s + t), 1e-12));
        prop_assert!(close(&q.translate(1.0), &q, 1e-12));
        prop_assert!((q.reverse().eval(x) - q.eval(-x)).abs() < 1e-12);
        prop_assert!((q.translate(s).eval(x) - q.eval(x + s)).abs() < 1e-11);
        prop_assert!((q.translate(s).hamiltonian() - q.hamiltonian()).abs() < 1e-9 * (1.0 + q.hamiltonian().abs()));
    }

    #[test]
    fn bony_identity(seed in any::<u64>(), band in 1usize..24) {
        let chi = Cutoff::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = pc::random_function(32, band, 1.0, &mut rng);
        let b = pc::random_function(32, band, 1.0, &mut rng);
        let s = pc::bony_split(&chi, &a, &b);
        prop_assert!(s.identity_residual() <= 1e-14 * (1.0 + pc::sobolev_norm(&s.ab, 0.0)));
    }

    #[test]
    fn sequence_reversal_is_an_involution(v in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 8)) {
        let z = SeqState { n_max: 4, z: v.into_iter().map(|(a, b)| C64::new(a, b)).collect() };
        let r = z.s_rev();
        prop_assert_eq!(&r.s_rev().z, &z.z);
        for n in 1..=4i64 {
            prop_assert_eq!(r.get(n), z.get(-n));
        }
        prop_assert!((r.norm(1.0) - z.norm(1.0)).abs() < 1e-14);
    }

    #[test]
    fn loglog_slope_of_power(p in -4.0f64..4.0, c in 0.1f64..10.0) {
        let n = [4i64, 8, 16, 32, 64];
        let v: Vec<f64> = n.iter().map(|&k| c * (k as f64).powf(p)).collect();
        prop_assert!((loglog_slope(&v, &n) - p).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn wronskian_is_one(q in potential(3, 4.0), re in -50.0f64..400.0, im in -20.0f64..20.0) {
        let f = Hill::new(&q).solve(C64::new(re, im), 0, 0).unwrap();
        let [y1, dy1, y2, dy2] = f.end;
        prop_assert!((y1 * dy2 - y2 * dy1 - 1.0).norm() < 1e-9, "{}", y1 * dy2 - y2 * dy1);
    }

    #[test]
    fn spectrum_is_invariant_under_translation_and_reversal(q in potential(2, 1.5), s in 0.0f64..1.0) {
        let t = spectral_table(&q, 5).unwrap();
        for other in [q.translate(s), q.reverse()] {
            let u = spectral_table(&other, 5).unwrap();
            prop_assert!((t.lam0 - u.lam0).abs() < 1e-8);
            for (a, b) in t.rows.iter().zip(&u.rows) {
                prop_assert!((a.lam_minus - b.lam_minus).abs() < 1e-8 * (1.0 + a.lam_minus.abs()));
                prop_assert!((a.lam_plus - b.lam_plus).abs() < 1e-8 * (1.0 + a.lam_plus.abs()));
            }
        }
    }
}
