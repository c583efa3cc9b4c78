use fwspde_core::models::{leray_project_vector, ns_trilinear};
use fwspde_core::skeleton::{cutoff, ControlPath, TimeGrid};
use fwspde_core::spectral::{BasisSpec, SpectralBasis, SpectralField};
use fwspde_core::stats::wilson_ci;
use num_complex::Complex64;
use proptest::prelude::*;

fn coeffs(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-3.0f64..3.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn cutoff_is_a_bounded_lipschitz_retraction(a in coeffs(6), b in coeffs(6), r in 0.0f64..4.0) {
        let basis = SpectralBasis::new(BasisSpec::interval(6, 2.0)).unwrap();
        let x = SpectralField::new(basis.clone(), a).unwrap();
        let y = SpectralField::new(basis, b).unwrap();
        let (tx, ty) = (cutoff(&x, r).unwrap(), cutoff(&y, r).unwrap());
        prop_assert!(tx.l2_norm() <= r * (1.0 + 1e-12));
        prop_assert!(tx.distance(&ty).unwrap() <= 3.0 * x.distance(&y).unwrap() + 1e-12);
        if x.l2_norm() <= r {
            prop_assert_eq!(&tx, &x);
        }
    }

    #[test]
    fn control_energy_is_trapezoid(vals in proptest::collection::vec(coeffs(3), 11)) {
        let grid = TimeGrid::new(0.7, 10).unwrap();
        let u = ControlPath::new(grid, vals.clone()).unwrap();
        let sq: Vec<f64> = vals.iter().map(|v| 0.5 * v.iter().map(|c| c * c).sum::<f64>()).collect();
        let trap = 0.07 * (sq.iter().sum::<f64>() - 0.5 * (sq[0] + sq[10]));
        prop_assert!((u.energy() - trap).abs() <= 1e-12 * trap.max(1.0));
    }

    #[test]
    fn wilson_interval_is_valid(n in 1u64..5000, frac in 0.0f64..=1.0) {
        let hits = ((n as f64) * frac).floor() as u64;
        let (lo, hi) = wilson_ci(hits, n).unwrap();
        let p = hits as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
    }

    #[test]
    fn trilinear_antisymmetry(a in coeffs(24), b in coeffs(24), c in coeffs(24)) {
        let basis = SpectralBasis::new(BasisSpec::torus(2)).unwrap();
        let u = SpectralField::new(basis.clone(), a).unwrap();
        let v = SpectralField::new(basis.clone(), b).unwrap();
        let w = SpectralField::new(basis, c).unwrap();
        let scale = u.l2_norm() * v.l2_norm() * w.l2_norm();
        prop_assert!(ns_trilinear(&u, &v, &v).unwrap().abs() <= 1e-9 * scale.max(1.0));
        let s = ns_trilinear(&u, &v, &w).unwrap() + ns_trilinear(&u, &w, &v).unwrap();
        prop_assert!(s.abs() <= 1e-9 * scale.max(1.0));
    }

    #[test]
    fn leray_is_an_idempotent_divergence_free_projection(
        k0 in -6i32..=6, k1 in -6i32..=6, re in coeffs(2), im in coeffs(2)
    ) {
        prop_assume!(k0 != 0 || k1 != 0);
        let c = [Complex64::new(re[0], im[0]), Complex64::new(re[1], im[1])];
        let p = leray_project_vector([k0, k1], c);
        let pp = leray_project_vector([k0, k1], p);
        for j in 0..2 {
            prop_assert!((p[j] - pp[j]).norm() <= 1e-12);
        }
        let div = p[0] * k0 as f64 + p[1] * k1 as f64;
        prop_assert!(div.norm() <= 1e-12);
    }
}
