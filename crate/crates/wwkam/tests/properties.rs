//! Algebraic invariants checked on random inputs.

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use proptest::prelude::*;

use wwkam::algebraic::{fixed_to_f64, frequency_sum, SqrtRational};
use wwkam::bnf::{full_bnf, homological_defect, solve_homological};
use wwkam::divisors::{delta, delta_exact};
use wwkam::hamiltonian::{quadratic_dispersion, zakharov_h3, HamPolynomial, Mode, Monomial};
use wwkam::resonance::{classify, ResonanceTuple};
use wwkam::spectrum::TangentialSet;

fn q(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn sqrt_rational() -> impl Strategy<Value = SqrtRational> {
    prop::collection::vec((1u64..200, -30i64..=30, 1i64..=9), 0..6).prop_map(|ts| {
        let mut x = SqrtRational::zero();
        for (n, a, b) in ts {
            x.add_scaled_sqrt(n, &q(a, b));
        }
        x
    })
}

fn monomial() -> impl Strategy<Value = Monomial> {
    prop::collection::vec((-3i32..=3, any::<bool>()), 1..=3).prop_map(|ms| {
        Monomial::new(
            ms.into_iter()
                .map(|(j, s)| Mode::new(if j == 0 { 1 } else { j }, if s { 1 } else { -1 })),
        )
    })
}

fn polynomial() -> impl Strategy<Value = HamPolynomial> {
    prop::collection::vec((monomial(), -2.0f64..2.0, -2.0f64..2.0), 1..5)
        .prop_map(|ts| HamPolynomial::from_terms(ts.into_iter().map(|(m, a, b)| (m, Complex64::new(a, b)))))
}

/// `p + conj(p)`, a real-valued polynomial.
fn real_polynomial() -> impl Strategy<Value = HamPolynomial> {
    polynomial().prop_map(|p| {
        let c = HamPolynomial::from_terms(p.terms().map(|(m, c)| (m.conj(), c.conj())));
        p.add(&c)
    })
}

fn max_diff(a: &HamPolynomial, b: &HamPolynomial) -> f64 {
    a.sub(b).terms().fold(0.0, |m, (_, c)| m.max(c.norm()))
}

fn signed_wavenumber() -> impl Strategy<Value = (i64, i8)> {
    (prop_oneof![-60i64..=-1, 1i64..=60], any::<bool>()).prop_map(|(j, s)| (j, if s { 1 } else { -1 }))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn sqrt_rational_is_an_abelian_group(x in sqrt_rational(), y in sqrt_rational(), z in sqrt_rational()) {
        prop_assert_eq!(&x + &y, &y + &x);
        prop_assert_eq!(&(&x + &y) + &z, &x + &(&y + &z));
        prop_assert!((&x - &x).is_zero());
        prop_assert_eq!(&(&x - &y) + &y, x);
    }

    #[test]
    fn scaling_distributes(x in sqrt_rational(), y in sqrt_rational(), a in -20i64..=20, b in 1i64..=7) {
        let c = q(a, b);
        prop_assert_eq!((&x + &y).scale(&c), &x.scale(&c) + &y.scale(&c));
    }

    #[test]
    fn perfect_squares_fold_into_coefficients(n in 1u64..300, s in 1u64..20, a in -9i64..=9) {
        let mut x = SqrtRational::zero();
        x.add_scaled_sqrt(n * s * s, &q(a, 1));
        let mut y = SqrtRational::zero();
        y.add_scaled_sqrt(n, &q(a * s as i64, 1));
        prop_assert_eq!(x, y);
    }

    #[test]
    fn float_and_fixed_point_agree(x in sqrt_rational()) {
        let f = x.to_f64();
        let g = fixed_to_f64(&x.to_fixed(256), 256);
        let scale: f64 = x.terms().map(|(n, c)| num_traits::ToPrimitive::to_f64(c).unwrap().abs() * (n as f64).sqrt()).sum();
        prop_assert!((f - g).abs() <= 1e-13 * scale.max(1.0), "{} vs {}", f, g);
        if f.abs() > 1e-9 * scale.max(1.0) {
            prop_assert_eq!(x.signum(), if f > 0.0 { 1 } else { -1 });
        }
        prop_assert_eq!(x.signum() == 0, x.is_zero());
    }

    #[test]
    fn bracket_is_antisymmetric(f in polynomial(), g in polynomial()) {
        let a = f.bracket(&g);
        let b = g.bracket(&f).scale(Complex64::new(-1.0, 0.0));
        prop_assert!(max_diff(&a, &b) <= 1e-12);
    }

    #[test]
    fn bracket_satisfies_jacobi(f in polynomial(), g in polynomial(), h in polynomial()) {
        let s = f.bracket(&g.bracket(&h))
            .add(&g.bracket(&h.bracket(&f)))
            .add(&h.bracket(&f.bracket(&g)));
        prop_assert!(s.terms().all(|(_, c)| c.norm() <= 1e-10), "{:?}", s.max_abs());
    }

    #[test]
    fn bracket_of_real_hamiltonians_is_real(f in real_polynomial(), g in real_polynomial()) {
        prop_assert!(f.bracket(&g).reality_defect() <= 1e-12);
    }

    #[test]
    fn classification_ignores_order_and_global_sign(
        pairs in prop::collection::vec(signed_wavenumber(), 3..=6),
        rot in 0usize..6,
    ) {
        let t = ResonanceTuple::new(pairs.clone());
        let mut p = pairs.clone();
        let n = p.len();
        p.rotate_left(rot % n);
        p.reverse();
        let t2 = ResonanceTuple::new(p);
        prop_assert_eq!(classify(&t), classify(&t2));
        prop_assert_eq!(classify(&t), classify(&t.flipped()));
    }

    #[test]
    fn frequency_sum_is_additive(a in prop::collection::vec(signed_wavenumber(), 1..5), b in prop::collection::vec(signed_wavenumber(), 1..5)) {
        let mut ab = a.clone();
        ab.extend(&b);
        prop_assert_eq!(frequency_sum(&ab), &frequency_sum(&a) + &frequency_sum(&b));
    }

    #[test]
    fn divisor_is_antisymmetric(
        l1 in -3i64..=3, l2 in -3i64..=3,
        j in -200i64..=200, s in any::<bool>(), sp in any::<bool>(),
    ) {
        prop_assume!(j != 0);
        let sites = TangentialSet::new(&[2, 3]).unwrap();
        let v = sites.velocity();
        let k = j + v[0] * l1 + v[1] * l2;
        prop_assume!(k != 0);
        let (s, sp) = (if s { 1i8 } else { -1 }, if sp { 1i8 } else { -1 });
        let d = delta_exact(&sites, &[l1, l2], s, j, sp, k);
        // negating every sign
        prop_assert_eq!(&d, &-&delta_exact(&sites, &[-l1, -l2], -s, j, -sp, k));
        // exchanging the roles of j and k
        prop_assert_eq!(&d, &-&delta_exact(&sites, &[-l1, -l2], sp, k, s, j));
        let r = delta(&sites, 6, &[l1, l2], s, j, sp, k).unwrap();
        prop_assert!((r.value - d.to_f64()).abs() <= 1e-12 * (1.0 + d.to_f64().abs()));
        prop_assert!(r.constraint_ok);
    }
}

#[test]
fn homological_solution_removes_cubic_terms() {
    let h3 = zakharov_h3(6);
    let f3 = solve_homological(&h3);
    assert!(homological_defect(&h3, &f3, 6) <= 1e-12);
    assert!(f3.is_momentum_conserving());
    // {H2, F3} = H3 on the support of H3
    let b = quadratic_dispersion(6).bracket(&f3);
    assert!(max_diff(&b, &h3) <= 1e-12 * h3.max_abs());
}

#[test]
fn normal_form_is_real_and_conserves_momentum() {
    for k in [4, 6, 9] {
        let fb = full_bnf(k).unwrap();
        assert!(fb.normal_form.is_momentum_conserving());
        assert!(fb.normal_form.is_real_valued(1e-12), "K={k}");
        assert!(fb.f4.is_momentum_conserving());
        assert!(fb.normal_form.terms().all(|(m, _)| m.is_resonant()));
    }
}
