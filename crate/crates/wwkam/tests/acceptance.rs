//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --release --test acceptance`. The process exits with a
//! nonzero status when any criterion fails.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use wwkam::algebraic::{frequency_sum, SqrtRational};
use wwkam::bnf::{full_bnf, tangential_quartic_closed_form, weak_bnf};
use wwkam::divisors::{divisor_stability, fit_slope, measure_estimate, Cutoffs, IndexDomain, MelnikovKind};
use wwkam::dynamics::{
    floquet_spectrum, integrate, measured_frequencies, rhs_bnf_into, ApproxSolution, FloquetOptions, SpectralState,
    VectorField,
};
use wwkam::hamiltonian::{build_zakharov, quadratic_dispersion, Monomial};
use wwkam::resonance::{benjamin_feir, is_generic};
use wwkam::spectrum::{twist_check, twist_matrix, TangentialSet};

type Check = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn sites(s: &[i64]) -> TangentialSet {
    TangentialSet::new(s).expect("valid tangential set")
}

/// Action coefficients of the quartic Hamiltonian summed over all wavenumbers:
/// the diagonal term, the `±k` pair and the cross terms, which change sign
/// between same-sign and opposite-sign pairs.
fn action_oracle(p: i32, q: i32) -> f64 {
    let (a, b) = (p.unsigned_abs() as f64, q.unsigned_abs() as f64);
    if p == q {
        return a * a * a / (4.0 * PI);
    }
    if p == -q {
        return -a * a * a / PI;
    }
    let v = a.max(b) * a.min(b) * a.min(b) / PI;
    if (p > 0) == (q > 0) {
        v
    } else {
        -v
    }
}

fn c1_null_condition() -> Outcome {
    let k = 12;
    let start = Instant::now();
    let fb = full_bnf(k).expect("full normal form");
    let elapsed = start.elapsed().as_secs_f64();
    let nf = &fb.normal_form;
    let mut scale: f64 = 0.0;
    let mut action_err: f64 = 0.0;
    let mut spec_literal_err: f64 = 0.0;
    for p in 1..=k {
        for q in -k..=k {
            if q == 0 || (q > 0 && q < p) {
                continue;
            }
            let want = action_oracle(p, q);
            let got = nf.coeff(&Monomial::actions(&[p, q]));
            scale = scale.max(want.abs());
            action_err = action_err.max((got - want).norm() / want.abs());
            if q == -p {
                let literal = -(p as f64).powi(3) / (2.0 * PI);
                spec_literal_err = spec_literal_err.max((got.re - literal).abs() / literal.abs());
            }
        }
    }
    let mut bf = 0usize;
    let mut bf_max: f64 = 0.0;
    for t in benjamin_feir(-(k as i64)..=k as i64, 1..=k as i64) {
        if t.pairs.iter().any(|p| p.0.abs() > k as i64) {
            continue;
        }
        let pairs: Vec<(i32, i8)> = t.pairs.iter().map(|&(j, s)| (j as i32, s)).collect();
        let m = Monomial::from_pairs(&pairs);
        bf += 1;
        bf_max = bf_max.max(nf.coeff(&m).norm()).max(nf.coeff(&m.conj()).norm());
    }
    let mut other: f64 = 0.0;
    for (m, c) in nf.terms() {
        if !m.is_trivial() {
            other = other.max(c.norm());
        }
    }
    let ratio = bf_max / scale;
    let pass = bf > 0 && ratio <= 1e-9 && other / scale <= 1e-9 && action_err <= 1e-9 && elapsed <= 300.0;
    outcome(
        pass,
        format!(
            "K={k}: {bf} Benjamin-Feir quadruples, max ratio {ratio:.2e}; all non-trivial kernel terms {:.2e}; action rel err {action_err:.2e}; \
             [info] the −|k|³/(2π) reading of the ±k term is off by {spec_literal_err:.2} relative; {elapsed:.1}s",
            other / scale
        ),
    )
}

fn c2_weak_bnf() -> Outcome {
    let sets: [&[i64]; 6] = [&[2, 3], &[1, 3, 7], &[3, 5], &[2, -3], &[1, 4, -6], &[-2, -5, -7]];
    let mut pass = true;
    let mut parts = Vec::new();
    for s in sets {
        let ts = sites(s);
        assert!(is_generic(&ts, 4).generic, "{s:?} is generic");
        let k = (2 * ts.max_abs()) as i32;
        let w = weak_bnf(k, &ts).expect("weak normal form");
        let expected = tangential_quartic_closed_form(&ts);
        // closed form written out once more, independently of the library
        let mut closed = 0usize;
        let mut worst: f64 = 0.0;
        for (a, &ka) in s.iter().enumerate() {
            for &kb in &s[a..] {
                let want = if ka == kb {
                    (ka.abs() as f64).powi(3) / (4.0 * PI)
                } else if ka.signum() == kb.signum() {
                    let (big, small) = (ka.abs().max(kb.abs()) as f64, ka.abs().min(kb.abs()) as f64);
                    big * small * small / PI
                } else {
                    0.0
                };
                let m = Monomial::actions(&[ka as i32, kb as i32]);
                assert!((expected.coeff(&m).re - want).abs() <= 1e-15 * want.abs().max(1.0));
                let got = w.tangential.coeff(&m);
                let scale = expected.max_abs();
                worst = worst.max((got - want).norm() / scale);
                if want != 0.0 {
                    closed += 1;
                }
            }
        }
        for (m, c) in w.tangential.terms() {
            if expected.coeff(m).norm() == 0.0 && !m.is_trivial() {
                worst = worst.max(c.norm() / expected.max_abs());
            }
        }
        let ok = worst <= 1e-9;
        pass &= ok;
        parts.push(format!("{s:?}: {closed} terms, rel err {worst:.2e}{}", if ok { "" } else { " (FAIL)" }));
    }
    outcome(pass, parts.join("; "))
}

fn c3_approx_constant() -> Outcome {
    let c = wwkam::bnf::approx_constant(10).expect("approximate constant");
    let worst = c.residual.iter().cloned().fold(0.0, f64::max);
    outcome(
        worst <= 1e-9,
        format!("K=10 residual by degree 2,3,4: {:.2e}, {:.2e}, {:.2e}", c.residual[0], c.residual[1], c.residual[2]),
    )
}

fn random_generic_set(rng: &mut ChaCha20Rng) -> TangentialSet {
    loop {
        let nu = rng.gen_range(2..=4);
        let mut s: Vec<i64> = Vec::new();
        while s.len() < nu {
            let j = rng.gen_range(1..=30) * if rng.gen_bool(0.5) { 1 } else { -1 };
            if !s.iter().any(|&x| x.abs() == j.abs()) {
                s.push(j);
            }
        }
        let Ok(ts) = TangentialSet::new(&s) else { continue };
        if is_generic(&ts, 8).generic {
            return ts;
        }
    }
}

fn c4_twist() -> Outcome {
    let start = Instant::now();
    // genericity screening is part of generating the sets, so it is timed too
    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    let mut min_det = f64::INFINITY;
    let mut min_scaled = f64::INFINITY;
    let mut min_hadamard = f64::INFINITY;
    let mut mismatched = 0;
    let mut pass = true;
    for _ in 0..100 {
        let ts = random_generic_set(&mut rng);
        let t = twist_matrix(&ts);
        let c = twist_check(&ts);
        // oracle: Hessian of the closed-form quartic in the actions
        let q = tangential_quartic_closed_form(&ts);
        let s = ts.sites();
        let nu = s.len();
        let hess = DMatrix::from_fn(nu, nu, |i, k| {
            let m = Monomial::actions(&[s[i] as i32, s[k] as i32]);
            let c = q.coeff(&m).re;
            if i == k {
                2.0 * c
            } else {
                c
            }
        });
        let det_oracle = (hess.scale(4.0 * PI)).determinant();
        let det: f64 = t.int_cert.parse::<f64>().unwrap();
        if (det - det_oracle).abs() > 1e-9 * det.abs().max(1.0) {
            mismatched += 1;
        }
        min_det = min_det.min(det.abs());
        min_scaled = min_scaled.min(c.det_a_minus_v_scaled);
        min_hadamard = min_hadamard.min(c.det_a_minus_v_hadamard);
        let exact_nonzero = c.pi_poly.iter().any(|p| p != "0");
        pass &= det.abs() >= 1.0 && exact_nonzero && c.det_a_minus_v_scaled > 1e-8;
    }
    let elapsed = start.elapsed().as_secs_f64();
    pass &= mismatched == 0 && elapsed <= 60.0;
    outcome(
        pass,
        format!(
            "100 sets: min |det 4πA| = {min_det:.3e}, min |det 4πλ⁻³(A−V)| = {min_scaled:.3e} (λ = max|S|); \
             [info] min Hadamard ratio {min_hadamard:.3e}; {mismatched} oracle mismatches; {elapsed:.1}s"
        ),
    )
}

fn c5_divisors() -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for s in [&[2i64, 3][..], &[1, 5], &[2, -7]] {
        let ts = sites(s);
        let (a, b, change) = divisor_stability(&ts, 1, 10_000, IndexDomain::Nonzero);
        let ok = a.min > 0.0 && b.min > 0.0 && change < 0.01 && a.anti_star_min >= 2.0 / 9.0 - 1e-12;
        pass &= ok;
        parts.push(format!(
            "{s:?}: min {:.4e} -> {:.4e} (change {:.2e}), σ=−σ′ branch {:.4}, shadow gap {:.1e}",
            a.min, b.min, change, a.anti_star_min, a.shadow_gap
        ));
    }
    let elapsed = start.elapsed().as_secs_f64();
    pass &= elapsed <= 120.0;
    parts.push(format!("{elapsed:.1}s"));
    outcome(pass, parts.join("; "))
}

fn c6_measure() -> Outcome {
    let start = Instant::now();
    let ts = sites(&[2, 3]);
    let a = 0.2;
    let cut = Cutoffs {
        l_max: 50,
        ..Cutoffs::default()
    };
    let t = measure_estimate(&ts, a, MelnikovKind::G0, &cut, &[0.1, 0.07, 0.05, 0.035], 100_000, 7, 8, None)
        .expect("measure estimate");
    let elapsed = start.elapsed().as_secs_f64();
    let fr: Vec<String> = t.rows.iter().map(|r| format!("{}:{:.3e}", r.eps, r.fraction)).collect();
    let slope_ok = t.slope.is_some_and(|s| (s - a).abs() <= 0.3 * a);
    let pass = t.monotone && slope_ok && elapsed <= 600.0;
    outcome(
        pass,
        format!(
            "fractions {}; monotone {}; slope {:?} vs {a}; {elapsed:.1}s",
            fr.join(", "),
            t.monotone,
            t.slope
        ),
    )
}

fn random_state(rng: &mut ChaCha20Rng, k: i32, amp: f64) -> Vec<Complex64> {
    (0..2 * k as usize)
        .map(|_| {
            let r = amp * rng.gen_range(0.0..1.0f64);
            let t = rng.gen_range(0.0..2.0 * PI);
            Complex64::from_polar(r, t)
        })
        .collect()
}

fn c7_rhs_oracle() -> Outcome {
    let k = 8;
    let h = quadratic_dispersion(k).add(&full_bnf(k).expect("normal form").normal_form);
    let field = VectorField::new(&h, k).expect("vector field");
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    let n = 2 * k as usize;
    for i in 0..1000 {
        let amp = [1e-2, 0.1, 1.0][i % 3];
        let z = random_state(&mut rng, k, amp);
        let mut a = vec![Complex64::new(0.0, 0.0); n];
        let mut b = vec![Complex64::new(0.0, 0.0); n];
        rhs_bnf_into(k, &z, &mut a);
        field.eval(&z, &mut b);
        let scale = b.iter().fold(0.0f64, |m, c| m.max(c.norm()));
        let dev = a.iter().zip(&b).fold(0.0f64, |m, (x, y)| m.max((x - y).norm()));
        worst = worst.max(dev / scale);
    }
    outcome(worst <= 1e-9, format!("1000 states at K=8: max relative deviation {worst:.2e}"))
}

fn c8_actions() -> Outcome {
    let k = 8;
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let z = random_state(&mut rng, k, 0.1);
        let tr = integrate(|y, o| rhs_bnf_into(k, y, o), &z, k, 100.0, 1e-10, 50).expect("integration");
        let a0 = SpectralState { cutoff: k, z, t: 0.0 }.actions();
        for st in &tr.states {
            let a = SpectralState {
                cutoff: k,
                z: st.clone(),
                t: 0.0,
            }
            .actions();
            for (x, y) in a0.iter().zip(&a) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    outcome(worst <= 1e-7, format!("10 states, T=100, tol 1e-10: max action drift {worst:.2e}"))
}

fn c9_frequency_shift() -> Outcome {
    let ts = sites(&[2, 3]);
    let zeta = [1.0, 1.0];
    let eps = 0.05;
    let k = 8;
    let approx = ApproxSolution::new(&ts, &zeta, eps).expect("torus");
    let y0 = approx.state(k, &[0.0, 0.0]);
    let tr = integrate(|y, o| rhs_bnf_into(k, y, o), &y0.z, k, 200.0, 1e-11, 4000).expect("integration");
    let fits = measured_frequencies(&tr, &[2, 3]);
    // oracle: ω̄ + ε²𝔸ζ with 𝔸 the Hessian of the closed-form quartic
    let q = tangential_quartic_closed_form(&ts);
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, f) in fits.iter().enumerate() {
        let s = ts.sites();
        let mut shift = 0.0;
        for (k2, &sk) in s.iter().enumerate() {
            let c = q.coeff(&Monomial::actions(&[s[i] as i32, sk as i32])).re;
            shift += if k2 == i { 2.0 * c } else { c } * zeta[k2];
        }
        let want = (s[i].abs() as f64).sqrt() + eps * eps * shift;
        let err = (f.frequency - want).abs();
        let tol = 10.0 * eps.powi(4) + 3.0 * f.stderr;
        pass &= err <= tol;
        parts.push(format!("j={}: measured {:.10}, predicted {:.10}, |diff| {err:.2e} ≤ {tol:.2e}", s[i], f.frequency, want));
    }
    outcome(pass, parts.join("; "))
}

fn c10_floquet() -> Outcome {
    let start = Instant::now();
    let ts = sites(&[2, 3]);
    let h = build_zakharov(10, 4).expect("Hamiltonian");
    let opts = FloquetOptions::new(3, 10, &ts);
    let eps = [0.02, 0.04, 0.08];
    let mut d = Vec::new();
    let mut d0 = Vec::new();
    for &e in &eps {
        let a = ApproxSolution::new(&ts, &[1.0, 1.0], e).expect("torus");
        let r = floquet_spectrum(&h, &a, &opts).expect("Floquet spectrum");
        d.push(r.max_distance);
        d0.push(r.max_distance_uncorrected);
    }
    let x: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let slope = fit_slope(&x, &d.iter().map(|v| v.ln()).collect::<Vec<_>>()).unwrap_or(f64::NAN);
    let slope0 = fit_slope(&x, &d0.iter().map(|v| v.ln()).collect::<Vec<_>>()).unwrap_or(f64::NAN);
    let elapsed = start.elapsed().as_secs_f64();
    let pass = (slope - 3.0).abs() <= 0.5 && elapsed <= 900.0;
    outcome(
        pass,
        format!(
            "distances {:.3e}, {:.3e}, {:.3e}: slope {slope:.2} (target 3 ± 0.5); without the ε² correction slope {slope0:.2}; {elapsed:.1}s",
            d[0], d[1], d[2]
        ),
    )
}

/// `⌊2^256 Σ q √n⌋` up to one unit per term, computed by clearing denominators first.
fn oracle_fixed(x: &SqrtRational) -> (BigInt, usize) {
    let terms: Vec<(u64, BigRational)> = x.terms().map(|(n, q)| (n, q.clone())).collect();
    let mut den = BigInt::from(1);
    for (_, q) in &terms {
        den = num_integer::Integer::lcm(&den, q.denom());
    }
    let mut acc = BigInt::zero();
    for (n, q) in &terms {
        let c = q.numer() * (&den / q.denom());
        // |c|√n = √(c² n)
        let r = ((&c * &c * BigInt::from(*n)) << 512u32).sqrt();
        acc += if c.is_negative() { -r } else { r };
    }
    (acc / den, terms.len())
}

fn c11_exact_arithmetic() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let mut false_zero = 0;
    let mut missed_zero = 0;
    let mut sign_err = 0;
    let mut float_err = 0;
    let mut zeros = 0;
    let mut checked = 0;
    let mut check = |x: &SqrtRational, expect_zero: Option<bool>| {
        let (fixed, len) = oracle_fixed(x);
        let slack = BigInt::from(len as u64 + 2);
        let oracle_zero = fixed.abs() <= slack;
        let exact_zero = x.is_zero();
        if exact_zero && !oracle_zero {
            false_zero += 1;
        }
        if oracle_zero && !exact_zero {
            missed_zero += 1;
        }
        if expect_zero.is_some_and(|z| z != exact_zero) {
            if exact_zero {
                false_zero += 1;
            } else {
                missed_zero += 1;
            }
        }
        if !oracle_zero {
            let s = if fixed.is_negative() { -1 } else { 1 };
            if s != x.signum() {
                sign_err += 1;
            }
        }
        let v = (fixed.clone() >> 192u32).to_f64().unwrap() / 2f64.powi(64);
        let scale = x.terms().map(|(n, q)| q.abs().to_f64().unwrap() * (n as f64).sqrt()).sum::<f64>().max(1.0);
        if (x.to_f64() - v).abs() > 1e-12 * scale {
            float_err += 1;
        }
        zeros += usize::from(exact_zero);
        checked += 1;
    };
    let q = |n: i64, d: i64| BigRational::new(BigInt::from(n), BigInt::from(d));
    for i in 0..10_000 {
        let len = rng.gen_range(1..=6);
        let mut x = SqrtRational::zero();
        let mut y = SqrtRational::zero();
        for _ in 0..len {
            let n = rng.gen_range(1..=400u64);
            let c = q(rng.gen_range(-20..=20), rng.gen_range(1..=12));
            x.add_scaled_sqrt(n, &c);
            // same value spelled as √(n s²)/s
            let s = rng.gen_range(1..=9i64);
            y.add_scaled_sqrt(n * (s * s) as u64, &(c / q(s, 1)));
        }
        match i % 4 {
            0 => check(&(&x - &y), Some(true)),
            1 => check(&x, None),
            2 => {
                // near cancellation: √a + √b − √c − √d with no exact relation forced
                let pairs = [
                    (rng.gen_range(1..=500i64), 1i8),
                    (rng.gen_range(1..=500), 1),
                    (rng.gen_range(1..=500), -1),
                    (rng.gen_range(1..=500), -1),
                ];
                check(&frequency_sum(&pairs), None)
            }
            _ => check(&(&(&x + &y) - &x.scale(&q(2, 1))), Some(true)),
        }
    }
    let mut bf = 0;
    for t in benjamin_feir(-100..=100, 1..=10) {
        // first entry is −λb²
        if t.pairs[0].0.abs() > 100 {
            continue;
        }
        bf += 1;
        check(&frequency_sum(&t.pairs), Some(true));
        let mut off = t.pairs.clone();
        off[0].0 -= 1;
        if off[0].0 != 0 {
            check(&frequency_sum(&off), Some(false));
        }
    }
    let pass = false_zero == 0 && missed_zero == 0 && sign_err == 0 && float_err == 0 && bf > 0;
    outcome(
        pass,
        format!(
            "{checked} expressions ({zeros} zero, {bf} BF quadruples with λb² ≤ 100): false zeros {false_zero}, missed zeros {missed_zero}, \
             sign errors {sign_err}, f64 disagreements {float_err}"
        ),
    )
}

fn main() {
    let criteria: [Check; 11] = [
        ("null condition of the quartic normal form", c1_null_condition),
        ("weak normal form on tangential sites", c2_weak_bnf),
        ("approximate constant of motion", c3_approx_constant),
        ("twist certificates", c4_twist),
        ("divisor lower bounds", c5_divisors),
        ("measure scaling", c6_measure),
        ("normal-form vector field oracle", c7_rhs_oracle),
        ("action conservation", c8_actions),
        ("frequency shift", c9_frequency_shift),
        ("Floquet corrections", c10_floquet),
        ("exact arithmetic soundness", c11_exact_arithmetic),
    ];
    let filter: Option<usize> = std::env::args().nth(1).and_then(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if filter.is_some_and(|n| n != i + 1) {
            continue;
        }
        let o = f();
        println!("{} criterion {:>2} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{failed} criteria failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
