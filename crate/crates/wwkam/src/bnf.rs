//! Homological equation and the Birkhoff normal forms at degree four.
//!
//! Generators solve `{H^(2), F} = Π_Rg B`. Since `{H^(2), m} = −i𝓡(m)·m` for a
//! monomial `m` with frequency sum `𝓡(m)`, the coefficient of `F` on `m` is
//! `i c_m / 𝓡(m)`. Under the Lie series `H ∘ Φ_F = H + {F,H} + ½{F,{F,H}}`
//! the cubic part cancels and the quartic part becomes `H^(4) + ½{F₃, H^(3)}`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamiltonian::{
    diagonal_quadratic, quadratic_dispersion, zakharov_h3, zakharov_h4, HamPolynomial, Monomial, Projection,
};
use crate::resonance::is_generic;
use crate::spectrum::{kappa, TangentialSet};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Relative tolerance for cancellation claims in double precision.
pub const CANCEL_TOL: f64 = 1e-9;

/// Solves `{H^(2), F} = Π_Rg B`; kernel monomials are left out.
pub fn solve_homological(b: &HamPolynomial) -> HamPolynomial {
    let mut f = HamPolynomial::zero();
    for (m, c) in b.terms() {
        if m.is_resonant() {
            continue;
        }
        f.add_term(m.clone(), I * c / m.frequency_f64());
    }
    f
}

/// Largest coefficient of `{H^(2), F} − Π_Rg B` relative to `max|B|`.
pub fn homological_defect(b: &HamPolynomial, f: &HamPolynomial, cutoff: i32) -> f64 {
    let h2 = quadratic_dispersion(cutoff);
    let lhs = h2.bracket(f);
    let rg = b.project_free(Projection::RgH2);
    lhs.sub(&rg).max_abs() / b.max_abs().max(f64::MIN_POSITIVE)
}

/// Expected coefficient of the full normal form on a trivial quartic monomial.
///
/// Returns `None` for monomials that are not trivial quartics.
pub fn expected_action_coefficient(m: &Monomial) -> Option<f64> {
    if m.degree() != 4 || !m.is_trivial() {
        return None;
    }
    let mut js: Vec<i32> = m.modes().iter().filter(|x| x.s > 0).map(|x| x.j).collect();
    js.sort_unstable();
    let (p, q) = (js[0], js[1]);
    let (ap, aq) = (p.abs() as f64, q.abs() as f64);
    Some(if p == q {
        ap.powi(3) / (4.0 * PI)
    } else if p == -q {
        -ap.powi(3) / PI
    } else {
        let (big, small) = if ap > aq { (ap, aq) } else { (aq, ap) };
        let same = p.signum() == q.signum();
        let v = big * small * small / PI;
        if same {
            v
        } else {
            -v
        }
    })
}

/// Output of a normal-form run.
#[derive(Clone, Debug, Serialize)]
pub struct BnfReport {
    pub mode: String,
    pub cutoff: i32,
    pub sites: Option<Vec<i64>>,
    pub input_hash: String,
    pub f3_terms: usize,
    pub f3_hash: String,
    pub f4_terms: usize,
    pub f4_hash: String,
    /// Largest degree-3 coefficient left after the step, relative to `max|H^(3)|`.
    pub cubic_remainder: f64,
    /// Largest coefficient per class of kernel monomials.
    pub class_max: BTreeMap<String, f64>,
    /// Worst relative deviation of action terms from the closed form.
    pub action_rel_err: f64,
    /// Largest non-trivial kernel coefficient relative to the largest action term.
    pub null_condition_ratio: f64,
    pub tolerance: f64,
    /// Monomials violating the tolerance, rendered as text.
    pub offending: Vec<(String, f64)>,
    pub degenerate: bool,
}

/// Quartic full normal form together with its generators.
pub struct FullBnf {
    pub cutoff: i32,
    pub h3: HamPolynomial,
    pub f3: HamPolynomial,
    pub h4: HamPolynomial,
    /// `H^(4) + ½{F₃, H^(3)}` on `|j| <= cutoff`.
    pub quartic: HamPolynomial,
    /// `Π_Ker(quartic)`.
    pub normal_form: HamPolynomial,
    pub f4: HamPolynomial,
}

/// Cubic terms are built on `|j| <= 2K` so the contracted mode of every bracket
/// feeding a quartic monomial on `|j| <= K` is present.
pub fn full_bnf(cutoff: i32) -> Result<FullBnf> {
    if cutoff < 1 {
        return Err(Error::Domain(format!("cutoff must be positive, got {cutoff}")));
    }
    let h3 = zakharov_h3(2 * cutoff);
    let f3 = solve_homological(&h3);
    let h4 = zakharov_h4(cutoff);
    let half = f3.bracket_trunc(&h3, 4).scale(Complex64::new(0.5, 0.0));
    let quartic = h4.add(&half.restrict_cutoff(cutoff));
    let normal_form = quartic.project_free(Projection::KerH2);
    let f4 = solve_homological(&quartic.project_free(Projection::RgH2));
    Ok(FullBnf {
        cutoff,
        h3,
        f3,
        h4,
        quartic,
        normal_form,
        f4,
    })
}

fn render(m: &Monomial) -> String {
    m.to_string()
}

pub fn full_bnf_degree4(cutoff: i32) -> Result<BnfReport> {
    let fb = full_bnf(cutoff)?;
    let cubic = quadratic_dispersion(2 * cutoff).bracket(&fb.f3);
    // degree-3 part of H ∘ Φ is H^(3) + {F₃, H^(2)} = H^(3) − {H^(2), F₃}
    let cubic_remainder = fb.h3.sub(&cubic).max_abs() / fb.h3.max_abs();
    let mut class_max: BTreeMap<String, f64> = BTreeMap::new();
    let mut action_scale: f64 = 0.0;
    let mut action_err: f64 = 0.0;
    let mut nontrivial: f64 = 0.0;
    let mut offending = Vec::new();
    for (m, c) in fb.normal_form.terms() {
        let class = if m.is_trivial() { "trivial" } else { "nontrivial" };
        let e = class_max.entry(class.to_string()).or_insert(0.0);
        *e = e.max(c.norm());
        if let Some(x) = expected_action_coefficient(m) {
            action_scale = action_scale.max(x.abs());
            let err = (c - Complex64::new(x, 0.0)).norm() / x.abs();
            if err > CANCEL_TOL {
                offending.push((render(m), err));
            }
            action_err = action_err.max(err);
        } else {
            nontrivial = nontrivial.max(c.norm());
        }
    }
    // every trivial monomial inside the cutoff must be present
    for p in 1..=cutoff {
        for q in -cutoff..=cutoff {
            if q == 0 {
                continue;
            }
            let m = Monomial::actions(&[p, q]);
            if fb.normal_form.coeff(&m).norm() == 0.0 {
                action_err = f64::INFINITY;
                offending.push((render(&m), f64::INFINITY));
            }
        }
    }
    let ratio = nontrivial / action_scale.max(f64::MIN_POSITIVE);
    if ratio > CANCEL_TOL {
        for (m, c) in fb.normal_form.terms() {
            if !m.is_trivial() && c.norm() > CANCEL_TOL * action_scale {
                offending.push((render(m), c.norm() / action_scale));
            }
        }
    }
    let degenerate = cutoff < 9;
    Ok(BnfReport {
        mode: "full".into(),
        cutoff,
        sites: None,
        input_hash: fb.h4.add(&fb.h3).content_hash(),
        f3_terms: fb.f3.len(),
        f3_hash: fb.f3.content_hash(),
        f4_terms: fb.f4.len(),
        f4_hash: fb.f4.content_hash(),
        cubic_remainder,
        class_max,
        action_rel_err: action_err,
        null_condition_ratio: ratio,
        tolerance: CANCEL_TOL,
        offending,
        degenerate,
    })
}

/// Quartic part of the weak normal form on `S`.
pub struct WeakBnf {
    pub sites: TangentialSet,
    pub f3: HamPolynomial,
    /// `Π_Ker Π^{dz≤1}` of the transformed quartic part.
    pub normal_form: HamPolynomial,
    /// Its `(4,0)` component.
    pub tangential: HamPolynomial,
}

/// Closed form of the tangential quartic term.
pub fn tangential_quartic_closed_form(sites: &TangentialSet) -> HamPolynomial {
    let s = sites.sites();
    let mut h = HamPolynomial::zero();
    for &k in s {
        let a = k.abs() as f64;
        h.add_term(Monomial::actions(&[k as i32, k as i32]), Complex64::new(a.powi(3) / (4.0 * PI), 0.0));
    }
    for &k1 in s {
        for &k2 in s {
            if k1.signum() == k2.signum() && k2.abs() < k1.abs() {
                let v = (k1.abs() * k2.abs() * k2.abs()) as f64 / PI;
                h.add_term(Monomial::actions(&[k1 as i32, k2 as i32]), Complex64::new(v, 0.0));
            }
        }
    }
    h
}

pub fn weak_bnf(cutoff: i32, sites: &TangentialSet) -> Result<WeakBnf> {
    let kmax = sites.max_abs() as i32;
    if cutoff < kmax {
        return Err(Error::Config(format!("cutoff {cutoff} below max|S| = {kmax}")));
    }
    let g = is_generic(sites, 4);
    if !g.generic {
        return Err(Error::NonGeneric {
            certificate: g.certificate_text(),
        });
    }
    let h3 = zakharov_h3(2 * cutoff);
    let low = h3.project(Projection::DzLe(1), sites);
    let high = h3.sub(&low);
    let f3 = solve_homological(&low);
    let h4 = zakharov_h4(cutoff);
    let q = h4
        .add(&f3.bracket_trunc(&low, 4).scale(Complex64::new(0.5, 0.0)).restrict_cutoff(cutoff))
        .add(&f3.bracket_trunc(&high, 4).restrict_cutoff(cutoff))
        .pruned();
    let normal_form = q.project(Projection::DzLe(1), sites).project(Projection::KerH2, sites);
    let tangential = normal_form.project(Projection::DzEq(0), sites);
    Ok(WeakBnf {
        sites: sites.clone(),
        f3,
        normal_form,
        tangential,
    })
}

/// Runs the weak normal form and compares its `(4,0)` part with the closed form.
pub fn weak_bnf_report(cutoff: i32, sites: &TangentialSet) -> Result<BnfReport> {
    let w = weak_bnf(cutoff, sites)?;
    let expected = tangential_quartic_closed_form(sites);
    let scale = expected.max_abs();
    let mut worst: f64 = 0.0;
    let mut offending = Vec::new();
    let mut class_max: BTreeMap<String, f64> = BTreeMap::new();
    let mut keys: Vec<Monomial> = w.tangential.terms().map(|(m, _)| m.clone()).collect();
    keys.extend(expected.terms().map(|(m, _)| m.clone()));
    keys.sort();
    keys.dedup();
    for m in keys {
        let got = w.tangential.coeff(&m);
        let want = expected.coeff(&m);
        let class = if m.is_trivial() { "trivial" } else { "nontrivial" };
        let e = class_max.entry(class.to_string()).or_insert(0.0);
        *e = e.max(got.norm());
        let err = (got - want).norm() / scale;
        if err > CANCEL_TOL {
            offending.push((render(&m), err));
        }
        worst = worst.max(err);
    }
    Ok(BnfReport {
        mode: "weak".into(),
        cutoff,
        sites: Some(sites.sites().to_vec()),
        input_hash: zakharov_h4(cutoff).content_hash(),
        f3_terms: w.f3.len(),
        f3_hash: w.f3.content_hash(),
        f4_terms: 0,
        f4_hash: String::new(),
        cubic_remainder: 0.0,
        class_max,
        action_rel_err: worst,
        null_condition_ratio: 0.0,
        tolerance: CANCEL_TOL,
        offending,
        degenerate: false,
    })
}

/// The approximate constant `K = K^(2) + K^(3) + K^(4)` and the residual of `{H, K}`.
pub struct ApproxConstant {
    pub k2: HamPolynomial,
    pub k3: HamPolynomial,
    pub k4: HamPolynomial,
    /// Relative residual of `{H, K}` per degree 2, 3, 4.
    pub residual: [f64; 3],
}

pub fn approx_constant(cutoff: i32) -> Result<ApproxConstant> {
    let fb = full_bnf(cutoff)?;
    let big = 2 * cutoff;
    let weight = |j: i32| (j as f64) * (j as f64);
    let k2 = diagonal_quadratic(big, weight);
    let k3 = k2.bracket(&fb.f3);
    let k4 = k2
        .restrict_cutoff(cutoff)
        .bracket(&fb.f4)
        .add(&k3.bracket_trunc(&fb.f3, 4).scale(Complex64::new(0.5, 0.0)).restrict_cutoff(cutoff))
        .pruned();
    let h2 = quadratic_dispersion(big);
    let rel = |parts: &[&HamPolynomial]| {
        let mut sum = HamPolynomial::zero();
        let mut scale: f64 = 0.0;
        for p in parts {
            scale = scale.max(p.max_abs());
            sum = sum.add(p);
        }
        if scale == 0.0 {
            0.0
        } else {
            sum.max_abs() / scale
        }
    };
    let d2 = h2.bracket(&k2);
    let r2 = if d2.is_empty() { 0.0 } else { d2.max_abs() };
    let a3 = h2.bracket(&k3).restrict_cutoff(cutoff);
    let b3 = fb.h3.bracket(&k2).restrict_cutoff(cutoff);
    let a4 = quadratic_dispersion(cutoff).bracket(&k4);
    let b4 = fb.h3.bracket_trunc(&k3, 4).restrict_cutoff(cutoff);
    let c4 = fb.h4.bracket(&k2.restrict_cutoff(cutoff));
    Ok(ApproxConstant {
        residual: [r2, rel(&[&a3, &b3]), rel(&[&a4, &b4, &c4])],
        k2: k2.restrict_cutoff(cutoff),
        k3: k3.restrict_cutoff(cutoff),
        k4,
    })
}

/// Per-mode comparison of the extracted normal frequency shift with `(m₁ + c_j) j`.
#[derive(Clone, Debug, Serialize)]
pub struct KappaRow {
    pub j: i64,
    pub extracted: f64,
    pub predicted: f64,
    pub rel_err: f64,
}

/// `κ_j` from `Π_triv Π^{dz=2}` of the full normal form at tangential actions `ζ`.
pub fn linear_corrections(cutoff: i32, sites: &TangentialSet, zeta: &[f64]) -> Result<Vec<KappaRow>> {
    if zeta.len() != sites.nu() {
        return Err(Error::Config(format!("ζ has {} entries for ν = {}", zeta.len(), sites.nu())));
    }
    let g = is_generic(sites, 4);
    if !g.generic {
        return Err(Error::NonGeneric {
            certificate: g.certificate_text(),
        });
    }
    let fb = full_bnf(cutoff)?;
    Ok(kappa_from_normal_form(&fb.normal_form, cutoff, sites, zeta))
}

pub fn kappa_from_normal_form(nf: &HamPolynomial, cutoff: i32, sites: &TangentialSet, zeta: &[f64]) -> Vec<KappaRow> {
    let part = nf.project(Projection::DzEq(2), sites).project(Projection::Trivial, sites);
    let mut rows = Vec::new();
    for j in (-(cutoff as i64)..=cutoff as i64).filter(|&j| j != 0 && !sites.contains(j)) {
        let mut ext = Complex64::new(0.0, 0.0);
        for (i, &k) in sites.sites().iter().enumerate() {
            ext += part.coeff(&Monomial::actions(&[k as i32, j as i32])) * zeta[i];
        }
        let pred = kappa(sites, zeta, j);
        let scale = pred.abs().max(ext.norm()).max(f64::MIN_POSITIVE);
        let rel_err = if pred == 0.0 && ext.norm() == 0.0 {
            0.0
        } else {
            (ext - Complex64::new(pred, 0.0)).norm() / scale
        };
        rows.push(KappaRow {
            j,
            extracted: ext.re,
            predicted: pred,
            rel_err,
        });
    }
    rows
}
