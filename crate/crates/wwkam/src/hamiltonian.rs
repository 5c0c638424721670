//! Sparse polynomials in the complex Fourier variables `u_j`, `ū_j`.
//!
//! Functions on the circle use the normalization
//! `u(x) = (2π)^{-1/2} Σ_j u_j e^{ijx}` and the complex coordinates
//! `η_n = 2^{-1/2}|n|^{1/4}(u_n + ū_{-n})`, `ψ_n = -i 2^{-1/2}|n|^{-1/4}(u_n - ū_{-n})`.
//! The Poisson bracket is
//! `{F,H} = (1/i) Σ_k (∂_{u_k}H ∂_{ū_k}F − ∂_{ū_k}H ∂_{u_k}F)`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fmt;
use std::hash::BuildHasherDefault;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use smallvec::SmallVec;

use crate::algebraic::{frequency_sum, SqrtRational};
use crate::error::{Error, Result};
use crate::spectrum::TangentialSet;

type FixedHasher = BuildHasherDefault<std::collections::hash_map::DefaultHasher>;
type Accum = HashMap<Monomial, Complex64, FixedHasher>;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// A Fourier variable: `u_j` for `s = +1`, `ū_j` for `s = -1`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct Mode {
    pub j: i32,
    pub s: i8,
}

impl Mode {
    pub fn new(j: i32, s: i8) -> Self {
        assert!(j != 0, "mode with zero wavenumber");
        assert!(s == 1 || s == -1, "mode sign must be ±1");
        Self { j, s }
    }

    pub fn plus(j: i32) -> Self {
        Self::new(j, 1)
    }

    pub fn minus(j: i32) -> Self {
        Self::new(j, -1)
    }

    pub fn conj(self) -> Self {
        Self { j: self.j, s: -self.s }
    }

    /// Contribution `σ j` to the momentum.
    pub fn momentum(self) -> i64 {
        self.s as i64 * self.j as i64
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.s > 0 {
            write!(f, "u[{}]", self.j)
        } else {
            write!(f, "ū[{}]", self.j)
        }
    }
}

/// A product of modes kept in canonical sorted order.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Monomial {
    modes: SmallVec<[Mode; 6]>,
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.modes
            .len()
            .cmp(&other.modes.len())
            .then_with(|| self.modes.cmp(&other.modes))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Monomial {
    pub fn new<I: IntoIterator<Item = Mode>>(modes: I) -> Self {
        let mut modes: SmallVec<[Mode; 6]> = modes.into_iter().collect();
        modes.sort_unstable();
        Self { modes }
    }

    /// Builds a monomial from `(j, σ)` pairs.
    pub fn from_pairs(pairs: &[(i32, i8)]) -> Self {
        Self::new(pairs.iter().map(|&(j, s)| Mode::new(j, s)))
    }

    /// `|u_{j1}|^2 ... |u_{jn}|^2`.
    pub fn actions(js: &[i32]) -> Self {
        Self::new(js.iter().flat_map(|&j| [Mode::plus(j), Mode::minus(j)]))
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn degree(&self) -> usize {
        self.modes.len()
    }

    pub fn momentum(&self) -> i64 {
        self.modes.iter().map(|m| m.momentum()).sum()
    }

    pub fn conj(&self) -> Self {
        Self::new(self.modes.iter().map(|m| m.conj()))
    }

    pub fn multiplicity(&self, m: Mode) -> usize {
        self.modes.iter().filter(|&&x| x == m).count()
    }

    /// Exact `Σ σ_i sqrt(|j_i|)`.
    pub fn frequency(&self) -> SqrtRational {
        let pairs: Vec<(i64, i8)> = self.modes.iter().map(|m| (m.j as i64, m.s)).collect();
        frequency_sum(&pairs)
    }

    pub fn frequency_f64(&self) -> f64 {
        self.modes
            .iter()
            .map(|m| m.s as f64 * (m.j.unsigned_abs() as f64).sqrt())
            .sum()
    }

    /// Exact kernel test of the adjoint action of `H^(2)`.
    pub fn is_resonant(&self) -> bool {
        // a float value this far from zero cannot hide an exact zero
        if self.frequency_f64().abs() > 1e-3 {
            return false;
        }
        self.frequency().is_zero()
    }

    /// `Σ σ_i j_i^2`, the weight of the adjoint action of `Σ j²|u_j|²`.
    pub fn quadratic_momentum(&self) -> f64 {
        self.modes
            .iter()
            .map(|m| m.s as f64 * (m.j as f64) * (m.j as f64))
            .sum()
    }

    /// Even degree and the `+` multiset equals the `−` multiset.
    pub fn is_trivial(&self) -> bool {
        if self.modes.len() % 2 == 1 {
            return false;
        }
        let mut plus: SmallVec<[i32; 6]> = self.modes.iter().filter(|m| m.s > 0).map(|m| m.j).collect();
        let mut minus: SmallVec<[i32; 6]> = self.modes.iter().filter(|m| m.s < 0).map(|m| m.j).collect();
        plus.sort_unstable();
        minus.sort_unstable();
        plus == minus
    }

    /// Number of modes with wavenumber outside `S`.
    pub fn dz(&self, sites: &TangentialSet) -> usize {
        self.modes.iter().filter(|m| !sites.contains(m.j as i64)).count()
    }

    pub fn max_abs_j(&self) -> i32 {
        self.modes.iter().map(|m| m.j.abs()).max().unwrap_or(0)
    }

    /// The monomial with one copy of `m` removed, or `None` if absent.
    pub fn without(&self, m: Mode) -> Option<Self> {
        let pos = self.modes.iter().position(|&x| x == m)?;
        let mut modes = self.modes.clone();
        modes.remove(pos);
        Some(Self { modes })
    }

    fn merged(&self, other: &Self) -> Self {
        let mut modes = self.modes.clone();
        modes.extend(other.modes.iter().copied());
        modes.sort_unstable();
        Self { modes }
    }

    /// Value at a state given by `z(j)`, with `ū_j = conj(z(j))`.
    pub fn eval<F: Fn(i32) -> Complex64>(&self, z: F) -> Complex64 {
        let mut acc = Complex64::new(1.0, 0.0);
        for m in &self.modes {
            let v = z(m.j);
            acc *= if m.s > 0 { v } else { v.conj() };
        }
        acc
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.modes.iter().map(|m| m.to_string()).collect();
        write!(f, "{}", parts.join("·"))
    }
}

/// Projectors onto monomial classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Projection {
    /// At most `k` modes outside `S`.
    DzLe(usize),
    /// Exactly `k` modes outside `S`.
    DzEq(usize),
    /// Kernel of `ad_{H^(2)}`.
    KerH2,
    /// Range of `ad_{H^(2)}`.
    RgH2,
    /// Trivial resonances.
    Trivial,
}

/// A sparse polynomial `Σ c_m m` over canonical monomials.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HamPolynomial {
    terms: BTreeMap<Monomial, Complex64>,
}

/// Relative prune threshold applied after products and brackets.
pub const PRUNE_REL: f64 = 1e-14;

impl HamPolynomial {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_terms<I: IntoIterator<Item = (Monomial, Complex64)>>(terms: I) -> Self {
        let mut out = Self::zero();
        for (m, c) in terms {
            out.add_term(m, c);
        }
        out
    }

    pub fn add_term(&mut self, m: Monomial, c: Complex64) {
        if c == Complex64::new(0.0, 0.0) {
            return;
        }
        let e = self.terms.entry(m).or_insert(Complex64::new(0.0, 0.0));
        *e += c;
    }

    pub fn coeff(&self, m: &Monomial) -> Complex64 {
        self.terms.get(m).copied().unwrap_or_default()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Complex64)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn max_degree(&self) -> usize {
        self.terms.keys().map(|m| m.degree()).max().unwrap_or(0)
    }

    pub fn max_abs(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Drops coefficients below `rel` times the largest coefficient of the same degree.
    pub fn prune(&mut self, rel: f64) {
        let mut scale: BTreeMap<usize, f64> = BTreeMap::new();
        for (m, c) in &self.terms {
            let e = scale.entry(m.degree()).or_insert(0.0);
            *e = e.max(c.norm());
        }
        self.terms.retain(|m, c| c.norm() > rel * scale[&m.degree()] && c.norm() > 0.0);
    }

    pub fn pruned(mut self) -> Self {
        self.prune(PRUNE_REL);
        self
    }

    pub fn filter<P: Fn(&Monomial) -> bool>(&self, pred: P) -> Self {
        Self {
            terms: self
                .terms
                .iter()
                .filter(|(m, _)| pred(m))
                .map(|(m, c)| (m.clone(), *c))
                .collect(),
        }
    }

    pub fn degree_part(&self, d: usize) -> Self {
        self.filter(|m| m.degree() == d)
    }

    /// Keeps monomials whose modes all satisfy `|j| <= k`.
    pub fn restrict_cutoff(&self, k: i32) -> Self {
        self.filter(|m| m.max_abs_j() <= k)
    }

    pub fn map_coeffs<F: Fn(&Monomial, Complex64) -> Complex64>(&self, f: F) -> Self {
        let mut out = Self::zero();
        for (m, c) in &self.terms {
            out.add_term(m.clone(), f(m, *c));
        }
        out
    }

    pub fn scale(&self, s: Complex64) -> Self {
        self.map_coeffs(|_, c| c * s)
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), *c);
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    pub fn project(&self, which: Projection, sites: &TangentialSet) -> Self {
        match which {
            Projection::DzLe(k) => self.filter(|m| m.dz(sites) <= k),
            Projection::DzEq(k) => self.filter(|m| m.dz(sites) == k),
            Projection::KerH2 => self.filter(|m| m.is_resonant()),
            Projection::RgH2 => self.filter(|m| !m.is_resonant()),
            Projection::Trivial => self.filter(|m| m.is_trivial()),
        }
    }

    /// Projection that does not depend on the tangential set.
    pub fn project_free(&self, which: Projection) -> Self {
        match which {
            Projection::KerH2 => self.filter(|m| m.is_resonant()),
            Projection::RgH2 => self.filter(|m| !m.is_resonant()),
            Projection::Trivial => self.filter(|m| m.is_trivial()),
            _ => panic!("dz projections need a tangential set"),
        }
    }

    pub fn is_momentum_conserving(&self) -> bool {
        self.terms.keys().all(|m| m.momentum() == 0)
    }

    /// Largest `|c(m̄) − conj(c(m))|` relative to the largest coefficient.
    pub fn reality_defect(&self) -> f64 {
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        self.terms
            .iter()
            .map(|(m, c)| (self.coeff(&m.conj()) - c.conj()).norm() / scale)
            .fold(0.0, f64::max)
    }

    pub fn is_real_valued(&self, rel: f64) -> bool {
        self.reality_defect() <= rel
    }

    /// Poisson bracket `{self, other}`, dropping products of degree above `max_degree`.
    pub fn bracket_trunc(&self, other: &Self, max_degree: usize) -> Self {
        let mut index: HashMap<Mode, Vec<(&Monomial, Complex64)>, FixedHasher> = HashMap::default();
        for (m, c) in &other.terms {
            let mut seen: SmallVec<[Mode; 6]> = SmallVec::new();
            for &md in m.modes() {
                if !seen.contains(&md) {
                    seen.push(md);
                    index.entry(md).or_default().push((m, *c));
                }
            }
        }
        let lhs: Vec<(&Monomial, &Complex64)> = self.terms.iter().collect();
        let partials: Vec<Accum> = lhs
            .par_chunks(64)
            .map(|chunk| {
                let mut acc = Accum::default();
                for &(mf, &cf) in chunk {
                    if mf.degree() == 0 {
                        continue;
                    }
                    let mut seen: SmallVec<[Mode; 6]> = SmallVec::new();
                    for &md in mf.modes() {
                        if seen.contains(&md) {
                            continue;
                        }
                        seen.push(md);
                        let nf = mf.multiplicity(md) as f64;
                        let rest_f = mf.without(md).expect("mode present");
                        let partner = md.conj();
                        let Some(list) = index.get(&partner) else { continue };
                        // F differentiated in ū_k pairs with G in u_k with sign +
                        let sign = if md.s < 0 { 1.0 } else { -1.0 };
                        for &(mg, cg) in list {
                            if mf.degree() + mg.degree() - 2 > max_degree {
                                continue;
                            }
                            let ng = mg.multiplicity(partner) as f64;
                            let rest_g = mg.without(partner).expect("mode present");
                            let mono = rest_f.merged(&rest_g);
                            let c = -I * cf * cg * (sign * nf * ng);
                            *acc.entry(mono).or_insert(Complex64::new(0.0, 0.0)) += c;
                        }
                    }
                }
                acc
            })
            .collect();
        let mut out = Self::zero();
        for part in partials {
            let mut items: Vec<(Monomial, Complex64)> = part.into_iter().collect();
            items.sort_by(|a, b| a.0.cmp(&b.0));
            for (m, c) in items {
                out.add_term(m, c);
            }
        }
        out.pruned()
    }

    pub fn bracket(&self, other: &Self) -> Self {
        self.bracket_trunc(other, usize::MAX)
    }

    /// Value at the state `z`.
    pub fn eval<F: Fn(i32) -> Complex64 + Copy>(&self, z: F) -> Complex64 {
        self.terms.iter().map(|(m, c)| c * m.eval(z)).sum()
    }

    /// Partial derivative in the variable `md` at the state `z`.
    pub fn partial<F: Fn(i32) -> Complex64 + Copy>(&self, md: Mode, z: F) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (m, c) in &self.terms {
            let n = m.multiplicity(md);
            if n > 0 {
                acc += c * n as f64 * m.without(md).unwrap().eval(z);
            }
        }
        acc
    }

    /// Canonical JSON layout `[{degree, modes:[[j,σ],…], re, im}, …]`.
    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .terms
            .iter()
            .map(|(m, c)| {
                let modes: Vec<[i64; 2]> = m.modes().iter().map(|x| [x.j as i64, x.s as i64]).collect();
                serde_json::json!({"degree": m.degree(), "im": c.im, "modes": modes, "re": c.re})
            })
            .collect();
        serde_json::Value::Array(rows)
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let rows = v.as_array().ok_or_else(|| Error::Config("coefficient table must be an array".into()))?;
        let mut out = Self::zero();
        for r in rows {
            let modes = r["modes"]
                .as_array()
                .ok_or_else(|| Error::Config("row without modes".into()))?
                .iter()
                .map(|p| {
                    let j = p[0].as_i64().unwrap_or(0) as i32;
                    let s = p[1].as_i64().unwrap_or(0) as i8;
                    if j == 0 || (s != 1 && s != -1) {
                        Err(Error::Config(format!("bad mode {p}")))
                    } else {
                        Ok(Mode::new(j, s))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let re = r["re"].as_f64().unwrap_or(0.0);
            let im = r["im"].as_f64().unwrap_or(0.0);
            out.add_term(Monomial::new(modes), Complex64::new(re, im));
        }
        Ok(out)
    }

    /// SHA-256 of the canonical JSON layout.
    pub fn content_hash(&self) -> String {
        let text = serde_json::to_string(&self.to_json()).expect("serializable");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// The two mode contributions of `η_n` (`psi = false`) or `ψ_n` (`psi = true`).
fn field_modes(n: i32, psi: bool) -> [(Mode, Complex64); 2] {
    let a = (n.unsigned_abs() as f64).powf(0.25);
    let r = std::f64::consts::FRAC_1_SQRT_2;
    if psi {
        [
            (Mode::plus(n), Complex64::new(0.0, -r / a)),
            (Mode::minus(-n), Complex64::new(0.0, r / a)),
        ]
    } else {
        [(Mode::plus(n), Complex64::new(r * a, 0.0)), (Mode::minus(-n), Complex64::new(r * a, 0.0))]
    }
}

/// Adds `w · Π_i field(n_i)` expanded into monomials.
fn expand_product(acc: &mut Accum, w: f64, factors: &[(i32, bool)]) {
    let d = factors.len();
    let lin: SmallVec<[[(Mode, Complex64); 2]; 6]> = factors.iter().map(|&(n, p)| field_modes(n, p)).collect();
    for mask in 0..(1u32 << d) {
        let mut c = Complex64::new(w, 0.0);
        let mut modes: SmallVec<[Mode; 6]> = SmallVec::new();
        for (i, l) in lin.iter().enumerate() {
            let (m, f) = l[((mask >> i) & 1) as usize];
            c *= f;
            modes.push(m);
        }
        *acc.entry(Monomial::new(modes)).or_insert(Complex64::new(0.0, 0.0)) += c;
    }
}

fn accum_to_poly(acc: Accum) -> HamPolynomial {
    let mut items: Vec<(Monomial, Complex64)> = acc.into_iter().collect();
    items.sort_by(|a, b| a.0.cmp(&b.0));
    HamPolynomial::from_terms(items).pruned()
}

/// Quadratic part `½∫ψ|D|ψ + ½∫η²`, expanded from the physical variables.
pub fn zakharov_h2(k: i32) -> HamPolynomial {
    let mut acc = Accum::default();
    for a in (-k..=k).filter(|&a| a != 0) {
        expand_product(&mut acc, 0.5, &[(a, false), (-a, false)]);
        expand_product(&mut acc, 0.5 * a.abs() as f64, &[(a, true), (-a, true)]);
    }
    accum_to_poly(acc)
}

/// Cubic part `½∫η(ψ_x² − (|D|ψ)²)`.
pub fn zakharov_h3(k: i32) -> HamPolynomial {
    let pref = 0.5 / (2.0 * PI).sqrt();
    let mut acc = Accum::default();
    for a in (-k..=k).filter(|&a| a != 0) {
        for b in (-k..=k).filter(|&b| b != 0) {
            let c = -a - b;
            if c == 0 || c.abs() > k {
                continue;
            }
            let (bf, cf) = (b as f64, c as f64);
            let w = -(bf * cf + bf.abs() * cf.abs());
            if w != 0.0 {
                expand_product(&mut acc, pref * w, &[(a, false), (b, true), (c, true)]);
            }
        }
    }
    accum_to_poly(acc)
}

/// Quartic part `½∫ψ G^(2)(η)ψ` with
/// `G^(2)(η) = −½(D²η²|D| + |D|η²D² − 2|D|η|D|η|D|)`.
pub fn zakharov_h4(k: i32) -> HamPolynomial {
    let pref = -0.5 / (2.0 * PI);
    let mut acc = Accum::default();
    let idx: Vec<i32> = (-k..=k).filter(|&a| a != 0).collect();
    for &a1 in &idx {
        for &a2 in &idx {
            for &b in &idx {
                let c = -a1 - a2 - b;
                if c == 0 || c.abs() > k {
                    continue;
                }
                let (bf, cf) = (b as f64, c as f64);
                let w = bf * bf * cf.abs() - bf.abs() * cf.abs() * ((a2 + c).abs() as f64);
                if w != 0.0 {
                    expand_product(&mut acc, pref * w, &[(a1, false), (a2, false), (b, true), (c, true)]);
                }
            }
        }
    }
    accum_to_poly(acc)
}

/// Truncated Zakharov Hamiltonian `H^(2) + … + H^(max_degree)` on `|j| <= k`.
pub fn build_zakharov(k: i32, max_degree: usize) -> Result<HamPolynomial> {
    if k < 1 {
        return Err(Error::Domain(format!("cutoff must be positive, got {k}")));
    }
    if !(2..=4).contains(&max_degree) {
        return Err(Error::Domain(format!("max_degree must be 2, 3 or 4, got {max_degree}")));
    }
    let mut h = zakharov_h2(k);
    if max_degree >= 3 {
        h = h.add(&zakharov_h3(k));
    }
    if max_degree >= 4 {
        h = h.add(&zakharov_h4(k));
    }
    Ok(h)
}

/// `H^(2) = Σ sqrt|j| u_j ū_j` written directly.
pub fn quadratic_dispersion(k: i32) -> HamPolynomial {
    HamPolynomial::from_terms(
        (-k..=k)
            .filter(|&j| j != 0)
            .map(|j| (Monomial::actions(&[j]), Complex64::new((j.abs() as f64).sqrt(), 0.0))),
    )
}

/// Momentum `M = ∫ i u_x ū dx = −Σ j u_j ū_j`.
pub fn momentum_hamiltonian(k: i32) -> Result<HamPolynomial> {
    if k < 1 {
        return Err(Error::Domain(format!("cutoff must be positive, got {k}")));
    }
    Ok(HamPolynomial::from_terms(
        (-k..=k)
            .filter(|&j| j != 0)
            .map(|j| (Monomial::actions(&[j]), Complex64::new(-(j as f64), 0.0))),
    ))
}

/// Weighted quadratic `Σ f(j) |u_j|²`.
pub fn diagonal_quadratic<F: Fn(i32) -> f64>(k: i32, f: F) -> HamPolynomial {
    HamPolynomial::from_terms(
        (-k..=k)
            .filter(|&j| j != 0)
            .map(|j| (Monomial::actions(&[j]), Complex64::new(f(j), 0.0))),
    )
}

/// Coefficients of the expansion of the horizontal velocity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VCoefficients {
    pub n: i64,
    /// `(Ṽ₁)_n^+ = (Ṽ₁)_n^-`.
    pub v1: f64,
    /// `(Ṽ₂)_{n,n}^{+-} = (Ṽ₂)_{n,n}^{-+}`.
    pub v2: f64,
}

pub fn v_expansion_coefficients(n: i64) -> Result<VCoefficients> {
    if n == 0 {
        return Err(Error::Domain("V-expansion coefficient at n = 0".into()));
    }
    let a = n.unsigned_abs() as f64;
    Ok(VCoefficients {
        n,
        v1: n as f64 * a.powf(-0.25) / std::f64::consts::SQRT_2,
        v2: n as f64 * a / 2.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quadratic_part_is_dispersion_law() {
        let h2 = zakharov_h2(6);
        let direct = quadratic_dispersion(6);
        assert_eq!(h2.len(), direct.len());
        for (m, c) in direct.terms() {
            assert_relative_eq!(h2.coeff(m).re, c.re, max_relative = 1e-14);
            assert!(h2.coeff(m).im.abs() < 1e-14);
        }
    }

    #[test]
    fn adjoint_action_on_monomial() {
        let h2 = quadratic_dispersion(5);
        let m = HamPolynomial::from_terms([(Monomial::from_pairs(&[(4, 1), (1, -1)]), Complex64::new(1.0, 0.0))]);
        let b = h2.bracket(&m);
        assert_eq!(b.len(), 1);
        let c = b.coeff(&Monomial::from_pairs(&[(4, 1), (1, -1)]));
        assert!((c - Complex64::new(0.0, -1.0)).norm() < 1e-14);
    }

    #[test]
    fn bracket_is_antisymmetric() {
        let h3 = zakharov_h3(4);
        assert!(h3.bracket(&h3).max_abs() < 1e-14);
    }

    #[test]
    fn momentum_commutes_with_cubic() {
        let m = momentum_hamiltonian(6).unwrap();
        let h3 = zakharov_h3(6);
        assert!(m.bracket(&h3).max_abs() < 1e-12);
        assert!(m.is_real_valued(0.0));
        let t = HamPolynomial::from_terms([(Monomial::actions(&[3]), Complex64::new(1.0, 0.0))]);
        assert!(m.bracket(&t).is_empty());
    }

    #[test]
    fn zakharov_is_real_and_momentum_free() {
        let h = build_zakharov(5, 4).unwrap();
        assert!(h.is_momentum_conserving());
        assert!(h.reality_defect() < 1e-14);
        assert!(build_zakharov(0, 4).is_err());
        assert!(build_zakharov(3, 5).is_err());
    }

    #[test]
    fn v_coefficients() {
        let c = v_expansion_coefficients(4).unwrap();
        assert_relative_eq!(c.v1, 4.0 / (2f64.sqrt() * 2f64.sqrt()), max_relative = 1e-15);
        assert_relative_eq!(v_expansion_coefficients(1).unwrap().v2, 0.5);
        assert!(v_expansion_coefficients(0).is_err());
    }

    #[test]
    fn projectors_split_kernel_and_range() {
        let sites = TangentialSet::new(&[4, 9, -1]).unwrap();
        let mut h = HamPolynomial::zero();
        let bf = Monomial::from_pairs(&[(-1, 1), (4, -1), (9, 1), (4, -1)]);
        h.add_term(bf.clone(), Complex64::new(1.0, 0.0));
        h.add_term(Monomial::from_pairs(&[(1, 1), (2, 1), (3, -1)]), Complex64::new(2.0, 0.0));
        let ker = h.project(Projection::KerH2, &sites);
        let rg = h.project(Projection::RgH2, &sites);
        assert_eq!(ker.len(), 1);
        assert!(ker.coeff(&bf).norm() > 0.0);
        assert_eq!(ker.add(&rg), h);
        assert_eq!(ker.project(Projection::KerH2, &sites), ker);
        let triv = Monomial::actions(&[2, 3]);
        assert!(triv.is_trivial());
        let two_out = Monomial::from_pairs(&[(2, 1), (3, -1), (4, 1), (-1, 1)]);
        let p = HamPolynomial::from_terms([(two_out, Complex64::new(1.0, 0.0))]);
        assert!(p.project(Projection::DzLe(1), &TangentialSet::new(&[4, 9]).unwrap()).is_empty());
    }

    #[test]
    fn json_round_trip() {
        let h = build_zakharov(3, 3).unwrap();
        let back = HamPolynomial::from_json(&h.to_json()).unwrap();
        assert_eq!(back.content_hash(), h.content_hash());
    }
}
