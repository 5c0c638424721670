//! Small divisors under the momentum constraint, Melnikov-set membership and
//! Monte-Carlo estimates of the excluded frequency measure.

use std::cmp::Ordering;

use nalgebra::DVector;
use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::algebraic::{fixed_to_f64, SqrtRational};
use crate::error::{Error, Result};
use crate::spectrum::{amp_freq, c_j, freq_amp, m1, TangentialSet};

/// Bits used for the high-precision shadow of every exact divisor.
pub const SHADOW_BITS: u32 = 256;

/// Parameters of the frequency box `Ω_ε` and the Diophantine thresholds.
#[derive(Clone, Debug, Serialize)]
pub struct FrequencyBox {
    pub sites: TangentialSet,
    pub eps: f64,
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
    pub gamma_star: f64,
    pub tau: f64,
}

impl FrequencyBox {
    pub fn new(sites: &TangentialSet, eps: f64, a: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Config(format!("ε must lie in (0,1), got {eps}")));
        }
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::Config(format!("a must lie in (0,1), got {a}")));
        }
        let b = 1.0 + a / 2.0;
        let gamma = eps.powf(2.0 * b);
        let nu = sites.nu() as f64;
        Ok(Self {
            sites: sites.clone(),
            eps,
            a,
            b,
            gamma,
            gamma_star: gamma.powi(3),
            tau: 3.0 * nu + 7.0,
        })
    }

    /// Same box with the base threshold `γ` replaced.
    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self.gamma_star = gamma.powi(3);
        self
    }
}

/// One evaluated divisor `ω̄·ℓ + σ√|j| − σ′√|k|`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DivisorRecord {
    pub ell: Vec<i64>,
    pub j: i64,
    pub k: i64,
    pub sigma: i8,
    pub sigma_p: i8,
    pub value: f64,
    pub constraint_ok: bool,
    pub trivial: bool,
}

fn l1(ell: &[i64]) -> i64 {
    ell.iter().map(|x| x.abs()).sum()
}

/// `⟨ℓ⟩ = max(1, |ℓ|)` with the `ℓ¹` norm.
pub fn bracket_norm(ell: &[i64]) -> f64 {
    l1(ell).max(1) as f64
}

fn dot(v: &[i64], ell: &[i64]) -> i64 {
    v.iter().zip(ell).map(|(a, b)| a * b).sum()
}

fn sqrt_abs(j: i64) -> f64 {
    (j.abs() as f64).sqrt()
}

/// `ω̄·ℓ + σ√|j| − σ′√|k|` exactly.
pub fn delta_exact(sites: &TangentialSet, ell: &[i64], sigma: i8, j: i64, sigma_p: i8, k: i64) -> SqrtRational {
    let mut out = SqrtRational::zero();
    let q = |n: i64| BigRational::from_integer(BigInt::from(n));
    for (&s, &l) in sites.sites().iter().zip(ell) {
        if l != 0 {
            out.add_scaled_sqrt(s.unsigned_abs(), &q(l));
        }
    }
    out.add_scaled_sqrt(j.unsigned_abs(), &q(sigma as i64));
    out.add_scaled_sqrt(k.unsigned_abs(), &q(-(sigma_p as i64)));
    out
}

fn delta_f64(omega_bar: &[f64], ell: &[i64], sigma: i8, j: i64, sigma_p: i8, k: i64) -> f64 {
    let w: f64 = omega_bar.iter().zip(ell).map(|(o, &l)| o * l as f64).sum();
    w + sigma as f64 * sqrt_abs(j) - sigma_p as f64 * sqrt_abs(k)
}

pub fn delta(
    sites: &TangentialSet,
    p: usize,
    ell: &[i64],
    sigma: i8,
    j: i64,
    sigma_p: i8,
    k: i64,
) -> Result<DivisorRecord> {
    if ell.len() != sites.nu() {
        return Err(Error::Config(format!("ℓ has {} entries for ν = {}", ell.len(), sites.nu())));
    }
    if l1(ell) as usize > p {
        return Err(Error::Domain(format!("|ℓ| = {} exceeds p = {p}", l1(ell))));
    }
    if j == 0 || k == 0 {
        return Err(Error::Domain("wavenumbers must be nonzero".into()));
    }
    let ob: Vec<f64> = sites.omega_bar().iter().copied().collect();
    let v = sites.velocity();
    Ok(DivisorRecord {
        ell: ell.to_vec(),
        j,
        k,
        sigma,
        sigma_p,
        value: delta_f64(&ob, ell, sigma, j, sigma_p, k),
        constraint_ok: dot(&v, ell) + j - k == 0,
        trivial: sigma == sigma_p && j == k && ell.iter().all(|&x| x == 0),
    })
}

/// All `ℓ ∈ ℤ^ν` with `lo <= |ℓ|₁ <= hi`, in lexicographic order.
pub fn lattice_ball(nu: usize, lo: i64, hi: i64) -> Vec<Vec<i64>> {
    fn rec(nu: usize, budget: i64, cur: &mut Vec<i64>, out: &mut Vec<Vec<i64>>) {
        if cur.len() == nu {
            out.push(cur.clone());
            return;
        }
        for x in -budget..=budget {
            cur.push(x);
            rec(nu, budget - x.abs(), cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(nu, hi, &mut Vec::with_capacity(nu), &mut out);
    out.retain(|e| l1(e) >= lo);
    out
}

/// Index domain for `j, k` in divisor scans.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum IndexDomain {
    /// All nonzero integers.
    Nonzero,
    /// Normal sites only.
    Complement,
}

/// Outcome of an exhaustive divisor scan.
#[derive(Clone, Debug, Serialize)]
pub struct DivisorScan {
    pub p: usize,
    pub j_max: i64,
    pub records: usize,
    pub min: f64,
    pub argmin: Option<DivisorRecord>,
    /// Minimum over `σ = −σ′`.
    pub anti_min: f64,
    pub anti_argmin: Option<DivisorRecord>,
    /// Minimum over `σ = −σ′`, `|ℓ| = 1`, and the site `j*` of `ℓ` largest in modulus.
    pub anti_star_min: f64,
    /// Largest `|float − shadow|/(1+|δ|)` over records with `|δ| < 1`.
    pub shadow_gap: f64,
    pub shadow_checked: usize,
}

#[derive(Clone)]
struct Best {
    min: f64,
    arg: Option<DivisorRecord>,
}

impl Best {
    fn new() -> Self {
        Self {
            min: f64::INFINITY,
            arg: None,
        }
    }

    fn offer(&mut self, v: f64, rec: impl FnOnce() -> DivisorRecord) {
        if v.abs() < self.min {
            self.min = v.abs();
            self.arg = Some(rec());
        }
    }

    fn merge(a: Self, b: Self) -> Self {
        // ties keep the earlier shard so the argmin is deterministic
        match b.min.partial_cmp(&a.min) {
            Some(Ordering::Less) => b,
            _ => a,
        }
    }
}

fn shadow(sites: &TangentialSet, ell: &[i64], sigma: i8, j: i64, sigma_p: i8, k: i64) -> f64 {
    let x = delta_exact(sites, ell, sigma, j, sigma_p, k);
    fixed_to_f64(&x.to_fixed(SHADOW_BITS), SHADOW_BITS)
}

/// Exhaustive scan of `|δ^{(p)}|` over `|ℓ| <= p`, `|j|, |k| <= J`.
pub fn divisor_min(sites: &TangentialSet, p: usize, j_max: i64, domain: IndexDomain) -> DivisorScan {
    let ob: Vec<f64> = sites.omega_bar().iter().copied().collect();
    let v = sites.velocity();
    let ells = lattice_ball(sites.nu(), 0, p as i64);
    let admissible = |j: i64| j != 0 && j.abs() <= j_max && (domain == IndexDomain::Nonzero || !sites.contains(j));
    type Acc = (Best, Best, Best, f64, usize, usize);
    let parts: Vec<Acc> = ells
        .par_iter()
        .map(|ell| {
            let m = dot(&v, ell);
            let zero = ell.iter().all(|&x| x == 0);
            let star = if l1(ell) == 1 {
                let i = ell.iter().position(|&x| x != 0).unwrap();
                Some(sites.sites()[i].abs())
            } else {
                None
            };
            let mut all = Best::new();
            let mut anti = Best::new();
            let mut anti_star = Best::new();
            let mut gap: f64 = 0.0;
            let mut checked = 0usize;
            let mut count = 0usize;
            for j in -j_max..=j_max {
                let k = j + m;
                if !admissible(j) || !admissible(k) {
                    continue;
                }
                for (sigma, sigma_p) in [(1i8, 1i8), (1, -1), (-1, 1), (-1, -1)] {
                    if zero && sigma == sigma_p && j == k {
                        continue;
                    }
                    count += 1;
                    let val = delta_f64(&ob, ell, sigma, j, sigma_p, k);
                    let rec = || DivisorRecord {
                        ell: ell.clone(),
                        j,
                        k,
                        sigma,
                        sigma_p,
                        value: val,
                        constraint_ok: true,
                        trivial: false,
                    };
                    if val.abs() < 1.0 {
                        let s = shadow(sites, ell, sigma, j, sigma_p, k);
                        gap = gap.max((val - s).abs() / (1.0 + s.abs()));
                        checked += 1;
                    }
                    all.offer(val, rec);
                    if sigma == -sigma_p {
                        anti.offer(val, rec);
                        if let Some(js) = star {
                            if js >= j.abs() && js >= k.abs() {
                                anti_star.offer(val, rec);
                            }
                        }
                    }
                }
            }
            (all, anti, anti_star, gap, checked, count)
        })
        .collect();
    let mut acc: Acc = (Best::new(), Best::new(), Best::new(), 0.0, 0, 0);
    for p in parts {
        acc.0 = Best::merge(acc.0, p.0);
        acc.1 = Best::merge(acc.1, p.1);
        acc.2 = Best::merge(acc.2, p.2);
        acc.3 = acc.3.max(p.3);
        acc.4 += p.4;
        acc.5 += p.5;
    }
    DivisorScan {
        p,
        j_max,
        records: acc.5,
        min: acc.0.min,
        argmin: acc.0.arg,
        anti_min: acc.1.min,
        anti_argmin: acc.1.arg,
        anti_star_min: acc.2.min,
        shadow_gap: acc.3,
        shadow_checked: acc.4,
    }
}

/// Runs [`divisor_min`] at `J` and `2J` and reports the relative change of the minimum.
pub fn divisor_stability(sites: &TangentialSet, p: usize, j_max: i64, domain: IndexDomain) -> (DivisorScan, DivisorScan, f64) {
    let a = divisor_min(sites, p, j_max, domain);
    let b = divisor_min(sites, p, 2 * j_max, domain);
    let change = (a.min - b.min).abs() / a.min;
    (a, b, change)
}

/// An `ℓ ≠ 0` with `|ℓ| <= l_max` and `ω̄·ℓ = 0` exactly, if one exists.
pub fn exact_resonant_ell(sites: &TangentialSet, l_max: i64) -> Option<Vec<i64>> {
    let q = |n: i64| BigRational::from_integer(BigInt::from(n));
    lattice_ball(sites.nu(), 1, l_max).into_iter().find(|ell| {
        let mut x = SqrtRational::zero();
        for (&s, &l) in sites.sites().iter().zip(ell) {
            x.add_scaled_sqrt(s.unsigned_abs(), &q(l));
        }
        x.is_zero()
    })
}

/// Which Diophantine set is tested.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum MelnikovKind {
    /// `|ω·ℓ| >= γ⟨ℓ⟩^{−τ}`, `ℓ ≠ 0`.
    G0,
    /// `|(ω̄ − ε²m₁v)·ℓ + ε²𝔸ζ·ℓ| >= γ⟨ℓ⟩^{−τ}`, with `m₁ = w·ζ`.
    G1,
    /// The previous phase plus `σ√|j| − σ′√|k|`, for `|ℓ| <= c1`, `|j|,|k| <= c2`.
    G2 { c1: i64, c2: i64 },
    /// `|ω·ℓ + 𝔪₁ j| >= 2γ_n⟨ℓ⟩^{−τ}`, `v·ℓ + j = 0`.
    Q,
    /// First Melnikov: `|ω·ℓ + σ d_{σj}| >= 2γ_n⟨ℓ⟩^{−τ}`, `v·ℓ + j = 0`.
    First,
    /// `|ω·ℓ + σ(d_{σj} + d_{−σk})| >= 2γ_n⟨ℓ⟩^{−τ}`.
    SecondPlus,
    /// `|ω·ℓ + σ(d_{σj} − d_{σk})| >= 2γ*_n⟨ℓ⟩^{−τ}`, `j ≠ k`.
    SecondMinus,
}

impl MelnikovKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "g0" => Self::G0,
            "g1" => Self::G1,
            "g2" => Self::G2 { c1: 6, c2: 100 },
            "q" => Self::Q,
            "first" => Self::First,
            "second-plus" => Self::SecondPlus,
            "second-minus" => Self::SecondMinus,
            other => return Err(Error::Config(format!("unknown Melnikov set {other:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Cutoffs {
    pub l_max: i64,
    pub j_max: i64,
    /// Iteration index `n` in `γ_n = γ(1 + 2^{−n})`.
    pub n_index: u32,
    /// Constant in the threshold `𝙲⟨ℓ⟩^{2ν+6}γ^{−2}` above which the second-order
    /// test reduces to a `Q`-set test.
    pub delpiero_c: f64,
}

impl Default for Cutoffs {
    fn default() -> Self {
        Self {
            l_max: 50,
            j_max: 1000,
            n_index: 0,
            delpiero_c: 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Membership {
    pub pass: bool,
    /// Smallest `|value| / threshold`.
    pub worst_margin: f64,
    pub worst: Option<DivisorRecord>,
    pub checked: usize,
    /// Whether some `(ℓ, j, k)` range was cut by `j_max` rather than proved complete.
    pub truncated: bool,
}

/// Frequency-dependent data shared by all tests at one `ω`.
struct Eval<'a> {
    fb: &'a FrequencyBox,
    omega: Vec<f64>,
    phase: Vec<f64>,
    /// `ε² m₁(ζ)` with the `1/π` normalization.
    m1_eps: f64,
    zeta: Vec<f64>,
}

impl Eval<'_> {
    fn d(&self, j: i64) -> f64 {
        let e2 = self.fb.eps * self.fb.eps;
        sqrt_abs(j) + e2 * (m1(&self.fb.sites, &self.zeta) + c_j(&self.fb.sites, &self.zeta, j)) * j as f64
    }
}

struct Worst {
    margin: f64,
    rec: Option<DivisorRecord>,
    checked: usize,
    truncated: bool,
}

impl Worst {
    fn offer(&mut self, value: f64, thr: f64, rec: impl FnOnce() -> DivisorRecord) {
        self.checked += 1;
        let m = if thr > 0.0 { value.abs() / thr } else { f64::INFINITY };
        if m < self.margin {
            self.margin = m;
            self.rec = Some(rec());
        }
    }
}

fn record(ell: &[i64], j: i64, k: i64, sigma: i8, sigma_p: i8, value: f64) -> DivisorRecord {
    DivisorRecord {
        ell: ell.to_vec(),
        j,
        k,
        sigma,
        sigma_p,
        value,
        constraint_ok: true,
        trivial: false,
    }
}

/// Tests `ω` against one Diophantine set within the cutoffs.
///
/// With `stop_early`, returns at the first violation; the reported margin is
/// then an upper bound for the true worst margin.
pub fn melnikov_member_opts(
    fb: &FrequencyBox,
    omega: &DVector<f64>,
    kind: MelnikovKind,
    cut: &Cutoffs,
    stop_early: bool,
) -> Result<Membership> {
    let sites = &fb.sites;
    let nu = sites.nu();
    let e2 = fb.eps * fb.eps;
    let needs_zeta = !matches!(kind, MelnikovKind::G0);
    let zeta: Vec<f64> = if needs_zeta {
        amp_freq(sites, omega, fb.eps)?.iter().copied().collect()
    } else {
        vec![0.0; nu]
    };
    let v = sites.velocity();
    let phase: Vec<f64> = match kind {
        MelnikovKind::G1 | MelnikovKind::G2 { .. } => {
            // (ω̄ − ε²m₁v) + ε²𝔸ζ = ω − ε²(w·ζ)v
            let m1_def: f64 = sites.w().iter().zip(&zeta).map(|(&w, z)| w as f64 * z).sum();
            omega.iter().zip(&v).map(|(o, &vi)| o - e2 * m1_def * vi as f64).collect()
        }
        _ => omega.iter().copied().collect(),
    };
    let ev = Eval {
        fb,
        omega: omega.iter().copied().collect(),
        phase,
        m1_eps: e2 * m1(sites, &zeta),
        zeta,
    };
    let gamma_n = fb.gamma * (1.0 + 0.5f64.powi(cut.n_index as i32));
    let gamma_star_n = fb.gamma_star * (1.0 + 0.5f64.powi(cut.n_index as i32));
    let mut w = Worst {
        margin: f64::INFINITY,
        rec: None,
        checked: 0,
        truncated: false,
    };
    let normal = |j: i64| j != 0 && !sites.contains(j);
    let ph = |ell: &[i64], base: &[f64]| -> f64 { base.iter().zip(ell).map(|(o, &l)| o * l as f64).sum() };
    let l_hi = match kind {
        MelnikovKind::G2 { c1, .. } => c1.min(cut.l_max),
        _ => cut.l_max,
    };
    // R⁺ emptiness radius: (1/3)(√|j|+√|k|) < |(ω − 𝔪₁v)·ℓ| + 1 <= (‖ω‖∞ + |𝔪₁|‖v‖∞ + 1)|ℓ|
    let vmax = v.iter().map(|x| x.abs()).max().unwrap_or(0) as f64;
    let omax = ev.omega.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let brexit_c = 1.0 / (3.0 * (omax + ev.m1_eps.abs() * vmax + 1.0));
    for ell in lattice_ball(nu, 0, l_hi) {
        let zero = ell.iter().all(|&x| x == 0);
        let br = bracket_norm(&ell);
        let m = dot(&v, &ell);
        match kind {
            MelnikovKind::G0 | MelnikovKind::G1 => {
                if zero {
                    continue;
                }
                let thr = fb.gamma * br.powf(-fb.tau);
                let val = ph(&ell, &ev.phase);
                w.offer(val, thr, || record(&ell, 0, 0, 0, 0, val));
            }
            MelnikovKind::G2 { c2, .. } => {
                let thr = fb.gamma * br.powf(-fb.tau);
                let base = ph(&ell, &ev.phase);
                let jm = c2.min(cut.j_max);
                w.truncated |= c2 > cut.j_max;
                for j in -jm..=jm {
                    let k = j + m;
                    if !normal(j) || !normal(k) || k.abs() > jm {
                        continue;
                    }
                    for (s, sp) in [(1i8, 1i8), (1, -1), (-1, 1), (-1, -1)] {
                        if zero && s == sp && j == k {
                            continue;
                        }
                        let val = base + s as f64 * sqrt_abs(j) - sp as f64 * sqrt_abs(k);
                        w.offer(val, thr, || record(&ell, j, k, s, sp, val));
                    }
                }
            }
            MelnikovKind::Q | MelnikovKind::First => {
                let j = -m;
                if !normal(j) {
                    continue;
                }
                let thr = 2.0 * gamma_n * br.powf(-fb.tau);
                let base = ph(&ell, &ev.omega);
                if kind == MelnikovKind::Q {
                    let val = base + ev.m1_eps * j as f64;
                    w.offer(val, thr, || record(&ell, j, 0, 0, 0, val));
                } else {
                    for s in [1i8, -1] {
                        let val = base + s as f64 * ev.d(s as i64 * j);
                        w.offer(val, thr, || record(&ell, j, 0, s, 0, val));
                    }
                }
            }
            MelnikovKind::SecondPlus => {
                if zero {
                    continue;
                }
                let thr = 2.0 * gamma_n * br.powf(-fb.tau);
                let base = ph(&ell, &ev.omega);
                let radius = (br / brexit_c).powi(2).ceil() as i64;
                let jm = radius.min(cut.j_max);
                w.truncated |= radius > cut.j_max;
                for j in -jm..=jm {
                    let k = j + m;
                    if !normal(j) || !normal(k) || k.abs() > jm {
                        continue;
                    }
                    for s in [1i8, -1] {
                        let val = base + s as f64 * (ev.d(s as i64 * j) + ev.d(-(s as i64) * k));
                        w.offer(val, thr, || record(&ell, j, k, s, -s, val));
                    }
                }
            }
            MelnikovKind::SecondMinus => {
                if zero {
                    continue;
                }
                let thr = 2.0 * gamma_star_n * br.powf(-fb.tau);
                let base = ph(&ell, &ev.omega);
                let threshold = cut.delpiero_c * br.powi(2 * nu as i32 + 6) / (fb.gamma * fb.gamma);
                let jm = if threshold.is_finite() && threshold < cut.j_max as f64 {
                    threshold.ceil() as i64
                } else {
                    w.truncated = true;
                    cut.j_max
                };
                for j in -jm..=jm {
                    let k = j + m;
                    if !normal(j) || !normal(k) || j == k || k.abs() > jm {
                        continue;
                    }
                    for s in [1i8, -1] {
                        let val = base + s as f64 * (ev.d(s as i64 * j) - ev.d(s as i64 * k));
                        w.offer(val, thr, || record(&ell, j, k, s, s, val));
                    }
                }
                // beyond the threshold the same-sign pairs are covered by Q_{ℓ, j−k}(γ, ν+2)
                if m != 0 {
                    let q_thr = fb.gamma * br.powi(-(nu as i32 + 2));
                    let val = base + ev.m1_eps * (-m) as f64;
                    w.offer(val, q_thr, || record(&ell, -m, 0, 0, 0, val));
                }
            }
        }
        if stop_early && w.margin < 1.0 {
            break;
        }
    }
    Ok(Membership {
        pass: w.margin >= 1.0,
        worst_margin: w.margin,
        worst: w.rec,
        checked: w.checked,
        truncated: w.truncated,
    })
}

pub fn melnikov_member(fb: &FrequencyBox, omega: &DVector<f64>, kind: MelnikovKind, cut: &Cutoffs) -> Result<Membership> {
    melnikov_member_opts(fb, omega, kind, cut, false)
}

/// Fast `G0` test: precomputed `ℓ` list and thresholds, first violation wins.
fn g0_excluded(omega: &[f64], ells: &[(Vec<i64>, f64)]) -> bool {
    ells.iter().any(|(ell, thr)| {
        let x: f64 = omega.iter().zip(ell).map(|(o, &l)| o * l as f64).sum();
        x.abs() < *thr
    })
}

/// One row of a measure table.
#[derive(Clone, Debug, Serialize)]
pub struct MeasureRow {
    pub eps: f64,
    pub samples: usize,
    pub excluded: usize,
    pub fraction: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub gamma: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MeasureTable {
    pub kind: MelnikovKind,
    pub a: f64,
    pub seed: u64,
    pub shards: usize,
    pub rows: Vec<MeasureRow>,
    /// Least-squares slope of `log fraction` against `log ε`, over rows with a positive fraction.
    pub slope: Option<f64>,
    /// Strictly decreasing as `ε` decreases.
    pub monotone: bool,
    pub predicted_slope: f64,
}

/// 95% Wilson score interval.
pub fn wilson_interval(k: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054_f64;
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let denom = 1.0 + z * z / n_f;
    let centre = (p + z * z / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z * z / (4.0 * n_f * n_f)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

/// Samples `ζ` uniformly in `[1,2]^ν`, maps to `ω = freq_amp(ζ, ε)` and
/// counts samples outside the requested set.
///
/// Shard `s` draws its samples from a ChaCha20 stream `s` keyed by `seed`,
/// so the table depends only on `(seed, shards)`.
#[allow(clippy::too_many_arguments)]
pub fn measure_estimate(
    sites: &TangentialSet,
    a: f64,
    kind: MelnikovKind,
    cut: &Cutoffs,
    eps_list: &[f64],
    samples: usize,
    seed: u64,
    shards: usize,
    gamma_override: Option<f64>,
) -> Result<MeasureTable> {
    if samples == 0 || shards == 0 {
        return Err(Error::Config("samples and shards must be positive".into()));
    }
    let nu = sites.nu();
    let mut rows = Vec::new();
    for &eps in eps_list {
        let mut fb = FrequencyBox::new(sites, eps, a)?;
        if let Some(g) = gamma_override {
            fb = fb.with_gamma(g);
        }
        // ℓ and −ℓ give the same |ω·ℓ|
        let g0_ells: Vec<(Vec<i64>, f64)> = lattice_ball(nu, 1, cut.l_max)
            .into_iter()
            .filter(|e| e.iter().find(|&&x| x != 0).is_some_and(|&x| x > 0))
            .map(|e| {
                let t = fb.gamma * bracket_norm(&e).powf(-fb.tau);
                (e, t)
            })
            .collect();
        let per = samples / shards;
        let extra = samples % shards;
        let counts: Vec<Result<usize>> = (0..shards)
            .into_par_iter()
            .map(|s| {
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                rng.set_stream(s as u64);
                let n_s = per + usize::from(s < extra);
                let mut bad = 0usize;
                for _ in 0..n_s {
                    let zeta: Vec<f64> = (0..nu).map(|_| rng.gen_range(1.0..2.0)).collect();
                    let omega = freq_amp(sites, &zeta, eps)?;
                    let out = match kind {
                        MelnikovKind::G0 => g0_excluded(omega.as_slice(), &g0_ells),
                        _ => !melnikov_member_opts(&fb, &omega, kind, cut, true)?.pass,
                    };
                    bad += usize::from(out);
                }
                Ok(bad)
            })
            .collect();
        let mut excluded = 0;
        for c in counts {
            excluded += c?;
        }
        let (ci_lo, ci_hi) = wilson_interval(excluded, samples);
        rows.push(MeasureRow {
            eps,
            samples,
            excluded,
            fraction: excluded as f64 / samples as f64,
            ci_lo,
            ci_hi,
            gamma: fb.gamma,
        });
    }
    let pos: Vec<&MeasureRow> = rows.iter().filter(|r| r.fraction > 0.0).collect();
    let slope = if pos.len() == rows.len() {
        fit_slope(
            &pos.iter().map(|r| r.eps.ln()).collect::<Vec<_>>(),
            &pos.iter().map(|r| r.fraction.ln()).collect::<Vec<_>>(),
        )
    } else {
        None
    };
    let mut sorted = rows.clone();
    sorted.sort_by(|x, y| y.eps.total_cmp(&x.eps));
    let monotone = sorted.len() >= 2 && sorted.windows(2).all(|w| w[1].fraction < w[0].fraction);
    Ok(MeasureTable {
        kind,
        a,
        seed,
        shards,
        rows,
        slope,
        monotone,
        predicted_slope: a,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: &[i64]) -> TangentialSet {
        TangentialSet::new(x).unwrap()
    }

    #[test]
    fn delta_examples() {
        let four = s(&[4]);
        let r = delta(&four, 1, &[1], 1, 5, 1, 9).unwrap();
        assert!(r.constraint_ok);
        assert!((r.value - (2.0 + 5f64.sqrt() - 3.0)).abs() < 1e-15);
        let t = delta(&four, 1, &[0], 1, 7, 1, 7).unwrap();
        assert!(t.trivial && t.value == 0.0);
        assert!(delta(&four, 1, &[2], 1, 1, 1, 9).is_err());
    }

    #[test]
    fn delta_antisymmetry_is_exact() {
        let st = s(&[2, 3]);
        for (ell, j, k) in [(vec![1, 0], 5, 7), (vec![1, -1], -4, -5), (vec![2, 1], 1, 8)] {
            let neg: Vec<i64> = ell.iter().map(|x| -x).collect();
            for (a, b) in [(1i8, 1i8), (1, -1), (-1, 1)] {
                let x = delta_exact(&st, &ell, a, j, b, k);
                let y = delta_exact(&st, &neg, b, k, a, j);
                assert!((&x + &y).is_zero());
            }
        }
    }

    #[test]
    fn lattice_ball_counts() {
        assert_eq!(lattice_ball(2, 0, 1).len(), 5);
        assert_eq!(lattice_ball(2, 1, 1).len(), 4);
        assert_eq!(lattice_ball(3, 0, 2).len(), 25);
    }

    #[test]
    fn small_scan_is_positive() {
        let r = divisor_min(&s(&[2, 3]), 1, 500, IndexDomain::Nonzero);
        assert!(r.min > 0.0);
        assert!(r.anti_star_min >= 2.0 / 9.0 - 1e-12);
        assert!(r.shadow_gap < 1e-12);
    }

    #[test]
    fn exact_zero_phase_fails_g0() {
        let st = s(&[1, 4]);
        let ell = exact_resonant_ell(&st, 3).unwrap();
        assert_eq!(ell.iter().map(|x| x.abs()).collect::<Vec<_>>(), vec![2, 1]);
        let fb = FrequencyBox::new(&st, 0.05, 0.2).unwrap();
        let m = melnikov_member(&fb, &st.omega_bar(), MelnikovKind::G0, &Cutoffs::default()).unwrap();
        assert!(!m.pass);
    }

    #[test]
    fn zero_gamma_excludes_nothing() {
        let st = s(&[2, 3]);
        let t = measure_estimate(&st, 0.2, MelnikovKind::G0, &Cutoffs::default(), &[0.1], 2000, 1, 4, Some(0.0)).unwrap();
        assert_eq!(t.rows[0].excluded, 0);
    }

    #[test]
    fn wilson_is_sane() {
        let (lo, hi) = wilson_interval(50, 1000);
        assert!(lo < 0.05 && hi > 0.05 && lo > 0.03 && hi < 0.07);
    }
}
