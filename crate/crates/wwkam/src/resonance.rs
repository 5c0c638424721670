//! Exact classification of n-wave resonances for the dispersion law `√|j|`.

use std::collections::BTreeSet;
use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

use crate::algebraic::{frequency_sum, SqrtRational};
use crate::spectrum::TangentialSet;

/// Largest order accepted by the enumerator.
pub const MAX_ORDER: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Class {
    NotResonant,
    Trivial,
    NonTrivial,
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Class::NotResonant => "not_resonant",
            Class::Trivial => "trivial",
            Class::NonTrivial => "nontrivial",
        };
        f.write_str(s)
    }
}

/// A tuple of signed wavenumbers `(j_i, σ_i)`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ResonanceTuple {
    pub pairs: Vec<(i64, i8)>,
}

impl ResonanceTuple {
    pub fn new(pairs: Vec<(i64, i8)>) -> Self {
        debug_assert!(pairs.iter().all(|&(j, s)| j != 0 && (s == 1 || s == -1)));
        Self { pairs }
    }

    /// Same tuple with pairs sorted, the form used in certificates.
    pub fn canonical(&self) -> Self {
        let mut pairs = self.pairs.clone();
        pairs.sort_unstable();
        Self { pairs }
    }

    pub fn order(&self) -> usize {
        self.pairs.len()
    }

    pub fn momentum(&self) -> i64 {
        self.pairs.iter().map(|&(j, s)| s as i64 * j).sum()
    }

    pub fn frequency(&self) -> SqrtRational {
        frequency_sum(&self.pairs)
    }

    pub fn frequency_f64(&self) -> f64 {
        self.pairs.iter().map(|&(j, s)| s as f64 * (j.abs() as f64).sqrt()).sum()
    }

    pub fn is_trivial_pattern(&self) -> bool {
        let n = self.pairs.len();
        if n % 2 == 1 {
            return false;
        }
        let mut plus: Vec<i64> = self.pairs.iter().filter(|p| p.1 > 0).map(|p| p.0).collect();
        let mut minus: Vec<i64> = self.pairs.iter().filter(|p| p.1 < 0).map(|p| p.0).collect();
        if plus.len() != minus.len() {
            return false;
        }
        plus.sort_unstable();
        minus.sort_unstable();
        plus == minus
    }

    pub fn flipped(&self) -> Self {
        Self {
            pairs: self.pairs.iter().map(|&(j, s)| (j, -s)).collect(),
        }
    }
}

impl fmt::Display for ResonanceTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .pairs
            .iter()
            .map(|&(j, s)| format!("({j},{})", if s > 0 { '+' } else { '-' }))
            .collect();
        write!(f, "{}", parts.join(""))
    }
}

pub fn classify(t: &ResonanceTuple) -> Class {
    if t.momentum() != 0 {
        return Class::NotResonant;
    }
    if t.frequency_f64().abs() > 1e-3 {
        return Class::NotResonant;
    }
    if !t.frequency().is_zero() {
        return Class::NotResonant;
    }
    if t.is_trivial_pattern() {
        Class::Trivial
    } else {
        Class::NonTrivial
    }
}

/// The two-parameter quartet family with sign pattern `(+,−,+,−)`.
pub fn benjamin_feir_tuple(lambda: i64, b: i64) -> ResonanceTuple {
    let b1 = b + 1;
    ResonanceTuple::new(vec![
        (-lambda * b * b, 1),
        (lambda * b1 * b1, -1),
        (lambda * (b * b + b + 1) * (b * b + b + 1), 1),
        (lambda * b1 * b1 * b * b, -1),
    ])
}

/// Quartets for every `λ` in `lambdas` (zero skipped) and every `b` in `bs` (`b >= 1`).
pub fn benjamin_feir(lambdas: std::ops::RangeInclusive<i64>, bs: std::ops::RangeInclusive<i64>) -> Vec<ResonanceTuple> {
    let mut out = Vec::new();
    for l in lambdas {
        if l == 0 {
            continue;
        }
        for b in bs.clone() {
            if b >= 1 {
                out.push(benjamin_feir_tuple(l, b));
            }
        }
    }
    out
}

/// Result of the scan of one order.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ScanReport {
    pub order: usize,
    pub radius: i64,
    pub candidates: usize,
    pub nontrivial: Vec<ResonanceTuple>,
    /// Smallest `|𝓡|` over momentum-conserving non-resonant candidates.
    pub min_abs_frequency: f64,
}

/// Multisets of size `k` drawn from `items`, in lexicographic index order.
fn multisets(n_items: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n_items, k, &mut cur, &mut out);
    out
}

/// Non-trivial resonances of order `n` with at most one index outside `S`.
///
/// Since a tuple is unordered, it suffices to pick `n − 1` signed sites from
/// `S` as a multiset and solve the momentum constraint for the last index,
/// mirroring the elimination of the last index in a full ball scan. The
/// remaining index may lie in `S` or outside it, with `|j| <= (n−1)·max|S|`.
pub fn enumerate_low_outside(n: usize, sites: &TangentialSet) -> ScanReport {
    assert!((3..=MAX_ORDER).contains(&n), "order {n} outside 3..={MAX_ORDER}");
    let radius = (n as i64 - 1) * sites.max_abs();
    let mut signed: Vec<(i64, i8)> = Vec::new();
    for &k in sites.sites() {
        signed.push((k, 1));
        signed.push((k, -1));
    }
    let choices = multisets(signed.len(), n - 1);
    let shards: Vec<(usize, BTreeSet<ResonanceTuple>, f64)> = choices
        .par_chunks(256)
        .map(|chunk| {
            let mut found = BTreeSet::new();
            let mut cands = 0usize;
            let mut min_r = f64::INFINITY;
            for pick in chunk {
                let base: Vec<(i64, i8)> = pick.iter().map(|&i| signed[i]).collect();
                let m: i64 = base.iter().map(|&(j, s)| s as i64 * j).sum();
                for last_s in [1i8, -1] {
                    // σ_n j_n = −m
                    let j = -m * last_s as i64;
                    if j == 0 || j.abs() > radius {
                        continue;
                    }
                    let mut pairs = base.clone();
                    pairs.push((j, last_s));
                    let t = ResonanceTuple::new(pairs).canonical();
                    cands += 1;
                    match classify(&t) {
                        Class::NonTrivial => {
                            found.insert(t);
                        }
                        Class::Trivial => {}
                        Class::NotResonant => min_r = min_r.min(t.frequency_f64().abs()),
                    }
                }
            }
            (cands, found, min_r)
        })
        .collect();
    let mut report = ScanReport {
        order: n,
        radius,
        min_abs_frequency: f64::INFINITY,
        ..Default::default()
    };
    let mut all = BTreeSet::new();
    for (c, f, r) in shards {
        report.candidates += c;
        all.extend(f);
        report.min_abs_frequency = report.min_abs_frequency.min(r);
    }
    report.nontrivial = all.into_iter().collect();
    report
}

/// Brute-force scan of the full ball, used to cross-check the enumerator.
pub fn enumerate_ball(n: usize, sites: &TangentialSet, radius: i64) -> Vec<ResonanceTuple> {
    fn rec(
        n: usize,
        radius: i64,
        sites: &TangentialSet,
        cur: &mut Vec<(i64, i8)>,
        out: &mut BTreeSet<ResonanceTuple>,
    ) {
        if cur.len() == n - 1 {
            let m: i64 = cur.iter().map(|&(j, s)| s as i64 * j).sum();
            for s in [1i8, -1] {
                let j = -m * s as i64;
                if j == 0 || j.abs() > radius {
                    continue;
                }
                let mut pairs = cur.clone();
                pairs.push((j, s));
                let t = ResonanceTuple::new(pairs).canonical();
                let outside = t.pairs.iter().filter(|p| !sites.contains(p.0)).count();
                if outside <= 1 && classify(&t) == Class::NonTrivial {
                    out.insert(t);
                }
            }
            return;
        }
        for j in -radius..=radius {
            if j == 0 {
                continue;
            }
            for s in [1i8, -1] {
                cur.push((j, s));
                rec(n, radius, sites, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = BTreeSet::new();
    rec(n, radius, sites, &mut Vec::new(), &mut out);
    out.into_iter().collect()
}

/// Outcome of the genericity test.
#[derive(Clone, Debug, Serialize)]
pub struct Genericity {
    pub generic: bool,
    pub n_max: usize,
    /// A pair `(j, −j)` inside `S`, if any.
    pub bis_violation: Option<(i64, i64)>,
    pub certificate: Option<ResonanceTuple>,
    pub scans: Vec<ScanReport>,
}

impl Genericity {
    pub fn certificate_text(&self) -> String {
        if let Some((a, b)) = self.bis_violation {
            return format!("sites {a} and {b} are opposite");
        }
        match &self.certificate {
            Some(t) => format!("order-{} resonance {t}", t.order()),
            None => "none".into(),
        }
    }

    /// Smallest non-zero `|𝓡|` met during the scans.
    pub fn min_abs_frequency(&self) -> f64 {
        self.scans.iter().map(|s| s.min_abs_frequency).fold(f64::INFINITY, f64::min)
    }
}

pub fn is_generic(sites: &TangentialSet, n_max: usize) -> Genericity {
    let n_max = n_max.min(MAX_ORDER);
    let bis = sites.bis_violation();
    let mut scans = Vec::new();
    let mut certificate = None;
    if bis.is_none() {
        for n in 3..=n_max {
            let r = enumerate_low_outside(n, sites);
            let hit = r.nontrivial.first().cloned();
            scans.push(r);
            if hit.is_some() {
                certificate = hit;
                break;
            }
        }
    }
    Genericity {
        generic: bis.is_none() && certificate.is_none(),
        n_max,
        bis_violation: bis,
        certificate,
        scans,
    }
}
