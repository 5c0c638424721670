//! Truncated spectral dynamics: Hamiltonian vector fields, an adaptive
//! Dormand–Prince integrator, frequency regression and a finite Floquet
//! operator at the approximate torus.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamiltonian::{HamPolynomial, Mode, Monomial};
use crate::spectrum::{freq_amp, kappa, TangentialSet};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Amplitudes `z_j` for `0 < |j| <= K` at time `t`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectralState {
    pub cutoff: i32,
    pub z: Vec<Complex64>,
    pub t: f64,
}

/// Position of mode `j` in a state vector with cutoff `k`.
pub fn mode_index(k: i32, j: i32) -> usize {
    debug_assert!(j != 0 && j.abs() <= k);
    if j < 0 {
        (j + k) as usize
    } else {
        (j + k - 1) as usize
    }
}

/// Inverse of [`mode_index`].
pub fn index_mode(k: i32, i: usize) -> i32 {
    let i = i as i32;
    if i < k {
        i - k
    } else {
        i - k + 1
    }
}

impl SpectralState {
    pub fn zeros(cutoff: i32) -> Self {
        Self {
            cutoff,
            z: vec![Complex64::new(0.0, 0.0); 2 * cutoff as usize],
            t: 0.0,
        }
    }

    pub fn get(&self, j: i32) -> Complex64 {
        if j == 0 || j.abs() > self.cutoff {
            Complex64::new(0.0, 0.0)
        } else {
            self.z[mode_index(self.cutoff, j)]
        }
    }

    pub fn set(&mut self, j: i32, v: Complex64) {
        let i = mode_index(self.cutoff, j);
        self.z[i] = v;
    }

    pub fn actions(&self) -> Vec<f64> {
        self.z.iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn sup_norm(&self) -> f64 {
        self.z.iter().fold(0.0, |a, c| a.max(c.norm()))
    }
}

/// `ż_k = −i ∂H/∂z̄_k` compiled from the coefficient map.
#[derive(Clone, Debug)]
pub struct VectorField {
    cutoff: i32,
    /// `(target, −i·coefficient·multiplicity, remaining factors as (index, conjugated))`.
    terms: Vec<(usize, Complex64, Vec<(usize, bool)>)>,
}

impl VectorField {
    pub fn new(h: &HamPolynomial, cutoff: i32) -> Result<Self> {
        if h.max_degree() > 4 {
            return Err(Error::Domain(format!("vector field supports degree <= 4, got {}", h.max_degree())));
        }
        let mut terms = Vec::new();
        for (m, c) in h.terms() {
            if m.max_abs_j() > cutoff {
                continue;
            }
            let mut seen: Vec<Mode> = Vec::new();
            for &md in m.modes() {
                if md.s > 0 || seen.contains(&md) {
                    continue;
                }
                seen.push(md);
                let mult = m.multiplicity(md) as f64;
                let rest = m.without(md).unwrap();
                let factors = rest
                    .modes()
                    .iter()
                    .map(|x| (mode_index(cutoff, x.j), x.s < 0))
                    .collect();
                terms.push((mode_index(cutoff, md.j), -I * c * mult, factors));
            }
        }
        Ok(Self { cutoff, terms })
    }

    pub fn cutoff(&self) -> i32 {
        self.cutoff
    }

    pub fn eval(&self, z: &[Complex64], out: &mut [Complex64]) {
        out.iter_mut().for_each(|x| *x = Complex64::new(0.0, 0.0));
        for (t, c, f) in &self.terms {
            let mut p = *c;
            for &(i, cj) in f {
                p *= if cj { z[i].conj() } else { z[i] };
            }
            out[*t] += p;
        }
    }
}

/// Derivative of the state under `H` (compile once with [`VectorField`] for repeated use).
pub fn rhs_full(h: &HamPolynomial, s: &SpectralState) -> Result<Vec<Complex64>> {
    let f = VectorField::new(h, s.cutoff)?;
    let mut out = vec![Complex64::new(0.0, 0.0); s.z.len()];
    f.eval(&s.z, &mut out);
    Ok(out)
}

/// Closed-form vector field of `H^(2) + H_FB^(4)`.
pub fn rhs_bnf_into(cutoff: i32, z: &[Complex64], out: &mut [Complex64]) {
    let k = cutoff;
    let act = |j: i32| -> f64 {
        if j == 0 || j.abs() > k {
            0.0
        } else {
            z[mode_index(k, j)].norm_sqr()
        }
    };
    // prefix sums of j|j||z_j|² over |j| < n
    let mut below = vec![0.0; (k + 1) as usize];
    for n in 1..=k as usize {
        let m = (n - 1) as i32;
        let add = if m == 0 {
            0.0
        } else {
            let a = (m * m) as f64;
            a * act(m) - a * act(-m)
        };
        below[n] = below[n - 1] + add;
    }
    for i in 0..z.len() {
        let n = index_mode(k, i);
        let an = n.abs() as f64;
        let nf = n as f64;
        let zn = z[i];
        let mut freq = an.sqrt();
        freq += below[n.unsigned_abs() as usize] * nf / PI;
        freq += an.powi(3) * (act(n) - 2.0 * act(-n)) / (2.0 * PI);
        let mut cross = 0.0;
        for k1 in (n.abs() + 1)..=k {
            let k1s = k1 * n.signum();
            cross += k1 as f64 * (act(-k1s) - act(k1s));
        }
        freq -= an * an * cross / PI;
        out[i] = -I * freq * zn;
    }
}

pub fn rhs_bnf(s: &SpectralState) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); s.z.len()];
    rhs_bnf_into(s.cutoff, &s.z, &mut out);
    out
}

/// Integration statistics and sampled states.
#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub cutoff: i32,
    pub times: Vec<f64>,
    pub states: Vec<Vec<Complex64>>,
    pub accepted: usize,
    pub rejected: usize,
}

// Dormand–Prince 5(4) tableau; the fields are autonomous so the nodes are not needed
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Adaptive Dormand–Prince integration, sampled at `n_out + 1` equally spaced times.
///
/// The error of a step is `max_i |e_i| / (tol (1 + max(|y_i|, |y_i'|)))`; a step
/// is accepted when it is at most one. The controller is a pure function of the
/// error history, so runs are deterministic.
pub fn integrate<F>(rhs: F, y0: &[Complex64], cutoff: i32, t_end: f64, tol: f64, n_out: usize) -> Result<Trajectory>
where
    F: Fn(&[Complex64], &mut [Complex64]),
{
    if !(1e-12..=1e-6).contains(&tol) {
        return Err(Error::Config(format!("tolerance {tol} outside [1e-12, 1e-6]")));
    }
    if !(t_end > 0.0) || n_out == 0 {
        return Err(Error::Config("need T > 0 and at least one output".into()));
    }
    let n = y0.len();
    let zero = Complex64::new(0.0, 0.0);
    let mut k = vec![vec![zero; n]; 7];
    let mut y = y0.to_vec();
    let mut tmp = vec![zero; n];
    let mut ynew = vec![zero; n];
    let mut t = 0.0;
    let mut h = (tol.powf(0.2) * 0.1).min(t_end / n_out as f64);
    let mut traj = Trajectory {
        cutoff,
        times: vec![0.0],
        states: vec![y.clone()],
        accepted: 0,
        rejected: 0,
    };
    rhs(&y, &mut k[0]);
    for out in 1..=n_out {
        let t_target = t_end * out as f64 / n_out as f64;
        while t < t_target {
            let last = t + h >= t_target;
            let step = if last { t_target - t } else { h };
            for s in 1..7 {
                let (head, tail) = k.split_at_mut(s);
                for i in 0..n {
                    let mut acc = y[i];
                    for (r, kr) in head.iter().enumerate() {
                        acc += kr[i] * (step * A[s][r]);
                    }
                    tmp[i] = acc;
                }
                rhs(&tmp, &mut tail[0]);
            }
            let mut err: f64 = 0.0;
            for i in 0..n {
                let mut y5 = y[i];
                let mut e = zero;
                for s in 0..7 {
                    y5 += k[s][i] * (step * B5[s]);
                    e += k[s][i] * (step * (B5[s] - B4[s]));
                }
                ynew[i] = y5;
                let sc = tol * (1.0 + y[i].norm().max(y5.norm()));
                err = err.max(e.norm() / sc);
            }
            if err <= 1.0 {
                t = if last { t_target } else { t + step };
                std::mem::swap(&mut y, &mut ynew);
                // FSAL: the last stage is the derivative at the new point
                let (first, rest) = k.split_at_mut(6);
                std::mem::swap(&mut first[0], &mut rest[0]);
                traj.accepted += 1;
                if !last || step >= h {
                    let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                    h = step * fac;
                }
            } else {
                traj.rejected += 1;
                h = step * (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            }
            if h < 1e-14 * t_end.max(1.0) {
                return Err(Error::Numerical(format!("step size underflow at t = {t}")));
            }
        }
        traj.times.push(t_target);
        traj.states.push(y.clone());
    }
    Ok(traj)
}

/// Frequency fit of one mode.
#[derive(Clone, Debug, Serialize)]
pub struct FrequencyFit {
    pub mode: i32,
    /// `−d arg z_j / dt`, positive for the linear flow.
    pub frequency: f64,
    pub stderr: f64,
    /// Set when the amplitude vanished and the mode was skipped.
    pub skipped: bool,
    /// Number of sample steps where the phase increment exceeded `π/2`.
    pub jumps: usize,
}

/// Linear regression of the unwrapped phase of each requested mode.
pub fn measured_frequencies(traj: &Trajectory, modes: &[i32]) -> Vec<FrequencyFit> {
    let ts = &traj.times;
    let n = ts.len() as f64;
    let mt = ts.iter().sum::<f64>() / n;
    let stt: f64 = ts.iter().map(|t| (t - mt).powi(2)).sum();
    modes
        .iter()
        .map(|&j| {
            let idx = mode_index(traj.cutoff, j);
            let vals: Vec<Complex64> = traj.states.iter().map(|s| s[idx]).collect();
            let amp_min = vals.iter().fold(f64::INFINITY, |a, c| a.min(c.norm()));
            if amp_min < 1e-300 || ts.len() < 3 {
                return FrequencyFit {
                    mode: j,
                    frequency: f64::NAN,
                    stderr: f64::NAN,
                    skipped: true,
                    jumps: 0,
                };
            }
            let mut phase = Vec::with_capacity(vals.len());
            let mut prev = vals[0].arg();
            let mut acc = prev;
            let mut jumps = 0;
            phase.push(acc);
            for c in &vals[1..] {
                let a = c.arg();
                let mut d = a - prev;
                d -= (2.0 * PI) * (d / (2.0 * PI)).round();
                if d.abs() > PI / 2.0 {
                    jumps += 1;
                }
                acc += d;
                phase.push(acc);
                prev = a;
            }
            let mp = phase.iter().sum::<f64>() / n;
            let stp: f64 = ts.iter().zip(&phase).map(|(t, p)| (t - mt) * (p - mp)).sum();
            let slope = stp / stt;
            let resid: f64 = ts
                .iter()
                .zip(&phase)
                .map(|(t, p)| (p - mp - slope * (t - mt)).powi(2))
                .sum();
            let stderr = (resid / (n - 2.0) / stt).sqrt();
            FrequencyFit {
                mode: j,
                frequency: -slope,
                stderr,
                skipped: false,
                jumps,
            }
        })
        .collect()
}

/// Leading-order torus `z_j(φ) = ε√ζ_j e^{−iφ_j}`, `j ∈ S`, with `ω = freq_amp(ζ, ε)`.
#[derive(Clone, Debug, Serialize)]
pub struct ApproxSolution {
    pub sites: TangentialSet,
    pub zeta: Vec<f64>,
    pub eps: f64,
    pub omega: Vec<f64>,
}

impl ApproxSolution {
    pub fn new(sites: &TangentialSet, zeta: &[f64], eps: f64) -> Result<Self> {
        let omega = freq_amp(sites, zeta, eps)?;
        Ok(Self {
            sites: sites.clone(),
            zeta: zeta.to_vec(),
            eps,
            omega: omega.iter().copied().collect(),
        })
    }

    /// Same torus rotating with the linear frequencies `ω̄`.
    pub fn with_linear_frequencies(mut self) -> Self {
        self.omega = self.sites.omega_bar().iter().copied().collect();
        self
    }

    /// Fourier amplitude of mode `j` at angles `φ`.
    pub fn mode(&self, j: i64, phi: &[f64]) -> Complex64 {
        match self.sites.index_of(j) {
            Some(i) => Complex64::from_polar(self.eps * self.zeta[i].sqrt(), -phi[i]),
            None => Complex64::new(0.0, 0.0),
        }
    }

    pub fn state(&self, cutoff: i32, phi: &[f64]) -> SpectralState {
        let mut s = SpectralState::zeros(cutoff);
        for &j in self.sites.sites() {
            s.set(j as i32, self.mode(j, phi));
        }
        s
    }

    /// Physical profile `u(φ, x) = (2π)^{−1/2} Σ_j z_j(φ) e^{ijx}`.
    pub fn profile(&self, phi: &[f64], x: f64) -> Complex64 {
        let norm = (2.0 * PI).sqrt();
        self.sites
            .sites()
            .iter()
            .map(|&j| self.mode(j, phi) * Complex64::from_polar(1.0, j as f64 * x))
            .sum::<Complex64>()
            / norm
    }
}

/// `sup_φ ‖ω·∂_φ z − X_H(z)‖_{ℓ²}` over an `n^ν` grid of angles.
pub fn residual(field: &VectorField, approx: &ApproxSolution, n_grid: usize) -> f64 {
    let nu = approx.sites.nu();
    let k = field.cutoff();
    let total = n_grid.pow(nu as u32);
    let mut worst: f64 = 0.0;
    let mut out = vec![Complex64::new(0.0, 0.0); 2 * k as usize];
    for flat in 0..total {
        let mut rem = flat;
        let phi: Vec<f64> = (0..nu)
            .map(|_| {
                let c = rem % n_grid;
                rem /= n_grid;
                2.0 * PI * c as f64 / n_grid as f64
            })
            .collect();
        let s = approx.state(k, &phi);
        field.eval(&s.z, &mut out);
        let mut norm = 0.0;
        for (i, o) in out.iter().enumerate() {
            let j = index_mode(k, i) as i64;
            let lhs = match approx.sites.index_of(j) {
                Some(p) => -I * approx.omega[p] * s.z[i],
                None => Complex64::new(0.0, 0.0),
            };
            norm += (lhs - o).norm_sqr();
        }
        worst = worst.max(norm.sqrt());
    }
    worst
}

/// Residual norms over a list of `ε` and the fitted log-log exponent.
pub fn residual_scaling(field: &VectorField, base: &ApproxSolution, eps_list: &[f64], n_grid: usize, linear: bool) -> Result<(Vec<f64>, Option<f64>)> {
    let mut r = Vec::new();
    for &e in eps_list {
        let mut a = ApproxSolution::new(&base.sites, &base.zeta, e)?;
        if linear {
            a = a.with_linear_frequencies();
        }
        r.push(residual(field, &a, n_grid));
    }
    let pairs: Vec<(f64, f64)> = eps_list.iter().zip(&r).filter(|(_, &v)| v > 0.0).map(|(e, v)| (e.ln(), v.ln())).collect();
    let slope = if pairs.len() == eps_list.len() {
        crate::divisors::fit_slope(&pairs.iter().map(|p| p.0).collect::<Vec<_>>(), &pairs.iter().map(|p| p.1).collect::<Vec<_>>())
    } else {
        None
    };
    Ok((r, slope))
}

/// Largest Floquet matrix accepted.
pub const FLOQUET_DIM_CAP: usize = 6000;

/// Label of a basis vector `e^{iℓ·φ} e_j` in the `h` (`σ = +`) or conjugate (`σ = −`) component.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct FloquetLabel {
    pub ell: Vec<i64>,
    pub j: i64,
    pub sigma: i8,
}

#[derive(Clone, Debug, Serialize)]
pub struct FloquetMatch {
    pub label: FloquetLabel,
    pub predicted_im: f64,
    pub eigen_re: f64,
    pub eigen_im: f64,
    pub distance: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FloquetReport {
    pub eps: f64,
    pub dimension: usize,
    pub blocks: usize,
    pub eigenvalues: Vec<(f64, f64)>,
    /// Interior normal labels matched to the nearest eigenvalue of their block.
    pub matches: Vec<FloquetMatch>,
    pub max_distance: f64,
    /// Same distance against the uncorrected `i(ω·ℓ + σ√|j|)`.
    pub max_distance_uncorrected: f64,
}

/// Options for [`floquet_spectrum`].
#[derive(Clone, Debug, Serialize)]
pub struct FloquetOptions {
    pub l_max: i64,
    pub j_max: i64,
    /// Keep the tangential modes in the basis so that couplings through them are present.
    pub include_tangential: bool,
    /// Labels with `|ℓ| <= l_max − margin_l` and `|j| <= j_max − margin_j` are scored.
    pub margin_l: i64,
    pub margin_j: i64,
}

impl FloquetOptions {
    pub fn new(l_max: i64, j_max: i64, sites: &TangentialSet) -> Self {
        Self {
            l_max,
            j_max,
            include_tangential: true,
            margin_l: 1,
            margin_j: sites.max_abs(),
        }
    }
}

/// Second derivatives of `H` at the torus, as trigonometric polynomials in `φ`.
///
/// Entry `(j, k, conj)` maps to `{ℓ_r: coefficient}` for `∂²H/∂z̄_j∂z_k`
/// (`conj = false`) or `∂²H/∂z̄_j∂z̄_k` (`conj = true`).
type Hessian = BTreeMap<(i64, i64, bool), BTreeMap<Vec<i64>, Complex64>>;

fn torus_hessian(h: &HamPolynomial, approx: &ApproxSolution, basis: &dyn Fn(i64) -> bool) -> Hessian {
    let sites = &approx.sites;
    let nu = sites.nu();
    let mut out: Hessian = BTreeMap::new();
    let amp: Vec<f64> = approx.zeta.iter().map(|z| approx.eps * z.sqrt()).collect();
    for (m, c) in h.terms() {
        if m.degree() < 2 {
            continue;
        }
        let mut done_a: Vec<Mode> = Vec::new();
        for &a in m.modes() {
            if a.s > 0 || done_a.contains(&a) || !basis(a.j as i64) {
                continue;
            }
            done_a.push(a);
            let ma = m.multiplicity(a) as f64;
            let r1 = m.without(a).unwrap();
            let mut done_b: Vec<Mode> = Vec::new();
            for &b in r1.modes() {
                if done_b.contains(&b) || !basis(b.j as i64) {
                    continue;
                }
                done_b.push(b);
                let mb = r1.multiplicity(b) as f64;
                let r2 = r1.without(b).unwrap();
                let mut val = c * ma * mb;
                let mut ell = vec![0i64; nu];
                let mut ok = true;
                for x in r2.modes() {
                    match sites.index_of(x.j as i64) {
                        Some(p) => {
                            val *= amp[p];
                            ell[p] += if x.s > 0 { -1 } else { 1 };
                        }
                        None => {
                            ok = false;
                            break;
                        }
                    }
                }
                if !ok {
                    continue;
                }
                *out.entry((a.j as i64, b.j as i64, b.s < 0))
                    .or_default()
                    .entry(ell)
                    .or_insert(Complex64::new(0.0, 0.0)) += val;
            }
        }
    }
    out
}

/// Finite Floquet operator `ω·∂_φ + i[[A, B], [−B̄, −Ā]]` and its spectrum.
pub fn floquet_spectrum(h: &HamPolynomial, approx: &ApproxSolution, opts: &FloquetOptions) -> Result<FloquetReport> {
    let sites = &approx.sites;
    let nu = sites.nu();
    let in_basis = |j: i64| j != 0 && j.abs() <= opts.j_max && (opts.include_tangential || !sites.contains(j));
    let ells = crate::divisors::lattice_ball(nu, 0, opts.l_max);
    let js: Vec<i64> = (-opts.j_max..=opts.j_max).filter(|&j| in_basis(j)).collect();
    let mut labels = Vec::new();
    for ell in &ells {
        for &j in &js {
            for sigma in [1i8, -1] {
                labels.push(FloquetLabel {
                    ell: ell.clone(),
                    j,
                    sigma,
                });
            }
        }
    }
    let dim = labels.len();
    if dim > FLOQUET_DIM_CAP {
        return Err(Error::Config(format!(
            "Floquet dimension {dim} exceeds {FLOQUET_DIM_CAP}; lower l_max or j_max"
        )));
    }
    let index: BTreeMap<&FloquetLabel, usize> = labels.iter().enumerate().map(|(i, l)| (l, i)).collect();
    let hess = torus_hessian(h, approx, &in_basis);
    // sparse entries (row, col, value)
    let mut entries: BTreeMap<(usize, usize), Complex64> = BTreeMap::new();
    let omega = &approx.omega;
    for (i, l) in labels.iter().enumerate() {
        let w: f64 = omega.iter().zip(&l.ell).map(|(o, &x)| o * x as f64).sum();
        *entries.entry((i, i)).or_default() += I * w;
    }
    let shift = |ell: &[i64], d: &[i64], sgn: i64| -> Vec<i64> { ell.iter().zip(d).map(|(a, b)| a + sgn * b).collect() };
    for ((j, k, conj), series) in &hess {
        for (d, coef) in series {
            for ell in &ells {
                if !*conj {
                    // h-row j from h-col k: +i A_{jk}
                    let src = FloquetLabel { ell: ell.clone(), j: *k, sigma: 1 };
                    let dst = FloquetLabel { ell: shift(ell, d, 1), j: *j, sigma: 1 };
                    if let (Some(&c), Some(&r)) = (index.get(&src), index.get(&dst)) {
                        *entries.entry((r, c)).or_default() += I * coef;
                    }
                    // conj-row j from conj-col k: −i Ā_{jk}
                    let src = FloquetLabel { ell: ell.clone(), j: *k, sigma: -1 };
                    let dst = FloquetLabel { ell: shift(ell, d, -1), j: *j, sigma: -1 };
                    if let (Some(&c), Some(&r)) = (index.get(&src), index.get(&dst)) {
                        *entries.entry((r, c)).or_default() += -I * coef.conj();
                    }
                } else {
                    // h-row j from conj-col k: +i B_{jk}
                    let src = FloquetLabel { ell: ell.clone(), j: *k, sigma: -1 };
                    let dst = FloquetLabel { ell: shift(ell, d, 1), j: *j, sigma: 1 };
                    if let (Some(&c), Some(&r)) = (index.get(&src), index.get(&dst)) {
                        *entries.entry((r, c)).or_default() += I * coef;
                    }
                    // conj-row j from h-col k: −i B̄_{jk}
                    let src = FloquetLabel { ell: ell.clone(), j: *k, sigma: 1 };
                    let dst = FloquetLabel { ell: shift(ell, d, -1), j: *j, sigma: -1 };
                    if let (Some(&c), Some(&r)) = (index.get(&src), index.get(&dst)) {
                        *entries.entry((r, c)).or_default() += -I * coef.conj();
                    }
                }
            }
        }
    }
    // connected components of the sparsity graph
    let mut parent: Vec<usize> = (0..dim).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut y = x;
        while p[y] != r {
            let n = p[y];
            p[y] = r;
            y = n;
        }
        r
    }
    for (&(r, c), v) in &entries {
        if v.norm() > 0.0 {
            let (a, b) = (find(&mut parent, r), find(&mut parent, c));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut blocks: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..dim {
        let r = find(&mut parent, i);
        blocks.entry(r).or_default().push(i);
    }
    let mut eigen_of_block: BTreeMap<usize, Vec<Complex64>> = BTreeMap::new();
    let mut all_eigs = Vec::with_capacity(dim);
    for (root, members) in &blocks {
        let n = members.len();
        let pos: BTreeMap<usize, usize> = members.iter().enumerate().map(|(a, &b)| (b, a)).collect();
        let mut m = DMatrix::<Complex64>::zeros(n, n);
        for (&(r, c), v) in &entries {
            if let (Some(&a), Some(&b)) = (pos.get(&r), pos.get(&c)) {
                m[(a, b)] += *v;
            }
        }
        let eig = if n == 1 {
            vec![m[(0, 0)]]
        } else {
            m.eigenvalues()
                .ok_or_else(|| Error::Numerical(format!("eigenvalue iteration failed on a block of size {n}")))?
                .iter()
                .copied()
                .collect()
        };
        all_eigs.extend(eig.iter().copied());
        eigen_of_block.insert(*root, eig);
    }
    let e2 = approx.eps * approx.eps;
    let mut matches = Vec::new();
    let mut max_d: f64 = 0.0;
    let mut max_u: f64 = 0.0;
    for (i, l) in labels.iter().enumerate() {
        let l1: i64 = l.ell.iter().map(|x| x.abs()).sum();
        if sites.contains(l.j) || l1 > opts.l_max - opts.margin_l || l.j.abs() > opts.j_max - opts.margin_j {
            continue;
        }
        let w: f64 = omega.iter().zip(&l.ell).map(|(o, &x)| o * x as f64).sum();
        let base = (l.j.abs() as f64).sqrt();
        let pred = w + l.sigma as f64 * (base + e2 * kappa(sites, &approx.zeta, l.j));
        let unc = w + l.sigma as f64 * base;
        let r = find(&mut parent, i);
        let eig = &eigen_of_block[&r];
        let nearest = |target: f64| {
            eig.iter()
                .copied()
                .min_by(|a, b| (a - I * target).norm().total_cmp(&(b - I * target).norm()))
                .unwrap()
        };
        let ev = nearest(pred);
        let d = (ev - I * pred).norm();
        let du = (nearest(unc) - I * unc).norm();
        max_d = max_d.max(d);
        max_u = max_u.max(du);
        matches.push(FloquetMatch {
            label: l.clone(),
            predicted_im: pred,
            eigen_re: ev.re,
            eigen_im: ev.im,
            distance: d,
        });
    }
    all_eigs.sort_by(|a, b| a.im.total_cmp(&b.im).then(a.re.total_cmp(&b.re)));
    Ok(FloquetReport {
        eps: approx.eps,
        dimension: dim,
        blocks: blocks.len(),
        eigenvalues: all_eigs.iter().map(|c| (c.re, c.im)).collect(),
        matches,
        max_distance: max_d,
        max_distance_uncorrected: max_u,
    })
}

/// `H(z)` for a state.
pub fn energy(h: &HamPolynomial, s: &SpectralState) -> f64 {
    h.eval(|j| s.get(j)).re
}

/// Monomial of `u_j ū_j` used in diagnostics.
pub fn action_monomial(j: i32) -> Monomial {
    Monomial::actions(&[j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{build_zakharov, quadratic_dispersion};

    #[test]
    fn index_round_trip() {
        for j in (-5..=5).filter(|&j| j != 0) {
            assert_eq!(index_mode(5, mode_index(5, j)), j);
        }
    }

    #[test]
    fn quadratic_field_is_dispersion() {
        let mut s = SpectralState::zeros(4);
        s.set(3, Complex64::new(0.2, -0.1));
        s.set(-2, Complex64::new(0.05, 0.3));
        let d = rhs_full(&quadratic_dispersion(4), &s).unwrap();
        for j in [3i32, -2] {
            let want = -I * (j.abs() as f64).sqrt() * s.get(j);
            assert!((d[mode_index(4, j)] - want).norm() < 1e-15);
        }
    }

    #[test]
    fn single_mode_normal_form_field() {
        let mut s = SpectralState::zeros(5);
        let z = Complex64::new(0.07, 0.02);
        s.set(3, z);
        let d = rhs_bnf(&s);
        let want = -I * (3f64.sqrt() + 27.0 * z.norm_sqr() / (2.0 * PI)) * z;
        assert!((d[mode_index(5, 3)] - want).norm() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let h = build_zakharov(4, 4).unwrap();
        let mut s = SpectralState::zeros(4);
        for (i, j) in [(1, 0.1), (-3, 0.05), (4, -0.08), (-1, 0.03)] {
            s.set(i, Complex64::new(j, 0.5 * j));
        }
        let d = rhs_full(&h, &s).unwrap();
        let step = 1e-6;
        for j in [1, -3, 2] {
            let mut sp = s.clone();
            let mut sm = s.clone();
            sp.set(j, s.get(j) + step);
            sm.set(j, s.get(j) - step);
            let dx = (energy(&h, &sp) - energy(&h, &sm)) / (2.0 * step);
            sp.set(j, s.get(j) + I * step);
            sm.set(j, s.get(j) - I * step);
            let dy = (energy(&h, &sp) - energy(&h, &sm)) / (2.0 * step);
            // ∂/∂z̄ = (∂_x + i∂_y)/2
            let want = -I * 0.5 * Complex64::new(dx, dy);
            assert!((d[mode_index(4, j)] - want).norm() < 1e-7, "mode {j}");
        }
    }

    #[test]
    fn linear_flow_matches_exact_solution() {
        let k = 3;
        let field = VectorField::new(&quadratic_dispersion(k), k).unwrap();
        let mut y0 = vec![Complex64::new(0.0, 0.0); 6];
        y0[mode_index(k, 2)] = Complex64::new(0.3, 0.1);
        y0[mode_index(k, -3)] = Complex64::new(-0.2, 0.05);
        let tol = 1e-10;
        let t_end = 10.0;
        let tr = integrate(|z, o| field.eval(z, o), &y0, k, t_end, tol, 4).unwrap();
        let last = tr.states.last().unwrap();
        for j in [2, -3] {
            let want = y0[mode_index(k, j)] * Complex64::from_polar(1.0, -(j.abs() as f64).sqrt() * t_end);
            assert!((last[mode_index(k, j)] - want).norm() <= 10.0 * tol * t_end);
        }
    }

    #[test]
    fn traveling_invariance_of_the_torus() {
        let s = TangentialSet::new(&[2, 3]).unwrap();
        let a = ApproxSolution::new(&s, &[1.0, 1.5], 0.1).unwrap();
        let v = s.velocity();
        for (p, x, sh) in [([0.3, 1.1], 0.4, 0.7), ([2.0, -1.0], 3.0, -0.2)] {
            let moved: Vec<f64> = p.iter().zip(&v).map(|(a, &b)| a - b as f64 * sh).collect();
            let lhs = a.profile(&p, x + sh);
            let rhs = a.profile(&moved, x);
            assert!((lhs - rhs).norm() < 1e-14);
        }
    }

    #[test]
    fn linear_torus_has_zero_linear_residual() {
        let s = TangentialSet::new(&[2, 3]).unwrap();
        let f = VectorField::new(&quadratic_dispersion(6), 6).unwrap();
        let a = ApproxSolution::new(&s, &[1.0, 1.0], 0.05).unwrap().with_linear_frequencies();
        assert!(residual(&f, &a, 6) < 1e-15);
        let a0 = ApproxSolution::new(&s, &[1.0, 1.0], 0.0).unwrap();
        assert_eq!(residual(&f, &a0, 4), 0.0);
    }

    #[test]
    fn floquet_at_zero_amplitude_is_diagonal() {
        let s = TangentialSet::new(&[2, 3]).unwrap();
        let h = build_zakharov(6, 4).unwrap();
        let a = ApproxSolution::new(&s, &[1.0, 1.0], 0.0).unwrap();
        let r = floquet_spectrum(&h, &a, &FloquetOptions::new(1, 6, &s)).unwrap();
        assert!(r.max_distance < 1e-12);
        // spectrum is closed under conjugation
        let mut conj: Vec<(f64, f64)> = r.eigenvalues.iter().map(|&(re, im)| (re, -im)).collect();
        conj.sort_by(|a, b| a.1.total_cmp(&b.1));
        for (x, y) in conj.iter().zip(&r.eigenvalues) {
            assert!((x.1 - y.1).abs() < 1e-12);
        }
    }
}
