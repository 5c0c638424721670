//! Tangential sites, twist matrix, frequency-amplitude map and the
//! first-order corrections to the normal eigenvalues.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};

/// The excited sites `S = S⁺ ∪ S⁻`, positive sites first.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct TangentialSet {
    sites: Vec<i64>,
}

impl TangentialSet {
    /// Builds a set from distinct nonzero sites, moving `S⁺` ahead of `S⁻`
    /// and keeping the given order inside each half.
    ///
    /// The cross condition `k ≠ −j` is not enforced here; see [`Self::bis_violation`].
    pub fn new(sites: &[i64]) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::Config("tangential set is empty".into()));
        }
        if sites.contains(&0) {
            return Err(Error::Config("tangential sites must be nonzero".into()));
        }
        for (i, a) in sites.iter().enumerate() {
            if sites[..i].contains(a) {
                return Err(Error::Config(format!("site {a} repeated")));
            }
        }
        let mut ordered: Vec<i64> = sites.iter().copied().filter(|&j| j > 0).collect();
        ordered.extend(sites.iter().copied().filter(|&j| j < 0));
        Ok(Self { sites: ordered })
    }

    pub fn sites(&self) -> &[i64] {
        &self.sites
    }

    pub fn nu(&self) -> usize {
        self.sites.len()
    }

    pub fn contains(&self, j: i64) -> bool {
        self.sites.contains(&j)
    }

    pub fn index_of(&self, j: i64) -> Option<usize> {
        self.sites.iter().position(|&s| s == j)
    }

    pub fn max_abs(&self) -> i64 {
        self.sites.iter().map(|j| j.abs()).max().unwrap_or(0)
    }

    /// A pair `(j, −j)` with both in `S`, if any.
    pub fn bis_violation(&self) -> Option<(i64, i64)> {
        self.sites
            .iter()
            .find(|&&j| j > 0 && self.contains(-j))
            .map(|&j| (j, -j))
    }

    /// Linear frequencies `ω̄_i = sqrt|ȷ̄_i|`.
    pub fn omega_bar(&self) -> DVector<f64> {
        DVector::from_iterator(self.nu(), self.sites.iter().map(|j| (j.abs() as f64).sqrt()))
    }

    /// Velocity vector `v_i = ȷ̄_i`.
    pub fn velocity(&self) -> Vec<i64> {
        self.sites.clone()
    }

    /// `w_i = |ȷ̄_i| ȷ̄_i`.
    pub fn w(&self) -> Vec<i64> {
        self.sites.iter().map(|j| j.abs() * j).collect()
    }
}

/// Twist matrix and its certificates.
#[derive(Clone, Debug, Serialize)]
pub struct TwistData {
    /// `4π𝔸`, an integer matrix.
    pub four_pi_a: Vec<Vec<i64>>,
    /// `𝔸` as floats.
    pub a: Vec<Vec<f64>>,
    /// `𝕍 = v wᵀ`.
    pub v: Vec<Vec<i64>>,
    pub det_a: f64,
    pub det_a_minus_v: f64,
    /// Exact `det(4π𝔸)`.
    pub int_cert: String,
}

/// Integer entries of `4π𝔸`.
pub fn four_pi_twist(sites: &TangentialSet) -> Vec<Vec<i64>> {
    let s = sites.sites();
    let nu = s.len();
    let mut m = vec![vec![0i64; nu]; nu];
    for i in 0..nu {
        for k in 0..nu {
            let (a, b) = (s[i], s[k]);
            m[i][k] = if i == k {
                2 * a.abs().pow(3)
            } else if a.signum() != b.signum() {
                0
            } else {
                let (big, small) = if a.abs() > b.abs() { (a.abs(), b.abs()) } else { (b.abs(), a.abs()) };
                4 * big * small * small
            };
        }
    }
    m
}

/// Exact determinant of an integer matrix (fraction-free elimination).
pub fn int_det(m: &[Vec<i64>]) -> BigInt {
    let n = m.len();
    let mut a: Vec<Vec<BigInt>> = m.iter().map(|r| r.iter().map(|&x| BigInt::from(x)).collect()).collect();
    let mut sign = 1;
    let mut prev = BigInt::from(1);
    for k in 0..n {
        if a[k][k].is_zero() {
            let Some(p) = (k + 1..n).find(|&r| !a[r][k].is_zero()) else {
                return BigInt::zero();
            };
            a.swap(k, p);
            sign = -sign;
        }
        for i in k + 1..n {
            for j in k + 1..n {
                let v = &a[i][j] * &a[k][k] - &a[i][k] * &a[k][j];
                a[i][j] = v / &prev;
            }
        }
        prev = a[k][k].clone();
    }
    if n == 0 {
        return BigInt::from(1);
    }
    a[n - 1][n - 1].clone() * sign
}

fn to_f64_matrix(m: &[Vec<f64>]) -> DMatrix<f64> {
    let n = m.len();
    DMatrix::from_fn(n, n, |i, k| m[i][k])
}

/// `𝔸` from the quadratic form `½𝔸I·I = H^(4,0)(I)`.
pub fn twist_matrix(sites: &TangentialSet) -> TwistData {
    let m4 = four_pi_twist(sites);
    let nu = sites.nu();
    let a: Vec<Vec<f64>> = m4.iter().map(|r| r.iter().map(|&x| x as f64 / (4.0 * PI)).collect()).collect();
    let v = sites.velocity();
    let w = sites.w();
    let vv: Vec<Vec<i64>> = (0..nu).map(|i| (0..nu).map(|k| v[i] * w[k]).collect()).collect();
    let det_a = to_f64_matrix(&a).determinant();
    let amv: Vec<Vec<f64>> = (0..nu).map(|i| (0..nu).map(|k| a[i][k] - vv[i][k] as f64).collect()).collect();
    let det_a_minus_v = to_f64_matrix(&amv).determinant();
    TwistData {
        four_pi_a: m4.clone(),
        a,
        v: vv,
        det_a,
        det_a_minus_v,
        int_cert: int_det(&m4).to_string(),
    }
}

/// Certificates for `det 𝔸 ≠ 0` and `det(𝔸 − 𝕍) ≠ 0`.
#[derive(Clone, Debug, Serialize)]
pub struct TwistCheck {
    /// `det(4π𝔸)`.
    pub det_four_pi_a: String,
    /// `det(4π(𝔸 − 𝕍)) = p0 + p1·π` with integer `p0`, `p1`.
    pub pi_poly: [String; 2],
    /// `det(𝔸 − 𝕍)` evaluated in floating point from the π-polynomial.
    pub det_a_minus_v: f64,
    /// `|det(4πλ⁻³(𝔸 − 𝕍))|` with `λ = max|S|`, the normalization that makes
    /// both matrices integral at constant sites.
    pub det_a_minus_v_scaled: f64,
    /// `|det(𝔸 − 𝕍)|` divided by the Hadamard bound of `𝔸 − 𝕍`.
    pub det_a_minus_v_hadamard: f64,
    /// `det(4π𝔸 − 4𝕍)`, the same test with the momentum matrix scaled by `1/π`.
    pub det_rescaled_variant: String,
    pub twist_ok: bool,
    pub melnikov_twist_ok: bool,
}

pub fn twist_check(sites: &TangentialSet) -> TwistCheck {
    let m = four_pi_twist(sites);
    let nu = sites.nu();
    let det_m = int_det(&m);
    let v = sites.velocity();
    let w = sites.w();
    // 𝕍 has rank one, so det(M − 4π v wᵀ) = det M − 4π wᵀ adj(M) v.
    let mut adj_term = BigInt::zero();
    for i in 0..nu {
        for k in 0..nu {
            // cofactor C_{ik}; adj(M)_{ki} = C_{ik}
            let minor: Vec<Vec<i64>> = (0..nu)
                .filter(|&r| r != i)
                .map(|r| (0..nu).filter(|&c| c != k).map(|c| m[r][c]).collect())
                .collect();
            let mut c = int_det(&minor);
            if (i + k) % 2 == 1 {
                c = -c;
            }
            adj_term += c * BigInt::from(w[k]) * BigInt::from(v[i]);
        }
    }
    let p0 = det_m.clone();
    let p1 = -(BigInt::from(4) * adj_term.clone());
    let four_pi_det = p0.to_f64().unwrap_or(f64::NAN) + p1.to_f64().unwrap_or(f64::NAN) * PI;
    let det_amv = four_pi_det / (4.0 * PI).powi(nu as i32);
    let t = twist_matrix(sites);
    let hadamard: f64 = (0..nu)
        .map(|i| {
            (0..nu)
                .map(|k| (t.a[i][k] - t.v[i][k] as f64).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .product();
    let rescaled: Vec<Vec<i64>> = (0..nu).map(|i| (0..nu).map(|k| m[i][k] - 4 * v[i] * w[k]).collect()).collect();
    let hadamard_ratio = if hadamard > 0.0 { det_amv.abs() / hadamard } else { 0.0 };
    let lambda3 = (sites.max_abs() as f64).powi(3);
    let scaled = (four_pi_det / lambda3.powi(nu as i32)).abs();
    TwistCheck {
        det_four_pi_a: det_m.to_string(),
        pi_poly: [p0.to_string(), p1.to_string()],
        det_a_minus_v: det_amv,
        det_a_minus_v_scaled: scaled,
        det_a_minus_v_hadamard: hadamard_ratio,
        det_rescaled_variant: int_det(&rescaled).to_string(),
        twist_ok: !det_m.is_zero(),
        melnikov_twist_ok: !(p0.is_zero() && p1.is_zero()) && scaled > 1e-8,
    }
}

/// `2πλ⁻³𝔸` at equal site magnitudes, for a sign pattern of length ν.
///
/// Diagonal entries are 1 and same-sign off-diagonal entries are 2, so the
/// matrix is the identity modulo 2 and its determinant is odd.
pub fn constant_site_reduction(signs: &[i8]) -> (Vec<Vec<i64>>, BigInt) {
    let nu = signs.len();
    let m: Vec<Vec<i64>> = (0..nu)
        .map(|i| {
            (0..nu)
                .map(|k| {
                    if i == k {
                        1
                    } else if signs[i] == signs[k] {
                        2
                    } else {
                        0
                    }
                })
                .collect()
        })
        .collect();
    let d = int_det(&m);
    (m, d)
}

/// `ω = ω̄ + ε²𝔸ζ`.
pub fn freq_amp(sites: &TangentialSet, zeta: &[f64], eps: f64) -> Result<DVector<f64>> {
    if zeta.len() != sites.nu() {
        return Err(Error::Config(format!("ζ has {} entries for ν = {}", zeta.len(), sites.nu())));
    }
    let a = to_f64_matrix(&twist_matrix(sites).a);
    Ok(sites.omega_bar() + (a * DVector::from_column_slice(zeta)) * (eps * eps))
}

/// Inverse map `ζ = ε⁻²𝔸⁻¹(ω − ω̄)`.
pub fn amp_freq(sites: &TangentialSet, omega: &DVector<f64>, eps: f64) -> Result<DVector<f64>> {
    let t = twist_matrix(sites);
    if !twist_check(sites).twist_ok {
        return Err(Error::Singular(format!("det(4π𝔸) = {}", t.int_cert)));
    }
    if eps == 0.0 {
        return Err(Error::Domain("amp_freq needs ε > 0".into()));
    }
    let a = to_f64_matrix(&t.a);
    let rhs = (omega - sites.omega_bar()) / (eps * eps);
    a.lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular(format!("det(4π𝔸) = {}", t.int_cert)))
}

/// First-order data of the normal eigenvalues.
#[derive(Clone, Debug, Serialize)]
pub struct Corrections {
    /// `m₁ = (1/π) Σ n|n| ζ_n`.
    pub m1: f64,
    /// `w·ζ`, the same sum without the `1/π`.
    pub m1_unnormalized: f64,
    /// `(j, c_j)` for `0 < |j| <= j_max`, `j ∉ S`.
    pub c: Vec<(i64, f64)>,
    /// `(j, d_j)` with `d_j = sqrt|j| + ε²(m₁ + c_j) j`.
    pub d: Vec<(i64, f64)>,
    /// `(j, α_j)` rotating phases; `None` when `ν = 1`.
    pub alpha: Option<Vec<(i64, Vec<f64>)>>,
    /// Exact `v·v⊥`, which is zero.
    pub v_dot_vperp: i64,
}

pub fn m1(sites: &TangentialSet, zeta: &[f64]) -> f64 {
    sites.w().iter().zip(zeta).map(|(&w, &z)| w as f64 * z).sum::<f64>() / PI
}

/// `c_j = (1/π) Σ_{k∈S, |k|>|j|} k(|j| − |k|) ζ_k`, zero for `|j| >= max|S|`.
pub fn c_j(sites: &TangentialSet, zeta: &[f64], j: i64) -> f64 {
    if j.abs() >= sites.max_abs() {
        return 0.0;
    }
    sites
        .sites()
        .iter()
        .zip(zeta)
        .filter(|(k, _)| k.abs() > j.abs())
        .map(|(&k, &z)| (k * (j.abs() - k.abs())) as f64 * z)
        .sum::<f64>()
        / PI
}

/// `κ_j = (m₁ + c_j) j`.
pub fn kappa(sites: &TangentialSet, zeta: &[f64], j: i64) -> f64 {
    (m1(sites, zeta) + c_j(sites, zeta, j)) * j as f64
}

pub fn corrections(sites: &TangentialSet, zeta: &[f64], eps: f64, j_max: i64) -> Result<Corrections> {
    if zeta.len() != sites.nu() {
        return Err(Error::Config(format!("ζ has {} entries for ν = {}", zeta.len(), sites.nu())));
    }
    let m = m1(sites, zeta);
    let js: Vec<i64> = (-j_max..=j_max).filter(|&j| j != 0 && !sites.contains(j)).collect();
    let c: Vec<(i64, f64)> = js.iter().map(|&j| (j, c_j(sites, zeta, j))).collect();
    let d = c
        .iter()
        .map(|&(j, cj)| (j, (j.abs() as f64).sqrt() + eps * eps * (m + cj) * j as f64))
        .collect();
    let (alpha, vdot) = if sites.nu() >= 2 {
        let s = sites.sites();
        let mut vperp = vec![0i64; sites.nu()];
        vperp[0] = s[1];
        vperp[1] = -s[0];
        let vdot: i64 = s.iter().zip(&vperp).map(|(a, b)| a * b).sum();
        let omega = freq_amp(sites, zeta, eps)?;
        let wv: f64 = omega.iter().zip(&vperp).map(|(o, &p)| o * p as f64).sum();
        let alpha = c
            .iter()
            .map(|&(j, cj)| (j, vperp.iter().map(|&p| p as f64 * cj * j as f64 / wv).collect()))
            .collect();
        (Some(alpha), vdot)
    } else {
        (None, 0)
    };
    Ok(Corrections {
        m1: m,
        m1_unnormalized: m * PI,
        c,
        d,
        alpha,
        v_dot_vperp: vdot,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use num_integer::Integer;

    #[test]
    fn sites_validation_and_order() {
        let s = TangentialSet::new(&[-1, 4, 9]).unwrap();
        assert_eq!(s.sites(), &[4, 9, -1]);
        assert!(TangentialSet::new(&[0, 2]).is_err());
        assert!(TangentialSet::new(&[2, 2]).is_err());
        assert_eq!(TangentialSet::new(&[3, -3]).unwrap().bis_violation(), Some((3, -3)));
    }

    #[test]
    fn twist_three_two() {
        let s = TangentialSet::new(&[3, 2]).unwrap();
        let t = twist_matrix(&s);
        assert_eq!(t.four_pi_a, vec![vec![54, 48], vec![48, 16]]);
        assert_eq!(t.int_cert, "-1440");
        assert_relative_eq!(t.det_a, -90.0 / (PI * PI), max_relative = 1e-12);
        assert_relative_eq!(t.a[0][0], 27.0 / (2.0 * PI), max_relative = 1e-15);
        assert_relative_eq!(t.a[0][1], 12.0 / PI, max_relative = 1e-15);
    }

    #[test]
    fn twist_single_site_and_opposite_signs() {
        let t = twist_matrix(&TangentialSet::new(&[5]).unwrap());
        assert_relative_eq!(t.a[0][0], 125.0 / (2.0 * PI), max_relative = 1e-15);
        let t = twist_matrix(&TangentialSet::new(&[2, -3]).unwrap());
        assert_eq!(t.four_pi_a[0][1], 0);
    }

    #[test]
    fn twist_check_certificates() {
        let c = twist_check(&TangentialSet::new(&[3, 2]).unwrap());
        assert_eq!(c.det_four_pi_a, "-1440");
        assert!(c.twist_ok && c.melnikov_twist_ok);
        let one = twist_check(&TangentialSet::new(&[1]).unwrap());
        assert_relative_eq!(one.det_a_minus_v, 1.0 / (2.0 * PI) - 1.0, max_relative = 1e-12);
    }

    #[test]
    fn constant_sites_determinant_is_odd() {
        for signs in [vec![1, 1, 1], vec![1, 1, -1, -1], vec![1, -1]] {
            let (_, d) = constant_site_reduction(&signs);
            assert!(d.is_odd());
        }
    }

    #[test]
    fn freq_amp_round_trip() {
        let s = TangentialSet::new(&[2]).unwrap();
        let w = freq_amp(&s, &[1.0], 0.1).unwrap();
        assert_relative_eq!(w[0], 2f64.sqrt() + 0.01 * 8.0 / (2.0 * PI), max_relative = 1e-15);
        let s = TangentialSet::new(&[3, 2]).unwrap();
        let z = [1.3, 1.7];
        let back = amp_freq(&s, &freq_amp(&s, &z, 0.05).unwrap(), 0.05).unwrap();
        assert_relative_eq!(back[0], z[0], max_relative = 1e-10);
        assert_relative_eq!(back[1], z[1], max_relative = 1e-10);
        assert_eq!(freq_amp(&s, &[0.0, 0.0], 0.3).unwrap(), s.omega_bar());
    }

    #[test]
    fn corrections_examples() {
        let s = TangentialSet::new(&[3]).unwrap();
        assert_relative_eq!(c_j(&s, &[1.0], 1), -6.0 / PI, max_relative = 1e-15);
        assert_relative_eq!(kappa(&s, &[1.0], 1), 3.0 / PI, max_relative = 1e-15);
        assert_eq!(c_j(&s, &[1.0], 4), 0.0);
        let s2 = TangentialSet::new(&[2]).unwrap();
        assert_relative_eq!(m1(&s2, &[1.0]), 4.0 / PI, max_relative = 1e-15);
        let st = TangentialSet::new(&[5, -2, 3]).unwrap();
        let z = [1.1, 1.4, 1.9];
        for j in 1..8 {
            assert_eq!(c_j(&st, &z, j), c_j(&st, &z, -j));
        }
        let c = corrections(&st, &z, 0.05, 10).unwrap();
        assert_eq!(c.v_dot_vperp, 0);
        assert!(corrections(&s, &[1.0], 0.1, 5).unwrap().alpha.is_none());
    }
}
