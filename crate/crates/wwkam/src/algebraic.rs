//! Exact arithmetic in the span of square roots of squarefree integers.
//!
//! The square roots of distinct squarefree positive integers are linearly
//! independent over the rationals, so a value stored as a map from radicand to
//! nonzero rational coefficient is zero exactly when the map is empty.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Neg, Sub};

use num_bigint::{BigInt, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Splits `n >= 1` as `n = m * s^2` with `m` squarefree. Returns `(m, s)`.
pub fn squarefree_split(n: u64) -> (u64, u64) {
    debug_assert!(n >= 1);
    let mut m = 1u64;
    let mut s = 1u64;
    let mut rest = n;
    let mut p = 2u64;
    while p * p <= rest {
        let mut e = 0;
        while rest % p == 0 {
            rest /= p;
            e += 1;
        }
        s *= p.pow(e / 2);
        if e % 2 == 1 {
            m *= p;
        }
        p += if p == 2 { 1 } else { 2 };
    }
    // whatever is left is a prime to the first power
    m *= rest;
    (m, s)
}

/// An exact element of the rational span of `{sqrt(m) : m squarefree}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct SqrtRational {
    terms: BTreeMap<u64, BigRational>,
}

impl SqrtRational {
    pub fn zero() -> Self {
        Self::default()
    }

    /// A rational number.
    pub fn rational(q: BigRational) -> Self {
        let mut out = Self::zero();
        out.push(1, q);
        out
    }

    pub fn integer(n: i64) -> Self {
        Self::rational(BigRational::from_integer(BigInt::from(n)))
    }

    /// `sqrt(n)` in canonical form `s * sqrt(m)`.
    pub fn sqrt_of(n: i64) -> Result<Self> {
        if n <= 0 {
            return Err(Error::Domain(format!("sqrt_of requires n >= 1, got {n}")));
        }
        Ok(Self::sqrt_u(n as u64))
    }

    /// `sqrt(|j|)` for a nonzero wavenumber.
    pub fn sqrt_abs(j: i64) -> Self {
        assert!(j != 0, "sqrt_abs of zero wavenumber");
        Self::sqrt_u(j.unsigned_abs())
    }

    fn sqrt_u(n: u64) -> Self {
        let (m, s) = squarefree_split(n);
        let mut out = Self::zero();
        out.push(m, BigRational::from_integer(BigInt::from(s)));
        out
    }

    fn push(&mut self, radicand: u64, q: BigRational) {
        if q.is_zero() {
            return;
        }
        match self.terms.get_mut(&radicand) {
            Some(c) => {
                *c += q;
                if c.is_zero() {
                    self.terms.remove(&radicand);
                }
            }
            None => {
                self.terms.insert(radicand, q);
            }
        }
    }

    /// Adds `q * sqrt(n)` in place, for any positive `n`.
    pub fn add_scaled_sqrt(&mut self, n: u64, q: &BigRational) {
        let (m, s) = squarefree_split(n);
        self.push(m, q * BigRational::from_integer(BigInt::from(s)));
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (m, q) in &other.terms {
            out.push(*m, q.clone());
        }
        out
    }

    pub fn scale(&self, q: &BigRational) -> Self {
        if q.is_zero() {
            return Self::zero();
        }
        Self {
            terms: self.terms.iter().map(|(m, c)| (*m, c * q)).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (u64, &BigRational)> {
        self.terms.iter().map(|(m, q)| (*m, q))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn to_f64(&self) -> f64 {
        self.terms
            .iter()
            .map(|(m, q)| q.to_f64().unwrap_or(f64::NAN) * (*m as f64).sqrt())
            .sum()
    }

    /// Fixed-point evaluation: returns `x` with `|value * 2^bits - x| <= len()`.
    ///
    /// Each `sqrt(m)` is floored at `2^bits` scale, then multiplied by the
    /// coefficient and floored again, so every term is off by less than one ulp
    /// per factor bound. Used as the high-precision shadow of `to_f64`.
    pub fn to_fixed(&self, bits: u32) -> BigInt {
        let mut acc = BigInt::zero();
        for (m, q) in &self.terms {
            let scaled = BigInt::from(*m) << (2 * bits);
            let root = scaled.sqrt();
            let num = q.numer() * root;
            acc += num.div_floor(q.denom());
        }
        acc
    }

    /// Sign of the value, decided by interval refinement.
    ///
    /// Nonzero values are certified by fixed-point evaluation at increasing
    /// precision until the error bound no longer straddles zero.
    pub fn signum(&self) -> i32 {
        if self.is_zero() {
            return 0;
        }
        let mut bits = 128;
        loop {
            let x = self.to_fixed(bits);
            let slack = BigInt::from(2 * self.len() as u64 + 2);
            if x > slack {
                return 1;
            }
            if x < -slack {
                return -1;
            }
            bits *= 2;
            assert!(bits <= 1 << 16, "sign refinement did not terminate");
        }
    }
}

impl Add for &SqrtRational {
    type Output = SqrtRational;
    fn add(self, rhs: &SqrtRational) -> SqrtRational {
        SqrtRational::add(self, rhs)
    }
}

impl Sub for &SqrtRational {
    type Output = SqrtRational;
    fn sub(self, rhs: &SqrtRational) -> SqrtRational {
        SqrtRational::add(self, &-rhs)
    }
}

impl Neg for &SqrtRational {
    type Output = SqrtRational;
    fn neg(self) -> SqrtRational {
        self.scale(&-BigRational::one())
    }
}

impl fmt::Display for SqrtRational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (m, q) in &self.terms {
            let neg = q.is_negative();
            if !first {
                write!(f, " {} ", if neg { '-' } else { '+' })?;
            } else if neg {
                write!(f, "-")?;
            }
            let a = q.abs();
            match (*m, a.is_one()) {
                (1, _) => write!(f, "{a}")?,
                (m, true) => write!(f, "√{m}")?,
                (m, false) => write!(f, "{a}√{m}")?,
            }
            first = false;
        }
        Ok(())
    }
}

/// Exact `Σ σ_i sqrt(|j_i|)` for signed wavenumbers.
pub fn frequency_sum(pairs: &[(i64, i8)]) -> SqrtRational {
    let mut out = SqrtRational::zero();
    for &(j, s) in pairs {
        let q = BigRational::from_integer(BigInt::from(s as i64));
        out.add_scaled_sqrt(j.unsigned_abs(), &q);
    }
    out
}

/// Converts a fixed-point integer at scale `2^bits` to `f64`.
pub fn fixed_to_f64(x: &BigInt, bits: u32) -> f64 {
    let (sign, mag) = (x.sign(), x.magnitude());
    let len = mag.bits();
    let shift = len.saturating_sub(60);
    let top = (mag >> shift).to_f64().unwrap_or(0.0);
    let v = top * 2f64.powi(shift as i32 - bits as i32);
    if sign == Sign::Minus {
        -v
    } else {
        v
    }
}
