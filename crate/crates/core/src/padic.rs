//! p-adic valuations, factorial constants and fixed-precision scalars.
//!
//! Exact values are `BigRational`; a [`PadicScalar`] is a truncation
//! `p^e * u mod p^(e+N)` with `u` a unit, or a zero known to some absolute
//! precision. Valuations of zero are [`Valuation::Infinite`].

use std::cell::RefCell;
use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exact rational numbers.
pub type ExactRational = BigRational;

/// A p-adic valuation. `Finite(a) < Infinite` for every `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Valuation {
    Finite(i64),
    Infinite,
}

impl Valuation {
    pub fn finite(self) -> Option<i64> {
        match self {
            Valuation::Finite(v) => Some(v),
            Valuation::Infinite => None,
        }
    }

    pub fn is_nonnegative(self) -> bool {
        self >= Valuation::Finite(0)
    }

    pub fn add(self, other: Valuation) -> Valuation {
        match (self, other) {
            (Valuation::Finite(a), Valuation::Finite(b)) => Valuation::Finite(a + b),
            _ => Valuation::Infinite,
        }
    }
}

impl fmt::Display for Valuation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Valuation::Finite(v) => write!(f, "{v}"),
            Valuation::Infinite => write!(f, "inf"),
        }
    }
}

pub fn is_prime(p: u64) -> bool {
    if p < 2 {
        return false;
    }
    let mut d = 2u64;
    while d * d <= p {
        if p % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

pub fn check_prime(p: u64) -> Result<()> {
    if is_prime(p) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{p} is not prime")))
    }
}

/// Legendre's formula.
pub fn factorial_valuation(p: u64, n: u64) -> u64 {
    let mut v = 0;
    let mut q = n;
    while q > 0 {
        q /= p;
        v += q;
    }
    v
}

thread_local! {
    static FACTORIALS: RefCell<Vec<BigInt>> = RefCell::new(vec![BigInt::one()]);
}

pub fn factorial(n: u64) -> BigInt {
    FACTORIALS.with(|cache| {
        let mut cache = cache.borrow_mut();
        while (cache.len() as u64) <= n {
            let next = cache.last().unwrap() * BigInt::from(cache.len());
            cache.push(next);
        }
        cache[n as usize].clone()
    })
}

pub fn binomial(n: u64, r: u64) -> BigInt {
    if r > n {
        return BigInt::zero();
    }
    let r = r.min(n - r);
    let mut acc = BigInt::one();
    for i in 0..r {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

/// `s (s-1) ... (s-r+1) / r!` for an arbitrary integer `s`.
pub fn generalized_binomial(s: i64, r: u64) -> BigInt {
    if s >= 0 {
        return binomial(s as u64, r);
    }
    // binom(-t, r) = (-1)^r binom(t + r - 1, r)
    let t = s.unsigned_abs();
    let b = binomial(t + r - 1, r);
    if r % 2 == 0 {
        b
    } else {
        -b
    }
}

pub fn p_pow(p: u64, e: u32) -> BigInt {
    num_traits::pow(BigInt::from(p), e as usize)
}

/// `p^e` as a rational, `e` of either sign.
pub fn p_pow_rational(p: u64, e: i64) -> BigRational {
    if e >= 0 {
        BigRational::from_integer(p_pow(p, e as u32))
    } else {
        BigRational::new(BigInt::one(), p_pow(p, e.unsigned_abs() as u32))
    }
}

pub fn int_valuation(p: u64, n: &BigInt) -> Option<u64> {
    if n.is_zero() {
        return None;
    }
    let pb = BigInt::from(p);
    let mut v = 0;
    let mut q = n.clone();
    loop {
        let (d, r) = q.div_rem(&pb);
        if !r.is_zero() {
            return Some(v);
        }
        q = d;
        v += 1;
    }
}

pub fn valuation(p: u64, x: &BigRational) -> Valuation {
    match int_valuation(p, x.numer()) {
        None => Valuation::Infinite,
        Some(a) => {
            let b = int_valuation(p, x.denom()).unwrap_or(0);
            Valuation::Finite(a as i64 - b as i64)
        }
    }
}

pub fn is_p_integral(p: u64, x: &BigRational) -> bool {
    valuation(p, x).is_nonnegative()
}

/// `floor(k / p^m)`.
pub fn level_quotient(p: u64, m: u32, k: u64) -> u64 {
    k / p.pow(m)
}

/// `q!` where `q = floor(k / p^m)`.
pub fn quotient_factorial(p: u64, m: u32, k: u64) -> BigInt {
    factorial(level_quotient(p, m, k))
}

/// The multi-index version of `q_m(k)!`, a product over coordinates.
pub fn quotient_factorial_multi(p: u64, m: u32, k: &[u64]) -> BigInt {
    k.iter().map(|&ki| quotient_factorial(p, m, ki)).product()
}

/// `q!/k!`, the coefficient of `d^k` in the level-`m` divided power of index `k`.
pub fn divided_power_coefficient(p: u64, m: u32, k: &[u64]) -> BigRational {
    let num = quotient_factorial_multi(p, m, k);
    let den: BigInt = k.iter().map(|&ki| factorial(ki)).product();
    BigRational::new(num, den)
}

/// `(p^m')! / (p^m!)^(p^(m'-m))`.
pub fn level_factorial_ratio_exact(p: u64, m: u32, m2: u32) -> Result<BigRational> {
    if m2 < m {
        return Err(Error::InvalidArgument(format!(
            "level ratio needs m <= m', got m = {m}, m' = {m2}"
        )));
    }
    let top = factorial(p.pow(m2));
    let base = factorial(p.pow(m));
    let e = p.pow(m2 - m) as usize;
    Ok(BigRational::new(top, num_traits::pow(base, e)))
}

pub fn level_factorial_ratio(p: u64, m: u32, m2: u32, precision: u32) -> Result<PadicScalar> {
    Ok(PadicScalar::from_rational(
        p,
        &level_factorial_ratio_exact(p, m, m2)?,
        precision,
    ))
}

/// Valuation of `r_{m,m'}`, equal to `(p^(m'-m) - 1)/(p - 1)`.
pub fn level_factorial_ratio_valuation(p: u64, m: u32, m2: u32) -> u64 {
    (p.pow(m2 - m) - 1) / (p - 1)
}

/// Structure constant of `D<m>[k] * D<m>[k'] = c * D<m>[k+k']`:
/// `prod_j binom(k_j + k'_j, k_j) q(k_j)! q(k'_j)! / q(k_j + k'_j)!`.
pub fn binomial_constant_exact(p: u64, m: u32, k: &[u64], k2: &[u64]) -> Result<BigRational> {
    if k.len() != k2.len() {
        return Err(Error::DimensionMismatch {
            expected: k.len(),
            found: k2.len(),
        });
    }
    let mut num = BigInt::one();
    let mut den = BigInt::one();
    for (&a, &b) in k.iter().zip(k2) {
        num *= binomial(a + b, a) * quotient_factorial(p, m, a) * quotient_factorial(p, m, b);
        den *= quotient_factorial(p, m, a + b);
    }
    Ok(BigRational::new(num, den))
}

pub fn padic_binomial_constant(
    p: u64,
    m: u32,
    k: &[u64],
    k2: &[u64],
    precision: u32,
) -> Result<PadicScalar> {
    let c = binomial_constant_exact(p, m, k, k2)?;
    if !is_p_integral(p, &c) {
        return Err(Error::IntegralityViolation(format!(
            "binomial constant {c} for k = {k:?}, k' = {k2:?} at level {m}"
        )));
    }
    Ok(PadicScalar::from_rational(p, &c, precision))
}

/// Split a nonzero rational as `p^e * u` with `u` a p-adic unit.
pub fn split_unit(p: u64, x: &BigRational) -> (i64, BigRational) {
    let e = valuation(p, x).finite().expect("split_unit of zero");
    (e, x * p_pow_rational(p, -e))
}

/// Image of a p-unit rational in `Z/p^n`, as an integer in `[0, p^n)`.
pub fn unit_residue(p: u64, u: &BigRational, n: u32) -> BigInt {
    let modulus = p_pow(p, n);
    let num = u.numer().mod_floor(&modulus);
    let den = u.denom().mod_floor(&modulus);
    let inv = den
        .modinv(&modulus)
        .expect("denominator of a p-unit is invertible mod p^n");
    (num * inv).mod_floor(&modulus)
}

/// Canonical representative of `x mod p^a Z_(p)`: zero when `v(x) >= a`,
/// otherwise `p^e * u` with `u` an integer in `[0, p^(a-e))`.
pub fn reduce_rational_abs(p: u64, x: &BigRational, a: i64) -> BigRational {
    match valuation(p, x) {
        Valuation::Infinite => BigRational::zero(),
        Valuation::Finite(e) if e >= a => BigRational::zero(),
        Valuation::Finite(e) => {
            let u = x * p_pow_rational(p, -e);
            let r = unit_residue(p, &u, (a - e) as u32);
            BigRational::from_integer(r) * p_pow_rational(p, e)
        }
    }
}

/// Fixed-precision element of `Q_p`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PadicScalar {
    /// Zero modulo `p^known_to`; `None` is an exact zero.
    Zero { p: u64, known_to: Option<i64> },
    /// `p^exponent * unit mod p^(exponent + precision)`, `unit` in `[1, p^precision)`.
    Unit {
        p: u64,
        exponent: i64,
        #[serde(with = "bigint_string")]
        unit: BigInt,
        precision: u32,
    },
}

mod bigint_string {
    use num_bigint::BigInt;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &BigInt, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigInt, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl PadicScalar {
    pub fn exact_zero(p: u64) -> Self {
        PadicScalar::Zero { p, known_to: None }
    }

    /// Truncate `x` to relative precision `n`.
    pub fn from_rational(p: u64, x: &BigRational, n: u32) -> Self {
        if x.is_zero() {
            return PadicScalar::exact_zero(p);
        }
        if n == 0 {
            let e = valuation(p, x).finite().unwrap();
            return PadicScalar::Zero {
                p,
                known_to: Some(e),
            };
        }
        let (e, u) = split_unit(p, x);
        PadicScalar::Unit {
            p,
            exponent: e,
            unit: unit_residue(p, &u, n),
            precision: n,
        }
    }

    pub fn from_int(p: u64, x: i64, n: u32) -> Self {
        Self::from_rational(p, &BigRational::from_integer(BigInt::from(x)), n)
    }

    pub fn prime(&self) -> u64 {
        match self {
            PadicScalar::Zero { p, .. } | PadicScalar::Unit { p, .. } => *p,
        }
    }

    pub fn valuation(&self) -> Valuation {
        match self {
            PadicScalar::Zero { .. } => Valuation::Infinite,
            PadicScalar::Unit { exponent, .. } => Valuation::Finite(*exponent),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, PadicScalar::Zero { .. })
    }

    /// The power of `p` modulo which the value is known; `None` for exact zero.
    pub fn absolute_precision(&self) -> Option<i64> {
        match self {
            PadicScalar::Zero { known_to, .. } => *known_to,
            PadicScalar::Unit {
                exponent,
                precision,
                ..
            } => Some(exponent + *precision as i64),
        }
    }

    pub fn unit(&self) -> Option<&BigInt> {
        match self {
            PadicScalar::Unit { unit, .. } => Some(unit),
            PadicScalar::Zero { .. } => None,
        }
    }

    /// The canonical rational lift.
    pub fn to_rational(&self) -> BigRational {
        match self {
            PadicScalar::Zero { .. } => BigRational::zero(),
            PadicScalar::Unit {
                p, exponent, unit, ..
            } => BigRational::from_integer(unit.clone()) * p_pow_rational(*p, *exponent),
        }
    }

    fn from_lift(p: u64, x: &BigRational, abs: Option<i64>) -> Self {
        match abs {
            None => {
                if x.is_zero() {
                    PadicScalar::exact_zero(p)
                } else {
                    // Exact nonzero values only arise from callers that fix a precision.
                    unreachable!("nonzero value without a precision bound")
                }
            }
            Some(a) => match valuation(p, x) {
                Valuation::Finite(e) if e < a => {
                    PadicScalar::from_rational(p, x, (a - e) as u32)
                }
                _ => PadicScalar::Zero {
                    p,
                    known_to: Some(a),
                },
            },
        }
    }

    /// Reduce to absolute precision `a` (no-op if already coarser).
    pub fn truncate_abs(&self, a: i64) -> Self {
        let cur = self.absolute_precision();
        let a = match cur {
            Some(c) if c <= a => return self.clone(),
            _ => a,
        };
        Self::from_lift(self.prime(), &self.to_rational(), Some(a))
    }

    fn min_abs(a: Option<i64>, b: Option<i64>) -> Option<i64> {
        match (a, b) {
            (None, x) | (x, None) => x,
            (Some(x), Some(y)) => Some(x.min(y)),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let p = self.prime();
        debug_assert_eq!(p, other.prime());
        let abs = Self::min_abs(self.absolute_precision(), other.absolute_precision());
        Self::from_lift(p, &(self.to_rational() + other.to_rational()), abs)
    }

    pub fn neg(&self) -> Self {
        match self {
            PadicScalar::Zero { .. } => self.clone(),
            PadicScalar::Unit { p, .. } => {
                let abs = self.absolute_precision();
                Self::from_lift(*p, &(-self.to_rational()), abs)
            }
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Self) -> Self {
        let p = self.prime();
        debug_assert_eq!(p, other.prime());
        match (self, other) {
            (
                PadicScalar::Unit {
                    exponent: e1,
                    unit: u1,
                    precision: n1,
                    ..
                },
                PadicScalar::Unit {
                    exponent: e2,
                    unit: u2,
                    precision: n2,
                    ..
                },
            ) => {
                let n = (*n1).min(*n2);
                let modulus = p_pow(p, n);
                PadicScalar::Unit {
                    p,
                    exponent: e1 + e2,
                    unit: (u1 * u2).mod_floor(&modulus),
                    precision: n,
                }
            }
            (PadicScalar::Zero { known_to: a, .. }, PadicScalar::Zero { known_to: b, .. }) => {
                PadicScalar::Zero {
                    p,
                    known_to: match (a, b) {
                        (Some(a), Some(b)) => Some(a + b),
                        _ => None,
                    },
                }
            }
            (PadicScalar::Zero { known_to, .. }, u @ PadicScalar::Unit { exponent, .. })
            | (u @ PadicScalar::Unit { exponent, .. }, PadicScalar::Zero { known_to, .. }) => {
                let _ = u;
                PadicScalar::Zero {
                    p,
                    known_to: known_to.map(|a| a + exponent),
                }
            }
        }
    }

    pub fn inv(&self) -> Result<Self> {
        match self {
            PadicScalar::Zero { .. } => {
                Err(Error::InvalidArgument("inverse of a p-adic zero".into()))
            }
            PadicScalar::Unit {
                p,
                exponent,
                unit,
                precision,
            } => {
                let modulus = p_pow(*p, *precision);
                Ok(PadicScalar::Unit {
                    p: *p,
                    exponent: -exponent,
                    unit: unit.modinv(&modulus).expect("unit residue is invertible"),
                    precision: *precision,
                })
            }
        }
    }

    pub fn div(&self, other: &Self) -> Result<Self> {
        Ok(self.mul(&other.inv()?))
    }
}

impl fmt::Display for PadicScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PadicScalar::Zero { p, known_to: None } => write!(f, "0 (p = {p})"),
            PadicScalar::Zero {
                p,
                known_to: Some(a),
            } => write!(f, "O({p}^{a})"),
            PadicScalar::Unit {
                p,
                exponent,
                unit,
                precision,
            } => write!(
                f,
                "{p}^{exponent} * {unit} + O({p}^{})",
                exponent + *precision as i64
            ),
        }
    }
}

/// Truncate an exact rational to relative precision `n`.
pub fn reduce_mod_precision(x: &BigRational, p: u64, n: u32) -> PadicScalar {
    PadicScalar::from_rational(p, x, n)
}

/// Parse `a`, `-a`, `a/b` into a rational.
pub fn parse_rational(s: &str) -> Option<BigRational> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once('/') {
        let a: BigInt = a.trim().parse().ok()?;
        let b: BigInt = b.trim().parse().ok()?;
        if b.is_zero() {
            return None;
        }
        Some(BigRational::new(a, b))
    } else {
        Some(BigRational::from_integer(s.parse().ok()?))
    }
}

pub fn rational_to_string(x: &BigRational) -> String {
    if x.is_integer() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

pub fn rational_abs_u64(x: &BigRational) -> Option<u64> {
    if x.is_integer() {
        x.numer().abs().to_u64()
    } else {
        None
    }
}
