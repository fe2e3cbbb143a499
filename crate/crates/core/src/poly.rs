//! Sparse Laurent polynomials in `x_1..x_d` with rational coefficients.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::padic::{self, Valuation};

/// Exponent vectors may be negative on torus charts.
pub type Exponent = Vec<i64>;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Poly {
    nvars: usize,
    terms: BTreeMap<Exponent, BigRational>,
}

/// Serialized as `{"nvars": d, "terms": [[exponent, "num/den"], ...]}`.
#[derive(Serialize, Deserialize)]
struct PolyRepr {
    nvars: usize,
    terms: Vec<(Exponent, String)>,
}

impl Serialize for Poly {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PolyRepr {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .map(|(e, c)| (e.clone(), padic::rational_to_string(c)))
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Poly {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = PolyRepr::deserialize(d)?;
        let mut out = Poly::zero(r.nvars);
        for (e, c) in r.terms {
            if e.len() != r.nvars {
                return Err(serde::de::Error::custom(format!(
                    "exponent {e:?} has the wrong length for {} variables",
                    r.nvars
                )));
            }
            let v = padic::parse_rational(&c)
                .ok_or_else(|| serde::de::Error::custom(format!("bad rational {c:?}")))?;
            out.add_term(e, v);
        }
        Ok(out)
    }
}

impl Poly {
    pub fn zero(nvars: usize) -> Self {
        Poly {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn one(nvars: usize) -> Self {
        Self::constant(nvars, BigRational::one())
    }

    pub fn constant(nvars: usize, c: BigRational) -> Self {
        Self::monomial(nvars, vec![0; nvars], c)
    }

    pub fn from_int(nvars: usize, c: i64) -> Self {
        Self::constant(nvars, BigRational::from_integer(BigInt::from(c)))
    }

    pub fn monomial(nvars: usize, exps: Exponent, c: BigRational) -> Self {
        assert_eq!(exps.len(), nvars);
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(exps, c);
        }
        Poly { nvars, terms }
    }

    /// The coordinate `x_j` (0-based).
    pub fn var(nvars: usize, j: usize) -> Self {
        let mut e = vec![0; nvars];
        e[j] = 1;
        Self::monomial(nvars, e, BigRational::one())
    }

    pub fn from_terms(nvars: usize, it: impl IntoIterator<Item = (Exponent, BigRational)>) -> Self {
        let mut p = Poly::zero(nvars);
        for (e, c) in it {
            p.add_term(e, c);
        }
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self.terms.len() == 1
            && self
                .terms
                .iter()
                .all(|(e, c)| e.iter().all(|&x| x == 0) && c.is_one())
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Exponent, &BigRational)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn coeff(&self, e: &[i64]) -> BigRational {
        self.terms.get(e).cloned().unwrap_or_else(BigRational::zero)
    }

    pub fn constant_term(&self) -> BigRational {
        self.coeff(&vec![0; self.nvars])
    }

    pub fn add_term(&mut self, e: Exponent, c: BigRational) {
        if c.is_zero() {
            return;
        }
        debug_assert_eq!(e.len(), self.nvars);
        match self.terms.entry(e) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    pub fn add_assign(&mut self, other: &Poly) {
        for (e, c) in &other.terms {
            self.add_term(e.clone(), c.clone());
        }
    }

    pub fn add_scaled(&mut self, other: &Poly, s: &BigRational) {
        if s.is_zero() {
            return;
        }
        for (e, c) in &other.terms {
            self.add_term(e.clone(), c * s);
        }
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut r = self.clone();
        r.add_assign(other);
        r
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        let mut r = self.clone();
        r.add_scaled(other, &-BigRational::one());
        r
    }

    pub fn neg(&self) -> Poly {
        self.scale(&-BigRational::one())
    }

    pub fn scale(&self, s: &BigRational) -> Poly {
        if s.is_zero() {
            return Poly::zero(self.nvars);
        }
        Poly {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .map(|(e, c)| (e.clone(), c * s))
                .collect(),
        }
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut r = Poly::zero(self.nvars);
        for (e1, c1) in &self.terms {
            for (e2, c2) in &other.terms {
                let e: Exponent = e1.iter().zip(e2).map(|(a, b)| a + b).collect();
                r.add_term(e, c1 * c2);
            }
        }
        r
    }

    /// Multiply by `x^shift`.
    pub fn shift(&self, shift: &[i64]) -> Poly {
        Poly {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .map(|(e, c)| (e.iter().zip(shift).map(|(a, b)| a + b).collect(), c.clone()))
                .collect(),
        }
    }

    pub fn pow(&self, n: u64) -> Poly {
        let mut result = Poly::one(self.nvars);
        let mut base = self.clone();
        let mut n = n;
        while n > 0 {
            if n & 1 == 1 {
                result = result.mul(&base);
            }
            n >>= 1;
            if n > 0 {
                base = base.mul(&base);
            }
        }
        result
    }

    /// `d/dx_j`.
    pub fn derivative(&self, j: usize) -> Poly {
        let mut r = Poly::zero(self.nvars);
        for (e, c) in &self.terms {
            if e[j] != 0 {
                let mut e2 = e.clone();
                e2[j] -= 1;
                r.add_term(e2, c * BigRational::from_integer(BigInt::from(e[j])));
            }
        }
        r
    }

    /// Apply `d^r` coordinatewise.
    pub fn derivative_multi(&self, r: &[u64]) -> Poly {
        let mut out = self.clone();
        for (j, &rj) in r.iter().enumerate() {
            for _ in 0..rj {
                if out.is_zero() {
                    return out;
                }
                out = out.derivative(j);
            }
        }
        out
    }

    /// True when every exponent is nonnegative.
    pub fn is_polynomial(&self) -> bool {
        self.terms.keys().all(|e| e.iter().all(|&x| x >= 0))
    }

    /// Largest total degree; `None` for zero.
    pub fn total_degree(&self) -> Option<i64> {
        self.terms.keys().map(|e| e.iter().sum()).max()
    }

    pub fn degree_in(&self, j: usize) -> Option<i64> {
        self.terms.keys().map(|e| e[j]).max()
    }

    pub fn min_degree_in(&self, j: usize) -> Option<i64> {
        self.terms.keys().map(|e| e[j]).min()
    }

    /// Gauss valuation: the minimum coefficient valuation.
    pub fn valuation(&self, p: u64) -> Valuation {
        self.terms
            .values()
            .map(|c| padic::valuation(p, c))
            .min()
            .unwrap_or(Valuation::Infinite)
    }

    pub fn is_integral(&self, p: u64) -> bool {
        self.valuation(p).is_nonnegative()
    }

    /// Canonical representative of the class modulo `p^a`.
    pub fn reduce_abs(&self, p: u64, a: i64) -> Poly {
        Poly::from_terms(
            self.nvars,
            self.terms
                .iter()
                .map(|(e, c)| (e.clone(), padic::reduce_rational_abs(p, c, a))),
        )
    }

    /// A single term `c x^e`.
    pub fn as_monomial(&self) -> Option<(&Exponent, &BigRational)> {
        if self.terms.len() == 1 {
            self.terms.iter().next()
        } else {
            None
        }
    }

    pub fn map_coeffs(&self, f: impl Fn(&BigRational) -> BigRational) -> Poly {
        Poly::from_terms(
            self.nvars,
            self.terms.iter().map(|(e, c)| (e.clone(), f(c))),
        )
    }

    /// Evaluate at an integer point; exponents must be nonnegative where the coordinate is 0.
    pub fn eval(&self, point: &[BigRational]) -> BigRational {
        let mut acc = BigRational::zero();
        for (e, c) in &self.terms {
            let mut t = c.clone();
            for (x, &k) in point.iter().zip(e) {
                if k >= 0 {
                    t *= num_traits::pow(x.clone(), k as usize);
                } else {
                    t /= num_traits::pow(x.clone(), k.unsigned_abs() as usize);
                }
            }
            acc += t;
        }
        acc
    }

    pub fn into_terms(self) -> BTreeMap<Exponent, BigRational> {
        self.terms
    }

    pub fn is_constant(&self) -> bool {
        self.terms.keys().all(|e| e.iter().all(|&x| x == 0))
    }
}

fn write_monomial(f: &mut fmt::Formatter<'_>, e: &[i64]) -> fmt::Result {
    let mut first = true;
    for (j, &k) in e.iter().enumerate() {
        if k == 0 {
            continue;
        }
        if !first {
            write!(f, "*")?;
        }
        first = false;
        if k == 1 {
            write!(f, "x{}", j + 1)?;
        } else if k > 0 {
            write!(f, "x{}^{}", j + 1, k)?;
        } else {
            write!(f, "x{}^({})", j + 1, k)?;
        }
    }
    Ok(())
}

/// ASCII rendering, highest total degree first; parses back with the expression reader.
impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut keys: Vec<&Exponent> = self.terms.keys().collect();
        keys.sort_by(|a, b| {
            let da: i64 = a.iter().sum();
            let db: i64 = b.iter().sum();
            db.cmp(&da).then_with(|| b.cmp(a))
        });
        for (idx, e) in keys.into_iter().enumerate() {
            let c = &self.terms[e];
            let neg = c.is_negative();
            let a = c.abs();
            if idx == 0 {
                if neg {
                    write!(f, "-")?;
                }
            } else if neg {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let is_const = e.iter().all(|&x| x == 0);
            if is_const {
                write!(f, "{}", padic::rational_to_string(&a))?;
            } else {
                if !a.is_one() {
                    write!(f, "{}*", padic::rational_to_string(&a))?;
                }
                write_monomial(f, e)?;
            }
        }
        Ok(())
    }
}

/// Signed pieces of `c * basis` for use in a sum; an empty `basis` means `c` alone.
pub fn format_term(c: &Poly, basis: &str) -> Vec<(bool, String)> {
    if basis.is_empty() {
        let mut keys: Vec<&Exponent> = c.terms.keys().collect();
        keys.sort_by(|a, b| {
            let da: i64 = a.iter().sum();
            let db: i64 = b.iter().sum();
            db.cmp(&da).then_with(|| b.cmp(a))
        });
        return keys
            .into_iter()
            .map(|e| {
                let v = &c.terms[e];
                let mono = Poly::monomial(c.nvars, e.clone(), v.abs());
                (v.is_negative(), mono.to_string())
            })
            .collect();
    }
    if let Some((e, v)) = c.as_monomial() {
        let mono = Poly::monomial(c.nvars, e.clone(), v.abs());
        let s = if mono.is_one() {
            basis.to_string()
        } else {
            format!("{mono}*{basis}")
        };
        vec![(v.is_negative(), s)]
    } else {
        vec![(false, format!("({c})*{basis}"))]
    }
}

pub fn join_terms(terms: &[(bool, String)]) -> String {
    if terms.is_empty() {
        return "0".to_string();
    }
    let mut out = String::new();
    for (idx, (neg, s)) in terms.iter().enumerate() {
        match (idx, neg) {
            (0, true) => out.push('-'),
            (0, false) => {}
            (_, true) => out.push_str(" - "),
            (_, false) => out.push_str(" + "),
        }
        out.push_str(s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(a: i64) -> BigRational {
        BigRational::from_integer(BigInt::from(a))
    }

    #[test]
    fn arithmetic_and_derivatives() {
        let x = Poly::var(1, 0);
        let p = x.pow(3).add(&Poly::from_int(1, 2));
        assert_eq!(p.derivative(0), x.pow(2).scale(&q(3)));
        assert_eq!(p.derivative_multi(&[4]), Poly::zero(1));
        let inv = Poly::monomial(1, vec![-1], q(1));
        assert_eq!(inv.derivative(0), Poly::monomial(1, vec![-2], q(-1)));
        assert_eq!(inv.mul(&x), Poly::one(1));
    }

    #[test]
    fn display() {
        let x = Poly::var(2, 0);
        let y = Poly::var(2, 1);
        let p = x.mul(&y).sub(&Poly::from_int(2, 3)).add(&y.pow(2).scale(&q(2)));
        assert_eq!(p.to_string(), "x1*x2 + 2*x2^2 - 3");
        assert_eq!(Poly::zero(1).to_string(), "0");
    }

    #[test]
    fn gauss_valuation() {
        let p = Poly::from_terms(1, vec![(vec![0], q(4)), (vec![1], BigRational::new(1.into(), 2.into()))]);
        assert_eq!(p.valuation(2), Valuation::Finite(-1));
        assert_eq!(Poly::zero(1).valuation(2), Valuation::Infinite);
    }
}
