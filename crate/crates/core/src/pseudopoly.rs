//! Level-`m` pseudo-polynomial symbols `A[xi]^(m)`.
//!
//! Elements are stored in digit normal form: per coordinate a digit vector
//! `(c_0, .., c_m)` with `c_i < p` for `i < m` and `c_m` unbounded, standing
//! for `prod_{i<m} (xi^<p^i>)^{c_i} * (xi^<p^m>)^{c_m}` where
//! `xi^<p^i> = xi^{p^i} / (p^i)!`. The carry rule is
//! `(xi^<p^i>)^p = (p^{i+1})!/((p^i)!)^p * xi^<p^{i+1}>`.
//! The digit monomial of total index `k` equals a p-adic unit times the
//! divided power `xi^<m><k> = (q!/k!) xi^k`, `q = floor(k/p^m)`.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::One;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::padic::{self, factorial, quotient_factorial, Valuation};
use crate::poly::{format_term, join_terms, Poly};

/// Coefficients are exact rationals, or classes modulo `p^N` of integral ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CoeffRing {
    Rational,
    ModPow(u32),
}

impl CoeffRing {
    pub fn meet(self, other: CoeffRing) -> CoeffRing {
        match (self, other) {
            (CoeffRing::Rational, x) | (x, CoeffRing::Rational) => x,
            (CoeffRing::ModPow(a), CoeffRing::ModPow(b)) => CoeffRing::ModPow(a.min(b)),
        }
    }
}

/// Base-`p` digits of `k` below `p^m`, followed by `floor(k/p^m)`.
pub fn digits_of(p: u64, m: u32, k: u64) -> Vec<u64> {
    let mut out = Vec::with_capacity(m as usize + 1);
    let mut rest = k;
    for _ in 0..m {
        out.push(rest % p);
        rest /= p;
    }
    out.push(rest);
    out
}

pub fn index_of_digits(p: u64, digits: &[u64]) -> u64 {
    digits
        .iter()
        .enumerate()
        .map(|(i, &c)| c * p.pow(i as u32))
        .sum()
}

/// `(p^{i+1})! / ((p^i)!)^p`, of valuation one.
pub fn carry_constant(p: u64, i: u32) -> BigInt {
    let top = factorial(p.pow(i + 1));
    let base = factorial(p.pow(i));
    top / num_traits::pow(base, p as usize)
}

/// Rational factor `u` with `digit monomial = u * xi^<m><k>`; a p-adic unit.
pub fn digit_unit(p: u64, m: u32, digits: &[u64]) -> BigRational {
    let k = index_of_digits(p, digits);
    let q = digits[m as usize];
    let mut den = factorial(q);
    for (i, &c) in digits.iter().enumerate() {
        den *= num_traits::pow(factorial(p.pow(i as u32)), c as usize);
    }
    BigRational::new(factorial(k), den)
}

/// Symbol in `A[xi_1..xi_d]^(m)` with polynomial coefficients in `x`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolPoly {
    p: u64,
    level: u32,
    nvars: usize,
    ring: CoeffRing,
    terms: BTreeMap<Vec<u64>, Poly>,
}

impl SymbolPoly {
    pub fn zero(p: u64, level: u32, nvars: usize, ring: CoeffRing) -> Self {
        SymbolPoly {
            p,
            level,
            nvars,
            ring,
            terms: BTreeMap::new(),
        }
    }

    pub fn one(p: u64, level: u32, nvars: usize, ring: CoeffRing) -> Self {
        let mut s = Self::zero(p, level, nvars, ring);
        s.add_digit_term(vec![0; nvars * (level as usize + 1)], Poly::one(nvars));
        s
    }

    /// The coefficient `a(x)` as a degree-zero symbol.
    pub fn from_coefficient(p: u64, level: u32, a: Poly, ring: CoeffRing) -> Self {
        let nvars = a.nvars();
        let mut s = Self::zero(p, level, nvars, ring);
        s.add_digit_term(vec![0; nvars * (level as usize + 1)], a);
        s
    }

    /// `coeff * xi^<m><k>`.
    pub fn divided_power(p: u64, level: u32, k: &[u64], coeff: Poly, ring: CoeffRing) -> Self {
        let nvars = k.len();
        let mut key = Vec::with_capacity(nvars * (level as usize + 1));
        let mut unit = BigRational::one();
        for &kj in k {
            let dig = digits_of(p, level, kj);
            unit *= digit_unit(p, level, &dig);
            key.extend(dig);
        }
        let mut s = Self::zero(p, level, nvars, ring);
        s.add_digit_term(key, coeff.scale(&unit.recip()));
        s
    }

    /// The level-0 monomial `coeff * xi^k`.
    pub fn power_monomial(p: u64, k: &[u64], coeff: Poly) -> Self {
        Self::divided_power(p, 0, k, coeff, CoeffRing::Rational)
    }

    pub fn prime(&self) -> u64 {
        self.p
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn ring(&self) -> CoeffRing {
        self.ring
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    fn stride(&self) -> usize {
        self.level as usize + 1
    }

    /// Digit-form terms; keys are coordinate-major digit vectors.
    pub fn digit_terms(&self) -> impl Iterator<Item = (&Vec<u64>, &Poly)> {
        self.terms.iter()
    }

    fn reduce_coeff(&self, c: Poly) -> Poly {
        match self.ring {
            CoeffRing::Rational => c,
            CoeffRing::ModPow(n) => c.reduce_abs(self.p, n as i64),
        }
    }

    /// Add a term whose digits may violate `c_i < p`; carries are applied.
    pub fn add_digit_term(&mut self, key: Vec<u64>, coeff: Poly) {
        let (key, factor) = self.carry(key);
        let c = if factor.is_one() {
            coeff
        } else {
            coeff.scale(&BigRational::from_integer(factor))
        };
        let entry = self
            .terms
            .entry(key.clone())
            .or_insert_with(|| Poly::zero(self.nvars));
        entry.add_assign(&c);
        let reduced = match self.ring {
            CoeffRing::Rational => None,
            CoeffRing::ModPow(n) => Some(entry.reduce_abs(self.p, n as i64)),
        };
        if let Some(r) = reduced {
            *entry = r;
        }
        if entry.is_zero() {
            self.terms.remove(&key);
        }
    }

    fn carry(&self, mut key: Vec<u64>) -> (Vec<u64>, BigInt) {
        let p = self.p;
        let stride = self.stride();
        let mut factor = BigInt::one();
        for j in 0..self.nvars {
            for i in 0..self.level as usize {
                let c = key[j * stride + i];
                if c >= p {
                    let carries = c / p;
                    key[j * stride + i] = c % p;
                    key[j * stride + i + 1] += carries;
                    factor *= num_traits::pow(carry_constant(p, i as u32), carries as usize);
                }
            }
        }
        (key, factor)
    }

    /// Re-apply carries and coefficient reduction.
    pub fn normalize(&self) -> SymbolPoly {
        let mut out = Self::zero(self.p, self.level, self.nvars, self.ring);
        for (k, c) in &self.terms {
            out.add_digit_term(k.clone(), self.reduce_coeff(c.clone()));
        }
        out
    }

    fn check_compatible(&self, other: &SymbolPoly) -> Result<()> {
        if self.p != other.p {
            return Err(Error::InvalidArgument(format!(
                "primes differ: {} vs {}",
                self.p, other.p
            )));
        }
        if self.level != other.level {
            return Err(Error::LevelMismatch(format!(
                "symbols of level {} and {}",
                self.level, other.level
            )));
        }
        if self.nvars != other.nvars {
            return Err(Error::DimensionMismatch {
                expected: self.nvars,
                found: other.nvars,
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &SymbolPoly) -> Result<SymbolPoly> {
        self.check_compatible(other)?;
        let mut out = self.with_ring(self.ring.meet(other.ring));
        for (k, c) in &other.terms {
            out.add_digit_term(k.clone(), c.clone());
        }
        Ok(out)
    }

    pub fn neg(&self) -> SymbolPoly {
        self.scale(&-BigRational::one())
    }

    pub fn sub(&self, other: &SymbolPoly) -> Result<SymbolPoly> {
        self.add(&other.neg())
    }

    pub fn scale(&self, s: &BigRational) -> SymbolPoly {
        let mut out = Self::zero(self.p, self.level, self.nvars, self.ring);
        for (k, c) in &self.terms {
            out.add_digit_term(k.clone(), c.scale(s));
        }
        out
    }

    pub fn mul_coefficient(&self, a: &Poly) -> SymbolPoly {
        let mut out = Self::zero(self.p, self.level, self.nvars, self.ring);
        for (k, c) in &self.terms {
            out.add_digit_term(k.clone(), c.mul(a));
        }
        out
    }

    pub fn multiply(&self, other: &SymbolPoly) -> Result<SymbolPoly> {
        self.check_compatible(other)?;
        let mut out = Self::zero(self.p, self.level, self.nvars, self.ring.meet(other.ring));
        for (k1, c1) in &self.terms {
            for (k2, c2) in &other.terms {
                let key: Vec<u64> = k1.iter().zip(k2).map(|(a, b)| a + b).collect();
                out.add_digit_term(key, c1.mul(c2));
            }
        }
        Ok(out)
    }

    pub fn pow(&self, e: u64) -> SymbolPoly {
        let mut acc = Self::one(self.p, self.level, self.nvars, self.ring);
        for _ in 0..e {
            acc = acc.multiply(self).expect("compatible with itself");
        }
        acc
    }

    /// Coefficients of the divided powers `xi^<m><k>`.
    pub fn to_k_basis(&self) -> BTreeMap<Vec<u64>, Poly> {
        let stride = self.stride();
        let mut out: BTreeMap<Vec<u64>, Poly> = BTreeMap::new();
        for (key, c) in &self.terms {
            let mut k = Vec::with_capacity(self.nvars);
            let mut unit = BigRational::one();
            for j in 0..self.nvars {
                let dig = &key[j * stride..(j + 1) * stride];
                k.push(index_of_digits(self.p, dig));
                unit *= digit_unit(self.p, self.level, dig);
            }
            let e = out.entry(k).or_insert_with(|| Poly::zero(self.nvars));
            e.add_assign(&self.reduce_coeff(c.scale(&unit)));
        }
        out.retain(|_, c| !c.is_zero());
        out
    }

    pub fn from_k_basis(
        p: u64,
        level: u32,
        nvars: usize,
        ring: CoeffRing,
        terms: &BTreeMap<Vec<u64>, Poly>,
    ) -> SymbolPoly {
        let mut out = Self::zero(p, level, nvars, ring);
        for (k, c) in terms {
            let t = Self::divided_power(p, level, k, c.clone(), ring);
            for (kk, cc) in t.terms {
                out.add_digit_term(kk, cc);
            }
        }
        out
    }

    fn with_ring(&self, ring: CoeffRing) -> SymbolPoly {
        let mut out = Self::zero(self.p, self.level, self.nvars, ring);
        for (k, c) in &self.terms {
            out.add_digit_term(k.clone(), c.clone());
        }
        out
    }

    /// Reduce coefficients modulo `p^n`; fails on non-integral coefficients.
    pub fn reduce_mod(&self, n: u32) -> Result<SymbolPoly> {
        for c in self.terms.values() {
            if !c.is_integral(self.p) {
                return Err(Error::NotIntegral(format!("coefficient {c}")));
            }
        }
        Ok(self.with_ring(self.ring.meet(CoeffRing::ModPow(n))))
    }

    /// The isomorphism `A[xi]^(m) (x) Q = A[xi]^(m') (x) Q`,
    /// `xi^<m><k> = (q_m(k)! / q_m'(k)!) xi^<m'><k>`. Integral when `m' >= m`.
    pub fn rational_level_change(&self, target: u32) -> Result<SymbolPoly> {
        let basis = self.to_k_basis();
        let mut out: BTreeMap<Vec<u64>, Poly> = BTreeMap::new();
        for (k, c) in basis {
            let f = level_change_factor(self.p, self.level, target, &k);
            if let CoeffRing::ModPow(_) = self.ring {
                if !padic::is_p_integral(self.p, &f) {
                    return Err(Error::NotIntegral(format!(
                        "level change {} -> {target} of xi index {k:?}",
                        self.level
                    )));
                }
            }
            out.insert(k, c.scale(&f));
        }
        Ok(SymbolPoly::from_k_basis(
            self.p,
            target,
            self.nvars,
            self.ring,
            &out,
        ))
    }

    /// `Some(n)` when all terms have total index `n`.
    pub fn homogeneous_degree(&self) -> Option<u64> {
        let mut deg = None;
        for k in self.to_k_basis().keys() {
            let n: u64 = k.iter().sum();
            match deg {
                None => deg = Some(n),
                Some(d) if d != n => return None,
                _ => {}
            }
        }
        deg
    }

    /// The top-degree component and its degree.
    pub fn leading_part(&self) -> Option<(u64, SymbolPoly)> {
        let basis = self.to_k_basis();
        let top = basis.keys().map(|k| k.iter().sum::<u64>()).max()?;
        let part: BTreeMap<_, _> = basis
            .into_iter()
            .filter(|(k, _)| k.iter().sum::<u64>() == top)
            .collect();
        Some((
            top,
            SymbolPoly::from_k_basis(self.p, self.level, self.nvars, self.ring, &part),
        ))
    }

    /// Terms surviving modulo the nilradical over `F_p`: all digits below
    /// `m` vanish, leaving `a(x) * prod_j (xi_j^<p^m>)^{e_j}`.
    pub fn reduced_part(&self) -> BTreeMap<Vec<u64>, Poly> {
        let stride = self.stride();
        let mut out = BTreeMap::new();
        for (key, c) in &self.terms {
            let mut e = Vec::with_capacity(self.nvars);
            let mut ok = true;
            for j in 0..self.nvars {
                let dig = &key[j * stride..(j + 1) * stride];
                if dig[..self.level as usize].iter().any(|&d| d != 0) {
                    ok = false;
                    break;
                }
                e.push(dig[self.level as usize]);
            }
            if ok {
                out.insert(e, c.clone());
            }
        }
        out
    }

    /// Coefficient valuation; the minimum over all terms.
    pub fn valuation(&self) -> Valuation {
        self.terms
            .values()
            .map(|c| c.valuation(self.p))
            .min()
            .unwrap_or(Valuation::Infinite)
    }
}

/// `q_m(k)! / q_t(k)!` as a product over coordinates.
pub fn level_change_factor(p: u64, from: u32, to: u32, k: &[u64]) -> BigRational {
    let mut num = BigInt::one();
    let mut den = BigInt::one();
    for &kj in k {
        num *= quotient_factorial(p, from, kj);
        den *= quotient_factorial(p, to, kj);
    }
    BigRational::new(num, den)
}

/// `(Theta^(m), Theta^(m,m'))` for a homogeneous level-0 symbol
/// `Theta = sum a_k xi^k` of degree `n > 0`:
/// `Theta^(m) = sum a_k^{p^m} (xi^<m><p^m>)^k` and
/// `Theta^(m,m') = sum a_k^{p^m'} (xi^<m><p^m>)^{k p^{m'-m}}`, both at level `m`.
pub fn theta_variants(theta: &SymbolPoly, m: u32, m2: u32) -> Result<(SymbolPoly, SymbolPoly)> {
    if theta.level() != 0 {
        return Err(Error::LevelMismatch(format!(
            "localizer symbol must be given at level 0, got level {}",
            theta.level()
        )));
    }
    if m2 < m {
        return Err(Error::InvalidArgument(format!(
            "need m <= m', got m = {m}, m' = {m2}"
        )));
    }
    let n = theta.homogeneous_degree().ok_or(Error::NotHomogeneous)?;
    if n == 0 {
        return Err(Error::DegreeZeroLocalizer);
    }
    let p = theta.prime();
    let d = theta.nvars();
    let pm = p.pow(m);
    let j = m2 - m;
    let mut t_m = SymbolPoly::zero(p, m, d, theta.ring());
    let mut t_mm = SymbolPoly::zero(p, m, d, theta.ring());
    let base: Vec<SymbolPoly> = (0..d)
        .map(|jj| {
            let mut k = vec![0; d];
            k[jj] = pm;
            SymbolPoly::divided_power(p, m, &k, Poly::one(d), theta.ring())
        })
        .collect();
    for (k, a) in theta.to_k_basis() {
        let mut mono = SymbolPoly::one(p, m, d, theta.ring());
        for (jj, &kj) in k.iter().enumerate() {
            mono = mono.multiply(&base[jj].pow(kj))?;
        }
        t_m = t_m.add(&mono.mul_coefficient(&a.pow(pm)))?;
        let mono2 = mono.pow(p.pow(j));
        t_mm = t_mm.add(&mono2.mul_coefficient(&a.pow(p.pow(m2))))?;
    }
    Ok((t_m, t_mm))
}

/// Constant `c` with `xi^<m'><l> (Theta^(m'))^{-i} |-> c * xi^<m><l> (Theta^(m,m'))^{-i}`
/// under the rational comparison of localized symbol rings; `n` is the
/// degree of `Theta`.
pub fn pisog_constant(p: u64, m: u32, m2: u32, n: u64, l: &[u64], i: u64) -> BigRational {
    let r = padic::level_factorial_ratio_exact(p, m, m2).expect("m <= m'");
    let f = level_change_factor(p, m2, m, l);
    f * num_traits::pow(r, (n * i) as usize)
}

/// Valuation of [`pisog_constant`] without big-number arithmetic.
pub fn pisog_valuation(p: u64, m: u32, m2: u32, n: u64, l: &[u64], i: u64) -> i64 {
    let rv = padic::level_factorial_ratio_valuation(p, m, m2) as i64;
    let mut fv = 0i64;
    for &lj in l {
        for s in (m + 1)..=m2 {
            fv += (lj / p.pow(s)) as i64;
        }
    }
    rv * (n * i) as i64 - fv
}

impl fmt::Display for SymbolPoly {
    /// Sum of `coeff*xi<m>[k]` over the divided-power basis, highest index first.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let basis = self.to_k_basis();
        let mut keys: Vec<&Vec<u64>> = basis.keys().collect();
        keys.sort_by(|a, b| {
            let da: u64 = a.iter().sum();
            let db: u64 = b.iter().sum();
            db.cmp(&da).then_with(|| b.cmp(a))
        });
        let terms: Vec<(bool, String)> = keys
            .into_iter()
            .flat_map(|k| {
                let ks: Vec<String> = k.iter().map(|x| x.to_string()).collect();
                let basis_name = if k.iter().all(|&x| x == 0) {
                    String::new()
                } else {
                    format!("xi{}[{}]", self.level, ks.join(","))
                };
                format_term(&basis[k], &basis_name)
            })
            .collect();
        write!(f, "{}", join_terms(&terms))
    }
}

impl SymbolPoly {
    /// Dense rational value of the symbol as a level-0 polynomial in `xi`:
    /// map of exponent `k` to coefficient, using `xi^<m><k> = (q!/k!) xi^k`.
    pub fn to_level_zero(&self) -> BTreeMap<Vec<u64>, Poly> {
        let mut out = BTreeMap::new();
        for (k, c) in self.to_k_basis() {
            let f = padic::divided_power_coefficient(self.p, self.level, &k);
            out.insert(k, c.scale(&f));
        }
        out
    }

    pub fn is_integral(&self) -> bool {
        self.valuation().is_nonnegative()
    }

    pub fn terms_len(&self) -> usize {
        self.terms.len()
    }

    pub fn coeff_of_k(&self, k: &[u64]) -> Poly {
        self.to_k_basis()
            .remove(k)
            .unwrap_or_else(|| Poly::zero(self.nvars))
    }

    pub fn is_zero_mod_p(&self) -> bool {
        self.terms.values().all(|c| c.valuation(self.p) >= Valuation::Finite(1))
    }
}
