//! Level-`m` differential operators `sum_k a_k(x) d^<m><k>` on affine space.

use std::collections::BTreeMap;
use std::fmt;

use num_rational::BigRational;
use num_traits::One;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::padic::{divided_power_coefficient, Valuation};
use crate::poly::{format_term, join_terms, Poly};
use crate::pseudodiff::PseudoDiff;
use crate::pseudopoly::{level_change_factor, CoeffRing, SymbolPoly};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffOp {
    p: u64,
    level: u32,
    nvars: usize,
    /// `Some(n)`: the operator is a class modulo `p^n` (coefficients integral).
    precision: Option<u32>,
    terms: BTreeMap<Vec<u64>, Poly>,
}

/// Order, principal symbol over `F_p`, and the first order whose part survives mod `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderSymbol {
    pub order: u64,
    pub symbol: SymbolPoly,
    pub first_nonvanishing: Option<(u64, SymbolPoly)>,
}

impl DiffOp {
    pub fn zero(p: u64, level: u32, nvars: usize) -> Self {
        DiffOp {
            p,
            level,
            nvars,
            precision: None,
            terms: BTreeMap::new(),
        }
    }

    pub fn one(p: u64, level: u32, nvars: usize) -> Self {
        Self::coefficient(p, level, Poly::one(nvars))
    }

    pub fn coefficient(p: u64, level: u32, a: Poly) -> Self {
        let nvars = a.nvars();
        Self::monomial(p, level, vec![0; nvars], a)
    }

    /// `a * d^<m><k>`.
    pub fn monomial(p: u64, level: u32, k: Vec<u64>, a: Poly) -> Self {
        let mut out = Self::zero(p, level, a.nvars());
        out.add_term(k, a);
        out
    }

    pub fn basis(p: u64, level: u32, nvars: usize, k: Vec<u64>) -> Self {
        Self::monomial(p, level, k, Poly::one(nvars))
    }

    /// `d_j` (0-based), equal to `d_j^<m><1>` at every level.
    pub fn d(p: u64, level: u32, nvars: usize, j: usize) -> Self {
        let mut k = vec![0; nvars];
        k[j] = 1;
        Self::basis(p, level, nvars, k)
    }

    pub fn x(p: u64, level: u32, nvars: usize, j: usize) -> Self {
        Self::coefficient(p, level, Poly::var(nvars, j))
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

    pub fn precision(&self) -> Option<u32> {
        self.precision
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u64>, &Poly)> {
        self.terms.iter()
    }

    pub fn coeff(&self, k: &[u64]) -> Poly {
        self.terms
            .get(k)
            .cloned()
            .unwrap_or_else(|| Poly::zero(self.nvars))
    }

    pub fn add_term(&mut self, k: Vec<u64>, a: Poly) {
        let a = match self.precision {
            Some(n) => a.reduce_abs(self.p, n as i64),
            None => a,
        };
        if a.is_zero() {
            return;
        }
        let e = self
            .terms
            .entry(k.clone())
            .or_insert_with(|| Poly::zero(a.nvars()));
        e.add_assign(&a);
        if let Some(n) = self.precision {
            *e = e.reduce_abs(self.p, n as i64);
        }
        if e.is_zero() {
            self.terms.remove(&k);
        }
    }

    fn check_compatible(&self, other: &DiffOp) -> Result<()> {
        if self.p != other.p {
            return Err(Error::InvalidArgument(format!(
                "primes differ: {} vs {}",
                self.p, other.p
            )));
        }
        if self.level != other.level {
            return Err(Error::LevelMismatch(format!(
                "operators of level {} and {}",
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

    fn meet_precision(a: Option<u32>, b: Option<u32>) -> Option<u32> {
        match (a, b) {
            (None, x) | (x, None) => x,
            (Some(x), Some(y)) => Some(x.min(y)),
        }
    }

    fn empty_like(&self, precision: Option<u32>) -> DiffOp {
        DiffOp {
            p: self.p,
            level: self.level,
            nvars: self.nvars,
            precision,
            terms: BTreeMap::new(),
        }
    }

    pub fn add(&self, other: &DiffOp) -> Result<DiffOp> {
        self.check_compatible(other)?;
        let mut out = self.empty_like(Self::meet_precision(self.precision, other.precision));
        for (k, a) in self.terms.iter().chain(other.terms.iter()) {
            out.add_term(k.clone(), a.clone());
        }
        Ok(out)
    }

    pub fn sub(&self, other: &DiffOp) -> Result<DiffOp> {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> DiffOp {
        self.scale(&-BigRational::one())
    }

    pub fn scale(&self, s: &BigRational) -> DiffOp {
        let mut out = self.empty_like(self.precision);
        for (k, a) in &self.terms {
            out.add_term(k.clone(), a.scale(s));
        }
        out
    }

    pub fn left_mul_coeff(&self, c: &Poly) -> DiffOp {
        let mut out = self.empty_like(self.precision);
        for (k, a) in &self.terms {
            out.add_term(k.clone(), c.mul(a));
        }
        out
    }

    /// Treat the operator as a class modulo `p^n`.
    pub fn with_precision(&self, n: Option<u32>) -> Result<DiffOp> {
        if n.is_some() && !self.is_integral() {
            return Err(Error::NotIntegral(self.to_string()));
        }
        let mut out = self.empty_like(n);
        for (k, a) in &self.terms {
            out.add_term(k.clone(), a.clone());
        }
        Ok(out)
    }

    pub fn valuation(&self) -> Valuation {
        self.terms
            .values()
            .map(|a| a.valuation(self.p))
            .min()
            .unwrap_or(Valuation::Infinite)
    }

    pub fn is_integral(&self) -> bool {
        self.valuation().is_nonnegative()
    }

    /// Largest `|k|` with nonzero coefficient.
    pub fn order(&self) -> Option<u64> {
        self.terms.keys().map(|k| k.iter().sum()).max()
    }

    /// Image in the level-0 rational pseudo-differential calculus.
    pub fn lift(&self) -> PseudoDiff {
        let mut out = PseudoDiff::zero(self.nvars);
        for (k, a) in &self.terms {
            let c = divided_power_coefficient(self.p, self.level, k);
            out.add_term(k.iter().map(|&x| x as i64).collect(), a.scale(&c));
        }
        out
    }

    /// Re-express a finite-order, nonnegative-index operator in the level-`m` basis.
    pub fn from_lift(p: u64, level: u32, pd: &PseudoDiff) -> Result<DiffOp> {
        let mut out = DiffOp::zero(p, level, pd.nvars());
        for (s, c) in pd.terms() {
            if s.iter().any(|&x| x < 0) {
                return Err(Error::InvalidArgument(format!(
                    "negative derivative index {s:?} is not a differential operator"
                )));
            }
            let k: Vec<u64> = s.iter().map(|&x| x as u64).collect();
            let f = divided_power_coefficient(p, level, &k).recip();
            out.add_term(k, c.scale(&f));
        }
        Ok(out)
    }

    pub fn multiply(&self, other: &DiffOp) -> Result<DiffOp> {
        self.check_compatible(other)?;
        let prod = self.lift().mul(&other.lift(), None);
        let mut out = DiffOp::from_lift(self.p, self.level, &prod)?;
        if self.is_integral() && other.is_integral() && !out.is_integral() {
            return Err(Error::IntegralityViolation(format!(
                "product of integral operators {self} and {other} at level {}",
                self.level
            )));
        }
        let prec = Self::meet_precision(self.precision, other.precision);
        if prec.is_some() {
            out = out.with_precision(prec)?;
        }
        Ok(out)
    }

    pub fn pow(&self, e: u64) -> Result<DiffOp> {
        let mut acc = DiffOp::one(self.p, self.level, self.nvars).with_precision(self.precision)?;
        for _ in 0..e {
            acc = acc.multiply(self)?;
        }
        Ok(acc)
    }

    pub fn commutator(&self, other: &DiffOp) -> Result<DiffOp> {
        self.multiply(other)?.sub(&other.multiply(self)?)
    }

    /// Exact top-order symbol over `Q`.
    pub fn rational_symbol(&self) -> Option<(u64, SymbolPoly)> {
        let order = self.order()?;
        let part: BTreeMap<Vec<u64>, Poly> = self
            .terms
            .iter()
            .filter(|(k, _)| k.iter().sum::<u64>() == order)
            .map(|(k, a)| (k.clone(), a.clone()))
            .collect();
        Some((
            order,
            SymbolPoly::from_k_basis(self.p, self.level, self.nvars, CoeffRing::Rational, &part),
        ))
    }

    fn part_symbol_mod_p(&self, order: u64) -> SymbolPoly {
        let part: BTreeMap<Vec<u64>, Poly> = self
            .terms
            .iter()
            .filter(|(k, _)| k.iter().sum::<u64>() == order)
            .map(|(k, a)| (k.clone(), a.reduce_abs(self.p, 1)))
            .collect();
        SymbolPoly::from_k_basis(self.p, self.level, self.nvars, CoeffRing::ModPow(1), &part)
    }

    /// Order and principal symbol over the special fiber.
    pub fn order_and_symbol(&self) -> Result<OrderSymbol> {
        let order = self.order().ok_or(Error::ZeroOperator)?;
        if !self.is_integral() {
            return Err(Error::NotIntegral(self.to_string()));
        }
        let symbol = self.part_symbol_mod_p(order);
        let mut orders: Vec<u64> = self.terms.keys().map(|k| k.iter().sum()).collect();
        orders.sort_unstable_by(|a, b| b.cmp(a));
        orders.dedup();
        let first_nonvanishing = orders
            .into_iter()
            .map(|o| (o, self.part_symbol_mod_p(o)))
            .find(|(_, s)| !s.is_zero());
        Ok(OrderSymbol {
            order,
            symbol,
            first_nonvanishing,
        })
    }

    /// `phi`: `d^<m><k> = (q_m(k)!/q_m'(k)!) d^<m'><k>`, integral for `m' >= m`.
    pub fn level_map_phi(&self, target: u32) -> Result<DiffOp> {
        if target < self.level {
            return Err(Error::LevelMismatch(format!(
                "level map goes upward, got {} -> {target}",
                self.level
            )));
        }
        self.level_change_rational(target)
    }

    /// The rational identification `D^(m)_Q = D^(m')_Q` in either direction.
    pub fn level_change_rational(&self, target: u32) -> Result<DiffOp> {
        let mut out = DiffOp::zero(self.p, target, self.nvars);
        for (k, a) in &self.terms {
            let f = level_change_factor(self.p, self.level, target, k);
            out.add_term(k.clone(), a.scale(&f));
        }
        if self.precision.is_some() {
            out = out.with_precision(self.precision)?;
        }
        Ok(out)
    }

    /// Coefficients reduced modulo `p^(i+1)`.
    pub fn reduce_mod(&self, i: u32) -> Result<DiffOp> {
        if !self.is_integral() {
            return Err(Error::NotIntegral(self.to_string()));
        }
        self.with_precision(Some(Self::meet_precision(self.precision, Some(i + 1)).unwrap()))
    }

    /// True when every coefficient is divisible by `p^e`.
    pub fn divisible_by_p_power(&self, e: i64) -> bool {
        self.valuation() >= Valuation::Finite(e)
    }
}

fn basis_name(level: u32, k: &[u64]) -> String {
    let mut parts = Vec::new();
    for (j, &kj) in k.iter().enumerate() {
        if kj == 0 {
            continue;
        }
        if level == 0 {
            if kj == 1 {
                parts.push(format!("d{}", j + 1));
            } else {
                parts.push(format!("d{}^{}", j + 1, kj));
            }
        } else {
            parts.push(format!("D{}[{},{}]", j + 1, level, kj));
        }
    }
    parts.join("*")
}

impl fmt::Display for DiffOp {
    /// Highest order first; level 0 uses `d<j>^<k>`, higher levels `D<j>[m,k]`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut keys: Vec<&Vec<u64>> = self.terms.keys().collect();
        keys.sort_by(|a, b| {
            let da: u64 = a.iter().sum();
            let db: u64 = b.iter().sum();
            db.cmp(&da).then_with(|| b.cmp(a))
        });
        let pieces: Vec<(bool, String)> = keys
            .into_iter()
            .flat_map(|k| format_term(&self.terms[k], &basis_name(self.level, k)))
            .collect();
        write!(f, "{}", join_terms(&pieces))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::Left => write!(f, "left"),
            Side::Right => write!(f, "right"),
        }
    }
}

/// The operator avatar of a homogeneous symbol used as a localizer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThetaTilde {
    pub side: Side,
    pub op: DiffOp,
    pub theta: SymbolPoly,
    pub m: u32,
    pub mprime: u32,
}

/// `sum a_k^{p^m'} (d^<m><p^m>)^{k p^{m'-m}}` (left) or with the coefficients on the right.
pub fn build_theta_tilde(theta: &SymbolPoly, m: u32, mprime: u32, side: Side) -> Result<ThetaTilde> {
    if theta.level() != 0 {
        return Err(Error::LevelMismatch(
            "localizer symbol must be given at level 0".into(),
        ));
    }
    if mprime < m {
        return Err(Error::InvalidArgument(format!(
            "need m <= m', got m = {m}, m' = {mprime}"
        )));
    }
    let n = theta.homogeneous_degree().ok_or(Error::NotHomogeneous)?;
    if n == 0 {
        return Err(Error::DegreeZeroLocalizer);
    }
    let p = theta.prime();
    let d = theta.nvars();
    let pm = p.pow(m);
    let reps = p.pow(mprime - m);
    let mut total = DiffOp::zero(p, m, d);
    for (k, a) in theta.to_k_basis() {
        let mut mono = DiffOp::one(p, m, d);
        for (j, &kj) in k.iter().enumerate() {
            let mut idx = vec![0; d];
            idx[j] = pm;
            mono = mono.multiply(&DiffOp::basis(p, m, d, idx).pow(kj * reps)?)?;
        }
        let coeff = DiffOp::coefficient(p, m, a.pow(p.pow(mprime)));
        let term = match side {
            Side::Left => coeff.multiply(&mono)?,
            Side::Right => mono.multiply(&coeff)?,
        };
        total = total.add(&term)?;
    }
    Ok(ThetaTilde {
        side,
        op: total,
        theta: theta.clone(),
        m,
        mprime,
    })
}

/// Least `m' in [m, bound]` such that the left `Theta~^(m,m')` commutes with every
/// `x_j` and `d_j^<m><p^s>` (`s <= m`) modulo `p^(i+1)`.
pub fn central_level_for(theta: &SymbolPoly, m: u32, i: u32, bound: u32) -> Result<u32> {
    let p = theta.prime();
    let d = theta.nvars();
    let mut generators = Vec::new();
    for j in 0..d {
        generators.push(DiffOp::x(p, m, d, j));
        for s in 0..=m {
            let mut k = vec![0; d];
            k[j] = p.pow(s);
            generators.push(DiffOp::basis(p, m, d, k));
        }
    }
    for mprime in m..=bound {
        let t = build_theta_tilde(theta, m, mprime, Side::Left)?;
        let mut central = true;
        for g in &generators {
            if !t.op.commutator(g)?.divisible_by_p_power(i as i64 + 1) {
                central = false;
                break;
            }
        }
        if central {
            return Ok(mprime);
        }
    }
    Err(Error::SearchBoundExceeded(bound))
}
