//! Truncated microdifferential operators at level `m` on `D(Theta)`.
//!
//! An operator is a finite presentation `sum b_{k,i} d^<m><k> T^-i` (left)
//! or `sum T^-i d^<m><k> b_{k,i}` (right), where `T` is the left or right
//! operator `Theta~^(m,M)` of a monomial localizer `Theta = a xi^alpha`,
//! together with an order floor below which nothing is represented.
//! Arithmetic runs in the level-0 pseudo-differential calculus over `Q`
//! (where `T = C A d^{N alpha}` with `N = p^M`, `A = a^N`) and is brought
//! back to the canonical presentation: for every `d^s` the least `i` with
//! `s + i N alpha >= 0`.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed};
use serde::{Deserialize, Serialize};

use crate::diffop::{DiffOp, Side, ThetaTilde};
use crate::error::{Error, Result};
use crate::padic::{self, divided_power_coefficient, Valuation};
use crate::poly::{Exponent, Poly};
use crate::pseudodiff::{total, PseudoDiff};
use crate::pseudopoly::{CoeffRing, SymbolPoly};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Chart {
    /// Coefficients are polynomials; the localizer coefficient must be a unit constant.
    Affine,
    /// Coordinates are invertible; coefficients are Laurent polynomials.
    Torus,
}

impl fmt::Display for Chart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Chart::Affine => write!(f, "affine"),
            Chart::Torus => write!(f, "torus"),
        }
    }
}

/// `D(Theta)` with the operators `Theta~^(m,M)` used as denominators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Localizer {
    p: u64,
    m: u32,
    mprime: u32,
    theta: SymbolPoly,
    chart: Chart,
    alpha: Vec<u64>,
    coef: Poly,
}

impl Localizer {
    pub fn new(theta: &SymbolPoly, m: u32, mprime: u32, chart: Chart) -> Result<Self> {
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
        let basis = theta.to_k_basis();
        if basis.len() != 1 {
            return Err(Error::Unsupported(format!(
                "localizer {theta} is not a monomial a*xi^alpha"
            )));
        }
        let (alpha, a) = basis.into_iter().next().unwrap();
        let p = theta.prime();
        let (e, c) = a.as_monomial().ok_or_else(|| {
            Error::NotInvertibleAtSymbol(format!("coefficient {a} of the localizer is not a monomial"))
        })?;
        if !padic::valuation(p, c).finite().is_some_and(|v| v == 0) {
            return Err(Error::NotInvertibleAtSymbol(format!(
                "coefficient {a} of the localizer is not a p-adic unit"
            )));
        }
        if chart == Chart::Affine && e.iter().any(|&x| x != 0) {
            return Err(Error::NotInvertibleAtSymbol(format!(
                "coefficient {a} of the localizer is not a unit on the affine chart"
            )));
        }
        Ok(Localizer {
            p,
            m,
            mprime,
            theta: SymbolPoly::from_k_basis(
                p,
                0,
                theta.nvars(),
                CoeffRing::Rational,
                &BTreeMap::from([(alpha.clone(), a.clone())]),
            ),
            chart,
            alpha,
            coef: a,
        })
    }

    pub fn prime(&self) -> u64 {
        self.p
    }

    pub fn level(&self) -> u32 {
        self.m
    }

    pub fn localizer_level(&self) -> u32 {
        self.mprime
    }

    pub fn theta(&self) -> &SymbolPoly {
        &self.theta
    }

    pub fn chart(&self) -> Chart {
        self.chart
    }

    pub fn nvars(&self) -> usize {
        self.alpha.len()
    }

    /// Degree `n` of `Theta`.
    pub fn degree(&self) -> u64 {
        self.alpha.iter().sum()
    }

    /// `n p^M`, the order of `T`.
    pub fn step(&self) -> i64 {
        (self.degree() * self.p.pow(self.mprime)) as i64
    }

    /// Same symbol and chart at another pair of levels.
    pub fn with_levels(&self, m: u32, mprime: u32) -> Result<Localizer> {
        Localizer::new(&self.theta, m, mprime, self.chart)
    }

    fn big_n(&self) -> i64 {
        self.p.pow(self.mprime) as i64
    }

    /// `C_l = (p^l!)^{-n p^{M-l}}`, so that `Theta~^(l,M) = C_l A d^{N alpha}` over `Q`.
    pub fn c_const(&self, l: u32) -> BigRational {
        let f = padic::factorial(self.p.pow(l));
        let e = self.degree() * self.p.pow(self.mprime - l);
        BigRational::from_integer(num_traits::pow(f, e as usize)).recip()
    }

    fn a_pow(&self, i: u64) -> Poly {
        self.coef.pow(self.p.pow(self.mprime) * i)
    }

    fn a_pow_inv(&self, i: u64) -> Poly {
        let (e, c) = self.a_pow(i).into_terms().into_iter().next().unwrap();
        Poly::monomial(self.nvars(), e.iter().map(|x| -x).collect(), c.recip())
    }

    fn shift(&self) -> Vec<i64> {
        let n = self.big_n();
        self.alpha.iter().map(|&a| a as i64 * n).collect()
    }

    /// `T` over `Q` in left normal form.
    pub fn theta_tilde_q(&self, side: Side) -> PseudoDiff {
        let c = self.c_const(self.m);
        match side {
            Side::Left => PseudoDiff::monomial(self.shift(), self.a_pow(1).scale(&c)),
            Side::Right => PseudoDiff::monomial(self.shift(), Poly::one(self.nvars()))
                .mul(&PseudoDiff::coefficient(self.a_pow(1).scale(&c)), None),
        }
    }

    /// Least `i` and the index `k = s + i N alpha` presenting `d^s`.
    fn present_index(&self, s: &[i64]) -> Result<(Vec<u64>, u64)> {
        let n = self.big_n();
        let mut i = 0i64;
        for (j, &sj) in s.iter().enumerate() {
            if sj >= 0 {
                continue;
            }
            if self.alpha[j] == 0 {
                return Err(Error::Unsupported(format!(
                    "d^{s:?} has a negative power of a derivative the localizer does not invert"
                )));
            }
            let step = self.alpha[j] as i64 * n;
            i = i.max((-sj + step - 1) / step);
        }
        let k = s
            .iter()
            .zip(&self.alpha)
            .map(|(&sj, &a)| (sj + i * a as i64 * n) as u64)
            .collect();
        Ok((k, i as u64))
    }
}

/// `(k, i)` for `d^<m><k> T^-i`.
pub type TermKey = (Vec<u64>, u64);

/// Expansion of presentation terms in the pseudo-differential calculus, with
/// cached powers of `T^-1`. The flag is false when something was dropped.
struct Expander<'a> {
    loc: &'a Localizer,
    side: Side,
    pows: BTreeMap<u64, (i64, PseudoDiff, bool)>,
}

impl<'a> Expander<'a> {
    fn new(loc: &'a Localizer, side: Side) -> Self {
        Expander {
            loc,
            side,
            pows: BTreeMap::new(),
        }
    }

    fn mul_tracked(a: &PseudoDiff, b: &PseudoDiff, floor: i64, ok: bool) -> (PseudoDiff, bool) {
        if ok && a.mul_is_finite(b) {
            let full = a.mul(b, None);
            let complete = full.min_order().is_none_or(|o| o >= floor);
            (full.truncate(floor), complete)
        } else {
            (a.mul(b, Some(floor)), false)
        }
    }

    fn inverse(&self, floor: i64) -> (PseudoDiff, bool) {
        let loc = self.loc;
        let neg: Vec<i64> = loc.shift().iter().map(|x| -x).collect();
        let cinv = loc.c_const(loc.m).recip();
        match self.side {
            Side::Left => {
                let d = PseudoDiff::monomial(neg, Poly::one(loc.nvars()).scale(&cinv));
                Self::mul_tracked(&d, &PseudoDiff::coefficient(loc.a_pow_inv(1)), floor, true)
            }
            Side::Right => (
                PseudoDiff::monomial(neg, loc.a_pow_inv(1).scale(&cinv)),
                true,
            ),
        }
    }

    /// `T^-i`, accurate at orders `>= floor`.
    fn power(&mut self, i: u64, floor: i64) -> (PseudoDiff, bool) {
        if i == 0 {
            return (PseudoDiff::one(self.loc.nvars()), true);
        }
        if let Some((f, v, c)) = self.pows.get(&i) {
            if *c || *f <= floor {
                return (v.clone(), *c);
            }
        }
        let (base, cb) = self.power(i - 1, floor);
        let (t, ct) = self.inverse(floor);
        let (v, c) = Self::mul_tracked(&t, &base, floor, cb && ct);
        let v = if c { v } else { v.truncate(floor) };
        self.pows.insert(i, (floor, v.clone(), c));
        (v, c)
    }

    /// `b d^<m><k> T^-i` (left) or `T^-i d^<m><k> b` (right).
    fn term(&mut self, k: &[u64], i: u64, b: &Poly, floor: i64) -> (PseudoDiff, bool) {
        let loc = self.loc;
        let c = b.scale(&divided_power_coefficient(loc.p, loc.m, k));
        let ki: Vec<i64> = k.iter().map(|&x| x as i64).collect();
        let kt = total(&ki);
        if i == 0 {
            return match self.side {
                Side::Left => (PseudoDiff::monomial(ki, c).truncate(floor), kt >= floor),
                Side::Right => {
                    let y = PseudoDiff::monomial(ki, Poly::one(loc.nvars()))
                        .mul(&PseudoDiff::coefficient(c), None);
                    let complete = y.min_order().is_none_or(|o| o >= floor);
                    (y.truncate(floor), complete)
                }
            };
        }
        let (x, cx) = self.power(i, floor - kt);
        match self.side {
            Side::Left => Self::mul_tracked(&PseudoDiff::monomial(ki, c), &x, floor, cx),
            Side::Right => {
                let y = PseudoDiff::monomial(ki, Poly::one(loc.nvars()))
                    .mul(&PseudoDiff::coefficient(c), None);
                Self::mul_tracked(&x, &y, floor, cx)
            }
        }
    }
}

fn right_normal_tracked(x: &PseudoDiff, floor: i64, ok: bool) -> (BTreeMap<Vec<i64>, Poly>, bool) {
    if ok && x.right_normal_is_finite() {
        let full = x.to_right_normal(None);
        let complete = full.keys().all(|s| total(s) >= floor);
        (
            full.into_iter().filter(|(s, _)| total(s) >= floor).collect(),
            complete,
        )
    } else {
        let r = x.to_right_normal(Some(floor));
        (r.into_iter().filter(|(s, _)| total(s) >= floor).collect(), false)
    }
}

/// A truncated microdifferential operator: a representative of a coset
/// modulo orders below `floor` (and modulo `p^precision` when set).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MicroOp {
    loc: Localizer,
    side: Side,
    terms: BTreeMap<TermKey, Poly>,
    floor: i64,
    /// True when the finite sum is the element itself, nothing dropped.
    exact: bool,
    /// Coefficients are known modulo `p^precision`.
    precision: Option<i64>,
}

impl MicroOp {
    pub fn zero(loc: &Localizer, side: Side, floor: i64) -> Self {
        MicroOp {
            loc: loc.clone(),
            side,
            terms: BTreeMap::new(),
            floor,
            exact: true,
            precision: None,
        }
    }

    pub fn one(loc: &Localizer, side: Side, floor: i64) -> Self {
        let mut out = Self::zero(loc, side, floor);
        out.add_term((vec![0; loc.nvars()], 0), Poly::one(loc.nvars()));
        out
    }

    /// Build from explicit terms; orders below `floor` are dropped.
    pub fn from_terms(
        loc: &Localizer,
        side: Side,
        terms: impl IntoIterator<Item = (TermKey, Poly)>,
        floor: i64,
    ) -> Result<Self> {
        let mut out = Self::zero(loc, side, floor);
        for ((k, i), b) in terms {
            if k.len() != loc.nvars() || b.nvars() != loc.nvars() {
                return Err(Error::DimensionMismatch {
                    expected: loc.nvars(),
                    found: k.len(),
                });
            }
            if out.term_order(&k, i) < floor {
                if !b.is_zero() {
                    out.exact = false;
                }
                continue;
            }
            out.add_term((k, i), b);
        }
        // re-present so that every term uses the least power of T
        let (x, c) = out.to_pseudo(floor);
        let exact = out.exact;
        let mut canon = Self::from_pseudo(loc, side, &x, floor, c && exact)?;
        canon.exact &= exact;
        Ok(canon)
    }

    fn add_term(&mut self, key: TermKey, b: Poly) {
        if b.is_zero() {
            return;
        }
        let e = self
            .terms
            .entry(key.clone())
            .or_insert_with(|| Poly::zero(b.nvars()));
        e.add_assign(&b);
        if e.is_zero() {
            self.terms.remove(&key);
        }
    }

    pub fn localizer(&self) -> &Localizer {
        &self.loc
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn floor(&self) -> i64 {
        self.floor
    }

    pub fn is_exact(&self) -> bool {
        self.exact
    }

    pub fn precision(&self) -> Option<i64> {
        self.precision
    }

    pub fn level(&self) -> u32 {
        self.loc.m
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&TermKey, &Poly)> {
        self.terms.iter()
    }

    pub fn coeff(&self, k: &[u64], i: u64) -> Poly {
        self.terms
            .get(&(k.to_vec(), i))
            .cloned()
            .unwrap_or_else(|| Poly::zero(self.loc.nvars()))
    }

    pub fn term_order(&self, k: &[u64], i: u64) -> i64 {
        k.iter().sum::<u64>() as i64 - i as i64 * self.loc.step()
    }

    /// Highest represented order.
    pub fn order(&self) -> Option<i64> {
        self.terms.keys().map(|(k, i)| self.term_order(k, *i)).max()
    }

    /// `[floor, order]`.
    pub fn window(&self) -> (i64, Option<i64>) {
        (self.floor, self.order())
    }

    /// Terms in canonical order: order descending, then `i` ascending, then `k`.
    pub fn canonical_terms(&self) -> Vec<(i64, &Vec<u64>, u64, &Poly)> {
        let mut v: Vec<(i64, &Vec<u64>, u64, &Poly)> = self
            .terms
            .iter()
            .map(|((k, i), b)| (self.term_order(k, *i), k, *i, b))
            .collect();
        v.sort_by(|a, b| b.0.cmp(&a.0).then(a.2.cmp(&b.2)).then(a.1.cmp(b.1)));
        v
    }

    /// The element in the level-0 calculus over `Q`, accurate at orders `>= floor`.
    pub fn to_pseudo(&self, floor: i64) -> (PseudoDiff, bool) {
        let mut ex = Expander::new(&self.loc, self.side);
        let mut out = PseudoDiff::zero(self.loc.nvars());
        let mut complete = true;
        for ((k, i), b) in &self.terms {
            let (x, c) = ex.term(k, *i, b, floor);
            complete &= c;
            out = out.add(&x);
        }
        (out, complete)
    }

    /// Canonical presentation of `x` at orders `>= floor`. `complete` states
    /// that `x` is the whole element.
    pub fn from_pseudo(
        loc: &Localizer,
        side: Side,
        x: &PseudoDiff,
        floor: i64,
        complete: bool,
    ) -> Result<MicroOp> {
        if x.nvars() != loc.nvars() {
            return Err(Error::DimensionMismatch {
                expected: loc.nvars(),
                found: x.nvars(),
            });
        }
        let mut out = Self::zero(loc, side, floor);
        let mut exact = complete && x.min_order().is_none_or(|o| o >= floor);
        let mut ex = Expander::new(loc, side);
        let c_m = loc.c_const(loc.m);
        let coefficient_for = |k: &[u64], i: u64, c: &Poly| -> Poly {
            let f = divided_power_coefficient(loc.p, loc.m, k).recip()
                * num_traits::pow(c_m.clone(), i as usize);
            c.scale(&f).mul(&loc.a_pow(i))
        };
        match side {
            Side::Left => {
                let mut rest = x.truncate(floor);
                while let Some((o, top)) = rest.top_part() {
                    for (s, c) in top.terms() {
                        let (k, i) = loc.present_index(s)?;
                        let b = coefficient_for(&k, i, c);
                        let (e, ce) = ex.term(&k, i, &b, floor);
                        exact &= ce;
                        rest = rest.sub(&e);
                        out.add_term((k, i), b);
                    }
                    debug_assert!(rest.part_of_order(o).is_zero());
                    rest = rest.truncate(floor);
                }
            }
            Side::Right => {
                let (mut rest, c0) = right_normal_tracked(x, floor, true);
                exact &= c0;
                loop {
                    let Some(o) = rest.keys().map(|s| total(s)).max() else {
                        break;
                    };
                    let top: Vec<(Vec<i64>, Poly)> = rest
                        .iter()
                        .filter(|(s, _)| total(s) == o)
                        .map(|(s, c)| (s.clone(), c.clone()))
                        .collect();
                    for (s, c) in top {
                        let (k, i) = loc.present_index(&s)?;
                        let b = coefficient_for(&k, i, &c);
                        let (e, ce) = ex.term(&k, i, &b, floor);
                        let (er, cr) = right_normal_tracked(&e, floor, ce);
                        exact &= cr;
                        for (t, v) in er {
                            let entry = rest.entry(t.clone()).or_insert_with(|| Poly::zero(loc.nvars()));
                            *entry = entry.sub(&v);
                            if entry.is_zero() {
                                rest.remove(&t);
                            }
                        }
                        out.add_term((k, i), b);
                    }
                    debug_assert!(rest.keys().all(|s| total(s) != o));
                }
            }
        }
        out.exact = exact;
        Ok(out)
    }

    pub fn from_diffop(op: &DiffOp, loc: &Localizer, side: Side, floor: i64) -> Result<MicroOp> {
        if op.prime() != loc.p || op.level() != loc.m {
            return Err(Error::LevelMismatch(format!(
                "operator at p = {}, level {} for a localizer at p = {}, level {}",
                op.prime(),
                op.level(),
                loc.p,
                loc.m
            )));
        }
        if op.nvars() != loc.nvars() {
            return Err(Error::DimensionMismatch {
                expected: loc.nvars(),
                found: op.nvars(),
            });
        }
        let mut out = Self::from_pseudo(loc, side, &op.lift(), floor, true)?;
        if let Some(n) = op.precision() {
            out = out.with_precision(Some(n as i64));
        }
        Ok(out)
    }

    /// `T = Theta~^(m,M)` on the given side.
    pub fn theta_tilde(loc: &Localizer, side: Side, floor: i64) -> Result<MicroOp> {
        Self::from_pseudo(loc, side, &loc.theta_tilde_q(side), floor, true)
    }

    /// Coefficients reduced modulo `p^n` (`None` drops precision tracking).
    pub fn with_precision(&self, n: Option<i64>) -> MicroOp {
        let mut out = self.clone();
        out.precision = match (self.precision, n) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        if let Some(a) = out.precision {
            let p = self.loc.p;
            out.terms = std::mem::take(&mut out.terms)
                .into_iter()
                .map(|(key, b)| (key, b.reduce_abs(p, a)))
                .filter(|(_, b)| !b.is_zero())
                .collect();
        }
        out
    }

    /// Drop terms below `floor`.
    pub fn truncate(&self, floor: i64) -> MicroOp {
        if floor <= self.floor {
            return self.clone();
        }
        let mut out = self.clone();
        out.floor = floor;
        let before = out.terms.len();
        let orders: Vec<TermKey> = out
            .terms
            .keys()
            .filter(|(k, i)| self.term_order(k, *i) < floor)
            .cloned()
            .collect();
        for key in orders {
            out.terms.remove(&key);
        }
        if out.terms.len() != before {
            out.exact = false;
        }
        out
    }

    fn check_compatible(&self, other: &MicroOp) -> Result<()> {
        if self.loc != other.loc {
            return Err(Error::IncompatibleLocalizer(format!(
                "p = {}, m = {}, M = {}, Theta = {}, {} chart vs p = {}, m = {}, M = {}, Theta = {}, {} chart",
                self.loc.p,
                self.loc.m,
                self.loc.mprime,
                self.loc.theta,
                self.loc.chart,
                other.loc.p,
                other.loc.m,
                other.loc.mprime,
                other.loc.theta,
                other.loc.chart
            )));
        }
        Ok(())
    }

    fn meet_precision(a: Option<i64>, b: Option<i64>) -> Option<i64> {
        match (a, b) {
            (Some(x), Some(y)) => Some(x.min(y)),
            (x, y) => x.or(y),
        }
    }

    pub fn add(&self, other: &MicroOp) -> Result<MicroOp> {
        self.check_compatible(other)?;
        let other = other.convert_presentation(self.side)?;
        let floor = self.floor.max(other.floor);
        let mut out = self.truncate(floor);
        let o = other.truncate(floor);
        out.exact &= o.exact;
        for (key, b) in o.terms {
            out.add_term(key, b);
        }
        let prec = Self::meet_precision(self.precision, other.precision);
        Ok(if prec.is_some() {
            out.with_precision(prec)
        } else {
            out
        })
    }

    pub fn neg(&self) -> MicroOp {
        self.scale(&-BigRational::one())
    }

    pub fn sub(&self, other: &MicroOp) -> Result<MicroOp> {
        self.add(&other.neg())
    }

    pub fn scale(&self, c: &BigRational) -> MicroOp {
        let mut out = self.clone();
        out.terms = self
            .terms
            .iter()
            .map(|(key, b)| (key.clone(), b.scale(c)))
            .filter(|(_, b)| !b.is_zero())
            .collect();
        if let Some(n) = self.precision {
            if let Some(v) = padic::valuation(self.loc.p, c).finite() {
                out.precision = Some(n + v);
            }
        }
        out
    }

    /// Minimum Gauss valuation over the coefficients.
    pub fn valuation(&self) -> Valuation {
        self.terms
            .values()
            .map(|b| b.valuation(self.loc.p))
            .min()
            .unwrap_or(Valuation::Infinite)
    }

    pub fn is_integral(&self) -> bool {
        self.valuation().is_nonnegative()
    }

    /// The same element presented on the other side.
    pub fn convert_presentation(&self, target: Side) -> Result<MicroOp> {
        if target == self.side {
            return Ok(self.clone());
        }
        let (x, c) = self.to_pseudo(self.floor);
        let mut out = Self::from_pseudo(&self.loc, target, &x, self.floor, c && self.exact)?;
        out.exact &= self.exact;
        if self.precision.is_some() {
            out = out.with_precision(self.precision);
        }
        Ok(out)
    }

    /// The same element presented at level `m` with localizer level `M`
    /// (computed over `Q`; coefficients may become non-integral).
    pub fn represent_at(&self, m: u32, mprime: u32) -> Result<MicroOp> {
        let loc = self.loc.with_levels(m, mprime)?;
        let (x, c) = self.to_pseudo(self.floor);
        let mut out = Self::from_pseudo(&loc, self.side, &x, self.floor, c && self.exact)?;
        out.exact &= self.exact;
        Ok(out)
    }
}

/// The product, presented on the side of `a`. The floor is the larger of the
/// two floors, raised when an inexact factor limits what the product knows.
pub fn micro_multiply(a: &MicroOp, b: &MicroOp) -> Result<MicroOp> {
    a.check_compatible(b)?;
    let loc = &a.loc;
    // a truncated zero is only known to lie below its floor
    let ua = a.order().unwrap_or(a.floor);
    let ub = b.order().unwrap_or(b.floor);
    let mut floor = a.floor.max(b.floor);
    if !a.exact {
        floor = floor.max(a.floor + ub);
    }
    if !b.exact {
        floor = floor.max(b.floor + ua);
    }
    if a.is_zero() || b.is_zero() {
        let exact_zero = (a.is_zero() && a.exact) || (b.is_zero() && b.exact);
        let mut z = MicroOp::zero(loc, a.side, floor);
        z.exact = exact_zero || (a.exact && b.exact);
        return Ok(z);
    }
    let (xa, ca) = a.to_pseudo(floor.min(floor - ub));
    let (xb, cb) = b.to_pseudo(floor.min(floor - ua));
    let ok = ca && cb && a.exact && b.exact;
    let (prod, cp) = Expander::mul_tracked(&xa, &xb, floor, ok);
    let mut out = MicroOp::from_pseudo(loc, a.side, &prod, floor, cp)?;
    let prec = match (a.precision, b.precision) {
        (None, None) => None,
        (pa, pb) => {
            let va = a.valuation().finite().unwrap_or(0);
            let vb = b.valuation().finite().unwrap_or(0);
            MicroOp::meet_precision(pa.map(|n| n + vb), pb.map(|n| n + va))
        }
    };
    if prec.is_some() {
        out = out.with_precision(prec);
    }
    Ok(out)
}

/// `T^-1` as a presentation: the single term `(0, 1) -> 1`.
pub fn invert_theta_tilde(
    t: &ThetaTilde,
    chart: Chart,
    floor: i64,
    precision: Option<i64>,
) -> Result<MicroOp> {
    let loc = Localizer::new(&t.theta, t.m, t.mprime, chart)?;
    let mut out = MicroOp::from_terms(
        &loc,
        t.side,
        [((vec![0; loc.nvars()], 1), Poly::one(loc.nvars()))],
        floor,
    )?;
    if precision.is_some() {
        out = out.with_precision(precision);
    }
    Ok(out)
}

/// A term of a presentation singled out by a test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermNote {
    pub k: Vec<u64>,
    pub i: u64,
    pub order: i64,
    pub valuation: i64,
}

fn worst_term(op: &MicroOp, min_order: Option<i64>) -> Option<TermNote> {
    op.canonical_terms()
        .into_iter()
        .filter(|(o, ..)| min_order.is_none_or(|m| *o >= m))
        .filter_map(|(o, k, i, b)| {
            let v = b.valuation(op.loc.p).finite()?;
            (v < 0).then(|| TermNote {
                k: k.clone(),
                i,
                order: o,
                valuation: v,
            })
        })
        .next()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceVerdict {
    Bounded,
    UnboundedInWindow,
}

/// `beta_N = max |b_{k,i}|` over the terms of order `N`, recorded as the
/// least valuation (`beta_N = p^{-min_valuation}`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderNorm {
    pub order: i64,
    pub min_valuation: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvergenceProfile {
    pub profile: Vec<OrderNorm>,
    pub verdict: ConvergenceVerdict,
    /// Finite presentations satisfy the limit conditions trivially.
    pub limits_vacuous: bool,
    pub all_beta_at_most_one: bool,
}

/// Norms per order and a verdict: unbounded when the lower half of the
/// window reaches a smaller, negative valuation than the upper half.
pub fn validate_convergence(op: &MicroOp) -> ConvergenceProfile {
    let mut per: BTreeMap<i64, i64> = BTreeMap::new();
    for ((k, i), b) in &op.terms {
        if let Some(v) = b.valuation(op.loc.p).finite() {
            let o = op.term_order(k, *i);
            let e = per.entry(o).or_insert(v);
            *e = (*e).min(v);
        }
    }
    let profile: Vec<OrderNorm> = per
        .iter()
        .rev()
        .map(|(&order, &min_valuation)| OrderNorm {
            order,
            min_valuation,
        })
        .collect();
    let all_beta_at_most_one = profile.iter().all(|o| o.min_valuation >= 0);
    let mut verdict = ConvergenceVerdict::Bounded;
    if !op.exact && profile.len() >= 2 {
        let top = profile[0].order;
        let mid = (top + op.floor) as f64 / 2.0;
        let upper = profile
            .iter()
            .filter(|o| o.order as f64 >= mid)
            .map(|o| o.min_valuation)
            .min();
        let lower = profile
            .iter()
            .filter(|o| (o.order as f64) < mid)
            .map(|o| o.min_valuation)
            .min();
        if let (Some(u), Some(l)) = (upper, lower) {
            if l < u && l < 0 {
                verdict = ConvergenceVerdict::UnboundedInWindow;
            }
        }
    }
    ConvergenceProfile {
        profile,
        verdict,
        limits_vacuous: op.exact,
        all_beta_at_most_one,
    }
}

/// Why an inversion attempt did not produce an integral inverse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    NotIntegral,
    Unbounded,
    ResidualNonzero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub kind: FailureKind,
    pub message: String,
    pub first_nonintegral: Option<TermNote>,
    pub profile: ConvergenceProfile,
    /// The rational candidate inverse, for inspection.
    pub candidate: MicroOp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inversion {
    pub inverse: MicroOp,
    /// `P S - 1` and `S P - 1` vanish at orders `>= residual_floor`.
    pub residual_floor: i64,
    pub residual_ok: bool,
    pub profile: ConvergenceProfile,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InvertOutcome {
    Inverted(Inversion),
    Failed(Diagnostic),
}

/// Invert `P` by the series `S = sum E^j T0` about its top term, then check
/// integrality and boundedness of the presentation of `S`.
pub fn try_invert(p_op: &MicroOp, floor: i64, precision: Option<i64>) -> Result<InvertOutcome> {
    let loc = &p_op.loc;
    let op = p_op.order().ok_or(Error::ZeroOperator)?;
    let (x, _) = p_op.to_pseudo(p_op.floor.min(floor + op));
    let (_, top) = x.top_part().ok_or(Error::ZeroOperator)?;
    let supported = top.terms().count() == 1
        && top.terms().all(|(s, c)| {
            c.as_monomial().is_some_and(|(e, v)| {
                (loc.chart == Chart::Torus || e.iter().all(|&z| z == 0))
                    && padic::valuation(loc.p, v) == Valuation::Finite(0)
            }) && s.iter().zip(&loc.alpha).all(|(&sj, &a)| sj == 0 || a > 0)
        });
    if !supported {
        return Err(Error::SymbolMismatch(format!(
            "principal part {} is not a unit times a monomial in the localized derivatives",
            MicroOp::from_pseudo(loc, p_op.side, &top, i64::MIN / 4, true)
                .map(|t| t.to_string())
                .unwrap_or_else(|_| "?".into())
        )));
    }
    let mut s_floor = floor;
    if !p_op.exact {
        s_floor = s_floor.max(p_op.floor - 2 * op);
    }
    let work = s_floor.min(s_floor + op).min(p_op.floor);
    let (x, _) = p_op.to_pseudo(work);
    let s_q = x.inverse(s_floor)?;
    // the series of an inverse never terminates in general
    let mut s = MicroOp::from_pseudo(loc, p_op.side, &s_q, s_floor, false)?;
    let residual_floor = s_floor + op;
    let one = MicroOp::one(loc, p_op.side, residual_floor);
    let left = micro_multiply(p_op, &s)?.truncate(residual_floor);
    let right = micro_multiply(&s, p_op)?.truncate(residual_floor);
    let residual_ok = left.sub(&one)?.truncate(residual_floor).is_zero()
        && right.sub(&one)?.truncate(residual_floor).is_zero();
    let profile = validate_convergence(&s);
    if !residual_ok {
        return Ok(InvertOutcome::Failed(Diagnostic {
            kind: FailureKind::ResidualNonzero,
            message: format!("P*S - 1 does not vanish at orders >= {residual_floor}"),
            first_nonintegral: worst_term(&s, None),
            profile,
            candidate: s,
        }));
    }
    if let Some(note) = worst_term(&s, None) {
        let (kind, message) = if profile.verdict == ConvergenceVerdict::UnboundedInWindow {
            (
                FailureKind::Unbounded,
                format!(
                    "coefficient norms grow toward the floor (valuation {} at order {}); the boundedness condition fails",
                    profile.profile.iter().map(|o| o.min_valuation).min().unwrap_or(0),
                    profile
                        .profile
                        .iter()
                        .min_by_key(|o| (o.min_valuation, o.order))
                        .map(|o| o.order)
                        .unwrap_or(0)
                ),
            )
        } else {
            (
                FailureKind::NotIntegral,
                format!(
                    "coefficient of d^<{}><{:?}> T^-{} has valuation {}",
                    loc.m, note.k, note.i, note.valuation
                ),
            )
        };
        return Ok(InvertOutcome::Failed(Diagnostic {
            kind,
            message,
            first_nonintegral: Some(note),
            profile,
            candidate: s,
        }));
    }
    if precision.is_some() {
        s = s.with_precision(precision);
    }
    Ok(InvertOutcome::Inverted(Inversion {
        inverse: s,
        residual_floor,
        residual_ok,
        profile,
    }))
}

/// Constant `c` with `psi(d^<m'><l> T'^-i) = c d^<m><l> T^-i`, where `T'` and
/// `T` are `Theta~^(m',M)` and `Theta~^(m,M)`.
pub fn psi_term_constant(loc: &Localizer, target: u32, l: &[u64], i: u64) -> BigRational {
    let m2 = loc.m;
    let mut f = BigRational::one();
    for &lj in l {
        f *= BigRational::new(
            padic::quotient_factorial(loc.p, m2, lj),
            padic::quotient_factorial(loc.p, target, lj),
        );
    }
    let ratio = loc.c_const(target) / loc.c_const(m2);
    f * num_traits::pow(ratio, i as usize)
}

/// `psi_{m,m'}`: the level-`m'` operator rewritten at level `m` over `Q`.
pub fn psi_level_lower(op: &MicroOp, target: u32) -> Result<MicroOp> {
    if target > op.loc.m {
        return Err(Error::LevelMismatch(format!(
            "psi lowers the level, got {} -> {target}",
            op.loc.m
        )));
    }
    let loc = op.loc.with_levels(target, op.loc.mprime)?;
    let mut out = MicroOp::zero(&loc, op.side, op.floor);
    out.exact = op.exact;
    let mut min_v: Option<i64> = None;
    for ((k, i), b) in &op.terms {
        let c = psi_term_constant(&op.loc, target, k, *i);
        let v = padic::valuation(loc.p, &c).finite().unwrap();
        min_v = Some(min_v.map_or(v, |x| x.min(v)));
        out.add_term((k.clone(), *i), b.scale(&c));
    }
    if let Some(n) = op.precision {
        out = out.with_precision(Some(n + min_v.unwrap_or(0)));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MembershipVerdict {
    /// In `E^(m,m')`.
    InEmm,
    /// In `E^(m')` but `psi` leaves `E^(m)` at some order `>= 0`.
    OnlyInEmPrime,
    /// Not even in `E^(m')`.
    NotInEmPrime,
    Undetermined,
}

impl fmt::Display for MembershipVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MembershipVerdict::InEmm => "in E^(m,m')",
            MembershipVerdict::OnlyInEmPrime => "only in E^(m')",
            MembershipVerdict::NotInEmPrime => "not in E^(m')",
            MembershipVerdict::Undetermined => "undetermined",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Membership {
    pub verdict: MembershipVerdict,
    /// The offending term (of `P` or of `psi(P)`).
    pub witness: Option<TermNote>,
    /// Highest order hidden by truncation, for `Undetermined`.
    pub blocking_order: Option<i64>,
    pub psi_image: MicroOp,
}

/// Decide `P in E^(m,m') = psi^{-1}(E^(m)) ∩ E^(m')` for `P` presented at level `m'`.
/// Orders below 0 need no check since `E^(m,m')` and `E^(m')` agree there.
pub fn membership_intermediate(op: &MicroOp, m: u32) -> Result<Membership> {
    let psi = psi_level_lower(op, m)?;
    if let Some(w) = worst_term(op, None) {
        return Ok(Membership {
            verdict: MembershipVerdict::NotInEmPrime,
            witness: Some(w),
            blocking_order: None,
            psi_image: psi,
        });
    }
    if let Some(w) = worst_term(&psi, Some(0)) {
        return Ok(Membership {
            verdict: MembershipVerdict::OnlyInEmPrime,
            witness: Some(w),
            blocking_order: None,
            psi_image: psi,
        });
    }
    if let Some(n) = op.precision {
        // a coefficient known mod p^n leaves psi's image undecided when the
        // constant has valuation below -n
        for ((k, i), _) in &op.terms {
            let o = op.term_order(k, *i);
            if o < 0 {
                continue;
            }
            let v = padic::valuation(op.loc.p, &psi_term_constant(&op.loc, m, k, *i))
                .finite()
                .unwrap();
            if n + v < 0 {
                return Ok(Membership {
                    verdict: MembershipVerdict::Undetermined,
                    witness: None,
                    blocking_order: Some(o),
                    psi_image: psi,
                });
            }
        }
    }
    if !op.exact && op.floor > 0 {
        return Ok(Membership {
            verdict: MembershipVerdict::Undetermined,
            witness: None,
            blocking_order: Some(op.floor - 1),
            psi_image: psi,
        });
    }
    Ok(Membership {
        verdict: MembershipVerdict::InEmm,
        witness: None,
        blocking_order: None,
        psi_image: psi,
    })
}

/// [`membership_intermediate`] for `P` given at any level: it is first
/// presented at level `mprime` with the same localizer level.
pub fn membership_query(op: &MicroOp, m: u32, mprime: u32) -> Result<Membership> {
    if m > mprime {
        return Err(Error::InvalidArgument(format!(
            "need m <= m', got m = {m}, m' = {mprime}"
        )));
    }
    if op.level() == mprime {
        return membership_intermediate(op, m);
    }
    let at = op.represent_at(mprime, op.loc.mprime)?;
    membership_intermediate(&at, m)
}

/// `alpha_{k,s,1} = max{0, floor(d - k/p^{s+1} + 1)}`.
pub fn normcalc_alpha(d: u64, p: u64, k: i64, s: u32) -> u64 {
    let q = p.pow(s + 1) as i64;
    // floor(-k/q) = -ceil(k/q)
    let v = d as i64 + 1 + (-k).div_euclid(q);
    v.max(0) as u64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormcalcBounds {
    pub a_k: u64,
    pub b_k: u64,
    /// `(s, alpha_{k,s,1})` for `m <= s < m'`.
    pub alphas: Vec<(u32, u64)>,
}

pub fn normcalc_bounds(d: u64, p: u64, m: u32, mprime: u32, k: i64) -> Result<NormcalcBounds> {
    if mprime < m {
        return Err(Error::InvalidArgument(format!(
            "need m <= m', got m = {m}, m' = {mprime}"
        )));
    }
    padic::check_prime(p)?;
    let alphas: Vec<(u32, u64)> = (m..mprime).map(|s| (s, normcalc_alpha(d, p, k, s))).collect();
    let a_k = if (d * p.pow(mprime + 1)) as i64 >= k {
        alphas.iter().map(|(_, a)| a).sum()
    } else {
        0
    };
    let b_k = if k < p.pow(m + 1) as i64 {
        0
    } else {
        (m + 1..=mprime).map(|s| k as u64 / p.pow(s)).sum()
    };
    Ok(NormcalcBounds { a_k, b_k, alphas })
}

/// Least exponents observed by scanning `|l| <= 2 n p^{m'}`, `i <= i_max`,
/// `n <= n_max` (`d <= 2`): `(a, b)` such that every scanned
/// `p^a d^<m><l> (Theta~^(m,m'))^-i` with order `>= k` has an integral
/// level-`m'` presentation and every `p^b d^<m'><l> (Theta~^(m'))^-i` with
/// order `<= k` lies in `E^(m)`.
pub fn normcalc_observed(
    d: u64,
    p: u64,
    m: u32,
    mprime: u32,
    k: i64,
    i_max: u64,
    n_max: u64,
) -> (u64, u64) {
    let j = mprime - m;
    let r_val = ((p.pow(j) - 1) / (p - 1)) as i64;
    // sum_{s=m+1}^{m'} floor(l/p^s)
    let digit_sum = |l: &[u64]| -> i64 {
        l.iter()
            .map(|&lj| (m + 1..=mprime).map(|s| (lj / p.pow(s)) as i64).sum::<i64>())
            .sum()
    };
    let mut a_obs = 0i64;
    let mut b_obs = 0i64;
    for n in 1..=n_max {
        let step = (n * p.pow(mprime)) as i64;
        let bound = 2 * step as u64;
        for l in crate::filtered::bounded_indices(d as usize, bound) {
            let ll: i64 = l.iter().sum::<u64>() as i64;
            let f = digit_sum(&l);
            for i in 0..=i_max {
                let order = ll - i as i64 * step;
                let g = i as i64 * n as i64 * r_val;
                if order >= k {
                    a_obs = a_obs.max(g - f);
                }
                if order <= k {
                    b_obs = b_obs.max(f - g);
                }
            }
        }
    }
    (a_obs as u64, b_obs as u64)
}

fn pieces(op: &MicroOp) -> Vec<(bool, String)> {
    let m = op.loc.m;
    let mut out = Vec::new();
    for (_, k, i, b) in op.canonical_terms() {
        let mut parts: Vec<String> = Vec::new();
        for (j, &kj) in k.iter().enumerate() {
            if kj == 0 {
                continue;
            }
            parts.push(match (m, kj) {
                (0, 1) => format!("d{}", j + 1),
                (0, _) => format!("d{}^{kj}", j + 1),
                _ => format!("D{}[{m},{kj}]", j + 1),
            });
        }
        let t = if i > 0 { Some(format!("T^-{i}")) } else { None };
        let basis = match op.side {
            Side::Left => parts.into_iter().chain(t).collect::<Vec<_>>().join("*"),
            Side::Right => t.into_iter().chain(parts).collect::<Vec<_>>().join("*"),
        };
        if op.side == Side::Left || basis.is_empty() || b.is_constant() {
            out.extend(crate::poly::format_term(b, &basis));
            continue;
        }
        match b.as_monomial() {
            Some((e, v)) => {
                let mono = Poly::monomial(b.nvars(), e.clone(), v.abs());
                let s = if mono.is_one() {
                    basis
                } else {
                    format!("{basis}*{mono}")
                };
                out.push((v.is_negative(), s));
            }
            None => out.push((false, format!("{basis}*({b})"))),
        }
    }
    out
}

impl fmt::Display for MicroOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", crate::poly::join_terms(&pieces(self)))?;
        if !self.exact {
            write!(f, " + O({})", self.floor)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TermRepr {
    k: Vec<u64>,
    i: u64,
    order: i64,
    coefficient: Poly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MicroOpRepr {
    p: u64,
    level: u32,
    localizer_level: u32,
    nvars: usize,
    theta_exponent: Vec<u64>,
    theta_coefficient: Poly,
    chart: Chart,
    side: Side,
    floor: i64,
    ceiling: Option<i64>,
    exact: bool,
    precision: Option<i64>,
    terms: Vec<TermRepr>,
}

impl MicroOp {
    pub fn to_json(&self) -> serde_json::Value {
        let repr = MicroOpRepr {
            p: self.loc.p,
            level: self.loc.m,
            localizer_level: self.loc.mprime,
            nvars: self.loc.nvars(),
            theta_exponent: self.loc.alpha.clone(),
            theta_coefficient: self.loc.coef.clone(),
            chart: self.loc.chart,
            side: self.side,
            floor: self.floor,
            ceiling: self.order(),
            exact: self.exact,
            precision: self.precision,
            terms: self
                .canonical_terms()
                .into_iter()
                .map(|(order, k, i, b)| TermRepr {
                    k: k.clone(),
                    i,
                    order,
                    coefficient: b.clone(),
                })
                .collect(),
        };
        serde_json::to_value(repr).expect("serializable")
    }

    pub fn from_json(v: &serde_json::Value) -> Result<MicroOp> {
        let r: MicroOpRepr = serde_json::from_value(v.clone())
            .map_err(|e| Error::InvalidArgument(format!("bad micro-operator JSON: {e}")))?;
        padic::check_prime(r.p)?;
        let theta = SymbolPoly::from_k_basis(
            r.p,
            0,
            r.nvars,
            CoeffRing::Rational,
            &BTreeMap::from([(r.theta_exponent, r.theta_coefficient)]),
        );
        let loc = Localizer::new(&theta, r.level, r.localizer_level, r.chart)?;
        let mut out = MicroOp::zero(&loc, r.side, r.floor);
        out.exact = r.exact;
        out.precision = r.precision;
        for t in r.terms {
            if t.k.len() != r.nvars || t.coefficient.nvars() != r.nvars {
                return Err(Error::DimensionMismatch {
                    expected: r.nvars,
                    found: t.k.len(),
                });
            }
            if out.term_order(&t.k, t.i) != t.order {
                return Err(Error::InvalidArgument(format!(
                    "term (k = {:?}, i = {}) stated at order {}",
                    t.k, t.i, t.order
                )));
            }
            out.add_term((t.k, t.i), t.coefficient);
        }
        Ok(out)
    }
}

/// Exponent helper for building coefficients in tests and callers.
pub fn coefficient(nvars: usize, e: Exponent, c: i64) -> Poly {
    Poly::monomial(nvars, e, BigRational::from_integer(BigInt::from(c)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffop::build_theta_tilde;

    fn q(a: i64, b: i64) -> BigRational {
        BigRational::new(a.into(), b.into())
    }

    fn xi(p: u64) -> SymbolPoly {
        SymbolPoly::power_monomial(p, &[1], Poly::one(1))
    }

    fn loc(p: u64, m: u32, mm: u32) -> Localizer {
        Localizer::new(&xi(p), m, mm, Chart::Affine).unwrap()
    }

    fn op(l: &Localizer, side: Side, terms: &[(u64, u64, Poly)], floor: i64) -> MicroOp {
        MicroOp::from_terms(
            l,
            side,
            terms.iter().map(|(k, i, b)| ((vec![*k], *i), b.clone())),
            floor,
        )
        .unwrap()
    }

    fn x() -> Poly {
        Poly::var(1, 0)
    }

    fn one() -> Poly {
        Poly::one(1)
    }

    #[test]
    fn theta_tilde_times_inverse() {
        let l = loc(2, 0, 1);
        for side in [Side::Left, Side::Right] {
            let t = MicroOp::theta_tilde(&l, side, -10).unwrap();
            assert_eq!(t.to_string(), "d1^2");
            let s = op(&l, side, &[(0, 1, one())], -10);
            let prod = micro_multiply(&t, &s).unwrap();
            assert_eq!(prod, MicroOp::one(&l, side, -10));
            assert!(prod.is_exact());
        }
    }

    #[test]
    fn right_to_left_conversion() {
        let l = loc(2, 0, 0);
        // d^{-1} x (right) = x d^{-1} - d^{-2}
        let r = op(&l, Side::Right, &[(0, 1, x())], -4);
        let left = r.convert_presentation(Side::Left).unwrap();
        let expected = op(&l, Side::Left, &[(0, 1, x()), (0, 2, one().neg())], -4);
        assert_eq!(left, expected);
        assert!(left.is_exact());
        assert_eq!(left.convert_presentation(Side::Right).unwrap(), r);
        let d = MicroOp::theta_tilde(&l, Side::Left, -4).unwrap();
        let prod = micro_multiply(&d, &left).unwrap();
        assert_eq!(prod, op(&l, Side::Left, &[(0, 0, x())], -4));
    }

    #[test]
    fn constant_terms_are_side_invariant() {
        let l = loc(3, 1, 2);
        let c = Poly::from_int(1, 5);
        let a = op(&l, Side::Left, &[(2, 1, c.clone()), (4, 0, c.clone())], -30);
        let b = a.convert_presentation(Side::Right).unwrap();
        assert_eq!(b.terms, a.terms);
    }

    #[test]
    fn multiplication_by_one() {
        let l = loc(2, 1, 1);
        let a = op(&l, Side::Left, &[(1, 0, x()), (1, 1, one())], -8);
        let prod = micro_multiply(&a, &MicroOp::one(&l, Side::Left, -8)).unwrap();
        assert_eq!(prod, a);
    }

    #[test]
    fn inverse_of_theta_tilde() {
        let t = build_theta_tilde(&xi(2), 0, 0, Side::Left).unwrap();
        let s = invert_theta_tilde(&t, Chart::Affine, -6, None).unwrap();
        assert_eq!(s.to_string(), "T^-1");
        assert_eq!(s.order(), Some(-1));
        let t2 = build_theta_tilde(&xi(2), 0, 1, Side::Left).unwrap();
        let s2 = invert_theta_tilde(&t2, Chart::Affine, -6, None).unwrap();
        assert_eq!(s2.order(), Some(-2));
        let (x2, _) = s2.to_pseudo(-6);
        assert_eq!(x2, PseudoDiff::monomial(vec![-2], one()));
        let theta = SymbolPoly::power_monomial(2, &[1], x());
        let tx = build_theta_tilde(&theta, 0, 0, Side::Right).unwrap();
        assert!(matches!(
            invert_theta_tilde(&tx, Chart::Affine, -6, None),
            Err(Error::NotInvertibleAtSymbol(_))
        ));
        assert!(invert_theta_tilde(&tx, Chart::Torus, -6, None).is_ok());
    }

    #[test]
    fn invert_d_minus_x() {
        let l = loc(2, 0, 0);
        let p_op = op(&l, Side::Left, &[(1, 0, one()), (0, 0, x().neg())], -6);
        let InvertOutcome::Inverted(inv) = try_invert(&p_op, -6, Some(10)).unwrap() else {
            panic!("expected an inverse");
        };
        assert!(inv.residual_ok);
        assert_eq!(inv.inverse.coeff(&[0], 1), one());
        assert_eq!(inv.inverse.coeff(&[0], 2), x());
        assert!(inv.inverse.is_integral());
    }

    #[test]
    fn level_one_inverse_is_unbounded() {
        let l = loc(2, 1, 1);
        let p_op = op(&l, Side::Left, &[(1, 0, one()), (0, 0, x().neg())], -16);
        match try_invert(&p_op, -16, None).unwrap() {
            InvertOutcome::Failed(d) => {
                assert_eq!(d.kind, FailureKind::Unbounded);
                assert_eq!(d.profile.verdict, ConvergenceVerdict::UnboundedInWindow);
            }
            InvertOutcome::Inverted(_) => panic!("level-1 inverse should not be integral"),
        }
    }

    #[test]
    fn symbol_mismatch() {
        let theta = SymbolPoly::power_monomial(2, &[1, 0], Poly::one(2));
        let l = Localizer::new(&theta, 0, 0, Chart::Affine).unwrap();
        let d2 = MicroOp::from_terms(&l, Side::Left, [((vec![0, 1], 0), Poly::one(2))], -4).unwrap();
        assert!(matches!(try_invert(&d2, -4, None), Err(Error::SymbolMismatch(_))));
    }

    #[test]
    fn psi_examples() {
        let l1 = loc(2, 1, 1);
        let tinv = op(&l1, Side::Left, &[(0, 1, one())], -6);
        let img = psi_level_lower(&tinv, 0).unwrap();
        assert_eq!(img.coeff(&[0], 1), Poly::from_int(1, 2));
        let (x0, _) = img.to_pseudo(-6);
        assert_eq!(x0, PseudoDiff::monomial(vec![-2], Poly::from_int(1, 2)));
        assert_eq!(psi_level_lower(&tinv, 1).unwrap(), tinv);
    }

    #[test]
    fn psi_matches_rational_rewriting() {
        let l = loc(3, 1, 2);
        let a = op(&l, Side::Left, &[(4, 1, x()), (10, 0, one()), (1, 2, one())], -30);
        let direct = psi_level_lower(&a, 0).unwrap();
        let via_q = a.represent_at(0, 2).unwrap();
        assert_eq!(direct, via_q);
    }

    #[test]
    fn psi_agrees_with_pisogeny_at_localizer_level() {
        // M = m': the term constant is the symbol-level p-isogeny constant
        let l = loc(2, 1, 1);
        for lv in 0..8u64 {
            for i in 0..3u64 {
                assert_eq!(
                    psi_term_constant(&l, 0, &[lv], i),
                    crate::pseudopoly::pisog_constant(2, 0, 1, 1, &[lv], i)
                );
            }
        }
    }

    #[test]
    fn membership_examples() {
        let l12 = loc(2, 1, 2);
        let tinv = op(&l12, Side::Left, &[(0, 1, one())], -8);
        assert_eq!(membership_intermediate(&tinv, 0).unwrap().verdict, MembershipVerdict::InEmm);
        let l11 = loc(2, 1, 1);
        let d12 = op(&l11, Side::Left, &[(2, 0, one())], -8);
        let res = membership_intermediate(&d12, 0).unwrap();
        assert_eq!(res.verdict, MembershipVerdict::OnlyInEmPrime);
        assert_eq!(res.psi_image.coeff(&[2], 0), Poly::constant(1, q(1, 2)));
        let neg = op(&l11, Side::Left, &[(1, 1, one()), (0, 3, x())], -8);
        assert_eq!(membership_intermediate(&neg, 0).unwrap().verdict, MembershipVerdict::InEmm);
        let half = op(&l11, Side::Left, &[(0, 1, Poly::constant(1, q(1, 2)))], -8);
        assert_eq!(
            membership_intermediate(&half, 0).unwrap().verdict,
            MembershipVerdict::NotInEmPrime
        );
    }

    #[test]
    fn membership_undetermined_when_truncated_above_zero() {
        let l = loc(2, 1, 1);
        let a = op(&l, Side::Left, &[(6, 0, one()), (4, 0, one())], -8).truncate(5);
        let res = membership_intermediate(&a, 0).unwrap();
        assert_eq!(res.verdict, MembershipVerdict::OnlyInEmPrime);
        let b = op(&l, Side::Left, &[(1, 0, one()), (4, 0, Poly::from_int(1, 4))], -8).truncate(4);
        let res = membership_intermediate(&b, 0).unwrap();
        assert_eq!(res.verdict, MembershipVerdict::Undetermined);
        assert_eq!(res.blocking_order, Some(3));
    }

    #[test]
    fn normcalc_examples() {
        assert_eq!(normcalc_bounds(1, 2, 0, 1, 5).unwrap().a_k, 0);
        assert_eq!(normcalc_alpha(1, 2, 0, 0), 2);
        for m in 0..3 {
            assert_eq!(normcalc_bounds(1, 2, m, 3, 1).unwrap().b_k, 0);
        }
    }

    #[test]
    fn json_round_trip() {
        let l = loc(3, 1, 2);
        let a = op(
            &l,
            Side::Right,
            &[(4, 1, x()), (1, 2, Poly::constant(1, q(2, 7)))],
            -40,
        )
        .with_precision(Some(6));
        let v = a.to_json();
        let b = MicroOp::from_json(&v).unwrap();
        assert_eq!(a, b);
        assert_eq!(serde_json::to_string(&b.to_json()).unwrap(), serde_json::to_string(&v).unwrap());
    }

    #[test]
    fn incompatible_localizers() {
        let a = MicroOp::one(&loc(2, 0, 0), Side::Left, -3);
        let b = MicroOp::one(&loc(2, 0, 1), Side::Left, -3);
        assert!(matches!(micro_multiply(&a, &b), Err(Error::IncompatibleLocalizer(_))));
    }

    #[test]
    fn torus_chart_localizer() {
        let theta = SymbolPoly::power_monomial(2, &[1], x());
        let l = Localizer::new(&theta, 0, 0, Chart::Torus).unwrap();
        let t = MicroOp::theta_tilde(&l, Side::Left, -5).unwrap();
        let s = op(&l, Side::Left, &[(0, 1, one())], -5);
        // T^-1 is an infinite series on the torus, so the product is only known above the floor
        let prod = micro_multiply(&t, &s).unwrap();
        assert!(!prod.is_exact());
        assert_eq!(prod.truncate(-4).terms, MicroOp::one(&l, Side::Left, -4).terms);
        let prod2 = micro_multiply(&s, &t).unwrap();
        assert_eq!(prod2.truncate(-4).terms, MicroOp::one(&l, Side::Left, -4).terms);
    }
}
