//! Formal pseudo-differential operators `sum_s c_s(x) d^s`, `s` in `Z^d`,
//! with rational Laurent-polynomial coefficients written on the left.
//!
//! Every level-`m` operator and every microlocal presentation embeds here
//! through `d^<m><k> = (q!/k!) d^k`; products follow the generalized
//! Leibniz rule `d^s * b = sum_r binom(s, r) (d^r b) d^(s - r)` and are
//! truncated below an order floor.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::padic::generalized_binomial;
use crate::poly::Poly;

pub type Index = Vec<i64>;

pub fn total(s: &[i64]) -> i64 {
    s.iter().sum()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoDiff {
    nvars: usize,
    terms: BTreeMap<Index, Poly>,
}

/// Visit every `r` in `N^d` with `r_j <= bound_j` and `|r| <= budget`.
fn for_each_index(bounds: &[Option<u64>], budget: u64, f: &mut dyn FnMut(&[u64])) {
    fn rec(
        j: usize,
        bounds: &[Option<u64>],
        budget: u64,
        cur: &mut Vec<u64>,
        f: &mut dyn FnMut(&[u64]),
    ) {
        if j == bounds.len() {
            f(cur);
            return;
        }
        let hi = bounds[j].map_or(budget, |b| b.min(budget));
        for r in 0..=hi {
            cur.push(r);
            rec(j + 1, bounds, budget - r, cur, f);
            cur.pop();
        }
    }
    let mut cur = Vec::with_capacity(bounds.len());
    rec(0, bounds, budget, &mut cur, f);
}

impl PseudoDiff {
    pub fn zero(nvars: usize) -> Self {
        PseudoDiff {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn one(nvars: usize) -> Self {
        Self::monomial(vec![0; nvars], Poly::one(nvars))
    }

    pub fn monomial(s: Index, c: Poly) -> Self {
        let mut out = Self::zero(c.nvars());
        out.add_term(s, c);
        out
    }

    pub fn coefficient(c: Poly) -> Self {
        let n = c.nvars();
        Self::monomial(vec![0; n], c)
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Index, &Poly)> {
        self.terms.iter()
    }

    pub fn coeff(&self, s: &[i64]) -> Poly {
        self.terms
            .get(s)
            .cloned()
            .unwrap_or_else(|| Poly::zero(self.nvars))
    }

    pub fn add_term(&mut self, s: Index, c: Poly) {
        if c.is_zero() {
            return;
        }
        let e = self
            .terms
            .entry(s.clone())
            .or_insert_with(|| Poly::zero(c.nvars()));
        e.add_assign(&c);
        if e.is_zero() {
            self.terms.remove(&s);
        }
    }

    pub fn add(&self, other: &PseudoDiff) -> PseudoDiff {
        let mut out = self.clone();
        for (s, c) in &other.terms {
            out.add_term(s.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, other: &PseudoDiff) -> PseudoDiff {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> PseudoDiff {
        self.scale(&-BigRational::one())
    }

    pub fn scale(&self, k: &BigRational) -> PseudoDiff {
        let mut out = Self::zero(self.nvars);
        for (s, c) in &self.terms {
            out.add_term(s.clone(), c.scale(k));
        }
        out
    }

    /// Left multiplication by a coefficient.
    pub fn left_mul_coeff(&self, a: &Poly) -> PseudoDiff {
        let mut out = Self::zero(self.nvars);
        for (s, c) in &self.terms {
            out.add_term(s.clone(), a.mul(c));
        }
        out
    }

    pub fn order(&self) -> Option<i64> {
        self.terms.keys().map(|s| total(s)).max()
    }

    pub fn min_order(&self) -> Option<i64> {
        self.terms.keys().map(|s| total(s)).min()
    }

    /// Drop terms of order below `floor`.
    pub fn truncate(&self, floor: i64) -> PseudoDiff {
        PseudoDiff {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .filter(|(s, _)| total(s) >= floor)
                .map(|(s, c)| (s.clone(), c.clone()))
                .collect(),
        }
    }

    /// Terms of exactly order `o`.
    pub fn part_of_order(&self, o: i64) -> PseudoDiff {
        PseudoDiff {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .filter(|(s, _)| total(s) == o)
                .map(|(s, c)| (s.clone(), c.clone()))
                .collect(),
        }
    }

    pub fn top_part(&self) -> Option<(i64, PseudoDiff)> {
        let o = self.order()?;
        Some((o, self.part_of_order(o)))
    }

    /// `(a d^s)(b d^t)` accumulated into `out`, keeping orders `>= floor`.
    fn mul_terms_into(
        out: &mut PseudoDiff,
        a: &Poly,
        s: &[i64],
        b: &Poly,
        t: &[i64],
        floor: Option<i64>,
    ) {
        let d = s.len();
        let st: Vec<i64> = s.iter().zip(t).map(|(x, y)| x + y).collect();
        let top = total(&st);
        let budget = match floor {
            Some(f) if top < f => return,
            Some(f) => (top - f) as u64,
            None => u64::MAX,
        };
        let mut bounds = Vec::with_capacity(d);
        for j in 0..d {
            let mut bj = None;
            if s[j] >= 0 {
                bj = Some(s[j] as u64);
            }
            if b.min_degree_in(j).unwrap_or(0) >= 0 {
                let deg = b.degree_in(j).unwrap_or(0).max(0) as u64;
                bj = Some(bj.map_or(deg, |x: u64| x.min(deg)));
            }
            if bj.is_none() && floor.is_none() {
                panic!("unbounded Leibniz expansion requires an order floor");
            }
            bounds.push(bj);
        }
        let budget = if budget == u64::MAX {
            bounds.iter().map(|b| b.unwrap()).sum()
        } else {
            budget
        };
        for_each_index(&bounds, budget, &mut |r: &[u64]| {
            let mut coef = BigInt::one();
            for j in 0..d {
                coef *= generalized_binomial(s[j], r[j]);
                if coef.is_zero() {
                    return;
                }
            }
            let db = b.derivative_multi(r);
            if db.is_zero() {
                return;
            }
            let idx: Index = st.iter().zip(r).map(|(x, &y)| x - y as i64).collect();
            out.add_term(
                idx,
                a.mul(&db).scale(&BigRational::from_integer(coef)),
            );
        });
    }

    /// True when `self * other` has a finite Leibniz expansion, so that a
    /// product with any floor drops nothing above the true minimum order.
    pub fn mul_is_finite(&self, other: &PseudoDiff) -> bool {
        self.terms.keys().all(|s| {
            other.terms.values().all(|b| {
                (0..self.nvars).all(|j| s[j] >= 0 || b.min_degree_in(j).unwrap_or(0) >= 0)
            })
        })
    }

    /// Product truncated below `floor`; `None` only when the expansion is finite.
    pub fn mul(&self, other: &PseudoDiff, floor: Option<i64>) -> PseudoDiff {
        let mut out = Self::zero(self.nvars);
        for (s, a) in &self.terms {
            for (t, b) in &other.terms {
                Self::mul_terms_into(&mut out, a, s, b, t, floor);
            }
        }
        out
    }

    pub fn right_normal_is_finite(&self) -> bool {
        self.terms.iter().all(|(s, a)| {
            (0..self.nvars).all(|j| s[j] >= 0 || a.min_degree_in(j).unwrap_or(0) >= 0)
        })
    }

    /// Coefficients moved to the right: `P = sum_s d^s c_s`.
    pub fn to_right_normal(&self, floor: Option<i64>) -> BTreeMap<Index, Poly> {
        let mut out = PseudoDiff::zero(self.nvars);
        for (s, a) in &self.terms {
            // a d^s = sum_r (-1)^|r| binom(s, r) d^(s - r) (d^r a)
            let top = total(s);
            let d = s.len();
            let mut bounds = Vec::with_capacity(d);
            for j in 0..d {
                let mut bj = None;
                if s[j] >= 0 {
                    bj = Some(s[j] as u64);
                }
                if a.min_degree_in(j).unwrap_or(0) >= 0 {
                    let deg = a.degree_in(j).unwrap_or(0).max(0) as u64;
                    bj = Some(bj.map_or(deg, |x: u64| x.min(deg)));
                }
                if bj.is_none() && floor.is_none() {
                    panic!("unbounded reordering requires an order floor");
                }
                bounds.push(bj);
            }
            let budget = match floor {
                Some(f) if top < f => continue,
                Some(f) => (top - f) as u64,
                None => bounds.iter().map(|b| b.unwrap()).sum(),
            };
            for_each_index(&bounds, budget, &mut |r: &[u64]| {
                let mut coef = BigInt::one();
                for j in 0..d {
                    coef *= generalized_binomial(s[j], r[j]);
                }
                if coef.is_zero() {
                    return;
                }
                let total_r: u64 = r.iter().sum();
                if total_r % 2 == 1 {
                    coef = -coef;
                }
                let da = a.derivative_multi(r);
                if da.is_zero() {
                    return;
                }
                let idx: Index = s.iter().zip(r).map(|(x, &y)| x - y as i64).collect();
                out.add_term(idx, da.scale(&BigRational::from_integer(coef)));
            });
        }
        out.terms
    }

    /// Inverse of [`PseudoDiff::to_right_normal`].
    pub fn from_right_normal(
        nvars: usize,
        terms: &BTreeMap<Index, Poly>,
        floor: Option<i64>,
    ) -> PseudoDiff {
        let mut out = PseudoDiff::zero(nvars);
        let zero = vec![0; nvars];
        for (s, c) in terms {
            Self::mul_terms_into(&mut out, &Poly::one(nvars), s, c, &zero, floor);
        }
        out
    }

    /// Two-sided inverse accurate at orders `>= floor`. The top part must be a
    /// single term `c x^e d^s`.
    pub fn inverse(&self, floor: i64) -> Result<PseudoDiff> {
        let (n, top) = self.top_part().ok_or(Error::ZeroOperator)?;
        if top.terms.len() != 1 {
            return Err(Error::NotInvertibleAtSymbol(
                "top-order part has more than one term".into(),
            ));
        }
        let (s, c) = top.terms.iter().next().unwrap();
        let (e, cc) = c.as_monomial().ok_or_else(|| {
            Error::NotInvertibleAtSymbol(format!("top coefficient {c} is not a monomial"))
        })?;
        let c_inv = Poly::monomial(
            self.nvars,
            e.iter().map(|x| -x).collect(),
            cc.recip(),
        );
        let neg_s: Index = s.iter().map(|x| -x).collect();
        let f_e = floor.min(floor + n);
        let f_t = floor.min(f_e - n + 1);
        let t0 = PseudoDiff::monomial(neg_s, Poly::one(self.nvars))
            .mul(&PseudoDiff::coefficient(c_inv), Some(f_t));
        let lower = self.sub(&top);
        let e_op = t0.mul(&lower, Some(f_e)).neg();
        let t0 = t0.truncate(floor);
        let mut sum = t0.clone();
        let mut term = t0;
        loop {
            term = e_op.mul(&term, Some(floor));
            if term.is_zero() {
                break;
            }
            sum = sum.add(&term);
        }
        Ok(sum)
    }
}
