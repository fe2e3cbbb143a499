//! Filtered algebras: principal symbols, truncated Rees rings `A_{.,n}` and a
//! bounded search for Ore witnesses.

use std::collections::BTreeMap;
use std::fmt;

use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::diffop::DiffOp;
use crate::error::{Error, Result};
use crate::linalg::solve_rational;
use crate::poly::Poly;
use crate::pseudopoly::{CoeffRing, SymbolPoly};

/// An algebra with an increasing exhaustive filtration by integer orders,
/// together with a coordinate basis compatible with the filtration.
pub trait FilteredAlgebra {
    type Elem: Clone + PartialEq + fmt::Debug;
    type Symbol: Clone + PartialEq + fmt::Debug;
    type Key: Ord + Clone + fmt::Debug;

    fn zero(&self) -> Self::Elem;
    fn one(&self) -> Self::Elem;
    fn add(&self, a: &Self::Elem, b: &Self::Elem) -> Self::Elem;
    fn scale(&self, a: &Self::Elem, c: &BigRational) -> Self::Elem;
    fn mul(&self, a: &Self::Elem, b: &Self::Elem) -> Result<Self::Elem>;
    /// True order; `None` for zero.
    fn order(&self, a: &Self::Elem) -> Option<i64>;
    /// Image of `a` in `gr_i`; zero unless `order(a) == i`.
    fn symbol(&self, a: &Self::Elem, i: i64) -> Self::Symbol;
    fn mul_symbols(&self, a: &Self::Symbol, b: &Self::Symbol) -> Self::Symbol;
    fn coordinates(&self, a: &Self::Elem) -> BTreeMap<Self::Key, BigRational>;
    fn key_order(&self, k: &Self::Key) -> i64;
    fn basis_element(&self, k: &Self::Key) -> Self::Elem;
    /// Basis elements of order at most `max_order` (and coefficient degree at most `degree`).
    fn basis(&self, max_order: i64, degree: u32) -> Vec<Self::Key>;
    fn is_commutative(&self) -> bool {
        false
    }

    fn sub(&self, a: &Self::Elem, b: &Self::Elem) -> Self::Elem {
        self.add(a, &self.scale(b, &-BigRational::one()))
    }

    fn is_zero(&self, a: &Self::Elem) -> bool {
        self.order(a).is_none()
    }

    /// Keep only the part of order strictly above `floor`.
    fn drop_at_or_below(&self, a: &Self::Elem, floor: i64) -> Self::Elem {
        let mut out = self.zero();
        for (k, c) in self.coordinates(a) {
            if self.key_order(&k) > floor {
                out = self.add(&out, &self.scale(&self.basis_element(&k), &c));
            }
        }
        out
    }
}

/// Level-`m` differential operators on `nvars` coordinates with the order filtration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiffOpAlgebra {
    pub p: u64,
    pub level: u32,
    pub nvars: usize,
}

impl FilteredAlgebra for DiffOpAlgebra {
    type Elem = DiffOp;
    type Symbol = SymbolPoly;
    /// `(k, e)` for `x^e d^<m><k>`.
    type Key = (Vec<u64>, Vec<i64>);

    fn zero(&self) -> DiffOp {
        DiffOp::zero(self.p, self.level, self.nvars)
    }

    fn one(&self) -> DiffOp {
        DiffOp::one(self.p, self.level, self.nvars)
    }

    fn add(&self, a: &DiffOp, b: &DiffOp) -> DiffOp {
        a.add(b).expect("operators of one algebra")
    }

    fn scale(&self, a: &DiffOp, c: &BigRational) -> DiffOp {
        a.scale(c)
    }

    fn mul(&self, a: &DiffOp, b: &DiffOp) -> Result<DiffOp> {
        a.multiply(b)
    }

    fn order(&self, a: &DiffOp) -> Option<i64> {
        a.order().map(|o| o as i64)
    }

    fn symbol(&self, a: &DiffOp, i: i64) -> SymbolPoly {
        match a.rational_symbol() {
            Some((o, s)) if o as i64 == i => s,
            _ => SymbolPoly::zero(self.p, self.level, self.nvars, CoeffRing::Rational),
        }
    }

    fn mul_symbols(&self, a: &SymbolPoly, b: &SymbolPoly) -> SymbolPoly {
        a.multiply(b).expect("symbols of one level")
    }

    fn coordinates(&self, a: &DiffOp) -> BTreeMap<Self::Key, BigRational> {
        let mut out = BTreeMap::new();
        for (k, c) in a.terms() {
            for (e, v) in c.terms() {
                out.insert((k.clone(), e.clone()), v.clone());
            }
        }
        out
    }

    fn key_order(&self, k: &Self::Key) -> i64 {
        k.0.iter().sum::<u64>() as i64
    }

    fn basis_element(&self, k: &Self::Key) -> DiffOp {
        DiffOp::monomial(
            self.p,
            self.level,
            k.0.clone(),
            Poly::monomial(self.nvars, k.1.clone(), BigRational::one()),
        )
    }

    fn basis(&self, max_order: i64, degree: u32) -> Vec<Self::Key> {
        if max_order < 0 {
            return Vec::new();
        }
        let ks = bounded_indices(self.nvars, max_order as u64);
        let es = bounded_indices(self.nvars, degree as u64);
        let mut out = Vec::new();
        for k in &ks {
            for e in &es {
                out.push((k.clone(), e.iter().map(|&x| x as i64).collect()));
            }
        }
        out
    }
}

/// Commutative polynomials filtered by total degree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolyAlgebra {
    pub nvars: usize,
}

impl FilteredAlgebra for PolyAlgebra {
    type Elem = Poly;
    type Symbol = Poly;
    type Key = Vec<i64>;

    fn zero(&self) -> Poly {
        Poly::zero(self.nvars)
    }

    fn one(&self) -> Poly {
        Poly::one(self.nvars)
    }

    fn add(&self, a: &Poly, b: &Poly) -> Poly {
        a.add(b)
    }

    fn scale(&self, a: &Poly, c: &BigRational) -> Poly {
        a.scale(c)
    }

    fn mul(&self, a: &Poly, b: &Poly) -> Result<Poly> {
        Ok(a.mul(b))
    }

    fn order(&self, a: &Poly) -> Option<i64> {
        a.total_degree()
    }

    fn symbol(&self, a: &Poly, i: i64) -> Poly {
        Poly::from_terms(
            self.nvars,
            a.terms()
                .filter(|(e, _)| e.iter().sum::<i64>() == i)
                .map(|(e, c)| (e.clone(), c.clone())),
        )
    }

    fn mul_symbols(&self, a: &Poly, b: &Poly) -> Poly {
        a.mul(b)
    }

    fn coordinates(&self, a: &Poly) -> BTreeMap<Vec<i64>, BigRational> {
        a.terms().map(|(e, c)| (e.clone(), c.clone())).collect()
    }

    fn key_order(&self, k: &Vec<i64>) -> i64 {
        k.iter().sum()
    }

    fn basis_element(&self, k: &Vec<i64>) -> Poly {
        Poly::monomial(self.nvars, k.clone(), BigRational::one())
    }

    fn basis(&self, max_order: i64, _degree: u32) -> Vec<Vec<i64>> {
        if max_order < 0 {
            return Vec::new();
        }
        bounded_indices(self.nvars, max_order as u64)
            .into_iter()
            .map(|e| e.into_iter().map(|x| x as i64).collect())
            .collect()
    }

    fn is_commutative(&self) -> bool {
        true
    }
}

/// All multi-indices of length `n` with total at most `bound`.
pub fn bounded_indices(n: usize, bound: u64) -> Vec<Vec<u64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        let mut next = Vec::new();
        for v in &out {
            let used: u64 = v.iter().sum();
            for a in 0..=bound - used {
                let mut w = v.clone();
                w.push(a);
                next.push(w);
            }
        }
        out = next;
    }
    out
}

/// An element together with an upper bound for its order.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredElement<E> {
    pub payload: E,
    pub bound: i64,
}

impl<E: Clone> FilteredElement<E> {
    pub fn new<A: FilteredAlgebra<Elem = E>>(alg: &A, payload: E, bound: i64) -> Result<Self> {
        if let Some(o) = alg.order(&payload) {
            if o > bound {
                return Err(Error::InvalidArgument(format!(
                    "element of order {o} stated to lie in filtration step {bound}"
                )));
            }
        }
        Ok(FilteredElement { payload, bound })
    }

    pub fn exact<A: FilteredAlgebra<Elem = E>>(alg: &A, payload: E) -> Self {
        let bound = alg.order(&payload).unwrap_or(i64::MIN);
        FilteredElement { payload, bound }
    }

    /// Tighten the bound to the true order when the element is nonzero.
    pub fn normalize<A: FilteredAlgebra<Elem = E>>(&self, alg: &A) -> Self {
        match alg.order(&self.payload) {
            Some(o) => FilteredElement {
                payload: self.payload.clone(),
                bound: o,
            },
            None => self.clone(),
        }
    }
}

/// A homogeneous element of `gr A`; `degree` is `None` for the zero symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct GradedElement<S> {
    pub degree: Option<i64>,
    pub symbol: S,
}

pub fn principal_symbol<A: FilteredAlgebra>(
    alg: &A,
    x: &FilteredElement<A::Elem>,
) -> GradedElement<A::Symbol> {
    match alg.order(&x.payload) {
        Some(o) => GradedElement {
            degree: Some(o),
            symbol: alg.symbol(&x.payload, o),
        },
        None => GradedElement {
            degree: None,
            symbol: alg.symbol(&alg.zero(), 0),
        },
    }
}

/// An element `sum_i x_i nu^i` of `A_{.,n} = A_. / nu^n A_.`; the component
/// of degree `i` is kept modulo `A_{i-n}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReesElement<E> {
    pub components: BTreeMap<i64, E>,
    pub trunc: u32,
}

impl<E: Clone + PartialEq> ReesElement<E> {
    pub fn zero(trunc: u32) -> Self {
        ReesElement {
            components: BTreeMap::new(),
            trunc,
        }
    }

    /// `x nu^i`; requires `x` in `A_i`.
    pub fn homogeneous<A: FilteredAlgebra<Elem = E>>(
        alg: &A,
        x: E,
        i: i64,
        trunc: u32,
    ) -> Result<Self> {
        FilteredElement::new(alg, x.clone(), i)?;
        let mut out = Self::zero(trunc);
        out.set(alg, i, x);
        Ok(out)
    }

    pub fn one<A: FilteredAlgebra<Elem = E>>(alg: &A, trunc: u32) -> Self {
        Self::homogeneous(alg, alg.one(), 0, trunc).expect("1 lies in A_0")
    }

    pub fn nu<A: FilteredAlgebra<Elem = E>>(alg: &A, trunc: u32) -> Self {
        Self::homogeneous(alg, alg.one(), 1, trunc).expect("1 lies in A_1")
    }

    fn set<A: FilteredAlgebra<Elem = E>>(&mut self, alg: &A, i: i64, x: E) {
        let x = alg.drop_at_or_below(&x, i - self.trunc as i64);
        if alg.is_zero(&x) {
            self.components.remove(&i);
        } else {
            self.components.insert(i, x);
        }
    }

    pub fn component(&self, i: i64) -> Option<&E> {
        self.components.get(&i)
    }

    pub fn is_zero(&self) -> bool {
        self.components.is_empty()
    }

    pub fn add<A: FilteredAlgebra<Elem = E>>(&self, alg: &A, other: &Self) -> Self {
        let mut out = Self::zero(self.trunc.min(other.trunc));
        let degrees: std::collections::BTreeSet<i64> = self
            .components
            .keys()
            .chain(other.components.keys())
            .copied()
            .collect();
        for i in degrees {
            let z = alg.zero();
            let a = self.components.get(&i).unwrap_or(&z);
            let b = other.components.get(&i).unwrap_or(&z);
            out.set(alg, i, alg.add(a, b));
        }
        out
    }
}

/// Product in `A_{.,n}`; `nu` is central, so degrees add.
pub fn rees_multiply<A: FilteredAlgebra>(
    alg: &A,
    a: &ReesElement<A::Elem>,
    b: &ReesElement<A::Elem>,
    n: u32,
) -> Result<ReesElement<A::Elem>> {
    if a.trunc < n || b.trunc < n {
        return Err(Error::InvalidArgument(format!(
            "factors truncated at {} and {}, below the requested {n}",
            a.trunc, b.trunc
        )));
    }
    let mut acc: BTreeMap<i64, A::Elem> = BTreeMap::new();
    for (i, x) in &a.components {
        for (j, y) in &b.components {
            let prod = alg.mul(x, y)?;
            let e = acc.entry(i + j).or_insert_with(|| alg.zero());
            *e = alg.add(e, &prod);
        }
    }
    let mut out = ReesElement::zero(n);
    for (i, x) in acc {
        out.set(alg, i, x);
    }
    Ok(out)
}

/// Search limits for [`ore_witness_search`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OreBudget {
    /// Largest power `t` with `sigma(s') = sigma(s)^t`.
    pub max_power: u32,
    /// Coefficient degree bound for the unknowns.
    pub degree: u32,
}

impl Default for OreBudget {
    fn default() -> Self {
        OreBudget {
            max_power: 4,
            degree: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OreWitness<E> {
    pub s_prime: E,
    pub r: E,
}

/// Check `a s' = s r`, exactly or modulo `nu^n` (orders at most `deg - n` ignored,
/// where `deg` is the Rees degree of `a s'`).
pub fn verify_ore<A: FilteredAlgebra>(
    alg: &A,
    s: &A::Elem,
    a: &A::Elem,
    w: &OreWitness<A::Elem>,
    trunc: Option<u32>,
) -> Result<bool> {
    let diff = alg.sub(&alg.mul(a, &w.s_prime)?, &alg.mul(s, &w.r)?);
    Ok(match (trunc, alg.order(a), alg.order(&w.s_prime)) {
        (Some(n), Some(oa), Some(os)) => alg.is_zero(&alg.drop_at_or_below(&diff, oa + os - n as i64)),
        _ => alg.is_zero(&diff),
    })
}

/// Find `(s', r)` with `a s' = s r` and `sigma(s') = sigma(s)^t`, trying
/// `t = 1, 2, ...` up to the budget. Each stage is a linear solve over `Q`
/// for the lower-order part of `s'` and for `r`.
pub fn ore_witness_search<A: FilteredAlgebra>(
    alg: &A,
    s: &A::Elem,
    a: &A::Elem,
    trunc: Option<u32>,
    budget: OreBudget,
) -> Result<OreWitness<A::Elem>> {
    let Some(os) = alg.order(s) else {
        return Err(Error::ZeroOperator);
    };
    let Some(oa) = alg.order(a) else {
        return Ok(OreWitness {
            s_prime: alg.one(),
            r: alg.zero(),
        });
    };
    if alg.is_commutative() {
        return Ok(OreWitness {
            s_prime: s.clone(),
            r: a.clone(),
        });
    }
    let mut st = s.clone();
    for t in 1..=budget.max_power {
        if t > 1 {
            st = alg.mul(&st, s)?;
        }
        let top = oa + os * t as i64;
        let floor = trunc.map(|n| top - n as i64);
        let keep = |m: BTreeMap<A::Key, BigRational>| -> BTreeMap<A::Key, BigRational> {
            m.into_iter()
                .filter(|(k, _)| floor.is_none_or(|f| alg.key_order(k) > f))
                .collect()
        };
        let lower = alg.basis(os * t as i64 - 1, budget.degree);
        let r_basis = alg.basis(oa + os * (t as i64 - 1), budget.degree);
        let mut columns: Vec<BTreeMap<A::Key, BigRational>> = Vec::new();
        for k in &lower {
            columns.push(keep(alg.coordinates(&alg.mul(a, &alg.basis_element(k))?)));
        }
        for k in &r_basis {
            let v = alg.mul(s, &alg.basis_element(k))?;
            columns.push(keep(alg.coordinates(&alg.scale(&v, &-BigRational::one()))));
        }
        let rhs = keep(alg.coordinates(&alg.scale(&alg.mul(a, &st)?, &-BigRational::one())));
        let mut keys: Vec<A::Key> = rhs.keys().cloned().collect();
        for c in &columns {
            keys.extend(c.keys().cloned());
        }
        keys.sort();
        keys.dedup();
        let matrix: Vec<Vec<BigRational>> = keys
            .iter()
            .map(|k| {
                columns
                    .iter()
                    .map(|c| c.get(k).cloned().unwrap_or_else(BigRational::zero))
                    .collect()
            })
            .collect();
        let b: Vec<BigRational> = keys
            .iter()
            .map(|k| rhs.get(k).cloned().unwrap_or_else(BigRational::zero))
            .collect();
        let Some(sol) = solve_rational(&matrix, &b) else {
            continue;
        };
        let mut s_prime = st.clone();
        let mut r = alg.zero();
        for (i, v) in sol.iter().enumerate() {
            if v.is_zero() {
                continue;
            }
            if i < lower.len() {
                s_prime = alg.add(&s_prime, &alg.scale(&alg.basis_element(&lower[i]), v));
            } else {
                let k = &r_basis[i - lower.len()];
                r = alg.add(&r, &alg.scale(&alg.basis_element(k), v));
            }
        }
        let w = OreWitness { s_prime, r };
        debug_assert!(verify_ore(alg, s, a, &w, trunc)?);
        return Ok(w);
    }
    Err(Error::BudgetExhausted(format!(
        "no Ore witness with sigma(s') = sigma(s)^t for t <= {} and coefficient degree <= {}",
        budget.max_power, budget.degree
    )))
}
