//! Characteristic varieties and microlocal supports of cyclic modules
//! `D^(m)/sum D P_j` on the formal affine line.
//!
//! `Char` is read off the special fiber: the relations are scaled to be
//! primitive, the left ideal is explored within explicit bounds, saturated
//! over `Z_(p)`, reduced mod `p` and put in echelon form for an order-graded
//! column ordering. Leading symbols `f(x) xi<k>` with `p^m | k` survive in
//! the reduced symbol ring `F_p[x, eta]`, `eta = xi<p^m>`; the others are
//! nilpotent.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::diffop::{DiffOp, Side};
use crate::error::{Error, Result};
use crate::linalg::{self, dense_residues, saturated_reduction, FpEliminator, SparseRow};
use crate::microloc::{try_invert, Chart, InvertOutcome, Localizer, MicroOp};
use crate::padic::{self, Valuation};
use crate::poly::Poly;
use crate::pseudopoly::SymbolPoly;

/// `D^(m)/(sum D^(m) P_j)` in one variable. Relations are primitive
/// (valuation 0); zero relations are dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CyclicModule {
    p: u64,
    level: u32,
    relations: Vec<DiffOp>,
    precision: Option<u32>,
}

impl CyclicModule {
    pub fn new(p: u64, level: u32, relations: Vec<DiffOp>, precision: Option<u32>) -> Result<Self> {
        padic::check_prime(p)?;
        let mut rel = Vec::new();
        for r in relations {
            if r.nvars() != 1 {
                return Err(Error::DimensionMismatch {
                    expected: 1,
                    found: r.nvars(),
                });
            }
            if r.prime() != p || r.level() != level {
                return Err(Error::LevelMismatch(format!(
                    "relation {r} is not at p = {p}, level {level}"
                )));
            }
            if let Some(c) = primitive(&r) {
                rel.push(c);
            }
        }
        Ok(CyclicModule {
            p,
            level,
            relations: rel,
            precision,
        })
    }

    pub fn prime(&self) -> u64 {
        self.p
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn relations(&self) -> &[DiffOp] {
        &self.relations
    }

    pub fn precision(&self) -> Option<u32> {
        self.precision
    }

    /// `D^(l) (x) M`, presented by the images of the relations under `phi`.
    pub fn push_to_level(&self, l: u32) -> Result<CyclicModule> {
        let rel = self
            .relations
            .iter()
            .map(|r| r.level_map_phi(l))
            .collect::<Result<Vec<_>>>()?;
        CyclicModule::new(self.p, l, rel, self.precision)
    }
}

fn primitive(r: &DiffOp) -> Option<DiffOp> {
    let v = r.valuation().finite()?;
    Some(r.scale(&padic::p_pow_rational(r.prime(), -v)))
}

/// Exploration bounds; part of every certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bounds {
    pub max_order: u64,
    pub max_xdeg: u64,
    pub precision: u32,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            max_order: 8,
            max_xdeg: 8,
            precision: 20,
        }
    }
}

/// Polynomial over `F_p`, coefficients from degree 0 up, no trailing zeros.
pub type FpPoly = Vec<u64>;

fn fp_trim(mut f: FpPoly) -> FpPoly {
    while f.last() == Some(&0) {
        f.pop();
    }
    f
}

fn fp_monic(f: FpPoly, p: u64) -> FpPoly {
    let f = fp_trim(f);
    match f.last() {
        None => f,
        Some(&lc) => {
            let inv = linalg::mod_inv(lc, p);
            f.into_iter().map(|c| c * inv % p).collect()
        }
    }
}

fn fp_rem(a: &[u64], b: &[u64], p: u64) -> FpPoly {
    let b = fp_trim(b.to_vec());
    let mut r = fp_trim(a.to_vec());
    let lb = *b.last().expect("division by zero polynomial");
    let inv = linalg::mod_inv(lb, p);
    while r.len() >= b.len() {
        let f = r[r.len() - 1] * inv % p;
        let shift = r.len() - b.len();
        for (i, &c) in b.iter().enumerate() {
            r[shift + i] = (r[shift + i] + (p - f) * c % p) % p;
        }
        r = fp_trim(r);
    }
    r
}

fn fp_mul(a: &[u64], b: &[u64], p: u64) -> FpPoly {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] = (out[i + j] + x * y) % p;
        }
    }
    fp_trim(out)
}

pub fn fp_gcd(a: &[u64], b: &[u64], p: u64) -> FpPoly {
    let mut a = fp_trim(a.to_vec());
    let mut b = fp_trim(b.to_vec());
    while !b.is_empty() {
        let r = fp_rem(&a, &b, p);
        a = b;
        b = r;
    }
    fp_monic(a, p)
}

/// True when `a` and `b` have the same roots over the algebraic closure.
pub fn fp_same_roots(a: &[u64], b: &[u64], p: u64) -> bool {
    let divides_power = |f: &[u64], g: &[u64]| {
        // f | g^deg(f)
        let mut acc = vec![1u64];
        for _ in 1..f.len() {
            acc = fp_mul(&acc, g, p);
        }
        fp_rem(&acc, f, p).is_empty()
    };
    let (a, b) = (fp_trim(a.to_vec()), fp_trim(b.to_vec()));
    if a.is_empty() || b.is_empty() {
        return a.is_empty() == b.is_empty();
    }
    divides_power(&a, &b) && divides_power(&b, &a)
}

pub fn fp_poly_to_string(f: &[u64]) -> String {
    let f = fp_trim(f.to_vec());
    if f.is_empty() {
        return "0".into();
    }
    let mut parts = Vec::new();
    for (e, &c) in f.iter().enumerate().rev() {
        if c == 0 {
            continue;
        }
        let mono = match e {
            0 => String::new(),
            1 => "x".to_string(),
            _ => format!("x^{e}"),
        };
        parts.push(match (c, mono.is_empty()) {
            (_, true) => c.to_string(),
            (1, false) => mono,
            (_, false) => format!("{c}*{mono}"),
        });
    }
    parts.join(" + ")
}

fn poly_mod_p(a: &Poly, p: u64) -> FpPoly {
    let deg = a.degree_in(0).unwrap_or(0).max(0) as usize;
    let mut out = vec![0; deg + 1];
    for (e, c) in a.terms() {
        out[e[0] as usize] = linalg::rational_residue(c, p);
    }
    fp_trim(out)
}

/// A leading symbol `f(x) xi<k>` mod `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeadingSymbol {
    pub order: u64,
    pub coefficient: FpPoly,
}

impl fmt::Display for LeadingSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = fp_poly_to_string(&self.coefficient);
        let c = if self.coefficient.iter().filter(|&&v| v != 0).count() > 1 {
            format!("({c})")
        } else {
            c
        };
        match (self.order, c.as_str()) {
            (0, _) => write!(f, "{c}"),
            (k, "1") => write!(f, "xi[{k}]"),
            (k, _) => write!(f, "{c}*xi[{k}]"),
        }
    }
}

/// Closure checks performed on the echelon basis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub bounds: Bounds,
    pub generators_in_span: bool,
    /// Products `x B`, `d<p^s> B` that fit in the bounds and were reduced.
    pub closure_checked: usize,
    pub closure_failures: usize,
    /// Products that left the bounds and were not checked.
    pub closure_skipped: usize,
    pub multiples_used: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderStandardBasis {
    pub p: u64,
    pub level: u32,
    /// Echelon basis mod `p`, lifted to `[0, p)` coefficients.
    pub basis: Vec<DiffOp>,
    pub leading: Vec<LeadingSymbol>,
    pub certificate: Certificate,
    /// Certificate clean within the bounds.
    pub complete: bool,
}

struct Columns {
    max_order: u64,
    max_xdeg: u64,
}

impl Columns {
    fn len(&self) -> usize {
        ((self.max_order + 1) * (self.max_xdeg + 1)) as usize
    }

    // higher order first, then higher x-degree
    fn index(&self, k: u64, e: u64) -> usize {
        ((self.max_order - k) * (self.max_xdeg + 1) + (self.max_xdeg - e)) as usize
    }

    fn key(&self, c: usize) -> (u64, u64) {
        let w = self.max_xdeg + 1;
        (self.max_order - c as u64 / w, self.max_xdeg - c as u64 % w)
    }

    fn row(&self, op: &DiffOp) -> Option<SparseRow> {
        let mut row = SparseRow::new();
        for (k, a) in op.terms() {
            if k[0] > self.max_order {
                return None;
            }
            for (e, c) in a.terms() {
                if e[0] < 0 || e[0] as u64 > self.max_xdeg {
                    return None;
                }
                row.insert(self.index(k[0], e[0] as u64), c.clone());
            }
        }
        Some(row)
    }

    fn op(&self, p: u64, level: u32, residues: &[u64]) -> DiffOp {
        let mut out = DiffOp::zero(p, level, 1);
        for (c, &v) in residues.iter().enumerate() {
            if v != 0 {
                let (k, e) = self.key(c);
                out.add_term(
                    vec![k],
                    Poly::monomial(1, vec![e as i64], BigRational::from_integer(BigInt::from(v))),
                );
            }
        }
        out
    }
}

/// Standard basis of the left ideal for the order filtration, mod `p`,
/// within `bounds`.
pub fn order_standard_basis(module: &CyclicModule, bounds: Bounds) -> Result<OrderStandardBasis> {
    let (p, level) = (module.p, module.level);
    let cols = Columns {
        max_order: bounds.max_order,
        max_xdeg: bounds.max_xdeg,
    };
    let n = cols.len();
    let mut rows = Vec::new();
    let mut generators_fit = true;
    for r in &module.relations {
        let ord = r.order().unwrap_or(0);
        if cols.row(r).is_none() {
            generators_fit = false;
            continue;
        }
        for b in 0..=bounds.max_order.saturating_sub(ord) {
            let db = DiffOp::basis(p, level, 1, vec![b]).multiply(r)?;
            for a in 0..=bounds.max_xdeg {
                let m = db.left_mul_coeff(&Poly::monomial(1, vec![a as i64], BigRational::one()));
                match cols.row(&m) {
                    Some(row) => rows.push(row),
                    None => break,
                }
            }
        }
    }
    let multiples_used = rows.len();
    let sat = saturated_reduction(p, rows);
    let mut elim = FpEliminator::new(p, n, false);
    for (_, row) in &sat {
        elim.insert(&dense_residues(p, row, n));
    }
    let reduced = elim.reduced_rows();
    let basis: Vec<DiffOp> = reduced.iter().map(|(_, r, _)| cols.op(p, level, r)).collect();

    let mut leading = Vec::new();
    for (pivot, r, _) in &reduced {
        let (k, _) = cols.key(*pivot);
        let mut f = vec![0u64; bounds.max_xdeg as usize + 1];
        for e in 0..=bounds.max_xdeg {
            f[e as usize] = r[cols.index(k, e)];
        }
        leading.push(LeadingSymbol {
            order: k,
            coefficient: fp_trim(f),
        });
    }

    let mut generators_in_span = generators_fit;
    for r in &module.relations {
        if let Some(row) = cols.row(r) {
            generators_in_span &= elim.contains(&dense_residues(p, &row, n));
        }
    }
    let mut multipliers = vec![DiffOp::x(p, level, 1, 0)];
    for s in 0..=level {
        multipliers.push(DiffOp::basis(p, level, 1, vec![p.pow(s)]));
    }
    let (mut checked, mut failures, mut skipped) = (0, 0, 0);
    for b in &basis {
        for g in &multipliers {
            let prod = g.multiply(b)?;
            match cols.row(&prod) {
                Some(row) => {
                    checked += 1;
                    if !elim.contains(&dense_residues(p, &row, n)) {
                        failures += 1;
                    }
                }
                None => skipped += 1,
            }
        }
    }
    let certificate = Certificate {
        bounds,
        generators_in_span,
        closure_checked: checked,
        closure_failures: failures,
        closure_skipped: skipped,
        multiples_used,
    };
    Ok(OrderStandardBasis {
        p,
        level,
        basis,
        leading,
        complete: generators_in_span && failures == 0,
        certificate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CharClass {
    Empty,
    ZeroSection,
    WholeSpace,
    /// Zero section together with the fibers over the roots of `fibers`.
    ZeroSectionAndFibers,
    /// Fibers over the roots of `fibers` and the zero-section points over
    /// the roots of `zero_section_points`.
    FiberSet,
}

impl fmt::Display for CharClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CharClass::Empty => "empty",
            CharClass::ZeroSection => "zero-section",
            CharClass::WholeSpace => "whole-space",
            CharClass::ZeroSectionAndFibers => "zero-section+fibers",
            CharClass::FiberSet => "fiber-set",
        };
        write!(f, "{s}")
    }
}

/// `V(gr I)` in `Spec F_p[x, eta]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharVariety {
    pub level: u32,
    pub class: CharClass,
    /// Monic; the punctured chart part is the union of fibers over its roots.
    /// `None` means every fiber.
    pub fibers: Option<FpPoly>,
    /// Monic; `None` means the whole zero section.
    pub zero_section_points: Option<FpPoly>,
    /// Non-nilpotent leading symbols, as `f(x) eta^q` with `q = k/p^m`.
    pub generators: Vec<LeadingSymbol>,
    pub complete: bool,
}

impl CharVariety {
    pub fn describe(&self) -> String {
        let mut s = self.class.to_string();
        if let Some(f) = &self.fibers {
            if f.len() > 1 {
                s += &format!(" fibers: {}", fp_poly_to_string(f));
            }
        }
        if self.class == CharClass::FiberSet {
            if let Some(g) = &self.zero_section_points {
                if g.len() > 1 && Some(g) != self.fibers.as_ref() {
                    s += &format!(" points: {}", fp_poly_to_string(g));
                }
            }
        }
        if !self.complete {
            s += " (incomplete)";
        }
        s
    }

    /// Same class and the same fibers and points over the algebraic closure.
    pub fn same_set(&self, other: &CharVariety, p: u64) -> bool {
        let eq = |a: &Option<FpPoly>, b: &Option<FpPoly>| match (a, b) {
            (None, None) => true,
            (Some(x), Some(y)) => fp_same_roots(x, y, p),
            _ => false,
        };
        self.class == other.class
            && eq(&self.fibers, &other.fibers)
            && eq(&self.zero_section_points, &other.zero_section_points)
    }
}

/// Per order, the gcd of the generator coefficients, dropping orders whose
/// gcd is a multiple of the gcd at some lower order.
pub fn minimal_generators(p: u64, generators: &[LeadingSymbol]) -> Vec<LeadingSymbol> {
    let mut per: BTreeMap<u64, FpPoly> = BTreeMap::new();
    for g in generators {
        let e = per.entry(g.order).or_default();
        *e = fp_gcd(e, &g.coefficient, p);
    }
    let mut out: Vec<LeadingSymbol> = Vec::new();
    for (order, f) in per {
        if out.iter().any(|h| fp_rem(&f, &h.coefficient, p).is_empty()) {
            continue;
        }
        out.push(LeadingSymbol {
            order,
            coefficient: f,
        });
    }
    out
}

pub fn classify(p: u64, level: u32, leading: &[LeadingSymbol], complete: bool) -> CharVariety {
    let step = p.pow(level);
    let generators: Vec<LeadingSymbol> = leading
        .iter()
        .filter(|s| s.order % step == 0 && !s.coefficient.is_empty())
        .map(|s| LeadingSymbol {
            order: s.order / step,
            coefficient: s.coefficient.clone(),
        })
        .collect();
    let gcd_of = |it: &mut dyn Iterator<Item = &LeadingSymbol>| -> Option<FpPoly> {
        it.fold(None, |acc: Option<FpPoly>, s| {
            Some(match acc {
                None => fp_monic(s.coefficient.clone(), p),
                Some(g) => fp_gcd(&g, &s.coefficient, p),
            })
        })
    };
    let g0 = gcd_of(&mut generators.iter().filter(|s| s.order == 0));
    let g = gcd_of(&mut generators.iter());
    let unit = |f: &FpPoly| f.len() == 1;
    let class = match (&g0, &g) {
        (_, None) => CharClass::WholeSpace,
        (Some(z), _) if unit(z) => CharClass::Empty,
        (None, Some(f)) if unit(f) => CharClass::ZeroSection,
        (None, Some(_)) => CharClass::ZeroSectionAndFibers,
        (Some(_), Some(_)) => CharClass::FiberSet,
    };
    CharVariety {
        level,
        class,
        fibers: g,
        zero_section_points: g0,
        generators,
        complete,
    }
}

pub fn char_variety(module: &CyclicModule, bounds: Bounds) -> Result<CharVariety> {
    let sb = order_standard_basis(module, bounds)?;
    Ok(classify(sb.p, sb.level, &sb.leading, sb.complete))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportVerdict {
    /// Some relation is invertible in `E` on the class: an inverse certificate exists.
    Vanishes,
    /// Inversion failed within the window; see the diagnostic.
    PersistsUpToWindow,
    /// Every relation's principal symbol vanishes on the class.
    SymbolVanishes,
    Inconclusive,
}

impl fmt::Display for SupportVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SupportVerdict::Vanishes => "vanishes",
            SupportVerdict::PersistsUpToWindow => "persists-up-to-window",
            SupportVerdict::SymbolVanishes => "symbol-vanishes",
            SupportVerdict::Inconclusive => "inconclusive",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseEvidence {
    pub relation: String,
    pub chart: Option<Chart>,
    pub outcome: String,
    pub residual_floor: Option<i64>,
    /// Least coefficient valuation per order, top first.
    pub valuations: Vec<(i64, i64)>,
}

/// Support of `E^(l) (x) M` on the punctured chart of `Theta = xi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSupport {
    pub level: u32,
    /// Points where no principal symbol vanishes.
    pub generic: SupportVerdict,
    /// Monic polynomial whose roots are where all principal symbols vanish.
    pub degenerate_fibers: FpPoly,
    pub fibers: SupportVerdict,
    pub evidence: Vec<InverseEvidence>,
    /// Agreement with `char_variety` at the same level, when both are conclusive.
    pub char_agrees: Option<bool>,
    pub char_variety: Option<CharVariety>,
}

fn top_coefficient(r: &DiffOp) -> Poly {
    let k = r.order().unwrap_or(0);
    r.coeff(&[k])
}

/// Attempts to invert each relation in `E^(l)` for `l` in `levels`.
pub fn micro_support_test(
    module: &CyclicModule,
    levels: std::ops::RangeInclusive<u32>,
    floor: i64,
    precision: Option<i64>,
    bounds: Option<Bounds>,
) -> Result<Vec<LevelSupport>> {
    let mut out = Vec::new();
    for l in levels {
        let pushed = module.push_to_level(l)?;
        let p = pushed.p;
        let theta = SymbolPoly::power_monomial(p, &[1], Poly::one(1));
        let mut generic = SupportVerdict::PersistsUpToWindow;
        let mut any_inconclusive = false;
        let mut degenerate: Option<FpPoly> = None;
        let mut evidence = Vec::new();
        for r in &pushed.relations {
            let c = top_coefficient(r);
            let cbar = poly_mod_p(&c, p);
            degenerate = Some(match degenerate {
                None => fp_monic(cbar.clone(), p),
                Some(d) => fp_gcd(&d, &cbar, p),
            });
            let chart = match c.as_monomial() {
                Some((e, v)) if padic::valuation(p, v) == Valuation::Finite(0) => {
                    Some(if e[0] == 0 { Chart::Affine } else { Chart::Torus })
                }
                _ => None,
            };
            let Some(chart) = chart else {
                any_inconclusive = true;
                evidence.push(InverseEvidence {
                    relation: r.to_string(),
                    chart: None,
                    outcome: format!("top coefficient {c} is not a unit monomial on any chart"),
                    residual_floor: None,
                    valuations: Vec::new(),
                });
                continue;
            };
            let loc = Localizer::new(&theta, l, l, chart)?;
            let op = MicroOp::from_diffop(r, &loc, Side::Left, floor)?;
            match try_invert(&op, floor, precision) {
                Ok(InvertOutcome::Inverted(inv)) => {
                    generic = SupportVerdict::Vanishes;
                    evidence.push(InverseEvidence {
                        relation: r.to_string(),
                        chart: Some(chart),
                        outcome: "inverted".into(),
                        residual_floor: Some(inv.residual_floor),
                        valuations: inv
                            .profile
                            .profile
                            .iter()
                            .map(|o| (o.order, o.min_valuation))
                            .collect(),
                    });
                }
                Ok(InvertOutcome::Failed(d)) => evidence.push(InverseEvidence {
                    relation: r.to_string(),
                    chart: Some(chart),
                    outcome: d.message,
                    residual_floor: None,
                    valuations: d
                        .profile
                        .profile
                        .iter()
                        .map(|o| (o.order, o.min_valuation))
                        .collect(),
                }),
                Err(e) => {
                    any_inconclusive = true;
                    evidence.push(InverseEvidence {
                        relation: r.to_string(),
                        chart: Some(chart),
                        outcome: e.to_string(),
                        residual_floor: None,
                        valuations: Vec::new(),
                    });
                }
            }
        }
        if generic != SupportVerdict::Vanishes && any_inconclusive {
            generic = SupportVerdict::Inconclusive;
        }
        // no relations: M = D and nothing degenerates to a proper subset
        let degenerate_fibers = degenerate.unwrap_or_default();
        let fibers = if degenerate_fibers.len() > 1 {
            SupportVerdict::SymbolVanishes
        } else {
            generic
        };
        let char_variety = match bounds {
            Some(b) => Some(char_variety(&pushed, b)?),
            None => None,
        };
        let char_agrees = char_variety
            .as_ref()
            .and_then(|cv| support_agrees(cv, generic, &degenerate_fibers, p));
        out.push(LevelSupport {
            level: l,
            generic,
            degenerate_fibers,
            fibers,
            evidence,
            char_agrees,
            char_variety,
        });
    }
    Ok(out)
}

/// Compare the punctured chart part of `Char` with the support verdicts.
fn support_agrees(cv: &CharVariety, generic: SupportVerdict, fibers: &FpPoly, p: u64) -> Option<bool> {
    // window evidence of persistence is not a certificate
    if !cv.complete || matches!(generic, SupportVerdict::Inconclusive | SupportVerdict::PersistsUpToWindow) {
        return None;
    }
    let char_generic_empty = cv.fibers.is_some();
    let generic_vanishes = generic == SupportVerdict::Vanishes;
    if char_generic_empty != generic_vanishes {
        return Some(false);
    }
    match &cv.fibers {
        None => Some(true),
        Some(f) if cv.class == CharClass::Empty => Some(fibers.len() <= 1 || f.len() <= 1),
        Some(f) => Some(fp_same_roots(f, fibers, p) || (f.len() <= 1 && fibers.len() <= 1)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub level: u32,
    pub char_variety: CharVariety,
    pub support: LevelSupport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub rows: Vec<StabilityRow>,
    /// Least probed level from which the `Char` column no longer changes
    /// (within the probed range, certificates complete).
    pub stable_from: Option<u32>,
    pub flags: Vec<String>,
}

pub fn stability_probe(
    module: &CyclicModule,
    mprime_max: u32,
    bounds: Bounds,
    floor: i64,
    precision: Option<i64>,
) -> Result<StabilityReport> {
    let mut rows = Vec::new();
    let mut flags = Vec::new();
    for l in module.level..=mprime_max {
        let mut sup = micro_support_test(module, l..=l, floor, precision, Some(bounds))?;
        let mut s = sup.remove(0);
        let cv = s.char_variety.take().expect("bounds given");
        if !cv.complete {
            flags.push(format!("level {l}: standard basis incomplete within bounds"));
        }
        if s.char_agrees == Some(false) {
            flags.push(format!("level {l}: Char and support verdicts disagree"));
        }
        rows.push(StabilityRow {
            level: l,
            char_variety: cv,
            support: s,
        });
    }
    let p = module.p;
    let mut stable_from = None;
    for i in (0..rows.len()).rev() {
        let last = &rows[rows.len() - 1].char_variety;
        let c = &rows[i].char_variety;
        if c.complete && c.same_set(last, p) {
            stable_from = Some(rows[i].level);
        } else {
            break;
        }
    }
    Ok(StabilityReport {
        rows,
        stable_from,
        flags,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub n: Option<u64>,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub p: u64,
    pub n_max: u64,
    pub test_set: Vec<String>,
    pub checks: Vec<Check>,
    pub all_passed: bool,
}

fn x_poly() -> Poly {
    Poly::var(1, 0)
}

fn x_pow(n: u64) -> Poly {
    Poly::monomial(1, vec![n as i64], BigRational::one())
}

fn deg(a: &Poly) -> Option<i64> {
    a.degree_in(0)
}

/// `f_0` test set: polynomials of degree `<= deg_bound` with coefficients
/// cycling through `0, 1, -1, p, 1/p, 1+p, p^-2, p^2`; the first is `0`.
pub fn counterexample_test_set(p: u64, deg_bound: u64, size: usize) -> Vec<Poly> {
    let pr = |e: i64| padic::p_pow_rational(p, e);
    let choices = [
        BigRational::zero(),
        BigRational::one(),
        -BigRational::one(),
        pr(1),
        pr(-1),
        BigRational::one() + pr(1),
        pr(-2),
        pr(2),
    ];
    let mut out = vec![Poly::zero(1)];
    let mut j = 1usize;
    while out.len() < size {
        let d = (j as u64) % (deg_bound + 1);
        let terms = (0..=d).map(|e| (vec![e as i64], choices[(j * 3 + e as usize * 5) % 8].clone()));
        let f = Poly::from_terms(1, terms);
        if !f.is_zero() && !out.contains(&f) {
            out.push(f);
        }
        j += 1;
        if j > 64 * size {
            break;
        }
    }
    out
}

/// Finite checks of the recurrence for `sum f_n d^[n] (d - x) = 1`, the
/// closed form of `(-1)^n f_n`, the norm identity and `d^n e` in `D/(d - x)`.
pub fn verify_counterexample(p: u64, n_max: u64, deg_bound: u64) -> Result<CounterexampleReport> {
    padic::check_prime(p)?;
    let x = x_poly();
    let mut checks = Vec::new();
    let n_max = n_max.max(1);

    // raw recurrence with f_0 symbolic: f_n = a_n + b_n f_0
    let mut a = vec![Poly::zero(1), Poly::from_int(1, -1)];
    let mut b = vec![Poly::one(1), x.neg()];
    for n in 1..n_max {
        let nn = BigRational::from_integer(BigInt::from(n));
        a.push(a[n as usize - 1].scale(&nn).sub(&x.mul(&a[n as usize])));
        b.push(b[n as usize - 1].scale(&nn).sub(&x.mul(&b[n as usize])));
    }
    // closed form: F_n = U_n + V_n f_0 with F_{n+1} = x F_n + n F_{n-1}
    let mut u = vec![Poly::zero(1), Poly::one(1)];
    let mut v = vec![Poly::one(1), x.clone()];
    for n in 1..n_max {
        let nn = BigRational::from_integer(BigInt::from(n));
        u.push(x.mul(&u[n as usize]).add(&u[n as usize - 1].scale(&nn)));
        v.push(x.mul(&v[n as usize]).add(&v[n as usize - 1].scale(&nn)));
    }
    for n in 1..=n_max {
        let i = n as usize;
        let sign = if n % 2 == 0 { Poly::one(1) } else { Poly::from_int(1, -1) };
        let matches = sign.mul(&a[i]) == u[i] && sign.mul(&b[i]) == v[i];
        let g = u[i].sub(&x_pow(n - 1));
        let h = v[i].sub(&x_pow(n));
        let g_ok = deg(&g).is_none_or(|d| d < n as i64 - 1);
        let h_ok = deg(&h).is_none_or(|d| d < n as i64);
        checks.push(Check {
            name: "closed-form".into(),
            n: Some(n),
            passed: matches && g_ok && h_ok,
            detail: format!("deg g_n = {:?}, deg h_n = {:?}", deg(&g), deg(&h)),
        });
    }
    // n f_{n-1} - x f_n - f_{n+1} = [n = 0]
    let mut rec_ok = true;
    for n in 0..n_max as usize {
        for (s, target) in [(&a, Poly::from_int(1, if n == 0 { 1 } else { 0 })), (&b, Poly::zero(1))] {
            let prev = if n == 0 {
                Poly::zero(1)
            } else {
                s[n - 1].scale(&BigRational::from_integer(BigInt::from(n)))
            };
            rec_ok &= prev.sub(&x.mul(&s[n])).sub(&s[n + 1]) == target;
        }
    }
    checks.push(Check {
        name: "recurrence".into(),
        n: Some(n_max),
        passed: rec_ok,
        detail: "coefficients of d^[n] in sum f_n d^[n] (d - x) - 1 vanish".into(),
    });

    let test_set = counterexample_test_set(p, deg_bound, 10);
    for f0 in &test_set {
        let v0 = f0.valuation(p).finite().map_or(0, |v| v.min(0));
        let vmax = padic::p_pow_rational(p, -v0);
        let (mut prev, mut cur) = (f0.clone(), Poly::from_int(1, -1).sub(&x.mul(f0)));
        let mut ok = true;
        let mut worst = String::new();
        for n in 1..=n_max {
            if n > 1 {
                let nn = BigRational::from_integer(BigInt::from(n - 1));
                let next = prev.scale(&nn).sub(&x.mul(&cur));
                prev = cur;
                cur = next;
            }
            let closed = u[n as usize].add(&v[n as usize].mul(f0));
            let sign = if n % 2 == 0 { BigRational::one() } else { -BigRational::one() };
            if cur.scale(&sign) != closed || cur.valuation(p) != Valuation::Finite(v0) {
                ok = false;
                worst = format!("fails at n = {n}");
                break;
            }
        }
        checks.push(Check {
            name: "norm".into(),
            n: Some(n_max),
            passed: ok,
            detail: format!(
                "f_0 = {f0}: |f_n| = {}{}",
                padic::rational_to_string(&vmax),
                if worst.is_empty() { String::new() } else { format!(", {worst}") }
            ),
        });
    }

    // d^n e = g_n e with g_{n+1} = g_n' + x g_n, against reduction of d^n mod D(d - x)
    let mut g = Poly::one(1);
    for n in 1..=n_max {
        g = g.derivative(0).add(&x.mul(&g));
        let r = reduce_modulo_d_minus_x(p, n)?;
        let lower = g.sub(&x_pow(n));
        let ok = r == g && deg(&lower).is_none_or(|d| d < n as i64);
        checks.push(Check {
            name: "d^n e".into(),
            n: Some(n),
            passed: ok,
            detail: format!("d^{n} e = ({g}) e"),
        });
    }
    let all_passed = checks.iter().all(|c| c.passed);
    Ok(CounterexampleReport {
        p,
        n_max,
        test_set: test_set.iter().map(|f| f.to_string()).collect(),
        checks,
        all_passed,
    })
}

/// `r` with `d^n = A (d - x) + r`, by repeatedly rewriting the top term.
fn reduce_modulo_d_minus_x(p: u64, n: u64) -> Result<Poly> {
    let xop = DiffOp::x(p, 0, 1, 0);
    let mut op = DiffOp::basis(p, 0, 1, vec![n]);
    loop {
        let Some(k) = op.order().filter(|&k| k > 0) else {
            return Ok(op.coeff(&[0]));
        };
        let a = op.coeff(&[k]);
        // a d^k = a d^(k-1) d  ==  a d^(k-1) x  modulo D(d - x)
        let lower = DiffOp::monomial(p, 0, vec![k - 1], a.clone());
        let top = DiffOp::monomial(p, 0, vec![k], a);
        op = op.sub(&top)?.add(&lower.multiply(&xop)?)?;
    }
}

/// Number of relations of each order, for reports.
pub fn relation_orders(module: &CyclicModule) -> BTreeMap<u64, usize> {
    let mut out = BTreeMap::new();
    for r in &module.relations {
        *out.entry(r.order().unwrap_or(0)).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(a: i64) -> BigRational {
        BigRational::from_integer(BigInt::from(a))
    }

    fn d_minus_x(p: u64) -> DiffOp {
        DiffOp::d(p, 0, 1, 0).sub(&DiffOp::x(p, 0, 1, 0)).unwrap()
    }

    fn module(p: u64, rel: Vec<DiffOp>) -> CyclicModule {
        CyclicModule::new(p, 0, rel, None).unwrap()
    }

    fn small() -> Bounds {
        Bounds {
            max_order: 5,
            max_xdeg: 5,
            precision: 10,
        }
    }

    #[test]
    fn standard_basis_examples() {
        let sb = order_standard_basis(&module(2, vec![d_minus_x(2)]), small()).unwrap();
        assert!(sb.complete);
        assert!(sb.leading.iter().all(|s| s.order >= 1));
        assert!(sb.leading.contains(&LeadingSymbol {
            order: 1,
            coefficient: vec![1]
        }));
        let x = DiffOp::x(3, 0, 1, 0);
        let cv = char_variety(&module(3, vec![x]), small()).unwrap();
        assert_eq!(cv.class, CharClass::FiberSet);
        assert_eq!(cv.fibers, Some(vec![0, 1]));
        let one = DiffOp::one(2, 0, 1);
        assert_eq!(char_variety(&module(2, vec![one]), small()).unwrap().class, CharClass::Empty);
    }

    #[test]
    fn char_examples() {
        let d = DiffOp::d(2, 0, 1, 0);
        assert_eq!(
            char_variety(&module(2, vec![d_minus_x(2)]), small()).unwrap().class,
            CharClass::ZeroSection
        );
        assert_eq!(char_variety(&module(2, vec![d.clone()]), small()).unwrap().class, CharClass::ZeroSection);
        let xd = DiffOp::x(2, 0, 1, 0).multiply(&d).unwrap();
        let cv = char_variety(&module(2, vec![xd.sub(&DiffOp::one(2, 0, 1)).unwrap()]), small()).unwrap();
        assert_eq!(cv.class, CharClass::ZeroSectionAndFibers);
        assert_eq!(cv.fibers, Some(vec![0, 1]));
        assert!(cv.complete);
        assert_eq!(char_variety(&module(2, vec![]), small()).unwrap().class, CharClass::WholeSpace);
    }

    #[test]
    fn primitive_relations() {
        let r = d_minus_x(3).scale(&q(9));
        let m = module(3, vec![r, DiffOp::zero(3, 0, 1)]);
        assert_eq!(m.relations(), &[d_minus_x(3)]);
    }

    #[test]
    fn support_examples() {
        let m = module(2, vec![d_minus_x(2)]);
        let s = micro_support_test(&m, 0..=1, -12, Some(12), Some(small())).unwrap();
        assert_eq!(s[0].generic, SupportVerdict::Vanishes);
        assert_eq!(s[0].char_agrees, Some(true));
        assert_eq!(s[1].generic, SupportVerdict::PersistsUpToWindow);
        let one = module(2, vec![DiffOp::one(2, 0, 1)]);
        let s = micro_support_test(&one, 0..=0, -6, None, None).unwrap();
        assert_eq!(s[0].generic, SupportVerdict::Vanishes);
    }

    #[test]
    fn degenerate_fibers_for_x_d() {
        let xd = DiffOp::x(3, 0, 1, 0).multiply(&DiffOp::d(3, 0, 1, 0)).unwrap();
        let m = module(3, vec![xd.sub(&DiffOp::one(3, 0, 1).scale(&q(2))).unwrap()]);
        let s = micro_support_test(&m, 0..=0, -8, None, Some(small())).unwrap();
        assert_eq!(s[0].generic, SupportVerdict::Vanishes);
        assert_eq!(s[0].degenerate_fibers, vec![0, 1]);
        assert_eq!(s[0].fibers, SupportVerdict::SymbolVanishes);
        assert_eq!(s[0].char_agrees, Some(true));
    }

    #[test]
    fn counterexample_suite() {
        let r = verify_counterexample(2, 12, 2).unwrap();
        assert!(r.all_passed, "{:?}", r.checks.iter().filter(|c| !c.passed).collect::<Vec<_>>());
        assert_eq!(r.test_set.len(), 10);
        let d3 = r.checks.iter().find(|c| c.name == "d^n e" && c.n == Some(3)).unwrap();
        assert_eq!(d3.detail, "d^3 e = (x1^3 + 3*x1) e");
    }

    #[test]
    fn fp_helpers() {
        assert_eq!(fp_gcd(&[0, 0, 1], &[0, 1, 1], 2), vec![0, 1]);
        assert!(fp_same_roots(&[0, 0, 1], &[0, 1], 3));
        assert!(!fp_same_roots(&[1, 1], &[0, 1], 3));
        assert_eq!(fp_poly_to_string(&[1, 0, 2]), "2*x^2 + 1");
    }

    #[test]
    fn minimal_generators_drop_multiples() {
        let g = |order, coefficient: Vec<u64>| LeadingSymbol { order, coefficient };
        let gens = vec![g(2, vec![1]), g(1, vec![0, 1]), g(1, vec![0, 0, 1]), g(3, vec![0, 1])];
        assert_eq!(minimal_generators(2, &gens), vec![g(1, vec![0, 1]), g(2, vec![1])]);
        assert_eq!(g(2, vec![1]).to_string(), "xi[2]");
    }

    #[test]
    fn stability_of_x_d_minus_lambda() {
        let xd = DiffOp::x(2, 0, 1, 0).multiply(&DiffOp::d(2, 0, 1, 0)).unwrap();
        let m = module(2, vec![xd.sub(&DiffOp::one(2, 0, 1)).unwrap()]);
        let rep = stability_probe(&m, 1, small(), -8, None).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert_eq!(rep.rows[0].char_variety.class, CharClass::ZeroSectionAndFibers);
    }
}
