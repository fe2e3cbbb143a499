use microdiff::charvar::{order_standard_basis, Bounds, CyclicModule};
use microdiff::diffop::Side;
use microdiff::linalg::FpEliminator;
use microdiff::microloc::{
    membership_query, micro_multiply, normcalc_bounds, normcalc_observed, psi_level_lower,
    Chart, Localizer, MembershipVerdict, MicroOp,
};
use microdiff::padic::{binomial, factorial, level_quotient};
use microdiff::{DiffOp, Poly, SymbolPoly};
use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;

fn q(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

/// Terms `(k, e, c)` meaning `c x^e d^<m><k>`.
type Terms = Vec<(Vec<u64>, Vec<i64>, i64)>;

fn terms(nvars: usize, max_k: u64, max_e: i64, len: usize) -> impl Strategy<Value = Terms> {
    prop::collection::vec(
        (
            prop::collection::vec(0..=max_k, nvars),
            prop::collection::vec(0..=max_e, nvars),
            -4i64..=4,
        ),
        1..=len,
    )
}

fn build(p: u64, level: u32, nvars: usize, t: &Terms) -> DiffOp {
    let mut d = DiffOp::zero(p, level, nvars);
    for (k, e, c) in t {
        d.add_term(k.clone(), Poly::monomial(nvars, e.clone(), q(*c)));
    }
    d
}

/// `d^<m><k> x^e = q! C(e, k) x^(e-k)` per variable.
fn apply(d: &DiffOp, f: &Poly) -> Poly {
    let (p, m, n) = (d.prime(), d.level(), d.nvars());
    let mut out = Poly::zero(n);
    for (k, a) in d.terms() {
        let mut image = Poly::zero(n);
        for (e, c) in f.terms() {
            let mut c = c.clone();
            let mut e2 = e.clone();
            for j in 0..n {
                let (kj, ej) = (k[j], e[j]);
                if ej < kj as i64 {
                    c = q(0);
                    break;
                }
                let fac = factorial(level_quotient(p, m, kj)) * binomial(ej as u64, kj);
                c *= BigRational::from_integer(fac);
                e2[j] -= kj as i64;
            }
            image.add_term(e2, c);
        }
        out.add_assign(&a.mul(&image));
    }
    out
}

fn all_monomials(nvars: usize, deg: i64) -> Vec<Poly> {
    let mut out = Vec::new();
    let mut idx = vec![0i64; nvars];
    loop {
        out.push(Poly::monomial(nvars, idx.clone(), q(1)));
        let mut j = 0;
        loop {
            if j == nvars {
                return out;
            }
            idx[j] += 1;
            if idx[j] <= deg {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn product_acts_as_composition(
        p in prop::sample::select(vec![2u64, 3]),
        level in 0u32..=2,
        nvars in 1usize..=2,
        a in terms(2, 4, 2, 3),
        b in terms(2, 4, 2, 3),
    ) {
        let trim = |t: &Terms| -> Terms {
            t.iter().map(|(k, e, c)| (k[..nvars].to_vec(), e[..nvars].to_vec(), *c)).collect()
        };
        let (a, b) = (build(p, level, nvars, &trim(&a)), build(p, level, nvars, &trim(&b)));
        let ab = a.multiply(&b).unwrap();
        for f in all_monomials(nvars, 9) {
            prop_assert_eq!(apply(&ab, &f), apply(&a, &apply(&b, &f)));
        }
    }

    #[test]
    fn multiplication_is_associative(
        p in prop::sample::select(vec![2u64, 3, 5]),
        level in 0u32..=2,
        a in terms(1, 5, 3, 3),
        b in terms(1, 5, 3, 3),
        c in terms(1, 5, 3, 3),
    ) {
        let (a, b, c) = (build(p, level, 1, &a), build(p, level, 1, &b), build(p, level, 1, &c));
        let left = a.multiply(&b).unwrap().multiply(&c).unwrap();
        let right = a.multiply(&b.multiply(&c).unwrap()).unwrap();
        prop_assert_eq!(left, right);
    }

    #[test]
    fn leibniz_rule(
        p in prop::sample::select(vec![2u64, 3]),
        level in 0u32..=2,
        k in 0u64..=12,
        a in terms(1, 0, 6, 3),
    ) {
        // d<k> a = sum_j q_k!/(q_j! q_{k-j}!) d<j>(a) d<k-j>
        let coef = build(p, level, 1, &a).coeff(&[0]);
        let lhs = DiffOp::basis(p, level, 1, vec![k])
            .multiply(&DiffOp::coefficient(p, level, coef.clone()))
            .unwrap();
        let mut rhs = DiffOp::zero(p, level, 1);
        let qf = |i: u64| BigRational::from_integer(factorial(level_quotient(p, level, i)));
        for j in 0..=k {
            let c = qf(k) / (qf(j) * qf(k - j));
            let dja = apply(&DiffOp::basis(p, level, 1, vec![j]), &coef);
            rhs.add_term(vec![k - j], dja.scale(&c));
        }
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn level_map_is_a_homomorphism(
        p in prop::sample::select(vec![2u64, 3]),
        level in 0u32..=1,
        up in 1u32..=2,
        a in terms(1, 6, 2, 3),
        b in terms(1, 6, 2, 3),
    ) {
        let target = level + up;
        let (a, b) = (build(p, level, 1, &a), build(p, level, 1, &b));
        let lhs = a.multiply(&b).unwrap().level_map_phi(target).unwrap();
        let rhs = a.level_map_phi(target).unwrap().multiply(&b.level_map_phi(target).unwrap()).unwrap();
        prop_assert_eq!(&lhs, &rhs);
        if a.is_integral() {
            prop_assert!(a.level_map_phi(target).unwrap().is_integral());
        }
    }
}

fn xi(p: u64) -> SymbolPoly {
    SymbolPoly::power_monomial(p, &[1], Poly::one(1))
}

fn micro(loc: &Localizer, side: Side, floor: i64, t: &[(u64, u64, i64, i64)]) -> MicroOp {
    MicroOp::from_terms(
        loc,
        side,
        t.iter()
            .map(|&(k, i, e, c)| ((vec![k], i), Poly::monomial(1, vec![e], q(c)))),
        floor,
    )
    .unwrap()
}

fn micro_terms() -> impl Strategy<Value = Vec<(u64, u64, i64, i64)>> {
    prop::collection::vec((0u64..=4, 0u64..=3, 0i64..=2, -3i64..=3), 1..=4)
}

fn side() -> impl Strategy<Value = Side> {
    prop::sample::select(vec![Side::Left, Side::Right])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn window_refinement(
        p in prop::sample::select(vec![2u64, 3]),
        level in 0u32..=1,
        s in side(),
        a in micro_terms(),
        b in micro_terms(),
    ) {
        let loc = Localizer::new(&xi(p), level, level, Chart::Affine).unwrap();
        let prod = |floor| micro_multiply(&micro(&loc, s, floor, &a), &micro(&loc, s, floor, &b)).unwrap();
        let coarse = prod(-6);
        let fine = prod(-12);
        let cut = fine.truncate(coarse.floor());
        prop_assert!(cut.terms().eq(coarse.terms()));
        // precision refinement
        let n = 3;
        prop_assert!(fine.with_precision(Some(n + 2)).with_precision(Some(n)).terms().eq(fine.with_precision(Some(n)).terms()));
    }

    #[test]
    fn presentation_round_trip(
        p in prop::sample::select(vec![2u64, 3]),
        level in 0u32..=1,
        a in micro_terms(),
    ) {
        let loc = Localizer::new(&xi(p), level, level, Chart::Affine).unwrap();
        let x = micro(&loc, Side::Left, -10, &a);
        let back = x.convert_presentation(Side::Right).unwrap().convert_presentation(Side::Left).unwrap();
        let floor = back.floor();
        prop_assert!(back.terms().eq(x.truncate(floor).terms()));
    }

    #[test]
    fn psi_is_functorial(
        p in prop::sample::select(vec![2u64, 3]),
        s in side(),
        a in micro_terms(),
    ) {
        let loc = Localizer::new(&xi(p), 2, 2, Chart::Affine).unwrap();
        let x = micro(&loc, s, -8, &a);
        let direct = psi_level_lower(&x, 0).unwrap();
        let stepwise = psi_level_lower(&psi_level_lower(&x, 1).unwrap(), 0).unwrap();
        prop_assert_eq!(direct.terms().collect::<Vec<_>>(), stepwise.terms().collect::<Vec<_>>());
        // psi preserves each term's order
        for ((k, i), _) in x.terms() {
            prop_assert_eq!(x.term_order(k, *i), direct.term_order(k, *i));
        }
    }

    #[test]
    fn membership_is_monotone_in_m(
        p in prop::sample::select(vec![2u64, 3]),
        a in micro_terms(),
    ) {
        let loc = Localizer::new(&xi(p), 2, 2, Chart::Affine).unwrap();
        let x = micro(&loc, Side::Left, -8, &a);
        let at0 = membership_query(&x, 0, 2).unwrap().verdict;
        let at1 = membership_query(&x, 1, 2).unwrap().verdict;
        if at0 == MembershipVerdict::InEmm {
            prop_assert_eq!(at1, MembershipVerdict::InEmm);
        }
        let scaled = x.scale(&q(p as i64));
        if at0 == MembershipVerdict::InEmm {
            prop_assert_eq!(membership_query(&scaled, 0, 2).unwrap().verdict, MembershipVerdict::InEmm);
        }
    }

    #[test]
    fn nonpositive_orders_stay_integral_under_psi(
        p in prop::sample::select(vec![2u64, 3]),
        mprime in 1u32..=2,
        a in prop::collection::vec((0u64..=12, 1u64..=3, 0i64..=2, -3i64..=3), 1..=5),
    ) {
        let loc = Localizer::new(&xi(p), mprime, mprime, Chart::Affine).unwrap();
        let x = micro(&loc, Side::Left, -40, &a).truncate(-40);
        let x = MicroOp::from_terms(
            &loc,
            Side::Left,
            x.terms().filter(|((k, i), _)| x.term_order(k, *i) <= 0).map(|(key, b)| (key.clone(), b.clone())),
            -40,
        ).unwrap();
        prop_assume!(x.is_integral());
        for m in 0..mprime {
            prop_assert!(psi_level_lower(&x, m).unwrap().is_integral());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn normcalc_bounds_dominate_scan(
        p in prop::sample::select(vec![2u64, 3]),
        m in 0u32..=1,
        extra in 0u32..=1,
        k in -4i64..=12,
    ) {
        let mprime = m + extra;
        let b = normcalc_bounds(1, p, m, mprime, k).unwrap();
        let (oa, ob) = normcalc_observed(1, p, m, mprime, k, 2, 1);
        prop_assert!(oa <= b.a_k, "a: observed {} > {}", oa, b.a_k);
        prop_assert!(ob <= b.b_k, "b: observed {} > {}", ob, b.b_k);
    }

    #[test]
    fn standard_basis_contains_relation_symbols(
        p in prop::sample::select(vec![2u64, 3]),
        t in terms(1, 3, 2, 3),
    ) {
        let r = build(p, 0, 1, &t);
        prop_assume!(!r.is_zero());
        let module = CyclicModule::new(p, 0, vec![r], None).unwrap();
        let bounds = Bounds { max_order: 6, max_xdeg: 6, precision: 20 };
        let sb = order_standard_basis(&module, bounds).unwrap();
        prop_assert!(sb.certificate.generators_in_span);
        let Some(rel) = module.relations().first() else { return Ok(()); };
        let k = rel.order().unwrap();
        let top: Vec<u64> = {
            let c = rel.coeff(&[k]);
            (0..=bounds.max_xdeg as i64)
                .map(|e| microdiff::linalg::rational_residue(&c.coeff(&[e]), p))
                .collect()
        };
        // the relation's own symbol is in the span of the order-k leading symbols
        if top.iter().any(|&v| v != 0) {
            let mut el = FpEliminator::new(p, top.len(), false);
            for s in sb.leading.iter().filter(|s| s.order == k) {
                let mut row = s.coefficient.clone();
                row.resize(top.len(), 0);
                el.insert(&row);
            }
            prop_assert!(el.contains(&top));
        }
    }
}
