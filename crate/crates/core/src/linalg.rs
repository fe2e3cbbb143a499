//! Exact linear algebra: rational solving, `F_p` elimination and
//! `p`-saturation of lattices over `Z_(p)`.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

use crate::padic;

pub fn mod_inv(a: u64, p: u64) -> u64 {
    let (mut t, mut new_t) = (0i128, 1i128);
    let (mut r, mut new_r) = (p as i128, (a % p) as i128);
    while new_r != 0 {
        let q = r / new_r;
        (t, new_t) = (new_t, t - q * new_t);
        (r, new_r) = (new_r, r - q * new_r);
    }
    assert_eq!(r, 1, "{a} is not invertible mod {p}");
    t.rem_euclid(p as i128) as u64
}

pub fn residue(x: &BigInt, p: u64) -> u64 {
    x.mod_floor(&BigInt::from(p)).to_u64().unwrap()
}

/// Residue of a p-integral rational modulo `p`.
pub fn rational_residue(x: &BigRational, p: u64) -> u64 {
    let n = residue(x.numer(), p);
    let d = residue(x.denom(), p);
    n * mod_inv(d, p) % p
}

/// Incremental row reduction over `F_p`, optionally tracking each pivot row
/// as a combination of the inserted rows.
#[derive(Debug, Clone)]
pub struct FpEliminator {
    p: u64,
    ncols: usize,
    pivots: Vec<(usize, Vec<u64>, Vec<u64>)>,
    inserted: usize,
    track: bool,
}

/// Outcome of inserting a row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Insert {
    /// New pivot at the given column.
    Pivot(usize),
    /// Dependent: combination of inserted rows (this one has coefficient 1).
    Dependent(Vec<u64>),
}

impl FpEliminator {
    pub fn new(p: u64, ncols: usize, track: bool) -> Self {
        FpEliminator {
            p,
            ncols,
            pivots: Vec::new(),
            inserted: 0,
            track,
        }
    }

    pub fn rank(&self) -> usize {
        self.pivots.len()
    }

    fn reduce(&self, row: &mut [u64], combo: &mut Vec<u64>) {
        let p = self.p;
        for (col, prow, pcombo) in &self.pivots {
            let f = row[*col];
            if f == 0 {
                continue;
            }
            for (a, b) in row.iter_mut().zip(prow) {
                *a = (*a + (p - f) * b) % p;
            }
            if self.track {
                if combo.len() < pcombo.len() {
                    combo.resize(pcombo.len(), 0);
                }
                for (a, b) in combo.iter_mut().zip(pcombo) {
                    *a = (*a + (p - f) * b) % p;
                }
            }
        }
    }

    /// True when `row` lies in the span of the inserted rows.
    pub fn contains(&self, row: &[u64]) -> bool {
        let mut r = row.to_vec();
        let p = self.p;
        for (col, prow, _) in &self.pivots {
            let f = r[*col];
            if f != 0 {
                for (a, b) in r.iter_mut().zip(prow) {
                    *a = (*a + (p - f) * b) % p;
                }
            }
        }
        r.iter().all(|&x| x == 0)
    }

    pub fn insert(&mut self, row: &[u64]) -> Insert {
        assert_eq!(row.len(), self.ncols);
        let idx = self.inserted;
        self.inserted += 1;
        let mut r: Vec<u64> = row.iter().map(|x| x % self.p).collect();
        let mut combo = if self.track {
            let mut c = vec![0; idx + 1];
            c[idx] = 1;
            c
        } else {
            Vec::new()
        };
        self.reduce(&mut r, &mut combo);
        match r.iter().position(|&x| x != 0) {
            None => {
                combo.resize(idx + 1, 0);
                Insert::Dependent(combo)
            }
            Some(col) => {
                let inv = mod_inv(r[col], self.p);
                for a in r.iter_mut() {
                    *a = *a * inv % self.p;
                }
                for a in combo.iter_mut() {
                    *a = *a * inv % self.p;
                }
                self.pivots.push((col, r, combo));
                Insert::Pivot(col)
            }
        }
    }

    /// Fully reduced echelon rows with their combinations, sorted by pivot column.
    pub fn reduced_rows(&self) -> Vec<(usize, Vec<u64>, Vec<u64>)> {
        let p = self.p;
        let mut rows = self.pivots.clone();
        rows.sort_by_key(|r| r.0);
        let n = rows.len();
        for i in (0..n).rev() {
            let (col, prow, pcombo) = rows[i].clone();
            for row in rows.iter_mut().take(i) {
                let f = row.1[col];
                if f == 0 {
                    continue;
                }
                for (a, b) in row.1.iter_mut().zip(&prow) {
                    *a = (*a + (p - f) * b) % p;
                }
                if row.2.len() < pcombo.len() {
                    row.2.resize(pcombo.len(), 0);
                }
                for (a, b) in row.2.iter_mut().zip(&pcombo) {
                    *a = (*a + (p - f) * b) % p;
                }
            }
        }
        rows
    }
}

/// Sparse row: column index to entry.
pub type SparseRow = BTreeMap<usize, BigRational>;

/// Reduction mod `p` of the saturation `span_Q(rows) ∩ Z_(p)^n`.
///
/// Elimination over the valuation ring with a pivot of minimal valuation
/// among all remaining entries; every entry of the pivot row is then
/// divisible by the pivot's power of `p`, and the divided rows are
/// unit-triangular in their pivot columns. Entries must be `p`-integral.
/// Returns `(pivot column, divided row)` pairs.
pub fn saturated_reduction(p: u64, rows: Vec<SparseRow>) -> Vec<(usize, SparseRow)> {
    let mut active: Vec<BTreeMap<usize, (BigRational, i64)>> = rows
        .into_iter()
        .map(|r| {
            r.into_iter()
                .filter(|(_, v)| !v.is_zero())
                .map(|(c, v)| {
                    let val = padic::valuation(p, &v).finite().unwrap();
                    (c, (v, val))
                })
                .collect::<BTreeMap<_, _>>()
        })
        .filter(|r| !r.is_empty())
        .collect();
    let mut out = Vec::new();
    while !active.is_empty() {
        let mut best: Option<(i64, usize, usize)> = None;
        for (ri, row) in active.iter().enumerate() {
            for (&c, (_, val)) in row {
                if best.is_none_or(|(bv, bc, br)| (*val, c, ri) < (bv, bc, br)) {
                    best = Some((*val, c, ri));
                }
            }
        }
        let (e, c, ri) = best.unwrap();
        let pivot_row = active.swap_remove(ri);
        let pivot = pivot_row[&c].0.clone();
        for row in active.iter_mut() {
            let Some((a, _)) = row.get(&c) else { continue };
            let f = a / &pivot;
            for (&col, (v, _)) in &pivot_row {
                let cur = row
                    .remove(&col)
                    .map(|x| x.0)
                    .unwrap_or_else(BigRational::zero);
                let nv = cur - &f * v;
                if !nv.is_zero() {
                    let val = padic::valuation(p, &nv).finite().unwrap();
                    row.insert(col, (nv, val));
                }
            }
        }
        active.retain(|r| !r.is_empty());
        let scale = padic::p_pow_rational(p, -e);
        let divided: SparseRow = pivot_row
            .into_iter()
            .map(|(col, (v, _))| (col, v * &scale))
            .collect();
        out.push((c, divided));
    }
    out
}

/// Residues mod `p` of a `p`-integral sparse row, as a dense vector.
pub fn dense_residues(p: u64, row: &SparseRow, ncols: usize) -> Vec<u64> {
    let mut out = vec![0; ncols];
    for (&c, v) in row {
        out[c] = rational_residue(v, p);
    }
    out
}

/// Some solution of `A x = b` over `Q`, free variables set to zero.
pub fn solve_rational(a: &[Vec<BigRational>], b: &[BigRational]) -> Option<Vec<BigRational>> {
    let nrows = a.len();
    if nrows == 0 {
        return Some(Vec::new());
    }
    let ncols = a[0].len();
    let mut m: Vec<Vec<BigRational>> = a
        .iter()
        .zip(b)
        .map(|(r, bi)| {
            let mut row = r.clone();
            row.push(bi.clone());
            row
        })
        .collect();
    let mut pivot_cols = Vec::new();
    let mut r = 0;
    for c in 0..ncols {
        let Some(pr) = (r..nrows).find(|&i| !m[i][c].is_zero()) else {
            continue;
        };
        m.swap(r, pr);
        let inv = m[r][c].recip();
        for v in m[r].iter_mut() {
            *v *= &inv;
        }
        let pivot_row = m[r].clone();
        for (i, row) in m.iter_mut().enumerate() {
            if i != r && !row[c].is_zero() {
                let f = row[c].clone();
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= &f * pv;
                }
            }
        }
        pivot_cols.push(c);
        r += 1;
        if r == nrows {
            break;
        }
    }
    for row in m.iter().skip(r) {
        if !row[ncols].is_zero() {
            return None;
        }
    }
    let mut x = vec![BigRational::zero(); ncols];
    for (i, &c) in pivot_cols.iter().enumerate() {
        x[c] = m[i][ncols].clone();
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(x: i64) -> BigRational {
        BigRational::from_integer(BigInt::from(x))
    }

    #[test]
    fn inverses() {
        for p in [2u64, 3, 5, 7] {
            for a in 1..p {
                assert_eq!(a * mod_inv(a, p) % p, 1);
            }
        }
    }

    fn row(v: &[i64]) -> SparseRow {
        v.iter()
            .enumerate()
            .filter(|(_, &x)| x != 0)
            .map(|(i, &x)| (i, q(x)))
            .collect()
    }

    fn reduce(p: u64, rows: &[&[i64]], n: usize) -> Vec<Vec<u64>> {
        let sat = saturated_reduction(p, rows.iter().map(|r| row(r)).collect());
        let mut out: Vec<Vec<u64>> = sat
            .into_iter()
            .map(|(_, r)| dense_residues(p, &r, n))
            .collect();
        out.sort();
        out
    }

    #[test]
    fn saturation_recovers_divided_row() {
        // (1, 3) - (1, 1) = (0, 2), so (0, 1) lies in the saturation.
        let r = reduce(2, &[&[1, 1], &[1, 3]], 2);
        let mut e = FpEliminator::new(2, 2, false);
        for v in &r {
            e.insert(v);
        }
        assert_eq!(e.rank(), 2);
        assert!(e.contains(&[0, 1]));
    }

    #[test]
    fn saturation_drops_exact_dependencies() {
        assert_eq!(reduce(2, &[&[2, 4], &[1, 2]], 2), vec![vec![1, 0]]);
        assert_eq!(
            reduce(3, &[&[3, 0, 3], &[0, 9, 0]], 3),
            vec![vec![0, 1, 0], vec![1, 0, 1]]
        );
    }

    #[test]
    fn rational_solve() {
        let a = vec![vec![q(1), q(2)], vec![q(2), q(4)]];
        assert_eq!(solve_rational(&a, &[q(3), q(6)]), Some(vec![q(3), q(0)]));
        assert_eq!(solve_rational(&a, &[q(3), q(7)]), None);
    }

    #[test]
    fn echelon_tracking() {
        let mut e = FpEliminator::new(3, 3, true);
        assert_eq!(e.insert(&[1, 2, 0]), Insert::Pivot(0));
        assert_eq!(e.insert(&[0, 1, 1]), Insert::Pivot(1));
        assert!(e.contains(&[1, 0, 1]));
        match e.insert(&[1, 0, 1]) {
            Insert::Dependent(c) => assert_eq!(c, vec![2, 2, 1]),
            other => panic!("unexpected {other:?}"),
        }
    }
}
