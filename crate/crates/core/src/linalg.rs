//! Exact dense linear algebra over the rationals.
//!
//! Small helper used by the transition solver and the class reduction:
//! deterministic row reduction (first nonzero column wins, no pivoting
//! heuristics) so that reduced representatives are canonical.

use num::{One, Zero};

use crate::series::Q;

/// Reduced row echelon form in place; returns the pivot column of each row.
#[allow(clippy::needless_range_loop)]
pub fn rref(rows: &mut Vec<Vec<Q>>) -> Vec<usize> {
    let nrows = rows.len();
    if nrows == 0 {
        return Vec::new();
    }
    let ncols = rows[0].len();
    let mut pivots = Vec::new();
    let mut r = 0usize;
    for c in 0..ncols {
        let mut sel = None;
        for i in r..nrows {
            if !rows[i][c].is_zero() {
                sel = Some(i);
                break;
            }
        }
        let Some(sel) = sel else { continue };
        rows.swap(r, sel);
        let inv = Q::one() / rows[r][c].clone();
        for x in rows[r].iter_mut() {
            *x = x.clone() * inv.clone();
        }
        for i in 0..nrows {
            if i != r && !rows[i][c].is_zero() {
                let f = rows[i][c].clone();
                for j in 0..ncols {
                    let delta = f.clone() * rows[r][j].clone();
                    rows[i][j] = rows[i][j].clone() - delta;
                }
            }
        }
        pivots.push(c);
        r += 1;
        if r == nrows {
            break;
        }
    }
    rows.truncate(r);
    pivots
}

/// Reduce `v` modulo the row space of `basis` (which is RREF'd in place).
/// The result is the canonical representative of `v` in the quotient.
pub fn reduce_mod_rowspace(basis: &mut Vec<Vec<Q>>, v: &[Q]) -> Vec<Q> {
    let pivots = rref(basis);
    let mut out = v.to_vec();
    for (row, &p) in basis.iter().zip(&pivots) {
        if out[p].is_zero() {
            continue;
        }
        let f = out[p].clone();
        for j in 0..out.len() {
            let delta = f.clone() * row[j].clone();
            out[j] = out[j].clone() - delta;
        }
    }
    out
}

/// Solve `A x = b` exactly. Returns the particular solution with all free
/// variables set to zero (the minimal-support canonical choice) together
/// with a basis of the kernel, or `None` when inconsistent.
pub fn solve(a: &[Vec<Q>], b: &[Q]) -> Option<(Vec<Q>, Vec<Vec<Q>>)> {
    let nrows = a.len();
    let ncols = if nrows > 0 { a[0].len() } else { 0 };
    let mut aug: Vec<Vec<Q>> = a
        .iter()
        .zip(b)
        .map(|(row, rhs)| {
            let mut r = row.clone();
            r.push(rhs.clone());
            r
        })
        .collect();
    let pivots = rref(&mut aug);
    // inconsistent if a pivot lands in the rhs column
    if pivots.contains(&ncols) {
        return None;
    }
    let mut x = vec![Q::zero(); ncols];
    for (row, &p) in aug.iter().zip(&pivots) {
        x[p] = row[ncols].clone();
    }
    let pivot_set: std::collections::BTreeSet<usize> = pivots.iter().cloned().collect();
    let mut kernel = Vec::new();
    for free in 0..ncols {
        if pivot_set.contains(&free) {
            continue;
        }
        let mut k = vec![Q::zero(); ncols];
        k[free] = Q::one();
        for (row, &p) in aug.iter().zip(&pivots) {
            k[p] = -row[free].clone();
        }
        kernel.push(k);
    }
    Some((x, kernel))
}
