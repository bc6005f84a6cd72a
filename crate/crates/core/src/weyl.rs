//! The homogeneous Weyl algebra with normal-ordered arithmetic.
//!
//! Generators `x_1..x_n, y_1..y_n, h` subject to
//!
//! ```text
//! [x_i, x_j] = 0 = [y_i, y_j],    [y_j, x_i] = delta_ij h,    h central.
//! ```
//!
//! Every element is stored normal-ordered (all `x` factors left of all `y`
//! factors) as a sparse table keyed by `(x-multi-index, y-multi-index,
//! h-power)`. Powers of `h` down to `-1` are allowed, which is enough to
//! house `h^-1 D` and canonical representatives of its quotient by central
//! constants. The grading assigns degree 1 to the generators of the
//! symplectic vector space and degree 2 to `h`.
//!
//! The quadratic embedding of `sp(2n)` uses matrices acting on column
//! vectors in the ordered basis `(x_1..x_n, y_1..y_n)`; with that convention
//! `sigma` is a Lie algebra homomorphism and `[sigma(a), w] = a(w)` holds on
//! generators (both facts are property-tested, not assumed).

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use num::{BigInt, One, Signed, Zero};

use crate::error::{Error, Result};
use crate::parse::parse_rational;
use crate::series::{Mono, Q, ScalarSeries, Validity, Var};

/// Most negative h-power a Weyl element may carry (elements of `h^-1 D`).
pub const WEYL_HBAR_FLOOR: i32 = -1;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct WeylMono {
    pub xs: Vec<u32>,
    pub ys: Vec<u32>,
    pub hpow: i32,
}

impl WeylMono {
    pub fn word_degree(&self) -> i64 {
        self.xs.iter().chain(self.ys.iter()).map(|&e| e as i64).sum()
    }

    /// Filtration degree `|a| + |b| + 2k`.
    pub fn filtration_degree(&self) -> i64 {
        self.word_degree() + 2 * self.hpow as i64
    }
}

impl Ord for WeylMono {
    fn cmp(&self, other: &Self) -> Ordering {
        self.word_degree()
            .cmp(&other.word_degree())
            .then_with(|| self.xs.cmp(&other.xs))
            .then_with(|| self.ys.cmp(&other.ys))
            .then_with(|| self.hpow.cmp(&other.hpow))
    }
}

impl PartialOrd for WeylMono {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Normal-ordered element of the homogeneous Weyl algebra (or `h^-1 D`).
#[derive(Clone, Debug)]
pub struct WeylElement {
    n: usize,
    validity: Validity,
    terms: BTreeMap<WeylMono, Q>,
}

impl PartialEq for WeylElement {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.terms == other.terms
    }
}

impl Eq for WeylElement {}

fn binomial(n: u32, k: u32) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let mut num = BigInt::one();
    let mut den = BigInt::one();
    for i in 0..k {
        num *= BigInt::from(n - i);
        den *= BigInt::from(i + 1);
    }
    num / den
}

fn factorial(k: u32) -> BigInt {
    let mut f = BigInt::one();
    for i in 1..=k {
        f *= BigInt::from(i);
    }
    f
}

impl WeylElement {
    pub fn zero(n: usize, validity: Validity) -> WeylElement {
        WeylElement { n, validity, terms: BTreeMap::new() }
    }

    pub fn constant(n: usize, validity: Validity, c: Q) -> WeylElement {
        let mut e = WeylElement::zero(n, validity);
        let _ = e.insert(WeylMono { xs: vec![0; n], ys: vec![0; n], hpow: 0 }, c);
        e
    }

    pub fn one(n: usize, validity: Validity) -> WeylElement {
        WeylElement::constant(n, validity, Q::one())
    }

    pub fn x(n: usize, i: usize, validity: Validity) -> WeylElement {
        let mut xs = vec![0; n];
        xs[i] = 1;
        let mut e = WeylElement::zero(n, validity);
        let _ = e.insert(WeylMono { xs, ys: vec![0; n], hpow: 0 }, Q::one());
        e
    }

    pub fn y(n: usize, i: usize, validity: Validity) -> WeylElement {
        let mut ys = vec![0; n];
        ys[i] = 1;
        let mut e = WeylElement::zero(n, validity);
        let _ = e.insert(WeylMono { xs: vec![0; n], ys, hpow: 0 }, Q::one());
        e
    }

    pub fn hbar(n: usize, validity: Validity) -> WeylElement {
        let mut e = WeylElement::zero(n, validity);
        let _ = e.insert(WeylMono { xs: vec![0; n], ys: vec![0; n], hpow: 1 }, Q::one());
        e
    }

    /// Basis generator: `u < n` gives `x_{u+1}`, otherwise `y_{u-n+1}`.
    pub fn generator(n: usize, u: usize, validity: Validity) -> WeylElement {
        if u < n {
            WeylElement::x(n, u, validity)
        } else {
            WeylElement::y(n, u - n, validity)
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn validity(&self) -> Validity {
        self.validity
    }

    pub fn terms(&self) -> impl Iterator<Item = (&WeylMono, &Q)> {
        self.terms.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// All stored h-powers nonnegative (an element of `D`, not just `h^-1 D`).
    pub fn is_plain(&self) -> bool {
        self.terms.keys().all(|m| m.hpow >= 0)
    }

    pub fn min_hpow(&self) -> Option<i32> {
        self.terms.keys().map(|m| m.hpow).min()
    }

    fn min_hpow_clamped(&self) -> i32 {
        self.min_hpow().unwrap_or(0).min(0)
    }

    pub fn insert(&mut self, m: WeylMono, c: Q) -> Result<()> {
        self.insert_floored(m, c, WEYL_HBAR_FLOOR)
    }

    fn insert_floored(&mut self, m: WeylMono, c: Q, floor: i32) -> Result<()> {
        if c.is_zero() {
            return Ok(());
        }
        debug_assert!(m.xs.len() == self.n && m.ys.len() == self.n);
        if m.hpow < floor {
            return Err(Error::HbarFloorExceeded(m.hpow));
        }
        if !self.validity.admits(m.hpow) {
            return Ok(());
        }
        let entry = self.terms.entry(m.clone()).or_insert_with(Q::zero);
        *entry += c;
        if entry.is_zero() {
            self.terms.remove(&m);
        }
        Ok(())
    }

    pub fn coeff(&self, m: &WeylMono) -> Q {
        self.terms.get(m).cloned().unwrap_or_else(Q::zero)
    }

    pub fn add(&self, other: &WeylElement) -> Result<WeylElement> {
        if self.n != other.n {
            return Err(Error::RankMismatch(self.n, other.n));
        }
        let validity = self.validity.min(other.validity);
        let mut out = WeylElement::zero(self.n, validity);
        for (m, c) in self.terms.iter().chain(other.terms.iter()) {
            out.insert(m.clone(), c.clone())?;
        }
        Ok(out)
    }

    pub fn sub(&self, other: &WeylElement) -> Result<WeylElement> {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> WeylElement {
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            *c = -c.clone();
        }
        out
    }

    pub fn scale(&self, c: &Q) -> WeylElement {
        if c.is_zero() {
            return WeylElement::zero(self.n, self.validity);
        }
        let mut out = self.clone();
        for v in out.terms.values_mut() {
            *v = v.clone() * c;
        }
        out
    }

    pub fn pow(&self, e: u32) -> Result<WeylElement> {
        let mut out = WeylElement::one(self.n, self.validity);
        for _ in 0..e {
            out = out.mul(self)?;
        }
        Ok(out)
    }

    /// Normal-ordered product. Reordering uses, per symplectic pair,
    ///
    /// ```text
    /// y^b x^c = sum_k  k! C(b,k) C(c,k) h^k x^(c-k) y^(b-k)
    /// ```
    ///
    /// derived from `[y, x] = h` and unit-tested against repeated single
    /// swaps. Filtration degrees add for nonzero products.
    pub fn mul(&self, other: &WeylElement) -> Result<WeylElement> {
        self.mul_floored(other, WEYL_HBAR_FLOOR)
    }

    fn mul_floored(&self, other: &WeylElement, floor: i32) -> Result<WeylElement> {
        if self.n != other.n {
            return Err(Error::RankMismatch(self.n, other.n));
        }
        let na = self.validity.shift_down(-other.min_hpow_clamped());
        let nb = other.validity.shift_down(-self.min_hpow_clamped());
        let validity = na.min(nb);
        let mut out = WeylElement::zero(self.n, validity);
        for (mu, cu) in &self.terms {
            for (mv, cv) in &other.terms {
                accumulate_product(self.n, &mut out, mu, mv, cu.clone() * cv.clone(), floor)?;
            }
        }
        Ok(out)
    }

    /// Commutator `uv - vu`. The intermediate products of two `h^-1 D`
    /// elements pass through `h^-2 D`, but commutators in `D` are divisible
    /// by `h`, so the difference always lands back above the floor; the
    /// accumulation is therefore done with a relaxed internal floor. Errors
    /// with [`Error::ValidityExhausted`] when negative powers consumed more
    /// validity than the representable floor.
    pub fn bracket(&self, other: &WeylElement) -> Result<WeylElement> {
        let floor = 2 * WEYL_HBAR_FLOOR;
        let uv = self.mul_floored(other, floor)?;
        let vu = other.mul_floored(self, floor)?;
        let mut out = WeylElement::zero(self.n, uv.validity.min(vu.validity));
        for (m, c) in &uv.terms {
            out.insert_floored(m.clone(), c.clone(), floor)?;
        }
        for (m, c) in &vu.terms {
            out.insert_floored(m.clone(), -c.clone(), floor)?;
        }
        if let Some(&bad) = out.terms.keys().map(|m| &m.hpow).find(|&&k| k < WEYL_HBAR_FLOOR) {
            return Err(Error::HbarFloorExceeded(bad));
        }
        if let Some(order) = out.validity.0 {
            if order < WEYL_HBAR_FLOOR {
                return Err(Error::ValidityExhausted { order, min_pow: WEYL_HBAR_FLOOR });
            }
        }
        Ok(out)
    }

    pub fn div_hbar(&self, k: i32) -> Result<WeylElement> {
        let mut out = WeylElement::zero(self.n, self.validity.shift_down(k));
        for (m, c) in &self.terms {
            let hpow = m.hpow - k;
            if hpow < WEYL_HBAR_FLOOR {
                return Err(Error::HbarFloorExceeded(hpow));
            }
            out.insert(WeylMono { xs: m.xs.clone(), ys: m.ys.clone(), hpow }, c.clone())?;
        }
        Ok(out)
    }

    pub fn mul_hbar(&self, k: u32) -> WeylElement {
        let mut out = WeylElement::zero(self.n, self.validity);
        for (m, c) in &self.terms {
            let _ = out.insert(
                WeylMono { xs: m.xs.clone(), ys: m.ys.clone(), hpow: m.hpow + k as i32 },
                c.clone(),
            );
        }
        out
    }

    /// Minimal filtration degree `|a| + |b| + 2k` over the stored monomials.
    pub fn filtration_degree(&self) -> Result<i64> {
        if !self.is_plain() {
            return Err(Error::ValidityExhausted {
                order: self.min_hpow().unwrap_or(0),
                min_pow: 0,
            });
        }
        self.terms
            .keys()
            .map(|m| m.filtration_degree())
            .min()
            .ok_or(Error::ZeroElement)
    }

    /// The symbol mod `h`: the `h^0` slice as a commutative series in
    /// `x1..xn, y1..yn`.
    pub fn symbol_mod_hbar(&self, cap: u32) -> ScalarSeries {
        let vars = symbol_vars(self.n);
        let mut out = ScalarSeries::zero(&vars, cap, Validity::EXACT);
        for (m, c) in &self.terms {
            if m.hpow != 0 {
                continue;
            }
            let mut exps: Vec<i32> = m.xs.iter().map(|&e| e as i32).collect();
            exps.extend(m.ys.iter().map(|&e| e as i32));
            let _ = out.insert(Mono { exps, hpow: 0 }, c.clone());
        }
        out
    }

    /// Weyl-symmetrised quantization of a commutative symbol in
    /// `x1..xn, y1..yn[, h]`: the average over all letter orderings, written
    /// normal-ordered via `(h/2)^k k! C(a,k) C(b,k)` per pair.
    pub fn weyl_ordered(n: usize, symbol: &ScalarSeries) -> Result<WeylElement> {
        let vars = symbol_vars(n);
        let lifted = symbol.extended_to(&vars, symbol.cap(), symbol.validity())?;
        let mut out = WeylElement::zero(n, symbol.validity());
        for (m, c) in lifted.terms() {
            let a: Vec<u32> = m.exps[..n].iter().map(|&e| e as u32).collect();
            let b: Vec<u32> = m.exps[n..].iter().map(|&e| e as u32).collect();
            let bounds: Vec<u32> = (0..n).map(|i| a[i].min(b[i])).collect();
            let mut k = vec![0u32; n];
            'outer: loop {
                let mut w = c.clone();
                let mut ktot = 0u32;
                for i in 0..n {
                    if k[i] > 0 {
                        let f = binomial(a[i], k[i]) * binomial(b[i], k[i]) * factorial(k[i]);
                        w *= Q::from(f);
                        ktot += k[i];
                    }
                }
                if ktot > 0 {
                    w *= Q::new(BigInt::one(), BigInt::from(2u32).pow(ktot));
                }
                let xs: Vec<u32> = (0..n).map(|i| a[i] - k[i]).collect();
                let ys: Vec<u32> = (0..n).map(|i| b[i] - k[i]).collect();
                out.insert(WeylMono { xs, ys, hpow: m.hpow + ktot as i32 }, w)?;
                let mut pos = 0;
                loop {
                    if pos == n {
                        break 'outer;
                    }
                    if k[pos] < bounds[pos] {
                        k[pos] += 1;
                        break;
                    }
                    k[pos] = 0;
                    pos += 1;
                }
            }
        }
        Ok(out)
    }
}

#[allow(clippy::needless_range_loop)]
fn accumulate_product(
    n: usize,
    out: &mut WeylElement,
    u: &WeylMono,
    v: &WeylMono,
    coeff: Q,
    floor: i32,
) -> Result<()> {
    // x^a y^b h^j * x^c y^d h^k: reorder y^b past x^c pair by pair.
    let bounds: Vec<u32> = (0..n).map(|i| u.ys[i].min(v.xs[i])).collect();
    let mut k = vec![0u32; n];
    loop {
        let mut c = coeff.clone();
        let mut ktot = 0u32;
        for i in 0..n {
            if k[i] > 0 {
                let w = binomial(u.ys[i], k[i]) * binomial(v.xs[i], k[i]) * factorial(k[i]);
                c *= Q::from(w);
                ktot += k[i];
            }
        }
        let xs: Vec<u32> = (0..n).map(|i| u.xs[i] + v.xs[i] - k[i]).collect();
        let ys: Vec<u32> = (0..n).map(|i| u.ys[i] + v.ys[i] - k[i]).collect();
        out.insert_floored(WeylMono { xs, ys, hpow: u.hpow + v.hpow + ktot as i32 }, c, floor)?;
        let mut pos = 0;
        loop {
            if pos == n {
                return Ok(());
            }
            if k[pos] < bounds[pos] {
                k[pos] += 1;
                break;
            }
            k[pos] = 0;
            pos += 1;
        }
    }
}

pub fn symbol_vars(n: usize) -> Vec<Var> {
    let mut names: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    names.extend((1..=n).map(|i| format!("y{i}")));
    names.iter().map(|s| Var::plain(s)).collect()
}

/// Poisson bracket on symbols induced by `[y_j, x_i] = delta_ij h`:
/// `{f, g} = sum_i (df/dy_i dg/dx_i - df/dx_i dg/dy_i)`.
pub fn poisson_bracket(n: usize, f: &ScalarSeries, g: &ScalarSeries) -> Result<ScalarSeries> {
    let vars = symbol_vars(n);
    let cap = f.cap().min(g.cap());
    let validity = f.validity().min(g.validity());
    let f = f.extended_to(&vars, cap, validity)?;
    let g = g.extended_to(&vars, cap, validity)?;
    let mut out = ScalarSeries::zero(&vars, cap, validity);
    for i in 1..=n {
        let xi = format!("x{i}");
        let yi = format!("y{i}");
        let t1 = f.differentiate(&yi)?.mul(&g.differentiate(&xi)?)?;
        let t2 = f.differentiate(&xi)?.mul(&g.differentiate(&yi)?)?;
        out = out.add(&t1.sub(&t2)?)?;
    }
    Ok(out)
}

impl fmt::Display for WeylElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (m, c) in &self.terms {
            let neg = c.is_negative();
            let abs = c.abs();
            if first {
                if neg {
                    write!(f, "-")?;
                }
                first = false;
            } else if neg {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let mut factors: Vec<String> = Vec::new();
            for (i, &e) in m.xs.iter().enumerate() {
                match e {
                    0 => {}
                    1 => factors.push(format!("x{}", i + 1)),
                    _ => factors.push(format!("x{}^{}", i + 1, e)),
                }
            }
            for (i, &e) in m.ys.iter().enumerate() {
                match e {
                    0 => {}
                    1 => factors.push(format!("y{}", i + 1)),
                    _ => factors.push(format!("y{}^{}", i + 1, e)),
                }
            }
            match m.hpow {
                0 => {}
                1 => factors.push("h".to_string()),
                k => factors.push(format!("h^{k}")),
            }
            if factors.is_empty() {
                write!(f, "{abs}")?;
            } else if abs.is_one() {
                write!(f, "{}", factors.join(" "))?;
            } else {
                write!(f, "{} {}", abs, factors.join(" "))?;
            }
        }
        Ok(())
    }
}

/// Canonical serialization: sorted `[[xs], [ys], hpow, num, den]` rows.
pub fn weyl_to_json(e: &WeylElement) -> serde_json::Value {
    let terms: Vec<serde_json::Value> = e
        .terms()
        .map(|(m, c)| {
            serde_json::json!([
                m.xs,
                m.ys,
                m.hpow,
                c.numer().to_string(),
                c.denom().to_string()
            ])
        })
        .collect();
    serde_json::json!({
        "n": e.n(),
        "hbar_order": e.validity().0,
        "terms": terms,
    })
}

// ---------------------------------------------------------------------------
// sp(2n) and the quadratic embedding
// ---------------------------------------------------------------------------

/// A rational `2n x 2n` matrix in the ordered basis `(x_1..x_n, y_1..y_n)`,
/// acting on column vectors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpMatrix {
    n: usize,
    entries: Vec<Vec<Q>>,
}

impl SpMatrix {
    /// Build and verify the symplectic Lie algebra condition
    /// `a^T J + J a = 0` for the form with `omega(x_i, y_j) = delta_ij`.
    pub fn new(n: usize, entries: Vec<Vec<Q>>) -> Result<SpMatrix> {
        let m = SpMatrix::new_unchecked(n, entries)?;
        m.check_sp()?;
        Ok(m)
    }

    pub fn new_unchecked(n: usize, entries: Vec<Vec<Q>>) -> Result<SpMatrix> {
        if entries.len() != 2 * n || entries.iter().any(|r| r.len() != 2 * n) {
            return Err(Error::NotSymplectic(format!("expected a {0}x{0} matrix", 2 * n)));
        }
        Ok(SpMatrix { n, entries })
    }

    /// Assemble from blocks `[[g, h], [c, -g^T]]`; `h` and `c` must be
    /// symmetric for the result to satisfy the sp condition.
    pub fn from_blocks(n: usize, g: &[Vec<Q>], h: &[Vec<Q>], c: &[Vec<Q>]) -> Result<SpMatrix> {
        let mut entries = vec![vec![Q::zero(); 2 * n]; 2 * n];
        for i in 0..n {
            for j in 0..n {
                entries[i][j] = g[i][j].clone();
                entries[i][n + j] = h[i][j].clone();
                entries[n + i][j] = c[i][j].clone();
                entries[n + i][n + j] = -g[j][i].clone();
            }
        }
        SpMatrix::new(n, entries)
    }

    pub fn zero(n: usize) -> SpMatrix {
        SpMatrix { n, entries: vec![vec![Q::zero(); 2 * n]; 2 * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entry(&self, i: usize, j: usize) -> &Q {
        &self.entries[i][j]
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|r| r.iter().all(|e| e.is_zero()))
    }

    pub fn check_sp(&self) -> Result<()> {
        let n = self.n;
        // a^T J + J a = 0 expands blockwise to: c = c^T, h = h^T, d = -g^T.
        for i in 0..n {
            for j in 0..n {
                if self.entries[n + i][j] != self.entries[n + j][i] {
                    return Err(Error::NotSymplectic("lower-left block not symmetric".into()));
                }
                if self.entries[i][n + j] != self.entries[j][n + i] {
                    return Err(Error::NotSymplectic("upper-right block not symmetric".into()));
                }
                if self.entries[n + i][n + j] != -self.entries[j][i].clone() {
                    return Err(Error::NotSymplectic(
                        "lower-right block is not minus the transposed upper-left".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// True when the matrix stabilises the annihilated Lagrangian
    /// `span(y_1..y_n)`: under the column action that is exactly the
    /// vanishing of the upper-right block.
    pub fn is_parabolic(&self) -> bool {
        let n = self.n;
        (0..n).all(|i| (0..n).all(|j| self.entries[i][n + j].is_zero()))
    }

    /// Trace of the upper-left block `g`.
    pub fn upper_left_trace(&self) -> Q {
        (0..self.n).fold(Q::zero(), |acc, i| acc + self.entries[i][i].clone())
    }

    /// Trace of the restriction to `span(y)` (`-tr(g)` in block form);
    /// meaningful for parabolic matrices.
    pub fn trace_on_y_span(&self) -> Q {
        (0..self.n).fold(Q::zero(), |acc, i| {
            acc + self.entries[self.n + i][self.n + i].clone()
        })
    }

    pub fn commutator(&self, other: &SpMatrix) -> Result<SpMatrix> {
        if self.n != other.n {
            return Err(Error::RankMismatch(self.n, other.n));
        }
        let d = 2 * self.n;
        let mut out = vec![vec![Q::zero(); d]; d];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, slot) in row.iter_mut().enumerate() {
                let mut acc = Q::zero();
                for k in 0..d {
                    acc += self.entries[i][k].clone() * other.entries[k][j].clone();
                    acc -= other.entries[i][k].clone() * self.entries[k][j].clone();
                }
                *slot = acc;
            }
        }
        SpMatrix::new_unchecked(self.n, out)
    }

    /// Image of the `u`-th basis generator under the column action: the
    /// linear Weyl element `sum_v a[v][u] w_v`.
    pub fn apply_generator(&self, u: usize, validity: Validity) -> WeylElement {
        let mut out = WeylElement::zero(self.n, validity);
        for v in 0..2 * self.n {
            if !self.entries[v][u].is_zero() {
                let gen = WeylElement::generator(self.n, v, validity);
                out = out.add(&gen.scale(&self.entries[v][u])).expect("same rank");
            }
        }
        out
    }

    pub fn parse(n: usize, rows: &[Vec<String>]) -> Result<SpMatrix> {
        let entries: Vec<Vec<Q>> = rows
            .iter()
            .map(|row| row.iter().map(|s| parse_rational(s)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        SpMatrix::new(n, entries)
    }
}

/// The canonical Lie algebra embedding `sp(2n) -> h^-1 D^2`.
///
/// For block form `a = [[g, h], [c, -g^T]]` under the column action,
///
/// ```text
/// sigma(a) = h^-1 ( 1/2 sum g_ij (x_i y_j + y_j x_i)
///                 + 1/2 sum c_ij y_i y_j  -  1/2 sum h_ij x_i x_j ).
/// ```
///
/// The formula is pinned by `[sigma(a), w] = a(w)` on generators, not
/// trusted from displayed block identities.
pub fn sigma_embed(a: &SpMatrix) -> Result<WeylElement> {
    a.check_sp()?;
    let n = a.n();
    let mut out = WeylElement::zero(n, Validity::EXACT);
    let half = Q::new(BigInt::one(), BigInt::from(2));
    for i in 0..n {
        for j in 0..n {
            let g = a.entry(i, j).clone();
            if !g.is_zero() {
                // 1/2 g_ij (x_i y_j + y_j x_i) = g_ij x_i y_j + 1/2 delta_ij g_ii h
                let mut xs = vec![0; n];
                let mut ys = vec![0; n];
                xs[i] = 1;
                ys[j] = 1;
                out.insert(WeylMono { xs, ys, hpow: -1 }, g.clone())?;
                if i == j {
                    out.insert(
                        WeylMono { xs: vec![0; n], ys: vec![0; n], hpow: 0 },
                        half.clone() * g,
                    )?;
                }
            }
            let c = a.entry(n + i, j).clone();
            if !c.is_zero() {
                let mut ys = vec![0; n];
                ys[i] += 1;
                ys[j] += 1;
                out.insert(WeylMono { xs: vec![0; n], ys, hpow: -1 }, half.clone() * c)?;
            }
            let h = a.entry(i, n + j).clone();
            if !h.is_zero() {
                let mut xs = vec![0; n];
                xs[i] += 1;
                xs[j] += 1;
                out.insert(WeylMono { xs, ys: vec![0; n], hpow: -1 }, -(half.clone() * h))?;
            }
        }
    }
    Ok(out)
}

/// The derivation `theta_D(a) = [sigma(a), -]` of the Weyl algebra.
pub fn theta_d(a: &SpMatrix, u: &WeylElement) -> Result<WeylElement> {
    if a.n() != u.n() {
        return Err(Error::RankMismatch(a.n(), u.n()));
    }
    sigma_embed(a)?.bracket(u)
}
