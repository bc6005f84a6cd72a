//! Truncated multivariate formal series over exact rationals, and
//! differential forms built from them.
//!
//! A [`ScalarSeries`] models an element of `k[[x_1..x_n, h]]` (or of a
//! Laurent-type ring on a chart overlap) stored as a sparse table of
//! monomials. Two truncation axes are tracked:
//!
//! * the x-degree cap — monomials of total degree above the cap are never
//!   stored; arithmetic silently drops them (truncation semantics);
//! * the h validity order — an [`Validity`] records up to which power of h
//!   the coefficients are meaningful. Multiplication merges validities by
//!   minimum; dividing by h consumes one order.
//!
//! Negative exponents are allowed only on variables flagged invertible
//! (overlap coordinates), down to a fixed floor. Exceeding the floor is an
//! error, never a silent truncation: Laurent tails are exact data.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use num::{BigInt, BigRational, One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Q = BigRational;

/// Parse helper: exact rational from integer pair.
pub fn qq(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

pub fn qint(n: i64) -> Q {
    Q::from(BigInt::from(n))
}

/// Most negative exponent tolerated on an invertible variable.
pub const NEG_EXP_FLOOR: i32 = -12;

/// Most negative h-power any scalar value may carry.
pub const HBAR_FLOOR_MIN: i32 = -2;

/// A named chart variable. Negative exponents are legal only when
/// `invertible` is set.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Var {
    pub name: String,
    pub invertible: bool,
}

impl Var {
    pub fn plain(name: &str) -> Var {
        Var { name: name.to_string(), invertible: false }
    }
    pub fn inv(name: &str) -> Var {
        Var { name: name.to_string(), invertible: true }
    }
}

pub fn plain_vars(names: &[&str]) -> Vec<Var> {
    names.iter().map(|n| Var::plain(n)).collect()
}

fn var_names(vars: &[Var]) -> String {
    vars.iter().map(|v| v.name.as_str()).collect::<Vec<_>>().join(", ")
}

/// Validity order in h: coefficients of `h^k` are meaningful for
/// `k <= order`. `exact()` means no truncation has happened in h.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Validity(pub Option<i32>);

impl Validity {
    pub const EXACT: Validity = Validity(None);

    pub fn order(n: i32) -> Validity {
        Validity(Some(n))
    }

    pub fn is_exact(self) -> bool {
        self.0.is_none()
    }

    pub fn min(self, other: Validity) -> Validity {
        match (self.0, other.0) {
            (None, o) => Validity(o),
            (s, None) => Validity(s),
            (Some(a), Some(b)) => Validity(Some(a.min(b))),
        }
    }

    /// Shift downward by `k` (division by `h^k`).
    pub fn shift_down(self, k: i32) -> Validity {
        Validity(self.0.map(|n| n - k))
    }

    pub fn admits(self, hpow: i32) -> bool {
        match self.0 {
            None => true,
            Some(n) => hpow <= n,
        }
    }
}

impl fmt::Display for Validity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            None => write!(f, "exact"),
            Some(n) => write!(f, "{n}"),
        }
    }
}

/// A monomial key: exponent multi-index over the chart variables plus an
/// h-power. Ordered graded-lexicographically, then by h-power, so the
/// serialization order is deterministic.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mono {
    pub exps: Vec<i32>,
    pub hpow: i32,
}

impl Mono {
    pub fn constant(nvars: usize) -> Mono {
        Mono { exps: vec![0; nvars], hpow: 0 }
    }

    pub fn total_degree(&self) -> i64 {
        self.exps.iter().map(|&e| e as i64).sum()
    }

    pub fn is_constant(&self) -> bool {
        self.exps.iter().all(|&e| e == 0) && self.hpow == 0
    }

    pub fn is_pure_hbar(&self) -> bool {
        self.exps.iter().all(|&e| e == 0)
    }
}

impl Ord for Mono {
    fn cmp(&self, other: &Self) -> Ordering {
        self.total_degree()
            .cmp(&other.total_degree())
            .then_with(|| self.exps.cmp(&other.exps))
            .then_with(|| self.hpow.cmp(&other.hpow))
    }
}

impl PartialOrd for Mono {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Truncated formal series over exact rationals.
#[derive(Clone, Debug)]
pub struct ScalarSeries {
    vars: Vec<Var>,
    cap: u32,
    validity: Validity,
    hfloor: i32,
    terms: BTreeMap<Mono, Q>,
}

impl PartialEq for ScalarSeries {
    fn eq(&self, other: &Self) -> bool {
        self.vars == other.vars && self.terms == other.terms
    }
}

impl Eq for ScalarSeries {}

impl ScalarSeries {
    pub fn zero(vars: &[Var], cap: u32, validity: Validity) -> ScalarSeries {
        ScalarSeries {
            vars: vars.to_vec(),
            cap,
            validity,
            hfloor: 0,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(vars: &[Var], cap: u32, validity: Validity, c: Q) -> ScalarSeries {
        let mut s = ScalarSeries::zero(vars, cap, validity);
        let _ = s.insert(Mono::constant(vars.len()), c);
        s
    }

    pub fn one(vars: &[Var], cap: u32, validity: Validity) -> ScalarSeries {
        ScalarSeries::constant(vars, cap, validity, Q::one())
    }

    pub fn variable(vars: &[Var], cap: u32, validity: Validity, name: &str) -> Result<ScalarSeries> {
        let idx = vars
            .iter()
            .position(|v| v.name == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))?;
        let mut s = ScalarSeries::zero(vars, cap, validity);
        let mut exps = vec![0; vars.len()];
        exps[idx] = 1;
        s.insert(Mono { exps, hpow: 0 }, Q::one())?;
        Ok(s)
    }

    pub fn hbar(vars: &[Var], cap: u32, validity: Validity) -> ScalarSeries {
        let mut s = ScalarSeries::zero(vars, cap, validity);
        let _ = s.insert(Mono { exps: vec![0; vars.len()], hpow: 1 }, Q::one());
        s
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn cap(&self) -> u32 {
        self.cap
    }

    pub fn validity(&self) -> Validity {
        self.validity
    }

    pub fn hfloor(&self) -> i32 {
        self.hfloor
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Mono, &Q)> {
        self.terms.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, m: &Mono) -> Q {
        self.terms.get(m).cloned().unwrap_or_else(Q::zero)
    }

    pub fn constant_term(&self) -> Q {
        self.coeff(&Mono::constant(self.vars.len()))
    }

    /// Smallest stored h-power, clamped at zero; used for validity merging.
    fn min_hpow_clamped(&self) -> i32 {
        self.terms.keys().map(|m| m.hpow).min().unwrap_or(0).min(0)
    }

    pub fn min_hpow(&self) -> Option<i32> {
        self.terms.keys().map(|m| m.hpow).min()
    }

    pub fn max_total_degree(&self) -> i64 {
        self.terms.keys().map(|m| m.total_degree()).max().unwrap_or(0)
    }

    pub fn min_total_degree(&self) -> Option<i64> {
        self.terms.keys().map(|m| m.total_degree()).min()
    }

    /// Insert `c` into the table at `m`, checking floors and dropping
    /// anything past the caps. Zero coefficients are never stored.
    pub fn insert(&mut self, m: Mono, c: Q) -> Result<()> {
        if c.is_zero() {
            return Ok(());
        }
        debug_assert_eq!(m.exps.len(), self.vars.len());
        for (i, &e) in m.exps.iter().enumerate() {
            if e < 0 {
                if !self.vars[i].invertible {
                    return Err(Error::NonInvertibleVariable(self.vars[i].name.clone()));
                }
                if e < NEG_EXP_FLOOR {
                    return Err(Error::LaurentFloorExceeded {
                        var: self.vars[i].name.clone(),
                        floor: NEG_EXP_FLOOR,
                    });
                }
            }
        }
        if m.hpow < HBAR_FLOOR_MIN {
            return Err(Error::HbarFloorExceeded(m.hpow));
        }
        if m.total_degree() > self.cap as i64 || !self.validity.admits(m.hpow) {
            return Ok(()); // beyond the caps: truncated away
        }
        self.hfloor = self.hfloor.min(m.hpow);
        let entry = self.terms.entry(m.clone()).or_insert_with(Q::zero);
        *entry += c;
        if entry.is_zero() {
            self.terms.remove(&m);
        }
        Ok(())
    }

    /// Merge the variable lists of two series; one must embed in the other.
    fn merged_vars(&self, other: &ScalarSeries) -> Result<Vec<Var>> {
        fn embeds(small: &[Var], big: &[Var]) -> bool {
            let mut it = big.iter();
            small
                .iter()
                .all(|v| it.by_ref().any(|w| w.name == v.name))
        }
        let merge_flags = |small: &[Var], big: &[Var]| -> Vec<Var> {
            big.iter()
                .map(|w| Var {
                    name: w.name.clone(),
                    invertible: w.invertible
                        || small.iter().any(|v| v.name == w.name && v.invertible),
                })
                .collect()
        };
        if self.vars.len() >= other.vars.len() && embeds(&other.vars, &self.vars) {
            Ok(merge_flags(&other.vars, &self.vars))
        } else if embeds(&self.vars, &other.vars) {
            Ok(merge_flags(&self.vars, &other.vars))
        } else {
            Err(Error::IncompatibleVariables {
                left: var_names(&self.vars),
                right: var_names(&other.vars),
            })
        }
    }

    /// Re-express this series over a superset variable list.
    pub fn extended_to(&self, vars: &[Var], cap: u32, validity: Validity) -> Result<ScalarSeries> {
        let mut index = Vec::with_capacity(self.vars.len());
        for v in &self.vars {
            let idx = vars
                .iter()
                .position(|w| w.name == v.name)
                .ok_or_else(|| Error::UnknownVariable(v.name.clone()))?;
            index.push(idx);
        }
        let mut out = ScalarSeries::zero(vars, cap, validity);
        for (m, c) in &self.terms {
            let mut exps = vec![0; vars.len()];
            for (slot, &e) in index.iter().zip(&m.exps) {
                exps[*slot] = e;
            }
            out.insert(Mono { exps, hpow: m.hpow }, c.clone())?;
        }
        Ok(out)
    }

    fn binary_prep(&self, other: &ScalarSeries) -> Result<(ScalarSeries, ScalarSeries, Vec<Var>, u32)> {
        let vars = self.merged_vars(other)?;
        let cap = self.cap.min(other.cap);
        let validity = self.validity.min(other.validity);
        let a = self.extended_to(&vars, cap, validity)?;
        let b = other.extended_to(&vars, cap, validity)?;
        Ok((a, b, vars, cap))
    }

    pub fn add(&self, other: &ScalarSeries) -> Result<ScalarSeries> {
        let (a, b, vars, cap) = self.binary_prep(other)?;
        let mut out = ScalarSeries::zero(&vars, cap, a.validity);
        for (m, c) in a.terms.iter().chain(b.terms.iter()) {
            out.insert(m.clone(), c.clone())?;
        }
        Ok(out)
    }

    pub fn sub(&self, other: &ScalarSeries) -> Result<ScalarSeries> {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> ScalarSeries {
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            *c = -c.clone();
        }
        out
    }

    pub fn scale(&self, c: &Q) -> ScalarSeries {
        if c.is_zero() {
            return ScalarSeries::zero(&self.vars, self.cap, self.validity);
        }
        let mut out = self.clone();
        for v in out.terms.values_mut() {
            *v = v.clone() * c;
        }
        out
    }

    /// Exact product truncated to the merged caps. The resulting validity is
    /// `min(N_a + min_pow(b), N_b + min_pow(a))` where the minimal stored
    /// h-powers are clamped at zero, so negative powers consume validity and
    /// positive ones never extend it.
    pub fn mul(&self, other: &ScalarSeries) -> Result<ScalarSeries> {
        let vars = self.merged_vars(other)?;
        let cap = self.cap.min(other.cap);
        let na = self.validity.shift_down(-other.min_hpow_clamped());
        let nb = other.validity.shift_down(-self.min_hpow_clamped());
        let validity = na.min(nb);
        let a = self.extended_to(&vars, cap, validity)?;
        let b = other.extended_to(&vars, cap, validity)?;
        let mut out = ScalarSeries::zero(&vars, cap, validity);
        for (ma, ca) in &a.terms {
            for (mb, cb) in &b.terms {
                let exps: Vec<i32> = ma.exps.iter().zip(&mb.exps).map(|(x, y)| x + y).collect();
                let m = Mono { exps, hpow: ma.hpow + mb.hpow };
                out.insert(m, ca.clone() * cb.clone())?;
            }
        }
        Ok(out)
    }

    pub fn pow(&self, e: u32) -> Result<ScalarSeries> {
        let mut out = ScalarSeries::one(&self.vars, self.cap, self.validity);
        for _ in 0..e {
            out = out.mul(self)?;
        }
        Ok(out)
    }

    /// Formal partial derivative; caps preserved.
    pub fn differentiate(&self, var: &str) -> Result<ScalarSeries> {
        let idx = self
            .vars
            .iter()
            .position(|v| v.name == var)
            .ok_or_else(|| Error::UnknownVariable(var.to_string()))?;
        let mut out = ScalarSeries::zero(&self.vars, self.cap, self.validity);
        for (m, c) in &self.terms {
            let e = m.exps[idx];
            if e == 0 {
                continue;
            }
            let mut exps = m.exps.clone();
            exps[idx] = e - 1;
            out.insert(Mono { exps, hpow: m.hpow }, c.clone() * qint(e as i64))?;
        }
        Ok(out)
    }

    /// Divide by `h^k`, shifting validity down by `k`.
    pub fn div_hbar(&self, k: i32) -> Result<ScalarSeries> {
        let mut out = ScalarSeries::zero(&self.vars, self.cap, self.validity.shift_down(k));
        for (m, c) in &self.terms {
            let hpow = m.hpow - k;
            if hpow < HBAR_FLOOR_MIN {
                return Err(Error::HbarFloorExceeded(hpow));
            }
            out.insert(Mono { exps: m.exps.clone(), hpow }, c.clone())?;
        }
        Ok(out)
    }

    pub fn mul_hbar(&self, k: u32) -> ScalarSeries {
        let mut out = ScalarSeries::zero(&self.vars, self.cap, self.validity);
        for (m, c) in &self.terms {
            let _ = out.insert(
                Mono { exps: m.exps.clone(), hpow: m.hpow + k as i32 },
                c.clone(),
            );
        }
        out
    }

    /// Keep only monomials of total x-degree `<= d`.
    pub fn truncate_degree(&self, d: i64) -> ScalarSeries {
        let mut out = self.clone();
        out.terms.retain(|m, _| m.total_degree() <= d);
        out
    }

    /// Keep only monomials with h-power `<= k` (and adjust validity).
    pub fn truncate_hbar(&self, k: i32) -> ScalarSeries {
        let mut out = self.clone();
        out.validity = out.validity.min(Validity::order(k));
        out.terms.retain(|m, _| m.hpow <= k);
        out
    }

    /// The coefficient of `h^k` as a series in the chart variables alone.
    pub fn hbar_slice(&self, k: i32) -> ScalarSeries {
        let mut out = ScalarSeries::zero(&self.vars, self.cap, Validity::EXACT);
        for (m, c) in &self.terms {
            if m.hpow == k {
                let _ = out.insert(Mono { exps: m.exps.clone(), hpow: 0 }, c.clone());
            }
        }
        out
    }

    /// True when the series is zero after truncating to x-degree `d` and the
    /// stored h-validity. Used by verification windows at cap boundaries.
    pub fn is_zero_to_degree(&self, d: i64) -> bool {
        self.terms.keys().all(|m| m.total_degree() > d)
    }

    /// `exp(self)` truncated to the caps. The argument must have zero
    /// constant term and no negative exponents; pure-`h` terms are allowed
    /// only under a finite validity order.
    pub fn exp(&self) -> Result<ScalarSeries> {
        if !self.constant_term().is_zero() {
            return Err(Error::NonNilpotentConstantTerm);
        }
        let mut has_pure_hbar = false;
        for m in self.terms.keys() {
            if m.exps.iter().any(|&e| e < 0) {
                return Err(Error::UnboundedExpansion);
            }
            if m.is_pure_hbar() {
                has_pure_hbar = true;
            }
        }
        let hbound = match self.validity.0 {
            Some(n) => n.max(0) as u32,
            None if has_pure_hbar => return Err(Error::UnboundedExpansion),
            None => 0,
        };
        let kmax = self.cap + hbound + 1;
        let mut out = ScalarSeries::one(&self.vars, self.cap, self.validity);
        let mut power = ScalarSeries::one(&self.vars, self.cap, self.validity);
        let mut factorial = Q::one();
        for k in 1..=kmax {
            power = power.mul(self)?;
            if power.is_zero() {
                break;
            }
            factorial *= qint(k as i64);
            out = out.add(&power.scale(&(Q::one() / factorial.clone())))?;
        }
        Ok(out)
    }

    /// Multiplicative inverse, defined when the lowest-total-degree part is a
    /// single monomial whose negative image stays within the Laurent flags.
    pub fn inverse(&self) -> Result<ScalarSeries> {
        self.inverse_at(self.cap)
    }

    /// Inverse exact through total degree `out_cap`; the geometric expansion
    /// is carried out at a lifted working cap so that multiplying back by
    /// the (possibly negative-degree) leading monomial loses nothing.
    pub fn inverse_at(&self, out_cap: u32) -> Result<ScalarSeries> {
        let lead_deg = self
            .min_total_degree()
            .ok_or_else(|| Error::NonInvertibleImage("0".to_string()))?;
        // the unit part must be a single monomial at the lowest h-level
        let (m0, c0) = {
            let lowest: Vec<_> = self
                .terms
                .iter()
                .filter(|(m, _)| m.total_degree() == lead_deg)
                .collect();
            let min_h = lowest.iter().map(|(m, _)| m.hpow).min().unwrap();
            let at: Vec<_> = lowest.into_iter().filter(|(m, _)| m.hpow == min_h).collect();
            if at.len() != 1 {
                return Err(Error::NonInvertibleImage(format!("{}", self)));
            }
            (at[0].0.clone(), at[0].1.clone())
        };
        if m0.hpow != 0 {
            // inverting h-multiples would need negative h powers; refuse
            return Err(Error::NonInvertibleImage(format!("{}", self)));
        }
        let wcap = out_cap + lead_deg.unsigned_abs() as u32;
        let lifted = self.with_window(wcap, self.validity);
        // monomial inverse
        let mut inv_mono = ScalarSeries::zero(&self.vars, wcap, self.validity);
        let neg_exps: Vec<i32> = m0.exps.iter().map(|&e| -e).collect();
        inv_mono
            .insert(Mono { exps: neg_exps, hpow: 0 }, Q::one() / c0)
            .map_err(|e| match e {
                Error::NonInvertibleVariable(name) => Error::NonInvertibleImage(name),
                other => other,
            })?;
        // w = self * inv_mono - 1 has strictly positive weight
        let u = lifted.mul(&inv_mono)?;
        let one = ScalarSeries::one(&self.vars, wcap, self.validity);
        let w = u.sub(&one)?;
        let mut has_pure_hbar = false;
        for m in w.terms.keys() {
            let positive_x = m.total_degree() >= 1 && m.exps.iter().all(|&e| e >= 0);
            if m.is_pure_hbar() && m.hpow >= 1 {
                has_pure_hbar = true;
            } else if !positive_x {
                return Err(Error::NonInvertibleImage(format!("{}", self)));
            }
        }
        let hbound = match self.validity.0 {
            Some(n) => n.max(0) as u32,
            None if has_pure_hbar => return Err(Error::UnboundedExpansion),
            None => 0,
        };
        // geometric series sum_k (-w)^k, truncated at the working cap
        let kmax = wcap + hbound + 1;
        let mut geo = ScalarSeries::one(&self.vars, wcap, self.validity);
        let mut power = ScalarSeries::one(&self.vars, wcap, self.validity);
        let neg_w = w.neg();
        for _ in 1..=kmax {
            power = power.mul(&neg_w)?;
            if power.is_zero() {
                break;
            }
            geo = geo.add(&power)?;
        }
        Ok(geo.mul(&inv_mono)?.with_window(out_cap, self.validity))
    }

    /// Exact composition: replace each variable by its image and re-expand
    /// over `target_vars`. Variables without an explicit image must exist in
    /// the target list and map to themselves. Negative exponents require the
    /// image to be invertible in the target ring.
    pub fn substitute(
        &self,
        images: &BTreeMap<String, ScalarSeries>,
        target_vars: &[Var],
        cap: u32,
    ) -> Result<ScalarSeries> {
        let mut validity = self.validity;
        for img in images.values() {
            validity = validity.min(img.validity());
        }
        // Laurent factors shift degrees downward, so intermediate products
        // must be kept past the output cap to stay exact below it. The
        // overall downward shift is bounded by the per-variable floor.
        let wcap = cap + 2 * NEG_EXP_FLOOR.unsigned_abs();
        let mut resolved: Vec<ScalarSeries> = Vec::with_capacity(self.vars.len());
        for v in &self.vars {
            match images.get(&v.name) {
                Some(img) => resolved.push(img.extended_to(target_vars, wcap, validity)?),
                None => resolved.push(ScalarSeries::variable(target_vars, wcap, validity, &v.name)?),
            }
        }
        let mut out = ScalarSeries::zero(target_vars, wcap, validity);
        for (m, c) in &self.terms {
            let mut term = ScalarSeries::constant(target_vars, wcap, validity, c.clone());
            term = term.mul_hbar_signed(m.hpow)?;
            for (i, &e) in m.exps.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                let factor = if e > 0 {
                    resolved[i].pow(e as u32)?
                } else {
                    resolved[i]
                        .inverse_at(wcap)
                        .map_err(|_| Error::NonInvertibleImage(self.vars[i].name.clone()))?
                        .pow((-e) as u32)?
                };
                term = term.mul(&factor)?;
            }
            out = out.add(&term)?;
        }
        Ok(out.with_window(cap, validity))
    }

    fn mul_hbar_signed(&self, k: i32) -> Result<ScalarSeries> {
        if k >= 0 {
            Ok(self.mul_hbar(k as u32))
        } else {
            self.div_hbar(-k)
        }
    }

    /// Rebuild with a different cap/validity window (dropping what no longer
    /// fits). Used to lift working precision before exact constructions.
    pub fn with_window(&self, cap: u32, validity: Validity) -> ScalarSeries {
        let mut out = ScalarSeries::zero(&self.vars, cap, validity);
        for (m, c) in &self.terms {
            let _ = out.insert(m.clone(), c.clone());
        }
        out
    }
}

/// Antiderivative of a closed tuple `g` along the variables `vars`:
/// returns `G` with `d_j G = g_j`, zero constant term, and no pure-`h`
/// terms — `G` lies in the ideal generated by the integration variables.
///
/// Closedness (`d_i g_j = d_j g_i`) is checked exactly on the stored
/// monomials and failure is an error, not a warning.
pub fn integrate_path(g: &[ScalarSeries], vars: &[&str]) -> Result<ScalarSeries> {
    if g.is_empty() {
        return Err(Error::MissingData("integrate_path needs components".into()));
    }
    if g.len() != vars.len() {
        return Err(Error::MissingData(format!(
            "integrate_path: {} components vs {} variables",
            g.len(),
            vars.len()
        )));
    }
    for i in 0..g.len() {
        for j in (i + 1)..g.len() {
            let dij = g[j].differentiate(vars[i])?;
            let dji = g[i].differentiate(vars[j])?;
            if dij != dji {
                return Err(Error::NotClosed { i, j });
            }
        }
    }
    let ring = g[0].vars().to_vec();
    let cap = g.iter().map(|s| s.cap()).min().unwrap();
    let validity = g.iter().fold(Validity::EXACT, |v, s| v.min(s.validity()));
    let var_idx: Vec<usize> = vars
        .iter()
        .map(|name| {
            ring.iter()
                .position(|v| v.name == *name)
                .ok_or_else(|| Error::UnknownVariable(name.to_string()))
        })
        .collect::<Result<_>>()?;
    let mut out = ScalarSeries::zero(&ring, cap, validity);
    // Euler homogeneous integration: the monomial u = x^a of g_j contributes
    // x_j * u / (|a| + 1), where |a| counts only the integration variables.
    for (j, comp) in g.iter().enumerate() {
        let comp = comp.extended_to(&ring, cap, validity)?;
        for (m, c) in comp.terms() {
            let path_deg: i64 = var_idx.iter().map(|&i| m.exps[i] as i64).sum();
            if path_deg == -1 {
                return Err(Error::NoPrimitive);
            }
            let mut exps = m.exps.clone();
            exps[var_idx[j]] += 1;
            out.insert(
                Mono { exps, hpow: m.hpow },
                c.clone() / qint(path_deg + 1),
            )?;
        }
    }
    Ok(out)
}

impl fmt::Display for ScalarSeries {
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
            for (v, &e) in self.vars.iter().zip(&m.exps) {
                match e {
                    0 => {}
                    1 => factors.push(v.name.clone()),
                    _ => factors.push(format!("{}^{}", v.name, e)),
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

// ---------------------------------------------------------------------------
// canonical JSON form
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SeriesRepr {
    variables: Vec<Var>,
    x_degree_cap: u32,
    hbar_order: Option<i32>,
    min_hbar_power: i32,
    /// Sorted monomial list: `[exponents, hbar_power, numerator, denominator]`.
    terms: Vec<(Vec<i32>, i32, String, String)>,
}

impl Serialize for ScalarSeries {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = SeriesRepr {
            variables: self.vars.clone(),
            x_degree_cap: self.cap,
            hbar_order: self.validity.0,
            min_hbar_power: self.hfloor,
            terms: self
                .terms
                .iter()
                .map(|(m, c)| {
                    (
                        m.exps.clone(),
                        m.hpow,
                        c.numer().to_string(),
                        c.denom().to_string(),
                    )
                })
                .collect(),
        };
        repr.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ScalarSeries {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as DeError;
        let repr = SeriesRepr::deserialize(d)?;
        let mut out = ScalarSeries::zero(&repr.variables, repr.x_degree_cap, Validity(repr.hbar_order));
        for (exps, hpow, num, den) in repr.terms {
            let n: BigInt = num.parse().map_err(D::Error::custom)?;
            let dd: BigInt = den.parse().map_err(D::Error::custom)?;
            if dd.is_zero() {
                return Err(D::Error::custom("zero denominator"));
            }
            out.insert(Mono { exps, hpow }, Q::new(n, dd))
                .map_err(D::Error::custom)?;
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// differential forms
// ---------------------------------------------------------------------------

/// A differential form of degree 0..=3 on a chart, with [`ScalarSeries`]
/// coefficients. Components are stored only on strictly increasing variable
/// tuples; antisymmetry is canonicalized into the coefficients.
#[derive(Clone, Debug)]
pub struct DifferentialForm {
    degree: u8,
    vars: Vec<Var>,
    cap: u32,
    validity: Validity,
    comps: BTreeMap<Vec<usize>, ScalarSeries>,
}

impl PartialEq for DifferentialForm {
    fn eq(&self, other: &Self) -> bool {
        // an absent component and a stored zero component are the same form
        if self.degree != other.degree {
            return false;
        }
        let keys: std::collections::BTreeSet<&Vec<usize>> =
            self.comps.keys().chain(other.comps.keys()).collect();
        keys.into_iter().all(|k| {
            let empty = BTreeMap::new();
            let a = self.comps.get(k).map(|s| &s.terms).unwrap_or(&empty);
            let b = other.comps.get(k).map(|s| &s.terms).unwrap_or(&empty);
            a == b
        })
    }
}

impl DifferentialForm {
    pub fn zero(degree: u8, vars: &[Var], cap: u32, validity: Validity) -> DifferentialForm {
        assert!(degree <= 3, "forms of degree > 3 are out of scope");
        DifferentialForm {
            degree,
            vars: vars.to_vec(),
            cap,
            validity,
            comps: BTreeMap::new(),
        }
    }

    pub fn degree(&self) -> u8 {
        self.degree
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn is_zero(&self) -> bool {
        self.comps.values().all(|c| c.is_zero())
    }

    pub fn components(&self) -> impl Iterator<Item = (&Vec<usize>, &ScalarSeries)> {
        self.comps.iter().filter(|(_, s)| !s.is_zero())
    }

    pub fn component(&self, key: &[usize]) -> ScalarSeries {
        self.comps
            .get(key)
            .cloned()
            .unwrap_or_else(|| ScalarSeries::zero(&self.vars, self.cap, self.validity))
    }

    /// Add `coeff * dx_{tuple}` where the tuple may be unsorted; the sign of
    /// the sorting permutation is absorbed into the coefficient.
    pub fn add_term(&mut self, tuple: &[usize], coeff: ScalarSeries) -> Result<()> {
        assert_eq!(tuple.len(), self.degree as usize);
        let mut idx: Vec<usize> = tuple.to_vec();
        // repeated index => zero
        for i in 0..idx.len() {
            for j in (i + 1)..idx.len() {
                if idx[i] == idx[j] {
                    return Ok(());
                }
            }
        }
        // bubble sort, tracking the sign
        let mut sign = 1i64;
        let n = idx.len();
        for i in 0..n {
            for j in 0..n.saturating_sub(1 + i) {
                if idx[j] > idx[j + 1] {
                    idx.swap(j, j + 1);
                    sign = -sign;
                }
            }
        }
        let coeff = if sign < 0 { coeff.neg() } else { coeff };
        let slot = self
            .comps
            .entry(idx)
            .or_insert_with(|| ScalarSeries::zero(&self.vars, self.cap, self.validity));
        *slot = slot.add(&coeff)?;
        Ok(())
    }

    pub fn add(&self, other: &DifferentialForm) -> Result<DifferentialForm> {
        assert_eq!(self.degree, other.degree);
        let mut out = self.clone();
        for (k, s) in &other.comps {
            let slot = out
                .comps
                .entry(k.clone())
                .or_insert_with(|| ScalarSeries::zero(&out.vars, out.cap, out.validity));
            *slot = slot.add(s)?;
        }
        Ok(out)
    }

    pub fn sub(&self, other: &DifferentialForm) -> Result<DifferentialForm> {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> DifferentialForm {
        let mut out = self.clone();
        for s in out.comps.values_mut() {
            *s = s.neg();
        }
        out
    }

    pub fn scale(&self, c: &Q) -> DifferentialForm {
        let mut out = self.clone();
        for s in out.comps.values_mut() {
            *s = s.scale(c);
        }
        out
    }

    /// Exterior derivative.
    pub fn d(&self) -> Result<DifferentialForm> {
        let mut out = DifferentialForm::zero(self.degree + 1, &self.vars, self.cap, self.validity);
        for (tuple, coeff) in &self.comps {
            for (i, v) in self.vars.iter().enumerate() {
                let dc = coeff.differentiate(&v.name)?;
                if dc.is_zero() {
                    continue;
                }
                let mut t = vec![i];
                t.extend_from_slice(tuple);
                out.add_term(&t, dc)?;
            }
        }
        Ok(out)
    }

    /// Pull back along the map whose coordinate images are `images` (source
    /// variable name -> series over `target_vars`).
    pub fn pullback(
        &self,
        images: &BTreeMap<String, ScalarSeries>,
        target_vars: &[Var],
        cap: u32,
    ) -> Result<DifferentialForm> {
        let validity = images
            .values()
            .fold(self.validity, |v, s| v.min(s.validity()));
        // differentials of the images
        let mut d_images: Vec<Vec<ScalarSeries>> = Vec::with_capacity(self.vars.len());
        let mut f_images: Vec<ScalarSeries> = Vec::with_capacity(self.vars.len());
        for v in &self.vars {
            let img = match images.get(&v.name) {
                Some(img) => img.extended_to(target_vars, cap, validity)?,
                None => ScalarSeries::variable(target_vars, cap, validity, &v.name)?,
            };
            let mut row = Vec::with_capacity(target_vars.len());
            for tv in target_vars {
                row.push(img.differentiate(&tv.name)?);
            }
            d_images.push(row);
            f_images.push(img);
        }
        let mut out = DifferentialForm::zero(self.degree, target_vars, cap, validity);
        for (tuple, coeff) in &self.comps {
            let pulled = coeff.substitute(images, target_vars, cap)?;
            match tuple.len() {
                0 => out.add_term(&[], pulled)?,
                1 => {
                    let i = tuple[0];
                    for (j, dj) in d_images[i].iter().enumerate() {
                        if dj.is_zero() {
                            continue;
                        }
                        out.add_term(&[j], pulled.mul(dj)?)?;
                    }
                }
                2 => {
                    let (i1, i2) = (tuple[0], tuple[1]);
                    for (j1, a) in d_images[i1].iter().enumerate() {
                        if a.is_zero() {
                            continue;
                        }
                        for (j2, b) in d_images[i2].iter().enumerate() {
                            if j1 == j2 || b.is_zero() {
                                continue;
                            }
                            out.add_term(&[j1, j2], pulled.mul(a)?.mul(b)?)?;
                        }
                    }
                }
                _ => unreachable!("pullback only implemented through degree 2"),
            }
        }
        let _ = f_images;
        Ok(out)
    }
}

impl fmt::Display for DifferentialForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut wrote = false;
        for (tuple, coeff) in self.components() {
            if wrote {
                write!(f, " + ")?;
            }
            wrote = true;
            let basis: Vec<String> = tuple
                .iter()
                .map(|&i| format!("d{}", self.vars[i].name))
                .collect();
            if basis.is_empty() {
                write!(f, "{coeff}")?;
            } else {
                write!(f, "({}) {}", coeff, basis.join("^"))?;
            }
        }
        if !wrote {
            write!(f, "0")?;
        }
        Ok(())
    }
}
