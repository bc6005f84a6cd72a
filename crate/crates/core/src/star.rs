//! Star products on affine charts.
//!
//! A chart carries base coordinates `q` and fiber coordinates `p` with
//! Poisson bivector `P(df, dg) = sum_i (df/dq_i dg/dp_i - df/dp_i dg/dq_i)`,
//! so `{q_i, p_j} = delta_ij`. A star product is the deformed multiplication
//! `f * g = fg + sum_k h^k alpha_k(f, g)` with bidifferential coefficient
//! tables, defined up to a finite order. The Moyal product takes
//! `alpha_k = (1/2)^k / k! P^k`.
//!
//! `solve_beta1` finds the first-order correction of the coordinate pullback
//! that intertwines two star products across a chart transition: the map
//! `T(f) = pull(f) + h b1(pull(f))` with `b1` a vector field. The order-one
//! equation forces the derivation property (it is satisfied by every vector
//! field once the transition preserves the bivector), and the antisymmetric
//! part of the order-two equation is the genuine linear system; its kernel
//! is reported rather than gauge-fixed away, because the obstruction class
//! downstream has to be checked invariant under it.

use std::collections::BTreeMap;

use num::{BigInt, One};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::parse::{parse_rational, parse_series};
use crate::series::{qq, Mono, Q, ScalarSeries, Validity, Var, NEG_EXP_FLOOR};

fn default_cap() -> u32 {
    24
}

/// A named coordinate chart split into base and fiber coordinates.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChartSpec {
    pub name: String,
    #[serde(default)]
    pub base: Vec<String>,
    #[serde(default)]
    pub fiber: Vec<String>,
    #[serde(default = "default_cap")]
    pub cap: u32,
}

impl ChartSpec {
    pub fn coords(&self) -> Vec<String> {
        self.base.iter().chain(self.fiber.iter()).cloned().collect()
    }

    pub fn vars(&self) -> Vec<Var> {
        self.coords().iter().map(|c| Var::plain(c)).collect()
    }

    /// Chart variables with the given subset flagged invertible (overlap ring).
    pub fn overlap_vars(&self, invertible: &[String]) -> Vec<Var> {
        self.coords()
            .iter()
            .map(|c| {
                if invertible.contains(c) {
                    Var::inv(c)
                } else {
                    Var::plain(c)
                }
            })
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.base.len() + self.fiber.len()
    }

    pub fn pairs(&self) -> usize {
        self.base.len()
    }
}

/// A bidifferential operator: finite table of `(multi-index on f,
/// multi-index on g) -> coefficient`.
#[derive(Clone, Debug, PartialEq)]
pub struct BidiffOp {
    vars: Vec<Var>,
    cap: u32,
    terms: BTreeMap<(Vec<u32>, Vec<u32>), ScalarSeries>,
}

impl BidiffOp {
    pub fn zero(vars: &[Var], cap: u32) -> BidiffOp {
        BidiffOp { vars: vars.to_vec(), cap, terms: BTreeMap::new() }
    }

    pub fn add_term(&mut self, df: Vec<u32>, dg: Vec<u32>, coeff: ScalarSeries) -> Result<()> {
        if coeff.is_zero() {
            return Ok(());
        }
        let slot = self
            .terms
            .entry((df, dg))
            .or_insert_with(|| ScalarSeries::zero(&self.vars, self.cap, Validity::EXACT));
        *slot = slot.add(&coeff)?;
        if slot.is_zero() {
            self.terms.retain(|_, s| !s.is_zero());
        }
        Ok(())
    }

    pub fn terms(&self) -> impl Iterator<Item = (&(Vec<u32>, Vec<u32>), &ScalarSeries)> {
        self.terms.iter().filter(|(_, s)| !s.is_zero())
    }

    /// Largest derivative order appearing on either argument slot.
    pub fn max_order(&self) -> u32 {
        self.terms
            .keys()
            .flat_map(|(a, b)| {
                [a.iter().sum::<u32>(), b.iter().sum::<u32>()]
            })
            .max()
            .unwrap_or(0)
    }

    pub fn apply(&self, f: &ScalarSeries, g: &ScalarSeries) -> Result<ScalarSeries> {
        let names: Vec<String> = self.vars.iter().map(|v| v.name.clone()).collect();
        let mut out = ScalarSeries::zero(f.vars(), f.cap().min(g.cap()), f.validity().min(g.validity()));
        for ((df, dg), coeff) in self.terms() {
            let mut fd = f.clone();
            for (i, &e) in df.iter().enumerate() {
                for _ in 0..e {
                    fd = fd.differentiate(&names[i])?;
                }
            }
            if fd.is_zero() {
                continue;
            }
            let mut gd = g.clone();
            for (i, &e) in dg.iter().enumerate() {
                for _ in 0..e {
                    gd = gd.differentiate(&names[i])?;
                }
            }
            if gd.is_zero() {
                continue;
            }
            out = out.add(&coeff.mul(&fd)?.mul(&gd)?)?;
        }
        Ok(out)
    }
}

/// A star product on a chart, defined through a finite h-order.
#[derive(Clone, Debug)]
pub struct StarProduct {
    chart: ChartSpec,
    order: u32,
    /// `alphas[k-1]` is the coefficient of `h^k`, `k = 1..=order`.
    alphas: Vec<BidiffOp>,
    weyl_normalized: bool,
}

impl StarProduct {
    /// The Moyal product to the given order:
    /// `f * g = sum_k (h/2)^k / k! P^k(f, g)`.
    pub fn moyal(order: u32, chart: &ChartSpec) -> Result<StarProduct> {
        if order < 2 {
            return Err(Error::invalid("order", "star products need order >= 2"));
        }
        if chart.base.len() != chart.fiber.len() {
            return Err(Error::invalid(
                "chart",
                "the Moyal product needs matching base and fiber coordinates",
            ));
        }
        let n = chart.base.len();
        let vars = chart.vars();
        let dim = vars.len();
        let mut alphas = Vec::with_capacity(order as usize);
        for k in 1..=order {
            let mut op = BidiffOp::zero(&vars, chart.cap);
            // expand P^k multinomially over directed pair choices:
            // directions r (dq on f, dp on g) and s (dp on f, dq on g)
            for (r, s) in multi_index_pairs(n, k) {
                let stot: u32 = s.iter().sum();
                let mut denom = BigInt::from(2u32).pow(k);
                for i in 0..n {
                    denom *= factorial(r[i]) * factorial(s[i]);
                }
                let mut coeff = Q::new(BigInt::one(), denom);
                if stot % 2 == 1 {
                    coeff = -coeff;
                }
                let mut df = vec![0u32; dim];
                let mut dg = vec![0u32; dim];
                for i in 0..n {
                    df[i] += r[i];
                    df[n + i] += s[i];
                    dg[i] += s[i];
                    dg[n + i] += r[i];
                }
                op.add_term(df, dg, ScalarSeries::constant(&vars, chart.cap, Validity::EXACT, coeff))?;
            }
            alphas.push(op);
        }
        Ok(StarProduct { chart: chart.clone(), order, alphas, weyl_normalized: true })
    }

    pub fn from_tables(chart: &ChartSpec, order: u32, alphas: Vec<BidiffOp>) -> Result<StarProduct> {
        if order < 2 {
            return Err(Error::invalid("order", "star products need order >= 2"));
        }
        if alphas.len() != order as usize {
            return Err(Error::invalid(
                "alphas",
                format!("expected {order} tables, got {}", alphas.len()),
            ));
        }
        let reference = StarProduct::moyal(2.max(order), chart)?;
        let weyl_normalized = alphas[0] == reference.alphas[0];
        Ok(StarProduct { chart: chart.clone(), order, alphas, weyl_normalized })
    }

    pub fn chart(&self) -> &ChartSpec {
        &self.chart
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn is_weyl_normalized(&self) -> bool {
        self.weyl_normalized
    }

    pub fn alpha(&self, k: u32) -> &BidiffOp {
        &self.alphas[(k - 1) as usize]
    }

    /// Replace one coefficient table (used to build perturbed products in
    /// tests and scenario files); re-derives the normalization flag.
    pub fn with_alpha(&self, k: u32, op: BidiffOp) -> Result<StarProduct> {
        let mut alphas = self.alphas.clone();
        alphas[(k - 1) as usize] = op;
        StarProduct::from_tables(&self.chart, self.order, alphas)
    }

    fn check_chart(&self, f: &ScalarSeries) -> Result<()> {
        let names: Vec<&str> = f.vars().iter().map(|v| v.name.as_str()).collect();
        let expect: Vec<String> = self.chart.coords();
        if names != expect.iter().map(|s| s.as_str()).collect::<Vec<_>>() {
            return Err(Error::ChartMismatch {
                expected: expect.join(", "),
                got: names.join(", "),
            });
        }
        Ok(())
    }

    /// `f * g = fg + sum_k h^k alpha_k(f, g)`, truncated at the product's
    /// order of definition.
    pub fn apply(&self, f: &ScalarSeries, g: &ScalarSeries) -> Result<ScalarSeries> {
        self.check_chart(f)?;
        self.check_chart(g)?;
        let mut out = f.mul(g)?;
        for k in 1..=self.order {
            let term = self.alpha(k).apply(f, g)?;
            out = out.add(&term.mul_hbar(k))?;
        }
        Ok(out.truncate_hbar(self.order as i32))
    }

    /// Associativity defect `(f*g)*h - f*(g*h)`, truncated at the order of
    /// definition; zero iff the product is associative on this triple to
    /// that order.
    pub fn assoc_defect(
        &self,
        f: &ScalarSeries,
        g: &ScalarSeries,
        h: &ScalarSeries,
    ) -> Result<ScalarSeries> {
        let left = self.apply(&self.apply(f, g)?, h)?;
        let right = self.apply(f, &self.apply(g, h)?)?;
        left.sub(&right)
    }

    /// The antisymmetric part `(alpha_k(f,g) - alpha_k(g,f)) / 2`.
    pub fn alpha_antisym(&self, k: u32, f: &ScalarSeries, g: &ScalarSeries) -> Result<ScalarSeries> {
        let fg = self.alpha(k).apply(f, g)?;
        let gf = self.alpha(k).apply(g, f)?;
        Ok(fg.sub(&gf)?.scale(&qq(1, 2)))
    }
}

fn factorial(k: u32) -> BigInt {
    let mut f = BigInt::one();
    for i in 1..=k {
        f *= BigInt::from(i);
    }
    f
}

/// All pairs of multi-indices `(r, s)` of length `n` with `|r| + |s| = k`.
fn multi_index_pairs(n: usize, k: u32) -> Vec<(Vec<u32>, Vec<u32>)> {
    fn fill(slots: usize, total: u32, acc: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if slots == 1 {
            acc.push(total);
            out.push(acc.clone());
            acc.pop();
            return;
        }
        for v in 0..=total {
            acc.push(v);
            fill(slots - 1, total - v, acc, out);
            acc.pop();
        }
    }
    let mut singles = Vec::new();
    fill(2 * n, k, &mut Vec::new(), &mut singles);
    singles
        .into_iter()
        .map(|v| (v[..n].to_vec(), v[n..].to_vec()))
        .collect()
}

/// A vector field with series components, indexed like the chart variables.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    vars: Vec<Var>,
    components: Vec<ScalarSeries>,
}

impl VectorField {
    pub fn new(vars: &[Var], components: Vec<ScalarSeries>) -> Result<VectorField> {
        if components.len() != vars.len() {
            return Err(Error::MissingData(format!(
                "vector field needs {} components, got {}",
                vars.len(),
                components.len()
            )));
        }
        Ok(VectorField { vars: vars.to_vec(), components })
    }

    pub fn zero(vars: &[Var], cap: u32) -> VectorField {
        VectorField {
            vars: vars.to_vec(),
            components: vec![ScalarSeries::zero(vars, cap, Validity::EXACT); vars.len()],
        }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn components(&self) -> &[ScalarSeries] {
        &self.components
    }

    pub fn component(&self, name: &str) -> Option<&ScalarSeries> {
        self.vars
            .iter()
            .position(|v| v.name == name)
            .map(|i| &self.components[i])
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|c| c.is_zero())
    }

    pub fn add(&self, other: &VectorField) -> Result<VectorField> {
        let components = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.add(b))
            .collect::<Result<Vec<_>>>()?;
        VectorField::new(&self.vars, components)
    }

    pub fn scale(&self, c: &Q) -> VectorField {
        VectorField {
            vars: self.vars.clone(),
            components: self.components.iter().map(|s| s.scale(c)).collect(),
        }
    }

    /// Apply as a derivation: `sum_i A_i d_i f`.
    pub fn apply(&self, f: &ScalarSeries) -> Result<ScalarSeries> {
        let mut out = ScalarSeries::zero(f.vars(), f.cap(), f.validity());
        for (v, comp) in self.vars.iter().zip(&self.components) {
            if comp.is_zero() {
                continue;
            }
            out = out.add(&comp.mul(&f.differentiate(&v.name)?)?)?;
        }
        Ok(out)
    }

    /// Push forward along a coordinate change. `fwd` sends these
    /// coordinates into the target ring, `bwd` is its inverse; the result
    /// acts on target-chart functions.
    pub fn pushforward(
        &self,
        fwd: &BTreeMap<String, ScalarSeries>,
        bwd: &BTreeMap<String, ScalarSeries>,
        target_vars: &[Var],
        cap: u32,
    ) -> Result<VectorField> {
        let mut components = Vec::with_capacity(target_vars.len());
        for tv in target_vars {
            // (push k)(coord) = k(coord expressed in the source ring),
            // re-expressed back in the target coordinates
            let coord_in_src = match bwd.get(&tv.name) {
                Some(img) => img.clone(),
                None => ScalarSeries::variable(&self.vars, cap, Validity::EXACT, &tv.name)?,
            };
            let applied = self.apply(&coord_in_src)?;
            components.push(applied.substitute(fwd, target_vars, cap)?);
        }
        VectorField::new(target_vars, components)
    }
}

/// A transition between the star-product splittings of two charts:
/// the coordinate substitution together with the first- and second-order
/// corrections `a -> a + h b1(a) + h^2 b2(a)`. `b2` is carried for
/// forward compatibility with order-two gluing data; the first-order
/// obstruction pipeline reads only `b1`.
#[derive(Clone, Debug)]
pub struct TransitionMap {
    /// Images of the source chart coordinates in the target chart ring.
    pub coordinate_map: BTreeMap<String, ScalarSeries>,
    pub beta1: VectorField,
    pub beta2: Option<Vec<(Vec<u32>, ScalarSeries)>>,
}

/// Search window for the transition solver.
#[derive(Clone, Debug)]
pub struct SolveOptions {
    /// Max total degree of unknown component monomials.
    pub unknown_degree: i64,
    /// Most negative exponent allowed in unknown component monomials.
    pub unknown_floor: i32,
    /// Test functions run over monomials of total degree up to this (at
    /// least 2, and at least the largest derivative order in the tables).
    pub test_degree: i64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { unknown_degree: 4, unknown_floor: -4, test_degree: 2 }
    }
}

/// Solution of the first-order transition system.
#[derive(Clone, Debug)]
pub struct Beta1Solution {
    /// Minimal-support particular solution (free coordinates set to zero
    /// under the canonical deterministic elimination).
    pub field: VectorField,
    /// Basis of the homogeneous solutions within the search window.
    pub kernel: Vec<VectorField>,
}

/// Solve for the vector field `b1` making
/// `T(f) = pull(f) + h b1(pull f)` intertwine `src` and `dst` through
/// order one, using the antisymmetrised order-two equation as the linear
/// system (the order-one equation holds for every vector field once the
/// pullback preserves the bivector, which is checked as a precondition).
pub fn solve_beta1(
    src: &StarProduct,
    dst: &StarProduct,
    coord_map: &BTreeMap<String, ScalarSeries>,
    dst_overlap_vars: &[Var],
    opts: &SolveOptions,
) -> Result<Beta1Solution> {
    if !src.is_weyl_normalized() {
        return Err(Error::NotWeylNormalized(src.chart.name.clone()));
    }
    if !dst.is_weyl_normalized() {
        return Err(Error::NotWeylNormalized(dst.chart.name.clone()));
    }
    let cap = dst.chart.cap;
    let src_vars = src.chart.vars();

    // precondition: the pullback preserves the Poisson bivector, i.e. it
    // intertwines the alpha_1 tables on coordinate pairs
    let src_coords = src.chart.coords();
    for a in 0..src_coords.len() {
        for b in 0..src_coords.len() {
            let fa = ScalarSeries::variable(&src_vars, src.chart.cap, Validity::EXACT, &src_coords[a])?;
            let fb = ScalarSeries::variable(&src_vars, src.chart.cap, Validity::EXACT, &src_coords[b])?;
            let lhs = src
                .alpha(1)
                .apply(&fa, &fb)?
                .substitute(coord_map, dst_overlap_vars, cap)?;
            let pa = fa.substitute(coord_map, dst_overlap_vars, cap)?;
            let pb = fb.substitute(coord_map, dst_overlap_vars, cap)?;
            let rhs = dst.alpha(1).apply(&pa, &pb)?;
            if lhs != rhs {
                return Err(Error::NotSymplectic(format!(
                    "pullback does not preserve the bivector on ({}, {})",
                    src_coords[a], src_coords[b]
                )));
            }
        }
    }

    // unknown basis: one monomial per component within the window
    let unknown_basis = unknown_monomials(dst_overlap_vars, opts);
    let mut columns: Vec<(usize, Mono)> = Vec::new();
    for comp in 0..dst_overlap_vars.len() {
        for m in &unknown_basis {
            columns.push((comp, m.clone()));
        }
    }

    // test pairs on the source chart
    let tdeg = opts
        .test_degree
        .max(2)
        .max(src.alpha(2).max_order() as i64)
        .max(dst.alpha(2).max_order() as i64);
    let test_monos = test_monomials(&src_vars, tdeg);
    let mut rows: Vec<Vec<Q>> = Vec::new();
    let mut rhs: Vec<Q> = Vec::new();
    let mut row_index: BTreeMap<(usize, Mono), usize> = BTreeMap::new();

    for a in 0..test_monos.len() {
        for b in (a + 1)..test_monos.len() {
            let f = &test_monos[a];
            let g = &test_monos[b];
            let pf = f.substitute(coord_map, dst_overlap_vars, cap)?;
            let pg = g.substitute(coord_map, dst_overlap_vars, cap)?;
            // constant part: pull(alpha2_src^-)(f,g) - alpha2_dst^-(F,G)
            let const_part = src
                .alpha_antisym(2, f, g)?
                .substitute(coord_map, dst_overlap_vars, cap)?
                .sub(&dst.alpha_antisym(2, &pf, &pg)?)?;
            // linear part per unknown: k(alpha1(F,G)) - alpha1(kF,G) - alpha1(F,kG)
            let a1fg = dst.alpha(1).apply(&pf, &pg)?;
            let pair_key = rows.len(); // rows added lazily per monomial below
            let _ = pair_key;
            let mut col_values: Vec<ScalarSeries> = Vec::with_capacity(columns.len());
            for (comp, mono) in &columns {
                let field = unit_field(dst_overlap_vars, cap, *comp, mono)?;
                let term = field
                    .apply(&a1fg)?
                    .sub(&dst.alpha(1).apply(&field.apply(&pf)?, &pg)?)?
                    .sub(&dst.alpha(1).apply(&pf, &field.apply(&pg)?)?)?;
                col_values.push(term);
            }
            // assemble scalar rows per overlap monomial: const + sum x_e col = 0
            let mut monos: std::collections::BTreeSet<Mono> = std::collections::BTreeSet::new();
            for (m, _) in const_part.terms() {
                monos.insert(m.clone());
            }
            for cv in &col_values {
                for (m, _) in cv.terms() {
                    monos.insert(m.clone());
                }
            }
            for m in monos {
                let key = (rows.len(), m.clone());
                let _ = row_index.insert(key, rows.len());
                let mut row = Vec::with_capacity(columns.len());
                for cv in &col_values {
                    row.push(cv.coeff(&m));
                }
                rows.push(row);
                rhs.push(-const_part.coeff(&m));
            }
        }
    }

    let (solution, kernel) = linalg::solve(&rows, &rhs).ok_or(Error::NoSolution)?;
    let to_field = |coeffs: &[Q]| -> Result<VectorField> {
        let mut comps =
            vec![ScalarSeries::zero(dst_overlap_vars, cap, Validity::EXACT); dst_overlap_vars.len()];
        for ((comp, mono), c) in columns.iter().zip(coeffs) {
            comps[*comp].insert(mono.clone(), c.clone())?;
        }
        VectorField::new(dst_overlap_vars, comps)
    };
    let field = to_field(&solution)?;
    let kernel_fields = kernel
        .iter()
        .map(|k| to_field(k))
        .collect::<Result<Vec<_>>>()?;

    // residual check at order one: T(f*g) = T(f)*T(g) mod h^2
    for f in test_monos.iter().take(6) {
        for g in test_monos.iter().take(6) {
            let defect = order_one_defect(src, dst, coord_map, dst_overlap_vars, &field, f, g)?;
            if !defect.is_zero() {
                return Err(Error::NoSolution);
            }
        }
    }

    Ok(Beta1Solution { field, kernel: kernel_fields })
}

/// The order-one intertwining defect of `T = (1 + h b1) o pull` on a pair,
/// truncated past `h^1`.
pub fn order_one_defect(
    src: &StarProduct,
    dst: &StarProduct,
    coord_map: &BTreeMap<String, ScalarSeries>,
    dst_overlap_vars: &[Var],
    beta1: &VectorField,
    f: &ScalarSeries,
    g: &ScalarSeries,
) -> Result<ScalarSeries> {
    let cap = dst.chart.cap;
    let transport = |u: &ScalarSeries| -> Result<ScalarSeries> {
        let pulled = u.substitute(coord_map, dst_overlap_vars, cap)?;
        pulled.add(&beta1.apply(&pulled)?.mul_hbar(1))
    };
    let lhs = transport(&src.apply(f, g)?)?;
    // the dst-side product is applied to transported arguments whose chart
    // is the overlap ring; compare tables directly rather than via apply()
    let tf = transport(f)?;
    let tg = transport(g)?;
    let mut rhs = tf.mul(&tg)?;
    for k in 1..=dst.order() {
        rhs = rhs.add(&dst.alpha(k).apply(&tf, &tg)?.mul_hbar(k))?;
    }
    Ok(lhs.sub(&rhs)?.truncate_hbar(1))
}

fn unknown_monomials(vars: &[Var], opts: &SolveOptions) -> Vec<Mono> {
    let mut out = Vec::new();
    let dims = vars.len();
    let mut exps = vec![0i32; dims];
    fn rec(
        vars: &[Var],
        opts: &SolveOptions,
        slot: usize,
        exps: &mut Vec<i32>,
        out: &mut Vec<Mono>,
    ) {
        if slot == vars.len() {
            let total: i64 = exps.iter().map(|&e| e as i64).sum();
            if total <= opts.unknown_degree {
                out.push(Mono { exps: exps.clone(), hpow: 0 });
            }
            return;
        }
        let lo = if vars[slot].invertible {
            opts.unknown_floor.max(NEG_EXP_FLOOR)
        } else {
            0
        };
        for e in lo..=(opts.unknown_degree as i32) {
            exps[slot] = e;
            rec(vars, opts, slot + 1, exps, out);
        }
        exps[slot] = 0;
    }
    rec(vars, opts, 0, &mut exps, &mut out);
    out.sort();
    out
}

fn test_monomials(vars: &[Var], max_degree: i64) -> Vec<ScalarSeries> {
    let dims = vars.len();
    let mut out = Vec::new();
    let mut exps = vec![0i32; dims];
    fn rec(
        vars: &[Var],
        max_degree: i64,
        slot: usize,
        exps: &mut Vec<i32>,
        out: &mut Vec<ScalarSeries>,
    ) {
        if slot == vars.len() {
            let total: i64 = exps.iter().map(|&e| e as i64).sum();
            if total <= max_degree {
                let mut s = ScalarSeries::zero(vars, 24, Validity::EXACT);
                let _ = s.insert(Mono { exps: exps.clone(), hpow: 0 }, Q::one());
                out.push(s);
            }
            return;
        }
        for e in 0..=(max_degree as i32) {
            exps[slot] = e;
            rec(vars, max_degree, slot + 1, exps, out);
        }
        exps[slot] = 0;
    }
    rec(vars, max_degree, 0, &mut exps, &mut out);
    out
}

fn unit_field(vars: &[Var], cap: u32, comp: usize, mono: &Mono) -> Result<VectorField> {
    let mut comps = vec![ScalarSeries::zero(vars, cap, Validity::EXACT); vars.len()];
    comps[comp].insert(mono.clone(), Q::one())?;
    VectorField::new(vars, comps)
}

// ---------------------------------------------------------------------------
// file descriptors
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AlphaTermSpec {
    pub df: Vec<u32>,
    pub dg: Vec<u32>,
    pub coeff: String,
}

/// JSON descriptor of a star product: either `"moyal": true` or explicit
/// per-order coefficient tables.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StarSpec {
    pub chart: ChartSpec,
    #[serde(default = "default_order")]
    pub order: u32,
    #[serde(default)]
    pub moyal: bool,
    #[serde(default)]
    pub alphas: Vec<Vec<AlphaTermSpec>>,
}

fn default_order() -> u32 {
    2
}

impl StarSpec {
    pub fn build(&self) -> Result<StarProduct> {
        if self.moyal || self.alphas.is_empty() {
            return StarProduct::moyal(self.order, &self.chart);
        }
        let vars = self.chart.vars();
        let dim = vars.len();
        let mut tables = Vec::new();
        for level in &self.alphas {
            let mut op = BidiffOp::zero(&vars, self.chart.cap);
            for term in level {
                if term.df.len() != dim || term.dg.len() != dim {
                    return Err(Error::invalid("alphas", "multi-index length mismatch"));
                }
                let coeff = parse_series(&term.coeff, &vars, self.chart.cap, Validity::EXACT)?;
                op.add_term(term.df.clone(), term.dg.clone(), coeff)?;
            }
            tables.push(op);
        }
        StarProduct::from_tables(&self.chart, self.order, tables)
    }
}

/// JSON descriptor of a chart transition for the standalone solver CLI.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MapSpec {
    #[serde(default)]
    pub invertible: Vec<String>,
    /// Source coordinate -> literal over the destination chart.
    pub map: BTreeMap<String, String>,
    #[serde(default)]
    pub beta1: BTreeMap<String, String>,
    #[serde(default)]
    pub beta2: Vec<(Vec<u32>, String)>,
}

impl MapSpec {
    pub fn coordinate_images(
        &self,
        dst_vars: &[Var],
        cap: u32,
    ) -> Result<BTreeMap<String, ScalarSeries>> {
        let mut out = BTreeMap::new();
        for (name, lit) in &self.map {
            out.insert(name.clone(), parse_series(lit, dst_vars, cap, Validity::EXACT)?);
        }
        Ok(out)
    }

    pub fn beta1_field(&self, dst_vars: &[Var], cap: u32) -> Result<Option<VectorField>> {
        if self.beta1.is_empty() {
            return Ok(None);
        }
        let mut comps = vec![ScalarSeries::zero(dst_vars, cap, Validity::EXACT); dst_vars.len()];
        for (name, lit) in &self.beta1 {
            let idx = dst_vars
                .iter()
                .position(|v| v.name == *name)
                .ok_or_else(|| Error::UnknownVariable(name.clone()))?;
            comps[idx] = parse_series(lit, dst_vars, cap, Validity::EXACT)?;
        }
        Ok(Some(VectorField::new(dst_vars, comps)?))
    }
}

/// Poisson bracket of two functions on a star chart (reads the bivector
/// off the chart's base/fiber split).
pub fn chart_poisson(chart: &ChartSpec, f: &ScalarSeries, g: &ScalarSeries) -> Result<ScalarSeries> {
    let mut out = ScalarSeries::zero(f.vars(), f.cap().min(g.cap()), f.validity().min(g.validity()));
    for (qn, pn) in chart.base.iter().zip(&chart.fiber) {
        let t1 = f.differentiate(qn)?.mul(&g.differentiate(pn)?)?;
        let t2 = f.differentiate(pn)?.mul(&g.differentiate(qn)?)?;
        out = out.add(&t1.sub(&t2)?)?;
    }
    Ok(out)
}

pub fn parse_rational_str(src: &str) -> Result<Q> {
    parse_rational(src)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::qint;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn qp_chart() -> ChartSpec {
        ChartSpec {
            name: "U".into(),
            base: vec!["q".into()],
            fiber: vec!["p".into()],
            cap: 24,
        }
    }

    fn lit(chart: &ChartSpec, src: &str) -> ScalarSeries {
        parse_series(src, &chart.vars(), chart.cap, Validity::EXACT).unwrap()
    }

    #[test]
    fn moyal_basics() {
        let chart = qp_chart();
        let star = StarProduct::moyal(2, &chart).unwrap();
        let q = lit(&chart, "q");
        let p = lit(&chart, "p");

        // q * p = qp + h/2
        assert_eq!(star.apply(&q, &p).unwrap(), lit(&chart, "q p + 1/2 h"));
        // unit axiom
        let f = lit(&chart, "q^2 p - 3 q");
        assert_eq!(star.apply(&f, &lit(&chart, "1")).unwrap(), f);
        // q * p - p * q = h
        let com = star.apply(&q, &p).unwrap().sub(&star.apply(&p, &q).unwrap()).unwrap();
        assert_eq!(com, lit(&chart, "h"));
    }

    #[test]
    fn moyal_second_order_example() {
        let chart = qp_chart();
        let star = StarProduct::moyal(2, &chart).unwrap();
        let f = lit(&chart, "q^2");
        let g = lit(&chart, "p^2");
        assert_eq!(
            star.apply(&f, &g).unwrap(),
            lit(&chart, "q^2 p^2 + 2 h q p + 1/2 h^2")
        );

        // a product with alpha_2 = 0 keeps only the first-order term
        let zeroed = star
            .with_alpha(2, BidiffOp::zero(&chart.vars(), chart.cap))
            .unwrap();
        assert_eq!(
            zeroed.apply(&f, &g).unwrap(),
            lit(&chart, "q^2 p^2 + 2 h q p")
        );
    }

    #[test]
    fn moyal_is_associative_on_low_degrees() {
        let chart = qp_chart();
        for order in [2u32, 3] {
            let star = StarProduct::moyal(order, &chart).unwrap();
            let monos = test_monomials(&chart.vars(), 3);
            for f in &monos {
                for g in &monos {
                    for h in &monos {
                        assert!(star.assoc_defect(f, g, h).unwrap().is_zero());
                    }
                }
            }
        }
    }

    #[test]
    fn perturbed_alpha2_breaks_associativity() {
        // add the non-closed term (f, g) -> q * df/dq * dg/dp to alpha_2.
        // A (1,1)-bidifferential term is a Hochschild cocycle, so the h^2
        // coefficient of the defect still cancels; the failure shows up in
        // the h^3 cross terms with alpha_1, hence the order-3 product.
        let chart = qp_chart();
        let star = StarProduct::moyal(3, &chart).unwrap();
        let mut bad = star.alpha(2).clone();
        bad.add_term(vec![1, 0], vec![0, 1], lit(&chart, "q")).unwrap();
        let perturbed = star.with_alpha(2, bad).unwrap();
        let monos = test_monomials(&chart.vars(), 2);
        let mut found = false;
        'search: for f in &monos {
            for g in &monos {
                for h in &monos {
                    if !perturbed.assoc_defect(f, g, h).unwrap().is_zero() {
                        found = true;
                        break 'search;
                    }
                }
            }
        }
        assert!(found);
        // and the trivial triple stays associative
        let one = lit(&chart, "1");
        assert!(perturbed.assoc_defect(&one, &one, &one).unwrap().is_zero());
    }

    #[test]
    fn star_commutator_recovers_the_bracket() {
        let chart = qp_chart();
        let star = StarProduct::moyal(2, &chart).unwrap();
        let mut rng = StdRng::seed_from_u64(41);
        let vars = chart.vars();
        for _ in 0..25 {
            let mut f = ScalarSeries::zero(&vars, chart.cap, Validity::EXACT);
            let mut g = ScalarSeries::zero(&vars, chart.cap, Validity::EXACT);
            for _ in 0..4 {
                let _ = f.insert(
                    Mono { exps: vec![rng.gen_range(0..4), rng.gen_range(0..4)], hpow: 0 },
                    qint(rng.gen_range(-3..=3)),
                );
                let _ = g.insert(
                    Mono { exps: vec![rng.gen_range(0..4), rng.gen_range(0..4)], hpow: 0 },
                    qint(rng.gen_range(-3..=3)),
                );
            }
            let com = star
                .apply(&f, &g)
                .unwrap()
                .sub(&star.apply(&g, &f).unwrap())
                .unwrap()
                .div_hbar(1)
                .unwrap()
                .hbar_slice(0);
            let classical = chart_poisson(&chart, &f, &g).unwrap();
            assert_eq!(com, classical);
        }
    }

    #[test]
    fn moyal_alpha2_is_symmetric() {
        let chart = qp_chart();
        let star = StarProduct::moyal(2, &chart).unwrap();
        let mut rng = StdRng::seed_from_u64(43);
        let vars = chart.vars();
        for _ in 0..25 {
            let mut f = ScalarSeries::zero(&vars, chart.cap, Validity::EXACT);
            let mut g = ScalarSeries::zero(&vars, chart.cap, Validity::EXACT);
            for _ in 0..4 {
                let _ = f.insert(
                    Mono { exps: vec![rng.gen_range(0..4), rng.gen_range(0..4)], hpow: 0 },
                    qint(rng.gen_range(-3..=3)),
                );
                let _ = g.insert(
                    Mono { exps: vec![rng.gen_range(0..4), rng.gen_range(0..4)], hpow: 0 },
                    qint(rng.gen_range(-3..=3)),
                );
            }
            assert!(star.alpha_antisym(2, &f, &g).unwrap().is_zero());
        }
    }

    fn sq_chart() -> ChartSpec {
        ChartSpec {
            name: "V".into(),
            base: vec!["s".into()],
            fiber: vec!["q".into()],
            cap: 24,
        }
    }

    #[test]
    fn solve_beta1_identity_map() {
        let chart = qp_chart();
        let star = StarProduct::moyal(2, &chart).unwrap();
        let vars = chart.vars();
        let mut map = BTreeMap::new();
        map.insert("q".to_string(), lit(&chart, "q"));
        map.insert("p".to_string(), lit(&chart, "p"));
        let sol = solve_beta1(&star, &star, &map, &vars, &SolveOptions::default()).unwrap();
        assert!(sol.field.is_zero());
        assert!(!sol.kernel.is_empty());
    }

    #[test]
    fn solve_beta1_linear_symplectic_map() {
        // (q, p) -> (2q, p/2) preserves the bracket; the minimal solution
        // stays zero because the Moyal product is natural for it
        let chart = qp_chart();
        let star = StarProduct::moyal(2, &chart).unwrap();
        let vars = chart.vars();
        let mut map = BTreeMap::new();
        map.insert("q".to_string(), lit(&chart, "2 q"));
        map.insert("p".to_string(), lit(&chart, "1/2 p"));
        let sol = solve_beta1(&star, &star, &map, &vars, &SolveOptions::default()).unwrap();
        assert!(sol.field.is_zero());
    }

    #[test]
    fn solve_beta1_rejects_non_symplectic_maps() {
        let chart = qp_chart();
        let star = StarProduct::moyal(2, &chart).unwrap();
        let vars = chart.vars();
        let mut map = BTreeMap::new();
        map.insert("q".to_string(), lit(&chart, "2 q"));
        map.insert("p".to_string(), lit(&chart, "p"));
        assert!(matches!(
            solve_beta1(&star, &star, &map, &vars, &SolveOptions::default()),
            Err(Error::NotSymplectic(_))
        ));
    }

    #[test]
    fn solve_beta1_cotangent_line_transition() {
        // the standard two-chart cotangent transition
        // (t, p) -> (1/s, -s^2 q); both charts Moyal
        let tp = ChartSpec {
            name: "U0".into(),
            base: vec!["t".into()],
            fiber: vec!["p".into()],
            cap: 24,
        };
        let sq = sq_chart();
        let src = StarProduct::moyal(2, &tp).unwrap();
        let dst = StarProduct::moyal(2, &sq).unwrap();
        let overlap = sq.overlap_vars(&["s".to_string()]);
        let mut map = BTreeMap::new();
        map.insert(
            "t".to_string(),
            parse_series("s^-1", &overlap, sq.cap, Validity::EXACT).unwrap(),
        );
        map.insert(
            "p".to_string(),
            parse_series("-s^2 q", &overlap, sq.cap, Validity::EXACT).unwrap(),
        );
        let sol = solve_beta1(&src, &dst, &map, &overlap, &SolveOptions::default()).unwrap();
        // the Moyal halves glue with no first-order correction; the solver
        // reports the residual gauge freedom instead of fixing it
        assert!(sol.field.is_zero());
        assert!(!sol.kernel.is_empty());
        // the returned field leaves no order-one defect
        let f = parse_series("t^2", &tp.vars(), tp.cap, Validity::EXACT).unwrap();
        let g = parse_series("t p", &tp.vars(), tp.cap, Validity::EXACT).unwrap();
        let defect =
            order_one_defect(&src, &dst, &map, &overlap, &sol.field, &f, &g).unwrap();
        assert!(defect.is_zero());
    }

    #[test]
    fn solver_requires_weyl_normalized_products() {
        let chart = qp_chart();
        let star = StarProduct::moyal(2, &chart).unwrap();
        let denormalized = star
            .with_alpha(1, BidiffOp::zero(&chart.vars(), chart.cap))
            .unwrap();
        assert!(!denormalized.is_weyl_normalized());
        let vars = chart.vars();
        let mut map = BTreeMap::new();
        map.insert("q".to_string(), lit(&chart, "q"));
        map.insert("p".to_string(), lit(&chart, "p"));
        assert!(matches!(
            solve_beta1(&denormalized, &star, &map, &vars, &SolveOptions::default()),
            Err(Error::NotWeylNormalized(_))
        ));
    }

    #[test]
    fn unreachable_antisymmetric_data_has_no_solution() {
        // perturb the destination's alpha_2 by an antisymmetric (2,2)-term:
        // no vector field produces a second-order antisymmetric defect, so
        // the system is inconsistent
        let chart = qp_chart();
        let src = StarProduct::moyal(2, &chart).unwrap();
        let mut bad = src.alpha(2).clone();
        bad.add_term(vec![2, 0], vec![0, 2], lit(&chart, "1")).unwrap();
        bad.add_term(vec![0, 2], vec![2, 0], lit(&chart, "-1")).unwrap();
        let dst = src.with_alpha(2, bad).unwrap();
        assert!(dst.is_weyl_normalized());
        let vars = chart.vars();
        let mut map = BTreeMap::new();
        map.insert("q".to_string(), lit(&chart, "q"));
        map.insert("p".to_string(), lit(&chart, "p"));
        assert!(matches!(
            solve_beta1(&src, &dst, &map, &vars, &SolveOptions::default()),
            Err(Error::NoSolution)
        ));
    }

    #[test]
    fn kernel_contains_hamiltonian_fields() {
        // X_H for H in the overlap ring is symplectic, hence homogeneous
        // for the order-two system; verify a sample lies in the row kernel
        let tp = ChartSpec {
            name: "U0".into(),
            base: vec!["t".into()],
            fiber: vec!["p".into()],
            cap: 24,
        };
        let sq = sq_chart();
        let src = StarProduct::moyal(2, &tp).unwrap();
        let dst = StarProduct::moyal(2, &sq).unwrap();
        let overlap = sq.overlap_vars(&["s".to_string()]);
        let mut map = BTreeMap::new();
        map.insert(
            "t".to_string(),
            parse_series("s^-1", &overlap, sq.cap, Validity::EXACT).unwrap(),
        );
        map.insert(
            "p".to_string(),
            parse_series("-s^2 q", &overlap, sq.cap, Validity::EXACT).unwrap(),
        );
        // H = s^2 q: X_H = (dH/dq) d_s - (dH/ds) d_q
        let h = parse_series("s^2 q", &overlap, sq.cap, Validity::EXACT).unwrap();
        let xh = VectorField::new(
            &overlap,
            vec![
                h.differentiate("q").unwrap(),
                h.differentiate("s").unwrap().neg(),
            ],
        )
        .unwrap();
        let sol = solve_beta1(&src, &dst, &map, &overlap, &SolveOptions::default()).unwrap();
        // field + X_H still solves the order-one equation
        let shifted = sol.field.add(&xh).unwrap();
        let f = parse_series("t p", &tp.vars(), tp.cap, Validity::EXACT).unwrap();
        let g = parse_series("t^2 p", &tp.vars(), tp.cap, Validity::EXACT).unwrap();
        let defect = order_one_defect(&src, &dst, &map, &overlap, &shifted, &f, &g).unwrap();
        assert!(defect.is_zero());
    }
}
