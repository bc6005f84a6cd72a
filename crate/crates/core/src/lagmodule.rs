//! The standard module over the homogeneous Weyl algebra and the
//! constructive trivialisation of flat module data.
//!
//! The module is `k[[x_1..x_n, h]]` with `x_i` acting by multiplication,
//! `h` by multiplication, and `y_j` by `h d_j`; its generator is the
//! constant `1`. Candidate flat module structures are described by the
//! images `y_j(1) = f_j * 1` with each `f_j` divisible by `h`; when such
//! data is integrable the element `e^{-g} * 1`, with `g` a primitive of the
//! quotients `f_j / h`, is annihilated by every `y_j`, which exhibits the
//! data as isomorphic to the standard module. The integrability check, the
//! integration, and the final annihilation check are all exact.


use serde::Serialize;

use crate::error::{Error, Result};
use crate::series::{qq, Q, ScalarSeries, Validity, Var};
use crate::weyl::{sigma_embed, SpMatrix, WeylElement, WeylMono};

/// Variables of the module chart: `x1..xn`, none invertible.
pub fn module_vars(n: usize) -> Vec<Var> {
    (1..=n).map(|i| Var::plain(&format!("x{i}"))).collect()
}

/// An element `u * 1` of the standard module: a series in `x_1..x_n, h`
/// with no negative `h`-powers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModuleElement {
    series: ScalarSeries,
    n: usize,
}

impl ModuleElement {
    pub fn new(n: usize, series: ScalarSeries) -> Result<ModuleElement> {
        let expect = module_vars(n);
        if series.vars() != expect.as_slice() {
            return Err(Error::ChartMismatch {
                expected: expect.iter().map(|v| v.name.clone()).collect::<Vec<_>>().join(", "),
                got: series.vars().iter().map(|v| v.name.clone()).collect::<Vec<_>>().join(", "),
            });
        }
        if series.min_hpow().unwrap_or(0) < 0 {
            return Err(Error::IllDefinedAction);
        }
        Ok(ModuleElement { series, n })
    }

    pub fn one(n: usize, cap: u32, validity: Validity) -> ModuleElement {
        ModuleElement { series: ScalarSeries::one(&module_vars(n), cap, validity), n }
    }

    pub fn series(&self) -> &ScalarSeries {
        &self.series
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_zero(&self) -> bool {
        self.series.is_zero()
    }

    /// Lift back to a normal-ordered Weyl element (pure `x`-part).
    pub fn to_weyl(&self) -> WeylElement {
        let mut out = WeylElement::zero(self.n, self.series.validity());
        for (m, c) in self.series.terms() {
            let xs: Vec<u32> = m.exps.iter().map(|&e| e as u32).collect();
            let _ = out.insert(WeylMono { xs, ys: vec![0; self.n], hpow: m.hpow }, c.clone());
        }
        out
    }
}

/// Apply a Weyl element to a module element: `x_i` multiplies, `y_j` acts
/// as `h d_j`, `h` multiplies; monomials act in normal order (all `y`
/// first). An `h^-1` part is admitted only when it cancels against the `h`
/// produced by its `y`-factors, otherwise the action is ill-defined.
pub fn act(u: &WeylElement, v: &ModuleElement) -> Result<ModuleElement> {
    if u.n() != v.n() {
        return Err(Error::RankMismatch(u.n(), v.n()));
    }
    let n = v.n();
    let vars = module_vars(n);
    let cap = v.series.cap();
    let u_min = u.min_hpow().unwrap_or(0).min(0);
    let validity = u.validity().min(v.series.validity().shift_down(-u_min));
    let mut acc = ScalarSeries::zero(&vars, cap, validity);
    for (m, c) in u.terms() {
        // y^b(v) = h^{|b|} d^b v, then multiply by x^a and h^k
        let mut piece = v.series.clone();
        let mut hshift = m.hpow;
        for (j, &b) in m.ys.iter().enumerate() {
            for _ in 0..b {
                piece = piece.differentiate(&format!("x{}", j + 1))?;
            }
            hshift += b as i32;
        }
        for (i, &a) in m.xs.iter().enumerate() {
            if a > 0 {
                let xi = ScalarSeries::variable(&vars, cap, validity, &format!("x{}", i + 1))?;
                piece = piece.mul(&xi.pow(a)?)?;
            }
        }
        if hshift >= 0 {
            piece = piece.mul_hbar(hshift as u32);
        } else {
            piece = piece.div_hbar(-hshift).map_err(|_| Error::IllDefinedAction)?;
        }
        acc = acc.add(&piece.scale(c).with_window(cap, validity))?;
    }
    if acc.min_hpow().unwrap_or(0) < 0 {
        return Err(Error::IllDefinedAction);
    }
    ModuleElement::new(n, acc)
}

/// Outcome of evaluating `sigma(a)` on the module generator for a matrix
/// stabilising `span(y)`.
#[derive(Clone, Debug, Serialize)]
pub struct SigmaWeight {
    /// The scalar computed by direct normal-ordered evaluation of
    /// `sigma(a)` on the generator.
    pub eigenvalue: String,
    /// Half the trace of the upper-left block; agrees with the computed
    /// eigenvalue and is reported as the cross-check.
    pub half_trace_upper_block: String,
    /// Half the trace of the restriction to `span(y)` — the convention the
    /// weight is usually stated in. It differs by sign from the direct
    /// computation; both values are surfaced rather than reconciled.
    pub stated_half_trace_on_annihilated: String,
}

/// The rational weight `lambda` with `act(sigma(a), 1) = lambda * 1`,
/// computed by direct evaluation (not by a trace formula), together with
/// the trace cross-checks.
pub fn sigma_weight(a: &SpMatrix) -> Result<(Q, SigmaWeight)> {
    if !a.is_parabolic() {
        return Err(Error::NotParabolic(
            "upper-right block must vanish for the action on span(y) to descend".into(),
        ));
    }
    let n = a.n();
    let one = ModuleElement::one(n, 4, Validity::order(2));
    let s = sigma_embed(a)?;
    let image = act(&s, &one)?;
    let lambda = image.series().constant_term();
    let check = one.series().scale(&lambda);
    if image.series() != &check {
        return Err(Error::NotParabolic(
            "sigma(a) does not act by a scalar on the generator".into(),
        ));
    }
    let report = SigmaWeight {
        eigenvalue: lambda.to_string(),
        half_trace_upper_block: (a.upper_left_trace() * qq(1, 2)).to_string(),
        stated_half_trace_on_annihilated: (a.trace_on_y_span() * qq(1, 2)).to_string(),
    };
    Ok((lambda, report))
}

/// Candidate flat module data: `y_j(1) = f_j * 1` with `f_j` divisible by `h`.
#[derive(Clone, Debug)]
pub struct ModuleData {
    n: usize,
    action_of_y: Vec<ScalarSeries>,
}

impl ModuleData {
    pub fn new(n: usize, action_of_y: Vec<ScalarSeries>) -> Result<ModuleData> {
        if action_of_y.len() != n {
            return Err(Error::invalid(
                "action_of_y",
                format!("expected {n} components, got {}", action_of_y.len()),
            ));
        }
        let vars = module_vars(n);
        for (j, f) in action_of_y.iter().enumerate() {
            if f.vars() != vars.as_slice() {
                return Err(Error::invalid(
                    "action_of_y",
                    format!("component {} is not a series in x1..x{n}", j + 1),
                ));
            }
            if !f.is_zero() && (f.min_hpow().unwrap_or(1) < 1) {
                return Err(Error::invalid(
                    "action_of_y",
                    format!("f_{} is not divisible by h", j + 1),
                ));
            }
        }
        Ok(ModuleData { n, action_of_y })
    }

    pub fn trivial(n: usize, cap: u32, validity: Validity) -> ModuleData {
        ModuleData {
            n,
            action_of_y: (0..n)
                .map(|_| ScalarSeries::zero(&module_vars(n), cap, validity))
                .collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn components(&self) -> &[ScalarSeries] {
        &self.action_of_y
    }

    pub fn cap(&self) -> u32 {
        self.action_of_y.iter().map(|f| f.cap()).min().unwrap_or(4)
    }

    pub fn validity(&self) -> Validity {
        self.action_of_y
            .iter()
            .fold(Validity::EXACT, |v, f| v.min(f.validity()))
    }

    /// The data's own action of `y_j` on a module element:
    /// `y_j(u * 1) = (h d_j u + f_j u) * 1`.
    pub fn act_y(&self, j: usize, v: &ModuleElement) -> Result<ModuleElement> {
        let xj = format!("x{}", j + 1);
        let deriv = v.series().differentiate(&xj)?.mul_hbar(1);
        let mult = self.action_of_y[j].mul(v.series())?;
        ModuleElement::new(self.n, deriv.add(&mult)?)
    }
}

/// Exactness window of the annihilation check of a lift: everything at or
/// below this x-degree is certified exactly; the cap boundary itself is not
/// determined by truncated data.
#[derive(Clone, Debug, Serialize)]
pub struct LiftVerification {
    pub annihilated_through_degree: i64,
    pub hbar_order: Option<i32>,
}

/// The trivialising data produced by [`lift_module`].
#[derive(Clone, Debug)]
pub struct LiftResult {
    /// Integrated potential: zero constant term, contained in the ideal
    /// `(x_1..x_n)`.
    pub g: ScalarSeries,
    /// The annihilated generator `e^{-g} * 1`.
    pub m: ModuleElement,
    pub verification: LiftVerification,
}

/// Trivialise integrable module data.
///
/// Steps: divide each `f_j` by `h`; verify the mixed partials of the
/// quotients agree (the condition forced by `y_i y_j = y_j y_i`); integrate
/// to a potential `g` with zero constant term; return `m = e^{-g} * 1`.
/// The returned element satisfies `y_j(m) = 0` under the data's action,
/// exactly through the verification window.
pub fn lift_module(data: &ModuleData) -> Result<LiftResult> {
    let n = data.n;
    let cap = data.cap();
    let validity = data.validity();
    // work one degree above the data cap so the integration and the final
    // derivative check lose nothing at the data's own degrees
    let wcap = cap + 1;
    let mut quotients = Vec::with_capacity(n);
    for f in &data.action_of_y {
        quotients.push(f.with_window(wcap, validity).div_hbar(1)?);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let dij = quotients[j].differentiate(&format!("x{}", i + 1))?;
            let dji = quotients[i].differentiate(&format!("x{}", j + 1))?;
            if dij != dji {
                return Err(Error::NotIntegrable(format!(
                    "d_{} g_{} != d_{} g_{}",
                    i + 1,
                    j + 1,
                    j + 1,
                    i + 1
                )));
            }
        }
    }
    let names: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let g = crate::series::integrate_path(&quotients, &name_refs).map_err(|e| match e {
        Error::NotClosed { i, j } => Error::NotIntegrable(format!(
            "d_{} g_{} != d_{} g_{}",
            i + 1,
            j + 1,
            j + 1,
            i + 1
        )),
        other => other,
    })?;
    let m = ModuleElement::new(n, g.neg().exp()?)?;
    // annihilation check, exact through the data cap
    for (j, f) in data.action_of_y.iter().enumerate() {
        let f = f.with_window(wcap, validity);
        let deriv = m.series().differentiate(&format!("x{}", j + 1))?.mul_hbar(1);
        let residual = deriv.add(&f.mul(m.series())?)?;
        if !residual.is_zero_to_degree(cap as i64) {
            return Err(Error::NotIntegrable(format!(
                "lifted generator is not annihilated by y_{}",
                j + 1
            )));
        }
    }
    Ok(LiftResult {
        g: g.clone(),
        m,
        verification: LiftVerification {
            annihilated_through_degree: cap as i64,
            hbar_order: validity.0,
        },
    })
}

/// Twist module data by a closed 1-form `sum a_i dx_i`:
/// `f_j -> f_j + h a_j`. Twisting preserves integrability.
pub fn twist_action(data: &ModuleData, a: &[ScalarSeries]) -> Result<ModuleData> {
    let n = data.n;
    if a.len() != n {
        return Err(Error::MissingData(format!(
            "twist needs {n} components, got {}",
            a.len()
        )));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let dij = a[j].differentiate(&format!("x{}", i + 1))?;
            let dji = a[i].differentiate(&format!("x{}", j + 1))?;
            if dij != dji {
                return Err(Error::NotClosed { i, j });
            }
        }
    }
    let twisted: Vec<ScalarSeries> = data
        .action_of_y
        .iter()
        .zip(a)
        .map(|(f, ai)| f.add(&ai.mul_hbar(1)))
        .collect::<Result<_>>()?;
    ModuleData::new(n, twisted)
}

/// The executable form of the correction identity relating the composite
/// action of `sigma(a)` on the module to the derivation action plus the
/// scalar weight:
///
/// ```text
/// act(sigma(a), v)  =  theta_M(a)(v) + weight(a) * v
/// ```
///
/// where `theta_M(a)(u * 1) := [sigma(a), u] * 1`. Returns whether the two
/// sides agree exactly.
pub fn verify_error_identity(a: &SpMatrix, v: &ModuleElement) -> Result<bool> {
    if !a.is_parabolic() {
        return Err(Error::NotParabolic(
            "upper-right block must vanish for theta_M to be defined".into(),
        ));
    }
    let s = sigma_embed(a)?;
    let lhs = act(&s, v)?;
    let lifted = v.to_weyl();
    let theta = s.bracket(&lifted)?;
    let one = ModuleElement::one(v.n(), v.series().cap(), v.series().validity());
    let theta_m = act(&theta, &one)?;
    let (lambda, _) = sigma_weight(a)?;
    let rhs = theta_m.series().add(&v.series().scale(&lambda))?;
    Ok(lhs.series() == &rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num::Zero;
    use crate::parse::parse_series;
    use crate::series::{qint, Mono};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn me(n: usize, src: &str, cap: u32, val: Validity) -> ModuleElement {
        ModuleElement::new(n, parse_series(src, &module_vars(n), cap, val).unwrap()).unwrap()
    }

    #[test]
    fn generator_is_annihilated() {
        let one = ModuleElement::one(1, 6, Validity::order(3));
        let y = WeylElement::y(1, 0, Validity::EXACT);
        assert!(act(&y, &one).unwrap().is_zero());
    }

    #[test]
    fn y_acts_as_h_d() {
        let v = me(1, "x1^2", 6, Validity::order(3));
        let y = WeylElement::y(1, 0, Validity::EXACT);
        assert_eq!(act(&y, &v).unwrap(), me(1, "2 h x1", 6, Validity::order(3)));
    }

    #[test]
    fn commutator_acts_as_h() {
        // (y1 x1 - x1 y1)(v) = h v
        let yx = WeylElement::y(1, 0, Validity::EXACT)
            .mul(&WeylElement::x(1, 0, Validity::EXACT))
            .unwrap();
        let xy = WeylElement::x(1, 0, Validity::EXACT)
            .mul(&WeylElement::y(1, 0, Validity::EXACT))
            .unwrap();
        let com = yx.sub(&xy).unwrap();
        for src in ["1 + x1", "x1^3 - 2 x1 h", "5/7"] {
            let v = me(1, src, 6, Validity::order(3));
            assert_eq!(act(&com, &v).unwrap().series(), &v.series().mul_hbar(1));
        }
    }

    #[test]
    fn action_is_multiplicative() {
        let mut rng = StdRng::seed_from_u64(7);
        let vars = module_vars(2);
        for _ in 0..40 {
            let mut u = WeylElement::zero(2, Validity::order(4));
            let mut w = WeylElement::zero(2, Validity::order(4));
            for _ in 0..3 {
                let m = WeylMono {
                    xs: vec![rng.gen_range(0..3), rng.gen_range(0..2)],
                    ys: vec![rng.gen_range(0..3), rng.gen_range(0..2)],
                    hpow: rng.gen_range(0..2),
                };
                let _ = u.insert(m, qint(rng.gen_range(-3..=3)));
                let m2 = WeylMono {
                    xs: vec![rng.gen_range(0..2), rng.gen_range(0..3)],
                    ys: vec![rng.gen_range(0..2), rng.gen_range(0..3)],
                    hpow: rng.gen_range(0..2),
                };
                let _ = w.insert(m2, qint(rng.gen_range(-3..=3)));
            }
            let mut vs = ScalarSeries::zero(&vars, 8, Validity::order(4));
            for _ in 0..4 {
                let _ = vs.insert(
                    Mono {
                        exps: vec![rng.gen_range(0..3), rng.gen_range(0..3)],
                        hpow: rng.gen_range(0..2),
                    },
                    qint(rng.gen_range(-3..=3)),
                );
            }
            let v = ModuleElement::new(2, vs).unwrap();
            let uv = u.mul(&w).unwrap();
            let lhs = act(&uv, &v).unwrap();
            let rhs = act(&u, &act(&w, &v).unwrap()).unwrap();
            assert_eq!(lhs, rhs);
        }
    }

    fn parabolic(n: usize, g: Vec<Vec<i64>>, c: Vec<Vec<i64>>) -> SpMatrix {
        let gm: Vec<Vec<Q>> = g.iter().map(|r| r.iter().map(|&x| qint(x)).collect()).collect();
        let cm: Vec<Vec<Q>> = c.iter().map(|r| r.iter().map(|&x| qint(x)).collect()).collect();
        let hm = vec![vec![Q::zero(); n]; n];
        SpMatrix::from_blocks(n, &gm, &hm, &cm).unwrap()
    }

    #[test]
    fn sigma_weight_examples() {

        let (l, _) = sigma_weight(&SpMatrix::zero(2)).unwrap();
        assert!(l.is_zero());
        // n=1, g=1 -> 1/2
        let a = parabolic(1, vec![vec![1]], vec![vec![0]]);
        let (l, rep) = sigma_weight(&a).unwrap();
        assert_eq!(l, qq(1, 2));
        assert_eq!(rep.half_trace_upper_block, "1/2");
        assert_eq!(rep.stated_half_trace_on_annihilated, "-1/2");
        // n=2, g=identity -> 1
        let a = parabolic(2, vec![vec![1, 0], vec![0, 1]], vec![vec![0, 0], vec![0, 0]]);
        let (l, _) = sigma_weight(&a).unwrap();
        assert_eq!(l, qint(1));
    }

    #[test]
    fn sigma_weight_rejects_non_parabolic() {

        let a = SpMatrix::from_blocks(
            1,
            &[vec![Q::zero()]],
            &[vec![qint(1)]],
            &[vec![Q::zero()]],
        )
        .unwrap();
        assert!(matches!(sigma_weight(&a), Err(Error::NotParabolic(_))));
    }

    #[test]
    fn lift_trivial_data() {
        let data = ModuleData::trivial(2, 6, Validity::order(3));
        let lift = lift_module(&data).unwrap();
        assert!(lift.g.is_zero());
        assert_eq!(lift.m.series().constant_term(), qint(1));
        assert_eq!(lift.m.series().terms().count(), 1);
    }

    #[test]
    fn lift_constant_data() {
        // n=1, f1 = c h: g = c x1, m = e^{-c x1}
        let vars = module_vars(1);
        let f = parse_series("3 h", &vars, 6, Validity::order(3)).unwrap();
        let data = ModuleData::new(1, vec![f]).unwrap();
        let lift = lift_module(&data).unwrap();
        assert_eq!(lift.g, parse_series("3 x1", &vars, 7, Validity::order(2)).unwrap());
        let expect = parse_series("-3 x1", &vars, 7, Validity::order(2))
            .unwrap()
            .exp()
            .unwrap();
        assert_eq!(lift.m.series(), &expect);
    }

    #[test]
    fn non_integrable_data_is_rejected() {
        // n=2, f1 = h x2, f2 = 0: d_1 g_2 = 0 but d_2 g_1 = 1
        let vars = module_vars(2);
        let f1 = parse_series("h x2", &vars, 6, Validity::order(3)).unwrap();
        let f2 = ScalarSeries::zero(&vars, 6, Validity::order(3));
        let data = ModuleData::new(2, vec![f1, f2]).unwrap();
        assert!(matches!(lift_module(&data), Err(Error::NotIntegrable(_))));
    }

    #[test]
    fn data_must_be_divisible_by_h() {
        let vars = module_vars(1);
        let f = parse_series("x1", &vars, 6, Validity::order(3)).unwrap();
        assert!(ModuleData::new(1, vec![f]).is_err());
    }

    #[test]
    fn twist_examples() {
        let data = ModuleData::trivial(1, 6, Validity::order(3));
        let vars = module_vars(1);
        let same =
            twist_action(&data, &[ScalarSeries::zero(&vars, 6, Validity::order(3))]).unwrap();
        assert_eq!(same.components()[0], data.components()[0]);
        let a = parse_series("3", &vars, 6, Validity::order(3)).unwrap();
        let twisted = twist_action(&data, &[a]).unwrap();
        assert_eq!(
            twisted.components()[0],
            parse_series("3 h", &vars, 6, Validity::order(3)).unwrap()
        );
        // closed two-variable twist integrates to x1 x2
        let data2 = ModuleData::trivial(2, 6, Validity::order(3));
        let vars2 = module_vars(2);
        let a2 = [
            parse_series("x2", &vars2, 6, Validity::order(3)).unwrap(),
            parse_series("x1", &vars2, 6, Validity::order(3)).unwrap(),
        ];
        let twisted2 = twist_action(&data2, &a2).unwrap();
        let lift = lift_module(&twisted2).unwrap();
        assert_eq!(lift.g, parse_series("x1 x2", &vars2, 7, Validity::order(2)).unwrap());
        // non-closed twist is rejected
        let bad = [
            parse_series("x2", &vars2, 6, Validity::order(3)).unwrap(),
            ScalarSeries::zero(&vars2, 6, Validity::order(3)),
        ];
        assert!(matches!(twist_action(&data2, &bad), Err(Error::NotClosed { .. })));
    }

    #[test]
    fn twists_compose_additively() {
        let mut rng = StdRng::seed_from_u64(11);
        let vars = module_vars(2);
        for _ in 0..20 {
            let mut pot1 = ScalarSeries::zero(&vars, 6, Validity::order(3));
            let mut pot2 = ScalarSeries::zero(&vars, 6, Validity::order(3));
            for _ in 0..4 {
                let _ = pot1.insert(
                    Mono { exps: vec![rng.gen_range(0..3), rng.gen_range(0..3)], hpow: 0 },
                    qint(rng.gen_range(-2..=2)),
                );
                let _ = pot2.insert(
                    Mono { exps: vec![rng.gen_range(0..3), rng.gen_range(0..3)], hpow: 0 },
                    qint(rng.gen_range(-2..=2)),
                );
            }
            let grad = |p: &ScalarSeries| -> Vec<ScalarSeries> {
                vec![p.differentiate("x1").unwrap(), p.differentiate("x2").unwrap()]
            };
            let a = grad(&pot1);
            let b = grad(&pot2);
            let sum: Vec<ScalarSeries> =
                a.iter().zip(&b).map(|(x, y)| x.add(y).unwrap()).collect();
            let base = ModuleData::trivial(2, 6, Validity::order(3));
            let seq = twist_action(&twist_action(&base, &a).unwrap(), &b).unwrap();
            let joint = twist_action(&base, &sum).unwrap();
            for j in 0..2 {
                assert_eq!(seq.components()[j], joint.components()[j]);
            }
        }
    }

    #[test]
    fn error_identity_examples() {
        let v = me(1, "x1 + 2 x1^2", 6, Validity::order(3));
        assert!(verify_error_identity(&SpMatrix::zero(1), &v).unwrap());

        // n=1, g=1, v = x1: both sides evaluate to 3/2 x1
        let a = parabolic(1, vec![vec![1]], vec![vec![0]]);
        let v = me(1, "x1", 6, Validity::order(3));
        let s = sigma_embed(&a).unwrap();
        let lhs = act(&s, &v).unwrap();
        assert_eq!(lhs.series(), me(1, "3/2 x1", 6, Validity::order(3)).series());
        assert!(verify_error_identity(&a, &v).unwrap());
    }

    #[test]
    fn error_identity_on_random_parabolics() {
        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..30 {
            let n = rng.gen_range(1..=2);
            let g: Vec<Vec<i64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.gen_range(-2..=2)).collect())
                .collect();
            let mut c: Vec<Vec<i64>> = vec![vec![0; n]; n];
            for i in 0..n {
                for j in i..n {
                    let v = rng.gen_range(-2..=2);
                    c[i][j] = v;
                    c[j][i] = v;
                }
            }
            let a = parabolic(n, g, c);
            let mut vs = ScalarSeries::zero(&module_vars(n), 8, Validity::order(4));
            for _ in 0..4 {
                let _ = vs.insert(
                    Mono {
                        exps: (0..n).map(|_| rng.gen_range(0..3)).collect(),
                        hpow: rng.gen_range(0..2),
                    },
                    qint(rng.gen_range(-3..=3)),
                );
            }
            let v = ModuleElement::new(n, vs).unwrap();
            assert!(verify_error_identity(&a, &v).unwrap());
        }
    }

    #[test]
    fn uncancelled_inverse_powers_are_rejected() {
        // h^-1 x1 does not act on the generator: nothing cancels the pole
        let mut u = WeylElement::zero(1, Validity::EXACT);
        u.insert(WeylMono { xs: vec![1], ys: vec![0], hpow: -1 }, qint(1)).unwrap();
        let one = ModuleElement::one(1, 4, Validity::order(2));
        assert_eq!(act(&u, &one).unwrap_err(), Error::IllDefinedAction);

        // while h^-1 (x1 y1) acts fine: the y produces the cancelling h
        let mut v = WeylElement::zero(1, Validity::EXACT);
        v.insert(WeylMono { xs: vec![1], ys: vec![1], hpow: -1 }, qint(1)).unwrap();
        let w = me(1, "x1^2", 6, Validity::order(3));
        assert_eq!(act(&v, &w).unwrap(), me(1, "2 x1^2", 6, Validity::order(3)));
    }

    #[test]
    fn lifts_are_unique_up_to_units() {
        // two lifts of the same data differ by a unit in k[[h]]
        let vars = module_vars(1);
        let f = parse_series("h x1 + 2 h x1^2", &vars, 8, Validity::order(4)).unwrap();
        let data = ModuleData::new(1, vec![f]).unwrap();
        let lift = lift_module(&data).unwrap();
        let unit = parse_series("1 + 2 h - 1/3 h^2", &vars, 9, Validity::order(3)).unwrap();
        let m2 = ModuleElement::new(1, lift.m.series().mul(&unit).unwrap()).unwrap();
        let residual = data.act_y(0, &m2).unwrap();
        assert!(residual.series().is_zero_to_degree(8));
        let ratio = m2.series().mul(&lift.m.series().inverse().unwrap()).unwrap();
        for (m, _) in ratio.terms() {
            assert!(m.exps.iter().all(|&e| e == 0));
        }
    }
}
