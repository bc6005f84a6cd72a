//! Scenario files and the quantizability verdict.
//!
//! A scenario packages an ambient atlas, star products per chart,
//! transition data per overlap, the Lagrangian ideal, the symplectic form,
//! a line bundle on the subvariety, and optionally higher period forms.
//! [`run_scenario`] evaluates, at the requested finite order,
//!
//! * the Lagrangian condition (the symplectic form vanishes on the ideal),
//! * the half-canonical condition: `c1(L) - 1/2 c1(K_Y)` equals the
//!   obstruction class extracted from the star-product data,
//! * the restriction of every supplied period form.
//!
//! The verdict is the conjunction of the checks that could actually be
//! performed; checks that the requested order needs but the data does not
//! supply are reported as not checkable rather than silently passed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cech::{
    canonical_bundle, chern_class, class_reduce, obstruction_class, restrict_2form_class,
    y_atlas, Atlas, CechClass, Geometry, LagrangianIdeal, LineBundle, Overlap, ReducedClass,
    standard_symplectic_form,
};
use crate::error::{Error, Result};
use crate::parse::parse_series;
use crate::series::{DifferentialForm, ScalarSeries, Validity, Var};
use crate::star::{
    AlphaTermSpec, BidiffOp, ChartSpec, SolveOptions, StarProduct, VectorField,
};

fn default_order() -> u32 {
    1
}
fn default_star_order() -> u32 {
    2
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OverlapSpec {
    /// Chart whose coordinates host this overlap data.
    pub chart: String,
    pub other: String,
    #[serde(default)]
    pub invertible: Vec<String>,
    /// Images of the other chart's coordinates as literals over this chart.
    pub map: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StarCfg {
    #[serde(default = "default_star_order")]
    pub order: u32,
    #[serde(default)]
    pub moyal: bool,
    #[serde(default)]
    pub alphas: Vec<Vec<AlphaTermSpec>>,
}

impl Default for StarCfg {
    fn default() -> Self {
        StarCfg { order: 2, moyal: true, alphas: Vec::new() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransitionSpec {
    /// Chart whose coordinates host the field (the target splitting).
    pub chart: String,
    /// Chart whose splitting is being transported.
    pub from: String,
    /// Vector-field components by variable name; empty means "solve".
    #[serde(default)]
    pub beta1: BTreeMap<String, String>,
    /// Second-order correction, accepted and carried but not consumed by
    /// the first-order pipeline.
    #[serde(default)]
    pub beta2: Vec<(Vec<u32>, String)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BundleSpec {
    pub chart: String,
    pub other: String,
    pub phi: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrectionSpec {
    pub chart: String,
    pub other: String,
    /// 1-form as `[variable, coefficient literal]` pairs.
    pub form: Vec<(String, String)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PeriodSpec {
    pub index: u32,
    /// Closed ambient 2-forms per chart: `[var, var, coefficient]` triples.
    pub forms: BTreeMap<String, Vec<(String, String, String)>>,
    #[serde(default)]
    pub corrections: Vec<CorrectionSpec>,
}

/// Standalone atlas file: charts plus overlap maps.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AtlasSpec {
    pub charts: Vec<ChartSpec>,
    #[serde(default)]
    pub overlaps: Vec<OverlapSpec>,
}

impl AtlasSpec {
    pub fn from_json(src: &str) -> Result<AtlasSpec> {
        serde_json::from_str(src).map_err(|e| Error::invalid("atlas", e.to_string()))
    }

    pub fn build(&self) -> Result<Atlas> {
        build_atlas(&self.charts, &self.overlaps)
    }
}

pub(crate) fn build_atlas(charts: &[ChartSpec], overlaps: &[OverlapSpec]) -> Result<Atlas> {
    let chart_index = |name: &str| -> Result<usize> {
        charts
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::invalid("charts", format!("unknown chart `{name}`")))
    };
    let mut built = BTreeMap::new();
    for ov in overlaps {
        let i = chart_index(&ov.chart)?;
        let j = chart_index(&ov.other)?;
        let vars = charts[i].overlap_vars(&ov.invertible);
        let mut images = BTreeMap::new();
        for (name, lit) in &ov.map {
            images.insert(
                name.clone(),
                parse_series(lit, &vars, charts[i].cap, Validity::EXACT)?,
            );
        }
        built.insert((i, j), Overlap { invertible: ov.invertible.clone(), images });
    }
    Atlas::new(charts.to_vec(), built)
}

/// Standalone bundle file: transition units per ordered chart pair.
pub fn build_bundle(atlas: &Atlas, specs: &[BundleSpec]) -> Result<LineBundle> {
    if specs.is_empty() {
        return LineBundle::trivial(atlas);
    }
    let mut transitions = BTreeMap::new();
    for b in specs {
        let i = atlas.chart_index(&b.chart)?;
        let j = atlas.chart_index(&b.other)?;
        let vars = atlas.overlap_vars(i, j)?;
        transitions.insert(
            (i, j),
            parse_series(&b.phi, &vars, atlas.chart(i).cap, Validity::EXACT)?,
        );
    }
    LineBundle::new(atlas, transitions)
}

/// On-disk scenario format.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    #[serde(default = "default_order")]
    pub order: u32,
    pub charts: Vec<ChartSpec>,
    #[serde(default)]
    pub overlaps: Vec<OverlapSpec>,
    #[serde(default)]
    pub stars: BTreeMap<String, StarCfg>,
    #[serde(default)]
    pub transitions: Vec<TransitionSpec>,
    pub lagrangian: BTreeMap<String, Vec<String>>,
    /// Symplectic form per chart as `[var, var, coefficient]` triples;
    /// defaults to `sum dq ^ dp` on every chart.
    #[serde(default)]
    pub symplectic: BTreeMap<String, Vec<(String, String, String)>>,
    #[serde(default)]
    pub line_bundle: Vec<BundleSpec>,
    #[serde(default)]
    pub periods: Vec<PeriodSpec>,
}

/// One supplied period: its index, the closed ambient 2-form per chart,
/// and any explicit overlap corrections.
pub type PeriodData = (u32, Vec<DifferentialForm>, BTreeMap<(usize, usize), DifferentialForm>);

/// A fully parsed scenario, ready to run.
pub struct Scenario {
    pub name: String,
    pub order: u32,
    pub geometry: Geometry,
    pub y_atlas: Atlas,
    pub bundle: LineBundle,
    pub periods: Vec<PeriodData>,
}

fn parse_two_form(
    vars: &[Var],
    cap: u32,
    triples: &[(String, String, String)],
) -> Result<DifferentialForm> {
    let mut form = DifferentialForm::zero(2, vars, cap, Validity::EXACT);
    for (a, b, lit) in triples {
        let ia = vars
            .iter()
            .position(|v| v.name == *a)
            .ok_or_else(|| Error::UnknownVariable(a.clone()))?;
        let ib = vars
            .iter()
            .position(|v| v.name == *b)
            .ok_or_else(|| Error::UnknownVariable(b.clone()))?;
        let coeff = parse_series(lit, vars, cap, Validity::EXACT)?;
        form.add_term(&[ia, ib], coeff)?;
    }
    Ok(form)
}

fn parse_one_form(vars: &[Var], cap: u32, pairs: &[(String, String)]) -> Result<DifferentialForm> {
    let mut form = DifferentialForm::zero(1, vars, cap, Validity::EXACT);
    for (a, lit) in pairs {
        let ia = vars
            .iter()
            .position(|v| v.name == *a)
            .ok_or_else(|| Error::UnknownVariable(a.clone()))?;
        let coeff = parse_series(lit, vars, cap, Validity::EXACT)?;
        form.add_term(&[ia], coeff)?;
    }
    Ok(form)
}

impl ScenarioSpec {
    pub fn from_json(src: &str) -> Result<ScenarioSpec> {
        serde_json::from_str(src).map_err(|e| Error::invalid("scenario", e.to_string()))
    }

    pub fn build(&self) -> Result<Scenario> {
        if self.order < 1 {
            return Err(Error::invalid("order", "requested order must be at least 1"));
        }
        // atlas
        let charts = self.charts.clone();
        let chart_index = |name: &str| -> Result<usize> {
            charts
                .iter()
                .position(|c| c.name == name)
                .ok_or_else(|| Error::invalid("charts", format!("unknown chart `{name}`")))
        };
        let atlas = build_atlas(&charts, &self.overlaps)?;

        // stars
        let mut stars = Vec::with_capacity(charts.len());
        for chart in &charts {
            let cfg = self.stars.get(&chart.name).cloned().unwrap_or_default();
            if cfg.moyal || cfg.alphas.is_empty() {
                stars.push(StarProduct::moyal(cfg.order, chart)?);
            } else {
                let vars = chart.vars();
                let mut tables = Vec::new();
                for level in &cfg.alphas {
                    let mut op = BidiffOp::zero(&vars, chart.cap);
                    for term in level {
                        let coeff = parse_series(&term.coeff, &vars, chart.cap, Validity::EXACT)?;
                        op.add_term(term.df.clone(), term.dg.clone(), coeff)?;
                    }
                    tables.push(op);
                }
                stars.push(StarProduct::from_tables(chart, cfg.order, tables)?);
            }
        }

        // transitions
        let mut beta1 = BTreeMap::new();
        for t in &self.transitions {
            let i = chart_index(&t.chart)?;
            let j = chart_index(&t.from)?;
            if t.beta1.is_empty() {
                continue; // solve on demand
            }
            let vars = atlas.overlap_vars(i, j)?;
            let cap = charts[i].cap;
            let mut comps = vec![ScalarSeries::zero(&vars, cap, Validity::EXACT); vars.len()];
            for (name, lit) in &t.beta1 {
                let idx = vars
                    .iter()
                    .position(|v| v.name == *name)
                    .ok_or_else(|| Error::UnknownVariable(name.clone()))?;
                comps[idx] = parse_series(lit, &vars, cap, Validity::EXACT)?;
            }
            beta1.insert((i, j), VectorField::new(&vars, comps)?);
        }

        // Lagrangian ideal
        let mut generators = Vec::with_capacity(charts.len());
        for chart in &charts {
            let lits = self.lagrangian.get(&chart.name).ok_or_else(|| {
                Error::MissingData(format!("lagrangian generators missing on `{}`", chart.name))
            })?;
            let vars = chart.vars();
            let gens: Vec<ScalarSeries> = lits
                .iter()
                .map(|l| parse_series(l, &vars, chart.cap, Validity::EXACT))
                .collect::<Result<_>>()?;
            generators.push(gens);
        }
        let ideal = LagrangianIdeal::from_generators(&atlas, &generators)?;

        // symplectic form
        let mut omega = Vec::with_capacity(charts.len());
        for chart in &charts {
            match self.symplectic.get(&chart.name) {
                Some(triples) => {
                    omega.push(parse_two_form(&chart.vars(), chart.cap, triples)?)
                }
                None => omega.push(standard_symplectic_form(chart)?),
            }
        }

        let geometry = Geometry { atlas, stars, beta1, ideal, omega };
        let yat = y_atlas(&geometry.atlas, &geometry.ideal)?;

        // line bundle on the subvariety
        let bundle = if self.line_bundle.is_empty() {
            LineBundle::trivial(&yat)?
        } else {
            let mut transitions = BTreeMap::new();
            for b in &self.line_bundle {
                let i = chart_index(&b.chart)?;
                let j = chart_index(&b.other)?;
                let vars = yat.overlap_vars(i, j)?;
                transitions.insert(
                    (i, j),
                    parse_series(&b.phi, &vars, yat.chart(i).cap, Validity::EXACT)?,
                );
            }
            LineBundle::new(&yat, transitions)?
        };

        // periods
        let mut periods = Vec::new();
        for p in &self.periods {
            if p.index < 2 {
                return Err(Error::invalid(
                    "periods",
                    "period indices start at 2; the order-1 coefficient enters through the obstruction class",
                ));
            }
            let mut forms = Vec::with_capacity(charts.len());
            for chart in &charts {
                let triples = p.forms.get(&chart.name).ok_or_else(|| {
                    Error::MissingData(format!(
                        "period {} missing a form on `{}`",
                        p.index, chart.name
                    ))
                })?;
                forms.push(parse_two_form(&chart.vars(), chart.cap, triples)?);
            }
            let mut corrections = BTreeMap::new();
            for c in &p.corrections {
                let i = chart_index(&c.chart)?;
                let j = chart_index(&c.other)?;
                let vars = geometry.atlas.overlap_vars(i, j)?;
                corrections.insert(
                    (i, j),
                    parse_one_form(&vars, charts[i].cap, &c.form)?,
                );
            }
            periods.push((p.index, forms, corrections));
        }

        Ok(Scenario {
            name: self.name.clone(),
            order: self.order,
            geometry,
            y_atlas: yat,
            bundle,
            periods,
        })
    }
}

// ---------------------------------------------------------------------------
// the verdict
// ---------------------------------------------------------------------------

fn reduced_entries(r: &ReducedClass) -> Vec<(String, String)> {
    r.entries
        .iter()
        .map(|(l, v)| (l.clone(), v.to_string()))
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionReport {
    pub c1_line_bundle: Vec<(String, String)>,
    pub half_c1_canonical: Vec<(String, String)>,
    pub atiyah_obstruction: Vec<(String, String)>,
    /// Reduced coordinates of `c1(L) - 1/2 c1(K_Y) - At`; empty iff the
    /// condition holds.
    pub residual: Vec<(String, String)>,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct PeriodReport {
    pub index: u32,
    pub coordinates: Vec<(String, String)>,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub scenario: String,
    pub order: u32,
    pub lagrangian_ok: bool,
    pub chern_condition: Option<ConditionReport>,
    pub period_conditions: Vec<PeriodReport>,
    /// Conditions the requested order needs but the supplied data cannot
    /// evaluate.
    pub not_checkable: Vec<String>,
    /// Conjunction of every check that was actually performed.
    pub quantizable_at_order: bool,
    pub notes: Vec<String>,
}

impl Verdict {
    /// 0 = quantizable, 3 = some check failed, 4 = inconclusive.
    pub fn exit_code(&self) -> i32 {
        if !self.quantizable_at_order {
            3
        } else if !self.not_checkable.is_empty() {
            4
        } else {
            0
        }
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("scenario: {}\n", self.scenario));
        out.push_str(&format!("order: {}\n", self.order));
        out.push_str(&format!(
            "lagrangian: {}\n",
            if self.lagrangian_ok { "ok" } else { "FAILED" }
        ));
        match &self.chern_condition {
            Some(c) => {
                out.push_str(&format!(
                    "half-canonical condition: {}\n",
                    if c.holds { "ok" } else { "FAILED" }
                ));
                if !c.holds {
                    for (label, value) in &c.residual {
                        out.push_str(&format!("  residual: ({value}) {label}\n"));
                    }
                }
            }
            None => out.push_str("half-canonical condition: not evaluated\n"),
        }
        for p in &self.period_conditions {
            out.push_str(&format!(
                "period {}: {}\n",
                p.index,
                if p.holds { "ok" } else { "FAILED" }
            ));
        }
        for n in &self.not_checkable {
            out.push_str(&format!("not checkable: {n}\n"));
        }
        out.push_str(&format!(
            "quantizable at order {}: {}\n",
            self.order, self.quantizable_at_order
        ));
        out
    }
}

/// The reduced coordinates of `c1(L) - 1/2 c1(K_Y) - At(O_h, Y)` together
/// with its three constituents.
pub fn half_canonical_condition(
    scenario: &Scenario,
) -> Result<(ConditionReport, CechClass)> {
    let yat = &scenario.y_atlas;
    let c1_l = chern_class(yat, &scenario.bundle)?;
    let k_bundle = canonical_bundle(yat)?;
    let c1_k = chern_class(yat, &k_bundle)?;
    let at = obstruction_class(&scenario.geometry)?;
    let difference = c1_l.sub(&c1_k.scale(&crate::series::qq(1, 2)))?.sub(&at)?;
    let reduced = class_reduce(yat, &difference)?;
    let report = ConditionReport {
        c1_line_bundle: reduced_entries(&class_reduce(yat, &c1_l)?),
        half_c1_canonical: reduced_entries(&class_reduce(yat, &c1_k.scale(&crate::series::qq(1, 2)))?),
        atiyah_obstruction: reduced_entries(&class_reduce(yat, &at)?),
        residual: reduced_entries(&reduced),
        holds: reduced.is_zero(),
    };
    Ok((report, difference))
}

/// Evaluate every checkable condition of the scenario and assemble the
/// verdict. Deterministic: identical input produces identical output.
pub fn run_scenario(spec: &ScenarioSpec) -> Result<Verdict> {
    // a wrong-codimension ideal is a negative verdict, not a malformed file
    for chart in &spec.charts {
        let gens = spec
            .lagrangian
            .get(&chart.name)
            .map(|g| g.len())
            .unwrap_or(0);
        if gens != chart.fiber.len() || chart.base.len() != chart.fiber.len() {
            return Ok(Verdict {
                scenario: spec.name.clone(),
                order: spec.order,
                lagrangian_ok: false,
                chern_condition: None,
                period_conditions: Vec::new(),
                not_checkable: vec![
                    "half-canonical condition: undefined without the Lagrangian condition".into(),
                ],
                quantizable_at_order: false,
                notes: vec![format!(
                    "chart `{}`: the ideal is not middle-dimensional",
                    chart.name
                )],
            });
        }
    }
    let mut scenario = spec.build()?;
    scenario.geometry.resolve_beta1(&SolveOptions::default())?;

    let mut notes = vec![
        "the order-1 period coefficient is not a separate input: its restriction enters \
         through the obstruction-class condition"
            .to_string(),
        "finite-order caveat: the conditions at order N are sandwiched between existence \
         statements at neighbouring orders; neither implication is an equivalence"
            .to_string(),
        "obstructions attached to the annihilator filtration are out of scope and not \
         part of this report"
            .to_string(),
    ];

    let lagrangian_ok = crate::cech::check_lagrangian(
        &scenario.geometry.atlas,
        &scenario.geometry.ideal,
        &scenario.geometry.omega,
    )?;

    let mut not_checkable = Vec::new();
    let mut performed_ok = lagrangian_ok;

    let chern_condition = if lagrangian_ok {
        let (report, _) = half_canonical_condition(&scenario)?;
        performed_ok = performed_ok && report.holds;
        Some(report)
    } else {
        not_checkable
            .push("half-canonical condition: undefined without the Lagrangian condition".into());
        None
    };

    let mut period_conditions = Vec::new();
    let mut supplied: Vec<u32> = Vec::new();
    for (index, forms, corrections) in &scenario.periods {
        supplied.push(*index);
        let class = restrict_2form_class(
            &scenario.geometry.atlas,
            &scenario.geometry.ideal,
            forms,
            corrections,
        )?;
        let reduced = class_reduce(&scenario.y_atlas, &class)?;
        let holds = reduced.is_zero();
        performed_ok = performed_ok && holds;
        period_conditions.push(PeriodReport {
            index: *index,
            coordinates: reduced_entries(&reduced),
            holds,
        });
    }
    for i in 2..=scenario.order {
        if !supplied.contains(&i) {
            not_checkable.push(format!(
                "period condition {i}: no ambient 2-form supplied"
            ));
        }
    }
    if !not_checkable.is_empty() {
        notes.push(
            "verdict is the conjunction of performed checks only; see not_checkable".to_string(),
        );
    }

    Ok(Verdict {
        scenario: scenario.name.clone(),
        order: scenario.order,
        lagrangian_ok,
        chern_condition,
        period_conditions,
        not_checkable,
        quantizable_at_order: performed_ok,
        notes,
    })
}
