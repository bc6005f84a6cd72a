//! Command-line front end for the quantization toolkit.
//!
//! Exit codes: 0 success (or quantizable), 2 invalid input, 3 a check
//! failed (not quantizable, not integrable, not associative), 4 verdict
//! inconclusive because the requested order needs data the scenario does
//! not supply.

use std::collections::BTreeMap;
use std::fs;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use wq_core::cech::{class_reduce, obstruction_class, restrict_2form_class, y_atlas};
use wq_core::lagmodule::{lift_module, ModuleData};
use wq_core::parse::{infer_pairs, parse_series, parse_weyl};
use wq_core::series::{Mono, ScalarSeries, Validity};
use wq_core::star::{solve_beta1, MapSpec, SolveOptions, StarSpec};
use wq_core::verdict::{build_bundle, run_scenario, AtlasSpec, BundleSpec, ScenarioSpec};
use wq_core::weyl::{sigma_embed, weyl_to_json, SpMatrix};
use wq_core::{Error, Var};

#[derive(Parser)]
#[command(
    name = "wq",
    about = "exact deformation-quantization checks for line bundles on Lagrangians",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Weyl algebra arithmetic on literals (x1..xn, y1..yn, h).
    Weyl {
        #[command(subcommand)]
        op: WeylOp,
    },
    /// Lagrangian module operations.
    Module {
        #[command(subcommand)]
        op: ModuleOp,
    },
    /// Star products on affine charts.
    Star {
        #[command(subcommand)]
        op: StarOp,
    },
    /// Cech class computations on explicit atlases.
    Cech {
        #[command(subcommand)]
        op: CechOp,
    },
    /// Run a quantizability scenario and print the verdict.
    Check(CheckArgs),
}

#[derive(Subcommand)]
enum WeylOp {
    /// Normal-ordered product of two literals.
    Mul(WeylBin),
    /// Commutator of two literals.
    Bracket(WeylBin),
    /// Quadratic image of an sp(2n) matrix (rows of rationals as JSON).
    Sigma {
        /// Inline JSON like [["1","0"],["0","-1"]] or @path to a file.
        matrix: String,
    },
    /// Minimal filtration degree of a literal.
    Degree {
        literal: String,
        #[arg(long)]
        pairs: Option<usize>,
    },
}

#[derive(Args)]
struct WeylBin {
    left: String,
    right: String,
    /// Number of symplectic pairs; inferred from the literals when absent.
    #[arg(long)]
    pairs: Option<usize>,
}

#[derive(Subcommand)]
enum ModuleOp {
    /// Trivialise flat module data from a JSON file.
    Lift { data: String },
}

#[derive(Subcommand)]
enum StarOp {
    /// Check associativity of a star product on monomial triples.
    Assoc {
        star: String,
        /// Max total degree of the probe monomials.
        #[arg(long, default_value_t = 3)]
        degree: i64,
    },
    /// Solve the first-order transition between two star products.
    Beta1 { src: String, dst: String, map: String },
}

#[derive(Subcommand)]
enum CechOp {
    /// Reduced first Chern class of a line bundle on an atlas.
    C1 { atlas: String, bundle: String },
    /// Reduced obstruction class of a scenario's star-product data.
    Obstruction { scenario: String },
    /// Reduced restrictions of the scenario's supplied period forms.
    Restrict { scenario: String },
}

#[derive(Args)]
struct CheckArgs {
    scenario: String,
    /// Override the order requested by the scenario file.
    #[arg(long)]
    order: Option<u32>,
    /// Emit the verdict as JSON (default).
    #[arg(long, conflicts_with = "text")]
    json: bool,
    /// Emit the verdict as plain text.
    #[arg(long)]
    text: bool,
}

fn read_input(path_or_inline: &str) -> anyhow::Result<String> {
    if let Some(path) = path_or_inline.strip_prefix('@') {
        Ok(fs::read_to_string(path)?)
    } else if path_or_inline.trim_start().starts_with(['{', '[']) {
        Ok(path_or_inline.to_string())
    } else {
        Ok(fs::read_to_string(path_or_inline)?)
    }
}

#[derive(Deserialize)]
struct ModuleDataSpec {
    n: usize,
    #[serde(default = "default_cap")]
    cap: u32,
    #[serde(default)]
    hbar_order: Option<i32>,
    action_of_y: Vec<String>,
}

fn default_cap() -> u32 {
    6
}

fn exit_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::NotIntegrable(_)) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_for(&err))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Weyl { op } => weyl_command(op),
        Command::Module { op } => module_command(op),
        Command::Star { op } => star_command(op),
        Command::Cech { op } => cech_command(op),
        Command::Check(args) => check_command(args),
    }
}

fn print_weyl(e: &wq_core::WeylElement) -> anyhow::Result<()> {
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "display": e.to_string(),
            "element": weyl_to_json(e),
        }))?
    );
    Ok(())
}

fn weyl_command(op: WeylOp) -> anyhow::Result<u8> {
    match op {
        WeylOp::Mul(bin) => {
            let n = bin.pairs.unwrap_or_else(|| infer_pairs(&[&bin.left, &bin.right]));
            let a = parse_weyl(&bin.left, n, Validity::EXACT)?;
            let b = parse_weyl(&bin.right, n, Validity::EXACT)?;
            print_weyl(&a.mul(&b)?)?;
            Ok(0)
        }
        WeylOp::Bracket(bin) => {
            let n = bin.pairs.unwrap_or_else(|| infer_pairs(&[&bin.left, &bin.right]));
            let a = parse_weyl(&bin.left, n, Validity::EXACT)?;
            let b = parse_weyl(&bin.right, n, Validity::EXACT)?;
            print_weyl(&a.bracket(&b)?)?;
            Ok(0)
        }
        WeylOp::Sigma { matrix } => {
            let src = read_input(&matrix)?;
            let rows: Vec<Vec<String>> = serde_json::from_str(&src)?;
            if rows.is_empty() || !rows.len().is_multiple_of(2) {
                anyhow::bail!("expected a 2n x 2n matrix");
            }
            let n = rows.len() / 2;
            let a = SpMatrix::parse(n, &rows)?;
            print_weyl(&sigma_embed(&a)?)?;
            Ok(0)
        }
        WeylOp::Degree { literal, pairs } => {
            let n = pairs.unwrap_or_else(|| infer_pairs(&[&literal]));
            let e = parse_weyl(&literal, n, Validity::EXACT)?;
            println!("{}", e.filtration_degree()?);
            Ok(0)
        }
    }
}

fn module_command(op: ModuleOp) -> anyhow::Result<u8> {
    match op {
        ModuleOp::Lift { data } => {
            let src = read_input(&data)?;
            let spec: ModuleDataSpec = serde_json::from_str(&src)?;
            let vars = wq_core::lagmodule::module_vars(spec.n);
            let validity = Validity(spec.hbar_order);
            let components: Vec<ScalarSeries> = spec
                .action_of_y
                .iter()
                .map(|lit| parse_series(lit, &vars, spec.cap, validity))
                .collect::<wq_core::Result<_>>()?;
            let module_data = ModuleData::new(spec.n, components)?;
            match lift_module(&module_data) {
                Ok(lift) => {
                    println!(
                        "{}",
                        serde_json::to_string_pretty(&json!({
                            "g": lift.g.to_string(),
                            "g_series": lift.g,
                            "m": lift.m.series().to_string(),
                            "m_series": lift.m.series(),
                            "verification": lift.verification,
                        }))?
                    );
                    Ok(0)
                }
                Err(e @ Error::NotIntegrable(_)) => {
                    eprintln!("error: {e}");
                    Ok(3)
                }
                Err(e) => Err(e.into()),
            }
        }
    }
}

fn star_command(op: StarOp) -> anyhow::Result<u8> {
    match op {
        StarOp::Assoc { star, degree } => {
            let spec: StarSpec = serde_json::from_str(&read_input(&star)?)?;
            let product = spec.build()?;
            let vars = product.chart().vars();
            let cap = product.chart().cap;
            let monos = monomials_to_degree(&vars, degree, cap);
            for f in &monos {
                for g in &monos {
                    for h in &monos {
                        let defect = product.assoc_defect(f, g, h)?;
                        if !defect.is_zero() {
                            println!(
                                "{}",
                                serde_json::to_string_pretty(&json!({
                                    "associative": false,
                                    "triple": [f.to_string(), g.to_string(), h.to_string()],
                                    "defect": defect.to_string(),
                                }))?
                            );
                            return Ok(3);
                        }
                    }
                }
            }
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "associative": true,
                    "tested_degree": degree,
                    "order": product.order(),
                }))?
            );
            Ok(0)
        }
        StarOp::Beta1 { src, dst, map } => {
            let src_spec: StarSpec = serde_json::from_str(&read_input(&src)?)?;
            let dst_spec: StarSpec = serde_json::from_str(&read_input(&dst)?)?;
            let map_spec: MapSpec = serde_json::from_str(&read_input(&map)?)?;
            let src_star = src_spec.build()?;
            let dst_star = dst_spec.build()?;
            let overlap_vars = dst_star.chart().overlap_vars(&map_spec.invertible);
            let images = map_spec.coordinate_images(&overlap_vars, dst_star.chart().cap)?;
            let sol = solve_beta1(
                &src_star,
                &dst_star,
                &images,
                &overlap_vars,
                &SolveOptions::default(),
            )?;
            let components: BTreeMap<String, String> = overlap_vars
                .iter()
                .zip(sol.field.components())
                .map(|(v, c)| (v.name.clone(), c.to_string()))
                .collect();
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "beta1": components,
                    "kernel_dimension": sol.kernel.len(),
                }))?
            );
            Ok(0)
        }
    }
}

fn monomials_to_degree(vars: &[Var], max_degree: i64, cap: u32) -> Vec<ScalarSeries> {
    fn rec(
        vars: &[Var],
        max_degree: i64,
        slot: usize,
        exps: &mut Vec<i32>,
        out: &mut Vec<ScalarSeries>,
        cap: u32,
    ) {
        if slot == vars.len() {
            let total: i64 = exps.iter().map(|&e| e as i64).sum();
            if total <= max_degree {
                let mut s = ScalarSeries::zero(vars, cap, Validity::EXACT);
                let _ = s.insert(Mono { exps: exps.clone(), hpow: 0 }, wq_core::series::qint(1));
                out.push(s);
            }
            return;
        }
        for e in 0..=(max_degree as i32) {
            exps[slot] = e;
            rec(vars, max_degree, slot + 1, exps, out, cap);
        }
        exps[slot] = 0;
    }
    let mut out = Vec::new();
    let mut exps = vec![0i32; vars.len()];
    rec(vars, max_degree, 0, &mut exps, &mut out, cap);
    out
}

fn print_reduced(key: &str, reduced: &wq_core::cech::ReducedClass) -> anyhow::Result<()> {
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            key: reduced.entries.iter()
                .map(|(l, v)| json!([l, v.to_string()]))
                .collect::<Vec<_>>(),
            "zero": reduced.is_zero(),
        }))?
    );
    Ok(())
}

fn cech_command(op: CechOp) -> anyhow::Result<u8> {
    match op {
        CechOp::C1 { atlas, bundle } => {
            let atlas_spec = AtlasSpec::from_json(&read_input(&atlas)?)?;
            let atlas = atlas_spec.build()?;
            let bundle_specs: Vec<BundleSpec> = serde_json::from_str(&read_input(&bundle)?)?;
            let bundle = build_bundle(&atlas, &bundle_specs)?;
            let class = wq_core::cech::chern_class(&atlas, &bundle)?;
            let reduced = class_reduce(&atlas, &class)?;
            print_reduced("c1", &reduced)?;
            Ok(0)
        }
        CechOp::Obstruction { scenario } => {
            let spec = ScenarioSpec::from_json(&read_input(&scenario)?)?;
            let mut built = spec.build()?;
            built.geometry.resolve_beta1(&SolveOptions::default())?;
            let class = obstruction_class(&built.geometry)?;
            let yat = y_atlas(&built.geometry.atlas, &built.geometry.ideal)?;
            let reduced = class_reduce(&yat, &class)?;
            print_reduced("atiyah_obstruction", &reduced)?;
            Ok(0)
        }
        CechOp::Restrict { scenario } => {
            let spec = ScenarioSpec::from_json(&read_input(&scenario)?)?;
            let built = spec.build()?;
            let yat = y_atlas(&built.geometry.atlas, &built.geometry.ideal)?;
            let mut report = Vec::new();
            for (index, forms, corrections) in &built.periods {
                let class = restrict_2form_class(
                    &built.geometry.atlas,
                    &built.geometry.ideal,
                    forms,
                    corrections,
                )?;
                let reduced = class_reduce(&yat, &class)?;
                report.push(json!({
                    "index": index,
                    "coordinates": reduced.entries.iter()
                        .map(|(l, v)| json!([l, v.to_string()]))
                        .collect::<Vec<_>>(),
                    "zero": reduced.is_zero(),
                }));
            }
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({ "restrictions": report }))?
            );
            Ok(0)
        }
    }
}

fn check_command(args: CheckArgs) -> anyhow::Result<u8> {
    let mut spec = ScenarioSpec::from_json(&read_input(&args.scenario)?)?;
    if let Some(order) = args.order {
        spec.order = order;
    }
    let verdict = run_scenario(&spec)?;
    if args.text {
        print!("{}", verdict.render_text());
    } else {
        println!("{}", serde_json::to_string_pretty(&verdict)?);
    }
    Ok(verdict.exit_code() as u8)
}
