use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use wq_core::cech::{class_reduce, obstruction_class, y_atlas};
use wq_core::lagmodule::{lift_module, module_vars, ModuleData};
use wq_core::parse::parse_series;
use wq_core::series::{ScalarSeries, Validity};
use wq_core::star::{solve_beta1, ChartSpec, SolveOptions, StarProduct};
use wq_core::verdict::{run_scenario, ScenarioSpec};
use wq_core::weyl::{WeylElement, WeylMono};

fn dense_weyl(n: usize, deg: u32) -> WeylElement {
    let mut e = WeylElement::zero(n, Validity::order(6));
    let mut c = 1i64;
    for dx in 0..=deg {
        for dy in 0..=(deg - dx) {
            let m = WeylMono {
                xs: vec![dx; n],
                ys: vec![dy; n],
                hpow: ((dx + dy) % 3) as i32,
            };
            let _ = e.insert(m, wq_core::series::qint(c));
            c = -c + 2;
        }
    }
    e
}

fn bench_weyl_mul(c: &mut Criterion) {
    let a = dense_weyl(2, 5);
    let b = dense_weyl(2, 5);
    c.bench_function("weyl normal-ordered product, n=2 degree 5", |bench| {
        bench.iter(|| black_box(&a).mul(black_box(&b)).unwrap());
    });
}

fn bench_moyal(c: &mut Criterion) {
    let chart = ChartSpec {
        name: "U".into(),
        base: vec!["q".into()],
        fiber: vec!["p".into()],
        cap: 24,
    };
    let star = StarProduct::moyal(4, &chart).unwrap();
    let f = parse_series("q^3 p^2 - 2 q p + 1", &chart.vars(), 24, Validity::EXACT).unwrap();
    let g = parse_series("q^2 p^3 + 3 q^2", &chart.vars(), 24, Validity::EXACT).unwrap();
    c.bench_function("moyal star product, order 4", |bench| {
        bench.iter(|| star.apply(black_box(&f), black_box(&g)).unwrap());
    });
}

fn bench_lift(c: &mut Criterion) {
    let vars = module_vars(3);
    let potential = parse_series(
        "x1^2 x2 + x2 x3^2 h - 2 x1 x3 + x1^3 x2 x3 h^2",
        &vars,
        6,
        Validity::order(4),
    )
    .unwrap();
    let comps: Vec<ScalarSeries> = (1..=3)
        .map(|i| potential.differentiate(&format!("x{i}")).unwrap().mul_hbar(1))
        .collect();
    let data = ModuleData::new(3, comps).unwrap();
    c.bench_function("module lift, n=3 degree 6", |bench| {
        bench.iter(|| lift_module(black_box(&data)).unwrap());
    });
}

fn scenario_src() -> String {
    let path = format!("{}/../../scenarios/tP1_Ominus1.json", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(path).unwrap()
}

fn bench_transition_solve(c: &mut Criterion) {
    let tp = ChartSpec {
        name: "U0".into(),
        base: vec!["t".into()],
        fiber: vec!["p".into()],
        cap: 24,
    };
    let sq = ChartSpec {
        name: "U1".into(),
        base: vec!["s".into()],
        fiber: vec!["q".into()],
        cap: 24,
    };
    let src = StarProduct::moyal(2, &tp).unwrap();
    let dst = StarProduct::moyal(2, &sq).unwrap();
    let overlap = sq.overlap_vars(&["s".to_string()]);
    let mut map = BTreeMap::new();
    map.insert("t".to_string(), parse_series("s^-1", &overlap, 24, Validity::EXACT).unwrap());
    map.insert("p".to_string(), parse_series("-s^2 q", &overlap, 24, Validity::EXACT).unwrap());
    c.bench_function("first-order transition solve on the cotangent line", |bench| {
        bench.iter(|| {
            solve_beta1(
                black_box(&src),
                black_box(&dst),
                &map,
                &overlap,
                &SolveOptions::default(),
            )
            .unwrap()
        });
    });
}

fn bench_full_verdict(c: &mut Criterion) {
    let spec = ScenarioSpec::from_json(&scenario_src()).unwrap();
    c.bench_function("full verdict for the degree -1 bundle on the line", |bench| {
        bench.iter(|| run_scenario(black_box(&spec)).unwrap());
    });
    // the obstruction extraction alone, transitions pre-solved
    let mut built = spec.build().unwrap();
    built.geometry.resolve_beta1(&SolveOptions::default()).unwrap();
    let yat = y_atlas(&built.geometry.atlas, &built.geometry.ideal).unwrap();
    c.bench_function("obstruction class extraction and reduction", |bench| {
        bench.iter(|| {
            let class = obstruction_class(black_box(&built.geometry)).unwrap();
            class_reduce(&yat, &class).unwrap()
        });
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_weyl_mul, bench_moyal, bench_lift, bench_transition_solve, bench_full_verdict
}
criterion_main!(benches);
