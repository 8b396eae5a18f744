use bsdelta_core::driver::conjugate;
use bsdelta_core::{
    build_lattice, solve, DriverSpec, Engine, LatticeMode, PathInfo, SolveConfig, TerminalSpec, TimeGrid,
};
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

fn sqrt_clip() -> TerminalSpec {
    TerminalSpec::expression("sign(w1) * min(sqrt(abs(w1)), 1)", 1.0, 1, vec![]).unwrap()
}

fn recombining(c: &mut Criterion) {
    let f = DriverSpec::linear_y_power_z(1.0, 1.0, 1.5).unwrap();
    let xi = sqrt_clip();
    let cfg = SolveConfig::default().without_bound_check();
    let mut g = c.benchmark_group("recombining");
    for n in [100usize, 400, 1600] {
        let lat = build_lattice(n, 1.0, 1, LatticeMode::Recombining).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &lat, |b, lat| {
            b.iter(|| solve(lat, &f, &xi, &cfg).unwrap().y0())
        });
    }
    let lat = build_lattice(40, 1.0, 2, LatticeMode::Recombining).unwrap();
    let xi2 = TerminalSpec::expression("min(max(w1 * w2, -1), 1)", 1.0, 2, vec![]).unwrap();
    g.bench_function("d2_n40", |b| b.iter(|| solve(&lat, &f, &xi2, &cfg).unwrap().y0()));
    g.finish();
}

fn full_tree(c: &mut Criterion) {
    let f = DriverSpec::linear_y_power_z(1.0, 1.0, 1.5).unwrap();
    let xi = sqrt_clip();
    let cfg = SolveConfig::default()
        .without_bound_check()
        .with_engine(Engine::FullTree);
    let mut g = c.benchmark_group("full_tree");
    g.sample_size(20);
    for n in [10usize, 14, 18] {
        let lat = build_lattice(n, 1.0, 1, LatticeMode::FullTree).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &lat, |b, lat| {
            b.iter(|| solve(lat, &f, &xi, &cfg).unwrap().y0())
        });
    }
    g.finish();
}

fn conjugates(c: &mut Criterion) {
    let w = [0.0, 0.0];
    let info = PathInfo::detached(0.5, &w, TimeGrid::new(10, 1.0).unwrap());
    let closed = DriverSpec::linear_y_power_z(0.5, 1.0, 1.5).unwrap();
    let expr = bsdelta_core::parse_driver("0.5 * y + norm(z)^1.5", convex_constants(), 2).unwrap();
    c.bench_function("conjugate/builtin_d1", |b| {
        b.iter(|| {
            conjugate(&closed, &info, black_box(0.3), &[black_box(0.7)])
                .unwrap()
                .value
        })
    });
    c.bench_function("conjugate/expression_d2", |b| {
        b.iter(|| {
            conjugate(&expr, &info, black_box(0.3), &[black_box(0.7), -0.2])
                .unwrap()
                .value
        })
    });
}

fn convex_constants() -> bsdelta_core::DriverConstants {
    bsdelta_core::DriverConstants {
        k: 1.0,
        q: 1.5,
        quadratic: false,
        l_y: 0.5,
        l_z: 1.5,
        l_w: None,
        convex_in_z: true,
        path_dependent: false,
    }
}

criterion_group!(benches, recombining, full_tree, conjugates);
criterion_main!(benches);
