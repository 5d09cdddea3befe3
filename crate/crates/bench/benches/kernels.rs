use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use feskit::algorithms::{Algorithm, SqpBuilding};
use feskit::linalg::{Matrix, Vector};
use feskit::plant::{build_siso_plant, integrate_hold, lti_lyapunov, BuildingPlant, DisturbanceSignal, Plant};
use feskit::qp::{solve_qp, QpInstance};
use feskit::scenarios::{building_disturbance, building_nlp, BuildingConfig, SisoConfig, SupplyChainConfig};
use feskit::{run_scenario, ScenarioConfig};

fn qp_box_6() -> QpInstance {
    let n = 6;
    let h = Matrix::from_fn(n, n, |i, j| if i == j { 4.0 } else { 1.0 / (1.0 + (i + j) as f64) });
    let f = Vector::from_fn(n, |i, _| (i as f64) - 2.5);
    let mut a = Matrix::zeros(2 * n, n);
    let mut b = Vector::zeros(2 * n);
    for i in 0..n {
        a[(i, i)] = 1.0;
        a[(n + i, i)] = -1.0;
        b[i] = 0.3;
        b[n + i] = 0.3;
    }
    QpInstance::new(h, f).with_ineq(a, b)
}

fn bench_qp(c: &mut Criterion) {
    let qp = qp_box_6();
    c.bench_function("qp/box_6", |bch| bch.iter(|| solve_qp(black_box(&qp)).unwrap()));
}

fn bench_lyapunov(c: &mut Criterion) {
    let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.5]);
    let q = Matrix::identity(2, 2);
    c.bench_function("lyapunov/siso", |bch| bch.iter(|| lti_lyapunov(black_box(&a), &q).unwrap()));
}

fn bench_hold(c: &mut Criterion) {
    let plant = build_siso_plant();
    let w = DisturbanceSignal::Ramp { offset: vec![0.0], slope: vec![0.05] };
    let x0 = Vector::from_row_slice(&[1.0, 0.0]);
    let u = Vector::from_element(1, 1.0);
    c.bench_function("rk4/siso_hold_160", |bch| bch.iter(|| integrate_hold(&plant, black_box(&x0), &u, &w, 0.0, 8.0, 160, false, 1e9).unwrap()));
}

fn bench_sqp_step(c: &mut Criterion) {
    let cfg = BuildingConfig::default();
    let plant = BuildingPlant::new(cfg.params.clone()).unwrap();
    let sqp = SqpBuilding::new(building_nlp(&cfg, &plant), cfg.price_vector(), cfg.eta, cfg.eps).unwrap();
    let w = building_disturbance(&cfg).value(13.0 * 3600.0);
    let u = plant.params.input_box().lower.clone();
    let y = plant.h(&u, &w);
    let z = sqp.nlp.join(&y, &u, &Vector::zeros(sqp.nlp.n_y));
    c.bench_function("sqp/building_step", |bch| bch.iter(|| sqp.step(black_box(&z), &y, 0).unwrap()));
}

fn bench_scenarios(c: &mut Criterion) {
    let mut g = c.benchmark_group("scenario");
    g.sample_size(10);
    let siso = ScenarioConfig::Siso(SisoConfig::default());
    g.bench_function("siso_tau8", |bch| bch.iter_batched(|| siso.clone(), |cfg| run_scenario(&cfg).unwrap(), BatchSize::SmallInput));
    let sc = ScenarioConfig::SupplyChain(SupplyChainConfig::default());
    g.bench_function("supply_chain", |bch| bch.iter_batched(|| sc.clone(), |cfg| run_scenario(&cfg).unwrap(), BatchSize::SmallInput));
    g.finish();
}

criterion_group!(benches, bench_qp, bench_lyapunov, bench_hold, bench_sqp_step, bench_scenarios);
criterion_main!(benches);
