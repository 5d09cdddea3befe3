use feskit::ge_core::assemble_game_ge;
use feskit::linalg::{fd_jacobian, Vector};
use feskit::plant::{
    build_siso_plant, build_supply_chain_plant, integrate_hold, BuildingParams, BuildingPlant, DisturbanceSignal, Plant,
};
use feskit::scenarios::{supply_chain_setup, SupplyChainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel_dev(a: &feskit::linalg::Matrix, b: &feskit::linalg::Matrix) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

fn plants() -> Vec<(String, Box<dyn Plant>)> {
    let mut out: Vec<(String, Box<dyn Plant>)> = vec![("siso".into(), Box::new(build_siso_plant()))];
    for seed in [7, 0, 1] {
        let setup = supply_chain_setup(&SupplyChainConfig { seed, ..Default::default() }).unwrap();
        out.push((format!("supply chain {seed}"), Box::new(build_supply_chain_plant(&setup.draw.params).unwrap())));
    }
    out.push(("building".into(), Box::new(BuildingPlant::new(BuildingParams::default()).unwrap())));
    out
}

/// Random `(u, w)` of plausible magnitude for each plant.
fn sample_uw(plant: &dyn Plant, rng: &mut ChaCha8Rng) -> (Vector, Vector) {
    let d = plant.dims();
    if d.x == 6 && d.u == 8 {
        let bx = BuildingParams::default().input_box();
        let u = Vector::from_fn(d.u, |i, _| rng.gen_range(bx.lower[i]..=bx.upper[i]));
        let mut w = Vector::from_fn(d.w, |_, _| rng.gen_range(0.0..400.0));
        w[0] = rng.gen_range(-5.0..35.0);
        w[1] = rng.gen_range(5.0..15.0);
        (u, w)
    } else {
        (Vector::from_fn(d.u, |_, _| rng.gen_range(0.0..5.0)), Vector::from_fn(d.w, |_, _| rng.gen_range(0.0..5.0)))
    }
}

#[test]
fn steady_state_is_an_equilibrium_for_every_plant() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (name, plant) in plants() {
        for _ in 0..20 {
            let (u, w) = sample_uw(plant.as_ref(), &mut rng);
            let x = plant.p(&u, &w);
            let f = plant.f(&x, &u, &w);
            let scale = x.amax().max(1.0) / plant.fastest_time_constant();
            assert!(f.amax() <= 1e-9 * scale, "{name}: |f(p(u,w),u,w)| = {:.3e}", f.amax());
            assert_eq!(plant.h(&u, &w), plant.g(&x, &w), "{name}: h ≠ g∘p");
        }
    }
}

#[test]
fn output_sensitivity_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (name, plant) in plants() {
        for _ in 0..10 {
            let (u, w) = sample_uw(plant.as_ref(), &mut rng);
            let fd = fd_jacobian(|uu| plant.h(uu, &w), &u, 1e-6);
            let dev = rel_dev(&plant.h_sensitivity(&u, &w), &fd);
            assert!(dev <= 1e-5, "{name}: ∇h deviation {dev:.3e}");
        }
    }
}

#[test]
fn supply_chain_game_jacobians_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in [7, 0, 1, 2, 3] {
        let setup = supply_chain_setup(&SupplyChainConfig { seed, ..Default::default() }).unwrap();
        let ge = assemble_game_ge(&setup.fbs.game).unwrap();
        let points: Vec<(Vector, Vector)> = (0..5)
            .map(|_| {
                (
                    Vector::from_fn(ge.dim_z, |_, _| rng.gen_range(0.0..5.0)),
                    Vector::from_fn(ge.dim_s, |_, _| rng.gen_range(0.0..5.0)),
                )
            })
            .collect();
        let check = ge.check_jacobians(&points);
        assert!(check.max_dev_z <= 1e-5 && check.max_dev_s <= 1e-5, "seed {seed}: {check:?}");
    }
}

#[test]
fn demand_falls_with_own_price_and_rises_with_rivals() {
    for seed in [7, 0, 1, 2, 3] {
        let setup = supply_chain_setup(&SupplyChainConfig { seed, ..Default::default() }).unwrap();
        let p = &setup.draw.params;
        let n = p.n();
        let d_w = Vector::from_row_slice(&p.base_demand);
        let base = p.nominal_demand(&Vector::from_element(n, 1.0), &d_w);
        for j in 0..n {
            let mut sigma = Vector::from_element(n, 1.0);
            sigma[j] += 0.5;
            let d = p.nominal_demand(&sigma, &d_w);
            for i in 0..n {
                if i == j {
                    assert!(d[i] < base[i], "seed {seed}: own price raised demand");
                } else {
                    assert!(d[i] >= base[i], "seed {seed}: rival price lowered demand");
                }
            }
        }
    }
}

#[test]
fn rk4_is_fourth_order() {
    // time-varying disturbance so the w(t) evaluation points matter too
    let plant = build_siso_plant();
    let w = DisturbanceSignal::Ramp { offset: vec![0.3], slope: vec![0.1] };
    let x0 = Vector::from_row_slice(&[1.0, -0.5]);
    let u = Vector::from_element(1, 2.0);
    let end = |n| integrate_hold(&plant, &x0, &u, &w, 0.0, 8.0, n, false, 1e9).unwrap().x_end;
    let reference = end(4096);
    for n in [8, 16, 32] {
        let e1 = (end(n) - &reference).norm();
        let e2 = (end(2 * n) - &reference).norm();
        assert!(e1 / e2 >= 12.0, "substeps {n}: error ratio {:.2}", e1 / e2);
    }
}
