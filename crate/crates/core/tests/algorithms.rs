mod common;

use common::{merit_increases, scalar_nlp, static_iterates};
use feskit::algorithms::{Algorithm, Fbs, HessianPolicy, JosephyNewton, ProxGrad, SqpBuilding, StepSchedule};
use feskit::analysis::estimate_gain;
use feskit::linalg::{Matrix, Vector};
use feskit::operators::{check_fbs_gains, resolvent_fbs, sqne_probe, BoxSet, ConvexSet, FbsPreconditioner};
use feskit::plant::{build_supply_chain_plant, BuildingPlant, Plant, SupplyChainParams};
use feskit::scenarios::{
    building_disturbance, building_nlp, supply_chain_equilibrium, supply_chain_game, supply_chain_setup, BuildingConfig,
    SupplyChainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn v(x: &[f64]) -> Vector {
    Vector::from_row_slice(x)
}

// ---------------------------------------------------------------- prox-grad

fn prox_grad() -> ProxGrad {
    ProxGrad::new(v(&[1.0]), 0.8, StepSchedule::Constant, BoxSet::uniform(1, -10.0, 10.0).unwrap()).unwrap()
}

#[test]
fn prox_grad_fixed_point_and_merit() {
    let pg = prox_grad();
    let w = 0.3;
    let z_star = v(&[0.7]);
    let s = &z_star + v(&[w]);
    assert!((pg.step(&z_star, &s, 0).unwrap() - &z_star).amax() <= 1e-9);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let z0 = v(&[rng.gen_range(-10.0..10.0)]);
        let it = static_iterates(&pg, |u| u + v(&[w]), &z0, 40);
        assert_eq!(merit_increases(&it, &z_star, &pg.metric(), 0.0), 0);
        assert!((it.last().unwrap() - &z_star).amax() < 1e-12);
    }
}

#[test]
fn prox_grad_output_gain_probe() {
    let pg = prox_grad();
    let z = v(&[0.2]);
    let est = estimate_gain(|s| pg.step(&z, s, 0).unwrap(), &v(&[0.0]), 3.0, 300, 5);
    let bound = pg.output_lipschitz().unwrap();
    assert!(est.max_ratio <= bound * (1.0 + 1e-12));
    assert!(est.max_ratio >= 0.99 * bound);
}

// ---------------------------------------------------------------- FBS

struct StaticGame {
    fbs: Fbs,
    params: SupplyChainParams,
    w: Vector,
    z_star: Vector,
}

fn static_game() -> StaticGame {
    let setup = supply_chain_setup(&SupplyChainConfig::default()).unwrap();
    let params = setup.draw.params.clone();
    let w = setup.disturbance.value(0.0);
    let eq = supply_chain_equilibrium(&setup.fbs, &params, &w).unwrap();
    let z_star = Vector::from_iterator(params.n() + 1, eq.sigma.iter().chain(eq.lambda.iter()).copied());
    StaticGame { fbs: setup.fbs, params, w, z_star }
}

#[test]
fn fbs_fixed_point_merit_and_convergence() {
    let g = static_game();
    let plant = build_supply_chain_plant(&g.params).unwrap();
    let h = |u: &Vector| plant.h(u, &g.w);
    let s_star = h(&g.fbs.input(&g.z_star));
    assert!((g.fbs.step(&g.z_star, &s_star, 0).unwrap() - &g.z_star).amax() <= 1e-9);

    let n = g.params.n();
    let mut z0 = Vector::zeros(n + 1);
    for i in 0..n {
        z0[i] = g.params.sigma_min;
    }
    let it = static_iterates(&g.fbs, h, &z0, 5000);
    assert_eq!(merit_increases(&it, &g.z_star, &g.fbs.metric(), 1e-12), 0);
    assert!((it.last().unwrap() - &g.z_star).amax() <= 1e-6, "{:?} vs {:?}", it.last(), g.z_star);

    // post-surge demand makes the cap active
    let w_surge = &g.w * 3.0;
    let eq = supply_chain_equilibrium(&g.fbs, &g.params, &w_surge).unwrap();
    assert!(eq.lambda[0] > 0.0);
    let z_surge = Vector::from_iterator(n + 1, eq.sigma.iter().chain(eq.lambda.iter()).copied());
    let it = static_iterates(&g.fbs, |u| plant.h(u, &w_surge), &z0, 5000);
    assert_eq!(merit_increases(&it, &z_surge, &g.fbs.metric(), 1e-12), 0);
    assert!((it.last().unwrap() - &z_surge).amax() <= 1e-6);
}

#[test]
fn fbs_sqne_with_admissible_gains() {
    let g = static_game();
    let game = &g.fbs.game;
    check_fbs_gains(&g.fbs.pre, g.fbs.delta, game.mu_tilde, game.ell_tilde).unwrap();
    let plant = build_supply_chain_plant(&g.params).unwrap();
    let cond = |z: &Vector| g.fbs.fbs_step(z, &plant.h(&g.fbs.input(z), &g.w));
    let est = sqne_probe(cond, &g.z_star, g.fbs.pre.phi(), 1000, 2.0, 17).unwrap();
    let eta = g.fbs.averagedness();
    assert!(eta > 0.5 && eta < 1.0);
    assert!(est.pass && est.rho > 0.0);
    assert!(est.rho >= (1.0 - eta) / eta * (1.0 - 1e-9), "ρ̂ = {} below (1−η)/η = {}", est.rho, (1.0 - eta) / eta);
}

#[test]
fn fbs_output_gain_probe() {
    let g = static_game();
    let plant = build_supply_chain_plant(&g.params).unwrap();
    let s0 = plant.h(&g.fbs.input(&g.z_star), &g.w);
    let est = estimate_gain(|s| g.fbs.fbs_step(&g.z_star, s), &s0, 5.0, 500, 2);
    assert!(est.max_ratio <= g.fbs.output_lipschitz().unwrap() * (1.0 + 1e-12));
}

/// Dense oracle for `z = (id + Φ⁻¹𝒜)⁻¹ v`: solves the affine variational
/// inequality `⟨M z − Φ v, z' − z⟩ ≥ 0` over `Ω × ℝ₊ᵐ`, `M = Φ + S`,
/// by enumerating which bound each coordinate sits at.
fn dense_resolvent(lo: &Vector, hi: &Vector, pre: &FbsPreconditioner, x: &Vector) -> Vector {
    let n_u = lo.len();
    let m = pre.a.nrows();
    let dim = n_u + m;
    let mut skew = Matrix::zeros(dim, dim);
    skew.view_mut((0, n_u), (n_u, m)).copy_from(&pre.a.transpose());
    skew.view_mut((n_u, 0), (m, n_u)).copy_from(&(-&pre.a));
    let mm = pre.phi() + skew;
    let q = -(pre.phi() * x);
    let lower: Vec<f64> = (0..dim).map(|i| if i < n_u { lo[i] } else { 0.0 }).collect();
    let upper: Vec<f64> = (0..dim).map(|i| if i < n_u { hi[i] } else { f64::INFINITY }).collect();
    let states = 3usize.pow(dim as u32);
    for code in 0..states {
        let mut c = code;
        let mut fixed = vec![None; dim];
        for f in fixed.iter_mut() {
            *f = match c % 3 {
                0 => None,
                1 => Some(false),
                _ => Some(true),
            };
            c /= 3;
        }
        if fixed.iter().enumerate().any(|(i, f)| (*f == Some(true) && !upper[i].is_finite()) || (*f == Some(false) && !lower[i].is_finite())) {
            continue;
        }
        let mut k = Matrix::zeros(dim, dim);
        let mut rhs = Vector::zeros(dim);
        for i in 0..dim {
            match fixed[i] {
                None => {
                    k.row_mut(i).copy_from(&mm.row(i));
                    rhs[i] = -q[i];
                }
                Some(at_upper) => {
                    k[(i, i)] = 1.0;
                    rhs[i] = if at_upper { upper[i] } else { lower[i] };
                }
            }
        }
        let Some(z) = k.lu().solve(&rhs) else { continue };
        let r = &mm * &z + &q;
        let ok = (0..dim).all(|i| match fixed[i] {
            None => z[i] >= lower[i] - 1e-12 && z[i] <= upper[i] + 1e-12,
            Some(false) => r[i] >= -1e-12,
            Some(true) => r[i] <= 1e-12,
        });
        if ok {
            return z;
        }
    }
    panic!("no solution found by enumeration");
}

#[test]
fn fbs_resolvent_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..30 {
        let a = Matrix::from_fn(1, 2, |_, _| rng.gen_range(-1.0..1.5));
        let lo = v(&[rng.gen_range(-1.0..0.0), rng.gen_range(-1.0..0.0)]);
        let hi = &lo + v(&[rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0)]);
        let delta = 0.5;
        let norms: Vec<f64> = (0..2).map(|i| a[(0, i)].abs()).collect();
        let gammas = norms.iter().map(|n| 1.0 / (n + delta)).collect();
        let gamma_c = 1.0 / (norms.iter().sum::<f64>() + delta);
        let pre = FbsPreconditioner::new(vec![1, 1], gammas, gamma_c, a).unwrap();
        let sets: Vec<ConvexSet> =
            (0..2).map(|i| ConvexSet::Box(BoxSet::new(v(&[lo[i]]), v(&[hi[i]])).unwrap())).collect();
        let x = v(&[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0)]);
        let fast = resolvent_fbs(&sets, &pre, &x);
        let dense = dense_resolvent(&lo, &hi, &pre, &x);
        assert!((&fast - &dense).amax() <= 1e-8, "{fast} vs {dense}");
    }
}

#[test]
fn fbs_agent_order_invariance() {
    let g = static_game();
    let n = g.params.n();
    let perm: Vec<usize> = (0..n).rev().collect();
    let p = &g.params;
    let permuted = SupplyChainParams {
        tau_p: perm.iter().map(|&i| p.tau_p[i]).collect(),
        tau_m: p.tau_m,
        k: perm.iter().map(|&i| p.k[i]).collect(),
        beta: perm.iter().map(|&i| p.beta[i]).collect(),
        beta_cross: perm.iter().map(|&i| perm.iter().map(|&j| p.beta_cross[i][j]).collect()).collect(),
        cost: perm.iter().map(|&i| p.cost[i]).collect(),
        sigma_min: p.sigma_min,
        base_demand: perm.iter().map(|&i| p.base_demand[i]).collect(),
    };
    let cap = g.fbs.game.coupling_b[0] / (g.fbs.game.coupling_a[(0, 0)] * n as f64);
    let kappa = g.fbs.game.coupling_a[(0, 0)];
    let fbs_p = Fbs::with_max_gains(supply_chain_game(&permuted, cap, kappa).unwrap(), 1.01).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let z = Vector::from_fn(n + 1, |_, _| rng.gen_range(0.0..10.0));
        let s = Vector::from_fn(2 * n, |_, _| rng.gen_range(0.0..20.0));
        let zp = Vector::from_fn(n + 1, |i, _| if i < n { z[perm[i]] } else { z[n] });
        let sp = Vector::from_fn(2 * n, |r, _| s[2 * perm[r / 2] + r % 2]);
        let a = g.fbs.fbs_step(&z, &s);
        let b = fbs_p.fbs_step(&zp, &sp);
        for i in 0..n {
            assert!((a[perm[i]] - b[i]).abs() <= 1e-12);
        }
        assert!((a[n] - b[n]).abs() <= 1e-12);
    }
}

// ---------------------------------------------------------------- Josephy–Newton

#[test]
fn jn_set_point_two_steps() {
    // φ = ½|ξ − 1|², 𝒰 = [−10, 10], w = 0 → u = 1
    let jn = JosephyNewton::new(scalar_nlp(1.0, 0.0, 0.0), HessianPolicy::ExactClamped);
    let w = v(&[0.0]);
    let it = static_iterates(&jn, |u| (jn.nlp.h)(u, &w), &Vector::zeros(3), 2);
    let z = it.last().unwrap();
    assert!((z[1] - 1.0).abs() <= 1e-9, "u after two steps = {}", z[1]);
    assert!(jn.nlp.kkt_residual(z, &w) <= 1e-9);
}

#[test]
fn jn_newton_exact_on_quadratic() {
    let (r, rho) = (2.0, 0.5);
    let jn = JosephyNewton::new(scalar_nlp(r, rho, 0.0), HessianPolicy::ExactClamped);
    let w = v(&[0.4]);
    let u_star = (r - w[0]) / (1.0 + rho);
    let z_star = v(&[u_star + w[0], u_star, u_star + w[0] - r]);
    assert!(jn.nlp.kkt_residual(&z_star, &w) <= 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let u0 = rng.gen_range(-5.0..5.0);
        let z0 = v(&[rng.gen_range(-3.0..3.0), u0, rng.gen_range(-3.0..3.0)]);
        let s = (jn.nlp.h)(&v(&[u0]), &w);
        let z1 = jn.step(&z0, &s, 0).unwrap();
        assert!((&z1 - &z_star).amax() <= 1e-9, "{z1} vs {z_star}");
    }
    let s_star = (jn.nlp.h)(&v(&[u_star]), &w);
    assert!((jn.step(&z_star, &s_star, 0).unwrap() - &z_star).amax() <= 1e-9);
}

#[test]
fn jn_merit_decreases_on_nonlinear_map() {
    let jn = JosephyNewton::new(scalar_nlp(1.5, 0.2, 0.1), HessianPolicy::ExactClamped);
    let w = v(&[0.0]);
    let h = |u: &Vector| (jn.nlp.h)(u, &w);
    let z_star = static_iterates(&jn, h, &Vector::zeros(3), 60).pop().unwrap();
    assert!(jn.nlp.kkt_residual(&z_star, &w) <= 1e-10);
    assert!((jn.step(&z_star, &h(&jn.input(&z_star)), 0).unwrap() - &z_star).amax() <= 1e-9);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let u0 = z_star[1] + rng.gen_range(-0.3..0.3);
        let z0 = v(&[h(&v(&[u0]))[0], u0, z_star[2] + rng.gen_range(-0.3..0.3)]);
        let it = static_iterates(&jn, h, &z0, 8);
        assert_eq!(merit_increases(&it, &z_star, &jn.metric(), 1e-12), 0);
        assert!((it.last().unwrap() - &z_star).amax() <= 1e-12);
    }
}

// ---------------------------------------------------------------- building SQP

#[test]
fn sqp_building_fixed_point_and_merit() {
    let cfg = BuildingConfig::default();
    let plant = BuildingPlant::new(cfg.params.clone()).unwrap();
    let sqp = SqpBuilding::new(building_nlp(&cfg, &plant), cfg.price_vector(), cfg.eta, cfg.eps).unwrap();
    let w = building_disturbance(&cfg).value(13.0 * 3600.0);
    let h = |u: &Vector| plant.h(u, &w);
    let u0 = plant.params.input_box().lower.clone();
    let z0 = sqp.nlp.join(&h(&u0), &u0, &Vector::zeros(sqp.nlp.n_y));
    let it = static_iterates(&sqp, h, &z0, 200);
    let z_star = it.last().unwrap().clone();
    let s_star = h(&sqp.input(&z_star));
    assert!((sqp.step(&z_star, &s_star, 0).unwrap() - &z_star).amax() <= 1e-9);
    let bx = plant.params.input_box();
    let (_, u_star, lam_star) = sqp.nlp.split(&z_star);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let du = Vector::from_fn(u_star.len(), |i, _| 0.05 * (bx.upper[i] - bx.lower[i]) * rng.gen_range(-1.0..1.0));
        let u0 = bx.project(&(&u_star + du));
        let z0 = sqp.nlp.join(&h(&u0), &u0, &lam_star);
        let it = static_iterates(&sqp, h, &z0, 30);
        assert_eq!(merit_increases(&it, &z_star, &sqp.metric(), 1e-9), 0);
        assert!((it.last().unwrap() - &z_star).amax() <= 1e-8);
    }
}

#[test]
fn sqp_accepts_reference_tuning() {
    let cfg = BuildingConfig::default();
    assert_eq!((cfg.eta, cfg.eps), (5e4, 1e-5));
    let plant = BuildingPlant::new(cfg.params.clone()).unwrap();
    assert!(SqpBuilding::new(building_nlp(&cfg, &plant), cfg.price_vector(), cfg.eta, cfg.eps).is_ok());
}
