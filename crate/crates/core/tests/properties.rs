use feskit::algorithms::{prox_grad_step, vanishing_schedule};
use feskit::analysis::{small_gain_expression, small_gain_threshold};
use feskit::ge_core::NonsmoothTerm;
use feskit::linalg::{Matrix, Vector};
use feskit::operators::{resolvent_fbs, BoxSet, ConvexSet, FbsPreconditioner};
use feskit::plant::lti_lyapunov;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn phi_norm(v: &Vector, phi: &Matrix) -> f64 {
    (v.transpose() * phi * v)[(0, 0)].max(0.0).sqrt()
}

/// Random scalar-agent market: boxes, one or two coupling rows, admissible gains.
fn random_fbs(seed: u64) -> (Vec<ConvexSet>, FbsPreconditioner) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=4);
    let m = rng.gen_range(1..=2);
    let a = Matrix::from_fn(m, n, |_, _| rng.gen_range(-2.0..2.0));
    let a_norm = a.norm();
    let gammas: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.9) / (a_norm + 1.0)).collect();
    let gamma_c = rng.gen_range(0.05..0.9) / (a_norm + 1.0);
    let sets = (0..n)
        .map(|_| {
            let lo = rng.gen_range(-2.0..1.0);
            ConvexSet::Box(BoxSet::uniform(1, lo, lo + rng.gen_range(0.1..3.0)).unwrap())
        })
        .collect();
    (sets, FbsPreconditioner::new(vec![1; n], gammas, gamma_c, a).unwrap())
}

proptest! {
    #[test]
    fn box_projection_is_idempotent_and_nonexpansive(
        lo in -5.0f64..0.0, width in 0.0f64..5.0,
        a in prop::collection::vec(-10.0f64..10.0, 3),
        b in prop::collection::vec(-10.0f64..10.0, 3),
    ) {
        let set = BoxSet::uniform(3, lo, lo + width).unwrap();
        let (a, b) = (Vector::from_vec(a), Vector::from_vec(b));
        let pa = set.project(&a);
        prop_assert_eq!(set.project(&pa), pa.clone());
        prop_assert!((&pa - set.project(&b)).norm() <= (&a - &b).norm() + 1e-12);
    }

    #[test]
    fn prox_grad_contracts_on_static_map(
        z1 in -10.0f64..10.0, z2 in -10.0f64..10.0, w in -3.0f64..3.0, gamma in 0.01f64..1.0,
    ) {
        // with y = u + w the step is (1 − γ)-contractive
        let t = |z: f64| prox_grad_step(z, z + w, 1.0, gamma, -10.0, 10.0);
        prop_assert!((t(z1) - t(z2)).abs() <= (1.0 - gamma) * (z1 - z2).abs() + 1e-12);
        prop_assert!((-10.0..=10.0).contains(&t(z1)));
    }

    #[test]
    fn resolvent_is_feasible_and_nonexpansive_in_metric(
        seed in 0u64..10_000,
        v1 in prop::collection::vec(-5.0f64..5.0, 6),
        v2 in prop::collection::vec(-5.0f64..5.0, 6),
    ) {
        let (sets, pre) = random_fbs(seed);
        let dim = pre.n_u() + pre.a.nrows();
        let v1 = Vector::from_iterator(dim, v1.into_iter().take(dim));
        let v2 = Vector::from_iterator(dim, v2.into_iter().take(dim));
        let r1 = resolvent_fbs(&sets, &pre, &v1);
        let r2 = resolvent_fbs(&sets, &pre, &v2);
        for (i, set) in sets.iter().enumerate() {
            let ui = r1.rows(i, 1).into_owned();
            prop_assert!((set.project(&ui) - &ui).amax() <= 1e-12);
        }
        prop_assert!(r1.rows(pre.n_u(), pre.a.nrows()).iter().all(|&l| l >= 0.0));
        prop_assert!(phi_norm(&(&r1 - &r2), pre.phi()) <= phi_norm(&(&v1 - &v2), pre.phi()) * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn skew_coupling_has_no_quadratic_part(
        a in prop::collection::vec(-3.0f64..3.0, 6),
        z in prop::collection::vec(-3.0f64..3.0, 5),
    ) {
        let a = Matrix::from_vec(2, 3, a);
        let mut m = Matrix::zeros(5, 5);
        m.view_mut((0, 3), (3, 2)).copy_from(&a.transpose());
        m.view_mut((3, 0), (2, 3)).copy_from(&(-&a));
        let z = Vector::from_vec(z);
        prop_assert!((z.transpose() * &m * &z)[(0, 0)].abs() <= 1e-12);
    }

    #[test]
    fn hinge_prox_minimizes_its_objective(
        v in prop::collection::vec(-6.0f64..6.0, 3),
        t in 0.01f64..3.0, weight in 0.1f64..5.0,
        probe in prop::collection::vec(-0.5f64..0.5, 3),
    ) {
        let term = NonsmoothTerm::Hinge { indices: vec![0, 2], lower: vec![-1.0, 0.0], upper: vec![1.0, 0.5], weight };
        let v = Vector::from_vec(v);
        let obj = |x: &Vector| t * term.value(x) + 0.5 * (x - &v).norm_squared();
        let p = term.prox(&v, t);
        let q = &p + Vector::from_vec(probe);
        prop_assert!(obj(&p) <= obj(&q) + 1e-12);
    }

    #[test]
    fn small_gain_threshold_is_the_boundary(c1 in 0.01f64..50.0, l_v in 0.01f64..50.0, alpha5 in 0.01f64..3.0) {
        let tau = small_gain_threshold(c1, l_v, alpha5).unwrap();
        // closed form: q = e^{−α₅τ̄} solves c q² + q − 1 = 0
        let c = c1 * l_v;
        let q = (-1.0 + (1.0 + 4.0 * c).sqrt()) / (2.0 * c);
        let exact = -q.ln() / alpha5;
        prop_assert!((tau - exact).abs() <= 1e-9 * exact.max(1.0));
        prop_assert!(small_gain_expression(c, alpha5, tau * 1.01) < 1.0);
        prop_assert!(small_gain_expression(c, alpha5, tau * 0.99) > 1.0);
    }

    #[test]
    fn lyapunov_solution_has_small_residual(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=4);
        let m = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        // shift the spectrum into the left half plane
        let shift = m.complex_eigenvalues().iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max) + rng.gen_range(0.1..1.0);
        let a = m - Matrix::identity(n, n) * shift;
        let q = Matrix::identity(n, n);
        let cert = lti_lyapunov(&a, &q).unwrap();
        let res = (a.transpose() * &cert.p + &cert.p * &a + &q).amax();
        prop_assert!(res <= 1e-10 * cert.p.amax().max(1.0));
        prop_assert!(cert.alpha3 > 0.0 && cert.alpha4 >= cert.alpha3);
    }

    #[test]
    fn vanishing_schedule_is_decreasing_and_harmonic(gamma0 in 0.01f64..1.0, k in 0usize..10_000) {
        let g = vanishing_schedule(gamma0, k);
        prop_assert!(g < vanishing_schedule(gamma0, k.saturating_sub(1)) || k == 0);
        prop_assert!(((k + 1) as f64 * g - gamma0).abs() <= 1e-12);
    }
}
