#![allow(dead_code)]

use std::sync::Arc;

use feskit::algorithms::Algorithm;
use feskit::ge_core::{KktNlpProblem, NonsmoothTerm};
use feskit::operators::{BoxSet, ConvexSet};
use feskit::linalg::{p_norm, Matrix, Vector};
use feskit::qp::QpInstance;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random feasible strictly convex QP with n ≤ 6, at most 8 inequalities and
/// at most 2 equalities.
pub fn random_qp(seed: u64) -> QpInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=6);
    let m = rng.gen_range(0..=8);
    let p = rng.gen_range(0..=2usize.min(n - 1));
    let l = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let h = &l * l.transpose() + Matrix::identity(n, n) * 0.1;
    let h = (&h + h.transpose()) * 0.5;
    let f = Vector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
    let x0 = Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let a_in = Matrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
    let slack = Vector::from_fn(m, |_, _| rng.gen_range(0.0..1.0));
    let b_in = &a_in * &x0 + slack;
    let a_eq = Matrix::from_fn(p, n, |_, _| rng.gen_range(-1.0..1.0));
    let b_eq = &a_eq * &x0;
    QpInstance::new(h, f).with_eq(a_eq, b_eq).with_ineq(a_in, b_in)
}

/// Brute-force active-set enumeration: for every subset of inequality rows,
/// solve the equality-constrained KKT system and keep the point that is
/// primal feasible with nonnegative multipliers.
pub fn enumeration_oracle(qp: &QpInstance) -> Option<Vector> {
    let n = qp.f.len();
    let m = qp.b_ineq.len();
    let p = qp.b_eq.len();
    let mut best: Option<(f64, Vector)> = None;
    for mask in 0u32..(1u32 << m) {
        let rows: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let k = p + rows.len();
        if k > n {
            continue;
        }
        let mut kkt = Matrix::zeros(n + k, n + k);
        let mut rhs = Vector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.h);
        for i in 0..n {
            rhs[i] = -qp.f[i];
        }
        for e in 0..p {
            for j in 0..n {
                kkt[(n + e, j)] = qp.a_eq[(e, j)];
                kkt[(j, n + e)] = qp.a_eq[(e, j)];
            }
            rhs[n + e] = qp.b_eq[e];
        }
        for (r, &i) in rows.iter().enumerate() {
            for j in 0..n {
                kkt[(n + p + r, j)] = qp.a_ineq[(i, j)];
                kkt[(j, n + p + r)] = qp.a_ineq[(i, j)];
            }
            rhs[n + p + r] = qp.b_ineq[i];
        }
        if kkt.determinant().abs() < 1e-12 {
            continue;
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let x = sol.rows(0, n).into_owned();
        let feasible = (0..m).all(|i| qp.a_ineq.row(i).transpose().dot(&x) <= qp.b_ineq[i] + 1e-9);
        let duals_ok = (0..rows.len()).all(|r| sol[n + p + r] >= -1e-9);
        if feasible && duals_ok {
            let obj = qp.objective(&x);
            if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                best = Some((obj, x));
            }
        }
    }
    best.map(|(_, x)| x)
}

/// Iterates the static loop `z ← T(z, h(q(z)))` and returns the iterates.
pub fn static_iterates<A: Algorithm, H: Fn(&Vector) -> Vector>(alg: &A, h: H, z0: &Vector, n: usize) -> Vec<Vector> {
    let mut out = vec![z0.clone()];
    let mut z = z0.clone();
    for k in 0..n {
        let s = h(&alg.input(&z));
        z = alg.step(&z, &s, k).unwrap();
        out.push(z.clone());
    }
    out
}

pub fn merit_increases(iterates: &[Vector], z_star: &Vector, p: &Matrix, slack: f64) -> usize {
    let w: Vec<f64> = iterates.iter().map(|z| p_norm(&(z - z_star), p)).collect();
    w.windows(2).filter(|pair| pair[1] > pair[0] + slack).count()
}

/// `min ½|ξ − r|² + ρ/2|u|²  s.t.  ξ = u + w (+ c u³),  u ∈ [−10, 10]`.
pub fn scalar_nlp(r: f64, rho: f64, cubic: f64) -> KktNlpProblem {
    KktNlpProblem {
        n_y: 1,
        n_u: 1,
        phi: Arc::new(move |xi: &Vector, u: &Vector| 0.5 * (xi[0] - r).powi(2) + 0.5 * rho * u[0] * u[0]),
        phi_grad: Arc::new(move |xi: &Vector, u: &Vector| (Vector::from_row_slice(&[xi[0] - r]), Vector::from_row_slice(&[rho * u[0]]))),
        phi_hess: Arc::new(move |_: &Vector, _: &Vector| Matrix::from_diagonal(&Vector::from_row_slice(&[1.0, rho]))),
        varphi: NonsmoothTerm::Zero,
        u_set: ConvexSet::Box(BoxSet::uniform(1, -10.0, 10.0).unwrap()),
        h: Arc::new(move |u: &Vector, w: &Vector| Vector::from_row_slice(&[u[0] + cubic * u[0].powi(3) + w[0]])),
        h_sensitivity: Arc::new(move |u: &Vector, _: &Vector| Matrix::from_element(1, 1, 1.0 + 3.0 * cubic * u[0] * u[0])),
        h_curvature: Some(Arc::new(move |u: &Vector, _: &Vector, lam: &Vector| Matrix::from_element(1, 1, 6.0 * cubic * u[0] * lam[0]))),
        w_estimate: Arc::new(|_: &Vector, _: &Vector| Vector::from_row_slice(&[0.0])),
    }
}
