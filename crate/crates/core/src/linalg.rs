//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Largest singular value; zero for empty matrices.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Extreme eigenvalues of the symmetric part of `m`.
pub fn sym_eig_min_max(m: &Matrix) -> (f64, f64) {
    let s = symmetric_part(m);
    let ev = SymmetricEigen::new(s).eigenvalues;
    (ev.min(), ev.max())
}

pub fn symmetric_part(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Unpivoted LDLᵀ factorization. Returns the diagonal pivots; factorization
/// stops at the first pivot that is not strictly positive, which is then the
/// last entry of the returned vector.
pub fn ldl_pivots(m: &Matrix) -> Vec<f64> {
    let n = m.nrows();
    let mut l = Matrix::identity(n, n);
    let mut d = Vec::with_capacity(n);
    for j in 0..n {
        let mut dj = m[(j, j)];
        for k in 0..j {
            dj -= l[(j, k)] * l[(j, k)] * d[k];
        }
        d.push(dj);
        if !(dj > 0.0) {
            return d;
        }
        for i in (j + 1)..n {
            let mut v = m[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)] * d[k];
            }
            l[(i, j)] = v / dj;
        }
    }
    d
}

/// Singular values of `m` (descending); handles wide matrices.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Numerical rank with a tolerance relative to the largest singular value.
pub fn numerical_rank(m: &Matrix, rel_tol: f64) -> usize {
    let sv = singular_values(m);
    match sv.first() {
        None => 0,
        Some(&0.0) => 0,
        Some(&smax) => sv.iter().filter(|&&s| s > rel_tol * smax).count(),
    }
}

/// Orthonormal basis of the nullspace of `a` together with the rank of `a`.
pub fn nullspace(a: &Matrix, rel_tol: f64) -> (Matrix, usize) {
    let n = a.ncols();
    if a.nrows() == 0 {
        return (Matrix::identity(n, n), 0);
    }
    // pad to at least n rows so the SVD returns a full V
    let rows = a.nrows().max(n);
    let mut padded = Matrix::zeros(rows, n);
    padded.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.max();
    let mut null_rows = Vec::new();
    let mut rank = 0;
    for (i, s) in svd.singular_values.iter().enumerate() {
        if smax > 0.0 && *s > rel_tol * smax {
            rank += 1;
        } else {
            null_rows.push(i);
        }
    }
    let mut basis = Matrix::zeros(n, null_rows.len());
    for (c, &i) in null_rows.iter().enumerate() {
        basis.set_column(c, &v_t.row(i).transpose());
    }
    (basis, rank)
}

/// Projects a symmetric matrix onto the PSD cone by clamping eigenvalues at zero.
pub fn psd_clamp(m: &Matrix) -> Matrix {
    let eig = SymmetricEigen::new(symmetric_part(m));
    let clamped = eig.eigenvalues.map(|v| v.max(0.0));
    &eig.eigenvectors * Matrix::from_diagonal(&clamped) * eig.eigenvectors.transpose()
}

/// |v|_P = sqrt(vᵀ P v).
pub fn p_norm(v: &Vector, p: &Matrix) -> f64 {
    v.dot(&(p * v)).max(0.0).sqrt()
}

/// Central-difference Jacobian of `f` at `x`.
pub fn fd_jacobian<F>(f: F, x: &Vector, rel_step: f64) -> Matrix
where
    F: Fn(&Vector) -> Vector,
{
    let m = f(x).len();
    let mut jac = Matrix::zeros(m, x.len());
    for j in 0..x.len() {
        let h = rel_step * (1.0 + x[j].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let col = (f(&xp) - f(&xm)) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}

/// Largest entrywise deviation of `a` from `b`, relative to `1 + max|b|`.
pub fn max_rel_deviation(a: &Matrix, b: &Matrix) -> f64 {
    let scale = 1.0 + b.amax();
    (a - b).amax() / scale
}

pub fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Stacks vectors end to end.
pub fn concat(parts: &[&Vector]) -> Vector {
    let n = parts.iter().map(|p| p.len()).sum();
    let mut out = Vector::zeros(n);
    let mut off = 0;
    for p in parts {
        out.rows_mut(off, p.len()).copy_from(*p);
        off += p.len();
    }
    out
}

/// Serde adapter writing a matrix as a list of rows.
pub mod rows_serde {
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    use super::Matrix;

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let ncols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("matrix rows differ in length"));
        }
        Ok(Matrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }
}
