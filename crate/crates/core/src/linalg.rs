use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, TmdaError};

/// `(m + m^T) / 2`
pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..j {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Eigenpairs of a symmetric matrix, eigenvalues ascending.
pub(crate) fn sym_eigen_ascending(m: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps ties in solver order
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = eig.eigenvectors.select_columns(order.iter());
    (values, vectors)
}

/// Flip each column so its largest-magnitude entry is positive.
pub(crate) fn fix_signs(v: &mut DMatrix<f64>) {
    for mut col in v.column_iter_mut() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &x in col.iter() {
            if x.abs() > best {
                best = x.abs();
                sign = x.signum();
            }
        }
        if sign < 0.0 {
            col.neg_mut();
        }
    }
}

/// Smallest `k` eigenpairs of the pencil `C w = lambda B w` for symmetric `C`
/// and symmetric positive-definite `B`. Eigenvectors are B-orthonormal.
pub(crate) fn generalized_smallest(
    c: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = c.nrows();
    let chol = b
        .clone()
        .cholesky()
        .ok_or_else(|| TmdaError::Numerical("pencil is not definite".into()))?;
    let l = chol.l();
    // reduced = L^-1 C L^-T
    let mut linv_c = c.clone();
    if !l.solve_lower_triangular_mut(&mut linv_c) {
        return Err(TmdaError::Numerical("singular Cholesky factor".into()));
    }
    let mut reduced = linv_c.transpose();
    l.solve_lower_triangular_mut(&mut reduced);
    symmetrize(&mut reduced);
    let (vals, vecs) = sym_eigen_ascending(reduced);
    let finite = vals.iter().filter(|v| v.is_finite()).count();
    if k > finite || k > n {
        return Err(TmdaError::InvalidInput(format!(
            "requested {k} eigenpairs but only {finite} are finite"
        )));
    }
    let mut y = vecs.columns(0, k).into_owned();
    // w = L^-T y
    l.transpose().solve_upper_triangular_mut(&mut y);
    Ok((vals.rows(0, k).into_owned(), y))
}

/// Smallest `k` eigenpairs of `C w = lambda B w` with `w` restricted to the
/// span of the eigenvectors of `B` whose eigenvalues exceed `floor`.
/// Also returns the dimension of that span, or `None` when it is below `k`.
pub(crate) fn range_restricted_smallest(
    c: &DMatrix<f64>,
    b: &DMatrix<f64>,
    floor: f64,
    k: usize,
) -> Option<(DVector<f64>, DMatrix<f64>, usize)> {
    let (vals, vecs) = sym_eigen_ascending(b.clone());
    let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > floor).collect();
    if keep.len() < k {
        return None;
    }
    let mut t = DMatrix::zeros(b.nrows(), keep.len());
    for (j, &i) in keep.iter().enumerate() {
        t.set_column(j, &(vecs.column(i) / vals[i].sqrt()));
    }
    let mut reduced = t.transpose() * c * &t;
    symmetrize(&mut reduced);
    let (rv, ry) = sym_eigen_ascending(reduced);
    Some((rv.rows(0, k).into_owned(), t * ry.columns(0, k), keep.len()))
}

pub(crate) fn frob_sq(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

pub(crate) fn frob_sq_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}
