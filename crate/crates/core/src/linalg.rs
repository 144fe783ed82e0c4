use nalgebra::{DMatrix, DVector};

pub(crate) fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

pub(crate) fn center_columns(x: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let means = column_means(x);
    let mut xc = x.clone();
    for (j, mut col) in xc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    (xc, means)
}

/// Solves `a x = b` for symmetric positive definite `a`. Numerically
/// rank-deficient matrices are rejected.
pub(crate) fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let chol = a.clone().cholesky()?;
    let top = a.diagonal().amax();
    let l = chol.l_dirty();
    if (0..a.nrows()).any(|k| l[(k, k)] * l[(k, k)] <= 1e-13 * top) {
        return None;
    }
    let x = chol.solve(b);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

pub(crate) fn add_ridge(a: &DMatrix<f64>, alpha: f64) -> DMatrix<f64> {
    let mut out = a.clone();
    for k in 0..out.nrows() {
        out[(k, k)] += alpha;
    }
    out
}
