//! Closed-form competitors: least squares, ridge, distance and angle transfer
//! learning toward an external coefficient vector, rank stacking, and the
//! linear projection of a nonlinear external score.
//!
//! Every estimator centers the design internally, so the intercept is
//! `mean(Y) - mean(X)' beta`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{standardize_matrix, ExternalRanks};
use crate::error::{RasperError, Result};
use crate::linalg::{add_ridge, center_columns, solve_spd};
use crate::selection::HyperGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub beta: Vec<f64>,
}

impl LinearFit {
    pub fn beta_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.beta)
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        (x * self.beta_vector()).add_scalar(self.intercept)
    }
}

/// `(Xc'Xc + alpha I)^-1 (Xc'Y + target)`.
fn shrunk(x: &DMatrix<f64>, y: &DVector<f64>, alpha: f64, target: Option<DVector<f64>>) -> Result<LinearFit> {
    if x.nrows() != y.len() {
        return Err(RasperError::DimensionMismatch(format!(
            "design has {} rows, outcome {}",
            x.nrows(),
            y.len()
        )));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(RasperError::InvalidArgument(format!("alpha must be nonnegative, got {alpha}")));
    }
    let (xc, means) = center_columns(x);
    let mut rhs = xc.transpose() * y;
    if let Some(t) = target {
        if t.len() != x.ncols() {
            return Err(RasperError::DimensionMismatch(format!(
                "external coefficients have length {}, design {}",
                t.len(),
                x.ncols()
            )));
        }
        rhs += t;
    }
    let beta = solve_spd(&add_ridge(&(xc.transpose() * &xc), alpha), &rhs)
        .ok_or(RasperError::SingularDesign)?;
    Ok(LinearFit {
        intercept: y.mean() - means.dot(&beta),
        beta: beta.iter().copied().collect(),
    })
}

pub fn fit_ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<LinearFit> {
    shrunk(x, y, 0.0, None)
}

pub fn fit_ridge(x: &DMatrix<f64>, y: &DVector<f64>, alpha: f64) -> Result<LinearFit> {
    shrunk(x, y, alpha, None)
}

/// Shrinks toward `beta_e`: `(X'X + alpha I)^-1 (X'Y + alpha beta_e)`.
pub fn fit_dtl(x: &DMatrix<f64>, y: &DVector<f64>, alpha: f64, beta_e: &DVector<f64>) -> Result<LinearFit> {
    shrunk(x, y, alpha, Some(beta_e * alpha))
}

/// `(X'X + alpha I)^-1 (X'Y + lambda beta_e)`.
pub fn fit_atl(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha: f64,
    lambda: f64,
    beta_e: &DVector<f64>,
) -> Result<LinearFit> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(RasperError::InvalidArgument(format!("lambda must be nonnegative, got {lambda}")));
    }
    shrunk(x, y, alpha, Some(beta_e * lambda))
}

/// Least squares on `[X | r]` with the rank column standardized. The last
/// coefficient belongs to the rank column, on its standardized scale.
pub fn fit_stacking(x: &DMatrix<f64>, y: &DVector<f64>, ranks: &ExternalRanks) -> Result<LinearFit> {
    if ranks.len() != x.nrows() {
        return Err(RasperError::DimensionMismatch(format!(
            "{} ranks for {} rows",
            ranks.len(),
            x.nrows()
        )));
    }
    let r = standardize_matrix(
        &DMatrix::from_column_slice(ranks.len(), 1, ranks.as_f64().as_slice()),
        1,
        vec!["rank".into()],
    )?;
    let p = x.ncols();
    let mut aug = DMatrix::zeros(x.nrows(), p + 1);
    aug.columns_mut(0, p).copy_from(x);
    aug.column_mut(p).copy_from(&r.x.column(0));
    let fit = fit_ols(&aug, y)?;
    let gram = center_columns(&aug).0;
    let gram = gram.transpose() * gram;
    let eig = gram.symmetric_eigenvalues();
    if eig.min() < 1e-8 * eig.max() {
        log::warn!("rank column is nearly collinear with the design");
    }
    Ok(fit)
}

/// Stacking prediction needs the rank column for new rows; ranks of test
/// rows are taken within the test cohort and standardized the same way.
pub fn stacking_predict(fit: &LinearFit, x: &DMatrix<f64>, ranks: &ExternalRanks) -> Result<DVector<f64>> {
    let r = standardize_matrix(
        &DMatrix::from_column_slice(ranks.len(), 1, ranks.as_f64().as_slice()),
        1,
        vec!["rank".into()],
    )?;
    let p = x.ncols();
    let mut aug = DMatrix::zeros(x.nrows(), p + 1);
    aug.columns_mut(0, p).copy_from(x);
    aug.column_mut(p).copy_from(&r.x.column(0));
    Ok(fit.predict(&aug))
}

/// `(Z'Z)^-1 Z' mu_e`, zero-padded to length `p`. No intercept column: the
/// conventional block is standardized so its columns are already centered.
pub fn projection_target(z: &DMatrix<f64>, mu_e: &DVector<f64>, p: usize) -> Result<DVector<f64>> {
    if z.nrows() != mu_e.len() || p < z.ncols() {
        return Err(RasperError::DimensionMismatch(format!(
            "conventional block {}x{}, scores {}, target length {p}",
            z.nrows(),
            z.ncols(),
            mu_e.len()
        )));
    }
    let coef = solve_spd(&(z.transpose() * z), &(z.transpose() * mu_e)).ok_or(RasperError::SingularDesign)?;
    let mut out = DVector::zeros(p);
    out.rows_mut(0, z.ncols()).copy_from(&coef);
    Ok(out)
}

/// Leave-one-out error `(1/n) sum 1/2 (y_i - yhat_i^(-i))^2` for any fitting
/// rule, by explicit refits.
pub fn loocv_linear(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    fit: impl Fn(&DMatrix<f64>, &DVector<f64>) -> Result<LinearFit>,
) -> Result<f64> {
    let n = x.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let keep: Vec<usize> = (0..n).filter(|&k| k != i).collect();
        let xf = x.select_rows(&keep);
        let yf = DVector::from_iterator(n - 1, keep.iter().map(|&k| y[k]));
        let f = fit(&xf, &yf)?;
        let r = y[i] - f.intercept - x.row(i).transpose().dot(&f.beta_vector());
        total += 0.5 * r * r;
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tuned {
    pub alpha: f64,
    pub lambda: f64,
    pub loocv: f64,
}

fn pick(candidates: impl Iterator<Item = Result<Tuned>>) -> Result<Tuned> {
    let mut best: Option<Tuned> = None;
    for c in candidates {
        let c = c?;
        if !c.loocv.is_finite() {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => {
                c.loocv < b.loocv
                    || (c.loocv == b.loocv && (c.lambda < b.lambda || (c.lambda == b.lambda && c.alpha < b.alpha)))
            }
        };
        if better {
            best = Some(c);
        }
    }
    best.ok_or_else(|| RasperError::InvalidArgument("no tuning candidate succeeded".into()))
}

/// Ridge penalty chosen by leave-one-out over the grid's alpha values.
pub fn tune_ridge(x: &DMatrix<f64>, y: &DVector<f64>, grid: &HyperGrid) -> Result<Tuned> {
    pick(grid.alphas.iter().map(|&alpha| {
        Ok(Tuned {
            alpha,
            lambda: 0.0,
            loocv: loocv_linear(x, y, |a, b| fit_ridge(a, b, alpha))?,
        })
    }))
}

pub fn tune_dtl(x: &DMatrix<f64>, y: &DVector<f64>, beta_e: &DVector<f64>, grid: &HyperGrid) -> Result<Tuned> {
    pick(grid.alphas.iter().map(|&alpha| {
        Ok(Tuned {
            alpha,
            lambda: 0.0,
            loocv: loocv_linear(x, y, |a, b| fit_dtl(a, b, alpha, beta_e))?,
        })
    }))
}

/// ATL penalties chosen jointly over the full `(lambda, alpha)` grid.
pub fn tune_atl(x: &DMatrix<f64>, y: &DVector<f64>, beta_e: &DVector<f64>, grid: &HyperGrid) -> Result<Tuned> {
    pick(grid.alphas.iter().flat_map(|&alpha| {
        grid.lambdas.iter().map(move |&lambda| {
            Ok(Tuned {
                alpha,
                lambda,
                loocv: loocv_linear(x, y, |a, b| fit_atl(a, b, alpha, lambda, beta_e))?,
            })
        })
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::external_ranks;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::ops::AddAssign;

    fn instance(seed: u64, n: usize, p: usize) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let be = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        (x, y, be)
    }

    /// Generic oracle: solve the augmented normal equations with an explicit
    /// intercept column by LU.
    fn oracle(x: &DMatrix<f64>, y: &DVector<f64>, alpha: f64, extra: &DVector<f64>) -> (f64, DVector<f64>) {
        let n = x.nrows();
        let p = x.ncols();
        let mut a = DMatrix::from_element(n, p + 1, 1.0);
        a.columns_mut(1, p).copy_from(x);
        let mut m = a.transpose() * &a;
        for k in 1..=p {
            m[(k, k)] += alpha;
        }
        let mut rhs = a.transpose() * y;
        rhs.rows_mut(1, p).add_assign(extra);
        let sol = m.lu().solve(&rhs).unwrap();
        (sol[0], sol.rows(1, p).into_owned())
    }

    #[test]
    fn closed_forms_match_oracle() {
        for seed in 0..20 {
            let (x, y, be) = instance(seed, 25, 4);
            let alpha = 0.3 + seed as f64;
            let lambda = 2.0 * seed as f64;
            let cases = [
                (fit_ols(&x, &y).unwrap(), 0.0, DVector::zeros(4)),
                (fit_ridge(&x, &y, alpha).unwrap(), alpha, DVector::zeros(4)),
                (fit_dtl(&x, &y, alpha, &be).unwrap(), alpha, &be * alpha),
                (fit_atl(&x, &y, alpha, lambda, &be).unwrap(), alpha, &be * lambda),
            ];
            for (fit, a, extra) in cases {
                let (b0, b) = oracle(&x, &y, a, &extra);
                assert!((fit.beta_vector() - b).amax() < 1e-10);
                assert!((fit.intercept - b0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn ols_noiseless_and_singular() {
        let (x, _, be) = instance(1, 12, 3);
        let y = (&x * &be).add_scalar(2.0);
        let fit = fit_ols(&x, &y).unwrap();
        assert!((fit.beta_vector() - &be).amax() < 1e-10);
        assert_relative_eq!(fit.intercept, 2.0, epsilon = 1e-10);
        let mut xs = x.clone();
        let c = xs.column(0) * 2.0;
        xs.column_mut(1).copy_from(&c);
        assert!(matches!(fit_ols(&xs, &y), Err(RasperError::SingularDesign)));
    }

    #[test]
    fn ridge_examples() {
        let x = DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]);
        let y = DVector::from_column_slice(&[0.0, 4.0]);
        // Xc'Xc = 2, Xc'Y = 4, beta = 4 / (2 + alpha)
        let fit = fit_ridge(&x, &y, 2.0).unwrap();
        assert_eq!(fit.beta, vec![1.0]);
        assert_eq!(fit.intercept, 2.0);
        let (x, y, _) = instance(2, 15, 3);
        assert_eq!(fit_ridge(&x, &y, 0.0).unwrap(), fit_ols(&x, &y).unwrap());
        assert!(fit_ridge(&x, &y, 1e12).unwrap().beta_vector().amax() < 1e-9);
    }

    #[test]
    fn transfer_reductions() {
        let (x, y, be) = instance(3, 20, 3);
        assert_eq!(fit_dtl(&x, &y, 0.0, &be).unwrap(), fit_ols(&x, &y).unwrap());
        assert_eq!(fit_dtl(&x, &y, 1.5, &DVector::zeros(3)).unwrap(), fit_ridge(&x, &y, 1.5).unwrap());
        assert!((fit_dtl(&x, &y, 1e8, &be).unwrap().beta_vector() - &be).amax() < 1e-5);
        assert_eq!(fit_atl(&x, &y, 1.5, 0.0, &be).unwrap(), fit_ridge(&x, &y, 1.5).unwrap());
        assert_eq!(fit_atl(&x, &y, 1.5, 1.5, &be).unwrap(), fit_dtl(&x, &y, 1.5, &be).unwrap());
        let a = fit_atl(&x, &y, 0.7, 4.0, &be).unwrap();
        let b = fit_atl(&x, &y, 0.7, 1.0, &(&be * 4.0)).unwrap();
        assert!((a.beta_vector() - b.beta_vector()).amax() < 1e-12);
    }

    #[test]
    fn stacking_cases() {
        // rank column orthogonal to both Y and X in sample
        let x = DMatrix::from_column_slice(4, 1, &[-1.0, -1.0, 1.0, 1.0]);
        let y = DVector::from_column_slice(&[0.0, 0.0, 2.0, 2.0]);
        let ranks = ExternalRanks {
            ranks: vec![1, 4, 2, 3],
            tied: false,
        };
        let fit = fit_stacking(&x, &y, &ranks).unwrap();
        assert!(fit.beta[1].abs() < 1e-12);
        assert_relative_eq!(fit.beta[0], 1.0, epsilon = 1e-12);

        // ranks only
        let x0 = DMatrix::<f64>::zeros(5, 0);
        let y = DVector::from_column_slice(&[1.0, 3.0, 2.0, 5.0, 4.0]);
        let r = external_ranks(&[1.0, 3.0, 2.0, 5.0, 4.0]).unwrap();
        let fit = fit_stacking(&x0, &y, &r).unwrap();
        assert_eq!(fit.beta.len(), 1);
        let pred = stacking_predict(&fit, &x0, &r).unwrap();
        assert!((pred - y).amax() < 1e-12);
    }

    #[test]
    fn projection_examples() {
        let (x, _, be) = instance(4, 30, 3);
        let z = crate::data::standardize_matrix(&x, 3, vec!["a".into(), "b".into(), "c".into()]).unwrap().x;
        let mu = &z * &be;
        let t = projection_target(&z, &mu, 5).unwrap();
        assert!((t.rows(0, 3) - &be).amax() < 1e-10);
        assert_eq!(t[3], 0.0);
        assert_eq!(t[4], 0.0);

        // a column orthogonal to every conventional column
        let z = DMatrix::from_column_slice(4, 1, &[-1.0, -1.0, 1.0, 1.0]);
        let mu = DVector::from_column_slice(&[1.0, -1.0, 1.0, -1.0]);
        assert_eq!(projection_target(&z, &mu, 1).unwrap()[0], 0.0);
    }

    #[test]
    fn loocv_linear_matches_hat_matrix() {
        let (x, y, _) = instance(5, 18, 2);
        let n = 18;
        let mut a = DMatrix::from_element(n, 3, 1.0);
        a.columns_mut(1, 2).copy_from(&x);
        let h = &a * (a.transpose() * &a).try_inverse().unwrap() * a.transpose();
        let e = &y - &h * &y;
        let hat: f64 = (0..n).map(|i| 0.5 * (e[i] / (1.0 - h[(i, i)])).powi(2)).sum::<f64>() / n as f64;
        assert_relative_eq!(loocv_linear(&x, &y, fit_ols).unwrap(), hat, max_relative = 1e-10);
        let grid = crate::selection::build_grid(0.1, 10.0, 2, 0.01, 10.0, 2).unwrap();
        let t = tune_ridge(&x, &y, &grid).unwrap();
        assert!(grid.alphas.contains(&t.alpha));
    }
}
