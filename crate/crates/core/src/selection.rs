//! Hyperparameter grids, leave-one-out cross-validation, effective degrees of
//! freedom and AIC.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concordance::{pair_weights, Concordance, Measure, PairTables};
use crate::data::{external_ranks, ExternalRanks};
use crate::error::{RasperError, Result};
use crate::linalg::add_ridge;
use crate::solver::{fit_rasper, majorize, FitOptions, FitResult, PenalizedProblem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridBounds {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
}

impl GridBounds {
    /// `lambda` in `[1e-2 n, 1e3 n]`, `alpha` in `[1e-4 n, 1e2 n]`.
    pub fn default_for(n: usize) -> Self {
        let n = n as f64;
        Self {
            lambda_min: 1e-2 * n,
            lambda_max: 1e3 * n,
            alpha_min: 1e-4 * n,
            alpha_max: 1e2 * n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    /// `J + 2` values starting at 0 (or a single fixed value).
    pub lambdas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub bounds: Option<GridBounds>,
}

/// `[0, m, m r, m r^2, ..., M]` with `r = (M/m)^(1/steps)`.
pub fn log_grid(min: f64, max: f64, steps: usize) -> Result<Vec<f64>> {
    if !(min > 0.0 && max > min && max.is_finite()) {
        return Err(RasperError::InvalidBounds(format!(
            "need 0 < min < max, got [{min}, {max}]"
        )));
    }
    if steps == 0 {
        return Err(RasperError::InvalidBounds("grid needs at least one step".into()));
    }
    let ratio = (max / min).ln() / steps as f64;
    let mut out = vec![0.0];
    out.extend((1..=steps + 1).map(|j| min * ((j - 1) as f64 * ratio).exp()));
    // the formula's endpoint is max up to rounding
    out[steps + 1] = max;
    Ok(out)
}

pub fn build_grid(
    lambda_min: f64,
    lambda_max: f64,
    j: usize,
    alpha_min: f64,
    alpha_max: f64,
    k: usize,
) -> Result<HyperGrid> {
    Ok(HyperGrid {
        lambdas: log_grid(lambda_min, lambda_max, j)?,
        alphas: log_grid(alpha_min, alpha_max, k)?,
        bounds: Some(GridBounds {
            lambda_min,
            lambda_max,
            alpha_min,
            alpha_max,
        }),
    })
}

impl HyperGrid {
    pub fn single(lambda: f64, alpha: f64) -> Self {
        Self {
            lambdas: vec![lambda],
            alphas: vec![alpha],
            bounds: None,
        }
    }

    pub fn from_bounds(bounds: GridBounds, j: usize, k: usize) -> Result<Self> {
        build_grid(
            bounds.lambda_min,
            bounds.lambda_max,
            j,
            bounds.alpha_min,
            bounds.alpha_max,
            k,
        )
    }

    pub fn len(&self) -> usize {
        self.lambdas.len() * self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        let ok = |v: &[f64]| !v.is_empty() && v.iter().all(|x| x.is_finite() && *x >= 0.0);
        if !ok(&self.lambdas) || !ok(&self.alphas) {
            return Err(RasperError::InvalidBounds(
                "grid values must be finite, nonnegative and nonempty".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Loocv,
    Aic,
}

impl std::str::FromStr for Criterion {
    type Err = RasperError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "loocv" => Ok(Criterion::Loocv),
            "aic" => Ok(Criterion::Aic),
            other => Err(RasperError::InvalidArgument(format!("unknown criterion `{other}`"))),
        }
    }
}

/// Standardized design, outcomes and external scores with a fixed smoothing
/// scale. Scores are kept so that ranks can be recomputed on any subset of
/// rows; when only ranks are known they serve as scores, since re-ranking a
/// subset of ranks gives the same answer as re-ranking the scores.
#[derive(Debug, Clone)]
pub struct RankedData {
    x: DMatrix<f64>,
    y: DVector<f64>,
    scores: Vec<f64>,
    pub measure: Measure,
    pub nu: f64,
    tables: PairTables,
}

impl RankedData {
    pub fn new(
        x: DMatrix<f64>,
        y: DVector<f64>,
        scores: Vec<f64>,
        measure: Measure,
        nu: f64,
    ) -> Result<Self> {
        if x.nrows() != y.len() || scores.len() != y.len() {
            return Err(RasperError::DimensionMismatch(format!(
                "design {} rows, outcome {}, scores {}",
                x.nrows(),
                y.len(),
                scores.len()
            )));
        }
        external_ranks(&scores)?;
        let tables = PairTables::observed(x.clone());
        Ok(Self {
            x,
            y,
            scores,
            measure,
            nu,
            tables,
        })
    }

    pub fn from_ranks(
        x: DMatrix<f64>,
        y: DVector<f64>,
        ranks: &ExternalRanks,
        measure: Measure,
        nu: f64,
    ) -> Result<Self> {
        Self::new(x, y, ranks.ranks.iter().map(|&r| r as f64).collect(), measure, nu)
    }

    /// Replaces the observed design with sampled tables for marginalized
    /// ranking parameters.
    pub fn with_tables(mut self, tables: PairTables) -> Result<Self> {
        if tables.n() != self.n() || tables.p() != self.p() {
            return Err(RasperError::DimensionMismatch(format!(
                "tables are {}x{}, design {}x{}",
                tables.n(),
                tables.p(),
                self.n(),
                self.p()
            )));
        }
        self.tables = tables;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn ranks(&self) -> ExternalRanks {
        external_ranks(&self.scores).expect("scores validated at construction")
    }

    pub fn concordance(&self) -> Result<Concordance> {
        Concordance::new(pair_weights(&self.ranks(), self.measure), self.tables.clone(), self.nu)
    }

    pub fn problem(&self, lambda: f64, alpha: f64) -> Result<PenalizedProblem> {
        PenalizedProblem::new(self.x.clone(), self.y.clone(), self.concordance()?, lambda, alpha)
    }

    /// The same data with row `i` removed and ranks recomputed.
    pub fn without_row(&self, i: usize) -> Result<Self> {
        let keep: Vec<usize> = (0..self.n()).filter(|&k| k != i).collect();
        Ok(Self {
            x: self.x.select_rows(&keep),
            y: DVector::from_iterator(keep.len(), keep.iter().map(|&k| self.y[k])),
            scores: keep.iter().map(|&k| self.scores[k]).collect(),
            measure: self.measure,
            nu: self.nu,
            tables: self.tables.select_rows(&keep),
        })
    }
}

/// Leave-one-out problems at `lambda = alpha = 0`, built once and re-used
/// across the grid.
pub struct LooFolds {
    folds: Vec<(PenalizedProblem, DVector<f64>, f64)>,
}

impl LooFolds {
    pub fn new(data: &RankedData) -> Result<Self> {
        if data.n() < 3 {
            return Err(RasperError::EmptyData(data.n()));
        }
        let folds = (0..data.n())
            .into_par_iter()
            .map(|i| {
                let fold = data.without_row(i)?;
                let problem = fold.problem(0.0, 0.0)?;
                Ok((problem, data.x.row(i).transpose(), data.y[i]))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { folds })
    }

    /// `(1/n) sum_i 1/2 (y_i - b0^(-i) - x_i' beta^(-i))^2`. Fold fits start
    /// from `init` when given.
    pub fn score(
        &self,
        lambda: f64,
        alpha: f64,
        init: Option<&DVector<f64>>,
        opts: FitOptions,
    ) -> Result<f64> {
        let results: Vec<Result<f64>> = self
            .folds
            .par_iter()
            .map(|(base, xi, yi)| {
                let problem = base.with_penalties(lambda, alpha)?;
                let fit = fit_rasper(&problem, init, opts)?;
                let r = yi - fit.intercept - xi.dot(&fit.beta_vector());
                Ok(0.5 * r * r)
            })
            .collect();
        let total = results.len();
        let mut sum = 0.0;
        let mut failed = 0;
        let mut first = None;
        for r in results {
            match r {
                Ok(v) => sum += v,
                Err(e) => {
                    failed += 1;
                    first.get_or_insert_with(|| e.to_string());
                }
            }
        }
        if failed > 0 {
            return Err(RasperError::FoldFailure {
                failed,
                total,
                first: first.unwrap_or_default(),
            });
        }
        Ok(sum / total as f64)
    }
}

pub fn loocv_score(data: &RankedData, lambda: f64, alpha: f64, opts: FitOptions) -> Result<f64> {
    LooFolds::new(data)?.score(lambda, alpha, None, opts)
}

/// `tr{(Xc'Xc + alpha I + 2 lambda Q0)^-1 Xc'Xc}` with `Q0` the MM curvature at
/// `beta = 0`, i.e. `(lambda / 4) sum_k q_k(0) a_k a_k'`.
pub fn degrees_of_freedom(problem: &PenalizedProblem) -> Result<f64> {
    let gram = problem.gram();
    let p = problem.p();
    if problem.lambda == 0.0 {
        // sum_j e_j / (e_j + alpha); exactly p at alpha = 0
        let eig = gram.clone().symmetric_eigen();
        let top = eig.eigenvalues.amax();
        let mut df = 0.0;
        for &e in eig.eigenvalues.iter() {
            if e <= 1e-12 * top {
                if problem.alpha == 0.0 {
                    return Err(RasperError::SingularSystem);
                }
                continue;
            }
            df += e / (e + problem.alpha);
        }
        return Ok(df);
    }
    let q0 = majorize(&problem.concordance, &DVector::zeros(p))?;
    let system = add_ridge(gram, problem.alpha) + q0.curvature * (2.0 * problem.lambda);
    let chol = system.cholesky().ok_or(RasperError::SingularSystem)?;
    let solved = chol.solve(gram);
    let df = solved.trace();
    if !df.is_finite() {
        return Err(RasperError::SingularSystem);
    }
    Ok(df)
}

/// `2 L_I(b0, beta; alpha) + 2 df`.
pub fn aic(problem: &PenalizedProblem, fit: &FitResult, df: f64) -> f64 {
    2.0 * problem.local_objective(fit.intercept, &fit.beta_vector()) + 2.0 * df
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridRecord {
    pub lambda: f64,
    pub alpha: f64,
    pub loocv: Option<f64>,
    pub df: f64,
    /// False when the trace system was singular; `df` is then reported as p
    /// and the point is excluded from AIC selection.
    pub df_stable: bool,
    pub aic: f64,
    pub objective: f64,
    pub concordance: f64,
    pub converged: bool,
    pub iterations: usize,
    pub intercept: f64,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionReport {
    pub criterion: Criterion,
    pub records: Vec<GridRecord>,
    pub chosen: usize,
    pub chosen_fit: FitResult,
}

impl SelectionReport {
    pub fn chosen_record(&self) -> &GridRecord {
        &self.records[self.chosen]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let p = self.records.first().map_or(0, |r| r.beta.len());
        let mut header: Vec<String> = [
            "lambda", "alpha", "loocv", "df", "df_stable", "aic", "objective", "concordance",
            "converged", "iterations", "chosen", "intercept",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend((1..=p).map(|j| format!("beta{j}")));
        w.write_record(&header).map_err(csv_err)?;
        for (k, r) in self.records.iter().enumerate() {
            let mut row = vec![
                fmt_f64(r.lambda),
                fmt_f64(r.alpha),
                r.loocv.map(fmt_f64).unwrap_or_default(),
                fmt_f64(r.df),
                r.df_stable.to_string(),
                fmt_f64(r.aic),
                fmt_f64(r.objective),
                fmt_f64(r.concordance),
                r.converged.to_string(),
                r.iterations.to_string(),
                (k == self.chosen).to_string(),
                fmt_f64(r.intercept),
            ];
            row.extend(r.beta.iter().map(|&b| fmt_f64(b)));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| RasperError::Parse(e.to_string()))?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> RasperError {
    RasperError::Parse(e.to_string())
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Index minimizing `value`, ties broken by smaller lambda then smaller alpha.
fn argmin(records: &[GridRecord], value: impl Fn(&GridRecord) -> Option<f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, r) in records.iter().enumerate() {
        let Some(v) = value(r) else { continue };
        if !v.is_finite() {
            continue;
        }
        best = match best {
            None => Some((k, v)),
            Some((b, bv)) => {
                let rb = &records[b];
                let better = v < bv
                    || (v == bv && (r.lambda < rb.lambda || (r.lambda == rb.lambda && r.alpha < rb.alpha)));
                if better {
                    Some((k, v))
                } else {
                    Some((b, bv))
                }
            }
        };
    }
    best.map(|(k, _)| k)
}

/// Evaluates the criterion over the grid. Within each alpha, fits are
/// warm-started along increasing lambda and leave-one-out folds start from
/// the full-data fit at the same point.
pub fn select(
    data: &RankedData,
    grid: &HyperGrid,
    criterion: Criterion,
    opts: FitOptions,
) -> Result<SelectionReport> {
    grid.validate()?;
    let folds = match criterion {
        Criterion::Loocv => Some(LooFolds::new(data)?),
        Criterion::Aic => None,
    };
    let base = data.problem(0.0, 0.0)?;
    let mut lambdas = grid.lambdas.clone();
    lambdas.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));

    let mut records = Vec::with_capacity(grid.len());
    let mut fits = Vec::with_capacity(grid.len());
    for &alpha in &grid.alphas {
        let mut warm: Option<DVector<f64>> = None;
        for &lambda in &lambdas {
            let problem = base.with_penalties(lambda, alpha)?;
            let fit = fit_rasper(&problem, warm.as_ref(), opts)?;
            let beta = fit.beta_vector();
            let (df, df_stable) = match degrees_of_freedom(&problem) {
                Ok(df) => (df, true),
                Err(RasperError::SingularSystem) => {
                    log::warn!("df system singular at lambda = {lambda}, alpha = {alpha}");
                    (problem.p() as f64, false)
                }
                Err(e) => return Err(e),
            };
            let loocv = match &folds {
                Some(f) => Some(f.score(lambda, alpha, Some(&beta), opts)?),
                None => None,
            };
            records.push(GridRecord {
                lambda,
                alpha,
                loocv,
                df,
                df_stable,
                aic: aic(&problem, &fit, df),
                objective: fit.objective(),
                concordance: fit.concordance,
                converged: fit.converged,
                iterations: fit.iterations,
                intercept: fit.intercept,
                beta: fit.beta.clone(),
            });
            warm = Some(beta);
            fits.push(fit);
        }
    }
    let chosen = match criterion {
        Criterion::Loocv => argmin(&records, |r| r.loocv),
        Criterion::Aic => argmin(&records, |r| r.df_stable.then_some(r.aic)),
    }
    .ok_or_else(|| RasperError::InvalidArgument("no grid point has a finite criterion".into()))?;
    Ok(SelectionReport {
        criterion,
        chosen_fit: fits.swap_remove(chosen),
        records,
        chosen,
    })
}
