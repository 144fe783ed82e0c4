//! Penalized least squares with a log-concordance penalty, fitted by
//! majorize-minimize.
//!
//! The objective is
//! `1/2 |Y - b0 - X beta|^2 + alpha/2 |beta|^2 - lambda log D(beta)`.
//! Each MM iteration majorizes `-log D` in two stages: Jensen's inequality
//! with quasi-probabilities `q_k = w_k g(u_k) / D` moves the log inside the
//! pair sum, then the Jaakkola-Jordan bound replaces every `-log g(u_k)` with
//! a quadratic in `u_k` whose curvature is `jj_coefficient(u_k)`. The
//! surrogate is a ridge-type quadratic and its minimizer solves one SPD
//! system.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::concordance::{logistic_pair, Concordance};
use crate::error::{RasperError, Result};
use crate::linalg::{add_ridge, center_columns, solve_spd};

/// A fully specified fitting problem on one dataset.
#[derive(Debug, Clone)]
pub struct PenalizedProblem {
    x: DMatrix<f64>,
    y: DVector<f64>,
    pub concordance: Concordance,
    pub lambda: f64,
    pub alpha: f64,
    x_means: DVector<f64>,
    xc: DMatrix<f64>,
    y_mean: f64,
    gram: DMatrix<f64>,
    xty: DVector<f64>,
}

impl PenalizedProblem {
    pub fn new(
        x: DMatrix<f64>,
        y: DVector<f64>,
        concordance: Concordance,
        lambda: f64,
        alpha: f64,
    ) -> Result<Self> {
        if x.nrows() != y.len() || concordance.n() != y.len() || concordance.p() != x.ncols() {
            return Err(RasperError::DimensionMismatch(format!(
                "design {}x{}, outcome {}, concordance {}x{}",
                x.nrows(),
                x.ncols(),
                y.len(),
                concordance.n(),
                concordance.p()
            )));
        }
        if !(lambda >= 0.0 && lambda.is_finite() && alpha >= 0.0 && alpha.is_finite()) {
            return Err(RasperError::InvalidArgument(format!(
                "penalties must be finite and nonnegative (lambda = {lambda}, alpha = {alpha})"
            )));
        }
        if !concordance.weights.all_nonnegative() {
            return Err(RasperError::InvalidArgument(
                "pair weights must be nonnegative".into(),
            ));
        }
        let (xc, x_means) = center_columns(&x);
        let y_mean = y.mean();
        let gram = xc.transpose() * &xc;
        let xty = xc.transpose() * &y;
        Ok(Self {
            x,
            y,
            concordance,
            lambda,
            alpha,
            x_means,
            xc,
            y_mean,
            gram,
            xty,
        })
    }

    /// Same data and concordance with different penalties.
    pub fn with_penalties(&self, lambda: f64, alpha: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite() && alpha >= 0.0 && alpha.is_finite()) {
            return Err(RasperError::InvalidArgument(format!(
                "penalties must be finite and nonnegative (lambda = {lambda}, alpha = {alpha})"
            )));
        }
        Ok(Self {
            lambda,
            alpha,
            ..self.clone()
        })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn nu(&self) -> f64 {
        self.concordance.nu
    }

    /// Centered Gram matrix `Xc' Xc`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Least-squares intercept for a given slope vector.
    pub fn optimal_intercept(&self, beta: &DVector<f64>) -> f64 {
        self.y_mean - self.x_means.dot(beta)
    }

    /// `1/2 |Y - b0 - X beta|^2 + alpha/2 |beta|^2`.
    pub fn local_objective(&self, intercept: f64, beta: &DVector<f64>) -> f64 {
        let resid = &self.y - &self.x * beta;
        let rss: f64 = resid.iter().map(|r| (r - intercept).powi(2)).sum();
        0.5 * rss + 0.5 * self.alpha * beta.norm_squared()
    }

    /// Minimizer of the local objective, `(Xc'Xc + alpha I)^-1 Xc'Y`.
    pub fn local_minimizer(&self) -> Result<DVector<f64>> {
        solve_spd(&add_ridge(&self.gram, self.alpha), &self.xty).ok_or(RasperError::SingularDesign)
    }

    fn objective_from_d(&self, intercept: f64, beta: &DVector<f64>, d: f64) -> Result<f64> {
        let local = self.local_objective(intercept, beta);
        if self.lambda == 0.0 {
            return Ok(local);
        }
        if !(d > 0.0) {
            return Err(RasperError::NonpositiveConcordance(d));
        }
        Ok(local - self.lambda * d.ln())
    }
}

pub fn penalized_objective(
    problem: &PenalizedProblem,
    intercept: f64,
    beta: &DVector<f64>,
) -> Result<f64> {
    let d = if problem.lambda == 0.0 {
        1.0
    } else {
        problem.concordance.value(beta)
    };
    problem.objective_from_d(intercept, beta, d)
}

/// Gradient of the penalized objective with respect to `(b0, beta)`.
pub fn objective_gradient(
    problem: &PenalizedProblem,
    intercept: f64,
    beta: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    let resid = problem.y.map(|v| v - intercept) - &problem.x * beta;
    let d_intercept = -resid.sum();
    let mut grad = -(problem.x.transpose() * resid) + beta * problem.alpha;
    if problem.lambda > 0.0 {
        let d = problem.concordance.value(beta);
        if !(d > 0.0) {
            return Err(RasperError::NonpositiveConcordance(d));
        }
        grad -= problem.concordance.gradient(beta) * (problem.lambda / d);
    }
    Ok((d_intercept, grad))
}

/// Jaakkola-Jordan curvature `tanh(u/2) / (4u)`, in `(0, 1/8]`.
pub fn jj_coefficient(u: f64) -> f64 {
    if u.abs() > 1e-4 {
        (0.5 * u).tanh() / (4.0 * u)
    } else {
        0.125 - u * u / 96.0
    }
}

/// Same coefficient from `g(u)` and `1 - g(u)`: `(g - gc) / (4u)`.
#[inline]
fn jj_from_logistic(u: f64, g: f64, gc: f64) -> f64 {
    if u.abs() > 1e-4 {
        (g - gc) / (4.0 * u)
    } else {
        0.125 - u * u / 96.0
    }
}

/// Quadratic majorizer of `-log D` around an expansion point `beta_t`:
/// `-log D(beta) <= -log D_t - 1/2 (beta - beta_t)' linear
///                  + beta' curvature beta - beta_t' curvature beta_t`,
/// where `linear = sum_k q_k a_k` and `curvature = sum_k q_k c_k a_k a_k'`.
#[derive(Debug, Clone)]
pub struct Majorizer {
    pub expansion: DVector<f64>,
    pub concordance: f64,
    pub linear: DVector<f64>,
    pub curvature: DMatrix<f64>,
}

impl Majorizer {
    pub fn penalty_bound(&self, beta: &DVector<f64>) -> f64 {
        let step = beta - &self.expansion;
        -self.concordance.ln() - 0.5 * step.dot(&self.linear)
            + beta.dot(&(&self.curvature * beta))
            - self.expansion.dot(&(&self.curvature * &self.expansion))
    }
}

/// Builds the majorizer of `-log D` at `beta`.
pub fn majorize(concordance: &Concordance, beta: &DVector<f64>) -> Result<Majorizer> {
    let n = concordance.n();
    let p = concordance.p();
    let nu = concordance.nu;
    let w = &concordance.weights;
    let mut d_total = 0.0;
    let mut linear = DVector::zeros(p);
    let mut curvature = DMatrix::zeros(p, p);
    let mut pair_curv = DMatrix::<f64>::zeros(n, n);
    let mut degree = DVector::<f64>::zeros(n);
    let mut h = DVector::<f64>::zeros(n);

    for t in concordance.tables.tables() {
        let eta = t * beta;
        pair_curv.fill(0.0);
        degree.fill(0.0);
        h.fill(0.0);
        let mut d = 0.0;
        for i in 0..n {
            d += 0.5 * w.get(i, i);
            for j in (i + 1)..n {
                let u = (eta[i] - eta[j]) / nu;
                let (g, gc) = logistic_pair(u);
                let v_ij = w.get(i, j) * g;
                let v_ji = w.get(j, i) * gc;
                d += v_ij + v_ji;
                let m = (v_ij + v_ji) * jj_from_logistic(u, g, gc);
                pair_curv[(i, j)] = m;
                pair_curv[(j, i)] = m;
                degree[i] += m;
                degree[j] += m;
                let diff = v_ij - v_ji;
                h[i] += diff;
                h[j] -= diff;
            }
        }
        d_total += d;
        // sum_{i<j} m_ij (t_i - t_j)(t_i - t_j)' = T' (diag(degree) - M) T
        let mt = &pair_curv * t;
        let mut scaled = t.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= degree[i];
        }
        curvature += t.transpose() * (scaled - mt);
        linear += t.transpose() * &h;
    }

    let scale = concordance.tables.scale();
    let d = d_total * scale;
    if !(d > 0.0) {
        return Err(RasperError::NonpositiveConcordance(d));
    }
    let norm = scale / d;
    Ok(Majorizer {
        expansion: beta.clone(),
        concordance: d,
        linear: linear * (norm / nu),
        curvature: curvature * (norm / (nu * nu)),
    })
}

/// The quadratic surrogate of the full objective at `beta_t`.
pub fn surrogate(
    problem: &PenalizedProblem,
    majorizer: &Majorizer,
    intercept: f64,
    beta: &DVector<f64>,
) -> f64 {
    let local = problem.local_objective(intercept, beta);
    if problem.lambda == 0.0 {
        local
    } else {
        local + problem.lambda * majorizer.penalty_bound(beta)
    }
}

fn minimize_surrogate(
    problem: &PenalizedProblem,
    majorizer: Option<&Majorizer>,
    intercept: f64,
) -> Result<DVector<f64>> {
    let mut system = add_ridge(&problem.gram, problem.alpha);
    let mut rhs = problem.xc.transpose() * problem.y.map(|v| v - intercept);
    if let Some(m) = majorizer {
        system += &m.curvature * (2.0 * problem.lambda);
        rhs += &m.linear * (0.5 * problem.lambda);
    }
    solve_spd(&system, &rhs).ok_or(RasperError::NonSpdSystem)
}

/// One MM update. Returns the new `(intercept, beta)`.
pub fn mm_step(
    problem: &PenalizedProblem,
    intercept: f64,
    beta: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    let maj = if problem.lambda > 0.0 {
        Some(majorize(&problem.concordance, beta)?)
    } else {
        None
    };
    let next = minimize_surrogate(problem, maj.as_ref(), intercept)?;
    Ok((problem.optimal_intercept(&next), next))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub tol: f64,
    /// Cap on MM map evaluations.
    pub max_iter: usize,
    /// Squared-extrapolation acceleration of the MM map (SQUAREM, S3 step
    /// length) with a monotone safeguard.
    #[serde(default = "yes")]
    pub accelerate: bool,
}

fn yes() -> bool {
    true
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 500,
            accelerate: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmStart {
    LocalMinimizer,
    /// Started from the local minimizer and tracked the optimum down from a
    /// smoother `nu`.
    Continuation,
    Provided,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub intercept: f64,
    /// Coefficients on the standardized scale.
    pub beta: Vec<f64>,
    pub lambda: f64,
    pub alpha: f64,
    pub nu: f64,
    pub objective_trace: Vec<f64>,
    pub concordance: f64,
    pub converged: bool,
    pub iterations: usize,
    pub warm_start: WarmStart,
}

impl FitResult {
    pub fn beta_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.beta)
    }

    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace is never empty")
    }
}

struct Iterate {
    beta: DVector<f64>,
    intercept: f64,
    maj: Option<Majorizer>,
    obj: f64,
}

/// Steps of the `nu` continuation, as multiples of the target `nu`.
const CONTINUATION: [f64; 5] = [32.0, 16.0, 8.0, 4.0, 2.0];

/// Minimizes the penalized objective by MM.
///
/// Without `init`, MM starts from the local minimizer. When penalized, a
/// second run follows the optimum from `32 nu` down to `nu`, each stage warm
/// started from the last, and the lower of the two endpoints is returned.
/// The trace and `iterations` cover the returned run's final stage.
pub fn fit_rasper(
    problem: &PenalizedProblem,
    init: Option<&DVector<f64>>,
    opts: FitOptions,
) -> Result<FitResult> {
    match init {
        Some(b) if b.len() == problem.p() => run_mm(problem, b.clone(), WarmStart::Provided, opts),
        Some(b) => Err(RasperError::DimensionMismatch(format!(
            "initial value has length {}, expected {}",
            b.len(),
            problem.p()
        ))),
        None => {
            let start = problem.local_minimizer()?;
            let direct = run_mm(problem, start.clone(), WarmStart::LocalMinimizer, opts)?;
            if problem.lambda == 0.0 {
                return Ok(direct);
            }
            match continuation(problem, start, opts) {
                Ok(path) if path.objective() < direct.objective() - 1e-12 * (1.0 + direct.objective().abs()) => Ok(path),
                Ok(_) => Ok(direct),
                Err(e) => {
                    log::debug!("nu continuation failed: {e}");
                    Ok(direct)
                }
            }
        }
    }
}

fn continuation(problem: &PenalizedProblem, start: DVector<f64>, opts: FitOptions) -> Result<FitResult> {
    let mut beta = start;
    for factor in CONTINUATION {
        let mut smooth = problem.clone();
        smooth.concordance.nu = problem.nu() * factor;
        beta = run_mm(&smooth, beta, WarmStart::Continuation, opts)?.beta_vector();
    }
    run_mm(problem, beta, WarmStart::Continuation, opts)
}

fn run_mm(
    problem: &PenalizedProblem,
    beta: DVector<f64>,
    warm_start: WarmStart,
    opts: FitOptions,
) -> Result<FitResult> {
    let penalized = problem.lambda > 0.0;
    let eval = |beta: DVector<f64>| -> Result<Iterate> {
        let intercept = problem.optimal_intercept(&beta);
        let maj = if penalized {
            Some(majorize(&problem.concordance, &beta)?)
        } else {
            None
        };
        let obj = problem.objective_from_d(intercept, &beta, maj.as_ref().map_or(1.0, |m| m.concordance))?;
        Ok(Iterate { beta, intercept, maj, obj })
    };
    let map = |it: &Iterate| eval(minimize_surrogate(problem, it.maj.as_ref(), it.intercept)?);

    let mut cur = eval(beta)?;
    let mut trace = vec![cur.obj];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        let p1 = map(&cur)?;
        iterations += 1;
        if p1.obj > cur.obj + 1e-10 * (1.0 + cur.obj.abs()) {
            // numerical noise at the optimum; keep the better iterate
            log::debug!("MM step increased objective from {} to {}", cur.obj, p1.obj);
            converged = true;
            break;
        }
        let mut next = p1;
        if opts.accelerate && penalized && iterations < opts.max_iter {
            let p2 = map(&next)?;
            iterations += 1;
            if p2.obj <= next.obj {
                let r = &next.beta - &cur.beta;
                let v = &p2.beta - &next.beta - &r;
                let mut step = if v.norm() > 0.0 { -r.norm() / v.norm() } else { -1.0 };
                let mut best = p2;
                while step < -1.0 && iterations < opts.max_iter {
                    let jump = &cur.beta - &r * (2.0 * step) + &v * (step * step);
                    iterations += 1;
                    match eval(jump).and_then(|j| map(&j)) {
                        Ok(cand) if cand.obj <= best.obj => {
                            best = cand;
                            break;
                        }
                        _ => step = (step - 1.0) / 2.0,
                    }
                    if step > -1.0 - 1e-3 {
                        break;
                    }
                }
                next = best;
            }
        }
        let change = (cur.obj - next.obj).abs();
        cur = next;
        trace.push(cur.obj);
        if change <= opts.tol * cur.obj.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "MM did not converge in {} iterations (lambda = {}, alpha = {})",
            opts.max_iter,
            problem.lambda,
            problem.alpha
        );
    }
    let Iterate { beta, intercept, maj, .. } = cur;
    let concordance = match &maj {
        Some(m) => m.concordance,
        None => problem.concordance.value(&beta),
    };
    Ok(FitResult {
        intercept,
        beta: beta.iter().copied().collect(),
        lambda: problem.lambda,
        alpha: problem.alpha,
        nu: problem.nu(),
        objective_trace: trace,
        concordance,
        converged,
        iterations,
        warm_start,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuSource {
    LeastSquares,
    RidgeFallback,
    Floor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuChoice {
    pub nu: f64,
    pub source: NuSource,
}

pub const NU_FLOOR: f64 = 1e-3;

/// `nu = 0.1 |beta_ols|`, with a ridge fallback for singular designs and a
/// floor when the least-squares slope is numerically zero.
pub fn default_nu(x: &DMatrix<f64>, y: &DVector<f64>) -> NuChoice {
    let (xc, _) = center_columns(x);
    let gram = xc.transpose() * &xc;
    let xty = xc.transpose() * y;
    let (beta, source) = match solve_spd(&gram, &xty) {
        Some(b) => (b, NuSource::LeastSquares),
        None => {
            let alpha = 1e-4 * x.nrows() as f64;
            log::warn!("singular design; choosing nu from a ridge fit with alpha = {alpha}");
            let b = solve_spd(&add_ridge(&gram, alpha), &xty)
                .unwrap_or_else(|| DVector::zeros(x.ncols()));
            (b, NuSource::RidgeFallback)
        }
    };
    let nu = 0.1 * beta.norm();
    if nu < NU_FLOOR || !nu.is_finite() {
        log::warn!("least-squares slope is numerically zero; using nu = {NU_FLOOR}");
        return NuChoice {
            nu: NU_FLOOR,
            source: NuSource::Floor,
        };
    }
    NuChoice { nu, source }
}
