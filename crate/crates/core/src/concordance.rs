//! Ranking parameters and smoothed rank-concordance measures.
//!
//! Every concordance measure has the form
//! `D(beta) = scale * sum_t sum_ij w_ij g((x_i^t - x_j^t)' beta / nu)`
//! where `g` is the standard logistic function, `t` runs over one or more
//! covariate tables (the observed design, or sampled tables when the ranking
//! parameters are marginalized over the novel covariates) and `scale = 1/S`.
//! The `n^2 x p` pair-difference operator is never formed; every sum streams
//! over pairs.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::ExternalRanks;
use crate::error::{RasperError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Spearman,
    Kendall,
}

impl std::fmt::Display for Measure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Measure::Spearman => f.write_str("spearman"),
            Measure::Kendall => f.write_str("kendall"),
        }
    }
}

impl std::str::FromStr for Measure {
    type Err = RasperError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "spearman" => Ok(Measure::Spearman),
            "kendall" => Ok(Measure::Kendall),
            other => Err(RasperError::InvalidArgument(format!("unknown measure `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcordanceSpec {
    pub measure: Measure,
    pub marginalized: bool,
    /// Smoothing scale, in units of the linear predictor.
    pub nu: f64,
    /// Number of sampled covariate tables when marginalized.
    pub samples: usize,
    pub seed: u64,
}

impl ConcordanceSpec {
    pub fn new(measure: Measure, nu: f64) -> Self {
        Self {
            measure,
            marginalized: false,
            nu,
            samples: 1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(RasperError::InvalidArgument(format!(
                "smoothing scale must be positive, got {}",
                self.nu
            )));
        }
        if self.samples == 0 {
            return Err(RasperError::InvalidArgument(
                "marginalization sample count must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Logistic CDF `1 / (1 + exp(-u))`, returned together with its complement
/// `1 - g(u) = g(-u)` without cancellation.
#[inline]
pub fn logistic_pair(u: f64) -> (f64, f64) {
    let e = (-u.abs()).exp();
    let hi = 1.0 / (1.0 + e);
    let lo = e / (1.0 + e);
    if u >= 0.0 {
        (hi, lo)
    } else {
        (lo, hi)
    }
}

#[inline]
pub fn logistic(u: f64) -> f64 {
    logistic_pair(u).0
}

/// Smoothing kernel with scale `nu`.
#[inline]
pub fn smooth_step(x: f64, nu: f64) -> f64 {
    logistic(x / nu)
}

/// Dense `n x n` pair weights, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PairWeights {
    n: usize,
    w: Vec<f64>,
}

impl PairWeights {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut w = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                w.push(f(i, j));
            }
        }
        Self { n, w }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n + j]
    }

    pub fn total(&self) -> f64 {
        self.w.iter().sum()
    }

    pub fn is_degenerate(&self) -> bool {
        self.w.iter().all(|&v| v == 0.0)
    }

    pub fn all_nonnegative(&self) -> bool {
        self.w.iter().all(|&v| v >= 0.0 && v.is_finite())
    }
}

/// Spearman: `w_ij = r_i / (4 n^2)`. Kendall: `w_ij = 2 I(r_i > r_j) / (n (n - 1))`.
pub fn pair_weights(ranks: &ExternalRanks, measure: Measure) -> PairWeights {
    let n = ranks.len();
    let r = &ranks.ranks;
    match measure {
        Measure::Spearman => {
            let denom = 4.0 * (n * n) as f64;
            PairWeights::from_fn(n, |i, _| r[i] as f64 / denom)
        }
        Measure::Kendall => {
            let denom = if n > 1 { (n * (n - 1)) as f64 } else { 1.0 };
            PairWeights::from_fn(n, |i, j| if r[i] > r[j] { 2.0 / denom } else { 0.0 })
        }
    }
}

/// The signed Kendall weights `(2 I(r_i > r_j) - 1) / (n (n - 1))`. These can
/// be negative and are not valid for the MM solver; diagnostics only. The
/// resulting measure differs from the nonnegative form by a constant, since
/// `g(u) + g(-u) = 1`.
pub fn kendall_signed_weights(ranks: &ExternalRanks) -> PairWeights {
    let n = ranks.len();
    let r = &ranks.ranks;
    let denom = if n > 1 { (n * (n - 1)) as f64 } else { 1.0 };
    PairWeights::from_fn(n, |i, j| {
        let ind = if r[i] > r[j] { 2.0 } else { 0.0 };
        (ind - 1.0) / denom
    })
}

/// Covariate tables over which pairs are formed.
#[derive(Debug, Clone)]
pub struct PairTables {
    tables: Vec<DMatrix<f64>>,
}

impl PairTables {
    pub fn observed(x: DMatrix<f64>) -> Self {
        Self { tables: vec![x] }
    }

    pub fn sampled(tables: Vec<DMatrix<f64>>) -> Result<Self> {
        let Some(first) = tables.first() else {
            return Err(RasperError::InvalidArgument("no sampled tables".into()));
        };
        let shape = first.shape();
        if tables.iter().any(|t| t.shape() != shape) {
            return Err(RasperError::DimensionMismatch(
                "sampled tables differ in shape".into(),
            ));
        }
        Ok(Self { tables })
    }

    pub fn tables(&self) -> &[DMatrix<f64>] {
        &self.tables
    }

    pub fn n(&self) -> usize {
        self.tables[0].nrows()
    }

    pub fn p(&self) -> usize {
        self.tables[0].ncols()
    }

    /// `1/S`.
    pub fn scale(&self) -> f64 {
        1.0 / self.tables.len() as f64
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            tables: self.tables.iter().map(|t| t.select_rows(rows)).collect(),
        }
    }
}

/// A concordance measure bound to its weights, tables and smoothing scale.
#[derive(Debug, Clone)]
pub struct Concordance {
    pub weights: PairWeights,
    pub tables: PairTables,
    pub nu: f64,
}

impl Concordance {
    pub fn new(weights: PairWeights, tables: PairTables, nu: f64) -> Result<Self> {
        if weights.n() != tables.n() {
            return Err(RasperError::DimensionMismatch(format!(
                "{} weights rows vs {} table rows",
                weights.n(),
                tables.n()
            )));
        }
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(RasperError::InvalidArgument(format!(
                "smoothing scale must be positive, got {nu}"
            )));
        }
        if weights.is_degenerate() {
            return Err(RasperError::DegenerateWeights);
        }
        Ok(Self {
            weights,
            tables,
            nu,
        })
    }

    pub fn n(&self) -> usize {
        self.weights.n()
    }

    pub fn p(&self) -> usize {
        self.tables.p()
    }

    pub fn select_rows(&self, rows: &[usize], weights: PairWeights) -> Result<Self> {
        Self::new(weights, self.tables.select_rows(rows), self.nu)
    }

    pub fn value(&self, beta: &DVector<f64>) -> f64 {
        let n = self.n();
        let w = &self.weights;
        let mut total = 0.0;
        for t in self.tables.tables() {
            let eta = t * beta;
            let mut d = 0.0;
            for i in 0..n {
                d += 0.5 * w.get(i, i);
                for j in (i + 1)..n {
                    let (g, gc) = logistic_pair((eta[i] - eta[j]) / self.nu);
                    d += w.get(i, j) * g + w.get(j, i) * gc;
                }
            }
            total += d;
        }
        total * self.tables.scale()
    }

    pub fn gradient(&self, beta: &DVector<f64>) -> DVector<f64> {
        let n = self.n();
        let w = &self.weights;
        let mut grad = DVector::zeros(self.p());
        for t in self.tables.tables() {
            let eta = t * beta;
            // h_i = sum_j (w_ij - w_ji) g'(u_ij); grad = T' h
            let mut h = DVector::zeros(n);
            for i in 0..n {
                for j in (i + 1)..n {
                    let (g, gc) = logistic_pair((eta[i] - eta[j]) / self.nu);
                    let m = (w.get(i, j) - w.get(j, i)) * g * gc;
                    h[i] += m;
                    h[j] -= m;
                }
            }
            grad += t.transpose() * h;
        }
        grad * (self.tables.scale() / self.nu)
    }
}

pub fn concordance_value(
    tables: &PairTables,
    beta: &DVector<f64>,
    nu: f64,
    weights: &PairWeights,
) -> Result<f64> {
    if weights.is_degenerate() {
        return Err(RasperError::DegenerateWeights);
    }
    Ok(Concordance::new(weights.clone(), tables.clone(), nu)?.value(beta))
}

pub fn concordance_gradient(
    tables: &PairTables,
    beta: &DVector<f64>,
    nu: f64,
    weights: &PairWeights,
) -> Result<DVector<f64>> {
    if weights.is_degenerate() {
        return Err(RasperError::DegenerateWeights);
    }
    Ok(Concordance::new(weights.clone(), tables.clone(), nu)?.gradient(beta))
}

/// `psi_i = #{j : (x_i - x_j)' beta >= 0}`, including `j = i`.
pub fn exact_rank_params(x: &DMatrix<f64>, beta: &DVector<f64>) -> Vec<usize> {
    let eta = x * beta;
    eta.iter()
        .map(|ei| eta.iter().filter(|&&ej| ei - ej >= 0.0).count())
        .collect()
}

/// `psi_i = sum_j g_nu((x_i - x_j)' beta)`; the diagonal term contributes 1/2.
pub fn smooth_rank_params(x: &DMatrix<f64>, beta: &DVector<f64>, nu: f64) -> Vec<f64> {
    let eta = x * beta;
    eta.iter()
        .map(|ei| eta.iter().map(|ej| smooth_step(ei - ej, nu)).sum())
        .collect()
}

/// Gaussian conditional sampler for novel covariates given conventional ones.
#[derive(Debug, Clone)]
pub struct MarginalSampler {
    /// `(p - q) x q`, moment estimate `(1/n) sum_i b_i z_i'`.
    pub cross_cov: DMatrix<f64>,
    /// `I - cross_cov cross_cov'`, symmetrized.
    pub cond_cov: DMatrix<f64>,
    /// Square root of the eigenvalue-clamped conditional covariance.
    pub cond_factor: DMatrix<f64>,
    pub samples: usize,
    pub seed: u64,
    pub tables: PairTables,
}

pub fn build_marginal_sampler(
    z: &DMatrix<f64>,
    b: &DMatrix<f64>,
    samples: usize,
    seed: u64,
) -> Result<MarginalSampler> {
    let n = z.nrows();
    if b.nrows() != n {
        return Err(RasperError::DimensionMismatch(format!(
            "conventional block has {n} rows, novel block {}",
            b.nrows()
        )));
    }
    if b.ncols() == 0 {
        return Err(RasperError::DimensionMismatch(
            "marginalization requires at least one novel covariate".into(),
        ));
    }
    if samples == 0 {
        return Err(RasperError::InvalidArgument("sample count must be >= 1".into()));
    }
    let m = b.ncols();
    let q = z.ncols();
    let cross_cov = b.transpose() * z / n as f64;
    let raw = DMatrix::identity(m, m) - &cross_cov * cross_cov.transpose();
    let cond_cov = (&raw + raw.transpose()) * 0.5;
    let eig = cond_cov.clone().symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let cond_factor = &eig.eigenvectors * DMatrix::from_diagonal(&roots);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = z * cross_cov.transpose();
    let mut tables = Vec::with_capacity(samples);
    for _ in 0..samples {
        let e: DMatrix<f64> = DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(&mut rng));
        let draws: DMatrix<f64> = &mean + e * cond_factor.transpose();
        let mut x = DMatrix::zeros(n, q + m);
        x.columns_mut(0, q).copy_from(z);
        x.columns_mut(q, m).copy_from(&draws);
        tables.push(x);
    }
    Ok(MarginalSampler {
        cross_cov,
        cond_cov,
        cond_factor,
        samples,
        seed,
        tables: PairTables::sampled(tables)?,
    })
}
