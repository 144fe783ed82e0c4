//! Tabular ingestion, covariate standardization and external ranks.
//!
//! Covariates are split into a conventional block (inputs the external risk
//! model understands) followed by a novel block. Outcomes are never scaled.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{RasperError, Result};

/// Column mapping for a CSV input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub outcome: String,
    pub conventional: Vec<String>,
    #[serde(default)]
    pub novel: Vec<String>,
    /// External risk score column; larger means larger predicted outcome.
    #[serde(default)]
    pub score: Option<String>,
    #[serde(default)]
    pub id: Option<String>,
}

impl Schema {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| RasperError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| RasperError::Parse(format!("schema: {e}")))
    }

    fn covariate_names(&self) -> impl Iterator<Item = &String> {
        self.conventional.iter().chain(self.novel.iter())
    }
}

#[derive(Debug, Clone)]
pub struct RawDataset {
    pub y: Vec<f64>,
    /// Conventional covariates, n x q.
    pub z: DMatrix<f64>,
    /// Novel covariates, n x (p - q); may have zero columns.
    pub b: DMatrix<f64>,
    pub scores: Option<Vec<f64>>,
    pub ids: Vec<String>,
    pub conventional_names: Vec<String>,
    pub novel_names: Vec<String>,
}

impl RawDataset {
    pub fn new(
        y: Vec<f64>,
        z: DMatrix<f64>,
        b: DMatrix<f64>,
        scores: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = y.len();
        if z.nrows() != n || b.nrows() != n {
            return Err(RasperError::DimensionMismatch(format!(
                "outcome has {n} rows, conventional block {}, novel block {}",
                z.nrows(),
                b.nrows()
            )));
        }
        if let Some(s) = &scores {
            if s.len() != n {
                return Err(RasperError::DimensionMismatch(format!(
                    "outcome has {n} rows, scores {}",
                    s.len()
                )));
            }
        }
        if z.ncols() == 0 {
            return Err(RasperError::InvalidArgument(
                "at least one conventional covariate is required".into(),
            ));
        }
        let conventional_names = (1..=z.ncols()).map(|j| format!("z{j}")).collect();
        let novel_names = (1..=b.ncols()).map(|j| format!("b{j}")).collect();
        Ok(Self {
            ids: (1..=n).map(|i| i.to_string()).collect(),
            y,
            z,
            b,
            scores,
            conventional_names,
            novel_names,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn q(&self) -> usize {
        self.z.ncols()
    }

    pub fn p(&self) -> usize {
        self.z.ncols() + self.b.ncols()
    }

    /// Covariates in conventional-then-novel order.
    pub fn covariates(&self) -> DMatrix<f64> {
        let n = self.n();
        let q = self.q();
        DMatrix::from_fn(n, self.p(), |i, j| {
            if j < q {
                self.z[(i, j)]
            } else {
                self.b[(i, j - q)]
            }
        })
    }

    pub fn column_names(&self) -> Vec<String> {
        self.conventional_names
            .iter()
            .chain(self.novel_names.iter())
            .cloned()
            .collect()
    }
}

fn parse_cell(raw: &str, column: &str, row: usize) -> Result<f64> {
    let t = raw.trim();
    if t.is_empty() || t == "NA" {
        return Err(RasperError::MissingValue {
            column: column.to_string(),
            row,
        });
    }
    t.parse::<f64>()
        .map_err(|_| RasperError::Parse(format!("column `{column}` row {row}: `{t}` is not a number")))
}

pub fn load_dataset(path: &Path, schema: &Schema) -> Result<RawDataset> {
    let file = std::fs::File::open(path).map_err(|source| RasperError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| RasperError::Parse(e.to_string()))?
        .clone();
    let index_of = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| RasperError::SchemaMismatch(name.to_string()))
    };

    let y_idx = index_of(&schema.outcome)?;
    let cov_idx = schema
        .covariate_names()
        .map(|c| index_of(c))
        .collect::<Result<Vec<_>>>()?;
    let score_idx = schema.score.as_deref().map(index_of).transpose()?;
    let id_idx = schema.id.as_deref().map(index_of).transpose()?;
    let cov_names: Vec<&String> = schema.covariate_names().collect();

    let mut y = Vec::new();
    let mut cov: Vec<f64> = Vec::new();
    let mut scores = Vec::new();
    let mut ids = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| RasperError::Parse(e.to_string()))?;
        let row = r + 1;
        let get = |idx: usize| record.get(idx).unwrap_or("");
        y.push(parse_cell(get(y_idx), &schema.outcome, row)?);
        for (k, &idx) in cov_idx.iter().enumerate() {
            cov.push(parse_cell(get(idx), cov_names[k], row)?);
        }
        if let (Some(idx), Some(name)) = (score_idx, schema.score.as_deref()) {
            scores.push(parse_cell(get(idx), name, row)?);
        }
        ids.push(match id_idx {
            Some(idx) => get(idx).trim().to_string(),
            None => row.to_string(),
        });
    }

    let n = y.len();
    let p = cov_idx.len();
    let q = schema.conventional.len();
    let x = DMatrix::from_row_slice(n, p, &cov);
    let mut raw = RawDataset::new(
        y,
        x.columns(0, q).into_owned(),
        x.columns(q, p - q).into_owned(),
        score_idx.map(|_| scores),
    )?;
    raw.ids = ids;
    raw.conventional_names = schema.conventional.clone();
    raw.novel_names = schema.novel.clone();
    log::info!("loaded {} rows, q = {q}, p = {p} from {}", n, path.display());
    Ok(raw)
}

/// Standardized covariates with the affine map back to the original scale.
#[derive(Debug, Clone)]
pub struct StandardizedDesign {
    pub x: DMatrix<f64>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub q: usize,
    pub names: Vec<String>,
}

impl StandardizedDesign {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn conventional(&self) -> DMatrix<f64> {
        self.x.columns(0, self.q).into_owned()
    }

    pub fn novel(&self) -> DMatrix<f64> {
        self.x.columns(self.q, self.p() - self.q).into_owned()
    }

    /// Maps coefficients fitted on the standardized scale to the original
    /// covariate scale, returning `(intercept, coefficients)`.
    pub fn destandardize(&self, intercept: f64, beta: &[f64]) -> (f64, Vec<f64>) {
        let coef: Vec<f64> = beta
            .iter()
            .zip(&self.scales)
            .map(|(b, s)| b / s)
            .collect();
        let shift: f64 = coef.iter().zip(&self.means).map(|(c, m)| c * m).sum();
        (intercept - shift, coef)
    }

    /// Applies the stored standardization to rows on the original scale.
    pub fn transform(&self, raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if raw.ncols() != self.p() {
            return Err(RasperError::DimensionMismatch(format!(
                "expected {} columns, got {}",
                self.p(),
                raw.ncols()
            )));
        }
        Ok(DMatrix::from_fn(raw.nrows(), raw.ncols(), |i, j| {
            (raw[(i, j)] - self.means[j]) / self.scales[j]
        }))
    }
}

/// Centers each column and scales it so that the sum of squares is n - 1.
pub fn standardize_matrix(
    x: &DMatrix<f64>,
    q: usize,
    names: Vec<String>,
) -> Result<StandardizedDesign> {
    let n = x.nrows();
    if n < 2 || x.ncols() == 0 {
        return Err(RasperError::EmptyData(n));
    }
    let mut out = x.clone();
    let mut means = Vec::with_capacity(x.ncols());
    let mut scales = Vec::with_capacity(x.ncols());
    for j in 0..x.ncols() {
        let col = x.column(j);
        let mean = col.mean();
        let ss: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
        let scale = (ss / (n - 1) as f64).sqrt();
        if !(scale > f64::EPSILON * mean.abs().max(1.0)) {
            let name = names.get(j).cloned().unwrap_or_else(|| format!("column {j}"));
            return Err(RasperError::ConstantColumn(name));
        }
        for v in out.column_mut(j).iter_mut() {
            *v = (*v - mean) / scale;
        }
        means.push(mean);
        scales.push(scale);
    }
    Ok(StandardizedDesign {
        x: out,
        means,
        scales,
        q,
        names,
    })
}

pub fn standardize(raw: &RawDataset) -> Result<StandardizedDesign> {
    if raw.n() < 2 {
        return Err(RasperError::EmptyData(raw.n()));
    }
    standardize_matrix(&raw.covariates(), raw.q(), raw.column_names())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalRanks {
    pub ranks: Vec<usize>,
    pub tied: bool,
}

impl ExternalRanks {
    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    pub fn as_f64(&self) -> DVector<f64> {
        DVector::from_iterator(self.ranks.len(), self.ranks.iter().map(|&r| r as f64))
    }
}

/// `r_i = #{j : s_i >= s_j}`, counting `j = i`. Ties share the largest rank.
pub fn external_ranks(scores: &[f64]) -> Result<ExternalRanks> {
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(RasperError::NonFiniteScore(i));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let tied = sorted.windows(2).any(|w| w[0] == w[1]);
    let ranks = scores
        .iter()
        .map(|s| sorted.partition_point(|v| v <= s))
        .collect();
    Ok(ExternalRanks { ranks, tied })
}
