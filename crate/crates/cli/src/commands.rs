use nalgebra::DVector;
use rasper::baselines::{fit_ols, fit_ridge};
use rasper::concordance::{build_marginal_sampler, Measure};
use rasper::data::{external_ranks, load_dataset, standardize, RawDataset, Schema, StandardizedDesign};
use rasper::selection::{fmt_f64, select as select_grid, GridBounds, HyperGrid, RankedData};
use rasper::simbench::{kendall_tau, presets, run_benchmark, SimSetting};
use rasper::solver::{default_nu, fit_rasper, FitOptions, FitResult, NuSource};
use rasper::survival::{nomogram_score, pseudovalues, rmst, NomogramInput, SurvivalSample};
use rasper::{RasperError, Result};
use serde::Serialize;

use crate::output::{csv_bytes, join, prepare_dir, write_bytes, write_json, Table};
use crate::{Command, DataArgs, FitArgs, FitMethod, Preset, PseudoArgs, RankArgs, ScoreArgs, SelectArgs, SimulateArgs};

struct Loaded {
    raw: RawDataset,
    design: StandardizedDesign,
}

fn load(args: &DataArgs) -> Result<Loaded> {
    let schema = match &args.schema {
        Some(path) => Schema::from_json_file(path)?,
        None => {
            let outcome = args.outcome.clone().ok_or_else(|| {
                RasperError::InvalidArgument("give --schema or --outcome with --conventional".into())
            })?;
            Schema {
                outcome,
                conventional: args.conventional.clone(),
                novel: args.novel.clone(),
                score: args.score.clone(),
                id: args.id.clone(),
            }
        }
    };
    let raw = load_dataset(&args.data, &schema)?;
    let design = standardize(&raw)?;
    Ok(Loaded { raw, design })
}

fn fit_options(rank: &RankArgs) -> FitOptions {
    FitOptions {
        tol: rank.tol,
        max_iter: rank.max_iter,
        accelerate: !rank.plain_mm,
    }
}

fn scores(loaded: &Loaded) -> Result<&Vec<f64>> {
    loaded
        .raw
        .scores
        .as_ref()
        .ok_or_else(|| RasperError::InvalidArgument("the schema names no external score column".into()))
}

struct Ranked {
    data: RankedData,
    nu_source: &'static str,
}

fn ranked(loaded: &Loaded, rank: &RankArgs) -> Result<Ranked> {
    let x = loaded.design.x.clone();
    let y = DVector::from_column_slice(&loaded.raw.y);
    let (nu, nu_source) = match rank.nu {
        Some(nu) => (nu, "user"),
        None => {
            let c = default_nu(&x, &y);
            let src = match c.source {
                NuSource::LeastSquares => "least_squares",
                NuSource::RidgeFallback => "ridge_fallback",
                NuSource::Floor => "floor",
            };
            (c.nu, src)
        }
    };
    let mut data = RankedData::new(x, y, scores(loaded)?.clone(), rank.measure, nu)?;
    if rank.marginalized {
        let sampler = build_marginal_sampler(
            &loaded.design.conventional(),
            &loaded.design.novel(),
            rank.samples,
            rank.seed,
        )?;
        data = data.with_tables(sampler.tables)?;
    }
    Ok(Ranked { data, nu_source })
}

#[derive(Serialize)]
struct Coefficients {
    intercept: f64,
    beta: Vec<f64>,
}

#[derive(Serialize)]
struct TraceSummary {
    initial: f64,
    #[serde(rename = "final")]
    last: f64,
    length: usize,
}

#[derive(Serialize)]
struct FitOutput {
    method: FitMethod,
    measure: Option<Measure>,
    marginalized: bool,
    nu: Option<f64>,
    nu_source: Option<&'static str>,
    lambda: f64,
    alpha: f64,
    n: usize,
    columns: Vec<String>,
    /// Coefficients of the standardized covariates.
    standardized: Coefficients,
    /// Coefficients of the covariates as read.
    original: Coefficients,
    column_means: Vec<f64>,
    column_scales: Vec<f64>,
    concordance: Option<f64>,
    objective: Option<f64>,
    converged: Option<bool>,
    iterations: Option<usize>,
    trace: Option<TraceSummary>,
}

impl FitOutput {
    fn new(loaded: &Loaded, method: FitMethod, lambda: f64, alpha: f64, intercept: f64, beta: Vec<f64>) -> Self {
        let d = &loaded.design;
        let (b0, b) = d.destandardize(intercept, &beta);
        Self {
            method,
            measure: None,
            marginalized: false,
            nu: None,
            nu_source: None,
            lambda,
            alpha,
            n: d.n(),
            columns: d.names.clone(),
            standardized: Coefficients { intercept, beta },
            original: Coefficients { intercept: b0, beta: b },
            column_means: d.means.to_vec(),
            column_scales: d.scales.to_vec(),
            concordance: None,
            objective: None,
            converged: None,
            iterations: None,
            trace: None,
        }
    }

    fn with_ranking(mut self, ranked: &Ranked, rank: &RankArgs) -> Self {
        self.measure = Some(rank.measure);
        self.marginalized = rank.marginalized;
        self.nu = Some(ranked.data.nu);
        self.nu_source = Some(ranked.nu_source);
        self
    }

    fn from_rasper(loaded: &Loaded, ranked: &Ranked, rank: &RankArgs, fit: &FitResult) -> Self {
        let mut out = Self::new(loaded, FitMethod::Rasper, fit.lambda, fit.alpha, fit.intercept, fit.beta.clone())
            .with_ranking(ranked, rank);
        out.concordance = Some(fit.concordance);
        out.objective = Some(fit.objective());
        out.converged = Some(fit.converged);
        out.iterations = Some(fit.iterations);
        out.trace = Some(TraceSummary {
            initial: fit.objective_trace[0],
            last: fit.objective(),
            length: fit.objective_trace.len(),
        });
        out
    }
}

/// Internal fitted values and their ranks next to the external ranks.
fn rankings_csv(loaded: &Loaded, intercept: f64, beta: &[f64]) -> Result<Vec<u8>> {
    let scores = scores(loaded)?;
    let fitted = (&loaded.design.x * DVector::from_column_slice(beta)).add_scalar(intercept);
    let internal = external_ranks(fitted.as_slice())?;
    let external = external_ranks(scores)?;
    let rows = (0..fitted.len()).map(|i| {
        vec![
            loaded.raw.ids[i].clone(),
            fmt_f64(fitted[i]),
            internal.ranks[i].to_string(),
            fmt_f64(scores[i]),
            external.ranks[i].to_string(),
        ]
    });
    csv_bytes(&["id", "fitted", "internal_rank", "external_score", "external_rank"], rows)
}

fn write_fit(dir: &std::path::Path, loaded: &Loaded, out: &FitOutput) -> Result<()> {
    write_json(&join(dir, "fit.json"), out)?;
    if loaded.raw.scores.is_some() {
        let bytes = rankings_csv(loaded, out.standardized.intercept, &out.standardized.beta)?;
        write_bytes(&join(dir, "rankings.csv"), &bytes)?;
    }
    Ok(())
}

fn check_penalties(lambda: f64, alpha: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite() && alpha >= 0.0 && alpha.is_finite()) {
        return Err(RasperError::InvalidArgument(format!(
            "penalties must be finite and nonnegative, got lambda = {lambda}, alpha = {alpha}"
        )));
    }
    Ok(())
}

pub fn fit(a: &FitArgs, cfg: &Command) -> Result<()> {
    check_penalties(a.lambda, a.alpha)?;
    let loaded = load(&a.data)?;
    let out = match a.method {
        FitMethod::Rasper => {
            let ranked = ranked(&loaded, &a.rank)?;
            let problem = ranked.data.problem(a.lambda, a.alpha)?;
            let fit = fit_rasper(&problem, None, fit_options(&a.rank))?;
            FitOutput::from_rasper(&loaded, &ranked, &a.rank, &fit)
        }
        FitMethod::Ridge | FitMethod::Ols => {
            let y = DVector::from_column_slice(&loaded.raw.y);
            let (lf, alpha) = if a.method == FitMethod::Ols {
                (fit_ols(&loaded.design.x, &y)?, 0.0)
            } else {
                (fit_ridge(&loaded.design.x, &y, a.alpha)?, a.alpha)
            };
            let mut out = FitOutput::new(&loaded, a.method, 0.0, alpha, lf.intercept, lf.beta.clone());
            if loaded.raw.scores.is_some() {
                let ranked = ranked(&loaded, &a.rank)?;
                let problem = ranked.data.problem(0.0, alpha)?;
                out = out.with_ranking(&ranked, &a.rank);
                out.concordance = Some(problem.concordance.value(&lf.beta_vector()));
                out.objective = Some(problem.local_objective(lf.intercept, &lf.beta_vector()));
            }
            out
        }
    };
    prepare_dir(&a.out)?;
    write_json(&join(&a.out, "config.json"), cfg)?;
    write_fit(&a.out, &loaded, &out)
}

pub fn select(a: &SelectArgs, cfg: &Command) -> Result<()> {
    let loaded = load(&a.data)?;
    let ranked = ranked(&loaded, &a.rank)?;
    let grid = match (a.lambda, a.alpha) {
        (Some(l), Some(al)) => {
            check_penalties(l, al)?;
            HyperGrid::single(l, al)
        }
        _ => {
            let d = GridBounds::default_for(loaded.design.n());
            let bounds = GridBounds {
                lambda_min: a.lambda_min.unwrap_or(d.lambda_min),
                lambda_max: a.lambda_max.unwrap_or(d.lambda_max),
                alpha_min: a.alpha_min.unwrap_or(d.alpha_min),
                alpha_max: a.alpha_max.unwrap_or(d.alpha_max),
            };
            HyperGrid::from_bounds(bounds, a.lambda_steps, a.alpha_steps)?
        }
    };
    let report = select_grid(&ranked.data, &grid, a.criterion, fit_options(&a.rank))?;

    prepare_dir(&a.out)?;
    write_json(&join(&a.out, "config.json"), cfg)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    write_bytes(&join(&a.out, "selection_report.csv"), &csv)?;
    let out = FitOutput::from_rasper(&loaded, &ranked, &a.rank, &report.chosen_fit);
    write_fit(&a.out, &loaded, &out)?;

    if a.trace_lambda {
        let alpha = report.chosen_record().alpha;
        let scores = scores(&loaded)?;
        let mut path: Vec<_> = report.records.iter().filter(|r| r.alpha == alpha).collect();
        path.sort_by(|x, y| x.lambda.total_cmp(&y.lambda));
        let rows = path
            .iter()
            .map(|r| {
                let fitted = (&loaded.design.x * DVector::from_column_slice(&r.beta)).add_scalar(r.intercept);
                let tau = kendall_tau(fitted.as_slice(), scores)?;
                Ok(vec![fmt_f64(r.lambda), fmt_f64(r.alpha), fmt_f64(tau)])
            })
            .collect::<Result<Vec<_>>>()?;
        write_bytes(
            &join(&a.out, "trace_lambda.csv"),
            &csv_bytes(&["lambda", "alpha", "kendall_tau"], rows)?,
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct PseudoSummary {
    n: usize,
    events: usize,
    tau: f64,
    rmst: f64,
}

pub fn pseudo(a: &PseudoArgs, cfg: &Command) -> Result<()> {
    let table = Table::read(&a.data)?;
    let times = table.numbers(&a.time)?;
    let events = table.flags(&a.event)?;
    let n_events = events.iter().filter(|e| **e).count();
    let sample = SurvivalSample::new(times, events, a.tau)?;
    let values = pseudovalues(&sample)?;
    let bytes = table.with_columns(&[(a.column.as_str(), values.iter().map(|&v| fmt_f64(v)).collect())])?;

    prepare_dir(&a.out)?;
    write_json(&join(&a.out, "config.json"), cfg)?;
    write_bytes(&join(&a.out, "pseudovalues.csv"), &bytes)?;
    write_json(
        &join(&a.out, "summary.json"),
        &PseudoSummary {
            n: sample.n(),
            events: n_events,
            tau: a.tau,
            rmst: rmst(&sample),
        },
    )
}

pub fn score(a: &ScoreArgs, cfg: &Command) -> Result<()> {
    let table = Table::read(&a.data)?;
    let psa = table.numbers(&a.psa)?;
    let visceral = table.flags(&a.visceral)?;
    let ecog = table.flags(&a.ecog)?;
    let days = table.numbers(&a.days)?;
    let scores = (0..psa.len())
        .map(|i| {
            nomogram_score(&NomogramInput {
                psa: psa[i],
                visceral_mets: visceral[i],
                ecog_ge2: ecog[i],
                days_to_progression: days[i],
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    // higher nomogram score means shorter survival; rank so that larger
    // means a larger expected outcome
    log::info!("ranking by the negated nomogram score");
    let oriented: Vec<f64> = scores.iter().map(|s| -s).collect();
    let ranks = external_ranks(&oriented)?;
    let bytes = table.with_columns(&[
        ("nomogram_score", scores.iter().map(|&v| fmt_f64(v)).collect()),
        ("oriented_score", oriented.iter().map(|&v| fmt_f64(v)).collect()),
        ("external_rank", ranks.ranks.iter().map(|r| r.to_string()).collect()),
    ])?;

    prepare_dir(&a.out)?;
    write_json(&join(&a.out, "config.json"), cfg)?;
    write_bytes(&join(&a.out, "scores.csv"), &bytes)
}

pub fn simulate(a: &SimulateArgs, cfg: &Command) -> Result<()> {
    let mut setting: SimSetting = match (&a.setting, a.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|source| RasperError::Io {
                path: path.clone(),
                source,
            })?;
            serde_json::from_str(&text).map_err(|e| RasperError::Parse(format!("{}: {e}", path.display())))?
        }
        (None, Some(Preset::HighRcFar)) => presets::high_rc_far(),
        (None, Some(Preset::LowRc)) => presets::low_rc(),
        (None, None) => return Err(RasperError::InvalidArgument("give --setting or --preset".into())),
    };
    if let Some(r) = a.replications {
        setting.replications = r;
    }
    if let Some(s) = a.seed {
        setting.seed = s;
    }
    let report = run_benchmark(&setting)?;

    prepare_dir(&a.out)?;
    write_json(&join(&a.out, "config.json"), cfg)?;
    write_json(&join(&a.out, "setting.json"), &setting)?;
    write_json(&join(&a.out, "bench_report.json"), &report)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    write_bytes(&join(&a.out, "bench_report.csv"), &csv)
}
