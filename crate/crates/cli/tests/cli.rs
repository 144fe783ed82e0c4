mod common;

use common::*;

#[test]
fn zero_lambda_fit_matches_ridge_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let data = regression_csv(dir.path(), 40);
    let schema = schema_json(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let base = ["fit", "--data", s(&data), "--schema", s(&schema), "--alpha", "2.5"];
    ok(&[&base[..], &["--lambda", "0", "--out", s(&a)]].concat());
    ok(&[&base[..], &["--method", "ridge", "--out", s(&b)]].concat());
    let (fa, fb) = (json(&a.join("fit.json")), json(&b.join("fit.json")));
    for scale in ["standardized", "original"] {
        let (x, y) = (&fa[scale], &fb[scale]);
        assert!((x["intercept"].as_f64().unwrap() - y["intercept"].as_f64().unwrap()).abs() < 1e-8);
        for (u, v) in floats(&x["beta"]).iter().zip(floats(&y["beta"])) {
            assert!((u - v).abs() < 1e-8, "{scale}: {u} vs {v}");
        }
    }
    assert!((fa["concordance"].as_f64().unwrap() - fb["concordance"].as_f64().unwrap()).abs() < 1e-10);
    assert_eq!(fa["nu"], fb["nu"]);
    assert!(!std::fs::read(a.join("rankings.csv")).unwrap().is_empty());
}

#[test]
fn original_scale_coefficients_reproduce_fitted_values() {
    let dir = tempfile::tempdir().unwrap();
    let data = regression_csv(dir.path(), 40);
    let out = dir.path().join("o");
    ok(&[
        "fit", "--data", s(&data), "--outcome", "y", "--conventional", "z1,z2,z3", "--novel", "b1",
        "--score", "score", "--id", "id", "--lambda", "5", "--alpha", "1", "--out", s(&out),
    ]);
    let fit = json(&out.join("fit.json"));
    let b0 = fit["original"]["intercept"].as_f64().unwrap();
    let b = floats(&fit["original"]["beta"]);
    let fitted = numbers(&out.join("rankings.csv"), "fitted");
    let cols: Vec<Vec<f64>> = ["z1", "z2", "z3", "b1"].iter().map(|c| numbers(&data, c)).collect();
    for i in 0..40 {
        let raw = b0 + (0..4).map(|j| b[j] * cols[j][i]).sum::<f64>();
        assert!((raw - fitted[i]).abs() < 1e-10);
    }
    assert_eq!(column(&out.join("rankings.csv"), "id")[3], "r3");
}

#[test]
fn missing_input_exits_two_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let schema = schema_json(dir.path());
    let out = dir.path().join("o");
    let cases: Vec<Vec<&str>> = vec![
        vec!["fit", "--data", s(&missing), "--schema", s(&schema), "--out", s(&out)],
        vec!["select", "--data", s(&missing), "--schema", s(&schema), "--out", s(&out)],
        vec!["pseudo", "--data", s(&missing), "--out", s(&out)],
        vec!["score", "--data", s(&missing), "--out", s(&out)],
        vec!["simulate", "--setting", s(&missing), "--out", s(&out)],
    ];
    for args in cases {
        let res = rasper(&args);
        assert_eq!(res.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&res.stderr).contains(s(&missing)));
    }
    let data = regression_csv(dir.path(), 20);
    let res = rasper(&["fit", "--data", s(&data), "--schema", s(&missing), "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains(s(&missing)));
}

#[test]
fn single_point_grid_reports_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let data = regression_csv(dir.path(), 30);
    let schema = schema_json(dir.path());
    let out = dir.path().join("o");
    ok(&["select", "--data", s(&data), "--schema", s(&schema), "--lambda", "3", "--alpha", "1", "--out", s(&out)]);
    let (_, rows) = read_csv(&out.join("selection_report.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(column(&out.join("selection_report.csv"), "chosen"), vec!["true"]);
}

fn argmin(values: &[String], eligible: &[bool]) -> usize {
    let mut best = None;
    for (k, v) in values.iter().enumerate() {
        if !eligible[k] || v.is_empty() {
            continue;
        }
        let v: f64 = v.parse().unwrap();
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((k, v));
        }
    }
    best.unwrap().0
}

#[test]
fn criteria_choose_from_their_own_columns() {
    let dir = tempfile::tempdir().unwrap();
    let data = regression_csv(dir.path(), 30);
    let schema = schema_json(dir.path());
    for crit in ["loocv", "aic"] {
        let out = dir.path().join(crit);
        ok(&[
            "select", "--data", s(&data), "--schema", s(&schema), "--criterion", crit, "--lambda-min", "0.5",
            "--lambda-max", "50", "--lambda-steps", "3", "--alpha-min", "0.1", "--alpha-max", "10",
            "--alpha-steps", "2", "--out", s(&out),
        ]);
        let report = out.join("selection_report.csv");
        let chosen = column(&report, "chosen").iter().position(|c| c == "true").unwrap();
        let stable: Vec<bool> = column(&report, "df_stable").iter().map(|v| v == "true").collect();
        let all = vec![true; stable.len()];
        let expect = if crit == "aic" {
            argmin(&column(&report, "aic"), &stable)
        } else {
            argmin(&column(&report, "loocv"), &all)
        };
        assert_eq!(chosen, expect, "{crit}");
        assert_eq!(column(&report, "lambda").len(), 20);
    }
}

#[test]
fn lambda_path_moves_toward_the_external_ranking() {
    let dir = tempfile::tempdir().unwrap();
    let data = regression_csv(dir.path(), 40);
    let schema = schema_json(dir.path());
    let out = dir.path().join("o");
    ok(&[
        "select", "--data", s(&data), "--schema", s(&schema), "--lambda-min", "1", "--lambda-max", "1000",
        "--lambda-steps", "3", "--alpha-min", "0.1", "--alpha-max", "1", "--alpha-steps", "1",
        "--trace-lambda", "--out", s(&out),
    ]);
    let trace = out.join("trace_lambda.csv");
    let lambdas = numbers(&trace, "lambda");
    let tau = numbers(&trace, "kendall_tau");
    assert_eq!(lambdas.len(), 5);
    assert!(lambdas.windows(2).all(|w| w[0] < w[1]));
    assert!(tau[tau.len() - 1] > tau[0], "tau along path: {tau:?}");
}

#[test]
fn pseudovalues_of_uncensored_data_are_truncated_times() {
    let dir = tempfile::tempdir().unwrap();
    let data = survival_csv(dir.path(), false);
    let out = dir.path().join("o");
    ok(&["pseudo", "--data", s(&data), "--tau", "30", "--out", s(&out)]);
    let file = out.join("pseudovalues.csv");
    let times = numbers(&file, "time");
    let pv = numbers(&file, "pseudo_rmst");
    for (t, v) in times.iter().zip(&pv) {
        assert!((v - t.min(30.0)).abs() < 1e-10, "{v} vs {t}");
    }
    // input columns are echoed unchanged
    assert_eq!(column(&file, "psa"), column(&data, "psa"));
    let summary = json(&out.join("summary.json"));
    let mean = pv.iter().sum::<f64>() / pv.len() as f64;
    assert!((summary["rmst"].as_f64().unwrap() - mean).abs() < 1e-10);
}

#[test]
fn score_orients_and_ranks_the_nomogram() {
    let dir = tempfile::tempdir().unwrap();
    let data = survival_csv(dir.path(), true);
    let out = dir.path().join("o");
    ok(&["score", "--data", s(&data), "--out", s(&out)]);
    let file = out.join("scores.csv");
    let score = numbers(&file, "nomogram_score");
    let oriented = numbers(&file, "oriented_score");
    let ranks = numbers(&file, "external_rank");
    // the appended row has every risk factor absent and days >= 360
    assert_eq!(*score.last().unwrap(), 0.0);
    for i in 0..score.len() {
        assert_eq!(oriented[i], -score[i]);
        let expect = oriented.iter().filter(|o| **o <= oriented[i]).count() as f64;
        assert_eq!(ranks[i], expect);
    }
}

#[test]
fn simulate_with_only_least_squares_gives_ones() {
    let dir = tempfile::tempdir().unwrap();
    let setting = dir.path().join("setting.json");
    std::fs::write(
        &setting,
        r#"{"name": "toy", "study": "1b", "beta_e": [0.3, 0.2, 0.1, 0.0, 0.1], "beta_i": [0.3, 0.1, 0.1, 0.0, 0.1, 0.2, 0.0],
            "n_internal": 30, "n_test": 50, "replications": 5, "seed": 3, "methods": ["ols"]}"#,
    )
    .unwrap();
    let out = dir.path().join("o");
    ok(&["simulate", "--setting", s(&setting), "--out", s(&out)]);
    assert_eq!(numbers(&out.join("bench_report.csv"), "relative_mse"), vec![1.0]);
    let report = json(&out.join("bench_report.json"));
    assert_eq!(report["completed"], 5);
}

#[test]
fn bad_arguments_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let data = regression_csv(dir.path(), 20);
    let schema = schema_json(dir.path());
    let out = dir.path().join("o");
    let res = rasper(&["fit", "--data", s(&data), "--schema", s(&schema), "--lambda=-1", "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("nonnegative"));
    let res = rasper(&["fit", "--data", s(&data), "--outcome", "nope", "--conventional", "z1", "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("nope"));
}
