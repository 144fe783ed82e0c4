#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn rasper(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rasper"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str]) -> Output {
    let out = rasper(args);
    assert!(
        out.status.success(),
        "rasper {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Deterministic, roughly uniform on (-1, 1) (splitmix64 of the index).
fn noise(i: usize, k: usize) -> f64 {
    let mut z = (i as u64 * 1000 + k as u64).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    2.0 * (z >> 11) as f64 / (1u64 << 53) as f64 - 1.0
}

/// Regression toy: three conventional covariates, one novel, an outcome and
/// an external score that ranks the outcome's mean imperfectly.
pub fn regression_csv(dir: &Path, n: usize) -> PathBuf {
    let mut text = String::from("id,z1,z2,z3,b1,y,score\n");
    for i in 0..n {
        let z: Vec<f64> = (0..3).map(|k| 1.7 * noise(i, k)).collect();
        let b = 0.4 * z[0] + noise(i, 3);
        let mu = 0.6 * z[0] - 0.3 * z[1] + 0.2 * z[2] + 0.3 * b;
        let y = mu + 0.8 * noise(i, 4) + 0.5 * noise(i, 5);
        let score = 0.5 * z[0] - 0.4 * z[1] + 0.4 * z[2];
        text.push_str(&format!("r{i},{},{},{},{b},{y},{score}\n", z[0], z[1], z[2]));
    }
    let path = dir.join("data.csv");
    std::fs::write(&path, text).unwrap();
    path
}

pub fn schema_json(dir: &Path) -> PathBuf {
    let path = dir.join("schema.json");
    std::fs::write(
        &path,
        r#"{"outcome": "y", "conventional": ["z1", "z2", "z3"], "novel": ["b1"], "score": "score", "id": "id"}"#,
    )
    .unwrap();
    path
}

pub fn survival_csv(dir: &Path, censored: bool) -> PathBuf {
    let mut text = String::from("time,event,psa,visceral_mets,ecog_ge2,days_to_progression\n");
    for i in 0..25 {
        let t = 2.0 + 50.0 * (0.5 + 0.5 * noise(i, 0));
        let e = if censored { usize::from(noise(i, 1) > -0.4) } else { 1 };
        let psa = 60.0 * (0.5 + 0.5 * noise(i, 2));
        let v = usize::from(noise(i, 3) > 0.0);
        let ecog = usize::from(noise(i, 4) > 0.3);
        let days = 500.0 * (0.5 + 0.5 * noise(i, 5));
        text.push_str(&format!("{t},{e},{psa},{v},{ecog},{days}\n"));
    }
    text.push_str("20,1,10,0,0,400\n");
    let path = dir.join(if censored { "surv_cens.csv" } else { "surv.csv" });
    std::fs::write(&path, text).unwrap();
    path
}

pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|x| x.unwrap().iter().map(str::to_string).collect())
        .collect();
    (header, rows)
}

pub fn column(path: &Path, name: &str) -> Vec<String> {
    let (h, rows) = read_csv(path);
    let k = h.iter().position(|c| c == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.into_iter().map(|r| r[k].clone()).collect()
}

pub fn numbers(path: &Path, name: &str) -> Vec<f64> {
    column(path, name).iter().map(|v| v.parse().unwrap()).collect()
}

pub fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub fn floats(v: &serde_json::Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

/// File name to contents for every file in `dir`.
pub fn snapshot(dir: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

/// Runs `args` twice into the same output directory with different thread
/// counts; returns the names of files that changed.
pub fn rerun_differences(args: &[&str], out: &Path) -> Vec<String> {
    let mut first = args.to_vec();
    first.extend(["--threads", "1"]);
    ok(&first);
    let before = snapshot(out);
    let mut second = args.to_vec();
    second.extend(["--threads", "3"]);
    ok(&second);
    let after = snapshot(out);
    assert_eq!(before.keys().collect::<Vec<_>>(), after.keys().collect::<Vec<_>>());
    before
        .iter()
        .filter(|(k, v)| after[*k] != **v)
        .map(|(k, _)| k.clone())
        .collect()
}
