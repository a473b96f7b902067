//! One PASS/FAIL line per acceptance criterion. Exits non-zero if any fail.

use bayfactor::validation::{run_criterion, CriterionReport, CRITERIA};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

fn bayfactor(args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_bayfactor"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("{} exited with {:?}: {}", args[0], o.status.code(), String::from_utf8_lossy(&o.stderr).trim()))
    }
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(files(&path));
        } else {
            out.push(path);
        }
    }
    out.sort();
    out
}

/// The full pipeline with fixed seeds, written below `root`.
fn pipeline(root: &Path) -> Result<(), String> {
    let p = |rel: &str| root.join(rel).to_str().unwrap().to_string();
    bayfactor(&["simulate", "--scenario", "2", "--seed", "5", "--m", "30", "--n-test", "100", "--out", &p("sim")])?;
    let train = p("sim/train.csv");
    let groups = p("sim/groups.txt");
    let test = p("sim/test.csv");
    bayfactor(&["fit", "--input", &train, "--groups", &groups, "--method", "eb-vb", "--seed", "9", "--out", &p("vb")])?;
    bayfactor(&[
        "fit", "--input", &train, "--groups", &groups, "--method", "gibbs", "--d", "2", "--n-iter", "400", "--burn-in", "100",
        "--seed", "9", "--draws-out", &p("gibbs/draws.csv"), "--out", &p("gibbs"),
    ])?;
    for mode in ["plugin", "mc", "taylor"] {
        bayfactor(&[
            "predict", "--model", &p("vb/model.json"), "--input", &test, "--predict-mode", mode, "--seed", "3",
            "--out", &p(&format!("pred_{mode}.csv")),
        ])?;
    }
    bayfactor(&[
        "benchmark", "--scenarios", "1,2", "--methods", "null,ridge,vb,eb-vb", "--m-values", "0,20", "--replications", "2",
        "--seed", "4", "--out", &p("bench"),
    ])
}

fn determinism() -> CriterionReport {
    let t0 = Instant::now();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    if let Some(e) = dirs.iter().find_map(|d| pipeline(d.path()).err()) {
        return CriterionReport::new(12, false, e, t0);
    }
    let (a, b) = (files(dirs[0].path()), files(dirs[1].path()));
    let rel = |d: &Path, f: &[PathBuf]| f.iter().map(|x| x.strip_prefix(d).unwrap().to_path_buf()).collect::<Vec<_>>();
    if rel(dirs[0].path(), &a) != rel(dirs[1].path(), &b) {
        return CriterionReport::new(12, false, "runs produced different file sets".into(), t0);
    }
    let differing: Vec<String> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| std::fs::read(x).unwrap() != std::fs::read(y).unwrap())
        .map(|(x, _)| x.strip_prefix(dirs[0].path()).unwrap().display().to_string())
        .collect();
    let detail = if differing.is_empty() {
        format!("{} output files byte-identical across two process runs", a.len())
    } else {
        format!("differing: {}", differing.join(", "))
    };
    CriterionReport::new(12, differing.is_empty(), detail, t0)
}

fn main() {
    let mut failed = Vec::new();
    for (id, key, title) in CRITERIA {
        let report = if id == 12 { determinism() } else { run_criterion(id).expect("library criterion") };
        println!("{report}");
        if !report.passed {
            failed.push(format!("{id} {key}: {title}"));
        }
    }
    println!("acceptance: {} of {} criteria passed", CRITERIA.len() - failed.len(), CRITERIA.len());
    if !failed.is_empty() {
        for f in &failed {
            println!("failed: {f}");
        }
        std::process::exit(1);
    }
}
