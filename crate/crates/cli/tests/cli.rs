use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn reference() -> PathBuf {
    configs().join("reference.toml")
}

fn patchflow(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patchflow"))
        .args(args)
        .env("PATCHFLOW_OUT", out_root)
        .env_remove("PATCHFLOW_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Reference config with the `beta = [ ... ]` block replaced (or removed).
fn with_beta(replacement: Option<&str>) -> String {
    let text = fs::read_to_string(reference()).unwrap();
    let mut out = String::new();
    let mut skipping = false;
    for line in text.lines() {
        if line.starts_with("beta = [") {
            skipping = true;
            if let Some(r) = replacement {
                out.push_str(r);
                out.push('\n');
            }
            continue;
        }
        if skipping {
            if line.starts_with(']') {
                skipping = false;
            }
            continue;
        }
        out.push_str(line);
        out.push('\n');
    }
    out
}

#[test]
fn missing_beta_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("no_beta.toml");
    fs::write(&cfg, with_beta(None)).unwrap();
    let o = patchflow(&["simulate", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("beta"), "{}", stderr(&o));
}

#[test]
fn nonpositive_step_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    for h in ["0", "-0.01"] {
        let o = patchflow(
            &["solve", "--config", reference().to_str().unwrap(), "--engine", "lln", "--h", h],
            dir.path(),
        );
        assert_eq!(code(&o), 2, "h = {h}: {}", stderr(&o));
    }
}

#[test]
fn unknown_study_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = patchflow(&["validate", "nonsense", "--config", reference().to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2);
}

fn sorted_csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = reference();
    let mut runs = Vec::new();
    for threads in ["1", "8"] {
        let out = dir.path().join(format!("t{threads}"));
        let o = patchflow(
            &[
                "simulate", "--config", cfg.to_str().unwrap(), "--n", "2000", "--reps", "8", "--seed", "11",
                "--age-edges", "0.5,1,2,4", "--threads", threads, "--out", out.to_str().unwrap(),
            ],
            dir.path(),
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        runs.push(sorted_csvs(&out));
    }
    assert_eq!(runs[0].len(), 16);
    assert!(runs[0] == runs[1], "outputs differ between 1 and 8 threads");
}

#[test]
fn manifest_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let o = patchflow(
        &["simulate", "--config", reference().to_str().unwrap(), "--n", "1000", "--reps", "2", "--seed", "5",
          "--out", first.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest = fs::read_to_string(first.join("manifest.ndjson")).unwrap();
    let lines: Vec<serde_json::Value> = manifest.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    let run = &lines[0];
    assert_eq!(run["subcommand"], "simulate");
    assert_eq!(run["config_hash"].as_str().unwrap().len(), 64);

    let p = &run["params"];
    let second = dir.path().join("second");
    let o = patchflow(
        &[
            "simulate",
            "--config", run["config_path"].as_str().unwrap(),
            "--n", &p["n"].to_string(),
            "--reps", &p["reps"].to_string(),
            "--seed", &run["seed"].to_string(),
            "--output-dt", &p["output_dt"].to_string(),
            "--out", second.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(sorted_csvs(&first) == sorted_csvs(&second));
    let manifests = fs::read_dir(&second)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".ndjson"))
        .count();
    assert_eq!(manifests, 1);
}

#[test]
fn zero_contact_matrix_gives_zero_rate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("beta0.toml");
    fs::write(&cfg, with_beta(Some("beta = [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]"))).unwrap();
    let o = patchflow(&["solve", "--config", cfg.to_str().unwrap(), "--engine", "lln", "--h", "0.05"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut r = csv::Reader::from_path(dir.path().join("solve/lln/limit_timeseries.csv")).unwrap();
    let col = r.headers().unwrap().iter().position(|h| h == "Upsilon").unwrap();
    let mut rows = 0;
    for rec in r.records() {
        let v: f64 = rec.unwrap()[col].parse().unwrap();
        assert_eq!(v, 0.0);
        rows += 1;
    }
    assert_eq!(rows, 3 * 401);
}

#[test]
fn plotdata_shapes_and_schema_errors() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = reference();
    assert_eq!(code(&patchflow(&["simulate", "--config", cfg.to_str().unwrap(), "--n", "500"], root)), 0);
    let o = patchflow(&["solve", "--config", cfg.to_str().unwrap(), "--engine", "lln", "--h", "0.05"], root);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rep = root.join("simulate/rep_0000.csv");
    let surface = root.join("solve/lln/limit_surface.csv");

    let o = patchflow(&["plotdata", "--kind", "timeseries", rep.to_str().unwrap()], root);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(root.join("plotdata/timeseries.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("t,series,patch,value"));

    let o = patchflow(&["plotdata", "--kind", "heatmap", surface.to_str().unwrap()], root);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(root.join("plotdata/heatmap.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("t,a,patch,J"));

    let o = patchflow(
        &["plotdata", "--kind", "timeseries", rep.to_str().unwrap(), surface.to_str().unwrap()],
        root,
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn reduce_sir_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = patchflow(
        &["validate", "reduce-sir", "--config", configs().join("sir.toml").to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}{}", String::from_utf8_lossy(&o.stdout), stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("validate/reduce-sir/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["passed"], true);
    assert!(dir.path().join("validate/reduce-sir/report.csv").is_file());
}

#[test]
fn crosscheck_passes_on_reference() {
    let dir = tempfile::tempdir().unwrap();
    let o = patchflow(&["validate", "crosscheck", "--config", reference().to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0, "{}{}", String::from_utf8_lossy(&o.stdout), stderr(&o));
}

#[test]
fn failed_band_exits_one() {
    // A refinement demanding order 10 cannot pass.
    let dir = tempfile::tempdir().unwrap();
    let o = patchflow(
        &[
            "validate", "refine", "--config", reference().to_str().unwrap(), "--engine", "lln",
            "--h-list", "0.02,0.01,0.005", "--min-order", "10",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}
