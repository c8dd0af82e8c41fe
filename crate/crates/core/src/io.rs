//! CSV outputs, run manifests and plot-data reshaping.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so files
//! are locale-independent and byte-identical for identical results.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::limit::{LimitSolution, Surface};
use crate::pde::{AgeDensity, BoundarySolution};
use crate::sim::SimOutput;
use crate::validation::StudyReport;

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Schema(format!("{other:?}")),
    }
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn row<W: Write>(w: &mut csv::Writer<W>, fields: &[String]) -> Result<()> {
    w.write_record(fields).map_err(csv_err)
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush()?;
    Ok(())
}

/// SHA-256 of the config text after normalizing line endings to `\n`.
pub fn config_hash(text: &str) -> String {
    let normalized = text.replace("\r\n", "\n").replace('\r', "\n");
    let digest = Sha256::digest(normalized.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub const TRAJECTORY_HEADER: [&str; 7] = ["t", "patch", "S", "I", "R", "A", "F_aggregate"];
pub const AGE_HIST_HEADER: [&str; 4] = ["t", "patch", "age_bin_upper", "count"];
pub const LIMIT_TIMESERIES_HEADER: [&str; 8] = ["t", "patch", "S", "I", "R", "F", "Upsilon", "B"];
pub const LIMIT_SURFACE_HEADER: [&str; 4] = ["t", "a", "patch", "J"];
pub const BOUNDARY_HEADER: [&str; 6] = ["t", "patch", "i0", "S", "I", "R"];
pub const DENSITY_SAMPLE_HEADER: [&str; 4] = ["t", "a", "patch", "i"];

fn header<W: Write>(w: &mut csv::Writer<W>, h: &[&str]) -> Result<()> {
    w.write_record(h).map_err(csv_err)
}

pub fn write_trajectory(path: &Path, out: &SimOutput) -> Result<()> {
    let mut w = writer(path)?;
    header(&mut w, &TRAJECTORY_HEADER)?;
    for (k, t) in out.times.iter().enumerate() {
        for p in 0..out.num_patches() {
            row(
                &mut w,
                &[
                    t.to_string(),
                    p.to_string(),
                    out.s[k][p].to_string(),
                    out.i[k][p].to_string(),
                    out.r[k][p].to_string(),
                    out.a[k][p].to_string(),
                    out.f[k][p].to_string(),
                ],
            )?;
        }
    }
    finish(w)
}

pub fn write_age_hist(path: &Path, out: &SimOutput) -> Result<()> {
    let mut w = writer(path)?;
    header(&mut w, &AGE_HIST_HEADER)?;
    for (k, t) in out.hist_times.iter().enumerate() {
        for (p, counts) in out.age_hist[k].iter().enumerate() {
            for (edge, c) in out.age_edges.iter().zip(counts) {
                row(&mut w, &[t.to_string(), p.to_string(), edge.to_string(), c.to_string()])?;
            }
        }
    }
    finish(w)
}

pub fn write_limit_timeseries(path: &Path, sol: &LimitSolution) -> Result<()> {
    let mut w = writer(path)?;
    header(&mut w, &LIMIT_TIMESERIES_HEADER)?;
    for (m, t) in sol.times.iter().enumerate() {
        for p in 0..sol.num_patches {
            row(
                &mut w,
                &[
                    t.to_string(),
                    p.to_string(),
                    sol.s_at(m)[p].to_string(),
                    sol.i_at(m)[p].to_string(),
                    sol.r_at(m)[p].to_string(),
                    sol.f_at(m)[p].to_string(),
                    sol.upsilon_at(m)[p].to_string(),
                    sol.b_at(m)[p].to_string(),
                ],
            )?;
        }
    }
    finish(w)
}

pub fn write_limit_surface(path: &Path, surface: &Surface) -> Result<()> {
    let mut w = writer(path)?;
    header(&mut w, &LIMIT_SURFACE_HEADER)?;
    for (ti, t) in surface.times.iter().enumerate() {
        for (ai, a) in surface.ages.iter().enumerate() {
            for (p, v) in surface.at(ti, ai).iter().enumerate() {
                row(&mut w, &[t.to_string(), a.to_string(), p.to_string(), v.to_string()])?;
            }
        }
    }
    finish(w)
}

pub fn write_boundary(path: &Path, bs: &BoundarySolution) -> Result<()> {
    let mut w = writer(path)?;
    header(&mut w, &BOUNDARY_HEADER)?;
    for (m, t) in bs.times.iter().enumerate() {
        for p in 0..bs.num_patches {
            row(
                &mut w,
                &[
                    t.to_string(),
                    p.to_string(),
                    bs.trace_at(m)[p].to_string(),
                    bs.s_at(m)[p].to_string(),
                    bs.i_at(m)[p].to_string(),
                    bs.r_at(m)[p].to_string(),
                ],
            )?;
        }
    }
    finish(w)
}

pub fn write_density_sample(path: &Path, density: &AgeDensity, probes: &[(f64, f64)]) -> Result<()> {
    let mut w = writer(path)?;
    header(&mut w, &DENSITY_SAMPLE_HEADER)?;
    for &(t, a) in probes {
        for (p, v) in density.eval_density(t, a).iter().enumerate() {
            row(&mut w, &[t.to_string(), a.to_string(), p.to_string(), v.to_string()])?;
        }
    }
    finish(w)
}

/// `report.json` (full payload) and `report.csv` (one row per check).
pub fn write_report(dir: &Path, report: &StudyReport) -> Result<Vec<PathBuf>> {
    let json_path = dir.join("report.json");
    let mut f = BufWriter::new(File::create(&json_path)?);
    serde_json::to_writer_pretty(&mut f, report).map_err(|e| Error::Schema(e.to_string()))?;
    f.write_all(b"\n")?;
    f.flush()?;
    let csv_path = dir.join("report.csv");
    let mut w = writer(&csv_path)?;
    header(&mut w, &["study", "check", "value", "band", "passed"])?;
    for c in &report.checks {
        row(
            &mut w,
            &[
                report.study.clone(),
                c.name.clone(),
                c.value.to_string(),
                c.band.clone(),
                c.passed.to_string(),
            ],
        )?;
    }
    finish(w)?;
    Ok(vec![json_path, csv_path])
}

/// First line of `manifest.ndjson`; per-item records follow on their own lines.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config_path: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    /// Grid and run parameters (n, reps, h, engine, study, ...).
    pub params: serde_json::Value,
    pub threads: usize,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<String>,
}

pub const MANIFEST_FILE: &str = "manifest.ndjson";

pub fn write_manifest(dir: &Path, manifest: &RunManifest, records: &[serde_json::Value]) -> Result<PathBuf> {
    let path = dir.join(MANIFEST_FILE);
    let mut f = BufWriter::new(File::create(&path)?);
    writeln!(f, "{}", json_line(manifest)?)?;
    for r in records {
        writeln!(f, "{}", json_line(r)?)?;
    }
    f.flush()?;
    Ok(path)
}

fn json_line<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::Schema(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Timeseries,
    AgeDensity,
    Heatmap,
}

impl std::str::FromStr for PlotKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "timeseries" => Ok(PlotKind::Timeseries),
            "age-density" => Ok(PlotKind::AgeDensity),
            "heatmap" => Ok(PlotKind::Heatmap),
            other => Err(Error::invalid("kind", format!("unknown plot kind `{other}`"))),
        }
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let rows = r.records().collect::<std::result::Result<Vec<_>, _>>().map_err(csv_err)?;
    Ok(Table { header, rows })
}

fn is(header: &[String], expected: &[&str]) -> bool {
    header.len() == expected.len() && header.iter().zip(expected).all(|(a, b)| a == b)
}

/// Reshapes one or more CSVs of a single schema into a long-format table:
/// `timeseries` → (t, series, patch, value); `age-density` → (t, a, patch,
/// value); `heatmap` → (t, a, patch, J). With several inputs a leading
/// `source` column holds each file's stem.
pub fn plotdata(inputs: &[PathBuf], kind: PlotKind, out: &Path) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::invalid("inputs", "at least one input file is required"));
    }
    let tables = inputs.iter().map(|p| read_table(p)).collect::<Result<Vec<_>>>()?;
    let first = &tables[0].header;
    for (t, p) in tables.iter().zip(inputs).skip(1) {
        if &t.header != first {
            return Err(Error::Schema(format!(
                "{} has columns [{}] but {} has [{}]",
                p.display(),
                t.header.join(","),
                inputs[0].display(),
                first.join(",")
            )));
        }
    }
    let accepted: &[&[&str]] = match kind {
        PlotKind::Timeseries => &[&TRAJECTORY_HEADER, &LIMIT_TIMESERIES_HEADER, &BOUNDARY_HEADER],
        PlotKind::AgeDensity => &[&DENSITY_SAMPLE_HEADER, &AGE_HIST_HEADER],
        PlotKind::Heatmap => &[&LIMIT_SURFACE_HEADER],
    };
    if !accepted.iter().any(|h| is(first, h)) {
        return Err(Error::Schema(format!(
            "columns [{}] are not a {kind:?} input",
            first.join(",")
        )));
    }
    let multi = inputs.len() > 1;
    let mut w = writer(out)?;
    let mut head: Vec<&str> = Vec::new();
    if multi {
        head.push("source");
    }
    match kind {
        PlotKind::Timeseries => head.extend(["t", "series", "patch", "value"]),
        PlotKind::AgeDensity => head.extend(["t", "a", "patch", "value"]),
        PlotKind::Heatmap => head.extend(["t", "a", "patch", "J"]),
    }
    header(&mut w, &head)?;
    for (table, path) in tables.iter().zip(inputs) {
        let source = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let prefix = |mut v: Vec<String>| {
            if multi {
                v.insert(0, source.clone());
            }
            v
        };
        for rec in &table.rows {
            let f = |i: usize| rec.get(i).unwrap_or("").to_string();
            match kind {
                PlotKind::Timeseries => {
                    for (ci, name) in table.header.iter().enumerate().skip(2) {
                        row(&mut w, &prefix(vec![f(0), name.clone(), f(1), f(ci)]))?;
                    }
                }
                PlotKind::AgeDensity if is(&table.header, &AGE_HIST_HEADER) => {
                    row(&mut w, &prefix(vec![f(0), f(2), f(1), f(3)]))?;
                }
                PlotKind::AgeDensity | PlotKind::Heatmap => {
                    row(&mut w, &prefix(vec![f(0), f(1), f(2), f(3)]))?;
                }
            }
        }
    }
    finish(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::limit::{solve_limit, LimitOptions};
    use crate::model::presets;
    use crate::sim::{run_replication, SimOptions};

    #[test]
    fn hash_ignores_line_endings() {
        let unix = "a = 1\nb = 2\n";
        assert_eq!(config_hash(unix), config_hash("a = 1\r\nb = 2\r\n"));
        assert_ne!(config_hash(unix), config_hash("a = 1\nb = 3\n"));
        assert_eq!(config_hash("").len(), 64);
    }

    #[test]
    fn trajectory_round_trips_through_plotdata() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = presets::reference();
        cfg.horizon = 1.0;
        let out = run_replication(&cfg, 500, 1, 0, &SimOptions::default()).unwrap();
        let traj = dir.path().join("rep_0.csv");
        write_trajectory(&traj, &out).unwrap();
        let long = dir.path().join("long.csv");
        plotdata(&[traj.clone()], PlotKind::Timeseries, &long).unwrap();
        let table = read_table(&long).unwrap();
        assert_eq!(table.header, ["t", "series", "patch", "value"]);
        // 5 series × 3 patches × 11 times.
        assert_eq!(table.rows.len(), 5 * 3 * out.times.len());
        assert!(plotdata(&[traj], PlotKind::Heatmap, &long).is_err());
    }

    #[test]
    fn mixed_schemas_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = presets::reference();
        let sol = solve_limit(&cfg, &LimitOptions::new(0.05).with_surface(20, 20)).unwrap();
        let ts = dir.path().join("limit_timeseries.csv");
        let surf = dir.path().join("limit_surface.csv");
        write_limit_timeseries(&ts, &sol).unwrap();
        write_limit_surface(&surf, sol.surface.as_ref().unwrap()).unwrap();
        let out = dir.path().join("x.csv");
        let err = plotdata(&[ts.clone(), surf.clone()], PlotKind::Timeseries, &out).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
        plotdata(&[surf], PlotKind::Heatmap, &out).unwrap();
        let table = read_table(&out).unwrap();
        assert_eq!(table.header, ["t", "a", "patch", "J"]);
    }

    #[test]
    fn report_files() {
        let dir = tempfile::tempdir().unwrap();
        let rep = StudyReport::new(
            "demo",
            vec![crate::validation::Check::below("x", 1.0, 2.0)],
            serde_json::json!({}),
        );
        let files = write_report(dir.path(), &rep).unwrap();
        let text = std::fs::read_to_string(&files[1]).unwrap();
        assert_eq!(text, "study,check,value,band,passed\ndemo,x,1,< 2e0,true\n");
    }
}
