use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use patchflow_core::io::{self, PlotKind, RunManifest};
use patchflow_core::limit::{solve_limit, steps_for, LimitOptions};
use patchflow_core::pde::{solve_boundary, AgeDensity};
use patchflow_core::sim::{run_batch, SimMode, SimOptions};
use patchflow_core::validation::{
    crosscheck, flln_study, reduce_q0, reduce_sir, refinement_study, CrosscheckOptions, Engine, FllnOptions,
    StudyReport,
};
use patchflow_core::ModelConfig;
use serde_json::json;

use crate::error::CliError;
use crate::{EngineArg, KindArg, PlotdataArgs, SimulateArgs, SolveArgs, Study, ValidateArgs};

type CmdResult = Result<bool, CliError>;

/// Replications held in memory at once before being written out.
const BATCH: u64 = 32;

pub fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    if threads == Some(0) {
        return Err(CliError::Usage("threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn output_root() -> PathBuf {
    std::env::var_os("PATCHFLOW_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("patchflow-out"))
}

fn out_dir(explicit: &Option<PathBuf>, default: &str) -> Result<PathBuf, CliError> {
    let dir = explicit.clone().unwrap_or_else(|| output_root().join(default));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn load(path: &Path) -> Result<(ModelConfig, String), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::config(path, e.into()))?;
    let cfg = ModelConfig::from_toml_str(&text).map_err(|e| CliError::config(path, e))?;
    Ok((cfg, io::config_hash(&text)))
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("`{name}` must be positive and finite, got {v}")))
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

struct ManifestBase<'a> {
    subcommand: &'a str,
    config: &'a Path,
    hash: String,
    seed: Option<u64>,
    threads: usize,
    started: Instant,
}

impl ManifestBase<'_> {
    fn finish(
        self,
        dir: &Path,
        params: serde_json::Value,
        outputs: &[PathBuf],
        records: &[serde_json::Value],
    ) -> Result<(), CliError> {
        let manifest = RunManifest {
            tool: "patchflow".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: self.subcommand.into(),
            config_path: self.config.display().to_string(),
            config_hash: self.hash,
            seed: self.seed,
            params,
            threads: self.threads,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            outputs: outputs.iter().map(|p| file_name(p)).collect(),
        };
        io::write_manifest(dir, &manifest, records)?;
        Ok(())
    }
}

pub fn simulate(args: &SimulateArgs, threads: usize) -> CmdResult {
    let started = Instant::now();
    let (cfg, hash) = load(&args.config)?;
    positive("output_dt", args.output_dt)?;
    if args.n == 0 || args.reps == 0 {
        return Err(CliError::Usage("`n` and `reps` must be at least 1".into()));
    }
    let mode = match args.approximate {
        Some(dt) => {
            positive("approximate", dt)?;
            log::warn!("tau-leaping with dt = {dt}: results are APPROXIMATE");
            SimMode::Approximate { dt }
        }
        None => SimMode::Exact,
    };
    let opts = SimOptions {
        output_dt: args.output_dt,
        age_edges: args.age_edges.clone(),
        hist_every: args.hist_every.max(1),
        keep_trace: false,
        mode,
    };
    let dir = out_dir(&args.out, "simulate")?;
    let mut outputs = Vec::new();
    let mut records = Vec::new();
    let mut first = 0;
    while first < args.reps {
        let count = BATCH.min(args.reps - first);
        let batch = run_batch(&cfg, args.n, args.seed, first, count, &opts)?;
        for out in &batch {
            let k = out.replication;
            let traj = dir.join(format!("rep_{k:04}.csv"));
            io::write_trajectory(&traj, out)?;
            let mut rec = json!({
                "replication": k,
                "stream": [args.seed, k],
                "trajectory": file_name(&traj),
                "stats": out.stats,
            });
            outputs.push(traj);
            if !opts.age_edges.is_empty() {
                let hist = dir.join(format!("age_hist_{k:04}.csv"));
                io::write_age_hist(&hist, out)?;
                rec["age_hist"] = json!(file_name(&hist));
                outputs.push(hist);
            }
            records.push(rec);
        }
        first += count;
    }
    let params = json!({
        "n": args.n,
        "reps": args.reps,
        "output_dt": args.output_dt,
        "age_edges": args.age_edges,
        "hist_every": opts.hist_every,
        "approximate": args.approximate,
    });
    ManifestBase { subcommand: "simulate", config: &args.config, hash, seed: Some(args.seed), threads, started }
        .finish(&dir, params, &outputs, &records)?;
    println!("wrote {} replication(s) to {}", args.reps, dir.display());
    Ok(true)
}

fn parse_probe(s: &str) -> Result<(f64, f64), CliError> {
    let bad = || CliError::Usage(format!("probe `{s}` is not of the form t:a"));
    let (t, a) = s.split_once(':').ok_or_else(bad)?;
    let t: f64 = t.trim().parse().map_err(|_| bad())?;
    let a: f64 = a.trim().parse().map_err(|_| bad())?;
    if !(t >= 0.0 && a >= 0.0) {
        return Err(bad());
    }
    Ok((t, a))
}

pub fn solve(args: &SolveArgs, threads: usize) -> CmdResult {
    let started = Instant::now();
    let (cfg, hash) = load(&args.config)?;
    positive("h", args.h)?;
    let engine = match args.engine {
        EngineArg::Lln => "lln",
        EngineArg::Pde => "pde",
    };
    let dir = out_dir(&args.out, &format!("solve/{engine}"))?;
    let mut outputs = Vec::new();
    let params;
    match args.engine {
        EngineArg::Lln => {
            let mut opts = LimitOptions::new(args.h);
            if args.surface_dt > 0.0 {
                let stride = steps_for(args.surface_dt, args.h, "surface_dt")?;
                opts = opts.with_surface(stride, stride);
            }
            let sol = solve_limit(&cfg, &opts)?;
            let ts = dir.join("limit_timeseries.csv");
            io::write_limit_timeseries(&ts, &sol)?;
            outputs.push(ts);
            if let Some(surface) = &sol.surface {
                let path = dir.join("limit_surface.csv");
                io::write_limit_surface(&path, surface)?;
                outputs.push(path);
            }
            params = json!({
                "engine": engine,
                "h": args.h,
                "surface_dt": args.surface_dt,
                "c_t": sol.c_t,
                "max_iterations": sol.max_iterations,
            });
        }
        EngineArg::Pde => {
            let probes = if args.probes.is_empty() {
                let t = cfg.horizon;
                [t / 4.0, t / 2.0, t]
                    .iter()
                    .flat_map(|&t| [0.0, 0.5, 1.0, 2.0, 4.0].map(|a| (t, a)))
                    .collect()
            } else {
                args.probes.iter().map(|s| parse_probe(s)).collect::<Result<Vec<_>, _>>()?
            };
            if let Some(&(t, _)) = probes.iter().find(|p| p.0 > cfg.horizon) {
                return Err(CliError::Usage(format!("probe time {t} is beyond the horizon {}", cfg.horizon)));
            }
            let bs = solve_boundary(&cfg, args.h)?;
            let max_iterations = bs.max_iterations;
            let path = dir.join("boundary.csv");
            io::write_boundary(&path, &bs)?;
            outputs.push(path);
            let density = AgeDensity::new(&cfg, bs)?;
            let path = dir.join("density_sample.csv");
            io::write_density_sample(&path, &density, &probes)?;
            outputs.push(path);
            params = json!({
                "engine": engine,
                "h": args.h,
                "probes": probes,
                "max_iterations": max_iterations,
            });
        }
    }
    ManifestBase { subcommand: "solve", config: &args.config, hash, seed: None, threads, started }
        .finish(&dir, params, &outputs, &[])?;
    println!("wrote {} file(s) to {}", outputs.len(), dir.display());
    Ok(true)
}

fn study_name(s: Study) -> &'static str {
    match s {
        Study::Flln => "flln",
        Study::Refine => "refine",
        Study::Crosscheck => "crosscheck",
        Study::ReduceQ0 => "reduce-q0",
        Study::ReduceSir => "reduce-sir",
    }
}

pub fn validate(args: &ValidateArgs, threads: usize) -> CmdResult {
    let started = Instant::now();
    let (cfg, hash) = load(&args.config)?;
    if let Some(h) = args.h {
        positive("h", h)?;
    }
    let name = study_name(args.study);
    let dir = out_dir(&args.out, &format!("validate/{name}"))?;
    let (report, params, seed): (StudyReport, serde_json::Value, Option<u64>) = match args.study {
        Study::Flln => {
            let mut opts = FllnOptions::default();
            if !args.n_list.is_empty() {
                opts.n_list = args.n_list.clone();
            }
            if let Some(m) = args.reps {
                opts.replications = m;
            }
            if let Some(s) = args.seed {
                opts.seed = s;
            }
            if let Some(h) = args.h {
                opts.h = h;
            }
            let rep = flln_study(&cfg, &opts)?;
            (rep.to_study(), json!({ "options": opts }), Some(opts.seed))
        }
        Study::Refine => {
            let h_list = if args.h_list.is_empty() { vec![4e-3, 2e-3, 1e-3] } else { args.h_list.clone() };
            for &h in &h_list {
                positive("h_list", h)?;
            }
            let engines = match args.engine {
                Some(EngineArg::Lln) => vec![Engine::Lln],
                Some(EngineArg::Pde) => vec![Engine::Pde],
                None => vec![Engine::Lln, Engine::Pde],
            };
            let mut checks = Vec::new();
            let mut details = Vec::new();
            for e in engines {
                let rep = refinement_study(&cfg, &h_list, e)?;
                checks.extend(rep.checks(args.min_order));
                details.push(rep);
            }
            let details = json!({ "min_order": args.min_order, "engines": details });
            (
                StudyReport::new("refine", checks, details),
                json!({ "h_list": h_list, "min_order": args.min_order, "engine": args.engine.map(|e| format!("{e:?}").to_lowercase()) }),
                None,
            )
        }
        Study::Crosscheck => {
            let mut opts = CrosscheckOptions::default();
            if let Some(h) = args.h {
                opts.h = h;
            }
            if let Some(p) = args.probes {
                opts.probes = p;
            }
            if let Some(s) = args.seed {
                opts.seed = s;
            }
            let rep = crosscheck(&cfg, &opts)?;
            (rep, json!({ "options": opts }), Some(opts.seed))
        }
        Study::ReduceQ0 => {
            let h = args.h.unwrap_or(0.01);
            let probes = args.probes.unwrap_or(200);
            let seed = args.seed.unwrap_or(3);
            let rep = reduce_q0(&cfg, h, probes, seed)?;
            (rep, json!({ "h": h, "probes": probes }), Some(seed))
        }
        Study::ReduceSir => {
            let h = args.h.unwrap_or(1e-3);
            (reduce_sir(&cfg, h)?, json!({ "h": h }), None)
        }
    };
    let outputs = io::write_report(&dir, &report)?;
    let params = json!({ "study": name, "settings": params });
    ManifestBase { subcommand: "validate", config: &args.config, hash, seed, threads, started }
        .finish(&dir, params, &outputs, &[])?;
    for c in &report.checks {
        println!("{} {}: {:e} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.band);
    }
    println!("{name}: {}", if report.passed { "PASS" } else { "FAIL" });
    Ok(report.passed)
}

pub fn plotdata(args: &PlotdataArgs, threads: usize) -> CmdResult {
    let started = Instant::now();
    let (kind, name) = match args.kind {
        KindArg::Timeseries => (PlotKind::Timeseries, "timeseries"),
        KindArg::AgeDensity => (PlotKind::AgeDensity, "age-density"),
        KindArg::Heatmap => (PlotKind::Heatmap, "heatmap"),
    };
    for p in &args.inputs {
        if !p.is_file() {
            return Err(CliError::Usage(format!("input {} does not exist", p.display())));
        }
    }
    let out = match &args.out {
        Some(p) => p.clone(),
        None => out_dir(&None, "plotdata")?.join(format!("{name}.csv")),
    };
    let dir = out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
    fs::create_dir_all(&dir)?;
    io::plotdata(&args.inputs, kind, &out)?;
    let params = json!({
        "kind": name,
        "inputs": args.inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    });
    let hashes: Vec<serde_json::Value> = args
        .inputs
        .iter()
        .map(|p| -> Result<_, CliError> {
            let text = fs::read_to_string(p)?;
            Ok(json!({ "input": p.display().to_string(), "hash": io::config_hash(&text) }))
        })
        .collect::<Result<_, _>>()?;
    ManifestBase { subcommand: "plotdata", config: Path::new(""), hash: String::new(), seed: None, threads, started }
        .finish(&dir, params, &[out.clone()], &hashes)?;
    println!("wrote {}", out.display());
    Ok(true)
}
