//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails. Run with `--nocapture` to see the lines.

use nalgebra::DMatrix;
use patchflow_core::io::write_trajectory;
use patchflow_core::migration::{semigroup_check, Generator};
use patchflow_core::pde::{solve_boundary, AgeDensity};
use patchflow_core::presets;
use patchflow_core::rng::stream;
use patchflow_core::sim::{representation_check, run_batch, run_replication, SimOptions};
use patchflow_core::validation::{
    crosscheck, flln_study, reduce_q0, reduce_sir, refinement_study, CrosscheckOptions, Engine, FllnOptions,
    StudyReport,
};
use rand::Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn from_study(r: &StudyReport) -> Outcome {
    let detail = r
        .checks
        .iter()
        .map(|c| format!("{}={:.3e} ({})", c.name, c.value, c.band))
        .collect::<Vec<_>>()
        .join("; ");
    Outcome { passed: r.passed, detail }
}

fn conservation() -> Outcome {
    let cfg = presets::reference();
    let n = 10_000;
    let reps = 20;
    let outs = run_batch(&cfg, n, 1, 0, reps, &SimOptions::default()).expect("simulator enforces conservation");
    let mut checks = 0;
    let mut bad = 0;
    for o in &outs {
        checks += o.stats.conservation_checks;
        for k in 0..o.times.len() {
            let total: u64 = (0..3).map(|p| o.s[k][p] + o.i[k][p] + o.r[k][p]).sum();
            bad += u64::from(total != n);
        }
    }
    Outcome {
        passed: bad == 0 && checks > 0,
        detail: format!("{reps} replications, {checks} event-time checks, {bad} grid violations"),
    }
}

fn representation() -> Outcome {
    let mut cfg = presets::reference();
    cfg.horizon = 5.0;
    let opts = SimOptions { keep_trace: true, ..Default::default() };
    let out = run_replication(&cfg, 200, 2, 0, &opts).unwrap();
    let trace = out.trace.as_ref().unwrap();
    let mut rng = stream(17, 0);
    let mut worst = 0i64;
    for _ in 0..50 {
        let t = rng.random_range(0.0..cfg.horizon);
        let a = rng.random_range(0.0..cfg.initial.age_support + t);
        let r = representation_check(trace, cfg.num_patches, t, a);
        worst = worst.max(r.iter().map(|v| v.abs()).max().unwrap());
    }
    Outcome { passed: worst == 0, detail: format!("max |residual| = {worst} over 50 probes") }
}

fn pde_residual() -> Outcome {
    let cfg = presets::reference();
    let density = AgeDensity::new(&cfg, solve_boundary(&cfg, 0.01).unwrap()).unwrap();
    let kinks = [0.5, 2.0, 4.0];
    let mut rng = stream(23, 0);
    let mut worst = 0.0f64;
    let mut points = 0;
    while points < 200 {
        let t = rng.random_range(0.1..cfg.horizon - 0.1);
        let a = rng.random_range(0.01..24.0);
        // Smooth points: away from a = t, a = A0 + t and the profile kinks.
        let a0 = cfg.initial.age_support;
        if (t - a).abs() < 1e-3 || (a - t - a0).abs() < 1e-3 || kinks.iter().any(|k| (a - k).abs() < 1e-3) {
            continue;
        }
        let r = density.pde_residual(t, a, 1e-4);
        worst = worst.max(r.iter().fold(0.0, |m, v| m.max(v.abs())));
        points += 1;
    }
    Outcome { passed: worst < 1e-5, detail: format!("max |residual| = {worst:.3e} at 200 points (< 1e-5)") }
}

fn flln() -> Outcome {
    let rep = flln_study(&presets::reference(), &FllnOptions::default()).unwrap();
    let mut o = from_study(&rep.to_study());
    o.detail = format!("slope = {:.3}; {}", rep.slope, o.detail);
    o
}

fn refinement() -> Outcome {
    let cfg = presets::reference();
    let h = [4e-3, 2e-3, 1e-3];
    let mut passed = true;
    let mut detail = Vec::new();
    for e in [Engine::Lln, Engine::Pde] {
        let rep = refinement_study(&cfg, &h, e).unwrap();
        let p = rep.min_order();
        passed &= p >= 1.8;
        detail.push(format!("{e:?} min order {p:.3}"));
    }
    Outcome { passed, detail: format!("{} (>= 1.8)", detail.join(", ")) }
}

fn determinism() -> Outcome {
    let cfg = presets::reference();
    let dir = tempfile::tempdir().unwrap();
    let opts = SimOptions { age_edges: vec![1.0, 2.0, 4.0], ..Default::default() };
    let mut bytes = Vec::new();
    for threads in [1, 8] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let outs = pool.install(|| run_batch(&cfg, 5_000, 99, 0, 8, &opts)).unwrap();
        let mut all = Vec::new();
        for o in &outs {
            let path = dir.path().join(format!("t{threads}_{}.csv", o.replication));
            write_trajectory(&path, o).unwrap();
            all.extend(std::fs::read(&path).unwrap());
        }
        bytes.push(all);
    }
    Outcome {
        passed: bytes[0] == bytes[1],
        detail: format!("8 replications, {} bytes compared", bytes[0].len()),
    }
}

fn chapman_kolmogorov() -> Outcome {
    let mut rng = stream(31, 0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=6);
        let scale = rng.random_range(0.01..10.0);
        let rates = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { scale * rng.random::<f64>() });
        let gen = Generator::from_rates(&rates).unwrap();
        let t = rng.random_range(0.0..5.0);
        let s = rng.random_range(0.0..5.0);
        worst = worst.max(semigroup_check(&gen, t, s));
    }
    Outcome { passed: worst < 1e-10, detail: format!("max gap {worst:.3e} over 100 generators (< 1e-10)") }
}

#[test]
fn acceptance_criteria() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        ("conservation", conservation),
        ("representation identity", representation),
        ("SIR reduction", || from_study(&reduce_sir(&presets::sir(), 1e-3).unwrap())),
        ("cross-engine equivalence", || {
            from_study(&crosscheck(&presets::reference(), &CrosscheckOptions::default()).unwrap())
        }),
        ("PDE residual", pde_residual),
        ("homogeneous reduction", || from_study(&reduce_q0(&presets::reference(), 0.01, 200, 3).unwrap())),
        ("FLLN convergence", flln),
        ("grid refinement", refinement),
        ("determinism", determinism),
        ("Chapman-Kolmogorov", chapman_kolmogorov),
    ];
    let mut failed = Vec::new();
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = std::time::Instant::now();
        let o = run();
        let status = if o.passed { "PASS" } else { "FAIL" };
        println!("[{status}] {:>2}. {name}: {} ({:.1}s)", k + 1, o.detail, start.elapsed().as_secs_f64());
        if !o.passed {
            failed.push(k + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
