//! Empirical convergence of the stochastic model to its deterministic limit.

use serde::Serialize;

use super::{Check, StudyReport};
use crate::error::{Error, Result};
use crate::limit::{solve_limit, steps_for, LimitOptions, LimitSolution};
use crate::model::ModelConfig;
use crate::sim::{run_batch, SimOptions, SimOutput};

#[derive(Debug, Clone, Serialize)]
pub struct FllnOptions {
    pub n_list: Vec<u64>,
    pub replications: u64,
    pub seed: u64,
    /// Step of the reference limit solution.
    pub h: f64,
    pub output_dt: f64,
    /// Spacing of the admissible probe ages.
    pub age_step: f64,
}

impl Default for FllnOptions {
    fn default() -> Self {
        Self {
            n_list: vec![1_000, 10_000, 100_000],
            replications: 200,
            seed: 2024,
            h: 1e-3,
            output_dt: 0.1,
            age_step: 0.25,
        }
    }
}

/// Per-patch values of one statistic for S, I, R and 𝔉.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ObservableErrors {
    pub s: Vec<f64>,
    pub i: Vec<f64>,
    pub r: Vec<f64>,
    pub f: Vec<f64>,
}

impl ObservableErrors {
    fn compartments(&self) -> [(&'static str, &Vec<f64>); 3] {
        [("S", &self.s), ("I", &self.i), ("R", &self.r)]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceEntry {
    pub n: u64,
    pub replications: u64,
    /// sup over the output grid of |mean of X^N/N − X̄|.
    pub error: ObservableErrors,
    /// max over the output grid of (sample sd of X^N/N)/√M.
    pub std_error: ObservableErrors,
    pub surface_error: Vec<f64>,
    pub surface_std_error: Vec<f64>,
    /// max over S, I, R and patches of `error`; the quantity whose slope is fitted.
    pub max_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedRecord {
    pub n: u64,
    pub master_seed: u64,
    pub first_replication: u64,
    pub count: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub options: FllnOptions,
    pub probe_t: f64,
    pub probe_a: f64,
    pub entries: Vec<ConvergenceEntry>,
    /// Least-squares slope of ln(max_error) against ln n (NaN for one n).
    pub slope: f64,
    pub slope_band: (f64, f64),
    pub note: &'static str,
    pub seeds: Vec<SeedRecord>,
}

const SLOPE_BAND: (f64, f64) = (-0.65, -0.35);

impl ConvergenceReport {
    pub fn checks(&self) -> Vec<Check> {
        let mut out = Vec::new();
        if self.entries.len() >= 2 {
            out.push(Check::within("slope", self.slope, SLOPE_BAND.0, SLOPE_BAND.1));
        }
        if let Some(last) = self.entries.last() {
            for ((name, err), (_, se)) in last.error.compartments().iter().zip(last.std_error.compartments()) {
                for p in 0..err.len() {
                    let bound = 5e-3 + 3.0 * se[p];
                    out.push(Check::below(format!("{name}[{p}] n={}", last.n), err[p], bound));
                }
            }
        }
        let surf: Vec<f64> = self
            .entries
            .iter()
            .map(|e| e.surface_error.iter().copied().fold(0.0, f64::max))
            .collect();
        let inversions = surf.windows(2).filter(|w| w[1] > w[0]).count();
        out.push(Check {
            name: "surface error inversions".into(),
            value: inversions as f64,
            band: "<= 1".into(),
            passed: inversions <= 1,
        });
        out
    }

    pub fn to_study(&self) -> StudyReport {
        StudyReport::new(
            "flln",
            self.checks(),
            serde_json::to_value(self).expect("report serializes"),
        )
    }
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return f64::NAN;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Running mean and variance per (time, patch) in replication order.
struct Moments {
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Self {
            sum: vec![0.0; len],
            sq: vec![0.0; len],
        }
    }

    fn add(&mut self, k: usize, x: f64) {
        self.sum[k] += x;
        self.sq[k] += x * x;
    }

    fn mean_sd(&self, k: usize, m: f64) -> (f64, f64) {
        let mean = self.sum[k] / m;
        let var = if m > 1.0 { ((self.sq[k] - m * mean * mean) / (m - 1.0)).max(0.0) } else { 0.0 };
        (mean, var.sqrt())
    }
}

/// Age at which the limit's total 𝔍̄(t, ·) reaches half of ΣĪ(t), rounded to
/// a positive multiple of `step`, and the limit surface there.
fn surface_probe(cfg: &ModelConfig, h: f64, t: f64, step: f64) -> Result<(f64, Vec<f64>)> {
    let mut head = cfg.clone();
    head.horizon = t;
    let steps = steps_for(t, h, "probe time")?;
    let sol = solve_limit(&head, &LimitOptions::new(h).with_surface(steps, 1))?;
    let surf = sol.surface.as_ref().expect("surface requested");
    let last = surf.times.len() - 1;
    let l = cfg.num_patches;
    let total_i: f64 = sol.i_at(steps).iter().sum();
    let mut median = *surf.ages.last().unwrap_or(&0.0);
    for (ai, &a) in surf.ages.iter().enumerate() {
        if surf.at(last, ai).iter().sum::<f64>() >= 0.5 * total_i {
            median = a;
            break;
        }
    }
    let probe = ((median / step).round() * step).max(step);
    let ai = ((probe / h).round() as usize).min(surf.ages.len() - 1);
    Ok((probe, surf.at(last, ai)[..l].to_vec()))
}

fn reference_value(sol: &LimitSolution, series: &[f64], t: f64, p: usize) -> f64 {
    series[sol.index_of(t) * sol.num_patches + p]
}

/// Runs `replications` simulations at each population size and measures the
/// distance of their mean to the limit solution at step `h`.
pub fn flln_study(cfg: &ModelConfig, opts: &FllnOptions) -> Result<ConvergenceReport> {
    if opts.n_list.is_empty() || opts.n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("n_list", "must be nonempty and increasing"));
    }
    if opts.replications == 0 {
        return Err(Error::invalid("replications", "must be at least 1"));
    }
    steps_for(opts.output_dt, opts.h, "output_dt")?;
    let limit = solve_limit(cfg, &LimitOptions::new(opts.h))?;
    let probe_t = (0.5 * cfg.horizon / opts.output_dt).round() * opts.output_dt;
    let (probe_a, surface_ref) = surface_probe(cfg, opts.h, probe_t, opts.age_step)?;
    let hist_every = ((probe_t / opts.output_dt).round() as usize).max(1);
    let sim_opts = SimOptions {
        output_dt: opts.output_dt,
        age_edges: vec![probe_a],
        hist_every,
        ..SimOptions::default()
    };

    let l = cfg.num_patches;
    let m = opts.replications;
    let mut entries = Vec::new();
    let mut seeds = Vec::new();
    for (ni, &n) in opts.n_list.iter().enumerate() {
        let first = ni as u64 * m;
        let outs = run_batch(cfg, n, opts.seed, first, m, &sim_opts)?;
        seeds.push(SeedRecord {
            n,
            master_seed: opts.seed,
            first_replication: first,
            count: m,
        });
        entries.push(summarize(&limit, &outs, n, probe_t, &surface_ref, l));
    }
    let xs: Vec<f64> = entries.iter().map(|e| (e.n as f64).ln()).collect();
    let ys: Vec<f64> = entries.iter().map(|e| e.max_error.ln()).collect();
    Ok(ConvergenceReport {
        options: opts.clone(),
        probe_t,
        probe_a,
        slope: slope(&xs, &ys),
        slope_band: SLOPE_BAND,
        note: "slope band is a CLT-scaling heuristic; the limit theorem itself only asserts convergence",
        entries,
        seeds,
    })
}

fn summarize(limit: &LimitSolution, outs: &[SimOutput], n: u64, probe_t: f64, surface_ref: &[f64], l: usize) -> ConvergenceEntry {
    let times = &outs[0].times;
    let len = times.len() * l;
    let mut mom: Vec<Moments> = (0..4).map(|_| Moments::new(len)).collect();
    let mut surf = Moments::new(l);
    let nf = n as f64;
    for o in outs {
        for (k, _) in times.iter().enumerate() {
            for p in 0..l {
                let idx = k * l + p;
                mom[0].add(idx, o.s[k][p] as f64 / nf);
                mom[1].add(idx, o.i[k][p] as f64 / nf);
                mom[2].add(idx, o.r[k][p] as f64 / nf);
                mom[3].add(idx, o.f[k][p] / nf);
            }
        }
        let hi = o
            .hist_times
            .iter()
            .position(|&t| (t - probe_t).abs() < 1e-9)
            .expect("probe time is a histogram time");
        for p in 0..l {
            surf.add(p, o.age_hist[hi][p][0] as f64 / nf);
        }
    }
    let mf = outs.len() as f64;
    let series = [&limit.s, &limit.i, &limit.r, &limit.f];
    let mut err = vec![vec![0.0; l]; 4];
    let mut se = vec![vec![0.0; l]; 4];
    for (q, mo) in mom.iter().enumerate() {
        for (k, &t) in times.iter().enumerate() {
            for p in 0..l {
                let (mean, sd) = mo.mean_sd(k * l + p, mf);
                err[q][p] = f64::max(err[q][p], (mean - reference_value(limit, series[q], t, p)).abs());
                se[q][p] = f64::max(se[q][p], sd / mf.sqrt());
            }
        }
    }
    let mut surface_error = vec![0.0; l];
    let mut surface_std_error = vec![0.0; l];
    for p in 0..l {
        let (mean, sd) = surf.mean_sd(p, mf);
        surface_error[p] = (mean - surface_ref[p]).abs();
        surface_std_error[p] = sd / mf.sqrt();
    }
    let max_error = err[..3].iter().flatten().copied().fold(0.0, f64::max);
    let pack = |v: &Vec<Vec<f64>>| ObservableErrors {
        s: v[0].clone(),
        i: v[1].clone(),
        r: v[2].clone(),
        f: v[3].clone(),
    };
    ConvergenceEntry {
        n,
        replications: outs.len() as u64,
        error: pack(&err),
        std_error: pack(&se),
        surface_error,
        surface_std_error,
        max_error,
    }
}
