use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};

use super::state::{age_histogram, aggregate_infectivity, intensity_from_infectivity, Individual, PopulationState};
use crate::error::{Error, Result};
use crate::migration::{sample_exp, sample_jump_target, sample_path, Generator};
use crate::model::{InfectivityLaw, ModelConfig};
use crate::rng::{stream, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimMode {
    /// Exact event-driven simulation with thinning.
    Exact,
    /// Fixed-step tau-leaping for infections and S/R migration. APPROXIMATE:
    /// infected paths and recoveries remain exact, but the infection and
    /// S/R migration counts are only correct to O(dt).
    Approximate { dt: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    /// Spacing of the recorded time grid.
    pub output_dt: f64,
    /// Upper edges of the cumulative age bins (empty: no histograms).
    pub age_edges: Vec<f64>,
    /// Record age histograms at every `hist_every`-th grid time.
    pub hist_every: usize,
    /// Retain the full roster and infected event log (needed by
    /// [`representation_check`](super::representation_check)).
    pub keep_trace: bool,
    pub mode: SimMode,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            output_dt: 0.1,
            age_edges: Vec::new(),
            hist_every: 1,
            keep_trace: false,
            mode: SimMode::Exact,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct SimStats {
    pub proposals: u64,
    pub infections: u64,
    pub recoveries: u64,
    pub infected_jumps: u64,
    pub susceptible_jumps: u64,
    pub recovered_jumps: u64,
    /// Number of times S + I + R = n was verified (once per event).
    pub conservation_checks: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogEvent {
    Recovery { t: f64, ind: usize, patch: usize },
    Jump { t: f64, ind: usize, from: usize, to: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub horizon: f64,
    pub roster: Vec<Individual>,
    pub events: Vec<LogEvent>,
}

/// One replication's recorded trajectory. Series are indexed `[time][patch]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub n: u64,
    pub master_seed: u64,
    pub replication: u64,
    pub approximate: bool,
    pub times: Vec<f64>,
    pub s: Vec<Vec<u64>>,
    pub i: Vec<Vec<u64>>,
    pub r: Vec<Vec<u64>>,
    pub a: Vec<Vec<u64>>,
    pub f: Vec<Vec<f64>>,
    pub age_edges: Vec<f64>,
    pub hist_times: Vec<f64>,
    /// `[hist time][patch][edge]`, cumulative in the edge index.
    pub age_hist: Vec<Vec<Vec<u64>>>,
    pub stats: SimStats,
    pub trace: Option<SimTrace>,
}

impl SimOutput {
    pub fn num_patches(&self) -> usize {
        self.s.first().map_or(0, |v| v.len())
    }
}

/// Splits `n` over the compartments (s0, i0, r0) by largest remainder.
/// Returns `(s, i, r)` counts.
pub fn initial_counts(cfg: &ModelConfig, n: u64) -> Result<(Vec<u64>, Vec<u64>, Vec<u64>)> {
    let l = cfg.num_patches;
    let ic = &cfg.initial;
    let fractions: Vec<f64> = ic.s0.iter().chain(ic.i0().iter()).chain(ic.r0.iter()).copied().collect();
    let nonzero = fractions.iter().filter(|&&x| x > 0.0).count() as u64;
    if n < nonzero {
        return Err(Error::invalid(
            "n",
            format!("population {n} is smaller than the {nonzero} nonzero initial compartments"),
        ));
    }
    let total: f64 = fractions.iter().sum();
    let exact: Vec<f64> = fractions.iter().map(|x| x / total * n as f64).collect();
    let mut counts: Vec<u64> = exact.iter().map(|x| x.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..exact.len()).collect();
    // Stable sort: ties go to the lower compartment index.
    order.sort_by(|&x, &y| {
        let rx = exact[x] - exact[x].floor();
        let ry = exact[y] - exact[y].floor();
        ry.total_cmp(&rx)
    });
    for &k in order.iter().take((n - assigned) as usize) {
        counts[k] += 1;
    }
    Ok((counts[..l].to_vec(), counts[l..2 * l].to_vec(), counts[2 * l..].to_vec()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scheduled {
    Jump,
    Recovery,
}

#[derive(Debug, Clone, Copy)]
struct QueueEntry {
    t: f64,
    seq: u64,
    ind: usize,
    kind: Scheduled,
}

impl PartialEq for QueueEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for QueueEntry {}
impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueueEntry {
    // Reversed so that BinaryHeap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other.t.total_cmp(&self.t).then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Recorder {
    grid: Vec<f64>,
    next: usize,
    age_edges: Vec<f64>,
    hist_every: usize,
    out: SimOutput,
}

impl Recorder {
    /// Records every grid time strictly before `until` (the state is constant there).
    fn record_before(&mut self, state: &PopulationState, law: &InfectivityLaw, until: f64) {
        while self.next < self.grid.len() && self.grid[self.next] < until {
            self.record(state, law);
        }
    }

    fn record_through(&mut self, state: &PopulationState, law: &InfectivityLaw, until: f64) {
        while self.next < self.grid.len() && self.grid[self.next] <= until {
            self.record(state, law);
        }
    }

    fn record(&mut self, state: &PopulationState, law: &InfectivityLaw) {
        let g = self.grid[self.next];
        let o = &mut self.out;
        o.times.push(g);
        o.s.push(state.s.clone());
        o.i.push(state.i.clone());
        o.r.push(state.r.clone());
        o.a.push(state.a.clone());
        o.f.push(aggregate_infectivity(state, law, g));
        if !self.age_edges.is_empty() && self.next % self.hist_every == 0 {
            o.hist_times.push(g);
            o.age_hist.push(age_histogram(state, g, &self.age_edges));
        }
        self.next += 1;
    }
}

fn output_grid(horizon: f64, dt: f64) -> Vec<f64> {
    let k = (horizon / dt - 1e-9).ceil().max(1.0) as usize;
    let mut g: Vec<f64> = (0..k).map(|j| j as f64 * dt).collect();
    g.push(horizon);
    g
}

fn pick_weighted<R: Rng + ?Sized>(weights: &[f64], total: f64, rng: &mut R) -> usize {
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        last = k;
        if u < w {
            return k;
        }
        u -= w;
    }
    last
}

struct Engine<'a> {
    cfg: &'a ModelConfig,
    gen_s: Generator,
    gen_i: Generator,
    gen_r: Generator,
    horizon: f64,
    state: PopulationState,
    queue: BinaryHeap<QueueEntry>,
    next_jump: Vec<usize>,
    seq: u64,
    stats: SimStats,
    log: Option<Vec<LogEvent>>,
}

impl<'a> Engine<'a> {
    fn schedule(&mut self, ind: usize) {
        let rec = &self.state.roster[ind];
        let k = self.next_jump[ind];
        let entry = match rec.path.jumps.get(k) {
            Some(&(rel, _)) if rec.path_origin + rel < rec.recovery_time => Some((rec.path_origin + rel, Scheduled::Jump)),
            _ if rec.recovery_time <= self.horizon => Some((rec.recovery_time, Scheduled::Recovery)),
            _ => None,
        };
        if let Some((t, kind)) = entry {
            self.seq += 1;
            self.queue.push(QueueEntry { t, seq: self.seq, ind, kind });
        }
    }

    fn infect<R: Rng + ?Sized>(&mut self, t: f64, patch: usize, rng: &mut R) {
        let eta = self.cfg.duration.sample(rng);
        let xi = self.cfg.infectivity.scaler.sample(rng);
        let path = sample_path(&self.gen_i, patch, eta.min(self.horizon - t), rng);
        let ind = Individual {
            infection_time: t,
            xi,
            eta,
            path_origin: t,
            path,
            origin_patch: patch,
            initial: false,
            recovery_time: t + eta,
        };
        self.state.s[patch] -= 1;
        self.state.a[patch] += 1;
        let idx = self.state.admit(ind, patch);
        self.next_jump.push(0);
        self.stats.infections += 1;
        self.schedule(idx);
    }

    fn process_scheduled(&mut self, e: QueueEntry) {
        let ind = e.ind;
        match e.kind {
            Scheduled::Jump => {
                let rec = &self.state.roster[ind];
                let to = rec.path.jumps[self.next_jump[ind]].1;
                let from = self.state.current_patch[ind];
                self.state.i[from] -= 1;
                self.state.i[to] += 1;
                self.state.current_patch[ind] = to;
                self.next_jump[ind] += 1;
                self.stats.infected_jumps += 1;
                if let Some(log) = &mut self.log {
                    log.push(LogEvent::Jump { t: e.t, ind, from, to });
                }
                self.schedule(ind);
            }
            Scheduled::Recovery => {
                let patch = self.state.current_patch[ind];
                self.state.retire(ind);
                self.state.r[patch] += 1;
                self.stats.recoveries += 1;
                if let Some(log) = &mut self.log {
                    log.push(LogEvent::Recovery { t: e.t, ind, patch });
                }
            }
        }
    }

    fn check_conservation(&mut self, t: f64) -> Result<()> {
        self.stats.conservation_checks += 1;
        let total = self.state.total();
        if total != self.state.n || self.state.i.iter().sum::<u64>() != self.state.num_active() as u64 {
            return Err(Error::Conservation { t, total, n: self.state.n });
        }
        Ok(())
    }

    fn migrate_compartment<R: Rng + ?Sized>(&mut self, recovered: bool, rng: &mut R) {
        let (gen, counts) = if recovered {
            (&self.gen_r, &mut self.state.r)
        } else {
            (&self.gen_s, &mut self.state.s)
        };
        let w: Vec<f64> = (0..counts.len()).map(|l| counts[l] as f64 * gen.exit_rate(l)).collect();
        let total: f64 = w.iter().sum();
        let from = pick_weighted(&w, total, rng);
        let to = sample_jump_target(gen, from, rng);
        counts[from] -= 1;
        counts[to] += 1;
        if recovered {
            self.stats.recovered_jumps += 1;
        } else {
            self.stats.susceptible_jumps += 1;
        }
    }
}

/// Simulates one replication on `[0, T]` using random stream
/// `(master_seed, replication)`.
pub fn run_replication(cfg: &ModelConfig, n: u64, master_seed: u64, replication: u64, opts: &SimOptions) -> Result<SimOutput> {
    if !(cfg.horizon > 0.0) {
        return Err(Error::config("horizon", "must be positive"));
    }
    if !(opts.output_dt > 0.0) {
        return Err(Error::invalid("output_dt", "must be positive"));
    }
    if opts.age_edges.windows(2).any(|w| w[1] <= w[0]) || opts.age_edges.first().is_some_and(|&e| e < 0.0) {
        return Err(Error::invalid("age_edges", "must be nonnegative and strictly increasing"));
    }
    let mut rng = stream(master_seed, replication);
    let (s0, i0, r0) = initial_counts(cfg, n)?;
    let l = cfg.num_patches;
    let mut engine = Engine {
        cfg,
        gen_s: Generator::new(cfg.nu_s.clone())?,
        gen_i: Generator::new(cfg.nu_i.clone())?,
        gen_r: Generator::new(cfg.nu_r.clone())?,
        horizon: cfg.horizon,
        state: PopulationState::new(n, s0, r0),
        queue: BinaryHeap::new(),
        next_jump: Vec::new(),
        seq: 0,
        stats: SimStats::default(),
        log: opts.keep_trace.then(Vec::new),
    };

    // Initial cohort: age from the normalized profile, then the residual
    // period conditioned on still being infected at time 0.
    let support = cfg.initial.age_support;
    for patch in 0..l {
        let profile = cfg.initial.i0_profile[patch];
        for _ in 0..i0[patch] {
            let age = profile.sample_age(support, &mut rng);
            let residual = cfg.duration.sample_residual(age, &mut rng)?;
            let xi = cfg.infectivity.scaler.sample(&mut rng);
            let path = sample_path(&engine.gen_i, patch, residual.min(cfg.horizon), &mut rng);
            let ind = Individual {
                infection_time: -age,
                xi,
                eta: age + residual,
                path_origin: 0.0,
                path,
                origin_patch: patch,
                initial: true,
                recovery_time: residual,
            };
            let idx = engine.state.admit(ind, patch);
            engine.next_jump.push(0);
            engine.schedule(idx);
        }
    }
    engine.check_conservation(0.0)?;

    let mut rec = Recorder {
        grid: output_grid(cfg.horizon, opts.output_dt),
        next: 0,
        age_edges: opts.age_edges.clone(),
        hist_every: opts.hist_every.max(1),
        out: SimOutput {
            n,
            master_seed,
            replication,
            approximate: matches!(opts.mode, SimMode::Approximate { .. }),
            times: Vec::new(),
            s: Vec::new(),
            i: Vec::new(),
            r: Vec::new(),
            a: Vec::new(),
            f: Vec::new(),
            age_edges: opts.age_edges.clone(),
            hist_times: Vec::new(),
            age_hist: Vec::new(),
            stats: SimStats::default(),
            trace: None,
        },
    };

    match opts.mode {
        SimMode::Exact => run_exact(&mut engine, &mut rec, &mut rng)?,
        SimMode::Approximate { dt } => {
            if !(dt > 0.0) {
                return Err(Error::invalid("dt", "approximate step must be positive"));
            }
            run_tau_leap(&mut engine, &mut rec, &mut rng, dt)?
        }
    }

    let mut out = rec.out;
    out.stats = engine.stats;
    if let Some(events) = engine.log {
        out.trace = Some(SimTrace {
            horizon: cfg.horizon,
            roster: engine.state.roster,
            events,
        });
    }
    Ok(out)
}

fn run_exact(engine: &mut Engine<'_>, rec: &mut Recorder, rng: &mut StreamRng) -> Result<()> {
    let cfg = engine.cfg;
    let l = cfg.num_patches;
    let law = cfg.infectivity;
    let lambda_star = cfg.lambda_star();
    let n = engine.state.n as f64;
    let bmax: Vec<f64> = (0..l)
        .map(|p| (0..l).map(|m| cfg.beta[(p, m)]).fold(0.0, f64::max))
        .collect();
    let horizon = cfg.horizon;
    let mut w = vec![0.0; l];
    let mut t = 0.0;

    loop {
        // Dominating infection rate. Each active infected j contributes
        // S_ℓ B_ℓ^{-γ} N^{γ-1} β_{ℓ,X_j} λ_j ≤ (S_ℓ/N)^{1-γ} bmax_ℓ λ*, since B_ℓ ≥ S_ℓ.
        let st = &engine.state;
        let active = st.num_active() as f64;
        for p in 0..l {
            w[p] = if st.s[p] == 0 { 0.0 } else { bmax[p] * (st.s[p] as f64 / n).powf(1.0 - cfg.gamma) };
        }
        let wsum: f64 = w.iter().sum();
        let rate_inf = lambda_star * active * wsum;
        let rate_s: f64 = (0..l).map(|p| st.s[p] as f64 * engine.gen_s.exit_rate(p)).sum();
        let rate_r: f64 = (0..l).map(|p| st.r[p] as f64 * engine.gen_r.exit_rate(p)).sum();
        let total = rate_inf + rate_s + rate_r;
        let t_clock = t + sample_exp(total, rng);
        let t_queue = engine.queue.peek().map_or(f64::INFINITY, |e| e.t);

        if t_queue <= t_clock && t_queue <= horizon {
            rec.record_before(&engine.state, &law, t_queue);
            let e = engine.queue.pop().expect("peeked");
            t = e.t;
            engine.process_scheduled(e);
            engine.check_conservation(t)?;
            continue;
        }
        if t_clock > horizon {
            break;
        }
        rec.record_before(&engine.state, &law, t_clock);
        t = t_clock;
        let u = rng.random::<f64>() * total;
        if u < rate_inf {
            engine.stats.proposals += 1;
            let patch = pick_weighted(&w, wsum, rng);
            let st = &engine.state;
            let j = st.active()[rng.random_range(0..st.num_active())];
            let src = st.current_patch[j];
            let lam = st.roster[j].infectivity(&law, t);
            let s = st.s[patch] as f64;
            let b = st.patch_population(patch) as f64;
            let p_accept = (lam / lambda_star) * (cfg.beta[(patch, src)] / bmax[patch]) * (s / b).powf(cfg.gamma);
            debug_assert!((0.0..=1.0 + 1e-12).contains(&p_accept), "acceptance {p_accept}");
            if rng.random::<f64>() < p_accept {
                engine.infect(t, patch, rng);
            }
        } else if u < rate_inf + rate_s {
            engine.migrate_compartment(false, rng);
        } else {
            engine.migrate_compartment(true, rng);
        }
        engine.check_conservation(t)?;
    }
    engine.state.t = horizon;
    rec.record_through(&engine.state, &law, horizon);
    Ok(())
}

/// Tabulated λ̃ with linear interpolation (step 1e-3), used only by the
/// approximate integrator.
struct ProfileTable {
    step: f64,
    values: Vec<f64>,
}

impl ProfileTable {
    fn new(law: &InfectivityLaw, max_age: f64) -> Self {
        let step = 1e-3;
        let k = (max_age / step).ceil() as usize + 2;
        Self {
            step,
            values: (0..=k).map(|j| law.profile.value(j as f64 * step)).collect(),
        }
    }

    fn value(&self, age: f64) -> f64 {
        let x = age / self.step;
        let j = (x.floor() as usize).min(self.values.len() - 2);
        let w = x - j as f64;
        self.values[j] * (1.0 - w) + self.values[j + 1] * w
    }
}

fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial").sample(rng)
}

fn leap_compartment<R: Rng + ?Sized>(counts: &mut [u64], gen: &Generator, dt: f64, rng: &mut R) -> u64 {
    let l = counts.len();
    let mut delta = vec![0i64; l];
    let mut moved = 0;
    for from in 0..l {
        let exit = gen.exit_rate(from);
        let leaving = binomial(counts[from], -(-exit * dt).exp_m1(), rng);
        let mut remaining = leaving;
        let mut mass = exit;
        for to in 0..l {
            if to == from || remaining == 0 {
                continue;
            }
            let rate = gen.matrix()[(from, to)];
            let k = binomial(remaining, (rate / mass).min(1.0), rng);
            delta[to] += k as i64;
            remaining -= k;
            mass -= rate;
        }
        delta[from] -= (leaving - remaining) as i64;
        moved += leaving - remaining;
    }
    for p in 0..l {
        counts[p] = (counts[p] as i64 + delta[p]) as u64;
    }
    moved
}

fn run_tau_leap(engine: &mut Engine<'_>, rec: &mut Recorder, rng: &mut StreamRng, dt: f64) -> Result<()> {
    let cfg = engine.cfg;
    let l = cfg.num_patches;
    let law = cfg.infectivity;
    let horizon = cfg.horizon;
    let table = ProfileTable::new(&law, cfg.initial.age_support + horizon);
    rec.record_through(&engine.state, &law, 0.0);
    let mut t = 0.0;
    while t < horizon {
        let t_next = (t + dt).min(horizon);
        let h = t_next - t;
        let st = &engine.state;
        let mut f = vec![0.0; l];
        for &j in st.active() {
            let ind = &st.roster[j];
            if t < ind.recovery_time {
                f[st.current_patch[j]] += ind.xi * table.value(ind.age(t));
            }
        }
        let ups = intensity_from_infectivity(st, cfg, &f);
        let mut new_infections = Vec::new();
        for p in 0..l {
            let k = if ups[p] > 0.0 {
                (Poisson::new(ups[p] * h).expect("positive mean").sample(rng) as u64).min(engine.state.s[p])
            } else {
                0
            };
            for _ in 0..k {
                new_infections.push((t + h * rng.random::<f64>(), p));
            }
        }
        new_infections.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (ti, p) in new_infections {
            engine.infect(ti, p, rng);
        }
        engine.stats.susceptible_jumps += leap_compartment(&mut engine.state.s, &engine.gen_s, h, rng);
        engine.stats.recovered_jumps += leap_compartment(&mut engine.state.r, &engine.gen_r, h, rng);
        while engine.queue.peek().is_some_and(|e| e.t <= t_next) {
            let e = engine.queue.pop().expect("peeked");
            engine.process_scheduled(e);
        }
        engine.check_conservation(t_next)?;
        rec.record_through(&engine.state, &law, t_next);
        t = t_next;
    }
    Ok(())
}
