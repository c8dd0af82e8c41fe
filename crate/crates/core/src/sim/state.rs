use crate::migration::MigrationPath;
use crate::model::{InfectivityLaw, ModelConfig};

/// Record of one infected individual (current or past).
#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    /// τ; for the initial cohort this is −ã (age ã at time 0).
    pub infection_time: f64,
    pub xi: f64,
    /// Total infectious period η measured from infection.
    pub eta: f64,
    /// Calendar time at which the migration path starts (max(τ, 0)).
    pub path_origin: f64,
    /// Path with times relative to `path_origin`, truncated at recovery or the horizon.
    pub path: MigrationPath,
    pub origin_patch: usize,
    pub initial: bool,
    /// Calendar time of recovery, τ + η (stored to avoid re-rounding).
    pub recovery_time: f64,
}

impl Individual {
    pub fn age(&self, t: f64) -> f64 {
        t - self.infection_time
    }

    pub fn is_active(&self, t: f64) -> bool {
        self.infection_time <= t && t < self.recovery_time
    }

    pub fn patch_at(&self, t: f64) -> usize {
        self.path.patch_at(t - self.path_origin)
    }

    /// λ_j(t − τ_j) = ξ λ̃(age)·1{t < recovery}.
    pub fn infectivity(&self, law: &InfectivityLaw, t: f64) -> f64 {
        if t < self.recovery_time {
            self.xi * law.profile.value(self.age(t))
        } else {
            0.0
        }
    }
}

/// Counts plus the roster of every individual ever infected.
#[derive(Debug, Clone)]
pub struct PopulationState {
    pub n: u64,
    pub t: f64,
    pub s: Vec<u64>,
    pub i: Vec<u64>,
    pub r: Vec<u64>,
    /// Cumulative infections by patch of infection.
    pub a: Vec<u64>,
    pub roster: Vec<Individual>,
    /// Current patch of each roster member (meaningful while active).
    pub current_patch: Vec<usize>,
    active: Vec<usize>,
    active_pos: Vec<usize>,
}

const INACTIVE: usize = usize::MAX;

impl PopulationState {
    /// Population of size `n` with the given susceptible and recovered counts;
    /// infected are added through [`PopulationState::admit`].
    pub fn new(n: u64, s: Vec<u64>, r: Vec<u64>) -> Self {
        let l = s.len();
        Self {
            n,
            t: 0.0,
            s,
            i: vec![0; l],
            r,
            a: vec![0; l],
            roster: Vec::new(),
            current_patch: Vec::new(),
            active: Vec::new(),
            active_pos: Vec::new(),
        }
    }

    pub fn num_patches(&self) -> usize {
        self.s.len()
    }

    /// Adds an infected individual located at `patch`; returns its roster index.
    pub fn admit(&mut self, ind: Individual, patch: usize) -> usize {
        let idx = self.roster.len();
        self.roster.push(ind);
        self.current_patch.push(patch);
        self.active_pos.push(self.active.len());
        self.active.push(idx);
        self.i[patch] += 1;
        idx
    }

    pub fn retire(&mut self, idx: usize) {
        let pos = self.active_pos[idx];
        debug_assert_ne!(pos, INACTIVE);
        let last = *self.active.last().expect("retire from nonempty roster");
        self.active.swap_remove(pos);
        if last != idx {
            self.active_pos[last] = pos;
        }
        self.active_pos[idx] = INACTIVE;
        self.i[self.current_patch[idx]] -= 1;
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn num_active(&self) -> usize {
        self.active.len()
    }

    pub fn total(&self) -> u64 {
        self.s.iter().sum::<u64>() + self.i.iter().sum::<u64>() + self.r.iter().sum::<u64>()
    }

    /// B_ℓ = S_ℓ + I_ℓ + R_ℓ.
    pub fn patch_population(&self, l: usize) -> u64 {
        self.s[l] + self.i[l] + self.r[l]
    }
}

/// 𝔉_ℓ(t): summed current infectivity of the active infected in each patch.
pub fn aggregate_infectivity(state: &PopulationState, law: &InfectivityLaw, t: f64) -> Vec<f64> {
    let mut f = vec![0.0; state.num_patches()];
    for &j in state.active() {
        f[state.current_patch[j]] += state.roster[j].infectivity(law, t);
    }
    f
}

/// Υ_ℓ(t) = (B_ℓ/N)^{1−γ}(S_ℓ/B_ℓ)Σ_{ℓ'}β_{ℓℓ'}𝔉_{ℓ'}(t), zero when S_ℓ = 0.
pub fn infection_intensity(state: &PopulationState, cfg: &ModelConfig, t: f64) -> Vec<f64> {
    let f = aggregate_infectivity(state, &cfg.infectivity, t);
    intensity_from_infectivity(state, cfg, &f)
}

pub fn intensity_from_infectivity(state: &PopulationState, cfg: &ModelConfig, f: &[f64]) -> Vec<f64> {
    let n = state.n as f64;
    (0..state.num_patches())
        .map(|l| {
            let s = state.s[l] as f64;
            if s == 0.0 {
                return 0.0;
            }
            let b = state.patch_population(l) as f64;
            let force: f64 = (0..f.len()).map(|m| cfg.beta[(l, m)] * f[m]).sum();
            (b / n).powf(1.0 - cfg.gamma) * (s / b) * force
        })
        .collect()
}

/// Per-patch cumulative counts of active infected with age ≤ each edge.
pub fn age_histogram(state: &PopulationState, t: f64, edges: &[f64]) -> Vec<Vec<u64>> {
    let l = state.num_patches();
    let mut counts = vec![vec![0u64; edges.len()]; l];
    for &j in state.active() {
        let age = state.roster[j].age(t);
        let first = edges.partition_point(|&e| e < age);
        let row = &mut counts[state.current_patch[j]];
        if first < edges.len() {
            row[first] += 1;
        }
    }
    for row in &mut counts {
        for k in 1..row.len() {
            row[k] += row[k - 1];
        }
    }
    counts
}
