//! March of 𝔍̄(t, a) along characteristics a − t = const.

use super::kernels::{add_vecmat, flatten, InitialTables, Kernels};
use super::{implicit_inverse, LimitSolution, SurfaceOptions};
use crate::model::ModelConfig;

/// Strided samples of 𝔍̄ on the (t, a) grid, flattened `[(ti * n_ages + ai) * L + ℓ]`.
#[derive(Debug, Clone)]
pub struct Surface {
    pub num_patches: usize,
    pub times: Vec<f64>,
    pub ages: Vec<f64>,
    pub values: Vec<f64>,
}

impl Surface {
    pub fn at(&self, ti: usize, ai: usize) -> &[f64] {
        let l = self.num_patches;
        let k = (ti * self.ages.len() + ai) * l;
        &self.values[k..k + l]
    }

    fn locate(grid: &[f64], x: f64) -> (usize, f64) {
        if grid.len() == 1 {
            return (0, 0.0);
        }
        let k = grid.partition_point(|&g| g <= x).clamp(1, grid.len() - 1) - 1;
        let w = ((x - grid[k]) / (grid[k + 1] - grid[k])).clamp(0.0, 1.0);
        (k, w)
    }

    /// Bilinear interpolation between stored nodes.
    pub fn value(&self, t: f64, a: f64) -> Vec<f64> {
        let (ti, wt) = Self::locate(&self.times, t);
        let (ai, wa) = Self::locate(&self.ages, a);
        let ti1 = (ti + 1).min(self.times.len() - 1);
        let ai1 = (ai + 1).min(self.ages.len() - 1);
        (0..self.num_patches)
            .map(|p| {
                let v00 = self.at(ti, ai)[p];
                let v01 = self.at(ti, ai1)[p];
                let v10 = self.at(ti1, ai)[p];
                let v11 = self.at(ti1, ai1)[p];
                (1.0 - wt) * ((1.0 - wa) * v00 + wa * v01) + wt * ((1.0 - wa) * v10 + wa * v11)
            })
            .collect()
    }
}

pub(crate) struct Marcher<'a> {
    h: f64,
    l: usize,
    steps: usize,
    age_steps: usize,
    opts: SurfaceOptions,
    kern: &'a Kernels,
    init: &'a InitialTables,
    ni: Vec<f64>,
    inv_i: Vec<f64>,
    /// Initial mass with age ≤ c_k, per age node.
    initial_cdf: Vec<f64>,
    /// C(t_m, c_k) = ∫₀^{c_k} f(t_m + y) ī(0, y)/F^c(y) dy for the current and previous m.
    c_prev: Vec<f64>,
    c_cur: Vec<f64>,
    /// Initial-cohort recoveries by t_m with initial age ≤ c_k.
    t2: Vec<f64>,
    j_prev: Vec<f64>,
    j_cur: Vec<f64>,
    mig_prev: Vec<f64>,
    mig_cur: Vec<f64>,
    out: Surface,
    pub gap: f64,
    pub min_increment: f64,
}

impl<'a> Marcher<'a> {
    pub fn new(
        cfg: &ModelConfig,
        kern: &'a Kernels,
        init: &'a InitialTables,
        steps: usize,
        age_steps: usize,
        opts: SurfaceOptions,
    ) -> Self {
        let l = cfg.num_patches;
        let h = kern.h;
        let width = steps + age_steps + 1;
        let mut initial_cdf = vec![0.0; (age_steps + 1) * l];
        for c in 0..=age_steps {
            for p in 0..l {
                let prof = &cfg.initial.i0_profile[p];
                initial_cdf[c * l + p] = prof.mass * prof.cdf(c as f64 * h, cfg.initial.age_support);
            }
        }
        let ages: Vec<f64> = (0..width).step_by(opts.a_stride).map(|k| k as f64 * h).collect();
        Self {
            h,
            l,
            steps,
            age_steps,
            opts,
            kern,
            init,
            ni: flatten(&cfg.nu_i),
            inv_i: implicit_inverse(&cfg.nu_i, h),
            initial_cdf,
            c_prev: vec![0.0; (age_steps + 1) * l],
            c_cur: vec![0.0; (age_steps + 1) * l],
            t2: vec![0.0; (age_steps + 1) * l],
            j_prev: vec![0.0; width * l],
            j_cur: vec![0.0; width * l],
            mig_prev: vec![0.0; width * l],
            mig_cur: vec![0.0; width * l],
            out: Surface {
                num_patches: l,
                times: Vec::new(),
                ages,
                values: Vec::new(),
            },
            gap: 0.0,
            min_increment: f64::INFINITY,
        }
    }

    fn fill_c(&mut self, m: usize) {
        let (l, h) = (self.l, self.h);
        let q = &self.init.weighted_density;
        let f = &self.kern.density;
        for p in 0..l {
            self.c_cur[p] = 0.0;
        }
        for c in 1..=self.age_steps {
            for p in 0..l {
                self.c_cur[c * l + p] = self.c_cur[(c - 1) * l + p]
                    + 0.5 * h * (f[m + c - 1] * q[(c - 1) * l + p] + f[m + c] * q[c * l + p]);
            }
        }
    }

    /// Solves (I − h/2 N) J = known + mig_prev + h/2 J_prev N along one characteristic.
    fn advance(&self, known: &[f64], jp: &[f64], mp: &[f64], j: &mut [f64], mig: &mut [f64]) {
        let l = self.l;
        let mut rhs = vec![0.0; l];
        for p in 0..l {
            rhs[p] = known[p] + mp[p];
        }
        add_vecmat(&mut rhs, jp, &self.ni, 0.5 * self.h);
        j.iter_mut().for_each(|x| *x = 0.0);
        add_vecmat(j, &rhs, &self.inv_i, 1.0);
        mig.copy_from_slice(mp);
        add_vecmat(mig, jp, &self.ni, 0.5 * self.h);
        add_vecmat(mig, j, &self.ni, 0.5 * self.h);
    }

    pub fn step(&mut self, m: usize, sol: &LimitSolution, cum_ups: &[f64], suffix: &[f64]) {
        let (l, h) = (self.l, self.h);
        let k0 = self.age_steps;
        let width = self.steps + k0 + 1;

        // Initial-cohort recoveries T2(t_m; c).
        self.fill_c(m);
        if m > 0 {
            let pm1 = self.kern.p_at(m - 1);
            let pm = self.kern.p_at(m);
            for c in 0..=k0 {
                let (cp, cc) = (&self.c_prev[c * l..(c + 1) * l], &self.c_cur[c * l..(c + 1) * l]);
                let t2 = &mut self.t2[c * l..(c + 1) * l];
                add_vecmat(t2, cp, pm1, 0.5 * h);
                add_vecmat(t2, cc, pm, 0.5 * h);
            }
        }
        std::mem::swap(&mut self.c_prev, &mut self.c_cur);

        // D_m = ∫₀^{t_m} Ῡ(s) G(t_m − s) ds (trapezoid; the s = t_m term vanishes).
        let ups0 = sol.upsilon_at(0);
        let mut d_full = vec![0.0; l];
        if m > 0 {
            let mut end = vec![0.0; l];
            add_vecmat(&mut end, ups0, self.kern.g_at(m), 1.0);
            for p in 0..l {
                d_full[p] = h * (suffix[p] - 0.5 * end[p]);
            }
        }

        let mut known = vec![0.0; l];
        let mut jv = vec![0.0; l];
        let mut mv = vec![0.0; l];
        let mut tmp = vec![0.0; l];
        // a_k < t_m: cohorts infected at t_{m−k} > 0.
        for k in 0..m.min(width) {
            let rows = k * l..(k + 1) * l;
            if k == 0 {
                self.j_cur[rows.clone()].iter_mut().for_each(|x| *x = 0.0);
                self.mig_cur[rows].iter_mut().for_each(|x| *x = 0.0);
                continue;
            }
            let j0 = m - k;
            tmp.iter_mut().for_each(|x| *x = 0.0);
            add_vecmat(&mut tmp, sol.upsilon_at(j0), self.kern.g_at(k), 1.0);
            for p in 0..l {
                let window = h * (suffix[j0 * l + p] - 0.5 * tmp[p]);
                known[p] = cum_ups[m * l + p] - cum_ups[j0 * l + p] - window;
            }
            let prow = (k - 1) * l..k * l;
            self.advance(&known, &self.j_prev[prow.clone()], &self.mig_prev[prow], &mut jv, &mut mv);
            self.j_cur[rows.clone()].copy_from_slice(&jv);
            self.mig_cur[rows].copy_from_slice(&mv);
        }
        // a_k ≥ t_m: the initial cohort with age ≤ c = a_k − t_m, plus everyone infected since.
        for c in 0..=k0 {
            let k = m + c;
            let rows = k * l..(k + 1) * l;
            for p in 0..l {
                known[p] = self.initial_cdf[c * l + p] - self.t2[c * l + p] + cum_ups[m * l + p] - d_full[p];
            }
            if m == 0 {
                self.j_cur[rows.clone()].copy_from_slice(&known);
                self.mig_cur[rows].iter_mut().for_each(|x| *x = 0.0);
                continue;
            }
            let prow = (k - 1) * l..k * l;
            self.advance(&known, &self.j_prev[prow.clone()], &self.mig_prev[prow], &mut jv, &mut mv);
            self.j_cur[rows.clone()].copy_from_slice(&jv);
            self.mig_cur[rows].copy_from_slice(&mv);
        }
        // Beyond c = A0 nothing changes along a: copy the saturated value.
        let sat = (m + k0) * l;
        for k in (m + k0 + 1)..width {
            for p in 0..l {
                self.j_cur[k * l + p] = self.j_cur[sat + p];
                self.mig_cur[k * l + p] = self.mig_cur[sat + p];
            }
        }

        let im = sol.i_at(m);
        for p in 0..l {
            self.gap = self.gap.max((self.j_cur[sat + p] - im[p]).abs());
        }
        for k in 1..width {
            for p in 0..l {
                let d = self.j_cur[k * l + p] - self.j_cur[(k - 1) * l + p];
                self.min_increment = self.min_increment.min(d);
            }
        }
        if m % self.opts.t_stride == 0 || m == self.steps {
            self.out.times.push(m as f64 * h);
            for k in (0..width).step_by(self.opts.a_stride) {
                self.out.values.extend_from_slice(&self.j_cur[k * l..(k + 1) * l]);
            }
        }
        std::mem::swap(&mut self.j_prev, &mut self.j_cur);
        std::mem::swap(&mut self.mig_prev, &mut self.mig_cur);
    }

    pub fn finish(self) -> Surface {
        self.out
    }
}
