//! Deterministic large-population limit: the Volterra system for S̄, 𝔉̄, Ī,
//! R̄, Ῡ and the age-structured surface 𝔍̄(t, a).

pub mod kernels;
mod surface;

use nalgebra::DMatrix;

pub use kernels::{evaluate_kernels, initial_tables, steps_for, InitialTables, Kernels};
pub use surface::Surface;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use kernels::{add_vecmat, flatten};

/// B̄ below this aborts the solve.
pub const POPULATION_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceOptions {
    /// Keep every `t_stride`-th time row.
    pub t_stride: usize,
    /// Keep every `a_stride`-th age node.
    pub a_stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitOptions {
    pub h: f64,
    pub surface: Option<SurfaceOptions>,
    /// Fixed-point tolerance on successive Ῡ iterates.
    pub tol: f64,
    pub max_iter: usize,
}

impl LimitOptions {
    pub fn new(h: f64) -> Self {
        Self {
            h,
            surface: None,
            tol: 1e-12,
            max_iter: 50,
        }
    }

    pub fn with_surface(mut self, t_stride: usize, a_stride: usize) -> Self {
        self.surface = Some(SurfaceOptions {
            t_stride: t_stride.max(1),
            a_stride: a_stride.max(1),
        });
        self
    }
}

/// Grid solution. Per-patch series are flattened `[m * L + ℓ]`.
#[derive(Debug, Clone)]
pub struct LimitSolution {
    pub h: f64,
    pub num_patches: usize,
    pub times: Vec<f64>,
    pub s: Vec<f64>,
    pub i: Vec<f64>,
    pub r: Vec<f64>,
    pub f: Vec<f64>,
    pub upsilon: Vec<f64>,
    pub b: Vec<f64>,
    /// min over patches and grid times of B̄.
    pub c_t: f64,
    /// Largest number of fixed-point iterations used at any step.
    pub max_iterations: usize,
    pub surface: Option<Surface>,
    /// max_t |𝔍̄(t, A0 + t) − Ī(t)| (zero when no surface was computed).
    pub surface_gap: f64,
    /// min over t, a of 𝔍̄(t, a + h) − 𝔍̄(t, a); negative means non-monotone.
    pub surface_min_increment: f64,
}

impl LimitSolution {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    fn row<'a>(&self, v: &'a [f64], m: usize) -> &'a [f64] {
        &v[m * self.num_patches..(m + 1) * self.num_patches]
    }

    pub fn s_at(&self, m: usize) -> &[f64] {
        self.row(&self.s, m)
    }
    pub fn i_at(&self, m: usize) -> &[f64] {
        self.row(&self.i, m)
    }
    pub fn r_at(&self, m: usize) -> &[f64] {
        self.row(&self.r, m)
    }
    pub fn f_at(&self, m: usize) -> &[f64] {
        self.row(&self.f, m)
    }
    pub fn upsilon_at(&self, m: usize) -> &[f64] {
        self.row(&self.upsilon, m)
    }
    pub fn b_at(&self, m: usize) -> &[f64] {
        self.row(&self.b, m)
    }

    /// Index of grid time `t` (which must be a multiple of h).
    pub fn index_of(&self, t: f64) -> usize {
        ((t / self.h).round() as usize).min(self.steps())
    }

    /// Linear interpolation of a flattened series at time `t`.
    pub fn interpolate(&self, series: &[f64], t: f64, patch: usize) -> f64 {
        let x = (t / self.h).clamp(0.0, self.steps() as f64);
        let m = (x.floor() as usize).min(self.steps().saturating_sub(1));
        let w = x - m as f64;
        let l = self.num_patches;
        series[m * l + patch] * (1.0 - w) + series[(m + 1).min(self.steps()) * l + patch] * w
    }

    /// Ā_ℓ(T) = ∫₀^T Ῡ_ℓ by the trapezoid rule.
    pub fn cumulative_infections(&self) -> Vec<f64> {
        let l = self.num_patches;
        let mut a = vec![0.0; l];
        for m in 1..=self.steps() {
            for p in 0..l {
                a[p] += 0.5 * self.h * (self.upsilon[(m - 1) * l + p] + self.upsilon[m * l + p]);
            }
        }
        a
    }
}

/// (I − h/2·N)^{-1}, flattened, for right-multiplying row vectors.
pub(crate) fn implicit_inverse(n: &DMatrix<f64>, h: f64) -> Vec<f64> {
    let l = n.nrows();
    let m = DMatrix::<f64>::identity(l, l) - n * (0.5 * h);
    flatten(&m.try_inverse().expect("I − h/2 N is an M-matrix for h > 0"))
}

pub(crate) fn vecmat(x: &[f64], m: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    add_vecmat(&mut out, x, m, 1.0);
    out
}

/// Ῡ_ℓ = S̄_ℓ/B̄_ℓ^γ Σ_ℓ' β_ℓℓ' 𝔉̄_ℓ'.
pub(crate) fn rate(cfg: &ModelConfig, s: &[f64], b: &[f64], f: &[f64], out: &mut [f64]) {
    for p in 0..s.len() {
        if s[p] <= 0.0 {
            out[p] = 0.0;
            continue;
        }
        let force: f64 = (0..f.len()).map(|q| cfg.beta[(p, q)] * f[q]).sum();
        out[p] = if cfg.gamma == 0.0 { s[p] * force } else { s[p] / b[p].powf(cfg.gamma) * force };
    }
}

/// Time-marching trapezoid solver for the limit system.
pub fn solve_limit(cfg: &ModelConfig, opts: &LimitOptions) -> Result<LimitSolution> {
    cfg.validate()?;
    let h = opts.h;
    let steps = steps_for(cfg.horizon, h, "horizon")?;
    let age_steps = steps_for(cfg.initial.age_support, h, "initial.age_support")?;
    let l = cfg.num_patches;
    let kern = evaluate_kernels(cfg, h, steps + age_steps)?;
    let init = initial_tables(cfg, &kern, steps, age_steps);

    let ns = flatten(&cfg.nu_s);
    let ni = flatten(&cfg.nu_i);
    let nr = flatten(&cfg.nu_r);
    let inv_s = implicit_inverse(&cfg.nu_s, h);
    let inv_i = implicit_inverse(&cfg.nu_i, h);
    let inv_r = implicit_inverse(&cfg.nu_r, h);
    let lambda0 = kern.lambda_bar[0];

    let i0: Vec<f64> = cfg.initial.i0();
    let n_nodes = steps + 1;
    let mut sol = LimitSolution {
        h,
        num_patches: l,
        times: (0..n_nodes).map(|m| m as f64 * h).collect(),
        s: vec![0.0; n_nodes * l],
        i: vec![0.0; n_nodes * l],
        r: vec![0.0; n_nodes * l],
        f: vec![0.0; n_nodes * l],
        upsilon: vec![0.0; n_nodes * l],
        b: vec![0.0; n_nodes * l],
        c_t: f64::INFINITY,
        max_iterations: 0,
        surface: None,
        surface_gap: 0.0,
        surface_min_increment: f64::INFINITY,
    };
    // Trapezoid prefix sums of Ῡ, I N_I, R N_R.
    let mut cum_ups = vec![0.0; n_nodes * l];
    let mut cum_in = vec![0.0; l];
    let mut cum_rn = vec![0.0; l];

    let mut marcher = opts
        .surface
        .map(|so| surface::Marcher::new(cfg, &kern, &init, steps, age_steps, so));

    // t = 0
    sol.s[..l].copy_from_slice(&cfg.initial.s0);
    sol.i[..l].copy_from_slice(&i0);
    sol.r[..l].copy_from_slice(&cfg.initial.r0);
    let f0 = vecmat(&init.phi[..l], kern.p_at(0));
    sol.f[..l].copy_from_slice(&f0);
    let b0: Vec<f64> = (0..l).map(|p| sol.s[p] + sol.i[p] + sol.r[p]).collect();
    sol.b[..l].copy_from_slice(&b0);
    let mut ups0 = vec![0.0; l];
    rate(cfg, &cfg.initial.s0, &b0, &f0, &mut ups0);
    sol.upsilon[..l].copy_from_slice(&ups0);
    check_floor(&b0, 0, &mut sol.c_t)?;
    if let Some(mc) = marcher.as_mut() {
        mc.step(0, &sol, &cum_ups, &suffix_empty());
    }

    let mut hist = vec![0.0; l];
    let mut dconv = vec![0.0; l];
    let mut suffix = vec![0.0; n_nodes * l];
    let mut tmp = vec![0.0; l];
    for m in 1..=steps {
        // History sums over j < m (the j = m terms are λ̄(0)Ῡ_m and G(0) = 0).
        hist.iter_mut().for_each(|x| *x = 0.0);
        dconv.iter_mut().for_each(|x| *x = 0.0);
        let track_suffix = marcher.is_some();
        if track_suffix {
            suffix[m * l..(m + 1) * l].iter_mut().for_each(|x| *x = 0.0);
        }
        for j in (0..m).rev() {
            let w = if j == 0 { 0.5 * h } else { h };
            let uj = &sol.upsilon[j * l..(j + 1) * l];
            add_vecmat(&mut hist, uj, kern.lambda_p_at(m - j), w);
            tmp.iter_mut().for_each(|x| *x = 0.0);
            add_vecmat(&mut tmp, uj, kern.g_at(m - j), 1.0);
            for p in 0..l {
                dconv[p] += w * tmp[p];
            }
            if track_suffix {
                // suffix[j] = Σ_{i=j}^{m} Ῡ_i G(t_m − t_i)
                for p in 0..l {
                    suffix[j * l + p] = suffix[(j + 1) * l + p] + tmp[p];
                }
            }
        }
        let mut fknown = vecmat(&init.phi[m * l..(m + 1) * l], kern.p_at(m));
        for p in 0..l {
            fknown[p] += hist[p];
        }
        let recovered0 = &init.recovered[m * l..(m + 1) * l];

        let prev = m - 1;
        let s_prev = sol.s_at(prev).to_vec();
        let i_prev = sol.i_at(prev).to_vec();
        let r_prev = sol.r_at(prev).to_vec();
        let u_prev = sol.upsilon_at(prev).to_vec();

        // S̄_m = (S̄_{m−1}(I + h/2 N_S) − h/2(Ῡ_{m−1} + Ῡ_m))(I − h/2 N_S)^{-1}
        let mut rhs_s = s_prev.clone();
        add_vecmat(&mut rhs_s, &s_prev, &ns, 0.5 * h);
        for p in 0..l {
            rhs_s[p] -= 0.5 * h * u_prev[p];
        }
        // Ī_m = (g_m + ∫Ῡ − D_m + ∫Ī N_I)(I − h/2 N_I)^{-1}
        let mut rhs_i = vec![0.0; l];
        for p in 0..l {
            rhs_i[p] = i0[p] - recovered0[p] + cum_ups[prev * l + p] + 0.5 * h * u_prev[p] - dconv[p] + cum_in[p];
        }
        add_vecmat(&mut rhs_i, &i_prev, &ni, 0.5 * h);
        let mut rhs_r = vec![0.0; l];
        for p in 0..l {
            rhs_r[p] = cfg.initial.r0[p] + recovered0[p] + dconv[p] + cum_rn[p];
        }
        add_vecmat(&mut rhs_r, &r_prev, &nr, 0.5 * h);
        let r_m = vecmat(&rhs_r, &inv_r);

        let eval = |u: &[f64], s: &mut Vec<f64>, i: &mut Vec<f64>, b: &mut Vec<f64>, f: &mut Vec<f64>, out: &mut [f64]| {
            let mut xs = rhs_s.clone();
            let mut xi = rhs_i.clone();
            for p in 0..l {
                xs[p] -= 0.5 * h * u[p];
                xi[p] += 0.5 * h * u[p];
            }
            *s = vecmat(&xs, &inv_s);
            *i = vecmat(&xi, &inv_i);
            *b = (0..l).map(|p| s[p] + i[p] + r_m[p]).collect();
            *f = (0..l).map(|p| fknown[p] + 0.5 * h * lambda0 * u[p]).collect();
            rate(cfg, s, b, f, out);
        };

        let (mut s_m, mut i_m, mut b_m, mut f_m) = (vec![0.0; l], vec![0.0; l], vec![0.0; l], vec![0.0; l]);
        // Predictor: the closure evaluated at the previous rate.
        let mut u = vec![0.0; l];
        eval(&u_prev, &mut s_m, &mut i_m, &mut b_m, &mut f_m, &mut u);
        let mut next = vec![0.0; l];
        let mut last_res = f64::INFINITY;
        let mut iters = 0;
        loop {
            iters += 1;
            eval(&u, &mut s_m, &mut i_m, &mut b_m, &mut f_m, &mut next);
            let res = (0..l).map(|p| (next[p] - u[p]).abs()).fold(0.0, f64::max);
            if res > last_res {
                for p in 0..l {
                    next[p] = 0.5 * (next[p] + u[p]);
                }
            }
            last_res = last_res.min(res);
            u.copy_from_slice(&next);
            if res < opts.tol {
                break;
            }
            if iters >= opts.max_iter {
                return Err(Error::FixedPoint { step: m, residual: res });
            }
        }
        // Final consistent state for the accepted rate.
        eval(&u, &mut s_m, &mut i_m, &mut b_m, &mut f_m, &mut next);
        sol.max_iterations = sol.max_iterations.max(iters);
        check_floor(&b_m, m, &mut sol.c_t)?;

        let rows = m * l..(m + 1) * l;
        sol.s[rows.clone()].copy_from_slice(&s_m);
        sol.i[rows.clone()].copy_from_slice(&i_m);
        sol.r[rows.clone()].copy_from_slice(&r_m);
        sol.b[rows.clone()].copy_from_slice(&b_m);
        sol.f[rows.clone()].copy_from_slice(&f_m);
        sol.upsilon[rows].copy_from_slice(&u);
        for p in 0..l {
            cum_ups[m * l + p] = cum_ups[prev * l + p] + 0.5 * h * (u_prev[p] + u[p]);
        }
        add_vecmat(&mut cum_in, &i_prev, &ni, 0.5 * h);
        add_vecmat(&mut cum_in, &i_m, &ni, 0.5 * h);
        add_vecmat(&mut cum_rn, &r_prev, &nr, 0.5 * h);
        add_vecmat(&mut cum_rn, &r_m, &nr, 0.5 * h);

        if let Some(mc) = marcher.as_mut() {
            mc.step(m, &sol, &cum_ups, &suffix);
        }
    }
    if let Some(mc) = marcher {
        sol.surface_gap = mc.gap;
        sol.surface_min_increment = mc.min_increment;
        sol.surface = Some(mc.finish());
    }
    Ok(sol)
}

fn suffix_empty() -> Vec<f64> {
    Vec::new()
}

pub(crate) fn check_floor(b: &[f64], step: usize, c_t: &mut f64) -> Result<()> {
    for (patch, &value) in b.iter().enumerate() {
        if !(value >= POPULATION_FLOOR) {
            return Err(Error::PopulationFloor {
                step,
                patch,
                value,
                floor: POPULATION_FLOOR,
            });
        }
        *c_t = c_t.min(value);
    }
    Ok(())
}
