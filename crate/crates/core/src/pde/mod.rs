//! Age-density engine: the boundary trace ī(t, 0) from the 4L Volterra
//! system in the V̄ variables, and closed-form evaluation of ī(t, a) along
//! characteristics.

mod density;

use nalgebra::{DMatrix, DVector};

pub use density::AgeDensity;

use crate::error::{Error, Result};
use crate::limit::{check_floor, evaluate_kernels, initial_tables, steps_for};
use crate::model::ModelConfig;

/// Trace of the density at age zero plus the companion compartments.
/// Per-patch series are flattened `[m * L + ℓ]`.
#[derive(Debug, Clone)]
pub struct BoundarySolution {
    pub h: f64,
    pub num_patches: usize,
    pub times: Vec<f64>,
    /// ī(t_m, 0).
    pub trace: Vec<f64>,
    pub s: Vec<f64>,
    pub i: Vec<f64>,
    pub r: Vec<f64>,
    pub b: Vec<f64>,
    /// V̄ = ī(·, 0)·B̄^γ/S̄, computed from its own equation.
    pub v: Vec<f64>,
    pub c_t: f64,
    /// Inner iterations (fixed point for γ > 0, Newton for γ = 0), max over steps.
    pub max_iterations: usize,
    /// e^{Q v_k} on the grid, flattened L×L per node, for k = 0..=steps.
    pub(crate) p: Vec<f64>,
}

impl BoundarySolution {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    fn row<'a>(&self, v: &'a [f64], m: usize) -> &'a [f64] {
        &v[m * self.num_patches..(m + 1) * self.num_patches]
    }

    pub fn trace_at(&self, m: usize) -> &[f64] {
        self.row(&self.trace, m)
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
    pub fn b_at(&self, m: usize) -> &[f64] {
        self.row(&self.b, m)
    }
    pub fn v_at(&self, m: usize) -> &[f64] {
        self.row(&self.v, m)
    }

    /// Linear interpolation of a flattened series, clamped to [0, T].
    pub fn interpolate(&self, series: &[f64], t: f64, patch: usize) -> f64 {
        let x = (t / self.h).clamp(0.0, self.steps() as f64);
        let m = (x.floor() as usize).min(self.steps().saturating_sub(1));
        let w = x - m as f64;
        let l = self.num_patches;
        series[m * l + patch] * (1.0 - w) + series[(m + 1).min(self.steps()) * l + patch] * w
    }

    pub(crate) fn p_at(&self, k: usize) -> &[f64] {
        let l2 = self.num_patches * self.num_patches;
        &self.p[k * l2..(k + 1) * l2]
    }
}

/// out += scale·M·x with M flattened row-major.
#[inline]
fn add_matvec(out: &mut [f64], m: &[f64], x: &[f64], scale: f64) {
    let l = out.len();
    for i in 0..l {
        let row = &m[i * l..(i + 1) * l];
        out[i] += scale * row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn to_flat(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    (0..r).flat_map(|i| (0..c).map(move |j| m[(i, j)])).collect()
}

/// Column-form trapezoid operator for x' = Nᵀx: returns (I − h/2 Nᵀ)^{-1} and h/2 Nᵀ.
fn migration_ops(n: &DMatrix<f64>, h: f64) -> (Vec<f64>, Vec<f64>) {
    let l = n.nrows();
    let half = n.transpose() * (0.5 * h);
    let inv = (DMatrix::identity(l, l) - &half)
        .try_inverse()
        .expect("I − h/2 Nᵀ is an M-matrix for h > 0");
    (to_flat(&inv), to_flat(&half))
}

fn sigma(s: f64, b: f64, gamma: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if gamma == 0.0 {
        s
    } else {
        s / b.powf(gamma)
    }
}

pub const NEWTON_TOL: f64 = 1e-15;

/// Time-marching trapezoid solver for the boundary system.
///
/// For γ > 0 each step is closed by fixed-point iteration on ī(t_m, 0).
/// For γ = 0 the step equations are bilinear in (S̄_m, V̄_m) and are solved
/// by Newton's method, which needs no damping and stops at round-off.
pub fn solve_boundary(cfg: &ModelConfig, h: f64) -> Result<BoundarySolution> {
    solve_boundary_with(cfg, h, 1e-12, 50)
}

pub fn solve_boundary_with(cfg: &ModelConfig, h: f64, tol: f64, max_iter: usize) -> Result<BoundarySolution> {
    cfg.validate()?;
    let steps = steps_for(cfg.horizon, h, "horizon")?;
    let age_steps = steps_for(cfg.initial.age_support, h, "initial.age_support")?;
    let l = cfg.num_patches;
    let l2 = l * l;
    let kern = evaluate_kernels(cfg, h, steps + age_steps)?;
    let init = initial_tables(cfg, &kern, steps, age_steps);

    // H_{ℓℓ'}(v) = Σ_ℓ'' β_{ℓℓ''} λ̄(v) p_{ℓ'ℓ''}(v) and Gᵀ(v)_{ℓℓ'} = ∫₀^v p_{ℓ'ℓ} f.
    let beta = to_flat(&cfg.beta);
    let mut hk = vec![0.0; (steps + 1) * l2];
    let mut gt = vec![0.0; (steps + 1) * l2];
    for k in 0..=steps {
        let lp = kern.lambda_p_at(k);
        let g = kern.g_at(k);
        for a in 0..l {
            for b in 0..l {
                hk[k * l2 + a * l + b] = (0..l).map(|c| beta[a * l + c] * lp[b * l + c]).sum();
                gt[k * l2 + a * l + b] = g[b * l + a];
            }
        }
    }
    // f_ℓ(t_m) = Σ β_{ℓℓ'} (Φ(t_m)·p(t_m))_ℓ'
    let mut fk = vec![0.0; (steps + 1) * l];
    for m in 0..=steps {
        let p = kern.p_at(m);
        let phi = &init.phi[m * l..(m + 1) * l];
        let carried: Vec<f64> = (0..l).map(|b| (0..l).map(|a| phi[a] * p[a * l + b]).sum()).collect();
        add_matvec(&mut fk[m * l..(m + 1) * l], &beta, &carried, 1.0);
    }

    let (inv_s, half_s) = migration_ops(&cfg.nu_s, h);
    let (inv_i, half_i) = migration_ops(&cfg.nu_i, h);
    let (inv_r, half_r) = migration_ops(&cfg.nu_r, h);

    let n_nodes = steps + 1;
    let mut sol = BoundarySolution {
        h,
        num_patches: l,
        times: (0..n_nodes).map(|m| m as f64 * h).collect(),
        trace: vec![0.0; n_nodes * l],
        s: vec![0.0; n_nodes * l],
        i: vec![0.0; n_nodes * l],
        r: vec![0.0; n_nodes * l],
        b: vec![0.0; n_nodes * l],
        v: vec![0.0; n_nodes * l],
        c_t: f64::INFINITY,
        max_iterations: 0,
        p: kern.p[..n_nodes * l2].to_vec(),
    };

    let i0 = cfg.initial.i0();
    for p in 0..l {
        let (s, i, r) = (cfg.initial.s0[p], i0[p], cfg.initial.r0[p]);
        sol.s[p] = s;
        sol.i[p] = i;
        sol.r[p] = r;
        sol.b[p] = s + i + r;
        sol.v[p] = fk[p];
        sol.trace[p] = sigma(s, s + i + r, cfg.gamma) * fk[p];
    }
    check_floor(&sol.b[..l], 0, &mut sol.c_t)?;

    let mut int_trace = vec![0.0; l];
    // Trapezoid integrals of N_Iᵀ Ī and N_Rᵀ R̄ up to t_{m−1}.
    let mut mig_i = vec![0.0; l];
    let mut mig_r = vec![0.0; l];
    let mut known_v = vec![0.0; l];
    let mut conv = vec![0.0; l];
    for m in 1..=steps {
        let prev = m - 1;
        known_v.copy_from_slice(&fk[m * l..(m + 1) * l]);
        conv.iter_mut().for_each(|x| *x = 0.0);
        for j in 0..m {
            let w = if j == 0 { 0.5 * h } else { h };
            let x = &sol.trace[j * l..(j + 1) * l];
            add_matvec(&mut known_v, &hk[(m - j) * l2..(m - j + 1) * l2], x, w);
            add_matvec(&mut conv, &gt[(m - j) * l2..(m - j + 1) * l2], x, w);
        }
        let h0 = &hk[..l2];
        let x_prev = sol.trace_at(prev).to_vec();
        let s_prev = sol.s_at(prev).to_vec();
        let i_prev = sol.i_at(prev).to_vec();
        let r_prev = sol.r_at(prev).to_vec();

        // S̄_m = (I − h/2 N_Sᵀ)^{-1}(bs − h/2 ī_m)
        let mut bs = s_prev.clone();
        add_matvec(&mut bs, &half_s, &s_prev, 1.0);
        for p in 0..l {
            bs[p] -= 0.5 * h * x_prev[p];
        }
        // Ī_m = (I − h/2 N_Iᵀ)^{-1}(bi + h/2 ī_m)
        let recovered0 = &init.recovered[m * l..(m + 1) * l];
        let mut bi = vec![0.0; l];
        for p in 0..l {
            bi[p] = i0[p] - recovered0[p] + int_trace[p] + 0.5 * h * x_prev[p] - conv[p] + mig_i[p];
        }
        add_matvec(&mut bi, &half_i, &i_prev, 1.0);
        let mut br = vec![0.0; l];
        for p in 0..l {
            br[p] = cfg.initial.r0[p] + recovered0[p] + conv[p] + mig_r[p];
        }
        add_matvec(&mut br, &half_r, &r_prev, 1.0);
        let mut r_m = vec![0.0; l];
        add_matvec(&mut r_m, &inv_r, &br, 1.0);

        let solve_si = |x: &[f64]| -> (Vec<f64>, Vec<f64>) {
            let mut rs = bs.clone();
            let mut ri = bi.clone();
            for p in 0..l {
                rs[p] -= 0.5 * h * x[p];
                ri[p] += 0.5 * h * x[p];
            }
            let mut s = vec![0.0; l];
            let mut i = vec![0.0; l];
            add_matvec(&mut s, &inv_s, &rs, 1.0);
            add_matvec(&mut i, &inv_i, &ri, 1.0);
            (s, i)
        };

        let (x_m, v_m, iters) = if cfg.gamma == 0.0 {
            newton_step(&bs, &known_v, h0, &half_s, (&s_prev, sol.v_at(prev)), h, max_iter)
                .map_err(|residual| Error::FixedPoint { step: m, residual })?
        } else {
            let mut x = x_prev.clone();
            let mut last = f64::INFINITY;
            let mut iters = 0;
            loop {
                iters += 1;
                let (s, i) = solve_si(&x);
                let mut v = known_v.clone();
                add_matvec(&mut v, h0, &x, 0.5 * h);
                let mut next: Vec<f64> = (0..l).map(|p| sigma(s[p], s[p] + i[p] + r_m[p], cfg.gamma) * v[p]).collect();
                let res = (0..l).map(|p| (next[p] - x[p]).abs()).fold(0.0, f64::max);
                if res > last {
                    for p in 0..l {
                        next[p] = 0.5 * (next[p] + x[p]);
                    }
                }
                last = last.min(res);
                x = next;
                if res < tol {
                    break;
                }
                if iters >= max_iter {
                    return Err(Error::FixedPoint { step: m, residual: res });
                }
            }
            let mut v = known_v.clone();
            add_matvec(&mut v, h0, &x, 0.5 * h);
            (x, v, iters)
        };
        sol.max_iterations = sol.max_iterations.max(iters);
        let (s_m, i_m) = solve_si(&x_m);
        let b_m: Vec<f64> = (0..l).map(|p| s_m[p] + i_m[p] + r_m[p]).collect();
        check_floor(&b_m, m, &mut sol.c_t)?;
        let rows = m * l..(m + 1) * l;
        sol.trace[rows.clone()].copy_from_slice(&x_m);
        sol.v[rows.clone()].copy_from_slice(&v_m);
        sol.s[rows.clone()].copy_from_slice(&s_m);
        sol.i[rows.clone()].copy_from_slice(&i_m);
        sol.r[rows.clone()].copy_from_slice(&r_m);
        sol.b[rows].copy_from_slice(&b_m);
        for p in 0..l {
            int_trace[p] += 0.5 * h * (x_prev[p] + x_m[p]);
        }
        add_matvec(&mut mig_i, &half_i, &i_prev, 1.0);
        add_matvec(&mut mig_i, &half_i, &i_m, 1.0);
        add_matvec(&mut mig_r, &half_r, &r_prev, 1.0);
        add_matvec(&mut mig_r, &half_r, &r_m, 1.0);
    }
    Ok(sol)
}

/// Newton's method on the γ = 0 step equations
///   (I − h/2 N_Sᵀ)S − b_S + h/2 S∘V = 0,
///   V − k_V − h/2 H(0)(S∘V) = 0,
/// returning (ī_m = S∘V, V_m, iterations).
fn newton_step(
    bs: &[f64],
    known_v: &[f64],
    h0: &[f64],
    half_s: &[f64],
    start: (&[f64], &[f64]),
    h: f64,
    max_iter: usize,
) -> std::result::Result<(Vec<f64>, Vec<f64>, usize), f64> {
    let l = bs.len();
    let mut s = start.0.to_vec();
    let mut v = start.1.to_vec();
    let mut res = f64::INFINITY;
    for it in 1..=max_iter {
        let sv: Vec<f64> = (0..l).map(|p| s[p] * v[p]).collect();
        let mut e = DVector::<f64>::zeros(2 * l);
        let mut jac = DMatrix::<f64>::zeros(2 * l, 2 * l);
        for a in 0..l {
            let mut e1 = s[a] - bs[a] + 0.5 * h * sv[a];
            let mut e2 = v[a] - known_v[a];
            for b in 0..l {
                e1 -= half_s[a * l + b] * s[b];
                e2 -= 0.5 * h * h0[a * l + b] * sv[b];
                jac[(a, b)] = -half_s[a * l + b];
                jac[(l + a, b)] = -0.5 * h * h0[a * l + b] * v[b];
                jac[(l + a, l + b)] = -0.5 * h * h0[a * l + b] * s[b];
            }
            jac[(a, a)] += 1.0 + 0.5 * h * v[a];
            jac[(a, l + a)] = 0.5 * h * s[a];
            jac[(l + a, l + a)] += 1.0;
            e[a] = e1;
            e[l + a] = e2;
        }
        res = e.amax();
        if res <= NEWTON_TOL {
            return Ok((sv, v, it));
        }
        let delta = jac.lu().solve(&e).ok_or(res)?;
        let step = delta.amax();
        for p in 0..l {
            s[p] -= delta[p];
            v[p] -= delta[l + p];
        }
        if step <= NEWTON_TOL * (1.0 + v.iter().chain(&s).fold(0.0f64, |m, x| m.max(x.abs()))) {
            let sv = (0..l).map(|p| s[p] * v[p]).collect();
            return Ok((sv, v, it));
        }
    }
    Err(res)
}

#[cfg(test)]
mod tests;
