//! Tabulated kernels shared by the limit and boundary solvers.
//!
//! Everything lives on one uniform grid v_k = k·h with the time and age steps
//! equal, so that characteristics a − t = const pass through grid nodes.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::migration::{transition_matrix, Generator};
use crate::model::{ModelConfig, SURVIVAL_FLOOR};
use crate::quadrature::gauss_legendre_unit;

/// Row-vector times matrix, both flattened row-major: out += x·M.
#[inline]
pub(crate) fn add_vecmat(out: &mut [f64], x: &[f64], m: &[f64], scale: f64) {
    let l = out.len();
    for (i, &xi) in x.iter().enumerate() {
        let c = scale * xi;
        if c == 0.0 {
            continue;
        }
        let row = &m[i * l..(i + 1) * l];
        for j in 0..l {
            out[j] += c * row[j];
        }
    }
}

pub(crate) fn flatten(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    let mut v = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            v.push(m[(i, j)]);
        }
    }
    v
}

/// Exact number of steps of size `h` in `span`, or an error.
pub fn steps_for(span: f64, h: f64, name: &'static str) -> Result<usize> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid("h", "step must be positive"));
    }
    let k = (span / h).round();
    if (k * h - span).abs() > 1e-9 * span.max(1.0) || k < 1.0 {
        return Err(Error::invalid(name, format!("step {h} does not divide {span}")));
    }
    Ok(k as usize)
}

/// Kernel tables on v_k = k·h, k = 0..=len.
#[derive(Debug, Clone)]
pub struct Kernels {
    pub h: f64,
    pub num_patches: usize,
    /// λ̄(v_k).
    pub lambda_bar: Vec<f64>,
    /// f(v_k), the duration density.
    pub density: Vec<f64>,
    /// p(v_k) = e^{Q v_k}, flattened L×L per node.
    pub p: Vec<f64>,
    /// λ̄(v_k)·p(v_k).
    pub lambda_p: Vec<f64>,
    /// G(v_k) = ∫₀^{v_k} p(u) f(u) du, entry (ℓ', ℓ).
    pub g: Vec<f64>,
}

impl Kernels {
    pub fn len(&self) -> usize {
        self.lambda_bar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda_bar.is_empty()
    }

    pub fn p_at(&self, k: usize) -> &[f64] {
        let l2 = self.num_patches * self.num_patches;
        &self.p[k * l2..(k + 1) * l2]
    }

    pub fn lambda_p_at(&self, k: usize) -> &[f64] {
        let l2 = self.num_patches * self.num_patches;
        &self.lambda_p[k * l2..(k + 1) * l2]
    }

    pub fn g_at(&self, k: usize) -> &[f64] {
        let l2 = self.num_patches * self.num_patches;
        &self.g[k * l2..(k + 1) * l2]
    }
}

/// Tabulates λ̄·p and G on `len + 1` nodes. G is integrated exactly in the
/// migration factor and by 8-point Gauss–Legendre in the density on each
/// grid cell.
pub fn evaluate_kernels(cfg: &ModelConfig, h: f64, len: usize) -> Result<Kernels> {
    let l = cfg.num_patches;
    let l2 = l * l;
    let gen = Generator::new(cfg.nu_i.clone())?;
    let (gx, gw) = gauss_legendre_unit(8);
    let sub: Vec<DMatrix<f64>> = gx.iter().map(|&x| transition_matrix(&gen, x * h).p).collect();

    let mut lambda_bar = Vec::with_capacity(len + 1);
    let mut density = Vec::with_capacity(len + 1);
    let mut p = Vec::with_capacity((len + 1) * l2);
    let mut lambda_p = Vec::with_capacity((len + 1) * l2);
    let mut g = Vec::with_capacity((len + 1) * l2);
    let mut g_acc = DMatrix::<f64>::zeros(l, l);
    let mut prev = DMatrix::<f64>::identity(l, l);
    for k in 0..=len {
        let v = k as f64 * h;
        // Fresh exponential at every node keeps the table free of
        // accumulated product error.
        let pk = if k == 0 { DMatrix::identity(l, l) } else { transition_matrix(&gen, v).p };
        if k > 0 {
            let v0 = v - h;
            for (x, (w, e)) in gx.iter().zip(gw.iter().zip(&sub)) {
                g_acc += (&prev * e) * (w * h * cfg.duration.density(v0 + x * h));
            }
        }
        let lb = cfg.mean_infectivity(v);
        lambda_bar.push(lb);
        density.push(cfg.duration.density(v));
        p.extend(flatten(&pk));
        lambda_p.extend(flatten(&pk).iter().map(|x| x * lb));
        g.extend(flatten(&g_acc));
        prev = pk;
    }
    Ok(Kernels {
        h,
        num_patches: l,
        lambda_bar,
        density,
        p,
        lambda_p,
        g,
    })
}

/// Initial-cohort functions on the time grid.
///
/// An individual of age y at time 0 is known to be infected, so its mean
/// infectivity t later is λ̄(y + t)/F^c(y) and its remaining period has
/// density f(y + u)/F^c(y).
#[derive(Debug, Clone)]
pub struct InitialTables {
    pub age_steps: usize,
    /// ī(0, y_k)/F^c(y_k) per age node, flattened K0+1 × L.
    pub weighted_density: Vec<f64>,
    /// Φ(t_m) = ∫ λ̄(y + t_m)/F^c(y) ī(0, y) dy, flattened (M+1) × L.
    pub phi: Vec<f64>,
    /// Initial-cohort mass recovered by t_m, by recovery patch: ∫₀^{t_m} C(u) p(u) du,
    /// with C(u) = ∫ f(y + u)/F^c(y) ī(0, y) dy. Flattened (M+1) × L.
    pub recovered: Vec<f64>,
}

/// Builds the initial-cohort tables. The kernels must cover `steps + age_steps` nodes.
pub fn initial_tables(cfg: &ModelConfig, k: &Kernels, steps: usize, age_steps: usize) -> InitialTables {
    let l = cfg.num_patches;
    let h = k.h;
    let mut weighted_density = vec![0.0; (age_steps + 1) * l];
    for y in 0..=age_steps {
        let a = y as f64 * h;
        let fc = cfg.duration.survival(a);
        if fc < SURVIVAL_FLOOR {
            continue;
        }
        let d = cfg.initial_density(a);
        for p in 0..l {
            weighted_density[y * l + p] = d[p] / fc;
        }
    }
    let w = |y: usize| if y == 0 || y == age_steps { 0.5 * h } else { h };
    let mut phi = vec![0.0; (steps + 1) * l];
    let mut c_row = vec![vec![0.0; l]; steps + 1];
    for m in 0..=steps {
        for y in 0..=age_steps {
            let lb = k.lambda_bar[m + y] * w(y);
            let fd = k.density[m + y] * w(y);
            for p in 0..l {
                let q = weighted_density[y * l + p];
                phi[m * l + p] += lb * q;
                c_row[m][p] += fd * q;
            }
        }
    }
    let mut recovered = vec![0.0; (steps + 1) * l];
    for m in 1..=steps {
        let (head, tail) = recovered.split_at_mut(m * l);
        let cur = &mut tail[..l];
        cur.copy_from_slice(&head[(m - 1) * l..]);
        add_vecmat(cur, &c_row[m - 1], k.p_at(m - 1), 0.5 * h);
        add_vecmat(cur, &c_row[m], k.p_at(m), 0.5 * h);
    }
    InitialTables {
        age_steps,
        weighted_density,
        phi,
        recovered,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{presets, DurationDistribution};
    use approx::assert_relative_eq;

    #[test]
    fn kernel_trivial_cases() {
        let cfg = presets::reference().without_migration();
        let k = evaluate_kernels(&cfg, 0.01, 100).unwrap();
        for idx in [0, 37, 100] {
            let lp = k.lambda_p_at(idx);
            let lb = k.lambda_bar[idx];
            for i in 0..3 {
                for j in 0..3 {
                    assert_eq!(lp[i * 3 + j], if i == j { lb } else { 0.0 });
                }
            }
        }
        assert!(k.g_at(0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn g_two_patch_closed_form() {
        let mut cfg = presets::reference();
        cfg.num_patches = 2;
        let sym = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
        cfg.nu_i = sym;
        cfg.duration = DurationDistribution::exponential(1.0);
        let h = 0.01;
        let k = evaluate_kernels(&cfg, h, 500).unwrap();
        // ∫₀^v (1+e^{-2u})/2 e^{-u} du = (1 − e^{−v})/2 + (1 − e^{−3v})/6
        for idx in [1, 10, 250, 500] {
            let v = idx as f64 * h;
            let exact = 0.5 * (1.0 - (-v).exp()) + (1.0 - (-3.0 * v).exp()) / 6.0;
            assert_relative_eq!(k.g_at(idx)[0], exact, epsilon = 1e-13);
        }
    }

    #[test]
    fn g_is_monotone_and_bounded() {
        let cfg = presets::reference();
        let k = evaluate_kernels(&cfg, 0.01, 3000).unwrap();
        for idx in 1..k.len() {
            let (a, b) = (k.g_at(idx - 1), k.g_at(idx));
            for e in 0..9 {
                assert!(b[e] >= a[e]);
            }
            for row in 0..3 {
                assert!(b[row * 3..row * 3 + 3].iter().sum::<f64>() <= 1.0 + 1e-12);
            }
        }
    }
}
