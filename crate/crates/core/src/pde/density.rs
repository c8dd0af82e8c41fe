use nalgebra::DMatrix;

use super::{to_flat, BoundarySolution};
use crate::migration::{transition_matrix, Generator};
use crate::model::{ModelConfig, SURVIVAL_FLOOR};
use crate::quadrature::{gauss_legendre_unit, integrate_adaptive};

/// ī(t, a) by the method of characteristics on top of a boundary solve.
#[derive(Debug, Clone)]
pub struct AgeDensity {
    pub cfg: ModelConfig,
    pub boundary: BoundarySolution,
    gen: Generator,
}

fn row_times(x: &[f64], p: &DMatrix<f64>) -> Vec<f64> {
    let l = x.len();
    (0..l).map(|j| (0..l).map(|i| x[i] * p[(i, j)]).sum()).collect()
}

impl AgeDensity {
    pub fn new(cfg: &ModelConfig, boundary: BoundarySolution) -> crate::Result<Self> {
        Ok(Self {
            gen: Generator::new(cfg.nu_i.clone())?,
            cfg: cfg.clone(),
            boundary,
        })
    }

    pub fn num_patches(&self) -> usize {
        self.cfg.num_patches
    }

    fn horizon(&self) -> f64 {
        self.boundary.times[self.boundary.steps()]
    }

    /// ī(t, 0) with linear interpolation between grid nodes.
    pub fn trace(&self, t: f64) -> Vec<f64> {
        let b = &self.boundary;
        (0..b.num_patches).map(|p| b.interpolate(&b.trace, t, p)).collect()
    }

    /// Initial-data side (t ≤ a) without the migration factor.
    fn initial_side(&self, t: f64, a: f64) -> Option<Vec<f64>> {
        let y = a - t;
        let base = self.cfg.duration.survival(y);
        if base < SURVIVAL_FLOOR {
            return None;
        }
        let ratio = self.cfg.duration.survival(a) / base;
        Some(self.cfg.initial_density(y).into_iter().map(|d| d * ratio).collect())
    }

    /// ī(t, a); the line a = t belongs to the initial-data side.
    pub fn eval_density(&self, t: f64, a: f64) -> Vec<f64> {
        debug_assert!(t >= 0.0 && t <= self.horizon() + 1e-12 && a >= 0.0);
        let l = self.num_patches();
        if t <= a {
            match self.initial_side(t, a) {
                Some(x) => row_times(&x, &transition_matrix(&self.gen, t).p),
                None => vec![0.0; l],
            }
        } else {
            let fc = self.cfg.duration.survival(a);
            let x: Vec<f64> = self.trace(t - a).into_iter().map(|v| v * fc).collect();
            row_times(&x, &transition_matrix(&self.gen, a).p)
        }
    }

    /// ∂_t ī + ∂_a ī + μ(a) ī − ī Q by central differences.
    pub fn pde_residual(&self, t: f64, a: f64, eps: f64) -> Vec<f64> {
        let l = self.num_patches();
        let dt_p = self.eval_density(t + eps, a);
        let dt_m = self.eval_density(t - eps, a);
        let da_p = self.eval_density(t, a + eps);
        let da_m = self.eval_density(t, a - eps);
        let x = self.eval_density(t, a);
        let mu = self.cfg.duration.hazard_rate(a).unwrap_or(0.0);
        let q = self.gen.matrix();
        (0..l)
            .map(|j| {
                let xq: f64 = (0..l).map(|i| x[i] * q[(i, j)]).sum();
                (dt_p[j] - dt_m[j] + da_p[j] - da_m[j]) / (2.0 * eps) + mu * x[j] - xq
            })
            .collect()
    }

    /// σ_ℓ(t) = S̄_ℓ/B̄_ℓ^γ at time t.
    fn sigma(&self, t: f64) -> Vec<f64> {
        let b = &self.boundary;
        (0..b.num_patches)
            .map(|p| super::sigma(b.interpolate(&b.s, t, p), b.interpolate(&b.b, t, p), self.cfg.gamma))
            .collect()
    }

    /// Composite Gauss–Legendre (4 points per panel) over [0, A0 + t] with
    /// about `k` nodes, split at a = t and the profile kinks.
    fn age_integral(&self, t: f64, k: usize, weight: impl Fn(f64) -> f64) -> Vec<f64> {
        let l = self.num_patches();
        let top = self.cfg.initial.age_support + t;
        let mut cuts = vec![0.0, t, top];
        cuts.extend(self.cfg.infectivity.profile.kinks().into_iter().filter(|&x| x > 0.0 && x < top));
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        let panels_total = (k / 4).max(cuts.len());
        let (gx, gw) = gauss_legendre_unit(4);
        let mut out = vec![0.0; l];
        for w in cuts.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if hi <= lo {
                continue;
            }
            let panels = ((panels_total as f64 * (hi - lo) / top).ceil() as usize).max(1);
            let width = (hi - lo) / panels as f64;
            for pi in 0..panels {
                let a0 = lo + pi as f64 * width;
                for (x, wt) in gx.iter().zip(&gw) {
                    let a = a0 + x * width;
                    let c = weight(a) * wt * width;
                    if c == 0.0 {
                        continue;
                    }
                    for (o, d) in out.iter_mut().zip(self.eval_density(t, a)) {
                        *o += c * d;
                    }
                }
            }
        }
        out
    }

    fn boundary_residual(&self, t: f64, integral: &[f64]) -> Vec<f64> {
        let l = self.num_patches();
        let sig = self.sigma(t);
        let tr = self.trace(t);
        (0..l)
            .map(|p| {
                let force: f64 = (0..l).map(|q| self.cfg.beta[(p, q)] * integral[q]).sum();
                sig[p] * force - tr[p]
            })
            .collect()
    }

    /// Right-hand side of the age-integral boundary condition minus ī(t, 0),
    /// with weight λ̄(a)/F^c(a) on the whole age range (every infected of
    /// age a is known to have survived to a).
    pub fn boundary_integral_check(&self, t: f64, k: usize) -> Vec<f64> {
        let d = &self.cfg.duration;
        let integral = self.age_integral(t, k, |a| {
            let fc = d.survival(a);
            if fc < SURVIVAL_FLOOR {
                0.0
            } else {
                self.cfg.mean_infectivity(a) / fc
            }
        });
        self.boundary_residual(t, &integral)
    }

    /// Same residual with the weight written as E[ξ]·λ̃(a).
    pub fn boundary_integral_check_profile(&self, t: f64, k: usize) -> Vec<f64> {
        let law = &self.cfg.infectivity;
        let integral = self.age_integral(t, k, |a| law.scaler.mean() * law.profile.value(a));
        self.boundary_residual(t, &integral)
    }

    /// 𝔍(t, a) = ∫₀^a ī(t, y) dy. The boundary-data part (y < t) uses
    /// 8-point Gauss–Legendre on each cell between kinks of the interpolated
    /// trace; the initial-data part (y ≥ t) is adaptive.
    pub fn cumulative_from_density(&self, t: f64, a: f64) -> Vec<f64> {
        let l = self.num_patches();
        let l2 = l * l;
        let mut out = vec![0.0; l];
        if a <= 0.0 {
            return out;
        }
        let h = self.boundary.h;
        let d = &self.cfg.duration;
        let upper = a.min(t);
        if upper > 0.0 {
            // Trace kinks sit at y = t − j·h. Write t = m·h + φ; on the cell
            // y ∈ [t − (j+1)h, t − jh], y = (m − j − 1)h + φ + x·h.
            let m = ((t / h).floor() as usize).min(self.boundary.steps());
            let phi = t - m as f64 * h;
            let (gx, gw) = gauss_legendre_unit(8);
            let offsets: Vec<Vec<f64>> = gx
                .iter()
                .map(|&x| to_flat(&transition_matrix(&self.gen, phi + x * h).p))
                .collect();
            let mut pm = vec![0.0; l2];
            let mut acc = vec![0.0; l];
            for j in 0..=m {
                let hi = t - j as f64 * h;
                let lo = (hi - h).max(0.0);
                if hi <= 0.0 || lo >= upper {
                    continue;
                }
                if j < m && hi <= upper {
                    // p(y) = p((m − j − 1)h)·p(φ + x h)
                    let base = self.boundary.p_at(m - j - 1);
                    for (k, (x, w)) in gx.iter().zip(&gw).enumerate() {
                        let y = lo + x * h;
                        for r in 0..l {
                            for c in 0..l {
                                pm[r * l + c] = (0..l).map(|q| base[r * l + q] * offsets[k][q * l + c]).sum();
                            }
                        }
                        let tr = self.trace(t - y);
                        let c = w * h * d.survival(y);
                        for col in 0..l {
                            acc[col] += c * (0..l).map(|r| tr[r] * pm[r * l + col]).sum::<f64>();
                        }
                    }
                } else {
                    let hi = hi.min(upper);
                    for (x, w) in gx.iter().zip(&gw) {
                        let v = self.eval_density(t, lo + x * (hi - lo));
                        for p in 0..l {
                            acc[p] += w * (hi - lo) * v[p];
                        }
                    }
                }
            }
            out = acc;
        }
        if a > t {
            let span = (a - t).min(self.cfg.initial.age_support);
            let part = integrate_adaptive(
                |u| self.initial_side(t, u + t).unwrap_or_else(|| vec![0.0; l]),
                0.0,
                span,
                l,
                1e-13,
            );
            let moved = row_times(&part, &transition_matrix(&self.gen, t).p);
            for p in 0..l {
                out[p] += moved[p];
            }
        }
        out
    }
}
