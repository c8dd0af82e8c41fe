//! Cross-engine agreement and reductions to known models.

use rand::Rng;
use serde::Serialize;
use serde_json::json;

use super::{sir_oracle, sup_gap, Check, StudyReport};
use crate::error::{Error, Result};
use crate::limit::{solve_limit, steps_for, LimitOptions};
use crate::model::{DurationKind, ModelConfig, Profile, Scaler};
use crate::pde::{solve_boundary, AgeDensity};
use crate::rng::stream;

#[derive(Debug, Clone, Serialize)]
pub struct CrosscheckOptions {
    pub h: f64,
    pub probes: usize,
    pub seed: u64,
    /// Spacing of stored surface rows/columns used as probe nodes.
    pub probe_spacing: f64,
}

impl Default for CrosscheckOptions {
    fn default() -> Self {
        Self {
            h: 2e-3,
            probes: 100,
            seed: 7,
            probe_spacing: 0.05,
        }
    }
}

/// Boundary trace vs Ῡ, and ∫ ī(t, ·) vs the marched surface 𝔍̄ at random
/// stored nodes with a ≤ A0 + t.
pub fn crosscheck(cfg: &ModelConfig, opts: &CrosscheckOptions) -> Result<StudyReport> {
    let h = opts.h;
    let stride = steps_for(opts.probe_spacing, h, "probe_spacing")?;
    let lim = solve_limit(cfg, &LimitOptions::new(h).with_surface(stride, stride))?;
    let bs = solve_boundary(cfg, h)?;
    let trace_gap = sup_gap(&bs.trace, &lim.upsilon);
    let i_gap = sup_gap(&bs.i, &lim.i);
    let density = AgeDensity::new(cfg, bs)?;
    let surf = lim.surface.as_ref().expect("surface requested");

    let mut rng = stream(opts.seed, 0);
    let mut probe_gap = 0.0f64;
    let mut worst = (0.0, 0.0);
    let a0 = cfg.initial.age_support;
    for _ in 0..opts.probes {
        let ti = rng.random_range(1..surf.times.len());
        let t = surf.times[ti];
        let max_a = ((a0 + t) / opts.probe_spacing).floor() as usize;
        let ai = rng.random_range(1..=max_a.min(surf.ages.len() - 1));
        let a = surf.ages[ai];
        let g = sup_gap(&density.cumulative_from_density(t, a), surf.at(ti, ai));
        if g > probe_gap {
            probe_gap = g;
            worst = (t, a);
        }
    }
    let band = 10.0 * h * h;
    let checks = vec![
        Check::below("trace vs rate sup-gap", trace_gap, 1e-6f64.max(band)),
        Check::below("cumulative vs surface max-gap", probe_gap, band),
        Check::below("surface terminal vs I", lim.surface_gap, 1e-8),
    ];
    Ok(StudyReport::new(
        "crosscheck",
        checks,
        json!({
            "options": opts,
            "trace_gap": trace_gap,
            "i_gap": i_gap,
            "probe_gap": probe_gap,
            "worst_probe": worst,
            "surface_min_increment": lim.surface_min_increment,
        }),
    ))
}

/// With Q = 0: ī(t, a) = F^c(a)·ī(t − a, 0) for a < t, checked to 1e-14
/// relative at random points.
pub fn reduce_q0(cfg: &ModelConfig, h: f64, probes: usize, seed: u64) -> Result<StudyReport> {
    let mut homogeneous = cfg.clone();
    homogeneous.nu_i = nalgebra::DMatrix::zeros(cfg.num_patches, cfg.num_patches);
    let bs = solve_boundary(&homogeneous, h)?;
    let density = AgeDensity::new(&homogeneous, bs)?;
    let mut rng = stream(seed, 0);
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let t = rng.random_range(0.0..homogeneous.horizon);
        let a = rng.random_range(0.0..t.max(f64::MIN_POSITIVE));
        if a >= t {
            continue;
        }
        let x = density.eval_density(t, a);
        let tr = density.trace(t - a);
        let fc = homogeneous.duration.survival(a);
        for p in 0..homogeneous.num_patches {
            let expected = fc * tr[p];
            let scale = expected.abs().max(f64::MIN_POSITIVE);
            worst = worst.max((x[p] - expected).abs() / scale);
        }
    }
    Ok(StudyReport::new(
        "reduce-q0",
        vec![Check::below("relative identity error", worst, 1e-14)],
        json!({ "h": h, "probes": probes, "seed": seed }),
    ))
}

/// The single-patch, constant-infectivity, exponential-duration model is the
/// classical SIR ODE; both deterministic engines must reproduce it.
pub fn reduce_sir(cfg: &ModelConfig, h: f64) -> Result<StudyReport> {
    let rate = match (cfg.num_patches, cfg.duration.kind, cfg.infectivity.profile, cfg.infectivity.scaler) {
        (1, DurationKind::Exponential { rate }, Profile::Constant { level }, Scaler::Constant { value })
            if cfg.duration.upper_truncation.is_none() =>
        {
            (rate, level * value)
        }
        _ => {
            return Err(Error::invalid(
                "config",
                "reduce-sir needs one patch, exponential duration and constant infectivity",
            ))
        }
    };
    let (mu, level) = rate;
    let beta = cfg.beta[(0, 0)] * level;
    let s0 = cfg.initial.s0[0];
    let i0 = cfg.initial.i0()[0];
    let ode = sir_oracle(beta, mu, s0, i0, cfg.horizon, h)?;
    let lim = solve_limit(cfg, &LimitOptions::new(h))?;
    let bs = solve_boundary(cfg, h)?;
    let force: Vec<f64> = ode.s.iter().zip(&ode.i).map(|(s, i)| beta * s * i).collect();
    let band = 5e-5;
    let checks = vec![
        Check::below("lln S", sup_gap(&lim.s, &ode.s), band),
        Check::below("lln I", sup_gap(&lim.i, &ode.i), band),
        Check::below("lln rate", sup_gap(&lim.upsilon, &force), band),
        Check::below("pde S", sup_gap(&bs.s, &ode.s), band),
        Check::below("pde I", sup_gap(&bs.i, &ode.i), band),
        Check::below("pde trace", sup_gap(&bs.trace, &force), band),
    ];
    let (peak_t, peak_i) = ode.peak();
    Ok(StudyReport::new(
        "reduce-sir",
        checks,
        json!({ "h": h, "beta": beta, "mu": mu, "peak_t": peak_t, "peak_i": peak_i }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets;

    #[test]
    fn sir_reduction_coarse_grid() {
        // At h = 0.01 the O(h²) error is still well inside 5e-5 · 100.
        let mut cfg = presets::sir();
        cfg.horizon = 10.0;
        let rep = reduce_sir(&cfg, 0.01).unwrap();
        for c in &rep.checks {
            assert!(c.value < 5e-3, "{c:?}");
        }
    }

    #[test]
    fn sir_reduction_rejects_other_models() {
        assert!(reduce_sir(&presets::reference(), 0.01).is_err());
    }

    #[test]
    fn q0_identity_holds() {
        let rep = reduce_q0(&presets::reference(), 0.01, 200, 3).unwrap();
        assert!(rep.passed, "{:?}", rep.checks);
    }

    #[test]
    fn crosscheck_coarse() {
        let opts = CrosscheckOptions {
            h: 0.01,
            probes: 20,
            ..CrosscheckOptions::default()
        };
        let rep = crosscheck(&presets::reference(), &opts).unwrap();
        assert!(rep.passed, "{:?}", rep.checks);
    }
}
