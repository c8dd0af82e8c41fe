//! Law of the infectious period η.

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF};

use crate::error::{Error, Result};

/// Survival values below this are treated as a fully recovered cohort.
pub const SURVIVAL_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DurationKind {
    Exponential { rate: f64 },
    Gamma { shape: f64, scale: f64 },
    Lognormal { meanlog: f64, sdlog: f64 },
    Weibull { shape: f64, scale: f64 },
}

/// Absolutely continuous law of the infectious period, with an optional hard
/// truncation age beyond which the survival function is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationDistribution {
    #[serde(flatten)]
    pub kind: DurationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper_truncation: Option<f64>,
}

impl DurationDistribution {
    pub fn new(kind: DurationKind) -> Self {
        Self {
            kind,
            upper_truncation: None,
        }
    }

    pub fn exponential(rate: f64) -> Self {
        Self::new(DurationKind::Exponential { rate })
    }

    pub fn gamma(shape: f64, scale: f64) -> Self {
        Self::new(DurationKind::Gamma { shape, scale })
    }

    pub fn lognormal(meanlog: f64, sdlog: f64) -> Self {
        Self::new(DurationKind::Lognormal { meanlog, sdlog })
    }

    pub fn weibull(shape: f64, scale: f64) -> Self {
        Self::new(DurationKind::Weibull { shape, scale })
    }

    pub fn with_truncation(mut self, a_max: f64) -> Self {
        self.upper_truncation = Some(a_max);
        self
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(
                    format!("{path}.{name}"),
                    format!("must be a positive finite number, got {v}"),
                ))
            }
        };
        match self.kind {
            DurationKind::Exponential { rate } => positive("rate", rate)?,
            DurationKind::Gamma { shape, scale } => {
                positive("shape", shape)?;
                positive("scale", scale)?;
                // f must stay bounded at 0 for the age-grid quadratures.
                if shape < 1.0 {
                    return Err(Error::config(
                        format!("{path}.shape"),
                        "gamma shape below 1 has an unbounded density at 0",
                    ));
                }
            }
            DurationKind::Lognormal { meanlog, sdlog } => {
                if !meanlog.is_finite() {
                    return Err(Error::config(format!("{path}.meanlog"), "must be finite"));
                }
                positive("sdlog", sdlog)?;
            }
            DurationKind::Weibull { shape, scale } => {
                positive("shape", shape)?;
                positive("scale", scale)?;
                if shape < 1.0 {
                    return Err(Error::config(
                        format!("{path}.shape"),
                        "weibull shape below 1 has an unbounded density at 0",
                    ));
                }
            }
        }
        if let Some(a_max) = self.upper_truncation {
            positive("upper_truncation", a_max)?;
            let tail = self.untruncated_survival(a_max);
            if tail > 1e-8 {
                log::warn!(
                    "{path}.upper_truncation = {a_max} leaves F^c(A_max) = {tail:e} > 1e-8"
                );
            }
        }
        Ok(())
    }

    fn untruncated_survival(&self, a: f64) -> f64 {
        if a <= 0.0 {
            return 1.0;
        }
        match self.kind {
            DurationKind::Exponential { rate } => (-rate * a).exp(),
            DurationKind::Gamma { shape, scale } => statrs::distribution::Gamma::new(shape, 1.0 / scale)
                .expect("validated gamma parameters")
                .sf(a),
            DurationKind::Lognormal { meanlog, sdlog } => {
                statrs::distribution::LogNormal::new(meanlog, sdlog)
                    .expect("validated lognormal parameters")
                    .sf(a)
            }
            DurationKind::Weibull { shape, scale } => (-(a / scale).powf(shape)).exp(),
        }
    }

    fn untruncated_density(&self, a: f64) -> f64 {
        if a < 0.0 {
            return 0.0;
        }
        match self.kind {
            DurationKind::Exponential { rate } => rate * (-rate * a).exp(),
            DurationKind::Gamma { shape, scale } => {
                if a == 0.0 {
                    return if shape == 1.0 { 1.0 / scale } else { 0.0 };
                }
                statrs::distribution::Gamma::new(shape, 1.0 / scale)
                    .expect("validated gamma parameters")
                    .pdf(a)
            }
            DurationKind::Lognormal { meanlog, sdlog } => {
                if a == 0.0 {
                    return 0.0;
                }
                statrs::distribution::LogNormal::new(meanlog, sdlog)
                    .expect("validated lognormal parameters")
                    .pdf(a)
            }
            DurationKind::Weibull { shape, scale } => {
                if a == 0.0 {
                    return if shape == 1.0 { 1.0 / scale } else { 0.0 };
                }
                let z = a / scale;
                shape / scale * z.powf(shape - 1.0) * (-z.powf(shape)).exp()
            }
        }
    }

    fn truncated(&self, a: f64) -> bool {
        matches!(self.upper_truncation, Some(m) if a >= m)
    }

    /// F^c(a); equal to 1 for a ≤ 0.
    pub fn survival(&self, a: f64) -> f64 {
        if self.truncated(a) {
            0.0
        } else {
            self.untruncated_survival(a)
        }
    }

    pub fn cdf(&self, a: f64) -> f64 {
        1.0 - self.survival(a)
    }

    pub fn density(&self, a: f64) -> f64 {
        if self.truncated(a) {
            0.0
        } else {
            self.untruncated_density(a)
        }
    }

    pub fn mean(&self) -> f64 {
        match self.kind {
            DurationKind::Exponential { rate } => 1.0 / rate,
            DurationKind::Gamma { shape, scale } => shape * scale,
            DurationKind::Lognormal { meanlog, sdlog } => (meanlog + 0.5 * sdlog * sdlog).exp(),
            DurationKind::Weibull { shape, scale } => {
                scale * statrs::function::gamma::gamma(1.0 + 1.0 / shape)
            }
        }
    }

    fn checked_survival(&self, a: f64) -> Result<f64> {
        let survival = self.survival(a);
        if survival < SURVIVAL_FLOOR {
            Err(Error::SurvivalUnderflow {
                age: a,
                survival,
                floor: SURVIVAL_FLOOR,
            })
        } else {
            Ok(survival)
        }
    }

    /// μ(a) = f(a) / F^c(a).
    pub fn hazard_rate(&self, a: f64) -> Result<f64> {
        if let DurationKind::Exponential { rate } = self.kind {
            self.checked_survival(a)?;
            return Ok(rate);
        }
        let survival = self.checked_survival(a)?;
        Ok(self.density(a) / survival)
    }

    /// F₀(t | s) = 1 − F^c(t + s) / F^c(s): law of the remaining period of an
    /// individual already infected for `s`.
    pub fn residual_cdf(&self, s: f64, t: f64) -> Result<f64> {
        let base = self.checked_survival(s)?;
        if t <= 0.0 {
            return Ok(0.0);
        }
        let ratio = match self.kind {
            // Memoryless; avoids cancellation in the ratio.
            DurationKind::Exponential { rate } if !self.truncated(s + t) => (-rate * t).exp(),
            _ => self.survival(s + t) / base,
        };
        Ok((1.0 - ratio).clamp(0.0, 1.0))
    }

    /// Smallest x with F^c(x) ≤ p, for p in (0, 1].
    pub fn inverse_survival(&self, p: f64) -> f64 {
        debug_assert!(p > 0.0 && p <= 1.0);
        if p >= 1.0 {
            return 0.0;
        }
        let x = match self.kind {
            DurationKind::Exponential { rate } => -p.ln() / rate,
            DurationKind::Weibull { shape, scale } => scale * (-p.ln()).powf(1.0 / shape),
            _ => self.solve_survival(p),
        };
        match self.upper_truncation {
            Some(m) if x >= m => m,
            _ => x,
        }
    }

    /// Safeguarded Newton on ln F^c(x) = ln p; derivative is −μ(x).
    fn solve_survival(&self, p: f64) -> f64 {
        let target = p.ln();
        let mut lo = 0.0_f64;
        let mut hi = self.mean().max(1e-3);
        while self.untruncated_survival(hi) > p {
            lo = hi;
            hi *= 2.0;
            if hi > 1e12 {
                return hi;
            }
        }
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let sf = self.untruncated_survival(x);
            let g = sf.ln() - target;
            if g > 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let mu = self.untruncated_density(x) / sf;
            let mut next = if mu > 0.0 && mu.is_finite() {
                x + g / mu
            } else {
                0.5 * (lo + hi)
            };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - x).abs() <= 1e-14 * x.max(1.0) || hi - lo <= 1e-14 * hi.max(1.0) {
                return next;
            }
            x = next;
        }
        x
    }

    /// Draw η from the unconditional law.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let x = match self.kind {
            DurationKind::Exponential { rate } => {
                rand_distr::Exp::new(rate).expect("validated rate").sample(rng)
            }
            DurationKind::Gamma { shape, scale } => rand_distr::Gamma::new(shape, scale)
                .expect("validated gamma")
                .sample(rng),
            DurationKind::Lognormal { meanlog, sdlog } => rand_distr::LogNormal::new(meanlog, sdlog)
                .expect("validated lognormal")
                .sample(rng),
            DurationKind::Weibull { shape, scale } => rand_distr::Weibull::new(scale, shape)
                .expect("validated weibull")
                .sample(rng),
        };
        match self.upper_truncation {
            Some(m) if x >= m => m,
            _ => x,
        }
    }

    /// Draw the remaining period of an individual infected for `age`, by
    /// inverting F₀(· | age).
    pub fn sample_residual<R: Rng + ?Sized>(&self, age: f64, rng: &mut R) -> Result<f64> {
        let base = self.checked_survival(age)?;
        // u in (0, 1] so the target survival is strictly positive.
        let u: f64 = 1.0 - rng.random::<f64>();
        if let DurationKind::Exponential { rate } = self.kind {
            let r = -u.ln() / rate;
            return Ok(match self.upper_truncation {
                Some(m) if age + r >= m => m - age,
                _ => r,
            });
        }
        let x = self.inverse_survival(u * base);
        Ok((x - age).max(0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn catalog() -> Vec<DurationDistribution> {
        vec![
            DurationDistribution::exponential(0.7),
            DurationDistribution::gamma(2.0, 1.0),
            DurationDistribution::gamma(3.5, 0.6),
            DurationDistribution::lognormal(0.4, 0.5),
            DurationDistribution::weibull(1.7, 2.2),
        ]
    }

    /// Composite Simpson on [a, b].
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(a + i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn exponential_hazard_is_constant() {
        let d = DurationDistribution::exponential(0.5);
        assert_eq!(d.hazard_rate(3.7).unwrap(), 0.5);
    }

    #[test]
    fn hazard_at_zero_with_vanishing_density() {
        let d = DurationDistribution::gamma(2.0, 1.0);
        assert_eq!(d.hazard_rate(0.0).unwrap(), 0.0);
    }

    #[test]
    fn gamma_two_hazard_matches_quadrature_oracle() {
        // f(a) = a e^{-a}; survival from quadrature of f on [a, 60].
        let f = |a: f64| a * (-a).exp();
        let survival = simpson(f, 1.0, 60.0, 20_000);
        let oracle = f(1.0) / survival;
        assert_relative_eq!(oracle, 0.5, epsilon = 1e-10);
        let d = DurationDistribution::gamma(2.0, 1.0);
        assert_relative_eq!(d.hazard_rate(1.0).unwrap(), oracle, epsilon = 1e-12);
    }

    #[test]
    fn hazard_errors_on_underflow() {
        let d = DurationDistribution::exponential(1.0);
        assert!(matches!(
            d.hazard_rate(800.0),
            Err(Error::SurvivalUnderflow { .. })
        ));
        let t = DurationDistribution::gamma(2.0, 1.0).with_truncation(30.0);
        assert!(t.hazard_rate(30.0).is_err());
        assert!(t.hazard_rate(29.0).is_ok());
    }

    #[test]
    fn residual_cdf_examples() {
        let mu = 0.8;
        let d = DurationDistribution::exponential(mu);
        for t in [0.1, 1.0, 4.0] {
            assert_relative_eq!(
                d.residual_cdf(5.0, t).unwrap(),
                1.0 - (-mu * t).exp(),
                epsilon = 1e-14
            );
        }
        for d in catalog() {
            for t in [0.3, 1.1, 2.5] {
                assert_relative_eq!(d.residual_cdf(0.0, t).unwrap(), d.cdf(t), epsilon = 1e-14);
            }
        }
        let g = DurationDistribution::gamma(2.0, 1.0);
        let expected = 1.0 - 3.0 * (-2.0f64).exp() / (2.0 * (-1.0f64).exp());
        assert_relative_eq!(g.residual_cdf(1.0, 1.0).unwrap(), expected, epsilon = 1e-13);
        // 1 - 1.5/e = 0.448181...
        assert!((expected - 0.44817).abs() < 2e-5);
    }

    #[test]
    fn residual_cdf_matches_rejection_sampling() {
        // Monte-Carlo oracle: draw η, keep η > 1, count η - 1 ≤ 1.
        let g = DurationDistribution::gamma(2.0, 1.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (mut kept, mut hit) = (0u64, 0u64);
        while kept < 200_000 {
            let eta = g.sample(&mut rng);
            if eta > 1.0 {
                kept += 1;
                if eta - 1.0 <= 1.0 {
                    hit += 1;
                }
            }
        }
        let p = hit as f64 / kept as f64;
        let exact = g.residual_cdf(1.0, 1.0).unwrap();
        let se = (exact * (1.0 - exact) / kept as f64).sqrt();
        assert!((p - exact).abs() < 4.0 * se, "{p} vs {exact}");
    }

    #[test]
    fn densities_integrate_to_one() {
        for d in catalog() {
            let total = simpson(|a| d.density(a), 0.0, 80.0, 200_000);
            assert!((total - 1.0).abs() < 1e-6, "{d:?}: {total}");
            assert_eq!(d.survival(0.0), 1.0);
        }
    }

    #[test]
    fn inverse_survival_round_trips() {
        for d in catalog() {
            for p in [0.9, 0.5, 1e-3, 1e-9] {
                let x = d.inverse_survival(p);
                assert_relative_eq!(d.survival(x), p, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn residual_sampling_matches_conditional_law() {
        let g = DurationDistribution::gamma(2.0, 1.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let below = (0..n)
            .filter(|_| g.sample_residual(3.0, &mut rng).unwrap() <= 0.8)
            .count();
        let exact = g.residual_cdf(3.0, 0.8).unwrap();
        let se = (exact * (1.0 - exact) / n as f64).sqrt();
        assert!((below as f64 / n as f64 - exact).abs() < 4.0 * se);
    }

    proptest! {
        #[test]
        fn residual_cdf_is_a_cdf(idx in 0usize..5, s in 0.0f64..6.0, t1 in 0.0f64..5.0, dt in 0.0f64..5.0) {
            let d = catalog()[idx];
            prop_assert_eq!(d.residual_cdf(s, 0.0).unwrap(), 0.0);
            let a = d.residual_cdf(s, t1).unwrap();
            let b = d.residual_cdf(s, t1 + dt).unwrap();
            prop_assert!(b + 1e-15 >= a);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn hazard_is_log_survival_derivative(idx in 0usize..5, a in 0.05f64..6.0) {
            let d = catalog()[idx];
            let eps = 1e-5;
            let fd = -(d.survival(a + eps).ln() - d.survival(a - eps).ln()) / (2.0 * eps);
            prop_assert!((fd - d.hazard_rate(a).unwrap()).abs() < 1e-6);
        }

        #[test]
        fn survival_is_nonincreasing(idx in 0usize..5, a in 0.0f64..20.0, da in 0.0f64..3.0) {
            let d = catalog()[idx];
            prop_assert!(d.survival(a + da) <= d.survival(a));
        }
    }
}
