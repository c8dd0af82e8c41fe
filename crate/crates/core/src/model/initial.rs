//! Initial condition: susceptible/recovered masses and infected age profiles.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Gamma};

use crate::error::{Error, Result};

/// Shape of a per-patch initial infection-age density, normalized on
/// `[0, age_support]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AgeShape {
    TruncatedExponential { rate: f64 },
    Gamma { shape: f64, scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgeProfile {
    /// Ī_ℓ(0), the mass of this patch's initially infected.
    pub mass: f64,
    #[serde(flatten)]
    pub shape: AgeShape,
}

impl AgeProfile {
    pub fn new(mass: f64, shape: AgeShape) -> Self {
        Self { mass, shape }
    }

    fn gamma(shape: f64, scale: f64) -> Gamma {
        Gamma::new(shape, 1.0 / scale).expect("validated gamma parameters")
    }

    fn normalizer(&self, support: f64) -> f64 {
        match self.shape {
            AgeShape::TruncatedExponential { rate } => -(-rate * support).exp_m1(),
            AgeShape::Gamma { shape, scale } => Self::gamma(shape, scale).cdf(support),
        }
    }

    /// Probability density of the age of an initially infected individual.
    pub fn density(&self, a: f64, support: f64) -> f64 {
        if !(0.0..=support).contains(&a) {
            return 0.0;
        }
        let raw = match self.shape {
            AgeShape::TruncatedExponential { rate } => rate * (-rate * a).exp(),
            AgeShape::Gamma { shape, scale } => Self::gamma(shape, scale).pdf(a),
        };
        raw / self.normalizer(support)
    }

    /// Distribution function of the normalized age profile.
    pub fn cdf(&self, a: f64, support: f64) -> f64 {
        if a <= 0.0 {
            return 0.0;
        }
        if a >= support {
            return 1.0;
        }
        let raw = match self.shape {
            AgeShape::TruncatedExponential { rate } => -(-rate * a).exp_m1(),
            AgeShape::Gamma { shape, scale } => Self::gamma(shape, scale).cdf(a),
        };
        raw / self.normalizer(support)
    }

    /// ī_ℓ(0, a) = mass · density.
    pub fn infected_density(&self, a: f64, support: f64) -> f64 {
        self.mass * self.density(a, support)
    }

    pub fn sample_age<R: Rng + ?Sized>(&self, support: f64, rng: &mut R) -> f64 {
        let u = rng.random::<f64>();
        match self.shape {
            AgeShape::TruncatedExponential { rate } => {
                let z = self.normalizer(support);
                (-(-u * z).ln_1p() / rate).min(support)
            }
            AgeShape::Gamma { shape, scale } => {
                // Inverse of the truncated CDF by bisection; the CDF is cheap
                // and this keeps one uniform per draw.
                let z = self.normalizer(support);
                let g = Self::gamma(shape, scale);
                let target = u * z;
                let (mut lo, mut hi) = (0.0, support);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if g.cdf(mid) < target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }

    fn validate(&self, path: &str, support: f64) -> Result<()> {
        if !(self.mass.is_finite() && (0.0..=1.0).contains(&self.mass)) {
            return Err(Error::config(format!("{path}.mass"), "must lie in [0, 1]"));
        }
        match self.shape {
            AgeShape::TruncatedExponential { rate } => {
                if !(rate.is_finite() && rate > 0.0) {
                    return Err(Error::config(format!("{path}.rate"), "must be positive"));
                }
            }
            AgeShape::Gamma { shape, scale } => {
                // shape >= 1 keeps the density bounded at age 0.
                if !(shape.is_finite() && shape >= 1.0) {
                    return Err(Error::config(
                        format!("{path}.shape"),
                        "must be >= 1 for a bounded age density",
                    ));
                }
                if !(scale.is_finite() && scale > 0.0) {
                    return Err(Error::config(format!("{path}.scale"), "must be positive"));
                }
            }
        }
        if self.normalizer(support) <= 1e-12 {
            return Err(Error::config(
                format!("{path}"),
                "profile has no mass on [0, age_support]",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub s0: Vec<f64>,
    pub r0: Vec<f64>,
    /// Upper end A0 of the support of every initial age profile.
    pub age_support: f64,
    pub i0_profile: Vec<AgeProfile>,
}

impl InitialCondition {
    pub fn i0(&self) -> Vec<f64> {
        self.i0_profile.iter().map(|p| p.mass).collect()
    }

    /// ī(0, a) as a row vector over patches.
    pub fn density(&self, a: f64) -> Vec<f64> {
        self.i0_profile
            .iter()
            .map(|p| p.infected_density(a, self.age_support))
            .collect()
    }

    pub fn validate(&self, num_patches: usize, path: &str) -> Result<()> {
        if !(self.age_support.is_finite() && self.age_support > 0.0) {
            return Err(Error::config(format!("{path}.age_support"), "must be positive"));
        }
        for (name, v) in [("s0", &self.s0), ("r0", &self.r0)] {
            if v.len() != num_patches {
                return Err(Error::config(
                    format!("{path}.{name}"),
                    format!("expected {num_patches} entries, found {}", v.len()),
                ));
            }
            if let Some(k) = v.iter().position(|x| !(x.is_finite() && (0.0..=1.0).contains(x))) {
                return Err(Error::config(format!("{path}.{name}[{k}]"), "must lie in [0, 1]"));
            }
        }
        if self.i0_profile.len() != num_patches {
            return Err(Error::config(
                format!("{path}.i0_profile"),
                format!("expected {num_patches} entries, found {}", self.i0_profile.len()),
            ));
        }
        for (k, p) in self.i0_profile.iter().enumerate() {
            p.validate(&format!("{path}.i0_profile[{k}]"), self.age_support)?;
        }
        let infected: f64 = self.i0_profile.iter().map(|p| p.mass).sum();
        if infected <= 0.0 {
            return Err(Error::config(
                format!("{path}.i0_profile"),
                "total initial infected mass must be positive",
            ));
        }
        let total: f64 = self.s0.iter().sum::<f64>() + infected + self.r0.iter().sum::<f64>();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::config(
                path.to_string(),
                format!("s0 + i0 + r0 must sum to 1, found {total:.15}"),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn trap(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        (0..=n)
            .map(|k| {
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                w * f(a + k as f64 * h)
            })
            .sum::<f64>()
            * h
    }

    #[test]
    fn profiles_are_normalized() {
        for shape in [
            AgeShape::TruncatedExponential { rate: 1.0 },
            AgeShape::Gamma { shape: 2.0, scale: 0.8 },
        ] {
            let p = AgeProfile::new(0.1, shape);
            assert_relative_eq!(trap(|a| p.density(a, 5.0), 0.0, 5.0, 20000), 1.0, epsilon = 1e-7);
            assert_relative_eq!(p.cdf(2.0, 5.0), trap(|a| p.density(a, 5.0), 0.0, 2.0, 20000), epsilon = 1e-7);
        }
    }

    #[test]
    fn sampled_ages_follow_cdf() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for shape in [
            AgeShape::TruncatedExponential { rate: 1.0 },
            AgeShape::Gamma { shape: 2.0, scale: 0.8 },
        ] {
            let p = AgeProfile::new(1.0, shape);
            let n = 100_000;
            let below = (0..n).filter(|_| p.sample_age(5.0, &mut rng) <= 1.0).count();
            let q = p.cdf(1.0, 5.0);
            let se = (q * (1.0 - q) / n as f64).sqrt();
            assert!((below as f64 / n as f64 - q).abs() < 4.0 * se);
        }
    }
}
