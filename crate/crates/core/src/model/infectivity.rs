//! Random infectivity law λ(t) = ξ·λ̃(t)·1{t < η}.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::duration::DurationDistribution;
use crate::error::{Error, Result};

/// Deterministic infectivity shape λ̃ as a function of infection age.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Profile {
    Constant { level: f64 },
    /// Linear rise from 0 to `peak` on [0, rise_end], plateau until
    /// `plateau_end`, linear decay to `floor` at `decay_end`, then `floor`.
    RisePlateauDecay {
        peak: f64,
        rise_end: f64,
        plateau_end: f64,
        decay_end: f64,
        floor: f64,
    },
    /// Gamma-kernel bump `peak·(t/m)^{k-1}·exp(-(t-m)/θ)` with mode m = (k-1)θ.
    GammaKernel { shape: f64, scale: f64, peak: f64 },
}

impl Profile {
    pub fn value(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match *self {
            Profile::Constant { level } => level,
            Profile::RisePlateauDecay {
                peak,
                rise_end,
                plateau_end,
                decay_end,
                floor,
            } => {
                if t < rise_end {
                    peak * t / rise_end
                } else if t < plateau_end {
                    peak
                } else if t < decay_end {
                    peak + (floor - peak) * (t - plateau_end) / (decay_end - plateau_end)
                } else {
                    floor
                }
            }
            Profile::GammaKernel { shape, scale, peak } => {
                let mode = (shape - 1.0) * scale;
                if t == 0.0 {
                    return 0.0;
                }
                peak * ((shape - 1.0) * (t / mode).ln() - (t - mode) / scale).exp()
            }
        }
    }

    pub fn sup(&self) -> f64 {
        match *self {
            Profile::Constant { level } => level,
            Profile::RisePlateauDecay { peak, floor, .. } => peak.max(floor),
            Profile::GammaKernel { peak, .. } => peak,
        }
    }

    /// Ages where λ̃ is not differentiable.
    pub fn kinks(&self) -> Vec<f64> {
        match *self {
            Profile::RisePlateauDecay {
                rise_end,
                plateau_end,
                decay_end,
                ..
            } => vec![rise_end, plateau_end, decay_end],
            _ => Vec::new(),
        }
    }

    fn validate(&self, path: &str) -> Result<()> {
        let check = |name: &str, ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("{path}.{name}"), msg.to_string()))
            }
        };
        match *self {
            Profile::Constant { level } => {
                check("level", level.is_finite() && level > 0.0, "must be positive")
            }
            Profile::RisePlateauDecay {
                peak,
                rise_end,
                plateau_end,
                decay_end,
                floor,
            } => {
                check("peak", peak.is_finite() && peak > 0.0, "must be positive")?;
                check("rise_end", rise_end > 0.0, "must be positive")?;
                check("plateau_end", plateau_end >= rise_end, "must be >= rise_end")?;
                check("decay_end", decay_end > plateau_end, "must be > plateau_end")?;
                // λ̃ > 0 on (0, ∞) keeps sup{t: λ(t) > 0} = η.
                check(
                    "floor",
                    floor.is_finite() && floor > 0.0,
                    "must be positive so that infectivity vanishes exactly at recovery",
                )
            }
            Profile::GammaKernel { shape, scale, peak } => {
                check("shape", shape > 1.0, "must exceed 1")?;
                check("scale", scale > 0.0, "must be positive")?;
                check("peak", peak.is_finite() && peak > 0.0, "must be positive")
            }
        }
    }
}

/// Law of the bounded random multiplier ξ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Scaler {
    Constant { value: f64 },
    Uniform { low: f64, high: f64 },
}

impl Scaler {
    pub fn mean(&self) -> f64 {
        match *self {
            Scaler::Constant { value } => value,
            Scaler::Uniform { low, high } => 0.5 * (low + high),
        }
    }

    pub fn max(&self) -> f64 {
        match *self {
            Scaler::Constant { value } => value,
            Scaler::Uniform { high, .. } => high,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Scaler::Constant { value } => value,
            Scaler::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
        }
    }

    fn validate(&self, path: &str) -> Result<()> {
        match *self {
            Scaler::Constant { value } if value.is_finite() && value > 0.0 => Ok(()),
            Scaler::Constant { .. } => Err(Error::config(format!("{path}.value"), "must be positive")),
            Scaler::Uniform { low, high } if low >= 0.0 && high > low && high.is_finite() => Ok(()),
            Scaler::Uniform { .. } => Err(Error::config(
                format!("{path}.high"),
                "uniform scaler needs 0 <= low < high < inf",
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfectivityLaw {
    pub profile: Profile,
    pub scaler: Scaler,
}

impl InfectivityLaw {
    pub fn new(profile: Profile, scaler: Scaler) -> Self {
        Self { profile, scaler }
    }

    /// λ* = max(ξ)·sup λ̃, the almost-sure bound used for thinning.
    pub fn lambda_star(&self) -> f64 {
        self.scaler.max() * self.profile.sup()
    }

    /// Realized infectivity of a path with multiplier `xi` and duration `eta` at age `t`.
    #[inline]
    pub fn realized(&self, xi: f64, eta: f64, t: f64) -> f64 {
        if t < eta {
            xi * self.profile.value(t)
        } else {
            0.0
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        self.profile.validate(&format!("{path}.profile"))?;
        self.scaler.validate(&format!("{path}.scaler"))
    }
}

/// λ̄(t) = E[λ(t)] = E[ξ]·λ̃(t)·F^c(t).
pub fn mean_infectivity(law: &InfectivityLaw, duration: &DurationDistribution, t: f64) -> f64 {
    if t < 0.0 {
        return 0.0;
    }
    law.scaler.mean() * law.profile.value(t) * duration.survival(t)
}

/// E[λ(age + t) | η > age] = λ̄(age + t) / F^c(age): mean infectivity, `t`
/// time units later, of an individual known to be infected at age `age`.
pub fn conditional_mean_infectivity(
    law: &InfectivityLaw,
    duration: &DurationDistribution,
    age: f64,
    t: f64,
) -> f64 {
    let base = duration.survival(age);
    if base < super::duration::SURVIVAL_FLOOR {
        return 0.0;
    }
    law.scaler.mean() * law.profile.value(age + t) * (duration.survival(age + t) / base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn rpd() -> Profile {
        Profile::RisePlateauDecay {
            peak: 1.0,
            rise_end: 0.5,
            plateau_end: 2.0,
            decay_end: 4.0,
            floor: 0.2,
        }
    }

    #[test]
    fn constant_profile_exponential_duration() {
        let law = InfectivityLaw::new(Profile::Constant { level: 1.0 }, Scaler::Constant { value: 1.0 });
        let d = DurationDistribution::exponential(1.0);
        assert_relative_eq!(mean_infectivity(&law, &d, 2.0), (-2.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn zero_beyond_truncation() {
        let law = InfectivityLaw::new(rpd(), Scaler::Uniform { low: 0.5, high: 1.5 });
        let d = DurationDistribution::gamma(2.0, 1.0).with_truncation(30.0);
        assert_eq!(mean_infectivity(&law, &d, 30.0), 0.0);
        assert_eq!(mean_infectivity(&law, &d, 45.0), 0.0);
    }

    #[test]
    fn mean_infectivity_matches_monte_carlo() {
        let law = InfectivityLaw::new(rpd(), Scaler::Uniform { low: 0.5, high: 1.5 });
        let d = DurationDistribution::gamma(2.0, 1.0);
        let expected = 1.0 * law.profile.value(1.0) * 2.0 * (-1.0f64).exp();
        assert_relative_eq!(mean_infectivity(&law, &d, 1.0), expected, epsilon = 1e-12);

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 1_000_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let xi = law.scaler.sample(&mut rng);
            let eta = d.sample(&mut rng);
            let v = law.realized(xi, eta, 1.0);
            sum += v;
            sq += v * v;
        }
        let mean = sum / n as f64;
        let sd = (sq / n as f64 - mean * mean).sqrt();
        assert!((mean - expected).abs() < 3.0 * sd / (n as f64).sqrt());
    }

    #[test]
    fn mean_infectivity_bounded_by_lambda_star() {
        let d = DurationDistribution::gamma(2.0, 1.0);
        for law in [
            InfectivityLaw::new(rpd(), Scaler::Uniform { low: 0.5, high: 1.5 }),
            InfectivityLaw::new(
                Profile::GammaKernel { shape: 3.0, scale: 0.7, peak: 2.0 },
                Scaler::Constant { value: 1.2 },
            ),
        ] {
            let star = law.lambda_star();
            for k in 0..4000 {
                let t = k as f64 * 0.01;
                assert!(mean_infectivity(&law, &d, t) <= star);
                assert!(law.realized(law.scaler.max(), 1e9, t) <= star + 1e-15);
            }
        }
    }

    #[test]
    fn realized_path_vanishes_exactly_at_eta() {
        for profile in [
            rpd(),
            Profile::Constant { level: 0.4 },
            Profile::GammaKernel { shape: 2.5, scale: 1.0, peak: 1.0 },
        ] {
            let law = InfectivityLaw::new(profile, Scaler::Constant { value: 1.0 });
            for eta in [0.3, 1.7, 6.0, 25.0] {
                assert!(law.realized(1.0, eta, eta - 1e-9) > 0.0);
                assert_eq!(law.realized(1.0, eta, eta), 0.0);
            }
        }
    }

    #[test]
    fn gamma_kernel_peaks_at_mode() {
        let p = Profile::GammaKernel { shape: 3.0, scale: 0.5, peak: 2.0 };
        assert_relative_eq!(p.value(1.0), 2.0, epsilon = 1e-14);
        assert!(p.value(0.9) < 2.0 && p.value(1.1) < 2.0);
    }
}
