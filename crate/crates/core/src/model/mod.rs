//! Model parameters and derived scalar functions.

pub mod duration;
pub mod infectivity;
pub mod initial;

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use duration::{DurationDistribution, DurationKind, SURVIVAL_FLOOR};
pub use infectivity::{
    conditional_mean_infectivity, mean_infectivity, InfectivityLaw, Profile, Scaler,
};
pub use initial::{AgeProfile, AgeShape, InitialCondition};

use crate::error::{Error, Result};

/// Full, validated parameterization of the multi-patch model.
///
/// Rate matrices are stored as generators: off-diagonals are the migration
/// rates, the diagonal is minus the off-diagonal row sum.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub num_patches: usize,
    pub gamma: f64,
    pub beta: DMatrix<f64>,
    pub nu_s: DMatrix<f64>,
    pub nu_i: DMatrix<f64>,
    pub nu_r: DMatrix<f64>,
    pub infectivity: InfectivityLaw,
    pub duration: DurationDistribution,
    pub initial: InitialCondition,
    pub horizon: f64,
}

/// On-disk layout. Every top-level key is optional here so that a missing
/// key can be reported by name rather than as a generic parse failure.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    num_patches: Option<usize>,
    gamma: Option<f64>,
    horizon: Option<f64>,
    beta: Option<Vec<Vec<f64>>>,
    nu_s: Option<Vec<Vec<f64>>>,
    nu_i: Option<Vec<Vec<f64>>>,
    nu_r: Option<Vec<Vec<f64>>>,
    infectivity: Option<InfectivityLaw>,
    duration: Option<DurationDistribution>,
    initial: Option<InitialCondition>,
}

fn required<T>(v: Option<T>, key: &str) -> Result<T> {
    v.ok_or_else(|| Error::config(key, "missing required key"))
}

fn to_rows(m: &DMatrix<f64>, zero_diagonal: bool) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| {
            (0..m.ncols())
                .map(|j| if zero_diagonal && i == j { 0.0 } else { m[(i, j)] })
                .collect()
        })
        .collect()
}

fn square(rows: &[Vec<f64>], n: usize, key: &str) -> Result<DMatrix<f64>> {
    if rows.len() != n {
        return Err(Error::config(
            key,
            format!("expected {n} rows, found {}", rows.len()),
        ));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != n {
            return Err(Error::config(
                format!("{key}[{i}]"),
                format!("expected {n} columns, found {}", r.len()),
            ));
        }
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Turns a matrix of off-diagonal rates into a generator. A supplied diagonal
/// must be zero or already equal to minus the off-diagonal row sum.
pub fn generator_from_rates(rates: &DMatrix<f64>, key: &str) -> Result<DMatrix<f64>> {
    let n = rates.nrows();
    let mut q = rates.clone();
    for i in 0..n {
        let mut off = 0.0;
        for j in 0..n {
            if i == j {
                continue;
            }
            let v = rates[(i, j)];
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(
                    format!("{key}[{i}][{j}]"),
                    "migration rates must be finite and nonnegative",
                ));
            }
            off += v;
        }
        let d = rates[(i, i)];
        if d != 0.0 && (d + off).abs() > 1e-12 * off.max(1.0) {
            return Err(Error::config(
                format!("{key}[{i}][{i}]"),
                "diagonal must be 0 or minus the off-diagonal row sum",
            ));
        }
        q[(i, i)] = -off;
    }
    Ok(q)
}

/// Row sum of a generator, accumulated off-diagonals first so that a
/// diagonal built by [`generator_from_rates`] cancels exactly.
pub fn generator_row_sum(q: &DMatrix<f64>, i: usize) -> f64 {
    let mut off = 0.0;
    for j in 0..q.ncols() {
        if j != i {
            off += q[(i, j)];
        }
    }
    off + q[(i, i)]
}

impl ModelConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    fn from_file(f: ConfigFile) -> Result<Self> {
        let n = required(f.num_patches, "num_patches")?;
        if n == 0 {
            return Err(Error::config("num_patches", "must be at least 1"));
        }
        let beta = square(&required(f.beta, "beta")?, n, "beta")?;
        let nu_s = generator_from_rates(&square(&required(f.nu_s, "nu_s")?, n, "nu_s")?, "nu_s")?;
        let nu_i = generator_from_rates(&square(&required(f.nu_i, "nu_i")?, n, "nu_i")?, "nu_i")?;
        let nu_r = generator_from_rates(&square(&required(f.nu_r, "nu_r")?, n, "nu_r")?, "nu_r")?;
        let cfg = ModelConfig {
            num_patches: n,
            gamma: required(f.gamma, "gamma")?,
            beta,
            nu_s,
            nu_i,
            nu_r,
            infectivity: required(f.infectivity, "infectivity")?,
            duration: required(f.duration, "duration")?,
            initial: required(f.initial, "initial")?,
            horizon: required(f.horizon, "horizon")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        let f = ConfigFile {
            num_patches: Some(self.num_patches),
            gamma: Some(self.gamma),
            horizon: Some(self.horizon),
            beta: Some(to_rows(&self.beta, false)),
            nu_s: Some(to_rows(&self.nu_s, true)),
            nu_i: Some(to_rows(&self.nu_i, true)),
            nu_r: Some(to_rows(&self.nu_r, true)),
            infectivity: Some(self.infectivity),
            duration: Some(self.duration),
            initial: Some(self.initial.clone()),
        };
        toml::to_string(&f).expect("config serializes")
    }

    /// Checks every invariant, reporting the first violation by key path.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_patches;
        if !(self.gamma.is_finite() && (0.0..=1.0).contains(&self.gamma)) {
            return Err(Error::config("gamma", "must lie in [0, 1]"));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::config("horizon", "must be positive"));
        }
        for (key, m) in [("beta", &self.beta), ("nu_s", &self.nu_s), ("nu_i", &self.nu_i), ("nu_r", &self.nu_r)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::config(key, format!("must be {n}x{n}")));
            }
        }
        for i in 0..n {
            for j in 0..n {
                let b = self.beta[(i, j)];
                if !(b.is_finite() && b >= 0.0) {
                    return Err(Error::config(
                        format!("beta[{i}][{j}]"),
                        "must be finite and nonnegative",
                    ));
                }
            }
        }
        for (key, q) in [("nu_s", &self.nu_s), ("nu_i", &self.nu_i), ("nu_r", &self.nu_r)] {
            for i in 0..n {
                for j in 0..n {
                    if i != j && !(q[(i, j)] >= 0.0 && q[(i, j)].is_finite()) {
                        return Err(Error::config(format!("{key}[{i}][{j}]"), "must be nonnegative"));
                    }
                }
                if generator_row_sum(q, i) != 0.0 {
                    return Err(Error::config(format!("{key}[{i}]"), "generator row must sum to 0"));
                }
            }
        }
        self.infectivity.validate("infectivity")?;
        self.duration.validate("duration")?;
        self.initial.validate(n, "initial")?;
        Ok(())
    }

    /// β* = max entry of β.
    pub fn beta_star(&self) -> f64 {
        self.beta.iter().cloned().fold(0.0, f64::max)
    }

    pub fn lambda_star(&self) -> f64 {
        self.infectivity.lambda_star()
    }

    /// λ̄(t) = E[ξ]·λ̃(t)·F^c(t).
    pub fn mean_infectivity(&self, t: f64) -> f64 {
        mean_infectivity(&self.infectivity, &self.duration, t)
    }

    /// Row vector ī(0, a).
    pub fn initial_density(&self, a: f64) -> Vec<f64> {
        self.initial.density(a)
    }

    /// Same config with β multiplied by `factor`.
    pub fn with_beta_scaled(&self, factor: f64) -> Self {
        let mut c = self.clone();
        c.beta *= factor;
        c
    }

    /// Same config with every migration rate set to zero.
    pub fn without_migration(&self) -> Self {
        let mut c = self.clone();
        let z = DMatrix::zeros(self.num_patches, self.num_patches);
        c.nu_s = z.clone();
        c.nu_i = z.clone();
        c.nu_r = z;
        c
    }
}

/// Built-in configurations used by tests, benches and the CLI.
pub mod presets {
    use super::*;

    fn rates(rows: [[f64; 3]; 3]) -> DMatrix<f64> {
        let m = DMatrix::from_fn(3, 3, |i, j| rows[i][j]);
        generator_from_rates(&m, "preset").expect("preset rates are valid")
    }

    /// Three patches, γ = 0.5, asymmetric β and migration, Gamma(2,1)
    /// durations, rise-plateau-decay infectivity with a uniform multiplier.
    pub fn reference() -> ModelConfig {
        let beta = [[1.2, 0.3, 0.1], [0.2, 0.9, 0.3], [0.1, 0.4, 1.5]];
        ModelConfig {
            num_patches: 3,
            gamma: 0.5,
            beta: DMatrix::from_fn(3, 3, |i, j| beta[i][j]),
            nu_s: rates([[0.0, 0.10, 0.05], [0.08, 0.0, 0.12], [0.03, 0.06, 0.0]]),
            nu_i: rates([[0.0, 0.05, 0.02], [0.04, 0.0, 0.06], [0.01, 0.03, 0.0]]),
            nu_r: rates([[0.0, 0.12, 0.04], [0.05, 0.0, 0.10], [0.06, 0.02, 0.0]]),
            infectivity: InfectivityLaw::new(
                Profile::RisePlateauDecay {
                    peak: 1.0,
                    rise_end: 0.5,
                    plateau_end: 2.0,
                    decay_end: 4.0,
                    floor: 0.2,
                },
                Scaler::Uniform { low: 0.5, high: 1.5 },
            ),
            duration: DurationDistribution::gamma(2.0, 1.0),
            initial: InitialCondition {
                s0: vec![0.40, 0.30, 0.26],
                r0: vec![0.005, 0.0, 0.005],
                age_support: 5.0,
                i0_profile: vec![
                    AgeProfile::new(0.02, AgeShape::TruncatedExponential { rate: 1.0 }),
                    AgeProfile::new(0.0, AgeShape::TruncatedExponential { rate: 1.0 }),
                    AgeProfile::new(0.01, AgeShape::TruncatedExponential { rate: 1.0 }),
                ],
            },
            horizon: 20.0,
        }
    }

    /// Single patch with constant infectivity and exponential durations: the
    /// limit is the classical SIR ODE with β = 1.5 and recovery rate 1.
    ///
    /// Initial ages are concentrated near 0; with exponential durations the
    /// age profile does not influence the dynamics at all.
    pub fn sir() -> ModelConfig {
        ModelConfig {
            num_patches: 1,
            gamma: 0.0,
            beta: DMatrix::from_element(1, 1, 1.5),
            nu_s: DMatrix::zeros(1, 1),
            nu_i: DMatrix::zeros(1, 1),
            nu_r: DMatrix::zeros(1, 1),
            infectivity: InfectivityLaw::new(
                Profile::Constant { level: 1.0 },
                Scaler::Constant { value: 1.0 },
            ),
            duration: DurationDistribution::exponential(1.0),
            initial: InitialCondition {
                s0: vec![0.99],
                r0: vec![0.0],
                age_support: 0.05,
                i0_profile: vec![AgeProfile::new(
                    0.01,
                    AgeShape::TruncatedExponential { rate: 1.0 },
                )],
            },
            horizon: 30.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        presets::reference().validate().unwrap();
        presets::sir().validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let cfg = presets::reference();
        let text = cfg.to_toml_string();
        assert_eq!(ModelConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn shipped_config_files_match_presets() {
        let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
        assert_eq!(ModelConfig::load(format!("{dir}/reference.toml")).unwrap(), presets::reference());
        assert_eq!(ModelConfig::load(format!("{dir}/sir.toml")).unwrap(), presets::sir());
    }

    #[test]
    fn generator_rows_sum_to_exact_zero() {
        let cfg = presets::reference();
        for q in [&cfg.nu_s, &cfg.nu_i, &cfg.nu_r] {
            for i in 0..3 {
                assert_eq!(generator_row_sum(q, i), 0.0);
            }
        }
    }

    fn reference_text() -> String {
        presets::reference().to_toml_string()
    }

    #[test]
    fn missing_beta_is_named() {
        let text: String = reference_text()
            .lines()
            .filter(|l| !l.starts_with("beta"))
            .collect::<Vec<_>>()
            .join("\n");
        let err = ModelConfig::from_toml_str(&text).unwrap_err();
        assert!(matches!(&err, Error::Config { path, .. } if path == "beta"), "{err}");
    }

    #[test]
    fn violations_report_key_paths() {
        let mut cfg = presets::reference();
        cfg.gamma = 1.5;
        assert!(matches!(cfg.validate(), Err(Error::Config { path, .. }) if path == "gamma"));

        let mut cfg = presets::reference();
        cfg.beta[(1, 2)] = -0.1;
        assert!(matches!(cfg.validate(), Err(Error::Config { path, .. }) if path == "beta[1][2]"));

        let mut cfg = presets::reference();
        cfg.initial.s0[0] += 0.01;
        assert!(matches!(cfg.validate(), Err(Error::Config { path, .. }) if path == "initial"));

        let mut cfg = presets::reference();
        cfg.nu_i[(0, 0)] = 0.0;
        assert!(matches!(cfg.validate(), Err(Error::Config { path, .. }) if path == "nu_i[0]"));

        let text = reference_text().replace("rate = 1.0", "rate = -1.0");
        let err = ModelConfig::from_toml_str(&text).unwrap_err();
        assert!(matches!(&err, Error::Config { path, .. } if path == "initial.i0_profile[0].rate"), "{err}");
    }

    #[test]
    fn inconsistent_diagonal_is_rejected() {
        let text = reference_text();
        let cfg: toml::Value = toml::from_str(&text).unwrap();
        let mut table = cfg.as_table().unwrap().clone();
        table.insert(
            "nu_s".into(),
            toml::Value::try_from(vec![vec![-1.0, 0.1, 0.05], vec![0.08, 0.0, 0.12], vec![0.03, 0.06, 0.0]]).unwrap(),
        );
        let err = ModelConfig::from_toml_str(&toml::to_string(&table).unwrap()).unwrap_err();
        assert!(matches!(&err, Error::Config { path, .. } if path == "nu_s[0][0]"), "{err}");
    }
}
