//! Observed convergence orders from successive grid halvings.

use serde::Serialize;

use super::{Check, StudyReport};
use crate::error::{Error, Result};
use crate::limit::{solve_limit, LimitOptions};
use crate::model::ModelConfig;
use crate::pde::solve_boundary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Lln,
    Pde,
}

impl std::str::FromStr for Engine {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lln" => Ok(Engine::Lln),
            "pde" => Ok(Engine::Pde),
            other => Err(Error::invalid("engine", format!("unknown engine `{other}` (expected lln or pde)"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderEstimate {
    pub observable: String,
    /// sup |u_{h_k} − u_{h_{k+1}}| on the coarsest grid.
    pub diffs: Vec<f64>,
    /// log(d_k/d_{k+1})/log(h_k/h_{k+1}).
    pub orders: Vec<f64>,
    /// All differences are at round-off level.
    pub exact: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RefinementReport {
    pub engine: Engine,
    pub h_list: Vec<f64>,
    pub observables: Vec<OrderEstimate>,
}

/// Differences below this count as round-off.
const EXACT_LEVEL: f64 = 1e-13;

impl RefinementReport {
    /// Smallest order over non-exact observables (∞ if all are exact).
    pub fn min_order(&self) -> f64 {
        self.observables
            .iter()
            .filter(|o| !o.exact)
            .flat_map(|o| o.orders.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn checks(&self, min_order: f64) -> Vec<Check> {
        self.observables
            .iter()
            .filter(|o| !o.exact)
            .flat_map(|o| {
                o.orders
                    .iter()
                    .enumerate()
                    .map(move |(k, &p)| Check::at_least(format!("{:?} {} order[{k}]", self.engine, o.observable), p, min_order))
            })
            .collect()
    }

    pub fn to_study(&self, min_order: f64) -> StudyReport {
        StudyReport::new(
            "refine",
            self.checks(min_order),
            serde_json::to_value(self).expect("report serializes"),
        )
    }
}

/// Solves at each step in `h_list` (decreasing, each dividing the previous)
/// and estimates the order from consecutive differences sampled on the
/// coarsest grid.
pub fn refinement_study(cfg: &ModelConfig, h_list: &[f64], engine: Engine) -> Result<RefinementReport> {
    if h_list.len() < 3 {
        return Err(Error::invalid("h_list", "need at least three steps"));
    }
    if h_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("h_list", "steps must be decreasing"));
    }
    let coarse = h_list[0];
    let mut samples: Vec<[Vec<f64>; 4]> = Vec::new();
    for &h in h_list {
        let ratio = coarse / h;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::invalid("h_list", "each step must divide the first"));
        }
        let stride = ratio.round() as usize;
        let (s, i, r, rate, l) = match engine {
            Engine::Lln => {
                let sol = solve_limit(cfg, &LimitOptions::new(h))?;
                (sol.s, sol.i, sol.r, sol.upsilon, sol.num_patches)
            }
            Engine::Pde => {
                let sol = solve_boundary(cfg, h)?;
                (sol.s, sol.i, sol.r, sol.trace, sol.num_patches)
            }
        };
        let pick = |v: &[f64]| -> Vec<f64> {
            v.chunks(l).step_by(stride).flatten().copied().collect()
        };
        samples.push([pick(&s), pick(&i), pick(&r), pick(&rate)]);
    }
    let names = ["S", "I", "R", "rate"];
    let mut observables = Vec::new();
    for (q, name) in names.iter().enumerate() {
        let diffs: Vec<f64> = samples.windows(2).map(|w| super::sup_gap(&w[0][q], &w[1][q])).collect();
        let exact = diffs.iter().all(|&d| d < EXACT_LEVEL);
        let orders = diffs
            .windows(2)
            .zip(h_list.windows(2))
            .map(|(d, h)| (d[0] / d[1]).ln() / (h[0] / h[1]).ln())
            .collect();
        observables.push(OrderEstimate {
            observable: name.to_string(),
            diffs,
            orders,
            exact,
        });
    }
    Ok(RefinementReport {
        engine,
        h_list: h_list.to_vec(),
        observables,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{presets, DurationDistribution};

    #[test]
    fn no_transmission_no_migration_is_exact() {
        let cfg = presets::reference().with_beta_scaled(0.0).without_migration();
        let mut cfg = cfg;
        cfg.horizon = 2.0;
        let rep = refinement_study(&cfg, &[0.04, 0.02, 0.01], Engine::Lln).unwrap();
        for o in &rep.observables {
            if o.observable == "S" || o.observable == "rate" {
                assert!(o.exact, "{o:?}");
            }
        }
    }

    #[test]
    fn homogeneous_exponential_is_second_order() {
        let mut cfg = presets::reference().without_migration();
        cfg.duration = DurationDistribution::exponential(1.0);
        cfg.horizon = 10.0;
        for engine in [Engine::Lln, Engine::Pde] {
            // Steps keep the profile kinks (0.5, 2, 4) on grid nodes.
            let rep = refinement_study(&cfg, &[0.02, 0.01, 0.005], engine).unwrap();
            for o in &rep.observables {
                for &p in &o.orders {
                    assert!((p - 2.0).abs() <= 0.2, "{engine:?} {} {p} {:?}", o.observable, o.diffs);
                }
            }
        }
    }

    #[test]
    fn rejects_short_or_misaligned_lists() {
        let cfg = presets::reference();
        assert!(refinement_study(&cfg, &[0.02, 0.01], Engine::Lln).is_err());
        assert!(refinement_study(&cfg, &[0.02, 0.015, 0.01], Engine::Lln).is_err());
    }
}
