//! TOML scenario files and the assembled equilibrium they describe.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MarketParams, ScalarFn, SignalSchedule, SurplusFamily};
use crate::pricing::PricingRule;
use crate::simulate::{Perturbation, SimConfig};
use crate::strategy::Strategy;
use crate::transport::{solve, TransportSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    Linear,
    Activist,
    LinearQuadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyVariant {
    /// The family's equilibrium rule (bridge for the linear family).
    #[default]
    Equilibrium,
    /// Linear family with `f(s) = s` only: the rule that also conditions on
    /// `ztilde`.
    Markovian,
}

fn default_f() -> Vec<f64> {
    vec![0.0, 1.0]
}
fn default_v() -> Vec<f64> {
    vec![0.0, 0.0, 0.5]
}
fn default_paths() -> usize {
    10_000
}
fn default_steps() -> usize {
    512
}
fn default_true() -> bool {
    true
}
fn default_dump() -> usize {
    10
}
fn default_particles() -> usize {
    10_000
}
fn default_filter_paths() -> usize {
    20
}
fn default_filter_steps() -> usize {
    1000
}
fn default_scale() -> f64 {
    1.0
}
fn is_unit(x: &f64) -> bool {
    *x == 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub sigma: f64,
    /// `[[t_break, value], ...]`; empty means a static signal.
    #[serde(default)]
    pub sigma_s: Vec<(f64, f64)>,
    #[serde(rename = "Sigma0")]
    pub sigma0: f64,
    #[serde(default)]
    pub m_beta: f64,
    #[serde(default)]
    pub sigma_beta: f64,
    pub family: FamilyName,
    /// Polynomial coefficients of `f` (linear family), ascending.
    #[serde(default = "default_f")]
    pub f_coeffs: Vec<f64>,
    /// Polynomial coefficients of `V` (activist family), ascending.
    #[serde(default = "default_v")]
    pub v_coeffs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<f64>,
    #[serde(default)]
    pub strategy: StrategyVariant,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    #[serde(default = "default_true")]
    pub projected: bool,
    /// Run the discrete LP and particle-filter oracles during `verify`.
    #[serde(default = "default_true")]
    pub oracle: bool,
    /// Also simulate the canned deviation strategies.
    #[serde(default)]
    pub deviations: bool,
    /// Paths written to `paths.csv` by `simulate`.
    #[serde(default = "default_dump")]
    pub dump_paths: usize,
    #[serde(default = "default_particles")]
    pub n_particles: usize,
    #[serde(default = "default_filter_paths")]
    pub filter_paths: usize,
    #[serde(default = "default_filter_steps")]
    pub filter_steps: usize,
    /// Multiplies the insider's rate in `simulate` and `verify`; anything
    /// but 1 is a deliberate deviation from equilibrium.
    #[serde(default = "default_scale", skip_serializing_if = "is_unit")]
    pub rate_scale: f64,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Unit static Kyle market, `f(s) = s`.
    pub fn static_kyle() -> Self {
        Self {
            horizon: 1.0,
            sigma: 1.0,
            sigma_s: Vec::new(),
            sigma0: 1.0,
            m_beta: 0.0,
            sigma_beta: 0.0,
            family: FamilyName::Linear,
            f_coeffs: default_f(),
            v_coeffs: default_v(),
            psi: None,
            strategy: StrategyVariant::Equilibrium,
            seed: 0,
            n_paths: default_paths(),
            n_steps: default_steps(),
            projected: true,
            oracle: true,
            deviations: false,
            dump_paths: default_dump(),
            n_particles: default_particles(),
            filter_paths: default_filter_paths(),
            filter_steps: default_filter_steps(),
            rate_scale: 1.0,
        }
    }

    pub fn params(&self) -> Result<MarketParams> {
        MarketParams::new(
            self.horizon,
            self.sigma,
            SignalSchedule::new(self.sigma_s.clone())?,
            self.sigma0,
            self.m_beta,
            self.sigma_beta,
        )
    }

    pub fn surplus_family(&self) -> Result<SurplusFamily> {
        Ok(match self.family {
            FamilyName::Linear => SurplusFamily::Linear {
                f: ScalarFn::poly(self.f_coeffs.clone()),
            },
            FamilyName::Activist => SurplusFamily::Activist {
                v: ScalarFn::poly(self.v_coeffs.clone()),
            },
            FamilyName::LinearQuadratic => SurplusFamily::LinearQuadratic {
                psi: self
                    .psi
                    .ok_or_else(|| Error::Config("linear_quadratic family requires `psi`".into()))?,
            },
        })
    }

    pub fn perturbation(&self) -> Perturbation {
        if self.rate_scale == 1.0 {
            Perturbation::None
        } else {
            Perturbation::Scale(self.rate_scale)
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            n_paths: self.n_paths,
            n_steps: self.n_steps,
            seed: self.seed,
            projected: self.projected,
        }
    }
}

/// Transport, pricing rule and strategy for one scenario.
#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub params: MarketParams,
    pub family: SurplusFamily,
    pub transport: Arc<TransportSolution>,
    pub pricing: PricingRule,
    pub strategy: Strategy,
}

impl Equilibrium {
    pub fn new(params: MarketParams, family: SurplusFamily, variant: StrategyVariant) -> Result<Self> {
        let transport = Arc::new(solve(&params, &family)?);
        let pricing = PricingRule::new(transport.clone())?;
        let strategy = match variant {
            StrategyVariant::Equilibrium => Strategy::equilibrium(&params, &family)?,
            StrategyVariant::Markovian => {
                let is_identity = matches!(
                    &family,
                    SurplusFamily::Linear { f } if f.as_poly().map(|p| p.coeffs()) == Some(&[0.0, 1.0][..])
                );
                if !is_identity {
                    return Err(Error::Config(
                        "the markovian strategy requires the linear family with f(s) = s".into(),
                    ));
                }
                crate::model::validate(&params, &family).into_result()?;
                Strategy::markovian(&params)?
            }
        };
        Ok(Self {
            params,
            family,
            transport,
            pricing,
            strategy,
        })
    }

    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self> {
        Self::new(cfg.params()?, cfg.surplus_family()?, cfg.strategy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_parses_with_defaults() {
        let cfg = ScenarioConfig::from_toml(
            r#"
T = 1.0
sigma = 1.0
Sigma0 = 1.0
family = "linear"
"#,
        )
        .unwrap();
        assert_eq!(cfg, ScenarioConfig::static_kyle());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = ScenarioConfig::from_toml("T = 1.0\nsigma = 1.0\nSigma0 = 1.0\nfamily = \"linear\"\nlambda = 2.0\n");
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn round_trip() {
        let mut cfg = ScenarioConfig::static_kyle();
        cfg.sigma_s = vec![(0.0, 0.25), (0.5, 0.125)];
        cfg.family = FamilyName::LinearQuadratic;
        cfg.psi = Some(0.1 + 0.2);
        cfg.seed = u64::MAX >> 1;
        cfg.rate_scale = 2.0;
        let text = cfg.to_toml().unwrap();
        assert_eq!(ScenarioConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn linquad_needs_psi() {
        let mut cfg = ScenarioConfig::static_kyle();
        cfg.family = FamilyName::LinearQuadratic;
        assert!(cfg.surplus_family().is_err());
    }
}
