//! Flat experiment configuration (TOML), version 1.
//!
//! Every key is listed in [`ExperimentConfig`]; unknown keys are rejected.
//!
//! ```toml
//! version = 1
//! num_states = 5
//! num_actions = 3
//! horizon = 5
//! episodes = 2000
//! drift = "piecewise"        # stationary | piecewise | linear
//! num_switches = 2           # piecewise only
//! drift_rate = 0.5           # linear only, in [0, 1]
//! constraint_offset = 3.0
//! min_gamma = 0.05           # 0 disables the feasibility redraw
//! seeds = [0, 1, 2]
//! preset = 3                 # 1..=4, or give the explicit learner keys instead
//! rho = 0.5
//! confidence = 0.05
//! constants = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0]
//! budget_floor = 1e-6
//! variants = ["full", "no_restart"]
//! checkpoints = [250, 500, 1000, 2000]
//! ```
//!
//! Explicit learner keys (all required together, none allowed with `preset`):
//! `alpha`, `eta`, `xi`, `chi` (omit for no cap), `restart_policy`,
//! `restart_window`, `beta`, `lambda`, `assumption`, `setting`.
//!
//! `sweep_rates = [..]` is read only by the `sweep` command.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env_gen::{ConstraintSchedule, Drift, GeneratorConfig, SequenceShape};
use crate::error::{Error, Result};
use crate::learner::{LearnerConfig, Preset, BUDGET_FLOOR, DEFAULT_CONFIDENCE};
use crate::metrics::default_checkpoints;
use crate::policy_eval::{Assumption, Setting};

pub const CONFIG_VERSION: u32 = 1;

/// Raw TOML schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub episodes: usize,
    pub drift: String,
    pub num_switches: Option<usize>,
    pub drift_rate: Option<f64>,
    pub constraint_offset: f64,
    pub min_gamma: Option<f64>,
    pub max_retries: Option<usize>,
    pub initial_state: Option<usize>,
    pub seeds: Vec<u64>,

    pub preset: Option<u8>,
    pub rho: Option<f64>,
    pub confidence: Option<f64>,
    pub constants: Option<[f64; 6]>,
    pub budget_floor: Option<f64>,

    pub alpha: Option<f64>,
    pub eta: Option<f64>,
    pub xi: Option<f64>,
    pub chi: Option<f64>,
    pub restart_policy: Option<usize>,
    pub restart_window: Option<usize>,
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
    pub assumption: Option<Assumption>,
    pub setting: Option<Setting>,

    pub variants: Option<Vec<String>>,
    pub checkpoints: Option<Vec<usize>>,
    pub sweep_rates: Option<Vec<f64>>,
}

/// Which policy sequence a cell evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// `L = W = M`.
    NoRestart,
    /// `mu` held at zero.
    NoDual,
    /// `beta = 0`.
    NoBonus,
    /// Play the oracle policy every episode.
    OracleReplay,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoRestart,
        Variant::NoDual,
        Variant::NoBonus,
        Variant::OracleReplay,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoRestart => "no_restart",
            Variant::NoDual => "no_dual",
            Variant::NoBonus => "no_bonus",
            Variant::OracleReplay => "oracle_replay",
        }
    }

    /// Apply the ablation to a base configuration.
    pub fn adjust(self, cfg: &LearnerConfig, episodes: usize) -> LearnerConfig {
        let mut c = cfg.clone();
        match self {
            Variant::Full | Variant::OracleReplay => {}
            Variant::NoRestart => {
                c.restart_policy = episodes.max(1);
                c.restart_window = episodes.max(1);
            }
            Variant::NoDual => c.freeze_dual = true,
            Variant::NoBonus => c.beta = 0.0,
        }
        c
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub shape: SequenceShape,
    pub drift: Drift,
    pub schedule: ConstraintSchedule,
    pub generator: GeneratorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LearnerSpec {
    /// Schedule computed per seed from the measured budgets of that seed's sequence.
    Preset {
        preset: Preset,
        rho: f64,
        confidence: f64,
        constants: [f64; 6],
        budget_floor: f64,
    },
    Explicit(LearnerConfig),
}

/// Validated experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub env: EnvSpec,
    pub seeds: Vec<u64>,
    pub learner: LearnerSpec,
    pub variants: Vec<Variant>,
    pub checkpoints: Vec<usize>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn drift_spec(&self) -> Result<Drift> {
        let reject = |key: &str, kind: &str| Err(Error::Config(format!("`{key}` is not used by drift = \"{kind}\"")));
        match self.drift.as_str() {
            "stationary" => {
                if self.num_switches.is_some() {
                    return reject("num_switches", "stationary");
                }
                if self.drift_rate.is_some() {
                    return reject("drift_rate", "stationary");
                }
                Ok(Drift::Stationary)
            }
            "piecewise" => {
                if self.drift_rate.is_some() {
                    return reject("drift_rate", "piecewise");
                }
                let num_switches = self
                    .num_switches
                    .ok_or_else(|| Error::Config("drift = \"piecewise\" needs `num_switches`".into()))?;
                Ok(Drift::PiecewiseConstant { num_switches })
            }
            "linear" => {
                if self.num_switches.is_some() {
                    return reject("num_switches", "linear");
                }
                let rate = self
                    .drift_rate
                    .ok_or_else(|| Error::Config("drift = \"linear\" needs `drift_rate`".into()))?;
                Ok(Drift::LinearDrift { rate })
            }
            other => Err(Error::Config(format!(
                "unknown drift `{other}` (expected stationary, piecewise or linear)"
            ))),
        }
    }

    fn explicit_keys_present(&self) -> Vec<&'static str> {
        let mut keys = Vec::new();
        let mut check = |present: bool, name: &'static str| {
            if present {
                keys.push(name);
            }
        };
        check(self.alpha.is_some(), "alpha");
        check(self.eta.is_some(), "eta");
        check(self.xi.is_some(), "xi");
        check(self.chi.is_some(), "chi");
        check(self.restart_policy.is_some(), "restart_policy");
        check(self.restart_window.is_some(), "restart_window");
        check(self.beta.is_some(), "beta");
        check(self.lambda.is_some(), "lambda");
        check(self.assumption.is_some(), "assumption");
        check(self.setting.is_some(), "setting");
        keys
    }

    fn learner_spec(&self) -> Result<LearnerSpec> {
        let explicit = self.explicit_keys_present();
        let rho = self.rho.unwrap_or(0.5);
        let constants = self.constants.unwrap_or([1.0; 6]);
        if let Some(n) = self.preset {
            if !explicit.is_empty() {
                return Err(Error::Config(format!(
                    "`preset` cannot be combined with explicit learner keys {explicit:?}"
                )));
            }
            let budget_floor = self.budget_floor.unwrap_or(BUDGET_FLOOR);
            if !(budget_floor > 0.0) {
                return Err(Error::Config("budget_floor must be > 0".into()));
            }
            return Ok(LearnerSpec::Preset {
                preset: Preset::from_number(n)?,
                rho,
                confidence: self.confidence.unwrap_or(DEFAULT_CONFIDENCE),
                constants,
                budget_floor,
            });
        }
        if self.confidence.is_some() || self.budget_floor.is_some() {
            return Err(Error::Config("`confidence` and `budget_floor` only apply with `preset`".into()));
        }
        let missing = |k: &str| Error::Config(format!("explicit learner config needs `{k}` (or set `preset`)"));
        let cfg = LearnerConfig {
            alpha: self.alpha.ok_or_else(|| missing("alpha"))?,
            eta: self.eta.ok_or_else(|| missing("eta"))?,
            xi: self.xi.ok_or_else(|| missing("xi"))?,
            chi: self.chi,
            restart_policy: self.restart_policy.ok_or_else(|| missing("restart_policy"))?,
            restart_window: self.restart_window.ok_or_else(|| missing("restart_window"))?,
            beta: self.beta.ok_or_else(|| missing("beta"))?,
            lambda: self.lambda.ok_or_else(|| missing("lambda"))?,
            assumption: self.assumption.ok_or_else(|| missing("assumption"))?,
            setting: self.setting.ok_or_else(|| missing("setting"))?,
            rho,
            constants,
            freeze_dual: false,
        };
        cfg.validate()?;
        Ok(LearnerSpec::Explicit(cfg))
    }

    /// Validate and resolve into an [`ExperimentSpec`].
    pub fn resolve(&self) -> Result<ExperimentSpec> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        let shape = SequenceShape {
            num_states: self.num_states,
            num_actions: self.num_actions,
            horizon: self.horizon,
            episodes: self.episodes,
        };
        shape.model_shape()?;
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be >= 1".into()));
        }
        let defaults = GeneratorConfig::default();
        let generator = GeneratorConfig {
            min_gamma: match self.min_gamma {
                Some(g) if g <= 0.0 => None,
                Some(g) => Some(g),
                None => defaults.min_gamma,
            },
            max_retries: self.max_retries.unwrap_or(defaults.max_retries),
            initial_state: self.initial_state.unwrap_or(defaults.initial_state),
        };
        let variants = match &self.variants {
            None => vec![Variant::Full],
            Some(names) => {
                let mut v = names.iter().map(|n| n.parse()).collect::<Result<Vec<Variant>>>()?;
                let n = v.len();
                v.sort_unstable();
                v.dedup();
                if v.len() != n {
                    return Err(Error::Config("variants must be distinct".into()));
                }
                if v.is_empty() {
                    return Err(Error::Config("variants must not be empty".into()));
                }
                v
            }
        };
        let checkpoints = match &self.checkpoints {
            None => default_checkpoints(self.episodes),
            Some(c) => {
                if c.is_empty() || c.windows(2).any(|w| w[0] >= w[1]) || c[0] == 0 || *c.last().unwrap() > self.episodes {
                    return Err(Error::Config(format!(
                        "checkpoints must be increasing within 1..={}, got {c:?}",
                        self.episodes
                    )));
                }
                c.clone()
            }
        };
        Ok(ExperimentSpec {
            env: EnvSpec {
                shape,
                drift: self.drift_spec()?,
                schedule: ConstraintSchedule::Constant(self.constraint_offset),
                generator,
            },
            seeds: self.seeds.clone(),
            learner: self.learner_spec()?,
            variants,
            checkpoints,
        })
    }
}
