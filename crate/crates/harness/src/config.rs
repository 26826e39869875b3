//! Scenario files: TOML with `[run]`, `[model]`, `[environment]` and
//! `[controller.*]` sections. Every controller section is always present
//! (filled with defaults when omitted) and validated; `controller.kind`
//! picks the one `simulate` runs.

use std::path::Path;

use aquactl::classical::{BangBangConfig, ChannelLoops, PidConfig};
use aquactl::mpc::{ChannelMode, MpcConfig};
use aquactl::profile::{Perturbation, TableRow, Wave};
use aquactl::qlearning::{MdpSpec, QLearningConfig, WeightGrid};
use aquactl::rlmpc::RlMpcConfig;
use aquactl::sim::{ConfigError as SimConfigError, Integrator, InvalidKey, Mortality};
use aquactl::{Ambient, EnvProfile, GrowthError, GrowthParams, Plant, SimConfig, SimState, StockingPolicy};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

impl ConfigError {
    fn invalid(key: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.into(),
            reason: reason.into(),
        }
    }

    fn under(prefix: &str, e: InvalidKey) -> Self {
        Self::invalid(format!("{prefix}.{}", e.key), e.reason)
    }

    /// The offending key path, for validation failures.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { key, .. } => Some(key),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub name: String,
    pub t0: f64,
    pub tf: f64,
    pub dt: f64,
    pub seed: u64,
    pub integrator: Integrator,
    /// Feeding rate of the nominal reference trajectory.
    pub f_ref: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub initial: SimState,
    pub params: GrowthParams,
    #[serde(default)]
    pub mortality: Mortality,
    #[serde(default)]
    pub stocking: StockingPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    Constant,
    Seasonal,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeasonalSection {
    pub temp_c: Wave,
    pub do_mgl: Wave,
    pub uia_mgl: Wave,
    pub rho: Wave,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSection {
    pub kind: ProfileKind,
    pub constant: Ambient,
    pub seasonal: SeasonalSection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rows: Vec<TableRow>,
    #[serde(default)]
    pub perturbation: Perturbation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Constant,
    Bangbang,
    Pid,
    Mpc,
    Qlearning,
    Rlmpc,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 6] = [
        ControllerKind::Constant,
        ControllerKind::Bangbang,
        ControllerKind::Pid,
        ControllerKind::Mpc,
        ControllerKind::Qlearning,
        ControllerKind::Rlmpc,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerKind::Constant => "constant",
            ControllerKind::Bangbang => "bangbang",
            ControllerKind::Pid => "pid",
            ControllerKind::Mpc => "mpc",
            ControllerKind::Qlearning => "qlearning",
            ControllerKind::Rlmpc => "rlmpc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        let s = match s {
            "constant-feed" | "constant_feed" => "constant",
            "bang-bang" => "bangbang",
            "rl-mpc" => "rlmpc",
            "q" | "q-learning" => "qlearning",
            other => other,
        };
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantSection {
    pub f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QLearningSection {
    pub learning: QLearningConfig,
    pub mdp: MdpSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub kind: ControllerKind,
    #[serde(default = "default_constant")]
    pub constant: ConstantSection,
    #[serde(default = "default_bangbang")]
    pub bangbang: ChannelLoops<BangBangConfig>,
    #[serde(default = "default_pid")]
    pub pid: ChannelLoops<PidConfig>,
    #[serde(default = "default_mpc")]
    pub mpc: MpcConfig,
    #[serde(default = "default_qlearning")]
    pub qlearning: QLearningSection,
    #[serde(default = "default_rlmpc")]
    pub rlmpc: RlMpcConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub run: RunSection,
    pub model: ModelSection,
    pub environment: EnvironmentSection,
    pub controller: ControllerSection,
}

fn default_constant() -> ConstantSection {
    ConstantSection { f: 0.5 }
}

fn default_bangbang() -> ChannelLoops<BangBangConfig> {
    ChannelLoops {
        feed: Some(BangBangConfig {
            setpoint: None,
            on_value: 1.0,
            off_value: 0.2,
            deadband: 0.0,
        }),
        temperature: Some(BangBangConfig {
            setpoint: Some(31.0),
            on_value: 3.0,
            off_value: 0.0,
            deadband: 1.0,
        }),
        oxygen: None,
        default_feed: 0.5,
    }
}

fn default_pid() -> ChannelLoops<PidConfig> {
    ChannelLoops {
        feed: Some(PidConfig {
            setpoint: None,
            kp: 0.2,
            ki: 0.02,
            kd: 0.0,
            u_min: 0.0,
            u_max: 1.0,
            integral_clamp: 50.0,
            derivative_filter: None,
        }),
        temperature: Some(PidConfig {
            setpoint: Some(31.0),
            kp: 0.5,
            ki: 0.2,
            kd: 0.0,
            u_min: 0.0,
            u_max: 5.0,
            integral_clamp: 20.0,
            derivative_filter: None,
        }),
        oxygen: None,
        default_feed: 0.5,
    }
}

fn default_mpc() -> MpcConfig {
    MpcConfig {
        temperature: ChannelMode::Controlled,
        oxygen: ChannelMode::Ambient,
        ..MpcConfig::default()
    }
}

fn default_qlearning() -> QLearningSection {
    QLearningSection {
        learning: QLearningConfig {
            max_episodes: 600,
            t_epsilon: 100.0,
            ..QLearningConfig::default()
        },
        mdp: MdpSpec {
            grid: WeightGrid {
                lower: 10.0,
                upper: 1000.0,
                bins: 64,
            },
            age_bins: 1,
            feed_levels: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            temp_levels: Vec::new(),
            target_w: 150.0,
            initial_w: 50.0,
            horizon_days: 60.0,
            feed_cost: 0.1,
            terminal_bonus: 10.0,
        },
    }
}

fn default_rlmpc() -> RlMpcConfig {
    RlMpcConfig {
        mpc: MpcConfig {
            control_horizon: 2,
            ..default_mpc()
        },
        ..RlMpcConfig::default()
    }
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            run: RunSection {
                name: "default".into(),
                t0: 0.0,
                tf: 60.0,
                dt: 1.0,
                seed: 42,
                integrator: Integrator::Rk4,
                f_ref: 0.6,
                output_dir: None,
            },
            model: ModelSection {
                initial: SimState::Individual { w: 50.0 },
                params: GrowthParams::default(),
                mortality: Mortality::Logistic,
                stocking: StockingPolicy::default(),
            },
            environment: EnvironmentSection {
                kind: ProfileKind::Seasonal,
                constant: Ambient {
                    temp_c: 28.0,
                    do_mgl: 5.0,
                    uia_mgl: 0.03,
                    rho: 1.0,
                },
                seasonal: SeasonalSection {
                    temp_c: Wave {
                        mean: 28.0,
                        amplitude: 3.0,
                        period_days: 365.0,
                        phase_days: 0.0,
                    },
                    do_mgl: Wave {
                        mean: 5.0,
                        amplitude: 0.5,
                        period_days: 30.0,
                        phase_days: 0.0,
                    },
                    uia_mgl: Wave {
                        mean: 0.03,
                        amplitude: 0.01,
                        period_days: 45.0,
                        phase_days: 0.0,
                    },
                    rho: Wave {
                        mean: 1.0,
                        amplitude: 0.1,
                        period_days: 365.0,
                        phase_days: 0.0,
                    },
                },
                rows: Vec::new(),
                perturbation: Perturbation {
                    temp_c: 0.5,
                    do_mgl: 0.3,
                    uia_mgl: 0.005,
                },
            },
            controller: ControllerSection {
                kind: ControllerKind::Mpc,
                constant: default_constant(),
                bangbang: default_bangbang(),
                pid: default_pid(),
                mpc: default_mpc(),
                qlearning: default_qlearning(),
                rlmpc: default_rlmpc(),
            },
        }
    }
}

fn growth_key(e: &GrowthError) -> String {
    match e {
        GrowthError::InvalidParam { key, .. } => format!("model.params.{key}"),
        _ => "model.params".into(),
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let run = &self.run;
        if run.name.is_empty() || !run.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return Err(ConfigError::invalid("run.name", "use letters, digits, '-', '_' or '.'"));
        }
        if !(0.0..=1.0).contains(&run.f_ref) {
            return Err(ConfigError::invalid("run.f_ref", "must lie in [0, 1]"));
        }
        self.sim_config().map_err(|e| match e {
            SimConfigError::Horizon { .. } => ConfigError::invalid("run.tf", e.to_string()),
            SimConfigError::Dt(_) | SimConfigError::Fractional(_) => ConfigError::invalid("run.dt", e.to_string()),
            SimConfigError::Initial(ref what) if what.starts_with("fixed") => {
                ConfigError::invalid("model.mortality.per_day", e.to_string())
            }
            SimConfigError::Initial(_) => ConfigError::invalid("model.initial", e.to_string()),
            SimConfigError::Params(ref g) => ConfigError::invalid(growth_key(g), e.to_string()),
        })?;
        self.profile()?;

        let c = &self.controller;
        if !(0.0..=1.0).contains(&c.constant.f) {
            return Err(ConfigError::invalid("controller.constant.f", "must lie in [0, 1]"));
        }
        for (channel, cfg) in c.bangbang.iter() {
            cfg.validate().map_err(|k| {
                ConfigError::invalid(
                    format!("controller.bangbang.{}.{k}", channel_name(channel)),
                    "invalid value",
                )
            })?;
        }
        for (channel, cfg) in c.pid.iter() {
            cfg.validate().map_err(|k| {
                ConfigError::invalid(format!("controller.pid.{}.{k}", channel_name(channel)), "invalid value")
            })?;
        }
        for (name, loops) in [("bangbang", c.bangbang.default_feed), ("pid", c.pid.default_feed)] {
            if !(0.0..=1.0).contains(&loops) {
                return Err(ConfigError::invalid(
                    format!("controller.{name}.default_feed"),
                    "must lie in [0, 1]",
                ));
            }
        }
        let setpoints = [
            (
                "bangbang",
                c.bangbang.temperature.map(|l| l.setpoint),
                c.bangbang.oxygen.map(|l| l.setpoint),
            ),
            (
                "pid",
                c.pid.temperature.map(|l| l.setpoint),
                c.pid.oxygen.map(|l| l.setpoint),
            ),
        ];
        for (name, temp, oxygen) in setpoints {
            if temp == Some(None) {
                return Err(ConfigError::invalid(
                    format!("controller.{name}.temperature.setpoint"),
                    "required",
                ));
            }
            if oxygen == Some(None) {
                return Err(ConfigError::invalid(
                    format!("controller.{name}.oxygen.setpoint"),
                    "required",
                ));
            }
        }
        c.mpc.validate().map_err(|e| ConfigError::under("controller.mpc", e))?;
        c.qlearning
            .learning
            .validate()
            .map_err(|e| ConfigError::under("controller.qlearning.learning", e))?;
        let mdp = &c.qlearning.mdp;
        mdp.validate()
            .map_err(|e| ConfigError::under("controller.qlearning.mdp", e))?;
        if mdp.initial_w != self.model.initial.biomass() {
            return Err(ConfigError::invalid(
                "controller.qlearning.mdp.initial_w",
                "must equal the initial biomass in [model.initial]",
            ));
        }
        if (mdp.horizon_days - (run.tf - run.t0)).abs() > 1e-9 {
            return Err(ConfigError::invalid(
                "controller.qlearning.mdp.horizon_days",
                "must equal run.tf - run.t0",
            ));
        }
        let r = &c.rlmpc;
        r.mpc
            .validate()
            .map_err(|e| ConfigError::under("controller.rlmpc.mpc", e))?;
        r.validate().map_err(|e| {
            let prefix = if e.key == "M" {
                "controller.rlmpc.mpc"
            } else {
                "controller.rlmpc"
            };
            ConfigError::under(prefix, e)
        })?;
        Ok(())
    }

    pub fn plant(&self) -> Plant {
        let mut plant = Plant::new(self.model.params, self.run.dt);
        plant.integrator = self.run.integrator;
        plant.mortality = self.model.mortality;
        plant.stocking = self.model.stocking;
        plant
    }

    pub fn profile(&self) -> Result<EnvProfile, ConfigError> {
        let env = &self.environment;
        let base = match env.kind {
            ProfileKind::Constant => EnvProfile::constant(env.constant),
            ProfileKind::Seasonal => {
                let s = env.seasonal;
                EnvProfile::seasonal(s.temp_c, s.do_mgl, s.uia_mgl, s.rho)
                    .map_err(|e| ConfigError::invalid("environment.seasonal", e.to_string()))?
            }
            ProfileKind::Table => EnvProfile::table(env.rows.clone())
                .map_err(|e| ConfigError::invalid("environment.rows", e.to_string()))?,
        };
        let p = env.perturbation;
        for (key, v) in [("temp_c", p.temp_c), ("do_mgl", p.do_mgl), ("uia_mgl", p.uia_mgl)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::invalid(
                    format!("environment.perturbation.{key}"),
                    "must be non-negative",
                ));
            }
        }
        Ok(base.with_perturbation(p, self.run.seed))
    }

    fn sim_config(&self) -> Result<SimConfig, SimConfigError> {
        let cfg = SimConfig {
            t0: self.run.t0,
            tf: self.run.tf,
            seed: self.run.seed,
            initial: self.model.initial,
            profile: EnvProfile::constant(self.environment.constant),
            plant: self.plant(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The simulation set-up (validated scenario assumed).
    pub fn simulation(&self) -> SimConfig {
        SimConfig {
            t0: self.run.t0,
            tf: self.run.tf,
            seed: self.run.seed,
            initial: self.model.initial,
            profile: self.profile().expect("validated scenario"),
            plant: self.plant(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.run.seed = seed;
        self
    }
}

fn channel_name(c: aquactl::classical::Channel) -> &'static str {
    match c {
        aquactl::classical::Channel::Feed => "feed",
        aquactl::classical::Channel::Temperature => "temperature",
        aquactl::classical::Channel::Oxygen => "oxygen",
    }
}
