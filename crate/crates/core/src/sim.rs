//! Fixed-step time integration of the growth model, the closed-loop driver,
//! and reference-trajectory generation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::growth::{
    daily_deaths, individual_rhs, mortality_k1, population_rhs_with_k1, sigma_oxygen, tau_temperature, v_ammonia,
    EnvState, GrowthError, GrowthParams, SimState, StockingPolicy,
};
use crate::profile::{Ambient, EnvProfile};

const DAY_EPS: f64 = 1e-9;

/// Manipulated inputs u = [f, T, DO].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlAction {
    pub f: f64,
    pub temp_c: f64,
    pub do_mgl: f64,
}

impl ControlAction {
    pub fn new(f: f64, temp_c: f64, do_mgl: f64) -> Self {
        Self { f, temp_c, do_mgl }
    }

    /// Feed `f` with temperature and oxygen left at ambient.
    pub fn feed_only(f: f64, ambient: &Ambient) -> Self {
        Self::new(f, ambient.temp_c, ambient.do_mgl)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.f, self.temp_c, self.do_mgl]
    }

    pub fn from_array(u: [f64; 3]) -> Self {
        Self::new(u[0], u[1], u[2])
    }

    pub fn env(&self, ambient: &Ambient) -> EnvState {
        EnvState {
            f: self.f,
            temp_c: self.temp_c,
            do_mgl: self.do_mgl,
            uia_mgl: ambient.uia_mgl,
            rho: ambient.rho,
        }
    }

    fn check(&self) -> Result<(), StepError> {
        let ok = self.as_array().iter().all(|v| v.is_finite()) && (0.0..=1.0).contains(&self.f) && self.do_mgl >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(StepError::InvalidAction(*self))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Euler,
    #[default]
    Rk4,
}

/// Source of the per-day mortality coefficient k1.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", content = "per_day", rename_all = "lowercase")]
pub enum Mortality {
    /// Logistic fit against un-ionized ammonia.
    #[default]
    Logistic,
    /// Fixed coefficient, independent of ammonia.
    Fixed(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error(transparent)]
    Growth(#[from] GrowthError),
    #[error("action out of range: {0:?}")]
    InvalidAction(ControlAction),
    #[error("state became non-finite or non-positive: {0:?}")]
    BlowUp(SimState),
}

/// The plant as seen by one integration step.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub params: GrowthParams,
    pub dt: f64,
    pub integrator: Integrator,
    pub stocking: StockingPolicy,
    pub mortality: Mortality,
}

impl Plant {
    pub fn new(params: GrowthParams, dt: f64) -> Self {
        Self {
            params,
            dt,
            integrator: Integrator::Rk4,
            stocking: StockingPolicy::default(),
            mortality: Mortality::Logistic,
        }
    }

    pub fn k1(&self, uia: f64) -> f64 {
        match self.mortality {
            Mortality::Logistic => mortality_k1(uia, &self.params),
            Mortality::Fixed(k1) => k1,
        }
    }

    /// Time derivative of the biomass coordinate (w or ξ), fish count held.
    pub fn biomass_rate(&self, state: &SimState, env: &EnvState) -> Result<f64, GrowthError> {
        match *state {
            SimState::Individual { w } => individual_rhs(w, env, &self.params),
            SimState::Population { xi, p } => {
                let k1 = self.k1(env.uia_mgl);
                population_rhs_with_k1(xi, p, env, &self.stocking, k1, &self.params).map(|(dxi, _)| dxi)
            }
        }
    }

    /// Advances one `dt` under zero-order hold of the action and ambient
    /// values. When `day_boundary` is set the fish count takes its daily
    /// stocking/mortality update.
    pub fn step(
        &self,
        state: SimState,
        action: &ControlAction,
        ambient: &Ambient,
        day_boundary: bool,
    ) -> Result<SimState, StepError> {
        action.check()?;
        let env = action.env(ambient);
        let x0 = state.biomass();
        let rate = |x: f64| self.biomass_rate(&state.with_biomass(x), &env);
        let dt = self.dt;
        let x1 = match self.integrator {
            Integrator::Euler => x0 + dt * rate(x0)?,
            Integrator::Rk4 => {
                let k1 = rate(x0)?;
                let k2 = rate(x0 + 0.5 * dt * k1)?;
                let k3 = rate(x0 + 0.5 * dt * k2)?;
                let k4 = rate(x0 + dt * k3)?;
                x0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            }
        };
        let next = match state {
            SimState::Individual { .. } => SimState::Individual { w: x1 },
            SimState::Population { p, .. } => {
                let p = if day_boundary {
                    let deaths = daily_deaths(p, self.k1(env.uia_mgl));
                    p - deaths + self.stocking.fish_per_day
                } else {
                    p
                };
                SimState::Population { xi: x1, p }
            }
        };
        let healthy = match next {
            SimState::Individual { w } => w.is_finite() && w > 0.0,
            SimState::Population { xi, .. } => xi.is_finite() && xi >= 0.0,
        };
        if healthy {
            Ok(next)
        } else {
            Err(StepError::BlowUp(next))
        }
    }

    pub fn effects(&self, action: Option<&ControlAction>, ambient: &Ambient) -> Effects {
        Effects {
            tau: action.map(|a| tau_temperature(a.temp_c, &self.params)),
            sigma: action.map(|a| sigma_oxygen(a.do_mgl, &self.params)),
            v: v_ammonia(ambient.uia_mgl, &self.params),
            k1: self.k1(ambient.uia_mgl),
        }
    }
}

/// Whether step `k` (covering `[k·dt, (k+1)·dt)`) ends on a whole day.
pub fn crosses_day(k: usize, dt: f64) -> bool {
    ((k + 1) as f64 * dt + DAY_EPS).floor() > (k as f64 * dt + DAY_EPS).floor()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("tf ({tf}) must not precede t0 ({t0})")]
    Horizon { t0: f64, tf: f64 },
    #[error("dt must lie in (0, 1], got {0}")]
    Dt(f64),
    #[error("(tf - t0)/dt = {0} is not a whole number of steps")]
    Fractional(f64),
    #[error("invalid initial state: {0}")]
    Initial(String),
    #[error(transparent)]
    Params(#[from] GrowthError),
}

/// A configuration problem, named by the offending key.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{key}: {reason}")]
pub struct InvalidKey {
    pub key: &'static str,
    pub reason: String,
}

impl InvalidKey {
    pub fn new(key: &'static str, reason: impl Into<String>) -> Self {
        Self {
            key,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub t0: f64,
    pub tf: f64,
    pub seed: u64,
    pub initial: SimState,
    pub profile: EnvProfile,
    pub plant: Plant,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.plant.params.validate()?;
        let dt = self.plant.dt;
        if !(dt > 0.0 && dt <= 1.0) {
            return Err(ConfigError::Dt(dt));
        }
        if !(self.tf >= self.t0) {
            return Err(ConfigError::Horizon {
                t0: self.t0,
                tf: self.tf,
            });
        }
        let ratio = (self.tf - self.t0) / dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(ConfigError::Fractional(ratio));
        }
        match self.initial {
            SimState::Individual { w } if !(w > 0.0 && w.is_finite()) => {
                return Err(ConfigError::Initial(format!("w = {w}")));
            }
            SimState::Population { xi, p } if !(xi >= 0.0 && xi.is_finite()) || (p == 0 && xi > 0.0) => {
                return Err(ConfigError::Initial(format!("xi = {xi}, p = {p}")));
            }
            _ => {}
        }
        if let Mortality::Fixed(k1) = self.plant.mortality {
            if !(k1 >= 0.0 && k1.is_finite()) {
                return Err(ConfigError::Initial(format!("fixed mortality {k1}")));
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        ((self.tf - self.t0) / self.plant.dt).round() as usize
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.plant.dt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Effects {
    pub tau: Option<f64>,
    pub sigma: Option<f64>,
    pub v: f64,
    pub k1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChosenBy {
    Mpc,
    Q,
    /// MPC was infeasible and the previous action was repeated.
    Fallback,
}

impl ChosenBy {
    pub fn as_str(&self) -> &'static str {
        match self {
            ChosenBy::Mpc => "mpc",
            ChosenBy::Q => "q",
            ChosenBy::Fallback => "fallback",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mpc" => Some(ChosenBy::Mpc),
            "q" => Some(ChosenBy::Q),
            "fallback" => Some(ChosenBy::Fallback),
            _ => None,
        }
    }
}

/// One row of a trajectory. The final record of a run carries no action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub t: f64,
    pub state: SimState,
    pub action: Option<ControlAction>,
    pub uia_mgl: f64,
    pub effects: Effects,
    pub reward: Option<f64>,
    pub mpc_cost: Option<f64>,
    pub chosen_by: Option<ChosenBy>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    records: Vec<Record>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: Record) {
        if let Some(last) = self.records.last() {
            assert!(record.t > last.t, "trajectory time must increase");
        }
        self.records.push(record);
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&Record> {
        self.records.last()
    }

    pub fn biomass(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.state.biomass()).collect()
    }

    /// Sum of logged rewards (missing rewards count as zero).
    pub fn episode_return(&self) -> f64 {
        self.records.iter().filter_map(|r| r.reward).sum()
    }
}

/// A tracking target w_ref(t) sampled on the simulation grid and held at
/// its last value beyond the end.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub t0: f64,
    pub dt: f64,
    pub values: Vec<f64>,
}

impl Reference {
    pub fn from_trajectory(traj: &Trajectory, dt: f64) -> Self {
        let t0 = traj.records().first().map_or(0.0, |r| r.t);
        Self {
            t0,
            dt,
            values: traj.biomass(),
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        let idx = ((t - self.t0) / self.dt).round().max(0.0) as usize;
        self.values[idx.min(self.values.len() - 1)]
    }
}

/// Everything a controller may consult besides the current measurement.
#[derive(Debug, Clone, Copy)]
pub struct LoopContext<'a> {
    pub plant: &'a Plant,
    pub profile: &'a EnvProfile,
    pub reference: Option<&'a Reference>,
    pub t0: f64,
    pub tf: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub step: usize,
    pub t: f64,
    pub state: SimState,
    pub ambient: Ambient,
    pub reference: Option<f64>,
    pub last_action: Option<ControlAction>,
    pub ctx: LoopContext<'a>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub action: ControlAction,
    pub reward: Option<f64>,
    pub mpc_cost: Option<f64>,
    pub chosen_by: Option<ChosenBy>,
}

impl Decision {
    pub fn plain(action: ControlAction) -> Self {
        Self {
            action,
            reward: None,
            mpc_cost: None,
            chosen_by: None,
        }
    }
}

/// Values logged on the final record, after the last action took effect.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Closing {
    pub reward: Option<f64>,
    pub mpc_cost: Option<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("controller needs a reference trajectory")]
    MissingReference,
    #[error("no feasible input sequence found")]
    Infeasible,
    #[error(transparent)]
    Step(#[from] StepError),
    #[error("{0}")]
    Other(String),
}

/// A feedback law consulted once per step.
pub trait Controller {
    fn name(&self) -> &str;

    /// Called once before the first step of a run.
    fn reset(&mut self, _ctx: &LoopContext<'_>) {}

    fn act(&mut self, obs: &Observation<'_>) -> Result<Decision, ControlError>;

    /// Called with the terminal state after the last step.
    fn finish(&mut self, _obs: &Observation<'_>) -> Result<Closing, ControlError> {
        Ok(Closing::default())
    }
}

/// Feeds at a fixed rate and leaves temperature and oxygen at ambient.
#[derive(Debug, Clone)]
pub struct ConstantFeed {
    pub f: f64,
}

impl Controller for ConstantFeed {
    fn name(&self) -> &str {
        "constant"
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<Decision, ControlError> {
        Ok(Decision::plain(ControlAction::feed_only(self.f, &obs.ambient)))
    }
}

/// Applies the same full action every step.
#[derive(Debug, Clone)]
pub struct FixedAction(pub ControlAction);

impl Controller for FixedAction {
    fn name(&self) -> &str {
        "fixed"
    }

    fn act(&mut self, _obs: &Observation<'_>) -> Result<Decision, ControlError> {
        Ok(Decision::plain(self.0))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("step {step}: {source}")]
    Step { step: usize, source: StepError },
    #[error("step {step}: controller failed: {source}")]
    Control { step: usize, source: ControlError },
}

impl SimError {
    pub fn step(&self) -> Option<usize> {
        match self {
            SimError::Config(_) => None,
            SimError::Step { step, .. } | SimError::Control { step, .. } => Some(*step),
        }
    }
}

/// Closed-loop rollout: the controller acts on the latest state at the
/// start of each step and its action is held for `dt`.
pub fn simulate(
    cfg: &SimConfig,
    reference: Option<&Reference>,
    controller: &mut dyn Controller,
) -> Result<Trajectory, SimError> {
    cfg.validate()?;
    let ctx = LoopContext {
        plant: &cfg.plant,
        profile: &cfg.profile,
        reference,
        t0: cfg.t0,
        tf: cfg.tf,
        seed: cfg.seed,
    };
    controller.reset(&ctx);
    let mut traj = Trajectory::new();
    let mut state = cfg.initial;
    let mut last_action = None;
    let steps = cfg.steps();
    for k in 0..=steps {
        let t = cfg.time(k);
        let ambient = cfg.profile.at(t);
        let obs = Observation {
            step: k,
            t,
            state,
            ambient,
            reference: reference.map(|r| r.at(t)),
            last_action,
            ctx,
        };
        if k == steps {
            let closing = controller
                .finish(&obs)
                .map_err(|source| SimError::Control { step: k, source })?;
            traj.push(Record {
                t,
                state,
                action: None,
                uia_mgl: ambient.uia_mgl,
                effects: cfg.plant.effects(None, &ambient),
                reward: closing.reward,
                mpc_cost: closing.mpc_cost,
                chosen_by: None,
            });
            break;
        }
        let decision = controller
            .act(&obs)
            .map_err(|source| SimError::Control { step: k, source })?;
        let action = decision.action;
        traj.push(Record {
            t,
            state,
            action: Some(action),
            uia_mgl: ambient.uia_mgl,
            effects: cfg.plant.effects(Some(&action), &ambient),
            reward: decision.reward,
            mpc_cost: decision.mpc_cost,
            chosen_by: decision.chosen_by,
        });
        state = cfg
            .plant
            .step(state, &action, &ambient, crosses_day(k, cfg.plant.dt))
            .map_err(|source| SimError::Step { step: k, source })?;
        last_action = Some(action);
    }
    Ok(traj)
}

/// Nominal growth under optimal conditions (T = T_opt, DO = DO_hi, no
/// ammonia, neutral photoperiod) at constant feeding rate `f_ref`.
pub fn reference_trajectory(cfg: &SimConfig, f_ref: f64) -> Result<Trajectory, SimError> {
    if !(0.0..=1.0).contains(&f_ref) {
        return Err(SimError::Step {
            step: 0,
            source: StepError::InvalidAction(ControlAction::new(f_ref, f64::NAN, f64::NAN)),
        });
    }
    let p = &cfg.plant.params;
    let nominal = SimConfig {
        profile: EnvProfile::constant(Ambient {
            temp_c: p.t_opt,
            do_mgl: p.do_hi,
            uia_mgl: 0.0,
            rho: 1.0,
        }),
        ..cfg.clone()
    };
    let mut ctl = FixedAction(ControlAction::new(f_ref, p.t_opt, p.do_hi));
    simulate(&nominal, None, &mut ctl)
}
