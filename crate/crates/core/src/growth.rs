//! Bioenergetic growth model: environmental effect functions, the individual
//! and population right-hand sides, mortality, and the FCR/SGR metrics.
//!
//! Everything here is a pure function of its arguments. Weights are in kcal
//! and time in days throughout.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrowthError {
    #[error("weight must be positive, got {0}")]
    NonPositiveWeight(f64),
    #[error("population has biomass {xi} kcal but no fish")]
    EmptyPopulation { xi: f64 },
    #[error("weight gain {0} is not positive; FCR is undefined")]
    DegenerateGain(f64),
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("invalid parameter `{key}`: {reason}")]
    InvalidParam { key: &'static str, reason: String },
}

/// Growth-model constants (tilapia defaults).
///
/// The dissolved-oxygen ramp is stored as a lower cutoff `do_lo` and a
/// saturation threshold `do_hi`, so `do_lo < do_hi` is required.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthParams {
    /// Body-weight exponent of net anabolism.
    pub m: f64,
    /// Body-weight exponent of fasting catabolism.
    pub n: f64,
    /// Efficiency of food assimilation.
    pub b: f64,
    /// Fraction of the food assimilated.
    pub a: f64,
    /// Coefficient of food consumption, kcal^(1-m)/day.
    pub h: f64,
    /// Fasting catabolism at `t_min`, kcal^(1-n)/day.
    pub k_min: f64,
    /// Temperature coefficient of catabolism, 1/°C.
    pub j: f64,
    pub kappa: f64,
    pub t_opt: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub uia_crit: f64,
    pub uia_max: f64,
    pub do_lo: f64,
    pub do_hi: f64,
    /// Mortality logistic asymptote, percent.
    pub z: f64,
    /// Mortality logistic steepness, L/mg.
    pub beta: f64,
    /// Mortality logistic midpoint, mg/L.
    pub eta: f64,
    /// Converts the logistic's percent value into a per-day death fraction.
    pub mortality_scale: f64,
    /// Maximal daily ration as a fraction of body weight.
    pub r_frac: f64,
}

impl Default for GrowthParams {
    fn default() -> Self {
        Self {
            m: 0.67,
            n: 0.81,
            b: 0.62,
            a: 0.53,
            h: 0.8,
            k_min: 0.00133,
            j: 0.0132,
            kappa: 4.6,
            t_opt: 33.0,
            t_min: 24.0,
            t_max: 40.0,
            uia_crit: 0.06,
            uia_max: 1.4,
            do_lo: 0.3,
            do_hi: 1.0,
            z: 99.41,
            beta: 10.36,
            eta: 0.80,
            mortality_scale: 0.01,
            r_frac: 0.1,
        }
    }
}

impl GrowthParams {
    pub fn validate(&self) -> Result<(), GrowthError> {
        let finite = [
            ("m", self.m),
            ("n", self.n),
            ("b", self.b),
            ("a", self.a),
            ("h", self.h),
            ("k_min", self.k_min),
            ("j", self.j),
            ("kappa", self.kappa),
            ("t_opt", self.t_opt),
            ("t_min", self.t_min),
            ("t_max", self.t_max),
            ("uia_crit", self.uia_crit),
            ("uia_max", self.uia_max),
            ("do_lo", self.do_lo),
            ("do_hi", self.do_hi),
            ("z", self.z),
            ("beta", self.beta),
            ("eta", self.eta),
            ("mortality_scale", self.mortality_scale),
            ("r_frac", self.r_frac),
        ];
        for (key, value) in finite {
            if !value.is_finite() {
                return Err(invalid(key, format!("{value} is not finite")));
            }
        }
        if !(self.m > 0.0) {
            return Err(invalid("m", "must be positive"));
        }
        if !(self.m < self.n && self.n < 1.0) {
            return Err(invalid("n", "must satisfy m < n < 1"));
        }
        if !(self.b > 0.0 && self.b <= 1.0) {
            return Err(invalid("b", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.a) {
            return Err(invalid("a", "must lie in [0, 1]"));
        }
        if !(self.h >= 0.0) {
            return Err(invalid("h", "must be non-negative"));
        }
        for (key, value) in [
            ("k_min", self.k_min),
            ("j", self.j),
            ("kappa", self.kappa),
            ("z", self.z),
            ("beta", self.beta),
            ("eta", self.eta),
            ("mortality_scale", self.mortality_scale),
        ] {
            if !(value > 0.0) {
                return Err(invalid(key, "must be positive"));
            }
        }
        if !(self.t_min < self.t_opt) {
            return Err(invalid("t_min", "must be below t_opt"));
        }
        if !(self.t_opt < self.t_max) {
            return Err(invalid("t_max", "must be above t_opt"));
        }
        if !(self.uia_crit >= 0.0) {
            return Err(invalid("uia_crit", "must be non-negative"));
        }
        if !(self.uia_crit < self.uia_max) {
            return Err(invalid("uia_max", "must be above uia_crit"));
        }
        if !(self.do_lo >= 0.0) {
            return Err(invalid("do_lo", "must be non-negative"));
        }
        if !(self.do_lo < self.do_hi) {
            return Err(invalid("do_hi", "must be above do_lo"));
        }
        if !(self.r_frac > 0.0 && self.r_frac <= 1.0) {
            return Err(invalid("r_frac", "must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Maximal daily ration R for a fish (or biomass) of `w` kcal.
    pub fn max_ration(&self, w: f64) -> f64 {
        self.r_frac * w
    }
}

fn invalid(key: &'static str, reason: impl Into<String>) -> GrowthError {
    GrowthError::InvalidParam {
        key,
        reason: reason.into(),
    }
}

/// Environment and feeding conditions at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    /// Relative feeding rate r/R in [0, 1].
    pub f: f64,
    pub temp_c: f64,
    pub do_mgl: f64,
    pub uia_mgl: f64,
    /// Photoperiod factor in (0, 2).
    pub rho: f64,
}

impl EnvState {
    /// Optimal conditions at feeding rate `f`: T = T_opt, saturated oxygen,
    /// no ammonia, neutral photoperiod.
    pub fn optimal(f: f64, params: &GrowthParams) -> Self {
        Self {
            f,
            temp_c: params.t_opt,
            do_mgl: params.do_hi,
            uia_mgl: 0.0,
            rho: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum SimState {
    Individual { w: f64 },
    Population { xi: f64, p: u64 },
}

impl SimState {
    /// The weight the controllers act on: individual weight or total biomass.
    pub fn biomass(&self) -> f64 {
        match *self {
            SimState::Individual { w } => w,
            SimState::Population { xi, .. } => xi,
        }
    }

    /// Mean fish weight; `None` for an empty population.
    pub fn mean_weight(&self) -> Option<f64> {
        match *self {
            SimState::Individual { w } => Some(w),
            SimState::Population { xi, p } if p > 0 => Some(xi / p as f64),
            SimState::Population { .. } => None,
        }
    }

    pub fn count(&self) -> Option<u64> {
        match *self {
            SimState::Individual { .. } => None,
            SimState::Population { p, .. } => Some(p),
        }
    }

    pub(crate) fn with_biomass(self, value: f64) -> Self {
        match self {
            SimState::Individual { .. } => SimState::Individual { w: value },
            SimState::Population { p, .. } => SimState::Population { xi: value, p },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StockingPolicy {
    /// Fish stocked per day.
    pub fish_per_day: u64,
    /// Biomass of each stocked fish, kcal.
    pub kcal_per_fish: f64,
}

/// Temperature effect τ(T): quartic-exponential bell, 1 at `t_opt`,
/// `exp(-kappa)` at both lethal limits.
pub fn tau_temperature(temp_c: f64, params: &GrowthParams) -> f64 {
    let x = if temp_c > params.t_opt {
        (temp_c - params.t_opt) / (params.t_max - params.t_opt)
    } else {
        (params.t_opt - temp_c) / (params.t_opt - params.t_min)
    };
    (-params.kappa * x.powi(4)).exp()
}

/// Un-ionized ammonia effect v(UIA). The ramp is closed at both ends so the
/// function is continuous.
pub fn v_ammonia(uia: f64, params: &GrowthParams) -> f64 {
    if uia < params.uia_crit {
        1.0
    } else if uia <= params.uia_max {
        (params.uia_max - uia) / (params.uia_max - params.uia_crit)
    } else {
        0.0
    }
}

/// Dissolved-oxygen effect σ(DO); continuous ramp between `do_lo` and `do_hi`.
pub fn sigma_oxygen(oxygen: f64, params: &GrowthParams) -> f64 {
    if oxygen > params.do_hi {
        1.0
    } else if oxygen >= params.do_lo {
        (oxygen - params.do_lo) / (params.do_hi - params.do_lo)
    } else {
        0.0
    }
}

/// Fasting catabolism coefficient k(T) = k_min·exp(j(T − T_min)).
pub fn catabolism_k(temp_c: f64, params: &GrowthParams) -> f64 {
    params.k_min * (params.j * (temp_c - params.t_min)).exp()
}

/// Anabolism coefficient Ψ = h·ρ·f·b·(1 − a)·τ(T)·σ(DO).
pub fn anabolism_psi(env: &EnvState, params: &GrowthParams) -> f64 {
    params.h
        * env.rho
        * env.f
        * params.b
        * (1.0 - params.a)
        * tau_temperature(env.temp_c, params)
        * sigma_oxygen(env.do_mgl, params)
}

/// Per-day death fraction from the logistic fit against UIA.
pub fn mortality_k1(uia: f64, params: &GrowthParams) -> f64 {
    let percent = params.z / (1.0 + (-params.beta * (uia - params.eta)).exp());
    params.mortality_scale * percent
}

/// dw/dt = Ψ·v·w^m − k(T)·w^n for a single fish.
pub fn individual_rhs(w: f64, env: &EnvState, params: &GrowthParams) -> Result<f64, GrowthError> {
    if !(w > 0.0) {
        return Err(GrowthError::NonPositiveWeight(w));
    }
    let anabolic = anabolism_psi(env, params) * v_ammonia(env.uia_mgl, params) * w.powf(params.m);
    let catabolic = catabolism_k(env.temp_c, params) * w.powf(params.n);
    Ok(anabolic - catabolic)
}

/// Weight at which anabolism and catabolism balance under a constant
/// environment, or `None` when anabolism is zero.
pub fn fixed_point_weight(env: &EnvState, params: &GrowthParams) -> Option<f64> {
    let gain = anabolism_psi(env, params) * v_ammonia(env.uia_mgl, params);
    if gain > 0.0 {
        let loss = catabolism_k(env.temp_c, params);
        Some((gain / loss).powf(1.0 / (params.n - params.m)))
    } else {
        None
    }
}

/// Population rates `(dξ/dt, dp/dt)` with the mortality coefficient supplied
/// explicitly. Fish losses are `floor(p·k1)` per day.
pub fn population_rhs_with_k1(
    xi: f64,
    p: u64,
    env: &EnvState,
    stocking: &StockingPolicy,
    k1: f64,
    params: &GrowthParams,
) -> Result<(f64, f64), GrowthError> {
    if !(xi >= 0.0) {
        return Err(GrowthError::NonPositiveWeight(xi));
    }
    let stocked = stocking.fish_per_day as f64;
    let stocking_flux = stocked * stocking.kcal_per_fish;
    if p == 0 {
        if xi > 0.0 {
            return Err(GrowthError::EmptyPopulation { xi });
        }
        return Ok((stocking_flux, stocked));
    }
    let count = p as f64;
    let mean = xi / count;
    let anabolic = anabolism_psi(env, params) * v_ammonia(env.uia_mgl, params) * xi.powf(params.m);
    let catabolic = catabolism_k(env.temp_c, params) * xi.powf(params.n);
    let dxi = stocking_flux + anabolic - catabolic - count * k1 * mean;
    let dp = stocked - daily_deaths(p, k1) as f64;
    Ok((dxi, dp))
}

/// Population rates with k1 taken from the ammonia logistic.
pub fn population_rhs(
    xi: f64,
    p: u64,
    env: &EnvState,
    stocking: &StockingPolicy,
    params: &GrowthParams,
) -> Result<(f64, f64), GrowthError> {
    let k1 = mortality_k1(env.uia_mgl, params);
    population_rhs_with_k1(xi, p, env, stocking, k1, params)
}

/// Whole fish lost in one day: floor(p·k1).
pub fn daily_deaths(p: u64, k1: f64) -> u64 {
    let expected = p as f64 * k1;
    if expected <= 0.0 {
        0
    } else {
        (expected.floor() as u64).min(p)
    }
}

/// Feed conversion ratio: feed supplied per unit of weight gained.
pub fn fcr(total_feed: f64, weight_gain: f64) -> Result<f64, GrowthError> {
    if !(weight_gain > 0.0) {
        return Err(GrowthError::DegenerateGain(weight_gain));
    }
    Ok(total_feed / weight_gain)
}

/// Specific growth rate in percent per day.
pub fn sgr(w0: f64, wf: f64, days: f64) -> Result<f64, GrowthError> {
    for (name, value) in [("w0", w0), ("wf", wf), ("days", days)] {
        if !(value > 0.0) {
            return Err(GrowthError::NonPositive { name, value });
        }
    }
    Ok(100.0 * (wf.ln() - w0.ln()) / days)
}
