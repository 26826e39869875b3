//! On-off and PID feedback loops over the feed, temperature and oxygen
//! channels.
//!
//! The feed loop tracks the reference weight (error = w_ref − w) and its
//! output is the feeding rate. Temperature and oxygen loops track a fixed
//! setpoint against the last applied water value; their output is an
//! actuator offset (heater °C, aerator mg/L) added to ambient.

use serde::{Deserialize, Serialize};

use crate::sim::{ControlAction, ControlError, Controller, Decision, LoopContext, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Feed,
    Temperature,
    Oxygen,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BangBangConfig {
    /// Desired value; the feed loop ignores this and follows the reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setpoint: Option<f64>,
    pub on_value: f64,
    pub off_value: f64,
    #[serde(default)]
    pub deadband: f64,
}

impl BangBangConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.on_value == self.off_value {
            return Err("on_value");
        }
        if !(self.deadband >= 0.0) {
            return Err("deadband");
        }
        Ok(())
    }
}

/// Memoryless on-off law: on iff `setpoint − measurement > 0`.
pub fn bang_bang(measurement: f64, setpoint: f64, cfg: &BangBangConfig) -> f64 {
    if setpoint - measurement > 0.0 {
        cfg.on_value
    } else {
        cfg.off_value
    }
}

/// On-off switch with an optional deadband. Inside the band the previous
/// output is held.
#[derive(Debug, Clone)]
pub struct BangBang {
    pub cfg: BangBangConfig,
    on: Option<bool>,
}

impl BangBang {
    pub fn new(cfg: BangBangConfig) -> Self {
        Self { cfg, on: None }
    }

    pub fn reset(&mut self) {
        self.on = None;
    }

    pub fn update(&mut self, measurement: f64, setpoint: f64) -> f64 {
        let half = 0.5 * self.cfg.deadband;
        let on = if half == 0.0 {
            setpoint - measurement > 0.0
        } else if measurement < setpoint - half {
            true
        } else if measurement > setpoint + half {
            false
        } else {
            self.on.unwrap_or(setpoint - measurement > 0.0)
        };
        self.on = Some(on);
        if on {
            self.cfg.on_value
        } else {
            self.cfg.off_value
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setpoint: Option<f64>,
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub u_min: f64,
    pub u_max: f64,
    /// Symmetric bound on the integral state.
    pub integral_clamp: f64,
    /// Time constant (days) of a first-order filter on the derivative.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derivative_filter: Option<f64>,
}

impl PidConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        for (key, v) in [("kp", self.kp), ("ki", self.ki), ("kd", self.kd)] {
            if !v.is_finite() {
                return Err(key);
            }
        }
        if !(self.u_min < self.u_max) {
            return Err("u_max");
        }
        if !(self.integral_clamp >= 0.0) {
            return Err("integral_clamp");
        }
        if let Some(tau) = self.derivative_filter {
            if !(tau >= 0.0) {
                return Err("derivative_filter");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidState {
    pub integral: f64,
    pub prev_error: f64,
    pub prev_derivative: f64,
}

/// One discrete PID update: trapezoidal integral, backward-difference
/// derivative on the error, output clamp. The integral is frozen while the
/// output is saturated in the direction the error pushes.
pub fn pid_step(error: f64, dt: f64, state: &mut PidState, cfg: &PidConfig) -> f64 {
    debug_assert!(dt > 0.0);
    let candidate =
        (state.integral + 0.5 * (state.prev_error + error) * dt).clamp(-cfg.integral_clamp, cfg.integral_clamp);
    let raw = (error - state.prev_error) / dt;
    let derivative = match cfg.derivative_filter {
        Some(tau) if tau > 0.0 => (tau * state.prev_derivative + dt * raw) / (tau + dt),
        _ => raw,
    };
    let unclamped = cfg.kp * error + cfg.ki * candidate + cfg.kd * derivative;
    let winding_up = (unclamped > cfg.u_max && error > 0.0) || (unclamped < cfg.u_min && error < 0.0);
    if !winding_up {
        state.integral = candidate;
    }
    state.prev_error = error;
    state.prev_derivative = derivative;
    unclamped.clamp(cfg.u_min, cfg.u_max)
}

/// Per-channel loop configuration shared by both classical controllers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "C: Deserialize<'de>"))]
pub struct ChannelLoops<C> {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feed: Option<C>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<C>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oxygen: Option<C>,
    /// Feeding rate used when no feed loop is configured.
    #[serde(default)]
    pub default_feed: f64,
}

impl<C> ChannelLoops<C> {
    pub fn iter(&self) -> impl Iterator<Item = (Channel, &C)> {
        [
            (Channel::Feed, self.feed.as_ref()),
            (Channel::Temperature, self.temperature.as_ref()),
            (Channel::Oxygen, self.oxygen.as_ref()),
        ]
        .into_iter()
        .filter_map(|(ch, c)| c.map(|c| (ch, c)))
    }
}

#[derive(Debug, Clone)]
enum Law {
    BangBang(BangBang),
    Pid { cfg: PidConfig, state: PidState },
}

#[derive(Debug, Clone)]
struct Loop {
    channel: Channel,
    setpoint: Option<f64>,
    law: Law,
}

/// Bang-bang or PID loops on any subset of the three channels.
#[derive(Debug, Clone)]
pub struct Classical {
    name: &'static str,
    loops: Vec<Loop>,
    default_feed: f64,
}

impl Classical {
    pub fn bang_bang(cfg: &ChannelLoops<BangBangConfig>) -> Self {
        Self {
            name: "bangbang",
            loops: cfg
                .iter()
                .map(|(channel, c)| Loop {
                    channel,
                    setpoint: c.setpoint,
                    law: Law::BangBang(BangBang::new(*c)),
                })
                .collect(),
            default_feed: cfg.default_feed,
        }
    }

    pub fn pid(cfg: &ChannelLoops<PidConfig>) -> Self {
        Self {
            name: "pid",
            loops: cfg
                .iter()
                .map(|(channel, c)| Loop {
                    channel,
                    setpoint: c.setpoint,
                    law: Law::Pid {
                        cfg: *c,
                        state: PidState::default(),
                    },
                })
                .collect(),
            default_feed: cfg.default_feed,
        }
    }
}

impl Controller for Classical {
    fn name(&self) -> &str {
        self.name
    }

    fn reset(&mut self, _ctx: &LoopContext<'_>) {
        for lp in &mut self.loops {
            match &mut lp.law {
                Law::BangBang(b) => b.reset(),
                Law::Pid { state, .. } => *state = PidState::default(),
            }
        }
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<Decision, ControlError> {
        let mut action = ControlAction::feed_only(self.default_feed, &obs.ambient);
        let dt = obs.ctx.plant.dt;
        for lp in &mut self.loops {
            let (measurement, setpoint) = match lp.channel {
                Channel::Feed => (
                    obs.state.biomass(),
                    obs.reference.ok_or(ControlError::MissingReference)?,
                ),
                Channel::Temperature => (
                    obs.last_action.map_or(obs.ambient.temp_c, |a| a.temp_c),
                    lp.setpoint
                        .ok_or_else(|| ControlError::Other("temperature loop needs a setpoint".into()))?,
                ),
                Channel::Oxygen => (
                    obs.last_action.map_or(obs.ambient.do_mgl, |a| a.do_mgl),
                    lp.setpoint
                        .ok_or_else(|| ControlError::Other("oxygen loop needs a setpoint".into()))?,
                ),
            };
            let output = match &mut lp.law {
                Law::BangBang(b) => b.update(measurement, setpoint),
                Law::Pid { cfg, state } => pid_step(setpoint - measurement, dt, state, cfg),
            };
            match lp.channel {
                Channel::Feed => action.f = output.clamp(0.0, 1.0),
                Channel::Temperature => action.temp_c = obs.ambient.temp_c + output,
                Channel::Oxygen => action.do_mgl = (obs.ambient.do_mgl + output).max(0.0),
            }
        }
        Ok(Decision::plain(action))
    }
}
