//! Receding-horizon control by sampled direct search.
//!
//! Each solve draws candidate input sequences (M free moves, held for the
//! remaining N − M steps), rolls them out through the plant, and refits the
//! proposal on the elite fraction, cross-entropy style. The objective is a
//! left Riemann sum of the stage cost at the simulation `dt`. Predicted
//! states that leave `[w_0, w_end]` add a fixed penalty per step; only
//! penalty-free candidates count as feasible.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::growth::{GrowthParams, SimState};
use crate::profile::{Ambient, EnvProfile};
use crate::rng::{stream_rng, Stream};
use crate::sim::{
    crosses_day, ChosenBy, ControlAction, ControlError, Controller, Decision, InvalidKey, LoopContext, Observation,
    Plant, Reference,
};

/// Added to the objective for every predicted step outside the state bounds.
pub const BOUND_PENALTY: f64 = 1e9;

const MIN_STD: f64 = 1e-9;
const LATTICE_SMOOTHING: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageCostKind {
    #[default]
    Tracking,
    Economic,
}

/// Whether the optimizer sets a channel or leaves it at ambient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelMode {
    Controlled,
    #[default]
    Ambient,
}

/// Discrete action set: the Cartesian product of the listed levels. A
/// channel left at ambient must have an empty level list.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lattice {
    pub f: Vec<f64>,
    #[serde(default)]
    pub temp_c: Vec<f64>,
    #[serde(default)]
    pub do_mgl: Vec<f64>,
}

impl Lattice {
    pub fn feed(levels: &[f64]) -> Self {
        Self {
            f: levels.to_vec(),
            ..Default::default()
        }
    }

    fn points(&self) -> Vec<[f64; 3]> {
        let or_nan = |v: &Vec<f64>| if v.is_empty() { vec![f64::NAN] } else { v.clone() };
        let mut out = Vec::new();
        for &f in &self.f {
            for &t in &or_nan(&self.temp_c) {
                for &d in &or_nan(&self.do_mgl) {
                    out.push([f, t, d]);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcConfig {
    /// Prediction horizon, steps.
    #[serde(rename = "N")]
    pub horizon: usize,
    /// Control horizon, steps; inputs are held constant after it.
    #[serde(rename = "M")]
    pub control_horizon: usize,
    /// Candidates per iteration.
    #[serde(rename = "S")]
    pub samples: usize,
    pub iterations: usize,
    pub elite_frac: f64,
    pub cost: StageCostKind,
    /// Lower input bounds `[f, T, DO]`.
    pub u_min: [f64; 3],
    pub u_max: [f64; 3],
    pub temperature: ChannelMode,
    pub oxygen: ChannelMode,
    /// Lower state bound on predicted biomass.
    pub w_0: f64,
    /// Upper state bound on predicted biomass.
    pub w_end: f64,
    pub q_w: f64,
    pub r_f: f64,
    pub rate_weight: f64,
    /// Value per kcal of biomass gained (economic cost).
    pub price: f64,
    /// Cost per kcal of feed supplied (economic cost).
    pub feed_cost: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<Lattice>,
    /// Overrides the scenario seed for the optimizer stream.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            control_horizon: 3,
            samples: 64,
            iterations: 4,
            elite_frac: 0.2,
            cost: StageCostKind::Tracking,
            u_min: [0.0, 24.0, 0.3],
            u_max: [1.0, 33.0, 8.0],
            temperature: ChannelMode::Controlled,
            oxygen: ChannelMode::Ambient,
            w_0: 1.0,
            w_end: 1e5,
            q_w: 1.0,
            r_f: 0.1,
            rate_weight: 0.0,
            price: 1.0,
            feed_cost: 0.3,
            lattice: None,
            seed: None,
        }
    }
}

impl MpcConfig {
    fn controlled(&self) -> [bool; 3] {
        [
            true,
            self.temperature == ChannelMode::Controlled,
            self.oxygen == ChannelMode::Controlled,
        ]
    }

    pub fn validate(&self) -> Result<(), InvalidKey> {
        if self.horizon < 1 {
            return Err(InvalidKey::new("N", "must be at least 1"));
        }
        if self.control_horizon < 1 || self.control_horizon > self.horizon {
            return Err(InvalidKey::new(
                "M",
                format!("must satisfy 1 <= M <= N = {}", self.horizon),
            ));
        }
        if self.samples < 1 {
            return Err(InvalidKey::new("S", "must be at least 1"));
        }
        if self.iterations < 1 {
            return Err(InvalidKey::new("iterations", "must be at least 1"));
        }
        if !(self.elite_frac > 0.0 && self.elite_frac <= 1.0) {
            return Err(InvalidKey::new("elite_frac", "must lie in (0, 1]"));
        }
        for c in 0..3 {
            if !(self.u_min[c].is_finite() && self.u_max[c].is_finite() && self.u_min[c] <= self.u_max[c]) {
                return Err(InvalidKey::new("u_max", "bounds must be finite with u_min <= u_max"));
            }
        }
        if self.u_min[0] < 0.0 || self.u_max[0] > 1.0 {
            return Err(InvalidKey::new("u_min", "feed bounds must lie in [0, 1]"));
        }
        if self.u_min[2] < 0.0 {
            return Err(InvalidKey::new("u_min", "oxygen bound must be non-negative"));
        }
        if !(self.w_0 < self.w_end) {
            return Err(InvalidKey::new("w_end", "must exceed w_0"));
        }
        for (key, v) in [
            ("q_w", self.q_w),
            ("r_f", self.r_f),
            ("rate_weight", self.rate_weight),
            ("price", self.price),
            ("feed_cost", self.feed_cost),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(InvalidKey::new(key, "weights must be finite and non-negative"));
            }
        }
        if let Some(lattice) = &self.lattice {
            let controlled = self.controlled();
            let lists = [&lattice.f, &lattice.temp_c, &lattice.do_mgl];
            for c in 0..3 {
                if controlled[c] == lists[c].is_empty() {
                    return Err(InvalidKey::new(
                        "lattice",
                        "levels are required exactly for the controlled channels",
                    ));
                }
                if lists[c].iter().any(|&v| v < self.u_min[c] || v > self.u_max[c]) {
                    return Err(InvalidKey::new("lattice", "levels must lie within the input bounds"));
                }
            }
        }
        Ok(())
    }

    fn clamp_action(&self, u: [f64; 3]) -> [f64; 3] {
        let mut out = u;
        for c in 0..3 {
            out[c] = u[c].clamp(self.u_min[c], self.u_max[c]);
        }
        out
    }

    /// Whether `action` satisfies the input bounds on the controlled channels.
    pub fn within_bounds(&self, action: &ControlAction) -> bool {
        let u = action.as_array();
        let controlled = self.controlled();
        (0..3).all(|c| !controlled[c] || (u[c] >= self.u_min[c] && u[c] <= self.u_max[c]))
    }

    pub fn within_state_bounds(&self, biomass: f64) -> bool {
        biomass >= self.w_0 && biomass <= self.w_end
    }
}

/// Inputs to one stage-cost evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Stage {
    pub w: f64,
    pub w_ref: f64,
    /// dw/dt at this stage (used by the economic cost).
    pub growth_rate: f64,
    pub action: ControlAction,
    pub prev_action: ControlAction,
}

/// Stage cost per day.
///
/// Tracking: `q_w (w − w_ref)² + r_f f² + rate_weight ‖Δu‖²`.
/// Economic: `−(price·dw/dt − feed_cost·f·R·w) + rate_weight ‖Δu‖²`.
/// Δu only counts the controlled channels.
pub fn stage_cost(stage: &Stage, params: &GrowthParams, cfg: &MpcConfig) -> f64 {
    let controlled = cfg.controlled();
    let (u, prev) = (stage.action.as_array(), stage.prev_action.as_array());
    let du2: f64 = (0..3)
        .filter(|&c| controlled[c])
        .map(|c| (u[c] - prev[c]).powi(2))
        .sum();
    let base = match cfg.cost {
        StageCostKind::Tracking => cfg.q_w * (stage.w - stage.w_ref).powi(2) + cfg.r_f * stage.action.f.powi(2),
        StageCostKind::Economic => {
            let feed = stage.action.f * params.max_ration(stage.w);
            -(cfg.price * stage.growth_rate - cfg.feed_cost * feed)
        }
    };
    base + cfg.rate_weight * du2
}

/// One horizon problem at time `t_k`.
#[derive(Debug, Clone, Copy)]
pub struct HorizonProblem<'a> {
    pub state: SimState,
    pub t_k: f64,
    /// Index of step k since the start of the run (for the daily count update).
    pub step_index: usize,
    pub reference: Option<&'a Reference>,
    pub profile: &'a EnvProfile,
    pub plant: &'a Plant,
    pub prev_action: Option<ControlAction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    /// Applied inputs for all N steps (held after M).
    pub inputs: Vec<ControlAction>,
    /// Predicted states w̃(t_k), …, w̃(t_{k+N}).
    pub predicted: Vec<SimState>,
    /// Objective of the returned sequence, including any bound penalty.
    pub cost: f64,
    pub feasible: bool,
}

impl MpcSolution {
    pub fn first(&self) -> ControlAction {
        self.inputs[0]
    }
}

/// Candidate: the M free moves. Ambient channels hold NaN placeholders.
type Moves = Vec<[f64; 3]>;

struct Forecast {
    ambient: Vec<Ambient>,
    reference: Vec<f64>,
}

struct Scored {
    moves: Moves,
    cost: f64,
}

fn forecast(problem: &HorizonProblem<'_>, cfg: &MpcConfig) -> Result<Forecast, ControlError> {
    let dt = problem.plant.dt;
    let times: Vec<f64> = (0..=cfg.horizon).map(|i| problem.t_k + i as f64 * dt).collect();
    let reference = match (cfg.cost, problem.reference) {
        (_, Some(r)) => times.iter().map(|&t| r.at(t)).collect(),
        (StageCostKind::Tracking, None) => return Err(ControlError::MissingReference),
        (StageCostKind::Economic, None) => vec![0.0; times.len()],
    };
    Ok(Forecast {
        ambient: times[..cfg.horizon].iter().map(|&t| problem.profile.at(t)).collect(),
        reference,
    })
}

fn to_action(u: &[f64; 3], ambient: &Ambient, cfg: &MpcConfig) -> ControlAction {
    let controlled = cfg.controlled();
    ControlAction::new(
        u[0],
        if controlled[1] { u[1] } else { ambient.temp_c },
        if controlled[2] { u[2] } else { ambient.do_mgl },
    )
}

/// Rolls `moves` out over the horizon. Returns the penalized objective and,
/// when `keep` is set, the applied inputs and predicted states.
fn rollout(
    moves: &[[f64; 3]],
    problem: &HorizonProblem<'_>,
    fc: &Forecast,
    cfg: &MpcConfig,
    keep: bool,
) -> (f64, Vec<ControlAction>, Vec<SimState>) {
    let plant = problem.plant;
    let dt = plant.dt;
    let mut state = problem.state;
    let mut cost = 0.0;
    let mut inputs = Vec::new();
    let mut predicted = vec![state];
    let first = to_action(&moves[0], &fc.ambient[0], cfg);
    let mut prev = problem.prev_action.unwrap_or(first);
    for i in 0..cfg.horizon {
        let ambient = &fc.ambient[i];
        let action = to_action(&moves[i.min(moves.len() - 1)], ambient, cfg);
        let env = action.env(ambient);
        let growth_rate = match cfg.cost {
            StageCostKind::Economic => plant.biomass_rate(&state, &env).unwrap_or(f64::NAN),
            StageCostKind::Tracking => 0.0,
        };
        let stage = Stage {
            w: state.biomass(),
            w_ref: fc.reference[i],
            growth_rate,
            action,
            prev_action: prev,
        };
        cost += stage_cost(&stage, &plant.params, cfg) * dt;
        prev = action;
        if keep {
            inputs.push(action);
        }
        match plant.step(state, &action, ambient, crosses_day(problem.step_index + i, dt)) {
            Ok(next) => {
                if !cfg.within_state_bounds(next.biomass()) {
                    cost += BOUND_PENALTY;
                }
                state = next;
                if keep {
                    predicted.push(state);
                }
            }
            Err(_) => {
                cost += BOUND_PENALTY * (cfg.horizon - i) as f64;
                if keep {
                    // pad the remaining inputs so the solution has N entries
                    for j in i + 1..cfg.horizon {
                        let a = &fc.ambient[j];
                        inputs.push(to_action(&moves[j.min(moves.len() - 1)], a, cfg));
                    }
                }
                break;
            }
        }
    }
    if !cost.is_finite() {
        cost = f64::INFINITY;
    }
    (cost, inputs, predicted)
}

fn midpoint(cfg: &MpcConfig) -> [f64; 3] {
    let mut m = [0.0; 3];
    for (c, slot) in m.iter_mut().enumerate() {
        *slot = 0.5 * (cfg.u_min[c] + cfg.u_max[c]);
    }
    m
}

fn shift(previous: &[ControlAction], m: usize, cfg: &MpcConfig) -> Moves {
    let mut moves: Moves = previous
        .iter()
        .skip(1)
        .take(m)
        .map(|a| cfg.clamp_action(a.as_array()))
        .collect();
    while moves.len() < m {
        let last = moves
            .last()
            .copied()
            .unwrap_or_else(|| cfg.clamp_action(previous[0].as_array()));
        moves.push(last);
    }
    moves
}

fn sort_scored(pool: &mut [Scored]) {
    pool.sort_by(|a, b| a.cost.total_cmp(&b.cost));
}

fn elite_count(cfg: &MpcConfig, pool: usize) -> usize {
    ((cfg.elite_frac * pool as f64).ceil() as usize).clamp(1, pool)
}

fn search_continuous(
    problem: &HorizonProblem<'_>,
    fc: &Forecast,
    cfg: &MpcConfig,
    rng: &mut ChaCha8Rng,
    warm: Option<&Moves>,
) -> Scored {
    let m = cfg.control_horizon;
    let controlled = cfg.controlled();
    let mut mean: Vec<[f64; 3]> = match warm {
        Some(w) => w.clone(),
        None => vec![midpoint(cfg); m],
    };
    let mut std: Vec<[f64; 3]> = vec![std::array::from_fn(|c| 0.5 * (cfg.u_max[c] - cfg.u_min[c])); m];
    let mut best: Option<Scored> = None;
    for iter in 0..cfg.iterations {
        let mut pool: Vec<Scored> = Vec::with_capacity(cfg.samples + 2);
        if iter == 0 {
            if let Some(w) = warm {
                pool.push(Scored {
                    moves: w.clone(),
                    cost: 0.0,
                });
            }
        }
        while pool.len() < cfg.samples.max(1) + usize::from(iter == 0 && warm.is_some()) {
            let moves: Moves = (0..m)
                .map(|i| {
                    let mut u = [0.0; 3];
                    for c in 0..3 {
                        let z: f64 = StandardNormal.sample(rng);
                        u[c] = if controlled[c] {
                            (mean[i][c] + std[i][c] * z).clamp(cfg.u_min[c], cfg.u_max[c])
                        } else {
                            f64::NAN
                        };
                    }
                    u
                })
                .collect();
            pool.push(Scored { moves, cost: 0.0 });
        }
        for cand in &mut pool {
            cand.cost = rollout(&cand.moves, problem, fc, cfg, false).0;
        }
        sort_scored(&mut pool);
        let n_elite = elite_count(cfg, pool.len());
        for i in 0..m {
            for c in 0..3 {
                if !controlled[c] {
                    continue;
                }
                let vals = pool[..n_elite].iter().map(|s| s.moves[i][c]);
                let mu = vals.clone().sum::<f64>() / n_elite as f64;
                let var = vals.map(|v| (v - mu).powi(2)).sum::<f64>() / n_elite as f64;
                mean[i][c] = mu;
                std[i][c] = var.sqrt().max(MIN_STD);
            }
        }
        let top = pool.swap_remove(0);
        if best.as_ref().is_none_or(|b| top.cost < b.cost) {
            best = Some(top);
        }
    }
    best.expect("at least one iteration")
}

fn search_lattice(
    problem: &HorizonProblem<'_>,
    fc: &Forecast,
    cfg: &MpcConfig,
    lattice: &Lattice,
    rng: &mut ChaCha8Rng,
    warm: Option<&Moves>,
) -> Scored {
    let points = lattice.points();
    let m = cfg.control_horizon;
    let total = (points.len() as f64).powi(m as i32);
    let evaluate = |idx: &[usize]| -> Scored {
        let moves: Moves = idx.iter().map(|&i| points[i]).collect();
        let cost = rollout(&moves, problem, fc, cfg, false).0;
        Scored { moves, cost }
    };
    if total <= cfg.samples as f64 {
        // exhaustive: lexicographic order, first move most significant
        let mut idx = vec![0usize; m];
        let mut best: Option<Scored> = None;
        loop {
            let cand = evaluate(&idx);
            if best.as_ref().is_none_or(|b| cand.cost < b.cost) {
                best = Some(cand);
            }
            let mut pos = m;
            loop {
                if pos == 0 {
                    return best.expect("non-empty lattice");
                }
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] < points.len() {
                    break;
                }
                idx[pos] = 0;
            }
        }
    }
    let nearest = |u: &[f64; 3]| -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d: f64 = (0..3)
                .filter(|&c| p[c].is_finite())
                .map(|c| (p[c] - u[c]).powi(2))
                .sum();
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    };
    let mut probs = vec![vec![1.0 / points.len() as f64; points.len()]; m];
    let mut best: Option<Scored> = None;
    for iter in 0..cfg.iterations {
        let mut idx_pool: Vec<Vec<usize>> = Vec::with_capacity(cfg.samples + 1);
        if iter == 0 {
            if let Some(w) = warm {
                idx_pool.push(w.iter().map(nearest).collect());
            }
        }
        for _ in 0..cfg.samples {
            idx_pool.push(
                probs
                    .iter()
                    .map(|p| {
                        let u: f64 = rng.random();
                        let mut acc = 0.0;
                        for (i, &pi) in p.iter().enumerate() {
                            acc += pi;
                            if u < acc {
                                return i;
                            }
                        }
                        p.len() - 1
                    })
                    .collect(),
            );
        }
        let mut scored: Vec<(Vec<usize>, Scored)> = idx_pool
            .into_iter()
            .map(|i| {
                let s = evaluate(&i);
                (i, s)
            })
            .collect();
        scored.sort_by(|a, b| a.1.cost.total_cmp(&b.1.cost));
        let n_elite = elite_count(cfg, scored.len());
        for (i, p) in probs.iter_mut().enumerate() {
            let mut freq = vec![0.0; points.len()];
            for (idx, _) in &scored[..n_elite] {
                freq[idx[i]] += 1.0 / n_elite as f64;
            }
            for (pi, fi) in p.iter_mut().zip(freq) {
                *pi = LATTICE_SMOOTHING * fi + (1.0 - LATTICE_SMOOTHING) * *pi;
            }
        }
        let top = scored.swap_remove(0).1;
        if best.as_ref().is_none_or(|b| top.cost < b.cost) {
            best = Some(top);
        }
    }
    best.expect("at least one iteration")
}

/// Solves one horizon problem. `warm_start` is the previous solution's input
/// sequence; its shifted tail is injected as a candidate. `extra` candidates
/// (full move lists) are evaluated as well.
pub fn solve_horizon(
    problem: &HorizonProblem<'_>,
    cfg: &MpcConfig,
    rng: &mut ChaCha8Rng,
    warm_start: Option<&[ControlAction]>,
) -> Result<MpcSolution, ControlError> {
    let sol = solve_unchecked(problem, cfg, rng, warm_start)?;
    if sol.feasible {
        Ok(sol)
    } else {
        Err(ControlError::Infeasible)
    }
}

/// As [`solve_horizon`] but returns the best candidate even when infeasible.
pub fn solve_unchecked(
    problem: &HorizonProblem<'_>,
    cfg: &MpcConfig,
    rng: &mut ChaCha8Rng,
    warm_start: Option<&[ControlAction]>,
) -> Result<MpcSolution, ControlError> {
    let fc = forecast(problem, cfg)?;
    let warm = warm_start.map(|w| shift(w, cfg.control_horizon, cfg));
    let best = match &cfg.lattice {
        Some(lattice) => search_lattice(problem, &fc, cfg, lattice, rng, warm.as_ref()),
        None => search_continuous(problem, &fc, cfg, rng, warm.as_ref()),
    };
    let (cost, inputs, predicted) = rollout(&best.moves, problem, &fc, cfg, true);
    let feasible =
        predicted.len() == cfg.horizon + 1 && predicted[1..].iter().all(|s| cfg.within_state_bounds(s.biomass()));
    Ok(MpcSolution {
        inputs,
        predicted,
        cost,
        feasible,
    })
}

/// Exact objective of a given full input sequence (length N), for audits
/// and baselines.
pub fn sequence_cost(
    problem: &HorizonProblem<'_>,
    cfg: &MpcConfig,
    inputs: &[ControlAction],
) -> Result<f64, ControlError> {
    let fc = forecast(problem, cfg)?;
    let full = MpcConfig {
        control_horizon: cfg.horizon,
        ..cfg.clone()
    };
    let moves: Moves = inputs.iter().map(|a| a.as_array()).collect();
    Ok(rollout(&moves, problem, &fc, &full, false).0)
}

/// Receding-horizon solver state: config, optimizer stream and warm start.
#[derive(Debug, Clone)]
pub struct MpcSolver {
    pub cfg: MpcConfig,
    rng: ChaCha8Rng,
    warm: Option<Vec<ControlAction>>,
}

impl MpcSolver {
    pub fn new(cfg: MpcConfig, seed: u64) -> Self {
        let seed = cfg.seed.unwrap_or(seed);
        Self {
            cfg,
            rng: stream_rng(seed, Stream::Mpc),
            warm: None,
        }
    }

    pub fn reset(&mut self, seed: u64) {
        self.rng = stream_rng(self.cfg.seed.unwrap_or(seed), Stream::Mpc);
        self.warm = None;
    }

    /// Solves from the measured state (w̃(t_k) = w(t_k)) and keeps the
    /// solution for the next warm start.
    pub fn solve(&mut self, problem: &HorizonProblem<'_>) -> Result<MpcSolution, ControlError> {
        let sol = solve_unchecked(problem, &self.cfg, &mut self.rng, self.warm.as_deref())?;
        self.warm = Some(sol.inputs.clone());
        Ok(sol)
    }

    pub fn problem<'a>(&self, obs: &Observation<'a>) -> HorizonProblem<'a> {
        HorizonProblem {
            state: obs.state,
            t_k: obs.t,
            step_index: obs.step,
            reference: obs.ctx.reference,
            profile: obs.ctx.profile,
            plant: obs.ctx.plant,
            prev_action: obs.last_action,
        }
    }
}

/// Applies the first move of each horizon solution. On infeasibility the
/// previous action is repeated and the record flagged.
#[derive(Debug, Clone)]
pub struct MpcController {
    solver: MpcSolver,
}

impl MpcController {
    pub fn new(cfg: MpcConfig) -> Self {
        Self {
            solver: MpcSolver::new(cfg, 0),
        }
    }
}

impl Controller for MpcController {
    fn name(&self) -> &str {
        "mpc"
    }

    fn reset(&mut self, ctx: &LoopContext<'_>) {
        self.solver.reset(ctx.seed);
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<Decision, ControlError> {
        let problem = self.solver.problem(obs);
        let sol = self.solver.solve(&problem)?;
        if sol.feasible {
            Ok(Decision {
                action: sol.first(),
                reward: None,
                mpc_cost: Some(sol.cost),
                chosen_by: Some(ChosenBy::Mpc),
            })
        } else {
            log::warn!("mpc infeasible at t = {}", obs.t);
            Ok(Decision {
                action: obs.last_action.unwrap_or_else(|| sol.first()),
                reward: None,
                mpc_cost: None,
                chosen_by: Some(ChosenBy::Fallback),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::growth::GrowthParams;
    use crate::profile::Ambient;
    use crate::sim::{reference_trajectory, simulate, ConstantFeed, FixedAction, SimConfig};

    fn ambient() -> Ambient {
        Ambient {
            temp_c: 33.0,
            do_mgl: 5.0,
            uia_mgl: 0.0,
            rho: 1.0,
        }
    }

    fn sim_config(w0: f64, days: f64) -> SimConfig {
        SimConfig {
            t0: 0.0,
            tf: days,
            seed: 11,
            initial: SimState::Individual { w: w0 },
            profile: EnvProfile::constant(ambient()),
            plant: Plant::new(GrowthParams::default(), 1.0),
        }
    }

    fn lattice_cfg(n: usize) -> MpcConfig {
        MpcConfig {
            horizon: n,
            control_horizon: n,
            samples: 64,
            u_min: [0.0, 33.0, 5.0],
            u_max: [1.0, 33.0, 5.0],
            temperature: ChannelMode::Controlled,
            oxygen: ChannelMode::Controlled,
            lattice: Some(Lattice {
                f: vec![0.0, 0.5, 1.0],
                temp_c: vec![33.0],
                do_mgl: vec![5.0],
            }),
            ..Default::default()
        }
    }

    #[test]
    fn tracking_stage_costs() {
        let p = GrowthParams::default();
        let cfg = MpcConfig::default();
        let a = ControlAction::new(0.0, 30.0, 5.0);
        let stage = Stage {
            w: 50.0,
            w_ref: 50.0,
            growth_rate: 0.0,
            action: a,
            prev_action: a,
        };
        assert_eq!(
            stage_cost(
                &stage,
                &p,
                &MpcConfig {
                    r_f: 0.0,
                    ..cfg.clone()
                }
            ),
            0.0
        );
        let b = ControlAction::new(0.5, 30.0, 5.0);
        let stage = Stage {
            w: 53.0,
            action: b,
            prev_action: b,
            ..stage
        };
        let cost = stage_cost(
            &stage,
            &p,
            &MpcConfig {
                q_w: 1.0,
                r_f: 2.0,
                ..cfg
            },
        );
        assert!((cost - 9.5).abs() < 1e-12);
    }

    #[test]
    fn economic_cost_penalizes_starvation() {
        let p = GrowthParams::default();
        let cfg = MpcConfig {
            cost: StageCostKind::Economic,
            ..Default::default()
        };
        let a = ControlAction::new(0.0, 33.0, 5.0);
        let env = a.env(&ambient());
        let rate = crate::growth::individual_rhs(40.0, &env, &p).unwrap();
        let stage = Stage {
            w: 40.0,
            w_ref: 0.0,
            growth_rate: rate,
            action: a,
            prev_action: a,
        };
        let cost = stage_cost(&stage, &p, &cfg);
        assert!(cost > 0.0);
        assert!((cost - cfg.price * crate::growth::catabolism_k(33.0, &p) * 40f64.powf(p.n)).abs() < 1e-12);
    }

    #[test]
    fn rate_penalty_counts_controlled_channels_only() {
        let p = GrowthParams::default();
        let cfg = MpcConfig {
            r_f: 0.0,
            rate_weight: 2.0,
            oxygen: ChannelMode::Ambient,
            ..Default::default()
        };
        let stage = Stage {
            w: 10.0,
            w_ref: 10.0,
            growth_rate: 0.0,
            action: ControlAction::new(0.5, 30.0, 1.0),
            prev_action: ControlAction::new(0.2, 31.0, 9.0),
        };
        assert!((stage_cost(&stage, &p, &cfg) - 2.0 * (0.09 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn validation_keys() {
        let bad = MpcConfig {
            control_horizon: 12,
            ..Default::default()
        };
        assert_eq!(bad.validate().unwrap_err().key, "M");
        let bad = MpcConfig {
            w_0: 10.0,
            w_end: 5.0,
            ..Default::default()
        };
        assert_eq!(bad.validate().unwrap_err().key, "w_end");
        let bad = MpcConfig {
            lattice: Some(Lattice::feed(&[0.0, 1.0])),
            ..Default::default()
        };
        assert_eq!(bad.validate().unwrap_err().key, "lattice");
        MpcConfig::default().validate().unwrap();
        lattice_cfg(2).validate().unwrap();
    }

    #[test]
    fn single_step_lattice_matches_enumeration() {
        let sim = sim_config(60.0, 5.0);
        let reference = crate::sim::Reference {
            t0: 0.0,
            dt: 1.0,
            values: vec![60.0, 61.0, 62.0],
        };
        let cfg = lattice_cfg(1);
        let problem = HorizonProblem {
            state: sim.initial,
            t_k: 0.0,
            step_index: 0,
            reference: Some(&reference),
            profile: &sim.profile,
            plant: &sim.plant,
            prev_action: None,
        };
        let mut rng = stream_rng(1, Stream::Mpc);
        let sol = solve_horizon(&problem, &cfg, &mut rng, None).unwrap();
        let mut best = (f64::INFINITY, 0.0);
        for f in [0.0, 0.5, 1.0] {
            let a = ControlAction::new(f, 33.0, 5.0);
            let c = sequence_cost(&problem, &cfg, &[a]).unwrap();
            if c < best.0 {
                best = (c, f);
            }
        }
        assert_eq!(sol.first().f, best.1);
        assert_eq!(sol.cost, best.0);
    }

    #[test]
    fn degenerate_box_returns_unique_sequence() {
        let sim = sim_config(60.0, 5.0);
        let reference = reference_trajectory(&sim, 0.3).unwrap();
        let reference = crate::sim::Reference::from_trajectory(&reference, 1.0);
        let cfg = MpcConfig {
            horizon: 4,
            control_horizon: 2,
            u_min: [0.4, 30.0, 5.0],
            u_max: [0.4, 30.0, 5.0],
            temperature: ChannelMode::Controlled,
            ..Default::default()
        };
        let problem = HorizonProblem {
            state: sim.initial,
            t_k: 0.0,
            step_index: 0,
            reference: Some(&reference),
            profile: &sim.profile,
            plant: &sim.plant,
            prev_action: None,
        };
        let sol = solve_horizon(&problem, &cfg, &mut stream_rng(3, Stream::Mpc), None).unwrap();
        let only = ControlAction::new(0.4, 30.0, 5.0);
        assert!(sol.inputs.iter().all(|a| *a == only));
        assert_eq!(sol.cost, sequence_cost(&problem, &cfg, &[only; 4]).unwrap());
        assert_eq!(sol.predicted.len(), 5);
    }

    #[test]
    fn infeasible_when_bounds_unreachable() {
        let sim = sim_config(60.0, 5.0);
        let reference = crate::sim::Reference {
            t0: 0.0,
            dt: 1.0,
            values: vec![60.0],
        };
        let cfg = MpcConfig {
            w_0: 100.0,
            w_end: 200.0,
            samples: 8,
            iterations: 2,
            ..Default::default()
        };
        let problem = HorizonProblem {
            state: sim.initial,
            t_k: 0.0,
            step_index: 0,
            reference: Some(&reference),
            profile: &sim.profile,
            plant: &sim.plant,
            prev_action: None,
        };
        let err = solve_horizon(&problem, &cfg, &mut stream_rng(3, Stream::Mpc), None).unwrap_err();
        assert_eq!(err, ControlError::Infeasible);
    }

    #[test]
    fn controller_falls_back_when_infeasible() {
        let sim = sim_config(60.0, 3.0);
        let reference = crate::sim::Reference::from_trajectory(&reference_trajectory(&sim, 0.5).unwrap(), 1.0);
        let cfg = MpcConfig {
            w_0: 100.0,
            w_end: 200.0,
            samples: 8,
            iterations: 1,
            ..Default::default()
        };
        let traj = simulate(&sim, Some(&reference), &mut MpcController::new(cfg)).unwrap();
        assert!(traj.records()[..3]
            .iter()
            .all(|r| r.chosen_by == Some(ChosenBy::Fallback)));
        assert_eq!(traj.records()[1].action, traj.records()[0].action);
    }

    #[test]
    fn closed_loop_respects_input_bounds_and_tracks() {
        let sim = sim_config(50.0, 20.0);
        let reference = crate::sim::Reference::from_trajectory(&reference_trajectory(&sim, 0.6).unwrap(), 1.0);
        let cfg = MpcConfig {
            samples: 32,
            iterations: 3,
            ..Default::default()
        };
        let traj = simulate(&sim, Some(&reference), &mut MpcController::new(cfg.clone())).unwrap();
        for r in traj.records() {
            if let Some(a) = r.action {
                assert!(cfg.within_bounds(&a));
                assert_eq!(r.chosen_by, Some(ChosenBy::Mpc));
            }
        }
        let baseline = simulate(&sim, Some(&reference), &mut ConstantFeed { f: 0.2 }).unwrap();
        let err = |t: &crate::sim::Trajectory| -> f64 {
            t.records()
                .iter()
                .map(|r| (r.state.biomass() - reference.at(r.t)).powi(2))
                .sum()
        };
        assert!(err(&traj) < err(&baseline));
    }

    #[test]
    fn deterministic_given_seed() {
        let sim = sim_config(50.0, 6.0);
        let reference = crate::sim::Reference::from_trajectory(&reference_trajectory(&sim, 0.6).unwrap(), 1.0);
        let cfg = MpcConfig {
            samples: 16,
            iterations: 2,
            ..Default::default()
        };
        let a = simulate(&sim, Some(&reference), &mut MpcController::new(cfg.clone())).unwrap();
        let b = simulate(&sim, Some(&reference), &mut MpcController::new(cfg)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn economic_mode_runs_without_reference() {
        let sim = sim_config(50.0, 3.0);
        let cfg = MpcConfig {
            cost: StageCostKind::Economic,
            samples: 16,
            iterations: 2,
            ..Default::default()
        };
        let traj = simulate(&sim, None, &mut MpcController::new(cfg)).unwrap();
        assert_eq!(traj.len(), 4);
        let tracking = MpcConfig::default();
        let err = simulate(&sim, None, &mut MpcController::new(tracking)).unwrap_err();
        assert!(matches!(
            err,
            crate::sim::SimError::Control {
                step: 0,
                source: ControlError::MissingReference
            }
        ));
        let _ = FixedAction(ControlAction::new(0.0, 0.0, 0.0));
    }
}
