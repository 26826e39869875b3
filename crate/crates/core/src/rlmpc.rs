//! Q-learning driven by the receding-horizon objective.
//!
//! The reward for a step is the drop in optimal MPC cost it produced,
//! `r = J_k − J_{k+1}`, and the discount is `γ = 1 − M/N`. Actions are an
//! ε-mixture of the MPC first move and the Q-greedy lattice action; both
//! are checked against the input and one-step state bounds before use.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mpc::{MpcConfig, MpcSolution, MpcSolver};
use crate::qlearning::{q_update, QTable, WeightGrid};
use crate::rng::{stream_rng, Stream};
use crate::sim::{
    crosses_day, ChosenBy, Closing, ControlAction, ControlError, Controller, Decision, InvalidKey, LoopContext,
    Observation, Trajectory,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HybridError {
    #[error("control horizon M = {m} must satisfy 1 <= M <= N = {n}")]
    Horizons { m: usize, n: usize },
    #[error("reward undefined: an MPC solve was infeasible")]
    UndefinedReward,
}

/// `γ = 1 − M/N`.
pub fn hybrid_discount(m: usize, n: usize) -> Result<f64, HybridError> {
    if m == 0 || m > n {
        return Err(HybridError::Horizons { m, n });
    }
    Ok(1.0 - m as f64 / n as f64)
}

/// `r = J_k − J_{k+1}`; `None` marks an infeasible solve.
pub fn hybrid_reward(j_k: Option<f64>, j_next: Option<f64>) -> Result<f64, HybridError> {
    match (j_k, j_next) {
        (Some(a), Some(b)) => Ok(a - b),
        _ => Err(HybridError::UndefinedReward),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlMpcConfig {
    pub mpc: MpcConfig,
    /// Learning rate α. The discount is always `1 − M/N`.
    pub alpha: f64,
    /// Overrides the scenario seed for the action-mixing stream.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub grid: WeightGrid,
    /// Candidate feed levels indexed by the Q-table.
    pub feed_levels: Vec<f64>,
    /// Probability of applying the MPC move in the first episode.
    pub guide_start: f64,
    pub guide_min: f64,
    /// Episodes over which the guide probability decays by e.
    pub guide_decay_episodes: f64,
}

impl Default for RlMpcConfig {
    fn default() -> Self {
        Self {
            mpc: MpcConfig {
                control_horizon: 2,
                ..MpcConfig::default()
            },
            alpha: 0.5,
            seed: None,
            grid: WeightGrid {
                lower: 10.0,
                upper: 1000.0,
                bins: 64,
            },
            feed_levels: (0..=10).map(|i| i as f64 / 10.0).collect(),
            guide_start: 1.0,
            guide_min: 0.5,
            guide_decay_episodes: 20.0,
        }
    }
}

impl RlMpcConfig {
    pub fn validate(&self) -> Result<(), InvalidKey> {
        self.mpc.validate()?;
        hybrid_discount(self.mpc.control_horizon, self.mpc.horizon).map_err(|e| InvalidKey::new("M", e.to_string()))?;
        if !(self.alpha >= 0.0 && self.alpha <= 1.0) {
            return Err(InvalidKey::new("alpha", "must lie in [0, 1]"));
        }
        let g = &self.grid;
        if !(g.lower > 0.0 && g.upper > g.lower && g.bins > 0) {
            return Err(InvalidKey::new("grid", "needs 0 < lower < upper and bins >= 1"));
        }
        if self.feed_levels.is_empty()
            || self
                .feed_levels
                .iter()
                .any(|&f| f < self.mpc.u_min[0] || f > self.mpc.u_max[0])
        {
            return Err(InvalidKey::new("feed_levels", "levels must lie within the feed bounds"));
        }
        for (key, v) in [("guide_start", self.guide_start), ("guide_min", self.guide_min)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(InvalidKey::new(key, "must lie in [0, 1]"));
            }
        }
        if !(self.guide_decay_episodes > 0.0) {
            return Err(InvalidKey::new("guide_decay_episodes", "must be positive"));
        }
        Ok(())
    }

    pub fn gamma(&self) -> f64 {
        hybrid_discount(self.mpc.control_horizon, self.mpc.horizon).unwrap_or(0.0)
    }

    /// Probability of applying the MPC move during episode `i`.
    pub fn guide_probability(&self, i: usize) -> f64 {
        (self.guide_start * (-(i as f64) / self.guide_decay_episodes).exp()).clamp(self.guide_min.min(1.0), 1.0)
    }

    fn nearest_level(&self, f: f64) -> usize {
        let mut best = 0;
        for (i, &l) in self.feed_levels.iter().enumerate() {
            if (l - f).abs() < (self.feed_levels[best] - f).abs() {
                best = i;
            }
        }
        best
    }
}

/// The hybrid controller. Its Q-table persists across runs; `reset` starts
/// a new episode.
#[derive(Debug, Clone)]
pub struct RlMpc {
    pub cfg: RlMpcConfig,
    pub table: QTable,
    solver: MpcSolver,
    rng: ChaCha8Rng,
    episode: usize,
    /// (state bin, action index, J at that state) of the last applied action.
    last: Option<(usize, usize, Option<f64>)>,
    seeded: bool,
}

impl RlMpc {
    pub fn new(cfg: RlMpcConfig) -> Self {
        let table = QTable::zeros(cfg.grid.bins, cfg.feed_levels.len());
        Self::with_table(cfg, table)
    }

    pub fn with_table(cfg: RlMpcConfig, table: QTable) -> Self {
        Self {
            solver: MpcSolver::new(cfg.mpc.clone(), 0),
            rng: stream_rng(0, Stream::Rl),
            cfg,
            table,
            episode: 0,
            last: None,
            seeded: false,
        }
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    fn solve_at(&mut self, obs: &Observation<'_>) -> Result<MpcSolution, ControlError> {
        let problem = self.solver.problem(obs);
        self.solver.solve(&problem)
    }

    /// Q update for the transition into the state of `obs`, given J there.
    fn learn(&mut self, s_next: usize, j_next: Option<f64>, terminal: bool) -> Option<f64> {
        let (s, a, j_k) = self.last.take()?;
        let r = hybrid_reward(j_k, j_next).ok()?;
        q_update(
            &mut self.table,
            s,
            a,
            r,
            s_next,
            terminal,
            self.cfg.alpha,
            self.cfg.gamma(),
        );
        Some(r)
    }

    fn lattice_action(&self, a: usize, mpc_first: &ControlAction) -> ControlAction {
        ControlAction::new(self.cfg.feed_levels[a], mpc_first.temp_c, mpc_first.do_mgl)
    }

    /// Input bounds plus a one-step rollout inside the state bounds.
    fn admissible(&self, action: &ControlAction, obs: &Observation<'_>) -> bool {
        self.cfg.mpc.within_bounds(action)
            && obs
                .ctx
                .plant
                .step(obs.state, action, &obs.ambient, crosses_day(obs.step, obs.ctx.plant.dt))
                .is_ok_and(|next| self.cfg.mpc.within_state_bounds(next.biomass()))
    }
}

impl Controller for RlMpc {
    fn name(&self) -> &str {
        "rlmpc"
    }

    fn reset(&mut self, ctx: &LoopContext<'_>) {
        if self.seeded {
            self.episode += 1;
        } else {
            self.rng = stream_rng(self.cfg.seed.unwrap_or(ctx.seed), Stream::Rl);
            self.seeded = true;
        }
        self.solver.reset(ctx.seed);
        self.last = None;
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<Decision, ControlError> {
        // the solve at s_{k+1} doubles as step k+1's J_k
        let sol = self.solve_at(obs)?;
        let s = self.cfg.grid.bin(obs.state.biomass());
        let j_k = sol.feasible.then_some(sol.cost);
        let reward = self.learn(s, j_k, false);

        let mpc_first = sol.first();
        let mpc_idx = self.cfg.nearest_level(mpc_first.f);
        let q_idx = self.table.greedy(s);
        let guided = self.rng.random::<f64>() < self.cfg.guide_probability(self.episode);
        let (action, idx, chosen_by) =
            if sol.feasible && (guided || self.table.get(s, mpc_idx) >= self.table.get(s, q_idx)) {
                (mpc_first, mpc_idx, ChosenBy::Mpc)
            } else {
                // best admissible lattice action by Q value, ties to the lowest index
                let mut order: Vec<usize> = (0..self.cfg.feed_levels.len()).collect();
                order.sort_by(|&a, &b| self.table.get(s, b).total_cmp(&self.table.get(s, a)).then(a.cmp(&b)));
                match order
                    .into_iter()
                    .map(|a| (self.lattice_action(a, &mpc_first), a))
                    .find(|(act, _)| self.admissible(act, obs))
                {
                    Some((act, a)) => (act, a, ChosenBy::Q),
                    None => {
                        let act = obs.last_action.unwrap_or(mpc_first);
                        (act, self.cfg.nearest_level(act.f), ChosenBy::Fallback)
                    }
                }
            };
        self.last = Some((s, idx, j_k));
        Ok(Decision {
            action,
            reward,
            mpc_cost: j_k,
            chosen_by: Some(chosen_by),
        })
    }

    fn finish(&mut self, obs: &Observation<'_>) -> Result<Closing, ControlError> {
        let sol = self.solve_at(obs)?;
        let j_t = sol.feasible.then_some(sol.cost);
        let s = self.cfg.grid.bin(obs.state.biomass());
        let reward = self.learn(s, j_t, true);
        Ok(Closing { reward, mpc_cost: j_t })
    }
}

/// A constraint violation found by [`audit`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub step: usize,
    pub what: &'static str,
}

/// Post-hoc check of every applied action: input bounds on the controlled
/// channels and the resulting state inside `[w_0, w_end]`.
pub fn audit(traj: &Trajectory, cfg: &MpcConfig) -> Vec<Violation> {
    let recs = traj.records();
    let mut out = Vec::new();
    for (k, pair) in recs.windows(2).enumerate() {
        if let Some(action) = pair[0].action {
            if !cfg.within_bounds(&action) {
                out.push(Violation {
                    step: k,
                    what: "input bounds",
                });
            }
            if !cfg.within_state_bounds(pair[1].state.biomass()) {
                out.push(Violation {
                    step: k,
                    what: "state bounds",
                });
            }
        }
    }
    out
}

/// Runs `episodes` closed-loop episodes with a shared, learning controller
/// and returns each episode's undiscounted return.
pub fn train_episodes(
    ctl: &mut RlMpc,
    sim: &crate::sim::SimConfig,
    reference: Option<&crate::sim::Reference>,
    episodes: usize,
) -> Result<Vec<f64>, crate::sim::SimError> {
    (0..episodes)
        .map(|_| crate::sim::simulate(sim, reference, ctl).map(|t| t.episode_return()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::growth::{GrowthParams, SimState};
    use crate::mpc::{ChannelMode, MpcController};
    use crate::profile::{Ambient, EnvProfile};
    use crate::sim::{reference_trajectory, simulate, Plant, Reference, SimConfig};

    fn scenario(days: f64) -> (SimConfig, Reference) {
        let sim = SimConfig {
            t0: 0.0,
            tf: days,
            seed: 21,
            initial: SimState::Individual { w: 50.0 },
            profile: EnvProfile::constant(Ambient {
                temp_c: 29.0,
                do_mgl: 5.0,
                uia_mgl: 0.02,
                rho: 1.0,
            }),
            plant: Plant::new(GrowthParams::default(), 1.0),
        };
        let r = Reference::from_trajectory(&reference_trajectory(&sim, 0.6).unwrap(), 1.0);
        (sim, r)
    }

    fn small_cfg() -> RlMpcConfig {
        RlMpcConfig {
            mpc: MpcConfig {
                horizon: 6,
                control_horizon: 2,
                samples: 16,
                iterations: 2,
                temperature: ChannelMode::Controlled,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn discount_examples() {
        assert_eq!(hybrid_discount(10, 10).unwrap(), 0.0);
        assert_eq!(hybrid_discount(1, 10).unwrap(), 0.9);
        assert_eq!(hybrid_discount(1, 1).unwrap(), 0.0);
        assert!(hybrid_discount(3, 2).is_err());
        assert!(hybrid_discount(0, 2).is_err());
    }

    #[test]
    fn reward_examples() {
        assert_eq!(hybrid_reward(Some(4.0), Some(4.0)).unwrap(), 0.0);
        assert_eq!(hybrid_reward(Some(10.0), Some(7.0)).unwrap(), 3.0);
        assert_eq!(hybrid_reward(None, Some(1.0)), Err(HybridError::UndefinedReward));
    }

    #[test]
    fn telescoping_and_audit() {
        let (sim, r) = scenario(12.0);
        let cfg = small_cfg();
        let traj = simulate(&sim, Some(&r), &mut RlMpc::new(cfg.clone())).unwrap();
        let recs = traj.records();
        let j0 = recs[0].mpc_cost.unwrap();
        let jt = recs.last().unwrap().mpc_cost.unwrap();
        assert!((traj.episode_return() - (j0 - jt)).abs() < 1e-9);
        assert!(audit(&traj, &cfg.mpc).is_empty());
    }

    #[test]
    fn zero_table_without_exploration_matches_mpc() {
        let (sim, r) = scenario(10.0);
        let cfg = RlMpcConfig {
            guide_start: 1.0,
            guide_min: 1.0,
            ..small_cfg()
        };
        let frozen = RlMpcConfig {
            alpha: 0.0,
            guide_start: 0.0,
            guide_min: 0.0,
            ..cfg.clone()
        };
        let mpc = simulate(&sim, Some(&r), &mut MpcController::new(cfg.mpc.clone())).unwrap();
        for c in [cfg, frozen] {
            let hybrid = simulate(&sim, Some(&r), &mut RlMpc::new(c)).unwrap();
            assert_eq!(hybrid.biomass(), mpc.biomass());
            for (a, b) in hybrid.records().iter().zip(mpc.records()) {
                assert_eq!(a.action, b.action);
            }
        }
    }

    #[test]
    fn myopic_update_is_running_average() {
        let (sim, r) = scenario(4.0);
        let cfg = RlMpcConfig {
            mpc: MpcConfig {
                horizon: 3,
                control_horizon: 3,
                samples: 8,
                iterations: 1,
                ..Default::default()
            },
            alpha: 0.5,
            ..Default::default()
        };
        assert_eq!(cfg.gamma(), 0.0);
        let mut ctl = RlMpc::new(cfg.clone());
        let traj = simulate(&sim, Some(&r), &mut ctl).unwrap();
        let recs = traj.records();
        // replay the logged rewards through Q ← Q + α(r − Q)
        let mut expected = QTable::zeros(cfg.grid.bins, cfg.feed_levels.len());
        for k in 0..recs.len() - 1 {
            let s = cfg.grid.bin(recs[k].state.biomass());
            let a = cfg.nearest_level(recs[k].action.unwrap().f);
            let rwd = recs[k + 1].reward.unwrap();
            let q = expected.get(s, a);
            expected.set(s, a, q + 0.5 * (rwd - q));
        }
        assert_eq!(expected.sup_distance(&ctl.table), 0.0);
    }

    #[test]
    fn learning_persists_across_episodes() {
        let (sim, r) = scenario(6.0);
        let mut ctl = RlMpc::new(small_cfg());
        let returns = train_episodes(&mut ctl, &sim, Some(&r), 3).unwrap();
        assert_eq!(returns.len(), 3);
        assert_eq!(ctl.episode(), 2);
        assert!(ctl.table.row(ctl.cfg.grid.bin(50.0)).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn validation() {
        let mut cfg = RlMpcConfig::default();
        cfg.validate().unwrap();
        cfg.feed_levels = vec![1.5];
        assert_eq!(cfg.validate().unwrap_err().key, "feed_levels");
    }
}
