//! Browser demo bindings.
//!
//! Each export takes plain numbers and returns a JSON string; the page
//! parses it and draws on a canvas. The `*_data` functions hold the logic
//! so they can be tested natively.

use aquactl::classical::{ChannelLoops, Classical, PidConfig};
use aquactl::growth::{catabolism_k, fixed_point_weight, mortality_k1, sigma_oxygen, tau_temperature, v_ammonia};
use aquactl::mpc::{MpcConfig, MpcController};
use aquactl::sim::{reference_trajectory, simulate, ConstantFeed, FixedAction};
use aquactl::{
    Ambient, ControlAction, Controller, EnvProfile, EnvState, GrowthParams, Plant, Reference, SimConfig, SimState,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct Curve {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct EffectCurves {
    pub tau: Curve,
    pub sigma: Curve,
    pub v: Curve,
    pub k: Curve,
    pub k1: Curve,
}

fn curve(lo: f64, hi: f64, points: usize, f: impl Fn(f64) -> f64) -> Curve {
    let n = points.max(2);
    let x: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let y = x.iter().map(|&x| f(x)).collect();
    Curve { x, y }
}

pub fn effect_curves_data(points: usize) -> EffectCurves {
    let p = GrowthParams::default();
    EffectCurves {
        tau: curve(20.0, 42.0, points, |t| tau_temperature(t, &p)),
        sigma: curve(0.0, 2.0, points, |d| sigma_oxygen(d, &p)),
        v: curve(0.0, 1.6, points, |u| v_ammonia(u, &p)),
        k: curve(20.0, 42.0, points, |t| catabolism_k(t, &p)),
        k1: curve(0.0, 1.6, points, |u| mortality_k1(u, &p)),
    }
}

/// Curves of the four effect factors and the mortality coefficient,
/// sampled at `points` abscissae each.
#[wasm_bindgen(js_name = effectCurves)]
pub fn effect_curves(points: usize) -> String {
    serde_json::to_string(&effect_curves_data(points)).expect("plain numbers")
}

/// Water conditions set on the page.
#[derive(Debug, Clone, Copy)]
pub struct Water {
    pub temp_c: f64,
    pub do_mgl: f64,
    pub uia_mgl: f64,
}

impl Water {
    fn ambient(self) -> Ambient {
        Ambient {
            temp_c: self.temp_c,
            do_mgl: self.do_mgl,
            uia_mgl: self.uia_mgl,
            rho: 1.0,
        }
    }
}

fn sim_config(w0: f64, days: u32, water: Water) -> Result<SimConfig, String> {
    let cfg = SimConfig {
        t0: 0.0,
        tf: days as f64,
        seed: 0,
        initial: SimState::Individual { w: w0 },
        profile: EnvProfile::constant(water.ambient()),
        plant: Plant::new(GrowthParams::default(), 1.0),
    };
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

#[derive(Debug, Serialize)]
pub struct GrowthRun {
    pub t: Vec<f64>,
    pub w: Vec<f64>,
    /// Weight at which growth stops under these conditions.
    pub w_star: Option<f64>,
}

pub fn simulate_growth_data(w0: f64, days: u32, f: f64, water: Water) -> Result<GrowthRun, String> {
    if !(0.0..=1.0).contains(&f) {
        return Err(format!("feeding rate must lie in [0, 1], got {f}"));
    }
    let cfg = sim_config(w0, days, water)?;
    let action = ControlAction::new(f, water.temp_c, water.do_mgl);
    let traj = simulate(&cfg, None, &mut FixedAction(action)).map_err(|e| e.to_string())?;
    let env = EnvState {
        f,
        temp_c: water.temp_c,
        do_mgl: water.do_mgl,
        uia_mgl: water.uia_mgl,
        rho: 1.0,
    };
    Ok(GrowthRun {
        t: traj.records().iter().map(|r| r.t).collect(),
        w: traj.biomass(),
        w_star: fixed_point_weight(&env, &cfg.plant.params),
    })
}

/// Weight of one fish over `days` at a fixed feeding rate and water quality.
#[wasm_bindgen(js_name = simulateGrowth)]
pub fn simulate_growth(w0: f64, days: u32, f: f64, temp_c: f64, do_mgl: f64, uia_mgl: f64) -> Result<String, JsValue> {
    let water = Water {
        temp_c,
        do_mgl,
        uia_mgl,
    };
    simulate_growth_data(w0, days, f, water)
        .map(|run| serde_json::to_string(&run).expect("plain numbers"))
        .map_err(|e| JsValue::from_str(&e))
}

#[derive(Debug, Serialize)]
pub struct ControllerRun {
    pub name: String,
    pub w: Vec<f64>,
    pub f: Vec<f64>,
    pub rmse: f64,
}

#[derive(Debug, Serialize)]
pub struct Comparison {
    pub t: Vec<f64>,
    pub reference: Vec<f64>,
    pub runs: Vec<ControllerRun>,
}

fn feed_pid() -> ChannelLoops<PidConfig> {
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
        temperature: None,
        oxygen: None,
        default_feed: 0.5,
    }
}

pub fn compare_controllers_data(w0: f64, days: u32, water: Water, f_ref: f64) -> Result<Comparison, String> {
    let cfg = sim_config(w0, days, water)?;
    let reference_traj = reference_trajectory(&cfg, f_ref).map_err(|e| e.to_string())?;
    let reference = Reference::from_trajectory(&reference_traj, cfg.plant.dt);
    let controllers: Vec<(&str, Box<dyn Controller>)> = vec![
        ("constant", Box::new(ConstantFeed { f: 0.5 })),
        ("pid", Box::new(Classical::pid(&feed_pid()))),
        ("mpc", Box::new(MpcController::new(MpcConfig::default()))),
    ];
    let mut runs = Vec::new();
    for (name, mut ctl) in controllers {
        let traj = simulate(&cfg, Some(&reference), ctl.as_mut()).map_err(|e| format!("{name}: {e}"))?;
        let recs = traj.records();
        let sq: f64 = recs
            .iter()
            .map(|r| (r.state.biomass() - reference.at(r.t)).powi(2))
            .sum();
        runs.push(ControllerRun {
            name: name.to_string(),
            w: traj.biomass(),
            f: recs.iter().filter_map(|r| r.action.map(|a| a.f)).collect(),
            rmse: (sq / recs.len() as f64).sqrt(),
        });
    }
    Ok(Comparison {
        t: reference_traj.records().iter().map(|r| r.t).collect(),
        reference: reference_traj.biomass(),
        runs,
    })
}

/// Runs constant feeding, PID and MPC against the reference grown at
/// `f_ref` under ideal water.
#[wasm_bindgen(js_name = compareControllers)]
pub fn compare_controllers(
    w0: f64,
    days: u32,
    temp_c: f64,
    do_mgl: f64,
    uia_mgl: f64,
    f_ref: f64,
) -> Result<String, JsValue> {
    let water = Water {
        temp_c,
        do_mgl,
        uia_mgl,
    };
    compare_controllers_data(w0, days, water, f_ref)
        .map(|c| serde_json::to_string(&c).expect("plain numbers"))
        .map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const WATER: Water = Water {
        temp_c: 30.0,
        do_mgl: 5.0,
        uia_mgl: 0.05,
    };

    #[test]
    fn curves_have_requested_length() {
        let c = effect_curves_data(50);
        for curve in [&c.tau, &c.sigma, &c.v, &c.k, &c.k1] {
            assert_eq!(curve.x.len(), 50);
            assert_eq!(curve.y.len(), 50);
        }
        assert!(c.tau.y.iter().all(|y| (0.0..=1.0).contains(y)));
        let json = effect_curves(3);
        assert!(json.starts_with("{\"tau\":"));
    }

    #[test]
    fn growth_approaches_fixed_point() {
        let run = simulate_growth_data(20.0, 400, 0.6, WATER).unwrap();
        assert_eq!(run.t.len(), 401);
        let w_star = run.w_star.unwrap();
        let last = *run.w.last().unwrap();
        assert!(last < w_star && last > 20.0);
        assert!(run.w.windows(2).all(|p| p[1] >= p[0]));
    }

    #[test]
    fn growth_rejects_bad_input() {
        assert!(simulate_growth_data(20.0, 10, 1.5, WATER).is_err());
        assert!(simulate_growth_data(-1.0, 10, 0.5, WATER).is_err());
    }

    #[test]
    fn comparison_ranks_mpc_ahead_of_constant() {
        let c = compare_controllers_data(50.0, 30, WATER, 0.6).unwrap();
        assert_eq!(c.t.len(), 31);
        let names: Vec<&str> = c.runs.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["constant", "pid", "mpc"]);
        for r in &c.runs {
            assert_eq!(r.w.len(), 31);
            assert_eq!(r.f.len(), 30);
        }
        assert!(c.runs[2].rmse < c.runs[0].rmse);
    }
}
