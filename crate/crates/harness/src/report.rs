//! Run metrics, computed only from a trajectory so they can be recomputed
//! from a persisted CSV.

use std::fmt::Write as _;
use std::path::Path;

use aquactl::growth::{fcr, sgr};
use aquactl::{Reference, Trajectory};

use crate::csvio::{fmt_num, CsvError};

/// Model constants the metrics need besides the trajectory itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricContext {
    pub r_frac: f64,
    pub stocked_per_day: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub controller: String,
    /// Mean fish weight at the end (the individual weight for single fish).
    pub terminal_w: Option<f64>,
    pub terminal_biomass: f64,
    pub total_feed: f64,
    pub fcr: Option<f64>,
    pub sgr: Option<f64>,
    pub rmse: Option<f64>,
    pub survival: Option<f64>,
    pub episode_return: Option<f64>,
}

pub const REPORT_HEADER: [&str; 9] = [
    "controller",
    "terminal_w_kcal",
    "terminal_biomass_kcal",
    "total_feed_kcal",
    "fcr",
    "sgr_pct_per_day",
    "rmse_kcal",
    "survival",
    "episode_return",
];

impl RunReport {
    pub fn compute(controller: &str, traj: &Trajectory, reference: Option<&Reference>, ctx: MetricContext) -> Self {
        let recs = traj.records();
        let (first, last) = (&recs[0], &recs[recs.len() - 1]);
        let total_feed: f64 = recs
            .windows(2)
            .filter_map(|p| {
                p[0].action
                    .map(|a| a.f * ctx.r_frac * p[0].state.biomass() * (p[1].t - p[0].t))
            })
            .sum();
        let gain = last.state.biomass() - first.state.biomass();
        let days = last.t - first.t;
        let sgr = match (first.state.mean_weight(), last.state.mean_weight()) {
            (Some(w0), Some(wf)) if days > 0.0 => sgr(w0, wf, days).ok(),
            _ => None,
        };
        let rmse = reference.map(|r| {
            let sq: f64 = recs.iter().map(|x| (x.state.biomass() - r.at(x.t)).powi(2)).sum();
            (sq / recs.len() as f64).sqrt()
        });
        let survival = match (first.state.count(), last.state.count()) {
            (Some(p0), Some(pf)) => {
                let whole_days = (days + 1e-9).floor() as u64;
                let entered = p0 + ctx.stocked_per_day * whole_days;
                (entered > 0).then(|| pf as f64 / entered as f64)
            }
            _ => None,
        };
        let has_reward = recs.iter().any(|r| r.reward.is_some());
        Self {
            controller: controller.to_string(),
            terminal_w: last.state.mean_weight(),
            terminal_biomass: last.state.biomass(),
            total_feed,
            fcr: fcr(total_feed, gain).ok(),
            sgr,
            rmse,
            survival,
            episode_return: has_reward.then(|| traj.episode_return()),
        }
    }

    fn fields(&self) -> [String; 9] {
        let o = |x: Option<f64>| x.map(fmt_num).unwrap_or_default();
        [
            self.controller.clone(),
            o(self.terminal_w),
            fmt_num(self.terminal_biomass),
            fmt_num(self.total_feed),
            o(self.fcr),
            o(self.sgr),
            o(self.rmse),
            o(self.survival),
            o(self.episode_return),
        ]
    }
}

pub fn write_reports(reports: &[RunReport], path: &Path) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(REPORT_HEADER)?;
    for r in reports {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

/// Aligned plain-text table. `wall_clock` (seconds per run) is shown here
/// only, never in the CSV, so CSV output stays reproducible.
pub fn text_table(reports: &[RunReport], wall_clock: Option<&[f64]>) -> String {
    let short = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
    let mut header: Vec<String> = [
        "controller",
        "w_final",
        "biomass",
        "feed",
        "FCR",
        "SGR",
        "RMSE",
        "survival",
        "return",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    if wall_clock.is_some() {
        header.push("seconds".into());
    }
    let mut rows = vec![header];
    for (i, r) in reports.iter().enumerate() {
        let mut row = vec![
            r.controller.clone(),
            short(r.terminal_w),
            short(Some(r.terminal_biomass)),
            short(Some(r.total_feed)),
            short(r.fcr),
            short(r.sgr),
            short(r.rmse),
            short(r.survival),
            short(r.episode_return),
        ];
        if let Some(w) = wall_clock {
            row.push(format!("{:.3}", w[i]));
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                if c == 0 {
                    format!("{cell:<w$}", w = widths[c])
                } else {
                    format!("{cell:>w$}", w = widths[c])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}
