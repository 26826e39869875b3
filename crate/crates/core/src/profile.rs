//! Exogenous environment profiles: the ambient temperature, oxygen, ammonia
//! and photoperiod seen by the plant before any actuation.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{keyed_rng, Stream};

const RHO_MARGIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("table profile needs at least one row")]
    EmptyTable,
    #[error("table times must be strictly increasing (row {row})")]
    Unordered { row: usize },
    #[error("non-finite value in table row {row}")]
    NonFinite { row: usize },
    #[error("wave period must be positive, got {0}")]
    BadPeriod(f64),
}

/// Ambient (uncontrolled) conditions at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ambient {
    pub temp_c: f64,
    pub do_mgl: f64,
    pub uia_mgl: f64,
    pub rho: f64,
}

/// `mean + amplitude·sin(2π(t + phase)/period)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Wave {
    pub mean: f64,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default = "default_period")]
    pub period_days: f64,
    #[serde(default)]
    pub phase_days: f64,
}

fn default_period() -> f64 {
    365.0
}

impl Wave {
    pub fn flat(mean: f64) -> Self {
        Self {
            mean,
            amplitude: 0.0,
            period_days: default_period(),
            phase_days: 0.0,
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        let angle = std::f64::consts::TAU * (t + self.phase_days) / self.period_days;
        self.mean + self.amplitude * angle.sin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub t_day: f64,
    pub temp_c: f64,
    pub do_mgl: f64,
    pub uia_mgl: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProfileShape {
    Constant(Ambient),
    Seasonal {
        temp_c: Wave,
        do_mgl: Wave,
        uia_mgl: Wave,
        rho: Wave,
    },
    /// Piecewise-linear interpolation between rows, held flat outside them.
    Table(Vec<TableRow>),
}

/// Uniform day-by-day perturbation half-widths per channel.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    #[serde(default)]
    pub temp_c: f64,
    #[serde(default)]
    pub do_mgl: f64,
    #[serde(default)]
    pub uia_mgl: f64,
}

impl Perturbation {
    fn is_zero(&self) -> bool {
        self.temp_c == 0.0 && self.do_mgl == 0.0 && self.uia_mgl == 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvProfile {
    shape: ProfileShape,
    perturbation: Perturbation,
    seed: u64,
}

impl EnvProfile {
    pub fn constant(ambient: Ambient) -> Self {
        Self {
            shape: ProfileShape::Constant(ambient),
            perturbation: Perturbation::default(),
            seed: 0,
        }
    }

    pub fn seasonal(temp_c: Wave, do_mgl: Wave, uia_mgl: Wave, rho: Wave) -> Result<Self, ProfileError> {
        for w in [temp_c, do_mgl, uia_mgl, rho] {
            if !(w.period_days > 0.0) {
                return Err(ProfileError::BadPeriod(w.period_days));
            }
        }
        Ok(Self {
            shape: ProfileShape::Seasonal {
                temp_c,
                do_mgl,
                uia_mgl,
                rho,
            },
            perturbation: Perturbation::default(),
            seed: 0,
        })
    }

    pub fn table(rows: Vec<TableRow>) -> Result<Self, ProfileError> {
        if rows.is_empty() {
            return Err(ProfileError::EmptyTable);
        }
        for (i, r) in rows.iter().enumerate() {
            if ![r.t_day, r.temp_c, r.do_mgl, r.uia_mgl, r.rho]
                .iter()
                .all(|v| v.is_finite())
            {
                return Err(ProfileError::NonFinite { row: i });
            }
            if i > 0 && !(r.t_day > rows[i - 1].t_day) {
                return Err(ProfileError::Unordered { row: i });
            }
        }
        Ok(Self {
            shape: ProfileShape::Table(rows),
            perturbation: Perturbation::default(),
            seed: 0,
        })
    }

    /// Adds a seeded perturbation, redrawn once per whole day.
    pub fn with_perturbation(mut self, perturbation: Perturbation, seed: u64) -> Self {
        self.perturbation = perturbation;
        self.seed = seed;
        self
    }

    pub fn shape(&self) -> &ProfileShape {
        &self.shape
    }

    /// Ambient conditions at time `t`, clamped to physical ranges.
    pub fn at(&self, t: f64) -> Ambient {
        let mut a = match &self.shape {
            ProfileShape::Constant(a) => *a,
            ProfileShape::Seasonal {
                temp_c,
                do_mgl,
                uia_mgl,
                rho,
            } => Ambient {
                temp_c: temp_c.at(t),
                do_mgl: do_mgl.at(t),
                uia_mgl: uia_mgl.at(t),
                rho: rho.at(t),
            },
            ProfileShape::Table(rows) => interpolate(rows, t),
        };
        if !self.perturbation.is_zero() {
            let day = t.floor() as i64 as u64;
            let mut rng = keyed_rng(self.seed, Stream::Environment, day);
            let mut draw = |half: f64| {
                let u: f64 = rng.random();
                half * (2.0 * u - 1.0)
            };
            a.temp_c += draw(self.perturbation.temp_c);
            a.do_mgl += draw(self.perturbation.do_mgl);
            a.uia_mgl += draw(self.perturbation.uia_mgl);
        }
        a.do_mgl = a.do_mgl.max(0.0);
        a.uia_mgl = a.uia_mgl.max(0.0);
        a.rho = a.rho.clamp(RHO_MARGIN, 2.0 - RHO_MARGIN);
        a
    }
}

fn interpolate(rows: &[TableRow], t: f64) -> Ambient {
    let pick = |r: &TableRow| Ambient {
        temp_c: r.temp_c,
        do_mgl: r.do_mgl,
        uia_mgl: r.uia_mgl,
        rho: r.rho,
    };
    let first = &rows[0];
    let last = &rows[rows.len() - 1];
    if t <= first.t_day {
        return pick(first);
    }
    if t >= last.t_day {
        return pick(last);
    }
    let hi = rows.partition_point(|r| r.t_day <= t);
    let (r0, r1) = (&rows[hi - 1], &rows[hi]);
    let s = (t - r0.t_day) / (r1.t_day - r0.t_day);
    let lerp = |a: f64, b: f64| a + s * (b - a);
    Ambient {
        temp_c: lerp(r0.temp_c, r1.temp_c),
        do_mgl: lerp(r0.do_mgl, r1.do_mgl),
        uia_mgl: lerp(r0.uia_mgl, r1.uia_mgl),
        rho: lerp(r0.rho, r1.rho),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: f64, temp: f64) -> TableRow {
        TableRow {
            t_day: t,
            temp_c: temp,
            do_mgl: 5.0,
            uia_mgl: 0.02,
            rho: 1.0,
        }
    }

    #[test]
    fn table_interpolates_and_holds() {
        let p = EnvProfile::table(vec![row(0.0, 20.0), row(10.0, 30.0)]).unwrap();
        assert_eq!(p.at(5.0).temp_c, 25.0);
        assert_eq!(p.at(-3.0).temp_c, 20.0);
        assert_eq!(p.at(12.0).temp_c, 30.0);
        assert_eq!(p.at(10.0).temp_c, 30.0);
    }

    #[test]
    fn table_rejects_unordered() {
        assert_eq!(
            EnvProfile::table(vec![row(0.0, 20.0), row(0.0, 30.0)]),
            Err(ProfileError::Unordered { row: 1 })
        );
        assert_eq!(EnvProfile::table(vec![]), Err(ProfileError::EmptyTable));
    }

    #[test]
    fn seasonal_wave() {
        let p = EnvProfile::seasonal(
            Wave {
                mean: 28.0,
                amplitude: 3.0,
                period_days: 40.0,
                phase_days: 0.0,
            },
            Wave::flat(5.0),
            Wave::flat(0.02),
            Wave::flat(1.0),
        )
        .unwrap();
        assert!((p.at(10.0).temp_c - 31.0).abs() < 1e-12);
        assert!(EnvProfile::seasonal(
            Wave {
                period_days: 0.0,
                ..Wave::flat(1.0)
            },
            Wave::flat(1.0),
            Wave::flat(0.0),
            Wave::flat(1.0)
        )
        .is_err());
    }

    #[test]
    fn clamps_to_physical_range() {
        let p = EnvProfile::constant(Ambient {
            temp_c: 30.0,
            do_mgl: -1.0,
            uia_mgl: -0.5,
            rho: 5.0,
        });
        let a = p.at(0.0);
        assert_eq!(a.do_mgl, 0.0);
        assert_eq!(a.uia_mgl, 0.0);
        assert!(a.rho < 2.0 && a.rho > 0.0);
    }

    #[test]
    fn perturbation_is_daily_and_seeded() {
        let base = EnvProfile::constant(Ambient {
            temp_c: 30.0,
            do_mgl: 5.0,
            uia_mgl: 0.05,
            rho: 1.0,
        });
        let noise = Perturbation {
            temp_c: 1.0,
            do_mgl: 0.5,
            uia_mgl: 0.01,
        };
        let a = base.clone().with_perturbation(noise, 7);
        let b = base.clone().with_perturbation(noise, 7);
        let c = base.with_perturbation(noise, 8);
        assert_eq!(a.at(3.2), b.at(3.7));
        assert_ne!(a.at(3.2), a.at(4.2));
        assert_ne!(a.at(3.2), c.at(3.2));
        for d in 0..50 {
            let x = a.at(d as f64);
            assert!((x.temp_c - 30.0).abs() <= 1.0);
            assert!((x.uia_mgl - 0.05).abs() <= 0.01 + 1e-15);
        }
    }
}
