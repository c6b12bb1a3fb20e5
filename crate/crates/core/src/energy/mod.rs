//! Energy producer-consumer model.
//!
//! A node alternates between an active window, made of an ordered list of
//! stages each drawing a constant current, and a sleep window at a constant
//! sleep current. Harvested power is constant for a fixed illuminance. Over
//! one duty cycle of length `t_active + t_sleep` the harvested energy must
//! cover the active and sleep consumption:
//!
//! ```text
//! p_harv * (t_active + t_sleep) >= e_active + p_sleep * t_sleep
//! ```
//!
//! [`solve_sleep_time`] returns the smallest `t_sleep` meeting this at
//! equality and [`implied_harvest_power`] is its inverse.
//!
//! Units: currents in mA, power in mW, time in s, energy in J, voltage in V.

mod harvester;
mod presets;
mod supercap;

pub use harvester::{CurvePoint, HarvesterCurve};
pub use presets::*;
pub use supercap::{supercap_step, Supercap, SupercapStep};

use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnergyError {
    #[error("stage {name}: current must be positive and finite (got {current_ma} mA)")]
    StageCurrent { name: StageName, current_ma: f64 },
    #[error("stage {name}: duration must be positive and finite (got {duration_s} s)")]
    StageDuration { name: StageName, duration_s: f64 },
    #[error("profile voltage must be positive and finite (got {0} V)")]
    Voltage(f64),
    #[error("profile has no active stages")]
    NoActiveStages,
    #[error("profile lists stage {0} more than once")]
    DuplicateStage(StageName),
    #[error("sleep current {sleep_ma} mA must be positive and below the smallest active current {min_active_ma} mA")]
    SleepCurrent { sleep_ma: f64, min_active_ma: f64 },
    #[error("harvested power must be non-negative and finite (got {0} mW)")]
    NegativeHarvest(f64),
    #[error("sleep time must be positive and finite (got {0} s)")]
    SleepTime(f64),
    #[error("harvester curve: {0}")]
    Curve(String),
    #[error("supercap: {0}")]
    Supercap(String),
    #[error("time step must be non-negative and finite (got {0} s)")]
    TimeStep(f64),
}

/// Operation stages of the two node designs, plus sleep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageName {
    SensorRead,
    BleAdvertise,
    BleDataExchange,
    GwRequest,
    LiotSensorRead,
    LiotDataUpload,
    LiotSleepSet,
    Sleep,
}

impl StageName {
    pub fn as_str(self) -> &'static str {
        match self {
            StageName::SensorRead => "sensor-read",
            StageName::BleAdvertise => "ble-advertise",
            StageName::BleDataExchange => "ble-data-exchange",
            StageName::GwRequest => "gw-request",
            StageName::LiotSensorRead => "liot-sensor-read",
            StageName::LiotDataUpload => "liot-data-upload",
            StageName::LiotSleepSet => "liot-sleep-set",
            StageName::Sleep => "sleep",
        }
    }
}

impl fmt::Display for StageName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One constant-current stage of the active window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub name: StageName,
    pub current_ma: f64,
    pub duration_s: f64,
}

impl Stage {
    pub fn new(name: StageName, current_ma: f64, duration_s: f64) -> Result<Self, EnergyError> {
        let stage = Stage {
            name,
            current_ma,
            duration_s,
        };
        stage.validate()?;
        Ok(stage)
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        if !(self.current_ma.is_finite() && self.current_ma > 0.0) {
            return Err(EnergyError::StageCurrent {
                name: self.name,
                current_ma: self.current_ma,
            });
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(EnergyError::StageDuration {
                name: self.name,
                duration_s: self.duration_s,
            });
        }
        Ok(())
    }

    /// Average power drawn during the stage at `voltage_v`, in mW.
    pub fn power_mw(&self, voltage_v: f64) -> f64 {
        self.current_ma * voltage_v
    }
}

/// Energy drawn by one stage at the given supply voltage, in joules.
pub fn stage_energy(stage: &Stage, voltage_v: f64) -> f64 {
    stage.current_ma * voltage_v * stage.duration_s / 1000.0
}

/// Per-stage current/duration table of one node build at one supply voltage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyProfile {
    pub voltage_v: f64,
    pub active_stages: Vec<Stage>,
    pub sleep_current_ma: f64,
}

/// Duration and energy of the whole active window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActiveTotals {
    pub t_active_s: f64,
    pub e_active_j: f64,
}

impl ActiveTotals {
    /// Mean power over the active window, in mW. Harvesting at least this
    /// much makes sleeping unnecessary.
    pub fn mean_power_mw(&self) -> f64 {
        self.e_active_j * 1000.0 / self.t_active_s
    }
}

impl EnergyProfile {
    pub fn new(voltage_v: f64, active_stages: Vec<Stage>, sleep_current_ma: f64) -> Result<Self, EnergyError> {
        let profile = EnergyProfile {
            voltage_v,
            active_stages,
            sleep_current_ma,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        if !(self.voltage_v.is_finite() && self.voltage_v > 0.0) {
            return Err(EnergyError::Voltage(self.voltage_v));
        }
        if self.active_stages.is_empty() {
            return Err(EnergyError::NoActiveStages);
        }
        for (i, stage) in self.active_stages.iter().enumerate() {
            stage.validate()?;
            if stage.name == StageName::Sleep || self.active_stages[..i].iter().any(|s| s.name == stage.name) {
                return Err(EnergyError::DuplicateStage(stage.name));
            }
        }
        let min_active = self
            .active_stages
            .iter()
            .map(|s| s.current_ma)
            .fold(f64::INFINITY, f64::min);
        if !(self.sleep_current_ma.is_finite() && self.sleep_current_ma > 0.0 && self.sleep_current_ma < min_active) {
            return Err(EnergyError::SleepCurrent {
                sleep_ma: self.sleep_current_ma,
                min_active_ma: min_active,
            });
        }
        Ok(())
    }

    pub fn stage(&self, name: StageName) -> Option<&Stage> {
        self.active_stages.iter().find(|s| s.name == name)
    }

    pub fn sleep_power_mw(&self) -> f64 {
        self.sleep_current_ma * self.voltage_v
    }

    /// Power drawn in the named stage; `Sleep` maps to the sleep current.
    pub fn stage_power_mw(&self, name: StageName) -> Option<f64> {
        if name == StageName::Sleep {
            return Some(self.sleep_power_mw());
        }
        self.stage(name).map(|s| s.power_mw(self.voltage_v))
    }

    /// The sleep window as a stage of the given length.
    pub fn sleep_stage(&self, duration_s: f64) -> Stage {
        Stage {
            name: StageName::Sleep,
            current_ma: self.sleep_current_ma,
            duration_s,
        }
    }
}

pub fn active_totals(profile: &EnergyProfile) -> ActiveTotals {
    let (t, e) = profile.active_stages.iter().fold((0.0, 0.0), |(t, e), stage| {
        (t + stage.duration_s, e + stage_energy(stage, profile.voltage_v))
    });
    ActiveTotals {
        t_active_s: t,
        e_active_j: e,
    }
}

/// Result of the sleep-time solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SleepSolution {
    /// Sleep this long after every active window.
    Sleep(f64),
    /// Harvest covers the active window on its own; no sleep needed.
    Continuous,
    /// Harvest does not exceed the sleep draw, so no sleep length recovers
    /// the active deficit.
    Infeasible,
}

impl SleepSolution {
    pub fn sleep_s(self) -> Option<f64> {
        match self {
            SleepSolution::Sleep(t) => Some(t),
            SleepSolution::Continuous => Some(0.0),
            SleepSolution::Infeasible => None,
        }
    }
}

/// Smallest sleep time for which harvest over the whole cycle equals the
/// active plus sleep consumption.
pub fn solve_sleep_time(profile: &EnergyProfile, p_harv_mw: f64) -> Result<SleepSolution, EnergyError> {
    if !(p_harv_mw.is_finite() && p_harv_mw >= 0.0) {
        return Err(EnergyError::NegativeHarvest(p_harv_mw));
    }
    let totals = active_totals(profile);
    if p_harv_mw >= totals.mean_power_mw() {
        return Ok(SleepSolution::Continuous);
    }
    let p_sleep = profile.sleep_power_mw();
    if p_harv_mw <= p_sleep {
        return Ok(SleepSolution::Infeasible);
    }
    let deficit_mj = totals.e_active_j * 1000.0 - p_harv_mw * totals.t_active_s;
    Ok(SleepSolution::Sleep(deficit_mj / (p_harv_mw - p_sleep)))
}

/// Harvested power (mW) for which `t_sleep_s` is the exact solver output.
pub fn implied_harvest_power(profile: &EnergyProfile, t_sleep_s: f64) -> Result<f64, EnergyError> {
    if !(t_sleep_s.is_finite() && t_sleep_s > 0.0) {
        return Err(EnergyError::SleepTime(t_sleep_s));
    }
    let totals = active_totals(profile);
    Ok((totals.e_active_j * 1000.0 + profile.sleep_power_mw() * t_sleep_s) / (totals.t_active_s + t_sleep_s))
}

/// Energy ledger of one duty cycle under constant harvest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleBudget {
    pub t_active_s: f64,
    pub e_active_j: f64,
    pub t_sleep_s: f64,
    pub e_sleep_j: f64,
    pub p_harv_mw: f64,
}

impl CycleBudget {
    pub fn new(profile: &EnergyProfile, p_harv_mw: f64, t_sleep_s: f64) -> Self {
        let totals = active_totals(profile);
        CycleBudget {
            t_active_s: totals.t_active_s,
            e_active_j: totals.e_active_j,
            t_sleep_s,
            e_sleep_j: profile.sleep_power_mw() * t_sleep_s / 1000.0,
            p_harv_mw,
        }
    }

    pub fn cycle_s(&self) -> f64 {
        self.t_active_s + self.t_sleep_s
    }

    pub fn e_harvest_j(&self) -> f64 {
        self.p_harv_mw * self.cycle_s() / 1000.0
    }

    pub fn e_consumed_j(&self) -> f64 {
        self.e_active_j + self.e_sleep_j
    }

    /// Harvest minus consumption; non-negative when the cycle is sustainable.
    pub fn surplus_j(&self) -> f64 {
        self.e_harvest_j() - self.e_consumed_j()
    }
}
