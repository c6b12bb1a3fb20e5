//! Sensor node configuration, sleep scheduling and the duty-cycle state
//! machine.

mod fsm;
mod sensors;

pub use fsm::{CycleStats, Node, NodeEvent, NodeState, Phase, StageUsage};
pub use sensors::{ChannelMask, ChannelSignal, EnvironmentModel, SensorChannel, SensorSample};

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::energy::{
    self, active_totals, solve_sleep_time, EnergyError, EnergyProfile, HarvesterCurve, SleepSolution, StageName,
    Supercap,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Ble,
    Liot,
}

impl NodeKind {
    /// Active stages in the order the node runs them.
    pub fn stage_sequence(self) -> &'static [StageName] {
        match self {
            NodeKind::Ble => &[
                StageName::SensorRead,
                StageName::BleAdvertise,
                StageName::BleDataExchange,
            ],
            NodeKind::Liot => &[
                StageName::GwRequest,
                StageName::LiotSensorRead,
                StageName::LiotDataUpload,
                StageName::LiotSleepSet,
            ],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Ble => "ble",
            NodeKind::Liot => "liot",
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How long a BLE node advertises before the gateway connects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvertisingMode {
    /// Always the full advertising stage of the profile.
    Fixed,
    /// Uniform in `(min_advertising_s, stage duration]`.
    #[default]
    Uniform,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NodeError {
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error("margin must be non-negative and finite (got {0})")]
    Margin(f64),
    #[error("{kind} node expects stages {expected:?}, profile has {found:?}")]
    StageSequence {
        kind: NodeKind,
        expected: Vec<StageName>,
        found: Vec<StageName>,
    },
    #[error("node has no sensor channels")]
    NoSensors,
    #[error("min_advertising_s must be in (0, {max}] (got {min})")]
    Advertising { min: f64, max: f64 },
    #[error("backoff_s must be positive and finite (got {0})")]
    Backoff(f64),
}

/// Everything that defines one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub id: NodeId,
    pub kind: NodeKind,
    pub profile: EnergyProfile,
    pub harvester: HarvesterCurve,
    /// Initial buffer state.
    pub supercap: Supercap,
    /// Fraction the locally solved duty cycle is stretched by.
    pub margin: f64,
    pub sensors: Vec<SensorChannel>,
    pub advertising: AdvertisingMode,
    pub min_advertising_s: f64,
    /// Sleep before re-evaluating after an infeasible solve or a brown-out.
    pub backoff_s: f64,
}

pub const DEFAULT_INITIAL_VOLTAGE_V: f64 = 4.4;
pub const DEFAULT_BACKOFF_S: f64 = 60.0;
pub const DEFAULT_MIN_ADVERTISING_S: f64 = 0.5;

impl NodeConfig {
    fn reference(id: NodeId, kind: NodeKind) -> Self {
        let (profile, harvester, margin) = match kind {
            NodeKind::Ble => (
                energy::ble_table1(),
                energy::ble_harvester(),
                energy::BLE_DEFAULT_MARGIN,
            ),
            NodeKind::Liot => (energy::liot_table2(), energy::liot_harvester(), 0.0),
        };
        NodeConfig {
            id,
            kind,
            profile,
            harvester,
            supercap: Supercap::new(Supercap::DEFAULT_CAPACITANCE_F, DEFAULT_INITIAL_VOLTAGE_V)
                .expect("default supercap is valid"),
            margin,
            sensors: SensorChannel::ALL.to_vec(),
            advertising: AdvertisingMode::default(),
            min_advertising_s: DEFAULT_MIN_ADVERTISING_S,
            backoff_s: DEFAULT_BACKOFF_S,
        }
    }

    /// The reference BLE build.
    pub fn ble(id: NodeId) -> Self {
        Self::reference(id, NodeKind::Ble)
    }

    /// The reference LIoT build.
    pub fn liot(id: NodeId) -> Self {
        Self::reference(id, NodeKind::Liot)
    }

    pub fn validate(&self) -> Result<(), NodeError> {
        self.profile.validate()?;
        self.harvester.validate()?;
        self.supercap.validate()?;
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(NodeError::Margin(self.margin));
        }
        let found: Vec<StageName> = self.profile.active_stages.iter().map(|s| s.name).collect();
        let expected = self.kind.stage_sequence();
        if found != expected {
            return Err(NodeError::StageSequence {
                kind: self.kind,
                expected: expected.to_vec(),
                found,
            });
        }
        if self.sensors.is_empty() {
            return Err(NodeError::NoSensors);
        }
        if self.kind == NodeKind::Ble {
            let max = self.max_advertising_s();
            if !(self.min_advertising_s > 0.0 && self.min_advertising_s <= max) {
                return Err(NodeError::Advertising {
                    min: self.min_advertising_s,
                    max,
                });
            }
        }
        if !(self.backoff_s.is_finite() && self.backoff_s > 0.0) {
            return Err(NodeError::Backoff(self.backoff_s));
        }
        Ok(())
    }

    pub fn channel_mask(&self) -> ChannelMask {
        ChannelMask::from_channels(&self.sensors)
    }

    fn stage_s(&self, name: StageName) -> f64 {
        self.profile.stage(name).map_or(0.0, |s| s.duration_s)
    }

    /// Advertising stage length, the upper bound of the advertising window.
    pub fn max_advertising_s(&self) -> f64 {
        self.stage_s(StageName::BleAdvertise)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScheduleError {
    #[error("no sleep time balances the budget at {lux} lx ({harvest_mw} mW harvested)")]
    Infeasible { lux: f64, harvest_mw: f64 },
    #[error("illuminance must be non-negative and finite (got {0} lx)")]
    Lux(f64),
    #[error("assigned sleep must be non-negative and finite (got {0} s)")]
    Assigned(f64),
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

/// Where the next sleep duration comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleMode {
    /// Solve the energy balance on the node.
    LocalSolve,
    /// Use the value the gateway sent.
    GatewayAssigned(f64),
}

/// The pieces of a node configuration the sleep solver needs. The LIoT
/// gateway holds one per node to compute sleep assignments.
#[derive(Debug, Clone, PartialEq)]
pub struct SleepPolicy {
    pub profile: EnergyProfile,
    pub harvester: HarvesterCurve,
    pub margin: f64,
    pub backoff_s: f64,
}

impl SleepPolicy {
    pub fn from_config(cfg: &NodeConfig) -> Self {
        SleepPolicy {
            profile: cfg.profile.clone(),
            harvester: cfg.harvester.clone(),
            margin: cfg.margin,
            backoff_s: cfg.backoff_s,
        }
    }

    /// Sleep to arm at `lux`, with the cycle stretched by the margin.
    pub fn sleep_for(&self, lux: f64) -> Result<f64, ScheduleError> {
        local_sleep(&self.profile, &self.harvester, self.margin, lux)
    }

    /// Whole seconds the gateway assigns: the solved sleep rounded up, or
    /// the backoff when no sleep balances the budget.
    pub fn assigned_seconds(&self, lux: f64) -> u32 {
        let s = self.sleep_for(lux).unwrap_or(self.backoff_s);
        (s - 1e-6).ceil().clamp(0.0, f64::from(u32::MAX)) as u32
    }
}

fn local_sleep(
    profile: &EnergyProfile,
    harvester: &HarvesterCurve,
    margin: f64,
    lux: f64,
) -> Result<f64, ScheduleError> {
    if !(lux.is_finite() && lux >= 0.0) {
        return Err(ScheduleError::Lux(lux));
    }
    let harvest_mw = harvester.power_at(lux);
    match solve_sleep_time(profile, harvest_mw)? {
        SleepSolution::Sleep(t_s) => {
            let t_a = active_totals(profile).t_active_s;
            Ok((t_a + t_s) * (1.0 + margin) - t_a)
        }
        SleepSolution::Continuous => Ok(0.0),
        SleepSolution::Infeasible => Err(ScheduleError::Infeasible { lux, harvest_mw }),
    }
}

/// Sleep duration to arm the timer with at the end of an active period.
pub fn schedule_next_cycle(cfg: &NodeConfig, lux: f64, mode: ScheduleMode) -> Result<f64, ScheduleError> {
    match mode {
        ScheduleMode::GatewayAssigned(s) => {
            if s.is_finite() && s >= 0.0 {
                Ok(s)
            } else {
                Err(ScheduleError::Assigned(s))
            }
        }
        ScheduleMode::LocalSolve => local_sleep(&cfg.profile, &cfg.harvester, cfg.margin, lux),
    }
}

pub fn read_sensors(cfg: &NodeConfig, env: &EnvironmentModel, t_s: f64) -> SensorSample {
    env.read(cfg.id, t_s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_configs_validate() {
        NodeConfig::ble(NodeId(1)).validate().unwrap();
        NodeConfig::liot(NodeId(2)).validate().unwrap();
    }

    #[test]
    fn wrong_profile_for_kind_rejected() {
        let mut cfg = NodeConfig::ble(NodeId(1));
        cfg.profile = energy::liot_table2();
        assert!(matches!(cfg.validate(), Err(NodeError::StageSequence { .. })));
    }

    #[test]
    fn negative_margin_rejected() {
        let mut cfg = NodeConfig::ble(NodeId(1));
        cfg.margin = -0.1;
        assert_eq!(cfg.validate(), Err(NodeError::Margin(-0.1)));
    }

    #[test]
    fn ble_cycle_at_700_lx() {
        let cfg = NodeConfig::ble(NodeId(1));
        let sleep = schedule_next_cycle(&cfg, 700.0, ScheduleMode::LocalSolve).unwrap();
        let cycle = sleep + 5.56;
        assert!((cycle - 19.3221).abs() < 1e-9, "{cycle}");
    }

    #[test]
    fn ble_cycle_at_500_lx() {
        let cfg = NodeConfig::ble(NodeId(1));
        let cycle = schedule_next_cycle(&cfg, 500.0, ScheduleMode::LocalSolve).unwrap() + 5.56;
        assert!((cycle - 27.384).abs() < 1e-9, "{cycle}");
        assert!((cycle - 26.7).abs() / 26.7 < 0.05);
    }

    #[test]
    fn gateway_assignment_is_verbatim() {
        let cfg = NodeConfig::liot(NodeId(1));
        assert_eq!(
            schedule_next_cycle(&cfg, 700.0, ScheduleMode::GatewayAssigned(620.0)),
            Ok(620.0)
        );
        assert!(schedule_next_cycle(&cfg, 700.0, ScheduleMode::GatewayAssigned(-1.0)).is_err());
    }

    #[test]
    fn bright_light_runs_back_to_back() {
        let cfg = NodeConfig::ble(NodeId(1));
        assert_eq!(schedule_next_cycle(&cfg, 10_000.0, ScheduleMode::LocalSolve), Ok(0.0));
    }

    #[test]
    fn darkness_is_infeasible() {
        let cfg = NodeConfig::ble(NodeId(1));
        assert!(matches!(
            schedule_next_cycle(&cfg, 0.0, ScheduleMode::LocalSolve),
            Err(ScheduleError::Infeasible { .. })
        ));
        assert!(schedule_next_cycle(&cfg, -1.0, ScheduleMode::LocalSolve).is_err());
    }

    #[test]
    fn liot_assignments() {
        let policy = SleepPolicy::from_config(&NodeConfig::liot(NodeId(1)));
        assert_eq!(policy.assigned_seconds(700.0), 620);
        assert_eq!(policy.assigned_seconds(500.0), 1350);
        assert_eq!(policy.assigned_seconds(0.0), 60);
    }

    #[test]
    fn sensors_read_through_config() {
        let cfg = NodeConfig::ble(NodeId(3));
        let env = EnvironmentModel::default().with_seed(42);
        let s = read_sensors(&cfg, &env, 0.0);
        assert_eq!(s.temperature_c, 21.0);
        assert_eq!(s, read_sensors(&cfg, &env, 0.0));
    }
}
