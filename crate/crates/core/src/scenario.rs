//! Versioned scenario files and built-in presets.
//!
//! A scenario file is TOML. Unknown keys are errors. Node entries start
//! from the reference build of their kind and override only what they set;
//! `profile` and `harvester` accept either a preset name or a full table.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::energy::{self, EnergyProfile, HarvesterCurve, Supercap};
use crate::node::{AdvertisingMode, EnvironmentModel, NodeConfig, NodeId, NodeKind, SensorChannel};
use crate::protocol::LinkTiming;
use crate::sim::{
    per_frame_loss, ChannelModel, GatewayConfig, IlluminationProfile, Scenario, ScenarioError,
    DEFAULT_SAMPLE_INTERVAL_S,
};

pub const SCHEMA_VERSION: &str = "1.0";
const SCHEMA_MAJOR: u64 = 1;

/// Length of one reference run: an eight-hour working day.
pub const REFERENCE_DURATION_S: f64 = 28_800.0;
/// Exchange failure rates observed for the BLE node.
pub const BLE_SESSION_FAILURE_700LX: f64 = 0.009;
pub const BLE_SESSION_FAILURE_500LX: f64 = 0.088;
/// Frames in one BLE exchange.
pub const BLE_FRAMES_PER_SESSION: u32 = 5;

pub const PRESETS: [&str; 4] = ["ble-700lx", "ble-500lx", "liot-700lx", "liot-500lx"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileSpec {
    Preset(String),
    Custom(EnergyProfile),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HarvesterSpec {
    Preset(String),
    Custom(HarvesterCurve),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeEntry {
    pub id: NodeId,
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub harvester: Option<HarvesterSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_voltage_v: Option<f64>,
    /// Full buffer description; `initial_voltage_v` still applies on top.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supercap: Option<Supercap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensors: Option<Vec<SensorChannel>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advertising: Option<AdvertisingMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_advertising_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backoff_s: Option<f64>,
}

impl NodeEntry {
    pub fn new(id: u32, kind: NodeKind) -> Self {
        NodeEntry {
            id: NodeId(id),
            kind,
            profile: None,
            harvester: None,
            initial_voltage_v: None,
            supercap: None,
            margin: None,
            sensors: None,
            advertising: None,
            min_advertising_s: None,
            backoff_s: None,
        }
    }

    pub fn resolve(&self) -> Result<NodeConfig, ScenarioFileError> {
        let mut cfg = match self.kind {
            NodeKind::Ble => NodeConfig::ble(self.id),
            NodeKind::Liot => NodeConfig::liot(self.id),
        };
        match &self.profile {
            Some(ProfileSpec::Preset(name)) => {
                cfg.profile = energy::profile_preset(name).ok_or_else(|| ScenarioFileError::UnknownPreset {
                    what: "profile",
                    name: name.clone(),
                })?;
            }
            Some(ProfileSpec::Custom(p)) => cfg.profile = p.clone(),
            None => {}
        }
        match &self.harvester {
            Some(HarvesterSpec::Preset(name)) => {
                cfg.harvester = energy::harvester_preset(name).ok_or_else(|| ScenarioFileError::UnknownPreset {
                    what: "harvester",
                    name: name.clone(),
                })?;
            }
            Some(HarvesterSpec::Custom(h)) => cfg.harvester = h.clone(),
            None => {}
        }
        if let Some(cap) = self.supercap {
            cfg.supercap = cap;
        }
        if let Some(v) = self.initial_voltage_v {
            cfg.supercap = cfg.supercap.with_voltage(v);
        }
        if let Some(m) = self.margin {
            cfg.margin = m;
        }
        if let Some(s) = &self.sensors {
            cfg.sensors = s.clone();
        }
        if let Some(a) = self.advertising {
            cfg.advertising = a;
        }
        if let Some(m) = self.min_advertising_s {
            cfg.min_advertising_s = m;
        }
        if let Some(b) = self.backoff_s {
            cfg.backoff_s = b;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// `csv` or `jsonl`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
}

fn default_seed() -> u64 {
    1
}

fn default_sample_interval() -> f64 {
    DEFAULT_SAMPLE_INTERVAL_S
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub duration_s: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_sample_interval")]
    pub sample_interval_s: f64,
    pub illumination: IlluminationProfile,
    #[serde(default)]
    pub channel: ChannelModel,
    #[serde(default)]
    pub timing: LinkTiming,
    #[serde(default)]
    pub gateway: GatewayConfig,
    #[serde(default)]
    pub environment: EnvironmentModel,
    #[serde(default)]
    pub output: OutputConfig,
    pub nodes: Vec<NodeEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioFileError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("unsupported schema_version {found:?}; this build reads {SCHEMA_VERSION}")]
    Schema { found: String },
    #[error("unknown {what} preset {name:?}")]
    UnknownPreset { what: &'static str, name: String },
    #[error("cannot set {path}: {reason}")]
    Override { path: String, reason: String },
    #[error(transparent)]
    Invalid(#[from] ScenarioError),
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self, ScenarioFileError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioFileError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            ScenarioFileError::Parse(msg) => ScenarioFileError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self, ScenarioFileError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioFileError::Parse(e.to_string()))?;
        file.check_schema()?;
        Ok(file)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes to TOML")
    }

    fn check_schema(&self) -> Result<(), ScenarioFileError> {
        let major = self
            .schema_version
            .split('.')
            .next()
            .and_then(|m| m.parse::<u64>().ok());
        if major == Some(SCHEMA_MAJOR) {
            Ok(())
        } else {
            Err(ScenarioFileError::Schema {
                found: self.schema_version.clone(),
            })
        }
    }

    /// Resolves presets and validates everything.
    pub fn to_scenario(&self) -> Result<Scenario, ScenarioFileError> {
        self.check_schema()?;
        let nodes = self
            .nodes
            .iter()
            .map(NodeEntry::resolve)
            .collect::<Result<Vec<_>, _>>()?;
        let scenario = Scenario {
            duration_s: self.duration_s,
            seed: self.seed,
            sample_interval_s: self.sample_interval_s,
            illumination: self.illumination.clone(),
            channel: self.channel.clone(),
            timing: self.timing,
            gateway: self.gateway.clone(),
            environment: self.environment.clone(),
            nodes,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    /// Copy with the value at a dotted path replaced, e.g.
    /// `channel.loss.ble_adv` or `nodes.0.margin`.
    pub fn with_override(&self, path: &str, value: serde_json::Value) -> Result<Self, ScenarioFileError> {
        let err = |reason: String| ScenarioFileError::Override {
            path: path.to_string(),
            reason,
        };
        let mut doc = serde_json::to_value(self).map_err(|e| err(e.to_string()))?;
        let mut slot = &mut doc;
        for part in path.split('.') {
            slot = match slot {
                serde_json::Value::Object(map) => map.entry(part).or_insert(serde_json::Value::Null),
                serde_json::Value::Array(items) => {
                    let len = items.len();
                    part.parse::<usize>()
                        .ok()
                        .and_then(|i| items.get_mut(i))
                        .ok_or_else(|| err(format!("{part:?} is not an index below {len}")))?
                }
                _ => return Err(err(format!("{part:?} is inside a scalar"))),
            };
        }
        *slot = value;
        let file: ScenarioFile = serde_json::from_value(doc).map_err(|e| err(e.to_string()))?;
        file.check_schema()?;
        Ok(file)
    }
}

/// Reads an override value: JSON if it parses, otherwise a plain string.
pub fn parse_value(text: &str) -> serde_json::Value {
    serde_json::from_str(text).unwrap_or_else(|_| serde_json::Value::String(text.to_string()))
}

/// One swept parameter: `path=v1,v2,...`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub path: String,
    pub values: Vec<serde_json::Value>,
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (path, values) = s
            .split_once('=')
            .ok_or_else(|| format!("expected path=v1,v2,... (got {s:?})"))?;
        let path = path.trim();
        if path.is_empty() {
            return Err(format!("empty parameter path in {s:?}"));
        }
        let values: Vec<_> = values.split(',').map(|v| parse_value(v.trim())).collect();
        Ok(SweepAxis {
            path: path.to_string(),
            values,
        })
    }
}

/// `(path, value)` assignments that produced one sweep point.
pub type Assignments = Vec<(String, serde_json::Value)>;

/// Cartesian product of the axes applied to `base`, first axis slowest.
pub fn expand_sweep(
    base: &ScenarioFile,
    axes: &[SweepAxis],
) -> Result<Vec<(Assignments, ScenarioFile)>, ScenarioFileError> {
    let mut points = vec![(Vec::new(), base.clone())];
    for axis in axes {
        let mut next = Vec::with_capacity(points.len() * axis.values.len());
        for (assigned, file) in &points {
            for v in &axis.values {
                let mut assigned = assigned.clone();
                assigned.push((axis.path.clone(), v.clone()));
                next.push((assigned, file.with_override(&axis.path, v.clone())?));
            }
        }
        points = next;
    }
    Ok(points)
}

/// A built-in reference scenario: one node, eight hours, constant light,
/// fixed advertising and the reported initial buffer voltage.
pub fn preset(name: &str) -> Option<ScenarioFile> {
    let (kind, lux, v0, session_failure) = match name {
        "ble-700lx" => (NodeKind::Ble, 700.0, 4.463, BLE_SESSION_FAILURE_700LX),
        "ble-500lx" => (NodeKind::Ble, 500.0, 4.416, BLE_SESSION_FAILURE_500LX),
        "liot-700lx" => (NodeKind::Liot, 700.0, 4.235, 0.0),
        "liot-500lx" => (NodeKind::Liot, 500.0, 4.353, 0.0),
        _ => return None,
    };
    let mut node = NodeEntry::new(1, kind);
    node.initial_voltage_v = Some(v0);
    let channel = match kind {
        NodeKind::Ble => {
            node.advertising = Some(AdvertisingMode::Fixed);
            ChannelModel::lossless().with_ble_loss(per_frame_loss(session_failure, BLE_FRAMES_PER_SESSION))
        }
        NodeKind::Liot => ChannelModel::lossless(),
    };
    Some(ScenarioFile {
        schema_version: SCHEMA_VERSION.to_string(),
        name: Some(name.to_string()),
        duration_s: REFERENCE_DURATION_S,
        seed: 1,
        sample_interval_s: DEFAULT_SAMPLE_INTERVAL_S,
        illumination: IlluminationProfile::constant(lux),
        channel,
        timing: LinkTiming::default(),
        gateway: GatewayConfig::default(),
        environment: EnvironmentModel::default(),
        output: OutputConfig::default(),
        nodes: vec![node],
    })
}
