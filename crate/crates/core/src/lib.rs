//! # ehsim-core
//!
//! Energy budget solver and deterministic discrete-event simulator for
//! batteryless sensor nodes powered by an indoor-light harvester and a
//! supercapacitor buffer.
//!
//! The crate is organised bottom-up:
//! - [`energy`]: stage energy accounting, sleep-time solver, harvester curve
//!   and supercapacitor model.
//! - [`node`]: the duty-cycle state machine for BLE and LIoT nodes, plus the
//!   synthetic environmental sensor.
//! - [`protocol`]: frame definitions, airtime model and the two exchange
//!   session state machines.
//! - [`sim`]: event queue, lossy channel, illumination profiles, gateway and
//!   the simulation kernel.
//! - [`metrics`]: cycle records, run summaries and CSV / JSON-lines export.
//! - [`scenario`]: the versioned scenario file schema and built-in presets.

pub mod energy;
pub mod metrics;
pub mod node;
pub mod protocol;
pub mod scenario;
pub mod sim;

pub use energy::{EnergyProfile, HarvesterCurve, SleepSolution, Stage, StageName, Supercap};
pub use metrics::{CycleRecord, Format, NodeSummary, Outcome, RunSummary};
pub use node::{NodeConfig, NodeId, NodeKind};
pub use scenario::{preset, ScenarioFile, ScenarioFileError};
pub use sim::{run, RunOutput, Scenario, ScenarioError};
