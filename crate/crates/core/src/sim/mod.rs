//! Discrete-event kernel: virtual clock, event queue, gateway, lossy
//! channel and illumination, driving any number of nodes.
//!
//! The gateway side of every exchange is a protocol session that sees each
//! frame that makes it across the air, in both directions. A duty cycle's
//! outcome is settled once both the node has closed the cycle and the
//! gateway's session has resolved.

mod channel;
mod illumination;
mod queue;

pub use channel::{deliver, per_frame_loss, ChannelError, ChannelModel, Delivery, LinkLoss};
pub use illumination::{IlluminationError, IlluminationProfile, LuxStep};
pub use queue::{Event, EventQueue};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use crate::metrics::{
    export_rows, summarize, CycleRecord, ExportError, Format, FrameRecord, Outcome, RunInfo, RunSummary, StageRecord,
    VoltageSample,
};
use crate::node::{
    ChannelMask, CycleStats, EnvironmentModel, Node, NodeConfig, NodeError, NodeEvent, NodeId, NodeKind, SensorChannel,
    SleepPolicy,
};
use crate::protocol::{
    BleSession, Endpoint, FailureReason, Frame, LinkTiming, LiotSession, ProtocolError, SessionOutcome,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    /// Channels the LIoT gateway asks for in each sensor request.
    pub request_channels: Vec<SensorChannel>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            request_channels: SensorChannel::ALL.to_vec(),
        }
    }
}

/// A fully resolved simulation setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub duration_s: f64,
    pub seed: u64,
    pub sample_interval_s: f64,
    pub illumination: IlluminationProfile,
    pub channel: ChannelModel,
    pub timing: LinkTiming,
    pub gateway: GatewayConfig,
    /// Sensor signal shapes; the noise seed is derived from the run seed.
    pub environment: EnvironmentModel,
    pub nodes: Vec<NodeConfig>,
}

pub const DEFAULT_SAMPLE_INTERVAL_S: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("duration_s must be positive and finite (got {0})")]
    Duration(f64),
    #[error("sample_interval_s must be positive and finite (got {0})")]
    SampleInterval(f64),
    #[error("scenario has no nodes")]
    NoNodes,
    #[error("node id {0} is used more than once")]
    DuplicateNode(NodeId),
    #[error("node {id}: {source}")]
    Node {
        id: NodeId,
        #[source]
        source: NodeError,
    },
    #[error("gateway.request_channels must not be empty")]
    GatewayChannels,
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Illumination(#[from] IlluminationError),
    #[error(transparent)]
    Timing(#[from] ProtocolError),
}

impl Scenario {
    /// One node under constant light, lossless, with default timing.
    pub fn single(node: NodeConfig, lux: f64, duration_s: f64) -> Self {
        Scenario {
            duration_s,
            seed: 1,
            sample_interval_s: DEFAULT_SAMPLE_INTERVAL_S,
            illumination: IlluminationProfile::constant(lux),
            channel: ChannelModel::lossless(),
            timing: LinkTiming::default(),
            gateway: GatewayConfig::default(),
            environment: EnvironmentModel::default(),
            nodes: vec![node],
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(ScenarioError::Duration(self.duration_s));
        }
        if !(self.sample_interval_s.is_finite() && self.sample_interval_s > 0.0) {
            return Err(ScenarioError::SampleInterval(self.sample_interval_s));
        }
        if self.nodes.is_empty() {
            return Err(ScenarioError::NoNodes);
        }
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            if !seen.insert(n.id) {
                return Err(ScenarioError::DuplicateNode(n.id));
            }
            n.validate()
                .map_err(|source| ScenarioError::Node { id: n.id, source })?;
        }
        if self.gateway.request_channels.is_empty() {
            return Err(ScenarioError::GatewayChannels);
        }
        self.channel.validate()?;
        self.illumination.validate()?;
        self.timing.validate()?;
        Ok(())
    }

    /// SHA-256 of everything but the seed, hex encoded.
    pub fn config_hash(&self) -> String {
        let mut unseeded = self.clone();
        unseeded.seed = 0;
        let bytes = serde_json::to_vec(&unseeded).expect("scenario serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// Illuminance at `t_s`, which must lie within the run.
    pub fn lux_at(&self, t_s: f64) -> Result<f64, IlluminationError> {
        self.illumination
            .lux_at(t_s, self.duration_s, derive_seed(self.seed, STREAM_LIGHT))
    }
}

const STREAM_CHANNEL: u64 = 0;
const STREAM_LIGHT: u64 = u64::MAX;
const STREAM_ENV: u64 = u64::MAX - 1;

/// Independent seed for one random stream of a run (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Lifetime energy flows of one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeEnergy {
    pub node_id: NodeId,
    pub consumed_j: f64,
    pub harvested_j: f64,
    pub depletions: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub records: Vec<CycleRecord>,
    pub voltage: Vec<VoltageSample>,
    pub frames: Vec<FrameRecord>,
    pub stages: Vec<StageRecord>,
    pub energy: Vec<NodeEnergy>,
    pub events_processed: u64,
}

pub const SUMMARY_FILE: &str = "summary";
pub const CYCLES_FILE: &str = "cycles";
pub const VOLTAGE_FILE: &str = "voltage";
pub const FRAMES_FILE: &str = "frames";
pub const STAGES_FILE: &str = "stages";

impl RunOutput {
    /// Writes the summary and all traces into `dir`, creating it if
    /// needed. Returns the files written.
    pub fn write(&self, dir: &Path, format: Format) -> Result<Vec<PathBuf>, ExportError> {
        std::fs::create_dir_all(dir).map_err(|source| ExportError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = |stem: &str| dir.join(format!("{stem}.{}", format.extension()));
        let files = [SUMMARY_FILE, CYCLES_FILE, VOLTAGE_FILE, FRAMES_FILE, STAGES_FILE].map(path);
        export_rows(&self.summary.nodes, format, &files[0])?;
        export_rows(&self.records, format, &files[1])?;
        export_rows(&self.voltage, format, &files[2])?;
        export_rows(&self.frames, format, &files[3])?;
        export_rows(&self.stages, format, &files[4])?;
        Ok(files.to_vec())
    }

    pub fn records_for(&self, id: NodeId) -> impl Iterator<Item = &CycleRecord> {
        self.records.iter().filter(move |r| r.node_id == id)
    }
}

#[derive(Debug, Clone)]
enum Ev {
    Timer { node: usize, token: u64 },
    Deliver(Frame),
    Lost(Frame),
    SessionCheck { node: usize, session: u32 },
    Sample,
    End,
}

#[derive(Debug, Clone)]
enum Protocol {
    Ble(BleSession),
    Liot(LiotSession),
}

#[derive(Debug, Clone)]
struct GatewaySession {
    protocol: Protocol,
    resolved_at: Option<f64>,
}

impl GatewaySession {
    fn step(&mut self, frame: Option<&Frame>, now: f64) -> Option<Frame> {
        match &mut self.protocol {
            Protocol::Ble(s) => s.step(frame, now),
            Protocol::Liot(s) => s.step(frame, now),
        }
    }

    fn outcome(&self) -> SessionOutcome {
        match &self.protocol {
            Protocol::Ble(s) => s.outcome,
            Protocol::Liot(s) => s.outcome,
        }
    }

    fn deadline(&self) -> f64 {
        match &self.protocol {
            Protocol::Ble(s) => s.deadline,
            Protocol::Liot(s) => s.deadline,
        }
    }

    fn abort(&mut self, reason: FailureReason) {
        match &mut self.protocol {
            Protocol::Ble(s) => s.abort(reason),
            Protocol::Liot(s) => s.abort(reason),
        }
    }

    fn is_optical(&self) -> bool {
        matches!(self.protocol, Protocol::Liot(_))
    }
}

type Key = (usize, u32);

struct Kernel<'a> {
    scenario: &'a Scenario,
    env: EnvironmentModel,
    light_seed: u64,
    rng: ChaCha8Rng,
    queue: EventQueue<Ev>,
    clock: f64,
    nodes: Vec<Node>,
    index: BTreeMap<NodeId, usize>,
    sessions: BTreeMap<Key, GatewaySession>,
    /// Exchange holding the gateway's single optical transceiver.
    optical_owner: Option<Key>,
    closed: BTreeMap<Key, CycleStats>,
    depletions: Vec<u64>,
    request_mask: ChannelMask,
    records: Vec<CycleRecord>,
    voltage: Vec<VoltageSample>,
    frames: Vec<FrameRecord>,
    events: u64,
}

/// Validates and runs `scenario` to completion.
pub fn run(scenario: &Scenario) -> Result<RunOutput, ScenarioError> {
    scenario.validate()?;
    let mut nodes = Vec::with_capacity(scenario.nodes.len());
    for cfg in &scenario.nodes {
        let seed = derive_seed(scenario.seed, 1 + u64::from(cfg.id.0));
        nodes.push(
            Node::new(cfg.clone(), scenario.timing, seed)
                .map_err(|source| ScenarioError::Node { id: cfg.id, source })?,
        );
    }
    let index = nodes.iter().enumerate().map(|(i, n)| (n.id(), i)).collect();
    let kernel = Kernel {
        scenario,
        env: scenario
            .environment
            .clone()
            .with_seed(derive_seed(scenario.seed, STREAM_ENV)),
        light_seed: derive_seed(scenario.seed, STREAM_LIGHT),
        rng: ChaCha8Rng::seed_from_u64(derive_seed(scenario.seed, STREAM_CHANNEL)),
        queue: EventQueue::new(),
        clock: 0.0,
        depletions: vec![0; nodes.len()],
        nodes,
        index,
        sessions: BTreeMap::new(),
        optical_owner: None,
        closed: BTreeMap::new(),
        request_mask: ChannelMask::from_channels(&scenario.gateway.request_channels),
        records: Vec::new(),
        voltage: Vec::new(),
        frames: Vec::new(),
        events: 0,
    };
    Ok(kernel.run())
}

impl Kernel<'_> {
    fn lux(&self, t: f64) -> f64 {
        self.scenario.illumination.eval(t, self.light_seed)
    }

    fn run(mut self) -> RunOutput {
        let duration = self.scenario.duration_s;
        let lux0 = self.lux(0.0);
        for i in 0..self.nodes.len() {
            let ev = self.nodes[i].boot(0.0, lux0);
            self.handle_node_events(i, ev);
        }
        self.queue.push(0.0, Ev::Sample);
        let mut sample_k: u64 = 0;
        while let Some(event) = self.queue.pop() {
            if event.time > duration {
                break;
            }
            debug_assert!(
                event.time >= self.clock,
                "event at {} before clock {}",
                event.time,
                self.clock
            );
            self.clock = event.time;
            self.events += 1;
            let now = event.time;
            match event.kind {
                Ev::Timer { node, token } => {
                    let lux = self.lux(now);
                    let mut ev = self.nodes[node].update(now, lux);
                    ev.extend(self.nodes[node].advance(token, now, &self.env));
                    self.handle_node_events(node, ev);
                }
                Ev::Deliver(frame) => {
                    self.log_frame(&frame, now, true);
                    match frame.dst {
                        Endpoint::Gateway => self.frame_to_gateway(&frame, now),
                        Endpoint::Node(_) => self.frame_to_node(&frame, now),
                    }
                }
                Ev::Lost(frame) => self.log_frame(&frame, now, false),
                Ev::SessionCheck { node, session } => {
                    let key = (node, session);
                    if let Some(s) = self.sessions.get_mut(&key) {
                        s.step(None, now);
                        self.after_session(key, now);
                    }
                }
                Ev::Sample => {
                    let lux = self.lux(now);
                    for i in 0..self.nodes.len() {
                        let ev = self.nodes[i].update(now, lux);
                        self.handle_node_events(i, ev);
                        self.voltage.push(VoltageSample {
                            t_s: now,
                            node_id: self.nodes[i].id(),
                            voltage_v: self.nodes[i].voltage(),
                        });
                    }
                    sample_k += 1;
                    let next = sample_k as f64 * self.scenario.sample_interval_s;
                    if next <= duration {
                        self.queue.push(next, Ev::Sample);
                    } else {
                        self.queue.push(duration, Ev::End);
                    }
                }
                Ev::End => break,
            }
        }
        self.finish(duration)
    }

    fn finish(mut self, end: f64) -> RunOutput {
        self.clock = end;
        for i in 0..self.nodes.len() {
            let (ev, open) = self.nodes[i].finish(end);
            self.handle_node_events(i, ev);
            if let Some(stats) = open {
                self.records.push(record(&stats, Outcome::Truncated, None));
            }
        }
        for (key, stats) in std::mem::take(&mut self.closed) {
            let outcome = match (self.sessions.get(&key).map(|s| s.outcome()), stats.failure) {
                (Some(SessionOutcome::Delivered), _) => Outcome::Delivered,
                (Some(SessionOutcome::Failed(r)), f) => Outcome::Failed(f.unwrap_or(r)),
                (_, Some(f)) => Outcome::Failed(f),
                (_, None) => Outcome::Truncated,
            };
            let at = self.sessions.get(&key).and_then(|s| s.resolved_at);
            self.records.push(record(&stats, outcome, at));
        }
        self.records.sort_by_key(|r| (r.node_id, r.cycle_index));

        let info = RunInfo {
            duration_s: self.scenario.duration_s,
            seed: self.scenario.seed,
            config_hash: self.scenario.config_hash(),
        };
        let summary = summarize(&self.records, &self.voltage, &info);
        let mut stages = Vec::new();
        let mut energy = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            for u in node.stage_usage() {
                stages.push(StageRecord {
                    node_id: node.id(),
                    stage: u.stage.map_or("sleep", |s| s.as_str()).to_string(),
                    time_s: u.time_s,
                    energy_j: u.energy_j,
                    mean_power_mw: if u.time_s > 0.0 {
                        u.energy_j / u.time_s * 1000.0
                    } else {
                        0.0
                    },
                });
            }
            let (consumed_j, harvested_j) = node.energy_totals();
            energy.push(NodeEnergy {
                node_id: node.id(),
                consumed_j,
                harvested_j,
                depletions: self.depletions[i],
            });
        }
        RunOutput {
            summary,
            records: self.records,
            voltage: self.voltage,
            frames: self.frames,
            stages,
            energy,
            events_processed: self.events,
        }
    }

    fn log_frame(&mut self, frame: &Frame, now: f64, delivered: bool) {
        self.frames.push(FrameRecord {
            t_s: now,
            node_id: frame.node().unwrap_or_default(),
            session: frame.session,
            uplink: frame.dst == Endpoint::Gateway,
            link: frame.link.to_string(),
            kind: frame.tag(),
            payload_bytes: frame.payload_bytes,
            airtime_s: frame.airtime_s,
            delivered,
        });
    }

    /// Puts a frame on the air. Node frames are emitted once fully sent;
    /// gateway frames start after the turnaround.
    fn send(&mut self, frame: Frame, now: f64) {
        let arrival = match frame.src {
            Endpoint::Gateway => now + self.scenario.timing.gateway_turnaround_s + frame.airtime_s,
            Endpoint::Node(_) => now,
        };
        let ev = match deliver(&frame, &self.scenario.channel, &mut self.rng) {
            Delivery::Delivered => Ev::Deliver(frame),
            Delivery::Lost => Ev::Lost(frame),
        };
        self.queue.push(arrival, ev);
    }

    fn key_of(&self, frame: &Frame) -> Option<Key> {
        let id = frame.node()?;
        Some((*self.index.get(&id)?, frame.session))
    }

    fn frame_to_gateway(&mut self, frame: &Frame, now: f64) {
        let Some(key) = self.key_of(frame) else { return };
        let Some(session) = self.sessions.get(&key) else { return };
        if session.is_optical() && session.outcome() == SessionOutcome::Pending {
            let busy = self
                .optical_owner
                .filter(|o| *o != key)
                .and_then(|o| self.sessions.get(&o))
                .is_some_and(|s| s.outcome() == SessionOutcome::Pending);
            if busy {
                if let Some(s) = self.sessions.get_mut(&key) {
                    s.abort(FailureReason::NoGateway);
                }
                self.after_session(key, now);
                return;
            }
            self.optical_owner = Some(key);
        }
        self.step_session(key, frame, now);
    }

    fn frame_to_node(&mut self, frame: &Frame, now: f64) {
        let Some(key) = self.key_of(frame) else { return };
        if self.sessions.contains_key(&key) {
            self.step_session(key, frame, now);
        }
        let lux = self.lux(now);
        let mut ev = self.nodes[key.0].update(now, lux);
        ev.extend(self.nodes[key.0].on_frame(frame, now));
        self.handle_node_events(key.0, ev);
    }

    fn step_session(&mut self, key: Key, frame: &Frame, now: f64) {
        let Some(s) = self.sessions.get_mut(&key) else { return };
        let reply = s.step(Some(frame), now);
        if let Some(reply) = reply {
            self.send(reply, now);
        }
        self.after_session(key, now);
    }

    fn open_session(&mut self, key: Key, protocol: Protocol, now: f64) {
        self.sessions.insert(
            key,
            GatewaySession {
                protocol,
                resolved_at: None,
            },
        );
        self.after_session(key, now);
    }

    fn after_session(&mut self, key: Key, now: f64) {
        let Some(s) = self.sessions.get_mut(&key) else { return };
        if s.outcome() == SessionOutcome::Pending {
            let deadline = s.deadline();
            self.queue.push(
                deadline,
                Ev::SessionCheck {
                    node: key.0,
                    session: key.1,
                },
            );
            return;
        }
        if s.resolved_at.is_none() {
            s.resolved_at = Some(now);
        }
        if self.optical_owner == Some(key) {
            self.optical_owner = None;
        }
        self.try_settle(key);
    }

    /// Turns a closed cycle into a record once its exchange has resolved.
    fn try_settle(&mut self, key: Key) {
        let Some(stats) = self.closed.get(&key).copied() else {
            return;
        };
        let (outcome, at) = match self.sessions.get(&key) {
            None => (Outcome::Failed(stats.failure.unwrap_or(FailureReason::Timeout)), None),
            Some(s) => match s.outcome() {
                SessionOutcome::Pending => return,
                SessionOutcome::Delivered => (Outcome::Delivered, s.resolved_at),
                SessionOutcome::Failed(r) => (Outcome::Failed(stats.failure.unwrap_or(r)), None),
            },
        };
        self.closed.remove(&key);
        self.sessions.remove(&key);
        self.records.push(record(&stats, outcome, at));
    }

    fn handle_node_events(&mut self, i: usize, events: Vec<NodeEvent>) {
        let now = self.clock;
        for e in events {
            match e {
                NodeEvent::TimerArmed { at, token } => self.queue.push(at, Ev::Timer { node: i, token }),
                NodeEvent::AdvertisingStarted { session, .. } => {
                    // the gateway only knows the longest window a node may pick
                    let cfg = self.nodes[i].config();
                    let s = BleSession::new(
                        cfg.id,
                        session,
                        now,
                        cfg.max_advertising_s(),
                        cfg.channel_mask(),
                        self.scenario.timing,
                    );
                    self.open_session((i, session), Protocol::Ble(s), now);
                }
                NodeEvent::UplinkStarted { session } => {
                    let cfg = self.nodes[i].config();
                    let s = LiotSession::new(
                        cfg.id,
                        session,
                        now,
                        self.request_mask,
                        SleepPolicy::from_config(cfg),
                        self.scenario.timing,
                    );
                    self.open_session((i, session), Protocol::Liot(s), now);
                }
                NodeEvent::Transmit(frame) => self.send(frame, now),
                NodeEvent::CycleClosed(stats) => {
                    let key = (i, stats.cycle_index);
                    self.closed.insert(key, stats);
                    self.try_settle(key);
                }
                NodeEvent::Depleted => self.depletions[i] += 1,
                NodeEvent::PhaseChanged { .. } | NodeEvent::Recovered => {}
            }
        }
    }
}

fn record(stats: &CycleStats, outcome: Outcome, delivered_at_s: Option<f64>) -> CycleRecord {
    CycleRecord {
        node_id: stats.node,
        cycle_index: stats.cycle_index,
        start_s: stats.start_s,
        wake_s: stats.wake_s,
        end_s: stats.end_s,
        outcome,
        scap_v_start: stats.v_start,
        scap_v_wake: stats.v_wake,
        scap_v_end: stats.v_end,
        energy_consumed_j: stats.consumed_j,
        energy_harvested_j: stats.harvested_j,
        delivered_at_s,
    }
}

/// Nodes of the given kind in a scenario.
pub fn count_kind(scenario: &Scenario, kind: NodeKind) -> usize {
    scenario.nodes.iter().filter(|n| n.kind == kind).count()
}
