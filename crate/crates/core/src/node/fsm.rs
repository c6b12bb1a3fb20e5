//! Duty-cycle state machine.
//!
//! The node holds one timer at a time. The kernel arms it from
//! [`NodeEvent::TimerArmed`] and hands the token back to [`Node::advance`];
//! a token that no longer matches is stale and ignored. Energy is integrated
//! lazily: [`Node::update`] charges the buffer with the harvest and the
//! current phase's load since the previous update.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

use super::{
    read_sensors, schedule_next_cycle, AdvertisingMode, ChannelMask, EnvironmentModel, NodeConfig, NodeError, NodeId,
    NodeKind, ScheduleMode, SensorSample,
};
use crate::energy::{active_totals, supercap_step, StageName, Supercap};
use crate::protocol::{FailureReason, Frame, FrameKind, FrameTag, LinkTiming};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Sleeping,
    Sensing,
    Advertising,
    Exchanging,
    Uplinking,
    AwaitingRequest,
    Uploading,
    AwaitingSleepSet,
    Acknowledging,
}

impl Phase {
    pub fn is_active(self) -> bool {
        self != Phase::Sleeping
    }

    /// Whether `kind` may move from `self` to `to`. Any active phase may
    /// abort to sleep.
    pub fn can_move_to(self, to: Phase, kind: NodeKind) -> bool {
        use Phase::*;
        if self.is_active() && to == Sleeping {
            return true;
        }
        match kind {
            NodeKind::Ble => matches!(
                (self, to),
                (Sleeping, Sensing) | (Sensing, Advertising) | (Advertising, Exchanging)
            ),
            NodeKind::Liot => matches!(
                (self, to),
                (Sleeping, Uplinking)
                    | (Uplinking, AwaitingRequest)
                    | (AwaitingRequest, Sensing)
                    | (Sensing, Uploading)
                    | (Uploading, AwaitingSleepSet)
                    | (AwaitingSleepSet, Acknowledging)
            ),
        }
    }

    /// Profile stage whose current the node draws in this phase; `None`
    /// means the sleep current.
    pub fn stage(self, kind: NodeKind) -> Option<StageName> {
        use Phase::*;
        match (kind, self) {
            (_, Sleeping) => None,
            (NodeKind::Ble, Sensing) => Some(StageName::SensorRead),
            (NodeKind::Ble, Advertising) => Some(StageName::BleAdvertise),
            (NodeKind::Ble, _) => Some(StageName::BleDataExchange),
            (NodeKind::Liot, Uplinking | AwaitingRequest) => Some(StageName::GwRequest),
            (NodeKind::Liot, Sensing) => Some(StageName::LiotSensorRead),
            (NodeKind::Liot, Uploading) => Some(StageName::LiotDataUpload),
            (NodeKind::Liot, _) => Some(StageName::LiotSleepSet),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Sleeping => "sleeping",
            Phase::Sensing => "sensing",
            Phase::Advertising => "advertising",
            Phase::Exchanging => "exchanging",
            Phase::Uplinking => "uplinking",
            Phase::AwaitingRequest => "awaiting_request",
            Phase::Uploading => "uploading",
            Phase::AwaitingSleepSet => "awaiting_sleep_set",
            Phase::Acknowledging => "acknowledging",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeState {
    pub phase: Phase,
    pub phase_deadline: f64,
    pub supercap: Supercap,
    /// Last sleep armed; zero for back-to-back cycles.
    pub next_sleep_s: f64,
    pub depleted: bool,
    /// Index of the open cycle, also the session number of its exchange.
    pub cycle_index: u32,
}

/// Energy and timing of one duty cycle: the sleep that precedes an active
/// period plus that active period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleStats {
    pub node: NodeId,
    pub cycle_index: u32,
    pub start_s: f64,
    /// When the active period began, if it did.
    pub wake_s: Option<f64>,
    pub end_s: f64,
    pub v_start: f64,
    pub v_wake: Option<f64>,
    pub v_end: f64,
    pub consumed_j: f64,
    pub harvested_j: f64,
    /// Node-side failure; `None` if the node finished its sequence.
    pub failure: Option<FailureReason>,
    /// Cut short by the end of the run.
    pub truncated: bool,
}

/// Accumulated draw of one stage; `stage` is `None` for sleep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageUsage {
    pub stage: Option<StageName>,
    pub time_s: f64,
    pub energy_j: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeEvent {
    PhaseChanged {
        from: Phase,
        to: Phase,
        at: f64,
    },
    TimerArmed {
        at: f64,
        token: u64,
    },
    /// A BLE node began advertising for `window_s`.
    AdvertisingStarted {
        session: u32,
        window_s: f64,
    },
    /// A LIoT node began its illuminance read and ID uplink.
    UplinkStarted {
        session: u32,
    },
    /// The node finished sending a frame.
    Transmit(Frame),
    CycleClosed(CycleStats),
    Depleted,
    Recovered,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum TimerPurpose {
    PhaseEnd,
    Transmit(FrameKind),
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SleepReason {
    Scheduled,
    Backoff,
}

#[derive(Debug, Clone, Copy)]
struct OpenCycle {
    start_s: f64,
    wake_s: Option<f64>,
    v_start: f64,
    v_wake: Option<f64>,
    consumed_j: f64,
    harvested_j: f64,
}

impl OpenCycle {
    fn new(start_s: f64, v: f64) -> Self {
        OpenCycle {
            start_s,
            wake_s: None,
            v_start: v,
            v_wake: None,
            consumed_j: 0.0,
            harvested_j: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    cfg: NodeConfig,
    timing: LinkTiming,
    e_active_j: f64,
    state: NodeState,
    rng: ChaCha8Rng,
    timer: Option<(u64, TimerPurpose)>,
    next_token: u64,
    sleep_reason: SleepReason,
    expect: Option<FrameTag>,
    sample: Option<SensorSample>,
    requested: ChannelMask,
    assigned_sleep_s: f64,
    last_update: f64,
    lux: f64,
    harvest_mw: f64,
    cycle: OpenCycle,
    consumed_j: f64,
    harvested_j: f64,
    usage: Vec<StageUsage>,
}

impl Node {
    /// `seed` drives the advertising window draws.
    pub fn new(cfg: NodeConfig, timing: LinkTiming, seed: u64) -> Result<Self, NodeError> {
        cfg.validate()?;
        let cap = cfg.supercap;
        Ok(Node {
            e_active_j: active_totals(&cfg.profile).e_active_j,
            state: NodeState {
                phase: Phase::Sleeping,
                phase_deadline: 0.0,
                supercap: cap,
                next_sleep_s: 0.0,
                depleted: false,
                cycle_index: 0,
            },
            rng: ChaCha8Rng::seed_from_u64(seed),
            timer: None,
            next_token: 0,
            sleep_reason: SleepReason::Scheduled,
            expect: None,
            sample: None,
            requested: cfg.channel_mask(),
            assigned_sleep_s: 0.0,
            last_update: 0.0,
            lux: 0.0,
            harvest_mw: 0.0,
            cycle: OpenCycle::new(0.0, cap.voltage_v),
            consumed_j: 0.0,
            harvested_j: 0.0,
            usage: Vec::new(),
            cfg,
            timing,
        })
    }

    pub fn id(&self) -> NodeId {
        self.cfg.id
    }

    pub fn config(&self) -> &NodeConfig {
        &self.cfg
    }

    pub fn state(&self) -> &NodeState {
        &self.state
    }

    pub fn voltage(&self) -> f64 {
        self.state.supercap.voltage_v
    }

    /// Lifetime (consumed, harvested) energy in joules up to the last update.
    pub fn energy_totals(&self) -> (f64, f64) {
        (self.consumed_j, self.harvested_j)
    }

    /// Time and energy spent per stage so far, in first-use order.
    pub fn stage_usage(&self) -> &[StageUsage] {
        &self.usage
    }

    fn record_usage(&mut self, dt: f64, used_j: f64) {
        let stage = self.state.phase.stage(self.cfg.kind);
        match self.usage.iter_mut().find(|u| u.stage == stage) {
            Some(u) => {
                u.time_s += dt;
                u.energy_j += used_j;
            }
            None => self.usage.push(StageUsage {
                stage,
                time_s: dt,
                energy_j: used_j,
            }),
        }
    }

    /// Starts the node at `now` asleep, with the first sleep solved locally.
    pub fn boot(&mut self, now: f64, lux: f64) -> Vec<NodeEvent> {
        self.last_update = now;
        self.set_light(lux);
        self.cycle = OpenCycle::new(now, self.voltage());
        let mut out = Vec::new();
        self.sleep_after_active(now, ScheduleMode::LocalSolve, &mut out);
        out
    }

    fn set_light(&mut self, lux: f64) {
        self.lux = lux;
        self.harvest_mw = self.cfg.harvester.power_at(lux);
    }

    fn load_mw(&self) -> f64 {
        match self.state.phase.stage(self.cfg.kind) {
            None => self.cfg.profile.sleep_power_mw(),
            Some(stage) => self.cfg.profile.stage_power_mw(stage).unwrap_or(0.0),
        }
    }

    /// Integrates energy up to `now` under the old illuminance, then
    /// switches to `lux`. A brown-out during an active phase aborts the
    /// cycle.
    pub fn update(&mut self, now: f64, lux: f64) -> Vec<NodeEvent> {
        let mut out = Vec::new();
        let dt = now - self.last_update;
        if dt > 0.0 {
            let load = self.load_mw();
            let step = supercap_step(&self.state.supercap, self.harvest_mw - load, dt).expect("time step is positive");
            let used = load * dt / 1000.0;
            let gained = self.harvest_mw * dt / 1000.0;
            self.consumed_j += used;
            self.harvested_j += gained;
            self.cycle.consumed_j += used;
            self.cycle.harvested_j += gained;
            self.record_usage(dt, used);
            self.state.supercap = step.cap;
            self.last_update = now;
            if step.depleted {
                self.brownout(now, &mut out);
            }
        }
        self.set_light(lux);
        out
    }

    fn brownout(&mut self, now: f64, out: &mut Vec<NodeEvent>) {
        if !self.state.depleted {
            self.state.depleted = true;
            out.push(NodeEvent::Depleted);
        }
        if self.state.phase.is_active() {
            self.close_cycle(now, Some(FailureReason::Brownout), out);
            self.sleep(now, self.cfg.backoff_s, SleepReason::Backoff, out);
        }
    }

    fn enter(&mut self, to: Phase, deadline: f64, now: f64, out: &mut Vec<NodeEvent>) {
        let from = self.state.phase;
        if from != to {
            debug_assert!(from.can_move_to(to, self.cfg.kind), "{from} -> {to}");
            out.push(NodeEvent::PhaseChanged { from, to, at: now });
        }
        self.state.phase = to;
        self.state.phase_deadline = deadline;
    }

    fn arm(&mut self, at: f64, purpose: TimerPurpose, out: &mut Vec<NodeEvent>) {
        self.next_token += 1;
        self.timer = Some((self.next_token, purpose));
        out.push(NodeEvent::TimerArmed {
            at,
            token: self.next_token,
        });
    }

    fn sleep(&mut self, now: f64, duration: f64, reason: SleepReason, out: &mut Vec<NodeEvent>) {
        self.expect = None;
        self.sleep_reason = reason;
        self.state.next_sleep_s = duration;
        self.enter(Phase::Sleeping, now + duration, now, out);
        self.arm(now + duration, TimerPurpose::PhaseEnd, out);
    }

    fn sleep_after_active(&mut self, now: f64, mode: ScheduleMode, out: &mut Vec<NodeEvent>) {
        match schedule_next_cycle(&self.cfg, self.lux, mode) {
            Ok(s) => self.sleep(now, s, SleepReason::Scheduled, out),
            Err(_) => self.sleep(now, self.cfg.backoff_s, SleepReason::Backoff, out),
        }
    }

    fn close_cycle(&mut self, now: f64, failure: Option<FailureReason>, out: &mut Vec<NodeEvent>) {
        out.push(NodeEvent::CycleClosed(self.cycle_stats(now, failure, false)));
        self.state.cycle_index += 1;
        self.cycle = OpenCycle::new(now, self.voltage());
    }

    fn cycle_stats(&self, now: f64, failure: Option<FailureReason>, truncated: bool) -> CycleStats {
        CycleStats {
            node: self.cfg.id,
            cycle_index: self.state.cycle_index,
            start_s: self.cycle.start_s,
            wake_s: self.cycle.wake_s,
            end_s: now,
            v_start: self.cycle.v_start,
            v_wake: self.cycle.v_wake,
            v_end: self.voltage(),
            consumed_j: self.cycle.consumed_j,
            harvested_j: self.cycle.harvested_j,
            failure,
            truncated,
        }
    }

    fn finish_active(
        &mut self,
        now: f64,
        failure: Option<FailureReason>,
        mode: ScheduleMode,
        out: &mut Vec<NodeEvent>,
    ) {
        self.close_cycle(now, failure, out);
        self.sleep_after_active(now, mode, out);
    }

    fn session(&self) -> u32 {
        self.state.cycle_index
    }

    fn frame(&self, kind: FrameKind) -> Frame {
        Frame::between(self.cfg.id, self.session(), kind, &self.timing)
    }

    fn stage_s(&self, name: StageName) -> f64 {
        self.cfg.profile.stage(name).map_or(0.0, |s| s.duration_s)
    }

    fn advertising_window(&mut self) -> f64 {
        let max = self.cfg.max_advertising_s();
        match self.cfg.advertising {
            AdvertisingMode::Fixed => max,
            AdvertisingMode::Uniform => {
                let u: f64 = self.rng.random();
                max - u * (max - self.cfg.min_advertising_s)
            }
        }
    }

    fn wake(&mut self, now: f64, out: &mut Vec<NodeEvent>) {
        if self.state.depleted {
            if self.state.supercap.usable_energy_j() < self.e_active_j {
                self.sleep(now, self.cfg.backoff_s, SleepReason::Backoff, out);
                return;
            }
            self.state.depleted = false;
            out.push(NodeEvent::Recovered);
        }
        if self.sleep_reason == SleepReason::Backoff
            && schedule_next_cycle(&self.cfg, self.lux, ScheduleMode::LocalSolve).is_err()
        {
            self.sleep(now, self.cfg.backoff_s, SleepReason::Backoff, out);
            return;
        }
        self.cycle.wake_s = Some(now);
        self.cycle.v_wake = Some(self.voltage());
        self.sample = None;
        self.requested = self.cfg.channel_mask();
        match self.cfg.kind {
            NodeKind::Ble => {
                let end = now + self.stage_s(StageName::SensorRead);
                self.enter(Phase::Sensing, end, now, out);
                self.arm(end, TimerPurpose::PhaseEnd, out);
            }
            NodeKind::Liot => {
                let end = now + self.timing.liot_uplink_s();
                self.enter(Phase::Uplinking, end, now, out);
                out.push(NodeEvent::UplinkStarted {
                    session: self.session(),
                });
                self.arm(end, TimerPurpose::Transmit(FrameKind::NodeIdLux { lux: self.lux }), out);
            }
        }
    }

    fn wait(&mut self, phase: Phase, expect: FrameTag, nominal_s: f64, now: f64, out: &mut Vec<NodeEvent>) {
        let deadline = now + self.timing.timeout_factor * nominal_s;
        self.enter(phase, deadline, now, out);
        self.expect = Some(expect);
        self.arm(deadline, TimerPurpose::Timeout, out);
    }

    /// Handles the timer identified by `token` firing at `now`.
    pub fn advance(&mut self, token: u64, now: f64, env: &EnvironmentModel) -> Vec<NodeEvent> {
        let mut out = self.update(now, self.lux);
        let Some((armed, purpose)) = self.timer else {
            return out;
        };
        if armed != token {
            return out;
        }
        self.timer = None;
        let phase = self.state.phase;
        let k = self.timing.timeout_factor;
        match (phase, purpose) {
            (Phase::Sleeping, _) => self.wake(now, &mut out),
            (_, TimerPurpose::Timeout) => {
                let reason = if phase == Phase::Advertising {
                    FailureReason::NoGateway
                } else {
                    FailureReason::Timeout
                };
                self.finish_active(now, Some(reason), ScheduleMode::LocalSolve, &mut out);
            }
            (Phase::Sensing, _) => {
                self.sample = Some(read_sensors(&self.cfg, env, now));
                match self.cfg.kind {
                    NodeKind::Ble => {
                        let window = self.advertising_window();
                        self.enter(Phase::Advertising, now + window, now, &mut out);
                        out.push(NodeEvent::AdvertisingStarted {
                            session: self.session(),
                            window_s: window,
                        });
                        let tx = now + (window - self.timing.ble_connect_s()).max(0.0);
                        self.arm(tx, TimerPurpose::Transmit(FrameKind::AdvEss), &mut out);
                    }
                    NodeKind::Liot => {
                        let kind = FrameKind::SensorData {
                            sample: self.sample.expect("just read"),
                            channels: self.requested,
                        };
                        let end = now + self.timing.airtime(&kind);
                        self.enter(Phase::Uploading, end, now, &mut out);
                        self.arm(end, TimerPurpose::Transmit(kind), &mut out);
                    }
                }
            }
            (_, TimerPurpose::Transmit(kind)) => {
                out.push(NodeEvent::Transmit(self.frame(kind)));
                match phase {
                    Phase::Advertising => {
                        let deadline = now + k * self.timing.ble_connect_s();
                        self.state.phase_deadline = self.state.phase_deadline.max(deadline);
                        self.expect = Some(FrameTag::ConnReq);
                        self.arm(deadline, TimerPurpose::Timeout, &mut out);
                    }
                    Phase::Exchanging => {
                        self.expect = Some(FrameTag::ConfigOrDisconnect);
                        let deadline = self.state.phase_deadline.max(now);
                        self.arm(deadline, TimerPurpose::Timeout, &mut out);
                    }
                    Phase::Uplinking => {
                        let nominal = self.timing.liot_request_s();
                        self.wait(Phase::AwaitingRequest, FrameTag::SensorRequest, nominal, now, &mut out);
                    }
                    Phase::Uploading => {
                        let nominal = self.timing.liot_sleep_set_s();
                        self.wait(Phase::AwaitingSleepSet, FrameTag::SleepSet, nominal, now, &mut out);
                    }
                    Phase::Acknowledging => {
                        let mode = ScheduleMode::GatewayAssigned(self.assigned_sleep_s);
                        self.finish_active(now, None, mode, &mut out);
                    }
                    _ => unreachable!("no transmission is armed in {phase}"),
                }
            }
            (_, TimerPurpose::PhaseEnd) => unreachable!("no phase end is armed in {phase}"),
        }
        out
    }

    /// Handles a frame delivered to this node at `now`. Frames that do not
    /// fit the current step are ignored.
    pub fn on_frame(&mut self, frame: &Frame, now: f64) -> Vec<NodeEvent> {
        let mut out = self.update(now, self.lux);
        let for_us = frame.node() == Some(self.cfg.id) && !frame.tag().from_node();
        if !for_us || frame.session != self.session() || self.expect != Some(frame.tag()) {
            return out;
        }
        self.expect = None;
        match frame.kind {
            FrameKind::ConnReq => {
                let nominal = self.timing.ble_exchange_s(self.cfg.channel_mask());
                self.wait(Phase::Exchanging, FrameTag::EssAttrRequest, nominal, now, &mut out);
            }
            FrameKind::EssAttrRequest => {
                let kind = FrameKind::EssAttrData {
                    sample: self.sample.expect("sensors read before advertising"),
                    channels: self.cfg.channel_mask(),
                };
                let at = now + self.timing.airtime(&kind);
                self.arm(at, TimerPurpose::Transmit(kind), &mut out);
            }
            FrameKind::ConfigOrDisconnect => {
                self.finish_active(now, None, ScheduleMode::LocalSolve, &mut out);
            }
            FrameKind::SensorRequest { channels } => {
                self.requested = channels.intersect(self.cfg.channel_mask());
                let end = now + self.stage_s(StageName::LiotSensorRead);
                self.enter(Phase::Sensing, end, now, &mut out);
                self.arm(end, TimerPurpose::PhaseEnd, &mut out);
            }
            FrameKind::SleepSet { seconds } => {
                self.assigned_sleep_s = f64::from(seconds);
                let end = now + self.timing.airtime(&FrameKind::Ack);
                self.enter(Phase::Acknowledging, end, now, &mut out);
                self.arm(end, TimerPurpose::Transmit(FrameKind::Ack), &mut out);
            }
            _ => {}
        }
        out
    }

    /// Brings the node up to `now` and reports the open cycle, if it has
    /// any length, as truncated.
    pub fn finish(&mut self, now: f64) -> (Vec<NodeEvent>, Option<CycleStats>) {
        let out = self.update(now, self.lux);
        let open = (now > self.cycle.start_s).then(|| self.cycle_stats(now, None, true));
        (out, open)
    }
}
