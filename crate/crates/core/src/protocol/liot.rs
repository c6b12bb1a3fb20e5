//! LIoT exchange: ID and illuminance over IR, sensor request over visible
//! light, sensor data over IR, sleep assignment over visible light, and the
//! node's acknowledgement.

use super::{sensor_data_bytes, FailureReason, Frame, FrameKind, FrameTag, LinkClass, LinkTiming, SessionOutcome};
use crate::energy::StageName;
use crate::node::{ChannelMask, NodeId, SleepPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiotStep {
    AwaitNodeIdLux,
    AwaitSensorRequest,
    AwaitSensorData,
    AwaitSleepSet,
    AwaitAck,
    Done,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiotSession {
    pub node: NodeId,
    pub session: u32,
    pub step: LiotStep,
    pub started_at: f64,
    pub deadline: f64,
    pub outcome: SessionOutcome,
    /// Channels the gateway asks for.
    pub channels: ChannelMask,
    /// Illuminance the node reported, once known.
    pub reported_lux: Option<f64>,
    /// Sleep the gateway assigned, once sent.
    pub assigned_sleep_s: Option<u32>,
    policy: SleepPolicy,
    timing: LinkTiming,
}

impl LiotSession {
    /// Opens a session when the node wakes and starts its illuminance read.
    pub fn new(
        node: NodeId,
        session: u32,
        started_at: f64,
        channels: ChannelMask,
        policy: SleepPolicy,
        timing: LinkTiming,
    ) -> Self {
        LiotSession {
            node,
            session,
            step: LiotStep::AwaitNodeIdLux,
            started_at,
            deadline: started_at + timing.timeout_factor * timing.liot_uplink_s(),
            outcome: SessionOutcome::Pending,
            channels,
            reported_lux: None,
            assigned_sleep_s: None,
            policy,
            timing,
        }
    }

    fn expected(&self) -> Option<FrameTag> {
        match self.step {
            LiotStep::AwaitNodeIdLux => Some(FrameTag::NodeIdLux),
            LiotStep::AwaitSensorRequest => Some(FrameTag::SensorRequest),
            LiotStep::AwaitSensorData => Some(FrameTag::SensorData),
            LiotStep::AwaitSleepSet => Some(FrameTag::SleepSet),
            LiotStep::AwaitAck => Some(FrameTag::Ack),
            LiotStep::Done => None,
        }
    }

    fn fail(&mut self, reason: FailureReason) {
        self.outcome = SessionOutcome::Failed(reason);
        self.step = LiotStep::Done;
    }

    /// Tears the session down from outside; no effect once resolved.
    pub fn abort(&mut self, reason: FailureReason) {
        if self.outcome == SessionOutcome::Pending {
            self.fail(reason);
        }
    }

    fn sensing_s(&self) -> f64 {
        self.policy
            .profile
            .stage(StageName::LiotSensorRead)
            .map_or(0.0, |s| s.duration_s)
    }

    /// Advances on a delivered frame, or on `None` when the deadline check
    /// fires. Returns the frame the gateway sends next, if any.
    pub fn step(&mut self, incoming: Option<&Frame>, now: f64) -> Option<Frame> {
        if self.outcome != SessionOutcome::Pending {
            return None;
        }
        if now > self.deadline || (incoming.is_none() && now >= self.deadline) {
            self.fail(FailureReason::Timeout);
            return None;
        }
        let frame = incoming?;
        let ours = frame.node() == Some(self.node) && frame.session == self.session;
        let optical = matches!(frame.link.class(), LinkClass::Ir | LinkClass::Vlc);
        if !ours || !optical || Some(frame.tag()) != self.expected() {
            self.fail(FailureReason::ProtocolViolation);
            return None;
        }
        let k = self.timing.timeout_factor;
        let (next, reply, wait) = match (self.step, frame.kind) {
            (LiotStep::AwaitNodeIdLux, FrameKind::NodeIdLux { lux }) => {
                self.reported_lux = Some(lux);
                (
                    LiotStep::AwaitSensorRequest,
                    Some(FrameKind::SensorRequest {
                        channels: self.channels,
                    }),
                    self.timing.liot_request_s(),
                )
            }
            (LiotStep::AwaitSensorRequest, FrameKind::SensorRequest { channels }) => {
                let upload = self.timing.params(LinkClass::Ir).airtime(sensor_data_bytes(channels));
                (LiotStep::AwaitSensorData, None, self.sensing_s() + upload)
            }
            (LiotStep::AwaitSensorData, FrameKind::SensorData { .. }) => {
                let seconds = self.policy.assigned_seconds(self.reported_lux.unwrap_or(0.0));
                self.assigned_sleep_s = Some(seconds);
                (
                    LiotStep::AwaitSleepSet,
                    Some(FrameKind::SleepSet { seconds }),
                    self.timing.liot_sleep_set_s(),
                )
            }
            (LiotStep::AwaitSleepSet, FrameKind::SleepSet { .. }) => {
                (LiotStep::AwaitAck, None, self.timing.liot_ack_s())
            }
            (LiotStep::AwaitAck, FrameKind::Ack) => {
                self.step = LiotStep::Done;
                self.outcome = SessionOutcome::Delivered;
                return None;
            }
            _ => return None,
        };
        self.step = next;
        self.deadline = now + k * wait;
        reply.map(|kind| Frame::between(self.node, self.session, kind, &self.timing))
    }
}
