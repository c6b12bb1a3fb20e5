//! BLE exchange: advertise, connect, read the ESS attributes, close.
//!
//! The session observes every frame of one exchange that makes it across
//! the air, in both directions, and returns the gateway's next frame when
//! the protocol calls for one.

use super::{FailureReason, Frame, FrameKind, FrameTag, LinkTiming, SessionOutcome};
use crate::node::{ChannelMask, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BleStep {
    AwaitAdvertisement,
    AwaitConnReq,
    AwaitAttrRequest,
    AwaitAttrData,
    AwaitClose,
    Done,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BleSession {
    pub node: NodeId,
    pub session: u32,
    pub step: BleStep,
    pub started_at: f64,
    pub deadline: f64,
    pub outcome: SessionOutcome,
    channels: ChannelMask,
    timing: LinkTiming,
}

impl BleSession {
    /// Opens a session when the node starts advertising for at most
    /// `max_advertising_s`.
    pub fn new(
        node: NodeId,
        session: u32,
        started_at: f64,
        max_advertising_s: f64,
        channels: ChannelMask,
        timing: LinkTiming,
    ) -> Self {
        BleSession {
            node,
            session,
            step: BleStep::AwaitAdvertisement,
            started_at,
            deadline: started_at + timing.timeout_factor * max_advertising_s,
            outcome: SessionOutcome::Pending,
            channels,
            timing,
        }
    }

    fn expected(&self) -> Option<FrameTag> {
        match self.step {
            BleStep::AwaitAdvertisement => Some(FrameTag::AdvEss),
            BleStep::AwaitConnReq => Some(FrameTag::ConnReq),
            BleStep::AwaitAttrRequest => Some(FrameTag::EssAttrRequest),
            BleStep::AwaitAttrData => Some(FrameTag::EssAttrData),
            BleStep::AwaitClose => Some(FrameTag::ConfigOrDisconnect),
            BleStep::Done => None,
        }
    }

    fn fail(&mut self, reason: FailureReason) {
        self.outcome = SessionOutcome::Failed(reason);
        self.step = BleStep::Done;
    }

    /// Tears the session down from outside; no effect once resolved.
    pub fn abort(&mut self, reason: FailureReason) {
        if self.outcome == SessionOutcome::Pending {
            self.fail(reason);
        }
    }

    fn timeout_reason(&self) -> FailureReason {
        match self.step {
            BleStep::AwaitAdvertisement | BleStep::AwaitConnReq => FailureReason::NoGateway,
            _ => FailureReason::Timeout,
        }
    }

    /// Advances on a delivered frame, or on `None` when the deadline check
    /// fires. Returns the frame the gateway sends next, if any.
    pub fn step(&mut self, incoming: Option<&Frame>, now: f64) -> Option<Frame> {
        if self.outcome != SessionOutcome::Pending {
            return None;
        }
        if now > self.deadline || (incoming.is_none() && now >= self.deadline) {
            let reason = self.timeout_reason();
            self.fail(reason);
            return None;
        }
        let frame = incoming?;
        let ours = frame.node() == Some(self.node) && frame.session == self.session;
        if !ours || !frame.link.class().is_ble() || Some(frame.tag()) != self.expected() {
            self.fail(FailureReason::ProtocolViolation);
            return None;
        }
        let k = self.timing.timeout_factor;
        let t = &self.timing;
        let (next, reply, wait) = match self.step {
            BleStep::AwaitAdvertisement => (BleStep::AwaitConnReq, Some(FrameKind::ConnReq), t.ble_connect_s()),
            BleStep::AwaitConnReq => (
                BleStep::AwaitAttrRequest,
                Some(FrameKind::EssAttrRequest),
                t.gateway_turnaround_s + t.airtime(&FrameKind::EssAttrRequest),
            ),
            BleStep::AwaitAttrRequest => (
                BleStep::AwaitAttrData,
                None,
                t.params(super::LinkClass::BleConn)
                    .airtime(super::ess_attr_data_bytes(self.channels)),
            ),
            BleStep::AwaitAttrData => (
                BleStep::AwaitClose,
                Some(FrameKind::ConfigOrDisconnect),
                t.gateway_turnaround_s + t.airtime(&FrameKind::ConfigOrDisconnect),
            ),
            BleStep::AwaitClose => {
                self.step = BleStep::Done;
                self.outcome = SessionOutcome::Delivered;
                return None;
            }
            BleStep::Done => return None,
        };
        self.step = next;
        self.deadline = now + k * wait;
        reply.map(|kind| Frame::between(self.node, self.session, kind, &self.timing))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::node::SensorSample;

    const NODE: NodeId = NodeId(1);

    fn session() -> BleSession {
        BleSession::new(NODE, 5, 0.0, 4.0, ChannelMask::ALL, LinkTiming::default())
    }

    fn node_frame(kind: FrameKind) -> Frame {
        Frame::between(NODE, 5, kind, &LinkTiming::default())
    }

    fn attr_data() -> FrameKind {
        FrameKind::EssAttrData {
            sample: SensorSample {
                timestamp_s: 0.0,
                temperature_c: 21.0,
                humidity_rh: 40.0,
                pressure_hpa: 1013.0,
                gas_ohm: 5e4,
            },
            channels: ChannelMask::ALL,
        }
    }

    /// Plays the exchange with the gateway replying after its turnaround
    /// and the node replying immediately; returns the time the close frame
    /// lands.
    fn happy_path(s: &mut BleSession) -> f64 {
        let t = LinkTiming::default();
        let g = t.gateway_turnaround_s;
        let mut now = 4.0 - t.ble_connect_s();
        let conn = s.step(Some(&node_frame(FrameKind::AdvEss)), now).unwrap();
        assert_eq!(conn.tag(), FrameTag::ConnReq);
        now += g + conn.airtime_s;
        let exchange_start = now;
        let req = s.step(Some(&conn), now).unwrap();
        assert_eq!(req.tag(), FrameTag::EssAttrRequest);
        now += g + req.airtime_s;
        assert!(s.step(Some(&req), now).is_none());
        let data = node_frame(attr_data());
        now += data.airtime_s;
        let close = s.step(Some(&data), now).unwrap();
        now += g + close.airtime_s;
        assert!(s.step(Some(&close), now).is_none());
        assert!((exchange_start - 4.0).abs() < 1e-12);
        now - exchange_start
    }

    #[test]
    fn happy_path_delivers_in_nominal_time() {
        let mut s = session();
        let exchange = happy_path(&mut s);
        assert_eq!(s.outcome, SessionOutcome::Delivered);
        assert!((exchange - 1.3).abs() < 1e-9, "{exchange}");
    }

    #[test]
    fn silent_advertising_is_no_gateway() {
        let mut s = session();
        assert!(s.step(None, 1.0).is_none());
        assert_eq!(s.outcome, SessionOutcome::Pending);
        s.step(None, s.deadline);
        assert_eq!(s.outcome, SessionOutcome::Failed(FailureReason::NoGateway));
    }

    #[test]
    fn lost_attribute_data_times_out() {
        let mut s = session();
        let conn = s.step(Some(&node_frame(FrameKind::AdvEss)), 3.99).unwrap();
        let req = s.step(Some(&conn), 4.0).unwrap();
        s.step(Some(&req), 4.5);
        // the node's reply never arrives
        let deadline = s.deadline;
        s.step(None, deadline);
        assert_eq!(s.outcome, SessionOutcome::Failed(FailureReason::Timeout));
        assert!(deadline - 4.5 <= 2.0 * 1.3);
    }

    #[test]
    fn out_of_order_frame_is_violation() {
        let mut s = session();
        s.step(Some(&node_frame(attr_data())), 0.5);
        assert_eq!(s.outcome, SessionOutcome::Failed(FailureReason::ProtocolViolation));
        // torn down: nothing further happens
        assert!(s.step(Some(&node_frame(FrameKind::AdvEss)), 0.6).is_none());
    }

    #[test]
    fn optical_frame_rejected() {
        let mut s = session();
        s.step(Some(&node_frame(FrameKind::NodeIdLux { lux: 700.0 })), 0.5);
        assert_eq!(s.outcome, SessionOutcome::Failed(FailureReason::ProtocolViolation));
    }

    #[test]
    fn foreign_session_rejected() {
        let mut s = session();
        let other = Frame::between(NODE, 6, FrameKind::AdvEss, &LinkTiming::default());
        s.step(Some(&other), 0.5);
        assert_eq!(s.outcome, SessionOutcome::Failed(FailureReason::ProtocolViolation));
    }
}
