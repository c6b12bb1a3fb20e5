//! Frame-level models of the BLE and LIoT node/gateway exchanges.
//!
//! Frames carry a payload size and an airtime computed from a linear
//! per-link model (`overhead + bytes * per_byte`). The defaults are
//! calibrated so that a full BLE exchange takes 1.3 s and a full four-channel
//! LIoT upload takes 3.58 s.

mod ble;
mod liot;

pub use ble::{BleSession, BleStep};
pub use liot::{LiotSession, LiotStep};

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::node::{ChannelMask, NodeId, SensorChannel, SensorSample};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProtocolError {
    #[error("{kind} frames cannot travel on {link}")]
    LinkMismatch { kind: FrameTag, link: LinkClass },
    #[error("{kind} frames must go from {expected}")]
    WrongDirection { kind: FrameTag, expected: &'static str },
    #[error("channel {channel} is not valid for {link}")]
    BadChannel { channel: u8, link: LinkClass },
    #[error("link timing: {0}")]
    Timing(String),
}

/// Why an exchange did not complete.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    Timeout,
    NoGateway,
    ProtocolViolation,
    Brownout,
}

impl FailureReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureReason::Timeout => "timeout",
            FailureReason::NoGateway => "no_gateway",
            FailureReason::ProtocolViolation => "protocol_violation",
            FailureReason::Brownout => "brownout",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            FailureReason::Timeout,
            FailureReason::NoGateway,
            FailureReason::ProtocolViolation,
            FailureReason::Brownout,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
    }
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionOutcome {
    Pending,
    Delivered,
    Failed(FailureReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Node(NodeId),
    Gateway,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Node(id) => write!(f, "node-{}", id.0),
            Endpoint::Gateway => f.write_str("gateway"),
        }
    }
}

/// Physical link family; loss and airtime are configured per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkClass {
    BleAdv,
    BleConn,
    Ir,
    Vlc,
}

impl LinkClass {
    pub fn is_ble(self) -> bool {
        matches!(self, LinkClass::BleAdv | LinkClass::BleConn)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LinkClass::BleAdv => "ble_adv",
            LinkClass::BleConn => "ble_conn",
            LinkClass::Ir => "ir_uplink",
            LinkClass::Vlc => "vlc_downlink",
        }
    }
}

impl fmt::Display for LinkClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Concrete link a frame travels on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    /// Advertising channel, 37..=39.
    BleAdv(u8),
    /// Data channel, 0..=36.
    BleConn(u8),
    IrUplink,
    VlcDownlink,
}

impl Link {
    pub fn class(self) -> LinkClass {
        match self {
            Link::BleAdv(_) => LinkClass::BleAdv,
            Link::BleConn(_) => LinkClass::BleConn,
            Link::IrUplink => LinkClass::Ir,
            Link::VlcDownlink => LinkClass::Vlc,
        }
    }

    fn validate(self) -> Result<(), ProtocolError> {
        match self {
            Link::BleAdv(ch) if !(37..=39).contains(&ch) => Err(ProtocolError::BadChannel {
                channel: ch,
                link: LinkClass::BleAdv,
            }),
            Link::BleConn(ch) if ch > 36 => Err(ProtocolError::BadChannel {
                channel: ch,
                link: LinkClass::BleConn,
            }),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Link::BleAdv(ch) => write!(f, "ble_adv/{ch}"),
            Link::BleConn(ch) => write!(f, "ble_conn/{ch}"),
            Link::IrUplink => f.write_str("ir_uplink"),
            Link::VlcDownlink => f.write_str("vlc_downlink"),
        }
    }
}

/// Frame type without its contents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameTag {
    AdvEss,
    ConnReq,
    EssAttrRequest,
    EssAttrData,
    ConfigOrDisconnect,
    NodeIdLux,
    SensorRequest,
    SensorData,
    SleepSet,
    Ack,
}

impl FrameTag {
    pub fn link_class(self) -> LinkClass {
        use FrameTag::*;
        match self {
            AdvEss | ConnReq => LinkClass::BleAdv,
            EssAttrRequest | EssAttrData | ConfigOrDisconnect => LinkClass::BleConn,
            NodeIdLux | SensorData | Ack => LinkClass::Ir,
            SensorRequest | SleepSet => LinkClass::Vlc,
        }
    }

    pub fn from_node(self) -> bool {
        use FrameTag::*;
        matches!(self, AdvEss | EssAttrData | NodeIdLux | SensorData | Ack)
    }

    pub fn as_str(self) -> &'static str {
        use FrameTag::*;
        match self {
            AdvEss => "adv_ess",
            ConnReq => "conn_req",
            EssAttrRequest => "ess_attr_request",
            EssAttrData => "ess_attr_data",
            ConfigOrDisconnect => "config_or_disconnect",
            NodeIdLux => "node_id_lux",
            SensorRequest => "sensor_request",
            SensorData => "sensor_data",
            SleepSet => "sleep_set",
            Ack => "ack",
        }
    }
}

impl fmt::Display for FrameTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Frame contents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    AdvEss,
    ConnReq,
    EssAttrRequest,
    EssAttrData {
        sample: SensorSample,
        channels: ChannelMask,
    },
    /// Opaque configuration or disconnect message closing the connection.
    ConfigOrDisconnect,
    NodeIdLux {
        lux: f64,
    },
    SensorRequest {
        channels: ChannelMask,
    },
    SensorData {
        sample: SensorSample,
        channels: ChannelMask,
    },
    SleepSet {
        seconds: u32,
    },
    Ack,
}

/// ESS characteristic sizes in bytes.
fn ess_value_bytes(channel: SensorChannel) -> u32 {
    match channel {
        SensorChannel::Temperature | SensorChannel::Humidity => 2,
        SensorChannel::Pressure | SensorChannel::Gas => 4,
    }
}

pub const ADV_ESS_BYTES: u32 = 31;
pub const CONN_REQ_BYTES: u32 = 34;
pub const ESS_ATTR_REQUEST_BYTES: u32 = 3;
pub const ESS_ATTR_HEADER_BYTES: u32 = 4;
pub const CONFIG_OR_DISCONNECT_BYTES: u32 = 2;
pub const NODE_ID_LUX_BYTES: u32 = 6;
pub const SENSOR_REQUEST_BYTES: u32 = 1;
pub const SENSOR_DATA_HEADER_BYTES: u32 = 2;
/// Bytes per channel record in an optical sensor upload.
pub const SENSOR_RECORD_BYTES: u32 = 44;
pub const SLEEP_SET_BYTES: u32 = 4;
pub const ACK_BYTES: u32 = 1;

pub fn ess_attr_data_bytes(channels: ChannelMask) -> u32 {
    ESS_ATTR_HEADER_BYTES + channels.channels().map(ess_value_bytes).sum::<u32>()
}

pub fn sensor_data_bytes(channels: ChannelMask) -> u32 {
    SENSOR_DATA_HEADER_BYTES + SENSOR_RECORD_BYTES * channels.len()
}

impl FrameKind {
    pub fn tag(&self) -> FrameTag {
        match self {
            FrameKind::AdvEss => FrameTag::AdvEss,
            FrameKind::ConnReq => FrameTag::ConnReq,
            FrameKind::EssAttrRequest => FrameTag::EssAttrRequest,
            FrameKind::EssAttrData { .. } => FrameTag::EssAttrData,
            FrameKind::ConfigOrDisconnect => FrameTag::ConfigOrDisconnect,
            FrameKind::NodeIdLux { .. } => FrameTag::NodeIdLux,
            FrameKind::SensorRequest { .. } => FrameTag::SensorRequest,
            FrameKind::SensorData { .. } => FrameTag::SensorData,
            FrameKind::SleepSet { .. } => FrameTag::SleepSet,
            FrameKind::Ack => FrameTag::Ack,
        }
    }

    pub fn payload_bytes(&self) -> u32 {
        match self {
            FrameKind::AdvEss => ADV_ESS_BYTES,
            FrameKind::ConnReq => CONN_REQ_BYTES,
            FrameKind::EssAttrRequest => ESS_ATTR_REQUEST_BYTES,
            FrameKind::EssAttrData { channels, .. } => ess_attr_data_bytes(*channels),
            FrameKind::ConfigOrDisconnect => CONFIG_OR_DISCONNECT_BYTES,
            FrameKind::NodeIdLux { .. } => NODE_ID_LUX_BYTES,
            FrameKind::SensorRequest { .. } => SENSOR_REQUEST_BYTES,
            FrameKind::SensorData { channels, .. } => sensor_data_bytes(*channels),
            FrameKind::SleepSet { .. } => SLEEP_SET_BYTES,
            FrameKind::Ack => ACK_BYTES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkParams {
    pub overhead_s: f64,
    pub per_byte_s: f64,
}

impl LinkParams {
    pub fn airtime(&self, payload_bytes: u32) -> f64 {
        self.overhead_s + f64::from(payload_bytes) * self.per_byte_s
    }
}

/// Full BLE exchange time the default connection timing is calibrated to.
pub const BLE_EXCHANGE_S: f64 = 1.3;

/// Airtime constants and fixed processing delays of both protocols.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkTiming {
    pub ble_adv: LinkParams,
    pub ble_conn: LinkParams,
    pub ir_uplink: LinkParams,
    pub vlc_downlink: LinkParams,
    /// Gateway processing time before each frame it sends.
    pub gateway_turnaround_s: f64,
    /// LIoT illuminance read before the ID uplink.
    pub ldr_read_s: f64,
    /// Await steps time out after this multiple of their nominal duration.
    pub timeout_factor: f64,
}

impl Default for LinkTiming {
    fn default() -> Self {
        let gateway_turnaround_s = 0.008;
        let ble_byte_s = 8e-6;
        // The connected exchange (attribute request, attribute data and the
        // closing frame, two of them after a gateway turnaround) adds up to
        // BLE_EXCHANGE_S.
        let conn_bytes = ESS_ATTR_REQUEST_BYTES + ess_attr_data_bytes(ChannelMask::ALL) + CONFIG_OR_DISCONNECT_BYTES;
        let conn_overhead_s = (BLE_EXCHANGE_S - 2.0 * gateway_turnaround_s - f64::from(conn_bytes) * ble_byte_s) / 3.0;
        LinkTiming {
            ble_adv: LinkParams {
                overhead_s: 80e-6,
                per_byte_s: ble_byte_s,
            },
            ble_conn: LinkParams {
                overhead_s: conn_overhead_s,
                per_byte_s: ble_byte_s,
            },
            // 2 + 4 * 44 = 178 bytes -> 0.02 + 3.56 = 3.58 s
            ir_uplink: LinkParams {
                overhead_s: 0.02,
                per_byte_s: 0.02,
            },
            vlc_downlink: LinkParams {
                overhead_s: 0.01,
                per_byte_s: 0.005,
            },
            gateway_turnaround_s,
            // ID uplink + turnaround + request = 0.163 s; the rest of the
            // 0.428 s gateway-request stage is the illuminance read
            ldr_read_s: 0.265,
            timeout_factor: 2.0,
        }
    }
}

impl LinkTiming {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        let links = [
            ("ble_adv", self.ble_adv),
            ("ble_conn", self.ble_conn),
            ("ir_uplink", self.ir_uplink),
            ("vlc_downlink", self.vlc_downlink),
        ];
        for (name, p) in links {
            if !(p.overhead_s.is_finite() && p.overhead_s > 0.0) {
                return Err(ProtocolError::Timing(format!("{name}.overhead_s must be positive")));
            }
            if !(p.per_byte_s.is_finite() && p.per_byte_s >= 0.0) {
                return Err(ProtocolError::Timing(format!("{name}.per_byte_s must be non-negative")));
            }
        }
        if !(self.gateway_turnaround_s.is_finite() && self.gateway_turnaround_s >= 0.0) {
            return Err(ProtocolError::Timing(
                "gateway_turnaround_s must be non-negative".into(),
            ));
        }
        if !(self.ldr_read_s.is_finite() && self.ldr_read_s >= 0.0) {
            return Err(ProtocolError::Timing("ldr_read_s must be non-negative".into()));
        }
        if !(self.timeout_factor.is_finite() && self.timeout_factor >= 1.0) {
            return Err(ProtocolError::Timing("timeout_factor must be at least 1".into()));
        }
        Ok(())
    }

    pub fn params(&self, link: LinkClass) -> &LinkParams {
        match link {
            LinkClass::BleAdv => &self.ble_adv,
            LinkClass::BleConn => &self.ble_conn,
            LinkClass::Ir => &self.ir_uplink,
            LinkClass::Vlc => &self.vlc_downlink,
        }
    }

    pub fn airtime(&self, kind: &FrameKind) -> f64 {
        frame_airtime(kind.tag(), kind.payload_bytes(), self)
    }

    /// Gateway turnaround plus the connection request.
    pub fn ble_connect_s(&self) -> f64 {
        self.gateway_turnaround_s + frame_airtime(FrameTag::ConnReq, CONN_REQ_BYTES, self)
    }

    /// Connected part of the BLE exchange, from connection to close.
    pub fn ble_exchange_s(&self, channels: ChannelMask) -> f64 {
        2.0 * self.gateway_turnaround_s
            + frame_airtime(FrameTag::EssAttrRequest, ESS_ATTR_REQUEST_BYTES, self)
            + frame_airtime(FrameTag::EssAttrData, ess_attr_data_bytes(channels), self)
            + frame_airtime(FrameTag::ConfigOrDisconnect, CONFIG_OR_DISCONNECT_BYTES, self)
    }

    /// Illuminance read plus the ID uplink.
    pub fn liot_uplink_s(&self) -> f64 {
        self.ldr_read_s + frame_airtime(FrameTag::NodeIdLux, NODE_ID_LUX_BYTES, self)
    }

    /// Gateway turnaround plus the sensor request.
    pub fn liot_request_s(&self) -> f64 {
        self.gateway_turnaround_s + frame_airtime(FrameTag::SensorRequest, SENSOR_REQUEST_BYTES, self)
    }

    pub fn liot_upload_s(&self, channels: ChannelMask) -> f64 {
        frame_airtime(FrameTag::SensorData, sensor_data_bytes(channels), self)
    }

    /// Gateway turnaround plus the sleep-set frame.
    pub fn liot_sleep_set_s(&self) -> f64 {
        self.gateway_turnaround_s + frame_airtime(FrameTag::SleepSet, SLEEP_SET_BYTES, self)
    }

    pub fn liot_ack_s(&self) -> f64 {
        frame_airtime(FrameTag::Ack, ACK_BYTES, self)
    }
}

/// Airtime of a frame of the given type and payload size.
pub fn frame_airtime(kind: FrameTag, payload_bytes: u32, timing: &LinkTiming) -> f64 {
    timing.params(kind.link_class()).airtime(payload_bytes)
}

/// A protocol message between a node and the gateway.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub src: Endpoint,
    pub dst: Endpoint,
    /// Duty-cycle index of the sending node; ties frames to one exchange.
    pub session: u32,
    pub link: Link,
    pub kind: FrameKind,
    pub payload_bytes: u32,
    pub airtime_s: f64,
}

impl Frame {
    pub fn new(
        src: Endpoint,
        dst: Endpoint,
        session: u32,
        link: Link,
        kind: FrameKind,
        timing: &LinkTiming,
    ) -> Result<Self, ProtocolError> {
        link.validate()?;
        let tag = kind.tag();
        if link.class() != tag.link_class() {
            return Err(ProtocolError::LinkMismatch {
                kind: tag,
                link: link.class(),
            });
        }
        let direction_ok = match (src, dst) {
            (Endpoint::Node(_), Endpoint::Gateway) => tag.from_node(),
            (Endpoint::Gateway, Endpoint::Node(_)) => !tag.from_node(),
            _ => false,
        };
        if !direction_ok {
            return Err(ProtocolError::WrongDirection {
                kind: tag,
                expected: if tag.from_node() {
                    "node to gateway"
                } else {
                    "gateway to node"
                },
            });
        }
        Ok(Frame {
            src,
            dst,
            session,
            link,
            kind,
            payload_bytes: kind.payload_bytes(),
            airtime_s: timing.airtime(&kind),
        })
    }

    /// Builds a frame on the default link for its type. BLE channels are
    /// picked from the session number.
    pub fn between(node: NodeId, session: u32, kind: FrameKind, timing: &LinkTiming) -> Self {
        let tag = kind.tag();
        let link = match tag.link_class() {
            LinkClass::BleAdv => Link::BleAdv(37 + (session % 3) as u8),
            LinkClass::BleConn => Link::BleConn((session % 37) as u8),
            LinkClass::Ir => Link::IrUplink,
            LinkClass::Vlc => Link::VlcDownlink,
        };
        let (src, dst) = if tag.from_node() {
            (Endpoint::Node(node), Endpoint::Gateway)
        } else {
            (Endpoint::Gateway, Endpoint::Node(node))
        };
        Frame::new(src, dst, session, link, kind, timing).expect("default link matches frame type")
    }

    pub fn tag(&self) -> FrameTag {
        self.kind.tag()
    }

    /// The node end of the frame.
    pub fn node(&self) -> Option<NodeId> {
        match (self.src, self.dst) {
            (Endpoint::Node(id), _) | (_, Endpoint::Node(id)) => Some(id),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SensorSample {
        SensorSample {
            timestamp_s: 0.0,
            temperature_c: 21.0,
            humidity_rh: 40.0,
            pressure_hpa: 1013.0,
            gas_ohm: 5e4,
        }
    }

    #[test]
    fn full_upload_is_calibration_anchor() {
        let t = LinkTiming::default();
        let kind = FrameKind::SensorData {
            sample: sample(),
            channels: ChannelMask::ALL,
        };
        assert!((t.airtime(&kind) - 3.58).abs() < 1e-12);
        assert!((t.liot_upload_s(ChannelMask::ALL) - 3.58).abs() < 1e-12);
    }

    #[test]
    fn ble_exchange_is_calibration_anchor() {
        let t = LinkTiming::default();
        assert!((t.ble_exchange_s(ChannelMask::ALL) - BLE_EXCHANGE_S).abs() < 1e-12);
    }

    #[test]
    fn liot_stage_times_add_up() {
        let t = LinkTiming::default();
        assert!((t.liot_uplink_s() + t.liot_request_s() - 0.428).abs() < 1e-12);
        assert!((t.liot_sleep_set_s() + t.liot_ack_s() - 0.078).abs() < 1e-12);
    }

    #[test]
    fn airtime_is_linear_in_payload() {
        let t = LinkTiming::default();
        let zero = frame_airtime(FrameTag::SensorData, 0, &t);
        assert_eq!(zero, t.ir_uplink.overhead_s);
        let full = sensor_data_bytes(ChannelMask::ALL);
        let half = frame_airtime(FrameTag::SensorData, full / 2, &t);
        let whole = frame_airtime(FrameTag::SensorData, full, &t);
        assert!((half - (zero + (whole - zero) / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn subset_upload_is_shorter() {
        let t = LinkTiming::default();
        let temp = ChannelMask::from_channels(&[SensorChannel::Temperature]);
        let expected = 0.02 + f64::from(SENSOR_DATA_HEADER_BYTES + SENSOR_RECORD_BYTES) * 0.02;
        assert!((t.liot_upload_s(temp) - expected).abs() < 1e-12);
        assert!(t.liot_upload_s(temp) < t.liot_upload_s(ChannelMask::ALL));
    }

    #[test]
    fn link_kind_mismatch_rejected() {
        let t = LinkTiming::default();
        let n = Endpoint::Node(NodeId(1));
        let err = Frame::new(
            Endpoint::Gateway,
            n,
            0,
            Link::IrUplink,
            FrameKind::SleepSet { seconds: 1 },
            &t,
        );
        assert!(matches!(err, Err(ProtocolError::LinkMismatch { .. })));
        let err = Frame::new(
            n,
            Endpoint::Gateway,
            0,
            Link::BleConn(3),
            FrameKind::NodeIdLux { lux: 1.0 },
            &t,
        );
        assert!(matches!(err, Err(ProtocolError::LinkMismatch { .. })));
        let err = Frame::new(n, Endpoint::Gateway, 0, Link::BleAdv(12), FrameKind::AdvEss, &t);
        assert!(matches!(err, Err(ProtocolError::BadChannel { .. })));
        let err = Frame::new(Endpoint::Gateway, n, 0, Link::BleAdv(37), FrameKind::AdvEss, &t);
        assert!(matches!(err, Err(ProtocolError::WrongDirection { .. })));
    }

    #[test]
    fn default_links() {
        let t = LinkTiming::default();
        let f = Frame::between(NodeId(2), 4, FrameKind::AdvEss, &t);
        assert_eq!(f.link, Link::BleAdv(38));
        assert_eq!(f.dst, Endpoint::Gateway);
        let f = Frame::between(NodeId(2), 40, FrameKind::EssAttrRequest, &t);
        assert_eq!(f.link, Link::BleConn(3));
        assert_eq!(f.src, Endpoint::Gateway);
        assert_eq!(f.node(), Some(NodeId(2)));
        assert!(f.airtime_s > 0.0);
    }
}
