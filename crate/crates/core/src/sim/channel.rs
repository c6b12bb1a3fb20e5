//! Independent per-frame loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::protocol::{Frame, FrameTag, LinkClass};

/// Loss probability of each link family.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkLoss {
    #[serde(default)]
    pub ble_adv: f64,
    #[serde(default)]
    pub ble_conn: f64,
    #[serde(default)]
    pub ir: f64,
    #[serde(default)]
    pub vlc: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelModel {
    #[serde(default)]
    pub loss: LinkLoss,
    /// Frame types that are always lost, for fault injection.
    #[serde(default)]
    pub drop_kinds: Vec<FrameTag>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("loss probability for {link} must be in [0, 1] (got {value})")]
pub struct ChannelError {
    pub link: LinkClass,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    Delivered,
    Lost,
}

impl ChannelModel {
    pub fn lossless() -> Self {
        Self::default()
    }

    /// The same loss on every link.
    pub fn uniform(p: f64) -> Self {
        Self::default().with_ble_loss(p).with_optical_loss(p)
    }

    pub fn with_ble_loss(mut self, p: f64) -> Self {
        self.loss.ble_adv = p;
        self.loss.ble_conn = p;
        self
    }

    pub fn with_optical_loss(mut self, p: f64) -> Self {
        self.loss.ir = p;
        self.loss.vlc = p;
        self
    }

    pub fn loss_for(&self, link: LinkClass) -> f64 {
        match link {
            LinkClass::BleAdv => self.loss.ble_adv,
            LinkClass::BleConn => self.loss.ble_conn,
            LinkClass::Ir => self.loss.ir,
            LinkClass::Vlc => self.loss.vlc,
        }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        for link in [LinkClass::BleAdv, LinkClass::BleConn, LinkClass::Ir, LinkClass::Vlc] {
            let value = self.loss_for(link);
            if !(0.0..=1.0).contains(&value) {
                return Err(ChannelError { link, value });
            }
        }
        Ok(())
    }
}

/// Decides the fate of one frame. One uniform draw is consumed per frame
/// whatever the loss, so raising a loss probability only ever turns
/// deliveries into losses for the same draw.
pub fn deliver<R: Rng + ?Sized>(frame: &Frame, channel: &ChannelModel, rng: &mut R) -> Delivery {
    let u: f64 = rng.random();
    if channel.drop_kinds.contains(&frame.tag()) || u < channel.loss_for(frame.link.class()) {
        Delivery::Lost
    } else {
        Delivery::Delivered
    }
}

/// Per-frame loss that makes an exchange of `frames` frames fail with
/// probability `session_failure`.
pub fn per_frame_loss(session_failure: f64, frames: u32) -> f64 {
    1.0 - (1.0 - session_failure).powf(1.0 / f64::from(frames))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::node::NodeId;
    use crate::protocol::{FrameKind, LinkTiming};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn adv() -> Frame {
        Frame::between(NodeId(1), 0, FrameKind::AdvEss, &LinkTiming::default())
    }

    fn loss_rate(channel: &ChannelModel, trials: u32, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lost = (0..trials)
            .filter(|_| deliver(&adv(), channel, &mut rng) == Delivery::Lost)
            .count();
        lost as f64 / f64::from(trials)
    }

    #[test]
    fn lossless_always_delivers() {
        assert_eq!(loss_rate(&ChannelModel::lossless(), 10_000, 3), 0.0);
    }

    #[test]
    fn total_loss_always_loses() {
        assert_eq!(loss_rate(&ChannelModel::uniform(1.0), 10_000, 3), 1.0);
    }

    #[test]
    fn empirical_loss_matches() {
        let rate = loss_rate(&ChannelModel::uniform(0.088), 100_000, 11);
        assert!((rate - 0.088).abs() < 0.003, "{rate}");
    }

    #[test]
    fn forced_drop() {
        let mut ch = ChannelModel::lossless();
        ch.drop_kinds.push(FrameTag::AdvEss);
        assert_eq!(loss_rate(&ch, 100, 1), 1.0);
    }

    #[test]
    fn session_to_frame_loss() {
        assert!((per_frame_loss(0.009, 5) - 0.001_806_515_2).abs() < 1e-10);
        assert!((per_frame_loss(0.088, 5) - 0.018_254_390_6).abs() < 1e-10);
        assert!((1.0 - (1.0 - per_frame_loss(0.088, 5)).powi(5) - 0.088).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(ChannelModel::uniform(1.5).validate().is_err());
        assert!(ChannelModel::uniform(-0.1).validate().is_err());
        assert!(ChannelModel::uniform(0.2).validate().is_ok());
    }
}
