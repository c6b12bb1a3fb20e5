//! Synthetic environmental sensor.
//!
//! Each channel follows `baseline + amplitude * sin(2 pi t / period)` plus a
//! uniform noise term in `[-noise, noise)` drawn from a generator keyed by
//! `(seed, node, channel, t)`, so a given sample time always reads the same.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::fmt;

use super::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorChannel {
    Temperature,
    Humidity,
    Pressure,
    Gas,
}

impl SensorChannel {
    pub const ALL: [SensorChannel; 4] = [
        SensorChannel::Temperature,
        SensorChannel::Humidity,
        SensorChannel::Pressure,
        SensorChannel::Gas,
    ];

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

/// Set of sensor channels, as carried in a sensor request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChannelMask(u8);

impl ChannelMask {
    pub const ALL: ChannelMask = ChannelMask(0b1111);

    pub fn from_channels(channels: &[SensorChannel]) -> Self {
        ChannelMask(channels.iter().fold(0, |m, c| m | c.bit()))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn from_bits(bits: u8) -> Self {
        ChannelMask(bits & Self::ALL.0)
    }

    pub fn contains(self, channel: SensorChannel) -> bool {
        self.0 & channel.bit() != 0
    }

    pub fn len(self) -> u32 {
        self.0.count_ones()
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn intersect(self, other: ChannelMask) -> ChannelMask {
        ChannelMask(self.0 & other.0)
    }

    pub fn channels(self) -> impl Iterator<Item = SensorChannel> {
        SensorChannel::ALL.into_iter().filter(move |c| self.contains(*c))
    }
}

impl fmt::Display for ChannelMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#06b}", self.0)
    }
}

/// One reading of all channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSample {
    pub timestamp_s: f64,
    pub temperature_c: f64,
    pub humidity_rh: f64,
    pub pressure_hpa: f64,
    /// Gas sensor resistance, used as a VOC index.
    pub gas_ohm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSignal {
    pub baseline: f64,
    pub amplitude: f64,
    pub period_s: f64,
    #[serde(default)]
    pub noise: f64,
}

impl ChannelSignal {
    pub fn value(&self, t_s: f64, noise_unit: f64) -> f64 {
        self.baseline + self.amplitude * (TAU * t_s / self.period_s).sin() + self.noise * noise_unit
    }

    /// Inclusive range every reading stays within.
    pub fn bounds(&self) -> (f64, f64) {
        let span = self.amplitude.abs() + self.noise.abs();
        (self.baseline - span, self.baseline + span)
    }
}

const DAY_S: f64 = 86_400.0;

/// Indoor environment seen by every node's sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentModel {
    pub seed: u64,
    pub temperature: ChannelSignal,
    pub humidity: ChannelSignal,
    pub pressure: ChannelSignal,
    pub gas: ChannelSignal,
}

impl Default for EnvironmentModel {
    fn default() -> Self {
        let signal = |baseline, amplitude| ChannelSignal {
            baseline,
            amplitude,
            period_s: DAY_S,
            noise: 0.0,
        };
        EnvironmentModel {
            seed: 1,
            temperature: signal(21.0, 1.5),
            humidity: signal(40.0, 5.0),
            pressure: signal(1013.0, 2.0),
            gas: signal(50_000.0, 5_000.0),
        }
    }
}

impl EnvironmentModel {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn signal(&self, channel: SensorChannel) -> &ChannelSignal {
        match channel {
            SensorChannel::Temperature => &self.temperature,
            SensorChannel::Humidity => &self.humidity,
            SensorChannel::Pressure => &self.pressure,
            SensorChannel::Gas => &self.gas,
        }
    }

    fn noise_unit(&self, node: NodeId, channel: SensorChannel, t_s: f64) -> f64 {
        let key = self.seed ^ (u64::from(node.0) << 40) ^ ((channel as u64) << 56) ^ t_s.to_bits().rotate_left(17);
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        rng.random_range(-1.0..1.0)
    }

    pub fn read(&self, node: NodeId, t_s: f64) -> SensorSample {
        let v = |c: SensorChannel| {
            let signal = self.signal(c);
            let noise = if signal.noise == 0.0 {
                0.0
            } else {
                self.noise_unit(node, c, t_s)
            };
            signal.value(t_s, noise)
        };
        SensorSample {
            timestamp_s: t_s,
            temperature_c: v(SensorChannel::Temperature),
            humidity_rh: v(SensorChannel::Humidity),
            pressure_hpa: v(SensorChannel::Pressure),
            gas_ohm: v(SensorChannel::Gas),
        }
    }
}
