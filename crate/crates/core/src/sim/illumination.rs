//! Illuminance seen by the harvesters over time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LuxStep {
    pub from_s: f64,
    pub lux: f64,
}

fn default_jitter_interval_s() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IlluminationProfile {
    /// `lux`, optionally scaled by a seeded factor in `[1 - jitter, 1 + jitter)`
    /// that is redrawn every `jitter_interval_s`.
    Constant {
        lux: f64,
        #[serde(default)]
        jitter: f64,
        #[serde(default = "default_jitter_interval_s")]
        jitter_interval_s: f64,
    },
    /// Piecewise constant; each step holds from its `from_s` until the next.
    Steps { steps: Vec<LuxStep> },
    /// `mean + amplitude * sin(2 pi (t + phase_s) / period_s)`.
    Sinusoid {
        mean: f64,
        amplitude: f64,
        period_s: f64,
        #[serde(default)]
        phase_s: f64,
    },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IlluminationError {
    #[error("illumination: {0}")]
    Invalid(String),
    #[error("time {t_s} s is outside the run [0, {duration_s}] s")]
    OutOfRange { t_s: f64, duration_s: f64 },
}

fn invalid(msg: impl Into<String>) -> IlluminationError {
    IlluminationError::Invalid(msg.into())
}

impl IlluminationProfile {
    pub fn constant(lux: f64) -> Self {
        IlluminationProfile::Constant {
            lux,
            jitter: 0.0,
            jitter_interval_s: default_jitter_interval_s(),
        }
    }

    pub fn validate(&self) -> Result<(), IlluminationError> {
        let finite_non_negative = |x: f64| x.is_finite() && x >= 0.0;
        match self {
            IlluminationProfile::Constant {
                lux,
                jitter,
                jitter_interval_s,
            } => {
                if !finite_non_negative(*lux) {
                    return Err(invalid(format!("lux must be non-negative (got {lux})")));
                }
                if !(0.0..1.0).contains(jitter) {
                    return Err(invalid(format!("jitter must be in [0, 1) (got {jitter})")));
                }
                if !(jitter_interval_s.is_finite() && *jitter_interval_s > 0.0) {
                    return Err(invalid("jitter_interval_s must be positive"));
                }
            }
            IlluminationProfile::Steps { steps } => {
                let Some(first) = steps.first() else {
                    return Err(invalid("steps must not be empty"));
                };
                if first.from_s != 0.0 {
                    return Err(invalid("the first step must start at 0"));
                }
                if steps.windows(2).any(|w| w[0].from_s >= w[1].from_s) {
                    return Err(invalid("step start times must be strictly increasing"));
                }
                if let Some(s) = steps
                    .iter()
                    .find(|s| !finite_non_negative(s.lux) || !s.from_s.is_finite())
                {
                    return Err(invalid(format!("bad step at {} s ({} lx)", s.from_s, s.lux)));
                }
            }
            IlluminationProfile::Sinusoid {
                mean,
                amplitude,
                period_s,
                phase_s,
            } => {
                if !(mean.is_finite() && amplitude.is_finite() && phase_s.is_finite()) {
                    return Err(invalid("sinusoid parameters must be finite"));
                }
                if !(period_s.is_finite() && *period_s > 0.0) {
                    return Err(invalid("period_s must be positive"));
                }
                if *mean < amplitude.abs() {
                    return Err(invalid("mean must be at least |amplitude| so lux stays non-negative"));
                }
            }
        }
        Ok(())
    }

    /// Illuminance at `t_s` (seconds from the start of the run, at most
    /// `duration_s`). `seed` only matters for jitter.
    pub fn lux_at(&self, t_s: f64, duration_s: f64, seed: u64) -> Result<f64, IlluminationError> {
        if !(t_s >= 0.0 && t_s <= duration_s) {
            return Err(IlluminationError::OutOfRange { t_s, duration_s });
        }
        Ok(self.eval(t_s, seed))
    }

    pub(crate) fn eval(&self, t_s: f64, seed: u64) -> f64 {
        match self {
            IlluminationProfile::Constant {
                lux,
                jitter,
                jitter_interval_s,
            } => {
                if *jitter == 0.0 {
                    return *lux;
                }
                let bucket = (t_s / jitter_interval_s).floor() as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(bucket);
                lux * (1.0 + jitter * rng.random_range(-1.0..1.0))
            }
            IlluminationProfile::Steps { steps } => {
                let i = steps.partition_point(|s| s.from_s <= t_s);
                steps[i.saturating_sub(1)].lux
            }
            IlluminationProfile::Sinusoid {
                mean,
                amplitude,
                period_s,
                phase_s,
            } => (mean + amplitude * (TAU * (t_s + phase_s) / period_s).sin()).max(0.0),
        }
    }
}
