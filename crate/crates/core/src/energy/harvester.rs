use serde::{Deserialize, Serialize};

use super::{implied_harvest_power, EnergyError, EnergyProfile};

/// Illuminance beyond which the calibrated default curves stop extrapolating.
pub const CALIBRATED_CURVE_MAX_LUX: f64 = 10_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvePoint {
    pub lux: f64,
    pub power_mw: f64,
}

/// Harvested power as a piecewise-linear function of illuminance, clamped at
/// both ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarvesterCurve {
    pub points: Vec<CurvePoint>,
}

impl HarvesterCurve {
    pub fn new(points: Vec<CurvePoint>) -> Result<Self, EnergyError> {
        let curve = HarvesterCurve { points };
        curve.validate()?;
        Ok(curve)
    }

    /// A curve that returns `power_mw` at every illuminance.
    pub fn flat(power_mw: f64) -> Result<Self, EnergyError> {
        Self::new(vec![CurvePoint { lux: 0.0, power_mw }])
    }

    /// Builds a curve through the harvest powers implied by known
    /// `(lux, sleep time)` operating points of `profile`.
    ///
    /// The curve starts at (0 lx, 0 mW), passes through every anchor and
    /// continues the last segment linearly up to
    /// [`CALIBRATED_CURVE_MAX_LUX`].
    pub fn calibrated(profile: &EnergyProfile, anchors: &[(f64, f64)]) -> Result<Self, EnergyError> {
        let mut points = vec![CurvePoint {
            lux: 0.0,
            power_mw: 0.0,
        }];
        for &(lux, t_sleep) in anchors {
            points.push(CurvePoint {
                lux,
                power_mw: implied_harvest_power(profile, t_sleep)?,
            });
        }
        let n = points.len();
        if n >= 2 {
            let (a, b) = (points[n - 2], points[n - 1]);
            if b.lux < CALIBRATED_CURVE_MAX_LUX {
                let slope = (b.power_mw - a.power_mw) / (b.lux - a.lux);
                points.push(CurvePoint {
                    lux: CALIBRATED_CURVE_MAX_LUX,
                    power_mw: b.power_mw + slope * (CALIBRATED_CURVE_MAX_LUX - b.lux),
                });
            }
        }
        Self::new(points)
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        if self.points.is_empty() {
            return Err(EnergyError::Curve("no points".into()));
        }
        for p in &self.points {
            if !(p.lux.is_finite() && p.lux >= 0.0) {
                return Err(EnergyError::Curve(format!("invalid illuminance {}", p.lux)));
            }
            if !(p.power_mw.is_finite() && p.power_mw >= 0.0) {
                return Err(EnergyError::Curve(format!("invalid power {} mW", p.power_mw)));
            }
        }
        for w in self.points.windows(2) {
            if w[1].lux <= w[0].lux {
                return Err(EnergyError::Curve(format!(
                    "illuminance must increase strictly ({} then {})",
                    w[0].lux, w[1].lux
                )));
            }
            if w[1].power_mw < w[0].power_mw {
                return Err(EnergyError::Curve(format!(
                    "power must not decrease with illuminance ({} then {} mW)",
                    w[0].power_mw, w[1].power_mw
                )));
            }
        }
        Ok(())
    }

    /// Harvested power in mW at `lux`.
    pub fn power_at(&self, lux: f64) -> f64 {
        let pts = &self.points;
        let first = pts[0];
        let last = pts[pts.len() - 1];
        if lux <= first.lux {
            return first.power_mw;
        }
        if lux >= last.lux {
            return last.power_mw;
        }
        // first index whose lux is >= the query
        let i = pts.partition_point(|p| p.lux < lux);
        let (a, b) = (pts[i - 1], pts[i]);
        if b.lux == lux {
            return b.power_mw;
        }
        a.power_mw + (b.power_mw - a.power_mw) * (lux - a.lux) / (b.lux - a.lux)
    }
}
