use serde::{Deserialize, Serialize};

use super::EnergyError;

fn default_efficiency() -> f64 {
    1.0
}

/// Ideal supercapacitor energy buffer (no leakage, no ESR).
///
/// The stored energy above `v_min_v` is the reserve the node may spend;
/// below it the regulator browns out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Supercap {
    pub capacitance_f: f64,
    pub voltage_v: f64,
    pub v_min_v: f64,
    pub v_max_v: f64,
    /// Fraction of incoming energy that ends up stored.
    #[serde(default = "default_efficiency")]
    pub efficiency: f64,
}

impl Supercap {
    pub const DEFAULT_CAPACITANCE_F: f64 = 0.4;
    pub const DEFAULT_V_MIN: f64 = 3.3;
    pub const DEFAULT_V_MAX: f64 = 4.5;

    pub fn new(capacitance_f: f64, voltage_v: f64) -> Result<Self, EnergyError> {
        let cap = Supercap {
            capacitance_f,
            voltage_v,
            v_min_v: Self::DEFAULT_V_MIN,
            v_max_v: Self::DEFAULT_V_MAX,
            efficiency: 1.0,
        };
        cap.validate()?;
        Ok(cap)
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        let err = |m: String| Err(EnergyError::Supercap(m));
        if !(self.capacitance_f.is_finite() && self.capacitance_f > 0.0) {
            return err(format!("capacitance must be positive (got {} F)", self.capacitance_f));
        }
        if !(self.v_min_v.is_finite() && self.v_max_v.is_finite() && self.voltage_v.is_finite()) {
            return err("voltages must be finite".into());
        }
        if !(0.0 <= self.v_min_v && self.v_min_v <= self.voltage_v && self.voltage_v <= self.v_max_v) {
            return err(format!(
                "need 0 <= v_min <= voltage <= v_max (got {} <= {} <= {})",
                self.v_min_v, self.voltage_v, self.v_max_v
            ));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return err(format!("efficiency must be in (0, 1] (got {})", self.efficiency));
        }
        Ok(())
    }

    pub fn energy_j(&self) -> f64 {
        0.5 * self.capacitance_f * self.voltage_v * self.voltage_v
    }

    /// Stored energy above the `v_min_v` floor.
    pub fn usable_energy_j(&self) -> f64 {
        0.5 * self.capacitance_f * (self.voltage_v * self.voltage_v - self.v_min_v * self.v_min_v)
    }

    pub fn with_voltage(mut self, voltage_v: f64) -> Self {
        self.voltage_v = voltage_v;
        self
    }
}

/// Outcome of integrating the buffer over one constant-power step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupercapStep {
    pub cap: Supercap,
    /// Set when the unclamped voltage would have fallen below `v_min_v`.
    pub depleted: bool,
}

/// Integrates `p_net_mw` (harvest minus load, may be negative) over `dt_s`.
///
/// `V' = sqrt(V^2 + 2 E / C)` clamped to `[v_min, v_max]`, where `E` is the
/// net energy, scaled by the efficiency when it flows into the capacitor.
/// A zero step leaves the buffer unchanged.
pub fn supercap_step(cap: &Supercap, p_net_mw: f64, dt_s: f64) -> Result<SupercapStep, EnergyError> {
    if !(dt_s.is_finite() && dt_s >= 0.0) {
        return Err(EnergyError::TimeStep(dt_s));
    }
    let mut energy_j = p_net_mw * dt_s / 1000.0;
    if energy_j > 0.0 {
        energy_j *= cap.efficiency;
    }
    let v_sq = cap.voltage_v * cap.voltage_v + 2.0 * energy_j / cap.capacitance_f;
    let floor_sq = cap.v_min_v * cap.v_min_v;
    let depleted = v_sq < floor_sq;
    let voltage_v = v_sq.max(floor_sq).sqrt().clamp(cap.v_min_v, cap.v_max_v);
    Ok(SupercapStep {
        cap: cap.with_voltage(voltage_v),
        depleted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cap(v: f64) -> Supercap {
        Supercap::new(0.4, v).unwrap()
    }

    #[test]
    fn ble_active_window_dip() {
        // harvest 0.98665 mW against a 2.732 mW mean active draw for 5.56 s
        let p_net = 0.986_653_733_289_859_7 - 15.1899 / 5.56;
        let s = supercap_step(&cap(4.463), p_net, 5.56).unwrap();
        let dv = 4.463 - s.cap.voltage_v;
        assert!((dv - 0.005_439_178_9).abs() < 1e-9, "{dv}");
        assert!(!s.depleted);
    }

    #[test]
    fn zero_net_power_keeps_voltage() {
        let s = supercap_step(&cap(4.0), 0.0, 100.0).unwrap();
        assert_eq!(s.cap.voltage_v, 4.0);
    }

    #[test]
    fn floor_sets_depleted() {
        let s = supercap_step(&cap(3.3), -1.0, 1.0).unwrap();
        assert!(s.depleted);
        assert_eq!(s.cap.voltage_v, 3.3);
    }

    #[test]
    fn ceiling_clamps() {
        let s = supercap_step(&cap(4.5), 10.0, 10.0).unwrap();
        assert_eq!(s.cap.voltage_v, 4.5);
        assert!(!s.depleted);
    }

    #[test]
    fn efficiency_scales_charging_only() {
        let mut c = cap(4.0);
        c.efficiency = 0.97;
        let up = supercap_step(&c, 1.0, 10.0).unwrap().cap;
        let gained = up.energy_j() - c.energy_j();
        assert!((gained - 0.0097).abs() < 1e-12);
        let down = supercap_step(&c, -1.0, 10.0).unwrap().cap;
        assert!((c.energy_j() - down.energy_j() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn negative_step_rejected() {
        assert!(supercap_step(&cap(4.0), 1.0, -1.0).is_err());
    }

    #[test]
    fn validation() {
        assert!(Supercap::new(0.4, 3.0).is_err());
        assert!(Supercap::new(0.4, 5.0).is_err());
        assert!(Supercap::new(0.0, 4.0).is_err());
        assert!((cap(3.3).usable_energy_j()).abs() < 1e-15);
    }
}
