//! Measured energy profiles of the two reference node builds and the
//! harvester curves calibrated against their published sleep times.

use super::{EnergyProfile, HarvesterCurve, Stage, StageName};

/// Supply voltage both node builds were profiled at.
pub const OPERATING_VOLTAGE_V: f64 = 3.3;

/// BLE node sleep time at 700 lx, in seconds.
pub const BLE_SLEEP_700LX_S: f64 = 12.842;
/// BLE node sleep time at 500 lx, in seconds.
pub const BLE_SLEEP_500LX_S: f64 = 20.520;
/// LIoT node sleep time at 700 lx, in seconds.
pub const LIOT_SLEEP_700LX_S: f64 = 620.0;
/// LIoT node sleep time at 500 lx, in seconds.
pub const LIOT_SLEEP_500LX_S: f64 = 1350.0;

/// Extra duty-cycle time the BLE scheduler adds on top of the solved cycle.
pub const BLE_DEFAULT_MARGIN: f64 = 0.05;

pub const BLE_PROFILE_PRESET: &str = "ble-table1";
pub const LIOT_PROFILE_PRESET: &str = "liot-table2";

fn stage(name: StageName, current_ma: f64, duration_s: f64) -> Stage {
    Stage {
        name,
        current_ma,
        duration_s,
    }
}

/// BLE node: sensor read, advertising (maximum window) and data exchange.
pub fn ble_table1() -> EnergyProfile {
    EnergyProfile {
        voltage_v: OPERATING_VOLTAGE_V,
        active_stages: vec![
            stage(StageName::SensorRead, 7.550, 0.260),
            stage(StageName::BleAdvertise, 0.400, 4.000),
            stage(StageName::BleDataExchange, 0.800, 1.300),
        ],
        sleep_current_ma: 0.070,
    }
}

/// LIoT node with all four sensor channels requested.
pub fn liot_table2() -> EnergyProfile {
    EnergyProfile {
        voltage_v: OPERATING_VOLTAGE_V,
        active_stages: vec![
            stage(StageName::GwRequest, 12.69, 0.428),
            stage(StageName::LiotSensorRead, 17.73, 0.525),
            stage(StageName::LiotDataUpload, 14.58, 3.58),
            stage(StageName::LiotSleepSet, 9.81, 0.078),
        ],
        sleep_current_ma: 0.087,
    }
}

/// Looks up a built-in profile by name.
pub fn profile_preset(name: &str) -> Option<EnergyProfile> {
    match name {
        BLE_PROFILE_PRESET => Some(ble_table1()),
        LIOT_PROFILE_PRESET => Some(liot_table2()),
        _ => None,
    }
}

pub fn ble_harvester() -> HarvesterCurve {
    HarvesterCurve::calibrated(&ble_table1(), &[(500.0, BLE_SLEEP_500LX_S), (700.0, BLE_SLEEP_700LX_S)])
        .expect("built-in BLE calibration is valid")
}

pub fn liot_harvester() -> HarvesterCurve {
    HarvesterCurve::calibrated(
        &liot_table2(),
        &[(500.0, LIOT_SLEEP_500LX_S), (700.0, LIOT_SLEEP_700LX_S)],
    )
    .expect("built-in LIoT calibration is valid")
}

pub const BLE_HARVESTER_PRESET: &str = "ble-leh3";
pub const LIOT_HARVESTER_PRESET: &str = "liot-leh3";

pub fn harvester_preset(name: &str) -> Option<HarvesterCurve> {
    match name {
        BLE_HARVESTER_PRESET => Some(ble_harvester()),
        LIOT_HARVESTER_PRESET => Some(liot_harvester()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{active_totals, solve_sleep_time};

    #[test]
    fn presets_validate() {
        ble_table1().validate().unwrap();
        liot_table2().validate().unwrap();
        ble_harvester().validate().unwrap();
        liot_harvester().validate().unwrap();
        assert!(profile_preset("nope").is_none());
    }

    #[test]
    fn active_totals_match_tables() {
        let b = active_totals(&ble_table1());
        assert!((b.t_active_s - 5.56).abs() < 1e-12);
        assert!((b.e_active_j - 0.0151899).abs() < 1e-12);
        let l = active_totals(&liot_table2());
        assert!((l.t_active_s - 4.611).abs() < 1e-12);
        assert!((l.e_active_j - 0.223413795).abs() < 1e-12);
    }

    #[test]
    fn curves_reproduce_sleep_times() {
        let cases = [
            (ble_table1(), ble_harvester(), 700.0, BLE_SLEEP_700LX_S),
            (ble_table1(), ble_harvester(), 500.0, BLE_SLEEP_500LX_S),
            (liot_table2(), liot_harvester(), 700.0, LIOT_SLEEP_700LX_S),
            (liot_table2(), liot_harvester(), 500.0, LIOT_SLEEP_500LX_S),
        ];
        for (profile, curve, lux, expected) in cases {
            let t = solve_sleep_time(&profile, curve.power_at(lux))
                .unwrap()
                .sleep_s()
                .unwrap();
            assert!((t - expected).abs() < 1e-9 * expected, "{lux} lx: {t}");
        }
    }
}
