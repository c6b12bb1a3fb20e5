use ehsim_core::metrics::Outcome;
use ehsim_core::node::{AdvertisingMode, NodeConfig, NodeId};
use ehsim_core::protocol::{FailureReason, FrameTag};
use ehsim_core::sim::{run, ChannelModel, IlluminationProfile, LuxStep, Scenario};

fn fixed_ble(id: u32) -> NodeConfig {
    let mut cfg = NodeConfig::ble(NodeId(id));
    cfg.advertising = AdvertisingMode::Fixed;
    cfg
}

#[test]
fn stored_energy_matches_the_ledger() {
    // starts low enough never to reach the ceiling
    let mut cfg = NodeConfig::liot(NodeId(1));
    cfg.supercap = cfg.supercap.with_voltage(3.9);
    let out = run(&Scenario::single(cfg, 650.0, 7_200.0)).unwrap();
    assert!(out.summary.nodes[0].scap_max_v < 4.5);
    let e = out.energy[0];
    let (first, last) = (out.records.first().unwrap(), out.records.last().unwrap());
    let stored = 0.5 * 0.4 * (last.scap_v_end.powi(2) - first.scap_v_start.powi(2));
    assert!(
        (stored - (e.harvested_j - e.consumed_j)).abs() < 1e-9,
        "{stored} vs {:?}",
        e
    );
    let used: f64 = out.records.iter().map(|r| r.energy_consumed_j).sum();
    let got: f64 = out.records.iter().map(|r| r.energy_harvested_j).sum();
    assert!((used - e.consumed_j).abs() < 1e-9);
    assert!((got - e.harvested_j).abs() < 1e-9);
}

#[test]
fn records_tile_the_run() {
    let out = run(&Scenario::single(NodeConfig::ble(NodeId(1)), 700.0, 3_600.0)).unwrap();
    assert_eq!(out.records[0].start_s, 0.0);
    for w in out.records.windows(2) {
        assert_eq!(w[0].end_s, w[1].start_s);
        assert_eq!(w[1].cycle_index, w[0].cycle_index + 1);
    }
    let last = out.records.last().unwrap();
    assert_eq!(last.outcome, Outcome::Truncated);
    assert_eq!(last.end_s, 3_600.0);
    assert_eq!(out.voltage.len(), 3_601);
    assert!(out.voltage.windows(2).all(|w| w[0].t_s < w[1].t_s));
}

#[test]
fn mixed_deployment_serves_everyone() {
    let mut s = Scenario::single(fixed_ble(1), 700.0, 7_200.0);
    s.nodes.push(NodeConfig::liot(NodeId(2)));
    s.nodes.push(fixed_ble(3));
    let out = run(&s).unwrap();
    for n in &out.summary.nodes {
        assert!(n.sent > 0);
        assert_eq!(n.received, n.sent, "node {}", n.node_id);
    }
    assert_eq!(out.summary.node(NodeId(2)).unwrap().sent, 11);
}

#[test]
fn lost_acknowledgement_fails_the_exchange_not_the_schedule() {
    let mut s = Scenario::single(NodeConfig::liot(NodeId(1)), 700.0, 28_800.0);
    s.channel = ChannelModel {
        drop_kinds: vec![FrameTag::Ack],
        ..ChannelModel::lossless()
    };
    let out = run(&s).unwrap();
    let n = &out.summary.nodes[0];
    assert_eq!((n.sent, n.received), (46, 0));
    assert!(out
        .records
        .iter()
        .filter(|r| r.outcome != Outcome::Truncated)
        .all(|r| r.outcome == Outcome::Failed(FailureReason::Timeout)));
}

#[test]
fn unheard_advertising_means_no_gateway() {
    let mut s = Scenario::single(fixed_ble(1), 700.0, 600.0);
    s.channel = ChannelModel {
        drop_kinds: vec![FrameTag::AdvEss],
        ..ChannelModel::lossless()
    };
    let out = run(&s).unwrap();
    assert_eq!(out.summary.received(), 0);
    assert!(out.summary.sent() > 10);
    assert!(out
        .records
        .iter()
        .filter(|r| r.outcome.counts_as_sent())
        .all(|r| r.outcome == Outcome::Failed(FailureReason::NoGateway)));
}

#[test]
fn darkness_keeps_the_node_asleep() {
    let out = run(&Scenario::single(NodeConfig::ble(NodeId(1)), 0.0, 3_600.0)).unwrap();
    assert_eq!(out.summary.sent(), 0);
    assert!(out.frames.is_empty());
    assert!(out.voltage.windows(2).all(|w| w[1].voltage_v <= w[0].voltage_v));
}

#[test]
fn dimming_stretches_the_assigned_sleep() {
    let mut s = Scenario::single(NodeConfig::liot(NodeId(1)), 700.0, 28_800.0);
    s.illumination = IlluminationProfile::Steps {
        steps: vec![
            LuxStep {
                from_s: 0.0,
                lux: 700.0,
            },
            LuxStep {
                from_s: 14_400.0,
                lux: 500.0,
            },
        ],
    };
    let out = run(&s).unwrap();
    let sent = out.summary.sent();
    assert!((21..46).contains(&sent), "{sent}");
    let periods: Vec<f64> = out.records.iter().map(|r| r.end_s - r.start_s).collect();
    assert!((periods[0] - 624.611).abs() < 1e-6);
    assert!((periods[sent as usize - 1] - 1354.611).abs() < 1e-6);
}

#[test]
fn nothing_happens_after_the_end() {
    let mut s = Scenario::single(fixed_ble(1), 700.0, 100.0);
    s.nodes.push(NodeConfig::liot(NodeId(2)));
    let out = run(&s).unwrap();
    assert!(out.records.iter().all(|r| r.end_s <= 100.0));
    assert!(out.frames.iter().all(|f| f.t_s <= 100.0));
    assert!(out.voltage.iter().all(|v| v.t_s <= 100.0));
}

#[test]
fn seed_changes_lossy_outcomes_only() {
    let mut s = Scenario::single(fixed_ble(1), 700.0, 7_200.0);
    s.channel = ChannelModel::uniform(0.05);
    let a = run(&s).unwrap();
    s.seed = 2;
    let b = run(&s).unwrap();
    assert_ne!(a.records, b.records);
    assert_eq!(a.summary.config_hash, b.summary.config_hash);
}
