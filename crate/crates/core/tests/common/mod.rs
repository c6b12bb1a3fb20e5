//! Property checks shared by the proptest suite and the acceptance run.

#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

use ehsim_core::energy::{
    active_totals, solve_sleep_time, supercap_step, CycleBudget, EnergyProfile, SleepSolution, Stage, StageName,
    Supercap,
};
use ehsim_core::metrics::{export_rows, import_rows, CycleRecord, Format, Outcome};
use ehsim_core::node::{AdvertisingMode, ChannelMask, EnvironmentModel, Node, NodeConfig, NodeEvent, NodeId};
use ehsim_core::protocol::{FailureReason, Frame, FrameKind, LinkTiming};
use ehsim_core::sim::{run, ChannelModel, IlluminationProfile, Scenario};

pub type Check = Result<(), TestCaseError>;

pub fn profile() -> impl Strategy<Value = EnergyProfile> {
    let stage = (0.01f64..50.0, 0.01f64..10.0);
    (1.8f64..5.0, proptest::collection::vec(stage, 1..5), 0.001f64..0.999).prop_map(|(v, stages, frac)| {
        let sleep = frac * stages.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
        let names = [
            StageName::SensorRead,
            StageName::BleAdvertise,
            StageName::BleDataExchange,
            StageName::LiotSleepSet,
        ];
        EnergyProfile::new(
            v,
            stages
                .into_iter()
                .zip(names)
                .map(|((i, t), name)| Stage::new(name, i, t).unwrap())
                .collect(),
            sleep,
        )
        .unwrap()
    })
}

/// Harvest power at fraction `f` of the way from the sleep draw to the
/// mean active power.
pub fn feasible_power(profile: &EnergyProfile, f: f64) -> f64 {
    let lo = profile.sleep_power_mw();
    let hi = active_totals(profile).mean_power_mw();
    lo + f * (hi - lo)
}

/// At the solver output, harvest equals consumption over the cycle.
pub fn solver_balances(profile: &EnergyProfile, f: f64) -> Check {
    let p = feasible_power(profile, f);
    let SleepSolution::Sleep(t) = solve_sleep_time(profile, p).unwrap() else {
        return Err(TestCaseError::fail("expected a finite sleep time"));
    };
    let b = CycleBudget::new(profile, p, t);
    prop_assert!(
        b.surplus_j().abs() <= 1e-9 * b.e_consumed_j(),
        "surplus {} J",
        b.surplus_j()
    );
    Ok(())
}

/// More harvest never needs more sleep.
pub fn solver_monotone(profile: &EnergyProfile, p1: f64, p2: f64) -> Check {
    let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
    let t = |p| solve_sleep_time(profile, p).unwrap().sleep_s().unwrap_or(f64::INFINITY);
    prop_assert!(t(hi) <= t(lo), "t({hi}) = {} > t({lo}) = {}", t(hi), t(lo));
    Ok(())
}

/// Charging and then discharging the same energy restores the voltage.
pub fn supercap_round_trip(c: f64, v: f64, p_mw: f64, dt: f64) -> Check {
    let cap = Supercap::new(c, v).unwrap();
    let up = supercap_step(&cap, p_mw, dt).unwrap();
    prop_assume!(!up.depleted && up.cap.voltage_v < cap.v_max_v);
    let down = supercap_step(&up.cap, -p_mw, dt).unwrap();
    prop_assume!(!down.depleted);
    prop_assert!(
        (down.cap.voltage_v - v).abs() <= 1e-9,
        "{} -> {}",
        v,
        down.cap.voltage_v
    );
    Ok(())
}

#[derive(Debug, Clone)]
pub enum Stimulus {
    Timer,
    Frame(u8),
    Light(f64),
}

pub fn stimulus() -> impl Strategy<Value = Stimulus> {
    prop_oneof![
        4 => Just(Stimulus::Timer),
        3 => (0u8..10).prop_map(Stimulus::Frame),
        1 => (0.0..2000.0f64).prop_map(Stimulus::Light),
    ]
}

fn gateway_frame(node: &Node, pick: u8, timing: &LinkTiming) -> Frame {
    let kind = match pick % 5 {
        0 => FrameKind::ConnReq,
        1 => FrameKind::EssAttrRequest,
        2 => FrameKind::ConfigOrDisconnect,
        3 => FrameKind::SensorRequest {
            channels: ChannelMask::from_bits(pick),
        },
        _ => FrameKind::SleepSet {
            seconds: u32::from(pick) * 7,
        },
    };
    let session = node.state().cycle_index + u32::from(pick >= 8);
    Frame::between(node.id(), session, kind, timing)
}

/// Drives one node with an arbitrary interleaving of timer expiries,
/// gateway frames (right, wrong or stale) and light changes; every phase
/// change must be a legal one.
pub fn fsm_stays_legal(liot: bool, v0: f64, script: &[(Stimulus, f64)]) -> Check {
    let env = EnvironmentModel::default();
    let timing = LinkTiming::default();
    let mut cfg = if liot {
        NodeConfig::liot(NodeId(4))
    } else {
        NodeConfig::ble(NodeId(4))
    };
    cfg.supercap = cfg.supercap.with_voltage(v0);
    let kind = cfg.kind;
    let mut node = Node::new(cfg, timing, 9).unwrap();
    let timer = |ev: &[NodeEvent]| {
        ev.iter().rev().find_map(|e| match e {
            NodeEvent::TimerArmed { at, token } => Some((*at, *token)),
            _ => None,
        })
    };
    let mut now = 0.0;
    let mut pending = timer(&node.boot(now, 700.0));
    for (s, gap) in script {
        let step = |now: f64| pending.map_or(now + gap, |(at, _)| f64::min(now + gap, at));
        let ev = match s {
            Stimulus::Timer => match pending.take() {
                Some((at, token)) => {
                    now = at;
                    node.advance(token, now, &env)
                }
                None => Vec::new(),
            },
            Stimulus::Frame(pick) => {
                now = step(now);
                let f = gateway_frame(&node, *pick, &timing);
                node.on_frame(&f, now)
            }
            Stimulus::Light(lux) => {
                now = step(now);
                node.update(now, *lux)
            }
        };
        for e in &ev {
            if let NodeEvent::PhaseChanged { from, to, .. } = e {
                prop_assert!(from.can_move_to(*to, kind), "{} -> {}", from, to);
            }
        }
        if let Some(t) = timer(&ev) {
            prop_assert!(t.0 >= now, "timer armed in the past");
            pending = Some(t);
        }
    }
    Ok(())
}

pub fn mixed_scenario(seed: u64, loss: f64, jitter: f64, duration_s: f64) -> Scenario {
    let mut s = Scenario::single(NodeConfig::ble(NodeId(1)), 700.0, duration_s);
    s.nodes.push(NodeConfig::liot(NodeId(2)));
    s.nodes.push(NodeConfig::ble(NodeId(3)));
    s.seed = seed;
    s.channel = ChannelModel::uniform(loss);
    s.illumination = IlluminationProfile::Constant {
        lux: 650.0,
        jitter,
        jitter_interval_s: 60.0,
    };
    s
}

/// Same scenario and seed give byte-identical output files.
pub fn reruns_identical(seed: u64, loss: f64, jitter: f64) -> Check {
    let s = mixed_scenario(seed, loss, jitter, 3_600.0);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut written = Vec::new();
    for d in &dirs {
        written.push(run(&s).unwrap().write(d.path(), Format::Csv).unwrap());
    }
    for (a, b) in written[0].iter().zip(&written[1]) {
        prop_assert!(
            std::fs::read(a).unwrap() == std::fs::read(b).unwrap(),
            "{} differs",
            a.display()
        );
    }
    Ok(())
}

/// Raising the per-frame loss does not raise the delivery ratio.
pub fn pdr_monotone_in_loss(seed: u64, low: f64, gap: f64) -> Check {
    let pdr = |loss: f64| {
        let mut s = Scenario::single(NodeConfig::ble(NodeId(1)), 700.0, 14_400.0);
        s.nodes.push(NodeConfig::ble(NodeId(2)));
        s.seed = seed;
        s.channel = ChannelModel::uniform(loss);
        run(&s).unwrap().summary.pdr()
    };
    let (a, b) = (pdr(low), pdr(low + gap));
    prop_assert!(b <= a, "loss {low}: {a}, loss {}: {b}", low + gap);
    Ok(())
}

/// Under steady light and a perfect channel a node never ends a cycle with
/// less stored energy than it started with, as long as the buffer stayed
/// below its ceiling (charge arriving at a full buffer is discarded).
/// BLE nodes advertise for the full window the sleep time was solved for.
pub fn cycle_voltage_holds(liot: bool, lux: f64, v0: f64) -> Check {
    let mut cfg = if liot {
        NodeConfig::liot(NodeId(1))
    } else {
        NodeConfig::ble(NodeId(1))
    };
    cfg.supercap = cfg.supercap.with_voltage(v0);
    cfg.advertising = AdvertisingMode::Fixed;
    let out = run(&Scenario::single(cfg, lux, 10_800.0)).unwrap();
    let ceiling = Supercap::DEFAULT_V_MAX - 1e-9;
    let below = |r: &&CycleRecord| r.scap_v_wake.is_some_and(|v| v < ceiling);
    for r in out
        .records
        .iter()
        .filter(|r| r.outcome == Outcome::Delivered)
        .filter(below)
    {
        prop_assert!(
            r.scap_v_end >= r.scap_v_start - 1e-9,
            "cycle {}: {} -> {}",
            r.cycle_index,
            r.scap_v_start,
            r.scap_v_end
        );
    }
    Ok(())
}

pub fn outcome() -> impl Strategy<Value = Outcome> {
    prop_oneof![
        Just(Outcome::Delivered),
        Just(Outcome::Truncated),
        Just(Outcome::Failed(FailureReason::Timeout)),
        Just(Outcome::Failed(FailureReason::NoGateway)),
        Just(Outcome::Failed(FailureReason::Brownout)),
        Just(Outcome::Failed(FailureReason::ProtocolViolation)),
    ]
}

pub fn cycle_record() -> impl Strategy<Value = CycleRecord> {
    let f = any::<f64>().prop_filter("finite", |x| x.is_finite());
    (
        (
            any::<u32>(),
            any::<u32>(),
            f.clone(),
            proptest::option::of(f.clone()),
            f.clone(),
            outcome(),
        ),
        (
            f.clone(),
            proptest::option::of(f.clone()),
            f.clone(),
            f.clone(),
            f.clone(),
            proptest::option::of(f),
        ),
    )
        .prop_map(
            |((id, i, start, wake, end, outcome), (v0, vw, v1, used, got, at))| CycleRecord {
                node_id: NodeId(id),
                cycle_index: i,
                start_s: start,
                wake_s: wake,
                end_s: end,
                outcome,
                scap_v_start: v0,
                scap_v_wake: vw,
                scap_v_end: v1,
                energy_consumed_j: used,
                energy_harvested_j: got,
                delivered_at_s: at,
            },
        )
}

/// Export followed by import gives back exactly the same rows.
pub fn export_round_trip(rows: &[CycleRecord]) -> Check {
    let dir = tempfile::tempdir().unwrap();
    for format in [Format::Csv, Format::Jsonl] {
        let path = dir.path().join(format!("cycles.{}", format.extension()));
        export_rows(rows, format, &path).unwrap();
        let back: Vec<CycleRecord> = import_rows(format, &path).unwrap();
        prop_assert_eq!(&back, &rows.to_vec());
    }
    Ok(())
}
