//! The runtime behaves the same on the in-process bus and over UDP.

use std::time::{Duration, Instant};

use knxsafe::fixtures::{build_fixtures, lab_scenarios, Stubs};
use knxsafe::runtime::{encode_for, EventOutcome, Runtime, RUNTIME_SOURCE};
use knxsafe::simbus::{run_scenario, Scenario, SimBus, Step, UdpBridge, UdpClient, SENSOR_SOURCE};
use knxsafe::value::Value;
use knxsafe::wire::Telegram;

fn in_process(s: &Scenario) -> (Vec<EventOutcome>, SimBus, Vec<String>) {
    let suite = build_fixtures().unwrap();
    let stubs = Stubs::new();
    let mut sim = suite.simulation(s, &stubs).unwrap();
    let report = run_scenario(s, &mut sim).unwrap();
    assert!(report.passed(), "{report}");
    (sim.outcomes().to_vec(), sim.bus.clone(), stubs.messages())
}

fn over_udp(s: &Scenario) -> (Vec<EventOutcome>, SimBus, Vec<String>) {
    let suite = build_fixtures().unwrap();
    let stubs = Stubs::new();
    let bus = SimBus::new();
    for (ga, v) in s.initial_values(&suite.table).unwrap() {
        bus.preset(ga, encode_for(suite.table.entries[&ga].dpt, &v).unwrap());
    }
    let bridge = UdpBridge::bind(bus.clone(), "127.0.0.1:0").unwrap();
    let client =
        UdpClient::connect(bridge.local_addr(), RUNTIME_SOURCE, Duration::from_secs(2)).unwrap();
    let mut rt =
        Runtime::initialize(&suite.table, suite.runtime_apps(&stubs), client, None).unwrap();
    let mut outcomes = Vec::new();
    for step in &s.steps {
        match step {
            Step::Inject { address, value } => {
                let ga = address.resolve(&suite.table).unwrap();
                let entry = &suite.table.entries[&ga];
                let v = Value::from_json(value, entry.value_type).unwrap();
                let t =
                    Telegram::group_write(SENSOR_SOURCE, ga, encode_for(entry.dpt, &v).unwrap());
                bus.publish(&t).unwrap();
                loop {
                    let got = rt
                        .bus_mut()
                        .recv(Duration::from_secs(5))
                        .unwrap()
                        .expect("injected telegram arrives");
                    if let Some(ev) = rt.event_for(&got).unwrap() {
                        outcomes.push(rt.process_event(ev).unwrap());
                    }
                    if got == t {
                        break;
                    }
                }
            }
            Step::Advance(secs) => {
                let target = rt.now() + secs;
                outcomes.extend(rt.advance_to(target).unwrap());
            }
            _ => {}
        }
    }
    // Let the last writes reach the bus.
    let deadline = Instant::now() + Duration::from_secs(5);
    let expected_writes: usize = outcomes.iter().map(|o| o.writes.len()).sum();
    while Instant::now() < deadline {
        let seen = bus
            .trace()
            .iter()
            .filter(|e| {
                knxsafe::wire::decode_telegram(&e.frame)
                    .is_ok_and(|t| t.source == RUNTIME_SOURCE && !t.is_read_request())
            })
            .count();
        if seen >= expected_writes {
            break;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    assert!(bridge.dropped().is_empty());
    (outcomes, bus, stubs.messages())
}

#[test]
fn lab_scenarios_match_over_udp() {
    for s in lab_scenarios().unwrap() {
        let (local, local_bus, local_msgs) = in_process(&s);
        let (remote, remote_bus, remote_msgs) = over_udp(&s);
        let strip = |v: &[EventOutcome]| -> Vec<_> {
            v.iter()
                .map(|o| {
                    (
                        o.event.clone(),
                        o.executed.clone(),
                        o.killed.clone(),
                        o.verdict,
                        o.writes.clone(),
                    )
                })
                .collect()
        };
        assert_eq!(strip(&local), strip(&remote), "scenario {}", s.name);
        assert_eq!(local_msgs, remote_msgs, "scenario {}", s.name);
        assert_eq!(
            local_bus.read_requests(),
            remote_bus.read_requests(),
            "scenario {}",
            s.name
        );
        let suite = build_fixtures().unwrap();
        for ga in suite.table.entries.keys() {
            assert_eq!(
                local_bus.value(*ga),
                remote_bus.value(*ga),
                "scenario {} at {ga}",
                s.name
            );
        }
    }
}
